mod common;

use common::*;
use geoprobe::*;
use proptest::prelude::*;

fn live_points(d: &LabeledDataset, c: &Cluster) -> Vec<Vec<f64>> {
    c.members.iter().map(|&i| d.point(i).to_vec()).collect()
}

fn check_invariants(d: &LabeledDataset, cs: &ClusterSet) {
    let mut seen = vec![false; d.len()];
    for c in cs.iter() {
        for &m in &c.members {
            assert!(!seen[m], "point {m} in two clusters");
            seen[m] = true;
            assert_eq!(d.label(m), c.label, "cluster {} is not label-pure", c.id);
        }
    }
    assert!(seen.iter().all(|&s| s), "not a partition");
    assert!(d.n_labels() <= cs.len() && cs.len() <= d.len());
    let live: Vec<&Cluster> = cs.iter().collect();
    for (i, a) in live.iter().enumerate() {
        for b in &live[i + 1..] {
            if a.label != b.label {
                assert!(
                    lp_separable(&live_points(d, a), &live_points(d, b)),
                    "clusters {} and {} overlap",
                    a.id,
                    b.id
                );
            }
        }
    }
}

#[test]
fn random_datasets_satisfy_invariants() {
    for seed in 100..115 {
        let d = random_dataset(seed);
        let cs = direct_probe(&d, &ProbeConfig::default()).unwrap();
        check_invariants(&d, &cs);
    }
}

#[test]
fn all_strategies_agree_with_reference() {
    for seed in 200..212 {
        let d = random_dataset(seed);
        let want = if d.len() <= 90 {
            Some(reference_partition(&d))
        } else {
            None
        };
        let mut parts = Vec::new();
        for variant in [Variant::Basic, Variant::Fast] {
            for caching in [false, true] {
                let cfg = ProbeConfig {
                    variant,
                    caching,
                    ..Default::default()
                };
                parts.push(probe(&d, &cfg).unwrap().partition());
            }
        }
        assert!(
            parts.iter().all(|p| p == &parts[0]),
            "seed {seed}: strategies disagree"
        );
        if let Some(w) = want {
            assert_eq!(parts[0], w, "seed {seed}: differs from reference");
        }
    }
}

#[test]
fn concentric_trace_is_pinned() {
    let d = concentric();
    let cs = direct_probe(&d, &ProbeConfig::default()).unwrap();
    // derived from the LP-oracle reference clusterer
    let want = vec![
        vec![0, 1, 2],
        vec![3, 4],
        vec![5, 6, 7, 8],
        vec![9, 10, 11, 12],
    ];
    assert_eq!(cs.partition(), want);
    assert_eq!(reference_partition(&d), want);
    let ring = d.label_id("circle").unwrap();
    assert_eq!(cs.iter().filter(|c| c.label == ring).count(), 3);
    let fast = direct_probe_fast(&d, &ProbeConfig::default()).unwrap();
    assert_eq!(fast.partition(), want);
}

#[test]
fn indicator_on_blobs_and_xor() {
    for seed in 0..5 {
        let d = blobs(seed);
        let cs = direct_probe(&d, &ProbeConfig::default()).unwrap();
        assert_eq!(cs.len(), 2);
        assert!(linearity_report(&cs).linearly_separable);
    }
    let cs = direct_probe(&xor(), &ProbeConfig::default()).unwrap();
    assert_eq!(cs.len(), 3);
    assert!(!linearity_report(&cs).linearly_separable);
}

#[test]
fn runs_are_deterministic_and_replayable() {
    for seed in [3, 17, 42] {
        let d = random_dataset(seed);
        let a = direct_probe(&d, &ProbeConfig::default()).unwrap();
        let b = direct_probe(&d, &ProbeConfig::default()).unwrap();
        assert_eq!(a, b);
        let replayed = ClusterSet::replay(&d, ProbeConfig::default(), &a.merge_log).unwrap();
        assert_eq!(replayed.partition(), a.partition());
        assert_eq!(cluster_set_to_json(&a), cluster_set_to_json(&replayed));
    }
}

#[test]
fn noise_filter_on_real_run() {
    let d = random_dataset(5);
    let cs = direct_probe(&d, &ProbeConfig::default()).unwrap();
    let (kept, removed) = filter_noise(&cs, 2);
    assert_eq!(kept.len() + removed.len(), cs.len());
    for l in 0..d.n_labels() {
        assert!(kept.iter().any(|c| c.label == l), "label {l} vanished");
    }
    for c in kept.iter() {
        assert!(c.members.len() > 2 || kept.flagged.contains(&c.id));
    }
    assert!(removed.iter().all(|c| c.members.len() <= 2));
}

#[test]
fn duplicate_points_with_different_labels_stay_apart() {
    let rows = vec![
        vec![0.0, 0.0],
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
    ];
    let labels: Vec<String> = ["A", "B", "A", "B"].iter().map(|s| s.to_string()).collect();
    let d = dataset(&rows, &labels);
    let cs = direct_probe(&d, &ProbeConfig::default()).unwrap();
    let p = cs.partition();
    assert!(p.contains(&vec![0]) && p.contains(&vec![1]));
}

fn small_dataset() -> impl Strategy<Value = LabeledDataset> {
    (2usize..4, 4usize..25).prop_flat_map(|(dim, n)| {
        (
            proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, dim), n),
            proptest::collection::vec(0usize..3, n),
        )
            .prop_map(|(rows, labels)| {
                let names: Vec<String> = labels.iter().map(|l| format!("c{l}")).collect();
                dataset(&rows, &names)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn invariants_hold(d in small_dataset()) {
        let cs = direct_probe(&d, &ProbeConfig::default()).unwrap();
        check_invariants(&d, &cs);
        let fast = direct_probe_fast(&d, &ProbeConfig::default()).unwrap();
        prop_assert_eq!(fast.partition(), cs.partition());
        prop_assert_eq!(reference_partition(&d), cs.partition());
    }

    #[test]
    fn merge_log_ids_are_fresh(d in small_dataset()) {
        let cs = direct_probe(&d, &ProbeConfig::default()).unwrap();
        for (k, s) in cs.merge_log.iter().enumerate() {
            prop_assert_eq!(s.step, k + 1);
            prop_assert_eq!(s.merged, d.len() + k);
            prop_assert!(s.left < s.right && s.right < s.merged);
        }
        prop_assert_eq!(cs.len(), d.len() - cs.merge_log.len());
    }
}

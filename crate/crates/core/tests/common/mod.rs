//! Independent oracles and synthetic data shared by the integration tests.
//!
//! Nothing here calls into the crate's geometry kernel: distances come from a
//! projected-gradient QP over simplex weights and separability from an LP
//! feasibility check of `w·a + b ≥ 1`, `w·x + b ≤ -1`.
#![allow(dead_code)]

use geoprobe::LabeledDataset;
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use rand::SeedableRng;
pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    TestRng::seed_from_u64(seed)
}

pub fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

/// min ‖Σ αᵢ aᵢ − Σ βⱼ bⱼ‖ over simplex weights, by accelerated projected
/// gradient with function-value restarts, run until the gradient-mapping
/// step drops below 1e-10 (relative to the data scale).
pub fn qp_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let dim = a[0].len();
    let (n, m) = (a.len(), b.len());
    // centre the data: the objective is translation invariant, the Lipschitz
    // constant is not
    let mut mean = vec![0.0; dim];
    for p in a.iter().chain(b) {
        for k in 0..dim {
            mean[k] += p[k] / (n + m) as f64;
        }
    }
    let rows: Vec<Vec<f64>> = a
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(x, c)| x - c).collect())
        .chain(
            b.iter()
                .map(|p| p.iter().zip(&mean).map(|(x, c)| -(x - c)).collect()),
        )
        .collect();
    let scale: f64 = rows
        .iter()
        .map(|r| r.iter().map(|x| x * x).sum::<f64>())
        .fold(0.0, f64::max)
        .sqrt()
        .max(1e-300);

    let residual = |z: &[f64]| -> Vec<f64> {
        let mut r = vec![0.0; dim];
        for (w, row) in z.iter().zip(&rows) {
            for k in 0..dim {
                r[k] += w * row[k];
            }
        }
        r
    };
    let objective = |z: &[f64]| residual(z).iter().map(|x| x * x).sum::<f64>();
    let gradient = |z: &[f64]| -> Vec<f64> {
        let r = residual(z);
        rows.iter()
            .map(|row| 2.0 * row.iter().zip(&r).map(|(x, y)| x * y).sum::<f64>())
            .collect()
    };

    // Lipschitz constant 2·λmax(R Rᵀ) by power iteration
    let mut v = vec![1.0; n + m];
    let mut lmax = 0.0;
    for _ in 0..500 {
        let r = residual(&v);
        let w: Vec<f64> = rows
            .iter()
            .map(|row| row.iter().zip(&r).map(|(x, y)| x * y).sum::<f64>())
            .collect();
        let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nw == 0.0 {
            break;
        }
        lmax = nw / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / nw).collect();
    }
    let lip = (2.0 * lmax * 1.01).max(1e-12);

    let split = |z: &mut Vec<f64>| {
        let (za, zb) = z.split_at_mut(n);
        project_simplex(za);
        project_simplex(zb);
    };
    let mut z = vec![0.0; n + m];
    z[..n].iter_mut().for_each(|x| *x = 1.0 / n as f64);
    z[n..].iter_mut().for_each(|x| *x = 1.0 / m as f64);
    let mut y = z.clone();
    let mut t = 1.0f64;
    let mut f_prev = objective(&z);

    for it in 0..2_000_000 {
        let g = gradient(&y);
        let mut next: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - gi / lip).collect();
        split(&mut next);
        let f_next = objective(&next);
        if f_next > f_prev && t > 1.0 {
            // restart momentum
            y = z.clone();
            t = 1.0;
            continue;
        }
        let step: f64 = next
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = next
            .iter()
            .zip(&z)
            .map(|(xn, xo)| xn + (t - 1.0) / t_next * (xn - xo))
            .collect();
        z = next;
        t = t_next;
        f_prev = f_next;
        if step * lip < 1e-10 * scale * scale {
            break;
        }
        if it % 16 == 0 {
            // Frank-Wolfe duality gap bounds f(z) - f*
            let g = gradient(&z);
            let lin: f64 = g.iter().zip(&z).map(|(a, b)| a * b).sum();
            let best_a = g[..n].iter().copied().fold(f64::INFINITY, f64::min);
            let best_b = g[n..].iter().copied().fold(f64::INFINITY, f64::min);
            if lin - best_a - best_b <= 1e-14 * scale * scale {
                break;
            }
        }
    }
    objective(&z).sqrt()
}

/// Point-to-hull distance through the same QP.
pub fn qp_point_distance(x: &[f64], a: &[Vec<f64>]) -> f64 {
    qp_distance(&[x.to_vec()], a)
}

/// Feasibility of `w·a + b ≥ 1 ∀a∈A`, `w·x + b ≤ −1 ∀x∈B`.
pub fn lp_separable(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    let dim = a[0].len();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let free = (f64::NEG_INFINITY, f64::INFINITY);
    let w: Vec<_> = (0..dim).map(|_| lp.add_var(0.0, free)).collect();
    let off = lp.add_var(0.0, free);
    for p in a {
        let expr: Vec<_> = w
            .iter()
            .copied()
            .zip(p.iter().copied())
            .chain([(off, 1.0)])
            .collect();
        lp.add_constraint(expr.as_slice(), ComparisonOp::Ge, 1.0);
    }
    for p in b {
        let expr: Vec<_> = w
            .iter()
            .copied()
            .zip(p.iter().copied())
            .chain([(off, 1.0)])
            .collect();
        lp.add_constraint(expr.as_slice(), ComparisonOp::Le, -1.0);
    }
    match lp.solve() {
        Ok(_) => true,
        Err(minilp::Error::Infeasible) => false,
        Err(e) => panic!("LP oracle failed: {e:?}"),
    }
}

pub fn gaussian_cloud(rng: &mut TestRng, n: usize, center: &[f64], spread: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            center
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(rng);
                    c + spread * z
                })
                .collect()
        })
        .collect()
}

/// A random pair of point clouds whose offset ranges from heavy overlap to
/// clear separation.
pub fn random_pair(rng: &mut TestRng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let dim = rng.gen_range(2..=10);
    let n = rng.gen_range(1..=20);
    let m = rng.gen_range(1..=20);
    let shift = rng.gen_range(0.0..6.0);
    let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    let center: Vec<f64> = dir.iter().map(|x| shift * x / norm).collect();
    let a = gaussian_cloud(rng, n, &vec![0.0; dim], 1.0);
    let b = gaussian_cloud(rng, m, &center, 1.0);
    (a, b)
}

// ---------------------------------------------------------------- datasets

pub fn dataset(rows: &[Vec<f64>], labels: &[String]) -> LabeledDataset {
    LabeledDataset::from_rows(rows, labels).unwrap()
}

/// Two tight 2-D blobs far apart, 10 points each.
pub fn blobs(seed: u64) -> LabeledDataset {
    let mut r = rng(seed);
    let mut rows = gaussian_cloud(&mut r, 10, &[0.0, 0.0], 0.3);
    rows.extend(gaussian_cloud(&mut r, 10, &[20.0, 5.0], 0.3));
    let labels: Vec<String> = (0..20)
        .map(|i| if i < 10 { "A" } else { "B" }.to_string())
        .collect();
    dataset(&rows, &labels)
}

/// Well-separated blobs plus a held-out sample from the same blobs.
pub fn blobs_with_holdout(
    seed: u64,
    per_label: usize,
    n_labels: usize,
    dim: usize,
) -> (LabeledDataset, LabeledDataset) {
    let mut r = rng(seed);
    let centers: Vec<Vec<f64>> = (0..n_labels)
        .map(|l| {
            (0..dim)
                .map(|k| {
                    if k == l % dim {
                        40.0 * (1 + l / dim) as f64
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut build = |count: usize| {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (l, c) in centers.iter().enumerate() {
            rows.extend(gaussian_cloud(&mut r, count, c, 1.0));
            labels.extend(std::iter::repeat_n(format!("L{l}"), count));
        }
        dataset(&rows, &labels)
    };
    let train = build(per_label);
    let test = build(per_label / 2 + 1);
    (train, test)
}

pub fn xor() -> LabeledDataset {
    let rows = vec![
        vec![0.0, 0.0],
        vec![1.0, 1.0],
        vec![0.0, 1.0],
        vec![1.0, 0.0],
    ];
    let labels: Vec<String> = ["A", "A", "B", "B"].iter().map(|s| s.to_string()).collect();
    dataset(&rows, &labels)
}

/// Three "square" points near the origin ringed by ten "circle" points on
/// the unit circle.
pub fn concentric() -> LabeledDataset {
    let mut rows = vec![vec![0.1, 0.0], vec![-0.05, 0.08], vec![-0.05, -0.08]];
    let mut labels = vec!["square".to_string(); 3];
    for k in 0..10 {
        let t = 2.0 * std::f64::consts::PI * k as f64 / 10.0 + 0.1;
        rows.push(vec![t.cos(), t.sin()]);
        labels.push("circle".to_string());
    }
    dataset(&rows, &labels)
}

/// Labels drawn from per-label Gaussian mixtures that partially overlap.
pub fn random_dataset(seed: u64) -> LabeledDataset {
    let mut r = rng(seed);
    let n = r.gen_range(20..=200);
    let n_labels = r.gen_range(2..=5);
    let dim = if r.gen_bool(0.5) {
        r.gen_range(2..=4)
    } else {
        r.gen_range(2..=20)
    };
    let spread = r.gen_range(0.5..1.5);
    let reach = r.gen_range(1.0..4.0);
    let centers: Vec<Vec<Vec<f64>>> = (0..n_labels)
        .map(|_| {
            let k = r.gen_range(1..=3);
            (0..k)
                .map(|_| (0..dim).map(|_| r.gen_range(-reach..reach)).collect())
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        // every label gets at least one point
        let l = if i < n_labels {
            i
        } else {
            r.gen_range(0..n_labels)
        };
        let cs = &centers[l];
        let c = &cs[r.gen_range(0..cs.len())];
        rows.extend(gaussian_cloud(&mut r, 1, c, spread));
        labels.push(format!("L{l}"));
    }
    dataset(&rows, &labels)
}

/// Plain transcription of the bottom-up merge loop: exhaustive search for the
/// closest same-label unflagged pair, LP oracle for every overlap test.
/// Returns the member partition, each part sorted, parts sorted.
pub fn reference_partition(d: &LabeledDataset) -> Vec<Vec<usize>> {
    struct C {
        id: usize,
        label: usize,
        members: Vec<usize>,
        centroid: Vec<f64>,
    }
    let centroid = |members: &[usize]| -> Vec<f64> {
        let mut c = vec![0.0; d.dim()];
        for &i in members {
            for (k, v) in d.point(i).iter().enumerate() {
                c[k] += v;
            }
        }
        c.iter_mut().for_each(|v| *v /= members.len() as f64);
        c
    };
    let pts = |members: &[usize]| -> Vec<Vec<f64>> {
        members.iter().map(|&i| d.point(i).to_vec()).collect()
    };
    let mut live: Vec<C> = (0..d.len())
        .map(|i| C {
            id: i,
            label: d.label(i),
            members: vec![i],
            centroid: d.point(i).to_vec(),
        })
        .collect();
    let mut next = d.len();
    let mut flagged = std::collections::HashSet::new();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for x in &live {
            for y in &live {
                if x.id >= y.id || x.label != y.label || flagged.contains(&(x.id, y.id)) {
                    continue;
                }
                let dist: f64 = x
                    .centroid
                    .iter()
                    .zip(&y.centroid)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let better = match best {
                    None => true,
                    Some((bd, bi, bj)) => dist < bd || (dist == bd && (x.id, y.id) < (bi, bj)),
                };
                if better {
                    best = Some((dist, x.id, y.id));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let xi = live.iter().position(|c| c.id == i).unwrap();
        let xj = live.iter().position(|c| c.id == j).unwrap();
        let mut merged: Vec<usize> = live[xi]
            .members
            .iter()
            .chain(&live[xj].members)
            .copied()
            .collect();
        merged.sort_unstable();
        let label = live[xi].label;
        let union = pts(&merged);
        let overlap = live
            .iter()
            .filter(|c| c.label != label)
            .any(|c| !lp_separable(&union, &pts(&c.members)));
        if overlap {
            flagged.insert((i, j));
        } else {
            live.retain(|c| c.id != i && c.id != j);
            let centroid = centroid(&merged);
            live.push(C {
                id: next,
                label,
                members: merged,
                centroid,
            });
            next += 1;
        }
    }
    let mut parts: Vec<Vec<usize>> = live.into_iter().map(|c| c.members).collect();
    parts.sort();
    parts
}

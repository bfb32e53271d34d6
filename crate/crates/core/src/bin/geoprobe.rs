use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use geoprobe::analysis::{self, rank_difficult, Predictor};
use geoprobe::json::{self, fmt_float};
use geoprobe::{
    cluster_set_from_json, cluster_set_to_json, AnalysisError, ClusterError, ClusterSet,
    DatasetError, LabeledDataset, LoadError, ProbeConfig, Variant,
};

#[derive(Parser)]
#[command(
    name = "geoprobe",
    version,
    about = "Probe labeled embedding spaces with convex-hull clustering"
)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, env = "GEOPROBE_THREADS")]
    threads: Option<usize>,
    /// Suppress the summary line on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a training set and write the cluster document.
    Probe(ProbeArgs),
    /// Linearity and inter-cluster distance reports.
    Analyze(AnalyzeArgs),
    /// Nearest-cluster predictions for a test set, as JSON lines.
    Predict(PredictArgs),
    /// Check a training file and report label counts and duplicates.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Basic,
    Fast,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long, value_enum, default_value = "basic")]
    variant: VariantArg,
    /// Disable the pair-verdict cache.
    #[arg(long)]
    no_cache: bool,
    /// Drop clusters with at most K points (0 keeps all).
    #[arg(long, value_name = "K", default_value_t = 0)]
    noise_min_size: usize,
    /// Scale every row to unit length first.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    clusters: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the pair distances as TSV.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    clusters: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Attach per-label softmax scores to each outcome.
    #[arg(long)]
    scores: bool,
    /// Append the N hardest mispredicted points.
    #[arg(long, value_name = "N")]
    difficult: Option<usize>,
    /// Neighbours for the kNN baseline.
    #[arg(long, value_name = "K", default_value_t = 1)]
    knn: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    train: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl ToString) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }

    fn consistency(message: impl ToString) -> Self {
        Self {
            code: 3,
            message: message.to_string(),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        Failure::input(e)
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Parse(_) => Failure::input(e),
            LoadError::Inconsistent(_) => Failure::consistency(e),
        }
    }
}

impl From<ClusterError> for Failure {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::Inconsistent(_) => Failure::consistency(e),
            _ => Failure {
                code: 4,
                message: e.to_string(),
            },
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Kernel(_) => Failure {
                code: 4,
                message: e.to_string(),
            },
            AnalysisError::InvalidK { .. } => Failure::input(e),
            _ => Failure::consistency(e),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Probe(a) => run_probe(a, cli.quiet),
        Command::Analyze(a) => run_analyze(a),
        Command::Predict(a) => run_predict(a, cli.quiet),
        Command::Validate(a) => run_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(path: &Path) -> Result<LabeledDataset> {
    LabeledDataset::load_path(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::input(format!("{}: {e}", p.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(Failure::input),
    }
}

/// Loads the training set and the cluster document computed from it.
fn load_clustered(clusters: &Path, train: &Path) -> Result<(LabeledDataset, ClusterSet)> {
    let mut data = load(train)?;
    let text = fs::read_to_string(clusters)
        .map_err(|e| Failure::input(format!("{}: {e}", clusters.display())))?;
    // peek at the config first: normalization changes the geometry
    let normalize = serde_json::from_str::<Value>(&text)
        .ok()
        .and_then(|v| v["config"]["normalize"].as_bool())
        .unwrap_or(false);
    if normalize {
        data = data.l2_normalized();
    }
    let cs = cluster_set_from_json(&text, &data)?;
    Ok((data, cs))
}

fn run_probe(a: &ProbeArgs, quiet: bool) -> Result<()> {
    let mut data = load(&a.train)?;
    if a.normalize {
        data = data.l2_normalized();
    }
    let cfg = ProbeConfig {
        noise_min_size: a.noise_min_size,
        caching: !a.no_cache,
        variant: match a.variant {
            VariantArg::Basic => Variant::Basic,
            VariantArg::Fast => Variant::Fast,
        },
        normalize: a.normalize,
        ..ProbeConfig::default()
    };
    let start = Instant::now();
    let cs = geoprobe::probe(&data, &cfg)?;
    let elapsed = start.elapsed();
    emit(a.out.as_deref(), &cluster_set_to_json(&cs))?;
    if !quiet {
        eprintln!(
            "points={} labels={} clusters={} removed={} kernel_calls={} cache_hits={} rollbacks={} runtime_ms={:.1}",
            data.len(),
            data.n_labels(),
            cs.len(),
            cs.removed.len(),
            cs.stats.kernel_calls,
            cs.stats.cache_hits,
            cs.stats.rollbacks,
            elapsed.as_secs_f64() * 1e3
        );
    }
    Ok(())
}

fn run_analyze(a: &AnalyzeArgs) -> Result<()> {
    let (data, cs) = load_clustered(&a.clusters, &a.train)?;
    let linearity = analysis::linearity_report(&cs);
    let distances = analysis::distance_report(&cs, &data)?;
    let doc = json!({
        "label_names": cs.label_names,
        "linearity": json::to_value(&linearity),
        "distances": json::to_value(&distances),
    });
    emit(a.out.as_deref(), &json::to_pretty(&doc))?;
    if let Some(path) = &a.tsv {
        let mut tsv = String::from("cluster_a\tcluster_b\tlabel_a\tlabel_b\tdistance\tbin\n");
        for p in &distances.pairs {
            tsv.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                p.cluster_a,
                p.cluster_b,
                cs.label_names[p.label_a],
                cs.label_names[p.label_b],
                fmt_float(p.distance),
                p.bin.name()
            ));
        }
        emit(Some(path), &tsv)?;
    }
    Ok(())
}

fn tagged(kind: &str, value: Value) -> String {
    let mut v = value;
    v["kind"] = kind.into();
    json::to_line(&v)
}

fn run_predict(a: &PredictArgs, quiet: bool) -> Result<()> {
    let (train, cs) = load_clustered(&a.clusters, &a.train)?;
    let mut test = load(&a.test)?;
    if cs.config.normalize {
        test = test.l2_normalized();
    }
    let outcomes = Predictor::new(&cs, &train).predict_all(&train, &test, a.scores)?;
    let intra = analysis::accuracy(&outcomes);
    let knn = analysis::knn_accuracy(&train, &test, a.knn)?;

    let mut lines = Vec::with_capacity(outcomes.len() + 2);
    for o in &outcomes {
        let mut v = json::to_value(o);
        v["predicted_name"] = cs.label_names[o.predicted_label].clone().into();
        if let Some(g) = o.gold_label {
            v["gold_name"] = cs.label_names[g].clone().into();
        }
        lines.push(tagged("outcome", v));
    }
    lines.push(tagged(
        "summary",
        json!({
            "n_points": outcomes.len(),
            "n_clusters": cs.len(),
            "intra_accuracy": intra,
            "knn_accuracy": knn,
            "knn_k": a.knn,
        }),
    ));
    if let Some(n) = a.difficult {
        for (rank, d) in rank_difficult(&cs, &outcomes, n).iter().enumerate() {
            let mut v = json::to_value(d);
            v["rank"] = (rank + 1).into();
            v["gold_name"] = cs.label_names[d.gold].clone().into();
            v["predicted_name"] = cs.label_names[d.predicted].clone().into();
            lines.push(tagged("difficult", v));
        }
    }
    let mut text = lines.join("\n");
    text.push('\n');
    emit(a.out.as_deref(), &text)?;
    if !quiet {
        eprintln!(
            "points={} intra_accuracy={} knn_accuracy={}",
            outcomes.len(),
            fmt_float(intra),
            fmt_float(knn)
        );
    }
    Ok(())
}

fn run_validate(a: &ValidateArgs) -> Result<()> {
    let data = load(&a.train)?;
    let report = data.validate();
    let doc = json!({
        "n_points": report.n_points,
        "dim": report.dim,
        "label_counts": report.label_counts,
        "duplicate_conflicts": report.duplicate_conflicts,
        "duplicate_same_label": report.duplicate_same_label,
    });
    emit(None, &json::to_pretty(&doc))
}

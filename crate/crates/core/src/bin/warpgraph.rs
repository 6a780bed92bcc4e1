use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use warpgraph::dataset::{load_ucr, transductive_split, Dataset, Delimiter};
use warpgraph::distance::{load_matrix, pairwise, save_matrix, DistanceKind, WarpBand};
use warpgraph::eval::{accuracy, bench_graph_construction, read_pairs_csv, wilcoxon, BenchReport, Side};
use warpgraph::graph::{build_graph, GraphConfig};
use warpgraph::nn::{Model, TrainConfig};
use warpgraph::pipeline::{self, default_one_nn_band, DistanceSource, Experiment, Method, RunManifest};
use warpgraph::Error;

/// Semi-supervised time-series classification over LB_Keogh batch graphs.
#[derive(Parser, Debug)]
#[command(name = "warpgraph", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute a whole-dataset distance matrix.
    Dist(DistArgs),
    /// Build one batch graph from a matrix and print/write it as JSON.
    GraphDump(GraphDumpArgs),
    /// Train a graph model, score it on the held-out split, write a manifest.
    Train(TrainArgs),
    /// Re-run inference with a saved checkpoint.
    Predict(PredictArgs),
    /// Run the 1NN-DTW baseline on the same split protocol.
    Baseline(BaselineArgs),
    /// Time pairwise DTW against pairwise LB_Keogh on random walks.
    Bench(BenchArgs),
    /// Wilcoxon signed-rank test on paired scores.
    Wilcoxon(WilcoxonArgs),
}

/// Warping radius as given on the command line: a fraction of the series
/// length when it contains a '.', a radius in timestamps otherwise, or
/// `none` for unconstrained warping.
#[derive(Debug, Clone, Copy, PartialEq)]
enum BandArg {
    Fraction(f64),
    Radius(usize),
    Unconstrained,
}

impl BandArg {
    fn resolve(self, len: usize) -> WarpBand {
        match self {
            BandArg::Fraction(f) => WarpBand::from_fraction(f, len),
            BandArg::Radius(r) => WarpBand::Radius(r),
            BandArg::Unconstrained => WarpBand::Unconstrained,
        }
    }

    fn fraction(self) -> Option<f64> {
        match self {
            BandArg::Fraction(f) => Some(f),
            _ => None,
        }
    }
}

fn parse_band(s: &str) -> Result<BandArg, String> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("none") {
        return Ok(BandArg::Unconstrained);
    }
    if s.contains('.') {
        let f: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
        if !(f > 0.0 && f <= 1.0) {
            return Err("fractional radius must be in (0, 1]".into());
        }
        return Ok(BandArg::Fraction(f));
    }
    s.parse().map(BandArg::Radius).map_err(|_| format!("expected a fraction, an integer radius or 'none': {s}"))
}

fn at_least(s: &str, min: usize) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= min => Ok(v),
        _ => Err(format!("expected an integer >= {min}: {s}")),
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number: {s}")),
    }
}

fn parse_nonnegative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a non-negative number: {s}")),
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err(format!("expected a value strictly between 0 and 1: {s}")),
    }
}

fn parse_even_batch(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 2 && v % 2 == 0 => Ok(v),
        _ => Err(format!("batch size must be an even integer >= 2: {s}")),
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum DelimArg {
    Auto,
    Tab,
    Comma,
}

impl From<DelimArg> for Delimiter {
    fn from(d: DelimArg) -> Self {
        match d {
            DelimArg::Auto => Delimiter::Auto,
            DelimArg::Tab => Delimiter::Tab,
            DelimArg::Comma => Delimiter::Comma,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum KindArg {
    Dtw,
    Lbkeogh,
}

impl From<KindArg> for DistanceKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Dtw => DistanceKind::Dtw,
            KindArg::Lbkeogh => DistanceKind::LbKeogh,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum GraphMethodArg {
    #[value(name = "lb-simtsc")]
    LbSimtsc,
    #[value(name = "simtsc-dtw")]
    SimtscDtw,
}

impl From<GraphMethodArg> for Method {
    fn from(m: GraphMethodArg) -> Self {
        match m {
            GraphMethodArg::LbSimtsc => Method::LbSimTsc,
            GraphMethodArg::SimtscDtw => Method::SimTscDtw,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum BaselineMethodArg {
    #[value(name = "1nn-dtw")]
    OneNnDtw,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SideArg {
    One,
    Two,
}

/// Default worker count: `WARPGRAPH_WORKERS`, else the available cores.
fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Args, Debug)]
struct DataArgs {
    /// UCR-style file: label first, then the series values.
    #[arg(long = "data", visible_alias = "in")]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    delimiter: DelimArg,
    /// Z-normalize every series after loading.
    #[arg(long)]
    znorm: bool,
}

impl DataArgs {
    fn load(&self) -> Result<(Dataset, String), Error> {
        let mut d = load_ucr(&self.data, self.delimiter.into())?;
        if self.znorm {
            d = d.z_normalized();
        }
        Ok((d, stem(&self.data)))
    }
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Labeled training instances per class.
    #[arg(long, default_value_t = 10, value_parser = |s: &str| at_least(s, 1))]
    beta: usize,
    /// Share of the data used for training (the rest is the test set).
    #[arg(long, default_value_t = 0.8, value_parser = parse_fraction)]
    train_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GraphArgs {
    /// Similarity scale; defaults to 11 for LB-SimTSC and 0.3 for SimTSC-DTW.
    #[arg(long, value_parser = parse_positive)]
    alpha: Option<f64>,
    /// Neighbors kept per node.
    #[arg(long, default_value_t = GraphConfig::DEFAULT_K, value_parser = |s: &str| at_least(s, 1))]
    k: usize,
}

#[derive(Args, Debug)]
struct DistArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "lbkeogh")]
    kind: KindArg,
    /// Warping radius: fraction of L (e.g. 0.05), timestamps (e.g. 3) or `none`.
    #[arg(long, default_value = "0.05", value_parser = parse_band)]
    r: BandArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "WARPGRAPH_WORKERS", default_value_t = default_workers())]
    workers: usize,
}

#[derive(Args, Debug)]
struct GraphDumpArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Comma-separated dataset indices forming the batch; all rows if omitted.
    #[arg(long, value_delimiter = ',')]
    rows: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_positive)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = GraphConfig::DEFAULT_K, value_parser = |s: &str| at_least(s, 1))]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    batch_id: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Precomputed matrix from `dist`; computed on the fly when omitted.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "lb-simtsc")]
    method: GraphMethodArg,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    graph: GraphArgs,
    /// Radius used when no matrix is given.
    #[arg(long, default_value = "0.05", value_parser = parse_band)]
    r: BandArg,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 128, value_parser = parse_even_batch)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4, value_parser = parse_positive)]
    lr: f64,
    #[arg(long, default_value_t = 4e-3, value_parser = parse_nonnegative)]
    wd: f64,
    /// Recompute each batch's distance block instead of slicing a whole-dataset matrix.
    #[arg(long, conflicts_with = "matrix")]
    per_batch: bool,
    /// Run manifest (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Model checkpoint.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, env = "WARPGRAPH_WORKERS", default_value_t = default_workers())]
    workers: usize,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "lb-simtsc")]
    method: GraphMethodArg,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, default_value_t = 128, value_parser = parse_even_batch)]
    batch: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "1nn-dtw")]
    method: BaselineMethodArg,
    #[command(flatten)]
    split: SplitArgs,
    /// Warping window; defaults to min(L, 100).
    #[arg(long, value_parser = parse_band)]
    r: Option<BandArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 100, value_parser = |s: &str| at_least(s, 2))]
    n: usize,
    #[arg(long = "len", default_value_t = 1024, value_parser = |s: &str| at_least(s, 8))]
    len: usize,
    /// LB_Keogh radius as a fraction of the length.
    #[arg(long, default_value = "0.05", value_parser = parse_band)]
    r: BandArg,
    #[arg(long, env = "WARPGRAPH_WORKERS", default_value_t = default_workers())]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append one CSV row (header written when the file is new).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WilcoxonArgs {
    /// Rows of `dataset,score_a,score_b`; an optional header names the methods.
    #[arg(long)]
    csv: PathBuf,
    /// `one` tests whether b beats a; `two` tests for any difference.
    #[arg(long, value_enum, default_value = "one")]
    side: SideArg,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CmdResult = Result<(), Failure>;

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::FormatError(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn graph_config(method: Method, g: &GraphArgs, seed: u64) -> GraphConfig {
    GraphConfig::new(g.alpha.unwrap_or_else(|| method.default_alpha()), g.k, seed)
}

fn check_workers(w: usize) -> CmdResult {
    if w == 0 {
        return Err(Failure::Usage("--workers must be at least 1".into()));
    }
    Ok(())
}

fn cmd_dist(a: DistArgs) -> CmdResult {
    check_workers(a.workers)?;
    let (data, name) = a.data.load()?;
    let band = a.r.resolve(data.series_len());
    let start = Instant::now();
    let m = pairwise(&data, a.kind.into(), band, a.workers)?;
    let seconds = start.elapsed().as_secs_f64();
    save_matrix(&m, &a.out)?;
    let summary = serde_json::json!({
        "dataset": name,
        "kind": m.kind().to_string(),
        "r": band.radius_for(data.series_len()),
        "n": m.n_rows(),
        "workers": a.workers,
        "matrix_seconds": seconds,
    });
    println!("{summary}");
    Ok(())
}

fn cmd_graph_dump(a: GraphDumpArgs) -> CmdResult {
    let m = load_matrix(&a.matrix)?;
    let rows = a.rows.unwrap_or_else(|| (0..m.n_rows()).collect());
    if let Some(&bad) = rows.iter().find(|&&i| i >= m.n_rows()) {
        return Err(Failure::Usage(format!("row {bad} out of range for a {}-row matrix", m.n_rows())));
    }
    let method = match m.kind() {
        DistanceKind::LbKeogh => Method::LbSimTsc,
        DistanceKind::Dtw => Method::SimTscDtw,
    };
    let cfg = GraphConfig::new(a.alpha.unwrap_or_else(|| method.default_alpha()), a.k, a.seed);
    let g = build_graph(&m.submatrix(&rows), rows.len(), &cfg, a.batch_id)?;
    match a.out {
        Some(path) => fs::write(&path, g.to_json()).map_err(|e| Error::io(&path, e))?,
        None => println!("{}", g.to_json()),
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    check_workers(a.workers)?;
    let method: Method = a.method.into();
    let (data, name) = a.data.load()?;
    let split = transductive_split(&data, a.split.train_frac, a.split.beta, a.split.seed)?;
    let exp = Experiment {
        name,
        method,
        graph: graph_config(method, &a.graph, a.split.seed),
        train: TrainConfig {
            batch_size: a.batch,
            epochs: a.epochs,
            lr: a.lr,
            weight_decay: a.wd,
            seed: a.split.seed,
        },
        band: a.r.resolve(data.series_len()),
        workers: a.workers,
    };
    let outcome = if a.per_batch {
        let source = DistanceSource::PerBatch {
            kind: method.matrix_kind().expect("graph method"),
            band: exp.band,
        };
        let trained = pipeline::train(&data, &split, source, method, &exp.graph, &exp.train)?;
        let mut manifest = trained.manifest;
        manifest.dataset = exp.name.clone();
        if exp.train.epochs > 0 {
            let preds = pipeline::predict(&trained.model, &data, &split, source, &exp.graph, exp.train.batch_size)?;
            manifest.accuracy = Some(accuracy(&preds, &test_truth(&data, &split.test_idx)?)?);
            manifest.predictions = preds;
        }
        pipeline::Outcome {
            model: Some(trained.model),
            manifest,
        }
    } else {
        let matrix = a.matrix.as_ref().map(load_matrix).transpose()?;
        pipeline::run(&data, &split, &exp, matrix.as_ref())?
    };
    if let (Some(path), Some(model)) = (&a.ckpt, &outcome.model) {
        model.save(path)?;
    }
    write_json(&a.out, &outcome.manifest)?;
    report(&outcome.manifest);
    Ok(())
}

fn test_truth(data: &Dataset, idx: &[usize]) -> Result<Vec<usize>, Error> {
    idx.iter()
        .map(|&i| data.label(i).ok_or_else(|| Error::InvalidArgument(format!("instance {i} has no label"))))
        .collect()
}

fn cmd_predict(a: PredictArgs) -> CmdResult {
    let method: Method = a.method.into();
    let (data, name) = a.data.load()?;
    let split = transductive_split(&data, a.split.train_frac, a.split.beta, a.split.seed)?;
    let matrix = load_matrix(&a.matrix)?;
    let model = Model::load(&a.ckpt)?;
    let gcfg = graph_config(method, &a.graph, a.split.seed);
    let source = DistanceSource::Precomputed(&matrix);
    let expected = method.matrix_kind().expect("graph method");
    if matrix.kind() != expected {
        return Err(Error::KindMismatch {
            method: method.to_string(),
            expected: expected.to_string(),
            found: matrix.kind().to_string(),
        }
        .into());
    }
    let start = Instant::now();
    let preds = pipeline::predict(&model, &data, &split, source, &gcfg, a.batch)?;
    let mut manifest = RunManifest {
        dataset: name,
        method,
        beta: split.beta,
        seed: a.split.seed,
        alpha: Some(gcfg.alpha),
        k: Some(gcfg.k),
        r: match matrix.band() {
            WarpBand::Radius(r) => Some(r),
            WarpBand::Unconstrained => None,
        },
        epochs: 0,
        matrix_seconds: 0.0,
        train_seconds: start.elapsed().as_secs_f64(),
        accuracy: None,
        batch_size: Some(a.batch),
        lr: None,
        weight_decay: None,
        n_labeled: split.labeled_idx.len(),
        n_unlabeled: split.unlabeled_idx.len(),
        n_test: split.test_idx.len(),
        label_map: data.label_map(),
        inference: pipeline::ANCHORED_INFERENCE.into(),
        loss_history: Vec::new(),
        predictions: Vec::new(),
    };
    manifest.accuracy = Some(accuracy(&preds, &test_truth(&data, &split.test_idx)?)?);
    manifest.predictions = preds;
    write_json(&a.out, &manifest)?;
    report(&manifest);
    Ok(())
}

fn cmd_baseline(a: BaselineArgs) -> CmdResult {
    let BaselineMethodArg::OneNnDtw = a.method;
    let (data, name) = a.data.load()?;
    let split = transductive_split(&data, a.split.train_frac, a.split.beta, a.split.seed)?;
    let len = data.series_len();
    let band = a.r.map_or_else(|| default_one_nn_band(len), |b| b.resolve(len));
    let exp = Experiment {
        name,
        method: Method::OneNnDtw,
        graph: GraphConfig::new(GraphConfig::DTW_ALPHA, GraphConfig::DEFAULT_K, a.split.seed),
        train: TrainConfig {
            seed: a.split.seed,
            epochs: 0,
            ..TrainConfig::default()
        },
        band,
        workers: 1,
    };
    let out = pipeline::run(&data, &split, &exp, None)?;
    write_json(&a.out, &out.manifest)?;
    report(&out.manifest);
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    check_workers(a.workers)?;
    let frac = a
        .r
        .fraction()
        .ok_or_else(|| Failure::Usage("bench --r takes a fraction such as 0.05".into()))?;
    let rep = bench_graph_construction(a.n, a.len, frac, a.workers, a.seed, a.repeats)?;
    if let Some(path) = &a.out {
        write_json(path, &rep)?;
    }
    if let Some(path) = &a.csv {
        let mut text = if path.exists() {
            fs::read_to_string(path).map_err(|e| Error::io(path, e))?
        } else {
            format!("{}\n", BenchReport::CSV_HEADER)
        };
        text.push_str(&rep.csv_row());
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    println!("{}", serde_json::to_string(&rep).map_err(|e| Error::FormatError(e.to_string()))?);
    Ok(())
}

fn cmd_wilcoxon(a: WilcoxonArgs) -> CmdResult {
    let pairs = read_pairs_csv(&a.csv)?;
    let side = match a.side {
        SideArg::One => Side::OneSidedBGreater,
        SideArg::Two => Side::TwoSided,
    };
    let p = wilcoxon(&pairs, side)?;
    println!("p={p:.3}");
    Ok(())
}

fn report(m: &RunManifest) {
    match m.accuracy {
        Some(acc) => println!("{} {} beta={} accuracy={acc:.4}", m.dataset, m.method, m.beta),
        None => println!("{} {} beta={} (no evaluation)", m.dataset, m.method, m.beta),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Dist(a) => cmd_dist(a),
        Command::GraphDump(a) => cmd_graph_dump(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Wilcoxon(a) => cmd_wilcoxon(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

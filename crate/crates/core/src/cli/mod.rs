//! The `intrinsic` command line: argument parsing, dispatch and manifests.

pub mod manifest;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{augment, load_annotations, save_annotations, ClosureOptions, EqualityRule, Provenance};
use crate::crf::{
    build_palette_spaced, chromaticity_unary, mu_matrices, pairwise_messages, run_meanfield, LabelPalette,
    MeanFieldConfig, MeanFieldState,
};
use crate::decompose::{decompose, DecomposeConfig, Variant};
use crate::error::{Error, Result};
use crate::imaging::{load_label_png, save_label_png, GrayImage, LinearImage};
use crate::metrics::{error_rate, mpre, predict_relations, relight, sample_labels, sample_points, whdr, Frame};
use crate::nystrom::{sample_grid, NystromFilter};
use crate::ordering::{
    log_uniform_labels, solve_continuous, solve_discrete, GlobalOrdering, OrderingEdge, OrderingProblem,
};
use crate::scorer::{load_precomputed_for, score_pairs, write_score_table, BaselineWeights, PairScorer, Scorer};
use crate::storage::{read_json, write_json};
use manifest::{manifest_beside, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "intrinsic", version, about = "Reflectance/shading decomposition from pairwise reflectance judgments")]
pub struct Cli {
    /// Decomposition config (flat `key = value` file); flags override it.
    #[arg(long, global = true, value_name = "F")]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
    /// Where to write the run manifest (defaults next to the main output).
    #[arg(long, global = true, value_name = "F")]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, symmetrize and transitively close every annotation file in a directory.
    Augment(AugmentArgs),
    /// Score pixel pairs of an image.
    Score(ScoreArgs),
    /// Globally consistent reflectance values from a score table.
    Order(OrderArgs),
    /// Mean-field label inference with the pairwise prior.
    Infer(InferArgs),
    /// Full reflectance/shading decomposition.
    Decompose(DecomposeArgs),
    /// Multiply a reflectance by a shading.
    Relight(RelightArgs),
    /// Evaluation metrics.
    Eval {
        #[command(subcommand)]
        metric: EvalCommand,
    },
    /// Write a synthetic fixture with ground truth.
    Fixtures(FixturesArgs),
    /// Timing measurements.
    Bench {
        #[command(subcommand)]
        target: BenchCommand,
    },
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub min_confidence: f64,
    #[arg(long, default_value_t = 16)]
    pub max_rounds: usize,
    /// `informative` ignores common neighbours that imply nothing; `strict` requires all to be equal.
    #[arg(long, value_enum, default_value_t = EqualityArg::Informative)]
    pub equality: EqualityArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EqualityArg {
    Informative,
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerKind {
    Oracle,
    Baseline,
    Precomputed,
}

#[derive(Debug, Args)]
pub struct ScorerArgs {
    #[arg(long, value_enum, default_value_t = ScorerKind::Baseline)]
    pub scorer: ScorerKind,
    /// Ground-truth reflectance for the oracle scorer.
    #[arg(long, value_name = "F")]
    pub oracle_gt: Option<PathBuf>,
    /// Score table for the precomputed scorer.
    #[arg(long = "score-table", value_name = "F")]
    pub score_table: Option<PathBuf>,
    /// Image id selecting rows of a multi-image score table.
    #[arg(long, value_name = "ID")]
    pub table_image: Option<String>,
    /// Equality band of the oracle (defaults to the config value).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Off-relation mass of the oracle (defaults to the config value).
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, value_name = "F")]
    pub image: PathBuf,
    /// `i,j` pixel-index lines, or an annotation JSON whose judged points are scored.
    #[arg(long, value_name = "F")]
    pub pairs: PathBuf,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long, value_name = "F")]
    pub out: PathBuf,
    /// Image id written into the table (defaults to the file stem).
    #[arg(long, value_name = "ID")]
    pub image_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverKind {
    Discrete,
    Continuous,
}

#[derive(Debug, Args)]
pub struct OrderArgs {
    #[arg(long, value_name = "F")]
    pub scores: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub labels: usize,
    #[arg(long, value_enum, default_value_t = SolverKind::Discrete)]
    pub solver: SolverKind,
    #[arg(long, value_name = "F")]
    pub out: PathBuf,
    /// Minimum log gap demanded by strict relations (default: log of 1 + the equality band).
    #[arg(long)]
    pub margin: Option<f64>,
    /// Reflectance range of the discrete labels.
    #[arg(long, default_value_t = 0.01)]
    pub min_reflectance: f64,
    #[arg(long, default_value_t = 1.0)]
    pub max_reflectance: f64,
    /// Iterations of the continuous solver.
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, value_name = "ID")]
    pub table_image: Option<String>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, value_name = "F")]
    pub image: PathBuf,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long)]
    pub labels: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    /// Weight of the pairwise prior.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_name = "F")]
    pub out_labels: PathBuf,
    /// Palette JSON (defaults to `<labels stem>.palette.json`).
    #[arg(long, value_name = "F")]
    pub out_palette: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long, value_name = "F")]
    pub image: PathBuf,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long, default_value = "chrom+prior+shading")]
    pub variant: String,
    #[arg(long, value_name = "F")]
    pub out_reflectance: PathBuf,
    #[arg(long, value_name = "F")]
    pub out_shading: PathBuf,
    /// Optional label map and palette of the final round.
    #[arg(long, value_name = "F")]
    pub out_labels: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<usize>,
    #[arg(long)]
    pub outer_iters: Option<usize>,
    #[arg(long)]
    pub meanfield_iters: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub max_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RelightArgs {
    #[arg(long, value_name = "F")]
    pub reflectance: PathBuf,
    #[arg(long, value_name = "F")]
    pub shading: PathBuf,
    #[arg(long, value_name = "F")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Weighted human disagreement rate.
    Whdr(RelationEvalArgs),
    /// Unweighted pairwise-relation error rate.
    ErrorRate(RelationEvalArgs),
    /// Mean pixel reconstruction error of cross-frame relighting.
    Mpre(MpreArgs),
}

#[derive(Debug, Args)]
pub struct RelationEvalArgs {
    /// Label map written by `infer` or `decompose --out-labels`.
    #[arg(long, value_name = "F", required_unless_present = "reflectance", conflicts_with = "reflectance")]
    pub labels: Option<PathBuf>,
    /// Palette JSON for `--labels` (defaults to `<labels stem>.palette.json`).
    #[arg(long, value_name = "F")]
    pub palette: Option<PathBuf>,
    /// Reflectance image (PNG or float sidecar).
    #[arg(long, value_name = "F")]
    pub reflectance: Option<PathBuf>,
    #[arg(long, value_name = "F")]
    pub annotations: PathBuf,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_DELTA)]
    pub delta: f64,
    /// Report JSON (also printed to stdout).
    #[arg(long, value_name = "F")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MpreArgs {
    #[arg(long, value_name = "F")]
    pub sequence_manifest: PathBuf,
    #[arg(long, value_name = "F")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    /// two-region, three-region, sofa-gradient, relight-sequence or ordering-chain.
    pub name: String,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub frames: usize,
    /// Points in the ordering chain.
    #[arg(long, default_value_t = 5)]
    pub chain: usize,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Builds a low-rank filter and times one message-passing pass.
    Filter(BenchFilterArgs),
}

#[derive(Debug, Args)]
pub struct BenchFilterArgs {
    /// Pixel count; the image is the smallest square holding it.
    #[arg(long, default_value_t = 65536)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub k: usize,
    #[arg(long, default_value_t = 20)]
    pub labels: usize,
    /// Report JSON (also printed to stdout).
    #[arg(long, value_name = "F")]
    pub out: Option<PathBuf>,
}

/// Failure of a command: usage problems exit with 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Augment(_) => "augment",
            Command::Score(_) => "score",
            Command::Order(_) => "order",
            Command::Infer(_) => "infer",
            Command::Decompose(_) => "decompose",
            Command::Relight(_) => "relight",
            Command::Eval { metric } => match metric {
                EvalCommand::Whdr(_) => "eval whdr",
                EvalCommand::ErrorRate(_) => "eval error-rate",
                EvalCommand::Mpre(_) => "eval mpre",
            },
            Command::Fixtures(_) => "fixtures",
            Command::Bench { .. } => "bench filter",
        }
    }

    fn default_manifest(&self) -> PathBuf {
        let fallback = || PathBuf::from(format!("intrinsic-{}.manifest.json", self.name().replace(' ', "-")));
        match self {
            Command::Augment(a) => a.output.join("manifest.json"),
            Command::Score(a) => manifest_beside(&a.out),
            Command::Order(a) => manifest_beside(&a.out),
            Command::Infer(a) => manifest_beside(&a.out_labels),
            Command::Decompose(a) => manifest_beside(&a.out_reflectance),
            Command::Relight(a) => manifest_beside(&a.out),
            Command::Eval { metric } => match metric {
                EvalCommand::Whdr(a) | EvalCommand::ErrorRate(a) => a.out.as_deref().map_or_else(fallback, manifest_beside),
                EvalCommand::Mpre(a) => a.out.as_deref().map_or_else(fallback, manifest_beside),
            },
            Command::Fixtures(a) => a.out.join("manifest.json"),
            Command::Bench { target: BenchCommand::Filter(a) } => a.out.as_deref().map_or_else(fallback, manifest_beside),
        }
    }
}

/// Parses `std::env::args`, runs the command and returns the process exit code.
pub fn main() -> std::process::ExitCode {
    let args: Vec<String> = std::env::args().collect();
    std::process::ExitCode::from(run_args(&args) as u8)
}

/// Runs a full argument vector (program name first) and returns the exit code.
pub fn run_args(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    run(&cli, args.iter().skip(1).cloned().collect())
}

fn init_logging(verbose: bool) {
    let level = if verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Executes a parsed command line, always writing a manifest.
pub fn run(cli: &Cli, args: Vec<String>) -> i32 {
    let mut manifest = RunManifest::new(cli.command.name(), args);
    let path = cli.manifest.clone().unwrap_or_else(|| cli.command.default_manifest());
    let started = Instant::now();
    let outcome = match cli.jobs {
        Some(0) => Err(usage("--jobs must be at least 1")),
        Some(j) => match rayon::ThreadPoolBuilder::new().num_threads(j).build() {
            Ok(pool) => pool.install(|| dispatch(cli, &mut manifest)),
            Err(e) => Err(CliError::Run(Error::Validation(format!("thread pool: {e}")))),
        },
        None => dispatch(cli, &mut manifest),
    };
    manifest.timing("total", started.elapsed().as_secs_f64());
    let code = match &outcome {
        Ok(()) => {
            manifest.status = "ok".into();
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            manifest.status = "error".into();
            manifest.error = Some(e.to_string());
            if matches!(e, CliError::Usage(_)) {
                2
            } else {
                1
            }
        }
    };
    if let Err(e) = manifest.write(&path) {
        eprintln!("warning: could not write manifest {}: {e}", path.display());
    }
    code
}

fn load_config(cli: &Cli, manifest: &mut RunManifest) -> CliResult<DecomposeConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            manifest.input(p)?;
            DecomposeConfig::load(p)?
        }
        None => DecomposeConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn finish_config(cfg: &DecomposeConfig, manifest: &mut RunManifest) -> CliResult<()> {
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    manifest.config = serde_json::to_value(cfg).unwrap_or_default();
    Ok(())
}

fn dispatch(cli: &Cli, manifest: &mut RunManifest) -> CliResult<()> {
    match &cli.command {
        Command::Augment(a) => cmd_augment(a, manifest),
        Command::Score(a) => cmd_score(cli, a, manifest),
        Command::Order(a) => cmd_order(a, manifest),
        Command::Infer(a) => cmd_infer(cli, a, manifest),
        Command::Decompose(a) => cmd_decompose(cli, a, manifest),
        Command::Relight(a) => cmd_relight(a, manifest),
        Command::Eval { metric } => match metric {
            EvalCommand::Whdr(a) => cmd_eval_relations(a, true, manifest),
            EvalCommand::ErrorRate(a) => cmd_eval_relations(a, false, manifest),
            EvalCommand::Mpre(a) => cmd_eval_mpre(a, manifest),
        },
        Command::Fixtures(a) => cmd_fixtures(a, manifest),
        Command::Bench {
            target: BenchCommand::Filter(a),
        } => cmd_bench_filter(cli, a, manifest),
    }
}

/// Prints a line to stdout; a closed pipe is not an error.
fn say(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn cmd_augment(a: &AugmentArgs, manifest: &mut RunManifest) -> CliResult<()> {
    if !(0.0..=1.0).contains(&a.min_confidence) {
        return Err(usage(format!("--min-confidence must be in [0, 1], got {}", a.min_confidence)));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&a.input)
        .map_err(|e| Error::io(&a.input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "manifest.json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Validation(format!("no annotation files in {}", a.input.display())).into());
    }
    std::fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
    let opts = ClosureOptions {
        max_rounds: a.max_rounds,
        equality: match a.equality {
            EqualityArg::Informative => EqualityRule::Informative,
            EqualityArg::Strict => EqualityRule::Strict,
        },
    };
    manifest.config = serde_json::json!({
        "min_confidence": a.min_confidence,
        "max_rounds": a.max_rounds,
        "equality": format!("{:?}", a.equality).to_lowercase(),
    });
    for f in &files {
        manifest.input(f)?;
    }
    let started = Instant::now();
    let results: Vec<Result<(PathBuf, serde_json::Value)>> = files
        .par_iter()
        .map(|f| {
            let g = load_annotations(f)?;
            let out = augment(&g, a.min_confidence, &opts);
            let dest = a.output.join(f.file_name().expect("file name"));
            save_annotations(&dest, &out.graph)?;
            let stats = serde_json::json!({
                "image": out.graph.image,
                "original": out.graph.count(Provenance::Original),
                "symmetry": out.graph.count(Provenance::Symmetry),
                "transitive": out.graph.count(Provenance::Transitive),
                "rounds": out.rounds,
                "truncated": out.truncated,
            });
            Ok((dest, stats))
        })
        .collect();
    let mut per_image = Vec::new();
    let mut total = 0u64;
    for r in results {
        let (dest, stats) = r?;
        total += ["original", "symmetry", "transitive"]
            .iter()
            .map(|k| stats[k].as_u64().unwrap_or(0))
            .sum::<u64>();
        manifest.output(&dest);
        per_image.push(stats);
    }
    manifest.timing("augment", started.elapsed().as_secs_f64());
    manifest.metric("images", files.len());
    manifest.metric("total_judgments", total);
    manifest.metric("per_image", per_image);
    say(&format!("augmented {} files, {total} judgments", files.len()));
    Ok(())
}

/// Builds the requested scorer for `image`; oracle ground truth is resized to match.
fn build_scorer(s: &ScorerArgs, cfg: &DecomposeConfig, image: &LinearImage, manifest: &mut RunManifest) -> CliResult<Scorer> {
    let delta = s.delta.unwrap_or(cfg.delta);
    let epsilon = s.epsilon.unwrap_or(cfg.epsilon);
    match s.scorer {
        ScorerKind::Oracle => {
            let gt_path = s.oracle_gt.as_ref().ok_or_else(|| usage("--scorer oracle needs --oracle-gt"))?;
            manifest.input(gt_path)?;
            let mut gt = LinearImage::load(gt_path)?;
            if (gt.width, gt.height) != (image.width, image.height) {
                gt = gt.downsample_to(image.width.max(image.height));
            }
            gt.same_shape(image.width, image.height)?;
            Ok(Scorer::oracle(&gt, delta, epsilon)?)
        }
        ScorerKind::Baseline => Ok(Scorer::baseline(BaselineWeights::default())?),
        ScorerKind::Precomputed => {
            let table = s
                .score_table
                .as_ref()
                .ok_or_else(|| usage("--scorer precomputed needs --score-table"))?;
            manifest.input(table)?;
            Ok(load_precomputed_for(table, s.table_image.as_deref())?)
        }
    }
}

fn load_image(path: &Path, manifest: &mut RunManifest) -> CliResult<LinearImage> {
    manifest.input(path)?;
    Ok(LinearImage::load(path)?)
}

fn parse_pairs(path: &Path, image: &LinearImage) -> Result<Vec<(usize, usize)>> {
    if path.extension().is_some_and(|x| x == "json") {
        let g = load_annotations(path)?;
        let pixel = |id| {
            g.point(id)
                .map(|p| p.pixel(image.width, image.height))
                .ok_or_else(|| Error::Validation(format!("judgment references unknown point {id}")))
        };
        return g.judgments.iter().map(|j| Ok((pixel(j.i)?, pixel(j.j)?))).collect();
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
            continue;
        }
        let parse_err = |column: usize, message: String| Error::Parse {
            context: path.display().to_string(),
            line: n + 1,
            column,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(parse_err(1, format!("expected `i,j`, got {} fields", fields.len())));
        }
        let i: usize = fields[0].parse().map_err(|e| parse_err(1, format!("{e}")))?;
        let j: usize = fields[1].parse().map_err(|e| parse_err(fields[0].len() + 2, format!("{e}")))?;
        if i >= image.len() || j >= image.len() {
            return Err(parse_err(1, format!("pair ({i}, {j}) outside {} pixels", image.len())));
        }
        pairs.push((i, j));
    }
    Ok(pairs)
}

fn cmd_score(cli: &Cli, a: &ScoreArgs, manifest: &mut RunManifest) -> CliResult<()> {
    let cfg = load_config(cli, manifest)?;
    let image = load_image(&a.image, manifest)?;
    manifest.input(&a.pairs)?;
    let pairs = parse_pairs(&a.pairs, &image)?;
    let scorer = build_scorer(&a.scorer, &cfg, &image, manifest)?;
    finish_config(&cfg, manifest)?;
    let started = Instant::now();
    let scores = score_pairs(&scorer, &image, &pairs)?;
    manifest.timing("score", started.elapsed().as_secs_f64());
    let id = a.image_id.clone().unwrap_or_else(|| file_stem(&a.image));
    ensure_parent(&a.out)?;
    write_score_table(&a.out, &id, &scores)?;
    manifest.output(&a.out);
    manifest.metric("pairs", scores.len());
    Ok(())
}

fn file_stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string()
}

#[derive(Debug, Serialize, Deserialize)]
struct OrderedNode {
    id: usize,
    log_reflectance: f64,
    reflectance: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct OrderingReport {
    solver: String,
    margin: f64,
    energy: f64,
    converged: bool,
    iterations: usize,
    nodes: Vec<OrderedNode>,
}

fn cmd_order(a: &OrderArgs, manifest: &mut RunManifest) -> CliResult<()> {
    manifest.input(&a.scores)?;
    let table = match load_precomputed_for(&a.scores, a.table_image.as_deref())? {
        Scorer::Precomputed(t) => t,
        _ => unreachable!("score tables load as precomputed scorers"),
    };
    if table.rows.is_empty() {
        return Err(Error::Validation(format!("{} has no score rows", a.scores.display())).into());
    }
    let ids: BTreeSet<usize> = table.rows.keys().flat_map(|&(i, j)| [i, j]).collect();
    let node: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let mut keys: Vec<&(usize, usize)> = table.rows.keys().collect();
    keys.sort();
    let edges: Vec<OrderingEdge> = keys
        .into_iter()
        .map(|k| OrderingEdge {
            i: node[&k.0],
            j: node[&k.1],
            w: table.rows[k].normalized(),
        })
        .collect();
    let margin = a.margin.unwrap_or((1.0 + crate::metrics::DEFAULT_DELTA).ln());
    let labels = match a.solver {
        SolverKind::Discrete => Some(
            log_uniform_labels(a.min_reflectance, a.max_reflectance, a.labels).map_err(|e| usage(e.to_string()))?,
        ),
        SolverKind::Continuous => None,
    };
    let problem = OrderingProblem::new(ids.len(), edges, labels)?
        .with_margin(margin)
        .map_err(|e| usage(e.to_string()))?;
    manifest.config = serde_json::json!({
        "solver": format!("{:?}", a.solver).to_lowercase(),
        "labels": a.labels,
        "margin": margin,
        "min_reflectance": a.min_reflectance,
        "max_reflectance": a.max_reflectance,
        "iters": a.iters,
    });
    let started = Instant::now();
    let result: GlobalOrdering = match a.solver {
        SolverKind::Discrete => solve_discrete(&problem)?,
        SolverKind::Continuous => solve_continuous(&problem, a.iters)?,
    };
    manifest.timing("solve", started.elapsed().as_secs_f64());
    let report = OrderingReport {
        solver: format!("{:?}", a.solver).to_lowercase(),
        margin,
        energy: result.energy,
        converged: result.converged,
        iterations: result.iterations,
        nodes: ids
            .iter()
            .zip(&result.values)
            .map(|(&id, &v)| OrderedNode {
                id,
                log_reflectance: v,
                reflectance: v.exp(),
            })
            .collect(),
    };
    ensure_parent(&a.out)?;
    write_json(&a.out, &report)?;
    manifest.output(&a.out);
    manifest.metric("energy", result.energy);
    manifest.metric("nodes", ids.len());
    manifest.metric("converged", result.converged);
    Ok(())
}

fn palette_path(labels: &Path, explicit: Option<&PathBuf>) -> PathBuf {
    explicit.cloned().unwrap_or_else(|| {
        let stem = labels.file_stem().and_then(|s| s.to_str()).unwrap_or("labels");
        labels.with_file_name(format!("{stem}.palette.json"))
    })
}

fn cmd_infer(cli: &Cli, a: &InferArgs, manifest: &mut RunManifest) -> CliResult<()> {
    let mut cfg = load_config(cli, manifest)?;
    if let Some(l) = a.labels {
        cfg.labels = l;
    }
    if let Some(i) = a.iters {
        cfg.meanfield_iters = i;
    }
    if let Some(d) = a.damping {
        cfg.damping = d;
    }
    if let Some(l) = a.lambda {
        cfg.lambda_pairwise = l;
    }
    let image = load_image(&a.image, manifest)?.downsample_to(cfg.max_dim);
    let scorer = build_scorer(&a.scorer, &cfg, &image, manifest)?;
    finish_config(&cfg, manifest)?;
    let started = Instant::now();
    let samples = sample_grid(image.width, image.height, cfg.nystrom_samples)?;
    let filter = NystromFilter::build(&scorer, &image, &samples, cfg.svd_tol)?;
    manifest.timing("filter_build", started.elapsed().as_secs_f64());
    let started = Instant::now();
    let palette = build_palette_spaced(&image, cfg.labels, cfg.palette_step)?;
    let unary = chromaticity_unary(&image, &palette, cfg.unary_weights());
    let mf = MeanFieldConfig {
        iters: cfg.meanfield_iters,
        damping: cfg.damping,
        lambda: cfg.lambda_pairwise,
    };
    let run = run_meanfield(&unary, image.len(), &filter, &mu_matrices(&palette), &mf)?;
    manifest.timing("meanfield", started.elapsed().as_secs_f64());
    ensure_parent(&a.out_labels)?;
    save_label_png(&a.out_labels, image.width, image.height, &run.labels)?;
    let pp = palette_path(&a.out_labels, a.out_palette.as_ref());
    write_json(&pp, &palette)?;
    manifest.output(&a.out_labels);
    manifest.output(&pp);
    manifest.metric("energy_trace", &run.energies);
    manifest.metric("palette_size", palette.len());
    Ok(())
}

/// Writes `image` as `<path stem>.png` and `<path stem>.bin`.
fn save_pair(path: &Path, save: impl Fn(&Path) -> Result<()>, manifest: &mut RunManifest) -> Result<()> {
    ensure_parent(path)?;
    for ext in ["png", "bin"] {
        let p = path.with_extension(ext);
        save(&p)?;
        manifest.output(&p);
    }
    Ok(())
}

fn cmd_decompose(cli: &Cli, a: &DecomposeArgs, manifest: &mut RunManifest) -> CliResult<()> {
    let variant: Variant = a.variant.parse().map_err(|e: Error| usage(e.to_string()))?;
    let mut cfg = load_config(cli, manifest)?;
    if let Some(v) = a.labels {
        cfg.labels = v;
    }
    if let Some(v) = a.outer_iters {
        cfg.outer_iters = v;
    }
    if let Some(v) = a.meanfield_iters {
        cfg.meanfield_iters = v;
    }
    if let Some(v) = a.samples {
        cfg.nystrom_samples = v;
    }
    if let Some(v) = a.max_dim {
        cfg.max_dim = v;
    }
    finish_config(&cfg, manifest)?;
    let started = Instant::now();
    let full = load_image(&a.image, manifest)?;
    let image = full.downsample_to(cfg.max_dim);
    let scorer = if variant.uses_prior() {
        Some(build_scorer(&a.scorer, &cfg, &image, manifest)?)
    } else {
        None
    };
    manifest.timing("load", started.elapsed().as_secs_f64());
    let started = Instant::now();
    let result = decompose(&image, scorer.as_ref().map(|s| s as &dyn PairScorer), &cfg, variant)?;
    manifest.timing("decompose", started.elapsed().as_secs_f64());
    let started = Instant::now();
    save_pair(&a.out_reflectance, |p| result.reflectance.save(p), manifest)?;
    save_pair(&a.out_shading, |p| result.shading.save(p), manifest)?;
    if let Some(lp) = &a.out_labels {
        ensure_parent(lp)?;
        save_label_png(lp, image.width, image.height, &result.labels)?;
        let values = LabelPalette {
            values: result.label_values.clone(),
            chroma: result.palette.chroma.clone(),
        };
        let pp = palette_path(lp, None);
        write_json(&pp, &values)?;
        manifest.output(lp);
        manifest.output(&pp);
    }
    let stem = file_stem(&a.out_reflectance);
    let csv = a.out_reflectance.with_file_name(format!("{stem}.energy.csv"));
    let svg = a.out_reflectance.with_file_name(format!("{stem}.energy.svg"));
    report::write_series(&csv, &svg, "energy", &result.energy_trace)?;
    manifest.output(&csv);
    manifest.output(&svg);
    manifest.timing("write", started.elapsed().as_secs_f64());
    let recon = result.reconstruction_error(&image)?;
    let used: BTreeSet<usize> = result.labels.iter().copied().collect();
    manifest.metric("variant", variant.name());
    manifest.metric("width", image.width);
    manifest.metric("height", image.height);
    manifest.metric("energy_trace", &result.energy_trace);
    manifest.metric("reconstruction_error", recon);
    manifest.metric("labels_used", used.len());
    manifest.metric("shading_converged", result.shading_converged);
    info!("reconstruction error {recon:.3e}, {} labels used", used.len());
    Ok(())
}

fn cmd_relight(a: &RelightArgs, manifest: &mut RunManifest) -> CliResult<()> {
    manifest.input(&a.reflectance)?;
    manifest.input(&a.shading)?;
    let r = LinearImage::load(&a.reflectance)?;
    let s = GrayImage::load(&a.shading)?;
    let out = relight(&r, &s)?;
    save_pair(&a.out, |p| out.save(p), manifest)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_judgments: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_pairs: Option<usize>,
    pub config: serde_json::Value,
}

fn emit_report(report: &MetricReport, out: Option<&PathBuf>, manifest: &mut RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    say(&text);
    if let Some(p) = out {
        ensure_parent(p)?;
        write_json(p, report)?;
        manifest.output(p);
    }
    manifest.metric(&report.metric, report.value);
    Ok(())
}

fn cmd_eval_relations(a: &RelationEvalArgs, weighted: bool, manifest: &mut RunManifest) -> CliResult<()> {
    if !(a.delta >= 0.0) {
        return Err(usage(format!("--delta must be >= 0, got {}", a.delta)));
    }
    manifest.input(&a.annotations)?;
    let g = load_annotations(&a.annotations)?;
    let (values, source) = match (&a.labels, &a.reflectance) {
        (Some(lp), _) => {
            manifest.input(lp)?;
            let pp = palette_path(lp, a.palette.as_ref());
            manifest.input(&pp)?;
            let (w, h, labels) = load_label_png(lp)?;
            let palette: LabelPalette = read_json(&pp)?;
            (sample_labels(&g, w, h, &labels, &palette.values)?, "labels")
        }
        (None, Some(rp)) => {
            let r = load_image(rp, manifest)?;
            (sample_points(&g, &r), "reflectance")
        }
        (None, None) => return Err(usage("give --labels or --reflectance")),
    };
    let value = if weighted {
        whdr(&g, &values, a.delta)?
    } else {
        error_rate(&g, &predict_relations(&g, &values, a.delta)?)?
    };
    let config = serde_json::json!({"delta": a.delta, "source": source});
    manifest.config = config.clone();
    let report = MetricReport {
        metric: if weighted { "whdr" } else { "error_rate" }.into(),
        value,
        n_judgments: Some(g.judgments.len()),
        n_pairs: None,
        config,
    };
    emit_report(&report, a.out.as_ref(), manifest)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SequenceFrame {
    pub image: PathBuf,
    pub reflectance: PathBuf,
    pub shading: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub frames: Vec<SequenceFrame>,
}

fn cmd_eval_mpre(a: &MpreArgs, manifest: &mut RunManifest) -> CliResult<()> {
    manifest.input(&a.sequence_manifest)?;
    let seq: SequenceManifest = read_json(&a.sequence_manifest)?;
    let base = a.sequence_manifest.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(seq.frames.len());
    for f in &seq.frames {
        let (ip, rp, sp) = (base.join(&f.image), base.join(&f.reflectance), base.join(&f.shading));
        for p in [&ip, &rp, &sp] {
            manifest.input(p)?;
        }
        frames.push(Frame {
            image: LinearImage::load(&ip)?,
            reflectance: LinearImage::load(&rp)?,
            shading: GrayImage::load(&sp)?,
        });
    }
    let value = mpre(&frames)?;
    let config = serde_json::json!({"frames": frames.len()});
    manifest.config = config.clone();
    let report = MetricReport {
        metric: "mpre".into(),
        value,
        n_judgments: None,
        n_pairs: Some(frames.len() * frames.len()),
        config,
    };
    emit_report(&report, a.out.as_ref(), manifest)?;
    Ok(())
}

fn cmd_fixtures(a: &FixturesArgs, manifest: &mut RunManifest) -> CliResult<()> {
    if !crate::fixtures::NAMES.contains(&a.name.as_str()) {
        return Err(usage(format!(
            "unknown fixture '{}'; expected one of {}",
            a.name,
            crate::fixtures::NAMES.join(", ")
        )));
    }
    if a.size < 4 {
        return Err(usage("--size must be at least 4"));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    manifest.config = serde_json::json!({"name": a.name, "size": a.size, "frames": a.frames, "chain": a.chain});
    let files = crate::fixtures::generate(&a.name, &a.out, a.size, a.frames, a.chain)?;
    for f in &files {
        manifest.output(f);
    }
    say(&format!("wrote {} files to {}", files.len(), a.out.display()));
    Ok(())
}

/// Deterministic colourful test pattern; `seed` shifts its phase.
fn bench_image(side: usize, seed: u64) -> LinearImage {
    let phase = (seed % 1000) as f64 * 0.001;
    LinearImage::from_fn(side, side, |x, y| {
        let (u, v) = (x as f64 / side as f64, y as f64 / side as f64);
        let t = (u * 7.0 + phase).sin() * (v * 5.0).cos();
        [0.3 + 0.25 * t, 0.35 + 0.2 * (u * 3.0 + v).sin(), 0.3 + 0.2 * (v * 4.0 - phase).cos()]
    })
}

fn cmd_bench_filter(cli: &Cli, a: &BenchFilterArgs, manifest: &mut RunManifest) -> CliResult<()> {
    if a.n == 0 || a.k == 0 || a.labels < 2 {
        return Err(usage("--n and --k must be positive and --labels at least 2"));
    }
    let side = (a.n as f64).sqrt().ceil() as usize;
    let image = bench_image(side, cli.seed.unwrap_or(0));
    let scorer = Scorer::baseline(BaselineWeights::default())?;
    let started = Instant::now();
    let samples = sample_grid(side, side, a.k)?;
    let filter = NystromFilter::build(&scorer, &image, &samples, crate::nystrom::DEFAULT_SVD_TOL)?;
    let build = started.elapsed().as_secs_f64();
    let palette = build_palette_spaced(&image, a.labels, 0.0)?;
    let unary = chromaticity_unary(&image, &palette, DecomposeConfig::default().unary_weights());
    let state = MeanFieldState::from_unary(&unary, image.len(), palette.len())?;
    let mu = mu_matrices(&palette);
    let started = Instant::now();
    let msg = pairwise_messages(&filter, &mu, &state.q, 1.0 / image.len() as f64)?;
    let pass = started.elapsed().as_secs_f64();
    let report = serde_json::json!({
        "n": image.len(),
        "width": side,
        "height": side,
        "k": samples.len(),
        "labels": palette.len(),
        "threads": rayon::current_num_threads(),
        "filter_build_seconds": build,
        "message_pass_seconds": pass,
        "message_checksum": msg.iter().sum::<f64>(),
    });
    say(&serde_json::to_string_pretty(&report).expect("report serializes"));
    if let Some(p) = &a.out {
        ensure_parent(p)?;
        write_json(p, &report)?;
        manifest.output(p);
    }
    manifest.config = serde_json::json!({"n": a.n, "k": a.k, "labels": a.labels});
    manifest.timing("filter_build", build);
    manifest.timing("message_pass", pass);
    manifest.metric("report", report);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_line_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_with_two() {
        let args: Vec<String> = ["intrinsic", "decompose", "--bogus"].iter().map(|s| s.to_string()).collect();
        assert_eq!(run_args(&args), 2);
    }

    #[test]
    fn pairs_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let img = LinearImage::from_fn(4, 4, |_, _| [0.5; 3]);
        let p = dir.path().join("pairs.csv");
        std::fs::write(&p, "i,j\n0,1\n# note\n\n3, 15\n").unwrap();
        assert_eq!(parse_pairs(&p, &img).unwrap(), vec![(0, 1), (3, 15)]);
        std::fs::write(&p, "0,1\n2,x\n").unwrap();
        match parse_pairs(&p, &img).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
        std::fs::write(&p, "0,16\n").unwrap();
        assert!(parse_pairs(&p, &img).is_err());
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mixrec_core::assign::assign_original_images;
use mixrec_core::data::{generate_dataset, ExperimentConfig, MixupMatrix, SyntheticDataset};
use mixrec_core::graph::SimpleGraph;
use mixrec_core::gram::{gram_extract, private_gram, GramEstimate, PrivateGram};
use mixrec_core::hardness::{
    completeness_campaign, reduce_maxcut, reduction_round_trip, soundness_campaign, soundness_coefficient,
    ReductionInstance, DEFAULT_REPLICATION,
};
use mixrec_core::matrix::{load_matrix, save_matrix};
use mixrec_core::pipeline::{evaluate, recover_all, RecoverOptions, RecoveryReport, Stage, StageError, DEFAULT_ERROR_TOL};
use mixrec_core::publearn::{learn_public_matrix, public_contribution, PowerIterationConfig};
use mixrec_core::signsolve::{solve_all, SolveOptions, DEFAULT_MAX_ROWS};

mod selftest;

const CONFIG: &str = "config.toml";
const X_PUB: &str = "X_pub.mat";
const X_PRIV: &str = "X_priv.mat";
const W_TRUE: &str = "W.mat";
const Y: &str = "Y.mat";
const GRAM: &str = "gram.mat";
const GRAM_RAW: &str = "gram_raw.mat";
const W_PUB: &str = "W_pub.mat";
const M_PRIV: &str = "M_priv.mat";
const W_PRIV: &str = "W_priv.mat";
const X_TILDE: &str = "X_tilde.mat";
const REPORT: &str = "report.json";

#[derive(Parser)]
#[command(name = "mixrec", version, about = "Private image recovery from Gaussian mixup datasets")]
struct Cli {
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample images and mixtures, writing X_pub, X_priv, W, Y and the config.
    Generate(GenerateArgs),
    /// Estimate the Gram matrix of the selection vectors from Y.
    Gram(StageArgs),
    /// Learn the public support of every synthetic image.
    Public(StageArgs),
    /// Recover the private mixing matrix from the Gram and public supports.
    Assign(StageArgs),
    /// Solve every pixel for the private images.
    Solve(SolveArgs),
    /// Run all stages and write X_tilde plus a JSON report.
    RecoverAll(RecoverArgs),
    /// Encode a MAX-CUT instance as hidden-sign regression.
    ReduceMaxcut(ReduceArgs),
    /// Check the reduction's completeness and rounding bounds on a graph.
    VerifyHardness(VerifyArgs),
    /// Quick small-scale checks of every stage against brute force.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Read parameters from a config file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_pub: Option<usize>,
    #[arg(long)]
    n_priv: Option<usize>,
    #[arg(long)]
    k_pub: Option<usize>,
    #[arg(long)]
    k_priv: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StageArgs {
    /// Directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Directory for stage outputs (defaults to the data directory).
    #[arg(long)]
    work: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Fixed residual tolerance (default scales with each pixel's norm).
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tol: Option<f64>,
    /// Acceptance threshold on the final entrywise error.
    #[arg(long, default_value_t = DEFAULT_ERROR_TOL)]
    error_tol: f64,
}

#[derive(Args)]
struct ReduceArgs {
    /// Edge list: header `n m`, then one `u v` per line.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = DEFAULT_REPLICATION)]
    c: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 100)]
    c: usize,
    /// Random points per graph for the rounding check.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Generate(args) => generate(args).map(|_| true),
        Command::Gram(args) => gram(args).map(|_| true),
        Command::Public(args) => public(args).map(|_| true),
        Command::Assign(args) => assign(args).map(|_| true),
        Command::Solve(args) => solve(args).map(|_| true),
        Command::RecoverAll(args) => recover(args),
        Command::ReduceMaxcut(args) => reduce(args).map(|_| true),
        Command::VerifyHardness(args) => verify(args),
        Command::Selftest(args) => selftest::run(args.seed),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let base = match &args.config {
        Some(path) => Some(ExperimentConfig::load(path)?),
        None => None,
    };
    let pick = |flag: Option<usize>, from: Option<usize>, name: &str| -> Result<usize> {
        flag.or(from).with_context(|| format!("--{name} is required without --config"))
    };
    let config = ExperimentConfig {
        n_pub: pick(args.n_pub, base.map(|c| c.n_pub), "n-pub")?,
        n_priv: pick(args.n_priv, base.map(|c| c.n_priv), "n-priv")?,
        k_pub: pick(args.k_pub, base.map(|c| c.k_pub), "k-pub")?,
        k_priv: pick(args.k_priv, base.map(|c| c.k_priv), "k-priv")?,
        d: pick(args.d, base.map(|c| c.d), "d")?,
        m: pick(args.m, base.map(|c| c.m), "m")?,
        seed: args.seed.or(base.map(|c| c.seed)).unwrap_or(0),
    };
    let split = config.split()?;
    let (x, w, y) = generate_dataset(&split, config.d, config.m, config.seed)?;
    let out = &args.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    config.save(out.join(CONFIG))?;
    save_matrix(out.join(X_PUB), &x.public(&split))?;
    save_matrix(out.join(X_PRIV), &x.private(&split))?;
    save_matrix(out.join(W_TRUE), &w.w())?;
    save_matrix(out.join(Y), &y.y)?;
    Ok(())
}

struct Dirs {
    data: PathBuf,
    work: PathBuf,
}

impl Dirs {
    fn new(args: &StageArgs) -> Result<Self> {
        let work = args.work.clone().unwrap_or_else(|| args.data.clone());
        std::fs::create_dir_all(&work).with_context(|| format!("creating {}", work.display()))?;
        Ok(Dirs {
            data: args.data.clone(),
            work,
        })
    }

    fn config(&self) -> Result<ExperimentConfig> {
        let config = ExperimentConfig::load(self.data.join(CONFIG))?;
        config.split()?.require_pipeline()?;
        Ok(config)
    }
}

fn load_dataset(data: &Path, config: &ExperimentConfig) -> mixrec_core::Result<SyntheticDataset> {
    let y = load_matrix(data.join(Y))?;
    if y.shape() != (config.m, config.d) {
        return Err(mixrec_core::Error::Format {
            path: data.join(Y),
            message: format!("Y is {}x{}, config says {}x{}", y.rows(), y.cols(), config.m, config.d),
        });
    }
    SyntheticDataset::new(y, config.split()?, config.seed)
}

fn load_gram(work: &Path, config: &ExperimentConfig) -> Result<GramEstimate> {
    Ok(GramEstimate {
        raw: load_matrix(work.join(GRAM_RAW))?,
        rounded: load_matrix(work.join(GRAM))?,
        grid: config.split()?.gram_grid(),
    })
}

fn gram(args: StageArgs) -> Result<()> {
    let dirs = Dirs::new(&args)?;
    let config = dirs.config()?;
    let estimate = gram_extract(&load_dataset(&dirs.data, &config)?)?;
    save_matrix(dirs.work.join(GRAM_RAW), &estimate.raw)?;
    save_matrix(dirs.work.join(GRAM), &estimate.rounded)?;
    Ok(())
}

fn public(args: StageArgs) -> Result<()> {
    let dirs = Dirs::new(&args)?;
    let config = dirs.config()?;
    let dataset = load_dataset(&dirs.data, &config)?;
    let x_pub = load_matrix(dirs.data.join(X_PUB))?;
    let (w_pub, _) = learn_public_matrix(&dataset, &x_pub, PowerIterationConfig::default(), config.seed)?;
    save_matrix(dirs.work.join(W_PUB), &w_pub)?;
    Ok(())
}

#[derive(Serialize)]
struct AssignSummary {
    root_vertices: usize,
    root_edges: usize,
    duplicate_rows: usize,
    flags: Vec<mixrec_core::assign::AmbiguityFlag>,
}

fn assign(args: StageArgs) -> Result<()> {
    let dirs = Dirs::new(&args)?;
    let config = dirs.config()?;
    let split = config.split()?;
    let gram = load_gram(&dirs.work, &config)?;
    let w_pub = load_matrix(dirs.work.join(W_PUB))?;
    let m_priv = private_gram(&gram, &w_pub, &split)?;
    let assignment = assign_original_images(&m_priv, split.n_priv)?;
    save_matrix(dirs.work.join(M_PRIV), &m_priv.to_matrix())?;
    save_matrix(dirs.work.join(W_PRIV), &assignment.w_priv)?;
    assignment.graph.save(dirs.work.join("root.txt"))?;
    let summary = AssignSummary {
        root_vertices: assignment.graph.n_vertices,
        root_edges: assignment.graph.m(),
        duplicate_rows: assignment.multiplicity.original_rows() - assignment.graph.m(),
        flags: assignment.flags.clone(),
    };
    write_json(&dirs.work.join("assign.json"), &summary)?;
    print_json(&summary)
}

#[derive(Serialize)]
struct SolveSummary {
    pixels: usize,
    abs_unique_pixels: usize,
    ambiguity_histogram: std::collections::BTreeMap<usize, usize>,
    max_residual: f64,
    rank_deficient: bool,
}

fn solve(args: SolveArgs) -> Result<()> {
    let dirs = Dirs::new(&args.stage)?;
    let config = dirs.config()?;
    let split = config.split()?;
    let dataset = load_dataset(&dirs.data, &config)?;
    let x_pub = load_matrix(dirs.data.join(X_PUB))?;
    let w_pub = load_matrix(dirs.work.join(W_PUB))?;
    let w_priv = load_matrix(dirs.work.join(W_PRIV))?;
    // the recovered W_priv must itself reproduce the private Gram
    PrivateGram::from_incidence(&w_priv)?;
    let y_pub = public_contribution(&w_pub, &x_pub, split.k_pub)?;
    let options = SolveOptions {
        tol: args.tol,
        max_rows: DEFAULT_MAX_ROWS,
    };
    let recovered = solve_all(&w_priv, &y_pub, &dataset.y, &split, options)?;
    save_matrix(dirs.work.join(X_TILDE), &recovered.x_tilde)?;
    let summary = SolveSummary {
        pixels: recovered.d(),
        abs_unique_pixels: recovered.abs_unique.iter().filter(|&&u| u).count(),
        ambiguity_histogram: recovered.ambiguity_histogram(),
        max_residual: recovered.max_residual,
        rank_deficient: recovered.rank_deficient,
    };
    write_json(&dirs.work.join("solve.json"), &summary)?;
    print_json(&summary)
}

/// Runs the pipeline. Loading Y counts as part of the first stage so that a
/// damaged input is reported as a stage failure rather than a usage error.
fn recover(args: RecoverArgs) -> Result<bool> {
    let config = ExperimentConfig::load(args.data.join(CONFIG))?;
    config.split()?.require_pipeline()?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let options = RecoverOptions {
        power: PowerIterationConfig::default(),
        solve: SolveOptions {
            tol: args.tol,
            max_rows: DEFAULT_MAX_ROWS,
        },
    };
    let run = load_dataset(&args.data, &config)
        .map_err(|error| StageError {
            stage: Stage::Gram,
            error,
            timings: Default::default(),
        })
        .and_then(|dataset| {
            let x_pub = load_matrix(args.data.join(X_PUB)).map_err(|error| StageError {
                stage: Stage::Public,
                error,
                timings: Default::default(),
            })?;
            recover_all(&dataset, &x_pub, &options)
        });
    let report = match run {
        Ok(output) => {
            save_matrix(args.out.join(X_TILDE), &output.recovered.x_tilde)?;
            // ground truth is read only here, after recovery has finished
            let split = config.split()?;
            let truth = MixupMatrix::from_support(split, &load_matrix(args.data.join(W_TRUE))?)?;
            let x_priv = load_matrix(args.data.join(X_PRIV))?;
            evaluate(&output, &truth, &x_priv, args.error_tol)?
        }
        Err(err) => {
            eprintln!("error: {err}");
            RecoveryReport::failed(&err, args.error_tol)
        }
    };
    write_json(&args.out.join(REPORT), &report)?;
    print_json(&report)?;
    Ok(report.success)
}

fn reduce(args: ReduceArgs) -> Result<()> {
    let graph = SimpleGraph::load(&args.graph)?;
    let instance = reduce_maxcut(&graph, args.c)?;
    instance.save(&args.out)?;
    println!(
        "wrote {} x {} instance with c = {} to {}",
        instance.rows(),
        instance.n(),
        instance.c,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct HardnessReport {
    vertices: usize,
    edges: usize,
    c: usize,
    opt: usize,
    completeness_holds: bool,
    optimal_cuts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    soundness: Option<mixrec_core::hardness::SoundnessReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    round_trip: Option<mixrec_core::hardness::RoundTrip>,
    bound_holds: bool,
}

fn verify(args: VerifyArgs) -> Result<bool> {
    let graph = SimpleGraph::load(&args.graph)?;
    if graph.m() == 0 {
        bail!("graph has no edges");
    }
    let complete = completeness_campaign(std::slice::from_ref(&graph), args.c)?;
    let opt = mixrec_core::hardness::brute_force_maxcut(&graph)?.best_value;
    let regular = graph.degrees().first().copied().filter(|&d| graph.is_regular(d));
    let soundness = match regular {
        Some(d) if soundness_coefficient(d).is_ok() => {
            Some(soundness_campaign(std::slice::from_ref(&graph), args.c, args.trials, args.seed)?)
        }
        _ => None,
    };
    let instance: ReductionInstance = reduce_maxcut(&graph, args.c)?;
    let round_trip = if graph.m() + graph.n_vertices <= DEFAULT_MAX_ROWS {
        Some(reduction_round_trip(&instance)?)
    } else {
        None
    };
    let bound_holds = complete.failures == 0
        && soundness.as_ref().map_or(true, |s| s.bound_holds)
        && round_trip.as_ref().map_or(true, |r| r.holds);
    let report = HardnessReport {
        vertices: graph.n_vertices,
        edges: graph.m(),
        c: args.c,
        opt,
        completeness_holds: complete.failures == 0,
        optimal_cuts: complete.cuts_checked,
        soundness,
        round_trip,
        bound_holds,
    };
    print_json(&report)?;
    Ok(bound_holds)
}

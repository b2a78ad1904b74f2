//! Command-line front end.
//!
//! Exit status: `0` on success, `1` when a run fails, `2` on bad arguments.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::diagnostics::{
    auto_k, cor5_certificate, layer_spectra, lip_curvature_gap, prop6_certificate, r1_certificate,
    thm3_certificate, thm4_certificate, write_certificates, CertOptions, Certificate, Status,
};
use crate::error::{Error, Result};
use crate::experiments::{gen_rank2, run_depth_sweep, run_symmetry, sweep_widths, SweepConfig, SymmetryConfig};
use crate::linalg::Matrix;
use crate::net::{load_params, mse, save_params, NetParams};
use crate::repcost::{
    counterexample_network, cp_interpolation_network, linear_repcost_expansion,
    optimal_linear_factorization,
};
use crate::train::{init, train, Optimizer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bnlab", version, about = "Bottleneck rank, representation cost and weight-decay experiments")]
struct Cli {
    /// Overrides the seed of the config and of BNLAB_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// INI-style config with [data], [train], [sweep] and [output] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Depth-L representation cost of a linear map and its large-depth expansion, as JSON.
    Repcost {
        /// `diag:a,b,..`, `rows:a,b;c,d` or a file with one matrix row per line.
        #[arg(long)]
        matrix: String,
        #[arg(long)]
        depth: usize,
    },
    /// Writes an explicitly constructed network to a weight file.
    Build {
        #[command(subcommand)]
        kind: BuildKind,
    },
    /// Trains one network and writes `net.net` and `trace.csv`.
    Train(TrainArgs),
    /// Evaluates bottleneck certificates (JSON) or layer spectra (CSV) on a weight file.
    Diagnose(DiagnoseArgs),
    /// Norm-versus-depth sweep on the rank-2 synthetic task.
    Sweep,
    /// Symmetry-learning run on the inner-GD loss prediction task.
    Symmetry,
}

#[derive(Debug, Subcommand)]
enum BuildKind {
    /// Balanced depth-L linear factorization of a matrix.
    Factorize {
        #[arg(long)]
        matrix: String,
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Network interpolating between the identity and the matrix along the layers.
    Cp {
        #[arg(long)]
        matrix: String,
        #[arg(long)]
        depth: usize,
        /// Leaky-ReLU slope; `0` is ReLU, `1` linear.
        #[arg(long, default_value_t = 0.0)]
        slope: f64,
        /// Sample CSV (one point per row); uniform samples in `[0,1]^d` otherwise.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// ReLU network on `ℝ₊³` whose branch term costs nothing in the leading norm terms.
    Counterexample {
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 1.0)]
        branch: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 8)]
    depth: usize,
    #[arg(long)]
    width: Option<usize>,
    /// Inputs, one point per row; with `--y`, replaces the rank-2 generator.
    #[arg(long, requires = "y")]
    x: Option<PathBuf>,
    #[arg(long, requires = "x")]
    y: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    optimizer: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Op {
    R1,
    Thm3,
    Thm4,
    Cor5,
    Prop6,
    Lip,
    Spectra,
    All,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, value_enum, default_value_t = Op::All)]
    op: Op,
    /// Evaluation points, one per row; uniform samples in `[0,1]^d` otherwise.
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    points: usize,
    /// Bottleneck rank; the middle-layer weight rank by default.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
    /// Write the output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 1 when any certificate fails.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Parses `args` (including the program name) and runs the command, returning the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `bnlab --help` for usage.");
            EXIT_USAGE
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            EXIT_RUN
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Repcost { ref matrix, depth } => {
            let a = parse_matrix(matrix)?;
            if depth == 0 {
                return usage("--depth must be at least 1");
            }
            let b = linear_repcost_expansion(&a, depth)?;
            println!("{}", serde_json::to_string_pretty(&b).map_err(Error::from)?);
            Ok(())
        }
        Command::Build { ref kind } => build(kind, cli.seed),
        Command::Train(ref args) => train_cmd(&cli, args),
        Command::Diagnose(ref args) => diagnose(args, cli.seed),
        Command::Sweep => sweep(&cli),
        Command::Symmetry => symmetry(&cli),
    }
}

/// Parses `diag:..`, `rows:..;..` or a matrix file path.
fn parse_matrix(spec: &str) -> CliResult<Matrix> {
    let num = |s: &str| -> CliResult<f64> {
        match s.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => usage(format!("bad matrix entry {s:?}")),
        }
    };
    if let Some(d) = spec.strip_prefix("diag:") {
        let diag = d.split(',').map(num).collect::<CliResult<Vec<_>>>()?;
        return Ok(Matrix::from_diag(&diag));
    }
    let (text, sep_rows) = match spec.strip_prefix("rows:") {
        Some(r) => (r.to_string(), ';'),
        None => match std::fs::read_to_string(spec) {
            Ok(t) => (t, '\n'),
            Err(e) => return usage(format!("cannot read matrix file {spec}: {e}")),
        },
    };
    let rows = text
        .split(sep_rows)
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(num)
                .collect::<CliResult<Vec<_>>>()
        })
        .collect::<CliResult<Vec<_>>>()?;
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len() || r.is_empty()) {
        return usage(format!("matrix {spec:?} is empty or ragged"));
    }
    Ok(Matrix::from_rows(&rows))
}

/// Reads a headerless numeric CSV with one point per row into a `d × N` matrix.
pub fn read_points(path: &Path) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format {
                what: "points csv",
                msg: format!("{}: {e}", path.display()),
            })?;
        cols.push(row);
    }
    if cols.is_empty() {
        return Err(Error::Format {
            what: "points csv",
            msg: format!("{} has no rows", path.display()),
        });
    }
    Ok(Matrix::from_columns(&cols))
}

/// `n` points drawn uniformly from `[0,1]^d`.
pub fn uniform_points(d: usize, n: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(d, n, |_, _| rng.random::<f64>())
}

fn net_summary(params: &NetParams) -> serde_json::Value {
    json!({
        "depth": params.depth(),
        "widths": params.widths(),
        "slope": params.slope(),
        "norm2": params.squared_norm(),
    })
}

fn build(kind: &BuildKind, seed: Option<u64>) -> CliResult<()> {
    let (params, out) = match kind {
        BuildKind::Factorize { matrix, depth, out } => {
            (optimal_linear_factorization(&parse_matrix(matrix)?, *depth)?, out)
        }
        BuildKind::Cp {
            matrix,
            depth,
            slope,
            samples,
            points,
            out,
        } => {
            let a = parse_matrix(matrix)?;
            let xs = match samples {
                Some(p) => read_points(p)?,
                None => uniform_points(a.cols(), *points, seed.unwrap_or(0)),
            };
            (cp_interpolation_network(&a, *depth, &xs, *slope)?, out)
        }
        BuildKind::Counterexample {
            depth,
            eps,
            branch,
            out,
        } => (counterexample_network(*branch, *depth, *eps)?, out),
    };
    save_params(&params, out)?;
    println!("{}", net_summary(&params));
    Ok(())
}

fn load_sweep_config(cli: &Cli) -> CliResult<SweepConfig> {
    let mut cfg = match &cli.config {
        Some(p) => SweepConfig::load(p).map_err(config_failure)?,
        None => SweepConfig::default().with_env().map_err(config_failure)?,
    };
    if let Some(s) = cli.seed {
        cfg.data_seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

fn load_symmetry_config(cli: &Cli) -> CliResult<SymmetryConfig> {
    let mut cfg = match &cli.config {
        Some(p) => SymmetryConfig::load(p).map_err(config_failure)?,
        None => SymmetryConfig::default().with_env().map_err(config_failure)?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

fn config_failure(e: Error) -> Failure {
    match e {
        Error::Io(_) => Failure::Run(e),
        other => Failure::Usage(other.to_string()),
    }
}

fn train_cmd(cli: &Cli, args: &TrainArgs) -> CliResult<()> {
    let mut cfg = load_sweep_config(cli)?;
    if cli.out_dir.is_none() && cli.config.is_none() {
        cfg.out_dir = PathBuf::from("out/train");
    }
    let mut tc = cfg.train.clone();
    if let Some(v) = args.lambda {
        tc.lambda = v;
    }
    if let Some(v) = args.steps {
        tc.steps = v;
        if tc.anneal_after.is_some_and(|a| a >= v) {
            tc.anneal_after = Some(v * 4 / 5);
        }
        tc.log_every = tc.log_every.min(v);
    }
    if let Some(v) = args.eta {
        tc.eta0 = v;
    }
    if let Some(o) = &args.optimizer {
        tc.optimizer = o.parse::<Optimizer>().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    tc.seed = cli.seed.unwrap_or(tc.seed);
    tc.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if args.depth == 0 {
        return usage("--depth must be at least 1");
    }
    let (x, y) = match (&args.x, &args.y) {
        (Some(xp), Some(yp)) => (read_points(xp)?, read_points(yp)?),
        _ => {
            let d = gen_rank2(cfg.data_seed, cfg.n_samples)?.normalized(cfg.x_norm, cfg.y_norm);
            (d.x, d.y)
        }
    };
    if x.cols() != y.cols() {
        return usage(format!("x has {} points but y has {}", x.cols(), y.cols()));
    }
    let widths = sweep_widths(x.rows(), args.width.unwrap_or(cfg.width), y.rows(), args.depth);
    let p0 = init(&widths, 0.0, cfg.scheme, tc.seed)?;
    let (params, trace) = train(&p0, &x, &y, &tc)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(Error::from)?;
    save_params(&params, cfg.out_dir.join("net.net"))?;
    trace.save_csv(cfg.out_dir.join("trace.csv"))?;
    let mut summary = net_summary(&params);
    summary["mse"] = json!(mse(&params, &x, &y)?);
    summary["out_dir"] = json!(cfg.out_dir.display().to_string());
    println!("{summary}");
    Ok(())
}

fn diagnose(args: &DiagnoseArgs, seed: Option<u64>) -> CliResult<()> {
    let params = load_params(&args.weights)?;
    let x = match &args.x {
        Some(p) => read_points(p)?,
        None => {
            if args.points == 0 {
                return usage("--points must be at least 1");
            }
            uniform_points(params.d_in(), args.points, seed.unwrap_or(0))
        }
    };
    if x.rows() != params.d_in() {
        return usage(format!("points have dimension {}, network expects {}", x.rows(), params.d_in()));
    }
    let mut sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(Error::from)?),
        None => Box::new(std::io::stdout().lock()),
    };
    if args.op == Op::Spectra {
        layer_spectra(&params, &x, args.threshold)?.write_csv(&mut sink)?;
        return Ok(());
    }
    let opts = CertOptions {
        p: args.p,
        c1: args.c1,
        ..CertOptions::default()
    };
    opts.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let k = match args.k {
        Some(k) => k,
        None => auto_k(&params)?,
    };
    let all = args.op == Op::All;
    let wants = |op: Op| all || args.op == op;
    let mut certs: Vec<Certificate> = Vec::new();
    let mut skipped: Vec<String> = Vec::new();
    let mut push = |r: Result<Certificate>, what: &str| -> CliResult<()> {
        match r {
            Ok(c) => certs.push(c),
            Err(e @ (Error::Precondition(_) | Error::Scope(_))) if all => {
                skipped.push(format!("{what}: {e}"))
            }
            Err(e) => return Err(e.into()),
        }
        Ok(())
    };
    if wants(Op::R1) {
        push(r1_certificate(&params, &x, &opts), "r1")?;
    }
    for i in 0..x.cols() {
        let xi = x.col(i);
        if wants(Op::Thm3) {
            push(thm3_certificate(&params, &xi, k, &opts), &format!("thm3 point {i}"))?;
        }
        if wants(Op::Thm4) {
            push(thm4_certificate(&params, &xi, k, &opts), &format!("thm4 point {i}"))?;
        }
        if wants(Op::Prop6) {
            push(prop6_certificate(&params, &xi), &format!("prop6 point {i}"))?;
        }
    }
    if wants(Op::Cor5) {
        push(cor5_certificate(&params, &x, k, &opts), "cor5")?;
    }
    if wants(Op::Lip) {
        if x.cols() < 2 {
            return usage("the curvature bound needs at least two points");
        }
        push(lip_curvature_gap(&params, &x.col(0), &x.col(1), None, &opts), "lip")?;
    }
    for s in &skipped {
        eprintln!("skipped {s}");
    }
    write_certificates(&certs, &mut sink)?;
    let failed = certs.iter().filter(|c| c.status == Status::Fail).count();
    if failed > 0 {
        eprintln!("{failed} of {} certificates failed", certs.len());
        if args.strict {
            return Err(Failure::Run(Error::Precondition(format!("{failed} certificates failed"))));
        }
    }
    Ok(())
}

fn sweep(cli: &Cli) -> CliResult<()> {
    let cfg = load_sweep_config(cli)?;
    let outcome = run_depth_sweep(&cfg)?;
    outcome.write_outputs(&cfg.out_dir)?;
    let r = &outcome.report;
    r.write_csv(std::io::stdout().lock())?;
    for f in &r.fits {
        eprintln!(
            "rank {}: depths {:?}, slope {}, mean norm2 {:.3}",
            f.rank,
            f.depths,
            f.slope.map_or("n/a".into(), |s| format!("{s:.3}")),
            f.mean_norm2
        );
    }
    for f in &r.failures {
        eprintln!("run depth {} seed {} failed: {}", f.depth, f.seed, f.error);
    }
    eprintln!("wrote {}", cfg.out_dir.display());
    if r.records.is_empty() {
        return Err(Failure::Run(Error::NonConvergence("every sweep run failed".into())));
    }
    Ok(())
}

fn symmetry(cli: &Cli) -> CliResult<()> {
    let cfg = load_symmetry_config(cli)?;
    let outcome = run_symmetry(&cfg)?;
    outcome.write_outputs(&cfg.out_dir)?;
    let r = &outcome.report;
    println!(
        "{}",
        json!({
            "fit": r.fit,
            "relative_mse": r.relative_mse,
            "norm2": r.norm2,
            "weight_ranks": r.weight_ranks,
            "layers_with_two": r.layers_with_two,
            "layer": r.layer,
            "collapse_ratio": r.selected_collapse_ratio(),
            "control_ratio": r.selected_control_ratio(),
            "out_dir": cfg.out_dir.display().to_string(),
        })
    );
    Ok(())
}

use std::error::Error as StdError;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use projcal::approx::{approx_posterior, ApproxOptions};
use projcal::bench::{emit_report, generate_data_with, run_bench, write_density_csv, write_samples_csv, BenchSpec, Method, Overrides};
use projcal::calibrate::{project_posterior, summarize, AdaGradConfig, GridPolicy, ProjectOptions};
use projcal::gp::PhysicalDataset;
use projcal::ko::{ko_exact_density, ko_mcmc, map_theta_psi, KoConfig, PsiMode, PsiPrior};
use projcal::model::{builtin, emulate, read_runs, ComputerModel, ConfigId};
use projcal::{BoxDomain, KernelSpec};

type CliResult<T> = std::result::Result<T, Box<dyn StdError>>;

#[derive(Parser)]
#[command(name = "projcal", version, about = "Projected calibration of computer models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Posterior of the L2 projection by pushing GP draws through AdaGrad.
    Project(ProjectArgs),
    /// Gaussian approximation of the projected posterior.
    Approx(ApproxArgs),
    /// Kennedy–O'Hagan Metropolis sampler.
    Ko(KoArgs),
    /// Kennedy–O'Hagan posterior density on a grid (at most two parameters).
    KoExact(KoExactArgs),
    /// Runs methods on a builtin configuration and writes artifacts.
    Bench(BenchArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Physical data CSV with header x1,…,xp,y.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Builtin configuration (1, 2 or 3): supplies the model and, without --data, the data.
    #[arg(long)]
    config: Option<u32>,
    /// Simulator runs CSV (x1..xp,t1..tq,ys) to emulate instead of a builtin model.
    #[arg(long)]
    runs: Option<PathBuf>,
    /// Input domain as lo:hi[,lo:hi...].
    #[arg(long)]
    omega: Option<String>,
    /// Parameter box as lo:hi[,lo:hi...] (with --runs).
    #[arg(long)]
    theta: Option<String>,
    /// Noise sd of the physical data.
    #[arg(long)]
    sigma: Option<f64>,
    /// Range of the emulator kernel in unit-cube coordinates.
    #[arg(long, default_value_t = 1.0)]
    emulator_psi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, default_value_t = 2.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.2)]
    psi: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
}

#[derive(Args)]
struct AdaGradArgs {
    /// AdaGrad steps, also the number of discretization points.
    #[arg(long = "N", default_value_t = 2000)]
    n_steps: usize,
    #[arg(long, default_value_t = 0.1)]
    a0: f64,
    #[arg(long, default_value_t = 1.0)]
    b0: f64,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 5)]
    starts: usize,
}

impl AdaGradArgs {
    fn config(&self) -> AdaGradConfig {
        AdaGradConfig {
            a0: self.a0,
            b0: self.b0,
            eps: self.eps,
            n_steps: self.n_steps,
            n_starts: self.starts,
            ..AdaGradConfig::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GridArg {
    Shared,
    PerDraw,
}

#[derive(Args)]
struct ProjectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    adagrad: AdaGradArgs,
    /// Posterior draws.
    #[arg(long = "T", default_value_t = 1000)]
    draws: usize,
    #[arg(long, value_enum, default_value_t = GridArg::Shared)]
    grid: GridArg,
    /// JSON summary (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    samples_out: Option<PathBuf>,
}

#[derive(Args)]
struct ApproxArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    adagrad: AdaGradArgs,
    /// Quadrature points for the sandwich matrices.
    #[arg(long = "quad-N", default_value_t = 200_000)]
    quad_n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum PsiModeArg {
    Sample,
    Map,
}

#[derive(Args)]
struct KoArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 2.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = PsiModeArg::Sample)]
    psi_mode: PsiModeArg,
    /// Range prior shape (default 2 when sampling, 0.2 for MAP).
    #[arg(long)]
    a_psi: Option<f64>,
    /// Range prior rate (default 2 when sampling, 1 for MAP).
    #[arg(long)]
    b_psi: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 10)]
    thin: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    samples_out: Option<PathBuf>,
}

#[derive(Args)]
struct KoExactArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 2.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Fixed range; estimated by MAP when omitted.
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    a_psi: f64,
    #[arg(long, default_value_t = 1.0)]
    b_psi: f64,
    /// Grid points per parameter axis.
    #[arg(long, default_value_t = 801)]
    resolution: usize,
    /// Density grid CSV (theta coordinates + density).
    #[arg(long)]
    out: PathBuf,
    /// JSON summary of the density (stdout when omitted).
    #[arg(long)]
    summary_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: u32,
    /// Methods to run; repeat for a side-by-side report.
    #[arg(long, required = true)]
    method: Vec<Method>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "T")]
    draws: Option<usize>,
    #[arg(long = "N")]
    n_steps: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Number of observations.
    #[arg(long)]
    n: Option<usize>,
    /// Output directory; one subdirectory per method plus report.md.
    #[arg(long)]
    out: PathBuf,
}

fn load(args: &DataArgs) -> CliResult<(PhysicalDataset, Box<dyn ComputerModel>)> {
    let omega = args.omega.as_deref().map(BoxDomain::parse).transpose()?;
    let scenario = args.config.map(builtin).transpose()?;
    let model: Box<dyn ComputerModel> = match (&args.runs, &scenario) {
        (Some(path), _) => {
            let omega = omega.clone().ok_or("--runs needs --omega")?;
            let theta = BoxDomain::parse(args.theta.as_deref().ok_or("--runs needs --theta")?)?;
            let runs = read_runs(path, omega.dim(), theta.dim())?;
            let spec = KernelSpec::new(2.5, args.emulator_psi, 1.0)?;
            Box::new(emulate(&runs, omega, theta, &spec)?)
        }
        (None, Some(s)) => {
            if args.theta.is_some() {
                return Err("--theta applies only to emulated models (--runs)".into());
            }
            Box::new(s.model.clone())
        }
        (None, None) => return Err("give --config or --runs".into()),
    };
    let data = match &args.data {
        Some(path) => {
            let omega = omega.unwrap_or_else(|| model.omega().clone());
            let sigma = args
                .sigma
                .or(scenario.as_ref().map(|s| s.sigma))
                .ok_or("--data needs --sigma")?;
            PhysicalDataset::read_csv(path, omega, sigma)?
        }
        None => {
            let id = args.config.ok_or("without --data, give --config to generate data")?;
            generate_data_with(ConfigId::from_number(id)?, args.seed, None, args.sigma)?
        }
    };
    if data.dim() != model.omega().dim() {
        return Err(format!("data has {} inputs but the model expects {}", data.dim(), model.omega().dim()).into());
    }
    Ok((data, model))
}

fn emit_json(value: &serde_json::Value, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => fs::write(path, text + "\n")?,
        None => {
            if let Err(e) = writeln!(std::io::stdout(), "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn project(args: ProjectArgs) -> CliResult<()> {
    let (data, model) = load(&args.data)?;
    let spec = KernelSpec::new(args.kernel.alpha, args.kernel.psi, args.kernel.tau)?;
    let opts = ProjectOptions {
        draws: args.draws,
        adagrad: args.adagrad.config(),
        seed: args.data.seed,
        grid: match args.grid {
            GridArg::Shared => GridPolicy::Shared,
            GridArg::PerDraw => GridPolicy::PerDraw,
        },
        lambda: None,
    };
    let r = project_posterior(&data, model.as_ref(), &spec, &opts)?;
    if let Some(path) = &args.samples_out {
        write_samples_csv(&r.samples, path)?;
    }
    emit_json(
        &json!({
            "method": "project",
            "params": { "n": data.len(), "sigma": data.sigma(), "kernel": spec_json(&spec), "options": opts },
            "mean": r.mean, "sd": r.sd, "q025": r.q025, "q975": r.q975,
            "theta_hat_l2": r.theta_hat_l2,
            "runtime_s": r.runtime_s,
        }),
        args.out.as_deref(),
    )
}

fn spec_json(spec: &KernelSpec) -> serde_json::Value {
    json!({ "alpha": spec.alpha(), "psi": spec.psi(), "tau": spec.tau() })
}

fn approx(args: ApproxArgs) -> CliResult<()> {
    let (data, model) = load(&args.data)?;
    let spec = KernelSpec::new(args.kernel.alpha, args.kernel.psi, args.kernel.tau)?;
    let opts = ApproxOptions {
        n_grid: args.adagrad.n_steps,
        quad_n: args.quad_n,
        adagrad: args.adagrad.config(),
        seed: args.data.seed,
        lambda: None,
    };
    let report = approx_posterior(&data, model.as_ref(), &spec, &opts)?;
    let mut value = report.to_json();
    value["params"] = json!({ "n": data.len(), "sigma": data.sigma(), "kernel": spec_json(&spec), "options": opts });
    emit_json(&value, args.out.as_deref())
}

fn ko(args: KoArgs) -> CliResult<()> {
    let (data, model) = load(&args.data)?;
    let (prior, mode) = match args.psi_mode {
        PsiModeArg::Sample => (
            PsiPrior::InverseGamma {
                a: args.a_psi.unwrap_or(2.0),
                b: args.b_psi.unwrap_or(2.0),
            },
            PsiMode::Sample,
        ),
        PsiModeArg::Map => (
            PsiPrior::JointlyRobust {
                a: args.a_psi.unwrap_or(0.2),
                b: args.b_psi.unwrap_or(1.0),
            },
            PsiMode::Map,
        ),
    };
    let cfg = KoConfig {
        psi_prior: prior,
        psi_mode: mode,
        alpha: args.alpha,
        tau: args.tau,
        burn_in: args.burn_in,
        n_samples: args.samples,
        thin: args.thin,
        proposal_scale: None,
    };
    let chain = ko_mcmc(&data, model.as_ref(), &cfg, args.data.seed)?;
    if let Some(path) = &args.samples_out {
        write_samples_csv(&chain.theta, path)?;
    }
    let s = summarize(&chain.theta);
    emit_json(
        &json!({
            "method": "ko",
            "params": { "n": data.len(), "sigma": data.sigma(), "seed": args.data.seed, "ko": cfg },
            "mean": s.mean, "sd": s.sd, "q025": s.q025, "q975": s.q975,
            "psi_fixed": chain.psi_fixed,
            "acceptance": chain.acceptance,
            "low_acceptance": chain.low_acceptance,
            "proposal_scale": chain.proposal_scale,
            "runtime_s": chain.runtime_s,
        }),
        args.out.as_deref(),
    )
}

fn ko_exact(args: KoExactArgs) -> CliResult<()> {
    let (data, model) = load(&args.data)?;
    let cfg = KoConfig {
        psi_prior: PsiPrior::JointlyRobust {
            a: args.a_psi,
            b: args.b_psi,
        },
        alpha: args.alpha,
        tau: args.tau,
        ..KoConfig::map_default()
    };
    let psi = match args.psi {
        Some(p) => p,
        None => map_theta_psi(&data, model.as_ref(), &cfg, args.data.seed)?.1,
    };
    let d = ko_exact_density(&data, model.as_ref(), psi, args.resolution, &cfg)?;
    write_density_csv(&d, &args.out)?;
    emit_json(
        &json!({
            "method": "ko-exact",
            "params": { "n": data.len(), "sigma": data.sigma(), "psi": psi, "resolution": d.axes[0].len(), "ko": cfg },
            "mean": d.mean, "sd": d.sd, "cov": d.cov, "integral": d.integral,
        }),
        args.summary_out.as_deref(),
    )
}

fn bench(args: BenchArgs) -> CliResult<()> {
    fs::create_dir_all(&args.out)?;
    let mut tables = Vec::new();
    for method in &args.method {
        let mut spec = BenchSpec::new(args.config, *method, args.seed)?;
        spec.overrides = Overrides {
            draws: args.draws,
            n_steps: args.n_steps,
            sigma: args.sigma,
            n: args.n,
        };
        let dir = args.out.join(method.label());
        let out = run_bench(&spec, Some(&dir))?;
        log::info!("{method}: mean {:?} sd {:?} in {:.2}s", out.table.mean, out.table.sd, out.table.runtime_s);
        tables.push(out.table);
    }
    emit_report(&tables, &args.out.join("report.md"))?;
    emit_report(&tables, &args.out.join("report.csv"))?;
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Project(a) => project(a),
        Command::Approx(a) => approx(a),
        Command::Ko(a) => ko(a),
        Command::KoExact(a) => ko_exact(a),
        Command::Bench(a) => bench(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

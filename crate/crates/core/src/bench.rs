//! Synthetic benchmark datasets, a single-run driver for every method and
//! side-by-side summary tables.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand_distr::{Distribution, Normal};
use serde::Serialize;
use serde_json::json;

use crate::approx::{approx_posterior, ApproxOptions};
use crate::calibrate::{l2_estimate, project_posterior, quantile_sorted, summarize, ProjectOptions, RidgeOptions};
use crate::error::{Error, Result};
use crate::gp::PhysicalDataset;
use crate::kernels::KernelSpec;
use crate::ko::{ko_exact_density, ko_mcmc, map_theta_psi, KoConfig, KoDensity};
use crate::model::{builtin, ComputerModel, ConfigId, DesignScheme, Scenario};
use crate::rng::{stream_rng, Purpose};

pub const DEFAULT_ALPHA: f64 = 2.5;
pub const DEFAULT_PSI: f64 = 0.2;
pub const DEFAULT_TAU: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Project,
    Approx,
    Ko,
    KoExact,
    L2,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Project, Method::Approx, Method::Ko, Method::KoExact, Method::L2];

    pub fn label(self) -> &'static str {
        match self {
            Method::Project => "project",
            Method::Approx => "approx",
            Method::Ko => "ko",
            Method::KoExact => "ko-exact",
            Method::L2 => "l2",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method '{s}'")))
    }
}

/// Optional replacements for the benchmark defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Overrides {
    /// Posterior draws T.
    pub draws: Option<usize>,
    /// AdaGrad steps N.
    pub n_steps: Option<usize>,
    pub sigma: Option<f64>,
    /// Number of observations.
    pub n: Option<usize>,
}

impl Overrides {
    pub fn validate(&self) -> Result<()> {
        if self.draws == Some(0) || self.n_steps == Some(0) {
            return Err(Error::InvalidParameter("T and N must be at least 1".into()));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!("noise sd must be positive, got {s}")));
            }
        }
        if self.n == Some(0) {
            return Err(Error::InvalidParameter("need at least one observation".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSpec {
    pub config: ConfigId,
    pub method: Method,
    pub seed: u64,
    pub overrides: Overrides,
}

impl BenchSpec {
    pub fn new(config: u32, method: Method, seed: u64) -> Result<Self> {
        Ok(Self {
            config: ConfigId::from_number(config)?,
            method,
            seed,
            overrides: Overrides::default(),
        })
    }
}

/// Design of a scenario with `n` points in place of the default count.
fn resized_design(s: &Scenario, n: usize) -> DesignScheme {
    match &s.design {
        DesignScheme::Uniform(_) => DesignScheme::Uniform(n),
        DesignScheme::Equidistant(_) => DesignScheme::Equidistant(n),
        DesignScheme::Fixed(xs) => {
            let (lo, hi) = (xs[0], xs[xs.len() - 1]);
            if n == 1 {
                DesignScheme::Fixed(vec![lo])
            } else {
                DesignScheme::Fixed((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
            }
        }
    }
}

/// Benchmark dataset for a configuration, optionally resized or re-noised.
pub fn generate_data_with(config: ConfigId, seed: u64, n: Option<usize>, sigma: Option<f64>) -> Result<PhysicalDataset> {
    let s = builtin(config.number())?;
    let design = match n {
        Some(n) => resized_design(&s, n),
        None => s.design.clone(),
    };
    let sigma = sigma.unwrap_or(s.sigma);
    let mut rng = stream_rng(seed, Purpose::Data, 0);
    let grid = design.realize(s.model.omega(), &mut rng)?;
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let y = grid.iter().map(|x| s.truth(x) + noise.sample(&mut rng)).collect();
    PhysicalDataset::new(grid, y, sigma, s.model.omega().clone())
}

/// The default-size dataset of a configuration.
pub fn generate_data(config: ConfigId, seed: u64) -> Result<PhysicalDataset> {
    generate_data_with(config, seed, None, None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryTable {
    pub method: String,
    pub config: u32,
    /// Effective settings of the run.
    pub params: serde_json::Value,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
    pub runtime_s: f64,
}

/// Raw output accompanying a summary.
#[derive(Debug, Clone)]
pub enum Samples {
    Draws(Vec<Vec<f64>>),
    Density(KoDensity),
    None,
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub table: SummaryTable,
    pub samples: Samples,
    pub data: PhysicalDataset,
}

const Z975: f64 = 1.959_963_984_540_054;

fn marginal_quantiles(d: &KoDensity, k: usize) -> (f64, f64) {
    let q = d.axes.len();
    let m = d.axes[k].len();
    let mut marginal = vec![0.0; m];
    for (flat, v) in d.density.iter().enumerate() {
        let idx = if q == 1 { flat } else if k == 0 { flat / m } else { flat % m };
        marginal[idx] += v;
    }
    let axis = &d.axes[k];
    let h = axis[1] - axis[0];
    let other_h = if q == 2 { d.axes[1 - k][1] - d.axes[1 - k][0] } else { 1.0 };
    let mut cdf = vec![0.0; m];
    for i in 1..m {
        cdf[i] = cdf[i - 1] + 0.5 * h * other_h * (marginal[i - 1] + marginal[i]);
    }
    let total = cdf[m - 1];
    let inverse = |p: f64| {
        let target = p * total;
        let i = cdf.partition_point(|c| *c < target).clamp(1, m - 1);
        let (c0, c1) = (cdf[i - 1], cdf[i]);
        let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
        axis[i - 1] + frac * h
    };
    (inverse(0.025), inverse(0.975))
}

/// Runs one method on one benchmark configuration with the default settings
/// (T=1000, N=2000, α=5/2, τ=1), writing `summary.json`, `samples.csv` and
/// `data.csv` to `out_dir` when given.
pub fn run_bench(spec: &BenchSpec, out_dir: Option<&Path>) -> Result<BenchOutput> {
    spec.overrides.validate()?;
    let label = spec.method.label();
    let out = run_method(spec).map_err(|e| e.in_method(label))?;
    if let Some(dir) = out_dir {
        write_artifacts(&out, dir)?;
    }
    Ok(out)
}

fn run_method(spec: &BenchSpec) -> Result<BenchOutput> {
    let started = Instant::now();
    let o = &spec.overrides;
    let data = generate_data_with(spec.config, spec.seed, o.n, o.sigma)?;
    let scenario = builtin(spec.config.number())?;
    let model: &dyn ComputerModel = &scenario.model;
    let kernel = KernelSpec::new(DEFAULT_ALPHA, DEFAULT_PSI, DEFAULT_TAU)?;
    let mut project = ProjectOptions {
        seed: spec.seed,
        ..ProjectOptions::default()
    };
    if let Some(t) = o.draws {
        project.draws = t;
    }
    if let Some(n) = o.n_steps {
        project.adagrad.n_steps = n;
    }
    let common = json!({
        "n": data.len(),
        "sigma": data.sigma(),
        "seed": spec.seed,
        "alpha": DEFAULT_ALPHA,
        "psi": DEFAULT_PSI,
        "tau": DEFAULT_TAU,
    });
    let with = |extra: serde_json::Value| {
        let mut p = common.clone();
        if let (Some(a), Some(b)) = (p.as_object_mut(), extra.as_object()) {
            a.extend(b.clone());
        }
        p
    };

    let (params, mean, sd, q025, q975, samples) = match spec.method {
        Method::Project => {
            let r = project_posterior(&data, model, &kernel, &project)?;
            let params = with(json!({ "T": project.draws, "N": project.adagrad.n_steps, "adagrad": project.adagrad, "grid": project.grid, "theta_hat_l2": r.theta_hat_l2 }));
            (params, r.mean, r.sd, r.q025, r.q975, Samples::Draws(r.samples))
        }
        Method::Approx => {
            let opts = ApproxOptions {
                n_grid: project.adagrad.n_steps,
                adagrad: project.adagrad,
                seed: spec.seed,
                ..ApproxOptions::default()
            };
            let r = approx_posterior(&data, model, &kernel, &opts)?;
            let sd = r.posterior.sd();
            let mean = r.posterior.mean.clone();
            let q025 = mean.iter().zip(&sd).map(|(m, s)| m - Z975 * s).collect();
            let q975 = mean.iter().zip(&sd).map(|(m, s)| m + Z975 * s).collect();
            let params = with(json!({ "N": opts.n_grid, "quad_N": opts.quad_n, "adagrad": opts.adagrad, "report": r.to_json() }));
            (params, mean, sd, q025, q975, Samples::None)
        }
        Method::Ko => {
            let cfg = KoConfig::default();
            let chain = ko_mcmc(&data, model, &cfg, spec.seed)?;
            let s = summarize(&chain.theta);
            let psi = if chain.psi.is_empty() {
                serde_json::Value::Null
            } else {
                let mut sorted = chain.psi.clone();
                sorted.sort_by(f64::total_cmp);
                json!({ "median": quantile_sorted(&sorted, 0.5) })
            };
            let params = with(json!({ "ko": cfg, "acceptance": chain.acceptance, "low_acceptance": chain.low_acceptance, "psi_posterior": psi }));
            (params, s.mean, s.sd, s.q025, s.q975, Samples::Draws(chain.theta))
        }
        Method::KoExact => {
            let cfg = KoConfig::map_default();
            let (_, psi) = map_theta_psi(&data, model, &cfg, spec.seed)?;
            let resolution = if model.theta_dim() == 1 { 2001 } else { 801 };
            let d = ko_exact_density(&data, model, psi, resolution, &cfg)?;
            let (q025, q975): (Vec<f64>, Vec<f64>) = (0..d.axes.len()).map(|k| marginal_quantiles(&d, k)).unzip();
            let params = with(json!({ "ko": cfg, "psi_hat": psi, "resolution": resolution, "integral": d.integral, "cov": d.cov }));
            (params, d.mean.clone(), d.sd.clone(), q025, q975, Samples::Density(d))
        }
        Method::L2 => {
            let ridge = RidgeOptions::from_spec(&kernel);
            let (theta, krr) = l2_estimate(&data, model, &ridge, &project.adagrad, spec.seed)?;
            let q = theta.len();
            let params = with(json!({ "N": project.adagrad.n_steps, "adagrad": project.adagrad, "lambda": krr.lambda() }));
            (params, theta.clone(), vec![0.0; q], theta.clone(), theta.clone(), Samples::Draws(vec![theta]))
        }
    };
    Ok(BenchOutput {
        table: SummaryTable {
            method: spec.method.label().to_string(),
            config: spec.config.number(),
            params,
            mean,
            sd,
            q025,
            q975,
            runtime_s: started.elapsed().as_secs_f64(),
        },
        samples,
        data,
    })
}

fn theta_header(q: usize) -> Vec<String> {
    (1..=q).map(|k| format!("theta{k}")).collect()
}

/// Writes θ draws as CSV with header `theta1,…,thetaq`.
pub fn write_samples_csv(samples: &[Vec<f64>], path: &Path) -> Result<()> {
    let q = samples.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(theta_header(q))?;
    for s in samples {
        w.write_record(s.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a density table as CSV with header `theta1,…,thetaq,density`.
pub fn write_density_csv(d: &KoDensity, path: &Path) -> Result<()> {
    let q = d.axes.len();
    let m = d.axes.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = theta_header(q);
    header.push("density".into());
    w.write_record(&header)?;
    for (flat, v) in d.density.iter().enumerate() {
        let mut row: Vec<String> = Vec::with_capacity(q + 1);
        let mut rest = flat;
        let mut idx = vec![0; q];
        for k in (0..q).rev() {
            idx[k] = rest % m;
            rest /= m;
        }
        row.extend(d.axes.iter().zip(&idx).map(|(axis, &i)| axis[i].to_string()));
        row.push(v.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_artifacts(out: &BenchOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&out.table)?)?;
    let samples = dir.join("samples.csv");
    match &out.samples {
        Samples::Draws(d) => write_samples_csv(d, &samples)?,
        Samples::Density(d) => write_density_csv(d, &samples)?,
        Samples::None => write_samples_csv(&[], &samples)?,
    }
    out.data.write_csv(dir.join("data.csv"))?;
    Ok(())
}

const STATS: [&str; 4] = ["mean", "sd", "q025", "q975"];

fn report_rows(tables: &[SummaryTable]) -> (Vec<String>, Vec<Vec<String>>) {
    let q = tables.iter().map(|t| t.mean.len()).max().unwrap_or(0);
    let mut header = vec!["method".to_string(), "config".to_string()];
    for stat in STATS {
        for k in 1..=q {
            header.push(format!("{stat} θ{k}"));
        }
    }
    header.push("runtime_s".into());
    let rows = tables
        .iter()
        .map(|t| {
            let mut row = vec![t.method.clone(), t.config.to_string()];
            for col in [&t.mean, &t.sd, &t.q025, &t.q975] {
                for k in 0..q {
                    row.push(col.get(k).map_or(String::new(), |v| format!("{v:.4}")));
                }
            }
            row.push(format!("{:.3}", t.runtime_s));
            row
        })
        .collect();
    (header, rows)
}

/// Writes a side-by-side comparison, one row per table: CSV when the path
/// ends in `.csv`, Markdown otherwise.
pub fn emit_report(tables: &[SummaryTable], path: &Path) -> Result<()> {
    let (header, rows) = report_rows(tables);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&header)?;
        for row in &rows {
            w.write_record(row)?;
        }
        w.flush()?;
        return Ok(());
    }
    let mut f = fs::File::create(path)?;
    writeln!(f, "| {} |", header.join(" | "))?;
    writeln!(f, "|{}", " --- |".repeat(header.len()))?;
    for row in &rows {
        writeln!(f, "| {} |", row.join(" | "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_layouts() {
        let d3 = generate_data(ConfigId::Three, 1).unwrap();
        assert_eq!(d3.len(), 17);
        assert_eq!(d3.design().point(0), &[0.0]);
        assert!((d3.design().point(16)[0] - 0.8).abs() < 1e-15);
        assert_eq!(d3.sigma(), 0.02);
        let d2 = generate_data(ConfigId::Two, 1).unwrap();
        assert_eq!(d2.len(), 30);
        let xs: Vec<f64> = d2.design().iter().map(|x| x[0]).collect();
        let gaps: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|g| (g - gaps[0]).abs() < 1e-12));
        let a = generate_data(ConfigId::One, 1).unwrap();
        let b = generate_data(ConfigId::One, 2).unwrap();
        assert_eq!((a.len(), b.len()), (50, 50));
        assert_ne!(a.design().coords(), b.design().coords());
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_data(ConfigId::One, 4).unwrap();
        let b = generate_data(ConfigId::One, 4).unwrap();
        assert_eq!(a.response(), b.response());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
        }
        assert!("ogp".parse::<Method>().is_err());
    }

    #[test]
    fn overrides_are_checked() {
        let mut spec = BenchSpec::new(3, Method::L2, 1).unwrap();
        spec.overrides.sigma = Some(-1.0);
        assert!(run_bench(&spec, None).is_err());
        assert!(BenchSpec::new(4, Method::L2, 1).is_err());
    }

    #[test]
    fn errors_carry_the_method_label() {
        let mut spec = BenchSpec::new(3, Method::Approx, 1).unwrap();
        spec.overrides.n_steps = Some(5);
        let err = run_bench(&spec, None).unwrap_err();
        assert!(err.to_string().contains("approx"), "{err}");
    }

    #[test]
    fn exact_quantiles_of_a_uniform_density() {
        let axis: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let d = KoDensity {
            axes: vec![axis],
            density: vec![1.0; 101],
            mean: vec![0.5],
            sd: vec![0.0],
            cov: vec![vec![0.0]],
            integral: 1.0,
        };
        let (lo, hi) = marginal_quantiles(&d, 0);
        assert!((lo - 0.025).abs() < 1e-12 && (hi - 0.975).abs() < 1e-12);
    }
}

//! Projected calibration: the discretized L2 loss, its deterministic minimizer,
//! the modified AdaGrad iteration, the L2 point estimate and the posterior
//! sampling driver.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::DesignGrid;
use crate::error::{Error, Result};
use crate::gp::{default_lambda, ridge_roughness, GpPosterior, KernelRidge, PhysicalDataset, Predictor};
use crate::kernels::KernelSpec;
use crate::model::ComputerModel;
use crate::optim::{minimize_box, MinimizeOptions};
use crate::rng::{stream_rng, Purpose};

/// Tuning of the modified AdaGrad iteration.
///
/// The step for coordinate k at iteration t is
/// `a0·(b0 + Σ_{j<t} g_jk²)^-(1/2+eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdaGradConfig {
    pub a0: f64,
    pub b0: f64,
    pub eps: f64,
    /// Number of iterations, which is also the number of discretization points.
    pub n_steps: usize,
    pub max_halvings: u32,
    pub n_starts: usize,
}

impl Default for AdaGradConfig {
    fn default() -> Self {
        Self {
            a0: 0.1,
            b0: 1.0,
            eps: 0.1,
            n_steps: 2000,
            max_halvings: 60,
            n_starts: 5,
        }
    }
}

impl AdaGradConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.a0 > 0.0) {
            return bad(format!("a0 must be positive, got {}", self.a0));
        }
        if !(self.b0 > 0.0) {
            return bad(format!("b0 must be positive, got {}", self.b0));
        }
        if !(self.eps > 0.0 && self.eps <= 0.5) {
            return bad(format!("eps must lie in (0, 1/2], got {}", self.eps));
        }
        if self.n_steps == 0 {
            return bad("n_steps must be at least 1".into());
        }
        if self.n_starts == 0 {
            return bad("n_starts must be at least 1".into());
        }
        Ok(())
    }

    /// Step size for accumulated squared gradient `acc`.
    pub fn step_size(&self, acc: f64) -> f64 {
        self.a0 * (self.b0 + acc).powf(-(0.5 + self.eps))
    }
}

/// Values of one realization of η at a fixed ordered point set.
#[derive(Debug, Clone, Copy)]
pub struct EtaRealization<'a> {
    points: &'a DesignGrid,
    values: &'a [f64],
}

impl<'a> EtaRealization<'a> {
    pub fn new(points: &'a DesignGrid, values: &'a [f64]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("realization needs at least one point".into()));
        }
        if points.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: values.len(),
            });
        }
        Ok(Self { points, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn points(&self) -> &DesignGrid {
        self.points
    }

    pub fn values(&self) -> &[f64] {
        self.values
    }
}

/// `(1/N) Σ_j [y^s(x_j, θ) − η(x_j)]²`.
pub fn discretized_loss(model: &dyn ComputerModel, eta: &EtaRealization, theta: &[f64]) -> f64 {
    eta.points
        .iter()
        .zip(eta.values)
        .map(|(x, v)| {
            let r = model.eval(x, theta) - v;
            r * r
        })
        .sum::<f64>()
        / eta.len() as f64
}

fn discretized_loss_and_grad(model: &dyn ComputerModel, eta: &EtaRealization, theta: &[f64], grad: &mut [f64]) -> f64 {
    let q = theta.len();
    let mut dy = vec![0.0; q];
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for (x, v) in eta.points.iter().zip(eta.values) {
        let r = model.eval(x, theta) - v;
        model.grad_theta(x, theta, &mut dy);
        loss += r * r;
        for k in 0..q {
            grad[k] += 2.0 * r * dy[k];
        }
    }
    let n = eta.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    loss / n
}

/// Deterministic minimizer of the discretized loss by projected BFGS from
/// every start; returns the best local minimum found.
pub fn discretized_loss_argmin(model: &dyn ComputerModel, eta: &EtaRealization, starts: &[Vec<f64>]) -> Result<Vec<f64>> {
    let theta_box = model.theta_box();
    let opts = MinimizeOptions::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        if start.len() != theta_box.dim() {
            return Err(Error::DimensionMismatch {
                expected: theta_box.dim(),
                got: start.len(),
            });
        }
        let m = minimize_box(|t, g| discretized_loss_and_grad(model, eta, t, g), start, theta_box, &opts);
        if m.value.is_finite() && best.as_ref().is_none_or(|(v, _)| m.value < *v) {
            best = Some((m.value, m.x));
        }
    }
    best.map(|(_, x)| x)
        .ok_or_else(|| Error::OracleNotConverged(format!("no finite local minimum from {} starts", starts.len())))
}

/// A single run of the modified AdaGrad iteration from `start`, consuming the
/// points of `eta` in order. Returns the last iterate.
pub fn adagrad_from(model: &dyn ComputerModel, eta: &EtaRealization, cfg: &AdaGradConfig, start: &[f64]) -> Vec<f64> {
    let theta_box = model.theta_box();
    let q = theta_box.dim();
    let mut theta = start.to_vec();
    if !theta_box.contains_interior(&theta) {
        theta_box.clamp_interior(&mut theta, 1e-9);
    }
    let mut acc = vec![0.0; q];
    let mut dy = vec![0.0; q];
    let mut step = vec![0.0; q];
    let mut candidate = vec![0.0; q];
    for (w, v) in eta.points.iter().zip(eta.values) {
        let r = model.eval(w, &theta) - v;
        model.grad_theta(w, &theta, &mut dy);
        for k in 0..q {
            let g = 2.0 * r * dy[k];
            step[k] = cfg.step_size(acc[k]) * g;
            acc[k] += g * g;
        }
        let mut scale = 1.0;
        let mut inside = false;
        for _ in 0..=cfg.max_halvings {
            for k in 0..q {
                candidate[k] = theta[k] - scale * step[k];
            }
            if theta_box.contains_interior(&candidate) {
                inside = true;
                break;
            }
            scale *= 0.5;
        }
        if !inside {
            theta_box.clamp_interior(&mut candidate, 1e-9);
        }
        theta.copy_from_slice(&candidate);
    }
    theta
}

/// Modified AdaGrad from `cfg.n_starts` Latin-hypercube starts on the same
/// realization; returns the end point with the smallest discretized loss.
pub fn adagrad_project<R: Rng + ?Sized>(
    model: &dyn ComputerModel,
    eta: &EtaRealization,
    cfg: &AdaGradConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let starts = model.theta_box().latin_hypercube(cfg.n_starts, rng);
    Ok(adagrad_multistart(model, eta, cfg, &starts))
}

/// Modified AdaGrad from each of `starts`; returns the best end point.
pub fn adagrad_multistart(model: &dyn ComputerModel, eta: &EtaRealization, cfg: &AdaGradConfig, starts: &[Vec<f64>]) -> Vec<f64> {
    starts
        .iter()
        .map(|s| {
            let theta = adagrad_from(model, eta, cfg, s);
            (discretized_loss(model, eta, &theta), theta)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, t)| t)
        .expect("at least one start")
}

/// Kernel ridge settings for the L2 point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RidgeOptions {
    /// Roughness α of the GP; the ridge regression uses `α − p/2`.
    pub alpha: f64,
    pub psi: f64,
    /// Penalty λ; `None` selects `(σ²/τ²)·n^(-2α/(2α+p))`.
    pub lambda: Option<f64>,
    /// τ used in the default penalty.
    pub tau: f64,
}

impl RidgeOptions {
    pub fn from_spec(spec: &KernelSpec) -> Self {
        Self {
            alpha: spec.alpha(),
            psi: spec.psi(),
            lambda: None,
            tau: spec.tau(),
        }
    }

    pub fn lambda_for(&self, data: &PhysicalDataset) -> f64 {
        self.lambda
            .unwrap_or_else(|| default_lambda(data.len(), self.alpha, data.dim(), data.sigma(), self.tau))
    }

    pub fn fit(&self, data: &PhysicalDataset) -> Result<KernelRidge> {
        KernelRidge::fit(data, ridge_roughness(self.alpha, data.dim()), self.psi, self.lambda_for(data))
    }
}

/// The shared discretization points for a given seed.
pub fn discretization_grid(data: &PhysicalDataset, count: usize, seed: u64) -> DesignGrid {
    DesignGrid::uniform(data.omega(), count, &mut stream_rng(seed, Purpose::Grid, 0))
}

/// L2 point estimate: AdaGrad projection of the kernel ridge fit evaluated on
/// the shared discretization grid.
pub fn l2_estimate(
    data: &PhysicalDataset,
    model: &dyn ComputerModel,
    ridge: &RidgeOptions,
    cfg: &AdaGradConfig,
    seed: u64,
) -> Result<(Vec<f64>, KernelRidge)> {
    cfg.validate()?;
    let krr = ridge.fit(data)?;
    let grid = discretization_grid(data, cfg.n_steps, seed);
    let values: Vec<f64> = grid.iter().map(|x| krr.predict(x)).collect();
    let eta = EtaRealization::new(&grid, &values)?;
    let theta = adagrad_project(model, &eta, cfg, &mut stream_rng(seed, Purpose::Starts, 0))?;
    Ok((theta, krr))
}

/// Where the discretization points of each posterior draw come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GridPolicy {
    /// One uniform grid for all draws, drawn from the seed's grid stream.
    #[default]
    Shared,
    /// A fresh uniform grid for every draw (one covariance factorization per draw).
    PerDraw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectOptions {
    pub draws: usize,
    pub adagrad: AdaGradConfig,
    pub seed: u64,
    pub grid: GridPolicy,
    pub lambda: Option<f64>,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        Self {
            draws: 1000,
            adagrad: AdaGradConfig::default(),
            seed: 0,
            grid: GridPolicy::Shared,
            lambda: None,
        }
    }
}

/// Empirical summary of a sample of θ vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(samples: &[Vec<f64>]) -> Summary {
    let q = samples.first().map_or(0, Vec::len);
    let n = samples.len() as f64;
    let mut out = Summary {
        mean: Vec::with_capacity(q),
        sd: Vec::with_capacity(q),
        q025: Vec::with_capacity(q),
        q975: Vec::with_capacity(q),
    };
    for k in 0..q {
        let mut col: Vec<f64> = samples.iter().map(|s| s[k]).collect();
        let mean = col.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        col.sort_by(f64::total_cmp);
        out.mean.push(mean);
        out.sd.push(var.sqrt());
        out.q025.push(quantile_sorted(&col, 0.025));
        out.q975.push(quantile_sorted(&col, 0.975));
    }
    out
}

/// Posterior draws of the L2 projection together with their summary.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationResult {
    pub samples: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
    pub theta_hat_l2: Vec<f64>,
    pub runtime_s: f64,
}

/// Projected posterior: GP posterior draws of η pushed through the AdaGrad
/// projection, plus the L2 point estimate.
pub fn project_posterior(
    data: &PhysicalDataset,
    model: &dyn ComputerModel,
    spec: &KernelSpec,
    opts: &ProjectOptions,
) -> Result<CalibrationResult> {
    let started = Instant::now();
    let cfg = &opts.adagrad;
    cfg.validate()?;
    if opts.draws == 0 {
        return Err(Error::InvalidParameter("need at least one posterior draw".into()));
    }
    if model.omega().dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.omega().dim(),
            got: data.dim(),
        });
    }
    let post = GpPosterior::fit(data, spec)?;
    let one_draw = |grid: &DesignGrid, values: &[f64], rng: &mut rand_chacha::ChaCha8Rng| {
        let eta = EtaRealization::new(grid, values)?;
        adagrad_project(model, &eta, cfg, rng)
    };

    let samples: Vec<Vec<f64>> = match opts.grid {
        GridPolicy::Shared => {
            let grid = discretization_grid(data, cfg.n_steps, opts.seed);
            let sampler = post.path_sampler(&grid)?;
            log::debug!("shared path sampler ready (jitter {:e})", sampler.jitter());
            (0..opts.draws)
                .into_par_iter()
                .map(|t| {
                    let mut rng = stream_rng(opts.seed, Purpose::Draw, t as u64);
                    let values = sampler.sample(&mut rng);
                    one_draw(&grid, &values, &mut rng)
                })
                .collect::<Result<_>>()?
        }
        GridPolicy::PerDraw => (0..opts.draws)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream_rng(opts.seed, Purpose::Draw, t as u64);
                let grid = DesignGrid::uniform(data.omega(), cfg.n_steps, &mut rng);
                let values = post.sample_path(&grid, &mut rng)?;
                one_draw(&grid, &values, &mut rng)
            })
            .collect::<Result<_>>()?,
    };

    let ridge = RidgeOptions {
        lambda: opts.lambda,
        ..RidgeOptions::from_spec(spec)
    };
    let (theta_hat_l2, _) = l2_estimate(data, model, &ridge, cfg, opts.seed)?;
    let summary = summarize(&samples);
    Ok(CalibrationResult {
        samples,
        mean: summary.mean,
        sd: summary.sd,
        q025: summary.q025,
        q975: summary.q975,
        theta_hat_l2,
        runtime_s: started.elapsed().as_secs_f64(),
    })
}

//! Kennedy–O'Hagan calibration with a zero-mean GP discrepancy: log posterior,
//! MAP estimation of the range parameter, random-walk Metropolis and a
//! quadrature reference for low-dimensional Θ.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::gp::PhysicalDataset;
use crate::kernels::{cholesky_jittered, gram, KernelSpec};
use crate::model::ComputerModel;
use crate::optim::{minimize_box, numeric_gradient, MinimizeOptions};
use crate::rng::{stream_rng, Purpose};

/// Prior on the discrepancy range ψ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PsiPrior {
    /// `π(ψ) ∝ ψ^(-a-1) exp(-b/ψ)`.
    InverseGamma { a: f64, b: f64 },
    /// `π(ψ) ∝ (ψ + σ²)^a exp(-b(ψ + σ²))`.
    JointlyRobust { a: f64, b: f64 },
}

impl PsiPrior {
    pub fn inverse_gamma_default() -> Self {
        PsiPrior::InverseGamma { a: 2.0, b: 2.0 }
    }

    pub fn jointly_robust_default() -> Self {
        PsiPrior::JointlyRobust { a: 0.2, b: 1.0 }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        match *self {
            PsiPrior::InverseGamma { a, b } if a > 0.0 && b > 0.0 => Ok(()),
            PsiPrior::JointlyRobust { a, b } if a > -(p as f64 + 1.0) && b > 0.0 => Ok(()),
            other => Err(Error::InvalidParameter(format!("invalid range prior {other:?}"))),
        }
    }

    /// Log density up to a constant.
    pub fn log_density(&self, psi: f64, sigma: f64) -> f64 {
        if !(psi > 0.0) {
            return f64::NEG_INFINITY;
        }
        match *self {
            PsiPrior::InverseGamma { a, b } => -(a + 1.0) * psi.ln() - b / psi,
            PsiPrior::JointlyRobust { a, b } => {
                let s = psi + sigma * sigma;
                a * s.ln() - b * s
            }
        }
    }
}

/// How ψ is handled by the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", content = "value", rename_all = "kebab-case")]
pub enum PsiMode {
    /// Sample log ψ jointly with θ.
    Sample,
    /// Fix ψ at its MAP estimate.
    Map,
    /// Fix ψ at the given value.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KoConfig {
    pub psi_prior: PsiPrior,
    pub psi_mode: PsiMode,
    /// Roughness of the discrepancy kernel.
    pub alpha: f64,
    pub tau: f64,
    pub burn_in: usize,
    pub n_samples: usize,
    pub thin: usize,
    /// Initial per-coordinate random-walk sd (θ coordinates, then log ψ when sampled).
    pub proposal_scale: Option<Vec<f64>>,
}

impl Default for KoConfig {
    fn default() -> Self {
        Self {
            psi_prior: PsiPrior::inverse_gamma_default(),
            psi_mode: PsiMode::Sample,
            alpha: 2.5,
            tau: 1.0,
            burn_in: 1000,
            n_samples: 1000,
            thin: 10,
            proposal_scale: None,
        }
    }
}

impl KoConfig {
    /// MAP-ψ configuration with the jointly robust prior.
    pub fn map_default() -> Self {
        Self {
            psi_prior: PsiPrior::jointly_robust_default(),
            psi_mode: PsiMode::Map,
            ..Self::default()
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        self.psi_prior.validate(p)?;
        if self.n_samples == 0 || self.thin == 0 {
            return Err(Error::InvalidParameter("n_samples and thin must be at least 1".into()));
        }
        if let PsiMode::Fixed(psi) = self.psi_mode {
            if !(psi > 0.0) {
                return Err(Error::InvalidParameter(format!("fixed psi must be positive, got {psi}")));
            }
        }
        KernelSpec::new(self.alpha, 1.0, self.tau)?;
        Ok(())
    }

    fn spec(&self, psi: f64) -> Result<KernelSpec> {
        KernelSpec::new(self.alpha, psi, self.tau)
    }
}

fn residuals(data: &PhysicalDataset, model: &dyn ComputerModel, theta: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        data.len(),
        data.design()
            .iter()
            .zip(data.response())
            .map(|(x, y)| y - model.eval(x, theta)),
    )
}

/// `log π(θ) + log π(ψ) − ½ log det C − ½ rᵀC⁻¹r` with `C = τ²Ψ_ψ + σ²I`,
/// `r = y − y^s(X, θ)` and a uniform prior on Θ.
pub fn ko_log_posterior(
    data: &PhysicalDataset,
    model: &dyn ComputerModel,
    theta: &[f64],
    psi: f64,
    cfg: &KoConfig,
) -> Result<f64> {
    if !model.theta_box().contains(theta) || !(psi > 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let fixed = FixedPsi::new(data, cfg, psi)?;
    Ok(fixed.log_posterior(data, model, theta) + cfg.psi_prior.log_density(psi, data.sigma()))
}

/// Factorized covariance at a fixed ψ, reused across θ evaluations.
#[derive(Debug, Clone)]
pub struct FixedPsi {
    l: DMatrix<f64>,
    half_logdet: f64,
}

impl FixedPsi {
    pub fn new(data: &PhysicalDataset, cfg: &KoConfig, psi: f64) -> Result<Self> {
        let c = gram(data.design(), &cfg.spec(psi)?, data.sigma() * data.sigma());
        let chol = cholesky_jittered(&c)?;
        let l = chol.factor.l();
        let half_logdet = l.diagonal().iter().map(|d| d.ln()).sum();
        Ok(Self { l, half_logdet })
    }

    /// Log posterior of θ at this ψ, without the ψ prior.
    pub fn log_posterior(&self, data: &PhysicalDataset, model: &dyn ComputerModel, theta: &[f64]) -> f64 {
        if !model.theta_box().contains(theta) {
            return f64::NEG_INFINITY;
        }
        let r = residuals(data, model, theta);
        let z = self.l.solve_lower_triangular(&r).expect("triangular factor is nonsingular");
        -self.half_logdet - 0.5 * z.norm_squared()
    }
}

fn log_psi_bounds(omega: &BoxDomain) -> (f64, f64) {
    let d = omega.diameter();
    ((0.01 * d).ln(), (10.0 * d).ln())
}

/// Joint MAP of (θ, ψ) under the jointly robust prior; returns `(θ̂, ψ̂)`.
pub fn map_theta_psi(data: &PhysicalDataset, model: &dyn ComputerModel, cfg: &KoConfig, seed: u64) -> Result<(Vec<f64>, f64)> {
    if !matches!(cfg.psi_prior, PsiPrior::JointlyRobust { .. }) {
        return Err(Error::Unsupported(
            "MAP estimation of the range needs the jointly robust prior".into(),
        ));
    }
    cfg.validate(data.dim())?;
    let theta_box = model.theta_box();
    let q = theta_box.dim();
    let (lo, hi) = log_psi_bounds(data.omega());
    let mut lower = theta_box.lower().to_vec();
    let mut upper = theta_box.upper().to_vec();
    lower.push(lo);
    upper.push(hi);
    let bounds = BoxDomain::new(lower, upper)?;
    let objective = |z: &[f64]| -> f64 {
        match ko_log_posterior(data, model, &z[..q], z[q].exp(), cfg) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    };
    let steps: Vec<f64> = (0..=q).map(|k| 1e-6 * bounds.width(k)).collect();
    let starts = bounds.latin_hypercube(10, &mut stream_rng(seed, Purpose::Starts, 1));
    let opts = MinimizeOptions {
        max_iter: 300,
        grad_tol: 1e-7,
        step_tol: 1e-10,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in &starts {
        // Keep finite-difference stencils inside the box.
        let inner = BoxDomain::new(
            (0..=q).map(|k| bounds.lower()[k] + steps[k]).collect(),
            (0..=q).map(|k| bounds.upper()[k] - steps[k]).collect(),
        )?;
        let m = minimize_box(
            |z, g| {
                numeric_gradient(&objective, z, &steps, g);
                objective(z)
            },
            start,
            &inner,
            &opts,
        );
        if m.value.is_finite() && best.as_ref().is_none_or(|(v, _)| m.value < *v) {
            best = Some((m.value, m.x));
        }
    }
    match best {
        Some((_, z)) => Ok((z[..q].to_vec(), z[q].exp())),
        None => Err(Error::MapFailed {
            best: f64::NEG_INFINITY,
            at: starts.first().cloned().unwrap_or_default(),
        }),
    }
}

/// MAP estimate of the range parameter ψ.
pub fn map_psi(data: &PhysicalDataset, model: &dyn ComputerModel, cfg: &KoConfig, seed: u64) -> Result<f64> {
    map_theta_psi(data, model, cfg, seed).map(|(_, psi)| psi)
}

/// Output of the Metropolis sampler.
#[derive(Debug, Clone, Serialize)]
pub struct KoChain {
    pub theta: Vec<Vec<f64>>,
    /// ψ draws when ψ is sampled, otherwise empty.
    pub psi: Vec<f64>,
    /// ψ used throughout when it is fixed.
    pub psi_fixed: Option<f64>,
    pub acceptance: f64,
    pub low_acceptance: bool,
    pub proposal_scale: Vec<f64>,
    pub runtime_s: f64,
}

const TARGET_ACCEPTANCE: f64 = 0.25;

/// Gaussian random-walk Metropolis on θ (and log ψ when sampled). Proposal
/// scales adapt during burn-in only and are frozen afterwards.
pub fn ko_mcmc(data: &PhysicalDataset, model: &dyn ComputerModel, cfg: &KoConfig, seed: u64) -> Result<KoChain> {
    let started = Instant::now();
    cfg.validate(data.dim())?;
    let theta_box = model.theta_box();
    let q = theta_box.dim();
    let mut rng = stream_rng(seed, Purpose::Chain, 0);

    let (psi_fixed, map_theta) = match cfg.psi_mode {
        PsiMode::Sample => (None, None),
        PsiMode::Map => {
            let (t, p) = map_theta_psi(data, model, cfg, seed)?;
            (Some(p), Some(t))
        }
        PsiMode::Fixed(p) => (Some(p), None),
    };
    let sample_psi = psi_fixed.is_none();
    let dim = q + usize::from(sample_psi);
    let fixed = psi_fixed.map(|p| FixedPsi::new(data, cfg, p)).transpose()?;
    let (lpsi_lo, lpsi_hi) = log_psi_bounds(data.omega());

    let log_target = |z: &[f64]| -> f64 {
        match &fixed {
            Some(f) => f.log_posterior(data, model, &z[..q]),
            None => {
                let psi = z[q].exp();
                // Density of log ψ carries the Jacobian ψ.
                ko_log_posterior(data, model, &z[..q], psi, cfg).unwrap_or(f64::NEG_INFINITY) + z[q]
            }
        }
    };

    // Start from the best of a Latin hypercube over the support.
    let mut state = match map_theta {
        Some(t) => t,
        None => {
            let mut init_box_lo = theta_box.lower().to_vec();
            let mut init_box_hi = theta_box.upper().to_vec();
            if sample_psi {
                init_box_lo.push(lpsi_lo);
                init_box_hi.push(lpsi_hi);
            }
            let init = BoxDomain::new(init_box_lo, init_box_hi)?;
            init.latin_hypercube(200, &mut rng)
                .into_iter()
                .map(|z| (log_target(&z), z))
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, z)| z)
                .expect("non-empty start set")
        }
    };
    let mut current = log_target(&state);

    let mut base: Vec<f64> = match &cfg.proposal_scale {
        Some(s) if s.len() == dim => s.clone(),
        Some(s) => {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.len(),
            })
        }
        None => (0..dim)
            .map(|k| if k < q { 0.05 * theta_box.width(k) } else { 0.3 })
            .collect(),
    };
    let mut log_factor = 0.0f64;
    let mut running_mean = state.clone();
    let mut running_m2 = vec![0.0; dim];
    let mut proposal = vec![0.0; dim];

    let total = cfg.burn_in + cfg.n_samples * cfg.thin;
    let mut theta_out = Vec::with_capacity(cfg.n_samples);
    let mut psi_out = Vec::new();
    let mut accepted_after = 0usize;
    for iter in 0..total {
        let factor = log_factor.exp();
        for k in 0..dim {
            proposal[k] = state[k] + factor * base[k] * rng.sample::<f64, _>(StandardNormal);
        }
        let in_support = theta_box.contains(&proposal[..q])
            && (!sample_psi || (lpsi_lo..=lpsi_hi).contains(&proposal[q]));
        let mut accept = false;
        if in_support {
            let cand = log_target(&proposal);
            if cand.is_finite() && rng.random::<f64>().ln() < cand - current {
                state.copy_from_slice(&proposal);
                current = cand;
                accept = true;
            }
        }
        if iter < cfg.burn_in {
            let i = iter as f64 + 1.0;
            log_factor += (f64::from(u8::from(accept)) - TARGET_ACCEPTANCE) / i.powf(0.6);
            for k in 0..dim {
                let delta = state[k] - running_mean[k];
                running_mean[k] += delta / (i + 1.0);
                running_m2[k] += delta * (state[k] - running_mean[k]);
            }
            if (iter + 1) % 100 == 0 && iter + 1 >= 200 {
                for k in 0..dim {
                    let sd = (running_m2[k] / (i + 1.0)).sqrt();
                    if sd > 0.0 {
                        base[k] = 2.38 / (dim as f64).sqrt() * sd;
                        log_factor = 0.0;
                    }
                }
            }
        } else {
            accepted_after += usize::from(accept);
            if (iter - cfg.burn_in + 1).is_multiple_of(cfg.thin) {
                theta_out.push(state[..q].to_vec());
                if sample_psi {
                    psi_out.push(state[q].exp());
                }
            }
        }
    }
    let acceptance = accepted_after as f64 / (cfg.n_samples * cfg.thin) as f64;
    let low_acceptance = acceptance < 0.01;
    if low_acceptance {
        log::warn!("Metropolis acceptance rate {acceptance:.4} is below 0.01");
    }
    let factor = log_factor.exp();
    Ok(KoChain {
        theta: theta_out,
        psi: psi_out,
        psi_fixed,
        acceptance,
        low_acceptance,
        proposal_scale: base.iter().map(|b| b * factor).collect(),
        runtime_s: started.elapsed().as_secs_f64(),
    })
}

/// Batch-means Monte-Carlo standard error of the mean of `xs`.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (var / batches as f64).sqrt()
}

/// Normalized posterior density of θ on a tensor grid, at fixed ψ.
#[derive(Debug, Clone, Serialize)]
pub struct KoDensity {
    /// Grid coordinates along each θ axis.
    pub axes: Vec<Vec<f64>>,
    /// Density values, first axis varying slowest.
    pub density: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    /// Simpson integral of the returned table (1 up to rounding).
    pub integral: f64,
}

fn simpson_weights(m: usize, h: f64) -> Vec<f64> {
    (0..m)
        .map(|i| {
            let w = if i == 0 || i == m - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect()
}

/// Tensor Simpson quadrature of the KO posterior of θ at ψ = `psi` for q ≤ 2.
/// `resolution` points per axis (rounded up to an odd number).
pub fn ko_exact_density(
    data: &PhysicalDataset,
    model: &dyn ComputerModel,
    psi: f64,
    resolution: usize,
    cfg: &KoConfig,
) -> Result<KoDensity> {
    let theta_box = model.theta_box();
    let q = theta_box.dim();
    if q > 2 {
        return Err(Error::Unsupported(format!(
            "quadrature reference needs at most two parameters, got {q}"
        )));
    }
    let m = (resolution.max(3)) | 1;
    let fixed = FixedPsi::new(data, cfg, psi)?;
    let axes: Vec<Vec<f64>> = (0..q)
        .map(|k| {
            (0..m)
                .map(|i| theta_box.lower()[k] + theta_box.width(k) * i as f64 / (m - 1) as f64)
                .collect()
        })
        .collect();
    let weights: Vec<Vec<f64>> = (0..q)
        .map(|k| simpson_weights(m, theta_box.width(k) / (m - 1) as f64))
        .collect();
    let total = m.pow(q as u32);
    let point = |flat: usize| -> (Vec<f64>, f64) {
        let mut theta = vec![0.0; q];
        let mut w = 1.0;
        let mut rest = flat;
        for k in (0..q).rev() {
            let i = rest % m;
            rest /= m;
            theta[k] = axes[k][i];
            w *= weights[k][i];
        }
        (theta, w)
    };
    use rayon::prelude::*;
    let log_density: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|flat| fixed.log_posterior(data, model, &point(flat).0))
        .collect();
    let peak = log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::OracleNotConverged("posterior density vanishes on the whole grid".into()));
    }
    let mut density: Vec<f64> = log_density.iter().map(|l| (l - peak).exp()).collect();
    let z: f64 = (0..total).map(|f| point(f).1 * density[f]).sum();
    density.iter_mut().for_each(|d| *d /= z);

    let mut mean = vec![0.0; q];
    let mut integral = 0.0;
    for (f, d) in density.iter().enumerate() {
        let (theta, w) = point(f);
        integral += w * d;
        for k in 0..q {
            mean[k] += w * d * theta[k];
        }
    }
    let mut cov = vec![vec![0.0; q]; q];
    for (f, d) in density.iter().enumerate() {
        let (theta, w) = point(f);
        for j in 0..q {
            for k in 0..q {
                cov[j][k] += w * d * (theta[j] - mean[j]) * (theta[k] - mean[k]);
            }
        }
    }
    let sd = (0..q).map(|k| cov[k][k].max(0.0).sqrt()).collect();
    Ok(KoDensity {
        axes,
        density,
        mean,
        sd,
        cov,
        integral,
    })
}

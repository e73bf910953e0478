//! Approximate projected calibration and the sandwich (BvM) covariance.
//!
//! Integrals over Ω use Latin-hypercube points: every point is marginally
//! uniform, and the stratification removes most of the Monte-Carlo noise.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::calibrate::{discretization_grid, l2_estimate, AdaGradConfig, RidgeOptions};
use crate::domain::{BoxDomain, DesignGrid};
use crate::error::{Error, Result};
use crate::gp::{GpPosterior, PhysicalDataset, Predictor};
use crate::kernels::{cross_covariance, euclidean, KernelSpec};
use crate::model::{hessian_theta, ComputerModel};
use crate::rng::{stream_rng, Purpose};

/// Largest discretization grid for which the N×N covariance is formed.
pub const MAX_APPROX_GRID: usize = 20000;

fn quadrature_points(omega: &BoxDomain, count: usize, seed: u64) -> Vec<Vec<f64>> {
    omega.latin_hypercube(count, &mut stream_rng(seed, Purpose::Quadrature, 0))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `∫_Ω ∂²/∂θ∂θᵀ [η(x) − y^s(x,θ)]² dx` by quadrature on `quad_n` points.
/// Fails unless the result is positive definite.
pub fn hessian_v(
    model: &dyn ComputerModel,
    eta: &dyn Predictor,
    theta: &[f64],
    quad_n: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let q = model.theta_dim();
    let omega = model.omega();
    let mut dy = vec![0.0; q];
    let mut h = vec![0.0; q * q];
    let mut v = DMatrix::zeros(q, q);
    for x in quadrature_points(omega, quad_n, seed) {
        model.grad_theta(&x, theta, &mut dy);
        hessian_theta(model, &x, theta, &mut h);
        let r = eta.predict(&x) - model.eval(&x, theta);
        for j in 0..q {
            for k in 0..q {
                v[(j, k)] += 2.0 * dy[j] * dy[k] - 2.0 * r * h[j * q + k];
            }
        }
    }
    v *= omega.volume() / quad_n as f64;
    symmetrize(&mut v);
    if v.clone().cholesky().is_none() {
        return Err(Error::HessianNotPositiveDefinite { theta: theta.to_vec() });
    }
    Ok(v)
}

/// `∫_Ω (∂y^s/∂θ)(∂y^s/∂θ)ᵀ dx` by quadrature on `quad_n` points.
pub fn matrix_w(model: &dyn ComputerModel, theta: &[f64], quad_n: usize, seed: u64) -> DMatrix<f64> {
    let q = model.theta_dim();
    let omega = model.omega();
    let mut dy = vec![0.0; q];
    let mut w = DMatrix::zeros(q, q);
    for x in quadrature_points(omega, quad_n, seed) {
        model.grad_theta(&x, theta, &mut dy);
        for j in 0..q {
            for k in 0..q {
                w[(j, k)] += dy[j] * dy[k];
            }
        }
    }
    w *= omega.volume() / quad_n as f64;
    symmetrize(&mut w);
    w
}

/// `4σ² V⁻¹ W V⁻¹`.
pub fn bvm_covariance(v: &DMatrix<f64>, w: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    let vinv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("Hessian V is singular".into()))?;
    let mut c = &vinv * w * &vinv * (4.0 * sigma * sigma);
    symmetrize(&mut c);
    Ok(c)
}

/// V, W and the limiting covariance `4σ²V⁻¹WV⁻¹` (of √n(θ − θ*)).
#[derive(Debug, Clone)]
pub struct SandwichPieces {
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub bvm_cov: DMatrix<f64>,
}

pub fn sandwich(
    model: &dyn ComputerModel,
    eta: &dyn Predictor,
    theta: &[f64],
    sigma: f64,
    quad_n: usize,
    seed: u64,
) -> Result<SandwichPieces> {
    let v = hessian_v(model, eta, theta, quad_n, seed)?;
    let w = matrix_w(model, theta, quad_n, seed);
    let bvm_cov = bvm_covariance(&v, &w, sigma)?;
    Ok(SandwichPieces { v, w, bvm_cov })
}

/// Gaussian approximation to the projected posterior.
#[derive(Debug, Clone)]
pub struct ApproxPosterior {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    /// The mean lies outside Θ; it is reported unclamped.
    pub outside_box: bool,
    pub warnings: Vec<String>,
}

impl ApproxPosterior {
    pub fn sd(&self) -> Vec<f64> {
        self.cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Linearization of the projection around `theta_hat` on `grid`:
/// mean `θ̂ + (2|Ω|/N) Σ_j [η̃ − η̂](x_j) V⁻¹∂y^s(x_j)`, covariance
/// `(4|Ω|²/N²) Σ_ij V⁻¹∂y^s(x_i) Ψ̃(x_i, x_j) ∂y^s(x_j)ᵀV⁻¹`.
pub fn approx_posterior_on(
    post: &GpPosterior,
    model: &dyn ComputerModel,
    theta_hat: &[f64],
    eta_hat: &dyn Predictor,
    v: &DMatrix<f64>,
    grid: &DesignGrid,
) -> Result<ApproxPosterior> {
    let n_grid = grid.len();
    if n_grid < 10 {
        return Err(Error::InvalidParameter(format!("approximation grid needs at least 10 points, got {n_grid}")));
    }
    if n_grid > MAX_APPROX_GRID {
        return Err(Error::GridTooLarge {
            size: n_grid,
            limit: MAX_APPROX_GRID,
        });
    }
    grid.check_within(post.omega())?;
    let q = model.theta_dim();
    let vinv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::HessianNotPositiveDefinite { theta: theta_hat.to_vec() })?;
    let vol = post.omega().volume();

    // Rows a_j = V⁻¹ ∂y^s(x_j, θ̂) · |Ω|/N.
    let scale = vol / n_grid as f64;
    let mut a = DMatrix::zeros(n_grid, q);
    let mut dy = DVector::zeros(q);
    let mut mean = DVector::from_column_slice(theta_hat);
    for (j, x) in grid.iter().enumerate() {
        model.grad_theta(x, theta_hat, dy.as_mut_slice());
        let aj = &vinv * &dy * scale;
        a.row_mut(j).copy_from(&aj.transpose());
        let diff = post.predict(x) - eta_hat.predict(x);
        mean += &aj * (2.0 * diff);
    }

    // Aᵀ Ψ̃ A = Aᵀ K A − (L⁻¹ K_xg A)ᵀ (L⁻¹ K_xg A), with K streamed row by row.
    let spec = post.spec();
    let mut cov = DMatrix::<f64>::zeros(q, q);
    let mut krow = DVector::zeros(n_grid);
    for (i, xi) in grid.iter().enumerate() {
        for (j, xj) in grid.iter().enumerate() {
            krow[j] = spec.covariance(euclidean(xi, xj));
        }
        let ka = a.tr_mul(&krow);
        for r in 0..q {
            for c in 0..q {
                cov[(r, c)] += a[(i, r)] * ka[c];
            }
        }
    }
    if let Some(l) = post.cholesky_factor() {
        let kxa = cross_covariance(post.design(), grid, spec) * &a;
        let whitened = l.solve_lower_triangular(&kxa).expect("triangular factor is nonsingular");
        cov -= whitened.tr_mul(&whitened);
    }
    cov *= 4.0;
    symmetrize(&mut cov);

    let mean: Vec<f64> = mean.iter().copied().collect();
    Ok(ApproxPosterior {
        outside_box: !model.theta_box().contains(&mean),
        mean,
        cov,
        warnings: Vec::new(),
    })
}

/// Settings of the approximate projected calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApproxOptions {
    /// Discretization points N.
    pub n_grid: usize,
    /// Quadrature points for V and W.
    pub quad_n: usize,
    /// AdaGrad settings for the L2 point estimate.
    pub adagrad: AdaGradConfig,
    pub seed: u64,
    pub lambda: Option<f64>,
}

impl Default for ApproxOptions {
    fn default() -> Self {
        Self {
            n_grid: 2000,
            quad_n: 200_000,
            adagrad: AdaGradConfig::default(),
            seed: 0,
            lambda: None,
        }
    }
}

/// Full approximate calibration: L2 estimate, V at that estimate, the
/// Gaussian approximation and the BvM covariance.
#[derive(Debug, Clone)]
pub struct ApproxReport {
    pub posterior: ApproxPosterior,
    pub theta_hat_l2: Vec<f64>,
    pub sandwich: SandwichPieces,
    /// `bvm_cov / n`, the scale comparable with the posterior covariance.
    pub bvm_cov_over_n: DMatrix<f64>,
    pub runtime_s: f64,
}

#[derive(Serialize)]
struct ApproxJson<'a> {
    mean: &'a [f64],
    sd: Vec<f64>,
    cov: Vec<Vec<f64>>,
    bvm_cov: Vec<Vec<f64>>,
    bvm_cov_over_n: Vec<Vec<f64>>,
    theta_hat_l2: &'a [f64],
    outside_box: bool,
    warnings: &'a [String],
    runtime_s: f64,
}

impl ApproxReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ApproxJson {
            mean: &self.posterior.mean,
            sd: self.posterior.sd(),
            cov: matrix_rows(&self.posterior.cov),
            bvm_cov: matrix_rows(&self.sandwich.bvm_cov),
            bvm_cov_over_n: matrix_rows(&self.bvm_cov_over_n),
            theta_hat_l2: &self.theta_hat_l2,
            outside_box: self.posterior.outside_box,
            warnings: &self.posterior.warnings,
            runtime_s: self.runtime_s,
        })
        .expect("plain data serializes")
    }
}

pub fn approx_posterior(
    data: &PhysicalDataset,
    model: &dyn ComputerModel,
    spec: &KernelSpec,
    opts: &ApproxOptions,
) -> Result<ApproxReport> {
    let started = Instant::now();
    if opts.n_grid > MAX_APPROX_GRID {
        return Err(Error::GridTooLarge {
            size: opts.n_grid,
            limit: MAX_APPROX_GRID,
        });
    }
    let mut warnings = Vec::new();
    if data.len() < 30 {
        let msg = format!(
            "only {} observations: the linear approximation is unreliable below 30",
            data.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let ridge = RidgeOptions {
        lambda: opts.lambda,
        ..RidgeOptions::from_spec(spec)
    };
    let (theta_hat, krr) = l2_estimate(data, model, &ridge, &opts.adagrad, opts.seed)?;
    let sandwich = sandwich(model, &krr, &theta_hat, data.sigma(), opts.quad_n, opts.seed)?;
    let post = GpPosterior::fit(data, spec)?;
    let grid = discretization_grid(data, opts.n_grid, opts.seed);
    let mut posterior = approx_posterior_on(&post, model, &theta_hat, &krr, &sandwich.v, &grid)?;
    posterior.warnings = warnings;
    if posterior.outside_box {
        log::warn!("approximate posterior mean {:?} lies outside the parameter box", posterior.mean);
    }
    let bvm_cov_over_n = &sandwich.bvm_cov / data.len() as f64;
    Ok(ApproxReport {
        posterior,
        theta_hat_l2: theta_hat,
        sandwich,
        bvm_cov_over_n,
        runtime_s: started.elapsed().as_secs_f64(),
    })
}

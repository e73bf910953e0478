//! Gaussian-process posterior for the physical system and kernel ridge regression.
//!
//! The prior has mean zero and covariance `τ²Ψ_α`; centre responses beforehand
//! if that is inappropriate.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::domain::{BoxDomain, DesignGrid};
use crate::error::{Error, Result};
use crate::kernels::{cholesky_jittered, cross_covariance, euclidean, gram, JitteredCholesky, KernelSpec};

/// Something that can be evaluated pointwise on Ω.
pub trait Predictor: Sync {
    fn predict(&self, x: &[f64]) -> f64;
}

impl<F> Predictor for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn predict(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Noisy observations `y_i = η(x_i) + e_i` with `e_i ~ N(0, σ²)`.
#[derive(Debug, Clone)]
pub struct PhysicalDataset {
    design: DesignGrid,
    response: Vec<f64>,
    sigma: f64,
    omega: BoxDomain,
}

impl PhysicalDataset {
    pub fn new(design: DesignGrid, response: Vec<f64>, sigma: f64, omega: BoxDomain) -> Result<Self> {
        if design.is_empty() {
            return Err(Error::InvalidParameter("dataset needs at least one observation".into()));
        }
        if design.len() != response.len() {
            return Err(Error::DimensionMismatch {
                expected: design.len(),
                got: response.len(),
            });
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise sd must be positive, got {sigma}")));
        }
        if let Some(y) = response.iter().find(|y| !y.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite response {y}")));
        }
        design.check_within(&omega)?;
        Ok(Self {
            design,
            response,
            sigma,
            omega,
        })
    }

    pub fn design(&self) -> &DesignGrid {
        &self.design
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn omega(&self) -> &BoxDomain {
        &self.omega
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.design.dim()
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise sd must be positive, got {sigma}")));
        }
        self.sigma = sigma;
        Ok(self)
    }

    /// Reads a CSV with header `x1,…,xp,y`.
    pub fn read_csv(path: impl AsRef<Path>, omega: BoxDomain, sigma: f64) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let p = omega.dim();
        let expected: Vec<String> = (1..=p).map(|k| format!("x{k}")).chain(["y".to_string()]).collect();
        let got: Vec<&str> = headers.iter().map(str::trim).collect();
        if got != expected {
            return Err(Error::Parse(format!("expected header {expected:?}, got {got:?}")));
        }
        let mut coords = Vec::new();
        let mut response = Vec::new();
        for record in reader.records() {
            let record = record?;
            let values = parse_record(&record)?;
            coords.extend_from_slice(&values[..p]);
            response.push(values[p]);
        }
        Self::new(DesignGrid::new(p, coords)?, response, sigma, omega)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.dim()).map(|k| format!("x{k}")).collect();
        header.push("y".into());
        writer.write_record(&header)?;
        for (x, y) in self.design.iter().zip(&self.response) {
            let row: Vec<String> = x.iter().chain(std::iter::once(y)).map(|v| v.to_string()).collect();
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

pub(crate) fn parse_record(record: &csv::StringRecord) -> Result<Vec<f64>> {
    record
        .iter()
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
        })
        .collect()
}

/// Posterior of η under the prior `GP(0, τ²Ψ_α)` given a [`PhysicalDataset`].
#[derive(Debug, Clone)]
pub struct GpPosterior {
    spec: KernelSpec,
    omega: BoxDomain,
    design: DesignGrid,
    /// Factor of `τ²Ψ(X, X) + σ²I`; absent for the prior.
    chol: Option<JitteredCholesky>,
    dual: DVector<f64>,
}

impl GpPosterior {
    pub fn fit(data: &PhysicalDataset, spec: &KernelSpec) -> Result<Self> {
        let k = gram(data.design(), spec, data.sigma() * data.sigma());
        let chol = cholesky_jittered(&k)?;
        let dual = chol.factor.solve(&DVector::from_column_slice(data.response()));
        Ok(Self {
            spec: *spec,
            omega: data.omega().clone(),
            design: data.design().clone(),
            chol: Some(chol),
            dual,
        })
    }

    /// The prior, i.e. the posterior given no data.
    pub fn prior(spec: &KernelSpec, omega: BoxDomain) -> Self {
        Self {
            spec: *spec,
            design: DesignGrid::empty(omega.dim()),
            omega,
            chol: None,
            dual: DVector::zeros(0),
        }
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn omega(&self) -> &BoxDomain {
        &self.omega
    }

    pub fn dual(&self) -> &DVector<f64> {
        &self.dual
    }

    pub fn design(&self) -> &DesignGrid {
        &self.design
    }

    /// The jitter added to the Gram matrix during fitting.
    pub fn jitter(&self) -> f64 {
        self.chol.as_ref().map_or(0.0, |c| c.jitter)
    }

    /// Lower-triangular factor of the (possibly jittered) Gram matrix.
    pub fn cholesky_factor(&self) -> Option<DMatrix<f64>> {
        self.chol.as_ref().map(|c| c.factor.l())
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.omega.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.omega.dim(),
                got: x.len(),
            });
        }
        if !self.omega.contains(x) {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        Ok(())
    }

    fn mean_unchecked(&self, x: &[f64]) -> f64 {
        self.design
            .iter()
            .zip(self.dual.iter())
            .map(|(xi, w)| self.spec.covariance(euclidean(x, xi)) * w)
            .sum()
    }

    /// η̃(x).
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.mean_unchecked(x))
    }

    /// Ψ̃(x, x), floored at zero.
    pub fn predict_var(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let prior = self.spec.covariance(0.0);
        let Some(chol) = &self.chol else {
            return Ok(prior);
        };
        let k = DVector::from_iterator(
            self.design.len(),
            self.design.iter().map(|xi| self.spec.covariance(euclidean(x, xi))),
        );
        let v = chol.factor.l().solve_lower_triangular(&k).expect("triangular factor is nonsingular");
        Ok((prior - v.norm_squared()).max(0.0))
    }

    pub fn mean_on(&self, grid: &DesignGrid) -> Result<Vec<f64>> {
        grid.check_within(&self.omega)?;
        Ok(grid.iter().map(|x| self.mean_unchecked(x)).collect())
    }

    /// `L⁻¹ τ²Ψ(X, A)`, so that the explained covariance is `VᵀV`.
    fn whitened_cross(&self, a: &DesignGrid) -> Option<DMatrix<f64>> {
        let chol = self.chol.as_ref()?;
        let k = cross_covariance(&self.design, a, &self.spec);
        Some(chol.factor.l().solve_lower_triangular(&k).expect("triangular factor is nonsingular"))
    }

    /// Ψ̃(A, B).
    pub fn posterior_cov(&self, a: &DesignGrid, b: &DesignGrid) -> Result<DMatrix<f64>> {
        a.check_within(&self.omega)?;
        b.check_within(&self.omega)?;
        let mut cov = cross_covariance(a, b, &self.spec);
        if let (Some(va), Some(vb)) = (self.whitened_cross(a), self.whitened_cross(b)) {
            cov.gemm_tr(-1.0, &va, &vb, 1.0);
        }
        Ok(cov)
    }

    /// Ψ̃(A, A), symmetrized.
    pub fn posterior_cov_sym(&self, a: &DesignGrid) -> Result<DMatrix<f64>> {
        a.check_within(&self.omega)?;
        let mut cov = gram(a, &self.spec, 0.0);
        if let Some(va) = self.whitened_cross(a) {
            cov.gemm_tr(-1.0, &va, &va, 1.0);
        }
        let n = cov.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = m;
                cov[(j, i)] = m;
            }
        }
        Ok(cov)
    }

    /// Prepares joint draws of η at the points of `grid`.
    pub fn path_sampler(&self, grid: &DesignGrid) -> Result<PathSampler> {
        let mean = DVector::from_vec(self.mean_on(grid)?);
        let cov = self.posterior_cov_sym(grid)?;
        let chol = cholesky_jittered(&cov)?;
        Ok(PathSampler {
            mean,
            factor: chol.factor.l(),
            jitter: chol.jitter,
        })
    }

    /// One joint draw of η on `grid`.
    pub fn sample_path<R: Rng + ?Sized>(&self, grid: &DesignGrid, rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.path_sampler(grid)?.sample(rng))
    }
}

impl Predictor for GpPosterior {
    fn predict(&self, x: &[f64]) -> f64 {
        self.mean_unchecked(x)
    }
}

/// Gaussian sampler `mean + L z` for a fixed point set.
#[derive(Debug, Clone)]
pub struct PathSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    jitter: f64,
}

impl PathSampler {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(self.len(), (0..self.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let mut out = self.mean.clone();
        out.gemv(1.0, &self.factor, &z, 1.0);
        out.data.into()
    }
}

/// Kernel ridge regression
/// `η̂(x) = Ψ_ν(x, X)(Ψ_ν(X, X) + nλI)⁻¹ y`.
#[derive(Debug, Clone)]
pub struct KernelRidge {
    spec: KernelSpec,
    design: DesignGrid,
    weights: DVector<f64>,
    lambda: f64,
}

impl KernelRidge {
    pub fn fit(data: &PhysicalDataset, nu: f64, psi: f64, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("ridge penalty must be positive, got {lambda}")));
        }
        let spec = KernelSpec::new(nu, psi, 1.0)?;
        let n = data.len() as f64;
        let system = gram(data.design(), &spec, n * lambda);
        let chol = cholesky_jittered(&system)?;
        let weights = chol.factor.solve(&DVector::from_column_slice(data.response()));
        Ok(Self {
            spec,
            design: data.design().clone(),
            weights,
            lambda,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn predict_on(&self, grid: &DesignGrid) -> Vec<f64> {
        grid.iter().map(|x| self.predict(x)).collect()
    }
}

impl Predictor for KernelRidge {
    fn predict(&self, x: &[f64]) -> f64 {
        self.design
            .iter()
            .zip(self.weights.iter())
            .map(|(xi, w)| self.spec.correlation(euclidean(x, xi)) * w)
            .sum()
    }
}

/// Default ridge penalty `(σ²/τ²)·n^(-2α/(2α+p))`.
pub fn default_lambda(n: usize, alpha: f64, p: usize, sigma: f64, tau: f64) -> f64 {
    let rate = (n.max(1) as f64).powf(-2.0 * alpha / (2.0 * alpha + p as f64));
    sigma * sigma / (tau * tau) * rate
}

/// Roughness of the kernel ridge regression paired with a GP of roughness `alpha`.
pub fn ridge_roughness(alpha: f64, p: usize) -> f64 {
    alpha - p as f64 / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Purpose};
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn unit() -> BoxDomain {
        BoxDomain::unit(1)
    }

    fn dataset(xs: &[f64], ys: &[f64], sigma: f64) -> PhysicalDataset {
        PhysicalDataset::new(DesignGrid::from_scalars(xs), ys.to_vec(), sigma, unit()).unwrap()
    }

    fn spec() -> KernelSpec {
        KernelSpec::new(2.5, 0.2, 1.0).unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(PhysicalDataset::new(DesignGrid::from_scalars(&[]), vec![], 0.1, unit()).is_err());
        assert!(PhysicalDataset::new(DesignGrid::from_scalars(&[0.5]), vec![1.0], 0.0, unit()).is_err());
        assert!(matches!(
            PhysicalDataset::new(DesignGrid::from_scalars(&[1.5]), vec![1.0], 0.1, unit()),
            Err(Error::OutsideDomain { .. })
        ));
    }

    #[test]
    fn single_observation_shrinks_halfway() {
        let data = dataset(&[0.5], &[2.0], 1.0);
        let post = GpPosterior::fit(&data, &spec()).unwrap();
        assert!((post.predict_mean(&[0.5]).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn near_interpolation_limit() {
        let xs = [0.05, 0.3, 0.55, 0.8, 0.95];
        let ys = [1.0, -0.4, 0.3, 2.0, 1.1];
        let post = GpPosterior::fit(&dataset(&xs, &ys, 1e-6), &spec()).unwrap();
        for (x, y) in xs.iter().zip(ys) {
            assert!((post.predict_mean(&[*x]).unwrap() - y).abs() < 1e-4);
            assert!(post.predict_var(&[*x]).unwrap() <= 1e-5);
        }
    }

    #[test]
    fn far_from_data_reverts_to_prior_mean() {
        let omega = BoxDomain::interval(0.0, 100.0);
        let data = PhysicalDataset::new(DesignGrid::from_scalars(&[0.1, 0.2]), vec![3.0, 4.0], 0.1, omega).unwrap();
        let post = GpPosterior::fit(&data, &spec()).unwrap();
        assert!(post.predict_mean(&[90.0]).unwrap().abs() < 1e-6);
        assert!(post.predict_mean(&[101.0]).is_err());
    }

    #[test]
    fn mean_is_linear_in_response() {
        let xs = [0.1, 0.4, 0.7];
        let a = GpPosterior::fit(&dataset(&xs, &[1.0, 2.0, -1.0], 0.2), &spec()).unwrap();
        let b = GpPosterior::fit(&dataset(&xs, &[2.0, 4.0, -2.0], 0.2), &spec()).unwrap();
        for x in [0.0, 0.33, 0.9] {
            assert_eq!(2.0 * a.predict_mean(&[x]).unwrap(), b.predict_mean(&[x]).unwrap());
        }
    }

    #[test]
    fn fitted_factor_reconstructs_gram() {
        let xs = [0.1, 0.25, 0.5, 0.9];
        let data = dataset(&xs, &[0.0, 1.0, 0.5, 0.2], 0.2);
        let post = GpPosterior::fit(&data, &spec()).unwrap();
        let l = post.cholesky_factor().unwrap();
        let k = gram(data.design(), &spec(), 0.04);
        let err = (&l * l.transpose() - &k).norm() / k.norm();
        assert!(err < 1e-8);
        // mean at the design = (Gram − σ²I) · dual
        let fitted = (k - DMatrix::identity(4, 4) * 0.04) * post.dual();
        for (i, x) in xs.iter().enumerate() {
            assert!((post.predict_mean(&[*x]).unwrap() - fitted[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn prior_covariance_without_data() {
        let prior = GpPosterior::prior(&spec(), unit());
        let g = DesignGrid::from_scalars(&[0.1, 0.3]);
        assert_eq!(prior.posterior_cov(&g, &g).unwrap(), gram(&g, &spec(), 0.0));
        assert_eq!(prior.predict_mean(&[0.3]).unwrap(), 0.0);
    }

    #[test]
    fn posterior_variance_vanishes_at_design_without_noise() {
        let xs = [0.2, 0.6];
        let post = GpPosterior::fit(&dataset(&xs, &[1.0, 1.0], 1e-6), &spec()).unwrap();
        let g = DesignGrid::from_scalars(&xs);
        let c = post.posterior_cov(&g, &g).unwrap();
        assert!(c[(0, 0)].abs() < 1e-6 && c[(1, 1)].abs() < 1e-6);
    }

    #[test]
    fn sampled_paths_honour_noiseless_data() {
        let xs = [0.2, 0.5, 0.8];
        let ys = [1.0, -1.0, 0.5];
        let post = GpPosterior::fit(&dataset(&xs, &ys, 1e-6), &spec()).unwrap();
        let g = DesignGrid::from_scalars(&xs);
        let draw = post.sample_path(&g, &mut stream_rng(1, Purpose::Draw, 0)).unwrap();
        for (d, y) in draw.iter().zip(ys) {
            assert!((d - y).abs() < 1e-3);
        }
    }

    #[test]
    fn path_samples_match_posterior_moments() {
        let data = dataset(&[0.1, 0.4, 0.9], &[0.5, 1.0, -0.3], 0.3);
        let post = GpPosterior::fit(&data, &spec()).unwrap();
        let g = DesignGrid::from_scalars(&[0.0, 0.25, 0.6, 1.0]);
        let sampler = post.path_sampler(&g).unwrap();
        let cov = post.posterior_cov_sym(&g).unwrap();
        let mut rng = stream_rng(12, Purpose::Draw, 0);
        let draws = 6000;
        let mut sum = [0.0; 4];
        let mut sq = [0.0; 4];
        for _ in 0..draws {
            for (i, v) in sampler.sample(&mut rng).into_iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        for i in 0..4 {
            let m = sum[i] / draws as f64;
            let var = sq[i] / draws as f64 - m * m;
            let sd = cov[(i, i)].sqrt();
            assert!((m - sampler.mean()[i]).abs() < 3.0 * sd / (draws as f64).sqrt() + 1e-12, "{i}: {m} vs {} sd {sd}", sampler.mean()[i]);
            assert!((var / cov[(i, i)] - 1.0).abs() < 0.1, "var {var} vs {}", cov[(i, i)]);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let post = GpPosterior::fit(&dataset(&[0.3], &[1.0], 0.2), &spec()).unwrap();
        let g = DesignGrid::from_scalars(&[0.1, 0.5, 0.7]);
        let a = post.sample_path(&g, &mut stream_rng(3, Purpose::Draw, 2)).unwrap();
        let b = post.sample_path(&g, &mut stream_rng(3, Purpose::Draw, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ridge_limits() {
        let data = dataset(&[0.3], &[2.0], 0.2);
        let krr = KernelRidge::fit(&data, 2.0, 0.2, 1e12).unwrap();
        assert!(krr.predict(&[0.3]).abs() < 1e-6);
        let krr = KernelRidge::fit(&data, 2.0, 0.2, 0.5).unwrap();
        assert!((krr.predict(&[0.3]) - 2.0 / 1.5).abs() < 1e-14);
        assert!(KernelRidge::fit(&data, 2.0, 0.2, 0.0).is_err());
    }

    #[test]
    fn default_lambda_rate() {
        let l = default_lambda(64, 2.5, 1, 1.0, 1.0);
        assert!((l - 64f64.powf(-5.0 / 6.0)).abs() < 1e-15);
        assert_eq!(ridge_roughness(2.5, 1), 2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn ridge_equals_gp_mean(
            rows in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -2.0f64..2.0), 1..40),
            two_d in any::<bool>(),
            sigma in 0.05f64..1.0,
            alpha_idx in 0usize..4,
            q in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 5),
        ) {
            let alpha = [0.5, 1.5, 2.5, 3.5][alpha_idx];
            let p = if two_d { 2 } else { 1 };
            let pts: Vec<Vec<f64>> = rows.iter().map(|r| [r.0, r.1][..p].to_vec()).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let data = PhysicalDataset::new(DesignGrid::from_rows(&pts).unwrap(), ys, sigma, BoxDomain::unit(p)).unwrap();
            let gp = GpPosterior::fit(&data, &KernelSpec::new(alpha, 0.3, 1.0).unwrap()).unwrap();
            let krr = KernelRidge::fit(&data, alpha, 0.3, sigma * sigma / data.len() as f64).unwrap();
            for x in &q {
                let x = &[x.0, x.1][..p];
                prop_assert!((gp.predict_mean(x).unwrap() - krr.predict(x)).abs() < 1e-10);
            }
        }

        #[test]
        fn posterior_covariance_is_psd_and_cauchy_schwarz(
            xs in prop::collection::vec(0.0f64..1.0, 1..15),
            gs in prop::collection::vec(0.0f64..1.0, 2..25),
            sigma in 0.01f64..0.5,
        ) {
            let ys = vec![0.0; xs.len()];
            let post = GpPosterior::fit(&dataset(&xs, &ys, sigma), &spec()).unwrap();
            let g = DesignGrid::from_scalars(&gs);
            let c = post.posterior_cov_sym(&g).unwrap();
            let min = SymmetricEigen::new(c.clone()).eigenvalues.min();
            prop_assert!(min >= -1e-8);
            for i in 0..gs.len() {
                for j in 0..gs.len() {
                    prop_assert!(c[(i, j)].abs() <= (c[(i, i)].max(0.0) * c[(j, j)].max(0.0)).sqrt() + 1e-8);
                }
                let v = post.predict_var(&[gs[i]]).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

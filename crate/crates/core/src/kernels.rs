//! Matérn covariance evaluation and Gram-matrix assembly.
//!
//! With `r = sqrt(2α)·d/ψ` the correlation is
//! `Ψ_α(d) = r^α K_α(r) / (Γ(α) 2^(α-1))`. Half-integer roughness has the
//! usual polynomial-times-exponential closed forms. Integer roughness (needed
//! when a kernel ridge regression uses `ν = α - p/2`) goes through integer-order
//! Bessel functions.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::bessel::scaled_bessel_k;
use crate::domain::DesignGrid;
use crate::error::{Error, Result};

/// Supported Matérn roughness values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Roughness {
    Half,
    One,
    ThreeHalves,
    Two,
    FiveHalves,
    Three,
    SevenHalves,
}

impl Roughness {
    pub fn from_value(alpha: f64) -> Result<Self> {
        const TABLE: [(f64, Roughness); 7] = [
            (0.5, Roughness::Half),
            (1.0, Roughness::One),
            (1.5, Roughness::ThreeHalves),
            (2.0, Roughness::Two),
            (2.5, Roughness::FiveHalves),
            (3.0, Roughness::Three),
            (3.5, Roughness::SevenHalves),
        ];
        TABLE
            .iter()
            .find(|(v, _)| (alpha - v).abs() < 1e-12)
            .map(|(_, r)| *r)
            .ok_or(Error::UnsupportedRoughness(alpha))
    }

    pub fn value(self) -> f64 {
        match self {
            Roughness::Half => 0.5,
            Roughness::One => 1.0,
            Roughness::ThreeHalves => 1.5,
            Roughness::Two => 2.0,
            Roughness::FiveHalves => 2.5,
            Roughness::Three => 3.0,
            Roughness::SevenHalves => 3.5,
        }
    }

    /// Correlation as a function of the scaled distance `r = sqrt(2α)·d/ψ`.
    fn correlation_scaled(self, r: f64) -> f64 {
        match self {
            Roughness::Half => (-r).exp(),
            Roughness::ThreeHalves => (1.0 + r) * (-r).exp(),
            Roughness::FiveHalves => (1.0 + r + r * r / 3.0) * (-r).exp(),
            Roughness::SevenHalves => {
                (1.0 + r + 0.4 * r * r + r * r * r / 15.0) * (-r).exp()
            }
            Roughness::One | Roughness::Two | Roughness::Three => {
                if r < 1e-12 {
                    return 1.0;
                }
                let order = self.value() as u32;
                // Γ(m) 2^(m-1) for m = 1, 2, 3.
                let norm = match order {
                    1 => 1.0,
                    2 => 2.0,
                    _ => 8.0,
                };
                (scaled_bessel_k(order, r) / norm).clamp(0.0, 1.0)
            }
        }
    }
}

/// Matérn hyperparameters: roughness α, range ψ and scale τ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    roughness: Roughness,
    psi: f64,
    tau: f64,
}

impl KernelSpec {
    pub fn new(alpha: f64, psi: f64, tau: f64) -> Result<Self> {
        let roughness = Roughness::from_value(alpha)?;
        if !(psi > 0.0 && psi.is_finite()) {
            return Err(Error::InvalidParameter(format!("range psi must be positive, got {psi}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale tau must be positive, got {tau}")));
        }
        Ok(Self {
            roughness,
            psi,
            tau,
        })
    }

    pub fn roughness(&self) -> Roughness {
        self.roughness
    }

    pub fn alpha(&self) -> f64 {
        self.roughness.value()
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn with_psi(mut self, psi: f64) -> Result<Self> {
        if !(psi > 0.0 && psi.is_finite()) {
            return Err(Error::InvalidParameter(format!("range psi must be positive, got {psi}")));
        }
        self.psi = psi;
        Ok(self)
    }

    /// Ψ_α(d) in [0, 1].
    pub fn correlation(&self, d: f64) -> f64 {
        let r = (2.0 * self.alpha()).sqrt() * d / self.psi;
        self.roughness.correlation_scaled(r)
    }

    /// τ² Ψ_α(d).
    pub fn covariance(&self, d: f64) -> f64 {
        self.tau * self.tau * self.correlation(d)
    }

    pub fn covariance_between(&self, a: &[f64], b: &[f64]) -> f64 {
        self.covariance(euclidean(a, b))
    }
}

/// Ψ_α(d | ψ) for a roughness given as a number.
pub fn matern(d: f64, alpha: f64, psi: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::InvalidParameter(format!("distance must be nonnegative, got {d}")));
    }
    Ok(KernelSpec::new(alpha, psi, 1.0)?.correlation(d))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `τ²Ψ(x_i, x_j) + nugget·1{i=j}`, exactly symmetric.
pub fn gram(points: &DesignGrid, spec: &KernelSpec, nugget: f64) -> DMatrix<f64> {
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let xi = points.point(i);
        m[(i, i)] = spec.covariance(0.0) + nugget;
        for j in (i + 1)..n {
            let v = spec.covariance(euclidean(xi, points.point(j)));
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Cross covariance `τ²Ψ(a_i, b_j)` (rows index `a`).
pub fn cross_covariance(a: &DesignGrid, b: &DesignGrid, spec: &KernelSpec) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        spec.covariance(euclidean(a.point(i), b.point(j)))
    })
}

/// A Cholesky factor together with the diagonal jitter that was needed.
#[derive(Debug, Clone)]
pub struct JitteredCholesky {
    pub factor: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

const JITTER_ATTEMPTS: usize = 6;

/// Cholesky with a jitter ladder: first unjittered, then `1e-10·trace/n`
/// growing by 10× for at most six attempts.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Result<JitteredCholesky> {
    let n = m.nrows();
    if let Some(factor) = m.clone().cholesky() {
        return Ok(JitteredCholesky { factor, jitter: 0.0 });
    }
    let mean_diag = (m.trace() / n.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-10 * mean_diag;
    for _ in 0..JITTER_ATTEMPTS {
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(factor) = shifted.cholesky() {
            log::debug!("Cholesky needed jitter {jitter:e} on a {n}x{n} matrix");
            return Ok(JitteredCholesky { factor, jitter });
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite { jitter: jitter / 10.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bessel::oracle::bessel_k_integral;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    const ALL: [f64; 7] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5];

    fn gamma_half_integer_or_integer(a: f64) -> f64 {
        // Γ for the handful of values we need.
        match (2.0 * a).round() as i32 {
            1 => std::f64::consts::PI.sqrt(),
            2 => 1.0,
            3 => 0.5 * std::f64::consts::PI.sqrt(),
            4 => 1.0,
            5 => 0.75 * std::f64::consts::PI.sqrt(),
            6 => 2.0,
            7 => 1.875 * std::f64::consts::PI.sqrt(),
            _ => unreachable!(),
        }
    }

    /// Direct evaluation of the Bessel form of the Matérn correlation.
    fn matern_bessel_form(d: f64, alpha: f64, psi: f64) -> f64 {
        let r = (2.0 * alpha).sqrt() * d / psi;
        r.powf(alpha) * bessel_k_integral(alpha, r)
            / (gamma_half_integer_or_integer(alpha) * 2f64.powf(alpha - 1.0))
    }

    #[test]
    fn zero_distance_is_one() {
        for a in ALL {
            assert_eq!(matern(0.0, a, 0.3).unwrap(), 1.0);
        }
    }

    #[test]
    fn exponential_case() {
        let v = matern(1.0, 0.5, 1.0).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn three_halves_case_matches_bessel_form() {
        let v = matern(1.0, 1.5, 1.0).unwrap();
        let s3 = 3f64.sqrt();
        assert!((v - (1.0 + s3) * (-s3).exp()).abs() < 1e-15);
        assert!((v - 0.4833577).abs() < 1e-6);
        assert!((v - matern_bessel_form(1.0, 1.5, 1.0)).abs() < 1e-9);
    }

    #[test]
    fn every_supported_roughness_matches_bessel_form() {
        for a in ALL {
            for &d in &[0.01, 0.1, 0.4, 1.0, 2.5] {
                let got = matern(d, a, 0.7).unwrap();
                let want = matern_bessel_form(d, a, 0.7);
                assert!((got - want).abs() < 5e-7, "alpha {a}, d {d}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn unsupported_roughness_is_an_error() {
        for a in [0.7, 4.5, 0.0, -1.0] {
            assert!(matches!(matern(0.3, a, 1.0), Err(Error::UnsupportedRoughness(_))));
        }
    }

    #[test]
    fn gram_examples() {
        let spec = KernelSpec::new(2.5, 0.2, 1.0).unwrap();
        let one = DesignGrid::from_scalars(&[0.4]);
        assert_eq!(gram(&one, &spec, 0.0)[(0, 0)], 1.0);

        let twin = DesignGrid::from_scalars(&[0.4, 0.4]);
        let m = gram(&twin, &spec, 0.04);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.04, 1.0, 1.0, 1.04]));
    }

    #[test]
    fn three_point_gram_is_psd_with_unit_diagonal() {
        let spec = KernelSpec::new(2.5, 0.5, 1.0).unwrap();
        let pts = DesignGrid::from_scalars(&[0.0, 0.5, 1.0]);
        let m = gram(&pts, &spec, 0.0);
        for i in 0..3 {
            assert_eq!(m[(i, i)], 1.0);
        }
        let eig = SymmetricEigen::new(m).eigenvalues;
        assert!(eig.iter().all(|&l| l >= -1e-10), "{eig:?}");
    }

    #[test]
    fn continuity_at_zero() {
        for a in ALL {
            assert!(matern(1e-12, a, 1.0).unwrap() >= 1.0 - 1e-6);
        }
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let spec = KernelSpec::new(2.5, 0.3, 1.0).unwrap();
        let pts = DesignGrid::from_scalars(&[0.2, 0.2, 0.5]);
        let m = gram(&pts, &spec, 0.0);
        let ch = cholesky_jittered(&m).unwrap();
        assert!(ch.jitter > 0.0);
    }

    #[test]
    fn indefinite_matrix_fails_after_ladder() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky_jittered(&m), Err(Error::NotPositiveDefinite { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn gram_is_symmetric_and_psd(
            xs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..50),
            alpha_idx in 0usize..7,
            psi in 0.05f64..2.0,
            nugget in 1e-8f64..1e-2,
        ) {
            let rows: Vec<Vec<f64>> = xs.iter().map(|&(a, b)| vec![a, b]).collect();
            let pts = DesignGrid::from_rows(&rows).unwrap();
            let spec = KernelSpec::new(ALL[alpha_idx], psi, 1.0).unwrap();
            let m = gram(&pts, &spec, nugget);
            prop_assert!(m == m.transpose());
            let min = SymmetricEigen::new(m).eigenvalues.min();
            // Integer orders carry ~1e-7 error from the Bessel approximations.
            let tol = if ALL[alpha_idx].fract() == 0.0 { 1e-6 } else { 1e-8 };
            prop_assert!(min >= -tol, "min eigenvalue {}", min);
        }

        #[test]
        fn correlation_is_monotone(d1 in 0.0f64..3.0, gap in 0.0f64..3.0, alpha_idx in 0usize..7) {
            let a = ALL[alpha_idx];
            let near = matern(d1, a, 0.8).unwrap();
            let far = matern(d1 + gap, a, 0.8).unwrap();
            let tol = if a.fract() == 0.0 { 1e-7 } else { 0.0 };
            prop_assert!(near + tol >= far);
            prop_assert!((0.0..=1.0).contains(&far));
        }
    }
}

//! Computer models `y^s(x, θ)`, the three benchmark configurations and a GP emulator.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;

use crate::domain::{BoxDomain, DesignGrid};
use crate::error::{Error, Result};
use crate::gp::parse_record;
use crate::kernels::{cholesky_jittered, euclidean, gram, KernelSpec};

/// A deterministic simulator with derivatives in θ.
///
/// Implementations must be pure: the drivers call them from many threads.
pub trait ComputerModel: Send + Sync {
    fn omega(&self) -> &BoxDomain;
    fn theta_box(&self) -> &BoxDomain;

    fn theta_dim(&self) -> usize {
        self.theta_box().dim()
    }

    fn eval(&self, x: &[f64], theta: &[f64]) -> f64;

    /// Writes `∂y^s/∂θ` into `out` (length q).
    fn grad_theta(&self, x: &[f64], theta: &[f64], out: &mut [f64]);

    /// Writes the row-major q×q Hessian in θ into `out` and returns `true`,
    /// or returns `false` when no analytic Hessian is available.
    fn hess_theta(&self, _x: &[f64], _theta: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// Hessian in θ, analytic when the model provides one, else central
/// differences of the gradient with step `1e-4·width`.
pub fn hessian_theta(model: &dyn ComputerModel, x: &[f64], theta: &[f64], out: &mut [f64]) {
    if model.hess_theta(x, theta, out) {
        return;
    }
    let q = model.theta_dim();
    let mut shifted = theta.to_vec();
    let mut plus = vec![0.0; q];
    let mut minus = vec![0.0; q];
    for k in 0..q {
        let h = 1e-4 * model.theta_box().width(k);
        shifted[k] = theta[k] + h;
        model.grad_theta(x, &shifted, &mut plus);
        shifted[k] = theta[k] - h;
        model.grad_theta(x, &shifted, &mut minus);
        shifted[k] = theta[k];
        for j in 0..q {
            out[j * q + k] = (plus[j] - minus[j]) / (2.0 * h);
        }
    }
    for j in 0..q {
        for k in (j + 1)..q {
            let m = 0.5 * (out[j * q + k] + out[k * q + j]);
            out[j * q + k] = m;
            out[k * q + j] = m;
        }
    }
}

/// Identifier of a benchmark configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ConfigId {
    One = 1,
    Two = 2,
    Three = 3,
}

impl ConfigId {
    pub fn from_number(id: u32) -> Result<Self> {
        match id {
            1 => Ok(ConfigId::One),
            2 => Ok(ConfigId::Two),
            3 => Ok(ConfigId::Three),
            other => Err(Error::UnknownConfig(other)),
        }
    }

    pub fn number(self) -> u32 {
        self as u32
    }
}

/// One of the three benchmark simulators.
#[derive(Debug, Clone)]
pub struct Builtin {
    id: ConfigId,
    omega: BoxDomain,
    theta_box: BoxDomain,
}

impl Builtin {
    pub fn new(id: ConfigId) -> Self {
        let theta_box = match id {
            ConfigId::One => BoxDomain::new(vec![0.0, 0.0], vec![0.25, 0.5]).expect("valid box"),
            ConfigId::Two => BoxDomain::interval(0.0, 3.0),
            ConfigId::Three => BoxDomain::interval(2.0, 4.0),
        };
        Self {
            id,
            omega: BoxDomain::unit(1),
            theta_box,
        }
    }

    pub fn id(&self) -> ConfigId {
        self.id
    }
}

impl ComputerModel for Builtin {
    fn omega(&self) -> &BoxDomain {
        &self.omega
    }

    fn theta_box(&self) -> &BoxDomain {
        &self.theta_box
    }

    fn eval(&self, x: &[f64], theta: &[f64]) -> f64 {
        let x = x[0];
        match self.id {
            ConfigId::One => {
                let a = (2.0 * PI * theta[0] - PI).sin();
                let b = 2.0 * PI * theta[1] - PI;
                7.0 * a * a + 2.0 * b * b * (2.0 * PI * x - PI).sin()
            }
            ConfigId::Two => (5.0 * theta[0] * x).sin() + 5.0 * x,
            ConfigId::Three => theta[0] * x,
        }
    }

    fn grad_theta(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        let x = x[0];
        match self.id {
            ConfigId::One => {
                let a = 2.0 * PI * theta[0] - PI;
                let b = 2.0 * PI * theta[1] - PI;
                out[0] = 14.0 * PI * (2.0 * a).sin();
                out[1] = 8.0 * PI * b * (2.0 * PI * x - PI).sin();
            }
            ConfigId::Two => out[0] = 5.0 * x * (5.0 * theta[0] * x).cos(),
            ConfigId::Three => out[0] = x,
        }
    }

    fn hess_theta(&self, x: &[f64], theta: &[f64], out: &mut [f64]) -> bool {
        let x = x[0];
        match self.id {
            ConfigId::One => {
                let a = 2.0 * PI * theta[0] - PI;
                out[0] = 56.0 * PI * PI * (2.0 * a).cos();
                out[1] = 0.0;
                out[2] = 0.0;
                out[3] = 16.0 * PI * PI * (2.0 * PI * x - PI).sin();
            }
            ConfigId::Two => out[0] = -25.0 * x * x * (5.0 * theta[0] * x).sin(),
            ConfigId::Three => out[0] = 0.0,
        }
        true
    }
}

/// How the physical design points of a scenario are laid out.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignScheme {
    /// `n` independent uniform draws from Ω.
    Uniform(usize),
    /// `n` equally spaced points including both endpoints of Ω.
    Equidistant(usize),
    /// A fixed list of locations.
    Fixed(Vec<f64>),
}

impl DesignScheme {
    pub fn len(&self) -> usize {
        match self {
            DesignScheme::Uniform(n) | DesignScheme::Equidistant(n) => *n,
            DesignScheme::Fixed(xs) => xs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn realize<R: Rng + ?Sized>(&self, omega: &BoxDomain, rng: &mut R) -> Result<DesignGrid> {
        match self {
            DesignScheme::Uniform(n) => Ok(DesignGrid::uniform(omega, *n, rng)),
            DesignScheme::Equidistant(n) => DesignGrid::equidistant(omega, *n),
            DesignScheme::Fixed(xs) => {
                let grid = DesignGrid::from_scalars(xs);
                grid.check_within(omega)?;
                Ok(grid)
            }
        }
    }
}

/// A benchmark configuration: simulator, true physical system and data layout.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: Builtin,
    pub sigma: f64,
    pub design: DesignScheme,
    /// Reference value of the L2 projection of the true system.
    pub theta_star: Vec<f64>,
}

impl Scenario {
    /// The true physical system η₀.
    pub fn truth(&self, x: &[f64]) -> f64 {
        let t = x[0];
        match self.model.id {
            ConfigId::One => self.model.eval(x, &[0.2, 0.3]),
            ConfigId::Two => 5.0 * t * (7.5 * t).cos() + 5.0 * t,
            ConfigId::Three => 4.0 * t + t * (5.0 * t).sin(),
        }
    }
}

/// The benchmark configuration with the given number.
pub fn builtin(id: u32) -> Result<Scenario> {
    let id = ConfigId::from_number(id)?;
    let model = Builtin::new(id);
    Ok(match id {
        ConfigId::One => Scenario {
            model,
            sigma: 0.2,
            design: DesignScheme::Uniform(50),
            theta_star: vec![0.2, 0.3],
        },
        ConfigId::Two => Scenario {
            model,
            sigma: 0.2,
            design: DesignScheme::Equidistant(30),
            theta_star: vec![1.8771],
        },
        ConfigId::Three => Scenario {
            model,
            sigma: 0.02,
            design: DesignScheme::Fixed((0..=16).map(|i| i as f64 * 0.05).collect()),
            theta_star: vec![3.5609],
        },
    })
}

type EvalFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// A computer model assembled from closures. Without an explicit gradient,
/// central differences with step `1e-6·width` are used.
pub struct FnModel {
    omega: BoxDomain,
    theta_box: BoxDomain,
    eval: Box<EvalFn>,
    grad: Option<Box<GradFn>>,
}

impl FnModel {
    pub fn new(
        omega: BoxDomain,
        theta_box: BoxDomain,
        eval: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            omega,
            theta_box,
            eval: Box::new(eval),
            grad: None,
        }
    }

    pub fn with_gradient(mut self, grad: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.grad = Some(Box::new(grad));
        self
    }
}

impl std::fmt::Debug for FnModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnModel")
            .field("omega", &self.omega)
            .field("theta_box", &self.theta_box)
            .finish_non_exhaustive()
    }
}

impl ComputerModel for FnModel {
    fn omega(&self) -> &BoxDomain {
        &self.omega
    }

    fn theta_box(&self) -> &BoxDomain {
        &self.theta_box
    }

    fn eval(&self, x: &[f64], theta: &[f64]) -> f64 {
        (self.eval)(x, theta)
    }

    fn grad_theta(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        if let Some(g) = &self.grad {
            return g(x, theta, out);
        }
        central_difference(self, x, theta, 1e-6, out);
    }
}

fn central_difference(model: &dyn ComputerModel, x: &[f64], theta: &[f64], rel_step: f64, out: &mut [f64]) {
    let mut shifted = theta.to_vec();
    for k in 0..theta.len() {
        let h = rel_step * model.theta_box().width(k);
        shifted[k] = theta[k] + h;
        let up = model.eval(x, &shifted);
        shifted[k] = theta[k] - h;
        let down = model.eval(x, &shifted);
        shifted[k] = theta[k];
        out[k] = (up - down) / (2.0 * h);
    }
}

/// One simulator run.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputerRun {
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub value: f64,
}

/// Reads runs from a CSV with header `x1..xp,t1..tq,ys`.
pub fn read_runs(path: impl AsRef<Path>, p: usize, q: usize) -> Result<Vec<ComputerRun>> {
    let mut reader = csv::Reader::from_path(path)?;
    let expected: Vec<String> = (1..=p)
        .map(|k| format!("x{k}"))
        .chain((1..=q).map(|k| format!("t{k}")))
        .chain(["ys".to_string()])
        .collect();
    let got: Vec<&str> = reader.headers()?.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse(format!("expected header {expected:?}, got {got:?}")));
    }
    let mut runs = Vec::new();
    for record in reader.records() {
        let values = parse_record(&record?)?;
        runs.push(ComputerRun {
            x: values[..p].to_vec(),
            theta: values[p..p + q].to_vec(),
            value: values[p + q],
        });
    }
    Ok(runs)
}

/// Noiseless GP interpolator of simulator runs over Ω×Θ.
#[derive(Debug, Clone)]
pub struct Emulator {
    omega: BoxDomain,
    theta_box: BoxDomain,
    spec: KernelSpec,
    /// Runs mapped to the unit cube.
    inputs: DesignGrid,
    weights: DVector<f64>,
    offset: f64,
}

impl Emulator {
    fn scaled_input(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        scale_to_unit(&self.omega, &self.theta_box, x, theta)
    }

    pub fn jitter_free_len(&self) -> usize {
        self.inputs.len()
    }
}

fn scale_to_unit(omega: &BoxDomain, theta_box: &BoxDomain, x: &[f64], theta: &[f64]) -> Vec<f64> {
    let xs = x
        .iter()
        .enumerate()
        .map(|(k, v)| (v - omega.lower()[k]) / omega.width(k));
    let ts = theta
        .iter()
        .enumerate()
        .map(|(k, v)| (v - theta_box.lower()[k]) / theta_box.width(k));
    xs.chain(ts).collect()
}

/// Builds an emulator from at least two runs. Inputs are rescaled to the unit
/// cube, so `spec.psi` is measured in those units.
pub fn emulate(runs: &[ComputerRun], omega: BoxDomain, theta_box: BoxDomain, spec: &KernelSpec) -> Result<Emulator> {
    if runs.len() < 2 {
        return Err(Error::InvalidParameter("an emulator needs at least two runs".into()));
    }
    let (p, q) = (omega.dim(), theta_box.dim());
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        if run.x.len() != p || run.theta.len() != q {
            return Err(Error::DimensionMismatch {
                expected: p + q,
                got: run.x.len() + run.theta.len(),
            });
        }
        if !omega.contains(&run.x) || !theta_box.contains(&run.theta) {
            return Err(Error::OutsideDomain {
                point: run.x.iter().chain(&run.theta).copied().collect(),
            });
        }
        rows.push(scale_to_unit(&omega, &theta_box, &run.x, &run.theta));
    }
    let inputs = DesignGrid::from_rows(&rows)?;
    let offset = runs.iter().map(|r| r.value).sum::<f64>() / runs.len() as f64;
    let k = gram(&inputs, spec, 1e-8 * spec.tau() * spec.tau());
    let chol = cholesky_jittered(&k)?;
    let weights = chol
        .factor
        .solve(&DVector::from_iterator(runs.len(), runs.iter().map(|r| r.value - offset)));
    Ok(Emulator {
        omega,
        theta_box,
        spec: *spec,
        inputs,
        weights,
        offset,
    })
}

impl ComputerModel for Emulator {
    fn omega(&self) -> &BoxDomain {
        &self.omega
    }

    fn theta_box(&self) -> &BoxDomain {
        &self.theta_box
    }

    fn eval(&self, x: &[f64], theta: &[f64]) -> f64 {
        let z = self.scaled_input(x, theta);
        self.offset
            + self
                .inputs
                .iter()
                .zip(self.weights.iter())
                .map(|(zi, w)| self.spec.covariance(euclidean(&z, zi)) * w)
                .sum::<f64>()
    }

    fn grad_theta(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        central_difference(self, x, theta, 1e-5, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Purpose};

    fn five_point_derivative(model: &dyn ComputerModel, x: &[f64], theta: &[f64], k: usize) -> f64 {
        let h = 1e-3 * model.theta_box().width(k);
        let at = |s: f64| {
            let mut t = theta.to_vec();
            t[k] += s * h;
            model.eval(x, &t)
        };
        (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
    }

    #[test]
    fn builtin_gradients_match_finite_differences() {
        let mut rng = stream_rng(11, Purpose::Data, 0);
        for id in 1..=3 {
            let s = builtin(id).unwrap();
            let m = &s.model;
            let q = m.theta_dim();
            for _ in 0..100 {
                let x = m.omega().sample_uniform(&mut rng);
                let theta = m.theta_box().sample_uniform(&mut rng);
                let mut g = vec![0.0; q];
                m.grad_theta(&x, &theta, &mut g);
                for (k, gk) in g.iter().enumerate() {
                    let fd = five_point_derivative(m, &x, &theta, k);
                    assert!((gk - fd).abs() <= 1e-6 * gk.abs().max(1.0), "config {id}: {gk} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn analytic_hessians_match_gradient_differences() {
        let mut rng = stream_rng(12, Purpose::Data, 0);
        for id in 1..=3 {
            let s = builtin(id).unwrap();
            let q = s.model.theta_dim();
            let wrapped = FnModel::new(s.model.omega().clone(), s.model.theta_box().clone(), {
                let m = s.model.clone();
                move |x, t| m.eval(x, t)
            })
            .with_gradient({
                let m = s.model.clone();
                move |x, t, out| m.grad_theta(x, t, out)
            });
            for _ in 0..20 {
                let x = s.model.omega().sample_uniform(&mut rng);
                let theta = s.model.theta_box().sample_uniform(&mut rng);
                let mut exact = vec![0.0; q * q];
                let mut approx = vec![0.0; q * q];
                hessian_theta(&s.model, &x, &theta, &mut exact);
                hessian_theta(&wrapped, &x, &theta, &mut approx);
                for (a, b) in exact.iter().zip(&approx) {
                    assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "config {id}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn scenario_layouts() {
        let s3 = builtin(3).unwrap();
        assert_eq!(s3.truth(&[0.0]), 0.0);
        assert_eq!(s3.model.eval(&[0.0], &[2.7]), 0.0);
        assert_eq!(s3.design.len(), 17);
        let s1 = builtin(1).unwrap();
        assert_eq!(s1.truth(&[0.37]), s1.model.eval(&[0.37], &[0.2, 0.3]));
        assert_eq!(builtin(2).unwrap().design, DesignScheme::Equidistant(30));
        assert!(matches!(builtin(4), Err(Error::UnknownConfig(4))));
    }

    #[test]
    fn config3_discrepancy_matches_closed_form() {
        // ∫₀¹ (4x + x sin 5x − θx)² dx expanded in u = 4 − θ, by Simpson's rule.
        let s = builtin(3).unwrap();
        let loss = |theta: f64| {
            let m = 20000;
            let h = 1.0 / m as f64;
            (0..=m)
                .map(|i| {
                    let x = i as f64 * h;
                    let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    let r = s.truth(&[x]) - s.model.eval(&[x], &[theta]);
                    w * r * r
                })
                .sum::<f64>()
                * h
                / 3.0
        };
        // Exact expansion u²/3 + b·u + c with b = 2∫x² sin 5x, c = ∫x² sin² 5x.
        let (s5, c5) = (5f64.sin(), 5f64.cos());
        let b = 2.0 * (-c5 / 5.0 + 2.0 * s5 / 25.0 + 2.0 * c5 / 125.0 - 2.0 / 125.0);
        let (s10, c10) = (10f64.sin(), 10f64.cos());
        let c = 1.0 / 6.0 - 0.5 * (s10 / 10.0 + 2.0 * c10 / 100.0 - 2.0 * s10 / 1000.0);
        for theta in [2.0, 3.0, 3.5609, 4.0] {
            let u = 4.0 - theta;
            let exact = u * u / 3.0 + b * u + c;
            assert!((loss(theta) - exact).abs() < 1e-9, "theta {theta}");
        }
        // The rounded polynomial is minimized at 3.5609.
        let u_min: f64 = 0.2898 / (2.0 * 0.33);
        assert!((4.0 - u_min - 3.5609).abs() < 1e-4);
        assert!((b + 0.2898).abs() < 1e-4);
        assert!((c - 0.201714).abs() < 1e-6);
    }

    #[test]
    fn emulator_interpolates_and_generalizes() {
        let s = builtin(3).unwrap();
        let mut runs = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                let x = i as f64 / 4.0;
                let t = 2.0 + 2.0 * j as f64 / 4.0;
                runs.push(ComputerRun {
                    x: vec![x],
                    theta: vec![t],
                    value: s.model.eval(&[x], &[t]),
                });
            }
        }
        let spec = KernelSpec::new(2.5, 1.0, 1.0).unwrap();
        let emu = emulate(&runs, BoxDomain::unit(1), BoxDomain::interval(2.0, 4.0), &spec).unwrap();
        for r in &runs {
            assert!((emu.eval(&r.x, &r.theta) - r.value).abs() < 1e-4);
        }
        for i in 0..4 {
            for j in 0..4 {
                let x = (i as f64 + 0.5) / 4.0;
                let t = 2.0 + 2.0 * (j as f64 + 0.5) / 4.0;
                assert!((emu.eval(&[x], &[t]) - x * t).abs() < 0.05);
            }
        }
        let mut g = [0.0];
        emu.grad_theta(&[0.6], &[3.1], &mut g);
        assert!((g[0] - 0.6).abs() < 0.05);
    }

    #[test]
    fn emulator_needs_two_runs() {
        let run = ComputerRun {
            x: vec![0.5],
            theta: vec![3.0],
            value: 1.5,
        };
        let spec = KernelSpec::new(2.5, 1.0, 1.0).unwrap();
        assert!(emulate(&[run], BoxDomain::unit(1), BoxDomain::interval(2.0, 4.0), &spec).is_err());
    }
}

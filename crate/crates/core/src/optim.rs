//! Projected BFGS with Armijo backtracking on a box.
//!
//! Coordinates are rescaled to the unit cube internally, so badly scaled boxes
//! need no preconditioning.

use nalgebra::{DMatrix, DVector};

use crate::domain::BoxDomain;

#[derive(Debug, Clone, Copy)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    /// Convergence threshold on the projected gradient in unit coordinates.
    pub grad_tol: f64,
    /// Convergence threshold on the step length in unit coordinates.
    pub step_tol: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-10,
            step_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` over `bounds` starting from `start` (clamped into the box).
///
/// `f(x, grad)` returns the objective and writes its gradient.
pub fn minimize_box<F>(f: F, start: &[f64], bounds: &BoxDomain, opts: &MinimizeOptions) -> Minimum
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let q = bounds.dim();
    let lo = bounds.lower();
    let w: Vec<f64> = (0..q).map(|k| bounds.width(k)).collect();
    let to_x = |u: &DVector<f64>| -> Vec<f64> { (0..q).map(|k| lo[k] + w[k] * u[k]).collect() };
    let mut gx = vec![0.0; q];
    let mut eval = |u: &DVector<f64>| -> (f64, DVector<f64>) {
        let v = f(&to_x(u), &mut gx);
        (v, DVector::from_iterator(q, (0..q).map(|k| gx[k] * w[k])))
    };

    let mut u = DVector::from_iterator(q, (0..q).map(|k| ((start[k] - lo[k]) / w[k]).clamp(0.0, 1.0)));
    let (mut fu, mut g) = eval(&u);
    if !fu.is_finite() {
        return Minimum {
            x: to_x(&u),
            value: fu,
            iterations: 0,
            converged: false,
        };
    }
    let mut h = DMatrix::<f64>::identity(q, q);
    let mut fresh = true;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let free: Vec<bool> = (0..q)
            .map(|k| !((u[k] <= 0.0 && g[k] > 0.0) || (u[k] >= 1.0 && g[k] < 0.0)))
            .collect();
        let pg_norm = (0..q).filter(|&k| free[k]).map(|k| g[k] * g[k]).sum::<f64>().sqrt();
        if pg_norm < opts.grad_tol {
            converged = true;
            break;
        }
        let mut d = -(&h * &g);
        for k in 0..q {
            if !free[k] {
                d[k] = 0.0;
            }
        }
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h = DMatrix::identity(q, q);
            fresh = true;
            d = DVector::from_iterator(q, (0..q).map(|k| if free[k] { -g[k] } else { 0.0 }));
            slope = g.dot(&d);
        }
        if fresh {
            // Keep the first trial step inside a tenth of the box.
            let len = d.norm();
            if len > 0.1 {
                d *= 0.1 / len;
            }
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = (&u + &d * t).map(|v| v.clamp(0.0, 1.0));
            let (ft, gt) = eval(&trial);
            let decrease = g.dot(&(&trial - &u));
            if ft.is_finite() && decrease < 0.0 && ft <= fu + 1e-4 * decrease {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((next, fnext, gnext)) = accepted else {
            if fresh {
                converged = pg_norm < 1e-6;
                break;
            }
            h = DMatrix::identity(q, q);
            fresh = true;
            continue;
        };

        let s = &next - &u;
        let y = &gnext - &g;
        let step = s.norm();
        let sy = s.dot(&y);
        if sy > 1e-12 * step * y.norm() {
            if fresh {
                h = DMatrix::identity(q, q) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        let improvement = fu - fnext;
        u = next;
        fu = fnext;
        g = gnext;
        if step < opts.step_tol || improvement.abs() <= 1e-16 * fu.abs().max(1e-300) && step < 1e-9 {
            converged = true;
            break;
        }
    }

    Minimum {
        x: to_x(&u),
        value: fu,
        iterations,
        converged,
    }
}

/// Central-difference gradient with per-coordinate steps.
pub fn numeric_gradient<F>(f: &F, x: &[f64], steps: &[f64], out: &mut [f64])
where
    F: Fn(&[f64]) -> f64,
{
    let mut shifted = x.to_vec();
    for k in 0..x.len() {
        shifted[k] = x[k] + steps[k];
        let up = f(&shifted);
        shifted[k] = x[k] - steps[k];
        let down = f(&shifted);
        shifted[k] = x[k];
        out[k] = (up - down) / (2.0 * steps[k]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_quadratic() {
        let b = BoxDomain::new(vec![-5.0, 0.0], vec![5.0, 100.0]).unwrap();
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 1.0) + 0.5 * (x[1] - 40.0);
            g[1] = 0.5 * (x[0] - 1.0) + 0.2 * (x[1] - 40.0);
            (x[0] - 1.0).powi(2) + 0.5 * (x[0] - 1.0) * (x[1] - 40.0) + 0.1 * (x[1] - 40.0).powi(2)
        };
        let m = minimize_box(f, &[-4.0, 90.0], &b, &MinimizeOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-7 && (m.x[1] - 40.0).abs() < 1e-5, "{:?}", m.x);
    }

    #[test]
    fn minimum_on_the_boundary() {
        let b = BoxDomain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 2.0);
            g[1] = 2.0 * (x[1] - 0.3);
            (x[0] - 2.0).powi(2) + (x[1] - 0.3).powi(2)
        };
        let m = minimize_box(f, &[0.5, 0.9], &b, &MinimizeOptions::default());
        assert_eq!(m.x[0], 1.0);
        assert!((m.x[1] - 0.3).abs() < 1e-8);
    }

    #[test]
    fn rosenbrock() {
        let b = BoxDomain::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
            g[1] = 200.0 * (x[1] - x[0] * x[0]);
            (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
        };
        let m = minimize_box(f, &[-1.2, 1.0], &b, &MinimizeOptions::default());
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m);
    }

    #[test]
    fn numeric_gradient_of_cubic() {
        let f = |x: &[f64]| x[0].powi(3) + 2.0 * x[1];
        let mut g = [0.0; 2];
        numeric_gradient(&f, &[2.0, 1.0], &[1e-5, 1e-5], &mut g);
        assert!((g[0] - 12.0).abs() < 1e-8 && (g[1] - 2.0).abs() < 1e-8);
    }
}

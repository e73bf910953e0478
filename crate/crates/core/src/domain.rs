//! Hyperrectangular domains and finite point sets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed axis-aligned box `[lower_1, upper_1] × … × [lower_d, upper_d]`.
///
/// Used both for the design space Ω and the parameter space Θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidParameter("box must have at least one dimension".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidParameter(format!(
                    "box coordinate {k}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The interval `[lo, hi]`. Panics if `lo >= hi`.
    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::new(vec![lo], vec![hi]).expect("invalid interval")
    }

    /// The unit cube `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self::new(vec![0.0; dim], vec![1.0; dim]).expect("dimension must be positive")
    }

    /// Parses `lo:hi[,lo:hi...]`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for part in text.split(',') {
            let (lo, hi) = part
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("expected lo:hi, got {part:?}")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
            };
            lower.push(parse(lo)?);
            upper.push(parse(hi)?);
        }
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.width(k)).product()
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim())
            .map(|k| self.width(k).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Membership in the closed box, with a relative slack of 1e-12 per side.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(k, &v)| {
                let slack = 1e-12 * self.width(k);
                v >= self.lower[k] - slack && v <= self.upper[k] + slack
            })
    }

    /// Strict membership in the open interior.
    pub fn contains_interior(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .enumerate()
                .all(|(k, &v)| v > self.lower[k] && v < self.upper[k])
    }

    /// Moves every coordinate to lie at least `margin` inside the box.
    pub fn clamp_interior(&self, x: &mut [f64], margin: f64) {
        for (k, v) in x.iter_mut().enumerate() {
            let m = margin.min(0.25 * self.width(k));
            *v = v.clamp(self.lower[k] + m, self.upper[k] - m);
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }

    /// `count` points forming a Latin hypercube: along every axis each of the
    /// `count` equal-width strata holds exactly one point.
    pub fn latin_hypercube<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
        use rand::seq::SliceRandom;
        let mut points = vec![vec![0.0; self.dim()]; count];
        for k in 0..self.dim() {
            let mut strata: Vec<usize> = (0..count).collect();
            strata.shuffle(rng);
            for (point, stratum) in points.iter_mut().zip(strata) {
                let u = (stratum as f64 + rng.random::<f64>()) / count as f64;
                point[k] = self.lower[k] + u * self.width(k);
            }
        }
        points
    }
}

/// A finite ordered set of points in R^p, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignGrid {
    dim: usize,
    coords: Vec<f64>,
}

impl DesignGrid {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("point dimension must be positive".into()));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: coords.len() % dim,
            });
        }
        Ok(Self { dim, coords })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            coords: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            coords.extend_from_slice(row);
        }
        Self::new(dim, coords)
    }

    /// One-dimensional grid from scalar locations.
    pub fn from_scalars(xs: &[f64]) -> Self {
        Self {
            dim: 1,
            coords: xs.to_vec(),
        }
    }

    /// `count` independent uniform draws from `omega`.
    pub fn uniform<R: Rng + ?Sized>(omega: &BoxDomain, count: usize, rng: &mut R) -> Self {
        let mut coords = Vec::with_capacity(count * omega.dim());
        for _ in 0..count {
            coords.extend(omega.sample_uniform(rng));
        }
        Self {
            dim: omega.dim(),
            coords,
        }
    }

    /// Tensor grid of cell midpoints with `per_axis` cells along every axis.
    pub fn midpoints(omega: &BoxDomain, per_axis: usize) -> Self {
        let dim = omega.dim();
        let total = per_axis.pow(dim as u32);
        let mut coords = Vec::with_capacity(total * dim);
        for flat in 0..total {
            let mut rest = flat;
            for k in 0..dim {
                let idx = rest % per_axis;
                rest /= per_axis;
                let u = (idx as f64 + 0.5) / per_axis as f64;
                coords.push(omega.lower()[k] + u * omega.width(k));
            }
        }
        Self { dim, coords }
    }

    /// `count` equally spaced points on a one-dimensional domain, endpoints included.
    pub fn equidistant(omega: &BoxDomain, count: usize) -> Result<Self> {
        if omega.dim() != 1 {
            return Err(Error::Unsupported(
                "equidistant designs are only defined on intervals".into(),
            ));
        }
        let (lo, hi) = (omega.lower()[0], omega.upper()[0]);
        let xs: Vec<f64> = match count {
            0 => Vec::new(),
            1 => vec![0.5 * (lo + hi)],
            _ => (0..count)
                .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                .collect(),
        };
        Ok(Self::from_scalars(&xs))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Checks every point against `omega`.
    pub fn check_within(&self, omega: &BoxDomain) -> Result<()> {
        if self.dim != omega.dim() {
            return Err(Error::DimensionMismatch {
                expected: omega.dim(),
                got: self.dim,
            });
        }
        match self.iter().find(|x| !omega.contains(x)) {
            Some(x) => Err(Error::OutsideDomain { point: x.to_vec() }),
            None => Ok(()),
        }
    }

    /// Concatenation of `self` and `other`.
    pub fn concat(&self, other: &DesignGrid) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Ok(Self {
            dim: self.dim,
            coords,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn box_rejects_inverted_bounds() {
        assert!(BoxDomain::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxDomain::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn parse_multi_dimensional_box() {
        let b = BoxDomain::parse("0:0.25, 0:0.5").unwrap();
        assert_eq!(b.lower(), &[0.0, 0.0]);
        assert_eq!(b.upper(), &[0.25, 0.5]);
        assert!((b.volume() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn clamp_interior_keeps_margin() {
        let b = BoxDomain::interval(2.0, 4.0);
        let mut x = [5.0];
        b.clamp_interior(&mut x, 1e-9);
        assert!(b.contains_interior(&x));
        assert!((x[0] - (4.0 - 1e-9)).abs() < 1e-15);
    }

    #[test]
    fn latin_hypercube_fills_every_stratum() {
        let b = BoxDomain::new(vec![0.0, 10.0], vec![3.0, 20.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = b.latin_hypercube(5, &mut rng);
        for k in 0..2 {
            let mut strata: Vec<usize> = pts
                .iter()
                .map(|p| ((p[k] - b.lower()[k]) / b.width(k) * 5.0).floor() as usize)
                .collect();
            strata.sort_unstable();
            assert_eq!(strata, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn midpoint_grid_covers_cells() {
        let g = DesignGrid::midpoints(&BoxDomain::unit(2), 3);
        assert_eq!(g.len(), 9);
        assert_eq!(g.point(0), &[1.0 / 6.0, 1.0 / 6.0]);
        assert_eq!(g.point(8), &[5.0 / 6.0, 5.0 / 6.0]);
    }

    #[test]
    fn equidistant_includes_endpoints() {
        let g = DesignGrid::equidistant(&BoxDomain::interval(0.0, 0.8), 17).unwrap();
        assert_eq!(g.len(), 17);
        assert_eq!(g.point(0), &[0.0]);
        assert!((g.point(16)[0] - 0.8).abs() < 1e-15);
    }
}

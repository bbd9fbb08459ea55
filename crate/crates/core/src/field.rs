//! Piecewise-linear fields on uniform node lattices over a 1-D interval.
//!
//! One representation serves absolute densities, deviation fields, and
//! transformed target fields. Quadrature is trapezoidal, which is exact for
//! the piecewise-linear interpolant, and is exposed through cumulative sums
//! so that every consumer (controller, transforms, diagnostics) integrates
//! through one arithmetic path.

use crate::error::{Result, SimError};

/// Sampled field on `n_cells + 1` equispaced nodes spanning `[left, right]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    left: f64,
    right: f64,
    samples: Vec<f64>,
    /// prefix[k] = trapezoidal integral from `left` to node k.
    prefix: Vec<f64>,
}

impl DensityField {
    pub fn from_samples(left: f64, right: f64, samples: Vec<f64>) -> Self {
        assert!(samples.len() >= 2, "need at least two nodes");
        assert!(right > left, "domain must have positive width");
        let mut field = Self { left, right, samples, prefix: Vec::new() };
        field.rebuild_prefix();
        field
    }

    pub fn from_fn(left: f64, right: f64, n_cells: usize, f: impl Fn(f64) -> f64) -> Self {
        assert!(n_cells >= 1);
        let samples = (0..=n_cells)
            .map(|i| f(node_position(left, right, i, n_cells)))
            .collect();
        Self::from_samples(left, right, samples)
    }

    pub fn uniform(left: f64, right: f64, n_cells: usize, value: f64) -> Self {
        Self::from_samples(left, right, vec![value; n_cells + 1])
    }

    fn rebuild_prefix(&mut self) {
        let n = self.n_cells();
        let dx = self.dx();
        let mut prefix = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for i in 0..n {
            acc += dx * 0.5 * (self.samples[i] + self.samples[i + 1]);
            prefix.push(acc);
        }
        self.prefix = prefix;
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.right
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn n_cells(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn dx(&self) -> f64 {
        self.width() / self.n_cells() as f64
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn node(&self, i: usize) -> f64 {
        node_position(self.left, self.right, i, self.n_cells())
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |i| self.node(i))
    }

    /// Applies `f` to every sample (domain unchanged).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_samples(self.left, self.right, self.samples.iter().map(|&v| f(v)).collect())
    }

    fn locate(&self, x: f64) -> Result<(usize, f64)> {
        let tol = 1e-9 * self.width().max(1.0);
        if x < self.left - tol || x > self.right + tol {
            return Err(SimError::PositionOutOfRange { x, length: self.right });
        }
        let xr = x.clamp(self.left, self.right);
        let n = self.n_cells();
        let raw = (xr - self.left) / self.dx();
        let idx = (raw.floor() as usize).min(n - 1);
        let theta = (xr - self.node(idx)) / self.dx();
        Ok((idx, theta.clamp(0.0, 1.0)))
    }

    /// Linear interpolation at `x`; errors outside the domain.
    pub fn sample(&self, x: f64) -> Result<f64> {
        let (idx, theta) = self.locate(x)?;
        Ok((1.0 - theta) * self.samples[idx] + theta * self.samples[idx + 1])
    }

    /// Linear interpolation with zero extension outside the domain.
    pub fn sample_or_zero(&self, x: f64) -> f64 {
        if x < self.left || x > self.right {
            0.0
        } else {
            self.sample(x).unwrap_or(0.0)
        }
    }

    /// Trapezoidal integral from `left` to `x` (exact for the interpolant).
    pub fn cumulative(&self, x: f64) -> Result<f64> {
        let (idx, theta) = self.locate(x)?;
        let xi = self.node(idx);
        let xr = x.clamp(self.left, self.right);
        let fx = (1.0 - theta) * self.samples[idx] + theta * self.samples[idx + 1];
        Ok(self.prefix[idx] + (xr - xi) * 0.5 * (self.samples[idx] + fx))
    }

    /// Trapezoidal integral over `[a, b] ⊆ [left, right]`.
    pub fn integrate(&self, a: f64, b: f64) -> Result<f64> {
        if b < a {
            return Ok(-self.integrate(b, a)?);
        }
        Ok(self.cumulative(b)? - self.cumulative(a)?)
    }

    /// Integral over the whole domain.
    pub fn total(&self) -> f64 {
        *self.prefix.last().unwrap()
    }

    /// Node-wise spatial derivative: centered in the interior, one-sided at
    /// the ends.
    pub fn node_derivatives(&self) -> Vec<f64> {
        let n = self.n_cells();
        let dx = self.dx();
        let s = &self.samples;
        let mut d = vec![0.0; n + 1];
        d[0] = (s[1] - s[0]) / dx;
        d[n] = (s[n] - s[n - 1]) / dx;
        for i in 1..n {
            d[i] = (s[i + 1] - s[i - 1]) / (2.0 * dx);
        }
        d
    }
}

pub(crate) fn node_position(left: f64, right: f64, i: usize, n_cells: usize) -> f64 {
    left + (right - left) * (i as f64 / n_cells as f64)
}

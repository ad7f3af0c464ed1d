//! Tensor-product cell-centered density grids on a truncated orthant.

use serde::Serialize;

/// Piecewise-constant density on the box `[0, dims_k * h)^l` with
/// uniform spacing `h`. Values are cell-centered and nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityGrid {
    ell: usize,
    h: f64,
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn zeros(h: f64, dims: Vec<usize>) -> Self {
        assert!(h > 0.0 && !dims.is_empty() && dims.iter().all(|&d| d > 0));
        let len = dims.iter().product();
        Self { ell: dims.len(), h, dims, values: vec![0.0; len] }
    }

    /// Fill from a density function evaluated at cell centers.
    pub fn from_fn(h: f64, dims: Vec<usize>, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut grid = Self::zeros(h, dims);
        let mut center = vec![0.0; grid.ell];
        for flat in 0..grid.values.len() {
            grid.center_of(flat, &mut center);
            grid.values[flat] = f(&center);
        }
        grid
    }

    pub fn ell(&self) -> usize {
        self.ell
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Cell volume `h^l`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.ell as i32)
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.ell];
        let mut rem = flat;
        for d in (0..self.ell).rev() {
            idx[d] = rem % self.dims[d];
            rem /= self.dims[d];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0usize;
        for d in 0..self.ell {
            flat = flat * self.dims[d] + idx[d];
        }
        flat
    }

    /// Write the cell center of `flat` into `out`.
    pub fn center_of(&self, flat: usize, out: &mut [f64]) {
        let mut rem = flat;
        for d in (0..self.ell).rev() {
            out[d] = (rem % self.dims[d]) as f64 * self.h + 0.5 * self.h;
            rem /= self.dims[d];
        }
    }

    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.ell];
        self.center_of(flat, &mut out);
        out
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// `(int u_k x(u) du)_k`.
    pub fn first_moments(&self) -> Vec<f64> {
        let mut moments = vec![0.0; self.ell];
        let vol = self.cell_volume();
        let mut center = vec![0.0; self.ell];
        for flat in 0..self.values.len() {
            let v = self.values[flat];
            if v == 0.0 {
                continue;
            }
            self.center_of(flat, &mut center);
            for d in 0..self.ell {
                moments[d] += center[d] * v * vol;
            }
        }
        moments
    }

    /// Midpoint quadrature of `f` against the density.
    pub fn pair_with(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let vol = self.cell_volume();
        let mut center = vec![0.0; self.ell];
        let mut acc = 0.0;
        for flat in 0..self.values.len() {
            let v = self.values[flat];
            if v == 0.0 {
                continue;
            }
            self.center_of(flat, &mut center);
            acc += f(&center) * v;
        }
        acc * vol
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    /// Largest absolute difference against a grid of identical shape.
    pub fn sup_diff(&self, other: &DensityGrid) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn l1_diff(&self, other: &DensityGrid) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.cell_volume()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let g = DensityGrid::zeros(0.5, vec![4, 3]);
        for flat in 0..g.len() {
            let idx = g.multi_index(flat);
            assert_eq!(g.flat_index(&idx), flat);
        }
        assert_eq!(g.cell_center(0), vec![0.25, 0.25]);
        assert_eq!(g.cell_center(g.flat_index(&[2, 1])), vec![1.25, 0.75]);
    }

    #[test]
    fn mass_and_moments_of_uniform_density() {
        let g = DensityGrid::from_fn(0.25, vec![8], |_| 2.0);
        // density 2 on [0,2): mass 4, first moment 2 * 2^2/2 = 4
        assert!((g.mass() - 4.0).abs() < 1e-12);
        assert!((g.first_moments()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn pairing_is_midpoint_quadrature() {
        let g = DensityGrid::from_fn(0.1, vec![10], |u| u[0]);
        let val = g.pair_with(|u| u[0]);
        // int_0^1 u^2 du with midpoint error O(h^2)
        assert!((val - 1.0 / 3.0).abs() < 1e-3);
    }
}

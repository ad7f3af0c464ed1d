//! Distances and functionals for comparing empirical measures with
//! densities.
//!
//! The weak-topology distance is estimated from below by maximizing
//! `|<f, mu> - <f, nu>|` over a fixed bank of functions that are
//! 1-Lipschitz and bounded by one by construction: capped coordinates,
//! tents on a lattice, and seeded random cosine features. The estimate
//! is exact for the fixed bank (so symmetry and the triangle inequality
//! hold exactly) and monotone in the bank size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::pde::grid::DensityGrid;
use crate::scale::EmpiricalMeasure;

/// A finite measure that can be paired with test functions: weighted
/// atoms or a grid density (midpoint quadrature).
#[derive(Clone, Copy)]
pub enum MeasureRef<'a> {
    Atoms(&'a EmpiricalMeasure),
    Density(&'a DensityGrid),
}

impl MeasureRef<'_> {
    pub fn pair(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        match self {
            MeasureRef::Atoms(m) => m.pair_with(f),
            MeasureRef::Density(g) => g.pair_with(f),
        }
    }

    /// `(mass, first moment vector)`.
    pub fn moments(&self, ell: usize) -> (f64, Vec<f64>) {
        match self {
            MeasureRef::Atoms(m) => {
                let (mass, mut first) = m.moments();
                first.resize(ell, 0.0);
                (mass, first)
            }
            MeasureRef::Density(g) => (g.mass(), g.first_moments()),
        }
    }
}

/// One member of the dual bank. Every variant is 1-Lipschitz (for the
/// Euclidean metric) and bounded by one.
#[derive(Debug, Clone, Serialize)]
pub enum BankFn {
    /// `min(u_k, 1)`
    CappedCoord { k: usize },
    /// `max(0, 1 - |u - center|)`
    Tent { center: Vec<f64> },
    /// `cos(w . u + phase) / max(1, |w|)`
    Cosine { w: Vec<f64>, phase: f64 },
}

impl BankFn {
    pub fn eval(&self, u: &[f64]) -> f64 {
        match self {
            BankFn::CappedCoord { k } => u[*k].min(1.0),
            BankFn::Tent { center } => {
                let d2: f64 = u
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (1.0 - d2.sqrt()).max(0.0)
            }
            BankFn::Cosine { w, phase } => {
                let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                let dot: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum();
                (dot + phase).cos() / norm.max(1.0)
            }
        }
    }
}

/// Fixed dual bank: deterministic lattice members first, then seeded
/// random cosine features up to `size`.
#[derive(Debug, Clone, Serialize)]
pub struct TestFunctionBank {
    pub seed: u64,
    pub members: Vec<BankFn>,
}

impl TestFunctionBank {
    pub fn build(ell: usize, box_hi: f64, size: usize, seed: u64) -> Self {
        let mut members = Vec::with_capacity(size);
        for k in 0..ell {
            members.push(BankFn::CappedCoord { k });
        }
        // tents on a lattice with spacing 1/2
        let per_dim = (2.0 * box_hi).floor() as usize + 1;
        let mut idx = vec![0usize; ell];
        'lattice: loop {
            if members.len() >= size {
                break;
            }
            members.push(BankFn::Tent {
                center: idx.iter().map(|&j| 0.5 * j as f64).collect(),
            });
            let mut d = 0;
            loop {
                if d == ell {
                    break 'lattice;
                }
                idx[d] += 1;
                if idx[d] < per_dim {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
        // deterministic cosine lattice along each axis
        let mut k = 1usize;
        while members.len() < size && k <= 8 {
            for axis in 0..ell {
                if members.len() >= size {
                    break;
                }
                let mut w = vec![0.0; ell];
                w[axis] = std::f64::consts::PI * k as f64 / box_hi;
                members.push(BankFn::Cosine { w, phase: 0.0 });
            }
            k += 1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while members.len() < size {
            let w: Vec<f64> = (0..ell).map(|_| rng.gen_range(-6.0..6.0)).collect();
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            members.push(BankFn::Cosine { w, phase });
        }
        Self { seed, members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Lower-bound estimate of the bounded-Lipschitz distance: the exact
/// maximum of `|<f, a> - <f, b>|` over the bank.
pub fn rho_w(a: MeasureRef, b: MeasureRef, bank: &TestFunctionBank) -> f64 {
    bank.members
        .iter()
        .map(|f| (a.pair(|u| f.eval(u)) - b.pair(|u| f.eval(u))).abs())
        .fold(0.0, f64::max)
}

/// Smooth square-integrable pairing functions for the density-mode
/// convergence table: Gaussian bumps and Gaussian-damped cosines.
#[derive(Debug, Clone, Serialize)]
pub enum GFn {
    Gaussian { center: Vec<f64>, sigma: f64 },
    DampedCosine { w: Vec<f64>, decay: f64 },
}

impl GFn {
    pub fn eval(&self, u: &[f64]) -> f64 {
        match self {
            GFn::Gaussian { center, sigma } => {
                let d2: f64 = u
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (-0.5 * d2 / (sigma * sigma)).exp()
            }
            GFn::DampedCosine { w, decay } => {
                let dot: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum();
                let n2: f64 = u.iter().map(|x| x * x).sum();
                dot.cos() * (-decay * n2).exp()
            }
        }
    }
}

/// Sixteen fixed members spread over `[0, box_hi]^l`.
pub fn pairing_bank(ell: usize, box_hi: f64) -> Vec<GFn> {
    let mut bank = Vec::with_capacity(16);
    for j in 0..8 {
        let c = box_hi * (j as f64 + 0.5) / 8.0;
        bank.push(GFn::Gaussian { center: vec![c; ell], sigma: 0.15 * box_hi });
    }
    for j in 0..8 {
        let w = 0.2 * (j as f64 + 1.0);
        bank.push(GFn::DampedCosine { w: vec![w; ell], decay: 0.25 });
    }
    bank
}

/// Per-function absolute pairing gaps `|<g, a> - <g, b>|`.
pub fn pairing_gaps(a: MeasureRef, b: MeasureRef, bank: &[GFn]) -> Vec<f64> {
    bank.iter()
        .map(|g| (a.pair(|u| g.eval(u)) - b.pair(|u| g.eval(u))).abs())
        .collect()
}

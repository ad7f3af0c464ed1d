//! Fission partition laws.
//!
//! A law samples a random partition of a composition into nonzero
//! pieces that sum exactly to it, and exposes the expected-offspring
//! kernel `eta(i, i')` plus the second moments the quadratic-variation
//! diagnostics need. Piece counts are bounded by a declared `b`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::population::Composition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FissionLaw {
    /// Binary fission with the split point drawn uniformly from the
    /// integer box `[0, i]` (all `prod_k (i_k + 1)` outcomes equally
    /// likely). The outcome is the unordered pair `{i', i - i'}` with
    /// zero pieces dropped, so the draws `i' = 0` and `i' = i` both
    /// yield the nonproper partition `{i}`. Here
    /// `eta(i, i') = 2 / prod_k (i_k + 1)` for every `0 < i' <= i`.
    UniformBinary,
    /// Always returns `{i}` (every fission is nonproper).
    NonproperOnly,
}

#[derive(Debug, Error)]
#[error("unknown fission law `{0}`")]
pub struct UnknownLaw(pub String);

impl FissionLaw {
    pub fn from_name(name: &str) -> Result<Self, UnknownLaw> {
        match name {
            "uniform_binary" => Ok(FissionLaw::UniformBinary),
            "nonproper_only" => Ok(FissionLaw::NonproperOnly),
            other => Err(UnknownLaw(other.to_string())),
        }
    }

    /// Upper bound on the number of pieces any partition may have.
    pub fn max_pieces(&self) -> u64 {
        match self {
            FissionLaw::UniformBinary => 2,
            FissionLaw::NonproperOnly => 1,
        }
    }

    /// Draw a partition of `i`: nonzero pieces summing exactly to `i`.
    pub fn sample_partition<R: Rng>(&self, i: &Composition, rng: &mut R) -> Vec<Composition> {
        assert!(!i.is_zero(), "cannot fission the zero composition");
        match self {
            FissionLaw::NonproperOnly => vec![i.clone()],
            FissionLaw::UniformBinary => {
                let first: Vec<u64> =
                    i.counts().iter().map(|&c| rng.gen_range(0..=c)).collect();
                let first = Composition::new(first);
                let second = i.checked_sub(&first).expect("split exceeds parent");
                let mut pieces = Vec::with_capacity(2);
                if !first.is_zero() {
                    pieces.push(first);
                }
                if !second.is_zero() {
                    pieces.push(second);
                }
                pieces
            }
        }
    }

    /// Expected number of `piece`-groups produced by fissioning `parent`.
    pub fn eta(&self, parent: &Composition, piece: &Composition) -> f64 {
        if piece.is_zero() || !parent.dominates(piece) {
            return 0.0;
        }
        match self {
            FissionLaw::NonproperOnly => {
                if piece == parent {
                    1.0
                } else {
                    0.0
                }
            }
            FissionLaw::UniformBinary => 2.0 / box_size(parent),
        }
    }

    /// Second moment `E[theta_i(piece)^2]` of the number of
    /// `piece`-groups in a partition of `parent`.
    pub fn alpha(&self, parent: &Composition, piece: &Composition) -> f64 {
        if piece.is_zero() || !parent.dominates(piece) {
            return 0.0;
        }
        match self {
            FissionLaw::NonproperOnly => {
                if piece == parent {
                    1.0
                } else {
                    0.0
                }
            }
            FissionLaw::UniformBinary => {
                // theta = 2 only when both halves equal `piece`.
                let doubled = piece
                    .counts()
                    .iter()
                    .zip(parent.counts())
                    .all(|(&p, &q)| p.checked_mul(2) == Some(q));
                let base = 2.0 / box_size(parent);
                if doubled {
                    2.0 * base
                } else {
                    base
                }
            }
        }
    }

    /// Cross moment `E[theta_i(a) theta_i(b)]` for distinct pieces.
    pub fn cross_moment(&self, parent: &Composition, a: &Composition, b: &Composition) -> f64 {
        if a == b {
            return self.alpha(parent, a);
        }
        if a.is_zero() || b.is_zero() || !parent.dominates(a) || !parent.dominates(b) {
            return 0.0;
        }
        match self {
            FissionLaw::NonproperOnly => 0.0,
            FissionLaw::UniformBinary => {
                // Nonzero only when {a, b} is a complementary pair.
                let complement = parent.checked_sub(a);
                if complement.as_ref() == Some(b) {
                    2.0 / box_size(parent)
                } else {
                    0.0
                }
            }
        }
    }

    /// All compositions that can appear as pieces of `parent`, in
    /// deterministic order. Intended for diagnostics-scale parents.
    pub fn offspring_support(&self, parent: &Composition) -> Vec<Composition> {
        match self {
            FissionLaw::NonproperOnly => vec![parent.clone()],
            FissionLaw::UniformBinary => {
                let mut out = Vec::new();
                let mut point = vec![0u64; parent.ell()];
                loop {
                    let c = Composition::new(point.clone());
                    if !c.is_zero() {
                        out.push(c);
                    }
                    let mut dim = 0;
                    loop {
                        if dim == point.len() {
                            return out;
                        }
                        if point[dim] < parent.get(dim) {
                            point[dim] += 1;
                            break;
                        }
                        point[dim] = 0;
                        dim += 1;
                    }
                }
            }
        }
    }
}

fn box_size(i: &Composition) -> f64 {
    i.counts().iter().map(|&c| c as f64 + 1.0).product()
}

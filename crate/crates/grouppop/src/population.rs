//! Group compositions and the sparse population state.
//!
//! A group is identified by its composition: the vector of per-type
//! individual counts. The population is a multiset of groups, stored
//! sparsely as composition -> group count with cached totals.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

/// Per-type individual counts of one group. Entries are nonnegative;
/// the all-zero vector is representable but is never stored in a
/// [`Population`].
///
/// Arithmetic is checked: a count overflowing 64 bits is a hard error,
/// not a wraparound.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Composition {
    counts: Vec<u64>,
}

impl Composition {
    pub fn new(counts: Vec<u64>) -> Self {
        assert!(!counts.is_empty(), "composition needs at least one type");
        Self { counts }
    }

    /// Number of types.
    pub fn ell(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, k: usize) -> u64 {
        self.counts[k]
    }

    /// Total number of individuals in the group.
    pub fn total(&self) -> u64 {
        self.counts
            .iter()
            .try_fold(0u64, |a, &c| a.checked_add(c))
            .expect("composition total overflows u64")
    }

    pub fn is_zero(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    /// Entrywise partial order: every entry of `self` >= the entry of `other`.
    pub fn dominates(&self, other: &Composition) -> bool {
        self.counts.len() == other.counts.len()
            && self.counts.iter().zip(&other.counts).all(|(a, b)| a >= b)
    }

    /// Composition with one more type-`k` individual.
    pub fn plus_unit(&self, k: usize) -> Composition {
        let mut counts = self.counts.clone();
        counts[k] = counts[k].checked_add(1).expect("composition count overflow");
        Composition { counts }
    }

    /// Composition with one fewer type-`k` individual. The result may be
    /// the zero composition; callers decide whether to keep it.
    pub fn minus_unit(&self, k: usize) -> Composition {
        let mut counts = self.counts.clone();
        counts[k] = counts[k]
            .checked_sub(1)
            .expect("removed individual of a type the group does not have");
        Composition { counts }
    }

    pub fn checked_sub(&self, other: &Composition) -> Option<Composition> {
        if !self.dominates(other) {
            return None;
        }
        Some(Composition {
            counts: self
                .counts
                .iter()
                .zip(&other.counts)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// Coordinates scaled by `1/n`, the lattice embedding into the orthant.
    pub fn scaled(&self, n: u64) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / n as f64).collect()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (j, c) in self.counts.iter().enumerate() {
            if j > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Sparse multiset of groups: composition -> number of groups with that
/// composition, with cached group and per-type individual totals.
///
/// Invariants: no zero-count entries, no zero-composition key, caches
/// always equal a from-scratch recomputation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Population {
    groups: BTreeMap<Composition, u64>,
    ell: usize,
    group_total: u64,
    indiv_totals: Vec<u64>,
}

impl Population {
    pub fn new(ell: usize) -> Self {
        assert!(ell >= 1);
        Self {
            groups: BTreeMap::new(),
            ell,
            group_total: 0,
            indiv_totals: vec![0; ell],
        }
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn is_empty(&self) -> bool {
        self.group_total == 0
    }

    /// Number of groups with composition `i`.
    pub fn count(&self, i: &Composition) -> u64 {
        self.groups.get(i).copied().unwrap_or(0)
    }

    /// Total number of groups.
    pub fn group_total(&self) -> u64 {
        self.group_total
    }

    /// Cached per-type individual totals.
    pub fn indiv_totals(&self) -> &[u64] {
        &self.indiv_totals
    }

    /// Total number of individuals across all groups and types.
    pub fn indiv_total(&self) -> u64 {
        self.indiv_totals.iter().sum()
    }

    /// (group count, per-type individual totals).
    pub fn totals(&self) -> (u64, Vec<u64>) {
        (self.group_total, self.indiv_totals.clone())
    }

    /// Deterministic (sorted) iteration over occupied compositions.
    pub fn iter(&self) -> impl Iterator<Item = (&Composition, u64)> {
        self.groups.iter().map(|(c, &n)| (c, n))
    }

    pub fn n_compositions(&self) -> usize {
        self.groups.len()
    }

    /// Add `count` groups of composition `i`.
    pub fn insert(&mut self, i: Composition, count: u64) {
        assert_eq!(i.ell(), self.ell, "composition arity mismatch");
        assert!(!i.is_zero(), "zero composition cannot be stored");
        if count == 0 {
            return;
        }
        for (k, tot) in self.indiv_totals.iter_mut().enumerate() {
            *tot = tot
                .checked_add(i.get(k).checked_mul(count).expect("individual total overflow"))
                .expect("individual total overflow");
        }
        self.group_total += count;
        *self.groups.entry(i).or_insert(0) += count;
    }

    pub fn add_one(&mut self, i: Composition) {
        self.insert(i, 1);
    }

    /// Remove one group of composition `i`. Panics if none exists.
    pub fn remove_one(&mut self, i: &Composition) {
        let entry = self
            .groups
            .get_mut(i)
            .unwrap_or_else(|| panic!("no group with composition {i} to remove"));
        *entry -= 1;
        if *entry == 0 {
            self.groups.remove(i);
        }
        self.group_total -= 1;
        for (k, tot) in self.indiv_totals.iter_mut().enumerate() {
            *tot -= i.get(k);
        }
    }

    /// Recompute totals from scratch, for cache-coherence checks.
    pub fn recomputed_totals(&self) -> (u64, Vec<u64>) {
        let mut groups = 0u64;
        let mut indiv = vec![0u64; self.ell];
        for (c, n) in self.iter() {
            groups += n;
            for k in 0..self.ell {
                indiv[k] += c.get(k) * n;
            }
        }
        (groups, indiv)
    }
}

pub fn comp(counts: &[u64]) -> Composition {
    Composition::new(counts.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn totals_empty() {
        let pop = Population::new(1);
        assert_eq!(pop.totals(), (0, vec![0]));
    }

    #[test]
    fn totals_single_entry() {
        let mut pop = Population::new(1);
        pop.insert(comp(&[3]), 2);
        assert_eq!(pop.totals(), (2, vec![6]));
    }

    #[test]
    fn totals_two_types() {
        let mut pop = Population::new(2);
        pop.insert(comp(&[1, 2]), 1);
        pop.insert(comp(&[2, 0]), 3);
        assert_eq!(pop.totals(), (4, vec![7, 2]));
    }

    #[test]
    fn cache_coherent_under_random_mutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pop = Population::new(2);
        let mut live: Vec<Composition> = Vec::new();
        for _ in 0..5000 {
            let remove = !live.is_empty() && rng.gen_bool(0.45);
            if remove {
                let idx = rng.gen_range(0..live.len());
                let c = live[idx].clone();
                pop.remove_one(&c);
                if pop.count(&c) == 0 {
                    live.retain(|x| x != &c);
                }
            } else {
                let c = comp(&[rng.gen_range(0..5u64), rng.gen_range(0..5u64).max(1)]);
                pop.add_one(c.clone());
                if !live.contains(&c) {
                    live.push(c);
                }
            }
            assert_eq!(pop.totals(), pop.recomputed_totals());
        }
    }

    #[test]
    fn no_zero_entries_survive() {
        let mut pop = Population::new(1);
        pop.insert(comp(&[2]), 1);
        pop.remove_one(&comp(&[2]));
        assert_eq!(pop.n_compositions(), 0);
        assert!(pop.is_empty());
    }

    #[test]
    #[should_panic(expected = "zero composition")]
    fn zero_composition_rejected() {
        let mut pop = Population::new(2);
        pop.insert(comp(&[0, 0]), 1);
    }

    #[test]
    fn partial_order_and_units() {
        let a = comp(&[2, 1]);
        let b = comp(&[1, 1]);
        assert!(a.dominates(&b));
        assert!(!b.dominates(&a));
        assert_eq!(a.plus_unit(0), comp(&[3, 1]));
        assert_eq!(a.minus_unit(1), comp(&[2, 0]));
        assert_eq!(a.total(), 3);
        assert_eq!(a.checked_sub(&b), Some(comp(&[1, 0])));
        assert_eq!(b.checked_sub(&a), None);
    }
}

//! Event counters, their compensator integrals, and the balance
//! reconstruction.
//!
//! Every event family is counted per composition (and per piece for
//! fission offspring). When compensator tracking is enabled, each
//! counter also carries the time integral of its instantaneous rate,
//! so that count minus integral is the compensated (martingale) path,
//! plus the integral of the predictable quadratic-variation rate and
//! any requested predictable covariance integrals. Rates are piecewise
//! constant between events, so the integrals are advanced in closed
//! form over each holding interval.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::fission::FissionLaw;
use crate::population::{Composition, Population};
use crate::rates::RateSpec;

/// Identifies one counting process.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum CounterKey {
    /// Type-`k` births in `i`-groups.
    Birth { i: Composition, k: usize },
    /// Type-`k` deaths in `i`-groups.
    Death { i: Composition, k: usize },
    /// Type-`k` immigrations into `i`-groups.
    Immigration { i: Composition, k: usize },
    /// Type-`k` emigrations out of `i`-groups (destination differs).
    Emigration { i: Composition, k: usize },
    /// Fissions of `i`-groups.
    Fission { i: Composition },
    /// `piece`-groups produced by fissions of `parent`-groups.
    FissionPiece { parent: Composition, piece: Composition },
    /// Extinctions of `i`-groups.
    Extinction { i: Composition },
}

/// Identifies one tracked predictable covariance process.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum CovKey {
    /// Covariance of the piece counters `F(parent, a)` and `F(parent, b)`.
    FissionPieces { parent: Composition, a: Composition, b: Composition },
    /// Covariance of immigration into `into` and emigration out of `from`
    /// for type `k`.
    Migration { into: Composition, from: Composition, k: usize },
}

#[derive(Debug, Clone, Default, Serialize)]
struct Ledger {
    count: u64,
    comp: f64,
    qv: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterSet {
    counters: BTreeMap<CounterKey, Ledger>,
    cov: BTreeMap<CovKey, f64>,
    tracking: bool,
}

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("counter {0:?} is not tracked in this trajectory")]
    Untracked(String),
    #[error("compensators were not tracked in this run")]
    TrackingDisabled,
}

/// State the per-channel rates are computed from.
pub struct RateContext<'a> {
    pub pop: &'a Population,
    pub rates: &'a RateSpec,
    pub law: &'a FissionLaw,
}

impl CounterSet {
    pub fn new(tracking: bool, cov_keys: &[CovKey]) -> Self {
        let cov = cov_keys.iter().map(|k| (k.clone(), 0.0)).collect();
        Self { counters: BTreeMap::new(), cov, tracking }
    }

    pub fn tracking(&self) -> bool {
        self.tracking
    }

    pub fn count(&self, key: &CounterKey) -> u64 {
        self.counters.get(key).map_or(0, |l| l.count)
    }

    pub fn compensator(&self, key: &CounterKey) -> Result<f64, SelectorError> {
        if !self.tracking {
            return Err(SelectorError::TrackingDisabled);
        }
        self.counters
            .get(key)
            .map(|l| l.comp)
            .ok_or_else(|| SelectorError::Untracked(format!("{key:?}")))
    }

    /// Integrated predictable quadratic-variation rate for the
    /// compensated counter.
    pub fn qv(&self, key: &CounterKey) -> Result<f64, SelectorError> {
        if !self.tracking {
            return Err(SelectorError::TrackingDisabled);
        }
        self.counters
            .get(key)
            .map(|l| l.qv)
            .ok_or_else(|| SelectorError::Untracked(format!("{key:?}")))
    }

    pub fn covariance(&self, key: &CovKey) -> Result<f64, SelectorError> {
        if !self.tracking {
            return Err(SelectorError::TrackingDisabled);
        }
        self.cov
            .get(key)
            .copied()
            .ok_or_else(|| SelectorError::Untracked(format!("{key:?}")))
    }

    pub fn increment(&mut self, key: CounterKey, by: u64) {
        self.counters.entry(key).or_default().count += by;
    }

    pub fn keys(&self) -> impl Iterator<Item = &CounterKey> {
        self.counters.keys()
    }

    pub fn iter_counts(&self) -> impl Iterator<Item = (&CounterKey, u64)> {
        self.counters.iter().map(|(k, l)| (k, l.count))
    }

    /// Create ledger entries for every channel that can fire while `i`
    /// is occupied. Called when `i` first becomes occupied so that
    /// compensators accumulate from that moment on.
    pub fn ensure_channels(&mut self, i: &Composition, ctx: &RateContext) {
        if !self.tracking {
            return;
        }
        for k in 0..i.ell() {
            self.counters.entry(CounterKey::Birth { i: i.clone(), k }).or_default();
            self.counters.entry(CounterKey::Death { i: i.clone(), k }).or_default();
            self.counters.entry(CounterKey::Immigration { i: i.clone(), k }).or_default();
            self.counters.entry(CounterKey::Emigration { i: i.clone(), k }).or_default();
        }
        self.counters.entry(CounterKey::Fission { i: i.clone() }).or_default();
        self.counters.entry(CounterKey::Extinction { i: i.clone() }).or_default();
        if ctx.rates.phi(i) > 0.0 {
            for piece in ctx.law.offspring_support(i) {
                self.counters
                    .entry(CounterKey::FissionPiece { parent: i.clone(), piece })
                    .or_default();
            }
        }
    }

    /// Advance all tracked integrals by `dt` using the current rates.
    pub fn advance(&mut self, dt: f64, ctx: &RateContext) {
        if !self.tracking || dt <= 0.0 {
            return;
        }
        // Migration moment sums S_k = sum_i X(i) i_k mu^k(i).
        let ell = ctx.pop.ell();
        let mut mig_sum = vec![0.0f64; ell];
        for (i, x) in ctx.pop.iter() {
            for (k, s) in mig_sum.iter_mut().enumerate() {
                *s += x as f64 * i.get(k) as f64 * ctx.rates.mu(k, i);
            }
        }
        for (key, ledger) in self.counters.iter_mut() {
            let (rate, qv_rate) = channel_rates(key, ctx, &mig_sum);
            ledger.comp += rate * dt;
            ledger.qv += qv_rate * dt;
        }
        for (key, integral) in self.cov.iter_mut() {
            *integral += cov_rate(key, ctx) * dt;
        }
    }

    /// Replay the counters on top of `x0` through the balance identity
    /// and return the implied final population. Exact integer
    /// arithmetic; errors if any intermediate count would be negative.
    pub fn reconstruct(&self, x0: &Population) -> Result<Population, ReconstructError> {
        let ell = x0.ell();
        let mut delta: BTreeMap<Composition, i64> = BTreeMap::new();
        let mut bump = |c: Composition, by: i64| {
            if !c.is_zero() {
                *delta.entry(c).or_insert(0) += by;
            }
        };
        for (key, ledger) in &self.counters {
            let c = ledger.count as i64;
            if c == 0 {
                continue;
            }
            match key {
                CounterKey::Birth { i, k } | CounterKey::Immigration { i, k } => {
                    bump(i.clone(), -c);
                    bump(i.plus_unit(*k), c);
                }
                CounterKey::Death { i, k } | CounterKey::Emigration { i, k } => {
                    bump(i.clone(), -c);
                    bump(i.minus_unit(*k), c);
                }
                CounterKey::Fission { i } | CounterKey::Extinction { i } => {
                    bump(i.clone(), -c);
                }
                CounterKey::FissionPiece { piece, .. } => {
                    bump(piece.clone(), c);
                }
            }
        }
        let mut out = Population::new(ell);
        for (i, x) in x0.iter() {
            *delta.entry(i.clone()).or_insert(0) += x as i64;
        }
        for (i, v) in delta {
            if v < 0 {
                return Err(ReconstructError { composition: i, count: v });
            }
            if v > 0 {
                out.insert(i, v as u64);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Error)]
#[error("balance reconstruction produced negative count {count} for {composition}")]
pub struct ReconstructError {
    pub composition: Composition,
    pub count: i64,
}

/// (compensator rate, QV rate) of a counter in the given state.
fn channel_rates(key: &CounterKey, ctx: &RateContext, mig_sum: &[f64]) -> (f64, f64) {
    let pop = ctx.pop;
    let total = pop.group_total() as f64;
    let same = |r: f64| (r, r);
    match key {
        CounterKey::Birth { i, k } => {
            same(pop.count(i) as f64 * i.get(*k) as f64 * ctx.rates.beta(*k, i))
        }
        CounterKey::Death { i, k } => {
            same(pop.count(i) as f64 * i.get(*k) as f64 * ctx.rates.delta(*k, i))
        }
        CounterKey::Immigration { i, k } => {
            let x = pop.count(i) as f64;
            if x == 0.0 || total == 0.0 {
                return (0.0, 0.0);
            }
            let own = x * i.get(*k) as f64 * ctx.rates.mu(*k, i);
            same((mig_sum[*k] - own) * x / total)
        }
        CounterKey::Emigration { i, k } => {
            let x = pop.count(i) as f64;
            if x == 0.0 || total == 0.0 {
                return (0.0, 0.0);
            }
            same(x * i.get(*k) as f64 * ctx.rates.mu(*k, i) * (1.0 - x / total))
        }
        CounterKey::Fission { i } => same(pop.count(i) as f64 * ctx.rates.phi(i)),
        CounterKey::FissionPiece { parent, piece } => {
            let base = pop.count(parent) as f64 * ctx.rates.phi(parent);
            (
                base * ctx.law.eta(parent, piece),
                base * ctx.law.alpha(parent, piece),
            )
        }
        CounterKey::Extinction { i } => {
            same(pop.count(i) as f64 * total * ctx.rates.epsilon(i))
        }
    }
}

fn cov_rate(key: &CovKey, ctx: &RateContext) -> f64 {
    let pop = ctx.pop;
    let total = pop.group_total() as f64;
    match key {
        CovKey::FissionPieces { parent, a, b } => {
            pop.count(parent) as f64 * ctx.rates.phi(parent) * ctx.law.cross_moment(parent, a, b)
        }
        CovKey::Migration { into, from, k } => {
            if into == from || total == 0.0 {
                return 0.0;
            }
            pop.count(from) as f64
                * from.get(*k) as f64
                * ctx.rates.mu(*k, from)
                * pop.count(into) as f64
                / total
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::comp;
    use crate::rates::{CoefForm, ScaledRate};

    fn const_rate(v: f64) -> ScaledRate {
        ScaledRate::LimitForm { coef: CoefForm::Constant { value: v }, n: 1, denom: 1.0 }
    }

    fn rates_all(v: f64) -> RateSpec {
        RateSpec::new(
            1,
            vec![const_rate(v)],
            vec![const_rate(v)],
            vec![const_rate(v)],
            const_rate(v),
            const_rate(v),
        )
    }

    #[test]
    fn advance_integrates_piecewise_constant_rates() {
        let rates = rates_all(1.0);
        let law = FissionLaw::UniformBinary;
        let mut pop = Population::new(1);
        pop.insert(comp(&[2]), 3);
        let mut counters = CounterSet::new(true, &[]);
        let ctx = RateContext { pop: &pop, rates: &rates, law: &law };
        counters.ensure_channels(&comp(&[2]), &ctx);
        counters.advance(0.5, &ctx);
        // Birth rate = X * i_1 * beta = 3 * 2 * 1.
        let b = counters
            .compensator(&CounterKey::Birth { i: comp(&[2]), k: 0 })
            .unwrap();
        assert!((b - 3.0).abs() < 1e-12);
        // Extinction rate = X * X* * eps = 3 * 3 * 1.
        let e = counters
            .compensator(&CounterKey::Extinction { i: comp(&[2]) })
            .unwrap();
        assert!((e - 4.5).abs() < 1e-12);
        // Only one occupied composition: emigration is a no-op, rate 0.
        let m = counters
            .compensator(&CounterKey::Emigration { i: comp(&[2]), k: 0 })
            .unwrap();
        assert!(m.abs() < 1e-12);
        // Piece QV uses alpha: for parent (2), piece (1), alpha = 2 eta.
        let key = CounterKey::FissionPiece { parent: comp(&[2]), piece: comp(&[1]) };
        let eta_int = counters.compensator(&key).unwrap();
        let alpha_int = counters.qv(&key).unwrap();
        assert!((alpha_int - 2.0 * eta_int).abs() < 1e-12);
    }

    #[test]
    fn migration_compensators_split_by_destination_share() {
        // Two occupied compositions: (1) with two groups and (2) with
        // one. For type 0 with mu = 0.7:
        //   emigration from (1): X i mu (1 - X/X*) = 2*1*0.7*(1/3)
        //   emigration from (2): 1*2*0.7*(2/3)
        //   immigration into (1): [sum - own] * X/X* = (1.4)*2/3
        //   immigration into (2): (1.4)*1/3
        // where sum = 2*1*0.7 + 1*2*0.7 = 2.8 and own terms mirror it.
        let rates = RateSpec::new(
            1,
            vec![const_rate(0.0)],
            vec![const_rate(0.0)],
            vec![const_rate(0.7)],
            const_rate(0.0),
            const_rate(0.0),
        );
        let law = FissionLaw::NonproperOnly;
        let mut pop = Population::new(1);
        pop.insert(comp(&[1]), 2);
        pop.insert(comp(&[2]), 1);
        let mut counters = CounterSet::new(true, &[]);
        let ctx = RateContext { pop: &pop, rates: &rates, law: &law };
        counters.ensure_channels(&comp(&[1]), &ctx);
        counters.ensure_channels(&comp(&[2]), &ctx);
        counters.advance(1.0, &ctx);
        let get = |key: &CounterKey| counters.compensator(key).unwrap();
        let emi1 = get(&CounterKey::Emigration { i: comp(&[1]), k: 0 });
        let emi2 = get(&CounterKey::Emigration { i: comp(&[2]), k: 0 });
        let imm1 = get(&CounterKey::Immigration { i: comp(&[1]), k: 0 });
        let imm2 = get(&CounterKey::Immigration { i: comp(&[2]), k: 0 });
        assert!((emi1 - 2.0 * 0.7 / 3.0).abs() < 1e-12);
        assert!((emi2 - 1.4 * 2.0 / 3.0).abs() < 1e-12);
        assert!((imm1 - 1.4 * 2.0 / 3.0).abs() < 1e-12);
        assert!((imm2 - 1.4 / 3.0).abs() < 1e-12);
        // each emigration lands somewhere else: totals balance exactly
        assert!((emi1 + emi2 - (imm1 + imm2)).abs() < 1e-12);
    }

    #[test]
    fn reconstruct_replays_counters() {
        let mut x0 = Population::new(1);
        x0.insert(comp(&[1]), 2);
        let mut counters = CounterSet::new(false, &[]);
        // one birth (1) -> (2), then a fission of (2) into {1, 1}
        counters.increment(CounterKey::Birth { i: comp(&[1]), k: 0 }, 1);
        counters.increment(CounterKey::Fission { i: comp(&[2]) }, 1);
        counters.increment(
            CounterKey::FissionPiece { parent: comp(&[2]), piece: comp(&[1]) },
            2,
        );
        let end = counters.reconstruct(&x0).unwrap();
        assert_eq!(end.count(&comp(&[1])), 3);
        assert_eq!(end.count(&comp(&[2])), 0);
    }

    #[test]
    fn reconstruct_detects_impossible_counts() {
        let x0 = Population::new(1);
        let mut counters = CounterSet::new(false, &[]);
        counters.increment(CounterKey::Extinction { i: comp(&[1]) }, 1);
        assert!(counters.reconstruct(&x0).is_err());
    }

    #[test]
    fn untracked_selector_is_an_error() {
        let counters = CounterSet::new(true, &[]);
        assert!(counters.compensator(&CounterKey::Fission { i: comp(&[1]) }).is_err());
        let counters = CounterSet::new(false, &[]);
        assert!(matches!(
            counters.compensator(&CounterKey::Fission { i: comp(&[1]) }),
            Err(SelectorError::TrackingDisabled)
        ));
    }
}

//! Exact event-driven simulation of the group-structured population.
//!
//! # Algorithm
//!
//! Direct-method kinetic Monte Carlo over aggregated channels. Groups
//! of equal composition are exchangeable, so propensities are keyed by
//! (composition, channel kind) instead of per group:
//!
//! - birth of type k in `i`-groups:      `X(i) i_k beta^k(i)`
//! - death of type k in `i`-groups:      `X(i) i_k delta^k(i)`
//! - migration of type k out of `i`:     `X(i) i_k mu^k(i)`
//! - fission of an `i`-group:            `X(i) phi(i)`
//! - extinction of an `i`-group:         `X(i) X* epsilon(i)`
//!
//! Channels live in binary indexed trees for O(log C) selection. The
//! extinction weights `X(i) epsilon(i)` sit in their own tree so the
//! global `X*` factor multiplies one running total instead of touching
//! every slot. Trees are rebuilt from scratch every `2^16` events to
//! bound floating-point drift in the running totals.
//!
//! A migrating individual picks a destination group with probability
//! `X(i')/X*` over the pre-event state, its own group included. If the
//! destination composition equals the source composition the event is
//! a no-op: no counters move and the state is unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::fission::FissionLaw;
use crate::population::{Composition, Population};
use crate::rates::RateSpec;

use super::counters::{CounterKey, CounterSet, CovKey, RateContext};
use super::weights::WeightTree;

const REBUILD_PERIOD: u64 = 1 << 16;

#[derive(Debug, Clone, Serialize)]
pub enum EventKind {
    Birth { i: Composition, k: usize },
    Death { i: Composition, k: usize },
    /// `to` is the destination composition before the arrival.
    Migration { from: Composition, to: Composition, k: usize, noop: bool },
    Fission { parent: Composition, pieces: Vec<Composition> },
    Extinction { i: Composition },
}

#[derive(Debug, Clone, Serialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
}

/// Per-composition slot assignment in the selection trees.
#[derive(Debug, Clone, Copy)]
struct Slots {
    /// First of `3*ell + 1` consecutive slots in the main tree:
    /// births, deaths, migrations per type, then fission.
    main: usize,
    ext: usize,
    dest: usize,
}

#[derive(Debug, Clone)]
struct ChannelTable {
    slots: std::collections::BTreeMap<Composition, Slots>,
    main: WeightTree,
    main_keys: Vec<(Composition, usize)>, // (composition, offset within bundle)
    ext: WeightTree,
    ext_keys: Vec<Composition>,
    dest: WeightTree,
    dest_keys: Vec<Composition>,
    ell: usize,
}

impl ChannelTable {
    fn build(pop: &Population, rates: &RateSpec) -> Self {
        let mut table = Self {
            slots: Default::default(),
            main: WeightTree::new(),
            main_keys: Vec::new(),
            ext: WeightTree::new(),
            ext_keys: Vec::new(),
            dest: WeightTree::new(),
            dest_keys: Vec::new(),
            ell: rates.ell(),
        };
        for (i, _) in pop.iter() {
            table.ensure(i);
            table.refresh(i, pop, rates);
        }
        table
    }

    fn ensure(&mut self, i: &Composition) {
        if self.slots.contains_key(i) {
            return;
        }
        let main = self.main.len();
        for off in 0..(3 * self.ell + 1) {
            self.main.push(0.0);
            self.main_keys.push((i.clone(), off));
        }
        let ext = self.ext.push(0.0);
        self.ext_keys.push(i.clone());
        let dest = self.dest.push(0.0);
        self.dest_keys.push(i.clone());
        self.slots.insert(i.clone(), Slots { main, ext, dest });
    }

    fn refresh(&mut self, i: &Composition, pop: &Population, rates: &RateSpec) {
        let slots = self.slots[i];
        let x = pop.count(i) as f64;
        for k in 0..self.ell {
            let ik = i.get(k) as f64;
            self.main.set(slots.main + 3 * k, x * ik * rates.beta(k, i));
            self.main.set(slots.main + 3 * k + 1, x * ik * rates.delta(k, i));
            self.main.set(slots.main + 3 * k + 2, x * ik * rates.mu(k, i));
        }
        self.main.set(slots.main + 3 * self.ell, x * rates.phi(i));
        self.ext.set(slots.ext, x * rates.epsilon(i));
        self.dest.set(slots.dest, x);
    }

    fn total_rate(&self, pop: &Population) -> f64 {
        self.main.total() + pop.group_total() as f64 * self.ext.total()
    }
}

/// What kind of channel a main-tree offset encodes.
enum MainChannel {
    Birth(usize),
    Death(usize),
    Migrate(usize),
    Fission,
}

fn decode_offset(off: usize, ell: usize) -> MainChannel {
    if off == 3 * ell {
        MainChannel::Fission
    } else {
        match off % 3 {
            0 => MainChannel::Birth(off / 3),
            1 => MainChannel::Death(off / 3),
            _ => MainChannel::Migrate(off / 3),
        }
    }
}

/// One row of the aggregated channel table.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEntry {
    pub comp: Composition,
    pub label: ChannelLabel,
    pub propensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelLabel {
    Birth(usize),
    Death(usize),
    Migration(usize),
    Fission,
    Extinction,
}

/// Exact per-channel propensities for the current population, plus the
/// total rate. Zero-propensity channels are omitted.
pub fn aggregate_rates(pop: &Population, rates: &RateSpec) -> (Vec<ChannelEntry>, f64) {
    let total_groups = pop.group_total() as f64;
    let mut entries = Vec::new();
    for (i, x) in pop.iter() {
        let x = x as f64;
        for k in 0..pop.ell() {
            let ik = i.get(k) as f64;
            for (label, rate) in [
                (ChannelLabel::Birth(k), rates.beta(k, i)),
                (ChannelLabel::Death(k), rates.delta(k, i)),
                (ChannelLabel::Migration(k), rates.mu(k, i)),
            ] {
                let p = x * ik * rate;
                if p > 0.0 {
                    entries.push(ChannelEntry { comp: i.clone(), label, propensity: p });
                }
            }
        }
        let pf = x * rates.phi(i);
        if pf > 0.0 {
            entries.push(ChannelEntry { comp: i.clone(), label: ChannelLabel::Fission, propensity: pf });
        }
        let pe = x * total_groups * rates.epsilon(i);
        if pe > 0.0 {
            entries.push(ChannelEntry { comp: i.clone(), label: ChannelLabel::Extinction, propensity: pe });
        }
    }
    let total = entries.iter().map(|e| e.propensity).sum();
    (entries, total)
}

/// Simulation state: clock, population, counters and selection tables.
pub struct SimState {
    pub t: f64,
    pub pop: Population,
    pub counters: CounterSet,
    rng: ChaCha8Rng,
    table: ChannelTable,
    events_since_rebuild: u64,
    pub n_events: u64,
}

impl SimState {
    pub fn new(
        x0: Population,
        rates: &RateSpec,
        law: &FissionLaw,
        seed: u64,
        track_compensators: bool,
        cov_keys: &[CovKey],
    ) -> Self {
        let table = ChannelTable::build(&x0, rates);
        let mut counters = CounterSet::new(track_compensators, cov_keys);
        {
            let ctx = RateContext { pop: &x0, rates, law };
            for (i, _) in x0.iter() {
                counters.ensure_channels(i, &ctx);
            }
        }
        Self {
            t: 0.0,
            pop: x0,
            counters,
            rng: ChaCha8Rng::seed_from_u64(seed),
            table,
            events_since_rebuild: 0,
            n_events: 0,
        }
    }

    pub fn total_rate(&self) -> f64 {
        self.table.total_rate(&self.pop)
    }

    /// Advance by one exponential holding time and fire one event.
    /// Returns `None` when every channel has rate zero. Panics if the
    /// population is already extinct.
    pub fn step(&mut self, rates: &RateSpec, law: &FissionLaw) -> Option<EventRecord> {
        assert!(self.pop.group_total() > 0, "step called on an extinct population");
        let total = self.total_rate();
        if total <= 0.0 {
            return None;
        }
        let dt = self.sample_holding(total);
        {
            let ctx = RateContext { pop: &self.pop, rates, law };
            self.counters.advance(dt, &ctx);
        }
        let t_event = self.t + dt;
        self.t = t_event;
        Some(self.fire(t_event, rates, law))
    }

    /// Draw the next holding time. Does not advance the clock.
    fn sample_holding(&mut self, total: f64) -> f64 {
        let u: f64 = self.rng.gen();
        -(1.0 - u).ln() / total
    }

    /// Execute one event at time `t_event` (the caller has already
    /// advanced compensators over the holding interval). Panics if the
    /// population is empty.
    fn fire(&mut self, t_event: f64, rates: &RateSpec, law: &FissionLaw) -> EventRecord {
        assert!(self.pop.group_total() > 0, "step called on an extinct population");
        let main_total = self.table.main.total();
        let ext_scale = self.pop.group_total() as f64;
        let total = main_total + ext_scale * self.table.ext.total();
        let r = self.rng.gen::<f64>() * total;

        let mut touched: Vec<Composition> = Vec::with_capacity(4);
        let kind = if r < main_total || self.table.ext.total() <= 0.0 {
            let idx = self.table.main.select(r.min(main_total));
            let (i, off) = self.table.main_keys[idx].clone();
            match decode_offset(off, self.table.ell) {
                MainChannel::Birth(k) => {
                    let to = i.plus_unit(k);
                    self.pop.remove_one(&i);
                    self.pop.add_one(to.clone());
                    self.counters.increment(CounterKey::Birth { i: i.clone(), k }, 1);
                    touched.push(i.clone());
                    touched.push(to);
                    EventKind::Birth { i, k }
                }
                MainChannel::Death(k) => {
                    let to = i.minus_unit(k);
                    self.pop.remove_one(&i);
                    if !to.is_zero() {
                        self.pop.add_one(to.clone());
                        touched.push(to);
                    }
                    self.counters.increment(CounterKey::Death { i: i.clone(), k }, 1);
                    touched.push(i.clone());
                    EventKind::Death { i, k }
                }
                MainChannel::Migrate(k) => {
                    // Destination drawn over the pre-event state.
                    let d = self.rng.gen::<f64>() * self.table.dest.total();
                    let didx = self.table.dest.select(d);
                    let dest = self.table.dest_keys[didx].clone();
                    if dest == i {
                        EventKind::Migration { from: i, to: dest, k, noop: true }
                    } else {
                        let from_after = i.minus_unit(k);
                        let dest_after = dest.plus_unit(k);
                        self.pop.remove_one(&i);
                        if !from_after.is_zero() {
                            self.pop.add_one(from_after.clone());
                            touched.push(from_after);
                        }
                        self.pop.remove_one(&dest);
                        self.pop.add_one(dest_after.clone());
                        self.counters
                            .increment(CounterKey::Emigration { i: i.clone(), k }, 1);
                        self.counters
                            .increment(CounterKey::Immigration { i: dest.clone(), k }, 1);
                        touched.push(i.clone());
                        touched.push(dest.clone());
                        touched.push(dest_after);
                        EventKind::Migration { from: i, to: dest, k, noop: false }
                    }
                }
                MainChannel::Fission => {
                    let pieces = law.sample_partition(&i, &mut self.rng);
                    self.pop.remove_one(&i);
                    self.counters.increment(CounterKey::Fission { i: i.clone() }, 1);
                    for piece in &pieces {
                        self.pop.add_one(piece.clone());
                        self.counters.increment(
                            CounterKey::FissionPiece { parent: i.clone(), piece: piece.clone() },
                            1,
                        );
                        touched.push(piece.clone());
                    }
                    touched.push(i.clone());
                    EventKind::Fission { parent: i, pieces }
                }
            }
        } else {
            let target = (r - main_total) / ext_scale;
            let idx = self.table.ext.select(target.min(self.table.ext.total()));
            let i = self.table.ext_keys[idx].clone();
            self.pop.remove_one(&i);
            self.counters.increment(CounterKey::Extinction { i: i.clone() }, 1);
            touched.push(i.clone());
            EventKind::Extinction { i }
        };

        touched.sort();
        touched.dedup();
        for i in &touched {
            self.table.ensure(i);
            self.table.refresh(i, &self.pop, rates);
            if self.pop.count(i) > 0 {
                let ctx = RateContext { pop: &self.pop, rates, law };
                self.counters.ensure_channels(i, &ctx);
            }
        }

        self.n_events += 1;
        self.events_since_rebuild += 1;
        if self.events_since_rebuild >= REBUILD_PERIOD {
            self.table = ChannelTable::build(&self.pop, rates);
            self.events_since_rebuild = 0;
        }
        EventRecord { time: t_event, kind }
    }
}

/// Options for one simulation run.
#[derive(Debug, Clone)]
pub struct SimOptions {
    pub horizon: f64,
    pub snapshot_times: Vec<f64>,
    pub track_compensators: bool,
    pub cov_keys: Vec<CovKey>,
    pub log_events: bool,
}

impl SimOptions {
    pub fn new(horizon: f64, snapshot_times: Vec<f64>) -> Self {
        Self {
            horizon,
            snapshot_times,
            track_compensators: false,
            cov_keys: Vec::new(),
            log_events: false,
        }
    }
}

/// One completed run: sampled states, final counters, optional event log.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub seed: u64,
    pub initial: Population,
    pub snapshots: Vec<(f64, Population)>,
    /// Counter snapshots at the same times, present when compensators
    /// were tracked.
    pub counter_snapshots: Vec<(f64, CounterSet)>,
    pub final_pop: Population,
    pub counters: CounterSet,
    pub events: Vec<EventRecord>,
    pub n_events: u64,
}

impl Trajectory {
    fn require_tracking(&self) -> Result<(), super::counters::SelectorError> {
        if self.counters.tracking() {
            Ok(())
        } else {
            Err(super::counters::SelectorError::TrackingDisabled)
        }
    }

    /// Compensated counter path `count - integral` at snapshot times.
    pub fn compensator_residual(
        &self,
        key: &CounterKey,
    ) -> Result<Vec<(f64, f64)>, super::counters::SelectorError> {
        self.require_tracking()?;
        self.counter_snapshots
            .iter()
            .map(|(t, c)| Ok((*t, c.count(key) as f64 - c.compensator(key)?)))
            .collect()
    }

    /// Predicted quadratic variation of the compensated counter at
    /// snapshot times.
    pub fn predicted_qv(
        &self,
        key: &CounterKey,
    ) -> Result<Vec<(f64, f64)>, super::counters::SelectorError> {
        self.require_tracking()?;
        self.counter_snapshots
            .iter()
            .map(|(t, c)| Ok((*t, c.qv(key)?)))
            .collect()
    }

    /// Predicted covariance integral for a tracked pair.
    pub fn predicted_cov(
        &self,
        key: &CovKey,
    ) -> Result<Vec<(f64, f64)>, super::counters::SelectorError> {
        self.require_tracking()?;
        self.counter_snapshots
            .iter()
            .map(|(t, c)| Ok((*t, c.covariance(key)?)))
            .collect()
    }
}

/// Run one trajectory. Deterministic given (initial population, rates,
/// law, options, seed). After total extinction the state is absorbing
/// and remaining snapshots record the empty population.
pub fn simulate(
    x0: Population,
    rates: &RateSpec,
    law: &FissionLaw,
    opts: &SimOptions,
    seed: u64,
) -> Trajectory {
    let mut snap_times = opts.snapshot_times.clone();
    snap_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    snap_times.retain(|&t| t <= opts.horizon + 1e-12);

    let mut state = SimState::new(
        x0.clone(),
        rates,
        law,
        seed,
        opts.track_compensators,
        &opts.cov_keys,
    );
    let mut snapshots = Vec::with_capacity(snap_times.len());
    let mut counter_snapshots = Vec::new();
    let mut events = Vec::new();
    let mut next_snap = 0usize;

    let take_snaps_through =
        |upto: f64,
         state: &mut SimState,
         next_snap: &mut usize,
         snapshots: &mut Vec<(f64, Population)>,
         counter_snapshots: &mut Vec<(f64, CounterSet)>| {
            while *next_snap < snap_times.len() && snap_times[*next_snap] <= upto {
                let ts = snap_times[*next_snap];
                let dt = ts - state.t;
                let ctx = RateContext { pop: &state.pop, rates, law };
                state.counters.advance(dt, &ctx);
                state.t = ts;
                snapshots.push((ts, state.pop.clone()));
                if opts.track_compensators {
                    counter_snapshots.push((ts, state.counters.clone()));
                }
                *next_snap += 1;
            }
        };

    loop {
        let total = state.total_rate();
        if state.pop.is_empty() || total <= 0.0 {
            // Absorbing (or frozen) state: emit the remaining snapshots.
            take_snaps_through(
                opts.horizon,
                &mut state,
                &mut next_snap,
                &mut snapshots,
                &mut counter_snapshots,
            );
            state.t = opts.horizon;
            break;
        }
        let dt = state.sample_holding(total);
        let t_event = state.t + dt;
        let upto = t_event.min(opts.horizon);
        take_snaps_through(
            upto,
            &mut state,
            &mut next_snap,
            &mut snapshots,
            &mut counter_snapshots,
        );
        if t_event > opts.horizon {
            let ctx = RateContext { pop: &state.pop, rates, law };
            state.counters.advance(opts.horizon - state.t, &ctx);
            state.t = opts.horizon;
            break;
        }
        {
            let ctx = RateContext { pop: &state.pop, rates, law };
            state.counters.advance(t_event - state.t, &ctx);
        }
        state.t = t_event;
        let record = state.fire(t_event, rates, law);
        if opts.log_events {
            events.push(record);
        }
    }

    Trajectory {
        seed,
        initial: x0,
        snapshots,
        counter_snapshots,
        final_pop: state.pop,
        counters: state.counters,
        events,
        n_events: state.n_events,
    }
}


#[cfg(test)]
mod contract_tests {
    use super::*;
    use crate::population::comp;
    use crate::rates::{CoefForm, ScaledRate};

    #[test]
    #[should_panic(expected = "extinct population")]
    fn stepping_an_extinct_population_is_a_contract_violation() {
        let rate = ScaledRate::LimitForm { coef: CoefForm::Constant { value: 1.0 }, n: 1, denom: 1.0 };
        let rates = RateSpec::new(
            1,
            vec![rate.clone()],
            vec![rate.clone()],
            vec![rate.clone()],
            rate.clone(),
            rate,
        );
        let law = FissionLaw::NonproperOnly;
        let mut state = SimState::new(Population::new(1), &rates, &law, 0, false, &[]);
        let _ = state.step(&rates, &law);
    }

    #[test]
    fn extinction_absorbs_and_snapshots_stay_empty() {
        let rate0 = ScaledRate::LimitForm { coef: CoefForm::Constant { value: 0.0 }, n: 1, denom: 1.0 };
        let eps = ScaledRate::LimitForm { coef: CoefForm::Constant { value: 5.0 }, n: 1, denom: 1.0 };
        let rates = RateSpec::new(
            1,
            vec![rate0.clone()],
            vec![rate0.clone()],
            vec![rate0.clone()],
            rate0,
            eps,
        );
        let mut pop = Population::new(1);
        pop.insert(comp(&[2]), 3);
        let opts = SimOptions::new(50.0, vec![10.0, 25.0, 50.0]);
        let traj = simulate(pop, &rates, &FissionLaw::NonproperOnly, &opts, 4);
        assert!(traj.final_pop.is_empty());
        assert_eq!(traj.n_events, 3);
        for (_, snap) in &traj.snapshots {
            assert!(snap.is_empty());
        }
    }
}

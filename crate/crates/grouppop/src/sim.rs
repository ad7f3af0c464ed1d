//! Event-driven simulation of the two-level population process.

pub mod counters;
pub mod engine;
mod weights;

pub use counters::{CounterKey, CounterSet, CovKey, RateContext, SelectorError};
pub use engine::{
    aggregate_rates, simulate, ChannelEntry, ChannelLabel, EventKind, EventRecord, SimOptions,
    SimState, Trajectory,
};

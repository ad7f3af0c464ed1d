//! Convergence studies: replicas of the scaled Markov model compared
//! against one reference solve of the limit equation, across a ladder
//! of scaling pairs.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ScenarioConfig, StudyMode};
use crate::metrics::{pairing_bank, MeasureRef, TestFunctionBank};
use crate::pde::scheme::{solve, SolveResult, SolverOptions};
use crate::pde::PdeError;
use crate::report::replica_seed;
use crate::scale::{density_step_function, empirical_measure, ScalingParams};
use crate::sim::{simulate, SimOptions};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("study needs a density initial condition")]
    NeedsDensityInitial,
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Init(#[from] crate::init::InitError),
    #[error("{failed} of {total} replicas failed, above the 10% quarantine threshold")]
    TooManyFailures { failed: usize, total: usize },
    #[error("mass escaping the truncation box ({escaped:.3e}) exceeds the configured alarm ({alarm:.3e})")]
    EscapeAlarm { escaped: f64, alarm: f64 },
}

/// Per-(mode, rung, time) summary over replicas.
#[derive(Debug, Clone, Serialize)]
pub struct RungStat {
    pub mode: StudyMode,
    pub n: u64,
    pub m: u64,
    pub t: f64,
    pub rho_w_median: f64,
    pub rho_w_iqr: f64,
    pub mass_gap_median: f64,
    pub mass_gap_iqr: f64,
    pub moment_gap_median: f64,
    pub moment_gap_iqr: f64,
}

/// Median pairing gap for one test function of the density-mode bank.
#[derive(Debug, Clone, Serialize)]
pub struct PairingStat {
    pub mode: StudyMode,
    pub n: u64,
    pub m: u64,
    pub t: f64,
    pub g_index: usize,
    pub gap_median: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub config_hash: String,
    pub bank_seed: u64,
    pub bank_size: usize,
    pub rows: Vec<RungStat>,
    pub pairing_rows: Vec<PairingStat>,
    pub replica_seeds: Vec<u64>,
    pub failed_replicas: usize,
    pub total_replicas: usize,
    pub pde_escaped_mass: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    percentile(values, 0.5)
}

struct ReplicaOutcome {
    /// Per snapshot time: (rho_w, mass gap, moment gap); measure mode.
    measure_stats: Vec<(f64, f64, f64)>,
    /// Per snapshot time: per-g pairing gap; density mode.
    pairing_gaps: Vec<Vec<f64>>,
    extinct: bool,
}

/// Simulation output before any comparison: the sampled populations.
struct RawReplica {
    snapshots: Vec<crate::population::Population>,
    extinct: bool,
}

/// Run the full study. The reference solve and the replica batches run
/// concurrently; replica panics are quarantined and the study fails
/// once more than 10% of a rung's replicas have failed.
pub fn run_convergence_study(
    config: &ScenarioConfig,
    seed_offset: u64,
) -> Result<ConvergenceReport, StudyError> {
    let x0 = config.initial_density().ok_or(StudyError::NeedsDensityInitial)?;
    let coeffs = config.limit_coefficients();
    let snap_times = config.snapshot_times();
    let solver_opts = SolverOptions {
        dt: config.pde.dt,
        horizon: config.scenario.horizon,
        snapshot_times: snap_times.clone(),
        mass_floor: config.pde.mass_floor,
        split_order: config.pde.split_order,
        store_all: false,
    };

    // Ladder layout and per-replica seeds, fixed up front.
    let law = config.law().expect("validated config");
    let mut layout = Vec::new();
    for (mode_idx, &mode) in config.ladder.modes.iter().enumerate() {
        for (rung_idx, &rung) in config.ladder.rungs.iter().enumerate() {
            let seeds: Vec<u64> = (0..config.replicas.count)
                .map(|r| {
                    replica_seed(
                        config.replicas.base_seed,
                        seed_offset,
                        mode_idx as u64,
                        rung_idx as u64,
                        r as u64,
                    )
                })
                .collect();
            layout.push((mode, rung, seeds));
        }
    }

    // Phase 1: reference solve concurrently with the replica batches.
    let (reference, raw_batches): (
        Result<_, crate::pde::PdeError>,
        Vec<Vec<Option<RawReplica>>>,
    ) = rayon::join(
        || solve(&coeffs, &x0, &solver_opts),
        || {
            layout
                .iter()
                .map(|(mode, rung, seeds)| {
                    let rates = config.rates_for(*rung, *mode);
                    seeds
                        .par_iter()
                        .map(|&seed| {
                            std::panic::catch_unwind(|| {
                                let x0 = config
                                    .initial_population(*rung, *mode, seed)
                                    .expect("initial sampling failed");
                                let opts =
                                    SimOptions::new(config.scenario.horizon, snap_times.clone());
                                let traj = simulate(x0, &rates, &law, &opts, seed);
                                // every replica must replay exactly
                                // through the balance identity
                                let rebuilt = traj
                                    .counters
                                    .reconstruct(&traj.initial)
                                    .expect("balance replay failed");
                                assert_eq!(rebuilt, traj.final_pop, "balance identity violated");
                                RawReplica {
                                    extinct: traj.final_pop.is_empty(),
                                    snapshots: traj
                                        .snapshots
                                        .into_iter()
                                        .map(|(_, pop)| pop)
                                        .collect(),
                                }
                            })
                            .ok()
                        })
                        .collect()
                })
                .collect()
        },
    );
    let reference = reference?;
    if reference.escaped_mass > config.pde.escape_alarm {
        return Err(StudyError::EscapeAlarm {
            escaped: reference.escaped_mass,
            alarm: config.pde.escape_alarm,
        });
    }

    // Reference-side pairings per snapshot time.
    let ell = config.scenario.ell;
    let bank = TestFunctionBank::build(
        ell,
        config.pde.u_max,
        config.metrics.bank_size,
        config.metrics.bank_seed,
    );
    let gbank = pairing_bank(ell, config.pde.u_max);
    let ref_bank_pairs: Vec<Vec<f64>> = reference
        .snapshots
        .iter()
        .map(|(_, grid)| {
            bank.members
                .iter()
                .map(|f| MeasureRef::Density(grid).pair(|u| f.eval(u)))
                .collect()
        })
        .collect();
    let ref_moments: Vec<(f64, Vec<f64>)> = reference
        .snapshots
        .iter()
        .map(|(_, grid)| (grid.mass(), grid.first_moments()))
        .collect();
    let ref_g_pairs: Vec<Vec<f64>> = reference
        .snapshots
        .iter()
        .map(|(_, grid)| {
            gbank
                .iter()
                .map(|g| MeasureRef::Density(grid).pair(|u| g.eval(u)))
                .collect()
        })
        .collect();

    let mut report = ConvergenceReport {
        config_hash: config.hash.clone(),
        bank_seed: bank.seed,
        bank_size: bank.len(),
        rows: Vec::new(),
        pairing_rows: Vec::new(),
        replica_seeds: Vec::new(),
        failed_replicas: 0,
        total_replicas: 0,
        pde_escaped_mass: reference.escaped_mass,
    };

    // Phase 2: per-replica comparisons and ladder statistics.
    for ((mode, rung, seeds), raws) in layout.iter().zip(raw_batches) {
        let (mode, rung) = (*mode, *rung);
        report.replica_seeds.extend(seeds);
        report.total_replicas += seeds.len();
        let failed = raws.iter().filter(|o| o.is_none()).count();
        report.failed_replicas += failed;
        if failed * 10 > seeds.len() {
            return Err(StudyError::TooManyFailures { failed, total: seeds.len() });
        }
        let s = ScalingParams::new(rung.n, rung.m);
        let outcomes: Vec<ReplicaOutcome> = raws
            .par_iter()
            .flatten()
            .map(|raw| {
                let mut measure_stats = Vec::new();
                let mut pairing_gaps = Vec::new();
                for (ti, pop) in raw.snapshots.iter().enumerate() {
                    match mode {
                        StudyMode::Measure => {
                            let emp = empirical_measure(pop, s);
                            let measure = MeasureRef::Atoms(&emp);
                            let mut worst = 0.0f64;
                            for (f, ref_pair) in bank.members.iter().zip(&ref_bank_pairs[ti]) {
                                worst =
                                    worst.max((measure.pair(|u| f.eval(u)) - ref_pair).abs());
                            }
                            let (mass, moment) = measure.moments(ell);
                            let (ref_mass, ref_moment) = &ref_moments[ti];
                            let moment_gap: f64 = moment
                                .iter()
                                .zip(ref_moment)
                                .map(|(a, b)| (a - b).abs())
                                .sum();
                            measure_stats.push((
                                worst,
                                (mass - ref_mass).abs(),
                                moment_gap,
                            ));
                        }
                        StudyMode::Density => {
                            let grid = density_step_function(pop, s);
                            let measure = MeasureRef::Density(&grid);
                            let gaps: Vec<f64> = gbank
                                .iter()
                                .zip(&ref_g_pairs[ti])
                                .map(|(g, ref_pair)| {
                                    (measure.pair(|u| g.eval(u)) - ref_pair).abs()
                                })
                                .collect();
                            pairing_gaps.push(gaps);
                        }
                    }
                }
                ReplicaOutcome { measure_stats, pairing_gaps, extinct: raw.extinct }
            })
            .collect();
        let kept: Vec<&ReplicaOutcome> = outcomes
            .iter()
            .filter(|o| !(config.replicas.censor_extinct && o.extinct))
            .collect();

        for (ti, &t) in snap_times.iter().enumerate() {
            match mode {
                StudyMode::Measure => {
                    let mut rho: Vec<f64> =
                        kept.iter().map(|o| o.measure_stats[ti].0).collect();
                    let mut mass: Vec<f64> =
                        kept.iter().map(|o| o.measure_stats[ti].1).collect();
                    let mut moment: Vec<f64> =
                        kept.iter().map(|o| o.measure_stats[ti].2).collect();
                    rho.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    mass.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    moment.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let iqr = |v: &[f64]| percentile(v, 0.75) - percentile(v, 0.25);
                    report.rows.push(RungStat {
                        mode,
                        n: rung.n,
                        m: rung.m,
                        t,
                        rho_w_median: percentile(&rho, 0.5),
                        rho_w_iqr: iqr(&rho),
                        mass_gap_median: percentile(&mass, 0.5),
                        mass_gap_iqr: iqr(&mass),
                        moment_gap_median: percentile(&moment, 0.5),
                        moment_gap_iqr: iqr(&moment),
                    });
                }
                StudyMode::Density => {
                    for g_index in 0..gbank.len() {
                        let mut gaps: Vec<f64> = kept
                            .iter()
                            .map(|o| o.pairing_gaps[ti][g_index])
                            .collect();
                        report.pairing_rows.push(PairingStat {
                            mode,
                            n: rung.n,
                            m: rung.m,
                            t,
                            g_index,
                            gap_median: median(&mut gaps),
                        });
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Reference PDE solve for the configured scenario.
pub fn reference_solve(config: &ScenarioConfig) -> Result<SolveResult, StudyError> {
    let x0 = config.initial_density().ok_or(StudyError::NeedsDensityInitial)?;
    let coeffs = config.limit_coefficients();
    let opts = SolverOptions {
        dt: config.pde.dt,
        horizon: config.scenario.horizon,
        snapshot_times: config.snapshot_times(),
        mass_floor: config.pde.mass_floor,
        split_order: config.pde.split_order,
        store_all: false,
    };
    Ok(solve(&coeffs, &x0, &opts)?)
}

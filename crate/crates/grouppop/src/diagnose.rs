//! Martingale, quadratic-variation and balance diagnostics.
//!
//! Runs a replica battery with compensator tracking on the first
//! ladder rung and checks, per counter family at a reference
//! composition: the compensated counter has mean within three standard
//! errors of zero, the replica variance matches the mean predicted
//! quadratic variation within 15%, and the fission and migration
//! covariances match their predicted brackets within 20%. Every
//! replica is also replayed through the balance identity, and every
//! logged fission is checked for exact conservation.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ScenarioConfig, StudyMode};
use crate::population::Composition;
use crate::report::replica_seed;
use crate::sim::{simulate, CounterKey, CovKey, EventKind, SimOptions, Trajectory};
use crate::study::StudyError;

#[derive(Debug, Clone, Serialize)]
pub struct DiagRow {
    pub check: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub config_hash: String,
    pub replicas: usize,
    pub fission_events: u64,
    pub rows: Vec<DiagRow>,
    pub replica_seeds: Vec<u64>,
}

impl DiagnosticsReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

fn row(check: impl Into<String>, value: f64, bound: f64) -> DiagRow {
    DiagRow { check: check.into(), value, bound, pass: value <= bound }
}

struct Extracted {
    residual: Vec<f64>,
    qv: Vec<f64>,
    comp: Vec<f64>,
}

fn extract(trajs: &[Trajectory], key: &CounterKey) -> Extracted {
    let mut residual = Vec::with_capacity(trajs.len());
    let mut qv = Vec::with_capacity(trajs.len());
    let mut comp = Vec::with_capacity(trajs.len());
    for t in trajs {
        let c = &t.counters;
        let integral = c.compensator(key).unwrap_or(0.0);
        residual.push(c.count(key) as f64 - integral);
        comp.push(integral);
        qv.push(c.qv(key).unwrap_or(0.0));
    }
    Extracted { residual, qv, comp }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (a.len() - 1) as f64
}

/// Per-family martingale checks: mean within 3 SE of zero and variance
/// within 15% of the mean predicted QV. Zero-rate channels must be
/// identically zero.
fn family_rows(rows: &mut Vec<DiagRow>, name: &str, ex: &Extracted) {
    let r = ex.residual.len() as f64;
    let qv_mean = mean(&ex.qv);
    if qv_mean == 0.0 {
        let worst = ex.residual.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        rows.push(row(format!("{name}: zero-rate channel residual"), worst, 0.0));
        return;
    }
    let sd = variance(&ex.residual).sqrt();
    let m = mean(&ex.residual).abs();
    rows.push(row(format!("{name}: |mean N_T| vs 3 SE"), m, 3.0 * sd / r.sqrt()));
    let var = variance(&ex.residual);
    rows.push(row(
        format!("{name}: |var N_T - mean QV| vs 15% of QV"),
        (var - qv_mean).abs(),
        0.15 * qv_mean,
    ));
}

/// Run the battery on the first ladder rung in measure mode.
pub fn run_diagnostics(
    config: &ScenarioConfig,
    seed_offset: u64,
) -> Result<DiagnosticsReport, StudyError> {
    let rung = config.ladder.rungs[0];
    let mode = StudyMode::Measure;
    let rates = config.rates_for(rung, mode);
    let law = config.law().expect("validated config");
    let replicas = config.diagnostics.replicas;
    let horizon = config.scenario.horizon;
    let ell = config.scenario.ell;

    // Reference compositions: the two most frequent initial ones.
    let probe_pop = config.initial_population(rung, mode, replica_seed(config.replicas.base_seed, seed_offset, 9, 9, 0))?;
    let mut by_count: Vec<(Composition, u64)> =
        probe_pop.iter().map(|(c, x)| (c.clone(), x)).collect();
    by_count.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let i0 = by_count[0].0.clone();
    let i1 = by_count.get(1).map(|(c, _)| c.clone());

    // A representative fission piece of i0 and its complement.
    let piece = Composition::new(
        i0.counts()
            .iter()
            .enumerate()
            .map(|(k, &c)| if k == 0 { (c / 2).max(1).min(c) } else { c / 2 })
            .collect(),
    );
    let complement = i0.checked_sub(&piece).filter(|c| !c.is_zero());

    let mut cov_keys = Vec::new();
    if let Some(ref comp2) = complement {
        if *comp2 != piece {
            cov_keys.push(CovKey::FissionPieces {
                parent: i0.clone(),
                a: piece.clone(),
                b: comp2.clone(),
            });
        }
    }
    if let Some(ref other) = i1 {
        for k in 0..ell {
            cov_keys.push(CovKey::Migration { into: i0.clone(), from: other.clone(), k });
        }
    }

    let seeds: Vec<u64> = (0..replicas)
        .map(|r| replica_seed(config.replicas.base_seed, seed_offset, 0, 0, r as u64))
        .collect();
    let trajs: Vec<Trajectory> = seeds
        .par_iter()
        .map(|&seed| {
            let x0 = config
                .initial_population(rung, mode, seed)
                .expect("initial sampling failed");
            let mut opts = SimOptions::new(horizon, vec![horizon]);
            opts.track_compensators = true;
            opts.cov_keys = cov_keys.clone();
            opts.log_events = true;
            simulate(x0, &rates, &law, &opts, seed)
        })
        .collect();

    let mut rows = Vec::new();

    // Balance identity, exact on every replica.
    let mut balance_failures = 0u64;
    for t in &trajs {
        match t.counters.reconstruct(&t.initial) {
            Ok(rebuilt) if rebuilt == t.final_pop => {}
            _ => balance_failures += 1,
        }
    }
    rows.push(row("balance reconstruction failures", balance_failures as f64, 0.0));

    // Fission conservation and piece bound on every logged event.
    let mut fission_events = 0u64;
    let mut conservation_failures = 0u64;
    for t in &trajs {
        for e in &t.events {
            if let EventKind::Fission { parent, pieces } = &e.kind {
                fission_events += 1;
                let ok = pieces.len() as u64 <= law.max_pieces()
                    && (0..parent.ell()).all(|k| {
                        pieces.iter().map(|p| p.get(k)).sum::<u64>() == parent.get(k)
                    })
                    && pieces.iter().all(|p| !p.is_zero());
                if !ok {
                    conservation_failures += 1;
                }
            }
        }
    }
    rows.push(row("fission conservation failures", conservation_failures as f64, 0.0));

    // Martingale and QV checks per family at the reference composition.
    for k in 0..ell {
        family_rows(&mut rows, &format!("birth k={k}"), &extract(&trajs, &CounterKey::Birth { i: i0.clone(), k }));
        family_rows(&mut rows, &format!("death k={k}"), &extract(&trajs, &CounterKey::Death { i: i0.clone(), k }));
        family_rows(&mut rows, &format!("immigration k={k}"), &extract(&trajs, &CounterKey::Immigration { i: i0.clone(), k }));
        family_rows(&mut rows, &format!("emigration k={k}"), &extract(&trajs, &CounterKey::Emigration { i: i0.clone(), k }));
    }
    family_rows(&mut rows, "fission", &extract(&trajs, &CounterKey::Fission { i: i0.clone() }));
    family_rows(&mut rows, "extinction", &extract(&trajs, &CounterKey::Extinction { i: i0.clone() }));
    let piece_ex = extract(
        &trajs,
        &CounterKey::FissionPiece { parent: i0.clone(), piece: piece.clone() },
    );
    family_rows(&mut rows, "fission piece", &piece_ex);

    // QV identity: for the birth family the QV integrand equals the
    // compensator integrand, so the two integrals agree exactly.
    let birth_ex = extract(&trajs, &CounterKey::Birth { i: i0.clone(), k: 0 });
    let worst_gap = birth_ex
        .qv
        .iter()
        .zip(&birth_ex.comp)
        .map(|(q, c)| (q - c).abs())
        .fold(0.0f64, f64::max);
    rows.push(row("birth QV equals compensator", worst_gap, 1e-9));

    // Fission covariance: cov(N^F(i0, piece), N^Fbar(i0)) is predicted
    // by the piece compensator integral.
    let fbar_ex = extract(&trajs, &CounterKey::Fission { i: i0.clone() });
    let predicted = mean(&piece_ex.comp);
    if predicted > 0.0 {
        let sample = covariance(&piece_ex.residual, &fbar_ex.residual);
        rows.push(row(
            "fission covariance vs predicted bracket (20%)",
            (sample - predicted).abs(),
            0.20 * predicted,
        ));
    }

    // Cross-piece fission covariance from the tracked bracket.
    if let Some(CovKey::FissionPieces { parent, a, b }) = cov_keys
        .iter()
        .find(|k| matches!(k, CovKey::FissionPieces { .. }))
        .cloned()
    {
        let other_ex = extract(
            &trajs,
            &CounterKey::FissionPiece { parent: parent.clone(), piece: b.clone() },
        );
        let key = CovKey::FissionPieces { parent, a: a.clone(), b };
        let predicted = mean(
            &trajs
                .iter()
                .map(|t| t.counters.covariance(&key).unwrap_or(0.0))
                .collect::<Vec<_>>(),
        );
        if predicted > 0.0 {
            let a_ex = extract(
                &trajs,
                &CounterKey::FissionPiece {
                    parent: i0.clone(),
                    piece: a,
                },
            );
            let sample = covariance(&a_ex.residual, &other_ex.residual);
            rows.push(row(
                "cross-piece fission covariance (20%)",
                (sample - predicted).abs(),
                0.20 * predicted,
            ));
        }
    }

    // Migration covariance between immigration into i0 and emigration
    // out of i1.
    if let Some(ref other) = i1 {
        for k in 0..ell {
            let key = CovKey::Migration { into: i0.clone(), from: other.clone(), k };
            let predicted = mean(
                &trajs
                    .iter()
                    .map(|t| t.counters.covariance(&key).unwrap_or(0.0))
                    .collect::<Vec<_>>(),
            );
            if predicted > 0.0 {
                let a_ex = extract(&trajs, &CounterKey::Immigration { i: i0.clone(), k });
                let b_ex = extract(&trajs, &CounterKey::Emigration { i: other.clone(), k });
                let sample = covariance(&a_ex.residual, &b_ex.residual);
                rows.push(row(
                    format!("migration covariance k={k} (20%)"),
                    (sample - predicted).abs(),
                    0.20 * predicted,
                ));
            }
        }
    }

    Ok(DiagnosticsReport {
        config_hash: config.hash.clone(),
        replicas,
        fission_events,
        rows,
        replica_seeds: seeds,
    })
}

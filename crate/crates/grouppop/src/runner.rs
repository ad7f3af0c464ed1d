//! Command implementations behind the CLI: load a scenario, run the
//! requested operation, and emit tables plus a manifest into the
//! output directory.

use std::path::{Path, PathBuf};

use crate::config::{ScenarioConfig, StudyMode};
use crate::diagnose::run_diagnostics;
use crate::pde::scheme::{solve, SolverOptions};
use crate::report::{fmt_f64, Manifest, OutputFormat, Table};
use crate::scale::{empirical_measure, EmpiricalMeasure, ScalingParams};
use crate::sim::{simulate, CounterKey, SimOptions, Trajectory};
use crate::study::{run_convergence_study, StudyError};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed_offset: u64,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    pub track_compensators: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            seed_offset: 0,
            out_dir: out_dir.into(),
            format: OutputFormat::Csv,
            track_compensators: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error(transparent)]
    Pde(#[from] crate::pde::PdeError),
    #[error(transparent)]
    Init(#[from] crate::init::InitError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn comp_cols(ell: usize, prefix: &str) -> Vec<String> {
    (1..=ell).map(|k| format!("{prefix}{k}")).collect()
}

fn counter_key_cols(key: &CounterKey) -> (String, String, String, String) {
    let join = |c: &crate::population::Composition| {
        c.counts()
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(";")
    };
    match key {
        CounterKey::Birth { i, k } => ("birth".into(), join(i), String::new(), k.to_string()),
        CounterKey::Death { i, k } => ("death".into(), join(i), String::new(), k.to_string()),
        CounterKey::Immigration { i, k } => {
            ("immigration".into(), join(i), String::new(), k.to_string())
        }
        CounterKey::Emigration { i, k } => {
            ("emigration".into(), join(i), String::new(), k.to_string())
        }
        CounterKey::Fission { i } => ("fission".into(), join(i), String::new(), String::new()),
        CounterKey::FissionPiece { parent, piece } => {
            ("fission_piece".into(), join(parent), join(piece), String::new())
        }
        CounterKey::Extinction { i } => {
            ("extinction".into(), join(i), String::new(), String::new())
        }
    }
}

fn trajectory_tables(
    name_prefix: &str,
    traj: &Trajectory,
    ell: usize,
    tracked: bool,
) -> (Table, Table) {
    let mut cols = vec!["t".to_string()];
    cols.extend(comp_cols(ell, "comp_"));
    cols.push("count".into());
    let mut states = Table::new(
        &format!("{name_prefix}_trajectory"),
        &cols.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
    );
    for (t, pop) in &traj.snapshots {
        for (i, x) in pop.iter() {
            let mut row = vec![fmt_f64(*t)];
            row.extend(i.counts().iter().map(|c| c.to_string()));
            row.push(x.to_string());
            states.push(row);
        }
    }
    let mut counters = Table::new(
        &format!("{name_prefix}_counters"),
        &["t", "kind", "i", "i2", "k", "count", "compensator"],
    );
    let t_final = traj
        .snapshots
        .last()
        .map(|(t, _)| *t)
        .unwrap_or(0.0);
    for (key, count) in traj.counters.iter_counts() {
        let (kind, i, i2, k) = counter_key_cols(key);
        let comp = if tracked {
            fmt_f64(traj.counters.compensator(key).unwrap_or(0.0))
        } else {
            String::new()
        };
        counters.push(vec![
            fmt_f64(t_final),
            kind,
            i,
            i2,
            k,
            count.to_string(),
            comp,
        ]);
    }
    (states, counters)
}

/// `simulate`: run every configured replica and dump trajectories and
/// counters.
pub fn cmd_simulate(config: &ScenarioConfig, opts: &RunOptions) -> Result<Manifest, RunError> {
    let mut manifest = Manifest::new(
        "simulate",
        &config.hash,
        config.replicas.base_seed,
        opts.seed_offset,
    );
    let snap_times = config.snapshot_times();
    let law = config.law().expect("validated config");
    for (mode_idx, &mode) in config.ladder.modes.iter().enumerate() {
        for (rung_idx, &rung) in config.ladder.rungs.iter().enumerate() {
            let rates = config.rates_for(rung, mode);
            for r in 0..config.replicas.count {
                let seed = crate::report::replica_seed(
                    config.replicas.base_seed,
                    opts.seed_offset,
                    mode_idx as u64,
                    rung_idx as u64,
                    r as u64,
                );
                manifest.replica_seeds.push(seed);
                let x0 = config.initial_population(rung, mode, seed)?;
                let mut sim_opts = SimOptions::new(config.scenario.horizon, snap_times.clone());
                sim_opts.track_compensators = opts.track_compensators;
                let traj = simulate(x0, &rates, &law, &sim_opts, seed);
                let mode_tag = match mode {
                    StudyMode::Measure => "measure",
                    StudyMode::Density => "density",
                };
                let prefix = format!("run_{mode_tag}_n{}_m{}_r{r}", rung.n, rung.m);
                let (states, counters) =
                    trajectory_tables(&prefix, &traj, config.scenario.ell, opts.track_compensators);
                manifest.record_output(&states.write(&opts.out_dir, &config.hash, opts.format)?);
                manifest.record_output(&counters.write(&opts.out_dir, &config.hash, opts.format)?);
                // final-state empirical measure under this rung's scaling
                let emp = empirical_measure(&traj.final_pop, ScalingParams::new(rung.n, rung.m));
                let table = empirical_table(&format!("{prefix}_empirical"), &emp, config.scenario.ell);
                manifest.record_output(&table.write(&opts.out_dir, &config.hash, opts.format)?);
            }
        }
    }
    manifest.write(&opts.out_dir)?;
    Ok(manifest)
}

/// Weighted atoms as a `(u_1..u_l, weight)` table.
fn empirical_table(name: &str, measure: &EmpiricalMeasure, ell: usize) -> Table {
    let mut cols = comp_cols(ell, "u_");
    cols.push("weight".into());
    let mut table = Table::new(name, &cols.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    for (u, w) in measure.atoms() {
        let mut row: Vec<String> = u.iter().map(|&x| fmt_f64(x)).collect();
        row.push(fmt_f64(*w));
        table.push(row);
    }
    table
}

/// `solve`: one reference PDE solve with density and moment dumps.
pub fn cmd_solve(config: &ScenarioConfig, opts: &RunOptions) -> Result<Manifest, RunError> {
    let mut manifest = Manifest::new(
        "solve",
        &config.hash,
        config.replicas.base_seed,
        opts.seed_offset,
    );
    let x0 = config
        .initial_density()
        .ok_or(StudyError::NeedsDensityInitial)?;
    let coeffs = config.limit_coefficients();
    let solver_opts = SolverOptions {
        dt: config.pde.dt,
        horizon: config.scenario.horizon,
        snapshot_times: config.snapshot_times(),
        mass_floor: config.pde.mass_floor,
        split_order: config.pde.split_order,
        store_all: false,
    };
    let result = solve(&coeffs, &x0, &solver_opts)?;
    if result.escaped_mass > config.pde.escape_alarm {
        return Err(StudyError::EscapeAlarm {
            escaped: result.escaped_mass,
            alarm: config.pde.escape_alarm,
        }
        .into());
    }

    let ell = config.scenario.ell;
    // density files are indexed by snapshot order; the moments table
    // carries the times
    for (idx, (_t, grid)) in result.snapshots.iter().enumerate() {
        let mut cols = vec!["cell".to_string()];
        cols.extend(comp_cols(ell, "u_"));
        cols.push("value".into());
        let mut table = Table::new(
            &format!("density_{idx}"),
            &cols.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
        );
        let mut center = vec![0.0; ell];
        for flat in 0..grid.len() {
            grid.center_of(flat, &mut center);
            let mut row = vec![flat.to_string()];
            row.extend(center.iter().map(|&c| fmt_f64(c)));
            row.push(fmt_f64(grid.values()[flat]));
            table.push(row);
        }
        manifest.record_output(&table.write(&opts.out_dir, &config.hash, opts.format)?);
    }
    let mut cols = vec!["t".to_string(), "mass".to_string()];
    cols.extend(comp_cols(ell, "moment_"));
    cols.push("escaped_mass".into());
    let mut moments = Table::new(
        "moments",
        &cols.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
    );
    for (j, t) in result.times.iter().enumerate() {
        let mut row = vec![fmt_f64(*t), fmt_f64(result.mass[j])];
        row.extend(result.moments[j].iter().map(|&m| fmt_f64(m)));
        row.push(fmt_f64(if j + 1 == result.times.len() {
            result.escaped_mass
        } else {
            0.0
        }));
        moments.push(row);
    }
    manifest.record_output(&moments.write(&opts.out_dir, &config.hash, opts.format)?);
    manifest.write(&opts.out_dir)?;
    Ok(manifest)
}

/// `study`: the convergence report.
pub fn cmd_study(config: &ScenarioConfig, opts: &RunOptions) -> Result<Manifest, RunError> {
    let mut manifest = Manifest::new(
        "study",
        &config.hash,
        config.replicas.base_seed,
        opts.seed_offset,
    );
    let report = run_convergence_study(config, opts.seed_offset)?;
    manifest.replica_seeds = report.replica_seeds.clone();

    let mut rows = Table::new(
        "study_measure",
        &[
            "mode",
            "n",
            "m",
            "t",
            "rho_w_median",
            "rho_w_iqr",
            "mass_gap_median",
            "mass_gap_iqr",
            "moment_gap_median",
            "moment_gap_iqr",
        ],
    );
    for r in &report.rows {
        rows.push(vec![
            format!("{:?}", r.mode).to_lowercase(),
            r.n.to_string(),
            r.m.to_string(),
            fmt_f64(r.t),
            fmt_f64(r.rho_w_median),
            fmt_f64(r.rho_w_iqr),
            fmt_f64(r.mass_gap_median),
            fmt_f64(r.mass_gap_iqr),
            fmt_f64(r.moment_gap_median),
            fmt_f64(r.moment_gap_iqr),
        ]);
    }
    manifest.record_output(&rows.write(&opts.out_dir, &config.hash, opts.format)?);

    let mut pairing = Table::new(
        "study_pairing",
        &["mode", "n", "m", "t", "g_index", "gap_median"],
    );
    for r in &report.pairing_rows {
        pairing.push(vec![
            format!("{:?}", r.mode).to_lowercase(),
            r.n.to_string(),
            r.m.to_string(),
            fmt_f64(r.t),
            r.g_index.to_string(),
            fmt_f64(r.gap_median),
        ]);
    }
    manifest.record_output(&pairing.write(&opts.out_dir, &config.hash, opts.format)?);

    let mut summary = Table::new(
        "study_summary",
        &["bank_seed", "bank_size", "total_replicas", "failed_replicas", "pde_escaped_mass"],
    );
    summary.push(vec![
        report.bank_seed.to_string(),
        report.bank_size.to_string(),
        report.total_replicas.to_string(),
        report.failed_replicas.to_string(),
        fmt_f64(report.pde_escaped_mass),
    ]);
    manifest.record_output(&summary.write(&opts.out_dir, &config.hash, opts.format)?);
    manifest.write(&opts.out_dir)?;
    Ok(manifest)
}

/// `diagnose`: martingale, QV, covariance and balance battery.
pub fn cmd_diagnose(config: &ScenarioConfig, opts: &RunOptions) -> Result<Manifest, RunError> {
    let mut manifest = Manifest::new(
        "diagnose",
        &config.hash,
        config.replicas.base_seed,
        opts.seed_offset,
    );
    let report = run_diagnostics(config, opts.seed_offset)?;
    manifest.replica_seeds = report.replica_seeds.clone();
    let mut table = Table::new("diagnostics", &["check", "value", "bound", "pass"]);
    for r in &report.rows {
        table.push(vec![
            r.check.clone(),
            fmt_f64(r.value),
            fmt_f64(r.bound),
            r.pass.to_string(),
        ]);
    }
    manifest.record_output(&table.write(&opts.out_dir, &config.hash, opts.format)?);
    manifest.write(&opts.out_dir)?;
    Ok(manifest)
}

/// Compare two output directories byte for byte.
pub fn dirs_identical(a: &Path, b: &Path) -> std::io::Result<bool> {
    let list = |d: &Path| -> std::io::Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(d)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        v.sort();
        Ok(v)
    };
    let fa = list(a)?;
    let fb = list(b)?;
    if fa.len() != fb.len() {
        return Ok(false);
    }
    for (pa, pb) in fa.iter().zip(&fb) {
        if pa.file_name() != pb.file_name() {
            return Ok(false);
        }
        if std::fs::read(pa)? != std::fs::read(pb)? {
            return Ok(false);
        }
    }
    Ok(true)
}

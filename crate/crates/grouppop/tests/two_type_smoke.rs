//! End-to-end exercise of the two-type pipeline: simulation, scaling,
//! reference solve and the comparison metrics.

use grouppop::config::load_config_bytes;
use grouppop::study::run_convergence_study;

const TWO_TYPE: &str = r#"
[scenario]
ell = 2
horizon = 0.4
snapshot_times = [0.0, 0.2, 0.4]

[rates]
beta = [{ form = "constant", value = 0.30 }, { form = "constant", value = 0.25 }]
delta = [{ form = "constant", value = 0.25 }, { form = "constant", value = 0.20 }]
mu = [{ form = "constant", value = 0.15 }, { form = "constant", value = 0.15 }]
phi = { form = "product_exp", scale = 1.0 }
epsilon = { form = "constant", value = 0.30 }
phi_model = "split_uniform"
bounds = { per_capita = 100.0, fission = 1.0, extinction = 1.0 }

[fission]
law = "uniform_binary"

[kernel]
kind = "binary_uniform_limit"

[ladder]
rungs = [{ n = 4, m = 40 }, { n = 8, m = 160 }]
modes = ["measure", "density"]

[replicas]
count = 8
base_seed = 3

[initial]
kind = "gaussian_bump"
center = [1.0, 1.2]
sigma = 0.3
mass = 1.0

[pde]
u_max = 3.0
cells = 48
dt = 0.004
escape_alarm = 0.01

[metrics]
bank_size = 128
"#;

#[test]
fn two_type_study_runs_and_tightens() {
    let config = load_config_bytes(TWO_TYPE.as_bytes()).unwrap();
    let report = run_convergence_study(&config, 0).unwrap();
    assert_eq!(report.failed_replicas, 0);
    // every statistic finite and positive where it should be
    for row in &report.rows {
        assert!(row.rho_w_median.is_finite() && row.rho_w_median >= 0.0);
        assert!(row.mass_gap_median.is_finite());
        assert!(row.moment_gap_median.is_finite());
    }
    assert!(!report.pairing_rows.is_empty());
    // the finer rung should be closer in the bounded-Lipschitz sense at
    // the final time (two rungs, 8 seeds: a coarse but real signal)
    let t_final = 0.4;
    let rho_at = |n: u64| {
        report
            .rows
            .iter()
            .find(|r| r.n == n && (r.t - t_final).abs() < 1e-9)
            .unwrap()
            .rho_w_median
    };
    assert!(
        rho_at(8) < rho_at(4),
        "two-type ladder did not tighten: {} vs {}",
        rho_at(4),
        rho_at(8)
    );
}

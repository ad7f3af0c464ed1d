//! Replica-level statistical checks of the compensator machinery.

use grouppop::fission::FissionLaw;
use grouppop::population::{comp, Population};
use grouppop::rates::{CoefForm, RateSpec, ScaledRate};
use grouppop::sim::{simulate, CounterKey, SimOptions};

fn const_rate(v: f64) -> ScaledRate {
    ScaledRate::LimitForm { coef: CoefForm::Constant { value: v }, n: 1, denom: 1.0 }
}

fn rates1(beta: f64, delta: f64, mu: f64, phi: f64, eps: f64) -> RateSpec {
    RateSpec::new(
        1,
        vec![const_rate(beta)],
        vec![const_rate(delta)],
        vec![const_rate(mu)],
        const_rate(phi),
        const_rate(eps),
    )
}

#[test]
fn zero_rate_channel_has_identically_zero_residual() {
    // deaths disabled: the death counter and its compensator both stay
    // zero along the whole trajectory
    let rates = rates1(0.4, 0.0, 0.0, 0.3, 0.0);
    let law = FissionLaw::UniformBinary;
    let mut pop = Population::new(1);
    pop.insert(comp(&[3]), 30);
    let mut opts = SimOptions::new(1.0, vec![0.25, 0.5, 0.75, 1.0]);
    opts.track_compensators = true;
    let traj = simulate(pop, &rates, &law, &opts, 3);
    let series = traj
        .compensator_residual(&CounterKey::Death { i: comp(&[3]), k: 0 })
        .unwrap();
    assert_eq!(series.len(), 4);
    for (_, r) in series {
        assert_eq!(r, 0.0);
    }
    // predicted QV of the birth channel equals its compensator, as a
    // path identity
    let qv = traj.predicted_qv(&CounterKey::Birth { i: comp(&[3]), k: 0 }).unwrap();
    for ((_, q), (t, _)) in qv.iter().zip(&traj.counter_snapshots) {
        let c = traj
            .counter_snapshots
            .iter()
            .find(|(ts, _)| ts == t)
            .unwrap()
            .1
            .compensator(&CounterKey::Birth { i: comp(&[3]), k: 0 })
            .unwrap();
        assert_eq!(*q, c);
    }
}

#[test]
fn fission_covariance_matches_replica_monte_carlo() {
    // cov(N^F(i, i'), N^Fbar(i)) at T is predicted by the integral of
    // X(i) phi(i) eta(i, i'); check over 500 replicas within 20%.
    let rates = rates1(0.0, 0.0, 0.0, 0.6, 0.0);
    let law = FissionLaw::UniformBinary;
    let parent = comp(&[4]);
    let piece = comp(&[2]);
    let replicas = 500;
    let mut residual_piece = Vec::with_capacity(replicas);
    let mut residual_total = Vec::with_capacity(replicas);
    let mut predicted = Vec::with_capacity(replicas);
    for seed in 0..replicas as u64 {
        let mut pop = Population::new(1);
        pop.insert(parent.clone(), 40);
        let mut opts = SimOptions::new(0.6, vec![0.6]);
        opts.track_compensators = true;
        let traj = simulate(pop, &rates, &law, &opts, seed);
        let key_piece = CounterKey::FissionPiece { parent: parent.clone(), piece: piece.clone() };
        let key_total = CounterKey::Fission { i: parent.clone() };
        let c = &traj.counters;
        residual_piece.push(c.count(&key_piece) as f64 - c.compensator(&key_piece).unwrap());
        residual_total.push(c.count(&key_total) as f64 - c.compensator(&key_total).unwrap());
        predicted.push(c.compensator(&key_piece).unwrap());
    }
    let n = replicas as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (ma, mb) = (mean(&residual_piece), mean(&residual_total));
    let cov = residual_piece
        .iter()
        .zip(&residual_total)
        .map(|(a, b)| (a - ma) * (b - mb))
        .sum::<f64>()
        / (n - 1.0);
    let pred = mean(&predicted);
    assert!(
        (cov - pred).abs() <= 0.20 * pred,
        "covariance {cov} vs predicted {pred}"
    );
}

#[test]
fn untracked_selector_errors_cleanly() {
    let rates = rates1(0.4, 0.0, 0.0, 0.0, 0.0);
    let law = FissionLaw::NonproperOnly;
    let mut pop = Population::new(1);
    pop.insert(comp(&[2]), 5);
    let opts = SimOptions::new(0.5, vec![0.5]);
    let traj = simulate(pop, &rates, &law, &opts, 1);
    assert!(traj
        .compensator_residual(&CounterKey::Birth { i: comp(&[2]), k: 0 })
        .is_err());
}

//! Drift field of the limit equation and its characteristic flow.
//!
//! The drift combines the local per-type net rate with a spatially
//! constant migration term, the mass-weighted mean migration flux
//! divided by total mass. Characteristics are integrated with RK4;
//! inverse maps integrate the same field in reverse time.

use serde::Serialize;

use super::coeffs::LimitCoefficients;
use super::grid::DensityGrid;
use super::PdeError;

/// Migration drift `c_k = (int u'_k mu^k(u') x(u') du') / (int x du)`.
/// Invariant under positive scaling of the density.
pub fn migration_drift(coeffs: &LimitCoefficients, density: &DensityGrid) -> Result<Vec<f64>, PdeError> {
    let mass = density.mass();
    if mass <= 0.0 {
        return Err(PdeError::ZeroMass);
    }
    let ell = coeffs.ell;
    let vol = density.cell_volume();
    let mut c = vec![0.0; ell];
    let mut center = vec![0.0; ell];
    for flat in 0..density.len() {
        let v = density.values()[flat];
        if v == 0.0 {
            continue;
        }
        density.center_of(flat, &mut center);
        for k in 0..ell {
            c[k] += center[k] * coeffs.mu[k].eval(&center) * v * vol;
        }
    }
    for ck in &mut c {
        *ck /= mass;
    }
    Ok(c)
}

/// The full drift `F_k(u) = u_k (beta - delta - mu)_k(u) + c_k` for a
/// frozen migration term.
#[derive(Debug, Clone)]
pub struct DriftField<'a> {
    pub coeffs: &'a LimitCoefficients,
    pub c: Vec<f64>,
}

impl DriftField<'_> {
    pub fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        for k in 0..self.coeffs.ell {
            out[k] = self.coeffs.velocity(k, u) + self.c[k];
        }
    }

    pub fn eval(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.coeffs.ell];
        self.eval_into(u, &mut out);
        out
    }
}

/// Drift field at the current density: local velocity plus the
/// migration constant.
pub fn drift_field<'a>(
    coeffs: &'a LimitCoefficients,
    density: &DensityGrid,
) -> Result<DriftField<'a>, PdeError> {
    Ok(DriftField { coeffs, c: migration_drift(coeffs, density)? })
}

/// Time series of the migration drift, recorded while solving;
/// evaluated elsewhere by linear interpolation.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DriftSchedule {
    pub times: Vec<f64>,
    pub c: Vec<Vec<f64>>,
}

impl DriftSchedule {
    pub fn constant(ell: usize) -> Self {
        Self { times: vec![0.0], c: vec![vec![0.0; ell]] }
    }

    pub fn push(&mut self, t: f64, c: Vec<f64>) {
        self.times.push(t);
        self.c.push(c);
    }

    pub fn c_at(&self, t: f64) -> Vec<f64> {
        match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(j) => self.c[j].clone(),
            Err(0) => self.c[0].clone(),
            Err(j) if j >= self.times.len() => self.c.last().unwrap().clone(),
            Err(j) => {
                let (t0, t1) = (self.times[j - 1], self.times[j]);
                let w = (t - t0) / (t1 - t0);
                self.c[j - 1]
                    .iter()
                    .zip(&self.c[j])
                    .map(|(a, b)| a + w * (b - a))
                    .collect()
            }
        }
    }
}

/// Characteristic positions for a set of seed points, with inverses.
#[derive(Debug, Clone)]
pub struct FlowMap {
    pub points: Vec<Vec<f64>>,
    pub forward: Vec<Vec<f64>>,
    pub inverse: Vec<Vec<f64>>,
    /// Points whose trajectory left the box and were clamped.
    pub escaped: usize,
}

/// RK4 integration of `d psi / dr = F_r(psi)` from `r = from` to
/// `r = to` (either direction), with the migration term interpolated
/// from the schedule and frozen within each step.
pub fn characteristic(
    coeffs: &LimitCoefficients,
    sched: &DriftSchedule,
    from: f64,
    to: f64,
    u: &[f64],
    dt: f64,
) -> Vec<f64> {
    let ell = coeffs.ell;
    let span = to - from;
    if span == 0.0 {
        return u.to_vec();
    }
    let n_steps = (span.abs() / dt).ceil().max(1.0) as usize;
    let h = span / n_steps as f64;
    let mut y = u.to_vec();
    let mut k1 = vec![0.0; ell];
    let mut k2 = vec![0.0; ell];
    let mut k3 = vec![0.0; ell];
    let mut k4 = vec![0.0; ell];
    let mut tmp = vec![0.0; ell];
    for step in 0..n_steps {
        let r = from + step as f64 * h;
        let eval = |t: f64, y: &[f64], out: &mut [f64]| {
            let c = sched.c_at(t);
            for k in 0..ell {
                out[k] = coeffs.velocity(k, y) + c[k];
            }
        };
        eval(r, &y, &mut k1);
        for k in 0..ell {
            tmp[k] = y[k] + 0.5 * h * k1[k];
        }
        eval(r + 0.5 * h, &tmp, &mut k2);
        for k in 0..ell {
            tmp[k] = y[k] + 0.5 * h * k2[k];
        }
        eval(r + 0.5 * h, &tmp, &mut k3);
        for k in 0..ell {
            tmp[k] = y[k] + h * k3[k];
        }
        eval(r + h, &tmp, &mut k4);
        for k in 0..ell {
            y[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
    }
    y
}

/// Forward and inverse characteristic maps over `[s, t]` for the given
/// seed points. Positions leaving the box `[0, box_hi]^l` are clamped
/// to the nearest boundary point and counted.
pub fn advance_flow(
    coeffs: &LimitCoefficients,
    sched: &DriftSchedule,
    s: f64,
    t: f64,
    points: &[Vec<f64>],
    dt: f64,
    box_hi: f64,
) -> FlowMap {
    assert!(s <= t, "advance_flow needs s <= t");
    let mut escaped = 0usize;
    let mut clamp = |mut y: Vec<f64>| {
        let mut hit = false;
        for v in &mut y {
            if *v < 0.0 {
                *v = 0.0;
                hit = true;
            } else if *v > box_hi {
                *v = box_hi;
                hit = true;
            }
        }
        if hit {
            escaped += 1;
        }
        y
    };
    let mut forward = Vec::with_capacity(points.len());
    let mut inverse = Vec::with_capacity(points.len());
    for p in points {
        forward.push(clamp(characteristic(coeffs, sched, s, t, p, dt)));
    }
    for p in points {
        inverse.push(clamp(characteristic(coeffs, sched, t, s, p, dt)));
    }
    FlowMap { points: points.to_vec(), forward, inverse, escaped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::CoefForm;
    use crate::pde::coeffs::FissionKernel;

    fn coeffs_with(beta: f64, mu: f64) -> LimitCoefficients {
        LimitCoefficients {
            ell: 1,
            beta: vec![CoefForm::Constant { value: beta }],
            delta: vec![CoefForm::Constant { value: 0.0 }],
            mu: vec![CoefForm::Constant { value: mu }],
            phi: CoefForm::Constant { value: 0.0 },
            epsilon: CoefForm::Constant { value: 0.0 },
            kernel: FissionKernel::None,
        }
    }

    #[test]
    fn drift_without_migration_is_local() {
        let coeffs = coeffs_with(0.7, 0.0);
        let grid = DensityGrid::from_fn(0.1, vec![10], |_| 1.0);
        let field = drift_field(&coeffs, &grid).unwrap();
        assert_eq!(field.c, vec![0.0]);
        assert!((field.eval(&[2.0])[0] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn uniform_density_migration_drift() {
        // x uniform on [0,1], mu constant: c = mu * mean(u) = mu / 2.
        let coeffs = coeffs_with(0.0, 0.8);
        let grid = DensityGrid::from_fn(1.0 / 256.0, vec![256], |_| 1.0);
        let c = migration_drift(&coeffs, &grid).unwrap();
        assert!((c[0] - 0.4).abs() < 1e-10, "{c:?}");
    }

    #[test]
    fn migration_drift_is_scale_invariant() {
        let coeffs = coeffs_with(0.1, 0.6);
        let mut grid = DensityGrid::from_fn(0.05, vec![40], |u| (1.0 - u[0]).max(0.0));
        let c1 = migration_drift(&coeffs, &grid).unwrap();
        grid.scale(17.0);
        let c2 = migration_drift(&coeffs, &grid).unwrap();
        assert!((c1[0] - c2[0]).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_is_singular() {
        let coeffs = coeffs_with(0.1, 0.6);
        let grid = DensityGrid::zeros(0.1, vec![10]);
        assert!(matches!(migration_drift(&coeffs, &grid), Err(PdeError::ZeroMass)));
    }

    #[test]
    fn zero_field_flow_is_identity() {
        let coeffs = coeffs_with(0.0, 0.0);
        let sched = DriftSchedule::constant(1);
        let points: Vec<Vec<f64>> = (0..20).map(|j| vec![0.2 * j as f64]).collect();
        let map = advance_flow(&coeffs, &sched, 0.0, 1.0, &points, 0.01, 10.0);
        for (p, q) in map.points.iter().zip(&map.forward) {
            assert_eq!(p, q);
        }
        assert_eq!(map.escaped, 0);
    }

    #[test]
    fn linear_flow_matches_exponential() {
        // F(u) = c u has flow u exp(c (t - s)).
        let c = 1.0;
        let coeffs = coeffs_with(c, 0.0);
        let sched = DriftSchedule::constant(1);
        let points: Vec<Vec<f64>> = (1..=20).map(|j| vec![0.1 * j as f64]).collect();
        let map = advance_flow(&coeffs, &sched, 0.0, 1.0, &points, 0.01, 100.0);
        for (p, q) in map.points.iter().zip(&map.forward) {
            let exact = p[0] * (c * 1.0f64).exp();
            assert!((q[0] - exact).abs() <= 1e-6, "{} vs {exact}", q[0]);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let coeffs = coeffs_with(0.5, 0.0);
        let sched = DriftSchedule::constant(1);
        let points: Vec<Vec<f64>> = (1..=30).map(|j| vec![0.05 * j as f64]).collect();
        let map = advance_flow(&coeffs, &sched, 0.0, 1.0, &points, 0.01, 100.0);
        for (p, fwd) in map.points.iter().zip(&map.forward) {
            let back = characteristic(&coeffs, &sched, 1.0, 0.0, fwd, 0.01);
            assert!((back[0] - p[0]).abs() <= 1e-6);
        }
    }

    #[test]
    fn flow_composition_property() {
        let coeffs = coeffs_with(0.4, 0.0);
        let sched = DriftSchedule::constant(1);
        for j in 1..=10 {
            let u = vec![0.3 * j as f64];
            let direct = characteristic(&coeffs, &sched, 0.0, 1.0, &u, 0.005);
            let mid = characteristic(&coeffs, &sched, 0.0, 0.35, &u, 0.005);
            let composed = characteristic(&coeffs, &sched, 0.35, 1.0, &mid, 0.005);
            assert!((direct[0] - composed[0]).abs() <= 1e-5);
        }
    }
}

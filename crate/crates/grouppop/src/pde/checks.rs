//! Consistency checks for the solver: the weak form of the limit
//! equation, its mild (flow-pullback) representation, and the reduced
//! mass/first-moment system.

use super::coeffs::LimitCoefficients;
use super::flow::{characteristic, migration_drift};
use super::grid::DensityGrid;
use super::scheme::{apply_b_with, KernelOp, SolveResult};
use super::PdeError;
use crate::rates::CoefForm;

/// A differentiable test function with its gradient.
pub struct TestFn<'a> {
    pub f: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    pub grad: &'a (dyn Fn(&[f64], &mut [f64]) + Sync),
}

/// Right-hand side of the weak form at one density: pairing of the
/// drift, fission and loss terms against the test function.
pub fn weak_rhs(
    coeffs: &LimitCoefficients,
    op: &KernelOp,
    x: &DensityGrid,
    tf: &TestFn,
) -> Result<f64, PdeError> {
    let mass = x.mass();
    let c = if coeffs.mu.iter().all(|m| m.constant_value() == Some(0.0)) {
        vec![0.0; coeffs.ell]
    } else {
        migration_drift(coeffs, x)?
    };
    let vol = x.cell_volume();
    let mut acc = 0.0;
    let mut center = vec![0.0; coeffs.ell];
    let mut grad = vec![0.0; coeffs.ell];
    for flat in 0..x.len() {
        let v = x.values()[flat];
        if v == 0.0 {
            continue;
        }
        x.center_of(flat, &mut center);
        (tf.grad)(&center, &mut grad);
        let mut drift = 0.0;
        for k in 0..coeffs.ell {
            drift += (coeffs.velocity(k, &center) + c[k]) * grad[k];
        }
        let loss = (coeffs.phi_at(&center) + coeffs.epsilon_at(&center) * mass) * (tf.f)(&center);
        acc += (drift - loss) * v * vol;
    }
    // Fission gain: <f, S x>.
    let mut source = vec![0.0; x.len()];
    op.source(coeffs, x, &mut source);
    for flat in 0..x.len() {
        if source[flat] != 0.0 {
            x.center_of(flat, &mut center);
            acc += (tf.f)(&center) * source[flat] * vol;
        }
    }
    Ok(acc)
}

/// Central-difference time derivative of `<f, x_t>` minus the weak-form
/// right-hand side, at the interior times of the series.
pub fn weak_residual(
    coeffs: &LimitCoefficients,
    series: &[(f64, DensityGrid)],
    tf: &TestFn,
) -> Result<Vec<(f64, f64)>, PdeError> {
    assert!(series.len() >= 3, "weak residual needs at least three snapshots");
    let op = KernelOp::build(coeffs, &series[0].1);
    let pairings: Vec<f64> = series.iter().map(|(_, x)| x.pair_with(|u| (tf.f)(u))).collect();
    let mut out = Vec::with_capacity(series.len().saturating_sub(2));
    for j in 1..series.len() - 1 {
        let (t_prev, _) = series[j - 1];
        let (t_j, ref x_j) = series[j];
        let (t_next, _) = series[j + 1];
        let ddt = (pairings[j + 1] - pairings[j - 1]) / (t_next - t_prev);
        let rhs = weak_rhs(coeffs, &op, x_j, tf)?;
        out.push((t_j, ddt - rhs));
    }
    Ok(out)
}

/// Both sides of the mild representation at time `t`:
/// `<f, x_t>` versus `<f(psi_{0,t}), x_0> + int_0^t <B(x_s) f(psi_{s,t}), x_s> ds`.
#[derive(Debug, Clone, Copy)]
pub struct MildCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl MildCheck {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// `quad_stride` subsamples the stored steps for the time quadrature;
/// `flow_dt` is the RK4 step for the characteristics.
pub fn mild_solution_check(
    coeffs: &LimitCoefficients,
    result: &SolveResult,
    tf: &TestFn,
    t: f64,
    quad_stride: usize,
    flow_dt: f64,
) -> Result<MildCheck, PdeError> {
    assert!(
        !result.all_steps.is_empty(),
        "mild check needs a solve with store_all enabled"
    );
    let sched = &result.drift;
    let upto: Vec<&(f64, DensityGrid)> = result
        .all_steps
        .iter()
        .take_while(|(s, _)| *s <= t + 1e-12)
        .collect();
    let (t_end, x_t) = upto.last().expect("time not covered by the solve");
    assert!(
        (t_end - t).abs() < 1e-9,
        "requested time {t} is not a stored step time"
    );
    let lhs = x_t.pair_with(|u| (tf.f)(u));

    let op = KernelOp::build(coeffs, &upto[0].1);
    let x0 = &upto[0].1;

    // Pullback of f along the characteristics from time s to t, as a
    // grid function.
    let pullback = |s: f64, shape: &DensityGrid| -> DensityGrid {
        let mut g = shape.clone();
        let ell = coeffs.ell;
        let mut center = vec![0.0; ell];
        for flat in 0..g.len() {
            g.center_of(flat, &mut center);
            let moved = if (t - s).abs() < 1e-14 {
                center.clone()
            } else {
                characteristic(coeffs, sched, s, t, &center, flow_dt)
            };
            g.values_mut()[flat] = (tf.f)(&moved);
        }
        g
    };

    let term0 = {
        let g = pullback(0.0, x0);
        let vol = x0.cell_volume();
        g.values()
            .iter()
            .zip(x0.values())
            .map(|(g, x)| g * x)
            .sum::<f64>()
            * vol
    };

    // Quadrature nodes: every `quad_stride`-th stored step plus the end.
    let mut nodes: Vec<usize> = (0..upto.len()).step_by(quad_stride.max(1)).collect();
    if *nodes.last().unwrap() != upto.len() - 1 {
        nodes.push(upto.len() - 1);
    }
    let mut integrand = Vec::with_capacity(nodes.len());
    for &j in &nodes {
        let (s, x_s) = &upto[j];
        let g = pullback(*s, x_s);
        let bg = apply_b_with(&op, coeffs, x_s.mass(), &g);
        let vol = x_s.cell_volume();
        let val = bg
            .values()
            .iter()
            .zip(x_s.values())
            .map(|(b, x)| b * x)
            .sum::<f64>()
            * vol;
        integrand.push((*s, val));
    }
    let mut integral = 0.0;
    for w in integrand.windows(2) {
        integral += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
    }
    Ok(MildCheck { lhs, rhs: term0 + integral })
}

/// Reduced mass/first-moment dynamics, valid for conservative kernels
/// with constant intensities and a type-independent constant net rate:
///
/// ```text
/// dR/dt = (b - 1) phi0 R - eps0 R^2
/// dI/dt = growth I - eps0 R I
/// ```
#[derive(Debug, Clone, Copy)]
pub struct MomentOde {
    pub growth: f64,
    pub split_gain: f64,
    pub eps: f64,
}

impl MomentOde {
    pub fn rhs(&self, mass: f64, moment: f64) -> (f64, f64) {
        (
            self.split_gain * mass - self.eps * mass * mass,
            self.growth * moment - self.eps * mass * moment,
        )
    }

    /// RK4 integration from `(mass0, moment0)`.
    pub fn integrate(&self, mass0: f64, moment0: f64, horizon: f64, dt: f64) -> Vec<(f64, f64, f64)> {
        let n = (horizon / dt).ceil().max(1.0) as usize;
        let h = horizon / n as f64;
        let mut out = Vec::with_capacity(n + 1);
        let (mut r, mut i) = (mass0, moment0);
        out.push((0.0, r, i));
        for step in 0..n {
            let (k1r, k1i) = self.rhs(r, i);
            let (k2r, k2i) = self.rhs(r + 0.5 * h * k1r, i + 0.5 * h * k1i);
            let (k3r, k3i) = self.rhs(r + 0.5 * h * k2r, i + 0.5 * h * k2i);
            let (k4r, k4i) = self.rhs(r + h * k3r, i + h * k3i);
            r += h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
            i += h / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i);
            out.push(((step + 1) as f64 * h, r, i));
        }
        out
    }
}

/// Validate the coefficient set and extract the reduced system.
pub fn moment_ode(coeffs: &LimitCoefficients) -> Result<MomentOde, PdeError> {
    if !coeffs.kernel_conservative() {
        return Err(PdeError::NonConservativeKernel);
    }
    let constant = |f: &CoefForm, name: &str| {
        f.constant_value()
            .ok_or_else(|| PdeError::NonReducible(format!("{name} is not constant")))
    };
    let eps = constant(&coeffs.epsilon, "epsilon")?;
    let phi0 = constant(&coeffs.phi, "phi")?;
    let split_gain = (coeffs.kernel.max_pieces() - 1.0).max(0.0) * phi0;
    let mut growth = None;
    for k in 0..coeffs.ell {
        let b = constant(&coeffs.beta[k], "beta")?;
        let d = constant(&coeffs.delta[k], "delta")?;
        match growth {
            None => growth = Some(b - d),
            Some(g) if (g - (b - d)).abs() < 1e-15 => {}
            _ => {
                return Err(PdeError::NonReducible(
                    "net rate beta - delta differs across types".into(),
                ))
            }
        }
    }
    Ok(MomentOde { growth: growth.unwrap_or(0.0), split_gain, eps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::coeffs::FissionKernel;
    use crate::pde::scheme::{solve, SolverOptions};

    fn transport_coeffs(c: f64) -> LimitCoefficients {
        LimitCoefficients {
            ell: 1,
            beta: vec![CoefForm::Constant { value: c }],
            delta: vec![CoefForm::Constant { value: 0.0 }],
            mu: vec![CoefForm::Constant { value: 0.0 }],
            phi: CoefForm::Constant { value: 0.0 },
            epsilon: CoefForm::Constant { value: 0.0 },
            kernel: FissionKernel::None,
        }
    }

    fn bump(u: &[f64]) -> f64 {
        let d: f64 = (u[0] - 1.0) / 0.2;
        (-0.5 * d * d).exp()
    }

    #[test]
    fn zero_test_function_gives_zero_residual() {
        let coeffs = transport_coeffs(0.5);
        let x0 = DensityGrid::from_fn(4.0 / 256.0, vec![256], bump);
        let opts = SolverOptions { store_all: true, ..SolverOptions::new(2e-3, 0.1, vec![0.1]) };
        let res = solve(&coeffs, &x0, &opts).unwrap();
        let zero = |_: &[f64]| 0.0;
        let grad_zero = |_: &[f64], g: &mut [f64]| g.fill(0.0);
        let tf = TestFn { f: &zero, grad: &grad_zero };
        for (_, r) in weak_residual(&coeffs, &res.all_steps, &tf).unwrap() {
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn mild_check_at_time_zero_is_exact() {
        let coeffs = transport_coeffs(0.5);
        let x0 = DensityGrid::from_fn(4.0 / 128.0, vec![128], bump);
        let opts = SolverOptions { store_all: true, ..SolverOptions::new(1e-2, 0.05, vec![]) };
        let res = solve(&coeffs, &x0, &opts).unwrap();
        let f = |u: &[f64]| (u[0] * 1.3).sin();
        let grad = |u: &[f64], g: &mut [f64]| g[0] = 1.3 * (u[0] * 1.3).cos();
        let tf = TestFn { f: &f, grad: &grad };
        let check = mild_solution_check(&coeffs, &res, &tf, 0.0, 1, 1e-2).unwrap();
        assert!(check.gap() < 1e-14, "gap {}", check.gap());
    }

    #[test]
    fn moment_ode_balanced_rates_are_stationary() {
        let mut coeffs = transport_coeffs(0.0);
        coeffs.beta = vec![CoefForm::Constant { value: 0.7 }];
        coeffs.delta = vec![CoefForm::Constant { value: 0.7 }];
        let ode = moment_ode(&coeffs).unwrap();
        let (dr, di) = ode.rhs(2.0, 3.0);
        assert_eq!(dr, 0.0);
        assert_eq!(di, 0.0);
    }

    #[test]
    fn moment_ode_refuses_nonconservative_kernel() {
        let mut coeffs = transport_coeffs(0.0);
        coeffs.phi = CoefForm::Constant { value: 0.5 };
        // positive fission intensity with no offspring kernel destroys
        // individuals, so the reduced identities are invalid
        assert!(matches!(moment_ode(&coeffs), Err(PdeError::NonConservativeKernel)));
    }

    #[test]
    fn moment_ode_refuses_varying_coefficients() {
        let mut coeffs = transport_coeffs(0.0);
        coeffs.epsilon = CoefForm::Affine { base: 0.1, slope: 0.2 };
        assert!(matches!(moment_ode(&coeffs), Err(PdeError::NonReducible(_))));
    }
}

//! Closed-form rate functions and the per-model rate specification.
//!
//! Rates come from a named registry of closed forms with numeric
//! parameters so that scenarios are fully reproducible from config and
//! boundedness can be validated by a lattice scan. Model-level rates
//! are induced from limit-form coefficients by evaluating at `i/n`,
//! with the extinction rate carrying its `1/m` (or `1/(m n^l)`) factor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::population::Composition;

/// A named closed form on the positive orthant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum CoefForm {
    /// `value`
    Constant { value: f64 },
    /// `base + slope * |u|`
    Affine { base: f64, slope: f64 },
    /// `sup / (1 + exp(steepness * (|u| - midpoint)))`
    Logistic { sup: f64, steepness: f64, midpoint: f64 },
    /// `scale * prod_k u_k * exp(-|u|)`
    ProductExp { scale: f64 },
    /// `scale * u_k`
    Coord { k: usize, scale: f64 },
}

impl CoefForm {
    pub fn eval(&self, u: &[f64]) -> f64 {
        let abs: f64 = u.iter().sum();
        match *self {
            CoefForm::Constant { value } => value,
            CoefForm::Affine { base, slope } => base + slope * abs,
            CoefForm::Logistic { sup, steepness, midpoint } => {
                sup / (1.0 + (steepness * (abs - midpoint)).exp())
            }
            CoefForm::ProductExp { scale } => {
                scale * u.iter().product::<f64>() * (-abs).exp()
            }
            CoefForm::Coord { k, scale } => scale * u[k],
        }
    }

    pub fn zero() -> Self {
        CoefForm::Constant { value: 0.0 }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            CoefForm::Constant { value } => Some(value),
            _ => None,
        }
    }
}

/// A model-level rate over compositions, obtained from a limit form.
#[derive(Debug, Clone)]
pub enum ScaledRate {
    /// `form(i / n) / denom`. With `n = 1`, `denom = 1` this evaluates the
    /// form at the composition itself.
    LimitForm { coef: CoefForm, n: u64, denom: f64 },
    /// `prod_k (i_k + 1) * exp(-|i| / n) / n^l`
    SplitUniformPhi { n: u64 },
}

impl ScaledRate {
    pub fn eval(&self, i: &Composition) -> f64 {
        match self {
            ScaledRate::LimitForm { coef, n, denom } => coef.eval(&i.scaled(*n)) / denom,
            ScaledRate::SplitUniformPhi { n } => {
                let nf = *n as f64;
                let prod: f64 = i.counts().iter().map(|&c| c as f64 + 1.0).product();
                prod * (-(i.total() as f64) / nf).exp() / nf.powi(i.ell() as i32)
            }
        }
    }
}

/// Per-type birth, death and migration rates plus group-level fission
/// and extinction rates for one model in the scaling family.
///
/// The per-type accessors enforce `beta^k(i) = delta^k(i) = mu^k(i) = 0`
/// whenever `i_k = 0`, regardless of the registry entry. The extinction
/// accessor returns the per-pair rate; the simulator multiplies by the
/// current group total.
#[derive(Debug, Clone)]
pub struct RateSpec {
    ell: usize,
    beta: Vec<ScaledRate>,
    delta: Vec<ScaledRate>,
    mu: Vec<ScaledRate>,
    phi: ScaledRate,
    epsilon: ScaledRate,
}

impl RateSpec {
    pub fn new(
        ell: usize,
        beta: Vec<ScaledRate>,
        delta: Vec<ScaledRate>,
        mu: Vec<ScaledRate>,
        phi: ScaledRate,
        epsilon: ScaledRate,
    ) -> Self {
        assert!(beta.len() == ell && delta.len() == ell && mu.len() == ell);
        Self { ell, beta, delta, mu, phi, epsilon }
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn beta(&self, k: usize, i: &Composition) -> f64 {
        if i.get(k) == 0 {
            0.0
        } else {
            self.beta[k].eval(i)
        }
    }

    pub fn delta(&self, k: usize, i: &Composition) -> f64 {
        if i.get(k) == 0 {
            0.0
        } else {
            self.delta[k].eval(i)
        }
    }

    pub fn mu(&self, k: usize, i: &Composition) -> f64 {
        if i.get(k) == 0 {
            0.0
        } else {
            self.mu[k].eval(i)
        }
    }

    pub fn phi(&self, i: &Composition) -> f64 {
        self.phi.eval(i)
    }

    /// Per-pair extinction rate; the full rate for one group is
    /// `epsilon(i) * X*`.
    pub fn epsilon(&self, i: &Composition) -> f64 {
        self.epsilon.eval(i)
    }

    pub fn raw_beta(&self, k: usize) -> &ScaledRate {
        &self.beta[k]
    }
    pub fn raw_delta(&self, k: usize) -> &ScaledRate {
        &self.delta[k]
    }
    pub fn raw_mu(&self, k: usize) -> &ScaledRate {
        &self.mu[k]
    }
    pub fn raw_phi(&self) -> &ScaledRate {
        &self.phi
    }
    pub fn raw_epsilon(&self) -> &ScaledRate {
        &self.epsilon
    }
}

/// Declared sup bounds the configured rates must satisfy on the
/// validation box: `i_k (beta^k + delta^k + mu^k)(i) <= per_capita`,
/// `phi(i) <= fission`, `m * epsilon(i) <= extinction`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DeclaredBounds {
    pub per_capita: f64,
    pub fission: f64,
    pub extinction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundViolation {
    pub function: String,
    pub point: Vec<u64>,
    pub value: f64,
    pub bound: f64,
}

/// Result of a lattice scan of the rate bounds.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub per_capita_sup: f64,
    pub fission_sup: f64,
    pub extinction_sup: f64,
    pub violations: Vec<BoundViolation>,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Error)]
#[error("rate bound violated: {0:?}")]
pub struct BoundsError(pub Vec<BoundViolation>);

/// Scan every lattice point of the box `[0, hi_1] x .. x [0, hi_l]` and
/// check the declared bounds. `m_factor` is the group-number scale that
/// multiplies the extinction rate.
pub fn rate_bounds_check(
    rates: &RateSpec,
    box_hi: &[u64],
    m_factor: f64,
    bounds: &DeclaredBounds,
) -> BoundsReport {
    assert_eq!(box_hi.len(), rates.ell());
    let mut report = BoundsReport {
        per_capita_sup: 0.0,
        fission_sup: 0.0,
        extinction_sup: 0.0,
        violations: Vec::new(),
    };
    let mut point = vec![0u64; rates.ell()];
    loop {
        let i = Composition::new(point.clone());
        if !i.is_zero() {
            for k in 0..rates.ell() {
                let v = i.get(k) as f64 * (rates.beta(k, &i) + rates.delta(k, &i) + rates.mu(k, &i));
                report.per_capita_sup = report.per_capita_sup.max(v);
                if v > bounds.per_capita {
                    report.violations.push(BoundViolation {
                        function: format!("i_{k} * (beta^{k} + delta^{k} + mu^{k})"),
                        point: point.clone(),
                        value: v,
                        bound: bounds.per_capita,
                    });
                }
            }
            let phi = rates.phi(&i);
            report.fission_sup = report.fission_sup.max(phi);
            if phi > bounds.fission {
                report.violations.push(BoundViolation {
                    function: "phi".into(),
                    point: point.clone(),
                    value: phi,
                    bound: bounds.fission,
                });
            }
            let eps = m_factor * rates.epsilon(&i);
            report.extinction_sup = report.extinction_sup.max(eps);
            if eps > bounds.extinction {
                report.violations.push(BoundViolation {
                    function: "m * epsilon".into(),
                    point: point.clone(),
                    value: eps,
                    bound: bounds.extinction,
                });
            }
        }
        // advance the odometer
        let mut dim = 0;
        loop {
            if dim == point.len() {
                return report;
            }
            if point[dim] < box_hi[dim] {
                point[dim] += 1;
                break;
            }
            point[dim] = 0;
            dim += 1;
        }
    }
}

//! Limit coefficients: per-type net rates, fission and extinction
//! intensities, and the offspring kernel.

use serde::{Deserialize, Serialize};

use crate::fission::FissionLaw;
use crate::rates::CoefForm;

/// Offspring kernel `kbar(parent, child)`, a density in the child
/// variable supported on `0 <= child <= parent` componentwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FissionKernel {
    /// No fission source.
    None,
    /// `2 exp(-|parent|)` on the box `[0, parent]`: the limit of binary
    /// splitting with a uniformly chosen split point. Conservative with
    /// `phi(u) = prod_k u_k exp(-|u|)`, exactly two offspring.
    BinaryUniformLimit,
    /// Kernel induced from a partition law at lattice scale `n`:
    /// `phi(u) * n^l * eta(floor(n u), floor(n u'))`.
    Tabulated { law: FissionLaw, n: u64 },
}

impl FissionKernel {
    pub fn max_pieces(&self) -> f64 {
        match self {
            FissionKernel::None => 0.0,
            FissionKernel::BinaryUniformLimit => 2.0,
            FissionKernel::Tabulated { law, .. } => law.max_pieces() as f64,
        }
    }
}

/// Coefficient set of the limit equation.
#[derive(Debug, Clone, Serialize)]
pub struct LimitCoefficients {
    pub ell: usize,
    pub beta: Vec<CoefForm>,
    pub delta: Vec<CoefForm>,
    pub mu: Vec<CoefForm>,
    pub phi: CoefForm,
    /// Extinction intensity multiplying total mass. Whether it came
    /// from the measure-mode or density-mode scaling is the caller's
    /// business; the equation is the same.
    pub epsilon: CoefForm,
    pub kernel: FissionKernel,
}

impl LimitCoefficients {
    /// Transport velocity `v_k(u) = u_k (beta^k - delta^k - mu^k)(u)`.
    pub fn velocity(&self, k: usize, u: &[f64]) -> f64 {
        u[k] * (self.beta[k].eval(u) - self.delta[k].eval(u) - self.mu[k].eval(u))
    }

    pub fn phi_at(&self, u: &[f64]) -> f64 {
        self.phi.eval(u)
    }

    pub fn epsilon_at(&self, u: &[f64]) -> f64 {
        self.epsilon.eval(u)
    }

    /// Kernel density at (parent, child); zero outside the support.
    pub fn kernel_density(&self, parent: &[f64], child: &[f64]) -> f64 {
        if child.iter().zip(parent).any(|(&c, &p)| c > p) {
            return 0.0;
        }
        match &self.kernel {
            FissionKernel::None => 0.0,
            FissionKernel::BinaryUniformLimit => {
                2.0 * (-parent.iter().sum::<f64>()).exp()
            }
            FissionKernel::Tabulated { law, n } => {
                let nf = *n as f64;
                let p = comp_floor(parent, nf);
                let c = comp_floor(child, nf);
                self.phi.eval(parent) * nf.powi(self.ell as i32) * law.eta(&p, &c)
            }
        }
    }

    /// Whether the kernel satisfies the individual-conservation
    /// identity that the moment reduction relies on.
    pub fn kernel_conservative(&self) -> bool {
        match &self.kernel {
            FissionKernel::None => self.phi.constant_value() == Some(0.0),
            FissionKernel::BinaryUniformLimit | FissionKernel::Tabulated { .. } => true,
        }
    }
}

fn comp_floor(u: &[f64], n: f64) -> crate::population::Composition {
    crate::population::Composition::new(
        u.iter().map(|&x| (x * n).floor().max(0.0) as u64).collect(),
    )
}

/// Worst-case defects of the kernel identities on a set of parent
/// points: the conservation defect `max_k |int u'_k kbar du' - u_k phi|`
/// and the mass excess `max(0, int kbar du' - b phi)`.
///
/// Integrals use midpoint quadrature on the kernel support `[0, u]`
/// with `subdiv` cells per dimension, aligned to the support so that
/// piecewise-linear integrands are integrated exactly.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KernelCheck {
    pub max_moment_defect: f64,
    pub max_mass_excess: f64,
}

pub fn kernel_check(coeffs: &LimitCoefficients, parents: &[Vec<f64>], subdiv: usize) -> KernelCheck {
    let mut check = KernelCheck { max_moment_defect: 0.0, max_mass_excess: 0.0 };
    let b = coeffs.kernel.max_pieces();
    for u in parents {
        let (mass, moment) = kernel_integrals(coeffs, u, subdiv);
        let phi = coeffs.phi_at(u);
        for k in 0..coeffs.ell {
            check.max_moment_defect =
                check.max_moment_defect.max((moment[k] - u[k] * phi).abs());
        }
        check.max_mass_excess = check.max_mass_excess.max(mass - b * phi);
    }
    check
}

/// `(int kbar(u, u') du', (int u'_k kbar(u, u') du')_k)` over `[0, u]`.
pub fn kernel_integrals(
    coeffs: &LimitCoefficients,
    parent: &[f64],
    subdiv: usize,
) -> (f64, Vec<f64>) {
    let ell = coeffs.ell;
    // For tabulated kernels align cells to the lattice so the piecewise
    // structure is integrated exactly.
    let per_dim: Vec<usize> = match &coeffs.kernel {
        FissionKernel::Tabulated { n, .. } => parent
            .iter()
            .map(|&p| ((p * *n as f64).floor() as usize + 1).max(subdiv))
            .collect(),
        _ => vec![subdiv; ell],
    };
    let widths: Vec<f64> = parent.iter().zip(&per_dim).map(|(&p, &d)| p / d as f64).collect();
    let vol: f64 = widths.iter().product();
    let mut mass = 0.0;
    let mut moment = vec![0.0; ell];
    let mut idx = vec![0usize; ell];
    let mut child = vec![0.0; ell];
    loop {
        for d in 0..ell {
            child[d] = (idx[d] as f64 + 0.5) * widths[d];
        }
        let k = coeffs.kernel_density(parent, &child) * vol;
        mass += k;
        for d in 0..ell {
            moment[d] += child[d] * k;
        }
        let mut d = 0;
        loop {
            if d == ell {
                return (mass, moment);
            }
            idx[d] += 1;
            if idx[d] < per_dim[d] {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn binary_uniform_coeffs() -> LimitCoefficients {
        LimitCoefficients {
            ell: 1,
            beta: vec![CoefForm::Constant { value: 0.0 }],
            delta: vec![CoefForm::Constant { value: 0.0 }],
            mu: vec![CoefForm::Constant { value: 0.0 }],
            phi: CoefForm::ProductExp { scale: 1.0 },
            epsilon: CoefForm::Constant { value: 0.0 },
            kernel: FissionKernel::BinaryUniformLimit,
        }
    }

    #[test]
    fn analytic_kernel_conserves_to_machine_precision() {
        let coeffs = binary_uniform_coeffs();
        let parents: Vec<Vec<f64>> =
            (1..=1000).map(|j| vec![4.0 * j as f64 / 1000.0]).collect();
        let check = kernel_check(&coeffs, &parents, 64);
        assert!(check.max_moment_defect < 1e-8, "{check:?}");
        assert!(check.max_mass_excess < 1e-8, "{check:?}");
    }

    #[test]
    fn tabulated_kernel_conserves_within_lattice_tolerance() {
        let coeffs = LimitCoefficients {
            kernel: FissionKernel::Tabulated { law: FissionLaw::UniformBinary, n: 4000 },
            ..binary_uniform_coeffs()
        };
        let parents: Vec<Vec<f64>> = (1..=40).map(|j| vec![3.0 * j as f64 / 40.0]).collect();
        let check = kernel_check(&coeffs, &parents, 16);
        assert!(check.max_moment_defect < 1e-3, "{check:?}");
        assert!(check.max_mass_excess < 1e-3, "{check:?}");
    }

    #[test]
    fn two_type_kernel_identities() {
        let coeffs = LimitCoefficients {
            ell: 2,
            beta: vec![CoefForm::Constant { value: 0.0 }; 2],
            delta: vec![CoefForm::Constant { value: 0.0 }; 2],
            mu: vec![CoefForm::Constant { value: 0.0 }; 2],
            phi: CoefForm::ProductExp { scale: 1.0 },
            epsilon: CoefForm::Constant { value: 0.0 },
            kernel: FissionKernel::BinaryUniformLimit,
        };
        let parents = vec![vec![0.7, 1.3], vec![2.0, 0.4], vec![1.0, 1.0]];
        let check = kernel_check(&coeffs, &parents, 48);
        assert!(check.max_moment_defect < 1e-10, "{check:?}");
        assert!(check.max_mass_excess < 1e-10, "{check:?}");
    }
}

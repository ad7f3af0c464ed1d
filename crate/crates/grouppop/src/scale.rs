//! Scaled observables: empirical measures, rescaled rate functions and
//! step densities.
//!
//! The scaling pair `(n, m)` divides compositions by `n` (group-size
//! scale) and group counts by `m` (group-number scale). A population
//! becomes a finite measure on the positive orthant with an atom of
//! weight `X(i)/m` at `i/n`, or a step density `X(floor(n u))/m` on
//! cells of side `1/n`. Rate functions are rescaled by evaluating at
//! the floor composition `floor(n u)`; the extinction rate carries an
//! extra `m` (measure mode) or `m n^l` (density mode).

use serde::{Deserialize, Serialize};

use crate::fission::FissionLaw;
use crate::pde::grid::DensityGrid;
use crate::population::{Composition, Population};
use crate::rates::RateSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub n: u64,
    pub m: u64,
}

impl ScalingParams {
    pub fn new(n: u64, m: u64) -> Self {
        assert!(n >= 1 && m >= 1);
        Self { n, m }
    }

    pub fn floor_comp(&self, u: &[f64], ell: usize) -> Composition {
        assert_eq!(u.len(), ell);
        Composition::new(u.iter().map(|&x| (x * self.n as f64).floor().max(0.0) as u64).collect())
    }
}

/// Weighted atoms on the positive orthant. Atom locations are lattice
/// points `i/n`, weights are multiples of `1/m`, and the origin never
/// carries an atom.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    atoms: Vec<(Vec<f64>, f64)>,
    mass: f64,
}

impl EmpiricalMeasure {
    pub fn from_atoms(atoms: Vec<(Vec<f64>, f64)>) -> Self {
        let mass = atoms.iter().map(|(_, w)| w).sum();
        Self { atoms, mass }
    }

    pub fn atoms(&self) -> &[(Vec<f64>, f64)] {
        &self.atoms
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn pair_with(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.atoms.iter().map(|(u, w)| w * f(u)).sum()
    }

    /// `(mass, (int u_k d mu)_k)`.
    pub fn moments(&self) -> (f64, Vec<f64>) {
        let ell = self.atoms.first().map_or(0, |(u, _)| u.len());
        let mut first = vec![0.0; ell];
        for (u, w) in &self.atoms {
            for k in 0..ell {
                first[k] += u[k] * w;
            }
        }
        (self.mass, first)
    }
}

/// The measure with an atom of weight `X(i)/m` at `i/n` for every
/// occupied composition.
pub fn empirical_measure(pop: &Population, s: ScalingParams) -> EmpiricalMeasure {
    let atoms = pop
        .iter()
        .map(|(i, x)| (i.scaled(s.n), x as f64 / s.m as f64))
        .collect();
    EmpiricalMeasure::from_atoms(atoms)
}

/// Rescaled rate functions over the orthant: the model-level rate
/// evaluated at the floor composition. Evaluation uses the raw
/// registry forms (the model's domain is extended to all of the
/// lattice, including coordinates equal to zero).
pub struct HatRates<'a> {
    rates: &'a RateSpec,
    s: ScalingParams,
}

impl<'a> HatRates<'a> {
    pub fn new(rates: &'a RateSpec, s: ScalingParams) -> Self {
        Self { rates, s }
    }

    fn at(&self, u: &[f64]) -> Composition {
        self.s.floor_comp(u, self.rates.ell())
    }

    pub fn beta(&self, k: usize, u: &[f64]) -> f64 {
        self.rates.raw_beta(k).eval(&self.at(u))
    }

    pub fn delta(&self, k: usize, u: &[f64]) -> f64 {
        self.rates.raw_delta(k).eval(&self.at(u))
    }

    pub fn mu(&self, k: usize, u: &[f64]) -> f64 {
        self.rates.raw_mu(k).eval(&self.at(u))
    }

    pub fn phi(&self, u: &[f64]) -> f64 {
        self.rates.raw_phi().eval(&self.at(u))
    }

    /// Measure-mode extinction scaling `m * epsilon(floor(n u))`.
    pub fn epsilon_hat(&self, u: &[f64]) -> f64 {
        self.s.m as f64 * self.rates.raw_epsilon().eval(&self.at(u))
    }

    /// Density-mode extinction scaling `m n^l * epsilon(floor(n u))`.
    pub fn epsilon_check(&self, u: &[f64]) -> f64 {
        self.epsilon_hat(u) * (self.s.n as f64).powi(self.rates.ell() as i32)
    }
}

/// Pairing of a test function with the rescaled offspring kernel:
/// `sum_{0 < i' <= floor(n u)} f(i'/n) eta(floor(n u), i')`.
pub fn hat_eta_pairing(
    law: &FissionLaw,
    s: ScalingParams,
    ell: usize,
    u: &[f64],
    f: impl Fn(&[f64]) -> f64,
) -> f64 {
    let parent = s.floor_comp(u, ell);
    if parent.is_zero() {
        return 0.0;
    }
    law.offspring_support(&parent)
        .into_iter()
        .map(|piece| f(&piece.scaled(s.n)) * law.eta(&parent, &piece))
        .sum()
}

/// Worst-case defect, over a finite evaluation grid, between one
/// rung's rescaled rates and the limit coefficients:
/// `sum_k u_k (|beta gap| + |delta gap| + |mu gap|) + |phi gap| +
/// |eps gap|`, plus the kernel pairing gap
/// `|sum f(i'/n) phi_hat eta - int f kbar du'|` for a bank of smooth
/// probes. Checked pointwise on the grid; the resolution is part of
/// the report.
#[derive(Debug, Clone, Serialize)]
pub struct RateConvergenceDefect {
    pub n: u64,
    pub m: u64,
    pub grid_points: usize,
    pub rate_defect: f64,
    pub kernel_defect: f64,
}

pub fn rate_convergence_defect(
    rates: &RateSpec,
    law: &FissionLaw,
    limits: &crate::pde::coeffs::LimitCoefficients,
    s: ScalingParams,
    box_hi: f64,
    grid_points: usize,
) -> RateConvergenceDefect {
    let ell = rates.ell();
    let hat = HatRates::new(rates, s);
    let epsilon_hat = |u: &[f64]| hat.epsilon_hat(u);
    let probes: [fn(&[f64]) -> f64; 3] = [
        |_| 1.0,
        |u| u.iter().sum(),
        |u| (-u.iter().sum::<f64>()).exp(),
    ];
    let mut rate_defect = 0.0f64;
    let mut kernel_defect = 0.0f64;
    // axis-diagonal evaluation grid (u, u, ..)
    for j in 1..=grid_points {
        let coord = box_hi * j as f64 / grid_points as f64;
        let u = vec![coord; ell];
        let mut defect = 0.0;
        for k in 0..ell {
            defect += u[k]
                * ((hat.beta(k, &u) - limits.beta[k].eval(&u)).abs()
                    + (hat.delta(k, &u) - limits.delta[k].eval(&u)).abs()
                    + (hat.mu(k, &u) - limits.mu[k].eval(&u)).abs());
        }
        defect += (hat.phi(&u) - limits.phi.eval(&u)).abs();
        defect += (epsilon_hat(&u) - limits.epsilon.eval(&u)).abs();
        rate_defect = rate_defect.max(defect);

        for f in probes {
            let discrete = hat.phi(&u) * hat_eta_pairing(law, s, ell, &u, f);
            let limit = kernel_pairing_limit(limits, &u, f);
            kernel_defect = kernel_defect.max((discrete - limit).abs());
        }
    }
    RateConvergenceDefect {
        n: s.n,
        m: s.m,
        grid_points,
        rate_defect,
        kernel_defect,
    }
}

fn kernel_pairing_limit(
    limits: &crate::pde::coeffs::LimitCoefficients,
    parent: &[f64],
    f: fn(&[f64]) -> f64,
) -> f64 {
    // support-aligned midpoint quadrature of f against the limit kernel
    let ell = parent.len();
    let subdiv = 64usize;
    let widths: Vec<f64> = parent.iter().map(|&p| p / subdiv as f64).collect();
    let vol: f64 = widths.iter().product();
    let mut idx = vec![0usize; ell];
    let mut child = vec![0.0; ell];
    let mut acc = 0.0;
    loop {
        for d in 0..ell {
            child[d] = (idx[d] as f64 + 0.5) * widths[d];
        }
        acc += f(&child) * limits.kernel_density(parent, &child) * vol;
        let mut d = 0;
        loop {
            if d == ell {
                return acc;
            }
            idx[d] += 1;
            if idx[d] < subdiv {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// The step density `X(floor(n u))/m` on cells `[i/n, (i+1)/n)`. The
/// grid extends to cover every occupied composition; it integrates to
/// `X* / (m n^l)`.
pub fn density_step_function(pop: &Population, s: ScalingParams) -> DensityGrid {
    let ell = pop.ell();
    let mut max_coord = 1u64;
    for (i, _) in pop.iter() {
        for k in 0..ell {
            max_coord = max_coord.max(i.get(k) + 1);
        }
    }
    let h = 1.0 / s.n as f64;
    let dims = vec![max_coord as usize; ell];
    let mut grid = DensityGrid::zeros(h, dims.clone());
    for (i, x) in pop.iter() {
        let idx: Vec<usize> = i.counts().iter().map(|&c| c as usize).collect();
        let flat = grid.flat_index(&idx);
        grid.values_mut()[flat] = x as f64 / s.m as f64;
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::comp;
    use crate::rates::{CoefForm, ScaledRate};

    fn const_rate(v: f64) -> ScaledRate {
        ScaledRate::LimitForm { coef: CoefForm::Constant { value: v }, n: 1, denom: 1.0 }
    }

    fn rates_with_phi(phi: ScaledRate) -> RateSpec {
        RateSpec::new(
            1,
            vec![const_rate(0.5)],
            vec![const_rate(0.0)],
            vec![const_rate(0.0)],
            phi,
            const_rate(0.25),
        )
    }

    #[test]
    fn empirical_measure_examples() {
        let pop = Population::new(1);
        let m = empirical_measure(&pop, ScalingParams::new(3, 2));
        assert_eq!(m.mass(), 0.0);
        assert!(m.atoms().is_empty());

        let mut pop = Population::new(1);
        pop.insert(comp(&[3]), 2);
        let m = empirical_measure(&pop, ScalingParams::new(3, 2));
        assert_eq!(m.atoms(), &[(vec![1.0], 1.0)]);
        assert_eq!(m.mass(), 1.0);
    }

    #[test]
    fn empirical_mass_matches_totals_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let mut pop = Population::new(2);
            for _ in 0..rng.gen_range(0..8usize) {
                pop.insert(
                    comp(&[rng.gen_range(0..4u64), rng.gen_range(1..4u64)]),
                    rng.gen_range(1..5u64),
                );
            }
            let s = ScalingParams::new(rng.gen_range(1..6u64), rng.gen_range(1..6u64));
            let m = empirical_measure(&pop, s);
            let expected = pop.totals().0 as f64 / s.m as f64;
            assert!((m.mass() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_measure_is_linear_in_the_population() {
        let s = ScalingParams::new(2, 4);
        let mut a = Population::new(1);
        a.insert(comp(&[1]), 2);
        a.insert(comp(&[3]), 1);
        let mut b = Population::new(1);
        b.insert(comp(&[3]), 2);
        let mut both = a.clone();
        for (i, x) in b.iter() {
            both.insert(i.clone(), x);
        }
        let f = |u: &[f64]| (1.0 + u[0]).recip();
        let lhs = empirical_measure(&both, s).pair_with(f);
        let rhs = empirical_measure(&a, s).pair_with(f) + empirical_measure(&b, s).pair_with(f);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn constant_rates_are_scale_free() {
        let rates = rates_with_phi(const_rate(0.0));
        for n in [1u64, 10, 100] {
            let hat = HatRates::new(&rates, ScalingParams::new(n, 1));
            assert_eq!(hat.beta(0, &[0.37]), 0.5);
        }
    }

    #[test]
    fn split_uniform_phi_floor_evaluation() {
        let rates = rates_with_phi(ScaledRate::SplitUniformPhi { n: 10 });
        let hat = HatRates::new(&rates, ScalingParams::new(10, 1));
        let expected = 3.0 * (-0.2f64).exp() / 10.0;
        assert!((hat.phi(&[0.25]) - expected).abs() < 1e-12);
    }

    #[test]
    fn split_uniform_phi_converges_to_product_exponential() {
        let limit = |u: f64| u * (-u).exp();
        let mut prev_sup = f64::INFINITY;
        for n in [10u64, 40, 160] {
            let rates = rates_with_phi(ScaledRate::SplitUniformPhi { n });
            let hat = HatRates::new(&rates, ScalingParams::new(n, 1));
            let mut sup: f64 = 0.0;
            for j in 0..400 {
                let u = 4.0 * (j as f64 + 0.5) / 400.0;
                sup = sup.max((hat.phi(&[u]) - limit(u)).abs());
            }
            assert!(sup < prev_sup, "sup did not shrink at n = {n}");
            prev_sup = sup;
        }
        assert!(prev_sup < 0.02);
    }

    #[test]
    fn extinction_scalings_differ_by_n_to_ell() {
        let rates = rates_with_phi(const_rate(0.0));
        let s = ScalingParams::new(8, 3);
        let hat = HatRates::new(&rates, s);
        for u in [[0.1], [0.9], [2.3]] {
            let ratio = hat.epsilon_check(&u) / hat.epsilon_hat(&u);
            assert!((ratio - 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eta_pairing_identities() {
        let law = FissionLaw::UniformBinary;
        let s = ScalingParams::new(7, 1);
        for u in [[0.9], [1.4], [3.3]] {
            let total = hat_eta_pairing(&law, s, 1, &u, |_| 1.0);
            assert!(total <= law.max_pieces() as f64 + 1e-12);
            let mean = hat_eta_pairing(&law, s, 1, &u, |v| v[0]);
            let floor = (u[0] * 7.0).floor() / 7.0;
            assert!((mean - floor).abs() < 1e-12, "u {u:?}: {mean} vs {floor}");
        }
    }

    #[test]
    fn eta_pairing_identities_two_types() {
        let law = FissionLaw::UniformBinary;
        let s = ScalingParams::new(5, 1);
        for u in [[0.7, 1.1], [1.3, 0.4], [2.0, 2.0]] {
            let total = hat_eta_pairing(&law, s, 2, &u, |_| 1.0);
            assert!(total <= 2.0 + 1e-12);
            for k in 0..2 {
                let mean = hat_eta_pairing(&law, s, 2, &u, |v| v[k]);
                let floor = (u[k] * 5.0).floor() / 5.0;
                assert!((mean - floor).abs() < 1e-12, "u {u:?} k {k}: {mean} vs {floor}");
            }
        }
    }

    #[test]
    fn eta_pairing_converges_to_uniform_kernel() {
        // For the binary uniform law the rescaled kernel tends to the
        // density (2/u) on [0, u].
        let law = FissionLaw::UniformBinary;
        let u = 1.5f64;
        let f = |v: &[f64]| (2.0 * v[0]).cos();
        // closed form: int_0^u cos(2v) (2/u) dv = sin(2u)/u
        let limit = (2.0 * u).sin() / u;
        let mut prev = f64::INFINITY;
        for n in [10u64, 40, 160, 640] {
            let s = ScalingParams::new(n, 1);
            let val = hat_eta_pairing(&law, s, 1, &[u], f);
            let err = (val - limit).abs();
            assert!(err < prev, "pairing error did not shrink at n = {n}");
            prev = err;
        }
        assert!(prev < 5e-3);
    }

    #[test]
    fn step_density_single_group() {
        let mut pop = Population::new(1);
        pop.insert(comp(&[1]), 1);
        let grid = density_step_function(&pop, ScalingParams::new(1, 1));
        assert_eq!(grid.h(), 1.0);
        assert_eq!(grid.values(), &[0.0, 1.0]);
        assert!((grid.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step_density_mass_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut pop = Population::new(1);
            for _ in 0..rng.gen_range(1..6usize) {
                pop.insert(comp(&[rng.gen_range(1..20u64)]), rng.gen_range(1..7u64));
            }
            let s = ScalingParams::new(rng.gen_range(1..9u64), rng.gen_range(1..5u64));
            let grid = density_step_function(&pop, s);
            let expected = pop.group_total() as f64 / (s.m as f64 * s.n as f64);
            assert!((grid.mass() - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn step_density_pairing_matches_atom_sum() {
        let mut pop = Population::new(1);
        pop.insert(comp(&[2]), 3);
        pop.insert(comp(&[5]), 1);
        let s = ScalingParams::new(4, 2);
        let grid = density_step_function(&pop, s);
        let g = |u: &[f64]| (-u[0]).exp();
        let quad = grid.pair_with(g);
        // atom-sum evaluation at cell midpoints, exact for the step function
        let atoms: f64 = pop
            .iter()
            .map(|(i, x)| {
                let mid = (i.get(0) as f64 + 0.5) / 4.0;
                x as f64 / 2.0 * g(&[mid]) / 4.0
            })
            .sum();
        assert!((quad - atoms).abs() < 1e-12);
    }
}

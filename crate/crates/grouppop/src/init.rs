//! Sampling initial populations from a density.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::pde::grid::DensityGrid;
use crate::population::{Composition, Population};

#[derive(Debug, Error)]
pub enum InitError {
    #[error("initial density has nonpositive mass")]
    ZeroMass,
    #[error("initial density is degenerate at this scale: essentially all mass maps to the zero composition")]
    Degenerate,
}

/// Draw `ceil(m_scale * mass)` groups i.i.d. from the normalized
/// density: pick a cell proportionally to its mass, a uniform point
/// within it, and take the composition `floor(n u)`. Draws landing on
/// the zero composition are rejected and redrawn, so the empirical
/// measure of the result converges to the density as `n, m` grow.
pub fn sample_initial_population(
    density: &DensityGrid,
    n: u64,
    m_scale: u64,
    seed: u64,
) -> Result<Population, InitError> {
    let mass = density.mass();
    if mass <= 0.0 {
        return Err(InitError::ZeroMass);
    }
    let ell = density.ell();
    // Mass fraction that can only produce the zero composition: cells
    // entirely inside [0, 1/n)^l.
    let h = density.h();
    let mut zero_mass = 0.0;
    let mut center = vec![0.0; ell];
    for flat in 0..density.len() {
        density.center_of(flat, &mut center);
        if center.iter().all(|&c| c + 0.5 * h <= 1.0 / n as f64 + 1e-15) {
            zero_mass += density.values()[flat];
        }
    }
    if zero_mass * density.cell_volume() >= mass * 0.999 {
        return Err(InitError::Degenerate);
    }

    let cdf: Vec<f64> = density
        .values()
        .iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    let total = *cdf.last().unwrap();
    let groups = (m_scale as f64 * mass).ceil() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pop = Population::new(ell);
    let mut rejects = 0u64;
    let reject_cap = 1000 + 100 * groups;
    let mut drawn = 0u64;
    while drawn < groups {
        let r = rng.gen::<f64>() * total;
        let flat = match cdf.binary_search_by(|x| x.partial_cmp(&r).unwrap()) {
            Ok(j) => j + 1,
            Err(j) => j,
        }
        .min(density.len() - 1);
        density.center_of(flat, &mut center);
        let counts: Vec<u64> = center
            .iter()
            .map(|&c| {
                let u = c + h * (rng.gen::<f64>() - 0.5);
                (u * n as f64).floor().max(0.0) as u64
            })
            .collect();
        let comp = Composition::new(counts);
        if comp.is_zero() {
            rejects += 1;
            if rejects > reject_cap {
                return Err(InitError::Degenerate);
            }
            continue;
        }
        pop.add_one(comp);
        drawn += 1;
    }
    Ok(pop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{rho_w, MeasureRef, TestFunctionBank};
    use crate::scale::{empirical_measure, ScalingParams};

    #[test]
    fn group_count_contract() {
        let density = DensityGrid::from_fn(0.05, vec![80], |u| {
            if (1.0..2.0).contains(&u[0]) {
                2.5
            } else {
                0.0
            }
        });
        // mass 2.5, scale 100 -> 250 groups
        let pop = sample_initial_population(&density, 10, 100, 1).unwrap();
        assert_eq!(pop.group_total(), 250);
    }

    #[test]
    fn point_mass_density_gives_one_composition() {
        let mut density = DensityGrid::zeros(0.1, vec![40]);
        let flat = 15; // cell [1.5, 1.6)
        density.values_mut()[flat] = 10.0; // mass 1.0
        let pop = sample_initial_population(&density, 10, 50, 9).unwrap();
        assert_eq!(pop.group_total(), 50);
        assert_eq!(pop.n_compositions(), 1);
        assert_eq!(pop.iter().next().unwrap().0.get(0), 15);
    }

    #[test]
    fn empirical_measure_of_sample_approaches_density() {
        let density = DensityGrid::from_fn(1.0 / 64.0, vec![256], |u| {
            if (1.0..2.0).contains(&u[0]) {
                1.0
            } else {
                0.0
            }
        });
        let bank = TestFunctionBank::build(1, 4.0, 128, 5);
        let s = ScalingParams::new(100, 1000);
        let mut dists = Vec::new();
        for seed in 0..20 {
            let pop = sample_initial_population(&density, s.n, s.m, seed).unwrap();
            let emp = empirical_measure(&pop, s);
            dists.push(rho_w(
                MeasureRef::Atoms(&emp),
                MeasureRef::Density(&density),
                &bank,
            ));
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = dists[dists.len() / 2];
        assert!(median <= 0.05, "median rho_w {median}");
    }

    #[test]
    fn degenerate_density_is_rejected() {
        // all mass below 1/n
        let mut density = DensityGrid::zeros(0.001, vec![4000]);
        density.values_mut()[0] = 5.0;
        assert!(matches!(
            sample_initial_population(&density, 10, 100, 3),
            Err(InitError::Degenerate)
        ));
    }
}

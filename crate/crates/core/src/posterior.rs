//! Ability posterior as point masses on a regular grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irt::{fisher_info, irf_3pl, ItemParams, ThetaGrid};

/// Per-point likelihood floor applied before each update.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

/// Prior family evaluated at the grid points and renormalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    #[default]
    StandardNormal,
    Normal {
        mean: f64,
        sd: f64,
    },
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    grid: ThetaGrid,
    mass: Vec<f64>,
}

impl Posterior {
    pub fn prior(grid: ThetaGrid, spec: &PriorSpec) -> Result<Self> {
        let density: Vec<f64> = match *spec {
            PriorSpec::Uniform => vec![1.0; grid.len()],
            PriorSpec::StandardNormal => grid.points().map(|t| (-0.5 * t * t).exp()).collect(),
            PriorSpec::Normal { mean, sd } => {
                if !(sd.is_finite() && sd > 0.0) {
                    return Err(Error::InvalidPrior(format!("sd must be > 0, got {sd}")));
                }
                if !mean.is_finite() {
                    return Err(Error::InvalidPrior(format!("mean must be finite, got {mean}")));
                }
                grid.points()
                    .map(|t| {
                        let z = (t - mean) / sd;
                        (-0.5 * z * z).exp()
                    })
                    .collect()
            }
        };
        Self::from_mass(grid, density)
    }

    /// Normalizes arbitrary non-negative weights into a posterior.
    pub fn from_mass(grid: ThetaGrid, mut mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.len() {
            return Err(Error::InvalidPrior(format!(
                "mass has {} entries, grid has {}",
                mass.len(),
                grid.len()
            )));
        }
        if mass.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidPrior("mass entries must be finite and >= 0".into()));
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegeneratePosterior);
        }
        mass.iter_mut().for_each(|m| *m /= total);
        Ok(Self { grid, mass })
    }

    /// All mass on grid point `j`.
    pub fn point_mass(grid: ThetaGrid, j: usize) -> Self {
        let mut mass = vec![0.0; grid.len()];
        mass[j] = 1.0;
        Self { grid, mass }
    }

    pub fn grid(&self) -> &ThetaGrid {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Bayes update for one binary grade.
    pub fn update(&self, params: &ItemParams, correct: bool) -> Result<Self> {
        let mut mass: Vec<f64> = self
            .grid
            .points()
            .zip(&self.mass)
            .map(|(t, m)| {
                let p = irf_3pl(t, params);
                let like = if correct { p } else { 1.0 - p };
                m * like.max(LIKELIHOOD_FLOOR)
            })
            .collect();
        let total: f64 = mass.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegeneratePosterior);
        }
        mass.iter_mut().for_each(|m| *m /= total);
        Ok(Self {
            grid: self.grid,
            mass,
        })
    }

    fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.mass
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect()
    }

    fn draw_index<R: Rng + ?Sized>(&self, cdf: &[f64], rng: &mut R) -> usize {
        let total = cdf[cdf.len() - 1];
        let u = rng.random::<f64>() * total;
        let j = cdf.partition_point(|&c| c <= u);
        if j < cdf.len() {
            j
        } else {
            // u landed on the rounding edge; take the last point with mass
            self.mass.iter().rposition(|&m| m > 0.0).unwrap_or(0)
        }
    }

    /// `k` iid grid indices drawn from the posterior.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Vec<usize> {
        let cdf = self.cdf();
        (0..k).map(|_| self.draw_index(&cdf, rng)).collect()
    }

    /// `k` iid abilities drawn from the posterior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Vec<f64> {
        self.sample_indices(rng, k)
            .into_iter()
            .map(|j| self.grid.point(j))
            .collect()
    }

    /// Histogram of `k` draws over grid indices. Consumes the stream exactly
    /// like [`Posterior::sample`].
    pub fn sample_counts<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Vec<u32> {
        let cdf = self.cdf();
        let mut counts = vec![0u32; self.grid.len()];
        for _ in 0..k {
            counts[self.draw_index(&cdf, rng)] += 1;
        }
        counts
    }

    pub fn mean(&self) -> f64 {
        self.grid.points().zip(&self.mass).map(|(t, m)| t * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.grid
            .points()
            .zip(&self.mass)
            .map(|(t, m)| (t - mu) * (t - mu) * m)
            .sum()
    }

    /// Posterior expectation of the item's Fisher information.
    pub fn expected_info(&self, params: &ItemParams) -> f64 {
        self.grid
            .points()
            .zip(&self.mass)
            .map(|(t, m)| m * fisher_info(t, params))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn three() -> ThetaGrid {
        ThetaGrid::new(-1.0, 1.0, 3).unwrap()
    }

    #[test]
    fn uniform_prior_three_points() {
        let p = Posterior::prior(three(), &PriorSpec::Uniform).unwrap();
        for m in p.mass() {
            assert!((m - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(p.mean().abs() < 1e-15);
        assert!((p.variance() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn standard_normal_prior_symmetric() {
        let g = ThetaGrid::default();
        let p = Posterior::prior(g, &PriorSpec::StandardNormal).unwrap();
        let m = p.mass();
        for j in 0..g.len() {
            assert!((m[j] - m[g.len() - 1 - j]).abs() < 1e-15);
        }
        assert!(p.mean().abs() < 1e-12);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normal_prior_renormalization() {
        // Oracle: density at each point divided by the grid sum of densities.
        let g = ThetaGrid::default();
        let dens: Vec<f64> = g
            .points()
            .map(|t| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt())
            .collect();
        let total: f64 = dens.iter().sum();
        assert!((dens[80] - 0.39894).abs() < 1e-5);
        let p = Posterior::prior(g, &PriorSpec::Normal { mean: 0.0, sd: 1.0 }).unwrap();
        assert!((p.mass()[80] - dens[80] / total).abs() < 1e-15);
        assert!(matches!(
            Posterior::prior(g, &PriorSpec::Normal { mean: 0.0, sd: 0.0 }),
            Err(Error::InvalidPrior(_))
        ));
    }

    #[test]
    fn toy_update_matches_hand_values() {
        let p = Posterior::prior(three(), &PriorSpec::Uniform).unwrap();
        let item = ItemParams::two_pl(1.0, 0.0).unwrap();
        let post = p.update(&item, true).unwrap();
        // sigma(-1), sigma(0), sigma(1) renormalized
        let s = [0.268_941_421_369_995_1, 0.5, 0.731_058_578_630_004_9];
        let z: f64 = s.iter().sum();
        let expected = [0.17930, 0.33333, 0.48737];
        for j in 0..3 {
            assert!((post.mass()[j] - s[j] / z).abs() < 1e-12);
            assert!((post.mass()[j] - expected[j]).abs() < 1e-5);
        }
    }

    #[test]
    fn flat_item_leaves_posterior_unchanged() {
        let p = Posterior::prior(ThetaGrid::default(), &PriorSpec::StandardNormal).unwrap();
        let item = ItemParams::two_pl(1e-6, 0.5).unwrap();
        for correct in [true, false] {
            let q = p.update(&item, correct).unwrap();
            let diff = p
                .mass()
                .iter()
                .zip(q.mass())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-6);
        }
    }

    #[test]
    fn correct_and_incorrect_mirror() {
        let g = ThetaGrid::default();
        let p = Posterior::prior(g, &PriorSpec::StandardNormal).unwrap();
        let item = ItemParams::two_pl(1.3, 0.0).unwrap();
        let up = p.update(&item, true).unwrap();
        let down = p.update(&item, false).unwrap();
        for j in 0..g.len() {
            assert!((up.mass()[j] - down.mass()[g.len() - 1 - j]).abs() < 1e-14);
        }
    }

    #[test]
    fn point_mass_sampling() {
        let g = ThetaGrid::new(-1.0, 1.0, 5).unwrap();
        let p = Posterior::point_mass(g, 3);
        let mut r = rng::from_seed(1);
        assert!(p.sample(&mut r, 100).iter().all(|&t| t == 0.5));
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let p = Posterior::prior(three(), &PriorSpec::Uniform).unwrap();
        let mut r = rng::from_seed(11);
        let counts = p.sample_counts(&mut r, 30_000);
        for c in counts {
            assert!((c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn sampling_reproducible_and_counts_consistent() {
        let p = Posterior::prior(ThetaGrid::default(), &PriorSpec::StandardNormal).unwrap();
        let a = p.sample(&mut rng::from_seed(5), 500);
        let b = p.sample(&mut rng::from_seed(5), 500);
        assert_eq!(a, b);
        let idx = p.sample_indices(&mut rng::from_seed(5), 500);
        let counts = p.sample_counts(&mut rng::from_seed(5), 500);
        let mut hist = vec![0u32; p.grid().len()];
        idx.iter().for_each(|&j| hist[j] += 1);
        assert_eq!(hist, counts);
    }

    #[test]
    fn sample_mean_within_three_standard_errors() {
        let p = Posterior::prior(
            ThetaGrid::default(),
            &PriorSpec::Normal { mean: 0.4, sd: 0.8 },
        )
        .unwrap();
        let n = 100_000;
        let draws = p.sample(&mut rng::from_seed(99), n);
        let m = draws.iter().sum::<f64>() / n as f64;
        let se = (p.variance() / n as f64).sqrt();
        assert!((m - p.mean()).abs() < 3.0 * se);
    }

    #[test]
    fn expected_info_examples() {
        let g = ThetaGrid::default();
        let item = ItemParams::new(1.4, 0.1, 0.3).unwrap();
        let pm = Posterior::point_mass(g, 90);
        assert_eq!(pm.expected_info(&item), fisher_info(g.point(90), &item));

        let p = Posterior::prior(three(), &PriorSpec::Uniform).unwrap();
        let item = ItemParams::two_pl(2.0, 0.0).unwrap();
        let oracle = (fisher_info(-1.0, &item) + fisher_info(0.0, &item) + fisher_info(1.0, &item)) / 3.0;
        assert!((p.expected_info(&item) - oracle).abs() < 1e-15);
    }
}

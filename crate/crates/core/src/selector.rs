//! Thompson-sampling item selection with Gamma-randomized information rewards.
//!
//! Each round draws `k_draws` abilities from the posterior, draws one
//! randomized information parameter per eligible item (discrimination in
//! 2PL mode, kernel height in 3PL-kernel mode), and picks the item with the
//! largest reward averaged over the drawn abilities. The randomization has
//! shape `base / gamma` and scale `gamma`, so its mean is the calibrated value
//! and its variance is `base * gamma`; `gamma` therefore trades measurement
//! efficiency against item exposure.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::bank::Item;
use crate::error::{Error, Result};
use crate::irt::{fisher_info, kernel_info, ItemParams, KernelParams};
use crate::posterior::Posterior;

/// Which information curve serves as the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Exact Fisher information with randomized discrimination.
    #[default]
    TwoPl,
    /// Gaussian-kernel approximation with randomized height.
    ThreePlKernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    #[default]
    Bandit,
    /// Uniformly random eligible item; a non-adaptive baseline.
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub gamma: f64,
    pub k_draws: usize,
    pub mode: RewardMode,
    pub policy: SelectionPolicy,
    /// When false the calibrated parameters are used as-is.
    pub randomize: bool,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            k_draws: 100,
            mode: RewardMode::TwoPl,
            policy: SelectionPolicy::Bandit,
            randomize: true,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.k_draws == 0 {
            return Err(Error::InvalidConfig("k_draws must be >= 1".into()));
        }
        Ok(())
    }
}

/// Eligibility constraint on item tags.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TagConstraint {
    #[default]
    Any,
    HasTag(String),
}

impl TagConstraint {
    pub fn admits(&self, item: &Item) -> bool {
        match self {
            TagConstraint::Any => true,
            TagConstraint::HasTag(t) => item.has_tag(t),
        }
    }
}

/// Items not yet administered that satisfy `constraint`.
pub fn filter_eligible<'a, I>(
    items: I,
    administered: &BTreeSet<String>,
    constraint: &TagConstraint,
) -> Vec<&'a Item>
where
    I: IntoIterator<Item = &'a Item>,
{
    items
        .into_iter()
        .filter(|it| !administered.contains(&it.item_id) && constraint.admits(it))
        .collect()
}

fn gamma_draw<R: Rng + ?Sized>(base: f64, gamma: f64, rng: &mut R) -> Result<f64> {
    let shape = base / gamma;
    if !(shape.is_finite() && shape > 0.0 && gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidShape { base, gamma });
    }
    let dist = Gamma::new(shape, gamma).map_err(|_| Error::InvalidShape { base, gamma })?;
    // tiny shapes can underflow to exactly zero
    Ok(dist.sample(rng).max(f64::MIN_POSITIVE))
}

/// Randomized discrimination `~ Gamma(shape = a / gamma, scale = gamma)`.
pub fn randomize_2pl<R: Rng + ?Sized>(params: &ItemParams, gamma: f64, rng: &mut R) -> Result<f64> {
    gamma_draw(params.a, gamma, rng)
}

/// Randomized kernel height `~ Gamma(shape = h / gamma, scale = gamma)`.
pub fn randomize_3pl_height<R: Rng + ?Sized>(
    kernel: &KernelParams,
    gamma: f64,
    rng: &mut R,
) -> Result<f64> {
    gamma_draw(kernel.h, gamma, rng)
}

/// Sampled abilities collapsed to (theta, weight) pairs with weights summing to 1.
fn posterior_draws<R: Rng + ?Sized>(post: &Posterior, k: usize, rng: &mut R) -> Vec<(f64, f64)> {
    let counts = post.sample_counts(rng, k);
    let inv_k = 1.0 / k as f64;
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(j, &c)| (post.grid().point(j), c as f64 * inv_k))
        .collect()
}

/// Per-item rewards averaged over `cfg.k_draws` posterior draws, in the
/// order of `eligible`. One randomization draw per item, shared across draws.
pub fn average_rewards<R: Rng + ?Sized>(
    eligible: &[&Item],
    post: &Posterior,
    cfg: &SelectorConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let draws = posterior_draws(post, cfg.k_draws, rng);
    eligible
        .iter()
        .map(|item| match cfg.mode {
            RewardMode::TwoPl => {
                let mut params = item.params;
                if cfg.randomize {
                    params.a = randomize_2pl(&item.params, cfg.gamma, rng)?;
                }
                Ok(draws.iter().map(|&(t, w)| w * fisher_info(t, &params)).sum())
            }
            RewardMode::ThreePlKernel => {
                let mut kernel = item.kernel;
                if cfg.randomize {
                    kernel.h = randomize_3pl_height(&item.kernel, cfg.gamma, rng)?;
                }
                Ok(draws.iter().map(|&(t, w)| w * kernel_info(t, &kernel)).sum())
            }
        })
        .collect()
}

/// Index of the maximum, ties broken uniformly at random.
fn argmax_random_tie<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> usize {
    let mut best = 0;
    let mut ties = 1u32;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
            ties = 1;
        } else if v == values[best] {
            ties += 1;
            if rng.random_range(0..ties) == 0 {
                best = i;
            }
        }
    }
    best
}

/// Picks the next item from `eligible`.
pub fn select<'a, R: Rng + ?Sized>(
    eligible: &[&'a Item],
    post: &Posterior,
    cfg: &SelectorConfig,
    rng: &mut R,
) -> Result<&'a Item> {
    if eligible.is_empty() {
        return Err(Error::EmptyBank);
    }
    cfg.validate()?;
    let idx = match cfg.policy {
        SelectionPolicy::UniformRandom => rng.random_range(0..eligible.len()),
        SelectionPolicy::Bandit => {
            let rewards = average_rewards(eligible, post, cfg, rng)?;
            argmax_random_tie(&rewards, rng)
        }
    };
    Ok(eligible[idx])
}

//! Session simulation by nearest-neighbor replay of historical grades or by
//! synthetic grading from the item response function, plus exposure tuning.
//!
//! Sessions run in parallel; each draws from its own named sub-stream of the
//! master seed and results are gathered in session order, so a report is a
//! pure function of its inputs.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

use crate::bank::{Item, ItemBank};
use crate::calibration::precompute_kernel;
use crate::error::{Error, Result};
use crate::irt::{irf_3pl, ItemParams};
use crate::metrics;
use crate::rng::{self, derive_seed};
use crate::session::{Blueprint, SessionConfig, SessionState};

/// A past session: proxy ability plus the binary grades it received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoricalSession {
    pub session_id: String,
    pub proxy_theta: f64,
    pub grades: BTreeMap<String, u8>,
}

impl HistoricalSession {
    pub fn validate(&self) -> Result<()> {
        if !self.proxy_theta.is_finite() {
            return Err(Error::Malformed(format!("session {}: proxy_theta not finite", self.session_id)));
        }
        if self.grades.is_empty() {
            return Err(Error::Malformed(format!("session {}: no grades", self.session_id)));
        }
        if let Some((id, g)) = self.grades.iter().find(|(_, g)| **g > 1) {
            return Err(Error::Malformed(format!(
                "session {}: grade {g} for {id} is not 0 or 1",
                self.session_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Donor {
    pub theta: f64,
    pub session_id: String,
    pub correct: bool,
}

/// Per-item donor lists sorted by `(proxy_theta, session_id)`.
#[derive(Debug, Clone, Default)]
pub struct DonorIndex {
    by_item: HashMap<String, Vec<Donor>>,
}

impl DonorIndex {
    pub fn new(history: &[HistoricalSession]) -> Result<Self> {
        let mut by_item: HashMap<String, Vec<Donor>> = HashMap::new();
        for s in history {
            s.validate()?;
            for (item, &g) in &s.grades {
                by_item.entry(item.clone()).or_default().push(Donor {
                    theta: s.proxy_theta,
                    session_id: s.session_id.clone(),
                    correct: g == 1,
                });
            }
        }
        for donors in by_item.values_mut() {
            donors.sort_by(|a, b| a.theta.total_cmp(&b.theta).then_with(|| a.session_id.cmp(&b.session_id)));
        }
        Ok(Self { by_item })
    }

    /// The session holding `item_id` whose proxy ability is closest to
    /// `target`; equal distances go to the smallest session id.
    pub fn nearest(&self, item_id: &str, target: f64) -> Option<&Donor> {
        let donors = self.by_item.get(item_id)?;
        let split = donors.partition_point(|d| d.theta < target);
        // run of equal thetas just below the target, then the run at or above it
        let below = donors[..split]
            .iter()
            .rev()
            .take_while(|d| Some(d.theta) == split.checked_sub(1).map(|j| donors[j].theta));
        let above = donors[split..]
            .iter()
            .take_while(|d| Some(d.theta) == donors.get(split).map(|n| n.theta));
        below.chain(above).min_by(|a, b| {
            (a.theta - target)
                .abs()
                .total_cmp(&(b.theta - target).abs())
                .then_with(|| a.session_id.cmp(&b.session_id))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub session: SessionConfig,
    /// Run every target a second time with an independent selection stream.
    pub retest: bool,
    /// Grade from the IRF when no historical session holds the item.
    pub donor_fallback: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            retest: false,
            donor_fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSession {
    pub session_id: String,
    pub reference_theta: f64,
    pub scores: BTreeMap<String, f64>,
    pub items: Vec<String>,
    pub grades: Vec<u8>,
    pub donor_fallbacks: usize,
    pub tag_fallbacks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retest_scores: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub administrations: u64,
    pub max_exposure: Option<f64>,
    pub max_exposure_item: Option<String>,
    pub score_sd: Option<f64>,
    pub score_correlation: Option<f64>,
    pub rmse: Option<f64>,
    pub retest_reliability: Option<f64>,
    pub sem: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationKind {
    Synthetic,
    NearestNeighbor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub kind: SimulationKind,
    pub seed: u64,
    pub sessions: Vec<SimulatedSession>,
    /// Selections per item, grouped by item type. Counts cover first sittings only.
    pub exposure: BTreeMap<String, BTreeMap<String, u64>>,
    pub metrics: BTreeMap<String, TypeMetrics>,
    pub donor_fallbacks: usize,
}

impl SimulationReport {
    pub fn total_administrations(&self) -> u64 {
        self.exposure.values().flat_map(|m| m.values()).sum()
    }

    /// Largest per-type exposure share across all item types.
    pub fn max_exposure(&self) -> Result<(f64, String)> {
        self.exposure
            .values()
            .filter_map(|counts| metrics::max_exposure(counts).ok())
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .ok_or(Error::EmptyReport)
    }

    pub fn max_exposure_for(&self, item_type: &str) -> Result<(f64, String)> {
        metrics::max_exposure(self.exposure.get(item_type).ok_or(Error::EmptyReport)?)
    }

    pub fn scores_for(&self, item_type: &str) -> Vec<f64> {
        self.sessions
            .iter()
            .filter_map(|s| s.scores.get(item_type).copied())
            .collect()
    }
}

fn run_session<F>(
    session_id: String,
    seed: u64,
    blueprint: &Blueprint,
    bank: &ItemBank,
    cfg: &SessionConfig,
    mut grade: F,
) -> Result<(SessionState, usize)>
where
    F: FnMut(&Item) -> Result<(bool, bool)>,
{
    let mut state = SessionState::start(session_id, blueprint, bank, cfg, seed, None)?;
    let mut fallbacks = 0;
    while !state.is_finished() {
        let pending = state.next_item(bank, None)?;
        let item = bank
            .get(&pending.item_id)
            .ok_or_else(|| Error::UnknownItem(pending.item_id.clone()))?;
        let (correct, fallback) = grade(item)?;
        fallbacks += fallback as usize;
        state.submit_grade(bank, &pending.item_id, correct, None)?;
    }
    Ok((state, fallbacks))
}

struct Sitting {
    state: SessionState,
    fallbacks: usize,
}

fn assemble(
    kind: SimulationKind,
    seed: u64,
    reference: &[f64],
    first: Vec<Sitting>,
    retest: Option<Vec<Sitting>>,
    blueprint: &Blueprint,
    bank: &ItemBank,
) -> Result<SimulationReport> {
    let mut exposure: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for stage in &blueprint.stages {
        let counts = exposure.entry(stage.item_type.clone()).or_default();
        for item in bank.of_type(&stage.item_type) {
            counts.entry(item.item_id.clone()).or_insert(0);
        }
    }
    let mut sessions = Vec::with_capacity(first.len());
    let mut donor_fallbacks = 0;
    let mut retest = retest.map(|v| v.into_iter());
    for (sitting, &theta) in first.into_iter().zip(reference) {
        let st = &sitting.state;
        for a in st.administered() {
            let ty = &blueprint.stages[a.stage].item_type;
            *exposure.get_mut(ty).expect("blueprint type").get_mut(&a.item_id).expect("bank item") += 1;
        }
        donor_fallbacks += sitting.fallbacks;
        let retest_scores = match retest.as_mut() {
            Some(it) => {
                let r = it.next().expect("one retest sitting per target");
                donor_fallbacks += r.fallbacks;
                Some(r.state.score()?)
            }
            None => None,
        };
        sessions.push(SimulatedSession {
            session_id: st.session_id().to_string(),
            reference_theta: theta,
            scores: st.score()?,
            items: st.administered().iter().map(|a| a.item_id.clone()).collect(),
            grades: st.administered().iter().map(|a| a.correct as u8).collect(),
            donor_fallbacks: sitting.fallbacks,
            tag_fallbacks: st.tag_fallbacks(),
            retest_scores,
        });
    }

    let mut type_metrics = BTreeMap::new();
    for (ty, counts) in &exposure {
        let scores: Vec<f64> = sessions.iter().filter_map(|s| s.scores.get(ty).copied()).collect();
        let refs: Vec<f64> = sessions
            .iter()
            .filter(|s| s.scores.contains_key(ty))
            .map(|s| s.reference_theta)
            .collect();
        let pairs: Vec<(f64, f64)> = sessions
            .iter()
            .filter_map(|s| Some((*s.scores.get(ty)?, *s.retest_scores.as_ref()?.get(ty)?)))
            .collect();
        let (max_exposure, max_exposure_item) = match metrics::max_exposure(counts) {
            Ok((f, id)) => (Some(f), Some(id)),
            Err(_) => (None, None),
        };
        let score_sd = metrics::sample_sd(&scores);
        let retest_reliability = metrics::retest_reliability(&pairs).ok();
        let sem = match (retest_reliability, score_sd) {
            (Some(rr), Some(sd)) => metrics::sem(rr, sd).ok(),
            _ => None,
        };
        type_metrics.insert(
            ty.clone(),
            TypeMetrics {
                administrations: counts.values().sum(),
                max_exposure,
                max_exposure_item,
                score_sd,
                score_correlation: metrics::score_correlation(&scores, &refs).ok(),
                rmse: metrics::rmse(&scores, &refs).ok(),
                retest_reliability,
                sem,
            },
        );
    }

    Ok(SimulationReport {
        kind,
        seed,
        sessions,
        exposure,
        metrics: type_metrics,
        donor_fallbacks,
    })
}

fn session_name(i: usize) -> String {
    format!("sim-{i:06}")
}

/// Simulates one session per true ability, grading each item by a
/// Bernoulli draw from its response function.
pub fn simulate_synthetic(
    true_thetas: &[f64],
    blueprint: &Blueprint,
    bank: &ItemBank,
    cfg: &SimulationConfig,
    seed: u64,
) -> Result<SimulationReport> {
    blueprint.validate(bank)?;
    let sit = |i: usize, theta: f64, label: &str| -> Result<Sitting> {
        let mut grades = rng::stream(seed, &format!("{label}grade"), i as u64);
        let (state, fallbacks) = run_session(
            session_name(i),
            derive_seed(seed, &format!("{label}session"), i as u64),
            blueprint,
            bank,
            &cfg.session,
            |item| Ok((grades.random::<f64>() < irf_3pl(theta, &item.params), false)),
        )?;
        Ok(Sitting { state, fallbacks })
    };
    let first: Vec<Sitting> = true_thetas
        .par_iter()
        .enumerate()
        .map(|(i, &t)| sit(i, t, ""))
        .collect::<Result<_>>()?;
    let retest = if cfg.retest {
        Some(
            true_thetas
                .par_iter()
                .enumerate()
                .map(|(i, &t)| sit(i, t, "retest-"))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    assemble(SimulationKind::Synthetic, seed, true_thetas, first, retest, blueprint, bank)
}

/// Simulates one session per target proxy ability, copying each grade from
/// the nearest historical session that saw the item.
pub fn simulate_nn(
    history: &[HistoricalSession],
    targets: &[f64],
    blueprint: &Blueprint,
    bank: &ItemBank,
    cfg: &SimulationConfig,
    seed: u64,
) -> Result<SimulationReport> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    blueprint.validate(bank)?;
    let index = DonorIndex::new(history)?;
    let sit = |i: usize, target: f64, label: &str| -> Result<Sitting> {
        let mut fallback_rng = rng::stream(seed, &format!("{label}fallback"), i as u64);
        let (state, fallbacks) = run_session(
            session_name(i),
            derive_seed(seed, &format!("{label}session"), i as u64),
            blueprint,
            bank,
            &cfg.session,
            |item| match index.nearest(&item.item_id, target) {
                Some(d) => Ok((d.correct, false)),
                None if cfg.donor_fallback => {
                    Ok((fallback_rng.random::<f64>() < irf_3pl(target, &item.params), true))
                }
                None => Err(Error::NoDonor(item.item_id.clone())),
            },
        )?;
        Ok(Sitting { state, fallbacks })
    };
    let first: Vec<Sitting> = targets
        .par_iter()
        .enumerate()
        .map(|(i, &t)| sit(i, t, ""))
        .collect::<Result<_>>()?;
    let retest = if cfg.retest {
        Some(
            targets
                .par_iter()
                .enumerate()
                .map(|(i, &t)| sit(i, t, "retest-"))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    assemble(SimulationKind::NearestNeighbor, seed, targets, first, retest, blueprint, bank)
}

/// `n` standard-normal abilities from the `"theta"` sub-stream of `seed`.
pub fn standard_normal_thetas(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, "theta", 0);
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}

/// Shape of a randomly generated 2PL bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticBankSpec {
    pub items: usize,
    pub item_type: String,
    /// Items alternate between these two tags when set.
    pub tags: Option<(String, String)>,
    pub a_range: (f64, f64),
    pub d_range: (f64, f64),
}

impl Default for SyntheticBankSpec {
    fn default() -> Self {
        Self {
            items: 200,
            item_type: "synthetic".into(),
            tags: None,
            a_range: (0.8, 1.6),
            d_range: (-3.0, 3.0),
        }
    }
}

/// A 2PL bank with uniformly drawn discrimination and difficulty.
pub fn synthetic_bank(spec: &SyntheticBankSpec, seed: u64) -> Result<Vec<Item>> {
    let (a_lo, a_hi) = spec.a_range;
    let (d_lo, d_hi) = spec.d_range;
    if !(a_lo > 0.0 && a_hi > a_lo && d_hi > d_lo) {
        return Err(Error::InvalidConfig("synthetic bank ranges must be increasing with a > 0".into()));
    }
    let mut r = rng::stream(seed, "bank", 0);
    let item_type = spec.item_type.as_str();
    let tags = spec.tags.as_ref().map(|(x, y)| (x.as_str(), y.as_str()));
    (0..spec.items)
        .map(|i| {
            let a = r.random_range(a_lo..a_hi);
            let d = r.random_range(d_lo..d_hi);
            let params = ItemParams::two_pl(a, d)?;
            Ok(Item {
                item_id: format!("{item_type}-{i:04}"),
                item_type: item_type.to_string(),
                tags: tags
                    .map(|(x, y)| if i % 2 == 0 { x } else { y })
                    .into_iter()
                    .map(str::to_string)
                    .collect(),
                params,
                kernel: precompute_kernel(&params)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneOptions {
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            lo: 1e-3,
            hi: 1e4,
            iterations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub gamma: f64,
    pub max_exposure: f64,
    /// Every evaluated `(gamma, max_exposure)` pair, sorted by gamma.
    pub curve: Vec<(f64, f64)>,
}

/// Log-space bisection for the smallest gamma whose simulated maximum
/// exposure is at or below `target`.
///
/// `floor` is a lower bound on any achievable exposure (one over the number
/// of items); targets beneath it fail without simulating.
pub fn tune_gamma<F>(target: f64, floor: f64, opts: &TuneOptions, mut exposure_at: F) -> Result<TuneResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::OutOfRange(format!("target {target} outside (0, 1]")));
    }
    if !(opts.lo > 0.0 && opts.hi > opts.lo) {
        return Err(Error::InvalidConfig(format!("invalid gamma range [{}, {}]", opts.lo, opts.hi)));
    }
    if target < floor {
        return Err(Error::TargetUnreachable {
            target,
            best: floor,
            gamma: opts.hi,
        });
    }
    let mut curve = Vec::new();
    let mut eval = |g: f64, curve: &mut Vec<(f64, f64)>| -> Result<f64> {
        let e = exposure_at(g)?;
        curve.push((g, e));
        Ok(e)
    };
    let e_lo = eval(opts.lo, &mut curve)?;
    if e_lo > target {
        let e_hi = eval(opts.hi, &mut curve)?;
        if e_hi > target {
            return Err(Error::TargetUnreachable {
                target,
                best: e_hi.min(e_lo),
                gamma: opts.hi,
            });
        }
        let (mut lo, mut hi) = (opts.lo, opts.hi);
        for _ in 0..opts.iterations {
            let mid = (lo * hi).sqrt();
            if eval(mid, &mut curve)? <= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    let &(gamma, max_exposure) = curve
        .iter()
        .find(|(_, e)| *e <= target)
        .expect("at least one tested gamma meets the target");
    Ok(TuneResult {
        gamma,
        max_exposure,
        curve,
    })
}

//! Least-squares projection of grading-model probability surfaces onto IRT
//! item parameters, plus proxy-ability construction.
//!
//! For each item the loss `sum_theta (p(theta; a, c, d) - p_hat(theta))^2` is
//! minimized over a box. The loss is separable across items, so every item is
//! fitted independently: a coarse grid search seeds several Nelder-Mead runs
//! and the best result wins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::bank::Item;
use crate::error::{Error, Result};
use crate::irt::{irf_3pl, moment_match, ItemParams, KernelParams, ThetaGrid, A_MAX, A_MIN, C_MAX};
use crate::optimize::{BoxBounds, NelderMead};

/// Item type assigned to surfaces that do not name one.
pub const DEFAULT_ITEM_TYPE: &str = "default";

/// Grading-model probabilities tabulated on a grid for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilitySurface {
    pub item_id: String,
    pub grid: ThetaGrid,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_type: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

impl ProbabilitySurface {
    pub fn new(item_id: impl Into<String>, grid: ThetaGrid, probs: Vec<f64>) -> Self {
        Self {
            item_id: item_id.into(),
            grid,
            probs,
            item_type: None,
            tags: Vec::new(),
        }
    }

    /// Surface of an exact 3PL item.
    pub fn from_params(item_id: impl Into<String>, grid: ThetaGrid, params: &ItemParams) -> Self {
        let probs = grid.points().map(|t| irf_3pl(t, params)).collect();
        Self::new(item_id, grid, probs)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidSurface {
            item_id: self.item_id.clone(),
            reason,
        };
        if self.item_id.is_empty() {
            return Err(bad("empty item_id".into()));
        }
        ThetaGrid::new(self.grid.lo(), self.grid.hi(), self.grid.len()).map_err(|e| bad(e.to_string()))?;
        if self.probs.len() != self.grid.len() {
            return Err(bad(format!(
                "{} probabilities for a {}-point grid",
                self.probs.len(),
                self.grid.len()
            )));
        }
        if let Some(p) = self.probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(bad(format!("probability {p} outside (0, 1)")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibrationModel {
    /// `c` fixed at 0.
    #[default]
    TwoPl,
    ThreePlFixedC { c: f64 },
    ThreePlFreeC,
}

/// Box constraints for the projection. `d` defaults to the surface grid range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamBounds {
    pub a: (f64, f64),
    pub c: (f64, f64),
    pub d: Option<(f64, f64)>,
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            a: (0.01, 10.0),
            c: (0.0, C_MAX),
            d: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub model: CalibrationModel,
    pub bounds: ParamBounds,
    pub multistart: usize,
    pub tolerance: f64,
    /// Optimizer iteration budget per start.
    pub max_iterations: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            model: CalibrationModel::TwoPl,
            bounds: ParamBounds::default(),
            multistart: 4,
            tolerance: 1e-15,
            max_iterations: 4000,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        let ParamBounds { a, c, d } = self.bounds;
        if !(a.0 >= A_MIN && a.1 <= A_MAX && a.0 < a.1) {
            return Err(Error::InvalidConfig(format!("a bounds {a:?} outside [{A_MIN}, {A_MAX}]")));
        }
        if !(c.0 >= 0.0 && c.1 <= C_MAX && c.0 <= c.1) {
            return Err(Error::InvalidConfig(format!("c bounds {c:?} outside [0, {C_MAX}]")));
        }
        if let Some(d) = d {
            if !(d.0.is_finite() && d.1.is_finite() && d.0 < d.1) {
                return Err(Error::InvalidConfig(format!("invalid d bounds {d:?}")));
            }
        }
        if let CalibrationModel::ThreePlFixedC { c: c0 } = self.model {
            if !(0.0..=C_MAX).contains(&c0) {
                return Err(Error::InvalidConfig(format!("fixed c {c0} outside [0, {C_MAX}]")));
            }
        }
        if self.multistart == 0 {
            return Err(Error::InvalidConfig("multistart must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub sse: f64,
    pub converged: bool,
    /// Parameters that ended on a bound (`"a"`, `"c"`, `"d"`).
    pub at_bound: Vec<String>,
    pub iterations: usize,
    /// Best objective after each optimizer iteration of the winning start.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl FitReport {
    pub fn flagged(&self) -> bool {
        !self.converged || !self.at_bound.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedItem {
    pub item_id: String,
    pub params: ItemParams,
    pub report: FitReport,
}

struct Problem<'a> {
    surface: &'a ProbabilitySurface,
    thetas: Vec<f64>,
    model: CalibrationModel,
}

impl Problem<'_> {
    fn params(&self, x: &[f64]) -> ItemParams {
        match self.model {
            CalibrationModel::TwoPl => ItemParams { a: x[0], c: 0.0, d: x[1] },
            CalibrationModel::ThreePlFixedC { c } => ItemParams { a: x[0], c, d: x[1] },
            CalibrationModel::ThreePlFreeC => ItemParams { a: x[0], c: x[1], d: x[2] },
        }
    }

    fn sse(&self, x: &[f64]) -> f64 {
        let p = self.params(x);
        self.thetas
            .iter()
            .zip(&self.surface.probs)
            .map(|(&t, &ph)| {
                let r = irf_3pl(t, &p) - ph;
                r * r
            })
            .sum()
    }
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (l, h) = (lo.ln(), hi.ln());
    (0..n).map(|i| (l + (h - l) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn linear(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Fits one item's parameters to its surface.
///
/// Returns the best candidate even when no start converged; the report
/// carries the flag.
pub fn project_item(surface: &ProbabilitySurface, cfg: &CalibrationConfig) -> Result<ProjectedItem> {
    surface.validate()?;
    cfg.validate()?;
    let grid = surface.grid;
    let (d_lo, d_hi) = cfg.bounds.d.unwrap_or((grid.lo(), grid.hi()));
    let (a_lo, a_hi) = cfg.bounds.a;
    let (c_lo, c_hi) = cfg.bounds.c;
    let problem = Problem {
        surface,
        thetas: grid.points().collect(),
        model: cfg.model,
    };
    let free_c = matches!(cfg.model, CalibrationModel::ThreePlFreeC);

    let bounds = if free_c {
        BoxBounds::new(vec![a_lo, c_lo, d_lo], vec![a_hi, c_hi, d_hi])
    } else {
        BoxBounds::new(vec![a_lo, d_lo], vec![a_hi, d_hi])
    };

    // coarse grid search for starting points
    let a_vals = geometric(a_lo.max(0.05), a_hi.min(6.0).max(a_lo.max(0.05) * 1.5), 9);
    let d_vals = linear(d_lo, d_hi, 17);
    let c_vals = if free_c { linear(c_lo, c_hi, 5) } else { vec![0.0] };
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::new();
    for &a in &a_vals {
        for &c in &c_vals {
            for &d in &d_vals {
                let mut x = if free_c { vec![a, c, d] } else { vec![a, d] };
                bounds.project(&mut x);
                candidates.push((problem.sse(&x), x));
            }
        }
    }
    candidates.sort_by(|p, q| p.0.total_cmp(&q.0));

    let step: Vec<f64> = if free_c {
        vec![0.25, 0.05, 0.25]
    } else {
        vec![0.25, 0.25]
    };
    let nm = NelderMead {
        ftol: cfg.tolerance,
        max_iter: cfg.max_iterations,
        ..Default::default()
    };
    let best = candidates
        .iter()
        .take(cfg.multistart)
        .map(|(_, x0)| nm.minimize(|x| problem.sse(x), x0, &step, &bounds))
        .min_by(|p, q| p.fx.total_cmp(&q.fx))
        .expect("multistart >= 1");

    let params = problem.params(&best.x);
    let rel = |v: f64, lo: f64, hi: f64| (v - lo).abs() <= 1e-6 * (hi - lo) || (hi - v).abs() <= 1e-6 * (hi - lo);
    let mut at_bound = Vec::new();
    if rel(params.a, a_lo, a_hi) {
        at_bound.push("a".to_string());
    }
    if free_c && c_hi > c_lo && params.c > c_lo + 1e-6 * (c_hi - c_lo) && rel(params.c, c_lo, c_hi) {
        // c resting on its lower bound is the ordinary 2PL case, not a flag
        at_bound.push("c".to_string());
    }
    if rel(params.d, d_lo, d_hi) {
        at_bound.push("d".to_string());
    }

    Ok(ProjectedItem {
        item_id: surface.item_id.clone(),
        params,
        report: FitReport {
            sse: best.fx,
            converged: best.converged,
            at_bound,
            iterations: best.iterations,
            trace: best.trace,
        },
    })
}

/// Kernel approximation for a calibrated item, moment-matched on a grid
/// wide enough to hold essentially all of its information mass.
pub fn precompute_kernel(params: &ItemParams) -> Result<KernelParams> {
    let span = 40.0 / params.a;
    let grid = ThetaGrid::new(params.d - span, params.d + span, 4001)?;
    moment_match(params, &grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub items: usize,
    pub converged: usize,
    pub flagged: Vec<String>,
    pub median_sse: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CalibratedBank {
    pub items: Vec<Item>,
    pub reports: Vec<ProjectedItem>,
    pub summary: CalibrationSummary,
}

/// Projects every surface and precomputes its information kernel.
pub fn project_bank(surfaces: &[ProbabilitySurface], cfg: &CalibrationConfig) -> Result<CalibratedBank> {
    cfg.validate()?;
    let mut seen = HashSet::with_capacity(surfaces.len());
    for s in surfaces {
        if !seen.insert(s.item_id.as_str()) {
            return Err(Error::DuplicateItem(s.item_id.clone()));
        }
        s.validate()?;
    }
    let mut warnings = Vec::new();
    if surfaces.is_empty() {
        warnings.push("no surfaces supplied; bank is empty".to_string());
    }

    let fitted: Vec<(ProjectedItem, KernelParams, bool)> = surfaces
        .par_iter()
        .map(|s| {
            let fit = project_item(s, cfg)?;
            let (kernel, degenerate) = match precompute_kernel(&fit.params) {
                Ok(k) => (k, false),
                Err(Error::DegenerateInformation { .. }) => (
                    KernelParams {
                        h: f64::MIN_POSITIVE,
                        mu: fit.params.d,
                        nu: 1.0,
                    },
                    true,
                ),
                Err(e) => return Err(e),
            };
            Ok((fit, kernel, degenerate))
        })
        .collect::<Result<_>>()?;

    let mut items = Vec::with_capacity(fitted.len());
    let mut reports = Vec::with_capacity(fitted.len());
    let mut flagged = Vec::new();
    for (s, (fit, kernel, degenerate)) in surfaces.iter().zip(fitted) {
        if degenerate {
            warnings.push(format!("item {}: degenerate information kernel", s.item_id));
        }
        if fit.report.flagged() || degenerate {
            flagged.push(s.item_id.clone());
        }
        items.push(Item {
            item_id: s.item_id.clone(),
            item_type: s.item_type.clone().unwrap_or_else(|| DEFAULT_ITEM_TYPE.to_string()),
            tags: s.tags.iter().cloned().collect::<BTreeSet<_>>(),
            params: fit.params,
            kernel,
        });
        reports.push(fit);
    }

    let mut sses: Vec<f64> = reports.iter().map(|r| r.report.sse).collect();
    sses.sort_by(f64::total_cmp);
    let median_sse = match sses.len() {
        0 => None,
        n if n % 2 == 1 => Some(sses[n / 2]),
        n => Some(0.5 * (sses[n / 2 - 1] + sses[n / 2])),
    };
    let summary = CalibrationSummary {
        items: items.len(),
        converged: reports.iter().filter(|r| r.report.converged).count(),
        flagged,
        median_sse,
        warnings,
    };
    Ok(CalibratedBank {
        items,
        reports,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreNormalization {
    #[default]
    None,
    /// Per-type `(mean, sd)` population statistics.
    Zscore { stats: BTreeMap<String, (f64, f64)> },
}

/// Weights over other item types' scores; weights are rescaled to sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyAbilitySpec {
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub normalization: ScoreNormalization,
}

pub fn proxy_theta(scores: &BTreeMap<String, f64>, spec: &ProxyAbilitySpec) -> Result<f64> {
    let total: f64 = spec.weights.values().sum();
    if !(total > 0.0 && total.is_finite()) || spec.weights.values().any(|w| *w < 0.0) {
        return Err(Error::InvalidConfig("proxy weights must be >= 0 with a positive sum".into()));
    }
    let mut acc = 0.0;
    for (ty, w) in &spec.weights {
        let s = *scores.get(ty).ok_or_else(|| Error::MissingScore(ty.clone()))?;
        let s = match &spec.normalization {
            ScoreNormalization::None => s,
            ScoreNormalization::Zscore { stats } => {
                let (mean, sd) = stats
                    .get(ty)
                    .ok_or_else(|| Error::InvalidConfig(format!("no population stats for {ty}")))?;
                if !(*sd > 0.0) {
                    return Err(Error::InvalidConfig(format!("population sd for {ty} must be > 0")));
                }
                (s - mean) / sd
            }
        };
        acc += w / total * s;
    }
    Ok(acc)
}

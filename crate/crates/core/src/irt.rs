//! Item response functions, Fisher information and the Gaussian-kernel
//! approximation used for 3PL exposure control.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Lower clamp applied to discrimination at ingestion.
pub const A_MIN: f64 = 1e-6;
/// Upper clamp applied to discrimination at ingestion.
pub const A_MAX: f64 = 50.0;
/// Upper clamp applied to the chance parameter at ingestion.
pub const C_MAX: f64 = 0.5;

/// Information mass below which moment matching gives up.
pub const DEGENERATE_MASS: f64 = 1e-12;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// 3PL item parameters: discrimination `a`, chance `c`, difficulty `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemParams {
    pub a: f64,
    pub c: f64,
    pub d: f64,
}

impl ItemParams {
    pub fn new(a: f64, c: f64, d: f64) -> Result<Self> {
        let p = Self { a, c, d };
        p.validate()?;
        Ok(p)
    }

    pub fn two_pl(a: f64, d: f64) -> Result<Self> {
        Self::new(a, 0.0, d)
    }

    /// Builds parameters from untrusted values, clamping `a` to
    /// `[A_MIN, A_MAX]`, `c` to `[0, C_MAX]` and `d` to the grid range.
    pub fn clamped(a: f64, c: f64, d: f64, grid: &ThetaGrid) -> Result<Self> {
        if !(a.is_finite() && c.is_finite() && d.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "non-finite parameters a={a} c={c} d={d}"
            )));
        }
        Ok(Self {
            a: a.clamp(A_MIN, A_MAX),
            c: c.clamp(0.0, C_MAX),
            d: d.clamp(grid.lo(), grid.hi()),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::InvalidParams(format!("a must be > 0, got {}", self.a)));
        }
        if !(self.c.is_finite() && (0.0..1.0).contains(&self.c)) {
            return Err(Error::InvalidParams(format!("c must be in [0, 1), got {}", self.c)));
        }
        if !self.d.is_finite() {
            return Err(Error::InvalidParams(format!("d must be finite, got {}", self.d)));
        }
        Ok(())
    }
}

/// A regular grid of ability values, stored by its endpoints and point count.
///
/// Points are computed as `lo * (1 - t) + hi * t` with `t = j / (n - 1)`, so a
/// grid symmetric about zero has its midpoint exactly at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Default for ThetaGrid {
    /// `[-4, 4]` with 161 points (step 0.05).
    fn default() -> Self {
        Self {
            lo: -4.0,
            hi: 4.0,
            n: 161,
        }
    }
}

impl ThetaGrid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidGrid("endpoints must be finite".into()));
        }
        if hi <= lo {
            return Err(Error::InvalidGrid(format!("hi ({hi}) must exceed lo ({lo})")));
        }
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 points, got {n}")));
        }
        Ok(Self { lo, hi, n })
    }

    /// Grid with a given step, `hi` rounded to the nearest whole step.
    pub fn with_step(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidGrid(format!("step must be > 0, got {step}")));
        }
        let intervals = ((hi - lo) / step).round() as usize;
        Self::new(lo, lo + intervals as f64 * step, intervals + 1)
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    #[inline]
    pub fn point(&self, j: usize) -> f64 {
        let t = j as f64 / (self.n - 1) as f64;
        self.lo * (1.0 - t) + self.hi * t
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.n).map(move |j| self.point(j))
    }

    /// Trapezoid rule for values tabulated on this grid.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n);
        let interior: f64 = values.iter().sum::<f64>() - 0.5 * (values[0] + values[self.n - 1]);
        interior * self.step()
    }
}

/// Gaussian-kernel information parameters: height, center and bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub h: f64,
    pub mu: f64,
    pub nu: f64,
}

impl KernelParams {
    pub fn new(h: f64, mu: f64, nu: f64) -> Result<Self> {
        let k = Self { h, mu, nu };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::InvalidParams(format!("kernel h must be > 0, got {}", self.h)));
        }
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(Error::InvalidParams(format!("kernel nu must be > 0, got {}", self.nu)));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidParams(format!("kernel mu must be finite, got {}", self.mu)));
        }
        Ok(())
    }
}

/// 3PL item response function `c + (1 - c) * sigmoid(a (theta - d))`.
#[inline]
pub fn irf_3pl(theta: f64, params: &ItemParams) -> f64 {
    params.c + (1.0 - params.c) * sigmoid(params.a * (theta - params.d))
}

/// 3PL Fisher information.
///
/// Evaluated in the algebraically equivalent form `a^2 (1-c) p2^2 q2 / p`,
/// with `q2 = sigmoid(-z)` so the tails do not cancel. Reduces to
/// `a^2 p2 q2` when `c = 0`.
#[inline]
pub fn fisher_info(theta: f64, params: &ItemParams) -> f64 {
    let z = params.a * (theta - params.d);
    let p2 = sigmoid(z);
    let q2 = sigmoid(-z);
    let a2 = params.a * params.a;
    if params.c == 0.0 {
        return a2 * p2 * q2;
    }
    let p = params.c + (1.0 - params.c) * p2;
    a2 * (1.0 - params.c) * p2 * p2 * q2 / p
}

/// Gaussian kernel `h * exp(-(theta - mu)^2 / (2 nu^2))`.
#[inline]
pub fn kernel_info(theta: f64, kp: &KernelParams) -> f64 {
    let z = (theta - kp.mu) / kp.nu;
    kp.h * (-0.5 * z * z).exp()
}

/// Matches the zeroth, first and second moments of the Fisher information
/// curve (as an unnormalized density on `grid`) with a Gaussian kernel.
///
/// The height is chosen so the kernel carries the same total information mass.
pub fn moment_match(params: &ItemParams, grid: &ThetaGrid) -> Result<KernelParams> {
    let info: Vec<f64> = grid.points().map(|t| fisher_info(t, params)).collect();
    let mass = grid.trapezoid(&info);
    if !(mass >= DEGENERATE_MASS) {
        return Err(Error::DegenerateInformation { mass });
    }
    let weighted: Vec<f64> = grid.points().zip(&info).map(|(t, f)| t * f).collect();
    let mu = grid.trapezoid(&weighted) / mass;
    let centered: Vec<f64> = grid
        .points()
        .zip(&info)
        .map(|(t, f)| (t - mu) * (t - mu) * f)
        .collect();
    let var = grid.trapezoid(&centered) / mass;
    let nu = var.sqrt();
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::DegenerateInformation { mass });
    }
    let h = mass / (nu * (2.0 * PI).sqrt());
    KernelParams::new(h, mu, nu)
}

/// Total Fisher information of a set of administered items (local independence).
pub fn session_total_info(theta: f64, administered: &[ItemParams]) -> f64 {
    administered.iter().map(|p| fisher_info(theta, p)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent logistic route for oracles.
    fn logistic_tanh(x: f64) -> f64 {
        0.5 * (1.0 + (0.5 * x).tanh())
    }

    // information written literally from p2, without the stabilized rewrite
    fn fisher_literal(theta: f64, p: &ItemParams) -> f64 {
        let p2 = logistic_tanh(p.a * (theta - p.d));
        let num = p.a * (1.0 - p.c) * p2 * (1.0 - p2);
        let prob = p.c + (1.0 - p.c) * p2;
        num * num / (prob * (1.0 - prob))
    }

    #[test]
    fn irf_examples() {
        let p = ItemParams::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(irf_3pl(0.0, &p), 0.5);
        let p = ItemParams::new(1.0, 0.25, 0.0).unwrap();
        assert!((irf_3pl(0.0, &p) - 0.625).abs() < 1e-15);
        let p = ItemParams::new(2.0, 0.0, 0.0).unwrap();
        let oracle = logistic_tanh(2.0);
        assert!((oracle - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert!((irf_3pl(1.0, &p) - oracle).abs() < 1e-14);
    }

    #[test]
    fn fisher_examples() {
        let p = ItemParams::new(2.0, 0.0, 1.3).unwrap();
        assert!((fisher_info(1.3, &p) - 1.0).abs() < 1e-15);

        // (0.75 * 0.25)^2 / (0.625 * 0.375) = 0.15
        let p = ItemParams::new(1.0, 0.25, 0.0).unwrap();
        let oracle = (0.75f64 * 0.25).powi(2) / (0.625 * 0.375);
        assert!((oracle - 0.15).abs() < 1e-15);
        assert!((fisher_info(0.0, &p) - 0.15).abs() < 1e-14);
        assert!((fisher_literal(0.0, &p) - 0.15).abs() < 1e-14);

        let p = ItemParams::new(1.0, 0.0, 0.4).unwrap();
        assert!(fisher_info(50.4, &p) < 1e-20);
        assert!(fisher_info(-49.6, &p) < 1e-20);
    }

    #[test]
    fn fisher_matches_literal_form() {
        for &(a, c, d) in &[(0.5, 0.0, -1.0), (1.7, 0.2, 0.3), (3.0, 0.45, 2.0)] {
            let p = ItemParams::new(a, c, d).unwrap();
            for j in 0..81 {
                let t = -4.0 + 0.1 * j as f64;
                let lit = fisher_literal(t, &p);
                assert!((fisher_info(t, &p) - lit).abs() <= 1e-12 * lit.max(1e-3));
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ItemParams::new(0.0, 0.0, 0.0).is_err());
        assert!(ItemParams::new(1.0, 1.0, 0.0).is_err());
        assert!(ItemParams::new(1.0, -0.1, 0.0).is_err());
        assert!(ItemParams::new(1.0, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn clamps_at_ingestion() {
        let g = ThetaGrid::default();
        let p = ItemParams::clamped(0.0, 0.9, 10.0, &g).unwrap();
        assert_eq!(p, ItemParams { a: A_MIN, c: C_MAX, d: 4.0 });
        let p = ItemParams::clamped(100.0, -1.0, -10.0, &g).unwrap();
        assert_eq!(p, ItemParams { a: A_MAX, c: 0.0, d: -4.0 });
        assert!(ItemParams::clamped(f64::INFINITY, 0.0, 0.0, &g).is_err());
    }

    #[test]
    fn default_grid_shape() {
        let g = ThetaGrid::default();
        assert_eq!(g.len(), 161);
        assert!((g.step() - 0.05).abs() < 1e-15);
        assert_eq!(g.point(80), 0.0);
        assert_eq!(g.point(0), -4.0);
        assert_eq!(g.point(160), 4.0);
        let pts: Vec<f64> = g.points().collect();
        for w in pts.windows(2) {
            assert!(((w[1] - w[0]) - g.step()).abs() <= 1e-12 * g.step());
        }
        assert!(ThetaGrid::new(0.0, 1.0, 2).is_err());
        assert!(ThetaGrid::new(1.0, 0.0, 5).is_err());
    }

    #[test]
    fn kernel_examples() {
        let k = KernelParams::new(0.3, 0.2, 0.7).unwrap();
        assert_eq!(kernel_info(0.2, &k), 0.3);
        let k = KernelParams::new(1.0, 0.2, 0.7).unwrap();
        assert!((kernel_info(0.9, &k) - (-0.5f64).exp()).abs() < 1e-12);
        assert!((kernel_info(0.9, &k) - 0.60653).abs() < 1e-5);
        assert!(kernel_info(0.2 + 10.0 * 0.7, &k) < 2e-22);
        assert!(KernelParams::new(0.0, 0.0, 1.0).is_err());
        assert!(KernelParams::new(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn moment_match_symmetric_center() {
        let g = ThetaGrid::new(-40.0, 40.0, 8001).unwrap();
        let p = ItemParams::new(1.0, 0.0, 0.7).unwrap();
        let k = moment_match(&p, &g).unwrap();
        assert!((k.mu - 0.7).abs() < 1e-9, "mu = {}", k.mu);
    }

    #[test]
    fn moment_match_logistic_moments() {
        // Oracle: analytic logistic-information moments (mass = a,
        // variance = pi^2 / (3 a^2)), cross-checked with a fine Simpson rule.
        let fine = |f: &dyn Fn(f64) -> f64| {
            let (lo, hi, n) = (-8.0f64, 8.0f64, 160_000usize);
            let h = (hi - lo) / n as f64;
            let mut s = f(lo) + f(hi);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * f(lo + i as f64 * h);
            }
            s * h / 3.0
        };
        let info = |t: f64| {
            let p = logistic_tanh(t);
            p * (1.0 - p)
        };
        let mass_oracle = fine(&info);
        let var_oracle = fine(&|t| t * t * info(t)) / mass_oracle;
        assert!((mass_oracle - 1.0).abs() < 0.01);
        assert!((var_oracle.sqrt() - PI / 3f64.sqrt()).abs() / (PI / 3f64.sqrt()) < 0.01);

        let g = ThetaGrid::with_step(-8.0, 8.0, 0.01).unwrap();
        let k = moment_match(&ItemParams::new(1.0, 0.0, 0.0).unwrap(), &g).unwrap();
        let mass = k.h * k.nu * (2.0 * PI).sqrt();
        assert!((mass - 1.0).abs() < 0.01);
        assert!((mass - mass_oracle).abs() < 1e-6);
        assert!((k.nu - var_oracle.sqrt()).abs() < 1e-5);
        assert!((k.nu - 1.8138).abs() / 1.8138 < 0.01);
        assert!((k.h - 0.2199).abs() / 0.2199 < 0.01);
    }

    #[test]
    fn moment_match_degenerate() {
        let g = ThetaGrid::with_step(-8.0, 8.0, 0.01).unwrap();
        let p = ItemParams::new(1e-9, 0.0, 0.0).unwrap();
        assert!(matches!(
            moment_match(&p, &g),
            Err(Error::DegenerateInformation { .. })
        ));
    }

    #[test]
    fn session_total() {
        assert_eq!(session_total_info(0.0, &[]), 0.0);
        let p = ItemParams::new(2.0, 0.0, 0.3).unwrap();
        assert!((session_total_info(0.3, &[p, p]) - 2.0).abs() < 1e-15);
    }
}

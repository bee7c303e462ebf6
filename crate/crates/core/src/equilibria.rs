//! Biomass thresholds, the equilibria e0 / E1 / E2 and equilibrium sweeps
//! over total biomass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, R_INFINITY};
use crate::roots::bisect_newton;

/// Relative distance to a threshold below which a sweep point is reported as
/// degenerate instead of being assigned to either side.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquilibriumKind {
    /// `(N_T, 0, 0)`: an attracting limit point, not an equilibrium of the
    /// delay equations (they are undefined at `P = 0`).
    LimitE0,
    /// Phytoplankton only.
    E1,
    /// Coexistence.
    E2,
}

impl EquilibriumKind {
    pub fn label(&self) -> &'static str {
        match self {
            EquilibriumKind::LimitE0 => "e0",
            EquilibriumKind::E1 => "E1",
            EquilibriumKind::E2 => "E2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumPoint {
    pub kind: EquilibriumKind,
    pub n_star: f64,
    pub p_star: f64,
    pub z_star: f64,
    /// Max absolute residual of the conservation-closed equilibrium equations.
    pub residual: f64,
    /// All components nonnegative.
    pub exists: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub nt1: f64,
    /// `None` when `m` is at or above the maturity ceiling.
    pub nt2: Option<f64>,
    pub m_ceiling: f64,
}

/// Minimum total biomass sustaining phytoplankton, `f⁻¹(λ/μ)`.
pub fn compute_nt1(params: &ModelParams) -> f64 {
    let r = params.lambda / params.mu;
    params.k * r / (1.0 - r)
}

/// Largest maturity requirement admitting a coexistence equilibrium,
/// `R∞ ln(γg/δ)/δ0`; infinite without juvenile mortality.
pub fn m_ceiling(params: &ModelParams) -> f64 {
    if params.delta0 == 0.0 {
        f64::INFINITY
    } else {
        R_INFINITY * (params.gamma * params.g / params.delta).ln() / params.delta0
    }
}

/// Phytoplankton at the coexistence equilibrium, the unique root above
/// `h⁻¹(δ/(γg))` of `m = R(P)/δ0 · ln(γg h(P)/δ)`.
pub fn solve_p2star(params: &ModelParams) -> Result<f64> {
    let ceiling = m_ceiling(params);
    if params.m >= ceiling {
        return Err(Error::NoCoexistence {
            m: params.m,
            ceiling,
        });
    }
    let y = params.delta / (params.gamma * params.g);
    let p_min = params.kk * y / (1.0 - y);
    if params.delta0 == 0.0 || params.m == 0.0 {
        return Ok(p_min);
    }

    let d0 = params.delta0;
    let gg = params.gamma * params.g;
    let m = params.m;
    let resid = |p: f64| params.r(p) * (gg * params.h(p) / params.delta).ln() / d0 - m;
    let dresid = |p: f64| {
        (params.dr(p) * (gg * params.h(p) / params.delta).ln()
            + params.r(p) * params.dh(p) / params.h(p))
            / d0
    };

    let lo = p_min * (1.0 + 1e-12);
    let mut hi = 2.0 * p_min.max(1.0);
    while resid(hi) < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NoCoexistence { m, ceiling });
        }
    }
    if resid(lo) >= 0.0 {
        return Ok(lo);
    }
    Ok(bisect_newton(resid, dresid, lo, hi, 1e-14, 5))
}

/// Minimum total biomass sustaining zooplankton, `N_T1 + P₂*`.
pub fn compute_nt2(params: &ModelParams) -> Result<f64> {
    Ok(compute_nt1(params) + solve_p2star(params)?)
}

pub fn thresholds(params: &ModelParams) -> ThresholdReport {
    ThresholdReport {
        nt1: compute_nt1(params),
        nt2: compute_nt2(params).ok(),
        m_ceiling: m_ceiling(params),
    }
}

/// Residuals of the equilibrium equations with the conservation law in
/// place of the nutrient equation:
///
/// ```text
/// N + P + Z + γg Z h(P) (1 - e^{-δ0 m/R(P)})/δ0 - N_T
/// μ P f(N) - λ P - g Z h(P)
/// γg e^{-δ0 m/R(P)} Z h(P) - δ Z
/// ```
pub fn equilibrium_residuals(
    n: f64,
    p: f64,
    z: f64,
    m: f64,
    n_total: f64,
    params: &ModelParams,
) -> [f64; 3] {
    let hp = params.h(p);
    let delay = m / params.r(p);
    let gg = params.gamma * params.g;
    [
        n + p + z + gg * z * hp * params.survival_integral(delay) - n_total,
        params.mu * p * params.f(n) - params.lambda * p - params.g * z * hp,
        gg * (-params.delta0 * delay).exp() * z * hp - params.delta * z,
    ]
}

fn max_abs(r: [f64; 3]) -> f64 {
    r.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

pub fn limit_point(params: &ModelParams) -> EquilibriumPoint {
    EquilibriumPoint {
        kind: EquilibriumKind::LimitE0,
        n_star: params.n_total,
        p_star: 0.0,
        z_star: 0.0,
        residual: 0.0,
        exists: true,
    }
}

/// Phytoplankton-only equilibrium `(N_T1, N_T - N_T1, 0)`.
pub fn solve_e1(params: &ModelParams) -> Result<EquilibriumPoint> {
    let nt1 = compute_nt1(params);
    if params.n_total <= nt1 {
        return Err(Error::NotExist {
            n_total: params.n_total,
            threshold: nt1,
        });
    }
    let p = params.n_total - nt1;
    Ok(EquilibriumPoint {
        kind: EquilibriumKind::E1,
        n_star: nt1,
        p_star: p,
        z_star: 0.0,
        residual: max_abs(equilibrium_residuals(nt1, p, 0.0, params.m, params.n_total, params)),
        exists: true,
    })
}

/// Coexistence equilibrium for the given `m` and `N_T`.
pub fn solve_e2(params: &ModelParams) -> Result<EquilibriumPoint> {
    let p = solve_p2star(params)?;
    let nt1 = compute_nt1(params);
    let nt2 = nt1 + p;
    let n_total = params.n_total;
    if n_total <= nt2 {
        return Err(Error::NotExist {
            n_total,
            threshold: nt2,
        });
    }
    let hp = params.h(p);
    let gg = params.gamma * params.g;
    let stage = 1.0 + gg * hp * params.survival_integral(params.m / params.r(p));
    let zfac = p / (params.g * hp);
    let g_n = |n: f64| n + p + (params.mu * params.f(n) - params.lambda) * zfac * stage - n_total;
    let dg_n = |n: f64| 1.0 + params.mu * params.df(n) * zfac * stage;
    let n = bisect_newton(g_n, dg_n, nt1, n_total, 1e-15, 5);
    let z = (params.mu * params.f(n) - params.lambda) * zfac;
    let residual = max_abs(equilibrium_residuals(n, p, z, params.m, n_total, params));
    Ok(EquilibriumPoint {
        kind: EquilibriumKind::E2,
        n_star: n,
        p_star: p,
        z_star: z,
        residual,
        exists: n >= 0.0 && p >= 0.0 && z >= 0.0,
    })
}

/// Where a total biomass falls relative to the thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Extinct,
    PhytoplanktonOnly,
    Coexistence,
    /// Within [`DEGENERATE_TOL`] of `N_T1`.
    DegenerateNt1,
    /// Within [`DEGENERATE_TOL`] of `N_T2`.
    DegenerateNt2,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::Extinct => "e0",
            Regime::PhytoplanktonOnly => "E1",
            Regime::Coexistence => "E2",
            Regime::DegenerateNt1 => "degenerate_nt1",
            Regime::DegenerateNt2 => "degenerate_nt2",
        }
    }
}

pub fn classify(params: &ModelParams) -> Regime {
    let nt = params.n_total;
    let nt1 = compute_nt1(params);
    if (nt - nt1).abs() <= DEGENERATE_TOL * nt {
        return Regime::DegenerateNt1;
    }
    if nt < nt1 {
        return Regime::Extinct;
    }
    match compute_nt2(params) {
        Ok(nt2) if (nt - nt2).abs() <= DEGENERATE_TOL * nt => Regime::DegenerateNt2,
        Ok(nt2) if nt > nt2 => Regime::Coexistence,
        _ => Regime::PhytoplanktonOnly,
    }
}

/// The equilibrium plotted against total biomass: E2 when it exists, else
/// E1, else the limit point. Degenerate points take the lower-biomass side.
pub fn dominant_equilibrium(params: &ModelParams) -> Result<EquilibriumPoint> {
    match classify(params) {
        Regime::Extinct | Regime::DegenerateNt1 => Ok(limit_point(params)),
        Regime::PhytoplanktonOnly | Regime::DegenerateNt2 => solve_e1(params),
        Regime::Coexistence => solve_e2(params),
    }
}

/// Default reference growth rate R* of the time transform: an explicit
/// override, else `R` at the coexistence equilibrium, else at E1, else at `N_T`.
pub fn reference_rate(params: &ModelParams) -> f64 {
    if let Some(r) = params.r_star {
        return r;
    }
    if let Ok(e2) = solve_e2(params) {
        return params.r(e2.p_star);
    }
    if let Ok(e1) = solve_e1(params) {
        return params.r(e1.p_star);
    }
    params.r(params.n_total)
}

/// Equilibrium juvenile density at maturity `s`:
/// `γg Z* h(P*)/R(P*) · e^{-δ0 s/R(P*)}`.
pub fn equilibrium_spectrum(eq: &EquilibriumPoint, s: f64, params: &ModelParams) -> Result<f64> {
    if !(s >= 0.0 && s <= params.m) {
        return Err(Error::Domain {
            what: "s",
            value: s,
            domain: "[0, m]",
        });
    }
    match eq.kind {
        EquilibriumKind::LimitE0 => Err(Error::LimitPoint),
        EquilibriumKind::E1 => Ok(0.0),
        EquilibriumKind::E2 => {
            let r = params.r(eq.p_star);
            Ok(params.gamma * params.g * eq.z_star * params.h(eq.p_star) / r
                * (-params.delta0 * s / r).exp())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_total: f64,
    pub regime: Regime,
    pub point: EquilibriumPoint,
}

/// Dominant equilibrium at each total biomass of an increasing grid.
pub fn classify_and_sweep(params: &ModelParams, nt_grid: &[f64]) -> Result<Vec<SweepRow>> {
    if nt_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParams("N_T grid must be strictly increasing".into()));
    }
    nt_grid
        .iter()
        .map(|&nt| {
            let p = params.clone().with_n_total(nt);
            Ok(SweepRow {
                n_total: nt,
                regime: classify(&p),
                point: dominant_equilibrium(&p)?,
            })
        })
        .collect()
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..count)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
                .collect()
        }
    }
}

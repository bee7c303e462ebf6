//! Linearization about an equilibrium and the transcendental characteristic
//! function
//!
//! ```text
//! Δ(s) = det(sI − A1 − A2 e^{−sT} − A3 (1 − e^{−sT})/s)
//! ```
//!
//! of `y' = A1 y(t) + A2 y(t − T) + A3 ∫_{−T}^0 y(t + u) du`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::equilibria::{EquilibriumKind, EquilibriumPoint};
use crate::error::{Error, Result};
use crate::model::{ModelParams, R_FLOOR};
use crate::roots::bisect_newton;

pub type Mat3 = [[f64; 3]; 3];

/// Below this `|s|·T` the distributed-delay kernel is evaluated by its series.
pub const KERNEL_SERIES_SWITCH: f64 = 1e-4;
/// Newton iteration cap in [`refine_root`].
pub const MAX_NEWTON_ITER: usize = 50;
/// Roots are only searched inside this radius (1/day).
pub const ROOT_SEARCH_RADIUS: f64 = 1e6;
/// Default number of imaginary-axis seeds for [`rightmost_real_part`].
pub const DEFAULT_GRID_N: usize = 512;
/// Roots this close to the origin are the neutral conservation mode when δ0 = 0.
pub const NEUTRAL_ROOT_TOL: f64 = 1e-7;

/// Response values at the equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// `f'(N*)`
    pub a: f64,
    /// `h'(P*)`
    pub b: f64,
    /// `f(N*)`
    pub c: f64,
    /// `h(P*)`
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationData {
    pub a1: Mat3,
    pub a2: Mat3,
    pub a3: Mat3,
    /// `T = m / R(P*)` in days.
    pub t_delay: f64,
    pub coeffs: Coefficients,
    /// Reference rate, always `R(P*)`.
    pub r_star: f64,
    /// `max(μ, g, δ)`, used for default search windows.
    pub rate_scale: f64,
    /// `δ0 = 0`: the system has a neutral mode at `s = 0`.
    pub neutral_zero_mode: bool,
}

/// Linearization about an E1 or E2 equilibrium of the model with `params.m`.
pub fn build_linearization(eq: &EquilibriumPoint, params: &ModelParams) -> Result<LinearizationData> {
    if eq.kind == EquilibriumKind::LimitE0 {
        return Err(Error::LimitPoint);
    }
    linearize_at(eq.n_star, eq.p_star, eq.z_star, params)
}

/// Linearization at an arbitrary state `(N*, P*, Z*)` treated as an
/// equilibrium (used along continuation, where the equilibrium equations are
/// only solved to tolerance).
pub fn linearize_at(n: f64, p: f64, z: f64, params: &ModelParams) -> Result<LinearizationData> {
    let r = params.r(p);
    if !(p > 0.0 && r > R_FLOOR) {
        return Err(Error::SingularRate { p, rate: r });
    }
    let (mu, lambda, g, gamma, delta, d0) = (
        params.mu,
        params.lambda,
        params.g,
        params.gamma,
        params.delta,
        params.delta0,
    );
    let a = params.df(n);
    let b = params.dh(p);
    let c = params.f(n);
    let d = params.h(p);
    let t = params.m / r;
    let surv = (-d0 * t).exp();
    let q = params.dr(p) / r;
    let gg = gamma * g;

    let a1 = [
        [
            -mu * p * a - d0,
            -mu * c + lambda + (1.0 - gamma) * g * z * b - d0,
            delta - d0 + (1.0 - gamma) * g * d,
        ],
        [mu * p * a, mu * c - lambda - g * z * b, -g * d],
        [0.0, surv * gg * z * d * q, -delta],
    ];
    let a2 = [
        [0.0; 3],
        [0.0; 3],
        [0.0, surv * gg * z * (b - q * d), surv * gg * d],
    ];
    let a3 = [[0.0; 3], [0.0; 3], [0.0, d0 * surv * gg * z * d * q, 0.0]];

    Ok(LinearizationData {
        a1,
        a2,
        a3,
        t_delay: t,
        coeffs: Coefficients { a, b, c, d },
        r_star: r,
        rate_scale: mu.max(g).max(delta),
        neutral_zero_mode: d0 == 0.0,
    })
}

impl LinearizationData {
    /// Copy with the delayed-coupling matrix negated. Only useful for
    /// checking that the test suite detects a corrupted linearization.
    pub fn with_a2_negated(&self) -> Self {
        let mut out = self.clone();
        for row in out.a2.iter_mut() {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
        out
    }

    /// Same matrices with a different delay; `T → T + 2π/ω` leaves `Δ(iω)`
    /// unchanged when `A3 = 0`.
    pub fn with_delay(&self, t_delay: f64) -> Self {
        let mut out = self.clone();
        out.t_delay = t_delay;
        out
    }

    fn norm_scale(&self) -> f64 {
        let row_sum = |m: &Mat3| {
            m.iter()
                .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        1.0 + row_sum(&self.a1) + row_sum(&self.a2) + self.t_delay * row_sum(&self.a3)
    }
}

/// `(1 − e^{−sT})/s`, with its series near the removable singularity.
pub fn delay_kernel(s: Complex64, t: f64) -> Complex64 {
    let x = s * t;
    if x.norm() < KERNEL_SERIES_SWITCH {
        // T (1 − x/2 + x²/6 − x³/24)
        t * (1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0)
    } else {
        (1.0 - (-x).exp()) / s
    }
}

fn det3(m: &[[Complex64; 3]; 3]) -> Complex64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Characteristic function `Δ(s)`.
pub fn char_fn(s: Complex64, lin: &LinearizationData) -> Complex64 {
    let e = (-s * lin.t_delay).exp();
    let kern = delay_kernel(s, lin.t_delay);
    let mut m = [[Complex64::new(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut v = -lin.a1[i][j] - lin.a2[i][j] * e - lin.a3[i][j] * kern;
            if i == j {
                v += s;
            }
            m[i][j] = v;
        }
    }
    det3(&m)
}

/// Magnitude of the terms entering `Δ(s)`, for relative tolerances.
pub fn char_scale(s: Complex64, lin: &LinearizationData) -> f64 {
    (s.norm() + lin.norm_scale()).powi(3)
}

/// Newton refinement of a root of `Δ`, also returning the iteration count.
pub fn refine_root_counted(s0: Complex64, lin: &LinearizationData) -> Result<(Complex64, usize)> {
    let mut s = s0;
    let mut f = char_fn(s, lin);
    for it in 1..=MAX_NEWTON_ITER {
        if !(f.re.is_finite() && f.im.is_finite()) || s.norm() > ROOT_SEARCH_RADIUS {
            break;
        }
        let h = 1e-7 * s.norm().max(1.0);
        let df = (char_fn(s + h, lin) - char_fn(s - h, lin)) / (2.0 * h);
        if df.norm() == 0.0 || !df.norm().is_finite() {
            break;
        }
        let ds = f / df;
        s -= ds;
        f = char_fn(s, lin);
        if f.norm() <= 1e-10 * char_scale(s, lin) && s.norm() <= ROOT_SEARCH_RADIUS {
            return Ok((s, it));
        }
    }
    Err(Error::NoConverge {
        iterations: MAX_NEWTON_ITER,
        residual: f.norm(),
    })
}

/// Newton refinement of a root of `Δ` from the seed `s0`.
pub fn refine_root(s0: Complex64, lin: &LinearizationData) -> Result<Complex64> {
    refine_root_counted(s0, lin).map(|(s, _)| s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Largest real part among located roots (`-inf` when none converged).
    pub rightmost: f64,
    pub rightmost_root: Option<(f64, f64)>,
    /// Distinct roots found, as `(re, im)`.
    pub roots: Vec<(f64, f64)>,
    pub seeds: usize,
    pub converged: usize,
}

impl StabilityReport {
    pub fn is_stable(&self) -> bool {
        self.rightmost < 0.0
    }
}

/// `10 · max(μ, g, δ, 1/T)`, or `10 · max(μ, g, δ)` when `T = 0`.
pub fn default_omega_max(lin: &LinearizationData) -> f64 {
    let inv_t = if lin.t_delay > 0.0 { 1.0 / lin.t_delay } else { 0.0 };
    10.0 * lin.rate_scale.max(inv_t)
}

/// Rightmost root of `Δ` located by Newton from seeds on the imaginary axis
/// `iω, ω ∈ [0, omega_max]` and on the real axis. The neutral root at the
/// origin of the `δ0 = 0` system is not counted.
pub fn rightmost_real_part(lin: &LinearizationData, omega_max: Option<f64>, grid_n: usize) -> StabilityReport {
    let grid_n = grid_n.max(64);
    let omega_max = omega_max.unwrap_or_else(|| default_omega_max(lin));
    let mut seeds: Vec<Complex64> = (0..grid_n)
        .map(|j| Complex64::new(0.0, omega_max * j as f64 / (grid_n - 1) as f64))
        .collect();
    let real_span = lin.rate_scale;
    let n_real = 16;
    seeds.extend((0..=n_real).map(|k| Complex64::new(real_span * (2.0 * k as f64 / n_real as f64 - 1.0), 0.0)));

    let mut roots: Vec<Complex64> = Vec::new();
    let mut converged = 0;
    for seed in &seeds {
        let Ok(root) = refine_root(*seed, lin) else {
            continue;
        };
        converged += 1;
        if lin.neutral_zero_mode && root.norm() <= NEUTRAL_ROOT_TOL {
            continue;
        }
        let tol = 1e-7 * root.norm().max(1.0);
        if !roots.iter().any(|r| (r - root).norm() <= tol) {
            roots.push(root);
        }
    }
    roots.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    let rightmost_root = roots.first().map(|r| (r.re, r.im));
    StabilityReport {
        rightmost: rightmost_root.map_or(f64::NEG_INFINITY, |r| r.0),
        rightmost_root,
        roots: roots.iter().map(|r| (r.re, r.im)).collect(),
        seeds: seeds.len(),
        converged,
    }
}

/// Composite Simpson rule with `panels` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels + panels % 2;
    if b == a {
        return 0.0;
    }
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    acc * h / 3.0
}

const FRECHET_PANELS: usize = 4000;

/// Remainder ratio of the first-order expansion of the threshold delay
///
/// ```text
/// |τ(m, P* + εh) − τ(m, P*) + R'(P*)/R(P*) ∫_{−τ*}^0 εh(u) du| / ‖εh‖∞
/// ```
///
/// where `τ(m, P)` solves `∫_{−τ}^0 R(P(u)) du = m` numerically. The ratio
/// tends to zero with `ε` when the derivative formula is right.
pub fn tau_frechet_check(
    p_star: f64,
    perturbation: &dyn Fn(f64) -> f64,
    eps: f64,
    params: &ModelParams,
) -> Result<f64> {
    let m = params.m;
    let r_star = params.r(p_star);
    if !(p_star > 0.0 && r_star > R_FLOOR) {
        return Err(Error::SingularRate { p: p_star, rate: r_star });
    }
    if m == 0.0 {
        return Ok(0.0);
    }
    let tau_star = m / r_star;
    let history = |u: f64| p_star + eps * perturbation(u);
    let rate = |u: f64| {
        let p = history(u);
        if p > 0.0 {
            params.r(p)
        } else {
            f64::NAN
        }
    };

    let reach = |tau: f64| simpson(rate, -tau, 0.0, FRECHET_PANELS);
    let mut hi = tau_star;
    let mut guard = 0;
    loop {
        let v = reach(hi);
        if v.is_nan() {
            return Err(Error::ThresholdBracket(format!(
                "perturbed history leaves P > 0 within {hi} days"
            )));
        }
        if v >= m {
            break;
        }
        hi *= 2.0;
        guard += 1;
        if guard > 40 {
            return Err(Error::ThresholdBracket("maturity threshold never reached".into()));
        }
    }
    let tau = bisect_newton(|t| reach(t) - m, |t| rate(-t), 0.0, hi, 1e-15, 5);
    if !tau.is_finite() {
        return Err(Error::ThresholdBracket("non-finite threshold delay".into()));
    }

    let window = tau.max(tau_star);
    let samples = 2 * FRECHET_PANELS;
    let sup = (0..=samples)
        .map(|i| perturbation(-window * i as f64 / samples as f64).abs())
        .fold(0.0_f64, f64::max)
        * eps.abs();
    if sup == 0.0 {
        return Ok(0.0);
    }
    let linear = params.dr(p_star) / r_star * simpson(|u| eps * perturbation(u), -tau_star, 0.0, FRECHET_PANELS);
    Ok((tau - tau_star + linear).abs() / sup)
}

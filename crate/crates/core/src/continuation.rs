//! Pseudo-arclength continuation of the loci in the `(m, N_T)` plane where
//! the coexistence equilibrium has a purely imaginary pair of characteristic
//! roots `±iω`.
//!
//! The six unknowns are `(N*, P*, Z*, m, N_T, ω)`; the five equations are the
//! three equilibrium conditions and the real and imaginary parts of
//! `Δ(iω) = 0`. The solver works in scaled variables
//! `(N*/N_T, P*/N_T, Z*/N_T, log10 N_T, m/m_scale, ω)`.

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::equilibria::{equilibrium_residuals, m_ceiling, solve_e2};
use crate::error::{Error, Result};
use crate::linearize::{build_linearization, char_fn, linearize_at, rightmost_real_part, DEFAULT_GRID_N};
use crate::model::ModelParams;

/// Scale of `m` when there is no juvenile mortality and hence no ceiling.
pub const M_SCALE_NO_CEILING: f64 = 20.0;
/// Forward-difference step per scaled variable.
pub const FD_STEP: f64 = 1e-7;
/// Below this frequency a curve is considered to have left the Hopf locus.
pub const OMEGA_MIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub n_star: f64,
    pub p_star: f64,
    pub z_star: f64,
    pub m: f64,
    pub n_total: f64,
    pub omega: f64,
    /// Max scaled residual of [`hopf_residual`] at this point.
    pub residual: f64,
}

impl BoundaryPoint {
    pub fn as_vector(&self) -> [f64; 6] {
        [self.n_star, self.p_star, self.z_star, self.m, self.n_total, self.omega]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveTermination {
    /// `m` left `[0, m_max)`, `N_T` left the requested range or the
    /// equilibrium stopped being positive.
    DomainBound,
    ClosedLoop,
    OmegaCollapse,
    /// The step length fell below `h_min`.
    StepFailure,
    /// `max_points` points were emitted.
    PointLimit,
    /// Landed on the requested target point.
    TargetReached,
}

impl CurveTermination {
    pub fn label(&self) -> &'static str {
        match self {
            CurveTermination::DomainBound => "DomainBound",
            CurveTermination::ClosedLoop => "ClosedLoop",
            CurveTermination::OmegaCollapse => "OmegaCollapse",
            CurveTermination::StepFailure => "StepFailure",
            CurveTermination::PointLimit => "PointLimit",
            CurveTermination::TargetReached => "TargetReached",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCurve {
    pub points: Vec<BoundaryPoint>,
    pub termination: CurveTermination,
    /// How the other end ended, for curves traced in both directions.
    pub back_termination: Option<CurveTermination>,
    /// Unit tangent (scaled variables) at the last point, in the direction
    /// of travel.
    pub final_tangent: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Corrector tolerance on the scaled residual.
    pub tol: f64,
    pub max_iter: usize,
    pub max_points: usize,
    pub nt_range: (f64, f64),
    /// Upper end of the `m` range; defaults to the ceiling (or
    /// [`M_SCALE_NO_CEILING`] without juvenile mortality).
    pub m_max: Option<f64>,
    /// Initial orientation: sign of the `m` component of the first tangent.
    pub direction: f64,
    /// Overrides `direction`: the first tangent has positive inner product
    /// with this scaled vector.
    pub align_with: Option<[f64; 6]>,
    /// Stop when the curve passes through this point.
    pub target: Option<BoundaryPoint>,
    /// Steps before returning to the start counts as a closed loop.
    pub closed_loop_min_steps: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            h_init: 1e-2,
            h_min: 1e-6,
            h_max: 1e-1,
            tol: 1e-9,
            max_iter: 25,
            max_points: 5000,
            nt_range: (1e-3, 1e3),
            m_max: None,
            direction: 1.0,
            align_with: None,
            target: None,
            closed_loop_min_steps: 10,
        }
    }
}

/// Scale applied to `m` in the working variables.
pub fn m_scale(params: &ModelParams) -> f64 {
    let c = m_ceiling(params);
    if c.is_finite() {
        c
    } else {
        M_SCALE_NO_CEILING
    }
}

/// Unscaled residual at `u = (N*, P*, Z*, m, N_T, ω)`: the three equilibrium
/// conditions followed by `Re Δ(iω)` and `Im Δ(iω)`.
pub fn hopf_residual(u: &[f64; 6], params: &ModelParams) -> Result<[f64; 5]> {
    let [n, p, z, m, nt, w] = *u;
    if !(m >= 0.0 && m.is_finite()) {
        return Err(Error::Domain {
            what: "m",
            value: m,
            domain: "[0, inf)",
        });
    }
    if !(nt > 0.0 && nt.is_finite()) {
        return Err(Error::Domain {
            what: "n_total",
            value: nt,
            domain: "(0, inf)",
        });
    }
    let q = params.clone().with_m(m).with_n_total(nt);
    let lin = linearize_at(n, p, z, &q)?;
    let eq = equilibrium_residuals(n, p, z, m, nt, &q);
    let c = char_fn(Complex64::new(0.0, w), &lin);
    Ok([eq[0], eq[1], eq[2], c.re, c.im])
}

/// Weight for the characteristic components: the size of the terms in the
/// 3×3 determinant at `s = iω`.
fn char_weight(omega: f64, params: &ModelParams) -> f64 {
    let c = 1.0 + params.mu.max(params.g).max(params.delta);
    (omega * omega + c * c).powf(1.5)
}

/// Max residual with equilibrium components over `max(1, N_T)` and the
/// characteristic components over the determinant's term size.
pub fn scaled_residual_norm(u: &[f64; 6], params: &ModelParams) -> Result<f64> {
    let r = hopf_residual(u, params)?;
    let ns = u[4].max(1.0);
    let w = char_weight(u[5], params);
    Ok((r[0].abs() / ns)
        .max(r[1].abs() / ns)
        .max(r[2].abs() / ns)
        .max(r[3].abs() / w)
        .max(r[4].abs() / w))
}

type V6 = SVector<f64, 6>;
type V5 = SVector<f64, 5>;

struct Problem<'a> {
    params: &'a ModelParams,
    ms: f64,
}

impl Problem<'_> {
    fn unscale(&self, v: &V6) -> [f64; 6] {
        let nt = 10f64.powf(v[3]);
        [v[0] * nt, v[1] * nt, v[2] * nt, v[4] * self.ms, nt, v[5]]
    }

    fn scale(&self, u: &[f64; 6]) -> V6 {
        let nt = u[4];
        V6::from([u[0] / nt, u[1] / nt, u[2] / nt, nt.log10(), u[3] / self.ms, u[5]])
    }

    /// Residual with equilibrium rows relative to `N_T`.
    fn g(&self, v: &V6) -> Result<V5> {
        let u = self.unscale(v);
        let r = hopf_residual(&u, self.params)?;
        let nt = u[4];
        let w = char_weight(u[5], self.params);
        Ok(V5::from([r[0] / nt, r[1] / nt, r[2] / nt, r[3] / w, r[4] / w]))
    }

    fn jacobian(&self, v: &V6, g0: &V5) -> Result<SMatrix<f64, 5, 6>> {
        let mut j = SMatrix::<f64, 5, 6>::zeros();
        for c in 0..6 {
            let mut vp = *v;
            vp[c] += FD_STEP;
            let gp = self.g(&vp)?;
            j.set_column(c, &((gp - g0) / FD_STEP));
        }
        Ok(j)
    }

    fn point(&self, v: &V6) -> Result<BoundaryPoint> {
        let u = self.unscale(v);
        Ok(BoundaryPoint {
            n_star: u[0],
            p_star: u[1],
            z_star: u[2],
            m: u[3],
            n_total: u[4],
            omega: u[5],
            residual: scaled_residual_norm(&u, self.params)?,
        })
    }
}

/// Unit null vector of a full-rank 5×6 matrix from its signed 5×5 minors.
fn null_vector(j: &SMatrix<f64, 5, 6>) -> V6 {
    let mut t = V6::zeros();
    for skip in 0..6 {
        let mut minor = SMatrix::<f64, 5, 5>::zeros();
        let mut col = 0;
        for c in 0..6 {
            if c == skip {
                continue;
            }
            minor.set_column(col, &j.column(c));
            col += 1;
        }
        let sign = if skip % 2 == 0 { 1.0 } else { -1.0 };
        t[skip] = sign * minor.determinant();
    }
    let n = t.norm();
    if n > 0.0 {
        t / n
    } else {
        t
    }
}

fn tangent(prob: &Problem, v: &V6) -> Result<V6> {
    let g0 = prob.g(v)?;
    let t = null_vector(&prob.jacobian(v, &g0)?);
    if !(t.norm() > 0.5) {
        return Err(Error::NewtonFail("singular Jacobian at curve point".into()));
    }
    Ok(t)
}

fn converged(g: &V5, dv: f64, tol: f64) -> bool {
    g.amax() <= tol && dv <= 1e-9
}

/// Newton on `[G(v); t·(v − v_pred)] = 0`; returns the point and the
/// iteration count.
fn correct(prob: &Problem, v_pred: &V6, t: &V6, tol: f64, max_iter: usize, max_move: f64) -> Result<(V6, usize)> {
    let mut v = *v_pred;
    for it in 1..=max_iter {
        let g = prob.g(&v)?;
        let j = prob.jacobian(&v, &g)?;
        let mut a = SMatrix::<f64, 6, 6>::zeros();
        let mut rhs = V6::zeros();
        for r in 0..5 {
            a.set_row(r, &j.row(r));
            rhs[r] = -g[r];
        }
        a.set_row(5, &t.transpose());
        rhs[5] = -t.dot(&(v - v_pred));
        let dv = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NewtonFail("singular corrector system".into()))?;
        v += dv;
        if !v.iter().all(|x| x.is_finite()) || (v - v_pred).norm() > max_move {
            return Err(Error::NewtonFail("corrector diverged".into()));
        }
        let g_new = prob.g(&v)?;
        if converged(&g_new, dv.norm(), tol) {
            return Ok((v, it));
        }
    }
    Err(Error::NoConverge {
        iterations: max_iter,
        residual: prob.g(&v).map(|g| g.amax()).unwrap_or(f64::NAN),
    })
}

/// Newton on the five equations with `m` held fixed (scaled variables).
fn polish_fixed_m(prob: &Problem, v0: &V6, tol: f64, max_iter: usize) -> Result<V6> {
    let free = [0usize, 1, 2, 3, 5];
    let mut v = *v0;
    let mut g = prob.g(&v)?;
    for _ in 0..max_iter {
        let j = prob.jacobian(&v, &g)?;
        let mut a = SMatrix::<f64, 5, 5>::zeros();
        for (k, &c) in free.iter().enumerate() {
            a.set_column(k, &j.column(c));
        }
        let step = a
            .lu()
            .solve(&(-g))
            .ok_or_else(|| Error::NewtonFail("singular Jacobian while polishing".into()))?;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let mut trial = v;
            for (k, &c) in free.iter().enumerate() {
                trial[c] += lambda * step[k];
            }
            if let Ok(gt) = prob.g(&trial) {
                if gt.amax() < g.amax() || gt.amax() <= tol {
                    accepted = Some((trial, gt));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((vn, gn)) = accepted else {
            return Err(Error::NewtonFail(format!(
                "no residual decrease from |G| = {:e}",
                g.amax()
            )));
        };
        let dv = (vn - v).norm();
        v = vn;
        g = gn;
        if converged(&g, dv, tol) {
            return Ok(v);
        }
    }
    Err(Error::NewtonFail(format!(
        "no convergence after {max_iter} iterations (|G| = {:e})",
        g.amax()
    )))
}

/// Rightmost root at the coexistence equilibrium, optionally restricted to
/// roots with `|Im s|` in `window`. Returns `(re, |im|)`.
fn windowed_rightmost(params: &ModelParams, window: Option<(f64, f64)>) -> Result<(f64, f64)> {
    let e2 = solve_e2(params)?;
    let lin = build_linearization(&e2, params)?;
    let omega_max = window.map(|(_, hi)| hi * 1.5);
    let rep = rightmost_real_part(&lin, omega_max, DEFAULT_GRID_N);
    let best = rep
        .roots
        .iter()
        .filter(|(_, im)| window.map_or(true, |(lo, hi)| im.abs() >= lo && im.abs() <= hi))
        .fold(None::<(f64, f64)>, |acc, &(re, im)| match acc {
            Some((r, _)) if r >= re => acc,
            _ => Some((re, im.abs())),
        });
    Ok(best.unwrap_or((f64::NEG_INFINITY, 0.0)))
}

/// Boundary point at `m_fixed` by bisecting `log N_T` on the sign of the
/// rightmost real part, then polishing all unknowns but `m` by Newton.
pub fn find_start(params: &ModelParams, m_fixed: f64, nt_bracket: (f64, f64)) -> Result<BoundaryPoint> {
    find_start_windowed(params, m_fixed, nt_bracket, None)
}

/// [`find_start`] counting only roots with `|Im s|` inside `omega_window`.
pub fn find_start_windowed(
    params: &ModelParams,
    m_fixed: f64,
    nt_bracket: (f64, f64),
    omega_window: Option<(f64, f64)>,
) -> Result<BoundaryPoint> {
    let base = params.clone().with_m(m_fixed);
    let (lo, hi) = nt_bracket;
    let eval = |lg: f64| windowed_rightmost(&base.clone().with_n_total(10f64.powf(lg)), omega_window);
    let (mut a, mut b) = (lo.log10(), hi.log10());
    let fa = eval(a).map(|r| r.0).unwrap_or(f64::NEG_INFINITY);
    let fb = eval(b).map(|r| r.0).unwrap_or(f64::NEG_INFINITY);
    if !((fa < 0.0) ^ (fb < 0.0)) {
        return Err(Error::NoSignChange { lo, hi });
    }
    let a_stable = fa < 0.0;
    for _ in 0..40 {
        if (b - a).abs() < 1e-9 {
            break;
        }
        let mid = 0.5 * (a + b);
        let fm = eval(mid).map(|r| r.0).unwrap_or(f64::NEG_INFINITY);
        if (fm < 0.0) == a_stable {
            a = mid;
        } else {
            b = mid;
        }
    }
    // Start from the unstable side so the crossing root is present.
    let lg = b;
    let p = base.clone().with_n_total(10f64.powf(lg));
    let (_, omega) = eval(lg)?;
    if !(omega > OMEGA_MIN) {
        return Err(Error::NewtonFail(format!("crossing root is real (ω = {omega})")));
    }
    let e2 = solve_e2(&p)?;
    let prob = Problem {
        params,
        ms: m_scale(params),
    };
    let u0 = [e2.n_star, e2.p_star, e2.z_star, m_fixed, p.n_total, omega];
    let v = polish_fixed_m(&prob, &prob.scale(&u0), 1e-10, 40)?;
    prob.point(&v)
}

/// Trace the locus from `start` in one direction.
pub fn trace_curve(start: &BoundaryPoint, params: &ModelParams, opts: &TraceOptions) -> Result<BoundaryCurve> {
    let prob = Problem {
        params,
        ms: m_scale(params),
    };
    let m_max = opts.m_max.unwrap_or_else(|| m_ceiling(params).min(prob.ms)).min(m_ceiling(params));
    let v0 = prob.scale(&start.as_vector());
    let r0 = prob.g(&v0)?.amax();
    if !(r0 <= 10.0 * opts.tol) {
        return Err(Error::StartResidual {
            residual: r0,
            tolerance: 10.0 * opts.tol,
        });
    }
    let mut t = tangent(&prob, &v0)?;
    let flip = match opts.align_with {
        Some(a) => t.dot(&V6::from(a)) < 0.0,
        None => {
            let key = if t[4].abs() > 1e-12 { t[4] } else { t[3] };
            key * opts.direction < 0.0
        }
    };
    if flip {
        t = -t;
    }
    let t_start = t;
    let target = opts.target.map(|p| prob.scale(&p.as_vector()));

    let mut points = vec![*start];
    let mut v = v0;
    let mut h = opts.h_init.clamp(opts.h_min, opts.h_max);
    let mut steps = 0usize;
    let termination = loop {
        if points.len() >= opts.max_points {
            break CurveTermination::PointLimit;
        }
        let mut h_try = h;
        let mut landing = None;
        let candidates = [
            target.map(|tg| (tg, CurveTermination::TargetReached)),
            (steps >= opts.closed_loop_min_steps && t.dot(&t_start) > 0.0)
                .then_some((v0, CurveTermination::ClosedLoop)),
        ];
        for (tg, kind) in candidates.into_iter().flatten() {
            let d = tg - v;
            let proj = d.dot(&t);
            let perp = (d - t * proj).norm();
            if proj > 0.0 && proj <= h_try && perp <= 0.25 * proj {
                h_try = proj;
                landing = Some(kind);
                break;
            }
        }
        let v_pred = v + t * h_try;
        let attempt = correct(&prob, &v_pred, &t, opts.tol, opts.max_iter, 0.5 * h_try.max(opts.h_min))
            .and_then(|(vn, it)| {
                let tn = tangent(&prob, &vn)?;
                let tn = if tn.dot(&t) < 0.0 { -tn } else { tn };
                if tn.dot(&t) < 0.5 {
                    return Err(Error::NewtonFail("tangent turned too sharply".into()));
                }
                Ok((vn, tn, it))
            });
        match attempt {
            Ok((vn, tn, it)) => {
                let u = prob.unscale(&vn);
                let [n, p, z, m, nt, w] = u;
                if !(m >= 0.0 && m < m_max && nt >= opts.nt_range.0 && nt <= opts.nt_range.1) {
                    break CurveTermination::DomainBound;
                }
                if !(n > 0.0 && p > 0.0 && z > 0.0) {
                    break CurveTermination::DomainBound;
                }
                if !(w >= OMEGA_MIN) {
                    break CurveTermination::OmegaCollapse;
                }
                points.push(prob.point(&vn)?);
                v = vn;
                t = tn;
                steps += 1;
                if let Some(kind) = landing {
                    break kind;
                }
                if it <= 3 {
                    h = (h * 1.3).min(opts.h_max);
                }
            }
            Err(_) => {
                let m_pred = prob.unscale(&v_pred)[3];
                if !(m_pred >= 0.0 && m_pred < m_max) {
                    break CurveTermination::DomainBound;
                }
                h = 0.5 * h_try;
                if h < opts.h_min {
                    break CurveTermination::StepFailure;
                }
            }
        }
    };
    Ok(BoundaryCurve {
        points,
        termination,
        back_termination: None,
        final_tangent: t.into(),
    })
}

/// Trace from `start` in both directions and join the halves; a closed loop
/// found on the first pass is returned as is.
pub fn trace_both_ways(start: &BoundaryPoint, params: &ModelParams, opts: &TraceOptions) -> Result<BoundaryCurve> {
    let fwd = trace_curve(start, params, opts)?;
    if fwd.termination == CurveTermination::ClosedLoop {
        return Ok(fwd);
    }
    let back_opts = TraceOptions {
        direction: -opts.direction,
        align_with: None,
        ..opts.clone()
    };
    let back = trace_curve(start, params, &back_opts)?;
    let mut points: Vec<BoundaryPoint> = back.points.into_iter().skip(1).rev().collect();
    points.extend(fwd.points);
    Ok(BoundaryCurve {
        points,
        termination: fwd.termination,
        back_termination: Some(back.termination),
        final_tangent: fwd.final_tangent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub m: f64,
    pub n_total: f64,
    pub omega: f64,
}

pub fn emit_frequency_profile(curve: &BoundaryCurve) -> Vec<FrequencyRow> {
    curve
        .points
        .iter()
        .map(|p| FrequencyRow {
            m: p.m,
            n_total: p.n_total,
            omega: p.omega,
        })
        .collect()
}

/// Interpolated `N_T` values where the curve crosses `m = m0`.
pub fn crossings_at_m(curve: &BoundaryCurve, m0: f64) -> Vec<FrequencyRow> {
    let mut out = Vec::new();
    for w in curve.points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if (a.m - m0) * (b.m - m0) <= 0.0 && a.m != b.m {
            let s = (m0 - a.m) / (b.m - a.m);
            let lg = a.n_total.log10() + s * (b.n_total.log10() - a.n_total.log10());
            out.push(FrequencyRow {
                m: m0,
                n_total: 10f64.powf(lg),
                omega: a.omega + s * (b.omega - a.omega),
            });
        }
    }
    out
}

/// Start points at fixed `m` from every sign change of the (windowed)
/// rightmost real part along an increasing `N_T` grid.
pub fn seed_starts(
    params: &ModelParams,
    m: f64,
    nt_grid: &[f64],
    omega_windows: &[Option<(f64, f64)>],
) -> Vec<BoundaryPoint> {
    let base = params.clone().with_m(m);
    let mut out = Vec::new();
    for &window in omega_windows {
        let signs: Vec<Option<bool>> = nt_grid
            .iter()
            .map(|&nt| {
                windowed_rightmost(&base.clone().with_n_total(nt), window)
                    .ok()
                    .filter(|r| r.0.is_finite())
                    .map(|r| r.0 < 0.0)
            })
            .collect();
        for i in 1..nt_grid.len() {
            if let (Some(a), Some(b)) = (signs[i - 1], signs[i]) {
                if a != b {
                    if let Ok(p) = find_start_windowed(params, m, (nt_grid[i - 1], nt_grid[i]), window) {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

fn scaled_coords(p: &BoundaryPoint, ms: f64) -> [f64; 3] {
    [p.n_total.log10(), p.m / ms, p.omega]
}

/// Distance in `(log10 N_T, m/m_scale, ω)` from `p` to the polyline of `curve`.
pub fn distance_to_curve(p: &BoundaryPoint, curve: &BoundaryCurve, ms: f64) -> f64 {
    let x = scaled_coords(p, ms);
    let dist = |a: [f64; 3], b: [f64; 3]| {
        let d: Vec<f64> = (0..3).map(|i| b[i] - a[i]).collect();
        let len2: f64 = d.iter().map(|v| v * v).sum();
        let s = if len2 > 0.0 {
            ((0..3).map(|i| (x[i] - a[i]) * d[i]).sum::<f64>() / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (0..3).map(|i| (x[i] - a[i] - s * d[i]).powi(2)).sum::<f64>().sqrt()
    };
    match curve.points.len() {
        0 => f64::INFINITY,
        1 => dist(scaled_coords(&curve.points[0], ms), scaled_coords(&curve.points[0], ms)),
        _ => curve
            .points
            .windows(2)
            .map(|w| dist(scaled_coords(&w[0], ms), scaled_coords(&w[1], ms)))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Drop curves whose start lies on an earlier curve. Curves are first sorted
/// by their start point, so the result does not depend on input order.
pub fn dedupe_curves(mut curves: Vec<BoundaryCurve>, ms: f64, tol: f64) -> Vec<BoundaryCurve> {
    let key = |c: &BoundaryCurve| c.points.first().map(|p| (p.m, p.n_total, p.omega));
    curves.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept: Vec<BoundaryCurve> = Vec::new();
    for c in curves {
        let Some(first) = c.points.first() else { continue };
        let on_earlier = kept.iter().any(|k| {
            distance_to_curve(first, k, ms) <= tol
                || k.points.first().is_some_and(|kf| distance_to_curve(kf, &c, ms) <= tol)
        });
        if !on_earlier {
            kept.push(c);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearize::build_linearization;
    use crate::model::ResponseKind;
    use nalgebra::Matrix3;

    #[test]
    fn residual_vanishes_at_curve_point_and_flips_with_omega() {
        let p = ModelParams::table1().with_delta0(0.17);
        let start = find_start(&p, 6.0, (10f64.powf(0.4), 10f64.powf(0.6))).unwrap();
        assert!(start.residual <= 1e-9);
        let lg = start.n_total.log10();
        assert!((lg - 0.50).abs() <= 0.02, "{lg}");
        let u = start.as_vector();
        let r = hopf_residual(&u, &p).unwrap();
        let mut neg = u;
        neg[5] = -neg[5];
        let rn = hopf_residual(&neg, &p).unwrap();
        for i in 0..4 {
            assert_eq!(r[i], rn[i]);
        }
        assert_eq!(r[4], -rn[4]);
    }

    #[test]
    fn stable_bracket_has_no_sign_change() {
        let p = ModelParams::table1().with_delta0(0.17);
        assert!(matches!(
            find_start(&p, 6.0, (0.5, 1.0)),
            Err(Error::NoSignChange { .. })
        ));
    }

    /// Largest real part of the nonzero eigenvalues of `A1 + A2` at E2.
    fn ode_growth(nt: f64) -> (f64, f64) {
        let p = ModelParams::table1().with_n_total(nt);
        let e2 = solve_e2(&p).unwrap();
        let lin = build_linearization(&e2, &p).unwrap();
        let mut j = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                j[(r, c)] = lin.a1[r][c] + lin.a2[r][c];
            }
        }
        j.complex_eigenvalues()
            .iter()
            .filter(|l| l.norm() > 1e-9)
            .map(|l| (l.re, l.im.abs()))
            .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a })
    }

    #[test]
    fn ode_hopf_point_matches_eigen_oracle() {
        let (mut lo, mut hi) = (0.1f64, 10.0f64);
        assert!(ode_growth(lo).0 < 0.0 && ode_growth(hi).0 > 0.0);
        for _ in 0..100 {
            let mid = (lo * hi).sqrt();
            if ode_growth(mid).0 < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (_, w_oracle) = ode_growth(hi);
        let p = ModelParams::table1();
        let start = find_start(&p, 0.0, (0.1, 10.0)).unwrap();
        assert!((start.n_total - hi).abs() <= 1e-6 * hi, "{} vs {hi}", start.n_total);
        assert!((start.omega - w_oracle).abs() <= 1e-6 * w_oracle);
        assert!(start.residual <= 1e-9);
    }

    #[test]
    fn traced_points_satisfy_residual_and_reverse() {
        let p = ModelParams::table1().with_delta0(0.17);
        let start = find_start(&p, 6.0, (10f64.powf(0.4), 10f64.powf(0.6))).unwrap();
        let opts = TraceOptions {
            max_points: 25,
            ..TraceOptions::default()
        };
        let fwd = trace_curve(&start, &p, &opts).unwrap();
        assert_eq!(fwd.termination, CurveTermination::PointLimit);
        assert!(fwd.points.iter().all(|q| q.residual <= 1e-9));
        let back = trace_curve(
            fwd.points.last().unwrap(),
            &p,
            &TraceOptions {
                max_points: 200,
                align_with: Some(fwd.final_tangent.map(|x| -x)),
                target: Some(start),
                ..TraceOptions::default()
            },
        )
        .unwrap();
        assert_eq!(back.termination, CurveTermination::TargetReached);
        let end = back.points.last().unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        assert!(rel(end.n_total, start.n_total) <= 1e-8);
        assert!(rel(end.m, start.m) <= 1e-8);
        assert!(rel(end.omega, start.omega) <= 1e-8);
    }

    fn variation(curve: &BoundaryCurve, m_hi: f64) -> f64 {
        let pts: Vec<f64> = curve.points.iter().filter(|q| q.m <= m_hi).map(|q| q.n_total).collect();
        pts.iter().cloned().fold(0.0, f64::max) / pts.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn juvenile_mortality_makes_boundary_depend_on_m() {
        let base = ModelParams::table1().with_growth(ResponseKind::Constant);
        let opts = TraceOptions {
            m_max: Some(19.7),
            ..TraceOptions::default()
        };
        let flat = trace_curve(&find_start(&base, 0.0, (0.1, 10.0)).unwrap(), &base, &opts).unwrap();
        let mortal = base.clone().with_delta0(0.17);
        let steep = trace_curve(&find_start(&mortal, 0.0, (0.1, 10.0)).unwrap(), &mortal, &opts).unwrap();
        let m_hi = 12.0;
        assert!(flat.points.iter().any(|q| q.m >= m_hi));
        assert!(steep.points.iter().any(|q| q.m >= m_hi));
        let (vf, vs) = (variation(&flat, m_hi), variation(&steep, m_hi));
        assert!(vf < 4.0 && vs > 2.0 * vf, "{vf} vs {vs}");
    }

    #[test]
    fn constant_rate_boundary_agrees_with_linear_growth() {
        // m = 4 crossing lies between N_T = 0.26 (decaying runs) and 0.30
        // (growing runs).
        let p = ModelParams::table1().with_growth(ResponseKind::Constant);
        let start = find_start(&p, 4.0, (0.2, 0.5)).unwrap();
        assert!(start.n_total > 0.26 && start.n_total < 0.30, "{}", start.n_total);
    }
}

//! Fixed-delay integration in transformed time, the map back to physical
//! time and trajectory diagnostics.
//!
//! Transformed time `t̂` advances at rate `R(P)/R*` relative to physical time,
//! which turns the state-dependent maturation delay into the constant
//! `T = m/R*`. The step is chosen so that `T/Δt̂` is an integer and every
//! delayed value is a stored grid sample.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::equilibria::{dominant_equilibrium, reference_rate, EquilibriumKind};
use crate::error::{Error, Result};
use crate::model::{dde_rhs, juvenile_pool, steps_per_delay, ModelParams, Sample, StateNPZ, R_FLOOR};

pub const DEFAULT_STEPS_PER_DELAY: usize = 200;
/// Step used when `m = 0` and the model is an ODE.
pub const ODE_DEFAULT_DT: f64 = 0.01;
/// `P̂ < EXTINCTION_FLOOR · N_T` ends a run with [`Termination::Extinction`].
pub const EXTINCTION_FLOOR: f64 = 1e-12;
/// The running `τ̂(m)` sum is rebuilt from the buffer this often.
pub const TAU_RESYNC_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum HistorySpec {
    /// Constant history `P*(1+eps_p)`, `Z*(1+eps_z)` at the dominant
    /// equilibrium (E2 when it exists, else E1).
    ConstantAtEquilibrium { eps_p: f64, eps_z: f64 },
    ConstantValues { p0: f64, z0: f64 },
    /// Values on an increasing transformed-time grid covering `[-T, 0]`,
    /// linearly interpolated onto the step grid.
    Sampled { t_hat: Vec<f64>, p: Vec<f64>, z: Vec<f64> },
}

/// One point of the initial history, with its physical time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub t_hat: f64,
    pub t: f64,
    pub p: f64,
    pub z: f64,
    pub inv_r: f64,
}

/// Samples on `[t̂ − T, t̂]` plus the running trapezoid sum for `τ̂(m)`.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    dt_hat: f64,
    r_star: f64,
    steps: usize,
    samples: VecDeque<Sample>,
    tau_sum: f64,
    t_hat: f64,
    t: f64,
    steps_taken: usize,
    prehistory: Vec<HistoryPoint>,
}

impl HistoryBuffer {
    pub fn dt_hat(&self) -> f64 {
        self.dt_hat
    }

    pub fn r_star(&self) -> f64 {
        self.r_star
    }

    /// `T/Δt̂`; zero for the ODE case.
    pub fn steps_per_delay(&self) -> usize {
        self.steps
    }

    pub fn current(&self) -> StateNPZ {
        self.samples.back().expect("buffer is never empty").state()
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter()
    }

    pub fn prehistory(&self) -> &[HistoryPoint] {
        &self.prehistory
    }

    /// Running value of `τ̂(m)`, the physical maturation time.
    pub fn tau_running(&self) -> f64 {
        self.tau_sum
    }

    /// `τ̂(m)` summed from scratch over the buffer.
    pub fn tau_recomputed(&self) -> f64 {
        let s = &self.samples;
        (1..s.len())
            .map(|j| 0.5 * self.dt_hat * (s[j - 1].inv_r + s[j].inv_r))
            .sum()
    }

    /// Juvenile biomass `∫_0^m ρ ds` by trapezoid over the buffer.
    pub fn juvenile_biomass(&mut self, params: &ModelParams) -> f64 {
        let window = self.samples.make_contiguous();
        juvenile_pool(window, self.steps, self.dt_hat, params).unwrap_or(f64::NAN)
    }

    /// `N + P + Z + ∫ρ − N_T`.
    pub fn conservation_residual(&mut self, params: &ModelParams) -> f64 {
        let c = self.current();
        c.n + c.p + c.z + self.juvenile_biomass(params) - params.n_total
    }

    fn resync_tau(&mut self) {
        self.tau_sum = self.tau_recomputed();
    }
}

/// `Δt̂` giving [`DEFAULT_STEPS_PER_DELAY`] steps per delay, or
/// [`ODE_DEFAULT_DT`] when `m = 0`.
pub fn default_dt_hat(params: &ModelParams) -> f64 {
    if params.m == 0.0 {
        ODE_DEFAULT_DT
    } else {
        params.m / reference_rate(params) / DEFAULT_STEPS_PER_DELAY as f64
    }
}

/// Step that puts exactly `steps` grid intervals in one delay.
pub fn dt_for_steps(params: &ModelParams, steps: usize) -> f64 {
    if params.m == 0.0 {
        ODE_DEFAULT_DT * DEFAULT_STEPS_PER_DELAY as f64 / steps.max(1) as f64
    } else {
        params.m / reference_rate(params) / steps.max(1) as f64
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v <= x);
    if i == 0 {
        return ys[0];
    }
    if i >= xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    let w = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
    ys[i - 1] + w * (ys[i] - ys[i - 1])
}

fn history_values(spec: &HistorySpec, params: &ModelParams, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    match spec {
        HistorySpec::ConstantAtEquilibrium { eps_p, eps_z } => {
            let eq = dominant_equilibrium(params)?;
            if eq.kind == EquilibriumKind::LimitE0 {
                return Err(Error::InvalidHistory(
                    "no equilibrium with positive phytoplankton to perturb".into(),
                ));
            }
            let v = (eq.p_star * (1.0 + eps_p), eq.z_star * (1.0 + eps_z));
            Ok(vec![v; grid.len()])
        }
        HistorySpec::ConstantValues { p0, z0 } => Ok(vec![(*p0, *z0); grid.len()]),
        HistorySpec::Sampled { t_hat, p, z } => {
            if t_hat.is_empty() || t_hat.len() != p.len() || t_hat.len() != z.len() {
                return Err(Error::InvalidHistory("sample columns must be nonempty and of equal length".into()));
            }
            if t_hat.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidHistory("sample times must be strictly increasing".into()));
            }
            let lo = grid[0];
            let slack = 1e-9 * lo.abs().max(1e-12);
            if t_hat[0] > lo + slack || *t_hat.last().unwrap() < -slack {
                return Err(Error::InvalidHistory(format!(
                    "samples span [{}, {}] but must cover [{lo}, 0]",
                    t_hat[0],
                    t_hat.last().unwrap()
                )));
            }
            Ok(grid
                .iter()
                .map(|&x| (interpolate(t_hat, p, x), interpolate(t_hat, z, x)))
                .collect())
        }
    }
}

/// Fill the history grid on `[-T, 0]` and set `N̂(0)` from conservation.
pub fn build_initial(spec: &HistorySpec, params: &ModelParams, dt_hat: f64) -> Result<HistoryBuffer> {
    build_initial_with_offset(spec, params, dt_hat, 0.0)
}

/// As [`build_initial`] with `N̂(0)` shifted by `n_offset`, so that the
/// conservation residual starts at `n_offset` instead of zero.
pub fn build_initial_with_offset(
    spec: &HistorySpec,
    params: &ModelParams,
    dt_hat: f64,
    n_offset: f64,
) -> Result<HistoryBuffer> {
    params.validate()?;
    if !(dt_hat > 0.0 && dt_hat.is_finite()) {
        return Err(Error::Domain {
            what: "dt_hat",
            value: dt_hat,
            domain: "(0, inf)",
        });
    }
    let r_star = reference_rate(params);
    if !(r_star > R_FLOOR && r_star.is_finite()) {
        return Err(Error::SingularRate {
            p: f64::NAN,
            rate: r_star,
        });
    }
    let steps = steps_per_delay(params.m, r_star, dt_hat)?;
    let grid: Vec<f64> = (0..=steps).map(|j| -((steps - j) as f64) * dt_hat).collect();
    let values = history_values(spec, params, &grid)?;

    let mut samples = VecDeque::with_capacity(steps + 2);
    for &(p, z) in &values {
        if !(p > 0.0 && p.is_finite() && z >= 0.0 && z.is_finite()) {
            return Err(Error::InvalidHistory(format!(
                "history needs P > 0 and Z >= 0, got P = {p}, Z = {z}"
            )));
        }
        let r = params.r(p);
        if !(r >= R_FLOOR) {
            return Err(Error::SingularRate { p, rate: r });
        }
        samples.push_back(Sample::new(0.0, p, z, r_star, params));
    }
    let window = samples.make_contiguous();
    let pool = juvenile_pool(window, steps, dt_hat, params)?;
    let last = window[steps];
    let n0 = params.n_total - last.p - last.z - pool + n_offset;
    if !(n0 > 0.0) {
        return Err(Error::InfeasibleBiomass { n0 });
    }
    for s in samples.iter_mut() {
        s.n = n0;
    }

    let mut prehistory = vec![HistoryPoint {
        t_hat: 0.0,
        t: 0.0,
        p: last.p,
        z: last.z,
        inv_r: last.inv_r,
    }];
    let mut t = 0.0;
    for j in (0..steps).rev() {
        t -= 0.5 * dt_hat * (samples[j].inv_r + samples[j + 1].inv_r);
        prehistory.push(HistoryPoint {
            t_hat: grid[j],
            t,
            p: samples[j].p,
            z: samples[j].z,
            inv_r: samples[j].inv_r,
        });
    }
    prehistory.reverse();

    let mut buf = HistoryBuffer {
        dt_hat,
        r_star,
        steps,
        samples,
        tau_sum: 0.0,
        t_hat: 0.0,
        t: 0.0,
        steps_taken: 0,
        prehistory,
    };
    buf.resync_tau();
    Ok(buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    HorizonReached,
    Extinction,
    /// `R(P)` fell below the floor or the state stopped being finite.
    SingularRate,
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::HorizonReached => "HorizonReached",
            Termination::Extinction => "Extinction",
            Termination::SingularRate => "SingularRate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t_hat: f64,
    pub t: f64,
    pub n: f64,
    pub p: f64,
    pub z: f64,
    /// Physical maturation time `τ(m, P_t) = τ̂(m)`.
    pub tau_m: f64,
    /// `N + P + Z + ∫ρ − N_T`.
    pub cons_residual: f64,
    /// `R*/R(P)`.
    pub inv_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub prehistory: Vec<HistoryPoint>,
    pub termination: Termination,
    pub dt_hat: f64,
    pub r_star: f64,
    pub steps_per_delay: usize,
    /// Rows are kept every this many steps.
    pub record_every: usize,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryRow {
        self.rows.last().expect("trajectory has at least the initial row")
    }

    pub fn max_abs_cons_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.cons_residual.abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub horizon_hat: f64,
    pub record_every: usize,
}

impl SimOptions {
    pub fn new(horizon_hat: f64) -> Self {
        Self {
            horizon_hat,
            record_every: 1,
        }
    }

    pub fn record_every(mut self, every: usize) -> Self {
        self.record_every = every.max(1);
        self
    }
}

fn row(buf: &mut HistoryBuffer, params: &ModelParams) -> TrajectoryRow {
    let cons = buf.conservation_residual(params);
    let s = *buf.samples.back().unwrap();
    TrajectoryRow {
        t_hat: buf.t_hat,
        t: buf.t,
        n: s.n,
        p: s.p,
        z: s.z,
        tau_m: buf.tau_sum,
        cons_residual: cons,
        inv_r: s.inv_r,
    }
}

enum StepOutcome {
    Advanced,
    Singular,
}

/// One Heun step of the transformed system.
fn heun_step(buf: &mut HistoryBuffer, params: &ModelParams) -> StepOutcome {
    let dt = buf.dt_hat;
    let m = buf.steps;
    let cur = *buf.samples.back().unwrap();
    let x = cur.state();
    let oldest = buf.samples[0];

    let k1 = match dde_rhs(&x, &oldest.state(), buf.tau_sum, buf.r_star, params) {
        Ok(k) => k,
        Err(_) => return StepOutcome::Singular,
    };
    let xp = x.axpy(dt, &k1);
    let rp = params.r(xp.p);
    if !(rp >= R_FLOOR) || !xp.is_finite() {
        return StepOutcome::Singular;
    }
    let ir_pred = buf.r_star / rp;
    let (delayed2, tau2) = if m == 0 {
        (xp, 0.0)
    } else {
        let dropped = 0.5 * dt * (oldest.inv_r + buf.samples[1].inv_r);
        (buf.samples[1].state(), buf.tau_sum - dropped + 0.5 * dt * (cur.inv_r + ir_pred))
    };
    let k2 = match dde_rhs(&xp, &delayed2, tau2, buf.r_star, params) {
        Ok(k) => k,
        Err(_) => return StepOutcome::Singular,
    };
    let next = x.axpy(0.5 * dt, &k1).axpy(0.5 * dt, &k2);
    if !next.is_finite() {
        return StepOutcome::Singular;
    }
    let r_next = params.r(next.p);
    if !(r_next >= R_FLOOR) {
        return StepOutcome::Singular;
    }
    let new = Sample::new(next.n, next.p, next.z, buf.r_star, params);

    buf.samples.push_back(new);
    if m > 0 {
        let old = buf.samples.pop_front().unwrap();
        buf.tau_sum += 0.5 * dt * (cur.inv_r + new.inv_r) - 0.5 * dt * (old.inv_r + buf.samples[0].inv_r);
    } else {
        buf.samples.pop_front();
    }
    buf.t += 0.5 * dt * (cur.inv_r + new.inv_r);
    buf.steps_taken += 1;
    buf.t_hat = buf.steps_taken as f64 * dt;
    if buf.steps_taken % TAU_RESYNC_STEPS == 0 {
        buf.resync_tau();
    }
    StepOutcome::Advanced
}

/// Integrate up to `horizon_hat` in transformed time, recording every step.
pub fn integrate(buffer: HistoryBuffer, params: &ModelParams, horizon_hat: f64) -> Result<Trajectory> {
    integrate_with(buffer, params, &SimOptions::new(horizon_hat))
}

pub fn integrate_with(mut buf: HistoryBuffer, params: &ModelParams, opts: &SimOptions) -> Result<Trajectory> {
    params.validate()?;
    if !(opts.horizon_hat >= 0.0) {
        return Err(Error::Domain {
            what: "horizon_hat",
            value: opts.horizon_hat,
            domain: "[0, inf)",
        });
    }
    let every = opts.record_every.max(1);
    let total_steps = (opts.horizon_hat / buf.dt_hat * (1.0 + 1e-12)).floor() as usize;
    let floor = EXTINCTION_FLOOR * params.n_total;

    let mut rows = Vec::with_capacity(total_steps / every + 2);
    rows.push(row(&mut buf, params));
    let mut termination = Termination::HorizonReached;
    for k in 1..=total_steps {
        match heun_step(&mut buf, params) {
            StepOutcome::Singular => {
                termination = Termination::SingularRate;
                break;
            }
            StepOutcome::Advanced => {}
        }
        let p = buf.samples.back().unwrap().p;
        if p < floor {
            rows.push(row(&mut buf, params));
            termination = Termination::Extinction;
            break;
        }
        if k % every == 0 || k == total_steps {
            rows.push(row(&mut buf, params));
        }
    }
    Ok(Trajectory {
        rows,
        prehistory: buf.prehistory.clone(),
        termination,
        dt_hat: buf.dt_hat,
        r_star: buf.r_star,
        steps_per_delay: buf.steps,
        record_every: every,
    })
}

/// Recompute the physical time column as the cumulative trapezoid of
/// `R*/R(P̂)` over the recorded rows.
pub fn to_physical_time(mut traj: Trajectory) -> Trajectory {
    let mut t = 0.0;
    let mut prev: Option<TrajectoryRow> = None;
    for r in traj.rows.iter_mut() {
        if let Some(p) = prev {
            t += 0.5 * (r.t_hat - p.t_hat) * (p.inv_r + r.inv_r);
        }
        prev = Some(*r);
        r.t = t;
    }
    traj
}

/// Physical-time series of `(t, N, P, Z)` including the history, with the
/// cumulative maturation integral `C(t) = ∫ R(P) dt`.
struct PhysicalSeries {
    t: Vec<f64>,
    n: Vec<f64>,
    p: Vec<f64>,
    z: Vec<f64>,
    cum_r: Vec<f64>,
    /// Index of the row at `t̂ = 0`.
    origin: usize,
}

impl PhysicalSeries {
    fn new(traj: &Trajectory, params: &ModelParams) -> Self {
        let n0 = traj.rows[0].n;
        let pre = &traj.prehistory[..traj.prehistory.len().saturating_sub(1)];
        let mut s = PhysicalSeries {
            t: Vec::new(),
            n: Vec::new(),
            p: Vec::new(),
            z: Vec::new(),
            cum_r: Vec::new(),
            origin: pre.len(),
        };
        for h in pre {
            s.t.push(h.t);
            s.n.push(n0);
            s.p.push(h.p);
            s.z.push(h.z);
        }
        for r in &traj.rows {
            s.t.push(r.t);
            s.n.push(r.n);
            s.p.push(r.p);
            s.z.push(r.z);
        }
        let mut c = 0.0;
        s.cum_r.push(0.0);
        for i in 1..s.t.len() {
            c += 0.5 * (s.t[i] - s.t[i - 1]) * (params.r(s.p[i]) + params.r(s.p[i - 1]));
            s.cum_r.push(c);
        }
        s
    }

    /// Time `t'` with `C(t_i) − C(t') = s`, located on the stored integral.
    fn threshold_time(&self, i: usize, s: f64) -> Option<f64> {
        let target = self.cum_r[i] - s;
        if target < self.cum_r[0] - 1e-12 * s.abs().max(1.0) {
            return None;
        }
        let j = self.cum_r[..=i].partition_point(|&c| c < target);
        if j == 0 {
            return Some(self.t[0]);
        }
        let (c0, c1) = (self.cum_r[j - 1], self.cum_r[j]);
        let w = if c1 > c0 { (target - c0) / (c1 - c0) } else { 1.0 };
        Some(self.t[j - 1] + w * (self.t[j] - self.t[j - 1]))
    }

    fn at(&self, col: &[f64], t: f64) -> f64 {
        interpolate(&self.t, col, t)
    }
}

/// Max over interior rows of the threshold-delay equations' residual, with
/// derivatives by centered differences on the physical grid, scaled by
/// `max(1, N_T)`. Rows within one delay (plus a step) of the start are
/// skipped since the solution is not smooth there.
pub fn tde_residual(traj: &Trajectory, params: &ModelParams) -> Result<f64> {
    let series = PhysicalSeries::new(traj, params);
    let dt = traj.dt_hat * traj.record_every as f64;
    let t_hat_min = traj.steps_per_delay as f64 * traj.dt_hat + 1.5 * dt;
    let first = traj.rows.iter().position(|r| r.t_hat > t_hat_min);
    let Some(first) = first.filter(|&f| f + 1 < traj.rows.len()) else {
        return Err(Error::InsufficientHistory {
            needed: traj.steps_per_delay + 3,
            available: traj.rows.len(),
        });
    };
    let mu = params.mu;
    let g = params.g;
    let gg = params.gamma * g;
    let mut worst: f64 = 0.0;
    for i in (series.origin + first)..(series.t.len() - 1) {
        let (t0, t1, t2) = (series.t[i - 1], series.t[i], series.t[i + 1]);
        let (h1, h2) = (t1 - t0, t2 - t1);
        let deriv = |y: &[f64]| {
            (h1 * h1 * y[i + 1] - h2 * h2 * y[i - 1] + (h2 * h2 - h1 * h1) * y[i]) / (h1 * h2 * (h1 + h2))
        };
        let (n, p, z) = (series.n[i], series.p[i], series.z[i]);
        let dn = -mu * p * params.f(n)
            + params.lambda * p
            + params.delta * z
            + (1.0 - params.gamma) * g * z * params.h(p)
            + params.delta0 * (params.n_total - n - p - z);
        let dp = mu * p * params.f(n) - params.lambda * p - g * z * params.h(p);
        let dz = if params.m == 0.0 {
            gg * z * params.h(p) - params.delta * z
        } else {
            let td = series.threshold_time(i, params.m).ok_or(Error::InsufficientHistory {
                needed: traj.steps_per_delay + 1,
                available: i,
            })?;
            let tau = t1 - td;
            let pd = series.at(&series.p, td);
            let zd = series.at(&series.z, td);
            params.r(p) * (-params.delta0 * tau).exp() * gg * zd * params.h(pd) / params.r(pd) - params.delta * z
        };
        let res = (deriv(&series.n) - dn)
            .abs()
            .max((deriv(&series.p) - dp).abs())
            .max((deriv(&series.z) - dz).abs());
        worst = worst.max(res);
    }
    Ok(worst / params.n_total.max(1.0))
}

/// Juvenile density `ρ(t, s)` for each `s` in `s_grid` at physical time `t`,
/// from the characteristic solution through the stored trajectory.
pub fn reconstruct_rho(traj: &Trajectory, t: f64, s_grid: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let series = PhysicalSeries::new(traj, params);
    let t_end = *series.t.last().unwrap();
    if !(t >= 0.0 && t <= t_end) {
        return Err(Error::OutOfRegion { t, s: 0.0 });
    }
    let c_t = params.r(series.at(&series.p, t));
    let i = series.t.partition_point(|&x| x < t).min(series.t.len() - 1);
    // C(t) by extending the stored integral from the neighbouring node.
    let c_at = if series.t[i] == t || i == 0 {
        series.cum_r[i]
    } else {
        let dt = t - series.t[i - 1];
        series.cum_r[i - 1] + 0.5 * dt * (params.r(series.p[i - 1]) + c_t)
    };
    let gg = params.gamma * params.g;
    s_grid
        .iter()
        .map(|&s| {
            if !(s >= 0.0 && s <= params.m) {
                return Err(Error::Domain {
                    what: "s",
                    value: s,
                    domain: "[0, m]",
                });
            }
            let target = c_at - s;
            if target < series.cum_r[0] - 1e-12 * params.m.max(1.0) {
                return Err(Error::OutOfRegion { t, s });
            }
            let j = series.cum_r.partition_point(|&c| c < target).max(1).min(series.t.len() - 1);
            let (c0, c1) = (series.cum_r[j - 1], series.cum_r[j]);
            let w = if c1 > c0 { ((target - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 1.0 };
            let td = series.t[j - 1] + w * (series.t[j] - series.t[j - 1]);
            let tau = t - td;
            let pd = series.at(&series.p, td);
            let zd = series.at(&series.z, td);
            Ok((-params.delta0 * tau).exp() * gg * zd * params.h(pd) / params.r(pd))
        })
        .collect()
}

/// Linear interpolation of `(N, P, Z)` at physical time `t`.
pub fn state_at(traj: &Trajectory, t: f64, params: &ModelParams) -> StateNPZ {
    let series = PhysicalSeries::new(traj, params);
    StateNPZ::new(
        series.at(&series.n, t),
        series.at(&series.p, t),
        series.at(&series.z, t),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome")]
pub enum DeltaDecay {
    /// Fitted `d ln|Δ| / dt` in 1/day.
    Decaying { rate: f64, samples: usize },
    /// `δ0 = 0`: the offset is conserved; `drift` is the largest change.
    Conserved { initial: f64, drift: f64 },
    /// No offset was applied; `max_abs` is the largest residual seen.
    Zero { max_abs: f64 },
}

/// Run with `N̂(0)` offset by `offset` and fit the decay of the conservation
/// defect `Δ` against physical time.
pub fn delta_decay_check(
    spec: &HistorySpec,
    params: &ModelParams,
    offset: f64,
    horizon_hat: f64,
    dt_hat: f64,
) -> Result<DeltaDecay> {
    let buf = build_initial_with_offset(spec, params, dt_hat, offset)?;
    let traj = integrate(buf, params, horizon_hat)?;
    let max_abs = traj.max_abs_cons_residual();
    if offset == 0.0 {
        return Ok(DeltaDecay::Zero { max_abs });
    }
    if params.delta0 == 0.0 {
        let drift = traj
            .rows
            .iter()
            .map(|r| (r.cons_residual - offset).abs())
            .fold(0.0, f64::max);
        return Ok(DeltaDecay::Conserved { initial: offset, drift });
    }
    let (mut st, mut sy, mut stt, mut sty, mut k) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for r in &traj.rows {
        let d = r.cons_residual;
        if d.signum() != offset.signum() || d.abs() < 1e-2 * offset.abs() {
            break;
        }
        let y = d.abs().ln();
        st += r.t;
        sy += y;
        stt += r.t * r.t;
        sty += r.t * y;
        k += 1;
    }
    if k < 3 {
        return Ok(DeltaDecay::Conserved {
            initial: offset,
            drift: max_abs,
        });
    }
    let kf = k as f64;
    let rate = (kf * sty - st * sy) / (kf * stt - st * st);
    Ok(DeltaDecay::Decaying { rate, samples: k })
}

/// Angular frequency (rad/day) from upward zero crossings of `P − mean(P)`
/// over the trailing `fraction` of the run, in physical time.
pub fn measure_frequency(traj: &Trajectory, fraction: f64) -> Option<f64> {
    let rows = &traj.rows;
    let start = ((1.0 - fraction.clamp(0.0, 1.0)) * rows.len() as f64) as usize;
    let tail = &rows[start.min(rows.len())..];
    if tail.len() < 3 {
        return None;
    }
    let mean = tail.iter().map(|r| r.p).sum::<f64>() / tail.len() as f64;
    let mut crossings = Vec::new();
    for w in tail.windows(2) {
        let (a, b) = (w[0].p - mean, w[1].p - mean);
        if a < 0.0 && b >= 0.0 {
            let frac = a / (a - b);
            crossings.push(w[0].t + frac * (w[1].t - w[0].t));
        }
    }
    if crossings.len() < 3 {
        return None;
    }
    let period = (crossings.last().unwrap() - crossings[0]) / (crossings.len() - 1) as f64;
    Some(2.0 * std::f64::consts::PI / period)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::{compute_nt1, solve_e2};
    use crate::model::ResponseKind;

    fn coexist() -> ModelParams {
        ModelParams::table1()
            .with_delta0(0.17)
            .with_m(6.0)
            .with_n_total(10f64.powf(0.49))
    }

    #[test]
    fn equilibrium_history_sets_n_star() {
        let p = coexist();
        let e2 = solve_e2(&p).unwrap();
        let buf = build_initial(
            &HistorySpec::ConstantAtEquilibrium { eps_p: 0.0, eps_z: 0.0 },
            &p,
            default_dt_hat(&p),
        )
        .unwrap();
        assert!((buf.current().n - e2.n_star).abs() <= 1e-9 * e2.n_star);
        assert_eq!(buf.steps_per_delay(), DEFAULT_STEPS_PER_DELAY);
    }

    #[test]
    fn empty_pool_without_predators() {
        let p = coexist();
        let buf = build_initial(&HistorySpec::ConstantValues { p0: 0.4, z0: 0.0 }, &p, default_dt_hat(&p)).unwrap();
        assert_eq!(buf.current().n, p.n_total - 0.4);
    }

    #[test]
    fn constant_history_gives_exact_delay() {
        let p = coexist();
        let p0 = 0.37;
        let buf = build_initial(&HistorySpec::ConstantValues { p0, z0: 0.2 }, &p, default_dt_hat(&p)).unwrap();
        let want = p.m / p.r(p0);
        assert!((buf.tau_running() - want).abs() <= 1e-12 * want);
        let first = buf.prehistory()[0];
        assert!((first.t + want).abs() <= 1e-12 * want);
    }

    #[test]
    fn infeasible_history_is_rejected() {
        let p = coexist();
        let r = build_initial(&HistorySpec::ConstantValues { p0: 3.0, z0: 3.0 }, &p, default_dt_hat(&p));
        assert!(matches!(r, Err(Error::InfeasibleBiomass { .. })));
        let r = build_initial(&HistorySpec::ConstantValues { p0: 0.0, z0: 0.1 }, &p, default_dt_hat(&p));
        assert!(matches!(r, Err(Error::InvalidHistory(_))));
        let r = build_initial(&HistorySpec::ConstantValues { p0: 0.1, z0: 0.1 }, &p, 0.7);
        assert!(r.is_err());
    }

    #[test]
    fn sampled_history_must_cover_delay() {
        let p = coexist();
        let dt = default_dt_hat(&p);
        let t_big = p.m / reference_rate(&p);
        let spec = HistorySpec::Sampled {
            t_hat: vec![-t_big * 0.5, 0.0],
            p: vec![0.2, 0.3],
            z: vec![0.1, 0.1],
        };
        assert!(matches!(build_initial(&spec, &p, dt), Err(Error::InvalidHistory(_))));
        let spec = HistorySpec::Sampled {
            t_hat: vec![-t_big, 0.0],
            p: vec![0.2, 0.3],
            z: vec![0.1, 0.1],
        };
        let buf = build_initial(&spec, &p, dt).unwrap();
        let first = buf.samples().next().unwrap();
        assert!((first.p - 0.2).abs() < 1e-12);
        assert!((buf.current().p - 0.3).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let p = coexist();
        let e2 = solve_e2(&p).unwrap();
        let buf = build_initial(
            &HistorySpec::ConstantAtEquilibrium { eps_p: 0.0, eps_z: 0.0 },
            &p,
            default_dt_hat(&p),
        )
        .unwrap();
        let traj = integrate(buf, &p, 1000.0).unwrap();
        let dev = traj
            .rows
            .iter()
            .map(|r| (r.n - e2.n_star).abs().max((r.p - e2.p_star).abs()).max((r.z - e2.z_star).abs()))
            .fold(0.0, f64::max);
        assert!(dev <= 1e-8 * p.n_total, "{dev}");
        assert!(tde_residual(&traj, &p).unwrap() <= 1e-8);
    }

    #[test]
    fn running_tau_matches_recomputation() {
        let p = coexist();
        let mut buf = build_initial(
            &HistorySpec::ConstantAtEquilibrium { eps_p: 0.2, eps_z: -0.1 },
            &p,
            default_dt_hat(&p),
        )
        .unwrap();
        for _ in 0..2500 {
            assert!(matches!(heun_step(&mut buf, &p), StepOutcome::Advanced));
            let (a, b) = (buf.tau_running(), buf.tau_recomputed());
            assert!((a - b).abs() <= 1e-12 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_rate_time_is_identity() {
        let p = coexist().with_growth(ResponseKind::Constant);
        let buf = build_initial(
            &HistorySpec::ConstantAtEquilibrium { eps_p: 0.1, eps_z: 0.0 },
            &p,
            default_dt_hat(&p),
        )
        .unwrap();
        let traj = to_physical_time(integrate(buf, &p, 50.0).unwrap());
        for r in &traj.rows {
            assert!((r.t - r.t_hat).abs() <= 1e-12 * r.t_hat.max(1.0));
            assert!((r.tau_m - p.m).abs() <= 1e-12 * p.m);
        }
    }

    #[test]
    fn physical_time_is_increasing_and_consistent() {
        let p = coexist();
        let buf = build_initial(
            &HistorySpec::ConstantAtEquilibrium { eps_p: 0.05, eps_z: 0.02 },
            &p,
            default_dt_hat(&p),
        )
        .unwrap();
        let traj = integrate(buf, &p, 100.0).unwrap();
        assert!(traj.rows.windows(2).all(|w| w[1].t > w[0].t));
        let again = to_physical_time(traj.clone());
        for (a, b) in traj.rows.iter().zip(&again.rows) {
            assert!((a.t - b.t).abs() <= 1e-10 * a.t.max(1.0));
        }
    }

    #[test]
    fn ode_case_runs_without_buffer() {
        let p = ModelParams::table1().with_n_total(0.3);
        let buf = build_initial(&HistorySpec::ConstantValues { p0: 0.05, z0: 0.05 }, &p, ODE_DEFAULT_DT).unwrap();
        assert_eq!(buf.steps_per_delay(), 0);
        let traj = integrate(buf, &p, 20.0).unwrap();
        assert_eq!(traj.termination, Termination::HorizonReached);
        assert!(traj.max_abs_cons_residual() < 1e-10);
    }

    #[test]
    fn rho_at_equilibrium_matches_spectrum() {
        let p = coexist();
        let e2 = solve_e2(&p).unwrap();
        let buf = build_initial(
            &HistorySpec::ConstantAtEquilibrium { eps_p: 0.0, eps_z: 0.0 },
            &p,
            default_dt_hat(&p),
        )
        .unwrap();
        let traj = integrate(buf, &p, 20.0).unwrap();
        let s_grid: Vec<f64> = (0..=20).map(|i| p.m * i as f64 / 20.0).collect();
        let rho = reconstruct_rho(&traj, 10.0, &s_grid, &p).unwrap();
        for (s, r) in s_grid.iter().zip(rho) {
            let want = crate::equilibria::equilibrium_spectrum(&e2, *s, &p).unwrap();
            assert!((r - want).abs() <= 1e-6 * want, "s = {s}: {r} vs {want}");
        }
        assert!(matches!(
            reconstruct_rho(&traj, -1.0, &s_grid, &p),
            Err(Error::OutOfRegion { .. })
        ));
    }

    #[test]
    fn rho_vanishes_without_predators() {
        let p = coexist();
        let buf = build_initial(&HistorySpec::ConstantValues { p0: 0.3, z0: 0.0 }, &p, default_dt_hat(&p)).unwrap();
        let traj = integrate(buf, &p, 30.0).unwrap();
        let t = 0.5 * traj.last().t;
        let rho = reconstruct_rho(&traj, t, &[0.0, 3.0, 6.0], &p).unwrap();
        assert!(rho.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn zero_offset_reports_zero() {
        let p = coexist();
        let spec = HistorySpec::ConstantAtEquilibrium { eps_p: 0.01, eps_z: 0.01 };
        let r = delta_decay_check(&spec, &p, 0.0, 50.0, default_dt_hat(&p)).unwrap();
        let DeltaDecay::Zero { max_abs } = r else {
            panic!("{r:?}");
        };
        assert!(max_abs < 1e-4, "{max_abs}");
    }

    #[test]
    fn extinction_terminates_at_floor() {
        let base = ModelParams::table1().with_m(2.0).with_growth(ResponseKind::Constant);
        let p = base.clone().with_n_total(compute_nt1(&base) * 0.5);
        let buf = build_initial(&HistorySpec::ConstantValues { p0: 2e-4, z0: 1e-4 }, &p, 0.02).unwrap();
        let traj = integrate_with(buf, &p, &SimOptions::new(20_000.0).record_every(50)).unwrap();
        assert_eq!(traj.termination, Termination::Extinction);
        let last = traj.last();
        assert!(last.p < EXTINCTION_FLOOR * p.n_total);
    }

    #[test]
    fn frequency_of_synthetic_sine() {
        let rows: Vec<TrajectoryRow> = (0..20_000)
            .map(|i| {
                let t = i as f64 * 0.01;
                TrajectoryRow {
                    t_hat: t,
                    t,
                    n: 0.0,
                    p: 1.0 + 0.1 * (0.7 * t + 0.3).sin(),
                    z: 0.0,
                    tau_m: 0.0,
                    cons_residual: 0.0,
                    inv_r: 1.0,
                }
            })
            .collect();
        let traj = Trajectory {
            rows,
            prehistory: vec![],
            termination: Termination::HorizonReached,
            dt_hat: 0.01,
            r_star: 1.0,
            steps_per_delay: 0,
            record_every: 1,
        };
        let w = measure_frequency(&traj, 0.5).unwrap();
        assert!((w - 0.7).abs() < 1e-3, "{w}");
    }
}

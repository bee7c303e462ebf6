//! Model parameters, functional responses and the right-hand sides of the
//! fixed-delay (transformed-time) form of the NPZ model.
//!
//! Biomass pools are in μM nitrogen, time in days and maturity in
//! dimensionless units. Both growth-rate variants saturate at `R∞ = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Saturation limit of the juvenile growth rate for both variants.
pub const R_INFINITY: f64 = 1.0;

/// Growth rates below this value are treated as the boundary of the phase
/// space where the time transform breaks down.
pub const R_FLOOR: f64 = 1e-14;

/// Juvenile growth-rate response `R(P)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseKind {
    /// `R(P) = P / (P + l)`.
    MichaelisMenten { l: f64 },
    /// `R(P) = 1`.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Phytoplankton maximum uptake rate (1/day).
    pub mu: f64,
    /// Phytoplankton mortality (1/day).
    pub lambda: f64,
    /// Zooplankton maximum grazing rate (1/day).
    pub g: f64,
    /// Grazing efficiency, in (0, 1].
    pub gamma: f64,
    /// Mature zooplankton mortality (1/day).
    pub delta: f64,
    /// Juvenile mortality (1/day).
    pub delta0: f64,
    /// Nutrient half-saturation (μM).
    pub k: f64,
    /// Grazing half-saturation (μM).
    pub kk: f64,
    pub growth: ResponseKind,
    /// Maturity required to enter the adult class.
    pub m: f64,
    /// Total biomass N_T (μM).
    pub n_total: f64,
    /// Reference growth rate R* for the time transform. `None` selects the
    /// rate at the dominant equilibrium, see [`crate::equilibria::reference_rate`].
    pub r_star: Option<f64>,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::table1()
    }
}

impl ModelParams {
    /// Literature values for the closed NPZ system, with `δ0 = 0`,
    /// `R(P) = P/(P + 0.159)`, `m = 0` and `N_T = 1`.
    pub fn table1() -> Self {
        Self {
            mu: 5.9,
            lambda: 0.017,
            g: 7.0,
            gamma: 0.7,
            delta: 0.17,
            delta0: 0.0,
            k: 1.0,
            kk: 1.0,
            growth: ResponseKind::MichaelisMenten { l: 0.159 },
            m: 0.0,
            n_total: 1.0,
            r_star: None,
        }
    }

    pub fn with_m(mut self, m: f64) -> Self {
        self.m = m;
        self
    }

    pub fn with_n_total(mut self, n_total: f64) -> Self {
        self.n_total = n_total;
        self
    }

    pub fn with_delta0(mut self, delta0: f64) -> Self {
        self.delta0 = delta0;
        self
    }

    pub fn with_growth(mut self, growth: ResponseKind) -> Self {
        self.growth = growth;
        self
    }

    pub fn with_r_star(mut self, r_star: f64) -> Self {
        self.r_star = Some(r_star);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu", self.mu),
            ("lambda", self.lambda),
            ("g", self.g),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("k", self.k),
            ("kk", self.kk),
            ("n_total", self.n_total),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.delta0.is_finite() && self.delta0 >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "delta0 must be nonnegative, got {}",
                self.delta0
            )));
        }
        if !(self.m.is_finite() && self.m >= 0.0) {
            return Err(Error::InvalidParams(format!("m must be nonnegative, got {}", self.m)));
        }
        if self.gamma > 1.0 {
            return Err(Error::InvalidParams(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.mu <= self.lambda {
            return Err(Error::InvalidParams(format!(
                "need mu > lambda for phytoplankton growth (mu = {}, lambda = {})",
                self.mu, self.lambda
            )));
        }
        if self.gamma * self.g <= self.delta {
            return Err(Error::InvalidParams(format!(
                "need gamma*g > delta for zooplankton growth (gamma*g = {}, delta = {})",
                self.gamma * self.g,
                self.delta
            )));
        }
        if let ResponseKind::MichaelisMenten { l } = self.growth {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidParams(format!("l must be positive, got {l}")));
            }
        }
        if let Some(r) = self.r_star {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidParams(format!("r_star must be positive, got {r}")));
            }
        }
        Ok(())
    }

    // Unchecked response evaluations for internal hot paths.

    #[inline]
    pub(crate) fn f(&self, n: f64) -> f64 {
        n / (n + self.k)
    }

    #[inline]
    pub(crate) fn df(&self, n: f64) -> f64 {
        self.k / ((n + self.k) * (n + self.k))
    }

    #[inline]
    pub(crate) fn h(&self, p: f64) -> f64 {
        p / (p + self.kk)
    }

    #[inline]
    pub(crate) fn dh(&self, p: f64) -> f64 {
        self.kk / ((p + self.kk) * (p + self.kk))
    }

    #[inline]
    pub(crate) fn r(&self, p: f64) -> f64 {
        match self.growth {
            ResponseKind::Constant => 1.0,
            ResponseKind::MichaelisMenten { l } => p / (p + l),
        }
    }

    #[inline]
    pub(crate) fn dr(&self, p: f64) -> f64 {
        match self.growth {
            ResponseKind::Constant => 0.0,
            ResponseKind::MichaelisMenten { l } => l / ((p + l) * (p + l)),
        }
    }

    /// Nutrient uptake response `f(N) = N/(N + k)`.
    pub fn f_uptake(&self, n: f64) -> Result<f64> {
        check_nonneg("N", n)?;
        Ok(self.f(n))
    }

    pub fn f_uptake_prime(&self, n: f64) -> Result<f64> {
        check_nonneg("N", n)?;
        Ok(self.df(n))
    }

    /// Grazing response `h(P) = P/(P + K)`.
    pub fn h_grazing(&self, p: f64) -> Result<f64> {
        check_nonneg("P", p)?;
        Ok(self.h(p))
    }

    pub fn h_grazing_prime(&self, p: f64) -> Result<f64> {
        check_nonneg("P", p)?;
        Ok(self.dh(p))
    }

    /// Juvenile growth rate `R(P)` in maturity units per day.
    pub fn r_growth(&self, p: f64) -> Result<f64> {
        check_nonneg("P", p)?;
        Ok(self.r(p))
    }

    pub fn r_growth_prime(&self, p: f64) -> Result<f64> {
        check_nonneg("P", p)?;
        Ok(self.dr(p))
    }

    /// Inverse of the uptake response, `k y / (1 - y)` for `y ∈ (0, 1)`.
    pub fn f_inverse(&self, y: f64) -> Result<f64> {
        check_unit_open("y", y)?;
        Ok(self.k * y / (1.0 - y))
    }

    /// Inverse of the grazing response, `K y / (1 - y)` for `y ∈ (0, 1)`.
    pub fn h_inverse(&self, y: f64) -> Result<f64> {
        check_unit_open("y", y)?;
        Ok(self.kk * y / (1.0 - y))
    }

    /// Ratio `h(P)/R(P)`, continuous at `P = 0` where it tends to `l/K`
    /// for the saturating growth rate.
    pub fn h_over_r(&self, p: f64) -> Result<f64> {
        check_nonneg("P", p)?;
        Ok(match self.growth {
            ResponseKind::Constant => self.h(p),
            ResponseKind::MichaelisMenten { l } => (p + l) / (p + self.kk),
        })
    }

    /// `(1 - e^{-δ0 x}) / δ0`, equal to `x` when `δ0 = 0`.
    pub(crate) fn survival_integral(&self, x: f64) -> f64 {
        if self.delta0 == 0.0 {
            x
        } else {
            -(-self.delta0 * x).exp_m1() / self.delta0
        }
    }
}

fn check_nonneg(what: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            what,
            value: v,
            domain: "[0, inf)",
        })
    }
}

fn check_unit_open(what: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            what,
            value: v,
            domain: "(0, 1)",
        })
    }
}

/// Nutrient, phytoplankton and mature zooplankton. Also used for their rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateNPZ {
    pub n: f64,
    pub p: f64,
    pub z: f64,
}

impl StateNPZ {
    pub fn new(n: f64, p: f64, z: f64) -> Self {
        Self { n, p, z }
    }

    pub fn is_finite(&self) -> bool {
        self.n.is_finite() && self.p.is_finite() && self.z.is_finite()
    }

    pub fn sum(&self) -> f64 {
        self.n + self.p + self.z
    }

    pub fn max_abs(&self) -> f64 {
        self.n.abs().max(self.p.abs()).max(self.z.abs())
    }

    /// `self + scale * other`.
    pub fn axpy(&self, scale: f64, other: &StateNPZ) -> StateNPZ {
        StateNPZ {
            n: self.n + scale * other.n,
            p: self.p + scale * other.p,
            z: self.z + scale * other.z,
        }
    }
}

/// Transformed-time right-hand side of the fixed-delay model.
///
/// `delayed` is the state one delay `T = m/R*` earlier and `tau_hat_m` the
/// physical maturation time accumulated over that window. Only the `p` and
/// `z` components of `delayed` enter.
pub fn dde_rhs(
    current: &StateNPZ,
    delayed: &StateNPZ,
    tau_hat_m: f64,
    r_star: f64,
    params: &ModelParams,
) -> Result<StateNPZ> {
    let r_now = params.r(current.p);
    if !(r_now >= R_FLOOR) {
        return Err(Error::SingularRate {
            p: current.p,
            rate: r_now,
        });
    }
    let r_del = params.r(delayed.p);
    if !(r_del >= R_FLOOR) {
        return Err(Error::SingularRate {
            p: delayed.p,
            rate: r_del,
        });
    }
    let inv_now = r_star / r_now;
    let inv_del = r_star / r_del;
    let (n, p, z) = (current.n, current.p, current.z);
    let uptake = params.mu * p * params.f(n);
    let grazing = params.g * z * params.h(p);

    let dn = -uptake
        + params.lambda * p
        + params.delta * z
        + (1.0 - params.gamma) * grazing
        + params.delta0 * (params.n_total - n - p - z);
    let dp = uptake - params.lambda * p - grazing;
    let births = params.gamma * params.g * (-params.delta0 * tau_hat_m).exp()
        * inv_del
        * delayed.z
        * params.h(delayed.p);

    Ok(StateNPZ {
        n: inv_now * dn,
        p: inv_now * dp,
        z: births - inv_now * params.delta * z,
    })
}

/// One node of a uniform transformed-time grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub n: f64,
    pub p: f64,
    pub z: f64,
    /// `R*/R(p)`, the local rate of physical time per unit transformed time.
    pub inv_r: f64,
}

impl Sample {
    pub fn new(n: f64, p: f64, z: f64, r_star: f64, params: &ModelParams) -> Self {
        Self {
            n,
            p,
            z,
            inv_r: r_star / params.r(p),
        }
    }

    pub fn state(&self) -> StateNPZ {
        StateNPZ::new(self.n, self.p, self.z)
    }
}

/// Number of grid steps spanning the delay `T = m/R*`, or an error when
/// `T/dt` is not (numerically) an integer.
pub fn steps_per_delay(m: f64, r_star: f64, dt: f64) -> Result<usize> {
    if m == 0.0 {
        return Ok(0);
    }
    let ratio = m / r_star / dt;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-8 * ratio.max(1.0) {
        return Err(Error::InvalidHistory(format!(
            "step {dt} does not divide the delay {} (ratio {ratio})",
            m / r_star
        )));
    }
    Ok(rounded as usize)
}

/// Biomass held in the juvenile pool over the last `steps + 1` samples
/// (newest last).
///
/// The survival time `τ̂(s)` is accumulated from the newest sample backwards by
/// trapezoid. On each panel the weight `γ g z h(p) R*/R(p)` is linear and the
/// survival factor `e^{-δ0 τ̂}` is integrated exactly against it, so the rule
/// reduces to the trapezoid when `δ0 = 0` and is exact for constant histories.
pub fn juvenile_pool(window: &[Sample], steps: usize, dt: f64, params: &ModelParams) -> Result<f64> {
    if steps == 0 {
        return Ok(0.0);
    }
    if window.len() < steps + 1 {
        return Err(Error::InsufficientHistory {
            needed: steps + 1,
            available: window.len(),
        });
    }
    let w = &window[window.len() - steps - 1..];
    let coef = params.gamma * params.g;
    let weight = |s: &Sample| coef * s.z * params.h(s.p) * s.inv_r;
    let mut tau_newer = 0.0;
    let mut total = 0.0;
    for j in (0..steps).rev() {
        let (older, newer) = (&w[j], &w[j + 1]);
        let tau_older = tau_newer + 0.5 * dt * (older.inv_r + newer.inv_r);
        let kappa = params.delta0 * (tau_older - tau_newer);
        let (phi1, phi2) = exp_moments(kappa);
        let (wn, wo) = (weight(newer), weight(older));
        total += (-params.delta0 * tau_newer).exp() * dt * (wn * phi1 + (wo - wn) * phi2);
        tau_newer = tau_older;
    }
    Ok(total)
}

/// `∫_0^1 e^{-κu} du` and `∫_0^1 u e^{-κu} du`.
fn exp_moments(kappa: f64) -> (f64, f64) {
    if kappa.abs() < 1e-3 {
        let k = kappa;
        (
            1.0 - k / 2.0 + k * k / 6.0 - k * k * k / 24.0,
            0.5 - k / 3.0 + k * k / 8.0 - k * k * k / 30.0,
        )
    } else {
        let e = (-kappa).exp();
        ((1.0 - e) / kappa, (1.0 - (1.0 + kappa) * e) / (kappa * kappa))
    }
}

/// Total biomass `N + P + Z + ∫ρ ds` at the newest sample of `window`.
pub fn conservation_value(
    window: &[Sample],
    dt: f64,
    r_star: f64,
    params: &ModelParams,
) -> Result<f64> {
    let steps = steps_per_delay(params.m, r_star, dt)?;
    let last = window.last().ok_or(Error::InsufficientHistory {
        needed: steps + 1,
        available: 0,
    })?;
    Ok(last.n + last.p + last.z + juvenile_pool(window, steps, dt, params)?)
}

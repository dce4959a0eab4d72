//! Fluctuation identities expressed through scale functions.

use crate::error::{Error, Result};
use crate::model::LevyModel;
use crate::quad;
use crate::scale::ScaleEvaluator;

/// Below this gap `beta` is treated as equal to `Phi(q)`.
const PHI_GAP_LIMIT: f64 = 1e-8;
/// Below this gap the difference quotient `(q - psi(beta)) / (Phi(q) - beta)`
/// is replaced by its Taylor series.
const PHI_GAP_SERIES: f64 = 1e-4;

pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub(crate) fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Kernel `K(u, x)` of an excursion functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `K(u, x) = e^{-alpha u + beta x}`.
    Separable { alpha: f64, beta: f64 },
    /// `K(u, x) = 1{u in (u1, u2], x in (x1, x2]}` with `0 <= u1`, `0 <= x1`.
    Indicator { u1: f64, u2: f64, x1: f64, x2: f64 },
}

impl Kernel {
    pub fn eval(&self, u: f64, x: f64) -> f64 {
        match *self {
            Kernel::Separable { alpha, beta } => (-alpha * u + beta * x).exp(),
            Kernel::Indicator { u1, u2, x1, x2 } => {
                if u > u1 && u <= u2 && x > x1 && x <= x2 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Outcome of a Richardson extrapolation of the excursion-entrance limit.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitEstimate {
    pub value: f64,
    pub samples: Vec<(f64, f64)>,
    pub change: f64,
}

/// Check `(u, x)` lies in the state space of `(U, X)`: `x <= 0` forces
/// `u = 0`. The boundary points `(0, x)` with `x > 0` are accepted and mean
/// a fresh excursion started at `x`.
pub fn check_state(u: f64, x: f64) -> Result<()> {
    if !(u.is_finite() && x.is_finite()) {
        return Err(Error::domain("state must be finite"));
    }
    if u < 0.0 {
        return Err(Error::domain(format!("excursion age must be nonnegative, got {u}")));
    }
    if x <= 0.0 && u != 0.0 {
        return Err(Error::domain(format!(
            "state (u, x) = ({u}, {x}) is outside E: u must be 0 when x <= 0"
        )));
    }
    Ok(())
}

/// Model, discount rate and the scale function at that rate.
#[derive(Debug, Clone)]
pub struct IdentityContext {
    ev: ScaleEvaluator,
}

impl IdentityContext {
    pub fn new(model: &LevyModel, q: f64) -> Result<Self> {
        model.validate()?;
        Ok(IdentityContext {
            ev: ScaleEvaluator::new(model, q)?,
        })
    }

    pub fn from_evaluator(ev: ScaleEvaluator) -> Self {
        IdentityContext { ev }
    }

    pub fn model(&self) -> &LevyModel {
        self.ev.model()
    }

    pub fn q(&self) -> f64 {
        self.ev.q()
    }

    pub fn phi(&self) -> f64 {
        self.ev.phi()
    }

    pub fn psi_prime_at_phi(&self) -> f64 {
        self.ev.psi_prime_at_phi()
    }

    pub fn phi_prime(&self) -> f64 {
        self.ev.phi_prime()
    }

    pub fn scale(&self) -> &ScaleEvaluator {
        &self.ev
    }

    /// Evaluator at order `q + alpha`, reusing this one when `alpha = 0`.
    fn shifted(&self, alpha: f64) -> Result<ScaleEvaluator> {
        if alpha == 0.0 {
            return Ok(self.ev.clone());
        }
        let r = self.q() + alpha;
        if !(r >= 0.0) {
            return Err(Error::domain(format!("scale function order q + alpha = {r} is negative")));
        }
        ScaleEvaluator::new(self.model(), r)
    }

    /// `E(e^{-q tau_a^+}; tau_a^+ < inf) = e^{-Phi(q) a}`.
    pub fn first_passage_up_lt(&self, a: f64) -> Result<f64> {
        if !(a >= 0.0) {
            return Err(Error::domain(format!("first passage level must be positive, got {a}")));
        }
        Ok((-self.phi() * a).exp())
    }

    /// `(q - psi(beta)) / (Phi(q) - beta)`; the limiting value `psi'(Phi(q))`
    /// near the removable singularity.
    fn difference_quotient(&self, beta: f64) -> f64 {
        let m = self.model();
        let phi = self.phi();
        let delta = phi - beta;
        if delta.abs() < PHI_GAP_SERIES {
            m.psi_derivative(phi, 1) - m.psi_derivative(phi, 2) * delta / 2.0
                + m.psi_derivative(phi, 3) * delta * delta / 6.0
        } else {
            (self.q() - m.psi_unchecked(beta)) / delta
        }
    }

    /// The function `I^(q, beta)(x)`.
    pub fn i_func(&self, beta: f64, x: f64) -> Result<f64> {
        if !(beta >= 0.0) {
            return Err(Error::domain(format!("beta must be nonnegative, got {beta}")));
        }
        if x < 0.0 {
            return Ok(1.0);
        }
        let phi = self.phi();
        let q = self.q();
        let delta = phi - beta;
        let pp = self.phi_prime();
        if delta.abs() < PHI_GAP_LIMIT {
            if pp.is_finite() && x > 0.0 {
                return Ok(self.psi_prime_at_phi() * self.ev.tail(x)?);
            }
            return Ok(1.0 - self.psi_prime_at_phi() * self.ev.w_tilted(x)?);
        }
        let gap = q - self.model().psi_unchecked(beta);
        if !(gap > 0.0) || delta < 0.0 {
            return Err(Error::domain(format!(
                "I^(q,beta) needs q > psi(beta) or beta = Phi(q): q = {q}, beta = {beta}, psi(beta) = {}",
                self.model().psi_unchecked(beta)
            )));
        }
        let ratio = self.difference_quotient(beta);
        let gap = if delta.abs() < PHI_GAP_SERIES { ratio * delta } else { gap };
        if x > 0.0 && delta * x > 2.0 {
            // e^{(Phi-beta)x} growth cancels in the direct form; use
            // I = gap int_x^inf e^{delta y} tail(y) dy + ratio e^{delta x} tail(x)
            if let Some(ti) = self.ev.tail_integral(delta, x) {
                return Ok(gap * ti + ratio * (delta * x).exp() * self.ev.tail(x)?);
            }
        }
        Ok(1.0 + gap * self.ev.integral(beta, x)? - ratio * (-beta * x).exp() * self.ev.w(x)?)
    }

    /// `E_x(e^{-q tau_0^- + beta X_{tau_0^-}}; tau_0^- < inf) = e^{beta x} I^(q,beta)(x)`.
    pub fn down_crossing_joint_lt(&self, beta: f64, x: f64) -> Result<f64> {
        Ok((beta * x).exp() * self.i_func(beta, x)?)
    }

    /// `e^{-Phi s} W(z + s) - W(z)` for `z >= 0`, written as
    /// `e^{Phi z} (tail(z) - tail(z + s))` when the tail is available.
    fn shifted_difference(&self, z: f64, s: f64) -> Result<f64> {
        let phi = self.phi();
        if self.phi_prime().is_finite() && z > 0.0 {
            Ok((phi * z).exp() * (self.ev.tail(z)? - self.ev.tail(z + s)?))
        } else {
            Ok((-phi * s).exp() * self.ev.w(z + s)? - self.ev.w(z)?)
        }
    }

    /// q-potential density of `X` killed on leaving `(-inf, a]`.
    pub fn potential_density_upper(&self, a: f64, x: f64, y: f64) -> Result<f64> {
        if x > a || y > a {
            return Err(Error::domain(format!("need x, y <= a: a = {a}, x = {x}, y = {y}")));
        }
        if !(self.q() > 0.0) {
            return Err(Error::domain("potential density needs q > 0"));
        }
        if x >= y {
            return self.shifted_difference(x - y, a - x);
        }
        Ok((-self.phi() * (a - x)).exp() * self.ev.w(a - y)?)
    }

    /// q-potential density of `X` killed on leaving `[0, inf)`.
    pub fn potential_density_positive(&self, x: f64, y: f64) -> Result<f64> {
        if x < 0.0 || y < 0.0 {
            return Err(Error::domain(format!("need x, y >= 0: x = {x}, y = {y}")));
        }
        if !(self.q() > 0.0) {
            return Err(Error::domain("potential density needs q > 0"));
        }
        if x >= y {
            return self.shifted_difference(x - y, y);
        }
        Ok((-self.phi() * y).exp() * self.ev.w(x)?)
    }

    /// `Phi'(q) e^{Phi(q)(x-y)} - W^(q)(x - y)`.
    pub fn resolvent_density(&self, x: f64, y: f64) -> Result<f64> {
        if !(self.q() > 0.0) {
            return Err(Error::domain("resolvent density needs q > 0"));
        }
        let z = x - y;
        let pp = self.phi_prime();
        if z < 0.0 {
            return Ok(pp * (self.phi() * z).exp());
        }
        if z == 0.0 {
            return Ok(pp - self.ev.w_at_zero());
        }
        Ok((self.phi() * z).exp() * self.ev.tail(z)?)
    }

    fn check_joint_domain(&self, alpha: f64, beta: f64) -> Result<f64> {
        let q = self.q();
        if !(q > 0.0) {
            return Err(Error::domain("joint transform needs q > 0"));
        }
        if !(beta >= 0.0) {
            return Err(Error::domain("beta must be nonnegative"));
        }
        let p = self.model().psi_unchecked(beta);
        if !(q > p && q + alpha > p) {
            return Err(Error::domain(format!(
                "need q > psi(beta) v (psi(beta) - alpha): q = {q}, alpha = {alpha}, psi(beta) = {p}"
            )));
        }
        if !(q + alpha > 0.0) {
            return Err(Error::domain(format!("need q + alpha > 0, got {}", q + alpha)));
        }
        Ok(p)
    }

    /// `E_{u,x}(e^{-alpha U_{e_q} + beta X_{e_q}})`.
    pub fn joint_lt_u_x(&self, alpha: f64, beta: f64, u: f64, x: f64) -> Result<f64> {
        let psib = self.check_joint_domain(alpha, beta)?;
        check_state(u, x)?;
        let q = self.q();
        let ev_a = self.shifted(alpha)?;
        let phi = self.phi();
        let phi_a = ev_a.phi();
        let eau = (-alpha * u).exp();
        let t1 = q * (beta * x).exp() / (q - psib);
        let t2 = (phi * x).exp() * self.phi_prime() * (q / (phi_a - beta) - q / (phi - beta));
        let (t3, t4) = if x < 0.0 {
            (0.0, 0.0)
        } else {
            let int = if alpha == 0.0 {
                0.0
            } else {
                self.ev.integral(beta, x)? - eau * ev_a.integral(beta, x)?
            };
            let t3 = (beta * x).exp() * q * int;
            let t4 = q / (phi_a - beta) * (eau * ev_a.w(x)? - self.ev.w(x)?);
            (t3, t4)
        };
        Ok(t1 + t2 + t3 + t4)
    }

    /// `K^+(u, x) = E_x int_0^{tau_0^-} e^{-qr} K(u + r, X_r) dr`.
    pub fn k_plus(&self, k: &Kernel, u: f64, x: f64) -> Result<f64> {
        match *k {
            Kernel::Separable { alpha, beta } => {
                self.check_joint_domain(alpha, beta)?;
                if x < 0.0 {
                    return Ok(0.0);
                }
                let ev_a = self.shifted(alpha)?;
                let eau = (-alpha * u).exp();
                Ok(eau * ev_a.w(x)? / (ev_a.phi() - beta)
                    - eau * (beta * x).exp() * ev_a.integral(beta, x)?)
            }
            Kernel::Indicator { u1, u2, x1, x2 } => {
                let bm = self.brownian_params()?;
                if !(u1 >= 0.0 && u2 > u1 && x1 >= 0.0 && x2 > x1) {
                    return Err(Error::domain(
                        "indicator kernel needs 0 <= u1 < u2 and 0 <= x1 < x2",
                    ));
                }
                if x <= 0.0 {
                    return Ok(0.0);
                }
                let lo = (u1 - u).max(0.0);
                let hi = u2 - u;
                if hi <= lo {
                    return Ok(0.0);
                }
                let q = self.q();
                let f = |r: f64| (-q * r).exp() * bm.killed_mass(r, x, x1, x2);
                quad::integrate_with(
                    f,
                    lo,
                    hi,
                    quad::QuadOptions {
                        abs_tol: 1e-16,
                        rel_tol: 1e-11,
                        max_panels: 4000,
                    },
                )
            }
        }
    }

    /// `K^-(x) = E_x int_0^{tau_0^+} e^{-qr} K(0, X_r) dr`, exposed for tests
    /// of the alternative limit representation. Only the separable kernel
    /// has a closed form here.
    pub fn k_minus(&self, k: &Kernel, x: f64) -> Result<f64> {
        match *k {
            Kernel::Separable { beta, .. } => {
                if x > 0.0 {
                    return Ok(0.0);
                }
                let f = |y: f64| {
                    (beta * y).exp() * self.potential_density_upper(0.0, x, y).unwrap_or(f64::NAN)
                };
                let v = self.integrate_below_zero(f, x)?;
                if v.is_nan() {
                    return Err(Error::numeric("k_minus", "density evaluation failed"));
                }
                Ok(v)
            }
            Kernel::Indicator { u1, .. } => {
                if u1 >= 0.0 {
                    Ok(0.0)
                } else {
                    Err(Error::unsupported("indicator kernel with mass at u = 0"))
                }
            }
        }
    }

    /// `int_{-inf}^0 f(y) dy` with a split at `kink` (if negative).
    fn integrate_below_zero<F: Fn(f64) -> f64>(&self, f: F, kink: f64) -> Result<f64> {
        let width = 1.0 / self.phi().max(0.5);
        if kink < 0.0 {
            let a = quad::integrate(&f, kink, 0.0)?;
            let b = quad::integrate_from_neg_infinity(&f, kink, width)?;
            Ok(a + b)
        } else {
            quad::integrate_from_neg_infinity(&f, 0.0, width)
        }
    }

    /// `lim_{e -> 0} K^+(0, e) / (psi'(Phi(q)+) W^(q)(e))`.
    pub fn entrance_limit(&self, k: &Kernel) -> Result<LimitEstimate> {
        match *k {
            Kernel::Separable { alpha, beta } => {
                self.check_joint_domain(alpha, beta)?;
                let ev_a = self.shifted(alpha)?;
                let v = self.phi_prime() / (ev_a.phi() - beta);
                Ok(LimitEstimate {
                    value: v,
                    samples: vec![],
                    change: 0.0,
                })
            }
            Kernel::Indicator { .. } => {
                let dp = self.psi_prime_at_phi();
                let f = |e: f64| -> Result<f64> { Ok(self.k_plus(k, 0.0, e)? / (dp * self.ev.w(e)?)) };
                let eps = [1e-2, 1e-3, 1e-4];
                let vals = eps.iter().map(|&e| f(e)).collect::<Result<Vec<_>>>()?;
                // leading error is linear in e; the step ratio is 10
                let r1 = (10.0 * vals[1] - vals[0]) / 9.0;
                let r2 = (10.0 * vals[2] - vals[1]) / 9.0;
                let change = (r2 - r1).abs();
                if !(change < 1e-4 * r2.abs().max(1.0)) {
                    return Err(Error::numeric(
                        "richardson",
                        format!("entrance limit did not settle: {vals:?} -> ({r1}, {r2})"),
                    ));
                }
                Ok(LimitEstimate {
                    value: r2,
                    samples: eps.iter().copied().zip(vals).collect(),
                    change,
                })
            }
        }
    }

    /// `E_{u,x} int_0^inf e^{-qr} K(U_r, X_r) dr`.
    pub fn functional_formula(&self, k: &Kernel, u: f64, x: f64) -> Result<f64> {
        check_state(u, x)?;
        if !(self.q() > 0.0) {
            return Err(Error::domain("functional formula needs q > 0"));
        }
        let kp = self.k_plus(k, u, x)?;
        let middle = match *k {
            Kernel::Indicator { u1, .. } if u1 >= 0.0 => 0.0,
            _ => {
                let f = |y: f64| {
                    let kv = k.eval(0.0, y);
                    if kv == 0.0 {
                        0.0
                    } else {
                        kv * self.resolvent_density(x, y).unwrap_or(f64::NAN)
                    }
                };
                let v = self.integrate_below_zero(f, x)?;
                if v.is_nan() {
                    return Err(Error::numeric("functional_formula", "resolvent evaluation failed"));
                }
                v
            }
        };
        let lim = self.entrance_limit(k)?;
        let weight = (self.phi() * x).exp() * self.i_func(self.phi(), x)?;
        Ok(kp + middle + weight * lim.value)
    }

    fn brownian_params(&self) -> Result<BrownianParams> {
        let m = self.model();
        if !m.is_brownian() {
            return Err(Error::unsupported(
                "transition densities are only available in closed form for Brownian motion",
            ));
        }
        Ok(BrownianParams {
            drift: -m.mu(),
            sigma: m.sigma(),
        })
    }

    /// Density of the q-potential measure of `(U, X)` at `(v, y)`, `v, y > 0`.
    pub fn potential_density_ux(&self, u: f64, x: f64, v: f64, y: f64) -> Result<f64> {
        check_state(u, x)?;
        if !(v > 0.0 && y > 0.0) {
            return Err(Error::domain("potential density of (U, X) needs v, y > 0"));
        }
        if !(self.q() > 0.0) {
            return Err(Error::domain("potential density needs q > 0"));
        }
        let bm = self.brownian_params()?;
        let q = self.q();
        let first = if v > u && x > 0.0 {
            (-q * (v - u)).exp() * bm.killed_density(v - u, x, y)
        } else {
            0.0
        };
        let coef = self.phi_prime() * (self.phi() * x).exp() - self.ev.w(x)?;
        let second = coef * (y / v) * (-q * v).exp() * bm.free_density(v, y);
        Ok(first + second)
    }

    /// `E_x(e^{-theta g_{e_q}})`.
    pub fn g_laplace_at_exp(&self, theta: f64, x: f64) -> Result<f64> {
        let q = self.q();
        if !(q > 0.0) || !(theta >= 0.0) {
            return Err(Error::domain("need q > 0 and theta >= 0"));
        }
        if theta == 0.0 {
            return Ok(1.0);
        }
        let outer = IdentityContext::new(self.model(), q + theta)?;
        let inner = outer.joint_lt_u_x(-theta, 0.0, 0.0, x)?;
        Ok(q / (q + theta) * inner)
    }

    fn require_positive_mean(&self) -> Result<f64> {
        let m = self.model().mean();
        if !(m > 0.0) {
            return Err(Error::domain(format!(
                "prediction gain needs psi'(0+) > 0 (g finite), got {m}"
            )));
        }
        if self.q() != 0.0 {
            return Err(Error::domain("prediction gain is defined with a q = 0 context"));
        }
        Ok(m)
    }

    /// `G(u, x) = P_x(g = 0) - P_x(g > 0) = 2 psi'(0+) W(x) - 1` for the
    /// linear penalty; `W(0) = 1/d` keeps the finite-variation value at 0.
    pub fn prediction_gain(&self, _u: f64, x: f64) -> Result<f64> {
        let m = self.require_positive_mean()?;
        if x < 0.0 {
            return Ok(-1.0);
        }
        Ok(2.0 * m * self.ev.w(x)? - 1.0)
    }

    /// Smallest `x >= 0` with `G(u, x) >= 0`.
    pub fn prediction_threshold(&self) -> Result<f64> {
        let m = self.require_positive_mean()?;
        let target = 0.5 / m;
        if self.ev.w_at_zero() >= target {
            return Ok(0.0);
        }
        let f = |x: f64| self.ev.w(x).map(|w| w - target).unwrap_or(f64::NAN);
        let mut hi = 1.0;
        while f(hi) < 0.0 {
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::numeric("prediction_threshold", "no sign change"));
            }
        }
        crate::model::brent(f, 0.0, hi, 1e-13)
    }
}

/// Brownian motion `X_t = x + c t + s B_t`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BrownianParams {
    pub drift: f64,
    pub sigma: f64,
}

impl BrownianParams {
    /// Density of `X_t` at `y` from 0.
    pub fn free_density(&self, t: f64, y: f64) -> f64 {
        let s = self.sigma * t.sqrt();
        normal_pdf((y - self.drift * t) / s) / s
    }

    /// Density at `y > 0` of `X_t` started at `x > 0` and killed below 0.
    pub fn killed_density(&self, t: f64, x: f64, y: f64) -> f64 {
        let c = self.drift;
        let s = self.sigma * t.sqrt();
        let refl = (-2.0 * c * x / (self.sigma * self.sigma)).exp();
        let v = (normal_pdf((y - x - c * t) / s) - refl * normal_pdf((y + x - c * t) / s)) / s;
        v.max(0.0)
    }

    /// `P_x(X_t in (y1, y2], t < tau_0^-)`.
    pub fn killed_mass(&self, t: f64, x: f64, y1: f64, y2: f64) -> f64 {
        if t <= 0.0 {
            return if x > y1 && x <= y2 { 1.0 } else { 0.0 };
        }
        let c = self.drift;
        let s = self.sigma * t.sqrt();
        let refl = (-2.0 * c * x / (self.sigma * self.sigma)).exp();
        let direct = interval_prob((y1 - x - c * t) / s, (y2 - x - c * t) / s);
        let image = interval_prob((y1 + x - c * t) / s, (y2 + x - c * t) / s);
        (direct - refl * image).max(0.0)
    }
}

/// `N(b) - N(a)` for `a < b`, evaluated on the side that avoids cancellation.
fn interval_prob(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        normal_cdf(-a) - normal_cdf(-b)
    } else {
        normal_cdf(b) - normal_cdf(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm(q: f64) -> IdentityContext {
        IdentityContext::new(&LevyModel::brownian(0.0, 1.0).unwrap(), q).unwrap()
    }

    fn cp(q: f64) -> IdentityContext {
        IdentityContext::new(&LevyModel::cp_exponential(1.5, 0.0, 1.0, 1.0).unwrap(), q).unwrap()
    }

    #[test]
    fn context_invariant() {
        for ctx in [bm(0.5), cp(0.5), cp(2.0)] {
            assert!((ctx.phi_prime() * ctx.psi_prime_at_phi() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn first_passage_examples() {
        assert!((bm(0.5).first_passage_up_lt(2.0).unwrap() - (-2f64).exp()).abs() < 1e-15);
        assert_eq!(cp(0.0).first_passage_up_lt(3.0).unwrap(), 1.0);
        assert_eq!(bm(0.5).first_passage_up_lt(0.0).unwrap(), 1.0);
    }

    #[test]
    fn i_func_examples() {
        let ctx = bm(0.5);
        assert_eq!(ctx.i_func(0.3, -1.0).unwrap(), 1.0);
        assert_eq!(ctx.i_func(0.3, 0.0).unwrap(), 1.0);
        assert!((ctx.i_func(1.0, 1.0).unwrap() - (-2f64).exp()).abs() < 1e-14);
        // BM creeps: E_x e^{-q tau_0^-} = e^{-x sqrt(2q)}
        assert!((ctx.down_crossing_joint_lt(0.0, 0.1).unwrap() - (-0.1f64).exp()).abs() < 1e-14);
        assert!(matches!(ctx.i_func(1.5, 1.0), Err(Error::Domain(_))));
        // ruin probability for the Cramer-Lundberg fixture: (lambda m / d) e^{-(eta - lambda/d) x}
        let c0 = cp(0.0);
        for &x in &[0.0f64, 0.5, 2.0] {
            let ruin = (1.0 / 1.5) * (-(1.0 - 1.0 / 1.5) * x).exp();
            assert!((c0.down_crossing_joint_lt(0.0, x).unwrap() - ruin).abs() < 1e-13, "x={x}");
        }
    }

    #[test]
    fn i_func_continuous_across_routing_gaps() {
        for ctx in [bm(0.5), cp(2.0)] {
            let phi = ctx.phi();
            for &x in &[0.3, 1.0, 4.0] {
                let lim = ctx.i_func(phi, x).unwrap();
                for &gap in &[1e-9, 5e-8, 1e-6, 5e-5, 2e-4, 1e-3] {
                    let v = ctx.i_func(phi - gap, x).unwrap();
                    assert!((v - lim).abs() < 10.0 * gap * (1.0 + x), "x={x} gap={gap}: {v} vs {lim}");
                }
            }
        }
    }

    #[test]
    fn i_func_forms_agree() {
        // direct and tail forms on either side of the switch
        let ctx = cp(2.0);
        let ev = ctx.scale();
        for &beta in &[0.0, 0.5, 1.0] {
            for &x in &[0.5, 1.5, 3.0, 6.0] {
                let v = ctx.i_func(beta, x).unwrap();
                let gap = 2.0 - ctx.model().psi(beta).unwrap();
                let ratio = gap / (ctx.phi() - beta);
                let direct = 1.0 + gap * ev.integral(beta, x).unwrap() - ratio * (-beta * x).exp() * ev.w(x).unwrap();
                assert!((v - direct).abs() < 1e-11 * (1.0f64).max((ctx.phi() * x).exp()), "beta={beta} x={x}");
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn potential_density_examples() {
        let ctx = bm(0.5);
        assert!(ctx.potential_density_upper(1.0, 1.0, 1.0).unwrap().abs() < 1e-15);
        let v = ctx.potential_density_upper(1.0, 0.0, 0.5).unwrap();
        assert!((v - (-1f64).exp() * 2.0 * 0.5f64.sinh()).abs() < 1e-14);
        assert!(matches!(ctx.potential_density_upper(1.0, 1.5, 0.0), Err(Error::Domain(_))));
        for i in 0..=20 {
            for j in 0..=20 {
                let (x, y) = (-1.0 + 0.1 * i as f64, -1.0 + 0.1 * j as f64);
                assert!(ctx.potential_density_upper(1.0, x, y).unwrap() >= -1e-12);
            }
        }
        let v = ctx.potential_density_positive(1.0, 2.0).unwrap();
        assert!((v - (-2f64).exp() * 2.0 * 1f64.sinh()).abs() < 1e-14);
        assert_eq!(ctx.potential_density_positive(0.0, 0.7).unwrap(), 0.0);
        let mass = quad::integrate_to_infinity(|y| ctx.potential_density_positive(1.0, y).unwrap(), 0.0, 1.0).unwrap();
        assert!(mass <= 1.0 / 0.5);
        // E_1 int_0^{tau_0^-} e^{-qr} dr = (1 - e^{-sqrt(2q)}) / q
        assert!((mass - (1.0 - (-1f64).exp()) / 0.5).abs() < 1e-10);
    }

    #[test]
    fn resolvent_examples() {
        let ctx = bm(0.5);
        assert!((ctx.resolvent_density(0.3, 0.3).unwrap() - 1.0).abs() < 1e-14);
        // BM(0,1): density e^{-|x-y| sqrt(2q)} / sqrt(2q)
        for &z in &[-2.0, -0.4, 0.5, 3.0] {
            let v = ctx.resolvent_density(z, 0.0).unwrap();
            assert!((v - (-(z as f64).abs()).exp()).abs() < 1e-14);
        }
        for ctx in [bm(0.5), cp(0.7)] {
            let x = 0.4;
            let left = quad::integrate_from_neg_infinity(|y| ctx.resolvent_density(x, y).unwrap(), x, 1.0).unwrap();
            let right = quad::integrate_to_infinity(|y| ctx.resolvent_density(x, y).unwrap(), x, 1.0).unwrap();
            let q = ctx.q();
            assert!(((left + right) * q - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn joint_lt_reductions() {
        for ctx in [bm(1.0), cp(1.0)] {
            assert!((ctx.joint_lt_u_x(0.0, 0.0, 0.0, -0.5).unwrap() - 1.0).abs() < 1e-14);
            for &beta in &[0.0, 0.2, 0.4] {
                for &(u, x) in &[(0.0, -1.0), (0.0, 0.0), (0.3, 0.7), (1.0, 2.0)] {
                    let v = ctx.joint_lt_u_x(0.0, beta, u, x).unwrap();
                    let e = ctx.q() * (beta * x).exp() / (ctx.q() - ctx.model().psi(beta).unwrap());
                    assert!((v - e).abs() < 1e-10 * e, "beta={beta} (u,x)=({u},{x})");
                }
            }
        }
        let ctx = bm(1.0);
        assert!(matches!(ctx.joint_lt_u_x(0.0, 2.0, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(ctx.joint_lt_u_x(0.0, 0.0, 0.5, -0.5), Err(Error::Domain(_))));
        assert!(matches!(ctx.joint_lt_u_x(-1.5, 0.0, 0.0, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn separable_functional_matches_joint_lt() {
        for ctx in [bm(1.0), cp(1.0)] {
            for &alpha in &[-0.3, 0.0, 0.5] {
                for &beta in &[0.0, 0.1, 0.25] {
                    for &(u, x) in &[(0.0, -0.5), (0.0, 0.0), (0.3, 0.7)] {
                        let k = Kernel::Separable { alpha, beta };
                        let f = ctx.functional_formula(&k, u, x).unwrap();
                        let j = ctx.joint_lt_u_x(alpha, beta, u, x).unwrap();
                        assert!((f * ctx.q() - j).abs() < 1e-10 * j.abs().max(1.0), "{alpha} {beta} ({u},{x}): {} vs {j}", f * ctx.q());
                    }
                }
            }
        }
        let k = Kernel::Separable { alpha: 0.0, beta: 0.0 };
        assert!((bm(0.5).functional_formula(&k, 0.0, 1.0).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn indicator_limit_matches_entrance_density() {
        // the excursion-entrance limit equals
        // Phi'(q) int_A int_Y (y/r) e^{-qr} p_r(y) dy dr for Brownian motion
        let ctx = bm(1.0);
        let k = Kernel::Indicator { u1: 0.2, u2: 1.0, x1: 0.3, x2: 1.2 };
        let lim = ctx.entrance_limit(&k).unwrap();
        let bmp = BrownianParams { drift: 0.0, sigma: 1.0 };
        let inner = |r: f64| {
            quad::integrate(|y| y / r * (-r).exp() * bmp.free_density(r, y), 0.3, 1.2).unwrap()
        };
        let exact = ctx.phi_prime() * quad::integrate(inner, 0.2, 1.0).unwrap();
        assert!((lim.value - exact).abs() < 1e-5 * exact, "{} vs {exact}", lim.value);
    }

    #[test]
    fn indicator_requires_brownian_model() {
        let k = Kernel::Indicator { u1: 0.2, u2: 1.0, x1: 0.3, x2: 1.2 };
        assert!(matches!(cp(1.0).functional_formula(&k, 0.0, 0.5), Err(Error::Unsupported(_))));
    }

    #[test]
    fn potential_density_ux_examples() {
        let ctx = bm(1.0);
        // v < u leaves the straddling term only
        let v = ctx.potential_density_ux(1.0, 0.5, 0.5, 0.8).unwrap();
        let bmp = BrownianParams { drift: 0.0, sigma: 1.0 };
        let coef = ctx.phi_prime() * (ctx.phi() * 0.5).exp() - ctx.scale().w(0.5).unwrap();
        let second = coef * 0.8 / 0.5 * (-0.5f64).exp() * bmp.free_density(0.5, 0.8);
        assert!((v - second).abs() < 1e-15);
        let v0 = ctx.potential_density_ux(0.0, 0.0, 0.5, 0.8).unwrap();
        let second0 = ctx.phi_prime() * 0.8 / 0.5 * (-0.5f64).exp() * bmp.free_density(0.5, 0.8);
        assert!((v0 - second0).abs() < 1e-15);
        assert!(matches!(cp(1.0).potential_density_ux(0.0, 0.0, 0.5, 0.8), Err(Error::Unsupported(_))));
    }

    #[test]
    fn potential_density_ux_total_mass() {
        // mass of the (U, X) density over (0,inf)^2 plus the resolvent mass
        // of (-inf, 0] is 1/q
        let ctx = bm(1.0);
        let (u, x) = (0.3, 0.7);
        let inner = |y: f64| {
            let g = |v: f64| if v <= 0.0 { 0.0 } else { ctx.potential_density_ux(u, x, v, y).unwrap() };
            quad::integrate(g, 0.0, u).unwrap() + quad::integrate_to_infinity(g, u, 0.5).unwrap()
        };
        let upper = quad::integrate(inner, 0.0, x).unwrap()
            + quad::integrate_to_infinity(inner, x, 1.0).unwrap();
        let lower = quad::integrate_from_neg_infinity(|y| ctx.resolvent_density(x, y).unwrap(), 0.0, 1.0).unwrap();
        assert!(((upper + lower) * ctx.q() - 1.0).abs() < 1e-3, "{}", (upper + lower) * ctx.q());
    }

    #[test]
    fn k_minus_separable_closed_form() {
        // BM(0,1), q = 1/2: K^-(x) = int_{-inf}^0 e^{beta y} u(x, y) dy for x <= 0
        let ctx = bm(0.5);
        let k = Kernel::Separable { alpha: 0.0, beta: 0.0 };
        assert_eq!(ctx.k_minus(&k, 0.5).unwrap(), 0.0);
        // with beta = 0 this is (1 - E_x e^{-q tau_0^+}) / q = (1 - e^{x}) / q
        let x = -0.8f64;
        assert!((ctx.k_minus(&k, x).unwrap() - (1.0 - x.exp()) / 0.5).abs() < 1e-10);
    }

    #[test]
    fn g_laplace_examples() {
        let ctx = cp(0.5);
        assert_eq!(ctx.g_laplace_at_exp(0.0, 1.0).unwrap(), 1.0);
        let v = ctx.g_laplace_at_exp(0.4, 1.0).unwrap();
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn prediction_gain_examples() {
        let ctx = cp(0.0);
        assert_eq!(ctx.prediction_gain(0.0, -0.5).unwrap(), -1.0);
        let far = ctx.prediction_gain(0.0, 120.0).unwrap();
        assert!((far - 1.0).abs() < 1e-9);
        let x0 = ctx.prediction_threshold().unwrap();
        assert!(ctx.prediction_gain(0.0, x0).unwrap().abs() < 1e-12);
        // this fixture has 2 psi'(0) W(0) = 2/3 < 1, so the threshold is interior
        assert!(x0 > 0.0);
        assert!(matches!(bm(0.0).prediction_gain(0.0, 1.0), Err(Error::Domain(_))));
    }
}

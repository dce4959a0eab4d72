//! q-scale functions.
//!
//! `W^(q)` is evaluated as `e^{Phi(q) x} W_Phi(x)` where `W_Phi` is bounded
//! (it increases to `Phi'(q)`). Brownian motion, pure drift, exponential
//! compound Poisson (with or without a Gaussian part) and finite-variation
//! deterministic jumps have closed forms; everything else inverts
//! `1 / (psi(l + Phi) - q)` with fixed Talbot.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{JumpLaw, JumpSpec, LevyModel};
use crate::quad;
use crate::talbot;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    ClosedForm,
    LaplaceInversion { nodes: usize },
}

#[derive(Debug, Clone)]
enum Repr {
    /// `k (e^{r1 x} - e^{r2 x}) / (r1 - r2)` with `r1 = Phi(q)`.
    TwoRoot { k: f64, r1: f64, r2: f64 },
    /// `sum c_i e^{r_i x}`; the entry at `Phi(q)` comes first.
    Exponentials(Vec<(f64, f64)>),
    /// Finite variation with a single deterministic jump size `c`:
    /// `sum_n (-lambda)^n (x - n|c|)^n e^{a (x - n|c|)/d} / (d^{n+1} n!)`, `a = q + lambda`.
    PointJumps { d: f64, lambda: f64, jump: f64 },
    Inversion { nodes: usize },
}

#[derive(Debug, Clone)]
pub struct ScaleEvaluator {
    model: LevyModel,
    q: f64,
    phi: f64,
    dpsi_phi: f64,
    w0: f64,
    repr: Repr,
}

/// `int_0^x e^{delta y} dy`.
fn exp_integral(delta: f64, x: f64) -> f64 {
    let z = delta * x;
    if z.abs() < 1e-8 {
        x * (1.0 + 0.5 * z)
    } else {
        z.exp_m1() / delta
    }
}

/// Roots of `a x^2 + b x + c` (real, ascending) if the discriminant is
/// nonnegative.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    if a == 0.0 {
        return if b == 0.0 { None } else { Some((-c / b, -c / b)) };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t = -0.5 * (b + b.signum() * sq);
    let (x1, x2) = if t == 0.0 { (0.0, 0.0) } else { (t / a, c / t) };
    Some(if x1 < x2 { (x1, x2) } else { (x2, x1) })
}

impl ScaleEvaluator {
    /// Closed form when the model has one, Talbot inversion otherwise.
    pub fn new(model: &LevyModel, q: f64) -> Result<Self> {
        let mut ev = Self::inversion(model, q, talbot::DEFAULT_NODES)?;
        if let Some(repr) = ev.closed_form() {
            ev.repr = repr;
        }
        Ok(ev)
    }

    /// Force a backend.
    pub fn with_backend(model: &LevyModel, q: f64, backend: Backend) -> Result<Self> {
        match backend {
            Backend::LaplaceInversion { nodes } => Self::inversion(model, q, nodes),
            Backend::ClosedForm => {
                let mut ev = Self::inversion(model, q, talbot::DEFAULT_NODES)?;
                ev.repr = ev.closed_form().ok_or_else(|| {
                    Error::unsupported(format!("no closed-form scale function for {model:?}"))
                })?;
                Ok(ev)
            }
        }
    }

    pub fn inversion(model: &LevyModel, q: f64, nodes: usize) -> Result<Self> {
        if !(q >= 0.0) || !q.is_finite() {
            return Err(Error::domain(format!("scale function needs q >= 0, got {q}")));
        }
        if nodes < 8 {
            return Err(Error::config("Talbot inversion needs at least 8 nodes"));
        }
        let w0 = match model.fv_drift() {
            Some(d) if d > 0.0 => 1.0 / d,
            Some(d) => {
                return Err(Error::domain(format!(
                    "finite-variation model with drift d = {d} <= 0 has no scale function"
                )))
            }
            None => 0.0,
        };
        let phi = model.phi(q)?;
        Ok(ScaleEvaluator {
            model: model.clone(),
            q,
            phi,
            dpsi_phi: model.psi_derivative(phi, 1),
            w0,
            repr: Repr::Inversion { nodes },
        })
    }

    fn closed_form(&self) -> Option<Repr> {
        let m = &self.model;
        let q = self.q;
        let s2 = m.sigma() * m.sigma();
        match m.jumps() {
            JumpSpec::None if s2 > 0.0 => {
                // psi - q = (s2/2)(b - r1)(b - r2)
                let lin = -m.mu();
                let r1 = self.phi;
                let r2 = -2.0 * lin / s2 - r1;
                // r2 from Vieta is inaccurate when |r2| << |r1|; use the product
                let r2 = if r1 != 0.0 { -2.0 * q / (s2 * r1) } else { r2 };
                Some(Repr::TwoRoot { k: 2.0 / s2, r1, r2 })
            }
            JumpSpec::None => {
                let d = m.drift();
                (d > 0.0).then(|| Repr::Exponentials(vec![(1.0 / d, q / d)]))
            }
            JumpSpec::CompoundPoisson {
                rate,
                law: JumpLaw::Exponential { mean },
            } => {
                let eta = 1.0 / mean;
                let lam = *rate;
                let dr = m.drift();
                // P(b) = (s2/2 b^2 + dr b - q)(eta + b) - lam b
                let c3 = 0.5 * s2;
                let c2 = 0.5 * s2 * eta + dr;
                let c1 = dr * eta - q - lam;
                let c0 = -q * eta;
                let r = self.phi;
                let others: Vec<f64> = if c3 > 0.0 {
                    // deflate by (b - Phi): quotient a2 b^2 + a1 b + a0
                    let a2 = c3;
                    let a1 = c2 + r * a2;
                    let a0 = c1 + r * a1;
                    let (x1, x2) = quadratic_roots(a2, a1, a0)?;
                    vec![x1, x2]
                } else {
                    if c2 <= 0.0 {
                        return None;
                    }
                    if r != 0.0 {
                        vec![c0 / (c2 * r)]
                    } else {
                        vec![-c1 / c2]
                    }
                };
                let dp = |b: f64| 3.0 * c3 * b * b + 2.0 * c2 * b + c1;
                let mut all = vec![r];
                all.extend(others);
                for i in 0..all.len() {
                    for j in 0..i {
                        if (all[i] - all[j]).abs() <= 1e-9 * (1.0 + all[i].abs()) {
                            return None;
                        }
                    }
                }
                let terms: Vec<(f64, f64)> = all
                    .iter()
                    .map(|&b| ((eta + b) / dp(b), b))
                    .collect();
                if terms.iter().any(|t| !t.0.is_finite()) {
                    return None;
                }
                Some(Repr::Exponentials(terms))
            }
            JumpSpec::CompoundPoisson {
                rate,
                law: JumpLaw::Deterministic { size },
            } if s2 == 0.0 => {
                let d = m.drift();
                (d > 0.0).then_some(Repr::PointJumps {
                    d,
                    lambda: *rate,
                    jump: size.abs(),
                })
            }
            _ => None,
        }
    }

    pub fn model(&self) -> &LevyModel {
        &self.model
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// `psi'(Phi(q)+)`.
    pub fn psi_prime_at_phi(&self) -> f64 {
        self.dpsi_phi
    }

    /// `Phi'(q)`; infinite when `psi'(Phi(q)+) = 0`.
    pub fn phi_prime(&self) -> f64 {
        if self.dpsi_phi > 0.0 {
            1.0 / self.dpsi_phi
        } else {
            f64::INFINITY
        }
    }

    pub fn backend(&self) -> Backend {
        match self.repr {
            Repr::Inversion { nodes } => Backend::LaplaceInversion { nodes },
            _ => Backend::ClosedForm,
        }
    }

    /// `W^(q)(0)`: `1/d` for finite variation, 0 otherwise.
    pub fn w_at_zero(&self) -> f64 {
        self.w0
    }

    /// `W^(q)(x)`.
    pub fn w(&self, x: f64) -> Result<f64> {
        if x < 0.0 {
            return Ok(0.0);
        }
        if x == 0.0 {
            return Ok(self.w0);
        }
        match &self.repr {
            Repr::Exponentials(terms) => Ok(terms.iter().map(|(c, r)| c * (r * x).exp()).sum()),
            Repr::PointJumps { .. } => self.point_jump_sum(x, 0.0),
            _ => Ok((self.phi * x).exp() * self.w_tilted(x)?),
        }
    }

    /// `e^{-Phi(q) x} W^(q)(x)`, the 0-scale function under `P^{Phi(q)}`.
    pub fn w_tilted(&self, x: f64) -> Result<f64> {
        if x < 0.0 {
            return Ok(0.0);
        }
        if x == 0.0 {
            return Ok(self.w0);
        }
        match &self.repr {
            Repr::TwoRoot { k, r1, r2 } => {
                let delta = r1 - r2;
                if delta * x < 1e-300 {
                    Ok(k * x)
                } else {
                    Ok(k * (-(-delta * x).exp_m1()) / delta)
                }
            }
            Repr::Exponentials(terms) => Ok(terms
                .iter()
                .map(|(c, r)| c * ((r - self.phi) * x).exp())
                .sum()),
            Repr::PointJumps { .. } => self.point_jump_sum(x, self.phi),
            Repr::Inversion { nodes } => {
                let phi = self.phi;
                let q = self.q;
                let m = &self.model;
                let f = |s: Complex64| 1.0 / (m.psi_complex(s + phi) - q);
                talbot::invert_checked(&f, x, *nodes, 1e-9, 1e-12)
            }
        }
    }

    /// `Phi'(q) - e^{-Phi(q) x} W^(q)(x)` for `x >= 0`, computed without the
    /// cancellation of the naive difference.
    pub fn tail(&self, x: f64) -> Result<f64> {
        let pp = self.phi_prime();
        if !pp.is_finite() {
            return Err(Error::domain("Phi'(q) is infinite (oscillating process at q = 0)"));
        }
        if x < 0.0 {
            return Err(Error::domain("tail needs x >= 0"));
        }
        if x == 0.0 {
            return Ok(pp - self.w0);
        }
        match &self.repr {
            Repr::TwoRoot { k, r1, r2 } => {
                let delta = r1 - r2;
                Ok(k / delta * (-delta * x).exp())
            }
            Repr::Exponentials(terms) => Ok(-terms[1..]
                .iter()
                .map(|(c, r)| c * ((r - self.phi) * x).exp())
                .sum::<f64>()),
            Repr::PointJumps { .. } => Ok(pp - self.w_tilted(x)?),
            Repr::Inversion { nodes } => {
                let phi = self.phi;
                let q = self.q;
                let m = &self.model;
                let f = |s: Complex64| pp / s - 1.0 / (m.psi_complex(s + phi) - q);
                talbot::invert_checked(&f, x, *nodes, 1e-9, 1e-12)
            }
        }
    }

    /// `int_x^inf e^{gamma y} tail(y) dy` for the closed forms whose tail is a
    /// finite exponential sum (`None` otherwise or when it diverges).
    pub(crate) fn tail_integral(&self, gamma: f64, x: f64) -> Option<f64> {
        match &self.repr {
            Repr::TwoRoot { k, r1, r2 } => {
                let delta = r1 - r2;
                (delta > gamma && delta > 0.0).then(|| k / delta * ((gamma - delta) * x).exp() / (delta - gamma))
            }
            Repr::Exponentials(terms) if self.phi_prime().is_finite() => {
                let mut acc = 0.0;
                for (c, r) in &terms[1..] {
                    let rate = self.phi - r - gamma;
                    if !(rate > 0.0) {
                        return None;
                    }
                    acc -= c * (-rate * x).exp() / rate;
                }
                Some(acc)
            }
            _ => None,
        }
    }

    fn point_jump_sum(&self, x: f64, shift: f64) -> Result<f64> {
        let Repr::PointJumps { d, lambda, jump } = self.repr else {
            unreachable!()
        };
        let a = self.q + lambda;
        let n_max = (x / jump).floor() as usize;
        let mut sum = 0.0;
        let mut abs_sum = 0.0;
        for n in 0..=n_max {
            let z = x - n as f64 * jump;
            if z <= 0.0 && n > 0 {
                continue;
            }
            // log of |term| e^{-shift x}
            let lf: f64 = (1..=n).map(|k| (k as f64).ln()).sum();
            let log_mag = n as f64 * (lambda * z).ln() + a * z / d - (n as f64 + 1.0) * d.ln() - lf - shift * x;
            let mag = log_mag.exp();
            let t = if n % 2 == 0 { mag } else { -mag };
            sum += t;
            abs_sum += mag;
        }
        if abs_sum * 1e-16 > 1e-10 * sum.abs() {
            return Err(Error::numeric(
                "scale_w",
                format!("alternating jump series loses precision at x = {x} (sum {sum:e}, mass {abs_sum:e})"),
            ));
        }
        Ok(sum)
    }

    /// `int_0^x e^{-beta y} W^(q)(y) dy`.
    pub fn integral(&self, beta: f64, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::domain(format!("integral needs x >= 0, got {x}")));
        }
        if x == 0.0 {
            return Ok(0.0);
        }
        match &self.repr {
            Repr::TwoRoot { k, r1, r2 } if r1 - r2 > 1e-6 => {
                Ok(k * (exp_integral(r1 - beta, x) - exp_integral(r2 - beta, x)) / (r1 - r2))
            }
            Repr::Exponentials(terms) => Ok(terms
                .iter()
                .map(|(c, r)| c * exp_integral(r - beta, x))
                .sum()),
            Repr::PointJumps { jump, .. } => {
                let mut total = 0.0;
                let mut lo = 0.0;
                while lo < x {
                    let hi = (lo + jump).min(x);
                    total += self.integral_quad(beta, lo, hi)?;
                    lo = hi;
                }
                Ok(total)
            }
            _ => self.integral_quad(beta, 0.0, x),
        }
    }

    fn integral_quad(&self, beta: f64, a: f64, b: f64) -> Result<f64> {
        let d = self.phi - beta;
        let err = std::cell::Cell::new(None);
        let v = quad::integrate(
            |y| match self.w_tilted(y) {
                Ok(w) => (d * y).exp() * w,
                Err(e) => {
                    err.set(Some(e));
                    0.0
                }
            },
            a,
            b,
        )?;
        match err.into_inner() {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }

    /// Numerical `int_0^inf e^{-beta y} W^(q)(y) dy` for `beta > Phi(q)`,
    /// which should equal `1/(psi(beta) - q)`.
    pub fn laplace_transform_numeric(&self, beta: f64) -> Result<f64> {
        if !(beta > self.phi) {
            return Err(Error::domain(format!(
                "Laplace transform of W^(q) needs beta > Phi(q) = {}",
                self.phi
            )));
        }
        let d = self.phi - beta;
        let err = std::cell::Cell::new(None);
        let v = quad::integrate_to_infinity(
            |y| {
                if y <= 0.0 {
                    return (d * y).exp() * self.w0;
                }
                match self.w_tilted(y) {
                    Ok(w) => (d * y).exp() * w,
                    Err(e) => {
                        err.set(Some(e));
                        0.0
                    }
                }
            },
            0.0,
            1.0 / (beta - self.phi),
        )?;
        match err.into_inner() {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }
}

/// `W^(q)(x) - e^{Phi(q) x} W_Phi(x)` where `W_Phi` is the 0-scale function of
/// the tilted model, evaluated on the other backend where possible.
pub fn tilted_scale_identity_residual(ev: &ScaleEvaluator, x: f64) -> Result<f64> {
    if !(ev.q > 0.0) {
        return Err(Error::domain("tilted identity needs q > 0"));
    }
    if !(x >= 0.0) {
        return Err(Error::domain("tilted identity needs x >= 0"));
    }
    let tilted = ev.model.tilt(ev.phi)?;
    let other = match ev.backend() {
        Backend::ClosedForm => Backend::LaplaceInversion {
            nodes: talbot::DEFAULT_NODES,
        },
        Backend::LaplaceInversion { .. } => Backend::ClosedForm,
    };
    let tev = ScaleEvaluator::with_backend(&tilted, 0.0, other).or_else(|_| ScaleEvaluator::new(&tilted, 0.0))?;
    let lhs = ev.w(x)?;
    let rhs = (ev.phi * x).exp() * tev.w(x)?;
    Ok(lhs - rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm() -> LevyModel {
        LevyModel::brownian(0.0, 1.0).unwrap()
    }

    fn cp() -> LevyModel {
        LevyModel::cp_exponential(1.5, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn bm_examples() {
        let ev = ScaleEvaluator::new(&bm(), 0.5).unwrap();
        assert_eq!(ev.backend(), Backend::ClosedForm);
        assert_eq!(ev.w(-1.0).unwrap(), 0.0);
        assert!((ev.w(1.0).unwrap() - 2.0 * 1f64.sinh()).abs() < 1e-14);
        assert!((ev.integral(0.0, 1.0).unwrap() - 2.0 * (1f64.cosh() - 1.0)).abs() < 1e-14);
        assert_eq!(ev.integral(0.3, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn fv_value_at_zero() {
        let ev = ScaleEvaluator::new(&cp(), 0.7).unwrap();
        assert!((ev.w(0.0).unwrap() - 1.0 / 1.5).abs() < 1e-15);
        // closed form sums to 1/d at 0+
        assert!((ev.w(1e-12).unwrap() - 1.0 / 1.5).abs() < 1e-10);
        let ev = ScaleEvaluator::new(&bm(), 0.7).unwrap();
        assert_eq!(ev.w(0.0).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_matches_inversion() {
        let models = vec![
            bm(),
            cp(),
            LevyModel::brownian(0.4, 0.6).unwrap(),
            LevyModel::cp_exponential(0.8, 0.5, 1.3, 0.7).unwrap(),
            LevyModel::cp_exponential(0.5, 0.0, 1.0, 1.0).unwrap(),
        ];
        for m in &models {
            for &q in &[0.0, 0.3, 2.0] {
                let cf = ScaleEvaluator::with_backend(m, q, Backend::ClosedForm).unwrap();
                let inv = ScaleEvaluator::inversion(m, q, talbot::DEFAULT_NODES).unwrap();
                for i in 1..=40 {
                    let x = 0.125 * i as f64;
                    let a = cf.w(x).unwrap();
                    let b = inv.w(x).unwrap();
                    assert!((a - b).abs() <= 1e-9 * a.abs(), "{m:?} q={q} x={x}: {a} vs {b}");
                    if cf.phi_prime().is_finite() {
                        let ta = cf.tail(x).unwrap();
                        let tb = inv.tail(x).unwrap();
                        assert!((ta - tb).abs() <= 1e-10, "tail {m:?} q={q} x={x}: {ta} vs {tb}");
                    }
                }
            }
        }
    }

    #[test]
    fn point_jump_series_solves_delay_equation() {
        let m = LevyModel::with_drift(
            2.0,
            0.0,
            JumpSpec::CompoundPoisson {
                rate: 1.0,
                law: JumpLaw::deterministic(-1.0),
            },
        )
        .unwrap();
        let ev = ScaleEvaluator::new(&m, 0.5).unwrap();
        assert_eq!(ev.backend(), Backend::ClosedForm);
        // on (0, 1) no jump term is active: W = e^{a x/d}/d
        let a: f64 = 1.5;
        for &x in &[0.2, 0.7] {
            assert!((ev.w(x).unwrap() - (a * x / 2.0).exp() / 2.0).abs() < 1e-14);
        }
        // (L - q) W = 0 on (0, inf): d W'(x) = (q + lambda) W(x) - lambda W(x - 1)
        let h = 1e-5;
        for i in 0..24 {
            let x = 0.13 + 0.25 * i as f64;
            let dw = (ev.w(x + h).unwrap() - ev.w(x - h).unwrap()) / (2.0 * h);
            let rhs = a * ev.w(x).unwrap() - ev.w(x - 1.0).unwrap();
            assert!((2.0 * dw - rhs).abs() < 1e-7 * rhs.abs(), "x={x}: {} vs {rhs}", 2.0 * dw);
        }
        // the alternating series refuses to answer once it has lost precision
        assert!(matches!(ev.w(150.0), Err(Error::Numeric { .. })));
    }

    #[test]
    fn laplace_round_trip_both_backends() {
        for m in [bm(), cp(), LevyModel::with_drift(0.3, 0.0, JumpSpec::StableTail { alpha: 1.5, scale: 1.0 }).unwrap()] {
            for &q in &[0.1, 1.0] {
                let ev = ScaleEvaluator::new(&m, q).unwrap();
                let beta = ev.phi() + 1.0;
                let lt = ev.laplace_transform_numeric(beta).unwrap();
                let exact = 1.0 / (m.psi(beta).unwrap() - q);
                assert!((lt - exact).abs() < 1e-8 * exact, "{m:?} q={q}: {lt} vs {exact}");
            }
        }
    }

    #[test]
    fn asymptotics_and_ratio_limit() {
        for m in [bm(), cp()] {
            let ev = ScaleEvaluator::new(&m, 0.5).unwrap();
            let x = 1e-6f64.ln().abs() / ev.phi() + 5.0;
            let lim = ev.w_tilted(x).unwrap();
            assert!((lim / ev.phi_prime() - 1.0).abs() < 1e-2);
            let ev2 = ScaleEvaluator::new(&m, 1.7).unwrap();
            let mut prev = f64::INFINITY;
            for k in 3..=6 {
                let e = 10f64.powi(-k);
                let r = (ev2.w(e).unwrap() / ev.w(e).unwrap() - 1.0).abs();
                assert!(r < prev);
                prev = r;
            }
            assert!(prev < 1e-5);
        }
    }

    #[test]
    fn tilted_identity_residuals() {
        let ev = ScaleEvaluator::new(&bm(), 0.5).unwrap();
        assert_eq!(tilted_scale_identity_residual(&ev, 0.0).unwrap(), 0.0);
        for &x in &[0.5, 1.0, 2.0] {
            assert!(tilted_scale_identity_residual(&ev, x).unwrap().abs() < 1e-8);
        }
        let ev = ScaleEvaluator::new(&cp(), 0.5).unwrap();
        assert!(tilted_scale_identity_residual(&ev, 1.0).unwrap().abs() < 1e-6);
        let stable = LevyModel::with_drift(0.0, 0.0, JumpSpec::StableTail { alpha: 1.5, scale: 1.0 }).unwrap();
        let ev = ScaleEvaluator::new(&stable, 0.5).unwrap();
        assert!(matches!(tilted_scale_identity_residual(&ev, 1.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn stable_scale_is_positive_increasing() {
        let m = LevyModel::with_drift(0.0, 0.0, JumpSpec::StableTail { alpha: 1.5, scale: 1.0 }).unwrap();
        let ev = ScaleEvaluator::new(&m, 0.0).unwrap();
        // zero drift, psi = b^a: W(x) = x^{a-1} / Gamma(a)
        for &x in &[0.1f64, 0.5, 1.0, 3.0] {
            let exact = x.powf(0.5) / libm::tgamma(1.5);
            assert!((ev.w(x).unwrap() - exact).abs() < 1e-9 * exact, "x={x}");
        }
    }
}

//! The generator `A_Z` of `Z_t = (g_t, t, X_t)` on smooth test functions,
//! with simulation checks (Dynkin formula, pathwise Itô bookkeeping).
//!
//! ```text
//! A_Z F = F_g 1{x<=0} + F_t - mu F_x + sigma^2/2 F_xx
//!       + int (F(g,t,x+y) - F(g,t,x) - y 1{y>-1} F_x(g,t,x)) 1{x+y>0} Pi(dy)
//!       + int (F(t,t,x+y) - F(t,t,x) - y 1{y>-1} F_x(t,t,x)) 1{x<=0}  Pi(dy)
//!       + int (F(t,t,x+y) - F(g,t,x) - y 1{y>-1} F_x(g,t,x)) 1{x>0, x+y<=0} Pi(dy)
//! ```
//!
//! A jump landing exactly on 0 starts a new zero-set visit, so it is routed to
//! the last integral.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mc::run_paths;
use crate::model::{JumpSpec, LevyModel};
use crate::pathsim::{observe, PathSkeleton, PathSource, SimOptions};
use crate::quad::{integrate_from_neg_infinity_with, integrate_with, QuadOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partials {
    pub dg: f64,
    pub dt: f64,
    pub dx: f64,
    pub dxx: f64,
}

/// A smooth function `F(gamma, t, x)` on the state space.
pub trait TestFunction: Send + Sync {
    fn eval(&self, g: f64, t: f64, x: f64) -> f64;

    /// Closed-form partials, if known.
    fn partials(&self, _g: f64, _t: f64, _x: f64) -> Option<Partials> {
        None
    }

    fn bounded(&self) -> bool {
        false
    }

    /// `lim_{h -> 0+} F(gamma, t, h) = F(t, t, 0)` for all `gamma <= t`.
    fn boundary_compatible(&self) -> bool {
        false
    }

    fn label(&self) -> String;
}

fn fd_step(v: f64) -> f64 {
    1e-6f64.max(1e-8 * v.abs())
}

/// Central differences; the second derivative uses a wider step
/// `1e-4 max(1, |x|)` to keep round-off below `1e-8`.
pub fn fd_partials(f: &dyn TestFunction, g: f64, t: f64, x: f64) -> Partials {
    let hg = fd_step(g);
    let ht = fd_step(t);
    let hx = fd_step(x);
    let h2 = 1e-4 * x.abs().max(1.0);
    let fx = f.eval(g, t, x);
    Partials {
        dg: (f.eval(g + hg, t, x) - f.eval(g - hg, t, x)) / (2.0 * hg),
        dt: (f.eval(g, t + ht, x) - f.eval(g, t - ht, x)) / (2.0 * ht),
        dx: (f.eval(g, t, x + hx) - f.eval(g, t, x - hx)) / (2.0 * hx),
        dxx: (f.eval(g, t, x + h2) - 2.0 * fx + f.eval(g, t, x - h2)) / (h2 * h2),
    }
}

pub fn partials(f: &dyn TestFunction, g: f64, t: f64, x: f64) -> Partials {
    f.partials(g, t, x).unwrap_or_else(|| fd_partials(f, g, t, x))
}

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl TestFunction for Constant {
    fn eval(&self, _g: f64, _t: f64, _x: f64) -> f64 {
        self.0
    }
    fn partials(&self, _g: f64, _t: f64, _x: f64) -> Option<Partials> {
        Some(Partials { dg: 0.0, dt: 0.0, dx: 0.0, dxx: 0.0 })
    }
    fn bounded(&self) -> bool {
        true
    }
    fn boundary_compatible(&self) -> bool {
        true
    }
    fn label(&self) -> String {
        format!("const:c={}", self.0)
    }
}

/// `e^{beta x - psi(beta) t}`.
#[derive(Debug, Clone, Copy)]
pub struct ExpMartingale {
    pub beta: f64,
    pub psi_beta: f64,
}

impl ExpMartingale {
    pub fn new(model: &LevyModel, beta: f64) -> Result<Self> {
        Ok(ExpMartingale { beta, psi_beta: model.psi(beta)? })
    }
}

impl TestFunction for ExpMartingale {
    fn eval(&self, _g: f64, t: f64, x: f64) -> f64 {
        (self.beta * x - self.psi_beta * t).exp()
    }
    fn partials(&self, g: f64, t: f64, x: f64) -> Option<Partials> {
        let f = self.eval(g, t, x);
        Some(Partials { dg: 0.0, dt: -self.psi_beta * f, dx: self.beta * f, dxx: self.beta * self.beta * f })
    }
    fn boundary_compatible(&self) -> bool {
        true
    }
    fn label(&self) -> String {
        format!("expmart:beta={}", self.beta)
    }
}

/// `exp(-((x - center) / width)^2)`.
#[derive(Debug, Clone, Copy)]
pub struct Bump {
    pub center: f64,
    pub width: f64,
}

impl TestFunction for Bump {
    fn eval(&self, _g: f64, _t: f64, x: f64) -> f64 {
        let z = (x - self.center) / self.width;
        (-z * z).exp()
    }
    fn partials(&self, g: f64, t: f64, x: f64) -> Option<Partials> {
        let f = self.eval(g, t, x);
        let w2 = self.width * self.width;
        let d = x - self.center;
        Some(Partials {
            dg: 0.0,
            dt: 0.0,
            dx: -2.0 * d / w2 * f,
            dxx: (4.0 * d * d / (w2 * w2) - 2.0 / w2) * f,
        })
    }
    fn bounded(&self) -> bool {
        true
    }
    fn boundary_compatible(&self) -> bool {
        true
    }
    fn label(&self) -> String {
        format!("bump:center={},width={}", self.center, self.width)
    }
}

/// `F = gamma`.
#[derive(Debug, Clone, Copy)]
pub struct Gamma;

impl TestFunction for Gamma {
    fn eval(&self, g: f64, _t: f64, _x: f64) -> f64 {
        g
    }
    fn partials(&self, _g: f64, _t: f64, _x: f64) -> Option<Partials> {
        Some(Partials { dg: 1.0, dt: 0.0, dx: 0.0, dxx: 0.0 })
    }
    fn label(&self) -> String {
        "gamma".into()
    }
}

/// `F = x`.
#[derive(Debug, Clone, Copy)]
pub struct LinearX;

impl TestFunction for LinearX {
    fn eval(&self, _g: f64, _t: f64, x: f64) -> f64 {
        x
    }
    fn partials(&self, _g: f64, _t: f64, _x: f64) -> Option<Partials> {
        Some(Partials { dg: 0.0, dt: 0.0, dx: 1.0, dxx: 0.0 })
    }
    fn boundary_compatible(&self) -> bool {
        true
    }
    fn label(&self) -> String {
        "linear".into()
    }
}

/// `sin(freq t)`.
#[derive(Debug, Clone, Copy)]
pub struct TimeWave {
    pub freq: f64,
}

impl TestFunction for TimeWave {
    fn eval(&self, _g: f64, t: f64, _x: f64) -> f64 {
        (self.freq * t).sin()
    }
    fn partials(&self, _g: f64, t: f64, _x: f64) -> Option<Partials> {
        Some(Partials { dg: 0.0, dt: self.freq * (self.freq * t).cos(), dx: 0.0, dxx: 0.0 })
    }
    fn bounded(&self) -> bool {
        true
    }
    fn boundary_compatible(&self) -> bool {
        true
    }
    fn label(&self) -> String {
        format!("timewave:freq={}", self.freq)
    }
}

/// `e^{-rate (t - gamma)} x^2 / (1 + x^2)`: depends on the excursion age
/// and vanishes at `x = 0`, so it meets the boundary condition.
#[derive(Debug, Clone, Copy)]
pub struct AgeDecay {
    pub rate: f64,
}

impl TestFunction for AgeDecay {
    fn eval(&self, g: f64, t: f64, x: f64) -> f64 {
        (-self.rate * (t - g)).exp() * x * x / (1.0 + x * x)
    }
    fn partials(&self, g: f64, t: f64, x: f64) -> Option<Partials> {
        let e = (-self.rate * (t - g)).exp();
        let s = 1.0 + x * x;
        let f = e * x * x / s;
        Some(Partials {
            dg: self.rate * f,
            dt: -self.rate * f,
            dx: e * 2.0 * x / (s * s),
            dxx: e * (2.0 - 6.0 * x * x) / (s * s * s),
        })
    }
    fn bounded(&self) -> bool {
        true
    }
    fn boundary_compatible(&self) -> bool {
        true
    }
    fn label(&self) -> String {
        format!("age:rate={}", self.rate)
    }
}

/// `sum_i c_i F_i`.
pub struct Combination(pub Vec<(f64, Box<dyn TestFunction>)>);

impl TestFunction for Combination {
    fn eval(&self, g: f64, t: f64, x: f64) -> f64 {
        self.0.iter().map(|(c, f)| c * f.eval(g, t, x)).sum()
    }
    fn partials(&self, g: f64, t: f64, x: f64) -> Option<Partials> {
        let mut acc = Partials { dg: 0.0, dt: 0.0, dx: 0.0, dxx: 0.0 };
        for (c, f) in &self.0 {
            let p = partials(f.as_ref(), g, t, x);
            acc.dg += c * p.dg;
            acc.dt += c * p.dt;
            acc.dx += c * p.dx;
            acc.dxx += c * p.dxx;
        }
        Some(acc)
    }
    fn bounded(&self) -> bool {
        self.0.iter().all(|(_, f)| f.bounded())
    }
    fn boundary_compatible(&self) -> bool {
        self.0.iter().all(|(_, f)| f.boundary_compatible())
    }
    fn label(&self) -> String {
        let parts: Vec<String> = self.0.iter().map(|(c, f)| format!("{c}*{}", f.label())).collect();
        parts.join("+")
    }
}

/// Parse `name[:key=value,...]`, e.g. `expmart:beta=0.5` or
/// `bump:center=0.5,width=0.4`.
pub fn parse_test_function(spec: &str, model: &LevyModel) -> Result<Box<dyn TestFunction>> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut args = std::collections::BTreeMap::new();
    for kv in rest.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(format!("test function argument `{kv}` is not key=value")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("test function argument `{kv}` is not numeric")))?;
        args.insert(k.trim().to_string(), v);
    }
    let take = |args: &mut std::collections::BTreeMap<String, f64>, k: &str, default: Option<f64>| {
        args.remove(k)
            .or(default)
            .ok_or_else(|| Error::config(format!("test function `{name}` needs `{k}`")))
    };
    let f: Box<dyn TestFunction> = match name.trim() {
        "const" => Box::new(Constant(take(&mut args, "c", Some(1.0))?)),
        "expmart" => Box::new(ExpMartingale::new(model, take(&mut args, "beta", None)?)?),
        "bump" => {
            let center = take(&mut args, "center", Some(0.0))?;
            let width = take(&mut args, "width", Some(1.0))?;
            if !(width > 0.0) {
                return Err(Error::config("bump width must be positive"));
            }
            Box::new(Bump { center, width })
        }
        "gamma" => Box::new(Gamma),
        "linear" => Box::new(LinearX),
        "timewave" => Box::new(TimeWave { freq: take(&mut args, "freq", Some(1.0))? }),
        "age" => Box::new(AgeDecay { rate: take(&mut args, "rate", Some(1.0))? }),
        other => return Err(Error::config(format!("unknown test function `{other}`"))),
    };
    if let Some(k) = args.keys().next() {
        return Err(Error::config(format!("unknown argument `{k}` for test function `{name}`")));
    }
    Ok(f)
}

/// Check `(gamma, t, x)` against the state space of `Z`. The corner
/// `gamma = t` with `x > 0` is allowed (it is where paths started above zero
/// at time 0 sit).
pub fn check_eg(g: f64, t: f64, x: f64) -> Result<()> {
    if !(g.is_finite() && t.is_finite() && x.is_finite()) {
        return Err(Error::domain("state must be finite"));
    }
    if g < 0.0 || g > t {
        return Err(Error::domain(format!("state needs 0 <= gamma <= t, got gamma = {g}, t = {t}")));
    }
    if x <= 0.0 && g != t {
        return Err(Error::domain(format!("x = {x} <= 0 requires gamma = t, got gamma = {g}, t = {t}")));
    }
    Ok(())
}

/// Which jump integral a jump `y` from `x` belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpRegion {
    /// `x + y > 0`.
    StaysPositive,
    /// `x <= 0`.
    FromBelow,
    /// `x > 0`, `x + y <= 0`.
    Crosses,
}

pub fn jump_region(x: f64, y: f64) -> JumpRegion {
    if x <= 0.0 {
        JumpRegion::FromBelow
    } else if x + y > 0.0 {
        JumpRegion::StaysPositive
    } else {
        JumpRegion::Crosses
    }
}

/// `int_lo^hi y eta e^{eta y} dy` for `lo < hi <= 0` (`lo` may be `-inf`).
fn exp_partial_mean(eta: f64, lo: f64, hi: f64) -> f64 {
    let prim = |y: f64| if y == f64::NEG_INFINITY { 0.0 } else { (eta * y).exp() * (y - 1.0 / eta) };
    prim(hi) - prim(lo)
}

/// `int_(lo, hi) (after(y) - before - y 1{y>-1} dx) Pi(dy)` over an interval
/// of `(-inf, 0)`. `closed_lo` says whether `lo` itself belongs to the region
/// (only matters for atoms). `dxx` is the second derivative at the base point,
/// used for the small-jump expansion of stable tails.
#[allow(clippy::too_many_arguments)]
fn levy_integral<A: Fn(f64) -> f64>(
    model: &LevyModel,
    lo: f64,
    hi: f64,
    closed_lo: bool,
    after: A,
    before: f64,
    dx: f64,
    dxx: f64,
    opts: QuadOptions,
) -> Result<f64> {
    if !(hi > lo) {
        return Ok(0.0);
    }
    match model.jumps() {
        JumpSpec::None => Ok(0.0),
        JumpSpec::CompoundPoisson { rate, law } => {
            let (dens, atoms) = law.components();
            let mut total = 0.0;
            let comp_lo = lo.max(-1.0);
            for (w, mean) in dens {
                let eta = 1.0 / mean.abs();
                let g = |y: f64| (after(y) - before) * eta * (eta * y).exp();
                let part = if lo == f64::NEG_INFINITY {
                    let split = hi.min(-1.0);
                    let tail = integrate_from_neg_infinity_with(&g, split, 1.0 / eta, opts)?;
                    tail + integrate_with(&g, split, hi, opts)?
                } else {
                    integrate_with(&g, lo, hi, opts)?
                };
                let comp = if comp_lo < hi { exp_partial_mean(eta, comp_lo, hi) } else { 0.0 };
                total += w * (part - dx * comp);
            }
            for (w, s) in atoms {
                let inside = (s > lo || (closed_lo && s == lo)) && s < hi;
                if inside {
                    let comp = if s > -1.0 { s } else { 0.0 };
                    total += w * (after(s) - before - comp * dx);
                }
            }
            Ok(rate * total)
        }
        JumpSpec::StableTail { alpha, .. } => {
            let c = model.stable_density_constant();
            let alpha = *alpha;
            // the compensated integrand cancels to ~1e-10 relative near 0
            let opts = QuadOptions { abs_tol: opts.abs_tol.max(1e-12), rel_tol: opts.rel_tol.max(1e-10), ..opts };
            let dens = |y: f64| c * (-y).powf(-1.0 - alpha);
            let full = |y: f64| {
                let comp = if y > -1.0 { y * dx } else { 0.0 };
                (after(y) - before - comp) * dens(y)
            };
            let mut total = 0.0;
            let mut upper = hi;
            if hi == 0.0 {
                // (p, 0) with y = -w^k, k = 1/(2-alpha), smooth in w
                let p = lo.max(-1.0);
                let k = 1.0 / (2.0 - alpha);
                let w_max = (-p).powf(1.0 / k);
                // third derivative by a backward difference, only needed on |y| < SMALL
                let hd = 1e-2;
                let dxxx = (before - 3.0 * after(-hd) + 3.0 * after(-2.0 * hd) - after(-3.0 * hd)) / (hd * hd * hd);
                let taylor = |w: f64| {
                    if w == 0.0 {
                        return 0.5 * dxx * c * k;
                    }
                    let y = -w.powf(k);
                    (0.5 * y * y * dxx + y * y * y * dxxx / 6.0) * dens(y) * k * w.powf(k - 1.0)
                };
                let direct = |w: f64| {
                    let y = -w.powf(k);
                    full(y) * k * w.powf(k - 1.0)
                };
                let w_small = SMALL_JUMP.powf(1.0 / k).min(w_max);
                total += integrate_with(taylor, 0.0, w_small, opts)?;
                if w_max > w_small {
                    total += integrate_with(direct, w_small, w_max, opts)?;
                }
                upper = p;
            }
            if upper > lo {
                if lo == f64::NEG_INFINITY {
                    let split = upper.min(-1.0);
                    total += integrate_from_neg_infinity_with(&full, split, 1.0, opts)?;
                    total += integrate_with(&full, split, upper, opts)?;
                } else {
                    total += integrate_with(&full, lo, upper, opts)?;
                }
            }
            Ok(total)
        }
    }
}

/// Below this jump size stable integrands use a Taylor expansion.
const SMALL_JUMP: f64 = 1e-3;

/// Loose quadrature settings for Monte Carlo use, where `1e-9` is far below
/// statistical error.
pub fn mc_quad() -> QuadOptions {
    QuadOptions { abs_tol: 1e-10, rel_tol: 1e-9, max_panels: 4000 }
}

fn generator_quad() -> QuadOptions {
    QuadOptions { abs_tol: 1e-14, rel_tol: 1e-12, max_panels: 4000 }
}

pub fn apply_generator(model: &LevyModel, f: &dyn TestFunction, g: f64, t: f64, x: f64) -> Result<f64> {
    apply_generator_with(model, f, g, t, x, generator_quad())
}

pub fn apply_generator_with(
    model: &LevyModel,
    f: &dyn TestFunction,
    g: f64,
    t: f64,
    x: f64,
    opts: QuadOptions,
) -> Result<f64> {
    check_eg(g, t, x)?;
    if model.sigma() > 0.0 && !f.boundary_compatible() {
        return Err(Error::domain(format!(
            "test function {} does not satisfy lim F(g,t,0+) = F(t,t,0), required when sigma > 0",
            f.label()
        )));
    }
    let p = partials(f, g, t, x);
    let s2 = model.sigma() * model.sigma();
    let mut out = p.dt - model.mu() * p.dx + 0.5 * s2 * p.dxx;
    if x <= 0.0 {
        out += p.dg;
    }
    if !model.has_jumps() {
        return Ok(out);
    }
    if x <= 0.0 {
        // here g = t
        let base = f.eval(t, t, x);
        out += levy_integral(model, f64::NEG_INFINITY, 0.0, false, |y| f.eval(t, t, x + y), base, p.dx, p.dxx, opts)?;
    } else {
        let base = f.eval(g, t, x);
        out += levy_integral(model, -x, 0.0, false, |y| f.eval(g, t, x + y), base, p.dx, p.dxx, opts)?;
        out += levy_integral(model, f64::NEG_INFINITY, -x, false, |y| f.eval(t, t, x + y), base, p.dx, p.dxx, opts)?;
        // an atom exactly at -x lands on zero
        if let JumpSpec::CompoundPoisson { rate, law } = model.jumps() {
            for (w, s) in law.components().1 {
                if s == -x {
                    let comp = if s > -1.0 { s * p.dx } else { 0.0 };
                    out += rate * w * (f.eval(t, t, 0.0) - base - comp);
                }
            }
        }
    }
    Ok(out)
}

/// `F_t - mu F_x + sigma^2/2 F_xx + int (F(x+y) - F(x) - y 1{y>-1} F_x) Pi(dy)`
/// for a function of `(t, x)` only, evaluated with `gamma = t`.
pub fn classical_generator(model: &LevyModel, f: &dyn TestFunction, t: f64, x: f64) -> Result<f64> {
    let p = partials(f, t, t, x);
    let s2 = model.sigma() * model.sigma();
    let base = f.eval(t, t, x);
    let jumps = levy_integral(
        model,
        f64::NEG_INFINITY,
        0.0,
        false,
        |y| f.eval(t, t, x + y),
        base,
        p.dx,
        p.dxx,
        generator_quad(),
    )?;
    Ok(p.dt - model.mu() * p.dx + 0.5 * s2 * p.dxx + jumps)
}

#[derive(Debug, Clone, Serialize)]
pub struct DynkinReport {
    pub test_function: String,
    pub start: (f64, f64, f64),
    pub n: u64,
    pub times: Vec<f64>,
    /// `E F(Z_t) - F(z0) - int_0^t E A_Z F(Z_s) ds`.
    pub delta: Vec<f64>,
    pub se: Vec<f64>,
    pub max_abs_z: f64,
    pub bounded: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct DynkinOptions {
    /// Simpson panels on `[0, t_max]` (each uses two intervals).
    pub panels: usize,
    pub sim: SimOptions,
}

impl Default for DynkinOptions {
    fn default() -> Self {
        DynkinOptions { panels: 20, sim: SimOptions::with_step(0.01) }
    }
}

/// Monte Carlo Dynkin check of `A_Z F` from `z0 = (gamma, t, x)`, reported
/// at the Simpson panel ends.
pub fn dynkin_check(
    model: &LevyModel,
    f: &dyn TestFunction,
    z0: (f64, f64, f64),
    t_max: f64,
    n: u64,
    seed: u64,
    opts: &DynkinOptions,
) -> Result<DynkinReport> {
    let (g0, t0, x0) = z0;
    check_eg(g0, t0, x0)?;
    if !(t_max > 0.0) || opts.panels == 0 {
        return Err(Error::domain("dynkin check needs t_max > 0 and at least one panel"));
    }
    let src = PathSource::new(model, seed, &opts.sim)?;
    src.check_horizon(t_max)?;
    let m = 2 * opts.panels;
    let ds = t_max / m as f64;
    let times: Vec<f64> = (1..=m).map(|j| j as f64 * ds).collect();
    // generator at the start is the same on every path
    let f0 = f.eval(g0, t0, x0);
    let a0 = apply_generator_with(model, f, g0, t0, x0, mc_quad())?;
    let quad = mc_quad();
    let rows = run_paths(n, |i| {
        let obs = observe(&src, i, x0, &times);
        let mut a = Vec::with_capacity(m + 1);
        let mut fz = Vec::with_capacity(m + 1);
        a.push(a0);
        fz.push(f0);
        for (j, (g, x)) in obs.iter().enumerate() {
            let t = t0 + times[j];
            let gg = g.map_or(g0, |g| if g == times[j] { t } else { t0 + g });
            fz.push(f.eval(gg, t, *x));
            a.push(apply_generator_with(model, f, gg, t, *x, quad)?);
        }
        let mut d = Vec::with_capacity(opts.panels);
        let mut integral = 0.0;
        for k in 0..opts.panels {
            integral += ds / 3.0 * (a[2 * k] + 4.0 * a[2 * k + 1] + a[2 * k + 2]);
            d.push(fz[2 * k + 2] - f0 - integral);
        }
        Ok(d)
    })?;
    let mut delta = Vec::with_capacity(opts.panels);
    let mut se = Vec::with_capacity(opts.panels);
    let mut max_abs_z: f64 = 0.0;
    for k in 0..opts.panels {
        let e = crate::mc::MCEstimate::from_fn(&rows, |r| r[k]);
        let z = e.z_score(0.0);
        max_abs_z = max_abs_z.max(z.abs());
        delta.push(e.mean);
        se.push(e.se);
    }
    Ok(DynkinReport {
        test_function: f.label(),
        start: z0,
        n,
        times: (1..=opts.panels).map(|k| 2.0 * k as f64 * ds).collect(),
        delta,
        se,
        max_abs_z,
        bounded: f.bounded(),
    })
}

/// Pathwise Itô formula on a finite-variation path: the largest
/// `|F(g_t,t,X_t) - F(g_0,0,X_0) - (drift and jump terms)|` over the grid.
pub fn ito_pathwise_check(path: &PathSkeleton, f: &dyn TestFunction) -> Result<f64> {
    let model = &path.model;
    let Some(d) = model.fv_drift() else {
        return Err(Error::unsupported(
            "pathwise check needs a finite-variation model; use dynkin_check instead",
        ));
    };
    let trace = crate::pathsim::track_last_zero(path);
    let quad = generator_quad();
    let integrand = |below: bool, gfix: f64, x0: f64, s0: f64| {
        move |u: f64| {
            let x = x0 + d * (u - s0);
            let g = if below { u } else { gfix };
            let p = partials(f, g, u, x);
            (if below { p.dg } else { 0.0 }) + p.dt + d * p.dx
        }
    };
    let f_start = f.eval(0.0, 0.0, path.start);
    let mut s = 0.0;
    let mut x = path.start;
    let mut g = 0.0;
    let mut rhs = 0.0;
    let mut jumps = path.jumps.iter().peekable();
    let mut worst: f64 = 0.0;
    // move along the linear piece from s to s1, splitting at an up-crossing
    let advance = |s: &mut f64, x: &mut f64, g: &mut f64, rhs: &mut f64, s1: f64| -> Result<()> {
        if s1 <= *s {
            return Ok(());
        }
        if *x <= 0.0 {
            let cross = *s + (-*x) / d;
            if cross < s1 {
                *rhs += integrate_with(integrand(true, 0.0, *x, *s), *s, cross, quad)?;
                *g = cross;
                *rhs += integrate_with(integrand(false, cross, 0.0, cross), cross, s1, quad)?;
            } else {
                *rhs += integrate_with(integrand(true, 0.0, *x, *s), *s, s1, quad)?;
                *g = s1;
            }
        } else {
            *rhs += integrate_with(integrand(false, *g, *x, *s), *s, s1, quad)?;
        }
        *x += d * (s1 - *s);
        *s = s1;
        Ok(())
    };
    for (i, &t) in path.times.iter().enumerate() {
        while let Some(&&(tj, y)) = jumps.peek() {
            if tj > t {
                break;
            }
            advance(&mut s, &mut x, &mut g, &mut rhs, tj)?;
            let g_before = if x <= 0.0 { tj } else { g };
            let x_after = x + y;
            let g_after = if x_after <= 0.0 { tj } else { g_before };
            rhs += f.eval(g_after, tj, x_after) - f.eval(g_before, tj, x);
            x = x_after;
            g = g_after;
            jumps.next();
        }
        advance(&mut s, &mut x, &mut g, &mut rhs, t)?;
        let lhs = f.eval(trace.g[i], t, path.values[i]) - f_start;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

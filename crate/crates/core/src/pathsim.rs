//! Path simulation, last-zero tracking, the perturbed process and Monte Carlo
//! estimators built on them.
//!
//! A path is `X_t = C_t + J_t` with `C_t = x0 + drift t + vol B_t` and `J` the
//! compound Poisson jump sum. Time is cut into cells of length
//! `lc = h 2^k` with `lc` in `[0.5, 1)` (or `lc = h` for coarse steps). The
//! Brownian increment over a cell and every dyadic midpoint inside it are keyed
//! normals addressed by `(seed, path, cell, node)`, so the continuous part is
//! a fixed function of the seed down to a leaf of about `1e-9` time units,
//! linear below that. Grid points at step `h` are the depth-`k` nodes.
//! Jump times and sizes, and any random horizon, come from the path's ChaCha
//! stream.
//!
//! Level-crossing queries descend the tree only where a Brownian bridge
//! between two known values can reach the level with probability above
//! `e^{-36}`, so locating an event costs a few dozen keyed normals however
//! small `h` is. Halving `h` leaves the sampled path unchanged.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identities::IdentityContext;
use crate::mc::{run_paths, MCEstimate};
use crate::model::{JumpLaw, JumpSpec, LevyModel};
use crate::rng::{keyed_normal, path_rng};

/// Time length of the finest bridge node.
pub const LEAF: f64 = 1e-9;
/// Largest admissible `horizon / h`.
pub const MAX_STEPS: f64 = 1e8;
const PRUNE: f64 = 36.0;
const MAX_DEPTH: u32 = 60;

/// How event times are located between grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Crossing {
    /// Bridge refinement down to [`LEAF`], linear interpolation inside a leaf.
    #[default]
    Bridge,
    /// Events only at grid and jump times.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    pub step: f64,
    pub crossing: Crossing,
    /// Stable tails: jumps smaller than this are replaced by a Brownian term
    /// of matching variance.
    pub stable_cutoff: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { step: 1e-3, crossing: Crossing::Bridge, stable_cutoff: 0.01 }
    }
}

impl SimOptions {
    pub fn with_step(step: f64) -> Self {
        SimOptions { step, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::domain(format!("step h must be positive, got {}", self.step)));
        }
        if !(self.stable_cutoff > 0.0 && self.stable_cutoff <= 1.0) {
            return Err(Error::domain(format!("stable cutoff must lie in (0, 1], got {}", self.stable_cutoff)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum SizeLaw {
    None,
    Law(JumpLaw),
    /// `-cutoff U^{-1/alpha}`.
    Pareto { alpha: f64, cutoff: f64 },
}

/// Simulation coefficients of a catalog model.
#[derive(Debug, Clone)]
pub(crate) struct Dynamics {
    pub(crate) drift: f64,
    pub(crate) vol: f64,
    rate: f64,
    sizes: SizeLaw,
}

impl Dynamics {
    pub(crate) fn new(model: &LevyModel, opts: &SimOptions) -> Self {
        let sigma = model.sigma();
        match model.jumps() {
            JumpSpec::None => Dynamics { drift: model.drift(), vol: sigma, rate: 0.0, sizes: SizeLaw::None },
            JumpSpec::CompoundPoisson { rate, law } => Dynamics {
                drift: model.drift(),
                vol: sigma,
                rate: *rate,
                sizes: SizeLaw::Law(law.clone()),
            },
            JumpSpec::StableTail { alpha, .. } => {
                let c = model.stable_density_constant();
                let d = opts.stable_cutoff;
                let small_var = c * d.powf(2.0 - alpha) / (2.0 - alpha);
                Dynamics {
                    drift: model.drift() + c * d.powf(1.0 - alpha) / (alpha - 1.0),
                    vol: (sigma * sigma + small_var).sqrt(),
                    rate: c * d.powf(-alpha) / alpha,
                    sizes: SizeLaw::Pareto { alpha: *alpha, cutoff: d },
                }
            }
        }
    }

    fn sample_jump(&self, rng: &mut ChaCha8Rng) -> f64 {
        match &self.sizes {
            SizeLaw::None => 0.0,
            SizeLaw::Law(law) => law.sample(rng),
            SizeLaw::Pareto { alpha, cutoff } => {
                let u: f64 = rng.random();
                -cutoff * (1.0 - u).powf(-1.0 / alpha)
            }
        }
    }
}

/// Event condition on the path value.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Cond {
    AtOrAbove(f64),
    Below(f64),
    AtOrBelow(f64),
}

impl Cond {
    #[inline]
    fn holds(self, x: f64) -> bool {
        match self {
            Cond::AtOrAbove(l) => x >= l,
            Cond::Below(l) => x < l,
            Cond::AtOrBelow(l) => x <= l,
        }
    }

    #[inline]
    fn level(self) -> f64 {
        match self {
            Cond::AtOrAbove(l) | Cond::Below(l) | Cond::AtOrBelow(l) => l,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    seed: u64,
    path: u64,
    vol: f64,
    lc: f64,
    grid_depth: u32,
    leaf_depth: u32,
    interpolate: bool,
}

#[inline]
fn lerp(a: f64, b: f64, ca: f64, cb: f64, t: f64) -> f64 {
    if t <= a {
        ca
    } else if t >= b {
        cb
    } else {
        ca + (cb - ca) * ((t - a) / (b - a))
    }
}

/// One cell `[a, b]` of a path with the jumps in `(a, b]`.
#[derive(Debug, Clone)]
pub(crate) struct Cell {
    n: u64,
    pub(crate) a: f64,
    pub(crate) b: f64,
    ca: f64,
    cb: f64,
    /// `J(a)`.
    j0: f64,
    pub(crate) jumps: Vec<(f64, f64)>,
    geom: Geom,
}

impl Cell {
    #[inline]
    fn time(&self, d: u32, i: u64) -> f64 {
        let den = (1u64 << d) as f64;
        if i as f64 >= den {
            self.b
        } else {
            self.a + self.geom.lc * (i as f64 / den)
        }
    }

    #[inline]
    fn mid(&self, d: u32, i: u64, ca: f64, cb: f64) -> f64 {
        let g = &self.geom;
        if g.vol == 0.0 {
            return 0.5 * (ca + cb);
        }
        let dt = g.lc / (1u64 << d) as f64;
        let z = keyed_normal([g.seed, g.path, self.n, (1u64 << d) + i]);
        0.5 * (ca + cb) + g.vol * (0.25 * dt).sqrt() * z
    }

    fn max_depth(&self) -> u32 {
        let g = &self.geom;
        if g.interpolate {
            if g.vol == 0.0 {
                0
            } else {
                g.leaf_depth
            }
        } else {
            g.grid_depth
        }
    }

    #[inline]
    fn prunable(&self, cond: Cond, xa: f64, xb: f64, dt: f64) -> bool {
        let l = cond.level();
        let v = self.geom.vol;
        2.0 * (xa - l).abs() * (xb - l).abs() > PRUNE * v * v * dt
    }

    /// Continuous part at `t` (the same leaf interpolation every query uses).
    fn c_at(&self, t: f64) -> f64 {
        let depth = if self.geom.vol == 0.0 { 0 } else { self.geom.leaf_depth };
        let (mut d, mut i, mut ca, mut cb) = (0u32, 0u64, self.ca, self.cb);
        while d < depth {
            let m = self.time(d + 1, 2 * i + 1);
            let cm = self.mid(d, i, ca, cb);
            if t == m {
                return cm;
            }
            if t < m {
                cb = cm;
                i *= 2;
            } else {
                ca = cm;
                i = 2 * i + 1;
            }
            d += 1;
        }
        lerp(self.time(d, i), self.time(d, i + 1), ca, cb, t)
    }

    fn j_at(&self, t: f64) -> f64 {
        self.j0 + self.jumps.iter().take_while(|j| j.0 <= t).map(|j| j.1).sum::<f64>()
    }

    pub(crate) fn j_end(&self) -> f64 {
        self.j0 + self.jumps.iter().map(|j| j.1).sum::<f64>()
    }

    /// `X_t` for `t` in the cell.
    pub(crate) fn value(&self, t: f64) -> f64 {
        self.c_at(t) + self.j_at(t)
    }

    /// Left limit `X_{t-}`.
    pub(crate) fn value_left(&self, t: f64) -> f64 {
        self.c_at(t) + self.j0 + self.jumps.iter().take_while(|j| j.0 < t).map(|j| j.1).sum::<f64>()
    }

    /// `inf { t in [lo, hi] ∩ [a, b] : cond(X_t) }`.
    pub(crate) fn first(&self, cond: Cond, lo: f64, hi: f64) -> Option<f64> {
        self.first_rec(0, 0, self.ca, self.cb, self.j0, &self.jumps, cond, lo, hi)
    }

    /// `sup { t in [lo, hi] ∩ [a, b] : cond(X_t) }` (left limits count).
    pub(crate) fn last(&self, cond: Cond, lo: f64, hi: f64) -> Option<f64> {
        self.last_rec(0, 0, self.ca, self.cb, self.j0, &self.jumps, cond, lo, hi)
    }

    #[allow(clippy::too_many_arguments)]
    fn first_rec(
        &self,
        d: u32,
        i: u64,
        ca: f64,
        cb: f64,
        ja: f64,
        jumps: &[(f64, f64)],
        cond: Cond,
        lo: f64,
        hi: f64,
    ) -> Option<f64> {
        let a = self.time(d, i);
        let b = self.time(d, i + 1);
        if b < lo || a > hi {
            return None;
        }
        if d >= self.max_depth() {
            return self.leaf_first(a, b, ca, cb, ja, jumps, cond, lo, hi);
        }
        if jumps.is_empty() && lo <= a && b <= hi {
            let (xa, xb) = (ca + ja, cb + ja);
            if cond.holds(xa) {
                return Some(a);
            }
            if !cond.holds(xb) && self.prunable(cond, xa, xb, b - a) {
                return None;
            }
        }
        let cm = self.mid(d, i, ca, cb);
        let m = self.time(d + 1, 2 * i + 1);
        let split = jumps.partition_point(|j| j.0 <= m);
        let (left, right) = jumps.split_at(split);
        if let Some(t) = self.first_rec(d + 1, 2 * i, ca, cm, ja, left, cond, lo, hi) {
            return Some(t);
        }
        let jm = ja + left.iter().map(|j| j.1).sum::<f64>();
        self.first_rec(d + 1, 2 * i + 1, cm, cb, jm, right, cond, lo, hi)
    }

    #[allow(clippy::too_many_arguments)]
    fn last_rec(
        &self,
        d: u32,
        i: u64,
        ca: f64,
        cb: f64,
        ja: f64,
        jumps: &[(f64, f64)],
        cond: Cond,
        lo: f64,
        hi: f64,
    ) -> Option<f64> {
        let a = self.time(d, i);
        let b = self.time(d, i + 1);
        if b < lo || a > hi {
            return None;
        }
        if d >= self.max_depth() {
            return self.leaf_last(a, b, ca, cb, ja, jumps, cond, lo, hi);
        }
        if jumps.is_empty() && lo <= a && b <= hi {
            let (xa, xb) = (ca + ja, cb + ja);
            if cond.holds(xb) {
                return Some(b);
            }
            if !cond.holds(xa) && self.prunable(cond, xa, xb, b - a) {
                return None;
            }
        }
        let cm = self.mid(d, i, ca, cb);
        let m = self.time(d + 1, 2 * i + 1);
        let split = jumps.partition_point(|j| j.0 <= m);
        let (left, right) = jumps.split_at(split);
        let jm = ja + left.iter().map(|j| j.1).sum::<f64>();
        if let Some(t) = self.last_rec(d + 1, 2 * i + 1, cm, cb, jm, right, cond, lo, hi) {
            return Some(t);
        }
        self.last_rec(d + 1, 2 * i, ca, cm, ja, left, cond, lo, hi)
    }

    /// Pieces of constant `J` inside a leaf: `(start, end, J)`.
    fn pieces(a: f64, b: f64, ja: f64, jumps: &[(f64, f64)]) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(jumps.len() + 1);
        let mut s = a;
        let mut j = ja;
        for &(t, y) in jumps {
            out.push((s, t, j));
            s = t;
            j += y;
        }
        out.push((s, b, j));
        out
    }

    /// Candidate points for grid-only detection: node ends and jump landings.
    fn grid_candidates(&self, a: f64, b: f64, ca: f64, cb: f64, ja: f64, jumps: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(jumps.len() + 2);
        out.push((a, ca + ja));
        let mut j = ja;
        for &(t, y) in jumps {
            j += y;
            out.push((t, self.c_at(t) + j));
        }
        out.push((b, cb + j));
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn leaf_first(
        &self,
        a: f64,
        b: f64,
        ca: f64,
        cb: f64,
        ja: f64,
        jumps: &[(f64, f64)],
        cond: Cond,
        lo: f64,
        hi: f64,
    ) -> Option<f64> {
        if !self.geom.interpolate {
            return self
                .grid_candidates(a, b, ca, cb, ja, jumps)
                .into_iter()
                .find(|&(t, x)| t >= lo && t <= hi && cond.holds(x))
                .map(|(t, _)| t);
        }
        let pieces = Self::pieces(a, b, ja, jumps);
        let last = pieces.len() - 1;
        for (k, (p, r, j)) in pieces.into_iter().enumerate() {
            let s = p.max(lo);
            let e = r.min(hi);
            // a piece ending at a jump only reaches its end as a left limit
            if s > e || (k < last && s >= r) {
                continue;
            }
            let xs = lerp(a, b, ca, cb, s) + j;
            if cond.holds(xs) {
                return Some(s);
            }
            let xe = lerp(a, b, ca, cb, e) + j;
            if cond.holds(xe) {
                let t = s + (cond.level() - xs) / (xe - xs) * (e - s);
                return Some(t.clamp(s, e));
            }
        }
        None
    }

    #[allow(clippy::too_many_arguments)]
    fn leaf_last(
        &self,
        a: f64,
        b: f64,
        ca: f64,
        cb: f64,
        ja: f64,
        jumps: &[(f64, f64)],
        cond: Cond,
        lo: f64,
        hi: f64,
    ) -> Option<f64> {
        if !self.geom.interpolate {
            return self
                .grid_candidates(a, b, ca, cb, ja, jumps)
                .into_iter()
                .rev()
                .find(|&(t, x)| t >= lo && t <= hi && cond.holds(x))
                .map(|(t, _)| t);
        }
        for (p, r, j) in Self::pieces(a, b, ja, jumps).into_iter().rev() {
            let s = p.max(lo);
            let e = r.min(hi);
            if s > e {
                continue;
            }
            let xe = lerp(a, b, ca, cb, e) + j;
            if cond.holds(xe) {
                return Some(e);
            }
            let xs = lerp(a, b, ca, cb, s) + j;
            if cond.holds(xs) {
                let t = s + (cond.level() - xs) / (xe - xs) * (e - s);
                return Some(t.clamp(s, e));
            }
        }
        None
    }

    /// Grid nodes `(t, X_t)` in `(a, b]`.
    fn grid_points(&self, out: &mut Vec<(f64, f64)>) {
        let k = self.geom.grid_depth;
        let mut cs = Vec::with_capacity((1usize << k) + 1);
        self.fill(0, 0, self.ca, self.cb, k, &mut cs);
        cs.push(self.cb);
        let mut ji = 0;
        let mut j = self.j0;
        for (idx, c) in cs.into_iter().enumerate().skip(1) {
            let t = self.time(k, idx as u64);
            while ji < self.jumps.len() && self.jumps[ji].0 <= t {
                j += self.jumps[ji].1;
                ji += 1;
            }
            out.push((t, c + j));
        }
    }

    /// Continuous part at the left end of every depth-`k` node, in order.
    fn fill(&self, d: u32, i: u64, ca: f64, cb: f64, k: u32, out: &mut Vec<f64>) {
        if d == k {
            out.push(ca);
            return;
        }
        let cm = self.mid(d, i, ca, cb);
        self.fill(d + 1, 2 * i, ca, cm, k, out);
        self.fill(d + 1, 2 * i + 1, cm, cb, k, out);
    }
}

/// Everything needed to generate paths of one model under one seed.
#[derive(Debug, Clone)]
pub(crate) struct PathSource {
    pub(crate) dynamics: Dynamics,
    seed: u64,
    step: f64,
    lc: f64,
    grid_depth: u32,
    leaf_depth: u32,
    interpolate: bool,
}

impl PathSource {
    /// Monotone models are accepted here: their paths are still well defined.
    pub(crate) fn new(model: &LevyModel, seed: u64, opts: &SimOptions) -> Result<Self> {
        opts.validate()?;
        let h = opts.step;
        let mut lc = h;
        let mut k = 0u32;
        while lc < 0.5 && k < MAX_DEPTH {
            lc *= 2.0;
            k += 1;
        }
        let extra = if h > LEAF { (h / LEAF).log2().ceil() as u32 } else { 0 };
        Ok(PathSource {
            dynamics: Dynamics::new(model, opts),
            seed,
            step: h,
            lc,
            grid_depth: k,
            leaf_depth: (k + extra).min(MAX_DEPTH),
            interpolate: opts.crossing == Crossing::Bridge,
        })
    }

    pub(crate) fn check_horizon(&self, horizon: f64) -> Result<()> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::domain(format!("horizon must be finite and nonnegative, got {horizon}")));
        }
        if horizon / self.step > MAX_STEPS {
            return Err(Error::resource(
                "simulate.steps",
                format!("horizon {horizon} at step {} exceeds {MAX_STEPS:e} steps", self.step),
            ));
        }
        Ok(())
    }

    pub(crate) fn walker(&self, path: u64, x0: f64) -> Walker<'_> {
        Walker {
            src: self,
            path,
            rng: path_rng(self.seed, path),
            n: 0,
            c: x0,
            j: 0.0,
            next_jump: None,
        }
    }

    /// The perturbation resolution gate `eps >= 4 vol sqrt(h)`.
    pub(crate) fn check_eps(&self, eps: f64) -> Result<()> {
        let gate = 4.0 * self.dynamics.vol * self.step.sqrt();
        if !(eps > 0.0) || eps < gate {
            return Err(Error::domain(format!(
                "eps = {eps} is below the resolution gate 4 sigma sqrt(h) = {gate}"
            )));
        }
        Ok(())
    }
}

/// Sequential cell generator for one path.
pub(crate) struct Walker<'a> {
    src: &'a PathSource,
    path: u64,
    pub(crate) rng: ChaCha8Rng,
    n: u64,
    c: f64,
    j: f64,
    next_jump: Option<f64>,
}

impl Walker<'_> {
    pub(crate) fn next_cell(&mut self) -> Cell {
        let s = self.src;
        let dy = &s.dynamics;
        let a = self.n as f64 * s.lc;
        let b = (self.n + 1) as f64 * s.lc;
        let dt = b - a;
        let z = if dy.vol > 0.0 { keyed_normal([s.seed, self.path, self.n, 0]) } else { 0.0 };
        let cb = self.c + dy.drift * dt + dy.vol * dt.sqrt() * z;
        let mut jumps = Vec::new();
        if dy.rate > 0.0 {
            let mut t = match self.next_jump {
                Some(t) => t,
                None => {
                    let e: f64 = Exp1.sample(&mut self.rng);
                    e / dy.rate
                }
            };
            while t <= b {
                let y = dy.sample_jump(&mut self.rng);
                jumps.push((t, y));
                let e: f64 = Exp1.sample(&mut self.rng);
                t += e / dy.rate;
            }
            self.next_jump = Some(t);
        }
        let cell = Cell {
            n: self.n,
            a,
            b,
            ca: self.c,
            cb,
            j0: self.j,
            jumps,
            geom: Geom {
                seed: s.seed,
                path: self.path,
                vol: dy.vol,
                lc: s.lc,
                grid_depth: s.grid_depth,
                leaf_depth: s.leaf_depth,
                interpolate: s.interpolate,
            },
        };
        self.n += 1;
        self.c = cb;
        self.j = cell.j_end();
        cell
    }
}

/// Alternating `sigma^-` / `sigma^+` search over a stream of cells.
#[derive(Debug, Clone)]
pub(crate) struct Perturber {
    eps: f64,
    high: bool,
    pub(crate) minus: Vec<f64>,
    pub(crate) plus: Vec<f64>,
}

impl Perturber {
    pub(crate) fn new(eps: f64) -> Self {
        Perturber { eps, high: false, minus: vec![0.0], plus: Vec::new() }
    }

    pub(crate) fn feed(&mut self, cell: &Cell, hi: f64) {
        let mut s = cell.a;
        loop {
            let found = if self.high {
                cell.first(Cond::Below(0.0), s, hi)
            } else {
                cell.first(Cond::AtOrAbove(self.eps), s, hi)
            };
            match found {
                Some(t) => {
                    if self.high {
                        self.minus.push(t);
                    } else {
                        self.plus.push(t);
                    }
                    self.high = !self.high;
                    s = t;
                }
                None => break,
            }
        }
    }

    /// `M_t = #{k : sigma_k^- < t}`.
    pub(crate) fn count_before(&self, t: f64) -> u64 {
        self.minus.iter().filter(|&&s| s < t).count() as u64
    }
}

/// Upper-level Monte Carlo runners share this loop: walk cells until `hi`.
fn walk<F: FnMut(&Cell) -> bool>(w: &mut Walker<'_>, hi: f64, mut f: F) {
    loop {
        let cell = w.next_cell();
        let go_on = f(&cell);
        if !go_on || cell.b >= hi {
            break;
        }
    }
}

/// A simulated path with its grid values and exact jump list.
#[derive(Debug, Clone)]
pub struct PathSkeleton {
    pub model: LevyModel,
    pub seed: u64,
    pub path_index: u64,
    pub start: f64,
    pub horizon: f64,
    pub step: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `(time, size)`, sizes negative.
    pub jumps: Vec<(f64, f64)>,
    pub(crate) drift: f64,
    pub(crate) vol: f64,
    source: PathSource,
    cells: Vec<Cell>,
}

pub fn simulate_path(model: &LevyModel, horizon: f64, h: f64, seed: u64) -> Result<PathSkeleton> {
    simulate_path_with(model, 0.0, horizon, seed, 0, &SimOptions::with_step(h))
}

pub fn simulate_path_with(
    model: &LevyModel,
    start: f64,
    horizon: f64,
    seed: u64,
    path_index: u64,
    opts: &SimOptions,
) -> Result<PathSkeleton> {
    let src = PathSource::new(model, seed, opts)?;
    src.check_horizon(horizon)?;
    if !start.is_finite() {
        return Err(Error::domain("start value must be finite"));
    }
    let mut w = src.walker(path_index, start);
    let mut cells = Vec::new();
    walk(&mut w, horizon, |c| {
        cells.push(c.clone());
        true
    });
    let mut times = vec![0.0];
    let mut values = vec![start];
    let mut pts = Vec::new();
    for c in &cells {
        pts.clear();
        c.grid_points(&mut pts);
        for &(t, x) in &pts {
            if t < horizon - 0.5 * opts.step {
                times.push(t);
                values.push(x);
            }
        }
    }
    if horizon > 0.0 {
        let last = cells.last().expect("at least one cell");
        times.push(horizon);
        values.push(last.value(horizon));
    }
    let jumps = cells
        .iter()
        .flat_map(|c| c.jumps.iter().copied())
        .filter(|j| j.0 <= horizon)
        .collect();
    Ok(PathSkeleton {
        model: model.clone(),
        seed,
        path_index,
        start,
        horizon,
        step: opts.step,
        times,
        values,
        jumps,
        drift: src.dynamics.drift,
        vol: src.dynamics.vol,
        source: src,
        cells,
    })
}

impl PathSkeleton {
    /// Continuous-part coefficients used for the path: `(drift, vol)`.
    pub fn coefficients(&self) -> (f64, f64) {
        (self.drift, self.vol)
    }

    fn cell_index(&self, t: f64) -> usize {
        let idx = self.cells.partition_point(|c| c.b < t);
        idx.min(self.cells.len() - 1)
    }

    /// `X_t` at any `t` in `[0, horizon]`.
    pub fn value_at(&self, t: f64) -> f64 {
        self.cells[self.cell_index(t)].value(t)
    }

    /// `X_{t-}`.
    pub fn value_left(&self, t: f64) -> f64 {
        self.cells[self.cell_index(t)].value_left(t)
    }

    fn last_between(&self, cond: Cond, lo: f64, hi: f64) -> Option<f64> {
        let i0 = self.cell_index(lo);
        let i1 = self.cell_index(hi);
        (i0..=i1).rev().find_map(|i| self.cells[i].last(cond, lo, hi))
    }

    fn first_between(&self, cond: Cond, lo: f64, hi: f64) -> Option<f64> {
        let i0 = self.cell_index(lo);
        let i1 = self.cell_index(hi);
        (i0..=i1).find_map(|i| self.cells[i].first(cond, lo, hi))
    }

    /// First time in `[from, horizon]` with `X_t >= level`.
    pub fn first_at_or_above(&self, level: f64, from: f64) -> Option<f64> {
        self.first_between(Cond::AtOrAbove(level), from, self.horizon)
    }

    /// First time in `[from, horizon]` with `X_t < level`.
    pub fn first_below(&self, level: f64, from: f64) -> Option<f64> {
        self.first_between(Cond::Below(level), from, self.horizon)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LastZeroTrace {
    pub level: f64,
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub u: Vec<f64>,
    /// `g_t` fell strictly between grid points and is not a jump time.
    pub refined: Vec<bool>,
}

pub fn track_last_zero(path: &PathSkeleton) -> LastZeroTrace {
    track_last_below(path, 0.0)
}

/// `g_t^{(level)} = sup{s <= t : X_s <= level}` on the grid, `sup ∅ = 0`.
pub fn track_last_below(path: &PathSkeleton, level: f64) -> LastZeroTrace {
    let n = path.times.len();
    let mut g = Vec::with_capacity(n);
    let mut refined = Vec::with_capacity(n);
    let mut cur: Option<f64> = None;
    let mut cur_refined = false;
    for i in 0..n {
        let t = path.times[i];
        let lo = if i == 0 { 0.0 } else { path.times[i - 1] };
        if let Some(s) = path.last_between(Cond::AtOrBelow(level), lo, t) {
            cur = Some(s);
            cur_refined = s != t && s != lo && !path.jumps.iter().any(|j| j.0 == s);
        }
        g.push(cur.unwrap_or(0.0));
        refined.push(cur.is_some() && cur_refined);
    }
    let u = path.times.iter().zip(&g).map(|(t, g)| t - g).collect();
    LastZeroTrace { level, times: path.times.clone(), x: path.values.clone(), g, u, refined }
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationRecord {
    pub eps: f64,
    pub sigma_minus: Vec<f64>,
    pub sigma_plus: Vec<f64>,
    pub times: Vec<f64>,
    pub m: Vec<u64>,
    pub x_eps: Vec<f64>,
    pub g_eps: Vec<f64>,
}

impl PerturbationRecord {
    pub fn u_eps(&self) -> Vec<f64> {
        self.times.iter().zip(&self.g_eps).map(|(t, g)| t - g).collect()
    }
}

pub fn perturb(path: &PathSkeleton, eps: f64) -> Result<PerturbationRecord> {
    path.source.check_eps(eps)?;
    let mut p = Perturber::new(eps);
    for c in &path.cells {
        if c.a > path.horizon {
            break;
        }
        p.feed(c, path.horizon);
    }
    let mut m = Vec::with_capacity(path.times.len());
    let mut x_eps = Vec::with_capacity(path.times.len());
    let mut g_eps = Vec::with_capacity(path.times.len());
    for (&t, &x) in path.times.iter().zip(&path.values) {
        m.push(p.count_before(t));
        // the latest sigma^- and sigma^+ at or before t
        let last_minus = p.minus.iter().rev().find(|&&s| s <= t).copied().unwrap_or(0.0);
        let last_plus = p.plus.iter().rev().find(|&&s| s <= t).copied();
        match last_plus {
            Some(sp) if sp >= last_minus => {
                x_eps.push(x);
                g_eps.push(sp);
            }
            _ => {
                x_eps.push(x - eps);
                g_eps.push(t);
            }
        }
    }
    Ok(PerturbationRecord {
        eps,
        sigma_minus: p.minus,
        sigma_plus: p.plus,
        times: path.times.clone(),
        m,
        x_eps,
        g_eps,
    })
}

/// `2 eps M_T^{(eps)}` at the path horizon.
pub fn local_time_estimate(path: &PathSkeleton, eps: f64) -> Result<f64> {
    let rec = perturb(path, eps)?;
    let m = rec.sigma_minus.iter().filter(|&&s| s < path.horizon).count();
    Ok(2.0 * eps * m as f64)
}

fn check_rate(name: &str, q: f64) -> Result<()> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::domain(format!("{name} must be positive and finite, got {q}")));
    }
    Ok(())
}

/// Horizon beyond which `e^{-q t}` is below `1e-10`.
fn discount_horizon(q: f64) -> f64 {
    23.1 / q
}

/// `E(e^{-q tau_a^+}; tau_a^+ < inf)` from `X_0 = 0`, truncated where the
/// discount factor drops below `1e-10`.
pub fn mc_first_passage_up(
    model: &LevyModel,
    q: f64,
    a: f64,
    n: u64,
    seed: u64,
    opts: &SimOptions,
) -> Result<MCEstimate> {
    check_rate("q", q)?;
    if !(a > 0.0) {
        return Err(Error::domain(format!("level a must be positive, got {a}")));
    }
    let src = PathSource::new(model, seed, opts)?;
    let cap = discount_horizon(q);
    src.check_horizon(cap)?;
    let vals = run_paths(n, |i| {
        let mut w = src.walker(i, 0.0);
        let mut hit = None;
        walk(&mut w, cap, |c| {
            hit = c.first(Cond::AtOrAbove(a), c.a, cap);
            hit.is_none()
        });
        Ok(hit.map_or(0.0, |t| (-q * t).exp()))
    })?;
    Ok(MCEstimate::from_values(&vals))
}

/// `E_x(e^{-q tau_0^- + beta X_{tau_0^-}}; tau_0^- < inf)`.
pub fn mc_down_crossing(
    model: &LevyModel,
    q: f64,
    beta: f64,
    x: f64,
    n: u64,
    seed: u64,
    opts: &SimOptions,
) -> Result<MCEstimate> {
    check_rate("q", q)?;
    if !(beta >= 0.0) {
        return Err(Error::domain(format!("beta must be nonnegative, got {beta}")));
    }
    let src = PathSource::new(model, seed, opts)?;
    let cap = discount_horizon(q);
    src.check_horizon(cap)?;
    let vals = run_paths(n, |i| {
        let mut w = src.walker(i, x);
        let mut out = 0.0;
        walk(&mut w, cap, |c| match c.first(Cond::Below(0.0), c.a, cap) {
            Some(t) => {
                let xt = c.value(t).min(0.0);
                out = (-q * t + beta * xt).exp();
                false
            }
            None => true,
        });
        Ok(out)
    })?;
    Ok(MCEstimate::from_values(&vals))
}

/// Draws of `X_T` from `X_0 = x0`.
pub fn sample_terminal(
    model: &LevyModel,
    x0: f64,
    horizon: f64,
    n: u64,
    seed: u64,
    opts: &SimOptions,
) -> Result<Vec<f64>> {
    let src = PathSource::new(model, seed, opts)?;
    src.check_horizon(horizon)?;
    run_paths(n, |i| {
        let mut w = src.walker(i, x0);
        let mut v = x0;
        walk(&mut w, horizon, |c| {
            if c.b >= horizon {
                v = c.value(horizon);
            }
            true
        });
        Ok(v)
    })
}

/// Samples of `(U_{e_q}, X_{e_q})` under `P_{u,x}`.
#[derive(Debug, Clone)]
pub struct UXSamples {
    pub q: f64,
    pub u: f64,
    pub x: f64,
    pub samples: Vec<(f64, f64)>,
    /// Exponential draws beyond the horizon cap that were redrawn.
    pub resampled: u64,
}

impl UXSamples {
    pub fn mean_of<F: Fn(f64, f64) -> f64>(&self, f: F) -> MCEstimate {
        MCEstimate::from_fn(&self.samples, |s| f(s.0, s.1))
    }

    /// Counts of `X_{e_q}` per bin `[edges[i], edges[i+1])`.
    pub fn histogram_x(&self, edges: &[f64]) -> Vec<u64> {
        let mut counts = vec![0u64; edges.len().saturating_sub(1)];
        for &(_, x) in &self.samples {
            let k = edges.partition_point(|&e| e <= x);
            if k >= 1 && k < edges.len() {
                counts[k - 1] += 1;
            }
        }
        counts
    }
}

pub fn sample_u_x_at_exp(
    model: &LevyModel,
    q: f64,
    u: f64,
    x: f64,
    n: u64,
    seed: u64,
    opts: &SimOptions,
) -> Result<UXSamples> {
    check_rate("q", q)?;
    crate::identities::check_state(u, x)?;
    let src = PathSource::new(model, seed, opts)?;
    let cap = 50.0 / q;
    src.check_horizon(cap)?;
    let out = run_paths(n, |i| {
        let mut w = src.walker(i, x);
        let mut redraws = 0u64;
        let e = loop {
            let e: f64 = Exp1.sample(&mut w.rng);
            let e = e / q;
            if e <= cap {
                break e;
            }
            redraws += 1;
        };
        let mut g = None;
        let mut xe = x;
        walk(&mut w, e, |c| {
            if let Some(s) = c.last(Cond::AtOrBelow(0.0), c.a, e) {
                g = Some(s);
            }
            if c.b >= e {
                xe = c.value(e);
            }
            true
        });
        let ue = g.map_or(u + e, |g| e - g);
        Ok(((ue, xe), redraws))
    })?;
    let resampled = out.iter().map(|o| o.1).sum();
    Ok(UXSamples { q, u, x, samples: out.into_iter().map(|o| o.0).collect(), resampled })
}

/// `E[2 eps M_t^{(eps)}]` for several `eps` on the same paths.
pub fn mc_local_time(
    model: &LevyModel,
    eps: &[f64],
    t: f64,
    x0: f64,
    n: u64,
    seed: u64,
    opts: &SimOptions,
) -> Result<Vec<MCEstimate>> {
    let src = PathSource::new(model, seed, opts)?;
    src.check_horizon(t)?;
    for &e in eps {
        src.check_eps(e)?;
    }
    let rows = run_paths(n, |i| {
        let mut w = src.walker(i, x0);
        let mut ps: Vec<Perturber> = eps.iter().map(|&e| Perturber::new(e)).collect();
        walk(&mut w, t, |c| {
            for p in ps.iter_mut() {
                p.feed(c, t);
            }
            true
        });
        Ok(ps.iter().zip(eps).map(|(p, &e)| 2.0 * e * p.count_before(t) as f64).collect::<Vec<_>>())
    })?;
    Ok((0..eps.len())
        .map(|k| MCEstimate::from_fn(&rows, |r| r[k]))
        .collect())
}

/// Law of `M_{e_p}^{(eps)}` from the identities.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PmfFormula {
    /// `I^{(p,0)}(eps) e^{-Phi(p)(eps - x)}`.
    pub a: f64,
    /// `I^{(p,Phi(p))}(eps)`.
    pub r: f64,
}

impl PmfFormula {
    pub fn new(ctx: &IdentityContext, eps: f64, x: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::domain(format!("eps must be positive, got {eps}")));
        }
        if x > eps {
            return Err(Error::domain(format!("start x = {x} must not exceed eps = {eps}")));
        }
        let a = ctx.i_func(0.0, eps)? * (-ctx.phi() * (eps - x)).exp();
        let r = ctx.i_func(ctx.phi(), eps)?;
        Ok(PmfFormula { a, r })
    }

    pub fn prob(&self, m: u64) -> f64 {
        match m {
            0 => 0.0,
            1 => 1.0 - self.a,
            _ => self.a * self.r.powi((m - 2) as i32) * (1.0 - self.r),
        }
    }

    /// `P(M = 1) + sum_{n >= 2} P(M = n)` summed as a geometric series.
    pub fn total(&self) -> f64 {
        let tail = if self.r < 1.0 { self.a * (1.0 - self.r) / (1.0 - self.r) } else { self.a };
        (1.0 - self.a) + tail
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PmfBucket {
    pub m: u64,
    pub count: u64,
    pub empirical: f64,
    pub formula: f64,
    pub expected: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PmfReport {
    pub p: f64,
    pub eps: f64,
    pub x: f64,
    pub n: u64,
    pub formula: PmfFormula,
    pub buckets: Vec<PmfBucket>,
}

impl PmfReport {
    /// Buckets with at least `min_expected` expected hits.
    pub fn checked(&self, min_expected: f64) -> impl Iterator<Item = &PmfBucket> {
        self.buckets.iter().filter(move |b| b.expected >= min_expected)
    }
}

pub fn mc_downcrossing_pmf(
    model: &LevyModel,
    p: f64,
    eps: f64,
    x: f64,
    n: u64,
    seed: u64,
    opts: &SimOptions,
) -> Result<PmfReport> {
    check_rate("p", p)?;
    let ctx = IdentityContext::new(model, p)?;
    let formula = PmfFormula::new(&ctx, eps, x)?;
    let src = PathSource::new(model, seed, opts)?;
    src.check_eps(eps)?;
    let cap = 50.0 / p;
    src.check_horizon(cap)?;
    let counts = run_paths(n, |i| {
        let mut w = src.walker(i, x);
        let e = loop {
            let e: f64 = Exp1.sample(&mut w.rng);
            if e / p <= cap {
                break e / p;
            }
        };
        let mut pert = Perturber::new(eps);
        walk(&mut w, e, |c| {
            pert.feed(c, e);
            true
        });
        Ok(pert.count_before(e))
    })?;
    let max_m = counts.iter().copied().max().unwrap_or(1).max(10);
    let mut hist = vec![0u64; max_m as usize + 1];
    for &m in &counts {
        hist[m as usize] += 1;
    }
    let nf = n as f64;
    let buckets = (1..=max_m)
        .map(|m| {
            let pm = formula.prob(m);
            let count = hist[m as usize];
            let se = (pm * (1.0 - pm) / nf).sqrt();
            let empirical = count as f64 / nf;
            let z = if se > 0.0 { (empirical - pm) / se } else if empirical == pm { 0.0 } else { f64::INFINITY };
            PmfBucket { m, count, empirical, formula: pm, expected: nf * pm, se, z }
        })
        .collect();
    Ok(PmfReport { p, eps, x, n, formula, buckets })
}

/// Observed `(g, X)` at increasing `times` on path `index`, with
/// `g = None` while no visit to `(-inf, 0]` has happened.
pub(crate) fn observe(src: &PathSource, index: u64, x0: f64, times: &[f64]) -> Vec<(Option<f64>, f64)> {
    let mut out = Vec::with_capacity(times.len());
    let Some(&t_end) = times.last() else {
        return out;
    };
    let mut w = src.walker(index, x0);
    let mut g = None;
    let mut k = 0;
    let mut prev = 0.0f64;
    walk(&mut w, t_end, |c| {
        while k < times.len() && times[k] <= c.b {
            let t = times[k];
            if let Some(s) = c.last(Cond::AtOrBelow(0.0), prev.max(c.a), t) {
                g = Some(s);
            }
            out.push((g, c.value(t)));
            prev = t;
            k += 1;
        }
        if let Some(s) = c.last(Cond::AtOrBelow(0.0), prev.max(c.a), c.b.min(t_end)) {
            g = Some(s);
        }
        prev = c.b.min(t_end).max(prev);
        true
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm() -> LevyModel {
        LevyModel::brownian(0.0, 1.0).unwrap()
    }

    #[test]
    fn deterministic_line() {
        let m = LevyModel::new(-2.0, 0.0, JumpSpec::None).unwrap();
        let p = simulate_path_with(&m, -1.0, 3.0, 1, 0, &SimOptions::with_step(0.25)).unwrap();
        for (&t, &x) in p.times.iter().zip(&p.values) {
            assert!((x - (-1.0 + 2.0 * t)).abs() < 1e-12);
        }
        let tr = track_last_zero(&p);
        // X_t <= 0 until t = 0.5
        assert!((tr.g.last().unwrap() - 0.5).abs() < 1e-12);
        assert!(tr.g.iter().zip(&tr.times).all(|(g, t)| *g <= *t));
    }

    #[test]
    fn grid_times_and_halving() {
        let p1 = simulate_path(&bm(), 2.0, 1e-2, 3).unwrap();
        let p2 = simulate_path(&bm(), 2.0, 5e-3, 3).unwrap();
        assert_eq!(p1.times.len(), 201);
        for (i, &t) in p1.times.iter().enumerate() {
            assert!((t - i as f64 * 1e-2).abs() < 1e-12);
            // the finer grid contains the coarse one with the same values
            assert_eq!(p2.times[2 * i], t);
            assert_eq!(p2.values[2 * i], p1.values[i]);
        }
    }

    #[test]
    fn increments_are_exact_gaussian() {
        let p = simulate_path(&bm(), 200.0, 1e-2, 11).unwrap();
        let z: Vec<f64> = p.values.windows(2).map(|w| (w[1] - w[0]) / 0.1).collect();
        let e = MCEstimate::from_values(&z);
        assert!(e.mean.abs() < 4.0 * e.se);
        let v = MCEstimate::from_fn(&z, |z| z * z);
        assert!((v.mean - 1.0).abs() < 4.0 * v.se);
    }

    #[test]
    fn jump_bookkeeping() {
        let m = LevyModel::cp_exponential(1.0, 0.0, 2.0, 0.5).unwrap();
        let p = simulate_path(&m, 10.0, 0.05, 5).unwrap();
        assert!(p.jumps.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(p.jumps.iter().all(|j| j.1 < 0.0));
        // finite variation: X_t = d t + sum of jumps
        for (&t, &x) in p.times.iter().zip(&p.values) {
            let js: f64 = p.jumps.iter().filter(|j| j.0 <= t).map(|j| j.1).sum();
            assert!((x - (p.drift * t + js)).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn positive_path_has_no_zero() {
        let m = LevyModel::new(-1.0, 0.0, JumpSpec::None).unwrap();
        let p = simulate_path_with(&m, 0.5, 2.0, 1, 0, &SimOptions::with_step(0.1)).unwrap();
        let tr = track_last_zero(&p);
        assert!(tr.g.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn trace_invariants() {
        let p = simulate_path(&bm(), 5.0, 1e-3, 21).unwrap();
        let tr = track_last_zero(&p);
        for i in 0..tr.times.len() {
            assert!(tr.g[i] <= tr.times[i]);
            if i > 0 {
                assert!(tr.g[i] >= tr.g[i - 1]);
            }
            if tr.x[i] <= 0.0 {
                assert_eq!(tr.u[i], 0.0);
            }
            if tr.u[i] > 0.0 && tr.g[i] > 0.0 {
                // the path does not return below zero after g
                let lo = p.times.partition_point(|&t| t <= tr.g[i]);
                assert!(tr.x[lo..=i].iter().all(|&x| x > -1e-9));
            }
        }
    }

    #[test]
    fn perturbation_invariants() {
        let p = simulate_path(&bm(), 5.0, 1e-4, 2).unwrap();
        let rec = perturb(&p, 0.1).unwrap();
        assert_eq!(rec.sigma_minus[0], 0.0);
        let mut ev: Vec<f64> = Vec::new();
        for k in 0..rec.sigma_plus.len() {
            ev.push(rec.sigma_minus[k]);
            ev.push(rec.sigma_plus[k]);
        }
        if rec.sigma_minus.len() > rec.sigma_plus.len() {
            ev.push(*rec.sigma_minus.last().unwrap());
        }
        assert!(ev.windows(2).all(|w| w[0] < w[1]));
        let upper = track_last_below(&p, 0.1);
        let zero = track_last_zero(&p);
        for i in 0..rec.times.len() {
            let x = p.values[i];
            assert!(x - 0.1 <= rec.x_eps[i] && rec.x_eps[i] <= x);
            assert!(zero.g[i] <= rec.g_eps[i] + 1e-12, "i={i}");
            assert!(rec.g_eps[i] <= upper.g[i] + 1e-12, "i={i}");
            if i > 0 {
                assert!(rec.m[i] >= rec.m[i - 1]);
            }
        }
    }

    #[test]
    fn jump_from_above_eps_to_below_zero() {
        // unit jumps from a drift of 2: excursions above 0.1 end by jumping below 0
        let m = LevyModel::with_drift(2.0, 0.0, JumpSpec::CompoundPoisson {
            rate: 3.0,
            law: crate::model::JumpLaw::deterministic(-1.0),
        })
        .unwrap();
        let p = simulate_path(&m, 20.0, 0.01, 4).unwrap();
        let rec = perturb(&p, 0.1).unwrap();
        assert!(rec.sigma_minus.len() > 3);
        for k in 0..rec.sigma_plus.len() {
            assert!(rec.sigma_minus[k] < rec.sigma_plus[k]);
            if let Some(&next) = rec.sigma_minus.get(k + 1) {
                assert!(rec.sigma_plus[k] < next);
            }
        }
        let r = mc_downcrossing_pmf(&m, 0.5, 0.1, 0.0, 200, 1, &SimOptions::with_step(0.01)).unwrap();
        assert_eq!(r.n, 200);
    }

    #[test]
    fn large_eps_gives_one_excursion() {
        let p = simulate_path(&bm(), 1.0, 1e-3, 9).unwrap();
        let top = p.values.iter().copied().fold(f64::MIN, f64::max);
        let rec = perturb(&p, top + 1.0).unwrap();
        assert_eq!(rec.sigma_minus, vec![0.0]);
        assert!(rec.sigma_plus.is_empty());
        assert_eq!(*rec.m.last().unwrap(), 1);
    }

    #[test]
    fn resolution_gate() {
        let p = simulate_path(&bm(), 1.0, 1e-2, 9).unwrap();
        assert!(matches!(perturb(&p, 0.3), Err(Error::Domain(_))));
        assert!(perturb(&p, 0.4).is_ok());
    }

    #[test]
    fn drift_away_local_time() {
        let m = LevyModel::new(-5.0, 0.0, JumpSpec::None).unwrap();
        let p = simulate_path(&m, 1.0, 1e-3, 1).unwrap();
        for eps in [0.1, 0.01, 0.001] {
            assert!((local_time_estimate(&p, eps).unwrap() - 2.0 * eps).abs() < 1e-15);
        }
    }

    #[test]
    fn local_time_per_path_monotone_in_t() {
        let p = simulate_path(&bm(), 2.0, 1e-4, 4).unwrap();
        let rec = perturb(&p, 0.05).unwrap();
        assert!(rec.m.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn moments_of_terminal_value() {
        let xs = sample_terminal(&bm(), 0.0, 2.0, 100_000, 7, &SimOptions::with_step(0.01)).unwrap();
        let e = MCEstimate::from_values(&xs);
        assert!(e.mean.abs() < 4.0 * e.se);
        let v = MCEstimate::from_fn(&xs, |x| x * x);
        assert!((v.mean - 2.0).abs() < 4.0 * v.se);

        let m = LevyModel::cp_exponential(1.0, 0.3, 2.0, 0.4).unwrap();
        let xs = sample_terminal(&m, 0.0, 3.0, 100_000, 7, &SimOptions::with_step(0.01)).unwrap();
        let e = MCEstimate::from_values(&xs);
        assert!(e.within(m.psi_derivative(0.0, 1) * 3.0, 4.0), "{e:?}");
    }

    #[test]
    fn pmf_formula_examples() {
        let ctx = IdentityContext::new(&bm(), 0.5).unwrap();
        let f = PmfFormula::new(&ctx, 0.1, 0.0).unwrap();
        assert!((f.prob(1) - (1.0 - (-0.2f64).exp())).abs() < 1e-12);
        assert!((f.total() - 1.0).abs() <= f64::EPSILON);
        let direct: f64 = (1..2000).map(|m| f.prob(m)).sum();
        assert!((direct - 1.0).abs() < 1e-12);
        assert!(matches!(PmfFormula::new(&ctx, 0.1, 0.2), Err(Error::Domain(_))));
    }

    #[test]
    fn state_space_is_checked() {
        let r = sample_u_x_at_exp(&bm(), 1.0, 0.5, -0.5, 10, 1, &SimOptions::default());
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn observe_matches_skeleton() {
        let m = LevyModel::cp_exponential(0.5, 0.7, 1.0, 0.5).unwrap();
        let opts = SimOptions::with_step(0.01);
        let p = simulate_path_with(&m, 0.2, 4.0, 13, 3, &opts).unwrap();
        let tr = track_last_zero(&p);
        let src = PathSource::new(&m, 13, &opts).unwrap();
        let times: Vec<f64> = (1..=40).map(|k| p.times[10 * k]).collect();
        let obs = observe(&src, 3, 0.2, &times);
        for (k, (g, x)) in obs.iter().enumerate() {
            let i = 10 * (k + 1);
            assert_eq!(*x, p.values[i]);
            assert_eq!(g.unwrap_or(0.0), tr.g[i]);
        }
    }
}

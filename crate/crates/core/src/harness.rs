//! Experiment specs, the verification battery and table emission.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{self, apply_generator, dynkin_check, Bump, DynkinOptions, ExpMartingale};
use crate::identities::{IdentityContext, Kernel};
use crate::mc::{check_paths, thread_count, MCEstimate};
use crate::model::{LevyModel, ModelConfig};
use crate::pathsim::{self, Crossing, PmfFormula, SimOptions};
use crate::quad;
use crate::scale::{tilted_scale_identity_residual, Backend, ScaleEvaluator};

pub const REPORT_SCHEMA_VERSION: &str = "lastzero.report/1";

/// JSON schema for [`VerificationReport`].
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Scale,
    Identity,
    Simulate,
    #[default]
    Verify,
    Generator,
}

/// Either an inline model or a path to a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    File { file: PathBuf },
    Inline(ModelConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub json: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs { json: None, csv: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Largest accepted `|z|` for statistical checks.
    pub z: f64,
    /// Default residual bound for deterministic checks.
    pub deterministic: f64,
    /// Relative bound for biased estimators (local time).
    pub relative: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { z: 3.0, deterministic: 1e-8, relative: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleTask {
    pub q: f64,
    /// `start:stop:step`.
    pub grid: String,
    pub backend: Option<String>,
}

impl Default for ScaleTask {
    fn default() -> Self {
        ScaleTask { q: 0.5, grid: "0:5:0.01".into(), backend: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentityTask {
    pub name: String,
    pub q: f64,
    pub args: std::collections::BTreeMap<String, f64>,
}

impl Default for IdentityTask {
    fn default() -> Self {
        IdentityTask { name: "first_passage_up".into(), q: 0.5, args: Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Trace,
    #[default]
    Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateTask {
    /// Path budget, shared by every Monte Carlo task.
    pub n: u64,
    pub horizon: f64,
    pub step: f64,
    pub x0: f64,
    pub crossing: Crossing,
    pub stable_cutoff: f64,
    /// Adds an `M_eps` column to traces.
    pub eps: Option<f64>,
    pub emit: Emit,
}

impl Default for SimulateTask {
    fn default() -> Self {
        let d = SimOptions::default();
        SimulateTask {
            n: 100_000,
            horizon: 1.0,
            step: 0.01,
            x0: 0.0,
            crossing: d.crossing,
            stable_cutoff: d.stable_cutoff,
            eps: None,
            emit: Emit::Stats,
        }
    }
}

impl SimulateTask {
    pub fn sim_options(&self) -> SimOptions {
        SimOptions { step: self.step, crossing: self.crossing, stable_cutoff: self.stable_cutoff }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorTask {
    pub testfn: String,
    /// `(gamma, t, x)`.
    pub state: [f64; 3],
    pub dynkin: bool,
    pub t_max: f64,
    pub panels: usize,
}

impl Default for GeneratorTask {
    fn default() -> Self {
        GeneratorTask { testfn: "expmart:beta=0.5".into(), state: [0.0, 0.0, 1.0], dynkin: false, t_max: 2.0, panels: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyTask {
    pub q: f64,
    /// Include the small-step local-time check (BM(0,1) only).
    pub local_time: bool,
    pub local_time_n: u64,
}

impl Default for VerifyTask {
    fn default() -> Self {
        VerifyTask { q: 0.5, local_time: true, local_time_n: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub task: Task,
    pub model: ModelSource,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Outputs,
    #[serde(default)]
    pub tolerance: Tolerances,
    #[serde(default)]
    pub scale: ScaleTask,
    #[serde(default)]
    pub identity: IdentityTask,
    #[serde(default)]
    pub simulate: SimulateTask,
    #[serde(default)]
    pub generator: GeneratorTask,
    #[serde(default)]
    pub verify: VerifyTask,
}

impl ExperimentSpec {
    pub fn new(task: Task, model: &LevyModel, seed: Option<u64>) -> Self {
        ExperimentSpec {
            task,
            model: ModelSource::Inline(model.to_config()),
            seed,
            output: Outputs::default(),
            tolerance: Tolerances::default(),
            scale: ScaleTask::default(),
            identity: IdentityTask::default(),
            simulate: SimulateTask::default(),
            generator: GeneratorTask::default(),
            verify: VerifyTask::default(),
        }
    }

    /// Parse TOML or JSON.
    pub fn from_str_any(text: &str) -> Result<Self> {
        match serde_json::from_str(text) {
            Ok(s) => Ok(s),
            Err(_) => toml::from_str(text).map_err(|e| Error::config(format!("experiment spec: {e}"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read spec {}: {e}", path.display())))?;
        let mut spec = Self::from_str_any(&text)?;
        // model files are relative to the spec
        if let ModelSource::File { file } = &mut spec.model {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    *file = dir.join(&*file);
                }
            }
        }
        Ok(spec)
    }

    pub fn load_model(&self) -> Result<LevyModel> {
        match &self.model {
            ModelSource::File { file } => LevyModel::load(file),
            ModelSource::Inline(cfg) => LevyModel::from_config(cfg),
        }
    }

    fn needs_seed(&self) -> bool {
        match self.task {
            Task::Simulate | Task::Verify => true,
            Task::Generator => self.generator.dynkin,
            Task::Scale | Task::Identity => false,
        }
    }

    /// Checks that do not need any computation.
    pub fn validate(&self) -> Result<LevyModel> {
        let model = self.load_model()?;
        if self.needs_seed() && self.seed.is_none() {
            return Err(Error::config("`seed` is mandatory for Monte Carlo tasks"));
        }
        if self.needs_seed() {
            check_paths(self.simulate.n)?;
        }
        let t = &self.tolerance;
        if !(t.z > 0.0 && t.deterministic > 0.0 && t.relative > 0.0) {
            return Err(Error::config("tolerances must be positive"));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Pass iff `residual <= tolerance`.
    Deterministic,
    /// Pass iff `|z| <= tolerance`.
    Statistical,
    /// Pass iff `|estimate / formula - 1| <= tolerance`.
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub kind: CheckKind,
    pub formula: f64,
    pub estimate: f64,
    pub se: Option<f64>,
    pub z: Option<f64>,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub note: String,
}

impl CheckResult {
    pub fn deterministic(name: impl Into<String>, formula: f64, estimate: f64, residual: f64, tol: f64) -> Self {
        CheckResult {
            name: name.into(),
            kind: CheckKind::Deterministic,
            formula,
            estimate,
            se: None,
            z: None,
            residual,
            tolerance: tol,
            pass: residual <= tol,
            note: String::new(),
        }
    }

    pub fn statistical(name: impl Into<String>, formula: f64, est: &MCEstimate, z_tol: f64) -> Self {
        let z = est.z_score(formula);
        CheckResult {
            name: name.into(),
            kind: CheckKind::Statistical,
            formula,
            estimate: est.mean,
            se: Some(est.se),
            z: Some(z),
            residual: (est.mean - formula).abs(),
            tolerance: z_tol,
            pass: z.abs() <= z_tol,
            note: String::new(),
        }
    }

    pub fn relative(name: impl Into<String>, formula: f64, est: &MCEstimate, tol: f64) -> Self {
        let rel = (est.mean / formula - 1.0).abs();
        CheckResult {
            name: name.into(),
            kind: CheckKind::Relative,
            formula,
            estimate: est.mean,
            se: Some(est.se),
            z: Some(est.z_score(formula)),
            residual: rel,
            tolerance: tol,
            pass: rel <= tol,
            note: String::new(),
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub all_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub package: String,
    pub version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl Environment {
    pub fn current() -> Self {
        Environment {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: thread_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema_version: String,
    pub model: ModelConfig,
    pub spec: ExperimentSpec,
    pub checks: Vec<CheckResult>,
    pub summary: Summary,
    pub runtime_seconds: f64,
    pub environment: Environment,
}

impl VerificationReport {
    pub fn new(model: &LevyModel, spec: &ExperimentSpec, checks: Vec<CheckResult>, runtime_seconds: f64) -> Self {
        let passed = checks.iter().filter(|c| c.pass).count();
        VerificationReport {
            schema_version: REPORT_SCHEMA_VERSION.into(),
            model: model.to_config(),
            spec: spec.clone(),
            summary: Summary { total: checks.len(), passed, failed: checks.len() - passed, all_pass: passed == checks.len() },
            checks,
            runtime_seconds,
            environment: Environment::current(),
        }
    }
}

fn max_rel<I: IntoIterator<Item = (f64, f64)>>(pairs: I) -> (f64, f64, f64) {
    // (worst residual, formula, value) at the worst point
    let mut worst = (0.0, f64::NAN, f64::NAN);
    for (formula, value) in pairs {
        let r = (value - formula).abs() / formula.abs().max(1e-300);
        if !(r <= worst.0) {
            worst = (r, formula, value);
        }
    }
    worst
}

/// Run the verification battery for the spec's model.
pub fn run_verify_suite(spec: &ExperimentSpec) -> Result<VerificationReport> {
    let started = Instant::now();
    let model = spec.validate()?;
    let seed = spec.seed.expect("validated");
    let n = spec.simulate.n;
    let q = spec.verify.q;
    let tol = spec.tolerance;
    let opts = spec.simulate.sim_options();
    let ctx = IdentityContext::new(&model, q)?;
    let phi = ctx.phi();
    let mut checks = Vec::new();

    // ---- deterministic ----
    let qs = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0];
    let mut worst: f64 = 0.0;
    for &qq in &qs {
        let r = (model.psi(model.phi(qq)?)? - qq).abs() / qq.max(1.0);
        worst = worst.max(r);
    }
    checks.push(CheckResult::deterministic("psi_phi_roundtrip", 0.0, worst, worst, 1e-10));

    let beta = phi + 1.0;
    let lt = ctx.scale().laplace_transform_numeric(beta)?;
    let exact = 1.0 / (model.psi(beta)? - q);
    checks.push(CheckResult::deterministic(
        "scale_laplace_roundtrip",
        exact,
        lt,
        (lt - exact).abs() / exact,
        1e-6,
    ));

    if model.tilt(phi).is_ok() {
        let mut worst: f64 = 0.0;
        for &x in &[0.5, 1.0, 2.0] {
            let r = tilted_scale_identity_residual(ctx.scale(), x)?.abs() / ctx.scale().w(x)?;
            worst = worst.max(r);
        }
        let tol_t = if ctx.scale().backend() == Backend::ClosedForm { tol.deterministic } else { 1e-6 };
        checks.push(CheckResult::deterministic("tilted_scale_identity", 0.0, worst, worst, tol_t));
    }

    let half = phi / 2.0;
    let states = [(0.0, -0.5), (0.0, 0.0), (0.0, 0.4), (0.3, 0.7), (1.2, 1.5)];
    let betas = [0.0, half / 2.0, half];
    let mut pairs = Vec::new();
    for &(u, x) in &states {
        for &b in &betas {
            let lhs = ctx.joint_lt_u_x(0.0, b, u, x)?;
            pairs.push((q * (b * x).exp() / (q - model.psi(b)?), lhs));
        }
    }
    let (r, f, v) = max_rel(pairs);
    checks.push(CheckResult::deterministic("alpha0_reduction", f, v, r, 1e-10));

    let mut pairs = Vec::new();
    for &(u, x) in &states {
        for &(a, b) in &[(0.5, half), (-0.3 * q, half / 2.0), (1.0, 0.0)] {
            let k = Kernel::Separable { alpha: a, beta: b };
            pairs.push((ctx.joint_lt_u_x(a, b, u, x)?, q * ctx.functional_formula(&k, u, x)?));
        }
    }
    let (r, f, v) = max_rel(pairs);
    checks.push(CheckResult::deterministic("functional_separable", f, v, r, 1e-10));

    let x_res = 0.5;
    let left = quad::integrate_from_neg_infinity(|y| ctx.resolvent_density(x_res, y).unwrap_or(f64::NAN), x_res, 1.0)?;
    let right = quad::integrate_to_infinity(|y| ctx.resolvent_density(x_res, y).unwrap_or(f64::NAN), x_res, 1.0)?;
    let mass = left + right;
    checks.push(CheckResult::deterministic("resolvent_mass", 1.0 / q, mass, (mass * q - 1.0).abs(), 1e-4));

    let f = ExpMartingale::new(&model, half)?;
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        // fixed pseudo-random states spread over E_g
        let t = 0.25 + 0.37 * k as f64 % 3.0;
        let x = -1.0 + ((k * 7) % 20) as f64 * 0.17;
        let g = if x <= 0.0 { t } else { t * ((k * 3) % 5) as f64 / 5.0 };
        let a = apply_generator(&model, &f, g, t, x)?;
        worst = worst.max(a.abs() / generator::TestFunction::eval(&f, g, t, x).abs());
    }
    checks.push(CheckResult::deterministic("generator_martingale", 0.0, worst, worst, tol.deterministic));

    let eps = 0.1;
    let pmf_formula = PmfFormula::new(&ctx, eps, 0.0)?;
    let total = pmf_formula.total();
    checks.push(CheckResult::deterministic("pmf_normalization", 1.0, total, (total - 1.0).abs(), 4.0 * f64::EPSILON));

    // ---- statistical ----
    let z = tol.z;
    for (k, &a) in [0.5, 2.0].iter().enumerate() {
        let e = pathsim::mc_first_passage_up(&model, q, a, n, seed.wrapping_add(1 + k as u64), &opts)?;
        checks.push(CheckResult::statistical(format!("first_passage_up_a{a}"), ctx.first_passage_up_lt(a)?, &e, z));
    }

    for (k, &x) in [0.5, 1.0].iter().enumerate() {
        let e = pathsim::mc_down_crossing(&model, q, half, x, n, seed.wrapping_add(3 + k as u64), &opts)?;
        checks.push(CheckResult::statistical(
            format!("down_crossing_x{x}"),
            ctx.down_crossing_joint_lt(half, x)?,
            &e,
            z,
        ));
    }

    let mut ux_samples = None;
    for (k, &(u, x)) in [(0.0, -0.5), (0.3, 0.7)].iter().enumerate() {
        let s = pathsim::sample_u_x_at_exp(&model, q, u, x, n, seed.wrapping_add(5 + k as u64), &opts)?;
        for &(a, b) in &[(0.5, half / 2.0), (-0.3 * q, half / 4.0)] {
            let e = s.mean_of(|uu, xx| (-a * uu + b * xx).exp());
            let c = CheckResult::statistical(format!("joint_lt_u{u}_x{x}_a{a}_b{b}"), ctx.joint_lt_u_x(a, b, u, x)?, &e, z);
            checks.push(if s.resampled > 0 { c.with_note(format!("{} horizon redraws", s.resampled)) } else { c });
        }
        // 2 beta must stay below Phi(q) for a finite variance
        let e = s.mean_of(|_, xx| (half / 2.0 * xx).exp());
        checks.push(CheckResult::statistical(
            format!("exp_moment_x{x}"),
            q * (half / 2.0 * x).exp() / (q - model.psi(half / 2.0)?),
            &e,
            z,
        ));
        ux_samples = Some(s);
    }

    // resolvent histogram of X_{e_q} from x = 0.7
    let s = ux_samples.expect("sampled");
    let edges: Vec<f64> = (0..=20).map(|i| s.x - 3.0 + 0.3 * i as f64).collect();
    let counts = s.histogram_x(&edges);
    let (mut worst_z, mut worst_bin): (f64, usize) = (0.0, 0);
    for i in 0..20 {
        let p = q * quad::integrate(|y| ctx.resolvent_density(s.x, y).unwrap_or(f64::NAN), edges[i], edges[i + 1])?;
        let emp = counts[i] as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let zi = if emp == p { 0.0 } else { (emp - p) / se };
        if zi.abs() > worst_z.abs() {
            worst_z = zi;
            worst_bin = i;
        }
    }
    checks.push(CheckResult {
        name: "resolvent_histogram".into(),
        kind: CheckKind::Statistical,
        formula: 0.0,
        estimate: worst_z,
        se: None,
        z: Some(worst_z),
        residual: worst_z.abs(),
        tolerance: z,
        pass: worst_z.abs() <= z,
        note: format!("largest |z| over 20 bins, at bin {worst_bin}"),
    });

    // the perturbation gate needs eps >= 4 vol sqrt(h)
    let mut pmf_opts = opts;
    pmf_opts.step = opts.step.min((eps / (4.0 * model.sigma().max(1e-300))).powi(2));
    let pmf = pathsim::mc_downcrossing_pmf(&model, q, eps, 0.0, n, seed.wrapping_add(7), &pmf_opts)?;
    for b in pmf.checked(50.0).filter(|b| b.m <= 10) {
        checks.push(CheckResult {
            name: format!("pmf_m{}", b.m),
            kind: CheckKind::Statistical,
            formula: b.formula,
            estimate: b.empirical,
            se: Some(b.se),
            z: Some(b.z),
            residual: (b.empirical - b.formula).abs(),
            tolerance: z,
            pass: b.z.abs() <= z,
            note: String::new(),
        });
    }

    let horizon = 1.0;
    let xs = pathsim::sample_terminal(&model, 0.0, horizon, n, seed.wrapping_add(8), &opts)?;
    let e = MCEstimate::from_values(&xs);
    checks.push(CheckResult::statistical("terminal_mean", model.psi_derivative(0.0, 1) * horizon, &e, z));

    let bump = Bump { center: 0.5, width: 0.5 };
    let dyn_opts = DynkinOptions { panels: 20, sim: opts };
    let d = dynkin_check(&model, &bump, (0.0, 0.0, 0.5), 2.0, n, seed.wrapping_add(9), &dyn_opts)?;
    let worst_k = (0..d.delta.len())
        .max_by(|&a, &b| (d.delta[a] / d.se[a]).abs().total_cmp(&(d.delta[b] / d.se[b]).abs()))
        .unwrap_or(0);
    checks.push(CheckResult {
        name: "dynkin_bump".into(),
        kind: CheckKind::Statistical,
        formula: 0.0,
        estimate: d.delta[worst_k],
        se: Some(d.se[worst_k]),
        z: Some(d.max_abs_z),
        residual: d.delta[worst_k].abs(),
        tolerance: z,
        pass: d.max_abs_z <= z,
        note: format!("largest |z| over {} times, at t = {}", d.times.len(), d.times[worst_k]),
    });

    if spec.verify.local_time && model.is_brownian() && model.mu() == 0.0 && model.sigma() == 1.0 {
        let lt_opts = SimOptions { step: 1e-5, ..opts };
        let eps = [0.08, 0.04, 0.02];
        let nl = spec.verify.local_time_n.min(n).max(1);
        let est = pathsim::mc_local_time(&model, &eps, 1.0, 0.0, nl, seed.wrapping_add(10), &lt_opts)?;
        let target = (2.0 / std::f64::consts::PI).sqrt();
        let last = est.last().expect("three levels");
        let monotone = est.windows(2).all(|w| w[1].mean <= w[0].mean);
        let mut c = CheckResult::relative("local_time_eps0.02", target, last, tol.relative);
        c.pass &= monotone;
        checks.push(c.with_note(format!(
            "E[2 eps M_1] at eps = 0.08, 0.04, 0.02: {:.4}, {:.4}, {:.4}",
            est[0].mean, est[1].mean, est[2].mean
        )));
    }

    Ok(VerificationReport::new(&model, spec, checks, started.elapsed().as_secs_f64()))
}

// ---- emission ----

/// Float cell with 17 significant digits; `None` and NaN give an empty cell.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.16e}")
    }
}

fn opt_float(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

const REPORT_COLUMNS: [&str; 10] =
    ["name", "kind", "formula", "estimate", "se", "z", "residual", "tolerance", "pass", "note"];

/// Per-check detail table. Runtime and thread counts are left out so equal
/// inputs give equal bytes.
pub fn report_csv(report: &VerificationReport) -> Result<String> {
    let rows = report.checks.iter().map(|c| {
        vec![
            c.name.clone(),
            serde_json::to_value(c.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            fmt_float(c.formula),
            fmt_float(c.estimate),
            opt_float(c.se),
            opt_float(c.z),
            fmt_float(c.residual),
            fmt_float(c.tolerance),
            c.pass.to_string(),
            c.note.clone(),
        ]
    });
    csv_bytes(&REPORT_COLUMNS, rows)
}

pub fn report_json(report: &VerificationReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(Format::Csv),
            Some("json") => Ok(Format::Json),
            _ => Err(Error::config(format!("cannot infer csv/json from {}", path.display()))),
        }
    }
}

/// A numeric table with named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> Result<String> {
        let header: Vec<&str> = self.columns.iter().map(|s| s.as_str()).collect();
        csv_bytes(&header, self.rows.iter().map(|r| r.iter().map(|&v| fmt_float(v)).collect()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&serde_json::json!({
            "schema_version": "lastzero.table/1",
            "columns": self.columns,
            "rows": self.rows,
        }))
        .map_err(|e| Error::Io(e.to_string()))
    }

    pub fn emit(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let bad = |e: csv::Error| Error::config(format!("table: {e}"));
        let columns = r.headers().map_err(bad)?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(bad)?;
            let row = rec
                .iter()
                .map(|s| if s.is_empty() { Ok(f64::NAN) } else { s.parse::<f64>() })
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::config(format!("table: {e}")))?;
            rows.push(row);
        }
        Ok(Table { columns, rows })
    }
}

/// Write `contents`, creating parent directories.
pub fn write_output(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

/// Parse `start:stop:step` into grid points (both ends included).
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::config(format!("grid `{spec}` is not start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
    let (a, b, h) = (v[0], v[1], v[2]);
    if !(h > 0.0 && b >= a && a.is_finite() && b.is_finite()) {
        return Err(bad());
    }
    let n = ((b - a) / h + 1e-9).floor() as usize;
    if n > 10_000_000 {
        return Err(Error::resource("scale.grid", format!("{} points exceeds 1e7", n + 1)));
    }
    Ok((0..=n).map(|i| a + i as f64 * h).collect())
}

pub fn scale_table(model: &LevyModel, task: &ScaleTask) -> Result<Table> {
    let ev = match task.backend.as_deref() {
        None => ScaleEvaluator::new(model, task.q)?,
        Some("closed_form") => ScaleEvaluator::with_backend(model, task.q, Backend::ClosedForm)?,
        Some("inversion") => ScaleEvaluator::inversion(model, task.q, 24)?,
        Some(other) => return Err(Error::config(format!("unknown backend `{other}` (closed_form, inversion)"))),
    };
    let mut t = Table::new(&["x", "W"]);
    for x in parse_grid(&task.grid)? {
        t.rows.push(vec![x, ev.w(x)?]);
    }
    Ok(t)
}

fn arg(task: &IdentityTask, k: &str) -> Result<f64> {
    task.args
        .get(k)
        .copied()
        .ok_or_else(|| Error::config(format!("identity `{}` needs `{k}`", task.name)))
}

pub const IDENTITY_NAMES: [&str; 14] = [
    "first_passage_up",
    "i_func",
    "down_crossing",
    "potential_upper",
    "potential_positive",
    "resolvent",
    "joint_lt",
    "functional_separable",
    "functional_indicator",
    "potential_ux",
    "g_laplace",
    "prediction_gain",
    "scale_w",
    "scale_integral",
];

/// Evaluate a named identity with arguments from `task.args`.
pub fn evaluate_identity(model: &LevyModel, task: &IdentityTask) -> Result<f64> {
    let a = |k: &str| arg(task, k);
    if task.name == "prediction_gain" {
        return IdentityContext::new(model, 0.0)?.prediction_gain(a("u")?, a("x")?);
    }
    let ctx = IdentityContext::new(model, task.q)?;
    match task.name.as_str() {
        "first_passage_up" => ctx.first_passage_up_lt(a("a")?),
        "i_func" => ctx.i_func(a("beta")?, a("x")?),
        "down_crossing" => ctx.down_crossing_joint_lt(a("beta")?, a("x")?),
        "potential_upper" => ctx.potential_density_upper(a("a")?, a("x")?, a("y")?),
        "potential_positive" => ctx.potential_density_positive(a("x")?, a("y")?),
        "resolvent" => ctx.resolvent_density(a("x")?, a("y")?),
        "joint_lt" => ctx.joint_lt_u_x(a("alpha")?, a("beta")?, a("u")?, a("x")?),
        "functional_separable" => {
            let k = Kernel::Separable { alpha: a("alpha")?, beta: a("beta")? };
            ctx.functional_formula(&k, a("u")?, a("x")?)
        }
        "functional_indicator" => {
            let k = Kernel::Indicator { u1: a("u1")?, u2: a("u2")?, x1: a("x1")?, x2: a("x2")? };
            ctx.functional_formula(&k, a("u")?, a("x")?)
        }
        "potential_ux" => ctx.potential_density_ux(a("u")?, a("x")?, a("v")?, a("y")?),
        "g_laplace" => ctx.g_laplace_at_exp(a("theta")?, a("x")?),
        "scale_w" => ctx.scale().w(a("x")?),
        "scale_integral" => ctx.scale().integral(a("beta")?, a("x")?),
        other => Err(Error::config(format!("unknown identity `{other}`; known: {}", IDENTITY_NAMES.join(", ")))),
    }
}

/// Trace of path 0: `t, X, g, U` and optionally `M_eps`.
pub fn simulate_trace(model: &LevyModel, seed: u64, task: &SimulateTask) -> Result<Table> {
    let path = pathsim::simulate_path_with(model, task.x0, task.horizon, seed, 0, &task.sim_options())?;
    let tr = pathsim::track_last_zero(&path);
    let pert = task.eps.map(|e| pathsim::perturb(&path, e)).transpose()?;
    let mut cols = vec!["t", "X", "g", "U"];
    if pert.is_some() {
        cols.push("M_eps");
    }
    let mut t = Table::new(&cols);
    for i in 0..tr.times.len() {
        let mut row = vec![tr.times[i], tr.x[i], tr.g[i], tr.u[i]];
        if let Some(p) = &pert {
            row.push(p.m[i] as f64);
        }
        t.rows.push(row);
    }
    Ok(t)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimulationStats {
    pub model: ModelConfig,
    pub seed: u64,
    pub n: u64,
    pub horizon: f64,
    pub x0: f64,
    pub terminal: MCEstimate,
    pub terminal_formula: f64,
    pub terminal_variance: f64,
}

/// Moments of `X_T` over the path budget.
pub fn simulate_stats(model: &LevyModel, seed: u64, task: &SimulateTask) -> Result<SimulationStats> {
    let xs = pathsim::sample_terminal(model, task.x0, task.horizon, task.n, seed, &task.sim_options())?;
    let e = MCEstimate::from_values(&xs);
    let var = e.se * e.se * e.n as f64;
    Ok(SimulationStats {
        model: model.to_config(),
        seed,
        n: task.n,
        horizon: task.horizon,
        x0: task.x0,
        terminal: e,
        terminal_formula: task.x0 + model.psi_derivative(0.0, 1) * task.horizon,
        terminal_variance: var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0:1:0.25").unwrap();
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("0:5:0.01").unwrap().len(), 501);
        assert!(matches!(parse_grid("0:1"), Err(Error::Config(_))));
        assert!(matches!(parse_grid("1:0:0.1"), Err(Error::Config(_))));
    }

    #[test]
    fn table_round_trip_is_byte_identical() {
        let m = LevyModel::brownian(0.0, 1.0).unwrap();
        let t = scale_table(&m, &ScaleTask { q: 0.5, grid: "0:2:0.1".into(), backend: None }).unwrap();
        let csv = t.to_csv().unwrap();
        let again = Table::from_csv(&csv).unwrap().to_csv().unwrap();
        assert_eq!(csv, again);
        assert!(csv.starts_with("x,W\n0.0000000000000000e0,"));
    }

    #[test]
    fn seed_is_mandatory() {
        let m = LevyModel::brownian(0.0, 1.0).unwrap();
        let spec = ExperimentSpec::new(Task::Verify, &m, None);
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let spec = ExperimentSpec::new(Task::Scale, &m, None);
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn zero_budget_is_a_resource_error() {
        let m = LevyModel::brownian(0.0, 1.0).unwrap();
        let mut spec = ExperimentSpec::new(Task::Verify, &m, Some(7));
        spec.simulate.n = 0;
        match run_verify_suite(&spec) {
            Err(Error::Resource { field, .. }) => assert_eq!(field, "simulate.n"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spec_parses_from_toml() {
        let text = r#"
            task = "verify"
            seed = 7
            [model]
            kind = "bm"
            mu = 0.0
            sigma = 1.0
            [simulate]
            n = 1000
            [tolerance]
            z = 3.5
        "#;
        let s = ExperimentSpec::from_str_any(text).unwrap();
        assert_eq!(s.simulate.n, 1000);
        assert_eq!(s.tolerance.z, 3.5);
        assert_eq!(s.load_model().unwrap(), LevyModel::brownian(0.0, 1.0).unwrap());
        assert!(ExperimentSpec::from_str_any("task = \"verify\"\nbogus = 1\n[model]\nkind=\"bm\"\nmu=0\nsigma=1").is_err());
    }

    #[test]
    fn identities_by_name() {
        let m = LevyModel::brownian(0.0, 1.0).unwrap();
        let mut task = IdentityTask { name: "first_passage_up".into(), q: 0.5, args: Default::default() };
        task.args.insert("a".into(), 2.0);
        assert!((evaluate_identity(&m, &task).unwrap() - (-2.0f64).exp()).abs() < 1e-12);
        task.name = "resolvent".into();
        assert!(matches!(evaluate_identity(&m, &task), Err(Error::Config(_))));
        task.name = "nope".into();
        assert!(matches!(evaluate_identity(&m, &task), Err(Error::Config(_))));
    }
}

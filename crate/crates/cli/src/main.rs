//! `lastzero` command-line front end.
//!
//! Every flag maps to a key of the experiment spec (e.g. `--n` is
//! `simulate.n`). Flags override `--config` values unless
//! `--config-priority` is given.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use lastzero::generator::{apply_generator, dynkin_check, parse_test_function, DynkinOptions};
use lastzero::harness::{
    evaluate_identity, report_csv, report_json, run_verify_suite, scale_table, simulate_stats, simulate_trace,
    write_output, Emit, ExperimentSpec, Format, Task,
};
use lastzero::Error;
use toml::{Table, Value};

#[derive(Parser)]
#[command(name = "lastzero", version, about = "Scale functions, last-zero identities and Monte Carlo checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment spec (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Let the spec file win over command-line flags.
    #[arg(long, global = true)]
    config_priority: bool,
    /// Model file (TOML or JSON).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate W^(q) on a grid.
    Scale {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        q: Option<f64>,
        /// start:stop:step
        #[arg(long)]
        grid: Option<String>,
        /// closed_form or inversion
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate one identity.
    Identity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        q: Option<f64>,
        /// key=value, repeatable
        #[arg(long = "arg", value_parser = parse_kv)]
        args: Vec<(String, f64)>,
    },
    /// Simulate paths; `--emit trace.csv` writes one path, `--emit stats.json` moments of X_T.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimFlags,
        #[arg(long = "T")]
        horizon: Option<f64>,
        #[arg(long)]
        x0: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Apply the generator at a state, or run a Dynkin check.
    Generator {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        testfn: Option<String>,
        /// gamma,t,x
        #[arg(long)]
        state: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(subcommand)]
        dynkin: Option<DynkinCmd>,
    },
    /// Run the verification battery.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimFlags,
        #[arg(long)]
        q: Option<f64>,
        /// Skip the small-step local-time check.
        #[arg(long)]
        no_local_time: bool,
        #[arg(long)]
        out_json: Option<PathBuf>,
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DynkinCmd {
    Dynkin {
        #[arg(long)]
        tmax: Option<f64>,
        #[arg(long)]
        panels: Option<u64>,
        #[command(flatten)]
        sim: SimFlags,
    },
}

#[derive(Args, Clone)]
struct SimFlags {
    /// Path budget.
    #[arg(long)]
    n: Option<u64>,
    /// Grid step.
    #[arg(long)]
    h: Option<f64>,
    /// bridge or grid
    #[arg(long)]
    crossing: Option<String>,
}

fn parse_kv(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("`{s}` is not key=value"))?;
    let v = v.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

/// Flag values keyed by spec path.
#[derive(Default)]
struct Overlay(Table);

impl Overlay {
    fn set(&mut self, path: &str, v: impl Into<Value>) {
        let mut keys: Vec<&str> = path.split('.').collect();
        let last = keys.pop().expect("nonempty path");
        let mut t = &mut self.0;
        for k in keys {
            t = t
                .entry(k.to_string())
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .expect("table");
        }
        t.insert(last.to_string(), v.into());
    }

    fn opt<V: Into<Value>>(&mut self, path: &str, v: Option<V>) {
        if let Some(v) = v {
            self.set(path, v);
        }
    }

    fn sim(&mut self, s: &SimFlags) -> anyhow::Result<()> {
        if let Some(n) = s.n {
            self.set("simulate.n", i64::try_from(n).context("--n is too large")?);
        }
        self.opt("simulate.step", s.h);
        self.opt("simulate.crossing", s.crossing.clone());
        Ok(())
    }
}

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn read_config(path: &Path) -> anyhow::Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut t: Table = match serde_json::from_str::<serde_json::Value>(&text) {
        Ok(j) => Table::try_from(j).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        Err(_) => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
    };
    // a relative model path is relative to the spec file
    if let Some(Value::Table(m)) = t.get_mut("model") {
        if let Some(Value::String(f)) = m.get_mut("file") {
            let p = PathBuf::from(&*f);
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *f = dir.join(p).to_string_lossy().into_owned();
                }
            }
        }
    }
    Ok(t)
}

fn build_spec(task: Task, common: &Common, mut flags: Overlay) -> anyhow::Result<ExperimentSpec> {
    let task_name = serde_json::to_value(task)?.as_str().unwrap_or_default().to_string();
    flags.set("task", task_name);
    if let Some(m) = &common.model {
        flags.set("model.file", m.to_string_lossy().into_owned());
    }
    if let Some(s) = common.seed {
        flags.set("seed", i64::try_from(s).context("--seed must fit in i64")?);
    }
    let mut spec = Table::new();
    match &common.config {
        Some(path) => {
            let cfg = read_config(path)?;
            if common.config_priority {
                merge(&mut spec, flags.0);
                merge(&mut spec, cfg);
            } else {
                merge(&mut spec, cfg);
                merge(&mut spec, flags.0);
            }
        }
        None => merge(&mut spec, flags.0),
    }
    if !spec.contains_key("model") {
        return Err(Error::Config("a model is required (--model or `model` in --config)".into()).into());
    }
    Ok(Value::Table(spec).try_into().map_err(|e| Error::Config(format!("experiment spec: {e}")))?)
}

/// A closed pipe (e.g. `| head`) is not an error.
fn to_stdout(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    let nl = if text.ends_with('\n') { "" } else { "\n" };
    match write!(out, "{text}{nl}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn emit(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => Ok(write_output(p, text)?),
        None => to_stdout(text),
    }
}

enum Outcome {
    Pass,
    StatisticalFailure,
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Scale { common, q, grid, backend, out } => {
            let mut o = Overlay::default();
            o.opt("scale.q", q);
            o.opt("scale.grid", grid);
            o.opt("scale.backend", backend);
            if let Some(p) = &out {
                let key = match Format::from_path(p)? {
                    Format::Csv => "output.csv",
                    Format::Json => "output.json",
                };
                o.set(key, p.to_string_lossy().into_owned());
            }
            let spec = build_spec(Task::Scale, &common, o)?;
            let model = spec.validate()?;
            let table = scale_table(&model, &spec.scale)?;
            match (&spec.output.csv, &spec.output.json) {
                (Some(p), _) => emit(&table.to_csv()?, Some(p))?,
                (None, Some(p)) => emit(&table.to_json()?, Some(p))?,
                (None, None) => emit(&table.to_csv()?, None)?,
            }
            Ok(Outcome::Pass)
        }
        Command::Identity { common, name, q, args } => {
            let mut o = Overlay::default();
            o.opt("identity.name", name);
            o.opt("identity.q", q);
            for (k, v) in args {
                o.set(&format!("identity.args.{k}"), v);
            }
            let spec = build_spec(Task::Identity, &common, o)?;
            let model = spec.validate()?;
            let v = evaluate_identity(&model, &spec.identity)?;
            let line = serde_json::json!({
                "identity": spec.identity.name,
                "q": spec.identity.q,
                "args": spec.identity.args,
                "value": v,
            });
            emit(&serde_json::to_string(&line)?, None)?;
            Ok(Outcome::Pass)
        }
        Command::Simulate { common, sim, horizon, x0, eps, emit: target } => {
            let mut o = Overlay::default();
            o.sim(&sim)?;
            o.opt("simulate.horizon", horizon);
            o.opt("simulate.x0", x0);
            o.opt("simulate.eps", eps);
            if let Some(p) = &target {
                let (kind, key) = match Format::from_path(p)? {
                    Format::Csv => ("trace", "output.csv"),
                    Format::Json => ("stats", "output.json"),
                };
                o.set("simulate.emit", kind);
                o.set(key, p.to_string_lossy().into_owned());
            }
            let spec = build_spec(Task::Simulate, &common, o)?;
            let model = spec.validate()?;
            let seed = spec.seed.expect("validated");
            match spec.simulate.emit {
                Emit::Trace => {
                    let t = simulate_trace(&model, seed, &spec.simulate)?;
                    emit(&t.to_csv()?, spec.output.csv.as_deref())?;
                }
                Emit::Stats => {
                    let s = simulate_stats(&model, seed, &spec.simulate)?;
                    emit(&serde_json::to_string_pretty(&s)?, spec.output.json.as_deref())?;
                }
            }
            Ok(Outcome::Pass)
        }
        Command::Generator { common, testfn, state, out, dynkin } => {
            let mut o = Overlay::default();
            o.opt("generator.testfn", testfn);
            if let Some(s) = state {
                let v: Vec<f64> = s
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| Error::Config(format!("--state `{s}` is not gamma,t,x")))?;
                if v.len() != 3 {
                    return Err(Error::Config(format!("--state `{s}` is not gamma,t,x")).into());
                }
                o.set("generator.state", Value::Array(v.into_iter().map(Value::Float).collect()));
            }
            if let Some(p) = &out {
                o.set("output.json", p.to_string_lossy().into_owned());
            }
            if let Some(DynkinCmd::Dynkin { tmax, panels, sim }) = &dynkin {
                o.set("generator.dynkin", true);
                o.opt("generator.t_max", *tmax);
                o.opt("generator.panels", panels.map(|p| p as i64));
                o.sim(sim)?;
            }
            let spec = build_spec(Task::Generator, &common, o)?;
            let model = spec.validate()?;
            let g = &spec.generator;
            let f = parse_test_function(&g.testfn, &model)?;
            let [g0, t0, x0] = g.state;
            if g.dynkin {
                let opts = DynkinOptions { panels: g.panels, sim: spec.simulate.sim_options() };
                let seed = spec.seed.expect("validated");
                let r = dynkin_check(&model, f.as_ref(), (g0, t0, x0), g.t_max, spec.simulate.n, seed, &opts)?;
                emit(&serde_json::to_string_pretty(&r)?, spec.output.json.as_deref())?;
                if r.max_abs_z > spec.tolerance.z {
                    return Ok(Outcome::StatisticalFailure);
                }
            } else {
                let v = apply_generator(&model, f.as_ref(), g0, t0, x0)?;
                let line = serde_json::json!({
                    "testfn": f.label(),
                    "state": g.state,
                    "value": v,
                    "f": f.eval(g0, t0, x0),
                });
                emit(&serde_json::to_string(&line)?, spec.output.json.as_deref())?;
            }
            Ok(Outcome::Pass)
        }
        Command::Verify { common, sim, q, no_local_time, out_json, out_csv } => {
            let mut o = Overlay::default();
            o.sim(&sim)?;
            o.opt("verify.q", q);
            if no_local_time {
                o.set("verify.local_time", false);
            }
            o.opt("output.json", out_json.map(|p| p.to_string_lossy().into_owned()));
            o.opt("output.csv", out_csv.map(|p| p.to_string_lossy().into_owned()));
            let spec = build_spec(Task::Verify, &common, o)?;
            let report = run_verify_suite(&spec)?;
            let csv = report_csv(&report)?;
            if let Some(p) = &spec.output.json {
                write_output(p, &report_json(&report)?)?;
            }
            match &spec.output.csv {
                Some(p) => write_output(p, &csv)?,
                None => to_stdout(&csv)?,
            }
            let s = &report.summary;
            eprintln!("{} of {} checks passed ({:.1} s)", s.passed, s.total, report.runtime_seconds);
            for c in report.checks.iter().filter(|c| !c.pass) {
                eprintln!("FAIL {}: estimate {} formula {} z {:?}", c.name, c.estimate, c.formula, c.z);
            }
            Ok(if s.all_pass { Outcome::Pass } else { Outcome::StatisticalFailure })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::StatisticalFailure) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

//! Command-line surface: models, simulation campaigns, analyses and
//! coverage validation with reproducible manifests.
//!
//! Exit codes: 0 success, 2 argument or config error, 3 validation failure
//! (coverage below the floor or a replay mismatch), 4 numeric error.

pub mod manifest;
pub mod output;

use crate::analysis::{
    chained_boundary, gradient_field, quorum_asymptote, stability_boundary, sweep,
    timeout_for_boundary, Metric, SweepGrid, DEFAULT_GRADIENT_STEP,
};
use crate::error::Error;
use crate::exec::Execution;
use crate::prob::FailureParams;
use crate::protocols::{evaluate, Protocol, ProtocolConfig, QuorumTable};
use crate::sim::{request_log, run_campaign, validate_model, EntryKind, SimConfig, DEFAULT_LEVEL};
use clap::{Args, Parser, Subcommand};
use manifest::{merge_config, sha256_hex, Invocation, OutputDigest, RunManifest};
use output::{fmt_prob, Cell, Format, Table};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const DEFAULT_FLOOR: f64 = 0.9;
pub const DEFAULT_VALIDATE_REQUESTS: u64 = 5000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub(crate) fn internal(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: e.to_string(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Numeric(_) => EXIT_NUMERIC,
            Error::Domain(_) | Error::Config(_) => EXIT_USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn parse_kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "bftprob",
    version,
    about = "Replica-state distributions for BFT happy paths"
)]
pub struct Cli {
    /// Worker threads for campaigns and sweeps; outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analytic per-phase distributions and path success probabilities.
    Model(ModelArgs),
    /// Seeded Monte Carlo campaign.
    Simulate(SimulateArgs),
    /// Boundaries, timeouts, asymptotes, sweeps and gradients.
    Analyze {
        #[command(subcommand)]
        mode: AnalyzeCommand,
    },
    /// Confidence-interval coverage of the model over a failure grid.
    Validate(ValidateArgs),
    /// Re-run a manifest and compare output checksums.
    Replay(ReplayArgs),
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    Boundary(BoundaryArgs),
    Timeout(TimeoutArgs),
    Asymptote(AsymptoteArgs),
    Sweep(SweepArgs),
    Gradient(GradientArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArgs {
    /// JSON file supplying any of the other parameters.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub protocol: Option<Protocol>,
    /// Replica count; defaults to the minimum for `f` and `c`.
    #[arg(short = 'n', long = "n")]
    pub n: Option<usize>,
    #[arg(short = 'f', long = "f")]
    pub f: Option<usize>,
    /// SBFT collector surplus.
    #[arg(short = 'c', long = "c")]
    pub c: Option<usize>,
    #[arg(long)]
    pub pl: Option<f64>,
    #[arg(long)]
    pub pc: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub protocol: Option<Protocol>,
    #[arg(short = 'n', long = "n")]
    pub n: Option<usize>,
    #[arg(short = 'f', long = "f")]
    pub f: Option<usize>,
    #[arg(short = 'c', long = "c")]
    pub c: Option<usize>,
    #[arg(long)]
    pub pl: Option<f64>,
    #[arg(long)]
    pub pc: Option<f64>,
    #[arg(long)]
    pub requests: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Confidence level of the reported intervals.
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Per-request CSV: request_id,replica,phase_reached,crash_phase,path.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Per-request JSON lines with the senders and receivers of each phase.
    #[arg(long)]
    pub detail: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub protocol: Option<Protocol>,
    #[arg(short = 'n', long = "n")]
    pub n: Option<usize>,
    #[arg(short = 'f', long = "f")]
    pub f: Option<usize>,
    #[arg(short = 'c', long = "c")]
    pub c: Option<usize>,
    /// Comma-separated link loss rates.
    #[arg(long, value_delimiter = ',')]
    pub pl: Option<Vec<f64>>,
    /// Comma-separated crash rates.
    #[arg(long, value_delimiter = ',')]
    pub pc: Option<Vec<f64>>,
    #[arg(long)]
    pub requests: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub level: Option<f64>,
    /// Minimum covered fraction for a zero exit status.
    #[arg(long)]
    pub floor: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Shifts every model quorum threshold; the simulator keeps the true ones.
    #[arg(long, hide = true, allow_hyphen_values = true)]
    pub model_quorum_shift: Option<i64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub protocol: Option<Protocol>,
    #[arg(short = 'n', long = "n")]
    pub n: Option<usize>,
    #[arg(short = 'f', long = "f")]
    pub f: Option<usize>,
    /// Expected active senders of the previous phase; without it every
    /// phase is solved as a fixed point.
    #[arg(long)]
    pub expected: Option<f64>,
    #[arg(long)]
    pub pc: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeoutArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Mean message delay.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Loss rate the timeout should induce.
    #[arg(long)]
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoteArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<f64>,
    /// Quorum fraction.
    #[arg(long)]
    pub q: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub protocol: Option<Protocol>,
    /// Fixed fault budget; by default each `n` uses the largest it tolerates.
    #[arg(short = 'f', long = "f")]
    pub f: Option<usize>,
    #[arg(short = 'c', long = "c")]
    pub c: Option<usize>,
    /// Comma-separated replica counts.
    #[arg(short = 'n', long = "n", value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub pl: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub pc: Option<Vec<f64>>,
    /// paths, quorum, live or reach.
    #[arg(long, value_parser = parse_kebab::<Metric>)]
    pub metric: Option<Metric>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub protocol: Option<Protocol>,
    #[arg(short = 'f', long = "f")]
    pub f: Option<usize>,
    #[arg(short = 'c', long = "c")]
    pub c: Option<usize>,
    #[arg(short = 'n', long = "n", value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub pl: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub pc: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_kebab::<Metric>)]
    pub metric: Option<Metric>,
    /// Central-difference step.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Also write the regenerated payloads into this directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// One produced payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub role: &'static str,
    pub path: Option<PathBuf>,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    pub stdout: String,
    pub artifacts: Vec<Artifact>,
    pub code: i32,
}

impl RunOutput {
    fn new(stdout: String) -> Self {
        Self {
            stdout,
            artifacts: Vec::new(),
            code: EXIT_OK,
        }
    }

    fn with(mut self, role: &'static str, path: &Option<PathBuf>, bytes: Vec<u8>) -> Self {
        if path.is_some() {
            self.artifacts.push(Artifact {
                role,
                path: path.clone(),
                bytes,
            });
        }
        self
    }
}

/// Parameters of one subcommand: defaults are filled by `resolve`, after
/// which `run` is a pure function of the serialized value.
trait Params: Serialize + DeserializeOwned + Sized {
    const NAME: &'static str;
    fn config_path(&self) -> Option<&Path>;
    fn resolve(self) -> CliResult<Self>;
    fn run(&self, exec: Execution) -> CliResult<RunOutput>;
    fn seed(&self) -> Option<u64> {
        None
    }
}

fn require<T: Copy>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::usage(format!("missing required parameter --{flag}")))
}

fn protocol_config(
    protocol: Option<Protocol>,
    n: &mut Option<usize>,
    f: Option<usize>,
    c: &mut Option<usize>,
) -> CliResult<ProtocolConfig> {
    let protocol = require(protocol, "protocol")?;
    let f = require(f, "f")?;
    let c = *c.get_or_insert(0);
    let n = *n.get_or_insert(ProtocolConfig::minimal(protocol, f, c).n);
    Ok(ProtocolConfig::new(protocol, n, f, c)?)
}

fn config_of(
    protocol: Option<Protocol>,
    n: Option<usize>,
    f: Option<usize>,
    c: Option<usize>,
) -> CliResult<ProtocolConfig> {
    let (mut n, mut c) = (n, c);
    protocol_config(protocol, &mut n, f, &mut c)
}

fn prefix(cfg: &ProtocolConfig, p_l: f64, p_c: f64) -> Vec<Cell> {
    vec![
        Cell::text(cfg.protocol.name()),
        Cell::int(cfg.n as u64),
        Cell::int(cfg.f as u64),
        Cell::int(cfg.c as u64),
        Cell::Real(p_l),
        Cell::Real(p_c),
    ]
}

const PREFIX: [&str; 6] = ["protocol", "n", "f", "c", "p_l", "p_c"];

fn columns(extra: &[&'static str]) -> Vec<&'static str> {
    PREFIX.iter().chain(extra).copied().collect()
}

impl Params for ModelArgs {
    const NAME: &'static str = "model";

    fn config_path(&self) -> Option<&Path> {
        self.config.as_deref()
    }

    fn resolve(mut self) -> CliResult<Self> {
        protocol_config(self.protocol, &mut self.n, self.f, &mut self.c)?;
        self.pl.get_or_insert(0.0);
        self.pc.get_or_insert(0.0);
        self.format.get_or_insert_with(Format::default);
        Ok(self)
    }

    fn run(&self, _exec: Execution) -> CliResult<RunOutput> {
        let cfg = config_of(self.protocol, self.n, self.f, self.c)?;
        let fp = FailureParams::new(require(self.pl, "pl")?, require(self.pc, "pc")?)?;
        let trace = evaluate(&cfg, &fp)?;
        let mut table = Table::new(columns(&["phase", "k", "prob"]));
        for stage in &trace.stages {
            for (k, &p) in stage.pmf.mass().iter().enumerate() {
                let mut row = prefix(&cfg, fp.p_l, fp.p_c);
                row.extend([Cell::text(&stage.name), Cell::int(k as u64), Cell::Real(p)]);
                table.push(row);
            }
        }
        table.sort_by(&["phase", "k"]);
        let mut out = String::new();
        let success = trace
            .path_prob("combined")
            .or_else(|| trace.path_success.first().map(|(_, p)| *p))
            .unwrap_or(0.0);
        writeln!(out, "success={}", fmt_prob(success)).unwrap();
        for (name, p) in &trace.path_success {
            writeln!(out, "{name}={}", fmt_prob(*p)).unwrap();
        }
        if let Some(p) = trace.primary_quorum_prob {
            writeln!(out, "primary_quorum={}", fmt_prob(p)).unwrap();
        }
        let format = self.format.unwrap_or_default();
        Ok(RunOutput::new(out).with("output", &self.output, table.render(format)))
    }
}

impl SimulateArgs {
    fn sim_config(&self) -> CliResult<SimConfig> {
        let cfg = config_of(self.protocol, self.n, self.f, self.c)?;
        let fp = FailureParams::new(require(self.pl, "pl")?, require(self.pc, "pc")?)?;
        let mut sim = SimConfig::new(
            cfg,
            fp,
            require(self.requests, "requests")?,
            require(self.seed, "seed")?,
        );
        sim.level = require(self.level, "level")?;
        sim.record_phase_detail = self.detail.is_some();
        sim.validate()?;
        Ok(sim)
    }
}

impl Params for SimulateArgs {
    const NAME: &'static str = "simulate";

    fn config_path(&self) -> Option<&Path> {
        self.config.as_deref()
    }

    fn resolve(mut self) -> CliResult<Self> {
        protocol_config(self.protocol, &mut self.n, self.f, &mut self.c)?;
        self.pl.get_or_insert(0.0);
        self.pc.get_or_insert(0.0);
        self.level.get_or_insert(DEFAULT_LEVEL);
        self.format.get_or_insert_with(Format::default);
        require(self.requests, "requests")?;
        require(self.seed, "seed")?;
        self.sim_config()?;
        Ok(self)
    }

    fn seed(&self) -> Option<u64> {
        self.seed
    }

    fn run(&self, exec: Execution) -> CliResult<RunOutput> {
        let sim = self.sim_config()?;
        let cfg = sim.protocol;
        let fp = sim.failures;
        let stats = run_campaign(&sim, exec)?;
        let mut table = Table::new(columns(&[
            "requests",
            "seed",
            "kind",
            "name",
            "k",
            "value",
            "std_error",
            "lower",
            "upper",
        ]));
        let row = |kind: &str, name: &str, k: Option<usize>, rest: [Cell; 4]| {
            let mut row = prefix(&cfg, fp.p_l, fp.p_c);
            row.extend([
                Cell::int(sim.requests),
                Cell::int(sim.seed),
                Cell::text(kind),
                Cell::text(name),
                k.map_or(Cell::Empty, |k| Cell::int(k as u64)),
            ]);
            row.extend(rest);
            row
        };
        for s in &stats.stages {
            table.push(row(
                "stage",
                &s.name,
                None,
                [
                    Cell::Real(s.frequency),
                    Cell::Real(s.std_error),
                    Cell::Real(s.interval.lower),
                    Cell::Real(s.interval.upper),
                ],
            ));
            for (k, p) in s.pmf(sim.requests).into_iter().enumerate() {
                table.push(row(
                    "pmf",
                    &s.name,
                    Some(k),
                    [Cell::Real(p), Cell::Empty, Cell::Empty, Cell::Empty],
                ));
            }
        }
        for p in &stats.paths {
            table.push(row(
                "path",
                &p.name,
                None,
                [
                    Cell::Real(p.frequency),
                    Cell::Real(p.std_error),
                    Cell::Real(p.interval.lower),
                    Cell::Real(p.interval.upper),
                ],
            ));
        }
        table.sort_by(&["kind", "name", "k"]);

        let mut out = String::new();
        writeln!(out, "requests={}", sim.requests).unwrap();
        for p in &stats.paths {
            writeln!(
                out,
                "{}={} std_error={}",
                p.name,
                fmt_prob(p.frequency),
                fmt_prob(p.std_error)
            )
            .unwrap();
        }
        if let Some(last) = stats.stages.last() {
            writeln!(out, "reach.{}={}", last.name, fmt_prob(last.frequency)).unwrap();
        }

        let format = self.format.unwrap_or_default();
        let mut result = RunOutput::new(out).with("output", &self.output, table.render(format));
        if self.log.is_some() || self.detail.is_some() {
            let records = request_log(&sim, exec)?;
            let mut log = Table::new(vec![
                "request_id",
                "replica",
                "phase_reached",
                "crash_phase",
                "path",
            ]);
            let mut detail = Vec::new();
            for r in &records {
                for i in 0..r.completed.len() {
                    log.push(vec![
                        Cell::int(r.request_id),
                        Cell::int(i as u64),
                        Cell::int(r.phase_reached(i)),
                        r.crash_phase(i).map_or(Cell::Empty, Cell::int),
                        Cell::text(r.path.as_str()),
                    ]);
                }
                if self.detail.is_some() {
                    let line = serde_json::json!({
                        "request_id": r.request_id,
                        "path": r.path,
                        "phases": r.detail,
                    });
                    serde_json::to_writer(&mut detail, &line).map_err(CliError::internal)?;
                    detail.push(b'\n');
                }
            }
            result =
                result
                    .with("log", &self.log, log.to_csv())
                    .with("detail", &self.detail, detail);
        }
        Ok(result)
    }
}

impl ValidateArgs {
    fn grid(&self) -> Vec<(f64, f64)> {
        let sorted = |v: &Option<Vec<f64>>| {
            let mut v = v.clone().unwrap_or_else(|| vec![0.0]);
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let (pcs, pls) = (sorted(&self.pc), sorted(&self.pl));
        pcs.iter()
            .flat_map(|&pc| pls.iter().map(move |&pl| (pc, pl)))
            .collect()
    }
}

impl Params for ValidateArgs {
    const NAME: &'static str = "validate";

    fn config_path(&self) -> Option<&Path> {
        self.config.as_deref()
    }

    fn resolve(mut self) -> CliResult<Self> {
        protocol_config(self.protocol, &mut self.n, self.f, &mut self.c)?;
        self.pl.get_or_insert_with(|| vec![0.0]);
        self.pc.get_or_insert_with(|| vec![0.0]);
        if self.pl.as_ref().is_some_and(Vec::is_empty)
            || self.pc.as_ref().is_some_and(Vec::is_empty)
        {
            return Err(CliError::usage("failure-rate lists must not be empty"));
        }
        self.requests.get_or_insert(DEFAULT_VALIDATE_REQUESTS);
        require(self.seed, "seed")?;
        self.level.get_or_insert(DEFAULT_LEVEL);
        let floor = *self.floor.get_or_insert(DEFAULT_FLOOR);
        if !(0.0..=1.0).contains(&floor) {
            return Err(CliError::usage(format!(
                "floor must lie in [0, 1], got {floor}"
            )));
        }
        self.format.get_or_insert_with(Format::default);
        self.model_quorum_shift.get_or_insert(0);
        Ok(self)
    }

    fn seed(&self) -> Option<u64> {
        self.seed
    }

    fn run(&self, exec: Execution) -> CliResult<RunOutput> {
        let cfg = config_of(self.protocol, self.n, self.f, self.c)?;
        let shift = self.model_quorum_shift.unwrap_or(0);
        let quorums = (shift != 0).then(|| QuorumTable::for_config(&cfg).shifted(shift));
        let requests = require(self.requests, "requests")?;
        let seed = require(self.seed, "seed")?;
        let mut table = Table::new(columns(&[
            "requests",
            "seed",
            "kind",
            "name",
            "predicted",
            "empirical",
            "lower",
            "upper",
            "covered",
        ]));
        let (mut covered, mut total) = (0usize, 0usize);
        for (p_c, p_l) in self.grid() {
            let mut sim = SimConfig::new(cfg, FailureParams::new(p_l, p_c)?, requests, seed);
            sim.level = require(self.level, "level")?;
            sim.validate()?;
            let report = validate_model(&sim, quorums.as_ref(), exec)?;
            covered += report.covered();
            total += report.entries.len();
            for e in &report.entries {
                let mut row = prefix(&cfg, p_l, p_c);
                row.extend([
                    Cell::int(requests),
                    Cell::int(seed),
                    Cell::text(match e.kind {
                        EntryKind::Stage => "stage",
                        EntryKind::Path => "path",
                    }),
                    Cell::text(&e.name),
                    Cell::Real(e.predicted),
                    Cell::Real(e.empirical),
                    Cell::Real(e.interval.lower),
                    Cell::Real(e.interval.upper),
                    Cell::Bool(e.covered),
                ]);
                table.push(row);
            }
        }
        table.sort_by(&["p_c", "p_l", "kind", "name"]);
        let fraction = if total == 0 {
            1.0
        } else {
            covered as f64 / total as f64
        };
        let floor = require(self.floor, "floor")?;
        let mut out = String::new();
        writeln!(out, "coverage={}", fmt_prob(fraction)).unwrap();
        writeln!(out, "covered={covered} entries={total}").unwrap();
        writeln!(out, "floor={}", fmt_prob(floor)).unwrap();
        let mut result = RunOutput::new(out).with(
            "output",
            &self.output,
            table.render(self.format.unwrap_or_default()),
        );
        if fraction < floor {
            result.code = EXIT_VALIDATION;
        }
        Ok(result)
    }
}

impl Params for BoundaryArgs {
    const NAME: &'static str = "analyze boundary";

    fn config_path(&self) -> Option<&Path> {
        self.config.as_deref()
    }

    fn resolve(mut self) -> CliResult<Self> {
        let protocol = *self.protocol.get_or_insert(Protocol::Pbft);
        let f = require(self.f, "f")?;
        self.n
            .get_or_insert(ProtocolConfig::minimal(protocol, f, 0).n);
        if self.expected.is_none() {
            self.pc.get_or_insert(0.0);
        }
        Ok(self)
    }

    fn run(&self, _exec: Execution) -> CliResult<RunOutput> {
        let n = require(self.n, "n")?;
        let f = require(self.f, "f")?;
        let mut out = String::new();
        if let Some(expected) = self.expected {
            if self.pc.is_some() {
                return Err(CliError::usage("--pc applies only without --expected"));
            }
            writeln!(
                out,
                "boundary={}",
                fmt_prob(stability_boundary(f, n, expected)?)
            )
            .unwrap();
        } else {
            let cfg = ProtocolConfig::new(require(self.protocol, "protocol")?, n, f, 0)?;
            let report = chained_boundary(&cfg, require(self.pc, "pc")?)?;
            for (phase, b) in &report.phases {
                writeln!(out, "{phase}={}", fmt_prob(*b)).unwrap();
            }
            writeln!(out, "boundary={}", fmt_prob(report.boundary)).unwrap();
        }
        Ok(RunOutput::new(out))
    }
}

impl Params for TimeoutArgs {
    const NAME: &'static str = "analyze timeout";

    fn config_path(&self) -> Option<&Path> {
        self.config.as_deref()
    }

    fn resolve(self) -> CliResult<Self> {
        require(self.mu, "mu")?;
        require(self.sigma, "sigma")?;
        require(self.rate, "rate")?;
        Ok(self)
    }

    fn run(&self, _exec: Execution) -> CliResult<RunOutput> {
        let report = timeout_for_boundary(
            require(self.mu, "mu")?,
            require(self.sigma, "sigma")?,
            require(self.rate, "rate")?,
        )?;
        let mut out = String::new();
        for (label, t) in [
            ("paper_convention", report.paper_convention),
            ("miss_rate_convention", report.miss_rate_convention),
        ] {
            writeln!(out, "{label}={} ({t:.2})", fmt_prob(t)).unwrap();
        }
        Ok(RunOutput::new(out))
    }
}

impl Params for AsymptoteArgs {
    const NAME: &'static str = "analyze asymptote";

    fn config_path(&self) -> Option<&Path> {
        self.config.as_deref()
    }

    fn resolve(self) -> CliResult<Self> {
        for (v, name) in [(self.p, "p"), (self.q, "q")] {
            let v = require(v, name)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::usage(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(self)
    }

    fn run(&self, _exec: Execution) -> CliResult<RunOutput> {
        let limit = quorum_asymptote(require(self.p, "p")?, require(self.q, "q")?);
        Ok(RunOutput::new(format!("limit={limit}\n")))
    }
}

fn sweep_grid(
    protocol: Option<Protocol>,
    f: Option<usize>,
    c: Option<usize>,
    n: &Option<Vec<usize>>,
    pl: &Option<Vec<f64>>,
    pc: &Option<Vec<f64>>,
    metric: Option<Metric>,
) -> CliResult<SweepGrid> {
    let grid = SweepGrid {
        protocol: require(protocol, "protocol")?,
        f,
        c: c.unwrap_or(0),
        n_values: n
            .clone()
            .ok_or_else(|| CliError::usage("missing required parameter -n"))?,
        p_l_values: pl.clone().unwrap_or_else(|| vec![0.0]),
        p_c_values: pc.clone().unwrap_or_else(|| vec![0.0]),
        metric: metric.unwrap_or_default(),
    };
    grid.validate()?;
    Ok(grid)
}

impl Params for SweepArgs {
    const NAME: &'static str = "analyze sweep";

    fn config_path(&self) -> Option<&Path> {
        self.config.as_deref()
    }

    fn resolve(mut self) -> CliResult<Self> {
        self.c.get_or_insert(0);
        self.pl.get_or_insert_with(|| vec![0.0]);
        self.pc.get_or_insert_with(|| vec![0.0]);
        self.metric.get_or_insert_with(Metric::default);
        self.format.get_or_insert_with(Format::default);
        sweep_grid(
            self.protocol,
            self.f,
            self.c,
            &self.n,
            &self.pl,
            &self.pc,
            self.metric,
        )?;
        Ok(self)
    }

    fn run(&self, exec: Execution) -> CliResult<RunOutput> {
        let grid = sweep_grid(
            self.protocol,
            self.f,
            self.c,
            &self.n,
            &self.pl,
            &self.pc,
            self.metric,
        )?;
        let rows = sweep(&grid, exec)?;
        let mut table = Table::new(columns(&["path", "value", "error"]));
        let mut errors = 0;
        for r in &rows {
            let cfg = ProtocolConfig {
                protocol: r.protocol,
                n: r.n,
                f: r.f,
                c: r.c,
            };
            let mut row = prefix(&cfg, r.p_l, r.p_c);
            row.push(Cell::text(&r.path));
            match &r.value {
                Ok(v) => row.extend([Cell::Real(*v), Cell::Empty]),
                Err(e) => {
                    errors += 1;
                    row.extend([Cell::Empty, Cell::text(e)]);
                }
            }
            table.push(row);
        }
        let out = format!("rows={} errors={errors}\n", rows.len());
        Ok(RunOutput::new(out).with(
            "output",
            &self.output,
            table.render(self.format.unwrap_or_default()),
        ))
    }
}

impl Params for GradientArgs {
    const NAME: &'static str = "analyze gradient";

    fn config_path(&self) -> Option<&Path> {
        self.config.as_deref()
    }

    fn resolve(mut self) -> CliResult<Self> {
        self.c.get_or_insert(0);
        self.pl.get_or_insert_with(|| vec![0.0]);
        self.pc.get_or_insert_with(|| vec![0.0]);
        self.metric.get_or_insert_with(Metric::default);
        self.step.get_or_insert(DEFAULT_GRADIENT_STEP);
        self.format.get_or_insert_with(Format::default);
        sweep_grid(
            self.protocol,
            self.f,
            self.c,
            &self.n,
            &self.pl,
            &self.pc,
            self.metric,
        )?;
        Ok(self)
    }

    fn run(&self, exec: Execution) -> CliResult<RunOutput> {
        let grid = sweep_grid(
            self.protocol,
            self.f,
            self.c,
            &self.n,
            &self.pl,
            &self.pc,
            self.metric,
        )?;
        let field = gradient_field(&grid, require(self.step, "step")?, exec)?;
        let mut table = Table::new(vec![
            "protocol", "n", "p_c", "p_l", "step", "value", "d_p_c", "d_p_l",
        ]);
        for p in &field.points {
            table.push(vec![
                Cell::text(field.protocol.name()),
                Cell::int(p.n as u64),
                Cell::Real(p.p_c),
                Cell::Real(p.p_l),
                Cell::Real(field.step),
                Cell::Real(p.value),
                Cell::Real(p.d_p_c),
                Cell::Real(p.d_p_l),
            ]);
        }
        table.sort_by(&["n", "p_c", "p_l"]);
        let out = format!("points={}\n", field.points.len());
        Ok(RunOutput::new(out).with(
            "output",
            &self.output,
            table.render(self.format.unwrap_or_default()),
        ))
    }
}

fn invocation<P: Params>(args: &P) -> CliResult<(Invocation, Option<u64>)> {
    let merged: P = merge_config(args, args.config_path())?;
    let resolved = merged.resolve()?;
    let seed = resolved.seed();
    let params = serde_json::to_value(&resolved).map_err(CliError::internal)?;
    Ok((
        Invocation {
            subcommand: P::NAME.to_string(),
            params,
        },
        seed,
    ))
}

fn run_as<P: Params>(params: &serde_json::Value, exec: Execution) -> CliResult<RunOutput> {
    let p: P = serde_json::from_value(params.clone())
        .map_err(|e| CliError::usage(format!("invalid parameters for {}: {e}", P::NAME)))?;
    p.run(exec)
}

/// Runs a resolved invocation without touching the filesystem.
pub fn execute(inv: &Invocation, exec: Execution) -> CliResult<RunOutput> {
    match inv.subcommand.as_str() {
        ModelArgs::NAME => run_as::<ModelArgs>(&inv.params, exec),
        SimulateArgs::NAME => run_as::<SimulateArgs>(&inv.params, exec),
        ValidateArgs::NAME => run_as::<ValidateArgs>(&inv.params, exec),
        BoundaryArgs::NAME => run_as::<BoundaryArgs>(&inv.params, exec),
        TimeoutArgs::NAME => run_as::<TimeoutArgs>(&inv.params, exec),
        AsymptoteArgs::NAME => run_as::<AsymptoteArgs>(&inv.params, exec),
        SweepArgs::NAME => run_as::<SweepArgs>(&inv.params, exec),
        GradientArgs::NAME => run_as::<GradientArgs>(&inv.params, exec),
        other => Err(CliError::usage(format!("unknown subcommand `{other}`"))),
    }
}

fn digests(output: &RunOutput) -> Vec<OutputDigest> {
    let mut out = vec![OutputDigest {
        role: "stdout".into(),
        path: None,
        sha256: sha256_hex(output.stdout.as_bytes()),
    }];
    out.extend(output.artifacts.iter().map(|a| OutputDigest {
        role: a.role.into(),
        path: a.path.as_ref().map(|p| p.display().to_string()),
        sha256: sha256_hex(&a.bytes),
    }));
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

fn manifest_path(output: &RunOutput) -> Option<PathBuf> {
    let first = output.artifacts.first()?.path.as_ref()?;
    let mut name = first.as_os_str().to_owned();
    name.push(".manifest.json");
    Some(PathBuf::from(name))
}

fn run_invocation(
    inv: Invocation,
    seed: Option<u64>,
    exec: Execution,
    stdout: &mut dyn std::io::Write,
    stderr: &mut dyn std::io::Write,
) -> CliResult<i32> {
    let output = execute(&inv, exec)?;
    for a in &output.artifacts {
        if let Some(path) = &a.path {
            write_file(path, &a.bytes)?;
        }
    }
    stdout
        .write_all(output.stdout.as_bytes())
        .map_err(CliError::internal)?;
    let manifest = RunManifest {
        subcommand: inv.subcommand,
        params: inv.params,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: digests(&output),
    };
    let mut text = serde_json::to_vec_pretty(&manifest).map_err(CliError::internal)?;
    text.push(b'\n');
    match manifest_path(&output) {
        Some(path) => write_file(&path, &text)?,
        None => stderr.write_all(&text).map_err(CliError::internal)?,
    }
    Ok(output.code)
}

fn replay(
    args: &ReplayArgs,
    exec: Execution,
    stdout: &mut dyn std::io::Write,
    stderr: &mut dyn std::io::Write,
) -> CliResult<i32> {
    let text = std::fs::read_to_string(&args.manifest).map_err(|e| {
        CliError::usage(format!(
            "cannot read manifest {}: {e}",
            args.manifest.display()
        ))
    })?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("invalid manifest: {e}")))?;
    if manifest.version != env!("CARGO_PKG_VERSION") {
        writeln!(
            stderr,
            "warning: manifest written by version {}, replaying with {}",
            manifest.version,
            env!("CARGO_PKG_VERSION")
        )
        .map_err(CliError::internal)?;
    }
    let output = execute(&manifest.invocation(), exec)?;
    let fresh = digests(&output);
    let mut all_match = true;
    for recorded in &manifest.outputs {
        let regenerated = fresh.iter().find(|d| d.role == recorded.role);
        let ok = regenerated.is_some_and(|d| d.sha256 == recorded.sha256);
        all_match &= ok;
        writeln!(
            stdout,
            "{} {}",
            recorded.role,
            if ok { "match" } else { "mismatch" }
        )
        .map_err(CliError::internal)?;
    }
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
        write_file(&dir.join("stdout.txt"), output.stdout.as_bytes())?;
        for a in &output.artifacts {
            let name = a
                .path
                .as_ref()
                .and_then(|p| p.file_name())
                .map_or_else(|| PathBuf::from(a.role), PathBuf::from);
            write_file(&dir.join(name), &a.bytes)?;
        }
    }
    Ok(if all_match { EXIT_OK } else { EXIT_VALIDATION })
}

fn dispatch(
    cli: Cli,
    stdout: &mut dyn std::io::Write,
    stderr: &mut dyn std::io::Write,
) -> CliResult<i32> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        #[cfg(feature = "parallel")]
        {
            // a pool built earlier in the process keeps its size
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
    }
    let exec = Execution::Parallel;
    let (inv, seed) = match &cli.command {
        Command::Model(a) => invocation(a)?,
        Command::Simulate(a) => invocation(a)?,
        Command::Validate(a) => invocation(a)?,
        Command::Analyze { mode } => match mode {
            AnalyzeCommand::Boundary(a) => invocation(a)?,
            AnalyzeCommand::Timeout(a) => invocation(a)?,
            AnalyzeCommand::Asymptote(a) => invocation(a)?,
            AnalyzeCommand::Sweep(a) => invocation(a)?,
            AnalyzeCommand::Gradient(a) => invocation(a)?,
        },
        Command::Replay(a) => return replay(a, exec, stdout, stderr),
    };
    run_invocation(inv, seed, exec, stdout, stderr)
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = stdout.write_all(rendered.as_bytes());
            } else {
                let _ = stderr.write_all(rendered.as_bytes());
            }
            return if code == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            std::iter::once("bftprob").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn model_trivial_and_constraint() {
        let (code, out, _) = call(&[
            "model",
            "--protocol",
            "pbft",
            "-n",
            "4",
            "-f",
            "1",
            "--pl",
            "0",
            "--pc",
            "0",
        ]);
        assert_eq!(code, 0);
        assert!(out.starts_with("success=1.0000000000000000\n"), "{out}");
        let (code, _, err) = call(&[
            "model",
            "--protocol",
            "sbft",
            "-n",
            "5",
            "-f",
            "1",
            "-c",
            "1",
        ]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("n must equal 3f+2c+1"), "{err}");
    }

    #[test]
    fn model_success_matches_library() {
        let (code, out, _) = call(&[
            "model",
            "--protocol",
            "pbft",
            "-n",
            "10",
            "-f",
            "3",
            "--pl",
            "0.1",
            "--pc",
            "0",
        ]);
        assert_eq!(code, 0);
        let cfg = ProtocolConfig::new(Protocol::Pbft, 10, 3, 0).unwrap();
        let trace = evaluate(&cfg, &FailureParams::new(0.1, 0.0).unwrap()).unwrap();
        let expected = fmt_prob(trace.path_prob("happy").unwrap());
        assert!(out.contains(&format!("success={expected}\n")));
    }

    #[test]
    fn analyze_printed_numbers() {
        let (_, out, _) = call(&[
            "analyze", "timeout", "--mu", "100", "--sigma", "10", "--rate", "0.1",
        ]);
        assert!(out.contains("paper_convention=87.18"), "{out}");
        assert!(out.contains("miss_rate_convention=112.81"), "{out}");
        assert!(out.contains("(87.18)") && out.contains("(112.82)"), "{out}");
        let (_, out, _) = call(&["analyze", "asymptote", "--p", "0.2", "--q", "0.6667"]);
        assert_eq!(out, "limit=1\n");
        let (_, out, _) = call(&[
            "analyze",
            "boundary",
            "-n",
            "25",
            "-f",
            "8",
            "--expected",
            "25",
        ]);
        assert!(out.starts_with("boundary=0.135"), "{out}");
    }

    #[test]
    fn argument_errors_exit_two() {
        let (code, _, _) = call(&[
            "simulate",
            "--protocol",
            "pbft",
            "-f",
            "1",
            "--requests",
            "0",
            "--seed",
            "1",
        ]);
        assert_eq!(code, EXIT_USAGE);
        let (code, _, _) = call(&[
            "simulate",
            "--protocol",
            "pbft",
            "-f",
            "1",
            "--requests",
            "10",
        ]);
        assert_eq!(code, EXIT_USAGE);
        let (code, _, _) = call(&["model", "--protocol", "raft", "-f", "1"]);
        assert_eq!(code, EXIT_USAGE);
        let (code, _, _) = call(&["model", "--protocol", "pbft", "-f", "1", "--pl", "1.5"]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn manifest_on_stderr_without_output() {
        let (code, out, err) = call(&["analyze", "asymptote", "--p", "0.5", "--q", "0.5"]);
        assert_eq!(code, 0);
        assert_eq!(out, "limit=0.5\n");
        let m: RunManifest = serde_json::from_str(&err).unwrap();
        assert_eq!(m.subcommand, "analyze asymptote");
        assert_eq!(m.outputs[0].sha256, sha256_hex(out.as_bytes()));
        let rerun = execute(&m.invocation(), Execution::Sequential).unwrap();
        assert_eq!(rerun.stdout, out);
    }
}

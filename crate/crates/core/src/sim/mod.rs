//! Seeded, phase-stepped simulator of the four happy paths.
//!
//! Each request is simulated independently. Every point-to-point message is
//! omitted with `p_l` and every process that a phase addresses misses that
//! whole phase with `p_c`. Receiver sets and quorum rules mirror the analytic
//! models, so each simulated request yields one sample of every model stage.

mod pbft;
pub(crate) mod rng;
mod sbft;
mod smart;
mod zyzzyva;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::prob::{normal_quantile, FailureParams};
use crate::protocols::{evaluate_with, Protocol, ProtocolConfig, QuorumTable};
use rng::{kind, Stream};

pub const DEFAULT_LEVEL: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub protocol: ProtocolConfig,
    pub failures: FailureParams,
    pub requests: u64,
    pub seed: u64,
    pub record_phase_detail: bool,
    /// Confidence level of campaign intervals.
    pub level: f64,
}

impl SimConfig {
    pub fn new(
        protocol: ProtocolConfig,
        failures: FailureParams,
        requests: u64,
        seed: u64,
    ) -> Self {
        Self {
            protocol,
            failures,
            requests,
            seed,
            record_phase_detail: false,
            level: DEFAULT_LEVEL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.protocol.validate()?;
        self.failures.validate()?;
        if self.requests == 0 {
            return Err(Error::config("requests must be at least 1"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::domain(format!(
                "confidence level must lie in (0, 1), got {}",
                self.level
            )));
        }
        if self.protocol.n >= 1 << 23 {
            return Err(Error::config(format!(
                "n = {} is too large to simulate",
                self.protocol.n
            )));
        }
        Ok(())
    }
}

/// Model stages and paths in trace order, with each stage's largest count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub stages: Vec<(String, usize)>,
    pub paths: Vec<&'static str>,
}

pub fn layout(config: &ProtocolConfig) -> Layout {
    let n = config.n;
    let named = |v: &[(&str, usize)]| v.iter().map(|(s, k)| (s.to_string(), *k)).collect();
    match config.protocol {
        Protocol::Pbft => Layout {
            stages: named(&[
                ("C1", n - 1),
                ("N1", n - 1),
                ("C2n", n - 1),
                ("C2", n),
                ("N2", n),
                ("C3", n),
                ("N3", n),
            ]),
            paths: vec!["happy", "liveness"],
        },
        Protocol::BftSmart => Layout {
            stages: named(&[
                ("C1", n - 1),
                ("N1", n - 1),
                ("C2", n),
                ("N2", n),
                ("C3", n),
                ("N3", n),
            ]),
            paths: vec!["happy"],
        },
        Protocol::Zyzzyva => Layout {
            stages: named(&[
                ("C1", n - 1),
                ("N1", n),
                ("C2_fast", 1),
                ("C2_slow", 1),
                ("N2", 1),
                ("C3", n),
                ("N3", n),
                ("C4", 1),
                ("N4", 1),
            ]),
            paths: vec!["fast", "slow", "combined"],
        },
        Protocol::Sbft => {
            let k = config.c + 1;
            let mut stages = vec![("C1".to_string(), n - 1), ("N1".to_string(), n)];
            let front = [
                ("C2", k),
                ("N2", k),
                ("C3", n),
                ("N3", n),
                ("C4", k),
                ("N4", k),
            ];
            let back = [("C5", n), ("N5", n), ("C6", k), ("N6", k)];
            stages.extend(front.iter().map(|(s, m)| (format!("{s}_fast"), *m)));
            stages.extend(
                front
                    .iter()
                    .chain(&back)
                    .map(|(s, m)| (format!("{s}_slow"), *m)),
            );
            Layout {
                stages,
                paths: vec!["fast", "slow", "slow_exclusive", "combined"],
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathTaken {
    Happy,
    Fast,
    Slow,
    None,
}

impl PathTaken {
    pub fn as_str(self) -> &'static str {
        match self {
            PathTaken::Happy => "happy",
            PathTaken::Fast => "fast",
            PathTaken::Slow => "slow",
            PathTaken::None => "none",
        }
    }
}

/// Who took part in one phase. A process that crashed in the phase is in
/// neither list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseDetail {
    pub phase: u8,
    /// Processes that completed the phase and emitted its outgoing messages.
    pub senders: Vec<u32>,
    /// Processes addressed in the phase that were up to receive.
    pub receivers: Vec<u32>,
    pub crashed: Vec<u32>,
}

/// Outcome of one simulated request.
///
/// Participant `i < n` is replica `i` (the primary is 0); Zyzzyva adds the
/// client as participant `n`. Phase masks use bit `p - 1` for phase `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimRecord {
    pub request_id: u64,
    pub completed: Vec<u8>,
    /// Phases in which the participant was addressed but crashed.
    pub crashed: Vec<u8>,
    pub path: PathTaken,
    /// Final replica count reached `2f+1`; absent when the final stage does
    /// not count replicas.
    pub quorum_success: Option<bool>,
    pub live_success: Option<bool>,
    /// One sample per model stage, in layout order.
    pub stage_counts: Vec<u32>,
    pub path_success: Vec<bool>,
    pub detail: Option<Vec<PhaseDetail>>,
}

fn highest(mask: u8) -> u8 {
    8 - mask.leading_zeros() as u8
}

impl SimRecord {
    /// Highest phase the participant completed, 0 for none.
    pub fn phase_reached(&self, participant: usize) -> u8 {
        highest(self.completed[participant])
    }

    /// First phase in which the participant crashed.
    pub fn crash_phase(&self, participant: usize) -> Option<u8> {
        let m = self.crashed[participant];
        (m != 0).then(|| m.trailing_zeros() as u8 + 1)
    }

    /// Checks that no participant completed a phase it crashed in and that
    /// every completed phase has its prerequisites.
    pub fn check_invariants(&self, config: &ProtocolConfig) -> std::result::Result<(), String> {
        for (i, (&done, &down)) in self.completed.iter().zip(&self.crashed).enumerate() {
            if done & down != 0 {
                return Err(format!(
                    "participant {i} completed phases {done:#08b} but crashed in {down:#08b}"
                ));
            }
            let client = config.protocol == Protocol::Zyzzyva && i == config.n;
            for phase in 1..=8u8 {
                if done & (1 << (phase - 1)) == 0 {
                    continue;
                }
                let need = prerequisites(config.protocol, client, phase);
                if done & need != need {
                    return Err(format!(
                        "participant {i} completed phase {phase} without its prerequisites"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Phases a participant must have completed before completing `phase`.
fn prerequisites(protocol: Protocol, client: bool, phase: u8) -> u8 {
    let bit = |p: u8| 1u8 << (p - 1);
    match (protocol, client, phase) {
        (Protocol::Pbft, _, 2) => bit(1),
        (Protocol::Pbft, _, 3) => bit(1) | bit(2),
        // a holder that missed the prepare quorum may still commit
        (Protocol::BftSmart, _, 2 | 3) => bit(1),
        (Protocol::Zyzzyva, true, 4) => bit(2),
        (Protocol::Sbft, _, 2 | 4 | 5 | 6) => bit(1),
        _ => 0,
    }
}

/// Mutable state of one request as the protocol runs.
pub(crate) struct Trial {
    stream: Stream,
    p_l: f64,
    p_c: f64,
    completed: Vec<u8>,
    crashed: Vec<u8>,
    addressed: Vec<u8>,
    counts: Vec<u32>,
    paths: Vec<bool>,
}

impl Trial {
    fn new(config: &SimConfig, request: u64, participants: usize) -> Self {
        Self {
            stream: Stream::new(config.seed, request),
            p_l: config.failures.p_l,
            p_c: config.failures.p_c,
            completed: vec![0; participants],
            crashed: vec![0; participants],
            addressed: vec![0; participants],
            counts: Vec::with_capacity(18),
            paths: Vec::with_capacity(4),
        }
    }

    #[inline]
    pub(crate) fn delivered(&self, phase: u8, kind: u8, from: usize, to: usize) -> bool {
        !self
            .stream
            .event(self.p_l, phase, kind, from as u32, to as u32)
    }

    /// Number of `senders` (other than `to`) whose message reaches `to`,
    /// stopping once `need` is certain either way.
    pub(crate) fn count_from(
        &self,
        phase: u8,
        kind: u8,
        senders: &[usize],
        to: usize,
        need: i64,
    ) -> i64 {
        let total = senders.iter().filter(|&&s| s != to).count() as i64;
        let mut got = 0i64;
        let mut seen = 0i64;
        for &s in senders {
            if s == to {
                continue;
            }
            if got >= need || got + (total - seen) < need {
                break;
            }
            seen += 1;
            got += self.delivered(phase, kind, s, to) as i64;
        }
        got
    }

    /// Number of `senders` (other than `to`) whose message reaches `to`.
    pub(crate) fn count_all(&self, phase: u8, kind: u8, senders: &[usize], to: usize) -> i64 {
        senders
            .iter()
            .filter(|&&s| s != to && self.delivered(phase, kind, s, to))
            .count() as i64
    }

    /// Marks `proc` as addressed in `phase` and returns whether it stays up.
    pub(crate) fn up(&mut self, phase: u8, proc: usize) -> bool {
        let bit = 1 << (phase - 1);
        self.addressed[proc] |= bit;
        let down = self
            .stream
            .event(self.p_c, phase, kind::CRASH, proc as u32, 0);
        if down {
            self.crashed[proc] |= bit;
        }
        !down
    }

    pub(crate) fn complete(&mut self, proc: usize, phase: u8) {
        self.completed[proc] |= 1 << (phase - 1);
    }

    pub(crate) fn stage(&mut self, count: usize) {
        self.counts.push(count as u32);
    }

    pub(crate) fn path(&mut self, ok: bool) {
        self.paths.push(ok);
    }

    fn finish(
        self,
        request_id: u64,
        path: PathTaken,
        final_count: Option<(usize, usize)>,
        detail: bool,
    ) -> SimRecord {
        let detail = detail.then(|| {
            let phases = self
                .addressed
                .iter()
                .chain(&self.completed)
                .fold(0, |a, m| a | m);
            (1..=highest(phases))
                .map(|phase| {
                    let bit = 1 << (phase - 1);
                    let pick = |pred: &dyn Fn(usize) -> bool| {
                        (0..self.completed.len())
                            .filter(|&i| pred(i))
                            .map(|i| i as u32)
                            .collect()
                    };
                    PhaseDetail {
                        phase,
                        senders: pick(&|i| self.completed[i] & bit != 0),
                        receivers: pick(&|i| {
                            self.addressed[i] & bit != 0 && self.crashed[i] & bit == 0
                        }),
                        crashed: pick(&|i| self.crashed[i] & bit != 0),
                    }
                })
                .collect()
        });
        let (quorum_success, live_success) = match final_count {
            Some((count, f)) => (Some(count > 2 * f), Some(count > f)),
            None => (None, None),
        };
        SimRecord {
            request_id,
            completed: self.completed,
            crashed: self.crashed,
            path,
            quorum_success,
            live_success,
            stage_counts: self.counts,
            path_success: self.paths,
            detail,
        }
    }
}

fn simulate_unchecked(config: &SimConfig, request_index: u64) -> SimRecord {
    let cfg = &config.protocol;
    let participants = cfg.n + usize::from(cfg.protocol == Protocol::Zyzzyva);
    let mut trial = Trial::new(config, request_index, participants);
    let (path, final_count) = match cfg.protocol {
        Protocol::Pbft => pbft::run(cfg, &mut trial),
        Protocol::BftSmart => smart::run(cfg, &mut trial),
        Protocol::Zyzzyva => zyzzyva::run(cfg, &mut trial),
        Protocol::Sbft => sbft::run(cfg, &mut trial),
    };
    let final_count = final_count.map(|c| (c, cfg.f));
    trial.finish(request_index, path, final_count, config.record_phase_detail)
}

/// Simulates request `request_index`; the result depends only on the seed,
/// the configuration and the index.
pub fn simulate_request(config: &SimConfig, request_index: u64) -> Result<SimRecord> {
    config.validate()?;
    Ok(simulate_unchecked(config, request_index))
}

/// Every request of the campaign, in index order.
pub fn request_log(config: &SimConfig, exec: Execution) -> Result<Vec<SimRecord>> {
    config.validate()?;
    Ok(exec.map((0..config.requests).collect(), |i| {
        simulate_unchecked(config, i)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalKind {
    /// Normal approximation around the sample mean, clamped to `[0, 1]`;
    /// collapses to a point when the sample shows no variation.
    WaldNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    fn wald(mean: f64, std_error: f64, z: f64) -> Self {
        Self {
            lower: (mean - z * std_error).max(0.0),
            upper: (mean + z * std_error).min(1.0),
        }
    }

    pub fn contains(&self, x: f64, tolerance: f64) -> bool {
        x >= self.lower - tolerance && x <= self.upper + tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub name: String,
    pub support_max: usize,
    pub mean_count: f64,
    /// Probability that a representative member of the stage's population
    /// is counted: `mean_count / support_max`.
    pub frequency: f64,
    pub std_error: f64,
    pub interval: Interval,
    /// Requests per count value.
    pub histogram: Vec<u64>,
}

impl StageStats {
    pub fn pmf(&self, requests: u64) -> Vec<f64> {
        self.histogram
            .iter()
            .map(|&h| h as f64 / requests as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    pub name: String,
    pub successes: u64,
    pub frequency: f64,
    pub std_error: f64,
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub config: SimConfig,
    pub interval_kind: IntervalKind,
    pub stages: Vec<StageStats>,
    pub paths: Vec<PathStats>,
}

impl CampaignStats {
    pub fn stage(&self, name: &str) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn path(&self, name: &str) -> Option<&PathStats> {
        self.paths.iter().find(|p| p.name == name)
    }

    /// Empirical distribution of the final stage's count.
    pub fn final_pmf(&self) -> Vec<f64> {
        self.stages
            .last()
            .map(|s| s.pmf(self.config.requests))
            .unwrap_or_default()
    }
}

/// Integer sums over requests; merging is exact, so any reduction order
/// gives the same totals.
#[derive(Debug, Clone)]
struct Tally {
    requests: u64,
    sum: Vec<u64>,
    sum_sq: Vec<u64>,
    histogram: Vec<Vec<u64>>,
    paths: Vec<u64>,
}

impl Tally {
    fn new(layout: &Layout) -> Self {
        Self {
            requests: 0,
            sum: vec![0; layout.stages.len()],
            sum_sq: vec![0; layout.stages.len()],
            histogram: layout.stages.iter().map(|(_, m)| vec![0; m + 1]).collect(),
            paths: vec![0; layout.paths.len()],
        }
    }

    fn add(mut self, record: &SimRecord) -> Self {
        self.requests += 1;
        for (i, &c) in record.stage_counts.iter().enumerate() {
            let c64 = c as u64;
            self.sum[i] += c64;
            self.sum_sq[i] += c64 * c64;
            self.histogram[i][c as usize] += 1;
        }
        for (acc, &ok) in self.paths.iter_mut().zip(&record.path_success) {
            *acc += ok as u64;
        }
        self
    }

    fn merge(mut self, other: Self) -> Self {
        self.requests += other.requests;
        let add = |a: &mut [u64], b: &[u64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.sum, &other.sum);
        add(&mut self.sum_sq, &other.sum_sq);
        add(&mut self.paths, &other.paths);
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            add(a, b);
        }
        self
    }
}

pub fn run_campaign(config: &SimConfig, exec: Execution) -> Result<CampaignStats> {
    config.validate()?;
    let layout = layout(&config.protocol);
    let tally = exec.fold_range(
        0..config.requests,
        || Tally::new(&layout),
        |t, i| t.add(&simulate_unchecked(config, i)),
        Tally::merge,
    );
    let z = normal_quantile(0.5 + config.level / 2.0)?;
    let t = tally.requests as f64;
    let stages = layout
        .stages
        .iter()
        .enumerate()
        .map(|(i, (name, support))| {
            let pop = (*support).max(1) as f64;
            let mean_count = tally.sum[i] as f64 / t;
            let frequency = mean_count / pop;
            // sample variance of the per-request fraction count / pop
            let var = if tally.requests > 1 {
                let sq = tally.sum_sq[i] as f64 / (pop * pop);
                ((sq - t * frequency * frequency) / (t - 1.0)).max(0.0)
            } else {
                0.0
            };
            let std_error = (var / t).sqrt();
            StageStats {
                name: name.clone(),
                support_max: *support,
                mean_count,
                frequency,
                std_error,
                interval: Interval::wald(frequency, std_error, z),
                histogram: tally.histogram[i].clone(),
            }
        })
        .collect();
    let paths = layout
        .paths
        .iter()
        .zip(&tally.paths)
        .map(|(name, &successes)| {
            let frequency = successes as f64 / t;
            let std_error = (frequency * (1.0 - frequency) / t).sqrt();
            PathStats {
                name: name.to_string(),
                successes,
                frequency,
                std_error,
                interval: Interval::wald(frequency, std_error, z),
            }
        })
        .collect();
    Ok(CampaignStats {
        config: *config,
        interval_kind: IntervalKind::WaldNormal,
        stages,
        paths,
    })
}

/// Slack when testing whether an interval covers a prediction.
pub const COVERAGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    Stage,
    Path,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub kind: EntryKind,
    pub name: String,
    pub predicted: f64,
    pub empirical: f64,
    pub interval: Interval,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub config: SimConfig,
    pub interval_kind: IntervalKind,
    pub entries: Vec<CoverageEntry>,
}

impl CoverageReport {
    pub fn covered(&self) -> usize {
        self.entries.iter().filter(|e| e.covered).count()
    }

    pub fn fraction(&self) -> f64 {
        self.covered() as f64 / self.entries.len().max(1) as f64
    }

    pub fn entry(&self, name: &str) -> Option<&CoverageEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Runs a campaign and checks every stage frequency and path probability of
/// the model against its interval. `quorums` replaces the model's quorum
/// table (the simulator keeps the true one).
pub fn validate_model(
    config: &SimConfig,
    quorums: Option<&QuorumTable>,
    exec: Execution,
) -> Result<CoverageReport> {
    let table = quorums
        .copied()
        .unwrap_or_else(|| config.protocol.quorums());
    let trace = evaluate_with(&config.protocol, &config.failures, &table)?;
    let stats = run_campaign(config, exec)?;
    let mut entries = Vec::new();
    for (stage, model) in stats.stages.iter().zip(&trace.stages) {
        debug_assert_eq!(stage.name, model.name);
        let predicted = model.pmf.mean() / stage.support_max.max(1) as f64;
        entries.push(CoverageEntry {
            kind: EntryKind::Stage,
            name: stage.name.clone(),
            predicted,
            empirical: stage.frequency,
            interval: stage.interval,
            covered: stage.interval.contains(predicted, COVERAGE_TOLERANCE),
        });
    }
    for path in &stats.paths {
        let predicted = trace.path_prob(&path.name).unwrap_or(f64::NAN);
        entries.push(CoverageEntry {
            kind: EntryKind::Path,
            name: path.name.clone(),
            predicted,
            empirical: path.frequency,
            interval: path.interval,
            covered: path.interval.contains(predicted, COVERAGE_TOLERANCE),
        });
    }
    Ok(CoverageReport {
        config: *config,
        interval_kind: stats.interval_kind,
        entries,
    })
}

//! Analytic happy-path models for PBFT, BFT-SMaRt, Zyzzyva and SBFT.
//!
//! Every model turns a [`ProtocolConfig`] and [`FailureParams`] into a
//! [`PhaseTrace`]: the ordered per-phase count distributions, alternating
//! between message delivery (`C*`) and crash survival (`N*`), plus the
//! success probability of each execution path.

mod pbft;
mod sbft;
mod smart;
mod zyzzyva;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{FailureParams, Pmf};

pub use pbft::{pbft_crash_only, pbft_model, CrashOnlyConvention};
pub use sbft::sbft_model;
pub use smart::smart_model;
pub use zyzzyva::zyzzyva_model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Pbft,
    BftSmart,
    Zyzzyva,
    Sbft,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [
        Protocol::Pbft,
        Protocol::BftSmart,
        Protocol::Zyzzyva,
        Protocol::Sbft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Pbft => "pbft",
            Protocol::BftSmart => "bft-smart",
            Protocol::Zyzzyva => "zyzzyva",
            Protocol::Sbft => "sbft",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pbft" => Ok(Protocol::Pbft),
            "bft-smart" | "bftsmart" | "smart" => Ok(Protocol::BftSmart),
            "zyzzyva" => Ok(Protocol::Zyzzyva),
            "sbft" => Ok(Protocol::Sbft),
            other => Err(Error::config(format!("unknown protocol `{other}`"))),
        }
    }
}

/// Replica count, fault budget and SBFT collector surplus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    pub n: usize,
    pub f: usize,
    /// Redundant SBFT replicas; zero for every other protocol.
    pub c: usize,
}

impl ProtocolConfig {
    pub fn new(protocol: Protocol, n: usize, f: usize, c: usize) -> Result<Self> {
        let cfg = Self { protocol, n, f, c };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Smallest replica set tolerating `f` faults (`3f + 1`, or `3f + 2c + 1`
    /// for SBFT).
    pub fn minimal(protocol: Protocol, f: usize, c: usize) -> Self {
        let n = match protocol {
            Protocol::Sbft => 3 * f + 2 * c + 1,
            _ => 3 * f + 1,
        };
        let c = if protocol == Protocol::Sbft { c } else { 0 };
        Self { protocol, n, f, c }
    }

    pub fn validate(&self) -> Result<()> {
        match self.protocol {
            Protocol::Sbft => {
                if self.n != 3 * self.f + 2 * self.c + 1 {
                    return Err(Error::config(format!(
                        "n must equal 3f+2c+1 = {} for sbft, got n = {}",
                        3 * self.f + 2 * self.c + 1,
                        self.n
                    )));
                }
            }
            _ => {
                if self.c != 0 {
                    return Err(Error::config(format!(
                        "c must be 0 for {}, got c = {}",
                        self.protocol, self.c
                    )));
                }
                if self.n < 3 * self.f + 1 {
                    return Err(Error::config(format!(
                        "n must be at least 3f+1 = {}, got n = {}",
                        3 * self.f + 1,
                        self.n
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn quorums(&self) -> QuorumTable {
        QuorumTable::for_config(self)
    }
}

/// Message counts each phase must collect, derived once per configuration.
///
/// Counts are of messages received over the network; a process's own
/// message is never part of the count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuorumTable {
    Pbft {
        /// Prepares the primary needs on top of its own pre-prepare.
        primary_prepares: i64,
        /// Prepares a backup needs on top of its own prepare and the pre-prepare.
        backup_prepares: i64,
        /// Commits needed on top of the receiver's own commit.
        commits: i64,
        /// Replicas that must finish for the happy path to succeed.
        decided: i64,
        /// Replicas that must finish for the request to stay live.
        live: i64,
    },
    Smart {
        /// Prepares needed from the other pre-prepare holders.
        prepares: i64,
        /// Commits needed by a process that sent one itself.
        commits_own: i64,
        /// Commits needed by a process that skipped the prepare phase.
        commits_skip: i64,
        decided: i64,
    },
    Zyzzyva {
        /// Responses for the single-round fast path.
        fast: i64,
        /// Fewest responses that start the slow path.
        slow: i64,
        /// Local-commit acknowledgements closing the slow path.
        commit: i64,
    },
    Sbft {
        /// Signature shares for the fast path.
        fast: i64,
        /// Fewest signature shares that start the slow path.
        slow: i64,
        /// Execution shares closing either path.
        execute: i64,
        /// Commit shares in the slow path.
        commit: i64,
    },
}

impl QuorumTable {
    pub fn for_config(cfg: &ProtocolConfig) -> Self {
        let f = cfg.f as i64;
        let c = cfg.c as i64;
        match cfg.protocol {
            Protocol::Pbft => QuorumTable::Pbft {
                primary_prepares: 2 * f,
                backup_prepares: 2 * f - 1,
                commits: 2 * f,
                decided: 2 * f + 1,
                live: f + 1,
            },
            Protocol::BftSmart => QuorumTable::Smart {
                prepares: 2 * f,
                commits_own: 2 * f,
                commits_skip: 2 * f + 1,
                decided: 2 * f + 1,
            },
            Protocol::Zyzzyva => QuorumTable::Zyzzyva {
                fast: 3 * f + 1,
                slow: 2 * f + 1,
                commit: 2 * f + 1,
            },
            Protocol::Sbft => QuorumTable::Sbft {
                fast: 3 * f + c + 1,
                slow: 2 * f + c + 1,
                execute: f + 1,
                commit: 2 * f + c + 1,
            },
        }
    }

    /// Every threshold moved by `delta`; used to build deliberately wrong
    /// models for negative controls.
    pub fn shifted(self, delta: i64) -> Self {
        match self {
            QuorumTable::Pbft {
                primary_prepares,
                backup_prepares,
                commits,
                decided,
                live,
            } => QuorumTable::Pbft {
                primary_prepares: primary_prepares + delta,
                backup_prepares: backup_prepares + delta,
                commits: commits + delta,
                decided: decided + delta,
                live: live + delta,
            },
            QuorumTable::Smart {
                prepares,
                commits_own,
                commits_skip,
                decided,
            } => QuorumTable::Smart {
                prepares: prepares + delta,
                commits_own: commits_own + delta,
                commits_skip: commits_skip + delta,
                decided: decided + delta,
            },
            QuorumTable::Zyzzyva { fast, slow, commit } => QuorumTable::Zyzzyva {
                fast: fast + delta,
                slow: slow + delta,
                commit: commit + delta,
            },
            QuorumTable::Sbft {
                fast,
                slow,
                execute,
                commit,
            } => QuorumTable::Sbft {
                fast: fast + delta,
                slow: slow + delta,
                execute: execute + delta,
                commit: commit + delta,
            },
        }
    }
}

/// One named distribution in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub pmf: Pmf,
}

/// Ordered per-phase distributions of one model evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub config: ProtocolConfig,
    pub failures: FailureParams,
    pub stages: Vec<Stage>,
    /// Probability that the PBFT primary collects its prepare quorum.
    pub primary_quorum_prob: Option<f64>,
    /// Success probability per execution path, in a fixed order.
    pub path_success: Vec<(String, f64)>,
}

impl PhaseTrace {
    pub(crate) fn new(config: ProtocolConfig, failures: FailureParams) -> Self {
        Self {
            config,
            failures,
            stages: Vec::new(),
            primary_quorum_prob: None,
            path_success: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, name: &str, pmf: Pmf) {
        self.stages.push(Stage {
            name: name.to_string(),
            pmf,
        });
    }

    pub(crate) fn path(&mut self, name: &str, prob: f64) {
        self.path_success
            .push((name.to_string(), prob.clamp(0.0, 1.0)));
    }

    pub fn stage(&self, name: &str) -> Option<&Pmf> {
        self.stages.iter().find(|s| s.name == name).map(|s| &s.pmf)
    }

    pub fn final_stage(&self) -> &Stage {
        self.stages.last().expect("trace has at least one stage")
    }

    pub fn path_prob(&self, name: &str) -> Option<f64> {
        self.path_success
            .iter()
            .find(|(p, _)| p == name)
            .map(|(_, v)| *v)
    }

    /// Renormalises every stage, failing if any drifted past tolerance.
    pub(crate) fn finish(mut self) -> Result<Self> {
        for stage in &mut self.stages {
            let pmf = std::mem::replace(&mut stage.pmf, Pmf::point(0, 0));
            stage.pmf = pmf.normalized().map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("stage {}: {msg}", stage.name)),
                other => other,
            })?;
        }
        Ok(self)
    }
}

/// `P(final count >= threshold)`.
pub fn success_probability(trace: &PhaseTrace, threshold: i64) -> Result<f64> {
    if threshold < 0 {
        return Err(Error::domain(format!(
            "threshold must be non-negative, got {threshold}"
        )));
    }
    Ok(trace.final_stage().pmf.tail(threshold as usize))
}

/// Evaluates the model matching `config.protocol` with its own quorums.
pub fn evaluate(config: &ProtocolConfig, failures: &FailureParams) -> Result<PhaseTrace> {
    evaluate_with(config, failures, &config.quorums())
}

/// Evaluates a model under an explicit quorum table.
pub fn evaluate_with(
    config: &ProtocolConfig,
    failures: &FailureParams,
    quorums: &QuorumTable,
) -> Result<PhaseTrace> {
    config.validate()?;
    failures.validate()?;
    match (config.protocol, quorums) {
        (Protocol::Pbft, QuorumTable::Pbft { .. })
        | (Protocol::BftSmart, QuorumTable::Smart { .. })
        | (Protocol::Zyzzyva, QuorumTable::Zyzzyva { .. })
        | (Protocol::Sbft, QuorumTable::Sbft { .. }) => {}
        _ => {
            return Err(Error::config(format!(
                "quorum table does not belong to {}",
                config.protocol
            )))
        }
    }
    match config.protocol {
        Protocol::Pbft => pbft::model(config, failures, quorums),
        Protocol::BftSmart => smart::model(config, failures, quorums),
        Protocol::Zyzzyva => zyzzyva::model(config, failures, quorums),
        Protocol::Sbft => sbft::model(config, failures, quorums),
    }
}

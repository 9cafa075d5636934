//! Stability boundary, timeout tuning, quorum asymptotics and parameter
//! sweeps over the analytic models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::prob::{normal_quantile, range_unchecked, FailureParams};
use crate::protocols::{evaluate, success_probability, PhaseTrace, Protocol, ProtocolConfig};

/// Failure rate past which the expected link failures can defeat a quorum
/// phase fed by `expected_prev` active processes.
pub fn stability_boundary(f: usize, n: usize, expected_prev: f64) -> Result<f64> {
    if expected_prev.is_nan() || expected_prev <= 1.0 {
        return Err(Error::domain(format!(
            "expected active count must exceed 1, got {expected_prev}"
        )));
    }
    if expected_prev > n as f64 + 1e-9 {
        return Err(Error::domain(format!(
            "expected active count {expected_prev} exceeds n = {n}"
        )));
    }
    let margin = (f as f64 + 1.0) - (n as f64 - expected_prev);
    Ok(margin * margin / (expected_prev * (expected_prev - 1.0)))
}

fn require_pbft_like(config: &ProtocolConfig) -> Result<()> {
    config.validate()?;
    match config.protocol {
        Protocol::Pbft | Protocol::BftSmart => Ok(()),
        other => Err(Error::config(format!(
            "stability boundary is defined for the three-phase protocols, not {other}"
        ))),
    }
}

/// Boundary of each quorum phase at the trace's operating point: prepares
/// are fed by the pre-prepare holders and the primary, commits by `N2`.
pub fn phase_boundaries(trace: &PhaseTrace) -> Result<Vec<(String, f64)>> {
    require_pbft_like(&trace.config)?;
    let (n, f) = (trace.config.n, trace.config.f);
    let stage = |name: &str| {
        trace
            .stage(name)
            .ok_or_else(|| Error::Numeric(format!("trace has no stage {name}")))
    };
    let prepare = stability_boundary(f, n, stage("N1")?.mean() + 1.0)?;
    let commit = stability_boundary(f, n, stage("N2")?.mean())?;
    Ok(vec![("prepare".into(), prepare), ("commit".into(), commit)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    /// Link failure rate at which each phase's boundary meets the rate that
    /// produced its inputs.
    pub phases: Vec<(String, f64)>,
    /// Smallest of the per-phase rates.
    pub boundary: f64,
}

/// Solves `p_l = boundary(E[N_prev](p_l))` per phase by bisection, holding
/// `p_c` fixed.
pub fn chained_boundary(config: &ProtocolConfig, p_c: f64) -> Result<BoundaryReport> {
    require_pbft_like(config)?;
    FailureParams::new(0.0, p_c)?;
    let at = |p_l: f64| -> Result<Vec<Option<f64>>> {
        let trace = evaluate(config, &FailureParams::new(p_l, p_c)?)?;
        let n1 = trace.stage("N1").map_or(0.0, |s| s.mean()) + 1.0;
        let n2 = trace.stage("N2").map_or(0.0, |s| s.mean());
        // a phase already missing more than f+1 processes on average has no
        // slack left for link failures
        let slack = |e: f64| (config.f as f64 + 1.0) - (config.n as f64 - e);
        Ok([n1, n2]
            .iter()
            .map(|&e| match slack(e) < 0.0 {
                true => Some(0.0),
                false => stability_boundary(config.f, config.n, e).ok(),
            })
            .collect())
    };
    let names = ["prepare", "commit"];
    let mut phases = Vec::new();
    for (idx, name) in names.iter().enumerate() {
        // g(p) = p - bound(p) rises in p; an undefined bound counts as past it
        let above = |p: f64| -> Result<bool> { Ok(at(p)?[idx].is_none_or(|b| p >= b)) };
        let (mut lo, mut hi) = (0.0, 1.0);
        if above(lo)? {
            phases.push((name.to_string(), 0.0));
            continue;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if above(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        phases.push((name.to_string(), 0.5 * (lo + hi)));
    }
    let boundary = phases.iter().map(|(_, p)| *p).fold(f64::INFINITY, f64::min);
    Ok(BoundaryReport { phases, boundary })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeoutReport {
    /// `mu + sigma * z(rate)`.
    pub paper_convention: f64,
    /// `mu + sigma * z(1 - rate)`: the deadline a message misses with
    /// probability `rate`.
    pub miss_rate_convention: f64,
}

pub fn timeout_for_boundary(mu: f64, sigma: f64, boundary_rate: f64) -> Result<TimeoutReport> {
    if !mu.is_finite() {
        return Err(Error::domain(format!(
            "mean delay must be finite, got {mu}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::domain(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if !(boundary_rate > 0.0 && boundary_rate < 1.0) {
        return Err(Error::domain(format!(
            "boundary rate must lie in (0, 1), got {boundary_rate}"
        )));
    }
    Ok(TimeoutReport {
        paper_convention: mu + sigma * normal_quantile(boundary_rate)?,
        miss_rate_convention: mu + sigma * normal_quantile(1.0 - boundary_rate)?,
    })
}

const ASYMPTOTE_TOLERANCE: f64 = 1e-12;

/// Limit of the quorum success probability as `n` grows with the quorum at
/// fraction `q` of the incoming messages.
pub fn quorum_asymptote(p: f64, q: f64) -> f64 {
    let edge = 1.0 - q;
    if (p - edge).abs() <= ASYMPTOTE_TOLERANCE {
        0.5
    } else if p < edge {
        1.0
    } else {
        0.0
    }
}

/// Probability that at most `n - k` of `n` messages are omitted.
pub fn quorum_success(n: usize, p: f64, k: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("p must lie in [0, 1], got {p}")));
    }
    if k > n {
        return Ok(0.0);
    }
    Ok(range_unchecked(n, p, 0, (n - k) as i64))
}

/// Scalar read off a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// One value per named path of the trace.
    #[default]
    Paths,
    /// `P(final >= 2f+1)`.
    Quorum,
    /// `P(final >= f+1)`.
    Live,
    /// Expected fraction of the final stage's population that completes.
    Reach,
}

impl Metric {
    fn values(self, trace: &PhaseTrace) -> Result<Vec<(String, f64)>> {
        let f = trace.config.f as i64;
        Ok(match self {
            Metric::Paths => trace.path_success.clone(),
            Metric::Quorum => vec![("quorum".into(), success_probability(trace, 2 * f + 1)?)],
            Metric::Live => vec![("live".into(), success_probability(trace, f + 1)?)],
            Metric::Reach => vec![("reach".into(), reach_probability(trace))],
        })
    }

    /// Single value used for gradients; for `Paths` the first listed path.
    fn scalar(self, trace: &PhaseTrace) -> Result<f64> {
        self.values(trace)?
            .first()
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Numeric("trace reports no paths".into()))
    }
}

/// `E[final] / population`, the probability that a representative member
/// of the final stage completes.
pub fn reach_probability(trace: &PhaseTrace) -> f64 {
    let stage = &trace.final_stage().pmf;
    stage.mean() / stage.support_max().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub protocol: Protocol,
    /// Fault budget; when absent each `n` uses the largest it tolerates.
    pub f: Option<usize>,
    pub c: usize,
    pub n_values: Vec<usize>,
    pub p_l_values: Vec<f64>,
    pub p_c_values: Vec<f64>,
    pub metric: Metric,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, list) in [("p_l", &self.p_l_values), ("p_c", &self.p_c_values)] {
            if list.is_empty() {
                return Err(Error::config(format!("{name} list must not be empty")));
            }
            if let Some(bad) = list.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::domain(format!("{name} value {bad} outside [0, 1]")));
            }
        }
        if self.n_values.is_empty() {
            return Err(Error::config("n list must not be empty"));
        }
        Ok(())
    }

    fn config_for(&self, n: usize) -> Result<ProtocolConfig> {
        let f = match self.f {
            Some(f) => f,
            None if self.protocol == Protocol::Sbft => n.saturating_sub(1 + 2 * self.c) / 3,
            None => n.saturating_sub(1) / 3,
        };
        ProtocolConfig::new(self.protocol, n, f, self.c)
    }

    fn fault_budget(&self, n: usize) -> usize {
        self.config_for(n)
            .map_or_else(|_| self.f.unwrap_or(0), |c| c.f)
    }

    /// Grid points in row order: `n`, then `p_c`, then `p_l`.
    fn points(&self) -> Vec<(usize, f64, f64)> {
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let mut ns = self.n_values.clone();
        ns.sort_unstable();
        ns.dedup();
        let (p_cs, p_ls) = (sorted(&self.p_c_values), sorted(&self.p_l_values));
        let mut out = Vec::new();
        for &n in &ns {
            for &p_c in &p_cs {
                for &p_l in &p_ls {
                    out.push((n, p_c, p_l));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub protocol: Protocol,
    pub n: usize,
    pub f: usize,
    pub c: usize,
    pub p_l: f64,
    pub p_c: f64,
    pub path: String,
    /// Success probability, or the reason this point could not be evaluated.
    pub value: std::result::Result<f64, String>,
}

pub fn sweep(grid: &SweepGrid, exec: Execution) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    let per_point = exec.map(grid.points(), |(n, p_c, p_l)| {
        let f = grid.fault_budget(n);
        let row = |path: String, value| SweepRow {
            protocol: grid.protocol,
            n,
            f,
            c: grid.c,
            p_l,
            p_c,
            path,
            value,
        };
        let evaluated = grid.config_for(n).and_then(|cfg| {
            let trace = evaluate(&cfg, &FailureParams::new(p_l, p_c)?)?;
            grid.metric.values(&trace)
        });
        match evaluated {
            Ok(mut values) => {
                values.sort_by(|a, b| a.0.cmp(&b.0));
                values.into_iter().map(|(p, v)| row(p, Ok(v))).collect()
            }
            Err(e) => vec![row("error".into(), Err(e.to_string()))],
        }
    });
    Ok(per_point.into_iter().flatten().collect())
}

/// Derivative of `f` at `x` inside `[lo, hi]`: central where both probes fit,
/// one-sided at the edges.
pub fn finite_difference(
    f: impl Fn(f64) -> Result<f64>,
    x: f64,
    step: f64,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let back = (x - step).max(lo);
    let ahead = (x + step).min(hi);
    if ahead <= back {
        return Err(Error::domain(format!(
            "step {step} leaves no room around {x}"
        )));
    }
    Ok((f(ahead)? - f(back)?) / (ahead - back))
}

pub const DEFAULT_GRADIENT_STEP: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientPoint {
    pub n: usize,
    pub p_c: f64,
    pub p_l: f64,
    pub value: f64,
    pub d_p_c: f64,
    pub d_p_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientField {
    pub protocol: Protocol,
    pub step: f64,
    pub points: Vec<GradientPoint>,
}

pub fn gradient_field(grid: &SweepGrid, step: f64, exec: Execution) -> Result<GradientField> {
    grid.validate()?;
    if !(step > 0.0 && step < 0.5) {
        return Err(Error::domain(format!(
            "gradient step must lie in (0, 0.5), got {step}"
        )));
    }
    let points = exec.map(grid.points(), |(n, p_c, p_l)| {
        let cfg = grid.config_for(n)?;
        let value_at = |p_l: f64, p_c: f64| {
            grid.metric
                .scalar(&evaluate(&cfg, &FailureParams::new(p_l, p_c)?)?)
        };
        Ok(GradientPoint {
            n,
            p_c,
            p_l,
            value: value_at(p_l, p_c)?,
            d_p_c: finite_difference(|x| value_at(p_l, x), p_c, step, 0.0, 1.0)?,
            d_p_l: finite_difference(|x| value_at(x, p_c), p_l, step, 0.0, 1.0)?,
        })
    });
    Ok(GradientField {
        protocol: grid.protocol,
        step,
        points: points.into_iter().collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::pbft_model;

    fn pbft(n: usize, f: usize) -> ProtocolConfig {
        ProtocolConfig::new(Protocol::Pbft, n, f, 0).unwrap()
    }

    fn grid(n: Vec<usize>, p_l: Vec<f64>, p_c: Vec<f64>) -> SweepGrid {
        SweepGrid {
            protocol: Protocol::Pbft,
            f: None,
            c: 0,
            n_values: n,
            p_l_values: p_l,
            p_c_values: p_c,
            metric: Metric::Paths,
        }
    }

    #[test]
    fn boundary_examples() {
        assert!((stability_boundary(8, 25, 25.0).unwrap() - 0.135).abs() < 1e-15);
        assert!((stability_boundary(1, 4, 4.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((stability_boundary(8, 25, 17.0).unwrap() - 1.0 / 272.0).abs() < 1e-15);
        assert!(stability_boundary(1, 4, 1.0).is_err());
        assert!(stability_boundary(1, 4, 5.0).is_err());
    }

    #[test]
    fn chained_boundary_is_a_fixed_point() {
        let cfg = pbft(25, 8);
        let report = chained_boundary(&cfg, 0.0).unwrap();
        assert!(report.boundary > 0.0 && report.boundary < 0.135);
        for (name, p) in &report.phases {
            let trace = pbft_model(&cfg, &FailureParams::new(*p, 0.0).unwrap()).unwrap();
            let bounds = phase_boundaries(&trace).unwrap();
            let b = bounds.iter().find(|(n, _)| n == name).unwrap().1;
            assert!((b - p).abs() < 1e-9, "{name}: {b} vs {p}");
        }
    }

    #[test]
    fn timeout_examples() {
        let t = timeout_for_boundary(100.0, 10.0, 0.5).unwrap();
        assert!((t.paper_convention - 100.0).abs() < 1e-9);
        assert!((t.miss_rate_convention - 100.0).abs() < 1e-9);
        let t = timeout_for_boundary(100.0, 10.0, 0.1).unwrap();
        assert!((t.paper_convention - 87.18).abs() < 0.01);
        assert!((t.miss_rate_convention - 112.82).abs() < 0.01);
        assert!(timeout_for_boundary(100.0, 0.0, 0.1).is_err());
        assert!(timeout_for_boundary(100.0, 10.0, 1.0).is_err());
    }

    #[test]
    fn asymptote_cases() {
        assert_eq!(quorum_asymptote(0.2, 2.0 / 3.0), 1.0);
        assert_eq!(quorum_asymptote(0.5, 2.0 / 3.0), 0.0);
        assert_eq!(quorum_asymptote(1.0 / 3.0, 2.0 / 3.0), 0.5);
        assert_eq!(quorum_asymptote(0.2, 0.6667), 1.0);
    }

    #[test]
    fn quorum_success_examples() {
        assert_eq!(quorum_success(3, 0.0, 2).unwrap(), 1.0);
        assert_eq!(quorum_success(3, 1.0, 2).unwrap(), 0.0);
        let direct = 0.9f64.powi(6) + 6.0 * 0.1 * 0.9f64.powi(5) + 15.0 * 0.01 * 0.9f64.powi(4);
        assert!((quorum_success(6, 0.1, 4).unwrap() - direct).abs() < 1e-15);
        assert!((direct - 0.98415).abs() < 1e-5);
        assert_eq!(quorum_success(3, 0.1, 4).unwrap(), 0.0);
    }

    #[test]
    fn quorum_success_converges() {
        let at = |n: usize, p: f64| quorum_success(n, p, (2 * n).div_ceil(3)).unwrap();
        for n in (400..=1200).step_by(100) {
            assert!(at(n, 0.2) > 0.99);
            assert!(at(n, 0.5) < 0.01);
        }
        assert!((at(3000, 1.0 / 3.0) - 0.5).abs() < 0.05);
    }

    #[test]
    fn sweep_examples() {
        let rows = sweep(&grid(vec![4], vec![0.0], vec![0.0]), Execution::Sequential).unwrap();
        let happy: Vec<_> = rows.iter().filter(|r| r.path == "happy").collect();
        assert_eq!(happy.len(), 1);
        assert_eq!(happy[0].value, Ok(1.0));
        let rows = sweep(&grid(vec![4], vec![1.0], vec![0.0]), Execution::Sequential).unwrap();
        assert!(rows.iter().all(|r| r.value == Ok(0.0)));
    }

    #[test]
    fn sweep_matches_direct_calls_in_order() {
        let g = grid(vec![10], vec![0.2, 0.0, 0.1], vec![0.1, 0.0, 0.05]);
        let rows = sweep(&g, Execution::Parallel).unwrap();
        assert_eq!(rows.len(), 9 * 2);
        let mut prev: Option<(usize, f64, f64, String)> = None;
        for r in &rows {
            let key = (r.n, r.p_c, r.p_l, r.path.clone());
            if let Some(p) = &prev {
                assert!(p.partial_cmp(&key) == Some(std::cmp::Ordering::Less));
            }
            prev = Some(key);
            let t = pbft_model(&pbft(10, 3), &FailureParams::new(r.p_l, r.p_c).unwrap()).unwrap();
            assert_eq!(r.value, Ok(t.path_prob(&r.path).unwrap()));
        }
        assert_eq!(rows, sweep(&g, Execution::Sequential).unwrap());
    }

    #[test]
    fn sweep_reports_bad_points_per_row() {
        let mut g = grid(vec![4, 5], vec![0.1], vec![0.0]);
        g.protocol = Protocol::Sbft;
        g.f = Some(1);
        let rows = sweep(&g, Execution::Sequential).unwrap();
        assert!(rows.iter().any(|r| r.n == 4 && r.value.is_ok()));
        let bad: Vec<_> = rows.iter().filter(|r| r.n == 5).collect();
        assert_eq!(bad.len(), 1);
        assert!(bad[0].value.as_ref().unwrap_err().contains("3f+2c+1"));
    }

    #[test]
    fn finite_difference_recovers_bilinear_gradient() {
        let h = |x: f64, y: f64| 3.0 * x * y - 2.0 * x + 0.5 * y + 1.0;
        for &(x, y) in &[(0.2, 0.3), (0.0, 0.5), (1.0, 1.0)] {
            let dx = finite_difference(|v| Ok(h(v, y)), x, 0.01, 0.0, 1.0).unwrap();
            let dy = finite_difference(|v| Ok(h(x, v)), y, 0.01, 0.0, 1.0).unwrap();
            assert!((dx - (3.0 * y - 2.0)).abs() < 1e-9);
            assert!((dy - (3.0 * x + 0.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_flat_when_saturated() {
        let field = gradient_field(
            &grid(vec![4], vec![0.0], vec![0.0]),
            1e-6,
            Execution::Sequential,
        )
        .unwrap();
        let p = &field.points[0];
        assert_eq!(p.value, 1.0);
        assert!(p.d_p_c.abs() < 1e-3 && p.d_p_l.abs() < 1e-3);
        assert!(gradient_field(
            &grid(vec![4], vec![0.0], vec![0.0]),
            0.0,
            Execution::Sequential
        )
        .is_err());
    }

    #[test]
    fn link_failures_dominate_at_moderate_rates() {
        let field = gradient_field(
            &grid(vec![40], vec![0.15], vec![0.02]),
            DEFAULT_GRADIENT_STEP,
            Execution::Sequential,
        )
        .unwrap();
        let p = &field.points[0];
        assert!(p.d_p_l.abs() > p.d_p_c.abs(), "{p:?}");
    }
}

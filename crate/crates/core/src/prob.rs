//! Binomial and normal primitives plus the dense probability mass function
//! type every model is built from.
//!
//! Binomial masses are evaluated without materialising coefficients: a
//! single value is accumulated in log space, and whole vectors are anchored
//! at the mode and filled outward with the ratio recurrence
//! `m[k+1] = m[k] * (n-k)/(k+1) * p/(1-p)`. Both stay finite for `n` in the
//! thousands.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a distribution.
pub const MASS_TOLERANCE: f64 = 1e-9;

fn check_prob(what: &'static str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} must lie in [0, 1], got {p}")))
    }
}

/// Per-message omission and per-phase crash probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureParams {
    /// Probability that a single point-to-point message is lost or late.
    pub p_l: f64,
    /// Probability that a process misses every message of one phase.
    pub p_c: f64,
}

impl FailureParams {
    pub fn new(p_l: f64, p_c: f64) -> Result<Self> {
        check_prob("p_l", p_l)?;
        check_prob("p_c", p_c)?;
        Ok(Self { p_l, p_c })
    }

    pub fn reliable() -> Self {
        Self { p_l: 0.0, p_c: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        check_prob("p_l", self.p_l)?;
        check_prob("p_c", self.p_c)
    }
}

/// Probability mass function over the counts `0..=support_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    mass: Vec<f64>,
}

impl Pmf {
    /// Builds a distribution, rejecting masses outside `[0, 1]` or a total
    /// that misses 1 by more than [`MASS_TOLERANCE`].
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        let pmf = Self::from_raw(mass);
        pmf.check()?;
        Ok(pmf)
    }

    /// Unchecked constructor for intermediate results inside a phase chain.
    pub(crate) fn from_raw(mass: Vec<f64>) -> Self {
        assert!(!mass.is_empty(), "a pmf needs at least one support point");
        Self { mass }
    }

    /// All mass on `k`, over the support `0..=support_max`.
    pub fn point(support_max: usize, k: usize) -> Self {
        assert!(k <= support_max, "point mass {k} outside 0..={support_max}");
        let mut mass = vec![0.0; support_max + 1];
        mass[k] = 1.0;
        Self { mass }
    }

    /// Two-point distribution on `{0, 1}`.
    pub fn bernoulli(p: f64) -> Self {
        Self {
            mass: vec![1.0 - p, p],
        }
    }

    pub fn support_max(&self) -> usize {
        self.mass.len() - 1
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_mass(self) -> Vec<f64> {
        self.mass
    }

    /// Mass at `k`; zero outside the support.
    pub fn prob(&self, k: usize) -> f64 {
        self.mass.get(k).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .map(|(k, m)| k as f64 * m)
            .sum()
    }

    /// `P(X >= threshold)`.
    pub fn tail(&self, threshold: usize) -> f64 {
        self.mass.iter().skip(threshold).sum()
    }

    /// Distribution of `X + shift`, widened to `support_max`.
    pub fn shifted(&self, shift: usize, support_max: usize) -> Self {
        assert!(self.support_max() + shift <= support_max);
        let mut mass = vec![0.0; support_max + 1];
        mass[shift..shift + self.mass.len()].copy_from_slice(&self.mass);
        Self { mass }
    }

    /// Same distribution over a larger support.
    pub fn widened(&self, support_max: usize) -> Self {
        assert!(support_max >= self.support_max());
        let mut mass = self.mass.clone();
        mass.resize(support_max + 1, 0.0);
        Self { mass }
    }

    /// Distribution of the sum of two independent counts.
    pub fn convolve(&self, other: &Pmf) -> Self {
        let mut mass = vec![0.0; self.mass.len() + other.mass.len() - 1];
        for (i, a) in self.mass.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in other.mass.iter().enumerate() {
                mass[i + j] += a * b;
            }
        }
        Self { mass }
    }

    pub(crate) fn check(&self) -> Result<()> {
        if let Some(bad) = self.mass.iter().find(|m| !(0.0..=1.0 + 1e-12).contains(*m)) {
            return Err(Error::Numeric(format!("mass entry {bad} outside [0, 1]")));
        }
        let total = self.total();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Numeric(format!(
                "total mass {total} deviates from 1 by more than {MASS_TOLERANCE}"
            )));
        }
        Ok(())
    }

    /// Checks the mass budget and removes the residual drift.
    pub(crate) fn normalized(mut self) -> Result<Self> {
        self.check()?;
        let total = self.total();
        for m in &mut self.mass {
            *m = (*m / total).min(1.0);
        }
        Ok(self)
    }
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

/// `C(n,k) p^k (1-p)^(n-k)`.
pub fn binom_pmf(n: u64, p: f64, k: u64) -> Result<f64> {
    check_prob("p", p)?;
    if k > n {
        return Err(Error::domain(format!("k = {k} exceeds n = {n}")));
    }
    Ok(binom_pmf_unchecked(n, p, k))
}

fn binom_pmf_unchecked(n: u64, p: f64, k: u64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let log = ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p();
    log.exp()
}

/// Dense binomial masses `B(n, p, 0..=n)`.
pub(crate) fn binom_vec(n: usize, p: f64) -> Vec<f64> {
    let mut mass = vec![0.0; n + 1];
    if p <= 0.0 {
        mass[0] = 1.0;
        return mass;
    }
    if p >= 1.0 {
        mass[n] = 1.0;
        return mass;
    }
    let mode = (((n + 1) as f64) * p).floor().min(n as f64) as usize;
    mass[mode] = binom_pmf_unchecked(n as u64, p, mode as u64);
    let odds = p / (1.0 - p);
    for k in mode..n {
        mass[k + 1] = mass[k] * ((n - k) as f64 / (k + 1) as f64) * odds;
    }
    for k in (0..mode).rev() {
        mass[k] = mass[k + 1] * ((k + 1) as f64 / (n - k) as f64) / odds;
    }
    mass
}

/// `B(n, p, [k_lo, k_hi])`; the upper bound is clamped to `n`.
pub fn binom_range(n: u64, p: f64, k_lo: u64, k_hi: u64) -> Result<f64> {
    check_prob("p", p)?;
    if k_lo > k_hi {
        return Err(Error::domain(format!("empty range [{k_lo}, {k_hi}]")));
    }
    Ok(range_unchecked(n as usize, p, k_lo as i64, k_hi as i64))
}

/// Quorum-style range used inside the models: negative lower bounds mean
/// "no requirement", empty ranges have zero probability.
pub(crate) fn range_unchecked(n: usize, p: f64, k_lo: i64, k_hi: i64) -> f64 {
    let lo = k_lo.max(0) as usize;
    let hi = k_hi.min(n as i64);
    if hi < 0 || lo as i64 > hi {
        return 0.0;
    }
    let hi = hi as usize;
    if lo == 0 && hi == n {
        return 1.0;
    }
    let mass = binom_vec(n, p);
    mass[lo..=hi].iter().sum::<f64>().min(1.0)
}

/// Probability of receiving at least `k` of `n` messages, each delivered
/// with probability `p`.
pub(crate) fn at_least(n: usize, p: f64, k: i64) -> f64 {
    range_unchecked(n, p, k, n as i64)
}

/// Dense binomial distribution over `0..=n`.
pub fn pmf_binomial(n: u64, p: f64) -> Result<Pmf> {
    check_prob("p", p)?;
    Ok(Pmf::from_raw(binom_vec(n as usize, p)))
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF.
///
/// Acklam's rational approximation (relative error about 1e-9) followed by
/// one Halley step on `Phi(z) - prob`.
pub fn normal_quantile(prob: f64) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::domain(format!(
            "quantile probability must lie in (0, 1), got {prob}"
        )));
    }
    if prob == 0.5 {
        return Ok(0.0);
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let z = if prob < P_LOW {
        let q = (-2.0 * prob.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if prob <= 1.0 - P_LOW {
        let q = prob - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (-prob).ln_1p()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    let err = normal_cdf(z) - prob;
    let u = err * (2.0 * std::f64::consts::PI).sqrt() * (z * z / 2.0).exp();
    Ok(z - u / (1.0 + z * u / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact `C(n,k) a^k (d-a)^(n-k) / d^n` with integer arithmetic.
    fn rational_binom(n: u32, num: u128, den: u128, k: u32) -> f64 {
        let mut choose: u128 = 1;
        for i in 0..k as u128 {
            choose = choose * (n as u128 - i) / (i + 1);
        }
        let top = choose * num.pow(k) * (den - num).pow(n - k);
        top as f64 / den.pow(n) as f64
    }

    #[test]
    fn pmf_examples() {
        assert!((binom_pmf(4, 0.5, 2).unwrap() - 0.375).abs() < 1e-15);
        assert!((binom_pmf(3, 0.9, 3).unwrap() - 0.729).abs() < 1e-15);
        let exact = rational_binom(10, 3, 10, 4);
        assert!((exact - 0.200120949).abs() < 1e-12);
        assert!((binom_pmf(10, 0.3, 4).unwrap() - exact).abs() < 1e-14);
    }

    #[test]
    fn pmf_domain_errors() {
        assert!(binom_pmf(3, 0.5, 4).is_err());
        assert!(binom_pmf(3, 1.5, 1).is_err());
        assert!(binom_pmf(3, -0.1, 1).is_err());
        assert!(binom_range(3, 0.5, 2, 1).is_err());
        assert!(binom_range(3, 2.0, 0, 1).is_err());
    }

    #[test]
    fn range_examples() {
        assert!((binom_range(3, 0.9, 2, 3).unwrap() - 0.972).abs() < 1e-14);
        assert_eq!(binom_range(5, 1.0, 5, 5).unwrap(), 1.0);
        assert_eq!(binom_range(4, 0.2, 5, 9).unwrap(), 0.0);
        // upper bound past n is clamped
        assert!((binom_range(3, 0.9, 2, 10).unwrap() - 0.972).abs() < 1e-14);
    }

    #[test]
    fn binomial_pmf_constructor() {
        assert_eq!(pmf_binomial(3, 0.0).unwrap(), Pmf::point(3, 0));
        assert_eq!(pmf_binomial(3, 1.0).unwrap(), Pmf::point(3, 3));
        assert_eq!(pmf_binomial(2, 0.5).unwrap().mass(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn large_n_does_not_underflow() {
        // (0.1)^1000 underflows, the mode does not
        let v = binom_vec(1000, 0.9);
        let total: f64 = v.iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(v[900] > 0.04);
        let single = binom_pmf(1000, 0.9, 900).unwrap();
        assert!((single - v[900]).abs() < 1e-12);
    }

    #[test]
    fn vector_matches_single_values() {
        for &p in &[0.05, 0.3, 0.5, 0.77] {
            let v = binom_vec(40, p);
            for (k, m) in v.iter().enumerate() {
                let s = binom_pmf(40, p, k as u64).unwrap();
                assert!((m - s).abs() < 1e-13, "p={p} k={k}");
            }
        }
    }

    #[test]
    fn normalization_invariants() {
        for n in 0..=60u64 {
            for &p in &[0.1, 0.3, 0.5, 0.9] {
                let total: f64 = (0..=n).map(|k| binom_pmf(n, p, k).unwrap()).sum();
                assert!((total - 1.0).abs() < 1e-12, "n={n} p={p} total={total}");
                let range = binom_range(n, p, 0, n).unwrap();
                assert!((range - 1.0).abs() < 1e-12);
                for k in 0..=n {
                    let a = binom_pmf(n, p, k).unwrap();
                    let b = binom_pmf(n, 1.0 - p, n - k).unwrap();
                    assert!((a - b).abs() <= 1e-15, "n={n} p={p} k={k}");
                }
            }
        }
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!((normal_quantile(0.9).unwrap() - 1.2815516).abs() < 1e-7);
        assert!((normal_quantile(0.1).unwrap() + 1.2815516).abs() < 1e-7);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(normal_quantile(f64::NAN).is_err());
    }

    /// Maclaurin series of erf, independent of `libm`.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-17 * sum.abs().max(1e-300) {
            n += 1.0;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn quantile_inverts_independent_cdf() {
        let mut z = -4.0;
        while z <= 4.0 {
            let phi = 0.5 * (1.0 + erf_series(z / std::f64::consts::SQRT_2));
            let back = normal_quantile(phi).unwrap();
            assert!((back - z).abs() < 1e-7, "z={z} back={back}");
            z += 0.05;
        }
    }

    #[test]
    fn pmf_rejects_bad_mass() {
        assert!(Pmf::new(vec![0.5, 0.4]).is_err());
        assert!(Pmf::new(vec![1.2, -0.2]).is_err());
        assert!(Pmf::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn failure_params_domain() {
        assert!(FailureParams::new(0.1, 0.2).is_ok());
        assert!(FailureParams::new(1.1, 0.2).is_err());
        assert!(FailureParams::new(0.1, -0.2).is_err());
    }
}

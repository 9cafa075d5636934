//! Composition of per-phase conditional kernels into chained distributions.
//!
//! A kernel maps a conditioning count (the number of processes in some
//! earlier state) to the distribution of the next count. The operators here
//! push a prior through a kernel by the law of total probability, build the
//! joint of a prior and its successor, and handle the single two-parent
//! case where a phase depends on two earlier counts at once.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::prob::{binom_vec, Pmf, MASS_TOLERANCE};

/// Conditional distribution of the next phase count given one earlier count.
pub trait ConditionalKernel {
    /// Largest count the produced distributions may place mass on.
    fn support_max(&self) -> usize;

    fn eval(&self, given: usize) -> Result<Pmf>;
}

/// Conditional distribution given two earlier counts.
pub trait JointKernel {
    fn support_max(&self) -> usize;

    fn eval(&self, first: usize, second: usize) -> Result<Pmf>;
}

impl<K: ConditionalKernel + ?Sized> ConditionalKernel for &K {
    fn support_max(&self) -> usize {
        (**self).support_max()
    }

    fn eval(&self, given: usize) -> Result<Pmf> {
        (**self).eval(given)
    }
}

/// Kernel backed by a closure.
pub struct FnKernel<F> {
    support_max: usize,
    f: F,
}

impl<F> FnKernel<F>
where
    F: Fn(usize) -> Result<Pmf>,
{
    pub fn new(support_max: usize, f: F) -> Self {
        Self { support_max, f }
    }
}

impl<F> ConditionalKernel for FnKernel<F>
where
    F: Fn(usize) -> Result<Pmf>,
{
    fn support_max(&self) -> usize {
        self.support_max
    }

    fn eval(&self, given: usize) -> Result<Pmf> {
        (self.f)(given)
    }
}

/// Two-parent kernel backed by a closure.
pub struct FnJointKernel<F> {
    support_max: usize,
    f: F,
}

impl<F> FnJointKernel<F>
where
    F: Fn(usize, usize) -> Result<Pmf>,
{
    pub fn new(support_max: usize, f: F) -> Self {
        Self { support_max, f }
    }
}

impl<F> JointKernel for FnJointKernel<F>
where
    F: Fn(usize, usize) -> Result<Pmf>,
{
    fn support_max(&self) -> usize {
        self.support_max
    }

    fn eval(&self, first: usize, second: usize) -> Result<Pmf> {
        (self.f)(first, second)
    }
}

/// Caches the distributions a kernel produces for the lifetime of one model
/// run.
pub struct Memoized<K> {
    inner: K,
    cache: RefCell<Vec<Option<Pmf>>>,
}

impl<K: ConditionalKernel> Memoized<K> {
    pub fn new(inner: K) -> Self {
        Self {
            inner,
            cache: RefCell::new(Vec::new()),
        }
    }
}

impl<K: ConditionalKernel> ConditionalKernel for Memoized<K> {
    fn support_max(&self) -> usize {
        self.inner.support_max()
    }

    fn eval(&self, given: usize) -> Result<Pmf> {
        if let Some(Some(hit)) = self.cache.borrow().get(given) {
            return Ok(hit.clone());
        }
        let value = self.inner.eval(given)?;
        let mut cache = self.cache.borrow_mut();
        if cache.len() <= given {
            cache.resize(given + 1, None);
        }
        cache[given] = Some(value.clone());
        Ok(value)
    }
}

/// Kernel `inner` followed by kernel `outer`: `y -> sum_x outer(x) inner(y)(x)`.
pub struct Composed<A, B> {
    inner: A,
    outer: B,
}

impl<A: ConditionalKernel, B: ConditionalKernel> Composed<A, B> {
    pub fn new(inner: A, outer: B) -> Self {
        Self { inner, outer }
    }
}

impl<A: ConditionalKernel, B: ConditionalKernel> ConditionalKernel for Composed<A, B> {
    fn support_max(&self) -> usize {
        self.outer.support_max()
    }

    fn eval(&self, given: usize) -> Result<Pmf> {
        let mid = self.inner.eval(given)?;
        push(&self.outer, &mid)
    }
}

/// Probability matrix over a pair of phase counts.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    cols: usize,
    mass: Vec<f64>,
}

impl JointDistribution {
    /// Builds a joint from row-major masses with `first` in `0..=first_max`
    /// and `second` in `0..=second_max`.
    pub fn new(first_max: usize, second_max: usize, mass: Vec<f64>) -> Result<Self> {
        let cols = second_max + 1;
        if mass.len() != (first_max + 1) * cols {
            return Err(Error::domain(format!(
                "joint needs {} entries, got {}",
                (first_max + 1) * cols,
                mass.len()
            )));
        }
        let joint = Self { cols, mass };
        if joint.mass.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::Numeric("joint entry outside [0, 1]".into()));
        }
        let total = joint.total();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Numeric(format!("joint total mass {total} is not 1")));
        }
        Ok(joint)
    }

    pub fn first_max(&self) -> usize {
        self.mass.len() / self.cols - 1
    }

    pub fn second_max(&self) -> usize {
        self.cols - 1
    }

    pub fn get(&self, first: usize, second: usize) -> f64 {
        if second >= self.cols {
            return 0.0;
        }
        self.mass
            .get(first * self.cols + second)
            .copied()
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn marginal_first(&self) -> Pmf {
        Pmf::from_raw(
            self.mass
                .chunks(self.cols)
                .map(|row| row.iter().sum())
                .collect(),
        )
    }

    pub fn marginal_second(&self) -> Pmf {
        let mut out = vec![0.0; self.cols];
        for row in self.mass.chunks(self.cols) {
            for (acc, m) in out.iter_mut().zip(row) {
                *acc += m;
            }
        }
        Pmf::from_raw(out)
    }

    fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.mass
            .iter()
            .enumerate()
            .map(move |(i, m)| (i / self.cols, i % self.cols, *m))
    }
}

fn fit(out: Pmf, support_max: usize) -> Result<Pmf> {
    match out.support_max().cmp(&support_max) {
        std::cmp::Ordering::Equal => Ok(out),
        std::cmp::Ordering::Less => Ok(out.widened(support_max)),
        std::cmp::Ordering::Greater => {
            let overflow: f64 = out.mass()[support_max + 1..].iter().sum();
            if overflow > 0.0 {
                Err(Error::Numeric(format!(
                    "kernel placed mass {overflow} beyond its declared maximum {support_max}"
                )))
            } else {
                let mut mass = out.into_mass();
                mass.truncate(support_max + 1);
                Ok(Pmf::from_raw(mass))
            }
        }
    }
}

/// Law of total probability without the input check, for intermediate
/// (possibly defective) priors.
pub(crate) fn push<K: ConditionalKernel + ?Sized>(kernel: &K, prior: &Pmf) -> Result<Pmf> {
    let support = kernel.support_max();
    let mut out = vec![0.0; support + 1];
    for (given, weight) in prior.mass().iter().enumerate() {
        if *weight == 0.0 {
            continue;
        }
        let next = fit(kernel.eval(given)?, support)?;
        for (acc, m) in out.iter_mut().zip(next.mass()) {
            *acc += weight * m;
        }
    }
    Ok(Pmf::from_raw(out))
}

/// `result(x) = sum_y kernel(y)(x) prior(y)`.
pub fn total_probability<K: ConditionalKernel + ?Sized>(kernel: &K, prior: &Pmf) -> Result<Pmf> {
    prior.check()?;
    let out = push(kernel, prior)?;
    out.check()?;
    Ok(out)
}

/// `result(x) = sum_{y,z} kernel(y,z)(x) joint(y,z)`.
pub fn total_probability_joint<K: JointKernel + ?Sized>(
    kernel: &K,
    joint: &JointDistribution,
) -> Result<Pmf> {
    let support = kernel.support_max();
    let mut out = vec![0.0; support + 1];
    for (first, second, weight) in joint.entries() {
        if weight == 0.0 {
            continue;
        }
        let next = fit(kernel.eval(first, second)?, support)?;
        for (acc, m) in out.iter_mut().zip(next.mass()) {
            *acc += weight * m;
        }
    }
    Ok(Pmf::from_raw(out))
}

/// `joint(y, z) = prior(y) kernel(y)(z)`.
pub fn joint_via_kernel<K: ConditionalKernel + ?Sized>(
    prior: &Pmf,
    kernel: &K,
) -> Result<JointDistribution> {
    let cols = kernel.support_max() + 1;
    let mut mass = vec![0.0; prior.mass().len() * cols];
    for (given, weight) in prior.mass().iter().enumerate() {
        if *weight == 0.0 {
            continue;
        }
        let next = fit(kernel.eval(given)?, cols - 1)?;
        for (z, m) in next.mass().iter().enumerate() {
            mass[given * cols + z] = weight * m;
        }
    }
    Ok(JointDistribution { cols, mass })
}

/// Each of `y` surviving processes independently stays up with `1 - p_c`.
pub fn crash_kernel(support_max: usize, p_c: f64) -> FnKernel<impl Fn(usize) -> Result<Pmf>> {
    FnKernel::new(support_max, move |alive| {
        Ok(Pmf::from_raw(binom_vec(alive, 1.0 - p_c)))
    })
}

/// Thins every count of `prior` by independent crashes.
pub fn crash_step(prior: &Pmf, p_c: f64) -> Result<Pmf> {
    if !(0.0..=1.0).contains(&p_c) {
        return Err(Error::domain(format!("p_c must lie in [0, 1], got {p_c}")));
    }
    push(&crash_kernel(prior.support_max(), p_c), prior)
}

//! Closed-form liveness and RSTS failure probabilities, generic over
//! [`Scalar`], with Monte-Carlo cross-checks that drive the real selection
//! code.

use std::io::Write;

use num_rational::BigRational;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::crypto::Digest;
use crate::enclave::selection::select_committee;
use crate::rng::DetRng;
use crate::scalar::Scalar;
use crate::storage::select_subnet;

pub use crate::scalar::{log10_rational, rational_to_f64};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("invalid parameters: {0}")]
    Parameters(String),
}

fn bad<T>(msg: String) -> Result<T, AnalysisError> {
    Err(AnalysisError::Parameters(msg))
}

/// `C(n, k)` by the multiplicative formula.
pub fn binomial<T: Scalar>(n: u64, k: u64) -> T {
    if k > n {
        return T::zero();
    }
    let k = k.min(n - k);
    (0..k).fold(T::one(), |acc, i| acc * T::ratio(n - i, i + 1))
}

fn check_rsts(n: u64, m: u64, s: u64, t: u64) -> Result<(), AnalysisError> {
    if m > n {
        return bad(format!("m = {m} exceeds n = {n}"));
    }
    if !(0 < t && t <= s && s <= n) {
        return bad(format!("need 0 < t <= s <= n, got t = {t}, s = {s}, n = {n}"));
    }
    Ok(())
}

/// Probability that exactly `k` of the `s` drawn nodes are among the `m`.
///
/// Computed as `C(s,k)` times the probability of one particular ordering, so
/// every intermediate factor is at most 1 and floats stay in range.
pub fn hypergeometric_pmf<T: Scalar>(n: u64, m: u64, s: u64, k: u64) -> T {
    if k > m || k > s || s - k > n - m {
        return T::zero();
    }
    let mut p: T = binomial(s, k);
    for i in 0..k {
        p = p * T::ratio(m - i, n - i);
    }
    for j in 0..s - k {
        p = p * T::ratio(n - m - j, n - k - j);
    }
    p
}

/// `P[X >= t]` for `X ~ Hypergeometric(n, m, s)`; zero when `m < t`.
pub fn rsts_epsilon_in<T: Scalar>(n: u64, m: u64, s: u64, t: u64) -> Result<T, AnalysisError> {
    check_rsts(n, m, s, t)?;
    if m < t {
        return Ok(T::zero());
    }
    Ok((t..=s.min(m)).fold(T::zero(), |acc, k| acc + hypergeometric_pmf::<T>(n, m, s, k)))
}

/// Exact RSTS failure probability.
pub fn rsts_tail(n: u64, m: u64, s: u64, t: u64) -> Result<BigRational, AnalysisError> {
    rsts_epsilon_in(n, m, s, t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LivenessQuery {
    pub n: u64,
    pub c: u64,
    pub t_rounds: u64,
    pub honest: u64,
}

impl LivenessQuery {
    pub fn new(n: u64, c: u64, t_rounds: u64) -> Self {
        Self { n, c, t_rounds, honest: 1 }
    }

    fn check(&self) -> Result<(), AnalysisError> {
        if !(1 <= self.c && self.c <= self.n) {
            return bad(format!("need 1 <= c <= n, got c = {}, n = {}", self.c, self.n));
        }
        if !(1 <= self.honest && self.honest <= self.n) {
            return bad(format!("need 1 <= honest <= n, got {}", self.honest));
        }
        Ok(())
    }
}

/// `1 - (1 - c/n)^t`: chance that a single honest node is selected at least
/// once in `t` rounds.
pub fn liveness_delta<T: Scalar>(q: &LivenessQuery) -> Result<T, AnalysisError> {
    q.check()?;
    if q.honest != 1 {
        return bad("the closed form assumes exactly one honest node".into());
    }
    let miss = T::one() - T::ratio(q.c, q.n);
    Ok(T::one() - miss.powi(q.t_rounds as u32))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub p: f64,
    pub std_error: f64,
    pub trials: u64,
}

impl Estimate {
    fn from_hits(hits: u64, trials: u64) -> Self {
        let p = hits as f64 / trials as f64;
        Self { p, std_error: (p * (1.0 - p) / trials as f64).sqrt(), trials }
    }

    /// `|p - expected| <= k * sigma`, with sigma taken from the expected
    /// value so a zero-variance sample still gets a sensible band.
    pub fn agrees_with(&self, expected: f64, k: f64) -> bool {
        let sigma = (expected * (1.0 - expected) / self.trials as f64).sqrt();
        (self.p - expected).abs() <= k * sigma.max(self.std_error)
    }
}

/// Simulates `t_rounds` committee draws per trial with block-hash-like random
/// seeds; a trial hits when any honest node is selected in some round.
pub fn liveness_montecarlo(q: &LivenessQuery, trials: u64, seed: u64) -> Result<Estimate, AnalysisError> {
    q.check()?;
    if trials < 1000 {
        return bad(format!("at least 1000 trials required, got {trials}"));
    }
    let root = DetRng::from_u64(seed);
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = root.split_indexed("liveness", i);
            let mut pool: Vec<u64> = (0..q.n).collect();
            for j in 0..q.honest as usize {
                let k = j + rng.below(q.n - j as u64) as usize;
                pool.swap(j, k);
            }
            let honest = &pool[..q.honest as usize];
            let hit = (0..q.t_rounds).any(|_| {
                let s = Digest(rng.bytes32());
                select_committee(&s, q.n, q.c).expect("checked").iter().any(|o| honest.contains(o))
            });
            hit as u64
        })
        .sum();
    Ok(Estimate::from_hits(hits, trials))
}

/// Draws subnets with the real selector; the adversary holds indices `0..m`
/// (subnets are exchangeable, so which indices does not matter).
pub fn rsts_montecarlo(n: u64, m: u64, s: u64, t: u64, trials: u64, seed: u64) -> Result<Estimate, AnalysisError> {
    check_rsts(n, m, s, t)?;
    let root = DetRng::from_u64(seed);
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map(|i| {
            let d = Digest(root.split_indexed("rsts", i).bytes32());
            let sub = select_subnet(&d, n as usize, s as usize).expect("checked");
            (sub.iter().filter(|&&x| (x as u64) < m).count() as u64 >= t) as u64
        })
        .sum();
    Ok(Estimate::from_hits(hits, trials))
}

pub const HEADLINE_N: u64 = 10_000;
pub const HEADLINE_S: u64 = 38;

/// The two integer readings of a `0.9 * s` threshold: (floor, ceil).
pub fn threshold_readings(s: u64) -> (u64, u64) {
    ((9 * s) / 10, (9 * s).div_ceil(10))
}

/// Whether `(n, m, s, t)` is the headline cell `(10000, floor(n/3), 38, ceil(0.9 s))`.
pub fn is_headline_cell(n: u64, m: u64, s: u64, t: u64) -> bool {
    n == HEADLINE_N && m == n / 3 && s == HEADLINE_S && t == threshold_readings(s).1
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RstsRow {
    pub n: u64,
    pub m: u64,
    pub s: u64,
    pub t: u64,
    #[serde(serialize_with = "ser_rational")]
    pub epsilon_exact: BigRational,
    pub epsilon: f64,
    pub epsilon_log10: f64,
    pub headline: bool,
}

fn ser_rational<S: serde::Serializer>(q: &BigRational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&q.to_string())
}

pub fn rsts_sweep(grid: &[(u64, u64, u64, u64)]) -> Result<Vec<RstsRow>, AnalysisError> {
    grid.par_iter()
        .map(|&(n, m, s, t)| {
            let e = rsts_tail(n, m, s, t)?;
            Ok(RstsRow {
                n,
                m,
                s,
                t,
                epsilon: rational_to_f64(&e),
                epsilon_log10: log10_rational(&e),
                epsilon_exact: e,
                headline: is_headline_cell(n, m, s, t),
            })
        })
        .collect()
}

/// Columns: n, m, s, t, epsilon_exact, epsilon_log10.
pub fn write_rsts_csv<W: Write>(rows: &[RstsRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "m", "s", "t", "epsilon_exact", "epsilon_log10"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.m.to_string(),
            r.s.to_string(),
            r.t.to_string(),
            r.epsilon_exact.to_string(),
            format!("{:.6}", r.epsilon_log10),
        ])?;
    }
    w.flush()?;
    Ok(())
}

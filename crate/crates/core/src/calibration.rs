//! Exact binomial upper bounds and split-calibrated threshold selection.
//!
//! Given calibration units with gate scores `g(u)` and binary losses `l(u)`
//! recorded with the visual branch forced on, [`calibrate_threshold`] picks the
//! threshold with the largest activation coverage whose Clopper-Pearson upper
//! bound on the activated-subset error is at most `alpha` at confidence `1 - delta`.
//!
//! With `alpha = 0.10` and `delta = 0.05`, a feasible threshold needs at least
//! `ceil(ln 0.05 / ln 0.9) = 29` activated units even when none of them errs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `P(Bin(n, p) <= k)`, summed in log space.
pub fn binom_cdf(k: u64, n: u64, p: f64) -> f64 {
    if k >= n {
        return 1.0;
    }
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let mut ln_choose = 0.0f64;
    let mut terms = Vec::with_capacity(k as usize + 1);
    for j in 0..=k {
        if j > 0 {
            ln_choose += ((n - j + 1) as f64).ln() - (j as f64).ln();
        }
        terms.push(ln_choose + j as f64 * ln_p + (n - j) as f64 * ln_q);
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + s.ln()).exp().clamp(0.0, 1.0)
}

/// Exact one-sided Clopper-Pearson upper bound: the smallest `p` with
/// `binom_cdf(k, n, p) <= 1 - confidence`, found by bisection.
pub fn cp_upper(k: u64, n: u64, confidence: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::contract("cp_upper needs n >= 1"));
    }
    if k > n {
        return Err(Error::contract(format!("cp_upper with k = {k} > n = {n}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::contract("confidence must lie in (0, 1)"));
    }
    if k == n {
        return Ok(1.0);
    }
    let delta = 1.0 - confidence;
    // invariant: cdf(lo) > delta >= cdf(hi)
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if binom_cdf(k, n, mid) <= delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `cp_upper(k, n; 1 - delta) <= alpha` without running the bisection.
///
/// The CDF is decreasing in `p`, so the smallest `p` with `cdf <= delta` is at
/// most `alpha` exactly when `cdf(alpha) <= delta`.
pub fn cp_feasible(k: u64, n: u64, alpha: f64, delta: f64) -> bool {
    if n == 0 {
        return false;
    }
    if alpha >= 1.0 {
        return true;
    }
    if k == n || (k as f64) / (n as f64) > alpha {
        return false;
    }
    binom_cdf(k, n, alpha) <= delta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInput {
    pub scores: Vec<f64>,
    pub losses: Vec<bool>,
    pub alpha: f64,
    pub delta: f64,
}

impl CalibrationInput {
    pub fn new(scores: Vec<f64>, losses: Vec<bool>, alpha: f64, delta: f64) -> Self {
        Self {
            scores,
            losses,
            alpha,
            delta,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.scores.len() != self.losses.len() {
            return Err(Error::contract(format!(
                "{} scores but {} losses",
                self.scores.len(),
                self.losses.len()
            )));
        }
        if self.scores.is_empty() {
            return Err(Error::contract("empty calibration set"));
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::contract("calibration scores must be finite"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::contract("alpha must lie in (0, 1]"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::contract("delta must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Activation threshold; `+inf` (serialized as `"+inf"`) when nothing is feasible.
    #[serde(with = "tau_serde")]
    pub tau: f64,
    /// Activated calibration units `n(tau)`.
    pub n: u64,
    /// Errors among them `k(tau)`.
    pub k: u64,
    pub cp_upper: f64,
    pub coverage: f64,
    pub feasible: bool,
    pub calibration_size: u64,
    pub alpha: f64,
    pub delta: f64,
}

impl CalibrationResult {
    pub fn empirical_risk(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.k as f64 / self.n as f64
        }
    }
}

/// One candidate threshold with its activated-subset counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub tau: f64,
    pub n: u64,
    pub k: u64,
}

/// Distinct scores in descending order with the counts of `{u : g(u) >= tau}`.
pub fn candidate_thresholds(scores: &[f64], losses: &[bool]) -> Vec<Candidate> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out: Vec<Candidate> = Vec::new();
    let (mut n, mut k) = (0u64, 0u64);
    for (pos, &i) in order.iter().enumerate() {
        n += 1;
        k += u64::from(losses[i]);
        let last_of_tie = order.get(pos + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_tie {
            out.push(Candidate {
                tau: scores[i],
                n,
                k,
            });
        }
    }
    out
}

pub fn calibrate_threshold(input: &CalibrationInput) -> Result<CalibrationResult> {
    input.validate()?;
    let total = input.scores.len() as u64;
    let candidates = candidate_thresholds(&input.scores, &input.losses);
    // Activated sets are nested, so the feasible candidate with the largest
    // coverage is the first feasible one met from the low-threshold end.
    let chosen = candidates
        .iter()
        .rev()
        .find(|c| cp_feasible(c.k, c.n, input.alpha, input.delta));
    let confidence = 1.0 - input.delta;
    Ok(match chosen {
        Some(c) => CalibrationResult {
            tau: c.tau,
            n: c.n,
            k: c.k,
            cp_upper: cp_upper(c.k, c.n, confidence)?,
            coverage: c.n as f64 / total as f64,
            feasible: true,
            calibration_size: total,
            alpha: input.alpha,
            delta: input.delta,
        },
        None => CalibrationResult {
            tau: f64::INFINITY,
            n: 0,
            k: 0,
            cp_upper: 1.0,
            coverage: 0.0,
            feasible: false,
            calibration_size: total,
            alpha: input.alpha,
            delta: input.delta,
        },
    })
}

/// Serializes `+inf` as the string `"+inf"`; JSON has no infinity literal.
pub mod tau_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tau: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *tau == f64::INFINITY {
            s.serialize_str("+inf")
        } else {
            s.serialize_f64(*tau)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) if v.is_finite() => Ok(v),
            Raw::Num(_) => Err(de::Error::custom("tau must be finite or \"+inf\"")),
            Raw::Text(t) => match t.as_str() {
                "+inf" | "inf" | "infinity" => Ok(f64::INFINITY),
                other => other
                    .parse::<f64>()
                    .map_err(|_| de::Error::custom(format!("bad tau {other:?}"))),
            },
        }
    }
}

/// Parses a tau given on the command line or in a config file.
pub fn parse_tau(text: &str) -> Result<f64> {
    match text.trim() {
        "+inf" | "inf" | "infinity" => Ok(f64::INFINITY),
        t => t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::contract(format!("bad tau {t:?}"))),
    }
}

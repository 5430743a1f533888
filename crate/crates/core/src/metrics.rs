//! Selective-prediction curves, task F1 scores and the analytical cost model.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{Entity, EntityPrediction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub coverage: f64,
    pub risk: f64,
}

/// One point per unit, units ranked by score descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCoverageCurve {
    pub points: Vec<CurvePoint>,
}

impl RiskCoverageCurve {
    pub fn risks(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.risk).collect()
    }

    /// Two tab-separated columns, `coverage` then `risk`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("coverage\trisk\n");
        for p in &self.points {
            let _ = writeln!(out, "{}\t{}", p.coverage, p.risk);
        }
        out
    }
}

/// Which number ranks units on the curve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    #[default]
    Gate,
    Confidence,
}

/// Indices ordered by score descending, ties by index ascending.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn risk_coverage(scores: &[f64], losses: &[bool]) -> Result<RiskCoverageCurve> {
    if scores.len() != losses.len() {
        return Err(Error::contract(format!(
            "{} scores but {} losses",
            scores.len(),
            losses.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::contract(
            "risk-coverage curve needs at least one unit",
        ));
    }
    let n = scores.len() as f64;
    let mut errors = 0u64;
    let points = rank_by_score(scores)
        .into_iter()
        .enumerate()
        .map(|(i, idx)| {
            errors += u64::from(losses[idx]);
            let covered = (i + 1) as f64;
            CurvePoint {
                coverage: covered / n,
                risk: errors as f64 / covered,
            }
        })
        .collect();
    Ok(RiskCoverageCurve { points })
}

/// Mean of the prefix risks.
pub fn aurc(curve: &RiskCoverageCurve) -> f64 {
    if curve.points.is_empty() {
        return 0.0;
    }
    curve.points.iter().map(|p| p.risk).sum::<f64>() / curve.points.len() as f64
}

/// Largest coverage whose prefix risk is at most `alpha`, or 0.
pub fn act_cov_at(curve: &RiskCoverageCurve, alpha: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.risk <= alpha)
        .map(|p| p.coverage)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro counts; summing counts over shards gives the merged micro score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrfCounts {
    pub tp: u64,
    pub n_pred: u64,
    pub n_gold: u64,
}

impl std::ops::Add for PrfCounts {
    type Output = PrfCounts;

    fn add(self, o: PrfCounts) -> PrfCounts {
        PrfCounts {
            tp: self.tp + o.tp,
            n_pred: self.n_pred + o.n_pred,
            n_gold: self.n_gold + o.n_gold,
        }
    }
}

impl std::iter::Sum for PrfCounts {
    fn sum<I: Iterator<Item = PrfCounts>>(iter: I) -> PrfCounts {
        iter.fold(PrfCounts::default(), |a, b| a + b)
    }
}

impl PrfCounts {
    /// Scores with empty/empty counted as perfect.
    pub fn scores(&self) -> Prf {
        self.scores_with(true)
    }

    /// A zero denominator yields 0, except that nothing predicted against
    /// nothing gold yields 1 when `empty_is_perfect` is set.
    pub fn scores_with(&self, empty_is_perfect: bool) -> Prf {
        if self.n_pred == 0 && self.n_gold == 0 {
            let v = if empty_is_perfect { 1.0 } else { 0.0 };
            return Prf {
                precision: v,
                recall: v,
                f1: v,
            };
        }
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, self.n_pred);
        let recall = ratio(self.tp, self.n_gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

pub fn entity_counts(pred: &EntityPrediction, gold: &EntityPrediction) -> PrfCounts {
    let p: HashSet<Entity> = pred.entities.iter().copied().collect();
    let g: HashSet<Entity> = gold.entities.iter().copied().collect();
    PrfCounts {
        tp: p.intersection(&g).count() as u64,
        n_pred: p.len() as u64,
        n_gold: g.len() as u64,
    }
}

/// Strict match on start, end and type.
pub fn entity_f1(pred: &EntityPrediction, gold: &EntityPrediction) -> Prf {
    entity_counts(pred, gold).scores()
}

pub fn relation_counts(preds: &[usize], golds: &[usize], null: Option<usize>) -> Result<PrfCounts> {
    if preds.len() != golds.len() {
        return Err(Error::contract(format!(
            "{} relation predictions but {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    let real = |r: usize| Some(r) != null;
    let mut c = PrfCounts::default();
    for (&p, &g) in preds.iter().zip(golds) {
        c.n_pred += u64::from(real(p));
        c.n_gold += u64::from(real(g));
        c.tp += u64::from(real(p) && p == g);
    }
    Ok(c)
}

/// Micro P/R/F1 over pairs, ignoring the `null` relation if one is given.
pub fn relation_micro_f1(preds: &[usize], golds: &[usize], null: Option<usize>) -> Result<Prf> {
    Ok(relation_counts(preds, golds, null)?.scores())
}

/// Per-sample module costs in one shared unit. Region and fusion costs are per
/// selected image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub f_text: f64,
    pub f_vglob: f64,
    pub f_vreg_per_k: f64,
    pub f_fuse_per_k: f64,
    pub f_head: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            f_text: 13.0,
            f_vglob: 5.0,
            f_vreg_per_k: 10.0,
            f_fuse_per_k: 4.0,
            f_head: 2.0,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.f_text,
            self.f_vglob,
            self.f_vreg_per_k,
            self.f_fuse_per_k,
            self.f_head,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::contract(
                "cost entries must be finite and non-negative",
            ));
        }
        Ok(())
    }

    /// Cost paid on every sample regardless of routing.
    pub fn base(&self) -> f64 {
        self.f_text + self.f_vglob + self.f_head
    }

    /// Region extraction plus fusion for `k` images.
    pub fn visual(&self, k: usize) -> f64 {
        k as f64 * (self.f_vreg_per_k + self.f_fuse_per_k)
    }
}

pub fn estimate_cost(cfg: &CostConfig, gamma_bar: f64, k: usize) -> f64 {
    cfg.f_text + cfg.f_vglob + gamma_bar * cfg.visual(k) + cfg.f_head
}

pub fn always_on_cost(cfg: &CostConfig, k: usize) -> f64 {
    estimate_cost(cfg, 1.0, k)
}

//! Per-sample routing: gate every unit, send activated units through selection,
//! set aggregation and gated fusion, then decode.
//!
//! Units whose gate falls below `tau` take the text-only path and never touch
//! region matrices. Region matrices are loaded at most once per sample and
//! shared by every activated unit of that sample.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{
    build_evidence_set, consistency, fuse, pair_features, set_encode, span_rep, FusionMode,
    LazyRegions, ProjectionHead,
};
use crate::calibration::tau_serde;
use crate::dataset::{Sample, Span, UnitSpec};
use crate::error::{Error, Result};
use crate::gate::{gate_score, groundability_features, hard_gate, pair_gate};
use crate::metrics::CostConfig;
use crate::model::ModelWeights;
use crate::scoring::{
    ner_decode, re_predict, relation_confidence, relation_energies, unit_energy_terms,
    CandidateSpan, EnergyTable, EntityPrediction, ScoringHeads, DEFAULT_MAX_SPAN_LEN,
};
use crate::selector::{greedy_select, SimilarityBundle, SisWeights};

/// Task mode: span-level entity recognition or pair-level relation extraction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Mner,
    Mre,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Mner => "mner",
            Mode::Mre => "mre",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mner" => Ok(Mode::Mner),
            "mre" => Ok(Mode::Mre),
            other => Err(Error::contract(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    #[serde(with = "tau_serde")]
    pub tau: f64,
    /// Image budget `K`.
    pub budget_k: usize,
    pub k_regions: usize,
    pub sis: SisWeights,
    /// Overrides the consistency weight stored with the scoring heads.
    pub lambda_cons: Option<f64>,
    /// Overrides the gate-sparsity weight stored with the scoring heads.
    pub lambda_gate: Option<f64>,
    pub cost: CostConfig,
    pub max_span_len: usize,
    /// Activate every unit regardless of `tau`.
    pub force_on: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mner,
            tau: f64::INFINITY,
            budget_k: 2,
            k_regions: 3,
            sis: SisWeights::default(),
            lambda_cons: None,
            lambda_gate: None,
            cost: CostConfig::default(),
            max_span_len: DEFAULT_MAX_SPAN_LEN,
            force_on: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget_k == 0 {
            return Err(Error::contract("budget K must be at least 1"));
        }
        if self.tau.is_nan() || self.tau == f64::NEG_INFINITY {
            return Err(Error::contract("tau must be finite or +inf"));
        }
        if self.max_span_len == 0 {
            return Err(Error::contract("maximum span length must be positive"));
        }
        self.sis.validate()?;
        self.cost.validate()
    }

    fn heads(&self, weights: &ModelWeights) -> Result<ScoringHeads> {
        let mut heads = weights.heads.clone();
        if let Some(v) = self.lambda_cons {
            heads.lambda_cons = v;
        }
        if let Some(v) = self.lambda_gate {
            heads.lambda_gate = v;
        }
        heads.validate()?;
        Ok(heads)
    }

    fn active(&self, g: f64, has_images: bool) -> bool {
        has_images && (self.force_on || hard_gate(g, self.tau))
    }
}

/// Gate view of one unit, computed before any routing decision.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitGate {
    pub g: f64,
    /// Text representation: `h_s` for spans, `[h_h ; h_t ; dist]` for pairs.
    pub text: Vec<f64>,
    /// Query vector in image space.
    pub query: Vec<f64>,
}

fn span_gate(
    sample: &Sample,
    weights: &ModelWeights,
    span: Span,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let h = span_rep(&sample.tokens, span, &weights.span_proj)?;
    let q = weights.ent_proj.apply(&h)?;
    let feats = groundability_features(&q, &sample.globals())?;
    Ok((gate_score(&weights.gate, &h, &feats)?, h, q))
}

pub fn gate_unit(sample: &Sample, weights: &ModelWeights, unit: &UnitSpec) -> Result<UnitGate> {
    match *unit {
        UnitSpec::Span { span, .. } => {
            let (g, text, query) = span_gate(sample, weights, span)?;
            Ok(UnitGate { g, text, query })
        }
        UnitSpec::Pair { head, tail, .. } => {
            let (gh, hh, _) = span_gate(sample, weights, head)?;
            let (gt, ht, _) = span_gate(sample, weights, tail)?;
            let text = pair_features(&hh, &ht, head, tail, sample.tokens.rows());
            let query = weights.pair_proj.apply(&text)?;
            Ok(UnitGate {
                g: pair_gate(gh, gt),
                text,
                query,
            })
        }
    }
}

/// Gate scores of every unit in a sample, in unit order.
pub fn gate_scores(sample: &Sample, weights: &ModelWeights) -> Result<Vec<f64>> {
    sample
        .units
        .iter()
        .enumerate()
        .map(|(i, u)| {
            gate_unit(sample, weights, u)
                .map(|g| g.g)
                .map_err(|e| e.context(unit_id(&sample.id, i)))
        })
        .collect()
}

pub fn unit_id(sample_id: &str, index: usize) -> String {
    format!("{sample_id}:{index}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UnitEnergies {
    Span(EnergyTable),
    Pair { relations: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decision {
    /// `label` is `None` when the span is not decoded as an entity.
    Span {
        label: Option<usize>,
    },
    Pair {
        relation: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedUnitTrace {
    pub unit: String,
    pub g: f64,
    pub gamma: bool,
    /// Ids of the selected images, in selection order.
    pub chosen: Vec<String>,
    pub consis: f64,
    pub energies: UnitEnergies,
    pub decision: Decision,
    /// Region matrices this unit caused to be loaded.
    pub region_reads: usize,
    /// Softmax probability of the unit's decoded decision.
    pub confidence: f64,
}

/// Module invocations for one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostMeter {
    pub text_calls: u64,
    pub global_calls: u64,
    pub head_calls: u64,
    pub activated_units: u64,
    pub units: u64,
}

impl CostMeter {
    /// Base modules once per sample; region extraction and fusion for `K`
    /// images per activated unit, averaged over the sample's units.
    pub fn cost(&self, cfg: &CostConfig, k: usize) -> f64 {
        let share = if self.units == 0 {
            0.0
        } else {
            self.activated_units as f64 / self.units as f64
        };
        self.text_calls as f64 * cfg.f_text
            + self.global_calls as f64 * cfg.f_vglob
            + share * cfg.visual(k)
            + self.head_calls as f64 * cfg.f_head
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutput {
    pub id: String,
    pub mode: Mode,
    /// Decoded entities (entity mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<EntityPrediction>,
    /// One predicted relation per pair unit (relation mode only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relations: Vec<usize>,
    pub traces: Vec<RoutedUnitTrace>,
    pub gamma_bar: f64,
    pub cost: f64,
    pub meter: CostMeter,
    pub region_reads: usize,
}

struct Routed {
    gamma: bool,
    g: f64,
    chosen: Vec<String>,
    eta: f64,
    consis: f64,
    fused: Vec<f64>,
    reads: usize,
}

fn route_unit(
    sample: &Sample,
    weights: &ModelWeights,
    cfg: &PipelineConfig,
    gate: UnitGate,
    fuse_head: &ProjectionHead,
    cons_proj: &ProjectionHead,
    regions: &mut LazyRegions<'_>,
) -> Result<Routed> {
    let gamma = cfg.active(gate.g, !sample.images.is_empty());
    if !gamma {
        return Ok(Routed {
            gamma,
            g: gate.g,
            chosen: Vec::new(),
            eta: 0.0,
            consis: 0.0,
            fused: gate.text,
            reads: 0,
        });
    }
    let before = regions.reads();
    let bundle = SimilarityBundle::from_query(&gate.query, &sample.globals())?;
    let selection = greedy_select(&bundle, &cfg.sis, cfg.budget_k)?;
    let evidence = build_evidence_set(
        &gate.query,
        &selection,
        &sample.images,
        cfg.k_regions,
        regions,
    )?;
    let eta = FusionMode::TestHard.eta(gate.g, true);
    let (fused, consis) = if evidence.is_empty() {
        (gate.text, 0.0)
    } else {
        let z = set_encode(&evidence, &weights.set_encoder)?;
        let fused = fuse(&gate.text, &z, eta, fuse_head)?;
        let c = consistency(cons_proj, &fused, Some(&z))?;
        (fused, c)
    };
    Ok(Routed {
        gamma,
        g: gate.g,
        chosen: selection
            .chosen
            .iter()
            .map(|&i| sample.images[i].image_id.clone())
            .collect(),
        eta,
        consis,
        fused,
        reads: regions.reads() - before,
    })
}

/// Runs the full pipeline on one sample.
pub fn route_sample(
    sample: &Sample,
    weights: &ModelWeights,
    cfg: &PipelineConfig,
) -> Result<SampleOutput> {
    route_sample_inner(sample, weights, cfg)
        .map_err(|e| e.context(format!("sample {:?}", sample.id)))
}

fn route_sample_inner(
    sample: &Sample,
    weights: &ModelWeights,
    cfg: &PipelineConfig,
) -> Result<SampleOutput> {
    cfg.validate()?;
    let heads = cfg.heads(weights)?;
    let mut regions = LazyRegions::new(&sample.images);
    let (fuse_head, cons_proj) = match cfg.mode {
        Mode::Mner => (&weights.fuse_ent, &weights.ent_proj),
        Mode::Mre => (&weights.fuse_pair, &weights.pair_proj),
    };

    let mut routed = Vec::with_capacity(sample.units.len());
    for (i, unit) in sample.units.iter().enumerate() {
        let uid = unit_id(&sample.id, i);
        match (cfg.mode, unit) {
            (Mode::Mner, UnitSpec::Span { span, .. }) if span.width() > cfg.max_span_len => {
                return Err(Error::contract(format!(
                    "span of {} tokens exceeds the limit of {}",
                    span.width(),
                    cfg.max_span_len
                ))
                .context(uid));
            }
            (Mode::Mner, UnitSpec::Pair { .. }) | (Mode::Mre, UnitSpec::Span { .. }) => {
                return Err(
                    Error::contract(format!("unit kind does not match mode {}", cfg.mode))
                        .context(uid),
                );
            }
            _ => {}
        }
        let r = gate_unit(sample, weights, unit)
            .and_then(|gate| {
                route_unit(
                    sample,
                    weights,
                    cfg,
                    gate,
                    fuse_head,
                    cons_proj,
                    &mut regions,
                )
            })
            .map_err(|e| e.context(uid.clone()))?;
        routed.push((uid, unit, r));
    }

    let mut traces = Vec::with_capacity(routed.len());
    let mut entities = None;
    let mut relations = Vec::new();
    match cfg.mode {
        Mode::Mner => {
            let mut candidates = Vec::with_capacity(routed.len());
            for (uid, unit, r) in &routed {
                let UnitSpec::Span { span, .. } = unit else {
                    unreachable!()
                };
                let table = unit_energy_terms(&r.fused, r.eta, r.consis, &heads)
                    .map_err(|e| e.context(uid.clone()))?;
                candidates.push(CandidateSpan {
                    span: *span,
                    eta: r.eta,
                    consis: r.consis,
                    energies: table,
                });
            }
            let pred = ner_decode(&candidates);
            for ((uid, _, r), c) in routed.into_iter().zip(candidates) {
                traces.push(RoutedUnitTrace {
                    unit: uid,
                    g: r.g,
                    gamma: r.gamma,
                    chosen: r.chosen,
                    consis: r.consis,
                    confidence: c.energies.confidence(),
                    decision: Decision::Span {
                        label: pred.label_of(c.span),
                    },
                    energies: UnitEnergies::Span(c.energies),
                    region_reads: r.reads,
                });
            }
            entities = Some(pred);
        }
        Mode::Mre => {
            for (uid, _, r) in routed {
                let e = relation_energies(&r.fused, r.eta, r.consis, &heads)
                    .map_err(|e| e.context(uid.clone()))?;
                let rel = re_predict(&r.fused, r.eta, r.consis, &heads)
                    .map_err(|e| e.context(uid.clone()))?;
                relations.push(rel);
                traces.push(RoutedUnitTrace {
                    unit: uid,
                    g: r.g,
                    gamma: r.gamma,
                    chosen: r.chosen,
                    consis: r.consis,
                    confidence: relation_confidence(&e),
                    decision: Decision::Pair { relation: rel },
                    energies: UnitEnergies::Pair { relations: e },
                    region_reads: r.reads,
                });
            }
        }
    }

    let meter = CostMeter {
        text_calls: 1,
        global_calls: 1,
        head_calls: 1,
        activated_units: traces.iter().filter(|t| t.gamma).count() as u64,
        units: traces.len() as u64,
    };
    let gamma_bar = if traces.is_empty() {
        0.0
    } else {
        meter.activated_units as f64 / meter.units as f64
    };
    Ok(SampleOutput {
        id: sample.id.clone(),
        mode: cfg.mode,
        entities,
        relations,
        gamma_bar,
        cost: meter.cost(&cfg.cost, cfg.budget_k),
        meter,
        region_reads: regions.reads(),
        traces,
    })
}

/// Routes every sample, optionally on `jobs` worker threads. Output is sorted
/// by sample id and does not depend on the job count.
pub fn route_dataset(
    samples: &[Sample],
    weights: &ModelWeights,
    cfg: &PipelineConfig,
    jobs: Option<usize>,
) -> Result<Vec<SampleOutput>> {
    let run = || -> Result<Vec<SampleOutput>> {
        samples
            .par_iter()
            .map(|s| route_sample(s, weights, cfg))
            .collect()
    };
    let mut out = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::contract(format!("cannot start {n} workers: {e}")))?
            .install(run)?,
        None => run()?,
    };
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Dataset-level routing summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSummary {
    pub samples: usize,
    pub units: u64,
    pub activated_units: u64,
    pub mean_gamma_bar: f64,
    pub mean_cost: f64,
    pub region_reads: usize,
}

pub fn summarize(outputs: &[SampleOutput]) -> RouteSummary {
    let n = outputs.len().max(1) as f64;
    RouteSummary {
        samples: outputs.len(),
        units: outputs.iter().map(|o| o.meter.units).sum(),
        activated_units: outputs.iter().map(|o| o.meter.activated_units).sum(),
        mean_gamma_bar: outputs.iter().map(|o| o.gamma_bar).sum::<f64>() / n,
        mean_cost: outputs.iter().map(|o| o.cost).sum::<f64>() / n,
        region_reads: outputs.iter().map(|o| o.region_reads).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLoss {
    pub unit: String,
    pub score: f64,
    pub loss: bool,
}

/// `1{pred != gold}` over `Option<type>`, which is exactly
/// `1{delta_hat != delta or (delta = 1 and y_hat != y)}`.
pub fn entity_loss(predicted: Option<usize>, gold: Option<usize>) -> bool {
    predicted != gold
}

pub fn relation_loss(predicted: usize, gold: usize) -> bool {
    predicted != gold
}

/// Per-unit losses of a routed sample against its gold labels.
pub fn unit_losses(sample: &Sample, output: &SampleOutput) -> Result<Vec<bool>> {
    if !sample.labeled {
        return Err(Error::contract(format!(
            "sample {:?} has no gold labels",
            sample.id
        )));
    }
    if output.traces.len() != sample.units.len() {
        return Err(Error::contract(format!(
            "sample {:?}: {} traces for {} units",
            sample.id,
            output.traces.len(),
            sample.units.len()
        )));
    }
    sample
        .units
        .iter()
        .zip(&output.traces)
        .enumerate()
        .map(|(i, (unit, trace))| match (unit, trace.decision) {
            (UnitSpec::Span { gold, .. }, Decision::Span { label }) => {
                Ok(entity_loss(label, *gold))
            }
            (UnitSpec::Pair { gold: Some(g), .. }, Decision::Pair { relation }) => {
                Ok(relation_loss(relation, *g))
            }
            (UnitSpec::Pair { gold: None, .. }, _) => Err(Error::contract(format!(
                "unit {} has no gold relation",
                unit_id(&sample.id, i)
            ))),
            _ => Err(Error::contract(format!(
                "unit {} does not match its trace",
                unit_id(&sample.id, i)
            ))),
        })
        .collect()
}

/// Forces every gate on, runs the visual path and pairs each unit's gate score
/// with its downstream loss, ready for threshold calibration.
pub fn record_forced_on_losses(
    samples: &[Sample],
    weights: &ModelWeights,
    cfg: &PipelineConfig,
) -> Result<Vec<ScoredLoss>> {
    if let Some(s) = samples.iter().find(|s| !s.labeled) {
        return Err(Error::contract(format!(
            "sample {:?} has no gold labels",
            s.id
        )));
    }
    let forced = PipelineConfig {
        force_on: true,
        ..cfg.clone()
    };
    let by_id: HashMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let outputs = route_dataset(samples, weights, &forced, None)?;
    let mut out = Vec::new();
    for o in &outputs {
        let sample = by_id[o.id.as_str()];
        let losses = unit_losses(sample, o)?;
        out.extend(o.traces.iter().zip(losses).map(|(t, loss)| ScoredLoss {
            unit: t.unit.clone(),
            score: t.g,
            loss,
        }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::SetEncoderWeights;
    use crate::dataset::{ImageEntry, RegionSource};
    use crate::gate::GateModel;
    use crate::matrix::EmbeddingMatrix;
    use crate::metrics::estimate_cost;
    use std::sync::Arc;

    fn weights() -> ModelWeights {
        let d = 2;
        let p = 2 * d + 3;
        let mut pair_proj = ProjectionHead::zeros(p, d);
        for i in 0..d {
            pair_proj.set_weight(i, i, 0.5);
            pair_proj.set_weight(d + i, i, 0.5);
        }
        ModelWeights {
            span_proj: ProjectionHead::block_select(3 * d, 2 * d, d, 1.0),
            ent_proj: ProjectionHead::identity(d),
            pair_proj,
            fuse_ent: ProjectionHead::block_select(2 * d, 0, d, 1.0),
            fuse_pair: ProjectionHead::block_select(p + d, 0, p, 1.0),
            set_encoder: SetEncoderWeights::seeded(d, 1, 4, 3).unwrap(),
            gate: GateModel::psi_max_only(d, 10.0, 0.5),
            heads: ScoringHeads::seeded(d, 2, p, 3, 4),
        }
    }

    fn sample(units: Vec<UnitSpec>) -> Sample {
        let tokens =
            EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0], [0.9, 0.1], [0.0, 1.0]], None)
                .unwrap();
        let regions = EmbeddingMatrix::from_rows(&[[1.0f32, 0.2], [0.3, 1.0]], None).unwrap();
        Sample {
            id: "s".into(),
            labeled: true,
            tokens: Arc::new(tokens),
            images: vec![
                ImageEntry {
                    image_id: "a".into(),
                    global: vec![1.0, 0.0],
                    regions: Some(RegionSource::Inline(Arc::new(regions.clone()))),
                },
                ImageEntry {
                    image_id: "b".into(),
                    global: vec![0.8, 0.3],
                    regions: Some(RegionSource::Inline(Arc::new(regions))),
                },
            ],
            units,
        }
    }

    fn spans() -> Vec<UnitSpec> {
        (0..4)
            .map(|i| UnitSpec::Span {
                span: Span::new(i, i),
                gold: None,
            })
            .collect()
    }

    #[test]
    fn infinite_tau_is_text_only() {
        let s = sample(spans());
        let cfg = PipelineConfig::default();
        let out = route_sample(&s, &weights(), &cfg).unwrap();
        assert_eq!(out.gamma_bar, 0.0);
        assert_eq!(out.region_reads, 0);
        assert!(out
            .traces
            .iter()
            .all(|t| !t.gamma && t.chosen.is_empty() && t.consis == 0.0));
        assert_eq!(out.cost, estimate_cost(&cfg.cost, 0.0, cfg.budget_k));
    }

    #[test]
    fn half_activated() {
        // tokens 0 and 2 align with image a; 1 and 3 are orthogonal to it
        let s = sample(spans());
        let cfg = PipelineConfig {
            tau: 0.5,
            ..PipelineConfig::default()
        };
        let out = route_sample(&s, &weights(), &cfg).unwrap();
        let gammas: Vec<bool> = out.traces.iter().map(|t| t.gamma).collect();
        assert_eq!(gammas, vec![true, false, true, false]);
        assert_eq!(out.gamma_bar, 0.5);
        assert_eq!(out.cost, estimate_cost(&cfg.cost, 0.5, cfg.budget_k));
        // both images' regions are read once and then served from the cache
        assert_eq!(out.region_reads, 2);
        assert_eq!(out.traces[0].region_reads, 2);
        assert_eq!(out.traces[2].region_reads, 0);
        for t in &out.traces {
            if !t.gamma {
                assert_eq!(t.region_reads, 0);
            }
        }
    }

    #[test]
    fn pair_gate_uses_max_rule() {
        let s = sample(vec![UnitSpec::Pair {
            head: Span::new(0, 0),
            tail: Span::new(1, 1),
            gold: Some(1),
        }]);
        let w = weights();
        let cfg = PipelineConfig {
            mode: Mode::Mre,
            tau: 0.5,
            ..PipelineConfig::default()
        };
        let out = route_sample(&s, &w, &cfg).unwrap();
        let (gh, _, _) = span_gate(&s, &w, Span::new(0, 0)).unwrap();
        let (gt, _, _) = span_gate(&s, &w, Span::new(1, 1)).unwrap();
        assert!(gh >= 0.9 && gt < 0.5);
        assert!(out.traces[0].gamma);
        assert_eq!(out.gamma_bar, 1.0);
        assert_eq!(out.relations.len(), 1);
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let s = sample(spans());
        let cfg = PipelineConfig {
            mode: Mode::Mre,
            ..PipelineConfig::default()
        };
        let err = route_sample(&s, &weights(), &cfg).unwrap_err();
        assert!(matches!(err.root(), Error::Contract(_)));
    }

    #[test]
    fn forced_losses_need_gold() {
        let mut s = sample(vec![UnitSpec::Pair {
            head: Span::new(0, 0),
            tail: Span::new(1, 1),
            gold: None,
        }]);
        let cfg = PipelineConfig {
            mode: Mode::Mre,
            ..PipelineConfig::default()
        };
        assert!(record_forced_on_losses(&[s.clone()], &weights(), &cfg).is_err());
        s.units = spans();
        s.labeled = false;
        assert!(record_forced_on_losses(&[s], &weights(), &PipelineConfig::default()).is_err());
    }

    #[test]
    fn forced_losses_cover_every_unit() {
        let s = sample(spans());
        let out = record_forced_on_losses(&[s], &weights(), &PipelineConfig::default()).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out[0].unit, "s:0");
    }

    #[test]
    fn loss_definitions() {
        assert!(!entity_loss(Some(1), Some(1)));
        assert!(!entity_loss(None, None));
        assert!(entity_loss(Some(0), Some(1)));
        assert!(entity_loss(None, Some(1)));
        assert!(entity_loss(Some(1), None));
        assert!(relation_loss(2, 1));
    }

    #[test]
    fn jobs_do_not_change_output() {
        let mut a = sample(spans());
        let mut b = a.clone();
        a.id = "z".into();
        b.id = "m".into();
        let cfg = PipelineConfig {
            tau: 0.3,
            ..PipelineConfig::default()
        };
        let one = route_dataset(&[a.clone(), b.clone()], &weights(), &cfg, Some(1)).unwrap();
        let four = route_dataset(&[a, b], &weights(), &cfg, Some(4)).unwrap();
        assert_eq!(one, four);
        assert_eq!(one[0].id, "m");
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = PipelineConfig {
            tau: 0.25,
            mode: Mode::Mre,
            ..PipelineConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<PipelineConfig>(&text).unwrap(), cfg);
        let inf: PipelineConfig = toml::from_str("tau = \"+inf\"").unwrap();
        assert_eq!(inf.tau, f64::INFINITY);
    }
}

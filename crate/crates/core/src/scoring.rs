//! Energy-based scoring for entity spans and relations, with greedy
//! non-overlapping span decoding.
//!
//! Head outputs are logits; energies are their negatives. Every unit also pays
//! `lambda_cons * eta * (-consis) + lambda_gate * eta`, a term shared by all of
//! that unit's decisions.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::softmax;
use crate::dataset::Span;
use crate::error::{Error, Result};

pub const HEADS_VERSION: u32 = 1;

/// Default maximum candidate span length.
pub const DEFAULT_MAX_SPAN_LEN: usize = 10;

/// Linear head producing one logit per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScorer {
    pub classes: usize,
    pub dim: usize,
    /// Row-major `classes x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearScorer {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
        }
    }

    pub fn seeded(classes: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        use rand::Rng;
        let limit = (6.0 / (classes + dim) as f64).sqrt();
        Self {
            classes,
            dim,
            weights: (0..classes * dim)
                .map(|_| rng.random_range(-limit..limit))
                .collect(),
            bias: vec![0.0; classes],
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::contract(format!("{name} has an empty inventory")));
        }
        if self.weights.len() != self.classes * self.dim || self.bias.len() != self.classes {
            return Err(Error::contract(format!("{name} has inconsistent shapes")));
        }
        Ok(())
    }

    /// Energies `-(W x + b)`.
    pub fn energies(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::contract(format!(
                "scorer expects dim {}, got {}",
                self.dim,
                x.len()
            )));
        }
        Ok((0..self.classes)
            .map(|c| {
                let row = &self.weights[c * self.dim..(c + 1) * self.dim];
                -(row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[c])
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HeadsRecord", into = "HeadsRecord")]
pub struct ScoringHeads {
    /// Two classes: index 0 scores "not an entity", index 1 "entity".
    pub span_head: LinearScorer,
    pub type_head: LinearScorer,
    pub rel_head: LinearScorer,
    pub lambda_cons: f64,
    pub lambda_gate: f64,
}

#[derive(Serialize, Deserialize)]
struct HeadsRecord {
    version: u32,
    span_head: LinearScorer,
    type_head: LinearScorer,
    rel_head: LinearScorer,
    lambda_cons: f64,
    lambda_gate: f64,
}

impl TryFrom<HeadsRecord> for ScoringHeads {
    type Error = Error;

    fn try_from(r: HeadsRecord) -> Result<Self> {
        if r.version != HEADS_VERSION {
            return Err(Error::contract(format!(
                "unsupported heads version {}",
                r.version
            )));
        }
        let h = ScoringHeads {
            span_head: r.span_head,
            type_head: r.type_head,
            rel_head: r.rel_head,
            lambda_cons: r.lambda_cons,
            lambda_gate: r.lambda_gate,
        };
        h.validate()?;
        Ok(h)
    }
}

impl From<ScoringHeads> for HeadsRecord {
    fn from(h: ScoringHeads) -> Self {
        HeadsRecord {
            version: HEADS_VERSION,
            span_head: h.span_head,
            type_head: h.type_head,
            rel_head: h.rel_head,
            lambda_cons: h.lambda_cons,
            lambda_gate: h.lambda_gate,
        }
    }
}

impl ScoringHeads {
    pub fn zeros(span_dim: usize, n_types: usize, pair_dim: usize, n_relations: usize) -> Self {
        Self {
            span_head: LinearScorer::zeros(2, span_dim),
            type_head: LinearScorer::zeros(n_types, span_dim),
            rel_head: LinearScorer::zeros(n_relations, pair_dim),
            lambda_cons: 0.0,
            lambda_gate: 0.0,
        }
    }

    pub fn seeded(
        span_dim: usize,
        n_types: usize,
        pair_dim: usize,
        n_relations: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            span_head: LinearScorer::seeded(2, span_dim, &mut rng),
            type_head: LinearScorer::seeded(n_types, span_dim, &mut rng),
            rel_head: LinearScorer::seeded(n_relations, pair_dim, &mut rng),
            lambda_cons: 1.0,
            lambda_gate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.span_head.validate("span head")?;
        if self.span_head.classes != 2 {
            return Err(Error::contract("span head must have exactly two classes"));
        }
        self.type_head.validate("type head")?;
        self.rel_head.validate("relation head")?;
        if self.span_head.dim != self.type_head.dim {
            return Err(Error::contract("span and type heads disagree on input dim"));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_cons) || !ok(self.lambda_gate) {
            return Err(Error::contract("lambdas must be finite and non-negative"));
        }
        Ok(())
    }

    /// `lambda_cons * eta * f_cons(consis) + lambda_gate * eta` with `f_cons(x) = -x`.
    pub fn unit_term(&self, eta: f64, consis: f64) -> f64 {
        self.lambda_cons * eta * (-consis) + self.lambda_gate * eta
    }
}

/// Energies of every decision available to one candidate span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTable {
    /// Span head energy for "not an entity".
    pub no_entity: f64,
    /// Span head energy for "entity".
    pub entity: f64,
    /// Type head energy per type.
    pub types: Vec<f64>,
    /// Consistency and gate-sparsity term shared by all decisions.
    pub unit_term: f64,
}

impl EnergyTable {
    /// Lowest-energy type (ties to the lowest id) and its `entity + type` energy.
    pub fn best_type(&self) -> (usize, f64) {
        let mut best = (0, self.entity + self.types[0]);
        for (y, &e) in self.types.iter().enumerate().skip(1) {
            if self.entity + e < best.1 {
                best = (y, self.entity + e);
            }
        }
        best
    }

    /// A candidate is kept only if its best typed energy is strictly below the
    /// no-entity energy.
    pub fn admissible(&self) -> bool {
        self.best_type().1 < self.no_entity
    }

    /// Total energy of labelling the span with `label` (`None` = not an entity).
    pub fn decision_energy(&self, label: Option<usize>) -> f64 {
        let head = match label {
            None => self.no_entity,
            Some(y) => self.entity + self.types[y],
        };
        head + self.unit_term
    }

    /// Softmax probability of the decoder's own choice over all decisions.
    pub fn confidence(&self) -> f64 {
        let mut logits = vec![-self.no_entity];
        logits.extend(self.types.iter().map(|t| -(self.entity + t)));
        let p = softmax(&logits);
        if self.admissible() {
            p[1 + self.best_type().0]
        } else {
            p[0]
        }
    }
}

pub fn unit_energy_terms(
    h_tilde: &[f64],
    eta: f64,
    consis: f64,
    heads: &ScoringHeads,
) -> Result<EnergyTable> {
    let span = heads.span_head.energies(h_tilde)?;
    let types = heads.type_head.energies(h_tilde)?;
    Ok(EnergyTable {
        no_entity: span[0],
        entity: span[1],
        types,
        unit_term: heads.unit_term(eta, consis),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpan {
    pub span: Span,
    pub eta: f64,
    pub consis: f64,
    pub energies: EnergyTable,
}

impl CandidateSpan {
    pub fn score(
        span: Span,
        h_tilde: &[f64],
        eta: f64,
        consis: f64,
        heads: &ScoringHeads,
    ) -> Result<Self> {
        Ok(Self {
            span,
            eta,
            consis,
            energies: unit_energy_terms(h_tilde, eta, consis, heads)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    #[serde(rename = "a")]
    pub start: usize,
    #[serde(rename = "b")]
    pub end: usize,
    #[serde(rename = "type")]
    pub label: usize,
}

impl Entity {
    pub fn new(start: usize, end: usize, label: usize) -> Self {
        Self { start, end, label }
    }

    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

/// Decoded entities, sorted by `(start, end, label)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityPrediction {
    pub entities: Vec<Entity>,
}

impl EntityPrediction {
    pub fn label_of(&self, span: Span) -> Option<usize> {
        self.entities
            .iter()
            .find(|e| e.span() == span)
            .map(|e| e.label)
    }
}

/// Greedy decoding: admissible candidates sorted by total energy (ties by
/// start, end, type) are accepted unless they overlap an accepted span.
pub fn ner_decode(candidates: &[CandidateSpan]) -> EntityPrediction {
    let mut items: Vec<(f64, Entity)> = candidates
        .iter()
        .filter(|c| c.energies.admissible())
        .map(|c| {
            let (label, _) = c.energies.best_type();
            let total = c.energies.decision_energy(Some(label));
            (total, Entity::new(c.span.start, c.span.end, label))
        })
        .collect();
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let mut accepted: Vec<Entity> = Vec::new();
    for (_, e) in items {
        if accepted.iter().all(|a| !a.span().overlaps(&e.span())) {
            accepted.push(e);
        }
    }
    accepted.sort();
    EntityPrediction { entities: accepted }
}

/// Relation energies `phi_rel(u, r) + unit term`.
pub fn relation_energies(
    u_tilde: &[f64],
    eta: f64,
    consis: f64,
    heads: &ScoringHeads,
) -> Result<Vec<f64>> {
    let term = heads.unit_term(eta, consis);
    Ok(heads
        .rel_head
        .energies(u_tilde)?
        .into_iter()
        .map(|e| e + term)
        .collect())
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if v.total_cmp(&values[best]) == Ordering::Less {
            best = i;
        }
    }
    best
}

/// Lowest-energy relation, ties to the lowest id. The unit term is shared by
/// every relation, so the answer depends only on the relation head.
pub fn re_predict(u_tilde: &[f64], eta: f64, consis: f64, heads: &ScoringHeads) -> Result<usize> {
    let e = heads.rel_head.energies(u_tilde)?;
    if e.is_empty() {
        return Err(Error::contract("empty relation inventory"));
    }
    let _ = (eta, consis);
    Ok(argmin(&e))
}

/// Softmax probability of the arg-min relation.
pub fn relation_confidence(energies: &[f64]) -> f64 {
    let logits: Vec<f64> = energies.iter().map(|e| -e).collect();
    softmax(&logits)[argmin(energies)]
}

/// Joint entity energy of a prediction over a candidate set: span-head terms
/// for every candidate, type terms for predicted entities, plus every unit term.
pub fn total_energy(prediction: &EntityPrediction, candidates: &[CandidateSpan]) -> Result<f64> {
    for e in &prediction.entities {
        if !candidates.iter().any(|c| c.span == e.span()) {
            return Err(Error::contract(format!(
                "predicted span ({}, {}) is not a candidate",
                e.start, e.end
            )));
        }
        if candidates
            .iter()
            .find(|c| c.span == e.span())
            .is_some_and(|c| e.label >= c.energies.types.len())
        {
            return Err(Error::contract(format!("unknown entity type {}", e.label)));
        }
    }
    Ok(candidates
        .iter()
        .map(|c| c.energies.decision_energy(prediction.label_of(c.span)))
        .sum())
}

/// Joint relation energy of label `r`.
pub fn relation_total_energy(
    u_tilde: &[f64],
    relation: usize,
    eta: f64,
    consis: f64,
    heads: &ScoringHeads,
) -> Result<f64> {
    let e = relation_energies(u_tilde, eta, consis, heads)?;
    e.get(relation)
        .copied()
        .ok_or_else(|| Error::contract(format!("unknown relation {relation}")))
}

/// Every span of up to `max_len` tokens over `n_tokens` tokens.
pub fn enumerate_spans(n_tokens: usize, max_len: usize) -> Vec<Span> {
    let mut out = Vec::new();
    for a in 0..n_tokens {
        for b in a..n_tokens.min(a + max_len) {
            out.push(Span::new(a, b));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(no_entity: f64, entity: f64, types: Vec<f64>) -> EnergyTable {
        EnergyTable {
            no_entity,
            entity,
            types,
            unit_term: 0.0,
        }
    }

    fn cand(a: usize, b: usize, total: f64) -> CandidateSpan {
        CandidateSpan {
            span: Span::new(a, b),
            eta: 0.0,
            consis: 0.0,
            energies: table(10.0, total, vec![0.0]),
        }
    }

    #[test]
    fn zero_eta_leaves_text_scores() {
        let mut heads = ScoringHeads::seeded(3, 2, 4, 2, 1);
        heads.lambda_cons = 2.0;
        heads.lambda_gate = 0.5;
        let h = [0.1, -0.2, 0.3];
        let t = unit_energy_terms(&h, 0.0, 0.9, &heads).unwrap();
        assert_eq!(t.unit_term, 0.0);
        assert_eq!(t.types, heads.type_head.energies(&h).unwrap());
    }

    #[test]
    fn unit_term_arithmetic() {
        let mut heads = ScoringHeads::zeros(1, 1, 1, 1);
        heads.lambda_cons = 1.0;
        heads.lambda_gate = 0.3;
        let t = unit_energy_terms(&[0.0], 1.0, 0.8, &heads).unwrap();
        assert!((t.unit_term - (-0.8 + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn zero_heads_tie_and_reject() {
        let heads = ScoringHeads::zeros(2, 3, 2, 4);
        let t = unit_energy_terms(&[1.0, 1.0], 0.0, 0.0, &heads).unwrap();
        assert_eq!(t.best_type(), (0, 0.0));
        // equal energies: "not an entity" wins
        assert!(!t.admissible());
        assert_eq!(re_predict(&[1.0, 1.0], 0.5, 0.5, &heads).unwrap(), 0);
    }

    #[test]
    fn decode_empty() {
        assert!(ner_decode(&[]).entities.is_empty());
        let c = CandidateSpan {
            span: Span::new(0, 0),
            eta: 0.0,
            consis: 0.0,
            energies: table(-1.0, 0.0, vec![0.0]),
        };
        assert!(ner_decode(&[c]).entities.is_empty());
    }

    #[test]
    fn decode_overlap_example() {
        let p = ner_decode(&[cand(0, 2, 0.3), cand(1, 2, 0.5), cand(0, 1, 0.2)]);
        assert_eq!(p.entities, vec![Entity::new(0, 1, 0)]);
    }

    #[test]
    fn decode_disjoint_spans_both_kept() {
        let p = ner_decode(&[cand(3, 4, 0.9), cand(0, 1, 0.1)]);
        assert_eq!(p.entities, vec![Entity::new(0, 1, 0), Entity::new(3, 4, 0)]);
    }

    #[test]
    fn decode_equal_energy_ties_by_position() {
        let p = ner_decode(&[cand(1, 2, 0.5), cand(0, 1, 0.5)]);
        assert_eq!(p.entities, vec![Entity::new(0, 1, 0)]);
    }

    #[test]
    fn relation_argmin_example() {
        let mut heads = ScoringHeads::zeros(1, 1, 1, 3);
        heads.rel_head.bias = vec![-0.4, -0.1, -0.9];
        heads.lambda_cons = 3.0;
        heads.lambda_gate = 1.0;
        // energies are [0.4, 0.1, 0.9]
        assert_eq!(
            heads.rel_head.energies(&[0.0]).unwrap(),
            vec![0.4, 0.1, 0.9]
        );
        for (eta, consis) in [(0.0, 0.0), (1.0, 1.0), (0.3, -0.7)] {
            assert_eq!(re_predict(&[0.0], eta, consis, &heads).unwrap(), 1);
            let e = relation_energies(&[0.0], eta, consis, &heads).unwrap();
            assert_eq!(argmin(&e), 1);
        }
    }

    #[test]
    fn single_relation_inventory() {
        let heads = ScoringHeads::seeded(2, 2, 2, 1, 5);
        assert_eq!(re_predict(&[0.4, -3.0], 0.2, 0.1, &heads).unwrap(), 0);
    }

    #[test]
    fn total_energy_examples() {
        let heads = ScoringHeads::zeros(1, 2, 1, 1);
        let c = CandidateSpan::score(Span::new(0, 0), &[1.0], 0.0, 0.0, &heads).unwrap();
        assert_eq!(
            total_energy(&EntityPrediction::default(), &[c]).unwrap(),
            0.0
        );

        // two candidates with hand-set energies
        let c1 = CandidateSpan {
            span: Span::new(0, 0),
            eta: 0.0,
            consis: 0.0,
            energies: table(0.5, -1.0, vec![0.25, -0.75]),
        };
        let c2 = CandidateSpan {
            span: Span::new(1, 2),
            eta: 0.0,
            consis: 0.0,
            energies: table(-0.2, 0.3, vec![0.1, 0.4]),
        };
        let pred = EntityPrediction {
            entities: vec![Entity::new(0, 0, 1)],
        };
        let e = total_energy(&pred, &[c1.clone(), c2.clone()]).unwrap();
        assert!((e - (-1.0 - 0.75 - 0.2)).abs() < 1e-15);

        // an activated unit with consis = 1 and unit lambdas adds -1 + 1 = 0
        let mut heads = ScoringHeads::zeros(1, 2, 1, 1);
        heads.lambda_cons = 1.0;
        heads.lambda_gate = 1.0;
        let mut c3 = CandidateSpan::score(Span::new(3, 3), &[0.0], 1.0, 1.0, &heads).unwrap();
        c3.energies.no_entity = 0.0;
        let with = total_energy(&pred, &[c1, c2, c3]).unwrap();
        assert!((with - e).abs() < 1e-15);
    }

    #[test]
    fn total_energy_rejects_foreign_span() {
        let pred = EntityPrediction {
            entities: vec![Entity::new(5, 5, 0)],
        };
        assert!(total_energy(&pred, &[cand(0, 0, 0.0)]).is_err());
    }

    #[test]
    fn span_enumeration_respects_max_len() {
        let spans = enumerate_spans(12, 10);
        assert!(spans.iter().all(|s| s.width() <= 10));
        assert_eq!(spans.len(), (12 * 13 / 2) - 3);
        assert_eq!(enumerate_spans(3, 10).len(), 6);
    }

    #[test]
    fn heads_json_round_trip() {
        let h = ScoringHeads::seeded(3, 2, 9, 4, 7);
        let text = serde_json::to_string(&h).unwrap();
        assert_eq!(serde_json::from_str::<ScoringHeads>(&text).unwrap(), h);
    }

    #[test]
    fn confidence_is_a_probability() {
        let t = table(0.0, -1.0, vec![0.0, 2.0]);
        let c = t.confidence();
        assert!(c > 0.0 && c < 1.0);
        assert!((relation_confidence(&[0.0, 0.0]) - 0.5).abs() < 1e-15);
    }
}

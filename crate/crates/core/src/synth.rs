//! Synthetic multimodal worlds with known ground truth.
//!
//! Every sample has a topic direction. Useful images sit near the topic,
//! redundant images duplicate a useful one and misleading images point away
//! from it. Groundable units have tokens aligned with the topic; the remaining
//! units have tokens orthogonal to it. Each unit records the probability that
//! the downstream decision is wrong with and without visual evidence, plus one
//! sampled outcome of each, so the true risk of any threshold is known.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{ProjectionHead, SetEncoderWeights};
use crate::calibration::{calibrate_threshold, CalibrationInput};
use crate::dataset::{
    FileRef, ImageEntry, ImageRecord, MatrixField, RegionSource, Sample, SampleRecord, Span,
    UnitSpec, VectorField, DATASET_VERSION,
};
use crate::error::{Error, Result};
use crate::gate::GateModel;
use crate::matrix::{write_matrix, EmbeddingMatrix};
use crate::model::ModelWeights;
use crate::pipeline::{gate_scores, Mode};
use crate::scoring::ScoringHeads;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub mode: Mode,
    pub n_samples: usize,
    pub images_min: usize,
    pub images_max: usize,
    pub dim: usize,
    /// Span units per sample in entity mode; relation samples carry one pair.
    pub units_per_sample: usize,
    pub regions_per_image: usize,
    pub groundable_fraction: f64,
    /// Share of a sample's extra images that are misleading.
    pub misleading_fraction: f64,
    /// Share of a sample's extra images that duplicate a useful image.
    pub redundant_fraction: f64,
    pub noise_scale: f64,
    /// Cosine of groundable tokens with the topic.
    pub relevance_gap: f64,
    /// Error probability of a groundable unit that receives visual evidence.
    pub err_grounded: f64,
    /// Error probability of a non-groundable unit that receives visual evidence.
    pub err_misled: f64,
    /// Error probability of any unit decided from text alone.
    pub err_text: f64,
    /// Share of span units that are gold entities.
    pub entity_fraction: f64,
    pub n_types: usize,
    pub n_relations: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mner,
            n_samples: 100,
            images_min: 2,
            images_max: 4,
            dim: 16,
            units_per_sample: 4,
            regions_per_image: 4,
            groundable_fraction: 0.4,
            misleading_fraction: 0.3,
            redundant_fraction: 0.3,
            noise_scale: 0.3,
            relevance_gap: 0.8,
            err_grounded: 0.01,
            err_misled: 0.95,
            err_text: 0.15,
            entity_fraction: 0.8,
            n_types: 4,
            n_relations: 5,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("groundable_fraction", self.groundable_fraction),
            ("misleading_fraction", self.misleading_fraction),
            ("redundant_fraction", self.redundant_fraction),
            ("relevance_gap", self.relevance_gap),
            ("err_grounded", self.err_grounded),
            ("err_misled", self.err_misled),
            ("err_text", self.err_text),
            ("entity_fraction", self.entity_fraction),
        ];
        if let Some((name, v)) = fractions.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(Error::contract(format!("{name} = {v} is outside [0, 1]")));
        }
        if self.misleading_fraction + self.redundant_fraction > 1.0 {
            return Err(Error::contract(
                "misleading and redundant fractions exceed 1",
            ));
        }
        if self.dim < 2 {
            return Err(Error::contract("world dim must be at least 2"));
        }
        if self.images_min == 0 || self.images_min > self.images_max {
            return Err(Error::contract("need 1 <= images_min <= images_max"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::contract(
                "noise_scale must be finite and non-negative",
            ));
        }
        if self.n_types == 0 || self.n_relations == 0 || self.units_per_sample == 0 {
            return Err(Error::contract(
                "type, relation and unit counts must be positive",
            ));
        }
        Ok(())
    }

    /// Units generated per sample.
    pub fn units_per_record(&self) -> usize {
        match self.mode {
            Mode::Mner => self.units_per_sample,
            Mode::Mre => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageRole {
    Useful,
    Redundant,
    Misleading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTruth {
    pub unit: String,
    pub groundable: bool,
    pub error_prob_activated: f64,
    pub error_prob_text: f64,
    pub loss_activated: bool,
    pub loss_text: bool,
    pub gold: Option<usize>,
}

impl UnitTruth {
    pub fn loss(&self, activated: bool) -> bool {
        if activated {
            self.loss_activated
        } else {
            self.loss_text
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTruth {
    pub id: String,
    pub image_roles: Vec<ImageRole>,
    pub units: Vec<UnitTruth>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub samples: Vec<Sample>,
    pub truth: Vec<SampleTruth>,
}

impl World {
    pub fn unit_truths(&self) -> impl Iterator<Item = &UnitTruth> {
        self.truth.iter().flat_map(|t| &t.units)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    let s = scale / (dim as f64).sqrt();
    (0..dim)
        .map(|_| s * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in &mut v {
            *x /= n;
        }
    }
    v
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, dim, 1.0);
        if v.iter().any(|x| *x != 0.0) {
            return normalize(v);
        }
    }
}

/// A random unit vector orthogonal to the unit vector `t`.
fn orthogonal_to(rng: &mut ChaCha8Rng, t: &[f64]) -> Vec<f64> {
    loop {
        let mut v = unit_vector(rng, t.len());
        let c: f64 = v.iter().zip(t).map(|(a, b)| a * b).sum();
        for (x, y) in v.iter_mut().zip(t) {
            *x -= c * y;
        }
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            return normalize(v);
        }
    }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

struct Generator<'a> {
    cfg: &'a WorldConfig,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn token(&mut self, topic: &[f64], groundable: bool) -> Vec<f64> {
        let cfg = self.cfg;
        let o = orthogonal_to(&mut self.rng, topic);
        let mut v = if groundable {
            let mut v = vec![0.0; topic.len()];
            axpy(cfg.relevance_gap, topic, &mut v);
            axpy((1.0 - cfg.relevance_gap.powi(2)).sqrt(), &o, &mut v);
            v
        } else {
            o
        };
        let noise = gaussian(&mut self.rng, topic.len(), cfg.noise_scale);
        axpy(1.0, &noise, &mut v);
        v
    }

    fn images(&mut self, topic: &[f64], id: &str) -> (Vec<ImageEntry>, Vec<ImageRole>) {
        let cfg = self.cfg;
        let n = self.rng.random_range(cfg.images_min..=cfg.images_max);
        let mut images: Vec<ImageEntry> = Vec::with_capacity(n);
        let mut roles = Vec::with_capacity(n);
        let mut useful = Vec::new();
        for i in 0..n {
            let roll: f64 = self.rng.random();
            let role = if i == 0 {
                ImageRole::Useful
            } else if roll < cfg.misleading_fraction {
                ImageRole::Misleading
            } else if roll < cfg.misleading_fraction + cfg.redundant_fraction {
                ImageRole::Redundant
            } else {
                ImageRole::Useful
            };
            let image_id = format!("{id}-img{i}");
            let entry = if role == ImageRole::Redundant {
                let src: &ImageEntry = &images[useful[self.rng.random_range(0..useful.len())]];
                ImageEntry {
                    image_id,
                    global: src.global.clone(),
                    regions: src.regions.clone(),
                }
            } else {
                let sign = if role == ImageRole::Misleading {
                    -1.0
                } else {
                    1.0
                };
                let mut g = gaussian(&mut self.rng, topic.len(), cfg.noise_scale);
                axpy(sign, topic, &mut g);
                let regions = (0..cfg.regions_per_image)
                    .map(|_| {
                        let mut r = gaussian(&mut self.rng, topic.len(), cfg.noise_scale + 0.5);
                        axpy(sign, topic, &mut r);
                        to_f32(&r)
                    })
                    .collect::<Vec<_>>();
                let regions = if regions.is_empty() {
                    None
                } else {
                    let m = EmbeddingMatrix::from_rows(&regions, Some(topic.len()))
                        .expect("region shape");
                    Some(RegionSource::Inline(Arc::new(m)))
                };
                ImageEntry {
                    image_id,
                    global: to_f32(&g),
                    regions,
                }
            };
            if role == ImageRole::Useful {
                useful.push(i);
            }
            images.push(entry);
            roles.push(role);
        }
        (images, roles)
    }

    fn truth(&mut self, unit: String, groundable: bool, gold: Option<usize>) -> UnitTruth {
        let cfg = self.cfg;
        let p_act = if groundable {
            cfg.err_grounded
        } else {
            cfg.err_misled
        };
        let loss_activated = self.rng.random::<f64>() < p_act;
        let loss_text = self.rng.random::<f64>() < cfg.err_text;
        UnitTruth {
            unit,
            groundable,
            error_prob_activated: p_act,
            error_prob_text: cfg.err_text,
            loss_activated,
            loss_text,
            gold,
        }
    }

    fn sample(&mut self, index: usize) -> (Sample, SampleTruth) {
        let cfg = self.cfg;
        let id = format!("s{index:06}");
        let topic = unit_vector(&mut self.rng, cfg.dim);
        let (images, image_roles) = self.images(&topic, &id);

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut units = Vec::new();
        let mut truths = Vec::new();
        let push_span = |g: &mut Self, groundable: bool, rows: &mut Vec<Vec<f64>>| {
            let width = g.rng.random_range(1..=2usize);
            let start = rows.len();
            for _ in 0..width {
                let t = g.token(&topic, groundable);
                rows.push(t);
            }
            // one filler token after every span
            let filler = g.token(&topic, false);
            rows.push(filler);
            Span::new(start, start + width - 1)
        };
        match cfg.mode {
            Mode::Mner => {
                for u in 0..cfg.units_per_sample {
                    let groundable = self.rng.random::<f64>() < cfg.groundable_fraction;
                    let span = push_span(self, groundable, &mut rows);
                    let gold = (self.rng.random::<f64>() < cfg.entity_fraction)
                        .then(|| self.rng.random_range(0..cfg.n_types));
                    units.push(UnitSpec::Span { span, gold });
                    truths.push(self.truth(format!("{id}:{u}"), groundable, gold));
                }
            }
            Mode::Mre => {
                let groundable = self.rng.random::<f64>() < cfg.groundable_fraction;
                let head_grounded = groundable && self.rng.random::<bool>();
                let tail_grounded = groundable && !head_grounded;
                let head = push_span(self, head_grounded, &mut rows);
                let tail = push_span(self, tail_grounded, &mut rows);
                let gold = Some(self.rng.random_range(0..cfg.n_relations));
                units.push(UnitSpec::Pair { head, tail, gold });
                truths.push(self.truth(format!("{id}:0"), groundable, gold));
            }
        }
        let tokens = EmbeddingMatrix::from_f64_rows(&rows).expect("token shape");
        let sample = Sample {
            id: id.clone(),
            labeled: true,
            tokens: Arc::new(tokens),
            images,
            units,
        };
        let truth = SampleTruth {
            id,
            image_roles,
            units: truths,
        };
        (sample, truth)
    }
}

/// Deterministic in `cfg.seed`.
pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let mut g = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let (samples, truth) = (0..cfg.n_samples).map(|i| g.sample(i)).unzip();
    Ok(World {
        config: cfg.clone(),
        samples,
        truth,
    })
}

/// Weights under which the pipeline reads a world the way it was built: the
/// span representation is the token mean, the entity query is that mean, the
/// pair query averages both endpoints, and the gate looks only at `psi_max`.
pub fn world_weights(cfg: &WorldConfig) -> Result<ModelWeights> {
    use rand::SeedableRng;
    let d = cfg.dim;
    let p = 2 * d + crate::aggregate::PAIR_FEATURES;
    let mut pair_proj = ProjectionHead::zeros(p, d);
    for i in 0..d {
        pair_proj.set_weight(i, i, 0.5);
        pair_proj.set_weight(d + i, i, 0.5);
    }
    let heads_per_block = if d.is_multiple_of(2) { 2 } else { 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xf0_5e);
    let mut heads = ScoringHeads::seeded(d, cfg.n_types, p, cfg.n_relations, cfg.seed ^ 0x4ead);
    heads.lambda_cons = 1.0;
    heads.lambda_gate = 0.1;
    let w = ModelWeights {
        span_proj: ProjectionHead::block_select(3 * d, 2 * d, d, 1.0),
        ent_proj: ProjectionHead::identity(d),
        pair_proj,
        fuse_ent: ProjectionHead::glorot(2 * d, d, &mut rng),
        fuse_pair: ProjectionHead::glorot(p + d, p, &mut rng),
        set_encoder: SetEncoderWeights::seeded(d, heads_per_block, 2 * d, cfg.seed ^ 0x5e7)?,
        gate: GateModel::psi_max_only(d, 8.0, 0.5),
        heads,
    };
    w.validate()?;
    Ok(w)
}

/// Gate score, true activated error probability and sampled activated loss for
/// every unit of a world, in sample then unit order.
pub fn scored_units(world: &World, weights: &ModelWeights) -> Result<Vec<(f64, f64, bool)>> {
    let per_sample: Vec<Vec<(f64, f64, bool)>> = world
        .samples
        .par_iter()
        .zip(&world.truth)
        .map(|(s, t)| {
            let scores = gate_scores(s, weights)?;
            Ok(scores
                .into_iter()
                .zip(&t.units)
                .map(|(g, u)| (g, u.error_prob_activated, u.loss_activated))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_sample.into_iter().flatten().collect())
}

/// Exact activated risk and coverage of any threshold over a fixed population.
#[derive(Debug, Clone)]
pub struct RiskOracle {
    /// Scores sorted descending.
    scores: Vec<f64>,
    /// `prefix[i]` = sum of error probabilities of the top `i` units.
    prefix: Vec<f64>,
}

impl RiskOracle {
    pub fn new(units: &[(f64, f64)]) -> Self {
        let mut sorted = units.to_vec();
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        prefix.push(0.0);
        for (_, p) in &sorted {
            prefix.push(prefix.last().unwrap() + p);
        }
        Self {
            scores: sorted.into_iter().map(|(s, _)| s).collect(),
            prefix,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn activated(&self, tau: f64) -> usize {
        self.scores.partition_point(|&s| s >= tau)
    }

    pub fn coverage(&self, tau: f64) -> f64 {
        self.activated(tau) as f64 / self.len().max(1) as f64
    }

    /// Mean error probability of the units with score `>= tau`; 0 when none are.
    pub fn risk(&self, tau: f64) -> f64 {
        let n = self.activated(tau);
        if n == 0 {
            0.0
        } else {
            self.prefix[n] / n as f64
        }
    }

    /// Largest coverage reachable by some threshold with true risk at most `alpha`.
    pub fn optimal_coverage(&self, alpha: f64) -> f64 {
        let mut best = 0;
        let mut i = 0;
        while i < self.scores.len() {
            // only prefixes that end at a score boundary are thresholds
            let mut j = i + 1;
            while j < self.scores.len() && self.scores[j] == self.scores[i] {
                j += 1;
            }
            if self.prefix[j] / j as f64 <= alpha {
                best = j;
            }
            i = j;
        }
        best as f64 / self.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub world: WorldConfig,
    pub alpha: f64,
    pub delta: f64,
    pub runs: usize,
    pub calibration_units: usize,
    /// Size of the fixed population used as the test distribution.
    pub population_units: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            alpha: 0.10,
            delta: 0.05,
            runs: 500,
            calibration_units: 200,
            population_units: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub runs: usize,
    pub violations: usize,
    pub violation_rate: f64,
    pub mean_coverage: f64,
    pub oracle_coverage: f64,
    pub mean_true_risk: f64,
    pub infeasible_runs: usize,
}

fn world_for_units(base: &WorldConfig, units: usize, seed: u64) -> WorldConfig {
    WorldConfig {
        n_samples: units.div_ceil(base.units_per_record()),
        seed,
        ..base.clone()
    }
}

/// SplitMix64 finalizer; spreads run indices into unrelated seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Repeats: draw a calibration world, calibrate `tau` on its sampled losses,
/// then measure the true activated risk of `tau` on a large population drawn
/// once from the same distribution. Runs execute in parallel; the report does
/// not depend on scheduling.
pub fn monte_carlo_calibration_check(mc: &MonteCarloConfig) -> Result<MonteCarloReport> {
    if mc.runs < 100 {
        return Err(Error::contract("Monte Carlo check needs at least 100 runs"));
    }
    if mc.calibration_units == 0 || mc.population_units == 0 {
        return Err(Error::contract(
            "calibration and population sizes must be positive",
        ));
    }
    mc.world.validate()?;
    let weights = world_weights(&mc.world)?;
    let pop_cfg = world_for_units(&mc.world, mc.population_units, mix(mc.world.seed ^ 0x0b0b));
    let population = generate_world(&pop_cfg)?;
    let oracle = RiskOracle::new(
        &scored_units(&population, &weights)?
            .into_iter()
            .map(|(s, p, _)| (s, p))
            .collect::<Vec<_>>(),
    );

    let outcomes: Vec<(bool, f64, f64, bool)> = (0..mc.runs)
        .into_par_iter()
        .map(|run| {
            let seed = mix(mc.world.seed.wrapping_add(1 + run as u64));
            let world = generate_world(&world_for_units(&mc.world, mc.calibration_units, seed))?;
            let units: Vec<_> = scored_units(&world, &weights)?
                .into_iter()
                .take(mc.calibration_units)
                .collect();
            let input = CalibrationInput::new(
                units.iter().map(|u| u.0).collect(),
                units.iter().map(|u| u.2).collect(),
                mc.alpha,
                mc.delta,
            );
            let cal = calibrate_threshold(&input)?;
            let risk = oracle.risk(cal.tau);
            Ok((
                risk > mc.alpha,
                oracle.coverage(cal.tau),
                risk,
                cal.feasible,
            ))
        })
        .collect::<Result<_>>()?;

    let runs = outcomes.len();
    let violations = outcomes.iter().filter(|o| o.0).count();
    Ok(MonteCarloReport {
        runs,
        violations,
        violation_rate: violations as f64 / runs as f64,
        mean_coverage: outcomes.iter().map(|o| o.1).sum::<f64>() / runs as f64,
        oracle_coverage: oracle.optimal_coverage(mc.alpha),
        mean_true_risk: outcomes.iter().map(|o| o.2).sum::<f64>() / runs as f64,
        infeasible_runs: outcomes.iter().filter(|o| !o.3).count(),
    })
}

/// Paths written by [`write_world`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFiles {
    pub dataset: PathBuf,
    pub truth: PathBuf,
    pub weights: PathBuf,
}

/// Writes `dataset.jsonl` with token and region matrices as binary files under
/// `mats/`, the truth sidecar `truth.json` (with `header` embedded verbatim)
/// and `weights.json`.
pub fn write_world(world: &World, dir: &Path, header: &serde_json::Value) -> Result<WorldFiles> {
    let mats = dir.join("mats");
    fs::create_dir_all(&mats).map_err(|e| Error::io(&mats, e))?;
    let mut records = Vec::with_capacity(world.samples.len());
    for s in &world.samples {
        let tok_name = format!("mats/{}.tokens.bin", s.id);
        write_matrix(&s.tokens, dir.join(&tok_name))?;
        let mut images = Vec::with_capacity(s.images.len());
        for img in &s.images {
            let regions = match &img.regions {
                None => None,
                Some(src) => {
                    let name = format!("mats/{}.regions.bin", img.image_id);
                    write_matrix(&*src.materialize()?, dir.join(&name))?;
                    Some(MatrixField::Ref(FileRef { path: name }))
                }
            };
            images.push(ImageRecord {
                image_id: img.image_id.clone(),
                global: VectorField::Inline(img.global.clone()),
                regions,
            });
        }
        records.push(SampleRecord {
            version: DATASET_VERSION,
            id: s.id.clone(),
            labeled: s.labeled,
            tokens: MatrixField::Ref(FileRef { path: tok_name }),
            images,
            units: s.units.clone(),
        });
    }
    let files = WorldFiles {
        dataset: dir.join("dataset.jsonl"),
        truth: dir.join("truth.json"),
        weights: dir.join("weights.json"),
    };
    crate::dataset::write_records(&files.dataset, &records)?;
    let truth = serde_json::json!({
        "manifest": header,
        "config": world.config,
        "samples": world.truth,
    });
    let text = serde_json::to_string_pretty(&truth).expect("truth serializes");
    fs::write(&files.truth, text).map_err(|e| Error::io(&files.truth, e))?;
    world_weights(&world.config)?.save(&files.weights)?;
    Ok(files)
}

/// Reads the sample truths back from a `truth.json` sidecar.
pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<SampleTruth>> {
    #[derive(Deserialize)]
    struct Sidecar {
        samples: Vec<SampleTruth>,
    }
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let s: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(s.samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::groundability_features;

    fn psi_max(s: &Sample, span: Span) -> f64 {
        let w = world_weights(&WorldConfig {
            dim: s.tokens.dim(),
            ..WorldConfig::default()
        })
        .unwrap();
        let h = crate::aggregate::span_rep(&s.tokens, span, &w.span_proj).unwrap();
        groundability_features(&h, &s.globals()).unwrap().psi_max
    }

    #[test]
    fn noiseless_world_separates_groundable_units() {
        let cfg = WorldConfig {
            noise_scale: 0.0,
            relevance_gap: 1.0,
            n_samples: 30,
            ..WorldConfig::default()
        };
        let world = generate_world(&cfg).unwrap();
        let mut grounded = Vec::new();
        let mut other = Vec::new();
        for (s, t) in world.samples.iter().zip(&world.truth) {
            for (u, ut) in s.units.iter().zip(&t.units) {
                let UnitSpec::Span { span, .. } = u else {
                    unreachable!()
                };
                let psi = psi_max(s, *span);
                if ut.groundable {
                    grounded.push(psi);
                } else {
                    other.push(psi);
                }
            }
        }
        assert!(!grounded.is_empty() && !other.is_empty());
        let lo = grounded.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = other.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo > hi, "groundable min {lo} vs other max {hi}");
    }

    #[test]
    fn same_seed_same_world() {
        let cfg = WorldConfig {
            n_samples: 10,
            seed: 7,
            ..WorldConfig::default()
        };
        let a = generate_world(&cfg).unwrap();
        let b = generate_world(&cfg).unwrap();
        assert_eq!(a.truth, b.truth);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.tokens, y.tokens);
            assert_eq!(x.units, y.units);
            assert_eq!(x.globals(), y.globals());
        }
        let c = generate_world(&WorldConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn no_groundable_units_means_no_activation() {
        let cfg = WorldConfig {
            groundable_fraction: 0.0,
            n_samples: 100,
            ..WorldConfig::default()
        };
        let world = generate_world(&cfg).unwrap();
        let units = scored_units(&world, &world_weights(&cfg).unwrap()).unwrap();
        let input = CalibrationInput::new(
            units.iter().map(|u| u.0).collect(),
            units.iter().map(|u| u.2).collect(),
            0.1,
            0.05,
        );
        assert_eq!(calibrate_threshold(&input).unwrap().tau, f64::INFINITY);
    }

    #[test]
    fn relation_worlds_have_one_pair() {
        let cfg = WorldConfig {
            mode: Mode::Mre,
            n_samples: 5,
            ..WorldConfig::default()
        };
        let world = generate_world(&cfg).unwrap();
        for s in &world.samples {
            assert_eq!(s.units.len(), 1);
            assert!(s.units[0].is_pair() && s.units[0].gold().is_some());
        }
    }

    #[test]
    fn oracle_on_hand_population() {
        let o = RiskOracle::new(&[(0.9, 0.0), (0.8, 0.0), (0.7, 1.0), (0.1, 0.0)]);
        assert_eq!(o.risk(0.8), 0.0);
        assert_eq!(o.coverage(0.8), 0.5);
        assert!((o.risk(0.7) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(o.risk(f64::INFINITY), 0.0);
        assert_eq!(o.optimal_coverage(0.1), 0.5);
        assert_eq!(o.optimal_coverage(0.25), 1.0);
    }

    #[test]
    fn write_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = WorldConfig {
            n_samples: 3,
            ..WorldConfig::default()
        };
        let world = generate_world(&cfg).unwrap();
        let files = write_world(&world, dir.path(), &serde_json::json!({})).unwrap();
        let back = crate::dataset::load_dataset(&files.dataset).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].tokens, world.samples[0].tokens);
        assert_eq!(read_truth(&files.truth).unwrap(), world.truth);
        assert!(matches!(
            back[0].images[0].regions,
            Some(RegionSource::File(_))
        ));
    }
}

//! The `selev` command line.
//!
//! Every artifact is a JSON document whose `manifest` field records the
//! subcommand, the resolved configuration, the input and output paths, the seed
//! and the tool version. Nothing time-dependent is recorded, so re-running the
//! same command reproduces the artifact byte for byte.
//!
//! Exit codes: 0 on success, 2 for usage, contract and format errors, 1 for
//! I/O and other internal failures.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Value};

use crate::calibration::{calibrate_threshold, parse_tau, CalibrationInput, CalibrationResult};
use crate::dataset::{load_dataset, Sample, UnitSpec};
use crate::error::{Error, Result};
use crate::metrics::{
    act_cov_at, always_on_cost, aurc, entity_counts, estimate_cost, relation_counts, risk_coverage,
    CostConfig, PrfCounts, ScoreSource,
};
use crate::model::ModelWeights;
use crate::pipeline::{
    gate_unit, record_forced_on_losses, route_dataset, summarize, unit_id, unit_losses, Decision,
    Mode, PipelineConfig, SampleOutput,
};
use crate::scoring::{Entity, EntityPrediction};
use crate::selector::{greedy_select, SimilarityBundle};
use crate::synth::{generate_world, read_truth, write_world, WorldConfig};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "selev",
    version,
    about = "Selective visual evidence routing for multimodal extraction"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by all subcommands; each overrides the matching config entry.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-sample parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    #[arg(long = "budget-k", global = true)]
    pub budget_k: Option<usize>,
    #[arg(long = "k-regions", global = true)]
    pub k_regions: Option<usize>,
    #[arg(long = "lambda-rel", global = true)]
    pub lambda_rel: Option<f64>,
    #[arg(long = "lambda-cov", global = true)]
    pub lambda_cov: Option<f64>,
    #[arg(long = "lambda-cons", global = true)]
    pub lambda_cons: Option<f64>,
    #[arg(long = "lambda-gate", global = true)]
    pub lambda_gate: Option<f64>,
    /// Activation threshold, a number or `+inf`.
    #[arg(long, global = true)]
    pub tau: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Mner,
    Mre,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Mner => Mode::Mner,
            ModeArg::Mre => Mode::Mre,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreSourceArg {
    Gate,
    Confidence,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world: dataset, matrices, truth sidecar and weights.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Calibrate the activation threshold from scored losses.
    Calibrate {
        /// JSON lines with `score` and `loss` fields.
        #[arg(long, conflicts_with = "dataset")]
        scores: Option<PathBuf>,
        /// Labeled dataset; losses come from forced-on decoding.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Take losses from a synthetic truth sidecar instead of decoding.
        #[arg(long, requires = "dataset")]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the image selector for one unit (`sample_id:unit_index`).
    Select {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        unit: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Route a dataset through the full pipeline.
    Route {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Calibration result whose threshold to use.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Activate every unit.
        #[arg(long)]
        force_on: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics and risk-coverage curve of a routed dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Output of `route`.
        #[arg(long)]
        routed: PathBuf,
        /// Take per-unit losses from a synthetic truth sidecar.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "gate")]
        score_source: ScoreSourceArg,
        /// Relation id excluded from micro F1.
        #[arg(long)]
        null_relation: Option<usize>,
        /// Two-column coverage/risk file.
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cost-model table over a sweep of activation ratios and budgets.
    Cost {
        /// Number of activation-ratio steps between 0 and 1.
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Calibrate { .. } => "calibrate",
            Command::Select { .. } => "select",
            Command::Route { .. } => "route",
            Command::Eval { .. } => "eval",
            Command::Cost { .. } => "cost",
        }
    }
}

/// Contents of the `--config` file. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub alpha: f64,
    pub delta: f64,
    /// Default weights file for subcommands that need one.
    pub weights: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub world: WorldConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: None,
            alpha: 0.10,
            delta: 0.05,
            weights: None,
            pipeline: PipelineConfig::default(),
            world: WorldConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Applies command-line overrides.
    pub fn apply(&mut self, g: &GlobalArgs) -> Result<()> {
        if let Some(s) = g.seed {
            self.seed = s;
        }
        self.world.seed = self.seed;
        if g.jobs.is_some() {
            self.jobs = g.jobs;
        }
        if let Some(m) = g.mode {
            self.pipeline.mode = m.into();
            self.world.mode = m.into();
        }
        if let Some(a) = g.alpha {
            self.alpha = a;
        }
        if let Some(d) = g.delta {
            self.delta = d;
        }
        let p = &mut self.pipeline;
        if let Some(k) = g.budget_k {
            p.budget_k = k;
        }
        if let Some(k) = g.k_regions {
            p.k_regions = k;
        }
        if let Some(v) = g.lambda_rel {
            p.sis.lambda_rel = v;
        }
        if let Some(v) = g.lambda_cov {
            p.sis.lambda_cov = v;
        }
        if g.lambda_cons.is_some() {
            p.lambda_cons = g.lambda_cons;
        }
        if g.lambda_gate.is_some() {
            p.lambda_gate = g.lambda_gate;
        }
        if let Some(t) = &g.tau {
            p.tau = parse_tau(t)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::contract(format!(
                "alpha {} outside (0, 1]",
                self.alpha
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::contract(format!(
                "delta {} outside (0, 1)",
                self.delta
            )));
        }
        if self.jobs == Some(0) {
            return Err(Error::contract("jobs must be at least 1"));
        }
        self.pipeline.validate()?;
        self.world.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub manifest_version: u32,
    pub subcommand: String,
    pub config_path: Option<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: u64,
    pub config: RunConfig,
}

impl RunManifest {
    fn new(subcommand: &str, config_path: Option<&Path>, config: &RunConfig) -> Self {
        Self {
            tool: "selev".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            manifest_version: MANIFEST_VERSION,
            subcommand: subcommand.into(),
            config_path: config_path.map(|p| p.display().to_string()),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: config.seed,
            config: config.clone(),
        }
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    fn value(&self) -> Value {
        serde_json::to_value(self).expect("manifest serializes")
    }
}

/// One line of a calibration scores file. `loss` may be a boolean or 0/1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    #[serde(default)]
    pub unit: Option<String>,
    pub score: f64,
    #[serde(deserialize_with = "bool_or_bit")]
    pub loss: bool,
}

fn bool_or_bit<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Bool(bool),
        Int(u8),
    }
    match Raw::deserialize(d)? {
        Raw::Bool(b) => Ok(b),
        Raw::Int(0) => Ok(false),
        Raw::Int(1) => Ok(true),
        Raw::Int(v) => Err(serde::de::Error::custom(format!(
            "loss must be 0 or 1, got {v}"
        ))),
    }
}

pub fn read_score_lines(path: &Path) -> Result<Vec<ScoreLine>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn emit(out: Option<&Path>, doc: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc).expect("document serializes");
    text.push('\n');
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn weights_path(flag: Option<&PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or(cfg.weights.as_ref()).cloned().ok_or_else(|| {
        Error::contract("no weights file given (use --weights or `weights` in the config)")
    })
}

/// Routed output document written by `route` and read by `eval`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoutedDocument {
    pub manifest: Value,
    pub summary: crate::pipeline::RouteSummary,
    pub samples: Vec<SampleOutput>,
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&cli.global)?;
    let mut manifest = RunManifest::new(cli.command.name(), cli.global.config.as_deref(), &cfg);
    match &cli.command {
        Command::Synth { out, samples } => synth(&mut cfg, &mut manifest, out, *samples),
        Command::Calibrate {
            scores,
            dataset,
            weights,
            truth,
            out,
        } => calibrate(
            &cfg,
            &mut manifest,
            scores.as_deref(),
            dataset.as_deref(),
            weights.as_ref(),
            truth.as_deref(),
            out.as_deref(),
        ),
        Command::Select {
            dataset,
            weights,
            unit,
            out,
        } => select(
            &cfg,
            &mut manifest,
            dataset,
            weights.as_ref(),
            unit,
            out.as_deref(),
        ),
        Command::Route {
            dataset,
            weights,
            calibration,
            force_on,
            out,
        } => route(
            &mut cfg,
            &mut manifest,
            &cli.global,
            dataset,
            weights.as_ref(),
            calibration.as_deref(),
            *force_on,
            out.as_deref(),
        ),
        Command::Eval {
            dataset,
            routed,
            truth,
            score_source,
            null_relation,
            curve,
            out,
        } => {
            let source = match score_source {
                ScoreSourceArg::Gate => ScoreSource::Gate,
                ScoreSourceArg::Confidence => ScoreSource::Confidence,
            };
            eval(
                &cfg,
                &mut manifest,
                dataset,
                routed,
                truth.as_deref(),
                source,
                *null_relation,
                curve.as_deref(),
                out.as_deref(),
            )
        }
        Command::Cost { steps, out } => cost(&cfg, &mut manifest, *steps, out.as_deref()),
    }
}

fn synth(
    cfg: &mut RunConfig,
    manifest: &mut RunManifest,
    out: &Path,
    samples: Option<usize>,
) -> Result<()> {
    if let Some(n) = samples {
        cfg.world.n_samples = n;
    }
    manifest.config = cfg.clone();
    let world = generate_world(&cfg.world)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for name in [
        "dataset.jsonl",
        "truth.json",
        "weights.json",
        "manifest.json",
    ] {
        manifest.output(&out.join(name));
    }
    let header = manifest.value();
    write_world(&world, out, &header)?;
    emit(
        Some(&out.join("manifest.json")),
        &json!({ "manifest": header }),
    )
}

fn calibrate(
    cfg: &RunConfig,
    manifest: &mut RunManifest,
    scores: Option<&Path>,
    dataset: Option<&Path>,
    weights: Option<&PathBuf>,
    truth: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let pairs: Vec<(f64, bool)> = match (scores, dataset) {
        (Some(p), _) => {
            manifest.input(p);
            read_score_lines(p)?
                .into_iter()
                .map(|l| (l.score, l.loss))
                .collect()
        }
        (None, Some(d)) => {
            let wp = weights_path(weights, cfg)?;
            manifest.input(d);
            manifest.input(&wp);
            let samples = load_dataset(d)?;
            let w = ModelWeights::load(&wp)?;
            match truth {
                Some(t) => {
                    manifest.input(t);
                    truth_scored_losses(&samples, &w, &read_truth(t)?)?
                }
                None => record_forced_on_losses(&samples, &w, &cfg.pipeline)?
                    .into_iter()
                    .map(|s| (s.score, s.loss))
                    .collect(),
            }
        }
        (None, None) => return Err(Error::contract("calibrate needs --scores or --dataset")),
    };
    if let Some(o) = out {
        manifest.output(o);
    }
    let input = CalibrationInput::new(
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1).collect(),
        cfg.alpha,
        cfg.delta,
    );
    let result = calibrate_threshold(&input)?;
    emit(
        out,
        &json!({ "manifest": manifest.value(), "result": result }),
    )
}

/// Gate scores paired with the sampled activated losses of a truth sidecar.
fn truth_scored_losses(
    samples: &[Sample],
    w: &ModelWeights,
    truth: &[crate::synth::SampleTruth],
) -> Result<Vec<(f64, bool)>> {
    let by_id: HashMap<&str, &crate::synth::SampleTruth> =
        truth.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut out = Vec::new();
    for s in samples {
        let t = by_id
            .get(s.id.as_str())
            .ok_or_else(|| Error::contract(format!("no truth for sample {:?}", s.id)))?;
        let scores = crate::pipeline::gate_scores(s, w)?;
        if scores.len() != t.units.len() {
            return Err(Error::contract(format!(
                "truth for {:?} has the wrong unit count",
                s.id
            )));
        }
        out.extend(
            scores
                .into_iter()
                .zip(&t.units)
                .map(|(g, u)| (g, u.loss_activated)),
        );
    }
    Ok(out)
}

fn select(
    cfg: &RunConfig,
    manifest: &mut RunManifest,
    dataset: &Path,
    weights: Option<&PathBuf>,
    unit: &str,
    out: Option<&Path>,
) -> Result<()> {
    let (sid, idx) = unit
        .rsplit_once(':')
        .and_then(|(s, i)| i.parse::<usize>().ok().map(|i| (s, i)))
        .ok_or_else(|| Error::contract(format!("unit id {unit:?} is not `sample:index`")))?;
    let wp = weights_path(weights, cfg)?;
    manifest.input(dataset);
    manifest.input(&wp);
    if let Some(o) = out {
        manifest.output(o);
    }
    let samples = load_dataset(dataset)?;
    let w = ModelWeights::load(&wp)?;
    let sample = samples
        .iter()
        .find(|s| s.id == sid)
        .ok_or_else(|| Error::contract(format!("no sample {sid:?}")))?;
    let spec = sample
        .units
        .get(idx)
        .ok_or_else(|| Error::contract(format!("sample {sid:?} has no unit {idx}")))?;
    let gate = gate_unit(sample, &w, spec)?;
    let bundle = SimilarityBundle::from_query(&gate.query, &sample.globals())?;
    let sel = greedy_select(&bundle, &cfg.pipeline.sis, cfg.pipeline.budget_k)?;
    let ids: Vec<&str> = sel
        .chosen
        .iter()
        .map(|&i| sample.images[i].image_id.as_str())
        .collect();
    emit(
        out,
        &json!({
            "manifest": manifest.value(),
            "unit": unit,
            "g": gate.g,
            "relevance": bundle.relevance(),
            "chosen_ids": ids,
            "selection": sel,
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn route(
    cfg: &mut RunConfig,
    manifest: &mut RunManifest,
    global: &GlobalArgs,
    dataset: &Path,
    weights: Option<&PathBuf>,
    calibration: Option<&Path>,
    force_on: bool,
    out: Option<&Path>,
) -> Result<()> {
    let wp = weights_path(weights, cfg)?;
    manifest.input(dataset);
    manifest.input(&wp);
    if let Some(c) = calibration {
        manifest.input(c);
        // an explicit --tau still wins
        if global.tau.is_none() {
            #[derive(Deserialize)]
            struct Doc {
                result: CalibrationResult,
            }
            cfg.pipeline.tau = read_json::<Doc>(c)?.result.tau;
        }
    }
    cfg.pipeline.force_on |= force_on;
    manifest.config = cfg.clone();
    if let Some(o) = out {
        manifest.output(o);
    }
    let samples = load_dataset(dataset)?;
    let w = ModelWeights::load(&wp)?;
    let outputs = route_dataset(&samples, &w, &cfg.pipeline, cfg.jobs)?;
    let summary = summarize(&outputs);
    let doc = RoutedDocument {
        manifest: manifest.value(),
        summary,
        samples: outputs,
    };
    emit(
        out,
        &serde_json::to_value(&doc).expect("routed output serializes"),
    )
}

fn gold_entities(sample: &Sample) -> EntityPrediction {
    let mut entities: Vec<Entity> = sample
        .units
        .iter()
        .filter_map(|u| match u {
            UnitSpec::Span {
                span,
                gold: Some(t),
            } => Some(Entity::new(span.start, span.end, *t)),
            _ => None,
        })
        .collect();
    entities.sort();
    EntityPrediction { entities }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mode: Mode,
    pub units: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: PrfCounts,
    pub score_source: ScoreSource,
    pub aurc: f64,
    pub act_cov_at_alpha: f64,
    pub alpha: f64,
    pub activated_units: usize,
    pub activation_coverage: f64,
    /// Mean loss over activated units; 0 when none are activated.
    pub activated_risk: f64,
    /// Mean loss over all units under the routing that was run.
    pub overall_risk: f64,
    pub mean_gamma_bar: f64,
    pub mean_cost: f64,
}

#[allow(clippy::too_many_arguments)]
fn eval(
    cfg: &RunConfig,
    manifest: &mut RunManifest,
    dataset: &Path,
    routed: &Path,
    truth: Option<&Path>,
    source: ScoreSource,
    null_relation: Option<usize>,
    curve_out: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    manifest.input(dataset);
    manifest.input(routed);
    if let Some(t) = truth {
        manifest.input(t);
    }
    for o in [curve_out, out].into_iter().flatten() {
        manifest.output(o);
    }
    let samples = load_dataset(dataset)?;
    let doc: RoutedDocument = read_json(routed)?;
    let truth = truth.map(read_truth).transpose()?;
    let (metrics, curve) = evaluate(
        &samples,
        &doc.samples,
        truth.as_deref(),
        source,
        null_relation,
        cfg.alpha,
    )?;
    if let Some(p) = curve_out {
        let header = serde_json::to_string(&manifest.value()).expect("manifest serializes");
        let text = format!("# manifest {header}\n{}", curve.to_tsv());
        fs::write(p, text).map_err(|e| Error::io(p, e))?;
    }
    emit(
        out,
        &json!({ "manifest": manifest.value(), "metrics": metrics, "curve": curve }),
    )
}

/// Task and selective metrics of routed outputs against a labeled dataset.
pub fn evaluate(
    samples: &[Sample],
    outputs: &[SampleOutput],
    truth: Option<&[crate::synth::SampleTruth]>,
    source: ScoreSource,
    null_relation: Option<usize>,
    alpha: f64,
) -> Result<(EvalMetrics, crate::metrics::RiskCoverageCurve)> {
    let by_id: HashMap<&str, &SampleOutput> = outputs.iter().map(|o| (o.id.as_str(), o)).collect();
    let truth_by_id: Option<HashMap<&str, &crate::synth::SampleTruth>> =
        truth.map(|t| t.iter().map(|s| (s.id.as_str(), s)).collect());
    let mode = outputs.first().map(|o| o.mode).unwrap_or_default();
    let mut counts = PrfCounts::default();
    let mut scores = Vec::new();
    let mut losses = Vec::new();
    let mut activated = Vec::new();
    for s in samples {
        let o = by_id
            .get(s.id.as_str())
            .ok_or_else(|| Error::contract(format!("no routed output for sample {:?}", s.id)))?;
        if o.mode != mode {
            return Err(Error::contract("routed outputs mix modes"));
        }
        let unit_loss = match &truth_by_id {
            Some(t) => {
                let st = t
                    .get(s.id.as_str())
                    .ok_or_else(|| Error::contract(format!("no truth for sample {:?}", s.id)))?;
                if st.units.len() != o.traces.len() {
                    return Err(Error::contract(format!(
                        "truth for {:?} has the wrong unit count",
                        s.id
                    )));
                }
                st.units
                    .iter()
                    .zip(&o.traces)
                    .map(|(u, tr)| u.loss(tr.gamma))
                    .collect()
            }
            None => unit_losses(s, o)?,
        };
        counts = counts
            + match mode {
                Mode::Mner => {
                    let pred = o.entities.clone().unwrap_or_default();
                    entity_counts(&pred, &gold_entities(s))
                }
                Mode::Mre => {
                    let golds: Vec<usize> = s
                        .units
                        .iter()
                        .enumerate()
                        .map(|(i, u)| {
                            u.gold().ok_or_else(|| {
                                Error::contract(format!(
                                    "unit {} has no gold relation",
                                    unit_id(&s.id, i)
                                ))
                            })
                        })
                        .collect::<Result<_>>()?;
                    let preds: Vec<usize> = o
                        .traces
                        .iter()
                        .map(|t| match t.decision {
                            Decision::Pair { relation } => relation,
                            Decision::Span { .. } => usize::MAX,
                        })
                        .collect();
                    relation_counts(&preds, &golds, null_relation)?
                }
            };
        for (t, l) in o.traces.iter().zip(unit_loss) {
            scores.push(match source {
                ScoreSource::Gate => t.g,
                ScoreSource::Confidence => t.confidence,
            });
            losses.push(l);
            activated.push(t.gamma);
        }
    }
    let prf = counts.scores();
    let curve = if scores.is_empty() {
        crate::metrics::RiskCoverageCurve { points: Vec::new() }
    } else {
        risk_coverage(&scores, &losses)?
    };
    let n_act = activated.iter().filter(|a| **a).count();
    let act_losses = losses
        .iter()
        .zip(&activated)
        .filter(|(_, a)| **a)
        .filter(|(l, _)| **l)
        .count();
    let n = losses.len();
    let summary = summarize(outputs);
    let metrics = EvalMetrics {
        mode,
        units: n,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        counts,
        score_source: source,
        aurc: aurc(&curve),
        act_cov_at_alpha: act_cov_at(&curve, alpha),
        alpha,
        activated_units: n_act,
        activation_coverage: if n == 0 { 0.0 } else { n_act as f64 / n as f64 },
        activated_risk: if n_act == 0 {
            0.0
        } else {
            act_losses as f64 / n_act as f64
        },
        overall_risk: if n == 0 {
            0.0
        } else {
            losses.iter().filter(|l| **l).count() as f64 / n as f64
        },
        mean_gamma_bar: summary.mean_gamma_bar,
        mean_cost: summary.mean_cost,
    };
    Ok((metrics, curve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub gamma_bar: f64,
    pub k: usize,
    pub cost: f64,
    pub always_on: f64,
    pub ratio: f64,
}

/// Cost of every `(gamma_bar, K)` with `gamma_bar` in `steps + 1` even steps
/// over `[0, 1]` and `K` in `1..=max_k`.
pub fn cost_table(cfg: &CostConfig, max_k: usize, steps: usize) -> Result<Vec<CostRow>> {
    cfg.validate()?;
    if steps == 0 || max_k == 0 {
        return Err(Error::contract(
            "cost sweep needs at least one step and K >= 1",
        ));
    }
    let mut rows = Vec::new();
    for k in 1..=max_k {
        let top = always_on_cost(cfg, k);
        for s in 0..=steps {
            let g = s as f64 / steps as f64;
            let c = estimate_cost(cfg, g, k);
            rows.push(CostRow {
                gamma_bar: g,
                k,
                cost: c,
                always_on: top,
                ratio: if top == 0.0 { 1.0 } else { c / top },
            });
        }
    }
    Ok(rows)
}

fn cost(
    cfg: &RunConfig,
    manifest: &mut RunManifest,
    steps: usize,
    out: Option<&Path>,
) -> Result<()> {
    if let Some(o) = out {
        manifest.output(o);
    }
    let rows = cost_table(&cfg.pipeline.cost, cfg.pipeline.budget_k, steps)?;
    emit(out, &json!({ "manifest": manifest.value(), "rows": rows }))
}

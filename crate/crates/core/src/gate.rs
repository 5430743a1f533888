//! Groundability scoring from global image vectors, the pair gate, and hard gating.
//!
//! The gate sees `[h_s ; psi_max ; mean ; std ; top2_mean]` where the four scalars
//! summarize the cosines between the unit's query vector and every global image
//! vector. Region vectors never enter the gate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::cosine;

/// Number of scalar features appended to the span representation.
pub const FEATURE_COUNT: usize = 4;

pub const GATE_MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GateFeatures {
    pub psi_max: f64,
    pub mean: f64,
    pub std: f64,
    pub top2_mean: f64,
    /// Set when the sample had no images; all features are zero in that case.
    #[serde(default)]
    pub no_image: bool,
}

impl GateFeatures {
    pub fn as_array(&self) -> [f64; FEATURE_COUNT] {
        [self.psi_max, self.mean, self.std, self.top2_mean]
    }
}

/// Summary statistics of a similarity list.
///
/// The list is sorted (descending, total order) before every reduction so the
/// result is bit-identical under any permutation of the input.
pub fn features_from_similarities(sims: &[f64]) -> GateFeatures {
    if sims.is_empty() {
        return GateFeatures {
            no_image: true,
            ..GateFeatures::default()
        };
    }
    let mut sorted = sims.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let top = sorted.len().min(2);
    let top2_mean = sorted[..top].iter().sum::<f64>() / top as f64;
    GateFeatures {
        psi_max: sorted[0],
        mean,
        std: var.sqrt(),
        top2_mean,
        no_image: false,
    }
}

pub fn groundability_features<Q, G>(q: &[Q], globals: &[G]) -> Result<GateFeatures>
where
    Q: Copy + Into<f64>,
    G: AsRef<[f32]>,
{
    let mut sims = Vec::with_capacity(globals.len());
    for (i, v) in globals.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != q.len() {
            return Err(Error::contract(format!(
                "global vector {i} has dim {}, query has {}",
                v.len(),
                q.len()
            )));
        }
        sims.push(cosine(q, v));
    }
    Ok(features_from_similarities(&sims))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Linear-logistic gate over `[h_s ; features]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GateModelRecord", into = "GateModelRecord")]
pub struct GateModel {
    dim: usize,
    weights: Vec<f64>,
    bias: f64,
}

#[derive(Serialize, Deserialize)]
struct GateModelRecord {
    version: u32,
    dim: usize,
    weights: Vec<f64>,
    bias: f64,
}

impl TryFrom<GateModelRecord> for GateModel {
    type Error = Error;

    fn try_from(r: GateModelRecord) -> Result<Self> {
        if r.version != GATE_MODEL_VERSION {
            return Err(Error::contract(format!(
                "unsupported gate model version {}",
                r.version
            )));
        }
        GateModel::new(r.dim, r.weights, r.bias)
    }
}

impl From<GateModel> for GateModelRecord {
    fn from(m: GateModel) -> Self {
        GateModelRecord {
            version: GATE_MODEL_VERSION,
            dim: m.dim,
            weights: m.weights,
            bias: m.bias,
        }
    }
}

impl GateModel {
    /// `dim` is the span representation dim; `weights` must have `dim + 4` entries.
    pub fn new(dim: usize, weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.len() != dim + FEATURE_COUNT {
            return Err(Error::contract(format!(
                "gate weights have length {}, expected {}",
                weights.len(),
                dim + FEATURE_COUNT
            )));
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::contract("gate weights must be finite"));
        }
        Ok(Self { dim, weights, bias })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            weights: vec![0.0; dim + FEATURE_COUNT],
            bias: 0.0,
        }
    }

    /// A gate that looks only at `psi_max`: `sigmoid(scale * (psi_max - center))`.
    pub fn psi_max_only(dim: usize, scale: f64, center: f64) -> Self {
        let mut m = Self::zeros(dim);
        m.weights[dim] = scale;
        m.bias = -scale * center;
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn logit(&self, h_s: &[f64], feats: &GateFeatures) -> Result<f64> {
        if h_s.len() != self.dim {
            return Err(Error::contract(format!(
                "span representation has dim {}, gate expects {}",
                h_s.len(),
                self.dim
            )));
        }
        let (wh, wf) = self.weights.split_at(self.dim);
        let text: f64 = wh.iter().zip(h_s).map(|(w, x)| w * x).sum();
        let feat: f64 = wf.iter().zip(feats.as_array()).map(|(w, x)| w * x).sum();
        Ok(text + feat + self.bias)
    }
}

pub fn gate_score(model: &GateModel, h_s: &[f64], feats: &GateFeatures) -> Result<f64> {
    model.logit(h_s, feats).map(sigmoid)
}

/// Pair-level gate: a pair is as groundable as its more groundable endpoint.
pub fn pair_gate(g_head: f64, g_tail: f64) -> f64 {
    g_head.max(g_tail)
}

/// `g >= tau`. `tau = +inf` never activates.
pub fn hard_gate(g: f64, tau: f64) -> bool {
    g >= tau
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateExample {
    pub h_s: Vec<f64>,
    pub features: GateFeatures,
    pub label: bool,
}

#[derive(Debug, Clone)]
pub struct GateFit {
    pub model: GateModel,
    /// Regularized loss at the initial point and at each checkpoint.
    pub checkpoints: Vec<f64>,
    /// Raised when the labels were all identical and a constant model was returned.
    pub degenerate: bool,
}

fn design_row(ex: &GateExample) -> Vec<f64> {
    let mut x = ex.h_s.clone();
    x.extend_from_slice(&ex.features.as_array());
    x
}

fn regularized_loss(xs: &[Vec<f64>], ys: &[f64], w: &[f64], b: f64, l2: f64) -> f64 {
    let n = xs.len() as f64;
    let data: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let z: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
            // log(1 + e^z) - y z, evaluated without overflow
            let softplus = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            softplus - y * z
        })
        .sum::<f64>()
        / n;
    data + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Standalone L2-regularized logistic fit of the gate by gradient descent with
/// Armijo backtracking. Deterministic for a given seed.
pub fn fit_gate(examples: &[GateExample], l2: f64, steps: usize, seed: u64) -> Result<GateFit> {
    let Some(first) = examples.first() else {
        return Err(Error::contract("fit_gate needs at least one example"));
    };
    let dim = first.h_s.len();
    if examples.iter().any(|e| e.h_s.len() != dim) {
        return Err(Error::contract("gate examples have inconsistent dims"));
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::contract("l2 must be a finite non-negative number"));
    }
    let positives = examples.iter().filter(|e| e.label).count();
    let n = examples.len();
    if positives == 0 || positives == n {
        // smoothed prior so the constant score stays inside (0, 1)
        let p = (positives as f64 + 0.5) / (n as f64 + 1.0);
        let mut model = GateModel::zeros(dim);
        model.bias = (p / (1.0 - p)).ln();
        return Ok(GateFit {
            model,
            checkpoints: Vec::new(),
            degenerate: true,
        });
    }

    let xs: Vec<Vec<f64>> = examples.iter().map(design_row).collect();
    let ys: Vec<f64> = examples
        .iter()
        .map(|e| if e.label { 1.0 } else { 0.0 })
        .collect();
    let width = dim + FEATURE_COUNT;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut w: Vec<f64> = (0..width).map(|_| init.sample(&mut rng)).collect();
    let mut b = 0.0;

    // Lipschitz bound of the gradient: max ||[x;1]||^2 / 4 + l2
    let lip = xs
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .fold(0.0, f64::max)
        / 4.0
        + l2;
    let base_step = 1.0 / lip;
    let every = (steps / 20).max(1);

    let mut loss = regularized_loss(&xs, &ys, &w, b, l2);
    let mut checkpoints = vec![loss];
    for step in 1..=steps {
        let mut gw = vec![0.0; width];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(&ys) {
            let z: f64 = x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            let r = sigmoid(z) - y;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += r * xi;
            }
            gb += r;
        }
        let nf = n as f64;
        for (g, wi) in gw.iter_mut().zip(&w) {
            *g = *g / nf + l2 * wi;
        }
        gb /= nf;
        let gnorm2 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        if gnorm2 < 1e-20 {
            break;
        }
        let mut t = base_step;
        let mut accepted = false;
        for _ in 0..40 {
            let cw: Vec<f64> = w.iter().zip(&gw).map(|(wi, g)| wi - t * g).collect();
            let cb = b - t * gb;
            let cand = regularized_loss(&xs, &ys, &cw, cb, l2);
            if cand <= loss - 0.5 * t * gnorm2 {
                w = cw;
                b = cb;
                loss = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if step % every == 0 {
            checkpoints.push(loss);
        }
    }
    if checkpoints.last() != Some(&loss) {
        checkpoints.push(loss);
    }
    Ok(GateFit {
        model: GateModel::new(dim, w, b)?,
        checkpoints,
        degenerate: false,
    })
}

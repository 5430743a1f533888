//! Attention-based set encoder: one set-attention block followed by
//! pooling with a learned seed query.
//!
//! ```text
//! MAB(X, Y) = LN(H + FF(H)),   H = LN(X + Multihead(X, Y, Y))
//! SAB(X)    = MAB(X, X)
//! PMA(Z)    = MAB(S, FF_p(Z))  with one seed row S
//! ```
//!
//! SAB is permutation-equivariant and PMA pools with softmax attention, so the
//! encoder output does not depend on the order of the evidence vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linear::{FeedForward, LayerNorm, ProjectionHead};
use crate::error::{Error, Result};

pub const SET_ENCODER_VERSION: u32 = 1;

/// How a set of weights was generated, recorded in weight files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightInit {
    /// Pseudo-random generator name; always `"chacha8"`.
    pub generator: String,
    pub seed: u64,
    pub scheme: String,
}

impl WeightInit {
    pub fn chacha8(seed: u64, scheme: &str) -> Self {
        Self {
            generator: "chacha8".into(),
            seed,
            scheme: scheme.into(),
        }
    }
}

/// Weights of one multihead attention block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionBlock {
    pub query: ProjectionHead,
    pub key: ProjectionHead,
    pub value: ProjectionHead,
    pub output: ProjectionHead,
    pub norm_attn: LayerNorm,
    pub ff: FeedForward,
    pub norm_ff: LayerNorm,
}

impl AttentionBlock {
    fn glorot(dim: usize, ff_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            query: ProjectionHead::glorot(dim, dim, rng),
            key: ProjectionHead::glorot(dim, dim, rng),
            value: ProjectionHead::glorot(dim, dim, rng),
            output: ProjectionHead::glorot(dim, dim, rng),
            norm_attn: LayerNorm::unit(dim),
            ff: FeedForward::glorot(dim, ff_dim, rng),
            norm_ff: LayerNorm::unit(dim),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        for p in [&self.query, &self.key, &self.value, &self.output] {
            if p.dim_in() != dim || p.dim_out() != dim {
                return Err(Error::contract("attention projection has wrong shape"));
            }
        }
        if self.norm_attn.dim() != dim || self.norm_ff.dim() != dim {
            return Err(Error::contract("layer norm has wrong dim"));
        }
        self.ff.check(dim)
    }

    /// Returns the block output rows and the attention weights `[head][query][key]`.
    fn forward(
        &self,
        xs: &[Vec<f64>],
        ys: &[Vec<f64>],
        heads: usize,
    ) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
        let dim = self.query.dim_in();
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q: Vec<Vec<f64>> = xs.iter().map(|x| self.query.apply_unchecked(x)).collect();
        let k: Vec<Vec<f64>> = ys.iter().map(|y| self.key.apply_unchecked(y)).collect();
        let v: Vec<Vec<f64>> = ys.iter().map(|y| self.value.apply_unchecked(y)).collect();

        let mut concat = vec![vec![0.0; dim]; xs.len()];
        let mut attn = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let mut head_attn = Vec::with_capacity(xs.len());
            for (qi, out) in q.iter().zip(concat.iter_mut()) {
                let logits: Vec<f64> = k
                    .iter()
                    .map(|kj| {
                        qi[cols.clone()]
                            .iter()
                            .zip(&kj[cols.clone()])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            * scale
                    })
                    .collect();
                let weights = softmax(&logits);
                for (w, vj) in weights.iter().zip(&v) {
                    for c in cols.clone() {
                        out[c] += w * vj[c];
                    }
                }
                head_attn.push(weights);
            }
            attn.push(head_attn);
        }

        let out = xs
            .iter()
            .zip(&concat)
            .map(|(x, o)| {
                let o = self.output.apply_unchecked(o);
                let h: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + b).collect();
                let h = self.norm_attn.apply(&h);
                let f = self.ff.apply(&h);
                let r: Vec<f64> = h.iter().zip(&f).map(|(a, b)| a + b).collect();
                self.norm_ff.apply(&r)
            })
            .collect();
        (out, attn)
    }
}

/// Numerically stable softmax; the sum runs over sorted terms so equal inputs
/// in any order give bit-identical normalizers.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let mut sorted = exps.clone();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SetEncoderRecord", into = "SetEncoderRecord")]
pub struct SetEncoderWeights {
    heads: usize,
    dim: usize,
    sab: AttentionBlock,
    pool_ff: FeedForward,
    pma: AttentionBlock,
    seed_vector: Vec<f64>,
    init: Option<WeightInit>,
}

#[derive(Serialize, Deserialize)]
struct SetEncoderRecord {
    version: u32,
    heads: usize,
    dim: usize,
    sab: AttentionBlock,
    pool_ff: FeedForward,
    pma: AttentionBlock,
    seed_vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    init: Option<WeightInit>,
}

impl TryFrom<SetEncoderRecord> for SetEncoderWeights {
    type Error = Error;

    fn try_from(r: SetEncoderRecord) -> Result<Self> {
        if r.version != SET_ENCODER_VERSION {
            return Err(Error::contract(format!(
                "unsupported set encoder version {}",
                r.version
            )));
        }
        let w = SetEncoderWeights {
            heads: r.heads,
            dim: r.dim,
            sab: r.sab,
            pool_ff: r.pool_ff,
            pma: r.pma,
            seed_vector: r.seed_vector,
            init: r.init,
        };
        w.validate()?;
        Ok(w)
    }
}

impl From<SetEncoderWeights> for SetEncoderRecord {
    fn from(w: SetEncoderWeights) -> Self {
        SetEncoderRecord {
            version: SET_ENCODER_VERSION,
            heads: w.heads,
            dim: w.dim,
            sab: w.sab,
            pool_ff: w.pool_ff,
            pma: w.pma,
            seed_vector: w.seed_vector,
            init: w.init,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetEncoding {
    pub output: Vec<f64>,
    /// Pooling attention over the evidence, one row per head.
    pub pool_attention: Vec<Vec<f64>>,
}

impl SetEncoderWeights {
    /// Seeded Glorot-uniform initialization with unit layer norms.
    pub fn seeded(dim: usize, heads: usize, ff_dim: usize, seed: u64) -> Result<Self> {
        if heads == 0 || dim == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::contract(format!(
                "head count {heads} must divide dim {dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sab = AttentionBlock::glorot(dim, ff_dim, &mut rng);
        let pool_ff = FeedForward::glorot(dim, ff_dim, &mut rng);
        let pma = AttentionBlock::glorot(dim, ff_dim, &mut rng);
        let seed_vector = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Ok(Self {
            heads,
            dim,
            sab,
            pool_ff,
            pma,
            seed_vector,
            init: Some(WeightInit::chacha8(seed, "glorot-uniform")),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::contract(format!(
                "head count {} must divide dim {}",
                self.heads, self.dim
            )));
        }
        if self.seed_vector.len() != self.dim {
            return Err(Error::contract("seed vector has wrong dim"));
        }
        self.sab.check(self.dim)?;
        self.pma.check(self.dim)?;
        self.pool_ff.check(self.dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn init(&self) -> Option<&WeightInit> {
        self.init.as_ref()
    }
}

pub fn set_encode_with_attention(
    evidence: &[Vec<f64>],
    w: &SetEncoderWeights,
) -> Result<SetEncoding> {
    if evidence.is_empty() {
        return Err(Error::contract(
            "set encoder needs at least one evidence vector",
        ));
    }
    if let Some(v) = evidence.iter().find(|v| v.len() != w.dim) {
        return Err(Error::contract(format!(
            "evidence vector has dim {}, encoder expects {}",
            v.len(),
            w.dim
        )));
    }
    let (encoded, _) = w.sab.forward(evidence, evidence, w.heads);
    let pooled_in: Vec<Vec<f64>> = encoded.iter().map(|z| w.pool_ff.apply(z)).collect();
    let seed = vec![w.seed_vector.clone()];
    let (mut out, attn) = w.pma.forward(&seed, &pooled_in, w.heads);
    Ok(SetEncoding {
        output: out.pop().expect("one seed row"),
        pool_attention: attn
            .into_iter()
            .map(|mut h| h.pop().expect("one seed row"))
            .collect(),
    })
}

pub fn set_encode(evidence: &[Vec<f64>], w: &SetEncoderWeights) -> Result<Vec<f64>> {
    set_encode_with_attention(evidence, w).map(|e| e.output)
}

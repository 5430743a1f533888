use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map `y = x W + b` with `W` stored row-major as `dim_in x dim_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProjectionRecord", into = "ProjectionRecord")]
pub struct ProjectionHead {
    dim_in: usize,
    dim_out: usize,
    matrix: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ProjectionRecord {
    dim_in: usize,
    dim_out: usize,
    matrix: Vec<f64>,
    bias: Vec<f64>,
}

impl TryFrom<ProjectionRecord> for ProjectionHead {
    type Error = Error;

    fn try_from(r: ProjectionRecord) -> Result<Self> {
        ProjectionHead::new(r.dim_in, r.dim_out, r.matrix, r.bias)
    }
}

impl From<ProjectionHead> for ProjectionRecord {
    fn from(p: ProjectionHead) -> Self {
        ProjectionRecord {
            dim_in: p.dim_in,
            dim_out: p.dim_out,
            matrix: p.matrix,
            bias: p.bias,
        }
    }
}

impl ProjectionHead {
    pub fn new(dim_in: usize, dim_out: usize, matrix: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if dim_in == 0 || dim_out == 0 {
            return Err(Error::contract("projection dims must be positive"));
        }
        if matrix.len() != dim_in * dim_out || bias.len() != dim_out {
            return Err(Error::contract(format!(
                "projection {dim_in}x{dim_out} got {} weights and {} biases",
                matrix.len(),
                bias.len()
            )));
        }
        if matrix.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::contract("projection weights must be finite"));
        }
        Ok(Self {
            dim_in,
            dim_out,
            matrix,
            bias,
        })
    }

    pub fn zeros(dim_in: usize, dim_out: usize) -> Self {
        Self {
            dim_in,
            dim_out,
            matrix: vec![0.0; dim_in * dim_out],
            bias: vec![0.0; dim_out],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::block_select(dim, 0, dim, 1.0)
    }

    /// Copies `dim_out` consecutive inputs starting at `offset`, scaled by `scale`.
    pub fn block_select(dim_in: usize, offset: usize, dim_out: usize, scale: f64) -> Self {
        assert!(offset + dim_out <= dim_in, "block outside input");
        let mut p = Self::zeros(dim_in, dim_out);
        for o in 0..dim_out {
            p.matrix[(offset + o) * dim_out + o] = scale;
        }
        p
    }

    /// Glorot-uniform weights and zero bias.
    pub fn glorot(dim_in: usize, dim_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (dim_in + dim_out) as f64).sqrt();
        let matrix = (0..dim_in * dim_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            dim_in,
            dim_out,
            matrix,
            bias: vec![0.0; dim_out],
        }
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn weight(&self, i: usize, o: usize) -> f64 {
        self.matrix[i * self.dim_out + o]
    }

    pub fn set_weight(&mut self, i: usize, o: usize, v: f64) {
        self.matrix[i * self.dim_out + o] = v;
    }

    pub fn check_input(&self, len: usize) -> Result<()> {
        if len != self.dim_in {
            return Err(Error::contract(format!(
                "projection expects input dim {}, got {len}",
                self.dim_in
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        Ok(self.apply_unchecked(x))
    }

    pub(crate) fn apply_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.matrix[i * self.dim_out..(i + 1) * self.dim_out];
            for (yo, w) in y.iter_mut().zip(row) {
                *yo += xi * w;
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-5
}

impl LayerNorm {
    pub fn unit(dim: usize) -> Self {
        Self {
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
            eps: default_eps(),
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + self.eps).sqrt();
        x.iter()
            .zip(self.scale.iter().zip(&self.shift))
            .map(|(v, (s, b))| (v - mean) * inv * s + b)
            .collect()
    }
}

/// Two-layer ReLU feed-forward block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub hidden: ProjectionHead,
    pub out: ProjectionHead,
}

impl FeedForward {
    pub fn glorot(dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            hidden: ProjectionHead::glorot(dim, hidden, rng),
            out: ProjectionHead::glorot(hidden, dim, rng),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.hidden.apply_unchecked(x);
        for v in &mut h {
            *v = v.max(0.0);
        }
        self.out.apply_unchecked(&h)
    }

    pub(crate) fn check(&self, dim: usize) -> Result<()> {
        if self.hidden.dim_in() != dim
            || self.out.dim_out() != dim
            || self.hidden.dim_out() != self.out.dim_in()
        {
            return Err(Error::contract("feed-forward block has inconsistent dims"));
        }
        Ok(())
    }
}

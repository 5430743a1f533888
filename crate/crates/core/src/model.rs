//! Every learned parameter the pipeline needs, bundled as one versioned JSON file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::{ProjectionHead, SetEncoderWeights, PAIR_FEATURES};
use crate::error::{Error, Result};
use crate::gate::GateModel;
use crate::scoring::ScoringHeads;

pub const MODEL_VERSION: u32 = 1;

/// Shapes, with `d` the token dim and `d_c` the image dim:
///
/// | field       | input            | output    |
/// |-------------|------------------|-----------|
/// | `span_proj` | `3d`             | `d`       |
/// | `ent_proj`  | `d`              | `d_c`     |
/// | `pair_proj` | `2d + 3`         | `d_c`     |
/// | `fuse_ent`  | `d + d_c`        | `d`       |
/// | `fuse_pair` | `2d + 3 + d_c`   | `2d + 3`  |
///
/// The query projections double as the consistency projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRecord", into = "ModelRecord")]
pub struct ModelWeights {
    pub span_proj: ProjectionHead,
    pub ent_proj: ProjectionHead,
    pub pair_proj: ProjectionHead,
    pub fuse_ent: ProjectionHead,
    pub fuse_pair: ProjectionHead,
    pub set_encoder: SetEncoderWeights,
    pub gate: GateModel,
    pub heads: ScoringHeads,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    version: u32,
    span_proj: ProjectionHead,
    ent_proj: ProjectionHead,
    pair_proj: ProjectionHead,
    fuse_ent: ProjectionHead,
    fuse_pair: ProjectionHead,
    set_encoder: SetEncoderWeights,
    gate: GateModel,
    heads: ScoringHeads,
}

impl TryFrom<ModelRecord> for ModelWeights {
    type Error = Error;

    fn try_from(r: ModelRecord) -> Result<Self> {
        if r.version != MODEL_VERSION {
            return Err(Error::contract(format!(
                "unsupported model version {}",
                r.version
            )));
        }
        let m = ModelWeights {
            span_proj: r.span_proj,
            ent_proj: r.ent_proj,
            pair_proj: r.pair_proj,
            fuse_ent: r.fuse_ent,
            fuse_pair: r.fuse_pair,
            set_encoder: r.set_encoder,
            gate: r.gate,
            heads: r.heads,
        };
        m.validate()?;
        Ok(m)
    }
}

impl From<ModelWeights> for ModelRecord {
    fn from(m: ModelWeights) -> Self {
        ModelRecord {
            version: MODEL_VERSION,
            span_proj: m.span_proj,
            ent_proj: m.ent_proj,
            pair_proj: m.pair_proj,
            fuse_ent: m.fuse_ent,
            fuse_pair: m.fuse_pair,
            set_encoder: m.set_encoder,
            gate: m.gate,
            heads: m.heads,
        }
    }
}

/// Sizes used by [`ModelWeights::seeded`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub token_dim: usize,
    pub image_dim: usize,
    pub n_types: usize,
    pub n_relations: usize,
    pub heads: usize,
    pub ff_dim: usize,
}

impl ModelShape {
    pub fn pair_dim(&self) -> usize {
        2 * self.token_dim + PAIR_FEATURES
    }
}

impl ModelWeights {
    /// Random Glorot-uniform weights, all drawn from one seeded generator.
    pub fn seeded(shape: ModelShape, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;

        let ModelShape {
            token_dim: d,
            image_dim: dc,
            ..
        } = shape;
        let p = shape.pair_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Self {
            span_proj: ProjectionHead::glorot(3 * d, d, &mut rng),
            ent_proj: ProjectionHead::glorot(d, dc, &mut rng),
            pair_proj: ProjectionHead::glorot(p, dc, &mut rng),
            fuse_ent: ProjectionHead::glorot(d + dc, d, &mut rng),
            fuse_pair: ProjectionHead::glorot(p + dc, p, &mut rng),
            set_encoder: SetEncoderWeights::seeded(dc, shape.heads, shape.ff_dim, seed ^ 0x5e7)?,
            gate: GateModel::psi_max_only(d, 8.0, 0.5),
            heads: ScoringHeads::seeded(d, shape.n_types, p, shape.n_relations, seed ^ 0x4ead),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn token_dim(&self) -> usize {
        self.span_proj.dim_out()
    }

    pub fn image_dim(&self) -> usize {
        self.ent_proj.dim_out()
    }

    pub fn pair_dim(&self) -> usize {
        2 * self.token_dim() + PAIR_FEATURES
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.token_dim();
        let dc = self.image_dim();
        let p = self.pair_dim();
        let shapes = [
            ("span_proj", &self.span_proj, 3 * d, d),
            ("ent_proj", &self.ent_proj, d, dc),
            ("pair_proj", &self.pair_proj, p, dc),
            ("fuse_ent", &self.fuse_ent, d + dc, d),
            ("fuse_pair", &self.fuse_pair, p + dc, p),
        ];
        for (name, head, i, o) in shapes {
            if head.dim_in() != i || head.dim_out() != o {
                return Err(Error::contract(format!(
                    "{name} is {}x{}, expected {i}x{o}",
                    head.dim_in(),
                    head.dim_out()
                )));
            }
        }
        if self.set_encoder.dim() != dc {
            return Err(Error::contract("set encoder dim must equal the image dim"));
        }
        if self.gate.dim() != d {
            return Err(Error::contract("gate dim must equal the token dim"));
        }
        self.heads.validate()?;
        if self.heads.span_head.dim != d || self.heads.rel_head.dim != p {
            return Err(Error::contract(
                "scoring heads do not match the representation dims",
            ));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("weights serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> ModelShape {
        ModelShape {
            token_dim: 4,
            image_dim: 6,
            n_types: 3,
            n_relations: 2,
            heads: 2,
            ff_dim: 8,
        }
    }

    #[test]
    fn seeded_is_reproducible_and_valid() {
        let a = ModelWeights::seeded(shape(), 9).unwrap();
        assert_eq!(a, ModelWeights::seeded(shape(), 9).unwrap());
        assert_ne!(a, ModelWeights::seeded(shape(), 10).unwrap());
        assert_eq!(a.pair_dim(), 11);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let a = ModelWeights::seeded(shape(), 1).unwrap();
        a.save(&path).unwrap();
        assert_eq!(ModelWeights::load(&path).unwrap(), a);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut a = ModelWeights::seeded(shape(), 1).unwrap();
        a.fuse_ent = ProjectionHead::zeros(3, 4);
        assert!(a.validate().is_err());
        let text = serde_json::to_string(&a).unwrap();
        assert!(serde_json::from_str::<ModelWeights>(&text).is_err());
    }
}

//! Line-delimited JSON datasets.
//!
//! One sample per line. Schema version 1:
//!
//! ```json
//! {"version": 1,
//!  "id": "post-17",
//!  "labeled": true,
//!  "tokens": {"ref": "tokens/post-17.savr"},
//!  "images": [
//!    {"image_id": "a", "global": [0.1, 0.2], "regions": {"ref": "regions/post-17-a.savr"}},
//!    {"image_id": "b", "global": {"ref": "globals/post-17.savr", "row": 1}}
//!  ],
//!  "units": [
//!    {"kind": "span", "span": [0, 1], "gold": 2},
//!    {"kind": "span", "span": [3, 3], "gold": null},
//!    {"kind": "pair", "head": [0, 1], "tail": [3, 3], "gold": 4}
//!  ]}
//! ```
//!
//! `tokens` and `regions` are either inline rows (`[[..], ..]`) or `{"ref": path}`
//! to a binary matrix file; `global` is an inline vector or `{"ref": path, "row": i}`.
//! Relative paths resolve against the dataset file's directory. Region files are
//! checked for existence at load time but only read when materialized.
//!
//! For span units `gold` is the entity type id, or `null` for a non-entity
//! candidate. Pair units carry the relation id. `labeled: false` marks samples
//! whose gold fields are unknown.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{read_matrix, EmbeddingMatrix};

pub const DATASET_VERSION: u32 = 1;

/// Inclusive token interval `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    /// Number of tokens covered.
    pub fn width(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    fn validate(&self, tokens: usize) -> std::result::Result<(), String> {
        if self.start > self.end {
            return Err(format!(
                "span ({}, {}) has start > end",
                self.start, self.end
            ));
        }
        if self.end >= tokens {
            return Err(format!(
                "span ({}, {}) exceeds {} tokens",
                self.start, self.end, tokens
            ));
        }
        Ok(())
    }
}

impl From<[usize; 2]> for Span {
    fn from(v: [usize; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UnitSpec {
    Span {
        span: Span,
        #[serde(default)]
        gold: Option<usize>,
    },
    Pair {
        head: Span,
        tail: Span,
        #[serde(default)]
        gold: Option<usize>,
    },
}

impl UnitSpec {
    pub fn gold(&self) -> Option<usize> {
        match self {
            UnitSpec::Span { gold, .. } | UnitSpec::Pair { gold, .. } => *gold,
        }
    }

    pub fn is_pair(&self) -> bool {
        matches!(self, UnitSpec::Pair { .. })
    }
}

/// Where an image's region matrix lives. Files are read on demand.
#[derive(Debug, Clone)]
pub enum RegionSource {
    Inline(Arc<EmbeddingMatrix>),
    File(PathBuf),
}

impl RegionSource {
    pub fn materialize(&self) -> Result<Arc<EmbeddingMatrix>> {
        match self {
            RegionSource::Inline(m) => Ok(Arc::clone(m)),
            RegionSource::File(p) => read_matrix(p).map(Arc::new),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageEntry {
    pub image_id: String,
    pub global: Vec<f32>,
    pub regions: Option<RegionSource>,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub labeled: bool,
    pub tokens: Arc<EmbeddingMatrix>,
    pub images: Vec<ImageEntry>,
    pub units: Vec<UnitSpec>,
}

impl Sample {
    /// Common dim of the image vectors, if the sample has images.
    pub fn image_dim(&self) -> Option<usize> {
        self.images.first().map(|i| i.global.len())
    }

    pub fn globals(&self) -> Vec<&[f32]> {
        self.images.iter().map(|i| i.global.as_slice()).collect()
    }

    /// Checks the type invariants; the message is suitable for a parse error.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let rows = self.tokens.rows();
        for (i, unit) in self.units.iter().enumerate() {
            let r = match unit {
                UnitSpec::Span { span, .. } => span.validate(rows),
                UnitSpec::Pair { head, tail, .. } => {
                    head.validate(rows).and_then(|_| tail.validate(rows))
                }
            };
            r.map_err(|e| format!("unit {i}: {e}"))?;
        }
        let mut seen = HashSet::new();
        let dim = self.image_dim();
        for img in &self.images {
            if !seen.insert(img.image_id.as_str()) {
                return Err(format!("duplicate image id {:?}", img.image_id));
            }
            if Some(img.global.len()) != dim || img.global.is_empty() {
                return Err(format!(
                    "image {:?} has global dim {}, expected {:?}",
                    img.image_id,
                    img.global.len(),
                    dim
                ));
            }
            if img.global.iter().any(|v| !v.is_finite()) {
                return Err(format!("image {:?} has non-finite global", img.image_id));
            }
            if let Some(RegionSource::Inline(m)) = &img.regions {
                if Some(m.dim()) != dim {
                    return Err(format!(
                        "image {:?} regions have dim {}, expected {:?}",
                        img.image_id,
                        m.dim(),
                        dim
                    ));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Raw record form

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    #[serde(rename = "ref")]
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowRef {
    #[serde(rename = "ref")]
    pub path: String,
    #[serde(default)]
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixField {
    Inline(Vec<Vec<f32>>),
    Ref(FileRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorField {
    Inline(Vec<f32>),
    Ref(RowRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: String,
    pub global: VectorField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<MatrixField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    #[serde(default = "default_version")]
    pub version: u32,
    pub id: String,
    #[serde(default = "default_true")]
    pub labeled: bool,
    pub tokens: MatrixField,
    #[serde(default)]
    pub images: Vec<ImageRecord>,
    #[serde(default)]
    pub units: Vec<UnitSpec>,
}

fn default_version() -> u32 {
    DATASET_VERSION
}

fn default_true() -> bool {
    true
}

/// Resolves record references relative to a base directory, caching loaded matrices.
struct Resolver {
    base: PathBuf,
    cache: HashMap<PathBuf, Arc<EmbeddingMatrix>>,
}

impl Resolver {
    fn path(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn load(&mut self, p: &str, line: usize) -> Result<Arc<EmbeddingMatrix>> {
        let path = self.path(p);
        if let Some(m) = self.cache.get(&path) {
            return Ok(Arc::clone(m));
        }
        if !path.is_file() {
            return Err(Error::Reference {
                line,
                target: path.display().to_string(),
            });
        }
        let m = Arc::new(read_matrix(&path)?);
        self.cache.insert(path, Arc::clone(&m));
        Ok(m)
    }

    fn resolve(&mut self, rec: SampleRecord, line: usize) -> Result<Sample> {
        let parse = |reason: String| Error::Parse { line, reason };
        if rec.version != DATASET_VERSION {
            return Err(parse(format!("unsupported record version {}", rec.version)));
        }
        let tokens = match rec.tokens {
            MatrixField::Inline(rows) => {
                Arc::new(EmbeddingMatrix::from_rows(&rows, None).map_err(|e| parse(e.to_string()))?)
            }
            MatrixField::Ref(r) => self.load(&r.path, line)?,
        };
        let mut images = Vec::with_capacity(rec.images.len());
        for img in rec.images {
            let global = match img.global {
                VectorField::Inline(v) => v,
                VectorField::Ref(r) => {
                    let m = self.load(&r.path, line)?;
                    if r.row >= m.rows() {
                        return Err(Error::Reference {
                            line,
                            target: format!("{} row {}", r.path, r.row),
                        });
                    }
                    m.row(r.row).to_vec()
                }
            };
            let regions = match img.regions {
                None => None,
                Some(MatrixField::Inline(rows)) => {
                    let dim = global.len();
                    let m = EmbeddingMatrix::from_rows(&rows, Some(dim))
                        .map_err(|e| parse(e.to_string()))?;
                    Some(RegionSource::Inline(Arc::new(m)))
                }
                Some(MatrixField::Ref(r)) => {
                    let path = self.path(&r.path);
                    if !path.is_file() {
                        return Err(Error::Reference {
                            line,
                            target: path.display().to_string(),
                        });
                    }
                    Some(RegionSource::File(path))
                }
            };
            images.push(ImageEntry {
                image_id: img.image_id,
                global,
                regions,
            });
        }
        let sample = Sample {
            id: rec.id,
            labeled: rec.labeled,
            tokens,
            images,
            units: rec.units,
        };
        sample.validate().map_err(parse)?;
        Ok(sample)
    }
}

/// Parses JSON lines from a reader. Blank lines are skipped; `base` anchors relative refs.
pub fn parse_dataset(reader: impl BufRead, base: &Path) -> Result<Vec<Sample>> {
    let mut resolver = Resolver {
        base: base.to_path_buf(),
        cache: HashMap::new(),
    };
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(base, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        if !ids.insert(rec.id.clone()) {
            return Err(Error::Parse {
                line: lineno,
                reason: format!("duplicate sample id {:?}", rec.id),
            });
        }
        out.push(resolver.resolve(rec, lineno)?);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_dataset(BufReader::new(file), base)
}

pub fn write_records(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for rec in records {
        let line = serde_json::to_string(rec).expect("records serialize");
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

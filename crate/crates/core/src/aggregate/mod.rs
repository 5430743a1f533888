//! Unit representations, evidence-set construction, set aggregation and gated fusion.

pub mod linear;
pub mod set_encoder;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use linear::{FeedForward, LayerNorm, ProjectionHead};
pub use set_encoder::{
    set_encode, set_encode_with_attention, softmax, SetEncoderWeights, SetEncoding, WeightInit,
};

use crate::dataset::{ImageEntry, Span};
use crate::error::{Error, Result};
use crate::matrix::{cosine, to_f64, EmbeddingMatrix};
use crate::selector::{top_k_regions, EvidenceSelection};

/// Length of the distance/order feature block appended to pair representations.
pub const PAIR_FEATURES: usize = 3;

/// Span representation: `proj([H_a ; H_b ; mean(H_a..=H_b)])`.
pub fn span_rep(tokens: &EmbeddingMatrix, span: Span, proj: &ProjectionHead) -> Result<Vec<f64>> {
    if span.start > span.end || span.end >= tokens.rows() {
        return Err(Error::contract(format!(
            "span ({}, {}) invalid for {} tokens",
            span.start,
            span.end,
            tokens.rows()
        )));
    }
    let d = tokens.dim();
    proj.check_input(3 * d)?;
    let mut x = Vec::with_capacity(3 * d);
    x.extend(tokens.row(span.start).iter().map(|&v| f64::from(v)));
    x.extend(tokens.row(span.end).iter().map(|&v| f64::from(v)));
    let mut mean = vec![0.0; d];
    for t in span.start..=span.end {
        for (m, &v) in mean.iter_mut().zip(tokens.row(t)) {
            *m += f64::from(v);
        }
    }
    let width = span.width() as f64;
    x.extend(mean.iter().map(|m| m / width));
    Ok(proj.apply_unchecked(&x))
}

/// Order and distance features between two spans:
/// `[order, ln(1 + gap), |mid_head - mid_tail| / n_tokens]`.
///
/// `order` is `+1` when the head does not come after the tail (lexicographic on
/// `(start, end)`), `-1` otherwise. `gap` counts tokens strictly between the
/// nearest endpoints and is zero for touching or overlapping spans.
pub fn distance_features(head: Span, tail: Span, n_tokens: usize) -> [f64; PAIR_FEATURES] {
    let order = if (head.start, head.end) <= (tail.start, tail.end) {
        1.0
    } else {
        -1.0
    };
    let (first, second) = if head.start <= tail.start {
        (head, tail)
    } else {
        (tail, head)
    };
    let gap = second.start.saturating_sub(first.end + 1);
    let mid = |s: Span| (s.start + s.end) as f64 / 2.0;
    let dist = (mid(head) - mid(tail)).abs() / n_tokens.max(1) as f64;
    [order, (gap as f64).ln_1p(), dist]
}

/// Text-only pair representation `[h_head ; h_tail ; distance features]`.
pub fn pair_features(
    h_head: &[f64],
    h_tail: &[f64],
    head: Span,
    tail: Span,
    n_tokens: usize,
) -> Vec<f64> {
    let mut u = Vec::with_capacity(h_head.len() + h_tail.len() + PAIR_FEATURES);
    u.extend_from_slice(h_head);
    u.extend_from_slice(h_tail);
    u.extend_from_slice(&distance_features(head, tail, n_tokens));
    u
}

/// Pair query vector: `proj` applied to [`pair_features`].
pub fn pair_rep(
    h_head: &[f64],
    h_tail: &[f64],
    head: Span,
    tail: Span,
    n_tokens: usize,
    proj: &ProjectionHead,
) -> Result<Vec<f64>> {
    proj.apply(&pair_features(h_head, h_tail, head, tail, n_tokens))
}

/// Supplies region matrices for images on demand.
pub trait RegionProvider {
    /// Region matrix of image `index`, or `None` when the image has no regions.
    fn regions(&mut self, index: usize) -> Result<Option<Arc<EmbeddingMatrix>>>;
}

/// Per-sample region loader that reads each image's regions at most once.
pub struct LazyRegions<'a> {
    images: &'a [ImageEntry],
    cache: HashMap<usize, Option<Arc<EmbeddingMatrix>>>,
    reads: usize,
}

impl<'a> LazyRegions<'a> {
    pub fn new(images: &'a [ImageEntry]) -> Self {
        Self {
            images,
            cache: HashMap::new(),
            reads: 0,
        }
    }

    /// Region matrices materialized so far.
    pub fn reads(&self) -> usize {
        self.reads
    }
}

impl RegionProvider for LazyRegions<'_> {
    fn regions(&mut self, index: usize) -> Result<Option<Arc<EmbeddingMatrix>>> {
        if let Some(hit) = self.cache.get(&index) {
            return Ok(hit.clone());
        }
        let image = self
            .images
            .get(index)
            .ok_or_else(|| Error::contract(format!("image index {index} out of range")))?;
        let loaded = match &image.regions {
            None => None,
            Some(src) => {
                self.reads += 1;
                let m = src
                    .materialize()
                    .map_err(|e| e.context(format!("regions of image {:?}", image.image_id)))?;
                if m.dim() != image.global.len() {
                    return Err(Error::contract(format!(
                        "regions of image {:?} have dim {}, globals have {}",
                        image.image_id,
                        m.dim(),
                        image.global.len()
                    )));
                }
                Some(m)
            }
        };
        self.cache.insert(index, loaded.clone());
        Ok(loaded)
    }
}

/// Global vector of every chosen image followed by its `k_regions` regions most
/// similar to `q`. Images without regions contribute only their global vector.
pub fn build_evidence_set(
    q: &[f64],
    selection: &EvidenceSelection,
    images: &[ImageEntry],
    k_regions: usize,
    regions: &mut impl RegionProvider,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for &i in &selection.chosen {
        let image = images
            .get(i)
            .ok_or_else(|| Error::contract(format!("selected image {i} out of range")))?;
        out.push(to_f64(&image.global));
        if k_regions == 0 {
            continue;
        }
        if let Some(m) = regions.regions(i)? {
            if m.rows() == 0 {
                continue;
            }
            for r in top_k_regions(q, &m, k_regions)? {
                out.push(m.row_f64(r));
            }
        }
    }
    Ok(out)
}

/// Gated fusion `(1 - eta) h + eta Fuse(h, z)` with `Fuse(h, z) = head([h ; z])`.
pub fn fuse(h: &[f64], z_set: &[f64], eta: f64, fuse_head: &ProjectionHead) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::contract(format!("fusion gate {eta} outside [0, 1]")));
    }
    if fuse_head.dim_out() != h.len() {
        return Err(Error::contract(
            "fusion head output dim must equal the text dim",
        ));
    }
    if eta == 0.0 {
        return Ok(h.to_vec());
    }
    let mut x = Vec::with_capacity(h.len() + z_set.len());
    x.extend_from_slice(h);
    x.extend_from_slice(z_set);
    let f = fuse_head.apply(&x)?;
    Ok(h.iter()
        .zip(&f)
        .map(|(a, b)| (1.0 - eta) * a + eta * b)
        .collect())
}

/// Cosine between the projected fused representation and the evidence vector;
/// zero when no evidence was built.
pub fn consistency(proj: &ProjectionHead, h_tilde: &[f64], z_set: Option<&[f64]>) -> Result<f64> {
    match z_set {
        None => Ok(0.0),
        Some(z) => {
            let p = proj.apply(h_tilde)?;
            if p.len() != z.len() {
                return Err(Error::contract(
                    "consistency projection does not match evidence dim",
                ));
            }
            Ok(cosine(&p, z))
        }
    }
}

/// Training uses the soft gate `eta = g`; inference uses `eta = g * gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    TrainSoft,
    #[default]
    TestHard,
}

impl FusionMode {
    pub fn eta(self, g: f64, active: bool) -> f64 {
        match self {
            FusionMode::TrainSoft => g,
            FusionMode::TestHard if active => g,
            FusionMode::TestHard => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RegionSource;

    fn tokens() -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0], [2.0, 2.0]], None).unwrap()
    }

    #[test]
    fn single_token_span_repeats_row() {
        let h = span_rep(&tokens(), Span::new(2, 2), &ProjectionHead::identity(6)).unwrap();
        assert_eq!(h, vec![2.0, 2.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn two_token_span_mean() {
        let h = span_rep(&tokens(), Span::new(0, 1), &ProjectionHead::identity(6)).unwrap();
        assert_eq!(h, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
    }

    #[test]
    fn span_rep_contract() {
        let p = ProjectionHead::identity(6);
        assert!(span_rep(&tokens(), Span::new(1, 3), &p).is_err());
        assert!(span_rep(&tokens(), Span::new(0, 0), &ProjectionHead::identity(4)).is_err());
    }

    #[test]
    fn adjacent_spans_have_zero_gap() {
        let f = distance_features(Span::new(0, 1), Span::new(2, 3), 4);
        assert_eq!(f[0], 1.0);
        assert_eq!(f[1], 0.0);
        assert!((f[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn swapping_flips_order_only() {
        let (a, b) = (Span::new(0, 0), Span::new(4, 5));
        let f = distance_features(a, b, 10);
        let g = distance_features(b, a, 10);
        assert_eq!(f[0], -g[0]);
        assert_eq!(f[1], g[1]);
        assert_eq!(f[2], g[2]);
        assert_eq!(f[1], 3f64.ln_1p());
    }

    #[test]
    fn identical_spans() {
        let s = Span::new(2, 3);
        let f = distance_features(s, s, 8);
        assert_eq!((f[1], f[2]), (0.0, 0.0));
    }

    #[test]
    fn pair_rep_concatenates_then_projects() {
        let u = pair_features(&[1.0], &[2.0], Span::new(0, 0), Span::new(1, 1), 2);
        assert_eq!(u.len(), 2 + PAIR_FEATURES);
        let q = pair_rep(
            &[1.0],
            &[2.0],
            Span::new(0, 0),
            Span::new(1, 1),
            2,
            &ProjectionHead::block_select(5, 0, 2, 1.0),
        )
        .unwrap();
        assert_eq!(q, vec![1.0, 2.0]);
    }

    fn image(id: &str, global: Vec<f32>, regions: Option<Vec<[f32; 2]>>) -> ImageEntry {
        ImageEntry {
            image_id: id.into(),
            global,
            regions: regions.map(|r| {
                RegionSource::Inline(Arc::new(EmbeddingMatrix::from_rows(&r, Some(2)).unwrap()))
            }),
        }
    }

    fn selection(chosen: Vec<usize>) -> EvidenceSelection {
        EvidenceSelection {
            chosen,
            ..EvidenceSelection::empty(3)
        }
    }

    #[test]
    fn evidence_set_sizes() {
        let images = vec![
            image("a", vec![1.0, 0.0], None),
            image(
                "b",
                vec![0.0, 1.0],
                Some(vec![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.0]]),
            ),
            image(
                "c",
                vec![1.0, 1.0],
                Some(vec![[1.0, 0.2], [0.3, 1.0], [1.0, -1.0], [0.0, -1.0]]),
            ),
        ];
        let q = [1.0, 0.0];

        let mut lazy = LazyRegions::new(&images);
        let v = build_evidence_set(&q, &selection(vec![0]), &images, 3, &mut lazy).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(lazy.reads(), 0);

        let v = build_evidence_set(&q, &selection(vec![1, 2]), &images, 2, &mut lazy).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v[1], vec![1.0, 0.0]);
        assert_eq!(lazy.reads(), 2);

        // cached: no new reads
        build_evidence_set(&q, &selection(vec![2]), &images, 2, &mut lazy).unwrap();
        assert_eq!(lazy.reads(), 2);

        let v = build_evidence_set(&q, &selection(vec![]), &images, 2, &mut lazy).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn fuse_examples() {
        let h = [1.0, 2.0];
        let z = [3.0, 5.0];
        let head = ProjectionHead::block_select(4, 2, 2, 1.0);
        assert_eq!(fuse(&h, &z, 0.0, &head).unwrap(), h.to_vec());
        assert_eq!(fuse(&h, &z, 1.0, &head).unwrap(), z.to_vec());
        assert_eq!(fuse(&h, &z, 0.5, &head).unwrap(), vec![2.0, 3.5]);
        assert!(fuse(&h, &z, 1.5, &head).is_err());
    }

    #[test]
    fn consistency_examples() {
        let p = ProjectionHead::identity(2);
        let h = [0.3, -0.4];
        assert_eq!(consistency(&p, &h, None).unwrap(), 0.0);
        assert!((consistency(&p, &h, Some(&h)).unwrap() - 1.0).abs() < 1e-15);
        assert!((consistency(&p, &h, Some(&[-0.3, 0.4])).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn eta_modes() {
        assert_eq!(FusionMode::TrainSoft.eta(0.7, false), 0.7);
        assert_eq!(FusionMode::TestHard.eta(0.7, false), 0.0);
        assert_eq!(FusionMode::TestHard.eta(0.7, true), 0.7);
    }
}

//! Class-token cross-attention, classification heads, and relation-to-object
//! attention fusion.
//!
//! All arithmetic runs in `f64`; attention stacks are stored as `f32`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    AttentionStack, CategoryVocabulary, FrameRef, Provenance, UnlocalizedSceneGraph,
};

/// Spread below which a map is treated as featureless by [`normalize_stack`].
pub const DEGENERATE_SPREAD: f64 = 1e-9;

/// Dense row-major `rows x dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("feature dimension must be at least 1".into()));
        }
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "feature matrix data has {} values, expected {rows}x{dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "feature matrix contains non-finite values".into(),
            ));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged feature rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// `self * m` for a square `dim x dim` matrix stored row-major.
    fn mul_square(&self, m: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; self.rows * d];
        for r in 0..self.rows {
            let row = self.row(r);
            let dst = &mut out[r * d..(r + 1) * d];
            for (k, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let mrow = &m[k * d..(k + 1) * d];
                for (o, &b) in dst.iter_mut().zip(mrow) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

/// Query/key/value projections (`D x D`) and the classification vector (`D x 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    dim: usize,
    w_q: Vec<f64>,
    w_k: Vec<f64>,
    w_v: Vec<f64>,
    w_cls: Vec<f64>,
}

impl ProjectionSet {
    pub fn new(
        dim: usize,
        w_q: Vec<f64>,
        w_k: Vec<f64>,
        w_v: Vec<f64>,
        w_cls: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape(
                "projection dimension must be at least 1".into(),
            ));
        }
        for (name, m) in [("w_q", &w_q), ("w_k", &w_k), ("w_v", &w_v)] {
            if m.len() != dim * dim {
                return Err(Error::Shape(format!(
                    "{name} has {} values, expected {dim}x{dim}",
                    m.len()
                )));
            }
        }
        if w_cls.len() != dim {
            return Err(Error::Shape(format!(
                "w_cls has {} values, expected {dim}",
                w_cls.len()
            )));
        }
        if [&w_q, &w_k, &w_v, &w_cls]
            .iter()
            .any(|m| m.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Validation(
                "projection weights contain non-finite values".into(),
            ));
        }
        Ok(Self {
            dim,
            w_q,
            w_k,
            w_v,
            w_cls,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut eye = vec![0.0; dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = 1.0;
        }
        Self::new(dim, eye.clone(), eye.clone(), eye, vec![0.0; dim])
            .expect("identity projections are valid")
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(
            dim,
            vec![0.0; dim * dim],
            vec![0.0; dim * dim],
            vec![0.0; dim * dim],
            vec![0.0; dim],
        )
        .expect("zero projections are valid")
    }

    pub fn with_classifier(mut self, w_cls: Vec<f64>) -> Result<Self> {
        if w_cls.len() != self.dim {
            return Err(Error::Shape(format!(
                "w_cls has {} values, expected {}",
                w_cls.len(),
                self.dim
            )));
        }
        self.w_cls = w_cls;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Object,
    Relation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
    kind: HeadKind,
}

impl LogitVector {
    pub fn new(values: Vec<f64>, kind: HeadKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("logits must be finite".into()));
        }
        Ok(Self { values, kind })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
            kind: self.kind,
        }
    }
}

/// Multi-hot image-level label vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageLabelVector {
    values: Vec<bool>,
    kind: HeadKind,
}

impl ImageLabelVector {
    pub fn new(values: Vec<bool>, kind: HeadKind) -> Self {
        Self { values, kind }
    }

    pub fn from_bits(bits: &[u8], kind: HeadKind) -> Result<Self> {
        let values = bits
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Validation(format!(
                    "label entries must be 0 or 1, got {other}"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { values, kind })
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn complement(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| !v).collect(),
            kind: self.kind,
        }
    }
}

/// Object and relation label vectors aggregated from an unlocalized annotation.
pub fn image_labels(
    ann: &UnlocalizedSceneGraph,
    vocab: &CategoryVocabulary,
) -> Result<(ImageLabelVector, ImageLabelVector)> {
    ann.validate(Some(vocab))?;
    let mut obj = vec![false; vocab.num_objects()];
    let mut rel = vec![false; vocab.num_relations()];
    for t in &ann.triplets {
        obj[t.subject] = true;
        obj[t.object] = true;
        rel[t.predicate] = true;
    }
    Ok((
        ImageLabelVector::new(obj, HeadKind::Object),
        ImageLabelVector::new(rel, HeadKind::Relation),
    ))
}

/// Output of one cross-attention layer.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    /// Token-to-patch slice reshaped to `C x h x w`.
    pub stack: AttentionStack,
    /// Updated class tokens `A (z W_v)`.
    pub tokens: FeatureMatrix,
    /// Full row-stochastic matrix, `C x (C + N)` row-major.
    pub weights: Vec<f64>,
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Cross-attention of class tokens over `[tokens; patches]`.
///
/// Categories of the returned stack are `0..C`, provenance `raw`.
pub fn compute_attention(
    tokens: &FeatureMatrix,
    patches: &FeatureMatrix,
    proj: &ProjectionSet,
    grid: (usize, usize),
    frame: &FrameRef,
) -> Result<CrossAttention> {
    let (h, w) = grid;
    let d = proj.dim();
    if tokens.dim() != d || patches.dim() != d {
        return Err(Error::Shape(format!(
            "token dim {} / patch dim {} do not match projection dim {d}",
            tokens.dim(),
            patches.dim()
        )));
    }
    if h == 0 || w == 0 || patches.rows() != h * w {
        return Err(Error::Shape(format!(
            "{} patches cannot fill a {h}x{w} grid",
            patches.rows()
        )));
    }
    if tokens.rows() == 0 {
        return Err(Error::Shape("need at least one class token".into()));
    }
    let c = tokens.rows();
    let n = patches.rows();
    let z = FeatureMatrix::new(c + n, d, [tokens.data(), patches.data()].concat())?;

    let q = tokens.mul_square(&proj.w_q);
    let k = z.mul_square(&proj.w_k);
    let v = z.mul_square(&proj.w_v);
    let scale = (d as f64).sqrt();

    let cols = c + n;
    let mut weights = vec![0.0; c * cols];
    for i in 0..c {
        let qi = &q[i * d..(i + 1) * d];
        let row = &mut weights[i * cols..(i + 1) * cols];
        for (j, dst) in row.iter_mut().enumerate() {
            let kj = &k[j * d..(j + 1) * d];
            *dst = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / scale;
        }
        softmax_in_place(row);
    }

    let mut out = vec![0.0; c * d];
    for i in 0..c {
        let dst = &mut out[i * d..(i + 1) * d];
        for j in 0..cols {
            let a = weights[i * cols + j];
            for (o, &vj) in dst.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                *o += a * vj;
            }
        }
    }

    let mut maps = Vec::with_capacity(c * n);
    for i in 0..c {
        maps.extend(
            weights[i * cols + c..(i + 1) * cols]
                .iter()
                .map(|&a| (a as f32).clamp(0.0, 1.0)),
        );
    }
    let stack =
        AttentionStack::from_trusted(frame.clone(), (0..c).collect(), h, w, maps, Provenance::Raw);
    Ok(CrossAttention {
        stack,
        tokens: FeatureMatrix::new(c, d, out)?,
        weights,
    })
}

/// Linear classification head: one logit per token.
pub fn classify(
    tokens: &FeatureMatrix,
    proj: &ProjectionSet,
    kind: HeadKind,
) -> Result<LogitVector> {
    if tokens.dim() != proj.w_cls.len() {
        return Err(Error::Shape(format!(
            "token dim {} does not match classifier length {}",
            tokens.dim(),
            proj.w_cls.len()
        )));
    }
    let values = (0..tokens.rows())
        .map(|i| {
            tokens
                .row(i)
                .iter()
                .zip(&proj.w_cls)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    LogitVector::new(values, kind)
}

/// Mean binary cross-entropy over classes, evaluated in logit space.
pub fn bce_loss(logits: &LogitVector, labels: &ImageLabelVector) -> Result<f64> {
    if logits.len() != labels.values().len() {
        return Err(Error::Shape(format!(
            "{} logits vs {} labels",
            logits.len(),
            labels.values().len()
        )));
    }
    if logits.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = logits
        .values()
        .iter()
        .zip(labels.values())
        .map(|(&s, &y)| {
            let y = if y { 1.0 } else { 0.0 };
            // -[y ln σ(s) + (1-y) ln(1-σ(s))] without forming σ.
            s.max(0.0) - s * y + (-s.abs()).exp().ln_1p()
        })
        .sum();
    Ok(total / logits.len() as f64)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Min-max normalizes one map computed in `f64`.
pub(crate) fn normalize_map(values: &[f64]) -> Vec<f32> {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let spread = max - min;
    if !(spread >= DEGENERATE_SPREAD) {
        return vec![0.0; values.len()];
    }
    values
        .iter()
        .map(|&v| (((v - min) / spread) as f32).clamp(0.0, 1.0))
        .collect()
}

/// Rebuilds a stack from per-category `f64` maps, min-max normalizing each one.
pub(crate) fn stack_from_f64(
    template: &AttentionStack,
    maps: &[f64],
    provenance: Provenance,
) -> AttentionStack {
    let plane = template.height() * template.width();
    let data = maps.chunks_exact(plane).flat_map(normalize_map).collect();
    AttentionStack::from_trusted(
        template.frame().clone(),
        template.categories().to_vec(),
        template.height(),
        template.width(),
        data,
        provenance,
    )
}

/// Per-category min-max normalization into `[0,1]`; near-constant maps become zero.
pub fn normalize_stack(stack: &AttentionStack) -> AttentionStack {
    let maps: Vec<f64> = stack.data().iter().map(|&v| v as f64).collect();
    stack_from_f64(stack, &maps, stack.provenance())
}

/// Fuses relation attention into object attention: `norm(A_obj + S A_rel)`
/// with `S = A_obj A_rel^T` over flattened maps.
pub fn fuse_attention(a_obj: &AttentionStack, a_rel: &AttentionStack) -> Result<AttentionStack> {
    if a_obj.grid() != a_rel.grid() {
        return Err(Error::Shape(format!(
            "object grid {:?} vs relation grid {:?}",
            a_obj.grid(),
            a_rel.grid()
        )));
    }
    a_obj.frame().ensure_same(a_rel.frame(), "fuse_attention")?;

    let plane = a_obj.height() * a_obj.width();
    let c_obj = a_obj.num_categories();
    let c_rel = a_rel.num_categories();
    let obj: Vec<f64> = a_obj.data().iter().map(|&v| v as f64).collect();
    let rel: Vec<f64> = a_rel.data().iter().map(|&v| v as f64).collect();

    let mut similarity = vec![0.0; c_obj * c_rel];
    for i in 0..c_obj {
        let oi = &obj[i * plane..(i + 1) * plane];
        for r in 0..c_rel {
            let rr = &rel[r * plane..(r + 1) * plane];
            similarity[i * c_rel + r] = oi.iter().zip(rr).map(|(a, b)| a * b).sum();
        }
    }

    let mut fused = obj;
    for i in 0..c_obj {
        let dst = &mut fused[i * plane..(i + 1) * plane];
        for r in 0..c_rel {
            let s = similarity[i * c_rel + r];
            if s == 0.0 {
                continue;
            }
            for (o, &a) in dst.iter_mut().zip(&rel[r * plane..(r + 1) * plane]) {
                *o += s * a;
            }
        }
    }
    Ok(stack_from_f64(a_obj, &fused, Provenance::Fused))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: u32, h: u32) -> FrameRef {
        FrameRef::new("v", 0, w, h).unwrap()
    }

    fn stack(c: usize, h: usize, w: usize, data: Vec<f32>) -> AttentionStack {
        AttentionStack::new(
            frame(w as u32, h as u32),
            (0..c).collect(),
            h,
            w,
            data,
            Provenance::Raw,
        )
        .unwrap()
    }

    #[test]
    fn zero_projections_give_uniform_rows() {
        let tokens = FeatureMatrix::new(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
        let patches = FeatureMatrix::new(4, 3, (0..12).map(|i| i as f64).collect()).unwrap();
        let out = compute_attention(
            &tokens,
            &patches,
            &ProjectionSet::zeros(3),
            (2, 2),
            &frame(2, 2),
        )
        .unwrap();
        let expected = 1.0 / 6.0;
        assert!(out.weights.iter().all(|&a| (a - expected).abs() < 1e-12));
        assert!(out.stack.data().iter().all(|&a| a == expected as f32));
    }

    #[test]
    fn hand_computed_two_patch_example() {
        // logits (100, 100, 0) / sqrt(2) -> softmax (0.5, 0.5, 9.7659e-32)
        let tokens = FeatureMatrix::from_rows(&[vec![10.0, 0.0]]).unwrap();
        let patches = FeatureMatrix::from_rows(&[vec![10.0, 0.0], vec![0.0, 10.0]]).unwrap();
        let out = compute_attention(
            &tokens,
            &patches,
            &ProjectionSet::identity(2),
            (1, 2),
            &frame(2, 1),
        )
        .unwrap();
        let s = out.stack.data();
        assert!((s[0] as f64 - 0.5).abs() < 1e-7);
        assert!((s[1] as f64 - 9.765_909_3e-32).abs() < 1e-36);
    }

    #[test]
    fn grid_patch_mismatch_is_shape_error() {
        let tokens = FeatureMatrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        let patches = FeatureMatrix::new(3, 2, vec![0.0; 6]).unwrap();
        let r = compute_attention(
            &tokens,
            &patches,
            &ProjectionSet::identity(2),
            (2, 2),
            &frame(2, 2),
        );
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn classify_examples() {
        let proj = ProjectionSet::zeros(3);
        let tokens =
            FeatureMatrix::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            classify(&tokens, &proj, HeadKind::Object).unwrap().values(),
            &[0.0, 0.0, 0.0]
        );

        let proj = proj.with_classifier(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            classify(&tokens, &proj, HeadKind::Object).unwrap().values(),
            &[1.0, 2.0, 3.0]
        );

        let proj = ProjectionSet::zeros(2)
            .with_classifier(vec![0.5, 0.5])
            .unwrap();
        let one = FeatureMatrix::new(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(
            classify(&one, &proj, HeadKind::Relation).unwrap().values(),
            &[1.0]
        );

        let wrong = FeatureMatrix::new(1, 3, vec![1.0; 3]).unwrap();
        assert!(classify(&wrong, &proj, HeadKind::Object).is_err());
    }

    #[test]
    fn bce_reference_values() {
        let zeros = LogitVector::new(vec![0.0; 3], HeadKind::Object).unwrap();
        let labels = ImageLabelVector::from_bits(&[1, 0, 1], HeadKind::Object).unwrap();
        assert!((bce_loss(&zeros, &labels).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        let one = ImageLabelVector::from_bits(&[1], HeadKind::Object).unwrap();
        let pos = LogitVector::new(vec![20.0], HeadKind::Object).unwrap();
        assert!((bce_loss(&pos, &one).unwrap() - 2.061_153_6e-9).abs() < 1e-15);
        let neg = LogitVector::new(vec![-20.0], HeadKind::Object).unwrap();
        assert!((bce_loss(&neg, &one).unwrap() - 20.000_000_002).abs() < 1e-9);
    }

    #[test]
    fn bce_length_mismatch() {
        let l = LogitVector::new(vec![0.0; 2], HeadKind::Object).unwrap();
        let y = ImageLabelVector::from_bits(&[1], HeadKind::Object).unwrap();
        assert!(matches!(bce_loss(&l, &y), Err(Error::Shape(_))));
        assert!(ImageLabelVector::from_bits(&[2], HeadKind::Object).is_err());
    }

    #[test]
    fn normalize_examples() {
        let s = normalize_stack(&stack(1, 1, 2, vec![1.0, 0.0]));
        assert_eq!(s.data(), &[1.0, 0.0]);
        let s = normalize_stack(&stack(1, 1, 3, vec![0.7; 3]));
        assert_eq!(s.data(), &[0.0; 3]);
        // A stack cannot hold -1 or 3, so exercise the map helper directly.
        assert_eq!(normalize_map(&[-1.0, 0.0, 3.0]), vec![0.0, 0.25, 1.0]);
    }

    #[test]
    fn fuse_hand_examples() {
        let a = stack(1, 1, 2, vec![1.0, 0.0]);
        let same = fuse_attention(&a, &stack(1, 1, 2, vec![1.0, 0.0])).unwrap();
        assert_eq!(same.data(), &[1.0, 0.0]);
        assert_eq!(same.provenance(), Provenance::Fused);
        let ortho = fuse_attention(&a, &stack(1, 1, 2, vec![0.0, 1.0])).unwrap();
        assert_eq!(ortho.data(), &[1.0, 0.0]);
    }

    #[test]
    fn fuse_with_zero_relation_is_normalization() {
        let a = stack(2, 2, 2, vec![0.1, 0.4, 0.3, 0.2, 0.9, 0.9, 0.0, 0.5]);
        let zero = stack(3, 2, 2, vec![0.0; 12]);
        let fused = fuse_attention(&a, &zero).unwrap();
        assert_eq!(fused.data(), normalize_stack(&a).data());
    }

    #[test]
    fn fuse_grid_mismatch() {
        let a = stack(1, 1, 2, vec![1.0, 0.0]);
        let b =
            AttentionStack::new(frame(2, 1), vec![0], 2, 1, vec![0.0; 2], Provenance::Raw).unwrap();
        assert!(matches!(fuse_attention(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn fuse_weights_relation_by_similarity() {
        // S = 0.5*1 + 0.5*0 = 0.5; pre-norm (0.5+0.5, 0.5+0, 0) -> (1, 0.5, 0)
        let a = stack(1, 1, 3, vec![0.5, 0.5, 0.0]);
        let r = stack(1, 1, 3, vec![1.0, 0.0, 0.0]);
        assert_eq!(fuse_attention(&a, &r).unwrap().data(), &[1.0, 0.5, 0.0]);
    }

    #[test]
    fn labels_from_annotation() {
        use crate::types::Triplet;
        let vocab = CategoryVocabulary::new(
            vec!["person".into(), "cup".into(), "table".into()],
            vec!["holding".into(), "on".into()],
        )
        .unwrap();
        let ann = UnlocalizedSceneGraph::new(
            "v",
            0,
            vec![Triplet {
                subject: 0,
                object: 1,
                predicate: 0,
            }],
        )
        .unwrap();
        let (y, p) = image_labels(&ann, &vocab).unwrap();
        assert_eq!(y.values(), &[true, true, false]);
        assert_eq!(p.values(), &[true, false]);
    }
}

//! The autoencoder: a four-layer stack whose first layer can be replaced by
//! a multi-dimensional self-attentive aggregation of checked-in POI
//! embeddings (the SAE path) and whose last layer can be augmented with an
//! RBF-gated neighbor influence vector (the NAD path). The four variants
//! toggle those two paths independently.

mod checkpoint;

pub use checkpoint::{checkpoint_dtype, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::geo::GeoKernel;
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

/// Which encoder/decoder paths are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Plain weighted stacked autoencoder: multi-hot encoder, plain decoder.
    Wae,
    /// Self-attentive encoder, plain decoder.
    SaeWae,
    /// Multi-hot encoder, neighbor-aware decoder.
    NadWae,
    /// Self-attentive encoder and neighbor-aware decoder.
    SaeNad,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Wae, Variant::SaeWae, Variant::NadWae, Variant::SaeNad];

    pub fn uses_attention(self) -> bool {
        matches!(self, Variant::SaeWae | Variant::SaeNad)
    }

    pub fn uses_neighbors(self) -> bool {
        matches!(self, Variant::NadWae | Variant::SaeNad)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Variant::Wae => 0,
            Variant::SaeWae => 1,
            Variant::NadWae => 2,
            Variant::SaeNad => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Variant::Wae),
            1 => Some(Variant::SaeWae),
            2 => Some(Variant::NadWae),
            3 => Some(Variant::SaeNad),
            _ => None,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "WAE" => Ok(Variant::Wae),
            "SAE-WAE" => Ok(Variant::SaeWae),
            "NAD-WAE" => Ok(Variant::NadWae),
            "SAE-NAD" => Ok(Variant::SaeNad),
            other => Err(Error::Validation(format!(
                "unknown variant {:?} (expected WAE, SAE-WAE, NAD-WAE or SAE-NAD)",
                other
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Wae => "WAE",
            Variant::SaeWae => "SAE-WAE",
            Variant::NadWae => "NAD-WAE",
            Variant::SaeNad => "SAE-NAD",
        };
        write!(f, "{s}")
    }
}

/// Layer sizes and variant selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    /// N, the POI count (input and output width).
    pub num_pois: usize,
    /// H1, the first hidden dimension.
    pub hidden1: usize,
    /// H, the bottleneck dimension.
    pub bottleneck: usize,
    /// d_a, the number of attention aspects.
    pub aspects: usize,
    pub variant: Variant,
    pub dropout_p: f64,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.num_pois == 0 || self.hidden1 == 0 || self.bottleneck == 0 || self.aspects == 0 {
            return Err(Error::Validation(
                "architecture dimensions must all be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Validation(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

/// Names of the learnable tensors, in their fixed serialization order.
pub const TENSOR_NAMES: [&str; 11] = [
    "w1", "w2", "w3", "w4", "b1", "b2", "b3", "b4", "wa", "wt", "bt",
];

/// All learnable tensors.
///
/// `b1` is only consumed by the multi-hot encoder path: the attention
/// variants replace the whole first layer, but the field stays allocated so
/// every variant shares one parameter record (and one checkpoint layout).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    /// H1×N POI embedding matrix (the first encoder layer).
    pub w1: Array2<F>,
    /// H×H1 bottleneck layer.
    pub w2: Array2<F>,
    /// H1×H first decoder layer.
    pub w3: Array2<F>,
    /// N×H1 output layer, doubling as the context embedding of the
    /// neighbor path.
    pub w4: Array2<F>,
    pub b1: Array1<F>,
    pub b2: Array1<F>,
    pub b3: Array1<F>,
    pub b4: Array1<F>,
    /// d_a×H1 attention scorer.
    pub wa: Array2<F>,
    /// d_a aggregation vector.
    pub wt: Array1<F>,
    /// H1 aggregation bias.
    pub bt: Array1<F>,
}

/// Gradients share the parameter layout exactly.
pub type Gradients<F> = ModelParams<F>;

fn glorot<F: Scalar>(rng: &mut ChaCha20Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2<F> {
    let bound = F::from_f64((6.0 / (fan_in + fan_out) as f64).sqrt());
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data length")
}

impl<F: Scalar> ModelParams<F> {
    /// Seeded symmetric-uniform initialization (bound sqrt(6 / (fan_in +
    /// fan_out))) for weights, zeros for biases. Tensors are drawn in the
    /// order W1, W2, W3, W4, Wa, wt so the layout is reproducible.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let (n, h1, h, d_a) = (arch.num_pois, arch.hidden1, arch.bottleneck, arch.aspects);
        let mut rng = stream_rng(seed, Stream::Init);
        let w1 = glorot(&mut rng, h1, n, n, h1);
        let w2 = glorot(&mut rng, h, h1, h1, h);
        let w3 = glorot(&mut rng, h1, h, h, h1);
        let w4 = glorot(&mut rng, n, h1, h1, n);
        let wa = glorot(&mut rng, d_a, h1, h1, d_a);
        let wt = glorot::<F>(&mut rng, 1, d_a, d_a, 1).row(0).to_owned();
        ModelParams {
            w1,
            w2,
            w3,
            w4,
            b1: Array1::zeros(h1),
            b2: Array1::zeros(h),
            b3: Array1::zeros(h1),
            b4: Array1::zeros(n),
            wa,
            wt,
            bt: Array1::zeros(h1),
        }
    }

    pub fn zeros(arch: &Architecture) -> Self {
        let (n, h1, h, d_a) = (arch.num_pois, arch.hidden1, arch.bottleneck, arch.aspects);
        ModelParams {
            w1: Array2::zeros((h1, n)),
            w2: Array2::zeros((h, h1)),
            w3: Array2::zeros((h1, h)),
            w4: Array2::zeros((n, h1)),
            b1: Array1::zeros(h1),
            b2: Array1::zeros(h),
            b3: Array1::zeros(h1),
            b4: Array1::zeros(n),
            wa: Array2::zeros((d_a, h1)),
            wt: Array1::zeros(d_a),
            bt: Array1::zeros(h1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            w1: Array2::zeros(self.w1.dim()),
            w2: Array2::zeros(self.w2.dim()),
            w3: Array2::zeros(self.w3.dim()),
            w4: Array2::zeros(self.w4.dim()),
            b1: Array1::zeros(self.b1.len()),
            b2: Array1::zeros(self.b2.len()),
            b3: Array1::zeros(self.b3.len()),
            b4: Array1::zeros(self.b4.len()),
            wa: Array2::zeros(self.wa.dim()),
            wt: Array1::zeros(self.wt.len()),
            bt: Array1::zeros(self.bt.len()),
        }
    }

    pub fn check_shapes(&self, arch: &Architecture) -> Result<()> {
        let (n, h1, h, d_a) = (arch.num_pois, arch.hidden1, arch.bottleneck, arch.aspects);
        let expect = [
            ("w1", self.w1.dim(), (h1, n)),
            ("w2", self.w2.dim(), (h, h1)),
            ("w3", self.w3.dim(), (h1, h)),
            ("w4", self.w4.dim(), (n, h1)),
            ("wa", self.wa.dim(), (d_a, h1)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Shape(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        let vecs = [
            ("b1", self.b1.len(), h1),
            ("b2", self.b2.len(), h),
            ("b3", self.b3.len(), h1),
            ("b4", self.b4.len(), n),
            ("wt", self.wt.len(), d_a),
            ("bt", self.bt.len(), h1),
        ];
        for (name, got, want) in vecs {
            if got != want {
                return Err(Error::Shape(format!("{name} has length {got}, expected {want}")));
            }
        }
        Ok(())
    }

    /// Flat element view of tensor `idx` (order of [`TENSOR_NAMES`]).
    pub fn flat(&self, idx: usize) -> &[F] {
        match idx {
            0 => self.w1.as_slice().expect("contiguous"),
            1 => self.w2.as_slice().expect("contiguous"),
            2 => self.w3.as_slice().expect("contiguous"),
            3 => self.w4.as_slice().expect("contiguous"),
            4 => self.b1.as_slice().expect("contiguous"),
            5 => self.b2.as_slice().expect("contiguous"),
            6 => self.b3.as_slice().expect("contiguous"),
            7 => self.b4.as_slice().expect("contiguous"),
            8 => self.wa.as_slice().expect("contiguous"),
            9 => self.wt.as_slice().expect("contiguous"),
            10 => self.bt.as_slice().expect("contiguous"),
            _ => panic!("tensor index out of range"),
        }
    }

    pub fn flat_mut(&mut self, idx: usize) -> &mut [F] {
        match idx {
            0 => self.w1.as_slice_mut().expect("contiguous"),
            1 => self.w2.as_slice_mut().expect("contiguous"),
            2 => self.w3.as_slice_mut().expect("contiguous"),
            3 => self.w4.as_slice_mut().expect("contiguous"),
            4 => self.b1.as_slice_mut().expect("contiguous"),
            5 => self.b2.as_slice_mut().expect("contiguous"),
            6 => self.b3.as_slice_mut().expect("contiguous"),
            7 => self.b4.as_slice_mut().expect("contiguous"),
            8 => self.wa.as_slice_mut().expect("contiguous"),
            9 => self.wt.as_slice_mut().expect("contiguous"),
            10 => self.bt.as_slice_mut().expect("contiguous"),
            _ => panic!("tensor index out of range"),
        }
    }

    /// Whether tensor `idx` participates in L2 regularization (weights yes,
    /// biases no).
    pub fn regularized(idx: usize) -> bool {
        matches!(idx, 0..=3 | 8 | 9)
    }

    pub fn num_tensors() -> usize {
        TENSOR_NAMES.len()
    }

    /// Errors with the tensor name if any entry is not finite.
    pub fn check_finite(&self) -> Result<()> {
        for idx in 0..Self::num_tensors() {
            if self.flat(idx).iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite values in {}",
                    TENSOR_NAMES[idx]
                )));
            }
        }
        Ok(())
    }
}

/// Inverted-dropout masks for the three internal activations. Entries are
/// either 0 or 1/(1-p), so the eval pass needs no rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<F> {
    pub z1: Array1<F>,
    pub z2: Array1<F>,
    pub z3: Array1<F>,
}

impl<F: Scalar> DropoutMasks<F> {
    pub fn sample(arch: &Architecture, rng: &mut ChaCha20Rng) -> Self {
        let p = arch.dropout_p;
        let scale = F::from_f64(1.0 / (1.0 - p));
        let mut draw = |len: usize| {
            Array1::from_iter((0..len).map(|_| {
                if rng.random::<f64>() < p {
                    F::zero()
                } else {
                    scale
                }
            }))
        };
        DropoutMasks {
            z1: draw(arch.hidden1),
            z2: draw(arch.bottleneck),
            z3: draw(arch.hidden1),
        }
    }
}

/// Attention internals kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace<F> {
    /// tanh(Wa · W1[L_u]), d_a×n.
    pub scores: Array2<F>,
    /// A_u: per-aspect softmax over the n checked-in POIs, d_a×n.
    pub weights: Array2<F>,
    /// Z1_u = A_u · W1[L_u]^T, d_a×H1.
    pub aspect_embedding: Array2<F>,
}

/// Everything one forward pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<F> {
    /// Deduplicated, sorted check-in indices actually used.
    pub l_u: Vec<u32>,
    /// Present for the attention variants.
    pub attention: Option<AttentionTrace<F>>,
    /// First hidden activation (before dropout).
    pub z1: Array1<F>,
    /// Bottleneck activation, the user hidden representation.
    pub z2: Array1<F>,
    /// First decoder activation.
    pub z3: Array1<F>,
    /// Neighbor influence vector (all zeros for the plain-decoder variants).
    pub p: Array1<F>,
    /// Reconstruction, entrywise in (0, 1).
    pub x_hat: Array1<F>,
    /// Masks applied during a training-mode pass.
    pub masks: Option<DropoutMasks<F>>,
}

fn tanh_arr<F: Scalar>(x: Array1<F>) -> Array1<F> {
    x.mapv(|v| v.tanh())
}

fn sigmoid<F: Scalar>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

/// Row-wise softmax with max subtraction.
fn softmax_rows<F: Scalar>(x: &Array2<F>) -> Array2<F> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn dedup_sorted(l_u: &[u32]) -> Vec<u32> {
    let mut out = l_u.to_vec();
    out.sort_unstable();
    out.dedup();
    out
}

/// W1[L_u]: the H1×n sub-matrix whose column j is column `l_u[j]` of W1.
/// Indices are taken as given; repeats produce repeated columns.
pub fn embed_slice<F: Scalar>(params: &ModelParams<F>, l_u: &[u32]) -> Result<Array2<F>> {
    if l_u.is_empty() {
        return Err(Error::Validation(
            "degenerate user: empty check-in set".into(),
        ));
    }
    let (h1, n) = params.w1.dim();
    let mut out = Array2::zeros((h1, l_u.len()));
    for (j, &idx) in l_u.iter().enumerate() {
        if idx as usize >= n {
            return Err(Error::Index {
                index: idx as usize,
                len: n,
            });
        }
        out.column_mut(j).assign(&params.w1.column(idx as usize));
    }
    Ok(out)
}

fn attention_trace<F: Scalar>(params: &ModelParams<F>, embeddings: &Array2<F>) -> AttentionTrace<F> {
    let scores = params.wa.dot(embeddings).mapv(|v| v.tanh());
    let weights = softmax_rows(&scores);
    let aspect_embedding = weights.dot(&embeddings.t());
    AttentionTrace {
        scores,
        weights,
        aspect_embedding,
    }
}

/// A_u = softmax(tanh(Wa · E)) with the softmax along the POI dimension,
/// independently per aspect row.
pub fn attention<F: Scalar>(params: &ModelParams<F>, embeddings: &Array2<F>) -> Array2<F> {
    attention_trace(params, embeddings).weights
}

fn encode_attention_z1<F: Scalar>(
    params: &ModelParams<F>,
    embeddings: &Array2<F>,
) -> (AttentionTrace<F>, Array1<F>) {
    let at = attention_trace(params, embeddings);
    let pre = at.aspect_embedding.t().dot(&params.wt) + &params.bt;
    let z1 = tanh_arr(pre);
    (at, z1)
}

/// Multi-hot first layer tanh(W1 x_u + b1); with binary x_u this is the sum
/// of the checked-in columns of W1. Accepts an empty list (z1 = tanh(b1)).
pub fn encode_multihot_z1<F: Scalar>(params: &ModelParams<F>, l_u: &[u32]) -> Result<Array1<F>> {
    let (_, n) = params.w1.dim();
    let mut pre = params.b1.clone();
    for &idx in l_u {
        if idx as usize >= n {
            return Err(Error::Index {
                index: idx as usize,
                len: n,
            });
        }
        pre += &params.w1.column(idx as usize);
    }
    Ok(tanh_arr(pre))
}

/// Eval-mode encoder: z1 per the variant, then the bottleneck
/// z2 = tanh(W2 z1 + b2). Returns z2 together with the partial trace.
pub fn encode<F: Scalar>(
    params: &ModelParams<F>,
    variant: Variant,
    l_u: &[u32],
) -> Result<(Array1<F>, Option<AttentionTrace<F>>, Array1<F>)> {
    let l = dedup_sorted(l_u);
    let (attention, z1) = if variant.uses_attention() {
        let e = embed_slice(params, &l)?;
        let (at, z1) = encode_attention_z1(params, &e);
        (Some(at), z1)
    } else {
        if l.is_empty() {
            return Err(Error::Validation(
                "degenerate user: empty check-in set".into(),
            ));
        }
        (None, encode_multihot_z1(params, &l)?)
    };
    let z2 = tanh_arr(params.w2.dot(&z1) + &params.b2);
    Ok((z2, attention, z1))
}

fn neighbor_influence_from<F: Scalar>(
    params: &ModelParams<F>,
    kernel: &GeoKernel,
    l_u: &[u32],
    embeddings: &Array2<F>,
) -> Array1<F> {
    let n = params.w4.nrows();
    let mut p = Array1::zeros(n);
    for (j, &lj) in l_u.iter().enumerate() {
        let col = embeddings.column(j);
        let (rows, vals) = kernel.row(lj as usize);
        for (&i, &v) in rows.iter().zip(vals) {
            let inner = params.w4.row(i as usize).dot(&col);
            p[i as usize] = p[i as usize] + F::from_f64(v) * inner;
        }
    }
    p
}

/// p_u: row sums of (W4 · W1[L_u]) ⊙ K[L_u]. Only rows with a stored kernel
/// entry against some checked-in POI are touched, so the cost scales with
/// the kernel's nonzeros, not with N·n.
pub fn neighbor_influence<F: Scalar>(
    params: &ModelParams<F>,
    kernel: &GeoKernel,
    l_u: &[u32],
) -> Result<Array1<F>> {
    if kernel.n() != params.w4.nrows() {
        return Err(Error::Shape(format!(
            "kernel is {}×{0} but the model has {} POIs",
            kernel.n(),
            params.w4.nrows()
        )));
    }
    let l = dedup_sorted(l_u);
    let e = embed_slice(params, &l)?;
    Ok(neighbor_influence_from(params, kernel, &l, &e))
}

/// Decoder: z3 = tanh(W3 z2 + b3), x_hat = sigmoid(W4 z3 + p + b4).
/// Passing p = 0 recovers the plain stacked-autoencoder decoder.
pub fn decode<F: Scalar>(
    params: &ModelParams<F>,
    z2: &Array1<F>,
    p: &Array1<F>,
) -> Result<(Array1<F>, Array1<F>)> {
    if p.len() != params.w4.nrows() {
        return Err(Error::Shape(format!(
            "p has length {}, expected {}",
            p.len(),
            params.w4.nrows()
        )));
    }
    let z3 = tanh_arr(params.w3.dot(z2) + &params.b3);
    let x_hat = (params.w4.dot(&z3) + p + &params.b4).mapv(sigmoid);
    Ok((z3, x_hat))
}

/// Full forward pass. `masks` carries the sampled inverted-dropout masks of
/// a training-mode pass; `None` is the eval pass. Masks apply to z1, z2 and
/// z3 only, never to the input or the output.
pub fn forward<F: Scalar>(
    params: &ModelParams<F>,
    arch: &Architecture,
    kernel: Option<&GeoKernel>,
    l_u: &[u32],
    masks: Option<&DropoutMasks<F>>,
) -> Result<ForwardTrace<F>> {
    params.check_shapes(arch)?;
    let l = dedup_sorted(l_u);
    if l.is_empty() {
        return Err(Error::Validation(
            "degenerate user: empty check-in set".into(),
        ));
    }
    let needs_embeddings = arch.variant.uses_attention() || arch.variant.uses_neighbors();
    let embeddings = if needs_embeddings {
        Some(embed_slice(params, &l)?)
    } else {
        None
    };

    let (attention, z1) = if arch.variant.uses_attention() {
        let (at, z1) = encode_attention_z1(params, embeddings.as_ref().unwrap());
        (Some(at), z1)
    } else {
        (None, encode_multihot_z1(params, &l)?)
    };

    let apply = |x: &Array1<F>, m: Option<&Array1<F>>| match m {
        Some(mask) => x * mask,
        None => x.clone(),
    };
    let z1d = apply(&z1, masks.map(|m| &m.z1));
    let z2 = tanh_arr(params.w2.dot(&z1d) + &params.b2);
    let z2d = apply(&z2, masks.map(|m| &m.z2));
    let z3 = tanh_arr(params.w3.dot(&z2d) + &params.b3);
    let z3d = apply(&z3, masks.map(|m| &m.z3));

    let p = if arch.variant.uses_neighbors() {
        let kernel = kernel.ok_or_else(|| {
            Error::Shape(format!("variant {} requires a geo kernel", arch.variant))
        })?;
        if kernel.n() != arch.num_pois {
            return Err(Error::Shape(format!(
                "kernel is {}×{0} but the model has {} POIs",
                kernel.n(),
                arch.num_pois
            )));
        }
        neighbor_influence_from(params, kernel, &l, embeddings.as_ref().unwrap())
    } else {
        Array1::zeros(arch.num_pois)
    };

    let x_hat = (params.w4.dot(&z3d) + &p + &params.b4).mapv(sigmoid);

    Ok(ForwardTrace {
        l_u: l,
        attention,
        z1,
        z2,
        z3,
        p,
        x_hat,
        masks: masks.cloned(),
    })
}

/// Training-mode forward: samples dropout masks from `rng` when
/// `dropout_p > 0` (drawing nothing otherwise, so a zero-dropout training
/// pass is bit-identical to eval).
pub fn forward_train<F: Scalar>(
    params: &ModelParams<F>,
    arch: &Architecture,
    kernel: Option<&GeoKernel>,
    l_u: &[u32],
    rng: &mut ChaCha20Rng,
) -> Result<ForwardTrace<F>> {
    let masks = if arch.dropout_p > 0.0 {
        Some(DropoutMasks::sample(arch, rng))
    } else {
        None
    };
    forward(params, arch, kernel, l_u, masks.as_ref())
}

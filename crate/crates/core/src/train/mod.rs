//! Confidence-weighted reconstruction objective, exact gradients for every
//! parameter (including both uses of W1 and both uses of W4), Adam updates,
//! and the seeded mini-batch loop. Gradient correctness is enforced by the
//! central-finite-difference checker in [`grad_check`].

mod gradcheck;

pub use gradcheck::{default_gradcheck_arch, grad_check, grad_check_detailed, GradCheckReport};

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;

use crate::data::{InteractionData, UserRow};
use crate::error::{Error, Result};
use crate::geo::GeoKernel;
use crate::model::{
    embed_slice, forward, Architecture, DropoutMasks, ForwardTrace, Gradients, ModelParams,
};
use crate::rng::{keyed_rng, stream_rng, Stream};
use crate::scalar::Scalar;

/// Optimizer and objective hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// L2 coefficient applied to W1..W4, Wa and wt (never to biases).
    pub lambda: f64,
    /// Confidence weighting parameters (used when building matrices).
    pub alpha: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub num_iterations: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Exponent on the confidence inside the squared residual: 2 keeps the
    /// weight inside the square (literal objective), 1 recovers the
    /// WRMF-style weighting.
    pub weight_exponent: u8,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lambda: 1e-3,
            alpha: 2.0,
            epsilon: 1e-5,
            batch_size: 256,
            num_iterations: 50,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_exponent: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Validation("learning_rate must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Validation("lambda must be non-negative".into()));
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0)
            || !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0)
        {
            return Err(Error::Validation("adam betas must lie in (0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be positive".into()));
        }
        if !(self.alpha > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Validation("alpha and epsilon must be positive".into()));
        }
        if !matches!(self.weight_exponent, 1 | 2) {
            return Err(Error::Validation(format!(
                "weight_exponent must be 1 or 2, got {}",
                self.weight_exponent
            )));
        }
        Ok(())
    }
}

/// One user's slice of a training batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchUser<'a> {
    /// Sorted distinct check-in indices (L_u).
    pub indices: &'a [u32],
    /// Confidence weights aligned with `indices`.
    pub confidences: &'a [f64],
}

impl<'a> From<&'a UserRow> for BatchUser<'a> {
    fn from(row: &'a UserRow) -> Self {
        BatchUser {
            indices: &row.indices,
            confidences: &row.confidences,
        }
    }
}

/// Sum over POIs of `(c_i (x_i - x_hat_i))^2`, the literal weighted square
/// error with the confidence inside the square.
pub fn weighted_loss<F: Scalar>(x: &Array1<F>, x_hat: &Array1<F>, c: &Array1<F>) -> Result<F> {
    weighted_loss_with(x, x_hat, c, 2)
}

/// Same with a selectable confidence exponent (1 = WRMF-style `c * r^2`).
pub fn weighted_loss_with<F: Scalar>(
    x: &Array1<F>,
    x_hat: &Array1<F>,
    c: &Array1<F>,
    weight_exponent: u8,
) -> Result<F> {
    if x.len() != x_hat.len() || x.len() != c.len() {
        return Err(Error::Shape(format!(
            "weighted_loss lengths differ: x {}, x_hat {}, c {}",
            x.len(),
            x_hat.len(),
            c.len()
        )));
    }
    let mut sum = F::zero();
    for ((&xi, &xh), &ci) in x.iter().zip(x_hat).zip(c) {
        if !xi.is_finite() || !xh.is_finite() || !ci.is_finite() {
            return Err(Error::Numeric("non-finite input to weighted_loss".into()));
        }
        let w = if weight_exponent == 1 { ci } else { ci * ci };
        let r = xi - xh;
        sum = sum + w * r * r;
    }
    Ok(sum)
}

/// Sparse per-user loss: unvisited POIs carry x = 0, c = 1.
pub(crate) fn user_loss<F: Scalar>(user: &BatchUser<'_>, x_hat: &Array1<F>, weight_exponent: u8) -> F {
    let mut sum = F::zero();
    let mut ptr = 0;
    for (i, &xh) in x_hat.iter().enumerate() {
        let (x, c) = if ptr < user.indices.len() && user.indices[ptr] as usize == i {
            let c = F::from_f64(user.confidences[ptr]);
            ptr += 1;
            (F::one(), c)
        } else {
            (F::zero(), F::one())
        };
        let w = if weight_exponent == 1 { c } else { c * c };
        let r = x - xh;
        sum = sum + w * r * r;
    }
    sum
}

/// Squared Frobenius/L2 norms of the regularized tensors (W1..W4, Wa, wt).
pub fn regularizer<F: Scalar>(params: &ModelParams<F>) -> F {
    let mut sum = F::zero();
    for idx in 0..ModelParams::<F>::num_tensors() {
        if ModelParams::<F>::regularized(idx) {
            for &v in params.flat(idx) {
                sum = sum + v * v;
            }
        }
    }
    sum
}

/// Full objective: summed reconstruction losses plus `lambda` times the
/// regularizer.
pub fn objective<F: Scalar>(reconstruction_sum: F, params: &ModelParams<F>, lambda: F) -> F {
    reconstruction_sum + lambda * regularizer(params)
}

fn add_outer<F: Scalar>(dst: &mut Array2<F>, col: &Array1<F>, row: &Array1<F>) {
    for (i, &c) in col.iter().enumerate() {
        if c != F::zero() {
            dst.row_mut(i).scaled_add(c, row);
        }
    }
}

fn outer<F: Scalar>(col: &Array1<F>, row: &Array1<F>) -> Array2<F> {
    let mut out = Array2::zeros((col.len(), row.len()));
    add_outer(&mut out, col, row);
    out
}

fn masked<F: Scalar>(x: &Array1<F>, mask: Option<&Array1<F>>) -> Array1<F> {
    match mask {
        Some(m) => x * m,
        None => x.clone(),
    }
}

/// Gradients of the batch objective with respect to every parameter.
///
/// Contributions flow through both uses of W1 (attention path and neighbor
/// path) and both uses of W4 (decoder weight and neighbor path). Traces must
/// come from a forward pass of these `params` with the same dropout masks.
pub fn backward<F: Scalar>(
    params: &ModelParams<F>,
    arch: &Architecture,
    kernel: Option<&GeoKernel>,
    batch: &[BatchUser<'_>],
    traces: &[ForwardTrace<F>],
    lambda: F,
    weight_exponent: u8,
) -> Result<Gradients<F>> {
    if batch.len() != traces.len() {
        return Err(Error::Shape(format!(
            "{} batch users but {} traces",
            batch.len(),
            traces.len()
        )));
    }
    params.check_shapes(arch)?;
    let n = arch.num_pois;
    let mut grads = params.zeros_like();
    let two = F::from_f64(2.0);

    for (user, trace) in batch.iter().zip(traces) {
        if trace.x_hat.len() != n {
            return Err(Error::Shape("trace width differs from POI count".into()));
        }
        let l = &trace.l_u;
        let masks = trace.masks.as_ref();

        // d objective / d y4 through the sigmoid: 2 c^w (x_hat - x) s'(y4)
        let mut g4 = Array1::zeros(n);
        let mut ptr = 0;
        for i in 0..n {
            let (x, c) = if ptr < l.len() && l[ptr] as usize == i {
                let c = F::from_f64(user.confidences[ptr]);
                ptr += 1;
                (F::one(), c)
            } else {
                (F::zero(), F::one())
            };
            let w = if weight_exponent == 1 { c } else { c * c };
            let xh = trace.x_hat[i];
            g4[i] = two * w * (xh - x) * xh * (F::one() - xh);
        }

        let z3d = masked(&trace.z3, masks.map(|m| &m.z3));
        let z2d = masked(&trace.z2, masks.map(|m| &m.z2));
        let z1d = masked(&trace.z1, masks.map(|m| &m.z1));

        grads.b4 += &g4;
        add_outer(&mut grads.w4, &g4, &z3d);
        let d_z3d = params.w4.t().dot(&g4);

        let needs_embeddings = arch.variant.uses_attention() || arch.variant.uses_neighbors();
        let embeddings = if needs_embeddings {
            Some(embed_slice(params, l)?)
        } else {
            None
        };
        let mut d_embeddings = embeddings
            .as_ref()
            .map(|e| Array2::<F>::zeros(e.dim()));

        if arch.variant.uses_neighbors() {
            let kernel = kernel.ok_or_else(|| {
                Error::Shape(format!("variant {} requires a geo kernel", arch.variant))
            })?;
            let e = embeddings.as_ref().unwrap();
            let d_e = d_embeddings.as_mut().unwrap();
            for (j, &lj) in l.iter().enumerate() {
                let (rows, vals) = kernel.row(lj as usize);
                for (&i, &v) in rows.iter().zip(vals) {
                    let scale = g4[i as usize] * F::from_f64(v);
                    if scale != F::zero() {
                        grads.w4.row_mut(i as usize).scaled_add(scale, &e.column(j));
                        d_e.column_mut(j).scaled_add(scale, &params.w4.row(i as usize));
                    }
                }
            }
        }

        // decoder stack
        let d_z3 = masked(&d_z3d, masks.map(|m| &m.z3));
        let g3 = &d_z3 * &trace.z3.mapv(|z| F::one() - z * z);
        grads.b3 += &g3;
        add_outer(&mut grads.w3, &g3, &z2d);
        let d_z2d = params.w3.t().dot(&g3);

        let d_z2 = masked(&d_z2d, masks.map(|m| &m.z2));
        let g2 = &d_z2 * &trace.z2.mapv(|z| F::one() - z * z);
        grads.b2 += &g2;
        add_outer(&mut grads.w2, &g2, &z1d);
        let d_z1d = params.w2.t().dot(&g2);

        let d_z1 = masked(&d_z1d, masks.map(|m| &m.z1));
        let g1 = &d_z1 * &trace.z1.mapv(|z| F::one() - z * z);

        if arch.variant.uses_attention() {
            let at = trace
                .attention
                .as_ref()
                .ok_or_else(|| Error::Shape("attention trace missing".into()))?;
            let e = embeddings.as_ref().unwrap();
            let d_e = d_embeddings.as_mut().unwrap();

            grads.bt += &g1;
            grads.wt += &at.aspect_embedding.dot(&g1);
            let d_aspect = outer(&params.wt, &g1); // d_a × H1
            let d_weights = d_aspect.dot(e); // d_a × n
            *d_e += &d_aspect.t().dot(&at.weights);

            // softmax rows, then tanh
            let mut d_scores = Array2::zeros(d_weights.dim());
            for (r, (a_row, d_row)) in at.weights.rows().into_iter().zip(d_weights.rows()).enumerate()
            {
                let inner = a_row.dot(&d_row);
                for (j, (&a, &d)) in a_row.iter().zip(d_row).enumerate() {
                    d_scores[[r, j]] = a * (d - inner);
                }
            }
            d_scores
                .zip_mut_with(&at.scores, |d, &t| *d = *d * (F::one() - t * t));

            grads.wa += &d_scores.dot(&e.t());
            *d_e += &params.wa.t().dot(&d_scores);
        } else {
            grads.b1 += &g1;
            for &lj in l {
                grads.w1.column_mut(lj as usize).scaled_add(F::one(), &g1);
            }
        }

        if let Some(d_e) = d_embeddings {
            for (j, &lj) in l.iter().enumerate() {
                grads
                    .w1
                    .column_mut(lj as usize)
                    .scaled_add(F::one(), &d_e.column(j));
            }
        }
    }

    // regularization touches every weight coordinate, batch-wide
    let two_lambda = two * lambda;
    if two_lambda != F::zero() {
        for idx in 0..ModelParams::<F>::num_tensors() {
            if ModelParams::<F>::regularized(idx) {
                let src: Vec<F> = params.flat(idx).to_vec();
                for (g, p) in grads.flat_mut(idx).iter_mut().zip(src) {
                    *g = *g + two_lambda * p;
                }
            }
        }
    }

    grads.check_finite().map_err(|e| match e {
        Error::Numeric(msg) => Error::Numeric(format!("gradient: {msg}")),
        other => other,
    })?;
    Ok(grads)
}

/// Adam moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub m: ModelParams<F>,
    pub v: ModelParams<F>,
    pub t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ModelParams<F>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// Standard Adam update with bias correction.
pub fn adam_step<F: Scalar>(
    state: &mut AdamState<F>,
    params: &mut ModelParams<F>,
    grads: &Gradients<F>,
    config: &TrainConfig,
) {
    state.t += 1;
    let b1 = F::from_f64(config.adam_beta1);
    let b2 = F::from_f64(config.adam_beta2);
    let one_minus_b1 = F::one() - b1;
    let one_minus_b2 = F::one() - b2;
    let corr1 = F::from_f64(1.0 - config.adam_beta1.powi(state.t as i32));
    let corr2 = F::from_f64(1.0 - config.adam_beta2.powi(state.t as i32));
    let lr = F::from_f64(config.learning_rate);
    let eps = F::from_f64(config.adam_eps);

    for idx in 0..ModelParams::<F>::num_tensors() {
        let g = grads.flat(idx);
        let m = state.m.flat_mut(idx);
        for (mk, &gk) in m.iter_mut().zip(g) {
            *mk = b1 * *mk + one_minus_b1 * gk;
        }
        let v = state.v.flat_mut(idx);
        for (vk, &gk) in v.iter_mut().zip(g) {
            *vk = b2 * *vk + one_minus_b2 * gk * gk;
        }
        let m = state.m.flat(idx);
        let v = state.v.flat(idx);
        for ((pk, &mk), &vk) in params.flat_mut(idx).iter_mut().zip(m).zip(v) {
            let m_hat = mk / corr1;
            let v_hat = vk / corr2;
            *pk = *pk - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Objective of one processed batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRecord {
    pub iteration: usize,
    pub batch: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub batch_objectives: Vec<BatchRecord>,
    pub epoch_mean_objective: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

/// Progress callbacks from the training loop.
pub enum TrainEvent<'a, F> {
    BatchDone {
        iteration: usize,
        batch: usize,
        objective: f64,
    },
    IterationDone {
        iteration: usize,
        mean_objective: f64,
        params: &'a ModelParams<F>,
    },
}

/// Seeded mini-batch training: per iteration the user order is reshuffled,
/// split into ceil(M / batch_size) batches (the trailing partial batch is
/// processed too), and each batch runs forward → objective → backward →
/// Adam. Deterministic given (seed, config, data, kernel).
pub fn train<F: Scalar>(
    config: &TrainConfig,
    arch: &Architecture,
    data: &InteractionData,
    kernel: Option<&GeoKernel>,
) -> Result<(ModelParams<F>, TrainHistory)> {
    train_with(config, arch, data, kernel, &mut |_| Ok(()))
}

pub fn train_with<F: Scalar>(
    config: &TrainConfig,
    arch: &Architecture,
    data: &InteractionData,
    kernel: Option<&GeoKernel>,
    on_event: &mut dyn FnMut(TrainEvent<'_, F>) -> Result<()>,
) -> Result<(ModelParams<F>, TrainHistory)> {
    config.validate()?;
    arch.validate()?;
    if data.num_pois != arch.num_pois {
        return Err(Error::Shape(format!(
            "data has {} POIs but the architecture expects {}",
            data.num_pois, arch.num_pois
        )));
    }
    if arch.variant.uses_neighbors() {
        match kernel {
            None => {
                return Err(Error::Shape(format!(
                    "variant {} requires a geo kernel",
                    arch.variant
                )))
            }
            Some(k) if k.n() != arch.num_pois => {
                return Err(Error::Shape(format!(
                    "kernel is {}×{0} but the model has {} POIs",
                    k.n(),
                    arch.num_pois
                )))
            }
            _ => {}
        }
    }

    let mut params = ModelParams::<F>::init(arch, config.seed);
    let mut adam = AdamState::new(&params);
    let mut history = TrainHistory::default();
    let lambda = F::from_f64(config.lambda);
    let mut dropout_rng = stream_rng(config.seed, Stream::Dropout);
    let num_users = data.num_users;

    for iteration in 0..config.num_iterations {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..num_users).collect();
        let mut shuffle_rng = keyed_rng(
            config.seed,
            Stream::Shuffle,
            &(iteration as u64).to_le_bytes(),
        );
        order.shuffle(&mut shuffle_rng);

        let mut iter_sum = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut users = Vec::with_capacity(chunk.len());
            let mut traces = Vec::with_capacity(chunk.len());
            let mut reconstruction = F::zero();
            for &u in chunk {
                let row = &data.rows[u];
                let user = BatchUser::from(row);
                let masks = if arch.dropout_p > 0.0 {
                    Some(DropoutMasks::sample(arch, &mut dropout_rng))
                } else {
                    None
                };
                let trace = forward(&params, arch, kernel, user.indices, masks.as_ref())?;
                reconstruction =
                    reconstruction + user_loss(&user, &trace.x_hat, config.weight_exponent);
                users.push(user);
                traces.push(trace);
            }
            let batch_objective = objective(reconstruction, &params, lambda).to_f64();
            if !batch_objective.is_finite() {
                return Err(Error::Diverged { iteration });
            }
            let grads = backward(
                &params,
                arch,
                kernel,
                &users,
                &traces,
                lambda,
                config.weight_exponent,
            )?;
            adam_step(&mut adam, &mut params, &grads, config);

            history.batch_objectives.push(BatchRecord {
                iteration,
                batch: batch_idx,
                objective: batch_objective,
            });
            iter_sum += batch_objective;
            batches += 1;
            on_event(TrainEvent::BatchDone {
                iteration,
                batch: batch_idx,
                objective: batch_objective,
            })?;
        }
        let mean = iter_sum / batches as f64;
        history.epoch_mean_objective.push(mean);
        history.epoch_seconds.push(started.elapsed().as_secs_f64());
        on_event(TrainEvent::IterationDone {
            iteration,
            mean_objective: mean,
            params: &params,
        })?;
    }

    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_matrices, confidence, parse_checkins, PoiCatalog};
    use crate::geo::{build_kernel, Metric};
    use crate::model::{Variant, TENSOR_NAMES};
    use ndarray::array;
    use std::io::Cursor;

    fn small_arch(variant: Variant) -> Architecture {
        Architecture {
            num_pois: 6,
            hidden1: 4,
            bottleneck: 3,
            aspects: 2,
            variant,
            dropout_p: 0.0,
        }
    }

    fn small_kernel() -> GeoKernel {
        let cat = PoiCatalog::new(
            (0..6).map(|i| format!("p{i}")).collect(),
            vec![
                (0.0, 0.0),
                (0.0, 0.05),
                (0.0, 0.1),
                (0.02, 0.02),
                (10.0, 10.0),
                (-10.0, -10.0),
            ],
        )
        .unwrap();
        build_kernel(&cat, 60.0, 0.1, Metric::EuclideanDegrees).unwrap()
    }

    #[test]
    fn perfect_reconstruction_has_zero_loss() {
        let x = array![1.0, 0.0, 1.0];
        let c = array![24.0, 1.0, 3.0];
        assert_eq!(weighted_loss(&x, &x.clone(), &c).unwrap(), 0.0);
    }

    #[test]
    fn single_entry_loss_is_literal() {
        // (c (x - x_hat))^2 = (2 * 0.5)^2 = 1
        let loss = weighted_loss(&array![1.0], &array![0.5], &array![2.0]).unwrap();
        assert_eq!(loss, 1.0);
        // WRMF-style exponent: c r^2 = 2 * 0.25 = 0.5
        let loss1 = weighted_loss_with(&array![1.0], &array![0.5], &array![2.0], 1).unwrap();
        assert_eq!(loss1, 0.5);
    }

    #[test]
    fn loss_is_quadratic_in_confidence_scale() {
        let x = array![1.0, 0.0, 1.0, 0.0];
        let xh = array![0.7, 0.2, 0.4, 0.9];
        let c = array![3.0, 1.5, 2.0, 1.0];
        let t = 2.5f64;
        let base = weighted_loss(&x, &xh, &c).unwrap();
        let scaled = weighted_loss(&x, &xh, &c.mapv(|v| v * t)).unwrap();
        assert!((scaled - t * t * base).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_non_finite() {
        let err = weighted_loss(&array![1.0], &array![f64::NAN], &array![1.0]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn sparse_and_dense_losses_agree() {
        let arch = small_arch(Variant::SaeNad);
        let params = ModelParams::<f64>::init(&arch, 3);
        let kernel = small_kernel();
        let indices = vec![1u32, 4];
        let confidences = vec![confidence(2, 2.0, 1e-5), confidence(1, 2.0, 1e-5)];
        let user = BatchUser {
            indices: &indices,
            confidences: &confidences,
        };
        let trace = forward(&params, &arch, Some(&kernel), &indices, None).unwrap();
        let mut x = Array1::zeros(6);
        let mut c = Array1::from_elem(6, 1.0);
        x[1] = 1.0;
        x[4] = 1.0;
        c[1] = confidences[0];
        c[4] = confidences[1];
        let dense = weighted_loss(&x, &trace.x_hat, &c).unwrap();
        let sparse = user_loss(&user, &trace.x_hat, 2);
        assert!((dense - sparse).abs() < 1e-12);
    }

    #[test]
    fn objective_reduces_to_loss_without_lambda() {
        let arch = small_arch(Variant::Wae);
        let params = ModelParams::<f64>::init(&arch, 1);
        assert_eq!(objective(3.5, &params, 0.0), 3.5);
        let zeros = ModelParams::<f64>::zeros(&arch);
        assert_eq!(objective(3.5, &zeros, 0.7), 3.5);
    }

    #[test]
    fn regularizer_matches_hand_frobenius_sum() {
        let arch = small_arch(Variant::Wae);
        let mut params = ModelParams::<f64>::zeros(&arch);
        params.w1[[0, 0]] = 2.0; // ||W1||_F^2 = 4
        assert_eq!(regularizer(&params), 4.0);
        assert_eq!(objective(0.0, &params, 0.5), 2.0);
        // biases are excluded
        params.b1[0] = 100.0;
        params.bt[1] = -40.0;
        params.b4[3] = 7.0;
        assert_eq!(regularizer(&params), 4.0);
    }

    #[test]
    fn exact_reconstruction_zeroes_all_gradients() {
        let arch = small_arch(Variant::SaeNad);
        let params = ModelParams::<f64>::init(&arch, 9);
        let kernel = small_kernel();
        let indices = vec![0u32, 2];
        let confidences = vec![5.0, 5.0];
        let user = BatchUser {
            indices: &indices,
            confidences: &confidences,
        };
        let mut trace = forward(&params, &arch, Some(&kernel), &indices, None).unwrap();
        // Force x_hat to the binary target exactly: every residual vanishes,
        // and with lambda = 0 nothing else contributes.
        trace.x_hat.fill(0.0);
        trace.x_hat[0] = 1.0;
        trace.x_hat[2] = 1.0;
        let grads = backward(&params, &arch, Some(&kernel), &[user], &[trace], 0.0, 2).unwrap();
        for idx in 0..ModelParams::<f64>::num_tensors() {
            assert!(
                grads.flat(idx).iter().all(|&g| g == 0.0),
                "{} not zero",
                TENSOR_NAMES[idx]
            );
        }
    }

    #[test]
    fn untouched_poi_column_sees_only_regularization() {
        let arch = small_arch(Variant::SaeNad);
        let params = ModelParams::<f64>::init(&arch, 10);
        let kernel = small_kernel();
        let indices = vec![0u32, 1];
        let confidences = vec![2.0, 3.0];
        let user = BatchUser {
            indices: &indices,
            confidences: &confidences,
        };
        let trace = forward(&params, &arch, Some(&kernel), &indices, None).unwrap();
        let lambda = 0.25;
        let grads =
            backward(&params, &arch, Some(&kernel), &[user], &[trace], lambda, 2).unwrap();
        // POI 5 is never checked in: its W1 column gradient is exactly
        // 2 lambda W1[:, 5].
        for r in 0..arch.hidden1 {
            assert_eq!(grads.w1[[r, 5]], 2.0 * lambda * params.w1[[r, 5]]);
        }
    }

    #[test]
    fn adam_leaves_params_alone_for_zero_gradients() {
        let arch = small_arch(Variant::Wae);
        let mut params = ModelParams::<f64>::init(&arch, 2);
        let before = params.clone();
        let grads = params.zeros_like();
        let mut state = AdamState::new(&params);
        adam_step(&mut state, &mut params, &grads, &TrainConfig::default());
        assert_eq!(params, before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_scalar_step_matches_hand_computation() {
        // theta = 0, g = 1, defaults: bias-corrected first step is
        // -lr / (1 + eps'), frozen from an independent evaluation.
        let arch = Architecture {
            num_pois: 1,
            hidden1: 1,
            bottleneck: 1,
            aspects: 1,
            variant: Variant::Wae,
            dropout_p: 0.0,
        };
        let mut params = ModelParams::<f64>::zeros(&arch);
        let mut grads = params.zeros_like();
        grads.w1[[0, 0]] = 1.0;
        let mut state = AdamState::new(&params);
        adam_step(&mut state, &mut params, &grads, &TrainConfig::default());
        assert!(
            (params.w1[[0, 0]] - (-0.000999999990000001)).abs() < 1e-12,
            "{}",
            params.w1[[0, 0]]
        );
    }

    #[test]
    fn adam_state_evolves_between_identical_calls() {
        let arch = small_arch(Variant::Wae);
        let mut params = ModelParams::<f64>::zeros(&arch);
        let mut grads = params.zeros_like();
        grads.w1[[0, 0]] = 1.0;
        let mut state = AdamState::new(&params);
        let config = TrainConfig::default();
        adam_step(&mut state, &mut params, &grads, &config);
        let after_one = params.w1[[0, 0]];
        adam_step(&mut state, &mut params, &grads, &config);
        let step_two = params.w1[[0, 0]] - after_one;
        assert_ne!(step_two, after_one);
    }

    fn synthetic_data(users: usize, pois: usize, seed: u64) -> InteractionData {
        use rand::Rng;
        let mut rng = stream_rng(seed, Stream::Synth);
        let coords: String = (0..pois)
            .map(|i| format!("p{}\t{:.4}\t{:.4}\n", i, (i % 50) as f64 * 0.01, 0.0))
            .collect();
        let mut checkins = String::new();
        for u in 0..users {
            let visits = rng.random_range(3..=6);
            for t in 0..visits {
                let p = rng.random_range(0..pois);
                checkins.push_str(&format!("u{}\tp{}\t{}\n", u, p, t));
            }
            // guarantee at least two distinct POIs
            checkins.push_str(&format!("u{}\tp{}\t9\n", u, u % pois));
            checkins.push_str(&format!("u{}\tp{}\t10\n", u, (u + 1) % pois));
        }
        let log = parse_checkins(Cursor::new(checkins), Cursor::new(coords)).unwrap();
        build_matrices(&log, 2.0, 1e-5).unwrap()
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let arch = small_arch(Variant::Wae);
        let data = synthetic_data(4, 6, 1);
        let config = TrainConfig {
            num_iterations: 0,
            ..TrainConfig::default()
        };
        let (params, history) = train::<f64>(&config, &arch, &data, None).unwrap();
        assert_eq!(params, ModelParams::<f64>::init(&arch, config.seed));
        assert!(history.batch_objectives.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let arch = Architecture {
            dropout_p: 0.3,
            ..small_arch(Variant::SaeNad)
        };
        let data = synthetic_data(5, 6, 2);
        let kernel = small_kernel();
        let config = TrainConfig {
            num_iterations: 4,
            batch_size: 2,
            seed: 77,
            ..TrainConfig::default()
        };
        let (p1, h1) = train::<f64>(&config, &arch, &data, Some(&kernel)).unwrap();
        let (p2, h2) = train::<f64>(&config, &arch, &data, Some(&kernel)).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1.batch_objectives, h2.batch_objectives);
    }

    #[test]
    fn objective_decreases_on_a_small_instance() {
        let arch = Architecture {
            num_pois: 50,
            hidden1: 16,
            bottleneck: 8,
            aspects: 4,
            variant: Variant::Wae,
            dropout_p: 0.0,
        };
        let data = synthetic_data(20, 50, 3);
        let config = TrainConfig {
            num_iterations: 300,
            batch_size: 256,
            seed: 5,
            ..TrainConfig::default()
        };
        let (_, history) = train::<f64>(&config, &arch, &data, None).unwrap();
        let first = history.epoch_mean_objective[0];
        let last = *history.epoch_mean_objective.last().unwrap();
        assert!(
            last < first,
            "objective did not decrease: {first} -> {last}"
        );
    }

    #[test]
    fn partial_trailing_batch_is_processed() {
        let arch = small_arch(Variant::Wae);
        let data = synthetic_data(5, 6, 4);
        let config = TrainConfig {
            num_iterations: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let (_, history) = train::<f64>(&config, &arch, &data, None).unwrap();
        // 5 users in batches of 2: three batches, the last holding one user.
        assert_eq!(history.batch_objectives.len(), 3);
    }

    #[test]
    fn non_finite_objective_reports_divergence() {
        // An enormous alpha overflows the confidence weights to infinity,
        // which must surface as a divergence error, not NaN propagation.
        let coords = "p0\t0.0\t0.0\np1\t0.0\t0.1\n";
        let checkins = "u0\tp0\t1\nu0\tp1\t2\nu1\tp1\t3\nu1\tp0\t4\n";
        let log = parse_checkins(Cursor::new(checkins), Cursor::new(coords)).unwrap();
        let data = build_matrices(&log, 1e308, 1e-5).unwrap();
        let arch = Architecture {
            num_pois: 2,
            hidden1: 2,
            bottleneck: 2,
            aspects: 1,
            variant: Variant::Wae,
            dropout_p: 0.0,
        };
        let config = TrainConfig {
            num_iterations: 1,
            ..TrainConfig::default()
        };
        let err = train::<f64>(&config, &arch, &data, None).unwrap_err();
        assert!(matches!(err, Error::Diverged { iteration: 0 }), "{err}");
    }

    #[test]
    fn f32_training_runs() {
        let arch = small_arch(Variant::SaeNad);
        let data = synthetic_data(4, 6, 6);
        let kernel = small_kernel();
        let config = TrainConfig {
            num_iterations: 2,
            ..TrainConfig::default()
        };
        let (params, _) = train::<f32>(&config, &arch, &data, Some(&kernel)).unwrap();
        params.check_finite().unwrap();
    }
}

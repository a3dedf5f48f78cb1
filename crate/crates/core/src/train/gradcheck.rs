//! Central-finite-difference verification of the analytic gradients. Runs a
//! seeded random instance in double precision with dropout off and compares
//! every parameter coordinate (or a seeded subsample per tensor) against
//! (f(θ+h) - f(θ-h)) / 2h.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{backward, objective, user_loss, BatchUser};
use crate::data::{confidence, PoiCatalog};
use crate::error::Result;
use crate::geo::{build_kernel, Metric};
use crate::model::{forward, Architecture, ModelParams, Variant, TENSOR_NAMES};
use crate::rng::{keyed_rng, stream_rng, Stream};

const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: &'static str,
    pub coords_checked: usize,
}

/// The 20-POI instance the checker runs on by default.
pub fn default_gradcheck_arch(variant: Variant) -> Architecture {
    Architecture {
        num_pois: 20,
        hidden1: 8,
        bottleneck: 4,
        aspects: 3,
        variant,
        dropout_p: 0.0,
    }
}

/// Max relative error between analytic and numeric gradients over the
/// sampled coordinates. `sample_size` caps the coordinates checked per
/// tensor (the subsample is seeded).
pub fn grad_check(arch: &Architecture, sample_size: usize, seed: u64) -> Result<f64> {
    Ok(grad_check_detailed(arch, sample_size, seed, None)?.max_rel_error)
}

/// Like [`grad_check`], reporting the worst tensor. `corruption`, when set,
/// perturbs one analytic gradient coordinate by that relative amount before
/// comparing; the checker must flag it (used to prove the checker's own
/// sensitivity).
pub fn grad_check_detailed(
    arch: &Architecture,
    sample_size: usize,
    seed: u64,
    corruption: Option<f64>,
) -> Result<GradCheckReport> {
    grad_check_instance(arch, sample_size, seed, 2, corruption)
}

pub(crate) fn grad_check_instance(
    arch: &Architecture,
    sample_size: usize,
    seed: u64,
    weight_exponent: u8,
    corruption: Option<f64>,
) -> Result<GradCheckReport> {
    let arch = Architecture {
        dropout_p: 0.0,
        ..*arch
    };
    arch.validate()?;
    let n = arch.num_pois;
    let mut rng = stream_rng(seed, Stream::GradCheck);

    // Random check-in rows for 5 users: 2..=6 distinct POIs each, with
    // frequencies 1..=4 mapped through the confidence function. A mild alpha
    // keeps the objective small; the difference quotient's cancellation
    // noise scales with the objective's magnitude, so large confidence
    // weights would drown the relative error of small-gradient coordinates.
    let num_users = 5;
    let mut rows: Vec<(Vec<u32>, Vec<f64>)> = Vec::with_capacity(num_users);
    for _ in 0..num_users {
        let k = rng.random_range(2..=6usize.min(n));
        let mut all: Vec<u32> = (0..n as u32).collect();
        all.shuffle(&mut rng);
        let mut indices: Vec<u32> = all[..k].to_vec();
        indices.sort_unstable();
        let confidences = indices
            .iter()
            .map(|_| confidence(rng.random_range(1..=4u32), 0.25, 1e-5))
            .collect();
        rows.push((indices, confidences));
    }

    // Random catalog in a tight box so the kernel has plenty of neighbors.
    let catalog = PoiCatalog::new(
        (0..n).map(|i| format!("p{i}")).collect(),
        (0..n)
            .map(|_| (rng.random_range(0.0..0.25), rng.random_range(0.0..0.25)))
            .collect(),
    )?;
    let kernel = build_kernel(&catalog, 60.0, 0.1, Metric::EuclideanDegrees)?;

    let params = ModelParams::<f64>::init(&arch, seed);

    let batch: Vec<BatchUser<'_>> = rows
        .iter()
        .map(|(indices, confidences)| BatchUser {
            indices,
            confidences,
        })
        .collect();

    // The finite-difference sweep runs with lambda = 0: the regularizer is
    // linear in each coordinate, so near-zero weights would otherwise have
    // gradients of order 2*lambda*theta, far below the difference quotient's
    // cancellation noise at this objective scale. Its gradient is instead
    // verified exactly below, as a shift of 2*lambda*theta per coordinate.
    let eval_objective = |p: &ModelParams<f64>| -> Result<f64> {
        let mut recon = 0.0;
        for user in &batch {
            let trace = forward(p, &arch, Some(&kernel), user.indices, None)?;
            recon += user_loss(user, &trace.x_hat, weight_exponent);
        }
        Ok(objective(recon, p, 0.0))
    };

    let traces: Vec<_> = batch
        .iter()
        .map(|user| forward(&params, &arch, Some(&kernel), user.indices, None))
        .collect::<Result<_>>()?;
    let mut analytic = backward(
        &params,
        &arch,
        Some(&kernel),
        &batch,
        &traces,
        0.0,
        weight_exponent,
    )?;

    let mut max_rel_error = 0.0f64;
    let mut worst_tensor = TENSOR_NAMES[0];
    let mut coords_checked = 0usize;

    // Regularizer gradient, checked algebraically against the lambda = 0
    // gradients: adding lambda must shift every regularized coordinate by
    // exactly 2*lambda*theta and leave biases untouched.
    let lambda = 1e-3;
    let with_reg = backward(
        &params,
        &arch,
        Some(&kernel),
        &batch,
        &traces,
        lambda,
        weight_exponent,
    )?;
    for idx in 0..ModelParams::<f64>::num_tensors() {
        let base = analytic.flat(idx);
        let got = with_reg.flat(idx);
        if ModelParams::<f64>::regularized(idx) {
            for ((&g0, &g1), &theta) in base.iter().zip(got).zip(params.flat(idx)) {
                let expect = g0 + 2.0 * lambda * theta;
                let rel = (g1 - expect).abs() / g1.abs().max(expect.abs()).max(1e-8);
                if rel > max_rel_error {
                    max_rel_error = rel;
                    worst_tensor = TENSOR_NAMES[idx];
                }
            }
        } else if base != got {
            max_rel_error = f64::INFINITY;
            worst_tensor = TENSOR_NAMES[idx];
        }
    }

    if let Some(bump) = corruption {
        let slot = &mut analytic.flat_mut(1)[0];
        *slot = *slot * (1.0 + bump) + bump;
    }

    let mut work = params.clone();
    for idx in 0..ModelParams::<f64>::num_tensors() {
        let len = work.flat(idx).len();
        let selected: Vec<usize> = if len <= sample_size {
            (0..len).collect()
        } else {
            let mut all: Vec<usize> = (0..len).collect();
            let mut sample_rng = keyed_rng(seed, Stream::GradCheck, TENSOR_NAMES[idx].as_bytes());
            all.shuffle(&mut sample_rng);
            let mut chosen = all[..sample_size].to_vec();
            chosen.sort_unstable();
            chosen
        };
        for k in selected {
            let original = work.flat(idx)[k];
            work.flat_mut(idx)[k] = original + FD_STEP;
            let f_plus = eval_objective(&work)?;
            work.flat_mut(idx)[k] = original - FD_STEP;
            let f_minus = eval_objective(&work)?;
            work.flat_mut(idx)[k] = original;

            let numeric = (f_plus - f_minus) / (2.0 * FD_STEP);
            let ga = analytic.flat(idx)[k];
            let rel = (ga - numeric).abs() / ga.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel_error {
                max_rel_error = rel;
                worst_tensor = TENSOR_NAMES[idx];
            }
            coords_checked += 1;
        }
    }

    Ok(GradCheckReport {
        max_rel_error,
        worst_tensor,
        coords_checked,
    })
}

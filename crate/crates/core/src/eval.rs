//! Top-k recommendation (training POIs excluded, ties broken by ascending
//! index) and Precision@k / Recall@k / MAP@k aggregation over users.

use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::InteractionData;
use crate::error::{Error, Result};
use crate::geo::GeoKernel;
use crate::model::{forward, Architecture, ModelParams};
use crate::scalar::Scalar;

/// Ranked recommendation list for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation<F> {
    /// POI indices, best first; never intersects the visited set.
    pub items: Vec<u32>,
    /// Matching scores, non-increasing.
    pub scores: Vec<F>,
}

/// The k unvisited POIs with the highest scores. Ties are broken by
/// ascending POI index so rankings are deterministic across runs.
pub fn recommend_topk<F: Scalar>(
    x_hat: &Array1<F>,
    visited: &[u32],
    k: usize,
) -> Result<Recommendation<F>> {
    let n = x_hat.len();
    let mut is_visited = vec![false; n];
    for &v in visited {
        if (v as usize) < n {
            is_visited[v as usize] = true;
        }
    }
    let available = is_visited.iter().filter(|&&v| !v).count();
    if k == 0 || k > available {
        return Err(Error::Cutoff { k, available });
    }
    let mut candidates: Vec<(u32, F)> = (0..n as u32)
        .filter(|&i| !is_visited[i as usize])
        .map(|i| (i, x_hat[i as usize]))
        .collect();
    candidates.sort_unstable_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    candidates.truncate(k);
    Ok(Recommendation {
        items: candidates.iter().map(|&(i, _)| i).collect(),
        scores: candidates.iter().map(|&(_, s)| s).collect(),
    })
}

/// Denominator used for average precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapDenominator {
    /// |T_u|, exactly as the metric is defined here (even when k < |T_u|).
    #[default]
    TestSetSize,
    /// min(k, |T_u|), the common truncated variant.
    Truncated,
}

/// Precision, recall, and average precision of one ranked list against the
/// user's held-out set. Returns `None` when the held-out set is empty (the
/// user is excluded from means).
pub fn metrics_for_user(ranked: &[u32], test_set: &[u32]) -> Option<(f64, f64, f64)> {
    metrics_for_user_with(ranked, test_set, MapDenominator::TestSetSize)
}

pub fn metrics_for_user_with(
    ranked: &[u32],
    test_set: &[u32],
    denominator: MapDenominator,
) -> Option<(f64, f64, f64)> {
    if test_set.is_empty() {
        return None;
    }
    let k = ranked.len();
    let mut hits = 0usize;
    let mut ap_sum = 0.0;
    for (j, item) in ranked.iter().enumerate() {
        if test_set.binary_search(item).is_ok() {
            hits += 1;
            // precision of the length-(j+1) prefix, counted at relevant ranks
            ap_sum += hits as f64 / (j + 1) as f64;
        }
    }
    let precision = hits as f64 / k as f64;
    let recall = hits as f64 / test_set.len() as f64;
    let denom = match denominator {
        MapDenominator::TestSetSize => test_set.len(),
        MapDenominator::Truncated => k.min(test_set.len()),
    };
    let ap = ap_sum / denom as f64;
    Some((precision, recall, ap))
}

/// One row of the metric table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportRow {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub map: f64,
}

/// Mean Precision/Recall/MAP per cutoff over all users with a non-empty
/// held-out set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub users_evaluated: usize,
}

impl EvalReport {
    /// Flat text table: `k<TAB>precision<TAB>recall<TAB>map`, one cutoff per
    /// line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("k\tprecision\trecall\tmap\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                row.k, row.precision, row.recall, row.map
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Evaluation knobs beyond the cutoff list.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub map_denominator: MapDenominator,
}

/// Runs the eval-mode forward pass per user, ranks at the largest cutoff,
/// and derives every smaller cutoff from prefixes of the same ranking.
pub fn evaluate<F: Scalar>(
    params: &ModelParams<F>,
    arch: &Architecture,
    kernel: Option<&GeoKernel>,
    data: &InteractionData,
    test_sets: &[Vec<u32>],
    cutoffs: &[usize],
) -> Result<EvalReport> {
    evaluate_with(params, arch, kernel, data, test_sets, cutoffs, EvalOptions::default())
}

pub fn evaluate_with<F: Scalar>(
    params: &ModelParams<F>,
    arch: &Architecture,
    kernel: Option<&GeoKernel>,
    data: &InteractionData,
    test_sets: &[Vec<u32>],
    cutoffs: &[usize],
    options: EvalOptions,
) -> Result<EvalReport> {
    if cutoffs.is_empty() {
        return Err(Error::Validation("no evaluation cutoffs given".into()));
    }
    if test_sets.len() != data.num_users {
        return Err(Error::Shape(format!(
            "{} test sets for {} users",
            test_sets.len(),
            data.num_users
        )));
    }
    params.check_shapes(arch)?;
    if data.num_pois != arch.num_pois {
        return Err(Error::Shape(format!(
            "data has {} POIs but the model expects {}",
            data.num_pois, arch.num_pois
        )));
    }
    let k_max = *cutoffs.iter().max().unwrap();

    // Per-user metrics in parallel; the reduction below walks users in index
    // order so results do not depend on scheduling.
    let per_user: Vec<Option<Vec<(f64, f64, f64)>>> = (0..data.num_users)
        .into_par_iter()
        .map(|u| -> Result<Option<Vec<(f64, f64, f64)>>> {
            let held_out = &test_sets[u];
            if held_out.is_empty() {
                return Ok(None);
            }
            let visited = data.checked_in(u);
            let trace = forward(params, arch, kernel, visited, None)?;
            let ranked = recommend_topk(&trace.x_hat, visited, k_max)?;
            let rows = cutoffs
                .iter()
                .map(|&k| {
                    metrics_for_user_with(&ranked.items[..k], held_out, options.map_denominator)
                        .expect("held-out set checked non-empty")
                })
                .collect();
            Ok(Some(rows))
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![(0.0f64, 0.0f64, 0.0f64); cutoffs.len()];
    let mut users_evaluated = 0usize;
    for rows in per_user.into_iter().flatten() {
        users_evaluated += 1;
        for (slot, (p, r, ap)) in sums.iter_mut().zip(rows) {
            slot.0 += p;
            slot.1 += r;
            slot.2 += ap;
        }
    }
    if users_evaluated == 0 {
        return Err(Error::Validation(
            "no users with a non-empty held-out set".into(),
        ));
    }
    let m = users_evaluated as f64;
    let rows = cutoffs
        .iter()
        .zip(sums)
        .map(|(&k, (p, r, ap))| ReportRow {
            k,
            precision: p / m,
            recall: r / m,
            map: ap / m,
        })
        .collect();
    Ok(EvalReport {
        rows,
        users_evaluated,
    })
}

//! Pairwise RBF geographic similarity. The kernel K holds
//! `exp(-gamma * d(i, j)^2)` for every POI pair whose value clears the
//! sparsity threshold, with self-similarity forced to zero. Construction is
//! O(N^2) by default; a uniform lat/lon grid index can prune pairs whose
//! minimum possible distance already falls below the threshold.

use std::collections::HashMap;
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::binio::{Reader, Writer};
use crate::data::PoiCatalog;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SNGK";
const VERSION: u32 = 1;

/// Mean earth radius in km.
const EARTH_RADIUS_KM: f64 = 6371.0088;
const KM_PER_DEG_LAT: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// Distance function fed into the RBF.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Euclidean distance over raw (lat, lon) degrees.
    EuclideanDegrees,
    /// Great-circle distance in kilometres.
    HaversineKm,
}

impl Metric {
    pub fn distance(self, a: (f64, f64), b: (f64, f64)) -> f64 {
        match self {
            Metric::EuclideanDegrees => {
                let dlat = a.0 - b.0;
                let dlon = a.1 - b.1;
                (dlat * dlat + dlon * dlon).sqrt()
            }
            Metric::HaversineKm => haversine_km(a, b),
        }
    }

    /// d^2 without the lossy sqrt/re-square round trip for the Euclidean
    /// case, so kernel values match a direct transcription bit for bit.
    pub fn squared_distance(self, a: (f64, f64), b: (f64, f64)) -> f64 {
        match self {
            Metric::EuclideanDegrees => {
                let dlat = a.0 - b.0;
                let dlon = a.1 - b.1;
                dlat * dlat + dlon * dlon
            }
            Metric::HaversineKm => {
                let d = haversine_km(a, b);
                d * d
            }
        }
    }

    /// Default geographic correlation level for this metric. 60 matches a
    /// degree-scaled kernel; the km-scaled value keeps the same ~22 km
    /// cutoff radius at the 0.1 threshold.
    pub fn default_gamma(self) -> f64 {
        match self {
            Metric::EuclideanDegrees => 60.0,
            Metric::HaversineKm => 0.005,
        }
    }

    fn code(self) -> u8 {
        match self {
            Metric::EuclideanDegrees => 0,
            Metric::HaversineKm => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Metric::EuclideanDegrees),
            1 => Some(Metric::HaversineKm),
            _ => None,
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean-degrees" => Ok(Metric::EuclideanDegrees),
            "haversine-km" => Ok(Metric::HaversineKm),
            other => Err(Error::Validation(format!(
                "unknown metric {:?} (expected euclidean-degrees or haversine-km)",
                other
            ))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::EuclideanDegrees => write!(f, "euclidean-degrees"),
            Metric::HaversineKm => write!(f, "haversine-km"),
        }
    }
}

fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let lat1 = a.0.to_radians();
    let lat2 = b.0.to_radians();
    let dlat = lat2 - lat1;
    let dlon = (b.1 - a.1).to_radians();
    let s = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * s.sqrt().min(1.0).asin()
}

/// Gaussian RBF similarity `exp(-gamma * d^2)` of two coordinate pairs.
/// No thresholding happens at this level.
pub fn rbf(coord_i: (f64, f64), coord_j: (f64, f64), gamma: f64, metric: Metric) -> Result<f64> {
    if !(coord_i.0.is_finite() && coord_i.1.is_finite() && coord_j.0.is_finite() && coord_j.1.is_finite())
    {
        return Err(Error::Validation("non-finite coordinate".into()));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Validation(format!("gamma must be positive, got {gamma}")));
    }
    Ok((-gamma * metric.squared_distance(coord_i, coord_j)).exp())
}

/// How to enumerate candidate pairs during construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelStrategy {
    /// Evaluate all N^2 pairs.
    #[default]
    BruteForce,
    /// Uniform lat/lon grid; only pairs that can possibly clear the
    /// threshold are evaluated.
    Grid,
}

/// Sparse symmetric N×N RBF kernel with a zero diagonal, stored row-wise
/// (CSR). Every stored value lies in [threshold, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GeoKernel {
    n: usize,
    gamma: f64,
    threshold: f64,
    metric: Metric,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl GeoKernel {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Nonzeros of row i as parallel (column, value) slices, columns sorted.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    /// Stored value at (i, j), or 0 for dropped / diagonal entries.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// A kernel with no stored entries (every influence is 0). Useful for
    /// forcing the neighbor path off while keeping shapes consistent.
    pub fn empty(n: usize, gamma: f64, threshold: f64, metric: Metric) -> Self {
        GeoKernel {
            n,
            gamma,
            threshold,
            metric,
            indptr: vec![0; n + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// The N×n column slice K[L_u]: column j of the view is kernel column
    /// `l_u[j]` (equal to row `l_u[j]` by symmetry). Repeated indices yield
    /// repeated columns.
    pub fn slice_columns<'a>(&'a self, l_u: &[u32]) -> Result<KernelColumns<'a>> {
        for &i in l_u {
            if i as usize >= self.n {
                return Err(Error::Index {
                    index: i as usize,
                    len: self.n,
                });
            }
        }
        Ok(KernelColumns {
            kernel: self,
            cols: l_u.to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.f64(self.gamma);
        w.f64(self.threshold);
        w.u8(self.metric.code());
        w.u64(self.n as u64);
        w.u64(self.indptr.len() as u64);
        for &p in &self.indptr {
            w.u64(p as u64);
        }
        w.u32_slice(&self.indices);
        w.f64_slice(&self.values);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, MAGIC, VERSION)?;
        let gamma = r.f64()?;
        let threshold = r.f64()?;
        let metric = Metric::from_code(r.u8()?)
            .ok_or_else(|| Error::Format("unknown metric code".into()))?;
        let n = r.u64()? as usize;
        let indptr_len = r.u64()? as usize;
        if indptr_len != n + 1 {
            return Err(Error::Format("indptr length mismatch".into()));
        }
        let indptr: Vec<usize> = (0..indptr_len)
            .map(|_| r.u64().map(|v| v as usize))
            .collect::<Result<_>>()?;
        let indices = r.u32_vec()?;
        let values = r.f64_vec()?;
        r.finish()?;
        if indices.len() != values.len() || indptr.last() != Some(&indices.len()) {
            return Err(Error::Format("inconsistent kernel arrays".into()));
        }
        Ok(GeoKernel {
            n,
            gamma,
            threshold,
            metric,
            indptr,
            indices,
            values,
        })
    }
}

/// Cache key for a kernel: catalog contents plus construction parameters.
pub fn kernel_cache_key(catalog: &PoiCatalog, gamma: f64, threshold: f64, metric: Metric) -> String {
    let mut h = Sha256::new();
    h.update((catalog.len() as u64).to_le_bytes());
    for (id, &(lat, lon)) in catalog.ids.iter().zip(&catalog.coords) {
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
        h.update(lat.to_le_bytes());
        h.update(lon.to_le_bytes());
    }
    h.update(gamma.to_le_bytes());
    h.update(threshold.to_le_bytes());
    h.update([metric.code()]);
    h.finalize().iter().map(|b| format!("{:02x}", b)).collect()
}

/// Column-slice view over a kernel, produced by [`GeoKernel::slice_columns`].
#[derive(Debug)]
pub struct KernelColumns<'a> {
    kernel: &'a GeoKernel,
    cols: Vec<u32>,
}

impl KernelColumns<'_> {
    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    /// Column j of the view as sorted (row, value) slices.
    pub fn col(&self, j: usize) -> (&[u32], &[f64]) {
        self.kernel.row(self.cols[j] as usize)
    }

    /// Materializes the full N×n slice. Test helper; O(N * n).
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols.len()]; self.kernel.n];
        for j in 0..self.cols.len() {
            let (rows, vals) = self.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                out[i as usize][j] = v;
            }
        }
        out
    }
}

/// Builds the thresholded kernel by brute force over all pairs.
pub fn build_kernel(
    catalog: &PoiCatalog,
    gamma: f64,
    threshold: f64,
    metric: Metric,
) -> Result<GeoKernel> {
    build_kernel_with(catalog, gamma, threshold, metric, KernelStrategy::BruteForce)
}

/// Builds the thresholded kernel with the chosen pair-enumeration strategy.
/// Both strategies produce identical kernels.
pub fn build_kernel_with(
    catalog: &PoiCatalog,
    gamma: f64,
    threshold: f64,
    metric: Metric,
    strategy: KernelStrategy,
) -> Result<GeoKernel> {
    if catalog.is_empty() {
        return Err(Error::Validation("catalog is empty".into()));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Validation(format!("gamma must be positive, got {gamma}")));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Validation(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    for &(lat, lon) in &catalog.coords {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::Validation("non-finite coordinate in catalog".into()));
        }
    }

    let rows = match strategy {
        KernelStrategy::BruteForce => brute_force_rows(catalog, gamma, threshold, metric),
        KernelStrategy::Grid => grid_rows(catalog, gamma, threshold, metric),
    };

    let n = catalog.len();
    let mut indptr = Vec::with_capacity(n + 1);
    indptr.push(0);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for row in rows {
        for (j, v) in row {
            indices.push(j);
            values.push(v);
        }
        indptr.push(indices.len());
    }
    Ok(GeoKernel {
        n,
        gamma,
        threshold,
        metric,
        indptr,
        indices,
        values,
    })
}

fn brute_force_rows(
    catalog: &PoiCatalog,
    gamma: f64,
    threshold: f64,
    metric: Metric,
) -> Vec<Vec<(u32, f64)>> {
    let coords = &catalog.coords;
    (0..coords.len())
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::new();
            for j in 0..coords.len() {
                if i == j {
                    continue;
                }
                let v = (-gamma * metric.squared_distance(coords[i], coords[j])).exp();
                if v >= threshold {
                    row.push((j as u32, v));
                }
            }
            row
        })
        .collect()
}

/// Largest distance that can still clear the threshold.
fn cutoff_distance(gamma: f64, threshold: f64) -> f64 {
    ((1.0 / threshold).ln() / gamma).sqrt()
}

fn grid_rows(
    catalog: &PoiCatalog,
    gamma: f64,
    threshold: f64,
    metric: Metric,
) -> Vec<Vec<(u32, f64)>> {
    let d_max = cutoff_distance(gamma, threshold);
    match metric {
        Metric::EuclideanDegrees => grid_rows_euclidean(catalog, gamma, threshold, d_max),
        Metric::HaversineKm => grid_rows_haversine(catalog, gamma, threshold, d_max),
    }
}

fn grid_rows_euclidean(
    catalog: &PoiCatalog,
    gamma: f64,
    threshold: f64,
    d_max: f64,
) -> Vec<Vec<(u32, f64)>> {
    let coords = &catalog.coords;
    let cell = d_max.max(1e-9);
    let key = |lat: f64, lon: f64| ((lat / cell).floor() as i64, (lon / cell).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
    for (i, &(lat, lon)) in coords.iter().enumerate() {
        buckets.entry(key(lat, lon)).or_default().push(i as u32);
    }
    (0..coords.len())
        .into_par_iter()
        .map(|i| {
            let (lat, lon) = coords[i];
            let (ci, cj) = key(lat, lon);
            let mut row = Vec::new();
            for di in -1..=1i64 {
                for dj in -1..=1i64 {
                    let Some(cands) = buckets.get(&(ci + di, cj + dj)) else {
                        continue;
                    };
                    for &j in cands {
                        if j as usize == i {
                            continue;
                        }
                        let v = (-gamma
                            * Metric::EuclideanDegrees.squared_distance(coords[i], coords[j as usize]))
                        .exp();
                        if v >= threshold {
                            row.push((j, v));
                        }
                    }
                }
            }
            row.sort_unstable_by_key(|&(j, _)| j);
            row
        })
        .collect()
}

fn grid_rows_haversine(
    catalog: &PoiCatalog,
    gamma: f64,
    threshold: f64,
    d_max_km: f64,
) -> Vec<Vec<(u32, f64)>> {
    let coords = &catalog.coords;
    // Latitude cells are exact: great-circle distance is at least the
    // meridian arc, so d <= d_max bounds |dlat| by d_max / KM_PER_DEG_LAT.
    let cell_lat = (d_max_km / KM_PER_DEG_LAT).max(1e-9);
    let cell_lon = cell_lat;
    let lon_cells = ((360.0 / cell_lon).ceil() as i64).max(1);
    let lat_key = |lat: f64| (lat / cell_lat).floor() as i64;
    let lon_key = |lon: f64| {
        let wrapped = (lon + 360.0) % 360.0;
        (((wrapped / cell_lon).floor() as i64).clamp(0, lon_cells - 1)) % lon_cells
    };
    let mut buckets: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
    for (i, &(lat, lon)) in coords.iter().enumerate() {
        buckets.entry((lat_key(lat), lon_key(lon))).or_default().push(i as u32);
    }
    let lat_reach = 1i64; // one cell covers the full d_max in latitude

    (0..coords.len())
        .into_par_iter()
        .map(|i| {
            let (lat, lon) = coords[i];
            let my_lat = lat_key(lat);
            let my_lon = lon_key(lon);
            let mut row = Vec::new();
            for dl in -lat_reach..=lat_reach {
                let band = my_lat + dl;
                // Most poleward latitude any candidate in this band can have.
                let band_edge = ((band + 1) as f64 * cell_lat)
                    .abs()
                    .max((band as f64 * cell_lat).abs())
                    .max(lat.abs());
                let cos_bound = band_edge.min(90.0).to_radians().cos();
                let s = (d_max_km / (2.0 * EARTH_RADIUS_KM)).sin() / cos_bound.max(1e-12);
                let lon_reach = if s >= 1.0 {
                    lon_cells // poles or huge radius: scan the whole band
                } else {
                    let dlon_deg = 2.0 * s.asin().to_degrees();
                    (dlon_deg / cell_lon).ceil() as i64 + 1
                };
                let lon_span = lon_reach.min(lon_cells / 2 + 1);
                let mut seen_cells = std::collections::HashSet::new();
                for dj in -lon_span..=lon_span {
                    let cell = (my_lon + dj).rem_euclid(lon_cells);
                    if !seen_cells.insert(cell) {
                        continue;
                    }
                    let Some(cands) = buckets.get(&(band, cell)) else {
                        continue;
                    };
                    for &j in cands {
                        if j as usize == i {
                            continue;
                        }
                        let v = (-gamma
                            * Metric::HaversineKm.squared_distance(coords[i], coords[j as usize]))
                        .exp();
                        if v >= threshold {
                            row.push((j, v));
                        }
                    }
                }
            }
            row.sort_unstable_by_key(|&(j, _)| j);
            row.dedup_by_key(|&mut (j, _)| j);
            row
        })
        .collect()
}

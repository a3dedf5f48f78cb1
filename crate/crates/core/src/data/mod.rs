//! Check-in log ingestion: parsing, sparsity filtering, per-user train/test
//! splitting, and materialization of the frequency/binary/confidence matrices
//! the model trains on.

mod cache;

pub use cache::{cache_key, Dataset, PreprocessParams};

use std::collections::HashMap;
use std::io::BufRead;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{keyed_rng, Stream};

/// One raw check-in with its original string tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckInRecord {
    pub user_id: String,
    pub poi_id: String,
    pub timestamp: i64,
}

/// A check-in resolved to dense indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Record {
    pub user: u32,
    pub poi: u32,
    pub timestamp: i64,
}

/// The POI universe: id ↔ dense index plus coordinates in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct PoiCatalog {
    pub ids: Vec<String>,
    /// (latitude, longitude) per POI, same order as `ids`.
    pub coords: Vec<(f64, f64)>,
    index: HashMap<String, u32>,
}

impl PoiCatalog {
    pub fn new(ids: Vec<String>, coords: Vec<(f64, f64)>) -> Result<Self> {
        if ids.len() != coords.len() {
            return Err(Error::Shape(format!(
                "catalog has {} ids but {} coordinate pairs",
                ids.len(),
                coords.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i as u32).is_some() {
                return Err(Error::Validation(format!("duplicate poi id {:?}", id)));
            }
        }
        Ok(PoiCatalog { ids, coords, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, poi_id: &str) -> Option<u32> {
        self.index.get(poi_id).copied()
    }
}

/// Parsed check-in data with dense user and POI indices.
#[derive(Debug, Clone)]
pub struct CheckInLog {
    pub user_ids: Vec<String>,
    pub catalog: PoiCatalog,
    pub records: Vec<Record>,
}

impl CheckInLog {
    /// Number of distinct users.
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    /// Number of POIs in the catalog.
    pub fn num_pois(&self) -> usize {
        self.catalog.len()
    }

    /// Records with their string tokens restored.
    pub fn resolved_records(&self) -> impl Iterator<Item = CheckInRecord> + '_ {
        self.records.iter().map(|r| CheckInRecord {
            user_id: self.user_ids[r.user as usize].clone(),
            poi_id: self.catalog.ids[r.poi as usize].clone(),
            timestamp: r.timestamp,
        })
    }

    /// Sorted distinct POI indices per user.
    pub fn distinct_pois_per_user(&self) -> Vec<Vec<u32>> {
        let mut sets: Vec<Vec<u32>> = vec![Vec::new(); self.num_users()];
        for r in &self.records {
            sets[r.user as usize].push(r.poi);
        }
        for s in &mut sets {
            s.sort_unstable();
            s.dedup();
        }
        sets
    }
}

fn split_tsv(line: &str, want: usize, line_no: usize, what: &str) -> Result<Vec<String>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != want {
        return Err(Error::Parse {
            line: line_no,
            msg: format!(
                "{} line must have {} tab-separated fields, got {}",
                what,
                want,
                fields.len()
            ),
        });
    }
    Ok(fields.into_iter().map(str::to_owned).collect())
}

/// Parses tab-separated check-in and coordinate streams into a [`CheckInLog`].
///
/// Check-in lines are `user_id<TAB>poi_id<TAB>timestamp`; coordinate lines are
/// `poi_id<TAB>latitude<TAB>longitude`. Dense indices follow first-appearance
/// order (coordinate stream for POIs, check-in stream for users). Duplicate
/// (user, POI) records are preserved; frequency counting happens later.
pub fn parse_checkins(checkins: impl BufRead, coords: impl BufRead) -> Result<CheckInLog> {
    let mut ids = Vec::new();
    let mut coord_list = Vec::new();
    for (i, line) in coords.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields = split_tsv(&line, 3, line_no, "coordinate")?;
        if fields[0].is_empty() {
            return Err(Error::Validation(format!(
                "coordinate line {}: empty poi id",
                line_no
            )));
        }
        let lat: f64 = fields[1].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("coordinate line: bad latitude {:?}", fields[1]),
        })?;
        let lon: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("coordinate line: bad longitude {:?}", fields[2]),
        })?;
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Validation(format!(
                "coordinate line {}: latitude {} out of [-90, 90]",
                line_no, lat
            )));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Validation(format!(
                "coordinate line {}: longitude {} out of [-180, 180]",
                line_no, lon
            )));
        }
        ids.push(fields[0].clone());
        coord_list.push((lat, lon));
    }
    let catalog = PoiCatalog::new(ids, coord_list)?;

    let mut user_ids: Vec<String> = Vec::new();
    let mut user_index: HashMap<String, u32> = HashMap::new();
    let mut records = Vec::new();
    for (i, line) in checkins.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields = split_tsv(&line, 3, line_no, "check-in")?;
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Validation(format!(
                "check-in line {}: empty user or poi id",
                line_no
            )));
        }
        let timestamp: i64 = fields[2].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("check-in line: bad timestamp {:?}", fields[2]),
        })?;
        if timestamp < 0 {
            return Err(Error::Validation(format!(
                "check-in line {}: negative timestamp {}",
                line_no, timestamp
            )));
        }
        let poi = catalog.index_of(&fields[1]).ok_or_else(|| {
            Error::Referential(format!(
                "check-in line {} references unknown poi {:?}",
                line_no, fields[1]
            ))
        })?;
        let user = match user_index.get(&fields[0]) {
            Some(&u) => u,
            None => {
                let u = user_ids.len() as u32;
                user_index.insert(fields[0].clone(), u);
                user_ids.push(fields[0].clone());
                u
            }
        };
        records.push(Record {
            user,
            poi,
            timestamp,
        });
    }

    Ok(CheckInLog {
        user_ids,
        catalog,
        records,
    })
}

/// Removes users with fewer than `min_user_checkins` records and POIs with
/// fewer than `min_poi_visits` records, alternating the two passes until a
/// fixed point, then re-densifies indices (order-preserving relabeling).
pub fn filter_sparse(
    log: &CheckInLog,
    min_user_checkins: usize,
    min_poi_visits: usize,
) -> Result<CheckInLog> {
    if min_user_checkins < 1 || min_poi_visits < 1 {
        return Err(Error::Validation(
            "filter thresholds must be at least 1".into(),
        ));
    }
    let m = log.num_users();
    let n = log.num_pois();
    let mut user_ok = vec![true; m];
    let mut poi_ok = vec![true; n];
    loop {
        let mut changed = false;
        let mut user_total = vec![0usize; m];
        for r in &log.records {
            if user_ok[r.user as usize] && poi_ok[r.poi as usize] {
                user_total[r.user as usize] += 1;
            }
        }
        for u in 0..m {
            if user_ok[u] && user_total[u] < min_user_checkins {
                user_ok[u] = false;
                changed = true;
            }
        }
        let mut poi_total = vec![0usize; n];
        for r in &log.records {
            if user_ok[r.user as usize] && poi_ok[r.poi as usize] {
                poi_total[r.poi as usize] += 1;
            }
        }
        for p in 0..n {
            if poi_ok[p] && poi_total[p] < min_poi_visits {
                poi_ok[p] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let kept: Vec<&Record> = log
        .records
        .iter()
        .filter(|r| user_ok[r.user as usize] && poi_ok[r.poi as usize])
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset {
            min_user: min_user_checkins,
            min_poi: min_poi_visits,
        });
    }

    let mut new_user = vec![u32::MAX; m];
    let mut user_ids = Vec::new();
    for u in 0..m {
        if user_ok[u] {
            new_user[u] = user_ids.len() as u32;
            user_ids.push(log.user_ids[u].clone());
        }
    }
    let mut new_poi = vec![u32::MAX; n];
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for p in 0..n {
        if poi_ok[p] {
            new_poi[p] = ids.len() as u32;
            ids.push(log.catalog.ids[p].clone());
            coords.push(log.catalog.coords[p]);
        }
    }
    let records = kept
        .into_iter()
        .map(|r| Record {
            user: new_user[r.user as usize],
            poi: new_poi[r.poi as usize],
            timestamp: r.timestamp,
        })
        .collect();

    Ok(CheckInLog {
        user_ids,
        catalog: PoiCatalog::new(ids, coords)?,
        records,
    })
}

/// Train/test split parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    /// Fraction of each user's distinct POIs held out for testing.
    pub test_fraction: f64,
    pub seed: u64,
    /// How many independent partitions this seed defines.
    pub partition_count: usize,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Validation(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.partition_count == 0 {
            return Err(Error::Validation("partition_count must be positive".into()));
        }
        Ok(())
    }
}

/// Holds partition 0 of the split. See [`split_partition`] for the rest.
pub fn split_train_test(log: &CheckInLog, spec: &SplitSpec) -> Result<(CheckInLog, Vec<Vec<u32>>)> {
    split_partition(log, spec, 0)
}

/// Per user, holds out `round_half_up(test_fraction * |distinct POIs|)` POIs
/// (clamped to `[1, |distinct POIs| - 1]`) and removes all of their check-in
/// records from the training log. The choice is a deterministic function of
/// (seed, partition, user_id), so re-densification or record order cannot
/// perturb it. The catalog and user tables are left untouched: test POIs stay
/// addressable for evaluation.
pub fn split_partition(
    log: &CheckInLog,
    spec: &SplitSpec,
    partition: usize,
) -> Result<(CheckInLog, Vec<Vec<u32>>)> {
    spec.validate()?;
    if partition >= spec.partition_count {
        return Err(Error::Validation(format!(
            "partition {} out of range (partition_count {})",
            partition, spec.partition_count
        )));
    }

    let distinct = log.distinct_pois_per_user();
    let mut test_sets: Vec<Vec<u32>> = Vec::with_capacity(log.num_users());
    for (u, pois) in distinct.iter().enumerate() {
        if pois.len() < 2 {
            return Err(Error::Split {
                user: log.user_ids[u].clone(),
                msg: format!("needs at least 2 distinct POIs, has {}", pois.len()),
            });
        }
        let raw = (spec.test_fraction * pois.len() as f64 + 0.5).floor() as usize;
        let take = raw.clamp(1, pois.len() - 1);

        let mut key = Vec::with_capacity(8 + log.user_ids[u].len());
        key.extend_from_slice(&(partition as u64).to_le_bytes());
        key.extend_from_slice(log.user_ids[u].as_bytes());
        let mut rng = keyed_rng(spec.seed, Stream::Split, &key);
        let mut shuffled = pois.clone();
        shuffled.shuffle(&mut rng);
        let mut held: Vec<u32> = shuffled[..take].to_vec();
        held.sort_unstable();
        test_sets.push(held);
    }

    let records = log
        .records
        .iter()
        .filter(|r| test_sets[r.user as usize].binary_search(&r.poi).is_err())
        .copied()
        .collect();

    let train = CheckInLog {
        user_ids: log.user_ids.clone(),
        catalog: log.catalog.clone(),
        records,
    };
    Ok((train, test_sets))
}

/// Confidence weight for a check-in frequency: `1 + alpha * ln(1 + r / epsilon)`
/// for `r > 0`, else exactly 1.
pub fn confidence(frequency: u32, alpha: f64, epsilon: f64) -> f64 {
    if frequency == 0 {
        1.0
    } else {
        1.0 + alpha * (1.0 + frequency as f64 / epsilon).ln()
    }
}

/// One user's nonzero interaction row: sorted POI indices with frequencies
/// and confidence weights. The binary row is implied (1 wherever a count is
/// present); confidence defaults to 1 everywhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRow {
    pub indices: Vec<u32>,
    pub counts: Vec<u32>,
    pub confidences: Vec<f64>,
}

/// Sparse frequency (R), binary (X), and confidence (C) matrices over
/// M users × N POIs, stored row-wise for the nonzeros only.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionData {
    pub num_users: usize,
    pub num_pois: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub rows: Vec<UserRow>,
}

impl InteractionData {
    /// Check-in frequency r_{u,i}.
    pub fn frequency(&self, user: usize, poi: u32) -> u32 {
        let row = &self.rows[user];
        match row.indices.binary_search(&poi) {
            Ok(k) => row.counts[k],
            Err(_) => 0,
        }
    }

    /// Binary visit indicator x_{u,i}.
    pub fn visited(&self, user: usize, poi: u32) -> bool {
        self.rows[user].indices.binary_search(&poi).is_ok()
    }

    /// Confidence weight c_{u,i} (1 for unvisited POIs).
    pub fn confidence_of(&self, user: usize, poi: u32) -> f64 {
        let row = &self.rows[user];
        match row.indices.binary_search(&poi) {
            Ok(k) => row.confidences[k],
            Err(_) => 1.0,
        }
    }

    /// The check-in index list L_u.
    pub fn checked_in(&self, user: usize) -> &[u32] {
        &self.rows[user].indices
    }

    /// Fraction of nonzero entries.
    pub fn density(&self) -> f64 {
        let nnz: usize = self.rows.iter().map(|r| r.indices.len()).sum();
        nnz as f64 / (self.num_users as f64 * self.num_pois as f64)
    }
}

/// Counts frequencies and derives the binary and confidence matrices.
pub fn build_matrices(train: &CheckInLog, alpha: f64, epsilon: f64) -> Result<InteractionData> {
    if train.records.is_empty() {
        return Err(Error::Validation("cannot build matrices from an empty log".into()));
    }
    if !(alpha > 0.0) || !(epsilon > 0.0) {
        return Err(Error::Validation(format!(
            "alpha and epsilon must be positive, got alpha={}, epsilon={}",
            alpha, epsilon
        )));
    }
    let mut counts: Vec<HashMap<u32, u32>> = vec![HashMap::new(); train.num_users()];
    for r in &train.records {
        *counts[r.user as usize].entry(r.poi).or_insert(0) += 1;
    }
    let rows = counts
        .into_iter()
        .map(|by_poi| {
            let mut indices: Vec<u32> = by_poi.keys().copied().collect();
            indices.sort_unstable();
            let counts: Vec<u32> = indices.iter().map(|i| by_poi[i]).collect();
            let confidences = counts.iter().map(|&c| confidence(c, alpha, epsilon)).collect();
            UserRow {
                indices,
                counts,
                confidences,
            }
        })
        .collect();
    Ok(InteractionData {
        num_users: train.num_users(),
        num_pois: train.num_pois(),
        alpha,
        epsilon,
        rows,
    })
}

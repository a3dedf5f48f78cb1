//! Binary cache for preprocessed interaction data. The cache bundles
//! everything downstream stages need (catalog coordinates for the kernel,
//! user ids for reporting, interaction rows for training, held-out sets for
//! evaluation) and is keyed by a content hash of the inputs and parameters.
//! Round-trips are bit-exact.

use sha2::{Digest, Sha256};

use super::{InteractionData, PoiCatalog, SplitSpec, UserRow};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SNDS";
const VERSION: u32 = 1;

/// Everything `preprocess` produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub user_ids: Vec<String>,
    pub catalog: PoiCatalog,
    pub interactions: InteractionData,
    /// Held-out POI indices per user, sorted.
    pub test_sets: Vec<Vec<u32>>,
}

/// Parameters that key the cache alongside the raw input bytes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessParams {
    pub min_user_checkins: usize,
    pub min_poi_visits: usize,
    pub split: SplitSpec,
    pub partition: usize,
    pub alpha: f64,
    pub epsilon: f64,
}

/// Hex digest identifying a (inputs, parameters) combination.
pub fn cache_key(checkins: &[u8], coords: &[u8], params: &PreprocessParams) -> String {
    let mut h = Sha256::new();
    h.update((checkins.len() as u64).to_le_bytes());
    h.update(checkins);
    h.update((coords.len() as u64).to_le_bytes());
    h.update(coords);
    h.update((params.min_user_checkins as u64).to_le_bytes());
    h.update((params.min_poi_visits as u64).to_le_bytes());
    h.update(params.split.test_fraction.to_le_bytes());
    h.update(params.split.seed.to_le_bytes());
    h.update((params.split.partition_count as u64).to_le_bytes());
    h.update((params.partition as u64).to_le_bytes());
    h.update(params.alpha.to_le_bytes());
    h.update(params.epsilon.to_le_bytes());
    let digest = h.finalize();
    digest.iter().map(|b| format!("{:02x}", b)).collect()
}

impl Dataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u64(self.user_ids.len() as u64);
        for id in &self.user_ids {
            w.str(id);
        }
        w.u64(self.catalog.len() as u64);
        for (id, &(lat, lon)) in self.catalog.ids.iter().zip(&self.catalog.coords) {
            w.str(id);
            w.f64(lat);
            w.f64(lon);
        }
        w.f64(self.interactions.alpha);
        w.f64(self.interactions.epsilon);
        w.u64(self.interactions.rows.len() as u64);
        for row in &self.interactions.rows {
            w.u32_slice(&row.indices);
            w.u32_slice(&row.counts);
            w.f64_slice(&row.confidences);
        }
        w.u64(self.test_sets.len() as u64);
        for t in &self.test_sets {
            w.u32_slice(t);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, MAGIC, VERSION)?;
        let num_users = r.u64()? as usize;
        let user_ids: Vec<String> = (0..num_users)
            .map(|_| r.str())
            .collect::<Result<_>>()?;
        let num_pois = r.u64()? as usize;
        let mut ids = Vec::with_capacity(num_pois);
        let mut coords = Vec::with_capacity(num_pois);
        for _ in 0..num_pois {
            ids.push(r.str()?);
            let lat = r.f64()?;
            let lon = r.f64()?;
            coords.push((lat, lon));
        }
        let alpha = r.f64()?;
        let epsilon = r.f64()?;
        let num_rows = r.u64()? as usize;
        if num_rows != num_users {
            return Err(Error::Format(format!(
                "{} interaction rows for {} users",
                num_rows, num_users
            )));
        }
        let mut rows = Vec::with_capacity(num_rows);
        for _ in 0..num_rows {
            let indices = r.u32_vec()?;
            let counts = r.u32_vec()?;
            let confidences = r.f64_vec()?;
            if counts.len() != indices.len() || confidences.len() != indices.len() {
                return Err(Error::Format("ragged interaction row".into()));
            }
            rows.push(UserRow {
                indices,
                counts,
                confidences,
            });
        }
        let num_tests = r.u64()? as usize;
        if num_tests != num_users {
            return Err(Error::Format(format!(
                "{} test sets for {} users",
                num_tests, num_users
            )));
        }
        let test_sets: Vec<Vec<u32>> = (0..num_tests)
            .map(|_| r.u32_vec())
            .collect::<Result<_>>()?;
        r.finish()?;
        Ok(Dataset {
            user_ids,
            catalog: PoiCatalog::new(ids, coords)?,
            interactions: InteractionData {
                num_users,
                num_pois,
                alpha,
                epsilon,
                rows,
            },
            test_sets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_matrices, parse_checkins, split_train_test};
    use std::io::Cursor;

    fn sample_dataset() -> Dataset {
        let coords: String = (0..5).map(|i| format!("p{}\t{}.5\t-{}.25\n", i, i, i)).collect();
        let checkins: String = (0..5)
            .flat_map(|p| (0..2).map(move |u| format!("u{}\tp{}\t{}\n", u, p, p * 2 + u)))
            .collect();
        let log = parse_checkins(Cursor::new(checkins), Cursor::new(coords)).unwrap();
        let spec = SplitSpec {
            test_fraction: 0.2,
            seed: 5,
            partition_count: 1,
        };
        let (train, test_sets) = split_train_test(&log, &spec).unwrap();
        let interactions = build_matrices(&train, 2.0, 1e-5).unwrap();
        Dataset {
            user_ids: train.user_ids.clone(),
            catalog: train.catalog.clone(),
            interactions,
            test_sets,
        }
    }

    #[test]
    fn round_trips_bit_exactly() {
        let ds = sample_dataset();
        let bytes = ds.to_bytes();
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(ds, back);
        assert_eq!(bytes, back.to_bytes());
    }

    #[test]
    fn key_changes_with_inputs_and_parameters() {
        let params = PreprocessParams {
            min_user_checkins: 20,
            min_poi_visits: 20,
            split: SplitSpec {
                test_fraction: 0.2,
                seed: 1,
                partition_count: 1,
            },
            partition: 0,
            alpha: 2.0,
            epsilon: 1e-5,
        };
        let base = cache_key(b"a", b"b", &params);
        assert_eq!(base, cache_key(b"a", b"b", &params));
        assert_ne!(base, cache_key(b"a2", b"b", &params));
        let mut p2 = params;
        p2.alpha = 3.0;
        assert_ne!(base, cache_key(b"a", b"b", &p2));
    }

    #[test]
    fn rejects_truncated_bytes() {
        let bytes = sample_dataset().to_bytes();
        let err = Dataset::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, crate::error::Error::Format(_)), "{err}");
    }
}

//! Geo-clustered synthetic check-in generator for desk-scale runs: cluster
//! centers drawn uniformly in a bounding box, POIs Gaussian around their
//! center, and users who check in mostly within a home cluster.

use rand::Rng;

use saenad::rng::{stream_rng, Stream};

use crate::error::{CliError, CliResult};

const LAT_RANGE: (f64, f64) = (22.0, 48.0);
const LON_RANGE: (f64, f64) = (-120.0, -72.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub pois_per_cluster: usize,
    pub users: usize,
    pub checkins_per_user: usize,
    /// Probability a check-in stays in the user's home cluster.
    pub intra_cluster_prob: f64,
    /// Gaussian spread of POIs around their cluster center, in degrees.
    pub coordinate_spread: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> CliResult<()> {
        if self.clusters == 0
            || self.pois_per_cluster == 0
            || self.users == 0
            || self.checkins_per_user == 0
        {
            return Err(CliError::Config("synthetic counts must be positive".into()));
        }
        if !(self.intra_cluster_prob > 0.0 && self.intra_cluster_prob <= 1.0) {
            return Err(CliError::Config(format!(
                "intra_cluster_prob must lie in (0, 1], got {}",
                self.intra_cluster_prob
            )));
        }
        if !(self.coordinate_spread > 0.0) || !self.coordinate_spread.is_finite() {
            return Err(CliError::Config("coordinate_spread must be positive".into()));
        }
        Ok(())
    }

    pub fn num_pois(&self) -> usize {
        self.clusters * self.pois_per_cluster
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generates (check-in lines, coordinate lines), deterministic in the seed.
pub fn generate(spec: &SyntheticSpec) -> CliResult<(String, String)> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Synth);

    let centers: Vec<(f64, f64)> = (0..spec.clusters)
        .map(|_| {
            (
                rng.random_range(LAT_RANGE.0..LAT_RANGE.1),
                rng.random_range(LON_RANGE.0..LON_RANGE.1),
            )
        })
        .collect();

    let mut coords = String::new();
    for (c, center) in centers.iter().enumerate() {
        for i in 0..spec.pois_per_cluster {
            let poi = c * spec.pois_per_cluster + i;
            let lat = (center.0 + gaussian(&mut rng) * spec.coordinate_spread).clamp(-89.9, 89.9);
            let lon = (center.1 + gaussian(&mut rng) * spec.coordinate_spread).clamp(-179.9, 179.9);
            coords.push_str(&format!("p{poi:05}\t{lat}\t{lon}\n"));
        }
    }

    let mut checkins = String::new();
    for u in 0..spec.users {
        let home = rng.random_range(0..spec.clusters);
        let mut visited = Vec::with_capacity(spec.checkins_per_user);
        for t in 0..spec.checkins_per_user {
            let cluster = if spec.clusters == 1 || rng.random::<f64>() < spec.intra_cluster_prob {
                home
            } else {
                // uniform over the other clusters
                let mut c = rng.random_range(0..spec.clusters - 1);
                if c >= home {
                    c += 1;
                }
                c
            };
            let mut poi = cluster * spec.pois_per_cluster + rng.random_range(0..spec.pois_per_cluster);
            // keep every user splittable: the last pick avoids collapsing
            // onto a single distinct POI
            let is_last = t + 1 == spec.checkins_per_user;
            if is_last && spec.num_pois() > 1 && visited.iter().all(|&p| p == poi) {
                let alt = home * spec.pois_per_cluster + rng.random_range(0..spec.pois_per_cluster);
                poi = if alt != poi {
                    alt
                } else {
                    (poi + 1) % spec.num_pois()
                };
            }
            visited.push(poi);
            checkins.push_str(&format!("u{u:04}\tp{poi:05}\t{t}\n"));
        }
    }

    Ok((checkins, coords))
}

#[cfg(test)]
mod tests {
    use super::*;
    use saenad::data::parse_checkins;
    use std::io::Cursor;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            clusters: 5,
            pois_per_cluster: 10,
            users: 8,
            checkins_per_user: 12,
            intra_cluster_prob: 0.9,
            coordinate_spread: 0.05,
            seed: 3,
        }
    }

    #[test]
    fn same_seed_generates_identical_files() {
        let (c1, k1) = generate(&spec()).unwrap();
        let (c2, k2) = generate(&spec()).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(k1, k2);
        let (c3, _) = generate(&SyntheticSpec { seed: 4, ..spec() }).unwrap();
        assert_ne!(c1, c3);
    }

    #[test]
    fn catalog_size_is_clusters_times_pois() {
        let (checkins, coords) = generate(&spec()).unwrap();
        let log = parse_checkins(Cursor::new(checkins), Cursor::new(coords)).unwrap();
        assert_eq!(log.num_pois(), 50);
        assert_eq!(log.num_users(), 8);
        assert_eq!(log.records.len(), 8 * 12);
    }

    #[test]
    fn full_intra_probability_confines_users_to_one_cluster() {
        let (checkins, coords) = generate(&SyntheticSpec {
            intra_cluster_prob: 1.0,
            ..spec()
        })
        .unwrap();
        let log = parse_checkins(Cursor::new(checkins), Cursor::new(coords)).unwrap();
        for pois in log.distinct_pois_per_user() {
            let clusters: std::collections::HashSet<u32> =
                pois.iter().map(|p| p / 10).collect();
            assert_eq!(clusters.len(), 1);
        }
    }

    #[test]
    fn every_user_is_splittable() {
        for seed in 0..10u64 {
            let (checkins, coords) = generate(&SyntheticSpec {
                checkins_per_user: 2,
                seed,
                ..spec()
            })
            .unwrap();
            let log = parse_checkins(Cursor::new(checkins), Cursor::new(coords)).unwrap();
            for pois in log.distinct_pois_per_user() {
                assert!(pois.len() >= 2);
            }
        }
    }
}

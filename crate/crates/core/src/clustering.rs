//! Regions for the space-time interaction term: k-means on site coordinates.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{Coord, Metric};
use crate::ingest::StationTable;
use crate::numfmt::sig10;

const RESTARTS: usize = 10;
const MAX_ITER: usize = 200;

/// Partition of sites into `k` regions. Site indices refer to the station
/// table the assignment was computed from; clusters are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub member_of: Vec<usize>,
    pub centroids: Vec<Coord>,
    pub metric: Metric,
}

impl ClusterAssignment {
    /// Validates that every cluster index is in range and no cluster is empty.
    pub fn new(member_of: Vec<usize>, centroids: Vec<Coord>, metric: Metric) -> Result<Self> {
        let k = centroids.len();
        if k == 0 {
            return Err(Error::Domain("at least one cluster is required".into()));
        }
        let mut sizes = vec![0usize; k];
        for (site, &c) in member_of.iter().enumerate() {
            if c >= k {
                return Err(Error::Reference(format!(
                    "site {site} assigned to cluster {c} but only {k} clusters exist"
                )));
            }
            sizes[c] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Domain(format!("cluster {empty} has no members")));
        }
        Ok(Self {
            member_of,
            centroids,
            metric,
        })
    }

    /// Clusters given explicit memberships, with centroids at member means.
    pub fn from_members(member_of: Vec<usize>, coords: &[Coord], metric: Metric) -> Result<Self> {
        let k = member_of.iter().max().map_or(0, |m| m + 1);
        let centroids = centroids_of(coords, &member_of, k);
        Self::new(member_of, centroids, metric)
    }

    /// Every site in a single region.
    pub fn single(coords: &[Coord], metric: Metric) -> Result<Self> {
        Self::from_members(vec![0; coords.len()], coords, metric)
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn n_sites(&self) -> usize {
        self.member_of.len()
    }

    /// The indicator r(s, k).
    pub fn r_indicator(&self, site: usize, cluster: usize) -> bool {
        self.member_of[site] == cluster
    }

    /// Site indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (site, &c) in self.member_of.iter().enumerate() {
            out[c].push(site);
        }
        out
    }

    /// Nearest centroid; ties go to the lowest index.
    pub fn assign_new_site(&self, coord: Coord) -> usize {
        nearest(&self.centroids, coord, self.metric).0
    }
}

/// One region for up to five sites, otherwise `floor(sqrt(n))`.
pub fn choose_k(n: usize) -> Result<usize> {
    match n {
        0 => Err(Error::Domain("cannot cluster zero sites".into())),
        1..=5 => Ok(1),
        _ => Ok(n.isqrt()),
    }
}

/// Best of several seeded Lloyd runs by within-cluster sum of squared distances.
pub fn kmeans(coords: &[Coord], k: usize, metric: Metric, seed: u64) -> Result<ClusterAssignment> {
    let n = coords.len();
    if k == 0 || k > n {
        return Err(Error::Domain(format!("cannot form {k} clusters from {n} sites")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<LloydRun> = None;
    for _ in 0..RESTARTS {
        let centers = sample(&mut rng, n, k).into_iter().map(|i| coords[i]).collect();
        let run = lloyd(coords, centers, metric, MAX_ITER);
        if best.as_ref().is_none_or(|b| run.objective() < b.objective()) {
            best = Some(run);
        }
        if k == 1 || k == n {
            break;
        }
    }
    let run = best.expect("at least one restart");
    Ok(canonical_labels(run.member_of, run.centroids, metric))
}

/// A single Lloyd run from fixed initial centers.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub member_of: Vec<usize>,
    pub centroids: Vec<Coord>,
    /// Objective after each centroid update.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl LloydRun {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::INFINITY)
    }

    pub fn into_assignment(self, metric: Metric) -> ClusterAssignment {
        canonical_labels(self.member_of, self.centroids, metric)
    }
}

pub fn lloyd(coords: &[Coord], mut centers: Vec<Coord>, metric: Metric, max_iter: usize) -> LloydRun {
    let k = centers.len();
    let mut member_of: Vec<usize> = vec![usize::MAX; coords.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let next: Vec<usize> = coords.iter().map(|&c| nearest(&centers, c, metric).0).collect();
        if next == member_of {
            break;
        }
        member_of = next;
        repair_empty(coords, &mut member_of, &centers, metric, k);
        centers = centroids_of(coords, &member_of, k);
        trace.push(objective(coords, &member_of, &centers, metric));
    }
    LloydRun {
        member_of,
        centroids: centers,
        objective_trace: trace,
        iterations,
    }
}

pub fn objective(coords: &[Coord], member_of: &[usize], centers: &[Coord], metric: Metric) -> f64 {
    coords
        .iter()
        .zip(member_of)
        .map(|(&c, &m)| metric.distance(c, centers[m]).powi(2))
        .sum()
}

fn nearest(centers: &[Coord], point: Coord, metric: Metric) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, &c) in centers.iter().enumerate() {
        let d = metric.distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(coords: &[Coord], member_of: &mut [usize], centers: &[Coord], metric: Metric, k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &m in member_of.iter() {
            sizes[m] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..coords.len())
            .filter(|&i| sizes[member_of[i]] > 1)
            .max_by(|&a, &b| {
                let da = metric.distance(coords[a], centers[member_of[a]]);
                let db = metric.distance(coords[b], centers[member_of[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("k <= n leaves a cluster with two members");
        member_of[donor] = empty;
    }
}

fn centroids_of(coords: &[Coord], member_of: &[usize], k: usize) -> Vec<Coord> {
    let mut sums = vec![(0.0, 0.0, 0usize); k];
    for (&c, &m) in coords.iter().zip(member_of) {
        sums[m].0 += c.x;
        sums[m].1 += c.y;
        sums[m].2 += 1;
    }
    sums.into_iter()
        .map(|(x, y, n)| Coord::new(x / n.max(1) as f64, y / n.max(1) as f64))
        .collect()
}

/// Relabels clusters by lexicographic centroid order so labels do not depend
/// on the order sites were listed in.
fn canonical_labels(member_of: Vec<usize>, centroids: Vec<Coord>, metric: Metric) -> ClusterAssignment {
    let mut order: Vec<usize> = (0..centroids.len()).collect();
    order.sort_by(|&a, &b| {
        centroids[a]
            .x
            .total_cmp(&centroids[b].x)
            .then(centroids[a].y.total_cmp(&centroids[b].y))
    });
    let mut relabel = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    ClusterAssignment {
        member_of: member_of.into_iter().map(|m| relabel[m]).collect(),
        centroids: order.iter().map(|&i| centroids[i]).collect(),
        metric,
    }
}

impl ClusterAssignment {
    /// `station_id,cluster` with 1-based clusters.
    pub fn write_members_csv<W: std::io::Write>(&self, stations: &StationTable, out: W) -> Result<()> {
        if stations.len() != self.n_sites() {
            return Err(Error::Dimension {
                expected: self.n_sites(),
                got: stations.len(),
            });
        }
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Schema(format!("writing clusters: {e}"));
        w.write_record(["station_id", "cluster"]).map_err(err)?;
        for (station, k) in stations.iter().zip(&self.member_of) {
            w.write_record([station.id.clone(), (k + 1).to_string()]).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("clusters", e))
    }

    /// `cluster,lat,lon` (or `cluster,x,y` for planar coordinates).
    pub fn write_centroids_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Schema(format!("writing centroids: {e}"));
        let header = match self.metric {
            Metric::GreatCircle => ["cluster", "lat", "lon"],
            Metric::Euclidean => ["cluster", "x", "y"],
        };
        w.write_record(header).map_err(err)?;
        for (k, c) in self.centroids.iter().enumerate() {
            w.write_record([(k + 1).to_string(), sig10(c.x), sig10(c.y)]).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("centroids", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn choose_k_follows_site_count_rule() {
        assert_eq!(choose_k(5).unwrap(), 1);
        assert_eq!(choose_k(6).unwrap(), 2);
        assert_eq!(choose_k(50).unwrap(), 7);
        assert_eq!(choose_k(66).unwrap(), 8);
        assert!(matches!(choose_k(0), Err(Error::Domain(_))));
    }

    #[test]
    fn recovers_two_separated_groups() {
        let mut coords = Vec::new();
        for i in 0..6 {
            coords.push(Coord::new(0.1 * i as f64, 0.0));
            coords.push(Coord::new(100.0 + 0.1 * i as f64, 50.0));
        }
        let a = kmeans(&coords, 2, Metric::Euclidean, 3).unwrap();
        for (i, &m) in a.member_of.iter().enumerate() {
            assert_eq!(m, i % 2);
        }
    }

    #[test]
    fn single_cluster_centroid_is_mean() {
        let coords = [Coord::new(1.0, 2.0), Coord::new(3.0, 6.0), Coord::new(5.0, 1.0)];
        let a = kmeans(&coords, 1, Metric::Euclidean, 0).unwrap();
        assert_eq!(a.member_of, vec![0, 0, 0]);
        assert!((a.centroids[0].x - 3.0).abs() < 1e-12);
        assert!((a.centroids[0].y - 3.0).abs() < 1e-12);
    }

    #[test]
    fn k_equal_n_gives_singletons() {
        let coords: Vec<_> = (0..7).map(|i| Coord::new(i as f64, (i * i) as f64)).collect();
        let a = kmeans(&coords, 7, Metric::Euclidean, 11).unwrap();
        let mut labels = a.member_of.clone();
        labels.sort();
        assert_eq!(labels, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn too_many_clusters_is_domain_error() {
        let coords = [Coord::new(0.0, 0.0)];
        assert!(matches!(kmeans(&coords, 2, Metric::Euclidean, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        let coords = [Coord::new(0.0, 0.0), Coord::new(1.0, 0.0), Coord::new(10.0, 0.0)];
        // the third center attracts nobody
        let centers = vec![Coord::new(0.5, 0.0), Coord::new(10.0, 0.0), Coord::new(500.0, 0.0)];
        let run = lloyd(&coords, centers, Metric::Euclidean, 200);
        let mut sizes = [0; 3];
        for &m in &run.member_of {
            sizes[m] += 1;
        }
        assert_eq!(sizes, [1, 1, 1]);
    }

    #[test]
    fn new_site_goes_to_nearest_centroid() {
        let a = ClusterAssignment::new(
            vec![0, 1, 2, 3],
            vec![Coord::new(0.0, 0.0), Coord::new(-1.0, 0.0), Coord::new(1.0, 0.0), Coord::new(5.0, 5.0)],
            Metric::Euclidean,
        )
        .unwrap();
        assert_eq!(a.assign_new_site(Coord::new(5.0, 5.0)), 3);
        assert_eq!(a.assign_new_site(Coord::new(0.0, 3.0)), 0);
        // (0, 0) is equidistant from clusters 1 and 2
        let b = ClusterAssignment::new(
            vec![0, 1, 2],
            vec![Coord::new(90.0, 90.0), Coord::new(-1.0, 0.0), Coord::new(1.0, 0.0)],
            Metric::Euclidean,
        )
        .unwrap();
        assert_eq!(b.assign_new_site(Coord::new(0.0, 0.0)), 1);
        assert_eq!(b.assign_new_site(Coord::new(1e6, -1e6)), 2);
    }

    #[test]
    fn empty_cluster_rejected_by_constructor() {
        let r = ClusterAssignment::new(vec![0, 0], vec![Coord::new(0.0, 0.0); 2], Metric::Euclidean);
        assert!(r.is_err());
    }

    fn points() -> impl Strategy<Value = Vec<Coord>> {
        proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 4..40)
            .prop_map(|v| v.into_iter().map(|(x, y)| Coord::new(x, y)).collect())
    }

    proptest! {
        #[test]
        fn lloyd_objective_never_increases(coords in points(), k in 1usize..4, seed in any::<u64>()) {
            let k = k.min(coords.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let centers = sample(&mut rng, coords.len(), k).into_iter().map(|i| coords[i]).collect();
            let run = lloyd(&coords, centers, Metric::Euclidean, 200);
            for w in run.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-9);
            }
        }

        #[test]
        fn lloyd_partition_ignores_site_order(coords in points(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let k = 3.min(coords.len());
            let centers: Vec<Coord> = coords[..k].to_vec();
            let a = lloyd(&coords, centers.clone(), Metric::Euclidean, 200);
            let mut perm: Vec<usize> = (0..coords.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<Coord> = perm.iter().map(|&i| coords[i]).collect();
            let b = lloyd(&shuffled, centers, Metric::Euclidean, 200);
            for (pos, &orig) in perm.iter().enumerate() {
                prop_assert_eq!(b.member_of[pos], a.member_of[orig]);
            }
        }
    }
}

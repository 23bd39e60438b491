//! Canonical vector ordering: cluster first, then week, then site within the
//! cluster (sites ascending by table index).

use crate::clustering::ClusterAssignment;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub cluster: usize,
    pub week: usize,
    /// Position of the site among its cluster's members.
    pub local: usize,
    /// Index of the site in the station table.
    pub site: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    n_weeks: usize,
    members: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    slot: Vec<(usize, usize)>,
}

impl Layout {
    pub fn new(clusters: &ClusterAssignment, n_weeks: usize) -> Self {
        let members = clusters.members();
        let mut offsets = Vec::with_capacity(members.len() + 1);
        let mut slot = vec![(0, 0); clusters.n_sites()];
        let mut acc = 0;
        for (k, m) in members.iter().enumerate() {
            offsets.push(acc);
            acc += m.len() * n_weeks;
            for (local, &site) in m.iter().enumerate() {
                slot[site] = (k, local);
            }
        }
        offsets.push(acc);
        Self {
            n_weeks,
            members,
            offsets,
            slot,
        }
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_weeks(&self) -> usize {
        self.n_weeks
    }

    pub fn n_sites(&self) -> usize {
        self.slot.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self, cluster: usize) -> &[usize] {
        &self.members[cluster]
    }

    /// Flat range occupied by a cluster.
    pub fn block(&self, cluster: usize) -> std::ops::Range<usize> {
        self.offsets[cluster]..self.offsets[cluster + 1]
    }

    pub fn index(&self, cluster: usize, week: usize, local: usize) -> usize {
        self.offsets[cluster] + week * self.members[cluster].len() + local
    }

    pub fn index_of_site(&self, site: usize, week: usize) -> usize {
        let (cluster, local) = self.slot[site];
        self.index(cluster, week, local)
    }

    pub fn cluster_of(&self, site: usize) -> usize {
        self.slot[site].0
    }

    pub fn locate(&self, flat: usize) -> Cell {
        let cluster = self.offsets.partition_point(|&o| o <= flat) - 1;
        let n_k = self.members[cluster].len();
        let within = flat - self.offsets[cluster];
        let (week, local) = (within / n_k, within % n_k);
        Cell {
            cluster,
            week,
            local,
            site: self.members[cluster][local],
        }
    }

    /// All cells in canonical order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.members.iter().enumerate().flat_map(move |(cluster, m)| {
            (0..self.n_weeks).flat_map(move |week| {
                m.iter().enumerate().map(move |(local, &site)| Cell {
                    cluster,
                    week,
                    local,
                    site,
                })
            })
        })
    }

    /// Reorders a site-major (site × week) table into canonical order.
    pub fn from_site_major<T: Copy>(&self, values: &[T]) -> Vec<T> {
        self.cells()
            .map(|c| values[c.site * self.n_weeks + c.week])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Coord, Metric};
    use proptest::prelude::*;

    fn assignment(member_of: Vec<usize>) -> ClusterAssignment {
        let coords: Vec<_> = (0..member_of.len()).map(|i| Coord::new(i as f64, 0.0)).collect();
        ClusterAssignment::from_members(member_of, &coords, Metric::Euclidean).unwrap()
    }

    #[test]
    fn two_site_cluster_interleaves_weeks() {
        // sites 0 and 2 share a cluster; site 1 is alone
        let layout = Layout::new(&assignment(vec![0, 1, 0]), 3);
        let order: Vec<(usize, usize)> = layout.cells().map(|c| (c.site, c.week)).collect();
        assert_eq!(
            order,
            vec![(0, 0), (2, 0), (0, 1), (2, 1), (0, 2), (2, 2), (1, 0), (1, 1), (1, 2)]
        );
        assert_eq!(layout.block(1), 6..9);
    }

    proptest! {
        #[test]
        fn flat_index_round_trips(labels in proptest::collection::vec(0usize..4, 1..20), weeks in 1usize..12) {
            let mut labels = labels;
            // make cluster labels contiguous
            let mut seen: Vec<usize> = labels.clone();
            seen.sort();
            seen.dedup();
            for l in labels.iter_mut() {
                *l = seen.iter().position(|s| s == l).unwrap();
            }
            let layout = Layout::new(&assignment(labels), weeks);
            for (flat, cell) in layout.cells().enumerate() {
                prop_assert_eq!(layout.index(cell.cluster, cell.week, cell.local), flat);
                prop_assert_eq!(layout.locate(flat), cell);
                prop_assert_eq!(layout.index_of_site(cell.site, cell.week), flat);
            }
            prop_assert_eq!(layout.len(), layout.n_sites() * weeks);
        }
    }
}

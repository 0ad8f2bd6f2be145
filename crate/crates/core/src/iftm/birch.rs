//! BIRCH-style micro-clustering as a reconstruction function.
//!
//! A flat list of clustering-feature triples `(n, LS, SS)` aged by a
//! per-insert decay. Each incoming vector is reconstructed by the nearest
//! centroid, then absorbed into it when within the distance threshold or
//! started as a new cluster. Exceeding the cluster budget merges the two
//! closest clusters.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirchConfig {
    /// Absorption radius T in standardized units.
    pub threshold: f64,
    /// Cluster budget M.
    pub max_clusters: usize,
    /// Per-insert decay λ; every cluster is scaled by `1 - λ` before each insert.
    pub decay: f64,
    /// Clusters whose weight falls below this are dropped.
    pub prune_floor: f64,
}

impl Default for BirchConfig {
    fn default() -> Self {
        Self {
            threshold: 3.0,
            max_clusters: 50,
            decay: 0.001,
            prune_floor: 0.01,
        }
    }
}

/// Clustering feature: weighted count, linear sum and scalar squared sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroCluster {
    pub n: f64,
    pub ls: Vec<f64>,
    pub ss: f64,
}

impl MicroCluster {
    fn from_point(z: &[f64]) -> Self {
        Self {
            n: 1.0,
            ls: z.to_vec(),
            ss: dot(z, z),
        }
    }

    pub fn centroid(&self) -> Vec<f64> {
        self.ls.iter().map(|v| v / self.n).collect()
    }

    /// Root-mean-square distance of members from the centroid, clamped at 0.
    pub fn radius(&self) -> f64 {
        let c = self.centroid();
        (self.ss / self.n - dot(&c, &c)).max(0.0).sqrt()
    }

    fn absorb(&mut self, z: &[f64]) {
        self.n += 1.0;
        for (l, v) in self.ls.iter_mut().zip(z) {
            *l += v;
        }
        self.ss += dot(z, z);
    }

    fn merge(&mut self, other: &MicroCluster) {
        self.n += other.n;
        for (l, v) in self.ls.iter_mut().zip(&other.ls) {
            *l += v;
        }
        self.ss += other.ss;
    }

    fn scale(&mut self, f: f64) {
        self.n *= f;
        for l in &mut self.ls {
            *l *= f;
        }
        self.ss *= f;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub value: Vec<f64>,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirchState {
    config: BirchConfig,
    dimension: usize,
    clusters: Vec<MicroCluster>,
    /// Cached centroids, parallel to `clusters`. Uniform decay leaves them unchanged.
    centroids: Vec<Vec<f64>>,
    /// Symmetric centroid-to-centroid distances, parallel to `clusters`.
    pairwise: Vec<Vec<f64>>,
}

impl BirchState {
    pub fn new(dimension: usize, config: BirchConfig) -> Self {
        assert!(config.threshold > 0.0, "BIRCH threshold must be positive");
        assert!(config.max_clusters >= 1, "BIRCH needs room for at least one cluster");
        assert!((0.0..1.0).contains(&config.decay), "decay must lie in [0, 1)");
        Self {
            config,
            dimension,
            clusters: Vec::new(),
            centroids: Vec::new(),
            pairwise: Vec::new(),
        }
    }

    pub fn config(&self) -> &BirchConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn clusters(&self) -> &[MicroCluster] {
        &self.clusters
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    /// Returns the pre-insertion nearest centroid and its distance to `z`, then learns `z`.
    pub fn insert(&mut self, z: &[f64]) -> Reconstruction {
        assert_eq!(z.len(), self.dimension, "BIRCH dimension mismatch");
        if self.config.decay > 0.0 {
            let f = 1.0 - self.config.decay;
            for c in &mut self.clusters {
                c.scale(f);
            }
        }

        let nearest = self
            .centroids
            .iter()
            .enumerate()
            .map(|(i, c)| (i, sq_dist(c, z)))
            .min_by(|a, b| a.1.total_cmp(&b.1));

        let out = match nearest {
            None => {
                self.push(MicroCluster::from_point(z));
                return Reconstruction { value: z.to_vec(), error: 0.0 };
            }
            Some((i, d2)) => {
                let out = Reconstruction {
                    value: self.centroids[i].clone(),
                    error: d2.sqrt(),
                };
                if out.error <= self.config.threshold {
                    self.clusters[i].absorb(z);
                    self.refresh(i);
                } else {
                    self.push(MicroCluster::from_point(z));
                }
                out
            }
        };

        if self.clusters.len() > self.config.max_clusters {
            self.merge_closest();
        }
        self.prune();
        out
    }

    fn push(&mut self, cluster: MicroCluster) {
        let centroid = cluster.centroid();
        let row: Vec<f64> = self.centroids.iter().map(|c| sq_dist(c, &centroid).sqrt()).collect();
        for (other, d) in self.pairwise.iter_mut().zip(&row) {
            other.push(*d);
        }
        let mut row = row;
        row.push(0.0);
        self.pairwise.push(row);
        self.centroids.push(centroid);
        self.clusters.push(cluster);
    }

    /// Recomputes the cached centroid and distance row of cluster `i`.
    fn refresh(&mut self, i: usize) {
        self.centroids[i] = self.clusters[i].centroid();
        for j in 0..self.clusters.len() {
            if j != i {
                let d = sq_dist(&self.centroids[i], &self.centroids[j]).sqrt();
                self.pairwise[i][j] = d;
                self.pairwise[j][i] = d;
            }
        }
    }

    fn remove(&mut self, i: usize) {
        self.clusters.swap_remove(i);
        self.centroids.swap_remove(i);
        self.pairwise.swap_remove(i);
        for row in &mut self.pairwise {
            row.swap_remove(i);
        }
    }

    fn merge_closest(&mut self) {
        let mut best = (0, 1, f64::INFINITY);
        for i in 0..self.pairwise.len() {
            for j in (i + 1)..self.pairwise.len() {
                if self.pairwise[i][j] < best.2 {
                    best = (i, j, self.pairwise[i][j]);
                }
            }
        }
        let (i, j, _) = best;
        let absorbed = self.clusters[j].clone();
        self.clusters[i].merge(&absorbed);
        self.refresh(i);
        self.remove(j);
        // swap_remove moved the last cluster into slot j; slot i is untouched because i < j
    }

    fn prune(&mut self) {
        let floor = self.config.prune_floor;
        let mut i = 0;
        while i < self.clusters.len() {
            if self.clusters[i].n < floor {
                self.remove(i);
            } else {
                i += 1;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

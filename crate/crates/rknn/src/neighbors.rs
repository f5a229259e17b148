//! Point configurations and their k-nearest-neighbor graphs.
//!
//! Neighbor order is total: candidates j ≠ i are ranked by squared distance,
//! ties broken by point index. Every comparison anywhere in the crate happens
//! on that (distance², index) pair, so the accelerated tree and the
//! brute-force oracle produce bit-identical rows. Duplicate points are legal
//! here (distance 0 rows); the energy layer is where they blow up.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::geometry::DomainDescriptor;
use crate::{Error, Result};

/// N points in R^p, stored row-major in one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    coords: Vec<f64>,
    p: usize,
}

impl Configuration {
    /// Panics if the buffer length is not a multiple of p.
    pub fn new(coords: Vec<f64>, p: usize) -> Self {
        assert!(p > 0, "ambient dimension must be positive");
        assert!(
            coords.len() % p == 0,
            "coordinate buffer length {} is not a multiple of p = {p}",
            coords.len()
        );
        Configuration { coords, p }
    }

    pub fn from_points(points: &[Vec<f64>]) -> Self {
        assert!(!points.is_empty(), "from_points needs at least one point");
        let p = points[0].len();
        let mut coords = Vec::with_capacity(points.len() * p);
        for pt in points {
            assert_eq!(pt.len(), p, "all points must share one dimension");
            coords.extend_from_slice(pt);
        }
        Configuration::new(coords, p)
    }

    pub fn n(&self) -> usize {
        self.coords.len() / self.p
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.p..(i + 1) * self.p]
    }

    pub fn point_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coords[i * self.p..(i + 1) * self.p]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.p)
    }
}

/// The k-nearest-neighbor graph of a configuration.
///
/// Row i lists the first `row_len = min(k, N-1)` candidates j ≠ i in
/// (distance², index) order. `next_dist` is the distance to the first
/// candidate beyond the row (+∞ when the row already holds everyone),
/// kept so callers can detect boundary ties.
#[derive(Clone, Debug)]
pub struct NeighborGraph {
    n: usize,
    k: usize,
    row_len: usize,
    idx: Vec<u32>,
    dist: Vec<f64>,
    next_dist: Vec<f64>,
}

impl NeighborGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    /// The requested k (rows may be shorter when N <= k).
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn row_idx(&self, i: usize) -> &[u32] {
        &self.idx[i * self.row_len..(i + 1) * self.row_len]
    }

    pub fn row_dist(&self, i: usize) -> &[f64] {
        &self.dist[i * self.row_len..(i + 1) * self.row_len]
    }

    /// Distance from point i to its (row_len+1)-th candidate, +∞ if none.
    pub fn next_dist(&self, i: usize) -> f64 {
        self.next_dist[i]
    }

    /// How many rows cite each point as a neighbor.
    pub fn in_degrees(&self) -> Vec<u32> {
        let mut deg = vec![0u32; self.n];
        for &j in &self.idx {
            deg[j as usize] += 1;
        }
        deg
    }
}

#[inline]
fn cand_cmp(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Build the k-nearest-neighbor graph under the domain metric.
///
/// Deterministic: the result is a pure function of (configuration, domain,
/// k), independent of thread count.
pub fn build_graph(
    config: &Configuration,
    domain: &DomainDescriptor,
    k: usize,
) -> Result<NeighborGraph> {
    if k == 0 {
        return Err(Error::InvalidInput("neighbor count k must be >= 1".into()));
    }
    if config.p() != domain.p() {
        return Err(Error::InvalidInput(format!(
            "configuration lives in R^{} but domain in R^{}",
            config.p(),
            domain.p()
        )));
    }
    let n = config.n();
    if n > u32::MAX as usize {
        return Err(Error::InvalidInput("configuration too large for u32 indices".into()));
    }
    let row_len = k.min(n.saturating_sub(1));
    let mut graph = NeighborGraph {
        n,
        k,
        row_len,
        idx: vec![0; n * row_len],
        dist: vec![0.0; n * row_len],
        next_dist: vec![f64::INFINITY; n],
    };
    if row_len == 0 {
        return Ok(graph);
    }
    let tree = KdTree::new(config, domain);
    let want = (row_len + 1).min(n - 1);
    graph
        .idx
        .par_chunks_mut(row_len)
        .zip(graph.dist.par_chunks_mut(row_len))
        .zip(graph.next_dist.par_iter_mut())
        .enumerate()
        .for_each(|(i, ((idx_row, dist_row), next))| {
            let cands = tree.nearest(config.point(i), Some(i as u32), want);
            debug_assert_eq!(cands.len(), want);
            for (slot, &(d2, j)) in idx_row.iter_mut().zip(&cands[..row_len]) {
                *slot = j;
                let _ = d2;
            }
            for (slot, &(d2, _)) in dist_row.iter_mut().zip(&cands[..row_len]) {
                *slot = d2.sqrt();
            }
            if want > row_len {
                *next = cands[row_len].0.sqrt();
            }
        });
    Ok(graph)
}

/// Brute-force oracle for `build_graph`: per row, sort all candidates j ≠ i
/// by (distance², index) and cut after min(k, N-1). O(N² log N); shares
/// nothing with the tree except the metric.
pub fn knn_brute(
    config: &Configuration,
    domain: &DomainDescriptor,
    k: usize,
) -> Result<NeighborGraph> {
    if k == 0 {
        return Err(Error::InvalidInput("neighbor count k must be >= 1".into()));
    }
    let n = config.n();
    let row_len = k.min(n.saturating_sub(1));
    let mut graph = NeighborGraph {
        n,
        k,
        row_len,
        idx: Vec::with_capacity(n * row_len),
        dist: Vec::with_capacity(n * row_len),
        next_dist: vec![f64::INFINITY; n],
    };
    let mut cands: Vec<(f64, u32)> = Vec::with_capacity(n);
    for i in 0..n {
        cands.clear();
        cands.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (domain.dist2(config.point(i), config.point(j)), j as u32)),
        );
        cands.sort_by(cand_cmp);
        graph.idx.extend(cands[..row_len].iter().map(|&(_, j)| j));
        graph.dist.extend(cands[..row_len].iter().map(|&(d2, _)| d2.sqrt()));
        if let Some(&(d2, _)) = cands.get(row_len) {
            graph.next_dist[i] = d2.sqrt();
        }
    }
    Ok(graph)
}

const LEAF_SIZE: usize = 8;

enum NodeKind {
    Leaf { start: u32, end: u32 },
    Inner { left: u32, right: u32 },
}

struct KdNode {
    bbox: Vec<[f64; 2]>,
    kind: NodeKind,
}

/// Bucketed kd-tree over a configuration, with per-node bounding boxes and
/// periodic-aware pruning. Lower bounds round no higher than true distances
/// and pruning is strict, so boundary ties are always visited and the result
/// matches `knn_brute` bit for bit.
pub(crate) struct KdTree<'a> {
    config: &'a Configuration,
    domain: &'a DomainDescriptor,
    nodes: Vec<KdNode>,
    order: Vec<u32>,
}

impl<'a> KdTree<'a> {
    pub(crate) fn new(config: &'a Configuration, domain: &'a DomainDescriptor) -> Self {
        let mut tree = KdTree {
            config,
            domain,
            nodes: Vec::new(),
            order: (0..config.n() as u32).collect(),
        };
        if config.n() > 0 {
            tree.build(0, config.n());
        }
        tree
    }

    fn bbox_of(&self, start: usize, end: usize) -> Vec<[f64; 2]> {
        let p = self.config.p();
        let mut bbox = vec![[f64::INFINITY, f64::NEG_INFINITY]; p];
        for &j in &self.order[start..end] {
            for (b, &v) in bbox.iter_mut().zip(self.config.point(j as usize)) {
                b[0] = b[0].min(v);
                b[1] = b[1].max(v);
            }
        }
        bbox
    }

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let bbox = self.bbox_of(start, end);
        let me = self.nodes.len() as u32;
        self.nodes.push(KdNode {
            bbox,
            kind: NodeKind::Leaf { start: start as u32, end: end as u32 },
        });
        if end - start <= LEAF_SIZE {
            return me;
        }
        let (axis, extent) = self.nodes[me as usize]
            .bbox
            .iter()
            .map(|b| b[1] - b[0])
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if extent <= 0.0 {
            return me;
        }
        let b = self.nodes[me as usize].bbox[axis];
        let mid = 0.5 * (b[0] + b[1]);
        let (mut lo, mut hi): (Vec<u32>, Vec<u32>) = self.order[start..end]
            .iter()
            .partition(|&&j| self.config.point(j as usize)[axis] < mid);
        if lo.is_empty() || hi.is_empty() {
            // Degenerate split (mid rounded onto an endpoint); leave a fat leaf.
            return me;
        }
        let split = start + lo.len();
        lo.append(&mut hi);
        self.order[start..end].copy_from_slice(&lo);
        let left = self.build(start, split);
        let right = self.build(split, end);
        self.nodes[me as usize].kind = NodeKind::Inner { left, right };
        me
    }

    fn lower_bound(&self, bbox: &[[f64; 2]], q: &[f64]) -> f64 {
        fn slab(v: f64, b: [f64; 2]) -> f64 {
            if v < b[0] {
                b[0] - v
            } else if v > b[1] {
                v - b[1]
            } else {
                0.0
            }
        }
        match self.domain.periods() {
            None => bbox
                .iter()
                .zip(q)
                .map(|(&b, &v)| {
                    let d = slab(v, b);
                    d * d
                })
                .sum(),
            Some(periods) => bbox
                .iter()
                .zip(q)
                .zip(periods)
                .map(|((&b, &v), &p)| {
                    if b[0] <= v && v <= b[1] {
                        return 0.0;
                    }
                    // Min-image distance to a circular arc is attained at an
                    // endpoint; computing it with the exact operation sequence
                    // of dist2 keeps the bound <= every point distance in fp.
                    let m = |e: f64| {
                        let mut delta = (v - e).abs();
                        if delta > 0.5 * p {
                            delta = p - delta;
                        }
                        delta
                    };
                    let d = m(b[0]).min(m(b[1]));
                    d * d
                })
                .sum(),
        }
    }

    /// The m nearest points to q in (distance², index) order, optionally
    /// excluding one index. Returns fewer than m only when the tree runs out
    /// of points.
    pub(crate) fn nearest(&self, q: &[f64], exclude: Option<u32>, m: usize) -> Vec<(f64, u32)> {
        let mut cands: Vec<(f64, u32)> = Vec::with_capacity(m + 1);
        if m > 0 && !self.nodes.is_empty() {
            self.visit(0, q, exclude, m, &mut cands);
        }
        cands
    }

    fn visit(&self, node: u32, q: &[f64], exclude: Option<u32>, m: usize, cands: &mut Vec<(f64, u32)>) {
        let node = &self.nodes[node as usize];
        if cands.len() == m && self.lower_bound(&node.bbox, q) > cands[m - 1].0 {
            return;
        }
        match node.kind {
            NodeKind::Leaf { start, end } => {
                for &j in &self.order[start as usize..end as usize] {
                    if exclude == Some(j) {
                        continue;
                    }
                    let d2 = self.domain.dist2(q, self.config.point(j as usize));
                    let c = (d2, j);
                    if cands.len() == m && cand_cmp(&c, &cands[m - 1]) != Ordering::Less {
                        continue;
                    }
                    let pos = cands.partition_point(|e| cand_cmp(e, &c) == Ordering::Less);
                    cands.insert(pos, c);
                    if cands.len() > m {
                        cands.pop();
                    }
                }
            }
            NodeKind::Inner { left, right } => {
                let lb_l = self.lower_bound(&self.nodes[left as usize].bbox, q);
                let lb_r = self.lower_bound(&self.nodes[right as usize].bbox, q);
                let (first, second) = if lb_l <= lb_r { (left, right) } else { (right, left) };
                self.visit(first, q, exclude, m, cands);
                self.visit(second, q, exclude, m, cands);
            }
        }
    }
}

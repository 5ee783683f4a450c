//! Exact nearest-neighbour search over a static 3D point set.
//!
//! Results are identical to a brute-force scan: candidates are ordered by
//! squared distance, then by point index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::mesh_io::Point;

const LEAF_SIZE: usize = 8;

/// Squared Euclidean distance, accumulated as `dx² + dy² + dz²`.
#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// A neighbour hit: point index and squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.dist2.sqrt()
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

// max-heap ordering for the k-NN candidate set
struct HeapItem(Neighbor);

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.0.key_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Immutable k-d tree.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point>,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

impl SpatialIndex {
    pub fn new(points: &[Point]) -> Self {
        let mut index = SpatialIndex {
            points: points.to_vec(),
            perm: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let slice = &self.perm[start..end];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in slice {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        let mid = (end - start) / 2;
        let points = &self.points;
        self.perm[start..end].select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.perm[start + mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, start + mid);
        let right = self.build(start + mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Nearest point to `query`; `None` on an empty index.
    pub fn nearest(&self, query: &Point) -> Option<Neighbor> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = Neighbor {
            index: usize::MAX,
            dist2: f64::INFINITY,
        };
        self.nearest_rec(0, query, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, node: usize, q: &Point, best: &mut Neighbor) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist2: dist2(q, &self.points[i]),
                    };
                    if cand.key_cmp(best) == Ordering::Less {
                        *best = cand;
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.dist2 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points sorted by (distance, index). Returns fewer when
    /// the index holds fewer than `k` points.
    pub fn knn(&self, query: &Point, k: usize) -> Vec<Neighbor> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, query, k, &mut heap);
        let mut out: Vec<Neighbor> = heap.into_iter().map(|h| h.0).collect();
        out.sort_by(|a, b| a.key_cmp(b));
        out
    }

    fn knn_rec(&self, node: usize, q: &Point, k: usize, heap: &mut BinaryHeap<HeapItem>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist2: dist2(q, &self.points[i]),
                    };
                    if heap.len() < k {
                        heap.push(HeapItem(cand));
                    } else if let Some(worst) = heap.peek() {
                        if cand.key_cmp(&worst.0) == Ordering::Less {
                            heap.pop();
                            heap.push(HeapItem(cand));
                        }
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, heap);
                let visit_far = heap.len() < k
                    || heap.peek().is_some_and(|w| diff * diff <= w.0.dist2);
                if visit_far {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }

    /// Nearest neighbour of every query, computed in parallel.
    pub fn nearest_all(&self, queries: &[Point]) -> Vec<Neighbor> {
        queries
            .par_iter()
            .map(|q| self.nearest(q).expect("nearest_all on an empty index"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_index() {
        let idx = SpatialIndex::new(&[]);
        assert!(idx.nearest(&Point::origin()).is_none());
        assert!(idx.knn(&Point::origin(), 3).is_empty());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let pts: Vec<Point> = (0..20)
            .map(|i| if i % 2 == 0 { Point::new(1.0, 0.0, 0.0) } else { Point::new(-1.0, 0.0, 0.0) })
            .collect();
        let idx = SpatialIndex::new(&pts);
        assert_eq!(idx.nearest(&Point::origin()).unwrap().index, 0);
        let knn: Vec<usize> = idx.knn(&Point::origin(), 4).iter().map(|n| n.index).collect();
        assert_eq!(knn, vec![0, 1, 2, 3]);
    }

    #[test]
    fn knn_larger_than_set() {
        let pts = vec![Point::new(0.0, 0.0, 0.0), Point::new(2.0, 0.0, 0.0)];
        let idx = SpatialIndex::new(&pts);
        let knn = idx.knn(&Point::new(1.5, 0.0, 0.0), 5);
        assert_eq!(knn.len(), 2);
        assert_eq!(knn[0].index, 1);
    }
}

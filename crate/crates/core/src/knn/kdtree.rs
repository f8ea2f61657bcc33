//! Bucketed k-d tree: split on the widest-spread dimension at the median.

use super::{distance, Candidate, Candidates, NeighborIndex};

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        /// Coordinate of the first point of the right half. Left points are
        /// `<= value`, right points are `>= value`.
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct KdTree {
    nodes: Vec<Node>,
    /// Point positions, permuted so every leaf owns a contiguous range.
    order: Vec<usize>,
}

impl KdTree {
    pub fn build(points: &[f64], dim: usize, row_ids: &[usize], leaf_size: usize) -> Self {
        let n = points.len() / dim;
        let mut tree = Self {
            nodes: Vec::new(),
            order: (0..n).collect(),
        };
        let mut order = std::mem::take(&mut tree.order);
        tree.build_node(points, dim, row_ids, &mut order, 0, leaf_size.max(1));
        tree.order = order;
        tree
    }

    fn build_node(
        &mut self,
        points: &[f64],
        dim: usize,
        row_ids: &[usize],
        order: &mut [usize],
        offset: usize,
        leaf_size: usize,
    ) -> usize {
        let id = self.nodes.len();
        let coord = |pos: usize, d: usize| points[pos * dim + d];
        let leaf = Node::Leaf {
            start: offset,
            end: offset + order.len(),
        };
        if order.len() <= leaf_size {
            self.nodes.push(leaf);
            return id;
        }

        let mut best_dim = 0;
        let mut best_spread = 0.0;
        for d in 0..dim {
            let (lo, hi) = order.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                let v = coord(p, d);
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        if best_spread <= 0.0 {
            // all points coincide
            self.nodes.push(leaf);
            return id;
        }

        order.sort_unstable_by(|&a, &b| {
            coord(a, best_dim)
                .total_cmp(&coord(b, best_dim))
                .then_with(|| row_ids[a].cmp(&row_ids[b]))
        });
        let mid = order.len() / 2;
        let value = coord(order[mid], best_dim);

        self.nodes.push(leaf); // placeholder
        let (lo, hi) = order.split_at_mut(mid);
        let left = self.build_node(points, dim, row_ids, lo, offset, leaf_size);
        let right = self.build_node(points, dim, row_ids, hi, offset + mid, leaf_size);
        self.nodes[id] = Node::Split {
            dim: best_dim,
            value,
            left,
            right,
        };
        id
    }

    pub fn search(&self, index: &NeighborIndex, q: &[f64], best: &mut Candidates) {
        self.visit(0, index, q, best);
    }

    fn visit(&self, node: usize, index: &NeighborIndex, q: &[f64], best: &mut Candidates) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &pos in &self.order[start..end] {
                    best.offer(Candidate {
                        distance: distance(q, index.point(pos)),
                        row_id: index.row_ids[pos],
                        pos,
                    });
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.visit(near, index, q, best);
                // Rounding is monotone, so every far-side point's computed
                // distance is >= this computed plane distance.
                let bound = (diff * diff).sqrt();
                if best.admits(bound) {
                    self.visit(far, index, q, best);
                }
            }
        }
    }
}

//! Exact nearest-neighbour distances over a static 3D point set.

use crate::geometry::Point3;

const LEAF: usize = 8;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

pub struct KdTree {
    points: Vec<[f64; 3]>,
    nodes: Vec<Node>,
}

/// Squared distance summed in a fixed `x, y, z` order so every caller gets
/// bit-identical values for the same pair.
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn new(points: &[Point3]) -> Self {
        let mut tree = KdTree { points: points.iter().map(|p| [p.x, p.y, p.z]).collect(), nodes: Vec::new() };
        if !tree.points.is_empty() {
            let n = tree.points.len();
            tree.build(0, n);
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let slice = &mut self.points[start..end];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in slice.iter() {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |p, q| p[axis].total_cmp(&q[axis]));
        let value = slice[mid][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, start + mid);
        let right = self.build(start + mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Euclidean distance from `q` to the nearest stored point (infinite when empty).
    pub fn nearest_distance(&self, q: &Point3) -> f64 {
        if self.points.is_empty() {
            return f64::INFINITY;
        }
        let q = [q.x, q.y, q.z];
        let mut best = f64::INFINITY;
        self.search(0, &q, &mut best);
        best.sqrt()
    }

    fn search(&self, node: usize, q: &[f64; 3], best: &mut f64) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for p in &self.points[start..end] {
                    let d = dist2(p, q);
                    if d < *best {
                        *best = d;
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= *best {
                    self.search(far, q, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_exact_neighbour() {
        let pts: Vec<Point3> = (0..100).map(|i| Point3::new(i as f64, (i * 7 % 13) as f64, 0.5)).collect();
        let t = KdTree::new(&pts);
        assert_eq!(t.nearest_distance(&Point3::new(42.0, (42 * 7 % 13) as f64, 0.5)), 0.0);
        assert!((t.nearest_distance(&Point3::new(-3.0, 0.0, 0.5)) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_tree() {
        assert_eq!(KdTree::new(&[]).nearest_distance(&Point3::origin()), f64::INFINITY);
    }
}

//! Exact nearest-neighbour queries over 3-D points.

use crate::math::Vec3;

const LEAF_SIZE: usize = 8;

enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

pub struct KdTree {
    points: Vec<Vec3>,
    root: Node,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut points = points.to_vec();
        let len = points.len();
        let root = build(&mut points, 0, len);
        Self { points, root }
    }

    /// Squared distance from `q` to the closest stored point; infinite when
    /// the tree is empty.
    pub fn nearest_squared(&self, q: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        self.search(&self.root, q, &mut best);
        best
    }

    fn search(&self, node: &Node, q: &Vec3, best: &mut f64) {
        match node {
            Node::Leaf { start, end } => {
                for p in &self.points[*start..*end] {
                    let d = (p - q).norm_squared();
                    if d < *best {
                        *best = d;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff < *best {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(points: &mut [Vec3], start: usize, end: usize) -> Node {
    let slice = &mut points[start..end];
    if slice.len() <= LEAF_SIZE {
        return Node::Leaf { start, end };
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in slice.iter() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let axis = (hi - lo).imax();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    let value = slice[mid][axis];
    Node::Split {
        axis,
        value,
        left: Box::new(build(points, start, start + mid)),
        right: Box::new(build(points, start + mid, end)),
    }
}

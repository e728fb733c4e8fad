//! Exact 2-D nearest-neighbour search.
//!
//! Pruning uses `(q - split)^2 > best`, which is a true lower bound under
//! floating-point rounding, so results are bit-identical to a linear scan
//! with the same ordering key `(d^2, y, x)`.

use std::cmp::Ordering;

const LEAF: usize = 8;

/// A point with its key `(u, v)` and the pixel `(x, y)` it came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UvPoint {
    pub u: f64,
    pub v: f64,
    pub x: u32,
    pub y: u32,
}

impl UvPoint {
    #[inline]
    fn key(&self, dim: usize) -> f64 {
        if dim == 0 {
            self.u
        } else {
            self.v
        }
    }
}

/// Squared distance as used by both the tree and any reference scan.
#[inline]
pub fn uv_distance2(u: f64, v: f64, p: &UvPoint) -> f64 {
    let du = u - p.u;
    let dv = v - p.v;
    du * du + dv * dv
}

/// Total order of candidate matches: distance, then source row, then column.
#[inline]
pub fn match_order(a: (f64, &UvPoint), b: (f64, &UvPoint)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.y.cmp(&b.1.y))
        .then(a.1.x.cmp(&b.1.x))
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { lo: usize, hi: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<UvPoint>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(mut points: Vec<UvPoint>) -> Self {
        let mut nodes = Vec::new();
        if !points.is_empty() {
            let n = points.len();
            build_node(&mut points, 0, n, &mut nodes);
        }
        KdTree { points, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[UvPoint] {
        &self.points
    }

    /// Nearest point to `(u, v)` and its squared distance.
    pub fn nearest(&self, u: f64, v: f64) -> Option<(&UvPoint, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best: Option<(f64, usize)> = None;
        self.search(0, u, v, &mut best);
        best.map(|(d, i)| (&self.points[i], d))
    }

    fn search(&self, node: usize, u: f64, v: f64, best: &mut Option<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf { lo, hi } => {
                for i in lo..hi {
                    let p = &self.points[i];
                    let d = uv_distance2(u, v, p);
                    let better = match *best {
                        None => true,
                        Some((bd, bi)) => match_order((d, p), (bd, &self.points[bi])) == Ordering::Less,
                    };
                    if better {
                        *best = Some((d, i));
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let q = if dim == 0 { u } else { v };
                let (near, far) = if q < value { (left, right) } else { (right, left) };
                self.search(near, u, v, best);
                let gap = q - value;
                if best.is_none_or(|(bd, _)| gap * gap <= bd) {
                    self.search(far, u, v, best);
                }
            }
        }
    }
}

fn build_node(points: &mut [UvPoint], lo: usize, hi: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if hi - lo <= LEAF {
        nodes.push(Node::Leaf { lo, hi });
        return id;
    }
    let slice = &mut points[lo..hi];
    let spread = |dim: usize| {
        let (mn, mx) = slice
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.key(dim)), b.max(p.key(dim))));
        mx - mn
    };
    let dim = if spread(0) >= spread(1) { 0 } else { 1 };
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |a, b| {
        a.key(dim)
            .total_cmp(&b.key(dim))
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    let value = slice[mid].key(dim);
    nodes.push(Node::Leaf { lo: 0, hi: 0 });
    let left = build_node(points, lo, lo + mid, nodes);
    let right = build_node(points, lo + mid, hi, nodes);
    nodes[id] = Node::Split { dim, value, left, right };
    id
}

//! Axis-aligned binary regression trees shared by the forest and the booster.
//!
//! Splits maximize the weighted between-child sum of squares of the node
//! targets. For 0/1 targets that is the same as minimizing weighted Gini
//! impurity, so the forest uses it directly on the labels.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// Value of the leaf reached by `x`. Goes left when `x[feature] <= threshold`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn leaf_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value } => Some(*value),
            Node::Split { .. } => None,
        })
    }
}

/// Row order per feature, ascending by value then row index.
pub(crate) struct Presorted {
    order: Vec<Vec<usize>>,
}

impl Presorted {
    pub(crate) fn new(x: &Matrix) -> Presorted {
        let order = (0..x.n_cols())
            .map(|j| {
                let mut idx: Vec<usize> = (0..x.n_rows()).collect();
                idx.sort_by(|&a, &b| x.get(a, j).total_cmp(&x.get(b, j)).then(a.cmp(&b)));
                idx
            })
            .collect();
        Presorted { order }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: Option<usize>,
    /// Minimum total weight in each child.
    pub min_leaf: f64,
    /// Features examined per node; `>= n_cols` means all of them.
    pub mtry: usize,
}

struct Grower<'a, L> {
    x: &'a Matrix,
    target: &'a [f64],
    weight: &'a [f64],
    params: GrowParams,
    leaf: L,
    rng: &'a mut ChaCha8Rng,
    // per feature, rows of the current sample laid out so every node owns the
    // same `lo..hi` range in each buffer
    bufs: Vec<Vec<usize>>,
    go_left: Vec<bool>,
    scratch: Vec<usize>,
    nodes: Vec<Node>,
}

/// Grows one tree on the rows with positive weight.
///
/// `leaf` maps the rows that reach a leaf to its stored value.
pub(crate) fn grow<L: Fn(&[usize]) -> f64>(
    x: &Matrix,
    pre: &Presorted,
    target: &[f64],
    weight: &[f64],
    params: GrowParams,
    rng: &mut ChaCha8Rng,
    leaf: L,
) -> Tree {
    let bufs: Vec<Vec<usize>> = pre
        .order
        .iter()
        .map(|o| o.iter().copied().filter(|&i| weight[i] > 0.0).collect())
        .collect();
    let n = if x.n_cols() == 0 {
        0
    } else {
        bufs[0].len()
    };
    let mut g = Grower {
        x,
        target,
        weight,
        params,
        leaf,
        rng,
        bufs,
        go_left: vec![false; x.n_rows()],
        scratch: Vec::with_capacity(n),
        nodes: Vec::new(),
    };
    if x.n_cols() == 0 {
        let rows: Vec<usize> = (0..x.n_rows()).filter(|&i| weight[i] > 0.0).collect();
        return Tree::leaf((g.leaf)(&rows));
    }
    g.build(0, n, 0);
    Tree { nodes: g.nodes }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    proxy: f64,
}

impl<L: Fn(&[usize]) -> f64> Grower<'_, L> {
    fn build(&mut self, lo: usize, hi: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let split = if self.params.max_depth.map_or(true, |d| depth < d) {
            self.best_split(lo, hi)
        } else {
            None
        };
        let Some(c) = split else {
            let value = (self.leaf)(&self.bufs[0][lo..hi]);
            self.nodes[id] = Node::Leaf { value };
            return id;
        };
        let mid = self.partition(lo, hi, c.feature, c.threshold);
        let left = self.build(lo, mid, depth + 1);
        let right = self.build(mid, hi, depth + 1);
        self.nodes[id] = Node::Split {
            feature: c.feature,
            threshold: c.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, lo: usize, hi: usize) -> Option<Candidate> {
        let p = self.x.n_cols();
        let rows = &self.bufs[0][lo..hi];
        let (mut w_tot, mut s_tot, mut sq_tot) = (0.0, 0.0, 0.0);
        for &i in rows {
            let w = self.weight[i];
            w_tot += w;
            s_tot += w * self.target[i];
            sq_tot += w * self.target[i] * self.target[i];
        }
        if w_tot < 2.0 * self.params.min_leaf {
            return None;
        }
        let parent = s_tot * s_tot / w_tot;

        let features: Vec<usize> = if self.params.mtry >= p {
            (0..p).collect()
        } else {
            let mut f = index::sample(self.rng, p, self.params.mtry).into_vec();
            f.sort_unstable();
            f
        };

        let mut best: Option<Candidate> = None;
        for f in features {
            let buf = &self.bufs[f][lo..hi];
            let (mut w_l, mut s_l) = (0.0, 0.0);
            for k in 0..buf.len() - 1 {
                let i = buf[k];
                w_l += self.weight[i];
                s_l += self.weight[i] * self.target[i];
                let a = self.x.get(i, f);
                let b = self.x.get(buf[k + 1], f);
                if a == b {
                    continue;
                }
                let w_r = w_tot - w_l;
                if w_l < self.params.min_leaf || w_r < self.params.min_leaf {
                    continue;
                }
                let s_r = s_tot - s_l;
                let proxy = s_l * s_l / w_l + s_r * s_r / w_r;
                if best.as_ref().map_or(true, |c| proxy > c.proxy) {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        proxy,
                    });
                }
            }
        }
        // only strict improvements, with slack for rounding in the sums
        best.filter(|c| c.proxy - parent > 1e-12 * sq_tot.max(f64::MIN_POSITIVE))
    }

    fn partition(&mut self, lo: usize, hi: usize, feature: usize, threshold: f64) -> usize {
        for &i in &self.bufs[feature][lo..hi] {
            self.go_left[i] = self.x.get(i, feature) <= threshold;
        }
        let mut mid = lo;
        for buf in &mut self.bufs {
            self.scratch.clear();
            let mut w = lo;
            for k in lo..hi {
                let i = buf[k];
                if self.go_left[i] {
                    buf[w] = i;
                    w += 1;
                } else {
                    self.scratch.push(i);
                }
            }
            buf[w..hi].copy_from_slice(&self.scratch);
            mid = w;
        }
        mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn mean_leaf<'a>(t: &'a [f64]) -> impl Fn(&[usize]) -> f64 + 'a {
        move |rows: &[usize]| rows.iter().map(|&i| t[i]).sum::<f64>() / rows.len() as f64
    }

    #[test]
    fn separable_single_split() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0], [4.0], [5.0], [6.0]]).unwrap();
        let t = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let w = [1.0; 6];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = GrowParams {
            max_depth: None,
            min_leaf: 1.0,
            mtry: 1,
        };
        let tree = grow(&x, &Presorted::new(&x), &t, &w, params, &mut rng, mean_leaf(&t));
        assert_eq!(tree.depth(), 1);
        assert_eq!(
            tree.nodes[0],
            Node::Split {
                feature: 0,
                threshold: 3.5,
                left: 1,
                right: 2
            }
        );
        for (r, &v) in x.rows().zip(&t) {
            assert_eq!(tree.predict(r), v);
        }
    }

    #[test]
    fn constant_feature_is_leaf() {
        let x = Matrix::from_rows(&[[2.0]; 8]).unwrap();
        let t = [0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = GrowParams {
            max_depth: None,
            min_leaf: 1.0,
            mtry: 1,
        };
        let tree = grow(&x, &Presorted::new(&x), &t, &[1.0; 8], params, &mut rng, mean_leaf(&t));
        assert_eq!(tree, Tree::leaf(0.25));
    }

    #[test]
    fn depth_and_min_leaf_respected() {
        let rows: Vec<[f64; 2]> = (0..64).map(|i| [i as f64, ((i * 37) % 64) as f64]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let t: Vec<f64> = (0..64).map(|i| ((i * 13 + 5) % 7 < 3) as u8 as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = GrowParams {
            max_depth: Some(3),
            min_leaf: 5.0,
            mtry: 2,
        };
        let tree = grow(&x, &Presorted::new(&x), &t, &[1.0; 64], params, &mut rng, mean_leaf(&t));
        assert!(tree.depth() <= 3);
        let mut counts = vec![0usize; tree.nodes.len()];
        for r in x.rows() {
            let mut i = 0;
            while let Node::Split {
                feature,
                threshold,
                left,
                right,
            } = tree.nodes[i]
            {
                i = if r[feature] <= threshold { left } else { right };
            }
            counts[i] += 1;
        }
        for (k, n) in tree.nodes.iter().enumerate() {
            if matches!(n, Node::Leaf { .. }) {
                assert!(counts[k] >= 5);
            }
        }
    }

    #[test]
    fn midpoint_guard() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let x = Matrix::from_rows(&[[a], [a], [b], [b]]).unwrap();
        let t = [0.0, 0.0, 1.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = GrowParams {
            max_depth: None,
            min_leaf: 1.0,
            mtry: 1,
        };
        let tree = grow(&x, &Presorted::new(&x), &t, &[1.0; 4], params, &mut rng, mean_leaf(&t));
        assert_eq!(tree.predict(&[a]), 0.0);
        assert_eq!(tree.predict(&[b]), 1.0);
    }
}

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf: usize,
    },
}

/// Axis-aligned regression tree. Inputs with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    pub leaf_values: Vec<f64>,
    /// Training indices routed to each leaf, ascending.
    pub leaf_members: Vec<Vec<usize>>,
}

impl RegressionTree {
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                Node::Leaf { leaf } => return *leaf,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.leaf_values[self.leaf_of(x)]
    }

    pub fn num_leaves(&self) -> usize {
        self.leaf_values.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    target: &'a [f64],
    max_depth: usize,
    tree: RegressionTree,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Exact greedy least-squares fit of `target`.
///
/// `sorted[f]` lists all training indices ordered by feature `f` (ties by
/// index). Candidate thresholds are midpoints between consecutive distinct
/// values; among equal gains the lowest feature, then lowest threshold wins.
pub(crate) fn fit_tree(
    x: ArrayView2<'_, f64>,
    target: &[f64],
    sorted: &[Vec<usize>],
    max_depth: usize,
) -> RegressionTree {
    let n = x.nrows();
    let mut b = Builder {
        x,
        target,
        max_depth,
        tree: RegressionTree {
            nodes: Vec::new(),
            leaf_values: Vec::new(),
            leaf_members: Vec::new(),
        },
    };
    let members: Vec<usize> = (0..n).collect();
    let mut mask = vec![false; n];
    b.grow(&members, sorted.to_vec(), 0, &mut mask);
    b.tree
}

impl Builder<'_> {
    fn grow(
        &mut self,
        members: &[usize],
        sorted: Vec<Vec<usize>>,
        depth: usize,
        mask: &mut [bool],
    ) -> usize {
        let id = self.tree.nodes.len();
        self.tree.nodes.push(Node::Leaf { leaf: usize::MAX });
        let split = if depth < self.max_depth && members.len() >= 2 {
            self.best_split(&sorted)
        } else {
            None
        };
        match split {
            None => {
                let leaf = self.tree.leaf_values.len();
                let mean =
                    members.iter().map(|&i| self.target[i]).sum::<f64>() / members.len() as f64;
                let mut m = members.to_vec();
                m.sort_unstable();
                self.tree.leaf_values.push(mean);
                self.tree.leaf_members.push(m);
                self.tree.nodes[id] = Node::Leaf { leaf };
            }
            Some(s) => {
                let (left, right): (Vec<usize>, Vec<usize>) = members
                    .iter()
                    .partition(|&&i| self.x[[i, s.feature]] <= s.threshold);
                for &i in &left {
                    mask[i] = true;
                }
                let (ls, rs): (Vec<Vec<usize>>, Vec<Vec<usize>>) = sorted
                    .into_iter()
                    .map(|col| col.into_iter().partition(|&i| mask[i]))
                    .unzip();
                for &i in &left {
                    mask[i] = false;
                }
                let l = self.grow(&left, ls, depth + 1, mask);
                let r = self.grow(&right, rs, depth + 1, mask);
                self.tree.nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left: l,
                    right: r,
                };
            }
        }
        id
    }

    fn best_split(&self, sorted: &[Vec<usize>]) -> Option<BestSplit> {
        let total: f64 = sorted[0].iter().map(|&i| self.target[i]).sum();
        let n = sorted[0].len() as f64;
        let base = total * total / n;
        let mut best: Option<BestSplit> = None;
        for (f, col) in sorted.iter().enumerate() {
            let mut left_sum = 0.0;
            for k in 0..col.len() - 1 {
                let i = col[k];
                left_sum += self.target[i];
                let v = self.x[[i, f]];
                let next = self.x[[col[k + 1], f]];
                if next <= v {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = n - nl;
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - base;
                let threshold = v + 0.5 * (next - v);
                let better = match &best {
                    None => true,
                    Some(b) => gain > b.gain,
                };
                if better {
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        // Reject splits that do not reduce the squared error beyond rounding.
        let scale = sorted[0]
            .iter()
            .map(|&i| self.target[i] * self.target[i])
            .sum::<f64>();
        best.filter(|b| b.gain > 1e-12 * scale.max(f64::MIN_POSITIVE))
    }
}

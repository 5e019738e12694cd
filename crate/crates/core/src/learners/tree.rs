//! CART regression trees and bootstrap random forests.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Candidate features per split; `None` tries all of them.
    pub max_features: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

/// Grows a tree over a list of rows (duplicates allowed). Each feature keeps the
/// node's samples sorted by value in a contiguous segment; splitting partitions
/// every segment stably, so no node ever re-sorts.
struct Builder<'a> {
    params: &'a TreeParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    y: Vec<f64>,
    // order[f][pos] is a sample id, xs[f][pos] its value of feature f
    order: Vec<Vec<u32>>,
    xs: Vec<Vec<f64>>,
    goes_left: Vec<bool>,
    scratch_o: Vec<u32>,
    scratch_x: Vec<f64>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
    n_left: usize,
}

impl<'a> Builder<'a> {
    /// `sorted[f]` lists row indices by increasing value of feature `f` and must
    /// cover every row in `rows`.
    fn new(
        x: &Matrix,
        y: &[f64],
        rows: &[usize],
        sorted: &[Vec<usize>],
        params: &'a TreeParams,
        rng: ChaCha8Rng,
    ) -> Self {
        let m = rows.len();
        // sample ids grouped by row, in increasing id order
        let mut offsets = vec![0usize; x.nrows() + 1];
        for &r in rows {
            offsets[r + 1] += 1;
        }
        for i in 0..x.nrows() {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut ids = vec![0u32; m];
        for (s, &r) in rows.iter().enumerate() {
            ids[fill[r]] = s as u32;
            fill[r] += 1;
        }
        let mut order = Vec::with_capacity(x.ncols());
        let mut xs = Vec::with_capacity(x.ncols());
        for (f, by_value) in sorted.iter().enumerate() {
            let mut o = Vec::with_capacity(m);
            let mut v = Vec::with_capacity(m);
            for &r in by_value {
                let group = &ids[offsets[r]..offsets[r + 1]];
                if !group.is_empty() {
                    let value = x.get(r, f);
                    o.extend_from_slice(group);
                    v.extend(std::iter::repeat_n(value, group.len()));
                }
            }
            order.push(o);
            xs.push(v);
        }
        Self {
            params,
            rng,
            nodes: Vec::new(),
            y: rows.iter().map(|&r| y[r]).collect(),
            order,
            xs,
            goes_left: vec![false; m],
            scratch_o: Vec::with_capacity(m),
            scratch_x: Vec::with_capacity(m),
        }
    }

    fn samples(&self, start: usize, end: usize) -> &[u32] {
        &self.order[0][start..end]
    }

    fn best_split(&mut self, start: usize, end: usize, total: f64) -> Option<SplitChoice> {
        let p = self.order.len();
        let features: Vec<usize> = match self.params.max_features {
            Some(m) if m < p => {
                let mut f = sample(&mut self.rng, p, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        };
        let n = end - start;
        let min_leaf = self.params.min_leaf;
        let parent = total * total / n as f64;
        let mut best: Option<SplitChoice> = None;
        for &f in &features {
            let xs = &self.xs[f][start..end];
            let ord = &self.order[f][start..end];
            let mut left_sum = 0.0;
            for pos in 0..n - 1 {
                left_sum += self.y[ord[pos] as usize];
                let nl = pos + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let (here, next) = (xs[pos], xs[pos + 1]);
                if here == next {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - parent;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = 0.5 * (here + next);
                    if threshold >= next {
                        threshold = here;
                    }
                    best = Some(SplitChoice { feature: f, threshold, gain, n_left: nl });
                }
            }
        }
        best.filter(|b| b.gain > 1e-12 * parent.abs().max(1e-300))
    }

    /// Moves the left child's samples to the front of every feature segment.
    fn partition(&mut self, start: usize, end: usize, split: &SplitChoice) {
        for pos in start..end {
            let s = self.order[split.feature][pos] as usize;
            self.goes_left[s] = pos - start < split.n_left;
        }
        for f in 0..self.order.len() {
            self.scratch_o.clear();
            self.scratch_x.clear();
            let mut w = start;
            for pos in start..end {
                let (s, v) = (self.order[f][pos], self.xs[f][pos]);
                if self.goes_left[s as usize] {
                    self.order[f][w] = s;
                    self.xs[f][w] = v;
                    w += 1;
                } else {
                    self.scratch_o.push(s);
                    self.scratch_x.push(v);
                }
            }
            self.order[f][w..end].copy_from_slice(&self.scratch_o);
            self.xs[f][w..end].copy_from_slice(&self.scratch_x);
        }
    }

    fn grow(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let slot = self.nodes.len();
        let n = end - start;
        let total: f64 = self.samples(start, end).iter().map(|&s| self.y[s as usize]).sum();
        self.nodes.push(Node::Leaf { value: total / n as f64 });
        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        let first = self.y[self.samples(start, end)[0] as usize];
        let pure = self.samples(start, end).iter().all(|&s| self.y[s as usize] == first);
        if !depth_ok || pure || n < 2 * self.params.min_leaf || self.order.is_empty() {
            return slot;
        }
        let Some(split) = self.best_split(start, end, total) else {
            return slot;
        };
        self.partition(start, end, &split);
        let mid = start + split.n_left;
        let left = self.grow(start, mid, depth + 1);
        let right = self.grow(mid, end, depth + 1);
        self.nodes[slot] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        slot
    }
}

/// Row order by covariates then outcome, so fits do not depend on input order.
fn canonical_order(x: &Matrix, y: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].total_cmp(&y[b]))
    });
    idx
}

/// For every feature, `rows` stably sorted by that feature's value.
fn presort(x: &Matrix, rows: &[usize]) -> Vec<Vec<usize>> {
    (0..x.ncols())
        .map(|f| {
            let mut o = rows.to_vec();
            o.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)));
            o
        })
        .collect()
}

impl Tree {
    fn build(
        x: &Matrix,
        y: &[f64],
        rows: Vec<usize>,
        sorted: &[Vec<usize>],
        params: &TreeParams,
        rng: ChaCha8Rng,
    ) -> Self {
        let mut b = Builder::new(x, y, &rows, sorted, params, rng);
        b.grow(0, rows.len(), 0);
        Tree { nodes: b.nodes }
    }

    pub fn fit(x: &Matrix, y: &[f64], params: &TreeParams, seed: u64) -> Self {
        let rows = canonical_order(x, y);
        let sorted = presort(x, &rows);
        Self::build(x, y, rows, &sorted, params, seed::rng(seed))
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    /// Bootstrap forest; tree `t` uses the stream `derive(seed, [t])`.
    pub fn fit(x: &Matrix, y: &[f64], n_trees: usize, params: &TreeParams, seed: u64) -> Self {
        let canon = canonical_order(x, y);
        let n = canon.len();
        let sorted = presort(x, &canon);
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng(seed::derive(seed, &[t as u64]));
                let rows: Vec<usize> = (0..n).map(|_| canon[rng.random_range(0..n)]).collect();
                Tree::build(x, y, rows, &sorted, params, rng)
            })
            .collect();
        Forest { trees }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        let m = self.trees.len() as f64;
        x.rows()
            .map(|r| self.trees.iter().map(|t| t.predict_row(r)).sum::<f64>() / m)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }
}

use serde::{Deserialize, Serialize};

use crate::data::Matrix;

/// k-nearest-neighbour regression on features standardized by training moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    k: usize,
    means: Vec<f64>,
    scales: Vec<f64>,
    x: Matrix,
    y: Vec<f64>,
}

impl KnnModel {
    pub(super) fn fit(x: &Matrix, y: &[f64], k: usize) -> Self {
        let n = x.nrows() as f64;
        let p = x.ncols();
        let means: Vec<f64> = (0..p).map(|j| x.column(j).iter().sum::<f64>() / n).collect();
        let scales: Vec<f64> = (0..p)
            .map(|j| {
                let var = x.column(j).iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut xs = x.clone();
        for i in 0..xs.nrows() {
            for (j, v) in xs.row_mut(i).iter_mut().enumerate() {
                *v = (*v - means[j]) / scales[j];
            }
        }
        Self { k: k.min(y.len()), means, scales, x: xs, y: y.to_vec() }
    }

    pub(super) fn predict(&self, x: &Matrix) -> Vec<f64> {
        let n = self.y.len();
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
        let mut q = vec![0.0; x.ncols()];
        x.rows()
            .map(|row| {
                for (j, v) in row.iter().enumerate() {
                    q[j] = (v - self.means[j]) / self.scales[j];
                }
                dist.clear();
                dist.extend(self.x.rows().enumerate().map(|(i, r)| {
                    (r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i)
                }));
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if self.k < n {
                    dist.select_nth_unstable_by(self.k - 1, cmp);
                }
                let near = &mut dist[..self.k];
                near.sort_unstable_by(cmp);
                near.iter().map(|&(_, i)| self.y[i]).sum::<f64>() / self.k as f64
            })
            .collect()
    }
}

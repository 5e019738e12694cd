//! Dense row-major matrices and the `(X, Y[, A])` sample container.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, data: vec![0.0; nrows * ncols] }
    }

    pub fn from_row_major(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::dim(format!(
                "buffer of length {} cannot hold a {nrows}x{ncols} matrix",
                data.len()
            )));
        }
        Ok(Self { nrows, ncols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return Err(Error::dim(format!("row {i} has {} columns, expected {ncols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { nrows: rows.len(), ncols, data })
    }

    /// Single-column matrix.
    pub fn column_vector(values: &[f64]) -> Self {
        Self { nrows: values.len(), ncols: 1, data: values.to_vec() }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.ncols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { nrows: idx.len(), ncols: self.ncols, data }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.nrows * cols.len());
        for i in 0..self.nrows {
            let r = self.row(i);
            data.extend(cols.iter().map(|&j| r[j]));
        }
        Self { nrows: self.nrows, ncols: cols.len(), data }
    }

    /// Prepends `col` as a new first column.
    pub fn prepend_column(&self, col: &[f64]) -> Result<Self> {
        if col.len() != self.nrows {
            return Err(Error::dim(format!(
                "column of length {} for a matrix with {} rows",
                col.len(),
                self.nrows
            )));
        }
        let mut data = Vec::with_capacity(self.nrows * (self.ncols + 1));
        for (i, &c) in col.iter().enumerate() {
            data.push(c);
            data.extend_from_slice(self.row(i));
        }
        Ok(Self { nrows: self.nrows, ncols: self.ncols + 1, data })
    }

    /// Copy with column `j` overwritten by the constant `v`.
    pub fn with_column_value(&self, j: usize, v: f64) -> Self {
        let mut m = self.clone();
        for i in 0..m.nrows {
            m.set(i, j, v);
        }
        m
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A sample `O_i = (X_i, Y_i)` with an optional binary treatment column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub treatment: Option<Vec<f64>>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(x, y, names)
    }

    pub fn with_names(x: Matrix, y: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::dim(format!("{} covariate rows but {} outcomes", x.nrows(), y.len())));
        }
        if feature_names.len() != x.ncols() {
            return Err(Error::dim("feature name count does not match column count"));
        }
        Ok(Self { x, y, treatment: None, feature_names })
    }

    pub fn with_treatment(mut self, a: Vec<f64>) -> Result<Self> {
        if a.len() != self.y.len() {
            return Err(Error::dim("treatment length does not match outcome length"));
        }
        if a.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::domain("treatment must be coded 0/1"));
        }
        self.treatment = Some(a);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            treatment: self.treatment.as_ref().map(|a| idx.iter().map(|&i| a[i]).collect()),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if !self.x.all_finite() {
            return Err(Error::data("covariates contain non-finite values"));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("outcome contains non-finite values"));
        }
        Ok(())
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_and_column_selection() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(m.select_rows(&[2, 0]).as_slice(), &[5.0, 6.0, 1.0, 2.0]);
        assert_eq!(m.select_columns(&[1]).as_slice(), &[2.0, 4.0, 6.0]);
        let p = m.prepend_column(&[9.0, 8.0, 7.0]).unwrap();
        assert_eq!(p.row(1), &[8.0, 3.0, 4.0]);
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn dataset_rejects_bad_treatment() {
        let x = Matrix::zeros(2, 1);
        let d = Dataset::new(x, vec![1.0, 2.0]).unwrap();
        assert!(d.clone().with_treatment(vec![0.0, 2.0]).is_err());
        assert!(d.with_treatment(vec![0.0, 1.0]).is_ok());
    }
}

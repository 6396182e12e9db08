use crate::error::{Error, Result};

/// Row-major matrix of samples: one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Batch {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Batch {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "batch data has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Batch { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Batch {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A single-row batch.
    pub fn row_vector(values: &[f64]) -> Self {
        Batch {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Batch {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Appends `suffix` to every row (used to attach a condition vector).
    pub fn append_to_rows(&self, suffix: &[f64]) -> Batch {
        let cols = self.cols + suffix.len();
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in self.iter_rows() {
            data.extend_from_slice(r);
            data.extend_from_slice(suffix);
        }
        Batch {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// The first `cols` columns of every row.
    pub fn leading_columns(&self, cols: usize) -> Batch {
        assert!(cols <= self.cols);
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in self.iter_rows() {
            data.extend_from_slice(&r[..cols]);
        }
        Batch {
            rows: self.rows,
            cols,
            data,
        }
    }
}

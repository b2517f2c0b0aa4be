use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Compressed sparse rows; used only to apply normalised adjacency to dense embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(Error::Contract(format!(
                "triplet ({r}, {c}) outside {rows}x{cols}"
            )));
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self { rows, cols, indptr, indices, values })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn matmul_dense(&self, x: &Matrix) -> Result<Matrix> {
        if self.cols != x.rows() {
            return Err(Error::dim("sparse matmul", self.shape(), x.shape()));
        }
        let mut out = Matrix::zeros(self.rows, x.cols());
        for i in 0..self.rows {
            for (j, a) in self.row_entries(i) {
                out.row_mut(i).iter_mut().zip(x.row(j)).for_each(|(o, v)| *o += a * v);
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let triplets = (0..self.rows)
            .flat_map(|i| self.row_entries(i).map(move |(j, v)| (j, i, v)))
            .collect();
        Self::from_triplets(self.cols, self.rows, triplets).expect("indices in range")
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row_entries(i) {
                m[(i, j)] += v;
            }
        }
        m
    }
}

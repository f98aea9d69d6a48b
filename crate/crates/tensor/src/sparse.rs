use crate::{Scalar, Tensor};

/// Compressed sparse row matrix used for adjacency and incidence products.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr<S> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> Csr<S> {
    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, S)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<S> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r},{c}) outside {rows}x{cols}");
            if last == Some((r, c)) {
                *values.last_mut().expect("non-empty") += v;
                continue;
            }
            last = Some((r, c));
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, S)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor<S> {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                t.set(r, c, v);
            }
        }
        t
    }

    /// `self * x` with `x` of shape `[cols x q]`.
    pub fn matmul(&self, x: &Tensor<S>) -> Tensor<S> {
        assert_eq!(self.cols, x.rows(), "sparse matmul inner dimension");
        let q = x.cols();
        let mut out = Tensor::zeros(&[self.rows, q]);
        let xd = x.data();
        let od = out.data_mut();
        for r in 0..self.rows {
            let dst = &mut od[r * q..(r + 1) * q];
            for (c, v) in self.row(r) {
                let src = &xd[c * q..(c + 1) * q];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        out
    }

    /// `self^T * g` with `g` of shape `[rows x q]`.
    pub fn t_matmul(&self, g: &Tensor<S>) -> Tensor<S> {
        assert_eq!(self.rows, g.rows(), "sparse transpose matmul inner dimension");
        let q = g.cols();
        let mut out = Tensor::zeros(&[self.cols, q]);
        let gd = g.data();
        let od = out.data_mut();
        for r in 0..self.rows {
            let src = &gd[r * q..(r + 1) * q];
            for (c, v) in self.row(r) {
                let dst = &mut od[c * q..(c + 1) * q];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_products_match_dense() {
        let csr = Csr::<f64>::from_triplets(
            3,
            2,
            vec![(0, 1, 2.0), (2, 0, -1.0), (2, 0, 0.5), (1, 1, 3.0)],
        );
        let x = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let dense = csr.to_dense();
        assert_eq!(dense.get(2, 0), -0.5);
        assert_eq!(csr.matmul(&x), dense.matmul(&x).unwrap());
        let g = Tensor::<f64>::from_rows(&[vec![1.0, 0.0], vec![0.5, 1.0], vec![2.0, -1.0]]);
        assert_eq!(csr.t_matmul(&g), dense.transpose().matmul(&g).unwrap());
    }
}

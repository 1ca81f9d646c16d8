//! Dense square matrices over wards (transition probabilities, flow masses, counts).

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix<F> {
    n: usize,
    data: Vec<F>,
}

impl<F: Scalar> SquareMatrix<F> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![F::zero(); n * n] }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            assert_eq!(r.len(), n, "row length must equal row count");
            data.extend_from_slice(r);
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: F) {
        self.data[i * self.n + j] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: F) {
        self.data[i * self.n + j] = self.data[i * self.n + j] + v;
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let n = self.n;
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[F]> {
        self.data.chunks(self.n.max(1)).take(self.n)
    }

    pub fn row_sum(&self, i: usize) -> F {
        self.row(i).iter().copied().sum()
    }

    pub fn total(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn to_rows(&self) -> Vec<Vec<F>> {
        self.rows().map(<[F]>::to_vec).collect()
    }

    pub fn map<G: Scalar>(&self, f: impl Fn(F) -> G) -> SquareMatrix<G> {
        SquareMatrix { n: self.n, data: self.data.iter().map(|x| f(*x)).collect() }
    }

    /// Off-diagonal entries in row-major edge order `(i, j, value)`.
    pub fn off_diagonal(&self) -> impl Iterator<Item = (usize, usize, F)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(move |(i, j)| (i, j, self.get(i, j)))
    }
}

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix. Vectors are `[1, n]`, scalars `[1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 2],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: [usize; 2], data: Vec<T>) -> Result<Self> {
        if shape[0] * shape[1] != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: [data.len(), 1],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 2]) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape[0] * shape[1]],
        }
    }

    pub fn filled(shape: [usize; 2], value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape[0] * shape[1]],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: [1, 1],
            data: vec![v],
        }
    }

    pub fn row(values: Vec<T>) -> Self {
        Tensor {
            shape: [1, values.len()],
            data: values,
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    left: [1, cols],
                    right: [1, r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor {
            shape: [rows.len(), cols],
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng>(shape: [usize; 2], bound: f64, rng: &mut R) -> Self {
        let data = (0..shape[0] * shape[1])
            .map(|_| T::of(rng.random_range(-bound..=bound)))
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape[1] + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }
}

/// `c[n, m] += a[n, k] * b[k, m]`, accumulating over `k` in order for every
/// output element, so a row of `c` never depends on how many rows `a` has.
pub(crate) fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// `c[n, m] += a[n, k] * b[m, k]^T`.
pub(crate) fn gemm_nt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (x, y) in arow.iter().zip(brow) {
                acc += *x * *y;
            }
            c[i * m + j] += acc;
        }
    }
}

/// `c[k, m] += a[n, k]^T * b[n, m]`.
pub(crate) fn gemm_tn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * m..(i + 1) * m];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let crow = &mut c[p * m..(p + 1) * m];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

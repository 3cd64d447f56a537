use crate::error::{shape_err, NnError, Result};
use crate::real::Real;

/// Dense row-major tensor. Almost every op in this crate works on rank-2
/// `[rows, cols]` tensors; a rank-1 tensor of length `n` behaves as `[1, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(
                "from_vec",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            );
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// `[1, n]` tensor.
    pub fn row(values: &[S]) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    /// `[1, n]` tensor from `f64` values.
    pub fn row_f64(values: &[f64]) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values.iter().map(|&v| S::c(v)).collect(),
        }
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// Stacks equal-length rows into a `[rows.len(), n]` tensor.
    pub fn from_rows<R: AsRef<[S]>>(rows: &[R]) -> Result<Self> {
        let n = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * n);
        for r in rows {
            let r = r.as_ref();
            if r.len() != n {
                return shape_err("from_rows", "ragged rows");
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor {
            shape: vec![rows.len(), n],
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.data.len() / self.shape[0].max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(NnError::NonFinite { op })
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Self, op: &'static str, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.rows() != other.rows() || self.cols() != other.cols() {
            return shape_err(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            );
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: S) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.data.len() != other.data.len() {
            return shape_err(
                "add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            );
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Adds a `[1, n]` row to every row.
    pub fn add_row(&self, bias: &Self) -> Result<Self> {
        let n = self.cols();
        if bias.len() != n {
            return shape_err("add_row", format!("{:?} + {:?}", self.shape, bias.shape));
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(n.max(1)) {
            for (v, &b) in row.iter_mut().zip(&bias.data) {
                *v = *v + b;
            }
        }
        Ok(out)
    }

    /// Multiplies row `r` by `col[r]`, with `col` of shape `[rows, 1]`.
    pub fn mul_col(&self, col: &Self) -> Result<Self> {
        let (m, n) = (self.rows(), self.cols());
        if col.len() != m {
            return shape_err("mul_col", format!("{:?} * {:?}", self.shape, col.shape));
        }
        let mut out = self.clone();
        for (r, row) in out.data.chunks_mut(n.max(1)).enumerate() {
            let s = col.data[r];
            for v in row.iter_mut() {
                *v = *v * s;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = (self.rows(), self.cols());
        if other.rows() != k {
            return shape_err(
                "matmul",
                format!("{:?} @ {:?}", self.shape, other.shape),
            );
        }
        let n = other.cols();
        let mut out = Tensor::zeros(&[m, n]);
        S::gemm(
            m,
            k,
            n,
            &self.data,
            (k as isize, 1),
            &other.data,
            (n as isize, 1),
            S::zero(),
            &mut out.data,
        );
        Ok(out)
    }

    /// `self @ w[row_offset .. row_offset + self.cols(), :]` without copying `w`.
    pub fn matmul_rows_of(&self, w: &Self, row_offset: usize) -> Result<Self> {
        let (m, k) = (self.rows(), self.cols());
        let n = w.cols();
        if row_offset + k > w.rows() {
            return shape_err(
                "matmul_rows_of",
                format!("{:?} @ {:?}[{}..]", self.shape, w.shape, row_offset),
            );
        }
        let mut out = Tensor::zeros(&[m, n]);
        S::gemm(
            m,
            k,
            n,
            &self.data,
            (k as isize, 1),
            &w.data[row_offset * n..],
            (n as isize, 1),
            S::zero(),
            &mut out.data,
        );
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let (m, n) = (self.rows(), self.cols());
        let mut data = Vec::with_capacity(m * n);
        for c in 0..n {
            for r in 0..m {
                data.push(self.data[r * n + c]);
            }
        }
        Tensor {
            shape: vec![n, m],
            data,
        }
    }

    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let m = match parts.first() {
            Some(p) => p.rows(),
            None => return shape_err("concat_cols", "no inputs"),
        };
        if parts.iter().any(|p| p.rows() != m) {
            return shape_err("concat_cols", "row counts differ");
        }
        let n: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for p in parts {
                data.extend_from_slice(p.row_slice(r));
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data,
        })
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Self> {
        let (m, n) = (self.rows(), self.cols());
        if start + len > n {
            return shape_err("slice_cols", format!("{}..{} of {}", start, start + len, n));
        }
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&self.data[r * n + start..r * n + start + len]);
        }
        Ok(Tensor {
            shape: vec![m, len],
            data,
        })
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        let (m, n) = (self.rows(), self.cols());
        if start + len > m {
            return shape_err("slice_rows", format!("{}..{} of {}", start, start + len, m));
        }
        Ok(Tensor {
            shape: vec![len, n],
            data: self.data[start * n..(start + len) * n].to_vec(),
        })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let (m, n) = (self.rows(), self.cols());
        let mut data = Vec::with_capacity(idx.len() * n);
        for &r in idx {
            if r >= m {
                return shape_err("select_rows", format!("row {} of {}", r, m));
            }
            data.extend_from_slice(&self.data[r * n..(r + 1) * n]);
        }
        Ok(Tensor {
            shape: vec![idx.len(), n],
            data,
        })
    }

    /// Each row repeated `times` times consecutively.
    pub fn repeat_rows(&self, times: usize) -> Self {
        let (m, n) = (self.rows(), self.cols());
        let mut data = Vec::with_capacity(m * n * times);
        for r in 0..m {
            for _ in 0..times {
                data.extend_from_slice(&self.data[r * n..(r + 1) * n]);
            }
        }
        Tensor {
            shape: vec![m * times, n],
            data,
        }
    }

    pub fn sum_cols(&self) -> Self {
        let (m, n) = (self.rows(), self.cols());
        let data = (0..m)
            .map(|r| self.data[r * n..(r + 1) * n].iter().copied().sum())
            .collect();
        Tensor {
            shape: vec![m, 1],
            data,
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn log_softmax_rows(&self) -> Self {
        let (m, n) = (self.rows(), self.cols());
        let mut out = self.clone();
        for r in 0..m {
            let row = &mut out.data[r * n..(r + 1) * n];
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        out
    }

    pub fn softmax_rows(&self) -> Self {
        self.log_softmax_rows().map(|v| v.exp())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    pub fn cast<T: Real>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::c(v.f64())).collect(),
        }
    }
}

pub fn log_sum_exp<S: Real>(values: &[S]) -> S {
    let max = values
        .iter()
        .copied()
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    if !max.is_finite() {
        return max;
    }
    let s: S = values.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

#[inline]
pub fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

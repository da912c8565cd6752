use crate::error::{Error, Result};

/// Dense row-major tensor of 64-bit floats.
///
/// Rank 0 (scalar), rank 1 (vector) and rank 2 (matrix) shapes are used
/// throughout the crate. Matrix kernels treat a vector of length `n` as a
/// `1 × n` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor shape {shape:?} has a zero-sized axis"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Contract(format!(
                "tensor shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_parts(vec![], vec![value])
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor::from_parts(vec![values.len()], values)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let r = rows.len();
        if r == 0 {
            return Err(Error::Contract("matrix needs at least one row".into()));
        }
        let c = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != c {
                return Err(Error::Contract(format!(
                    "row {i} has {} entries, expected {c}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// `(rows, cols)` under the matrix view of this tensor.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1..].iter().product()),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.data.len(), other.data.len());
        Tensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Reinterprets the values under a new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = self.dims2();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_parts(vec![c, r], out)
    }

    /// `self · other` for `n×p` and `p×q`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (n, p) = self.dims2();
        let (p2, q) = other.dims2();
        if p != p2 {
            return Err(Error::dimension("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; n * q];
        for i in 0..n {
            let a_row = &self.data[i * p..(i + 1) * p];
            let o_row = &mut out[i * q..(i + 1) * q];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * q..(k + 1) * q];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor::from_parts(vec![n, q], out))
    }

    /// `self · otherᵀ` for `n×p` and `q×p`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (n, p) = self.dims2();
        let (q, p2) = other.dims2();
        if p != p2 {
            return Err(Error::dimension("matmul_nt", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; n * q];
        for i in 0..n {
            let a_row = &self.data[i * p..(i + 1) * p];
            for j in 0..q {
                let b_row = &other.data[j * p..(j + 1) * p];
                out[i * q + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Ok(Tensor::from_parts(vec![n, q], out))
    }

    /// `selfᵀ · other` for `p×n` and `p×q`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        let (p, n) = self.dims2();
        let (p2, q) = other.dims2();
        if p != p2 {
            return Err(Error::dimension("matmul_tn", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; n * q];
        for k in 0..p {
            let a_row = &self.data[k * n..(k + 1) * n];
            let b_row = &other.data[k * q..(k + 1) * q];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out[i * q..(i + 1) * q];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor::from_parts(vec![n, q], out))
    }

    /// Column sums of the matrix view, as a vector.
    pub fn col_sums(&self) -> Tensor {
        let (r, c) = self.dims2();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(&self.data[i * c..(i + 1) * c]) {
                *o += v;
            }
        }
        Tensor::vector(out)
    }

    /// Row-wise softmax with max-subtraction.
    pub fn softmax_rows(&self) -> Tensor {
        let (r, c) = self.dims2();
        let mut out = self.data.clone();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Tensor::from_parts(self.shape.clone(), out)
    }

    /// Row-wise log-softmax via log-sum-exp.
    pub fn log_softmax_rows(&self) -> Tensor {
        let (r, c) = self.dims2();
        let mut out = self.data.clone();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Tensor::from_parts(self.shape.clone(), out)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let b = Tensor::from_rows(&[[1.0, 0.5], [-1.0, 2.0], [0.0, 1.0]]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.data(), &[-1.0, 7.5, -1.0, 18.0]);
        assert_eq!(a.matmul_nt(&b.transpose()).unwrap(), ab);
        assert_eq!(a.transpose().matmul_tn(&b).unwrap(), ab);
        let err = a.matmul(&a).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_is_stable_and_normalized() {
        let t = Tensor::from_rows(&[[1000.0, 1000.0], [0.0, -1000.0]]).unwrap();
        let s = t.softmax_rows();
        assert_eq!(s.row(0), &[0.5, 0.5]);
        assert!((s.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let l = t.log_softmax_rows();
        assert!((l.get(0, 0) + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        assert_eq!(sigmoid(0.0), 0.5);
        for x in [0.3, 2.0, 40.0, 800.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }
}

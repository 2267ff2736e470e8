use crate::error::{Error, Result};

/// Dense row-major `f64` tensor of rank 0, 1 or 2.
///
/// Rank-1 tensors behave as a single row and rank-0 as `1×1` in every
/// matrix operation, so most of the crate only thinks in `rows × cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > 2 {
            return Err(Error::shape(
                "tensor",
                format!("rank {} unsupported", shape.len()),
            ));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::from_parts(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor::from_parts(rows, cols, vec![value; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_parts(1, 1, vec![v])
    }

    /// A `1×n` row.
    pub fn row(values: Vec<f64>) -> Self {
        let n = values.len();
        Tensor::from_parts(1, n, values)
    }

    /// An `n×1` column.
    pub fn column(values: Vec<f64>) -> Self {
        let n = values.len();
        Tensor::from_parts(n, 1, values)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        Ok(Tensor::from_parts(r, c, rows.concat()))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// The single value of a `1×1` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows() == other.rows() && self.cols() == other.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_add_assign(&mut self, k: f64, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_parts(c, r, out)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols() != other.rows() {
            return Err(Error::shape(
                "matmul",
                format!(
                    "{}x{} · {}x{}",
                    self.rows(),
                    self.cols(),
                    other.rows(),
                    other.cols()
                ),
            ));
        }
        let mut out = Tensor::zeros(self.rows(), other.cols());
        gemm(false, self, false, other, &mut out, 0.0);
        Ok(out)
    }
}

/// `out = beta·out + op(a)·op(b)` where `op` optionally transposes.
pub(crate) fn gemm(ta: bool, a: &Tensor, tb: bool, b: &Tensor, out: &mut Tensor, beta: f64) {
    let (ar, ac) = (a.rows(), a.cols());
    let (br, bc) = (b.rows(), b.cols());
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!((out.rows(), out.cols()), (m, n), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in out.data.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if ta {
        (1, ac as isize)
    } else {
        (ac as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, bc as isize)
    } else {
        (bc as isize, 1)
    };
    // SAFETY: strides describe exactly the row-major buffers of `a`, `b` and `out`,
    // whose lengths were checked against their shapes above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

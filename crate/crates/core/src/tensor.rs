//! Dense K-mode tensors and the multilinear primitives the rest of the crate
//! is built on.
//!
//! Storage is column-major (first index fastest) for both tensors and
//! matrices, so `vec(T)` is the raw buffer. Unfoldings follow the
//! Kolda–Bader convention: in `T_(k)` the fibers along mode `k` are the
//! columns, and the remaining mode indices vary with the smallest mode
//! fastest. With this layout the vectorized Tucker identity reads
//!
//! ```text
//! vec(G ×_1 A_1 ⋯ ×_K A_K) = (A_K ⊗ ⋯ ⊗ A_1) vec(G)
//! ```

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape must have at least one mode")]
    EmptyShape,
    #[error("dimension {index} is zero")]
    ZeroDim { index: usize },
    #[error("element count overflows usize")]
    Overflow,
    #[error("mode {mode} out of range for a {order}-mode tensor")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("buffer length {got} does not match expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Ordered mode sizes `(m_1, …, m_K)`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(TensorError::EmptyShape);
        }
        let mut total: usize = 1;
        for (index, &d) in dims.iter().enumerate() {
            if d == 0 {
                return Err(TensorError::ZeroDim { index });
            }
            total = total.checked_mul(d).ok_or(TensorError::Overflow)?;
        }
        Ok(Self(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn dim(&self, mode: usize) -> usize {
        self.0[mode]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Shape with mode `mode` replaced by `size`.
    pub fn with_dim(&self, mode: usize, size: usize) -> Result<Self> {
        self.check_mode(mode)?;
        let mut dims = self.0.clone();
        dims[mode] = size;
        Self::new(dims)
    }

    pub fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(TensorError::ModeOutOfRange {
                mode,
                order: self.order(),
            });
        }
        Ok(())
    }

    /// `(∏_{j<k} m_j, m_k, ∏_{j>k} m_j)`.
    fn split(&self, mode: usize) -> (usize, usize, usize) {
        let left = self.0[..mode].iter().product();
        let right = self.0[mode + 1..].iter().product();
        (left, self.0[mode], right)
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "({})", parts.join("×"))
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Column-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}×{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|j| format!("{:.6}", self.get(i, j)))
                .collect();
            writeln!(f, "  {}", row.join(", "))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let expected = rows.checked_mul(cols).ok_or(TensorError::Overflow)?;
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; handy for literals in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(TensorError::ShapeMismatch("ragged rows".into()));
        }
        Ok(Self::from_fn(r, c, |i, j| rows[i][j]))
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i + self.rows * j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i + self.rows * j] = v;
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul {}×{} · {}×{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let out_col = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for l in 0..self.cols {
                let b = other.get(l, j);
                if b == 0.0 {
                    continue;
                }
                for (o, &a) in out_col.iter_mut().zip(self.col(l)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`, without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Self> {
        if self.rows != other.rows {
            return Err(TensorError::ShapeMismatch(format!(
                "t_matmul ({}×{})ᵀ · {}×{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self::from_fn(self.cols, other.cols, |i, j| {
            dot(self.col(i), other.col(j))
        }))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Self> {
        self.matmul(&other.transpose())
    }

    /// `selfᵀ self`.
    pub fn gram(&self) -> Self {
        Self::from_fn(self.cols, self.cols, |i, j| dot(self.col(i), self.col(j)))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: f64, other: &Matrix, b: f64) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Self> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Self> {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `‖MᵀM − I‖_F`.
    pub fn orthonormality_residual(&self) -> f64 {
        let mut g = self.gram();
        for i in 0..self.cols {
            let v = g.get(i, i) - 1.0;
            g.set(i, i, v);
        }
        g.frobenius_norm()
    }

    fn check_same(&self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(TensorError::ShapeMismatch(format!(
                "{}×{} vs {}×{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let rows = a.rows.checked_mul(b.rows).ok_or(TensorError::Overflow)?;
    let cols = a.cols.checked_mul(b.cols).ok_or(TensorError::Overflow)?;
    rows.checked_mul(cols).ok_or(TensorError::Overflow)?;
    Ok(Matrix::from_fn(rows, cols, |i, j| {
        a.get(i / b.rows, j / b.cols) * b.get(i % b.rows, j % b.cols)
    }))
}

/// Dense K-mode tensor, column-major.
#[derive(Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseTensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl DenseTensor {
    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(TensorError::LengthMismatch {
                expected: shape.numel(),
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.order()
    }

    /// Column-major flat view; this is `vec(T)`.
    pub fn vec(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.order());
        let mut stride = 1;
        let mut pos = 0;
        for (&i, &d) in index.iter().zip(self.shape.dims()) {
            debug_assert!(i < d);
            pos += i * stride;
            stride *= d;
        }
        pos
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.linear_index(index)]
    }

    pub fn set(&mut self, index: &[usize], v: f64) {
        let pos = self.linear_index(index);
        self.data[pos] = v;
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: f64, other: &DenseTensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn add(&self, other: &DenseTensor) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    fn check_same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch(format!(
                "{} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Mode-`mode` matricization `T_(k)` (0-based mode index).
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        self.shape.check_mode(mode)?;
        let (left, mid, right) = self.shape.split(mode);
        let cols = left * right;
        let mut out = vec![0.0; mid * cols];
        for b in 0..right {
            for i in 0..mid {
                let src = &self.data[left * (i + mid * b)..left * (i + mid * b + 1)];
                for (a, &v) in src.iter().enumerate() {
                    out[i + mid * (a + left * b)] = v;
                }
            }
        }
        Matrix::from_col_major(mid, cols, out)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: &Matrix, mode: usize, target: &Shape) -> Result<Self> {
        target.check_mode(mode)?;
        let (left, mid, right) = target.split(mode);
        if m.rows() != mid || m.cols() != left * right {
            return Err(TensorError::ShapeMismatch(format!(
                "cannot fold {}×{} into {} along mode {}",
                m.rows(),
                m.cols(),
                target,
                mode
            )));
        }
        let mut data = vec![0.0; target.numel()];
        for b in 0..right {
            for i in 0..mid {
                let dst = &mut data[left * (i + mid * b)..left * (i + mid * b + 1)];
                for (a, v) in dst.iter_mut().enumerate() {
                    *v = m.get(i, a + left * b);
                }
            }
        }
        Ok(Self {
            shape: target.clone(),
            data,
        })
    }

    /// `self ×_mode m`; mode size `m.cols()` becomes `m.rows()`.
    pub fn mode_product(&self, m: &Matrix, mode: usize) -> Result<Self> {
        self.shape.check_mode(mode)?;
        let (left, mid, right) = self.shape.split(mode);
        if m.cols() != mid {
            return Err(TensorError::ShapeMismatch(format!(
                "mode-{} product of {} with {}×{}",
                mode,
                self.shape,
                m.rows(),
                m.cols()
            )));
        }
        let new_mid = m.rows();
        let shape = self.shape.with_dim(mode, new_mid)?;
        let mut data = vec![0.0; shape.numel()];
        for b in 0..right {
            for i in 0..mid {
                let src = &self.data[left * (i + mid * b)..left * (i + mid * b + 1)];
                for p in 0..new_mid {
                    let w = m.get(p, i);
                    if w == 0.0 {
                        continue;
                    }
                    let dst = &mut data[left * (p + new_mid * b)..left * (p + new_mid * b + 1)];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        Ok(Self { shape, data })
    }

    /// `self ×_mode mᵀ`.
    pub fn mode_product_t(&self, m: &Matrix, mode: usize) -> Result<Self> {
        self.mode_product(&m.transpose(), mode)
    }
}

/// `⟨a, b⟩ = Σ a_i b_i` over identically shaped tensors.
pub fn inner(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(dot(&a.data, &b.data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t222() -> DenseTensor {
        DenseTensor::from_vec(
            Shape::new([2, 2, 2]).unwrap(),
            (1..=8).map(f64::from).collect(),
        )
        .unwrap()
    }

    #[test]
    fn unfold_mode1_by_hand() {
        let m = t222().unfold(0).unwrap();
        let expected = Matrix::from_rows(&[&[1., 3., 5., 7.], &[2., 4., 6., 8.]]).unwrap();
        assert_eq!(m, expected);
    }

    #[test]
    fn unfold_other_modes_by_hand() {
        // Mode 2 fibers: (1,3), (2,4), (5,7), (6,8); columns ordered i1 fastest then i3.
        let m = t222().unfold(1).unwrap();
        let expected = Matrix::from_rows(&[&[1., 2., 5., 6.], &[3., 4., 7., 8.]]).unwrap();
        assert_eq!(m, expected);
        let m = t222().unfold(2).unwrap();
        let expected = Matrix::from_rows(&[&[1., 2., 3., 4.], &[5., 6., 7., 8.]]).unwrap();
        assert_eq!(m, expected);
    }

    #[test]
    fn unfold_single_mode_is_column() {
        let t = DenseTensor::from_vec(Shape::new([3]).unwrap(), vec![4., 5., 6.]).unwrap();
        let m = t.unfold(0).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 1));
        assert_eq!(m.data(), &[4., 5., 6.]);
        let back = DenseTensor::fold(&m, 0, t.shape()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn unfold_zeros() {
        let t = DenseTensor::zeros(Shape::new([2, 3, 4]).unwrap());
        let m = t.unfold(1).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 8));
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unfold_bad_mode() {
        assert!(matches!(
            t222().unfold(3),
            Err(TensorError::ModeOutOfRange { mode: 3, order: 3 })
        ));
    }

    #[test]
    fn fold_hand_example() {
        let m = Matrix::from_rows(&[&[1., 3., 5., 7.], &[2., 4., 6., 8.]]).unwrap();
        let t = DenseTensor::fold(&m, 0, &Shape::new([2, 2, 2]).unwrap()).unwrap();
        assert_eq!(t.vec(), &[1., 2., 3., 4., 5., 6., 7., 8.]);
    }

    #[test]
    fn fold_size_mismatch() {
        let m = Matrix::zeros(2, 3);
        assert!(DenseTensor::fold(&m, 0, &Shape::new([2, 2, 2]).unwrap()).is_err());
    }

    #[test]
    fn mode_product_sums_pairs() {
        let ones = Matrix::from_rows(&[&[1., 1.]]).unwrap();
        let t = t222().mode_product(&ones, 0).unwrap();
        assert_eq!(t.shape().dims(), &[1, 2, 2]);
        assert_eq!(t.vec(), &[3., 7., 11., 15.]);
    }

    #[test]
    fn mode_product_identity() {
        for k in 0..3 {
            let t = t222().mode_product(&Matrix::identity(2), k).unwrap();
            assert_eq!(t, t222());
        }
    }

    #[test]
    fn mode_product_mismatch() {
        assert!(t222().mode_product(&Matrix::zeros(2, 3), 1).is_err());
    }

    #[test]
    fn kron_by_hand() {
        let a = Matrix::from_rows(&[&[1., 2.]]).unwrap();
        let b = Matrix::from_rows(&[&[3.], &[4.]]).unwrap();
        let expected = Matrix::from_rows(&[&[3., 6.], &[4., 8.]]).unwrap();
        assert_eq!(kron(&a, &b).unwrap(), expected);
        assert_eq!(
            kron(&Matrix::identity(2), &Matrix::identity(3)).unwrap(),
            Matrix::identity(6)
        );
    }

    #[test]
    fn vec_is_column_major() {
        let t = DenseTensor::from_vec(Shape::new([2, 2]).unwrap(), vec![1., 0., 0., 1.]).unwrap();
        assert_eq!(t.get(&[0, 0]), 1.0);
        assert_eq!(t.get(&[1, 0]), 0.0);
        assert_eq!(t.vec(), &[1., 0., 0., 1.]);
    }

    #[test]
    fn inner_examples() {
        let t = t222();
        assert_eq!(inner(&t, &t).unwrap(), 204.0);
        assert_eq!(inner(&t, &t).unwrap(), t.frobenius_norm_sq());
        let z = DenseTensor::zeros(t.shape().clone());
        assert_eq!(inner(&t, &z).unwrap(), 0.0);
        let other = DenseTensor::zeros(Shape::new([2, 4]).unwrap());
        assert!(inner(&t, &other).is_err());
    }

    #[test]
    fn shape_validation() {
        assert_eq!(Shape::new(Vec::<usize>::new()), Err(TensorError::EmptyShape));
        assert_eq!(Shape::new([3, 0]), Err(TensorError::ZeroDim { index: 1 }));
        assert_eq!(Shape::new([usize::MAX, 3]), Err(TensorError::Overflow));
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 - 2.5);
        let b = Matrix::from_fn(4, 2, |i, j| (i as f64) * 0.5 - j as f64);
        let direct = a.transpose().matmul(&b).unwrap();
        assert_eq!(a.t_matmul(&b).unwrap(), direct);
        let c = Matrix::from_fn(2, 3, |i, j| (i + j) as f64);
        assert_eq!(a.matmul_t(&c).unwrap(), a.matmul(&c.transpose()).unwrap());
        assert_eq!(a.gram(), a.t_matmul(&a).unwrap());
    }
}

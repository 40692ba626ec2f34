//! Dense row-major tensors, matrices and the index arithmetic that maps
//! matrix rows/columns onto tensor multi-indices.
//!
//! All indices are 0-based. Multi-indices use big-endian mixed radix: the
//! first mode is the most significant digit, so the flat offset of a
//! multi-index into a row-major tensor is exactly [`multi_to_linear`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mode sizes of a tensor. Every mode is at least 1 and there is at least one mode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::shape("a shape needs at least one mode"));
        }
        if let Some(k) = dims.iter().position(|&n| n == 0) {
            return Err(Error::shape(format!("mode {k} of {dims:?} has size 0")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| Error::shape(format!("element count of {dims:?} overflows")))?;
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    /// Number of modes.
    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides (last mode has stride 1).
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for k in (0..self.0.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.0[k + 1];
        }
        strides
    }

    /// Copy of this shape with mode `mode` resized to `size`.
    pub fn with_mode(&self, mode: usize, size: usize) -> Result<Self> {
        let mut dims = self.0.clone();
        match dims.get_mut(mode) {
            Some(d) => *d = size,
            None => return Err(Error::shape(format!("mode {mode} out of range for {self}"))),
        }
        Shape::new(dims)
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "({})", parts.join("x"))
    }
}

/// Mixed-radix digits of `p` in bases `dims`, most significant first.
pub fn linear_to_multi(p: usize, dims: &Shape) -> Result<Vec<usize>> {
    let extent = dims.numel();
    if p >= extent {
        return Err(Error::Range { index: p, extent });
    }
    let mut idx = vec![0; dims.order()];
    let mut rest = p;
    for (k, &n) in dims.dims().iter().enumerate().rev() {
        idx[k] = rest % n;
        rest /= n;
    }
    Ok(idx)
}

/// Inverse of [`linear_to_multi`].
pub fn multi_to_linear(idx: &[usize], dims: &Shape) -> Result<usize> {
    if idx.len() != dims.order() {
        return Err(Error::shape(format!(
            "multi-index of length {} for shape {dims}",
            idx.len()
        )));
    }
    let mut p = 0;
    for (&i, &n) in idx.iter().zip(dims.dims()) {
        if i >= n {
            return Err(Error::Range { index: i, extent: n });
        }
        p = p * n + i;
    }
    Ok(p)
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(format!(
                "vector of length {} for a {}x{} matrix",
                x.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(self
            .data
            .chunks_exact(self.cols.max(1))
            .take(self.rows)
            .map(|row| dot(row, x))
            .collect())
    }

    /// `selfᵀ · y`.
    pub fn matvec_transposed(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::shape(format!(
                "vector of length {} for the transpose of a {}x{} matrix",
                y.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (row, &yr) in self.data.chunks_exact(self.cols.max(1)).zip(y) {
            if yr != 0.0 {
                axpy(yr, row, &mut out);
            }
        }
        Ok(out)
    }

    /// `self += scale · a ⊗ b`.
    pub fn add_outer(&mut self, scale: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (row, &ar) in self.data.chunks_exact_mut(self.cols.max(1)).zip(a) {
            let s = scale * ar;
            if s != 0.0 {
                axpy(s, b, row);
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// A strided `rows × cols` view: element `(i, j)` sits at `i * rs + j * cs`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Strided {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Strided {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Strided {
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Strided {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c += a · b` on strided views.
pub(crate) fn gemm_acc(a: &[f64], av: Strided, b: &[f64], bv: Strided, c: &mut [f64], cv: Strided) {
    assert_eq!(av.cols, bv.rows, "inner dimensions differ");
    assert_eq!((av.rows, bv.cols), (cv.rows, cv.cols), "output shape differs");
    assert!(a.len() >= av.span() && b.len() >= bv.span() && c.len() >= cv.span());
    if cv.rows == 0 || cv.cols == 0 || av.cols == 0 {
        return;
    }
    let s = |v: usize| v as isize;
    // SAFETY: the asserts above keep every strided access inside its slice,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            av.rows,
            av.cols,
            bv.cols,
            1.0,
            a.as_ptr(),
            s(av.rs),
            s(av.cs),
            b.as_ptr(),
            s(bv.rs),
            s(bv.cs),
            1.0,
            c.as_mut_ptr(),
            s(cv.rs),
            s(cv.cs),
        );
    }
}

/// Row-major dense tensor of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        DenseTensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.numel() {
            return Err(Error::shape(format!(
                "{} values for shape {shape} ({} elements)",
                values.len(),
                shape.numel()
            )));
        }
        Ok(DenseTensor { shape, values })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.values[multi_to_linear(idx, &self.shape)?])
    }

    /// Same values under a new shape with the same element count.
    pub fn reshaped(self, shape: Shape) -> Result<Self> {
        DenseTensor::from_vec(shape, self.values)
    }
}

/// `v` viewed as a tensor of shape `dims`, without copying.
pub fn reshape_vector(v: Vec<f64>, dims: Shape) -> Result<DenseTensor> {
    if v.len() != dims.numel() {
        return Err(Error::shape(format!(
            "cannot reshape a vector of length {} to {dims}",
            v.len()
        )));
    }
    DenseTensor::from_vec(dims, v)
}

/// Mode-`mode` product `t ×_mode m`: contracts mode `mode` of `t` (size `r_in`)
/// against the columns of `m` (`r_out × r_in`).
pub fn mode_product(t: &DenseTensor, m: &Matrix, mode: usize) -> Result<DenseTensor> {
    let dims = t.shape.dims();
    let Some(&r_in) = dims.get(mode) else {
        return Err(Error::shape(format!(
            "mode {mode} out of range for tensor of shape {}",
            t.shape
        )));
    };
    if m.cols != r_in {
        return Err(Error::shape(format!(
            "mode {mode} has size {r_in} but the matrix is {}x{}",
            m.rows, m.cols
        )));
    }
    let outer: usize = dims[..mode].iter().product();
    let inner: usize = dims[mode + 1..].iter().product();
    let out_shape = t.shape.with_mode(mode, m.rows)?;
    let mut out = vec![0.0; outer * m.rows * inner];
    for a in 0..outer {
        let src = &t.values[a * r_in * inner..(a + 1) * r_in * inner];
        let dst = &mut out[a * m.rows * inner..(a + 1) * m.rows * inner];
        for o in 0..m.rows {
            let dst_row = &mut dst[o * inner..(o + 1) * inner];
            for (i, &w) in m.row(o).iter().enumerate() {
                if w != 0.0 {
                    axpy(w, &src[i * inner..(i + 1) * inner], dst_row);
                }
            }
        }
    }
    DenseTensor::from_vec(out_shape, out)
}

/// `target += scale · v_1 ⊗ v_2 ⊗ … ⊗ v_d`.
pub fn outer_accumulate(vectors: &[&[f64]], target: &mut DenseTensor, scale: f64) -> Result<()> {
    let dims = target.shape.dims();
    if vectors.len() != dims.len() {
        return Err(Error::shape(format!(
            "{} vectors for a tensor of order {}",
            vectors.len(),
            dims.len()
        )));
    }
    for (k, (v, &n)) in vectors.iter().zip(dims).enumerate() {
        if v.len() != n {
            return Err(Error::shape(format!(
                "vector {k} has length {} but mode {k} has size {n}",
                v.len()
            )));
        }
    }
    if scale == 0.0 {
        return Ok(());
    }
    // Expand mode by mode: after step k `acc` holds scale · v_1 ⊗ … ⊗ v_k.
    let mut acc = vec![scale];
    for v in vectors {
        let mut next = Vec::with_capacity(acc.len() * v.len());
        for &a in &acc {
            next.extend(v.iter().map(|&x| a * x));
        }
        acc = next;
    }
    for (t, a) in target.values.iter_mut().zip(&acc) {
        *t += a;
    }
    Ok(())
}

/// Contracts `a` and `b` over every mode except `mode`, giving the
/// `a.dims[mode] × b.dims[mode]` matrix `Σ a[.., i, ..] · b[.., j, ..]`.
/// All other modes must agree.
pub fn contract_all_but(a: &DenseTensor, b: &DenseTensor, mode: usize) -> Result<Matrix> {
    let (da, db) = (a.shape.dims(), b.shape.dims());
    if da.len() != db.len() || mode >= da.len() {
        return Err(Error::shape(format!(
            "cannot contract {} with {} leaving mode {mode}",
            a.shape, b.shape
        )));
    }
    if da.iter().zip(db).enumerate().any(|(k, (x, y))| k != mode && x != y) {
        return Err(Error::shape(format!(
            "{} and {} differ outside mode {mode}",
            a.shape, b.shape
        )));
    }
    let outer: usize = da[..mode].iter().product();
    let inner: usize = da[mode + 1..].iter().product();
    let (na, nb) = (da[mode], db[mode]);
    let mut out = Matrix::zeros(na, nb);
    for o in 0..outer {
        let sa = &a.values[o * na * inner..(o + 1) * na * inner];
        let sb = &b.values[o * nb * inner..(o + 1) * nb * inner];
        for i in 0..na {
            let ra = &sa[i * inner..(i + 1) * inner];
            for j in 0..nb {
                let rb = &sb[j * inner..(j + 1) * inner];
                out.data[i * nb + j] += dot(ra, rb);
            }
        }
    }
    Ok(out)
}

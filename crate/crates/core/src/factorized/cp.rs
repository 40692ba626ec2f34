use super::TensorizedShape;
use crate::error::Result;
use crate::tensor::{axpy, gemm_acc, outer_accumulate, DenseTensor, Matrix, Shape, Strided};

/// CP factors: `𝒲(i, j) = Σ_r Π_k gm_k[i_k, r] · gn_k[j_k, r]`.
///
/// Column `r` of `gm[k]` (`m_k × R`) and `gn[k]` (`n_k × R`) are the per-mode
/// vectors of the `r`-th rank-one term.
#[derive(Debug, Clone, PartialEq)]
pub struct CpFactors {
    shape: TensorizedShape,
    rank: usize,
    gm: Vec<Matrix>,
    gn: Vec<Matrix>,
}

impl CpFactors {
    pub fn zeros(shape: TensorizedShape, rank: usize) -> Self {
        let gm = shape.m_dims().dims().iter().map(|&m| Matrix::zeros(m, rank)).collect();
        let gn = shape.n_dims().dims().iter().map(|&n| Matrix::zeros(n, rank)).collect();
        CpFactors { shape, rank, gm, gn }
    }

    pub fn from_factors(shape: TensorizedShape, gm: Vec<Matrix>, gn: Vec<Matrix>) -> Result<Self> {
        let rank = gm.first().map_or(0, Matrix::cols);
        let mut cp = CpFactors::zeros(shape, rank);
        let fits = |have: &[Matrix], want: &[Matrix]| {
            have.len() == want.len()
                && have
                    .iter()
                    .zip(want)
                    .all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols())
        };
        if rank == 0 || !fits(&gm, &cp.gm) || !fits(&gn, &cp.gn) {
            return Err(crate::Error::shape(format!(
                "CP factor matrices do not match shape {} with rank {rank}",
                cp.shape
            )));
        }
        cp.gm = gm;
        cp.gn = gn;
        Ok(cp)
    }

    pub fn shape(&self) -> &TensorizedShape {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn gm(&self) -> &[Matrix] {
        &self.gm
    }

    pub fn gn(&self) -> &[Matrix] {
        &self.gn
    }

    pub(super) fn slices(&self) -> Vec<&[f64]> {
        self.gm.iter().chain(&self.gn).map(Matrix::as_slice).collect()
    }

    pub(super) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.gm
            .iter_mut()
            .chain(self.gn.iter_mut())
            .map(Matrix::as_mut_slice)
            .collect()
    }

    pub(super) fn materialize(&self) -> Matrix {
        let dims: Vec<usize> = self
            .shape
            .m_dims()
            .dims()
            .iter()
            .chain(self.shape.n_dims().dims())
            .copied()
            .collect();
        let mut w = DenseTensor::zeros(Shape::new(dims).expect("valid tensorized shape"));
        for r in 0..self.rank {
            let cols: Vec<Vec<f64>> = self.gm.iter().chain(&self.gn).map(|f| f.column(r)).collect();
            let views: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            outer_accumulate(&views, &mut w, 1.0).expect("factor columns match mode sizes");
        }
        Matrix::from_vec(self.shape.rows(), self.shape.cols(), w.into_values()).expect("element count is M·N")
    }

    pub(super) fn apply(&self, x: &[f64]) -> Vec<f64> {
        let s = rank_contract(x, self.shape.n_dims(), &self.gn, self.rank);
        rank_expand(&s, self.shape.m_dims(), &self.gm)
    }

    pub(super) fn accumulate_vjp(&self, x: &[f64], upstream: &[f64], grad: &mut CpFactors) -> Vec<f64> {
        // y = Σ_r s_r ⊗_k gm_k[:, r] with s_r = <x, ⊗_k gn_k[:, r]>.
        let (m_dims, n_dims) = (self.shape.m_dims().dims(), self.shape.n_dims().dims());
        let rank = self.rank;
        let s = contract_modes(x, n_dims, &self.gn, rank, None);
        let t = contract_modes(upstream, m_dims, &self.gm, rank, None);
        for (k, g) in grad.gm.iter_mut().enumerate() {
            let partial = contract_modes(upstream, m_dims, &self.gm, rank, Some(k));
            add_scaled_columns(g, &partial, &s);
        }
        for (k, g) in grad.gn.iter_mut().enumerate() {
            let partial = contract_modes(x, n_dims, &self.gn, rank, Some(k));
            add_scaled_columns(g, &partial, &t);
        }
        rank_expand(&t, self.shape.n_dims(), &self.gn)
    }
}

/// `g[a, r] += scale[r] · partial[r][a]`.
fn add_scaled_columns(g: &mut Matrix, partial: &[f64], scale: &[f64]) {
    let rank = scale.len();
    let n = g.rows();
    let data = g.as_mut_slice();
    for (r, &sr) in scale.iter().enumerate() {
        if sr == 0.0 {
            continue;
        }
        for a in 0..n {
            data[a * rank + r] += sr * partial[r * n + a];
        }
    }
}

/// `s_r = Σ_j x(j) Π_k f_k[j_k, r]`, contracting one mode at a time for all ranks together.
fn rank_contract(x: &[f64], dims: &Shape, factors: &[Matrix], rank: usize) -> Vec<f64> {
    contract_modes(x, dims.dims(), factors, rank, None)
}

/// Contracts `x` with column `r` of every factor except mode `skip`, for all
/// ranks at once. The result is laid out `[r][a]` where `a` runs over the
/// skipped mode (a single entry when nothing is skipped):
/// `out[r][a] = Σ_{j : j_skip = a} x(j) Π_{k≠skip} f_k[j_k, r]`.
fn contract_modes(x: &[f64], dims: &[usize], factors: &[Matrix], rank: usize, skip: Option<usize>) -> Vec<f64> {
    // Per rank, the working tensor is [outer][rest]: `outer` spans the kept
    // mode (if already passed), `rest` the modes not yet visited.
    let mut outer = 1;
    let mut rest = x.len();
    let mut z: Option<Vec<f64>> = None;
    for (k, f) in factors.iter().enumerate() {
        let n = dims[k];
        if Some(k) == skip {
            outer *= n;
            rest /= n;
            continue;
        }
        let inner = rest / n;
        let fd = f.as_slice();
        let mut next = vec![0.0; rank * outer * inner];
        if z.is_none() {
            // Every rank reads the raw input: one product per outer index.
            let fv = Strided::row_major(n, rank).t();
            let xv = Strided::row_major(n, inner);
            let ov = Strided {
                rows: rank,
                cols: inner,
                rs: outer * inner,
                cs: 1,
            };
            for o in 0..outer {
                gemm_acc(fd, fv, &x[o * n * inner..], xv, &mut next[o * inner..], ov);
            }
            z = Some(next);
            rest = inner;
            continue;
        }
        for r in 0..rank {
            let src = match &z {
                None => x,
                Some(z) => &z[r * outer * n * inner..(r + 1) * outer * n * inner],
            };
            let dst = &mut next[r * outer * inner..(r + 1) * outer * inner];
            for o in 0..outer {
                let dst = &mut dst[o * inner..(o + 1) * inner];
                for j in 0..n {
                    let w = fd[j * rank + r];
                    if w != 0.0 {
                        let base = (o * n + j) * inner;
                        axpy(w, &src[base..base + inner], dst);
                    }
                }
            }
        }
        z = Some(next);
        rest = inner;
    }
    z.unwrap_or_else(|| x.repeat(rank))
}

/// `Σ_r s_r · f_1[:, r] ⊗ … ⊗ f_d[:, r]`, flattened row-major.
fn rank_expand(s: &[f64], dims: &Shape, factors: &[Matrix]) -> Vec<f64> {
    let rank = s.len();
    // acc is [r][expanded so far]; starts at s_r.
    let mut acc = s.to_vec();
    let mut len = 1;
    let (last, init) = factors.split_last().expect("at least one mode");
    for (f, &n) in init.iter().zip(dims.dims()) {
        let fd = f.as_slice();
        let mut next = vec![0.0; rank * len * n];
        for r in 0..rank {
            let src = &acc[r * len..(r + 1) * len];
            let dst = &mut next[r * len * n..(r + 1) * len * n];
            for (p, &a) in src.iter().enumerate() {
                if a != 0.0 {
                    for j in 0..n {
                        dst[p * n + j] = a * fd[j * rank + r];
                    }
                }
            }
        }
        acc = next;
        len *= n;
    }
    // Last mode and the sum over ranks together: out (len × n) += accᵀ · fᵀ.
    let n = last.rows();
    let mut out = vec![0.0; len * n];
    gemm_acc(
        &acc,
        Strided::row_major(rank, len).t(),
        last.as_slice(),
        Strided::row_major(n, rank).t(),
        &mut out,
        Strided::row_major(len, n),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::super::{FactorizedLinear, Weights};
    use super::*;

    #[test]
    fn rank_one_order_one() {
        let shape = TensorizedShape::matrix(2, 2).unwrap();
        let gm = vec![Matrix::from_vec(2, 1, vec![1., 2.]).unwrap()];
        let gn = vec![Matrix::from_vec(2, 1, vec![3., 4.]).unwrap()];
        let cp = CpFactors::from_factors(shape, gm, gn).unwrap();
        let op = FactorizedLinear::new(Weights::Cp(cp), None).unwrap();
        assert_eq!(op.materialize().as_slice(), &[3., 4., 6., 8.]);
        assert_eq!(op.apply(&[1., 1.]).unwrap(), vec![7., 14.]);
    }

    #[test]
    fn from_factors_rejects_mismatch() {
        let shape = TensorizedShape::from_dims(&[2, 2], &[2, 2]).unwrap();
        let gm = vec![Matrix::zeros(2, 3), Matrix::zeros(2, 3)];
        let gn = vec![Matrix::zeros(2, 3), Matrix::zeros(3, 3)];
        assert!(CpFactors::from_factors(shape, gm, gn).is_err());
    }
}

use super::TensorizedShape;
use crate::error::{Error, Result};
use crate::tensor::{gemm_acc, DenseTensor, Matrix, Shape, Strided};

/// Tensor-train cores in matrix form. Core `k` has shape
/// `(r_{k-1}, m_k, n_k, r_k)` with `r_0 = r_d = 1`, and
///
/// `𝒲(i, j) = G_1[:, i_1, j_1, :] · G_2[:, i_2, j_2, :] ⋯ G_d[:, i_d, j_d, :]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TtCores {
    shape: TensorizedShape,
    tt_ranks: Vec<usize>,
    cores: Vec<DenseTensor>,
}

impl TtCores {
    pub fn zeros(shape: TensorizedShape, tt_ranks: &[usize]) -> Result<Self> {
        let d = shape.order();
        if tt_ranks.len() != d + 1 {
            return Err(Error::config(format!("TT of order {d} needs {} ranks", d + 1)));
        }
        let cores = (0..d)
            .map(|k| {
                let dims = vec![
                    tt_ranks[k],
                    shape.m_dims().dims()[k],
                    shape.n_dims().dims()[k],
                    tt_ranks[k + 1],
                ];
                Shape::new(dims).map(DenseTensor::zeros)
            })
            .collect::<Result<_>>()?;
        Ok(TtCores {
            shape,
            tt_ranks: tt_ranks.to_vec(),
            cores,
        })
    }

    pub fn from_cores(shape: TensorizedShape, cores: Vec<DenseTensor>) -> Result<Self> {
        let mut ranks = vec![1];
        for c in &cores {
            ranks.push(*c.shape().dims().last().unwrap_or(&0));
        }
        let mut tt = TtCores::zeros(shape, &ranks)?;
        if cores.len() != tt.cores.len() || cores.iter().zip(&tt.cores).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::shape(format!(
                "TT cores do not chain for shape {} with ranks {ranks:?}",
                tt.shape
            )));
        }
        tt.cores = cores;
        Ok(tt)
    }

    pub fn shape(&self) -> &TensorizedShape {
        &self.shape
    }

    pub fn tt_ranks(&self) -> &[usize] {
        &self.tt_ranks
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub(super) fn slices(&self) -> Vec<&[f64]> {
        self.cores.iter().map(DenseTensor::values).collect()
    }

    pub(super) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.cores.iter_mut().map(DenseTensor::values_mut).collect()
    }

    pub(super) fn materialize(&self) -> Matrix {
        let m = self.shape.m_dims();
        let n = self.shape.n_dims();
        let mut w = Matrix::zeros(m.numel(), n.numel());
        let (mi, nj) = (index_table(m), index_table(n));
        for (p, ip) in mi.iter().enumerate() {
            for (q, jq) in nj.iter().enumerate() {
                // Row vector times each core slice, left to right.
                let mut v = vec![1.0];
                for (k, core) in self.cores.iter().enumerate() {
                    let [_, mk, nk, rk] = core_dims(core);
                    let mut next = vec![0.0; rk];
                    for (a, &va) in v.iter().enumerate() {
                        let base = ((a * mk + ip[k]) * nk + jq[k]) * rk;
                        for (b, nb) in next.iter_mut().enumerate() {
                            *nb += va * core.values()[base + b];
                        }
                    }
                    v = next;
                }
                w.set(p, q, v[0]);
            }
        }
        w
    }

    /// Left-to-right sweep. Before core `k` the state is laid out as
    /// `[Π m_{<k}][r_{k-1}][n_k][Π n_{>k}]`; afterwards as `[Π m_{≤k}][r_k][Π n_{>k}]`.
    /// Each step is a batch of products `G_k · Z_a` with `G_k` viewed as an
    /// `(m_k r_k) × (r_{k-1} n_k)` matrix.
    fn sweep(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let m = self.shape.m_dims().dims();
        let n = self.shape.n_dims().dims();
        let mut states = Vec::with_capacity(self.cores.len() + 1);
        states.push(x.to_vec());
        let mut left = 1;
        for (k, core) in self.cores.iter().enumerate() {
            let right: usize = n[k + 1..].iter().product();
            let [rp, mk, nk, rk] = core_dims(core);
            let (p, q) = (mk * rk, rp * nk);
            let gp = permuted(core);
            let z = states.last().expect("initial state");
            let mut out = vec![0.0; left * p * right];
            let gv = Strided::row_major(p, q);
            if right == 1 {
                // Every slice at once: out (left × p) += Z (left × q) · Gᵀ.
                gemm_acc(
                    z,
                    Strided::row_major(left, q),
                    &gp,
                    gv.t(),
                    &mut out,
                    Strided::row_major(left, p),
                );
            } else {
                let zv = Strided::row_major(q, right);
                let ov = Strided::row_major(p, right);
                for (za, oa) in z.chunks_exact(q * right).zip(out.chunks_exact_mut(p * right)) {
                    gemm_acc(&gp, gv, za, zv, oa, ov);
                }
            }
            states.push(out);
            left *= m[k];
        }
        states
    }

    pub(super) fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.sweep(x).pop().expect("at least one core")
    }

    pub(super) fn accumulate_vjp(&self, x: &[f64], upstream: &[f64], grad: &mut TtCores) -> Vec<f64> {
        let m = self.shape.m_dims().dims();
        let n = self.shape.n_dims().dims();
        let states = self.sweep(x);
        let mut g_out = upstream.to_vec();
        for k in (0..self.cores.len()).rev() {
            let left: usize = m[..k].iter().product();
            let right: usize = n[k + 1..].iter().product();
            let core = &self.cores[k];
            let [rp, mk, nk, rk] = core_dims(core);
            let (p, q) = (mk * rk, rp * nk);
            let gp = permuted(core);
            let z = &states[k];
            let mut dgp = vec![0.0; p * q];
            let mut g_in = vec![0.0; left * q * right];
            let gv = Strided::row_major(p, q);
            if right == 1 {
                let uv = Strided::row_major(left, p);
                let zv = Strided::row_major(left, q);
                gemm_acc(&g_out, uv.t(), z, zv, &mut dgp, gv);
                gemm_acc(&g_out, uv, &gp, gv, &mut g_in, zv);
            } else {
                let uv = Strided::row_major(p, right);
                let zv = Strided::row_major(q, right);
                let chunks = g_out.chunks_exact(p * right).zip(z.chunks_exact(q * right));
                for ((ua, za), ga) in chunks.zip(g_in.chunks_exact_mut(q * right)) {
                    gemm_acc(ua, uv, za, zv.t(), &mut dgp, gv);
                    gemm_acc(&gp, gv.t(), ua, uv, ga, zv);
                }
            }
            let gg = grad.cores[k].values_mut();
            for r in 0..rp {
                for i in 0..mk {
                    for j in 0..nk {
                        for s in 0..rk {
                            gg[((r * mk + i) * nk + j) * rk + s] += dgp[(i * rk + s) * q + r * nk + j];
                        }
                    }
                }
            }
            g_out = g_in;
        }
        g_out
    }
}

/// Core `(r_{k-1}, m_k, n_k, r_k)` rearranged as a row-major `(m_k r_k) × (r_{k-1} n_k)` matrix.
fn permuted(core: &DenseTensor) -> Vec<f64> {
    let [rp, mk, nk, rk] = core_dims(core);
    let g = core.values();
    let q = rp * nk;
    let mut out = vec![0.0; mk * rk * q];
    for r in 0..rp {
        for i in 0..mk {
            for j in 0..nk {
                for s in 0..rk {
                    out[(i * rk + s) * q + r * nk + j] = g[((r * mk + i) * nk + j) * rk + s];
                }
            }
        }
    }
    out
}

fn core_dims(core: &DenseTensor) -> [usize; 4] {
    let d = core.shape().dims();
    [d[0], d[1], d[2], d[3]]
}

fn index_table(dims: &Shape) -> Vec<Vec<usize>> {
    (0..dims.numel())
        .map(|p| crate::tensor::linear_to_multi(p, dims).expect("in range"))
        .collect()
}

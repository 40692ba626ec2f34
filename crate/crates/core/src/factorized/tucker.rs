use super::TensorizedShape;
use crate::error::{Error, Result};
use crate::tensor::{axpy, contract_all_but, mode_product, DenseTensor, Matrix, Shape};

/// Tucker factors: a core `𝒢₀` of shape `(r_1, …, r_2d)`, row-side factor
/// matrices `gm_k` (`m_k × r_k`) and column-side factor matrices `gn_k`
/// (`n_k × r_{d+k}`):
///
/// `𝒲(i, j) = Σ_s 𝒢₀(s) Π_k gm_k[i_k, s_k] · gn_k[j_k, s_{d+k}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    shape: TensorizedShape,
    ranks: Vec<usize>,
    core: DenseTensor,
    gm: Vec<Matrix>,
    gn: Vec<Matrix>,
}

impl TuckerFactors {
    pub fn zeros(shape: TensorizedShape, ranks: &[usize]) -> Result<Self> {
        let d = shape.order();
        if ranks.len() != 2 * d {
            return Err(Error::config(format!("Tucker of order {d} needs {} ranks", 2 * d)));
        }
        let core = DenseTensor::zeros(Shape::new(ranks.to_vec())?);
        let gm = (0..d)
            .map(|k| Matrix::zeros(shape.m_dims().dims()[k], ranks[k]))
            .collect();
        let gn = (0..d)
            .map(|k| Matrix::zeros(shape.n_dims().dims()[k], ranks[d + k]))
            .collect();
        Ok(TuckerFactors {
            shape,
            ranks: ranks.to_vec(),
            core,
            gm,
            gn,
        })
    }

    pub fn from_parts(shape: TensorizedShape, core: DenseTensor, gm: Vec<Matrix>, gn: Vec<Matrix>) -> Result<Self> {
        let mut t = TuckerFactors::zeros(shape, core.shape().dims())?;
        let fits = |have: &[Matrix], want: &[Matrix]| {
            have.len() == want.len()
                && have
                    .iter()
                    .zip(want)
                    .all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols())
        };
        if !fits(&gm, &t.gm) || !fits(&gn, &t.gn) {
            return Err(Error::shape(format!(
                "Tucker factor matrices do not match shape {} with ranks {:?}",
                t.shape, t.ranks
            )));
        }
        t.core = core;
        t.gm = gm;
        t.gn = gn;
        Ok(t)
    }

    pub fn shape(&self) -> &TensorizedShape {
        &self.shape
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn gm(&self) -> &[Matrix] {
        &self.gm
    }

    pub fn gn(&self) -> &[Matrix] {
        &self.gn
    }

    pub(super) fn slices(&self) -> Vec<&[f64]> {
        std::iter::once(self.core.values())
            .chain(self.gm.iter().chain(&self.gn).map(Matrix::as_slice))
            .collect()
    }

    pub(super) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        std::iter::once(self.core.values_mut())
            .chain(self.gm.iter_mut().chain(self.gn.iter_mut()).map(Matrix::as_mut_slice))
            .collect()
    }

    fn d(&self) -> usize {
        self.shape.order()
    }

    fn row_ranks(&self) -> Shape {
        Shape::new(self.ranks[..self.d()].to_vec()).expect("positive ranks")
    }

    fn col_ranks(&self) -> Shape {
        Shape::new(self.ranks[self.d()..].to_vec()).expect("positive ranks")
    }

    /// Core viewed as a `Π r_{1..d} × Π r_{d+1..2d}` matrix.
    fn core_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.row_ranks().numel(),
            self.col_ranks().numel(),
            self.core.values().to_vec(),
        )
        .expect("core element count")
    }

    pub(super) fn materialize(&self) -> Matrix {
        let d = self.d();
        let mut w = self.core.clone();
        for (k, g) in self.gm.iter().enumerate() {
            w = mode_product(&w, g, k).expect("factor matches core mode");
        }
        for (k, g) in self.gn.iter().enumerate() {
            w = mode_product(&w, g, d + k).expect("factor matches core mode");
        }
        Matrix::from_vec(self.shape.rows(), self.shape.cols(), w.into_values()).expect("element count is M·N")
    }

    /// `x ×_k gn_kᵀ` over all modes: the input projected into the core's column ranks.
    fn project_input(&self, x: &[f64]) -> DenseTensor {
        let mut t =
            DenseTensor::from_vec(self.shape.n_dims().clone(), x.to_vec()).expect("input length checked by caller");
        for (k, g) in self.gn.iter().enumerate() {
            t = mode_product(&t, &g.transpose(), k).expect("factor matches input mode");
        }
        t
    }

    fn expand(t: DenseTensor, factors: &[Matrix]) -> DenseTensor {
        factors
            .iter()
            .enumerate()
            .fold(t, |acc, (k, g)| mode_product(&acc, g, k).expect("factor matches mode"))
    }

    /// `t ×_l f_l` for every `l` except `skip`.
    fn expand_except(t: &DenseTensor, factors: &[Matrix], skip: usize) -> DenseTensor {
        let mut out = t.clone();
        for (l, g) in factors.iter().enumerate() {
            if l != skip {
                out = mode_product(&out, g, l).expect("factor matches mode");
            }
        }
        out
    }

    pub(super) fn apply(&self, x: &[f64]) -> Vec<f64> {
        let xc = self.project_input(x);
        let zc = self
            .core_matrix()
            .matvec(xc.values())
            .expect("core columns match projected input");
        let zc = DenseTensor::from_vec(self.row_ranks(), zc).expect("row rank count");
        Self::expand(zc, &self.gm).into_values()
    }

    pub(super) fn accumulate_vjp(&self, x: &[f64], upstream: &[f64], grad: &mut TuckerFactors) -> Vec<f64> {
        let core = self.core_matrix();
        let xt = DenseTensor::from_vec(self.shape.n_dims().clone(), x.to_vec()).expect("input length");
        let ut = DenseTensor::from_vec(self.shape.m_dims().clone(), upstream.to_vec()).expect("upstream length");

        let xc = self.project_input(x);
        let zc = DenseTensor::from_vec(self.row_ranks(), core.matvec(xc.values()).expect("core")).expect("row ranks");

        // Upstream pulled back through the row factors.
        let mut uc = ut.clone();
        for (k, g) in self.gm.iter().enumerate() {
            uc = mode_product(&uc, &g.transpose(), k).expect("factor matches upstream mode");
        }

        // d core = uc ⊗ xc.
        let cols = core.cols();
        for (row, &u) in grad.core.values_mut().chunks_exact_mut(cols).zip(uc.values()) {
            if u != 0.0 {
                axpy(u, xc.values(), row);
            }
        }

        let gxc = DenseTensor::from_vec(self.col_ranks(), core.matvec_transposed(uc.values()).expect("core"))
            .expect("col ranks");

        for k in 0..self.d() {
            let p = Self::expand_except(&zc, &self.gm, k);
            let gk = contract_all_but(&ut, &p, k).expect("matching modes");
            add_into(&mut grad.gm[k], &gk);

            let q = Self::expand_except(&gxc, &self.gn, k);
            let gk = contract_all_but(&xt, &q, k).expect("matching modes");
            add_into(&mut grad.gn[k], &gk);
        }

        Self::expand(gxc, &self.gn).into_values()
    }
}

fn add_into(dst: &mut Matrix, src: &Matrix) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *d += s;
    }
}

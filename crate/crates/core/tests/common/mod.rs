//! Independent oracles shared by the integration tests. Nothing here calls the
//! library's own contraction code: matrices are rebuilt entry by entry from
//! the stored factors and products are plain loops.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor_rnn::factorized::{FactorizedLinear, Kind, TensorizedShape, Weights};
use tensor_rnn::tensor::linear_to_multi;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `|a − b| / max(|a|, |b|, 1)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

/// A random tensorized shape of order `d` with `M, N ≤ 256` and ranks valid for `kind`.
pub fn random_config(rng: &mut impl Rng, kind: Kind, d: usize) -> (TensorizedShape, Vec<usize>) {
    fn dims(rng: &mut impl Rng, d: usize) -> Vec<usize> {
        loop {
            let v: Vec<usize> = (0..d).map(|_| rng.random_range(1..=5)).collect();
            if v.iter().product::<usize>() <= 256 {
                return v;
            }
        }
    }
    let m = dims(rng, d);
    let n = dims(rng, d);
    let ranks = match kind {
        Kind::Dense => vec![],
        Kind::Cp => vec![rng.random_range(1..=5)],
        Kind::Tucker => m.iter().chain(&n).map(|&s| rng.random_range(1..=s)).collect(),
        Kind::Tt => {
            let mut r = vec![1];
            r.extend((1..d).map(|_| rng.random_range(1..=4)));
            r.push(1);
            r
        }
    };
    (TensorizedShape::from_dims(&m, &n).unwrap(), ranks)
}

/// Random operator with random (nonzero) bias.
pub fn random_operator(rng: &mut impl Rng, kind: Kind, d: usize) -> FactorizedLinear {
    let (shape, ranks) = random_config(rng, kind, d);
    let mut op = FactorizedLinear::init(kind, &shape, &ranks, 0.7, true, rng.random()).unwrap();
    let bias = op.params_mut().pop().unwrap();
    for b in bias {
        *b = rng.random_range(-1.0..1.0);
    }
    op
}

/// `W[p][q]` straight from the decomposition's elementwise definition.
pub fn naive_entry(op: &FactorizedLinear, p: usize, q: usize) -> f64 {
    let shape = op.shape();
    let i = linear_to_multi(p, shape.m_dims()).unwrap();
    let j = linear_to_multi(q, shape.n_dims()).unwrap();
    let d = i.len();
    match op.weights() {
        Weights::Dense(w) => w.matrix().get(p, q),
        Weights::Cp(w) => (0..w.rank())
            .map(|r| {
                let mut prod = 1.0;
                for k in 0..d {
                    prod *= w.gm()[k].get(i[k], r) * w.gn()[k].get(j[k], r);
                }
                prod
            })
            .sum(),
        Weights::Tucker(w) => {
            // Σ over every core index of core(a) Π_k gm_k[i_k, a_k] gn_k[j_k, a_{d+k}].
            let core = w.core();
            let mut total = 0.0;
            for c in 0..core.shape().numel() {
                let a = linear_to_multi(c, core.shape()).unwrap();
                let mut term = core.values()[c];
                for k in 0..d {
                    term *= w.gm()[k].get(i[k], a[k]) * w.gn()[k].get(j[k], a[d + k]);
                }
                total += term;
            }
            total
        }
        Weights::Tt(w) => {
            // Row vector times a chain of r_{k-1} × r_k slices G_k[:, i_k, j_k, :].
            let mut v = vec![1.0];
            for (k, core) in w.cores().iter().enumerate() {
                let cd = core.shape().dims();
                let (r0, mk, nk, r1) = (cd[0], cd[1], cd[2], cd[3]);
                assert_eq!(r0, v.len());
                let mut next = vec![0.0; r1];
                for (a, va) in v.iter().enumerate() {
                    for (b, nb) in next.iter_mut().enumerate() {
                        let idx = ((a * mk + i[k]) * nk + j[k]) * r1 + b;
                        *nb += va * core.values()[idx];
                    }
                }
                v = next;
            }
            assert_eq!(v.len(), 1);
            v[0]
        }
    }
}

/// Row-major `M × N` matrix from [`naive_entry`].
pub fn naive_matrix(op: &FactorizedLinear) -> Vec<f64> {
    let (m, n) = (op.out_dim(), op.in_dim());
    let mut out = Vec::with_capacity(m * n);
    for p in 0..m {
        for q in 0..n {
            out.push(naive_entry(op, p, q));
        }
    }
    out
}

/// `W x + b` with a plain double loop over a row-major matrix.
pub fn matvec(w: &[f64], rows: usize, x: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let cols = x.len();
    assert_eq!(w.len(), rows * cols);
    (0..rows)
        .map(|p| {
            let mut acc = bias.map_or(0.0, |b| b[p]);
            for q in 0..cols {
                acc += w[p * cols + q] * x[q];
            }
            acc
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central difference of `f` with respect to every scalar of `base`.
/// `sizes` lists the parameter slices' lengths and `nudge(t, s, i, h)` adds `h`
/// to element `i` of slice `s`. Estimates come back flattened in slice order.
pub fn central_differences<T: Clone>(
    base: &T,
    step: f64,
    sizes: impl Fn(&T) -> Vec<usize>,
    nudge: impl Fn(&mut T, usize, usize, f64),
    f: impl Fn(&T) -> f64,
) -> Vec<f64> {
    let mut out = Vec::new();
    for (s, len) in sizes(base).into_iter().enumerate() {
        for i in 0..len {
            let mut plus = base.clone();
            nudge(&mut plus, s, i, step);
            let mut minus = base.clone();
            nudge(&mut minus, s, i, -step);
            out.push((f(&plus) - f(&minus)) / (2.0 * step));
        }
    }
    out
}

pub fn flatten(slices: Vec<&[f64]>) -> Vec<f64> {
    slices.into_iter().flatten().copied().collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The JSB Chorales piano rolls shipped in the workspace's `data/` directory.
pub fn jsb() -> tensor_rnn::data::PianoRollDataset {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/jsb_chorales.json");
    tensor_rnn::data::load_dataset(path).expect("JSB Chorales file")
}

/// Stored scalars counted one by one through the public accessors.
pub fn enumerate_scalars(op: &FactorizedLinear) -> usize {
    match op.weights() {
        Weights::Dense(w) => w.matrix().as_slice().len(),
        Weights::Cp(w) => w.gm().iter().chain(w.gn()).map(|m| m.rows() * m.cols()).sum(),
        Weights::Tucker(w) => {
            w.core().values().len() + w.gm().iter().chain(w.gn()).map(|m| m.rows() * m.cols()).sum::<usize>()
        }
        Weights::Tt(w) => w.cores().iter().map(|c| c.values().len()).sum(),
    }
}

/// Checks `vjp` of `uᵀ (W x + b)` against central differences on every
/// parameter and every input coordinate.
pub fn check_vjp(op: &FactorizedLinear, x: &[f64], u: &[f64]) -> f64 {
    let (grad, gx) = op.vjp(x, u).unwrap();
    let f = |o: &FactorizedLinear| dot(u, &o.apply(x).unwrap());
    let fd = central_differences(
        op,
        1e-5,
        |o| o.params().iter().map(|s| s.len()).collect(),
        |o, s, i, h| o.params_mut()[s][i] += h,
        f,
    );
    let mut worst = max_rel_err(&flatten(grad.params()), &fd);
    for q in 0..x.len() {
        let mut xp = x.to_vec();
        xp[q] += 1e-5;
        let mut xm = x.to_vec();
        xm[q] -= 1e-5;
        let est = (dot(u, &op.apply(&xp).unwrap()) - dot(u, &op.apply(&xm).unwrap())) / 2e-5;
        worst = worst.max(rel_err(gx[q], est));
    }
    worst
}

/// Mean over seeds of the mean squared materialized entry.
pub fn materialized_variance(kind: Kind, shape: &TensorizedShape, ranks: &[usize], sigma: f64, seeds: u64) -> f64 {
    let mut total = 0.0;
    for seed in 0..seeds {
        let op = FactorizedLinear::init(kind, shape, ranks, sigma, false, seed).unwrap();
        let w = op.materialize();
        total += w.as_slice().iter().map(|v| v * v).sum::<f64>() / w.as_slice().len() as f64;
    }
    total / seeds as f64
}

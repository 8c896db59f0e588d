#![allow(dead_code)]

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use stvc::design::{TermBlock, TermKind, TermSpec};
use stvc::likelihood::VarianceParams;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat<f64> {
    Mat::from_fn(r, c, |_, _| normal(rng))
}

/// `B B' / k + I` for a random `n × k` matrix `B`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Mat<f64> {
    let k = n + 5;
    let b = normal_mat(rng, n, k);
    let mut a = &b * b.transpose() * (1.0 / k as f64);
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    a
}

pub fn lower_logdet(a: MatRef<'_, f64>) -> f64 {
    let llt = a.llt(Side::Lower).expect("oracle matrix is SPD");
    let l = llt.L();
    (0..a.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum()
}

pub fn dense_inverse(a: MatRef<'_, f64>) -> Mat<f64> {
    let llt = a.llt(Side::Lower).expect("oracle matrix is SPD");
    llt.solve(Mat::<f64>::identity(a.nrows(), a.nrows()))
}

/// Largest entrywise difference relative to the largest reference entry.
pub fn rel_err(a: MatRef<'_, f64>, reference: MatRef<'_, f64>) -> f64 {
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            diff = diff.max((a[(i, j)] - reference[(i, j)]).abs());
            scale = scale.max(reference[(i, j)].abs());
        }
    }
    diff / scale.max(f64::MIN_POSITIVE)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    diff / scale.max(1.0)
}

pub struct GlsOracle {
    pub loglik: f64,
    pub b: Vec<f64>,
    /// Basis coefficients per block.
    pub gamma: Vec<Vec<f64>>,
    pub sigma2: f64,
}

/// Restricted marginal likelihood with the noise variance profiled out,
/// computed from the `N × N` covariance `V = I + Σ Z_k G_k Z_k'`.
pub fn gls_oracle(x: MatRef<'_, f64>, blocks: &[(MatRef<'_, f64>, Vec<f64>)], y: &[f64]) -> GlsOracle {
    let n = x.nrows();
    let p = x.ncols();
    let mut v = Mat::<f64>::identity(n, n);
    for (z, g) in blocks {
        let zg = Mat::from_fn(n, z.ncols(), |i, l| z[(i, l)] * g[l]);
        v += &zg * z.transpose();
    }
    let llt = v.llt(Side::Lower).expect("V is SPD");
    let l = llt.L();
    let logdet_v: f64 = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum();
    let yv = Mat::from_fn(n, 1, |i, _| y[i]);
    let vix = llt.solve(x);
    let viy = llt.solve(&yv);
    let xvx = x.transpose() * &vix;
    let xvy = x.transpose() * &viy;
    let f = xvx.llt(Side::Lower).expect("X'V⁻¹X is SPD");
    let logdet_xvx: f64 = (0..p).map(|i| 2.0 * f.L()[(i, i)].ln()).sum();
    let b = f.solve(&xvy);
    let r = &yv - x * &b;
    let vir = llt.solve(&r);
    let d = (r.transpose() * &vir)[(0, 0)];
    let dof = (n - p) as f64;
    let loglik = -0.5 * (logdet_v + logdet_xvx) - 0.5 * dof * (1.0 + (2.0 * std::f64::consts::PI * d / dof).ln());
    let gamma = blocks
        .iter()
        .map(|(z, g)| {
            let zr = z.transpose() * &vir;
            (0..z.ncols()).map(|l| g[l] * zr[(l, 0)]).collect()
        })
        .collect();
    GlsOracle {
        loglik,
        b: (0..p).map(|i| b[(i, 0)]).collect(),
        gamma,
        sigma2: d / dof,
    }
}

/// Random instance for likelihood comparisons: design, blocks with their
/// variance parameters, and a response.
pub struct LikInstance {
    pub x: Mat<f64>,
    pub blocks: Vec<(TermBlock, VarianceParams)>,
    pub y: Vec<f64>,
}

pub fn random_lik_instance(rng: &mut ChaCha8Rng, n: usize, p: usize, n_terms: usize) -> LikInstance {
    let x = Mat::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { normal(rng) });
    let mut blocks = Vec::new();
    for k in 0..n_terms {
        let w = rng.gen_range(2..=12);
        let z = normal_mat(rng, n, w);
        let mut profile: Vec<f64> = (0..w).map(|_| rng.gen_range(0.05..1.0)).collect();
        profile.sort_by(|a, b| b.total_cmp(a));
        profile[0] = 1.0;
        let params = VarianceParams::from_log(rng.gen_range(-3.0..2.0), rng.gen_range(-1.0..3.0));
        let spec = TermSpec::new(k % p, if k < p { TermKind::Spatial } else { TermKind::Temporal(k) });
        blocks.push((
            TermBlock {
                spec,
                z,
                eigval_profile: profile,
            },
            params,
        ));
    }
    let y = (0..n).map(|i| x[(i, 0)] + normal(rng) * 2.0 + (i as f64 * 0.1).sin()).collect();
    LikInstance { x, blocks, y }
}

//! Profiled restricted log-likelihood of the mixed-model form.
//!
//! All variance parameters live in the noise-normalized scale `τ²/σ²`, so a
//! term's scaled regressors are `Z V^{1/2}` and the noise variance is
//! recovered afterwards as `d / (N - P)`.

use faer::{Col, Mat};

use crate::design::TermBlock;
use crate::error::{Result, StvcError};
use crate::linalg::{self, SpdFactor};

/// Variance `τ²` and exponent `α` of one term's prior `τ² λ^α`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceParams {
    pub tau2: f64,
    pub alpha: f64,
}

impl VarianceParams {
    pub fn new(tau2: f64, alpha: f64) -> Self {
        Self { tau2, alpha }
    }

    pub fn from_log(log_tau2: f64, alpha: f64) -> Self {
        Self {
            tau2: log_tau2.exp(),
            alpha,
        }
    }

    pub fn log_tau2(&self) -> f64 {
        self.tau2.ln()
    }
}

/// `τ² λ_l^α` for each eigenvalue.
pub fn variance_diag(eigvals: &[f64], params: VarianceParams) -> Vec<f64> {
    eigvals
        .iter()
        .map(|&l| params.tau2 * l.powf(params.alpha))
        .collect()
}

/// Square roots of [`variance_diag`], the column scales of `Z V^{1/2}`.
pub fn scale_diag(eigvals: &[f64], params: VarianceParams) -> Vec<f64> {
    let half = 0.5 * params.alpha;
    let sd = params.tau2.sqrt();
    eigvals.iter().map(|&l| sd * l.powf(half)).collect()
}

/// `V_k^{1/2} Z_k' Z_k' V_k'^{1/2}`.
pub fn g_block(
    a: &TermBlock,
    b: &TermBlock,
    pa: VarianceParams,
    pb: VarianceParams,
) -> Mat<f64> {
    let raw = linalg::cross(a.z.as_ref(), b.z.as_ref());
    linalg::scale_rows_cols(
        raw.as_ref(),
        &scale_diag(&a.eigval_profile, pa),
        &scale_diag(&b.eigval_profile, pb),
    )
}

/// Fixed effects plus the random-effect blocks currently in a model.
#[derive(Clone, Debug)]
pub struct ModelTerms {
    pub x: Mat<f64>,
    pub blocks: Vec<(TermBlock, VarianceParams)>,
}

impl ModelTerms {
    pub fn new(x: Mat<f64>, blocks: Vec<(TermBlock, VarianceParams)>) -> Result<Self> {
        for (b, _) in &blocks {
            if b.eigval_profile.len() != b.z.ncols() || b.z.nrows() != x.nrows() {
                return Err(StvcError::ShapeMismatch(format!(
                    "block {} has {} rows, {} columns and {} eigenvalues",
                    b.spec,
                    b.z.nrows(),
                    b.z.ncols(),
                    b.eigval_profile.len()
                )));
            }
        }
        Ok(Self { x, blocks })
    }

    /// Column scales: 1 for the fixed effects, then each block's `V^{1/2}`.
    pub fn scales(&self) -> Vec<f64> {
        let mut s = vec![1.0; self.x.ncols()];
        for (b, p) in &self.blocks {
            s.extend(scale_diag(&b.eigval_profile, *p));
        }
        s
    }

    /// `[X Z_1 ... Z_K]` without variance scaling.
    pub fn raw_design(&self) -> Mat<f64> {
        let n = self.x.nrows();
        let mut offsets = vec![(0usize, &self.x)];
        let mut d = self.x.ncols();
        for (b, _) in &self.blocks {
            offsets.push((d, &b.z));
            d += b.z.ncols();
        }
        let mut out = Mat::zeros(n, d);
        for (off, m) in offsets {
            for j in 0..m.ncols() {
                for i in 0..n {
                    out[(i, off + j)] = m[(i, j)];
                }
            }
        }
        out
    }
}

/// `H = W'W + diag(0_P, I)` with `W = [X, Z V^{1/2}]`.
pub fn assemble_h(terms: &ModelTerms) -> Result<Mat<f64>> {
    let w = terms.raw_design();
    let gram = linalg::cross(w.as_ref(), w.as_ref());
    Ok(scaled_h(&gram, &terms.scales(), terms.x.ncols()))
}

fn scaled_h(gram: &Mat<f64>, scales: &[f64], p: usize) -> Mat<f64> {
    let mut h = linalg::scale_rows_cols(gram.as_ref(), scales, scales);
    for i in p..h.nrows() {
        h[(i, i)] += 1.0;
    }
    linalg::symmetrize(&mut h);
    h
}

/// Solved mixed-model system at fixed variance parameters.
#[derive(Clone, Debug)]
pub struct LikelihoodState {
    pub h: Mat<f64>,
    pub h_inv: Mat<f64>,
    pub logdet_h: f64,
    pub b_hat: Vec<f64>,
    /// Random effects in the scaled parameterization.
    pub u_hat: Vec<f64>,
    /// `V^{1/2} û`, the basis coefficients.
    pub gamma_hat: Vec<f64>,
    pub d: f64,
    pub loglik: f64,
    pub sigma2_hat: f64,
}

/// `-½ log|H| - (N-P)/2 (1 + log(2π d / (N-P)))`.
pub fn loglik_value(logdet_h: f64, d: f64, n: usize, p: usize) -> Result<f64> {
    if n <= p {
        return Err(StvcError::InvalidParameter(format!(
            "need more observations than fixed effects (N = {n}, P = {p})"
        )));
    }
    if !(d > 0.0) {
        return Err(StvcError::PerfectFit(d));
    }
    let dof = (n - p) as f64;
    let ll = -0.5 * logdet_h - 0.5 * dof * (1.0 + (2.0 * std::f64::consts::PI * d / dof).ln());
    if !ll.is_finite() {
        return Err(StvcError::NumericalFailure {
            theta: vec![],
            reason: format!("non-finite log-likelihood (log|H| = {logdet_h}, d = {d})"),
        });
    }
    Ok(ll)
}

/// Treats a residual lost in cancellation against `y'y` as an exact fit.
pub fn clean_residual(d: f64, yty: f64) -> f64 {
    if d <= 1e-12 * yty {
        0.0
    } else {
        d
    }
}

/// `-2 loglik + (P + 2·pairs + 1) log N`.
pub fn bic(loglik: f64, n_variance_pairs: usize, n: usize, p: usize) -> f64 {
    -2.0 * loglik + (p + 2 * n_variance_pairs + 1) as f64 * (n as f64).ln()
}

/// Cross products of the unscaled design, enough to evaluate the
/// likelihood at any column scaling.
#[derive(Clone, Debug)]
pub struct GramSystem {
    pub gram: Mat<f64>,
    pub rhs: Vec<f64>,
    pub yty: f64,
    pub n: usize,
    pub p: usize,
}

impl GramSystem {
    pub fn from_terms(terms: &ModelTerms, y: &[f64]) -> Result<Self> {
        if y.len() != terms.x.nrows() {
            return Err(StvcError::ShapeMismatch(format!(
                "response has {} rows, design has {}",
                y.len(),
                terms.x.nrows()
            )));
        }
        let w = terms.raw_design();
        Ok(Self {
            gram: linalg::cross(w.as_ref(), w.as_ref()),
            rhs: linalg::col_to_vec(&linalg::cross_vec(w.as_ref(), y)),
            yty: y.iter().map(|v| v * v).sum(),
            n: y.len(),
            p: terms.x.ncols(),
        })
    }

    /// Solves the system at the given column scales, inverting `H` densely.
    pub fn evaluate(&self, scales: &[f64]) -> Result<LikelihoodState> {
        let p = self.p;
        let h = scaled_h(&self.gram, scales, p);
        let factor = SpdFactor::new(h.as_ref(), "H").map_err(|_| {
            if SpdFactor::new(h.as_ref().submatrix(0, 0, p, p), "X'X").is_err() {
                StvcError::SingularDesign("X'X is not positive definite".into())
            } else {
                StvcError::NumericalFailure {
                    theta: vec![],
                    reason: "H is not positive definite".into(),
                }
            }
        })?;
        let h_inv = factor.inverse();
        let rhs = Col::from_fn(self.rhs.len(), |i| scales[i] * self.rhs[i]);
        let sol = &h_inv * &rhs;
        let d = clean_residual(self.yty - linalg::dot(&sol, &rhs), self.yty);
        let loglik = loglik_value(factor.logdet(), d, self.n, p)?;
        Ok(state_from_solution(h, h_inv, factor.logdet(), &sol, scales, d, loglik, self.n, p))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn state_from_solution(
    h: Mat<f64>,
    h_inv: Mat<f64>,
    logdet_h: f64,
    sol: &Col<f64>,
    scales: &[f64],
    d: f64,
    loglik: f64,
    n: usize,
    p: usize,
) -> LikelihoodState {
    let sol = linalg::col_to_vec(sol);
    let u_hat = sol[p..].to_vec();
    let gamma_hat = u_hat.iter().zip(&scales[p..]).map(|(u, s)| u * s).collect();
    LikelihoodState {
        h,
        h_inv,
        logdet_h,
        b_hat: sol[..p].to_vec(),
        u_hat,
        gamma_hat,
        d,
        loglik,
        sigma2_hat: d / (n - p) as f64,
    }
}

/// Evaluates the profiled likelihood of `terms` for response `y`.
pub fn profile_loglik(terms: &ModelTerms, y: &[f64]) -> Result<LikelihoodState> {
    GramSystem::from_terms(terms, y)?
        .evaluate(&terms.scales())
        .map_err(|e| with_theta(e, terms))
}

fn with_theta(e: StvcError, terms: &ModelTerms) -> StvcError {
    match e {
        StvcError::NumericalFailure { reason, .. } => StvcError::NumericalFailure {
            theta: terms.blocks.iter().map(|(_, p)| (p.tau2, p.alpha)).collect(),
            reason,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{TermKind, TermSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
        Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    fn block(z: Mat<f64>, eig: Vec<f64>) -> TermBlock {
        TermBlock {
            spec: TermSpec::new(0, TermKind::Spatial),
            z,
            eigval_profile: eig,
        }
    }

    #[test]
    fn variance_diag_arithmetic() {
        assert_eq!(variance_diag(&[1.0, 0.5, 0.1], VarianceParams::new(3.0, 0.0)), vec![3.0; 3]);
        assert_eq!(variance_diag(&[1.0, 0.5], VarianceParams::new(0.0, 2.0)), vec![0.0, 0.0]);
        assert_eq!(variance_diag(&[1.0, 0.5], VarianceParams::new(2.0, 1.0)), vec![2.0, 1.0]);
    }

    #[test]
    fn g_block_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = block(randn(20, 5, &mut rng), vec![1.0, 0.8, 0.5, 0.3, 0.1]);
        let b = block(randn(20, 4, &mut rng), vec![1.0, 0.6, 0.4, 0.2]);
        let zero = g_block(&a, &b, VarianceParams::new(0.0, 1.0), VarianceParams::new(1.0, 1.0));
        assert_eq!(linalg::max_abs(zero.as_ref()), 0.0);

        let pa = VarianceParams::new(1.7, 0.6);
        let pb = VarianceParams::new(0.4, -1.2);
        let g = g_block(&a, &b, pa, pb);
        let va = variance_diag(&a.eigval_profile, pa);
        let vb = variance_diag(&b.eigval_profile, pb);
        for i in 0..5 {
            for j in 0..4 {
                let zz: f64 = (0..20).map(|r| a.z[(r, i)] * b.z[(r, j)]).sum();
                let want = va[i].sqrt() * zz * vb[j].sqrt();
                assert!((g[(i, j)] - want).abs() < 1e-12 * (1.0 + want.abs()));
            }
        }

        // Orthonormal columns with V = I give the identity.
        let q = Mat::from_fn(4, 2, |i, j| [[0.5, 0.5], [0.5, -0.5], [0.5, 0.5], [0.5, -0.5]][i][j]);
        let o = block(q, vec![1.0, 1.0]);
        let id = g_block(&o, &o, VarianceParams::new(1.0, 0.0), VarianceParams::new(1.0, 0.0));
        assert!(linalg::max_abs_diff(id.as_ref(), Mat::<f64>::identity(2, 2).as_ref()) < 1e-15);
    }

    #[test]
    fn h_assembly_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = randn(30, 2, &mut rng);
        for i in 0..30 {
            x[(i, 0)] = 1.0;
        }
        let ols = ModelTerms::new(x.clone(), vec![]).unwrap();
        let h = assemble_h(&ols).unwrap();
        assert!(linalg::max_abs_diff(h.as_ref(), linalg::cross(x.as_ref(), x.as_ref()).as_ref()) < 1e-12);

        let z = randn(30, 3, &mut rng);
        let inert = ModelTerms::new(x.clone(), vec![(block(z.clone(), vec![1.0, 0.5, 0.2]), VarianceParams::new(0.0, 1.0))]).unwrap();
        let h = assemble_h(&inert).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                assert_eq!(h[(2 + i, j)], if j == 2 + i { 1.0 } else { 0.0 });
            }
        }

        let params = VarianceParams::new(2.0, 0.5);
        let eig = vec![1.0, 0.5, 0.2];
        let t = ModelTerms::new(x.clone(), vec![(block(z.clone(), eig.clone()), params)]).unwrap();
        let h = assemble_h(&t).unwrap();
        let v = scale_diag(&eig, params);
        let w = Mat::from_fn(30, 5, |i, j| if j < 2 { x[(i, j)] } else { z[(i, j - 2)] * v[j - 2] });
        let mut want = linalg::cross(w.as_ref(), w.as_ref());
        for i in 2..5 {
            want[(i, i)] += 1.0;
        }
        assert!(linalg::max_abs_diff(h.as_ref(), want.as_ref()) < 1e-12);
    }

    #[test]
    fn no_random_terms_is_least_squares() {
        let x = Mat::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = [1.0, 3.0, 2.0, 5.0];
        let st = profile_loglik(&ModelTerms::new(x, vec![]).unwrap(), &y).unwrap();
        // Hand regression: slope 1.1, intercept 1.1.
        assert!((st.b_hat[1] - 1.1).abs() < 1e-12);
        assert!((st.b_hat[0] - 1.1).abs() < 1e-12);
        let rss: f64 = (0..4).map(|i| (y[i] - 1.1 - 1.1 * i as f64).powi(2)).sum();
        assert!((st.d - rss).abs() < 1e-12);
        assert!((st.sigma2_hat - rss / 2.0).abs() < 1e-12);
    }

    #[test]
    fn exact_fit_is_rejected() {
        let x = Mat::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = [1.0, 3.0, 5.0, 7.0];
        assert!(matches!(
            profile_loglik(&ModelTerms::new(x, vec![]).unwrap(), &y),
            Err(StvcError::PerfectFit(_))
        ));
    }

    #[test]
    fn collinear_design_is_singular() {
        let x = Mat::from_fn(4, 2, |_, _| 1.0);
        assert!(matches!(
            profile_loglik(&ModelTerms::new(x, vec![]).unwrap(), &[1.0, 2.0, 3.0, 5.0]),
            Err(StvcError::SingularDesign(_))
        ));
    }

    #[test]
    fn bic_arithmetic() {
        let n = std::f64::consts::E;
        // N must be an integer in the API; check the formula directly.
        let direct = -2.0 * -100.0 + (3 + 2 * 2 + 1) as f64 * n.ln();
        assert!((direct - 208.0).abs() < 1e-12);
        assert!((bic(-100.0, 2, 100, 3) - (200.0 + 8.0 * 100f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn inert_term_only_costs_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Mat::from_fn(40, 1, |_, _| 1.0);
        let y: Vec<f64> = (0..40).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = randn(40, 4, &mut rng);
        let base = profile_loglik(&ModelTerms::new(x.clone(), vec![]).unwrap(), &y).unwrap();
        let inert = ModelTerms::new(x, vec![(block(z, vec![1.0, 0.7, 0.4, 0.1]), VarianceParams::new(0.0, 0.0))]).unwrap();
        let st = profile_loglik(&inert, &y).unwrap();
        assert!((st.loglik - base.loglik).abs() < 1e-10);
        let delta = bic(st.loglik, 1, 40, 1) - bic(base.loglik, 0, 40, 1);
        assert!((delta - 2.0 * 40f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn gram_route_matches_direct_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = randn(50, 2, &mut rng);
        for i in 0..50 {
            x[(i, 0)] = 1.0;
        }
        let y: Vec<f64> = (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t = ModelTerms::new(
            x,
            vec![
                (block(randn(50, 4, &mut rng), vec![1.0, 0.6, 0.3, 0.1]), VarianceParams::new(0.8, 1.5)),
                (block(randn(50, 3, &mut rng), vec![1.0, 0.2, 0.05]), VarianceParams::new(2.5, -0.5)),
            ],
        )
        .unwrap();
        let st = profile_loglik(&t, &y).unwrap();
        let h = assemble_h(&t).unwrap();
        assert!(linalg::max_abs_diff(h.as_ref(), st.h.as_ref()) < 1e-12);
        let hh = &st.h_inv * &st.h;
        assert!(linalg::max_abs_diff(hh.as_ref(), Mat::<f64>::identity(9, 9).as_ref()) < 1e-10);
        // d is the penalized residual sum of squares.
        let w = t.raw_design();
        let scales = t.scales();
        let sol: Vec<f64> = st.b_hat.iter().cloned().chain(st.u_hat.iter().cloned()).collect();
        let mut rss = 0.0;
        for i in 0..50 {
            let fit: f64 = (0..9).map(|j| w[(i, j)] * scales[j] * sol[j]).sum();
            rss += (y[i] - fit).powi(2);
        }
        let pen: f64 = st.u_hat.iter().map(|u| u * u).sum();
        assert!((st.d - (rss + pen)).abs() < 1e-9 * st.d);
    }
}

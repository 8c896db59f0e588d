//! Incremental inverse and log-determinant of `H` when one block of
//! columns is appended.
//!
//! With `H_new = [[H, B], [B', G]]` and `Q = G - B' H⁻¹ B`:
//! `H_new⁻¹ = [[H⁻¹ + F Q⁻¹ F', -F Q⁻¹], [-Q⁻¹ F', Q⁻¹]]` where `F = H⁻¹ B`,
//! and `log|H_new| = log|H| + log|Q|`.

use std::sync::atomic::{AtomicUsize, Ordering};

use faer::{Col, Mat, MatRef};

use crate::error::{Result, StvcError};
use crate::linalg::{self, SpdFactor};

/// Cached inverse and log-determinant of the current `H`.
#[derive(Clone, Debug)]
pub struct BlockCache {
    h_inv: Mat<f64>,
    logdet: f64,
}

impl BlockCache {
    pub fn new(h_inv: Mat<f64>, logdet: f64) -> Self {
        Self { h_inv, logdet }
    }

    /// Factors `h` densely.
    pub fn from_matrix(h: MatRef<'_, f64>) -> Result<Self> {
        let f = SpdFactor::new(h, "H")?;
        Ok(Self {
            h_inv: f.inverse(),
            logdet: f.logdet(),
        })
    }

    pub fn dim(&self) -> usize {
        self.h_inv.nrows()
    }

    pub fn h_inv(&self) -> &Mat<f64> {
        &self.h_inv
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }
}

/// `Q = G_new - G_cross' H⁻¹ G_cross`, symmetrized.
pub fn schur_complement(
    cache: &BlockCache,
    g_cross: MatRef<'_, f64>,
    g_new: MatRef<'_, f64>,
) -> Result<Mat<f64>> {
    check_shapes(cache, g_cross, g_new)?;
    let f = cache.h_inv() * g_cross;
    let mut q = g_new - g_cross.transpose() * &f;
    linalg::symmetrize(&mut q);
    Ok(q)
}

fn check_shapes(cache: &BlockCache, g_cross: MatRef<'_, f64>, g_new: MatRef<'_, f64>) -> Result<()> {
    if g_cross.nrows() != cache.dim()
        || g_new.nrows() != g_new.ncols()
        || g_cross.ncols() != g_new.nrows()
    {
        return Err(StvcError::ShapeMismatch(format!(
            "bordering a {d}x{d} inverse with a {}x{} cross block and a {}x{} new block",
            g_cross.nrows(),
            g_cross.ncols(),
            g_new.nrows(),
            g_new.ncols(),
            d = cache.dim()
        )));
    }
    Ok(())
}

/// Factors `Q`; failure means the candidate parameters are rejected.
pub fn factor_schur(q: MatRef<'_, f64>) -> Result<SpdFactor> {
    SpdFactor::new(q, "Schur complement")
}

/// Inverse of the bordered matrix from the cached inverse and `Q`.
pub fn bordered_inverse(cache: &BlockCache, g_cross: MatRef<'_, f64>, q: &SpdFactor) -> Mat<f64> {
    let d = cache.dim();
    let w = q.dim();
    let f = cache.h_inv() * g_cross;
    let q_inv = q.inverse();
    let t = &f * &q_inv;
    let top_left = cache.h_inv() + &t * f.transpose();
    let mut out = Mat::zeros(d + w, d + w);
    for j in 0..d {
        for i in 0..d {
            out[(i, j)] = top_left[(i, j)];
        }
    }
    for j in 0..w {
        for i in 0..d {
            out[(i, d + j)] = -t[(i, j)];
            out[(d + j, i)] = -t[(i, j)];
        }
        for i in 0..w {
            out[(d + i, d + j)] = q_inv[(i, j)];
        }
    }
    linalg::symmetrize(&mut out);
    out
}

/// `log|H| + log|Q|`.
pub fn logdet_update(cache: &BlockCache, q: &SpdFactor) -> f64 {
    cache.logdet() + q.logdet()
}

/// Appends a block: forms `Q`, factors it and borders the cached inverse.
pub fn commit_append(
    cache: &BlockCache,
    g_cross: MatRef<'_, f64>,
    g_new: MatRef<'_, f64>,
) -> Result<BlockCache> {
    let q = schur_complement(cache, g_cross, g_new)?;
    let qf = factor_schur(q.as_ref())?;
    Ok(BlockCache {
        h_inv: bordered_inverse(cache, g_cross, &qf),
        logdet: logdet_update(cache, &qf),
    })
}

/// Counts factorizations and records the largest dimension factored.
#[derive(Debug, Default)]
pub struct FactorStats {
    count: AtomicUsize,
    max_dim: AtomicUsize,
}

impl FactorStats {
    pub fn record(&self, dim: usize) {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.max_dim.fetch_max(dim, Ordering::Relaxed);
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }

    pub fn max_dim(&self) -> usize {
        self.max_dim.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.count.store(0, Ordering::Relaxed);
        self.max_dim.store(0, Ordering::Relaxed);
    }
}

/// Everything about one candidate block that does not depend on its own
/// variance parameters, computed once against a frozen cache.
///
/// With unit-scaled cross products `A = S·[X Z_K]'Z_κ` (S the current column
/// scales), `R = Z_κ'Z_κ - A' H⁻¹ A` and `c = Z_κ'y - A' ĥ` (ĥ the current
/// solution), the Schur complement at scales `v` is `I + diag(v) R diag(v)`
/// and the penalized residual drops by `g' Q⁻¹ g` with `g = v ⊙ c`.
#[derive(Clone, Debug)]
pub struct CandidateSystem {
    r: Mat<f64>,
    c: Vec<f64>,
    base_logdet: f64,
    base_d: f64,
}

impl CandidateSystem {
    pub fn new(
        cache: &BlockCache,
        a: MatRef<'_, f64>,
        gram: MatRef<'_, f64>,
        zty: &[f64],
        sol: &Col<f64>,
        base_d: f64,
    ) -> Result<Self> {
        check_shapes(cache, a, gram)?;
        let f = cache.h_inv() * a;
        let mut r = gram - a.transpose() * &f;
        linalg::symmetrize(&mut r);
        let at_sol = a.transpose() * sol;
        let c = (0..zty.len()).map(|i| zty[i] - at_sol[i]).collect();
        Ok(Self {
            r,
            c,
            base_logdet: cache.logdet(),
            base_d,
        })
    }

    pub fn width(&self) -> usize {
        self.c.len()
    }

    /// `Q` at column scales `v`.
    pub fn schur(&self, v: &[f64]) -> Mat<f64> {
        let w = self.width();
        Mat::from_fn(w, w, |i, j| {
            let e = v[i] * self.r[(i, j)] * v[j];
            if i == j {
                1.0 + e
            } else {
                e
            }
        })
    }

    /// `(log|H_new|, d_new)` at column scales `v`. Only a `W×W` matrix is
    /// factored.
    pub fn evaluate(&self, v: &[f64], stats: &FactorStats) -> Result<(f64, f64)> {
        let q = self.schur(v);
        stats.record(q.nrows());
        let qf = factor_schur(q.as_ref())?;
        let g = Col::from_fn(self.width(), |i| v[i] * self.c[i]);
        let qg = qf.solve_col(&g);
        Ok((self.base_logdet + qf.logdet(), self.base_d - linalg::dot(&g, &qg)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
        let a = Mat::from_fn(n + 3, n, |_, _| -> f64 { StandardNormal.sample(rng) });
        let mut h = a.transpose() * &a;
        for i in 0..n {
            h[(i, i)] += 0.5;
        }
        h
    }

    fn split(h: &Mat<f64>, d: usize) -> (Mat<f64>, Mat<f64>, Mat<f64>) {
        let n = h.nrows();
        let w = n - d;
        (
            h.as_ref().submatrix(0, 0, d, d).to_owned(),
            h.as_ref().submatrix(0, d, d, w).to_owned(),
            h.as_ref().submatrix(d, d, w, w).to_owned(),
        )
    }

    fn mat(rows: &[&[f64]]) -> Mat<f64> {
        Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn scalar_complement() {
        let cache = BlockCache::from_matrix(mat(&[&[2.0]]).as_ref()).unwrap();
        let q = schur_complement(&cache, mat(&[&[1.0]]).as_ref(), mat(&[&[3.0]]).as_ref()).unwrap();
        assert!((q[(0, 0)] - 2.5).abs() < 1e-15);
        let qf = factor_schur(q.as_ref()).unwrap();
        assert!((logdet_update(&cache, &qf).exp() - 5.0).abs() < 1e-12);
        let inv = bordered_inverse(&cache, mat(&[&[1.0]]).as_ref(), &qf);
        for (i, j, v) in [(0, 0, 0.6), (0, 1, -0.2), (1, 0, -0.2), (1, 1, 0.4)] {
            assert!((inv[(i, j)] - v).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_cross_block_is_block_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_spd(4, &mut rng);
        let g = random_spd(2, &mut rng);
        let cache = BlockCache::from_matrix(h.as_ref()).unwrap();
        let zero = Mat::<f64>::zeros(4, 2);
        let q = schur_complement(&cache, zero.as_ref(), g.as_ref()).unwrap();
        assert_eq!(linalg::max_abs_diff(q.as_ref(), g.as_ref()), 0.0);
        let qf = factor_schur(q.as_ref()).unwrap();
        let inv = bordered_inverse(&cache, zero.as_ref(), &qf);
        let g_inv = SpdFactor::new(g.as_ref(), "g").unwrap().inverse();
        for i in 0..6 {
            for j in 0..6 {
                let want = match (i < 4, j < 4) {
                    (true, true) => cache.h_inv()[(i, j)],
                    (false, false) => g_inv[(i - 4, j - 4)],
                    _ => 0.0,
                };
                assert!((inv[(i, j)] - want).abs() < 1e-12);
            }
        }
        let eye = Mat::<f64>::identity(2, 2);
        let same = factor_schur(eye.as_ref()).unwrap();
        assert_eq!(logdet_update(&cache, &same), cache.logdet());
    }

    #[test]
    fn random_bordering_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (d, w) in [(8, 3), (50, 10), (30, 5)] {
            let h = random_spd(d + w, &mut rng);
            let (a, b, g) = split(&h, d);
            let cache = BlockCache::from_matrix(a.as_ref()).unwrap();
            let q = schur_complement(&cache, b.as_ref(), g.as_ref()).unwrap();
            let a_inv = SpdFactor::new(a.as_ref(), "a").unwrap().inverse();
            let q_dense = &g - b.transpose() * &a_inv * &b;
            assert!(linalg::max_abs_diff(q.as_ref(), q_dense.as_ref()) < 1e-12 * linalg::max_abs(g.as_ref()));
            let next = commit_append(&cache, b.as_ref(), g.as_ref()).unwrap();
            let dense = SpdFactor::new(h.as_ref(), "h").unwrap();
            assert!(linalg::max_abs_diff(next.h_inv().as_ref(), dense.inverse().as_ref()) < 1e-8);
            assert!((next.logdet() - dense.logdet()).abs() < 1e-8 * dense.logdet().abs().max(1.0));
            let qf = factor_schur(q.as_ref()).unwrap();
            let det_q: f64 = SpdFactor::new(q.as_ref(), "q").unwrap().logdet();
            assert!(((logdet_update(&cache, &qf) - cache.logdet()) - det_q).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_append_and_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_spd(5, &mut rng);
        let cache = BlockCache::from_matrix(h.as_ref()).unwrap();
        let next = commit_append(&cache, Mat::<f64>::zeros(5, 3).as_ref(), Mat::<f64>::identity(3, 3).as_ref()).unwrap();
        assert_eq!(next.dim(), 8);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(next.h_inv()[(5 + i, 5 + j)], if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!((next.logdet() - cache.logdet()).abs() < 1e-14);
    }

    #[test]
    fn sequential_appends_match_one_dense_append() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_spd(20, &mut rng);
        let c0 = BlockCache::from_matrix(h.as_ref().submatrix(0, 0, 12, 12)).unwrap();
        let c1 = commit_append(
            &c0,
            h.as_ref().submatrix(0, 12, 12, 5),
            h.as_ref().submatrix(12, 12, 5, 5),
        )
        .unwrap();
        let c2 = commit_append(
            &c1,
            h.as_ref().submatrix(0, 17, 17, 3),
            h.as_ref().submatrix(17, 17, 3, 3),
        )
        .unwrap();
        let one = commit_append(
            &c0,
            h.as_ref().submatrix(0, 12, 12, 8),
            h.as_ref().submatrix(12, 12, 8, 8),
        )
        .unwrap();
        assert!(linalg::max_abs_diff(c2.h_inv().as_ref(), one.h_inv().as_ref()) < 1e-10);
        assert!((c2.logdet() - one.logdet()).abs() < 1e-10);
    }

    #[test]
    fn indefinite_complement_is_rejected() {
        let cache = BlockCache::from_matrix(mat(&[&[1.0]]).as_ref()).unwrap();
        let r = commit_append(&cache, mat(&[&[2.0]]).as_ref(), mat(&[&[1.0]]).as_ref());
        assert!(matches!(r, Err(StvcError::NotPositiveDefinite(_))));
    }

    #[test]
    fn candidate_system_matches_explicit_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40;
        let (d, w) = (6, 4);
        let xz = Mat::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        let zk = Mat::from_fn(n, w, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        // Current model: first two columns fixed, the rest scaled.
        let s: Vec<f64> = vec![1.0, 1.0, 0.7, 1.3, 0.4, 0.9];
        let base_gram = linalg::cross(xz.as_ref(), xz.as_ref());
        let mut h = linalg::scale_rows_cols(base_gram.as_ref(), &s, &s);
        for i in 2..d {
            h[(i, i)] += 1.0;
        }
        let cache = BlockCache::from_matrix(h.as_ref()).unwrap();
        let rhs_raw = linalg::cross_vec(xz.as_ref(), &y);
        let rhs = Col::from_fn(d, |i| s[i] * rhs_raw[i]);
        let sol = cache.h_inv() * &rhs;
        let yty: f64 = y.iter().map(|v| v * v).sum();
        let base_d = yty - linalg::dot(&sol, &rhs);

        let raw_cross = linalg::cross(xz.as_ref(), zk.as_ref());
        let a = linalg::scale_rows_cols(raw_cross.as_ref(), &s, &[1.0; 4]);
        let gram = linalg::cross(zk.as_ref(), zk.as_ref());
        let zty = linalg::col_to_vec(&linalg::cross_vec(zk.as_ref(), &y));
        let sys = CandidateSystem::new(&cache, a.as_ref(), gram.as_ref(), &zty, &sol, base_d).unwrap();

        let v = [0.5, 1.2, 0.3, 2.0];
        let g_cross = linalg::scale_rows_cols(a.as_ref(), &[1.0; 6], &v);
        let mut g_new = linalg::scale_rows_cols(gram.as_ref(), &v, &v);
        for i in 0..w {
            g_new[(i, i)] += 1.0;
        }
        let q = schur_complement(&cache, g_cross.as_ref(), g_new.as_ref()).unwrap();
        assert!(linalg::max_abs_diff(q.as_ref(), sys.schur(&v).as_ref()) < 1e-10);

        let stats = FactorStats::default();
        let (logdet, dnew) = sys.evaluate(&v, &stats).unwrap();
        assert_eq!((stats.count(), stats.max_dim()), (1, w));

        // Dense reference on the bordered system.
        let full_s: Vec<f64> = s.iter().cloned().chain(v.iter().cloned()).collect();
        let full = Mat::from_fn(n, d + w, |i, j| if j < d { xz[(i, j)] } else { zk[(i, j - d)] });
        let fg = linalg::cross(full.as_ref(), full.as_ref());
        let mut fh = linalg::scale_rows_cols(fg.as_ref(), &full_s, &full_s);
        for i in 2..d + w {
            fh[(i, i)] += 1.0;
        }
        let ff = SpdFactor::new(fh.as_ref(), "full").unwrap();
        let frhs_raw = linalg::cross_vec(full.as_ref(), &y);
        let frhs = Col::from_fn(d + w, |i| full_s[i] * frhs_raw[i]);
        let fsol = ff.solve_col(&frhs);
        let fd = yty - linalg::dot(&fsol, &frhs);
        assert!((logdet - ff.logdet()).abs() < 1e-10);
        assert!((dnew - fd).abs() < 1e-10 * fd);
    }
}

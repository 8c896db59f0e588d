mod common;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::normal;
use stvc::basis::{BasisConfig, MoranBasis, PointSet};
use stvc::design::{TermBlock, TermKind, TermSpec};
use stvc::likelihood::{profile_loglik, ModelTerms, VarianceParams};
use stvc::optimize::{maximize_term, OptConfig};

fn one_term_problem(seed: u64, tau2: f64, alpha: f64) -> (Mat<f64>, TermBlock, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sites, reps) = (150, 4);
    let sx: Vec<f64> = (0..sites).map(|_| rng.gen()).collect();
    let sy: Vec<f64> = (0..sites).map(|_| rng.gen()).collect();
    let x: Vec<f64> = (0..sites * reps).map(|i| sx[i % sites]).collect();
    let y: Vec<f64> = (0..sites * reps).map(|i| sy[i % sites]).collect();
    let ps = PointSet::spatial(&x, &y).unwrap();
    let basis = MoranBasis::from_points(&ps, &BasisConfig::spatial_default()).unwrap();
    let e = basis.eigvecs();
    let rows = ps.obs_index();
    let n = rows.len();
    let z = Mat::from_fn(n, basis.len(), |i, l| e[(rows[i], l)]);
    let gamma: Vec<f64> = basis
        .eigvals()
        .iter()
        .map(|l| (tau2 * l.powf(alpha)).sqrt() * normal(&mut rng))
        .collect();
    let resp: Vec<f64> = (0..n)
        .map(|i| 1.0 + (0..basis.len()).map(|l| z[(i, l)] * gamma[l]).sum::<f64>() + normal(&mut rng))
        .collect();
    let block = TermBlock {
        spec: TermSpec::new(0, TermKind::Spatial),
        z,
        eigval_profile: basis.eigvals().to_vec(),
    };
    (Mat::from_fn(n, 1, |_, _| 1.0), block, resp)
}

fn grid_max(f: &mut dyn FnMut(f64, f64) -> f64, lt: (f64, f64), al: (f64, f64)) -> (f64, f64, f64) {
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..100 {
        for j in 0..100 {
            let a = lt.0 + (lt.1 - lt.0) * i as f64 / 99.0;
            let b = al.0 + (al.1 - al.0) * j as f64 / 99.0;
            let v = f(a, b);
            if v > best.0 {
                best = (v, a, b);
            }
        }
    }
    best
}

#[test]
fn optimizer_matches_grid_search() {
    for (seed, tau2, alpha) in [(1, 2.0, 1.5), (2, 0.5, 0.5), (3, 4.0, 3.0)] {
        let (x, block, y) = one_term_problem(seed, tau2, alpha);
        let mut f = |lt: f64, a: f64| {
            let terms = ModelTerms::new(x.clone(), vec![(block.clone(), VarianceParams::from_log(lt, a))]).unwrap();
            profile_loglik(&terms, &y).map(|s| s.loglik).unwrap_or(f64::NEG_INFINITY)
        };
        let cfg = OptConfig::default();
        let res = maximize_term(&mut f, &cfg).unwrap();
        // Coarse grid over the whole box, then a fine grid over the cells
        // around the coarse optimum.
        let (_, a0, b0) = grid_max(&mut f, cfg.log_tau2_bounds, cfg.alpha_bounds);
        let hl = (cfg.log_tau2_bounds.1 - cfg.log_tau2_bounds.0) / 99.0;
        let ha = (cfg.alpha_bounds.1 - cfg.alpha_bounds.0) / 99.0;
        let clamp = |v: f64, (lo, hi): (f64, f64)| v.clamp(lo, hi);
        let (fine, _, _) = grid_max(
            &mut f,
            (clamp(a0 - hl, cfg.log_tau2_bounds), clamp(a0 + hl, cfg.log_tau2_bounds)),
            (clamp(b0 - ha, cfg.alpha_bounds), clamp(b0 + ha, cfg.alpha_bounds)),
        );
        assert!(
            (res.loglik - fine).abs() < 1e-3,
            "seed {seed}: optimizer {} vs grid {fine}",
            res.loglik
        );
    }
}

//! Bounded Nelder–Mead maximization over one term's `(log τ², α)`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StvcError};
use crate::likelihood::VarianceParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    pub alpha_bounds: (f64, f64),
    pub log_tau2_bounds: (f64, f64),
    /// Objective evaluations allowed per start.
    pub max_evals: usize,
    /// Stop once the simplex values agree to `rel_tol · (1 + |f|)`...
    pub rel_tol: f64,
    /// ...and its vertices lie within this distance of the best one.
    pub x_tol: f64,
    /// Initial `(log τ², α)` points.
    pub starts: Vec<(f64, f64)>,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            alpha_bounds: (-5.0, 5.0),
            log_tau2_bounds: (-12.0, 12.0),
            max_evals: 200,
            rel_tol: 1e-5,
            x_tol: 1e-4,
            starts: vec![(0.0, 0.0), (-4.0, 2.0)],
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let ok_bounds = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ok_bounds(self.alpha_bounds) || !ok_bounds(self.log_tau2_bounds) {
            return Err(StvcError::Config("optimizer bounds must be finite and ordered".into()));
        }
        if self.max_evals < 10 {
            return Err(StvcError::Config(format!(
                "max_evals must be at least 10, got {}",
                self.max_evals
            )));
        }
        if !(self.rel_tol > 0.0) || !(self.x_tol >= 0.0) {
            return Err(StvcError::Config("optimizer tolerances must be positive".into()));
        }
        if self.starts.is_empty() {
            return Err(StvcError::Config("at least one optimizer start is required".into()));
        }
        Ok(())
    }

    fn clamp(&self, x: [f64; 2]) -> [f64; 2] {
        [
            x[0].clamp(self.log_tau2_bounds.0, self.log_tau2_bounds.1),
            x[1].clamp(self.alpha_bounds.0, self.alpha_bounds.1),
        ]
    }

    fn bounds(&self, k: usize) -> (f64, f64) {
        if k == 0 {
            self.log_tau2_bounds
        } else {
            self.alpha_bounds
        }
    }
}

/// Best point found by [`maximize_term`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptResult {
    pub params: VarianceParams,
    pub log_tau2: f64,
    pub alpha: f64,
    pub loglik: f64,
    pub evals: usize,
}

/// Maximizes `objective(log τ², α)` inside the configured box. Non-finite
/// values are treated as infeasible. Among equal values the first point
/// evaluated wins.
pub fn maximize_term<F>(mut objective: F, config: &OptConfig) -> Result<OptResult>
where
    F: FnMut(f64, f64) -> f64,
{
    config.validate()?;
    let mut best: Option<([f64; 2], f64)> = None;
    let mut evals = 0;
    for &start in &config.starts {
        let (x, f, used) = nelder_mead(&mut objective, config, config.clamp([start.0, start.1]));
        evals += used;
        if f.is_finite() && best.is_none_or(|(_, bf)| f > bf) {
            best = Some((x, f));
        }
    }
    let (x, f) = best.ok_or_else(|| {
        StvcError::Unfittable("objective is not finite at any start point".into())
    })?;
    Ok(OptResult {
        params: VarianceParams::from_log(x[0], x[1]),
        log_tau2: x[0],
        alpha: x[1],
        loglik: f,
        evals,
    })
}

/// Minimizes `-objective` from one start; returns the best point seen, its
/// objective value and the number of evaluations.
fn nelder_mead<F>(objective: &mut F, cfg: &OptConfig, x0: [f64; 2]) -> ([f64; 2], f64, usize)
where
    F: FnMut(f64, f64) -> f64,
{
    let mut evals = 0usize;
    let mut best = (x0, f64::NEG_INFINITY);
    let mut eval = |x: [f64; 2], evals: &mut usize, best: &mut ([f64; 2], f64)| -> f64 {
        *evals += 1;
        let v = objective(x[0], x[1]);
        if v.is_finite() && v > best.1 {
            *best = (x, v);
        }
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };

    // Vertices carry their evaluation order so ties keep the older point first.
    let mut simplex: Vec<([f64; 2], f64, usize)> = Vec::with_capacity(3);
    simplex.push((x0, eval(x0, &mut evals, &mut best), 0));
    for k in 0..2 {
        let (lo, hi) = cfg.bounds(k);
        let mut x = x0;
        let step = if x0[k] + 1.0 <= hi { 1.0 } else { -1.0 };
        x[k] = (x0[k] + step).clamp(lo, hi);
        simplex.push((x, eval(x, &mut evals, &mut best), k + 1));
    }
    let mut stamp = 3;

    while evals < cfg.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)));
        let (fb, fw) = (simplex[0].1, simplex[2].1);
        let spread = fw - fb;
        let diameter = simplex[1..]
            .iter()
            .map(|v| (v.0[0] - simplex[0].0[0]).hypot(v.0[1] - simplex[0].0[1]))
            .fold(0.0, f64::max);
        if spread.is_finite() && spread <= cfg.rel_tol * (1.0 + fb.abs()) && diameter <= cfg.x_tol {
            break;
        }
        if diameter == 0.0 {
            break;
        }
        let centroid = [
            0.5 * (simplex[0].0[0] + simplex[1].0[0]),
            0.5 * (simplex[0].0[1] + simplex[1].0[1]),
        ];
        let along = |t: f64| {
            cfg.clamp([
                centroid[0] + t * (simplex[2].0[0] - centroid[0]),
                centroid[1] + t * (simplex[2].0[1] - centroid[1]),
            ])
        };
        let xr = along(-1.0);
        let fr = eval(xr, &mut evals, &mut best);
        let replacement = if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(xe, &mut evals, &mut best);
            if fe < fr {
                Some((xe, fe))
            } else {
                Some((xr, fr))
            }
        } else if fr < simplex[1].1 {
            Some((xr, fr))
        } else {
            let (xc, fc) = if fr < simplex[2].1 {
                let xc = along(-0.5);
                (xc, eval(xc, &mut evals, &mut best))
            } else {
                let xc = along(0.5);
                (xc, eval(xc, &mut evals, &mut best))
            };
            if fc < simplex[2].1.min(fr) {
                Some((xc, fc))
            } else {
                None
            }
        };
        match replacement {
            Some((x, f)) => {
                simplex[2] = (x, f, stamp);
                stamp += 1;
            }
            None => {
                let xb = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    let x = cfg.clamp([0.5 * (xb[0] + v.0[0]), 0.5 * (xb[1] + v.0[1])]);
                    let f = eval(x, &mut evals, &mut best);
                    *v = (x, f, stamp);
                    stamp += 1;
                }
            }
        }
    }
    (best.0, best.1, evals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quadratic_maximum() {
        let r = maximize_term(|a, b| -(a - 1.0).powi(2) - (b - 2.0).powi(2), &OptConfig::default()).unwrap();
        assert!((r.log_tau2 - 1.0).abs() < 1e-3);
        assert!((r.alpha - 2.0).abs() < 1e-3);
    }

    #[test]
    fn constant_objective_returns_first_start() {
        let r = maximize_term(|_, _| 3.0, &OptConfig::default()).unwrap();
        assert_eq!((r.log_tau2, r.alpha), (0.0, 0.0));
        assert_eq!(r.loglik, 3.0);
    }

    #[test]
    fn nonfinite_everywhere_is_unfittable() {
        assert!(matches!(
            maximize_term(|_, _| f64::NAN, &OptConfig::default()),
            Err(StvcError::Unfittable(_))
        ));
    }

    #[test]
    fn maximum_outside_box_lands_on_bound() {
        let r = maximize_term(|a, b| a + b, &OptConfig::default()).unwrap();
        assert!((r.log_tau2 - 12.0).abs() < 1e-3);
        assert!((r.alpha - 5.0).abs() < 1e-3);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        let f = |a: f64, b: f64| if a > 0.5 { f64::NEG_INFINITY } else { -(a - 2.0).powi(2) - b * b };
        let r = maximize_term(f, &OptConfig::default()).unwrap();
        assert!(r.log_tau2 <= 0.5);
        assert!(r.log_tau2 > 0.3);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = OptConfig {
            max_evals: 5,
            ..OptConfig::default()
        };
        assert!(matches!(maximize_term(|_, _| 0.0, &cfg), Err(StvcError::Config(_))));
    }

    fn surface(a: f64, b: f64, ca: f64, cb: f64) -> f64 {
        -((a - ca).powi(2) + 0.5 * (a - ca) * (b - cb) + 2.0 * (b - cb).powi(2)).sqrt() - 0.1 * (a - ca).powi(2)
    }

    proptest! {
        #[test]
        fn result_dominates_starts_and_stays_in_bounds(ca in -20.0f64..20.0, cb in -8.0f64..8.0) {
            let cfg = OptConfig::default();
            let r = maximize_term(|a, b| surface(a, b, ca, cb), &cfg).unwrap();
            for &(a, b) in &cfg.starts {
                prop_assert!(r.loglik >= surface(a, b, ca, cb));
            }
            prop_assert!(r.log_tau2 >= -12.0 && r.log_tau2 <= 12.0);
            prop_assert!(r.alpha >= -5.0 && r.alpha <= 5.0);
            let again = maximize_term(|a, b| surface(a, b, ca, cb), &cfg).unwrap();
            prop_assert_eq!(r.loglik.to_bits(), again.loglik.to_bits());
            prop_assert_eq!(r.log_tau2.to_bits(), again.log_tau2.to_bits());
        }
    }
}

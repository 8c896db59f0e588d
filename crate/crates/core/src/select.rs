//! Forward selection of main processes by BIC, then reluctant addition of
//! space-time interactions against a frozen cache of `H⁻¹`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use faer::{Col, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::basis::AxisKind;
use crate::design::{self, BasisSet, Dataset, TermKind, TermSpec};
use crate::error::{Result, StvcError};
use crate::likelihood::{self, VarianceParams};
use crate::linalg;
use crate::optimize::{maximize_term, OptConfig};
use crate::schur::{self, BlockCache, CandidateSystem, FactorStats};

/// Coefficient specification families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Structure {
    #[serde(rename = "LM")]
    Lm,
    #[serde(rename = "S")]
    S,
    #[serde(rename = "ST")]
    St,
    #[serde(rename = "ST_int")]
    StInt,
    #[serde(rename = "STc")]
    Stc,
    #[serde(rename = "STc_int")]
    StcInt,
}

impl Structure {
    pub const ALL: [Structure; 6] = [
        Structure::Lm,
        Structure::S,
        Structure::St,
        Structure::StInt,
        Structure::Stc,
        Structure::StcInt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Structure::Lm => "LM",
            Structure::S => "S",
            Structure::St => "ST",
            Structure::StInt => "ST_int",
            Structure::Stc => "STc",
            Structure::StcInt => "STc_int",
        }
    }

    /// Term kinds a coefficient may use given the kinds of the time axes.
    /// Structures without `c` use linear time axes only.
    pub fn kinds(&self, axes: &[AxisKind]) -> Vec<TermKind> {
        let (spatial, temporal, interaction, cyclic) = match self {
            Structure::Lm => (false, false, false, false),
            Structure::S => (true, false, false, false),
            Structure::St => (true, true, false, false),
            Structure::StInt => (true, true, true, false),
            Structure::Stc => (true, true, false, true),
            Structure::StcInt => (true, true, true, true),
        };
        let mut out = Vec::new();
        if spatial {
            out.push(TermKind::Spatial);
        }
        let usable = |k: &AxisKind| cyclic || !k.is_cyclic();
        if temporal {
            out.extend(axes.iter().enumerate().filter(|(_, k)| usable(k)).map(|(m, _)| TermKind::Temporal(m)));
        }
        if interaction {
            out.extend(axes.iter().enumerate().filter(|(_, k)| usable(k)).map(|(m, _)| TermKind::Interaction(m)));
        }
        out
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Structure {
    type Err = StvcError;

    fn from_str(s: &str) -> Result<Self> {
        Structure::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| StvcError::Config(format!("unknown model structure '{s}'")))
    }
}

/// Allowed term kinds per covariate.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelStructure {
    allowed: Vec<Vec<TermKind>>,
}

impl ModelStructure {
    /// Same structure for every covariate of `data`.
    pub fn uniform(structure: Structure, data: &Dataset) -> Self {
        Self::per_coefficient(&vec![structure; data.p()], data)
    }

    pub fn per_coefficient(structures: &[Structure], data: &Dataset) -> Self {
        let axes: Vec<AxisKind> = data.times().iter().map(|t| t.kind()).collect();
        Self {
            allowed: structures.iter().map(|s| s.kinds(&axes)).collect(),
        }
    }

    pub fn from_kinds(allowed: Vec<Vec<TermKind>>) -> Self {
        Self { allowed }
    }

    pub fn allowed(&self, p: usize) -> &[TermKind] {
        self.allowed.get(p).map_or(&[], |v| v.as_slice())
    }

    fn specs(&self, interaction: bool) -> Vec<TermSpec> {
        let mut out = Vec::new();
        for (p, kinds) in self.allowed.iter().enumerate() {
            for &k in kinds {
                if matches!(k, TermKind::Interaction(_)) == interaction {
                    out.push(TermSpec::new(p, k));
                }
            }
        }
        out.sort();
        out
    }
}

/// How candidate likelihoods are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Factor only the candidate-sized Schur complement.
    Incremental,
    /// Rebuild and invert the full `H` at every evaluation.
    Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub optimizer: OptConfig,
    /// Minimum BIC improvement for accepting a candidate.
    pub bic_tol: f64,
    pub strategy: Strategy,
    /// Recompute `H⁻¹` densely after this many appends.
    pub refresh_every: Option<usize>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            optimizer: OptConfig::default(),
            bic_tol: 1e-6,
            strategy: Strategy::Incremental,
            refresh_every: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Main,
    Interaction,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Main => "main",
            Phase::Interaction => "interaction",
        }
    }
}

/// One candidate evaluation.
#[derive(Clone, Debug)]
pub struct HistoryRecord {
    pub phase: Phase,
    pub sweep: usize,
    pub candidate: TermSpec,
    pub log_tau2: f64,
    pub alpha: f64,
    pub tau2: f64,
    pub loglik: f64,
    pub bic: f64,
    pub accepted: bool,
    pub wall_ms: f64,
    pub evals: usize,
    pub factorizations: usize,
    pub max_factored_dim: usize,
    pub failure: Option<String>,
}

/// An accepted term with its estimates.
#[derive(Clone, Debug)]
pub struct FittedTerm {
    pub spec: TermSpec,
    pub params: VarianceParams,
    pub gamma: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ModelFit {
    pub names: Vec<String>,
    pub b_hat: Vec<f64>,
    pub terms: Vec<FittedTerm>,
    pub sigma2_hat: f64,
    pub loglik: f64,
    pub bic: f64,
    pub ols_bic: f64,
    pub main_bic: f64,
    /// BIC after OLS and after every accepted term.
    pub bic_trajectory: Vec<f64>,
    pub history: Vec<HistoryRecord>,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub l_s: usize,
    pub l_t: Vec<usize>,
    pub edf: f64,
    pub rss: f64,
    pub r2_adj: f64,
    pub seconds: f64,
}

impl ModelFit {
    pub fn term(&self, spec: TermSpec) -> Option<&FittedTerm> {
        self.terms.iter().find(|t| t.spec == spec)
    }

    pub fn accepted_interactions(&self) -> Vec<TermSpec> {
        self.terms
            .iter()
            .map(|t| t.spec)
            .filter(|s| matches!(s.kind, TermKind::Interaction(_)))
            .collect()
    }
}

struct ModelTerm {
    spec: TermSpec,
    params: VarianceParams,
    width: usize,
}

struct Candidate {
    spec: TermSpec,
    eig: Vec<f64>,
    /// Unscaled `[X Z_K]' Z_κ`.
    cross: Mat<f64>,
    gram: Mat<f64>,
    zty: Vec<f64>,
}

struct Evaluation {
    loglik: f64,
    bic: f64,
    params: VarianceParams,
    log_tau2: f64,
}

/// Model built so far plus the cached quantities for evaluating additions.
pub struct SelectionState<'a> {
    data: &'a Dataset,
    bases: &'a BasisSet,
    structure: ModelStructure,
    cfg: SelectionConfig,
    terms: Vec<ModelTerm>,
    gram: Mat<f64>,
    rhs: Vec<f64>,
    yty: f64,
    scales: Vec<f64>,
    cache: BlockCache,
    sol: Col<f64>,
    d: f64,
    loglik: f64,
    bic: f64,
    ols_bic: f64,
    main_bic: f64,
    appends: usize,
    stats: FactorStats,
    history: Vec<HistoryRecord>,
    trajectory: Vec<f64>,
    started: Instant,
}

impl<'a> SelectionState<'a> {
    /// OLS on the fixed effects.
    pub fn ols(
        data: &'a Dataset,
        bases: &'a BasisSet,
        structure: ModelStructure,
        cfg: SelectionConfig,
    ) -> Result<Self> {
        cfg.optimizer.validate()?;
        let x = data.x().as_ref();
        let gram = linalg::cross(x, x);
        let rhs = linalg::col_to_vec(&linalg::cross_vec(x, data.y()));
        let cache = BlockCache::from_matrix(gram.as_ref())
            .map_err(|_| StvcError::SingularDesign("X'X is not positive definite".into()))?;
        let mut s = Self {
            data,
            bases,
            structure,
            cfg,
            terms: Vec::new(),
            gram,
            rhs,
            yty: data.y().iter().map(|v| v * v).sum(),
            scales: vec![1.0; data.p()],
            cache,
            sol: Col::zeros(0),
            d: 0.0,
            loglik: 0.0,
            bic: 0.0,
            ols_bic: 0.0,
            main_bic: 0.0,
            appends: 0,
            stats: FactorStats::default(),
            history: Vec::new(),
            trajectory: Vec::new(),
            started: Instant::now(),
        };
        s.resolve()?;
        s.ols_bic = s.bic;
        s.main_bic = s.bic;
        s.trajectory.push(s.bic);
        Ok(s)
    }

    /// OLS followed by forward selection of the allowed main groups.
    pub fn fit_main_model(
        data: &'a Dataset,
        bases: &'a BasisSet,
        structure: ModelStructure,
        cfg: SelectionConfig,
    ) -> Result<Self> {
        let mut s = Self::ols(data, bases, structure, cfg)?;
        let specs = s.structure.specs(false);
        s.forward(Phase::Main, specs)?;
        s.main_bic = s.bic;
        Ok(s)
    }

    /// Adds the allowed interaction terms one at a time while BIC improves.
    pub fn reluctant_select(mut self) -> Result<Self> {
        let specs = self.structure.specs(true);
        self.forward(Phase::Interaction, specs)?;
        Ok(self)
    }

    pub fn bic(&self) -> f64 {
        self.bic
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn dim(&self) -> usize {
        self.scales.len()
    }

    pub fn selected(&self) -> Vec<TermSpec> {
        self.terms.iter().map(|t| t.spec).collect()
    }

    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    pub fn cache(&self) -> &BlockCache {
        &self.cache
    }

    /// Dense `H` at the current parameters, rebuilt from the cached Gram.
    pub fn dense_h(&self) -> Mat<f64> {
        scaled_h(self.gram.as_ref(), &self.scales, self.data.p())
    }

    fn n(&self) -> usize {
        self.data.n()
    }

    fn p(&self) -> usize {
        self.data.p()
    }

    fn theta(&self) -> Vec<(f64, f64)> {
        self.terms.iter().map(|t| (t.params.tau2, t.params.alpha)).collect()
    }

    /// Recomputes the solution, residual, likelihood and BIC from the cache.
    fn resolve(&mut self) -> Result<()> {
        let rhs = Col::from_fn(self.rhs.len(), |i| self.scales[i] * self.rhs[i]);
        // One refinement step; the explicit inverse alone loses digits when
        // `H` is ill conditioned.
        let mut sol = self.cache.h_inv() * &rhs;
        let resid = &rhs - self.dense_h() * &sol;
        sol += self.cache.h_inv() * &resid;
        self.sol = sol;
        self.d = likelihood::clean_residual(self.yty - linalg::dot(&self.sol, &rhs), self.yty);
        self.loglik = likelihood::loglik_value(self.cache.logdet(), self.d, self.n(), self.p())
            .map_err(|e| match e {
                StvcError::NumericalFailure { reason, .. } => StvcError::NumericalFailure {
                    theta: self.theta(),
                    reason,
                },
                other => other,
            })?;
        self.bic = likelihood::bic(self.loglik, self.terms.len(), self.n(), self.p());
        Ok(())
    }

    /// Current unscaled design `[X Z_K]`.
    fn current_design(&self) -> Mat<f64> {
        let n = self.n();
        let mut out = Mat::zeros(n, self.dim());
        let x = self.data.x();
        for j in 0..self.p() {
            for i in 0..n {
                out[(i, j)] = x[(i, j)];
            }
        }
        let mut off = self.p();
        for t in &self.terms {
            let b = design::build_block(self.data, self.bases, t.spec).expect("accepted term has a block");
            for j in 0..t.width {
                for i in 0..n {
                    out[(i, off + j)] = b.z[(i, j)];
                }
            }
            off += t.width;
        }
        out
    }

    fn make_candidates(&self, specs: Vec<TermSpec>) -> Vec<Candidate> {
        let built: Vec<_> = specs
            .into_iter()
            .filter_map(|s| design::build_block(self.data, self.bases, s))
            .collect();
        if built.is_empty() {
            return Vec::new();
        }
        let w = self.current_design();
        let y = self.data.y();
        built
            .into_iter()
            .map(|b| Candidate {
                spec: b.spec,
                cross: linalg::cross(w.as_ref(), b.z.as_ref()),
                gram: linalg::cross(b.z.as_ref(), b.z.as_ref()),
                zty: linalg::col_to_vec(&linalg::cross_vec(b.z.as_ref(), y)),
                eig: b.eigval_profile,
            })
            .collect()
    }

    fn forward(&mut self, phase: Phase, specs: Vec<TermSpec>) -> Result<()> {
        let mut pool = self.make_candidates(specs);
        let mut sweep = 0;
        while !pool.is_empty() {
            sweep += 1;
            let first = self.history.len();
            let mut best: Option<(usize, Evaluation, usize)> = None;
            for (ci, cand) in pool.iter().enumerate() {
                let t0 = Instant::now();
                self.stats.reset();
                let res = self.evaluate(cand);
                let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
                let mut rec = HistoryRecord {
                    phase,
                    sweep,
                    candidate: cand.spec,
                    log_tau2: f64::NAN,
                    alpha: f64::NAN,
                    tau2: f64::NAN,
                    loglik: f64::NAN,
                    bic: f64::NAN,
                    accepted: false,
                    wall_ms,
                    evals: 0,
                    factorizations: self.stats.count(),
                    max_factored_dim: self.stats.max_dim(),
                    failure: None,
                };
                match res {
                    Ok((ev, evals)) => {
                        rec.log_tau2 = ev.log_tau2;
                        rec.alpha = ev.params.alpha;
                        rec.tau2 = ev.params.tau2;
                        rec.loglik = ev.loglik;
                        rec.bic = ev.bic;
                        rec.evals = evals;
                        if best.as_ref().is_none_or(|(_, b, _)| ev.bic < b.bic) {
                            best = Some((ci, ev, self.history.len()));
                        }
                    }
                    Err(e) => rec.failure = Some(e.to_string()),
                }
                self.history.push(rec);
            }
            let Some((ci, ev, hi)) = best else { break };
            if !(self.bic - ev.bic >= self.cfg.bic_tol) {
                break;
            }
            debug_assert!(hi >= first);
            self.history[hi].accepted = true;
            let cand = pool.remove(ci);
            self.commit(cand, ev.params, &mut pool)?;
            self.trajectory.push(self.bic);
        }
        Ok(())
    }

    /// Maximizes the likelihood over the candidate's own `(τ², α)`.
    fn evaluate(&self, cand: &Candidate) -> Result<(Evaluation, usize)> {
        let n = self.n();
        let p = self.p();
        let pairs = self.terms.len() + 1;
        let yty = self.yty;
        let opt = match self.cfg.strategy {
            Strategy::Incremental => {
                let a = self.scaled_cross(cand);
                let sys = CandidateSystem::new(
                    &self.cache,
                    a.as_ref(),
                    cand.gram.as_ref(),
                    &cand.zty,
                    &self.sol,
                    self.d,
                )?;
                maximize_term(
                    |lt, al| {
                        let v = likelihood::scale_diag(&cand.eig, VarianceParams::from_log(lt, al));
                        sys.evaluate(&v, &self.stats)
                            .and_then(|(logdet, d)| {
                                likelihood::loglik_value(logdet, likelihood::clean_residual(d, yty), n, p)
                            })
                            .unwrap_or(f64::NEG_INFINITY)
                    },
                    &self.cfg.optimizer,
                )?
            }
            Strategy::Dense => maximize_term(
                |lt, al| {
                    self.dense_loglik(cand, VarianceParams::from_log(lt, al))
                        .unwrap_or(f64::NEG_INFINITY)
                },
                &self.cfg.optimizer,
            )?,
        };
        Ok((
            Evaluation {
                loglik: opt.loglik,
                bic: likelihood::bic(opt.loglik, pairs, n, p),
                params: opt.params,
                log_tau2: opt.log_tau2,
            },
            opt.evals,
        ))
    }

    fn scaled_cross(&self, cand: &Candidate) -> Mat<f64> {
        let c = &cand.cross;
        Mat::from_fn(c.nrows(), c.ncols(), |i, j| self.scales[i] * c[(i, j)])
    }

    /// Gram, right-hand side and scales of the model with `cand` appended.
    fn bordered(&self, cand: &Candidate, v: &[f64]) -> (Mat<f64>, Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let w = cand.zty.len();
        let gram = Mat::from_fn(d + w, d + w, |i, j| match (i < d, j < d) {
            (true, true) => self.gram[(i, j)],
            (true, false) => cand.cross[(i, j - d)],
            (false, true) => cand.cross[(j, i - d)],
            (false, false) => cand.gram[(i - d, j - d)],
        });
        let rhs = self.rhs.iter().chain(&cand.zty).cloned().collect();
        let scales = self.scales.iter().chain(v).cloned().collect();
        (gram, rhs, scales)
    }

    /// Naive evaluation: assemble the full `H` and invert it explicitly.
    fn dense_loglik(&self, cand: &Candidate, params: VarianceParams) -> Result<f64> {
        let v = likelihood::scale_diag(&cand.eig, params);
        let (gram, rhs, scales) = self.bordered(cand, &v);
        let h = scaled_h(gram.as_ref(), &scales, self.p());
        self.stats.record(h.nrows());
        let f = linalg::SpdFactor::new(h.as_ref(), "H")?;
        let h_inv = f.inverse();
        let rhs = Col::from_fn(rhs.len(), |i| scales[i] * rhs[i]);
        let mut sol = &h_inv * &rhs;
        let resid = &rhs - &h * &sol;
        sol += &h_inv * &resid;
        let d = likelihood::clean_residual(self.yty - linalg::dot(&sol, &rhs), self.yty);
        likelihood::loglik_value(f.logdet(), d, self.n(), self.p())
    }

    fn commit(&mut self, cand: Candidate, params: VarianceParams, pool: &mut [Candidate]) -> Result<()> {
        let v = likelihood::scale_diag(&cand.eig, params);
        let (gram, rhs, scales) = self.bordered(&cand, &v);
        self.appends += 1;
        let refresh = self.cfg.refresh_every.is_some_and(|k| k > 0 && self.appends % k == 0);
        let cache = match self.cfg.strategy {
            Strategy::Incremental if !refresh => {
                let a = self.scaled_cross(&cand);
                let g_cross = Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * v[j]);
                let mut g_new = linalg::scale_rows_cols(cand.gram.as_ref(), &v, &v);
                for i in 0..v.len() {
                    g_new[(i, i)] += 1.0;
                }
                schur::commit_append(&self.cache, g_cross.as_ref(), g_new.as_ref())
            }
            _ => BlockCache::from_matrix(scaled_h(gram.as_ref(), &scales, self.p()).as_ref()),
        }
        .map_err(|e| StvcError::NumericalFailure {
            theta: self.theta(),
            reason: format!("appending {}: {e}", cand.spec),
        })?;

        if !pool.is_empty() {
            let new_z = design::build_block(self.data, self.bases, cand.spec).expect("candidate has a block");
            for other in pool.iter_mut() {
                let z = design::build_block(self.data, self.bases, other.spec).expect("candidate has a block");
                let extra = linalg::cross(new_z.z.as_ref(), z.z.as_ref());
                other.cross = stack_rows(other.cross.as_ref(), extra.as_ref());
            }
        }

        self.terms.push(ModelTerm {
            spec: cand.spec,
            params,
            width: v.len(),
        });
        self.gram = gram;
        self.rhs = rhs;
        self.scales = scales;
        self.cache = cache;
        self.resolve()
    }

    /// Final estimates and fit statistics.
    pub fn into_fit(self) -> ModelFit {
        let p = self.p();
        let n = self.n();
        let gamma_all: Vec<f64> = (0..self.dim()).map(|i| self.scales[i] * self.sol[i]).collect();
        let mut off = p;
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let g = gamma_all[off..off + t.width].to_vec();
                off += t.width;
                FittedTerm {
                    spec: t.spec,
                    params: t.params,
                    gamma: g,
                }
            })
            .collect();
        let h_inv = self.cache.h_inv();
        let trace_uu: f64 = (p..self.dim()).map(|i| h_inv[(i, i)]).sum();
        let edf = self.dim() as f64 - trace_uu;
        let pen: f64 = (p..self.dim()).map(|i| self.sol[i] * self.sol[i]).sum();
        let rss = self.d - pen;
        let y = self.data.y();
        let mean = y.iter().sum::<f64>() / n as f64;
        let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let r2_adj = 1.0 - (rss / (n as f64 - edf)) / (tss / (n as f64 - 1.0));
        ModelFit {
            names: self.data.names().to_vec(),
            b_hat: (0..p).map(|i| self.sol[i]).collect(),
            terms,
            sigma2_hat: self.d / (n - p) as f64,
            loglik: self.loglik,
            bic: self.bic,
            ols_bic: self.ols_bic,
            main_bic: self.main_bic,
            bic_trajectory: self.trajectory,
            history: self.history,
            n,
            p,
            m: self.data.m(),
            l_s: self.bases.l_s(),
            l_t: (0..self.bases.n_temporal()).map(|m| self.bases.l_t(m)).collect(),
            edf,
            rss,
            r2_adj,
            seconds: self.started.elapsed().as_secs_f64(),
        }
    }
}

fn scaled_h(gram: MatRef<'_, f64>, scales: &[f64], p: usize) -> Mat<f64> {
    let n = gram.nrows();
    Mat::from_fn(n, n, |i, j| {
        let v = scales[i] * gram[(i, j)] * scales[j];
        if i == j && i >= p {
            v + 1.0
        } else {
            v
        }
    })
}

fn stack_rows(top: MatRef<'_, f64>, bottom: MatRef<'_, f64>) -> Mat<f64> {
    let r = top.nrows();
    Mat::from_fn(r + bottom.nrows(), top.ncols(), |i, j| {
        if i < r {
            top[(i, j)]
        } else {
            bottom[(i - r, j)]
        }
    })
}

/// Main-model selection followed by reluctant interaction selection.
pub fn fit_model(
    data: &Dataset,
    bases: &BasisSet,
    structure: ModelStructure,
    cfg: &SelectionConfig,
) -> Result<ModelFit> {
    Ok(SelectionState::fit_main_model(data, bases, structure, cfg.clone())?
        .reluctant_select()?
        .into_fit())
}

/// Per-observation coefficients split into additive parts.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    pub names: Vec<String>,
    pub part_kinds: Vec<TermKind>,
    /// `parts[p][k][i]`: part `k` of coefficient `p` at observation `i`.
    pub parts: Vec<Vec<Vec<f64>>>,
}

impl CoefficientField {
    /// Zero field with parts mean, spatial, then each temporal and
    /// interaction axis.
    pub fn zeros(names: Vec<String>, m: usize, n: usize) -> Self {
        let mut part_kinds = vec![TermKind::Mean, TermKind::Spatial];
        part_kinds.extend((0..m).map(TermKind::Temporal));
        part_kinds.extend((0..m).map(TermKind::Interaction));
        let parts = vec![vec![vec![0.0; n]; part_kinds.len()]; names.len()];
        Self {
            names,
            part_kinds,
            parts,
        }
    }

    pub fn n(&self) -> usize {
        self.parts.first().and_then(|p| p.first()).map_or(0, |v| v.len())
    }

    pub fn p(&self) -> usize {
        self.parts.len()
    }

    pub fn part_index(&self, kind: TermKind) -> Option<usize> {
        self.part_kinds.iter().position(|k| *k == kind)
    }

    pub fn part(&self, p: usize, kind: TermKind) -> &[f64] {
        &self.parts[p][self.part_index(kind).expect("known part kind")]
    }

    pub fn part_mut(&mut self, p: usize, kind: TermKind) -> &mut Vec<f64> {
        let k = self.part_index(kind).expect("known part kind");
        &mut self.parts[p][k]
    }

    /// Sum of the parts of coefficient `p`.
    pub fn total(&self, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for part in &self.parts[p] {
            for (o, v) in out.iter_mut().zip(part) {
                *o += v;
            }
        }
        out
    }

    pub fn part_label(kind: TermKind) -> String {
        match kind {
            TermKind::Mean => "mean".into(),
            TermKind::Spatial => "spatial".into(),
            TermKind::Temporal(m) => format!("temporal{}", m + 1),
            TermKind::Interaction(m) => format!("interaction{}", m + 1),
        }
    }
}

/// Basis rows per observation: `(matrix, row index per observation)`.
pub type AxisRows<'m> = (MatRef<'m, f64>, &'m [usize]);

/// Evaluates the fitted coefficient parts from basis rows per observation.
pub fn reconstruct_with(
    fit: &ModelFit,
    n: usize,
    spatial: Option<AxisRows<'_>>,
    temporal: &[Option<AxisRows<'_>>],
) -> Result<CoefficientField> {
    let mut field = CoefficientField::zeros(fit.names.clone(), fit.m, n);
    for p in 0..fit.p {
        field.part_mut(p, TermKind::Mean).iter_mut().for_each(|v| *v = fit.b_hat[p]);
    }
    let missing = |spec: TermSpec| StvcError::ShapeMismatch(format!("no basis rows for term {spec}"));
    for t in &fit.terms {
        let p = t.spec.covariate;
        let out = field.part_mut(p, t.spec.kind);
        match t.spec.kind {
            TermKind::Mean => {}
            TermKind::Spatial | TermKind::Temporal(_) => {
                let (e, rows) = match t.spec.kind {
                    TermKind::Spatial => spatial,
                    TermKind::Temporal(m) => temporal.get(m).copied().flatten(),
                    _ => unreachable!(),
                }
                .ok_or_else(|| missing(t.spec))?;
                let w = e * linalg::col_from_slice(&t.gamma);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = w[rows[i]];
                }
            }
            TermKind::Interaction(m) => {
                let (es, sr) = spatial.ok_or_else(|| missing(t.spec))?;
                let (et, tr) = temporal.get(m).copied().flatten().ok_or_else(|| missing(t.spec))?;
                let (ls, lt) = (es.ncols(), et.ncols());
                let g = Mat::from_fn(ls, lt, |a, b| t.gamma[a * lt + b]);
                let a = es * &g;
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..lt).map(|k| a[(sr[i], k)] * et[(tr[i], k)]).sum();
                }
            }
        }
    }
    Ok(field)
}

/// Coefficient parts at the observations of `data`.
pub fn reconstruct_coefficients(fit: &ModelFit, data: &Dataset, bases: &BasisSet) -> Result<CoefficientField> {
    let spatial = match (bases.spatial(), data.coords()) {
        (Some(b), Some(c)) => Some((b.eigvecs(), c.obs_index())),
        _ => None,
    };
    let temporal: Vec<Option<AxisRows<'_>>> = (0..data.m())
        .map(|m| bases.temporal(m).map(|b| (b.eigvecs(), data.times()[m].obs_index())))
        .collect();
    reconstruct_with(fit, data.n(), spatial, &temporal)
}

/// Fitted values `Σ_p x_p β̂_p`.
pub fn fitted_values(field: &CoefficientField, x: MatRef<'_, f64>) -> Vec<f64> {
    let mut out = vec![0.0; x.nrows()];
    for p in 0..field.p() {
        let beta = field.total(p);
        for i in 0..out.len() {
            out[i] += x[(i, p)] * beta[i];
        }
    }
    out
}

/// Variance of the regression term and shares of the coefficient parts.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceSummary {
    pub covariate: String,
    /// Sample variance of `x_p ⊙ β̂_p`.
    pub term_variance: f64,
    /// Sample variance of `β̂_p`.
    pub coefficient_variance: f64,
    /// `(part, variance, share)` with shares normalized by the summed part
    /// variances.
    pub parts: Vec<(TermKind, f64, f64)>,
    /// `(var(β̂_p) - Σ var(part)) / var(β̂_p)`: the cross-covariance share.
    pub covariance_residual: f64,
}

pub fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

pub fn variance_summaries(field: &CoefficientField, x: MatRef<'_, f64>) -> Vec<VarianceSummary> {
    (0..field.p())
        .map(|p| {
            let beta = field.total(p);
            let term: Vec<f64> = beta.iter().enumerate().map(|(i, b)| x[(i, p)] * b).collect();
            let vars: Vec<f64> = field.parts[p].iter().map(|v| sample_variance(v)).collect();
            let sum: f64 = vars.iter().sum();
            let total = sample_variance(&beta);
            let parts = field
                .part_kinds
                .iter()
                .zip(&vars)
                .map(|(&k, &v)| (k, v, if sum > 0.0 { v / sum } else { 0.0 }))
                .collect();
            VarianceSummary {
                covariate: field.names[p].clone(),
                term_variance: sample_variance(&term),
                coefficient_variance: total,
                parts,
                covariance_residual: if total > 0.0 { (total - sum) / total } else { 0.0 },
            }
        })
        .collect()
}

impl VarianceSummary {
    /// Summed share of all interaction parts.
    pub fn interaction_share(&self) -> f64 {
        self.parts
            .iter()
            .filter(|(k, _, _)| matches!(k, TermKind::Interaction(_)))
            .map(|(_, _, s)| s)
            .sum()
    }
}

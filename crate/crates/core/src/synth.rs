//! Synthetic scenarios with known coefficient fields, RMSE scoring and a
//! replicate harness.

use std::time::Instant;

use faer::Mat;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::{self, BasisConfig, MoranBasis, PointSet};
use crate::design::{BasisSet, Dataset, TermKind};
use crate::error::{Result, StvcError};
use crate::select::{
    self, AxisRows, CoefficientField, ModelFit, ModelStructure, SelectionConfig, Structure,
};

/// Full description of one synthetic design.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    /// True structure of each coefficient, intercept first.
    pub structures: Vec<Structure>,
    pub taus: Vec<f64>,
    /// Means `b_p`.
    pub means: Vec<f64>,
    pub n_sites: usize,
    pub n_times: usize,
    /// Period of the cyclic time axis; `None` leaves only the linear axis.
    pub period: Option<f64>,
    pub noise_sd: f64,
    /// Observations drawn from the grid; the rest form the holdout set.
    pub n_obs: Option<usize>,
    pub fit_spatial: BasisConfig,
    pub fit_temporal: BasisConfig,
    pub seed: u64,
}

impl ScenarioSpec {
    fn base(name: &str, structures: [Structure; 3], taus: [f64; 3]) -> Self {
        Self {
            name: name.to_string(),
            structures: structures.to_vec(),
            taus: taus.to_vec(),
            means: vec![1.0; 3],
            n_sites: 200,
            n_times: 40,
            period: Some(10.0),
            noise_sd: 1.0,
            n_obs: None,
            fit_spatial: BasisConfig::spatial_default(),
            fit_temporal: BasisConfig::temporal_default(),
            seed: 0,
        }
    }

    fn large(name: &str, n_obs: usize) -> Self {
        Self {
            n_sites: 500,
            n_times: 200,
            period: Some(20.0),
            n_obs: Some(n_obs),
            fit_spatial: BasisConfig {
                max_components: 50,
                eig_tol: 1e-8,
            },
            fit_temporal: BasisConfig {
                max_components: 15,
                eig_tol: 1e-8,
            },
            ..Self::base(name, [Structure::StcInt; 3], [1.0, 2.0, 0.5])
        }
    }

    fn gtwr(name: &str, structures: [Structure; 3]) -> Self {
        Self {
            n_sites: 100,
            n_times: 10,
            period: None,
            ..Self::base(name, structures, [1.0, 2.0, 0.5])
        }
    }

    /// Named preset, or `None` for an unknown name.
    pub fn preset(name: &str) -> Option<Self> {
        use Structure::*;
        let homo = |s: Structure| Self::base(name, [s; 3], [1.0, 2.0, 1.0]);
        Some(match name {
            "I" => Self::base(name, [St, StcInt, Lm], [1.0, 2.0, 1.0]),
            "II" => Self::base(name, [St, Lm, StcInt], [1.0, 2.0, 1.0]),
            "III" => Self::base(name, [StcInt, Lm, Lm], [1.0, 2.0, 1.0]),
            "homo_S" => homo(S),
            "homo_ST" => homo(St),
            "homo_ST_int" => homo(StInt),
            "homo_STc" => homo(Stc),
            "homo_STc_int" => homo(StcInt),
            "gam_2000" => Self::large(name, 2_000),
            "gam_10000" => Self::large(name, 10_000),
            "gam_50000" => Self::large(name, 50_000),
            "gtwr_I" => Self::gtwr(name, [StInt, StInt, StInt]),
            "gtwr_II" => Self::gtwr(name, [StInt, StInt, S]),
            "gtwr_III" => Self::gtwr(name, [StInt, S, StInt]),
            "speedup" => Self {
                n_sites: 200,
                n_times: 100,
                period: None,
                n_obs: Some(10_000),
                fit_spatial: BasisConfig {
                    max_components: 30,
                    eig_tol: 1e-8,
                },
                fit_temporal: BasisConfig {
                    max_components: 20,
                    eig_tol: 1e-8,
                },
                ..Self::base(name, [StInt; 3], [1.0, 2.0, 0.5])
            },
            _ => return None,
        })
    }

    pub const PRESETS: [&'static str; 15] = [
        "I",
        "II",
        "III",
        "homo_S",
        "homo_ST",
        "homo_ST_int",
        "homo_STc",
        "homo_STc_int",
        "gam_2000",
        "gam_10000",
        "gam_50000",
        "gtwr_I",
        "gtwr_II",
        "gtwr_III",
        "speedup",
    ];

    pub fn validate(&self) -> Result<()> {
        let p = self.structures.len();
        if p == 0 || self.taus.len() != p || self.means.len() != p {
            return Err(StvcError::Config(
                "structures, taus and means must have one entry per coefficient".into(),
            ));
        }
        if self.taus.iter().any(|t| !(*t >= 0.0)) || !(self.noise_sd > 0.0) {
            return Err(StvcError::Config("taus must be nonnegative and noise_sd positive".into()));
        }
        if self.n_sites < 3 || self.n_times < 3 {
            return Err(StvcError::Config("need at least 3 sites and 3 time points".into()));
        }
        if let Some(per) = self.period {
            if !(per > 0.0) || per >= self.n_times as f64 + 1.0 {
                return Err(StvcError::Config(format!(
                    "period {per} must be positive and shorter than the time range"
                )));
            }
        }
        if let Some(n) = self.n_obs {
            if n < 2 * p || n > self.n_sites * self.n_times {
                return Err(StvcError::Config(format!("n_obs {n} is outside the grid size")));
            }
        }
        Ok(())
    }
}

/// Observations left out of the fit.
#[derive(Clone, Debug)]
pub struct Holdout {
    pub coords: Vec<[f64; 2]>,
    /// Per time axis, the raw timestamps.
    pub times: Vec<Vec<f64>>,
    pub x: Mat<f64>,
    pub y: Vec<f64>,
    pub truth: CoefficientField,
}

#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub data: Dataset,
    pub truth: CoefficientField,
    pub holdout: Option<Holdout>,
}

/// Shifts `v` to zero sample mean and scales it to unit sample variance.
pub fn standardize(v: &mut [f64]) -> Result<()> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(StvcError::Config("cannot standardize a constant process".into()));
    }
    let sd = var.sqrt();
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    Ok(())
}

/// Basis rows driving one latent process.
pub enum ProcessAxes<'a> {
    Main(AxisRows<'a>),
    Interaction(AxisRows<'a>, AxisRows<'a>),
}

/// Draws i.i.d. standard normal basis coefficients, forms the process at
/// every observation and standardizes it.
pub fn generate_process<R: Rng>(axes: ProcessAxes<'_>, rng: &mut R) -> Result<Vec<f64>> {
    let mut w = match axes {
        ProcessAxes::Main((e, rows)) => {
            if e.ncols() == 0 {
                return Err(StvcError::Config("process basis is empty".into()));
            }
            let g: Vec<f64> = (0..e.ncols()).map(|_| StandardNormal.sample(rng)).collect();
            let unique: Vec<f64> = (0..e.nrows())
                .map(|r| (0..e.ncols()).map(|c| e[(r, c)] * g[c]).sum())
                .collect();
            rows.iter().map(|&r| unique[r]).collect::<Vec<f64>>()
        }
        ProcessAxes::Interaction((es, sr), (et, tr)) => {
            if es.ncols() == 0 || et.ncols() == 0 {
                return Err(StvcError::Config("process basis is empty".into()));
            }
            let g = Mat::from_fn(es.ncols(), et.ncols(), |_, _| -> f64 { StandardNormal.sample(rng) });
            // Values on the unique (site, time) grid: E_s Γ E_t'.
            let grid = es * &g * et.transpose();
            sr.iter().zip(tr).map(|(&s, &t)| grid[(s, t)]).collect()
        }
    };
    standardize(&mut w)?;
    Ok(w)
}

/// Generates one replicate: coordinates, processes, covariates and noise.
/// The random stream is selected by `replicate`.
pub fn generate_dataset(spec: &ScenarioSpec, replicate: u64) -> Result<SimulatedData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(replicate);
    let p = spec.structures.len();
    let (ns, nt) = (spec.n_sites, spec.n_times);
    let n_grid = ns * nt;

    let sites: Vec<[f64; 2]> = (0..ns).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let times: Vec<f64> = (1..=nt).map(|t| t as f64).collect();
    let gx: Vec<f64> = (0..n_grid).map(|i| sites[i / nt][0]).collect();
    let gy: Vec<f64> = (0..n_grid).map(|i| sites[i / nt][1]).collect();
    let gt: Vec<f64> = (0..n_grid).map(|i| times[i % nt]).collect();

    let grid_coords = PointSet::spatial(&gx, &gy)?;
    let mut grid_times = vec![PointSet::temporal(&gt, None)?];
    if let Some(per) = spec.period {
        grid_times.push(PointSet::temporal(&gt, Some(per))?);
    }
    let full = |n: usize| BasisConfig {
        max_components: n,
        eig_tol: 1e-8,
    };
    let s_basis = MoranBasis::from_points(&grid_coords, &full(ns))?;
    let t_bases: Vec<MoranBasis> = grid_times
        .iter()
        .map(|t| MoranBasis::from_points(t, &full(nt)))
        .collect::<Result<_>>()?;
    let axes: Vec<_> = grid_times.iter().map(|t| t.kind()).collect();

    let m = grid_times.len();
    let names: Vec<String> = (0..p)
        .map(|i| if i == 0 { "(Intercept)".to_string() } else { format!("x{i}") })
        .collect();
    let mut truth = CoefficientField::zeros(names.clone(), m, n_grid);
    let s_rows: AxisRows<'_> = (s_basis.eigvecs(), grid_coords.obs_index());
    for c in 0..p {
        truth.part_mut(c, TermKind::Mean).iter_mut().for_each(|v| *v = spec.means[c]);
        let kinds = spec.structures[c].kinds(&axes);
        if kinds.is_empty() {
            continue;
        }
        let mut procs = Vec::with_capacity(kinds.len());
        for &k in &kinds {
            let t_rows = |m: usize| -> AxisRows<'_> { (t_bases[m].eigvecs(), grid_times[m].obs_index()) };
            let axes = match k {
                TermKind::Spatial => ProcessAxes::Main(s_rows),
                TermKind::Temporal(m) => ProcessAxes::Main(t_rows(m)),
                TermKind::Interaction(m) => ProcessAxes::Interaction(s_rows, t_rows(m)),
                TermKind::Mean => unreachable!(),
            };
            procs.push((k, generate_process(axes, &mut rng)?));
        }
        // Each process has mean zero, so the bracket only rescales the sum.
        let sum: Vec<f64> = (0..n_grid).map(|i| procs.iter().map(|(_, w)| w[i]).sum()).collect();
        let sd = select::sample_variance(&sum).sqrt();
        if !(sd > 0.0) {
            return Err(StvcError::Config("coefficient process sum is constant".into()));
        }
        for (k, w) in procs {
            let part = truth.part_mut(c, k);
            for i in 0..n_grid {
                part[i] = spec.taus[c] * w[i] / sd;
            }
        }
    }

    let x = Mat::from_fn(n_grid, p, |_, _| 0.0);
    let mut x = x;
    for i in 0..n_grid {
        x[(i, 0)] = 1.0;
        for c in 1..p {
            x[(i, c)] = StandardNormal.sample(&mut rng);
        }
    }
    let betas: Vec<Vec<f64>> = (0..p).map(|c| truth.total(c)).collect();
    let y: Vec<f64> = (0..n_grid)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (0..p).map(|c| x[(i, c)] * betas[c][i]).sum::<f64>() + spec.noise_sd * e
        })
        .collect();

    let (train, test) = match spec.n_obs {
        Some(n) => holdout_split(spec.seed ^ replicate.rotate_left(32), n_grid, n),
        None => ((0..n_grid).collect(), vec![]),
    };
    let pick = |idx: &[usize]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Mat<f64>, Vec<f64>) {
        (
            idx.iter().map(|&i| gx[i]).collect(),
            idx.iter().map(|&i| gy[i]).collect(),
            idx.iter().map(|&i| gt[i]).collect(),
            Mat::from_fn(idx.len(), p, |r, c| x[(idx[r], c)]),
            idx.iter().map(|&i| y[i]).collect(),
        )
    };
    let sub_field = |idx: &[usize]| CoefficientField {
        names: truth.names.clone(),
        part_kinds: truth.part_kinds.clone(),
        parts: truth
            .parts
            .iter()
            .map(|pp| pp.iter().map(|v| idx.iter().map(|&i| v[i]).collect()).collect())
            .collect(),
    };

    let (tx, ty, tt, txm, tyv) = pick(&train);
    let mut t_sets = vec![PointSet::temporal(&tt, None)?];
    if let Some(per) = spec.period {
        t_sets.push(PointSet::temporal(&tt, Some(per))?);
    }
    let data = Dataset::from_design(tyv, txm, names, Some(PointSet::spatial(&tx, &ty)?), t_sets)?;
    let holdout = if test.is_empty() {
        None
    } else {
        let (hx, hy, ht, hxm, hyv) = pick(&test);
        Some(Holdout {
            coords: hx.iter().zip(&hy).map(|(&a, &b)| [a, b]).collect(),
            times: vec![ht; m],
            x: hxm,
            y: hyv,
            truth: sub_field(&test),
        })
    };
    Ok(SimulatedData {
        data,
        truth: if spec.n_obs.is_some() { sub_field(&train) } else { truth },
        holdout,
    })
}

/// Deterministic partition of `0..n_total` into `n_train` training indices
/// (sorted) and the remaining holdout indices (sorted).
pub fn holdout_split(seed: u64, n_total: usize, n_train: usize) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n_total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut train = idx[..n_train.min(n_total)].to_vec();
    let mut test = idx[n_train.min(n_total)..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// `sqrt(mean((β̂_p - β_p)²))`.
pub fn rmse(estimate: &CoefficientField, truth: &CoefficientField, p: usize) -> Result<f64> {
    if estimate.n() != truth.n() || p >= estimate.p() || p >= truth.p() {
        return Err(StvcError::ShapeMismatch(format!(
            "fields of {} and {} observations, coefficient {p}",
            estimate.n(),
            truth.n()
        )));
    }
    Ok(rmse_vec(&estimate.total(p), &truth.total(p)))
}

pub fn rmse_vec(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt()
}

/// Coefficient field of a fit at arbitrary points.
pub fn predict_field(
    fit: &ModelFit,
    data: &Dataset,
    bases: &BasisSet,
    coords: &[[f64; 2]],
    times: &[Vec<f64>],
) -> Result<CoefficientField> {
    let n = coords.len();
    let ident: Vec<usize> = (0..n).collect();
    let s_rows = match (bases.spatial(), data.coords()) {
        (Some(b), Some(ps)) => Some(basis::rows_at(b, ps, coords)?),
        _ => None,
    };
    let mut t_rows = Vec::with_capacity(data.m());
    for m in 0..data.m() {
        t_rows.push(match bases.temporal(m) {
            Some(b) => {
                let q: Vec<[f64; 2]> = times[m].iter().map(|&t| [t, 0.0]).collect();
                Some(basis::rows_at(b, &data.times()[m], &q)?)
            }
            None => None,
        });
    }
    let spatial = s_rows.as_ref().map(|e| (e.as_ref(), ident.as_slice()));
    let temporal: Vec<Option<AxisRows<'_>>> = t_rows
        .iter()
        .map(|e| e.as_ref().map(|e| (e.as_ref(), ident.as_slice())))
        .collect();
    select::reconstruct_with(fit, n, spatial, &temporal)
}

/// A fitted model family: a common structure or the true one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    Uniform(Structure),
    True,
}

impl ModelChoice {
    pub fn name(&self) -> &'static str {
        match self {
            ModelChoice::Uniform(s) => s.name(),
            ModelChoice::True => "true",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("true") {
            Ok(ModelChoice::True)
        } else {
            s.parse().map(ModelChoice::Uniform)
        }
    }

    pub fn structure(&self, spec: &ScenarioSpec, data: &Dataset) -> ModelStructure {
        match self {
            ModelChoice::Uniform(s) => ModelStructure::uniform(*s, data),
            ModelChoice::True => ModelStructure::per_coefficient(&spec.structures, data),
        }
    }

    pub fn all() -> Vec<ModelChoice> {
        Structure::ALL
            .into_iter()
            .map(ModelChoice::Uniform)
            .chain(std::iter::once(ModelChoice::True))
            .collect()
    }
}

/// One row of the results file.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub replicate: u64,
    pub model: String,
    pub coefficient: String,
    pub rmse: f64,
    pub predictive_rmse: Option<f64>,
    pub seconds: f64,
}

/// A fit of one model to one replicate.
pub struct ReplicateFit {
    pub model: ModelChoice,
    pub fit: ModelFit,
    pub field: CoefficientField,
    pub rmse: Vec<f64>,
    pub predictive_rmse: Option<f64>,
}

/// Fits every model to one replicate and scores it.
pub fn run_replicate(
    spec: &ScenarioSpec,
    replicate: u64,
    models: &[ModelChoice],
    cfg: &SelectionConfig,
) -> Result<(SimulatedData, Vec<ReplicateFit>)> {
    let sim = generate_dataset(spec, replicate)?;
    let mut fits = Vec::with_capacity(models.len());
    let bases_t0 = Instant::now();
    let bases = BasisSet::build(&sim.data, &spec.fit_spatial, &spec.fit_temporal)?;
    let basis_seconds = bases_t0.elapsed().as_secs_f64();
    for &model in models {
        let mut fit = select::fit_model(&sim.data, &bases, model.structure(spec, &sim.data), cfg)?;
        fit.seconds += basis_seconds;
        let field = select::reconstruct_coefficients(&fit, &sim.data, &bases)?;
        let rmse = (0..field.p())
            .map(|p| rmse(&field, &sim.truth, p))
            .collect::<Result<Vec<_>>>()?;
        let predictive_rmse = match &sim.holdout {
            Some(h) => {
                let pf = predict_field(&fit, &sim.data, &bases, &h.coords, &h.times)?;
                let pred = select::fitted_values(&pf, h.x.as_ref());
                Some(rmse_vec(&pred, &h.y))
            }
            None => None,
        };
        fits.push(ReplicateFit {
            model,
            fit,
            field,
            rmse,
            predictive_rmse,
        });
    }
    Ok((sim, fits))
}

/// Flattens replicate fits into result rows.
pub fn result_rows(spec: &ScenarioSpec, replicate: u64, fits: &[ReplicateFit]) -> Vec<ResultRow> {
    let mut out = Vec::new();
    for f in fits {
        for (p, r) in f.rmse.iter().enumerate() {
            out.push(ResultRow {
                scenario: spec.name.clone(),
                replicate,
                model: f.model.name().to_string(),
                coefficient: format!("beta{p}"),
                rmse: *r,
                predictive_rmse: f.predictive_rmse,
                seconds: f.fit.seconds,
            });
        }
    }
    out
}

/// Median and quartiles of one (model, coefficient) group.
#[derive(Clone, Debug, PartialEq)]
pub struct RmseSummary {
    pub model: String,
    pub coefficient: String,
    pub count: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Linear-interpolation quantile of a sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Groups rows by (model, coefficient) in first-seen order.
pub fn summarize(rows: &[ResultRow]) -> Vec<RmseSummary> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.model.clone(), r.coefficient.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(model, coefficient)| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.model == model && r.coefficient == coefficient)
                .map(|r| r.rmse)
                .collect();
            RmseSummary {
                count: v.len(),
                q1: quantile(&v, 0.25),
                median: median(&v),
                q3: quantile(&v, 0.75),
                model,
                coefficient,
            }
        })
        .collect()
}

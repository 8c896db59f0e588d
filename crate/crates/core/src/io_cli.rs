//! Configuration, delimited-text ingestion and output files for the command
//! line tool.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::basis::{BasisConfig, MoranBasis, PointSet};
use crate::design::{BasisSet, Dataset};
#[cfg(test)]
use crate::design::TermKind;
use crate::error::{Result, StvcError};
use crate::optimize::OptConfig;
use crate::select::{
    self, CoefficientField, HistoryRecord, ModelFit, ModelStructure, SelectionConfig, Strategy, Structure,
    VarianceSummary,
};
use crate::synth::{self, ModelChoice, ResultRow, ScenarioSpec};

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeAxisConfig {
    pub column: String,
    #[serde(default)]
    pub cyclic: bool,
    pub period: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisCaps {
    pub spatial_max: usize,
    pub temporal_max: usize,
    pub eig_tol: f64,
}

impl Default for BasisCaps {
    fn default() -> Self {
        Self {
            spatial_max: BasisConfig::spatial_default().max_components,
            temporal_max: BasisConfig::temporal_default().max_components,
            eig_tol: BasisConfig::spatial_default().eig_tol,
        }
    }
}

impl BasisCaps {
    pub fn spatial(&self) -> BasisConfig {
        BasisConfig {
            max_components: self.spatial_max,
            eig_tol: self.eig_tol,
        }
    }

    pub fn temporal(&self) -> BasisConfig {
        BasisConfig {
            max_components: self.temporal_max,
            eig_tol: self.eig_tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Structure shared by every coefficient.
    pub structure: Structure,
    /// Per-coefficient structures, intercept first; overrides `structure`.
    pub structures: Option<Vec<Structure>>,
    pub bic_tol: f64,
    pub strategy: Strategy,
    pub refresh_every: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let sel = SelectionConfig::default();
        Self {
            structure: Structure::StcInt,
            structures: None,
            bic_tol: sel.bic_tol,
            strategy: sel.strategy,
            refresh_every: sel.refresh_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub response: String,
    /// `[x, y]` coordinate columns.
    pub coords: Option<[String; 2]>,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default, rename = "time")]
    pub times: Vec<TimeAxisConfig>,
    #[serde(default)]
    pub basis: BasisCaps,
    #[serde(default)]
    pub optimizer: OptConfig,
    #[serde(default)]
    pub model: ModelConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

impl RunConfig {
    /// Parses TOML text; relative paths are kept as written.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| StvcError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.input.is_relative() {
            cfg.input = base.join(&cfg.input);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut roles: Vec<&str> = vec![&self.response];
        roles.extend(self.covariates.iter().map(String::as_str));
        if let Some([x, y]) = &self.coords {
            roles.extend([x.as_str(), y.as_str()]);
        }
        for (i, a) in roles.iter().enumerate() {
            if roles[..i].contains(a) {
                return Err(StvcError::Config(format!("column '{a}' is assigned more than one role")));
            }
        }
        for t in &self.times {
            match (t.cyclic, t.period) {
                (true, None) => {
                    return Err(StvcError::Config(format!("cyclic time axis '{}' needs a period", t.column)))
                }
                (false, Some(_)) => {
                    return Err(StvcError::Config(format!(
                        "time axis '{}' has a period but is not cyclic",
                        t.column
                    )))
                }
                (true, Some(p)) if !(p > 0.0 && p.is_finite()) => {
                    return Err(StvcError::Config(format!("period of '{}' must be positive", t.column)))
                }
                _ => {}
            }
        }
        if let Some(s) = &self.model.structures {
            if s.len() != self.covariates.len() + 1 {
                return Err(StvcError::Config(format!(
                    "model.structures has {} entries, expected {} (intercept first)",
                    s.len(),
                    self.covariates.len() + 1
                )));
            }
        }
        if self.basis.spatial_max == 0 || self.basis.temporal_max == 0 || !(self.basis.eig_tol >= 0.0) {
            return Err(StvcError::Config("basis caps must be positive".into()));
        }
        self.optimizer.validate()
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            optimizer: self.optimizer.clone(),
            bic_tol: self.model.bic_tol,
            strategy: self.model.strategy,
            refresh_every: self.model.refresh_every,
        }
    }

    pub fn structure(&self, data: &Dataset) -> ModelStructure {
        match &self.model.structures {
            Some(s) => ModelStructure::per_coefficient(s, data),
            None => ModelStructure::uniform(self.model.structure, data),
        }
    }
}

/// Reads the configured columns of a comma-delimited file with a header.
/// Rows are numbered from 1 after the header.
pub fn load_dataset(path: &Path, cfg: &RunConfig) -> Result<Dataset> {
    read_dataset(File::open(path)?, cfg)
}

pub fn read_dataset<R: io::Read>(reader: R, cfg: &RunConfig) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut wanted: Vec<&str> = vec![&cfg.response];
    wanted.extend(cfg.covariates.iter().map(String::as_str));
    if let Some([x, y]) = &cfg.coords {
        wanted.extend([x.as_str(), y.as_str()]);
    }
    wanted.extend(cfg.times.iter().map(|t| t.column.as_str()));
    let idx: Vec<usize> = wanted
        .iter()
        .map(|w| {
            header.iter().position(|h| h == *w).ok_or_else(|| StvcError::Parse {
                row: 0,
                column: w.to_string(),
                message: "column not found in header".into(),
            })
        })
        .collect::<Result<_>>()?;
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (k, &c) in idx.iter().enumerate() {
            let parse_err = |message: String| StvcError::Parse {
                row: r + 1,
                column: wanted[k].to_string(),
                message,
            };
            let cell = rec.get(c).ok_or_else(|| parse_err("missing cell".into()))?;
            let v: f64 = cell.parse().map_err(|_| parse_err(format!("'{cell}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("nonfinite value '{cell}'")));
            }
            cols[k].push(v);
        }
    }
    if cols[0].is_empty() {
        return Err(StvcError::Parse {
            row: 1,
            column: cfg.response.clone(),
            message: "no data rows".into(),
        });
    }
    let mut it = cols.into_iter();
    let y = it.next().unwrap();
    let covariates: Vec<(String, Vec<f64>)> = cfg.covariates.iter().cloned().zip(it.by_ref()).collect();
    let coords = match cfg.coords {
        Some(_) => {
            let x = it.next().unwrap();
            let yy = it.next().unwrap();
            Some(PointSet::spatial(&x, &yy)?)
        }
        None => None,
    };
    let times = cfg
        .times
        .iter()
        .zip(it)
        .map(|(t, v)| PointSet::temporal(&v, if t.cyclic { t.period } else { None }))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(y, covariates, coords, times)
}

/// Shortest text that parses back to the same value.
pub fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

/// Everything produced by one fit.
pub struct FitReport {
    pub data: Dataset,
    pub bases: BasisSet,
    pub fit: ModelFit,
    pub field: CoefficientField,
    pub summaries: Vec<VarianceSummary>,
}

/// Basis construction, selection, reconstruction and summaries.
pub fn fit_config(cfg: &RunConfig) -> Result<FitReport> {
    let data = load_dataset(&cfg.input, cfg)?;
    let bases = BasisSet::build(&data, &cfg.basis.spatial(), &cfg.basis.temporal())?;
    let fit = select::fit_model(&data, &bases, cfg.structure(&data), &cfg.selection())?;
    let field = select::reconstruct_coefficients(&fit, &data, &bases)?;
    let summaries = select::variance_summaries(&field, data.x().as_ref());
    Ok(FitReport {
        data,
        bases,
        fit,
        field,
        summaries,
    })
}

/// Fits and writes the four fit outputs into `output_dir`.
pub fn run_fit(cfg: &RunConfig) -> Result<FitReport> {
    let report = fit_config(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let dir = &cfg.output_dir;
    write_coefficients(File::create(dir.join("coefficients.csv"))?, &report.field)?;
    write_summary(File::create(dir.join("summary.csv"))?, &report.fit, &report.bases)?;
    write_variance(File::create(dir.join("variance_decomposition.csv"))?, &report.summaries)?;
    write_history(File::create(dir.join("selection_history.csv"))?, &report.fit.history)?;
    Ok(report)
}

/// One total column and one column per additive part for each covariate.
pub fn write_coefficients<W: Write>(out: W, field: &CoefficientField) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = Vec::new();
    for name in &field.names {
        header.push(name.clone());
        for &k in &field.part_kinds {
            header.push(format!("{name}.{}", CoefficientField::part_label(k)));
        }
    }
    w.write_record(&header)?;
    let totals: Vec<Vec<f64>> = (0..field.p()).map(|p| field.total(p)).collect();
    for i in 0..field.n() {
        let mut row = Vec::with_capacity(header.len());
        for p in 0..field.p() {
            row.push(fmt_num(totals[p][i]));
            row.extend(field.parts[p].iter().map(|part| fmt_num(part[i])));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `key,value` pairs: dimensions, fit statistics and term estimates.
pub fn write_summary<W: Write>(out: W, fit: &ModelFit, bases: &BasisSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["key", "value"])?;
    let mut kv = |k: String, v: String| w.write_record([k, v]);
    kv("n".into(), fit.n.to_string())?;
    kv("p".into(), fit.p.to_string())?;
    kv("m".into(), fit.m.to_string())?;
    kv("l_s".into(), fit.l_s.to_string())?;
    for (m, l) in fit.l_t.iter().enumerate() {
        kv(format!("l_t{}", m + 1), l.to_string())?;
    }
    for s in bases.skipped() {
        kv("skipped_basis".into(), s.clone())?;
    }
    kv("r2_adj".into(), fmt_num(fit.r2_adj))?;
    kv("edf".into(), fmt_num(fit.edf))?;
    kv("rss".into(), fmt_num(fit.rss))?;
    kv("loglik".into(), fmt_num(fit.loglik))?;
    kv("bic".into(), fmt_num(fit.bic))?;
    kv("main_bic".into(), fmt_num(fit.main_bic))?;
    kv("ols_bic".into(), fmt_num(fit.ols_bic))?;
    kv("sigma2".into(), fmt_num(fit.sigma2_hat))?;
    kv("seconds".into(), fmt_num(fit.seconds))?;
    kv("terms".into(), fit.terms.len().to_string())?;
    for (name, b) in fit.names.iter().zip(&fit.b_hat) {
        kv(format!("b.{name}"), fmt_num(*b))?;
    }
    for t in &fit.terms {
        kv(format!("tau2.{}", t.spec), fmt_num(t.params.tau2))?;
        kv(format!("alpha.{}", t.spec), fmt_num(t.params.alpha))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_variance<W: Write>(out: W, summaries: &[VarianceSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["covariate", "component", "variance", "share"])?;
    for s in summaries {
        w.write_record([&s.covariate, "term", &fmt_num(s.term_variance), ""])?;
        w.write_record([&s.covariate, "coefficient", &fmt_num(s.coefficient_variance), ""])?;
        for (k, var, share) in &s.parts {
            w.write_record([
                s.covariate.as_str(),
                &CoefficientField::part_label(*k),
                &fmt_num(*var),
                &fmt_num(*share),
            ])?;
        }
        w.write_record([&s.covariate, "covariance_residual", "", &fmt_num(s.covariance_residual)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_history<W: Write>(out: W, history: &[HistoryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "phase", "sweep", "candidate", "log_tau2", "alpha", "tau2", "loglik", "bic", "accepted", "wall_ms",
    ])?;
    for h in history {
        w.write_record([
            h.phase.name().to_string(),
            h.sweep.to_string(),
            h.candidate.to_string(),
            fmt_num(h.log_tau2),
            fmt_num(h.alpha),
            fmt_num(h.tau2),
            fmt_num(h.loglik),
            fmt_num(h.bic),
            h.accepted.to_string(),
            fmt_num(h.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const RESULT_COLUMNS: [&str; 7] =
    ["scenario", "replicate", "model", "coefficient", "rmse", "predictive_rmse", "seconds"];

/// Appends rows, writing the header if the file is new or empty.
pub fn append_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(RESULT_COLUMNS)?;
    }
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.replicate.to_string(),
            r.model.clone(),
            r.coefficient.clone(),
            fmt_num(r.rmse),
            r.predictive_rmse.map(fmt_num).unwrap_or_default(),
            fmt_num(r.seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub struct SimulateOptions {
    pub scenario: String,
    pub replicates: u64,
    pub seed: u64,
    pub output: PathBuf,
    pub models: Vec<ModelChoice>,
    pub selection: SelectionConfig,
}

/// Runs the replicates, appending each replicate's rows as it finishes.
pub fn run_simulate(opts: &SimulateOptions) -> Result<Vec<ResultRow>> {
    let mut spec = ScenarioSpec::preset(&opts.scenario).ok_or_else(|| {
        StvcError::Config(format!(
            "unknown scenario '{}'; available: {}",
            opts.scenario,
            ScenarioSpec::PRESETS.join(", ")
        ))
    })?;
    if opts.models.is_empty() {
        return Err(StvcError::Config("no models to fit".into()));
    }
    spec.seed = opts.seed;
    let mut all = Vec::new();
    for r in 0..opts.replicates {
        let (_, fits) = synth::run_replicate(&spec, r, &opts.models, &opts.selection)?;
        let rows = synth::result_rows(&spec, r, &fits);
        append_results(&opts.output, &rows)?;
        all.extend(rows);
    }
    Ok(all)
}

pub fn write_rmse_summary<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "coefficient", "count", "q1", "median", "q3"])?;
    for s in synth::summarize(rows) {
        w.write_record([
            s.model,
            s.coefficient,
            s.count.to_string(),
            fmt_num(s.q1),
            fmt_num(s.median),
            fmt_num(s.q3),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Builds the bases of a configured dataset; with `inspect`, writes their
/// eigenvalues and eigenvectors to `output_dir`.
pub fn run_basis<W: Write>(cfg: &RunConfig, inspect: bool, mut out: W) -> Result<BasisSet> {
    let data = load_dataset(&cfg.input, cfg)?;
    let bases = BasisSet::build(&data, &cfg.basis.spatial(), &cfg.basis.temporal())?;
    let mut axes: Vec<(String, &MoranBasis)> = Vec::new();
    if let Some(b) = bases.spatial() {
        axes.push(("spatial".into(), b));
    }
    for m in 0..bases.n_temporal() {
        if let Some(b) = bases.temporal(m) {
            axes.push((format!("temporal{}", m + 1), b));
        }
    }
    writeln!(out, "axis,kind,unique_points,range,components,scale")?;
    for (name, b) in &axes {
        writeln!(
            out,
            "{name},{:?},{},{},{},{}",
            b.kind(),
            b.n_unique(),
            fmt_num(b.range()),
            b.len(),
            fmt_num(b.scale())
        )?;
    }
    for s in bases.skipped() {
        writeln!(out, "# skipped: {s}")?;
    }
    if inspect {
        fs::create_dir_all(&cfg.output_dir)?;
        let mut w = csv::Writer::from_path(cfg.output_dir.join("basis_eigenvalues.csv"))?;
        w.write_record(["axis", "index", "eigenvalue", "raw_eigenvalue"])?;
        for (name, b) in &axes {
            for (l, v) in b.eigvals().iter().enumerate() {
                w.write_record([name.clone(), (l + 1).to_string(), fmt_num(*v), fmt_num(v * b.scale())])?;
            }
        }
        w.flush()?;
        for (name, b) in &axes {
            let mut w = csv::Writer::from_path(cfg.output_dir.join(format!("basis_{name}_vectors.csv")))?;
            let mut header = vec!["u".to_string(), "v".to_string()];
            header.extend((1..=b.len()).map(|l| format!("e{l}")));
            w.write_record(&header)?;
            let pts = match name.as_str() {
                "spatial" => data.coords().map(|c| c.points()),
                _ => {
                    let m: usize = name["temporal".len()..].parse::<usize>().unwrap() - 1;
                    Some(data.times()[m].points())
                }
            }
            .unwrap_or(&[]);
            let e = b.eigvecs();
            for (r, p) in pts.iter().enumerate() {
                let mut row = vec![fmt_num(p[0]), fmt_num(p[1])];
                row.extend((0..e.ncols()).map(|c| fmt_num(e[(r, c)])));
                w.write_record(&row)?;
            }
            w.flush()?;
        }
    }
    Ok(bases)
}

/// Table of fit statistics printed after `fit`.
pub fn print_fit_summary<W: Write>(mut out: W, report: &FitReport) -> Result<()> {
    let f = &report.fit;
    writeln!(out, "{:>10} {:>14} {:>14} {:>10}", "R2_adj", "LL", "BIC", "seconds")?;
    writeln!(out, "{:>10.4} {:>14.3} {:>14.3} {:>10.2}", f.r2_adj, f.loglik, f.bic, f.seconds)?;
    let names: Vec<String> = f.terms.iter().map(|t| t.spec.to_string()).collect();
    writeln!(out, "selected terms: {}", if names.is_empty() { "none".into() } else { names.join(" ") })?;
    for s in &report.summaries {
        writeln!(
            out,
            "{}: term variance {:.4}, interaction share {:.4}",
            s.covariate,
            s.term_variance,
            s.interaction_share()
        )?;
    }
    Ok(())
}

//! Basis-function regressor blocks: per-covariate spatial and temporal main
//! blocks, and space-time interaction blocks built on demand.

use std::fmt;

use faer::Mat;

use crate::basis::{BasisConfig, MoranBasis, PointSet};
use crate::error::{Result, StvcError};

/// Observations with their covariates and coordinate axes.
#[derive(Clone, Debug)]
pub struct Dataset {
    y: Vec<f64>,
    x: Mat<f64>,
    names: Vec<String>,
    coords: Option<PointSet>,
    times: Vec<PointSet>,
}

impl Dataset {
    /// Builds a dataset from a response and covariate columns; the constant
    /// column is prepended, so `P = covariates.len() + 1`.
    pub fn new(
        y: Vec<f64>,
        covariates: Vec<(String, Vec<f64>)>,
        coords: Option<PointSet>,
        times: Vec<PointSet>,
    ) -> Result<Self> {
        let n = y.len();
        let mut names = vec!["(Intercept)".to_string()];
        for (name, col) in &covariates {
            if col.len() != n {
                return Err(StvcError::ShapeMismatch(format!(
                    "covariate '{name}' has {} rows, response has {n}",
                    col.len()
                )));
            }
            names.push(name.clone());
        }
        let x = Mat::from_fn(n, covariates.len() + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                covariates[j - 1].1[i]
            }
        });
        Self::from_design(y, x, names, coords, times)
    }

    /// Builds a dataset from a full design matrix whose first column is 1.
    pub fn from_design(
        y: Vec<f64>,
        x: Mat<f64>,
        names: Vec<String>,
        coords: Option<PointSet>,
        times: Vec<PointSet>,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || x.ncols() == 0 || names.len() != x.ncols() {
            return Err(StvcError::ShapeMismatch(format!(
                "design is {}x{} with {} names for {n} responses",
                x.nrows(),
                x.ncols(),
                names.len()
            )));
        }
        if (0..n).any(|i| x[(i, 0)] != 1.0) {
            return Err(StvcError::InvalidParameter(
                "first design column must be the constant 1".into(),
            ));
        }
        for ps in coords.iter().chain(times.iter()) {
            if ps.n_obs() != n {
                return Err(StvcError::ShapeMismatch(format!(
                    "axis has {} observations, response has {n}",
                    ps.n_obs()
                )));
            }
        }
        if coords.as_ref().is_some_and(|c| c.kind() != crate::basis::AxisKind::Spatial)
            || times.iter().any(|t| t.kind() == crate::basis::AxisKind::Spatial)
        {
            return Err(StvcError::InvalidParameter("axis kinds do not match their roles".into()));
        }
        Ok(Self {
            y,
            x,
            names,
            coords,
            times,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.times.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &Mat<f64> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn coords(&self) -> Option<&PointSet> {
        self.coords.as_ref()
    }

    pub fn times(&self) -> &[PointSet] {
        &self.times
    }
}

/// Which latent process of a covariate a term represents. Time axes are
/// indexed from 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TermKind {
    Mean,
    Spatial,
    Temporal(usize),
    Interaction(usize),
}

/// One latent process: covariate index (0 is the intercept) and kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TermSpec {
    pub covariate: usize,
    pub kind: TermKind,
}

impl TermSpec {
    pub fn new(covariate: usize, kind: TermKind) -> Self {
        Self { covariate, kind }
    }
}

impl fmt::Display for TermSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.covariate;
        match self.kind {
            TermKind::Mean => write!(f, "b{p}"),
            TermKind::Spatial => write!(f, "s{p}"),
            TermKind::Temporal(m) => write!(f, "t{p}_{}", m + 1),
            TermKind::Interaction(m) => write!(f, "st{p}_{}", m + 1),
        }
    }
}

/// Materialized regressors of one term.
#[derive(Clone, Debug)]
pub struct TermBlock {
    pub spec: TermSpec,
    pub z: Mat<f64>,
    pub eigval_profile: Vec<f64>,
}

impl TermBlock {
    pub fn width(&self) -> usize {
        self.z.ncols()
    }
}

/// Bases of every axis of a dataset. An axis whose basis came out empty is
/// kept as `None` and its terms are skipped.
#[derive(Clone, Debug)]
pub struct BasisSet {
    spatial: Option<MoranBasis>,
    temporal: Vec<Option<MoranBasis>>,
    skipped: Vec<String>,
}

impl BasisSet {
    /// Builds one basis per axis of `data`.
    pub fn build(data: &Dataset, spatial: &BasisConfig, temporal: &BasisConfig) -> Result<Self> {
        let mut skipped = Vec::new();
        let mut keep = |r: Result<MoranBasis>, what: String| match r {
            Ok(b) => Ok(Some(b)),
            Err(StvcError::EmptyBasis(msg)) => {
                skipped.push(format!("{what}: {msg}"));
                Ok(None)
            }
            Err(e) => Err(e),
        };
        let s = match data.coords() {
            Some(ps) => keep(MoranBasis::from_points(ps, spatial), "spatial".into())?,
            None => None,
        };
        let mut t = Vec::with_capacity(data.m());
        for (m, ps) in data.times().iter().enumerate() {
            t.push(keep(MoranBasis::from_points(ps, temporal), format!("time axis {}", m + 1))?);
        }
        Ok(Self {
            spatial: s,
            temporal: t,
            skipped,
        })
    }

    /// Wraps precomputed bases. Their row counts must match the unique
    /// points of the corresponding dataset axes.
    pub fn from_bases(
        data: &Dataset,
        spatial: Option<MoranBasis>,
        temporal: Vec<Option<MoranBasis>>,
    ) -> Result<Self> {
        if temporal.len() != data.m() {
            return Err(StvcError::ShapeMismatch(format!(
                "{} temporal bases for {} time axes",
                temporal.len(),
                data.m()
            )));
        }
        let rows_ok = |b: &Option<MoranBasis>, ps: Option<&PointSet>| match (b, ps) {
            (None, _) => true,
            (Some(b), Some(ps)) => b.n_unique() == ps.n_unique(),
            (Some(_), None) => false,
        };
        if !rows_ok(&spatial, data.coords())
            || temporal
                .iter()
                .zip(data.times())
                .any(|(b, ps)| !rows_ok(b, Some(ps)))
        {
            return Err(StvcError::ShapeMismatch(
                "basis rows do not match the unique points of their axis".into(),
            ));
        }
        Ok(Self {
            spatial,
            temporal,
            skipped: Vec::new(),
        })
    }

    pub fn spatial(&self) -> Option<&MoranBasis> {
        self.spatial.as_ref()
    }

    pub fn temporal(&self, m: usize) -> Option<&MoranBasis> {
        self.temporal.get(m).and_then(|b| b.as_ref())
    }

    pub fn n_temporal(&self) -> usize {
        self.temporal.len()
    }

    /// Axes whose basis was empty, with the reason.
    pub fn skipped(&self) -> &[String] {
        &self.skipped
    }

    pub fn l_s(&self) -> usize {
        self.spatial.as_ref().map_or(0, |b| b.len())
    }

    pub fn l_t(&self, m: usize) -> usize {
        self.temporal(m).map_or(0, |b| b.len())
    }

    /// Number of regressor columns of a term (0 when a basis is missing).
    pub fn width(&self, kind: TermKind) -> usize {
        match kind {
            TermKind::Mean => 1,
            TermKind::Spatial => self.l_s(),
            TermKind::Temporal(m) => self.l_t(m),
            TermKind::Interaction(m) => self.l_s() * self.l_t(m),
        }
    }

    /// Eigenvalue profile of a term in column order.
    pub fn eigval_profile(&self, kind: TermKind) -> Vec<f64> {
        match kind {
            TermKind::Mean => vec![],
            TermKind::Spatial => self.spatial().map_or(vec![], |b| b.eigvals().to_vec()),
            TermKind::Temporal(m) => self.temporal(m).map_or(vec![], |b| b.eigvals().to_vec()),
            TermKind::Interaction(m) => match (self.spatial(), self.temporal(m)) {
                (Some(s), Some(t)) => s
                    .eigvals()
                    .iter()
                    .flat_map(|&ls| t.eigvals().iter().map(move |&lt| ls * lt))
                    .collect(),
                _ => vec![],
            },
        }
    }
}

/// `(main, interaction)` column counts: `P + P(L_s + Σ L_t)` and
/// `P · L_s · Σ L_t`.
pub fn column_counts(p: usize, l_s: usize, l_t: &[usize]) -> (usize, usize) {
    let sum_t: usize = l_t.iter().sum();
    (p + p * (l_s + sum_t), p * l_s * sum_t)
}

/// Main-block and interaction column counts for a dataset and its bases.
pub fn basis_column_counts(data: &Dataset, bases: &BasisSet) -> (usize, usize) {
    let l_t: Vec<usize> = (0..bases.n_temporal()).map(|m| bases.l_t(m)).collect();
    column_counts(data.p(), bases.l_s(), &l_t)
}

/// Interaction candidates `(p, m)`, covariate-major.
pub fn enumerate_interaction_candidates(p: usize, m: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|i| (0..m).map(move |j| (i, j))).collect()
}

/// Builds the regressors of one non-mean term. Returns `None` when a
/// required basis is missing.
pub fn build_block(data: &Dataset, bases: &BasisSet, spec: TermSpec) -> Option<TermBlock> {
    let n = data.n();
    let x = data.x();
    let p = spec.covariate;
    let z = match spec.kind {
        TermKind::Mean => return None,
        TermKind::Spatial => {
            let e = bases.spatial()?.eigvecs();
            let rows = data.coords()?.obs_index();
            Mat::from_fn(n, e.ncols(), |i, l| x[(i, p)] * e[(rows[i], l)])
        }
        TermKind::Temporal(m) => {
            let e = bases.temporal(m)?.eigvecs();
            let rows = data.times()[m].obs_index();
            Mat::from_fn(n, e.ncols(), |i, l| x[(i, p)] * e[(rows[i], l)])
        }
        TermKind::Interaction(m) => {
            let es = bases.spatial()?.eigvecs();
            let et = bases.temporal(m)?.eigvecs();
            let sr = data.coords()?.obs_index();
            let tr = data.times()[m].obs_index();
            let lt = et.ncols();
            Mat::from_fn(n, es.ncols() * lt, |i, c| {
                x[(i, p)] * es[(sr[i], c / lt)] * et[(tr[i], c % lt)]
            })
        }
    };
    if z.ncols() == 0 {
        return None;
    }
    Some(TermBlock {
        spec,
        z,
        eigval_profile: bases.eigval_profile(spec.kind),
    })
}

/// One spatial block per covariate and one temporal block per
/// (covariate, time axis), skipping axes without a basis.
pub fn build_main_blocks(data: &Dataset, bases: &BasisSet) -> Vec<TermBlock> {
    let mut out = Vec::new();
    for p in 0..data.p() {
        let kinds = std::iter::once(TermKind::Spatial).chain((0..data.m()).map(TermKind::Temporal));
        for kind in kinds {
            if let Some(b) = build_block(data, bases, TermSpec::new(p, kind)) {
                out.push(b);
            }
        }
    }
    out
}

/// Interaction block for covariate `p` and time axis `m`.
pub fn build_interaction_block(
    data: &Dataset,
    bases: &BasisSet,
    p: usize,
    m: usize,
) -> Result<TermBlock> {
    build_block(data, bases, TermSpec::new(p, TermKind::Interaction(m))).ok_or_else(|| {
        StvcError::EmptyBasis(format!(
            "interaction of covariate {p} with time axis {} needs both bases",
            m + 1
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::AxisKind;

    /// Sites on a line and times on a grid, with one extra covariate.
    fn small_panel(n_sites: usize, n_times: usize) -> Dataset {
        let mut sx = vec![];
        let mut sy = vec![];
        let mut t = vec![];
        let mut x1 = vec![];
        for s in 0..n_sites {
            for k in 0..n_times {
                sx.push(s as f64);
                sy.push(((s * 7) % 5) as f64 * 0.4);
                t.push(k as f64);
                x1.push(((s * 31 + k * 17) % 11) as f64 / 11.0 - 0.5);
            }
        }
        let n = sx.len();
        let y = (0..n).map(|i| i as f64 * 0.01).collect();
        Dataset::new(
            y,
            vec![("x1".into(), x1)],
            Some(PointSet::spatial(&sx, &sy).unwrap()),
            vec![PointSet::temporal(&t, None).unwrap()],
        )
        .unwrap()
    }

    fn panel_bases(d: &Dataset) -> BasisSet {
        BasisSet::build(d, &BasisConfig::spatial_default(), &BasisConfig::temporal_default()).unwrap()
    }

    #[test]
    fn column_counts_match_published_arithmetic() {
        assert_eq!(column_counts(5, 35, &[47, 23]), (530, 12_250));
    }

    #[test]
    fn candidates_are_covariate_major() {
        let c = enumerate_interaction_candidates(5, 2);
        assert_eq!(c.len(), 10);
        assert_eq!(&c[..3], &[(0, 0), (0, 1), (1, 0)]);
        assert!(enumerate_interaction_candidates(3, 0).is_empty());
        assert_eq!(enumerate_interaction_candidates(1, 1), vec![(0, 0)]);
    }

    #[test]
    fn intercept_spatial_block_is_expanded_eigenvectors() {
        let d = small_panel(6, 4);
        let b = panel_bases(&d);
        let blk = build_block(&d, &b, TermSpec::new(0, TermKind::Spatial)).unwrap();
        let e = crate::basis::expand_to_observations(b.spatial().unwrap(), d.coords().unwrap().obs_index());
        assert_eq!(crate::linalg::max_abs_diff(blk.z.as_ref(), e.as_ref()), 0.0);
        assert_eq!(blk.eigval_profile, b.spatial().unwrap().eigvals());
    }

    #[test]
    fn spatial_block_is_elementwise_product() {
        // Single covariate, L_s = 2, N = 3, basis given explicitly.
        let s = 1.0 / 2f64.sqrt();
        let r = 1.0 / 6f64.sqrt();
        let e = Mat::from_fn(3, 2, |i, j| [[s, r], [-s, r], [0.0, -2.0 * r]][i][j]);
        let basis = MoranBasis::from_parts(e.clone(), vec![2.0, 1.0], 1.0, AxisKind::Spatial).unwrap();
        let coords = PointSet::spatial(&[0.0, 1.0, 2.0], &[0.0, 0.0, 0.0]).unwrap();
        let x1 = vec![2.0, -1.0, 0.5];
        let d = Dataset::new(vec![1.0, 2.0, 3.0], vec![("x1".into(), x1.clone())], Some(coords), vec![]).unwrap();
        let bs = BasisSet::from_bases(&d, Some(basis), vec![]).unwrap();
        let blk = build_block(&d, &bs, TermSpec::new(1, TermKind::Spatial)).unwrap();
        for i in 0..3 {
            for l in 0..2 {
                assert_eq!(blk.z[(i, l)], x1[i] * e[(i, l)]);
            }
        }
        assert_eq!(blk.eigval_profile, vec![1.0, 0.5]);
    }

    #[test]
    fn interaction_columns_are_triple_products() {
        let d = small_panel(12, 10);
        let caps = BasisConfig {
            max_components: 3,
            eig_tol: 1e-8,
        };
        let b = BasisSet::build(&d, &BasisConfig { max_components: 2, ..caps }, &caps).unwrap();
        assert_eq!((b.l_s(), b.l_t(0)), (2, 3));
        let blk = build_interaction_block(&d, &b, 1, 0).unwrap();
        assert_eq!(blk.width(), 6);
        let es = b.spatial().unwrap().eigvecs();
        let et = b.temporal(0).unwrap().eigvecs();
        let sr = d.coords().unwrap().obs_index();
        let tr = d.times()[0].obs_index();
        for i in 0..d.n() {
            for ls in 0..2 {
                for lt in 0..3 {
                    let want = d.x()[(i, 1)] * es[(sr[i], ls)] * et[(tr[i], lt)];
                    assert_eq!(blk.z[(i, ls * 3 + lt)], want);
                }
            }
        }
        let ev_s = b.spatial().unwrap().eigvals();
        let ev_t = b.temporal(0).unwrap().eigvals();
        assert_eq!(blk.eigval_profile[4], ev_s[1] * ev_t[1]);
    }

    #[test]
    fn interaction_column_is_spatial_column_times_temporal_vector() {
        let d = small_panel(5, 6);
        let b = panel_bases(&d);
        let sp = build_block(&d, &b, TermSpec::new(1, TermKind::Spatial)).unwrap();
        let it = build_interaction_block(&d, &b, 1, 0).unwrap();
        let et = b.temporal(0).unwrap().eigvecs();
        let tr = d.times()[0].obs_index();
        let lt = b.l_t(0);
        for c in 0..it.width() {
            for i in 0..d.n() {
                assert_eq!(it.z[(i, c)], sp.z[(i, c / lt)] * et[(tr[i], c % lt)]);
            }
        }
    }

    #[test]
    fn main_blocks_cover_every_covariate_and_axis() {
        let d = small_panel(6, 5);
        let b = panel_bases(&d);
        let blocks = build_main_blocks(&d, &b);
        assert_eq!(blocks.len(), 4);
        let cols: usize = blocks.iter().map(|b| b.width()).sum();
        assert_eq!(d.p() + cols, basis_column_counts(&d, &b).0);
        let again = build_main_blocks(&d, &b);
        for (a, c) in blocks.iter().zip(&again) {
            assert_eq!(crate::linalg::max_abs_diff(a.z.as_ref(), c.z.as_ref()), 0.0);
        }
    }

    #[test]
    fn missing_basis_yields_empty_block_signal() {
        let coords = PointSet::spatial(&[0.0, 1.0, 2.0], &[0.0, 0.0, 0.0]).unwrap();
        let times = PointSet::temporal(&[0.0, 1.0, 2.0], None).unwrap();
        let d = Dataset::new(vec![1.0, 2.0, 4.0], vec![], Some(coords), vec![times]).unwrap();
        let b = BasisSet::from_bases(&d, None, vec![None]).unwrap();
        assert!(build_main_blocks(&d, &b).is_empty());
        assert!(matches!(build_interaction_block(&d, &b, 0, 0), Err(StvcError::EmptyBasis(_))));
    }

    #[test]
    fn dataset_rejects_bad_shapes() {
        assert!(Dataset::new(vec![1.0, 2.0], vec![("a".into(), vec![1.0])], None, vec![]).is_err());
        let x = Mat::from_fn(2, 1, |i, _| i as f64);
        assert!(Dataset::from_design(vec![1.0, 2.0], x, vec!["c".into()], None, vec![]).is_err());
    }
}

//! Moran eigenvector bases over unique spatial sites or time points.
//!
//! A basis is built in four steps: deduplicate the coordinates, compute the
//! pairwise distance matrix under the axis metric, set the exponential kernel
//! range to the longest edge of a minimum spanning tree, and keep the
//! positive-eigenvalue eigenvectors of the doubly-centered kernel.

use std::cmp::Ordering;

use faer::{Mat, MatRef, Side};

use crate::error::{Result, StvcError};

/// Metric attached to a coordinate axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AxisKind {
    /// Planar coordinates, Euclidean distance.
    Spatial,
    /// Time along a past-to-future line, distance `|t - t'|`.
    TemporalLinear,
    /// Time wrapped onto a circle of the given period.
    TemporalCyclic { period: f64 },
}

impl AxisKind {
    pub fn is_cyclic(&self) -> bool {
        matches!(self, AxisKind::TemporalCyclic { .. })
    }

    pub fn period(&self) -> Option<f64> {
        match self {
            AxisKind::TemporalCyclic { period } => Some(*period),
            _ => None,
        }
    }

    fn dim(&self) -> usize {
        match self {
            AxisKind::Spatial => 2,
            _ => 1,
        }
    }

    /// Distance between two points given as `[x, y]` (time uses `x` only).
    pub fn distance(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        match self {
            AxisKind::Spatial => (a[0] - b[0]).hypot(a[1] - b[1]),
            AxisKind::TemporalLinear => (a[0] - b[0]).abs(),
            AxisKind::TemporalCyclic { period } => {
                let d = (a[0] - b[0]).abs().rem_euclid(*period);
                d.min(period - d)
            }
        }
    }
}

/// Unique points of one axis plus the map from observations to them.
#[derive(Clone, Debug)]
pub struct PointSet {
    points: Vec<[f64; 2]>,
    obs_index: Vec<usize>,
    kind: AxisKind,
}

impl PointSet {
    /// Spatial sites from per-observation coordinates.
    pub fn spatial(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(StvcError::ShapeMismatch(format!(
                "coordinate columns differ in length: {} vs {}",
                x.len(),
                y.len()
            )));
        }
        let raw: Vec<[f64; 2]> = x.iter().zip(y).map(|(&a, &b)| [a, b]).collect();
        Self::from_raw(raw, AxisKind::Spatial)
    }

    /// Time points from per-observation timestamps. A `period` makes the
    /// axis cyclic; timestamps are then wrapped into `[0, period)`.
    pub fn temporal(t: &[f64], period: Option<f64>) -> Result<Self> {
        let kind = match period {
            None => AxisKind::TemporalLinear,
            Some(p) if p > 0.0 && p.is_finite() => AxisKind::TemporalCyclic { period: p },
            Some(p) => {
                return Err(StvcError::InvalidParameter(format!(
                    "cyclic period must be positive and finite, got {p}"
                )))
            }
        };
        let raw = t
            .iter()
            .map(|&v| match kind {
                AxisKind::TemporalCyclic { period } => [v.rem_euclid(period), 0.0],
                _ => [v, 0.0],
            })
            .collect();
        Self::from_raw(raw, kind)
    }

    fn from_raw(raw: Vec<[f64; 2]>, kind: AxisKind) -> Result<Self> {
        if let Some(i) = raw.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(StvcError::InvalidParameter(format!(
                "non-finite coordinate at observation {i}"
            )));
        }
        // `+ 0.0` folds -0.0 into 0.0 so equal points compare equal.
        let raw: Vec<[f64; 2]> = raw.into_iter().map(|p| [p[0] + 0.0, p[1] + 0.0]).collect();
        let mut points = raw.clone();
        points.sort_by(cmp_point);
        points.dedup_by(|a, b| cmp_point(a, b) == Ordering::Equal);
        let obs_index = raw
            .iter()
            .map(|p| {
                points
                    .binary_search_by(|q| cmp_point(q, p))
                    .expect("every observation maps to a unique point")
            })
            .collect();
        Ok(Self {
            points,
            obs_index,
            kind,
        })
    }

    pub fn kind(&self) -> AxisKind {
        self.kind
    }

    pub fn n_unique(&self) -> usize {
        self.points.len()
    }

    pub fn n_obs(&self) -> usize {
        self.obs_index.len()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn obs_index(&self) -> &[usize] {
        &self.obs_index
    }

    /// Coordinate dimension (2 for sites, 1 for time).
    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// Normalizes a raw coordinate the same way the constructor does.
    pub fn normalize(&self, p: [f64; 2]) -> [f64; 2] {
        match self.kind {
            AxisKind::TemporalCyclic { period } => [p[0].rem_euclid(period) + 0.0, 0.0],
            AxisKind::TemporalLinear => [p[0] + 0.0, 0.0],
            AxisKind::Spatial => [p[0] + 0.0, p[1] + 0.0],
        }
    }

    /// Row of `p` among the unique points, if present.
    pub fn lookup(&self, p: [f64; 2]) -> Option<usize> {
        let p = self.normalize(p);
        self.points.binary_search_by(|q| cmp_point(q, &p)).ok()
    }
}

fn cmp_point(a: &[f64; 2], b: &[f64; 2]) -> Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

/// Symmetric distance matrix over the unique points of `points`.
pub fn pairwise_distance(points: &PointSet) -> Result<Mat<f64>> {
    distance_matrix(points.points(), points.kind())
}

fn distance_matrix(points: &[[f64; 2]], kind: AxisKind) -> Result<Mat<f64>> {
    let n = points.len();
    if n < 2 {
        return Err(StvcError::DegenerateAxis(format!(
            "need at least 2 unique points, got {n}"
        )));
    }
    let mut d = Mat::zeros(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = kind.distance(points[i], points[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

/// Longest edge of a minimum spanning tree of the complete graph with the
/// given edge weights (Prim's algorithm, O(n²)).
pub fn mst_longest_edge(dist: MatRef<'_, f64>) -> Result<f64> {
    let n = dist.nrows();
    if n < 2 {
        return Err(StvcError::DegenerateAxis(format!(
            "minimum spanning tree needs at least 2 points, got {n}"
        )));
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    in_tree[0] = true;
    for j in 1..n {
        best[j] = dist[(0, j)];
    }
    let mut longest = 0.0f64;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut w = f64::INFINITY;
        for j in 0..n {
            if !in_tree[j] && best[j] < w {
                w = best[j];
                next = j;
            }
        }
        if next == usize::MAX {
            return Err(StvcError::InvalidParameter(
                "distance matrix contains non-finite entries".into(),
            ));
        }
        in_tree[next] = true;
        longest = longest.max(w);
        for j in 0..n {
            if !in_tree[j] && dist[(next, j)] < best[j] {
                best[j] = dist[(next, j)];
            }
        }
    }
    Ok(longest)
}

/// Exponential kernel `exp(-d / range)` with a zero diagonal.
pub fn kernel_matrix(dist: MatRef<'_, f64>, range: f64) -> Result<Mat<f64>> {
    if !(range > 0.0 && range.is_finite()) {
        return Err(StvcError::InvalidParameter(format!(
            "kernel range must be positive, got {range}"
        )));
    }
    let n = dist.nrows();
    Ok(Mat::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (-dist[(i, j)] / range).exp()
        }
    }))
}

/// Eigenpairs retained from a doubly-centered kernel, in raw (unnormalized)
/// eigenvalue units, sorted descending.
#[derive(Clone, Debug)]
pub struct Eigenpairs {
    pub vectors: Mat<f64>,
    pub values: Vec<f64>,
}

/// Doubly centers `kernel`, eigendecomposes it and keeps the eigenpairs with
/// `λ > eig_tol · λ_max`, at most `max_components` of them.
pub fn extract_basis(
    kernel: MatRef<'_, f64>,
    max_components: usize,
    eig_tol: f64,
) -> Result<Eigenpairs> {
    let n = kernel.nrows();
    if n != kernel.ncols() {
        return Err(StvcError::ShapeMismatch(format!(
            "kernel must be square, got {}x{}",
            n,
            kernel.ncols()
        )));
    }
    if max_components == 0 || !(eig_tol > 0.0) {
        return Err(StvcError::InvalidParameter(format!(
            "max_components must be positive and eig_tol > 0 (got {max_components}, {eig_tol})"
        )));
    }
    let scale = crate::linalg::max_abs(kernel);
    if crate::linalg::max_abs_diff(kernel, kernel.transpose()) > 1e-12 * scale.max(1.0) {
        return Err(StvcError::InvalidParameter("kernel is not symmetric".into()));
    }
    let centered = double_center(kernel);
    let evd = centered
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| StvcError::NumericalFailure {
            theta: vec![],
            reason: format!("eigendecomposition failed: {e:?}"),
        })?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));

    let lam_max = s[order[0]];
    let abs_max = (0..n).map(|i| s[i].abs()).fold(0.0f64, f64::max);
    // Eigenvalues at round-off level are the null direction of the centering.
    let floor = (eig_tol * lam_max).max(1e-12 * abs_max);
    if !(lam_max > floor) {
        return Err(StvcError::EmptyBasis(
            "the centered kernel has no positive eigenvalue".into(),
        ));
    }
    let keep: Vec<usize> = order
        .into_iter()
        .take_while(|&k| s[k] > floor)
        .take(max_components)
        .collect();

    let mut vectors = Mat::zeros(n, keep.len());
    let mut values = Vec::with_capacity(keep.len());
    for (c, &k) in keep.iter().enumerate() {
        // Deterministic sign: the largest-magnitude entry is positive.
        let mut pivot = 0;
        for i in 1..n {
            if u[(i, k)].abs() > u[(pivot, k)].abs() + 1e-12 {
                pivot = i;
            }
        }
        let sign = if u[(pivot, k)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, c)] = sign * u[(i, k)];
        }
        values.push(s[k]);
    }
    Ok(Eigenpairs { vectors, values })
}

/// `(I - 11'/n) K (I - 11'/n)`.
pub fn double_center(kernel: MatRef<'_, f64>) -> Mat<f64> {
    let n = kernel.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| kernel[(i, j)]).sum::<f64>() / nf)
        .collect();
    let col_means: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| kernel[(i, j)]).sum::<f64>() / nf)
        .collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    Mat::from_fn(n, n, |i, j| {
        kernel[(i, j)] - row_means[i] - col_means[j] + grand
    })
}

/// Caps and tolerance for eigenpair retention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisConfig {
    pub max_components: usize,
    pub eig_tol: f64,
}

impl BasisConfig {
    pub fn spatial_default() -> Self {
        Self {
            max_components: 200,
            eig_tol: 1e-8,
        }
    }

    pub fn temporal_default() -> Self {
        Self {
            max_components: 100,
            eig_tol: 1e-8,
        }
    }
}

/// Data needed to evaluate the eigenvectors at points outside the source set.
#[derive(Clone, Debug)]
struct Extension {
    points: Vec<[f64; 2]>,
    kernel_col_means: Vec<f64>,
}

/// Retained Moran eigenvectors of one axis.
///
/// `eigvals` are stored divided by the largest eigenvalue, so the leading
/// entry is exactly 1.
#[derive(Clone, Debug)]
pub struct MoranBasis {
    eigvecs: Mat<f64>,
    eigvals: Vec<f64>,
    scale: f64,
    range: f64,
    kind: AxisKind,
    extension: Option<Extension>,
}

impl MoranBasis {
    /// Full pipeline: distances, MST range, kernel, eigenpairs.
    pub fn from_points(points: &PointSet, cfg: &BasisConfig) -> Result<Self> {
        let dist = pairwise_distance(points)?;
        let range = mst_longest_edge(dist.as_ref())?;
        let kernel = kernel_matrix(dist.as_ref(), range)?;
        let pairs = extract_basis(kernel.as_ref(), cfg.max_components, cfg.eig_tol)?;
        let n = kernel.nrows();
        let kernel_col_means = (0..n)
            .map(|j| (0..n).map(|i| kernel[(i, j)]).sum::<f64>() / n as f64)
            .collect();
        let scale = pairs.values[0];
        Ok(Self {
            eigvals: pairs.values.iter().map(|v| v / scale).collect(),
            eigvecs: pairs.vectors,
            scale,
            range,
            kind: points.kind(),
            extension: Some(Extension {
                points: points.points().to_vec(),
                kernel_col_means,
            }),
        })
    }

    /// Assembles a basis from precomputed parts after checking its
    /// invariants. Raw eigenvalues are normalized by the largest one.
    pub fn from_parts(
        eigvecs: Mat<f64>,
        eigvals: Vec<f64>,
        range: f64,
        kind: AxisKind,
    ) -> Result<Self> {
        let l = eigvals.len();
        if l == 0 || eigvecs.ncols() != l {
            return Err(StvcError::ShapeMismatch(format!(
                "{} eigenvalues for {} eigenvector columns",
                l,
                eigvecs.ncols()
            )));
        }
        if l >= eigvecs.nrows() {
            return Err(StvcError::InvalidParameter(format!(
                "at most n_unique - 1 = {} components allowed, got {l}",
                eigvecs.nrows().saturating_sub(1)
            )));
        }
        if eigvals.iter().any(|v| !(*v > 0.0)) || eigvals.windows(2).any(|w| w[1] > w[0]) {
            return Err(StvcError::InvalidParameter(
                "eigenvalues must be positive and descending".into(),
            ));
        }
        if !(range > 0.0) {
            return Err(StvcError::InvalidParameter(format!("range must be positive, got {range}")));
        }
        let basis = Self {
            scale: eigvals[0],
            eigvals: eigvals.iter().map(|v| v / eigvals[0]).collect(),
            eigvecs,
            range,
            kind,
            extension: None,
        };
        let (mean_dev, orth_dev) = basis.invariant_deviation();
        if mean_dev > 1e-10 || orth_dev > 1e-8 {
            return Err(StvcError::InvalidParameter(format!(
                "eigenvectors must be centered and orthonormal (mean dev {mean_dev:e}, orth dev {orth_dev:e})"
            )));
        }
        Ok(basis)
    }

    pub fn len(&self) -> usize {
        self.eigvals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigvals.is_empty()
    }

    pub fn eigvecs(&self) -> MatRef<'_, f64> {
        self.eigvecs.as_ref()
    }

    /// Normalized eigenvalues (`λ / λ_max`), descending.
    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    /// Largest raw eigenvalue.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn kind(&self) -> AxisKind {
        self.kind
    }

    pub fn n_unique(&self) -> usize {
        self.eigvecs.nrows()
    }

    /// Largest column mean and largest deviation of `E'E` from identity.
    pub fn invariant_deviation(&self) -> (f64, f64) {
        let e = self.eigvecs.as_ref();
        let n = e.nrows() as f64;
        let mean_dev = (0..e.ncols())
            .map(|c| ((0..e.nrows()).map(|i| e[(i, c)]).sum::<f64>() / n).abs())
            .fold(0.0, f64::max);
        let gram = e.transpose() * e;
        let eye = Mat::<f64>::identity(e.ncols(), e.ncols());
        (mean_dev, crate::linalg::max_abs_diff(gram.as_ref(), eye.as_ref()))
    }

    /// Evaluates the eigenvectors at arbitrary points by the Nyström
    /// extension of the centered kernel. Points belonging to the source set
    /// reproduce their eigenvector rows.
    pub fn extend(&self, points: &[[f64; 2]]) -> Result<Mat<f64>> {
        let ext = self.extension.as_ref().ok_or_else(|| {
            StvcError::InvalidParameter("basis was assembled without source points".into())
        })?;
        let l = self.len();
        let n_src = ext.points.len();
        let mut out = Mat::zeros(points.len(), l);
        let mut k = vec![0.0; n_src];
        for (r, p) in points.iter().enumerate() {
            let p = match self.kind {
                AxisKind::TemporalCyclic { period } => [p[0].rem_euclid(period), 0.0],
                _ => *p,
            };
            for (j, q) in ext.points.iter().enumerate() {
                let d = self.kind.distance(p, *q);
                k[j] = if d == 0.0 { 0.0 } else { (-d / self.range).exp() } - ext.kernel_col_means[j];
            }
            for c in 0..l {
                let raw = self.eigvals[c] * self.scale;
                let s: f64 = (0..n_src).map(|j| k[j] * self.eigvecs[(j, c)]).sum();
                out[(r, c)] = s / raw;
            }
        }
        Ok(out)
    }
}

/// Basis rows at `queries`: stored rows for points of `source`, the Nyström
/// extension elsewhere.
pub fn rows_at(basis: &MoranBasis, source: &PointSet, queries: &[[f64; 2]]) -> Result<Mat<f64>> {
    let l = basis.len();
    let mut out = Mat::zeros(queries.len(), l);
    let mut unseen = Vec::new();
    for (r, q) in queries.iter().enumerate() {
        match source.lookup(*q) {
            Some(row) => {
                for c in 0..l {
                    out[(r, c)] = basis.eigvecs()[(row, c)];
                }
            }
            None => unseen.push(r),
        }
    }
    if !unseen.is_empty() {
        let pts: Vec<[f64; 2]> = unseen.iter().map(|&r| queries[r]).collect();
        let ext = basis.extend(&pts)?;
        for (k, &r) in unseen.iter().enumerate() {
            for c in 0..l {
                out[(r, c)] = ext[(k, c)];
            }
        }
    }
    Ok(out)
}

/// Row `i` of the result is row `obs_index[i]` of the eigenvector matrix.
pub fn expand_to_observations(basis: &MoranBasis, obs_index: &[usize]) -> Mat<f64> {
    let e = basis.eigvecs();
    Mat::from_fn(obs_index.len(), e.ncols(), |i, c| e[(obs_index[i], c)])
}

//! Closed-form Riemannian primitives for the three constant-curvature
//! families: Euclidean space `R^d`, the unit sphere `S^d` (unit vectors in
//! `R^{d+1}`), and hyperbolic space `H^d` (upper hyperboloid sheet in
//! Minkowski `R^{d+1}`).
//!
//! Everything here is a pure function of its inputs; there is no shared
//! mutable state and all operations are safe to call concurrently.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Operations refuse to evaluate closer to the cut locus than this.
pub const CUT_LOCUS_TOL: f64 = 1e-8;
/// Tolerance for point / tangent membership invariants.
pub const POINT_TOL: f64 = 1e-12;
/// Ambient axes whose tangent projection falls below this norm are skipped
/// when building frames.
const AXIS_SKIP_TOL: f64 = 1e-8;
/// Below this radius `rho*cot(rho)` and `rho*coth(rho)` switch to their
/// Taylor series to avoid 0/0.
const SERIES_RHO: f64 = 1e-4;

/// `x * cot(x)` with the series branch `1 - x^2/3 - x^4/45` for small `x`.
pub fn rho_cot_rho(x: f64) -> f64 {
    if x.abs() < SERIES_RHO {
        let x2 = x * x;
        1.0 - x2 / 3.0 - x2 * x2 / 45.0
    } else {
        x * x.cos() / x.sin()
    }
}

/// `x * coth(x)` with the series branch `1 + x^2/3 - x^4/45` for small `x`.
pub fn rho_coth_rho(x: f64) -> f64 {
    if x.abs() < SERIES_RHO {
        let x2 = x * x;
        1.0 + x2 / 3.0 - x2 * x2 / 45.0
    } else {
        x * x.cosh() / x.sinh()
    }
}

/// Sectional curvature pinch constants, `kappa0 <= K <= kappa1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvatureBounds {
    pub kappa0: f64,
    pub kappa1: f64,
}

/// One of the supported constant-curvature manifolds, identified by its
/// intrinsic dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Manifold {
    Euclidean { dim: usize },
    Sphere { dim: usize },
    Hyperbolic { dim: usize },
}

impl Manifold {
    pub fn dim(self) -> usize {
        match self {
            Manifold::Euclidean { dim } | Manifold::Sphere { dim } | Manifold::Hyperbolic { dim } => {
                dim
            }
        }
    }

    /// Dimension of the ambient chart the coordinates live in.
    pub fn ambient_dim(self) -> usize {
        match self {
            Manifold::Euclidean { dim } => dim,
            Manifold::Sphere { dim } | Manifold::Hyperbolic { dim } => dim + 1,
        }
    }

    pub fn injectivity_radius(self) -> f64 {
        match self {
            Manifold::Sphere { .. } => std::f64::consts::PI,
            _ => f64::INFINITY,
        }
    }

    pub fn curvature_bounds(self) -> CurvatureBounds {
        match self {
            Manifold::Euclidean { .. } => CurvatureBounds {
                kappa0: 0.0,
                kappa1: 0.0,
            },
            Manifold::Sphere { .. } => CurvatureBounds {
                kappa0: 0.0,
                kappa1: 1.0,
            },
            Manifold::Hyperbolic { .. } => CurvatureBounds {
                kappa0: -1.0,
                kappa1: 0.0,
            },
        }
    }

    /// Eigenvalue of `Hess(rho^2/2)` on the orthogonal complement of the
    /// geodesic direction: 1, `rho*cot(rho)`, or `rho*coth(rho)`.
    pub fn comparison_factor(self, rho: f64) -> f64 {
        match self {
            Manifold::Euclidean { .. } => 1.0,
            Manifold::Sphere { .. } => rho_cot_rho(rho),
            Manifold::Hyperbolic { .. } => rho_coth_rho(rho),
        }
    }

    /// Ambient metric pairing: the Euclidean dot product, except on the
    /// hyperboloid where the last coordinate enters with a minus sign.
    pub fn metric_dot(self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        match self {
            Manifold::Hyperbolic { .. } => {
                let last = a.len() - 1;
                let mut acc = 0.0;
                for i in 0..last {
                    acc += a[i] * b[i];
                }
                acc - a[last] * b[last]
            }
            _ => a.dot(b),
        }
    }

    /// Deterministic base point: the origin, or the "north pole"
    /// `(0, ..., 0, 1)` on the sphere and the hyperboloid.
    pub fn canonical_base_point(self) -> ManifoldPoint {
        let a = self.ambient_dim();
        let mut coords = DVector::zeros(a);
        if !matches!(self, Manifold::Euclidean { .. }) {
            coords[a - 1] = 1.0;
        }
        ManifoldPoint {
            manifold: self,
            coords,
        }
    }

    fn check_coords(self, coords: &DVector<f64>) -> Result<()> {
        if coords.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim(),
                got: coords.len(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidPoint("non-finite coordinate".into()));
        }
        match self {
            Manifold::Euclidean { .. } => Ok(()),
            Manifold::Sphere { .. } => {
                let n = coords.norm();
                if (n - 1.0).abs() > POINT_TOL {
                    return Err(Error::InvalidPoint(format!(
                        "sphere point has norm {n:.17}, expected 1"
                    )));
                }
                Ok(())
            }
            Manifold::Hyperbolic { .. } => {
                let q = self.metric_dot(coords, coords);
                if (q + 1.0).abs() > POINT_TOL {
                    return Err(Error::InvalidPoint(format!(
                        "hyperboloid point has Minkowski norm {q:.17}, expected -1"
                    )));
                }
                if coords[coords.len() - 1] < 1.0 - POINT_TOL {
                    return Err(Error::InvalidPoint(
                        "hyperboloid point is not on the upper sheet".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Rescale nearly-on-manifold coordinates exactly onto the manifold.
    /// Used after exponential maps to keep invariants tight over long chains.
    fn renormalize(self, mut coords: DVector<f64>) -> DVector<f64> {
        match self {
            Manifold::Euclidean { .. } => coords,
            Manifold::Sphere { .. } => {
                let n = coords.norm();
                if n > 0.0 {
                    coords /= n;
                }
                coords
            }
            Manifold::Hyperbolic { .. } => {
                let q = -self.metric_dot(&coords, &coords);
                if q > 0.0 {
                    coords /= q.sqrt();
                }
                coords
            }
        }
    }

    /// Orthogonal (metric) projection of an ambient vector onto the tangent
    /// space at `base`.
    fn project_tangent(self, base: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Manifold::Euclidean { .. } => v.clone(),
            // <x,x> = 1 resp. -1, so the normal component is <v,x> x resp. -<v,x>_M x.
            Manifold::Sphere { .. } => v - base * v.dot(base),
            Manifold::Hyperbolic { .. } => v + base * self.metric_dot(v, base),
        }
    }
}

/// A point given in ambient coordinates, validated against the manifold's
/// membership invariant on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    manifold: Manifold,
    coords: DVector<f64>,
}

impl ManifoldPoint {
    pub fn new(manifold: Manifold, coords: DVector<f64>) -> Result<Self> {
        manifold.check_coords(&coords)?;
        Ok(Self { manifold, coords })
    }

    pub fn from_slice(manifold: Manifold, coords: &[f64]) -> Result<Self> {
        Self::new(manifold, DVector::from_row_slice(coords))
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }
}

/// A tangent vector at `base`, in ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: ManifoldPoint,
    coords: DVector<f64>,
}

impl TangentVector {
    /// Validates the tangency invariant (`<v,x> = 0` in the ambient metric)
    /// to `POINT_TOL`.
    pub fn new(base: ManifoldPoint, coords: DVector<f64>) -> Result<Self> {
        if coords.len() != base.manifold.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: base.manifold.ambient_dim(),
                got: coords.len(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidTangent("non-finite coordinate".into()));
        }
        if !matches!(base.manifold, Manifold::Euclidean { .. }) {
            let pairing = base.manifold.metric_dot(&coords, &base.coords);
            if pairing.abs() > POINT_TOL * (1.0 + coords.norm()) {
                return Err(Error::InvalidTangent(format!(
                    "vector is not tangent at base (pairing {pairing:.3e})"
                )));
            }
        }
        Ok(Self { base, coords })
    }

    /// Projects the ambient vector onto the tangent space before wrapping.
    /// Swallows the 1e-16-scale drift produced by chained operations.
    pub fn projected(base: ManifoldPoint, coords: &DVector<f64>) -> Self {
        let coords = base.manifold.project_tangent(&base.coords, coords);
        Self { base, coords }
    }

    pub fn zero(base: ManifoldPoint) -> Self {
        let coords = DVector::zeros(base.manifold.ambient_dim());
        Self { base, coords }
    }

    pub fn base(&self) -> &ManifoldPoint {
        &self.base
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    /// Metric norm (Minkowski on the hyperboloid, where tangent vectors are
    /// spacelike).
    pub fn norm(&self) -> f64 {
        let q = self.base.manifold.metric_dot(&self.coords, &self.coords);
        q.max(0.0).sqrt()
    }

    pub fn metric_dot(&self, other: &TangentVector) -> f64 {
        self.base.manifold.metric_dot(&self.coords, &other.coords)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            base: self.base.clone(),
            coords: &self.coords * s,
        }
    }
}

fn require_same_manifold(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<Manifold> {
    if x.manifold == y.manifold {
        Ok(x.manifold)
    } else if std::mem::discriminant(&x.manifold) == std::mem::discriminant(&y.manifold) {
        Err(Error::DimensionMismatch {
            expected: x.manifold.ambient_dim(),
            got: y.manifold.ambient_dim(),
        })
    } else {
        Err(Error::ManifoldMismatch)
    }
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Geodesic distance.
pub fn distance(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<f64> {
    let m = require_same_manifold(x, y)?;
    match m {
        Manifold::Euclidean { .. } => Ok((&x.coords - &y.coords).norm()),
        Manifold::Sphere { .. } => {
            // Chord-based evaluation: |y - x| = 2 sin(rho/2) and
            // |y + x| = 2 cos(rho/2). acos(<x,y>) loses half the digits at
            // both ends of [0, pi]; this form does not.
            let half_chord = 0.5 * (&y.coords - &x.coords).norm();
            let half_anti = 0.5 * (&y.coords + &x.coords).norm();
            if half_chord <= half_anti {
                Ok(2.0 * clamp_unit(half_chord).asin())
            } else {
                Ok(std::f64::consts::PI - 2.0 * clamp_unit(half_anti).asin())
            }
        }
        Manifold::Hyperbolic { .. } => {
            // cosh(rho) - 1 = -<x, y-x>_M computed without cancellation,
            // then rho = ln(1 + delta + sqrt(delta(2+delta))).
            let diff = &y.coords - &x.coords;
            let delta = (-m.metric_dot(&x.coords, &diff)).max(0.0);
            Ok((delta + (delta * (2.0 + delta)).sqrt()).ln_1p())
        }
    }
}

/// Endpoint of the geodesic leaving `x` with initial velocity `v`.
pub fn exp_map(x: &ManifoldPoint, v: &TangentVector) -> Result<ManifoldPoint> {
    if v.base != *x {
        return Err(Error::Precondition(
            "tangent vector is not based at the given point".into(),
        ));
    }
    let m = x.manifold;
    match m {
        Manifold::Euclidean { .. } => Ok(ManifoldPoint {
            manifold: m,
            coords: &x.coords + &v.coords,
        }),
        Manifold::Sphere { .. } => {
            let t = v.norm();
            if t == 0.0 {
                return Ok(x.clone());
            }
            let coords = &x.coords * t.cos() + &v.coords * (t.sin() / t);
            Ok(ManifoldPoint {
                manifold: m,
                coords: m.renormalize(coords),
            })
        }
        Manifold::Hyperbolic { .. } => {
            let t = v.norm();
            if t == 0.0 {
                return Ok(x.clone());
            }
            let coords = &x.coords * t.cosh() + &v.coords * (t.sinh() / t);
            Ok(ManifoldPoint {
                manifold: m,
                coords: m.renormalize(coords),
            })
        }
    }
}

/// Inverse exponential map: the tangent vector at `x` pointing toward `y`
/// with norm `distance(x, y)`. Errors within `CUT_LOCUS_TOL` of the cut
/// locus (antipodes on the sphere).
pub fn log_map(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<TangentVector> {
    let mut coords = DVector::zeros(x.manifold.ambient_dim());
    log_map_into(x, y, &mut coords)?;
    Ok(TangentVector {
        base: x.clone(),
        coords,
    })
}

/// Allocation-free log map writing the ambient coordinates into `out` and
/// returning the geodesic distance. This is the inner loop of the mean
/// solver, which evaluates it O(n^2) times per replication.
pub(crate) fn log_map_into(
    x: &ManifoldPoint,
    y: &ManifoldPoint,
    out: &mut DVector<f64>,
) -> Result<f64> {
    let m = require_same_manifold(x, y)?;
    let xs = x.coords.as_slice();
    let ys = y.coords.as_slice();
    let o = out.as_mut_slice();
    match m {
        Manifold::Euclidean { .. } => {
            let mut rho2 = 0.0;
            for i in 0..xs.len() {
                let d = ys[i] - xs[i];
                o[i] = d;
                rho2 += d * d;
            }
            Ok(rho2.sqrt())
        }
        Manifold::Sphere { .. } => {
            let (mut chord2, mut anti2, mut dot) = (0.0, 0.0, 0.0);
            for i in 0..xs.len() {
                let d = ys[i] - xs[i];
                let s = ys[i] + xs[i];
                chord2 += d * d;
                anti2 += s * s;
                dot += xs[i] * ys[i];
            }
            // |y - x| = 2 sin(rho/2), |y + x| = 2 cos(rho/2).
            let hc = 0.5 * chord2.sqrt();
            let ha = 0.5 * anti2.sqrt();
            let rho = if hc <= ha {
                2.0 * clamp_unit(hc).asin()
            } else {
                std::f64::consts::PI - 2.0 * clamp_unit(ha).asin()
            };
            let gap = std::f64::consts::PI - rho;
            if gap < CUT_LOCUS_TOL {
                return Err(Error::CutLocus { gap });
            }
            let mut wn2 = 0.0;
            for i in 0..xs.len() {
                let w = ys[i] - dot * xs[i];
                o[i] = w;
                wn2 += w * w;
            }
            if wn2 == 0.0 {
                o.fill(0.0);
                return Ok(rho);
            }
            let scale = rho / wn2.sqrt();
            for v in o.iter_mut() {
                *v *= scale;
            }
            Ok(rho)
        }
        Manifold::Hyperbolic { .. } => {
            let last = xs.len() - 1;
            let mut mdot = -xs[last] * ys[last];
            for i in 0..last {
                mdot += xs[i] * ys[i];
            }
            let mut wn2 = -(ys[last] + mdot * xs[last]).powi(2);
            o[last] = ys[last] + mdot * xs[last];
            for i in 0..last {
                let w = ys[i] + mdot * xs[i];
                o[i] = w;
                wn2 += w * w;
            }
            let wn = wn2.max(0.0).sqrt(); // = sinh(rho)
            if wn == 0.0 {
                o.fill(0.0);
                return Ok(0.0);
            }
            let rho = wn.asinh();
            let scale = rho / wn;
            for v in o.iter_mut() {
                *v *= scale;
            }
            Ok(rho)
        }
    }
}

/// Parallel transport of `v` from `x` to `y` along the unique minimizing
/// geodesic. The component along the geodesic maps onto the arriving
/// direction; the orthogonal complement is carried unchanged.
pub fn parallel_transport(
    x: &ManifoldPoint,
    y: &ManifoldPoint,
    v: &TangentVector,
) -> Result<TangentVector> {
    let m = require_same_manifold(x, y)?;
    if v.base != *x {
        return Err(Error::Precondition(
            "tangent vector is not based at the start point".into(),
        ));
    }
    if matches!(m, Manifold::Euclidean { .. }) {
        return Ok(TangentVector {
            base: y.clone(),
            coords: v.coords.clone(),
        });
    }
    let log_xy = log_map(x, y)?;
    let rho = log_xy.norm();
    if rho == 0.0 {
        return Ok(TangentVector {
            base: y.clone(),
            coords: v.coords.clone(),
        });
    }
    let u = log_xy.coords / rho;
    let c = m.metric_dot(&v.coords, &u);
    let arriving = match m {
        Manifold::Sphere { .. } => &u * rho.cos() - &x.coords * rho.sin(),
        Manifold::Hyperbolic { .. } => &u * rho.cosh() + &x.coords * rho.sinh(),
        Manifold::Euclidean { .. } => unreachable!(),
    };
    let coords = &v.coords + (arriving - &u) * c;
    Ok(TangentVector::projected(y.clone(), &coords))
}

/// A deterministic orthonormal basis of the tangent space at `base`, built
/// by Gram-Schmidt over the projected ambient axes in index order (axes
/// whose projection is degenerate are skipped).
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalFrame {
    base: ManifoldPoint,
    basis: Vec<DVector<f64>>,
}

impl OrthonormalFrame {
    pub fn canonical(base: ManifoldPoint) -> Self {
        let order: Vec<usize> = (0..base.manifold.ambient_dim()).collect();
        Self::with_axis_order(base, &order).expect("canonical axis order always spans")
    }

    /// Same construction with a caller-chosen axis order; used to exercise
    /// frame independence.
    pub fn with_axis_order(base: ManifoldPoint, order: &[usize]) -> Result<Self> {
        let m = base.manifold;
        let d = m.dim();
        let ambient = m.ambient_dim();
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d);
        for &i in order {
            if basis.len() == d {
                break;
            }
            if i >= ambient {
                return Err(Error::Precondition(format!(
                    "axis index {i} out of range for ambient dimension {ambient}"
                )));
            }
            let mut axis = DVector::zeros(ambient);
            axis[i] = 1.0;
            let mut w = m.project_tangent(&base.coords, &axis);
            for b in &basis {
                let c = m.metric_dot(&w, b);
                w -= b * c;
            }
            let n = m.metric_dot(&w, &w).max(0.0).sqrt();
            if n < AXIS_SKIP_TOL {
                continue;
            }
            basis.push(w / n);
        }
        if basis.len() != d {
            return Err(Error::Precondition(format!(
                "axis order spans only {} of {} tangent directions",
                basis.len(),
                d
            )));
        }
        Ok(Self { base, basis })
    }

    pub fn base(&self) -> &ManifoldPoint {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis_vector(&self, i: usize) -> TangentVector {
        TangentVector {
            base: self.base.clone(),
            coords: self.basis[i].clone(),
        }
    }

    /// Frame coordinates of a tangent vector at the frame's base point.
    pub fn coords_of(&self, v: &TangentVector) -> Result<DVector<f64>> {
        if v.base != self.base {
            return Err(Error::Precondition(
                "tangent vector is not based at the frame's base point".into(),
            ));
        }
        let m = self.base.manifold;
        Ok(DVector::from_iterator(
            self.basis.len(),
            self.basis.iter().map(|b| m.metric_dot(b, &v.coords)),
        ))
    }

    /// Tangent vector with the given frame coordinates.
    pub fn tangent_from(&self, c: &DVector<f64>) -> Result<TangentVector> {
        if c.len() != self.basis.len() {
            return Err(Error::DimensionMismatch {
                expected: self.basis.len(),
                got: c.len(),
            });
        }
        let mut coords = DVector::zeros(self.base.manifold.ambient_dim());
        for (ci, b) in c.iter().zip(&self.basis) {
            coords += b * *ci;
        }
        Ok(TangentVector {
            base: self.base.clone(),
            coords,
        })
    }

    /// Worst deviation of the basis pairings from the Kronecker delta.
    pub fn orthonormality_defect(&self) -> f64 {
        let m = self.base.manifold;
        let mut worst: f64 = 0.0;
        for (i, a) in self.basis.iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((m.metric_dot(a, b) - target).abs());
            }
        }
        worst
    }
}

/// A linear map on the tangent space at `frame.base`, expressed in that
/// frame. Eigenvalues and trace are frame-independent.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    frame: OrthonormalFrame,
    entries: DMatrix<f64>,
}

impl FrameMatrix {
    pub fn new(frame: OrthonormalFrame, entries: DMatrix<f64>) -> Result<Self> {
        let d = frame.dim();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: entries.nrows().max(entries.ncols()),
            });
        }
        Ok(Self { frame, entries })
    }

    pub fn scaled_identity(frame: OrthonormalFrame, s: f64) -> Self {
        let d = frame.dim();
        Self {
            entries: DMatrix::identity(d, d) * s,
            frame,
        }
    }

    pub fn frame(&self) -> &OrthonormalFrame {
        &self.frame
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn apply(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.entries * c
    }

    /// Eigenvalues of the symmetrized matrix, ascending.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let sym = (&self.entries + self.entries.transpose()) * 0.5;
        let mut vals: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        vals
    }

    pub fn symmetry_defect(&self) -> f64 {
        (&self.entries - self.entries.transpose()).norm()
    }
}

/// The operator `H_{x,y}` on the tangent space at `x`: the Hessian of
/// `rho(x, y)^2 / 2`, equivalently minus the covariant differential of the
/// field `p -> log_p(y)`. In constant curvature it acts as the identity
/// along the geodesic direction toward `y` and as `comparison_factor(rho)`
/// on the orthogonal complement; at `rho = 0` it is the identity.
pub fn hess_operator(
    x: &ManifoldPoint,
    y: &ManifoldPoint,
    frame: &OrthonormalFrame,
) -> Result<FrameMatrix> {
    if frame.base != *x {
        return Err(Error::Precondition(
            "frame is not based at the first argument".into(),
        ));
    }
    let m = require_same_manifold(x, y)?;
    let d = m.dim();
    let log_xy = log_map(x, y)?;
    let rho = log_xy.norm();
    if rho == 0.0 {
        return Ok(FrameMatrix::scaled_identity(frame.clone(), 1.0));
    }
    let u = frame.coords_of(&log_xy.scaled(1.0 / rho))?;
    let f = m.comparison_factor(rho);
    let mut entries = DMatrix::identity(d, d) * f;
    for i in 0..d {
        for j in 0..d {
            entries[(i, j)] += (1.0 - f) * u[i] * u[j];
        }
    }
    Ok(FrameMatrix {
        frame: frame.clone(),
        entries,
    })
}

/// Checks the curvature-comparison eigenvalue bounds for `H` at distance
/// `rho`: every eigenvalue of the symmetrized matrix must lie in
/// `[sqrt(k1) rho cot(sqrt(k1) rho), sqrt(-k0) rho coth(sqrt(-k0) rho)]`
/// (limits read as 1 when the respective curvature bound is 0), within a
/// fixed 1e-9 slack.
pub fn hess_bounds_check(h: &FrameMatrix, rho: f64, bounds: &CurvatureBounds) -> Result<bool> {
    const TOL: f64 = 1e-9;
    if rho < 0.0 {
        return Err(Error::Domain("negative distance".into()));
    }
    if bounds.kappa0 > 0.0 || bounds.kappa1 < 0.0 {
        return Err(Error::Domain("curvature bounds must satisfy kappa0 <= 0 <= kappa1".into()));
    }
    let lower = if bounds.kappa1 > 0.0 {
        let s = bounds.kappa1.sqrt() * rho;
        if s >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Domain(format!(
                "sqrt(kappa1)*rho = {s:.6} >= pi/2; the lower comparison bound does not apply"
            )));
        }
        rho_cot_rho(s)
    } else {
        1.0
    };
    let upper = if bounds.kappa0 < 0.0 {
        rho_coth_rho((-bounds.kappa0).sqrt() * rho)
    } else {
        1.0
    };
    Ok(h.symmetric_eigenvalues()
        .iter()
        .all(|&l| l >= lower - TOL && l <= upper + TOL))
}

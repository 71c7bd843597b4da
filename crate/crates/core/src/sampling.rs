//! Seedable sampling distributions on the supported manifolds, together with
//! their population quantities (Frechet mean, mean squared-distance Hessian,
//! tangent covariance).
//!
//! Every shipped model keeps its support strictly inside the ball where the
//! squared-distance Hessian is positive definite (radius `pi/2 - 1e-6` on the
//! sphere), so the mean is unique and the mean operator is invertible.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::frechet;
use crate::geometry::{
    distance, exp_map, hess_operator, log_map, FrameMatrix, Manifold, ManifoldPoint,
    OrthonormalFrame,
};

/// Margin keeping spherical supports strictly inside the half-ball.
pub const SPHERE_SUPPORT_MARGIN: f64 = 1e-6;
/// Smallest admissible eigenvalue of E[H] before the invertibility
/// assumption is declared violated.
pub const MEAN_OPERATOR_MIN_EIGENVALUE: f64 = 1e-8;

const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Panel count for the radial Simpson quadratures (even).
const QUADRATURE_PANELS: usize = 4096;

/// What a counter-style RNG stream is consumed for. Distinct purposes on the
/// same (seed, replication) pair never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamPurpose {
    /// The i.i.d. data sequence X_1, X_2, ...
    Data = 0,
    /// Monte Carlo moment estimation draws.
    Moments = 1,
    /// Brownian path increments.
    Brownian = 2,
    /// Single-step resampling for conditional-moment checks.
    Resample = 3,
    /// Reference draws from the target Gaussian law.
    GaussianRef = 4,
    /// Permutation shuffles inside statistical tests.
    Permutation = 5,
    /// Anything auxiliary (meta-replication loops in tests).
    Aux = 6,
}

/// A reproducible RNG stream keyed by `(seed, replication, purpose)`.
/// Identical keys yield identical sample sequences regardless of thread
/// scheduling, which is what makes parallel replications bit-stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub replication: u64,
    pub purpose: StreamPurpose,
}

impl RngStream {
    pub fn new(seed: u64, replication: u64, purpose: StreamPurpose) -> Self {
        Self {
            seed,
            replication,
            purpose,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((self.replication << 3) | self.purpose as u64);
        rng
    }
}

/// The distribution family of a population model. All continuous families
/// are rotationally symmetric about the model center.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    /// Finitely many atoms with probability weights.
    Discrete {
        atoms: Vec<ManifoldPoint>,
        weights: Vec<f64>,
    },
    /// Uniform on the set at fixed geodesic radius from the center.
    UniformCircle { radius: f64 },
    /// Uniform (w.r.t. Riemannian volume) on the closed geodesic ball.
    BallUniform { radius: f64 },
    /// Pushforward under `exp_c` of a mean-zero isotropic tangent Gaussian
    /// with per-coordinate scale `sigma`, truncated at radius `truncation`.
    GaussianPushforward { sigma: f64, truncation: f64 },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Discrete { .. } => "discrete",
            ModelKind::UniformCircle { .. } => "uniform_circle",
            ModelKind::BallUniform { .. } => "ball_uniform",
            ModelKind::GaussianPushforward { .. } => "gaussian",
        }
    }

    /// Geodesic radius of the support around the center.
    fn support_radius(&self, center: &ManifoldPoint) -> Result<f64> {
        match self {
            ModelKind::Discrete { atoms, .. } => {
                let mut r: f64 = 0.0;
                for a in atoms {
                    r = r.max(distance(center, a)?);
                }
                Ok(r)
            }
            ModelKind::UniformCircle { radius } | ModelKind::BallUniform { radius } => Ok(*radius),
            ModelKind::GaussianPushforward { truncation, .. } => Ok(*truncation),
        }
    }
}

/// A sampling distribution on a manifold with a declared center. For the
/// symmetric families the center is the Frechet mean by construction; for
/// discrete models the mean is computed.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    manifold: Manifold,
    center: ManifoldPoint,
    kind: ModelKind,
}

impl PopulationModel {
    pub fn new(center: ManifoldPoint, kind: ModelKind) -> Result<Self> {
        let manifold = center.manifold();
        match &kind {
            ModelKind::Discrete { atoms, weights } => {
                if atoms.is_empty() {
                    return Err(Error::Config("discrete model needs at least one atom".into()));
                }
                if atoms.len() != weights.len() {
                    return Err(Error::Config(format!(
                        "{} atoms but {} weights",
                        atoms.len(),
                        weights.len()
                    )));
                }
                if weights.iter().any(|w| *w < 0.0) {
                    return Err(Error::Config("negative weight".into()));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(Error::Config(format!(
                        "weights sum to {total:.17}, expected 1"
                    )));
                }
                for a in atoms {
                    if a.manifold() != manifold {
                        return Err(Error::Config("atom on a different manifold".into()));
                    }
                }
            }
            ModelKind::UniformCircle { radius } | ModelKind::BallUniform { radius } => {
                if !radius.is_finite() || *radius <= 0.0 {
                    return Err(Error::Config("radius must be positive".into()));
                }
            }
            ModelKind::GaussianPushforward { sigma, truncation } => {
                if !sigma.is_finite() || *sigma <= 0.0 {
                    return Err(Error::Config("sigma must be positive".into()));
                }
                if !truncation.is_finite() || *truncation <= 0.0 {
                    return Err(Error::Config("truncation radius must be positive".into()));
                }
            }
        }
        let model = Self {
            manifold,
            center,
            kind,
        };
        let support = model.kind.support_radius(&model.center)?;
        if let Manifold::Sphere { .. } = manifold {
            let limit = std::f64::consts::FRAC_PI_2 - SPHERE_SUPPORT_MARGIN;
            if support > limit {
                return Err(Error::Config(format!(
                    "support radius {support:.6} violates the sphere support rule: all mass must \
                     lie within geodesic radius pi/2 - 1e-6 = {limit:.6} of the center so that \
                     the squared-distance Hessian stays positive definite"
                )));
            }
        }
        Ok(model)
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn center(&self) -> &ManifoldPoint {
        &self.center
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    /// One draw. Consumes a model-dependent but scheduling-independent number
    /// of RNG values.
    pub fn sample_one(&self, rng: &mut ChaCha8Rng, frame: &OrthonormalFrame) -> ManifoldPoint {
        match &self.kind {
            ModelKind::Discrete { atoms, weights } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (a, w) in atoms.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return a.clone();
                    }
                }
                atoms.last().expect("non-empty").clone()
            }
            ModelKind::UniformCircle { radius } => {
                let dir = uniform_direction(self.manifold.dim(), rng);
                self.push_radial(frame, *radius, &dir)
            }
            ModelKind::BallUniform { radius } => {
                let d = self.manifold.dim() as f64;
                loop {
                    let dir = uniform_direction(self.manifold.dim(), rng);
                    let r = *radius * rng.random::<f64>().powf(1.0 / d);
                    if self.accept_ball_radius(r, *radius, rng) {
                        return self.push_radial(frame, r, &dir);
                    }
                }
            }
            ModelKind::GaussianPushforward { sigma, truncation } => loop {
                let mut c = DVector::zeros(self.manifold.dim());
                for i in 0..c.len() {
                    c[i] = *sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
                if c.norm() <= *truncation {
                    let v = frame.tangent_from(&c).expect("frame dimension");
                    return exp_map(&self.center, &v).expect("support inside injectivity radius");
                }
            },
        }
    }

    /// Rejection step turning the Euclidean radial proposal `r^{d-1}` into
    /// the Riemannian volume law `sin^{d-1}` / `sinh^{d-1}`.
    fn accept_ball_radius(&self, r: f64, radius: f64, rng: &mut ChaCha8Rng) -> bool {
        let d = self.manifold.dim();
        if d == 1 {
            return true;
        }
        let ratio = match self.manifold {
            Manifold::Euclidean { .. } => return true,
            Manifold::Sphere { .. } => {
                if r == 0.0 {
                    1.0
                } else {
                    (r.sin() / r).powi(d as i32 - 1)
                }
            }
            Manifold::Hyperbolic { .. } => {
                let top = radius.sinh() / radius;
                let here = if r == 0.0 { 1.0 } else { r.sinh() / r };
                (here / top).powi(d as i32 - 1)
            }
        };
        rng.random::<f64>() < ratio
    }

    fn push_radial(&self, frame: &OrthonormalFrame, r: f64, dir: &DVector<f64>) -> ManifoldPoint {
        let v = frame.tangent_from(&(dir * r)).expect("frame dimension");
        exp_map(&self.center, &v).expect("support inside injectivity radius")
    }
}

fn uniform_direction(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut c = DVector::zeros(d);
    loop {
        for i in 0..d {
            c[i] = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        let n = c.norm();
        if n > 1e-12 {
            return c / n;
        }
    }
}

/// I.i.d. draws from the model, deterministic given the stream key.
pub fn sample(model: &PopulationModel, stream: &RngStream, count: usize) -> Vec<ManifoldPoint> {
    let mut rng = stream.rng();
    let frame = OrthonormalFrame::canonical(model.center().clone());
    (0..count).map(|_| model.sample_one(&mut rng, &frame)).collect()
}

/// Population quantities of a model: the Frechet mean, `E[H_{mu,X}]`, and
/// the tangent covariance `Gamma = E[log_mu(X) log_mu(X)^T]`, expressed in
/// the canonical frame at the mean.
#[derive(Debug, Clone)]
pub struct PopulationMoments {
    pub mean: ManifoldPoint,
    pub mean_hess: FrameMatrix,
    pub gamma: FrameMatrix,
}

/// Exact population moments. Rotationally symmetric families reduce to 1-D
/// radial integrals (a point evaluation for the circle); discrete models are
/// finite weighted sums around the solved mean.
pub fn population_moments(model: &PopulationModel) -> Result<PopulationMoments> {
    let mean = population_mean(model)?;
    let frame = OrthonormalFrame::canonical(mean.clone());
    let (mean_hess, gamma) = moments_in_frame(model, &frame)?;
    check_mean_operator(&mean_hess)?;
    Ok(PopulationMoments {
        mean,
        mean_hess,
        gamma,
    })
}

/// The model's Frechet mean: the declared center for symmetric families,
/// solved from the atoms for discrete models.
pub fn population_mean(model: &PopulationModel) -> Result<ManifoldPoint> {
    match model.kind() {
        ModelKind::Discrete { atoms, weights } => {
            let res = frechet::frechet_mean(atoms, weights, &atoms[0], 1e-12, 10_000)?;
            if !res.converged {
                return Err(Error::SolverDiverged {
                    iterations: res.iterations,
                    gradient_norm: res.gradient_norm,
                });
            }
            Ok(res.mean)
        }
        _ => Ok(model.center().clone()),
    }
}

/// E[H] and Gamma expressed in an arbitrary frame at the mean. For the
/// isotropic families both are scalar multiples of the identity, so the
/// frame only fixes coordinates; for discrete models the sums are taken
/// entrywise in the given frame.
pub(crate) fn moments_in_frame(
    model: &PopulationModel,
    frame: &OrthonormalFrame,
) -> Result<(FrameMatrix, FrameMatrix)> {
    let m = model.manifold();
    let d = m.dim() as f64;
    match model.kind() {
        ModelKind::Discrete { atoms, weights } => {
            let dim = m.dim();
            let mut eh = DMatrix::zeros(dim, dim);
            let mut gamma = DMatrix::zeros(dim, dim);
            for (a, w) in atoms.iter().zip(weights) {
                let h = hess_operator(frame.base(), a, frame)?;
                eh += h.entries() * *w;
                let xi = frame.coords_of(&log_map(frame.base(), a)?)?;
                gamma += (&xi * xi.transpose()) * *w;
            }
            Ok((
                FrameMatrix::new(frame.clone(), eh)?,
                FrameMatrix::new(frame.clone(), gamma)?,
            ))
        }
        ModelKind::UniformCircle { radius } => {
            let f = m.comparison_factor(*radius);
            let eh_scalar = (1.0 + (d - 1.0) * f) / d;
            let gamma_scalar = radius * radius / d;
            Ok((
                FrameMatrix::scaled_identity(frame.clone(), eh_scalar),
                FrameMatrix::scaled_identity(frame.clone(), gamma_scalar),
            ))
        }
        ModelKind::BallUniform { radius } => {
            isotropic_moments(m, frame, *radius, |r| radial_volume_density(m, r))
        }
        ModelKind::GaussianPushforward { sigma, truncation } => {
            let s2 = 2.0 * sigma * sigma;
            isotropic_moments(m, frame, *truncation, |r| {
                r.powi(m.dim() as i32 - 1) * (-r * r / s2).exp()
            })
        }
    }
}

/// `sin^{d-1}`, `sinh^{d-1}`, or `r^{d-1}`: the radial factor of the
/// Riemannian volume element.
fn radial_volume_density(m: Manifold, r: f64) -> f64 {
    let e = m.dim() as i32 - 1;
    match m {
        Manifold::Euclidean { .. } => r.powi(e),
        Manifold::Sphere { .. } => r.sin().powi(e),
        Manifold::Hyperbolic { .. } => r.sinh().powi(e),
    }
}

/// Moments of a rotationally symmetric model with radial density
/// proportional to `density` on `[0, rmax]`. Averaging the projector onto a
/// uniform tangent direction gives `E[P_u] = I/d`, hence
/// `E[H] = (1 + (d-1) E[f(rho)]) / d * I` and `Gamma = E[rho^2]/d * I`.
fn isotropic_moments(
    m: Manifold,
    frame: &OrthonormalFrame,
    rmax: f64,
    density: impl Fn(f64) -> f64,
) -> Result<(FrameMatrix, FrameMatrix)> {
    let d = m.dim() as f64;
    let mass = simpson(&density, 0.0, rmax);
    if !(mass > 0.0) {
        return Err(Error::Numerical("radial density has zero mass".into()));
    }
    let mean_f = simpson(|r| density(r) * m.comparison_factor(r), 0.0, rmax) / mass;
    let mean_r2 = simpson(|r| density(r) * r * r, 0.0, rmax) / mass;
    let eh_scalar = (1.0 + (d - 1.0) * mean_f) / d;
    Ok((
        FrameMatrix::scaled_identity(frame.clone(), eh_scalar),
        FrameMatrix::scaled_identity(frame.clone(), mean_r2 / d),
    ))
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let n = QUADRATURE_PANELS;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        acc += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

pub(crate) fn check_mean_operator(eh: &FrameMatrix) -> Result<()> {
    let min = eh
        .symmetric_eigenvalues()
        .first()
        .copied()
        .unwrap_or(f64::NAN);
    if !(min >= MEAN_OPERATOR_MIN_EIGENVALUE) {
        return Err(Error::SingularMeanOperator(min));
    }
    Ok(())
}

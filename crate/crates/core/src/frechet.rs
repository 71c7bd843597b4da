//! Sample Frechet mean computation and estimation of the limit parameters
//! `E[H]`, `Gamma`, and `A = E[H]^{-1} Gamma E[H]^{-T}`.
//!
//! The mean solver is a Riemannian fixed-point / gradient-descent iteration
//! with step halving: `x <- exp_x(tau * sum_i w_i log_x(X_i))`, accepting a
//! step only when the Frechet functional `sum_i w_i rho(x, X_i)^2` does not
//! increase. Newton would also be available since `H` has a closed form, but
//! the gradient iteration has guaranteed descent on the supports we sample
//! and fewer failure modes.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    exp_map, hess_operator, log_map, FrameMatrix, ManifoldPoint, OrthonormalFrame,
};
use crate::sampling::{self, PopulationModel, RngStream};

/// Default stopping tolerance on the gradient norm `|sum w_i log_x(X_i)|`.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Eigenvalues of `A` more negative than this are a numerical failure;
/// anything in `[-CLAMP, 0)` is clamped to zero before taking the root.
const PSD_CLAMP: f64 = 1e-10;
/// Step factor below which halving gives up for the current iteration.
const MIN_STEP: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FrechetSolveResult {
    pub mean: ManifoldPoint,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted Frechet mean of `points`, started from `init`.
///
/// Stops when the gradient norm drops to `tol`; returns `converged = false`
/// (not an error) when `max_iter` is exhausted first. Cut-locus errors from
/// the log map propagate.
pub fn frechet_mean(
    points: &[ManifoldPoint],
    weights: &[f64],
    init: &ManifoldPoint,
    tol: f64,
    max_iter: usize,
) -> Result<FrechetSolveResult> {
    if points.is_empty() {
        return Err(Error::Precondition("no points".into()));
    }
    if points.len() != weights.len() {
        return Err(Error::Precondition(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| *w < 0.0) {
        return Err(Error::Precondition("negative weight".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!(
            "weights sum to {total}, expected 1"
        )));
    }
    solve(points, |i| weights[i], init, tol, max_iter)
}

/// Equal-weight mean, the hot path of the chain simulation.
pub fn frechet_mean_unweighted(
    points: &[ManifoldPoint],
    init: &ManifoldPoint,
    tol: f64,
    max_iter: usize,
) -> Result<FrechetSolveResult> {
    if points.is_empty() {
        return Err(Error::Precondition("no points".into()));
    }
    let w = 1.0 / points.len() as f64;
    solve(points, |_| w, init, tol, max_iter)
}

/// Warm-started re-solve of the mean of a fully grown prefix (the last
/// entry of `points` being the newly arrived observation), initialized at
/// the previous mean.
pub fn incremental_mean_update(
    prev: &FrechetSolveResult,
    points: &[ManifoldPoint],
    tol: f64,
    max_iter: usize,
) -> Result<FrechetSolveResult> {
    if !prev.converged {
        return Err(Error::Precondition(
            "previous solve had not converged".into(),
        ));
    }
    frechet_mean_unweighted(points, &prev.mean, tol, max_iter)
}

/// One pass over the data: the gradient `sum w_i log_x(X_i)` (as an ambient
/// vector) and the functional value `sum w_i rho(x, X_i)^2` together, since
/// the log map already yields the distance. Reuses `scratch` so the solver's
/// O(n^2) inner loop stays allocation-free.
fn gradient_and_functional(
    x: &ManifoldPoint,
    points: &[ManifoldPoint],
    weight: &impl Fn(usize) -> f64,
    scratch: &mut DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let mut grad = DVector::zeros(x.manifold().ambient_dim());
    let mut value = 0.0;
    for (i, p) in points.iter().enumerate() {
        let rho = crate::geometry::log_map_into(x, p, scratch)?;
        let w = weight(i);
        grad.axpy(w, scratch, 1.0);
        value += w * rho * rho;
    }
    Ok((grad, value))
}

fn solve(
    points: &[ManifoldPoint],
    weight: impl Fn(usize) -> f64,
    init: &ManifoldPoint,
    tol: f64,
    max_iter: usize,
) -> Result<FrechetSolveResult> {
    let mut x = init.clone();
    let mut scratch = DVector::zeros(init.manifold().ambient_dim());
    let (mut grad, mut value) = gradient_and_functional(&x, points, &weight, &mut scratch)?;
    let mut iterations = 0usize;
    loop {
        let gnorm = metric_norm(&x, &grad);
        if gnorm <= tol {
            return Ok(FrechetSolveResult {
                mean: x,
                gradient_norm: gnorm,
                iterations,
                converged: true,
            });
        }
        if iterations >= max_iter {
            return Ok(FrechetSolveResult {
                mean: x,
                gradient_norm: gnorm,
                iterations,
                converged: false,
            });
        }
        let mut tau = 1.0;
        // Within a few ulps of the functional value the comparison is pure
        // rounding noise; near the optimum the true decrease per step is
        // O(grad^2), far below that resolution.
        let slack = 1e-14 * value.abs();
        loop {
            let step = crate::geometry::TangentVector::projected(x.clone(), &(&grad * tau));
            let candidate = exp_map(&x, &step)?;
            let (g2, v2) = gradient_and_functional(&candidate, points, &weight, &mut scratch)?;
            if v2 <= value + slack {
                x = candidate;
                grad = g2;
                value = v2;
                break;
            }
            tau *= 0.5;
            if tau < MIN_STEP {
                // No descent direction left at float resolution.
                return Ok(FrechetSolveResult {
                    mean: x,
                    gradient_norm: gnorm,
                    iterations,
                    converged: gnorm <= tol,
                });
            }
        }
        iterations += 1;
    }
}

fn metric_norm(x: &ManifoldPoint, ambient: &DVector<f64>) -> f64 {
    x.manifold().metric_dot(ambient, ambient).max(0.0).sqrt()
}

/// How the limit parameters were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentProvenance {
    Analytic,
    MonteCarlo,
}

/// The matrices entering the limiting diffusion, all in one fixed frame at
/// the population mean: `E[H]`, its inverse, `Gamma`,
/// `A = E[H]^{-1} Gamma E[H]^{-T}`, and the symmetric PSD root of `A`.
#[derive(Debug, Clone)]
pub struct LimitParams {
    pub mean_hess: FrameMatrix,
    pub mean_hess_inv: FrameMatrix,
    pub gamma: FrameMatrix,
    pub a: FrameMatrix,
    pub sqrt_a: FrameMatrix,
    pub provenance: MomentProvenance,
}

impl LimitParams {
    pub fn frame(&self) -> &OrthonormalFrame {
        self.mean_hess.frame()
    }

    pub fn dim(&self) -> usize {
        self.a.entries().nrows()
    }
}

/// Assembles `LimitParams` from `E[H]` and `Gamma`.
///
/// The inverse goes through the symmetric eigendecomposition so that the
/// invertibility assumption can be certified (smallest eigenvalue below
/// 1e-8 is an error); `sqrt(A)` uses the same route because `Gamma` may be
/// rank-deficient for degenerate discrete models, which Cholesky would
/// reject.
pub fn limit_params_from_moments(
    mean_hess: FrameMatrix,
    gamma: FrameMatrix,
    provenance: MomentProvenance,
) -> Result<LimitParams> {
    sampling::check_mean_operator(&mean_hess)?;
    let gamma_min = gamma
        .symmetric_eigenvalues()
        .first()
        .copied()
        .unwrap_or(f64::NAN);
    if gamma_min < -PSD_CLAMP {
        return Err(Error::Numerical(format!(
            "Gamma has negative eigenvalue {gamma_min:.3e}"
        )));
    }
    let frame = mean_hess.frame().clone();
    let eh_sym = (mean_hess.entries() + mean_hess.entries().transpose()) * 0.5;
    let eig = eh_sym.symmetric_eigen();
    let inv_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    let inv = &eig.eigenvectors * inv_vals * eig.eigenvectors.transpose();

    let a_raw = &inv * gamma.entries() * inv.transpose();
    let a_sym = (&a_raw + a_raw.transpose()) * 0.5;
    let a_eig = a_sym.clone().symmetric_eigen();
    let min_a = a_eig.eigenvalues.min();
    if min_a < -PSD_CLAMP {
        return Err(Error::Numerical(format!(
            "A has negative eigenvalue {min_a:.3e}"
        )));
    }
    let sqrt_vals = DMatrix::from_diagonal(&a_eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let sqrt_a = &a_eig.eigenvectors * sqrt_vals * a_eig.eigenvectors.transpose();

    Ok(LimitParams {
        mean_hess_inv: FrameMatrix::new(frame.clone(), inv)?,
        gamma,
        a: FrameMatrix::new(frame.clone(), a_sym)?,
        sqrt_a: FrameMatrix::new(frame, sqrt_a)?,
        mean_hess,
        provenance,
    })
}

/// Limit parameters for a model, expressed in `frame` (which must sit at
/// the model's Frechet mean `mu`). Uses the exact population moments for
/// every model the sampling module supports analytically, falling back to
/// Monte Carlo averages of `H_{mu, X_i}` and of the log outer products over
/// `mc_samples` draws otherwise.
pub fn estimate_limit_params(
    model: &PopulationModel,
    mu: &ManifoldPoint,
    frame: &OrthonormalFrame,
    mc_samples: usize,
    stream: &RngStream,
) -> Result<LimitParams> {
    check_is_mean(model, mu)?;
    match sampling::moments_in_frame(model, frame) {
        Ok((eh, gamma)) => limit_params_from_moments(eh, gamma, MomentProvenance::Analytic),
        Err(Error::Precondition(_)) | Err(Error::Domain(_)) => {
            estimate_limit_params_monte_carlo(model, mu, frame, mc_samples, stream)
        }
        Err(e) => Err(e),
    }
}

/// Monte Carlo estimate of the limit parameters; exposed separately so the
/// analytic formulas keep an independent cross-check.
pub fn estimate_limit_params_monte_carlo(
    model: &PopulationModel,
    mu: &ManifoldPoint,
    frame: &OrthonormalFrame,
    mc_samples: usize,
    stream: &RngStream,
) -> Result<LimitParams> {
    if mc_samples == 0 {
        return Err(Error::Precondition("mc_samples must be positive".into()));
    }
    check_is_mean(model, mu)?;
    let d = model.manifold().dim();
    let mut eh = DMatrix::zeros(d, d);
    let mut gamma = DMatrix::zeros(d, d);
    let mut rng = stream.rng();
    let sample_frame = OrthonormalFrame::canonical(model.center().clone());
    for _ in 0..mc_samples {
        let x = model.sample_one(&mut rng, &sample_frame);
        eh += hess_operator(mu, &x, frame)?.entries();
        let xi = frame.coords_of(&log_map(mu, &x)?)?;
        gamma += &xi * xi.transpose();
    }
    eh /= mc_samples as f64;
    gamma /= mc_samples as f64;
    limit_params_from_moments(
        FrameMatrix::new(frame.clone(), eh)?,
        FrameMatrix::new(frame.clone(), gamma)?,
        MomentProvenance::MonteCarlo,
    )
}

fn check_is_mean(model: &PopulationModel, mu: &ManifoldPoint) -> Result<()> {
    let actual = sampling::population_mean(model)?;
    let gap = crate::geometry::distance(&actual, mu)?;
    if gap > 1e-8 {
        return Err(Error::Precondition(format!(
            "supplied point is {gap:.3e} away from the model's Frechet mean"
        )));
    }
    Ok(())
}

//! The limiting diffusion: a driftless SDE with constant diffusion
//! coefficient `sqrt(A)`, started at zero. Its time-`t` marginal is exactly
//! `N(0, t A)`, and sampled paths use exact Gaussian increments, so there is
//! no discretization bias at the grid points.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;

use crate::error::{Error, Result};
use crate::frechet::LimitParams;
use crate::geometry::FrameMatrix;
use crate::sampling::RngStream;

/// Diffusion coefficient data: `A` and its symmetric PSD root.
#[derive(Debug, Clone)]
pub struct DiffusionSpec {
    a: FrameMatrix,
    sqrt_a: FrameMatrix,
}

impl DiffusionSpec {
    /// Validates `sqrt_a * sqrt_a^T = A` to 1e-10.
    pub fn new(a: FrameMatrix, sqrt_a: FrameMatrix) -> Result<Self> {
        let recomposed = sqrt_a.entries() * sqrt_a.entries().transpose();
        let defect = (recomposed - a.entries()).norm();
        if defect > 1e-10 {
            return Err(Error::Precondition(format!(
                "sqrt(A) does not square to A (defect {defect:.3e})"
            )));
        }
        Ok(Self { a, sqrt_a })
    }

    pub fn from_limit_params(params: &LimitParams) -> Self {
        Self {
            a: params.a.clone(),
            sqrt_a: params.sqrt_a.clone(),
        }
    }

    pub fn a(&self) -> &FrameMatrix {
        &self.a
    }

    pub fn sqrt_a(&self) -> &FrameMatrix {
        &self.sqrt_a
    }

    pub fn dim(&self) -> usize {
        self.a.entries().nrows()
    }
}

/// Marginal law of the diffusion at time `t`: mean zero, covariance `t A`.
pub fn gaussian_law_at(spec: &DiffusionSpec, t: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(t >= 0.0) {
        return Err(Error::Precondition("time must be nonnegative".into()));
    }
    Ok((DVector::zeros(spec.dim()), spec.a.entries() * t))
}

/// A path sampled on the uniform grid `{0, T/steps, ..., T}` via
/// `V_{j+1} = V_j + sqrt(A) sqrt(dt) Z_j` with i.i.d. standard normal `Z_j`.
pub fn sample_brownian_path(
    spec: &DiffusionSpec,
    t_max: f64,
    steps: usize,
    stream: &RngStream,
) -> Result<Vec<DVector<f64>>> {
    if steps == 0 {
        return Err(Error::Precondition("steps must be at least 1".into()));
    }
    if !(t_max > 0.0) {
        return Err(Error::Precondition("T must be positive".into()));
    }
    let d = spec.dim();
    let dt_sqrt = (t_max / steps as f64).sqrt();
    let mut rng = stream.rng();
    let mut path = Vec::with_capacity(steps + 1);
    let mut v = DVector::zeros(d);
    path.push(v.clone());
    let mut z = DVector::zeros(d);
    for _ in 0..steps {
        for i in 0..d {
            z[i] = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        v += spec.sqrt_a.entries() * &z * dt_sqrt;
        path.push(v.clone());
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Manifold, OrthonormalFrame};
    use crate::sampling::StreamPurpose;
    use approx::assert_relative_eq;

    fn spec_scaled(d: usize, a: f64) -> DiffusionSpec {
        let m = Manifold::Euclidean { dim: d };
        let frame = OrthonormalFrame::canonical(m.canonical_base_point());
        DiffusionSpec::new(
            FrameMatrix::scaled_identity(frame.clone(), a),
            FrameMatrix::scaled_identity(frame, a.sqrt()),
        )
        .unwrap()
    }

    #[test]
    fn law_scales_linearly_in_time() {
        let spec = spec_scaled(2, 0.25);
        let (mean, cov) = gaussian_law_at(&spec, 2.0).unwrap();
        assert_eq!(mean.norm(), 0.0);
        assert_relative_eq!(cov[(0, 0)], 0.5, epsilon = 1e-15);
        let (_, zero) = gaussian_law_at(&spec, 0.0).unwrap();
        assert_eq!(zero.norm(), 0.0);
        // Additivity of the Brownian covariance.
        let (_, c_s) = gaussian_law_at(&spec, 0.7).unwrap();
        let (_, c_t) = gaussian_law_at(&spec, 1.3).unwrap();
        let (_, c_st) = gaussian_law_at(&spec, 2.0).unwrap();
        assert!((c_s + c_t - c_st).norm() < 1e-15);
    }

    #[test]
    fn mismatched_root_is_rejected() {
        let m = Manifold::Euclidean { dim: 2 };
        let frame = OrthonormalFrame::canonical(m.canonical_base_point());
        let err = DiffusionSpec::new(
            FrameMatrix::scaled_identity(frame.clone(), 1.0),
            FrameMatrix::scaled_identity(frame, 0.9),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn zero_coefficient_gives_constant_path() {
        let spec = spec_scaled(3, 0.0);
        let path =
            sample_brownian_path(&spec, 1.0, 16, &RngStream::new(5, 0, StreamPurpose::Brownian))
                .unwrap();
        assert_eq!(path.len(), 17);
        assert!(path.iter().all(|p| p.norm() == 0.0));
    }

    #[test]
    fn scalar_increments_have_correct_variance() {
        // d=1, A=1: increments are N(0, dt); the sample variance over R
        // draws should sit within 3 standard errors of dt.
        let spec = spec_scaled(1, 1.0);
        let steps = 64usize;
        let t = 1.0;
        let dt = t / steps as f64;
        let reps = 2000usize;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut count = 0usize;
        for rep in 0..reps {
            let path = sample_brownian_path(
                &spec,
                t,
                steps,
                &RngStream::new(99, rep as u64, StreamPurpose::Brownian),
            )
            .unwrap();
            for w in path.windows(2) {
                let inc = w[1][0] - w[0][0];
                sum += inc;
                sum2 += inc * inc;
                count += 1;
            }
        }
        let var = sum2 / count as f64 - (sum / count as f64).powi(2);
        // Var of the variance estimate of N(0, dt) is 2 dt^2 / count.
        let se = (2.0 * dt * dt / count as f64).sqrt();
        assert!((var - dt).abs() < 3.0 * se, "{var} vs {dt} (se {se})");
    }

    #[test]
    fn terminal_covariance_matches_law() {
        // Empirical covariance at T over many paths within 3% of T*A.
        let m = Manifold::Euclidean { dim: 2 };
        let frame = OrthonormalFrame::canonical(m.canonical_base_point());
        let a = nalgebra::DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
        let eig = a.clone().symmetric_eigen();
        let sqrt =
            &eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
                * eig.eigenvectors.transpose();
        let spec = DiffusionSpec::new(
            FrameMatrix::new(frame.clone(), a.clone()).unwrap(),
            FrameMatrix::new(frame, sqrt).unwrap(),
        )
        .unwrap();
        let t = 2.0;
        let reps = 100_000usize;
        let mut cov = nalgebra::DMatrix::<f64>::zeros(2, 2);
        for rep in 0..reps {
            let path = sample_brownian_path(
                &spec,
                t,
                4,
                &RngStream::new(7, rep as u64, StreamPurpose::Brownian),
            )
            .unwrap();
            let end = path.last().unwrap();
            cov += end * end.transpose();
        }
        cov /= reps as f64;
        let target = &a * t;
        let err = (&cov - &target).norm() / target.norm();
        assert!(err < 0.03, "relative error {err}");
    }

    #[test]
    fn disjoint_increments_are_uncorrelated() {
        let spec = spec_scaled(2, 0.5);
        let reps = 20_000usize;
        let mut cross = nalgebra::DMatrix::<f64>::zeros(2, 2);
        for rep in 0..reps {
            let path = sample_brownian_path(
                &spec,
                1.0,
                4,
                &RngStream::new(13, rep as u64, StreamPurpose::Brownian),
            )
            .unwrap();
            let inc1 = &path[1] - &path[0];
            let inc2 = &path[3] - &path[2];
            cross += inc1 * inc2.transpose();
        }
        cross /= reps as f64;
        // Entries are O(dt * A / sqrt(R)); 4/sqrt(R) is a wide band on the
        // normalized statistic.
        let scale = 0.25 * 0.5; // dt * a
        assert!(cross.norm() / scale < 4.0 / (reps as f64).sqrt() * 4.0);
    }
}

//! Shared oracles for the integration suites. Everything here is kept
//! independent of the closed-form implementation paths it cross-checks:
//! geodesics and parallel transport are integrated as ODEs in the ambient
//! space, the squared-distance Hessian is differenced from the log field,
//! and Frechet means are located by grid refinement.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use frechet_diffusion::geometry::{
    exp_map, log_map, parallel_transport, Manifold, ManifoldPoint, OrthonormalFrame,
    TangentVector,
};

/// RK4 steps used by the ODE oracles.
const ODE_STEPS: usize = 2000;

/// Ambient acceleration keeping a curve geodesic: `-<g',g'> g` on the
/// sphere, `<g',g'>_M g` on the hyperboloid, zero in flat space.
fn geodesic_acceleration(m: Manifold, g: &DVector<f64>, dg: &DVector<f64>) -> DVector<f64> {
    match m {
        Manifold::Euclidean { .. } => DVector::zeros(g.len()),
        Manifold::Sphere { .. } => g * (-dg.dot(dg)),
        Manifold::Hyperbolic { .. } => g * m.metric_dot(dg, dg),
    }
}

/// Endpoint of the geodesic with initial data `(x, v)` after unit time,
/// integrated with RK4 on the second-order ODE.
pub fn geodesic_ode_endpoint(x: &ManifoldPoint, v: &TangentVector) -> DVector<f64> {
    let m = x.manifold();
    let h = 1.0 / ODE_STEPS as f64;
    let mut pos = x.coords().clone();
    let mut vel = v.coords().clone();
    for _ in 0..ODE_STEPS {
        let (k1p, k1v) = (vel.clone(), geodesic_acceleration(m, &pos, &vel));
        let p2 = &pos + &k1p * (h / 2.0);
        let v2 = &vel + &k1v * (h / 2.0);
        let (k2p, k2v) = (v2.clone(), geodesic_acceleration(m, &p2, &v2));
        let p3 = &pos + &k2p * (h / 2.0);
        let v3 = &vel + &k2v * (h / 2.0);
        let (k3p, k3v) = (v3.clone(), geodesic_acceleration(m, &p3, &v3));
        let p4 = &pos + &k3p * h;
        let v4 = &vel + &k3v * h;
        let (k4p, k4v) = (v4.clone(), geodesic_acceleration(m, &p4, &v4));
        pos += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0);
        vel += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
    }
    pos
}

/// Parallel transport of `w0` along the geodesic from `x` with velocity `v`,
/// integrating the coupled system (position, velocity, transported vector).
/// The transport equation in the ambient chart is `w' = -<w, g'> g` on the
/// sphere and `w' = <w, g'>_M g` on the hyperboloid.
pub fn transport_ode(x: &ManifoldPoint, v: &TangentVector, w0: &TangentVector) -> DVector<f64> {
    let m = x.manifold();
    if matches!(m, Manifold::Euclidean { .. }) {
        return w0.coords().clone();
    }
    let dw = |g: &DVector<f64>, dg: &DVector<f64>, w: &DVector<f64>| -> DVector<f64> {
        match m {
            Manifold::Sphere { .. } => g * (-w.dot(dg)),
            Manifold::Hyperbolic { .. } => g * m.metric_dot(w, dg),
            Manifold::Euclidean { .. } => unreachable!(),
        }
    };
    let h = 1.0 / ODE_STEPS as f64;
    let mut pos = x.coords().clone();
    let mut vel = v.coords().clone();
    let mut w = w0.coords().clone();
    for _ in 0..ODE_STEPS {
        let k1p = vel.clone();
        let k1v = geodesic_acceleration(m, &pos, &vel);
        let k1w = dw(&pos, &vel, &w);
        let (p2, v2, w2) = (&pos + &k1p * (h / 2.0), &vel + &k1v * (h / 2.0), &w + &k1w * (h / 2.0));
        let k2p = v2.clone();
        let k2v = geodesic_acceleration(m, &p2, &v2);
        let k2w = dw(&p2, &v2, &w2);
        let (p3, v3, w3) = (&pos + &k2p * (h / 2.0), &vel + &k2v * (h / 2.0), &w + &k2w * (h / 2.0));
        let k3p = v3.clone();
        let k3v = geodesic_acceleration(m, &p3, &v3);
        let k3w = dw(&p3, &v3, &w3);
        let (p4, v4, w4) = (&pos + &k3p * h, &vel + &k3v * h, &w + &k3w * h);
        let k4p = v4.clone();
        let k4v = geodesic_acceleration(m, &p4, &v4);
        let k4w = dw(&p4, &v4, &w4);
        pos += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0);
        vel += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        w += (k1w + k2w * 2.0 + k3w * 2.0 + k4w) * (h / 6.0);
    }
    w
}

/// Central finite difference of the negated log-map field: the action of
/// `H_{x,y}` on `v` without using the closed form,
/// `H v = -[ P_{x_+ -> x} log_{x_+}(y) - P_{x_- -> x} log_{x_-}(y) ] / 2h`
/// with `x_pm = exp_x(pm h v)`.
pub fn hess_fd_apply(
    x: &ManifoldPoint,
    y: &ManifoldPoint,
    v: &TangentVector,
    h: f64,
) -> DVector<f64> {
    let xp = exp_map(x, &v.scaled(h)).unwrap();
    let xm = exp_map(x, &v.scaled(-h)).unwrap();
    let lp = parallel_transport(&xp, x, &log_map(&xp, y).unwrap()).unwrap();
    let lm = parallel_transport(&xm, x, &log_map(&xm, y).unwrap()).unwrap();
    (lm.coords() - lp.coords()) / (2.0 * h)
}

/// Brute-force Frechet mean on S^2 by nested grid refinement in spherical
/// coordinates. Good to roughly `pi / 2^levels / GRID` in each angle.
pub fn sphere_grid_frechet_mean(points: &[ManifoldPoint], levels: usize) -> ManifoldPoint {
    const GRID: i32 = 24;
    let m = points[0].manifold();
    let functional = |theta: f64, phi: f64| -> f64 {
        let p = ManifoldPoint::from_slice(
            m,
            &[
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
            ],
        )
        .unwrap();
        points
            .iter()
            .map(|q| {
                let d = frechet_diffusion::geometry::distance(&p, q).unwrap();
                d * d
            })
            .sum()
    };
    let (mut theta, mut phi) = (std::f64::consts::FRAC_PI_2, 0.0);
    let mut span = std::f64::consts::PI;
    let mut best = f64::INFINITY;
    for _ in 0..levels {
        let (t0, p0) = (theta, phi);
        for i in -GRID..=GRID {
            for j in -GRID..=GRID {
                let t = (t0 + span * i as f64 / GRID as f64).clamp(0.0, std::f64::consts::PI);
                let p = p0 + span * j as f64 / GRID as f64;
                let f = functional(t, p);
                if f < best {
                    best = f;
                    theta = t;
                    phi = p;
                }
            }
        }
        span /= GRID as f64;
    }
    ManifoldPoint::from_slice(
        m,
        &[
            theta.sin() * phi.cos(),
            theta.sin() * phi.sin(),
            theta.cos(),
        ],
    )
    .unwrap()
}

/// Deterministic random point within geodesic `radius` of the canonical base
/// point.
pub fn random_point(m: Manifold, rng: &mut ChaCha8Rng, radius: f64) -> ManifoldPoint {
    let base = m.canonical_base_point();
    let frame = OrthonormalFrame::canonical(base.clone());
    let dir = random_unit_frame_coords(m.dim(), rng);
    let r: f64 = rng.random::<f64>() * radius;
    exp_map(&base, &frame.tangent_from(&(dir * r)).unwrap()).unwrap()
}

/// Deterministic random unit tangent vector at `x`.
pub fn random_unit_tangent(x: &ManifoldPoint, rng: &mut ChaCha8Rng) -> TangentVector {
    let frame = OrthonormalFrame::canonical(x.clone());
    let dir = random_unit_frame_coords(x.manifold().dim(), rng);
    frame.tangent_from(&dir).unwrap()
}

fn random_unit_frame_coords(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut c = DVector::zeros(d);
    loop {
        for i in 0..d {
            c[i] = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        let n = c.norm();
        if n > 1e-9 {
            return c / n;
        }
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative Frobenius distance helper used across the suites.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

//! Error functionals, Perron vectors, contraction parameters, the 3×3 gain
//! matrix and the theoretical bound curves.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::Serialize;

use crate::graph::DirectedGraph;
use crate::trust::{LearningBounds, TrustModelParams};
use crate::{Error, Point, Result};

pub const PERRON_TOL: f64 = 1e-12;
pub const PERRON_MAX_ITER: usize = 100_000;
/// Largest allowed gap between the two spectral-radius routes.
pub const SPECTRAL_AGREEMENT: f64 = 1e-8;
pub const MAX_LAMBDA_HALVINGS: usize = 200;

/// Stationary vectors: `φᵀR = φᵀ` and `Cπ = π`, both stochastic.
pub fn perron_vectors(r: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let rt = r.transpose();
    let phi = power_stationary(&rt, "left Perron vector of R")?;
    let pi = power_stationary(c, "right Perron vector of C")?;
    Ok((phi, pi))
}

fn power_stationary(a: &DMatrix<f64>, what: &'static str) -> Result<DVector<f64>> {
    let n = a.nrows();
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    let mut change = f64::INFINITY;
    for _ in 0..PERRON_MAX_ITER {
        let mut next = a * &v;
        next /= next.sum();
        change = (&next - &v).lp_norm(1);
        v = next;
        if change < PERRON_TOL {
            let residual = (a * &v - &v).lp_norm(1);
            if residual < 10.0 * PERRON_TOL {
                return Ok(v);
            }
        }
    }
    Err(Error::NoConvergence {
        what,
        iterations: PERRON_MAX_ITER,
        residual: change,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionParams {
    pub sigma: f64,
    pub tau: f64,
    pub r: f64,
    pub varphi: f64,
    pub min_pi: f64,
    pub max_pi: f64,
    pub min_phi: f64,
    pub max_phi: f64,
    pub n: usize,
    pub diameter: usize,
    pub edge_utility: usize,
}

impl ContractionParams {
    /// `g_l` is the legitimate subgraph; `r`, `c` are its nominal weights.
    pub fn compute(
        g_l: &DirectedGraph,
        r: &DMatrix<f64>,
        c: &DMatrix<f64>,
        phi: &DVector<f64>,
        pi: &DVector<f64>,
    ) -> Result<Self> {
        let n = g_l.n();
        let (min_phi, max_phi) = (phi.min(), phi.max());
        let (min_pi, max_pi) = (pi.min(), pi.max());
        if !(min_phi > 0.0 && min_pi > 0.0) {
            return Err(Error::InvalidParameter("Perron vectors must be strictly positive".into()));
        }
        let nf = n as f64;
        let mut params = Self {
            sigma: 0.0,
            tau: 0.0,
            r: (1.0 / min_pi).sqrt() + nf.sqrt(),
            varphi: (1.0 / min_phi).sqrt() + nf.sqrt(),
            min_pi,
            max_pi,
            min_phi,
            max_phi,
            n,
            diameter: 0,
            edge_utility: 0,
        };
        if n == 1 {
            return Ok(params);
        }
        let d = g_l.diameter()?;
        let k = g_l.max_edge_utility()?;
        let dk = (d * k) as f64;
        let min_pos = |m: &DMatrix<f64>| m.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
        let sigma_gap = min_phi * min_pos(r).powi(2) / (max_phi.powi(2) * dk);
        let tau_gap = min_pi.powi(2) * min_pos(c).powi(2) / (max_pi.powi(3) * dk);
        for (name, gap) in [("sigma", sigma_gap), ("tau", tau_gap)] {
            if !(gap > 0.0 && gap <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} radicand 1 - {gap} is outside [0, 1)"
                )));
            }
        }
        params.sigma = (1.0 - sigma_gap).sqrt();
        params.tau = (1.0 - tau_gap).sqrt();
        params.diameter = d;
        params.edge_utility = k;
        Ok(params)
    }

    fn sqrt_n(&self) -> f64 {
        (self.n as f64).sqrt()
    }

    pub fn eta_max(&self, lip: f64) -> f64 {
        1.0 / (self.n as f64 * lip)
    }

    /// The constant `K(η)` in the third step-size condition.
    pub fn k_const(&self, eta: f64, mu: f64) -> f64 {
        let (s, t, r, vp) = (self.sigma, self.tau, self.r, self.varphi);
        (1.0 + eta * self.n as f64 * self.min_pi * mu)
            * vp
            * (2.0 * self.sqrt_n() * (1.0 - t) + r * (1.0 - s) + 2.0 * r * (1.0 + s))
    }

    pub fn lambda_max(&self, eta: f64, mu: f64) -> Result<f64> {
        if !(self.sigma < 1.0 && self.tau < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma = {}, tau = {} must be below 1",
                self.sigma, self.tau
            )));
        }
        let (s, t, r, vp) = (self.sigma, self.tau, self.r, self.varphi);
        let a = (1.0 - s) / (2.0 * vp * self.sqrt_n());
        let b = (1.0 - t) / (r * vp);
        let c = eta * self.n as f64 * self.min_pi * mu * (1.0 - s) * (1.0 - t) / self.k_const(eta, mu);
        Ok(a.min(b).min(c))
    }

    /// Half the largest admissible η and 0.9 of the matching λ bound, as
    /// the step-size conditions state them.
    pub fn theorem_step_sizes(&self, mu: f64, lip: f64) -> Result<(f64, f64)> {
        let eta = 0.5 * self.eta_max(lip);
        let lambda = (0.9 * self.lambda_max(eta, mu)?).min(1.0);
        Ok((eta, lambda))
    }

    /// [`Self::theorem_step_sizes`] with λ halved until `M` is certified
    /// stable; the printed λ bound alone does not always give `ρ(M) < 1`.
    pub fn auto_step_sizes(&self, mu: f64, lip: f64) -> Result<(f64, f64)> {
        let eta = 0.5 * self.eta_max(lip);
        Ok((eta, self.certified_lambda(eta, mu, lip)?))
    }

    /// Largest `0.9·λ_max(η)·2^{-j}` (capped at 1) with a stable `M`.
    pub fn certified_lambda(&self, eta: f64, mu: f64, lip: f64) -> Result<f64> {
        let mut lambda = (0.9 * self.lambda_max(eta, mu)?).min(1.0);
        for _ in 0..MAX_LAMBDA_HALVINGS {
            if self.build_m(eta, lambda, mu, lip).is_stable() {
                return Ok(lambda);
            }
            lambda *= 0.5;
        }
        Err(Error::NoConvergence {
            what: "step-size certification",
            iterations: MAX_LAMBDA_HALVINGS,
            residual: lambda,
        })
    }

    pub fn build_m(&self, eta: f64, lambda: f64, mu: f64, lip: f64) -> MGain {
        let (s, t, r, vp, sn) = (self.sigma, self.tau, self.r, self.varphi, self.sqrt_n());
        let n = self.n as f64;
        let decay = eta * lambda * n * self.min_pi * mu;
        let m = Matrix3::new(
            1.0 - decay,
            lambda * vp * sn,
            lambda / lip,
            2.0 * lambda,
            s + 2.0 * lambda * sn * vp,
            2.0 * lambda / lip,
            2.0 * lambda * lip * r * vp,
            lip * r * vp * (1.0 + s + lambda * vp * sn),
            t + lambda * r * vp,
        );
        // I − M written out, so the small diagonal gaps keep their precision.
        let gap = Matrix3::new(
            decay,
            -m[(0, 1)],
            -m[(0, 2)],
            -m[(1, 0)],
            (1.0 - s) - 2.0 * lambda * sn * vp,
            -m[(1, 2)],
            -m[(2, 0)],
            -m[(2, 1)],
            (1.0 - t) - lambda * r * vp,
        );
        MGain { m, gap }
    }
}

/// The gain matrix bounding one step of the error vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MGain {
    pub m: Matrix3<f64>,
    /// `I − M`.
    gap: Matrix3<f64>,
}

impl MGain {
    pub fn new(m: Matrix3<f64>) -> Self {
        Self {
            m,
            gap: Matrix3::identity() - m,
        }
    }

    /// Computed as `1 − λ_min(I − M)` so values within 1e-12 of one are
    /// still resolved, and cross-checked against the Gelfand limit.
    pub fn spectral_radius(&self) -> Result<f64> {
        if self.m.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParameter("spectral radius expects a finite nonnegative matrix".into()));
        }
        // The cubic of M itself loses ~√ε near a double root at 1; only the
        // Gelfand route is used as the cross-check here.
        let coarse = gelfand_radius(&self.m);
        let fine = 1.0 + largest_real_root(&-self.gap);
        if (fine - coarse).abs() > SPECTRAL_AGREEMENT * coarse.max(1.0) {
            return Err(Error::SpectralDisagreement {
                power: coarse,
                cubic: fine,
            });
        }
        Ok(fine)
    }

    /// `1 − ρ(M)`, read off `I − M` directly. Stays representable when
    /// `ρ(M)` itself rounds to 1.
    pub fn spectral_gap(&self) -> f64 {
        -largest_real_root(&-self.gap)
    }

    /// `ρ(M) < 1` via positive leading principal minors of `I − M`.
    pub fn is_stable(&self) -> bool {
        let a = &self.gap;
        let m1 = a[(0, 0)];
        let m2 = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        m1 > 0.0 && m2 > 0.0 && a.determinant() > 0.0
    }

    pub fn apply(&self, e: &ErrorVector) -> ErrorVector {
        ErrorVector::from_vector(self.m * e.as_vector())
    }

    pub fn power(&self, k: usize) -> Matrix3<f64> {
        self.m.pow(k as u32)
    }

    pub fn resolvent(&self) -> Result<Matrix3<f64>> {
        self.gap
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("I - M is singular".into()))
    }
}

/// Spectral radius of a nonnegative 3×3 matrix, computed by repeated squaring
/// and by the characteristic cubic; the two must agree.
pub fn spectral_radius(m: &Matrix3<f64>) -> Result<f64> {
    if m.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParameter("spectral radius expects a finite nonnegative matrix".into()));
    }
    let power = gelfand_radius(m);
    let cubic = largest_real_root(m);
    if (power - cubic).abs() > SPECTRAL_AGREEMENT * power.max(1.0) {
        return Err(Error::SpectralDisagreement { power, cubic });
    }
    Ok(power)
}

/// `lim ‖M^k‖^{1/k}` along `k = 2^j`, normalizing after each squaring.
pub fn gelfand_radius(m: &Matrix3<f64>) -> f64 {
    let s0 = m.norm();
    if s0 == 0.0 {
        return 0.0;
    }
    let mut a = m / s0;
    let mut log_rho = s0.ln();
    let mut scale = 1.0;
    for _ in 0..60 {
        a = a * a;
        let s = a.norm();
        if s == 0.0 {
            return 0.0;
        }
        scale *= 0.5;
        log_rho += s.ln() * scale;
        a /= s;
    }
    log_rho.exp()
}

/// Largest real root of `det(tI − M)`.
pub fn largest_real_root(m: &Matrix3<f64>) -> f64 {
    let tr = m.trace();
    let c2 = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    let det = m.determinant();
    let p = |t: f64| ((t - tr) * t + c2) * t - det;
    let bound = 1.0 + tr.abs().max(c2.abs()).max(det.abs());
    let bisect = |mut lo: f64, mut hi: f64| {
        // p(lo) ≤ 0 < p(hi)
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if p(mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    // Critical points of p: 3t² − 2tr·t + c2 = 0.
    let disc = tr * tr - 3.0 * c2;
    if disc <= 0.0 {
        return bisect(-bound, bound);
    }
    let sq = disc.sqrt();
    let left = (tr - sq) / 3.0;
    let right = (tr + sq) / 3.0;
    let at_min = p(right);
    let scale = bound.powi(3);
    if at_min < 0.0 {
        bisect(right, bound)
    } else if at_min <= 1e-13 * scale {
        right
    } else {
        bisect(-bound, left)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ErrorVector {
    pub opt: f64,
    pub cons: f64,
    pub track: f64,
}

impl ErrorVector {
    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.opt, self.cons, self.track)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self {
            opt: v[0],
            cons: v[1],
            track: v[2],
        }
    }

    pub fn le(&self, other: &ErrorVector) -> bool {
        self.opt <= other.opt && self.cons <= other.cons && self.track <= other.track
    }
}

/// Optimality, consensus and tracking errors over the legitimate agents.
pub fn error_vector(xs: &[Point], ys: &[Point], x_star: &Point, phi: &DVector<f64>, pi: &DVector<f64>) -> ErrorVector {
    let opt = xs
        .iter()
        .zip(phi.iter())
        .map(|(x, w)| w * (x - x_star).norm_squared())
        .sum::<f64>()
        .sqrt();
    let mut cons = 0.0;
    for (i, xi) in xs.iter().enumerate() {
        for (j, xj) in xs.iter().enumerate().skip(i + 1) {
            cons += 2.0 * phi[i] * phi[j] * (xi - xj).norm_squared();
        }
    }
    let total = ys.iter().fold(Point::zeros(x_star.len()), |acc, y| acc + y);
    let track = ys
        .iter()
        .zip(pi.iter())
        .map(|(y, w)| w * (y / *w - &total).norm_squared())
        .sum::<f64>()
        .sqrt();
    ErrorVector {
        opt,
        cons: cons.sqrt(),
        track,
    }
}

/// Deterministic bounds that hold at every iterate in compact mode.
pub fn worst_case_bounds(k: usize, b: f64, theta: f64, n_legit: usize, min_pi: f64) -> ErrorVector {
    ErrorVector {
        opt: 2.0 * b,
        cons: 2.0 * b,
        track: 2.0 * (n_legit as f64 + 1.0) * theta * k as f64 / min_pi,
    }
}

/// Inputs shared by the compact-mode expected-error curve.
#[derive(Clone, Debug)]
pub struct CompactBound {
    pub m: MGain,
    pub b: f64,
    pub theta: f64,
    pub n_legit: usize,
    pub min_pi: f64,
    pub g_bound: f64,
    pub learning: LearningBounds,
    pub trust: TrustModelParams,
}

impl CompactBound {
    pub fn at(&self, k: usize) -> Result<ErrorVector> {
        let resolvent = self.m.resolvent()?;
        let half = k / 2;
        let head = self.m.power(k - half)
            * resolvent
            * worst_case_bounds(half, self.b, self.theta, self.n_legit, self.min_pi).as_vector();
        let coef = self
            .learning
            .t_nom_tail((half + 1) as f64, self.theta, self.n_legit, self.g_bound, &self.trust)?;
        let tail = worst_case_bounds(k, self.b, self.theta, self.n_legit, self.min_pi).as_vector() * coef;
        Ok(ErrorVector::from_vector(head + tail))
    }
}

/// Inputs for the unbounded-mode expected-error curve.
#[derive(Clone, Debug)]
pub struct UnboundedBound {
    pub m: MGain,
    pub theta1: f64,
    pub theta2: f64,
    pub n_legit: usize,
    pub min_pi: f64,
    pub delta_t: f64,
    pub x_star_norm: f64,
    pub learning: LearningBounds,
    pub trust: TrustModelParams,
}

impl UnboundedBound {
    /// First step at which the curve is valid.
    pub fn first_valid_step(&self) -> usize {
        (self.x_star_norm.ln() / self.theta1).ceil().max(0.0) as usize
    }

    fn envelope(&self, k: usize) -> Vector3<f64> {
        let kf = k as f64;
        let x = 2.0 * (self.theta1 * kf).exp();
        Vector3::new(
            x,
            x,
            2.0 * (self.n_legit as f64 + 1.0) / self.min_pi * (self.theta2 * kf).exp(),
        )
    }

    pub fn at(&self, k: usize) -> Result<ErrorVector> {
        if !(self.theta2 > self.theta1 && self.theta1 > 0.0) {
            return Err(Error::InvalidParameter("need theta2 > theta1 > 0".into()));
        }
        if k < self.first_valid_step() {
            return Err(Error::InvalidParameter(format!(
                "bound only holds from k = {}, asked for {k}",
                self.first_valid_step()
            )));
        }
        let half = k / 2;
        let head = self.m.power(k - half) * self.m.resolvent()? * self.envelope(half);
        let coef = self.learning.t_nom_tail_exp(half as f64, self.delta_t, &self.trust);
        Ok(ErrorVector::from_vector(head + self.envelope(k) * coef))
    }
}

/// `θ2 < min{−ln ρ(M), E_L², E_M²}`.
pub fn geometric_rate_condition(theta2: f64, rho: f64, e_l: f64, e_m: f64) -> bool {
    theta2 < geometric_rate_threshold(rho, e_l, e_m)
}

pub fn geometric_rate_threshold(rho: f64, e_l: f64, e_m: f64) -> f64 {
    (-rho.ln()).min(e_l * e_l).min(e_m * e_m)
}

/// `e_next ≤ M e_now + tol·(1 + ‖e_now‖)` componentwise.
pub fn check_one_step_contraction(e_next: &ErrorVector, m: &MGain, e_now: &ErrorVector, tol: f64) -> bool {
    let slack = tol * (1.0 + e_now.as_vector().norm());
    let bound = m.m * e_now.as_vector();
    e_next
        .as_vector()
        .iter()
        .zip(bound.iter())
        .all(|(a, b)| *a <= b + slack)
}

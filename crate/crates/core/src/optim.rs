//! Cost functions, constraint sets with exact projections, growing set
//! sequences and weighted norms.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Error, Point, Result};

/// Dykstra stops once a full sweep moves the iterate and its corrections by
/// less than this in total.
pub const DYKSTRA_TOL: f64 = 1e-10;
pub const DYKSTRA_MAX_SWEEPS: usize = 100_000;

pub trait CostFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &Point) -> f64;
    fn gradient(&self, x: &Point) -> Point;
    /// Strong-convexity modulus.
    fn mu(&self) -> f64;
    /// Lipschitz constant of the gradient.
    fn lip(&self) -> f64;
    fn as_quadratic(&self) -> Option<&QuadraticCost> {
        None
    }
}

/// `f(x) = ½ xᵀHx + bᵀx + c` with symmetric positive definite `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCost {
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
    mu: f64,
    lip: f64,
}

impl QuadraticCost {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>, constant: f64) -> Result<Self> {
        let d = linear.len();
        if hessian.nrows() != d || hessian.ncols() != d {
            return Err(Error::InvalidParameter(format!(
                "hessian is {}x{}, linear term has length {d}",
                hessian.nrows(),
                hessian.ncols()
            )));
        }
        let asym = (&hessian - hessian.transpose()).abs().max();
        if asym > 1e-9 * hessian.abs().max().max(1.0) {
            return Err(Error::InvalidParameter(format!("hessian is not symmetric (max asymmetry {asym:e})")));
        }
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        let eig = hessian.clone().symmetric_eigen();
        let mu = eig.eigenvalues.min();
        let lip = eig.eigenvalues.max();
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "hessian is not positive definite (smallest eigenvalue {mu:e})"
            )));
        }
        Ok(Self {
            hessian,
            linear,
            constant,
            mu,
            lip,
        })
    }

    /// `‖x − a‖²`.
    pub fn squared_distance(a: &Point) -> Self {
        let d = a.len();
        Self::new(DMatrix::identity(d, d) * 2.0, -2.0 * a, a.norm_squared()).expect("2I is positive definite")
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// Sum of several quadratics of the same dimension.
    pub fn sum<'a>(terms: impl IntoIterator<Item = &'a QuadraticCost>) -> Result<Self> {
        let mut it = terms.into_iter();
        let first = it
            .next()
            .ok_or_else(|| Error::InvalidParameter("sum of no quadratics".into()))?;
        let mut h = first.hessian.clone();
        let mut b = first.linear.clone();
        let mut c = first.constant;
        for q in it {
            h += &q.hessian;
            b += &q.linear;
            c += q.constant;
        }
        Self::new(h, b, c)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.hessian * factor, &self.linear * factor, self.constant * factor)
    }

    /// Unconstrained minimizer `−H⁻¹b` by Cholesky.
    pub fn minimizer(&self) -> Point {
        let chol = self.hessian.clone().cholesky().expect("positive definite");
        -chol.solve(&self.linear)
    }
}

impl CostFunction for QuadraticCost {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn value(&self, x: &Point) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x) + self.constant
    }

    fn gradient(&self, x: &Point) -> Point {
        &self.hessian * x + &self.linear
    }

    fn mu(&self) -> f64 {
        self.mu
    }

    fn lip(&self) -> f64 {
        self.lip
    }

    fn as_quadratic(&self) -> Option<&QuadraticCost> {
        Some(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConstraintSet {
    AllSpace,
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Intersection(Vec<ConstraintSet>),
}

impl ConstraintSet {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidParameter(format!("ball radius {radius} is negative")));
        }
        Ok(ConstraintSet::Ball { center, radius })
    }

    pub fn origin_ball(dim: usize, radius: f64) -> Result<Self> {
        Self::ball(vec![0.0; dim], radius)
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::boxed(vec![lo; dim], vec![hi; dim])
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidParameter(format!("empty box {lo:?}..{hi:?}")));
        }
        Ok(ConstraintSet::Box { lo, hi })
    }

    pub fn intersect(self, other: ConstraintSet) -> ConstraintSet {
        match (self, other) {
            (ConstraintSet::AllSpace, s) | (s, ConstraintSet::AllSpace) => s,
            (ConstraintSet::Intersection(mut a), ConstraintSet::Intersection(b)) => {
                a.extend(b);
                ConstraintSet::Intersection(a)
            }
            (ConstraintSet::Intersection(mut a), s) | (s, ConstraintSet::Intersection(mut a)) => {
                a.push(s);
                ConstraintSet::Intersection(a)
            }
            (a, b) => ConstraintSet::Intersection(vec![a, b]),
        }
    }

    pub fn is_compact(&self) -> bool {
        self.norm_bound().is_some()
    }

    /// `B` with `‖x‖ ≤ B` on the set, or `None` when unbounded.
    pub fn norm_bound(&self) -> Option<f64> {
        match self {
            ConstraintSet::AllSpace => None,
            ConstraintSet::Ball { center, radius } => Some(DVector::from_column_slice(center).norm() + radius),
            ConstraintSet::Box { lo, hi } => Some(
                lo.iter()
                    .zip(hi)
                    .map(|(l, h)| l.abs().max(h.abs()).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            ),
            ConstraintSet::Intersection(sets) => sets.iter().filter_map(Self::norm_bound).reduce(f64::min),
        }
    }

    pub fn contains(&self, x: &Point, tol: f64) -> bool {
        match self {
            ConstraintSet::AllSpace => true,
            ConstraintSet::Ball { center, radius } => {
                (x - DVector::from_column_slice(center)).norm() <= radius + tol
            }
            ConstraintSet::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol),
            ConstraintSet::Intersection(sets) => sets.iter().all(|s| s.contains(x, tol)),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let own = match self {
            ConstraintSet::Ball { center, .. } => center.len(),
            ConstraintSet::Box { lo, .. } => lo.len(),
            _ => d,
        };
        if own != d {
            return Err(Error::InvalidParameter(format!("set has dimension {own}, point has {d}")));
        }
        Ok(())
    }

    /// Euclidean projection. Intersections use Dykstra's algorithm.
    pub fn project(&self, x: &Point) -> Result<Point> {
        self.check_dim(x.len())?;
        Ok(match self {
            ConstraintSet::AllSpace => x.clone(),
            ConstraintSet::Ball { center, radius } => {
                let c = DVector::from_column_slice(center);
                project_onto_ball(&c, *radius, x)
            }
            ConstraintSet::Box { lo, hi } => {
                Point::from_iterator(x.len(), x.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| v.clamp(*l, *h)))
            }
            ConstraintSet::Intersection(sets) => dykstra(sets, x)?,
        })
    }
}

fn project_onto_ball(center: &Point, radius: f64, x: &Point) -> Point {
    let offset = x - center;
    let dist = offset.norm();
    if dist <= radius {
        x.clone()
    } else {
        center + offset * (radius / dist)
    }
}

/// Projection onto the origin-centered ball of the given radius.
pub fn project_origin_ball(x: &Point, radius: f64) -> Point {
    let norm = x.norm();
    if norm <= radius {
        x.clone()
    } else if radius == 0.0 {
        Point::zeros(x.len())
    } else {
        x * (radius / norm)
    }
}

fn dykstra(sets: &[ConstraintSet], x: &Point) -> Result<Point> {
    match sets {
        [] => return Ok(x.clone()),
        [only] => return only.project(x),
        _ => {}
    }
    // If projecting onto one set already lands in all the others, that point
    // is the projection onto the intersection.
    for (i, s) in sets.iter().enumerate() {
        let p = s.project(x)?;
        if sets.iter().enumerate().all(|(j, t)| j == i || t.contains(&p, 0.0)) {
            return Ok(p);
        }
    }
    let mut y = x.clone();
    let mut increments = vec![Point::zeros(x.len()); sets.len()];
    let mut moved = f64::INFINITY;
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        let start = y.clone();
        let mut shift = 0.0;
        for (s, p) in sets.iter().zip(increments.iter_mut()) {
            let shifted = &y + &*p;
            let next = s.project(&shifted)?;
            let inc = &shifted - &next;
            shift += (&inc - &*p).norm();
            *p = inc;
            y = next;
        }
        moved = (&y - start).norm() + shift;
        if moved < DYKSTRA_TOL {
            return Ok(y);
        }
    }
    Err(Error::NoConvergence {
        what: "dykstra projection",
        iterations: DYKSTRA_MAX_SWEEPS,
        residual: moved,
    })
}

/// Radius of a growing origin-centered ball, as a function of the step.
#[derive(Clone)]
pub enum SetSequence {
    /// `θk`.
    Linear { theta: f64 },
    /// `exp(θk)`.
    Exponential { theta: f64 },
    /// `coef · k^exponent`.
    Power { coef: f64, exponent: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for SetSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetSequence::Linear { theta } => write!(f, "Linear({theta})"),
            SetSequence::Exponential { theta } => write!(f, "Exponential({theta})"),
            SetSequence::Power { coef, exponent } => write!(f, "Power({coef}, {exponent})"),
            SetSequence::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl SetSequence {
    pub fn radius(&self, k: usize) -> f64 {
        self.radius_at(k as f64)
    }

    pub fn radius_at(&self, k: f64) -> f64 {
        match self {
            SetSequence::Linear { theta } => theta * k,
            SetSequence::Exponential { theta } => (theta * k).exp(),
            SetSequence::Power { coef, exponent } => coef * k.powf(*exponent),
            SetSequence::Custom(g) => g(k),
        }
    }

    pub fn project(&self, k: usize, x: &Point) -> Point {
        project_origin_ball(x, self.radius(k))
    }

    pub fn as_set(&self, k: usize, dim: usize) -> ConstraintSet {
        ConstraintSet::Ball {
            center: vec![0.0; dim],
            radius: self.radius(k),
        }
    }
}

/// `sqrt(Σ u_i ‖x_i‖²)`.
pub fn weighted_norm(stack: &[Point], u: &[f64]) -> Result<f64> {
    if stack.len() != u.len() {
        return Err(Error::InvalidParameter(format!(
            "{} blocks but {} weights",
            stack.len(),
            u.len()
        )));
    }
    if let Some(w) = u.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::InvalidParameter(format!("weight {w} is not positive")));
    }
    Ok(stack.iter().zip(u).map(|(x, w)| w * x.norm_squared()).sum::<f64>().sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradientBound {
    pub value: f64,
    /// False when the value comes from sampling (with a 1.5 safety factor).
    pub exact: bool,
}

pub const GRADIENT_SAMPLES: usize = 2000;
pub const GRADIENT_SAFETY: f64 = 1.5;

/// `G ≥ sup_{x∈X} max_i ‖∇f_i(x)‖`.
///
/// Quadratics get the closed form `‖H‖·B + ‖∇f(0)‖`; anything else is
/// sampled and inflated.
pub fn gradient_bound(costs: &[&dyn CostFunction], set: &ConstraintSet) -> Result<GradientBound> {
    let b = set.norm_bound().ok_or_else(|| {
        Error::InvalidParameter("gradient bound needs a compact constraint set".into())
    })?;
    if costs.iter().all(|c| c.as_quadratic().is_some()) {
        let value = costs
            .iter()
            .map(|c| {
                let q = c.as_quadratic().unwrap();
                q.lip() * b + q.linear().norm()
            })
            .fold(0.0, f64::max);
        return Ok(GradientBound { value, exact: true });
    }
    let dim = costs.first().map_or(0, |c| c.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let mut best = 0.0f64;
    for _ in 0..GRADIENT_SAMPLES {
        let raw = Point::from_fn(dim, |_, _| rng.random_range(-b..=b));
        let x = set.project(&raw)?;
        for c in costs {
            best = best.max(c.gradient(&x).norm());
        }
    }
    Ok(GradientBound {
        value: best * GRADIENT_SAFETY,
        exact: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GrowthVerdict {
    /// `h(k)/(k g(k))` keeps growing: the nominal condition eventually holds.
    Dominates,
    /// The ratio stays roughly constant; whether the condition holds depends
    /// on the constants.
    EqualOrder,
    Fails,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthReport {
    pub verdict: GrowthVerdict,
    /// First `k` on the horizon from which
    /// `h(k) ≥ n_L·k·(L g(k) + max‖∇f_i(0)‖)` holds up to the horizon.
    pub first_k: Option<usize>,
    pub ratio_mid: f64,
    pub ratio_end: f64,
}

/// Compares an `S_k` radius `h` against `k·g(k)` for an `X_k` radius `g`.
pub fn validate_growth(
    g: &dyn Fn(f64) -> f64,
    h: &dyn Fn(f64) -> f64,
    horizon: usize,
    lip: f64,
    grad0_max: f64,
    n_legit: usize,
) -> GrowthReport {
    let horizon = horizon.max(2);
    let ratio = |k: f64| h(k) / (k * g(k));
    let ratio_mid = ratio((horizon / 2) as f64);
    let ratio_end = ratio(horizon as f64);
    let verdict = if ratio_end > 1.5 * ratio_mid {
        GrowthVerdict::Dominates
    } else if ratio_end * 1.5 >= ratio_mid {
        GrowthVerdict::EqualOrder
    } else {
        GrowthVerdict::Fails
    };
    let mut first_k = None;
    for k in 1..=horizon {
        let kf = k as f64;
        let holds = h(kf) >= n_legit as f64 * kf * (lip * g(kf) + grad0_max);
        match (holds, first_k) {
            (true, None) => first_k = Some(k),
            (false, Some(_)) => first_k = None,
            _ => {}
        }
    }
    GrowthReport {
        verdict,
        first_k,
        ratio_mid,
        ratio_end,
    }
}

/// Worst violation of strong convexity and smoothness over random pairs in
/// `[−scale, scale]^d`; both should be ≤ 0 up to rounding.
pub fn certify_convexity<R: Rng + ?Sized>(
    f: &dyn CostFunction,
    mu: f64,
    lip: f64,
    pairs: usize,
    scale: f64,
    rng: &mut R,
) -> (f64, f64) {
    let d = f.dim();
    let mut convex_gap = f64::NEG_INFINITY;
    let mut smooth_gap = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let x = Point::from_fn(d, |_, _| rng.random_range(-scale..=scale));
        let y = Point::from_fn(d, |_, _| rng.random_range(-scale..=scale));
        let dg = f.gradient(&x) - f.gradient(&y);
        let dx = &x - &y;
        let n2 = dx.norm_squared();
        convex_gap = convex_gap.max((mu * n2 - dg.dot(&dx)) / n2);
        smooth_gap = smooth_gap.max((dg.norm() - lip * dx.norm()) / dx.norm());
    }
    (convex_gap, smooth_gap)
}

/// Largest relative error between the gradient oracle and central
/// differences at random points.
pub fn finite_difference_error<R: Rng + ?Sized>(f: &dyn CostFunction, points: usize, scale: f64, rng: &mut R) -> f64 {
    let d = f.dim();
    let mut worst = 0.0f64;
    for _ in 0..points {
        let x = Point::from_fn(d, |_, _| rng.random_range(-scale..=scale));
        let g = f.gradient(&x);
        let mut fd = Point::zeros(d);
        for i in 0..d {
            let step = 1e-5 * x[i].abs().max(1.0);
            let mut up = x.clone();
            let mut down = x.clone();
            up[i] += step;
            down[i] -= step;
            fd[i] = (f.value(&up) - f.value(&down)) / (2.0 * step);
        }
        worst = worst.max((fd - &g).norm() / g.norm().max(1.0));
    }
    worst
}

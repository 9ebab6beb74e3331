//! Optimization problems with centralized oracles: average consensus,
//! multi-robot target tracking and random strongly convex quadratics.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::optim::{ConstraintSet, CostFunction, QuadraticCost};
use crate::{Error, Point, Result};

pub const CG_TOL: f64 = 1e-12;
pub const PG_TOL: f64 = 1e-10;
pub const PG_MAX_ITER: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    ConjugateGradient,
    ProjectedGradient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CentralizedSolution {
    pub x: Point,
    pub value: f64,
    pub method: SolveMethod,
}

/// Conjugate gradient for `Hx = rhs` with `H` symmetric positive definite.
pub fn conjugate_gradient(h: &DMatrix<f64>, rhs: &DVector<f64>, tol: f64) -> Result<Point> {
    let n = rhs.len();
    let mut x = DVector::zeros(n);
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let scale = rhs.norm().max(1.0);
    let cap = 10 * n + 100;
    for _ in 0..cap {
        if rr.sqrt() <= tol * scale {
            return Ok(x);
        }
        let hp = h * &p;
        let a = rr / p.dot(&hp);
        x.axpy(a, &p, 1.0);
        r.axpy(-a, &hp, 1.0);
        let rr_new = r.norm_squared();
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
    }
    // Recompute the true residual; the recursive one drifts.
    let res = (rhs - h * &x).norm();
    if res <= tol * scale {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            what: "conjugate gradient",
            iterations: cap,
            residual: res,
        })
    }
}

/// Minimizer of `Σ costs` over `constraint`.
pub fn centralized_solve(costs: &[Arc<dyn CostFunction>], constraint: &ConstraintSet) -> Result<CentralizedSolution> {
    let first = costs
        .first()
        .ok_or_else(|| Error::InvalidParameter("no cost functions".into()))?;
    let value = |x: &Point| costs.iter().map(|f| f.value(x)).sum::<f64>();
    let grad = |x: &Point| costs.iter().fold(Point::zeros(x.len()), |acc, f| acc + f.gradient(x));

    if matches!(constraint, ConstraintSet::AllSpace) {
        let quads: Option<Vec<&QuadraticCost>> = costs.iter().map(|f| f.as_quadratic()).collect();
        if let Some(q) = quads {
            let total = QuadraticCost::sum(q)?;
            let x = conjugate_gradient(total.hessian(), &-total.linear(), CG_TOL)?;
            return Ok(CentralizedSolution {
                value: value(&x),
                x,
                method: SolveMethod::ConjugateGradient,
            });
        }
    }

    let lip: f64 = costs.iter().map(|f| f.lip()).sum();
    let mut x = constraint.project(&Point::zeros(first.dim()))?;
    let mut residual = f64::INFINITY;
    for _ in 0..PG_MAX_ITER {
        let next = constraint.project(&(&x - grad(&x) / lip))?;
        residual = (&next - &x).norm();
        x = next;
        if residual <= PG_TOL {
            return Ok(CentralizedSolution {
                value: value(&x),
                x,
                method: SolveMethod::ProjectedGradient,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "projected gradient",
        iterations: PG_MAX_ITER,
        residual,
    })
}

/// A distributed problem instance over the legitimate agents.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    /// Local costs indexed by legitimate position.
    pub costs: Vec<Arc<dyn CostFunction>>,
    pub constraint: ConstraintSet,
    pub initial: Vec<Point>,
    pub solution: CentralizedSolution,
    pub x_star: Point,
    pub f_star: f64,
    /// Smallest local strong-convexity modulus.
    pub mu: f64,
    /// Largest local gradient Lipschitz constant.
    pub lip: f64,
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        costs: Vec<Arc<dyn CostFunction>>,
        constraint: ConstraintSet,
        initial: Vec<Point>,
    ) -> Result<Self> {
        if costs.len() != initial.len() {
            return Err(Error::InvalidParameter(format!(
                "{} costs but {} initial points",
                costs.len(),
                initial.len()
            )));
        }
        let solution = centralized_solve(&costs, &constraint)?;
        let mu = costs.iter().map(|f| f.mu()).fold(f64::INFINITY, f64::min);
        let lip = costs.iter().map(|f| f.lip()).fold(0.0, f64::max);
        Ok(Self {
            name: name.into(),
            x_star: solution.x.clone(),
            f_star: solution.value,
            solution,
            costs,
            constraint,
            initial,
            mu,
            lip,
        })
    }

    pub fn dim(&self) -> usize {
        self.x_star.len()
    }

    pub fn n_agents(&self) -> usize {
        self.costs.len()
    }

    /// `Σ_i f_i(x)`.
    pub fn global_value(&self, x: &Point) -> f64 {
        self.costs.iter().map(|f| f.value(x)).sum()
    }

    pub fn grad0_max(&self) -> f64 {
        let zero = Point::zeros(self.dim());
        self.costs.iter().map(|f| f.gradient(&zero).norm()).fold(0.0, f64::max)
    }

    pub fn cost_refs(&self) -> Vec<&dyn CostFunction> {
        self.costs.iter().map(|f| f.as_ref()).collect()
    }
}

/// `f_i(x) = ‖x − a_i‖²`, starting from `x_i[0] = a_i`.
pub fn consensus_problem(values: &[Point], constraint: ConstraintSet) -> Result<Problem> {
    weighted_consensus_problem(values, 1.0, constraint)
}

/// `f_i(x) = w‖x − a_i‖²`. The minimizer does not depend on `w`.
pub fn weighted_consensus_problem(values: &[Point], weight: f64, constraint: ConstraintSet) -> Result<Problem> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("consensus needs at least one value".into()));
    }
    let costs = values
        .iter()
        .map(|a| QuadraticCost::squared_distance(a).scaled(weight).map(|q| Arc::new(q) as Arc<dyn CostFunction>))
        .collect::<Result<_>>()?;
    Problem::new("consensus", costs, constraint, values.to_vec())
}

/// Uniform values in `[lo, hi]^dim`, one per agent.
pub fn random_values<R: Rng + ?Sized>(n: usize, dim: usize, lo: f64, hi: f64, rng: &mut R) -> Vec<Point> {
    (0..n).map(|_| Point::from_fn(dim, |_, _| rng.random_range(lo..=hi))).collect()
}

/// `½xᵀ(AᵀA + μI)x + bᵀx` with Gaussian `A`, `b`.
pub fn random_quadratic<R: Rng + ?Sized>(dim: usize, mu: f64, rng: &mut R) -> Result<QuadraticCost> {
    let a = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    let b = DVector::<f64>::from_fn(dim, |_, _| rng.sample(StandardNormal));
    QuadraticCost::new(a.transpose() * &a + DMatrix::identity(dim, dim) * mu, b, 0.0)
}

pub fn random_quadratic_problem<R: Rng + ?Sized>(
    n: usize,
    dim: usize,
    mu: f64,
    constraint: ConstraintSet,
    rng: &mut R,
) -> Result<Problem> {
    let costs = (0..n)
        .map(|_| random_quadratic(dim, mu, rng).map(|q| Arc::new(q) as Arc<dyn CostFunction>))
        .collect::<Result<Vec<_>>>()?;
    let initial = (0..n)
        .map(|_| constraint.project(&Point::from_fn(dim, |_, _| rng.random_range(-1.0..=1.0))))
        .collect::<Result<Vec<_>>>()?;
    Problem::new("random-quadratic", costs, constraint, initial)
}

/// Target-tracking model. State is `(px, py, vx, vy)`; the decision
/// variable stacks `x_0 … x_{T−1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingSpec {
    pub horizon: usize,
    pub dt: f64,
    pub process_var: f64,
    pub obs_var: f64,
    pub prior_mean: [f64; 4],
    pub prior_var: f64,
    /// Robots observe the target only within this distance.
    pub obs_radius: f64,
    pub robot_spacing: f64,
}

impl Default for TrackingSpec {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 1.0,
            process_var: 0.01,
            obs_var: 0.1,
            prior_mean: [0.0, 0.0, 1.0, 0.5],
            prior_var: 1.0,
            obs_radius: f64::INFINITY,
            robot_spacing: 5.0,
        }
    }
}

pub const STATE_DIM: usize = 4;

impl TrackingSpec {
    pub fn dim(&self) -> usize {
        STATE_DIM * self.horizon
    }

    /// Constant-velocity transition.
    pub fn transition(&self) -> DMatrix<f64> {
        let mut a = DMatrix::identity(STATE_DIM, STATE_DIM);
        a[(0, 2)] = self.dt;
        a[(1, 3)] = self.dt;
        a
    }

    fn check_covariances(&self) -> Result<()> {
        for (name, v) in [
            ("process_var", self.process_var),
            ("obs_var", self.obs_var),
            ("prior_var", self.prior_var),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        Ok(())
    }
}

/// Robots on a square grid centered on the origin.
pub fn robot_grid(n: usize, spacing: f64) -> Vec<[f64; 2]> {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let rows = n.div_ceil(cols);
    let off = |count: usize| (count as f64 - 1.0) * spacing / 2.0;
    (0..n)
        .map(|i| [(i % cols) as f64 * spacing - off(cols), (i / cols) as f64 * spacing - off(rows)])
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingData {
    pub truth: Vec<Point>,
    pub robots: Vec<[f64; 2]>,
    /// Per robot: `(t, measured position)`.
    pub observations: Vec<Vec<(usize, [f64; 2])>>,
}

impl TrackingData {
    pub fn stacked_truth(&self) -> Point {
        stack(&self.truth)
    }
}

pub fn stack(states: &[Point]) -> Point {
    Point::from_iterator(states.len() * STATE_DIM, states.iter().flat_map(|s| s.iter().copied()))
}

pub fn unstack(x: &Point) -> Vec<Point> {
    x.as_slice().chunks(STATE_DIM).map(Point::from_column_slice).collect()
}

/// Rolls the dynamics forward and samples observations. Zero variances
/// give a noiseless trajectory.
pub fn simulate_target<R: Rng + ?Sized>(spec: &TrackingSpec, robots: &[[f64; 2]], rng: &mut R) -> TrackingData {
    let mut noise = |var: f64, len: usize| -> Point {
        Point::from_fn(len, |_, _| if var > 0.0 { var.sqrt() * rng.sample::<f64, _>(StandardNormal) } else { 0.0 })
    };
    let a = spec.transition();
    let mut truth = Vec::with_capacity(spec.horizon);
    let mut x = Point::from_column_slice(&spec.prior_mean) + noise(spec.prior_var, STATE_DIM);
    for t in 0..spec.horizon {
        if t > 0 {
            x = &a * &x + noise(spec.process_var, STATE_DIM);
        }
        truth.push(x.clone());
    }
    let observations = robots
        .iter()
        .map(|r| {
            truth
                .iter()
                .enumerate()
                .filter(|(_, s)| ((s[0] - r[0]).powi(2) + (s[1] - r[1]).powi(2)).sqrt() <= spec.obs_radius)
                .map(|(t, s)| {
                    let v = noise(spec.obs_var, 2);
                    (t, [s[0] + v[0], s[1] + v[1]])
                })
                .collect()
        })
        .collect();
    TrackingData {
        truth,
        robots: robots.to_vec(),
        observations,
    }
}

/// Accumulates `w·‖M x − v‖²` into `(H, b, c)` in the `½xᵀHx + bᵀx + c`
/// convention. `cols` is where `M`'s columns start.
fn add_residual(h: &mut DMatrix<f64>, b: &mut DVector<f64>, c: &mut f64, m: &DMatrix<f64>, cols: usize, v: &DVector<f64>, w: f64) {
    let k = m.ncols();
    let mut block = h.view_mut((cols, cols), (k, k));
    block += m.transpose() * m * (2.0 * w);
    let mut seg = b.rows_mut(cols, k);
    seg -= m.transpose() * v * (2.0 * w);
    *c += w * v.norm_squared();
}

/// Adds `w·‖x_{t+1} − A x_t‖²`, which touches two consecutive blocks.
fn add_dynamics(h: &mut DMatrix<f64>, t: usize, a: &DMatrix<f64>, w: f64) {
    let mut m = DMatrix::zeros(STATE_DIM, 2 * STATE_DIM);
    m.view_mut((0, 0), (STATE_DIM, STATE_DIM)).copy_from(&-a);
    m.view_mut((0, STATE_DIM), (STATE_DIM, STATE_DIM)).fill_with_identity();
    let mut block = h.view_mut((t * STATE_DIM, t * STATE_DIM), (2 * STATE_DIM, 2 * STATE_DIM));
    block += m.transpose() * m * (2.0 * w);
}

#[derive(Clone, Debug)]
pub struct TrackingCosts {
    pub local: Vec<QuadraticCost>,
    pub global: QuadraticCost,
}

/// Local costs share one `1/n` copy of the prior and dynamics terms and keep
/// their own observations, so the local costs sum to the global objective.
pub fn tracking_costs(spec: &TrackingSpec, data: &TrackingData) -> Result<TrackingCosts> {
    spec.check_covariances()?;
    let n = data.observations.len();
    if n == 0 {
        return Err(Error::InvalidParameter("no robots".into()));
    }
    let dim = spec.dim();
    let a = spec.transition();
    let share = 1.0 / n as f64;

    let mut h0 = DMatrix::zeros(dim, dim);
    let mut b0 = DVector::zeros(dim);
    let mut c0 = 0.0;
    let eye = DMatrix::identity(STATE_DIM, STATE_DIM);
    let prior = DVector::from_column_slice(&spec.prior_mean);
    add_residual(&mut h0, &mut b0, &mut c0, &eye, 0, &prior, share / spec.prior_var);
    for t in 0..spec.horizon - 1 {
        add_dynamics(&mut h0, t, &a, share / spec.process_var);
    }

    let selector = DMatrix::from_row_slice(2, STATE_DIM, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let mut local = Vec::with_capacity(n);
    for obs in &data.observations {
        let (mut h, mut b, mut c) = (h0.clone(), b0.clone(), c0);
        for &(t, y) in obs {
            if t >= spec.horizon {
                return Err(Error::InvalidParameter(format!("observation at t = {t} beyond the horizon")));
            }
            let v = DVector::from_column_slice(&y);
            add_residual(&mut h, &mut b, &mut c, &selector, t * STATE_DIM, &v, 1.0 / spec.obs_var);
        }
        local.push(QuadraticCost::new(h, b, c)?);
    }
    let global = QuadraticCost::sum(&local)?;
    Ok(TrackingCosts { local, global })
}

/// Every agent starts from the prior mean rolled forward without noise.
pub fn tracking_problem(spec: &TrackingSpec, data: &TrackingData) -> Result<Problem> {
    let costs = tracking_costs(spec, data)?;
    let a = spec.transition();
    let mut states = vec![Point::from_column_slice(&spec.prior_mean)];
    for t in 1..spec.horizon {
        states.push(&a * &states[t - 1]);
    }
    let start = stack(&states);
    let n = costs.local.len();
    let local = costs
        .local
        .into_iter()
        .map(|q| Arc::new(q) as Arc<dyn CostFunction>)
        .collect();
    Problem::new("tracking", local, ConstraintSet::AllSpace, vec![start; n])
}

/// CSV with header `t,source,px,py,vx,vy`, one row per time step per source.
pub fn trajectory_csv(sources: &[(&str, &Point)]) -> String {
    let mut out = String::from("t,source,px,py,vx,vy\n");
    for (name, x) in sources {
        for (t, s) in unstack(x).iter().enumerate() {
            let _ = writeln!(out, "{t},{name},{},{},{},{}", s[0], s[1], s[2], s[3]);
        }
    }
    out
}

/// CSV with header `robot,t,px,py`.
pub fn observations_csv(data: &TrackingData) -> String {
    let mut out = String::from("robot,t,px,py\n");
    for (i, obs) in data.observations.iter().enumerate() {
        for (t, y) in obs {
            let _ = writeln!(out, "{i},{t},{},{}", y[0], y[1]);
        }
    }
    out
}

//! RP3 and PPP state machines, trust-based mixing weights and the message
//! exchange between agents.

mod attack;
mod engine;

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::graph::DirectedGraph;
use crate::optim::{project_origin_ball, ConstraintSet, CostFunction};
use crate::trust::TrustState;
use crate::{Error, Point, Result};

pub use attack::{AttackContext, AttackMessage, AttackModel, Messages};
pub use engine::{effective_set, nominal_perron, run, Algorithm, RunResult, RunSpec, StepRecord, TrustMode};

/// Variables held by one legitimate agent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentVariables {
    pub x: Point,
    pub z: Point,
    pub s: Point,
    pub s_prev: Point,
    /// PPP gradient tracker; unused by RP3.
    pub y: Point,
}

impl AgentVariables {
    /// `x = z = x0`, `s = 0`.
    pub fn rp3(x0: Point) -> Self {
        let zero = Point::zeros(x0.len());
        Self {
            z: x0.clone(),
            x: x0,
            s: zero.clone(),
            s_prev: zero.clone(),
            y: zero,
        }
    }

    /// `x = z = x0`, `y = ∇f(x0)`.
    pub fn ppp(x0: Point, f: &dyn CostFunction) -> Self {
        let mut v = Self::rp3(x0);
        v.y = f.gradient(&v.x);
        v
    }

    /// The tracking variable as seen by the error functionals.
    pub fn tracker(&self, algorithm: Algorithm) -> Point {
        match algorithm {
            Algorithm::Rp3 => &self.s - &self.s_prev,
            Algorithm::Ppp => self.y.clone(),
        }
    }
}

/// Mixing weights at one step, over all `n` agents. Only rows of `r` and
/// columns of `c` belonging to legitimate agents are meaningful.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrices {
    pub r: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Trusted in-neighbors per agent (empty for malicious agents).
    pub trusted_in: Vec<Vec<usize>>,
}

impl WeightMatrices {
    fn from_neighborhoods(g: &DirectedGraph, hoods: impl Fn(usize) -> (Vec<usize>, Vec<usize>)) -> Result<Self> {
        let n = g.n();
        let mut r = DMatrix::zeros(n, n);
        let mut c = DMatrix::zeros(n, n);
        let mut trusted_in = vec![Vec::new(); n];
        for &i in g.legitimate() {
            let (nin, nout) = hoods(i);
            if nin.is_empty() || nout.is_empty() {
                return Err(Error::Assumption(format!("agent {i} has an empty trusted neighborhood")));
            }
            let wr = 1.0 / nin.len() as f64;
            for &j in &nin {
                r[(i, j)] = wr;
            }
            let wc = 1.0 / nout.len() as f64;
            for &j in &nout {
                c[(j, i)] = wc;
            }
            trusted_in[i] = nin;
        }
        Ok(Self { r, c, trusted_in })
    }

    /// Uniform weights over the currently trusted neighborhoods.
    pub fn from_trust(g: &DirectedGraph, trust: &TrustState) -> Result<Self> {
        Self::from_neighborhoods(g, |i| trust.trusted_neighborhoods(g, i))
    }

    /// Uniform weights over legitimate neighbors only.
    pub fn nominal(g: &DirectedGraph) -> Self {
        let legit = |nbrs: &[usize]| nbrs.iter().copied().filter(|&j| g.is_legitimate(j)).collect();
        Self::from_neighborhoods(g, |i| (legit(g.in_neighbors(i)), legit(g.out_neighbors(i))))
            .expect("self-loops keep neighborhoods nonempty")
    }

    /// Uniform weights over every neighbor, as an agent unaware of attackers
    /// would use.
    pub fn oblivious(g: &DirectedGraph) -> Self {
        Self::from_neighborhoods(g, |i| (g.in_neighbors(i).to_vec(), g.out_neighbors(i).to_vec()))
            .expect("self-loops keep neighborhoods nonempty")
    }

    /// Rows of `r` and columns of `c` restricted to legitimate agents, in
    /// legitimate-index order.
    pub fn restrict_to_legitimate(&self, g: &DirectedGraph) -> (DMatrix<f64>, DMatrix<f64>) {
        let ids = g.legitimate();
        let m = ids.len();
        let r = DMatrix::from_fn(m, m, |a, b| self.r[(ids[a], ids[b])]);
        let c = DMatrix::from_fn(m, m, |a, b| self.c[(ids[a], ids[b])]);
        (r, c)
    }
}

/// Everything a step needs besides the states and messages.
pub struct StepInputs<'a> {
    pub graph: &'a DirectedGraph,
    pub weights: &'a WeightMatrices,
    /// Local costs indexed by legitimate position.
    pub costs: &'a [Arc<dyn CostFunction>],
    /// Effective decision set at this step.
    pub x_set: &'a ConstraintSet,
    /// Radius of `S_k`; ignored by PPP.
    pub s_radius: f64,
    pub eta: f64,
    pub lambda: f64,
}

pub struct Rp3Output {
    pub next: Vec<AgentVariables>,
    /// Pre-projection tracking vectors, per legitimate agent.
    pub d: Vec<Point>,
    pub projection_active: bool,
    /// `‖Σ(s[k+1] − s[k]) − Σ∇f_i(x_i[k])‖`.
    pub gt_residual: f64,
}

pub struct PppOutput {
    pub next: Vec<AgentVariables>,
    /// `‖Σy[k+1] − Σ∇f_i(x_i[k+1])‖`.
    pub gt_residual: f64,
}

fn check_steps(eta: f64, lambda: f64) -> Result<()> {
    if !(eta > 0.0) || !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need eta > 0 and lambda in (0, 1], got eta = {eta}, lambda = {lambda}"
        )));
    }
    Ok(())
}

/// Incoming `(z, share)` for receiver `i` from sender `j`. Legitimate
/// senders are read from the snapshot; malicious ones from `msgs`.
fn incoming<'s>(
    inp: &StepInputs<'_>,
    states: &'s [AgentVariables],
    msgs: &'s Messages,
    i: usize,
    j: usize,
    tracker: impl Fn(&'s AgentVariables) -> &'s Point,
) -> Result<(&'s Point, Point)> {
    let g = inp.graph;
    match g.legit_position(j) {
        Some(q) => {
            let st = &states[q];
            Ok((&st.z, tracker(st) * inp.weights.c[(i, j)]))
        }
        None => {
            let m = msgs.get(g, i, j).ok_or(Error::MissingMessage { from: j, to: i })?;
            Ok((&m.z, m.share.clone()))
        }
    }
}

/// `s ← Π_S[Σ C s + ∇f(x)]`, `x ← Σ R z`,
/// `z ← (1−λ)x + λ Π_X[x − η(s_new − s_old)]`.
pub fn rp3_step(states: &[AgentVariables], inp: &StepInputs<'_>, msgs: &Messages) -> Result<Rp3Output> {
    check_steps(inp.eta, inp.lambda)?;
    let g = inp.graph;
    let d = states.first().map_or(0, |s| s.x.len());
    let mut next = Vec::with_capacity(states.len());
    let mut pre = Vec::with_capacity(states.len());
    let mut active = false;
    let mut drift = Point::zeros(d);
    for (p, (&i, st)) in g.legitimate().iter().zip(states).enumerate() {
        let grad = inp.costs[p].gradient(&st.x);
        drift -= &grad;
        let mut acc_s = grad;
        let mut acc_x = Point::zeros(d);
        for &j in &inp.weights.trusted_in[i] {
            let (z, share) = incoming(inp, states, msgs, i, j, |s| &s.s)?;
            acc_s += share;
            acc_x += z * inp.weights.r[(i, j)];
        }
        let s_new = project_origin_ball(&acc_s, inp.s_radius);
        active |= s_new != acc_s;
        let step = &acc_x - (&s_new - &st.s) * inp.eta;
        let z_new = &acc_x * (1.0 - inp.lambda) + inp.x_set.project(&step)? * inp.lambda;
        drift += &s_new - &st.s;
        next.push(AgentVariables {
            x: acc_x,
            z: z_new,
            s_prev: st.s.clone(),
            s: s_new,
            y: st.y.clone(),
        });
        pre.push(acc_s);
    }
    Ok(Rp3Output {
        next,
        d: pre,
        projection_active: active,
        gt_residual: drift.norm(),
    })
}

/// `x ← Σ R z`, `y ← Σ C y + ∇f(x_new) − ∇f(x_old)`,
/// `z ← (1−λ)x + λ Π_X[x − η y]`.
pub fn ppp_step(states: &[AgentVariables], inp: &StepInputs<'_>, msgs: &Messages) -> Result<PppOutput> {
    check_steps(inp.eta, inp.lambda)?;
    let g = inp.graph;
    let d = states.first().map_or(0, |s| s.x.len());
    let mut next = Vec::with_capacity(states.len());
    let mut drift = Point::zeros(d);
    for (p, (&i, st)) in g.legitimate().iter().zip(states).enumerate() {
        let mut acc_x = Point::zeros(d);
        let mut acc_y = Point::zeros(d);
        for &j in &inp.weights.trusted_in[i] {
            let (z, share) = incoming(inp, states, msgs, i, j, |s| &s.y)?;
            acc_y += share;
            acc_x += z * inp.weights.r[(i, j)];
        }
        let grad_new = inp.costs[p].gradient(&acc_x);
        acc_y += &grad_new - inp.costs[p].gradient(&st.x);
        let step = &acc_x - &acc_y * inp.eta;
        let z_new = &acc_x * (1.0 - inp.lambda) + inp.x_set.project(&step)? * inp.lambda;
        drift += &acc_y - grad_new;
        next.push(AgentVariables {
            x: acc_x,
            z: z_new,
            s: st.s.clone(),
            s_prev: st.s_prev.clone(),
            y: acc_y,
        });
    }
    Ok(PppOutput {
        next,
        gt_residual: drift.norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Role;
    use crate::optim::QuadraticCost;

    fn legit_graph(n: usize, edges: &[(usize, usize)]) -> DirectedGraph {
        DirectedGraph::new(vec![Role::Legitimate; n], edges.iter().copied()).unwrap()
    }

    fn scalar_costs(targets: &[f64]) -> Vec<Arc<dyn CostFunction>> {
        targets
            .iter()
            .map(|a| Arc::new(QuadraticCost::squared_distance(&Point::from_element(1, *a))) as Arc<dyn CostFunction>)
            .collect()
    }

    #[test]
    fn isolated_agent_trusts_itself() {
        let g = legit_graph(1, &[]);
        let w = WeightMatrices::from_trust(&g, &TrustState::new(&g)).unwrap();
        assert_eq!(w.r[(0, 0)], 1.0);
        assert_eq!(w.c[(0, 0)], 1.0);
    }

    #[test]
    fn uniform_weights_are_stochastic() {
        let g = legit_graph(4, &[(1, 0), (2, 0), (0, 1), (1, 2), (2, 3), (3, 1)]);
        let w = WeightMatrices::from_trust(&g, &TrustState::new(&g)).unwrap();
        // Agent 0 trusts {0, 1, 2}.
        for j in 0..3 {
            assert!((w.r[(0, j)] - 1.0 / 3.0).abs() < 1e-15);
        }
        for i in 0..4 {
            assert!((w.r.row(i).sum() - 1.0).abs() < 1e-12);
            assert!((w.c.column(i).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn learned_weights_match_nominal_after_classification() {
        let roles = vec![Role::Legitimate, Role::Legitimate, Role::Malicious];
        let g = DirectedGraph::new(roles, [(0, 1), (1, 0), (2, 0), (0, 2), (2, 1)]).unwrap();
        let mut trust = TrustState::new(&g);
        let obs: Vec<_> = [(0, 2), (1, 2)]
            .iter()
            .map(|&(i, j)| crate::trust::Observation {
                k: 0,
                observer: i,
                sender: j,
                alpha: 0.1,
            })
            .collect();
        trust.update_aggregates(&g, &obs).unwrap();
        trust.update_opinions(&g, &crate::trust::InvertedOpinions::new(&g));
        let learned = WeightMatrices::from_trust(&g, &trust).unwrap();
        let nominal = WeightMatrices::nominal(&g);
        assert_eq!(learned.restrict_to_legitimate(&g), nominal.restrict_to_legitimate(&g));
        assert_eq!(learned.trusted_in[0], vec![0, 1]);
    }

    fn inputs<'a>(
        g: &'a DirectedGraph,
        w: &'a WeightMatrices,
        costs: &'a [Arc<dyn CostFunction>],
        x_set: &'a ConstraintSet,
        eta: f64,
        lambda: f64,
    ) -> StepInputs<'a> {
        StepInputs {
            graph: g,
            weights: w,
            costs,
            x_set,
            s_radius: f64::INFINITY,
            eta,
            lambda,
        }
    }

    #[test]
    fn single_agent_descends_to_minimizer() {
        let g = legit_graph(1, &[]);
        let w = WeightMatrices::nominal(&g);
        let costs = scalar_costs(&[3.0]);
        let set = ConstraintSet::AllSpace;
        let inp = inputs(&g, &w, &costs, &set, 0.1, 1.0);
        let mut states = vec![AgentVariables::rp3(Point::from_element(1, -4.0))];
        let msgs = Messages::empty(&g);
        for _ in 0..500 {
            states = rp3_step(&states, &inp, &msgs).unwrap().next;
        }
        assert!((states[0].x[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn missing_message_names_the_edge() {
        let roles = vec![Role::Legitimate, Role::Malicious];
        let g = DirectedGraph::new(roles, [(1, 0), (0, 1)]).unwrap();
        let w = WeightMatrices::oblivious(&g);
        let costs = scalar_costs(&[0.0]);
        let set = ConstraintSet::AllSpace;
        let inp = inputs(&g, &w, &costs, &set, 0.1, 0.5);
        let states = vec![AgentVariables::rp3(Point::zeros(1))];
        let err = rp3_step(&states, &inp, &Messages::empty(&g)).err().unwrap();
        assert!(matches!(err, Error::MissingMessage { from: 1, to: 0 }));
    }

    fn ring(n: usize) -> DirectedGraph {
        let mut e = Vec::new();
        for i in 0..n {
            e.push((i, (i + 1) % n));
            e.push(((i + 2) % n, i));
        }
        legit_graph(n, &e)
    }

    #[test]
    fn ppp_conserves_gradient_sum() {
        let g = ring(5);
        let w = WeightMatrices::nominal(&g);
        let costs = scalar_costs(&[1.0, -2.0, 4.0, 0.5, 3.0]);
        let set = ConstraintSet::cube(1, -1.0, 1.0).unwrap();
        let inp = inputs(&g, &w, &costs, &set, 0.05, 0.5);
        let init = [0.3, -0.9, 0.1, 0.7, -0.2];
        let mut states: Vec<_> = init
            .iter()
            .zip(&costs)
            .map(|(x, f)| AgentVariables::ppp(Point::from_element(1, *x), f.as_ref()))
            .collect();
        let msgs = Messages::empty(&g);
        for _ in 0..300 {
            let out = ppp_step(&states, &inp, &msgs).unwrap();
            let ysum: f64 = out.next.iter().map(|s| s.y[0]).sum();
            let gsum: f64 = out.next.iter().zip(&costs).map(|(s, f)| f.gradient(&s.x)[0]).sum();
            assert!((ysum - gsum).abs() <= 1e-10);
            assert!(out.gt_residual <= 1e-10);
            states = out.next;
        }
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let g = ring(4);
        let w = WeightMatrices::nominal(&g);
        let costs = scalar_costs(&[1.0, 2.0, 3.0, 6.0]);
        let set = ConstraintSet::AllSpace;
        let inp = inputs(&g, &w, &costs, &set, 0.05, 0.7);
        let x_star = Point::from_element(1, 3.0);
        let mut states: Vec<_> = costs.iter().map(|f| AgentVariables::ppp(x_star.clone(), f.as_ref())).collect();
        for _ in 0..50 {
            states = ppp_step(&states, &inp, &Messages::empty(&g)).unwrap().next;
        }
        for s in &states {
            assert!((s.x[0] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_agents_stay_symmetric() {
        let g = legit_graph(2, &[(0, 1), (1, 0)]);
        let w = WeightMatrices::nominal(&g);
        let costs = scalar_costs(&[-1.0, 1.0]);
        let set = ConstraintSet::AllSpace;
        let inp = inputs(&g, &w, &costs, &set, 0.1, 0.8);
        let mut states: Vec<_> = [-5.0, 5.0]
            .iter()
            .zip(&costs)
            .map(|(x, f)| AgentVariables::ppp(Point::from_element(1, *x), f.as_ref()))
            .collect();
        for _ in 0..100 {
            states = ppp_step(&states, &inp, &Messages::empty(&g)).unwrap().next;
            assert_eq!(states[0].x[0], -states[1].x[0]);
        }
    }

    #[test]
    fn lazy_step_with_unit_lambda_is_plain_push_pull() {
        let g = ring(3);
        let w = WeightMatrices::nominal(&g);
        let costs = scalar_costs(&[1.0, 2.0, 6.0]);
        let set = ConstraintSet::AllSpace;
        let inp = inputs(&g, &w, &costs, &set, 0.1, 1.0);
        let states: Vec<_> = [0.5, -1.0, 2.0]
            .iter()
            .map(|x| {
                let mut v = AgentVariables::rp3(Point::from_element(1, *x));
                v.s = Point::from_element(1, x * 0.3);
                v
            })
            .collect();
        let out = rp3_step(&states, &inp, &Messages::empty(&g)).unwrap();
        for (i, nx) in out.next.iter().enumerate() {
            let x: f64 = (0..3).map(|j| w.r[(i, j)] * states[j].z[0]).sum();
            let s: f64 = (0..3).map(|j| w.c[(i, j)] * states[j].s[0]).sum::<f64>() + costs[i].gradient(&states[i].x)[0];
            assert!((nx.x[0] - x).abs() < 1e-15);
            assert!((nx.z[0] - (x - 0.1 * (s - states[i].s[0]))).abs() < 1e-14);
        }
    }

    #[test]
    fn rp3_is_ppp_with_lagged_gradients() {
        // With nominal weights and no projection, y = s[k] − s[k−1] follows
        // y[k+1] = C y[k] + ∇f(x[k]) − ∇f(x[k−1]).
        let g = ring(5);
        let w = WeightMatrices::nominal(&g);
        let costs = scalar_costs(&[1.0, -2.0, 4.0, 0.5, 3.0]);
        let set = ConstraintSet::AllSpace;
        let inp = inputs(&g, &w, &costs, &set, 0.05, 0.6);
        let init = [0.3, -0.9, 0.1, 0.7, -0.2];
        let mut rp3: Vec<_> = init.iter().map(|x| AgentVariables::rp3(Point::from_element(1, *x))).collect();
        // Independent recursion on plain arrays.
        let (mut x, mut z) = (init.to_vec(), init.to_vec());
        let mut y = vec![0.0; 5];
        let mut g_prev = vec![0.0; 5];
        let grad = |i: usize, v: f64| costs[i].gradient(&Point::from_element(1, v))[0];
        for _ in 0..3000 {
            rp3 = rp3_step(&rp3, &inp, &Messages::empty(&g)).unwrap().next;
            let g_now: Vec<f64> = (0..5).map(|i| grad(i, x[i])).collect();
            let y_new: Vec<f64> = (0..5)
                .map(|i| (0..5).map(|j| w.c[(i, j)] * y[j]).sum::<f64>() + g_now[i] - g_prev[i])
                .collect();
            let x_new: Vec<f64> = (0..5).map(|i| (0..5).map(|j| w.r[(i, j)] * z[j]).sum()).collect();
            z = (0..5).map(|i| 0.4 * x_new[i] + 0.6 * (x_new[i] - 0.05 * y_new[i])).collect();
            x = x_new;
            y = y_new;
            g_prev = g_now;
            for i in 0..5 {
                assert!((rp3[i].x[0] - x[i]).abs() < 1e-9);
                assert!((rp3[i].tracker(Algorithm::Rp3)[0] - y[i]).abs() < 1e-9);
            }
        }
        assert!((x[0] - 1.3).abs() < 1e-6, "x = {}", x[0]);
    }

    #[test]
    fn s_is_projected_into_the_current_ball() {
        let g = legit_graph(1, &[]);
        let w = WeightMatrices::nominal(&g);
        let costs = scalar_costs(&[100.0]);
        let set = ConstraintSet::AllSpace;
        let mut inp = inputs(&g, &w, &costs, &set, 0.1, 0.5);
        inp.s_radius = 2.0;
        let states = vec![AgentVariables::rp3(Point::zeros(1))];
        let out = rp3_step(&states, &inp, &Messages::empty(&g)).unwrap();
        assert!(out.projection_active);
        assert_eq!(out.next[0].s[0], -2.0);
        assert_eq!(out.d[0][0], -200.0);
    }
}

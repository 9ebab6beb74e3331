//! Stochastic trust observations, aggregate trust, opinion propagation and
//! the learning-time tail bounds.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{DirectedGraph, Role};
use crate::{Error, Result};

/// Opinion at or above this value means "trusted".
pub const TRUST_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrustDistribution {
    Uniform { lo: f64, hi: f64 },
    PointMass { value: f64 },
}

impl TrustDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            TrustDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            TrustDistribution::PointMass { value } => value,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TrustDistribution::Uniform { lo, hi } => 0.0 <= lo && lo <= hi && hi <= 1.0,
            TrustDistribution::PointMass { value } => (0.0..=1.0).contains(&value),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("trust distribution {self:?} is not supported on [0, 1]")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            TrustDistribution::Uniform { lo, hi } if hi > lo => rng.random_range(lo..=hi),
            TrustDistribution::Uniform { lo, .. } => lo,
            TrustDistribution::PointMass { value } => value,
        }
    }
}

/// Which count scales the second term of `p_c`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PcCoefficient {
    /// Both terms use `N_L`, as the formula is usually printed.
    #[default]
    NL,
    NM,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustModelParams {
    legit: TrustDistribution,
    malicious: TrustDistribution,
    pc_second: PcCoefficient,
}

impl TrustModelParams {
    /// Rejects distributions that do not separate the two roles in mean.
    pub fn new(legit: TrustDistribution, malicious: TrustDistribution) -> Result<Self> {
        legit.validate()?;
        malicious.validate()?;
        let p = Self {
            legit,
            malicious,
            pc_second: PcCoefficient::NL,
        };
        if p.e_l() <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "legitimate observations need mean > 1/2 (E_L = {})",
                p.e_l()
            )));
        }
        if p.e_m() >= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "malicious observations need mean < 1/2 (E_M = {})",
                p.e_m()
            )));
        }
        Ok(p)
    }

    pub fn with_pc_coefficient(mut self, c: PcCoefficient) -> Self {
        self.pc_second = c;
        self
    }

    /// Uniform on [0.35, 0.75] for legitimate senders and [0.25, 0.65] for
    /// malicious ones.
    pub fn standard() -> Self {
        Self::new(
            TrustDistribution::Uniform { lo: 0.35, hi: 0.75 },
            TrustDistribution::Uniform { lo: 0.25, hi: 0.65 },
        )
        .expect("default distributions are separated")
    }

    pub fn e_l(&self) -> f64 {
        self.legit.mean() - 0.5
    }

    pub fn e_m(&self) -> f64 {
        self.malicious.mean() - 0.5
    }

    pub fn pc_coefficient(&self) -> PcCoefficient {
        self.pc_second
    }

    pub fn distribution(&self, sender: Role) -> &TrustDistribution {
        match sender {
            Role::Legitimate => &self.legit,
            Role::Malicious => &self.malicious,
        }
    }
}

pub fn sample_observation<R: Rng + ?Sized>(params: &TrustModelParams, sender: Role, rng: &mut R) -> f64 {
    params.distribution(sender).sample(rng)
}

/// One trust observation: legitimate agent `observer` scores in-neighbor
/// `sender` at step `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub k: usize,
    pub observer: usize,
    pub sender: usize,
    pub alpha: f64,
}

/// Source of opinion vectors sent by malicious agents.
pub trait OpinionAdversary: Sync {
    /// Fills `out` (length n) with the vector `sender` reports to `receiver`.
    fn report(&self, sender: usize, receiver: usize, out: &mut [f64]);
}

/// Reports full trust in malicious agents and none in legitimate ones.
#[derive(Clone, Debug)]
pub struct InvertedOpinions {
    roles: Vec<Role>,
}

impl InvertedOpinions {
    pub fn new(g: &DirectedGraph) -> Self {
        Self {
            roles: g.roles().to_vec(),
        }
    }
}

impl OpinionAdversary for InvertedOpinions {
    fn report(&self, _sender: usize, _receiver: usize, out: &mut [f64]) {
        for (o, role) in out.iter_mut().zip(&self.roles) {
            *o = match role {
                Role::Legitimate => 0.0,
                Role::Malicious => 1.0,
            };
        }
    }
}

/// Aggregate trust values and opinions of every legitimate agent.
///
/// `beta[i]` is aligned with `g.in_neighbors(i)`. Rows of malicious agents
/// are kept (and ignored) so indices stay global.
#[derive(Clone, Debug, PartialEq)]
pub struct TrustState {
    n: usize,
    beta: Vec<Vec<f64>>,
    opinions: Vec<f64>,
}

impl TrustState {
    /// β = 0 everywhere except self-trust 1; opinions start at 1 for in-neighbors
    /// and 1/2 for everyone else.
    pub fn new(g: &DirectedGraph) -> Self {
        let n = g.n();
        let beta = (0..n)
            .map(|i| {
                g.in_neighbors(i)
                    .iter()
                    .map(|&j| if j == i { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut opinions = vec![TRUST_THRESHOLD; n * n];
        for i in 0..n {
            for &j in g.in_neighbors(i) {
                opinions[i * n + j] = 1.0;
            }
        }
        Self { n, beta, opinions }
    }

    pub fn beta(&self, g: &DirectedGraph, i: usize, j: usize) -> Option<f64> {
        let pos = g.in_neighbors(i).binary_search(&j).ok()?;
        Some(self.beta[i][pos])
    }

    pub fn opinion(&self, i: usize, q: usize) -> f64 {
        self.opinions[i * self.n + q]
    }

    pub fn opinion_row(&self, i: usize) -> &[f64] {
        &self.opinions[i * self.n..(i + 1) * self.n]
    }

    pub fn trusts(&self, i: usize, q: usize) -> bool {
        self.opinion(i, q) >= TRUST_THRESHOLD
    }

    /// Adds `α − 1/2` to β for each observation. Self-observations are ignored.
    pub fn update_aggregates(&mut self, g: &DirectedGraph, observations: &[Observation]) -> Result<()> {
        for o in observations {
            if o.observer == o.sender {
                continue;
            }
            let pos = g
                .in_neighbors(o.observer)
                .binary_search(&o.sender)
                .map_err(|_| Error::NotAnEdge {
                    observer: o.observer,
                    sender: o.sender,
                })?;
            self.beta[o.observer][pos] += o.alpha - 0.5;
        }
        Ok(())
    }

    pub fn with_observations(&self, g: &DirectedGraph, observations: &[Observation]) -> Result<Self> {
        let mut next = self.clone();
        next.update_aggregates(g, observations)?;
        Ok(next)
    }

    /// One round of opinion exchange. Legitimate in-neighbors send their
    /// previous opinion rows; malicious ones send whatever `adversary`
    /// reports, clamped to [0, 1].
    pub fn update_opinions(&mut self, g: &DirectedGraph, adversary: &dyn OpinionAdversary) {
        let n = self.n;
        let mut next = self.opinions.clone();
        let mut received = vec![0.0; n];
        let mut sum = vec![0.0; n];
        for &i in g.legitimate() {
            let row = &mut next[i * n..(i + 1) * n];
            let nbrs = g.in_neighbors(i);
            for (pos, &j) in nbrs.iter().enumerate() {
                row[j] = if self.beta[i][pos] >= 0.0 { 1.0 } else { 0.0 };
            }
            sum.iter_mut().for_each(|s| *s = 0.0);
            let mut trusted = 0usize;
            for &j in nbrs {
                if row[j] < TRUST_THRESHOLD {
                    continue;
                }
                trusted += 1;
                let vector: &[f64] = if g.is_legitimate(j) {
                    &self.opinions[j * n..(j + 1) * n]
                } else {
                    adversary.report(j, i, &mut received);
                    for v in received.iter_mut() {
                        if !(0.0..=1.0).contains(v) {
                            log::debug!("clamping opinion {v} sent by {j} to {i}");
                            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                        }
                    }
                    &received
                };
                for (s, v) in sum.iter_mut().zip(vector) {
                    *s += v;
                }
            }
            let mut k = 0;
            for q in 0..n {
                if k < nbrs.len() && nbrs[k] == q {
                    k += 1;
                    continue;
                }
                row[q] = sum[q] / trusted as f64;
            }
        }
        self.opinions = next;
    }

    pub fn with_opinions(&self, g: &DirectedGraph, adversary: &dyn OpinionAdversary) -> Self {
        let mut next = self.clone();
        next.update_opinions(g, adversary);
        next
    }

    /// Currently trusted in- and out-neighbors of `i` (both contain `i`).
    pub fn trusted_neighborhoods(&self, g: &DirectedGraph, i: usize) -> (Vec<usize>, Vec<usize>) {
        let pick = |nbrs: &[usize]| nbrs.iter().copied().filter(|&j| self.trusts(i, j)).collect();
        (pick(g.in_neighbors(i)), pick(g.out_neighbors(i)))
    }

    /// Every legitimate agent classifies every agent correctly.
    pub fn classification_correct(&self, g: &DirectedGraph) -> bool {
        g.legitimate()
            .iter()
            .all(|&i| (0..self.n).all(|q| self.trusts(i, q) == g.is_legitimate(q)))
    }
}

/// Independent observation streams, one per (observer, sender) edge with a
/// legitimate observer.
pub struct ObservationStreams {
    streams: Vec<(usize, usize, ChaCha8Rng)>,
}

impl ObservationStreams {
    pub fn new(g: &DirectedGraph, seed: u64) -> Self {
        let mut streams = Vec::new();
        for &i in g.legitimate() {
            for &j in g.in_neighbors(i) {
                if j == i {
                    continue;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((i as u64) << 32) | j as u64);
                streams.push((i, j, rng));
            }
        }
        Self { streams }
    }

    pub fn sample_round(&mut self, g: &DirectedGraph, params: &TrustModelParams, k: usize) -> Vec<Observation> {
        self.streams
            .iter_mut()
            .map(|(i, j, rng)| Observation {
                k,
                observer: *i,
                sender: *j,
                alpha: sample_observation(params, g.role(*j), rng),
            })
            .collect()
    }
}

/// Trust learning alone, with the same round order as a full run: opinions
/// are refreshed, classification is checked, then the round is observed.
/// Returns the first of `rounds` rounds from which classification stays
/// correct, or `None` if the last round is still wrong.
pub fn learning_time(
    g: &DirectedGraph,
    params: &TrustModelParams,
    adversary: &dyn OpinionAdversary,
    seed: u64,
    rounds: usize,
) -> Result<Option<usize>> {
    let mut state = TrustState::new(g);
    let mut streams = ObservationStreams::new(g, seed);
    let mut last_wrong = None;
    for t in 0..rounds {
        state.update_opinions(g, adversary);
        if !state.classification_correct(g) {
            last_wrong = Some(t);
        }
        state.update_aggregates(g, &streams.sample_round(g, params, t))?;
    }
    Ok(match last_wrong {
        Some(t) if t + 1 == rounds => None,
        Some(t) => Some(t + 1),
        None => Some(0),
    })
}

/// Observation log in CSV form (`k,i,j,alpha`).
#[derive(Clone, Debug, Default)]
pub struct ObservationLog {
    entries: Vec<Observation>,
}

impl ObservationLog {
    pub fn extend(&mut self, obs: &[Observation]) {
        self.entries.extend_from_slice(obs);
    }

    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,i,j,alpha\n");
        for o in &self.entries {
            writeln!(out, "{},{},{},{}", o.k, o.observer, o.sender, o.alpha).unwrap();
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "k,i,j,alpha")) => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "expected header k,i,j,alpha".into(),
                })
            }
        }
        let mut entries = Vec::new();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse { line: idx + 1, message };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {}", f.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| bad(e.to_string()));
            entries.push(Observation {
                k: int(f[0])?,
                observer: int(f[1])?,
                sender: int(f[2])?,
                alpha: f[3].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            });
        }
        Ok(Self { entries })
    }

    /// Rebuilds the aggregate trust values from scratch.
    pub fn replay(&self, g: &DirectedGraph) -> Result<TrustState> {
        let mut state = TrustState::new(g);
        state.update_aggregates(g, &self.entries)?;
        Ok(state)
    }
}

/// Graph constants entering the learning-time bounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LearningBounds {
    /// Σ over legitimate i of legitimate in-neighbors (self included).
    pub n_l_edges: usize,
    /// Σ over legitimate i of malicious in-neighbors.
    pub n_m_edges: usize,
    pub d_max: usize,
    pub diameter: usize,
    pub h: f64,
    pub delta: f64,
}

impl LearningBounds {
    /// Uses the diameter of the whole graph. When some agent is unreachable
    /// (a malicious agent nobody sends to), the longest finite shortest path
    /// is used instead.
    pub fn from_graph(g: &DirectedGraph) -> Result<Self> {
        let mut n_l = 0;
        let mut n_m = 0;
        let mut d_max = 0;
        for &i in g.legitimate() {
            let nbrs = g.in_neighbors(i);
            let legit = nbrs.iter().filter(|&&j| g.is_legitimate(j)).count();
            n_l += legit;
            n_m += nbrs.len() - legit;
            d_max = d_max.max(nbrs.len());
        }
        let diameter = match g.diameter() {
            Ok(d) => d,
            Err(Error::NotStronglyConnected) => finite_diameter(g),
            Err(e) => return Err(e),
        };
        let (h, delta) = learning_delay(d_max, diameter)?;
        Ok(Self {
            n_l_edges: n_l,
            n_m_edges: n_m,
            d_max,
            diameter,
            h,
            delta,
        })
    }

    pub fn p_c(&self, k: f64, params: &TrustModelParams) -> f64 {
        let (el, em) = (params.e_l(), params.e_m());
        let second = match params.pc_coefficient() {
            PcCoefficient::NL => self.n_l_edges,
            PcCoefficient::NM => self.n_m_edges,
        } as f64;
        self.n_l_edges as f64 * (-2.0 * k * el * el).exp() + second * (-2.0 * k * em * em).exp()
    }

    pub fn p_e(&self, k: f64, params: &TrustModelParams) -> f64 {
        let (el2, em2) = (params.e_l().powi(2), params.e_m().powi(2));
        self.n_l_edges as f64 * (-2.0 * k * el2).exp() / -(-2.0 * el2).exp_m1()
            + self.n_m_edges as f64 * (-2.0 * k * em2).exp() / -(-2.0 * em2).exp_m1()
    }

    /// `min{p_e(k − Δ), 1}`: bound on `Pr(T_max ≥ k)`.
    pub fn tail(&self, k: f64, params: &TrustModelParams) -> f64 {
        self.p_e(k - self.delta, params).min(1.0)
    }

    /// Compact mode: tail of the nominal-behavior time for `S_k` of radius θk.
    pub fn t_nom_tail(&self, k: f64, theta: f64, n_legit: usize, g_bound: f64, params: &TrustModelParams) -> Result<f64> {
        let c = t_nom_scale(theta, n_legit, g_bound)?;
        Ok(self.p_e(c * k - self.delta, params).min(1.0))
    }

    /// Unbounded mode: `min{p_e(k + 1 − Δ_T), 1}`.
    pub fn t_nom_tail_exp(&self, k: f64, delta_t: f64, params: &TrustModelParams) -> f64 {
        self.p_e(k + 1.0 - delta_t, params).min(1.0)
    }

    /// `Δ_T = Δ + ln(A)/(θ2 − θ1)` with
    /// `A = 2 n_L (L + max‖∇f_i(0)‖)² / (e^{θ1} − 1)`.
    pub fn delta_t(&self, n_legit: usize, lip: f64, grad0_max: f64, theta1: f64, theta2: f64) -> Result<f64> {
        if !(theta1 > 0.0 && theta2 > theta1) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < theta1 < theta2, got theta1 = {theta1}, theta2 = {theta2}"
            )));
        }
        let a = 2.0 * n_legit as f64 * (lip + grad0_max).powi(2) / theta1.exp_m1();
        Ok(self.delta + a.ln() / (theta2 - theta1))
    }
}

/// `(θ − n_L G)/(n_L(θ − G))`, the rate at which trust time maps into
/// nominal time.
pub fn t_nom_scale(theta: f64, n_legit: usize, g_bound: f64) -> Result<f64> {
    let nl = n_legit as f64;
    if !(theta > nl * g_bound) {
        return Err(Error::InvalidParameter(format!(
            "theta = {theta} must exceed n_L * G = {}",
            nl * g_bound
        )));
    }
    Ok((theta - nl * g_bound) / (nl * (theta - g_bound)))
}

/// `h = 1/log2(1/(1 − d_max^{−D}))` and `Δ = h·D + 1`.
pub fn learning_delay(d_max: usize, diameter: usize) -> Result<(f64, f64)> {
    if d_max == 0 {
        return Err(Error::InvalidParameter("d_max must be positive".into()));
    }
    if diameter == 0 {
        return Ok((0.0, 1.0));
    }
    let q = (1.0 / d_max as f64).powi(diameter as i32);
    if q >= 1.0 {
        // Every legitimate agent hears only itself; nothing to learn.
        return Ok((0.0, 1.0));
    }
    let h = -1.0 / (-q).ln_1p() * std::f64::consts::LN_2;
    Ok((h, h * diameter as f64 + 1.0))
}

fn finite_diameter(g: &DirectedGraph) -> usize {
    let n = g.n();
    let mut best = 0;
    for s in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in g.out_neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    best = best.max(dist[v]);
                    queue.push_back(v);
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(roles: &str, edges: &[(usize, usize)]) -> DirectedGraph {
        let roles = roles
            .chars()
            .map(|c| if c == 'L' { Role::Legitimate } else { Role::Malicious })
            .collect();
        DirectedGraph::new(roles, edges.iter().copied()).unwrap()
    }

    fn obs(k: usize, i: usize, j: usize, alpha: f64) -> Observation {
        Observation {
            k,
            observer: i,
            sender: j,
            alpha,
        }
    }

    struct Fixed(Vec<f64>);

    impl OpinionAdversary for Fixed {
        fn report(&self, _: usize, _: usize, out: &mut [f64]) {
            out.copy_from_slice(&self.0);
        }
    }

    #[test]
    fn means_of_default_distributions() {
        let p = TrustModelParams::standard();
        assert!((p.e_l() - 0.05).abs() < 1e-15);
        assert!((p.e_m() + 0.05).abs() < 1e-15);
    }

    #[test]
    fn point_mass_at_half_is_rejected() {
        let half = TrustDistribution::PointMass { value: 0.5 };
        let low = TrustDistribution::PointMass { value: 0.2 };
        assert!(TrustModelParams::new(half, low).is_err());
        assert!(TrustModelParams::new(TrustDistribution::PointMass { value: 0.8 }, half).is_err());
        let out_of_range = TrustDistribution::Uniform { lo: 0.5, hi: 1.2 };
        assert!(TrustModelParams::new(out_of_range, low).is_err());
    }

    #[test]
    fn samples_stay_in_support() {
        let p = TrustModelParams::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let a = sample_observation(&p, Role::Legitimate, &mut rng);
            assert!((0.35..=0.75).contains(&a));
            let b = sample_observation(&p, Role::Malicious, &mut rng);
            assert!((0.25..=0.65).contains(&b));
        }
    }

    #[test]
    fn aggregate_arithmetic() {
        let g = graph("LL", &[(0, 1), (1, 0)]);
        let mut s = TrustState::new(&g);
        for (k, a) in [0.6, 0.4, 0.7].into_iter().enumerate() {
            s.update_aggregates(&g, &[obs(k, 1, 0, a)]).unwrap();
        }
        assert!((s.beta(&g, 1, 0).unwrap() - 0.2).abs() < 1e-15);
        let before = s.clone();
        s.update_aggregates(&g, &[]).unwrap();
        assert_eq!(s, before);
        let mut t = TrustState::new(&g);
        for k in 0..50 {
            t.update_aggregates(&g, &[obs(k, 0, 1, 0.5)]).unwrap();
        }
        assert_eq!(t.beta(&g, 0, 1), Some(0.0));
        assert_eq!(t.beta(&g, 0, 0), Some(1.0));
    }

    #[test]
    fn observation_on_non_edge_fails() {
        let g = graph("LLL", &[(0, 1), (1, 2), (2, 0)]);
        let mut s = TrustState::new(&g);
        let err = s.update_aggregates(&g, &[obs(0, 0, 1, 0.7)]).unwrap_err();
        assert!(matches!(err, Error::NotAnEdge { observer: 0, sender: 1 }));
    }

    #[test]
    fn fresh_state_trusts_neighbors() {
        let g = graph("LLM", &[(0, 1), (1, 0), (2, 0)]);
        let s = TrustState::new(&g);
        assert_eq!(s.opinion(0, 2), 1.0);
        let (nin, nout) = s.trusted_neighborhoods(&g, 0);
        assert_eq!(nin, vec![0, 1, 2]);
        assert_eq!(nout, vec![0, 1]);
    }

    #[test]
    fn negative_beta_excludes_sender() {
        let g = graph("LLM", &[(0, 1), (1, 0), (2, 0), (0, 2)]);
        let mut s = TrustState::new(&g);
        s.update_aggregates(&g, &[obs(0, 0, 2, 0.3)]).unwrap();
        s.update_opinions(&g, &InvertedOpinions::new(&g));
        let (nin, nout) = s.trusted_neighborhoods(&g, 0);
        assert_eq!(nin, vec![0, 1]);
        assert_eq!(nout, vec![0, 1]);
    }

    #[test]
    fn non_neighbor_opinions_average_trusted_reports() {
        // Agent 0 hears from 1 (legit) and 2 (malicious); agent 3 is not an
        // in-neighbor of 0.
        let g = graph("LLML", &[(1, 0), (2, 0), (3, 1), (1, 3), (0, 1)]);
        let mut s = TrustState::new(&g);
        // Agent 0 stops trusting 1, leaving {0, 2}.
        s.update_aggregates(&g, &[obs(0, 0, 1, 0.1)]).unwrap();
        s.opinions[3] = 0.2;
        s.update_opinions(&g, &Fixed(vec![0.0, 0.0, 0.0, 0.6]));
        // Trusted in 0: {0, 2}. Reports about 3: own previous 0.2, adversary 0.6.
        assert!((s.opinion(0, 3) - 0.4).abs() < 1e-15);
        assert!(!s.trusts(0, 3));

        let g1 = graph("LLL", &[(1, 0), (2, 1), (0, 2)]);
        let mut s1 = TrustState::new(&g1);
        s1.update_aggregates(&g1, &[obs(0, 0, 1, 0.9)]).unwrap();
        // Only self and 1 are trusted in-neighbors of 0; 1 believes 2 fully.
        s1.opinions[2] = 0.8;
        s1.opinions[5] = 0.8;
        s1.update_opinions(&g1, &Fixed(vec![0.0; 3]));
        assert!((s1.opinion(0, 2) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adversary_reports_are_clamped() {
        let g = graph("LML", &[(1, 0), (2, 1), (0, 2), (2, 0)]);
        let mut s = TrustState::new(&g);
        s.update_aggregates(&g, &[obs(0, 0, 2, 0.1)]).unwrap();
        s.update_opinions(&g, &Fixed(vec![7.0, -3.0, 5.0]));
        // Agent 0 trusts itself and 1; no opinion leaves [0, 1].
        for q in 0..3 {
            assert!((0.0..=1.0).contains(&s.opinion(0, q)));
        }
    }

    #[test]
    fn learning_delay_example() {
        let (h, delta) = learning_delay(2, 2).unwrap();
        let oracle_h = 1.0 / (4.0f64 / 3.0).log2();
        assert!((h - oracle_h).abs() < 1e-13);
        assert!((h - 2.4094208396532095).abs() < 1e-12, "{h}");
        assert!((delta - 5.818841679306419).abs() < 1e-12, "{delta}");
    }

    #[test]
    fn p_e_matches_direct_evaluation() {
        let b = LearningBounds {
            n_l_edges: 4,
            n_m_edges: 2,
            d_max: 2,
            diameter: 2,
            h: 0.0,
            delta: 1.0,
        };
        let p = TrustModelParams::new(
            TrustDistribution::Uniform { lo: 0.45, hi: 0.65 },
            TrustDistribution::Uniform { lo: 0.35, hi: 0.55 },
        )
        .unwrap();
        let got = b.p_e(2000.0, &p);
        // Both roles have |E| = 0.05 up to rounding; evaluate the closed form
        // with the same E values using the naive 1 − e^{−x}.
        let el2 = p.e_l().powi(2);
        let em2 = p.e_m().powi(2);
        let naive = 4.0 * (-4000.0 * el2).exp() / (1.0 - (-2.0 * el2).exp())
            + 2.0 * (-4000.0 * em2).exp() / (1.0 - (-2.0 * em2).exp());
        assert!((got - naive).abs() / naive < 1e-12);
        let literal = 6.0 * (-10.0f64).exp() / (1.0 - (-0.005f64).exp());
        assert!((got - literal).abs() / literal < 1e-9);
    }

    #[test]
    fn p_c_coefficient_switch() {
        let b = LearningBounds {
            n_l_edges: 4,
            n_m_edges: 2,
            d_max: 2,
            diameter: 2,
            h: 0.0,
            delta: 1.0,
        };
        let p = TrustModelParams::standard();
        assert!((b.p_c(0.0, &p) - 8.0).abs() < 1e-12);
        let q = p.with_pc_coefficient(PcCoefficient::NM);
        assert!((b.p_c(0.0, &q) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn tail_saturates_before_delta() {
        let g = graph("LLL", &[(0, 1), (1, 2), (2, 0)]);
        let b = LearningBounds::from_graph(&g).unwrap();
        let p = TrustModelParams::standard();
        for k in 0..=(b.delta.floor() as usize) {
            assert_eq!(b.tail(k as f64, &p), 1.0);
        }
    }

    #[test]
    fn t_nom_scaling_and_delta_t() {
        assert!((t_nom_scale(8.0, 4, 1.0).unwrap() - 1.0 / 7.0).abs() < 1e-15);
        assert!(t_nom_scale(4.0, 4, 1.0).is_err());
        let b = LearningBounds {
            n_l_edges: 4,
            n_m_edges: 0,
            d_max: 2,
            diameter: 2,
            h: 0.0,
            delta: 3.0,
        };
        let p = TrustModelParams::standard();
        assert_eq!(b.t_nom_tail(1.0, 8.0, 4, 1.0, &p).unwrap(), 1.0);
        let dt = b.delta_t(4, 1.0, 0.0, 0.01, 0.02).unwrap();
        let a = 8.0 / (0.01f64.exp() - 1.0);
        assert!((dt - (3.0 + 100.0 * a.ln())).abs() < 1e-9);
        assert!(b.delta_t(4, 1.0, 0.0, 0.02, 0.02).is_err());
    }

    #[test]
    fn graph_counts() {
        // 0 <-> 1 legit, 2 malicious sending to 0 and 1.
        let g = graph("LLM", &[(0, 1), (1, 0), (2, 0), (2, 1)]);
        let b = LearningBounds::from_graph(&g).unwrap();
        assert_eq!(b.n_l_edges, 4);
        assert_eq!(b.n_m_edges, 2);
        assert_eq!(b.d_max, 3);
        assert_eq!(b.diameter, 1);
    }

    #[test]
    fn log_round_trip_rebuilds_beta_exactly() {
        let g = graph("LLM", &[(0, 1), (1, 0), (2, 0), (2, 1), (0, 2)]);
        let p = TrustModelParams::standard();
        let mut streams = ObservationStreams::new(&g, 99);
        let mut state = TrustState::new(&g);
        let mut log = ObservationLog::default();
        for k in 0..200 {
            let round = streams.sample_round(&g, &p, k);
            state.update_aggregates(&g, &round).unwrap();
            log.extend(&round);
        }
        let parsed = ObservationLog::parse_csv(&log.to_csv()).unwrap();
        let rebuilt = parsed.replay(&g).unwrap();
        for &i in g.legitimate() {
            for &j in g.in_neighbors(i) {
                assert_eq!(
                    rebuilt.beta(&g, i, j).unwrap().to_bits(),
                    state.beta(&g, i, j).unwrap().to_bits()
                );
            }
        }
    }

    #[test]
    fn streams_are_per_pair() {
        let g = graph("LLL", &[(0, 1), (1, 0), (2, 0), (0, 2)]);
        let small = graph("LL", &[(0, 1), (1, 0)]);
        let p = TrustModelParams::standard();
        let a = ObservationStreams::new(&g, 5).sample_round(&g, &p, 0);
        let b = ObservationStreams::new(&small, 5).sample_round(&small, &p, 0);
        let pick = |v: &[Observation], i, j| v.iter().find(|o| o.observer == i && o.sender == j).unwrap().alpha;
        assert_eq!(pick(&a, 0, 1), pick(&b, 0, 1));
        assert_eq!(pick(&a, 1, 0), pick(&b, 1, 0));
    }

    #[test]
    fn learning_eventually_classifies_everyone() {
        use crate::graph::{generate_topology, TopologyKind, TopologySpec};
        let spec = TopologySpec {
            kind: TopologyKind::CyclePlusRandom,
            edge_prob: 0.2,
            attach_prob: 0.5,
            malicious_contacts: None,
            undirected: true,
        };
        let p = TrustModelParams::standard();
        for seed in 0..5 {
            let g = generate_topology(&spec, 6, 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = LearningBounds::from_graph(&g).unwrap();
            let horizon = (20.0 * b.delta / p.e_l().powi(2)) as usize;
            let adv = InvertedOpinions::new(&g);
            let mut streams = ObservationStreams::new(&g, seed);
            let mut state = TrustState::new(&g);
            let mut last_wrong = 0;
            for k in 0..horizon {
                state.update_aggregates(&g, &streams.sample_round(&g, &p, k)).unwrap();
                state.update_opinions(&g, &adv);
                if !state.classification_correct(&g) {
                    last_wrong = k + 1;
                }
            }
            assert!(last_wrong < horizon / 2, "seed {seed}: still wrong at {last_wrong}");
        }
    }

    #[test]
    fn learning_time_edge_cases() {
        let g = graph("LLM", &[(0, 1), (1, 0), (2, 0), (0, 2)]);
        let p = TrustModelParams::standard();
        let adv = InvertedOpinions::new(&g);
        // Everyone starts trusted, so round 0 is always wrong.
        assert_eq!(learning_time(&g, &p, &adv, 1, 1).unwrap(), None);
        let t = learning_time(&g, &p, &adv, 1, 2000).unwrap().unwrap();
        assert!(t >= 1);
        assert_eq!(learning_time(&g, &p, &adv, 1, t + 5).unwrap(), Some(t));
        let honest = graph("LL", &[(0, 1), (1, 0)]);
        assert!(learning_time(&honest, &p, &InvertedOpinions::new(&honest), 1, 2000).unwrap().is_some());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn p_e_and_p_c_strictly_decrease(k in 0.1f64..5000.0, dk in 0.5f64..100.0) {
                let b = LearningBounds { n_l_edges: 10, n_m_edges: 7, d_max: 4, diameter: 3, h: 1.0, delta: 4.0 };
                let p = TrustModelParams::standard();
                prop_assert!(b.p_e(k + dk, &p) < b.p_e(k, &p));
                prop_assert!(b.p_c(k + dk, &p) < b.p_c(k, &p));
            }

            #[test]
            fn opinions_stay_in_unit_interval(seed in any::<u64>(), junk in proptest::collection::vec(-5.0f64..5.0, 4)) {
                let g = graph("LLLM", &[(0, 1), (1, 2), (2, 0), (3, 0), (3, 2), (0, 3)]);
                let p = TrustModelParams::standard();
                let mut streams = ObservationStreams::new(&g, seed);
                let mut state = TrustState::new(&g);
                for k in 0..30 {
                    state.update_aggregates(&g, &streams.sample_round(&g, &p, k)).unwrap();
                    state.update_opinions(&g, &Fixed(junk.clone()));
                    for &i in g.legitimate() {
                        prop_assert!(state.opinion_row(i).iter().all(|o| (0.0..=1.0).contains(o)));
                        prop_assert!(state.trusts(i, i));
                    }
                }
            }
        }
    }
}

//! Communication digraphs with a legitimate/malicious partition.
//!
//! An edge `(i, j)` means agent `i` sends to agent `j`. Every agent carries a
//! self-loop; constructors add them, so callers never have to.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Topology generation attempts before giving up.
pub const GENERATION_RETRIES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Legitimate,
    Malicious,
}

impl Role {
    fn symbol(self) -> char {
        match self {
            Role::Legitimate => 'L',
            Role::Malicious => 'M',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectedGraph {
    roles: Vec<Role>,
    in_nbrs: Vec<Vec<usize>>,
    out_nbrs: Vec<Vec<usize>>,
    legit: Vec<usize>,
    malicious: Vec<usize>,
    legit_pos: Vec<Option<usize>>,
}

impl DirectedGraph {
    /// Builds a graph from roles and directed edges. Self-loops are added for
    /// every agent; duplicate edges collapse.
    pub fn new(roles: Vec<Role>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let n = roles.len();
        let mut out: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for i in 0..n {
            out[i].insert(i);
        }
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({i}, {j}) references an agent outside 0..{n}"
                )));
            }
            out[i].insert(j);
        }
        let mut in_nbrs = vec![Vec::new(); n];
        for (i, targets) in out.iter().enumerate() {
            for &j in targets {
                in_nbrs[j].push(i);
            }
        }
        let out_nbrs: Vec<Vec<usize>> = out.into_iter().map(|s| s.into_iter().collect()).collect();
        let legit: Vec<usize> = (0..n).filter(|&i| roles[i] == Role::Legitimate).collect();
        let malicious: Vec<usize> = (0..n).filter(|&i| roles[i] == Role::Malicious).collect();
        let mut legit_pos = vec![None; n];
        for (p, &i) in legit.iter().enumerate() {
            legit_pos[i] = Some(p);
        }
        Ok(Self {
            roles,
            in_nbrs,
            out_nbrs,
            legit,
            malicious,
            legit_pos,
        })
    }

    pub fn n(&self) -> usize {
        self.roles.len()
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn role(&self, i: usize) -> Role {
        self.roles[i]
    }

    pub fn is_legitimate(&self, i: usize) -> bool {
        self.roles[i] == Role::Legitimate
    }

    /// Legitimate agents in increasing index order.
    pub fn legitimate(&self) -> &[usize] {
        &self.legit
    }

    pub fn malicious(&self) -> &[usize] {
        &self.malicious
    }

    pub fn n_legitimate(&self) -> usize {
        self.legit.len()
    }

    pub fn n_malicious(&self) -> usize {
        self.malicious.len()
    }

    /// Position of agent `i` in [`Self::legitimate`], if legitimate.
    pub fn legit_position(&self, i: usize) -> Option<usize> {
        self.legit_pos[i]
    }

    /// Agents that send to `i` (sorted, includes `i`).
    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_nbrs[i]
    }

    /// Agents that `i` sends to (sorted, includes `i`).
    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out_nbrs[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.out_nbrs[i].binary_search(&j).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out_nbrs
            .iter()
            .enumerate()
            .flat_map(|(i, outs)| outs.iter().map(move |&j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.out_nbrs.iter().map(Vec::len).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges().all(|(i, j)| self.has_edge(j, i))
    }

    /// The subgraph induced by the legitimate agents, reindexed `0..n_L` in
    /// increasing parent-index order.
    pub fn nominal_subgraph(&self) -> NominalSubgraph {
        let edges: Vec<(usize, usize)> = self
            .edges()
            .filter_map(|(i, j)| Some((self.legit_pos[i]?, self.legit_pos[j]?)))
            .collect();
        let graph = DirectedGraph::new(vec![Role::Legitimate; self.legit.len()], edges)
            .expect("reindexed edges are in range");
        NominalSubgraph {
            graph,
            to_parent: self.legit.clone(),
        }
    }

    pub fn is_strongly_connected(&self) -> bool {
        let n = self.n();
        if n == 0 {
            return true;
        }
        let forward = reachable(n, 0, |u| &self.out_nbrs[u]);
        let backward = reachable(n, 0, |u| &self.in_nbrs[u]);
        forward.iter().all(|&r| r) && backward.iter().all(|&r| r)
    }

    /// Longest shortest path over ordered pairs.
    pub fn diameter(&self) -> Result<usize> {
        let mut diameter = 0;
        for s in 0..self.n() {
            let (dist, _) = self.bfs_tree(s);
            for d in dist {
                diameter = diameter.max(d.ok_or(Error::NotStronglyConnected)?);
            }
        }
        Ok(diameter)
    }

    /// Maximum edge utility: one shortest path is fixed per ordered pair
    /// (BFS, lowest index first) and the result is the largest number of
    /// those paths sharing a single edge. Zero for a single agent.
    pub fn max_edge_utility(&self) -> Result<usize> {
        let n = self.n();
        let mut load = vec![0usize; n * n];
        for s in 0..n {
            let (dist, parent) = self.bfs_tree(s);
            for t in 0..n {
                if dist[t].is_none() {
                    return Err(Error::NotStronglyConnected);
                }
                let mut v = t;
                while v != s {
                    let u = parent[v].expect("reachable vertex has a parent");
                    load[u * n + v] += 1;
                    v = u;
                }
            }
        }
        Ok(load.into_iter().max().unwrap_or(0))
    }

    fn bfs_tree(&self, source: usize) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
        let n = self.n();
        let mut dist = vec![None; n];
        let mut parent = vec![None; n];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &self.out_nbrs[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    parent[v] = Some(u);
                    queue.push_back(v);
                }
            }
        }
        (dist, parent)
    }

    /// Serializes as `roles <L|M string>` followed by one `i j` line per
    /// non-self-loop edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let roles: String = self.roles.iter().map(|r| r.symbol()).collect();
        writeln!(out, "roles {roles}").unwrap();
        for (i, j) in self.edges().filter(|(i, j)| i != j) {
            writeln!(out, "{i} {j}").unwrap();
        }
        out
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut roles: Option<Vec<Role>> = None;
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let first = fields.next().unwrap();
            if first == "roles" {
                let spec = fields.next().ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: "roles line needs an L/M string".into(),
                })?;
                let parsed = spec
                    .chars()
                    .map(|c| match c {
                        'L' | 'l' => Ok(Role::Legitimate),
                        'M' | 'm' => Ok(Role::Malicious),
                        other => Err(Error::Parse {
                            line: line_no,
                            message: format!("unknown role symbol {other:?}"),
                        }),
                    })
                    .collect::<Result<Vec<_>>>()?;
                roles = Some(parsed);
                continue;
            }
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("bad agent index {s:?}: {e}"),
                })
            };
            let second = fields.next().ok_or_else(|| Error::Parse {
                line: line_no,
                message: "edge line needs two indices".into(),
            })?;
            if fields.next().is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "edge line has trailing fields".into(),
                });
            }
            edges.push((parse(first)?, parse(second)?));
        }
        let roles = roles.ok_or_else(|| Error::Parse {
            line: 0,
            message: "missing roles header".into(),
        })?;
        DirectedGraph::new(roles, edges)
    }
}

fn reachable<'a>(n: usize, start: usize, next: impl Fn(usize) -> &'a Vec<usize>) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(u) = stack.pop() {
        for &v in next(u) {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

/// The graph induced on legitimate agents, with the map back to parent ids.
#[derive(Clone, Debug)]
pub struct NominalSubgraph {
    graph: DirectedGraph,
    to_parent: Vec<usize>,
}

impl NominalSubgraph {
    pub fn graph(&self) -> &DirectedGraph {
        &self.graph
    }

    pub fn parent_id(&self, local: usize) -> usize {
        self.to_parent[local]
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }
}

impl std::ops::Deref for NominalSubgraph {
    type Target = DirectedGraph;

    fn deref(&self) -> &DirectedGraph {
        &self.graph
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    /// The legitimate subgraph is strongly connected.
    pub legit_strongly_connected: bool,
    /// Every malicious agent sends to at least one legitimate agent.
    pub malicious_observed: bool,
    pub self_loops: bool,
    pub unobserved_malicious: Vec<usize>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.legit_strongly_connected && self.malicious_observed && self.self_loops
    }

    /// Human-readable names of the failed checks.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !self.legit_strongly_connected {
            v.push("legitimate subgraph is not strongly connected".to_string());
        }
        if !self.malicious_observed {
            v.push(format!(
                "malicious agents {:?} have no legitimate observer",
                self.unobserved_malicious
            ));
        }
        if !self.self_loops {
            v.push("missing self-loops".to_string());
        }
        v
    }
}

pub fn validate_assumptions(g: &DirectedGraph) -> ValidationReport {
    let legit_strongly_connected = g.n_legitimate() > 0 && g.nominal_subgraph().is_strongly_connected();
    let unobserved_malicious: Vec<usize> = g
        .malicious()
        .iter()
        .copied()
        .filter(|&m| !g.out_neighbors(m).iter().any(|&j| g.is_legitimate(j)))
        .collect();
    ValidationReport {
        legit_strongly_connected,
        malicious_observed: unobserved_malicious.is_empty(),
        self_loops: (0..g.n()).all(|i| g.has_edge(i, i)),
        unobserved_malicious,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    /// A cycle over legitimate agents plus random extra edges.
    CyclePlusRandom,
    /// A near-square grid over legitimate agents with random diagonals.
    GridWithDiagonals,
    /// Independent random edges between legitimate agents.
    ErdosRenyiDirected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    /// Probability of each optional legitimate-legitimate edge.
    pub edge_prob: f64,
    /// Probability that a malicious agent links with a given legitimate agent.
    pub attach_prob: f64,
    /// When set, each malicious agent links with exactly this many
    /// legitimate agents instead of using `attach_prob`.
    pub malicious_contacts: Option<usize>,
    pub undirected: bool,
}

impl TopologySpec {
    fn validate(&self) -> Result<()> {
        for (name, p) in [("edge_prob", self.edge_prob), ("attach_prob", self.attach_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} = {p} is not in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Draws graphs until one satisfies [`validate_assumptions`]. Legitimate
/// agents are `0..n_legit`, malicious agents follow.
pub fn generate_topology<R: Rng + ?Sized>(
    spec: &TopologySpec,
    n_legit: usize,
    n_malicious: usize,
    rng: &mut R,
) -> Result<DirectedGraph> {
    spec.validate()?;
    if n_legit < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 legitimate agents, got {n_legit}"
        )));
    }
    if let Some(c) = spec.malicious_contacts {
        if c == 0 || c > n_legit {
            return Err(Error::InvalidParameter(format!(
                "malicious_contacts = {c} must be in 1..={n_legit}"
            )));
        }
    }
    let mut last = Vec::new();
    for _ in 0..GENERATION_RETRIES {
        let g = draw_topology(spec, n_legit, n_malicious, rng)?;
        let report = validate_assumptions(&g);
        if report.is_valid() {
            return Ok(g);
        }
        last = report.violations();
    }
    Err(Error::Assumption(format!(
        "no valid topology after {GENERATION_RETRIES} attempts: {}",
        last.join("; ")
    )))
}

fn draw_topology<R: Rng + ?Sized>(
    spec: &TopologySpec,
    n_legit: usize,
    n_malicious: usize,
    rng: &mut R,
) -> Result<DirectedGraph> {
    let mut edges = Vec::new();
    let link = |edges: &mut Vec<(usize, usize)>, a: usize, b: usize, symmetric: bool| {
        edges.push((a, b));
        if symmetric {
            edges.push((b, a));
        }
    };
    let undirected = spec.undirected;
    match spec.kind {
        TopologyKind::CyclePlusRandom => {
            for i in 0..n_legit {
                link(&mut edges, i, (i + 1) % n_legit, undirected);
            }
            random_legit_edges(&mut edges, n_legit, spec.edge_prob, undirected, rng);
        }
        TopologyKind::ErdosRenyiDirected => {
            random_legit_edges(&mut edges, n_legit, spec.edge_prob, undirected, rng);
        }
        TopologyKind::GridWithDiagonals => {
            let rows = (n_legit as f64).sqrt().ceil() as usize;
            let cols = n_legit.div_ceil(rows);
            let id = |r: usize, c: usize| {
                let k = r * cols + c;
                (k < n_legit).then_some(k)
            };
            for r in 0..rows {
                for c in 0..cols {
                    let Some(u) = id(r, c) else { continue };
                    for v in [id(r, c + 1).filter(|_| c + 1 < cols), id(r + 1, c)].into_iter().flatten() {
                        link(&mut edges, u, v, true);
                    }
                    let diagonals = [
                        id(r + 1, c + 1).filter(|_| c + 1 < cols),
                        c.checked_sub(1).and_then(|cl| id(r + 1, cl)),
                    ];
                    for v in diagonals.into_iter().flatten() {
                        if undirected {
                            if rng.random_bool(spec.edge_prob) {
                                link(&mut edges, u, v, true);
                            }
                        } else {
                            if rng.random_bool(spec.edge_prob) {
                                edges.push((u, v));
                            }
                            if rng.random_bool(spec.edge_prob) {
                                edges.push((v, u));
                            }
                        }
                    }
                }
            }
        }
    }
    let legit_ids: Vec<usize> = (0..n_legit).collect();
    for m in n_legit..n_legit + n_malicious {
        match spec.malicious_contacts {
            Some(count) => {
                for &l in legit_ids.choose_multiple(rng, count) {
                    link(&mut edges, m, l, undirected);
                }
            }
            None => {
                for l in 0..n_legit {
                    if undirected {
                        if rng.random_bool(spec.attach_prob) {
                            link(&mut edges, m, l, true);
                        }
                    } else {
                        if rng.random_bool(spec.attach_prob) {
                            edges.push((m, l));
                        }
                        if rng.random_bool(spec.attach_prob) {
                            edges.push((l, m));
                        }
                    }
                }
            }
        }
    }
    let mut roles = vec![Role::Legitimate; n_legit];
    roles.extend(std::iter::repeat_n(Role::Malicious, n_malicious));
    DirectedGraph::new(roles, edges)
}

fn random_legit_edges<R: Rng + ?Sized>(
    edges: &mut Vec<(usize, usize)>,
    n_legit: usize,
    p: f64,
    undirected: bool,
    rng: &mut R,
) {
    for i in 0..n_legit {
        for j in 0..n_legit {
            if i == j || (undirected && j < i) {
                continue;
            }
            if rng.random_bool(p) {
                edges.push((i, j));
                if undirected {
                    edges.push((j, i));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn legit_only(n: usize, edges: &[(usize, usize)]) -> DirectedGraph {
        DirectedGraph::new(vec![Role::Legitimate; n], edges.iter().copied()).unwrap()
    }

    fn directed_cycle(n: usize) -> DirectedGraph {
        legit_only(n, &(0..n).map(|i| (i, (i + 1) % n)).collect::<Vec<_>>())
    }

    fn complete(n: usize) -> DirectedGraph {
        let edges: Vec<_> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        legit_only(n, &edges)
    }

    fn king_grid_3x3() -> DirectedGraph {
        let mut edges = Vec::new();
        for a in 0..9usize {
            for b in 0..9usize {
                let (ra, ca, rb, cb) = (a / 3, a % 3, b / 3, b % 3);
                if a != b && ra.abs_diff(rb) <= 1 && ca.abs_diff(cb) <= 1 {
                    edges.push((a, b));
                }
            }
        }
        legit_only(9, &edges)
    }

    // Independent oracle: enumerate all simple paths and keep the
    // lexicographically smallest shortest one per ordered pair.
    fn brute_force_edge_utility(g: &DirectedGraph) -> usize {
        let n = g.n();
        let mut load = vec![0usize; n * n];
        for s in 0..n {
            for t in 0..n {
                if s == t {
                    continue;
                }
                let mut best: Option<Vec<usize>> = None;
                let mut stack = vec![vec![s]];
                while let Some(path) = stack.pop() {
                    let last = *path.last().unwrap();
                    if last == t {
                        let better = match &best {
                            None => true,
                            Some(b) => path.len() < b.len() || (path.len() == b.len() && path < *b),
                        };
                        if better {
                            best = Some(path);
                        }
                        continue;
                    }
                    for &v in g.out_neighbors(last) {
                        if !path.contains(&v) {
                            let mut p = path.clone();
                            p.push(v);
                            stack.push(p);
                        }
                    }
                }
                let best = best.unwrap();
                for w in best.windows(2) {
                    load[w[0] * n + w[1]] += 1;
                }
            }
        }
        load.into_iter().max().unwrap()
    }

    fn brute_force_diameter(g: &DirectedGraph) -> usize {
        // Floyd-Warshall.
        let n = g.n();
        let inf = usize::MAX / 4;
        let mut d = vec![inf; n * n];
        for (i, j) in g.edges() {
            d[i * n + j] = if i == j { 0 } else { 1 };
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    d[i * n + j] = d[i * n + j].min(d[i * n + k] + d[k * n + j]);
                }
            }
        }
        d.into_iter().max().unwrap()
    }

    #[test]
    fn self_loops_are_added() {
        let g = legit_only(3, &[(0, 1)]);
        for i in 0..3 {
            assert!(g.has_edge(i, i));
        }
        assert_eq!(g.in_neighbors(1), &[0, 1]);
        assert_eq!(g.out_neighbors(0), &[0, 1]);
    }

    #[test]
    fn in_and_out_views_are_dual() {
        let g = legit_only(4, &[(0, 1), (1, 2), (2, 0), (3, 1)]);
        for (i, j) in g.edges() {
            assert!(g.in_neighbors(j).contains(&i));
        }
        let ins: usize = (0..4).map(|i| g.in_neighbors(i).len()).sum();
        assert_eq!(ins, g.edge_count());
    }

    #[test]
    fn diameter_examples() {
        assert_eq!(directed_cycle(4).diameter().unwrap(), 3);
        assert_eq!(complete(5).diameter().unwrap(), 1);
        let grid = king_grid_3x3();
        assert_eq!(grid.diameter().unwrap(), brute_force_diameter(&grid));
        assert_eq!(grid.diameter().unwrap(), 2);
    }

    #[test]
    fn edge_utility_examples() {
        // 12 ordered pairs with path lengths 1, 2, 3 from each source: 24
        // edge traversals spread evenly over 4 edges.
        let cycle = directed_cycle(4);
        assert_eq!(brute_force_edge_utility(&cycle), 6);
        assert_eq!(cycle.max_edge_utility().unwrap(), 6);
        assert_eq!(complete(3).max_edge_utility().unwrap(), 1);
        assert_eq!(legit_only(2, &[(0, 1), (1, 0)]).max_edge_utility().unwrap(), 1);
        let grid = king_grid_3x3();
        assert_eq!(grid.max_edge_utility().unwrap(), brute_force_edge_utility(&grid));
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let g = legit_only(4, &[(0, 1), (1, 0), (2, 3), (3, 2)]);
        assert!(matches!(g.diameter(), Err(Error::NotStronglyConnected)));
        assert!(matches!(g.max_edge_utility(), Err(Error::NotStronglyConnected)));
        assert!(!validate_assumptions(&g).legit_strongly_connected);
    }

    #[test]
    fn unobserved_malicious_agent_fails_validation() {
        let roles = vec![Role::Legitimate, Role::Legitimate, Role::Malicious];
        let g = DirectedGraph::new(roles, [(0, 1), (1, 0), (0, 2)]).unwrap();
        let report = validate_assumptions(&g);
        assert!(report.legit_strongly_connected);
        assert!(!report.malicious_observed);
        assert_eq!(report.unobserved_malicious, vec![2]);
    }

    #[test]
    fn smallest_cycle() {
        let spec = TopologySpec {
            kind: TopologyKind::CyclePlusRandom,
            edge_prob: 0.0,
            attach_prob: 0.0,
            malicious_contacts: None,
            undirected: true,
        };
        let g = generate_topology(&spec, 2, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let edges: BTreeSet<_> = g.edges().collect();
        assert_eq!(edges, BTreeSet::from([(0, 0), (0, 1), (1, 0), (1, 1)]));
    }

    #[test]
    fn large_cycle_generation_is_valid() {
        let spec = TopologySpec {
            kind: TopologyKind::CyclePlusRandom,
            edge_prob: 0.05,
            attach_prob: 0.7,
            malicious_contacts: None,
            undirected: true,
        };
        let g = generate_topology(&spec, 50, 100, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert!(validate_assumptions(&g).is_valid());
        assert!(g.is_symmetric());
        assert_eq!(g.n(), 150);
    }

    #[test]
    fn grid_with_single_contacts() {
        let spec = TopologySpec {
            kind: TopologyKind::GridWithDiagonals,
            edge_prob: 0.5,
            attach_prob: 0.0,
            malicious_contacts: Some(1),
            undirected: true,
        };
        let g = generate_topology(&spec, 9, 6, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(validate_assumptions(&g).is_valid());
        for &m in g.malicious() {
            let outs = g.out_neighbors(m).iter().filter(|&&j| g.is_legitimate(j)).count();
            let ins = g.in_neighbors(m).iter().filter(|&&j| g.is_legitimate(j)).count();
            assert_eq!((outs, ins), (1, 1));
        }
    }

    #[test]
    fn too_sparse_spec_exhausts_retries() {
        let spec = TopologySpec {
            kind: TopologyKind::ErdosRenyiDirected,
            edge_prob: 0.0,
            attach_prob: 0.0,
            malicious_contacts: None,
            undirected: false,
        };
        let err = generate_topology(&spec, 3, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(err.to_string().contains("strongly connected"), "{err}");
    }

    #[test]
    fn edge_list_round_trip() {
        let roles = vec![Role::Legitimate, Role::Malicious, Role::Legitimate];
        let g = DirectedGraph::new(roles, [(0, 2), (2, 0), (1, 0)]).unwrap();
        let text = g.to_edge_list();
        assert!(text.starts_with("roles LML\n"));
        assert_eq!(DirectedGraph::parse_edge_list(&text).unwrap(), g);
        assert!(DirectedGraph::parse_edge_list("0 1\n").is_err());
        assert!(DirectedGraph::parse_edge_list("roles LL\n0 x\n").is_err());
    }

    #[test]
    fn nominal_subgraph_keeps_only_legitimate_edges() {
        let roles = vec![Role::Legitimate, Role::Malicious, Role::Legitimate];
        let g = DirectedGraph::new(roles, [(0, 1), (1, 2), (2, 0), (0, 2)]).unwrap();
        let sub = g.nominal_subgraph();
        assert_eq!(sub.n(), 2);
        assert_eq!(sub.parent_id(1), 2);
        assert!(sub.has_edge(0, 1) && sub.has_edge(1, 0));
        assert_eq!(sub.edge_count(), 4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn forward_backward_oracle(g: &DirectedGraph) -> bool {
            let n = g.n();
            (0..n).all(|s| {
                let f = reachable(n, s, |u| &g.out_nbrs[u]);
                let b = reachable(n, s, |u| &g.in_nbrs[u]);
                f.iter().chain(b.iter()).all(|&x| x)
            })
        }

        proptest! {
            #[test]
            fn generated_graphs_satisfy_assumptions(
                seed in any::<u64>(),
                n_legit in 2usize..12,
                n_mal in 0usize..8,
                kind in prop_oneof![
                    Just(TopologyKind::CyclePlusRandom),
                    Just(TopologyKind::GridWithDiagonals),
                ],
                undirected in any::<bool>(),
                p in 0.0f64..0.6,
            ) {
                let spec = TopologySpec {
                    kind, edge_prob: p, attach_prob: 0.5, malicious_contacts: None, undirected,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g = generate_topology(&spec, n_legit, n_mal, &mut rng).unwrap();
                let sub = g.nominal_subgraph();
                prop_assert!(forward_backward_oracle(&sub));
                prop_assert!(sub.diameter().unwrap() < n_legit);
                prop_assert!(sub.max_edge_utility().unwrap() >= 1);
                if undirected {
                    prop_assert!(g.is_symmetric());
                }
            }
        }
    }
}

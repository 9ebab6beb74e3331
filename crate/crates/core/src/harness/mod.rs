//! Experiment orchestration: configs, seeding, replications and file output.
//!
//! Every per-run random stream comes from [`split_seed`], so run `r` draws
//! the same numbers no matter how many replications are requested.

pub mod config;
mod output;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{
    AttackSpec, ConstraintSpec, OutputSection, ProblemSection, RadiusSpec, RunSection, SetMode, SetsSection, SimConfig,
    StepValue, StepsSection, TopologySection, TrustSection,
};
pub use output::{aggregate_csv, quantile, runs_csv, write_atomic, AGGREGATE_HEADER, BOUNDS_HEADER, EVENTS_HEADER, RUNS_HEADER};

use crate::analysis::{
    geometric_rate_condition, CompactBound, ContractionParams, ErrorVector, MGain, UnboundedBound,
};
use crate::graph::{generate_topology, validate_assumptions, DirectedGraph, TopologySpec};
use crate::optim::{gradient_bound, GradientBound, SetSequence};
use crate::problems::{
    random_quadratic_problem, random_values, robot_grid, simulate_target, stack, tracking_problem,
    trajectory_csv, observations_csv, weighted_consensus_problem, Problem, TrackingData,
};
use crate::protocol::{run, Algorithm, AttackModel, RunResult, RunSpec, WeightMatrices};
use crate::trust::{t_nom_scale, LearningBounds, TrustModelParams};
use crate::{analysis, Error, Point, Result};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for purpose `tag` of run `index`: SplitMix64 folded over the master
/// seed, the tag bytes and the little-endian index.
pub fn split_seed(master: u64, index: u64, tag: &str) -> u64 {
    let mut h = splitmix64(master);
    for b in tag.bytes().chain(index.to_le_bytes()) {
        h = splitmix64(h ^ u64::from(b));
    }
    h
}

/// A configuration with its graph and graph-level constants resolved. The
/// topology is shared by all replications.
pub struct Experiment {
    pub config: SimConfig,
    pub graph: DirectedGraph,
    pub trust: TrustModelParams,
    pub contraction: ContractionParams,
    pub learning: LearningBounds,
}

/// One replication's problem, steps and sets.
pub struct Instance {
    pub run: usize,
    /// Seed of the trust observation streams; also the `seed` CSV column.
    pub seed: u64,
    pub problem: Problem,
    pub tracking: Option<TrackingData>,
    pub attack: AttackModel,
    pub eta: f64,
    pub lambda: f64,
    /// Both steps came from the certified rule.
    pub certified: bool,
    pub m: MGain,
    /// NaN when the estimate failed.
    pub rho: f64,
    pub g_bound: Option<GradientBound>,
    pub s_seq: SetSequence,
    pub x_seq: Option<SetSequence>,
    /// `θ` when `S_k` grows linearly.
    pub s_theta: Option<f64>,
}

pub struct RunOutcome {
    pub instance: Instance,
    pub result: RunResult,
    /// `T_max` mapped to nominal time when `S_k` grows linearly fast enough.
    pub t_nom_bound: Option<f64>,
}

impl Experiment {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let top = &config.topology;
        let graph = match &top.file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("topology.file {}: {e}", path.display())))?;
                DirectedGraph::parse_edge_list(&text)?
            }
            None => {
                let spec = TopologySpec {
                    kind: top.kind,
                    edge_prob: top.edge_prob,
                    attach_prob: top.attach_prob,
                    malicious_contacts: top.malicious_contacts,
                    undirected: top.undirected,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(split_seed(config.run.seed, 0, "topology"));
                generate_topology(&spec, top.n_legitimate, top.n_malicious, &mut rng)?
            }
        };
        let report = validate_assumptions(&graph);
        if !report.is_valid() {
            return Err(Error::Assumption(report.violations().join("; ")));
        }
        let trust = config.trust.params()?;
        let contraction = contraction_params(&graph)?;
        let learning = LearningBounds::from_graph(&graph)?;
        Ok(Self {
            config,
            graph,
            trust,
            contraction,
            learning,
        })
    }

    pub fn n_legit(&self) -> usize {
        self.graph.n_legitimate()
    }

    pub fn instance(&self, run_index: usize) -> Result<Instance> {
        let cfg = &self.config;
        let master = cfg.run.seed;
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(master, run_index as u64, "problem"));
        let n = self.n_legit();
        let (problem, tracking, decoy) = match &cfg.problem {
            ProblemSection::Consensus {
                dim,
                value_range: [lo, hi],
                constraint,
                weight,
            } => {
                let values = random_values(n, *dim, *lo, *hi, &mut rng);
                (weighted_consensus_problem(&values, *weight, constraint.build(*dim)?)?, None, None)
            }
            ProblemSection::RandomQuadratic { dim, mu, constraint } => {
                (random_quadratic_problem(n, *dim, *mu, constraint.build(*dim)?, &mut rng)?, None, None)
            }
            ProblemSection::Tracking { tracking, decoy_offset } => {
                let robots = robot_grid(n, tracking.robot_spacing);
                let data = simulate_target(tracking, &robots, &mut rng);
                let decoy: Vec<Point> = data
                    .truth
                    .iter()
                    .map(|s| {
                        let mut d = s.clone();
                        d[0] += decoy_offset[0];
                        d[1] += decoy_offset[1];
                        d
                    })
                    .collect();
                (tracking_problem(tracking, &data)?, Some(data), Some(stack(&decoy)))
            }
        };
        let dim = problem.dim();

        let g_bound = if problem.constraint.is_compact() {
            Some(gradient_bound(&problem.cost_refs(), &problem.constraint)?)
        } else {
            None
        };

        let (eta, lambda, certified) = self.resolve_steps(&problem)?;
        let m = self.contraction.build_m(eta, lambda, problem.mu, problem.lip);
        let rho = m.spectral_radius().unwrap_or_else(|e| {
            log::warn!("run {run_index}: spectral radius unavailable: {e}");
            f64::NAN
        });

        let (s_seq, x_seq, s_theta) = self.resolve_sets(g_bound)?;

        let attack = match &cfg.attack {
            AttackSpec::None => AttackModel::GradientPoison(Point::zeros(dim)),
            AttackSpec::SignedExtreme { magnitude } => AttackModel::SignedExtreme { magnitude: *magnitude },
            AttackSpec::Constant { value } => AttackModel::ExtremeConstant(sized(value, dim, "attack.value")?),
            AttackSpec::GradientPoison { value } => AttackModel::GradientPoison(sized(value, dim, "attack.value")?),
            AttackSpec::Decoy => AttackModel::ExtremeConstant(decoy.expect("validated: decoy needs tracking")),
        };

        Ok(Instance {
            run: run_index,
            seed: split_seed(master, run_index as u64, "trust"),
            problem,
            tracking,
            attack,
            eta,
            lambda,
            certified,
            m,
            rho,
            g_bound,
            s_seq,
            x_seq,
            s_theta,
        })
    }

    fn resolve_steps(&self, problem: &Problem) -> Result<(f64, f64, bool)> {
        let steps = &self.config.steps;
        let (mu, lip) = (problem.mu, problem.lip);
        Ok(match (steps.eta.value(), steps.lambda.value()) {
            (Some(eta), Some(lambda)) => (eta, lambda, false),
            (Some(eta), None) => (eta, self.contraction.certified_lambda(eta, mu, lip)?, false),
            (None, lambda) => {
                let (eta, auto_lambda) = self.contraction.auto_step_sizes(mu, lip)?;
                (eta, lambda.unwrap_or(auto_lambda), lambda.is_none())
            }
        })
    }

    fn resolve_sets(&self, g_bound: Option<GradientBound>) -> Result<(SetSequence, Option<SetSequence>, Option<f64>)> {
        let sets = &self.config.sets;
        match sets.mode {
            SetMode::Unbounded => {
                let (t1, t2) = (sets.theta1.unwrap_or(0.0), sets.theta2.unwrap_or(0.0));
                Ok((
                    SetSequence::Exponential { theta: t2 },
                    Some(SetSequence::Exponential { theta: t1 }),
                    None,
                ))
            }
            SetMode::Compact => {
                let s_seq = self.radius(&sets.s_radius, g_bound)?;
                let x_seq = sets.x_radius.as_ref().map(|r| self.radius(r, g_bound)).transpose()?;
                let theta = match s_seq {
                    SetSequence::Linear { theta } => Some(theta),
                    _ => None,
                };
                Ok((s_seq, x_seq, theta))
            }
        }
    }

    fn radius(&self, spec: &RadiusSpec, g_bound: Option<GradientBound>) -> Result<SetSequence> {
        Ok(match *spec {
            RadiusSpec::Linear { theta } => SetSequence::Linear { theta },
            RadiusSpec::LinearGradient { factor } => {
                let g = g_bound.ok_or_else(|| {
                    Error::Config("sets: linear-gradient radius needs a compact constraint set".into())
                })?;
                SetSequence::Linear {
                    theta: factor * self.n_legit() as f64 * g.value,
                }
            }
            RadiusSpec::Power { coef, exponent } => SetSequence::Power { coef, exponent },
            RadiusSpec::Exponential { theta } => SetSequence::Exponential { theta },
        })
    }

    pub fn run_spec<'a>(&'a self, inst: &'a Instance) -> RunSpec<'a> {
        let cfg = &self.config;
        RunSpec {
            graph: &self.graph,
            problem: &inst.problem,
            algorithm: cfg.run.algorithm,
            trust_mode: cfg.run.trust_mode,
            trust: self.trust.clone(),
            opinion_adversary: None,
            attack: inst.attack.clone(),
            s_seq: inst.s_seq.clone(),
            x_seq: inst.x_seq.clone(),
            eta: inst.eta,
            lambda: inst.lambda,
            iterations: cfg.run.iterations,
            trust_warmup: cfg.run.trust_warmup,
            seed: inst.seed,
            keep_observations: cfg.output.observations,
        }
    }

    pub fn run_one(&self, run_index: usize) -> Result<RunOutcome> {
        let instance = self.instance(run_index)?;
        let result = run(&self.run_spec(&instance))?;
        let t_nom_bound = match (instance.s_theta, instance.g_bound, result.t_max_round) {
            (Some(theta), Some(g), Some(t)) => t_nom_scale(theta, self.n_legit(), g.value)
                .ok()
                .map(|c| t as f64 / c),
            _ => None,
        };
        Ok(RunOutcome {
            instance,
            result,
            t_nom_bound,
        })
    }

    /// Expected-error bound curve over optimization steps `0..=iterations`,
    /// each evaluated at the global round `trust_warmup + k`. `None` with a
    /// reason when the curve does not apply.
    pub fn bound_curve(&self, inst: &Instance, x_star_norm: f64) -> std::result::Result<Vec<(usize, ErrorVector)>, String> {
        if !inst.m.is_stable() {
            return Err("M is not certified stable".into());
        }
        if self.config.run.algorithm != Algorithm::Rp3 {
            return Err("bounds describe RP3".into());
        }
        let warmup = self.config.run.trust_warmup;
        let n_legit = self.n_legit();
        let min_pi = self.contraction.min_pi;
        let ks = 0..=self.config.run.iterations;
        match self.config.sets.mode {
            SetMode::Compact => {
                let theta = inst.s_theta.ok_or("S_k does not grow linearly")?;
                let g = inst.g_bound.ok_or("constraint set is not compact")?;
                let b = inst.problem.constraint.norm_bound().ok_or("constraint set is not compact")?;
                t_nom_scale(theta, n_legit, g.value).map_err(|e| e.to_string())?;
                let bound = CompactBound {
                    m: inst.m,
                    b,
                    theta,
                    n_legit,
                    min_pi,
                    g_bound: g.value,
                    learning: self.learning.clone(),
                    trust: self.trust.clone(),
                };
                ks.map(|k| bound.at(warmup + k).map(|e| (k, e)).map_err(|e| e.to_string()))
                    .collect()
            }
            SetMode::Unbounded => {
                let (t1, t2) = (self.config.sets.theta1.unwrap_or(0.0), self.config.sets.theta2.unwrap_or(0.0));
                let delta_t = self
                    .learning
                    .delta_t(n_legit, inst.problem.lip, inst.problem.grad0_max(), t1, t2)
                    .map_err(|e| e.to_string())?;
                let bound = UnboundedBound {
                    m: inst.m,
                    theta1: t1,
                    theta2: t2,
                    n_legit,
                    min_pi,
                    delta_t,
                    x_star_norm,
                    learning: self.learning.clone(),
                    trust: self.trust.clone(),
                };
                let first = bound.first_valid_step();
                ks.filter(|k| warmup + k >= first)
                    .map(|k| bound.at(warmup + k).map(|e| (k, e)).map_err(|e| e.to_string()))
                    .collect()
            }
        }
    }
}

fn sized(value: &[f64], dim: usize, key: &str) -> Result<Point> {
    if value.len() != dim {
        return Err(Error::Config(format!("{key}: expected {dim} components, got {}", value.len())));
    }
    Ok(Point::from_column_slice(value))
}

/// Contraction constants of the nominal (legitimate) subgraph.
pub fn contraction_params(g: &DirectedGraph) -> Result<ContractionParams> {
    let (r, c) = WeightMatrices::nominal(g).restrict_to_legitimate(g);
    let (phi, pi) = analysis::perron_vectors(&r, &c)?;
    let sub = g.nominal_subgraph();
    ContractionParams::compute(sub.graph(), &r, &c, &phi, &pi)
}

#[derive(Clone, Debug, Serialize)]
pub struct RunEvents {
    pub seed: u64,
    pub t_max: Option<usize>,
    pub t_max_round: Option<usize>,
    pub projection_inactive_from: Option<usize>,
    pub d_in_s_from: Option<usize>,
    pub t_nom_bound: Option<f64>,
    pub eta: f64,
    pub lambda: f64,
    pub rho: f64,
    pub final_opt: f64,
    pub final_cons: f64,
    pub final_track: f64,
    pub final_loss: f64,
    pub final_max_dev: f64,
    pub f_star: f64,
}

impl RunEvents {
    fn of(o: &RunOutcome) -> Self {
        let last = o.result.final_record();
        Self {
            seed: o.instance.seed,
            t_max: o.result.t_max,
            t_max_round: o.result.t_max_round,
            projection_inactive_from: o.result.projection_inactive_from,
            d_in_s_from: o.result.d_in_s_from,
            t_nom_bound: o.t_nom_bound,
            eta: o.instance.eta,
            lambda: o.instance.lambda,
            rho: o.instance.rho,
            final_opt: last.errors.opt,
            final_cons: last.errors.cons,
            final_track: last.errors.track,
            final_loss: last.loss,
            final_max_dev: last.max_dev,
            f_star: o.instance.problem.f_star,
        }
    }
}

/// What [`run_experiment`] wrote and the per-run summaries.
#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub out_dir: PathBuf,
    pub events: Vec<RunEvents>,
    pub mean_final: ErrorVector,
    pub bounds_written: bool,
    pub files: Vec<PathBuf>,
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

/// Runs every replication (in parallel up to `threads`) and writes:
/// `runs/run_NNNN.csv`, `runs.csv`, `aggregate.csv`, `events.csv`,
/// `bounds.csv` when a curve applies, `trajectories.csv` and
/// `observations.csv` for tracking, optional `trust_obs/run_NNNN.csv`,
/// `metadata.json` and `config.resolved.toml`.
pub fn run_experiment(config: &SimConfig, out_dir: &Path, threads: Option<usize>) -> Result<ExperimentSummary> {
    let exp = Experiment::new(config.clone())?;
    let runs_dir = out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    let mut files = Vec::new();

    let pool = thread_pool(threads)?;
    let reps = config.run.replication;
    let outcomes: Vec<RunOutcome> = pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let o = exp.run_one(r)?;
                write_atomic(&runs_dir.join(format!("run_{r:04}.csv")), &runs_csv(o.instance.seed, &o.result.records, true))?;
                if let Some(log) = &o.result.observations {
                    let dir = out_dir.join("trust_obs");
                    std::fs::create_dir_all(&dir)?;
                    write_atomic(&dir.join(format!("run_{r:04}.csv")), &log.to_csv())?;
                }
                Ok(o)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    files.extend((0..reps).map(|r| runs_dir.join(format!("run_{r:04}.csv"))));

    let mut merged = String::from(RUNS_HEADER);
    merged.push('\n');
    for o in &outcomes {
        merged.push_str(&runs_csv(o.instance.seed, &o.result.records, false));
    }
    let put = |name: &str, text: &str, files: &mut Vec<PathBuf>| -> Result<()> {
        let p = out_dir.join(name);
        write_atomic(&p, text)?;
        files.push(p);
        Ok(())
    };
    put("runs.csv", &merged, &mut files)?;
    let series: Vec<&[crate::protocol::StepRecord]> = outcomes.iter().map(|o| o.result.records.as_slice()).collect();
    put("aggregate.csv", &aggregate_csv(&series), &mut files)?;

    let events: Vec<RunEvents> = outcomes.iter().map(RunEvents::of).collect();
    put("events.csv", &output::events_csv(&events), &mut files)?;

    let first = &outcomes[0].instance;
    let x_star_norm = outcomes.iter().map(|o| o.instance.problem.x_star.norm()).fold(0.0, f64::max);
    let (bounds_written, bounds_note) = match exp.bound_curve(first, x_star_norm) {
        Ok(curve) => {
            put("bounds.csv", &output::bounds_csv(&curve), &mut files)?;
            (true, "written".to_string())
        }
        Err(reason) => (false, reason),
    };

    if let (Some(data), ProblemSection::Tracking { .. }) = (&first.tracking, &config.problem) {
        let o = &outcomes[0];
        let n = o.result.final_states.len() as f64;
        let mean_final = o.result.final_states.iter().fold(Point::zeros(first.problem.dim()), |acc, s| acc + &s.x) / n;
        let truth = data.stacked_truth();
        let label = match config.run.algorithm {
            Algorithm::Rp3 => "rp3",
            Algorithm::Ppp => "ppp",
        };
        let mut sources: Vec<(&str, &Point)> = vec![("truth", &truth), ("optimum", &first.problem.x_star), (label, &mean_final)];
        let decoy;
        if let AttackModel::ExtremeConstant(d) = &first.attack {
            if config.attack == AttackSpec::Decoy {
                decoy = d.clone();
                sources.push(("decoy", &decoy));
            }
        }
        put("trajectories.csv", &trajectory_csv(&sources), &mut files)?;
        put("observations.csv", &observations_csv(data), &mut files)?;
    }

    let mean_final = mean_errors(outcomes.iter().map(|o| o.result.final_record().errors));
    let g = first.g_bound;
    let metadata = serde_json::json!({
        "config_hash": config.hash(),
        "seed": config.run.seed,
        "replication": reps,
        "algorithm": config.run.algorithm,
        "trust_mode": config.run.trust_mode,
        "iterations": config.run.iterations,
        "trust_warmup": config.run.trust_warmup,
        "n_legitimate": exp.graph.n_legitimate(),
        "n_malicious": exp.graph.n_malicious(),
        "edges": exp.graph.edge_count(),
        "eta": first.eta,
        "lambda": first.lambda,
        "steps_certified": first.certified,
        "rho": first.rho,
        "m": first.m.m.as_slice(),
        "mu": first.problem.mu,
        "lip": first.problem.lip,
        "g_bound": g.map(|g| g.value),
        "g_exact": g.map(|g| g.exact),
        "s_theta": first.s_theta,
        "contraction": &exp.contraction,
        "learning": &exp.learning,
        "bounds": bounds_note,
        "mean_final": mean_final,
    });
    put(
        "metadata.json",
        &(serde_json::to_string_pretty(&metadata).expect("metadata serializes") + "\n"),
        &mut files,
    )?;
    put("config.resolved.toml", &config.to_toml(), &mut files)?;

    Ok(ExperimentSummary {
        out_dir: out_dir.to_path_buf(),
        events,
        mean_final,
        bounds_written,
        files,
    })
}

pub fn mean_errors(it: impl Iterator<Item = ErrorVector>) -> ErrorVector {
    let mut n = 0usize;
    let mut sum = ErrorVector::default();
    for e in it {
        sum.opt += e.opt;
        sum.cons += e.cons;
        sum.track += e.track;
        n += 1;
    }
    let n = n.max(1) as f64;
    ErrorVector {
        opt: sum.opt / n,
        cons: sum.cons / n,
        track: sum.track / n,
    }
}

/// One experiment per value of a dotted config key, each in its own
/// subdirectory, plus `sweep.csv` with the mean final errors.
pub fn sweep(config: &SimConfig, key: &str, values: &[String], out_dir: &Path, threads: Option<usize>) -> Result<Vec<ExperimentSummary>> {
    let mut rows = String::from("value,opt_err,cons_err,track_err,loss\n");
    let mut out = Vec::new();
    for v in values {
        let cfg = config.with_override(key, v)?;
        let dir = out_dir.join(format!("{key}={v}"));
        let s = run_experiment(&cfg, &dir, threads)?;
        let loss = s.events.iter().map(|e| e.final_loss).sum::<f64>() / s.events.len() as f64;
        rows.push_str(&format!("{v},{},{},{},{loss}\n", s.mean_final.opt, s.mean_final.cons, s.mean_final.track));
        out.push(s);
    }
    write_atomic(&out_dir.join("sweep.csv"), &rows)?;
    Ok(out)
}

/// Step-size and stability data for the `bounds` subcommand.
pub struct BoundsReport {
    pub contraction: ContractionParams,
    pub mu: f64,
    pub lip: f64,
    pub eta_max: f64,
    pub lambda_max: Option<f64>,
    pub eta: f64,
    pub lambda: f64,
    pub m: MGain,
    pub rho: f64,
    pub g_bound: Option<GradientBound>,
    pub curve: std::result::Result<Vec<(usize, ErrorVector)>, String>,
}

pub fn bounds_report(config: &SimConfig) -> Result<BoundsReport> {
    let exp = Experiment::new(config.clone())?;
    let inst = exp.instance(0)?;
    let (mu, lip) = (inst.problem.mu, inst.problem.lip);
    Ok(BoundsReport {
        eta_max: exp.contraction.eta_max(lip),
        lambda_max: exp.contraction.lambda_max(inst.eta, mu).ok(),
        curve: exp.bound_curve(&inst, inst.problem.x_star.norm()),
        contraction: exp.contraction.clone(),
        mu,
        lip,
        eta: inst.eta,
        lambda: inst.lambda,
        rho: inst.rho,
        g_bound: inst.g_bound,
        m: inst.m,
    })
}

impl BoundsReport {
    pub fn render(&self) -> String {
        let c = &self.contraction;
        let mut s = String::new();
        s += &format!(
            "n = {}  diameter = {}  edge utility = {}\nsigma = {}  tau = {}  r = {}  varphi = {}\nmin pi = {}  min phi = {}\n",
            c.n, c.diameter, c.edge_utility, c.sigma, c.tau, c.r, c.varphi, c.min_pi, c.min_phi
        );
        s += &format!("mu = {}  L = {}\n", self.mu, self.lip);
        match self.g_bound {
            Some(g) => s += &format!("G = {} ({})\n", g.value, if g.exact { "exact" } else { "estimate" }),
            None => s += "G = unbounded\n",
        }
        s += &format!("eta_max = {}\n", self.eta_max);
        match self.lambda_max {
            Some(l) => s += &format!("lambda_max(eta) = {l}\n"),
            None => s += "lambda_max(eta) = n/a\n",
        }
        s += &format!("eta = {}  lambda = {}\n", self.eta, self.lambda);
        let m = &self.m.m;
        s += "M =\n";
        for i in 0..3 {
            s += &format!("  {:e} {:e} {:e}\n", m[(i, 0)], m[(i, 1)], m[(i, 2)]);
        }
        s += &format!("rho(M) = {}\n", self.rho);
        s += &format!("stable = {}\n", self.m.is_stable());
        match &self.curve {
            Ok(curve) => s += &output::bounds_csv(curve),
            Err(reason) => s += &format!("no bound curve: {reason}\n"),
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Informational; does not fail validation.
    Note,
}

/// Named checks for the `validate` subcommand.
pub fn validate_report(config: &SimConfig) -> Result<Vec<(String, CheckStatus)>> {
    use CheckStatus::*;
    let verdict = |ok: bool| if ok { Pass } else { Fail };
    config.validate()?;
    let exp = match Experiment::new(config.clone()) {
        Ok(e) => e,
        Err(e) => return Ok(vec![(format!("topology and graph constants: {e}"), Fail)]),
    };
    let mut checks = vec![
        (
            format!(
                "topology: {} legitimate, {} malicious, {} edges, assumptions hold",
                exp.graph.n_legitimate(),
                exp.graph.n_malicious(),
                exp.graph.edge_count()
            ),
            Pass,
        ),
        (
            format!("sigma = {:.6}, tau = {:.6} below 1", exp.contraction.sigma, exp.contraction.tau),
            verdict(exp.contraction.sigma < 1.0 && exp.contraction.tau < 1.0),
        ),
    ];
    let inst = match exp.instance(0) {
        Ok(i) => i,
        Err(e) => {
            checks.push((format!("problem and steps: {e}"), Fail));
            return Ok(checks);
        }
    };
    if inst.certified {
        checks.push((format!("rho(M) = {} below 1", inst.rho), verdict(inst.m.is_stable())));
    } else {
        checks.push((
            format!("rho(M) = {} for hand-set steps (no certificate)", inst.rho),
            if inst.m.is_stable() { Pass } else { Note },
        ));
    }
    if let (Some(theta), Some(g)) = (inst.s_theta, inst.g_bound) {
        let need = exp.n_legit() as f64 * g.value;
        checks.push((format!("theta = {theta} exceeds n_L G = {need}"), verdict(theta > need)));
    }
    if config.sets.mode == SetMode::Unbounded {
        let t2 = config.sets.theta2.unwrap_or(0.0);
        let ok = geometric_rate_condition(t2, inst.rho, exp.trust.e_l(), exp.trust.e_m());
        checks.push((
            format!("theta2 = {t2} below min(-ln rho, E_L^2, E_M^2)"),
            if ok { Pass } else if inst.certified { Fail } else { Note },
        ));
    }
    Ok(checks)
}

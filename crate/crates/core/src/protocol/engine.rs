use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::attack::{AttackContext, AttackModel, Messages};
use super::{ppp_step, rp3_step, AgentVariables, StepInputs, WeightMatrices};
use crate::analysis::{error_vector, perron_vectors, ErrorVector};
use crate::graph::DirectedGraph;
use crate::optim::{ConstraintSet, SetSequence};
use crate::problems::Problem;
use crate::trust::{InvertedOpinions, ObservationLog, ObservationStreams, OpinionAdversary, TrustModelParams, TrustState};
use crate::{Error, Point, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Rp3,
    Ppp,
}

/// Where mixing weights come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrustMode {
    /// RP3 learns trust from observations; PPP trusts every neighbor.
    Learned,
    /// Both algorithms use the nominal weights from the start.
    Oracle,
}

pub struct RunSpec<'a> {
    pub graph: &'a DirectedGraph,
    pub problem: &'a Problem,
    pub algorithm: Algorithm,
    pub trust_mode: TrustMode,
    pub trust: TrustModelParams,
    /// Defaults to [`InvertedOpinions`].
    pub opinion_adversary: Option<&'a dyn OpinionAdversary>,
    pub attack: AttackModel,
    pub s_seq: SetSequence,
    /// Growing decision sets; `None` means `X` alone.
    pub x_seq: Option<SetSequence>,
    pub eta: f64,
    pub lambda: f64,
    pub iterations: usize,
    /// Trust rounds before optimization step 0. Set sequences are indexed
    /// by the global round `trust_warmup + k`.
    pub trust_warmup: usize,
    pub seed: u64,
    pub keep_observations: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub k: usize,
    pub errors: ErrorVector,
    /// Mean of the global objective over legitimate iterates.
    pub loss: f64,
    /// `max_i ‖x_i − x*‖_∞`.
    pub max_dev: f64,
    pub s_norm_sum: f64,
    /// Residual of the transition `k → k+1`; NaN for the last record.
    pub gt_residual: f64,
    /// Whether the transition `k → k+1` clipped some `s`.
    pub projection_active: bool,
    /// Every `‖d_i[k]‖ ≤ g(k)`, with `d_i[0] = 0`.
    pub d_in_s: bool,
    /// Whether trust at this step classifies every agent correctly. Always
    /// true when trust is not learned.
    pub trust_correct: bool,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub records: Vec<StepRecord>,
    /// First global trust round from which classification stays correct.
    pub t_max_round: Option<usize>,
    /// The same event in optimization steps, saturating at 0.
    pub t_max: Option<usize>,
    /// First step from which no `s` projection is active.
    pub projection_inactive_from: Option<usize>,
    /// First step from which `d_i[k] ∈ S_k` holds for all later steps.
    pub d_in_s_from: Option<usize>,
    pub final_states: Vec<AgentVariables>,
    pub observations: Option<ObservationLog>,
    /// Nominal Perron vectors used for the error functionals.
    pub phi: DVector<f64>,
    pub pi: DVector<f64>,
}

impl RunResult {
    pub fn final_record(&self) -> &StepRecord {
        self.records.last().expect("a run records at least step 0")
    }
}

/// First index from which `flags` is true through the end.
fn suffix_start(flags: impl DoubleEndedIterator<Item = bool> + ExactSizeIterator) -> Option<usize> {
    let n = flags.len();
    let trailing = flags.rev().take_while(|&f| f).count();
    (trailing > 0).then_some(n - trailing)
}

pub fn nominal_perron(g: &DirectedGraph) -> Result<(DVector<f64>, DVector<f64>)> {
    let (r, c) = WeightMatrices::nominal(g).restrict_to_legitimate(g);
    perron_vectors(&r, &c)
}

pub fn run(spec: &RunSpec<'_>) -> Result<RunResult> {
    let g = spec.graph;
    let problem = spec.problem;
    if problem.costs.len() != g.n_legitimate() || problem.initial.len() != g.n_legitimate() {
        return Err(Error::InvalidParameter(format!(
            "problem has {} agents, graph has {} legitimate",
            problem.costs.len(),
            g.n_legitimate()
        )));
    }
    let (phi, pi) = nominal_perron(g)?;
    let inverted = InvertedOpinions::new(g);
    let adversary = spec.opinion_adversary.unwrap_or(&inverted);
    let learning = spec.trust_mode == TrustMode::Learned && spec.algorithm == Algorithm::Rp3;

    let mut trust = TrustState::new(g);
    let mut streams = ObservationStreams::new(g, spec.seed);
    let mut log = spec.keep_observations.then(ObservationLog::default);
    let mut correct_rounds = Vec::with_capacity(spec.trust_warmup + spec.iterations + 1);
    let mut learn_round = |trust: &mut TrustState, round: usize, log: &mut Option<ObservationLog>| -> Result<()> {
        let obs = streams.sample_round(g, &spec.trust, round);
        if let Some(l) = log.as_mut() {
            l.extend(&obs);
        }
        trust.update_aggregates(g, &obs)
    };
    if learning {
        for t in 0..spec.trust_warmup {
            trust.update_opinions(g, adversary);
            correct_rounds.push(trust.classification_correct(g));
            learn_round(&mut trust, t, &mut log)?;
        }
    }

    let fixed_weights = match (spec.algorithm, spec.trust_mode) {
        (_, TrustMode::Oracle) => Some(WeightMatrices::nominal(g)),
        (Algorithm::Ppp, TrustMode::Learned) => Some(WeightMatrices::oblivious(g)),
        (Algorithm::Rp3, TrustMode::Learned) => None,
    };

    let mut states: Vec<AgentVariables> = match spec.algorithm {
        Algorithm::Rp3 => problem.initial.iter().map(|x| AgentVariables::rp3(x.clone())).collect(),
        Algorithm::Ppp => problem
            .initial
            .iter()
            .zip(&problem.costs)
            .map(|(x, f)| AgentVariables::ppp(x.clone(), f.as_ref()))
            .collect(),
    };
    let mut records = Vec::with_capacity(spec.iterations + 1);
    let mut d_ok = true;

    for k in 0..=spec.iterations {
        let round = spec.trust_warmup + k;
        let mut trust_correct = true;
        if learning {
            trust.update_opinions(g, adversary);
            trust_correct = trust.classification_correct(g);
            correct_rounds.push(trust_correct);
        }
        records.push(record(spec, &states, k, &phi, &pi, d_ok, trust_correct));
        if k == spec.iterations {
            break;
        }

        let learned;
        let weights = match &fixed_weights {
            Some(w) => w,
            None => {
                learned = WeightMatrices::from_trust(g, &trust).map_err(|e| e.at_step(k))?;
                &learned
            }
        };
        let x_set = match spec.algorithm {
            Algorithm::Rp3 => effective_set(&problem.constraint, spec.x_seq.as_ref(), round, problem.dim()),
            Algorithm::Ppp => problem.constraint.clone(),
        };
        let s_radius = spec.s_seq.radius(round);
        let ctx = AttackContext {
            step: round,
            x_star: &problem.x_star,
            x_set: &x_set,
            s_radius: (spec.algorithm == Algorithm::Rp3).then_some(s_radius),
        };
        let msgs = if g.n_malicious() == 0 {
            Messages::empty(g)
        } else {
            spec.attack.messages(g, &ctx).map_err(|e| e.at_step(k))?
        };
        let inp = StepInputs {
            graph: g,
            weights,
            costs: &problem.costs,
            x_set: &x_set,
            s_radius,
            eta: spec.eta,
            lambda: spec.lambda,
        };
        let last = records.last_mut().expect("just pushed");
        match spec.algorithm {
            Algorithm::Rp3 => {
                let out = rp3_step(&states, &inp, &msgs).map_err(|e| e.at_step(k))?;
                let next_radius = spec.s_seq.radius(round + 1);
                d_ok = out.d.iter().all(|d| d.norm() <= next_radius);
                last.gt_residual = out.gt_residual;
                last.projection_active = out.projection_active;
                states = out.next;
            }
            Algorithm::Ppp => {
                let out = ppp_step(&states, &inp, &msgs).map_err(|e| e.at_step(k))?;
                last.gt_residual = out.gt_residual;
                states = out.next;
            }
        }
        if learning {
            learn_round(&mut trust, round, &mut log)?;
        }
    }

    let t_max_round = if learning {
        suffix_start(correct_rounds.iter().copied())
    } else {
        Some(0)
    };
    let projection_inactive_from = suffix_start(records.iter().map(|r| !r.projection_active));
    let d_in_s_from = suffix_start(records.iter().map(|r| r.d_in_s));
    Ok(RunResult {
        records,
        t_max_round,
        t_max: t_max_round.map(|t| t.saturating_sub(spec.trust_warmup)),
        projection_inactive_from,
        d_in_s_from,
        final_states: states,
        observations: log,
        phi,
        pi,
    })
}

fn record(
    spec: &RunSpec<'_>,
    states: &[AgentVariables],
    k: usize,
    phi: &DVector<f64>,
    pi: &DVector<f64>,
    d_in_s: bool,
    trust_correct: bool,
) -> StepRecord {
    let problem = spec.problem;
    let xs: Vec<Point> = states.iter().map(|s| s.x.clone()).collect();
    let ys: Vec<Point> = states.iter().map(|s| s.tracker(spec.algorithm)).collect();
    let errors = error_vector(&xs, &ys, &problem.x_star, phi, pi);
    let loss = xs.iter().map(|x| problem.global_value(x)).sum::<f64>() / xs.len() as f64;
    let max_dev = xs.iter().map(|x| (x - &problem.x_star).amax()).fold(0.0, f64::max);
    StepRecord {
        k,
        errors,
        loss,
        max_dev,
        s_norm_sum: states.iter().map(|s| s.s.norm()).sum(),
        gt_residual: f64::NAN,
        projection_active: false,
        d_in_s,
        trust_correct,
    }
}

/// Decision set seen by legitimate agents at global round `round`.
pub fn effective_set(constraint: &ConstraintSet, x_seq: Option<&SetSequence>, round: usize, dim: usize) -> ConstraintSet {
    match x_seq {
        Some(seq) => constraint.clone().intersect(seq.as_set(round, dim)),
        None => constraint.clone(),
    }
}

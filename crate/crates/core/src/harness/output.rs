use std::fmt::Write as _;
use std::path::Path;

use super::RunEvents;
use crate::analysis::ErrorVector;
use crate::protocol::StepRecord;
use crate::Result;

pub const RUNS_HEADER: &str = "seed,k,opt_err,cons_err,track_err,loss";
pub const BOUNDS_HEADER: &str = "k,opt_bound,cons_bound,track_bound";
pub const EVENTS_HEADER: &str =
    "seed,t_max,t_max_round,projection_inactive_from,d_in_s_from,t_nom_bound,eta,lambda,rho,final_opt,final_cons,final_track,final_loss,f_star";
pub const AGGREGATE_HEADER: &str = "k,runs,\
opt_mean,opt_median,opt_q05,opt_q25,opt_q75,opt_q95,\
cons_mean,cons_median,cons_q05,cons_q25,cons_q75,cons_q95,\
track_mean,track_median,track_q05,track_q25,track_q75,track_q95,\
loss_mean,loss_median,loss_q05,loss_q25,loss_q75,loss_q95";

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Rows of one run, optionally with the header.
pub fn runs_csv(seed: u64, records: &[StepRecord], header: bool) -> String {
    let mut out = String::new();
    if header {
        out.push_str(RUNS_HEADER);
        out.push('\n');
    }
    for r in records {
        let _ = writeln!(
            out,
            "{seed},{},{},{},{},{}",
            r.k, r.errors.opt, r.errors.cons, r.errors.track, r.loss
        );
    }
    out
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

fn stats(out: &mut String, values: &mut [f64]) {
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let _ = write!(out, ",{mean}");
    for q in [0.5, 0.05, 0.25, 0.75, 0.95] {
        let _ = write!(out, ",{}", quantile(values, q));
    }
}

/// Per-step statistics over runs. Runs of unequal length contribute to the
/// steps they have.
pub fn aggregate_csv(runs: &[&[StepRecord]]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    let steps = runs.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut col = Vec::with_capacity(runs.len());
    for k in 0..steps {
        let at: Vec<&StepRecord> = runs.iter().filter_map(|r| r.get(k)).collect();
        let _ = write!(out, "{k},{}", at.len());
        for pick in [
            |r: &StepRecord| r.errors.opt,
            |r: &StepRecord| r.errors.cons,
            |r: &StepRecord| r.errors.track,
            |r: &StepRecord| r.loss,
        ] {
            col.clear();
            col.extend(at.iter().map(|r| pick(r)));
            stats(&mut out, &mut col);
        }
        out.push('\n');
    }
    out
}

pub(crate) fn bounds_csv(curve: &[(usize, ErrorVector)]) -> String {
    let mut out = String::from(BOUNDS_HEADER);
    out.push('\n');
    for (k, e) in curve {
        let _ = writeln!(out, "{k},{},{},{}", e.opt, e.cons, e.track);
    }
    out
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub(crate) fn events_csv(events: &[RunEvents]) -> String {
    let mut out = String::from(EVENTS_HEADER);
    out.push('\n');
    for e in events {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            e.seed,
            opt(e.t_max),
            opt(e.t_max_round),
            opt(e.projection_inactive_from),
            opt(e.d_in_s_from),
            opt(e.t_nom_bound),
            e.eta,
            e.lambda,
            e.rho,
            e.final_opt,
            e.final_cons,
            e.final_track,
            e.final_loss,
            e.f_star
        );
    }
    out
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::TopologyKind;
use crate::optim::ConstraintSet;
use crate::problems::TrackingSpec;
use crate::protocol::{Algorithm, TrustMode};
use crate::trust::{PcCoefficient, TrustDistribution, TrustModelParams};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub run: RunSection,
    pub topology: TopologySection,
    #[serde(default)]
    pub trust: TrustSection,
    pub problem: ProblemSection,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub sets: SetsSection,
    #[serde(default)]
    pub steps: StepsSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub algorithm: Algorithm,
    pub trust_mode: TrustMode,
    pub iterations: usize,
    pub seed: u64,
    pub replication: usize,
    /// Trust rounds before the first optimization step.
    pub trust_warmup: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Rp3,
            trust_mode: TrustMode::Learned,
            iterations: 1000,
            seed: 0,
            replication: 1,
            trust_warmup: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    #[serde(default = "default_kind")]
    pub kind: TopologyKind,
    pub n_legitimate: usize,
    pub n_malicious: usize,
    #[serde(default = "default_edge_prob")]
    pub edge_prob: f64,
    #[serde(default = "default_attach_prob")]
    pub attach_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malicious_contacts: Option<usize>,
    #[serde(default = "yes")]
    pub undirected: bool,
    /// Edge-list file; overrides the generator when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

fn default_kind() -> TopologyKind {
    TopologyKind::CyclePlusRandom
}

fn default_edge_prob() -> f64 {
    0.1
}

fn default_attach_prob() -> f64 {
    0.3
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustSection {
    pub legitimate: TrustDistribution,
    pub malicious: TrustDistribution,
    pub pc_coefficient: PcCoefficient,
}

impl Default for TrustSection {
    fn default() -> Self {
        Self {
            legitimate: TrustDistribution::Uniform { lo: 0.35, hi: 0.75 },
            malicious: TrustDistribution::Uniform { lo: 0.25, hi: 0.65 },
            pc_coefficient: PcCoefficient::NL,
        }
    }
}

impl TrustSection {
    pub fn params(&self) -> Result<TrustModelParams> {
        Ok(TrustModelParams::new(self.legitimate, self.malicious)?.with_pc_coefficient(self.pc_coefficient))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConstraintSpec {
    AllSpace,
    Box { lo: f64, hi: f64 },
    Ball { radius: f64 },
}

impl ConstraintSpec {
    pub fn build(&self, dim: usize) -> Result<ConstraintSet> {
        match *self {
            ConstraintSpec::AllSpace => Ok(ConstraintSet::AllSpace),
            ConstraintSpec::Box { lo, hi } => ConstraintSet::cube(dim, lo, hi),
            ConstraintSpec::Ball { radius } => ConstraintSet::origin_ball(dim, radius),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSection {
    /// Values drawn uniformly from `value_range` in every coordinate.
    Consensus {
        #[serde(default = "one")]
        dim: usize,
        value_range: [f64; 2],
        constraint: ConstraintSpec,
        /// Cost scale `w` in `w‖x − a_i‖²`.
        #[serde(default = "unit")]
        weight: f64,
    },
    RandomQuadratic {
        dim: usize,
        mu: f64,
        constraint: ConstraintSpec,
    },
    Tracking {
        #[serde(default)]
        tracking: TrackingSpec,
        /// Position offset of the decoy trajectory sent by attackers.
        #[serde(default = "default_decoy")]
        decoy_offset: [f64; 2],
    },
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

fn default_decoy() -> [f64; 2] {
    [20.0, -20.0]
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AttackSpec {
    #[default]
    None,
    SignedExtreme {
        magnitude: f64,
    },
    Constant {
        value: Vec<f64>,
    },
    GradientPoison {
        value: Vec<f64>,
    },
    /// The ground-truth trajectory shifted by the problem's decoy offset.
    Decoy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RadiusSpec {
    Linear { theta: f64 },
    /// `θ = factor · n_L · G`.
    LinearGradient { factor: f64 },
    Power { coef: f64, exponent: f64 },
    Exponential { theta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetMode {
    Compact,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SetsSection {
    pub mode: SetMode,
    /// Radius of `S_k` in compact mode.
    pub s_radius: RadiusSpec,
    /// Radius of `X_k` in compact mode; `X` alone when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_radius: Option<RadiusSpec>,
    /// Unbounded mode: `X_k` radius `exp(θ1 k)`, `S_k` radius `exp(θ2 k)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta2: Option<f64>,
}

impl Default for SetsSection {
    fn default() -> Self {
        Self {
            mode: SetMode::Compact,
            s_radius: RadiusSpec::LinearGradient { factor: 2.0 },
            x_radius: None,
            theta1: None,
            theta2: None,
        }
    }
}

/// A step size or the literal string `"auto"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepValue {
    Value(f64),
    Keyword(String),
}

impl StepValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            StepValue::Value(v) => Some(*v),
            StepValue::Keyword(_) => None,
        }
    }
}

impl Default for StepValue {
    fn default() -> Self {
        StepValue::Keyword("auto".into())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepsSection {
    pub eta: StepValue,
    pub lambda: StepValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write the trust observation log of every run.
    pub observations: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            observations: false,
        }
    }
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        if let Some(file) = cfg.topology.file.as_mut() {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    *file = dir.join(&*file);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (key, v) in [("steps.eta", &self.steps.eta), ("steps.lambda", &self.steps.lambda)] {
            match v {
                StepValue::Keyword(k) if k != "auto" => return bad(format!("{key}: expected a number or \"auto\", got {k:?}")),
                StepValue::Value(x) if !(*x > 0.0) => return bad(format!("{key}: must be positive, got {x}")),
                _ => {}
            }
        }
        if let Some(l) = self.steps.lambda.value() {
            if l > 1.0 {
                return bad(format!("steps.lambda: must be at most 1, got {l}"));
            }
        }
        if self.run.replication == 0 {
            return bad("run.replication: must be at least 1".into());
        }
        if self.sets.mode == SetMode::Unbounded {
            match (self.sets.theta1, self.sets.theta2) {
                (Some(t1), Some(t2)) if t1 > 0.0 && t2 > t1 => {}
                (Some(t1), Some(t2)) => return bad(format!("sets: unbounded mode needs theta2 > theta1 > 0, got {t1} and {t2}")),
                _ => return bad("sets: unbounded mode needs theta1 and theta2".into()),
            }
        }
        if self.attack == AttackSpec::Decoy && !matches!(self.problem, ProblemSection::Tracking { .. }) {
            return bad("attack: decoy needs a tracking problem".into());
        }
        if let ProblemSection::Consensus { value_range: [lo, hi], weight, .. } = self.problem {
            if !(lo <= hi) {
                return bad(format!("problem.value_range: {lo} > {hi}"));
            }
            if !(weight > 0.0) {
                return bad(format!("problem.weight: must be positive, got {weight}"));
            }
        }
        self.trust.params()?;
        Ok(())
    }

    /// The configuration with every default filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Sets a dotted key such as `run.iterations` to a TOML literal.
    pub fn with_override(&self, key: &str, literal: &str) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {literal}"))
            .map(|mut t| t.remove("v").expect("just parsed"))
            .or_else(|_| Ok::<_, Error>(toml::Value::String(literal.to_string())))?;
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("bad key {key:?}")))?;
        let mut node = &mut root;
        for p in parts {
            node = node
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("{key}: {p} is not a table")))?
                .entry(p)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        node.as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: parent is not a table")))?
            .insert(last.to_string(), value);
        let text = toml::to_string(&root).map_err(|e| Error::Config(e.to_string()))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("override {key} = {literal}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [topology]
        n_legitimate = 5
        n_malicious = 2

        [problem]
        kind = "consensus"
        value_range = [-1.0, 1.0]
        constraint = { kind = "box", lo = -1.0, hi = 1.0 }
    "#;

    #[test]
    fn defaults_are_filled_and_echoed() {
        let cfg = SimConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.run.iterations, 1000);
        assert_eq!(cfg.steps.eta, StepValue::Keyword("auto".into()));
        let again = SimConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let text = format!("{MINIMAL}\n[run]\nitertions = 5\n");
        let err = SimConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("itertions"), "{err}");
    }

    #[test]
    fn unbounded_mode_needs_ordered_rates() {
        let text = format!("{MINIMAL}\n[sets]\nmode = \"unbounded\"\ntheta1 = 0.2\ntheta2 = 0.1\n");
        assert!(SimConfig::parse(&text).is_err());
        let text = format!("{MINIMAL}\n[sets]\nmode = \"unbounded\"\ntheta1 = 0.1\ntheta2 = 0.2\n");
        assert!(SimConfig::parse(&text).is_ok());
    }

    #[test]
    fn step_keywords() {
        let text = format!("{MINIMAL}\n[steps]\neta = 0.1\nlambda = \"fast\"\n");
        assert!(SimConfig::parse(&text).is_err());
        let text = format!("{MINIMAL}\n[steps]\neta = 0.1\nlambda = 1.5\n");
        assert!(SimConfig::parse(&text).is_err());
    }

    #[test]
    fn dotted_overrides() {
        let cfg = SimConfig::parse(MINIMAL).unwrap();
        let o = cfg.with_override("run.iterations", "7").unwrap();
        assert_eq!(o.run.iterations, 7);
        let o = cfg.with_override("run.algorithm", "ppp").unwrap();
        assert_eq!(o.run.algorithm, Algorithm::Ppp);
        let o = cfg.with_override("steps.eta", "0.25").unwrap();
        assert_eq!(o.steps.eta, StepValue::Value(0.25));
        assert!(cfg.with_override("run.nope", "1").is_err());
    }

    #[test]
    fn decoy_needs_tracking() {
        let text = format!("{MINIMAL}\n[attack]\nkind = \"decoy\"\n");
        assert!(SimConfig::parse(&text).is_err());
    }
}

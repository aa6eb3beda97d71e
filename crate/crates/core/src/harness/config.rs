use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, BcConfig, WeightingMode};
use crate::demo::ExpertConfig;
use crate::error::{Error, Result};
use crate::maze::{DynamicsParams, MazeLayout, MdpSpec, PhysicsConfig};
use crate::predictor::PredictorConfig;
use crate::skill::SkillConfig;

/// Learner configurations compared in the transfer experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Predictor-weighted source priors.
    #[serde(rename = "adaptive")]
    Adaptive,
    /// One-hot at the most likely source.
    #[serde(rename = "hardmax")]
    HardMax,
    /// Equal weight on every source prior.
    #[serde(rename = "uniform")]
    Uniform,
    /// Single prior trained on target-task demonstrations (oracle).
    #[serde(rename = "spirl")]
    Spirl,
    /// Single prior trained on the pooled source demonstrations.
    #[serde(rename = "spirl-no-target")]
    SpirlNoTarget,
    /// Divergence towards N(0, I) in latent space.
    #[serde(rename = "sac")]
    Sac,
    /// As `Sac`, starting from a behaviour-cloned policy.
    #[serde(rename = "bc-sac")]
    BcSac,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Adaptive,
        Method::HardMax,
        Method::Uniform,
        Method::Spirl,
        Method::SpirlNoTarget,
        Method::Sac,
        Method::BcSac,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Adaptive => "adaptive",
            Method::HardMax => "hardmax",
            Method::Uniform => "uniform",
            Method::Spirl => "spirl",
            Method::SpirlNoTarget => "spirl-no-target",
            Method::Sac => "sac",
            Method::BcSac => "bc-sac",
        }
    }

    pub fn weighting(&self) -> WeightingMode {
        match self {
            Method::Adaptive => WeightingMode::Adaptive,
            Method::HardMax => WeightingMode::HardMax,
            Method::Uniform => WeightingMode::Uniform,
            Method::Spirl | Method::SpirlNoTarget => WeightingMode::SinglePrior { prior: 0 },
            Method::Sac => WeightingMode::StandardNormal,
            Method::BcSac => WeightingMode::BcInit,
        }
    }

    pub fn needs_target_demos(&self) -> bool {
        matches!(self, Method::Spirl | Method::BcSac)
    }

    pub fn needs_predictor(&self) -> bool {
        matches!(self, Method::Adaptive | Method::HardMax)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .or(match s {
                "hard-max" => Some(Method::HardMax),
                "bc+sac" => Some(Method::BcSac),
                _ => None,
            })
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(Method::name).collect();
                Error::Config(format!("unknown mode {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Member {
    pub id: String,
    pub damping: f64,
    pub friction_x: f64,
    pub friction_y: f64,
}

impl Member {
    pub fn new(id: &str, damping: f64, friction_x: f64, friction_y: f64) -> Self {
        Member {
            id: id.to_string(),
            damping,
            friction_x,
            friction_y,
        }
    }

    pub fn params(&self) -> Result<DynamicsParams> {
        DynamicsParams::new(self.damping, self.friction_x, self.friction_y)
            .map_err(|e| Error::Config(format!("member {}: {e}", self.id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    /// Maze text file; the built-in 12×12 maze when empty.
    pub layout: String,
    pub cell_size: f64,
    pub physics: PhysicsConfig,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            layout: String::new(),
            cell_size: 1.0,
            physics: PhysicsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilySection {
    pub sources: Vec<Member>,
    pub target: Member,
}

impl Default for FamilySection {
    fn default() -> Self {
        FamilySection {
            sources: vec![
                Member::new("src-0", 0.2, 0.1, 0.1),
                Member::new("src-1", 1.0, 0.5, 0.1),
                Member::new("src-2", 3.0, 0.1, 0.5),
            ],
            target: Member::new("target", 2.0, 0.3, 0.3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSection {
    /// Trajectories per source member.
    pub per_source: usize,
    /// Target-task trajectories for the oracle prior and behaviour cloning.
    pub target: usize,
    pub seed: u64,
    pub expert: ExpertConfig,
}

impl Default for DemoSection {
    fn default() -> Self {
        DemoSection {
            per_source: 2000,
            target: 8000,
            seed: 0,
            expert: ExpertConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Methods `pipeline` runs when no `--mode` is given.
    pub modes: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Episodes between periodic agent checkpoints (0 disables them).
    pub checkpoint_every: usize,
    /// Write every weight vector used in a gradient step.
    pub debug_weights: bool,
    /// Env-step spacing of the aggregated learning curves.
    pub curve_bin: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            modes: Method::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            checkpoint_every: 0,
            debug_weights: false,
            curve_bin: 10_000,
        }
    }
}

/// Everything one experiment needs. Parsed from a TOML file whose
/// sections mirror the fields; missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub family: FamilySection,
    pub demos: DemoSection,
    pub skill: SkillConfig,
    pub predictor: PredictorConfig,
    pub agent: AgentConfig,
    pub bc: BcConfig,
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config values are always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.family.sources.is_empty() {
            return cfg("family.sources is empty".into());
        }
        let mut ids: Vec<&str> = self.family.sources.iter().map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return cfg("family.sources has duplicate ids".into());
        }
        for m in &self.family.sources {
            m.params()?;
            if m.id == self.family.target.id {
                return cfg(format!("target id {} is also a source", m.id));
            }
            if m.params()? == self.family.target.params()? {
                return cfg(format!("target dynamics equal source {}", m.id));
            }
        }
        if self.experiment.seeds.is_empty() {
            return cfg("experiment.seeds is empty".into());
        }
        if self.experiment.modes.is_empty() {
            return cfg("experiment.modes is empty".into());
        }
        if self.experiment.curve_bin == 0 {
            return cfg("experiment.curve_bin must be positive".into());
        }
        if self.demos.per_source == 0 {
            return cfg("demos.per_source must be positive".into());
        }
        if self.demos.target == 0
            && self.experiment.modes.iter().any(Method::needs_target_demos)
        {
            return cfg("demos.target must be positive for spirl and bc-sac".into());
        }
        if !(self.env.cell_size > 0.0) {
            return cfg("env.cell_size must be positive".into());
        }
        self.skill.validate()?;
        self.predictor.validate()?;
        self.agent.validate()?;
        self.bc.validate()?;
        Ok(())
    }

    pub fn layout(&self) -> Result<Arc<MazeLayout>> {
        let layout = if self.env.layout.is_empty() {
            MazeLayout::parse(crate::maze::DEFAULT_LAYOUT, self.env.cell_size)?
        } else {
            MazeLayout::load(Path::new(&self.env.layout), self.env.cell_size)?
        };
        if self.agent.goal >= layout.goals().len() {
            return Err(Error::Config(format!(
                "agent.goal {} but the layout has {} goals",
                self.agent.goal,
                layout.goals().len()
            )));
        }
        Ok(Arc::new(layout))
    }

    pub fn member_mdp(&self, layout: &Arc<MazeLayout>, m: &Member) -> Result<MdpSpec> {
        MdpSpec::new(m.id.clone(), layout.clone(), m.params()?, self.env.physics)
            .map_err(|e| Error::Config(format!("member {}: {e}", m.id)))
    }

    /// Methods to run: the override when given, the configured list
    /// otherwise.
    pub fn methods(&self, over: Option<Method>) -> Vec<Method> {
        match over {
            Some(m) => vec![m],
            None => self.experiment.modes.clone(),
        }
    }
}

/// Where each artifact of a run lives under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn demos(&self, id: &str) -> PathBuf {
        self.root.join("demos").join(format!("{id}.mprdat"))
    }

    pub fn skill(&self, id: &str) -> PathBuf {
        self.root.join("skills").join(format!("{id}.ckpt"))
    }

    pub fn skill_log(&self, id: &str) -> PathBuf {
        self.root.join("skills").join(format!("{id}.log.csv"))
    }

    pub fn predictor(&self) -> PathBuf {
        self.root.join("predictor").join("predictor.ckpt")
    }

    pub fn predictor_dir(&self) -> PathBuf {
        self.root.join("predictor")
    }

    pub fn bc_policy(&self) -> PathBuf {
        self.root.join("skills").join("bc-policy.ckpt")
    }

    pub fn method_dir(&self, m: Method) -> PathBuf {
        self.root.join("agent").join(m.name())
    }

    pub fn run_dir(&self, m: Method, seed: u64) -> PathBuf {
        self.method_dir(m).join(format!("seed-{seed}"))
    }

    pub fn eval_csv(&self) -> PathBuf {
        self.root.join("eval.csv")
    }
}

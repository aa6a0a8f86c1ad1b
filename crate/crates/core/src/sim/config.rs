//! Simulation configuration, read from TOML.
//!
//! ```toml
//! seed = 7                                 # required
//! episodes = 20
//! slots_per_episode = 100
//! fusion_n = 2                             # default: majority of K
//! request_probability = [1.0, 1.0, 1.0]    # default: 1 for every UAV
//! output_dir = "runs/a"
//!
//! [radio]                                  # num_uavs = K, num_subchannels = M
//! v_cc = 1.8
//! p_tx = 0.1
//! subchannel_bandwidth = 540e3
//! num_subchannels = 4
//! num_uavs = 3
//!
//! [timing]
//! t_req = 1e-3
//! t_s = 2e-3
//! t_b = 1e-3
//! t_a = 6e-3
//!
//! [[channels]]                             # exactly M entries
//! p01 = 0.2
//! p10 = 0.3
//!
//! [link]                                   # default: LinkModel::preset(K, M, 20)
//! sensing_sinr_db = [20.0, 20.0, 10.0]
//! access_sinr_db = [[20.0, 15.0, 10.0, 5.0], ...]
//!
//! [sensing]
//! kind = "energy"                          # "perfect" | "energy" | "model"
//! samples_per_observation = 1024
//! calibration_per_uav = 400
//! # kind = "model"; paths = ["uav0.sksm"]   one shared model or one per UAV
//!
//! [agent]
//! kind = "dqn"                             # "qtable" | "dqn" | "random"
//! checkpoint = "agent.skag"                # optional; trained at startup otherwise
//! [agent.dqn]                              # DqnParams
//! variant = "ddqn-soft"
//! [agent.qtable]
//! gamma = 0.9
//! [agent.train]
//! episodes = 300
//! slots_per_episode = 100
//! ```
//!
//! Unknown keys are rejected. Relative paths are taken from the working
//! directory.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::channel::{LinkModel, TransitionMatrix};
use crate::error::{Error, Result};
use crate::fusion::FusionRule;
use crate::scheduler::{DqnParams, EpsilonSchedule, LearningRate, MAX_TABULAR_CHANNELS};
use crate::spectrum::{RadioParams, SlotTiming};

/// Sensing SINR of the preset link model used when `[link]` is omitted.
pub const DEFAULT_SENSING_SINR_DB: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_slots")]
    pub slots_per_episode: usize,
    #[serde(default)]
    pub fusion_n: Option<usize>,
    #[serde(default)]
    pub request_probability: Option<Vec<f64>>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub radio: RadioParams,
    #[serde(default)]
    pub timing: SlotTiming,
    pub channels: Vec<TransitionMatrix>,
    #[serde(default)]
    pub link: Option<LinkModel>,
    #[serde(default)]
    pub sensing: SensingSpec,
    #[serde(default)]
    pub agent: AgentSpec,
}

fn default_episodes() -> usize {
    10
}

fn default_slots() -> usize {
    100
}

/// How each UAV turns the true occupancy into its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SensingSpec {
    /// Reports equal the true occupancy; no I/Q is synthesized.
    Perfect,
    /// Energy detector calibrated per UAV, at its sensing SINR, before the run.
    Energy {
        #[serde(default = "default_samples")]
        samples_per_observation: usize,
        /// Default `15 N / (16 M)`, which leaves guard bins at both edges.
        #[serde(default)]
        subcarriers_per_subchannel: Option<usize>,
        #[serde(default = "default_calibration")]
        calibration_per_uav: usize,
    },
    /// Saved sensing models: one shared by all UAVs or one per UAV.
    Model { paths: Vec<PathBuf> },
}

fn default_samples() -> usize {
    1024
}

fn default_calibration() -> usize {
    400
}

impl Default for SensingSpec {
    fn default() -> Self {
        SensingSpec::Energy {
            samples_per_observation: default_samples(),
            subcarriers_per_subchannel: None,
            calibration_per_uav: default_calibration(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Qtable,
    Dqn,
    /// Uniform random actions; a baseline.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TabularParams {
    pub gamma: f64,
    pub learning_rate: LearningRate,
}

impl Default for TabularParams {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            learning_rate: LearningRate::RescaledHarmonic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentTraining {
    pub episodes: usize,
    pub slots_per_episode: usize,
    /// Actions drawn per training slot; default `min(K, M + 1)`.
    pub allocations: Option<usize>,
    pub epsilon: EpsilonSchedule,
}

impl Default for AgentTraining {
    fn default() -> Self {
        Self {
            episodes: 300,
            slots_per_episode: 100,
            allocations: None,
            epsilon: EpsilonSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub kind: AgentKind,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub dqn: DqnParams,
    #[serde(default)]
    pub qtable: TabularParams,
    #[serde(default)]
    pub train: AgentTraining,
}

impl Default for AgentSpec {
    fn default() -> Self {
        Self {
            kind: AgentKind::Dqn,
            checkpoint: None,
            dqn: DqnParams::default(),
            qtable: TabularParams::default(),
            train: AgentTraining::default(),
        }
    }
}

/// Deserializes TOML; errors carry the dotted path of the offending key.
pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(vec![e.to_string().trim().to_owned()]))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(vec![format!("{path}: {}", e.inner().to_string().trim())])
    })
}

/// [`parse_toml`] on a file, with the file name in front of each message.
pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    parse_toml(&text).map_err(|e| prefix_path(e, path))
}

fn prefix_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Config(list) => Error::Config(list.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
        other => other,
    }
}

impl SimConfig {
    /// `K` UAVs over `M` channels with default chains, radio and timing,
    /// energy-detector sensing and a DDQN-soft agent.
    pub fn preset(num_uavs: usize, num_channels: usize, seed: u64) -> Self {
        Self {
            seed,
            episodes: default_episodes(),
            slots_per_episode: default_slots(),
            fusion_n: None,
            request_probability: None,
            output_dir: None,
            radio: RadioParams {
                num_subchannels: num_channels,
                num_uavs,
                ..RadioParams::default()
            },
            timing: SlotTiming::default(),
            channels: vec![TransitionMatrix::default(); num_channels],
            link: None,
            sensing: SensingSpec::default(),
            agent: AgentSpec::default(),
        }
    }

    /// Parses and validates; parse errors name the offending key path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: SimConfig = parse_toml(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let config: SimConfig = read_toml(path)?;
        config.validate().map_err(|e| prefix_path(e, path))?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format {
            what: "config",
            reason: e.to_string(),
        })
    }

    pub fn num_uavs(&self) -> usize {
        self.radio.num_uavs
    }

    pub fn num_channels(&self) -> usize {
        self.radio.num_subchannels
    }

    pub fn link(&self) -> LinkModel {
        self.link
            .clone()
            .unwrap_or_else(|| LinkModel::preset(self.num_uavs(), self.num_channels(), DEFAULT_SENSING_SINR_DB))
    }

    pub fn fusion_rule(&self) -> Result<FusionRule> {
        match self.fusion_n {
            Some(n) => FusionRule::new(n, self.num_uavs()),
            None => FusionRule::majority(self.num_uavs()),
        }
    }

    pub fn request_probabilities(&self) -> Vec<f64> {
        self.request_probability
            .clone()
            .unwrap_or_else(|| vec![1.0; self.num_uavs()])
    }

    pub fn training_allocations(&self) -> usize {
        self.agent
            .train
            .allocations
            .unwrap_or_else(|| self.num_uavs().min(self.num_channels() + 1))
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        fn check(errors: &mut Vec<String>, path: &str, r: Result<()>) {
            if let Err(e) = r {
                errors.push(format!("{path}: {e}"));
            }
        }
        check(&mut errors, "radio", self.radio.validate());
        check(&mut errors, "timing", self.timing.validate());
        let (k, m) = (self.num_uavs(), self.num_channels());

        if self.slots_per_episode == 0 {
            errors.push("slots_per_episode: must be >= 1".to_owned());
        }
        if self.channels.len() != m {
            errors.push(format!("channels: {} entries for {m} sub-channels", self.channels.len()));
        }
        for (i, c) in self.channels.iter().enumerate() {
            check(&mut errors, &format!("channels[{i}]"), c.validate());
        }
        if let Some(link) = &self.link {
            check(&mut errors, "link", link.validate(k, m));
        }
        if k > 0 {
            check(&mut errors, "fusion_n", self.fusion_rule().map(|_| ()));
        }
        if let Some(q) = &self.request_probability {
            if q.len() != k {
                errors.push(format!("request_probability: {} entries for {k} UAVs", q.len()));
            }
            for (i, p) in q.iter().enumerate() {
                if !(0.0..=1.0).contains(p) {
                    errors.push(format!("request_probability[{i}]: {p} outside [0, 1]"));
                }
            }
        }

        match &self.sensing {
            SensingSpec::Perfect => {}
            SensingSpec::Energy {
                samples_per_observation: n,
                subcarriers_per_subchannel,
                calibration_per_uav,
            } => {
                if !n.is_power_of_two() {
                    errors.push(format!("sensing.samples_per_observation: {n} is not a power of two"));
                }
                if m > 32 {
                    errors.push(format!("sensing: at most 32 sub-channels can be synthesized, got {m}"));
                }
                if m > 0 {
                    let width = subcarriers_per_subchannel.unwrap_or(n * 15 / (16 * m));
                    if width == 0 || width * m > *n {
                        errors.push(format!(
                            "sensing.subcarriers_per_subchannel: {width} × {m} does not fit in {n} samples"
                        ));
                    }
                }
                if *calibration_per_uav < 10 {
                    errors.push("sensing.calibration_per_uav: must be >= 10".to_owned());
                }
            }
            SensingSpec::Model { paths } => {
                if paths.len() != 1 && paths.len() != k {
                    errors.push(format!("sensing.paths: need 1 or {k} models, got {}", paths.len()));
                }
            }
        }

        let agent = &self.agent;
        match agent.kind {
            AgentKind::Qtable => {
                if m > MAX_TABULAR_CHANNELS {
                    errors.push(format!(
                        "agent.kind: tabular agent supports at most {MAX_TABULAR_CHANNELS} channels, got {m}"
                    ));
                }
                if !(0.0..1.0).contains(&agent.qtable.gamma) {
                    errors.push(format!("agent.qtable.gamma: {} outside [0, 1)", agent.qtable.gamma));
                }
            }
            AgentKind::Dqn => check(&mut errors, "agent.dqn", agent.dqn.validate()),
            AgentKind::Random => {}
        }
        if agent.kind != AgentKind::Random && agent.checkpoint.is_none() {
            let t = &agent.train;
            if t.episodes == 0 || t.slots_per_episode == 0 {
                errors.push("agent.train: episodes and slots_per_episode must be >= 1".to_owned());
            }
            let a = self.training_allocations();
            if a == 0 || a > k || a > m + 1 {
                errors.push(format!("agent.train.allocations: {a} outside 1..=min(K, M + 1)"));
            }
            check(&mut errors, "agent.train.epsilon", t.epsilon.validate());
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}

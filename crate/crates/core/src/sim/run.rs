use std::fs::File;
use std::io::BufReader;

use rand::Rng;

use super::config::{AgentKind, SensingSpec, SimConfig};
use super::report::{summarize, RunReport, SlotRecord};
use crate::channel::{db_to_linear, EnvState, LinkModel};
use crate::dataset::{generate_dataset, OccupancySource};
use crate::error::{invalid, Error, Result};
use crate::fusion::{fuse, FusionRule};
use crate::iq::{SynthConfig, Synthesizer};
use crate::rng::{domain, substream, SimRng};
use crate::scheduler::{
    epsilon_greedy_k, read_agent, train_agent, Action, Agent, AgentState, DqnAgent, QTable, SchedulingEnv,
    TrainConfig, TrainingLog,
};
use crate::sensing::{calibrate_energy_detector, read_model, SensingModel};
use crate::spectrum::{
    access_cost, collision_indicator, sensing_cost, throughput, validate_assignment, Assignment, OccupancyVector,
    PairRecord, SlotLedger,
};

/// One UAV's path from true occupancy to its report.
#[derive(Debug, Clone)]
pub enum Sensor {
    Perfect,
    Model { model: SensingModel, synth: Synthesizer },
}

impl Sensor {
    pub fn from_model(model: SensingModel) -> Self {
        let synth = Synthesizer::new(*model.layout());
        Sensor::Model { model, synth }
    }

    fn num_channels(&self) -> Option<usize> {
        match self {
            Sensor::Perfect => None,
            Sensor::Model { model, .. } => Some(model.layout().num_subchannels),
        }
    }

    /// Synthesizes a capture of `truth` at `sinr_db` and classifies it.
    pub fn sense(&self, truth: &OccupancyVector, sinr_db: f64, rng: &mut SimRng) -> Result<OccupancyVector> {
        match self {
            Sensor::Perfect => Ok(truth.clone()),
            Sensor::Model { model, synth } => model.predict_occupancy(&synth.synthesize(truth, sinr_db, rng)?),
        }
    }
}

/// Chooses next-slot actions from the fused state.
#[derive(Debug, Clone)]
pub enum Allocator {
    Learned(Agent),
    Random,
}

impl Allocator {
    pub fn name(&self) -> &'static str {
        match self {
            Allocator::Learned(a) => a.name(),
            Allocator::Random => "random",
        }
    }

    fn choose(&self, state: &AgentState, k: usize, m: usize, rng: &mut SimRng) -> Result<Vec<Action>> {
        match self {
            Allocator::Learned(a) => a.allocate(state, k),
            Allocator::Random => epsilon_greedy_k(&vec![0.0; m + 1], k, 1.0, rng),
        }
    }
}

/// Running state of one simulation.
#[derive(Debug)]
pub struct Simulation {
    config: SimConfig,
    link: LinkModel,
    rule: FusionRule,
    requests: Vec<f64>,
    sensors: Vec<Sensor>,
    allocator: Allocator,
    env: EnvState,
    /// Allocation made last slot and the fused vector it was made from.
    pending: Option<(Assignment, OccupancyVector)>,
    episode: u64,
    slot: u64,
    request_rng: SimRng,
    sensing_rng: SimRng,
    policy_rng: SimRng,
}

/// Evaluation episodes draw environment and policy streams past the
/// indices used by agent training.
const EVALUATION_STREAM_OFFSET: u64 = 1 << 32;

impl Simulation {
    pub fn new(config: SimConfig, sensors: Vec<Sensor>, allocator: Allocator) -> Result<Self> {
        config.validate()?;
        let (k, m) = (config.num_uavs(), config.num_channels());
        if sensors.len() != k {
            return Err(Error::DimensionMismatch {
                context: "sensors",
                expected: k,
                actual: sensors.len(),
            });
        }
        for s in &sensors {
            if let Some(width) = s.num_channels() {
                if width != m {
                    return Err(Error::DimensionMismatch {
                        context: "sensing model channels",
                        expected: m,
                        actual: width,
                    });
                }
            }
        }
        if let Allocator::Learned(agent) = &allocator {
            if agent.num_channels() != m {
                return Err(Error::DimensionMismatch {
                    context: "agent channels",
                    expected: m,
                    actual: agent.num_channels(),
                });
            }
        }
        let env = EnvState::from_stationary(&config.channels, 0)?;
        let seed = config.seed;
        Ok(Self {
            link: config.link(),
            rule: config.fusion_rule()?,
            requests: config.request_probabilities(),
            sensors,
            allocator,
            env,
            pending: None,
            episode: 0,
            slot: 0,
            request_rng: substream(seed, domain::REQUESTS, 0),
            sensing_rng: substream(seed, domain::SENSING, 0),
            policy_rng: substream(seed, domain::POLICY, EVALUATION_STREAM_OFFSET),
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn allocator(&self) -> &Allocator {
        &self.allocator
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }

    pub fn true_occupancy(&self) -> &OccupancyVector {
        &self.env.true_occupancy
    }

    /// Redraws the occupancy from the stationary law and drops any
    /// pending allocation. Slot numbering continues across episodes.
    pub fn start_episode(&mut self, episode: u64) -> Result<()> {
        let seed = self.config.seed;
        let index = EVALUATION_STREAM_OFFSET + episode;
        let env_seed = substream(seed, domain::ENVIRONMENT, index).random();
        self.env = EnvState::from_stationary(&self.config.channels, env_seed)?;
        self.request_rng = substream(seed, domain::REQUESTS, episode);
        self.sensing_rng = substream(seed, domain::SENSING, episode);
        self.policy_rng = substream(seed, domain::POLICY, index);
        self.pending = None;
        self.episode = episode;
        Ok(())
    }

    /// Request, sense, fuse, allocate for the next slot, transmit on last
    /// slot's allocation, then advance the primary users.
    pub fn run_slot(&mut self) -> Result<SlotRecord> {
        let (timing, radio) = (self.config.timing, self.config.radio);
        let m = self.config.num_channels();
        let truth = self.env.true_occupancy.clone();

        let requests: Vec<bool> = self.requests.iter().map(|&q| self.request_rng.random_bool(q)).collect();

        let mut reports = Vec::with_capacity(self.sensors.len());
        for (uav, sensor) in self.sensors.iter().enumerate() {
            reports.push(sensor.sense(&truth, self.link.sensing_sinr(uav)?, &mut self.sensing_rng)?);
        }
        let sensing_costs = vec![sensing_cost(&timing, &radio); reports.len()];
        let fused = fuse(&reports, &self.rule)?;

        let requesters: Vec<usize> = (0..requests.len()).filter(|&u| requests[u]).collect();
        let mut next = Assignment::empty();
        if !requesters.is_empty() {
            let state = AgentState::Fused(fused.clone());
            let k = requesters.len().min(m + 1);
            let actions = self.allocator.choose(&state, k, m, &mut self.policy_rng)?;
            for (&uav, a) in requesters.iter().zip(&actions) {
                if let Some(ch) = a.channel() {
                    if fused.is_vacant(ch) {
                        next.push(uav, ch);
                    }
                }
            }
        }
        validate_assignment(&next, &fused).map_err(Error::ConstraintViolation)?;

        let mut transmissions = Vec::new();
        let basis = match self.pending.take() {
            Some((assignment, basis)) => {
                for &(uav, channel) in assignment.pairs() {
                    let sinr = db_to_linear(self.link.sinr_for(uav, channel)?);
                    transmissions.push(PairRecord {
                        uav,
                        channel,
                        collision: collision_indicator(truth.bit(channel), basis.bit(channel)),
                        throughput: throughput(&timing, &radio, sinr)?,
                        access_cost: access_cost(&timing, &radio),
                    });
                }
                Some(basis)
            }
            None => None,
        };
        let mut ledger = SlotLedger {
            slot: self.slot,
            transmissions,
            allocation_basis: basis,
            next_assignment: next.clone(),
            fused: fused.clone(),
            true_occupancy: truth,
            sensing_costs,
            utility: 0.0,
            energy_efficiency: None,
        };
        ledger.utility = ledger.recompute_utility();
        ledger.energy_efficiency = ledger.recompute_energy_efficiency();

        self.pending = Some((next, fused));
        self.env.advance(&self.config.channels)?;
        self.slot += 1;
        Ok(SlotRecord {
            episode: self.episode,
            requests,
            reports,
            ledger,
        })
    }
}

/// Builds each UAV's sensor as the config describes. Energy detectors are
/// calibrated on fresh captures at the UAV's own sensing SINR.
pub fn build_sensors(config: &SimConfig) -> Result<Vec<Sensor>> {
    let (k, m) = (config.num_uavs(), config.num_channels());
    let link = config.link();
    match &config.sensing {
        SensingSpec::Perfect => Ok(vec![Sensor::Perfect; k]),
        SensingSpec::Energy {
            samples_per_observation,
            subcarriers_per_subchannel,
            calibration_per_uav,
        } => {
            let n = *samples_per_observation;
            let mut sensors = Vec::with_capacity(k);
            for uav in 0..k {
                let synth = SynthConfig {
                    num_subchannels: m,
                    samples_per_observation: n,
                    subcarriers_per_subchannel: subcarriers_per_subchannel.unwrap_or(n * 15 / (16 * m)),
                    sinr_grid_db: vec![link.sensing_sinr(uav)?],
                    seed: substream(config.seed, domain::SYNTH, uav as u64).random(),
                    ..SynthConfig::default()
                };
                let source = OccupancySource::Markov {
                    matrices: config.channels.clone(),
                };
                let dataset = generate_dataset(&synth, &source, *calibration_per_uav)?;
                sensors.push(Sensor::from_model(calibrate_energy_detector(&dataset, 0, 0)?));
            }
            Ok(sensors)
        }
        SensingSpec::Model { paths } => {
            let mut models = Vec::with_capacity(paths.len());
            for p in paths {
                let mut r = BufReader::new(File::open(p).map_err(|e| {
                    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))
                })?);
                models.push(read_model(&mut r)?);
            }
            Ok((0..k)
                .map(|u| Sensor::from_model(models[u.min(models.len() - 1)].clone()))
                .collect())
        }
    }
}

/// Loads or trains the allocator. Training runs on the perfect-sensing
/// scheduling environment built from the config's chains and link table.
pub fn build_allocator(config: &SimConfig) -> Result<(Allocator, Option<TrainingLog>)> {
    let spec = &config.agent;
    if spec.kind == AgentKind::Random {
        return Ok((Allocator::Random, None));
    }
    if let Some(path) = &spec.checkpoint {
        let agent = read_agent(&mut BufReader::new(File::open(path)?))?;
        let matches = matches!(
            (&agent, spec.kind),
            (Agent::Tabular(_), AgentKind::Qtable) | (Agent::Dqn(_), AgentKind::Dqn)
        );
        if !matches {
            return Err(invalid("agent.checkpoint", format!("holds a {} agent", agent.name())));
        }
        return Ok((Allocator::Learned(agent), None));
    }
    let m = config.num_channels();
    let mut agent = match spec.kind {
        AgentKind::Qtable => Agent::Tabular(QTable::new(m, spec.qtable.gamma, spec.qtable.learning_rate)?),
        _ => Agent::Dqn(DqnAgent::new(m, spec.dqn.clone(), config.seed)?),
    };
    let mut env = SchedulingEnv::from_link_model(config.channels.clone(), &config.link())?;
    let train = TrainConfig {
        episodes: spec.train.episodes,
        slots_per_episode: spec.train.slots_per_episode,
        allocations: config.training_allocations(),
        epsilon: spec.train.epsilon,
        seed: config.seed,
        record_wall_time: false,
    };
    let log = train_agent(&mut agent, &mut env, &train)?;
    Ok((Allocator::Learned(agent), Some(log)))
}

/// Runs `episodes × slots_per_episode` slots with the given sensors and
/// allocator.
pub fn simulate(config: &SimConfig, sensors: Vec<Sensor>, allocator: Allocator) -> Result<RunReport> {
    let mut sim = Simulation::new(config.clone(), sensors, allocator)?;
    let mut records = Vec::with_capacity(config.episodes * config.slots_per_episode);
    for episode in 0..config.episodes {
        sim.start_episode(episode as u64)?;
        for _ in 0..config.slots_per_episode {
            records.push(sim.run_slot()?);
        }
    }
    let agent = sim.allocator().name().to_owned();
    let sensing_sinr_db = sim.link().sensing_sinr_db.clone();
    let summary = summarize(&agent, config.num_uavs(), &records)?;
    Ok(RunReport {
        agent,
        sensing_sinr_db,
        records,
        summary,
        training: None,
    })
}

/// Validates the config, builds sensors and allocator, and runs it.
pub fn run_simulation(config: &SimConfig) -> Result<RunReport> {
    config.validate()?;
    let sensors = build_sensors(config)?;
    let (allocator, training) = build_allocator(config)?;
    let mut report = simulate(config, sensors, allocator)?;
    report.training = training;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::TransitionMatrix;
    use crate::scheduler::{AgentState, LearningRate};
    use crate::sim::config::SensingSpec;

    fn perfect(k: usize, m: usize) -> SimConfig {
        let mut c = SimConfig::preset(k, m, 5);
        c.sensing = SensingSpec::Perfect;
        c
    }

    #[test]
    fn no_requests_still_pays_for_sensing() {
        let mut c = perfect(3, 4);
        c.request_probability = Some(vec![0.0; 3]);
        c.episodes = 1;
        c.slots_per_episode = 20;
        let report = simulate(&c, vec![Sensor::Perfect; 3], Allocator::Random).unwrap();
        let sc = sensing_cost(&c.timing, &c.radio);
        for r in &report.records {
            assert!(r.ledger.next_assignment.is_empty());
            assert!(r.ledger.transmissions.is_empty());
            assert_eq!(r.ledger.utility, 0.0);
            assert_eq!(r.ledger.sensing_costs, vec![sc; 3]);
            assert_eq!(r.ledger.energy_efficiency, Some(0.0));
        }
    }

    #[test]
    fn ledger_utility_matches_recomputation() {
        let mut c = perfect(2, 4);
        c.episodes = 2;
        c.slots_per_episode = 50;
        let report = simulate(&c, vec![Sensor::Perfect; 2], Allocator::Random).unwrap();
        assert_eq!(report.records.len(), 100);
        for r in &report.records {
            assert_eq!(r.ledger.utility, r.ledger.recompute_utility());
        }
        assert!(report.records.iter().any(|r| !r.ledger.transmissions.is_empty()));
        report.audit().unwrap();
    }

    #[test]
    fn first_slot_of_each_episode_transmits_nothing() {
        let mut c = perfect(1, 2);
        c.episodes = 3;
        c.slots_per_episode = 4;
        let report = simulate(&c, vec![Sensor::Perfect], Allocator::Random).unwrap();
        for (i, r) in report.records.iter().enumerate() {
            assert_eq!(r.ledger.slot, i as u64);
            assert_eq!(r.episode, (i / 4) as u64);
            if i % 4 == 0 {
                assert!(r.ledger.allocation_basis.is_none());
            }
        }
    }

    #[test]
    fn perfect_sensing_on_static_vacant_channel_never_collides() {
        // channel 0 never leaves vacancy, channel 1 flips every slot
        let mut c = perfect(1, 2);
        c.channels = vec![TransitionMatrix::new(0.0, 1.0).unwrap(), TransitionMatrix::new(1.0, 1.0).unwrap()];
        c.agent.kind = AgentKind::Qtable;
        c.agent.qtable.learning_rate = LearningRate::RescaledHarmonic;
        c.agent.train.episodes = 200;
        c.agent.train.slots_per_episode = 50;
        c.episodes = 5;
        c.slots_per_episode = 200;
        let report = run_simulation(&c).unwrap();
        let Allocator::Learned(agent) = build_allocator(&c).unwrap().0 else {
            panic!("expected a learned agent")
        };
        let vacant = AgentState::Fused(OccupancyVector::vacant(2));
        assert_eq!(agent.allocate(&vacant, 1).unwrap(), vec![Action::transmit(0)]);
        assert_eq!(report.summary.collisions, 0);
        assert!(report.summary.transmissions > 900);
    }

    #[test]
    fn agent_width_must_match() {
        let c = perfect(1, 2);
        let agent = Agent::Tabular(QTable::new(1, 0.9, LearningRate::Harmonic).unwrap());
        assert!(Simulation::new(c, vec![Sensor::Perfect], Allocator::Learned(agent)).is_err());
    }

    #[test]
    fn energy_sensors_follow_the_link_table() {
        let mut c = SimConfig::preset(3, 4, 1);
        c.sensing = SensingSpec::Energy {
            samples_per_observation: 256,
            subcarriers_per_subchannel: None,
            calibration_per_uav: 100,
        };
        c.agent.kind = AgentKind::Random;
        c.episodes = 2;
        c.slots_per_episode = 100;
        let report = run_simulation(&c).unwrap();
        let s = &report.summary;
        // UAV 2 senses 10 dB lower
        assert!(s.sensing[0].micro_f1 > 0.95, "{:?}", s.sensing[0]);
        assert!(s.sensing[2].micro_f1 <= s.sensing[0].micro_f1);
        assert!(s.fused_sensing.micro_f1 > 0.95);
    }

    #[test]
    fn zero_episodes_gives_empty_report() {
        let mut c = perfect(2, 3);
        c.episodes = 0;
        let report = simulate(&c, vec![Sensor::Perfect; 2], Allocator::Random).unwrap();
        assert!(report.records.is_empty());
        assert_eq!(report.summary.slots, 0);
        report.audit().unwrap();
    }
}

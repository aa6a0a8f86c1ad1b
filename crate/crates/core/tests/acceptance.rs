use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skyshare::dataset::{generate_dataset, generate_fleet_dataset, Dataset, OccupancySource, SplitPart};
use skyshare::fusion::{fuse, FusionRule};
use skyshare::iq::SynthConfig;
use skyshare::nn::{gradient_check, Activation, LossSpec, Network};
use skyshare::scheduler::{
    episode_utility, expected_reward_table, space_sizes, train_agent, value_iteration, write_agent,
    Agent, AgentState, DqnAgent, DqnParams, DqnVariant, EpsilonSchedule, LearningRate, QTable, SchedulingEnv,
    TrainConfig, TrainingLog,
};
use skyshare::sensing::{micro_metrics, train_classifier, write_model, ClassifierParams, SensingMetrics};
use skyshare::sim::{run_simulation, SensingSpec, SimConfig};
use skyshare::spectrum::{validate_assignment, OccupancyVector};
use skyshare::Error;

enum Outcome {
    Pass(String),
    Fail(String),
    Report(String),
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("acceptance-{name}"));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn fusion_oracle() -> Outcome {
    let mut cases = 0u64;
    let mut mismatches = 0u64;
    for k in 1..=4usize {
        for m in 1..=4usize {
            for combo in 0u64..1 << (k * m) {
                let reports: Vec<OccupancyVector> = (0..k)
                    .map(|u| OccupancyVector::from_mask(combo >> (u * m), m))
                    .collect();
                for n in 1..=k {
                    let fused = fuse(&reports, &FusionRule::new(n, k).unwrap()).unwrap();
                    for ch in 0..m {
                        let vacant_votes = (0..k).filter(|&u| combo >> (u * m + ch) & 1 == 0).count();
                        let expected = if vacant_votes >= n { 0 } else { 1 };
                        if fused.bit(ch) != expected {
                            mismatches += 1;
                        }
                    }
                    cases += 1;
                }
            }
        }
    }
    verdict(mismatches == 0, format!("{cases} (reports, n) cases, {mismatches} mismatched cells"))
}

fn test_metrics(model: &skyshare::sensing::SensingModel, obs: &[&skyshare::iq::IqObservation]) -> SensingMetrics {
    let predictions = model.predict_batch(obs).unwrap();
    let truths: Vec<OccupancyVector> = obs.iter().map(|o| o.label.clone()).collect();
    micro_metrics(&predictions, &truths, 0).unwrap()
}

fn sensing_high_sinr() -> Outcome {
    let (mut precision, mut recall) = (Vec::new(), Vec::new());
    let mut size = 0;
    for seed in 0..3 {
        let config = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        let dataset = generate_dataset(&config, &OccupancySource::Uniform, 500).unwrap();
        size = dataset.records_per_uav();
        let params = ClassifierParams {
            seed,
            ..ClassifierParams::default()
        };
        let (model, _) = train_classifier(&dataset, &params).unwrap();
        let grid = config.sinr_grid_db.iter().position(|&s| s == 20.0).unwrap();
        let obs: Vec<_> = dataset
            .part_at_sinr(SplitPart::Test, grid)
            .into_iter()
            .map(|i| &dataset.stream(0)[i])
            .collect();
        let m = test_metrics(&model, &obs);
        precision.push(m.micro_precision);
        recall.push(m.micro_recall);
    }
    let (p, r) = (mean(&precision), mean(&recall));
    verdict(
        p >= 0.9 && r >= 0.9,
        format!("M=16, {size} observations, 20 dB test slice: precision {p:.3}, recall {r:.3} (3 seeds)"),
    )
}

fn fleet_f1(dataset: &Dataset, seed: u64) -> (f64, f64) {
    let k = dataset.num_uavs;
    let mut predictions = Vec::with_capacity(k);
    for uav in 0..k {
        let params = ClassifierParams {
            seed: seed * 10 + uav as u64,
            uav,
            ..ClassifierParams::default()
        };
        let (model, _) = train_classifier(dataset, &params).unwrap();
        predictions.push(model.predict_batch(&dataset.part(SplitPart::Test, uav)).unwrap());
    }
    let truths: Vec<OccupancyVector> = dataset
        .part(SplitPart::Test, 0)
        .iter()
        .map(|o| o.label.clone())
        .collect();
    let rule = FusionRule::new(2, k).unwrap();
    let fused: Vec<OccupancyVector> = (0..truths.len())
        .map(|i| {
            let reports: Vec<_> = predictions.iter().map(|p| p[i].clone()).collect();
            fuse(&reports, &rule).unwrap()
        })
        .collect();
    let degraded = micro_metrics(&predictions[k - 1], &truths, 0).unwrap().micro_f1;
    let fused = micro_metrics(&fused, &truths, 0).unwrap().micro_f1;
    (degraded, fused)
}

fn fusion_benefit() -> Outcome {
    let mut gains = Vec::new();
    let mut detail = Vec::new();
    for seed in 0..3 {
        let config = SynthConfig {
            seed: 100 + seed,
            ..SynthConfig::default()
        };
        let dataset = generate_fleet_dataset(&config, &OccupancySource::Uniform, 250, &[0.0, 0.0, -10.0]).unwrap();
        let (degraded, fused) = fleet_f1(&dataset, seed);
        gains.push(fused - degraded);
        detail.push(format!("{fused:.3}/{degraded:.3}"));
    }
    let gain = mean(&gains);
    verdict(
        gain >= 0.05,
        format!("fused/degraded F1 {}, mean gain {gain:.3}", detail.join(" ")),
    )
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    for i in 0..20 {
        let layers = rng.random_range(1..=3usize);
        let mut dims = vec![rng.random_range(1..=64usize)];
        dims.extend((0..layers).map(|_| rng.random_range(1..=64usize)));
        let (output, loss) = match i % 3 {
            0 => (Activation::Identity, LossSpec::MeanSquaredError),
            1 => (Activation::Sigmoid, LossSpec::BinaryCrossEntropy),
            _ => (Activation::Identity, LossSpec::Huber { delta: 1.0 }),
        };
        let net = Network::new(&dims, Activation::Relu, output, &mut rng).unwrap();
        let input: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..dims[layers])
            .map(|_| match loss {
                LossSpec::BinaryCrossEntropy => f64::from(rng.random_range(0..2u8)),
                _ => rng.random_range(-1.0..1.0),
            })
            .collect();
        let report = gradient_check(&net, &input, &target, &loss, 1e-5).unwrap();
        worst = worst.max(report.max_relative_error);
        checked += report.checked;
        skipped += report.skipped_near_kink;
    }
    verdict(
        worst <= 1e-4,
        format!("20 networks, {checked} parameters checked, {skipped} near kinks, max relative error {worst:.2e}"),
    )
}

fn tabular_vs_oracle() -> Outcome {
    let mut config = SimConfig::preset(1, 2, 0);
    config.channels = vec![skyshare::channel::TransitionMatrix::new(0.2, 0.3).unwrap(); 2];
    let mut env = SchedulingEnv::from_link_model(config.channels.clone(), &config.link()).unwrap();
    let weights = env.weights().row(0).to_vec();
    let rewards = expected_reward_table(&config.channels, &weights).unwrap();
    let oracle = value_iteration(&config.channels, &rewards, 0.9, 1e-12).unwrap();

    let mut agent = Agent::Tabular(QTable::new(2, 0.9, LearningRate::RescaledHarmonic).unwrap());
    let train = TrainConfig {
        episodes: 1000,
        slots_per_episode: 100,
        epsilon: EpsilonSchedule::constant(1.0),
        ..TrainConfig::default()
    };
    train_agent(&mut agent, &mut env, &train).unwrap();
    let Agent::Tabular(table) = &agent else { unreachable!() };

    let (mut states, mut policy_errors, mut worst) = (0, 0, 0.0f64);
    for index in 0..5 {
        let state = AgentState::from_index(index, 2).unwrap();
        if table.state_visits(&state).unwrap() < 100 {
            continue;
        }
        states += 1;
        let best = oracle.optimal_actions(&state, 1e-9).unwrap();
        if !best.contains(&table.greedy(&state).unwrap()) {
            policy_errors += 1;
        }
        let learned = table.q_values(&state).unwrap();
        let exact = oracle.q_values(&state).unwrap();
        for (q, e) in learned.iter().zip(&exact) {
            worst = worst.max((q - e).abs() / e.abs());
        }
    }
    verdict(
        states > 0 && policy_errors == 0 && worst <= 0.05,
        format!("{states} states visited >= 100 times, {policy_errors} policy mismatches, max Q error {:.2}%", worst * 100.0),
    )
}

struct Scaling {
    oracle: f64,
    single: Vec<TrainingLog>,
    double: Vec<TrainingLog>,
}

fn m4_env() -> (SchedulingEnv, f64) {
    let config = SimConfig::preset(2, 4, 0);
    let env = SchedulingEnv::from_link_model(config.channels.clone(), &config.link()).unwrap();
    let weights = env.weights().row(0).to_vec();
    let rewards = expected_reward_table(&config.channels, &weights).unwrap();
    let solution = value_iteration(&config.channels, &rewards, 0.9, 1e-12).unwrap();
    let oracle = episode_utility(&config.channels, &rewards, &solution.policy, 100).unwrap();
    (env, oracle)
}

fn train_dqn(env: &mut SchedulingEnv, variant: DqnVariant, allocations: usize, seed: u64) -> TrainingLog {
    let params = DqnParams {
        variant,
        ..DqnParams::default()
    };
    let mut agent = Agent::Dqn(DqnAgent::new(4, params, seed).unwrap());
    let config = TrainConfig {
        allocations,
        seed,
        ..TrainConfig::default()
    };
    train_agent(&mut agent, env, &config).unwrap()
}

fn scaling_runs() -> Scaling {
    let (mut env, oracle) = m4_env();
    let mut single = Vec::new();
    let mut double = Vec::new();
    for seed in 0..3 {
        single.push(train_dqn(&mut env, DqnVariant::DdqnSoft, 1, seed));
        double.push(train_dqn(&mut env, DqnVariant::DdqnSoft, 2, seed));
    }
    Scaling { oracle, single, double }
}

fn near_optimality(runs: &Scaling) -> Outcome {
    let ratios: Vec<f64> = runs.single.iter().map(|l| l.tail_mean_utility(100) / runs.oracle).collect();
    let passing = ratios.iter().filter(|&&r| r >= 0.9).count();
    let listed: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    verdict(
        passing >= 2,
        format!("final-100 mean / oracle {:.3} = {} ({passing}/3 seeds >= 0.9)", runs.oracle, listed.join(", ")),
    )
}

fn two_uav_scaling(runs: &Scaling) -> Outcome {
    let ratios: Vec<f64> = runs
        .single
        .iter()
        .zip(&runs.double)
        .map(|(one, two)| two.tail_mean_utility(100) / one.tail_mean_utility(100))
        .collect();
    let ratio = mean(&ratios);
    let listed: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    verdict(
        ratio > 1.0 && ratio < 2.0,
        format!("U2/U1 per seed {}, mean {ratio:.3}", listed.join(", ")),
    )
}

fn constraint_safety() -> Outcome {
    let mut config = SimConfig::preset(3, 4, 17);
    config.sensing = SensingSpec::Energy {
        samples_per_observation: 256,
        subcarriers_per_subchannel: None,
        calibration_per_uav: 200,
    };
    config.agent.train.episodes = 30;
    config.episodes = 1000;
    config.slots_per_episode = 100;
    let report = match run_simulation(&config) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("simulation aborted: {e}")),
    };
    let mut violations = 0;
    for record in &report.records {
        let ledger = &record.ledger;
        if validate_assignment(&ledger.next_assignment, &ledger.fused).is_err() {
            violations += 1;
        }
        if let Some(basis) = &ledger.allocation_basis {
            if validate_assignment(&ledger.transmitted_assignment(), basis).is_err() {
                violations += 1;
            }
        }
    }
    let audit = report.audit();
    let transmissions = report.summary.transmissions;
    verdict(
        report.records.len() == 100_000 && violations == 0 && audit.is_ok(),
        format!(
            "{} slots, {transmissions} transmissions, {violations} violating assignments, audit {}",
            report.records.len(),
            if audit.is_ok() { "ok" } else { "failed" }
        ),
    )
}

/// Every artifact the library writes, as (name, bytes).
fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let synth = SynthConfig {
        num_subchannels: 4,
        samples_per_observation: 256,
        subcarriers_per_subchannel: 48,
        sinr_grid_db: vec![0.0, 20.0],
        seed: 9,
        ..SynthConfig::default()
    };
    let dataset = generate_fleet_dataset(&synth, &OccupancySource::Uniform, 40, &[0.0, -10.0]).unwrap();
    let mut bytes = Vec::new();
    dataset.write_to(&mut bytes).unwrap();
    out.push(("dataset".to_owned(), bytes));

    let params = ClassifierParams {
        epochs: 3,
        seed: 9,
        ..ClassifierParams::default()
    };
    let (model, _) = train_classifier(&dataset, &params).unwrap();
    let mut bytes = Vec::new();
    write_model(&model, &mut bytes).unwrap();
    out.push(("sensor model".to_owned(), bytes));

    let (mut env, _) = m4_env();
    let mut agent = Agent::Dqn(DqnAgent::new(4, DqnParams::default(), 9).unwrap());
    let config = TrainConfig {
        episodes: 10,
        slots_per_episode: 50,
        allocations: 2,
        seed: 9,
        ..TrainConfig::default()
    };
    let log = train_agent(&mut agent, &mut env, &config).unwrap();
    let mut bytes = Vec::new();
    write_agent(&agent, &mut bytes).unwrap();
    out.push(("agent checkpoint".to_owned(), bytes));
    let mut bytes = Vec::new();
    log.write_csv(&mut bytes).unwrap();
    out.push(("training log".to_owned(), bytes));

    let mut sim = SimConfig::preset(2, 4, 9);
    sim.sensing = SensingSpec::Energy {
        samples_per_observation: 256,
        subcarriers_per_subchannel: None,
        calibration_per_uav: 100,
    };
    sim.agent.train.episodes = 10;
    sim.episodes = 3;
    sim.slots_per_episode = 50;
    run_simulation(&sim).unwrap().save(dir).unwrap();
    let mut names: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    for path in names {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.push((name, fs::read(&path).unwrap()));
    }
    out
}

fn determinism() -> Outcome {
    let a = artifacts(&scratch("determinism-a"));
    let b = artifacts(&scratch("determinism-b"));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|((na, ba), (nb, bb))| na != nb || ba != bb)
        .map(|((n, _), _)| n.as_str())
        .collect();
    verdict(
        a.len() == b.len() && differing.is_empty(),
        format!("{} artifacts compared ({}), differing: {:?}", a.len(), names.join(", "), differing),
    )
}

fn sizing() -> Outcome {
    let sizes = space_sizes(16).unwrap();
    let refused = matches!(
        QTable::new(16, 0.9, LearningRate::RescaledHarmonic),
        Err(Error::TooManyChannels { m: 16, .. })
    );
    let outputs = DqnAgent::new(16, DqnParams::default(), 0)
        .unwrap()
        .q_values(&AgentState::Initial)
        .unwrap()
        .len();
    verdict(
        sizes == (65_537, 17) && refused && outputs == 17,
        format!("M=16: {} states x {} actions, tabular refused: {refused}, DQN outputs {outputs}", sizes.0, sizes.1),
    )
}

fn episodes_to(log: &TrainingLog, level: f64) -> Option<usize> {
    let utility: Vec<f64> = log.rows.iter().map(|r| r.cumulative_utility).collect();
    (10..=utility.len()).find(|&end| mean(&utility[end - 10..end]) >= level).map(|end| end - 1)
}

fn convergence_report(soft: &TrainingLog) -> Outcome {
    let (mut env, oracle) = m4_env();
    let logs = [
        ("dqn", train_dqn(&mut env, DqnVariant::Dqn, 1, 0)),
        ("ddqn", train_dqn(&mut env, DqnVariant::Ddqn, 1, 0)),
        ("ddqn-soft", soft.clone()),
    ];
    let path = scratch("convergence").join("curves.csv");
    let mut writer = csv::Writer::from_path(&path).unwrap();
    writer.write_record(["episode", "dqn", "ddqn", "ddqn-soft"]).unwrap();
    for e in 0..logs[0].1.rows.len() {
        let mut row = vec![e.to_string()];
        row.extend(logs.iter().map(|(_, l)| l.rows[e].cumulative_utility.to_string()));
        writer.write_record(&row).unwrap();
    }
    writer.flush().unwrap();
    let parts: Vec<String> = logs
        .iter()
        .map(|(name, log)| {
            let reached = episodes_to(log, 0.9 * oracle).map_or("never".to_owned(), |e| e.to_string());
            format!("{name} tail {:.1}, 90% of oracle at episode {reached}", log.tail_mean_utility(100))
        })
        .collect();
    Outcome::Report(format!("{}; curves in {}", parts.join("; "), path.display()))
}

/// Runs without the libtest harness so the per-criterion lines are always
/// printed.
fn main() -> ExitCode {
    let mut failures = Vec::new();
    let mut record = |n: usize, name: &str, started: Instant, outcome: Outcome| {
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failures.push(n);
                ("FAIL", d)
            }
            Outcome::Report(d) => ("REPORT", d),
        };
        println!("{tag} criterion {n} ({name}, {secs:.1} s): {detail}");
    };

    let t = Instant::now();
    record(1, "fusion oracle", t, fusion_oracle());
    let t = Instant::now();
    record(2, "sensing at 20 dB", t, sensing_high_sinr());
    let t = Instant::now();
    record(3, "fusion benefit", t, fusion_benefit());
    let t = Instant::now();
    record(4, "gradient check", t, gradients());
    let t = Instant::now();
    record(5, "tabular Q vs oracle", t, tabular_vs_oracle());
    let t = Instant::now();
    let runs = scaling_runs();
    record(6, "ddqn-soft near-optimality", t, near_optimality(&runs));
    record(7, "two-UAV scaling", t, two_uav_scaling(&runs));
    let t = Instant::now();
    record(8, "constraint safety", t, constraint_safety());
    let t = Instant::now();
    record(9, "determinism", t, determinism());
    let t = Instant::now();
    record(10, "sizing", t, sizing());
    let t = Instant::now();
    record(11, "convergence ordering", t, convergence_report(&runs.single[0]));

    if failures.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failures:?}");
        ExitCode::FAILURE
    }
}

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skyshare::channel::TransitionMatrix;
use skyshare::dataset::{generate_fleet_dataset, Dataset, OccupancySource, SplitPart};
use skyshare::fusion::{fuse, FusionRule};
use skyshare::iq::SynthConfig;
use skyshare::scheduler::{
    episode_utility, expected_reward_table, normalized_weights, train_agent, value_iteration, write_agent, Agent,
    DqnAgent, DqnVariant, QTable, SchedulingEnv, TrainConfig, TrainingLog, TrainingLogRow,
};
use skyshare::sensing::{
    calibrate_energy_detector, micro_metrics, read_model, train_classifier, write_model, ClassifierParams,
    SensingModel,
};
use skyshare::sim::{
    read_rows, read_toml, run_simulation, write_rows, CsvRow, SensingRow, SimConfig, SummaryRow,
    SUMMARY_FILE,
};
use skyshare::spectrum::OccupancyVector;

use crate::{Cli, Command, DetectorKind, EvalSensingArgs, GenDatasetArgs, ReportArgs, TrainAgentArgs, TrainSensorArgs, Variant};

pub enum CliError {
    Usage(String),
    Runtime(skyshare::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<skyshare::Error> for CliError {
    fn from(e: skyshare::Error) -> Self {
        match e {
            skyshare::Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenDataset(args) => gen_dataset(cli, args),
        Command::TrainSensor(args) => train_sensor(cli, args),
        Command::EvalSensing(args) => eval_sensing(cli, args),
        Command::TrainAgent(args) => train_agent_cmd(cli, args),
        Command::Simulate => simulate(cli),
        Command::Report(args) => report(cli, args),
    }
}

fn out_dir(cli: &Cli) -> CliResult<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Runtime(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into()))
}

/// Dataset generation settings (`gen-dataset --config`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DatasetSpec {
    count_per_sinr: usize,
    /// One entry per UAV stream, added to every grid SINR.
    sinr_offsets_db: Vec<f64>,
    /// Default: the default two-state chain on every sub-channel.
    occupancy: Option<OccupancySource>,
    synth: SynthConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            count_per_sinr: 200,
            sinr_offsets_db: vec![0.0, 0.0, -10.0],
            occupancy: None,
            synth: SynthConfig::default(),
        }
    }
}

fn gen_dataset(cli: &Cli, args: &GenDatasetArgs) -> CliResult<()> {
    let mut spec: DatasetSpec = match &cli.config {
        Some(p) => read_toml(p)?,
        None => DatasetSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.synth.seed = seed;
    }
    if let Some(n) = args.count_per_sinr {
        spec.count_per_sinr = n;
    }
    let m = spec.synth.num_subchannels;
    let source = spec.occupancy.clone().unwrap_or(OccupancySource::Markov {
        matrices: vec![TransitionMatrix::default(); m],
    });
    let dataset = generate_fleet_dataset(&spec.synth, &source, spec.count_per_sinr, &spec.sinr_offsets_db)?;
    let path = out_dir(cli)?.join("dataset.skiq");
    let mut w = create(&path)?;
    dataset.write_to(&mut w)?;
    w.flush()?;
    println!(
        "wrote {} observations ({} UAV streams, M = {m}) to {}",
        dataset.observations.len(),
        dataset.num_uavs,
        path.display()
    );
    Ok(())
}

fn load_dataset(cli: &Cli, path: &Option<PathBuf>) -> CliResult<Dataset> {
    let path = match path {
        Some(p) => p.clone(),
        None => cli.out.clone().unwrap_or_else(|| PathBuf::from("out")).join("dataset.skiq"),
    };
    Ok(Dataset::read_from(&mut open(&path)?)?)
}

#[derive(Serialize)]
struct CurveRow {
    epoch: usize,
    train_loss: f64,
    validation_loss: f64,
}

impl CsvRow for CurveRow {
    const HEADER: &'static [&'static str] = &["epoch", "train_loss", "validation_loss"];
}

fn test_metrics(model: &SensingModel, dataset: &Dataset, uav: usize) -> CliResult<skyshare::sensing::SensingMetrics> {
    let obs = dataset.part(SplitPart::Test, uav);
    let predictions = model.predict_batch(&obs)?;
    let truths: Vec<OccupancyVector> = obs.iter().map(|o| o.label.clone()).collect();
    Ok(micro_metrics(&predictions, &truths, 0)?)
}

fn train_sensor(cli: &Cli, args: &TrainSensorArgs) -> CliResult<()> {
    let dataset = load_dataset(cli, &args.dataset)?;
    let mut params: ClassifierParams = match &cli.config {
        Some(p) => read_toml(p)?,
        None => ClassifierParams::default(),
    };
    if let Some(seed) = cli.seed {
        params.seed = seed;
    }
    if let Some(e) = args.epochs {
        params.epochs = e;
    }
    let uavs: Vec<usize> = match args.uav {
        Some(u) if u >= dataset.num_uavs => {
            return Err(CliError::Usage(format!("--uav {u}: dataset has {} streams", dataset.num_uavs)))
        }
        Some(u) => vec![u],
        None => (0..dataset.num_uavs).collect(),
    };
    let out = out_dir(cli)?;
    for uav in uavs {
        let model = match args.detector {
            DetectorKind::Energy => calibrate_energy_detector(&dataset, uav, 0)?,
            DetectorKind::Classifier => {
                params.uav = uav;
                let (model, curve) = train_classifier(&dataset, &params)?;
                let rows: Vec<CurveRow> = curve
                    .train_loss
                    .iter()
                    .zip(&curve.validation_loss)
                    .enumerate()
                    .map(|(epoch, (&t, &v))| CurveRow {
                        epoch,
                        train_loss: t,
                        validation_loss: v,
                    })
                    .collect();
                write_rows(&out.join(format!("sensor-uav{uav}-curve.csv")), &rows)?;
                model
            }
        };
        let path = out.join(format!("sensor-uav{uav}.sksm"));
        let mut w = create(&path)?;
        write_model(&model, &mut w)?;
        w.flush()?;
        let m = test_metrics(&model, &dataset, uav)?;
        println!(
            "uav {uav}: {} test precision {:.3} recall {:.3} f1 {:.3} -> {}",
            model.kind_name(),
            m.micro_precision,
            m.micro_recall,
            m.micro_f1,
            path.display()
        );
    }
    Ok(())
}

fn eval_sensing(cli: &Cli, args: &EvalSensingArgs) -> CliResult<()> {
    let dataset = load_dataset(cli, &args.dataset)?;
    let k = dataset.num_uavs;
    let paths: Vec<PathBuf> = if args.models.is_empty() {
        let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        (0..k).map(|u| dir.join(format!("sensor-uav{u}.sksm"))).collect()
    } else {
        args.models.clone()
    };
    if paths.len() != 1 && paths.len() != k {
        return Err(CliError::Usage(format!("--models: need 1 or {k} models, got {}", paths.len())));
    }
    let mut models = Vec::with_capacity(paths.len());
    for p in &paths {
        models.push(read_model(&mut open(p)?)?);
    }
    let rule = match args.fusion_n {
        Some(n) => FusionRule::new(n, k)?,
        None => FusionRule::majority(k)?,
    };

    let mut rows = Vec::new();
    for (g, &grid_sinr) in dataset.config.sinr_grid_db.iter().enumerate() {
        let positions = dataset.part_at_sinr(SplitPart::Test, g);
        if positions.is_empty() {
            continue;
        }
        let mut per_uav = Vec::with_capacity(k);
        for uav in 0..k {
            let stream = dataset.stream(uav);
            let obs: Vec<_> = positions.iter().map(|&i| &stream[i]).collect();
            let predictions = models[uav.min(models.len() - 1)].predict_batch(&obs)?;
            let truths: Vec<OccupancyVector> = obs.iter().map(|o| o.label.clone()).collect();
            let m = micro_metrics(&predictions, &truths, 0)?;
            rows.push(SensingRow::new(Some(uav), Some(f64::from(obs[0].sinr_db)), &m));
            per_uav.push(predictions);
        }
        let truths: Vec<OccupancyVector> = positions.iter().map(|&i| dataset.stream(0)[i].label.clone()).collect();
        let mut fused = Vec::with_capacity(positions.len());
        for i in 0..positions.len() {
            let reports: Vec<OccupancyVector> = per_uav.iter().map(|p| p[i].clone()).collect();
            fused.push(fuse(&reports, &rule)?);
        }
        rows.push(SensingRow::new(None, Some(grid_sinr), &micro_metrics(&fused, &truths, 0)?));
    }
    let path = out_dir(cli)?.join("sensing.csv");
    write_rows(&path, &rows)?;
    println!("{:>6} {:>8} {:>9} {:>7} {:>6}", "uav", "sinr_db", "precision", "recall", "f1");
    for r in &rows {
        let who = r.uav.map_or("fused".to_owned(), |u| u.to_string());
        println!(
            "{who:>6} {:>8.1} {:>9.3} {:>7.3} {:>6.3}",
            r.sinr_db.unwrap_or(f64::NAN),
            r.precision,
            r.recall,
            r.f1
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Qtable => "qtable",
        Variant::Dqn => "dqn",
        Variant::Ddqn => "ddqn",
        Variant::DdqnSoft => "ddqn-soft",
    }
}

fn train_agent_cmd(cli: &Cli, args: &TrainAgentArgs) -> CliResult<()> {
    let uavs = usize::from(args.uavs);
    let mut config = match &cli.config {
        Some(p) => SimConfig::from_file(p)?,
        None => SimConfig::preset(uavs, 4, 0),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if config.num_uavs() < uavs {
        return Err(CliError::Usage(format!(
            "--uavs {uavs}: configuration has {} UAVs",
            config.num_uavs()
        )));
    }
    let m = config.num_channels();
    let spec = &config.agent;
    let (mut agent, gamma) = match args.variant {
        Variant::Qtable => (
            Agent::Tabular(QTable::new(m, spec.qtable.gamma, spec.qtable.learning_rate)?),
            spec.qtable.gamma,
        ),
        v => {
            let variant = match v {
                Variant::Dqn => DqnVariant::Dqn,
                Variant::Ddqn => DqnVariant::Ddqn,
                _ => DqnVariant::DdqnSoft,
            };
            let params = skyshare::scheduler::DqnParams {
                variant,
                ..spec.dqn.clone()
            };
            (Agent::Dqn(DqnAgent::new(m, params, config.seed)?), spec.dqn.gamma)
        }
    };
    let train = TrainConfig {
        episodes: args.episodes.unwrap_or(spec.train.episodes),
        slots_per_episode: args.slots.unwrap_or(spec.train.slots_per_episode),
        allocations: uavs,
        epsilon: spec.train.epsilon,
        seed: config.seed,
        record_wall_time: false,
    };
    let link = config.link();
    let mut env = SchedulingEnv::from_link_model(config.channels.clone(), &link)?;
    let log = train_agent(&mut agent, &mut env, &train)?;

    let out = out_dir(cli)?;
    let name = variant_name(args.variant);
    let log_path = out.join(format!("training-{name}-uav{uavs}.csv"));
    log.write_csv(create(&log_path)?)?;
    let mut w = create(&out.join(format!("agent-{name}-uav{uavs}.skag")))?;
    write_agent(&agent, &mut w)?;
    w.flush()?;

    let tail = log.tail_mean_utility(100);
    print!("{name} ({uavs} UAV): final-100 mean utility {tail:.3} per episode");
    if uavs == 1 && m <= skyshare::scheduler::MAX_ORACLE_CHANNELS {
        let weights = normalized_weights(&link)?;
        let row: Vec<f64> = weights.row(0).to_vec();
        let rewards = expected_reward_table(&config.channels, &row)?;
        let oracle = value_iteration(&config.channels, &rewards, gamma, 1e-10)?;
        let best = episode_utility(&config.channels, &rewards, &oracle.policy, train.slots_per_episode)?;
        print!(", oracle {best:.3} (ratio {:.3})", tail / best);
    }
    println!();
    println!("wrote {}", log_path.display());
    Ok(())
}

fn simulate(cli: &Cli) -> CliResult<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("simulate requires --config PATH".to_owned()))?;
    let mut config = SimConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let report = run_simulation(&config)?;
    report.save(&out)?;
    let s = &report.summary;
    println!(
        "{}: {} slots, mean utility {:.1} bits/slot, EE {}, collision rate {}, fused F1 {:.3}",
        s.agent,
        s.slots,
        s.mean_utility,
        s.energy_efficiency.map_or("n/a".to_owned(), |v| format!("{v:.1} bits/J")),
        s.collision_rate.map_or("n/a".to_owned(), |v| format!("{v:.4}")),
        s.fused_sensing.micro_f1
    );
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct RunComparisonRow {
    run: String,
    agent: String,
    slots: u64,
    mean_utility: f64,
    energy_efficiency: Option<f64>,
    collision_rate: Option<f64>,
    fused_f1: f64,
}

impl CsvRow for RunComparisonRow {
    const HEADER: &'static [&'static str] = &[
        "run",
        "agent",
        "slots",
        "mean_utility",
        "energy_efficiency",
        "collision_rate",
        "fused_f1",
    ];
}

#[derive(Serialize)]
struct TrainingComparisonRow {
    source: String,
    episodes: usize,
    final_mean_utility: f64,
    /// First episode whose 10-episode moving average reaches 90% of the
    /// final mean; empty if never.
    episodes_to_90pct: Option<usize>,
}

impl CsvRow for TrainingComparisonRow {
    const HEADER: &'static [&'static str] = &["source", "episodes", "final_mean_utility", "episodes_to_90pct"];
}

#[derive(Serialize)]
struct CurvePoint {
    source: String,
    episode: usize,
    cumulative_utility: f64,
    collisions: usize,
    epsilon: f64,
}

impl CsvRow for CurvePoint {
    const HEADER: &'static [&'static str] = &["source", "episode", "cumulative_utility", "collisions", "epsilon"];
}

/// Episodes needed for the 10-episode moving average to reach 90% of
/// `target`.
pub fn episodes_to_fraction(utilities: &[f64], target: f64) -> Option<usize> {
    const WINDOW: usize = 10;
    if utilities.len() < WINDOW || target <= 0.0 {
        return None;
    }
    (WINDOW - 1..utilities.len()).find(|&end| {
        let mean = utilities[end + 1 - WINDOW..=end].iter().sum::<f64>() / WINDOW as f64;
        mean >= 0.9 * target
    })
}

fn training_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("training") && name.ends_with(".csv")
        })
        .collect();
    files.sort();
    Ok(files)
}

fn report(cli: &Cli, args: &ReportArgs) -> CliResult<()> {
    let mut runs = Vec::new();
    let mut trainings = Vec::new();
    let mut curves = Vec::new();
    for dir in &args.dirs {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("{}: not a directory", dir.display())));
        }
        let summary = dir.join(SUMMARY_FILE);
        if summary.exists() {
            for s in read_rows::<SummaryRow>(&summary)? {
                runs.push(RunComparisonRow {
                    run: dir.display().to_string(),
                    agent: s.agent,
                    slots: s.slots,
                    mean_utility: s.mean_utility,
                    energy_efficiency: s.energy_efficiency,
                    collision_rate: s.collision_rate,
                    fused_f1: s.fused_f1,
                });
            }
        }
        for file in training_files(dir)? {
            let rows: Vec<TrainingLogRow> = read_rows(&file)?;
            let source = file.display().to_string();
            let log = TrainingLog { rows };
            let utilities: Vec<f64> = log.rows.iter().map(|r| r.cumulative_utility).collect();
            let final_mean = log.tail_mean_utility(100);
            trainings.push(TrainingComparisonRow {
                source: source.clone(),
                episodes: log.rows.len(),
                final_mean_utility: final_mean,
                episodes_to_90pct: episodes_to_fraction(&utilities, final_mean),
            });
            curves.extend(log.rows.iter().map(|r| CurvePoint {
                source: source.clone(),
                episode: r.episode,
                cumulative_utility: r.cumulative_utility,
                collisions: r.collisions,
                epsilon: r.epsilon,
            }));
        }
    }
    let out = out_dir(cli)?;
    write_rows(&out.join("comparison.csv"), &runs)?;
    write_rows(&out.join("training-comparison.csv"), &trainings)?;
    write_rows(&out.join("curves.csv"), &curves)?;

    if !runs.is_empty() {
        println!("{:<32} {:<10} {:>12} {:>12} {:>10} {:>8}", "run", "agent", "utility", "EE", "coll.rate", "fusedF1");
        for r in &runs {
            println!(
                "{:<32} {:<10} {:>12.1} {:>12} {:>10} {:>8.3}",
                r.run,
                r.agent,
                r.mean_utility,
                r.energy_efficiency.map_or("n/a".to_owned(), |v| format!("{v:.1}")),
                r.collision_rate.map_or("n/a".to_owned(), |v| format!("{v:.4}")),
                r.fused_f1
            );
        }
    }
    if !trainings.is_empty() {
        println!("{:<48} {:>8} {:>12} {:>10}", "training log", "episodes", "final100", "to90%");
        for t in &trainings {
            println!(
                "{:<48} {:>8} {:>12.3} {:>10}",
                t.source,
                t.episodes,
                t.final_mean_utility,
                t.episodes_to_90pct.map_or("-".to_owned(), |e| e.to_string())
            );
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

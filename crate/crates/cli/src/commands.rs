use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ergo_hri::dula::{evaluate, kfold_cv, load_model, save_model, train, EvalReport, MlpModel, TrainConfig};
use ergo_hri::estimator::{
    deviation_metrics, offline_traj_ik, online_ik, read_estimate_csv, read_observations_csv, run_filter,
    write_estimate_csv, write_observations_csv, EstimatorConfig, IkConfig, PostureTrajectory,
};
use ergo_hri::kinematics::{HumanModel, JOINT_NAMES};
use ergo_hri::optimizer::{CemConfig, ErgonomicsObjective, GradientConfig};
use ergo_hri::rula::{
    generate_dataset, read_dataset, read_dataset_csv, write_dataset, write_dataset_csv, CtxSampler, DatasetConfig,
    PostureDataset, TaskContext,
};
use ergo_hri::simulator::{
    generate_ground_truth, run_episode, write_episode_csv, CorrectionSource, EpisodeLog, ObservationNoise, SimConfig,
    TeleopTask,
};
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::manifest::{manifest_path_for, RunManifest};
use crate::{
    Cli, CliError, Command, CompareArgs, Correction, CtxKind, EstimateArgs, EvalArgs, GenDatasetArgs, Method,
    ObjectiveKind, ObserveArgs, RerunArgs, SimFlags, SimulateArgs, TrainArgs, TrainFlags, CONFIG_DIR_ENV,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let human = load_human(cli.human.as_deref())?;
    let mut m = RunManifest::new(command_name(&cli.command), argv);
    m.working_dir = std::env::current_dir()?;
    if let Some(p) = &cli.human {
        m.inputs.push(p.clone());
    }
    match cli.command {
        Command::GenDataset(a) => gen_dataset(a, &human, m),
        Command::Train(a) => cmd_train(a, &human, m),
        Command::Eval(a) => cmd_eval(a, &human, m),
        Command::Observe(a) => observe(a, &human, m),
        Command::Estimate(a) => estimate(a, &human, m),
        Command::Simulate(a) => simulate(a, &human, m),
        Command::Compare(a) => compare(a, &human, m),
        Command::Rerun(a) => rerun(a),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenDataset(_) => "gen-dataset",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Observe(_) => "observe",
        Command::Estimate(_) => "estimate",
        Command::Simulate(_) => "simulate",
        Command::Compare(_) => "compare",
        Command::Rerun(_) => "rerun",
    }
}

/// `$ERGO_HRI_CONFIG_DIR/<name>` when the variable is set and the file exists.
fn config_dir_file(name: &str) -> Option<PathBuf> {
    let dir = std::env::var_os(CONFIG_DIR_ENV)?;
    let p = Path::new(&dir).join(name);
    p.is_file().then_some(p)
}

fn load_human(flag: Option<&Path>) -> Result<HumanModel> {
    match flag.map(Path::to_path_buf).or_else(|| config_dir_file("human.toml")) {
        Some(p) => Ok(HumanModel::load(&p)?),
        None => Ok(HumanModel::default()),
    }
}

fn load_task(flag: Option<&Path>, m: &mut RunManifest) -> Result<TeleopTask> {
    match flag.map(Path::to_path_buf).or_else(|| config_dir_file("demo_task.toml")) {
        Some(p) => {
            m.inputs.push(p.clone());
            Ok(TeleopTask::load(&p)?)
        }
        None => Ok(TeleopTask::demo()),
    }
}

fn load_toml<T: DeserializeOwned + Default>(flag: Option<&Path>, fallback: &str, m: &mut RunManifest) -> Result<T> {
    match flag.map(Path::to_path_buf).or_else(|| config_dir_file(fallback)) {
        Some(p) => {
            let text = fs::read_to_string(&p)?;
            m.inputs.push(p.clone());
            toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        }
        None => Ok(T::default()),
    }
}

fn is_csv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read_any_dataset(p: &Path) -> Result<PostureDataset> {
    Ok(if is_csv(p) { read_dataset_csv(p)? } else { read_dataset(p)? })
}

fn finish(m: &mut RunManifest, at: &Path) -> Result<()> {
    m.write_atomic(at)?;
    Ok(())
}

fn gen_dataset(a: GenDatasetArgs, human: &HumanModel, mut m: RunManifest) -> Result<()> {
    let mut cfg = if a.desk {
        DatasetConfig::desk(a.seed)
    } else {
        let n = a.n.ok_or_else(|| CliError::Usage("--n is required without --desk".into()))?;
        DatasetConfig::new(n, true, a.seed)
    };
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if a.no_balance {
        cfg.balance = false;
    }
    match a.ctx {
        Some(CtxKind::Neutral) => cfg.ctx_sampler = CtxSampler::Fixed { ctx: TaskContext::seated_neutral() },
        Some(CtxKind::Varied) => cfg.ctx_sampler = CtxSampler::default(),
        None => {}
    }
    let ds = m.time("generate", || generate_dataset(&cfg, &human.limits))?;
    m.time("write", || if is_csv(&a.out) { write_dataset_csv(&a.out, &ds) } else { write_dataset(&a.out, &ds) })?;
    println!("{} records, per class {:?}", ds.len(), ds.class_counts);
    m.config = json!({ "dataset": cfg, "human": human.to_toml_string() });
    m.seeds.insert("dataset".into(), cfg.seed);
    m.outputs.push(a.out.clone());
    finish(&mut m, &manifest_path_for(&a.out))
}

fn train_config(f: &TrainFlags) -> TrainConfig {
    let mut cfg = if f.desk { TrainConfig::desk() } else { TrainConfig::default() };
    if let Some(v) = f.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = f.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = f.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = f.folds {
        cfg.folds = v;
    }
    if let Some(v) = f.seed {
        cfg.seed = v;
    }
    cfg
}

fn cmd_train(a: TrainArgs, human: &HumanModel, mut m: RunManifest) -> Result<()> {
    let cfg = train_config(&a.flags);
    let ds = m.time("read", || read_any_dataset(&a.dataset))?;
    let out = m.time("train", || train(&ds, &human.limits, &cfg))?;
    save_model(&a.out, &out.model)?;
    let loss_path = a.out.with_extension("loss.csv");
    let mut w = csv::Writer::from_path(&loss_path)?;
    w.write_record(["epoch", "loss"])?;
    for (e, l) in out.loss_trace.iter().enumerate() {
        w.write_record([(e + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    print!("{}", out.report);
    m.config = json!({ "train": cfg, "human": human.to_toml_string() });
    m.seeds.insert("train".into(), cfg.seed);
    m.inputs.push(a.dataset.clone());
    m.outputs.extend([a.out.clone(), loss_path]);
    finish(&mut m, &manifest_path_for(&a.out))
}

fn cmd_eval(a: EvalArgs, human: &HumanModel, mut m: RunManifest) -> Result<()> {
    let ds = m.time("read", || read_any_dataset(&a.dataset))?;
    m.inputs.push(a.dataset.clone());
    let text = match &a.model {
        Some(path) => {
            let model = load_model(path)?;
            m.inputs.push(path.clone());
            let all: Vec<usize> = (0..ds.len()).collect();
            let report = m.time("evaluate", || evaluate(&model, &ds, &all));
            m.config = json!({ "mode": "model" });
            report.to_string()
        }
        None => {
            let cfg = train_config(&a.flags);
            let reports = m.time("cross_validate", || kfold_cv(&ds, &human.limits, &cfg))?;
            m.config = json!({ "mode": "kfold", "train": cfg, "human": human.to_toml_string() });
            m.seeds.insert("train".into(), cfg.seed);
            cv_text(&reports)
        }
    };
    print!("{text}");
    match &a.out {
        Some(out) => {
            fs::write(out, &text)?;
            m.outputs.push(out.clone());
            finish(&mut m, &manifest_path_for(out))
        }
        None => Ok(()),
    }
}

fn cv_text(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    for (k, r) in reports.iter().enumerate() {
        s += &format!("fold {}\n{r}", k + 1);
    }
    let n = reports.len() as f64;
    let acc = reports.iter().map(|r| r.rounded_accuracy).sum::<f64>() / n;
    let low = reports.iter().map(|r| r.lowest_diagonal()).fold(f64::INFINITY, f64::min);
    s += &format!("mean rounded accuracy over {} folds: {acc:.4}\nlowest diagonal over folds: {low:.4}\n", reports.len());
    s
}

fn sim_config(flags: &SimFlags, m: &mut RunManifest) -> Result<SimConfig> {
    let mut cfg: SimConfig = load_toml(flags.config.as_deref(), "sim.toml", m)?;
    cfg.seed = flags.seed;
    Ok(cfg)
}

fn observe(a: ObserveArgs, human: &HumanModel, mut m: RunManifest) -> Result<()> {
    let task = load_task(a.task.as_deref(), &mut m)?;
    let cfg = SimConfig { seed: a.seed, ..load_toml(None, "sim.toml", &mut m)? };
    let noise = if a.noise_free { ObservationNoise::none() } else { ObservationNoise::default() };
    let (log, obs, truth) =
        m.time("simulate", || generate_ground_truth(&task, &cfg, &noise, &human.segments, &human.limits))?;
    fs::create_dir_all(&a.out_dir)?;
    let paths = ["observations.csv", "truth.csv", "episode.csv"].map(|n| a.out_dir.join(n));
    write_observations_csv(&paths[0], &obs)?;
    write_estimate_csv(&paths[1], &truth)?;
    write_episode_csv(&paths[2], &log)?;
    println!("{} observations, goal {}", obs.len(), steps_text(log.completion_step));
    m.config = json!({ "sim": cfg, "noise": noise, "task": task.to_toml_string()?, "human": human.to_toml_string() });
    m.seeds.insert("sim".into(), a.seed);
    m.outputs.extend(paths);
    finish(&mut m, &a.out_dir.join("manifest.json"))
}

fn steps_text(s: Option<usize>) -> String {
    s.map_or("not reached".to_string(), |k| format!("reached at step {k}"))
}

fn estimate(a: EstimateArgs, human: &HumanModel, mut m: RunManifest) -> Result<()> {
    let obs = m.time("read", || read_observations_csv(&a.observations))?;
    m.inputs.push(a.observations.clone());
    let mut cfg: EstimatorConfig = load_toml(a.config.as_deref(), "estimator.toml", &mut m)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.particles {
        cfg.num_particles = n;
    }
    let (psi, lim) = (&human.segments, &human.limits);
    let traj: PostureTrajectory = match a.method {
        Method::Pf => {
            let (traj, diag) = m.time("estimate", || run_filter(&obs, &cfg, psi, lim))?;
            println!(
                "particle filter: {} steps, {} resamplings, {} reinitializations, min ESS {:.1}",
                traj.len(),
                diag.resampled_steps,
                diag.reinitialized.len(),
                diag.min_ess
            );
            m.seeds.insert("filter".into(), cfg.seed);
            traj
        }
        Method::OnlineIk | Method::OfflineTrajIk => {
            let ik = IkConfig::from(&cfg);
            let run = m.time("estimate", || {
                if a.method == Method::OnlineIk {
                    online_ik(&obs, psi, lim, &ik)
                } else {
                    offline_traj_ik(&obs, psi, lim, &ik)
                }
            })?;
            println!("{}: {} steps, {} flagged", a.method, run.trajectory.len(), run.flagged_steps.len());
            run.trajectory
        }
    };
    write_estimate_csv(&a.out, &traj)?;
    m.outputs.push(a.out.clone());
    if let Some(truth_path) = &a.truth {
        let truth = read_estimate_csv(truth_path)?;
        m.inputs.push(truth_path.clone());
        let metrics = deviation_metrics(&traj, &truth)?;
        let metrics_path = a.out.with_extension("metrics.csv");
        let mut w = csv::Writer::from_path(&metrics_path)?;
        w.write_record(["joint", "lower_quartile", "median", "upper_quartile", "max"])?;
        println!("{:<28} {:>8} {:>8} {:>8} {:>8}", "joint", "q25", "median", "q75", "max");
        for (name, s) in JOINT_NAMES.iter().zip(&metrics) {
            let row = [s.lower_quartile, s.median, s.upper_quartile, s.max];
            w.write_record(std::iter::once(name.to_string()).chain(row.iter().map(|v| v.to_string())))?;
            println!("{name:<28} {:>8.4} {:>8.4} {:>8.4} {:>8.4}", row[0], row[1], row[2], row[3]);
        }
        w.flush()?;
        m.outputs.push(metrics_path);
    }
    m.config = json!({ "method": a.method.to_string(), "estimator": cfg, "human": human.to_toml_string() });
    finish(&mut m, &manifest_path_for(&a.out))
}

fn load_dula(flags: &SimFlags, m: &mut RunManifest) -> Result<MlpModel> {
    let path = flags
        .model
        .as_ref()
        .ok_or_else(|| CliError::Usage("the learned objective needs --model".into()))?;
    m.inputs.push(path.clone());
    Ok(load_model(path)?)
}

fn correction_source(
    kind: Correction,
    flags: &SimFlags,
    ctx: &TaskContext,
    model: Option<&MlpModel>,
) -> Result<CorrectionSource> {
    let objective = |default: ObjectiveKind| -> Result<ErgonomicsObjective> {
        match flags.objective.unwrap_or(default) {
            ObjectiveKind::Rula => Ok(ErgonomicsObjective::RulaRaw { ctx: ctx.clone() }),
            ObjectiveKind::Dula => {
                let model = model.ok_or_else(|| CliError::Usage("the learned objective needs --model".into()))?;
                Ok(ErgonomicsObjective::Dula { model: model.clone(), ctx: ctx.clone() })
            }
        }
    };
    Ok(match kind {
        Correction::None => CorrectionSource::None,
        Correction::Cem => {
            let mut cfg = CemConfig { seed: flags.seed, ..CemConfig::default() };
            if let Some(n) = flags.cem_samples {
                cfg.samples = n;
            }
            CorrectionSource::Cem { objective: objective(ObjectiveKind::Rula)?, cfg }
        }
        Correction::Gradient => {
            let objective = objective(ObjectiveKind::Dula)?;
            if matches!(objective, ErgonomicsObjective::RulaRaw { .. }) {
                return Err(CliError::Usage("the worksheet score has no gradient; use --objective dula".into()));
            }
            CorrectionSource::Gradient { objective, cfg: GradientConfig::default() }
        }
    })
}

fn needs_model(kind: Correction, flags: &SimFlags) -> bool {
    match kind {
        Correction::None => false,
        Correction::Cem => flags.objective == Some(ObjectiveKind::Dula),
        Correction::Gradient => true,
    }
}

fn correction_config(src: &CorrectionSource) -> serde_json::Value {
    match src {
        CorrectionSource::None => json!({ "kind": "none" }),
        CorrectionSource::Cem { objective, cfg } => json!({ "kind": "cem", "objective": objective_name(objective), "cem": cfg }),
        CorrectionSource::Gradient { objective, cfg } => {
            json!({ "kind": "gradient", "objective": objective_name(objective), "gradient": cfg })
        }
    }
}

fn objective_name(o: &ErgonomicsObjective) -> &'static str {
    match o {
        ErgonomicsObjective::Dula { .. } => "dula",
        ErgonomicsObjective::RulaRaw { .. } => "rula",
    }
}

fn simulate(a: SimulateArgs, human: &HumanModel, mut m: RunManifest) -> Result<()> {
    let task = load_task(a.sim.task.as_deref(), &mut m)?;
    let cfg = SimConfig { alpha: a.alpha, ..sim_config(&a.sim, &mut m)? };
    let model = if needs_model(a.correction, &a.sim) { Some(load_dula(&a.sim, &mut m)?) } else { None };
    let src = correction_source(a.correction, &a.sim, &task.ctx, model.as_ref())?;
    let log = m.time("simulate", || run_episode(&task, &cfg, &src, &human.segments, &human.limits))?;
    write_episode_csv(&a.out, &log)?;
    println!("{}", log.summary());
    m.config = json!({
        "sim": cfg,
        "correction": correction_config(&src),
        "task": task.to_toml_string()?,
        "human": human.to_toml_string(),
    });
    m.seeds.insert("sim".into(), cfg.seed);
    m.outputs.push(a.out.clone());
    finish(&mut m, &manifest_path_for(&a.out))?;
    converged(&log)
}

fn converged(log: &EpisodeLog) -> Result<()> {
    if log.converged() {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!("{} ({}) did not reach its goal in {} steps", log.task, log.correction, log.records.len())))
    }
}

fn compare(a: CompareArgs, human: &HumanModel, mut m: RunManifest) -> Result<()> {
    let task = load_task(a.sim.task.as_deref(), &mut m)?;
    let base = sim_config(&a.sim, &mut m)?;
    let model = load_dula(&a.sim, &mut m)?;
    fs::create_dir_all(&a.out_dir)?;
    let summary_path = a.out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    w.write_record([
        "alpha",
        "correction",
        "trace",
        "mean_rula",
        "max_rula",
        "completion_step",
        "solves",
        "mean_solve_seconds",
    ])?;
    println!("{:>5} {:<9} {:<12} {:>9} {:>8} {:>10} {:>12}", "alpha", "solver", "trace", "mean", "max", "steps", "solve_s");
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for &alpha in &a.alphas {
        for kind in [Correction::Cem, Correction::Gradient] {
            let src = correction_source(kind, &a.sim, &task.ctx, Some(&model))?;
            let cfg = SimConfig { alpha, ..base.clone() };
            let name = src.name();
            let log = m.time(&format!("{name}_alpha_{alpha}"), || {
                run_episode(&task, &cfg, &src, &human.segments, &human.limits)
            })?;
            let path = a.out_dir.join(format!("episode_alpha{alpha}_{name}.csv"));
            write_episode_csv(&path, &log)?;
            m.outputs.push(path);
            let s = log.summary();
            for (trace, t, steps) in [
                ("uncorrected", s.uncorrected, s.uncorrected_completion_step),
                ("corrected", s.corrected, s.completion_step),
                ("optimal", s.optimal, s.completion_step),
            ] {
                let steps = steps.map_or(String::new(), |k| k.to_string());
                w.write_record([
                    alpha.to_string(),
                    name.to_string(),
                    trace.to_string(),
                    t.mean.to_string(),
                    t.max.to_string(),
                    steps.clone(),
                    s.solves.to_string(),
                    s.mean_solve_seconds.to_string(),
                ])?;
                println!(
                    "{alpha:>5} {name:<9} {trace:<12} {:>9.3} {:>8} {:>10} {:>12.4}",
                    t.mean, t.max, steps, s.mean_solve_seconds
                );
            }
            if let Err(e) = converged(&log) {
                failures.push(e.to_string());
            }
            runs.push(json!({ "alpha": alpha, "correction": correction_config(&src) }));
        }
    }
    w.flush()?;
    m.outputs.push(summary_path);
    m.config = json!({ "sim": base, "runs": runs, "task": task.to_toml_string()?, "human": human.to_toml_string() });
    m.seeds.insert("sim".into(), base.seed);
    finish(&mut m, &a.out_dir.join("manifest.json"))?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::NotConverged(failures.join("; ")))
    }
}

fn rerun(a: RerunArgs) -> Result<()> {
    let m = RunManifest::load(&a.manifest)?;
    let mut argv = vec!["ergo-hri".to_string()];
    argv.extend(m.argv.iter().cloned());
    let cli = <Cli as clap::Parser>::try_parse_from(&argv).map_err(|e| CliError::Usage(e.to_string()))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(CliError::Usage("a manifest cannot point at another rerun".into()));
    }
    if !m.working_dir.as_os_str().is_empty() {
        std::env::set_current_dir(&m.working_dir)?;
    }
    let _ = std::io::stdout().flush();
    run(cli, &argv[1..])
}

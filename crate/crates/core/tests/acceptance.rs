//! Acceptance run: one PASS/FAIL line per criterion, then a nonzero exit if
//! any failed. The learned score is trained once at desk scale (several
//! minutes) and shared by the criteria that need it.

mod common;

use std::time::{Duration, Instant};

use ergo_hri::dula::{train, MlpModel, TrainConfig};
use ergo_hri::estimator::{
    joint_deviations, online_ik, run_filter, DeviationSummary, EstimatorConfig, IkConfig, Observation,
};
use ergo_hri::kinematics::{
    forward_kinematics, jacobian, orientation_error, JointLimits, JointState, SegmentLengths, Twist, NUM_JOINTS,
};
use ergo_hri::optimizer::{solve_online_cem, solve_online_gradient, CemConfig, ErgonomicsObjective, GradientConfig, OnlineProblem};
use ergo_hri::rula::{
    generate_dataset, grand_score, interpret, sample_posture, score_posture, tables, CtxSampler, DatasetConfig,
};
use ergo_hri::rng;
use ergo_hri::simulator::{generate_ground_truth, run_episode, CorrectionSource, EpisodeLog, ObservationNoise, SimConfig, TeleopTask};

// Pinned tolerances.
const RULA_TIME_LIMIT: Duration = Duration::from_secs(1);
const DULA_MIN_ACCURACY: f64 = 0.97;
const DULA_MIN_DIAGONAL: f64 = 0.95;
const GRAD_PROBES: usize = 1000;
const GRAD_MAX_REL_ERR: f64 = 1e-4;
const JACOBIAN_MAX_ERR: f64 = 1e-5;
const PF_EPISODES: u64 = 20;
const PF_PARTICLES: usize = 500;
const PF_MAX_MEDIAN: f64 = 0.09;
const PF_MAX_UPPER_QUARTILE: f64 = 0.25;
const PF_TIME_LIMIT: Duration = Duration::from_secs(600);
const SAME_LEVEL_FRACTION: f64 = 0.8;
const DEMO_ALPHA: f64 = 0.75;
const DEMO_MAX_CORRECTED: u8 = 4;
const GRADIENT_TIME_LIMIT: Duration = Duration::from_secs(1);
const CEM_SAMPLES: usize = 10_000;
const CEM_MIN_SLOWDOWN: f64 = 50.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(results: &mut Vec<bool>, name: &str, o: Outcome) {
    println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    results.push(o.pass);
}

fn rula_fixtures() -> Outcome {
    let started = Instant::now();
    let fixtures = common::fixtures();
    let wrong: Vec<&str> = fixtures
        .iter()
        .filter(|f| {
            let a = score_posture(&f.posture(), &f.ctx);
            [a.upper_arm, a.lower_arm, a.wrist, a.wrist_twist, a.table_a] != f.arm
                || [a.neck, a.trunk, a.legs, a.table_b] != f.body
                || a.grand != f.grand
        })
        .map(|f| f.name)
        .collect();
    let cells = common::reference_table_a()
        .into_iter()
        .filter(|([a, b, c, d], v)| tables::table_a(*a, *b, *c, *d) != *v)
        .count()
        + common::reference_table_b().into_iter().filter(|([a, b, c], v)| tables::table_b(*a, *b, *c) != *v).count()
        + common::reference_table_c().into_iter().filter(|([a, b], v)| tables::table_c(*a, *b) != *v).count();
    let elapsed = started.elapsed();
    Outcome {
        pass: fixtures.len() == 30 && wrong.is_empty() && cells == 0 && elapsed < RULA_TIME_LIMIT,
        detail: format!(
            "{}/{} fixtures, {cells} table mismatches, {:.4} s (limit {} s){}",
            fixtures.len() - wrong.len(),
            fixtures.len(),
            elapsed.as_secs_f64(),
            RULA_TIME_LIMIT.as_secs(),
            if wrong.is_empty() { String::new() } else { format!("; wrong: {wrong:?}") }
        ),
    }
}

fn dula_desk(lim: &JointLimits) -> (MlpModel, Outcome) {
    let started = Instant::now();
    let ds = generate_dataset(&DatasetConfig::desk(1), lim).expect("desk dataset generates");
    let out = train(&ds, lim, &TrainConfig::desk()).expect("desk training runs");
    let (acc, diag) = (out.report.rounded_accuracy, out.report.lowest_diagonal());
    let outcome = Outcome {
        pass: acc >= DULA_MIN_ACCURACY && diag >= DULA_MIN_DIAGONAL,
        detail: format!(
            "{} records, held-out accuracy {:.4} (min {DULA_MIN_ACCURACY}), lowest diagonal {:.4} (min {DULA_MIN_DIAGONAL}), {:.0} s",
            ds.len(),
            acc,
            diag,
            started.elapsed().as_secs_f64()
        ),
    };
    (out.model, outcome)
}

fn gradient_fidelity(model: &MlpModel, psi: &SegmentLengths, lim: &JointLimits) -> Outcome {
    // Central differences are exact inside one linear region of the network,
    // so probes whose stencil straddles a ReLU kink are redrawn.
    let h = 1e-5;
    let sampler = CtxSampler::default();
    let mut r = rng::stream(11, 0xACCE, 0);
    let (mut worst_grad, mut kinks, mut probes) = (0.0f64, 0usize, 0usize);
    while probes < GRAD_PROBES {
        let x = model.encode(&sample_posture(&mut r, lim), &sampler.sample(&mut r));
        let g = model.input_gradient(&x).unwrap();
        let mut fd = vec![0.0; x.len()];
        let mut straddles = false;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            straddles |= model.activation_pattern(&xp) != model.activation_pattern(&xm);
            fd[i] = (model.forward(&xp).unwrap() - model.forward(&xm).unwrap()) / (2.0 * h);
        }
        if straddles {
            kinks += 1;
            continue;
        }
        let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst_grad = worst_grad.max(diff / norm.max(1e-12));
        probes += 1;
    }

    let hq = 1e-6;
    let mut worst_jac = 0.0f64;
    for _ in 0..GRAD_PROBES {
        let q = sample_posture(&mut r, lim);
        let j = jacobian(&q, psi);
        for c in 0..NUM_JOINTS {
            let (mut qp, mut qm) = (q, q);
            qp[c] += hq;
            qm[c] -= hq;
            let (fp, fm) = (forward_kinematics(&qp, psi), forward_kinematics(&qm, psi));
            let lin = (fp.position - fm.position) / (2.0 * hq);
            let ang = orientation_error(&fp.orientation, &fm.orientation) / (2.0 * hq);
            for k in 0..3 {
                worst_jac = worst_jac.max((j[(k, c)] - lin[k]).abs()).max((j[(k + 3, c)] - ang[k]).abs());
            }
        }
    }
    Outcome {
        pass: worst_grad < GRAD_MAX_REL_ERR && worst_jac < JACOBIAN_MAX_ERR,
        detail: format!(
            "input gradient worst rel err {worst_grad:.2e} over {GRAD_PROBES} probes ({kinks} kink stencils redrawn, limit {GRAD_MAX_REL_ERR:.0e}); \
             Jacobian worst abs err {worst_jac:.2e} over {GRAD_PROBES} postures (limit {JACOBIAN_MAX_ERR:.0e})"
        ),
    }
}

/// Estimator accuracy and risk detection share the same 20 episodes.
fn estimation(psi: &SegmentLengths, lim: &JointLimits) -> (Outcome, Outcome) {
    let base = TeleopTask::demo();
    let noise = ObservationNoise::default();
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); NUM_JOINTS];
    let (mut risky, mut detected, mut same_level) = (0, 0, 0);
    let mut missed = Vec::new();
    let mut filter_time = Duration::ZERO;
    for seed in 0..PF_EPISODES {
        let task = TeleopTask::sampled(seed, &base, 1.0, psi, lim);
        let sim = SimConfig { seed, ..SimConfig::default() };
        let (log, obs, truth) = generate_ground_truth(&task, &sim, &noise, psi, lim).expect("episode simulates");
        let cfg = EstimatorConfig { num_particles: PF_PARTICLES, seed, ..EstimatorConfig::default() };
        let started = Instant::now();
        let (est, _) = run_filter(&obs, &cfg, psi, lim).expect("filter runs");
        filter_time += started.elapsed();
        for (j, d) in joint_deviations(&est, &truth).unwrap().into_iter().enumerate() {
            pooled[j].extend(d);
        }
        let truth_max = truth.states.iter().map(|s| grand_score(&s.q, &task.ctx)).max().unwrap();
        let est_max = est.states.iter().map(|s| grand_score(&s.q, &task.ctx)).max().unwrap();
        debug_assert_eq!(truth_max, log.records.iter().map(|r| r.rula_corrected).max().unwrap());
        if truth_max > 2 {
            risky += 1;
            if est_max > 2 {
                detected += 1;
            } else {
                missed.push(seed);
            }
        }
        if interpret(truth_max).unwrap() == interpret(est_max).unwrap() {
            same_level += 1;
        }
    }
    let stats: Vec<DeviationSummary> = pooled.into_iter().map(DeviationSummary::from_samples).collect();
    let worst_median = stats.iter().map(|s| s.median).fold(0.0, f64::max);
    let worst_uq = stats.iter().map(|s| s.upper_quartile).fold(0.0, f64::max);
    let accuracy = Outcome {
        pass: worst_median <= PF_MAX_MEDIAN && worst_uq <= PF_MAX_UPPER_QUARTILE && filter_time < PF_TIME_LIMIT,
        detail: format!(
            "{PF_EPISODES} episodes at M={PF_PARTICLES}: worst joint median {worst_median:.4} rad (max {PF_MAX_MEDIAN}), \
             worst upper quartile {worst_uq:.4} rad (max {PF_MAX_UPPER_QUARTILE}), filter time {:.1} s (limit {} s)",
            filter_time.as_secs_f64(),
            PF_TIME_LIMIT.as_secs()
        ),
    };
    let fraction = same_level as f64 / PF_EPISODES as f64;
    let detection = Outcome {
        pass: detected == risky && fraction >= SAME_LEVEL_FRACTION,
        detail: format!(
            "{detected}/{risky} episodes with true max above 2 detected{}; same action level in {same_level}/{PF_EPISODES} (min {:.0}%)",
            if missed.is_empty() { String::new() } else { format!(" (missed seeds {missed:?})") },
            SAME_LEVEL_FRACTION * 100.0
        ),
    };
    (accuracy, detection)
}

fn demo_correction(model: &MlpModel, psi: &SegmentLengths, lim: &JointLimits) -> Outcome {
    let task = TeleopTask::demo();
    let cfg = SimConfig { alpha: DEMO_ALPHA, ..SimConfig::default() };
    let none = run_episode(&task, &cfg, &CorrectionSource::None, psi, lim).expect("uncorrected run");
    let grad = run_episode(&task, &cfg, &CorrectionSource::gradient(model.clone(), task.ctx), psi, lim).expect("corrected run");
    let (n, g) = (none.summary().corrected, grad.summary().corrected);
    Outcome {
        pass: g.mean < n.mean && g.max <= DEMO_MAX_CORRECTED,
        detail: format!(
            "alpha {DEMO_ALPHA}: mean RULA {:.3} corrected vs {:.3} uncorrected; corrected max {} (max {DEMO_MAX_CORRECTED}), uncorrected max {}",
            g.mean, n.mean, g.max, n.max
        ),
    }
}

fn solver_timing(model: &MlpModel, psi: &SegmentLengths, lim: &JointLimits) -> Outcome {
    let task = TeleopTask::demo();
    let none = run_episode(&task, &SimConfig::default(), &CorrectionSource::None, psi, lim).expect("uncorrected run");
    let obj = ErgonomicsObjective::Dula { model: model.clone(), ctx: task.ctx };
    let cem = CemConfig { samples: CEM_SAMPLES, ..CemConfig::default() };
    let (mut slowest_grad, mut total_grad, mut total_cem) = (Duration::ZERO, Duration::ZERO, Duration::ZERO);
    let picks = [0, none.records.len() / 4, none.records.len() / 2];
    for &k in &picks {
        let r = &none.records[k];
        let z = Observation { time: r.t, pose: r.leader, twist: Twist::zero() };
        let p = OnlineProblem::new(JointState::at_rest(r.state.q), z, psi.clone(), lim.clone());
        let started = Instant::now();
        solve_online_gradient(&p, &obj, &GradientConfig::default()).expect("gradient solve");
        let g = started.elapsed();
        let started = Instant::now();
        solve_online_cem(&p, &obj, &cem).expect("CEM solve");
        total_cem += started.elapsed();
        slowest_grad = slowest_grad.max(g);
        total_grad += g;
    }
    let ratio = total_cem.as_secs_f64() / total_grad.as_secs_f64();
    Outcome {
        pass: slowest_grad < GRADIENT_TIME_LIMIT && ratio >= CEM_MIN_SLOWDOWN,
        detail: format!(
            "{} problems: slowest gradient solve {:.4} s (limit {} s); CEM at N={CEM_SAMPLES} took {ratio:.0}x as long (min {CEM_MIN_SLOWDOWN}x)",
            picks.len(),
            slowest_grad.as_secs_f64(),
            GRADIENT_TIME_LIMIT.as_secs()
        ),
    }
}

/// Everything in an episode log except wall-clock solve times.
fn episode_fingerprint(log: &EpisodeLog) -> String {
    let rows: Vec<String> = log
        .records
        .iter()
        .map(|r| format!("{:?}", (r.t, r.state, r.leader, r.follower, r.q_star, r.shadow, r.rula_corrected, r.rula_uncorrected)))
        .collect();
    format!("{:?}{:?}{}", log.completion_step, log.uncorrected_completion_step, rows.join("\n"))
}

fn determinism(psi: &SegmentLengths, lim: &JointLimits) -> Outcome {
    let run = || -> Vec<(&'static str, String)> {
        let ds = generate_dataset(&DatasetConfig::new(1400, true, 3), lim).unwrap();
        let trained = train(&ds, lim, &TrainConfig { epochs: 2, ..TrainConfig::default() }).unwrap();
        let task = TeleopTask::sampled(7, &TeleopTask::demo(), 1.0, psi, lim);
        let sim = SimConfig { seed: 7, ..SimConfig::default() };
        let (_, obs, _) = generate_ground_truth(&task, &sim, &ObservationNoise::default(), psi, lim).unwrap();
        let pf = run_filter(&obs, &EstimatorConfig { num_particles: 200, seed: 7, ..EstimatorConfig::default() }, psi, lim).unwrap();
        let ik = online_ik(&obs, psi, lim, &IkConfig::default()).unwrap();
        let demo = TeleopTask::demo();
        let cfg = SimConfig { alpha: DEMO_ALPHA, ..SimConfig::default() };
        let grad = run_episode(&demo, &cfg, &CorrectionSource::gradient(trained.model.clone(), demo.ctx), psi, lim).unwrap();
        let cem = CemConfig { samples: 200, iterations: 5, ..CemConfig::default() };
        let cem = run_episode(&demo, &cfg, &CorrectionSource::cem(demo.ctx, cem), psi, lim).unwrap();
        vec![
            ("dataset", format!("{:?}", ds.records)),
            ("training", format!("{:?}{:?}{:?}", trained.model, trained.loss_trace, trained.report)),
            ("filter", format!("{:?}", pf)),
            ("online ik", format!("{:?}", ik)),
            ("gradient episode", episode_fingerprint(&grad)),
            ("cem episode", episode_fingerprint(&cem)),
        ]
    };
    let pool = |threads| rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let first = pool(1).install(run);
    let second = pool(1).install(run);
    let wide = pool(4).install(run);
    let differ: Vec<String> = first
        .iter()
        .zip(&second)
        .zip(&wide)
        .flat_map(|(((name, a), (_, b)), (_, c))| {
            let mut out = Vec::new();
            if a != b {
                out.push(format!("{name} (rerun)"));
            }
            if a != c {
                out.push(format!("{name} (4 threads)"));
            }
            out
        })
        .collect();
    Outcome {
        pass: differ.is_empty(),
        detail: if differ.is_empty() {
            format!("{} artifacts identical across two reruns and a 4-thread run", first.len())
        } else {
            format!("differences in {differ:?}")
        },
    }
}

fn main() {
    let psi = SegmentLengths::default();
    let lim = JointLimits::default();
    let mut results = Vec::new();
    report(&mut results, "1 rula fixtures and tables", rula_fixtures());
    let (model, dula) = dula_desk(&lim);
    report(&mut results, "2 learned score at desk scale", dula);
    report(&mut results, "3 gradient fidelity", gradient_fidelity(&model, &psi, &lim));
    let (accuracy, detection) = estimation(&psi, &lim);
    report(&mut results, "4 filter accuracy", accuracy);
    report(&mut results, "5 risk detection", detection);
    report(&mut results, "6 demo correction", demo_correction(&model, &psi, &lim));
    report(&mut results, "7 solver timing", solver_timing(&model, &psi, &lim));
    report(&mut results, "8 determinism", determinism(&psi, &lim));
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}

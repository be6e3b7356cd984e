//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run alone with `cargo test -p dpmcl-suite --test acceptance`. The sine
//! criteria train every method for 50 tasks over 5 seeds, so expect tens of
//! minutes on one core.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dpmcl_core::data::Dataset;
use dpmcl_core::harness::metrics::{reported_standard_error, standard_error};
use dpmcl_core::harness::{run_experiment, ExperimentResult, RunSpec, StreamSource};
use dpmcl_core::learners::gradcheck::composition_suite;
use dpmcl_core::learners::{forgetting_gradients, Dims, LearnerConfig, Method, Model, ProbeConfig};
use dpmcl_core::memory::ReplayMemory;
use dpmcl_core::nn::{backprop, OutputGrad};
use dpmcl_core::streams::StreamSpec;
use dpmcl_core::theory::{
    classify_convergence, cost_bound_check, gamma_partial_integral, GammaSchedule, LyapunovTrace, Verdict,
    DEFAULT_LADDER, DEFAULT_STEP, DEFAULT_TOL,
};

const RUNS: usize = 5;
const SINE_TASKS: usize = 50;
const CLASS_TASKS: usize = 10;

const MAX_FINAL_CME: f64 = 1e-3;
const MAX_FINAL_NTE: f64 = 1e-4;
const NAIVE_CME_FACTOR: f64 = 10.0;
const MIN_RELATIVE_GAIN: f64 = 0.30;
const GRAD_TOL: f64 = 1e-4;
const GRAD_INSTANCES: usize = 100;
const INTEGRAL_TOL: f64 = 1e-3;
const INTEGRAL_HORIZON: f64 = 1e3;
const COST_BOUND: f64 = 1000.0;
const BURN_IN: f64 = 0.2;
const SE_TOL: f64 = 1e-12;
const RETENTION_TOL: f64 = 0.01;
const RETENTION_TRIALS: usize = 10_000;
const ZERO_ZETA_BUDGET: Duration = Duration::from_secs(1);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn sine_spec(method: Method, zeta: usize) -> RunSpec {
    RunSpec {
        method,
        stream: StreamSource::Generated(StreamSpec::sine(SINE_TASKS, 0)),
        cfg: LearnerConfig {
            zeta,
            ..LearnerConfig::sine()
        },
        runs: RUNS,
        base_seed: 0,
        output_dir: None,
    }
}

fn timed(spec: &RunSpec) -> (dpmcl_core::Result<ExperimentResult>, Duration) {
    let t0 = Instant::now();
    let r = run_experiment(spec);
    (r, t0.elapsed())
}

fn all_costs_finite(res: &ExperimentResult) -> bool {
    res.runs.iter().all(|r| r.costs.iter().all(|c| c.is_finite()))
}

fn sine_reproduction(dpmcl: &ExperimentResult, elapsed: Duration) -> Outcome {
    let (cme, nte) = dpmcl.final_means();
    Outcome::new(
        cme <= MAX_FINAL_CME && nte <= MAX_FINAL_NTE,
        format!(
            "final CME {cme:.4e} (<= {MAX_FINAL_CME:e}), final NTE {nte:.4e} (<= {MAX_FINAL_NTE:e}), {:.0} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn sine_ordering(dpmcl: &ExperimentResult) -> Outcome {
    let mut finite = all_costs_finite(dpmcl);
    let mut failures = Vec::new();
    let mut finals = vec![(Method::Dpmcl, dpmcl.final_means())];
    for method in [Method::Naive, Method::Er, Method::Oml, Method::Cml, Method::Anml] {
        match run_experiment(&sine_spec(method, LearnerConfig::sine().zeta)) {
            Ok(res) => {
                finite &= all_costs_finite(&res);
                finals.push((method, res.final_means()));
            }
            Err(e) => {
                finite = false;
                failures.push(format!("{method}: {e}"));
            }
        }
    }
    let get = |m: Method| finals.iter().find(|(k, _)| *k == m).map(|(_, v)| *v);
    let (Some((cme_d, _)), Some((cme_n, nte_n)), Some((_, nte_e))) =
        (get(Method::Dpmcl), get(Method::Naive), get(Method::Er))
    else {
        return Outcome::new(false, format!("runs failed: {}", failures.join("; ")));
    };
    let cme_ok = cme_d <= cme_n / NAIVE_CME_FACTOR;
    let nte_ok = nte_n <= nte_e;
    let table: Vec<String> = finals
        .iter()
        .map(|(m, (c, n))| format!("{m} {c:.3e}/{n:.3e}"))
        .collect();
    Outcome::new(
        cme_ok && nte_ok && finite && failures.is_empty(),
        format!(
            "CME(DPMCL) <= CME(Naive)/10: {cme_ok}, NTE(Naive) <= NTE(ER): {nte_ok}, all finite: {}; CME/NTE {}",
            finite && failures.is_empty(),
            table.join(", ")
        ),
    )
}

fn classification_gains() -> Outcome {
    let mut cme = Vec::new();
    for method in [Method::Dpmcl, Method::Naive, Method::Er] {
        let spec = RunSpec {
            method,
            stream: StreamSource::Generated(StreamSpec::classification(CLASS_TASKS, 0)),
            cfg: LearnerConfig::classification(),
            runs: RUNS,
            base_seed: 0,
            output_dir: None,
        };
        match run_experiment(&spec) {
            Ok(res) => cme.push(res.final_means().0),
            Err(e) => return Outcome::new(false, format!("{method}: {e}")),
        }
    }
    let (d, n, e) = (cme[0], cme[1], cme[2]);
    let limit = (1.0 - MIN_RELATIVE_GAIN) * n;
    Outcome::new(
        d < limit && e < limit,
        format!("CME DPMCL {d:.4} ER {e:.4} Naive {n:.4}, both must be < {limit:.4}"),
    )
}

fn zeta_trend(zeta2: &ExperimentResult) -> Outcome {
    match run_experiment(&sine_spec(Method::Dpmcl, 0)) {
        Ok(zeta0) => {
            let (c2, c0) = (zeta2.final_means().0, zeta0.final_means().0);
            Outcome::new(c2 <= c0, format!("final CME zeta=2 {c2:.5e}, zeta=0 {c0:.5e}"))
        }
        Err(e) => Outcome::new(false, e.to_string()),
    }
}

fn zero_zeta_degeneration() -> dpmcl_core::Result<Outcome> {
    let t0 = Instant::now();
    let tasks = StreamSpec::sine(2, 7).generate()?;
    let cfg = LearnerConfig::sine();
    let dims = Dims::for_task(&tasks[0], &cfg);
    let Model::Composed(net) = Model::composed(dims, cfg.base_lr, &mut ChaCha8Rng::seed_from_u64(3))? else {
        unreachable!("composed constructor returns a composed model")
    };
    let first: Vec<usize> = (0..cfg.batch_size).collect();
    let b_p = tasks[0].train.select(&first);
    let b_n = tasks[1].train.select(&first);
    let probe = ProbeConfig {
        zeta: 0,
        ..ProbeConfig::from(&cfg)
    };
    let fg = forgetting_gradients(&net, &b_p, &b_n, dims.kind.loss(), probe)?;
    let third_zero = fg.third_term() == 0.0;
    let cancels = fg
        .features_pn
        .data()
        .iter()
        .zip(fg.features_probe.data())
        .all(|(a, b)| a + b == 0.0);
    let b_pn: Dataset = b_p.concat(&b_n)?;
    let (_, cache) = net.rep.forward(&b_pn.x)?;
    let only_p = backprop(&net.rep.spec, &net.rep.params, &cache, OutputGrad::Output(fg.features_p.clone()), true)?.params;
    let rep_is_p_only = fg.rep == only_p;
    let elapsed = t0.elapsed();
    Ok(Outcome::new(
        third_zero && cancels && rep_is_p_only && elapsed < ZERO_ZETA_BUDGET,
        format!(
            "third term == 0: {third_zero}, probe branch cancels: {cancels}, representation gradient == J_P branch: {rep_is_p_only}, {:.3} s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn gradient_oracle() -> dpmcl_core::Result<Outcome> {
    let r = composition_suite(GRAD_INSTANCES, 2024)?;
    Ok(Outcome::new(
        r.max_rel_error < GRAD_TOL && r.compared > 0,
        format!(
            "{} checks over {} instances, {} coordinates compared ({} at ReLU kinks skipped), max relative error {:.3e} ({})",
            r.checks, r.instances, r.compared, r.excluded, r.max_rel_error, r.worst
        ),
    ))
}

fn convergence_suite() -> dpmcl_core::Result<Outcome> {
    let cases = [
        (GammaSchedule::Geometric(0.9), Verdict::Convergent),
        (GammaSchedule::Constant(1.0), Verdict::Divergent),
        (GammaSchedule::Growing(1.0), Verdict::Divergent),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (schedule, expected) in cases {
        let r = classify_convergence(&schedule, 0.1, 1.0, &DEFAULT_LADDER, DEFAULT_TOL)?;
        ok &= r.verdict == expected;
        parts.push(format!("{schedule} -> {:?}", r.verdict));
    }
    let (_, upper) = gamma_partial_integral(&GammaSchedule::Geometric(0.5), 1.0, 1.0, INTEGRAL_HORIZON, DEFAULT_STEP)?;
    let target = 1.0 / std::f64::consts::LN_2;
    let gap = (upper - target).abs();
    ok &= gap <= INTEGRAL_TOL;
    parts.push(format!("integral of 0.5^t to {INTEGRAL_HORIZON} = {upper:.6} (|diff| {gap:.2e})"));
    Ok(Outcome::new(ok, parts.join(", ")))
}

fn boundedness(dpmcl: &ExperimentResult, spec: &RunSpec) -> dpmcl_core::Result<Outcome> {
    let mut bounded = true;
    let mut max_cost = f64::NEG_INFINITY;
    let mut rate_ok = true;
    let mut steps = 0usize;
    for run in &dpmcl.runs {
        let tasks = spec.stream.tasks_for_run(run.run)?;
        let trace = LyapunovTrace::from_costs(run.costs.clone(), &tasks)?;
        let check = cost_bound_check(&trace, COST_BOUND, BURN_IN)?;
        bounded &= check.bounded;
        max_cost = max_cost.max(check.max_cost);
        for it in &run.iterations {
            rate_ok &= it.generalization_lr <= it.generalization_cap;
            steps += 1;
            if let (Some(lr), Some(cap)) = (it.forgetting_lr, it.forgetting_cap) {
                rate_ok &= lr <= cap;
                steps += 1;
            }
        }
    }
    Ok(Outcome::new(
        bounded && rate_ok && steps > 0,
        format!(
            "bounded in all {} runs: {bounded} (max post-burn-in cost {max_cost:.4}), step size within cap on {steps} steps: {rate_ok}",
            dpmcl.runs.len()
        ),
    ))
}

fn determinism_and_aggregation(dir: &Path) -> dpmcl_core::Result<Outcome> {
    let spec_at = |sub: &str| RunSpec {
        method: Method::Dpmcl,
        stream: StreamSource::Generated(StreamSpec::sine(4, 11)),
        cfg: LearnerConfig {
            kappa: 20,
            ..LearnerConfig::sine()
        },
        runs: 2,
        base_seed: 5,
        output_dir: Some(dir.join(sub)),
    };
    run_experiment(&spec_at("a"))?;
    run_experiment(&spec_at("b"))?;
    let read = |sub: &str| std::fs::read(dir.join(sub).join("rows.csv")).map_err(|source| dpmcl_core::Error::Io { path: dir.join(sub), source });
    let identical = read("a")? == read("b")?;

    let alternating: Vec<f64> = (0..50).map(|i| if i % 2 == 0 { 0.049 } else { -0.049 }).collect();
    let fixtures: [(&[f64], f64); 4] = [
        (&[0.0, 1.0], 0.5),
        (&[0.3; 5], 0.0),
        (&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5f64.sqrt()),
        (&alternating, 0.007),
    ];
    let se_ok = fixtures.iter().all(|(v, want)| (standard_error(v) - want).abs() <= SE_TOL)
        && reported_standard_error(&[1.0, 1.0005]) == 0.0;

    // Capacity 100 over 10 tasks of 100 samples: each task should hold 10%.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut held = [0usize; 10];
    let task = {
        let x = dpmcl_core::nn::Tensor::matrix(100, 1, vec![0.0; 100])?;
        let y = dpmcl_core::nn::Tensor::matrix(100, 1, vec![0.0; 100])?;
        Dataset::new(x, dpmcl_core::data::Targets::Values(y))?
    };
    for _ in 0..RETENTION_TRIALS {
        let mut m = ReplayMemory::reservoir(100)?;
        for t in 0..10 {
            m.append_task(&task, t, &mut rng)?;
        }
        for &t in m.task_ids() {
            held[t] += 1;
        }
    }
    let freqs: Vec<f64> = held.iter().map(|&h| h as f64 / (100 * RETENTION_TRIALS) as f64).collect();
    let worst = freqs.iter().map(|f| (f - 0.1).abs()).fold(0.0, f64::max);
    let uniform = worst <= RETENTION_TOL;
    Ok(Outcome::new(
        identical && se_ok && uniform,
        format!(
            "rows.csv byte-identical: {identical}, standard-error fixtures: {se_ok}, reservoir per-task retention within {RETENTION_TOL} of 0.1: {uniform} (max deviation {worst:.4})"
        ),
    ))
}

fn or_error(r: dpmcl_core::Result<Outcome>) -> Outcome {
    r.unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")))
}

fn main() {
    // libtest flags such as --nocapture or a name filter are accepted and ignored.
    let report = |id: u8, name: &str, o: &Outcome| {
        println!("criterion {id} {name}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    let mut outcomes = Vec::new();
    let mut record = |id: u8, name: &'static str, o: Outcome| {
        report(id, name, &o);
        outcomes.push((id, o.pass));
    };

    record(5, "zeta=0 degeneration", or_error(zero_zeta_degeneration()));
    record(6, "gradient oracle", or_error(gradient_oracle()));
    record(7, "convergence suite", or_error(convergence_suite()));
    let dir = tempfile::tempdir().expect("temporary directory");
    record(9, "determinism and aggregation", or_error(determinism_and_aggregation(dir.path())));
    record(3, "classification stream", classification_gains());

    let spec = sine_spec(Method::Dpmcl, LearnerConfig::sine().zeta);
    let (dpmcl, elapsed) = timed(&spec);
    match dpmcl {
        Ok(dpmcl) => {
            record(1, "sine reproduction", sine_reproduction(&dpmcl, elapsed));
            record(8, "cost boundedness", or_error(boundedness(&dpmcl, &spec)));
            record(4, "zeta ablation trend", zeta_trend(&dpmcl));
            record(2, "sine ordering", sine_ordering(&dpmcl));
        }
        Err(e) => {
            for (id, name) in [(1, "sine reproduction"), (8, "cost boundedness"), (4, "zeta ablation trend"), (2, "sine ordering")] {
                record(id, name, Outcome::new(false, format!("DPMCL sine run failed: {e}")));
            }
        }
    }

    outcomes.sort_by_key(|(id, _)| *id);
    let failed: Vec<String> = outcomes.iter().filter(|(_, p)| !p).map(|(id, _)| id.to_string()).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        outcomes.len() - failed.len(),
        outcomes.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failing: {}", failed.join(", "))
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

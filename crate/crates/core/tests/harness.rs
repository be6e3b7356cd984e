use std::sync::Arc;

use dpmcl_core::data::TaskKind;
use dpmcl_core::harness::{
    ablation_sweep, run_experiment, run_experiment_with, run_once, Execution, RunSpec, Settings, StreamSource, Summary,
    SweepParam,
};
use dpmcl_core::idx::{encode_idx_images, encode_idx_labels};
use dpmcl_core::learners::{LearnerConfig, Method};
use dpmcl_core::streams::{idx_class_stream, StreamSpec};

fn spec(method: Method, runs: usize) -> RunSpec {
    RunSpec {
        method,
        stream: StreamSource::Generated(StreamSpec::sine(3, 2)),
        cfg: LearnerConfig {
            kappa: 5,
            n_steps: 5,
            n_meta: 2,
            n_grad: 3,
            batch_size: 8,
            hidden_units: 8,
            ..LearnerConfig::sine()
        },
        runs,
        base_seed: 4,
        output_dir: None,
    }
}

#[test]
fn identical_specs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    for method in [Method::Dpmcl, Method::Anml] {
        let mut files = Vec::new();
        for (sub, execution) in [("a", Execution::Parallel), ("b", Execution::Parallel), ("c", Execution::Sequential)] {
            let out = dir.path().join(format!("{method}_{sub}"));
            run_experiment_with(&RunSpec { output_dir: Some(out.clone()), ..spec(method, 3) }, execution).unwrap();
            files.push((std::fs::read(out.join("rows.csv")).unwrap(), std::fs::read(out.join("summary.json")).unwrap()));
        }
        assert_eq!(files[0], files[1]);
        assert_eq!(files[0], files[2]);
    }
}

#[test]
fn rows_file_layout() {
    let dir = tempfile::tempdir().unwrap();
    let res = run_experiment(&RunSpec { output_dir: Some(dir.path().into()), ..spec(Method::Er, 2) }).unwrap();
    let text = std::fs::read_to_string(dir.path().join("rows.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,dataset,run,task,cme,nte"));
    assert_eq!(lines.count(), 6);
    assert!(text.lines().nth(1).unwrap().starts_with("er,sine,0,0,"));
    let summary: Summary = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary, res.summary);
    assert_eq!(summary.methods[0].smoothed_cme.len(), 3);
}

#[test]
fn rows_follow_the_metric_definitions() {
    let res = run_experiment(&spec(Method::Naive, 2)).unwrap();
    for run in &res.runs {
        let first = &run.rows[0];
        assert_eq!(first.cme, first.nte);
        assert!(run.rows.iter().all(|r| r.cme >= 0.0 && r.nte >= 0.0));
    }
    let last = res.summary.methods[0].last().unwrap();
    let mean = res.runs.iter().map(|r| r.rows[2].cme).sum::<f64>() / 2.0;
    assert!((last.mu_cme - mean).abs() < 1e-15);
}

#[test]
fn single_run_has_no_standard_error() {
    let res = run_experiment(&spec(Method::Dpmcl, 1)).unwrap();
    assert!(res.summary.methods[0].tasks.iter().all(|t| t.se_cme == 0.0 && t.se_nte == 0.0));
}

#[test]
fn zero_kappa_only_stores_samples() {
    let s = RunSpec {
        cfg: LearnerConfig { kappa: 0, ..spec(Method::Dpmcl, 1).cfg },
        ..spec(Method::Dpmcl, 1)
    };
    let rec = run_once(&s, 0).unwrap();
    assert!(rec.costs.is_empty());
    assert_eq!(rec.rows.len(), 3);
    assert_eq!(rec.learner.memory().len(), 3 * 192);
}

#[test]
fn zero_runs_is_an_error() {
    assert!(run_experiment(&spec(Method::Er, 0)).is_err());
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let s = RunSpec { output_dir: Some(dir.path().into()), ..spec(Method::Dpmcl, 1) };
    let table = ablation_sweep(SweepParam::Zeta, &[0, 2], &s).unwrap();
    assert_eq!(table.len(), 2);
    assert_eq!(table[1].value, 2);
    assert!(dir.path().join("zeta_0/rows.csv").exists());
    assert!(dir.path().join("zeta_2/summary.json").exists());
    let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().next(), Some("param,value,final_cme,final_nte"));
    assert!(ablation_sweep(SweepParam::Kappa, &[], &s).is_err());
}

#[test]
fn settings_file_then_overrides() {
    let file = Settings::parse("method = \"ER\"\ndataset = \"sine\"\nkappa = 12\nbeta = 50.0\ntotal_runs = 2\n").unwrap();
    let cli = Settings {
        kappa: Some(7),
        ..Settings::default()
    };
    let merged = file.merged(cli);
    let cfg = merged.learner_config(TaskKind::Regression).unwrap();
    assert_eq!(cfg.kappa, 7);
    assert_eq!(cfg.beta, 50.0);
    let run = merged.run_spec().unwrap();
    assert_eq!(run.method, Method::Er);
    assert_eq!(run.runs, 2);

    assert!(Settings::parse("kapa = 3").is_err());
    assert!(Settings::parse("optimizer = \"sgd\"").unwrap().learner_config(TaskKind::Regression).is_err());
}

#[test]
fn idx_files_become_a_class_stream() {
    let dir = tempfile::tempdir().unwrap();
    let labels: Vec<u8> = (0..30).map(|i| (i % 3) as u8).collect();
    let images: Vec<Vec<u8>> = labels.iter().map(|&l| vec![l * 80; 4]).collect();
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    std::fs::write(&ip, encode_idx_images(2, 2, &images)).unwrap();
    std::fs::write(&lp, encode_idx_labels(&labels)).unwrap();
    let tasks = idx_class_stream(&ip, &lp, 100, 0).unwrap();
    assert_eq!(tasks.len(), 3);
    assert!(tasks.iter().all(|t| t.input_dim() == 4 && t.kind == TaskKind::Classification));

    let s = RunSpec {
        stream: StreamSource::Loaded { name: "idx".into(), tasks: Arc::new(tasks) },
        cfg: LearnerConfig { kappa: 3, n_steps: 3, n_meta: 1, n_grad: 2, batch_size: 4, hidden_units: 6, ..LearnerConfig::classification() },
        ..spec(Method::Cml, 2)
    };
    let res = run_experiment(&s).unwrap();
    assert_eq!(res.rows.len(), 6);
    assert!(res.rows.iter().all(|r| (0.0..=1.0).contains(&r.cme) && r.dataset == "idx"));
}

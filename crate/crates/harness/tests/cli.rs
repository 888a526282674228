use std::path::{Path, PathBuf};
use std::process::Command;

use relaygen::agent::Algorithm;
use relaygen_harness::config::{ExperimentConfig, Variant};
use relaygen_harness::manifest::{self, RunStatus};
use relaygen_harness::relay_cmd::{cmd_relay, RelayOptions, L_SWEEP};
use relaygen_harness::{export, fleet, report, HarnessError};

const TINY: &str = r#"
name = "tiny"
master_seed = 11
total_steps = 300
seeds = [0, 1]
eval_episodes = 2
[env]
id = "cartpole-balance-v1"
[agent]
hidden_sizes = [8, 8]
batch_size = 16
start_steps = 100
update_after = 100
[sta]
epoch_steps = 100
lambda = 5
l_r = 20
[naive]
n_pretrained = 2
m_trajs = 2
l_r = 20
[relay]
m_trajs = 4
horizon = 5
"#;

fn tiny() -> ExperimentConfig {
    ExperimentConfig::from_toml(TINY, None).unwrap()
}

fn checkpoints(dir: &Path) -> Vec<Vec<u8>> {
    let m = manifest::load(dir).unwrap();
    m.manifest
        .runs
        .iter()
        .map(|r| std::fs::read(m.checkpoint_path(r).unwrap()).unwrap())
        .collect()
}

fn relay_opts(out: &Path, configs: Vec<relaygen::relay::RelayConfig>) -> RelayOptions {
    RelayOptions {
        configs,
        seed: 5,
        jobs: 1,
        out: out.to_path_buf(),
        cache: Some(out.join("cache")),
        prefix: "relay-".into(),
    }
}

#[test]
fn train_writes_manifest_checkpoints_and_logs() {
    let out = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let m = fleet::train_fleet(&cfg, &out.path().join("a"), 1).unwrap();
    assert_eq!(m.runs.len(), 2);
    for r in &m.runs {
        assert_eq!(r.status, RunStatus::Ok);
        assert_eq!(r.env_steps, 300);
        assert!(r.ordinary_return.is_some());
        assert!(out
            .path()
            .join("a")
            .join(r.checkpoint.as_ref().unwrap())
            .exists());
        assert!(out
            .path()
            .join("a")
            .join(r.training_log.as_ref().unwrap())
            .exists());
    }
    assert_eq!(m.runs[0].id, "tiny-s0");
    let loaded = manifest::load(&out.path().join("a")).unwrap();
    assert_eq!(loaded.config, cfg);
}

#[test]
fn reruns_and_worker_counts_give_identical_artifacts() {
    let out = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let a = fleet::train_fleet(&cfg, &out.path().join("a"), 1).unwrap();
    let b = fleet::train_fleet(&cfg, &out.path().join("b"), 2).unwrap();
    assert_eq!(a.config_hash, b.config_hash);
    assert_eq!(
        checkpoints(&out.path().join("a")),
        checkpoints(&out.path().join("b"))
    );
    let strip = |mut m: relaygen_harness::RunManifest| {
        m.runs.iter_mut().for_each(|r| r.wall_clock_s = 0.0);
        m
    };
    assert_eq!(strip(a).to_text(), strip(b).to_text());

    let fleet_a = manifest::load(&out.path().join("a")).unwrap();
    let cfgs = vec![cfg.relay.base.clone()];
    let r1 = cmd_relay(
        std::slice::from_ref(&fleet_a),
        std::slice::from_ref(&fleet_a),
        &relay_opts(&out.path().join("r1"), cfgs.clone()),
    )
    .unwrap();
    let mut par = relay_opts(&out.path().join("r2"), cfgs);
    par.jobs = 3;
    par.cache = None;
    let r2 = cmd_relay(
        std::slice::from_ref(&fleet_a),
        std::slice::from_ref(&fleet_a),
        &par,
    )
    .unwrap();
    for suffix in [".csv", ".states.csv", ".q.csv", ".txt"] {
        let read = |r: &relaygen_harness::relay_cmd::RelayResult| {
            std::fs::read(report::companion(&r.runs[0].stem, suffix)).unwrap()
        };
        assert_eq!(read(&r1), read(&r2), "{suffix} differs");
    }
}

#[test]
fn sta_and_naive_with_p0_zero_match_ordinary() {
    let out = tempfile::tempdir().unwrap();
    let ordinary = tiny();
    let mut sta = tiny();
    sta.variant = Variant::Sta;
    sta.sta.p0 = 0.0;
    let mut naive = tiny();
    naive.variant = Variant::Naive;
    naive.naive.p0 = 0.0;
    fleet::train_fleet(&ordinary, &out.path().join("o"), 1).unwrap();
    fleet::train_fleet(&sta, &out.path().join("s"), 1).unwrap();
    fleet::train_fleet(&naive, &out.path().join("n"), 1).unwrap();
    let o = checkpoints(&out.path().join("o"));
    assert_eq!(o, checkpoints(&out.path().join("s")));
    assert_eq!(o, checkpoints(&out.path().join("n")));
}

#[test]
fn naive_fleet_builds_and_records_its_pool() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.variant = Variant::Naive;
    let m = fleet::train_fleet(&cfg, out.path(), 1).unwrap();
    assert_eq!(m.pool.as_deref(), Some(fleet::POOL_FILE));
    assert!(out
        .path()
        .join("pretrained")
        .join(manifest::MANIFEST_FILE)
        .exists());
    assert!(m
        .runs
        .iter()
        .all(|r| r.env_steps == 300 && r.status == RunStatus::Ok));
    assert!(m.runs.iter().any(|r| r.restored_episodes > 0));
}

#[test]
fn two_algorithms_three_seeds_give_a_six_by_six_matrix() {
    let out = tempfile::tempdir().unwrap();
    let mut sac = tiny();
    sac.seeds = vec![0, 1, 2];
    sac.name = "sac".into();
    let mut td3 = sac.clone();
    td3.agent.algorithm = Algorithm::Td3;
    td3.name = "td3".into();
    fleet::train_fleet(&sac, &out.path().join("sac"), 1).unwrap();
    fleet::train_fleet(&td3, &out.path().join("td3"), 1).unwrap();
    let fleets = vec![
        manifest::load(&out.path().join("sac")).unwrap(),
        manifest::load(&out.path().join("td3")).unwrap(),
    ];
    let res = cmd_relay(
        &fleets,
        &fleets,
        &relay_opts(out.path(), vec![sac.relay.base.clone()]),
    )
    .unwrap();
    let m = &res.runs[0].matrix;
    assert_eq!(m.cells.len(), 36);
    assert_eq!(m.groups().len(), 4);
    assert_eq!(m.cells.iter().filter(|c| m.is_diagonal(c)).count(), 6);
    let text = std::fs::read_to_string(report::companion(&res.runs[0].stem, ".txt")).unwrap();
    assert!(text.contains("td3 strangers") && text.contains("sac strangers"));
}

#[test]
fn horizon_sweep_and_thresholds_give_one_matrix_each() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.relay.horizons = L_SWEEP.to_vec();
    cfg.relay.return_thresholds = vec![15.0];
    cfg.relay.base.m_trajs = 2;
    fleet::train_fleet(&cfg, out.path(), 1).unwrap();
    let f = manifest::load(out.path()).unwrap();
    let res = cmd_relay(
        std::slice::from_ref(&f),
        &[],
        &relay_opts(&out.path().join("r"), cfg.relay_configs()),
    );
    // no strangers at all is a valid, empty matrix
    assert!(res.is_ok());
    let res = cmd_relay(
        std::slice::from_ref(&f),
        std::slice::from_ref(&f),
        &relay_opts(&out.path().join("r"), cfg.relay_configs()),
    )
    .unwrap();
    assert_eq!(res.runs.len(), 8);
    let names: Vec<String> = res
        .runs
        .iter()
        .map(|r| r.stem.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert!(names.contains(&"relay-L50-simulator-termination".to_string()));
    assert!(names.contains(&"relay-L500-return-below-15".to_string()));
    for r in &res.runs {
        let input = report::load_input(&r.stem).unwrap();
        assert_eq!(input.meta.horizon, r.config.horizon);
        assert_eq!(input.meta.failure_mode, r.config.failure_mode.label());
    }
    let mixed = [
        report::load_input(&res.runs[0].stem).unwrap(),
        report::load_input(&res.runs[2].stem).unwrap(),
    ];
    assert!(matches!(
        report::render(&mixed),
        Err(HarnessError::Incomparable(_))
    ));
}

#[test]
fn harvest_cache_is_reused_and_sound() {
    let out = tempfile::tempdir().unwrap();
    let cfg = tiny();
    fleet::train_fleet(&cfg, out.path(), 1).unwrap();
    let f = manifest::load(out.path()).unwrap();
    let opts = relay_opts(&out.path().join("r"), vec![cfg.relay.base.clone()]);
    let first = cmd_relay(std::slice::from_ref(&f), std::slice::from_ref(&f), &opts).unwrap();
    let cached: Vec<PathBuf> = std::fs::read_dir(out.path().join("r/cache"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(cached.len(), 2);
    let second = cmd_relay(std::slice::from_ref(&f), std::slice::from_ref(&f), &opts).unwrap();
    assert_eq!(
        first.runs[0].matrix.harvests,
        second.runs[0].matrix.harvests
    );
    assert_eq!(
        first.runs[0].matrix.to_csv(),
        second.runs[0].matrix.to_csv()
    );
}

#[test]
fn export_writes_labeled_rows() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.variant = Variant::Sta;
    fleet::train_fleet(&cfg, out.path(), 1).unwrap();
    let f = manifest::load(out.path()).unwrap();
    let csv = export::export_manifest(&f, 40).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "agent_id,algorithm,o0,o1,o2,o3");
    assert_eq!(lines.len(), 1 + 2 * 40);
    assert!(lines[1].starts_with("tiny-s0,sac,"));
    let run = &f.manifest.runs[0];
    let bytes = std::fs::read(out.path().join(run.archive.as_ref().unwrap())).unwrap();
    let archive = relaygen::sta::StateArchive::decode(&bytes).unwrap();
    let csv = export::export_archive(&archive).unwrap();
    assert!(csv.starts_with("epoch,score,q,"));
    assert_eq!(csv.lines().count(), 1 + archive.len());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_relaygen"))
}

#[test]
fn cli_exit_codes_follow_job_outcomes() {
    let out = tempfile::tempdir().unwrap();
    let cfg_path = out.path().join("exp.toml");
    std::fs::write(&cfg_path, TINY).unwrap();
    let status = bin()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .args(["--seeds", "3,4", "--out"])
        .arg(out.path())
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success());
    let fleet_dir = out.path().join("tiny");
    let m = manifest::load(&fleet_dir).unwrap();
    assert_eq!(
        m.manifest.runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
        vec![3, 4]
    );

    let reports = out.path().join("reports");
    let status = bin()
        .arg("relay")
        .arg("--tests")
        .arg(&fleet_dir)
        .arg("--out")
        .arg(&reports)
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success());
    let csv = reports.join("relay-L5-simulator-termination.csv");
    let output = bin().arg("report").arg(&csv).output().unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("reference"));

    // a corrupt checkpoint is a failed job: reports still written, exit nonzero
    let ck = m.checkpoint_path(&m.manifest.runs[1]).unwrap();
    std::fs::write(&ck, b"garbage").unwrap();
    let status = bin()
        .arg("relay")
        .arg("--tests")
        .arg(&fleet_dir)
        .arg("--out")
        .arg(&reports)
        .env("RUST_LOG", "off")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let rows = std::fs::read_to_string(&csv).unwrap().lines().count();
    assert_eq!(rows, 2);

    let status = bin()
        .args(["train", "--config", "/nonexistent.toml"])
        .env("RUST_LOG", "off")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path, None).unwrap();
            cfg.validate().unwrap();
            n += 1;
        }
    }
    assert!(n >= 4);
}

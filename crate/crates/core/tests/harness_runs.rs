use std::fs;
use std::path::Path;
use std::process::Command;

use smoothrl::envs::{DisturbanceMode, EnvConfig, EnvKind};
use smoothrl::harness::{
    eval_robust, parse_records, run_training, summarize, train_seed, Algo, ExperimentConfig, RECORD_HEADER,
};
use smoothrl::policy::AnyPolicy;
use smoothrl::smoothreg::AdversaryConfig;

fn small(algo: Algo, env: EnvKind, dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(algo, env);
    cfg.seeds = vec![7];
    cfg.iterations = 2;
    cfg.steps_per_iter = 300;
    cfg.eval_episodes = 2;
    cfg.hidden = vec![8];
    cfg.critic_hidden = vec![8];
    cfg.output_dir = dir.to_path_buf();
    cfg
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn one_seed_two_iterations_gives_two_rows() {
    let tmp = tempfile::tempdir().unwrap();
    for algo in [Algo::TrpoSr, Algo::DdpgSrC] {
        let dir = tmp.path().join(algo.to_string());
        let mut cfg = small(algo, EnvKind::PointMass, &dir);
        cfg.lambda_s = 0.3;
        cfg.epsilon = 0.02;
        run_training(&cfg).unwrap();
        let text = read(dir.join("seed_7.csv"));
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(RECORD_HEADER));
        assert_eq!(lines.count(), 2, "{algo}");
        let records = parse_records(&text).unwrap();
        assert!(records.windows(2).all(|w| w[0].steps < w[1].steps));
        assert!(dir.join("policy_7.txt").exists() && dir.join("aggregate.csv").exists());
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut a = small(Algo::TrpoSr, EnvKind::Pendulum, &tmp.path().join("a"));
    a.seeds = vec![3, 4];
    a.lambda_s = 1.0;
    a.epsilon = 0.05;
    let b = ExperimentConfig {
        output_dir: tmp.path().join("b"),
        ..a.clone()
    };
    run_training(&a).unwrap();
    run_training(&b).unwrap();
    for f in ["seed_3.csv", "seed_4.csv", "aggregate.csv", "policy_3.txt"] {
        assert_eq!(read(a.output_dir.join(f)), read(b.output_dir.join(f)), "{f}");
    }
}

#[test]
fn zero_lambda_regularized_runs_equal_their_baselines() {
    let tmp = tempfile::tempdir().unwrap();
    for (base, sr) in [(Algo::Trpo, Algo::TrpoSr), (Algo::Ddpg, Algo::DdpgSrA), (Algo::Ddpg, Algo::DdpgSrC)] {
        let b = small(base, EnvKind::Pendulum, &tmp.path().join(format!("{sr}-base")));
        let mut s = small(sr, EnvKind::Pendulum, &tmp.path().join(format!("{sr}-sr")));
        s.epsilon = 0.1;
        run_training(&b).unwrap();
        run_training(&s).unwrap();
        assert_eq!(read(b.output_dir.join("aggregate.csv")), read(s.output_dir.join("aggregate.csv")));
        assert_eq!(read(b.output_dir.join("seed_7.csv")), read(s.output_dir.join("seed_7.csv")));
    }
}

#[test]
fn summarize_writes_percentiles() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(Algo::Trpo, EnvKind::PointMass, tmp.path());
    cfg.seeds = vec![0, 1, 2];
    let report = run_training(&cfg).unwrap();
    let s = summarize(tmp.path()).unwrap();
    assert_eq!(s.seeds, vec![0, 1, 2]);
    let mut finals = report.final_returns();
    finals.sort_by(f64::total_cmp);
    let expect: Vec<(f64, f64)> = finals.iter().enumerate().map(|(i, r)| (i as f64 / 2.0, *r)).collect();
    assert_eq!(s.percentiles, expect);
    assert!(read(tmp.path().join("percentiles.csv")).starts_with("percentile,return\n"));
}

#[test]
fn robust_sweep_at_zero_matches_training_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    for algo in [Algo::Trpo, Algo::Ddpg] {
        let cfg = small(algo, EnvKind::Pendulum, &tmp.path().join(algo.to_string()));
        let (records, policy) = train_seed(&cfg, 7).unwrap();
        let last = records.last().unwrap();
        let env = EnvConfig::new(EnvKind::Pendulum);
        let rows = eval_robust(&policy, &env, DisturbanceMode::Random, &[0.0], 2, &AdversaryConfig::default(), 7).unwrap();
        assert_eq!((rows[0].mean_return, rows[0].std_return), (last.mean_return, last.std_return), "{algo}");

        let text = policy.to_text();
        let bounds = env.build().action_bounds().clone();
        assert_eq!(AnyPolicy::from_text(&text, bounds).unwrap(), policy);
    }
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smoothrl"))
}

#[test]
fn cli_round_trip_and_rejections() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let config = tmp.path().join("run.cfg");
    fs::write(
        &config,
        format!(
            "algo = trpo-sr\nenv = pendulum\nlambda_s = 0.5\nepsilon = 0.05\nseeds = 1, 2\n\
             iterations = 2\nsteps_per_iter = 200\neval_episodes = 2\nhidden = 8\noutput_dir = {}\n",
            out.display()
        ),
    )
    .unwrap();
    assert!(cli().arg("train").arg(&config).status().unwrap().success());
    let first = read(out.join("seed_1.csv"));
    assert!(cli().arg("train").arg(&config).status().unwrap().success());
    assert_eq!(first, read(out.join("seed_1.csv")));

    let o = cli().arg("summarize").arg(&out).output().unwrap();
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 3);

    let policy = out.join("policy_1.txt");
    let o = cli()
        .args(["eval-robust", policy.to_str().unwrap(), "--env", "pendulum", "--mode", "adversarial"])
        .args(["--eps", "0,0.05", "--rollouts", "2"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("epsilon,mean_return,std_return\n"));
    assert_eq!(csv.lines().count(), 3);

    let o = cli().args(["probe-smoothness", policy.to_str().unwrap(), "--eps", "0.05", "-n", "10"]).output().unwrap();
    assert!(o.status.success());
    let v: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!(v > 0.0);

    let o = cli().args(["eval-robust", policy.to_str().unwrap(), "--env", "pointmass"]).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8(o.stderr).unwrap().contains("state dimension"));

    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "algo = frobnicate\nenv = pendulum\n").unwrap();
    let o = cli().arg("train").arg(&bad).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8(o.stderr).unwrap().contains("unknown algorithm"));

    let o = cli().arg("train").arg(tmp.path().join("missing.cfg")).output().unwrap();
    assert!(!o.status.success());
}

#[test]
fn readme_config_example_parses() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("algo = trpo-sr").expect("config example in README");
    let block = &readme[start..start + readme[start..].find("```").unwrap()];
    let cfg = ExperimentConfig::parse(block).unwrap();
    assert_eq!((cfg.algo, cfg.seeds.clone(), cfg.iterations), (Algo::TrpoSr, vec![0, 1, 2], 200));
    assert_eq!(cfg.ddpg_config().unwrap().optimizer.to_string(), "adam");
}

use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

fn dql(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dql"))
        .args(args)
        .env("DQL_OUT_DIR", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY: &[&str] = &[
    "--m",
    "40",
    "--hidden",
    "8",
    "--embed-dim",
    "4",
    "--batch-size",
    "8",
    "--epochs",
    "2",
    "--steps-per-epoch",
    "3",
];

fn train_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["train", "--layout", "corners"];
    v.extend_from_slice(TINY);
    v.extend_from_slice(extra);
    v
}

#[test]
fn gen_data_writes_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = ok(&dql(
            dir.path(),
            &[
                "gen-data",
                "--layout",
                "edges",
                "--m",
                "10000",
                "--seed",
                "0",
                "--out",
                p.to_str().unwrap(),
            ],
        ));
        assert!(out.contains("2500 rows"));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().next(), Some("s0,a0,a1,r,ns0,t"));
    assert_eq!(text.lines().count(), 10_001);
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
}

#[test]
fn gen_data_defaults_under_out_root() {
    let dir = tempfile::tempdir().unwrap();
    ok(&dql(dir.path(), &["gen-data", "--layout", "corners", "--m", "8"]));
    assert!(dir.path().join("data/corners-m8-s0.csv").exists());
}

#[test]
fn gen_data_rejects_indivisible_m_and_bad_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = dql(dir.path(), &["gen-data", "--layout", "edges", "--m", "10"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("m"), "{}", stderr(&out));
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let target = blocker.join("sub/data.csv");
    let out = dql(
        dir.path(),
        &[
            "gen-data",
            "--layout",
            "edges",
            "--m",
            "8",
            "--out",
            target.to_str().unwrap(),
        ],
    );
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error:"));
}

#[test]
fn unknown_algorithm_lists_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = dql(dir.path(), &["train", "--layout", "edges", "--algo", "sac"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    for name in ["diffusion-ql", "bc-diffusion", "bc-mle", "mdn", "td3bc", "td3bc-gm"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn invalid_config_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = dql(
        dir.path(),
        &train_args(&["--gamma", "1.0", "--out", run.to_str().unwrap()]),
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("gamma"), "{}", stderr(&out));
    assert!(!run.exists());
    let out = dql(dir.path(), &["train", "--epochs", "1"]);
    assert!(stderr(&out).contains("task"), "{}", stderr(&out));
}

fn files(dir: &Path) -> BTreeSet<String> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect()
}

#[test]
fn train_is_reproducible_and_echoes_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let (r1, r2, r3) = (dir.path().join("r1"), dir.path().join("r2"), dir.path().join("r3"));
    ok(&dql(
        dir.path(),
        &train_args(&["--algo", "diffusion-ql", "--out", r1.to_str().unwrap()]),
    ));
    ok(&dql(
        dir.path(),
        &train_args(&["--algo", "diffusion-ql", "--out", r2.to_str().unwrap()]),
    ));
    let echoed = r1.join("config.toml");
    ok(&dql(
        dir.path(),
        &[
            "train",
            "--config",
            echoed.to_str().unwrap(),
            "--out",
            r3.to_str().unwrap(),
        ],
    ));
    let names = files(&r1);
    for want in [
        "config.toml",
        "metrics.jsonl",
        "epoch-0000.ckpt",
        "epoch-0001.ckpt",
        "epoch-0002.ckpt",
    ] {
        assert!(names.contains(want), "{names:?}");
    }
    for name in &names {
        let a = std::fs::read(r1.join(name)).unwrap();
        assert_eq!(a, std::fs::read(r2.join(name)).unwrap(), "{name}");
        assert_eq!(a, std::fs::read(r3.join(name)).unwrap(), "{name}");
    }
    let ckpt = std::fs::read_to_string(r1.join("epoch-0002.ckpt")).unwrap();
    assert!(ckpt.starts_with("DQL-CKPT-v1\n"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[task]\nlayout = \"edges\"\nm = 40\n\n[train]\nn_steps = 3\nhidden = 8\nembed_dim = 4\nepochs = 1\nsteps_per_epoch = 2\nbatch_size = 4\n").unwrap();
    let run = dir.path().join("run");
    ok(&dql(
        dir.path(),
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--n",
            "4",
            "--algo",
            "bc-diffusion",
            "--out",
            run.to_str().unwrap(),
        ],
    ));
    let echoed = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(echoed.contains("n_steps = 4"), "{echoed}");
    assert!(echoed.contains("algorithm = \"bc-diffusion\""), "{echoed}");
    assert!(echoed.contains("layout = \"edges\""), "{echoed}");
}

#[test]
fn train_defaults_under_out_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&dql(dir.path(), &train_args(&["--algo", "bc-mle"])));
    let run = dir.path().join("runs/bc-mle-corners-n5-s0");
    assert!(run.join("metrics.jsonl").exists(), "{out}");
}

#[test]
fn eval_select_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut args = vec![
        "train",
        "--layout",
        "corners",
        "--m",
        "40",
        "--hidden",
        "8",
        "--batch-size",
        "8",
    ];
    args.extend_from_slice(&[
        "--epochs",
        "4",
        "--steps-per-epoch",
        "3",
        "--algo",
        "td3bc",
        "--out",
        run.to_str().unwrap(),
    ]);
    ok(&dql(dir.path(), &args));
    let ckpt = run.join("epoch-0004.ckpt");
    let c = ckpt.to_str().unwrap();

    let out = dql(dir.path(), &["eval", "--checkpoint", c, "--samples", "0"]);
    assert!(!out.status.success());

    let json = ok(&dql(dir.path(), &["eval", "--checkpoint", c, "--samples", "50"]));
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(report["samples"], 50);
    let scatter = std::fs::read_to_string(run.join("epoch-0004.scatter.csv")).unwrap();
    let points: BTreeSet<&str> = scatter.lines().skip(1).collect();
    assert_eq!(points.len(), 1);
    assert!(run.join("epoch-0004.eval.json").exists());

    let stale = dir.path().join("old.ckpt");
    let text = std::fs::read_to_string(&ckpt)
        .unwrap()
        .replacen("DQL-CKPT-v1", "DQL-CKPT-v0", 1);
    std::fs::write(&stale, text).unwrap();
    let out = dql(
        dir.path(),
        &["eval", "--checkpoint", stale.to_str().unwrap(), "--layout", "corners"],
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("version"), "{}", stderr(&out));

    let chosen = ok(&dql(dir.path(), &["select", "--run", run.to_str().unwrap()]));
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let l_d: Vec<f64> = metrics
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["l_d"]
                .as_f64()
                .unwrap()
        })
        .collect();
    let mut order: Vec<usize> = (0..l_d.len()).collect();
    order.sort_by(|&a, &b| l_d[a].total_cmp(&l_d[b]).then(b.cmp(&a)));
    let want = format!("epoch-{:04}.ckpt", order[1] + 1);
    assert!(chosen.trim().ends_with(&want), "{chosen} vs {want}");
    assert_eq!(
        std::fs::read(run.join("selected.ckpt")).unwrap(),
        std::fs::read(run.join(want)).unwrap()
    );

    let out = dql(dir.path(), &["select", "--run", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("metrics log"), "{}", stderr(&out));
}

#[test]
fn ablate_n_deduplicates() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("abl");
    let mut args = vec![
        "ablate-n",
        "--ns",
        "2,3,2",
        "--samples",
        "20",
        "--layout",
        "corners",
        "--algo",
        "bc-diffusion",
    ];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--out", out_dir.to_str().unwrap()]);
    let table = ok(&dql(dir.path(), &args));
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(out_dir.join("n2/metrics.jsonl").exists());
    assert!(out_dir.join("ablation.json").exists());
}

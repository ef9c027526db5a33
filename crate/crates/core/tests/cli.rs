use std::path::Path;
use std::process::{Command, Output};

fn ocnash(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ocnash")).args(args).output().expect("spawn ocnash")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn preset_list_names_every_preset() {
    let out = ocnash(&["preset-list"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for name in ["four_agent", "eight_agent", "single_agent", "duopoly"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn help_and_version_exit_cleanly() {
    assert_eq!(ocnash(&["--help"]).status.code(), Some(0));
    assert_eq!(ocnash(&["--version"]).status.code(), Some(0));
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("x");
    for args in [
        vec!["train", "--preset", "nope"],
        vec!["train", "--preset", "duopoly", "--train.gamma=2"],
        vec!["train", "--preset", "duopoly", "--train.no_such_field=1"],
        vec!["simulate", "--preset", "duopoly", "--checkpoint", "/nonexistent/ckpt.bin"],
        vec!["frobnicate"],
    ] {
        let mut args = args.clone();
        args.extend(["--out", p(&out_dir)]);
        let out = ocnash(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("checkpoint.bin");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let out = ocnash(&["simulate", "--preset", "duopoly", "--checkpoint", p(&ckpt), "--out", p(&dir.path().join("s"))]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn pipeline_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train");
    let ckpt = train.join("checkpoint.bin");
    let out = ocnash(&["train", "--preset", "duopoly", "--train.epochs=40", "--seed", "3", "--out", p(&train)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoint.bin", "loss.csv", "config.toml", "manifest.sha256"] {
        assert!(train.join(f).is_file(), "missing {f}");
    }
    let loss = std::fs::read_to_string(train.join("loss.csv")).unwrap();
    assert!(loss.starts_with("# config_hash="));
    assert_eq!(loss.lines().filter(|l| !l.starts_with('#')).count(), 41);

    let sim = dir.path().join("sim");
    let out = ocnash(&["simulate", "--checkpoint", p(&ckpt), "--eval.num_paths=200", "--out", p(&sim)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(sim.join("paths.bin").is_file());

    let met = dir.path().join("met");
    let out = ocnash(&["metrics", "--paths", p(&sim.join("paths.bin")), "--out", p(&met)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("Big") && text.contains("Small"), "{text}");

    let orc = dir.path().join("orc");
    let out = ocnash(&["oracle-check", "--checkpoint", p(&ckpt), "--out", p(&orc)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("exploitability"));
    let values = std::fs::read_to_string(orc.join("oracle_values.csv")).unwrap();
    assert!(values.lines().any(|l| l == "agent,value,objective"), "{values}");
    let manifest = std::fs::read_to_string(orc.join("manifest.sha256")).unwrap();
    assert!(manifest.lines().any(|l| l.ends_with("  oracle_values.csv")), "{manifest}");
}

use std::path::Path;
use std::process::{Command, Output};

use umt_core::eval::PatchCorpus;

const CONFIG: &str = r#"
seed = 3
[toy]
image_size = 300
bonafide_train = 2
bonafide_test = 1
spoof_train = 1
spoof_test = 1
[patch]
patches_per_image = 4
"#;

fn umt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_umt"))
        .args(args)
        .env("UMT_LOG", "error")
        .output()
        .expect("spawn umt")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn preprocess_caches_every_sampled_patch_and_records_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, CONFIG).unwrap();
    let corpus = dir.path().join("corpus");
    let patches = dir.path().join("patches");

    let out = umt(&["gen-toy", "--config", path(&cfg), "--out", path(&corpus)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = umt(&["preprocess", "--config", path(&cfg), "--seed", "11", "--out", path(&patches), "--corpus", path(&corpus)]);
    assert!(out.status.success(), "{}", stderr(&out));

    let loaded = PatchCorpus::load(&patches).unwrap();
    assert_eq!(loaded.len(), (2 + 1 + 3 * (1 + 1)) * 4);
    let resolved = std::fs::read_to_string(patches.join("resolved_config.toml")).unwrap();
    assert!(resolved.lines().any(|l| l.trim() == "seed = 11"), "{resolved}");
    assert!(patches.join("VERSION").is_file());
}

#[test]
fn errors_are_one_line_with_category_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");

    let out = umt(&["synthesize", "--patches", path(dir.path()), "--generator", path(&dir.path().join("none")), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).trim().starts_with("error["), "{}", stderr(&out));
    assert_eq!(stderr(&out).trim().lines().count(), 1);

    let out = umt(&["experiment", "--arm", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error[UsageError]"), "{}", stderr(&out));

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "seed = \"x\"").unwrap();
    let out = umt(&["gen-toy", "--config", path(&bad), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error[ConfigError]"), "{}", stderr(&out));
}

#[test]
fn missing_generator_checkpoint_is_reported_as_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, CONFIG).unwrap();
    let corpus = dir.path().join("corpus");
    let patches = dir.path().join("patches");
    assert!(umt(&["gen-toy", "--config", path(&cfg), "--out", path(&corpus)]).status.success());
    assert!(umt(&["preprocess", "--config", path(&cfg), "--out", path(&patches), "--corpus", path(&corpus)]).status.success());

    let out = umt(&["synthesize", "--config", path(&cfg), "--patches", path(&patches), "--generator", path(&dir.path().join("none")), "--out", path(&dir.path().join("s"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).starts_with("error[MissingArtifact]"), "{}", stderr(&out));
}

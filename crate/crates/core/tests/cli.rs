use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn warpnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_warpnet")).args(args).output().unwrap()
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn every_shipped_config_validates() {
    let mut seen = 0;
    for dir in [config(""), config("ucr")] {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.extension().is_some_and(|e| e == "toml") {
                warpnet::cli::load_config(&p, &[]).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
                seen += 1;
            }
        }
    }
    assert!(seen >= 10);
}

#[test]
fn unknown_key_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = warpnet(&["run", config("rank.toml").to_str().unwrap(), "--output", out, "--rank.bogus=1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("rank.bogus") || stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn bad_values_and_missing_files_map_to_their_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let rank = config("rank.toml");
    let o = warpnet(&["run", rank.to_str().unwrap(), "--output", out, "--schema_version=9"]);
    assert_eq!(o.status.code(), Some(2));
    let o = warpnet(&["run", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = warpnet(&["run", rank.to_str().unwrap(), "--output", out, "--rank.input=\"absent.csv\""]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = warpnet(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let o = warpnet(&["--threads", "0", "verify"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn rank_prints_the_reference_averages() {
    let o = warpnet(&["rank"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    for avg in ["3.20", "3.06", "2.70", "3.86", "2.18"] {
        assert!(text.contains(avg), "missing {avg} in\n{text}");
    }
}

#[test]
fn verify_passes_and_catches_an_injected_fault() {
    let o = warpnet(&["verify"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 10);
    let o = warpnet(&["verify", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL dtw_vs_brute_force"));
}

#[test]
fn mtl_smoke_run_writes_a_manifest_that_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let o = warpnet(&[
        "run",
        config("mtl_fixture.toml").to_str().unwrap(),
        "--output",
        first.to_str().unwrap(),
        "--train.num_epochs=1",
        "--group.tasks.0.count=30",
        "--group.tasks.1.count=20",
        "--model.resnet2d.num_blocks=2",
        "--model.resnet2d.channel_plan=[4, 4]",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for artifact in ["metrics.csv", "results.csv", "manifest.json", "checkpoints/mtl/best.json"] {
        assert!(first.join(artifact).exists(), "missing {artifact}");
    }
    let manifest = first.join("manifest.json");
    let o = warpnet(&["run", manifest.to_str().unwrap(), "--output", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for csv in ["metrics.csv", "results.csv"] {
        assert_eq!(std::fs::read(first.join(csv)).unwrap(), std::fs::read(second.join(csv)).unwrap(), "{csv}");
    }
}

#[test]
fn eval_scores_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = warpnet(&[
        "run",
        config("single_fixture.toml").to_str().unwrap(),
        "--output",
        run.to_str().unwrap(),
        "--train.num_epochs=1",
        "--group.tasks.0.count=20",
        "--group.tasks.1.count=20",
        "--model.resnet2d.num_blocks=1",
        "--model.resnet2d.channel_plan=[4]",
        "--baseline.onenn=false",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = std::fs::read_dir(run.join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().path().join("best.json"))
        .find(|p| p.exists())
        .expect("a single-task checkpoint");
    let o = warpnet(&[
        "eval",
        ck.to_str().unwrap(),
        "--config",
        run.join("manifest.json").to_str().unwrap(),
        "--output",
        dir.path().join("eval").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("accuracy"));
}

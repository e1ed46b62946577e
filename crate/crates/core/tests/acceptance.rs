//! End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero
//! exit if any hard criterion fails. Long: the two desk-scale training runs
//! take most of an hour on one core.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use warpnet::analysis::{rank_table, reference_accuracies, REFERENCE_METHODS};
use warpnet::cli::verify::{diagonal_identity, dtw_oracle, schedule_violation, soft_properties};
use warpnet::cli::{load_config, run_experiment, RunManifest, MANIFEST_FILE};
use warpnet::gradcheck::layer_suite;
use warpnet::training::MtlSchedule;

struct Verdict {
    passed: bool,
    /// Soft criteria are reported but do not fail the run.
    soft: bool,
    detail: String,
}

impl Verdict {
    fn hard(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, soft: false, detail: detail.into() }
    }
}

type Outcome = Result<Verdict, Box<dyn std::error::Error>>;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&p);
    p
}

/// Rows of a `header`-led CSV as column maps.
fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    Ok(lines
        .filter(|l| !l.is_empty())
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect())
}

fn metric_rows(dir: &Path) -> Result<Vec<(usize, String, String, String, f64)>, Box<dyn std::error::Error>> {
    read_csv(&dir.join("metrics.csv"))?
        .into_iter()
        .map(|r| {
            Ok((
                r["epoch"].parse()?,
                r["task"].clone(),
                r["split"].clone(),
                r["metric"].clone(),
                r["value"].parse()?,
            ))
        })
        .collect()
}

fn dtw_exhaustive() -> Outcome {
    let start = Instant::now();
    let r = dtw_oracle(6, false)?;
    let secs = start.elapsed().as_secs_f64();
    Ok(Verdict::hard(
        r.passed && secs < 60.0,
        format!("{} (series, radius) cases, worst {:.1e}, {secs:.1}s", r.cases, r.worst),
    ))
}

fn diagonal() -> Outcome {
    let r = diagonal_identity(&mut ChaCha8Rng::seed_from_u64(1), 1000, false)?;
    Ok(Verdict::hard(r.passed, format!("1000 pairs, worst {:.1e}", r.worst)))
}

fn soft_dtw() -> Outcome {
    let rs = soft_properties(&mut ChaCha8Rng::seed_from_u64(2), 100)?;
    let detail = rs.iter().map(|r| format!("{} {:.1e}", r.name, r.worst)).collect::<Vec<_>>().join(", ");
    Ok(Verdict::hard(rs.iter().all(|r| r.passed), detail))
}

fn autodiff() -> Outcome {
    let reports = layer_suite(4, 20)?;
    let required = [
        "conv1d",
        "conv2d",
        "batchnorm",
        "linear",
        "global_avg_pool",
        "l2_distance",
        "mse",
        "softmax_cross_entropy",
        "template_distance_map",
    ];
    let covered = required.iter().all(|l| reports.iter().any(|r| r.layer == *l && r.shapes == 20));
    let worst = reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    let failing: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.layer).collect();
    Ok(Verdict::hard(
        covered && failing.is_empty(),
        format!("{} layers x 20 shapes, worst rel {worst:.1e}, failing {failing:?}", reports.len()),
    ))
}

fn distance_desk(out: &Path) -> Outcome {
    let cfg = load_config(&configs().join("distance_desk.toml"), &[])?;
    let start = Instant::now();
    run_experiment(&cfg, out, 1)?;
    let elapsed = start.elapsed();
    let mut median: BTreeMap<(String, String), f64> = BTreeMap::new();
    for r in read_csv(&out.join("error_summary.csv"))? {
        median.insert((r["constraint"].clone(), r["architecture"].clone()), r["median_ae"].parse()?);
    }
    let mut wins = Vec::new();
    let mut lines = Vec::new();
    for c in ["unconstrained", "band05", "band10", "band20"] {
        let (two, one) = (median[&(c.into(), "ResNet2D".into())], median[&(c.into(), "ResNet1D".into())]);
        wins.push(two < one);
        lines.push(format!("{c} {two:.2}/{one:.2}"));
    }
    let banded = wins[1..].iter().filter(|w| **w).count();
    let in_budget = elapsed <= Duration::from_secs(45 * 60);
    Ok(Verdict::hard(
        wins[0] && banded >= 2 && in_budget,
        format!(
            "median AE 2D/1D: {}; {:.1} min",
            lines.join(", "),
            elapsed.as_secs_f64() / 60.0
        ),
    ))
}

fn schedule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = MtlSchedule::new(&[120, 40], 40)?;
    let plan = s.epoch(&mut rng);
    let per_task = |t: usize| plan.iter().filter(|b| b.task == t).count();
    let mut first: Vec<usize> = plan.iter().filter(|b| b.task == 0).flat_map(|b| b.indices.clone()).collect();
    first.sort_unstable();
    let traced = s.n_iter == 3 && per_task(0) == 3 && per_task(1) == 3 && first == (0..120).collect::<Vec<_>>();

    let mut violations = 0;
    for _ in 0..200 {
        let tasks = rand::Rng::random_range(&mut rng, 1..7);
        let sizes: Vec<usize> = (0..tasks).map(|_| rand::Rng::random_range(&mut rng, 1..500)).collect();
        let batch = rand::Rng::random_range(&mut rng, 1..100);
        violations += usize::from(schedule_violation(&sizes, batch, &mut rng).is_some());
    }

    let mut s = MtlSchedule::new(&[40, 40, 40], 40)?;
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut counts = [0usize; 6];
    for _ in 0..10_000 {
        let p = s.epoch(&mut rng);
        let order = [p[0].task, p[1].task, p[2].task];
        counts[perms.iter().position(|q| *q == order).unwrap()] += 1;
    }
    let expected = 10_000.0 / 6.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(5.0)?.cdf(stat);
    Ok(Verdict::hard(
        traced && violations == 0 && p > 0.01,
        format!("hand trace {traced}, {violations}/200 shapes violate, order chi2 p={p:.3}"),
    ))
}

fn ranks() -> Outcome {
    let reference = reference_accuracies();
    let methods: Vec<String> = REFERENCE_METHODS.iter().map(|m| m.to_string()).collect();
    let tasks: Vec<String> = reference.iter().map(|(t, _)| t.to_string()).collect();
    let acc: Vec<Vec<f64>> = reference.iter().map(|(_, a)| a.to_vec()).collect();
    let table = rank_table(&methods, &tasks, &acc)?;
    let cricket = tasks.iter().position(|t| t == "CricketX").ok_or("CricketX missing")?;
    let cricket_ok = table.ranks[cricket] == [2.5, 4.5, 2.5, 4.5, 1.0];
    let averages: Vec<String> = table.average_ranks.iter().map(|r| format!("{r:.2}")).collect();
    Ok(Verdict::hard(
        cricket_ok && averages == ["3.20", "3.06", "2.70", "3.86", "2.18"],
        format!("CricketX {:?}, averages {}", table.ranks[cricket], averages.join("/")),
    ))
}

fn mtl_fixture(out: &Path) -> Outcome {
    let cfg = load_config(&configs().join("mtl_fixture.toml"), &[])?;
    let start = Instant::now();
    // training aborts with an error if a hard-sharing audit ever fails
    run_experiment(&cfg, out, 1)?;
    let elapsed = start.elapsed();
    let rows = metric_rows(out)?;
    let tasks: Vec<String> = cfg.group.as_ref().ok_or("group missing")?.tasks.iter().map(|t| t.name().to_string()).collect();
    let onenn: Vec<f64> = tasks
        .iter()
        .map(|t| rows.iter().find(|r| &r.1 == t && r.3 == "onenn_accuracy").map_or(0.0, |r| r.4))
        .collect();
    let mut val: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for t in &tasks {
        for r in rows.iter().filter(|r| &r.1 == t && r.2 == "val" && r.3 == "accuracy") {
            val.entry(r.0).or_default().push(r.4);
        }
    }
    let reached = val
        .iter()
        .find(|(e, a)| **e <= 50 && a.len() == tasks.len() && a.iter().all(|v| *v >= 0.90))
        .map(|(e, _)| *e);
    let best_val = val.values().filter(|a| a.len() == tasks.len()).map(|a| a.iter().cloned().fold(1.0, f64::min)).fold(0.0, f64::max);
    let ok = onenn.iter().all(|a| *a >= 0.95) && reached.is_some() && elapsed <= Duration::from_secs(20 * 60);
    Ok(Verdict::hard(
        ok,
        format!(
            "1NN-DTW {onenn:.3?}, both tasks >= 0.90 at epoch {reached:?} (best min {best_val:.3}), {:.1} min",
            elapsed.as_secs_f64() / 60.0
        ),
    ))
}

fn importance(distance_run: &Path, out: &Path) -> Outcome {
    let checkpoint = distance_run.join("checkpoints/resnet2d_unconstrained/best.json");
    if !checkpoint.exists() {
        return Err("no ResNet2D checkpoint; did the distance run finish?".into());
    }
    let checkpoint = toml::Value::String(checkpoint.display().to_string()).to_string();
    let cfg = load_config(&configs().join("importance_desk.toml"), &[format!("importance.checkpoint={checkpoint}")])?;
    run_experiment(&cfg, out, 1)?;
    let rows = metric_rows(out)?;
    let frac = rows
        .iter()
        .find(|r| r.1 == "importance" && r.3 == "hit_fraction")
        .map(|r| r.4)
        .ok_or("no hit_fraction row")?;
    let pairs = rows.iter().filter(|r| r.3.starts_with("tube_ratio/")).count();
    Ok(Verdict {
        passed: pairs == 20 && frac >= 0.6,
        soft: true,
        detail: format!(
            "{pairs} pairs, {:.0}% with ratio >= 1.5; maps in {}",
            frac * 100.0,
            out.join("importance").display()
        ),
    })
}

/// Runs a small experiment of every kind, reruns each from its manifest and
/// compares every CSV byte for byte.
fn determinism() -> Outcome {
    let root = scratch("determinism");
    let tiny = |extra: &[&str]| -> Vec<String> { extra.iter().map(|s| s.to_string()).collect() };
    let walks = ["walks.train_pairs=24", "walks.val_pairs=8", "walks.test_pairs=8", "walks.length=12"];
    let small2d = ["model.resnet2d.num_blocks=2", "model.resnet2d.channel_plan=[4, 4]"];
    let mut cases: Vec<(&str, Vec<String>)> = vec![
        ("gen_data_desk.toml", tiny(&walks)),
        ("rank.toml", vec![]),
    ];
    let mut distance = tiny(&walks);
    distance.extend(tiny(&small2d));
    distance.extend(tiny(&[
        "model.resnet1d.channel_plan=[[1, 4], [4, 4]]",
        "model.projection_dim=4",
        "train.num_epochs=2",
        "importance.pairs=2",
    ]));
    cases.push(("distance_desk.toml", distance));
    for fixture in ["mtl_fixture.toml", "single_fixture.toml"] {
        let mut o = tiny(&small2d);
        o.extend(tiny(&["train.num_epochs=2", "group.tasks.0.count=24", "group.tasks.1.count=16"]));
        cases.push((fixture, o));
    }
    // these two read the checkpoint written by the distance case above
    let checkpoint = root.join("2_first/checkpoints/resnet2d_unconstrained/best.json");
    let checkpoint = toml::Value::String(checkpoint.display().to_string()).to_string();
    let mut eval = tiny(&walks);
    eval.extend([
        "kind=\"eval\"".to_string(),
        format!("eval.checkpoint={checkpoint}"),
        "eval.constraint=\"band10\"".to_string(),
    ]);
    cases.push(("distance_desk.toml", eval));
    let mut importance = tiny(&walks);
    importance.extend([format!("importance.checkpoint={checkpoint}"), "importance.pairs=2".to_string()]);
    cases.push(("importance_desk.toml", importance));
    let mut failures = Vec::new();
    let mut compared = 0;
    for (i, (name, overrides)) in cases.iter().enumerate() {
        let cfg = load_config(&configs().join(name), overrides)?;
        let first = root.join(format!("{i}_first"));
        let second = root.join(format!("{i}_second"));
        let manifest = run_experiment(&cfg, &first, 1)?;
        let replay = RunManifest::load(&first.join(MANIFEST_FILE))?;
        run_experiment(&replay.config, &second, 1)?;
        for rel in manifest.artifacts.keys().filter(|k| k.ends_with(".csv")) {
            compared += 1;
            if std::fs::read(first.join(rel))? != std::fs::read(second.join(rel))? {
                failures.push(format!("{name}:{rel}"));
            }
        }
    }
    Ok(Verdict::hard(
        failures.is_empty() && compared > 0,
        format!("{} experiments, {compared} CSVs compared, mismatches {failures:?}", cases.len()),
    ))
}

fn main() {
    let distance_out = scratch("distance_desk");
    let mtl_out = scratch("mtl_fixture");
    let importance_out = scratch("importance_desk");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 dtw_equals_brute_force", Box::new(dtw_exhaustive)),
        ("2 radius0_is_diagonal_sum", Box::new(diagonal)),
        ("3 soft_dtw_properties", Box::new(soft_dtw)),
        ("4 layer_gradients", Box::new(autodiff)),
        ("5 resnet2d_beats_siamese", Box::new(|| distance_desk(&distance_out))),
        ("6 mtl_schedule", Box::new(schedule)),
        ("7 reference_ranks", Box::new(ranks)),
        ("8 mtl_fixture", Box::new(|| mtl_fixture(&mtl_out))),
        ("9 importance_in_tube", Box::new(|| importance(&distance_out, &importance_out))),
        ("10 manifest_replay", Box::new(determinism)),
    ];
    // `cargo test --test acceptance -- 5 9` runs only the listed criteria
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |name: &str| only.is_empty() || only.iter().any(|n| name.split(' ').next() == Some(n.as_str()));
    let mut hard_failures = 0;
    let mut ran = 0;
    for (name, run) in criteria.iter().filter(|(name, _)| selected(name)) {
        ran += 1;
        let start = Instant::now();
        let verdict = run().unwrap_or_else(|e| Verdict::hard(false, format!("error: {e}")));
        let tag = match (verdict.passed, verdict.soft) {
            (true, _) => "PASS",
            (false, true) => "FAIL (soft)",
            (false, false) => "FAIL",
        };
        if !verdict.passed && !verdict.soft {
            hard_failures += 1;
        }
        println!("{tag} {name} [{:.1}s] {}", start.elapsed().as_secs_f64(), verdict.detail);
    }
    println!("{ran} criteria, {hard_failures} hard failures");
    if hard_failures > 0 {
        std::process::exit(1);
    }
}

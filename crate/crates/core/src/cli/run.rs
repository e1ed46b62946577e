//! Experiment drivers behind `warpnet run`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{kind_name, ConstraintSpec, ExperimentConfig, ExperimentKind, ImportanceSection, SCHEMA_VERSION};
use crate::analysis::{
    onenn_accuracy, perturbation_map, rank_table, reference_accuracies, tube_ratio, MapMetadata, REFERENCE_METHODS,
};
use crate::datasets::{build_group, gen_random_walk_pairs, DistancePairSet, MtlGroup, PairSplit, Split, WalkConfig};
use crate::error::{Error, Result};
use crate::models::{Architecture, DistanceModel};
use crate::training::{
    evaluate_distance, evaluate_task, train_distance, train_mtl, train_single_task, Checkpoint, DistanceMetrics,
    HeadKind, MetricsLog, TrainConfig,
};
use crate::warping::{dtw_with_path, pairwise_matrix, DtwParams};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

/// Everything needed to re-run an experiment: the resolved config, the
/// artifacts it produced (with SHA-256 digests) and where the time went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub threads: usize,
    pub config: ExperimentConfig,
    /// Relative path to lowercase hex SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub phases: Vec<PhaseTiming>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let m: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            key: e.path().to_string(),
            message: e.into_inner().to_string(),
        })?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema {
                key: "schema_version".into(),
                message: format!("manifest version {} is not supported", m.schema_version),
            });
        }
        m.config.validate()?;
        Ok(m)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Output directory plus bookkeeping shared by every experiment.
struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
    artifacts: Vec<PathBuf>,
    phases: Vec<PhaseTiming>,
    log: MetricsLog,
}

impl Run {
    fn phase<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        log::info!("phase {name}");
        let r = f(self);
        self.phases.push(PhaseTiming {
            phase: name.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        r
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        self.artifacts.push(PathBuf::from(rel));
        Ok(())
    }

    fn record(&mut self, rel: &str) {
        self.artifacts.push(PathBuf::from(rel));
    }

    fn train_cfg(&self, checkpoint_rel: &str) -> TrainConfig {
        let mut t = self.cfg.train.clone();
        t.checkpoint_dir = Some(self.path(checkpoint_rel));
        t
    }
}

/// Runs the configured experiment into `out` and writes its manifest.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<RunManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut run = Run {
        cfg: cfg.clone(),
        out: out.to_path_buf(),
        artifacts: Vec::new(),
        phases: Vec::new(),
        log: MetricsLog::default(),
    };
    match cfg.kind {
        ExperimentKind::GenData => gen_data(&mut run)?,
        ExperimentKind::TrainDistance => train_distance_experiment(&mut run)?,
        ExperimentKind::TrainSingle | ExperimentKind::TrainMtl => classification(&mut run)?,
        ExperimentKind::Eval => eval(&mut run)?,
        ExperimentKind::Importance => importance_experiment(&mut run)?,
        ExperimentKind::Rank => rank(&mut run)?,
    }
    let csv = run.log.to_csv();
    run.write(METRICS_FILE, &csv)?;
    let mut artifacts = BTreeMap::new();
    for rel in &run.artifacts {
        let key = rel.to_string_lossy().replace('\\', "/");
        artifacts.insert(key, sha256_file(&out.join(rel))?);
    }
    let manifest = RunManifest {
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        schema_version: SCHEMA_VERSION,
        kind: cfg.kind,
        seed: cfg.seed,
        threads,
        config: cfg.clone(),
        artifacts,
        phases: run.phases,
    };
    let p = out.join(MANIFEST_FILE);
    std::fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}

fn walk_split(cfg: &ExperimentConfig, params: &DtwParams, split: PairSplit) -> Result<DistancePairSet> {
    let w = cfg.walks.as_ref().ok_or_else(|| Error::Config("walks section missing".into()))?;
    let count = match split {
        PairSplit::Train => w.train_pairs,
        PairSplit::Val => w.val_pairs,
        PairSplit::Test => w.test_pairs,
    };
    let mut wc = WalkConfig::new(count, w.length, cfg.seed);
    wc.normalize = w.normalize;
    gen_random_walk_pairs(&wc, split, params)
}

fn walk_sets(cfg: &ExperimentConfig, params: &DtwParams) -> Result<[DistancePairSet; 3]> {
    Ok([
        walk_split(cfg, params, PairSplit::Train)?,
        walk_split(cfg, params, PairSplit::Val)?,
        walk_split(cfg, params, PairSplit::Test)?,
    ])
}

fn gen_data(run: &mut Run) -> Result<()> {
    let params = run.cfg.dtw;
    let sets = run.phase("generate", |r| walk_sets(&r.cfg, &params))?;
    for set in &sets {
        let split = match set.split {
            PairSplit::Train => "train",
            PairSplit::Val => "val",
            PairSplit::Test => "test",
        };
        let rel = format!("pairs_{split}.json");
        set.save(&run.path(&rel))?;
        run.record(&rel);
        run.log.push(0, "walks", split, "count", set.len() as f64);
        run.log.push(0, "walks", split, "mean_target", set.mean_target());
    }
    Ok(())
}

fn arch_label(a: Architecture) -> &'static str {
    match a {
        Architecture::Resnet1d => "ResNet1D",
        Architecture::Resnet2d => "ResNet2D",
    }
}

fn find_constraint<'a>(constraints: &'a [ConstraintSpec], name: &str) -> Result<&'a ConstraintSpec> {
    constraints
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::Schema {
            key: "importance.constraint".into(),
            message: format!("no constraint named `{name}`"),
        })
}

fn train_distance_experiment(run: &mut Run) -> Result<()> {
    let section = run.cfg.distance_section();
    let length = run.cfg.walks.as_ref().map_or(0, |w| w.length);
    let base = run.phase("generate", |r| walk_sets(&r.cfg, &DtwParams::unconstrained()))?;
    let mut summary = String::from("constraint,architecture,best_epoch,count,median_ae,q1_ae,q3_ae,mae\n");
    let mut importance_model: Option<(DistanceModel, String)> = None;
    let wanted = run.cfg.importance.as_ref().map(|i| i.constraint.clone());
    for c in &section.constraints {
        let params = c.params(length, &run.cfg.dtw)?;
        let [train, val, test] = run.phase(&format!("targets/{}", c.name), |_| {
            Ok::<_, Error>([base[0].with_params(&params)?, base[1].with_params(&params)?, base[2].with_params(&params)?])
        })?;
        for &arch in &section.architectures {
            let mut spec = run.cfg.model.clone().ok_or_else(|| Error::Config("model section missing".into()))?;
            spec.arch = arch;
            let task = format!("{arch}/{}", c.name);
            let ck_rel = format!("checkpoints/{arch}_{}", c.name);
            let tcfg = run.train_cfg(&ck_rel);
            let seed = run.cfg.seed;
            let outcome = run.phase(&format!("train/{task}"), |r| {
                let mut model = DistanceModel::new(&spec, seed)?;
                train_distance(&mut model, &train, &val, &tcfg, &task, &mut r.log)
            })?;
            run.record(&format!("{ck_rel}/best.json"));
            let model = outcome.best.distance_model()?;
            let m = run.phase(&format!("test/{task}"), |_| evaluate_distance(&model, &test, tcfg.batch_size))?;
            for (k, v) in m.named() {
                run.log.push(outcome.best.epoch, &task, "test", k, v);
            }
            let _ = writeln!(
                summary,
                "{},{},{},{},{},{},{},{}",
                c.name,
                arch_label(arch),
                outcome.best.epoch,
                m.count,
                m.median_ae,
                m.q1_ae,
                m.q3_ae,
                m.mae
            );
            if arch == Architecture::Resnet2d && wanted.as_deref() == Some(c.name.as_str()) {
                importance_model = Some((model, format!("{ck_rel}/best.json")));
            }
        }
    }
    run.write("error_summary.csv", &summary)?;
    if let Some(imp) = run.cfg.importance.clone() {
        find_constraint(&section.constraints, &imp.constraint)?;
        let (model, ck) = importance_model.ok_or_else(|| {
            Error::Config(format!("importance needs a ResNet2D model trained under `{}`", imp.constraint))
        })?;
        run.phase("importance", |r| importance_maps(r, &model, &ck, &base[2], &imp))?;
    }
    Ok(())
}

/// Perturbation maps for the first `pairs` test pairs, scored against the
/// unconstrained DTW path of each pair.
fn importance_maps(
    run: &mut Run,
    model: &DistanceModel,
    checkpoint: &str,
    test: &DistancePairSet,
    imp: &ImportanceSection,
) -> Result<()> {
    let count = imp.pairs.min(test.len());
    let mut summary = String::from("pair,reference_output,tube_ratio,hit\n");
    let mut hits = 0;
    for i in 0..count {
        let (a, b) = test.pair(i);
        let x = pairwise_matrix(a, b, run.cfg.dtw.elementwise_mode)?;
        let (_, path) = dtw_with_path(&x, &DtwParams::unconstrained())?;
        let map = perturbation_map(model, &x, imp.patch)?;
        let ratio = tube_ratio(&map, &path, imp.tube_radius);
        let hit = ratio.is_some_and(|r| r >= imp.min_ratio);
        hits += usize::from(hit);
        run.write(&format!("importance/pair_{i:04}.csv"), &map.to_csv())?;
        let meta = MapMetadata {
            checkpoint: checkpoint.into(),
            pair_id: i,
            reference_output: map.reference,
            patch: imp.patch,
            path: path.cells().to_vec(),
            tube_ratio: ratio,
        };
        run.write(&format!("importance/pair_{i:04}.json"), &serde_json::to_string(&meta)?)?;
        let _ = writeln!(
            summary,
            "{i},{},{},{}",
            map.reference,
            ratio.map_or("nan".to_string(), |r| r.to_string()),
            u8::from(hit)
        );
        if let Some(r) = ratio {
            run.log.push(0, "importance", "test", &format!("tube_ratio/{i:04}"), r);
        }
    }
    let frac = hits as f64 / count.max(1) as f64;
    run.log.push(0, "importance", "test", "hit_fraction", frac);
    log::info!("importance: {hits}/{count} pairs with tube ratio >= {}", imp.min_ratio);
    run.write("importance_summary.csv", &summary)
}

fn load_group(run: &Run) -> Result<MtlGroup> {
    let g = run.cfg.group.as_ref().ok_or_else(|| Error::Config("group section missing".into()))?;
    build_group(g, run.cfg.base_dir.as_deref(), run.cfg.seed)
}

fn method_name(arch: Architecture, mtl: bool) -> String {
    if mtl {
        format!("{} w/ MTL", arch_label(arch))
    } else {
        arch_label(arch).to_string()
    }
}

fn classification(run: &mut Run) -> Result<()> {
    let group = run.phase("load", |r| load_group(r))?;
    let spec = run.cfg.model.clone().ok_or_else(|| Error::Config("model section missing".into()))?;
    let mtl = run.cfg.kind == ExperimentKind::TrainMtl;
    let method = method_name(spec.arch, mtl);
    let batch = run.cfg.train.batch_size;
    let mut results = String::from("task,method,accuracy\n");
    let mut scored: Vec<(String, f64)> = Vec::new();
    if mtl {
        let tcfg = run.train_cfg("checkpoints/mtl");
        let seed = run.cfg.seed;
        let outcome = run.phase("train/mtl", |r| {
            let mut model = crate::models::Classifier::new(&spec, &group.task_specs(), seed)?;
            train_mtl(&mut model, &group, &tcfg, &mut r.log)
        })?;
        run.record("checkpoints/mtl/best.json");
        let model = outcome.best.classifier()?;
        for (h, task) in group.tasks.iter().enumerate() {
            let m = evaluate_task(&model, h, &task.test, batch)?;
            run.log.push(outcome.best.epoch, &task.name, "test", "accuracy", m.accuracy);
            run.log.push(outcome.best.epoch, &task.name, "test", "loss", m.loss);
            scored.push((task.name.clone(), m.accuracy));
        }
    } else {
        for task in &group.tasks {
            let rel = format!("checkpoints/{}", task.name);
            let tcfg = run.train_cfg(&rel);
            let seed = run.cfg.seed;
            let specs = vec![(task.name.clone(), task.num_classes)];
            let outcome = run.phase(&format!("train/{}", task.name), |r| {
                let mut model = crate::models::Classifier::new(&spec, &specs, seed)?;
                train_single_task(&mut model, task, &tcfg, &mut r.log)
            })?;
            run.record(&format!("{rel}/best.json"));
            let model = outcome.best.classifier()?;
            let m = evaluate_task(&model, 0, &task.test, batch)?;
            run.log.push(outcome.best.epoch, &task.name, "test", "accuracy", m.accuracy);
            run.log.push(outcome.best.epoch, &task.name, "test", "loss", m.loss);
            scored.push((task.name.clone(), m.accuracy));
        }
    }
    for (task, acc) in &scored {
        let _ = writeln!(results, "{task},{method},{acc}");
    }
    if run.cfg.baseline.as_ref().is_some_and(|b| b.onenn) {
        let params = run.cfg.dtw;
        run.phase("baseline/1nn-dtw", |r| {
            for task in &group.tasks {
                let acc = onenn_accuracy(&task.train, &task.test, &params)?;
                r.log.push(0, &task.name, "test", "onenn_accuracy", acc);
                let _ = writeln!(results, "{},1NN-DTW,{acc}", task.name);
            }
            Ok(())
        })?;
    }
    run.write("results.csv", &results)
}

fn eval(run: &mut Run) -> Result<()> {
    let e = run.cfg.eval.clone().ok_or_else(|| Error::Config("eval section missing".into()))?;
    let ck = Checkpoint::load(&run.cfg.resolve_path(&e.checkpoint))?;
    let batch = run.cfg.train.batch_size;
    let split = e.split.as_str();
    match &ck.head {
        HeadKind::Distance { .. } => {
            let length = run.cfg.walks.as_ref().map_or(0, |w| w.length);
            let section = run.cfg.distance_section();
            let params = find_constraint(&section.constraints, &e.constraint)?.params(length, &run.cfg.dtw)?;
            let which = match e.split {
                Split::Train => PairSplit::Train,
                Split::Val => PairSplit::Val,
                Split::Test => PairSplit::Test,
            };
            let set = &run.phase("generate", |r| walk_split(&r.cfg, &params, which))?;
            let model = ck.distance_model()?;
            let m: DistanceMetrics = run.phase("evaluate", |_| evaluate_distance(&model, set, batch))?;
            let task = format!("{}/{}", ck.spec.arch, e.constraint);
            for (k, v) in m.named() {
                run.log.push(ck.epoch, &task, split, k, v);
            }
        }
        HeadKind::Classifier { .. } => {
            let group = run.phase("load", |r| load_group(r))?;
            let model = ck.classifier()?;
            // single-task checkpoints only carry a head for their own task
            let heads: Vec<_> = group
                .tasks
                .iter()
                .filter_map(|t| model.task_index(&t.name).ok().map(|h| (t, h)))
                .collect();
            if heads.is_empty() {
                return Err(Error::Data(format!(
                    "checkpoint has no head for any task of group `{}`",
                    group.name
                )));
            }
            for (task, h) in heads {
                let m = evaluate_task(&model, h, task.split(e.split), batch)?;
                run.log.push(ck.epoch, &task.name, split, "accuracy", m.accuracy);
                run.log.push(ck.epoch, &task.name, split, "loss", m.loss);
            }
        }
    }
    Ok(())
}

fn importance_experiment(run: &mut Run) -> Result<()> {
    let imp = run.cfg.importance.clone().ok_or_else(|| Error::Config("importance section missing".into()))?;
    let rel = imp.checkpoint.clone().ok_or_else(|| Error::Config("importance.checkpoint missing".into()))?;
    let path = run.cfg.resolve_path(&rel);
    let model = Checkpoint::load(&path)?.distance_model()?;
    let test = run.phase("generate", |r| walk_split(&r.cfg, &DtwParams::unconstrained(), PairSplit::Test))?;
    let label = path.display().to_string();
    run.phase("importance", |r| importance_maps(r, &model, &label, &test, &imp))
}

/// Reads `task,method,accuracy` rows, keeping first-seen task and method
/// order.
pub fn read_accuracy_csv(text: &str, source: &str) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>)> {
    let mut tasks: Vec<String> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("task,")) {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: source.into(),
            line: n + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [task, method, acc] = fields[..] else {
            return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
        };
        let acc: f64 = acc.parse().map_err(|_| parse_err(format!("`{acc}` is not a number")))?;
        let ti = tasks.iter().position(|t| t == task).unwrap_or_else(|| {
            tasks.push(task.into());
            tasks.len() - 1
        });
        let mi = methods.iter().position(|m| m == method).unwrap_or_else(|| {
            methods.push(method.into());
            methods.len() - 1
        });
        if cells.insert((ti, mi), acc).is_some() {
            return Err(parse_err(format!("duplicate cell {task}/{method}")));
        }
    }
    let mut rows = Vec::with_capacity(tasks.len());
    for (ti, task) in tasks.iter().enumerate() {
        let mut row = Vec::with_capacity(methods.len());
        for (mi, method) in methods.iter().enumerate() {
            row.push(
                *cells
                    .get(&(ti, mi))
                    .ok_or_else(|| Error::Data(format!("{source}: no accuracy for {task}/{method}")))?,
            );
        }
        rows.push(row);
    }
    Ok((methods, tasks, rows))
}

/// Rank table from a CSV, or the built-in reference matrix.
pub fn load_rank_input(cfg: &ExperimentConfig) -> Result<crate::analysis::RankTable> {
    match cfg.rank.as_ref().and_then(|r| r.input.as_ref()) {
        Some(p) => {
            let path = cfg.resolve_path(p);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let (methods, tasks, acc) = read_accuracy_csv(&text, &path.display().to_string())?;
            rank_table(&methods, &tasks, &acc)
        }
        None => {
            let rows = reference_accuracies();
            let methods: Vec<String> = REFERENCE_METHODS.iter().map(|s| s.to_string()).collect();
            let tasks: Vec<String> = rows.iter().map(|(t, _)| t.to_string()).collect();
            let acc: Vec<Vec<f64>> = rows.iter().map(|(_, a)| a.to_vec()).collect();
            rank_table(&methods, &tasks, &acc)
        }
    }
}

fn rank(run: &mut Run) -> Result<()> {
    let table = run.phase("rank", |r| load_rank_input(&r.cfg))?;
    for (m, r) in table.methods.iter().zip(&table.average_ranks) {
        run.log.push(0, m, "test", "average_rank", *r);
    }
    run.write("rank_table.csv", &table.to_csv())?;
    run.write("rank_table.txt", &table.to_text())
}

/// Short description used in log output.
pub fn describe(cfg: &ExperimentConfig) -> String {
    format!("{} `{}` (seed {})", kind_name(cfg.kind), cfg.name, cfg.seed)
}

use std::ffi::{CStr, CString};
use std::ptr;

use warpnet::datasets::{build_group, gen_random_walk_pairs, GroupConfig, PairSplit, ShapeTaskConfig, TaskSource, WalkConfig};
use warpnet::models::{Architecture, Classifier, DistanceModel, ModelSpec};
use warpnet::training::{predict_distances, predict_labels, train_distance, train_single_task, MetricsLog, TrainConfig};
use warpnet::warping::{dtw, pairwise_matrix, DtwParams, ElementwiseMode};
use warpnet_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(warpnet_last_error()) }.to_string_lossy().into_owned()
}

fn cstring(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(warpnet_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn dtw_matches_core_for_every_radius() {
    let a = [0.0, 1.0, 3.0, 2.0, 2.5];
    let b = [0.5, 1.0, 2.0, 3.5];
    let x = pairwise_matrix(&a, &b, ElementwiseMode::Abs).unwrap();
    for radius in [-1i64, 0, 1, 3] {
        let mut out = f64::NAN;
        let status = unsafe { warpnet_dtw(a.as_ptr(), a.len(), b.as_ptr(), b.len(), radius, &mut out) };
        let params = DtwParams { band_radius: usize::try_from(radius).ok(), ..DtwParams::default() };
        match dtw(&x, &params) {
            Ok(expect) => {
                assert_eq!(status, WarpnetStatus::Ok);
                assert_eq!(out, expect);
            }
            Err(_) => assert_ne!(status, WarpnetStatus::Ok),
        }
    }
}

#[test]
fn pairwise_and_soft_dtw() {
    let a = [0.0, 2.0];
    let b = [1.0, 1.0, 4.0];
    let mut m = [0.0; 6];
    assert_eq!(
        unsafe { warpnet_pairwise_matrix(a.as_ptr(), 2, b.as_ptr(), 3, m.as_mut_ptr()) },
        WarpnetStatus::Ok
    );
    assert_eq!(m, [1.0, 1.0, 4.0, 1.0, 1.0, 2.0]);
    let (mut hard, mut soft) = (0.0, 0.0);
    unsafe {
        assert_eq!(warpnet_dtw(a.as_ptr(), 2, b.as_ptr(), 3, -1, &mut hard), WarpnetStatus::Ok);
        assert_eq!(warpnet_soft_dtw(a.as_ptr(), 2, b.as_ptr(), 3, 0.5, &mut soft), WarpnetStatus::Ok);
    }
    assert!(soft <= hard);
    let status = unsafe { warpnet_soft_dtw(a.as_ptr(), 2, b.as_ptr(), 3, -1.0, &mut soft) };
    assert_eq!(status, WarpnetStatus::Schema);
    assert!(!last_error().is_empty());
}

#[test]
fn path_handle_walks_corner_to_corner() {
    let a = [0.0, 1.0, 2.0, 3.0];
    let b = [0.0, 0.0, 1.0, 2.0, 3.0];
    let mut distance = f64::NAN;
    let mut path = ptr::null_mut();
    unsafe {
        assert_eq!(warpnet_dtw_path(a.as_ptr(), 4, b.as_ptr(), 5, -1, &mut distance, &mut path), WarpnetStatus::Ok);
        assert!(!path.is_null());
        assert_eq!(distance, 0.0);
        let len = warpnet_path_len(path);
        assert!(len >= 5);
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        assert_eq!(warpnet_path_get(path, 0, &mut i, &mut j), WarpnetStatus::Ok);
        assert_eq!((i, j), (0, 0));
        assert_eq!(warpnet_path_get(path, len - 1, &mut i, &mut j), WarpnetStatus::Ok);
        assert_eq!((i, j), (3, 4));
        assert_eq!(warpnet_path_get(path, len, &mut i, &mut j), WarpnetStatus::Usage);
        warpnet_path_free(path);
        warpnet_path_free(ptr::null_mut());
    }
}

#[test]
fn null_pointers_are_reported() {
    let b = [1.0];
    let mut out = 0.0;
    let status = unsafe { warpnet_dtw(ptr::null(), 1, b.as_ptr(), 1, -1, &mut out) };
    assert_eq!(status, WarpnetStatus::NullPointer);
    assert!(last_error().contains('a'));
    let status = unsafe { warpnet_dtw(b.as_ptr(), 1, b.as_ptr(), 1, -1, ptr::null_mut()) };
    assert_eq!(status, WarpnetStatus::NullPointer);
    assert_eq!(unsafe { warpnet_path_len(ptr::null()) }, 0);
    assert_eq!(unsafe { warpnet_classifier_num_tasks(ptr::null()) }, 0);
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { warpnet_distance_model_load(ptr::null(), &mut model) }, WarpnetStatus::NullPointer);
}

#[test]
fn fractional_ranks_share_ties() {
    let scores = [0.9, 0.7, 0.9, 0.5];
    let mut ranks = [0.0; 4];
    assert_eq!(unsafe { warpnet_fractional_ranks(scores.as_ptr(), 4, ranks.as_mut_ptr()) }, WarpnetStatus::Ok);
    assert_eq!(ranks, [1.5, 3.0, 1.5, 4.0]);
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = cstring(&dir.path().join("absent.json"));
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { warpnet_distance_model_load(path.as_ptr(), &mut model) }, WarpnetStatus::Data);
    assert!(model.is_null());
    assert!(last_error().contains("absent.json"));
}

fn tiny_spec(arch: Architecture) -> ModelSpec {
    let mut spec = ModelSpec::new(arch);
    spec.resnet1d.channel_plan = vec![(1, 4), (4, 4)];
    spec.projection_dim = 4;
    spec.resnet2d.num_blocks = 2;
    spec.resnet2d.channel_plan = vec![4, 4];
    spec.resnet2d.templates = 3;
    spec.resnet2d.template_length = 8;
    spec
}

fn one_epoch() -> TrainConfig {
    TrainConfig { num_epochs: 1, batch_size: 8, ..TrainConfig::default() }
}

#[test]
fn distance_model_round_trips_through_a_checkpoint() {
    let p = DtwParams::unconstrained();
    let train = gen_random_walk_pairs(&WalkConfig::new(16, 12, 3), PairSplit::Train, &p).unwrap();
    let val = gen_random_walk_pairs(&WalkConfig::new(8, 12, 3), PairSplit::Val, &p).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("best.json");
    for arch in [Architecture::Resnet1d, Architecture::Resnet2d] {
        let mut model = DistanceModel::new(&tiny_spec(arch), 5).unwrap();
        let outcome = train_distance(&mut model, &train, &val, &one_epoch(), "d", &mut MetricsLog::default()).unwrap();
        outcome.best.save(&ck).unwrap();
        let expect = predict_distances(&outcome.best.distance_model().unwrap(), &val, 8).unwrap();
        let c = cstring(&ck);
        let mut handle = ptr::null_mut();
        unsafe {
            assert_eq!(warpnet_distance_model_load(c.as_ptr(), &mut handle), WarpnetStatus::Ok);
            for (i, want) in expect.iter().enumerate() {
                let (a, b) = val.pair(i);
                let mut got = f64::NAN;
                assert_eq!(
                    warpnet_distance_model_predict(handle, a.as_ptr(), b.as_ptr(), a.len(), &mut got),
                    WarpnetStatus::Ok
                );
                assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "{arch}: {got} vs {want}");
            }
            let mut classifier = ptr::null_mut();
            assert_eq!(warpnet_classifier_load(c.as_ptr(), &mut classifier), WarpnetStatus::Usage);
            warpnet_distance_model_free(handle);
        }
    }
}

#[test]
fn classifier_round_trips_through_a_checkpoint() {
    let cfg = GroupConfig {
        name: "g".into(),
        tasks: vec![TaskSource::Synthetic(ShapeTaskConfig::new("shapes", 20, 16, 9))],
    };
    let group = build_group(&cfg, None, 1).unwrap();
    let task = &group.tasks[0];
    let mut model = Classifier::new(&tiny_spec(Architecture::Resnet2d), &group.task_specs(), 2).unwrap();
    let outcome = train_single_task(&mut model, task, &one_epoch(), &mut MetricsLog::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("best.json");
    outcome.best.save(&ck).unwrap();
    let expect = predict_labels(&outcome.best.classifier().unwrap(), 0, &task.test, 8).unwrap();
    let c = cstring(&ck);
    let name = CString::new("shapes").unwrap();
    let other = CString::new("other").unwrap();
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(warpnet_classifier_load(c.as_ptr(), &mut handle), WarpnetStatus::Ok);
        assert_eq!(warpnet_classifier_num_tasks(handle), 1);
        let mut head = usize::MAX;
        assert_eq!(warpnet_classifier_task_index(handle, name.as_ptr(), &mut head), WarpnetStatus::Ok);
        assert_eq!(head, 0);
        assert_ne!(warpnet_classifier_task_index(handle, other.as_ptr(), &mut head), WarpnetStatus::Ok);
        for (s, want) in task.test.iter().zip(&expect) {
            let mut label = usize::MAX;
            assert_eq!(
                warpnet_classifier_predict(handle, 0, s.values.as_ptr(), s.values.len(), &mut label),
                WarpnetStatus::Ok
            );
            assert_eq!(label, *want);
        }
        let mut label = 0;
        assert_ne!(
            warpnet_classifier_predict(handle, 5, task.test[0].values.as_ptr(), 16, &mut label),
            WarpnetStatus::Ok
        );
        warpnet_classifier_free(handle);
    }
}

use std::ffi::{c_char, CString};
use std::path::{Path, PathBuf};
use std::process::Command;

use mhdetr::checkpoint::Checkpoint;
use mhdetr::config::Config;
use mhdetr::encoder::{FeatureSequence, Modality};
use mhdetr::optim::AdamW;
use mhdetr::{MhDetr, Tensor};
use mhdetr_ffi::*;

fn tiny_config() -> Config {
    let mut c = Config::default();
    let m = &mut c.model;
    m.video_dim = 5;
    m.text_dim = 4;
    m.hidden = 8;
    m.heads = 2;
    m.dec_layers = 2;
    m.num_queries = 4;
    m.max_video_len = 10;
    m.max_text_len = 6;
    c
}

fn write_checkpoint(dir: &Path) -> (PathBuf, MhDetr) {
    let cfg = tiny_config();
    let model = MhDetr::new(&cfg.model).unwrap();
    let opt = AdamW::new(&model.params, &cfg.train);
    let path = dir.join("tiny.ckpt");
    Checkpoint::capture(&cfg, &model, &opt, 0).save(&path).unwrap();
    (path, model)
}

fn last_error() -> String {
    let mut buf = vec![0u8; 512];
    let n = unsafe { mh_last_error_message(buf.as_mut_ptr().cast::<c_char>(), buf.len()) };
    buf.truncate(n.saturating_sub(1).min(511));
    String::from_utf8(buf).unwrap()
}

fn features(rows: usize, cols: usize, k: f32) -> Vec<f32> {
    (0..rows * cols).map(|i| ((i as f32) * k).sin()).collect()
}

#[test]
fn predict_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model) = write_checkpoint(dir.path());
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle: *mut MhModel = std::ptr::null_mut();
    assert_eq!(unsafe { mh_model_load(cpath.as_ptr(), &mut handle) }, MhStatus::Ok);
    assert_eq!(unsafe { mh_model_num_params(handle) }, model.num_params() as u64);
    assert_eq!(unsafe { mh_model_num_queries(handle) }, 4);
    let (mut dv, mut dt) = (0usize, 0usize);
    assert_eq!(unsafe { mh_model_feature_dims(handle, &mut dv, &mut dt) }, MhStatus::Ok);
    assert_eq!((dv, dt), (5, 4));

    let (lv, lt) = (7, 3);
    let v = features(lv, dv, 0.37);
    let t = features(lt, dt, 0.91);
    let mut spans = vec![0.0; 8];
    let mut fg = vec![0.0; 4];
    let mut sal = vec![0.0; lv];
    let st = unsafe { mh_model_predict(handle, v.as_ptr(), lv, t.as_ptr(), lt, spans.as_mut_ptr(), fg.as_mut_ptr(), sal.as_mut_ptr()) };
    assert_eq!(st, MhStatus::Ok, "{}", last_error());

    let to_seq = |x: &[f32], r, c, m| FeatureSequence::dense(m, Tensor::new(vec![r, c], x.iter().map(|&a| a as f64).collect()).unwrap()).unwrap();
    let p = model.predict(&to_seq(&v, lv, dv, Modality::Video), &to_seq(&t, lt, dt, Modality::Text)).unwrap();
    for (i, s) in p.spans.iter().enumerate() {
        assert_eq!(spans[2 * i], s.start);
        assert_eq!(spans[2 * i + 1], s.end);
    }
    assert_eq!(fg, p.fg_prob);
    assert_eq!(sal, p.saliency);
    unsafe { mh_model_free(handle) };
}

#[test]
fn errors_map_to_status_codes() {
    let missing = CString::new("/definitely/not/here.ckpt").unwrap();
    let mut handle: *mut MhModel = std::ptr::null_mut();
    assert_eq!(unsafe { mh_model_load(missing.as_ptr(), &mut handle) }, MhStatus::DataError);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { mh_model_load(std::ptr::null(), &mut handle) }, MhStatus::InvalidArgument);

    let dir = tempfile::tempdir().unwrap();
    let (path, _) = write_checkpoint(dir.path());
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { mh_model_load(cpath.as_ptr(), &mut handle) }, MhStatus::Ok);
    let v = features(11, 5, 0.1);
    let t = features(2, 4, 0.2);
    let (mut spans, mut fg, mut sal) = (vec![0.0; 8], vec![0.0; 4], vec![0.0; 11]);
    // 11 clips exceed max_video_len 10
    let st = unsafe { mh_model_predict(handle, v.as_ptr(), 11, t.as_ptr(), 2, spans.as_mut_ptr(), fg.as_mut_ptr(), sal.as_mut_ptr()) };
    assert_eq!(st, MhStatus::ConfigError);
    assert!(last_error().contains("max_video_len"));
    unsafe { mh_model_free(handle) };
    unsafe { mh_model_free(std::ptr::null_mut()) };
}

#[test]
fn span_and_matching_helpers() {
    assert!((mh_span_iou(0.0, 0.5, 0.0, 0.3) - 0.6).abs() < 1e-15);
    assert!((mh_span_giou(0.0, 0.2, 0.6, 0.8) - (-0.5)).abs() < 1e-15);
    let cost = [3.0, 1.0, 2.0, 0.5, 4.0, 4.0];
    let mut a = [9usize; 2];
    assert_eq!(unsafe { mh_hungarian(cost.as_ptr(), 2, 3, a.as_mut_ptr()) }, MhStatus::Ok);
    assert_eq!(a, [1, 0]);
    assert_eq!(unsafe { mh_hungarian(cost.as_ptr(), 3, 2, a.as_mut_ptr()) }, MhStatus::DataError);
    let bad = [f64::NAN, 1.0];
    assert_eq!(unsafe { mh_hungarian(bad.as_ptr(), 1, 2, a.as_mut_ptr()) }, MhStatus::NumericError);
}

#[test]
fn header_is_current() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mhdetr.h")).unwrap();
    for sym in ["mh_model_load", "mh_model_free", "mh_model_predict", "mh_hungarian", "mh_last_error_message", "MH_STATUS_NUMERIC_ERROR = 4", "typedef struct MhModel MhModel"] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
}

/// Compiles the C smoke program against the generated header and the static
/// library; skipped when no C compiler or archive is available.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libmhdetr_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or {}", lib.display());
        return;
    }
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let out = Command::new(&cc)
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (ck, _) = write_checkpoint(dir.path());
    let run = Command::new(&bin).arg(&ck).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stdout));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("params "));
}

use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use taylornet::checkpoint::{Checkpoint, CheckpointMeta};
use taylornet::data::{BouncingDataset, DataConfig, Split};
use taylornet::model::{ModelConfig, TaylorNet};
use taylornet::Tensor;
use taylornet_ffi::*;

fn small() -> ModelConfig {
    ModelConfig {
        hidden_channels: 4,
        latent_channels: 2,
        lstm_layers: 1,
        input_len: 3,
        ..ModelConfig::tiny()
    }
}

fn write_checkpoint(dir: &Path) -> (PathBuf, Checkpoint) {
    let net = TaylorNet::new(small()).unwrap();
    let params = net.init(&mut ChaCha8Rng::seed_from_u64(11));
    let ck = Checkpoint::new(small(), CheckpointMeta::default(), params).unwrap();
    let path = dir.join("model.tnck");
    ck.save(&path).unwrap();
    (path, ck)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(tn_last_error_message()) }.to_string_lossy().into_owned()
}

fn load(path: &Path) -> *mut TnModel {
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { tn_model_load(c.as_ptr(), &mut m) }, TnStatus::Ok, "{}", last_error());
    assert!(!m.is_null());
    m
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(tn_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn load_errors_map_to_status_codes() {
    let missing = CString::new("/nonexistent/dir/model.tnck").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { tn_model_load(missing.as_ptr(), &mut m) }, TnStatus::Io);
    assert!(m.is_null());
    assert!(last_error().contains("/nonexistent/dir/model.tnck"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.tnck");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tn_model_load(junk.as_ptr(), &mut m) }, TnStatus::Format);

    assert_eq!(unsafe { tn_model_load(ptr::null(), &mut m) }, TnStatus::NullPointer);
    assert_eq!(unsafe { tn_model_load(missing.as_ptr(), ptr::null_mut()) }, TnStatus::NullPointer);
    unsafe { tn_model_free(ptr::null_mut()) };
}

#[test]
fn prediction_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, ck) = write_checkpoint(dir.path());
    let m = load(&path);

    let (mut c, mut h, mut w, mut t) = (0, 0, 0, 0);
    assert_eq!(unsafe { tn_model_shape(m, &mut c, &mut h, &mut w, &mut t) }, TnStatus::Ok);
    assert_eq!((c, h, w, t), (1, 32, 32, 3));
    assert_eq!(last_error(), "");

    let frame = c * h * w;
    let (batch, n) = (2, 4);
    let mut video = vec![0f32; batch * (t + n) * frame];
    let status = unsafe {
        tn_generate_bouncing(32, 1, 5, 0, batch, t + n, video.as_mut_ptr(), video.len())
    };
    assert_eq!(status, TnStatus::Ok, "{}", last_error());
    let inputs: Vec<f32> = (0..batch)
        .flat_map(|b| video[b * (t + n) * frame..(b * (t + n) + t) * frame].to_vec())
        .collect();

    let mut out = vec![0f32; batch * n * frame];
    let status = unsafe { tn_model_predict(m, inputs.as_ptr(), batch, t, n, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, TnStatus::Ok, "{}", last_error());

    let net = TaylorNet::new(ck.model.clone()).unwrap();
    let expect = net
        .predict(&ck.params, &Tensor::new(vec![batch, t, c, h, w], inputs.clone()).unwrap(), n)
        .unwrap();
    assert_eq!(out, expect.data());

    let status = unsafe { tn_model_predict(m, inputs.as_ptr(), batch, t, n, out.as_mut_ptr(), out.len() - 1) };
    assert_eq!(status, TnStatus::InvalidArgument);
    assert!(last_error().contains("needs"));
    unsafe { tn_model_free(m) };
}

#[test]
fn generated_sequences_match_the_dataset() {
    let (count, len) = (3, 5);
    let mut out = vec![0f32; count * len * 32 * 32];
    let status = unsafe { tn_generate_bouncing(32, 0, 9, 4, count, len, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, TnStatus::Ok);
    let ds = BouncingDataset::new(&DataConfig::tiny(), len, 9, Split::Train).unwrap();
    assert_eq!(out, ds.batch(4, count).unwrap().frames.data());
    let status = unsafe { tn_generate_bouncing(48, 0, 9, 0, count, len, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, TnStatus::InvalidArgument);
}

#[test]
fn frame_metrics_constant_offset() {
    let p = vec![0.5f32; 64 * 64];
    let t = vec![0.4f32; 64 * 64];
    let mut m = TnFrameMetrics::default();
    assert_eq!(unsafe { tn_frame_metrics(p.as_ptr(), t.as_ptr(), 1, 64, 64, &mut m) }, TnStatus::Ok);
    // f32 0.5 − 0.4 is not exactly 0.1, so compare loosely here.
    assert!((m.mse - 40.96).abs() < 1e-3);
    let bad = vec![2.0f32; 64 * 64];
    assert_eq!(
        unsafe { tn_frame_metrics(bad.as_ptr(), t.as_ptr(), 1, 64, 64, &mut m) },
        TnStatus::InvalidArgument
    );
}

fn include_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = include_dir().join("taylornet.h");
    assert!(header.exists(), "header was not generated");
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let out = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .output()
            .unwrap_or_else(|e| panic!("running {}: {}", compiler, e));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn c_program_links_and_runs() {
    // target/<profile>/deps/<this test> → target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    // `cargo test` only builds the rlib; produce the static library explicitly.
    let mut build = Command::new(env!("CARGO"));
    build.args(["build", "--quiet", "--lib", "-p", "taylornet-ffi"]);
    if profile_dir.file_name().is_some_and(|n| n == "release") {
        build.arg("--release");
    }
    let target_dir = profile_dir.parent().unwrap();
    let status = build.env("CARGO_TARGET_DIR", target_dir).status().unwrap();
    assert!(status.success(), "building the static library failed");
    let lib = profile_dir.join("libtaylornet_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = write_checkpoint(dir.path());
    let bin = dir.path().join("smoke");
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/c/smoke.c");
    let out = Command::new("cc")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(include_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).arg(&ckpt).output().unwrap();
    assert!(
        run.status.success(),
        "exit {:?}: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}

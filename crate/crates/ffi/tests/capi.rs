use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use insole_vgrf::models::{save_model, train_regressor, ModelConfig, ModelKind};
use insole_vgrf::preprocess::{read_windows, write_windows, GaitCycleWindow, WindowSet, WINDOW_LEN};
use insole_vgrf::types::{ChannelManifest, FeatureSet, FootSide};
use insole_vgrf_ffi::*;

fn last_error() -> String {
    let p = ivg_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn windows(fs: FeatureSet, n: usize) -> Vec<GaitCycleWindow> {
    let c = fs.channel_count();
    (0..n)
        .map(|k| {
            let valid = 110 + k % 7;
            let y: Vec<f64> = (0..WINDOW_LEN)
                .map(|t| if t < 70 { (t as f64 / 70.0 * std::f64::consts::PI).sin() } else { 0.0 })
                .collect();
            GaitCycleWindow {
                subject_id: format!("S{:02}", k % 2 + 1),
                speed: 1.0,
                foot: if k % 2 == 0 { FootSide::Left } else { FootSide::Right },
                cycle_index: k as u32,
                x: (0..c * WINDOW_LEN)
                    .map(|i| y[i % WINDOW_LEN] * (1.0 + (i / WINDOW_LEN) as f64 * 0.1))
                    .collect(),
                y,
                valid_length: valid,
            }
        })
        .collect()
}

#[test]
fn metrics_match_library() {
    let r = [0.0, 0.5, 1.2, 0.7, 0.1];
    let e = [0.1, 0.4, 1.0, 0.8, 0.0];
    let mut v = 0.0;
    unsafe {
        assert_eq!(ivg_rmse(r.as_ptr(), e.as_ptr(), r.len(), &mut v), IvgStatus::Ok);
        assert_eq!(v, insole_vgrf::evaluation::rmse(&r, &e).unwrap());
        assert_eq!(ivg_nrmse(r.as_ptr(), e.as_ptr(), r.len(), &mut v), IvgStatus::Ok);
        assert_eq!(v, insole_vgrf::evaluation::nrmse(&r, &e).unwrap());
        assert_eq!(ivg_pearson_r(r.as_ptr(), e.as_ptr(), r.len(), &mut v), IvgStatus::Ok);
        assert_eq!(v, insole_vgrf::evaluation::pearson_r(&r, &e).unwrap());
        assert!(ivg_last_error_message().is_null());
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(ivg_rmse(ptr::null(), ptr::null(), 3, &mut v), IvgStatus::NullPointer);
        assert!(last_error().contains("null"));
        let flat = [1.0; 4];
        assert_eq!(ivg_nrmse(flat.as_ptr(), flat.as_ptr(), 4, &mut v), IvgStatus::InvalidData);
        assert!(last_error().contains("range"));
        assert_eq!(ivg_rmse(flat.as_ptr(), flat.as_ptr(), 4, ptr::null_mut()), IvgStatus::NullPointer);
        let mut m = ptr::null_mut();
        let missing = CString::new("/nonexistent/model.ivgm").unwrap();
        assert_eq!(ivg_model_load(missing.as_ptr(), &mut m), IvgStatus::Io);
        assert!(m.is_null());
        ivg_model_free(ptr::null_mut());
        ivg_windows_free(ptr::null_mut());
        assert_eq!(ivg_model_channel_count(ptr::null()), 0);
    }
}

#[test]
fn cops_and_threshold() {
    let coords = [0.0, 0.0, 10.0, 0.0, 0.0, 20.0];
    let at = [5.0, 5.0, 5.0];
    let p = [9.0, 6.0, 1.0];
    let mut c = IvgCops::default();
    let mut t = 0.0;
    unsafe {
        assert_eq!(ivg_cops(p.as_ptr(), at.as_ptr(), coords.as_ptr(), 3, &mut c), IvgStatus::Ok);
        assert_eq!((c.x, c.y, c.pressed_count), (5.0, 0.0, 2));
        let swing = [1.0, 2.0, 3.0];
        assert_eq!(ivg_adaptive_threshold(swing.as_ptr(), 3, &mut t), IvgStatus::Ok);
        assert!((t - 5.0).abs() < 1e-12);
    }
}

#[test]
fn peaks_and_smoothing() {
    let n = 120;
    let v: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 / 72.0;
            if x < 1.0 {
                (std::f64::consts::PI * x).sin() + 0.3 * (3.0 * std::f64::consts::PI * x).sin()
            } else {
                0.0
            }
        })
        .collect();
    let mut p = IvgPeaks::default();
    let mut s = vec![0.0; n];
    unsafe {
        assert_eq!(ivg_extract_peaks(v.as_ptr(), n, &mut p), IvgStatus::Ok);
        assert!(p.wap_time < p.pop_time);
        assert!(p.stance_end > p.stance_start);
        assert_eq!(ivg_smooth(v.as_ptr(), n, s.as_mut_ptr()), IvgStatus::Ok);
    }
    assert_eq!(s, insole_vgrf::postsignal::smooth_estimate(&v).unwrap());
    let zeros = vec![0.0; n];
    unsafe {
        assert_eq!(ivg_extract_peaks(zeros.as_ptr(), n, &mut p), IvgStatus::InvalidData);
    }
}

#[test]
fn model_and_window_handles() {
    let dir = tempfile::tempdir().unwrap();
    let fs = FeatureSet::T2;
    let ws = windows(fs, 12);
    let mut cfg = ModelConfig {
        kind: ModelKind::Mlp,
        feature_set: fs,
        ..ModelConfig::default()
    };
    cfg.train.epochs = 2;
    cfg.mlp.hidden = vec![8];
    let manifest = ChannelManifest::for_feature_set(fs);
    let (model, _) = train_regressor(&ws, &manifest, &cfg).unwrap();
    let mpath = dir.path().join("m.ivgm");
    save_model(&mpath, &model).unwrap();
    let wpath = dir.path().join("w.ivgw");
    let set = WindowSet {
        manifest: manifest.clone(),
        windows: ws.clone(),
    };
    write_windows(std::fs::File::create(&wpath).unwrap(), &set).unwrap();
    // the file stores f32 samples
    let ws = read_windows(std::fs::File::open(&wpath).unwrap()).unwrap().windows;

    let cm = CString::new(mpath.to_str().unwrap()).unwrap();
    let cw = CString::new(wpath.to_str().unwrap()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(ivg_model_load(cm.as_ptr(), &mut m), IvgStatus::Ok);
        assert_eq!(ivg_model_kind(m), 1);
        let c = ivg_model_channel_count(m);
        assert_eq!(c, fs.channel_count());

        let mut needed = 0;
        assert_eq!(ivg_model_manifest(m, ptr::null_mut(), 0, &mut needed), IvgStatus::InvalidArgument);
        let mut buf = vec![0 as std::ffi::c_char; needed];
        assert_eq!(ivg_model_manifest(m, buf.as_mut_ptr(), needed, &mut needed), IvgStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), manifest.to_tagged_string());

        let mut w = ptr::null_mut();
        assert_eq!(ivg_windows_load(cw.as_ptr(), &mut w), IvgStatus::Ok);
        assert_eq!(ivg_windows_count(w), 12);
        assert_eq!(ivg_windows_channel_count(w), c);
        let mut x = vec![0.0; c * IVG_WINDOW_LEN];
        let mut y = vec![0.0; IVG_WINDOW_LEN];
        let (mut valid, mut foot) = (0usize, 0u8);
        assert_eq!(ivg_windows_get(w, 3, x.as_mut_ptr(), y.as_mut_ptr(), &mut valid, &mut foot), IvgStatus::Ok);
        assert_eq!(valid, ws[3].valid_length);
        assert_eq!(foot, 1);
        assert_eq!(y, ws[3].y);
        assert_eq!(
            ivg_windows_get(w, 99, ptr::null_mut(), ptr::null_mut(), &mut valid, &mut foot),
            IvgStatus::InvalidArgument
        );

        let mut est = vec![0.0; IVG_WINDOW_LEN];
        assert_eq!(ivg_model_predict(m, x.as_ptr(), c, valid, foot, false, est.as_mut_ptr()), IvgStatus::Ok);
        let lib = model.predict(std::slice::from_ref(&ws[3])).unwrap().remove(0);
        assert_eq!(est, lib);
        assert_eq!(ivg_model_predict(m, x.as_ptr(), c, valid, foot, true, est.as_mut_ptr()), IvgStatus::Ok);
        assert_eq!(&est[..valid], &insole_vgrf::postsignal::smooth_estimate(&lib[..valid]).unwrap()[..]);
        assert_eq!(
            ivg_model_predict(m, x.as_ptr(), c + 1, valid, foot, false, est.as_mut_ptr()),
            IvgStatus::ManifestMismatch
        );
        assert_eq!(ivg_model_predict(m, x.as_ptr(), c, valid, 7, false, est.as_mut_ptr()), IvgStatus::InvalidArgument);

        ivg_windows_free(w);
        ivg_model_free(m);

        std::fs::write(&mpath, b"garbage").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(ivg_model_load(cm.as_ptr(), &mut m), IvgStatus::CorruptFile);
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/insole_vgrf.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exported: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exported.len() >= 15);
    for f in exported {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(h.contains("typedef struct IvgModel IvgModel;"));
    assert!(h.contains("IVG_STATUS_MANIFEST_MISMATCH = 7"));
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success())
}

#[test]
fn header_compiles_as_c() {
    if !have_cc() {
        eprintln!("skipped: no C compiler");
        return;
    }
    let st = Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Wextra", "-pedantic", "-x", "c"])
        .arg(header())
        .status()
        .unwrap();
    assert!(st.success());
}

#[test]
fn c_program_links_against_static_lib() {
    if !have_cc() {
        eprintln!("skipped: no C compiler");
        return;
    }
    // target/<profile>/deps/this-test -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libinsole_vgrf_ffi.a");
    if !lib.exists() {
        eprintln!("skipped: {} not built", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "insole_vgrf.h"
int main(void) {
    double r[3] = {0.0, 1.0, 2.0}, e[3] = {0.0, 1.0, 2.5}, v = -1.0;
    if (ivg_rmse(r, e, 3, &v) != IVG_STATUS_OK) return 1;
    if (ivg_rmse(NULL, e, 3, &v) != IVG_STATUS_NULL_POINTER) return 2;
    if (ivg_last_error_message() == NULL) return 3;
    printf("%.12f\n", v);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let st = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(st.success());
    let outp = Command::new(&bin).output().unwrap();
    assert!(outp.status.success());
    let v: f64 = String::from_utf8_lossy(&outp.stdout).trim().parse().unwrap();
    assert!((v - (0.25f64 / 3.0).sqrt()).abs() < 1e-12);
}

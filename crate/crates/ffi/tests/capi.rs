//! Exercises the C ABI end to end through the exported extern "C" functions.

use std::ffi::{CStr, CString};
use std::ptr;

use adgen::checkpoint::{Checkpoint, RngState, FORMAT_VERSION};
use adgen::model::{Model, ModelConfig};
use adgen::mvtec::write_mvtec_layout;
use adgen::pyramid::{BackboneKind, ExtractorConfig};
use adgen::synthetic::{generate_synthetic_domain, TextureFamily, TextureSpec};
use adgen::training::{ConfigEcho, TrainConfig};

use adgen_ffi::*;

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        extractor: ExtractorConfig {
            backbone: BackboneKind::SmallCnn,
            levels: 2,
            channels: 8,
            bifpn_repeats: 1,
            backbone_weights: None,
        },
        input_size: 32,
        projection_dim: 8,
        mlp_hidden: vec![8, 6],
        norm_mean: [0.5; 3],
        norm_std: [0.5; 3],
    }
}

/// Save an untrained model as a checkpoint the FFI can load.
fn write_checkpoint(dir: &std::path::Path) -> std::path::PathBuf {
    let model = Model::<f32>::new(tiny_model_config(), 5).unwrap();
    let echo = ConfigEcho {
        model: model.config.clone(),
        train: TrainConfig::default(),
    };
    let ckpt = Checkpoint {
        version: FORMAT_VERSION,
        config_json: serde_json_string(&echo),
        step: 0,
        rng: RngState {
            seed: [0; 32],
            stream: 0,
            word_pos: 0,
        },
        params: model
            .params
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.value.clone()))
            .collect(),
        optimizer: None,
    };
    let path = dir.join("model.ckpt");
    ckpt.save(&path).unwrap();
    path
}

fn serde_json_string(echo: &ConfigEcho) -> String {
    serde_json::to_string(echo).unwrap()
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn version_and_null_handling() {
    let v = unsafe { CStr::from_ptr(adgen_version()) };
    assert!(!v.to_str().unwrap().is_empty());

    let status = unsafe { adgen_model_load(ptr::null(), ptr::null_mut()) };
    assert_eq!(status, AdgenStatus::NullArgument);
    assert_eq!(unsafe { adgen_model_input_size(ptr::null()) }, 0);
    assert_eq!(unsafe { adgen_bank_image_count(ptr::null()) }, 0);
    unsafe {
        adgen_model_free(ptr::null_mut());
        adgen_bank_free(ptr::null_mut());
    }
}

#[test]
fn load_score_and_error_paths() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt_path = write_checkpoint(dir.path());

    // Dataset tree for bank building and query files.
    let spec = TextureSpec {
        family: TextureFamily::Checker,
        size: 32,
        ..TextureSpec::default()
    };
    let dataset = generate_synthetic_domain("dom", &spec, 8, 2, 3).unwrap();
    write_mvtec_layout(&dataset, dir.path()).unwrap();

    let mut model: *mut AdgenModel = ptr::null_mut();
    let status = unsafe {
        adgen_model_load(c(ckpt_path.to_str().unwrap()).as_ptr(), &mut model)
    };
    assert_eq!(status, AdgenStatus::Ok);
    assert!(!model.is_null());
    assert_eq!(unsafe { adgen_model_input_size(model) }, 32);

    // Missing checkpoint surfaces an IO error with a message.
    let mut missing: *mut AdgenModel = ptr::null_mut();
    let status = unsafe {
        adgen_model_load(c(dir.path().join("nope.ckpt").to_str().unwrap()).as_ptr(), &mut missing)
    };
    assert_eq!(status, AdgenStatus::IoError);
    let msg = unsafe { CStr::from_ptr(adgen_last_error_message()) };
    assert!(!msg.to_bytes().is_empty());

    let good_dir = dir.path().join("dom").join("train").join("good");
    let mut bank: *mut AdgenBank = ptr::null_mut();
    let status = unsafe {
        adgen_bank_build(model, c(good_dir.to_str().unwrap()).as_ptr(), 1.0, 7, &mut bank)
    };
    assert_eq!(status, AdgenStatus::Ok);
    assert_eq!(unsafe { adgen_bank_image_count(bank) }, 6);

    // Bad fraction rejected.
    let mut bad_bank: *mut AdgenBank = ptr::null_mut();
    let status = unsafe {
        adgen_bank_build(model, c(good_dir.to_str().unwrap()).as_ptr(), 0.0, 7, &mut bad_bank)
    };
    assert_eq!(status, AdgenStatus::InvalidInput);

    // Score a defect image.
    let defect = dir.path().join(&dataset.abnormal[0].path);
    let mut score = -1.0f32;
    let status = unsafe {
        adgen_score_image(model, bank, c(defect.to_str().unwrap()).as_ptr(), &mut score)
    };
    assert_eq!(status, AdgenStatus::Ok);
    assert!(score > 0.0 && score < 1.0);

    // Pixel map with the right and wrong buffer sizes.
    let mut map = vec![0.0f32; 32 * 32];
    let status = unsafe {
        adgen_score_pixels(
            model,
            bank,
            c(defect.to_str().unwrap()).as_ptr(),
            map.as_mut_ptr(),
            map.len(),
        )
    };
    assert_eq!(status, AdgenStatus::Ok);
    assert!(map.iter().all(|v| *v > 0.0 && *v < 1.0));
    let max_pixel = map.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    assert_eq!(max_pixel, score);

    let status = unsafe {
        adgen_score_pixels(
            model,
            bank,
            c(defect.to_str().unwrap()).as_ptr(),
            map.as_mut_ptr(),
            7,
        )
    };
    assert_eq!(status, AdgenStatus::InvalidInput);

    unsafe {
        adgen_bank_free(bank);
        adgen_model_free(model);
    }
}

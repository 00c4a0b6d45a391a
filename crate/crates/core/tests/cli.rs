mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use common::{pipeline, s, samson, write_config, REDUCED};

use samson::cube::{read_cube, write_cube, write_frames, FrameSet, ABSORPTION_NM, BAND_NM};
use samson::manifest::read_manifest;
use samson::phantom::{default_class_specs, field_rng, generate_field, FieldParams};
use samson::preprocess::{correct_cube, CalibrationSet, DEFAULT_EPSILON};
use samson::{Band, ImageCube};

#[test]
fn reduced_pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = pipeline(a.path(), &write_config(a.path(), REDUCED));
    let rb = pipeline(b.path(), &write_config(b.path(), REDUCED));
    assert!(ra == rb, "two runs with the same config differ");
    let recs = read_manifest(&a.path().join("out/dataset/manifest.tsv")).unwrap();
    assert_eq!(recs.len(), 48);
}

#[test]
fn seed_flag_changes_the_dataset() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), REDUCED);
    for (seed, sub) in [("1", "a"), ("2", "b")] {
        let o = samson(&["--config", s(&cfg), "--seed", seed, "--out", s(&d.path().join(sub)), "synth"]);
        assert!(o.status.success());
    }
    let m = |sub: &str| fs::read(d.path().join(sub).join("dataset/manifest.tsv")).unwrap();
    assert_ne!(m("a"), m("b"));
}

fn calibration_files(dir: &Path, skip_flat: Option<u16>) -> (String, BTreeMap<u16, samson::Image2D>, BTreeMap<u16, samson::Image2D>) {
    let mut r = common::rng(50);
    let mut ini = String::from("[calibration]\n");
    let (mut dark, mut flat) = (BTreeMap::new(), BTreeMap::new());
    for nm in BAND_NM {
        let img = common::random_image(&mut r, 12, 10, 0.0, 0.05);
        let p = dir.join(format!("dark_{nm}.samscube"));
        write_frames(&FrameSet::single(Band::new(nm).unwrap(), img.clone()), &p).unwrap();
        ini.push_str(&format!("dark_{nm} = {}\n", p.display()));
        dark.insert(nm, img);
    }
    for nm in ABSORPTION_NM {
        let img = common::random_image(&mut r, 12, 10, 0.5, 1.0);
        if Some(nm) == skip_flat {
            continue;
        }
        let p = dir.join(format!("flat_{nm}.samscube"));
        write_frames(&FrameSet::single(Band::new(nm).unwrap(), img.clone()), &p).unwrap();
        ini.push_str(&format!("flat_{nm} = {}\n", p.display()));
        flat.insert(nm, img);
    }
    (ini, dark, flat)
}

fn raw_cube(seed: u64) -> ImageCube {
    let mut r = common::rng(seed);
    ImageCube::new((0..9).map(|_| common::random_image(&mut r, 12, 10, 0.0, 1.0)).collect()).unwrap()
}

#[test]
fn correct_matches_the_library() {
    let d = tempfile::tempdir().unwrap();
    let (ini, dark, flat) = calibration_files(d.path(), None);
    let cfg = write_config(d.path(), &ini);
    let input = d.path().join("raw.samscube");
    let cube = raw_cube(51);
    write_cube(&cube, &input).unwrap();
    let out = d.path().join("corrected");
    let o = samson(&["--config", s(&cfg), "--out", s(&out), "correct", s(&input)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cal = CalibrationSet::new(dark, flat, DEFAULT_EPSILON).unwrap();
    assert_eq!(read_cube(out.join("raw.samscube")).unwrap(), correct_cube(&cube, &cal).unwrap());
    assert!(out.join("correct.config.ini").is_file());
}

#[test]
fn missing_flat_is_a_config_error_without_outputs() {
    let d = tempfile::tempdir().unwrap();
    let (ini, _, _) = calibration_files(d.path(), Some(595));
    let cfg = write_config(d.path(), &ini);
    let input = d.path().join("raw.samscube");
    write_cube(&raw_cube(52), &input).unwrap();
    let out = d.path().join("corrected");
    let o = samson(&["--config", s(&cfg), "--out", s(&out), "correct", s(&input)]);
    assert_eq!(o.status.code(), Some(samson::cli::EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("595"));
    assert!(!out.exists());
}

#[test]
fn bad_arguments_keys_and_files_have_distinct_exit_codes() {
    assert_eq!(samson(&["frobnicate"]).status.code(), Some(2));
    let o = samson(&["--set", "train.nonsense=1", "synth"]);
    assert_eq!(o.status.code(), Some(samson::cli::EXIT_CONFIG));
    // an unreadable config file is an I/O failure, not a bad setting
    let o = samson(&["--config", "/definitely/not/here.ini", "synth"]);
    assert_eq!(o.status.code(), Some(samson::cli::EXIT_IO));
}

#[test]
fn unreadable_input_is_an_io_error() {
    let d = tempfile::tempdir().unwrap();
    let o = samson(&["--out", s(&d.path().join("o")), "segment", s(&d.path().join("nope.samscube"))]);
    assert_eq!(o.status.code(), Some(samson::cli::EXIT_IO));
}

#[test]
fn extract_writes_one_roi_per_organism() {
    let d = tempfile::tempdir().unwrap();
    let specs = default_class_specs();
    let (cube, truth) = generate_field(&specs, 6, &FieldParams::default(), &mut field_rng(53, 0)).unwrap();
    let input = d.path().join("field.samscube");
    write_cube(&cube, &input).unwrap();
    let out = d.path().join("o");
    let o = samson(&["--out", s(&out), "extract", s(&input)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let recs = read_manifest(&out.join("manifest.tsv")).unwrap();
    assert_eq!(recs.len(), truth.len());
    for r in &recs {
        assert_eq!(r.source_index, Some(0));
        let roi = read_cube(out.join(&r.path)).unwrap();
        assert_eq!((roi.width(), roi.height()), (64, 64));
    }

    let o = samson(&["--out", s(&out.join("seg")), "segment", s(&input)]);
    assert!(o.status.success());
    let table = fs::read_to_string(out.join("seg/blobs.tsv")).unwrap();
    assert_eq!(table.lines().count(), truth.len() + 1);
    assert!(out.join("seg/masks/field.png").is_file());
}

#[test]
fn blank_cube_yields_no_rois() {
    let d = tempfile::tempdir().unwrap();
    let input = d.path().join("blank.samscube");
    write_cube(&ImageCube::zeros(32, 32), &input).unwrap();
    let out = d.path().join("o");
    let o = samson(&["--out", s(&out), "extract", s(&input)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read_manifest(&out.join("manifest.tsv")).unwrap().is_empty());
}

#[test]
fn predict_prints_one_distribution_per_roi() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), REDUCED);
    let out = d.path().join("out");
    for cmd in ["synth", "train"] {
        assert!(samson(&["--config", s(&cfg), "--out", s(&out), cmd]).status.success());
    }
    let rois = out.join("dataset/rois");
    let o = samson(&["--config", s(&cfg), "--out", s(&out), "predict", s(&rois)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let n = fs::read_dir(&rois).unwrap().count();
    assert_eq!(stdout.lines().count(), n);
    for line in stdout.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 8);
        let class: usize = f[1].parse().unwrap();
        assert!(class < 6);
        let p: f64 = f[2..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((p - 1.0).abs() < 1e-5);
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use airwrite_core::evalkit::{EvalError, Scheme, TrainConfig};
use airwrite_core::features_tf::CwtConfig;
use airwrite_core::features_time::EnvelopeKind;
use airwrite_core::pipeline::{
    load_extracted, run_eval, run_extract, ExtractConfig, FeatureSelection, PipelineError, EXTRACT_FILE,
    FEATURES_FILE, FOLDS_FILE, LABELS_FILE,
};
use airwrite_core::resample::{InterpMethod, ResampleSpec};
use airwrite_core::trial_store::{generate_synthetic, SyntheticSpec};

fn two_subject_corpus(dir: &Path) -> PathBuf {
    let spec = SyntheticSpec {
        n_subjects: 2,
        seed: 11,
        ..Default::default()
    };
    generate_synthetic(&spec, dir).unwrap();
    dir.join("manifest.json")
}

fn config(manifest: PathBuf, feature: FeatureSelection) -> ExtractConfig {
    ExtractConfig {
        manifest,
        resample: ResampleSpec::default(),
        feature,
        scheme: Scheme::UserDependent,
        seed: 4,
    }
}

fn mav() -> FeatureSelection {
    FeatureSelection::Envelope {
        feature: EnvelopeKind::Mav.into(),
        window_ms: 125.0,
    }
}

/// Minimal reader written against the byte layout, independent of the
/// library decoder.
fn raw_tensor(path: &Path) -> (Vec<u64>, Vec<f32>) {
    let b = fs::read(path).unwrap();
    assert_eq!(&b[..4], b"MYOT");
    assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
    assert_eq!(b[6], 0);
    let ndim = b[7] as usize;
    let dims: Vec<u64> = (0..ndim)
        .map(|i| u64::from_le_bytes(b[8 + 8 * i..16 + 8 * i].try_into().unwrap()))
        .collect();
    let payload = &b[8 + 8 * ndim..];
    assert_eq!(payload.len() as u64, 4 * dims.iter().product::<u64>());
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    (dims, data)
}

#[test]
fn mav_extraction_layout() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_subject_corpus(&dir.path().join("corpus"));
    let out = dir.path().join("mav");
    run_extract(&config(manifest, mav()), &out, 0).unwrap();

    let (dims, data) = raw_tensor(&out.join(FEATURES_FILE));
    assert_eq!(dims, vec![104, 5, 63]);
    // each (trial, channel) row is z-normalized
    for row in data.chunks(63) {
        let m = row.iter().map(|&v| v as f64).sum::<f64>() / 63.0;
        let v = row.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / 63.0;
        assert!(m.abs() < 1e-5);
        assert!((v.sqrt() - 1.0).abs() < 1e-4);
    }

    let (ldims, labels) = raw_tensor(&out.join(LABELS_FILE));
    assert_eq!(ldims, vec![104]);
    let mut counts = [0usize; 26];
    for l in labels {
        counts[l as usize] += 1;
    }
    assert!(counts.iter().all(|&c| c == 4));

    let table = fs::read_to_string(out.join(FOLDS_FILE)).unwrap();
    let rows: Vec<Vec<&str>> = table
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split('\t').collect())
        .collect();
    assert_eq!(rows.len(), 104);
    for r in &rows {
        assert_eq!(r.len(), 4);
        // two repetitions: one fold each
        assert_eq!(r[2], r[3]);
    }
}

#[test]
fn stft_extraction_dims() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_subject_corpus(&dir.path().join("corpus"));
    let out = dir.path().join("stft");
    let rec = run_extract(&config(manifest, FeatureSelection::Stft { window_ms: 100.0 }), &out, 0).unwrap();
    assert_eq!(rec.feature_dims, vec![5, 101, 79]);
    assert_eq!(raw_tensor(&out.join(FEATURES_FILE)).0, vec![104, 5, 101, 79]);
}

#[test]
fn cwt_extraction_dims() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_subject_corpus(&dir.path().join("corpus"));
    let mut cfg = config(
        manifest,
        FeatureSelection::Cwt {
            config: CwtConfig {
                n_scales: 8,
                f_min_hz: 40.0,
                ..Default::default()
            },
        },
    );
    cfg.resample.target_length_s = 1.0;
    let rec = run_extract(&cfg, &dir.path().join("cwt"), 0).unwrap();
    assert_eq!(rec.feature_dims, vec![5, 8, 20]);
}

#[test]
fn independent_scheme_needs_five_subjects() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_subject_corpus(&dir.path().join("corpus"));
    let mut cfg = config(manifest, mav());
    cfg.scheme = Scheme::UserIndependent;
    let err = run_extract(&cfg, &dir.path().join("x"), 1).unwrap_err();
    assert!(matches!(err, PipelineError::Eval(EvalError::TooFewSubjects { got: 2, needed: 5 })));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn eval_without_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_eval(&[dir.path().to_path_buf()], &TrainConfig::default(), true, 1).unwrap_err();
    assert!(matches!(err, PipelineError::MissingTensors(_)));
}

#[test]
fn reports_are_reproducible_from_embedded_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_subject_corpus(&dir.path().join("corpus"));
    let first = dir.path().join("first");
    run_extract(&config(manifest, mav()), &first, 3).unwrap();
    let train = TrainConfig {
        seed: 9,
        ..Default::default()
    };
    let report = run_eval(std::slice::from_ref(&first), &train, true, 2).unwrap();
    let run = &report.runs[0];
    assert_eq!(run.fold_accuracies.len(), 2);

    let second = dir.path().join("second");
    run_extract(&run.config.extract, &second, 1).unwrap();
    let again = run_eval(std::slice::from_ref(&second), &run.config.train, true, 1).unwrap();
    assert_eq!(
        serde_json::to_string(&report).unwrap(),
        serde_json::to_string(&again).unwrap()
    );
    for f in [FEATURES_FILE, LABELS_FILE, FOLDS_FILE, EXTRACT_FILE] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap());
    }
    assert_eq!(load_extracted(&second).unwrap().labels.len(), 104);
}

#[test]
fn two_runs_get_a_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_subject_corpus(&dir.path().join("corpus"));
    let a = dir.path().join("mav");
    let b = dir.path().join("rms");
    run_extract(&config(manifest.clone(), mav()), &a, 0).unwrap();
    let rms = FeatureSelection::Envelope {
        feature: EnvelopeKind::Rms.into(),
        window_ms: 125.0,
    };
    run_extract(&config(manifest, rms), &b, 0).unwrap();
    let report = run_eval(&[a, b], &TrainConfig::default(), true, 0).unwrap();
    let names: Vec<&str> = report.runs.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["mav", "rms"]);
    let cmp = report.comparison.as_ref().unwrap();
    assert_eq!(cmp.t_tests.len(), 2);
    assert!(cmp.anova.is_some() || cmp.anova_note.is_some());
    for run in &report.runs {
        assert_eq!(run.confusion.total(), 104);
    }
}

#[test]
fn interpolation_method_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_subject_corpus(&dir.path().join("corpus"));
    let mut cfg = config(manifest, mav());
    cfg.resample.method = InterpMethod::Nearest;
    let out = dir.path().join("x");
    run_extract(&cfg, &out, 0).unwrap();
    let text = fs::read_to_string(out.join(EXTRACT_FILE)).unwrap();
    assert!(text.contains("\"nearest\""));
    assert_eq!(load_extracted(&out).unwrap().record.config, cfg);
}

//! End-to-end orchestration: feature extraction into tensor files, fold-wise
//! evaluation of the baseline classifier, and cross-run comparison.
//!
//! An extraction directory holds:
//!
//! * `features.myot`: `trials × channels × …` z-normalized features
//! * `labels.myot`: `trials` letter indices
//! * `folds.tsv`: fold assignment table
//! * `extract.json`: parameters and trial order

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalkit::{
    self, confusion_matrix, make_folds, predict, top_confusable_pairs, train_baseline, ConfusablePair,
    ConfusionMatrix, EvalError, Scheme, SplitAssignment, StatTestResult, TrainConfig,
};
use crate::features_tf::{trial_scalogram, trial_spectrogram, CwtConfig, StftConfig, TfError};
use crate::features_time::{compute_envelope, znorm, EnvelopeFeature, FeatureError, WindowPlan};
use crate::resample::{fit_length, ResampleError, ResampleSpec};
use crate::tensor::{read_tensor, write_tensor, Tensor, TensorError};
use crate::trial_store::{load_manifest, load_trial, StoreError, TrialKey, N_CLASSES};

pub const FEATURES_FILE: &str = "features.myot";
pub const LABELS_FILE: &str = "labels.myot";
pub const FOLDS_FILE: &str = "folds.tsv";
pub const EXTRACT_FILE: &str = "extract.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Tf(#[from] TfError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{} trial(s) failed: {}", .0.len(), .0.join("; "))]
    PartialFailure(Vec<String>),
    #[error("missing extraction output {0}")]
    MissingTensors(PathBuf),
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl PipelineError {
    /// 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Eval(EvalError::InvalidConfig(_)) => 1,
            PipelineError::Resample(ResampleError::InvalidSpec(_)) => 1,
            PipelineError::Feature(FeatureError::InvalidPlan(_)) => 1,
            PipelineError::Tf(TfError::InvalidStft(_) | TfError::InvalidCwt(_)) => 1,
            PipelineError::Eval(
                EvalError::NonFiniteLoss { .. } | EvalError::DegenerateGroups | EvalError::ZeroVariance,
            ) => 3,
            _ => 2,
        }
    }
}

/// Which representation feeds the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FeatureSelection {
    Envelope { feature: EnvelopeFeature, window_ms: f64 },
    Stft { window_ms: f64 },
    Cwt { config: CwtConfig },
}

impl FeatureSelection {
    pub fn label(&self) -> String {
        match self {
            FeatureSelection::Envelope { feature, .. } => feature.kind.name().to_string(),
            FeatureSelection::Stft { .. } => "stft".into(),
            FeatureSelection::Cwt { .. } => "cwt".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub manifest: PathBuf,
    pub resample: ResampleSpec,
    pub feature: FeatureSelection,
    pub scheme: Scheme,
    pub seed: u64,
}

/// Everything one evaluation run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub extract: ExtractConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractRecord {
    pub config: ExtractConfig,
    pub sample_rate_hz: f64,
    pub n_channels: usize,
    pub feature_dims: Vec<usize>,
    pub trials: Vec<TrialKey>,
}

fn trial_features(
    manifest: &crate::trial_store::DatasetManifest,
    record: &crate::trial_store::TrialRecord,
    config: &ExtractConfig,
) -> Result<Array2<f64>, PipelineError> {
    let trial = load_trial(manifest, record)?;
    let fixed = fit_length(&trial, &config.resample)?;
    let fs = record.sample_rate_hz;
    let per_channel = match &config.feature {
        FeatureSelection::Envelope { feature, window_ms } => {
            let plan = WindowPlan::from_ms(*window_ms, fs)?;
            compute_envelope(&fixed, &plan, *feature)?.values
        }
        FeatureSelection::Stft { window_ms } => {
            let cfg = StftConfig::from_ms(*window_ms, fs)?;
            let img = trial_spectrogram(&fixed, &cfg)?.values;
            let (c, b, f) = img.dim();
            img.into_shape_with_order((c, b * f))
                .map_err(|e| PipelineError::Inconsistent(e.to_string()))?
        }
        FeatureSelection::Cwt { config: cwt } => {
            let img = trial_scalogram(&fixed, cwt)?.values;
            let (c, s, f) = img.dim();
            img.into_shape_with_order((c, s * f))
                .map_err(|e| PipelineError::Inconsistent(e.to_string()))?
        }
    };
    Ok(znorm(per_channel.view()))
}

/// Per-trial feature shape (without the leading trial axis).
fn feature_dims(config: &ExtractConfig, n_channels: usize, fs: f64) -> Result<Vec<usize>, PipelineError> {
    let n = config.resample.target_samples(fs);
    let short = |w: usize| PipelineError::Feature(FeatureError::SignalTooShort { len: n, window: w });
    Ok(match &config.feature {
        FeatureSelection::Envelope { window_ms, .. } => {
            let plan = WindowPlan::from_ms(*window_ms, fs)?;
            vec![n_channels, plan.n_frames(n).ok_or_else(|| short(plan.window_len_samples))?]
        }
        FeatureSelection::Stft { window_ms } => {
            let cfg = StftConfig::from_ms(*window_ms, fs)?;
            vec![
                n_channels,
                cfg.n_bins(),
                cfg.n_frames(n).ok_or_else(|| short(cfg.window_len_samples))?,
            ]
        }
        FeatureSelection::Cwt { config: cwt } => {
            cwt.validate(fs)?;
            if n < 2 {
                return Err(short(2));
            }
            vec![n_channels, cwt.n_scales, cwt.n_frames(n)]
        }
    })
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))
}

/// Resample, featurize and z-normalize every trial, then write the tensors,
/// fold table and provenance record into `out_dir`. `threads = 0` lets the
/// pool pick. Output is ordered by manifest position.
pub fn run_extract(config: &ExtractConfig, out_dir: &Path, threads: usize) -> Result<ExtractRecord, PipelineError> {
    let manifest = load_manifest(&config.manifest)?;
    if manifest.trials.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let first = &manifest.trials[0];
    let (fs, n_channels) = (first.sample_rate_hz, first.n_channels);
    if let Some(t) = manifest.trials.iter().find(|t| t.sample_rate_hz != fs || t.n_channels != n_channels) {
        return Err(PipelineError::Inconsistent(format!(
            "trial ({}, {}, {}) differs in rate or channel count",
            t.subject_id, t.letter, t.repetition
        )));
    }
    let dims = feature_dims(config, n_channels, fs)?;
    let split = make_folds(&manifest, config.scheme, config.seed)?;

    let pool = build_pool(threads)?;
    let results: Vec<Result<Array2<f64>, PipelineError>> = pool.install(|| {
        manifest
            .trials
            .par_iter()
            .map(|rec| trial_features(&manifest, rec, config))
            .collect()
    });

    let per_trial: usize = dims.iter().product();
    let mut failures = Vec::new();
    let mut data = Vec::with_capacity(per_trial * manifest.trials.len());
    for (rec, res) in manifest.trials.iter().zip(results) {
        match res {
            Ok(m) if m.len() == per_trial => data.extend(m.iter().map(|&v| v as f32)),
            Ok(m) => failures.push(format!(
                "({}, {}, {}): {} values, expected {per_trial}",
                rec.subject_id,
                rec.letter,
                rec.repetition,
                m.len()
            )),
            Err(e) => failures.push(format!("({}, {}, {}): {e}", rec.subject_id, rec.letter, rec.repetition)),
        }
    }
    if !failures.is_empty() {
        return Err(PipelineError::PartialFailure(failures));
    }

    fs::create_dir_all(out_dir)?;
    let mut full_dims = vec![manifest.trials.len()];
    full_dims.extend_from_slice(&dims);
    write_tensor(&out_dir.join(FEATURES_FILE), &Tensor::new(full_dims, data)?)?;
    let labels: Vec<f32> = manifest.trials.iter().map(|t| t.letter.index() as f32).collect();
    write_tensor(&out_dir.join(LABELS_FILE), &Tensor::new(vec![labels.len()], labels)?)?;
    fs::write(out_dir.join(FOLDS_FILE), split.to_table())?;

    let record = ExtractRecord {
        config: config.clone(),
        sample_rate_hz: fs,
        n_channels,
        feature_dims: dims,
        trials: manifest.trials.iter().map(|t| t.key()).collect(),
    };
    let mut json = serde_json::to_string_pretty(&record)?;
    json.push('\n');
    fs::write(out_dir.join(EXTRACT_FILE), json)?;
    Ok(record)
}

/// Tensors and metadata of one extraction directory, features flattened to
/// `trials × d`.
#[derive(Debug, Clone)]
pub struct ExtractedData {
    pub record: ExtractRecord,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub split: SplitAssignment,
}

pub fn load_extracted(dir: &Path) -> Result<ExtractedData, PipelineError> {
    let need = |name: &str| {
        let p = dir.join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(PipelineError::MissingTensors(p))
        }
    };
    let record: ExtractRecord = serde_json::from_str(&fs::read_to_string(need(EXTRACT_FILE)?)?)?;
    let features = read_tensor(&need(FEATURES_FILE)?)?;
    let labels = read_tensor(&need(LABELS_FILE)?)?;
    let split = SplitAssignment::from_table(&fs::read_to_string(need(FOLDS_FILE)?)?)?;

    let n = record.trials.len();
    if features.dims()[0] != n || labels.dims() != [n] {
        return Err(PipelineError::Inconsistent("tensor lengths disagree with the trial list".into()));
    }
    let d: usize = features.dims()[1..].iter().product();
    let features = Array2::from_shape_vec((n, d), features.into_data().into_iter().map(f64::from).collect())
        .map_err(|e| PipelineError::Inconsistent(e.to_string()))?;
    let labels = labels
        .data()
        .iter()
        .map(|&v| {
            let i = v as usize;
            if v >= 0.0 && v.fract() == 0.0 && i < N_CLASSES {
                Ok(i)
            } else {
                Err(PipelineError::Inconsistent(format!("bad label value {v}")))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExtractedData {
        record,
        features,
        labels,
        split,
    })
}

/// Anything that can be trained on one fold and predict the held-out part.
pub trait FoldClassifier: Sync {
    fn fit_predict(
        &self,
        train_x: ArrayView2<f64>,
        train_y: &[usize],
        test_x: ArrayView2<f64>,
    ) -> Result<Vec<usize>, PipelineError>;
}

pub struct BaselineClassifier {
    pub config: TrainConfig,
    pub feature_spec: String,
}

impl FoldClassifier for BaselineClassifier {
    fn fit_predict(
        &self,
        train_x: ArrayView2<f64>,
        train_y: &[usize],
        test_x: ArrayView2<f64>,
    ) -> Result<Vec<usize>, PipelineError> {
        let (model, _) = train_baseline(train_x, train_y, &self.config, &self.feature_spec)?;
        Ok(predict(&model, test_x)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub config: RunConfig,
    pub scheme: Scheme,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Population standard deviation across folds.
    pub std_accuracy: f64,
    pub summary: String,
    pub confusion: ConfusionMatrix,
    pub top_pairs: Vec<ConfusablePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub first: String,
    pub second: String,
    /// `None` when the test is undefined (identical fold accuracies).
    pub result: Option<StatTestResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub anova: Option<StatTestResult>,
    pub anova_note: Option<String>,
    pub paired: bool,
    pub t_tests: Vec<PairwiseTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub runs: Vec<RunReport>,
    pub comparison: Option<Comparison>,
}

pub const TOP_PAIRS: usize = 5;

/// True and predicted labels of one fold's test portion.
type FoldOutcome = (Vec<usize>, Vec<usize>);

/// Train and test on every fold of one extraction.
pub fn evaluate_extracted(
    data: &ExtractedData,
    classifier: &dyn FoldClassifier,
    train: &TrainConfig,
    threads: usize,
) -> Result<RunReport, PipelineError> {
    let split = &data.split;
    let pool = build_pool(threads)?;
    let folds: Vec<Result<FoldOutcome, PipelineError>> = pool.install(|| {
        (0..split.n_folds)
            .into_par_iter()
            .map(|fold| {
                let (train_idx, test_idx) = split.partition(&data.record.trials, fold)?;
                if test_idx.is_empty() {
                    return Err(PipelineError::Eval(EvalError::MissingFold(fold)));
                }
                let tx = data.features.select(Axis(0), &train_idx);
                let ty: Vec<usize> = train_idx.iter().map(|&i| data.labels[i]).collect();
                let sx = data.features.select(Axis(0), &test_idx);
                let sy: Vec<usize> = test_idx.iter().map(|&i| data.labels[i]).collect();
                let pred = classifier.fit_predict(tx.view(), &ty, sx.view())?;
                Ok((sy, pred))
            })
            .collect()
    });
    let mut accs = Vec::new();
    let mut confusion = ConfusionMatrix::default();
    for fold in folds {
        let (truth, pred) = fold?;
        let cm = confusion_matrix(&truth, &pred)?;
        accs.push(cm.accuracy());
        confusion.add(&cm);
    }
    let (mean, std) = evalkit::metrics::mean_and_std(&accs);
    let top_pairs = match top_confusable_pairs(&confusion, TOP_PAIRS) {
        Ok(p) => p,
        Err(EvalError::NoErrors) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    Ok(RunReport {
        name: data.record.config.feature.label(),
        config: RunConfig {
            extract: data.record.config.clone(),
            train: *train,
        },
        scheme: split.scheme,
        fold_accuracies: accs,
        mean_accuracy: mean,
        std_accuracy: std,
        summary: evalkit::metrics::format_mean_std(mean, std),
        confusion,
        top_pairs,
    })
}

/// ANOVA across runs and one-tailed t-tests for every ordered pair.
pub fn compare_runs(runs: &[RunReport], paired: bool) -> Comparison {
    let groups: Vec<Vec<f64>> = runs.iter().map(|r| r.fold_accuracies.clone()).collect();
    let (anova, anova_note) = match evalkit::one_way_anova(&groups) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let mut t_tests = Vec::new();
    for a in runs {
        for b in runs {
            if std::ptr::eq(a, b) {
                continue;
            }
            let res = evalkit::t_test_one_tailed(&a.fold_accuracies, &b.fold_accuracies, paired);
            t_tests.push(PairwiseTest {
                first: a.name.clone(),
                second: b.name.clone(),
                note: res.as_ref().err().map(ToString::to_string),
                result: res.ok(),
            });
        }
    }
    Comparison {
        anova,
        anova_note,
        paired,
        t_tests,
    }
}

/// Evaluate every extraction directory with the baseline classifier; with
/// two or more runs, add the statistical comparison.
pub fn run_eval(dirs: &[PathBuf], train: &TrainConfig, paired: bool, threads: usize) -> Result<EvalReport, PipelineError> {
    let mut runs = Vec::new();
    for dir in dirs {
        let data = load_extracted(dir)?;
        let classifier = BaselineClassifier {
            config: *train,
            feature_spec: serde_json::to_string(&data.record.config)?,
        };
        runs.push(evaluate_extracted(&data, &classifier, train, threads)?);
    }
    Ok(assemble_report(runs, paired))
}

pub fn assemble_report(runs: Vec<RunReport>, paired: bool) -> EvalReport {
    let comparison = (runs.len() >= 2).then(|| compare_runs(&runs, paired));
    EvalReport { runs, comparison }
}

impl EvalReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for run in &self.runs {
            let _ = writeln!(out, "== {} ({}) ==", run.name, run.scheme.name());
            let _ = writeln!(out, "parameters: {}", serde_json::to_string(&run.config).unwrap_or_default());
            for (i, a) in run.fold_accuracies.iter().enumerate() {
                let _ = writeln!(out, "fold {i}: {a:.4}");
            }
            let _ = writeln!(out, "accuracy (mean ± population std): {}", run.summary);
            let _ = writeln!(out, "top confusable pairs:");
            if run.top_pairs.is_empty() {
                let _ = writeln!(out, "  (no misclassifications)");
            }
            for p in &run.top_pairs {
                let _ = writeln!(out, "  {},{}\t{}\t{:.2}%", p.first, p.second, p.count, p.percent);
            }
            let _ = writeln!(out, "confusion matrix (rows true, columns predicted):");
            out.push_str(&run.confusion.to_string());
            out.push('\n');
        }
        if let Some(c) = &self.comparison {
            let _ = writeln!(out, "== comparison ==");
            match (&c.anova, &c.anova_note) {
                (Some(r), _) => {
                    let _ = writeln!(out, "one-way ANOVA: F = {:.4}, p = {:.4}", r.statistic, r.p_value);
                }
                (None, Some(note)) => {
                    let _ = writeln!(out, "one-way ANOVA: {note}");
                }
                _ => {}
            }
            let _ = writeln!(
                out,
                "one-tailed t-tests ({}), alternative: row mean > column mean",
                if c.paired { "paired" } else { "Welch" }
            );
            for t in &c.t_tests {
                match (&t.result, &t.note) {
                    (Some(r), _) => {
                        let _ = writeln!(out, "  {} > {}: t = {:.4}, p = {:.4}", t.first, t.second, r.statistic, r.p_value);
                    }
                    (None, Some(n)) => {
                        let _ = writeln!(out, "  {} > {}: {n}", t.first, t.second);
                    }
                    _ => {}
                }
            }
        }
        out
    }
}

/// Train the baseline on the training portion of `fold`.
pub fn train_fold(
    data: &ExtractedData,
    fold: usize,
    train: &TrainConfig,
) -> Result<(evalkit::BaselineModel, evalkit::TrainHistory), PipelineError> {
    let (train_idx, _) = data.split.partition(&data.record.trials, fold)?;
    let x = data.features.select(Axis(0), &train_idx);
    let y: Vec<usize> = train_idx.iter().map(|&i| data.labels[i]).collect();
    let spec = serde_json::to_string(&data.record.config)?;
    Ok(train_baseline(x.view(), &y, train, &spec)?)
}

/// Write `train_x/train_y/test_x/test_y` tensors of one fold, keeping the
/// per-trial feature shape.
pub fn export_fold(dir: &Path, fold: usize, out_dir: &Path) -> Result<(), PipelineError> {
    let data = load_extracted(dir)?;
    let (train_idx, test_idx) = data.split.partition(&data.record.trials, fold)?;
    fs::create_dir_all(out_dir)?;
    for (name, idx) in [("train", &train_idx), ("test", &test_idx)] {
        if idx.is_empty() {
            return Err(PipelineError::Inconsistent(format!("fold {fold} has an empty {name} portion")));
        }
        let mut dims = vec![idx.len()];
        dims.extend_from_slice(&data.record.feature_dims);
        let x: Vec<f32> = data
            .features
            .select(Axis(0), idx)
            .iter()
            .map(|&v| v as f32)
            .collect();
        write_tensor(&out_dir.join(format!("{name}_x.myot")), &Tensor::new(dims, x)?)?;
        let y: Vec<f32> = idx.iter().map(|&i| data.labels[i] as f32).collect();
        write_tensor(&out_dir.join(format!("{name}_y.myot")), &Tensor::new(vec![y.len()], y)?)?;
    }
    Ok(())
}

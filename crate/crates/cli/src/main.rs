use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use airwrite_core::evalkit::{make_folds, AdamConfig, Scheme, TrainConfig};
use airwrite_core::features_tf::CwtConfig;
use airwrite_core::features_time::{EnvelopeFeature, EnvelopeKind};
use airwrite_core::pipeline::{
    self, assemble_report, export_fold, load_extracted, run_eval, run_extract, EvalReport, ExtractConfig,
    FeatureSelection, PipelineError, RunReport,
};
use airwrite_core::resample::{InterpMethod, ResampleSpec};
use airwrite_core::trial_store::{dataset_stats, generate_synthetic, load_manifest, SyntheticSpec};

#[derive(Parser, Debug)]
#[command(name = "airwrite", version, about = "sEMG letter recognition pipeline")]
struct Cli {
    /// Seed for fold assignment, synthetic data and training.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with a manifest.
    Synth(SynthArgs),
    /// Trial duration statistics of a dataset.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Resample, featurize and normalize every trial into tensor files.
    Extract(ExtractArgs),
    /// Write the fold assignment table.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = SchemeArg::UserDependent)]
        scheme: SchemeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the baseline on one fold's training portion and save the model.
    Train {
        #[arg(long)]
        extract: PathBuf,
        #[arg(long)]
        fold: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Cross-validate the baseline on one or more extraction directories.
    Eval {
        #[arg(long = "extract", required = true, num_args = 1..)]
        extracts: Vec<PathBuf>,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use Welch t-tests instead of paired ones.
        #[arg(long)]
        welch: bool,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Combine saved reports and render them with the cross-run comparison.
    Report {
        #[arg(required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        welch: bool,
    },
    /// Write per-fold train/test tensors.
    Export {
        #[arg(long)]
        extract: PathBuf,
        /// Single fold; all folds when omitted.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    subjects: usize,
    #[arg(long, default_value_t = 2)]
    reps: u32,
    #[arg(long, default_value_t = 5)]
    channels: usize,
    #[arg(long, default_value_t = 2000.0)]
    fs: f64,
    #[arg(long, default_value_t = 1.5)]
    min_s: f64,
    #[arg(long, default_value_t = 3.0)]
    max_s: f64,
    #[arg(long, default_value_t = 1.0)]
    separability: f64,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum SchemeArg {
    UserDependent,
    UserIndependent,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::UserDependent => Scheme::UserDependent,
            SchemeArg::UserIndependent => Scheme::UserIndependent,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum InterpArg {
    Nearest,
    Linear,
    Quadratic,
    Cubic,
}

impl From<InterpArg> for InterpMethod {
    fn from(m: InterpArg) -> Self {
        match m {
            InterpArg::Nearest => InterpMethod::Nearest,
            InterpArg::Linear => InterpMethod::Linear,
            InterpArg::Quadratic => InterpMethod::Quadratic,
            InterpArg::Cubic => InterpMethod::Cubic,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FeatureArg {
    Mav,
    Energy,
    Var,
    Rms,
    Tm3,
    Tm4,
    Tm5,
    Logd,
}

impl From<FeatureArg> for EnvelopeKind {
    fn from(f: FeatureArg) -> Self {
        match f {
            FeatureArg::Mav => EnvelopeKind::Mav,
            FeatureArg::Energy => EnvelopeKind::Energy,
            FeatureArg::Var => EnvelopeKind::Variance,
            FeatureArg::Rms => EnvelopeKind::Rms,
            FeatureArg::Tm3 => EnvelopeKind::Tm3,
            FeatureArg::Tm4 => EnvelopeKind::Tm4,
            FeatureArg::Tm5 => EnvelopeKind::Tm5,
            FeatureArg::Logd => EnvelopeKind::LogD,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, ValueEnum)]
enum TfArg {
    Stft,
    Cwt,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = SchemeArg::UserDependent)]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 4.0)]
    length_s: f64,
    #[arg(long, value_enum, default_value_t = InterpArg::Cubic)]
    interp: InterpArg,
    #[arg(long, value_enum, conflicts_with = "tf")]
    feature: Option<FeatureArg>,
    #[arg(long, conflicts_with = "tf")]
    window_ms: Option<f64>,
    /// Take variance deviations from the window mean instead of zero.
    #[arg(long, conflicts_with = "tf")]
    no_zero_mean_var: bool,
    #[arg(long, value_enum)]
    tf: Option<TfArg>,
    #[arg(long)]
    stft_window_ms: Option<f64>,
    #[arg(long)]
    cwt_scales: Option<usize>,
    #[arg(long)]
    cwt_omega0: Option<f64>,
    #[arg(long)]
    cwt_decimate: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 500)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            adam: AdamConfig {
                learning_rate: self.lr,
                ..AdamConfig::default()
            },
            early_stop_patience: self.patience,
            max_epochs: self.max_epochs,
            seed,
            ..TrainConfig::default()
        }
    }
}

const DEFAULT_ENVELOPE_WINDOW_MS: f64 = 125.0;
const DEFAULT_STFT_WINDOW_MS: f64 = 100.0;

fn usage(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

fn feature_selection(a: &ExtractArgs) -> Result<FeatureSelection, PipelineError> {
    let stft_flag = a.stft_window_ms.is_some();
    let cwt_flag = a.cwt_scales.is_some() || a.cwt_omega0.is_some() || a.cwt_decimate.is_some();
    match a.tf {
        None => {
            if stft_flag || cwt_flag {
                return Err(usage("time-frequency flags need --tf"));
            }
            let kind: EnvelopeKind = a.feature.unwrap_or(FeatureArg::Mav).into();
            if a.no_zero_mean_var && kind != EnvelopeKind::Variance {
                return Err(usage("--no-zero-mean-var only applies to --feature var"));
            }
            Ok(FeatureSelection::Envelope {
                feature: EnvelopeFeature {
                    kind,
                    variance_zero_mean: !a.no_zero_mean_var,
                },
                window_ms: a.window_ms.unwrap_or(DEFAULT_ENVELOPE_WINDOW_MS),
            })
        }
        Some(TfArg::Stft) => {
            if cwt_flag {
                return Err(usage("CWT flags conflict with --tf stft"));
            }
            Ok(FeatureSelection::Stft {
                window_ms: a.stft_window_ms.unwrap_or(DEFAULT_STFT_WINDOW_MS),
            })
        }
        Some(TfArg::Cwt) => {
            if stft_flag {
                return Err(usage("--stft-window-ms conflicts with --tf cwt"));
            }
            let d = CwtConfig::default();
            Ok(FeatureSelection::Cwt {
                config: CwtConfig {
                    n_scales: a.cwt_scales.unwrap_or(d.n_scales),
                    omega0: a.cwt_omega0.unwrap_or(d.omega0),
                    time_decimation: a.cwt_decimate.unwrap_or(d.time_decimation),
                    ..d
                },
            })
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth(a) => {
            let spec = SyntheticSpec {
                n_subjects: a.subjects,
                n_repetitions: a.reps,
                n_channels: a.channels,
                sample_rate_hz: a.fs,
                duration_range_s: (a.min_s, a.max_s),
                class_separability: a.separability,
                seed,
            };
            spec.validate().map_err(|e| usage(e.to_string()))?;
            let m = generate_synthetic(&spec, &a.out)?;
            println!("wrote {} trials to {}", m.trials.len(), a.out.display());
        }
        Command::Stats { manifest } => {
            let m = load_manifest(&manifest)?;
            let stats = dataset_stats(&m)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Extract(a) => {
            let config = ExtractConfig {
                manifest: a.manifest.clone(),
                resample: ResampleSpec {
                    target_length_s: a.length_s,
                    method: a.interp.into(),
                },
                feature: feature_selection(&a)?,
                scheme: a.scheme.into(),
                seed,
            };
            let rec = run_extract(&config, &a.out, cli.threads)?;
            let mut dims = vec![rec.trials.len()];
            dims.extend(&rec.feature_dims);
            println!("features {:?} written to {}", dims, a.out.display());
        }
        Command::Split { manifest, scheme, out } => {
            let m = load_manifest(&manifest)?;
            let table = make_folds(&m, scheme.into(), seed)?.to_table();
            match out {
                Some(p) => fs::write(p, table)?,
                None => print!("{table}"),
            }
        }
        Command::Train {
            extract,
            fold,
            out,
            train,
        } => {
            let config = train.config(seed);
            config.validate()?;
            let data = load_extracted(&extract)?;
            let (model, history) = pipeline::train_fold(&data, fold, &config)?;
            write_json(&out, &model)?;
            println!(
                "best epoch {} of {}, validation accuracy {:.4}",
                history.best_epoch,
                history.train_loss.len(),
                history.best_val_accuracy
            );
        }
        Command::Eval {
            extracts,
            out,
            welch,
            train,
        } => {
            let config = train.config(seed);
            config.validate()?;
            let report = run_eval(&extracts, &config, !welch, cli.threads)?;
            if let Some(p) = out {
                write_json(&p, &report)?;
            }
            print!("{}", report.render_text());
        }
        Command::Report { reports, out, welch } => {
            let mut runs: Vec<RunReport> = Vec::new();
            for p in &reports {
                let r: EvalReport = serde_json::from_str(&fs::read_to_string(p)?)?;
                runs.extend(r.runs);
            }
            let report = assemble_report(runs, !welch);
            if let Some(p) = out {
                write_json(&p, &report)?;
            }
            print!("{}", report.render_text());
        }
        Command::Export { extract, fold, out } => {
            let folds = match fold {
                Some(k) => vec![k],
                None => (0..load_extracted(&extract)?.split.n_folds).collect(),
            };
            for k in folds {
                let dir = out.join(format!("fold_{k}"));
                export_fold(&extract, k, &dir)?;
                println!("fold {k} -> {}", dir.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

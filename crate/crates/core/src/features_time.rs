//! Sliding-window envelopes of sEMG amplitude and per-channel z-normalization.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resample::FixedTrial;

/// Zero-amplitude clamp for the log detector.
pub const LOG_DETECTOR_EPS: f64 = 1e-12;
/// Rows with a standard deviation below this are zeroed by [`znorm`].
pub const ZNORM_MIN_STD: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("signal of {len} samples is shorter than the {window}-sample window")]
    SignalTooShort { len: usize, window: usize },
    #[error("invalid window plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window_len_samples: usize,
    pub overlap_fraction: f64,
}

impl Default for WindowPlan {
    /// 250 samples (125 ms at 2 kHz), half overlap.
    fn default() -> Self {
        WindowPlan {
            window_len_samples: 250,
            overlap_fraction: 0.5,
        }
    }
}

impl WindowPlan {
    pub fn new(window_len_samples: usize, overlap_fraction: f64) -> Result<Self, FeatureError> {
        let plan = WindowPlan {
            window_len_samples,
            overlap_fraction,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Window of `window_ms` milliseconds at `sample_rate_hz`, half overlap.
    pub fn from_ms(window_ms: f64, sample_rate_hz: f64) -> Result<Self, FeatureError> {
        Self::new((window_ms * sample_rate_hz / 1000.0).round() as usize, 0.5)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.window_len_samples < 2 {
            return Err(FeatureError::InvalidPlan("window must hold at least two samples".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(FeatureError::InvalidPlan("overlap must lie in [0, 1)".into()));
        }
        if self.hop() == 0 {
            return Err(FeatureError::InvalidPlan("hop rounds to zero".into()));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        (self.window_len_samples as f64 * (1.0 - self.overlap_fraction)).round() as usize
    }

    /// `floor((n - W) / hop) + 1`, or `None` when `n < W`.
    pub fn n_frames(&self, n: usize) -> Option<usize> {
        (n >= self.window_len_samples).then(|| (n - self.window_len_samples) / self.hop() + 1)
    }
}

/// Split a channel into windows; trailing samples that do not fill a window
/// are dropped.
pub fn segment<'a>(channel: &'a [f64], plan: &WindowPlan) -> Result<impl Iterator<Item = &'a [f64]> + 'a, FeatureError> {
    plan.validate()?;
    let w = plan.window_len_samples;
    let hop = plan.hop();
    let frames = plan.n_frames(channel.len()).ok_or(FeatureError::SignalTooShort {
        len: channel.len(),
        window: w,
    })?;
    Ok((0..frames).map(move |i| &channel[i * hop..i * hop + w]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeKind {
    Mav,
    Energy,
    Variance,
    Rms,
    Tm3,
    Tm4,
    Tm5,
    LogD,
}

impl EnvelopeKind {
    pub const ALL: [EnvelopeKind; 8] = [
        EnvelopeKind::Mav,
        EnvelopeKind::Energy,
        EnvelopeKind::Variance,
        EnvelopeKind::Rms,
        EnvelopeKind::Tm3,
        EnvelopeKind::Tm4,
        EnvelopeKind::Tm5,
        EnvelopeKind::LogD,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvelopeKind::Mav => "mav",
            EnvelopeKind::Energy => "energy",
            EnvelopeKind::Variance => "var",
            EnvelopeKind::Rms => "rms",
            EnvelopeKind::Tm3 => "tm3",
            EnvelopeKind::Tm4 => "tm4",
            EnvelopeKind::Tm5 => "tm5",
            EnvelopeKind::LogD => "logd",
        }
    }
}

impl std::str::FromStr for EnvelopeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EnvelopeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown envelope feature {s:?}"))
    }
}

/// Which envelope to compute. `variance_zero_mean` only affects
/// [`EnvelopeKind::Variance`]: deviations are taken from 0 rather than the
/// window mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFeature {
    pub kind: EnvelopeKind,
    pub variance_zero_mean: bool,
}

impl From<EnvelopeKind> for EnvelopeFeature {
    fn from(kind: EnvelopeKind) -> Self {
        EnvelopeFeature {
            kind,
            variance_zero_mean: true,
        }
    }
}

fn mean_of(window: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    window.iter().map(|&x| f(x)).sum::<f64>() / window.len() as f64
}

/// One envelope value for a window (`W ≥ 2`).
pub fn envelope_feature(window: &[f64], feature: EnvelopeFeature) -> f64 {
    debug_assert!(window.len() >= 2);
    let w = window.len() as f64;
    match feature.kind {
        EnvelopeKind::Mav => mean_of(window, f64::abs),
        EnvelopeKind::Energy => mean_of(window, |x| x * x),
        EnvelopeKind::Rms => mean_of(window, |x| x * x).sqrt(),
        EnvelopeKind::Variance => {
            let mu = if feature.variance_zero_mean { 0.0 } else { window.iter().sum::<f64>() / w };
            window.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / (w - 1.0)
        }
        EnvelopeKind::Tm3 => mean_of(window, |x| x.abs().powi(3)),
        EnvelopeKind::Tm4 => mean_of(window, |x| x.powi(4)),
        EnvelopeKind::Tm5 => mean_of(window, |x| x.abs().powi(5)),
        EnvelopeKind::LogD => mean_of(window, |x| x.abs().max(LOG_DETECTOR_EPS).ln()).exp(),
    }
}

/// `n_channels × n_frames` envelope of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub values: Array2<f64>,
    pub plan: WindowPlan,
    pub feature: EnvelopeFeature,
}

impl Envelope {
    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }
}

pub fn compute_envelope(trial: &FixedTrial, plan: &WindowPlan, feature: EnvelopeFeature) -> Result<Envelope, FeatureError> {
    plan.validate()?;
    let n = trial.n_samples();
    let frames = plan.n_frames(n).ok_or(FeatureError::SignalTooShort {
        len: n,
        window: plan.window_len_samples,
    })?;
    let mut values = Array2::<f64>::zeros((trial.n_channels(), frames));
    for (c, row) in trial.samples.rows().into_iter().enumerate() {
        let owned;
        let channel = match row.as_slice() {
            Some(s) => s,
            None => {
                owned = row.to_vec();
                &owned[..]
            }
        };
        for (i, win) in segment(channel, plan)?.enumerate() {
            values[[c, i]] = envelope_feature(win, feature);
        }
    }
    Ok(Envelope {
        values,
        plan: *plan,
        feature,
    })
}

/// Per-row z-score with the population standard deviation. Rows whose
/// deviation is below [`ZNORM_MIN_STD`] become all zeros.
pub fn znorm(values: ArrayView2<f64>) -> Array2<f64> {
    let mut out = values.to_owned();
    for mut row in out.rows_mut() {
        let k = row.len() as f64;
        let mean = row.sum() / k;
        let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / k;
        let std = var.sqrt();
        if std < ZNORM_MIN_STD {
            row.fill(0.0);
        } else {
            row.mapv_inplace(|x| (x - mean) / std);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial_store::{Letter, TrialRecord};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feat(kind: EnvelopeKind) -> EnvelopeFeature {
        kind.into()
    }

    fn fixed(rows: Array2<f64>) -> FixedTrial {
        FixedTrial {
            record: TrialRecord {
                subject_id: "S01".into(),
                letter: Letter::from_char('A').unwrap(),
                repetition: 0,
                sample_rate_hz: 2000.0,
                n_channels: rows.nrows(),
                data_path: "x".into(),
            },
            samples: rows,
        }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn frame_counts() {
        let plan = WindowPlan::new(250, 0.5).unwrap();
        assert_eq!(plan.hop(), 125);
        assert_eq!(plan.n_frames(8000), Some(63));
        assert_eq!(plan.n_frames(250), Some(1));
        assert_eq!(plan.n_frames(249), None);
        assert_eq!(WindowPlan::new(200, 0.5).unwrap().n_frames(8000), Some(79));
        assert_eq!(WindowPlan::from_ms(125.0, 2000.0).unwrap().window_len_samples, 250);
    }

    #[test]
    fn single_window_covers_signal() {
        let x: Vec<f64> = (0..250).map(f64::from).collect();
        let plan = WindowPlan::new(250, 0.5).unwrap();
        let frames: Vec<&[f64]> = segment(&x, &plan).unwrap().collect();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0], &x[..]);
        assert!(matches!(segment(&x[..10], &plan), Err(FeatureError::SignalTooShort { .. })));
    }

    #[test]
    fn bad_plans() {
        assert!(WindowPlan::new(1, 0.5).is_err());
        assert!(WindowPlan::new(10, 1.0).is_err());
        assert!(WindowPlan::new(2, 0.9).is_err());
    }

    #[test]
    fn worked_example_values() {
        let x = [1.0, -2.0, 3.0];
        assert_eq!(envelope_feature(&x, feat(EnvelopeKind::Mav)), 2.0);
        assert!(close(envelope_feature(&x, feat(EnvelopeKind::Energy)), 14.0 / 3.0, 1e-15));
        assert!(close(envelope_feature(&x, feat(EnvelopeKind::Rms)), (14.0f64 / 3.0).sqrt(), 1e-15));
        assert!(close(envelope_feature(&x, feat(EnvelopeKind::Tm3)), 12.0, 1e-15));
        assert!(close(envelope_feature(&x, feat(EnvelopeKind::Tm4)), 98.0 / 3.0, 1e-15));
        assert!(close(envelope_feature(&x, feat(EnvelopeKind::Tm5)), 276.0 / 3.0, 1e-15));
        assert!(close(envelope_feature(&x, feat(EnvelopeKind::Variance)), 7.0, 1e-15));
        let sample_mean = EnvelopeFeature {
            kind: EnvelopeKind::Variance,
            variance_zero_mean: false,
        };
        // mean 2/3: deviations 1/3, -8/3, 7/3 -> (1 + 64 + 49)/9 / 2
        assert!(close(envelope_feature(&x, sample_mean), 114.0 / 18.0, 1e-14));
        assert!(close(envelope_feature(&[1.0, 2.0, 4.0], feat(EnvelopeKind::LogD)), 2.0, 1e-15));
    }

    #[test]
    fn zero_window() {
        let z = [0.0; 3];
        for k in EnvelopeKind::ALL {
            let v = envelope_feature(&z, feat(k));
            if k == EnvelopeKind::LogD {
                assert!(close(v, LOG_DETECTOR_EPS, 1e-12));
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn constant_channel_mav() {
        let t = fixed(Array2::from_elem((2, 1000), -0.7));
        let env = compute_envelope(&t, &WindowPlan::default(), feat(EnvelopeKind::Mav)).unwrap();
        assert_eq!(env.values.dim(), (2, 7));
        assert!(env.values.iter().all(|&v| close(v, 0.7, 1e-14)));
    }

    #[test]
    fn envelope_shape_5x63() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = fixed(Array2::from_shape_fn((5, 8000), |_| rng.random_range(-1.0..1.0)));
        let env = compute_envelope(&t, &WindowPlan::default(), feat(EnvelopeKind::Rms)).unwrap();
        assert_eq!(env.values.dim(), (5, 63));
    }

    #[test]
    fn impulse_energy() {
        let mut x = Array2::<f64>::zeros((1, 8000));
        x[[0, 0]] = 1.0;
        let env = compute_envelope(&fixed(x), &WindowPlan::default(), feat(EnvelopeKind::Energy)).unwrap();
        assert_eq!(env.values[[0, 0]], 1.0 / 250.0);
        assert!(env.values.row(0).iter().skip(1).all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_for_window() {
        let t = fixed(Array2::zeros((1, 100)));
        assert!(matches!(
            compute_envelope(&t, &WindowPlan::default(), feat(EnvelopeKind::Mav)),
            Err(FeatureError::SignalTooShort { len: 100, window: 250 })
        ));
    }

    /// Two-pass loop oracle, written out per feature.
    fn naive(x: &[f64], kind: EnvelopeKind) -> f64 {
        let w = x.len() as f64;
        let mut acc = 0.0;
        for &v in x {
            acc += match kind {
                EnvelopeKind::Mav => v.abs(),
                EnvelopeKind::Energy | EnvelopeKind::Rms => v * v,
                EnvelopeKind::Variance => v * v,
                EnvelopeKind::Tm3 => v.abs() * v.abs() * v.abs(),
                EnvelopeKind::Tm4 => v * v * v * v,
                EnvelopeKind::Tm5 => v.abs() * v.abs() * v.abs() * v.abs() * v.abs(),
                EnvelopeKind::LogD => v.abs().max(1e-12).ln(),
            };
        }
        match kind {
            EnvelopeKind::Rms => (acc / w).sqrt(),
            EnvelopeKind::Variance => acc / (w - 1.0),
            EnvelopeKind::LogD => (acc / w).exp(),
            _ => acc / w,
        }
    }

    #[test]
    fn features_match_loop_oracle_w250() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let x: Vec<f64> = (0..250).map(|_| rng.random_range(-3.0..3.0)).collect();
            for k in EnvelopeKind::ALL {
                assert!(close(envelope_feature(&x, feat(k)), naive(&x, k), 1e-12), "{k:?}");
            }
        }
    }

    #[test]
    fn znorm_examples() {
        let m = ndarray::arr2(&[[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]]);
        let z = znorm(m.view());
        let s = 1.5f64.sqrt();
        assert!(close(z[[0, 0]], -s, 1e-15) && z[[0, 1]] == 0.0 && close(z[[0, 2]], s, 1e-15));
        assert!(z.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn znorm_rows_are_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Array2::from_shape_fn((5, 63), |_| rng.random_range(-10.0..50.0));
        let z = znorm(m.view());
        for row in z.rows() {
            let mean = row.sum() / 63.0;
            let std = (row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 63.0).sqrt();
            assert!(mean.abs() < 1e-10);
            assert!((std - 1.0).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn scaling_and_sign_laws(
            x in proptest::collection::vec(-5.0f64..5.0, 2..100),
            a in -4.0f64..4.0,
        ) {
            prop_assume!(a.abs() > 1e-3);
            let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let f = |v: &[f64], k| envelope_feature(v, feat(k));
            let laws = [
                (EnvelopeKind::Mav, a.abs()),
                (EnvelopeKind::Energy, a * a),
                (EnvelopeKind::Rms, a.abs()),
                (EnvelopeKind::Variance, a * a),
                (EnvelopeKind::Tm3, a.abs().powi(3)),
                (EnvelopeKind::Tm4, a.powi(4)),
                (EnvelopeKind::Tm5, a.abs().powi(5)),
            ];
            for (k, factor) in laws {
                let lhs = f(&ax, k);
                let rhs = factor * f(&x, k);
                prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1e-300), "{:?}", k);
            }
            if x.iter().chain(&ax).all(|v| v.abs() > LOG_DETECTOR_EPS) {
                let lhs = f(&ax, EnvelopeKind::LogD);
                let rhs = a.abs() * f(&x, EnvelopeKind::LogD);
                prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs);
            }
            for k in EnvelopeKind::ALL {
                prop_assert_eq!(f(&x, k), f(&neg, k));
                prop_assert!(f(&x, k) >= 0.0 && f(&x, k).is_finite());
            }
            let e = f(&x, EnvelopeKind::Energy);
            let r = f(&x, EnvelopeKind::Rms);
            prop_assert!((r * r - e).abs() <= 4.0 * f64::EPSILON * e.max(f64::MIN_POSITIVE));
            let w = x.len() as f64;
            let v = f(&x, EnvelopeKind::Variance);
            prop_assert!((v - e * w / (w - 1.0)).abs() <= 1e-12 * v.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn znorm_is_idempotent(rows in proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, 8), 1..6)) {
            let m = Array2::from_shape_vec((rows.len(), 8), rows.concat()).unwrap();
            let once = znorm(m.view());
            let twice = znorm(once.view());
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

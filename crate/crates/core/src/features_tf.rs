//! Time-frequency images: magnitude STFT with a periodic Hann window and
//! magnitude CWT with an analytic Morlet wavelet.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resample::FixedTrial;

#[derive(Debug, Error, PartialEq)]
pub enum TfError {
    #[error("signal of {len} samples is shorter than the {window}-sample window")]
    SignalTooShort { len: usize, window: usize },
    #[error("invalid STFT config: {0}")]
    InvalidStft(String),
    #[error("invalid CWT config: {0}")]
    InvalidCwt(String),
}

/// Periodic Hann window, `w[n] = ½(1 − cos(2πn/W))`.
pub fn hann_window(w: usize) -> Vec<f64> {
    (0..w)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / w as f64).cos()))
        .collect()
}

/// STFT parameters. The hop is half the window and the FFT length equals
/// the window length; only the one-sided spectrum is kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len_samples: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig { window_len_samples: 200 }
    }
}

impl StftConfig {
    pub fn new(window_len_samples: usize) -> Result<Self, TfError> {
        let c = StftConfig { window_len_samples };
        c.validate()?;
        Ok(c)
    }

    pub fn from_ms(window_ms: f64, sample_rate_hz: f64) -> Result<Self, TfError> {
        Self::new((window_ms * sample_rate_hz / 1000.0).round() as usize)
    }

    pub fn validate(&self) -> Result<(), TfError> {
        let w = self.window_len_samples;
        if w < 4 || !w.is_multiple_of(2) {
            return Err(TfError::InvalidStft(format!("window length {w} must be even and at least 4")));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        self.window_len_samples / 2
    }

    pub fn n_bins(&self) -> usize {
        self.window_len_samples / 2 + 1
    }

    pub fn n_frames(&self, n: usize) -> Option<usize> {
        (n >= self.window_len_samples).then(|| (n - self.window_len_samples) / self.hop() + 1)
    }
}

/// Reusable STFT state: the window and a planned FFT of matching length.
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self, TfError> {
        config.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(config.window_len_samples);
        Ok(Stft {
            window: hann_window(config.window_len_samples),
            config,
            fft,
        })
    }

    /// `(W/2 + 1) × n_frames` magnitude image of one channel.
    pub fn magnitude(&self, channel: &[f64]) -> Result<Array2<f64>, TfError> {
        let w = self.config.window_len_samples;
        let hop = self.config.hop();
        let bins = self.config.n_bins();
        let frames = self.config.n_frames(channel.len()).ok_or(TfError::SignalTooShort {
            len: channel.len(),
            window: w,
        })?;
        let mut out = Array2::<f64>::zeros((bins, frames));
        let mut buf = vec![Complex64::new(0.0, 0.0); w];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for f in 0..frames {
            let start = f * hop;
            for (b, (&x, &win)) in buf.iter_mut().zip(channel[start..start + w].iter().zip(&self.window)) {
                *b = Complex64::new(x * win, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..bins {
                out[[k, f]] = buf[k].norm();
            }
        }
        Ok(out)
    }
}

pub fn stft_magnitude(channel: &[f64], config: &StftConfig) -> Result<Array2<f64>, TfError> {
    Stft::new(*config)?.magnitude(channel)
}

/// `n_channels × bins × frames` magnitude STFT of a whole trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Array3<f64>,
    pub config: StftConfig,
}

pub fn trial_spectrogram(trial: &FixedTrial, config: &StftConfig) -> Result<Spectrogram, TfError> {
    let stft = Stft::new(*config)?;
    let frames = config.n_frames(trial.n_samples()).ok_or(TfError::SignalTooShort {
        len: trial.n_samples(),
        window: config.window_len_samples,
    })?;
    let mut values = Array3::<f64>::zeros((trial.n_channels(), config.n_bins(), frames));
    for (c, row) in trial.samples.rows().into_iter().enumerate() {
        let img = stft.magnitude(&row.to_vec())?;
        values.index_axis_mut(ndarray::Axis(0), c).assign(&img);
    }
    Ok(Spectrogram {
        values,
        config: *config,
    })
}

/// Scaled Morlet wavelet `σ^{-1/2} Ψ(t/σ)` with
/// `Ψ(u) = π^{-1/4} e^{iω₀u} e^{-u²/2}`. `t` is measured from the
/// wavelet centre.
pub fn morlet(t: f64, sigma: f64, omega0: f64) -> Complex64 {
    let u = t / sigma;
    let amp = PI.powf(-0.25) * (-0.5 * u * u).exp() / sigma.sqrt();
    Complex64::from_polar(amp, omega0 * u)
}

/// Wavelets are truncated at this many scale units from their centre.
pub const CWT_SUPPORT_RADIUS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwtConfig {
    pub n_scales: usize,
    pub omega0: f64,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    /// Coefficients are kept at every `time_decimation`-th sample.
    pub time_decimation: usize,
}

impl Default for CwtConfig {
    fn default() -> Self {
        CwtConfig {
            n_scales: 60,
            omega0: 6.0,
            f_min_hz: 4.0,
            f_max_hz: 500.0,
            time_decimation: 100,
        }
    }
}

impl CwtConfig {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<(), TfError> {
        let bad = |m: String| Err(TfError::InvalidCwt(m));
        if self.n_scales < 2 {
            return bad("need at least two scales".into());
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return bad("omega0 must be positive".into());
        }
        if !(self.f_min_hz > 0.0 && self.f_min_hz < self.f_max_hz) {
            return bad("frequency range must satisfy 0 < f_min < f_max".into());
        }
        if self.f_max_hz > sample_rate_hz / 2.0 {
            return bad(format!("f_max {} Hz above Nyquist {} Hz", self.f_max_hz, sample_rate_hz / 2.0));
        }
        if self.time_decimation == 0 {
            return bad("time decimation must be positive".into());
        }
        Ok(())
    }

    /// Pseudo-frequencies, log-spaced and descending so that the matching
    /// scales ascend.
    pub fn pseudo_frequencies(&self) -> Vec<f64> {
        let n = self.n_scales;
        let ratio = (self.f_min_hz / self.f_max_hz).ln() / (n - 1) as f64;
        (0..n)
            .map(|j| match j {
                0 => self.f_max_hz,
                j if j == n - 1 => self.f_min_hz,
                j => self.f_max_hz * (ratio * j as f64).exp(),
            })
            .collect()
    }

    /// Scales in samples, `σ = ω₀·fs / (2π f)`, strictly increasing.
    pub fn scales(&self, sample_rate_hz: f64) -> Vec<f64> {
        self.pseudo_frequencies()
            .into_iter()
            .map(|f| self.omega0 * sample_rate_hz / (2.0 * PI * f))
            .collect()
    }

    pub fn n_frames(&self, n: usize) -> usize {
        (n - 1) / self.time_decimation + 1
    }
}

/// Precomputed conjugated wavelet taps for every scale.
pub struct Cwt {
    config: CwtConfig,
    sample_period: f64,
    /// Per scale: taps for offsets `-r..=r`, stored at index `offset + r`.
    kernels: Vec<Vec<Complex64>>,
}

impl Cwt {
    pub fn new(config: CwtConfig, sample_rate_hz: f64) -> Result<Self, TfError> {
        config.validate(sample_rate_hz)?;
        let kernels = config
            .scales(sample_rate_hz)
            .into_iter()
            .map(|sigma| {
                let r = (CWT_SUPPORT_RADIUS * sigma).floor() as i64;
                (-r..=r).map(|k| morlet(k as f64, sigma, config.omega0).conj()).collect()
            })
            .collect();
        Ok(Cwt {
            config,
            sample_period: 1.0 / sample_rate_hz,
            kernels,
        })
    }

    /// `n_scales × n_frames` magnitude scalogram of one channel. Frames
    /// sit at `τ = 0, D, 2D, …`; near the edges the wavelet support is
    /// clipped to the signal.
    pub fn magnitude(&self, channel: &[f64]) -> Result<Array2<f64>, TfError> {
        let n = channel.len();
        if n < 2 {
            return Err(TfError::SignalTooShort { len: n, window: 2 });
        }
        let d = self.config.time_decimation;
        let frames = self.config.n_frames(n);
        let mut out = Array2::<f64>::zeros((self.kernels.len(), frames));
        for (j, kernel) in self.kernels.iter().enumerate() {
            let r = (kernel.len() / 2) as i64;
            for f in 0..frames {
                let tau = (f * d) as i64;
                let lo = (tau - r).max(0);
                let hi = (tau + r).min(n as i64 - 1);
                let mut acc = Complex64::new(0.0, 0.0);
                for t in lo..=hi {
                    acc += kernel[(t - tau + r) as usize] * channel[t as usize];
                }
                out[[j, f]] = (acc * self.sample_period).norm();
            }
        }
        Ok(out)
    }
}

pub fn cwt_magnitude(channel: &[f64], sample_rate_hz: f64, config: &CwtConfig) -> Result<Array2<f64>, TfError> {
    Cwt::new(*config, sample_rate_hz)?.magnitude(channel)
}

/// `n_channels × n_scales × frames` magnitude CWT of a whole trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalogram {
    pub values: Array3<f64>,
    pub config: CwtConfig,
}

pub fn trial_scalogram(trial: &FixedTrial, config: &CwtConfig) -> Result<Scalogram, TfError> {
    let cwt = Cwt::new(*config, trial.record.sample_rate_hz)?;
    let n = trial.n_samples();
    if n < 2 {
        return Err(TfError::SignalTooShort { len: n, window: 2 });
    }
    let mut values = Array3::<f64>::zeros((trial.n_channels(), config.n_scales, config.n_frames(n)));
    for (c, row) in trial.samples.rows().into_iter().enumerate() {
        let img = cwt.magnitude(&row.to_vec())?;
        values.index_axis_mut(ndarray::Axis(0), c).assign(&img);
    }
    Ok(Scalogram {
        values,
        config: *config,
    })
}

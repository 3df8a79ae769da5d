//! Front end: framing, windowing, mel filterbank, MFCC, sliding-window
//! mean normalization.

use ndarray::{Array1, Array2};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

pub mod wav;

pub use wav::{load_wav, write_wav};

/// Floor applied to filterbank energies before the log.
pub const LOG_FLOOR: f64 = 1e-10;
/// Network feature dimension.
pub const MFCC_DIM: usize = 30;
/// Mel band count; equal to the MFCC dimension so the DCT is square.
pub const N_MELS: usize = 30;

/// Normalized mono audio.
#[derive(Debug, Clone)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        if sample_rate_hz == 0 {
            return Err(Error::MalformedHeader("zero sample rate".into()));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(Error::MalformedHeader("non-finite sample".into()));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Hamming,
    Rectangular,
}

/// Framing geometry in milliseconds, independent of sample rate.
#[derive(Debug, Clone, Copy)]
pub struct FrameSpec {
    pub frame_len_ms: f64,
    pub hop_ms: f64,
    pub window: WindowKind,
}

impl FrameSpec {
    /// 25 ms / 10 ms Hamming, the network feature grid.
    pub fn mfcc() -> Self {
        Self { frame_len_ms: 25.0, hop_ms: 10.0, window: WindowKind::Hamming }
    }

    /// 25 ms / 2.5 ms Hamming, the oversampled grid for frame picking.
    pub fn vfr() -> Self {
        Self { frame_len_ms: 25.0, hop_ms: 2.5, window: WindowKind::Hamming }
    }

    pub fn frame_len_samples(&self, rate: u32) -> usize {
        (self.frame_len_ms * rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, rate: u32) -> usize {
        (self.hop_ms * rate as f64 / 1000.0).round() as usize
    }
}

/// Filterbank energies; `frames` is N x K, all entries non-negative.
#[derive(Debug, Clone)]
pub struct MelSpectrogram {
    pub frames: Array2<f64>,
    pub hop_ms: f64,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_bands(&self) -> usize {
        self.frames.ncols()
    }
}

/// Frame-level cepstral features on the 10 ms grid, T x 30.
#[derive(Debug, Clone)]
pub struct MfccMatrix {
    pub frames: Array2<f64>,
    pub hop_ms: f64,
    pub normalized: bool,
}

impl MfccMatrix {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

fn window_coeffs(kind: WindowKind, len: usize) -> Vec<f64> {
    match kind {
        WindowKind::Rectangular => vec![1.0; len],
        WindowKind::Hamming => (0..len)
            .map(|n| {
                0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos()
            })
            .collect(),
    }
}

/// Slices the signal into windowed frames. Frame i covers samples
/// [i*hop, i*hop+len); a trailing partial frame is dropped.
pub fn frame_signal(audio: &AudioBuffer, spec: &FrameSpec) -> Result<Vec<Vec<f64>>> {
    let len = spec.frame_len_samples(audio.sample_rate_hz);
    let hop = spec.hop_samples(audio.sample_rate_hz);
    let n = audio.samples.len();
    if n < len {
        return Err(Error::AudioTooShort { need: len, got: n });
    }
    let coeffs = window_coeffs(spec.window, len);
    let n_frames = (n - len) / hop + 1;
    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let start = i * hop;
        let frame: Vec<f64> = audio.samples[start..start + len]
            .iter()
            .zip(&coeffs)
            .map(|(s, w)| s * w)
            .collect();
        frames.push(frame);
    }
    Ok(frames)
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank spanning 20 Hz to Nyquist, rows are filters
/// over FFT bins 0..=n_fft/2.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Array2<f64> {
    let nyquist = sample_rate as f64 / 2.0;
    let mel_lo = hz_to_mel(20.0);
    let mel_hi = hz_to_mel(nyquist);
    let n_bins = n_fft / 2 + 1;
    // n_mels + 2 equally spaced mel points -> filter edges/centers
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        for bin in 0..n_bins {
            let f = bin as f64 * bin_hz;
            let w = if f >= lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f <= hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            fb[[m, bin]] = w;
        }
    }
    fb
}

/// Center frequency (Hz) of mel band `m` out of `n_mels` for a given rate.
pub fn mel_center_hz(m: usize, n_mels: usize, sample_rate: u32) -> f64 {
    let mel_lo = hz_to_mel(20.0);
    let mel_hi = hz_to_mel(sample_rate as f64 / 2.0);
    mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) as f64 / (n_mels + 1) as f64)
}

/// Per-frame magnitude-squared spectrum through the triangular filterbank.
pub fn mel_spectrogram(
    audio: &AudioBuffer,
    spec: &FrameSpec,
    n_mels: usize,
) -> Result<MelSpectrogram> {
    assert!(n_mels >= 2, "n_mels must be at least 2");
    let frames = frame_signal(audio, spec)?;
    let frame_len = frames[0].len();
    let n_fft = frame_len.next_power_of_two();
    let fb = mel_filterbank(n_mels, n_fft, audio.sample_rate_hz);
    let n_bins = n_fft / 2 + 1;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut out = Array2::zeros((frames.len(), n_mels));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for (i, frame) in frames.iter().enumerate() {
        for c in buf.iter_mut() {
            *c = Complex::new(0.0, 0.0);
        }
        for (c, &s) in buf.iter_mut().zip(frame) {
            c.re = s;
        }
        fft.process(&mut buf);
        let power: Array1<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        let energies = fb.dot(&power);
        out.row_mut(i).assign(&energies);
    }
    Ok(MelSpectrogram { frames: out, hop_ms: spec.hop_ms })
}

/// Type-II DCT of the floored log energies, first `n_coeffs` retained.
pub fn mfcc(mel: &MelSpectrogram, n_coeffs: usize) -> Result<MfccMatrix> {
    let k = mel.n_bands();
    if n_coeffs > k {
        return Err(Error::DimensionMismatch(format!(
            "{n_coeffs} coefficients from {k} mel bands"
        )));
    }
    let t = mel.n_frames();
    let mut out = Array2::zeros((t, n_coeffs));
    for i in 0..t {
        let log_e: Vec<f64> = mel
            .frames
            .row(i)
            .iter()
            .map(|&e| e.max(LOG_FLOOR).ln())
            .collect();
        for c in 0..n_coeffs {
            let mut acc = 0.0;
            for (n, &x) in log_e.iter().enumerate() {
                acc += x
                    * (std::f64::consts::PI * c as f64 * (n as f64 + 0.5) / k as f64).cos();
            }
            out[[i, c]] = acc;
        }
    }
    Ok(MfccMatrix { frames: out, hop_ms: mel.hop_ms, normalized: false })
}

/// Subtracts the per-dimension mean over a sliding window of up to
/// `window_s` seconds centered on each frame. Near the edges the window
/// keeps its full extent where possible by shifting inward.
pub fn sliding_mean_normalize(feats: &MfccMatrix, window_s: f64) -> MfccMatrix {
    assert!(window_s > 0.0, "window must be positive");
    let t = feats.n_frames();
    let d = feats.dim();
    let w = ((window_s * 1000.0 / feats.hop_ms).round() as usize).max(1);
    let mut out = Array2::zeros((t, d));
    for i in 0..t {
        let mut start = i.saturating_sub(w / 2);
        let mut end = start + w;
        if end > t {
            end = t;
            start = end.saturating_sub(w);
        }
        let n = (end - start) as f64;
        for j in 0..d {
            let mean: f64 =
                feats.frames.slice(ndarray::s![start..end, j]).sum() / n;
            out[[i, j]] = feats.frames[[i, j]] - mean;
        }
    }
    MfccMatrix { frames: out, hop_ms: feats.hop_ms, normalized: true }
}

/// Full front end: framing, mel, MFCC, and (optionally) normalization.
pub fn extract_mfcc(audio: &AudioBuffer, normalize: bool) -> Result<MfccMatrix> {
    let mel = mel_spectrogram(audio, &FrameSpec::mfcc(), N_MELS)?;
    let feats = mfcc(&mel, MFCC_DIM)?;
    Ok(if normalize { sliding_mean_normalize(&feats, 3.0) } else { feats })
}

//! Synthetic desk-scale data: each speaker is a random Gaussian feature
//! source; a "slow" style repeats frames so the VFR conditioning carries
//! real structure.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{MelSpectrogram, MFCC_DIM};
use crate::error::{Error, Result};
use crate::vfr;

use super::{Dataset, Utterance};

/// Standard-normal draw via Box-Muller.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

struct SpeakerSource {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl SpeakerSource {
    fn sample(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        Self {
            mean: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            std: (0..dim).map(|_| rng.gen_range(0.2..0.6)).collect(),
        }
    }

    fn frame(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| m + s * normal(rng))
            .collect()
    }
}

/// Oversampled frame sequence for one utterance: "fast" draws every
/// frame independently, "slow" stretches durations by repeating each
/// drawn frame twice.
fn oversampled_frames(
    source: &SpeakerSource,
    rng: &mut ChaCha8Rng,
    n_over: usize,
    dim: usize,
    slow: bool,
) -> Array2<f64> {
    let mut out = Array2::zeros((n_over, dim));
    if slow {
        let mut i = 0;
        while i < n_over {
            let f = source.frame(rng);
            for rep in 0..2 {
                if i + rep < n_over {
                    for (j, &v) in f.iter().enumerate() {
                        out[[i + rep, j]] = v;
                    }
                }
            }
            i += 2;
        }
    } else {
        for i in 0..n_over {
            let f = source.frame(rng);
            for (j, &v) in f.iter().enumerate() {
                out[[i, j]] = v;
            }
        }
    }
    out
}

/// Generates a labeled dataset with `dim`-dimensional features.
pub fn synth_dataset_with_dim(
    n_speakers: usize,
    utts_per_speaker: usize,
    frames_per_utt: usize,
    dim: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_speakers < 1 || utts_per_speaker < 1 || frames_per_utt < 1 || dim < 1 {
        return Err(Error::InvalidConfig("all synth counts must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources: Vec<SpeakerSource> =
        (0..n_speakers).map(|_| SpeakerSource::sample(&mut rng, dim)).collect();
    let mut utterances = Vec::with_capacity(n_speakers * utts_per_speaker);
    for (speaker, source) in sources.iter().enumerate() {
        for utt_idx in 0..utts_per_speaker {
            let slow = utt_idx % 2 == 1;
            let n_over = vfr::REDUCE * frames_per_utt;
            let over = oversampled_frames(source, &mut rng, n_over.max(vfr::BUFFER_FRAMES), dim, slow);
            // 10 ms grid = every 4th oversampled frame
            let mut feats = Array2::zeros((frames_per_utt, dim));
            for t in 0..frames_per_utt {
                feats.row_mut(t).assign(&over.row((t * vfr::REDUCE).min(over.nrows() - 1)));
            }
            // positive mel-like energies drive the entropy curve
            let mel = MelSpectrogram { frames: over.mapv(f64::exp), hop_ms: 2.5 };
            let (_, _, _, cond) = vfr::conditioning_from_mel(&mel, frames_per_utt)?;
            utterances.push(Utterance {
                id: format!("spk{speaker:03}_utt{utt_idx:03}"),
                feats,
                cond,
                speaker,
            });
        }
    }
    Ok(Dataset { utterances, n_speakers })
}

/// Standard 30-dimensional synthetic dataset.
pub fn synth_dataset(
    n_speakers: usize,
    utts_per_speaker: usize,
    frames_per_utt: usize,
    seed: u64,
) -> Result<Dataset> {
    synth_dataset_with_dim(n_speakers, utts_per_speaker, frames_per_utt, MFCC_DIM, seed)
}

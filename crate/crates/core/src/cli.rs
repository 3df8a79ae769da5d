//! Command-line surface tying the pipeline together.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ndarray::{Array1, Array2};

use crate::archive;
use crate::dsp::{self, AudioBuffer, FrameSpec, N_MELS};
use crate::error::{Error, Result};
use crate::eval;
use crate::network::{self, Model, ModelConfig, SpeakerEmbedding};
use crate::pooling::Variant;
use crate::trainer;
use crate::vfr::{self, ConditioningVector, EntropyCurve, PickMask, Thresholds};

#[derive(Parser)]
#[command(name = "vfrsap", about = "VFR-conditioned attentive pooling speaker embeddings")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract MFCC features from a WAV file into an SPF1 archive
    Extract {
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip sliding-window mean normalization
        #[arg(long)]
        no_norm: bool,
    },
    /// Run VFR analysis on a WAV file and write the conditioning vector
    Vfr {
        #[arg(long)]
        wav: PathBuf,
        /// Conditioning vector output (SPF1, one column)
        #[arg(long)]
        cond: PathBuf,
        /// Optional entropy curve CSV (time_ms,H)
        #[arg(long)]
        entropy_csv: Option<PathBuf>,
        /// Optional pick-mask CSV (index,bit)
        #[arg(long)]
        mask_csv: Option<PathBuf>,
        /// Optional conditioning CSV (frame,c)
        #[arg(long)]
        cond_csv: Option<PathBuf>,
    },
    /// Generate a synthetic labeled dataset tree
    Synth {
        #[arg(long)]
        speakers: usize,
        #[arg(long)]
        utts: usize,
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a speaker classifier on a dataset tree
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// none | concat | gate | affine | combined_a | combined_b | vfr_weights
        #[arg(long)]
        variant: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed from the config file
        #[arg(long)]
        seed: Option<u64>,
        /// Frame-layer width (defaults to the full-size model)
        #[arg(long)]
        frame_dim: Option<usize>,
        #[arg(long)]
        l5_dim: Option<usize>,
        #[arg(long)]
        embed_dim: Option<usize>,
        #[arg(long)]
        attention_dim: Option<usize>,
        /// Optional per-epoch loss log CSV
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Extract an embedding from a WAV file (runs extract + vfr internally)
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trial list with cosine similarity over stored embeddings
    Score {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        embeds: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the equal error rate of a score file
    Eer {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        scores: PathBuf,
    },
    /// McNemar's paired test between two systems' scores
    Mcnemar {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        scores_a: PathBuf,
        #[arg(long)]
        scores_b: PathBuf,
    },
}

/// Number of frames the 25 ms / 10 ms analysis grid yields.
fn mfcc_grid_frames(audio: &AudioBuffer) -> Result<usize> {
    let spec = FrameSpec::mfcc();
    let len = spec.frame_len_samples(audio.sample_rate_hz);
    let hop = spec.hop_samples(audio.sample_rate_hz);
    let n = audio.samples.len();
    if n < len {
        return Err(Error::AudioTooShort { need: len, got: n });
    }
    Ok((n - len) / hop + 1)
}

/// Oversampled VFR analysis of a WAV file.
fn vfr_from_audio(
    audio: &AudioBuffer,
) -> Result<(EntropyCurve, Thresholds, PickMask, ConditioningVector)> {
    let t_frames = mfcc_grid_frames(audio)?;
    let mel = dsp::mel_spectrogram(audio, &FrameSpec::vfr(), N_MELS)?;
    vfr::conditioning_from_mel(&mel, t_frames)
}

fn embed_wav(model: &Model, wav: &Path) -> Result<SpeakerEmbedding> {
    let audio = dsp::wav::load_wav(wav)?;
    let feats = dsp::extract_mfcc(&audio, true)?;
    let (_, _, _, cond) = vfr_from_audio(&audio)?;
    let id = wav
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "utterance".to_string());
    network::extract_embedding(&feats.frames, &cond, model, &id)
}

fn write_embedding_csv(path: &Path, emb: &SpeakerEmbedding) -> Result<()> {
    let header = std::iter::once("utterance_id".to_string())
        .chain((0..emb.vector.len()).map(|i| format!("e{i}")))
        .collect::<Vec<_>>()
        .join(",");
    let row = std::iter::once(emb.utterance_id.clone())
        .chain(emb.vector.iter().map(|v| v.to_string()))
        .collect::<Vec<_>>()
        .join(",");
    archive::write_csv(path, &header, std::iter::once(row))
}

fn read_embedding_csv(path: &Path) -> Result<Array1<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    lines.next().ok_or_else(|| Error::Parse(format!("{}: empty embedding file", path.display())))?;
    let row = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: missing embedding row", path.display())))?;
    let mut fields = row.split(',');
    fields.next(); // utterance id
    let values: std::result::Result<Vec<f64>, _> = fields.map(str::parse).collect();
    let values = values.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if values.is_empty() {
        return Err(Error::Parse(format!("{}: embedding has no values", path.display())));
    }
    Ok(Array1::from(values))
}

fn run_command(cmd: Command) -> Result<()> {
    match cmd {
        Command::Extract { wav, out, no_norm } => {
            let audio = dsp::wav::load_wav(&wav)?;
            let feats = dsp::extract_mfcc(&audio, !no_norm)?;
            archive::write_matrix(&out, &feats.frames)?;
            println!("wrote {} frames x {} to {}", feats.n_frames(), feats.dim(), out.display());
        }
        Command::Vfr { wav, cond, entropy_csv, mask_csv, cond_csv } => {
            let audio = dsp::wav::load_wav(&wav)?;
            let (curve, _th, mask, c) = vfr_from_audio(&audio)?;
            let col = Array2::from_shape_vec((c.len(), 1), c.values.clone())
                .expect("conditioning column shape");
            archive::write_matrix(&cond, &col)?;
            if let Some(path) = entropy_csv {
                archive::write_csv(
                    &path,
                    "time_ms,H",
                    curve
                        .values
                        .iter()
                        .enumerate()
                        .map(|(i, h)| format!("{},{h}", i as f64 * 15.0)),
                )?;
            }
            if let Some(path) = mask_csv {
                archive::write_csv(
                    &path,
                    "index,bit",
                    mask.bits.iter().enumerate().map(|(i, b)| format!("{i},{b}")),
                )?;
            }
            if let Some(path) = cond_csv {
                archive::write_csv(
                    &path,
                    "frame,c",
                    c.values.iter().enumerate().map(|(i, v)| format!("{i},{v}")),
                )?;
            }
            println!("wrote {} conditioning values to {}", c.len(), cond.display());
        }
        Command::Synth { speakers, utts, frames, seed, out } => {
            let data = trainer::synth::synth_dataset(speakers, utts, frames, seed)?;
            trainer::save_dataset(&out, &data)?;
            println!("wrote {} utterances to {}", data.utterances.len(), out.display());
        }
        Command::Train {
            data,
            config,
            variant,
            out,
            seed,
            frame_dim,
            l5_dim,
            embed_dim,
            attention_dim,
            loss_log,
        } => {
            let variant = Variant::parse(&variant)?;
            let dataset = trainer::load_dataset(&data)?;
            let mut cfg = trainer::TrainConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let input_dim = dataset.utterances[0].feats.ncols();
            let mut mcfg = ModelConfig::full(dataset.n_speakers, variant);
            mcfg.input_dim = input_dim;
            if let Some(d) = frame_dim {
                mcfg.frame_dim = d;
            }
            if let Some(d) = l5_dim {
                mcfg.l5_dim = d;
            }
            if let Some(d) = embed_dim {
                mcfg.embed_dim = d;
            }
            if let Some(d) = attention_dim {
                mcfg.attention_dim = d;
            }
            let mut model = network::init_model(mcfg, cfg.seed)?;
            let logs = trainer::train(&dataset, &cfg, &mut model, None)?;
            for log in &logs {
                println!(
                    "epoch {} loss {:.6} accuracy {:.4}",
                    log.epoch, log.mean_loss, log.train_accuracy
                );
            }
            if let Some(path) = loss_log {
                trainer::write_loss_log(&path, &logs)?;
            }
            network::io::save_model(&out, &model)?;
            println!("wrote model to {}", out.display());
        }
        Command::Embed { model, wav, out } => {
            let model = network::io::load_model(&model)?;
            let emb = embed_wav(&model, &wav)?;
            write_embedding_csv(&out, &emb)?;
            println!("wrote embedding {} to {}", emb.utterance_id, out.display());
        }
        Command::Score { trials, embeds, out } => {
            let list = eval::read_trial_list(&trials)?;
            let mut scores = Vec::with_capacity(list.trials.len());
            for trial in &list.trials {
                let a = read_embedding_csv(&embeds.join(format!("{}.csv", trial.enroll_id)))?;
                let b = read_embedding_csv(&embeds.join(format!("{}.csv", trial.test_id)))?;
                scores.push(eval::cosine_score(&a, &b)?);
            }
            let set = eval::ScoreSet { scores };
            eval::write_scores(&out, &list, &set)?;
            println!("wrote {} scores to {}", list.trials.len(), out.display());
        }
        Command::Eer { trials, scores } => {
            let list = eval::read_trial_list(&trials)?;
            let set = eval::read_scores(&scores, &list)?;
            let (eer, threshold) = eval::compute_eer(&list, &set)?;
            println!("EER {eer:.6} THRESHOLD {threshold:.6}");
        }
        Command::Mcnemar { trials, scores_a, scores_b } => {
            let list = eval::read_trial_list(&trials)?;
            let sa = eval::read_scores(&scores_a, &list)?;
            let sb = eval::read_scores(&scores_b, &list)?;
            let da = eval::decisions_at_eer(&list, &sa)?;
            let db = eval::decisions_at_eer(&list, &sb)?;
            let r = eval::mcnemar(&da, &db, &list)?;
            println!(
                "MCNEMAR {:.6} N01 {} N10 {} {}",
                r.statistic,
                r.n01,
                r.n10,
                if r.significant_at_05 { "SIGNIFICANT" } else { "NOT_SIGNIFICANT" }
            );
        }
    }
    Ok(())
}

/// Parses `argv` and runs the selected command. Usage errors exit with
/// clap's code 2; domain errors come back as `Err` for the binary to
/// report on exit 1.
pub fn run<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::parse_from(argv);
    run_command(cli.command)
}

//! Desk-scale training loop: utterance chunking, minibatching,
//! cross-entropy, Adam, deterministic seeding, per-epoch checkpoints.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{self, softmax, Model};
use crate::vfr::ConditioningVector;

pub mod synth;

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub chunk_len_frames: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 20,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            chunk_len_frames: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.chunk_len_frames < network::RECEPTIVE_FIELD {
            return Err(Error::InvalidConfig(format!(
                "chunk_len_frames must be >= {}",
                network::RECEPTIVE_FIELD
            )));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// Parses a `key = value` config file; `#` starts a comment and
    /// unknown keys are hard errors.
    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |e: &dyn std::fmt::Display| {
                Error::Parse(format!("line {}: {key}: {e}", lineno + 1))
            };
            match key {
                "batch_size" => cfg.batch_size = value.parse().map_err(|e| bad(&e))?,
                "epochs" => cfg.epochs = value.parse().map_err(|e| bad(&e))?,
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|e| bad(&e))?,
                "beta1" => cfg.beta1 = value.parse().map_err(|e| bad(&e))?,
                "beta2" => cfg.beta2 = value.parse().map_err(|e| bad(&e))?,
                "epsilon" => cfg.epsilon = value.parse().map_err(|e| bad(&e))?,
                "chunk_len_frames" => cfg.chunk_len_frames = value.parse().map_err(|e| bad(&e))?,
                "seed" => cfg.seed = value.parse().map_err(|e| bad(&e))?,
                other => {
                    return Err(Error::Parse(format!("line {}: unknown key '{other}'", lineno + 1)))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One training utterance: features on the 10 ms grid, the matching
/// conditioning vector, and the speaker label.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub feats: Array2<f64>,
    pub cond: ConditioningVector,
    pub speaker: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
    pub n_speakers: usize,
}

/// A fixed-length slice of one utterance.
#[derive(Debug, Clone)]
pub struct Chunk {
    pub feats: Array2<f64>,
    pub cond: ConditioningVector,
    pub speaker: usize,
}

/// Deterministic chunking and shuffling for one epoch. Each utterance
/// contributes floor(T / chunk_len) chunks (at least one) at seeded
/// random offsets; the conditioning slice is cut at the same indices.
pub fn make_batches(data: &Dataset, cfg: &TrainConfig, epoch: usize) -> Result<Vec<Vec<Chunk>>> {
    if data.utterances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e3779b9).wrapping_add(epoch as u64));
    let len = cfg.chunk_len_frames;
    let mut chunks = Vec::new();
    for utt in &data.utterances {
        let t = utt.feats.nrows();
        if t < len {
            return Err(Error::UtteranceTooShort { need: len, got: t });
        }
        let n_chunks = (t / len).max(1);
        for _ in 0..n_chunks {
            let offset = rng.gen_range(0..=t - len);
            let feats = utt.feats.slice(ndarray::s![offset..offset + len, ..]).to_owned();
            let cond = ConditioningVector {
                values: utt.cond.values[offset..offset + len].to_vec(),
            };
            chunks.push(Chunk { feats, cond, speaker: utt.speaker });
        }
    }
    chunks.shuffle(&mut rng);
    Ok(chunks
        .chunks(cfg.batch_size)
        .map(|b| b.to_vec())
        .collect())
}

/// -ln softmax(logits)[label], in log-sum-exp form.
pub fn cross_entropy(logits: &Array1<f64>, label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange { label, n_classes: logits.len() });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

/// First/second moment buffers plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }
}

/// One bias-corrected Adam update over flattened parameters.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

fn flatten(model: &Model) -> Vec<f64> {
    let mut out = Vec::with_capacity(model.n_params());
    for t in model.tensor_views() {
        out.extend(t.iter());
    }
    out
}

fn unflatten(model: &mut Model, flat: &[f64]) {
    let mut it = flat.iter();
    for mut t in model.tensor_views_mut() {
        for slot in t.iter_mut() {
            *slot = *it.next().unwrap();
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Trains the model in place. Checkpoints one model file per epoch into
/// `checkpoint_dir` when given.
pub fn train(
    data: &Dataset,
    cfg: &TrainConfig,
    model: &mut Model,
    checkpoint_dir: Option<&Path>,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if data.n_speakers != model.config.n_speakers {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} speakers, model expects {}",
            data.n_speakers, model.config.n_speakers
        )));
    }
    let mut state = AdamState::new(model.n_params());
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = make_batches(data, cfg, epoch)?;
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut total = 0usize;
        for batch in &batches {
            let mut grad_sum = model.zeros_like();
            for chunk in batch {
                let cache = network::forward(&chunk.feats, &chunk.cond, model)?;
                loss_sum += cross_entropy(&cache.logits, chunk.speaker)?;
                let probs = softmax(&cache.logits);
                let pred = probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                if pred == chunk.speaker {
                    correct += 1;
                }
                total += 1;
                let grads = network::backward(&chunk.feats, &cache, chunk.speaker, model)?;
                grad_sum.add_scaled(&grads, 1.0);
            }
            let scale = 1.0 / batch.len() as f64;
            let mut params = flatten(model);
            let mut grads_flat = flatten(&grad_sum);
            for g in &mut grads_flat {
                *g *= scale;
            }
            adam_step(&mut params, &grads_flat, &mut state, cfg)?;
            unflatten(model, &params);
        }
        let log = EpochLog {
            epoch,
            mean_loss: loss_sum / total as f64,
            train_accuracy: correct as f64 / total as f64,
        };
        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            network::io::save_model(dir.join(format!("epoch_{epoch:03}.spm")), model)?;
        }
        logs.push(log);
    }
    Ok(logs)
}

/// Writes a dataset tree: one SPF1 feature archive and one SPF1
/// conditioning archive per utterance plus a `labels.txt` manifest with
/// `utterance_id speaker_id` lines.
pub fn save_dataset<P: AsRef<Path>>(dir: P, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for utt in &data.utterances {
        crate::archive::write_matrix(dir.join(format!("{}.feat", utt.id)), &utt.feats)?;
        crate::archive::write_vector(dir.join(format!("{}.cond", utt.id)), &utt.cond.values)?;
        manifest.push_str(&format!("{} {}\n", utt.id, utt.speaker));
    }
    std::fs::write(dir.join("labels.txt"), manifest)?;
    Ok(())
}

pub fn load_dataset<P: AsRef<Path>>(dir: P) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = std::fs::read_to_string(dir.join("labels.txt"))?;
    let mut utterances = Vec::new();
    let mut max_speaker = 0usize;
    for (lineno, raw) in manifest.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts
            .next()
            .ok_or_else(|| Error::Parse(format!("labels.txt line {}", lineno + 1)))?;
        let speaker: usize = parts
            .next()
            .ok_or_else(|| Error::Parse(format!("labels.txt line {}: missing speaker", lineno + 1)))?
            .parse()
            .map_err(|e| Error::Parse(format!("labels.txt line {}: {e}", lineno + 1)))?;
        let feats = crate::archive::read_matrix(dir.join(format!("{id}.feat")))?;
        let cond = ConditioningVector {
            values: crate::archive::read_vector(dir.join(format!("{id}.cond")))?,
        };
        if cond.len() != feats.nrows() {
            return Err(Error::LengthMismatch(cond.len(), feats.nrows()));
        }
        max_speaker = max_speaker.max(speaker);
        utterances.push(Utterance { id: id.to_string(), feats, cond, speaker });
    }
    if utterances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset { utterances, n_speakers: max_speaker + 1 })
}

/// Writes the per-epoch loss log as CSV.
pub fn write_loss_log<P: AsRef<Path>>(path: P, logs: &[EpochLog]) -> Result<()> {
    crate::archive::write_csv(
        path,
        "epoch,mean_loss,train_accuracy",
        logs.iter().map(|l| format!("{},{},{}", l.epoch, l.mean_loss, l.train_accuracy)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_model, ModelConfig};
    use crate::pooling::Variant;

    fn tiny_config(variant: Variant, n_speakers: usize) -> ModelConfig {
        ModelConfig {
            input_dim: 6,
            frame_dim: 8,
            l5_dim: 10,
            embed_dim: 8,
            attention_dim: 4,
            n_speakers,
            variant,
        }
    }

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            epochs: 3,
            chunk_len_frames: 20,
            seed: 42,
            ..TrainConfig::default()
        }
    }

    fn tiny_dataset(n_speakers: usize, frames: usize) -> Dataset {
        synth::synth_dataset_with_dim(n_speakers, 2, frames, 6, 123).unwrap()
    }

    #[test]
    fn uniform_logit_loss_is_ln_n() {
        let logits = Array1::zeros(10);
        let loss = cross_entropy(&logits, 3).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn large_margin_loss_vanishes() {
        let mut logits = Array1::zeros(5);
        logits[2] = 50.0;
        assert!(cross_entropy(&logits, 2).unwrap() < 1e-9);
    }

    #[test]
    fn cross_entropy_matches_naive_formula() {
        let logits = Array1::from_vec(vec![0.3f64, -1.2, 2.5, 0.0, -0.7]);
        let label = 1;
        let naive = -((logits[label].exp())
            / logits.iter().map(|z| z.exp()).sum::<f64>())
        .ln();
        assert!((cross_entropy(&logits, label).unwrap() - naive).abs() < 1e-10);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let cfg = TrainConfig::default();
        let mut params = vec![1.0, -2.0, 0.5];
        let grads = vec![0.0; 3];
        let mut state = AdamState::new(3);
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let cfg = TrainConfig::default();
        let mut params = vec![0.0, 0.0];
        let grads = vec![0.3, -4.0];
        let mut state = AdamState::new(2);
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        for (p, g) in params.iter().zip(&grads) {
            let expect = -cfg.learning_rate * g / (g.abs() + cfg.epsilon);
            assert!((p - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_split_call_equivalence() {
        let cfg = TrainConfig::default();
        let grads = vec![0.5, -0.2, 1.0, 0.1];
        let mut joint = vec![1.0, 2.0, 3.0, 4.0];
        let mut js = AdamState::new(4);
        adam_step(&mut joint, &grads, &mut js, &cfg).unwrap();

        let mut a = vec![1.0, 2.0];
        let mut b = vec![3.0, 4.0];
        let mut sa = AdamState::new(2);
        let mut sb = AdamState::new(2);
        adam_step(&mut a, &grads[..2], &mut sa, &cfg).unwrap();
        adam_step(&mut b, &grads[2..], &mut sb, &cfg).unwrap();
        for (x, y) in joint.iter().zip(a.iter().chain(b.iter())) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn config_file_round_trip_and_unknown_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.cfg");
        std::fs::write(
            &path,
            "# training config\nbatch_size = 16\nepochs = 5\nlearning_rate = 0.01\nseed = 9\n",
        )
        .unwrap();
        let cfg = TrainConfig::from_file(&path).unwrap();
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.seed, 9);
        assert!((cfg.learning_rate - 0.01).abs() < 1e-15);

        std::fs::write(&path, "bogus_key = 3\n").unwrap();
        assert!(matches!(TrainConfig::from_file(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn single_chunk_when_exact_length() {
        let mut data = tiny_dataset(2, 20);
        data.utterances.truncate(1);
        let cfg = tiny_train_cfg();
        let batches = make_batches(&data, &cfg, 0).unwrap();
        let total: usize = batches.iter().map(|b| b.len()).sum();
        assert_eq!(total, 1);
        assert_eq!(batches[0][0].feats.nrows(), 20);
    }

    #[test]
    fn batches_deterministic_per_seed_epoch() {
        let data = tiny_dataset(3, 60);
        let cfg = tiny_train_cfg();
        let a = make_batches(&data, &cfg, 2).unwrap();
        let b = make_batches(&data, &cfg, 2).unwrap();
        assert_eq!(a.len(), b.len());
        for (ba, bb) in a.iter().zip(&b) {
            for (ca, cb) in ba.iter().zip(bb) {
                assert_eq!(ca.feats, cb.feats);
                assert_eq!(ca.speaker, cb.speaker);
            }
        }
        let c = make_batches(&data, &cfg, 3).unwrap();
        let same = a.iter().flatten().zip(c.iter().flatten()).all(|(x, y)| x.feats == y.feats);
        assert!(!same);
    }

    #[test]
    fn chunk_conditioning_slices_match_features() {
        let data = tiny_dataset(2, 60);
        let cfg = tiny_train_cfg();
        for batch in make_batches(&data, &cfg, 0).unwrap() {
            for chunk in batch {
                assert_eq!(chunk.cond.len(), chunk.feats.nrows());
                // the slice must appear verbatim in some source utterance
                let found = data.utterances.iter().any(|u| {
                    (0..=u.feats.nrows() - chunk.feats.nrows()).any(|off| {
                        u.cond.values[off..off + chunk.cond.len()] == chunk.cond.values[..]
                            && u.feats.slice(ndarray::s![off..off + chunk.feats.nrows(), ..])
                                == chunk.feats
                    })
                });
                assert!(found);
            }
        }
    }

    #[test]
    fn zero_lr_leaves_model_unchanged() {
        let data = tiny_dataset(2, 40);
        let mut cfg = tiny_train_cfg();
        cfg.learning_rate = 0.0;
        cfg.epochs = 2;
        let mut model = init_model(tiny_config(Variant::None, 2), 7).unwrap();
        let before = flatten(&model);
        train(&data, &cfg, &mut model, None).unwrap();
        assert_eq!(flatten(&model), before);
    }

    #[test]
    fn initial_loss_near_ln_speakers() {
        let n = 4;
        let data = tiny_dataset(n, 40);
        let mut cfg = tiny_train_cfg();
        cfg.epochs = 1;
        cfg.learning_rate = 0.0; // measure loss at initialization
        let mut model = init_model(tiny_config(Variant::None, n), 3).unwrap();
        let logs = train(&data, &cfg, &mut model, None).unwrap();
        let expect = (n as f64).ln();
        assert!(
            (logs[0].mean_loss - expect).abs() / expect < 0.10,
            "mean loss {} vs ln({n}) = {expect}",
            logs[0].mean_loss
        );
    }

    #[test]
    fn one_small_step_decreases_fixed_batch_loss() {
        let data = tiny_dataset(2, 20);
        let mut cfg = tiny_train_cfg();
        cfg.learning_rate = 1e-4;
        cfg.batch_size = data.utterances.len();
        cfg.epochs = 1;
        let mut model = init_model(tiny_config(Variant::Gate, 2), 11).unwrap();

        let batch = &make_batches(&data, &cfg, 0).unwrap()[0];
        let loss_of = |m: &Model| -> f64 {
            batch
                .iter()
                .map(|ch| {
                    let cache = network::forward(&ch.feats, &ch.cond, m).unwrap();
                    cross_entropy(&cache.logits, ch.speaker).unwrap()
                })
                .sum::<f64>()
                / batch.len() as f64
        };
        let before = loss_of(&model);
        train(&data, &cfg, &mut model, None).unwrap();
        let after = loss_of(&model);
        assert!(after < before, "loss {before} -> {after}");
    }

    #[test]
    fn training_is_deterministic_end_to_end() {
        let data = tiny_dataset(2, 40);
        let cfg = tiny_train_cfg();
        let mut m1 = init_model(tiny_config(Variant::CombinedA, 2), 5).unwrap();
        let mut m2 = init_model(tiny_config(Variant::CombinedA, 2), 5).unwrap();
        let l1 = train(&data, &cfg, &mut m1, None).unwrap();
        let l2 = train(&data, &cfg, &mut m2, None).unwrap();
        for (a, b) in l1.iter().zip(&l2) {
            assert_eq!(a.mean_loss.to_bits(), b.mean_loss.to_bits());
        }
        assert_eq!(flatten(&m1), flatten(&m2));
    }

    #[test]
    fn two_disjoint_speakers_learnable() {
        let data = tiny_dataset(2, 60);
        let mut cfg = tiny_train_cfg();
        cfg.epochs = 20;
        cfg.learning_rate = 3e-3;
        let mut model = init_model(tiny_config(Variant::None, 2), 1).unwrap();
        let logs = train(&data, &cfg, &mut model, None).unwrap();
        let final_acc = logs.last().unwrap().train_accuracy;
        assert!(final_acc > 0.95, "final training accuracy {final_acc}");
    }
}

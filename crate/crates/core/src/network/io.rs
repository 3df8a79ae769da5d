//! "SPM1" model file: magic, format version, config block, then every
//! parameter tensor as little-endian float32 in declaration order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pooling::Variant;

use super::{Model, ModelConfig, CONTEXTS};

pub const MAGIC: &[u8; 4] = b"SPM1";
pub const FORMAT_VERSION: u32 = 1;

fn variant_tag(v: Variant) -> u32 {
    match v {
        Variant::None => 0,
        Variant::Concat => 1,
        Variant::Gate => 2,
        Variant::Affine => 3,
        Variant::CombinedA => 4,
        Variant::CombinedB => 5,
        Variant::VfrWeights => 6,
    }
}

fn variant_from_tag(tag: u32) -> Result<Variant> {
    Ok(match tag {
        0 => Variant::None,
        1 => Variant::Concat,
        2 => Variant::Gate,
        3 => Variant::Affine,
        4 => Variant::CombinedA,
        5 => Variant::CombinedB,
        6 => Variant::VfrWeights,
        other => return Err(Error::MalformedHeader(format!("unknown variant tag {other}"))),
    })
}

pub fn save_model<P: AsRef<Path>>(path: P, model: &Model) -> Result<()> {
    let cfg = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for dim in [
        cfg.input_dim,
        cfg.frame_dim,
        cfg.l5_dim,
        cfg.embed_dim,
        cfg.attention_dim,
        cfg.n_speakers,
    ] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&variant_tag(cfg.variant).to_le_bytes());
    out.extend_from_slice(&model.seed.to_le_bytes());
    for offsets in CONTEXTS {
        out.extend_from_slice(&(offsets.len() as u32).to_le_bytes());
        for &o in offsets {
            out.extend_from_slice(&(o as i32).to_le_bytes());
        }
    }
    for tensor in model.tensor_views() {
        for &v in tensor.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<Model> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::MalformedHeader("truncated model file".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let read_u32 = |pos: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
    };

    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::MalformedHeader("not an SPM1 model file".into()));
    }
    let version = read_u32(&mut pos)?;
    if version != FORMAT_VERSION {
        return Err(Error::MalformedHeader(format!("unsupported format version {version}")));
    }
    let input_dim = read_u32(&mut pos)? as usize;
    let frame_dim = read_u32(&mut pos)? as usize;
    let l5_dim = read_u32(&mut pos)? as usize;
    let embed_dim = read_u32(&mut pos)? as usize;
    let attention_dim = read_u32(&mut pos)? as usize;
    let n_speakers = read_u32(&mut pos)? as usize;
    let variant = variant_from_tag(read_u32(&mut pos)?)?;
    let seed = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    for offsets in CONTEXTS {
        let n = read_u32(&mut pos)? as usize;
        if n != offsets.len() {
            return Err(Error::MalformedHeader("context layout mismatch".into()));
        }
        for &o in offsets {
            let got = i32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
            if got as i64 != o {
                return Err(Error::MalformedHeader("context offsets mismatch".into()));
            }
        }
    }

    let config = ModelConfig {
        input_dim,
        frame_dim,
        l5_dim,
        embed_dim,
        attention_dim,
        n_speakers,
        variant,
    };
    let mut model = Model::zeros(config)?;
    model.seed = seed;
    let expected: usize = model.n_params();
    let payload = &bytes[pos..];
    if payload.len() != expected * 4 {
        return Err(Error::MalformedHeader(format!(
            "model payload is {} bytes, expected {}",
            payload.len(),
            expected * 4
        )));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64);
    for mut tensor in model.tensor_views_mut() {
        for slot in tensor.iter_mut() {
            *slot = values.next().unwrap();
        }
    }
    Ok(model)
}

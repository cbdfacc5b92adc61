//! Versioned binary checkpoint container.
//!
//! Layout: magic, little-endian `u32` version, `u64` header length, JSON
//! header, then the parameter blobs as little-endian `f64` in header order,
//! then a SHA-256 digest of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Architecture, TranslatorConfig, TranslatorModel};
use crate::error::{Error, Result};
use crate::nn::Adam;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CIDMADCK";

#[derive(Serialize, Deserialize)]
struct Header {
    config: TranslatorConfig,
    arch: Architecture,
    epoch_trained: usize,
    g_adam_step: u64,
    d_adam_step: u64,
    blobs: Vec<(String, usize)>,
}

fn blobs(m: &TranslatorModel) -> Vec<(&'static str, &[f64])> {
    vec![
        ("generator_params", &m.generator_params),
        ("generator_buffers", &m.generator_buffers),
        ("discriminator_params", &m.discriminator_params),
        ("discriminator_buffers", &m.discriminator_buffers),
        ("g_adam_m", &m.g_adam.m),
        ("g_adam_v", &m.g_adam.v),
        ("d_adam_m", &m.d_adam.m),
        ("d_adam_v", &m.d_adam.v),
    ]
}

pub fn to_bytes(model: &TranslatorModel) -> Vec<u8> {
    let blobs = blobs(model);
    let header = Header {
        config: model.config.clone(),
        arch: model.arch,
        epoch_trained: model.epoch_trained,
        g_adam_step: model.g_adam.step,
        d_adam_step: model.d_adam.step,
        blobs: blobs.iter().map(|(n, b)| (n.to_string(), b.len())).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, b) in &blobs {
        for v in b.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<TranslatorModel> {
    let corrupt = |d: &str| Error::Corrupt {
        path: path.to_path_buf(),
        detail: d.to_string(),
    };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 32 + 20 {
        return Err(corrupt("truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let json = body.get(20..20 + hlen).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(&e.to_string()))?;
    let mut rest = &body[20 + hlen..];
    let mut take = |len: usize| -> Result<Vec<f64>> {
        if rest.len() < len * 8 {
            return Err(corrupt("truncated blob"));
        }
        let (head, tail) = rest.split_at(len * 8);
        rest = tail;
        Ok(head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    };
    let mut vals = Vec::new();
    for (_, len) in &header.blobs {
        vals.push(take(*len)?);
    }
    if !rest.is_empty() || vals.len() != 8 {
        return Err(corrupt("unexpected blob layout"));
    }
    let mut it = vals.into_iter();
    let mut next = || it.next().unwrap();
    let (gp, gb, dp, db) = (next(), next(), next(), next());
    let cfg = &header.config;
    let mut g_adam = Adam::new(gp.len(), cfg.learning_rate, cfg.adam_beta1);
    let mut d_adam = Adam::new(dp.len(), cfg.learning_rate, cfg.adam_beta1);
    g_adam.m = next();
    g_adam.v = next();
    d_adam.m = next();
    d_adam.v = next();
    g_adam.step = header.g_adam_step;
    d_adam.step = header.d_adam_step;
    let model = TranslatorModel {
        config: header.config,
        arch: header.arch,
        generator_params: gp,
        generator_buffers: gb,
        discriminator_params: dp,
        discriminator_buffers: db,
        g_adam,
        d_adam,
        epoch_trained: header.epoch_trained,
    };
    let g = model.generator();
    let d = model.discriminator();
    if g.n_params != model.generator_params.len()
        || g.n_buffers != model.generator_buffers.len()
        || d.n_params != model.discriminator_params.len()
        || d.n_buffers != model.discriminator_buffers.len()
        || model.g_adam.m.len() != g.n_params
        || model.d_adam.m.len() != d.n_params
    {
        return Err(corrupt("parameter count disagrees with architecture"));
    }
    Ok(model)
}

pub fn save(model: &TranslatorModel, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TranslatorModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageShape;
    use crate::translator::tests::{random_image, tiny_config};

    fn model() -> TranslatorModel {
        TranslatorModel::init(&tiny_config(), ImageShape::new(8, 8, 3)).unwrap()
    }

    #[test]
    fn round_trip_preserves_translation() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&m, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, m);
        let x = random_image(m.image_shape(), 2);
        assert_eq!(back.translate(&x, 3).unwrap(), m.translate(&x, 3).unwrap());
    }

    #[test]
    fn wrong_version_is_reported() {
        let mut bytes = to_bytes(&model());
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        match from_bytes(&bytes, Path::new("x")).unwrap_err() {
            Error::Version { found, expected } => assert_eq!((found, expected), (7, CHECKPOINT_VERSION)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn flipped_byte_is_corruption() {
        let mut bytes = to_bytes(&model());
        let i = bytes.len() / 2;
        bytes[i] ^= 1;
        assert_eq!(from_bytes(&bytes, Path::new("x")).unwrap_err().kind(), "corrupt");
        assert_eq!(from_bytes(b"garbage", Path::new("x")).unwrap_err().kind(), "corrupt");
    }
}

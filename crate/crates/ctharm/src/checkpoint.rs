//! Versioned binary checkpoints for the codec and the denoiser.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "CTCK" version kind meta_len meta_json n_tensors
//!   { name_len name ndim dims... f32 values... } * n_tensors
//! sha256(all preceding bytes)
//! ```
//!
//! `meta_json` echoes the model config and its training history. Values are
//! stored as `f32`, so a model reloaded from disk differs from the one that
//! was saved; the pipeline always continues from the reloaded copy.

use std::fs;
use std::path::Path;

use ctharm_core::codec::{CodecConfig, CodecModel};
use ctharm_core::diffusion::{DenoiserConfig, DenoiserModel, DiffusionConfig, LatentScaler};
use ctharm_core::nn::{ParamSet, Tensor};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CTCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Codec = 1,
    Denoiser = 2,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Codec => "codec",
            Kind::Denoiser => "denoiser",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecMeta {
    pub config: CodecConfig,
    pub loss_history: Vec<f64>,
    pub initial_loss: Option<f64>,
    pub lipschitz_per_hu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserMeta {
    pub config: DenoiserConfig,
    pub diffusion: DiffusionConfig,
    pub scaler: LatentScaler,
    pub loss_history: Vec<f64>,
    /// Parameter checksum of the frozen codec the denoiser was trained on.
    pub codec_checksum: String,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(kind: Kind, meta: &impl Serialize, params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, kind as usize);
    let json = serde_json::to_vec(meta).expect("checkpoint metadata serializes");
    put_u32(&mut out, json.len());
    out.extend_from_slice(&json);
    put_u32(&mut out, params.tensors.len());
    for t in &params.tensors {
        put_u32(&mut out, t.name.len());
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.shape.len());
        for &d in &t.shape {
            put_u32(&mut out, d);
        }
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(self.path, "truncated checkpoint"));
        };
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

/// Parses a checkpoint of the expected kind, verifying its checksum.
pub fn decode<M: DeserializeOwned>(path: &Path, bytes: &[u8], kind: Kind) -> Result<(M, ParamSet)> {
    if bytes.len() < 4 + 32 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not a CTCK checkpoint"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Integrity(format!(
            "{}: content checksum mismatch (file corrupted or modified)",
            path.display()
        )));
    }
    let mut r = Reader { path, bytes: body, at: 4 };
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let found = r.u32()?;
    if found != kind as usize {
        return Err(Error::Validation(format!(
            "{}: expected a {} checkpoint, found kind {found}",
            path.display(),
            kind.name()
        )));
    }
    let meta_len = r.u32()?;
    let meta: M = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::format(path, format!("bad metadata: {e}")))?;
    let n = r.u32()?;
    let mut params = ParamSet::default();
    for _ in 0..n {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = r
            .take(4 * len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        params.tensors.push(Tensor { name, shape, data });
    }
    if r.at != body.len() {
        return Err(Error::format(path, "trailing bytes after the last tensor"));
    }
    Ok((meta, params))
}

fn write(path: &Path, bytes: &[u8]) -> Result<String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(bytes))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.is_file() {
        return Err(Error::Validation(format!("checkpoint {} does not exist", path.display())));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Saves the codec; returns the SHA-256 of the written file.
pub fn save_codec(path: &Path, model: &CodecModel) -> Result<String> {
    let meta = CodecMeta {
        config: model.config.clone(),
        loss_history: model.loss_history.clone(),
        initial_loss: model.initial_loss,
        lipschitz_per_hu: model.lipschitz_per_hu,
    };
    write(path, &encode(Kind::Codec, &meta, model.params()))
}

pub fn load_codec(path: &Path) -> Result<CodecModel> {
    let (meta, params): (CodecMeta, _) = decode(path, &read(path)?, Kind::Codec)?;
    let mut model = CodecModel::from_parts(&meta.config, params)?;
    model.loss_history = meta.loss_history;
    model.initial_loss = meta.initial_loss;
    model.lipschitz_per_hu = meta.lipschitz_per_hu;
    Ok(model)
}

pub fn save_denoiser(
    path: &Path,
    model: &DenoiserModel,
    diffusion: &DiffusionConfig,
    codec_checksum: &[u8; 32],
) -> Result<String> {
    let meta = DenoiserMeta {
        config: model.config.clone(),
        diffusion: diffusion.clone(),
        scaler: model.scaler.clone(),
        loss_history: model.loss_history.clone(),
        codec_checksum: hex(codec_checksum),
    };
    write(path, &encode(Kind::Denoiser, &meta, model.params()))
}

pub fn load_denoiser(path: &Path) -> Result<(DenoiserModel, DenoiserMeta)> {
    let (meta, params): (DenoiserMeta, _) = decode(path, &read(path)?, Kind::Denoiser)?;
    let mut model = DenoiserModel::from_parts(&meta.config, params, meta.scaler.clone())?;
    model.loss_history = meta.loss_history.clone();
    Ok((model, meta))
}

//! Binary checkpoint container.
//!
//! Layout, all integers unsigned 32-bit little-endian unless noted:
//!
//! ```text
//! "PFIDMDL1"                      8 bytes
//! version                         u32 (= 1)
//! n_layers d_model n_heads d_ff vocab_size max_seq
//! seed                            u64
//! role                            u32 (0 full, 1 client head+tail, 2 server middle)
//! split_k split_n                 u32, u32 (0, 0 for a full model)
//! tensor_count                    u32
//! per tensor: len u32, then len × binary32 LE
//! ```
//!
//! Tensors appear in [`TransformerModel::named_tensors`] order, restricted to
//! the ones the role owns.

use super::{ModelConfig, ModelError, TransformerModel};

pub const MODEL_MAGIC: &[u8; 8] = b"PFIDMDL1";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointRole {
    Full,
    Client,
    Server,
}

impl CheckpointRole {
    fn tag(self) -> u32 {
        match self {
            Self::Full => 0,
            Self::Client => 1,
            Self::Server => 2,
        }
    }

    fn from_tag(tag: u32) -> Result<Self, ModelError> {
        match tag {
            0 => Ok(Self::Full),
            1 => Ok(Self::Client),
            2 => Ok(Self::Server),
            t => Err(ModelError::Checkpoint(format!("unknown role tag {t}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub role: CheckpointRole,
    pub split: (usize, usize),
}

/// Which canonical tensors a role stores.
pub(crate) fn owned_tensors(
    config: &ModelConfig,
    role: CheckpointRole,
    split: (usize, usize),
) -> Vec<bool> {
    let per_layer = 10;
    let total = 2 + config.n_layers * per_layer + 2;
    (0..total)
        .map(|i| {
            let layer = (i >= 2 && i < total - 2).then(|| (i - 2) / per_layer);
            match (role, layer) {
                (CheckpointRole::Full, _) => true,
                (CheckpointRole::Client, None) => true,
                (CheckpointRole::Client, Some(l)) => l < split.0 || l >= split.1,
                (CheckpointRole::Server, None) => false,
                (CheckpointRole::Server, Some(l)) => l >= split.0 && l < split.1,
            }
        })
        .collect()
}

/// Serializes the tensors `role` owns.
pub fn write_checkpoint(
    model: &TransformerModel,
    role: CheckpointRole,
    split: (usize, usize),
) -> Vec<u8> {
    let cfg = &model.config;
    let owned = owned_tensors(cfg, role, split);
    let tensors: Vec<&[f64]> = model
        .named_tensors()
        .into_iter()
        .zip(&owned)
        .filter(|(_, &keep)| keep)
        .map(|((_, t), _)| t)
        .collect();

    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    put(&mut out, MODEL_VERSION as usize);
    for v in [
        cfg.n_layers,
        cfg.d_model,
        cfg.n_heads,
        cfg.d_ff,
        cfg.vocab_size,
        cfg.max_seq,
    ] {
        put(&mut out, v);
    }
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    put(&mut out, role.tag() as usize);
    put(&mut out, split.0);
    put(&mut out, split.1);
    put(&mut out, tensors.len());
    for t in tensors {
        put(&mut out, t.len());
        for &x in t {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_model(model: &TransformerModel) -> Vec<u8> {
    write_checkpoint(model, CheckpointRole::Full, (0, 0))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelError> {
        if self.bytes.len() - self.pos < n {
            return Err(ModelError::Checkpoint(format!(
                "truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

/// Parses a checkpoint. Tensors the role does not own are left at zero.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, TransformerModel), ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MODEL_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION as usize {
        return Err(ModelError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()?;
    }
    let seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let config = ModelConfig {
        n_layers: dims[0],
        d_model: dims[1],
        n_heads: dims[2],
        d_ff: dims[3],
        vocab_size: dims[4],
        max_seq: dims[5],
        seed,
    };
    config.validate()?;
    let role = CheckpointRole::from_tag(r.u32()? as u32)?;
    let split = (r.u32()?, r.u32()?);
    if role != CheckpointRole::Full
        && !(0 < split.0 && split.0 < split.1 && split.1 < config.n_layers)
    {
        return Err(ModelError::Checkpoint(format!(
            "invalid split ({}, {}) for {} layers",
            split.0, split.1, config.n_layers
        )));
    }
    let count = r.u32()?;
    let owned = owned_tensors(&config, role, split);
    if count != owned.iter().filter(|&&o| o).count() {
        return Err(ModelError::Checkpoint(format!(
            "unexpected tensor count {count}"
        )));
    }

    let mut model = TransformerModel::init(config)?.zeros_like();
    for (slot, keep) in model.tensors_mut().into_iter().zip(owned) {
        if !keep {
            continue;
        }
        let len = r.u32()?;
        if len != slot.len() {
            return Err(ModelError::Checkpoint(format!(
                "tensor length {len}, expected {}",
                slot.len()
            )));
        }
        let raw = r.take(4 * len)?;
        for (x, chunk) in slot.iter_mut().zip(raw.chunks_exact(4)) {
            *x = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Checkpoint("trailing bytes".into()));
    }
    if model
        .named_tensors()
        .iter()
        .any(|(_, t)| t.iter().any(|x| !x.is_finite()))
    {
        return Err(ModelError::NonFinite);
    }
    Ok((
        CheckpointHeader {
            config,
            role,
            split,
        },
        model,
    ))
}

pub fn load_model(bytes: &[u8]) -> Result<TransformerModel, ModelError> {
    let (header, model) = read_checkpoint(bytes)?;
    if header.role != CheckpointRole::Full {
        return Err(ModelError::Checkpoint(format!(
            "expected a full model, found {:?} shard",
            header.role
        )));
    }
    Ok(model)
}

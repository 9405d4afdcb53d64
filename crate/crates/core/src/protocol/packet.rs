//! Wire format for hidden-state packets.
//!
//! ```text
//! offset  size  field
//!  0      8     magic "PFIDPKT1"
//!  8      4     version (1)
//! 12      4     role: 1 client→server, 2 server→client, 3 error
//! 16      4     d
//! 20      4     n
//! 24      4     k
//! 28      4     step
//! 32      ...   payload
//! ```
//!
//! For `k ≥ 1` the payload is `U (d×k)`, `s (k)`, `V (n×k)` as binary32
//! little-endian, row-major: `4·k·(d+n+1)` bytes. `k = 0` marks an
//! uncompressed state, `H (d×n)` as binary64, used only when truncation is
//! bypassed. Error packets carry an error code in `d` and a UTF-8 message of
//! `n` bytes.

use thiserror::Error;

use crate::linalg::{LinalgError, Matrix, TruncatedFactors};

pub const PACKET_MAGIC: &[u8; 8] = b"PFIDPKT1";
pub const PACKET_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PacketRole {
    ClientToServer,
    ServerToClient,
    Error,
}

impl PacketRole {
    pub fn tag(self) -> u32 {
        match self {
            Self::ClientToServer => 1,
            Self::ServerToClient => 2,
            Self::Error => 3,
        }
    }

    fn from_tag(tag: u32) -> Result<Self, PacketError> {
        match tag {
            1 => Ok(Self::ClientToServer),
            2 => Ok(Self::ServerToClient),
            3 => Ok(Self::Error),
            t => Err(PacketError::UnknownRole(t)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PacketError {
    #[error("packet of {0} bytes is shorter than the {HEADER_LEN}-byte header")]
    TooShort(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported packet version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown role tag {0}")]
    UnknownRole(u32),
    #[error("rank k={k} inconsistent with a {d}x{n} state")]
    InconsistentRank { k: u32, d: u32, n: u32 },
    #[error("payload is {actual} bytes, header implies {expected}")]
    LengthMismatch { expected: u64, actual: u64 },
    #[error("invalid factors: {0}")]
    InvalidFactors(LinalgError),
    #[error("error message is not UTF-8")]
    BadMessage,
}

/// Decoded packet body.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Factors(TruncatedFactors),
    Dense(Matrix),
    Error { code: u32, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Packet {
    pub role: PacketRole,
    pub step: u32,
    pub payload: Payload,
}

impl Packet {
    /// `(d, n)` of the carried state; `None` for error packets.
    pub fn state_shape(&self) -> Option<(usize, usize)> {
        match &self.payload {
            Payload::Factors(f) => Some((f.orig_rows(), f.orig_cols())),
            Payload::Dense(h) => Some(h.shape()),
            Payload::Error { .. } => None,
        }
    }

    /// The hidden state the packet stands for.
    pub fn reconstruct(&self) -> Option<Matrix> {
        match &self.payload {
            Payload::Factors(f) => Some(f.reconstruct()),
            Payload::Dense(h) => Some(h.clone()),
            Payload::Error { .. } => None,
        }
    }

    /// Rank on the wire: `k` for factors, 0 for dense and error packets.
    pub fn rank(&self) -> usize {
        match &self.payload {
            Payload::Factors(f) => f.rank(),
            _ => 0,
        }
    }
}

/// Byte length of a factor packet.
pub fn packet_len(d: usize, n: usize, k: usize) -> usize {
    HEADER_LEN + 4 * k * (d + n + 1)
}

fn header(out: &mut Vec<u8>, role: PacketRole, d: usize, n: usize, k: usize, step: u32) {
    out.extend_from_slice(PACKET_MAGIC);
    for v in [
        PACKET_VERSION,
        role.tag(),
        d as u32,
        n as u32,
        k as u32,
        step,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_packet(f: &TruncatedFactors, role: PacketRole, step: u32) -> Vec<u8> {
    let (d, n, k) = (f.orig_rows(), f.orig_cols(), f.rank());
    let mut out = Vec::with_capacity(packet_len(d, n, k));
    header(&mut out, role, d, n, k, step);
    let values = f
        .u()
        .as_slice()
        .iter()
        .chain(f.singular_values())
        .chain(f.v().as_slice());
    for &x in values {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn encode_dense(h: &Matrix, role: PacketRole, step: u32) -> Vec<u8> {
    let (d, n) = h.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * d * n);
    header(&mut out, role, d, n, 0, step);
    for &x in h.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn encode_error(code: u32, message: &str, step: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + message.len());
    header(
        &mut out,
        PacketRole::Error,
        code as usize,
        message.len(),
        0,
        step,
    );
    out.extend_from_slice(message.as_bytes());
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode_packet(bytes: &[u8]) -> Result<Packet, PacketError> {
    if bytes.len() < HEADER_LEN {
        return Err(PacketError::TooShort(bytes.len()));
    }
    if &bytes[..8] != PACKET_MAGIC {
        return Err(PacketError::BadMagic);
    }
    let version = u32_at(bytes, 8);
    if version != PACKET_VERSION {
        return Err(PacketError::UnsupportedVersion(version));
    }
    let role = PacketRole::from_tag(u32_at(bytes, 12))?;
    let (d, n, k, step) = (
        u32_at(bytes, 16),
        u32_at(bytes, 20),
        u32_at(bytes, 24),
        u32_at(bytes, 28),
    );
    let body = &bytes[HEADER_LEN..];
    let actual = body.len() as u64;
    let check_len = |expected: u64| {
        if expected == actual {
            Ok(())
        } else {
            Err(PacketError::LengthMismatch { expected, actual })
        }
    };

    if role == PacketRole::Error {
        check_len(n as u64)?;
        let message = String::from_utf8(body.to_vec()).map_err(|_| PacketError::BadMessage)?;
        return Ok(Packet {
            role,
            step,
            payload: Payload::Error { code: d, message },
        });
    }

    if d == 0 || n == 0 || k > d.min(n) {
        return Err(PacketError::InconsistentRank { k, d, n });
    }
    let (du, nu, ku) = (d as usize, n as usize, k as usize);
    if k == 0 {
        check_len(8 * d as u64 * n as u64)?;
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let h = Matrix::new(du, nu, data).map_err(PacketError::InvalidFactors)?;
        return Ok(Packet {
            role,
            step,
            payload: Payload::Dense(h),
        });
    }

    check_len(4 * k as u64 * (d as u64 + n as u64 + 1))?;
    let mut floats = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let mut take = |count: usize| floats.by_ref().take(count).collect::<Vec<f64>>();
    let u = Matrix::new(du, ku, take(du * ku)).map_err(PacketError::InvalidFactors)?;
    let s = take(ku);
    let v = Matrix::new(nu, ku, take(nu * ku)).map_err(PacketError::InvalidFactors)?;
    let f = TruncatedFactors::from_parts(u, s, v).map_err(PacketError::InvalidFactors)?;
    Ok(Packet {
        role,
        step,
        payload: Payload::Factors(f),
    })
}

//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "XQNCKPT\0"
//! version    u32      = 1
//! dtype      u8 len + ascii ("f32" | "f64")
//! config     u8 len + ascii config hash
//! episode    u64      training episodes completed
//! shape      8 x u32  n_slots, vehicle_features, n_actions, h1, h2, h_ego, h3, h4
//!            u8       recurrent kind (0 = lstm, 1 = dense)
//!            u8       shared encoders (0 | 1)
//! tensors    u32 count, then per tensor:
//!            u16 len + utf8 name, u32 rows, u32 cols, rows*cols scalars row-major
//! checksum   32 bytes SHA-256 of everything above
//! ```

use sha2::{Digest, Sha256};

use super::{NetworkShape, QNetError, QNetwork, RecurrentKind};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"XQNCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub episode: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub l2_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointInfo {
    pub version: u32,
    pub dtype: String,
    pub meta: CheckpointMeta,
    pub shape: NetworkShape,
    pub tensors: Vec<TensorInfo>,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode<T: Scalar>(net: &QNetwork<T>, meta: &CheckpointMeta) -> Vec<u8> {
    let mut out = Vec::with_capacity(net.params().len() * T::BYTES + 1024);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    push_str8(&mut out, T::DTYPE);
    push_str8(&mut out, &meta.config_hash);
    out.extend_from_slice(&meta.episode.to_le_bytes());
    let s = net.shape();
    for v in [s.n_slots, s.vehicle_features, s.n_actions, s.h1, s.h2, s.h_ego, s.h3, s.h4] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(match s.recurrent {
        RecurrentKind::Lstm => 0,
        RecurrentKind::Dense => 1,
    });
    out.push(u8::from(s.shared));
    let layout = net.layout();
    out.extend_from_slice(&(layout.tensors.len() as u32).to_le_bytes());
    for t in &layout.tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for &x in &net.params()[t.range()] {
            x.write_le(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn push_str8(out: &mut Vec<u8>, s: &str) {
    out.push(s.len() as u8);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], QNetError> {
        if self.pos + n > self.buf.len() {
            return Err(QNetError::Checkpoint("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, QNetError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, QNetError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, QNetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, QNetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str_n(&mut self, n: usize) -> Result<String, QNetError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| QNetError::Checkpoint("invalid utf-8 string".into()))
    }
}

struct RawTensor<'a> {
    name: String,
    rows: usize,
    cols: usize,
    data: &'a [u8],
}

struct Parsed<'a> {
    version: u32,
    dtype: String,
    meta: CheckpointMeta,
    shape: NetworkShape,
    tensors: Vec<RawTensor<'a>>,
}

fn parse(bytes: &[u8]) -> Result<Parsed<'_>, QNetError> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(QNetError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(QNetError::Checkpoint("checkpoint integrity check failed (checksum mismatch)".into()));
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        return Err(QNetError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let n = r.u8()? as usize;
    let dtype = r.str_n(n)?;
    let n = r.u8()? as usize;
    let config_hash = r.str_n(n)?;
    let episode = r.u64()?;
    let mut dims = [0usize; 8];
    for d in dims.iter_mut() {
        *d = r.u32()? as usize;
    }
    let recurrent = match r.u8()? {
        0 => RecurrentKind::Lstm,
        1 => RecurrentKind::Dense,
        k => return Err(QNetError::Checkpoint(format!("unknown recurrent kind {k}"))),
    };
    let shared = r.u8()? != 0;
    let shape = NetworkShape {
        n_slots: dims[0],
        vehicle_features: dims[1],
        n_actions: dims[2],
        h1: dims[3],
        h2: dims[4],
        h_ego: dims[5],
        h3: dims[6],
        h4: dims[7],
        recurrent,
        shared,
    };
    let width = match dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(QNetError::Checkpoint(format!("unknown dtype {other}"))),
    };
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = r.str_n(n)?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let data = r.take(rows * cols * width)?;
        tensors.push(RawTensor { name, rows, cols, data });
    }
    if r.pos != body.len() {
        return Err(QNetError::Checkpoint("trailing bytes after tensors".into()));
    }
    Ok(Parsed { version, dtype, meta: CheckpointMeta { config_hash, episode }, shape, tensors })
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(QNetwork<T>, CheckpointMeta), QNetError> {
    let parsed = parse(bytes)?;
    if parsed.dtype != T::DTYPE {
        return Err(QNetError::Checkpoint(format!(
            "checkpoint stores {} parameters, expected {}",
            parsed.dtype,
            T::DTYPE
        )));
    }
    let mut net = QNetwork::<T>::zeros(parsed.shape);
    let expected: Vec<_> = net.layout().tensors.iter().map(|t| (t.name.clone(), t.rows, t.cols)).collect();
    let found: Vec<_> = parsed.tensors.iter().map(|t| (t.name.clone(), t.rows, t.cols)).collect();
    if expected != found {
        return Err(QNetError::Checkpoint("tensor table does not match the declared shape".into()));
    }
    for t in &parsed.tensors {
        let dst = net.tensor_mut(&t.name).expect("name checked above");
        for (d, chunk) in dst.iter_mut().zip(t.data.chunks_exact(T::BYTES)) {
            *d = T::read_le(chunk);
        }
    }
    Ok((net, parsed.meta))
}

pub fn inspect(bytes: &[u8]) -> Result<CheckpointInfo, QNetError> {
    let parsed = parse(bytes)?;
    let width = if parsed.dtype == "f32" { 4 } else { 8 };
    let tensors = parsed
        .tensors
        .iter()
        .map(|t| {
            let sq: f64 = t
                .data
                .chunks_exact(width)
                .map(|c| if width == 4 { f32::read_le(c) as f64 } else { f64::read_le(c) })
                .map(|x| x * x)
                .sum();
            TensorInfo { name: t.name.clone(), rows: t.rows, cols: t.cols, l2_norm: sq.sqrt() }
        })
        .collect();
    Ok(CheckpointInfo {
        version: parsed.version,
        dtype: parsed.dtype,
        meta: parsed.meta,
        shape: parsed.shape,
        tensors,
        sha256: sha256_hex(bytes),
    })
}

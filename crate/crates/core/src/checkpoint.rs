//! Binary checkpoint format.
//!
//! ```text
//! magic "ADTNCKPT" | u32 version | u8 dtype | u64 seed
//! str model | u32 classes | shape input
//! u32 n_meta, then (str key, str value) pairs
//! u32 n_blocks, then blocks
//! 32-byte SHA-256 of everything before it
//! ```
//!
//! Integers are little-endian; `str` is a u32 byte length plus UTF-8 and
//! `shape` a u32 rank plus u64 dimensions. A block is `u8 kind | str name`
//! followed by either a dense tensor (`shape | payload`) or a compressed
//! weight (`shape | plan | ADTNs | residual`). Each ADTN carries its spec,
//! its gate wiring, the boundary vector and its tensors.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adtn::{Activation, Adtn, AdtnError, AdtnSpec, ChunkPlan, Column, CompressedWeight, CompressionPlan, GateSite, Segment};
use crate::nn::{build_model, ModelId, Network, NnError, WeightSource};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ADTNCKPT";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

const BLOCK_DENSE: u8 = 0;
const BLOCK_COMPRESSED: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    Version(u32),

    #[error("checkpoint holds {found} data but {expected} was requested")]
    DType { expected: DType, found: String },

    #[error("checksum mismatch: file is corrupted")]
    Checksum,

    #[error("checkpoint truncated at byte {at}: needed {needed} more")]
    Truncated { at: usize, needed: usize },

    #[error("malformed checkpoint: {0}")]
    Malformed(String),

    #[error("parameter {0} appears more than once")]
    Duplicate(String),

    #[error("parameter {0} does not belong to the model")]
    Unknown(String),

    #[error("parameter {0} is missing")]
    Missing(String),

    #[error(transparent)]
    Adtn(#[from] AdtnError),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T, E = CheckpointError> = std::result::Result<T, E>;

/// Fields stored ahead of the parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub version: u32,
    pub dtype: DType,
    pub seed: u64,
    pub model: ModelId,
    pub classes: usize,
    pub input_shape: Vec<usize>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub model: ModelId,
    pub seed: u64,
    pub classes: usize,
    /// Free-form key/value pairs such as recorded accuracies.
    pub metadata: BTreeMap<String, String>,
    pub network: Network<T>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: usize) {
        self.0.extend_from_slice(&u32::try_from(x).expect("count fits in u32").to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn shape(&mut self, shape: &[usize]) {
        self.u32(shape.len());
        for &d in shape {
            self.u64(d as u64);
        }
    }
    fn payload<T: Scalar>(&mut self, t: &Tensor<T>) {
        for &x in t.data() {
            x.write_le(&mut self.0);
        }
    }
    fn tensor<T: Scalar>(&mut self, t: &Tensor<T>) {
        self.shape(t.shape());
        self.payload(t);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated { at: self.pos, needed: n })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        let x = self.u64()?;
        usize::try_from(x).map_err(|_| CheckpointError::Malformed(format!("size {x} overflows")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Malformed("string is not UTF-8".into()))
    }
    fn shape(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32()?;
        if rank > 8 {
            return Err(CheckpointError::Malformed(format!("rank {rank}")));
        }
        (0..rank).map(|_| self.usize()).collect()
    }
    fn payload<T: Scalar>(&mut self, shape: Vec<usize>) -> Result<Tensor<T>> {
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = n
            .and_then(|n| n.checked_mul(T::DTYPE.size_of()))
            .ok_or_else(|| CheckpointError::Malformed(format!("shape {shape:?} overflows")))?;
        let raw = self.take(bytes)?;
        let data = raw.chunks_exact(T::DTYPE.size_of()).map(T::read_le).collect();
        Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
    fn tensor<T: Scalar>(&mut self) -> Result<Tensor<T>> {
        let shape = self.shape()?;
        self.payload(shape)
    }
}

fn write_adtn<T: Scalar>(w: &mut Writer, a: &Adtn<T>) {
    let s = a.spec();
    w.u32(s.q);
    w.u32(s.d);
    w.u32(s.m);
    w.u8(s.activation.tag());
    w.u32(a.wiring().len());
    for site in a.wiring() {
        w.u32(site.layer);
        w.u8(match site.column {
            Column::A => 0,
            Column::B => 1,
        });
        w.u32(site.top);
    }
    w.payload(a.boundary());
    for t in a.tensors() {
        w.payload(t);
    }
}

fn read_adtn<T: Scalar>(r: &mut Reader<'_>) -> Result<Adtn<T>> {
    let (q, d, m) = (r.u32()?, r.u32()?, r.u32()?);
    let tag = r.u8()?;
    let activation = Activation::from_tag(tag).ok_or_else(|| CheckpointError::Malformed(format!("activation tag {tag}")))?;
    let spec = AdtnSpec::new(q, d, m, activation);
    spec.validate()?;
    let n = r.u32()?;
    let wiring = (0..n)
        .map(|_| {
            let layer = r.u32()?;
            let column = match r.u8()? {
                0 => Column::A,
                1 => Column::B,
                c => return Err(CheckpointError::Malformed(format!("column tag {c}"))),
            };
            Ok(GateSite { layer, column, top: r.u32()? })
        })
        .collect::<Result<Vec<_>>>()?;
    if wiring != spec.wiring() {
        return Err(CheckpointError::Malformed(format!("gate wiring does not match spec q={q} m={m}")));
    }
    let boundary = r.payload(vec![d])?;
    let tensors = (0..n).map(|_| r.payload(vec![d; 4])).collect::<Result<Vec<_>>>()?;
    Ok(Adtn::from_parts(spec, tensors, boundary)?)
}

fn write_compressed<T: Scalar>(w: &mut Writer, c: &CompressedWeight<T>) {
    w.shape(c.shape());
    let plan = c.plan();
    w.u64(plan.total as u64);
    w.u32(plan.d);
    w.u32(plan.chunks.len());
    for ch in &plan.chunks {
        w.u64(ch.offset as u64);
        w.u32(ch.q);
        w.u64(ch.len as u64);
    }
    w.u64(plan.residual.offset as u64);
    w.u64(plan.residual.len as u64);
    for a in c.adtns() {
        write_adtn(w, a);
    }
    match c.residual() {
        Some(t) => {
            w.u8(1);
            w.tensor(t);
        }
        None => w.u8(0),
    }
}

fn read_compressed<T: Scalar>(r: &mut Reader<'_>) -> Result<CompressedWeight<T>> {
    let shape = r.shape()?;
    let total = r.usize()?;
    let d = r.u32()?;
    let n = r.u32()?;
    let chunks = (0..n)
        .map(|_| Ok(ChunkPlan { offset: r.usize()?, q: r.u32()?, len: r.usize()? }))
        .collect::<Result<Vec<_>>>()?;
    let residual = Segment { offset: r.usize()?, len: r.usize()? };
    let plan = CompressionPlan { total, d, chunks, residual };
    let adtns = (0..n).map(|_| read_adtn(r)).collect::<Result<Vec<_>>>()?;
    let residual = match r.u8()? {
        0 => None,
        1 => Some(r.tensor()?),
        t => return Err(CheckpointError::Malformed(format!("residual flag {t}"))),
    };
    Ok(CompressedWeight::new(shape, plan, adtns, residual)?)
}

/// Verifies the checksum and reads the header; returns it with the offset
/// of the block count.
fn parse_header(bytes: &[u8]) -> Result<(Header, usize)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + DIGEST_LEN {
        return Err(CheckpointError::Truncated { at: bytes.len(), needed: DIGEST_LEN });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Checksum);
    }
    let mut r = Reader { bytes: body, pos: MAGIC.len() };
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let tag = r.u8()?;
    let dtype = DType::from_tag(tag).ok_or_else(|| CheckpointError::Malformed(format!("dtype tag {tag}")))?;
    let seed = r.u64()?;
    let model = r.str()?.parse().map_err(CheckpointError::Malformed)?;
    let classes = r.u32()?;
    let input_shape = r.shape()?;
    let metadata = (0..r.u32()?).map(|_| Ok((r.str()?, r.str()?))).collect::<Result<_>>()?;
    Ok((Header { version, dtype, seed, model, classes, input_shape, metadata }, r.pos))
}

impl Header {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        parse_header(bytes).map(|(h, _)| h)
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(model: ModelId, seed: u64, classes: usize, network: Network<T>) -> Self {
        Checkpoint { model, seed, classes, metadata: BTreeMap::new(), network }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.u8(T::DTYPE.tag());
        w.u64(self.seed);
        w.str(&self.model.to_string());
        w.u32(self.classes);
        w.shape(self.network.input_shape());
        w.u32(self.metadata.len());
        for (k, v) in &self.metadata {
            w.str(k);
            w.str(v);
        }
        let layers = self.network.layers();
        let n_blocks: usize = layers.iter().map(|l| l.weight.is_some() as usize + l.bias.is_some() as usize).sum();
        w.u32(n_blocks);
        for layer in layers {
            match &layer.weight {
                Some(WeightSource::Dense(t)) => {
                    w.u8(BLOCK_DENSE);
                    w.str(&format!("{}.weight", layer.name));
                    w.tensor(t);
                }
                Some(WeightSource::Compressed(c)) => {
                    w.u8(BLOCK_COMPRESSED);
                    w.str(&format!("{}.weight", layer.name));
                    write_compressed(&mut w, c);
                }
                None => {}
            }
            if let Some(b) = &layer.bias {
                w.u8(BLOCK_DENSE);
                w.str(&format!("{}.bias", layer.name));
                w.tensor(b);
            }
        }
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        w.0
    }

    /// Parses and validates a checkpoint. The model is rebuilt from its id
    /// and every parameter must be supplied exactly once.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, pos) = parse_header(bytes)?;
        if header.dtype != T::DTYPE {
            return Err(CheckpointError::DType { expected: T::DTYPE, found: header.dtype.to_string() });
        }
        let mut r = Reader { bytes: &bytes[..bytes.len() - DIGEST_LEN], pos };
        let mut net: Network<T> = build_model(header.model, &header.input_shape, header.classes, 0)?;
        let mut expected: HashSet<String> = HashSet::new();
        for l in net.layers() {
            if l.weight.is_some() {
                expected.insert(format!("{}.weight", l.name));
            }
            if l.bias.is_some() {
                expected.insert(format!("{}.bias", l.name));
            }
        }
        let mut seen = HashSet::new();
        for _ in 0..r.u32()? {
            let kind = r.u8()?;
            let name = r.str()?;
            if !seen.insert(name.clone()) {
                return Err(CheckpointError::Duplicate(name));
            }
            if !expected.contains(&name) {
                return Err(CheckpointError::Unknown(name));
            }
            let (layer, slot) = name.rsplit_once('.').expect("expected names contain a dot");
            let index = net.layer_index(layer).expect("expected names belong to layers");
            match (kind, slot) {
                (BLOCK_DENSE, "weight") => net.set_weight(index, WeightSource::Dense(r.tensor()?))?,
                (BLOCK_COMPRESSED, "weight") => net.set_weight(index, WeightSource::Compressed(read_compressed(&mut r)?))?,
                (BLOCK_DENSE, "bias") => net.set_bias(index, r.tensor()?)?,
                _ => return Err(CheckpointError::Malformed(format!("block kind {kind} for {name}"))),
            }
        }
        if r.pos != r.bytes.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", r.bytes.len() - r.pos)));
        }
        if let Some(missing) = expected.difference(&seen).min() {
            return Err(CheckpointError::Missing(missing.clone()));
        }
        Ok(Checkpoint { model: header.model, seed: header.seed, classes: header.classes, metadata: header.metadata, network: net })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}

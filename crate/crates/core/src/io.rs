//! On-disk formats: bit/label streams, parameter checkpoints with JSON
//! sidecars, model manifests, link bundles and constellation dumps.
//!
//! Stream file: `b"TB"`, version `u8 = 1`, kind `u8`, payload length
//! `u32` LE, then one byte per item.
//!
//! Checkpoint: `b"THZCKPT\0"`, version `u32 = 1`, scalar width `u32`,
//! count `u64`, then the parameters as LE floats in the owner's flat order.
//!
//! Link bundle: `b"THZLINK1"`, then the matrices `H, F_RF, F_BB, W_RF,
//! W_BB, P_in` (each `rows u32, cols u32`, row-major `re, im` f64 LE pairs;
//! `P_in` is stored as an `L_t x 1` column), then the path list
//! (`count u32`, per path `gain re, gain im, aod, aoa` as f64).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{BeamformerSet, Channel, PathComponent};
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::scalar::Real;

fn format_err<X>(msg: impl Into<String>) -> Result<X> {
    Err(Error::Format(msg.into()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn le_bytes<T: Real>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * T::BYTES);
    for &v in values {
        v.write_le(&mut out);
    }
    out
}

/// SHA-256 of the little-endian parameter bytes.
pub fn param_checksum<T: Real>(params: &[T]) -> String {
    sha256_hex(&le_bytes(params))
}

/// SHA-256 over the entries of several matrices (shape-prefixed).
pub fn matrix_hash<T: Real>(mats: &[&ComplexMatrix<T>]) -> String {
    let mut h = Sha256::new();
    for m in mats {
        h.update((m.rows() as u64).to_le_bytes());
        h.update((m.cols() as u64).to_le_bytes());
        let flat: Vec<T> = m.as_slice().iter().flat_map(|z| [z.re, z.im]).collect();
        h.update(le_bytes(&flat));
    }
    hex(&h.finalize())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum StreamKind {
    Bits = 0,
    SymbolLabels = 1,
}

const STREAM_MAGIC: &[u8; 2] = b"TB";
const STREAM_VERSION: u8 = 1;

pub fn encode_stream(kind: StreamKind, items: &[u8]) -> Result<Vec<u8>> {
    let len = u32::try_from(items.len()).or_else(|_| format_err("stream longer than u32::MAX"))?;
    let limit = match kind {
        StreamKind::Bits => 1,
        StreamKind::SymbolLabels => 15,
    };
    if items.iter().any(|&b| b > limit) {
        return Err(Error::InvalidArgument(format!(
            "{kind:?} items must be at most {limit}"
        )));
    }
    let mut out = Vec::with_capacity(8 + items.len());
    out.extend_from_slice(STREAM_MAGIC);
    out.push(STREAM_VERSION);
    out.push(kind as u8);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(items);
    Ok(out)
}

pub fn decode_stream(bytes: &[u8]) -> Result<(StreamKind, Vec<u8>)> {
    if bytes.len() < 8 || &bytes[..2] != STREAM_MAGIC {
        return format_err("not a stream file");
    }
    if bytes[2] != STREAM_VERSION {
        return format_err(format!("unsupported stream version {}", bytes[2]));
    }
    let kind = match bytes[3] {
        0 => StreamKind::Bits,
        1 => StreamKind::SymbolLabels,
        k => return format_err(format!("unknown stream kind {k}")),
    };
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + len {
        return format_err(format!(
            "stream header says {len} items, file holds {}",
            bytes.len() - 8
        ));
    }
    Ok((kind, bytes[8..].to_vec()))
}

pub fn write_stream(path: &Path, kind: StreamKind, items: &[u8]) -> Result<()> {
    fs::write(path, encode_stream(kind, items)?)?;
    Ok(())
}

pub fn read_stream(path: &Path) -> Result<(StreamKind, Vec<u8>)> {
    decode_stream(&fs::read(path)?)
}

const CKPT_MAGIC: &[u8; 8] = b"THZCKPT\0";
const CKPT_VERSION: u32 = 1;

/// JSON sidecar written next to every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// Owner type, e.g. `stage1`, `tx_comp`, `rx_comp`, `ddnn`.
    pub kind: String,
    pub scalar_bytes: usize,
    pub param_count: usize,
    pub checksum: String,
    /// Named shapes describing the flat layout.
    pub shapes: BTreeMap<String, Vec<usize>>,
    /// Free-form training metadata.
    pub training: serde_json::Value,
}

impl CheckpointMeta {
    pub fn new<T: Real>(
        kind: &str,
        params: &[T],
        shapes: BTreeMap<String, Vec<usize>>,
        training: serde_json::Value,
    ) -> Self {
        Self {
            format_version: CKPT_VERSION,
            kind: kind.to_string(),
            scalar_bytes: T::BYTES,
            param_count: params.len(),
            checksum: param_checksum(params),
            shapes,
            training,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_checkpoint<T: Real>(params: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + params.len() * T::BYTES);
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    out.extend(le_bytes(params));
    out
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Vec<T>> {
    if bytes.len() < 24 || &bytes[..8] != CKPT_MAGIC {
        return format_err("not a checkpoint");
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CKPT_VERSION {
        return format_err(format!("unsupported checkpoint version {version}"));
    }
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if width != T::BYTES {
        return format_err(format!(
            "checkpoint stores {width}-byte scalars, reader expects {}",
            T::BYTES
        ));
    }
    let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let body = &bytes[24..];
    if body.len() != count * width {
        return format_err(format!(
            "checkpoint declares {count} values, holds {} bytes",
            body.len()
        ));
    }
    Ok(body.chunks_exact(width).map(T::read_le).collect())
}

/// Writes `path` and its `.json` sidecar.
pub fn save_checkpoint<T: Real>(path: &Path, params: &[T], meta: &CheckpointMeta) -> Result<()> {
    if meta.param_count != params.len() || meta.checksum != param_checksum(params) {
        return Err(Error::InvalidArgument(
            "sidecar does not describe these parameters".into(),
        ));
    }
    fs::write(path, encode_checkpoint(params))?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

/// Reads a checkpoint and verifies it against its sidecar.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(Vec<T>, CheckpointMeta)> {
    let params = decode_checkpoint::<T>(&fs::read(path)?)?;
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if meta.param_count != params.len() {
        return format_err("sidecar parameter count disagrees with checkpoint");
    }
    if meta.checksum != param_checksum(&params) {
        return format_err("checkpoint checksum mismatch");
    }
    Ok((params, meta))
}

/// Provenance record for a trained surrogate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub mode: String,
    pub n_h: usize,
    pub link_id: String,
    pub power_dbm: f64,
    pub dataset_hash: String,
    pub param_count: usize,
    pub checksum: String,
}

const LINK_MAGIC: &[u8; 8] = b"THZLINK1";

fn put_matrix<T: Real>(out: &mut Vec<u8>, m: &ComplexMatrix<T>) {
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for z in m.as_slice() {
        out.extend_from_slice(&z.re.as_f64().to_le_bytes());
        out.extend_from_slice(&z.im.as_f64().to_le_bytes());
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.b.len() {
            return format_err("link bundle truncated");
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix<T: Real>(&mut self) -> Result<ComplexMatrix<T>> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let re = self.f64()?;
            let im = self.f64()?;
            data.push(Complex::new(T::lit(re), T::lit(im)));
        }
        ComplexMatrix::new(rows, cols, data)
    }
}

pub fn encode_link_bundle<T: Real>(channel: &Channel<T>, bf: &BeamformerSet<T>) -> Vec<u8> {
    let mut out = LINK_MAGIC.to_vec();
    for m in [&channel.h, &bf.f_rf, &bf.f_bb, &bf.w_rf, &bf.w_bb] {
        put_matrix(&mut out, m);
    }
    put_matrix(
        &mut out,
        &ComplexMatrix::from_fn(bf.p_in.len(), 1, |i, _| Complex::new(bf.p_in[i], T::zero())),
    );
    out.extend_from_slice(&(channel.paths.len() as u32).to_le_bytes());
    for p in &channel.paths {
        for v in [p.gain.re, p.gain.im, p.aod, p.aoa] {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

pub fn decode_link_bundle<T: Real>(bytes: &[u8]) -> Result<(Channel<T>, BeamformerSet<T>)> {
    if bytes.len() < 8 || &bytes[..8] != LINK_MAGIC {
        return format_err("not a link bundle");
    }
    let mut r = Reader { b: bytes, pos: 8 };
    let h = r.matrix()?;
    let f_rf = r.matrix()?;
    let f_bb = r.matrix()?;
    let w_rf = r.matrix()?;
    let w_bb = r.matrix()?;
    let p = r.matrix::<T>()?;
    let n = r.u32()? as usize;
    let mut paths = Vec::with_capacity(n);
    for _ in 0..n {
        let (re, im, aod, aoa) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        paths.push(PathComponent {
            gain: Complex::new(T::lit(re), T::lit(im)),
            aod: T::lit(aod),
            aoa: T::lit(aoa),
        });
    }
    if r.pos != bytes.len() {
        return format_err("trailing bytes after link bundle");
    }
    Ok((
        Channel { h, paths },
        BeamformerSet {
            f_bb,
            f_rf,
            p_in: p.as_slice().iter().map(|z| z.re).collect(),
            w_rf,
            w_bb,
        },
    ))
}

/// Short identifier of a link: the first 16 hex digits of the bundle hash.
pub fn link_id<T: Real>(channel: &Channel<T>, bf: &BeamformerSet<T>) -> String {
    sha256_hex(&encode_link_bundle(channel, bf))[..16].to_string()
}

/// Human-readable companion of the binary bundle: `matrix,row,col,re,im`.
pub fn link_bundle_csv<T: Real>(channel: &Channel<T>, bf: &BeamformerSet<T>) -> String {
    let mut s = String::from("matrix,row,col,re,im\n");
    let p_in = ComplexMatrix::from_fn(bf.p_in.len(), 1, |i, _| Complex::new(bf.p_in[i], T::zero()));
    for (name, m) in [
        ("H", &channel.h),
        ("F_RF", &bf.f_rf),
        ("F_BB", &bf.f_bb),
        ("W_RF", &bf.w_rf),
        ("W_BB", &bf.w_bb),
        ("P_in", &p_in),
    ] {
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let z = m[(i, j)];
                let _ = writeln!(s, "{name},{i},{j},{:e},{:e}", z.re.as_f64(), z.im.as_f64());
            }
        }
    }
    s
}

/// Writes `<stem>.bin` and `<stem>.csv`.
pub fn save_link_bundle<T: Real>(stem: &Path, channel: &Channel<T>, bf: &BeamformerSet<T>) -> Result<()> {
    fs::write(stem.with_extension("bin"), encode_link_bundle(channel, bf))?;
    fs::write(stem.with_extension("csv"), link_bundle_csv(channel, bf))?;
    Ok(())
}

pub fn load_link_bundle<T: Real>(stem: &Path) -> Result<(Channel<T>, BeamformerSet<T>)> {
    decode_link_bundle(&fs::read(stem.with_extension("bin"))?)
}

/// Constellation dump with columns `block,stream,re,im`; each column of
/// `y` is one block index.
pub fn constellation_csv<T: Real>(y: &ComplexMatrix<T>) -> String {
    let mut s = String::from("block,stream,re,im\n");
    for j in 0..y.cols() {
        for i in 0..y.rows() {
            let z = y[(i, j)];
            let _ = writeln!(s, "{j},{i},{:.9e},{:.9e}", z.re.as_f64(), z.im.as_f64());
        }
    }
    s
}

//! Binary checkpoint format.
//!
//! A checkpoint bundles every parameter tensor, the optimizer state, a JSON
//! echo of the run configuration, the step counter, and the exact episode-RNG
//! position, so a resumed run reproduces the uninterrupted one bit for bit.
//! Tensors are stored as raw little-endian f32; save → load → save yields
//! identical bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ADGN";
pub const FORMAT_VERSION: u32 = 1;

/// Exact position of the training episode stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// 1 = adam-like, 2 = sgd-momentum.
    pub kind: u8,
    pub t: u64,
    pub tensors: Vec<(String, ArrayD<f32>)>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    /// JSON echo of the model + training configuration.
    pub config_json: String,
    pub step: u64,
    pub rng: RngState,
    pub params: Vec<(String, ArrayD<f32>)>,
    pub optimizer: Option<OptimizerState>,
}

fn w_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn w_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn w_bytes(out: &mut Vec<u8>, v: &[u8]) {
    w_u64(out, v.len() as u64);
    out.extend_from_slice(v);
}

fn w_tensors(out: &mut Vec<u8>, tensors: &[(String, ArrayD<f32>)]) {
    w_u32(out, tensors.len() as u32);
    for (name, t) in tensors {
        w_bytes(out, name.as_bytes());
        w_u32(out, t.ndim() as u32);
        for d in t.shape() {
            w_u64(out, *d as u64);
        }
        let mut raw = Vec::with_capacity(t.len() * 4);
        for v in t.iter() {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        w_bytes(out, &raw);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }

    fn tensors(&mut self) -> Result<Vec<(String, ArrayD<f32>)>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let name = String::from_utf8(self.bytes()?.to_vec())
                .map_err(|_| Error::Checkpoint("invalid tensor name".into()))?;
            let ndim = self.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(self.u64()? as usize);
            }
            let raw = self.bytes()?;
            let n: usize = shape.iter().product();
            if raw.len() != n * 4 {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: payload {} bytes, shape {shape:?} wants {}",
                    raw.len(),
                    n * 4
                )));
            }
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            out.push((name, ArrayD::from_shape_vec(IxDyn(&shape), data).unwrap()));
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        w_u32(&mut out, self.version);
        w_bytes(&mut out, self.config_json.as_bytes());
        w_u64(&mut out, self.step);
        out.extend_from_slice(&self.rng.seed);
        w_u64(&mut out, self.rng.stream);
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        w_tensors(&mut out, &self.params);
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(opt.kind);
                w_u64(&mut out, opt.t);
                w_tensors(&mut out, &opt.tensors);
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let config_json = String::from_utf8(r.bytes()?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid config echo".into()))?;
        let step = r.u64()?;
        let mut seed = [0u8; 32];
        seed.copy_from_slice(r.take(32)?);
        let stream = r.u64()?;
        let word_pos = r.u128()?;
        let params = r.tensors()?;
        let kind = r.take(1)?[0];
        let optimizer = if kind == 0 {
            None
        } else {
            let t = r.u64()?;
            let tensors = r.tensors()?;
            Some(OptimizerState { kind, t, tensors })
        };
        Ok(Checkpoint {
            version,
            config_json,
            step,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .map_err(|e| Error::io(path, e))?
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

/// Standalone named-tensor container (backbone weight files).
pub fn write_named_tensors(path: &Path, tensors: &[(String, ArrayD<f32>)]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    w_u32(&mut out, FORMAT_VERSION);
    w_tensors(&mut out, tensors);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_named_tensors(path: &Path) -> Result<Vec<(String, ArrayD<f32>)>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a tensor file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported tensor file version {version}")));
    }
    r.tensors()
}

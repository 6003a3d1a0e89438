//! Bit-exact binary checkpoints: named f32 tensors plus run metadata, with a
//! trailing CRC32 so corruption is detected on load.
//!
//! Layout (all integers little-endian):
//!   magic `DWCK` | u32 version
//!   u64 architecture fingerprint | u64 iteration | f32 input mean
//!   u8 stream count | u16 byte length + canonical architecture string
//!   u16 label count | per label: u16 byte length + UTF-8 bytes
//!   u32 tensor count | per tensor:
//!     u16 name length + UTF-8 name | u8 rank | u32 per dim | f32 LE payload
//!   u32 CRC32 over everything after the version field

use std::fs;
use std::path::Path;

use crate::error::{DwError, Result};
use crate::layers::LayerParams;
use crate::model::{ArchitectureSpec, Network};
use crate::optim::OptimState;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DWCK";
const VERSION: u32 = 1;

/// Named tensor collection with the metadata needed to rebuild and keep
/// training a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: u64,
    pub iteration: u64,
    pub input_mean: f32,
    /// Stream count the network was trained with (1 or 2).
    pub streams: u8,
    /// Canonical architecture encoding, so a checkpoint file alone suffices
    /// to rebuild its network.
    pub arch: String,
    pub labels: Vec<String>,
    /// Parameters as `<layer>.weight` / `<layer>.bias`; optimizer velocities,
    /// when present, as `optim/<layer>.weight` / `optim/<layer>.bias`.
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_network(
        net: &Network<f32>,
        labels: Vec<String>,
        iteration: u64,
        optim: Option<&OptimState<f32>>,
    ) -> Self {
        let mut tensors = Vec::new();
        for (name, p) in &net.params {
            tensors.push((format!("{name}.weight"), p.weights.clone()));
            tensors.push((format!("{name}.bias"), p.biases.clone()));
        }
        if let Some(state) = optim {
            for ((name, _), (vw, vb)) in net.params.iter().zip(&state.velocities) {
                tensors.push((format!("optim/{name}.weight"), vw.clone()));
                tensors.push((format!("optim/{name}.bias"), vb.clone()));
            }
        }
        Checkpoint {
            fingerprint: net.spec.fingerprint(),
            iteration,
            input_mean: net.input_mean as f32,
            streams: net.streams,
            arch: net.spec.canonical_string(),
            labels,
            tensors,
        }
    }

    /// The architecture spec stored in the checkpoint. Errors if the stored
    /// string does not parse or does not hash to the stored fingerprint.
    pub fn spec(&self) -> Result<ArchitectureSpec> {
        let spec = ArchitectureSpec::from_canonical(&self.arch)?;
        if spec.fingerprint() != self.fingerprint {
            return Err(DwError::Format(
                "stored architecture string does not match the fingerprint".into(),
            ));
        }
        Ok(spec)
    }

    /// Rebuilds the network purely from the checkpoint's own metadata.
    pub fn to_network(&self) -> Result<Network<f32>> {
        self.into_network(self.spec()?, self.streams)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Rebuilds a network from this checkpoint. The architecture fingerprint
    /// must match `spec`; every layer must have its weight and bias present
    /// with matching dims.
    pub fn into_network(&self, spec: ArchitectureSpec, streams: u8) -> Result<Network<f32>> {
        if spec.fingerprint() != self.fingerprint {
            return Err(DwError::Format(format!(
                "architecture fingerprint mismatch: checkpoint {:#018x}, requested spec {:#018x}",
                self.fingerprint,
                spec.fingerprint()
            )));
        }
        // seed irrelevant: every parameter is overwritten below
        let mut net = Network::build(spec, streams, 0)?;
        net.input_mean = self.input_mean as f64;
        for (name, p) in net.params.iter_mut() {
            let w = self
                .tensor(&format!("{name}.weight"))
                .ok_or_else(|| DwError::Format(format!("checkpoint missing {name}.weight")))?;
            let b = self
                .tensor(&format!("{name}.bias"))
                .ok_or_else(|| DwError::Format(format!("checkpoint missing {name}.bias")))?;
            if w.dims() != p.weights.dims() || b.dims() != p.biases.dims() {
                return Err(DwError::Format(format!(
                    "checkpoint tensor dims for {name} do not match the architecture"
                )));
            }
            *p = LayerParams {
                weights: w.clone(),
                biases: b.clone(),
                lr_mult: p.lr_mult,
            };
        }
        Ok(net)
    }

    /// Optimizer state, when the checkpoint carries velocities.
    pub fn optim_state(&self, net: &Network<f32>) -> Option<OptimState<f32>> {
        let mut velocities = Vec::with_capacity(net.params.len());
        for (name, _) in &net.params {
            let vw = self.tensor(&format!("optim/{name}.weight"))?;
            let vb = self.tensor(&format!("optim/{name}.bias"))?;
            velocities.push((vw.clone(), vb.clone()));
        }
        Some(OptimState {
            velocities,
            iteration: self.iteration,
        })
    }
}

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    let body_start = buf.len();
    put_u64(&mut buf, ckpt.fingerprint);
    put_u64(&mut buf, ckpt.iteration);
    buf.extend_from_slice(&ckpt.input_mean.to_le_bytes());
    buf.push(ckpt.streams);
    let arch = ckpt.arch.as_bytes();
    put_u16(&mut buf, arch.len() as u16);
    buf.extend_from_slice(arch);
    put_u16(&mut buf, ckpt.labels.len() as u16);
    for label in &ckpt.labels {
        let bytes = label.as_bytes();
        put_u16(&mut buf, bytes.len() as u16);
        buf.extend_from_slice(bytes);
    }
    put_u32(&mut buf, ckpt.tensors.len() as u32);
    for (name, tensor) in &ckpt.tensors {
        let nb = name.as_bytes();
        put_u16(&mut buf, nb.len() as u16);
        buf.extend_from_slice(nb);
        buf.push(tensor.rank() as u8);
        for &d in tensor.dims() {
            put_u32(&mut buf, d as u32);
        }
        for &v in tensor.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf[body_start..]);
    put_u32(&mut buf, crc);
    fs::write(path, buf).map_err(|e| DwError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(DwError::Format("truncated checkpoint file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| DwError::Format("checkpoint contains invalid UTF-8".into()))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DwError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(DwError::Format("not a DWCK checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(DwError::Format(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let body = &bytes[8..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let crc = crc32fast::hash(body);
    if crc != stored_crc {
        return Err(DwError::Format(format!(
            "checksum mismatch: computed {crc:#010x}, stored {stored_crc:#010x}"
        )));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    let fingerprint = r.u64()?;
    let iteration = r.u64()?;
    let input_mean = r.f32()?;
    let streams = r.take(1)?[0];
    let arch = r.string()?;
    let label_count = r.u16()? as usize;
    let mut labels = Vec::with_capacity(label_count);
    for _ in 0..label_count {
        labels.push(r.string()?);
    }
    let tensor_count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let name = r.string()?;
        let rank = r.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        let payload = r.take(n * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::from_vec(dims, data)?));
    }
    if r.pos != body.len() {
        return Err(DwError::Format("trailing bytes after tensor payloads".into()));
    }
    Ok(Checkpoint {
        fingerprint,
        iteration,
        input_mean,
        streams,
        arch,
        labels,
        tensors,
    })
}

//! Binary weights file.
//!
//! Little-endian layout: `"GTCW"`, `u32` version, config block
//! (`u8 c_in, u16 channels, u8 depth, u8 stages, u8 gate, u8 use_1x1`),
//! `u32` tensor count, then per tensor `u16` name length, UTF-8 name,
//! `u8` dtype (0 = f32), `u8` rank, `rank x u32` dims and the raw values.
//!
//! Learned parameters come first in model order, followed by the running
//! statistics of every batch-norm unit (`running_mean`, `running_var`,
//! and a rank-0 `num_batches_tracked`).

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{GateKind, GtcnnConfig, GtcnnModel};
use crate::tensor::Shape;

pub const MAGIC: &[u8; 4] = b"GTCW";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

struct Entry {
    name: String,
    dims: Vec<usize>,
    values: Vec<f32>,
}

fn entries(model: &GtcnnModel<f32>) -> Vec<Entry> {
    let mut out: Vec<Entry> = model
        .params()
        .iter()
        .map(|p| Entry {
            name: p.name.clone(),
            dims: p.file_dims(),
            values: p.value.data().to_vec(),
        })
        .collect();
    for s in model.bn_states() {
        let c = s.mean.len();
        out.push(Entry {
            name: format!("{}.running_mean", s.name),
            dims: vec![c],
            values: s.mean.clone(),
        });
        out.push(Entry {
            name: format!("{}.running_var", s.name),
            dims: vec![c],
            values: s.var.clone(),
        });
        out.push(Entry {
            name: format!("{}.num_batches_tracked", s.name),
            dims: vec![],
            values: vec![s.tracked as f32],
        });
    }
    out
}

/// Serializes `model` to bytes.
pub fn to_bytes(model: &GtcnnModel<f32>) -> Vec<u8> {
    let c = model.config();
    let mut buf = Vec::with_capacity(model.num_parameters() * 4 + 4096);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(c.c_in as u8);
    buf.extend_from_slice(&(c.channels as u16).to_le_bytes());
    buf.push(c.depth as u8);
    buf.push(c.stages as u8);
    buf.push(c.gate.code());
    buf.push(c.use_1x1 as u8);
    let entries = entries(model);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in &entries {
        buf.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(e.name.as_bytes());
        buf.push(DTYPE_F32);
        buf.push(e.dims.len() as u8);
        for &d in &e.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &e.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

/// Writes the model to `path` through a temporary sibling so a failed write
/// never leaves a partial file behind.
pub fn save(model: &GtcnnModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<GtcnnModel<f32>> {
    from_bytes(&fs::read(path)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Weights(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn read_config(r: &mut Reader<'_>) -> Result<GtcnnConfig> {
    let c_in = r.u8("config")? as usize;
    let channels = r.u16("config")? as usize;
    let depth = r.u8("config")? as usize;
    let stages = r.u8("config")? as usize;
    let gate_code = r.u8("config")?;
    let gate =
        GateKind::from_code(gate_code).ok_or_else(|| Error::Weights(format!("unknown gate code {gate_code}")))?;
    let use_1x1 = match r.u8("config")? {
        0 => false,
        1 => true,
        v => return Err(Error::Weights(format!("invalid use_1x1 flag {v}"))),
    };
    let config = GtcnnConfig {
        c_in,
        channels,
        depth,
        stages,
        gate,
        use_1x1,
    };
    config
        .validate()
        .map_err(|e| Error::Weights(format!("embedded config: {e}")))?;
    Ok(config)
}

/// Parses a weights file, validating every header field, tensor name and
/// shape against the embedded config.
pub fn from_bytes(bytes: &[u8]) -> Result<GtcnnModel<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Weights(format!("bad magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Weights(format!("unsupported version {version}")));
    }
    let config = read_config(&mut r)?;
    // The skeleton supplies names and shapes; its random values are overwritten.
    let mut model = GtcnnModel::<f32>::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let expected = entries(&model);
    let count = r.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(Error::Weights(format!(
            "tensor count {count} does not match config (expected {})",
            expected.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for e in &expected {
        let len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::Weights("tensor name is not UTF-8".into()))?;
        if name != e.name {
            return Err(Error::Weights(format!("expected tensor {}, found {name}", e.name)));
        }
        let dtype = r.u8(&e.name)?;
        if dtype != DTYPE_F32 {
            return Err(Error::Weights(format!("{name}: unsupported dtype {dtype}")));
        }
        let rank = r.u8(&e.name)? as usize;
        let dims = (0..rank)
            .map(|_| r.u32(&e.name).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims != e.dims {
            return Err(Error::Weights(format!(
                "{name}: shape {dims:?} does not match config (expected {:?})",
                e.dims
            )));
        }
        let n = e.values.len();
        let raw = r.take(n * 4, &format!("values of {name}"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        values.push(data);
    }
    if r.pos != bytes.len() {
        return Err(Error::Weights(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }

    let mut it = values.into_iter();
    for p in model.params_mut() {
        let shape: Shape = p.value.shape();
        p.value = crate::tensor::Tensor4::from_vec(shape, it.next().unwrap())?;
    }
    for s in model.bn_states_mut() {
        s.mean = it.next().unwrap();
        s.var = it.next().unwrap();
        let tracked = it.next().unwrap()[0];
        if !(tracked >= 0.0 && tracked.fract() == 0.0) {
            return Err(Error::Weights(format!(
                "{}.num_batches_tracked is not a count: {tracked}",
                s.name
            )));
        }
        s.tracked = tracked as u64;
    }
    Ok(model)
}

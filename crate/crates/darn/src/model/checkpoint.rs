//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "DARN"
//! version u32      currently 1
//! dtype   u8 len + utf8          "f32" or "f64"
//! arch    u32 len + utf8         key=value lines, one per field
//! count   u32
//! entry*  u16 name len + utf8 name
//!         u8 ndim, then ndim x u32 extents
//!         raw little-endian values
//! ```
//!
//! Entries cover every learnable array plus the batch-norm running
//! statistics, so write-then-read is bit-exact and a file alone rebuilds the
//! network.

use super::{ArchConfig, ModelParams, TargetComponent};
use crate::array::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::collections::BTreeMap;
use std::path::Path;

const MAGIC: &[u8; 4] = b"DARN";
const VERSION: u32 = 1;

fn arch_to_text(arch: &ArchConfig) -> String {
    let channels: Vec<String> = arch.disc_channels.iter().map(|c| c.to_string()).collect();
    format!(
        "features={}\nblocks={}\ntarget={}\ndisc_channels={}\ndisc_hidden={}\npatch={}\nbn_eps={:?}\nbn_momentum={:?}\neps_div={:?}\n",
        arch.features,
        arch.blocks,
        arch.target.name(),
        channels.join(","),
        arch.disc_hidden,
        arch.patch,
        arch.bn_eps,
        arch.bn_momentum,
        arch.eps_div,
    )
}

fn arch_from_text(text: &str) -> Result<ArchConfig> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad arch line '{line}'")))?;
        map.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<String> {
        map.get(k)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("arch key '{k}' missing")))
    };
    let parse_usize = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("arch key '{k}' is not an integer")))
    };
    let parse_f64 = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("arch key '{k}' is not a number")))
    };
    let channels = get("disc_channels")?
        .split(',')
        .map(|c| {
            c.trim()
                .parse()
                .map_err(|_| Error::Checkpoint("bad disc_channels".into()))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(ArchConfig {
        features: parse_usize("features")?,
        blocks: parse_usize("blocks")?,
        target: TargetComponent::parse(&get("target")?)?,
        disc_channels: channels,
        disc_hidden: parse_usize("disc_hidden")?,
        patch: parse_usize("patch")?,
        bn_eps: parse_f64("bn_eps")?,
        bn_momentum: parse_f64("bn_momentum")?,
        eps_div: parse_f64("eps_div")?,
    })
}

/// Entries in write order: generator learnables, generator bn buffers,
/// albedo discriminator, shading discriminator.
fn collect_entries<T: Scalar>(params: &ModelParams<T>) -> Vec<(String, Array<T>)> {
    let mut out: Vec<(String, Array<T>)> = Vec::new();
    params
        .generator
        .visit(&mut |name, a| out.push((name.to_string(), a.clone())));
    for (i, b) in params.generator.blocks.iter().enumerate() {
        for (tag, bn) in [("bn1", &b.bn1), ("bn2", &b.bn2)] {
            let stats = &bn.stats;
            out.push((
                format!("generator.block{i}.{tag}.running_mean"),
                Array::new(vec![stats.mean.len()], stats.mean.clone()).expect("consistent"),
            ));
            out.push((
                format!("generator.block{i}.{tag}.running_var"),
                Array::new(vec![stats.var.len()], stats.var.clone()).expect("consistent"),
            ));
            out.push((
                format!("generator.block{i}.{tag}.initialized"),
                Array::scalar(if stats.initialized { T::one() } else { T::zero() }),
            ));
        }
    }
    params
        .disc_albedo
        .visit("disc_albedo", &mut |name, a| out.push((name.to_string(), a.clone())));
    params
        .disc_shading
        .visit("disc_shading", &mut |name, a| out.push((name.to_string(), a.clone())));
    out
}

pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let dtype = T::DTYPE.as_bytes();
    buf.push(dtype.len() as u8);
    buf.extend_from_slice(dtype);
    let arch = arch_to_text(&params.arch);
    buf.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    buf.extend_from_slice(arch.as_bytes());

    let entries = collect_entries(params);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, array) in &entries {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.push(array.shape().len() as u8);
        for &d in array.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in array.data() {
            v.write_le(&mut buf);
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("file truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn utf8(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf8".into()))
    }
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let bytes = std::fs::read(path)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let dtype_len = c.u8()? as usize;
    let dtype = c.utf8(dtype_len)?;
    if dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "dtype mismatch: file holds {dtype}, loader expects {}",
            T::DTYPE
        )));
    }
    let arch_len = c.u32()? as usize;
    let arch = arch_from_text(&c.utf8(arch_len)?)?;

    let count = c.u32()? as usize;
    let mut entries: BTreeMap<String, Array<T>> = BTreeMap::new();
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = c.utf8(name_len)?;
        let ndim = c.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = c.take(numel * T::BYTES)?;
        let data: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        entries.insert(
            name.clone(),
            Array::new(shape, data)
                .map_err(|_| Error::Checkpoint(format!("inconsistent entry '{name}'")))?,
        );
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last entry".into()));
    }

    // Build a skeleton with the right shapes, then overwrite every array.
    let mut params = ModelParams::<T>::init(arch, 0);
    let mut take = |name: &str, expect_shape: &[usize]| -> Result<Array<T>> {
        let a = entries
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("entry '{name}' missing")))?;
        if a.shape() != expect_shape {
            return Err(Error::Checkpoint(format!(
                "entry '{name}' has shape {:?}, expected {:?}",
                a.shape(),
                expect_shape
            )));
        }
        Ok(a)
    };

    let mut fill_err = None;
    params.generator.visit_mut(&mut |name, a| {
        if fill_err.is_none() {
            match take(name, a.shape()) {
                Ok(v) => *a = v,
                Err(e) => fill_err = Some(e),
            }
        }
    });
    if let Some(e) = fill_err {
        return Err(e);
    }
    for (i, b) in params.generator.blocks.iter_mut().enumerate() {
        for (tag, bn) in [("bn1", &mut b.bn1), ("bn2", &mut b.bn2)] {
            let c = bn.gamma.numel();
            let mean = take(&format!("generator.block{i}.{tag}.running_mean"), &[c])?;
            let var = take(&format!("generator.block{i}.{tag}.running_var"), &[c])?;
            let init = take(&format!("generator.block{i}.{tag}.initialized"), &[])?;
            bn.stats.mean = mean.into_data();
            bn.stats.var = var.into_data();
            bn.stats.initialized = init.data()[0] != T::zero();
        }
    }
    let mut fill_err = None;
    params.disc_albedo.visit_mut("disc_albedo", &mut |name, a| {
        if fill_err.is_none() {
            match take(name, a.shape()) {
                Ok(v) => *a = v,
                Err(e) => fill_err = Some(e),
            }
        }
    });
    params.disc_shading.visit_mut("disc_shading", &mut |name, a| {
        if fill_err.is_none() {
            match take(name, a.shape()) {
                Ok(v) => *a = v,
                Err(e) => fill_err = Some(e),
            }
        }
    });
    if let Some(e) = fill_err {
        return Err(e);
    }
    if let Some(name) = entries.keys().next() {
        return Err(Error::Checkpoint(format!("unknown entry '{name}'")));
    }
    Ok(params)
}

//! Checkpoint container: named f64 matrices with a version header, plus a
//! plain-text manifest sidecar. Values round-trip bit-exactly via their IEEE
//! bit patterns, little-endian.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use lethe_core::params::{ParamKind, ParamSet};
use lethe_core::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LTHE";
const VERSION: u32 = 1;

fn kind_code(kind: ParamKind) -> u8 {
    match kind {
        ParamKind::Base => 0,
        ParamKind::AdapterA => 1,
        ParamKind::AdapterB => 2,
    }
}

fn kind_from(code: u8) -> Result<ParamKind> {
    Ok(match code {
        0 => ParamKind::Base,
        1 => ParamKind::AdapterA,
        2 => ParamKind::AdapterB,
        other => bail!("unknown parameter kind code {other}"),
    })
}

fn kind_name(kind: ParamKind) -> &'static str {
    match kind {
        ParamKind::Base => "base",
        ParamKind::AdapterA => "adapter-a",
        ParamKind::AdapterB => "adapter-b",
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    path.with_file_name(name)
}

/// Serialize a parameter set; entries in sorted name order.
pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, entry) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(kind_code(entry.kind));
        out.push(entry.frozen as u8);
        let shape = entry.tensor.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in entry.tensor.data() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            bail!("checkpoint truncated at byte {}", self.pos);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        bail!("not a checkpoint file (bad magic)");
    }
    let version = c.u32()?;
    if version != VERSION {
        bail!("unsupported checkpoint version {version}");
    }
    let count = c.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .context("parameter name is not utf-8")?
            .to_string();
        let kind = kind_from(c.u8()?)?;
        let frozen = c.u8()? != 0;
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_bits(c.u64()?));
        }
        let tensor =
            Tensor::from_vec(shape, data).map_err(|e| anyhow::anyhow!("bad tensor: {e}"))?;
        params.insert(&name, tensor, frozen, kind);
    }
    if c.pos != bytes.len() {
        bail!("trailing bytes after checkpoint payload");
    }
    Ok(params)
}

fn manifest_text(params: &ParamSet) -> String {
    let mut out = String::from("name\tshape\tfrozen\tkind\n");
    for (name, entry) in params.iter() {
        let shape: Vec<String> = entry.tensor.shape().iter().map(|d| d.to_string()).collect();
        out.push_str(&format!(
            "{name}\t{}\t{}\t{}\n",
            shape.join("x"),
            entry.frozen,
            kind_name(entry.kind)
        ));
    }
    out
}

/// Write bytes to a temp file in the target directory, then atomically
/// rename into place. A crash mid-write never corrupts an existing file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating directory {}", parent.display()))?;
    }
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f =
            fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
        .with_context(|| format!("renaming into place: {}", path.display()))?;
    Ok(())
}

pub fn save(path: &Path, params: &ParamSet) -> Result<()> {
    write_atomic(path, &encode(params))?;
    write_atomic(&manifest_path(path), manifest_text(params).as_bytes())?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let bytes =
        fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    decode(&bytes)
}

//! Little-endian binary container shared by datasets and checkpoints.
//!
//! ```text
//! "FAME" | u16 version | u16 bands | u32 height | u32 width | u32 count
//! count × ( u16 name_len | name | u32 n | u32 c | u32 h | u32 w | f32 data )
//! u32 meta_len | meta (UTF-8 "key=value" lines)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{FameError, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"FAME";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub bands: u16,
    pub height: u32,
    pub width: u32,
    pub arrays: Vec<(String, Tensor<f32>)>,
    pub metadata: Vec<(String, String)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, detail: impl Into<String>) -> FameError {
        FameError::Format { offset: self.pos as u64, detail: detail.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated {what}: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn text(&mut self, n: usize, what: &str) -> Result<String> {
        let start = self.pos;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| FameError::Format {
            offset: start as u64,
            detail: format!("{what} is not UTF-8"),
        })
    }
}

impl Container {
    pub fn array(&self, name: &str) -> Result<&Tensor<f32>> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| FameError::Contract(format!("container has no array `{name}`")))
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn meta_parsed<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self
            .meta(key)
            .ok_or_else(|| FameError::Contract(format!("container metadata lacks `{key}`")))?;
        raw.parse()
            .map_err(|_| FameError::Contract(format!("metadata `{key}` has invalid value `{raw}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.bands.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for d in t.shape().dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta: String = self.metadata.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(FameError::Format { offset: 0, detail: "bad magic, not a FAME container".into() });
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(FameError::Format { offset: 4, detail: format!("unsupported version {version}") });
        }
        let bands = r.u16("band count")?;
        let height = r.u32("height")?;
        let width = r.u32("width")?;
        let count = r.u32("array count")?;
        let mut arrays = Vec::new();
        for i in 0..count {
            let len = r.u16("name length")? as usize;
            let name = r.text(len, "array name")?;
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32("array shape")? as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let bytes_needed = numel.and_then(|n| n.checked_mul(4));
            let Some(bytes_needed) = bytes_needed else {
                return Err(r.err(format!("array {i} `{name}` shape {shape} overflows")));
            };
            let raw = r.take(bytes_needed, &format!("data of array `{name}`"))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            arrays.push((name, Tensor::from_vec(shape, data)?));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta_start = r.pos;
        let meta = r.text(meta_len, "metadata")?;
        let mut metadata = Vec::new();
        for line in meta.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| FameError::Format {
                offset: meta_start as u64,
                detail: format!("metadata line `{line}` lacks `=`"),
            })?;
            metadata.push((k.to_string(), v.to_string()));
        }
        if r.pos != bytes.len() {
            return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Container { bands, height, width, arrays, metadata })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| FameError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| FameError::io(path, e))?;
        Container::from_bytes(&bytes)
    }
}

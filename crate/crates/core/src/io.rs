//! File formats: raw tensors, tensor archives (checkpoints), grayscale PNG
//! and masks. Layouts are described in `docs/formats.md`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::operators::{Mask, Shape};

pub const TENSOR_MAGIC: &[u8; 8] = b"DPSTENSR";
pub const ARCHIVE_MAGIC: &[u8; 8] = b"DPSARCH\0";
pub const FORMAT_VERSION: u32 = 1;

fn format_err(what: &'static str, path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        what,
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or("truncated file")?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn dims_and_data(&mut self) -> std::result::Result<(Vec<usize>, Vec<f64>), String> {
        let ndim = self.u32()? as usize;
        if ndim > 16 {
            return Err(format!("implausible rank {ndim}"));
        }
        let dims = (0..ndim)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or("dimension overflow")?;
        let bytes = self.take(count.checked_mul(8).ok_or("dimension overflow")?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((dims, data))
    }
}

fn push_dims_and_data(out: &mut Vec<u8>, dims: &[usize], data: &[f64]) {
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn check_header(r: &mut Reader<'_>, magic: &[u8; 8]) -> std::result::Result<(), String> {
    if r.take(8)? != magic {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    Ok(())
}

/// Writes a raw tensor: magic, version, rank, dims (u64), f64 payload, all
/// little-endian.
pub fn write_tensor(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    if dims.iter().product::<usize>() != data.len() {
        return Err(Error::ShapeMismatch {
            expected: dims.iter().product(),
            found: data.len(),
        });
    }
    let mut out = Vec::with_capacity(24 + 8 * dims.len() + 8 * data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    push_dims_and_data(&mut out, dims, data);
    write_bytes(path, &out)
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let buf = read_bytes(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let parsed = check_header(&mut r, TENSOR_MAGIC).and_then(|_| r.dims_and_data());
    let (dims, data) = parsed.map_err(|e| format_err("tensor", path, e))?;
    if r.pos != buf.len() {
        return Err(format_err("tensor", path, "trailing bytes"));
    }
    Ok((dims, data))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named tensors plus string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
}

impl TensorArchive {
    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.metadata).expect("string map serialises");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            if t.dims.iter().product::<usize>() != t.data.len() {
                return Err(Error::ShapeMismatch {
                    expected: t.dims.iter().product(),
                    found: t.data.len(),
                });
            }
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            push_dims_and_data(&mut out, &t.dims, &t.data);
        }
        write_bytes(path, &out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = read_bytes(path)?;
        let mut r = Reader { buf: &buf, pos: 0 };
        let parse = |r: &mut Reader<'_>| -> std::result::Result<Self, String> {
            check_header(r, ARCHIVE_MAGIC)?;
            let n = r.u32()? as usize;
            let metadata = serde_json::from_slice(r.take(n)?).map_err(|e| e.to_string())?;
            let count = r.u32()? as usize;
            let mut tensors = Vec::new();
            for _ in 0..count {
                let len = r.u32()? as usize;
                let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| e.to_string())?;
                let (dims, data) = r.dims_and_data()?;
                tensors.push(TensorEntry { name, dims, data });
            }
            if r.pos != r.buf.len() {
                return Err("trailing bytes".into());
            }
            Ok(Self { metadata, tensors })
        };
        parse(&mut r).map_err(|e| format_err("archive", path, e))
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Saves a grayscale image, clamping to `[0, 1]`.
pub fn save_png(path: &Path, shape: Shape, data: &[f64]) -> Result<()> {
    crate::error::check_len(shape.len(), data.len())?;
    let pixels: Vec<u8> = data.iter().map(|v| to_u8(*v)).collect();
    let img = image::GrayImage::from_raw(shape.cols as u32, shape.rows as u32, pixels).expect("buffer size checked");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Saves a grayscale image after an affine rescale of `[lo, hi]` to `[0, 1]`.
pub fn save_png_scaled(path: &Path, shape: Shape, data: &[f64]) -> Result<()> {
    let lo = data.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let scaled: Vec<f64> = data.iter().map(|v| (v - lo) / span).collect();
    save_png(path, shape, &scaled)
}

/// Loads any PNG as luma in `[0, 1]`.
pub fn load_png(path: &Path) -> Result<(Shape, Vec<f64>)> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let shape = Shape::new(img.height() as usize, img.width() as usize);
    Ok((shape, img.into_raw().into_iter().map(|p| f64::from(p) / 255.0).collect()))
}

/// Loads a mask from PNG (nonzero pixels retained) or from a text grid of
/// `0`/`1` characters, one image row per line.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        let shape = Shape::new(img.height() as usize, img.width() as usize);
        return Mask::new(shape, img.into_raw().into_iter().map(|p| p > 0).collect());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mask(&text).map_err(|reason| format_err("mask", path, reason))
}

pub fn parse_mask(text: &str) -> std::result::Result<Mask, String> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(format!("line {}: unexpected character `{other}`", n + 1)),
            })
            .collect::<std::result::Result<Vec<bool>, String>>()?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err("rows must be non-empty and of equal length".into());
    }
    let shape = Shape::new(rows.len(), cols);
    Mask::new(shape, rows.concat()).map_err(|e| e.to_string())
}

pub fn mask_to_text(mask: &Mask) -> String {
    let cols = mask.shape().cols;
    let mut out = String::with_capacity(mask.shape().len() + mask.shape().rows);
    for row in mask.keep().chunks(cols) {
        out.extend(row.iter().map(|k| if *k { '1' } else { '0' }));
        out.push('\n');
    }
    out
}

//! Image and tensor file formats.
//!
//! SKF1 record layout (little-endian): magic `SKF1`, `u32` ndim, `ndim` x
//! `u32` extents, then the row-major `f32` samples.
//!
//! A named bundle prefixes one or more records with a manifest: magic `SKFM`,
//! `u32` entry count, then per entry a `u32` byte length and UTF-8 name. The
//! records follow in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Image, Tensor};
use crate::error::{Error, Result};

const RECORD_MAGIC: &[u8; 4] = b"SKF1";
const MANIFEST_MAGIC: &[u8; 4] = b"SKFM";
const MAX_NDIM: u32 = 8;

/// Reads an 8-bit PNG, mapping samples to `[0, 1]` by `/255`. Grayscale files
/// load as one channel, everything else as RGB.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(img.color(), image::ColorType::L8 | image::ColorType::L16);
    let (channels, raw) = if gray {
        (1, img.to_luma8().into_raw())
    } else {
        (3, img.to_rgb8().into_raw())
    };
    let mut data = vec![0.0f32; channels * h * w];
    for (i, px) in raw.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * h * w + i] = v as f32 / 255.0;
        }
    }
    Image::from_vec(channels, h, w, data)
}

/// Writes an image as 8-bit PNG, clamping to `[0, 1]` and rounding.
pub fn write_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let mut raw = vec![0u8; c * h * w];
    for i in 0..h * w {
        for ch in 0..c {
            let v = img.data()[ch * h * w + i];
            raw[i * c + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let color = if c == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer(path, &raw, w as u32, h as u32, color).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn encode_record(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(RECORD_MAGIC);
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::corrupt(
                "SKF1 file",
                format!("unexpected end of data at byte {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn decode_record(cur: &mut Cursor<'_>) -> Result<Tensor> {
    if cur.take(4)? != RECORD_MAGIC {
        return Err(Error::corrupt("SKF1 file", "bad record magic"));
    }
    let ndim = cur.u32()?;
    if ndim > MAX_NDIM {
        return Err(Error::corrupt("SKF1 file", format!("ndim {ndim} out of range")));
    }
    let shape = (0..ndim)
        .map(|_| cur.u32().map(|e| e as usize))
        .collect::<Result<Vec<_>>>()?;
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .filter(|n| n.checked_mul(4).is_some_and(|b| b <= cur.buf.len()))
        .ok_or_else(|| Error::corrupt("SKF1 file", format!("extent {shape:?} too large")))?;
    let data = cur
        .take(n * 4)?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_skf1(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * t.ndim() + 4 * t.len());
    encode_record(t, &mut buf);
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_skf1(path: impl AsRef<Path>) -> Result<Tensor> {
    let buf = fs::read(path)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    let t = decode_record(&mut cur)?;
    if !cur.done() {
        return Err(Error::corrupt("SKF1 file", "trailing bytes after record"));
    }
    Ok(t)
}

pub fn write_skf1_bundle(entries: &[(&str, &Tensor)], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MANIFEST_MAGIC);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, _) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
    }
    for (_, t) in entries {
        encode_record(t, &mut buf);
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Reads a named bundle. A bare single-record file is accepted and returned
/// under the name `"0"`.
pub fn read_skf1_bundle(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if buf.starts_with(RECORD_MAGIC) {
        let t = decode_record(&mut cur)?;
        if !cur.done() {
            return Err(Error::corrupt("SKF1 file", "trailing bytes after record"));
        }
        return Ok(vec![("0".to_string(), t)]);
    }
    if cur.take(4)? != MANIFEST_MAGIC {
        return Err(Error::corrupt("SKF1 bundle", "bad manifest magic"));
    }
    let count = cur.u32()? as usize;
    if count > buf.len() {
        return Err(Error::corrupt("SKF1 bundle", "entry count out of range"));
    }
    let mut names = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name =
            std::str::from_utf8(cur.take(len)?).map_err(|_| Error::corrupt("SKF1 bundle", "name is not UTF-8"))?;
        names.push(name.to_string());
    }
    let mut out = Vec::with_capacity(count);
    for name in names {
        out.push((name, decode_record(&mut cur)?));
    }
    if !cur.done() {
        return Err(Error::corrupt("SKF1 bundle", "trailing bytes after records"));
    }
    Ok(out)
}

//! The NSMT tensor file format and 8-bit image import.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `NSMT`                  |
//! | 4      | 4    | version, `u32` = 1            |
//! | 8      | 4    | dtype code, `u32` (1 = `f32`) |
//! | 12     | 12   | `C`, `H`, `W` as `u32`        |
//! | 24     | 4·CHW| row-major `f32` payload       |

use std::fs;
use std::io::Write;
use std::path::Path;

use noisomics_core::ImageTensor;

pub const MAGIC: &[u8; 4] = b"NSMT";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic at byte 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported version {found} at byte {offset}")]
    BadVersion { offset: usize, found: u32 },
    #[error("unsupported dtype code {found} at byte {offset}")]
    BadDtype { offset: usize, found: u32 },
    #[error("truncated {what}: expected {expected} bytes, found {actual} (at byte {offset})")]
    Truncated {
        what: &'static str,
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("invalid dims {dims:?} at byte 12")]
    BadDims { dims: [u32; 3] },
    #[error("{extra} trailing bytes after payload at byte {offset}")]
    Trailing { offset: usize, extra: usize },
    #[error("non-finite value at byte {offset}")]
    NonFinite { offset: usize },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("image decode: {0}")]
    Image(String),
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

/// Serializes `x` at `f32` precision.
pub fn encode(x: &ImageTensor) -> Vec<u8> {
    let (c, h, w) = x.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * x.len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, DTYPE_F32, c as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in x.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ImageTensor, FormatError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(bad_magic(bytes));
        }
        return Err(FormatError::Truncated {
            what: "header",
            offset: 0,
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(bad_magic(bytes));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(FormatError::BadVersion { offset: 4, found: version });
    }
    let dtype = u32_at(bytes, 8);
    if dtype != DTYPE_F32 {
        return Err(FormatError::BadDtype { offset: 8, found: dtype });
    }
    let dims = [u32_at(bytes, 12), u32_at(bytes, 16), u32_at(bytes, 20)];
    if dims.contains(&0) {
        return Err(FormatError::BadDims { dims });
    }
    let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d as usize));
    let expected = count
        .and_then(|n| n.checked_mul(4))
        .ok_or(FormatError::BadDims { dims })?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(FormatError::Truncated {
            what: "payload",
            offset: HEADER_LEN,
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(FormatError::Trailing {
            offset: HEADER_LEN + expected,
            extra: payload.len() - expected,
        });
    }
    let mut data = Vec::with_capacity(expected / 4);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(FormatError::NonFinite { offset: HEADER_LEN + 4 * i });
        }
        data.push(f64::from(v));
    }
    let [c, h, w] = dims.map(|d| d as usize);
    Ok(ImageTensor::new(c, h, w, data).expect("length checked against dims"))
}

fn bad_magic(bytes: &[u8]) -> FormatError {
    FormatError::BadMagic {
        expected: String::from_utf8_lossy(MAGIC).into_owned(),
        found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
    }
}

/// Rounds every value to `f32`, the precision files store.
pub fn to_f32_precision(x: &ImageTensor) -> ImageTensor {
    x.map(|v| f64::from(v as f32))
}

pub fn write_tensor(path: &Path, x: &ImageTensor) -> Result<(), FormatError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(x))?;
    Ok(())
}

/// Reads an NSMT file, or imports `.png`/`.pgm`/`.pnm` 8-bit images.
pub fn read_image(path: &Path) -> Result<ImageTensor, FormatError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png" | "pgm" | "pnm" | "ppm") => import_8bit(path),
        _ => decode(&fs::read(path)?),
    }
}

/// Maps 8-bit samples `v` to `v / 255` (grayscale stays one channel, colour
/// becomes three; alpha is dropped).
pub fn import_8bit(path: &Path) -> Result<ImageTensor, FormatError> {
    let img = image::open(path).map_err(|e| FormatError::Image(e.to_string()))?;
    let (channels, raw, w, h) = if img.color().has_color() {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        (3, rgb.into_raw(), w, h)
    } else {
        let g = img.to_luma8();
        let (w, h) = g.dimensions();
        (1, g.into_raw(), w, h)
    };
    let (w, h) = (w as usize, h as usize);
    // Interleaved HWC to planar CHW.
    let mut data = vec![0.0; channels * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let v = raw[(y * w + x) * channels + c];
                data[c * h * w + y * w + x] = f64::from(f32::from(v) / 255.0);
            }
        }
    }
    ImageTensor::new(channels, h, w, data).map_err(|e| FormatError::Image(e.to_string()))
}

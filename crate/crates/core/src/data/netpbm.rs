//! Binary PGM (16-bit depth in millimetres) and PPM (8-bit RGB).

use std::fs;
use std::path::Path;

use super::container::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub focal: f32,
    pub cx: f32,
    pub cy: f32,
}

impl Intrinsics {
    /// Centred principal point and a focal length of `0.9 × width`.
    pub fn default_for(width: usize, height: usize) -> Self {
        Intrinsics {
            focal: 0.9 * width as f32,
            cx: (width as f32 - 1.0) / 2.0,
            cy: (height as f32 - 1.0) / 2.0,
        }
    }
}

/// Depth in metres; `0.0` marks an invalid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub intrinsics: Intrinsics,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>, intrinsics: Intrinsics) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::Data(format!(
                "depth map {width}×{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Data("depth values must be finite and non-negative".into()));
        }
        Ok(DepthMap {
            width,
            height,
            values,
            intrinsics,
        })
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.at(row, col) > 0.0
    }
}

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(
            0,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let what = ["width", "height", "maxval"][i];
            return Err(Error::format(start, format!("expected {what}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(start, "header number out of range"))?;
        if *field == 0 {
            return Err(Error::format(start, "header values must be positive"));
        }
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(pos, "expected a single whitespace byte after maxval")),
    }
    Ok(Header {
        width: fields[0],
        height: fields[1],
        maxval: fields[2],
        data_start: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, bytes_per_pixel: usize) -> Result<&'a [u8]> {
    let need = h
        .width
        .checked_mul(h.height)
        .and_then(|n| n.checked_mul(bytes_per_pixel))
        .ok_or_else(|| Error::format(2, "image dimensions overflow"))?;
    let have = bytes.len() - h.data_start;
    if have < need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated raster: need {need} bytes, got {have}"),
        ));
    }
    if have > need {
        return Err(Error::format(h.data_start + need, format!("{} trailing bytes", have - need)));
    }
    Ok(&bytes[h.data_start..])
}

/// Decodes a 16-bit P5 depth image; millimetres become metres.
pub fn decode_pgm_depth(bytes: &[u8], intrinsics: Option<Intrinsics>) -> Result<DepthMap> {
    let h = parse_header(bytes, b"P5")?;
    if h.maxval <= 255 || h.maxval > 65535 {
        return Err(Error::format(
            2,
            format!("depth PGM must be 16-bit (maxval 256..=65535), got maxval {}", h.maxval),
        ));
    }
    let raster = payload(bytes, &h, 2)?;
    let values = raster
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 1000.0)
        .collect();
    let intr = intrinsics.unwrap_or_else(|| Intrinsics::default_for(h.width, h.height));
    DepthMap::new(h.width, h.height, values, intr)
}

/// Encodes depth as 16-bit millimetres, rounding to the nearest millimetre.
pub fn encode_pgm_depth(depth: &DepthMap) -> Result<Vec<u8>> {
    let mut out = format!("P5\n{} {}\n65535\n", depth.width, depth.height).into_bytes();
    for &v in &depth.values {
        let mm = (v as f64 * 1000.0).round();
        if !(0.0..=65535.0).contains(&mm) {
            return Err(Error::Data(format!("depth {v} m does not fit 16-bit millimetres")));
        }
        out.extend_from_slice(&(mm as u16).to_be_bytes());
    }
    Ok(out)
}

/// Decodes an 8-bit P6 image into a 3×H×W tensor with values in [0, 255].
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let h = parse_header(bytes, b"P6")?;
    if h.maxval != 255 {
        return Err(Error::format(2, format!("RGB PPM must have maxval 255, got {}", h.maxval)));
    }
    let raster = payload(bytes, &h, 3)?;
    let plane = h.width * h.height;
    let mut data = vec![0.0f32; 3 * plane];
    for (p, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = px[c] as f32;
        }
    }
    Tensor::new(vec![3, h.height, h.width], data)
}

/// Encodes a 3×H×W tensor, clamping to [0, 255] and rounding.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let [3, hgt, wid] = image.shape() else {
        return Err(Error::Data(format!("PPM needs a 3×H×W tensor, got {:?}", image.shape())));
    };
    let plane = hgt * wid;
    let mut out = format!("P6\n{wid} {hgt}\n255\n").into_bytes();
    let d = image.data();
    for p in 0..plane {
        for c in 0..3 {
            out.push(d[c * plane + p].clamp(0.0, 255.0).round() as u8);
        }
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_depth(path: impl AsRef<Path>, intrinsics: Option<Intrinsics>) -> Result<DepthMap> {
    decode_pgm_depth(&read(path.as_ref())?, intrinsics)
}

pub fn save_depth(depth: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pgm_depth(depth)?)
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_ppm(&read(path.as_ref())?)
}

pub fn save_rgb(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_ppm(image)?)
}

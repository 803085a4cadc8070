//! Image representation, file I/O, resizing, and observation construction.
//!
//! Images are dense row-major RGB rasters with floating-point samples in
//! [0, 1]. All processing stays in float; quantization to 8 bits happens
//! only when a file is written.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::ImageEncoder;

use crate::error::{Error, Result};

/// Side length of the square observation block fed to the network.
pub const OBS_SIZE: usize = 40;
/// Channels in the observation block (original RGB stacked on current RGB).
pub const OBS_CHANNELS: usize = 6;
/// Length of the step-countdown vector `u`.
pub const U_DIM: usize = 20;

/// Rec. 601 luma from RGB samples.
#[inline]
pub fn luma(r: f32, g: f32, b: f32) -> f64 {
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
}

/// A dense RGB raster with samples in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image from interleaved row-major RGB samples, validating
    /// dimensions, length, and sample range.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "zero dimension: {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "data length {} does not match {width}x{height}x3",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidImage(
                "samples must be finite and within [0, 1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y) -> [r, g, b]` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                data.extend_from_slice(&px);
            }
        }
        Self::new(width, height, data).expect("from_fn produced invalid samples")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Interleaved row-major RGB samples.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Luma of the pixel at (x, y).
    #[inline]
    pub fn luma_at(&self, x: usize, y: usize) -> f64 {
        let [r, g, b] = self.pixel(x, y);
        luma(r, g, b)
    }

    /// Row-major luma plane (width × height).
    pub fn luma_plane(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for px in self.data.chunks_exact(3) {
            out.push(luma(px[0], px[1], px[2]));
        }
        out
    }

    /// Column-major luma: `columns[x][y]`. Used by the column-alignment
    /// distance, where whole columns are compared at once.
    pub fn luma_columns(&self) -> Vec<Vec<f64>> {
        let mut cols = vec![Vec::with_capacity(self.height); self.width];
        for y in 0..self.height {
            for x in 0..self.width {
                cols[x].push(self.luma_at(x, y));
            }
        }
        cols
    }
}

const PNG_MAGIC: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Loads a PNG or binary PPM (P6, maxval 255) image, mapping 8-bit samples
/// to [0, 1] by v/255. The format is detected from the file contents.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else if bytes.starts_with(&PNG_MAGIC) {
        decode_png(&bytes)
    } else {
        Err(Error::UnsupportedFormat(format!(
            "{}: expected PNG or binary PPM (P6)",
            path.display()
        )))
    }
}

/// Saves as PNG or binary PPM chosen by the file extension. Samples are
/// quantized by round(v × 255).
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "ppm" => encode_ppm(img),
        "png" => encode_png(img)?,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "extension '{other}': expected .png or .ppm"
            )))
        }
    };
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[inline]
fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0).round().clamp(0.0, 255.0) as u8
}

fn to_rgb8(img: &Image) -> Vec<u8> {
    img.data.iter().map(|&v| quantize(v)).collect()
}

fn from_rgb8(width: usize, height: usize, raw: &[u8]) -> Result<Image> {
    let data: Vec<f32> = raw.iter().map(|&v| v as f32 / 255.0).collect();
    Image::new(width, height, data)
}

fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(to_rgb8(img));
    out
}

fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 2; // past "P6"
    let mut fields = [0usize; 3];
    for field in &mut fields {
        *field = read_ppm_field(bytes, &mut pos)?;
    }
    // The header ends with exactly one whitespace byte before the raster.
    pos += 1;
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PPM maxval {maxval}: only 255 supported"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage(format!(
            "zero dimension: {width}x{height}"
        )));
    }
    let need = width * height * 3;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::InvalidImage("PPM raster truncated".into()))?;
    from_rgb8(width, height, raster)
}

/// Reads one decimal header field, skipping whitespace and `#` comments.
fn read_ppm_field(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_digit() => break,
            _ => return Err(Error::InvalidImage("malformed PPM header".into())),
        }
    }
    let start = *pos;
    while matches!(bytes.get(*pos), Some(b) if b.is_ascii_digit()) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::InvalidImage("malformed PPM header".into()))
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::InvalidImage(format!("PNG decode: {e}")))?
        .to_rgb8();
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    from_rgb8(w, h, decoded.as_raw())
}

fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(Cursor::new(&mut out));
    encoder
        .write_image(
            &to_rgb8(img),
            img.width as u32,
            img.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::InvalidImage(format!("PNG encode: {e}")))?;
    Ok(out)
}

/// Source coordinate for output index `j` of `n` samples over `m` source
/// samples, under the align-corners convention. A single output sample
/// reads the source center.
#[inline]
fn sample_pos(j: usize, n: usize, m: usize) -> f64 {
    if n == 1 {
        (m as f64 - 1.0) / 2.0
    } else {
        j as f64 * (m as f64 - 1.0) / (n as f64 - 1.0)
    }
}

/// Bilinear resize with align-corners sampling and edge clamping. Resizing
/// to the input dimensions reproduces the input exactly.
pub fn resize_bilinear(img: &Image, new_width: usize, new_height: usize) -> Result<Image> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize to zero dimension: {new_width}x{new_height}"
        )));
    }
    let (w, h) = (img.width, img.height);
    let mut data = Vec::with_capacity(new_width * new_height * 3);
    for oy in 0..new_height {
        let sy = sample_pos(oy, new_height, h);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = sy - y0 as f64;
        for ox in 0..new_width {
            let sx = sample_pos(ox, new_width, w);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = sx - x0 as f64;
            let p00 = img.pixel(x0, y0);
            let p01 = img.pixel(x1, y0);
            let p10 = img.pixel(x0, y1);
            let p11 = img.pixel(x1, y1);
            for c in 0..3 {
                let top = (1.0 - wx) * p00[c] as f64 + wx * p01[c] as f64;
                let bot = (1.0 - wx) * p10[c] as f64 + wx * p11[c] as f64;
                data.push(((1.0 - wy) * top + wy * bot) as f32);
            }
        }
    }
    Image::new(new_width, new_height, data)
}

/// The agent's per-step input: a 40×40×6 block holding the resized
/// original and the resized current image (zero-padded), plus the 20-dim
/// step-countdown vector.
///
/// `pixels` is laid out channel-major: channels 0–2 are the original's
/// RGB, channels 3–5 the current image's RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub pixels: Vec<f32>,
    pub u: [f32; U_DIM],
}

impl Observation {
    pub const PIXEL_LEN: usize = OBS_CHANNELS * OBS_SIZE * OBS_SIZE;
}

/// Builds the observation for a (original, current) image pair.
///
/// The original is resized to width 40 with height scaled proportionally
/// (rounded, capped at 40); the current image is resized to that same
/// height with width scaled by current.width/original.width (rounded,
/// min 1). Both are anchored at the top-left of a zero 40×40 block.
pub fn make_observation(original: &Image, current: &Image, u: &[f32; U_DIM]) -> Result<Observation> {
    if current.width > original.width {
        return Err(Error::DimensionMismatch(format!(
            "current width {} exceeds original width {}",
            current.width, original.width
        )));
    }
    if current.height != original.height {
        return Err(Error::DimensionMismatch(format!(
            "current height {} != original height {}",
            current.height, original.height
        )));
    }
    let oh = ((OBS_SIZE as f64 * original.height as f64 / original.width as f64).round()
        as usize)
        .clamp(1, OBS_SIZE);
    let orig_block = resize_bilinear(original, OBS_SIZE, oh)?;
    let cw = ((OBS_SIZE as f64 * current.width as f64 / original.width as f64).round() as usize)
        .clamp(1, OBS_SIZE);
    let cur_block = resize_bilinear(current, cw, oh)?;

    let mut pixels = vec![0.0f32; Observation::PIXEL_LEN];
    blit(&mut pixels, 0, &orig_block);
    blit(&mut pixels, 3, &cur_block);
    Ok(Observation { pixels, u: *u })
}

/// Copies `src` into channels [c0, c0+3) of a channel-major 40×40 block.
fn blit(pixels: &mut [f32], c0: usize, src: &Image) {
    let plane = OBS_SIZE * OBS_SIZE;
    for y in 0..src.height {
        for x in 0..src.width {
            let px = src.pixel(x, y);
            for c in 0..3 {
                pixels[(c0 + c) * plane + y * OBS_SIZE + x] = px[c];
            }
        }
    }
}

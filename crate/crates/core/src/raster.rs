//! Multi-band rasters with a validity mask, plus the PNG and BND1 codecs.
//!
//! Samples are `f32`, band-sequential, row-major within a band, origin at the
//! top-left pixel. Invalid pixels always carry NaN in every band.
//!
//! BND1 layout (all little-endian):
//!
//! ```text
//! offset 0   b"BND1"
//! offset 4   u32 width
//! offset 8   u32 height
//! offset 12  u32 bands
//! offset 16  f32 samples, width*height*bands, band-sequential
//! ```

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::refine::LabelMap;

pub const BND_MAGIC: &[u8; 4] = b"BND1";
const BND_HEADER_LEN: usize = 16;
const MAX_SAMPLES: u64 = 1 << 31;

#[derive(Debug, Clone)]
pub struct Raster {
    width: u32,
    height: u32,
    bands: u32,
    data: Vec<f32>,
    mask: Vec<bool>,
}

impl Raster {
    /// Builds a raster, writing NaN into every sample of an invalid pixel.
    pub fn new(width: u32, height: u32, bands: u32, mut data: Vec<f32>, mask: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(Error::Shape(format!(
                "raster dimensions must be non-zero, got {width}x{height}x{bands}"
            )));
        }
        let pixels = width as u64 * height as u64;
        if pixels * bands as u64 > MAX_SAMPLES {
            return Err(Error::Shape(format!("{pixels}x{bands} samples exceed 2^31")));
        }
        let pixels = pixels as usize;
        if data.len() != pixels * bands as usize {
            return Err(Error::Shape(format!(
                "expected {} samples, got {}",
                pixels * bands as usize,
                data.len()
            )));
        }
        if mask.len() != pixels {
            return Err(Error::Shape(format!("expected {pixels} mask entries, got {}", mask.len())));
        }
        for b in 0..bands as usize {
            let band = &mut data[b * pixels..(b + 1) * pixels];
            for (p, v) in band.iter_mut().enumerate() {
                if !mask[p] {
                    *v = f32::NAN;
                } else if !v.is_finite() {
                    return Err(Error::Format(format!("non-finite sample at pixel {p}, band {b}")));
                }
            }
        }
        Ok(Self {
            width,
            height,
            bands,
            data,
            mask,
        })
    }

    /// Derives the mask from the data: a pixel is invalid when any band is NaN.
    pub fn from_samples(width: u32, height: u32, bands: u32, data: Vec<f32>) -> Result<Self> {
        let pixels = width as usize * height as usize;
        if data.len() != pixels * bands as usize {
            return Err(Error::Shape(format!(
                "expected {} samples, got {}",
                pixels * bands as usize,
                data.len()
            )));
        }
        let mut mask = vec![true; pixels];
        for (i, v) in data.iter().enumerate() {
            if v.is_nan() {
                mask[i % pixels.max(1)] = false;
            }
        }
        Self::new(width, height, bands, data, mask)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bands(&self) -> u32 {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn sample(&self, band: usize, pixel: usize) -> f32 {
        self.data[band * self.pixels() + pixel]
    }

    pub fn is_valid(&self, pixel: usize) -> bool {
        self.mask[pixel]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn same_grid(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.bands)
    }
}

/// Bitwise equality: NaN positions must coincide.
impl PartialEq for Raster {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bands == other.bands
            && self.mask == other.mask
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub fn load_png(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

/// Decodes an 8-bit gray, gray+alpha, RGB or RGBA PNG. Alpha = 0 marks a
/// pixel invalid and the alpha channel itself is dropped.
pub fn decode_png(bytes: &[u8]) -> Result<Raster> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("unsupported png bit depth {depth:?}; expected 8")));
    }
    let (channels, bands, has_alpha) = match color {
        png::ColorType::Grayscale => (1, 1, false),
        png::ColorType::GrayscaleAlpha => (2, 1, true),
        png::ColorType::Rgb => (3, 3, false),
        png::ColorType::Rgba => (4, 3, true),
        other => return Err(Error::Format(format!("unsupported png color type {other:?}"))),
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let (w, h) = (frame.width, frame.height);
    let pixels = w as usize * h as usize;
    let stride = frame.line_size;

    let mut data = vec![0f32; pixels * bands];
    let mut mask = vec![true; pixels];
    for y in 0..h as usize {
        let row = &buf[y * stride..y * stride + w as usize * channels];
        for x in 0..w as usize {
            let p = y * w as usize + x;
            let px = &row[x * channels..(x + 1) * channels];
            for b in 0..bands {
                data[b * pixels + p] = px[b] as f32 / 255.0;
            }
            if has_alpha && px[channels - 1] == 0 {
                mask[p] = false;
            }
        }
    }
    Raster::new(w, h, bands as u32, data, mask)
}

pub fn load_bnd(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bnd(&bytes)
}

pub fn decode_bnd(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < BND_HEADER_LEN {
        return Err(Error::Format(format!("bnd: truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != BND_MAGIC {
        return Err(Error::Format(format!("bnd: bad magic {:?}", &bytes[0..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let (width, height, bands) = (word(4), word(8), word(12));
    if width == 0 || height == 0 || bands == 0 {
        return Err(Error::Format(format!("bnd: zero dimension {width}x{height}x{bands}")));
    }
    let count = width as u64 * height as u64 * bands as u64;
    if count > MAX_SAMPLES {
        return Err(Error::Format(format!("bnd: {count} samples exceed 2^31")));
    }
    let expected = BND_HEADER_LEN as u64 + 4 * count;
    if (bytes.len() as u64) < expected {
        return Err(Error::Format(format!(
            "bnd: truncated payload, expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes[BND_HEADER_LEN..expected as usize]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Raster::from_samples(width, height, bands, data)
}

pub fn encode_bnd(raster: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(BND_HEADER_LEN + raster.data.len() * 4);
    out.extend_from_slice(BND_MAGIC);
    out.extend_from_slice(&raster.width.to_le_bytes());
    out.extend_from_slice(&raster.height.to_le_bytes());
    out.extend_from_slice(&raster.bands.to_le_bytes());
    for v in &raster.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn save_bnd(raster: &Raster, path: &Path) -> Result<()> {
    if raster.bands == 0 {
        return Err(Error::Shape("refusing to write a 0-band raster".into()));
    }
    write_atomic(path, &encode_bnd(raster))
}

/// Encodes a 1- or 3-band raster as an 8-bit PNG. Samples are clamped to
/// [0,1] and scaled by 255; invalid pixels become black with alpha 0 when the
/// raster has any invalid pixel.
pub fn encode_png(raster: &Raster) -> Result<Vec<u8>> {
    let bands = raster.bands as usize;
    if bands != 1 && bands != 3 {
        return Err(Error::Shape(format!("png output needs 1 or 3 bands, got {bands}")));
    }
    let with_alpha = raster.mask.iter().any(|m| !m);
    let channels = bands + with_alpha as usize;
    let pixels = raster.pixels();
    let mut buf = Vec::with_capacity(pixels * channels);
    for p in 0..pixels {
        for b in 0..bands {
            let v = raster.sample(b, p);
            let byte = if v.is_nan() {
                0
            } else {
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            };
            buf.push(byte);
        }
        if with_alpha {
            buf.push(if raster.mask[p] { 255 } else { 0 });
        }
    }
    let color = match (bands, with_alpha) {
        (1, false) => png::ColorType::Grayscale,
        (1, true) => png::ColorType::GrayscaleAlpha,
        (3, false) => png::ColorType::Rgb,
        _ => png::ColorType::Rgba,
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, raster.width, raster.height);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png encode: {e}")))?;
        writer
            .write_image_data(&buf)
            .map_err(|e| Error::Format(format!("png encode: {e}")))?;
        writer
            .finish()
            .map_err(|e| Error::Format(format!("png encode: {e}")))?;
    }
    Ok(out)
}

pub fn save_png(raster: &Raster, path: &Path) -> Result<()> {
    write_atomic(path, &encode_png(raster)?)
}

/// Loads a raster by extension: `.png` or `.bnd`.
pub fn load_auto(path: &Path) -> Result<Raster> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => load_png(path),
        Some("bnd") => load_bnd(path),
        _ => Err(Error::Format(format!(
            "{}: unknown raster extension (expected .png or .bnd)",
            path.display()
        ))),
    }
}

/// 8-bit RGB color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLACK: Rgb = Rgb([0, 0, 0]);

    pub fn to_hex(self) -> String {
        format!("#{:02X}{:02X}{:02X}", self.0[0], self.0[1], self.0[2])
    }

    pub fn from_hex(s: &str) -> Option<Rgb> {
        let hex = s.strip_prefix('#')?;
        if hex.len() != 6 || !hex.is_ascii() {
            return None;
        }
        let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).ok();
        Some(Rgb([byte(0)?, byte(2)?, byte(4)?]))
    }
}

impl Serialize for Rgb {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Rgb {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Rgb::from_hex(&s).ok_or_else(|| serde::de::Error::custom(format!("bad color {s:?}, expected #RRGGBB")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaletteEntry {
    pub label: i32,
    pub color: Rgb,
    pub name: String,
    pub background: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Palette {
    entries: Vec<PaletteEntry>,
}

impl Palette {
    pub fn new(entries: Vec<PaletteEntry>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.label) {
                return Err(Error::invalid(format!("duplicate palette label {}", e.label)));
            }
        }
        if entries.iter().filter(|e| e.background).count() > 1 {
            return Err(Error::invalid("more than one background palette entry"));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn get(&self, label: i32) -> Option<&PaletteEntry> {
        self.entries.iter().find(|e| e.label == label)
    }

    pub fn background(&self) -> Rgb {
        self.entries
            .iter()
            .find(|e| e.background)
            .map(|e| e.color)
            .unwrap_or(Rgb::BLACK)
    }

    /// Fixed categorical palette for raw cluster ids `0..n`.
    pub fn categorical(n: usize) -> Self {
        const COLORS: [[u8; 3]; 12] = [
            [31, 119, 180],
            [255, 127, 14],
            [44, 160, 44],
            [214, 39, 40],
            [148, 103, 189],
            [140, 86, 75],
            [227, 119, 194],
            [127, 127, 127],
            [188, 189, 34],
            [23, 190, 207],
            [255, 255, 255],
            [255, 221, 0],
        ];
        let entries = (0..n)
            .map(|i| PaletteEntry {
                label: i as i32,
                color: Rgb(COLORS[i % COLORS.len()]),
                name: format!("cluster {i}"),
                background: false,
            })
            .collect();
        Self { entries }
    }
}

/// Paints a label map. Sentinel pixels (noise, invalid) take the background color.
pub fn render_labels(labels: &LabelMap, palette: &Palette) -> Result<Raster> {
    let lookup: std::collections::HashMap<i32, Rgb> =
        palette.entries.iter().map(|e| (e.label, e.color)).collect();
    let bg = palette.background();
    let pixels = labels.labels().len();
    let mut data = vec![0f32; pixels * 3];
    for (p, &l) in labels.labels().iter().enumerate() {
        let color = if l < 0 {
            bg
        } else {
            *lookup.get(&l).ok_or(Error::MissingPaletteEntry(l))?
        };
        for b in 0..3 {
            data[b * pixels + p] = color.0[b] as f32 / 255.0;
        }
    }
    Raster::new(labels.width(), labels.height(), 3, data, vec![true; pixels])
}

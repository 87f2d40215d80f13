//! Label maps, probability maps, and their on-disk formats.
//!
//! Label maps are stored as colour-coded 8-bit PNGs (black background, red
//! artery, blue vein, green uncertain). Probability maps use the VAFP raw
//! float format: a 20-byte little-endian header followed by one float32
//! plane per class.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

/// Number of classes carried by every probability map.
pub const NUM_CLASSES: usize = 4;

/// Tolerance on the per-pixel channel sum accepted when loading a VAFP file.
pub const INGEST_SUM_TOLERANCE: f64 = 1e-4;

/// Tolerance on the per-pixel channel sum of an in-memory [`ProbMap`].
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

const VAFP_MAGIC: &[u8; 4] = b"VAFP";
const VAFP_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("unknown colour {rgb:?} at pixel (row {row}, col {col})")]
    UnknownColor { row: usize, col: usize, rgb: [u8; 3] },
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("cannot encode image: {0}")]
    Encode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes, not a VAFP file")]
    BadMagic,
    #[error("unsupported VAFP version {0}")]
    UnsupportedVersion(u16),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("channel sum {sum} at pixel (row {row}, col {col}) is not 1")]
    Normalization { row: usize, col: usize, sum: f64 },
    #[error("value {value} in channel {channel} at pixel (row {row}, col {col}) is outside [0, 1]")]
    OutOfRange {
        channel: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("invalid class id {0}")]
    BadClassId(u8),
}

/// One of the four segmentation classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Class {
    Background = 0,
    Artery = 1,
    Vein = 2,
    Uncertain = 3,
}

impl Class {
    pub const ALL: [Class; NUM_CLASSES] = [Class::Background, Class::Artery, Class::Vein, Class::Uncertain];
    pub const VESSELS: [Class; 3] = [Class::Artery, Class::Vein, Class::Uncertain];

    pub fn from_id(id: u8) -> Result<Self, RasterError> {
        match id {
            0 => Ok(Class::Background),
            1 => Ok(Class::Artery),
            2 => Ok(Class::Vein),
            3 => Ok(Class::Uncertain),
            other => Err(RasterError::BadClassId(other)),
        }
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Background => "background",
            Class::Artery => "artery",
            Class::Vein => "vein",
            Class::Uncertain => "uncertain",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Class {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "background" | "0" => Ok(Class::Background),
            "artery" | "a" | "1" => Ok(Class::Artery),
            "vein" | "v" | "2" => Ok(Class::Vein),
            "uncertain" | "u" | "3" => Ok(Class::Uncertain),
            other => Err(format!("unknown class '{other}'")),
        }
    }
}

/// RGB colour for each class id, indexed by class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Palette {
    pub colors: [[u8; 3]; NUM_CLASSES],
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            colors: [[0, 0, 0], [255, 0, 0], [0, 0, 255], [0, 255, 0]],
        }
    }
}

impl Palette {
    /// Parses `r,g,b;r,g,b;r,g,b;r,g,b` in class order (background, artery, vein, uncertain).
    pub fn parse(spec: &str) -> Result<Self, String> {
        let entries: Vec<&str> = spec.split(';').collect();
        if entries.len() != NUM_CLASSES {
            return Err(format!("palette needs {NUM_CLASSES} colours, got {}", entries.len()));
        }
        let mut colors = [[0u8; 3]; NUM_CLASSES];
        for (slot, entry) in colors.iter_mut().zip(&entries) {
            let parts: Vec<&str> = entry.split(',').collect();
            if parts.len() != 3 {
                return Err(format!("bad colour '{entry}'"));
            }
            for (c, p) in slot.iter_mut().zip(parts) {
                *c = p.trim().parse().map_err(|_| format!("bad channel value '{p}'"))?;
            }
        }
        for i in 0..NUM_CLASSES {
            for j in i + 1..NUM_CLASSES {
                if colors[i] == colors[j] {
                    return Err(format!("palette colour {:?} used twice", colors[i]));
                }
            }
        }
        Ok(Self { colors })
    }

    fn class_of(&self, rgb: [u8; 3]) -> Option<u8> {
        self.colors.iter().position(|c| *c == rgb).map(|i| i as u8)
    }
}

/// Grid of hard class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self, RasterError> {
        if height == 0 || width == 0 {
            return Err(RasterError::ShapeMismatch(format!("empty map {height}x{width}")));
        }
        if labels.len() != height * width {
            return Err(RasterError::ShapeMismatch(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(RasterError::BadClassId(bad));
        }
        Ok(Self { height, width, labels })
    }

    /// Map filled with a single class.
    pub fn filled(height: usize, width: usize, class: Class) -> Self {
        assert!(height > 0 && width > 0, "empty label map");
        Self {
            height,
            width,
            labels: vec![class.id(); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, class: Class) {
        self.labels[row * self.width + col] = class.id();
    }

    pub fn same_shape<T: Shaped>(&self, other: &T) -> bool {
        self.height == other.shape().0 && self.width == other.shape().1
    }

    pub fn count(&self, class: Class) -> usize {
        self.labels.iter().filter(|&&l| l == class.id()).count()
    }
}

/// Anything with a (height, width) raster shape.
pub trait Shaped {
    fn shape(&self) -> (usize, usize);
}

impl Shaped for LabelMap {
    fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl Shaped for ProbMap {
    fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Per-class probability planes, plane-major: `values[c * h * w + row * w + col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ProbMap {
    /// Validates range and per-pixel normalisation (within [`PROB_SUM_TOLERANCE`]).
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, RasterError> {
        if height == 0 || width == 0 {
            return Err(RasterError::ShapeMismatch(format!("empty map {height}x{width}")));
        }
        if values.len() != NUM_CLASSES * height * width {
            return Err(RasterError::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{NUM_CLASSES} map",
                values.len()
            )));
        }
        let map = Self { height, width, values };
        map.check_range()?;
        map.check_sums(PROB_SUM_TOLERANCE)?;
        Ok(map)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn plane(&self, class: Class) -> &[f64] {
        let n = self.pixels();
        &self.values[class.index() * n..(class.index() + 1) * n]
    }

    pub fn get(&self, class: Class, row: usize, col: usize) -> f64 {
        self.values[class.index() * self.pixels() + row * self.width + col]
    }

    /// Copy with the flat entry `index` shifted by `delta`, skipping validation.
    ///
    /// Derivatives of the losses are taken with respect to each probability
    /// independently, so finite-difference probes must leave the simplex.
    pub fn probe(&self, index: usize, delta: f64) -> ProbMap {
        let mut out = self.clone();
        out.values[index] += delta;
        out
    }

    fn check_range(&self) -> Result<(), RasterError> {
        let n = self.pixels();
        for (i, &v) in self.values.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                let p = i % n;
                return Err(RasterError::OutOfRange {
                    channel: i / n,
                    row: p / self.width,
                    col: p % self.width,
                    value: v,
                });
            }
        }
        Ok(())
    }

    fn channel_sum(&self, p: usize) -> f64 {
        let n = self.pixels();
        (0..NUM_CLASSES).map(|c| self.values[c * n + p]).sum()
    }

    fn check_sums(&self, tol: f64) -> Result<(), RasterError> {
        for p in 0..self.pixels() {
            let sum = self.channel_sum(p);
            if (sum - 1.0).abs() > tol {
                return Err(RasterError::Normalization {
                    row: p / self.width,
                    col: p % self.width,
                    sum,
                });
            }
        }
        Ok(())
    }
}

/// Per-pixel argmax; ties go to the lowest class id.
pub fn harden(map: &ProbMap) -> LabelMap {
    let n = map.pixels();
    let labels = (0..n)
        .map(|p| {
            let mut best = 0;
            let mut best_v = map.values[p];
            for c in 1..NUM_CLASSES {
                let v = map.values[c * n + p];
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            best as u8
        })
        .collect();
    LabelMap {
        height: map.height,
        width: map.width,
        labels,
    }
}

pub fn one_hot(map: &LabelMap) -> ProbMap {
    let n = map.height * map.width;
    let mut values = vec![0.0; NUM_CLASSES * n];
    for (p, &l) in map.labels.iter().enumerate() {
        values[l as usize * n + p] = 1.0;
    }
    ProbMap {
        height: map.height,
        width: map.width,
        values,
    }
}

pub fn load_label_png(path: impl AsRef<Path>) -> Result<LabelMap, RasterError> {
    load_label_png_with(path, &Palette::default())
}

pub fn load_label_png_with(path: impl AsRef<Path>, palette: &Palette) -> Result<LabelMap, RasterError> {
    let file = BufReader::new(File::open(path)?);
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| RasterError::Decode(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RasterError::Decode("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| RasterError::Decode(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(RasterError::Decode(format!(
            "expected 8-bit samples, got {:?}",
            info.bit_depth
        )));
    }
    let stride = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(RasterError::Decode(format!("expected an RGB image, got {other:?}"))),
    };
    let (height, width) = (info.height as usize, info.width as usize);
    let mut labels = Vec::with_capacity(height * width);
    for row in 0..height {
        let line = &buf[row * info.line_size..row * info.line_size + width * stride];
        for col in 0..width {
            let px = &line[col * stride..col * stride + 3];
            let rgb = [px[0], px[1], px[2]];
            let class = palette
                .class_of(rgb)
                .ok_or(RasterError::UnknownColor { row, col, rgb })?;
            labels.push(class);
        }
    }
    LabelMap::new(height, width, labels)
}

pub fn save_label_png(map: &LabelMap, path: impl AsRef<Path>) -> Result<(), RasterError> {
    save_label_png_with(map, path, &Palette::default())
}

pub fn save_label_png_with(map: &LabelMap, path: impl AsRef<Path>, palette: &Palette) -> Result<(), RasterError> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, map.width as u32, map.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| RasterError::Encode(e.to_string()))?;
    let data: Vec<u8> = map.labels.iter().flat_map(|&l| palette.colors[l as usize]).collect();
    writer
        .write_image_data(&data)
        .map_err(|e| RasterError::Encode(e.to_string()))?;
    writer.finish().map_err(|e| RasterError::Encode(e.to_string()))?;
    Ok(())
}

/// Raw VAFP contents before any probability validation.
#[derive(Debug, Clone, PartialEq)]
pub struct VafpPlanes {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

pub fn read_vafp(mut reader: impl Read) -> Result<VafpPlanes, RasterError> {
    let mut header = [0u8; 20];
    reader.read_exact(&mut header)?;
    if &header[0..4] != VAFP_MAGIC {
        return Err(RasterError::BadMagic);
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VAFP_VERSION {
        return Err(RasterError::UnsupportedVersion(version));
    }
    let word = |i: usize| u32::from_le_bytes([header[i], header[i + 1], header[i + 2], header[i + 3]]) as usize;
    let (height, width, channels) = (word(8), word(12), word(16));
    if height == 0 || width == 0 || channels == 0 {
        return Err(RasterError::ShapeMismatch(format!(
            "header declares {height}x{width}x{channels}"
        )));
    }
    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| RasterError::ShapeMismatch("header dimensions overflow".into()))?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != count * 4 {
        return Err(RasterError::ShapeMismatch(format!(
            "expected {} payload bytes, found {}",
            count * 4,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(VafpPlanes {
        height,
        width,
        channels,
        values,
    })
}

pub fn write_vafp(mut writer: impl Write, planes: &VafpPlanes) -> Result<(), RasterError> {
    assert_eq!(planes.values.len(), planes.height * planes.width * planes.channels);
    writer.write_all(VAFP_MAGIC)?;
    writer.write_all(&VAFP_VERSION.to_le_bytes())?;
    writer.write_all(&0u16.to_le_bytes())?;
    for dim in [planes.height, planes.width, planes.channels] {
        writer.write_all(&(dim as u32).to_le_bytes())?;
    }
    for v in &planes.values {
        writer.write_all(&v.to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

/// Validates a decoded VAFP payload as a probability map.
///
/// Pixels whose channel sum is off by more than [`PROB_SUM_TOLERANCE`] but
/// within [`INGEST_SUM_TOLERANCE`] are renormalised; pixels already within
/// the tighter tolerance keep their exact stored values.
pub fn probmap_from_planes(planes: &VafpPlanes) -> Result<ProbMap, RasterError> {
    if planes.channels != NUM_CLASSES {
        return Err(RasterError::ShapeMismatch(format!(
            "expected {NUM_CLASSES} channels, found {}",
            planes.channels
        )));
    }
    let mut map = ProbMap {
        height: planes.height,
        width: planes.width,
        values: planes.values.iter().map(|&v| v as f64).collect(),
    };
    map.check_range()?;
    map.check_sums(INGEST_SUM_TOLERANCE)?;
    let n = map.pixels();
    for p in 0..n {
        let sum = map.channel_sum(p);
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            for c in 0..NUM_CLASSES {
                map.values[c * n + p] /= sum;
            }
        }
    }
    Ok(map)
}

pub fn load_probmap(path: impl AsRef<Path>) -> Result<ProbMap, RasterError> {
    let planes = read_vafp(BufReader::new(File::open(path)?))?;
    probmap_from_planes(&planes)
}

pub fn save_probmap(map: &ProbMap, path: impl AsRef<Path>) -> Result<(), RasterError> {
    save_planes(map.height, map.width, NUM_CLASSES, &map.values, path)
}

/// Writes arbitrary f64 planes (e.g. a loss gradient) as VAFP float32 data.
pub fn save_planes(
    height: usize,
    width: usize,
    channels: usize,
    values: &[f64],
    path: impl AsRef<Path>,
) -> Result<(), RasterError> {
    let planes = VafpPlanes {
        height,
        width,
        channels,
        values: values.iter().map(|&v| v as f32).collect(),
    };
    write_vafp(BufWriter::new(File::create(path)?), &planes)
}

//! Nine-band image cubes and the `SAMSCUBE` container format.
//!
//! A cube holds one registered plane per LED wavelength, always in ascending
//! wavelength order: the two fluorescence excitations (385, 405 nm) followed
//! by the seven absorption illuminations (465 to 660 nm).
//!
//! On disk:
//!
//! ```text
//! magic       8 bytes   "SAMSCUBE"
//! version     u16       1
//! width       u32
//! height      u32
//! band_count  u16
//! per band    u16 wavelength_nm, u8 modality (0 = fluorescence, 1 = absorption)
//! payload     band_count planes, each row-major f32
//! meta        optional: u32 pair count, then (u32 len, utf-8 key, u32 len, utf-8 value)*
//! ```
//!
//! All integers and floats are little-endian. The meta block is omitted
//! entirely when there are no key/value pairs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SAMSCUBE";
pub const VERSION: u16 = 1;

pub const FLUORESCENCE_NM: [u16; 2] = [385, 405];
pub const ABSORPTION_NM: [u16; 7] = [465, 500, 520, 595, 620, 635, 660];
/// Canonical band order of a pipeline cube.
pub const BAND_NM: [u16; 9] = [385, 405, 465, 500, 520, 595, 620, 635, 660];
pub const BAND_COUNT: usize = BAND_NM.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Fluorescence,
    Absorption,
}

impl Modality {
    fn code(self) -> u8 {
        match self {
            Modality::Fluorescence => 0,
            Modality::Absorption => 1,
        }
    }
}

/// One LED wavelength of the instrument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Band {
    wavelength_nm: u16,
}

impl Band {
    pub fn new(wavelength_nm: u16) -> Result<Self> {
        if BAND_NM.contains(&wavelength_nm) {
            Ok(Band { wavelength_nm })
        } else {
            Err(Error::UnknownBand(wavelength_nm))
        }
    }

    pub fn all() -> impl Iterator<Item = Band> {
        BAND_NM.iter().map(|&wavelength_nm| Band { wavelength_nm })
    }

    pub fn wavelength_nm(self) -> u16 {
        self.wavelength_nm
    }

    pub fn modality(self) -> Modality {
        if FLUORESCENCE_NM.contains(&self.wavelength_nm) {
            Modality::Fluorescence
        } else {
            Modality::Absorption
        }
    }

    /// Position in the canonical band order.
    pub fn index(self) -> usize {
        BAND_NM
            .iter()
            .position(|&nm| nm == self.wavelength_nm)
            .expect("band wavelengths are validated on construction")
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} nm", self.wavelength_nm)
    }
}

/// A single-band intensity image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image2D {
    /// Wrap a pixel buffer. Rejects empty images, wrong lengths and
    /// non-finite intensities.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DimensionMismatch(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData("image pixels".into()));
        }
        Ok(Image2D {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(width > 0 && height > 0 && value.is_finite());
        Image2D {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Build an image from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn same_size(&self, other: &Image2D) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    #[cfg(test)]
    pub(crate) fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// A registered nine-band stack for one field of view.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageCube {
    planes: Vec<Image2D>,
    meta: BTreeMap<String, String>,
}

impl ImageCube {
    /// Build a cube from nine planes given in canonical band order.
    pub fn new(planes: Vec<Image2D>) -> Result<Self> {
        if planes.len() != BAND_COUNT {
            return Err(Error::DimensionMismatch(format!(
                "a cube needs {BAND_COUNT} planes, got {}",
                planes.len()
            )));
        }
        let first = &planes[0];
        if let Some((i, p)) = planes.iter().enumerate().find(|(_, p)| !p.same_size(first)) {
            return Err(Error::DimensionMismatch(format!(
                "plane {i} is {}x{}, plane 0 is {}x{}",
                p.width, p.height, first.width, first.height
            )));
        }
        Ok(ImageCube {
            planes,
            meta: BTreeMap::new(),
        })
    }

    /// Build a cube from `(band, plane)` pairs in any order.
    pub fn from_bands(bands: Vec<(Band, Image2D)>) -> Result<Self> {
        let mut slots: Vec<Option<Image2D>> = vec![None; BAND_COUNT];
        for (band, img) in bands {
            let slot = &mut slots[band.index()];
            if slot.is_some() {
                return Err(Error::DimensionMismatch(format!("duplicate band {band}")));
            }
            *slot = Some(img);
        }
        let planes = slots
            .into_iter()
            .zip(BAND_NM)
            .map(|(p, nm)| p.ok_or(Error::UnknownBand(nm)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(planes)
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        ImageCube {
            planes: vec![Image2D::zeros(width, height); BAND_COUNT],
            meta: BTreeMap::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.planes[0].width
    }

    pub fn height(&self) -> usize {
        self.planes[0].height
    }

    pub fn planes(&self) -> &[Image2D] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<Image2D> {
        self.planes
    }

    pub fn plane(&self, index: usize) -> &Image2D {
        &self.planes[index]
    }

    pub fn bands(&self) -> impl Iterator<Item = (Band, &Image2D)> {
        Band::all().zip(self.planes.iter())
    }

    /// The plane recorded at `wavelength_nm`.
    pub fn band(&self, wavelength_nm: u16) -> Result<&Image2D> {
        let band = Band::new(wavelength_nm)?;
        Ok(&self.planes[band.index()])
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.meta
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    /// Pixelwise mean of the seven absorption planes.
    pub fn composite_absorption(&self) -> Image2D {
        let (w, h) = (self.width(), self.height());
        let mut acc = vec![0.0f64; w * h];
        for (band, plane) in self.bands() {
            if band.modality() != Modality::Absorption {
                continue;
            }
            for (a, &v) in acc.iter_mut().zip(&plane.data) {
                *a += f64::from(v);
            }
        }
        let n = ABSORPTION_NM.len() as f64;
        Image2D {
            width: w,
            height: h,
            data: acc.into_iter().map(|s| (s / n) as f32).collect(),
        }
    }
}

/// Raw content of a `SAMSCUBE` file with any number of bands.
///
/// Calibration frames use this directly with a single band.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub bands: Vec<(Band, Image2D)>,
    pub meta: BTreeMap<String, String>,
}

impl FrameSet {
    pub fn single(band: Band, image: Image2D) -> Self {
        FrameSet {
            bands: vec![(band, image)],
            meta: BTreeMap::new(),
        }
    }
}

impl From<ImageCube> for FrameSet {
    fn from(cube: ImageCube) -> Self {
        FrameSet {
            bands: Band::all().zip(cube.planes).collect(),
            meta: cube.meta,
        }
    }
}

impl TryFrom<FrameSet> for ImageCube {
    type Error = Error;

    fn try_from(frames: FrameSet) -> Result<Self> {
        if frames.bands.len() != BAND_COUNT {
            return Err(Error::MalformedFile(format!(
                "pipeline cube needs {BAND_COUNT} bands, file has {}",
                frames.bands.len()
            )));
        }
        if frames.bands.iter().map(|(b, _)| b.wavelength_nm()).ne(BAND_NM) {
            return Err(Error::MalformedFile("bands are not in canonical order".into()));
        }
        let mut cube = ImageCube::new(frames.bands.into_iter().map(|(_, img)| img).collect())?;
        cube.meta = frames.meta;
        Ok(cube)
    }
}

/// Size in bytes of the fixed header for `band_count` bands.
pub fn header_len(band_count: usize) -> usize {
    8 + 2 + 4 + 4 + 2 + 3 * band_count
}

pub fn encode_frames(frames: &FrameSet) -> Result<Vec<u8>> {
    let Some((_, first)) = frames.bands.first() else {
        return Err(Error::DimensionMismatch("no bands to write".into()));
    };
    if frames.bands.len() > 255 {
        return Err(Error::DimensionMismatch(format!("{} bands exceeds 255", frames.bands.len())));
    }
    let (w, h) = (first.width, first.height);
    for (band, img) in &frames.bands {
        if !img.same_size(first) {
            return Err(Error::DimensionMismatch(format!(
                "band {band} is {}x{}, expected {w}x{h}",
                img.width, img.height
            )));
        }
    }
    let mut seen = frames.bands.iter().map(|(b, _)| *b).collect::<Vec<_>>();
    seen.sort();
    seen.dedup();
    if seen.len() != frames.bands.len() {
        return Err(Error::DimensionMismatch("duplicate wavelength".into()));
    }

    let n = frames.bands.len();
    let mut out = Vec::with_capacity(header_len(n) + 4 * w * h * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(n as u16).to_le_bytes());
    for (band, _) in &frames.bands {
        out.extend_from_slice(&band.wavelength_nm.to_le_bytes());
        out.push(band.modality().code());
    }
    for (_, img) in &frames.bands {
        for v in &img.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if !frames.meta.is_empty() {
        out.extend_from_slice(&(frames.meta.len() as u32).to_le_bytes());
        for (k, v) in &frames.meta {
            for s in [k, v] {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::MalformedFile(format!("truncated while reading {what}"))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::MalformedFile(format!("{what} is not utf-8")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_frames(bytes: &[u8]) -> Result<FrameSet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::MalformedFile("bad magic".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::MalformedFile(format!("unsupported version {version}")));
    }
    let w = r.u32("width")? as usize;
    let h = r.u32("height")? as usize;
    let n = r.u16("band count")? as usize;
    if w == 0 || h == 0 {
        return Err(Error::DimensionMismatch(format!("header declares a {w}x{h} image")));
    }
    if n == 0 || n > 255 {
        return Err(Error::MalformedFile(format!("band count {n} outside 1..=255")));
    }
    let mut bands = Vec::with_capacity(n);
    for _ in 0..n {
        let nm = r.u16("band wavelength")?;
        let code = r.u8("band modality")?;
        let band = Band::new(nm).map_err(|_| Error::MalformedFile(format!("unknown wavelength {nm} nm")))?;
        if band.modality().code() != code {
            return Err(Error::MalformedFile(format!("modality {code} does not match {band}")));
        }
        if bands.contains(&band) {
            return Err(Error::MalformedFile(format!("duplicate band {band}")));
        }
        bands.push(band);
    }
    let plane_bytes = w
        .checked_mul(h)
        .and_then(|p| p.checked_mul(4))
        .ok_or_else(|| Error::DimensionMismatch(format!("{w}x{h} plane overflows")))?;
    if plane_bytes.checked_mul(n).is_none_or(|total| total > r.remaining()) {
        return Err(Error::MalformedFile(format!(
            "payload truncated: {n} planes of {w}x{h} need {} bytes, {} available",
            plane_bytes.saturating_mul(n),
            r.remaining()
        )));
    }
    let mut out = Vec::with_capacity(n);
    for band in bands {
        let raw = r.take(plane_bytes, "pixel plane")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData(format!("plane {band}")));
        }
        out.push((band, Image2D { width: w, height: h, data }));
    }
    let mut meta = BTreeMap::new();
    if r.remaining() > 0 {
        let pairs = r.u32("meta count")?;
        for _ in 0..pairs {
            let k = r.string("meta key")?;
            let v = r.string("meta value")?;
            meta.insert(k, v);
        }
        if r.remaining() > 0 {
            return Err(Error::MalformedFile(format!("{} trailing bytes", r.remaining())));
        }
    }
    Ok(FrameSet { bands: out, meta })
}

pub fn read_frames(path: impl AsRef<Path>) -> Result<FrameSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).at(path))?;
    decode_frames(&bytes).map_err(|e| e.at(path))
}

pub fn write_frames(frames: &FrameSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_frames(frames).map_err(|e| e.at(path))?;
    fs::write(path, bytes).map_err(|e| Error::from(e).at(path))
}

/// Read a nine-band pipeline cube.
pub fn read_cube(path: impl AsRef<Path>) -> Result<ImageCube> {
    let path = path.as_ref();
    ImageCube::try_from(read_frames(path)?).map_err(|e| e.at(path))
}

pub fn write_cube(cube: &ImageCube, path: impl AsRef<Path>) -> Result<()> {
    write_frames(&FrameSet::from(cube.clone()), path)
}

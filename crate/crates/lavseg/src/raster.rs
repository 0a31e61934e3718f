//! Multispectral scene representation and band math.
//!
//! A scene is a set of named reflectance planes (the 12 Sentinel-2 L2A
//! bands, optionally plus derived NDVI/NDMI planes). Bands natively come
//! at 10 m, 20 m, or 60 m ground resolution; [`align_bands`] resamples
//! everything onto the 10 m grid. Scenes and ground-truth masks are
//! stored in the compact little-endian `MSR1`/`MSK1` formats documented
//! in `docs/formats.md`.

use std::convert::TryInto;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 12 Sentinel-2 L2A spectral bands (L2A has no B10).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BandId {
    B01,
    B02,
    B03,
    B04,
    B05,
    B06,
    B07,
    B08,
    B8A,
    B09,
    B11,
    B12,
}

pub const BAND_COUNT: usize = 12;

impl BandId {
    /// All bands in canonical (enumeration) order.
    pub const ALL: [BandId; BAND_COUNT] = [
        BandId::B01,
        BandId::B02,
        BandId::B03,
        BandId::B04,
        BandId::B05,
        BandId::B06,
        BandId::B07,
        BandId::B08,
        BandId::B8A,
        BandId::B09,
        BandId::B11,
        BandId::B12,
    ];

    /// Native ground resolution in metres: 10, 20, or 60.
    pub fn resolution_m(self) -> u32 {
        match self {
            BandId::B02 | BandId::B03 | BandId::B04 | BandId::B08 => 10,
            BandId::B05 | BandId::B06 | BandId::B07 | BandId::B8A | BandId::B11 | BandId::B12 => 20,
            BandId::B01 | BandId::B09 => 60,
        }
    }

    pub fn ordinal(self) -> u8 {
        Self::ALL.iter().position(|&b| b == self).unwrap() as u8
    }

    pub fn from_ordinal(ord: u8) -> Option<BandId> {
        Self::ALL.get(ord as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BandId::B01 => "B01",
            BandId::B02 => "B02",
            BandId::B03 => "B03",
            BandId::B04 => "B04",
            BandId::B05 => "B05",
            BandId::B06 => "B06",
            BandId::B07 => "B07",
            BandId::B08 => "B08",
            BandId::B8A => "B8A",
            BandId::B09 => "B09",
            BandId::B11 => "B11",
            BandId::B12 => "B12",
        }
    }
}

/// Derived spectral indices stacked alongside the raw bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DerivedIndex {
    Ndvi,
    Ndmi,
}

impl DerivedIndex {
    pub fn ordinal(self) -> u8 {
        match self {
            DerivedIndex::Ndvi => 0,
            DerivedIndex::Ndmi => 1,
        }
    }

    pub fn from_ordinal(ord: u8) -> Option<DerivedIndex> {
        match ord {
            0 => Some(DerivedIndex::Ndvi),
            1 => Some(DerivedIndex::Ndmi),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DerivedIndex::Ndvi => "NDVI",
            DerivedIndex::Ndmi => "NDMI",
        }
    }
}

/// Identity of one raster plane: a raw band or a derived index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlaneId {
    Band(BandId),
    Index(DerivedIndex),
}

impl PlaneId {
    pub fn name(self) -> &'static str {
        match self {
            PlaneId::Band(b) => b.name(),
            PlaneId::Index(i) => i.name(),
        }
    }
}

impl fmt::Display for PlaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A single row-major plane of 32-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Plane> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "plane dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Argument(format!(
                "plane data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Plane {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// A multispectral scene: an ordered set of uniquely-identified planes.
///
/// Planes may sit on different grids before [`align_bands`] runs; an
/// *aligned* raster has every plane on the shared 10 m grid. Values are
/// reflectances in `[0, 1]` for bands and `[-1, 1]` for derived indices;
/// non-finite values are rejected at construction.
#[derive(Debug, Clone)]
pub struct MultispectralRaster {
    planes: Vec<(PlaneId, Plane)>,
}

impl MultispectralRaster {
    pub fn new(planes: Vec<(PlaneId, Plane)>) -> Result<MultispectralRaster> {
        if planes.is_empty() {
            return Err(Error::Argument("raster must contain at least one plane".into()));
        }
        for (i, (id, plane)) in planes.iter().enumerate() {
            for (j, (other, _)) in planes.iter().enumerate() {
                if i < j && id == other {
                    return Err(Error::Argument(format!("duplicate plane {id}")));
                }
            }
            if let Some(pos) = plane.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Argument(format!(
                    "non-finite value in plane {id} at element {pos}"
                )));
            }
        }
        Ok(MultispectralRaster { planes })
    }

    pub fn planes(&self) -> &[(PlaneId, Plane)] {
        &self.planes
    }

    pub fn plane(&self, id: PlaneId) -> Option<&Plane> {
        self.planes.iter().find(|(pid, _)| *pid == id).map(|(_, p)| p)
    }

    pub fn band(&self, band: BandId) -> Result<&Plane> {
        self.plane(PlaneId::Band(band)).ok_or(Error::BandMissing(band))
    }

    /// Append a plane; fails on duplicates or non-finite data.
    pub fn push(&mut self, id: PlaneId, plane: Plane) -> Result<()> {
        if self.plane(id).is_some() {
            return Err(Error::Argument(format!("duplicate plane {id}")));
        }
        if let Some(pos) = plane.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite value in plane {id} at element {pos}"
            )));
        }
        self.planes.push((id, plane));
        Ok(())
    }

    /// Dimensions of the 10 m reference grid: those of the first 10 m band.
    pub fn grid_dims(&self) -> Result<(usize, usize)> {
        self.planes
            .iter()
            .find_map(|(id, p)| match id {
                PlaneId::Band(b) if b.resolution_m() == 10 => Some((p.width, p.height)),
                _ => None,
            })
            .ok_or_else(|| Error::Argument("raster has no 10 m band".into()))
    }

    /// True when every plane shares one grid.
    pub fn is_aligned(&self) -> bool {
        let (w, h) = (self.planes[0].1.width, self.planes[0].1.height);
        self.planes.iter().all(|(_, p)| p.width == w && p.height == h)
    }

    /// Shared dimensions of an aligned raster.
    pub fn dims(&self) -> Result<(usize, usize)> {
        if !self.is_aligned() {
            return Err(Error::Argument("raster planes are not aligned to one grid".into()));
        }
        Ok((self.planes[0].1.width, self.planes[0].1.height))
    }
}

/// Binary ground-truth mask (1 = target crop).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl MaskRaster {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<MaskRaster> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Argument(format!(
                "mask data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|&v| v > 1) {
            return Err(Error::Argument(format!(
                "mask value {} at element {pos} is not binary",
                data[pos]
            )));
        }
        Ok(MaskRaster {
            width,
            height,
            data,
        })
    }

    pub fn positive_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn positive_fraction(&self) -> f64 {
        self.positive_count() as f64 / self.data.len() as f64
    }
}

/// Spectral channel combinations fed to the models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandCombo {
    Rgb,
    Swir,
    Cir,
    All12,
    All14,
}

impl BandCombo {
    pub const ALL: [BandCombo; 5] = [
        BandCombo::Rgb,
        BandCombo::Swir,
        BandCombo::Cir,
        BandCombo::All12,
        BandCombo::All14,
    ];

    /// Ordered channel list for this combination.
    pub fn channels(self) -> Vec<PlaneId> {
        use BandId::*;
        match self {
            BandCombo::Rgb => vec![PlaneId::Band(B04), PlaneId::Band(B03), PlaneId::Band(B02)],
            BandCombo::Swir => vec![PlaneId::Band(B12), PlaneId::Band(B8A), PlaneId::Band(B04)],
            BandCombo::Cir => vec![PlaneId::Band(B08), PlaneId::Band(B04), PlaneId::Band(B03)],
            BandCombo::All12 => BandId::ALL.iter().map(|&b| PlaneId::Band(b)).collect(),
            BandCombo::All14 => {
                let mut all: Vec<PlaneId> = BandId::ALL.iter().map(|&b| PlaneId::Band(b)).collect();
                all.push(PlaneId::Index(DerivedIndex::Ndvi));
                all.push(PlaneId::Index(DerivedIndex::Ndmi));
                all
            }
        }
    }

    pub fn channel_count(self) -> usize {
        match self {
            BandCombo::Rgb | BandCombo::Swir | BandCombo::Cir => 3,
            BandCombo::All12 => 12,
            BandCombo::All14 => 14,
        }
    }

    /// Positions of this combo's channels within the canonical 14-channel
    /// stack (12 bands in enumeration order, then NDVI, then NDMI).
    pub fn indices_in_all14(self) -> Vec<usize> {
        self.channels()
            .iter()
            .map(|id| match id {
                PlaneId::Band(b) => b.ordinal() as usize,
                PlaneId::Index(i) => BAND_COUNT + i.ordinal() as usize,
            })
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            BandCombo::Rgb => "rgb",
            BandCombo::Swir => "swir",
            BandCombo::Cir => "cir",
            BandCombo::All12 => "all12",
            BandCombo::All14 => "all14",
        }
    }
}

impl fmt::Display for BandCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BandCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<BandCombo> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(BandCombo::Rgb),
            "swir" => Ok(BandCombo::Swir),
            "cir" => Ok(BandCombo::Cir),
            "all12" => Ok(BandCombo::All12),
            "all14" => Ok(BandCombo::All14),
            other => Err(Error::Argument(format!("unknown band combo '{other}'"))),
        }
    }
}

/// A C×H×W channel stack produced by [`select_combo`].
#[derive(Debug, Clone)]
pub struct ChannelStack {
    pub channels: Vec<PlaneId>,
    pub width: usize,
    pub height: usize,
    /// Channel-planar, row-major: `data[c*H*W + y*W + x]`.
    pub data: Vec<f32>,
}

/// Digital number to surface reflectance: `clamp(dn / 10000, 0, 1)`.
pub fn normalize_dn(dn: u32) -> f32 {
    ((dn as f64) / 10000.0).clamp(0.0, 1.0) as f32
}

/// Resampling method for plane resizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMethod {
    Nearest,
    Bilinear,
}

/// Pixel-center source coordinate for destination index `i`.
#[inline]
fn src_coord(i: usize, src_n: usize, dst_n: usize) -> f64 {
    (i as f64 + 0.5) * (src_n as f64) / (dst_n as f64) - 0.5
}

/// Nearest-neighbor source index (floor of the pixel-center coordinate,
/// clamped to the valid range).
#[inline]
pub(crate) fn nearest_src_index(i: usize, src_n: usize, dst_n: usize) -> usize {
    let c = src_coord(i, src_n, dst_n).floor();
    (c.max(0.0) as usize).min(src_n - 1)
}

/// Resample a plane to `dst_w` x `dst_h`.
///
/// Bilinear sampling is edge-clamped and pixel-center aligned (sampling
/// at `(i + 0.5) * src/dst - 0.5`); nearest takes the floor of the same
/// coordinate. Resampling to the source dimensions is the identity for
/// both methods.
pub fn resample_plane(
    plane: &Plane,
    dst_w: usize,
    dst_h: usize,
    method: ResampleMethod,
) -> Result<Plane> {
    if dst_w == 0 || dst_h == 0 {
        return Err(Error::Argument(format!(
            "resample target must be positive, got {dst_w}x{dst_h}"
        )));
    }
    let (sw, sh) = (plane.width, plane.height);
    let mut out = vec![0f32; dst_w * dst_h];
    match method {
        ResampleMethod::Nearest => {
            let xs: Vec<usize> = (0..dst_w).map(|x| nearest_src_index(x, sw, dst_w)).collect();
            for y in 0..dst_h {
                let sy = nearest_src_index(y, sh, dst_h);
                let src_row = &plane.data[sy * sw..(sy + 1) * sw];
                let dst_row = &mut out[y * dst_w..(y + 1) * dst_w];
                for (d, &sx) in dst_row.iter_mut().zip(&xs) {
                    *d = src_row[sx];
                }
            }
        }
        ResampleMethod::Bilinear => {
            // Precompute per-axis sample pairs and weights.
            let axis = |n_src: usize, n_dst: usize| -> Vec<(usize, usize, f64)> {
                (0..n_dst)
                    .map(|i| {
                        let c = src_coord(i, n_src, n_dst);
                        let lo = c.floor();
                        let t = c - lo;
                        let i0 = (lo.max(0.0) as usize).min(n_src - 1);
                        let i1 = ((lo + 1.0).max(0.0) as usize).min(n_src - 1);
                        (i0, i1, t)
                    })
                    .collect()
            };
            let xw = axis(sw, dst_w);
            let yw = axis(sh, dst_h);
            for (y, &(y0, y1, ty)) in yw.iter().enumerate() {
                let row0 = &plane.data[y0 * sw..(y0 + 1) * sw];
                let row1 = &plane.data[y1 * sw..(y1 + 1) * sw];
                let dst_row = &mut out[y * dst_w..(y + 1) * dst_w];
                for (d, &(x0, x1, tx)) in dst_row.iter_mut().zip(&xw) {
                    let top = (1.0 - tx) * row0[x0] as f64 + tx * row0[x1] as f64;
                    let bot = (1.0 - tx) * row1[x0] as f64 + tx * row1[x1] as f64;
                    *d = ((1.0 - ty) * top + ty * bot) as f32;
                }
            }
        }
    }
    Plane::new(dst_w, dst_h, out)
}

/// Nearest-neighbor resize for binary masks (labels are preserved).
pub fn resample_mask_nearest(mask: &MaskRaster, dst_w: usize, dst_h: usize) -> Result<MaskRaster> {
    if dst_w == 0 || dst_h == 0 {
        return Err(Error::Argument(format!(
            "resample target must be positive, got {dst_w}x{dst_h}"
        )));
    }
    let (sw, sh) = (mask.width, mask.height);
    let xs: Vec<usize> = (0..dst_w).map(|x| nearest_src_index(x, sw, dst_w)).collect();
    let mut out = vec![0u8; dst_w * dst_h];
    for y in 0..dst_h {
        let sy = nearest_src_index(y, sh, dst_h);
        let src_row = &mask.data[sy * sw..(sy + 1) * sw];
        let dst_row = &mut out[y * dst_w..(y + 1) * dst_w];
        for (d, &sx) in dst_row.iter_mut().zip(&xs) {
            *d = src_row[sx];
        }
    }
    MaskRaster::new(dst_w, dst_h, out)
}

/// Bilinearly resample every plane onto the 10 m grid.
///
/// The target dimensions are those of the first 10 m band present.
/// Idempotent: aligning an aligned raster reproduces it bit-for-bit.
pub fn align_bands(raster: &MultispectralRaster) -> Result<MultispectralRaster> {
    let (w, h) = raster.grid_dims()?;
    let planes = raster
        .planes()
        .iter()
        .map(|(id, p)| Ok((*id, resample_plane(p, w, h, ResampleMethod::Bilinear)?)))
        .collect::<Result<Vec<_>>>()?;
    MultispectralRaster::new(planes)
}

fn normalized_difference(a: &Plane, b: &Plane) -> Result<Plane> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Argument(
            "index inputs are not on one grid; align bands first".into(),
        ));
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let denom = x + y;
            if denom == 0.0 {
                0.0
            } else {
                (x - y) / denom
            }
        })
        .collect();
    Plane::new(a.width, a.height, data)
}

/// NDVI = (B08 - B04) / (B08 + B04), zero where the denominator is zero.
pub fn ndvi(raster: &MultispectralRaster) -> Result<Plane> {
    normalized_difference(raster.band(BandId::B08)?, raster.band(BandId::B04)?)
}

/// NDMI = (B08 - B11) / (B08 + B11), zero where the denominator is zero.
pub fn ndmi(raster: &MultispectralRaster) -> Result<Plane> {
    normalized_difference(raster.band(BandId::B08)?, raster.band(BandId::B11)?)
}

/// Extract the channel stack for a band combination.
///
/// Channels appear in the combo's defined order. For `All14` the NDVI and
/// NDMI planes are computed on demand when the raster does not already
/// carry them. The raster must be aligned.
pub fn select_combo(raster: &MultispectralRaster, combo: BandCombo) -> Result<ChannelStack> {
    let (w, h) = raster.dims()?;
    let ids = combo.channels();
    let mut data = Vec::with_capacity(ids.len() * w * h);
    for id in &ids {
        match raster.plane(*id) {
            Some(p) => data.extend_from_slice(&p.data),
            None => match id {
                PlaneId::Index(DerivedIndex::Ndvi) => data.extend_from_slice(&ndvi(raster)?.data),
                PlaneId::Index(DerivedIndex::Ndmi) => data.extend_from_slice(&ndmi(raster)?.data),
                PlaneId::Band(b) => return Err(Error::BandMissing(*b)),
            },
        }
    }
    Ok(ChannelStack {
        channels: ids,
        width: w,
        height: h,
        data,
    })
}

// --- on-disk formats -------------------------------------------------------

pub const MSR_MAGIC: &[u8; 4] = b"MSR1";
pub const MSK_MAGIC: &[u8; 4] = b"MSK1";

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Cursor<'a> {
    fn fail(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.fail(
                self.buf.len(),
                format!("truncated: need {} bytes at offset {}", n, self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Load a scene from the `MSR1` format.
pub fn load_raster(path: impl AsRef<Path>) -> Result<MultispectralRaster> {
    let path = path.as_ref();
    let buf = std::fs::read(path)?;
    parse_raster(&buf, &path.display().to_string())
}

pub(crate) fn parse_raster(buf: &[u8], path: &str) -> Result<MultispectralRaster> {
    let mut cur = Cursor {
        buf,
        pos: 0,
        path: path.to_string(),
    };
    let magic = cur.take(4)?;
    if magic != MSR_MAGIC {
        return Err(cur.fail(0, format!("bad magic {:?}, expected \"MSR1\"", magic)));
    }
    let width = cur.u32()? as usize;
    let height = cur.u32()? as usize;
    let plane_count = cur.u32()? as usize;
    if width == 0 || height == 0 || plane_count == 0 {
        return Err(cur.fail(4, "zero dimension or plane count in header"));
    }
    let mut ids = Vec::with_capacity(plane_count);
    for _ in 0..plane_count {
        let desc_off = cur.pos;
        let kind = cur.u8()?;
        let raw_id = cur.u8()?;
        let reserved = cur.u16()?;
        if reserved != 0 {
            return Err(cur.fail(desc_off + 2, format!("reserved field is {reserved}, expected 0")));
        }
        let id = match kind {
            0 => PlaneId::Band(
                BandId::from_ordinal(raw_id)
                    .ok_or_else(|| cur.fail(desc_off + 1, format!("band ordinal {raw_id} out of range")))?,
            ),
            1 => PlaneId::Index(
                DerivedIndex::from_ordinal(raw_id)
                    .ok_or_else(|| cur.fail(desc_off + 1, format!("index ordinal {raw_id} out of range")))?,
            ),
            k => return Err(cur.fail(desc_off, format!("unknown plane kind {k}"))),
        };
        if ids.contains(&id) {
            return Err(cur.fail(desc_off, format!("duplicate plane {id}")));
        }
        ids.push(id);
    }
    let plane_len = width * height;
    let mut planes = Vec::with_capacity(plane_count);
    for id in ids {
        let data_off = cur.pos;
        let bytes = cur.take(plane_len * 4)?;
        let mut data = Vec::with_capacity(plane_len);
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(cur.fail(data_off + i * 4, format!("non-finite value in plane {id}")));
            }
            data.push(v);
        }
        planes.push((id, Plane::new(width, height, data)?));
    }
    if cur.pos != buf.len() {
        return Err(cur.fail(cur.pos, format!("{} trailing bytes", buf.len() - cur.pos)));
    }
    MultispectralRaster::new(planes)
}

/// Save an aligned scene in the `MSR1` format.
pub fn save_raster(raster: &MultispectralRaster, path: impl AsRef<Path>) -> Result<()> {
    let (w, h) = raster.dims()?;
    let mut buf = Vec::with_capacity(16 + raster.planes().len() * (4 + w * h * 4));
    buf.extend_from_slice(MSR_MAGIC);
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(raster.planes().len() as u32).to_le_bytes());
    for (id, _) in raster.planes() {
        let (kind, raw) = match id {
            PlaneId::Band(b) => (0u8, b.ordinal()),
            PlaneId::Index(i) => (1u8, i.ordinal()),
        };
        buf.push(kind);
        buf.push(raw);
        buf.extend_from_slice(&0u16.to_le_bytes());
    }
    for (_, plane) in raster.planes() {
        for v in &plane.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Load a binary mask from the `MSK1` format.
pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskRaster> {
    let path = path.as_ref();
    let buf = std::fs::read(path)?;
    parse_mask(&buf, &path.display().to_string())
}

pub(crate) fn parse_mask(buf: &[u8], path: &str) -> Result<MaskRaster> {
    let mut cur = Cursor {
        buf,
        pos: 0,
        path: path.to_string(),
    };
    let magic = cur.take(4)?;
    if magic != MSK_MAGIC {
        return Err(cur.fail(0, format!("bad magic {:?}, expected \"MSK1\"", magic)));
    }
    let width = cur.u32()? as usize;
    let height = cur.u32()? as usize;
    if width == 0 || height == 0 {
        return Err(cur.fail(4, "zero dimension in header"));
    }
    let data_off = cur.pos;
    let bytes = cur.take(width * height)?;
    if cur.pos != buf.len() {
        return Err(cur.fail(cur.pos, format!("{} trailing bytes", buf.len() - cur.pos)));
    }
    if let Some(i) = bytes.iter().position(|&b| b > 1) {
        return Err(cur.fail(data_off + i, format!("mask byte {} is not 0/1", bytes[i])));
    }
    MaskRaster::new(width, height, bytes.to_vec())
}

/// Save a binary mask in the `MSK1` format.
pub fn save_mask(mask: &MaskRaster, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + mask.data.len());
    buf.extend_from_slice(MSK_MAGIC);
    buf.extend_from_slice(&(mask.width as u32).to_le_bytes());
    buf.extend_from_slice(&(mask.height as u32).to_le_bytes());
    buf.extend_from_slice(&mask.data);
    std::fs::write(path, buf)?;
    Ok(())
}

//! Scene patching: resize-to-grid, 96×96 patch extraction, empty-patch
//! filtering, dataset splits, and stitching patch predictions back into
//! full-scene masks.
//!
//! Patches tile a scene disjointly in row-major grid order. A patch set
//! keeps its images channel-planar (`N×C×96×96`), its masks binary
//! (`N×96×96`), and one provenance record `(scene_id, grid_row, grid_col)`
//! per patch.

use std::convert::TryInto;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{
    resample_mask_nearest, resample_plane, ChannelStack, MaskRaster, MultispectralRaster,
    ResampleMethod,
};
use crate::rng::RngStream;

/// Patch edge length in pixels.
pub const PATCH_SIZE: usize = 96;

const PATCH_AREA: usize = PATCH_SIZE * PATCH_SIZE;

/// Geometry linking a scene to its patch grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub resized_w: usize,
    pub resized_h: usize,
    pub original_w: usize,
    pub original_h: usize,
    pub scene_id: u32,
}

/// Origin of one patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub scene_id: u32,
    pub row: u16,
    pub col: u16,
}

/// A set of 96×96 patches with masks and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    channels: usize,
    images: Vec<f32>,
    masks: Vec<u8>,
    provenance: Vec<Provenance>,
}

impl PatchSet {
    pub fn empty(channels: usize) -> PatchSet {
        PatchSet {
            channels,
            images: Vec::new(),
            masks: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn from_parts(
        channels: usize,
        images: Vec<f32>,
        masks: Vec<u8>,
        provenance: Vec<Provenance>,
    ) -> Result<PatchSet> {
        let n = provenance.len();
        if images.len() != n * channels * PATCH_AREA {
            return Err(Error::Argument(format!(
                "image buffer holds {} values, expected {}",
                images.len(),
                n * channels * PATCH_AREA
            )));
        }
        if masks.len() != n * PATCH_AREA {
            return Err(Error::Argument(format!(
                "mask buffer holds {} values, expected {}",
                masks.len(),
                n * PATCH_AREA
            )));
        }
        if let Some(i) = masks.iter().position(|&v| v > 1) {
            return Err(Error::Argument(format!("mask value at {i} is not binary")));
        }
        Ok(PatchSet {
            channels,
            images,
            masks,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Channel-planar image data of patch `i` (`C×96×96`).
    pub fn image(&self, i: usize) -> &[f32] {
        let stride = self.channels * PATCH_AREA;
        &self.images[i * stride..(i + 1) * stride]
    }

    /// Binary mask of patch `i` (`96×96`).
    pub fn mask(&self, i: usize) -> &[u8] {
        &self.masks[i * PATCH_AREA..(i + 1) * PATCH_AREA]
    }

    pub fn provenance(&self, i: usize) -> Provenance {
        self.provenance[i]
    }

    pub fn provenance_all(&self) -> &[Provenance] {
        &self.provenance
    }

    fn push_from(&mut self, other: &PatchSet, i: usize) {
        self.images.extend_from_slice(other.image(i));
        self.masks.extend_from_slice(other.mask(i));
        self.provenance.push(other.provenance[i]);
    }

    /// Append all patches of `other` (channel counts must match).
    pub fn extend(&mut self, other: &PatchSet) -> Result<()> {
        if self.channels != other.channels {
            return Err(Error::Shape(format!(
                "channel counts differ: {} vs {}",
                self.channels, other.channels
            )));
        }
        self.images.extend_from_slice(&other.images);
        self.masks.extend_from_slice(&other.masks);
        self.provenance.extend_from_slice(&other.provenance);
        Ok(())
    }

    /// New set keeping only the given channels, in the given order.
    pub fn select_channels(&self, indices: &[usize]) -> Result<PatchSet> {
        for &c in indices {
            if c >= self.channels {
                return Err(Error::Shape(format!(
                    "channel index {c} out of range for {}-channel set",
                    self.channels
                )));
            }
        }
        let n = self.len();
        let mut images = Vec::with_capacity(n * indices.len() * PATCH_AREA);
        for i in 0..n {
            let img = self.image(i);
            for &c in indices {
                images.extend_from_slice(&img[c * PATCH_AREA..(c + 1) * PATCH_AREA]);
            }
        }
        PatchSet::from_parts(indices.len(), images, self.masks.clone(), self.provenance.clone())
    }

    /// Sum of positive mask pixels across the whole set.
    pub fn positive_pixels(&self) -> usize {
        self.masks.iter().filter(|&&v| v == 1).count()
    }
}

/// How a split partitions patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    ByPatch,
    ByScene,
}

/// Train/val/test split specification.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
    pub mode: SplitMode,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train <= 0.0 || self.val <= 0.0 || self.test <= 0.0 {
            return Err(Error::Argument("split fractions must be positive".into()));
        }
        if ((self.train + self.val + self.test) - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "split fractions sum to {}, expected 1",
                self.train + self.val + self.test
            )));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.7,
            val: 0.15,
            test: 0.15,
            seed: 42,
            mode: SplitMode::ByPatch,
        }
    }
}

fn ceil_to_patch(n: usize) -> usize {
    n.div_ceil(PATCH_SIZE) * PATCH_SIZE
}

/// Resize a scene and its mask up to the next multiple of 96 on each axis.
///
/// Band planes resample bilinearly, the mask by nearest neighbor, so mask
/// labels stay binary. Scenes already on a multiple-of-96 grid pass
/// through unchanged.
pub fn resize_for_patching(
    raster: &MultispectralRaster,
    mask: &MaskRaster,
    scene_id: u32,
) -> Result<(MultispectralRaster, MaskRaster, PatchGrid)> {
    let (w, h) = raster.dims()?;
    if w != mask.width || h != mask.height {
        return Err(Error::Argument(format!(
            "raster {w}x{h} and mask {}x{} dimensions differ",
            mask.width, mask.height
        )));
    }
    let rw = ceil_to_patch(w);
    let rh = ceil_to_patch(h);
    let grid = PatchGrid {
        patch_size: PATCH_SIZE,
        rows: rh / PATCH_SIZE,
        cols: rw / PATCH_SIZE,
        resized_w: rw,
        resized_h: rh,
        original_w: w,
        original_h: h,
        scene_id,
    };
    if rw == w && rh == h {
        return Ok((raster.clone(), mask.clone(), grid));
    }
    let planes = raster
        .planes()
        .iter()
        .map(|(id, p)| Ok((*id, resample_plane(p, rw, rh, ResampleMethod::Bilinear)?)))
        .collect::<Result<Vec<_>>>()?;
    let resized_raster = MultispectralRaster::new(planes)?;
    let resized_mask = resample_mask_nearest(mask, rw, rh)?;
    Ok((resized_raster, resized_mask, grid))
}

/// Cut a channel stack and mask into 96×96 patches in row-major grid order.
pub fn extract_patches(
    stack: &ChannelStack,
    mask: &MaskRaster,
    grid: &PatchGrid,
) -> Result<PatchSet> {
    if stack.width != grid.resized_w || stack.height != grid.resized_h {
        return Err(Error::Argument(format!(
            "stack {}x{} does not match grid {}x{}",
            stack.width, stack.height, grid.resized_w, grid.resized_h
        )));
    }
    if mask.width != grid.resized_w || mask.height != grid.resized_h {
        return Err(Error::Argument(format!(
            "mask {}x{} does not match grid {}x{}",
            mask.width, mask.height, grid.resized_w, grid.resized_h
        )));
    }
    let channels = stack.channels.len();
    let (w, h) = (grid.resized_w, grid.resized_h);
    let n = grid.rows * grid.cols;
    let mut images = Vec::with_capacity(n * channels * PATCH_AREA);
    let mut masks = Vec::with_capacity(n * PATCH_AREA);
    let mut provenance = Vec::with_capacity(n);
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let y0 = row * PATCH_SIZE;
            let x0 = col * PATCH_SIZE;
            for c in 0..channels {
                let plane = &stack.data[c * w * h..(c + 1) * w * h];
                for dy in 0..PATCH_SIZE {
                    let off = (y0 + dy) * w + x0;
                    images.extend_from_slice(&plane[off..off + PATCH_SIZE]);
                }
            }
            for dy in 0..PATCH_SIZE {
                let off = (y0 + dy) * w + x0;
                masks.extend_from_slice(&mask.data[off..off + PATCH_SIZE]);
            }
            provenance.push(Provenance {
                scene_id: grid.scene_id,
                row: row as u16,
                col: col as u16,
            });
        }
    }
    PatchSet::from_parts(channels, images, masks, provenance)
}

/// Keep only patches whose mask contains at least one positive pixel.
pub fn filter_empty(set: &PatchSet) -> PatchSet {
    let mut out = PatchSet::empty(set.channels);
    for i in 0..set.len() {
        if set.mask(i).iter().any(|&v| v == 1) {
            out.push_from(set, i);
        }
    }
    out
}

/// Round-half-even split boundary.
fn boundary(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction).round_ties_even() as usize
}

fn apportion(n: usize, spec: &SplitSpec) -> Result<(usize, usize)> {
    if n < 3 {
        return Err(Error::Argument(format!(
            "split {:.2}/{:.2}/{:.2} infeasible for {n} items",
            spec.train, spec.val, spec.test
        )));
    }
    // Cumulative boundaries, rounded half-to-even, then clamped so that
    // every part keeps at least one item (fractions are all positive).
    let b1 = boundary(n, spec.train).clamp(1, n - 2);
    let b2 = boundary(n, spec.train + spec.val).clamp(b1 + 1, n - 1);
    Ok((b1, b2))
}

/// Deterministically split a patch set into train/val/test.
///
/// Items (patches, or whole scenes in `ByScene` mode) are shuffled with
/// the split seed; sizes come from rounding the cumulative fractions
/// half-to-even, so 10 items at 0.7/0.15/0.15 split 7/1/2.
pub fn split_dataset(set: &PatchSet, spec: &SplitSpec) -> Result<(PatchSet, PatchSet, PatchSet)> {
    spec.validate()?;
    let mut rng = RngStream::derive(spec.seed, "split", 0);
    match spec.mode {
        SplitMode::ByPatch => {
            if set.len() < 3 {
                return Err(Error::Argument(format!(
                    "need at least 3 patches to split, have {}",
                    set.len()
                )));
            }
            let mut order: Vec<usize> = (0..set.len()).collect();
            rng.shuffle(&mut order);
            let (b1, b2) = apportion(order.len(), spec)?;
            let mut parts = [
                PatchSet::empty(set.channels),
                PatchSet::empty(set.channels),
                PatchSet::empty(set.channels),
            ];
            for (pos, &i) in order.iter().enumerate() {
                let part = if pos < b1 {
                    0
                } else if pos < b2 {
                    1
                } else {
                    2
                };
                parts[part].push_from(set, i);
            }
            let [train, val, test] = parts;
            Ok((train, val, test))
        }
        SplitMode::ByScene => {
            let mut scenes: Vec<u32> = Vec::new();
            for p in &set.provenance {
                if !scenes.contains(&p.scene_id) {
                    scenes.push(p.scene_id);
                }
            }
            if scenes.len() < 3 {
                return Err(Error::Argument(format!(
                    "need at least 3 distinct scenes to split by scene, have {}",
                    scenes.len()
                )));
            }
            rng.shuffle(&mut scenes);
            let (b1, b2) = apportion(scenes.len(), spec)?;
            let part_of = |scene: u32| -> usize {
                let pos = scenes.iter().position(|&s| s == scene).unwrap();
                if pos < b1 {
                    0
                } else if pos < b2 {
                    1
                } else {
                    2
                }
            };
            let mut parts = [
                PatchSet::empty(set.channels),
                PatchSet::empty(set.channels),
                PatchSet::empty(set.channels),
            ];
            for i in 0..set.len() {
                parts[part_of(set.provenance[i].scene_id)].push_from(set, i);
            }
            let [train, val, test] = parts;
            Ok((train, val, test))
        }
    }
}

/// Reassemble per-patch binary masks into a full-scene mask.
///
/// `pred_masks` holds `rows*cols` row-major 96×96 masks. The mosaic is
/// built at the resized dimensions and then nearest-resized back to the
/// scene's original dimensions.
pub fn stitch(pred_masks: &[u8], grid: &PatchGrid) -> Result<MaskRaster> {
    let n = grid.rows * grid.cols;
    if pred_masks.len() != n * PATCH_AREA {
        return Err(Error::Argument(format!(
            "got {} mask values, expected {} patches of {}",
            pred_masks.len(),
            n,
            PATCH_AREA
        )));
    }
    let (w, h) = (grid.resized_w, grid.resized_h);
    let mut mosaic = vec![0u8; w * h];
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let patch = &pred_masks[(row * grid.cols + col) * PATCH_AREA..][..PATCH_AREA];
            let y0 = row * PATCH_SIZE;
            let x0 = col * PATCH_SIZE;
            for dy in 0..PATCH_SIZE {
                let dst = (y0 + dy) * w + x0;
                mosaic[dst..dst + PATCH_SIZE]
                    .copy_from_slice(&patch[dy * PATCH_SIZE..(dy + 1) * PATCH_SIZE]);
            }
        }
    }
    let mosaic = MaskRaster::new(w, h, mosaic)?;
    if grid.original_w == w && grid.original_h == h {
        return Ok(mosaic);
    }
    resample_mask_nearest(&mosaic, grid.original_w, grid.original_h)
}

// --- PST1 patch archive ------------------------------------------------

pub const PST_MAGIC: &[u8; 4] = b"PST1";

/// Save a patch set in the `PST1` format.
pub fn save_patches(set: &PatchSet, path: impl AsRef<Path>) -> Result<()> {
    let n = set.len();
    let mut buf =
        Vec::with_capacity(12 + set.images.len() * 4 + set.masks.len() + n * 8);
    buf.extend_from_slice(PST_MAGIC);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(set.channels as u32).to_le_bytes());
    for v in &set.images {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&set.masks);
    for p in &set.provenance {
        buf.extend_from_slice(&p.scene_id.to_le_bytes());
        buf.extend_from_slice(&p.row.to_le_bytes());
        buf.extend_from_slice(&p.col.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Load a patch set from the `PST1` format.
pub fn load_patches(path: impl AsRef<Path>) -> Result<PatchSet> {
    let path = path.as_ref();
    let buf = std::fs::read(path)?;
    parse_patches(&buf, &path.display().to_string())
}

fn parse_patches(buf: &[u8], path: &str) -> Result<PatchSet> {
    let fail = |offset: usize, reason: String| Error::Format {
        path: path.to_string(),
        offset: offset as u64,
        reason,
    };
    if buf.len() < 12 {
        return Err(fail(0, "file shorter than header".into()));
    }
    if &buf[..4] != PST_MAGIC {
        return Err(fail(0, format!("bad magic {:?}, expected \"PST1\"", &buf[..4])));
    }
    let n = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let channels = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let img_len = n * channels * PATCH_AREA * 4;
    let mask_len = n * PATCH_AREA;
    let prov_len = n * 8;
    let expected = 12 + img_len + mask_len + prov_len;
    if buf.len() != expected {
        return Err(fail(
            buf.len().min(expected),
            format!("file is {} bytes, expected {expected}", buf.len()),
        ));
    }
    let mut images = Vec::with_capacity(n * channels * PATCH_AREA);
    for (i, chunk) in buf[12..12 + img_len].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(fail(12 + i * 4, "non-finite image value".into()));
        }
        images.push(v);
    }
    let masks = buf[12 + img_len..12 + img_len + mask_len].to_vec();
    if let Some(i) = masks.iter().position(|&v| v > 1) {
        return Err(fail(12 + img_len + i, format!("mask byte {} is not 0/1", masks[i])));
    }
    let mut provenance = Vec::with_capacity(n);
    let prov_buf = &buf[12 + img_len + mask_len..];
    for rec in prov_buf.chunks_exact(8) {
        provenance.push(Provenance {
            scene_id: u32::from_le_bytes(rec[..4].try_into().unwrap()),
            row: u16::from_le_bytes(rec[4..6].try_into().unwrap()),
            col: u16::from_le_bytes(rec[6..8].try_into().unwrap()),
        });
    }
    PatchSet::from_parts(channels, images, masks, provenance)
}

//! Feature stacks, fixation records and their on-disk formats.
//!
//! FMAP layout: magic `FMAP`, then `version`, `C`, `H`, `W` as little-endian
//! `u32`, 28 reserved zero bytes (48-byte header), then `C·H·W` little-endian
//! binary32 values, channel-major then row-major.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::grid::{Cell, GridShape};

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u32 = 1;
pub const FMAP_HEADER_LEN: usize = 48;

/// Frozen deep features for one image, `channels × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    image_id: String,
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl FeatureStack {
    pub fn new(
        image_id: impl Into<String>,
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "feature stack dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::Format("feature stack dimensions overflow".into()))?;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "feature stack {channels}x{height}x{width} needs {expected} values, got {}",
                values.len()
            )));
        }
        let stack = FeatureStack {
            image_id: image_id.into(),
            channels,
            height,
            width,
            values,
        };
        if let Some(channel) = stack.first_non_finite_channel() {
            return Err(Error::NonFinite { channel });
        }
        Ok(stack)
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> GridShape {
        GridShape::new(self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// The `height × width` plane of one channel.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.values[c * plane..(c + 1) * plane]
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, subset: &[usize]) -> Result<FeatureStack> {
        if subset.is_empty() {
            return Err(Error::Invalid("empty channel subset".into()));
        }
        let mut values = Vec::with_capacity(subset.len() * self.height * self.width);
        for &c in subset {
            if c >= self.channels {
                return Err(Error::Invalid(format!(
                    "channel {c} out of range for {} channels",
                    self.channels
                )));
            }
            values.extend_from_slice(self.channel(c));
        }
        Ok(FeatureStack {
            image_id: self.image_id.clone(),
            channels: subset.len(),
            height: self.height,
            width: self.width,
            values,
        })
    }

    fn first_non_finite_channel(&self) -> Option<usize> {
        let plane = self.height * self.width;
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| i / plane)
    }
}

/// Header of an FMAP file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FmapHeader {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FmapHeader {
    fn payload_len(&self) -> Result<usize> {
        self.channels
            .checked_mul(self.height)
            .and_then(|n| n.checked_mul(self.width))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("FMAP dimensions overflow".into()))
    }
}

pub fn encode_fmap(header: FmapHeader, values: &[f32]) -> Result<Vec<u8>> {
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")))
    };
    let payload = header.payload_len()?;
    if payload != values.len() * 4 {
        return Err(Error::Shape(format!(
            "FMAP header expects {} values, got {}",
            payload / 4,
            values.len()
        )));
    }
    let mut bytes = Vec::with_capacity(FMAP_HEADER_LEN + payload);
    bytes.extend_from_slice(FMAP_MAGIC);
    bytes.extend_from_slice(&FMAP_VERSION.to_le_bytes());
    bytes.extend_from_slice(&to_u32(header.channels)?.to_le_bytes());
    bytes.extend_from_slice(&to_u32(header.height)?.to_le_bytes());
    bytes.extend_from_slice(&to_u32(header.width)?.to_le_bytes());
    bytes.extend_from_slice(&[0u8; 28]);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(bytes)
}

pub fn decode_fmap_header(bytes: &[u8]) -> Result<FmapHeader> {
    if bytes.len() < FMAP_HEADER_LEN {
        return Err(Error::Truncated {
            expected: FMAP_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[0..4] != FMAP_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"FMAP\"",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FMAP_VERSION {
        return Err(Error::Format(format!("unsupported FMAP version {version}")));
    }
    let header = FmapHeader {
        channels: word(8) as usize,
        height: word(12) as usize,
        width: word(16) as usize,
    };
    if header.channels == 0 || header.height == 0 || header.width == 0 {
        return Err(Error::Format(format!(
            "FMAP dims must be positive, got {}x{}x{}",
            header.channels, header.height, header.width
        )));
    }
    header.payload_len()?;
    Ok(header)
}

pub fn decode_fmap(bytes: &[u8]) -> Result<(FmapHeader, Vec<f32>)> {
    let header = decode_fmap_header(bytes)?;
    let expected = FMAP_HEADER_LEN + header.payload_len()?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after FMAP payload",
            bytes.len() - expected
        )));
    }
    let values = bytes[FMAP_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

pub fn save_feature_stack(stack: &FeatureStack, path: &Path) -> Result<()> {
    if let Some(channel) = stack.first_non_finite_channel() {
        return Err(Error::NonFinite { channel });
    }
    let header = FmapHeader {
        channels: stack.channels,
        height: stack.height,
        width: stack.width,
    };
    let bytes = encode_fmap(header, &stack.values)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads an FMAP file; the image id is the file stem.
pub fn load_feature_stack(path: &Path) -> Result<FeatureStack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, values) = decode_fmap(&bytes)?;
    let image_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureStack::new(image_id, header.channels, header.height, header.width, values)
}

/// Maps a fixation in image pixels to a density-grid cell with the floor
/// rule. Returns `None` when the fixation falls outside the image.
pub fn map_fixation_to_grid(
    x_img: f64,
    y_img: f64,
    img_w: u32,
    img_h: u32,
    grid_w: usize,
    grid_h: usize,
) -> Option<Cell> {
    if img_w == 0 || img_h == 0 || grid_w == 0 || grid_h == 0 {
        return None;
    }
    let gx = (x_img * grid_w as f64 / img_w as f64).floor();
    let gy = (y_img * grid_h as f64 / img_h as f64).floor();
    if !(gx >= 0.0 && gy >= 0.0) || gx >= grid_w as f64 || gy >= grid_h as f64 {
        return None;
    }
    Some(Cell::new(gx as usize, gy as usize))
}

/// One row of the fixation CSV (`image_id,subject_id,x,y,img_width,img_height`).
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RawFixation {
    pub image_id: String,
    pub subject_id: String,
    pub x: f64,
    pub y: f64,
    pub img_width: u32,
    pub img_height: u32,
}

pub const FIXATION_CSV_HEADER: [&str; 6] =
    ["image_id", "subject_id", "x", "y", "img_width", "img_height"];

pub fn read_fixation_csv(path: &Path) -> Result<Vec<RawFixation>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.iter().ne(FIXATION_CSV_HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "{}: expected header {}, got {}",
            path.display(),
            FIXATION_CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// A fixation already placed on the density grid of its image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FixationRecord {
    pub image_id: String,
    pub subject_id: String,
    pub x: usize,
    pub y: usize,
}

impl FixationRecord {
    pub fn cell(&self) -> Cell {
        Cell::new(self.x, self.y)
    }
}

/// Per-image metadata carried alongside the fixations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageInfo {
    pub grid: GridShape,
    /// Original image size in pixels (width, height), when known.
    pub original: Option<(u32, u32)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub kept: usize,
    pub out_of_bounds: usize,
}

/// Fixations grouped by image and subject.
#[derive(Debug, Clone, Default)]
pub struct FixationDataset {
    records: Vec<FixationRecord>,
    images: BTreeMap<String, ImageInfo>,
    by_image: BTreeMap<String, Vec<usize>>,
}

impl FixationDataset {
    /// Builds a dataset from grid-level records. Every record's image must be
    /// listed in `images` and lie inside its grid.
    pub fn from_records(
        records: Vec<FixationRecord>,
        images: BTreeMap<String, ImageInfo>,
    ) -> Result<Self> {
        let mut by_image: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut dangling = BTreeSet::new();
        for (i, r) in records.iter().enumerate() {
            match images.get(&r.image_id) {
                None => {
                    dangling.insert(r.image_id.clone());
                }
                Some(info) => {
                    if !info.grid.contains(r.cell()) {
                        return Err(Error::Invalid(format!(
                            "fixation ({}, {}) outside {} grid of image {}",
                            r.x, r.y, info.grid, r.image_id
                        )));
                    }
                    by_image.entry(r.image_id.clone()).or_default().push(i);
                }
            }
        }
        if !dangling.is_empty() {
            return Err(Error::DanglingImages(dangling.into_iter().collect()));
        }
        let images = images
            .into_iter()
            .filter(|(id, _)| by_image.contains_key(id))
            .collect();
        Ok(FixationDataset {
            records,
            images,
            by_image,
        })
    }

    /// Maps pixel-space fixations onto each image's grid. `grid_of` resolves
    /// an image id to its density grid (usually from a feature store); ids it
    /// cannot resolve are reported as dangling. Out-of-bounds fixations are
    /// dropped and counted.
    pub fn from_raw(
        raw: &[RawFixation],
        grid_of: impl Fn(&str) -> Option<GridShape>,
    ) -> Result<(Self, LoadStats)> {
        let mut images = BTreeMap::new();
        let mut dangling = BTreeSet::new();
        let mut records = Vec::with_capacity(raw.len());
        let mut stats = LoadStats::default();
        for r in raw {
            let Some(grid) = grid_of(&r.image_id) else {
                dangling.insert(r.image_id.clone());
                continue;
            };
            images.entry(r.image_id.clone()).or_insert(ImageInfo {
                grid,
                original: Some((r.img_width, r.img_height)),
            });
            match map_fixation_to_grid(r.x, r.y, r.img_width, r.img_height, grid.width, grid.height)
            {
                Some(cell) => {
                    stats.kept += 1;
                    records.push(FixationRecord {
                        image_id: r.image_id.clone(),
                        subject_id: r.subject_id.clone(),
                        x: cell.x,
                        y: cell.y,
                    });
                }
                None => stats.out_of_bounds += 1,
            }
        }
        if !dangling.is_empty() {
            return Err(Error::DanglingImages(dangling.into_iter().collect()));
        }
        if stats.out_of_bounds > 0 {
            log::warn!(
                "dropped {} out-of-bounds fixations ({} kept)",
                stats.out_of_bounds,
                stats.kept
            );
        }
        Ok((Self::from_records(records, images)?, stats))
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[FixationRecord] {
        &self.records
    }

    /// Image ids in sorted order.
    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.by_image.keys().map(String::as_str)
    }

    pub fn image_count(&self) -> usize {
        self.by_image.len()
    }

    pub fn info(&self, image_id: &str) -> Option<ImageInfo> {
        self.images.get(image_id).copied()
    }

    pub fn fixations(&self, image_id: &str) -> Vec<Cell> {
        self.by_image
            .get(image_id)
            .map(|ix| ix.iter().map(|&i| self.records[i].cell()).collect())
            .unwrap_or_default()
    }

    pub fn by_subject(&self, image_id: &str) -> BTreeMap<String, Vec<Cell>> {
        let mut out: BTreeMap<String, Vec<Cell>> = BTreeMap::new();
        if let Some(ix) = self.by_image.get(image_id) {
            for &i in ix {
                let r = &self.records[i];
                out.entry(r.subject_id.clone()).or_default().push(r.cell());
            }
        }
        out
    }

    /// The dataset restricted to the given images.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> FixationDataset {
        let keep: BTreeSet<&str> = ids.into_iter().collect();
        let records: Vec<_> = self
            .records
            .iter()
            .filter(|r| keep.contains(r.image_id.as_str()))
            .cloned()
            .collect();
        let images = self
            .images
            .iter()
            .filter(|(id, _)| keep.contains(id.as_str()))
            .map(|(id, info)| (id.clone(), *info))
            .collect();
        Self::from_records(records, images).expect("subset of a valid dataset is valid")
    }

    /// Ids referenced by fixations that the store does not hold.
    pub fn dangling_ids(&self, store: &FeatureStore) -> Vec<String> {
        self.image_ids()
            .filter(|id| store.header(id).is_none())
            .map(str::to_owned)
            .collect()
    }
}

/// A directory of `<image_id>.fmap` files, indexed by header.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    entries: BTreeMap<String, (PathBuf, FmapHeader)>,
    subset: Option<Vec<usize>>,
}

impl FeatureStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let listing = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in listing {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("fmap") {
                continue;
            }
            let id = path.file_stem().unwrap().to_string_lossy().into_owned();
            let header = read_fmap_header(&path)?;
            entries.insert(id, (path, header));
        }
        Ok(FeatureStore {
            entries,
            subset: None,
        })
    }

    /// Restricts every loaded stack to these channels.
    pub fn with_channel_subset(mut self, subset: Option<Vec<usize>>) -> Self {
        self.subset = subset;
        self
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn header(&self, image_id: &str) -> Option<FmapHeader> {
        self.entries.get(image_id).map(|(_, h)| *h)
    }

    pub fn grid(&self, image_id: &str) -> Option<GridShape> {
        self.header(image_id)
            .map(|h| GridShape::new(h.height, h.width))
    }

    /// Channel count after the subset is applied.
    pub fn channels(&self, image_id: &str) -> Option<usize> {
        let h = self.header(image_id)?;
        Some(self.subset.as_ref().map_or(h.channels, Vec::len))
    }

    pub fn handle(&self, image_id: &str) -> Result<FeatureRef> {
        let (path, _) = self.entries.get(image_id).ok_or_else(|| {
            Error::DanglingImages(vec![image_id.to_owned()])
        })?;
        Ok(FeatureRef::Disk {
            path: path.clone(),
            subset: self.subset.clone(),
        })
    }

    pub fn load(&self, image_id: &str) -> Result<Arc<FeatureStack>> {
        self.handle(image_id)?.get()
    }
}

fn read_fmap_header(path: &Path) -> Result<FmapHeader> {
    use std::io::Read;
    let mut buf = [0u8; FMAP_HEADER_LEN];
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut read = 0;
    while read < FMAP_HEADER_LEN {
        let n = file.read(&mut buf[read..]).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        read += n;
    }
    decode_fmap_header(&buf[..read])
}

/// Features held in memory or loaded from disk on demand.
#[derive(Debug, Clone)]
pub enum FeatureRef {
    Memory(Arc<FeatureStack>),
    Disk {
        path: PathBuf,
        subset: Option<Vec<usize>>,
    },
}

impl FeatureRef {
    pub fn get(&self) -> Result<Arc<FeatureStack>> {
        match self {
            FeatureRef::Memory(stack) => Ok(Arc::clone(stack)),
            FeatureRef::Disk { path, subset } => {
                let stack = load_feature_stack(path)?;
                Ok(Arc::new(match subset {
                    Some(s) => stack.select_channels(s)?,
                    None => stack,
                }))
            }
        }
    }

    /// Loads disk-backed features into memory.
    pub fn preload(&self) -> Result<FeatureRef> {
        Ok(FeatureRef::Memory(self.get()?))
    }
}

impl From<FeatureStack> for FeatureRef {
    fn from(stack: FeatureStack) -> Self {
        FeatureRef::Memory(Arc::new(stack))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_stack_layout() {
        let stack = FeatureStack::new("a", 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_fmap(
            FmapHeader {
                channels: 1,
                height: 2,
                width: 2,
            },
            stack.values(),
        )
        .unwrap();
        assert_eq!(bytes.len(), 48 + 16);
        assert_eq!(&bytes[..4], b"FMAP");
        assert_eq!(&bytes[20..48], &[0u8; 28]);
        assert_eq!(&bytes[48..52], &1.0f32.to_le_bytes());
        let (_, values) = decode_fmap(&bytes).unwrap();
        assert_eq!(values, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn nan_rejected_with_channel() {
        let err = FeatureStack::new("a", 2, 1, 2, vec![f32::NAN, 0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { channel: 0 }));
        let err = FeatureStack::new("a", 2, 1, 2, vec![0.0, 0.0, 0.0, f32::INFINITY]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { channel: 1 }));
    }

    #[test]
    fn truncated_and_bad_magic() {
        let mut bytes = encode_fmap(
            FmapHeader {
                channels: 1,
                height: 2,
                width: 2,
            },
            &[1.0; 4],
        )
        .unwrap();
        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_fmap(short), Err(Error::Truncated { .. })));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_fmap(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn dimension_overflow_rejected() {
        let mut bytes = vec![0u8; 48];
        bytes[..4].copy_from_slice(b"FMAP");
        bytes[4..8].copy_from_slice(&1u32.to_le_bytes());
        for off in [8, 12, 16] {
            bytes[off..off + 4].copy_from_slice(&u32::MAX.to_le_bytes());
        }
        // On 64-bit hosts the product fits usize but the file is far too short.
        assert!(decode_fmap(&bytes).is_err());
    }

    #[test]
    fn grid_mapping_examples() {
        assert_eq!(
            map_fixation_to_grid(0.0, 0.0, 1024, 768, 128, 96),
            Some(Cell::new(0, 0))
        );
        assert_eq!(
            map_fixation_to_grid(1023.9, 767.9, 1024, 768, 128, 96),
            Some(Cell::new(127, 95))
        );
        assert_eq!(
            map_fixation_to_grid(512.0, 384.0, 1024, 768, 128, 96),
            Some(Cell::new(64, 48))
        );
        assert_eq!(map_fixation_to_grid(-0.1, 3.0, 1024, 768, 128, 96), None);
        assert_eq!(map_fixation_to_grid(1024.0, 3.0, 1024, 768, 128, 96), None);
        assert_eq!(map_fixation_to_grid(f64::NAN, 3.0, 1024, 768, 128, 96), None);
    }

    #[test]
    fn raw_loading_drops_out_of_bounds_and_reports_dangling() {
        let raw = vec![
            RawFixation {
                image_id: "a".into(),
                subject_id: "s1".into(),
                x: 10.0,
                y: 10.0,
                img_width: 100,
                img_height: 100,
            },
            RawFixation {
                image_id: "a".into(),
                subject_id: "s1".into(),
                x: 150.0,
                y: 10.0,
                img_width: 100,
                img_height: 100,
            },
        ];
        let (ds, stats) = FixationDataset::from_raw(&raw, |_| Some(GridShape::new(10, 10))).unwrap();
        assert_eq!(stats.kept, 1);
        assert_eq!(stats.out_of_bounds, 1);
        assert_eq!(ds.fixations("a"), vec![Cell::new(1, 1)]);

        let err = FixationDataset::from_raw(&raw, |_| None).unwrap_err();
        assert!(matches!(err, Error::DanglingImages(ids) if ids == vec!["a".to_string()]));
    }

    proptest! {
        #[test]
        fn fmap_round_trip(c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f32> = (0..c * h * w).map(|_| rng.random_range(-1e6f32..1e6)).collect();
            let header = FmapHeader { channels: c, height: h, width: w };
            let bytes = encode_fmap(header, &values).unwrap();
            let (h2, v2) = decode_fmap(&bytes).unwrap();
            prop_assert_eq!(h2, header);
            prop_assert_eq!(v2.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(encode_fmap(h2, &v2).unwrap(), bytes);
        }

        #[test]
        fn grid_mapping_monotone_and_in_range(
            a in 0.0f64..1024.0, b in 0.0f64..1024.0, gw in 1usize..300,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let c_lo = map_fixation_to_grid(lo, 0.0, 1024, 768, gw, 96).unwrap();
            let c_hi = map_fixation_to_grid(hi, 0.0, 1024, 768, gw, 96).unwrap();
            prop_assert!(c_lo.x <= c_hi.x);
            prop_assert!(c_hi.x < gw);
        }
    }
}

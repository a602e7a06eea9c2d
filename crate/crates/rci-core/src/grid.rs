//! Non-overlapping n x n image tilings.
//!
//! Patch ids are 1-based in row-major order: top-left is 1, the center of a
//! 3x3 grid is 5. Column widths are floor(width/n) with the remainder given
//! to the last column, rows likewise, so the tiling is exact for any image
//! at least n pixels wide and tall.

use std::fmt;
use std::str::FromStr;

use image::DynamicImage;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

pub const MAX_GRANULARITY: u32 = 8;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GridError {
    #[error("granularity {n} outside supported range 1..={MAX_GRANULARITY}")]
    GranularityOutOfRange { n: u32 },
    #[error("image {width}x{height} too small for a {n}x{n} grid")]
    DegenerateImage { width: u32, height: u32, n: u32 },
    #[error("patch id {patch_id} outside 1..={count}")]
    PatchIdOutOfRange { patch_id: u32, count: u32 },
    #[error("region {x},{y} {width}x{height} exceeds image {image_width}x{image_height}")]
    RegionOutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
        image_width: u32,
        image_height: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    n: u32,
}

impl GridSpec {
    pub fn new(n: u32) -> Result<Self, GridError> {
        if n == 0 || n > MAX_GRANULARITY {
            return Err(GridError::GranularityOutOfRange { n });
        }
        Ok(GridSpec { n })
    }

    pub fn n(self) -> u32 {
        self.n
    }

    pub fn patch_count(self) -> u32 {
        self.n * self.n
    }

    /// Center patch id for odd n, absent for even n.
    pub fn center_patch_id(self) -> Option<u32> {
        (self.n % 2 == 1).then(|| (self.n * self.n).div_ceil(2))
    }
}

/// One tile of a grid, in pixel coordinates of the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRegion {
    pub patch_id: u32,
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Tiles a width x height image. Regions come back ordered by patch id.
pub fn grid_regions(
    width: u32,
    height: u32,
    spec: GridSpec,
) -> Result<Vec<PatchRegion>, GridError> {
    let n = spec.n;
    if width < n || height < n {
        return Err(GridError::DegenerateImage { width, height, n });
    }
    let xs = axis_offsets(width, n);
    let ys = axis_offsets(height, n);
    let mut regions = Vec::with_capacity((n * n) as usize);
    for row in 0..n {
        for col in 0..n {
            let (x, w) = xs[col as usize];
            let (y, h) = ys[row as usize];
            regions.push(PatchRegion {
                patch_id: row * n + col + 1,
                x,
                y,
                width: w,
                height: h,
            });
        }
    }
    Ok(regions)
}

/// (offset, size) per cell along one axis; the remainder widens the last cell.
fn axis_offsets(extent: u32, n: u32) -> Vec<(u32, u32)> {
    let base = extent / n;
    let mut cells = Vec::with_capacity(n as usize);
    let mut offset = 0;
    for i in 0..n {
        let size = if i == n - 1 { extent - offset } else { base };
        cells.push((offset, size));
        offset += size;
    }
    cells
}

/// Copies the region out of the image without resampling.
pub fn extract_patch(image: &DynamicImage, region: PatchRegion) -> Result<DynamicImage, GridError> {
    let (iw, ih) = (image.width(), image.height());
    let in_bounds = region.width > 0
        && region.height > 0
        && region
            .x
            .checked_add(region.width)
            .is_some_and(|end| end <= iw)
        && region
            .y
            .checked_add(region.height)
            .is_some_and(|end| end <= ih);
    if !in_bounds {
        return Err(GridError::RegionOutOfBounds {
            x: region.x,
            y: region.y,
            width: region.width,
            height: region.height,
            image_width: iw,
            image_height: ih,
        });
    }
    Ok(image.crop_imm(region.x, region.y, region.width, region.height))
}

/// Cache-level region descriptor: the full image or one patch of an n x n
/// grid. Serialized as "full" or "n{n}p{patch_id}".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegionKey {
    Full,
    Patch { n: u32, patch_id: u32 },
}

impl fmt::Display for RegionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionKey::Full => f.write_str("full"),
            RegionKey::Patch { n, patch_id } => write!(f, "n{n}p{patch_id}"),
        }
    }
}

impl FromStr for RegionKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "full" {
            return Ok(RegionKey::Full);
        }
        let rest = s
            .strip_prefix('n')
            .ok_or_else(|| format!("bad region key {s:?}"))?;
        let (n, patch_id) = rest
            .split_once('p')
            .ok_or_else(|| format!("bad region key {s:?}"))?;
        let n: u32 = n.parse().map_err(|_| format!("bad region key {s:?}"))?;
        let patch_id: u32 = patch_id
            .parse()
            .map_err(|_| format!("bad region key {s:?}"))?;
        Ok(RegionKey::Patch { n, patch_id })
    }
}

impl Serialize for RegionKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RegionKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

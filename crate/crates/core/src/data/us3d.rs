//! US3D-style sample directories.
//!
//! A sample `ID` consists of four rasters in one directory:
//! `ID_LEFT_RGB.tif`, `ID_RIGHT_RGB.tif`, `ID_LEFT_DSP.tif` (32-bit float
//! disparity) and `ID_LEFT_CLS.tif` (LAS class codes). A split manifest is a
//! text file with one sample id per line; blank lines and `#` comments are
//! skipped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::raster::{self, Raster};
use super::{StereoSample, IGNORE_CLASS};
use crate::cost_volume::DisparityRange;
use crate::error::{Error, Result};

/// Disparity magnitudes above this are no-data sentinels.
pub const SENTINEL_MAGNITUDE: f32 = 10_000.0;

/// Raw class code to training label. Unlisted codes map to the ignore label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassRemap(pub BTreeMap<u16, u8>);

impl Default for ClassRemap {
    /// LAS codes ground 2, high vegetation 5, building 6, water 9,
    /// bridge deck 17.
    fn default() -> Self {
        Self([(2, 0), (5, 1), (6, 2), (9, 3), (17, 4)].into_iter().collect())
    }
}

impl ClassRemap {
    pub fn apply(&self, code: u16) -> u8 {
        self.0.get(&code).copied().unwrap_or(IGNORE_CLASS)
    }

    /// Raw code for a training label (used when writing datasets).
    pub fn inverse(&self, label: u8) -> Option<u16> {
        self.0.iter().find(|(_, &l)| l == label).map(|(&c, _)| c)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplePaths {
    pub left: PathBuf,
    pub right: PathBuf,
    pub disparity: PathBuf,
    pub classes: PathBuf,
}

impl SamplePaths {
    pub fn in_dir(dir: &Path, id: &str) -> Self {
        Self {
            left: dir.join(format!("{id}_LEFT_RGB.tif")),
            right: dir.join(format!("{id}_RIGHT_RGB.tif")),
            disparity: dir.join(format!("{id}_LEFT_DSP.tif")),
            classes: dir.join(format!("{id}_LEFT_CLS.tif")),
        }
    }
}

pub fn is_sentinel(d: f32) -> bool {
    !d.is_finite() || d.abs() > SENTINEL_MAGNITUDE
}

fn id_from(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.strip_suffix("_LEFT_RGB").map(str::to_string).unwrap_or(stem)
}

/// Loads one sample. Pixels with sentinel disparity, or disparity outside
/// `range` when given, are marked invalid.
pub fn load_us3d_sample(paths: &SamplePaths, remap: &ClassRemap, range: Option<DisparityRange>) -> Result<StereoSample> {
    let left = raster::read_rgb(&paths.left)?;
    let right = raster::read_rgb(&paths.right)?;
    let disp = raster::read_f32(&paths.disparity)?;
    let cls = raster::read_labels(&paths.classes)?;
    let dims = (left.height, left.width);
    for (path, d) in [
        (&paths.right, (right.height, right.width)),
        (&paths.disparity, (disp.height, disp.width)),
        (&paths.classes, (cls.height, cls.width)),
    ] {
        if d != dims {
            return Err(Error::raster(
                path,
                format!("dimensions {}x{} do not match the left image ({}x{})", d.0, d.1, dims.0, dims.1),
            ));
        }
    }
    let valid = disp
        .data
        .iter()
        .map(|&d| !is_sentinel(d) && range.is_none_or(|r| r.contains(d as f64)))
        .collect();
    Ok(StereoSample {
        id: id_from(&paths.left),
        height: dims.0,
        width: dims.1,
        left: left.data,
        right: right.data,
        gt_disp: disp.data,
        gt_class: cls.data.into_iter().map(|c| remap.apply(c)).collect(),
        valid,
    })
}

/// Writes `sample` in the directory layout above. Labels are mapped back to
/// raw codes; invalid pixels get a sentinel disparity of -999.
pub fn write_us3d_sample(dir: &Path, sample: &StereoSample, remap: &ClassRemap) -> Result<SamplePaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = SamplePaths::in_dir(dir, &sample.id);
    let (h, w) = (sample.height, sample.width);
    raster::write_rgb(&paths.left, &Raster { height: h, width: w, data: sample.left.clone() })?;
    raster::write_rgb(&paths.right, &Raster { height: h, width: w, data: sample.right.clone() })?;
    let disp = sample.gt_disp.iter().zip(&sample.valid).map(|(&d, &v)| if v { d } else { -999.0 }).collect();
    raster::write_f32(&paths.disparity, &Raster { height: h, width: w, data: disp })?;
    let codes = sample
        .gt_class
        .iter()
        .map(|&l| {
            let code = remap.inverse(l).unwrap_or(0);
            u8::try_from(code).map_err(|_| Error::Config(format!("class code {code} does not fit in 8 bits")))
        })
        .collect::<Result<Vec<u8>>>()?;
    raster::write_labels(&paths.classes, &Raster { height: h, width: w, data: codes })?;
    Ok(paths)
}

pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

pub fn write_manifest(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = ids.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Sample ids in `dir`: from `manifest` if given, else every `*_LEFT_RGB.tif`
/// file in sorted order.
pub fn list_ids(dir: &Path, manifest: Option<&Path>) -> Result<Vec<String>> {
    if let Some(m) = manifest {
        return read_manifest(m);
    }
    let mut ids: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with("_LEFT_RGB.tif")))
        .map(|p| id_from(&p))
        .collect();
    ids.sort();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentinel_rule() {
        assert!(is_sentinel(-999_999.0));
        assert!(is_sentinel(f32::NAN));
        assert!(is_sentinel(f32::INFINITY));
        assert!(!is_sentinel(-999.0));
        assert!(!is_sentinel(10_000.0));
    }

    #[test]
    fn remap_table() {
        let r = ClassRemap::default();
        let codes = [2u16, 5, 6, 9, 17, 0, 65];
        let labels: Vec<u8> = codes.iter().map(|&c| r.apply(c)).collect();
        assert_eq!(labels, vec![0, 1, 2, 3, 4, 255, 255]);
        assert_eq!(r.inverse(3), Some(9));
    }

    #[test]
    fn manifest_skips_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        std::fs::write(&p, "# split\nA\n\n  B \n").unwrap();
        assert_eq!(read_manifest(&p).unwrap(), vec!["A", "B"]);
    }
}

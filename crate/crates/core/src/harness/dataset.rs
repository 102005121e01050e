//! Materialising the samples a run trains or evaluates on.

use std::path::Path;

use super::config::{DataSource, RunConfig};
use crate::data::us3d::{list_ids, SamplePaths};
use crate::data::{load_us3d_sample, synth_scene, StereoSample, SIZE_MULTIPLE};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

/// Loads every sample of a US3D-layout directory, padded to a multiple of 16.
pub fn load_directory(cfg: &RunConfig, dir: &Path, manifest: Option<&Path>) -> Result<Vec<StereoSample>> {
    let remap = cfg.class_remap()?;
    let range = Some(cfg.model.range());
    list_ids(dir, manifest)?
        .iter()
        .map(|id| {
            let s = load_us3d_sample(&SamplePaths::in_dir(dir, id), &remap, range)?;
            Ok(s.pad_to_multiple(SIZE_MULTIPLE))
        })
        .collect()
}

pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<StereoSample>> {
    let d = &cfg.data;
    match d.source {
        DataSource::Synthetic => {
            let (count, seed) = match split {
                Split::Train => (d.synth_count, d.synth_seed),
                Split::Eval => (cfg.eval.synth_count, cfg.eval.synth_seed),
            };
            (0..count as u64).map(|i| synth_scene(seed + i, &d.synth)).collect()
        }
        DataSource::Us3d => {
            let root = d.root.as_deref().expect("validated: us3d needs a root");
            let manifest = match split {
                Split::Train => d.manifest.as_deref(),
                Split::Eval => cfg.eval.manifest.as_deref().or(d.manifest.as_deref()),
            };
            load_directory(cfg, root, manifest)
        }
    }
}

//! Module ablation: train and evaluate each toggle combination and lay the
//! results out as one table row per configuration.

use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::dataset::{load_split, Split};
use super::evaluate::{evaluate, EvalSettings, ModelPredictor};
use super::train::Trainer;
use crate::error::{Error, Result};
use crate::metrics::{format_cell, MetricReport, MISSING};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationVariant {
    SfmOff,
    /// Disparity module and disparity cost volume only.
    DisparityOnly,
    /// Semantic module and semantic cost volume only.
    SemanticOnly,
    Full,
}

impl AblationVariant {
    /// Table order: the reduced models first, the full model last.
    pub const ALL: [AblationVariant; 4] = [Self::SfmOff, Self::DisparityOnly, Self::SemanticOnly, Self::Full];

    pub fn slug(self) -> &'static str {
        match self {
            Self::SfmOff => "sfm_off",
            Self::DisparityOnly => "dm_dcv_only",
            Self::SemanticOnly => "sm_scv_only",
            Self::Full => "full",
        }
    }

    /// Applies this variant's switches on top of `base` (whose own switches
    /// are reset first).
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        let m = &mut cfg.model;
        m.disable_sfm = self == Self::SfmOff;
        m.disable_sm = self == Self::DisparityOnly;
        m.disable_scv = self == Self::DisparityOnly;
        m.disable_dm = self == Self::SemanticOnly;
        m.disable_dcv = self == Self::SemanticOnly;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub config_hash: String,
    pub steps: u64,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

const CHECK: &str = "\u{2713}";

impl AblationReport {
    /// Columns: SFM, DM, SM, DCV, SCV, mIoU, mIoU-3, D1-Error, EPE.
    pub fn to_text(&self) -> String {
        let header = ["SFM", "DM", "SM", "DCV", "SCV", "mIoU", "mIoU-3", "D1-Error", "EPE"];
        let mut lines = vec![header.iter().map(|h| format!("{h:>9}")).collect::<Vec<_>>().join(" ")];
        for row in &self.rows {
            let cfg = AblationVariant::apply(row.variant, &RunConfig::default()).model;
            let mark = |on: bool| if on { CHECK } else { MISSING }.to_string();
            let r = &row.report;
            let pct = |v: Option<f64>| format_cell(v.map(|x| 100.0 * x), 2);
            let cells = [
                mark(!cfg.disable_sfm),
                mark(!cfg.disable_dm),
                mark(!cfg.disable_sm),
                mark(!cfg.disable_dcv),
                mark(!cfg.disable_scv),
                pct(r.miou),
                pct(r.miou3),
                format_cell(r.d1_error, 3),
                format_cell(r.epe, 3),
            ];
            lines.push(cells.iter().map(|c| format!("{c:>9}")).collect::<Vec<_>>().join(" "));
        }
        lines.join("\n") + "\n"
    }
}

/// Trains and evaluates every variant in `variants`, writing each run
/// under `out_dir/<slug>` and the table to `out_dir/ablation.txt`.
pub fn ablate(base: &RunConfig, variants: &[AblationVariant], out_dir: &Path) -> Result<AblationReport> {
    base.validate()?;
    let eval_samples = load_split(base, Split::Eval)?;
    if eval_samples.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut cfg = variant.apply(base);
        let dir = out_dir.join(variant.slug());
        cfg.output.checkpoint_dir = dir.clone();
        cfg.output.report_path = dir.join("report.txt");
        cfg.output.loss_curve = None;
        info!("ablation run {}", variant.slug());
        let mut trainer = Trainer::new(cfg.clone())?;
        let outcome = trainer.run()?;
        let settings = EvalSettings::new(&cfg.model, cfg.eval.tile, cfg.eval.threshold);
        let report = evaluate(&ModelPredictor { net: &trainer.net, params: &trainer.params }, &eval_samples, &settings)?;
        std::fs::write(&cfg.output.report_path, report.to_text()).map_err(|e| Error::io(&cfg.output.report_path, e))?;
        rows.push(AblationRow { variant, config_hash: cfg.hash(), steps: outcome.steps, report });
    }
    let out = AblationReport { rows };
    let path = out_dir.join("ablation.txt");
    std::fs::write(&path, out.to_text()).map_err(|e| Error::io(&path, e))?;
    let json = out_dir.join("ablation.json");
    std::fs::write(&json, serde_json::to_string_pretty(&out).expect("report serialises")).map_err(|e| Error::io(&json, e))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_have_distinct_hashes() {
        let base = RunConfig::default();
        let mut hashes: Vec<String> = AblationVariant::ALL.iter().map(|v| v.apply(&base).hash()).collect();
        hashes.sort();
        hashes.dedup();
        assert_eq!(hashes.len(), 4);
        assert_eq!(AblationVariant::Full.apply(&base), base);
    }

    #[test]
    fn untrained_tasks_render_missing() {
        let empty = MetricReport {
            epe: None,
            d1_error: None,
            per_class_iou: vec![None; 5],
            miou: Some(0.5),
            miou3: None,
            pixel_accuracy: Some(0.9),
            valid_pixel_count: 0,
            class_names: vec![],
        };
        let report = AblationReport {
            rows: vec![AblationRow { variant: AblationVariant::SemanticOnly, config_hash: String::new(), steps: 1, report: empty }],
        };
        let text = report.to_text();
        let cells: Vec<&str> = text.lines().nth(1).unwrap().split_whitespace().collect();
        assert_eq!(cells, [CHECK, MISSING, CHECK, MISSING, CHECK, "50.00", MISSING, MISSING, MISSING]);
    }
}

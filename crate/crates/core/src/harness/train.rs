//! Deterministic training loop.

use std::io::Write;
use std::path::PathBuf;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semstereo_autograd::{Adam, AdamConfig, Graph, ParamStore};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::dataset::{load_split, Split};
use super::evaluate::{evaluate, EvalSettings, ModelPredictor};
use crate::data::{Batch, StereoSample};
use crate::error::{Error, Result};
use crate::losses::{multitask_loss, LossConfig, Targets};
use crate::metrics::MetricReport;
use crate::model::SemStereoNet;

/// One row of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub total: f64,
    pub disparity: f64,
    pub semantic: f64,
}

pub fn loss_curve_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("step,total,disp_part,sem_part\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.total, r.disparity, r.semantic));
    }
    out
}

/// Rebuilds the network described by `config` around stored parameters.
pub fn restore_model(config: &RunConfig, params: &ParamStore<f32>) -> Result<(SemStereoNet, ParamStore<f32>)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = SemStereoNet::new(&mut store, &config.model, &mut rng)?;
    store.load_from(params).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((net, store))
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    StepLimit,
    TargetsReached { report: MetricReport },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub steps: u64,
    pub stop: StopReason,
    pub checkpoint_path: PathBuf,
}

pub struct Trainer {
    pub config: RunConfig,
    pub net: SemStereoNet,
    pub params: ParamStore<f32>,
    pub optimizer: Adam<f32>,
    pub step: u64,
    pub curve: Vec<LossRow>,
    loss: LossConfig,
    samples: Vec<StereoSample>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    /// Builds the model and loads the training split. All randomness
    /// derives from `optimizer.seed`.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let samples = load_split(&config, Split::Train)?;
        Self::with_samples(config, samples)
    }

    pub fn with_samples(config: RunConfig, samples: Vec<StereoSample>) -> Result<Self> {
        config.validate()?;
        if samples.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.optimizer.seed);
        let mut params = ParamStore::new();
        let net = SemStereoNet::new(&mut params, &config.model, &mut rng)?;
        let o = &config.optimizer;
        let optimizer =
            Adam::new(AdamConfig { lr: o.learning_rate, beta1: o.beta1, beta2: o.beta2, eps: o.epsilon }, &params);
        let mut loss = config.loss.clone();
        if !config.model.predicts_disparity() {
            loss.lambda_disp = 0.0;
        }
        if !config.model.predicts_classes() {
            loss.lambda_sem = 0.0;
        }
        Ok(Self { config, net, params, optimizer, step: 0, curve: Vec::new(), loss, samples, rng, order: Vec::new(), cursor: 0 })
    }

    pub fn samples(&self) -> &[StereoSample] {
        &self.samples
    }

    fn next_index(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.samples.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    fn next_batch(&mut self) -> Result<Batch> {
        let tile = self.config.data.tile;
        let mut crops = Vec::with_capacity(self.config.optimizer.batch_size);
        for _ in 0..self.config.optimizer.batch_size {
            let i = self.next_index();
            let s = &self.samples[i];
            if s.height <= tile && s.width <= tile {
                crops.push(s.clone());
            } else {
                let th = tile.min(s.height);
                let tw = tile.min(s.width);
                let y0 = self.rng.random_range(0..=s.height - th);
                let x0 = self.rng.random_range(0..=s.width - tw);
                crops.push(s.crop(y0, x0, th, tw)?);
            }
        }
        Batch::from_samples(&crops.iter().collect::<Vec<_>>())
    }

    /// One optimisation step on the next batch.
    pub fn step(&mut self) -> Result<LossRow> {
        let batch = self.next_batch()?;
        let step = self.step + 1;
        let grads = {
            let g = Graph::new(&self.params);
            let left = g.constant(batch.left.clone());
            let right = g.constant(batch.right.clone());
            let preds = self.net.forward(&g, left, right)?;
            let targets = Targets { disparity: &batch.gt_disp, classes: &batch.gt_class, valid: &batch.valid };
            let parts = multitask_loss(&g, &preds, targets, &self.loss)?;
            let row = LossRow {
                step,
                total: g.value(parts.total).item() as f64,
                disparity: g.value(parts.disparity).item() as f64,
                semantic: g.value(parts.semantic).item() as f64,
            };
            if !row.total.is_finite() {
                return Err(Error::NonFiniteLoss { step, batch: batch.ids });
            }
            self.curve.push(row);
            g.backward(parts.total)?
        };
        self.optimizer.step(&mut self.params, &grads);
        self.step = step;
        Ok(*self.curve.last().expect("row pushed"))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            config: self.config.clone(),
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
        }
    }

    /// Metrics of the current parameters on the full training samples.
    pub fn evaluate_training_set(&self) -> Result<MetricReport> {
        let settings = EvalSettings::new(&self.config.model, self.config.eval.tile, self.config.eval.threshold);
        evaluate(&ModelPredictor { net: &self.net, params: &self.params }, &self.samples, &settings)
    }

    fn targets_met(&self, report: &MetricReport) -> bool {
        let o = &self.config.optimizer;
        let disp_ok = !self.net.config.predicts_disparity() || report.epe.is_some_and(|e| e < o.early_stop_epe);
        let cls_ok =
            !self.net.config.predicts_classes() || report.pixel_accuracy.is_some_and(|a| a > o.early_stop_accuracy);
        disp_ok && cls_ok
    }

    /// Runs until the step limit or the early-stop targets, writing
    /// checkpoints and the loss curve.
    pub fn run(&mut self) -> Result<TrainOutcome> {
        let o = self.config.optimizer.clone();
        let dir = self.config.output.checkpoint_dir.clone();
        let mut stop = StopReason::StepLimit;
        while self.step < o.steps {
            let row = self.step()?;
            if row.step % 50 == 0 || row.step == 1 {
                info!("step {} loss {:.4} (disp {:.4}, sem {:.4})", row.step, row.total, row.disparity, row.semantic);
            }
            if o.checkpoint_every > 0 && self.step % o.checkpoint_every == 0 {
                self.checkpoint().save(&dir.join(format!("step{:06}.ckpt", self.step)))?;
            }
            if o.early_stop_every > 0 && self.step % o.early_stop_every == 0 {
                let report = self.evaluate_training_set()?;
                info!("step {} training EPE {:?} accuracy {:?}", self.step, report.epe, report.pixel_accuracy);
                if self.targets_met(&report) {
                    stop = StopReason::TargetsReached { report };
                    break;
                }
            }
        }
        let checkpoint_path = dir.join("final.ckpt");
        self.checkpoint().save(&checkpoint_path)?;
        self.write_loss_curve()?;
        Ok(TrainOutcome { steps: self.step, stop, checkpoint_path })
    }

    pub fn write_loss_curve(&self) -> Result<()> {
        let path = self.config.loss_curve_path();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(loss_curve_csv(&self.curve).as_bytes()).map_err(|e| Error::io(&path, e))
    }
}

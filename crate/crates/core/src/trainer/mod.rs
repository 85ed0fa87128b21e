//! Alternating minimization of cross entropy plus `λ·CMI − β·Γ`.
//!
//! Each mini-batch step fixes the per-class distributions `Q` and takes an
//! SGD step on the network, then refreshes `Q` from small class-stratified
//! batches. The CE baseline runs the identical loop with both weights at
//! zero and no `Q` refresh.

pub mod config;
pub mod loss;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_batches, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::nn::{schedule_step, sgd_step, Checkpoint, MlpModel, OptimizerState};

pub use config::{Mode, ScheduleKind, TrainConfig};
pub use loss::{cmic_loss, cmic_objective, CmicLoss, QState};

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const Q_STREAM: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Metrics of one completed epoch on the evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub cmi: f64,
    pub gamma: f64,
    pub ncmi: Option<f64>,
    pub eps_top1: f64,
    pub eps_expected: f64,
    pub ce_bound: f64,
    pub train_loss: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str =
        "epoch,cmi,gamma,ncmi,eps_top1,eps_expected,ce_bound,train_loss";

    pub fn from_report(epoch: usize, report: &MetricsReport, train_loss: f64) -> Self {
        EpochRecord {
            epoch,
            cmi: report.cmi,
            gamma: report.gamma,
            ncmi: report.ncmi,
            eps_top1: report.eps_top1,
            eps_expected: report.eps_expected,
            ce_bound: report.ce_bound,
            train_loss,
        }
    }

    /// One CSV line without the trailing newline. An undefined NCMI is
    /// written as `nan`.
    pub fn csv_line(&self) -> String {
        let ncmi = self
            .ncmi
            .map_or_else(|| "nan".to_string(), |v| v.to_string());
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.cmi,
            self.gamma,
            ncmi,
            self.eps_top1,
            self.eps_expected,
            self.ce_bound,
            self.train_loss
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolutionLog {
    records: Vec<EpochRecord>,
}

impl EvolutionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        if let Some(prev) = self.records.last() {
            if record.epoch <= prev.epoch {
                return Err(Error::InvalidInput(format!(
                    "epoch {} recorded after epoch {}",
                    record.epoch, prev.epoch
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(EpochRecord::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.csv_line());
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("log serializes")
    }
}

/// Full metrics of `model` on `data`. Every class must be present.
pub fn evaluate(model: &MlpModel, data: &Dataset) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    if let Some(c) = data.labels.counts().iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    let p = model.predict_proba(&data.features)?;
    MetricsReport::compute(&p, &data.labels)
}

pub fn evaluate_epoch(
    model: &MlpModel,
    data: &Dataset,
    epoch: usize,
    train_loss: f64,
) -> Result<EpochRecord> {
    Ok(EpochRecord::from_report(
        epoch,
        &evaluate(model, data)?,
        train_loss,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub batch_losses: Vec<f64>,
    pub mean_loss: f64,
    /// Batches of one sample where the separation term was dropped.
    pub degenerate_batches: usize,
    pub q_updates: usize,
}

/// Owns one run's model, centroids, optimizer and random streams. Network
/// initialization, batch order and centroid sampling use independent
/// streams of the same seed, so CE and CMIC runs with equal seeds start
/// from the same weights and see the same batches.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    model: MlpModel,
    q: QState,
    optimizer: OptimizerState,
    epoch: usize,
    steps: usize,
    shuffle_rng: ChaCha8Rng,
    q_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig, input_dim: usize, classes: usize) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![input_dim];
        widths.extend(&config.hidden);
        widths.push(classes);
        let model = MlpModel::new(&widths, &mut stream_rng(config.seed, INIT_STREAM))?;
        Self::with_model(config, model)
    }

    pub fn with_model(config: TrainConfig, model: MlpModel) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(&model, config.sgd())?;
        Ok(Trainer {
            q: QState::uniform(model.output_dim()),
            optimizer,
            epoch: 0,
            steps: 0,
            shuffle_rng: stream_rng(config.seed, SHUFFLE_STREAM),
            q_rng: stream_rng(config.seed, Q_STREAM),
            model,
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn q(&self) -> &QState {
        &self.q
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt =
            Checkpoint::new(self.model.clone(), Some(self.optimizer.clone()), self.epoch);
        if self.config.mode == Mode::Cmic {
            ckpt.q = Some(self.q.to_rows());
        }
        ckpt
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.model.input_dim() {
            return Err(Error::dims(self.model.input_dim(), data.dim()));
        }
        if data.classes() != self.model.output_dim() {
            return Err(Error::dims(self.model.output_dim(), data.classes()));
        }
        if data.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        Ok(())
    }

    /// One pass over `data`: an SGD step per mini-batch, each followed by a
    /// centroid refresh in CMIC mode.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochStats> {
        self.check_data(data)?;
        let by_class = data.class_indices();
        let cmic = self.config.mode == Mode::Cmic;
        if cmic {
            if let Some(c) = by_class.iter().position(Vec::is_empty) {
                return Err(Error::Config(format!("class {c} has no training samples")));
            }
        }
        let (lambda, beta) = match self.config.mode {
            Mode::Ce => (0.0, 0.0),
            Mode::Cmic => (self.config.lambda, self.config.beta),
        };

        let plan = BatchPlan::shuffled(data.len(), self.config.batch_size, &mut self.shuffle_rng)?;
        let mut batch_losses = Vec::with_capacity(plan.num_batches());
        let mut degenerate_batches = 0;
        let mut q_updates = 0;
        for batch in plan.batches() {
            let sub = data.subset(batch);
            let mut fwd = self.model.forward(&sub.features)?;
            let loss = cmic_loss(
                &mut fwd.tape,
                fwd.logits,
                sub.labels.as_slice(),
                &self.q,
                lambda,
                beta,
                self.config.freeze_separation_target,
            )?;
            let grads = fwd.backward(loss.total)?;
            sgd_step(&mut self.model, &grads, &mut self.optimizer)?;
            batch_losses.push(loss.value);
            degenerate_batches += usize::from(loss.degenerate_batch);
            self.steps += 1;

            if cmic && self.steps.is_multiple_of(self.config.q_update_every) {
                let picks =
                    stratified_batches(&by_class, self.config.class_batch_size, &mut self.q_rng)?;
                let class_probs = picks
                    .iter()
                    .map(|idx| {
                        self.model
                            .predict_proba(&data.subset(idx).features)
                            .map(Some)
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.q.update(&class_probs, self.config.q_momentum)?;
                q_updates += 1;
            }
        }

        self.epoch += 1;
        schedule_step(&mut self.optimizer, self.epoch);
        let mean_loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
        Ok(EpochStats {
            epoch: self.epoch,
            batch_losses,
            mean_loss,
            degenerate_batches,
            q_updates,
        })
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<MetricsReport> {
        evaluate(&self.model, data)
    }

    /// Trains for the configured number of epochs, evaluating on `eval`
    /// after each one. `on_epoch` sees every record as it is produced.
    pub fn run<F>(
        &mut self,
        train: &Dataset,
        eval: &Dataset,
        mut on_epoch: F,
    ) -> Result<EvolutionLog>
    where
        F: FnMut(&EpochRecord) -> Result<()>,
    {
        let mut log = EvolutionLog::new();
        while self.epoch < self.config.epochs {
            let stats = self.train_epoch(train)?;
            let record = evaluate_epoch(&self.model, eval, stats.epoch, stats.mean_loss)?;
            on_epoch(&record)?;
            log.push(record)?;
        }
        Ok(log)
    }
}

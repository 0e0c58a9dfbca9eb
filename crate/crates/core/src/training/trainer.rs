use std::io::Write;
use std::path::Path;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{adamw_step, lr_at, CostLedger, CropMode, OptimState, TrainError, TrainPlan};
use crate::exec;
use crate::griddata::{canonical_crops, random_crop, GridSeries, Region};
use crate::metrics::latitude_weights;
use crate::model::{Checkpoint, Model, ModelConfig, ModelError};
use crate::numerics::{Mode, Tensor};

/// One training example: input time index and the region it covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Example {
    pub t: usize,
    pub region: Region,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub epoch: usize,
    pub step_in_epoch: usize,
    /// Optimizer updates applied so far.
    pub global_step: u64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    /// Global step index of this update, starting at 0.
    pub step: u64,
    pub lr: f64,
    /// Mean loss over the step's examples, before the update.
    pub loss: f64,
    pub examples: usize,
    pub tokens: u64,
    pub attention_entries: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub records: Vec<StepRecord>,
}

impl EpochStats {
    pub fn mean_loss(&self) -> f64 {
        let n: usize = self.records.iter().map(|r| r.examples).sum();
        self.records.iter().map(|r| r.loss * r.examples as f64).sum::<f64>() / n.max(1) as f64
    }

    pub fn tokens(&self) -> u64 {
        self.records.iter().map(|r| r.tokens).sum()
    }

    pub fn attention_entries(&self) -> u64 {
        self.records.iter().map(|r| r.attention_entries).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Regime {
    /// Whole-grid examples straight from the series.
    Global,
    /// Crops per the plan's split factor and crop mode.
    Regional,
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined word.
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(a << 6).wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Model, optimizer state and progress through a [`TrainPlan`] over one
/// series' training split.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub opt: OptimState,
    pub plan: TrainPlan,
    pub progress: Progress,
    pub ledger: CostLedger,
    pairs: Vec<usize>,
    lead: usize,
    lat_weights: Vec<f64>,
    steps_per_epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, plan: TrainPlan, series: &GridSeries) -> Result<Self, TrainError> {
        let opt = OptimState::new(&model.params);
        let ledger = CostLedger::new(model.params.total_count());
        Self::assemble(model, opt, plan, Progress::default(), ledger, series)
    }

    fn assemble(
        model: Model,
        opt: OptimState,
        plan: TrainPlan,
        progress: Progress,
        ledger: CostLedger,
        series: &GridSeries,
    ) -> Result<Self, TrainError> {
        plan.validate()?;
        let c = &model.config;
        let (v, h, w) = series.dims();
        if v != c.num_variables || [h, w] != c.image_size || c.output_variables != v {
            return Err(TrainError::ShapeMismatch(format!(
                "series is {v}x{h}x{w}, model expects {}x{}x{} with {} outputs",
                c.num_variables, c.image_size[0], c.image_size[1], c.output_variables
            )));
        }
        canonical_crops(h, w, plan.split, c.patch_size)?;
        let lead = series.lead_steps(plan.lead_time_hours)?;
        let pairs = series.pairs_in(series.train_range(), lead);
        if pairs.is_empty() {
            return Err(TrainError::NoTrainingPairs(format!(
                "training range {:?} has no pairs at lead {lead} steps",
                series.train_range()
            )));
        }
        let per_epoch = match plan.crop_mode {
            CropMode::Canonical => pairs.len() * plan.split * plan.split,
            CropMode::Random => pairs.len(),
        };
        let steps_per_epoch = per_epoch.div_ceil(plan.examples_per_step());
        let lat_weights = latitude_weights(&series.latitudes)?;
        Ok(Self { model, opt, plan, progress, ledger, pairs, lead, lat_weights, steps_per_epoch })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_epoch * self.plan.epochs
    }

    pub fn warmup_steps(&self) -> usize {
        self.steps_per_epoch * self.plan.warmup_epochs
    }

    pub fn is_finished(&self) -> bool {
        self.progress.epoch >= self.plan.epochs
    }

    /// Learning rate of update `step` (0-based). The first update already
    /// uses a non-zero rate.
    pub fn lr_for(&self, step: u64) -> f64 {
        lr_at(step as usize + 1, self.total_steps(), self.warmup_steps(), self.plan.lr_peak)
    }

    fn examples(&self, epoch: usize, regime: Regime) -> Result<Vec<Example>, TrainError> {
        let [h, w] = self.model.config.image_size;
        let p = self.model.config.patch_size;
        let seed = mix(self.plan.seed, epoch as u64);
        let mut out = Vec::new();
        match (regime, self.plan.crop_mode) {
            (Regime::Global, _) => out.extend(self.pairs.iter().map(|&t| Example { t, region: Region::full(h, w) })),
            (Regime::Regional, CropMode::Canonical) => {
                let crops = canonical_crops(h, w, self.plan.split, p)?;
                for &t in &self.pairs {
                    out.extend(crops.iter().map(|&region| Example { t, region }));
                }
            }
            (Regime::Regional, CropMode::Random) => {
                for &t in &self.pairs {
                    let region = random_crop(h, w, self.plan.split, p, mix(seed, t as u64))?;
                    out.push(Example { t, region });
                }
            }
        }
        out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(out)
    }

    /// The shuffled examples of `epoch` under the plan's crop regime.
    pub fn epoch_examples(&self, epoch: usize) -> Result<Vec<Example>, TrainError> {
        self.examples(epoch, Regime::Regional)
    }

    fn pair(&self, series: &GridSeries, ex: &Example, regime: Regime) -> (Array3<f64>, Array3<f64>) {
        let input = series.field(ex.t);
        let target = series.field(ex.t + self.lead);
        match regime {
            Regime::Global => (input, target),
            Regime::Regional => (ex.region.extract(input.view()), ex.region.extract(target.view())),
        }
    }

    /// Mean loss and mean gradient over `examples`, accumulated micro-batch by
    /// micro-batch in example order.
    fn accumulate(
        &mut self,
        series: &GridSeries,
        examples: &[Example],
        regime: Regime,
    ) -> Result<(f64, Vec<Tensor>), TrainError> {
        let step = self.progress.global_step;
        let mut loss_sum = 0.0;
        let mut grad_sum: Vec<Tensor> = self.model.params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        let indexed: Vec<(usize, Example)> = examples.iter().copied().enumerate().collect();
        for micro in indexed.chunks(self.plan.batch_size) {
            let this = &*self;
            let results = exec::try_map(self.plan.execution, micro, |(i, ex)| -> Result<_, ModelError> {
                let (input, target) = this.pair(series, ex, regime);
                let rows = &this.lat_weights[ex.region.row_off..ex.region.row_off + ex.region.height];
                this.model.loss_and_gradients(
                    input.view(),
                    target.view(),
                    &ex.region,
                    rows,
                    Mode::Train,
                    mix(mix(this.plan.seed, step), *i as u64),
                )
            })?;
            for ((_, ex), (loss, grads)) in micro.iter().zip(results) {
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss { step, t: ex.t, region: ex.region, loss });
                }
                loss_sum += loss;
                for (acc, g) in grad_sum.iter_mut().zip(&grads) {
                    acc.add_assign(g);
                }
                self.ledger.record(&self.model.config, &ex.region);
            }
        }
        let n = examples.len() as f64;
        for g in &mut grad_sum {
            g.scale(1.0 / n);
        }
        Ok((loss_sum / n, grad_sum))
    }

    fn step(&mut self, series: &GridSeries, regime: Regime) -> Result<Option<StepRecord>, TrainError> {
        if self.is_finished() {
            return Ok(None);
        }
        let epoch = self.progress.epoch;
        let all = self.examples(epoch, regime)?;
        let per = self.plan.examples_per_step();
        let start = self.progress.step_in_epoch * per;
        let batch = &all[start..(start + per).min(all.len())];
        let before = self.ledger.clone();
        let (loss, grads) = self.accumulate(series, batch, regime)?;
        let lr = self.lr_for(self.progress.global_step);
        let optimizer = self.plan.optimizer;
        adamw_step(&mut self.model.params, &grads, &mut self.opt, lr, &optimizer)?;
        let record = StepRecord {
            epoch,
            step: self.progress.global_step,
            lr,
            loss,
            examples: batch.len(),
            tokens: self.ledger.tokens - before.tokens,
            attention_entries: self.ledger.attention_entries_per_layer - before.attention_entries_per_layer,
        };
        self.progress.global_step += 1;
        self.progress.step_in_epoch += 1;
        if self.progress.step_in_epoch * per >= all.len() {
            self.progress.epoch += 1;
            self.progress.step_in_epoch = 0;
        }
        Ok(Some(record))
    }

    /// Applies the next optimizer update of the plan; `None` once finished.
    pub fn next_step(&mut self, series: &GridSeries) -> Result<Option<StepRecord>, TrainError> {
        self.step(series, Regime::Regional)
    }

    fn epoch(
        &mut self,
        series: &GridSeries,
        regime: Regime,
        mut log: Option<&mut dyn Write>,
    ) -> Result<EpochStats, TrainError> {
        let epoch = self.progress.epoch;
        let mut records = Vec::new();
        while self.progress.epoch == epoch {
            let Some(r) = self.step(series, regime)? else { break };
            if let Some(out) = log.as_deref_mut() {
                write_record(out, &r)?;
            }
            records.push(r);
        }
        Ok(EpochStats { epoch, records })
    }

    /// Runs every remaining step of the plan.
    pub fn fit(&mut self, series: &GridSeries, mut log: Option<&mut dyn Write>) -> Result<Vec<EpochStats>, TrainError> {
        let mut out = Vec::new();
        while !self.is_finished() {
            let log: Option<&mut dyn Write> = match log {
                Some(ref mut w) => Some(&mut **w),
                None => None,
            };
            out.push(regional_train_epoch(self, series, log)?);
        }
        Ok(out)
    }

    /// Parameters, optimizer moments (`optim.m.*`, `optim.v.*`) and progress.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model);
        let names: Vec<String> = self.model.params.iter().map(|(n, _)| n.to_string()).collect();
        for (n, m) in names.iter().zip(&self.opt.m) {
            ck.tensors.push((format!("optim.m.{n}"), m.clone()));
        }
        for (n, v) in names.iter().zip(&self.opt.v) {
            ck.tensors.push((format!("optim.v.{n}"), v.clone()));
        }
        ck.meta = json!({
            "plan": self.plan,
            "progress": self.progress,
            "ledger": self.ledger,
            "optim_step": self.opt.step,
        });
        ck
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        Ok(self.checkpoint().save(path)?)
    }

    /// Restores a trainer from [`Trainer::checkpoint`] output. When given,
    /// `config` and `plan` must match what the checkpoint was trained with
    /// (the execution mode may differ).
    pub fn resume(
        ck: &Checkpoint,
        series: &GridSeries,
        config: Option<&ModelConfig>,
        plan: Option<&TrainPlan>,
    ) -> Result<Self, TrainError> {
        let model = ck.to_model(config)?;
        let meta = |key: &str| ck.meta.get(key).cloned().ok_or_else(|| TrainError::Corrupt(format!("missing {key}")));
        let parse = |e: serde_json::Error| TrainError::Corrupt(e.to_string());
        let stored: TrainPlan = serde_json::from_value(meta("plan")?).map_err(parse)?;
        if let Some(expected) = plan {
            compare_plans(expected, &stored)?;
        }
        let progress: Progress = serde_json::from_value(meta("progress")?).map_err(parse)?;
        let ledger: CostLedger = serde_json::from_value(meta("ledger")?).map_err(parse)?;
        let step: u64 = serde_json::from_value(meta("optim_step")?).map_err(parse)?;
        let moment = |kind: &str, name: &str| {
            ck.tensor(&format!("optim.{kind}.{name}"))
                .cloned()
                .ok_or_else(|| TrainError::Corrupt(format!("missing optim.{kind}.{name}")))
        };
        let mut opt = OptimState { m: Vec::new(), v: Vec::new(), step };
        for (name, p) in model.params.iter() {
            let (m, v) = (moment("m", name)?, moment("v", name)?);
            if m.shape() != p.shape() || v.shape() != p.shape() {
                return Err(TrainError::ShapeMismatch(format!("moments of {name} do not match {:?}", p.shape())));
            }
            opt.m.push(m);
            opt.v.push(v);
        }
        let mut plan_in_use = stored;
        if let Some(expected) = plan {
            plan_in_use.execution = expected.execution;
        }
        Self::assemble(model, opt, plan_in_use, progress, ledger, series)
    }

    pub fn load(
        path: impl AsRef<Path>,
        series: &GridSeries,
        config: Option<&ModelConfig>,
        plan: Option<&TrainPlan>,
    ) -> Result<Self, TrainError> {
        Self::resume(&Checkpoint::load(path)?, series, config, plan)
    }
}

fn compare_plans(expected: &TrainPlan, found: &TrainPlan) -> Result<(), TrainError> {
    let to_obj = |p: &TrainPlan| match serde_json::to_value(p) {
        Ok(Value::Object(m)) => Ok(m),
        _ => Err(TrainError::Corrupt("plan is not a JSON object".into())),
    };
    let (want, have) = (to_obj(expected)?, to_obj(found)?);
    for (key, w) in &want {
        if key == "execution" {
            continue;
        }
        let h = have.get(key).unwrap_or(&Value::Null);
        if h != w {
            return Err(TrainError::ConfigMismatch {
                field: key.clone(),
                expected: w.to_string(),
                found: h.to_string(),
            });
        }
    }
    Ok(())
}

fn write_record(out: &mut dyn Write, r: &StepRecord) -> Result<(), TrainError> {
    let line = serde_json::to_string(r).map_err(|e| TrainError::Corrupt(e.to_string()))?;
    writeln!(out, "{line}").map_err(|e| TrainError::Io { path: "training log".into(), message: e.to_string() })
}

/// One epoch on whole-grid examples, ignoring the plan's split factor.
pub fn global_train_epoch(
    trainer: &mut Trainer,
    series: &GridSeries,
    log: Option<&mut dyn Write>,
) -> Result<EpochStats, TrainError> {
    if trainer.plan.split != 1 {
        return Err(TrainError::InvalidPlan { field: "split", reason: "global training needs split 1".into() });
    }
    trainer.epoch(series, Regime::Global, log)
}

/// One epoch on crops of the plan's split factor: every canonical crop of
/// every pair, or one random crop per pair.
pub fn regional_train_epoch(
    trainer: &mut Trainer,
    series: &GridSeries,
    log: Option<&mut dyn Write>,
) -> Result<EpochStats, TrainError> {
    trainer.epoch(series, Regime::Regional, log)
}

#[cfg(test)]
#[path = "trainer_tests.rs"]
mod tests;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::data::{Dataset, Pair, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::fusion::PrimitiveGroups;
use crate::numcore::{Adam, Bound, Tape, Var};
use crate::objective::{self, key_alignment, loss_primitive, loss_sp, LossReport, Primitive};
use crate::rng;

use super::config::RunConfig;
use super::model::VapsModel;

/// Seen pairs and the primitive grouping the training losses use.
#[derive(Debug, Clone)]
pub struct TrainContext {
    pub seen: Vec<Pair>,
    pub groups: PrimitiveGroups,
}

impl TrainContext {
    pub fn new(seen: &[Pair], n_attrs: usize, n_objs: usize) -> Result<Self> {
        let mut seen = seen.to_vec();
        seen.sort();
        Ok(Self {
            groups: PrimitiveGroups::new(&seen, n_attrs, n_objs)?,
            seen,
        })
    }

    fn seen_index(&self, p: Pair) -> Result<usize> {
        self.seen
            .binary_search(&p)
            .map_err(|_| Error::Dataset(format!("training pair ({}, {}) is not seen", p.attr, p.obj)))
    }
}

/// The four recorded loss terms of one batch and their weighted sum.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss<'t> {
    pub l_att: Var<'t>,
    pub l_obj: Var<'t>,
    pub l_sp: Var<'t>,
    /// Retrieval cross-entropy plus key alignment; absent without the
    /// repository.
    pub l_ret: Option<Var<'t>>,
    pub total: Var<'t>,
}

impl BatchLoss<'_> {
    pub fn report(&self, model: &VapsModel) -> Result<LossReport> {
        LossReport::new(
            self.l_att.item(),
            self.l_obj.item(),
            self.l_sp.item(),
            self.l_ret.map_or(0.0, |v| v.item()),
            &model.config.weights(),
        )
    }
}

impl VapsModel {
    /// Records the full objective for `batch` on `tape`, reading parameters
    /// from `bound`.
    pub fn batch_loss<'t>(
        &self,
        tape: &'t Tape,
        bound: &Bound<'t>,
        ctx: &TrainContext,
        batch: &[&SampleRecord],
    ) -> Result<BatchLoss<'t>> {
        let images: Vec<_> = batch.iter().map(|r| &r.features).collect();
        let forward = self.forward_batch(tape, bound, &images, &ctx.seen, true)?;
        let seen_targets = batch
            .iter()
            .map(|r| ctx.seen_index(r.pair))
            .collect::<Result<Vec<_>>>()?;
        let attrs: Vec<usize> = batch.iter().map(|r| r.pair.attr).collect();
        let objs: Vec<usize> = batch.iter().map(|r| r.pair.obj).collect();

        let sp = Var::concat_rows(&forward.iter().map(|f| f.sp).collect::<Vec<_>>());
        let (attr_logits, obj_logits) = ctx.groups.apply(sp);
        let l_att = loss_primitive(attr_logits, &attrs, Primitive::Attr)?;
        let l_obj = loss_primitive(obj_logits, &objs, Primitive::Obj)?;
        let l_sp = loss_sp(sp, &seen_targets)?;
        let l_ret = if forward.iter().all(|f| f.ret.is_some()) {
            let rets: Vec<_> = forward.iter().filter_map(|f| f.ret.as_ref()).collect();
            let logits = Var::concat_rows(&rets.iter().map(|(l, _)| *l).collect::<Vec<_>>());
            let scores = Var::concat_rows(&rets.iter().map(|(_, r)| r.scores).collect::<Vec<_>>());
            Some(objective::loss_ret(logits, &seen_targets)?.add(key_alignment(scores)))
        } else {
            None
        };
        let total = objective::loss_total_var(l_att, l_obj, l_sp, l_ret, &self.config.weights());
        Ok(BatchLoss {
            l_att,
            l_obj,
            l_sp,
            l_ret,
            total,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub report: LossReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: VapsModel,
    pub optimizer: Adam,
    pub log: Vec<LogRow>,
    pub frozen_hash_before: String,
    pub frozen_hash_after: String,
}

/// State captured when a step produces a non-finite value.
#[derive(Debug, Serialize)]
struct DivergenceDump<'a> {
    step: u64,
    epoch: usize,
    sample_ids: Vec<u64>,
    last_finite: Option<&'a LogRow>,
    losses: [f64; 4],
    param_norms: Vec<(String, f64)>,
}

/// Trains a freshly initialised model on the train split of `dataset`.
pub fn train(config: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    dataset.validate()?;
    let space = &dataset.space;
    let model = VapsModel::init(config, space.n_attrs(), space.n_objs())?;
    let optimizer = Adam::new(&model.store, config.adam());
    train_model(model, optimizer, dataset)
}

/// Runs `config.epochs` epochs of Adam over the train split.
pub fn train_model(mut model: VapsModel, mut optimizer: Adam, dataset: &Dataset) -> Result<TrainOutcome> {
    let config = model.config.clone();
    let space = &dataset.space;
    if let Some((d, n)) = dataset.dims() {
        config.check_features(d, n)?;
    }
    let records: Vec<&SampleRecord> = dataset.split(Split::Train).collect();
    if records.is_empty() {
        return Err(Error::EmptyInput("train split"));
    }
    let ctx = TrainContext::new(&space.seen_pairs, space.n_attrs(), space.n_objs())?;
    let frozen_hash_before = model.frozen_hash();
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut shuffler = rng::chacha(config.seed, 0x5348_5546); // "SHUF"
    let mut log = Vec::new();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffler);
        for chunk in order.chunks(config.batch_size) {
            let step = optimizer.step_count() + 1;
            let batch: Vec<&SampleRecord> = chunk.iter().map(|&i| records[i]).collect();
            let tape = Tape::new();
            let bound = model.store.bind(&tape);
            let loss = model.batch_loss(&tape, &bound, &ctx, &batch)?;
            let parts = [
                loss.l_att.item(),
                loss.l_obj.item(),
                loss.l_sp.item(),
                loss.l_ret.map_or(0.0, |v| v.item()),
            ];
            let finite = loss.total.item().is_finite() && tape.check_finite().is_ok();
            if !finite {
                return Err(divergence(&model, step, epoch, &batch, log.last(), parts));
            }
            let report = loss.report(&model)?;
            loss.total.backward()?;
            model.store.zero_grad();
            model.store.accumulate_grads(&bound);
            optimizer.step(&mut model.store)?;
            if model.store.iter().any(|(_, p)| !p.value.is_finite()) {
                return Err(divergence(&model, step, epoch, &batch, log.last(), parts));
            }
            log.push(LogRow { step, epoch, report });
        }
    }
    let frozen_hash_after = model.frozen_hash();
    Ok(TrainOutcome {
        model,
        optimizer,
        log,
        frozen_hash_before,
        frozen_hash_after,
    })
}

fn divergence(model: &VapsModel, step: u64, epoch: usize, batch: &[&SampleRecord], last: Option<&LogRow>, losses: [f64; 4]) -> Error {
    let dump = DivergenceDump {
        step,
        epoch,
        sample_ids: batch.iter().map(|r| r.sample_id).collect(),
        last_finite: last,
        losses,
        param_norms: model
            .store
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.norm()))
            .collect(),
    };
    Error::Divergence {
        step,
        detail: serde_json::to_string(&dump).unwrap_or_else(|e| format!("unserialisable dump: {e}")),
    }
}

pub fn write_log_csv(log: &[LogRow], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{}", LossReport::CSV_HEADER).expect("write to Vec");
    for row in log {
        writeln!(out, "{}", row.report.csv_row(row.step)).expect("write to Vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Mean total loss over the rows of one epoch.
pub fn epoch_mean(log: &[LogRow], epoch: usize) -> Option<f64> {
    let rows: Vec<f64> = log.iter().filter(|r| r.epoch == epoch).map(|r| r.report.l_total).collect();
    (!rows.is_empty()).then(|| rows.iter().sum::<f64>() / rows.len() as f64)
}

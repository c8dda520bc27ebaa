//! Two-stage training of the four scenarios with AdamW and early stopping.

mod config;
mod data;

pub use config::{BatchPolicy, TrainConfig};
pub use data::{batch_iterator, batch_plan, load_entry, Batch, Dataset, Utterance};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::augment::{CorpusManifest, Split};
use crate::error::{Error, Result};
use crate::losses::{
    cms_graph, compose_total, mrs_graph, si_task_graph, wsdr_graph, LossReport, SpectralTarget,
};
use crate::model::{interleave, load_checkpoint, save_checkpoint, ForwardOptions, PreprocessorRef, SiseModel, TrackNorm};
use crate::nn::{AdamW, Graph, ParamId, ParamStore, Var};
use crate::scenario::Scenario;
use crate::signal::Waveform;
use crate::track::{ORAL_CHANNELS, SOURCE_CHANNELS};

/// Patience-based stopping on a dev loss that should decrease.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    bad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.bad = 0;
            StopDecision::Improved
        } else {
            self.bad += 1;
            if self.bad >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_report: LossReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub stage: u8,
    pub seed: u64,
    pub config_digest: String,
    /// Dev loss of the incoming parameters, before any update.
    pub initial_dev_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub stopped_epoch: usize,
    pub best_param_digest: String,
    pub wall_clock_s: f64,
}

/// Append-only line-delimited metrics.
pub struct MetricsLog {
    out: Option<std::io::BufWriter<std::fs::File>>,
    path: Option<PathBuf>,
}

impl MetricsLog {
    pub fn disabled() -> Self {
        Self { out: None, path: None }
    }

    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: Some(std::io::BufWriter::new(f)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn record(&mut self, value: &serde_json::Value) -> Result<()> {
        if let (Some(out), Some(path)) = (self.out.as_mut(), self.path.as_ref()) {
            writeln!(out, "{value}").map_err(|e| Error::io(path, e))?;
            out.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn row_matrix(waves: &[Waveform]) -> Array2<f64> {
    let n = waves[0].len();
    let mut x = Array2::zeros((waves.len(), n));
    for (b, w) in waves.iter().enumerate() {
        x.row_mut(b).assign(&ndarray::ArrayView1::from(w.samples()));
    }
    x
}

/// Builds the scenario objective for one batch on `g`.
pub fn batch_objective(
    model: &SiseModel,
    g: &mut Graph,
    batch: &Batch,
    scenario: Scenario,
    loss: &crate::losses::LossConfig,
    train: bool,
) -> Result<(Var, LossReport)> {
    let se = scenario.uses_se_loss();
    let si = scenario.uses_si_loss();
    let f = model.forward(
        g,
        &batch.inputs,
        ForwardOptions {
            se,
            si,
            train,
            mask_override: None,
        },
    )?;
    let mut report = LossReport::default();
    let mut parts = Vec::new();
    if se {
        let enhanced = f.enhanced.expect("se output");
        let mixture = row_matrix(&batch.inputs);
        let clean = row_matrix(&batch.clean);
        let target = SpectralTarget::new(&clean, loss)?;
        let w = wsdr_graph(g, &mixture, &clean, enhanced);
        let c = cms_graph(g, enhanced, &target);
        let m = mrs_graph(g, enhanced, &target, loss.complex_l1);
        report.wsdr = Some(g.scalar(w));
        report.cms = Some(g.scalar(c));
        report.mrs = Some(g.scalar(m));
        parts.extend([w, c, m]);
    }
    if si {
        let pred = f.tracks.expect("si output");
        let frames = f.feature_frames;
        let targets: Vec<Array2<f64>> = batch
            .tracks
            .iter()
            .map(|t| model.track_norm.normalize(&fit_frames(t, frames)))
            .collect();
        let y = interleave(&targets, frames, batch.len());
        let pa = g.slice_cols(pred, ORAL_CHANNELS.start, ORAL_CHANNELS.len());
        let pb = g.slice_cols(pred, SOURCE_CHANNELS.start, SOURCE_CHANNELS.len());
        let ya = y.slice(ndarray::s![.., ORAL_CHANNELS]).to_owned();
        let yb = y.slice(ndarray::s![.., SOURCE_CHANNELS]).to_owned();
        let (la, ta) = si_task_graph(g, pa, &ya, loss);
        let (lb, tb) = si_task_graph(g, pb, &yb, loss);
        report.si_task_a = Some(ta.loss);
        report.si_task_b = Some(tb.loss);
        report.pc = ta.pc.iter().chain(&tb.pc).copied().collect();
        report.rmse = ta.rmse.iter().chain(&tb.rmse).copied().collect();
        parts.extend([la, lb]);
    }
    report.total = compose_total(&report, scenario)?;
    let mut total = parts[0];
    for p in &parts[1..] {
        total = g.add(total, *p);
    }
    Ok((total, report))
}

/// Data, scenario and preprocessing shared by both stages.
pub struct TrainingSetup<'a> {
    pub cfg: &'a TrainConfig,
    pub train: Dataset,
    pub dev: Dataset,
    /// SISE-P enhancer applied to inputs on the fly.
    pub preprocessor: Option<&'a SiseModel>,
}

impl TrainingSetup<'_> {
    fn prepare(&self, mut batch: Batch) -> Result<Batch> {
        if let Some(pre) = self.preprocessor {
            batch.inputs = pre.enhance_batch(&batch.inputs)?;
        }
        Ok(batch)
    }

    /// Mean total loss and mean report over the dev set.
    pub fn evaluate(&self, model: &SiseModel) -> Result<(f64, LossReport)> {
        let cfg = self.cfg;
        let mut totals = Vec::new();
        let mut reports = Vec::new();
        for batch in batch_iterator(&self.dev, &cfg.batch, cfg.seed, 0, false) {
            let batch = self.prepare(batch)?;
            let mut g = Graph::new();
            let (_, r) = batch_objective(model, &mut g, &batch, cfg.scenario, &cfg.loss, false)?;
            totals.push(r.total);
            reports.push(r);
        }
        if totals.is_empty() {
            return Err(Error::InvalidInput("empty dev set".into()));
        }
        Ok((mean(&totals), mean_report(&reports)))
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_report(rs: &[LossReport]) -> LossReport {
    let avg = |f: &dyn Fn(&LossReport) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = rs.iter().map(f).collect();
        v.map(|v| mean(&v))
    };
    let avg_vec = |f: &dyn Fn(&LossReport) -> &Vec<f64>| -> Vec<f64> {
        let n = f(&rs[0]).len();
        (0..n).map(|i| mean(&rs.iter().map(|r| f(r)[i]).collect::<Vec<_>>())).collect()
    };
    LossReport {
        wsdr: avg(&|r| r.wsdr),
        cms: avg(&|r| r.cms),
        mrs: avg(&|r| r.mrs),
        si_task_a: avg(&|r| r.si_task_a),
        si_task_b: avg(&|r| r.si_task_b),
        total: mean(&rs.iter().map(|r| r.total).collect::<Vec<_>>()),
        pc: avg_vec(&|r| &r.pc),
        rmse: avg_vec(&|r| &r.rmse),
    }
}

fn snapshot(store: &ParamStore) -> Vec<(ParamId, Array2<f64>)> {
    store.iter().map(|(id, p)| (id, p.value.clone())).collect()
}

fn restore(store: &mut ParamStore, snap: &[(ParamId, Array2<f64>)]) {
    for (id, v) in snap {
        store.get_mut(*id).value.assign(v);
    }
}

/// Runs one stage in place on `model`. Stage 1 freezes the backbone,
/// stage 2 trains everything at the lower rate. On return the model holds
/// the best-dev-loss parameters of the stage.
pub fn run_stage(
    model: &mut SiseModel,
    setup: &TrainingSetup<'_>,
    stage: u8,
    log: &mut MetricsLog,
    best_checkpoint: Option<&Path>,
) -> Result<RunRecord> {
    let cfg = setup.cfg;
    let lr = match stage {
        1 => {
            model.backbone_frozen = true;
            cfg.stage1_lr
        }
        2 => {
            if model.stage < 1 {
                return Err(Error::InvalidState(
                    "stage 2 needs a model that finished stage 1".into(),
                ));
            }
            model.backbone_frozen = false;
            cfg.stage2_lr
        }
        s => return Err(Error::InvalidInput(format!("no stage {s}"))),
    };
    if setup.train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let started = Instant::now();
    let (initial, initial_report) = setup.evaluate(model)?;
    log.record(&serde_json::json!({
        "kind": "initial", "stage": stage, "dev_loss": initial, "dev": initial_report,
    }))?;
    let mut opt = AdamW::new(cfg.optimizer);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = snapshot(&model.store);
    let mut epochs = Vec::new();
    let mut stopped = 0;
    let frozen = model.frozen_groups();
    for epoch in 1..=cfg.max_epochs {
        let mut losses = Vec::new();
        let mut pending: BTreeMap<ParamId, Array2<f64>> = BTreeMap::new();
        let mut accumulated = 0;
        let plan_seed = crate::seed::derive_seed(cfg.seed, &[stage as u64]);
        let apply = |pending: &mut BTreeMap<ParamId, Array2<f64>>, k: usize, opt: &mut AdamW, store: &mut ParamStore| {
            let grads: Vec<(ParamId, Array2<f64>)> = std::mem::take(pending)
                .into_iter()
                .map(|(id, g)| (id, g / k as f64))
                .collect();
            opt.step(store, &grads, lr, &frozen);
        };
        for (step, batch) in batch_iterator(&setup.train, &cfg.batch, plan_seed, epoch as u64, true).enumerate() {
            let batch = setup.prepare(batch)?;
            let mut g = Graph::new();
            let (total, report) = batch_objective(model, &mut g, &batch, cfg.scenario, &cfg.loss, true)?;
            g.backward(total);
            for (id, gr) in g.param_grads() {
                match pending.get_mut(&id) {
                    Some(acc) => *acc += &gr,
                    None => {
                        pending.insert(id, gr);
                    }
                }
            }
            accumulated += 1;
            if accumulated == cfg.batch.grad_accumulation {
                apply(&mut pending, accumulated, &mut opt, &mut model.store);
                accumulated = 0;
            }
            log.record(&serde_json::json!({
                "kind": "step", "stage": stage, "epoch": epoch, "step": step, "loss": report,
            }))?;
            losses.push(report.total);
        }
        if accumulated > 0 {
            apply(&mut pending, accumulated, &mut opt, &mut model.store);
        }
        let (dev_loss, dev_report) = setup.evaluate(model)?;
        let rec = EpochRecord {
            epoch,
            train_loss: mean(&losses),
            dev_loss,
            dev_report,
        };
        log.record(&serde_json::json!({
            "kind": "epoch", "stage": stage, "epoch": epoch,
            "train_loss": rec.train_loss, "dev_loss": rec.dev_loss, "dev": rec.dev_report,
        }))?;
        epochs.push(rec);
        stopped = epoch;
        match stopper.observe(epoch, dev_loss) {
            StopDecision::Improved => {
                best = snapshot(&model.store);
                if let Some(p) = best_checkpoint {
                    let saved_stage = model.stage;
                    model.stage = stage;
                    save_checkpoint(model, p)?;
                    model.stage = saved_stage;
                }
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    if stopper.best_epoch() > 0 {
        restore(&mut model.store, &best);
    }
    model.stage = stage;
    let best_dev = if stopper.best_epoch() > 0 { stopper.best_loss() } else { initial };
    log.record(&serde_json::json!({
        "kind": "stage_end", "stage": stage, "best_epoch": stopper.best_epoch(),
        "best_dev_loss": best_dev, "param_digest": model.param_digest(),
    }))?;
    Ok(RunRecord {
        scenario: cfg.scenario,
        stage,
        seed: cfg.seed,
        config_digest: cfg.digest(),
        initial_dev_loss: initial,
        epochs,
        best_epoch: stopper.best_epoch(),
        best_dev_loss: best_dev,
        stopped_epoch: stopped,
        best_param_digest: model.param_digest(),
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

/// What to run in [`train_scenario`].
#[derive(Debug, Clone, Default)]
pub struct StageSelection {
    /// `None` runs both stages; `Some(1)` or `Some(2)` runs one.
    pub only: Option<u8>,
    /// Stage-1 checkpoint to continue from when only stage 2 runs.
    pub resume: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ScenarioOutcome {
    pub model: SiseModel,
    pub records: Vec<RunRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Loads the SE-Base enhancer for SISE-P.
pub fn load_preprocessor(cfg: &TrainConfig) -> Result<SiseModel> {
    let path = cfg.se_base_checkpoint.as_ref().ok_or_else(|| {
        Error::InvalidState("sise-p needs a trained se-base checkpoint (se_base_checkpoint)".into())
    })?;
    if !path.is_file() {
        return Err(Error::InvalidState(format!(
            "se-base checkpoint {} does not exist",
            path.display()
        )));
    }
    let m = load_checkpoint(path, None)?;
    if !m.heads.se {
        return Err(Error::InvalidState(format!(
            "{} has no enhancement head",
            path.display()
        )));
    }
    Ok(m)
}

/// Trains one scenario end to end into `run_dir`: `stage1.ckpt`,
/// `stage2.ckpt`, `metrics.jsonl`, `run_record_stage{n}.json` and
/// `config.resolved.toml`.
pub fn train_scenario(
    cfg: &TrainConfig,
    manifest: &CorpusManifest,
    run_dir: &Path,
    stages: &StageSelection,
) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let scenario = cfg.scenario;
    let preprocessor = match scenario {
        Scenario::SiseP => Some(load_preprocessor(cfg)?),
        _ => None,
    };
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let snapshot_path = run_dir.join("config.resolved.toml");
    std::fs::write(&snapshot_path, cfg.to_toml()?).map_err(|e| Error::io(&snapshot_path, e))?;

    let noisy = scenario.uses_noisy_data();
    let mut train = Dataset::load(manifest, Split::Train, noisy)?;
    let mut dev = Dataset::load(manifest, Split::Dev, noisy)?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{scenario} needs {} train and dev entries",
            if noisy { "augmented" } else { "clean" }
        )));
    }
    if let (Some(pre), true) = (&preprocessor, cfg.cache_enhanced) {
        for u in train.items.iter_mut().chain(dev.items.iter_mut()) {
            let e = pre.se_forward(u.input())?.enhanced;
            u.noisy = Some(e);
        }
    }
    let setup = TrainingSetup {
        cfg,
        train,
        dev,
        preprocessor: if cfg.cache_enhanced { None } else { preprocessor.as_ref() },
    };

    let mut model = match (stages.only, &stages.resume) {
        (Some(2), Some(p)) => {
            let m = load_checkpoint(p, Some(&cfg.model))?;
            if m.scenario != Some(scenario) {
                return Err(Error::InvalidState(format!(
                    "{} was trained for {:?}, not {scenario}",
                    p.display(),
                    m.scenario
                )));
            }
            m
        }
        (Some(2), None) => {
            return Err(Error::InvalidState("stage 2 needs a stage-1 checkpoint to resume from".into()));
        }
        _ => {
            let mut m = SiseModel::for_scenario(cfg.model.clone(), scenario)?;
            m.seed = cfg.seed;
            if scenario.uses_si_loss() {
                m.track_norm = TrackNorm::fit(setup.train.items.iter().map(|u| &u.track))?;
            }
            m
        }
    };
    if let Some(pre) = &preprocessor {
        let dst = run_dir.join("preprocessor.ckpt");
        save_checkpoint(pre, &dst)?;
        model.preprocessor = Some(PreprocessorRef {
            file: "preprocessor.ckpt".into(),
            param_digest: pre.param_digest(),
        });
    }

    let mut log = MetricsLog::open(&run_dir.join("metrics.jsonl"))?;
    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    let to_run: Vec<u8> = match stages.only {
        Some(s) => vec![s],
        None => vec![1, 2],
    };
    for stage in to_run {
        let best = run_dir.join(format!("best_stage{stage}.ckpt"));
        let rec = run_stage(&mut model, &setup, stage, &mut log, Some(&best))?;
        let ckpt = run_dir.join(format!("stage{stage}.ckpt"));
        save_checkpoint(&model, &ckpt)?;
        let rp = run_dir.join(format!("run_record_stage{stage}.json"));
        std::fs::write(&rp, serde_json::to_vec_pretty(&rec)?).map_err(|e| Error::io(&rp, e))?;
        records.push(rec);
        checkpoints.push(ckpt);
    }
    Ok(ScenarioOutcome {
        model,
        records,
        checkpoints,
    })
}

/// Loads a trained model and, for SISE-P, its enhancer.
pub fn load_pipeline(path: &Path) -> Result<(SiseModel, Option<SiseModel>)> {
    let m = load_checkpoint(path, None)?;
    let pre = match &m.preprocessor {
        Some(r) => {
            let p = path.parent().unwrap_or(Path::new(".")).join(&r.file);
            let pre = load_checkpoint(&p, None)?;
            if pre.param_digest() != r.param_digest {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "{} does not match the recorded preprocessor digest",
                    p.display()
                )));
            }
            Some(pre)
        }
        None => None,
    };
    Ok((m, pre))
}

/// Inversion through a loaded pipeline.
pub fn invert(model: &SiseModel, preprocessor: Option<&SiseModel>, wave: &Waveform) -> Result<crate::track::ArticulatoryTrack> {
    match preprocessor {
        Some(pre) => model.si_forward(&pre.se_forward(wave)?.enhanced),
        None => model.si_forward(wave),
    }
}

/// Truncates or edge-extends to exactly `frames` rows.
fn fit_frames(t: &Array2<f64>, frames: usize) -> Array2<f64> {
    let n = t.nrows();
    Array2::from_shape_fn((frames, t.ncols()), |(i, c)| t[[i.min(n - 1), c]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_waits_for_strict_improvement() {
        let mut s = EarlyStopping::new(5);
        let seq = [1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95, 0.5];
        let mut stopped = None;
        for (i, l) in seq.iter().enumerate() {
            if s.observe(i + 1, *l) == StopDecision::Stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(7));
        assert_eq!(s.best_epoch(), 2);
        assert_eq!(s.best_loss(), 0.9);
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        let mut s = EarlyStopping::new(2);
        assert_eq!(s.observe(1, 1.0), StopDecision::Improved);
        assert_eq!(s.observe(2, 1.0), StopDecision::Continue);
        assert_eq!(s.observe(3, 1.0), StopDecision::Stop);
        assert_eq!(s.best_epoch(), 1);
    }

    #[test]
    fn fit_frames_extends_and_truncates() {
        let t = Array2::from_shape_fn((3, 2), |(i, c)| (i * 10 + c) as f64);
        assert_eq!(fit_frames(&t, 5).row(4), t.row(2));
        assert_eq!(fit_frames(&t, 2).nrows(), 2);
    }
}

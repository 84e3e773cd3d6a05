//! Classifier pretraining, the two-phase alternating update, checkpoints and resume.

mod adam;
pub mod checkpoint;
mod config;
mod loader;
mod scheduler;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{is_trainable, Adam};
pub use checkpoint::{CheckpointConfig, RngState, TrainState};
pub use config::{AdamConfig, Task, TrainConfig};
pub use loader::{
    load_eval_split, sample_carriers, task_label, task_labels, BalancedSampler, Batch, ImageCache,
};
pub use scheduler::StepLr;

use crate::data::{DatasetManifest, PatchPolicy, Split};
use crate::error::{GfdError, Result};
use crate::inference::{evaluate_samples, load_samples, EvalMode, EvalSample};
use crate::losses::{scalar, total_dc, total_g, GeneratorTerms, LossReport, Phase};
use crate::model::{composite_batch, network_seed, GfdModel, ModelConfig};
use crate::networks::ParamStore;

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    #[serde(flatten)]
    pub report: LossReport,
    pub lr: f64,
}

impl CheckpointConfig {
    /// Config for training on `manifest`, with the task's label taxonomy.
    pub fn for_manifest(
        manifest: &DatasetManifest,
        model: ModelConfig,
        train: TrainConfig,
        patch: PatchPolicy,
    ) -> Self {
        let labels = task_labels(manifest, train.task);
        Self {
            model,
            train,
            patch,
            labels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.patch.validate()
    }
}

fn prefixed(prefix: &str, store: &ParamStore) -> Vec<(String, Var)> {
    store
        .named_vars()
        .into_iter()
        .map(|(k, v)| (format!("{prefix}.{k}"), v))
        .collect()
}

/// Drops gradients of every variable in `frozen`, so that nothing outside the
/// phase's parameter group holds an accumulated gradient.
fn prune(grads: &mut GradStore, frozen: &[&ParamStore]) {
    for store in frozen {
        for (_, v) in store.named_vars() {
            grads.remove(v.as_tensor());
        }
    }
}

fn accumulate(total: &mut Option<Tensor>, term: Tensor) -> Result<()> {
    *total = Some(match total.take() {
        Some(t) => (t + term)?,
        None => term,
    });
    Ok(())
}

/// Owns all networks, optimizers and the data RNG of one run.
pub struct Trainer {
    pub model: GfdModel,
    pub config: CheckpointConfig,
    opt_gh: Adam,
    opt_d: Adam,
    opt_c: Adam,
    rng: ChaCha8Rng,
    sched: StepLr,
    iteration: usize,
    pretrain_done: bool,
    best_val: Option<f64>,
    device: Device,
}

impl Trainer {
    pub fn new(config: CheckpointConfig, device: &Device) -> Result<Self> {
        config.validate()?;
        let t = &config.train;
        let with_perceptual = t.weights.enabled.perceptual;
        let model = GfdModel::new(
            &config.model,
            config.labels.len(),
            with_perceptual,
            DType::F32,
            device,
            t.seed,
        )?;
        let mut gh = prefixed("G", model.generator.store());
        gh.extend(prefixed("H", model.head.store()));
        let opt_gh = Adam::new(gh, t.adam);
        let opt_d = Adam::new(model.discriminator.store().named_vars(), t.adam);
        let opt_c = Adam::new(model.classifier.store().named_vars(), t.adam);
        let rng = ChaCha8Rng::seed_from_u64(network_seed(t.seed, "data"));
        let sched = StepLr::new(t.lr, t.gamma, t.step_size);
        Ok(Self {
            model,
            config,
            opt_gh,
            opt_d,
            opt_c,
            rng,
            sched,
            iteration: 0,
            pretrain_done: false,
            best_val: None,
            device: device.clone(),
        })
    }

    /// Completed joint iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn best_val(&self) -> Option<f64> {
        self.best_val
    }

    pub fn pretrain_done(&self) -> bool {
        self.pretrain_done
    }

    /// Learning rate of the next joint iteration.
    pub fn lr(&self) -> f64 {
        self.sched.lr(self.iteration)
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Draws the batch for joint iteration `self.iteration`.
    pub fn next_batch(&mut self, sampler: &mut BalancedSampler) -> Result<Batch> {
        let bs = self.config.train.batch_size;
        sampler.batch(
            self.iteration * bs,
            bs,
            &mut self.rng,
            DType::F32,
            &self.device,
        )
    }

    /// One classifier update on the input images alone, at pretraining step `k`.
    pub fn pretrain_step(&mut self, batch: &Batch, k: usize) -> Result<LossReport> {
        let loss = self.model.loss_aux_cls_c(&batch.images, &batch.labels)?;
        let value = scalar(&loss)?;
        let mut grads = loss.backward()?;
        prune(
            &mut grads,
            &[
                self.model.generator.store(),
                self.model.head.store(),
                self.model.discriminator.store(),
            ],
        );
        self.opt_c.step(&grads, self.sched.lr(k))?;
        Ok(LossReport {
            phase: Phase::PretrainC,
            latent: 0.0,
            adversarial: 0.0,
            aux_cls: value,
            perceptual: 0.0,
            total: value,
        })
    }

    /// Runs `pretrain_c_iters` classifier updates. Calls `log` per step.
    pub fn pretrain_classifier(
        &mut self,
        sampler: &mut BalancedSampler,
        mut log: impl FnMut(&MetricsRecord) -> Result<()>,
    ) -> Result<()> {
        let bs = self.config.train.batch_size;
        for k in 0..self.config.train.pretrain_c_iters {
            let batch = sampler.batch(k * bs, bs, &mut self.rng, DType::F32, &self.device)?;
            let report = self.pretrain_step(&batch, k)?;
            log(&MetricsRecord {
                step: k,
                report,
                lr: self.sched.lr(k),
            })?;
        }
        self.pretrain_done = true;
        Ok(())
    }

    /// Phase 1 updates G and H with D, C and F fixed; phase 2 updates D and C
    /// with G fixed. Disabled terms are neither computed nor back-propagated.
    pub fn train_step(&mut self, batch: &Batch) -> Result<(LossReport, LossReport)> {
        self.train_step_with(batch, |_| Ok(()))
    }

    /// [`Trainer::train_step`] with `between` called on the model after phase 1.
    pub fn train_step_with(
        &mut self,
        batch: &Batch,
        between: impl FnOnce(&GfdModel) -> Result<()>,
    ) -> Result<(LossReport, LossReport)> {
        let lr = self.lr();
        let weights = self.config.train.weights;
        let on = weights.enabled;
        let [w1, w2, w3, w4] = weights.effective();
        let x = &batch.images;
        let y = &batch.labels;

        let needs_fp = on.adversarial || on.aux_cls || on.perceptual;
        let carriers = if needs_fp {
            let idx = sample_carriers(y, &mut self.rng)?;
            Some(x.index_select(&Tensor::new(idx.as_slice(), &self.device)?, 0)?)
        } else {
            None
        };

        let m = &self.model;
        let (fp, z) = m.generator.forward_t(x, true)?;
        let mut terms = GeneratorTerms::default();
        let mut objective = None;
        if on.latent {
            let l = m.loss_latent_cls(&z, y)?;
            terms.latent = scalar(&l)?;
            accumulate(&mut objective, (l * w1)?)?;
        }
        if let Some(carriers) = &carriers {
            let x_fp = composite_batch(&fp, carriers)?;
            if on.adversarial {
                let l = m.loss_adv_g(&x_fp)?;
                terms.adversarial = scalar(&l)?;
                accumulate(&mut objective, (l * w2)?)?;
            }
            if on.aux_cls {
                let l = m.loss_aux_cls_g(&x_fp, y)?;
                terms.aux_cls = scalar(&l)?;
                accumulate(&mut objective, (l * w3)?)?;
            }
            if on.perceptual {
                let l = m.loss_perceptual(&x_fp, carriers)?;
                terms.perceptual = scalar(&l)?;
                accumulate(&mut objective, (l * w4)?)?;
            }
        }
        let g_report = total_g(&terms, &weights);
        if let Some(obj) = objective {
            let mut grads = obj.backward()?;
            prune(&mut grads, &[m.discriminator.store(), m.classifier.store()]);
            self.opt_gh.step(&grads, lr)?;
        }
        between(m)?;

        let mut d_loss = 0.0;
        let mut c_loss = 0.0;
        let mut objective = None;
        if on.adversarial {
            let carriers = carriers
                .as_ref()
                .expect("carriers sampled when adversarial is on");
            let (fp, _) = m.generator.forward_t(x, false)?;
            let x_fp = composite_batch(&fp.detach(), carriers)?;
            let l = m.loss_adv_d(x, &x_fp)?;
            d_loss = scalar(&l)?;
            accumulate(&mut objective, l)?;
        }
        if on.aux_cls {
            let l = m.loss_aux_cls_c(x, y)?;
            c_loss = scalar(&l)?;
            accumulate(&mut objective, l)?;
        }
        if let Some(obj) = objective {
            let mut grads = obj.backward()?;
            prune(&mut grads, &[m.generator.store(), m.head.store()]);
            if on.adversarial {
                self.opt_d.step(&grads, lr)?;
            }
            if on.aux_cls {
                self.opt_c.step(&grads, lr)?;
            }
        }
        self.iteration += 1;
        Ok((g_report, total_dc(c_loss, d_loss)))
    }

    /// Closed-world accuracy of `H(G_enc(x))` on prepared samples.
    pub fn validate(&self, samples: &[EvalSample]) -> Result<f64> {
        let report = evaluate_samples(
            &self.model.generator,
            &self.model.head,
            &self.config.labels,
            self.config.train.task,
            EvalMode::Closed,
            samples,
        )?;
        Ok(report.overall_accuracy)
    }

    pub fn state(&self) -> TrainState {
        let optimizer_steps = BTreeMap::from([
            ("GH".to_string(), self.opt_gh.steps()),
            ("D".to_string(), self.opt_d.steps()),
            ("C".to_string(), self.opt_c.steps()),
        ]);
        TrainState {
            iteration: self.iteration,
            pretrain_done: self.pretrain_done,
            optimizer_steps,
            rng: RngState::capture(&self.rng),
            best_val: self.best_val,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let m = &self.model;
        checkpoint::save_networks(
            dir,
            &[
                ("G", m.generator.store()),
                ("H", m.head.store()),
                ("D", m.discriminator.store()),
                ("C", m.classifier.store()),
            ],
        )?;
        checkpoint::write_json(&dir.join(checkpoint::CONFIG_FILE), &self.config)?;
        let mut moments = self.opt_gh.export("GH");
        moments.extend(self.opt_d.export("D"));
        moments.extend(self.opt_c.export("C"));
        candle_core::safetensors::save(&moments, dir.join(checkpoint::OPTIMIZER_FILE))?;
        checkpoint::write_json(&dir.join(checkpoint::STATE_FILE), &self.state())
    }

    /// Restores networks, optimizer moments, RNG and counters.
    pub fn resume(dir: &Path, device: &Device) -> Result<Self> {
        let config = checkpoint::read_config(dir)?;
        let mut t = Self::new(config, device)?;
        let m = &t.model;
        checkpoint::load_network(dir, "G", m.generator.store())?;
        checkpoint::load_network(dir, "H", m.head.store())?;
        checkpoint::load_network(dir, "D", m.discriminator.store())?;
        checkpoint::load_network(dir, "C", m.classifier.store())?;
        let state: TrainState = checkpoint::read_json(&dir.join(checkpoint::STATE_FILE))?;
        let opt_path = dir.join(checkpoint::OPTIMIZER_FILE);
        if !opt_path.is_file() {
            return Err(GfdError::MissingFile(opt_path));
        }
        let moments: std::collections::HashMap<String, Tensor> =
            candle_core::safetensors::load(&opt_path, device)?;
        let steps = |k: &str| state.optimizer_steps.get(k).copied().unwrap_or(0);
        t.opt_gh.import("GH", &moments, steps("GH"))?;
        t.opt_d.import("D", &moments, steps("D"))?;
        t.opt_c.import("C", &moments, steps("C"))?;
        t.rng = state.rng.restore()?;
        t.iteration = state.iteration;
        t.pretrain_done = state.pretrain_done;
        t.best_val = state.best_val;
        Ok(t)
    }
}

/// Paths and outcome of a [`fit`] run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub iterations: usize,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub best_val: Option<f64>,
    pub metrics: PathBuf,
    pub last: Option<(LossReport, LossReport)>,
}

pub const METRICS_FILE: &str = "metrics.jsonl";

struct MetricsLog(BufWriter<File>);

impl MetricsLog {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let f = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)?;
        Ok(Self(BufWriter::new(f)))
    }

    fn write(&mut self, rec: &MetricsRecord) -> Result<()> {
        serde_json::to_writer(&mut self.0, rec)?;
        self.0.write_all(b"\n")?;
        Ok(())
    }
}

/// Pretrains C, then alternates phases until `max_iters`, writing
/// `metrics.jsonl`, periodic `checkpoints/iter_NNNNNN`, `best` (highest
/// closed-world val accuracy) and `final` under `out_dir`.
pub fn fit(
    manifest: &DatasetManifest,
    config: CheckpointConfig,
    out_dir: &Path,
    resume: Option<&Path>,
    device: &Device,
) -> Result<FitSummary> {
    let mut trainer = match resume {
        Some(dir) => {
            let mut t = Trainer::resume(dir, device)?;
            // Run length and bookkeeping may change on resume; everything else is fixed by the checkpoint.
            let mut run = t.config.clone();
            run.train.max_iters = config.train.max_iters;
            run.train.val_every = config.train.val_every;
            run.train.checkpoint_every = config.train.checkpoint_every;
            if run != config {
                log::warn!("resuming with the checkpoint's model and optimizer settings; other supplied changes are ignored");
            }
            t.config = run;
            t
        }
        None => Trainer::new(config, device)?,
    };
    let cfg = trainer.config.clone();
    let expected = task_labels(manifest, cfg.train.task);
    if expected != cfg.labels {
        return Err(GfdError::Taxonomy(format!(
            "manifest labels {:?} differ from {:?}",
            expected.names(),
            cfg.labels.names()
        )));
    }
    fs::create_dir_all(out_dir)?;
    checkpoint::write_json(&out_dir.join(checkpoint::CONFIG_FILE), &cfg)?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let mut metrics = MetricsLog::open(&metrics_path, resume.is_some())?;

    let mut sampler = BalancedSampler::new(
        manifest,
        Split::Train,
        cfg.train.task,
        cfg.patch,
        cfg.train.cache_images,
    )?;
    let val = match manifest.require_split(Split::Val) {
        Ok(()) => Some(load_samples(manifest, Split::Val, &cfg, EvalMode::Closed)?),
        Err(e) => {
            log::warn!("validation disabled: {e}");
            None
        }
    };

    if !trainer.pretrain_done {
        log::info!(
            "pretraining C for {} iterations",
            cfg.train.pretrain_c_iters
        );
        trainer.pretrain_classifier(&mut sampler, |rec| metrics.write(rec))?;
        trainer
            .model
            .classifier
            .store()
            .save(&out_dir.join("C_pretrained.safetensors"))?;
    }

    let best_dir = out_dir.join("best");
    let mut last = None;
    let max = cfg.train.max_iters;
    while trainer.iteration < max {
        let step = trainer.iteration;
        let lr = trainer.lr();
        let batch = trainer.next_batch(&mut sampler)?;
        let (g, dc) = trainer.train_step(&batch)?;
        metrics.write(&MetricsRecord {
            step,
            report: g,
            lr,
        })?;
        metrics.write(&MetricsRecord {
            step,
            report: dc,
            lr,
        })?;
        metrics.0.flush()?;
        last = Some((g, dc));
        let done = trainer.iteration;
        if done % 50 == 0 || done == max {
            log::info!(
                "iter {done}/{max} lr {lr:.3e} G {:.4} DC {:.4}",
                g.total,
                dc.total
            );
        }
        let validate_now =
            done == max || (cfg.train.val_every > 0 && done % cfg.train.val_every == 0);
        if let (true, Some(val)) = (validate_now, &val) {
            let acc = trainer.validate(val)?;
            log::info!("iter {done}: val accuracy {acc:.4}");
            if trainer.best_val.is_none_or(|b| acc > b) {
                trainer.best_val = Some(acc);
                if best_dir.exists() {
                    fs::remove_dir_all(&best_dir)?;
                }
                trainer.save(&best_dir)?;
            }
        }
        if cfg.train.checkpoint_every > 0 && done % cfg.train.checkpoint_every == 0 {
            trainer.save(&out_dir.join("checkpoints").join(format!("iter_{done:06}")))?;
        }
    }
    metrics.0.flush()?;
    let final_dir = out_dir.join("final");
    trainer.save(&final_dir)?;
    Ok(FitSummary {
        iterations: trainer.iteration,
        final_checkpoint: final_dir,
        best_checkpoint: best_dir.exists().then_some(best_dir),
        best_val: trainer.best_val,
        metrics: metrics_path,
        last,
    })
}

//! Training loops for the three model configurations and k-space inference.
//!
//! Inputs and targets live in the signed-log k-space domain. The Fixed model
//! sees one frozen equispaced mask throughout; Baseline and Mask redraw the
//! mask per sample and epoch from seeds derived from `(seed, epoch, index)`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Rmsprop, RmspropConfig, Tape, Tensor};
use crate::error::{Error, Result};
use crate::kspace::{self, ComplexGrid, Image};
use crate::masks::{gen_mask, Mask, MaskPattern, MaskTemplate};
use crate::model::{build_unet, Checkpoint, ModelKind, UnetConfig, UnetModel};
use crate::phantom::{DatasetManifest, PhantomSample, Split};
use crate::seed;

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_TRAIN_MASK: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_FIXED_MASK: u64 = 5;
const STREAM_VAL_MASK: u64 = 6;

fn default_batch() -> usize {
    8
}
fn default_lr() -> f64 {
    0.01
}
fn default_drop_factor() -> f64 {
    0.1
}
fn default_val_every() -> usize {
    1
}
fn default_depth() -> usize {
    3
}
fn default_base() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    /// Pattern, R and center fraction of the training masks.
    pub train_mask: MaskTemplate,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Epoch (0-based) from which the learning rate is multiplied by
    /// `lr_drop_factor`; defaults to 20% of `epochs`.
    #[serde(default)]
    pub lr_drop_epoch: Option<usize>,
    #[serde(default = "default_drop_factor")]
    pub lr_drop_factor: f64,
    #[serde(default)]
    pub seed: u64,
    /// Dataset manifest (file or directory).
    #[serde(default)]
    pub dataset: PathBuf,
    /// Validate every this many epochs (the last epoch always validates).
    #[serde(default = "default_val_every")]
    pub val_every: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_base")]
    pub base_channels: usize,
    /// Overrides the model's default input/output rescaling.
    #[serde(default)]
    pub io_scale: Option<f64>,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "RmspropDefaults::alpha")]
    pub rmsprop_alpha: f64,
    #[serde(default = "RmspropDefaults::eps")]
    pub rmsprop_eps: f64,
    /// Linear learning-rate warmup over the first optimizer steps.
    #[serde(default)]
    pub warmup_steps: usize,
    /// Use at most this many training samples (all when absent).
    #[serde(default)]
    pub max_train_samples: Option<usize>,
}

struct RmspropDefaults;

impl RmspropDefaults {
    fn alpha() -> f64 {
        RmspropConfig::default().alpha
    }
    fn eps() -> f64 {
        RmspropConfig::default().eps
    }
}

impl TrainConfig {
    /// Desk-scale recipe for one model kind: Fixed trains on the fixed
    /// equispaced mask, the others on the varying-offset one, all at R = 4.
    pub fn standard(kind: ModelKind, dataset: impl Into<PathBuf>, epochs: usize, seed: u64) -> Self {
        let pattern = match kind {
            ModelKind::Fixed => MaskPattern::EquispacedFixed,
            _ => MaskPattern::EquispacedRandomOffset,
        };
        Self {
            model_kind: kind,
            train_mask: MaskTemplate::standard(pattern, 4),
            epochs,
            batch_size: default_batch(),
            lr: default_lr(),
            lr_drop_epoch: None,
            lr_drop_factor: default_drop_factor(),
            seed,
            dataset: dataset.into(),
            val_every: default_val_every(),
            depth: default_depth(),
            base_channels: default_base(),
            io_scale: None,
            sigma: 0.0,
            rmsprop_alpha: RmspropDefaults::alpha(),
            rmsprop_eps: RmspropDefaults::eps(),
            warmup_steps: 0,
            max_train_samples: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn unet(&self) -> UnetConfig {
        let mut c = UnetConfig::new(self.model_kind.in_channels(), self.depth, self.base_channels);
        if let Some(s) = self.io_scale {
            c.io_scale = s;
        }
        c
    }

    pub fn rmsprop(&self) -> RmspropConfig {
        RmspropConfig {
            lr: self.lr,
            alpha: self.rmsprop_alpha,
            eps: self.rmsprop_eps,
        }
    }

    pub fn drop_epoch(&self) -> usize {
        self.lr_drop_epoch
            .unwrap_or_else(|| (self.epochs as f64 * 0.2).round() as usize)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.drop_epoch() {
            self.lr * self.lr_drop_factor
        } else {
            self.lr
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.val_every == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch_size and val_every must be positive".into(),
            ));
        }
        if !(self.lr_drop_factor > 0.0) || !(self.sigma >= 0.0) {
            return Err(Error::InvalidArgument("lr_drop_factor must be > 0 and sigma >= 0".into()));
        }
        self.rmsprop().validate()?;
        self.unet().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
}

impl TrainLog {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    /// `epoch,train_loss,val_loss,lr,seconds`; missing validation is empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr,seconds\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| format!("{v:.9e}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{:.9e},{},{},{:.3}\n",
                e.epoch, e.train_loss, val, e.lr, e.seconds
            ));
        }
        s
    }
}

/// Network input (k-space channels and optional mask channel) and target for
/// one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub kspace: Tensor<f32>,
    pub mask: Option<Tensor<f32>>,
    pub target: Tensor<f32>,
}

impl TrainingPair {
    pub fn input_channels(&self) -> usize {
        2 + usize::from(self.mask.is_some())
    }
}

/// Transformed full k-space of an image, 1×2×H×W.
pub fn transformed_target(x: &Image) -> Tensor<f32> {
    kspace::pack_channels(&kspace::log_transform(&kspace::fft2c_image(x)))
}

fn pair_from_full(
    full: &ComplexGrid,
    target: &Tensor<f32>,
    mask: &Mask,
    sigma: f64,
    noise_seed: u64,
    with_mask: bool,
) -> Result<TrainingPair> {
    let k_us = kspace::acquire(full, mask, sigma, noise_seed)?;
    Ok(TrainingPair {
        kspace: kspace::pack_channels(&kspace::log_transform(&k_us)),
        mask: with_mask.then(|| mask.to_channel(full.height())),
        target: target.clone(),
    })
}

/// Builds the transformed-domain pair for a sample under `mask`.
pub fn make_training_pair(sample: &PhantomSample, mask: &Mask, sigma: f64, kind: ModelKind) -> Result<TrainingPair> {
    if mask.width() != sample.image.width() {
        return Err(Error::shape(
            "make_training_pair",
            format!("mask width {} vs image width {}", mask.width(), sample.image.width()),
        ));
    }
    let full = kspace::fft2c_image(&sample.image);
    let target = kspace::pack_channels(&kspace::log_transform(&full));
    let noise_seed = seed::derive(sample.seed, &[STREAM_NOISE]);
    pair_from_full(&full, &target, mask, sigma, noise_seed, kind.uses_mask())
}

/// Mask a model of `kind` trains on for `(epoch, index)`.
pub fn training_mask(config: &TrainConfig, width: usize, epoch: usize, index: usize) -> Result<Mask> {
    let s = match config.model_kind {
        ModelKind::Fixed => seed::derive(config.seed, &[STREAM_FIXED_MASK]),
        _ => seed::derive(config.seed, &[STREAM_TRAIN_MASK, epoch as u64, index as u64]),
    };
    gen_mask(&config.train_mask.spec(width, s))
}

/// Frozen validation mask for a sample: equispaced varying offset at the
/// training R and center fraction, independent of model kind.
pub fn validation_mask(config: &TrainConfig, width: usize, sample_id: &str) -> Result<Mask> {
    let template = MaskTemplate::new(
        MaskPattern::EquispacedRandomOffset,
        config.train_mask.acceleration,
        config.train_mask.center_fraction,
    );
    let s = seed::derive(config.seed, &[STREAM_VAL_MASK, seed::hash_strs(&[sample_id])]);
    gen_mask(&template.spec(width, s))
}

struct Prepared {
    full: ComplexGrid,
    target: Tensor<f32>,
    noise_seed: u64,
}

fn prepare(samples: &[PhantomSample]) -> Vec<Prepared> {
    samples
        .iter()
        .map(|s| {
            let full = kspace::fft2c_image(&s.image);
            let target = kspace::pack_channels(&kspace::log_transform(&full));
            Prepared {
                full,
                target,
                noise_seed: seed::derive(s.seed, &[STREAM_NOISE]),
            }
        })
        .collect()
}

fn stack(pairs: &[TrainingPair]) -> Result<(Tensor<f32>, Option<Tensor<f32>>, Tensor<f32>)> {
    let k: Vec<&Tensor<f32>> = pairs.iter().map(|p| &p.kspace).collect();
    let t: Vec<&Tensor<f32>> = pairs.iter().map(|p| &p.target).collect();
    let m = if pairs.iter().all(|p| p.mask.is_some()) {
        let ms: Vec<&Tensor<f32>> = pairs.iter().filter_map(|p| p.mask.as_ref()).collect();
        Some(Tensor::stack_batch(&ms)?)
    } else {
        None
    };
    Ok((Tensor::stack_batch(&k)?, m, Tensor::stack_batch(&t)?))
}

/// One optimization step on a batch; returns the loss.
fn train_step(model: &mut UnetModel<f32>, opt: &mut Rmsprop<f32>, pairs: &[TrainingPair]) -> Result<f64> {
    let (k, m, t) = stack(pairs)?;
    let mut tape = Tape::new();
    let x = tape.leaf(k, false)?;
    let mv = m.map(|m| tape.leaf(m, false)).transpose()?;
    let tv = tape.leaf(t, false)?;
    let out = model.forward(&mut tape, x, mv, true)?;
    let loss = tape.l1_loss(out.output, tv)?;
    let value = f64::from(tape.value(loss).data()[0]);
    tape.backward(loss)?;
    model.collect_grads(&tape, &out.bound)?;
    opt.step(model.params_mut())?;
    Ok(value)
}

/// Mean per-sample L1 loss over validation pairs (no gradients).
pub fn evaluate_loss(model: &UnetModel<f32>, pairs: &[TrainingPair], batch_size: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no validation samples".into()));
    }
    let mut total = 0.0;
    for chunk in pairs.chunks(batch_size.max(1)) {
        let (k, m, t) = stack(chunk)?;
        let mut tape = Tape::new();
        let x = tape.leaf(k, false)?;
        let mv = m.map(|m| tape.leaf(m, false)).transpose()?;
        let tv = tape.leaf(t, false)?;
        let out = model.forward(&mut tape, x, mv, false)?;
        let loss = tape.l1_loss(out.output, tv)?;
        total += f64::from(tape.value(loss).data()[0]) * chunk.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Result of a training run held in memory.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: TrainLog,
    /// Best-validation checkpoint (the last epoch when no validation ran).
    pub best: Checkpoint,
}

/// Trains on in-memory samples. When `out_dir` is given the best checkpoint
/// is written as `<kind>.ckpt` and the log as `<kind>_log.csv` there.
pub fn train_on_samples(
    config: &TrainConfig,
    train: &[PhantomSample],
    val: &[PhantomSample],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty training split".into()))?;
    let (h, w) = (first.image.height(), first.image.width());
    if train.iter().chain(val).any(|s| s.image.height() != h || s.image.width() != w) {
        return Err(Error::InvalidArgument("all samples must share one image size".into()));
    }
    let mut model = build_unet::<f32>(config.unet(), seed::derive(config.seed, &[STREAM_INIT]))?;
    let mut opt = Rmsprop::new(config.rmsprop(), model.params())?;
    let kind = config.model_kind;

    let prepared = prepare(train);
    let val_pairs = val
        .iter()
        .map(|s| {
            let mask = validation_mask(config, w, &s.sample_id)?;
            make_training_pair(s, &mask, config.sigma, kind)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut log = TrainLog::default();
    let mut best: Option<Checkpoint> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut global_step = 0usize;
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.lr_at(epoch);
        opt.set_lr(lr);
        let mut rng = seed::rng(seed::derive(config.seed, &[STREAM_SHUFFLE, epoch as u64]));
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            if global_step < config.warmup_steps {
                opt.set_lr(lr * (global_step + 1) as f64 / config.warmup_steps as f64);
            } else {
                opt.set_lr(lr);
            }
            global_step += 1;
            let pairs = batch
                .iter()
                .map(|&i| {
                    let mask = training_mask(config, w, epoch, i)?;
                    let p = &prepared[i];
                    pair_from_full(&p.full, &p.target, &mask, config.sigma, p.noise_seed, kind.uses_mask())
                })
                .collect::<Result<Vec<_>>>()?;
            let loss = match train_step(&mut model, &mut opt, &pairs) {
                Ok(l) if l.is_finite() => l,
                Ok(l) => return Err(Error::Diverged { epoch, step, loss: l }),
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::Diverged {
                        epoch,
                        step,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;

        let validate = !val_pairs.is_empty() && ((epoch + 1) % config.val_every == 0 || epoch + 1 == config.epochs);
        let val_loss = if validate {
            Some(evaluate_loss(&model, &val_pairs, config.batch_size)?)
        } else {
            None
        };
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        });

        let improved = match (val_loss, log.best_val_loss) {
            (Some(v), Some(b)) => v < b,
            (Some(_), None) => true,
            (None, _) => val_pairs.is_empty(),
        };
        if improved {
            let mut ck = Checkpoint::new(kind, model.clone(), Some(&opt), config.seed, epoch);
            ck.header.train_mask = Some(config.train_mask);
            ck.header.image_size = Some([h, w]);
            ck.header.val_loss = val_loss;
            log.best_epoch = Some(epoch);
            log.best_val_loss = val_loss;
            best = Some(ck);
        }
    }
    let best = best.expect("at least one epoch ran");
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ck_path = dir.join(format!("{kind}.ckpt"));
        best.save(&ck_path)?;
        log.best_checkpoint = Some(ck_path);
        let log_path = dir.join(format!("{kind}_log.csv"));
        let mut f = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        f.write_all(log.to_csv().as_bytes())
            .map_err(|e| Error::io(&log_path, e))?;
    }
    Ok(TrainOutcome { log, best })
}

/// Loads the dataset named in the config and trains on its train/val splits.
pub fn train_model(config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let manifest = DatasetManifest::load(&config.dataset)?;
    let load = |split: Split, limit: Option<usize>| -> Result<Vec<PhantomSample>> {
        manifest
            .entries(split)
            .take(limit.unwrap_or(usize::MAX))
            .map(|e| manifest.load_sample(&e.sample_id))
            .collect()
    };
    let train = load(Split::Train, config.max_train_samples)?;
    let val = load(Split::Val, None)?;
    train_on_samples(config, &train, &val, out_dir)
}

/// Model inference followed by the inverse transform and magnitude image.
///
/// Entries whose predicted correction is exactly zero keep their measured
/// value, so an untrained (zero-residual) model reproduces zero-filling
/// bit for bit.
pub fn reconstruct(checkpoint: &Checkpoint, k_us: &ComplexGrid, mask: &Mask) -> Result<Image> {
    let kind = checkpoint.kind();
    let (h, w) = (k_us.height(), k_us.width());
    if mask.width() != w {
        return Err(Error::shape("reconstruct", format!("mask width {} vs k-space width {w}", mask.width())));
    }
    if kind.in_channels() != checkpoint.model.config().in_channels {
        return Err(Error::Incompatible(format!(
            "{kind} checkpoint has a {}-channel model",
            checkpoint.model.config().in_channels
        )));
    }
    let k_t = kspace::log_transform(k_us);
    let input = kspace::pack_channels::<f32>(&k_t);
    let mask_channel = kind.uses_mask().then(|| mask.to_channel::<f32>(h));
    let residual = checkpoint.model.predict_residual(&input, mask_channel.as_ref())?;
    let delta = residual.data();
    let plane = h * w;
    let mut out = k_us.clone();
    for (i, c) in out.data_mut().iter_mut().enumerate() {
        let (dre, dim) = (f64::from(delta[i]), f64::from(delta[plane + i]));
        if dre != 0.0 {
            c.re = kspace::signed_exp(k_t.data()[i].re + dre);
        }
        if dim != 0.0 {
            c.im = kspace::signed_exp(k_t.data()[i].im + dim);
        }
    }
    if out.data().iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite { op: "reconstruct" });
    }
    Ok(kspace::zero_fill_recon(&out))
}

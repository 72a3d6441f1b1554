//! Mini-batch training loop: seeded shuffle, cross-entropy, Adam (or SGD
//! with momentum), checkpointing. Single-threaded and bitwise deterministic
//! given (seed, data, config).

use crate::error::{Error, Result};
use crate::eval::{slice_is_covid, ClassLabel, SliceScore};
use crate::model::checkpoint::{Checkpoint, OptimizerSnapshot};
use crate::model::{
    bind_params, copy_grads, forward_tokens, predict, tokens_for_input, ForwardMode, ModelConfig,
    ModelParams,
};
use crate::rng::{epoch_order, DetRng};
use crate::tensor::optim::{Adam, Optimizer, SgdMomentum};
use crate::tensor::{Tape, Tensor};

/// Optimizer selection; Adam is the default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptKind {
    Adam,
    Sgd { momentum: f64 },
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Emit a checkpoint every this many steps (0 = only the final one).
    pub checkpoint_interval: u64,
    /// Stop after this many optimizer steps regardless of epochs.
    pub max_steps: Option<u64>,
    pub optimizer: OptKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 42,
            checkpoint_interval: 0,
            max_steps: None,
            optimizer: OptKind::Adam,
        }
    }
}

/// One labeled training input at model scale.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub subject_id: String,
    /// Slice source index (2D) or sub-volume number (3D).
    pub index: usize,
    pub input: Tensor,
    pub label: ClassLabel,
}

/// Optional observers for progress lines and interval checkpoints.
#[derive(Default)]
pub struct TrainHooks<'a> {
    pub on_step: Option<&'a mut dyn FnMut(u64, f64)>,
    pub on_checkpoint: Option<&'a mut dyn FnMut(&Checkpoint) -> Result<()>>,
}

fn build_optimizer(kind: OptKind) -> Optimizer {
    match kind {
        OptKind::Adam => Optimizer::Adam(Adam::new()),
        OptKind::Sgd { momentum } => Optimizer::Sgd(SgdMomentum::new(momentum)),
    }
}

fn restore_optimizer(snapshot: &OptimizerSnapshot) -> Optimizer {
    match snapshot {
        OptimizerSnapshot::Adam { step, m, v } => {
            Optimizer::Adam(Adam::restore(*step, m.clone(), v.clone()))
        }
        OptimizerSnapshot::Sgd {
            momentum,
            step,
            velocity,
        } => Optimizer::Sgd(SgdMomentum::restore(*momentum, *step, velocity.clone())),
    }
}

fn snapshot_optimizer(optimizer: &Optimizer, params: &ModelParams) -> OptimizerSnapshot {
    let zeros = || -> Vec<Vec<f64>> {
        params
            .named()
            .iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect()
    };
    match optimizer {
        Optimizer::Adam(a) => {
            let (step, m, v) = a.state();
            OptimizerSnapshot::Adam {
                step,
                m: if m.is_empty() { zeros() } else { m.to_vec() },
                v: if v.is_empty() { zeros() } else { v.to_vec() },
            }
        }
        Optimizer::Sgd(s) => {
            let (step, velocity) = s.state();
            OptimizerSnapshot::Sgd {
                momentum: s.momentum,
                step,
                velocity: if velocity.is_empty() {
                    zeros()
                } else {
                    velocity.to_vec()
                },
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn make_checkpoint(
    model: &ModelConfig,
    params: &ModelParams,
    optimizer: &Optimizer,
    epoch: usize,
    cursor: usize,
    step: u64,
    rng: &DetRng,
    loss_history: &[f64],
) -> Checkpoint {
    Checkpoint {
        model: model.clone(),
        params: params.clone(),
        optimizer: snapshot_optimizer(optimizer, params),
        epoch,
        cursor,
        step,
        rng: rng.state(),
        loss_history: loss_history.to_vec(),
    }
}

/// Trains from scratch or resumes from a checkpoint. Returns the final
/// checkpoint; its loss history has one entry per optimizer step.
pub fn train(
    samples: &[TrainSample],
    model: &ModelConfig,
    config: &TrainConfig,
    resume: Option<Checkpoint>,
    hooks: &mut TrainHooks<'_>,
) -> Result<Checkpoint> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::InvalidInput(
            "batch_size and epochs must be positive".into(),
        ));
    }
    model.validate()?;
    for s in samples {
        // Fail fast on inputs that do not match the variant.
        tokens_for_input(model, &s.input).map_err(|e| {
            Error::Pipeline(format!("subject `{}` sample {}: {e}", s.subject_id, s.index))
        })?;
    }

    let (mut params, mut optimizer, mut rng, mut epoch, mut cursor, mut step, mut history) =
        match resume {
            Some(ckpt) => {
                if ckpt.model != *model {
                    return Err(Error::Config(
                        "checkpoint model configuration differs from the requested one".into(),
                    ));
                }
                let optimizer = restore_optimizer(&ckpt.optimizer);
                (
                    ckpt.params,
                    optimizer,
                    DetRng::restore(ckpt.rng),
                    ckpt.epoch,
                    ckpt.cursor,
                    ckpt.step,
                    ckpt.loss_history,
                )
            }
            None => {
                let mut rng = DetRng::new(config.seed);
                let params = ModelParams::init(model, &mut rng)?;
                (
                    params,
                    build_optimizer(config.optimizer),
                    rng,
                    0,
                    0,
                    0,
                    Vec::new(),
                )
            }
        };

    let n = samples.len();
    let budget_reached =
        |step: u64| -> bool { config.max_steps.is_some_and(|m| step >= m) };

    'epochs: while epoch < config.epochs {
        let order = epoch_order(config.seed, epoch, n);
        while cursor < n {
            if budget_reached(step) {
                break 'epochs;
            }
            let batch_end = (cursor + config.batch_size).min(n);
            let mut tape = Tape::new();
            let bound = bind_params(&mut tape, &params)?;
            let mut logit_rows = Vec::with_capacity(batch_end - cursor);
            let mut labels = Vec::with_capacity(batch_end - cursor);
            for &i in &order[cursor..batch_end] {
                let tokens = tokens_for_input(model, &samples[i].input)?;
                let out = forward_tokens(
                    &mut tape,
                    model,
                    &bound,
                    &tokens,
                    &mut ForwardMode::Train(&mut rng),
                )?;
                logit_rows.push(out.logits);
                labels.push(samples[i].label.index());
            }
            let logits = tape.concat_rows(&logit_rows)?;
            let loss_var = tape.cross_entropy(logits, &labels).map_err(|e| {
                Error::Pipeline(format!("step {}: loss diverged: {e}", step + 1))
            })?;
            let loss = tape.value(loss_var)[0];
            if !loss.is_finite() {
                return Err(Error::Pipeline(format!(
                    "step {}: non-finite loss {loss}",
                    step + 1
                )));
            }
            tape.backward(loss_var)?;
            copy_grads(&tape, &bound, &mut params)?;
            let mut refs: Vec<&mut Tensor> =
                params.named_mut().into_iter().map(|(_, t)| t).collect();
            optimizer.step(&mut refs, config.learning_rate)?;
            step += 1;
            history.push(loss);
            cursor = batch_end;
            if let Some(cb) = hooks.on_step.as_deref_mut() {
                cb(step, loss);
            }
            if config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0 {
                if let Some(cb) = hooks.on_checkpoint.as_deref_mut() {
                    let ckpt = make_checkpoint(
                        model, &params, &optimizer, epoch, cursor, step, &rng, &history,
                    );
                    cb(&ckpt)?;
                }
            }
        }
        epoch += 1;
        cursor = 0;
    }

    Ok(make_checkpoint(
        model, &params, &optimizer, epoch, cursor, step, &rng, &history,
    ))
}

/// Fraction of slice-level decisions (score > 0.5 means COVID) that match
/// the label.
pub fn slice_accuracy(scored: &[(f64, ClassLabel)]) -> f64 {
    if scored.is_empty() {
        return 0.0;
    }
    let correct = scored
        .iter()
        .filter(|(score, label)| {
            let predicted = if slice_is_covid(*score) {
                ClassLabel::Covid
            } else {
                ClassLabel::NonCovid
            };
            predicted == *label
        })
        .count();
    correct as f64 / scored.len() as f64
}

/// Deterministic per-sample scores plus slice-level accuracy.
pub struct SliceEvaluation {
    pub scores: Vec<SliceScore>,
    pub accuracy: f64,
}

pub fn evaluate_slices(
    model: &ModelConfig,
    params: &ModelParams,
    samples: &[TrainSample],
) -> Result<SliceEvaluation> {
    let mut scores = Vec::with_capacity(samples.len());
    let mut scored = Vec::with_capacity(samples.len());
    for s in samples {
        let score = predict(model, params, &s.input)?;
        scored.push((score, s.label));
        scores.push(SliceScore {
            subject_id: s.subject_id.clone(),
            slice_index: s.index,
            score,
        });
    }
    Ok(SliceEvaluation {
        scores,
        accuracy: slice_accuracy(&scored),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            variant: Variant::Vit2d,
            patch_size: 7,
            image_size: 14,
            volume_depth: 1,
            embed_dim: 16,
            depth: 2,
            num_heads: 2,
            mlp_dim: 32,
            num_classes: 2,
            dropout: 0.1,
        }
    }

    /// Trivially separable set: COVID images are bright on the left half,
    /// non-COVID on the right (a spatial pattern survives layer norm, a
    /// plain brightness offset would not).
    fn separable_samples(n_per_class: usize) -> Vec<TrainSample> {
        let mut samples = Vec::new();
        let mut rng = DetRng::new(99);
        for i in 0..n_per_class * 2 {
            let covid = i % 2 == 0;
            let mut data = vec![0.0; 14 * 14];
            for y in 0..14 {
                for x in 0..14 {
                    let bright = (x < 7) == covid;
                    let base = if bright { 0.8 } else { 0.2 };
                    data[y * 14 + x] = (base + rng.range_f64(-0.05, 0.05)).clamp(0.0, 1.0);
                }
            }
            samples.push(TrainSample {
                subject_id: format!("s{i:03}"),
                index: 0,
                input: Tensor::new(vec![14, 14], data).unwrap(),
                label: if covid {
                    ClassLabel::Covid
                } else {
                    ClassLabel::NonCovid
                },
            });
        }
        samples
    }

    #[test]
    fn zero_learning_rate_leaves_params_at_init() {
        let model = tiny_config();
        let samples = separable_samples(4);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 0.0,
            seed: 7,
            ..Default::default()
        };
        let ckpt = train(&samples, &model, &config, None, &mut TrainHooks::default()).unwrap();
        let mut rng = DetRng::new(7);
        let init = ModelParams::init(&model, &mut rng).unwrap();
        for ((name, a), (_, b)) in ckpt.params.named().iter().zip(init.named().iter()) {
            assert_eq!(a.data(), b.data(), "{name} moved under lr=0");
        }
        assert!(ckpt.step > 0);
    }

    #[test]
    fn same_seed_gives_bitwise_identical_histories() {
        let model = tiny_config();
        let samples = separable_samples(4);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 11,
            ..Default::default()
        };
        let a = train(&samples, &model, &config, None, &mut TrainHooks::default()).unwrap();
        let b = train(&samples, &model, &config, None, &mut TrainHooks::default()).unwrap();
        assert_eq!(a.loss_history.len(), b.loss_history.len());
        for (x, y) in a.loss_history.iter().zip(&b.loss_history) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for ((_, ta), (_, tb)) in a.params.named().iter().zip(b.params.named().iter()) {
            for (x, y) in ta.data().iter().zip(tb.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn resume_reproduces_uninterrupted_run_bitwise() {
        let model = tiny_config();
        let samples = separable_samples(6); // 12 samples, batch 4 -> 3 steps/epoch
        let base = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 13,
            ..Default::default()
        };
        let full = train(&samples, &model, &base, None, &mut TrainHooks::default()).unwrap();
        assert_eq!(full.step, 6);

        // Stop mid-epoch (step 4 of 6), round-trip through disk, resume.
        let halted = train(
            &samples,
            &model,
            &TrainConfig {
                max_steps: Some(4),
                ..base.clone()
            },
            None,
            &mut TrainHooks::default(),
        )
        .unwrap();
        assert_eq!(halted.step, 4);
        assert_eq!(halted.cursor, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("halted.ckpt");
        crate::model::checkpoint::save_checkpoint(&path, &halted).unwrap();
        let loaded = crate::model::checkpoint::load_checkpoint(&path).unwrap();
        let resumed = train(&samples, &model, &base, Some(loaded), &mut TrainHooks::default())
            .unwrap();

        assert_eq!(resumed.step, full.step);
        assert_eq!(resumed.loss_history.len(), full.loss_history.len());
        for (x, y) in resumed.loss_history.iter().zip(&full.loss_history) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for ((name, ta), (_, tb)) in resumed.params.named().iter().zip(full.params.named()) {
            for (x, y) in ta.data().iter().zip(tb.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{name} differs after resume");
            }
        }
    }

    #[test]
    fn micro_overfit_collapses_loss_and_scores() {
        let model = ModelConfig {
            dropout: 0.0,
            ..tiny_config()
        };
        let samples = separable_samples(8); // 16 samples
        let config = TrainConfig {
            epochs: 150,
            batch_size: 8,
            learning_rate: 1e-2,
            seed: 21,
            max_steps: Some(300),
            ..Default::default()
        };
        let ckpt = train(&samples, &model, &config, None, &mut TrainHooks::default()).unwrap();
        let initial = ckpt.loss_history[0];
        let last = *ckpt.loss_history.last().unwrap();
        assert!(
            last < 0.1 * initial,
            "loss did not collapse: {initial} -> {last}"
        );
        let eval = evaluate_slices(&model, &ckpt.params, &samples).unwrap();
        assert!(eval.accuracy >= 0.95, "accuracy {}", eval.accuracy);
    }

    #[test]
    fn zero_network_accuracy_is_noncovid_fraction() {
        let model = tiny_config();
        let params = ModelParams::zeros(&model).unwrap();
        let samples = separable_samples(5); // 5 covid + 5 noncovid
        let eval = evaluate_slices(&model, &params, &samples).unwrap();
        for s in &eval.scores {
            assert_eq!(s.score, 0.5);
        }
        // Every tie predicts NonCOVID, so exactly the NonCOVID half is right.
        assert!((eval.accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perfect_scores_give_unit_accuracy() {
        let scored = vec![
            (0.99, ClassLabel::Covid),
            (0.93, ClassLabel::Covid),
            (0.03, ClassLabel::NonCovid),
            (0.2, ClassLabel::NonCovid),
        ];
        assert_eq!(slice_accuracy(&scored), 1.0);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let model = tiny_config();
        let config = TrainConfig::default();
        assert!(train(&[], &model, &config, None, &mut TrainHooks::default()).is_err());
    }

    #[test]
    fn interval_checkpoints_fire() {
        let model = tiny_config();
        let samples = separable_samples(4);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 5,
            checkpoint_interval: 2,
            ..Default::default()
        };
        let mut seen = Vec::new();
        let mut on_ckpt = |c: &Checkpoint| -> Result<()> {
            seen.push(c.step);
            Ok(())
        };
        let mut hooks = TrainHooks {
            on_step: None,
            on_checkpoint: Some(&mut on_ckpt),
        };
        let final_ckpt = train(&samples, &model, &config, None, &mut hooks).unwrap();
        assert_eq!(final_ckpt.step, 4);
        assert_eq!(seen, vec![2, 4]);
    }

    #[test]
    fn sgd_optimizer_also_trains() {
        let model = ModelConfig {
            dropout: 0.0,
            ..tiny_config()
        };
        let samples = separable_samples(4);
        let config = TrainConfig {
            epochs: 10,
            batch_size: 8,
            learning_rate: 1e-2,
            seed: 31,
            optimizer: OptKind::Sgd { momentum: 0.9 },
            ..Default::default()
        };
        let ckpt = train(&samples, &model, &config, None, &mut TrainHooks::default()).unwrap();
        let initial = ckpt.loss_history[0];
        let last = *ckpt.loss_history.last().unwrap();
        assert!(last < initial, "SGD failed to reduce loss");
    }
}

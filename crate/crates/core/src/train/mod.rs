//! Two-stage end-to-end training: Adam over every parameter, the alpha
//! positivity clamp after each step, the stage-2 trigger at alpha <= 0.05,
//! and early stopping on the stage-appropriate total loss.

pub mod adam;
pub mod losses;
pub mod sample;

pub use adam::Adam;
pub use sample::{sample_points, SampleBatch};

use crate::config::{Config, SamplingMode};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{CsgModel, Mode};
use crate::tape::Tape;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: u8,
    pub loss_total: f64,
    pub loss_mse: f64,
    pub loss_positivity: f64,
    pub loss_translation: f64,
    pub alpha: f64,
    pub taus: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub stage: u8,
    pub stopped_early: bool,
    pub steps: u64,
    /// Smallest alpha / tau observed after any optimizer step (post-clamp).
    pub min_alpha_seen: f64,
    pub min_tau_seen: f64,
}

/// Train in place. All stochasticity (shuffling, point sampling, Gumbel
/// noise) is drawn from `rng`, so a fixed seed reproduces the loss
/// trajectory bitwise. Per-epoch records are appended to `log` as
/// line-delimited JSON when provided.
pub fn train(
    model: &mut CsgModel,
    dataset: &Dataset,
    config: &Config,
    rng: &mut ChaCha8Rng,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    config.validate()?;
    let tcfg = &config.train;
    let mut optimizer = Adam::new(tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps, &model.store);
    let mut stage: u8 = 1;
    let mut best_loss = f64::INFINITY;
    let mut epochs_since_improvement = 0usize;
    let mut records = Vec::new();
    let mut stopped_early = false;
    let mut min_alpha_seen = f64::INFINITY;
    let mut min_tau_seen = f64::INFINITY;

    // Exhaustive sampling is deterministic per shape; precompute it.
    let fixed_batches: Option<Vec<SampleBatch>> = match config.sampling.mode {
        SamplingMode::Exhaustive => Some(
            dataset
                .samples
                .iter()
                .map(|s| sample_points(&s.raster, &config.sampling, rng))
                .collect::<Result<_>>()?,
        ),
        SamplingMode::Biased => None,
    };

    for epoch in 0..tcfg.max_epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(rng);

        let mut sums = [0.0f64; 4]; // total, mse, positivity, translation
        let mut steps_in_epoch = 0usize;

        for chunk in order.chunks(tcfg.batch_size) {
            let mut tape = Tape::new();
            let binding = model.bind(&mut tape, true)?;
            let alpha_id = binding.ids[model.alpha_idx];
            let tau_ids: Vec<_> = model
                .tau_indices()
                .iter()
                .map(|&i| binding.ids[i])
                .collect();

            let mut data_terms = Vec::with_capacity(chunk.len());
            let mut batch_components = [0.0f64; 3];
            for &si in chunk {
                let shape = &dataset.samples[si];
                let batch;
                let sampled = match &fixed_batches {
                    Some(all) => &all[si],
                    None => {
                        batch = sample_points(&shape.raster, &config.sampling, rng)?;
                        &batch
                    }
                };
                let fwd = model.forward(
                    &mut tape,
                    &binding,
                    &shape.raster.occupancy_f64(),
                    &sampled.points,
                    Mode::Train,
                    rng,
                )?;
                let target = tape.constant(sampled.targets.clone(), &[sampled.len()])?;
                let mse = losses::loss_mse(&mut tape, fwd.final_occupancy, target)?;
                let lp = losses::loss_param_positivity(&mut tape, &fwd.predicted)?;
                let lt = losses::loss_translation(&mut tape, &fwd.predicted)?;
                batch_components[0] += tape.scalar_value(mse);
                batch_components[1] += tape.scalar_value(lp);
                batch_components[2] += tape.scalar_value(lt);
                data_terms.push(losses::data_loss(&mut tape, mse, lp, lt, tcfg.lambda_t)?);
            }
            let mut acc = data_terms[0];
            for &t in &data_terms[1..] {
                acc = tape.add(acc, t)?;
            }
            let data_mean = tape.scale(acc, 1.0 / chunk.len() as f64);
            let sched = losses::schedule_terms(
                &mut tape,
                stage,
                alpha_id,
                &tau_ids,
                tcfg.lambda_alpha,
                tcfg.lambda_tau,
            )?;
            let total_id = tape.add(data_mean, sched)?;
            let total = tape.scalar_value(total_id);
            if !total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: optimizer.steps_taken() as usize,
                    what: "total loss".into(),
                });
            }

            tape.backward(total_id)?;
            let grads = model.store.collect_grads(&tape, &binding)?;
            optimizer.step(&mut model.store, &grads);
            model.clamp_converter_params(tcfg.epsilon);
            min_alpha_seen = min_alpha_seen.min(model.alpha());
            for t in model.taus() {
                min_tau_seen = min_tau_seen.min(t);
            }

            sums[0] += total;
            let b = chunk.len() as f64;
            sums[1] += batch_components[0] / b;
            sums[2] += batch_components[1] / b;
            sums[3] += batch_components[2] / b;
            steps_in_epoch += 1;
        }

        let n = steps_in_epoch as f64;
        let record = EpochRecord {
            epoch,
            stage,
            loss_total: sums[0] / n,
            loss_mse: sums[1] / n,
            loss_positivity: sums[2] / n,
            loss_translation: sums[3] / n,
            alpha: model.alpha(),
            taus: model.taus(),
        };
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            writeln!(w)?;
        }
        let epoch_loss = record.loss_total;
        records.push(record);

        // Permanent stage flip at the first epoch end with alpha at or
        // under the trigger.
        if stage == 1 && model.alpha() <= tcfg.stage2_trigger {
            stage = 2;
            best_loss = f64::INFINITY;
            epochs_since_improvement = 0;
        } else {
            if epoch_loss < best_loss - tcfg.min_improvement {
                best_loss = epoch_loss;
                epochs_since_improvement = 0;
            } else {
                epochs_since_improvement += 1;
            }
            if epochs_since_improvement >= tcfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        records,
        stage,
        stopped_early,
        steps: optimizer.steps_taken(),
        min_alpha_seen,
        min_tau_seen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelConfig, SamplingConfig, TrainConfig};
    use crate::data::{generate_synthetic, Sample, SyntheticSpec};
    use rand::SeedableRng;

    fn tiny_setup(max_epochs: usize, lr: f64) -> (Config, Dataset) {
        let config = Config {
            model: ModelConfig {
                dim: 2,
                resolution: 16,
                latent: 16,
                encoder_channels: vec![8, 12, 16],
                decoder_hidden: vec![16, 16],
                prims_per_kind: 2,
                layer_nodes: vec![1],
                leaky_slope: 0.01,
                k_init_std: 0.1,
            },
            train: TrainConfig {
                lr,
                batch_size: 4,
                max_epochs,
                patience: 10_000,
                seed: 3,
                ..TrainConfig::default()
            },
            sampling: SamplingConfig::default(),
        };
        let corpus = generate_synthetic(&SyntheticSpec {
            n: 8,
            seed: 5,
            dim: 2,
            resolution: 16,
            min_prims: 2,
            max_prims: 2,
        })
        .unwrap();
        let samples = corpus
            .into_iter()
            .map(|(id, raster, tree)| Sample {
                id,
                raster,
                tree: Some(tree),
            })
            .collect();
        (config, Dataset { samples })
    }

    #[test]
    fn loss_trajectory_is_reproducible_bitwise() {
        let (config, dataset) = tiny_setup(3, 1e-4);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
            let mut model =
                CsgModel::new(&config.model, config.train.alpha_init, config.train.tau_init, &mut rng)
                    .unwrap();
            let mut log = Vec::new();
            let outcome = train(&mut model, &dataset, &config, &mut rng, Some(&mut log)).unwrap();
            (outcome.records.len(), log, model.store.iter().flat_map(|p| p.data.clone()).collect::<Vec<f64>>())
        };
        let (n1, log1, params1) = run();
        let (n2, log2, params2) = run();
        assert_eq!(n1, 3);
        assert_eq!(log1, log2);
        assert_eq!(params1, params2);
    }

    #[test]
    fn converter_params_stay_above_epsilon() {
        let (mut config, dataset) = tiny_setup(4, 5e-2);
        config.train.seed = 9;
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let mut model =
            CsgModel::new(&config.model, config.train.alpha_init, config.train.tau_init, &mut rng)
                .unwrap();
        let outcome = train(&mut model, &dataset, &config, &mut rng, None).unwrap();
        assert!(outcome.min_alpha_seen >= config.train.epsilon);
        assert!(outcome.min_tau_seen >= config.train.epsilon);
    }

    #[test]
    fn divergence_is_reported_not_propagated() {
        let (mut config, dataset) = tiny_setup(50, 1e300);
        config.train.max_epochs = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model =
            CsgModel::new(&config.model, config.train.alpha_init, config.train.tau_init, &mut rng)
                .unwrap();
        match train(&mut model, &dataset, &config, &mut rng, None) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence error, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (config, _) = tiny_setup(1, 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model =
            CsgModel::new(&config.model, config.train.alpha_init, config.train.tau_init, &mut rng)
                .unwrap();
        assert!(train(&mut model, &Dataset::default(), &config, &mut rng, None).is_err());
    }
}

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DataSource, ExperimentConfig};
use super::metrics::MetricsRow;
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::model::{self, Batch, ModelSpec, ParamVector};
use crate::noise::{self, LabeledDataset};
use crate::optim::{self, OptimizerState};

/// Per-epoch rows plus the parameters after the last epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<MetricsRow>,
    pub final_params: ParamVector,
}

/// Learning rate in force during `epoch`: the base rate times `decay` for
/// every milestone already reached.
pub fn lr_schedule(epoch: usize, base: f64, milestones: &[usize], decay: f64) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= epoch).count();
    base * decay.powi(passed as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitAccuracy {
    /// Accuracy on the clean subset, against observed labels.
    pub clean: Option<f64>,
    /// Accuracy on the noisy subset, against the corrupted labels.
    pub noisy: Option<f64>,
    pub overall: Option<f64>,
}

pub fn evaluate_split(params: &ParamVector, spec: &ModelSpec, ds: &LabeledDataset) -> Result<SplitAccuracy> {
    let predictions = model::predict(params, spec, ds.features())?;
    Ok(split_accuracy(&predictions, ds))
}

/// Clean / noisy / overall accuracy of `predictions` against observed labels.
pub fn split_accuracy(predictions: &[usize], ds: &LabeledDataset) -> SplitAccuracy {
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for ((&p, &y), &noisy) in predictions.iter().zip(ds.observed_labels()).zip(ds.is_noisy()) {
        let k = usize::from(noisy);
        totals[k] += 1;
        hits[k] += usize::from(p == y);
    }
    let rate = |h: usize, t: usize| (t > 0).then(|| h as f64 / t as f64);
    SplitAccuracy {
        clean: rate(hits[0], totals[0]),
        noisy: rate(hits[1], totals[1]),
        overall: rate(hits[0] + hits[1], totals[0] + totals[1]),
    }
}

/// Loads or synthesises the training and optional test sets.
pub fn prepare_data(config: &ExperimentConfig) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
    let (train, test) = match &config.data {
        DataSource::Synthetic {
            n,
            n_test,
            classes,
            dim,
            separation,
            seed,
            noise: spec,
        } => {
            let all = noise::make_gaussian_blobs(n + n_test, *classes, *dim, *separation, *seed)?;
            let (train, test) = all.split_at(*n);
            let train = noise::apply_noise(&train, spec)?;
            (train, (*n_test > 0).then_some(test))
        }
        DataSource::Files { train, test } => (
            noise::load_dataset(train)?,
            test.as_ref().map(noise::load_dataset).transpose()?,
        ),
    };
    for ds in std::iter::once(&train).chain(test.as_ref()) {
        if ds.dim() != config.model.input_dim() || ds.num_classes() != config.model.num_classes() {
            return Err(Error::Config(format!(
                "dataset ({} features, {} classes) does not fit layers {:?}",
                ds.dim(),
                ds.num_classes(),
                config.model.layer_sizes()
            )));
        }
    }
    if train.is_empty() {
        return Err(Error::InvalidDataset("training set is empty".into()));
    }
    Ok((train, test))
}

/// What to record after each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tracking {
    pub accuracy: bool,
    pub diagnostics: bool,
}

pub fn run_training(config: &ExperimentConfig) -> Result<RunRecord> {
    let (train, test) = prepare_data(config)?;
    train_on(
        config,
        &train,
        test.as_ref(),
        Tracking {
            accuracy: true,
            diagnostics: config.diagnostics_enabled,
        },
    )
}

/// Seeded probe subset used for the per-epoch diagnostics.
pub fn probe_indices(n: usize, probe_size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut picked = index::sample(&mut rng, n, probe_size.min(n)).into_vec();
    picked.sort_unstable();
    picked
}

/// The training loop: seeded shuffle, mini-batch steps, then one metrics
/// row per epoch.
pub fn train_on(
    config: &ExperimentConfig,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    tracking: Tracking,
) -> Result<RunRecord> {
    config.validate()?;
    let spec = &config.model;
    let optim = &config.optim;
    let mut params = model::init_params(spec, config.seed);
    let mut state = OptimizerState::new(params.len());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let probe: Option<Batch> = tracking
        .diagnostics
        .then(|| train.batch(&probe_indices(train.len(), config.probe_size, config.seed)))
        .transpose()?;

    let mut rows: Vec<MetricsRow> = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        let eta = lr_schedule(epoch, optim.eta, &config.lr_milestones, config.lr_decay);
        let alpha = optim.alpha_at(epoch);
        order.shuffle(&mut shuffle_rng);

        let diverged = |rows: &[MetricsRow], params: &ParamVector| Error::Diverged {
            epoch,
            partial: Box::new(RunRecord {
                rows: rows.to_vec(),
                final_params: params.clone(),
            }),
        };
        for chunk in order.chunks(config.batch_size) {
            let batch = train.batch(chunk)?;
            let step = match optim::step_gradient(&params, &batch, spec, optim, alpha) {
                Ok(step) if step.loss.is_finite() => step,
                Ok(_) => return Err(diverged(&rows, &params)),
                Err(e) if is_numeric_failure(&e) => return Err(diverged(&rows, &params)),
                Err(e) => return Err(e),
            };
            match optim::apply_update(&mut params, &step.g_final, &mut state, optim, eta) {
                Ok(()) => {}
                Err(e) if is_numeric_failure(&e) => return Err(diverged(&rows, &params)),
                Err(e) => return Err(e),
            }
        }
        state.epoch = epoch + 1;

        let mut row = MetricsRow {
            epoch,
            eta,
            alpha,
            ..MetricsRow::default()
        };
        if tracking.accuracy {
            let acc = evaluate_split(&params, spec, train)?;
            row.train_acc_overall = acc.overall;
            row.clean_train_acc = acc.clean;
            row.noisy_train_acc = acc.noisy;
            if let Some(test) = test {
                row.test_acc = evaluate_split(&params, spec, test)?.overall;
            }
            row.recompute_gaps();
        }
        if let Some(probe) = &probe {
            let diag = match diagnostics::probe(&params, probe, spec, optim.effective_rho(), train.truth_known()) {
                Ok(d) => d,
                Err(e) if is_numeric_failure(&e) => return Err(diverged(&rows, &params)),
                Err(e) => return Err(e),
            };
            row.frac_a = Some(diag.fractions.a);
            row.frac_b = Some(diag.fractions.b);
            row.frac_c = Some(diag.fractions.c);
            if let Some(d) = diag.dominance {
                row.p_clean = d.p_clean;
                row.p_noise = d.p_noise;
                row.pr = d.pr;
            }
        }
        rows.push(row);
    }
    Ok(RunRecord {
        rows,
        final_params: params,
    })
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::NonFiniteActivation { .. } | Error::NonFiniteGradient { .. } | Error::NonFiniteUpdate { .. }
    )
}

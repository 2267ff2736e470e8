use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Model, Sample};
use crate::error::{Error, Result};
use crate::node_dynamics::TIME_EPS;
use crate::numkit::{accumulate, Adam, Bound, GradMap, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Instances per gradient task; tasks are summed in a fixed order.
    pub chunk_size: usize,
    /// Windows drawn per instance and epoch; empty means the whole series.
    pub windows: Vec<f64>,
    /// Global gradient-norm limit, 0 to disable.
    pub grad_clip: f64,
    /// The learning rate follows a cosine from `learning_rate` down to this fraction of it.
    pub final_lr_fraction: f64,
    /// Decoupled weight decay per unit learning rate.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 0.01,
            batch_size: 32,
            chunk_size: 32,
            windows: vec![],
            grad_clip: 1.0,
            final_lr_fraction: 0.05,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.chunk_size == 0 {
            return Err(Error::Config(
                "batch and chunk sizes must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.grad_clip >= 0.0)
        {
            return Err(Error::Config(
                "learning rate must be positive and grad_clip nonnegative".into(),
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config("final_lr_fraction must lie in [0, 1]".into()));
        }
        if self.windows.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(
                "training windows must be nonnegative days".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ParamSet,
    /// Mean loss per epoch, measured before each minibatch update.
    pub losses: Vec<f64>,
}

/// Worker pool sized by `ONCODE_THREADS` (default 1).
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("ONCODE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| {
                Error::Config(format!(
                    "ONCODE_THREADS must be a positive integer, got `{v}`"
                ))
            })?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

impl TrainConfig {
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let progress = if self.epochs > 1 {
            epoch as f64 / (self.epochs - 1) as f64
        } else {
            0.0
        };
        let f = self.final_lr_fraction;
        self.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}

fn decay(params: &mut ParamSet, rate: f64) {
    if rate > 0.0 {
        let names: Vec<String> = params.names().cloned().collect();
        for n in names {
            let t = params.get_mut(&n).expect("listed name");
            *t = t.map(|x| x * (1.0 - rate));
        }
    }
}

fn global_norm(grads: &GradMap) -> f64 {
    grads
        .values()
        .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn clip(grads: &mut GradMap, limit: f64) {
    if limit <= 0.0 {
        return;
    }
    let norm = global_norm(grads);
    if norm > limit {
        let k = limit / norm;
        for g in grads.values_mut() {
            *g = g.map(|x| x * k);
        }
    }
}

/// Sum of squared errors on the log relative volume and the point count.
fn chunk_sse(
    model: &Model,
    tape: &Tape,
    p: &Bound,
    chunk: &[(&Sample, Option<f64>)],
) -> Result<(Var, usize)> {
    let windows = chunk
        .iter()
        .map(|(s, c)| s.window(*c))
        .collect::<Result<Vec<_>>>()?;
    let instances: Vec<_> = chunk.iter().map(|(s, _)| &s.instance).collect();
    let window_refs: Vec<_> = windows.iter().collect();
    let beta = model.beta_tape(tape, p, &instances, &window_refs)?;
    let node = model.node();
    let y0 = node.init_state_tape(tape, p, beta);
    let cond = node.conditioning_tape(tape, p, beta);
    let mut grid: Vec<f64> = chunk
        .iter()
        .flat_map(|(s, _)| s.series.times().iter().copied())
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS);
    let states = node.integrate_tape(tape, p, y0, cond, &grid)?;
    let decoded: Vec<Var> = states
        .into_iter()
        .map(|s| node.decode_tape(tape, p, s))
        .collect();
    let pred = tape.concat_cols(&decoded);
    let (b, t) = (chunk.len(), grid.len());
    let mut target = Tensor::zeros(b, t);
    let mut mask = Tensor::zeros(b, t);
    let mut count = 0;
    for (i, (s, _)) in chunk.iter().enumerate() {
        let mut col = 0;
        for (&time, y) in s.series.times().iter().zip(s.targets()) {
            while grid[col] < time - TIME_EPS {
                col += 1;
            }
            target.set(i, col, y);
            mask.set(i, col, 1.0);
            count += 1;
        }
    }
    let diff = tape.sub(pred, tape.leaf(target));
    let masked = tape.mul(diff, tape.leaf(mask));
    Ok((tape.sum(tape.mul(masked, masked)), count))
}

type ChunkResult = (f64, usize, GradMap);

fn chunk_gradient(
    model: &Model,
    params: &ParamSet,
    chunk: &[(&Sample, Option<f64>)],
    scale: f64,
) -> Result<ChunkResult> {
    let tape = Tape::new();
    let p = params.bind(&tape);
    let (sse, n) = chunk_sse(model, &tape, &p, chunk)?;
    let value = tape.value(sse).item();
    if !value.is_finite() {
        let ids: Vec<String> = chunk
            .iter()
            .map(|(s, _)| s.instance.key.to_string())
            .collect();
        return Err(Error::Numerical(format!(
            "loss is {value} on {}",
            ids.join(", ")
        )));
    }
    let scaled = tape.scale(sse, scale);
    let grads = tape.backward(scaled)?;
    Ok((value, n, p.gradients(&grads)))
}

/// Mean squared error over all measurements with the given windows.
pub fn dynamics_loss(
    model: &Model,
    params: &ParamSet,
    samples: &[(&Sample, Option<f64>)],
) -> Result<f64> {
    model.check_dynamics(params)?;
    let mut sse = 0.0;
    let mut n = 0;
    for chunk in samples.chunks(32) {
        let tape = Tape::new();
        let (v, c) = chunk_sse(model, &tape, &params.bind(&tape), chunk)?;
        sse += tape.value(v).item();
        n += c;
    }
    if n == 0 {
        return Err(Error::Invalid("no measurements to score".into()));
    }
    Ok(sse / n as f64)
}

/// The mean squared error of [`dynamics_loss`] as a tape node.
pub fn dynamics_loss_tape(
    model: &Model,
    tape: &Tape,
    p: &Bound,
    samples: &[(&Sample, Option<f64>)],
) -> Result<Var> {
    let (sse, n) = chunk_sse(model, tape, p, samples)?;
    if n == 0 {
        return Err(Error::Invalid("no measurements to score".into()));
    }
    Ok(tape.scale(sse, 1.0 / n as f64))
}

/// Minibatch Adam on the masked MSE of `log(V/V0)` over every measurement.
pub fn train_dynamics(
    model: &Model,
    params: &ParamSet,
    samples: &[Sample],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.check_dynamics(params)?;
    if samples.is_empty() {
        return Err(Error::Invalid(
            "training needs at least one experiment".into(),
        ));
    }
    let pool = worker_pool()?;
    let mut params = params.clone();
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        adam.lr = config.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let cutoffs: Vec<Option<f64>> = order
            .iter()
            .map(|_| {
                (!config.windows.is_empty())
                    .then(|| config.windows[rng.gen_range(0..config.windows.len())])
            })
            .collect();
        let mut epoch_sse = 0.0;
        let mut epoch_n = 0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let start = batch_idx * config.batch_size;
            let items: Vec<(&Sample, Option<f64>)> = batch
                .iter()
                .enumerate()
                .map(|(k, &i)| (&samples[i], cutoffs[start + k]))
                .collect();
            let total: usize = items.iter().map(|(s, _)| s.series.len()).sum();
            let scale = 1.0 / total as f64;
            let results: Vec<Result<ChunkResult>> = pool.install(|| {
                items
                    .par_chunks(config.chunk_size)
                    .map(|c| chunk_gradient(model, &params, c, scale))
                    .collect()
            });
            let mut grads = GradMap::new();
            for r in results {
                let (v, n, g) = r.map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}: {m}")),
                    other => other,
                })?;
                epoch_sse += v;
                epoch_n += n;
                accumulate(&mut grads, &g);
            }
            clip(&mut grads, config.grad_clip);
            decay(&mut params, adam.lr * config.weight_decay);
            adam.step(&mut params, &grads)?;
        }
        losses.push(epoch_sse / epoch_n as f64);
    }
    Ok(TrainOutcome { params, losses })
}

/// Mean binary cross-entropy of the classifier against observed responder labels.
pub fn classifier_cross_entropy(
    model: &Model,
    params: &ParamSet,
    samples: &[Sample],
) -> Result<f64> {
    let labels = samples
        .iter()
        .map(Sample::responder)
        .collect::<Result<Vec<_>>>()?;
    let probs = model.classify(
        params,
        &samples.iter().map(|s| &s.instance).collect::<Vec<_>>(),
    )?;
    let t: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    crate::numkit::loss(
        crate::numkit::LossKind::BinaryCrossEntropy,
        &Tensor::column(probs),
        &Tensor::column(t),
    )
}

/// Minibatch Adam on BCE of responder labels; the encoder trains with the head.
pub fn train_classifier(
    model: &Model,
    params: &ParamSet,
    samples: &[Sample],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.check_classifier(params)?;
    if samples.is_empty() {
        return Err(Error::Invalid(
            "training needs at least one experiment".into(),
        ));
    }
    let labels = samples
        .iter()
        .map(Sample::responder)
        .collect::<Result<Vec<_>>>()?;
    let pool = worker_pool()?;
    let mut params = params.clone();
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        adam.lr = config.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let results: Vec<Result<(f64, GradMap)>> = pool.install(|| {
                batch
                    .par_chunks(config.chunk_size)
                    .map(|c| {
                        let tape = Tape::new();
                        let p = params.bind(&tape);
                        let inst: Vec<_> = c.iter().map(|&i| &samples[i].instance).collect();
                        let probs = model.classifier_tape(&tape, &p, &inst)?;
                        let t: Vec<f64> = c
                            .iter()
                            .map(|&i| if labels[i] { 1.0 } else { 0.0 })
                            .collect();
                        let mean = crate::numkit::bce(&tape, probs, Tensor::column(t));
                        let sum = tape.scale(mean, c.len() as f64);
                        let value = tape.value(sum).item();
                        if !value.is_finite() {
                            return Err(Error::Numerical(format!(
                                "classifier loss is {value} at epoch {epoch}"
                            )));
                        }
                        let grads = tape.backward(tape.scale(sum, scale))?;
                        Ok((value, p.gradients(&grads)))
                    })
                    .collect()
            });
            let mut grads = GradMap::new();
            for r in results {
                let (v, g) = r?;
                epoch_loss += v;
                accumulate(&mut grads, &g);
            }
            clip(&mut grads, config.grad_clip);
            decay(&mut params, adam.lr * config.weight_decay);
            adam.step(&mut params, &grads)?;
        }
        losses.push(epoch_loss / samples.len() as f64);
    }
    Ok(TrainOutcome { params, losses })
}

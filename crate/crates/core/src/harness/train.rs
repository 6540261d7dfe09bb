use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{OutputMapKind, RunConfig};
use super::container::{read_file, take, write_file, NamedArray, CHECKPOINT_MAGIC};
use super::dataset::{oracle_coefficients, Dataset};
use crate::error::{Error, Result};
use crate::neural::{AdamW, NetSpec, Network, OptimizerConfig, OutputMap};
use crate::physics_loss::Discretization;
use crate::random_field::sample_rng;
use crate::reference::Oracle;

/// Stream of the batch-shuffling generator; sample streams count up from 0.
const SHUFFLE_STREAM: u64 = u64::MAX;

/// Everything the unsupervised loss needs per training sample.
pub struct LossContext {
    pub disc: Discretization,
    row_weights: Vec<f64>,
    offsets: Vec<Vec<f64>>,
    /// Sample-major sensor values.
    pub inputs: Vec<f64>,
    pub n_inputs: usize,
}

impl LossContext {
    pub fn new(config: &RunConfig, data: &Dataset) -> Result<Self> {
        let spec = config.problem()?;
        let disc = Discretization::new(&spec, config.train_resolution, config.points_per_edge, config.quad_order)?;
        let row_weights = disc.system.row_weights(&config.loss_weights, config.reduction);
        let grid = data.header.field_grid;
        let per: Vec<(Vec<f64>, Vec<f64>)> = (0..data.len())
            .into_par_iter()
            .map(|i| Ok((disc.offsets(&data.source(i)?)?, grid.sensor_values(&disc.mesh, data.field(i))?)))
            .collect::<Result<_>>()?;
        let n_inputs = disc.mesh.n_cells();
        let (offsets, inputs): (Vec<_>, Vec<_>) = per.into_iter().unzip();
        Ok(LossContext { disc, row_weights, offsets, inputs: inputs.concat(), n_inputs })
    }

    /// `V Σ⁻¹` from the SVD of the weighted residual Jacobian, row-major.
    /// Small singular values are floored at `1e-10` of the largest.
    pub fn preconditioner(&self) -> Result<Vec<f64>> {
        let (m, k) = (self.disc.system.n_rows(), self.n_coeffs());
        let j = self.disc.system.dense_jacobian();
        let a = nalgebra::DMatrix::from_fn(m, k, |r, c| j[r * k + c] * self.row_weights[r].sqrt());
        let svd = a.svd(false, true);
        let vt = svd.v_t.ok_or(Error::SingularSystem)?;
        let top = svd.singular_values.max();
        if !(top > 0.0) {
            return Err(Error::SingularSystem);
        }
        let inv: Vec<f64> = svd.singular_values.iter().map(|s| 1.0 / s.max(1e-10 * top)).collect();
        let rank = inv.len();
        Ok((0..k).flat_map(|r| (0..k).map(move |c| (r, c))).map(|(r, c)| if c < rank { vt[(c, r)] * inv[c] } else { 0.0 }).collect())
    }

    pub fn n_samples(&self) -> usize {
        self.offsets.len()
    }

    pub fn n_coeffs(&self) -> usize {
        self.disc.n_coeffs()
    }

    /// Weighted loss of one sample and its coefficient gradient.
    pub fn sample_loss(&self, i: usize, coeffs: &[f64]) -> (f64, Vec<f64>) {
        let sys = &self.disc.system;
        let r: Vec<f64> = sys.apply(coeffs).iter().zip(&self.offsets[i]).map(|(a, b)| a + b).collect();
        let loss = r.iter().zip(&self.row_weights).map(|(r, w)| w * r * r).sum();
        let y: Vec<f64> = r.iter().zip(&self.row_weights).map(|(r, w)| 2.0 * w * r).collect();
        (loss, sys.apply_transpose(&y))
    }

    /// Batch-mean loss and its gradient with respect to sample-major
    /// coefficients.
    pub fn batch_loss(&self, idx: &[usize], coeffs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.n_coeffs();
        let scale = 1.0 / idx.len() as f64;
        let per: Vec<(f64, Vec<f64>)> = idx.par_iter().enumerate().map(|(b, &i)| self.sample_loss(i, &coeffs[b * k..(b + 1) * k])).collect();
        let losses = per.iter().map(|p| p.0).collect();
        let grad = per.into_iter().flat_map(|(_, g)| g.into_iter().map(move |v| v * scale)).collect();
        (losses, grad)
    }

    pub fn batch_inputs(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().flat_map(|&i| self.inputs[i * self.n_inputs..(i + 1) * self.n_inputs].iter().copied()).collect()
    }

    /// Mean loss over `idx` through network and output map, and its
    /// parameter gradient.
    pub fn network_loss(&self, net: &mut Network, map: &OutputMap, idx: &[usize], train: bool) -> Result<(f64, Vec<f64>)> {
        let x = self.batch_inputs(idx);
        let (y, cache) = if train { net.forward_train(&x, idx.len())? } else { net.forward(&x, idx.len())? };
        let (losses, gc) = self.batch_loss(idx, &map.apply(&y));
        let grads = net.backward(&cache, &map.pull_back(&gc))?;
        Ok((losses.iter().sum::<f64>() / idx.len() as f64, grads))
    }
}

pub fn network_spec(ctx: &LossContext) -> NetSpec {
    let mesh = &ctx.disc.mesh;
    if mesh.dim == 1 {
        NetSpec::mlp(ctx.n_inputs, ctx.n_coeffs())
    } else {
        NetSpec::cnn(mesh.nx(), ctx.disc.basis.per_cell())
    }
}

/// Position of a ChaCha generator, enough to resume it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| Error::Format("bad generator position".into()))?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Network, output map, optimizer and shuffling generator of a run.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub config: RunConfig,
    pub net: Network,
    pub map: OutputMap,
    pub optimizer: AdamW,
    pub rng: ChaCha8Rng,
    /// Samples of the current epoch not yet visited.
    pub pending: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: RunConfig,
    net: NetSpec,
    optimizer: OptimizerConfig,
    step: u64,
    rng: RngState,
}

impl TrainingState {
    /// Fresh network; the output map comes from the oracle coefficients of
    /// the training set.
    pub fn new(config: &RunConfig, ctx: &LossContext, data: &Dataset) -> Result<Self> {
        let k = ctx.n_coeffs();
        let oracle = match &data.oracle {
            Some(c) if c.len() == k * data.len() => c.clone(),
            _ => oracle_coefficients(&ctx.disc, &Oracle::new(&ctx.disc, &config.loss_weights, config.reduction)?, data)?,
        };
        let rows: Vec<Vec<f64>> = oracle.chunks(k).map(<[f64]>::to_vec).collect();
        let map = match config.output_map {
            OutputMapKind::Range => OutputMap::fit(&rows, config.output_margin)?,
            OutputMapKind::Jacobian => OutputMap::fit_in_basis(&rows, &[ctx.preconditioner()?], config.output_margin)?,
        };
        let net = Network::new(network_spec(ctx), config.seed)?;
        let optimizer = AdamW::new(net.params().len(), config.optimizer);
        Ok(TrainingState { config: config.clone(), net, map, optimizer, rng: sample_rng(config.seed, SHUFFLE_STREAM), pending: Vec::new() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            net: self.net.spec.clone(),
            optimizer: self.optimizer.config,
            step: self.optimizer.step,
            rng: RngState::capture(&self.rng),
        };
        let arr = |name: &str, v: &[f64]| NamedArray::new(name, vec![v.len()], v.to_vec());
        let arrays = vec![
            arr("params", self.net.params())?,
            arr("buffers", &self.net.buffers)?,
            arr("adam_m", &self.optimizer.m)?,
            arr("adam_v", &self.optimizer.v)?,
            arr("map_shift", &self.map.shift)?,
            arr("map_scale", &self.map.scale)?,
            NamedArray::new("map_mix", self.map.mix_shape(), self.map.mix.clone())?,
            arr("pending", &self.pending.iter().map(|&i| i as f64).collect::<Vec<_>>())?,
        ];
        write_file(path, CHECKPOINT_MAGIC, &header, &arrays)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, mut arrays): (CheckpointHeader, _) = read_file(path, CHECKPOINT_MAGIC)?;
        let pending: Vec<usize> = take(&mut arrays, "pending").map(|a| a.data.iter().map(|&v| v as usize).collect()).unwrap_or_default();
        let mix = take(&mut arrays, "map_mix").ok_or_else(|| Error::Format("checkpoint lacks `map_mix`".into()))?;
        let mut get = |name: &str| take(&mut arrays, name).map(|a| a.data).ok_or_else(|| Error::Format(format!("checkpoint lacks `{name}`")));
        let mut net = Network::new(h.net, 0)?;
        net.set_params(&get("params")?)?;
        let buffers = get("buffers")?;
        if buffers.len() != net.buffers.len() {
            return Err(Error::ShapeMismatch { expected: net.buffers.len(), got: buffers.len() });
        }
        net.buffers = buffers;
        let mut optimizer = AdamW::new(net.params().len(), h.optimizer);
        optimizer.step = h.step;
        optimizer.m = get("adam_m")?;
        optimizer.v = get("adam_v")?;
        let map = OutputMap { shift: get("map_shift")?, scale: get("map_scale")?, block: mix.spec.shape.get(1).copied().unwrap_or(0), mix: mix.data };
        if optimizer.m.len() != optimizer.v.len() || optimizer.m.len() != net.params().len() || map.shift.len() != net.n_outputs() || (map.block > 0 && !map.shift.len().is_multiple_of(map.block)) {
            return Err(Error::Format("checkpoint arrays disagree with the network".into()));
        }
        Ok(TrainingState { config: h.config, net, map, optimizer, rng: h.rng.restore()?, pending })
    }

    /// Raw coefficient predictions (evaluation mode) for sensor inputs.
    pub fn predict(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        Ok(self.map.apply(&self.net.predict(inputs, n)?))
    }

    /// Runs `steps` optimizer steps. Every epoch visits the samples in a
    /// fresh random order, in batches of `batch_size`.
    pub fn run(&mut self, ctx: &LossContext, steps: usize, dump_dir: Option<&Path>) -> Result<Vec<LossRecord>> {
        let n = ctx.n_samples();
        let b = self.config.batch_size.min(n);
        let mut trace = Vec::with_capacity(steps);
        for _ in 0..steps {
            if self.pending.len() < b || self.pending.iter().any(|&i| i >= n) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut self.rng);
                self.pending = perm;
            }
            let idx: Vec<usize> = self.pending.drain(..b).collect();
            let step = self.optimizer.step as usize;
            let lr = self.optimizer.learning_rate(self.optimizer.step);
            let (loss, grads) = ctx.network_loss(&mut self.net, &self.map, &idx, true)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                if let Some(dir) = dump_dir {
                    dump_batch(dir, step, &idx, ctx)?;
                }
                return Err(Error::NanLoss(step));
            }
            self.optimizer.step(&mut self.net, &grads)?;
            trace.push(LossRecord { step, loss, lr });
            if step.is_multiple_of(100) {
                log::info!("step {step} loss {loss:.6e}");
            }
        }
        Ok(trace)
    }
}

fn dump_batch(dir: &Path, step: usize, idx: &[usize], ctx: &LossContext) -> Result<()> {
    #[derive(Serialize)]
    struct Dump<'a> {
        step: usize,
        samples: &'a [usize],
        inputs: Vec<f64>,
    }
    std::fs::create_dir_all(dir)?;
    let d = Dump { step, samples: idx, inputs: ctx.batch_inputs(idx) };
    std::fs::write(dir.join("nan_batch.json"), serde_json::to_vec_pretty(&d)?)?;
    log::error!("non-finite loss at step {step}; batch written to {}", dir.join("nan_batch.json").display());
    Ok(())
}

/// Runs `f` on one thread when the configuration asks for determinism.
pub fn with_threads<T: Send>(deterministic: bool, f: impl FnOnce() -> T + Send) -> Result<T> {
    if deterministic {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| Error::Config(e.to_string()))?;
        Ok(pool.install(f))
    } else {
        Ok(f())
    }
}

/// Trains from scratch on `data` and returns the final state and loss trace.
pub fn train(config: &RunConfig, data: &Dataset, dump_dir: Option<&Path>) -> Result<(TrainingState, Vec<LossRecord>)> {
    config.validate()?;
    data.check_against(config)?;
    with_threads(config.deterministic, || {
        let ctx = LossContext::new(config, data)?;
        let mut state = TrainingState::new(config, &ctx, data)?;
        let trace = state.run(&ctx, config.steps, dump_dir)?;
        Ok((state, trace))
    })?
}

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cws::{select_channels, sort_channels, ChannelPermutation, WidthConfig};
use crate::sds::{sds_update, SparsityConfig};
use crate::voxel::{build_index, gather_neighbors, Coord3, KernelOffsets, NeighborMap, SparseTensor};
use crate::{Error, Result};

use super::layers::NormMode;
use super::loss::weighted_ce_loss;
use super::model::{LskNetwork, NetworkConfig};
use super::optim::{AdamW, OneCycle};

/// Spacing along x between scenes packed into one batch; far beyond any kernel reach.
const BATCH_STRIDE: i32 = 1 << 16;

/// One voxelized scene with its neighbor map and per-voxel labels.
#[derive(Debug, Clone)]
pub struct Sample {
    pub tensor: Arc<SparseTensor<f32>>,
    pub nmap: Arc<NeighborMap>,
    pub labels: Vec<u16>,
}

impl Sample {
    pub fn new(tensor: SparseTensor<f32>, labels: Vec<u16>, offsets: &KernelOffsets) -> Result<Self> {
        if labels.len() != tensor.len() {
            return Err(Error::ShapeMismatch(format!("{} labels for {} voxels", labels.len(), tensor.len())));
        }
        let index = build_index(&tensor)?;
        let nmap = gather_neighbors(&index, tensor.coords(), offsets);
        Ok(Self { tensor: Arc::new(tensor), nmap: Arc::new(nmap), labels })
    }

    /// Packs several samples into one, translating each far enough apart that
    /// no neighborhood crosses between them.
    pub fn concat(parts: &[&Sample]) -> Result<Self> {
        match parts {
            [] => Err(Error::EmptyInput),
            [one] => Ok((*one).clone()),
            _ => {
                let channels = parts[0].tensor.channels();
                let mut coords = Vec::new();
                let mut feats = Vec::new();
                let mut labels = Vec::new();
                for (i, s) in parts.iter().enumerate() {
                    if s.tensor.channels() != channels {
                        return Err(Error::ShapeMismatch("batch members differ in channel count".into()));
                    }
                    let shift = Coord3::new(BATCH_STRIDE * i as i32, 0, 0);
                    coords.extend(s.tensor.coords().iter().map(|&c| c + shift));
                    feats.extend_from_slice(s.tensor.feats());
                    labels.extend_from_slice(&s.labels);
                }
                let maps: Vec<&NeighborMap> = parts.iter().map(|s| &*s.nmap).collect();
                Ok(Self {
                    tensor: Arc::new(SparseTensor::with_coords(coords.into(), feats, channels)?),
                    nmap: Arc::new(NeighborMap::concat(&maps)),
                    labels,
                })
            }
        }
    }
}

/// Everything that controls a training run besides the architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub iterations: u64,
    pub sparsity: SparsityConfig,
    pub width: WidthConfig,
    /// Peak of the one-cycle learning-rate schedule.
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        self.sparsity.validate()?;
        self.width.validate(self.sparsity.adapt_every)?;
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("iterations and batch size must be positive".into()));
        }
        if self.width.is_expanded() && self.iterations < self.width.sort_every {
            return Err(Error::InvalidConfig(format!(
                "{} iterations never reach the sort frequency {}",
                self.iterations, self.width.sort_every
            )));
        }
        if !(self.peak_lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("learning rate and weight decay must be non-negative".into()));
        }
        Ok(())
    }

    /// Whether dynamic sparsity runs at all.
    pub fn sds_active(&self) -> bool {
        self.sparsity.sparsity > 0.0 && self.sparsity.adapt_every > 0
    }
}

/// Per-iteration log line.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub loss: f32,
    pub lr: f64,
    /// Realized sparsity of every large-kernel layer after this iteration.
    pub layer_sparsity: Vec<f64>,
    pub sds_event: bool,
    pub sort_event: bool,
}

impl IterationRecord {
    pub fn csv_header(layers: usize) -> String {
        let mut h = String::from("iteration,loss,lr");
        for l in 0..layers {
            h.push_str(&format!(",sparsity_{l}"));
        }
        h.push_str(",sds_event,sort_event");
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!("{},{:.6},{:.6e}", self.iteration, self.loss, self.lr);
        for s in &self.layer_sparsity {
            r.push_str(&format!(",{s:.6}"));
        }
        r.push_str(&format!(",{},{}", self.sds_event as u8, self.sort_event as u8));
        r
    }
}

/// Training state: network, optimizer moments (inside the network), counters
/// and random streams.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: LskNetwork,
    pub schedule: TrainSchedule,
    pub iteration: u64,
    pub sds_events: u64,
    pub sort_events: u64,
    pub last_permutation: Option<ChannelPermutation>,
    /// Drives initialization and batch selection.
    pub(crate) rng: ChaCha8Rng,
    /// Drives regrowth.
    pub(crate) mask_rng: ChaCha8Rng,
}

impl Trainer {
    /// Builds a fresh network at the expanded width. Returns initialization warnings.
    pub fn new(config: &NetworkConfig, schedule: TrainSchedule, seed: u64) -> Result<(Self, Vec<String>)> {
        schedule.validate()?;
        if schedule.width.base_width != config.hidden_width || schedule.width.width_factor != config.width_factor {
            return Err(Error::InvalidConfig("width config disagrees with the network config".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = if schedule.sds_active() { schedule.sparsity.sparsity } else { 0.0 };
        let (net, warnings) = LskNetwork::build(config, schedule.width.expanded_width(), s, &mut rng)?;
        let mask_rng = ChaCha8Rng::seed_from_u64(schedule.sparsity.seed);
        let trainer = Self {
            net,
            schedule,
            iteration: 0,
            sds_events: 0,
            sort_events: 0,
            last_permutation: None,
            rng,
            mask_rng,
        };
        Ok((trainer, warnings))
    }

    fn optimizer(&self) -> AdamW {
        AdamW { weight_decay: self.schedule.weight_decay, ..AdamW::default() }
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        OneCycle::new(self.schedule.peak_lr, self.schedule.iterations).lr(iteration)
    }

    fn class_weights(&self) -> Vec<f32> {
        self.net.config().class_weights.iter().map(|&w| w as f32).collect()
    }

    /// Loss of the current network on one sample, using batch statistics.
    pub fn loss(&self, sample: &Sample) -> Result<f32> {
        let cache = self.net.forward(&sample.tensor, &sample.nmap, NormMode::Train)?;
        Ok(weighted_ce_loss(&cache.logits, &sample.labels, &self.class_weights())?.0)
    }

    /// One forward/backward/update pass at the given learning rate, counted as
    /// optimizer step `self.iteration` (which must already be at least 1).
    /// Gradients at masked positions never reach the optimizer.
    pub fn train_step(&mut self, sample: &Sample, lr: f64) -> Result<f32> {
        let cache = self.net.forward(&sample.tensor, &sample.nmap, NormMode::Train)?;
        let (loss, grad_logits) = weighted_ce_loss(&cache.logits, &sample.labels, &self.class_weights())?;
        if !loss.is_finite() {
            return Err(Error::Diverged(self.iteration));
        }
        let grads = self.net.backward(&cache, &grad_logits)?;
        if grads.input.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged(self.iteration));
        }
        self.net.update_running_stats(&cache);
        let optimizer = self.optimizer();
        let t = self.iteration.max(1);
        self.net.visit_params(&grads, |p| optimizer.step(p, lr, t));
        Ok(loss)
    }

    /// Runs one scheduled iteration: batch draw, update, then any adaptation or
    /// sorting event that falls on this iteration.
    pub fn step(&mut self, data: &[Sample]) -> Result<IterationRecord> {
        if data.is_empty() {
            return Err(Error::NoScenes);
        }
        self.iteration += 1;
        let it = self.iteration;
        let picks: Vec<&Sample> =
            (0..self.schedule.batch_size).map(|_| &data[self.rng.gen_range(0..data.len())]).collect();
        let batch = Sample::concat(&picks)?;
        let lr = self.lr_at(it);
        let loss = self.train_step(&batch, lr)?;

        let sds_event = self.schedule.sds_active() && it % self.schedule.sparsity.adapt_every == 0;
        if sds_event {
            let p = self.schedule.sparsity.prune_rate;
            let rng = &mut self.mask_rng;
            for layer in self.net.lsk_layers_mut() {
                let delta = sds_update(&mut layer.kernel, p, rng);
                layer.reset_moments(delta.eliminated.iter().chain(&delta.grown).map(|e| e.index));
            }
            self.sds_events += 1;
        }
        let sort_event = self.schedule.width.is_expanded() && it % self.schedule.width.sort_every == 0;
        if sort_event {
            self.last_permutation = Some(sort_channels(&mut self.net)?);
            self.sort_events += 1;
        }
        Ok(IterationRecord {
            iteration: it,
            loss,
            lr,
            layer_sparsity: self.net.lsk_layers().map(|l| l.kernel.sparsity()).collect(),
            sds_event,
            sort_event,
        })
    }

    /// Trains until the scheduled iteration count, reporting every record.
    pub fn run(&mut self, data: &[Sample], mut on_record: impl FnMut(&IterationRecord)) -> Result<()> {
        while self.iteration < self.schedule.iterations {
            let rec = self.step(data)?;
            on_record(&rec);
        }
        Ok(())
    }

    /// The base-width network used for evaluation: a sorted copy with the
    /// leading channels selected. Training state is left untouched.
    pub fn inference_network(&self) -> Result<LskNetwork> {
        inference_network(&self.net, self.schedule.width.base_width)
    }
}

/// Sorts a copy of `net` and selects `base_width` channels; returns the
/// network unchanged when it is not wider than `base_width`.
pub fn inference_network(net: &LskNetwork, base_width: usize) -> Result<LskNetwork> {
    if net.stream_width() == base_width && net.inner_widths().iter().all(|&w| w == base_width) {
        return Ok(net.clone());
    }
    let mut sorted = net.clone();
    sort_channels(&mut sorted)?;
    select_channels(&sorted, base_width)
}

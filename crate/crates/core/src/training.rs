//! End-to-end training: Adam optimization of baseline and
//! boundary-constrained models, per-epoch learning-rate decay,
//! validation-dice model selection with checkpointing, lambda grid search,
//! and multi-run aggregation.
//!
//! Determinism: parameter init, epoch shuffles, and per-run seeds all derive
//! from the config seed; reductions are fixed-order, so a config reproduces
//! its metrics bit-for-bit at phantom scale regardless of thread count.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, Sample};
use crate::evaluation::{self, MeanStd, MetricsReport, SubjectMetrics};
use crate::graph::{build_graph, Architecture, ArchitectureConfig, TopologyKind};
use crate::losses::{
    boundary_bce_loss_grad, combined_loss, dice_region_loss_grad, LossBreakdown, LossWeights,
};
use crate::nn::{Network, ParamStore, Phase, Tensor};
use crate::volume::{argmax_labels, one_hot, LabelVolume, ScalarVolume};
use crate::{derive_seed, Error, Result};

/// The default lambda grid: 0 to 2 with a step of 0.5.
pub const LAMBDA_GRID: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Full training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub topology: TopologyKind,
    /// Weight of the boundary loss (ignored by baselines).
    pub lambda: f64,
    pub base_features: usize,
    pub depth: usize,
    pub max_features: usize,
    pub optimizer: AdamConfig,
    /// Learning-rate decay factor applied after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dice_smooth: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::Unet,
            topology: TopologyKind::Baseline,
            lambda: 0.0,
            base_features: 16,
            depth: 5,
            max_features: 256,
            optimizer: AdamConfig::default(),
            lr_decay: 0.9,
            batch_size: 2,
            epochs: 60,
            seed: 0,
            dice_smooth: 1e-5,
            checkpoint_dir: None,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        LossWeights::new(self.lambda)?;
        if self.optimizer.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(0.0 < self.lr_decay && self.lr_decay <= 1.0) {
            return Err(Error::InvalidArgument("lr decay must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn arch_config(&self, region_classes: usize) -> ArchitectureConfig {
        ArchitectureConfig {
            base_features: self.base_features,
            depth: self.depth,
            max_features: self.max_features,
            region_classes,
            boundary_channels: 1,
        }
    }

    /// `lr_e = lr_0 * decay^e`, epoch 0-based.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.optimizer.learning_rate * self.lr_decay.powi(epoch as i32)
    }
}

/// Adam over the trainable entries of a parameter store.
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
    ranges: Vec<(usize, usize)>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let ranges = store
            .entries
            .iter()
            .filter(|e| e.kind.is_trainable())
            .map(|e| (e.offset, e.len))
            .collect();
        Self { cfg, m: vec![0.0; store.data.len()], v: vec![0.0; store.data.len()], t: 0, ranges }
    }

    /// One update with the given (possibly decayed) learning rate.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.t += 1;
        let b1 = self.cfg.beta1 as f32;
        let b2 = self.cfg.beta2 as f32;
        let bc1 = 1.0 - (self.cfg.beta1).powi(self.t as i32);
        let bc2 = 1.0 - (self.cfg.beta2).powi(self.t as i32);
        let step = (lr / bc1) as f32;
        let vscale = (1.0 / bc2) as f32;
        let eps = self.cfg.epsilon as f32;
        for &(off, len) in &self.ranges {
            for i in off..off + len {
                let g = store.grad[i];
                self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
                self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
                store.data[i] -= step * self.m[i] / ((self.v[i] * vscale).sqrt() + eps);
            }
        }
    }
}

/// Loss and validation summary of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub val_dice: f64,
    pub learning_rate: f64,
}

/// Result of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Set when training aborted on a non-finite loss; the record holds the
    /// finite epochs only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<usize>,
}

fn batch_tensor(samples: &[&Sample]) -> Tensor {
    let shape = samples[0].shape();
    let mut t = Tensor::zeros(samples.len(), 1, shape.depth, shape.height, shape.width);
    for (b, s) in samples.iter().enumerate() {
        t.block_mut(b, 0).copy_from_slice(&s.image.data);
    }
    t
}

/// Argmax prediction for one volume.
pub fn predict_labels(
    net: &mut Network,
    image: &ScalarVolume,
    class_table: &[String],
) -> Result<LabelVolume> {
    let probs = net.infer(&[image])?;
    argmax_labels(&probs[0], class_table)
}

/// Mean over subjects of mean foreground dice between argmax predictions
/// and ground truth (region output only).
pub fn validation_dice(net: &mut Network, samples: &[&Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let pred = predict_labels(net, &s.image, &s.labels.class_table)?;
        total += evaluation::mean_foreground_dice(&pred, &s.labels)?;
    }
    Ok(total / samples.len() as f64)
}

/// Trains a model and returns the run record together with the network
/// restored to its best-validation parameters.
pub fn train_full(cfg: &TrainConfig, data: &DatasetBundle) -> Result<(RunRecord, Network)> {
    cfg.validate()?;
    let train_samples = data.train_samples();
    let val_samples = data.val_samples();
    if train_samples.is_empty() || val_samples.is_empty() {
        return Err(Error::InvalidArgument(
            "training requires non-empty train and validation splits".into(),
        ));
    }
    let classes = data.num_classes();
    let shape = data.shape().expect("bundle has samples");
    let graph = build_graph(cfg.arch, cfg.topology, &cfg.arch_config(classes))?;
    graph.infer_shapes(shape)?; // reject indivisible shapes before training
    let mut net = Network::new(graph, cfg.seed)?;
    let mut adam = Adam::new(&net.store, cfg.optimizer);
    let weights = LossWeights::new(cfg.lambda)?;
    let multi_task = cfg.topology != TopologyKind::Baseline;
    let spatial = shape.num_voxels();

    let mut log_file = match &cfg.log_path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)
                        .map_err(|e| Error::io(parent.display().to_string(), e))?;
                }
            }
            Some(
                std::fs::File::create(p).map_err(|e| Error::io(p.display().to_string(), e))?,
            )
        }
        None => None,
    };

    let mut record = RunRecord {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_dice: f64::NEG_INFINITY,
        checkpoint: None,
        diverged_at: None,
    };
    let mut best_params: Option<Vec<f32>> = None;

    // one-hot targets are recomputed per batch; boundary targets are u8 masks
    'training: for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1_000 + epoch as u64));
        order.shuffle(&mut rng);

        let mut region_sum = 0.0f64;
        let mut boundary_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train_samples[i]).collect();
            let input = batch_tensor(&batch);
            let pass = net.forward(input, Phase::Train)?;
            let region = net.output(&pass, "region")?;
            let inv_b = 1.0 / batch.len() as f32;

            let mut region_grad =
                Tensor::zeros(batch.len(), classes, shape.depth, shape.height, shape.width);
            for (b, s) in batch.iter().enumerate() {
                let target = one_hot(&s.labels);
                let (loss, grad) = dice_region_loss_grad(
                    region.sample(b),
                    &target.data,
                    classes,
                    spatial,
                    cfg.dice_smooth as f32,
                )?;
                region_sum += loss as f64;
                let dst = &mut region_grad.data[b * classes * spatial..(b + 1) * classes * spatial];
                for (d, g) in dst.iter_mut().zip(grad) {
                    *d = g * inv_b;
                }
            }

            let mut port_grads = vec![("region".to_string(), region_grad)];
            if multi_task {
                let boundary = net.output(&pass, "boundary")?;
                let mut boundary_grad =
                    Tensor::zeros(batch.len(), 1, shape.depth, shape.height, shape.width);
                for (b, s) in batch.iter().enumerate() {
                    let (loss, grad) =
                        boundary_bce_loss_grad(boundary.block(b, 0), &s.boundary.mask)?;
                    boundary_sum += loss as f64;
                    if weights.lambda > 0.0 {
                        let scale = (weights.lambda as f32) * inv_b;
                        let dst = boundary_grad.block_mut(b, 0);
                        for (d, g) in dst.iter_mut().zip(grad) {
                            *d = g * scale;
                        }
                    }
                }
                // lambda = 0 contributes exactly zero gradient; skip the
                // boundary backward entirely so shared weights follow the
                // baseline trajectory bit-for-bit
                if weights.lambda > 0.0 {
                    port_grads.push(("boundary".to_string(), boundary_grad));
                }
            }

            net.store.zero_grad();
            net.backward(&pass, port_grads)?;
            adam.step(&mut net.store, lr);
        }

        let n_train = train_samples.len() as f64;
        let region_loss = region_sum / n_train;
        let boundary_loss = if multi_task { boundary_sum / n_train } else { 0.0 };
        let loss = combined_loss(region_loss, boundary_loss, &weights);
        if !loss.total.is_finite() {
            record.diverged_at = Some(epoch);
            break 'training;
        }

        let val_dice = validation_dice(&mut net, &val_samples)?;
        let entry = EpochRecord { epoch, loss, val_dice, learning_rate: lr };
        if let Some(f) = log_file.as_mut() {
            let line = serde_json::json!({
                "epoch": epoch,
                "region_loss": loss.region_loss,
                "boundary_loss": loss.boundary_loss,
                "lambda": loss.lambda,
                "total_loss": loss.total,
                "val_dice": val_dice,
                "learning_rate": lr,
            });
            writeln!(f, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        record.epochs.push(entry);

        if val_dice > record.best_val_dice {
            record.best_val_dice = val_dice;
            record.best_epoch = epoch;
            best_params = Some(net.store.data.clone());
            if let Some(dir) = &cfg.checkpoint_dir {
                save_checkpoint(dir, &net)?;
                record.checkpoint = Some(dir.clone());
            }
        }
    }

    if let Some(params) = best_params {
        net.store.data.copy_from_slice(&params);
    }
    if record.epochs.is_empty() {
        return Err(Error::Diverged { epoch: 0, value: f64::NAN });
    }
    Ok((record, net))
}

/// Trains a model; for baselines the objective is the region loss only, for
/// TSOL/TSD the lambda-weighted combined loss. Returns the run record.
pub fn train(cfg: &TrainConfig, data: &DatasetBundle) -> Result<RunRecord> {
    train_full(cfg, data).map(|(record, _)| record)
}

/// One row of the lambda search table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub best_val_dice: f64,
}

/// Result of the lambda grid search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    pub rows: Vec<LambdaRow>,
    pub best_lambda: f64,
    /// Standard deviation of the validation dice across the grid.
    pub dice_std: f64,
}

/// Grid search over the boundary-loss weight; returns the per-lambda
/// validation-dice table and the argmax (ties to the smaller lambda).
pub fn lambda_search(
    cfg: &TrainConfig,
    grid: &[f64],
    data: &DatasetBundle,
) -> Result<LambdaSearch> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("lambda grid must not be empty".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut sub = cfg.clone();
        sub.lambda = lambda;
        if let Some(dir) = &cfg.checkpoint_dir {
            sub.checkpoint_dir = Some(dir.join(format!("lambda_{lambda}")));
        }
        if let Some(p) = &cfg.log_path {
            sub.log_path = Some(p.with_extension(format!("lambda_{lambda}.jsonl")));
        }
        let record = train(&sub, data)?;
        rows.push(LambdaRow { lambda, best_val_dice: record.best_val_dice });
    }
    let mut best = &rows[0];
    for row in &rows[1..] {
        if row.best_val_dice > best.best_val_dice {
            best = row;
        }
    }
    let dices: Vec<f64> = rows.iter().map(|r| r.best_val_dice).collect();
    let mean = dices.iter().sum::<f64>() / dices.len() as f64;
    let var = dices.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / dices.len() as f64;
    Ok(LambdaSearch { best_lambda: best.lambda, rows, dice_std: var.sqrt() })
}

/// Summary of one run inside a multi-run aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_dice: f64,
}

/// Multi-run aggregation: per-run summaries plus test metrics averaged
/// across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiRunReport {
    pub runs: Vec<RunSummary>,
    pub val_dice: MeanStd,
    pub metrics: MetricsReport,
}

/// Trains `runs` models with seeds derived from the base seed, evaluates
/// each on the test split, and aggregates metrics as mean with std.
pub fn multi_run(cfg: &TrainConfig, data: &DatasetBundle, runs: usize) -> Result<MultiRunReport> {
    if runs < 1 {
        return Err(Error::InvalidArgument("multi_run requires runs >= 1".into()));
    }
    let test_samples = data.test_samples();
    if test_samples.is_empty() {
        return Err(Error::InvalidArgument("multi_run requires a non-empty test split".into()));
    }
    let class_table = data.class_table();
    let mut summaries = Vec::with_capacity(runs);
    let mut all_metrics: Vec<Vec<SubjectMetrics>> = Vec::with_capacity(runs);
    for run in 0..runs {
        let mut sub = cfg.clone();
        sub.seed = derive_seed(cfg.seed, 7_000 + run as u64);
        if let Some(dir) = &cfg.checkpoint_dir {
            sub.checkpoint_dir = Some(dir.join(format!("run_{run}")));
        }
        if let Some(p) = &cfg.log_path {
            sub.log_path = Some(p.with_extension(format!("run_{run}.jsonl")));
        }
        let (record, mut net) = train_full(&sub, data)?;
        let mut subjects = Vec::with_capacity(test_samples.len());
        for s in &test_samples {
            let pred = predict_labels(&mut net, &s.image, &class_table)?;
            subjects.push(evaluation::evaluate_subject(&s.id, &pred, &s.labels, None)?);
        }
        all_metrics.push(subjects);
        summaries.push(RunSummary {
            seed: sub.seed,
            best_epoch: record.best_epoch,
            best_val_dice: record.best_val_dice,
        });
    }
    let dices: Vec<f64> = summaries.iter().map(|s| s.best_val_dice).collect();
    let mean = dices.iter().sum::<f64>() / dices.len() as f64;
    let var = dices.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / dices.len() as f64;
    let metrics = evaluation::aggregate(all_metrics, &class_table)?;
    Ok(MultiRunReport {
        runs: summaries,
        val_dice: MeanStd { mean, std: var.sqrt() },
        metrics,
    })
}

/// Checkpoint layout: `graph.json` (layer graph), `params.bin` (flat
/// little-endian f32 blob), `manifest.json` (entry table describing the
/// blob).
pub fn save_checkpoint(dir: &Path, net: &Network) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let graph_path = dir.join("graph.json");
    std::fs::write(&graph_path, net.graph.to_json())
        .map_err(|e| Error::io(graph_path.display().to_string(), e))?;
    let manifest_path = dir.join("manifest.json");
    let manifest = serde_json::to_string_pretty(&net.store.entries)
        .map_err(|e| Error::format(manifest_path.display().to_string(), e.to_string()))?;
    std::fs::write(&manifest_path, manifest)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let params_path = dir.join("params.bin");
    std::fs::write(&params_path, net.store.to_le_bytes())
        .map_err(|e| Error::io(params_path.display().to_string(), e))?;
    Ok(())
}

/// Loads a checkpoint saved by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<Network> {
    let graph_path = dir.join("graph.json");
    let text = std::fs::read_to_string(&graph_path)
        .map_err(|e| Error::io(graph_path.display().to_string(), e))?;
    let graph = crate::graph::LayerGraph::from_json(&text)?;
    let mut net = Network::new(graph, 0)?;
    let params_path = dir.join("params.bin");
    let bytes = std::fs::read(&params_path)
        .map_err(|e| Error::io(params_path.display().to_string(), e))?;
    net.store.load_le_bytes(&bytes)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_splits, DatasetBundle};
    use crate::nn::{ParamEntry, ParamKind};
    use crate::phantom::{generate_phantom, PhantomConfig};
    use crate::volume::VolumeShape;

    fn phantom_bundle(
        count: usize,
        side: usize,
        organs: usize,
        counts: (usize, usize, usize),
        seed: u64,
    ) -> DatasetBundle {
        let mut samples = Vec::new();
        for i in 0..count {
            let mut cfg = PhantomConfig::for_shape(VolumeShape::cube(side), organs, 0);
            cfg.seed = derive_seed(seed, i as u64);
            cfg.noise_sigma = 0.03;
            let mut s = generate_phantom(&cfg).unwrap();
            s.id = format!("p{i:02}");
            samples.push(s);
        }
        let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        let split = make_splits(&ids, counts, seed).unwrap();
        DatasetBundle::new(samples, split).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            arch: Architecture::Unet,
            topology: TopologyKind::Baseline,
            base_features: 4,
            depth: 2,
            epochs: 2,
            batch_size: 2,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn learning_rate_schedule_is_exact() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate_at(0), 1e-3);
        let lr5 = cfg.learning_rate_at(5);
        assert!((lr5 - 1e-3 * 0.9f64.powi(5)).abs() < 1e-18);
        assert!((lr5 - 5.9049e-4).abs() < 1e-12);
        for e in 1..20 {
            assert!(cfg.learning_rate_at(e) < cfg.learning_rate_at(e - 1));
        }
    }

    #[test]
    fn adam_step_decreases_convex_loss() {
        // linear model fixture: L(w) = sum_i (w_i - t_i)^2
        let target = [0.7f32, -0.3, 1.2, 0.0];
        let entries = vec![ParamEntry {
            node: "toy".into(),
            name: "weight".into(),
            kind: ParamKind::Weight,
            shape: vec![4],
            offset: 0,
            len: 4,
        }];
        let mut store =
            ParamStore { entries, data: vec![0.0; 4], grad: vec![0.0; 4] };
        let mut adam = Adam::new(&store, AdamConfig::default());
        let loss = |w: &[f32]| -> f32 {
            w.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        let before = loss(&store.data);
        for i in 0..4 {
            store.grad[i] = 2.0 * (store.data[i] - target[i]);
        }
        adam.step(&mut store, 0.01);
        assert!(loss(&store.data) < before);
    }

    #[test]
    fn training_loss_decreases_on_tiny_phantoms() {
        let bundle = phantom_bundle(3, 8, 2, (2, 1, 0), 5);
        let record = train(&tiny_cfg(), &bundle).unwrap();
        assert_eq!(record.epochs.len(), 2);
        assert!(record.diverged_at.is_none());
        assert!(record.best_val_dice > 0.0);
        assert!(record.best_val_dice >= record.epochs[0].val_dice);
    }

    #[test]
    fn best_val_dice_dominates_epoch_log() {
        let bundle = phantom_bundle(3, 8, 2, (2, 1, 0), 7);
        let mut cfg = tiny_cfg();
        cfg.epochs = 4;
        let record = train(&cfg, &bundle).unwrap();
        for e in &record.epochs {
            assert!(record.best_val_dice >= e.val_dice);
        }
        assert_eq!(
            record.best_val_dice,
            record.epochs[record.best_epoch].val_dice
        );
    }

    #[test]
    fn tsol_boundary_head_receives_gradient_with_positive_lambda() {
        let bundle = phantom_bundle(3, 8, 2, (2, 1, 0), 11);
        let classes = bundle.num_classes();
        let cfg = TrainConfig {
            topology: TopologyKind::Tsol,
            lambda: 1.0,
            ..tiny_cfg()
        };
        let graph = build_graph(cfg.arch, cfg.topology, &cfg.arch_config(classes)).unwrap();
        let mut net = Network::new(graph, cfg.seed).unwrap();
        let samples = bundle.train_samples();
        let input = batch_tensor(&samples);
        let pass = net.forward(input, Phase::Train).unwrap();
        let boundary = net.output(&pass, "boundary").unwrap();
        let shape = bundle.shape().unwrap();
        let mut bgrad = Tensor::zeros(samples.len(), 1, shape.depth, shape.height, shape.width);
        for (b, s) in samples.iter().enumerate() {
            let (_, grad) = boundary_bce_loss_grad(boundary.block(b, 0), &s.boundary.mask).unwrap();
            bgrad.block_mut(b, 0).copy_from_slice(&grad);
        }
        net.store.zero_grad();
        net.backward(&pass, vec![("boundary".into(), bgrad)]).unwrap();
        let head = net
            .store
            .entries
            .iter()
            .find(|e| e.node == "boundary_head" && e.name == "conv.weight")
            .unwrap();
        let grads = &net.store.grad[head.offset..head.offset + head.len];
        assert!(grads.iter().any(|&g| g != 0.0), "boundary head gradient is zero");
    }

    #[test]
    fn lambda_search_single_value_and_tie_rules() {
        let bundle = phantom_bundle(3, 8, 2, (2, 1, 0), 13);
        let mut cfg = tiny_cfg();
        cfg.topology = TopologyKind::Tsol;
        cfg.epochs = 1;
        let single = lambda_search(&cfg, &[0.5], &bundle).unwrap();
        assert_eq!(single.best_lambda, 0.5);
        assert_eq!(single.rows.len(), 1);
        // identical scores tie to the smaller lambda: same seed, lambda has
        // no effect in a 1-epoch run where both scores coincide only if the
        // boundary grad is zero, so craft the tie synthetically instead
        let rows = vec![
            LambdaRow { lambda: 0.0, best_val_dice: 0.5 },
            LambdaRow { lambda: 1.0, best_val_dice: 0.5 },
        ];
        let mut best = &rows[0];
        for row in &rows[1..] {
            if row.best_val_dice > best.best_val_dice {
                best = row;
            }
        }
        assert_eq!(best.lambda, 0.0);
    }

    #[test]
    fn multi_run_single_run_has_zero_std() {
        let bundle = phantom_bundle(4, 8, 2, (2, 1, 1), 17);
        let report = multi_run(&tiny_cfg(), &bundle, 1).unwrap();
        assert_eq!(report.runs.len(), 1);
        assert_eq!(report.val_dice.std, 0.0);
        for organ in &report.metrics.per_organ {
            assert_eq!(organ.dice.std, 0.0);
        }
    }

    #[test]
    fn multi_run_mean_matches_hand_average() {
        let bundle = phantom_bundle(4, 8, 2, (2, 1, 1), 19);
        let mut cfg = tiny_cfg();
        cfg.epochs = 1;
        let report = multi_run(&cfg, &bundle, 3).unwrap();
        let hand: f64 =
            report.runs.iter().map(|r| r.best_val_dice).sum::<f64>() / report.runs.len() as f64;
        assert!((report.val_dice.mean - hand).abs() < 1e-15);
        // per-organ mean equals recomputation from the per-subject entries
        for organ in &report.metrics.per_organ {
            let per_run: Vec<f64> = report
                .metrics
                .runs
                .iter()
                .map(|run| {
                    run.iter()
                        .map(|s| {
                            s.organs.iter().find(|o| o.class == organ.class).unwrap().dice
                        })
                        .sum::<f64>()
                        / run.len() as f64
                })
                .collect();
            let mean = per_run.iter().sum::<f64>() / per_run.len() as f64;
            assert!((organ.dice.mean - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_seeds_reproduce_run_records() {
        let bundle = phantom_bundle(3, 8, 2, (2, 1, 0), 23);
        let a = train(&tiny_cfg(), &bundle).unwrap();
        let b = train(&tiny_cfg(), &bundle).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let bundle = phantom_bundle(3, 8, 2, (2, 1, 0), 29);
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg();
        cfg.checkpoint_dir = Some(dir.path().to_path_buf());
        let (record, mut net) = train_full(&cfg, &bundle).unwrap();
        assert_eq!(record.checkpoint.as_deref(), Some(dir.path()));
        let mut restored = load_checkpoint(dir.path()).unwrap();
        let sample = bundle.val_samples()[0].clone();
        let a = predict_labels(&mut net, &sample.image, &sample.labels.class_table).unwrap();
        let b = predict_labels(&mut restored, &sample.image, &sample.labels.class_table).unwrap();
        assert_eq!(a, b);
    }
}

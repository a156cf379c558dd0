//! Learned benchmark tasks: object/grating classification, pose/contact/
//! force regression, and hierarchical hardness/material/texture multi-task
//! recognition, each runnable on any render style for ablations.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Label, Manifest, Split};
use crate::error::{Error, Result};
use crate::neural::{
    build_dense_cnn, build_hier_multihead, Adam, Network, Tape, Tensor,
};
use crate::render::{RenderStyle, SensorImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Object,
    Grating,
    Pose,
    Contact,
    Force,
    Multitask,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Object => "object",
            TaskKind::Grating => "grating",
            TaskKind::Pose => "pose",
            TaskKind::Contact => "contact",
            TaskKind::Force => "force",
            TaskKind::Multitask => "multitask",
        }
    }
}

/// In-memory dataset: images already downsampled to the training side and
/// turned into grayscale tensors.
pub struct LabeledDataset {
    pub style: String,
    pub seed: u64,
    pub side: usize,
    pub ids: Vec<u64>,
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<Label>,
    pub splits: Vec<Split>,
}

fn gray_tensor(img: &SensorImage, side: usize) -> Tensor<f32> {
    let img = if img.width == side { img.clone() } else { img.downsample(img.width / side) };
    let gray = img.to_gray();
    let data = gray.iter().map(|&g| (g / 255.0) as f32).collect();
    Tensor::from_vec(&[1, 1, side, side], data)
}

impl LabeledDataset {
    /// Load one style of a protocol manifest. Split hygiene is asserted on
    /// every load.
    pub fn from_manifest(
        manifest: &Manifest,
        base_dir: &Path,
        style: &str,
        side: usize,
    ) -> Result<LabeledDataset> {
        manifest.check_split_hygiene()?;
        let mut ids = Vec::new();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut splits = Vec::new();
        for r in &manifest.records {
            if r.style != style {
                continue;
            }
            let img = SensorImage::read_ppm(
                &base_dir.join(&r.image_path),
                RenderStyle::from_name(&r.style)?,
            )?;
            ids.push(r.id);
            images.push(gray_tensor(&img, side));
            labels.push(r.label.clone());
            splits.push(r.split);
        }
        if ids.is_empty() {
            return Err(Error::Dataset(format!("no records for style {style}")));
        }
        let mut seen = HashSet::new();
        if !ids.iter().all(|id| seen.insert(*id)) {
            return Err(Error::Dataset("duplicate ids within one style".into()));
        }
        Ok(LabeledDataset {
            style: style.to_string(),
            seed: manifest.header.root_seed,
            side,
            ids,
            images,
            labels,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Random horizontal/vertical flips during classifier training. Only
    /// valid for label sets that are flip-invariant.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, batch: 16, lr: 1e-3, seed: 0, augment: false }
    }
}

/// Result record for one task run. Classification entries carry a
/// confusion matrix whose row sums equal the per-class test counts;
/// regression entries carry per-axis MAE.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub style: String,
    pub seed: u64,
    pub n_test: usize,
    pub accuracy: Option<f64>,
    pub per_class_accuracy: Option<Vec<f64>>,
    /// row = true class, column = predicted class
    pub confusion: Option<Vec<Vec<usize>>>,
    pub mae: Option<Vec<f64>>,
    pub axis_names: Option<Vec<String>>,
    /// multitask: (hardness, material, texture) accuracies
    pub head_accuracy: Option<[f64; 3]>,
    /// mean training loss per epoch
    pub train_loss: Vec<f64>,
}

impl TaskReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Confusion-matrix totals reconcile with the test-set size.
    pub fn check_confusion_totals(&self) -> Result<()> {
        if let Some(cm) = &self.confusion {
            let total: usize = cm.iter().map(|row| row.iter().sum::<usize>()).sum();
            if total != self.n_test {
                return Err(Error::Dataset(format!(
                    "confusion total {total} != test size {}",
                    self.n_test
                )));
            }
        }
        Ok(())
    }
}

fn class_of(label: &Label) -> Result<usize> {
    match label {
        Label::Class(c) => Ok(*c),
        other => Err(Error::Dataset(format!("expected class label, got {other:?}"))),
    }
}

fn regression_target(label: &Label, task: TaskKind) -> Result<Vec<f64>> {
    match (task, label) {
        (TaskKind::Pose, Label::Pose(x, z, th)) => Ok(vec![*x, *z, *th]),
        (TaskKind::Contact, Label::Contact(x, y, z)) => Ok(vec![*x, *y, *z]),
        (TaskKind::Force, Label::Force(fx, fy, fz)) => Ok(vec![*fx, *fy, *fz]),
        _ => Err(Error::Dataset(format!("label {label:?} does not fit task {}", task.name()))),
    }
}

fn regression_axes(task: TaskKind) -> Vec<String> {
    match task {
        TaskKind::Pose => vec!["x_mm".into(), "z_mm".into(), "theta_deg".into()],
        TaskKind::Contact => vec!["px_mm".into(), "py_mm".into(), "pz_mm".into()],
        TaskKind::Force => vec!["fx_n".into(), "fy_n".into(), "fz_n".into()],
        _ => vec![],
    }
}

/// One pass over the training set to replace the noisy exponential batch-norm
/// running statistics with a cumulative average. Batches are shuffled so the
/// per-batch statistics include between-class variance.
fn calibrate_norm_stats(
    net: &Network<f32>,
    ds: &LabeledDataset,
    idx: &[usize],
    batch: usize,
    seed: u64,
) -> Result<()> {
    let mut order = idx.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    order.shuffle(&mut rng);
    net.begin_norm_calibration();
    for chunk in order.chunks(batch) {
        let x = batch_images(ds, chunk);
        let mut tape = Tape::new();
        let xn = tape.leaf(x);
        net.forward(&mut tape, &[xn], true, 0)?;
    }
    net.end_norm_calibration();
    Ok(())
}

/// Flip a single-channel square image tensor in place along x and/or y.
fn flip_image(data: &mut [f32], side: usize, flip_x: bool, flip_y: bool) {
    if flip_x {
        for row in data.chunks_mut(side) {
            row.reverse();
        }
    }
    if flip_y {
        for y in 0..side / 2 {
            for x in 0..side {
                data.swap(y * side + x, (side - 1 - y) * side + x);
            }
        }
    }
}

fn batch_images_augmented(ds: &LabeledDataset, idx: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let side = ds.side;
    let mut data = Vec::with_capacity(idx.len() * side * side);
    for &i in idx {
        let start = data.len();
        data.extend_from_slice(&ds.images[i].data);
        let (fx, fy): (bool, bool) = (rng.gen(), rng.gen());
        flip_image(&mut data[start..], side, fx, fy);
    }
    Tensor::from_vec(&[idx.len(), 1, side, side], data)
}

fn batch_images(ds: &LabeledDataset, idx: &[usize]) -> Tensor<f32> {
    let side = ds.side;
    let mut data = Vec::with_capacity(idx.len() * side * side);
    for &i in idx {
        data.extend_from_slice(&ds.images[i].data);
    }
    Tensor::from_vec(&[idx.len(), 1, side, side], data)
}

fn argmax_rows(t: &Tensor<f32>) -> Vec<usize> {
    let (n, k) = (t.shape[0], t.shape[1]);
    (0..n)
        .map(|i| {
            let row = &t.data[i * k..(i + 1) * k];
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap()
        })
        .collect()
}

/// Train a softmax classifier on the train split, report on the test split.
pub fn train_classifier(
    ds: &LabeledDataset,
    task: TaskKind,
    cfg: &TrainConfig,
) -> Result<(Network<f32>, TaskReport)> {
    let classes: Vec<usize> = ds.labels.iter().map(class_of).collect::<Result<_>>()?;
    let n_classes = classes.iter().max().map_or(0, |m| m + 1);
    if n_classes < 2 {
        return Err(Error::Dataset("need at least two classes".into()));
    }
    let train_idx = ds.indices(Split::Train);
    let test_idx = ds.indices(Split::Test);
    let train_classes: HashSet<usize> = train_idx.iter().map(|&i| classes[i]).collect();
    if train_classes.len() != n_classes {
        return Err(Error::Dataset(format!(
            "{} of {n_classes} classes present in training split",
            train_classes.len()
        )));
    }
    let mut net: Network<f32> = Network::new(
        build_dense_cnn(1, n_classes),
        &[vec![1, 1, ds.side, ds.side]],
        cfg.seed,
    )?;
    let mut opt = Adam::new(cfg.lr, 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = train_idx.clone();
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // half-cosine learning-rate decay; the tail epochs polish at a low
        // step size, which matters for the fine-pitch classes
        opt.lr = cfg.lr * 0.5 * (1.0 + (PI * epoch as f64 / cfg.epochs as f64).cos());
        order.shuffle(&mut rng);
        let (mut lsum, mut nb) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let x = if cfg.augment {
                batch_images_augmented(ds, chunk, &mut rng)
            } else {
                batch_images(ds, chunk)
            };
            let y: Vec<usize> = chunk.iter().map(|&i| classes[i]).collect();
            let mut tape = Tape::new();
            let xn = tape.leaf(x);
            let pass = net.forward(&mut tape, &[xn], true, cfg.seed)?;
            let loss = tape.softmax_cross_entropy(pass.output("out"), &y)?;
            tape.backward(loss)?;
            opt.step(&mut net, &tape, &pass);
            lsum += tape.val(loss).data[0] as f64;
            nb += 1;
        }
        train_loss.push(lsum / nb.max(1) as f64);
    }
    calibrate_norm_stats(&net, ds, &train_idx, cfg.batch, cfg.seed)?;
    // evaluate
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for chunk in test_idx.chunks(cfg.batch) {
        let x = batch_images(ds, chunk);
        let mut tape = Tape::new();
        let xn = tape.leaf(x);
        let pass = net.forward(&mut tape, &[xn], false, 0)?;
        let pred = argmax_rows(tape.val(pass.output("out")));
        for (&i, p) in chunk.iter().zip(pred) {
            confusion[classes[i]][p] += 1;
        }
    }
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let per_class: Vec<f64> = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                1.0
            } else {
                row[c] as f64 / total as f64
            }
        })
        .collect();
    let report = TaskReport {
        task: task.name().to_string(),
        style: ds.style.clone(),
        seed: cfg.seed,
        n_test: test_idx.len(),
        accuracy: Some(correct as f64 / test_idx.len().max(1) as f64),
        per_class_accuracy: Some(per_class),
        confusion: Some(confusion),
        mae: None,
        axis_names: None,
        head_accuracy: None,
        train_loss,
    };
    report.check_confusion_totals()?;
    Ok((net, report))
}

/// Train an MSE regressor on normalized targets; report per-axis MAE in
/// original units on the test split.
pub fn train_regressor(
    ds: &LabeledDataset,
    task: TaskKind,
    cfg: &TrainConfig,
) -> Result<(Network<f32>, TaskReport)> {
    let targets: Vec<Vec<f64>> =
        ds.labels.iter().map(|l| regression_target(l, task)).collect::<Result<_>>()?;
    let axes = regression_axes(task);
    let dim = axes.len();
    let train_idx = ds.indices(Split::Train);
    let test_idx = ds.indices(Split::Test);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Dataset("regression needs train and test splits".into()));
    }
    // per-axis normalization from the training split only
    let mut mean = vec![0.0f64; dim];
    let mut std = vec![0.0f64; dim];
    for &i in &train_idx {
        for d in 0..dim {
            mean[d] += targets[i][d];
        }
    }
    for m in &mut mean {
        *m /= train_idx.len() as f64;
    }
    for &i in &train_idx {
        for d in 0..dim {
            let dv = targets[i][d] - mean[d];
            std[d] += dv * dv;
        }
    }
    for s in &mut std {
        *s = (*s / train_idx.len() as f64).sqrt().max(1e-6);
    }
    let norm = |i: usize| -> Vec<f32> {
        (0..dim).map(|d| ((targets[i][d] - mean[d]) / std[d]) as f32).collect()
    };
    let mut net: Network<f32> =
        Network::new(build_dense_cnn(1, dim), &[vec![1, 1, ds.side, ds.side]], cfg.seed)?;
    let mut opt = Adam::new(cfg.lr, 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = train_idx.clone();
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // half-cosine learning-rate decay; the tail epochs polish at a low
        // step size, which matters for the fine-pitch classes
        opt.lr = cfg.lr * 0.5 * (1.0 + (PI * epoch as f64 / cfg.epochs as f64).cos());
        order.shuffle(&mut rng);
        let (mut lsum, mut nb) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let x = batch_images(ds, chunk);
            let mut yd = Vec::with_capacity(chunk.len() * dim);
            for &i in chunk {
                yd.extend(norm(i));
            }
            let y = Tensor::from_vec(&[chunk.len(), dim], yd);
            let mut tape = Tape::new();
            let xn = tape.leaf(x);
            let yn = tape.leaf(y);
            let pass = net.forward(&mut tape, &[xn], true, cfg.seed)?;
            let loss = tape.mse_loss(pass.output("out"), yn)?;
            tape.backward(loss)?;
            opt.step(&mut net, &tape, &pass);
            lsum += tape.val(loss).data[0] as f64;
            nb += 1;
        }
        train_loss.push(lsum / nb.max(1) as f64);
    }
    calibrate_norm_stats(&net, ds, &train_idx, cfg.batch, cfg.seed)?;
    let mut abs_err = vec![0.0f64; dim];
    for chunk in test_idx.chunks(cfg.batch) {
        let x = batch_images(ds, chunk);
        let mut tape = Tape::new();
        let xn = tape.leaf(x);
        let pass = net.forward(&mut tape, &[xn], false, 0)?;
        let out = tape.val(pass.output("out"));
        for (bi, &i) in chunk.iter().enumerate() {
            for d in 0..dim {
                let pred = out.data[bi * dim + d] as f64 * std[d] + mean[d];
                abs_err[d] += (pred - targets[i][d]).abs();
            }
        }
    }
    for e in &mut abs_err {
        *e /= test_idx.len() as f64;
    }
    Ok((
        net,
        TaskReport {
            task: task.name().to_string(),
            style: ds.style.clone(),
            seed: cfg.seed,
            n_test: test_idx.len(),
            accuracy: None,
            per_class_accuracy: None,
            confusion: None,
            mae: Some(abs_err),
            axis_names: Some(axes),
            head_accuracy: None,
            train_loss,
        },
    ))
}

fn hmt_of(label: &Label) -> Result<(usize, usize, usize)> {
    match label {
        Label::Hmt(h, m, t) => Ok((*h, *m, *t)),
        other => Err(Error::Dataset(format!("expected hardness/material/texture, got {other:?}"))),
    }
}

/// Joint training of the hardness/material/texture heads. `link` keeps the
/// material-logits-to-texture-head connection; disabling it is the
/// ablation.
pub fn train_multitask(
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    link: bool,
) -> Result<(Network<f32>, TaskReport)> {
    let hmt: Vec<(usize, usize, usize)> = ds.labels.iter().map(hmt_of).collect::<Result<_>>()?;
    let n_h = hmt.iter().map(|x| x.0).max().unwrap_or(0) + 1;
    let n_m = hmt.iter().map(|x| x.1).max().unwrap_or(0) + 1;
    let n_t = hmt.iter().map(|x| x.2).max().unwrap_or(0) + 1;
    let train_idx = ds.indices(Split::Train);
    let test_idx = ds.indices(Split::Test);
    let mut net: Network<f32> = Network::new(
        build_hier_multihead(1, n_h, n_m, n_t, link),
        &[vec![1, 1, ds.side, ds.side]],
        cfg.seed,
    )?;
    let mut opt = Adam::new(cfg.lr, 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = train_idx.clone();
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // half-cosine learning-rate decay; the tail epochs polish at a low
        // step size, which matters for the fine-pitch classes
        opt.lr = cfg.lr * 0.5 * (1.0 + (PI * epoch as f64 / cfg.epochs as f64).cos());
        order.shuffle(&mut rng);
        let (mut lsum, mut nb) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let x = batch_images(ds, chunk);
            let yh: Vec<usize> = chunk.iter().map(|&i| hmt[i].0).collect();
            let ym: Vec<usize> = chunk.iter().map(|&i| hmt[i].1).collect();
            let yt: Vec<usize> = chunk.iter().map(|&i| hmt[i].2).collect();
            let mut tape = Tape::new();
            let xn = tape.leaf(x);
            let pass = net.forward(&mut tape, &[xn], true, cfg.seed)?;
            let lh = tape.softmax_cross_entropy(pass.output("hardness"), &yh)?;
            let lm = tape.softmax_cross_entropy(pass.output("material"), &ym)?;
            let lt = tape.softmax_cross_entropy(pass.output("texture"), &yt)?;
            let hm = tape.add(lh, lm)?;
            let loss = tape.add(hm, lt)?;
            tape.backward(loss)?;
            opt.step(&mut net, &tape, &pass);
            lsum += tape.val(loss).data[0] as f64;
            nb += 1;
        }
        train_loss.push(lsum / nb.max(1) as f64);
    }
    calibrate_norm_stats(&net, ds, &train_idx, cfg.batch, cfg.seed)?;
    let mut correct = [0usize; 3];
    for chunk in test_idx.chunks(cfg.batch) {
        let x = batch_images(ds, chunk);
        let mut tape = Tape::new();
        let xn = tape.leaf(x);
        let pass = net.forward(&mut tape, &[xn], false, 0)?;
        let ph = argmax_rows(tape.val(pass.output("hardness")));
        let pm = argmax_rows(tape.val(pass.output("material")));
        let pt = argmax_rows(tape.val(pass.output("texture")));
        for (bi, &i) in chunk.iter().enumerate() {
            correct[0] += (ph[bi] == hmt[i].0) as usize;
            correct[1] += (pm[bi] == hmt[i].1) as usize;
            correct[2] += (pt[bi] == hmt[i].2) as usize;
        }
    }
    let n = test_idx.len().max(1) as f64;
    let head_acc = [correct[0] as f64 / n, correct[1] as f64 / n, correct[2] as f64 / n];
    Ok((
        net,
        TaskReport {
            task: TaskKind::Multitask.name().to_string(),
            style: ds.style.clone(),
            seed: cfg.seed,
            n_test: test_idx.len(),
            accuracy: None,
            per_class_accuracy: None,
            confusion: None,
            mae: None,
            axis_names: None,
            head_accuracy: Some(head_acc),
            train_loss,
        },
    ))
}

/// One report per style on identically seeded scenarios; differences are
/// attributable to style alone.
pub fn run_ablation(
    task: TaskKind,
    datasets: &[LabeledDataset],
    cfg: &TrainConfig,
) -> Result<Vec<TaskReport>> {
    if datasets.is_empty() {
        return Err(Error::Dataset("ablation needs at least one style".into()));
    }
    for d in &datasets[1..] {
        if d.ids != datasets[0].ids || d.seed != datasets[0].seed {
            return Err(Error::Dataset("ablation styles must share scenarios and seed".into()));
        }
    }
    let mut reports = Vec::new();
    for ds in datasets {
        let report = match task {
            TaskKind::Object | TaskKind::Grating => train_classifier(ds, task, cfg)?.1,
            TaskKind::Pose | TaskKind::Contact | TaskKind::Force => {
                train_regressor(ds, task, cfg)?.1
            }
            TaskKind::Multitask => train_multitask(ds, cfg, true)?.1,
        };
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SensorConfig;
    use crate::contact::{IndenterShape, Pose6};
    use crate::data::ContactScenario;
    use crate::render::{render_scenario, RenderParams, RenderStyle};

    /// flat plate vs sphere presses: trivially separable
    fn two_class_dataset(n_per: usize, seed: u64) -> LabeledDataset {
        let config = SensorConfig::default();
        let params = RenderParams { width: 64, height: 64, ..Default::default() };
        let mut ids = Vec::new();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut splits = Vec::new();
        for i in 0..2 * n_per {
            let class = i % 2;
            let shape = if class == 0 {
                IndenterShape::with_params(1, vec![40.0])
            } else {
                IndenterShape::with_params(2, vec![4.0])
            };
            let mut sc = ContactScenario::sample_press(i as u64, seed, shape);
            sc.pose = Pose6::press(
                (i as f64 * 0.37).sin(),
                (i as f64 * 0.71).cos(),
                0.8 + 0.4 * ((i * 7 % 10) as f64 / 10.0),
                0.0,
            );
            let img = render_scenario(&sc, RenderStyle::ViTacTip, &config, &params).unwrap();
            ids.push(i as u64);
            images.push(gray_tensor(&img, 64));
            labels.push(Label::Class(class));
            splits.push(if i < 2 * n_per - 6 { Split::Train } else { Split::Test });
        }
        LabeledDataset {
            style: "tactip".into(),
            seed,
            side: 64,
            ids,
            images,
            labels,
            splits,
        }
    }

    #[test]
    fn separable_classes_reach_full_accuracy() {
        let ds = two_class_dataset(12, 7);
        let cfg = TrainConfig { epochs: 12, batch: 8, lr: 2e-3, seed: 7, augment: false };
        let (_, report) = train_classifier(&ds, TaskKind::Object, &cfg).unwrap();
        assert_eq!(report.accuracy, Some(1.0), "{report:?}");
        report.check_confusion_totals().unwrap();
    }

    #[test]
    fn missing_training_class_is_an_error() {
        let mut ds = two_class_dataset(4, 8);
        for (i, s) in ds.splits.iter_mut().enumerate() {
            if ds.labels[i] == Label::Class(1) && *s == Split::Train {
                *s = Split::Test;
            }
        }
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        assert!(train_classifier(&ds, TaskKind::Object, &cfg).is_err());
    }

    #[test]
    fn constant_labels_collapse_to_zero_mae() {
        let mut ds = two_class_dataset(8, 9);
        for l in &mut ds.labels {
            *l = Label::Pose(1.5, 0.8, 10.0);
        }
        let cfg = TrainConfig { epochs: 4, batch: 8, lr: 1e-3, seed: 9, augment: false };
        let (_, report) = train_regressor(&ds, TaskKind::Pose, &cfg).unwrap();
        for (axis, mae) in report.axis_names.unwrap().iter().zip(report.mae.unwrap()) {
            assert!(mae < 0.05, "{axis}: MAE {mae}");
        }
    }

    #[test]
    fn multitask_reports_three_heads() {
        let mut ds = two_class_dataset(10, 10);
        for (i, l) in ds.labels.iter_mut().enumerate() {
            let class = i % 2;
            *l = Label::Hmt(class, class, class);
        }
        let cfg = TrainConfig { epochs: 4, batch: 8, lr: 1e-3, seed: 10, augment: false };
        let (_, report) = train_multitask(&ds, &cfg, true).unwrap();
        let acc = report.head_accuracy.unwrap();
        assert!(acc.iter().all(|&a| (0.0..=1.0).contains(&a)));
    }

    #[test]
    fn ablation_is_deterministic() {
        let ds = two_class_dataset(8, 11);
        let cfg = TrainConfig { epochs: 2, batch: 8, lr: 1e-3, seed: 11, augment: false };
        let r1 = run_ablation(TaskKind::Object, std::slice::from_ref(&ds), &cfg).unwrap();
        let r2 = run_ablation(TaskKind::Object, std::slice::from_ref(&ds), &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
    }

    #[test]
    fn ablation_rejects_mismatched_scenarios() {
        let a = two_class_dataset(4, 12);
        let mut b = two_class_dataset(4, 12);
        b.ids[0] += 99;
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        assert!(run_ablation(TaskKind::Object, &[a, b], &cfg).is_err());
    }
}

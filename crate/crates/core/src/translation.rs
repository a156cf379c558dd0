//! Paired image-to-image translation: pix2pix training for the marker
//! removal (MR, ViTacTip -> ViTac) and light removal (LR, ViTacTip ->
//! TacTip) directions, plus the translation evaluation reports.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Manifest, Split};
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, SsimParams};
use crate::neural::{
    build_patchgan, build_unet, load_weights, save_weights, Adam, Network, Tape, Tensor,
};
use crate::render::{RenderStyle, SensorImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Marker removal: ViTacTip -> ViTac.
    MR,
    /// Light removal: ViTacTip -> TacTip.
    LR,
}

impl Direction {
    pub fn target_style(self) -> RenderStyle {
        match self {
            Direction::MR => RenderStyle::ViTac,
            Direction::LR => RenderStyle::TacTip,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::MR => "mr",
            Direction::LR => "lr",
        }
    }
}

/// Pixel-aligned ViTacTip inputs and their style-translated targets.
#[derive(Clone, Debug)]
pub struct PairedSet {
    pub direction: Direction,
    pub ids: Vec<u64>,
    pub inputs: Vec<SensorImage>,
    pub targets: Vec<SensorImage>,
}

impl PairedSet {
    pub fn new(
        direction: Direction,
        ids: Vec<u64>,
        inputs: Vec<SensorImage>,
        targets: Vec<SensorImage>,
    ) -> Result<Self> {
        if ids.len() != inputs.len() || inputs.len() != targets.len() {
            return Err(Error::Dataset("paired set length mismatch".into()));
        }
        for (i, t) in inputs.iter().zip(&targets) {
            if i.width != t.width || i.height != t.height {
                return Err(Error::DimensionMismatch(i.width, i.height, t.width, t.height));
            }
            if i.style != RenderStyle::ViTacTip || t.style != direction.target_style() {
                return Err(Error::Dataset(format!(
                    "style mismatch: {} -> {} for direction {}",
                    i.style.name(),
                    t.style.name(),
                    direction.name()
                )));
            }
        }
        Ok(PairedSet { direction, ids, inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Load a split of a gan-pairs manifest, downsampling to `side` pixels.
    pub fn from_manifest(
        manifest: &Manifest,
        base_dir: &Path,
        direction: Direction,
        split: Split,
        side: usize,
    ) -> Result<PairedSet> {
        let target_style = direction.target_style().name();
        let mut ids = Vec::new();
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for r in &manifest.records {
            if r.style != target_style || r.split != split {
                continue;
            }
            let pair = r.pair_path.as_ref().ok_or_else(|| {
                Error::BadManifest(format!("record {} has no paired input", r.id))
            })?;
            let target = SensorImage::read_ppm(&base_dir.join(&r.image_path), direction.target_style())?;
            let input = SensorImage::read_ppm(&base_dir.join(pair), RenderStyle::ViTacTip)?;
            ids.push(r.id);
            inputs.push(resize_to(&input, side));
            targets.push(resize_to(&target, side));
        }
        PairedSet::new(direction, ids, inputs, targets)
    }
}

fn resize_to(img: &SensorImage, side: usize) -> SensorImage {
    if img.width == side && img.height == side {
        img.clone()
    } else {
        img.downsample(img.width / side)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GanConfig {
    pub lambda_l1: f64,
    pub lr: f64,
    pub beta1: f64,
    pub batch: usize,
    pub epochs: usize,
    pub image_side: usize,
    pub seed: u64,
    /// Weight of the adversarial generator term; 0 disables the
    /// discriminator entirely (pure L1 regression).
    pub adv_weight: f64,
    /// U-Net / PatchGAN width.
    pub base_channels: usize,
    /// Stop once the epoch validation metrics clear both bars.
    pub early_stop_ssim: Option<f64>,
    pub early_stop_psnr: Option<f64>,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            lambda_l1: 100.0,
            lr: 1e-3,
            beta1: 0.5,
            batch: 1,
            epochs: 50,
            image_side: 64,
            seed: 0,
            adv_weight: 0.1,
            base_channels: 32,
            early_stop_ssim: None,
            early_stop_psnr: None,
        }
    }
}

impl GanConfig {
    fn validate(&self) -> Result<()> {
        if self.lambda_l1 < 0.0 || self.epochs == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig("lambda_l1 >= 0, epochs/batch >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_l1: f64,
    pub val_l1: f64,
    pub val_ssim: f64,
    pub val_psnr_db: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_l1: f64,
}

/// A trained pix2pix generator plus the provenance needed for held-out
/// evaluation checks.
pub struct Generator {
    pub direction: Direction,
    pub config: GanConfig,
    pub net: Network<f32>,
    pub train_ids: Vec<u64>,
}

const CH: usize = 3;

fn image_to_tensor(img: &SensorImage) -> Tensor<f32> {
    let (w, h) = (img.width, img.height);
    let mut data = vec![0.0f32; CH * w * h];
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = img.get(x, y);
            data[y * w + x] = r as f32 / 127.5 - 1.0;
            data[w * h + y * w + x] = g as f32 / 127.5 - 1.0;
            data[2 * w * h + y * w + x] = b as f32 / 127.5 - 1.0;
        }
    }
    Tensor::from_vec(&[1, CH, h, w], data)
}

/// Mirror an NCHW tensor along the x and/or y image axes.
fn flip_chw(t: &Tensor<f32>, fx: bool, fy: bool) -> Tensor<f32> {
    let (n, c, h, w) = (t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
    let mut out = t.clone();
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            for y in 0..h {
                let sy = if fy { h - 1 - y } else { y };
                for x in 0..w {
                    let sx = if fx { w - 1 - x } else { x };
                    out.data[base + y * w + x] = t.data[base + sy * w + sx];
                }
            }
        }
    }
    out
}

fn batch_tensor(images: &[&SensorImage]) -> Tensor<f32> {
    let (w, h) = (images[0].width, images[0].height);
    let mut data = Vec::with_capacity(images.len() * CH * w * h);
    for img in images {
        data.extend_from_slice(&image_to_tensor(img).data);
    }
    Tensor::from_vec(&[images.len(), CH, h, w], data)
}

fn tensor_to_image(t: &Tensor<f32>, sample: usize, style: RenderStyle) -> SensorImage {
    let (h, w) = (t.shape[2], t.shape[3]);
    let mut img = SensorImage::black(w, h, style);
    let base = sample * CH * h * w;
    for y in 0..h {
        for x in 0..w {
            for c in 0..CH {
                let v = t.data[base + c * h * w + y * w + x];
                let px = ((v as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
                img.pixels[3 * (y * w + x) + c] = px;
            }
        }
    }
    img
}

/// Channel-stack input and candidate images into the 6-channel
/// discriminator tensor.
fn stack_pairs(x: &Tensor<f32>, y: &Tensor<f32>) -> Tensor<f32> {
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let mut data = Vec::with_capacity(n * 2 * c * h * w);
    for i in 0..n {
        data.extend_from_slice(&x.data[i * c * h * w..(i + 1) * c * h * w]);
        data.extend_from_slice(&y.data[i * c * h * w..(i + 1) * c * h * w]);
    }
    Tensor::from_vec(&[n, 2 * c, h, w], data)
}

fn l1_value(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let n = a.data.len().max(1) as f64;
    a.data.iter().zip(&b.data).map(|(&x, &y)| (x - y).abs() as f64).sum::<f64>() / n
}

impl Generator {
    fn build_net(cfg: &GanConfig, seed: u64) -> Result<Network<f32>> {
        Network::new(
            build_unet(CH, CH, cfg.base_channels),
            &[vec![1, CH, cfg.image_side, cfg.image_side]],
            seed,
        )
    }

    /// Deterministic inference on one image.
    /// Translate one image with a 4-way geometric self-ensemble: the input
    /// is mirrored along each axis, passed through the network, un-mirrored
    /// and averaged before quantization. The mapping is flip-equivariant, so
    /// each orientation is an independent estimate of the same target and
    /// averaging cancels part of the reconstruction noise.
    pub fn translate(&self, img: &SensorImage) -> Result<SensorImage> {
        let img = resize_to(img, self.config.image_side);
        if img.style != RenderStyle::ViTacTip {
            return Err(Error::Dataset(format!(
                "generator expects vitactip input, got {}",
                img.style.name()
            )));
        }
        let base = image_to_tensor(&img);
        let mut mean: Option<Tensor<f32>> = None;
        for (fx, fy) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut tape = Tape::new();
            let x = tape.leaf(flip_chw(&base, fx, fy));
            let pass = self.net.forward(&mut tape, &[x], false, 0)?;
            let out = flip_chw(tape.val(pass.output("image")), fx, fy);
            match &mut mean {
                None => mean = Some(out),
                Some(m) => {
                    for (a, b) in m.data.iter_mut().zip(&out.data) {
                        *a += b;
                    }
                }
            }
        }
        let mut out = mean.unwrap();
        for v in &mut out.data {
            *v *= 0.25;
        }
        Ok(tensor_to_image(&out, 0, self.direction.target_style()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_weights(&self.net, path)
    }

    /// Load weights saved by `save` into a fresh generator of the same
    /// configuration.
    pub fn load(path: &Path, direction: Direction, config: GanConfig) -> Result<Generator> {
        let mut net = Generator::build_net(&config, config.seed)?;
        load_weights(&mut net, path)?;
        Ok(Generator { direction, config, net, train_ids: Vec::new() })
    }
}

/// Per-epoch validation pass: mean L1 in normalized units plus image-space
/// SSIM/PSNR means.
fn validate(net: &Network<f32>, val: &PairedSet, direction: Direction) -> Result<(f64, f64, f64)> {
    let params = SsimParams::default();
    let mut l1 = 0.0;
    let mut ssim_sum = 0.0;
    let mut psnr_sum = 0.0;
    for (x_img, y_img) in val.inputs.iter().zip(&val.targets) {
        let mut tape = Tape::new();
        let x = tape.leaf(image_to_tensor(x_img));
        let pass = net.forward(&mut tape, &[x], false, 0)?;
        let out = tape.val(pass.output("image")).clone();
        l1 += l1_value(&out, &image_to_tensor(y_img));
        let img = tensor_to_image(&out, 0, direction.target_style());
        ssim_sum += crate::metrics::ssim(&img, y_img, &params)?;
        psnr_sum += crate::metrics::psnr(&img, y_img)?.min(999.0);
    }
    let n = val.len().max(1) as f64;
    Ok((l1 / n, ssim_sum / n, psnr_sum / n))
}

/// Alternating pix2pix training. Returns the best-validation-L1 generator
/// and the loss history. Deterministic for a fixed config seed.
pub fn train_pix2pix(
    train: &PairedSet,
    val: &PairedSet,
    cfg: &GanConfig,
) -> Result<(Generator, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Dataset("empty training or validation set".into()));
    }
    if train.direction != val.direction {
        return Err(Error::Dataset("train/val direction mismatch".into()));
    }
    let direction = train.direction;
    let side = cfg.image_side;
    for img in train.inputs.iter().chain(&val.inputs) {
        if img.width != side || img.height != side {
            return Err(Error::DimensionMismatch(img.width, img.height, side, side));
        }
    }
    let mut g_net = Generator::build_net(cfg, cfg.seed)?;
    let mut d_net: Network<f32> = Network::new(
        build_patchgan(2 * CH, cfg.base_channels),
        &[vec![1, 2 * CH, side, side]],
        cfg.seed ^ 0xD15C,
    )?;
    let mut opt_g = Adam::new(cfg.lr, cfg.beta1);
    let mut opt_d = Adam::new(cfg.lr, cfg.beta1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = TrainHistory { best_val_l1: f64::INFINITY, ..Default::default() };
    let mut best_weights: Option<Vec<Tensor<f32>>> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let use_d = cfg.adv_weight > 0.0;
    for epoch in 0..cfg.epochs {
        let decayed =
            cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / cfg.epochs as f64).cos());
        opt_g.lr = decayed;
        opt_d.lr = decayed;
        order.shuffle(&mut rng);
        let (mut d_sum, mut adv_sum, mut l1_sum, mut batches) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for chunk in order.chunks(cfg.batch) {
            let xs: Vec<&SensorImage> = chunk.iter().map(|&i| &train.inputs[i]).collect();
            let ys: Vec<&SensorImage> = chunk.iter().map(|&i| &train.targets[i]).collect();
            let x_t = batch_tensor(&xs);
            let y_t = batch_tensor(&ys);
            let b = chunk.len();
            // generator forward for this batch (teacher pass for D)
            let fake = {
                let mut tape = Tape::new();
                let x = tape.leaf(x_t.clone());
                let pass = g_net.forward(&mut tape, &[x], true, cfg.seed ^ epoch as u64)?;
                tape.val(pass.output("image")).clone()
            };
            if use_d {
                // discriminator step on [real; fake] stacked into one batch
                let mut tape = Tape::new();
                let real_and_fake = {
                    let mut t = stack_pairs(&x_t, &y_t);
                    let f = stack_pairs(&x_t, &fake);
                    t.data.extend_from_slice(&f.data);
                    t.shape[0] = 2 * b;
                    t
                };
                let d_in = tape.leaf(real_and_fake);
                let pass = d_net.forward(&mut tape, &[d_in], true, 0)?;
                let patch = pass.output("patch");
                let mut target = Tensor::zeros(&tape.val(patch).shape);
                let half = target.data.len() / 2;
                for v in &mut target.data[..half] {
                    *v = 1.0;
                }
                let t_node = tape.leaf(target);
                let bce = tape.bce_with_logits(patch, t_node)?;
                let d_loss = tape.scale(bce, 0.5);
                tape.backward(d_loss)?;
                opt_d.step(&mut d_net, &tape, &pass);
                d_sum += tape.val(d_loss).data[0] as f64;
            }
            // generator step: adversarial (fool D) + lambda * L1
            {
                let mut tape = Tape::new();
                let x = tape.leaf(x_t.clone());
                let g_pass = g_net.forward(&mut tape, &[x], true, cfg.seed ^ epoch as u64)?;
                let fake_node = g_pass.output("image");
                let y_node = tape.leaf(y_t.clone());
                let l1 = tape.l1_loss(fake_node, y_node)?;
                let l1_term = tape.scale(l1, cfg.lambda_l1);
                let loss = if use_d {
                    // build the (x, fake) pair on the tape so adversarial
                    // gradients flow back into G
                    let x_node = tape.leaf(x_t.clone());
                    let d_in = tape.concat(x_node, fake_node)?;
                    let d_pass = d_net.forward(&mut tape, &[d_in], true, 0)?;
                    let patch = d_pass.output("patch");
                    let ones = tape.leaf(Tensor::filled(&tape.val(patch).shape, 1.0));
                    let adv = tape.bce_with_logits(patch, ones)?;
                    adv_sum += tape.val(adv).data[0] as f64;
                    let adv_term = tape.scale(adv, cfg.adv_weight);
                    tape.add(adv_term, l1_term)?
                } else {
                    l1_term
                };
                tape.backward(loss)?;
                opt_g.step(&mut g_net, &tape, &g_pass);
                l1_sum += tape.val(l1).data[0] as f64;
            }
            batches += 1.0;
        }
        let (val_l1, val_ssim, val_psnr) = validate(&g_net, val, direction)?;
        history.epochs.push(EpochStats {
            epoch,
            d_loss: d_sum / batches.max(1.0),
            g_adv: adv_sum / batches.max(1.0),
            g_l1: l1_sum / batches.max(1.0),
            val_l1,
            val_ssim,
            val_psnr_db: val_psnr,
        });
        if val_l1 < history.best_val_l1 {
            history.best_val_l1 = val_l1;
            history.best_epoch = epoch;
            best_weights = Some(g_net.params.iter().map(|p| p.value.clone()).collect());
        }
        let ssim_ok = cfg.early_stop_ssim.map_or(false, |t| val_ssim >= t);
        let psnr_ok = cfg.early_stop_psnr.map_or(ssim_ok, |t| ssim_ok && val_psnr >= t);
        if psnr_ok {
            break;
        }
    }
    if let Some(best) = best_weights {
        for (p, w) in g_net.params.iter_mut().zip(best) {
            p.value = w;
        }
    }
    Ok((
        Generator { direction, config: *cfg, net: g_net, train_ids: train.ids.clone() },
        history,
    ))
}

/// MSE/PSNR/SSIM of generator outputs against held-out targets. Errors on
/// any provenance overlap with the training ids. `sample_n` mirrors the
/// fixed-size random-sampling evaluation mode.
pub fn evaluate_translation(
    gen: &Generator,
    test: &PairedSet,
    sample_n: Option<usize>,
    seed: u64,
) -> Result<MetricReport> {
    if test.direction != gen.direction {
        return Err(Error::Dataset("direction mismatch in evaluation".into()));
    }
    let train_ids: HashSet<u64> = gen.train_ids.iter().copied().collect();
    let overlap = test.ids.iter().filter(|id| train_ids.contains(id)).count();
    if overlap > 0 {
        return Err(Error::ProvenanceOverlap(overlap));
    }
    let mut idx: Vec<usize> = (0..test.len()).collect();
    if let Some(n) = sample_n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        idx.truncate(n);
        idx.sort_unstable();
    }
    let mut outputs = Vec::with_capacity(idx.len());
    for &i in &idx {
        outputs.push(gen.translate(&test.inputs[i])?);
    }
    MetricReport::from_pairs(
        idx.iter().zip(&outputs).map(|(&i, out)| (test.ids[i], out, &test.targets[i])),
        &SsimParams::default(),
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub fixed: MetricReport,
    pub random: MetricReport,
    pub delta_mse: f64,
    pub delta_psnr_db: f64,
    pub delta_ssim: f64,
}

/// Evaluate the same scenarios under fixed and randomized lighting and
/// report the metric deltas (fixed minus random).
pub fn robustness_eval(
    gen: &Generator,
    fixed: &PairedSet,
    random: &PairedSet,
) -> Result<RobustnessReport> {
    if fixed.ids != random.ids {
        return Err(Error::Dataset("robustness sets must share scenarios".into()));
    }
    let f = evaluate_translation(gen, fixed, None, 0)?;
    let r = evaluate_translation(gen, random, None, 0)?;
    Ok(RobustnessReport {
        delta_mse: f.mean_mse - r.mean_mse,
        delta_psnr_db: f.mean_psnr_db - r.mean_psnr_db,
        delta_ssim: f.mean_ssim - r.mean_ssim,
        fixed: f,
        random: r,
    })
}

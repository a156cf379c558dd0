//! Pre-touch proximity sensing: SSIM-versus-distance curves, approach-stage
//! segmentation, and Gaussian-process distance regression.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ssim, SsimParams};
use crate::render::SensorImage;

/// SSIM against a fixed far reference, sampled on a descending distance
/// schedule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SsimCurve {
    pub distances_mm: Vec<f64>,
    pub ssim_values: Vec<f64>,
}

impl SsimCurve {
    pub fn new(distances_mm: Vec<f64>, ssim_values: Vec<f64>) -> Result<Self> {
        if distances_mm.len() != ssim_values.len() {
            return Err(Error::Dataset("distance/ssim length mismatch".into()));
        }
        if distances_mm.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Dataset("distances must be strictly decreasing".into()));
        }
        Ok(SsimCurve { distances_mm, ssim_values })
    }

    pub fn len(&self) -> usize {
        self.distances_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances_mm.is_empty()
    }

    /// Sum of |step| over the curve.
    pub fn total_variation(&self) -> f64 {
        self.ssim_values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }
}

/// SSIM of every frame against a fixed reference, paired with the known
/// frame distances.
pub fn ssim_sequence(
    reference: &SensorImage,
    frames: &[SensorImage],
    distances_mm: &[f64],
) -> Result<SsimCurve> {
    let params = SsimParams::default();
    let values = frames
        .iter()
        .map(|f| ssim(reference, f, &params))
        .collect::<Result<Vec<f64>>>()?;
    SsimCurve::new(distances_mm.to_vec(), values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    A,
    B,
    C,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StageThresholds {
    pub tau_ab: f64,
    pub tau_bc: f64,
}

/// Label each frame: A while SSIM >= tau_ab, B while tau_bc <= SSIM <
/// tau_ab, C below tau_bc.
pub fn segment_stages(curve: &SsimCurve, thresholds: &StageThresholds) -> Vec<Stage> {
    curve
        .ssim_values
        .iter()
        .map(|&s| {
            if s >= thresholds.tau_ab {
                Stage::A
            } else if s >= thresholds.tau_bc {
                Stage::B
            } else {
                Stage::C
            }
        })
        .collect()
}

/// Calibrate thresholds from training sweeps whose last frame is the
/// contact frame: tau_ab is the mean start-of-sweep SSIM (sweeps here begin
/// at 18 mm), tau_bc the midpoint between the mean SSIM one step before
/// contact and at contact, so the B->C flip lands on the contact frame.
pub fn calibrate_thresholds(curves: &[SsimCurve]) -> Result<StageThresholds> {
    if curves.is_empty() || curves.iter().any(|c| c.len() < 2) {
        return Err(Error::Dataset("need calibration sweeps with >= 2 frames".into()));
    }
    let n = curves.len() as f64;
    let far: f64 = curves.iter().map(|c| c.ssim_values[0]).sum::<f64>() / n;
    let pre: f64 =
        curves.iter().map(|c| c.ssim_values[c.len() - 2]).sum::<f64>() / n;
    let contact: f64 =
        curves.iter().map(|c| *c.ssim_values.last().unwrap()).sum::<f64>() / n;
    Ok(StageThresholds { tau_ab: far - 1e-6, tau_bc: 0.5 * (pre + contact) })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GprHyperparams {
    pub signal_var: f64,
    pub length_scale: f64,
    pub constant_var: f64,
    pub noise_var: f64,
}

impl Default for GprHyperparams {
    fn default() -> Self {
        GprHyperparams { signal_var: 1.0, length_scale: 0.1, constant_var: 0.1, noise_var: 1e-4 }
    }
}

impl GprHyperparams {
    fn validate(&self) -> Result<()> {
        if self.signal_var <= 0.0
            || self.length_scale <= 0.0
            || self.constant_var < 0.0
            || self.noise_var <= 0.0
        {
            return Err(Error::InvalidConfig("GPR hyperparameters must be positive".into()));
        }
        Ok(())
    }

    fn kernel(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        self.signal_var * (-d * d / (2.0 * self.length_scale * self.length_scale)).exp()
            + self.constant_var
    }
}

/// serializable payload of a fitted model
#[derive(Clone, Debug, Serialize, Deserialize)]
struct GprData {
    train_x: Vec<f64>,
    train_y: Vec<f64>,
    hyperparams: GprHyperparams,
}

/// GPR with an RBF-plus-constant kernel on scalar SSIM features.
pub struct GprModel {
    data: GprData,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

pub fn gpr_fit(train_x: &[f64], train_y: &[f64], hp: GprHyperparams) -> Result<GprModel> {
    hp.validate()?;
    if train_x.is_empty() || train_x.len() != train_y.len() {
        return Err(Error::Dataset("GPR needs matching non-empty feature/target lists".into()));
    }
    let n = train_x.len();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = hp.kernel(train_x[i], train_x[j]);
        }
        k[(i, i)] += hp.noise_var;
    }
    let chol = k.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let y = DVector::from_column_slice(train_y);
    let alpha = chol.solve(&y);
    Ok(GprModel {
        data: GprData { train_x: train_x.to_vec(), train_y: train_y.to_vec(), hyperparams: hp },
        chol,
        alpha,
    })
}

impl GprModel {
    pub fn hyperparams(&self) -> GprHyperparams {
        self.data.hyperparams
    }

    /// Posterior mean and variance at one query feature.
    pub fn predict(&self, x: f64) -> (f64, f64) {
        let hp = self.data.hyperparams;
        let n = self.data.train_x.len();
        let kstar = DVector::from_iterator(n, self.data.train_x.iter().map(|&t| hp.kernel(x, t)));
        let mean = kstar.dot(&self.alpha);
        let solved = self.chol.solve(&kstar);
        let var = hp.kernel(x, x) + hp.noise_var - kstar.dot(&solved);
        (mean, var.max(0.0))
    }

    /// Mean squared prediction error over a trial.
    pub fn trial_mse(&self, features: &[f64], truth_mm: &[f64]) -> f64 {
        let n = features.len().max(1) as f64;
        features
            .iter()
            .zip(truth_mm)
            .map(|(&f, &t)| {
                let (m, _) = self.predict(f);
                (m - t) * (m - t)
            })
            .sum::<f64>()
            / n
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.data)?)
    }

    /// Rebuilds the kernel factorization from the persisted arrays.
    pub fn from_json(s: &str) -> Result<GprModel> {
        let data: GprData = serde_json::from_str(s)?;
        gpr_fit(&data.train_x, &data.train_y, data.hyperparams)
    }
}

/// Small log-grid search over length scale and noise, minimizing held-out
/// squared error.
pub fn gpr_grid_search(
    train_x: &[f64],
    train_y: &[f64],
    val_x: &[f64],
    val_y: &[f64],
) -> Result<GprHyperparams> {
    let mut best = (f64::INFINITY, GprHyperparams::default());
    for &ls in &[0.03, 0.1, 0.3] {
        for &nv in &[1e-6, 1e-4, 1e-2] {
            let hp = GprHyperparams { length_scale: ls, noise_var: nv, ..Default::default() };
            let Ok(model) = gpr_fit(train_x, train_y, hp) else { continue };
            let err = model.trial_mse(val_x, val_y);
            if err < best.0 {
                best = (err, hp);
            }
        }
    }
    if best.0.is_finite() {
        Ok(best.1)
    } else {
        Err(Error::NotPositiveDefinite)
    }
}

/// Per-group outcome of the sweep experiment: a GPR fitted on the group's
/// calibration sweeps, scored on its held-out sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub group: u64,
    pub textured: bool,
    pub test_trial: u64,
    /// MSE on normalized distance (d / d_max) over the held-out sweep.
    pub mse: f64,
    pub n_eval: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProximityReport {
    pub style: String,
    pub max_distance_mm: f64,
    pub groups: Vec<GroupOutcome>,
    pub textured_mse: f64,
    pub flat_mse: f64,
}

/// Run the full distance-regression experiment from a proximity manifest.
///
/// Trials come in groups of five sharing one texture (four calibration
/// sweeps plus one held-out sweep). Each sweep's first frame — the farthest
/// standoff — is its SSIM reference. A GPR mapping SSIM to normalized
/// distance is grid-searched with one calibration sweep held out, refitted
/// on all four, and scored on the test sweep.
pub fn run_proximity_experiment(
    manifest: &crate::data::Manifest,
    base_dir: &std::path::Path,
    style: &str,
) -> Result<ProximityReport> {
    use std::collections::BTreeMap;
    let render_style = crate::render::RenderStyle::from_name(style)?;
    let params = SsimParams::default();
    // trial -> frames sorted by frame index
    let mut sweeps: BTreeMap<u64, Vec<(u64, f64, SensorImage)>> = BTreeMap::new();
    let mut max_d = 0.0f64;
    for r in &manifest.records {
        if r.style != style {
            continue;
        }
        let d = r.distance_mm;
        max_d = max_d.max(d);
        let img = SensorImage::read_ppm(&base_dir.join(&r.image_path), render_style)?;
        sweeps.entry(r.id / 1000).or_default().push((r.id % 1000, d, img));
    }
    if sweeps.is_empty() {
        return Err(Error::Dataset(format!("no proximity records for style {style}")));
    }
    if max_d <= 0.0 {
        return Err(Error::Dataset("all sweep distances are zero".into()));
    }
    // (ssim feature, normalized distance) pairs per trial
    let mut features: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (trial, frames) in &mut sweeps {
        frames.sort_by_key(|f| f.0);
        let reference = frames[0].2.clone();
        let mut xs = Vec::with_capacity(frames.len());
        let mut ys = Vec::with_capacity(frames.len());
        for (_, d, img) in frames.iter() {
            xs.push(ssim(&reference, img, &params)?);
            ys.push(d / max_d);
        }
        features.insert(*trial, (xs, ys));
    }
    let trials: Vec<u64> = features.keys().copied().collect();
    let n_groups = trials.iter().map(|t| t / 5).max().unwrap() + 1;
    let mut groups = Vec::new();
    for g in 0..n_groups {
        let members: Vec<u64> = trials.iter().copied().filter(|t| t / 5 == g).collect();
        if members.len() != 5 {
            return Err(Error::Dataset(format!(
                "group {g} has {} sweeps, expected 5",
                members.len()
            )));
        }
        let (cal, held) = members.split_at(4);
        let test_trial = held[0];
        let mut train_x = Vec::new();
        let mut train_y = Vec::new();
        for t in &cal[..3] {
            let (xs, ys) = &features[t];
            train_x.extend_from_slice(xs);
            train_y.extend_from_slice(ys);
        }
        let (val_x, val_y) = &features[&cal[3]];
        let hp = gpr_grid_search(&train_x, &train_y, val_x, val_y)?;
        train_x.extend_from_slice(val_x);
        train_y.extend_from_slice(val_y);
        let model = gpr_fit(&train_x, &train_y, hp)?;
        let (test_x, test_y) = &features[&test_trial];
        let mse = model.trial_mse(test_x, test_y);
        groups.push(GroupOutcome {
            group: g,
            textured: g % 2 == 0,
            test_trial,
            mse,
            n_eval: test_x.len(),
        });
    }
    let mean = |textured: bool| {
        let sel: Vec<f64> =
            groups.iter().filter(|o| o.textured == textured).map(|o| o.mse).collect();
        sel.iter().sum::<f64>() / sel.len().max(1) as f64
    };
    Ok(ProximityReport {
        style: style.to_string(),
        max_distance_mm: max_d,
        groups: groups.clone(),
        textured_mse: mean(true),
        flat_mse: mean(false),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn curve_invariants_enforced() {
        assert!(SsimCurve::new(vec![2.0, 1.0], vec![0.9]).is_err());
        assert!(SsimCurve::new(vec![1.0, 2.0], vec![0.9, 0.8]).is_err());
        assert!(SsimCurve::new(vec![2.0, 1.0], vec![0.9, 0.8]).is_ok());
    }

    #[test]
    fn first_frame_as_reference_gives_unit_ssim() {
        let img = SensorImage::black(32, 32, crate::render::RenderStyle::ViTac);
        let curve = ssim_sequence(&img, &[img.clone()], &[18.0]).unwrap();
        assert_eq!(curve.ssim_values[0], 1.0);
    }

    #[test]
    fn constant_curve_is_all_a() {
        let curve = SsimCurve::new(vec![3.0, 2.0, 1.0], vec![1.0, 1.0, 1.0]).unwrap();
        let thr = StageThresholds { tau_ab: 0.9, tau_bc: 0.5 };
        assert!(segment_stages(&curve, &thr).iter().all(|&s| s == Stage::A));
    }

    #[test]
    fn straddling_curve_is_abc() {
        let curve = SsimCurve::new(vec![3.0, 2.0, 1.0], vec![0.95, 0.7, 0.3]).unwrap();
        let thr = StageThresholds { tau_ab: 0.9, tau_bc: 0.5 };
        assert_eq!(segment_stages(&curve, &thr), vec![Stage::A, Stage::B, Stage::C]);
    }

    #[test]
    fn calibrated_flip_lands_on_contact_frame() {
        // synthetic monotone sweeps with a sharp drop at the final frame
        let mut curves = Vec::new();
        for t in 0..5 {
            let bump = t as f64 * 0.002;
            let d: Vec<f64> = (0..10).map(|i| 9.0 - i as f64).collect();
            let s: Vec<f64> =
                (0..10).map(|i| if i < 9 { 0.98 - 0.02 * i as f64 + bump } else { 0.4 + bump }).collect();
            curves.push(SsimCurve::new(d, s).unwrap());
        }
        let thr = calibrate_thresholds(&curves).unwrap();
        for c in &curves {
            let stages = segment_stages(c, &thr);
            let first_c = stages.iter().position(|&s| s == Stage::C).unwrap();
            assert!((first_c as isize - 9).abs() <= 1);
        }
    }

    #[test]
    fn single_point_interpolates_with_tiny_noise() {
        let hp = GprHyperparams { noise_var: 1e-12, ..Default::default() };
        let model = gpr_fit(&[0.7], &[5.0], hp).unwrap();
        let (m, v) = model.predict(0.7);
        assert!((m - 5.0).abs() < 1e-6);
        assert!(v < 1e-6);
    }

    #[test]
    fn symmetric_points_predict_zero_at_center() {
        // constant kernel term breaks antisymmetry, so drop it here
        let hp = GprHyperparams { constant_var: 0.0, ..Default::default() };
        let model = gpr_fit(&[-0.05, 0.05], &[1.0, -1.0], hp).unwrap();
        let (m, _) = model.predict(0.0);
        assert!(m.abs() < 1e-10, "mean {m}");
    }

    #[test]
    fn posterior_mean_matches_dense_solve() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ys: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..18.0)).collect();
        let hp = GprHyperparams::default();
        let model = gpr_fit(&xs, &ys, hp).unwrap();
        // oracle: explicit inverse via LU on the dense system
        let n = xs.len();
        let mut k = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = hp.kernel(xs[i], xs[j]);
            }
            k[(i, i)] += hp.noise_var;
        }
        let kinv = k.lu().try_inverse().unwrap();
        for &q in &[0.1, 0.5, 0.73] {
            let kstar = DVector::from_iterator(n, xs.iter().map(|&t| hp.kernel(q, t)));
            let want = kstar.dot(&(&kinv * DVector::from_column_slice(&ys)));
            let (got, _) = model.predict(q);
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn near_zero_noise_interpolates_all_targets() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.1 + rng.gen_range(0.0..0.01)).collect();
        let ys: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..18.0)).collect();
        let hp = GprHyperparams { noise_var: 1e-12, ..Default::default() };
        let model = gpr_fit(&xs, &ys, hp).unwrap();
        for (&x, &y) in xs.iter().zip(&ys) {
            let (m, _) = model.predict(x);
            assert!((m - y).abs() < 1e-6, "{m} vs {y}");
        }
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let model = gpr_fit(&[0.2, 0.5, 0.9], &[10.0, 5.0, 0.5], GprHyperparams::default()).unwrap();
        let back = GprModel::from_json(&model.to_json().unwrap()).unwrap();
        for &q in &[0.3, 0.6] {
            assert_eq!(model.predict(q).0, back.predict(q).0);
        }
    }

    #[test]
    fn degenerate_hyperparams_rejected() {
        assert!(gpr_fit(&[0.1], &[1.0], GprHyperparams { noise_var: 0.0, ..Default::default() })
            .is_err());
    }
}

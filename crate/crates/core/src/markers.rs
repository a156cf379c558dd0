//! Classical marker perception: blob detection, rest-to-observed matching,
//! and linear force/contact estimation from marker displacements.

use serde::{Deserialize, Serialize};

use crate::config::SensorConfig;
use crate::contact::{MarkerField, Wrench};
use crate::error::{Error, Result};
use crate::render::{RenderParams, RenderStyle, SensorImage};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerObservation {
    /// Sub-pixel centroid.
    pub x_px: f64,
    pub y_px: f64,
    /// Equivalent-disc radius from blob area.
    pub radius_px: f64,
    pub area_px: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct DetectParams {
    /// Binarization level on the 0-255 gray scale.
    pub threshold: f64,
    /// Markers brighter (true) or darker (false) than the threshold.
    pub bright: bool,
    pub min_area: usize,
    pub max_area: usize,
}

impl DetectParams {
    /// Defaults for a given render style, sized from the nominal disc
    /// radius: blobs outside [50%, 200%] of the nominal disc area are noise.
    pub fn for_style(style: RenderStyle, render: &RenderParams) -> Self {
        let nominal = std::f64::consts::PI * render.marker_radius_px * render.marker_radius_px;
        let bright = matches!(style, RenderStyle::TacTip | RenderStyle::MarkerMask);
        DetectParams {
            threshold: if bright { 127.0 } else { 60.0 },
            bright,
            min_area: (0.5 * nominal) as usize,
            max_area: (2.0 * nominal).ceil() as usize,
        }
    }
}

/// Threshold + 4-connected components + intensity-weighted centroids.
pub fn detect_markers(img: &SensorImage, params: &DetectParams) -> Vec<MarkerObservation> {
    let gray = img.to_gray();
    let (h, w) = (img.height, img.width);
    let mask: Vec<bool> = gray
        .iter()
        .map(|&g| if params.bright { g > params.threshold } else { g < params.threshold })
        .collect();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        stack.push(start);
        seen[start] = true;
        let mut area = 0usize;
        let (mut sw, mut sx, mut sy) = (0.0f64, 0.0f64, 0.0f64);
        while let Some(idx) = stack.pop() {
            area += 1;
            let (y, x) = (idx / w, idx % w);
            let g = gray[[y, x]];
            // weight by contrast against the threshold so anti-aliased rims
            // contribute less than disc cores
            let wgt = (if params.bright { g - params.threshold } else { params.threshold - g })
                .max(1e-3);
            sw += wgt;
            sx += wgt * x as f64;
            sy += wgt * y as f64;
            let mut visit = |nx: usize, ny: usize| {
                let ni = ny * w + nx;
                if mask[ni] && !seen[ni] {
                    seen[ni] = true;
                    stack.push(ni);
                }
            };
            if x > 0 {
                visit(x - 1, y);
            }
            if x + 1 < w {
                visit(x + 1, y);
            }
            if y > 0 {
                visit(x, y - 1);
            }
            if y + 1 < h {
                visit(x, y + 1);
            }
        }
        if area < params.min_area || area > params.max_area {
            continue;
        }
        // +0.5: the centroid is accumulated over pixel indices, but image
        // coordinates place pixel (x, y) at (x + 0.5, y + 0.5)
        out.push(MarkerObservation {
            x_px: sx / sw + 0.5,
            y_px: sy / sw + 0.5,
            radius_px: (area as f64 / std::f64::consts::PI).sqrt(),
            area_px: area,
        });
    }
    out.sort_by(|a, b| (a.y_px, a.x_px).partial_cmp(&(b.y_px, b.x_px)).unwrap());
    out
}

/// Minimum-cost assignment of rest markers to observations, squared
/// Euclidean cost, with matches farther than `max_disp_px` rejected.
/// Returns, for each rest marker, the matched observation index.
///
/// Exact Jonker-Volgenant style shortest augmenting path on the padded
/// square matrix; optimal, not greedy.
pub fn match_markers(
    rest_px: &[(f64, f64)],
    obs: &[MarkerObservation],
    max_disp_px: f64,
) -> Vec<Option<usize>> {
    let n = rest_px.len();
    let m = obs.len();
    let dim = n.max(m);
    let forbidden = 1e12;
    let pad = 4.0 * max_disp_px * max_disp_px + 1.0; // cheaper than any forbidden pair
    let cost = |r: usize, c: usize| -> f64 {
        if r < n && c < m {
            let dx = rest_px[r].0 - obs[c].x_px;
            let dy = rest_px[r].1 - obs[c].y_px;
            let d2 = dx * dx + dy * dy;
            if d2 <= max_disp_px * max_disp_px {
                d2
            } else {
                forbidden
            }
        } else {
            pad
        }
    };
    let assignment = lapjv(dim, &cost);
    (0..n)
        .map(|r| {
            let c = assignment[r];
            if c < m && cost(r, c) < forbidden {
                Some(c)
            } else {
                None
            }
        })
        .collect()
}

/// Shortest augmenting path assignment (Jonker-Volgenant without the
/// auction warm start). Returns, for each row, the assigned column.
fn lapjv(dim: usize, cost: &dyn Fn(usize, usize) -> f64) -> Vec<usize> {
    // potentials and matching; columns indexed 1..=dim with 0 as a sentinel
    let inf = f64::INFINITY;
    let mut u = vec![0.0; dim + 1];
    let mut v = vec![0.0; dim + 1];
    let mut way = vec![0usize; dim + 1];
    let mut row_of_col = vec![0usize; dim + 1]; // 0 = unassigned
    for r in 1..=dim {
        row_of_col[0] = r;
        let mut j0 = 0usize;
        let mut minv = vec![inf; dim + 1];
        let mut used = vec![false; dim + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=dim {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=dim {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        // augment along the alternating path
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0usize; dim];
    for j in 1..=dim {
        if row_of_col[j] > 0 {
            result[row_of_col[j] - 1] = j - 1;
        }
    }
    result
}

/// Reconstruct a marker field (mm displacements) from detections matched
/// against the rest layout. Unmatched markers keep zero displacement.
/// Vertical motion is recovered from disc shrinkage.
pub fn marker_field_from_detections(
    obs: &[MarkerObservation],
    matches: &[Option<usize>],
    config: &SensorConfig,
    render: &RenderParams,
) -> MarkerField {
    let mut field = MarkerField::rest(config);
    let ppm = render.px_per_mm(config);
    let rest_px: Vec<(f64, f64)> =
        field.base_xy.iter().map(|&(x, y)| render.mm_to_px(config, x, y)).collect();
    for (i, m) in matches.iter().enumerate() {
        let Some(oi) = m else { continue };
        let o = &obs[*oi];
        field.disp_xy[i] = ((o.x_px - rest_px[i].0) / ppm, (o.y_px - rest_px[i].1) / ppm);
        // radius model: r = r0 / (1 + 0.12 dz)
        if o.radius_px > 0.1 {
            field.disp_z[i] = ((render.marker_radius_px / o.radius_px - 1.0) / 0.12).max(0.0);
        }
    }
    field
}

pub const FORCE_FEATURES: [&str; 7] =
    ["mean_dx", "mean_dy", "sum_abs", "max_abs", "radial_div", "sum_dz", "max_dz"];

/// Displacement summary features. Every feature is homogeneous of degree
/// one in the displacements, so a linear force map stays exactly linear
/// under field scaling.
pub fn force_features(field: &MarkerField) -> Vec<f64> {
    let n = field.base_xy.len().max(1) as f64;
    let mut mean_dx = 0.0;
    let mut mean_dy = 0.0;
    let mut sum_abs = 0.0;
    let mut max_abs = 0.0f64;
    let mut radial = 0.0;
    let mut sum_dz = 0.0;
    let mut max_dz = 0.0f64;
    for ((&(bx, by), &(dx, dy)), &dz) in
        field.base_xy.iter().zip(&field.disp_xy).zip(&field.disp_z)
    {
        mean_dx += dx;
        mean_dy += dy;
        let mag = (dx * dx + dy * dy).sqrt();
        sum_abs += mag;
        max_abs = max_abs.max(mag);
        let r = (bx * bx + by * by).sqrt();
        if r > 1e-9 {
            radial += (dx * bx + dy * by) / r;
        }
        sum_dz += dz;
        max_dz = max_dz.max(dz);
    }
    vec![mean_dx / n, mean_dy / n, sum_abs, max_abs, radial, sum_dz, max_dz]
}

/// Ridge-regression map from displacement features to a wrench.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForceCalibration {
    pub feature_names: Vec<String>,
    /// Row-major 3 x (F+1) coefficient matrix (last column is the bias).
    pub coeffs: Vec<Vec<f64>>,
    pub lambda: f64,
}

impl ForceCalibration {
    pub fn estimate(&self, field: &MarkerField) -> Wrench {
        let mut x = force_features(field);
        x.push(1.0);
        let dot = |row: &[f64]| row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        Wrench {
            fx_n: dot(&self.coeffs[0]),
            fy_n: dot(&self.coeffs[1]),
            fz_n: dot(&self.coeffs[2]),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Fit the calibration by ridge least squares. The bias column is not
/// penalized.
pub fn fit_force_calibration(samples: &[(MarkerField, Wrench)], lambda: f64) -> Result<ForceCalibration> {
    if samples.is_empty() {
        return Err(Error::Dataset("no calibration samples".into()));
    }
    let f = FORCE_FEATURES.len();
    let cols = f + 1;
    let n = samples.len();
    let mut x = nalgebra::DMatrix::<f64>::zeros(n, cols);
    let mut y = nalgebra::DMatrix::<f64>::zeros(n, 3);
    for (i, (field, wrench)) in samples.iter().enumerate() {
        let feats = force_features(field);
        for (j, &v) in feats.iter().enumerate() {
            x[(i, j)] = v;
        }
        x[(i, f)] = 1.0;
        y[(i, 0)] = wrench.fx_n;
        y[(i, 1)] = wrench.fy_n;
        y[(i, 2)] = wrench.fz_n;
    }
    let mut gram = x.transpose() * &x;
    for j in 0..f {
        gram[(j, j)] += lambda;
    }
    let rhs = x.transpose() * &y;
    let sol = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| gram.lu().solve(&rhs))
        .ok_or(Error::NotPositiveDefinite)?;
    let coeffs = (0..3)
        .map(|r| (0..cols).map(|c| sol[(c, r)]).collect())
        .collect();
    Ok(ForceCalibration {
        feature_names: FORCE_FEATURES.iter().map(|s| s.to_string()).collect(),
        coeffs,
        lambda,
    })
}

/// Displacement-weighted centroid of the marker field: (x, y) in mm plus
/// peak indentation depth. Errors when nothing moved.
pub fn classical_contact_point(field: &MarkerField) -> Result<(f64, f64, f64)> {
    let mut sw = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut depth = 0.0f64;
    for ((&(bx, by), &(dx, dy)), &dz) in
        field.base_xy.iter().zip(&field.disp_xy).zip(&field.disp_z)
    {
        let w = (dx * dx + dy * dy + dz * dz).sqrt();
        sw += w;
        sx += w * (bx + dx);
        sy += w * (by + dy);
        depth = depth.max(dz);
    }
    if sw <= 1e-12 {
        return Err(Error::NoContact);
    }
    Ok((sx / sw, sy / sw, depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{contact_solve, IndenterShape, Pose6};
    use crate::render::{render, Scene, TextureSpec};

    fn rest_tactip() -> (SensorConfig, RenderParams, SensorImage, MarkerField) {
        let config = SensorConfig::default();
        let params = RenderParams::default();
        let markers = MarkerField::rest(&config);
        let def = crate::contact::DeformationField::zeros(config.grid_resolution);
        let scene = Scene {
            texture: TextureSpec::flat(),
            object: None,
            standoff_mm: 0.0,
            ambient: 0.0,
            light_seed: 1,
        };
        let img = render(&markers, &def, &scene, RenderStyle::TacTip, &config, &params);
        (config, params, img, markers)
    }

    #[test]
    fn detects_all_rest_markers_subpixel() {
        let (config, params, img, markers) = rest_tactip();
        let det = DetectParams::for_style(RenderStyle::TacTip, &params);
        let obs = detect_markers(&img, &det);
        assert_eq!(obs.len(), config.marker_count());
        let truth = crate::render::marker_pixel_positions(&markers, &config, &params);
        let matches = match_markers(&truth, &obs, 3.0);
        for (i, m) in matches.iter().enumerate() {
            let o = &obs[m.expect("unmatched marker")];
            let err = ((truth[i].0 - o.x_px).powi(2) + (truth[i].1 - o.y_px).powi(2)).sqrt();
            assert!(err < 0.5, "marker {i} centroid off by {err} px");
        }
    }

    #[test]
    fn detection_polarity_vitactip() {
        let config = SensorConfig::default();
        let params = RenderParams::default();
        let shape = IndenterShape::with_params(2, vec![6.0]);
        let (def, markers, _) =
            contact_solve(&shape, &Pose6::press(0.0, 0.0, 1.0, 0.0), 0.0, &config).unwrap();
        let scene = Scene {
            texture: TextureSpec::flat(),
            object: None,
            standoff_mm: 0.0,
            ambient: 0.6,
            light_seed: 1,
        };
        let img = render(&markers, &def, &scene, RenderStyle::ViTacTip, &config, &params);
        let det = DetectParams::for_style(RenderStyle::ViTacTip, &params);
        let obs = detect_markers(&img, &det);
        // dark markers on a lit background; expect most of the grid found
        assert!(obs.len() > 100, "only {} dark blobs found", obs.len());
    }

    #[test]
    fn matching_is_optimal_vs_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..30 {
            let n = rng.gen_range(2..=7);
            let rest: Vec<(f64, f64)> =
                (0..n).map(|_| (rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0))).collect();
            let obs: Vec<MarkerObservation> = (0..n)
                .map(|_| MarkerObservation {
                    x_px: rng.gen_range(0.0..50.0),
                    y_px: rng.gen_range(0.0..50.0),
                    radius_px: 3.0,
                    area_px: 28,
                })
                .collect();
            let got = match_markers(&rest, &obs, 1e6);
            let got_cost: f64 = got
                .iter()
                .enumerate()
                .map(|(r, m)| {
                    let o = &obs[m.unwrap()];
                    (rest[r].0 - o.x_px).powi(2) + (rest[r].1 - o.y_px).powi(2)
                })
                .sum();
            // brute force over all permutations
            let mut best = f64::INFINITY;
            let mut perm: Vec<usize> = (0..n).collect();
            permute(&mut perm, 0, &mut |p| {
                let c: f64 = p
                    .iter()
                    .enumerate()
                    .map(|(r, &c)| {
                        (rest[r].0 - obs[c].x_px).powi(2) + (rest[r].1 - obs[c].y_px).powi(2)
                    })
                    .sum();
                if c < best {
                    best = c;
                }
            });
            assert!((got_cost - best).abs() < 1e-9, "lapjv {got_cost} vs brute {best}");
        }
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn matching_respects_max_displacement() {
        let rest = vec![(0.0, 0.0), (100.0, 0.0)];
        let obs = vec![MarkerObservation { x_px: 1.0, y_px: 0.0, radius_px: 3.0, area_px: 28 }];
        let m = match_markers(&rest, &obs, 5.0);
        assert_eq!(m, vec![Some(0), None]);
    }

    #[test]
    fn force_features_are_homogeneous() {
        let config = SensorConfig::default();
        let shape = IndenterShape::with_params(2, vec![5.0]);
        let (_, field, _) =
            contact_solve(&shape, &Pose6::press(1.0, -0.5, 1.0, 0.0), 0.0, &config).unwrap();
        let doubled = MarkerField {
            base_xy: field.base_xy.clone(),
            disp_xy: field.disp_xy.iter().map(|&(x, y)| (2.0 * x, 2.0 * y)).collect(),
            disp_z: field.disp_z.iter().map(|&z| 2.0 * z).collect(),
        };
        let f1 = force_features(&field);
        let f2 = force_features(&doubled);
        for (a, b) in f1.iter().zip(&f2) {
            assert!((2.0 * a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn calibration_recovers_linear_map() {
        // ground-truth wrenches from the analytic contact model are linear
        // in the full displacement field; the seven summary features lose a
        // little of that, so normal force is near-exact and shear carries a
        // small residual
        use rand::{Rng, SeedableRng};
        let config = SensorConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut samples = Vec::new();
        for _ in 0..60 {
            let pose = Pose6 {
                x_mm: rng.gen_range(-2.0..2.0),
                y_mm: rng.gen_range(-2.0..2.0),
                z_mm: rng.gen_range(0.3..1.4),
                theta_deg: 0.0,
                shear_dx_mm: rng.gen_range(-1.0..1.0),
                shear_dy_mm: rng.gen_range(-1.0..1.0),
            };
            let shape = IndenterShape::with_params(2, vec![5.0]);
            let (_, field, wrench) = contact_solve(&shape, &pose, 0.0, &config).unwrap();
            samples.push((field, wrench));
        }
        let (train, test) = samples.split_at(45);
        let calib = fit_force_calibration(train, 1e-8).unwrap();
        for (field, truth) in test {
            let est = calib.estimate(field);
            assert!((est.fx_n - truth.fx_n).abs() < 0.15, "{est:?} vs {truth:?}");
            assert!((est.fy_n - truth.fy_n).abs() < 0.15, "{est:?} vs {truth:?}");
            assert!((est.fz_n - truth.fz_n).abs() < 0.05, "{est:?} vs {truth:?}");
        }
    }

    #[test]
    fn calibration_json_round_trip() {
        let calib = ForceCalibration {
            feature_names: FORCE_FEATURES.iter().map(|s| s.to_string()).collect(),
            coeffs: vec![vec![0.0; 8], vec![1.0; 8], vec![-0.5; 8]],
            lambda: 1e-6,
        };
        let json = calib.to_json().unwrap();
        let back = ForceCalibration::from_json(&json).unwrap();
        assert_eq!(back.coeffs, calib.coeffs);
    }

    #[test]
    fn contact_point_centered_flat_press() {
        let config = SensorConfig::default();
        // flat-faced cylinder: uniform depth under the face, so the peak
        // dz equals the commanded press depth
        let shape = IndenterShape::with_params(3, vec![4.0]);
        let (_, field, _) = contact_solve(&shape, &Pose6::press(0.0, 0.0, 0.8, 0.0), 0.0, &config).unwrap();
        let (px, py, pz) = classical_contact_point(&field).unwrap();
        assert!(px.abs() < 0.1 && py.abs() < 0.1, "({px}, {py})");
        assert!((pz - 0.8).abs() < 0.05, "depth {pz}");
    }

    #[test]
    fn contact_point_requires_contact() {
        let config = SensorConfig::default();
        let field = MarkerField::rest(&config);
        assert!(matches!(classical_contact_point(&field), Err(Error::NoContact)));
    }
}

//! Quasi-static contact model: indenter heightmaps, membrane deformation,
//! pin-tip marker kinematics and the resulting contact wrench.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::SensorConfig;
use crate::error::{Error, Result};

/// Six-parameter contact pose.
///
/// `z_mm >= 0` is the press depth once in contact; tangential slide after
/// contact is given by the shear components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6 {
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
    pub theta_deg: f64,
    pub shear_dx_mm: f64,
    pub shear_dy_mm: f64,
}

impl Pose6 {
    pub fn press(x_mm: f64, y_mm: f64, z_mm: f64, theta_deg: f64) -> Self {
        Pose6 { x_mm, y_mm, z_mm, theta_deg, shear_dx_mm: 0.0, shear_dy_mm: 0.0 }
    }

    /// Benchmark sampling bounds: x,y in [-5,5] mm, z in [0,5] mm,
    /// theta in [-90,90] deg.
    pub fn validate_benchmark_range(&self) -> Result<()> {
        let checks = [
            ("x_mm", self.x_mm, -5.0, 5.0),
            ("y_mm", self.y_mm, -5.0, 5.0),
            ("z_mm", self.z_mm, 0.0, 5.0),
            ("theta_deg", self.theta_deg, -90.0, 90.0),
        ];
        for (name, value, lo, hi) in checks {
            if value < lo || value > hi {
                return Err(Error::PoseOutOfRange { name, value, lo, hi });
            }
        }
        Ok(())
    }
}

/// Procedural indenter: a shape id plus shape-specific dimensions in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndenterShape {
    pub shape_id: u32,
    pub params: Vec<f64>,
}

impl IndenterShape {
    pub fn new(shape_id: u32) -> Self {
        IndenterShape { shape_id, params: Vec::new() }
    }

    pub fn with_params(shape_id: u32, params: Vec<f64>) -> Self {
        IndenterShape { shape_id, params }
    }

    fn param(&self, i: usize, default: f64) -> f64 {
        self.params.get(i).copied().unwrap_or(default)
    }
}

/// Grating-board shape id for a ridge pitch index 0..6
/// (pitches 0/flat, 0.5, 1, 1.25, 1.5, 1.75, 2 mm).
pub const GRATING_BASE_ID: u32 = 101;
/// Straight-edge stimulus used by the pose benchmark.
pub const EDGE_ID: u32 = 30;
/// Flat 30x30 mm block carrying a draped texture (hardness/texture task).
pub const TEXTURE_BLOCK_ID: u32 = 200;

pub const GRATING_PITCHES_MM: [f64; 7] = [0.0, 0.5, 1.0, 1.25, 1.5, 1.75, 2.0];

/// Membrane deformation on the simulation grid.
#[derive(Debug, Clone)]
pub struct DeformationField {
    /// Indentation depth z(x,y) in mm, >= 0.
    pub depth: Array2<f64>,
    /// Tangential surface displacement in mm.
    pub lateral_u: Array2<f64>,
    pub lateral_v: Array2<f64>,
}

impl DeformationField {
    pub fn zeros(n: usize) -> Self {
        DeformationField {
            depth: Array2::zeros((n, n)),
            lateral_u: Array2::zeros((n, n)),
            lateral_v: Array2::zeros((n, n)),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        DeformationField {
            depth: &self.depth * c,
            lateral_u: &self.lateral_u * c,
            lateral_v: &self.lateral_v * c,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.depth.iter().all(|&v| v == 0.0)
            && self.lateral_u.iter().all(|&v| v == 0.0)
            && self.lateral_v.iter().all(|&v| v == 0.0)
    }
}

/// Per-marker rest positions and tip displacements: the tactile signal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkerField {
    /// Rest positions in mm, sensor frame.
    pub base_xy: Vec<(f64, f64)>,
    /// Tip displacements in mm.
    pub disp_xy: Vec<(f64, f64)>,
    /// Tip sink in mm.
    pub disp_z: Vec<f64>,
}

impl MarkerField {
    pub fn rest(config: &SensorConfig) -> Self {
        let base_xy = config.marker_rest_positions();
        let n = base_xy.len();
        MarkerField { base_xy, disp_xy: vec![(0.0, 0.0); n], disp_z: vec![0.0; n] }
    }

    pub fn is_zero(&self) -> bool {
        self.disp_xy.iter().all(|&(x, y)| x == 0.0 && y == 0.0)
            && self.disp_z.iter().all(|&z| z == 0.0)
    }
}

/// Contact force; fz <= 0 for compression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub fx_n: f64,
    pub fy_n: f64,
    pub fz_n: f64,
}

impl Wrench {
    pub const ZERO: Wrench = Wrench { fx_n: 0.0, fy_n: 0.0, fz_n: 0.0 };
}

/// Height of the indenter surface above its lowest point at local (x, y),
/// or +inf where there is no material. Closed-form per shape id.
pub(crate) fn surface_profile(shape: &IndenterShape, x: f64, y: f64) -> Result<f64> {
    const NONE: f64 = f64::INFINITY;
    let r = (x * x + y * y).sqrt();
    let h = match shape.shape_id {
        // 1: flat plate, side length p0 (default large enough to cover the patch)
        1 => {
            let half = shape.param(0, 40.0) / 2.0;
            if x.abs() <= half && y.abs() <= half { 0.0 } else { NONE }
        }
        // 2: sphere, radius p0
        2 => {
            let rad = shape.param(0, 5.0);
            if r < rad { rad - (rad * rad - r * r).sqrt() } else { NONE }
        }
        // 3: cylinder pressed on its flat face, radius p0
        3 => {
            let rad = shape.param(0, 4.0);
            if r <= rad { 0.0 } else { NONE }
        }
        // 4: cuboid face, p0 x p1
        4 => {
            let (a, b) = (shape.param(0, 8.0) / 2.0, shape.param(1, 5.0) / 2.0);
            if x.abs() <= a && y.abs() <= b { 0.0 } else { NONE }
        }
        // 5: cone, apex down, base radius p0, height p1
        5 => {
            let (rad, hgt) = (shape.param(0, 5.0), shape.param(1, 5.0));
            if r < rad { hgt * r / rad } else { NONE }
        }
        // 6: square pyramid, apex down, base half-side p0, height p1
        6 => {
            let (half, hgt) = (shape.param(0, 4.0), shape.param(1, 5.0));
            let m = x.abs().max(y.abs());
            if m < half { hgt * m / half } else { NONE }
        }
        // 7: hexagonal prism face, circumradius p0
        7 => {
            if hex_contains(x, y, shape.param(0, 4.5)) { 0.0 } else { NONE }
        }
        // 8: triangular prism pressed on an edge (wedge), half-width p0, height p1
        8 => {
            let (half, hgt) = (shape.param(0, 4.0), shape.param(1, 4.0));
            if x.abs() < half && y.abs() <= 6.0 { hgt * x.abs() / half } else { NONE }
        }
        // 9: annulus face, outer p0, inner p1
        9 => {
            let (ro, ri) = (shape.param(0, 5.0), shape.param(1, 3.0));
            if r <= ro && r >= ri { 0.0 } else { NONE }
        }
        // 10: cross, arm half-width p0, arm half-length p1
        10 => {
            let (w, l) = (shape.param(0, 1.5), shape.param(1, 5.5));
            let in_h = x.abs() <= l && y.abs() <= w;
            let in_v = x.abs() <= w && y.abs() <= l;
            if in_h || in_v { 0.0 } else { NONE }
        }
        // 11: five-point star, outer radius p0
        11 => {
            if star_contains(x, y, shape.param(0, 5.5)) { 0.0 } else { NONE }
        }
        // 12: ellipsoid tip, semi-axes p0, p1, p2
        12 => {
            let (a, b, c) = (shape.param(0, 6.0), shape.param(1, 4.0), shape.param(2, 5.0));
            let q = (x / a).powi(2) + (y / b).powi(2);
            if q < 1.0 { c * (1.0 - (1.0 - q).sqrt()) } else { NONE }
        }
        // 13: shallow dome (large-radius spherical cap), radius p0
        13 => {
            let rad = shape.param(0, 14.0);
            if r < rad { rad - (rad * rad - r * r).sqrt() } else { NONE }
        }
        // 14: side-lying cylinder (line contact along y), radius p0
        14 => {
            let rad = shape.param(0, 5.0);
            if x.abs() < rad && y.abs() <= 7.0 {
                rad - (rad * rad - x * x).sqrt()
            } else {
                NONE
            }
        }
        // 15: L-shaped face, leg length p0, leg width p1
        15 => {
            let (l, w) = (shape.param(0, 7.0), shape.param(1, 2.5));
            let in_v = x >= -l / 2.0 && x <= -l / 2.0 + w && y.abs() <= l / 2.0;
            let in_h = x >= -l / 2.0 && x <= l / 2.0 && y >= -l / 2.0 && y <= -l / 2.0 + w;
            if in_v || in_h { 0.0 } else { NONE }
        }
        // 16: T-shaped face, bar length p0, width p1
        16 => {
            let (l, w) = (shape.param(0, 8.0), shape.param(1, 2.5));
            let in_top = x.abs() <= l / 2.0 && y >= l / 2.0 - w && y <= l / 2.0;
            let in_stem = x.abs() <= w / 2.0 && y >= -l / 2.0 && y <= l / 2.0 - w;
            if in_top || in_stem { 0.0 } else { NONE }
        }
        // 17: slotted plate, plate half-side p0, slot half-width p1
        17 => {
            let (half, slot) = (shape.param(0, 5.0), shape.param(1, 1.2));
            if x.abs() <= half && y.abs() <= half && x.abs() > slot { 0.0 } else { NONE }
        }
        // 18/19: the near-alike pair, a square face and a hexagon of equal area
        18 => {
            let half = shape.param(0, 3.6);
            if x.abs() <= half && y.abs() <= half { 0.0 } else { NONE }
        }
        19 => {
            // circumradius chosen so hexagon area matches the id-18 square
            let half = shape.param(0, 3.6);
            let rad = (2.0 * (2.0 * half) * (2.0 * half) / (3.0 * 3.0f64.sqrt())).sqrt();
            if hex_contains(x, y, rad) { 0.0 } else { NONE }
        }
        // 20: 3x3 dot array, dot radius p0, spacing p1 (spherical tips)
        20 => {
            let (rad, sp) = (shape.param(0, 1.2), shape.param(1, 4.0));
            let gx = (x / sp).round().clamp(-1.0, 1.0);
            let gy = (y / sp).round().clamp(-1.0, 1.0);
            let (dx, dy) = (x - gx * sp, y - gy * sp);
            let rr = (dx * dx + dy * dy).sqrt();
            if rr < rad { rad - (rad * rad - rr * rr).sqrt() } else { NONE }
        }
        // 21: sinusoidal wave plate, amplitude p0, wavelength p1
        21 => {
            let (amp, lam) = (shape.param(0, 0.8), shape.param(1, 5.0));
            if x.abs() <= 8.0 && y.abs() <= 8.0 {
                amp * (1.0 - (std::f64::consts::TAU * x / lam).cos()) / 2.0
            } else {
                NONE
            }
        }
        // 30: straight edge; material where local x >= 0
        EDGE_ID => {
            if x >= 0.0 { 0.0 } else { NONE }
        }
        // 101..=107: grating boards, pitch from the pitch table, ridge height p0
        id @ GRATING_BASE_ID..=107 => {
            let pitch = GRATING_PITCHES_MM[(id - GRATING_BASE_ID) as usize];
            if pitch == 0.0 {
                0.0
            } else {
                let ridge_h = shape.param(0, 0.8);
                let phase = (x / pitch).rem_euclid(1.0);
                if phase < 0.5 { 0.0 } else { ridge_h }
            }
        }
        // 200: flat texture block, 30x30 mm
        TEXTURE_BLOCK_ID => {
            if x.abs() <= 15.0 && y.abs() <= 15.0 { 0.0 } else { NONE }
        }
        other => return Err(Error::UnregisteredShape(other)),
    };
    Ok(h)
}

fn hex_contains(x: f64, y: f64, circumradius: f64) -> bool {
    // flat-top hexagon: intersection of three slabs
    let a = circumradius * 3.0f64.sqrt() / 2.0;
    let q = (0.5 * x.abs() + 3.0f64.sqrt() / 2.0 * y.abs()) <= a;
    x.abs() <= circumradius * 0.999 && y.abs() <= a && q
}

fn star_contains(x: f64, y: f64, outer: f64) -> bool {
    let inner = outer * 0.45;
    let r = (x * x + y * y).sqrt();
    if r > outer {
        return false;
    }
    let ang = y.atan2(x);
    let sector = std::f64::consts::TAU / 5.0;
    let a = (ang.rem_euclid(sector) - sector / 2.0).abs() / (sector / 2.0);
    // boundary radius interpolates between an outer tip and an inner notch
    let boundary = outer * (1.0 - a) + inner * a;
    r <= boundary
}

/// Returns `true` if `shape_id` maps to a registered heightmap.
pub fn shape_registered(shape_id: u32) -> bool {
    surface_profile(&IndenterShape::new(shape_id), 0.0, 0.0).is_ok()
}

/// Penetration height h(x,y) >= 0 of the indenter below the undeformed skin
/// plane, for the given pose. The shape is rotated by `theta_deg` about the
/// press axis and offset by `(x_mm, y_mm)`.
pub fn shape_heightmap(
    shape: &IndenterShape,
    pose: &Pose6,
    config: &SensorConfig,
) -> Result<Array2<f64>> {
    config.validate()?;
    if !shape_registered(shape.shape_id) {
        return Err(Error::UnregisteredShape(shape.shape_id));
    }
    let n = config.grid_resolution;
    let cell = config.cell_mm();
    let half = config.patch_mm / 2.0;
    let theta = -pose.theta_deg.to_radians();
    let (s, c) = (theta.sin(), theta.cos());
    let mut grid = Array2::zeros((n, n));
    for iy in 0..n {
        // cell centers
        let wy = -half + (iy as f64 + 0.5) * cell;
        for ix in 0..n {
            let wx = -half + (ix as f64 + 0.5) * cell;
            // world -> shape local frame
            let dx = wx - pose.x_mm;
            let dy = wy - pose.y_mm;
            let lx = c * dx - s * dy;
            let ly = s * dx + c * dy;
            let surf = surface_profile(shape, lx, ly)?;
            let pen = pose.z_mm - surf;
            if pen > 0.0 {
                grid[[iy, ix]] = pen;
            }
        }
    }
    Ok(grid)
}

/// Normalized 1-D Gaussian kernel sampled at integer offsets.
fn gaussian_kernel(sigma_cells: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_cells).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma_cells * sigma_cells)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian smoothing with zero padding.
pub(crate) fn gaussian_smooth(grid: &Array2<f64>, sigma_cells: f64) -> Array2<f64> {
    if sigma_cells <= 0.0 {
        return grid.clone();
    }
    let k = gaussian_kernel(sigma_cells);
    let radius = k.len() / 2;
    let (rows, cols) = grid.dim();
    let mut tmp = Array2::zeros((rows, cols));
    for r in 0..rows {
        for cx in 0..cols {
            let mut acc = 0.0;
            for (i, &w) in k.iter().enumerate() {
                let j = cx as isize + i as isize - radius as isize;
                if j >= 0 && (j as usize) < cols {
                    acc += w * grid[[r, j as usize]];
                }
            }
            tmp[[r, cx]] = acc;
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for cx in 0..cols {
        for r in 0..rows {
            let mut acc = 0.0;
            for (i, &w) in k.iter().enumerate() {
                let j = r as isize + i as isize - radius as isize;
                if j >= 0 && (j as usize) < rows {
                    acc += w * tmp[[j as usize, cx]];
                }
            }
            out[[r, cx]] = acc;
        }
    }
    out
}

/// Elastic surrogate: smoothed, clamped penetration plus shear-driven
/// tangential displacement over the contact patch.
pub fn deform(penetration: &Array2<f64>, pose: &Pose6, config: &SensorConfig) -> DeformationField {
    let sigma_cells = config.elastic_spread_sigma_mm / config.cell_mm();
    let max_pen = penetration.iter().cloned().fold(0.0_f64, f64::max);
    let mut depth = gaussian_smooth(penetration, sigma_cells);
    depth.mapv_inplace(|v| v.min(max_pen).max(0.0));
    let indicator = penetration.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let spread = gaussian_smooth(&indicator, sigma_cells);
    let lateral_u = &spread * pose.shear_dx_mm;
    let lateral_v = &spread * pose.shear_dy_mm;
    DeformationField { depth, lateral_u, lateral_v }
}

fn bilinear(grid: &Array2<f64>, fx: f64, fy: f64) -> f64 {
    let (rows, cols) = grid.dim();
    if fx < 0.0 || fy < 0.0 || fx > (cols - 1) as f64 || fy > (rows - 1) as f64 {
        return 0.0;
    }
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(cols - 1);
    let y1 = (y0 + 1).min(rows - 1);
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    grid[[y0, x0]] * (1.0 - tx) * (1.0 - ty)
        + grid[[y0, x1]] * tx * (1.0 - ty)
        + grid[[y1, x0]] * (1.0 - tx) * ty
        + grid[[y1, x1]] * tx * ty
}

/// Gradient grids of `depth`, central differences inside and one-sided at
/// the boundary, in mm per mm.
fn depth_gradient(depth: &Array2<f64>, cell: f64) -> (Array2<f64>, Array2<f64>) {
    let (rows, cols) = depth.dim();
    let mut gx = Array2::zeros((rows, cols));
    let mut gy = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            gx[[r, c]] = match c {
                0 => (depth[[r, 1]] - depth[[r, 0]]) / cell,
                c if c == cols - 1 => (depth[[r, c]] - depth[[r, c - 1]]) / cell,
                c => (depth[[r, c + 1]] - depth[[r, c - 1]]) / (2.0 * cell),
            };
            gy[[r, c]] = match r {
                0 => (depth[[1, c]] - depth[[0, c]]) / cell,
                r if r == rows - 1 => (depth[[r, c]] - depth[[r - 1, c]]) / cell,
                r => (depth[[r + 1, c]] - depth[[r - 1, c]]) / (2.0 * cell),
            };
        }
    }
    (gx, gy)
}

/// Pin-tip marker kinematics: lateral tip motion is the amplified depth
/// gradient plus the local tangential displacement; tip sink equals depth.
pub fn pin_kinematics(def: &DeformationField, config: &SensorConfig) -> MarkerField {
    let cell = config.cell_mm();
    let half = config.patch_mm / 2.0;
    let (gx, gy) = depth_gradient(&def.depth, cell);
    let gain = config.tilt_amplification * config.pin_length_mm;
    let base_xy = config.marker_rest_positions();
    let mut disp_xy = Vec::with_capacity(base_xy.len());
    let mut disp_z = Vec::with_capacity(base_xy.len());
    for &(mx, my) in &base_xy {
        let fx = (mx + half) / cell - 0.5;
        let fy = (my + half) / cell - 0.5;
        let dzdx = bilinear(&gx, fx, fy);
        let dzdy = bilinear(&gy, fx, fy);
        let lu = bilinear(&def.lateral_u, fx, fy);
        let lv = bilinear(&def.lateral_v, fx, fy);
        disp_xy.push((-gain * dzdx + lu, -gain * dzdy + lv));
        disp_z.push(bilinear(&def.depth, fx, fy));
    }
    MarkerField { base_xy, disp_xy, disp_z }
}

/// Contact wrench: normal force from integrated depth, shear from the
/// integrated tangential displacement field.
pub fn contact_wrench(def: &DeformationField, config: &SensorConfig) -> Wrench {
    let area = config.cell_mm() * config.cell_mm();
    let fz = -config.stiffness_normal * def.depth.sum() * area;
    let fx = -config.stiffness_shear * def.lateral_u.sum() * area;
    let fy = -config.stiffness_shear * def.lateral_v.sum() * area;
    Wrench { fx_n: fx, fy_n: fy, fz_n: fz }
}

/// Full contact pipeline. A positive standoff means no contact: every field
/// is exactly zero.
pub fn contact_solve(
    shape: &IndenterShape,
    pose: &Pose6,
    standoff_mm: f64,
    config: &SensorConfig,
) -> Result<(DeformationField, MarkerField, Wrench)> {
    if standoff_mm > 0.0 || pose.z_mm <= 0.0 {
        let def = DeformationField::zeros(config.grid_resolution);
        return Ok((def, MarkerField::rest(config), Wrench::ZERO));
    }
    let pen = shape_heightmap(shape, pose, config)?;
    let def = deform(&pen, pose, config);
    let markers = pin_kinematics(&def, config);
    let wrench = contact_wrench(&def, config);
    Ok((def, markers, wrench))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SensorConfig {
        SensorConfig::default()
    }

    #[test]
    fn flat_plate_tangent_contact_is_zero() {
        let grid =
            shape_heightmap(&IndenterShape::new(1), &Pose6::press(0.0, 0.0, 0.0, 0.0), &cfg())
                .unwrap();
        assert!(grid.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sphere_press_matches_cap_geometry() {
        // sphere R=5 pressed 1 mm: contact radius sqrt(2*5*1 - 1) = 3 mm,
        // max penetration 1 mm at center
        let cfg = cfg();
        let shape = IndenterShape::with_params(2, vec![5.0]);
        let grid = shape_heightmap(&shape, &Pose6::press(0.0, 0.0, 1.0, 0.0), &cfg).unwrap();
        let cell = cfg.cell_mm();
        let half = cfg.patch_mm / 2.0;
        let expected_r = (2.0 * 5.0 * 1.0 - 1.0_f64).sqrt();
        let mut max_pen = 0.0_f64;
        let mut max_contact_r = 0.0_f64;
        for ((iy, ix), &v) in grid.indexed_iter() {
            let x = -half + (ix as f64 + 0.5) * cell;
            let y = -half + (iy as f64 + 0.5) * cell;
            max_pen = max_pen.max(v);
            if v > 0.0 {
                max_contact_r = max_contact_r.max((x * x + y * y).sqrt());
            }
        }
        // the sampling grid need not hit the sphere apex exactly; the worst
        // case offset is half a cell diagonal, costing ~r^2/(2R) penetration
        let apex_tol = 1.05 * (cell * cell / 2.0) / (2.0 * 5.0);
        assert!((max_pen - 1.0).abs() < apex_tol, "max pen {max_pen}");
        assert!((max_contact_r - expected_r).abs() < 2.0 * cell, "radius {max_contact_r}");
    }

    #[test]
    fn theta_mirror_symmetry() {
        let cfg = cfg();
        let shape = IndenterShape::with_params(4, vec![8.0, 5.0]);
        let a = shape_heightmap(&shape, &Pose6::press(0.0, 0.0, 1.0, 90.0), &cfg).unwrap();
        let b = shape_heightmap(&shape, &Pose6::press(0.0, 0.0, 1.0, -90.0), &cfg).unwrap();
        // a rectangle has 180-degree symmetry, so +-90 give the same grid
        for (va, vb) in a.iter().zip(b.iter()) {
            assert!((va - vb).abs() < 1e-12);
        }
    }

    #[test]
    fn theta_full_turn_identical() {
        let cfg = cfg();
        let shape = IndenterShape::with_params(6, vec![4.0, 5.0]);
        let a = shape_heightmap(&shape, &Pose6::press(1.0, -2.0, 1.5, 30.0), &cfg).unwrap();
        let b = shape_heightmap(&shape, &Pose6::press(1.0, -2.0, 1.5, 390.0), &cfg).unwrap();
        for (va, vb) in a.iter().zip(b.iter()) {
            assert!((va - vb).abs() < 1e-9);
        }
    }

    #[test]
    fn translation_equivariance_one_cell() {
        let cfg = cfg();
        let cell = cfg.cell_mm();
        let shape = IndenterShape::with_params(2, vec![5.0]);
        let a = shape_heightmap(&shape, &Pose6::press(0.0, 0.0, 1.0, 0.0), &cfg).unwrap();
        let b = shape_heightmap(&shape, &Pose6::press(cell, 0.0, 1.0, 0.0), &cfg).unwrap();
        let n = cfg.grid_resolution;
        for r in 0..n {
            for c in 0..n - 1 {
                assert!((a[[r, c]] - b[[r, c + 1]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unknown_shape_errors() {
        let err = shape_heightmap(&IndenterShape::new(999), &Pose6::press(0.0, 0.0, 1.0, 0.0), &cfg())
            .unwrap_err();
        assert!(matches!(err, Error::UnregisteredShape(999)));
    }

    #[test]
    fn zero_penetration_zero_deformation() {
        let cfg = cfg();
        let pen = Array2::zeros((cfg.grid_resolution, cfg.grid_resolution));
        let def = deform(&pen, &Pose6::press(0.0, 0.0, 0.0, 0.0), &cfg);
        assert!(def.is_zero());
    }

    #[test]
    fn impulse_matches_direct_convolution() {
        let cfg = cfg();
        let n = cfg.grid_resolution;
        let mut pen = Array2::zeros((n, n));
        pen[[n / 2, n / 2]] = 1.0;
        let def = deform(&pen, &Pose6::press(0.0, 0.0, 0.0, 0.0), &cfg);
        // direct-summation oracle for the 2-D kernel
        let sigma = cfg.elastic_spread_sigma_mm / cfg.cell_mm();
        let k = gaussian_kernel(sigma);
        let radius = k.len() / 2;
        for (i, &ki) in k.iter().enumerate() {
            for (j, &kj) in k.iter().enumerate() {
                let r = n / 2 + i - radius;
                let c = n / 2 + j - radius;
                let expect = (ki * kj).min(1.0);
                assert!(
                    (def.depth[[r, c]] - expect).abs() < 1e-12,
                    "at ({r},{c}): {} vs {expect}",
                    def.depth[[r, c]]
                );
            }
        }
    }

    #[test]
    fn lateral_scales_linearly_with_shear() {
        let cfg = cfg();
        let shape = IndenterShape::with_params(2, vec![5.0]);
        let mut pose = Pose6::press(0.0, 0.0, 1.0, 0.0);
        pose.shear_dx_mm = 0.5;
        let pen = shape_heightmap(&shape, &pose, &cfg).unwrap();
        let d1 = deform(&pen, &pose, &cfg);
        pose.shear_dx_mm = 1.0;
        let d2 = deform(&pen, &pose, &cfg);
        for (a, b) in d1.lateral_u.iter().zip(d2.lateral_u.iter()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_depth_markers_have_no_tilt() {
        let cfg = cfg();
        let n = cfg.grid_resolution;
        let def = DeformationField {
            depth: Array2::from_elem((n, n), 0.7),
            lateral_u: Array2::zeros((n, n)),
            lateral_v: Array2::zeros((n, n)),
        };
        let mk = pin_kinematics(&def, &cfg);
        for (&(dx, dy), &dz) in mk.disp_xy.iter().zip(mk.disp_z.iter()) {
            assert!(dx.abs() < 1e-12 && dy.abs() < 1e-12);
            assert!((dz - 0.7).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_ramp_gives_constant_tilt() {
        // depth = s*x with slope s: every interior marker moves by -A*L*s in x
        let mut cfg = cfg();
        cfg.tilt_amplification = 3.0;
        cfg.pin_length_mm = 2.0;
        let n = cfg.grid_resolution;
        let cell = cfg.cell_mm();
        let s = 0.05;
        let mut depth = Array2::zeros((n, n));
        for ((_, ix), v) in depth.indexed_iter_mut() {
            *v = s * (ix as f64 * cell);
        }
        let def = DeformationField {
            depth,
            lateral_u: Array2::zeros((n, n)),
            lateral_v: Array2::zeros((n, n)),
        };
        let mk = pin_kinematics(&def, &cfg);
        for &(dx, dy) in &mk.disp_xy {
            assert!((dx - (-6.0 * s)).abs() < 1e-9, "dx {dx}");
            assert!(dy.abs() < 1e-9);
        }
    }

    #[test]
    fn tilt_scales_with_amplification() {
        let cfg1 = cfg();
        let mut cfg2 = cfg();
        cfg2.tilt_amplification *= 2.0;
        let shape = IndenterShape::with_params(2, vec![5.0]);
        let pose = Pose6::press(1.0, 0.5, 1.0, 0.0);
        let pen = shape_heightmap(&shape, &pose, &cfg1).unwrap();
        let def = deform(&pen, &pose, &cfg1);
        let m1 = pin_kinematics(&def, &cfg1);
        let m2 = pin_kinematics(&def, &cfg2);
        for (a, b) in m1.disp_xy.iter().zip(m2.disp_xy.iter()) {
            assert!((2.0 * a.0 - b.0).abs() < 1e-12);
            assert!((2.0 * a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn wrench_closed_form_uniform_patch() {
        // uniform depth 1 mm over 100 mm^2 with k_n = 0.002 N/mm^3 -> fz = -0.2 N
        let mut cfg = cfg();
        cfg.stiffness_normal = 0.002;
        let n = cfg.grid_resolution;
        let cell = cfg.cell_mm();
        let cells = (100.0 / (cell * cell)).round() as usize;
        let side = (cells as f64).sqrt().round() as usize;
        let mut depth = Array2::zeros((n, n));
        for r in 0..side {
            for c in 0..side {
                depth[[r, c]] = 1.0;
            }
        }
        let area_mm2 = (side * side) as f64 * cell * cell;
        let def = DeformationField {
            depth,
            lateral_u: Array2::zeros((n, n)),
            lateral_v: Array2::zeros((n, n)),
        };
        let w = contact_wrench(&def, &cfg);
        let expect = -0.002 * area_mm2;
        assert!((w.fz_n - expect).abs() < 1e-12);
        assert_eq!(w.fx_n, 0.0);
        assert_eq!(w.fy_n, 0.0);
    }

    #[test]
    fn wrench_linear_in_deformation() {
        let cfg = cfg();
        let shape = IndenterShape::with_params(2, vec![5.0]);
        let mut pose = Pose6::press(0.5, -0.5, 1.2, 0.0);
        pose.shear_dx_mm = 0.4;
        pose.shear_dy_mm = -0.2;
        let pen = shape_heightmap(&shape, &pose, &cfg).unwrap();
        let def = deform(&pen, &pose, &cfg);
        let w1 = contact_wrench(&def, &cfg);
        let w2 = contact_wrench(&def.scaled(3.5), &cfg);
        for (a, b) in [(w1.fx_n, w2.fx_n), (w1.fy_n, w2.fy_n), (w1.fz_n, w2.fz_n)] {
            if a != 0.0 {
                assert!(((3.5 * a - b) / (3.5 * a)).abs() < 1e-12);
            } else {
                assert_eq!(b, 0.0);
            }
        }
    }

    #[test]
    fn standoff_yields_null_contact() {
        let cfg = cfg();
        let shape = IndenterShape::with_params(2, vec![5.0]);
        let (def, markers, wrench) =
            contact_solve(&shape, &Pose6::press(0.0, 0.0, 1.0, 0.0), 4.0, &cfg).unwrap();
        assert!(def.is_zero());
        assert!(markers.is_zero());
        assert_eq!(wrench, Wrench::ZERO);
    }

    #[test]
    fn benchmark_range_rejected_out_of_bounds() {
        assert!(Pose6::press(6.0, 0.0, 1.0, 0.0).validate_benchmark_range().is_err());
        assert!(Pose6::press(0.0, 0.0, -0.5, 0.0).validate_benchmark_range().is_err());
        assert!(Pose6::press(0.0, 0.0, 1.0, 120.0).validate_benchmark_range().is_err());
        assert!(Pose6::press(5.0, -5.0, 5.0, 90.0).validate_benchmark_range().is_ok());
    }

    #[test]
    fn all_catalog_shapes_render_contact() {
        let cfg = cfg();
        for id in (1..=21).chain([EDGE_ID, TEXTURE_BLOCK_ID]).chain(GRATING_BASE_ID..=107) {
            let shape = IndenterShape::new(id);
            let grid = shape_heightmap(&shape, &Pose6::press(0.5, 0.0, 1.5, 10.0), &cfg).unwrap();
            assert!(grid.iter().any(|&v| v > 0.0), "shape {id} makes no contact");
            assert!(grid.iter().all(|&v| v >= 0.0 && v.is_finite()));
        }
    }
}

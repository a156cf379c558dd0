//! Rasterizer for the three sensor styles plus proximity optics and
//! procedural scene textures.
//!
//! All rendering is a pure function of its inputs and the seeds carried by
//! the scene, so outputs are byte-identical across runs on one platform.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SensorConfig;
use crate::contact::{contact_solve, DeformationField, MarkerField};
use crate::data::ContactScenario;
use crate::error::{Error, Result};

/// Rendering style of a sensor image.
///
/// TacTip is opaque: white markers on black, no scene content. ViTac shows
/// the scene through the transparent skin with no markers. ViTacTip
/// composites black markers over the ViTac view. MarkerMask is an optional
/// binary style isolating the marker tips; it is not part of the standard
/// triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RenderStyle {
    ViTacTip,
    ViTac,
    TacTip,
    MarkerMask,
}

impl RenderStyle {
    pub fn name(&self) -> &'static str {
        match self {
            RenderStyle::ViTacTip => "vitactip",
            RenderStyle::ViTac => "vitac",
            RenderStyle::TacTip => "tactip",
            RenderStyle::MarkerMask => "markermask",
        }
    }

    pub fn from_name(name: &str) -> Result<RenderStyle> {
        match name {
            "vitactip" => Ok(RenderStyle::ViTacTip),
            "vitac" => Ok(RenderStyle::ViTac),
            "tactip" => Ok(RenderStyle::TacTip),
            "markermask" => Ok(RenderStyle::MarkerMask),
            other => Err(Error::InvalidConfig(format!("unknown render style {other}"))),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vitactip" => Ok(RenderStyle::ViTacTip),
            "vitac" => Ok(RenderStyle::ViTac),
            "tactip" => Ok(RenderStyle::TacTip),
            "markermask" => Ok(RenderStyle::MarkerMask),
            other => Err(Error::InvalidConfig(format!("unknown render style `{other}`"))),
        }
    }

    /// Styles that show scene content through the skin.
    pub fn sees_scene(&self) -> bool {
        matches!(self, RenderStyle::ViTacTip | RenderStyle::ViTac)
    }

    pub fn has_markers(&self) -> bool {
        !matches!(self, RenderStyle::ViTac)
    }
}

/// Procedural texture family; families double as the material taxonomy of
/// the hardness/material/texture benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TextureFamily {
    Stripes,
    Checks,
    NoiseOctaves,
    Blobs,
    Rings,
    /// Uniform gray; the featureless control surface.
    Flat,
}

impl TextureFamily {
    pub const MATERIALS: [TextureFamily; 5] = [
        TextureFamily::Stripes,
        TextureFamily::Checks,
        TextureFamily::NoiseOctaves,
        TextureFamily::Blobs,
        TextureFamily::Rings,
    ];
}

/// A texture family plus a variant index selecting deterministic parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TextureSpec {
    pub family: TextureFamily,
    pub variant: u32,
}

impl TextureSpec {
    pub fn flat() -> Self {
        TextureSpec { family: TextureFamily::Flat, variant: 0 }
    }
}

/// The target object as seen through the transparent skin: pixels over the
/// object are shaded by how close its surface sits to the skin plane.
#[derive(Debug, Clone)]
pub struct ObjectView {
    pub shape: crate::contact::IndenterShape,
    pub pose: crate::contact::Pose6,
}

/// Viewing scene: the texture draped on the target, the skin-to-target
/// standoff, and external-light parameters.
#[derive(Debug, Clone)]
pub struct Scene {
    pub texture: TextureSpec,
    /// Target geometry for contour shading; `None` renders texture only.
    pub object: Option<ObjectView>,
    pub standoff_mm: f64,
    /// External light level in [0, 2]; 0 disables external light.
    pub ambient: f64,
    pub light_seed: u64,
}

impl Scene {
    pub fn contact(texture: TextureSpec) -> Self {
        Scene { texture, object: None, standoff_mm: 0.0, ambient: 0.0, light_seed: 0 }
    }
}

/// 8-bit RGB raster tagged with its render style.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triplets, len = 3 * width * height.
    pub pixels: Vec<u8>,
    pub style: RenderStyle,
}

impl SensorImage {
    pub fn black(width: usize, height: usize, style: RenderStyle) -> Self {
        SensorImage { width, height, pixels: vec![0; 3 * width * height], style }
    }

    pub fn get(&self, x: usize, y: usize) -> (u8, u8, u8) {
        let i = 3 * (y * self.width + x);
        (self.pixels[i], self.pixels[i + 1], self.pixels[i + 2])
    }

    /// Luma on the 0..255 scale (0.299 R + 0.587 G + 0.114 B).
    pub fn to_gray(&self) -> Array2<f64> {
        let mut g = Array2::zeros((self.height, self.width));
        for y in 0..self.height {
            for x in 0..self.width {
                let (r, gc, b) = self.get(x, y);
                g[[y, x]] = 0.299 * r as f64 + 0.587 * gc as f64 + 0.114 * b as f64;
            }
        }
        g
    }

    pub fn mean_intensity(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Area-average downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> SensorImage {
        assert!(factor >= 1 && self.width % factor == 0 && self.height % factor == 0);
        let (w, h) = (self.width / factor, self.height / factor);
        let mut pixels = vec![0u8; 3 * w * h];
        let f2 = (factor * factor) as u32;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0u32; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let i = 3 * ((y * factor + dy) * self.width + x * factor + dx);
                        for c in 0..3 {
                            acc[c] += self.pixels[i + c] as u32;
                        }
                    }
                }
                let o = 3 * (y * w + x);
                for c in 0..3 {
                    pixels[o + c] = ((acc[c] + f2 / 2) / f2) as u8;
                }
            }
        }
        SensorImage { width: w, height: h, pixels, style: self.style }
    }

    /// Binary PPM bytes: "P6\n<w> <h>\n255\n" + RGB payload.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_ppm(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_ppm())?;
        Ok(())
    }

    pub fn from_ppm(bytes: &[u8], style: RenderStyle) -> Result<SensorImage> {
        let bad = |m: &str| Error::Dataset(format!("bad ppm: {m}"));
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 && pos < bytes.len() {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        if fields.len() != 4 || fields[0] != "P6" || fields[3] != "255" {
            return Err(bad("header"));
        }
        let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
        let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
        pos += 1; // single whitespace after maxval
        let need = 3 * width * height;
        if bytes.len() < pos + need {
            return Err(bad("truncated payload"));
        }
        Ok(SensorImage { width, height, pixels: bytes[pos..pos + need].to_vec(), style })
    }

    pub fn read_ppm(path: &std::path::Path, style: RenderStyle) -> Result<SensorImage> {
        SensorImage::from_ppm(&std::fs::read(path)?, style)
    }
}

/// Raster-side parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderParams {
    pub width: usize,
    pub height: usize,
    /// Marker disc radius in px at zero sink.
    pub marker_radius_px: f64,
    /// Half-brightness distance of the proximity falloff, mm.
    pub d0_mm: f64,
    /// Illumination reach; scenes further away render black.
    pub light_cutoff_mm: f64,
    /// Texture-warp gain: mm of sampling shift per unit depth gradient.
    pub warp_gain_mm: f64,
    /// Imprint shading gain per mm of depth.
    pub imprint_gain: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams {
            width: 256,
            height: 256,
            marker_radius_px: 4.0,
            d0_mm: 6.0,
            light_cutoff_mm: 20.0,
            warp_gain_mm: 1.5,
            imprint_gain: 0.35,
        }
    }
}

impl RenderParams {
    pub fn px_per_mm(&self, config: &SensorConfig) -> f64 {
        self.width as f64 / config.patch_mm
    }

    /// World mm -> continuous pixel coordinates.
    pub fn mm_to_px(&self, config: &SensorConfig, x_mm: f64, y_mm: f64) -> (f64, f64) {
        let s = self.px_per_mm(config);
        ((x_mm + config.patch_mm / 2.0) * s, (y_mm + config.patch_mm / 2.0) * s)
    }
}

/// Brightness of the internal light at target distance d (1 at contact,
/// zero beyond the cutoff).
fn proximity_intensity(d_mm: f64, params: &RenderParams) -> f64 {
    if d_mm >= params.light_cutoff_mm {
        return 0.0;
    }
    1.0 / (1.0 + (d_mm / params.d0_mm).powi(2))
}

/// Radially symmetric ring-light vignette in [0.55, 1].
fn vignette(xn: f64, yn: f64) -> f64 {
    let r = (xn * xn + yn * yn).sqrt().min(1.0);
    0.775 + 0.225 * (std::f64::consts::PI * r).cos()
}

/// Seeded external-light field: a low-frequency gradient whose direction
/// and strength come from the light seed, scaled by the ambient level.
struct AmbientField {
    ambient: f64,
    dir: (f64, f64),
    base: f64,
    slope: f64,
}

impl AmbientField {
    fn new(scene: &Scene) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.light_seed ^ 0x616d6269);
        let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let base = rng.gen_range(0.10..0.25);
        let slope = rng.gen_range(0.10..0.30);
        AmbientField { ambient: scene.ambient, dir: (ang.cos(), ang.sin()), base, slope }
    }

    /// Extra illumination at normalized coords in [-1, 1].
    fn at(&self, xn: f64, yn: f64) -> f64 {
        let t = (xn * self.dir.0 + yn * self.dir.1 + 1.0) / 2.0;
        self.ambient * (self.base + self.slope * t)
    }
}

fn lattice_sample(lattice: &[f64], cells: usize, x: f64, y: f64) -> f64 {
    let fx = x * (cells - 1) as f64;
    let fy = y * (cells - 1) as f64;
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(cells - 1);
    let y1 = (y0 + 1).min(cells - 1);
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let v00 = lattice[y0 * cells + x0];
    let v10 = lattice[y0 * cells + x1];
    let v01 = lattice[y1 * cells + x0];
    let v11 = lattice[y1 * cells + x1];
    v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty
}

fn make_lattice(seed: u64, cells: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cells * cells).map(|_| rng.gen_range(0.0..1.0)).collect()
}

/// Texture evaluator with precomputed per-variant parameters.
///
/// Luminance stays above ~90/255 so dark pin markers remain separable from
/// scene content.
pub struct TextureSampler {
    family: TextureFamily,
    c_hi: [f64; 3],
    c_lo: [f64; 3],
    freq: f64,
    angle: (f64, f64),
    center: (f64, f64),
    cut: f64,
    octaves: Vec<(Vec<f64>, usize)>,
}

impl TextureSampler {
    pub fn new(spec: &TextureSpec) -> Self {
        let seed = (spec.variant as u64) ^ ((spec.family as u64) << 32) ^ 0x74657874;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c_hi = [
            rng.gen_range(200.0..255.0),
            rng.gen_range(200.0..255.0),
            rng.gen_range(200.0..255.0),
        ];
        let c_lo = [
            rng.gen_range(95.0..150.0),
            rng.gen_range(95.0..150.0),
            rng.gen_range(95.0..150.0),
        ];
        let freq = match spec.family {
            TextureFamily::Stripes => rng.gen_range(4.0..9.0_f64).round(),
            TextureFamily::Checks => rng.gen_range(3.0..7.0_f64).round(),
            TextureFamily::Rings => rng.gen_range(4.0..8.0_f64).round(),
            _ => 1.0,
        };
        let ang: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let center = (rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7));
        let cut = rng.gen_range(0.45..0.6);
        let octaves = match spec.family {
            TextureFamily::NoiseOctaves => vec![
                (make_lattice(seed.wrapping_add(1), 5), 5),
                (make_lattice(seed.wrapping_add(2), 11), 11),
                (make_lattice(seed.wrapping_add(3), 23), 23),
            ],
            TextureFamily::Blobs => vec![(make_lattice(seed.wrapping_add(7), 9), 9)],
            _ => Vec::new(),
        };
        TextureSampler {
            family: spec.family,
            c_hi,
            c_lo,
            freq,
            angle: (ang.cos(), ang.sin()),
            center,
            cut,
            octaves,
        }
    }

    /// Color at normalized coordinates u, v in [0, 1) (tiles outside).
    pub fn color(&self, u: f64, v: f64) -> (u8, u8, u8) {
        let (u, v) = (u.rem_euclid(1.0), v.rem_euclid(1.0));
        let t = match self.family {
            TextureFamily::Flat => 0.5,
            TextureFamily::Stripes => {
                let s = u * self.angle.0 + v * self.angle.1;
                if (s * self.freq).rem_euclid(1.0) < 0.5 { 0.0 } else { 1.0 }
            }
            TextureFamily::Checks => {
                let a = ((u * self.freq).floor() + (v * self.freq).floor()) as i64;
                if a % 2 == 0 { 0.0 } else { 1.0 }
            }
            TextureFamily::NoiseOctaves => {
                let w = [0.5, 0.33, 0.17];
                let mut acc = 0.0;
                for (i, (lat, cells)) in self.octaves.iter().enumerate() {
                    acc += w[i] * lattice_sample(lat, *cells, u, v);
                }
                acc.clamp(0.0, 1.0)
            }
            TextureFamily::Blobs => {
                let (lat, cells) = &self.octaves[0];
                if lattice_sample(lat, *cells, u, v) > self.cut { 0.0 } else { 1.0 }
            }
            TextureFamily::Rings => {
                let r = ((u - self.center.0).powi(2) + (v - self.center.1).powi(2)).sqrt();
                if (r * self.freq).rem_euclid(1.0) < 0.5 { 0.0 } else { 1.0 }
            }
        };
        let px = |c: usize| {
            (self.c_lo[c] * (1.0 - t) + self.c_hi[c] * t).round().clamp(0.0, 255.0) as u8
        };
        (px(0), px(1), px(2))
    }
}

/// One-off texture lookup; builds a sampler per call, prefer
/// [`TextureSampler`] in loops.
pub fn texture_color(spec: &TextureSpec, u: f64, v: f64) -> (u8, u8, u8) {
    TextureSampler::new(spec).color(u, v)
}

fn grid_bilinear(grid: &Array2<f64>, fx: f64, fy: f64) -> f64 {
    let (rows, cols) = grid.dim();
    if fx < 0.0 || fy < 0.0 || fx > (cols - 1) as f64 || fy > (rows - 1) as f64 {
        return 0.0;
    }
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(cols - 1);
    let y1 = (y0 + 1).min(rows - 1);
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    grid[[y0, x0]] * (1.0 - tx) * (1.0 - ty)
        + grid[[y0, x1]] * tx * (1.0 - ty)
        + grid[[y1, x0]] * (1.0 - tx) * ty
        + grid[[y1, x1]] * tx * ty
}

/// Marker tip positions in pixel coordinates for a marker field; the
/// ground truth used by the detection oracles.
pub fn marker_pixel_positions(
    markers: &MarkerField,
    config: &SensorConfig,
    params: &RenderParams,
) -> Vec<(f64, f64)> {
    markers
        .base_xy
        .iter()
        .zip(&markers.disp_xy)
        .map(|(&(bx, by), &(dx, dy))| params.mm_to_px(config, bx + dx, by + dy))
        .collect()
}

/// Per-marker disc radii in px; discs shrink as tips sink.
pub fn marker_pixel_radii(markers: &MarkerField, params: &RenderParams) -> Vec<f64> {
    markers.disp_z.iter().map(|&dz| params.marker_radius_px / (1.0 + 0.12 * dz)).collect()
}

fn draw_discs(
    img: &mut [f64],
    width: usize,
    height: usize,
    centers: &[(f64, f64)],
    radii: &[f64],
    color: [f64; 3],
    antialias: bool,
) {
    for (&(cx, cy), &rad) in centers.iter().zip(radii) {
        let x0 = ((cx - rad - 1.0).floor().max(0.0)) as usize;
        let x1 = ((cx + rad + 1.0).ceil().min(width as f64 - 1.0)) as usize;
        let y0 = ((cy - rad - 1.0).floor().max(0.0)) as usize;
        let y1 = ((cy + rad + 1.0).ceil().min(height as f64 - 1.0)) as usize;
        if x0 > x1 || y0 > y1 || cx < -rad || cy < -rad {
            continue;
        }
        for py in y0..=y1 {
            for px in x0..=x1 {
                let d = ((px as f64 + 0.5 - cx).powi(2) + (py as f64 + 0.5 - cy).powi(2)).sqrt();
                let alpha = if antialias {
                    (rad - d + 0.5).clamp(0.0, 1.0)
                } else if d <= rad {
                    1.0
                } else {
                    0.0
                };
                if alpha > 0.0 {
                    let i = 3 * (py * width + px);
                    for c in 0..3 {
                        img[i + c] = img[i + c] * (1.0 - alpha) + color[c] * alpha;
                    }
                }
            }
        }
    }
}

fn quantize(buf: &[f64], width: usize, height: usize, style: RenderStyle) -> SensorImage {
    let pixels = buf.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    SensorImage { width, height, pixels, style }
}

/// Separable Gaussian blur of a float RGB buffer.
fn blur_rgb(buf: &mut Vec<f64>, width: usize, height: usize, sigma_px: f64) {
    if sigma_px < 0.15 {
        return;
    }
    let radius = (3.0 * sigma_px).ceil() as isize;
    let mut k = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        k.push((-(i * i) as f64 / (2.0 * sigma_px * sigma_px)).exp());
    }
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    let mut tmp = vec![0.0; buf.len()];
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut acc = [0.0; 3];
            for (i, &w) in k.iter().enumerate() {
                let sx = (x + i as isize - radius).clamp(0, width as isize - 1);
                let idx = 3 * (y as usize * width + sx as usize);
                for c in 0..3 {
                    acc[c] += w * buf[idx + c];
                }
            }
            let o = 3 * (y as usize * width + x as usize);
            tmp[o..o + 3].copy_from_slice(&acc);
        }
    }
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut acc = [0.0; 3];
            for (i, &w) in k.iter().enumerate() {
                let sy = (y + i as isize - radius).clamp(0, height as isize - 1);
                let idx = 3 * (sy as usize * width + x as usize);
                for c in 0..3 {
                    acc[c] += w * tmp[idx + c];
                }
            }
            let o = 3 * (y as usize * width + x as usize);
            for c in 0..3 {
                buf[o + c] = acc[c];
            }
        }
    }
}

/// Scene pass shared by contact and proximity rendering: warped, shaded
/// texture under the internal ring light plus external ambient light.
fn scene_pass(
    def: Option<&DeformationField>,
    scene: &Scene,
    config: &SensorConfig,
    params: &RenderParams,
) -> Vec<f64> {
    let (w, h) = (params.width, params.height);
    let mut buf = vec![0.0f64; 3 * w * h];
    let sampler = TextureSampler::new(&scene.texture);
    let ambient = AmbientField::new(scene);
    let intensity = proximity_intensity(scene.standoff_mm, params);
    let half = config.patch_mm / 2.0;
    let cell = config.cell_mm();
    let mm_per_px = config.patch_mm / w as f64;
    // grid gradients for the refraction-style warp
    let grads = def.map(|d| {
        let mut gx = Array2::zeros(d.depth.dim());
        let mut gy = Array2::zeros(d.depth.dim());
        let (rows, cols) = d.depth.dim();
        for r in 1..rows - 1 {
            for c in 1..cols - 1 {
                gx[[r, c]] = (d.depth[[r, c + 1]] - d.depth[[r, c - 1]]) / (2.0 * cell);
                gy[[r, c]] = (d.depth[[r + 1, c]] - d.depth[[r - 1, c]]) / (2.0 * cell);
            }
        }
        (gx, gy)
    });
    for py in 0..h {
        let y_mm = -half + (py as f64 + 0.5) * mm_per_px;
        for px in 0..w {
            let x_mm = -half + (px as f64 + 0.5) * mm_per_px;
            let (xn, yn) = (x_mm / half, y_mm / half);
            let mut sample = (x_mm, y_mm);
            let mut imprint = 1.0;
            if let Some(d) = def {
                let fx = (x_mm + half) / cell - 0.5;
                let fy = (y_mm + half) / cell - 0.5;
                let (gx, gy) = grads.as_ref().unwrap();
                let depth = grid_bilinear(&d.depth, fx, fy);
                sample.0 -= params.warp_gain_mm * grid_bilinear(gx, fx, fy)
                    + grid_bilinear(&d.lateral_u, fx, fy);
                sample.1 -= params.warp_gain_mm * grid_bilinear(gy, fx, fy)
                    + grid_bilinear(&d.lateral_v, fx, fy);
                imprint += params.imprint_gain * depth;
            }
            let (r, g, b) = sampler.color(
                (sample.0 + half) / config.patch_mm,
                (sample.1 + half) / config.patch_mm,
            );
            // contour shading: parts of the target close to the skin plane
            // appear bright, receding surfaces dim, empty space darker still
            let mut obj_factor = 1.0;
            if let Some(view) = &scene.object {
                let th = -view.pose.theta_deg.to_radians();
                let (st, ct) = (th.sin(), th.cos());
                let dx = sample.0 - view.pose.x_mm;
                let dy = sample.1 - view.pose.y_mm;
                let surf = crate::contact::surface_profile(
                    &view.shape,
                    ct * dx - st * dy,
                    st * dx + ct * dy,
                )
                .unwrap_or(f64::INFINITY);
                let shade = if surf.is_finite() {
                    let dist = (surf - view.pose.z_mm + scene.standoff_mm).max(0.0);
                    1.0 / (1.0 + 0.35 * dist)
                } else {
                    0.0
                };
                obj_factor = 0.15 + 0.85 * shade;
            }
            let lum =
                (vignette(xn, yn) * intensity * imprint * obj_factor + ambient.at(xn, yn)).max(0.0);
            let i = 3 * (py * w + px);
            buf[i] = r as f64 * lum;
            buf[i + 1] = g as f64 * lum;
            buf[i + 2] = b as f64 * lum;
        }
    }
    // proximity defocus
    let sigma = (0.5 * scene.standoff_mm).min(8.0) * (w as f64 / 256.0);
    if scene.standoff_mm > 0.0 {
        blur_rgb(&mut buf, w, h, sigma);
    }
    buf
}

/// Composite a contact-state sensor image for one style.
pub fn render(
    markers: &MarkerField,
    def: &DeformationField,
    scene: &Scene,
    style: RenderStyle,
    config: &SensorConfig,
    params: &RenderParams,
) -> SensorImage {
    let (w, h) = (params.width, params.height);
    let mut buf = if style.sees_scene() {
        scene_pass(Some(def), scene, config, params)
    } else {
        vec![0.0; 3 * w * h]
    };
    if style.has_markers() {
        let centers = marker_pixel_positions(markers, config, params);
        let radii = marker_pixel_radii(markers, params);
        let (color, aa) = match style {
            RenderStyle::ViTacTip => ([0.0, 0.0, 0.0], true),
            RenderStyle::TacTip => ([255.0, 255.0, 255.0], true),
            RenderStyle::MarkerMask => ([255.0, 255.0, 255.0], false),
            RenderStyle::ViTac => unreachable!(),
        };
        draw_discs(&mut buf, w, h, &centers, &radii, color, aa);
    }
    quantize(&buf, w, h, style)
}

/// Render a frame at positive standoff: markers at rest, scene defocused
/// and dimmed by distance.
pub fn render_proximity(
    scene: &Scene,
    style: RenderStyle,
    config: &SensorConfig,
    params: &RenderParams,
) -> SensorImage {
    debug_assert!(scene.standoff_mm > 0.0);
    let rest = MarkerField::rest(config);
    let def = DeformationField::zeros(config.grid_resolution);
    render(&rest, &def, scene, style, config, params)
}

/// Render the identical scenario in all three standard styles.
///
/// Deterministic given (scenario, config, params); the three images are
/// pixel-aligned by construction.
pub fn render_triplet(
    scenario: &ContactScenario,
    config: &SensorConfig,
    params: &RenderParams,
) -> Result<(SensorImage, SensorImage, SensorImage)> {
    let (def, markers, _) =
        contact_solve(&scenario.shape, &scenario.pose, scenario.standoff_mm, config)?;
    let scene = scenario.scene();
    let a = render(&markers, &def, &scene, RenderStyle::ViTacTip, config, params);
    let b = render(&markers, &def, &scene, RenderStyle::ViTac, config, params);
    let c = render(&markers, &def, &scene, RenderStyle::TacTip, config, params);
    Ok((a, b, c))
}

/// Render a scenario in one style.
pub fn render_scenario(
    scenario: &ContactScenario,
    style: RenderStyle,
    config: &SensorConfig,
    params: &RenderParams,
) -> Result<SensorImage> {
    let (def, markers, _) =
        contact_solve(&scenario.shape, &scenario.pose, scenario.standoff_mm, config)?;
    Ok(render(&markers, &def, &scenario.scene(), style, config, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{IndenterShape, Pose6};

    fn setup(texture: TextureSpec) -> (SensorConfig, RenderParams, MarkerField, DeformationField, Scene) {
        let config = SensorConfig::default();
        let params = RenderParams::default();
        let markers = MarkerField::rest(&config);
        let def = DeformationField::zeros(config.grid_resolution);
        let scene = Scene::contact(texture);
        (config, params, markers, def, scene)
    }

    #[test]
    fn far_dark_scene_is_near_black() {
        let (config, params, ..) = setup(TextureSpec { family: TextureFamily::Checks, variant: 3 });
        let scene = Scene {
            texture: TextureSpec { family: TextureFamily::Checks, variant: 3 },
            object: None,
            standoff_mm: 25.0,
            ambient: 0.0,
            light_seed: 1,
        };
        for style in [RenderStyle::ViTacTip, RenderStyle::ViTac] {
            let img = render_proximity(&scene, style, &config, &params);
            assert!(img.mean_intensity() < 10.0, "mean {}", img.mean_intensity());
        }
    }

    #[test]
    fn tactip_invariant_to_texture_and_ambient() {
        let (config, params, markers, def, _) = setup(TextureSpec::flat());
        let mut s1 = Scene::contact(TextureSpec { family: TextureFamily::Stripes, variant: 0 });
        let mut s2 = Scene::contact(TextureSpec { family: TextureFamily::Blobs, variant: 9 });
        s1.ambient = 0.0;
        s2.ambient = 1.7;
        s2.light_seed = 99;
        let a = render(&markers, &def, &s1, RenderStyle::TacTip, &config, &params);
        let b = render(&markers, &def, &s2, RenderStyle::TacTip, &config, &params);
        assert_eq!(a.pixels, b.pixels);
    }

    #[test]
    fn vitactip_equals_vitac_off_markers() {
        let config = SensorConfig::default();
        let params = RenderParams::default();
        let shape = IndenterShape::with_params(2, vec![5.0]);
        let pose = Pose6::press(1.0, -1.0, 1.0, 0.0);
        let (def, markers, _) = crate::contact::contact_solve(&shape, &pose, 0.0, &config).unwrap();
        let scene = Scene::contact(TextureSpec { family: TextureFamily::Checks, variant: 1 });
        let a = render(&markers, &def, &scene, RenderStyle::ViTacTip, &config, &params);
        let b = render(&markers, &def, &scene, RenderStyle::ViTac, &config, &params);
        // pixels further than disc radius + AA margin from every marker center
        let centers = marker_pixel_positions(&markers, &config, &params);
        let margin = params.marker_radius_px + 2.0;
        let mut checked = 0usize;
        for y in 0..a.height {
            for x in 0..a.width {
                let clear = centers.iter().all(|&(cx, cy)| {
                    let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                    d2 > margin * margin
                });
                if clear {
                    assert_eq!(a.get(x, y), b.get(x, y), "at ({x},{y})");
                    checked += 1;
                }
            }
        }
        assert!(checked > 30_000);
    }

    #[test]
    fn proximity_limit_matches_contact_render() {
        let (config, params, markers, def, _) = setup(TextureSpec::flat());
        let texture = TextureSpec { family: TextureFamily::NoiseOctaves, variant: 2 };
        let contact = render(&markers, &def, &Scene::contact(texture), RenderStyle::ViTac, &config, &params);
        let mut near = Scene::contact(texture);
        near.standoff_mm = 1e-4;
        let prox = render_proximity(&near, RenderStyle::ViTac, &config, &params);
        for (a, b) in contact.pixels.iter().zip(prox.pixels.iter()) {
            assert!((*a as i16 - *b as i16).abs() < 2);
        }
    }

    #[test]
    fn triplet_is_deterministic() {
        let config = SensorConfig::default();
        let params = RenderParams::default();
        let scenario = ContactScenario::sample_press(42, 7, IndenterShape::with_params(2, vec![5.0]));
        let t1 = render_triplet(&scenario, &config, &params).unwrap();
        let t2 = render_triplet(&scenario, &config, &params).unwrap();
        assert_eq!(t1.0.pixels, t2.0.pixels);
        assert_eq!(t1.1.pixels, t2.1.pixels);
        assert_eq!(t1.2.pixels, t2.2.pixels);
    }

    #[test]
    fn ambient_changes_transparent_styles_only() {
        let config = SensorConfig::default();
        let params = RenderParams::default();
        let mut s1 = ContactScenario::sample_press(5, 3, IndenterShape::with_params(2, vec![5.0]));
        s1.ambient = 0.3;
        let mut s2 = s1.clone();
        s2.ambient = 1.5;
        s2.light_seed = s1.light_seed.wrapping_add(17);
        let t1 = render_triplet(&s1, &config, &params).unwrap();
        let t2 = render_triplet(&s2, &config, &params).unwrap();
        assert_ne!(t1.0.pixels, t2.0.pixels);
        assert_ne!(t1.1.pixels, t2.1.pixels);
        assert_eq!(t1.2.pixels, t2.2.pixels);
    }

    #[test]
    fn tactip_intensity_is_bimodal() {
        let config = SensorConfig::default();
        let params = RenderParams::default();
        let scenario = ContactScenario::sample_press(11, 1, IndenterShape::with_params(2, vec![5.0]));
        let (_, _, tac) = render_triplet(&scenario, &config, &params).unwrap();
        let gray = tac.to_gray();
        let mid = gray.iter().filter(|&&v| v > 25.0 && v < 230.0).count();
        let total = gray.len();
        // only anti-aliased disc rims may fall between the two clusters
        assert!((mid as f64) < 0.06 * total as f64, "mid fraction {}", mid as f64 / total as f64);
    }

    #[test]
    fn ppm_round_trip() {
        let (config, params, markers, def, scene) =
            setup(TextureSpec { family: TextureFamily::Rings, variant: 4 });
        let img = render(&markers, &def, &scene, RenderStyle::ViTacTip, &config, &params);
        let back = SensorImage::from_ppm(&img.to_ppm(), RenderStyle::ViTacTip).unwrap();
        assert_eq!(img, back);
    }
}

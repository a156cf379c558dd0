//! Dataset generation and persistence: contact scenarios, benchmark
//! protocols, JSONL manifests and PPM image trees. Every artifact byte is a
//! pure function of (root seed, config).

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SensorConfig;
use crate::contact::{IndenterShape, Pose6, EDGE_ID, GRATING_BASE_ID, TEXTURE_BLOCK_ID};
use crate::error::{Error, Result};
use crate::render::{
    render_scenario, ObjectView, RenderParams, RenderStyle, Scene, TextureFamily, TextureSpec,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// SplitMix64; used to derive independent per-item seeds from a root seed.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Seed for item `id` under `root`.
pub fn item_seed(root: u64, id: u64) -> u64 {
    splitmix64(root ^ splitmix64(id.wrapping_add(0x5eed)))
}

/// The single source of truth for one sample: indenter, pose, standoff and
/// lighting, plus the derived generation seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContactScenario {
    pub id: u64,
    pub shape: IndenterShape,
    pub pose: Pose6,
    pub standoff_mm: f64,
    pub ambient: f64,
    pub light_seed: u64,
    /// Style-independent generation seed, `item_seed(root, id)`.
    pub seed: u64,
    pub texture: TextureSpec,
}

impl ContactScenario {
    /// A generic randomized press, used by smoke tests and demos.
    pub fn sample_press(id: u64, root_seed: u64, shape: IndenterShape) -> Self {
        let seed = item_seed(root_seed, id);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = Pose6 {
            x_mm: rng.gen_range(-3.0..3.0),
            y_mm: rng.gen_range(-3.0..3.0),
            z_mm: rng.gen_range(0.5..1.5),
            theta_deg: rng.gen_range(-45.0..45.0),
            shear_dx_mm: 0.0,
            shear_dy_mm: 0.0,
        };
        let texture = TextureSpec {
            family: TextureFamily::MATERIALS[rng.gen_range(0..5)],
            variant: rng.gen_range(0..64),
        };
        ContactScenario {
            id,
            shape,
            pose,
            standoff_mm: 0.0,
            ambient: 0.5,
            light_seed: seed ^ 0x1a17,
            seed,
            texture,
        }
    }

    pub fn scene(&self) -> Scene {
        Scene {
            texture: self.texture,
            object: Some(ObjectView { shape: self.shape.clone(), pose: self.pose }),
            standoff_mm: self.standoff_mm,
            ambient: self.ambient,
            light_seed: self.light_seed,
        }
    }
}

/// Task-specific ground truth attached to a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    /// (X mm, Z mm, theta deg) for the pose benchmark.
    Pose(f64, f64, f64),
    /// Contact point (x mm, y mm, depth mm).
    Contact(f64, f64, f64),
    /// (fx, fy, fz) in newtons.
    Force(f64, f64, f64),
    /// (hardness class, material class, texture class).
    Hmt(usize, usize, usize),
    /// Standoff distance in mm for proximity sweeps.
    Distance(f64),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Exact split assignment for `n` items under integer `ratios`
/// (train:val:test); a seeded shuffle decides which items land where.
pub fn assign_splits(n: usize, ratios: (usize, usize, usize), seed: u64) -> Vec<Split> {
    let total = ratios.0 + ratios.1 + ratios.2;
    let n_train = n * ratios.0 / total;
    let n_val = n * ratios.1 / total;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5917);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let mut out = vec![Split::Test; n];
    for (k, &i) in idx.iter().enumerate() {
        out[i] = if k < n_train {
            Split::Train
        } else if k < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

/// Benchmark protocol selecting pose ranges, shapes, labels and splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    Object,
    Grating,
    Pose,
    Contact,
    Force,
    Multitask,
    Proximity,
    GanPairs,
}

impl Protocol {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "object" => Ok(Protocol::Object),
            "grating" => Ok(Protocol::Grating),
            "pose" => Ok(Protocol::Pose),
            "contact" => Ok(Protocol::Contact),
            "force" => Ok(Protocol::Force),
            "multitask" => Ok(Protocol::Multitask),
            "proximity" => Ok(Protocol::Proximity),
            "gan-pairs" | "ganpairs" => Ok(Protocol::GanPairs),
            other => Err(Error::InvalidConfig(format!("unknown protocol `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Object => "object",
            Protocol::Grating => "grating",
            Protocol::Pose => "pose",
            Protocol::Contact => "contact",
            Protocol::Force => "force",
            Protocol::Multitask => "multitask",
            Protocol::Proximity => "proximity",
            Protocol::GanPairs => "gan-pairs",
        }
    }

    /// train:val:test ratio used by the protocol.
    pub fn split_ratios(&self) -> (usize, usize, usize) {
        match self {
            Protocol::Object => (7, 2, 1),
            Protocol::Grating => (7, 2, 1),
            Protocol::Pose | Protocol::Contact => (8, 1, 1),
            Protocol::Force => (8, 0, 2),
            Protocol::Multitask => (5, 3, 2),
            Protocol::Proximity => (3, 0, 1),
            Protocol::GanPairs => (25, 1, 2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    Desk,
    Paper,
}

impl Scale {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::InvalidConfig(format!("unknown scale `{other}`"))),
        }
    }
}

/// Number of texture classes in the hardness/material/texture grid.
pub fn multitask_texture_count(scale: Scale) -> usize {
    match scale {
        Scale::Desk => 10,
        Scale::Paper => 50,
    }
}

/// Hardness presets: elastic spread and tilt gain for five elastomer
/// classes ordered soft to hard.
pub fn hardness_preset(class: usize, base: &SensorConfig) -> SensorConfig {
    let spreads = [1.9, 1.55, 1.2, 0.85, 0.55];
    let mut cfg = base.clone();
    cfg.elastic_spread_sigma_mm = spreads[class];
    cfg
}

fn pose_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x105e)
}

/// Distance schedule for one proximity sweep: 18 mm down to contact in
/// 0.25 mm steps.
pub fn proximity_schedule() -> Vec<f64> {
    let mut d = Vec::new();
    let mut v = 18.0;
    while v > 1e-9 {
        d.push(v);
        v -= 0.25;
    }
    d.push(0.0);
    d
}

/// All scenarios plus labels for one protocol at one scale.
///
/// Proximity returns one scenario per (trial, frame); the trial index is
/// `id / 1000`, the frame index `id % 1000`.
pub fn protocol_scenarios(
    protocol: Protocol,
    scale: Scale,
    root_seed: u64,
) -> Vec<(ContactScenario, Label)> {
    let mut out = Vec::new();
    let mut id: u64 = 0;
    let push = |out: &mut Vec<(ContactScenario, Label)>,
                    id: &mut u64,
                    shape: IndenterShape,
                    pose: Pose6,
                    standoff: f64,
                    ambient: f64,
                    texture: TextureSpec,
                    label: Label| {
        let seed = item_seed(root_seed, *id);
        out.push((
            ContactScenario {
                id: *id,
                shape,
                pose,
                standoff_mm: standoff,
                ambient,
                light_seed: seed ^ 0x1a17,
                seed,
                texture,
            },
            label,
        ));
        *id += 1;
    };
    match protocol {
        Protocol::Object => {
            let per_class = if scale == Scale::Desk { 50 } else { 500 };
            for class in 0..21usize {
                for _ in 0..per_class {
                    let seed = item_seed(root_seed, id);
                    let mut rng = pose_rng(seed);
                    let pose = Pose6::press(
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(0.4..1.4),
                        rng.gen_range(-90.0..90.0),
                    );
                    let texture =
                        TextureSpec { family: TextureFamily::Flat, variant: 0 };
                    push(
                        &mut out,
                        &mut id,
                        IndenterShape::new(class as u32 + 1),
                        pose,
                        0.0,
                        0.4,
                        texture,
                        Label::Class(class),
                    );
                }
            }
        }
        Protocol::Grating => {
            let per_class = if scale == Scale::Desk { 100 } else { 500 };
            for class in 0..7usize {
                for _ in 0..per_class {
                    let seed = item_seed(root_seed, id);
                    let mut rng = pose_rng(seed);
                    let pose = Pose6::press(
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(0.9..1.3),
                        rng.gen_range(-20.0..20.0),
                    );
                    push(
                        &mut out,
                        &mut id,
                        IndenterShape::new(GRATING_BASE_ID + class as u32),
                        pose,
                        0.0,
                        0.4,
                        TextureSpec::flat(),
                        Label::Class(class),
                    );
                }
            }
        }
        Protocol::Pose => {
            let n = if scale == Scale::Desk { 1000 } else { 3000 };
            for _ in 0..n {
                let seed = item_seed(root_seed, id);
                let mut rng = pose_rng(seed);
                let x = rng.gen_range(-5.0..5.0);
                let z = rng.gen_range(0.3..1.3);
                let theta = rng.gen_range(-45.0..45.0);
                let pose = Pose6::press(x, 0.0, z, theta);
                push(
                    &mut out,
                    &mut id,
                    IndenterShape::new(EDGE_ID),
                    pose,
                    0.0,
                    0.4,
                    TextureSpec::flat(),
                    Label::Pose(x, z, theta),
                );
            }
        }
        Protocol::Contact => {
            let n = if scale == Scale::Desk { 1000 } else { 3000 };
            for _ in 0..n {
                let seed = item_seed(root_seed, id);
                let mut rng = pose_rng(seed);
                let x = rng.gen_range(-4.0..4.0);
                let y = rng.gen_range(-4.0..4.0);
                let z = rng.gen_range(0.4..1.4);
                let pose = Pose6::press(x, y, z, 0.0);
                push(
                    &mut out,
                    &mut id,
                    IndenterShape::with_params(2, vec![4.0]),
                    pose,
                    0.0,
                    0.4,
                    TextureSpec::flat(),
                    Label::Contact(x, y, z),
                );
            }
        }
        Protocol::Force => {
            let n = 3000;
            for _ in 0..n {
                let seed = item_seed(root_seed, id);
                let mut rng = pose_rng(seed);
                let pose = Pose6 {
                    x_mm: rng.gen_range(-2.0..2.0),
                    y_mm: rng.gen_range(-2.0..2.0),
                    z_mm: rng.gen_range(0.3..1.5),
                    theta_deg: 0.0,
                    shear_dx_mm: rng.gen_range(-1.5..1.5),
                    shear_dy_mm: rng.gen_range(-1.5..1.5),
                };
                // label filled in by the generator after contact solve
                push(
                    &mut out,
                    &mut id,
                    IndenterShape::with_params(2, vec![5.0]),
                    pose,
                    0.0,
                    0.4,
                    TextureSpec::flat(),
                    Label::Force(0.0, 0.0, 0.0),
                );
            }
        }
        Protocol::Multitask => {
            let textures = multitask_texture_count(scale);
            let per_combo = 100;
            for hardness in 0..5usize {
                for tex in 0..textures {
                    let material = tex % 5;
                    let variant = (tex / 5) as u32;
                    for _ in 0..per_combo {
                        let seed = item_seed(root_seed, id);
                        let mut rng = pose_rng(seed);
                        let pose = Pose6::press(
                            rng.gen_range(-2.0..2.0),
                            rng.gen_range(-2.0..2.0),
                            rng.gen_range(0.5..1.2),
                            rng.gen_range(-30.0..30.0),
                        );
                        let texture = TextureSpec {
                            family: TextureFamily::MATERIALS[material],
                            variant,
                        };
                        push(
                            &mut out,
                            &mut id,
                            IndenterShape::new(TEXTURE_BLOCK_ID),
                            pose,
                            0.0,
                            0.4,
                            texture,
                            Label::Hmt(hardness, material, tex),
                        );
                    }
                }
            }
        }
        Protocol::Proximity => {
            // trials come in groups of five sharing one target texture: four
            // calibration sweeps and one held-out sweep per group; even
            // groups are textured, odd groups flat, so group 2g pairs with
            // group 2g+1 for the textured-vs-flat comparison
            let trials = if scale == Scale::Desk { 40 } else { 80 };
            let schedule = proximity_schedule();
            for trial in 0..trials as u64 {
                let group = trial / 5;
                let textured = group % 2 == 0;
                let tex_rng_seed = item_seed(root_seed, 0xfeed ^ group);
                let mut rng = ChaCha8Rng::seed_from_u64(tex_rng_seed);
                let texture = if textured {
                    TextureSpec {
                        family: TextureFamily::MATERIALS[rng.gen_range(0..5)],
                        variant: rng.gen_range(0..64),
                    }
                } else {
                    TextureSpec::flat()
                };
                for (frame, &d) in schedule.iter().enumerate() {
                    let sid = trial * 1000 + frame as u64;
                    let seed = item_seed(root_seed, sid);
                    let scenario = ContactScenario {
                        id: sid,
                        shape: IndenterShape::new(TEXTURE_BLOCK_ID),
                        pose: Pose6::press(0.0, 0.0, if d == 0.0 { 0.5 } else { 0.0 }, 0.0),
                        standoff_mm: d,
                        ambient: 0.15,
                        light_seed: item_seed(root_seed, 0xab ^ trial),
                        seed,
                        texture,
                    };
                    out.push((scenario, Label::Distance(d)));
                }
            }
        }
        Protocol::GanPairs => {
            let n = if scale == Scale::Desk { 560 } else { 1120 };
            let shapes: Vec<IndenterShape> = (1..=21).map(IndenterShape::new).collect();
            for _ in 0..n {
                let seed = item_seed(root_seed, id);
                let mut rng = pose_rng(seed);
                let shape = shapes[rng.gen_range(0..shapes.len())].clone();
                let pose = Pose6::press(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(0.4..1.4),
                    rng.gen_range(-90.0..90.0),
                );
                let texture = TextureSpec {
                    family: TextureFamily::MATERIALS[rng.gen_range(0..5)],
                    variant: rng.gen_range(0..64),
                };
                let ambient = rng.gen_range(0.2..0.9);
                push(&mut out, &mut id, shape, pose, 0.0, ambient, texture, Label::None);
            }
        }
    }
    out
}

/// FNV-1a over the serialized configuration; pins manifests to the exact
/// config that produced them.
pub fn config_hash(config: &SensorConfig, params: &RenderParams) -> u64 {
    let s = serde_json::to_string(config).unwrap() + &serde_json::to_string(params).unwrap();
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub root_seed: u64,
    pub config_hash: u64,
    pub tool_version: String,
    pub protocol: String,
    pub n_records: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: u64,
    pub image_path: String,
    pub style: String,
    pub split: Split,
    pub label: Label,
    pub pose: Pose6,
    pub distance_mm: f64,
    pub light_seed: u64,
    pub gen_seed: u64,
    /// For paired sets: path of the aligned target image.
    pub pair_path: Option<String>,
}

/// Newline-delimited JSON manifest: one header record then one record per
/// image.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, &self.header)?;
        f.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::BadManifest("empty manifest".into()))??;
        let header: ManifestHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::BadManifest(format!("header: {e}")))?;
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::BadManifest(format!("record: {e}")))?,
            );
        }
        Ok(Manifest { header, records })
    }

    /// Re-checks the manifest invariants: record count, unique ids per
    /// style, referenced files exist, config hash matches.
    pub fn verify(&self, base_dir: &Path, config: &SensorConfig, params: &RenderParams) -> Result<()> {
        if self.records.len() != self.header.n_records {
            return Err(Error::BadManifest(format!(
                "header claims {} records, found {}",
                self.header.n_records,
                self.records.len()
            )));
        }
        let expect_hash = config_hash(config, params);
        if self.header.config_hash != expect_hash {
            return Err(Error::BadManifest(format!(
                "config hash mismatch: manifest {}, regeneration {}",
                self.header.config_hash, expect_hash
            )));
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert((r.id, r.style.clone())) {
                return Err(Error::BadManifest(format!("duplicate id {} for style {}", r.id, r.style)));
            }
            let p = base_dir.join(&r.image_path);
            if !p.exists() {
                return Err(Error::BadManifest(format!("missing image {}", p.display())));
            }
        }
        Ok(())
    }

    /// No id may appear in two different splits.
    pub fn check_split_hygiene(&self) -> Result<()> {
        let mut by_id: std::collections::HashMap<u64, Split> = std::collections::HashMap::new();
        for r in &self.records {
            if let Some(prev) = by_id.insert(r.id, r.split) {
                if prev != r.split {
                    return Err(Error::Dataset(format!("id {} appears in two splits", r.id)));
                }
            }
        }
        Ok(())
    }
}

/// Render every scenario of a protocol to `out_dir` and write the manifest.
///
/// Returns the manifest. For most protocols one image per style in `styles`
/// is written; gan-pairs always writes the ViTacTip input plus ViTac and
/// TacTip targets.
pub fn generate(
    protocol: Protocol,
    scale: Scale,
    out_dir: &Path,
    root_seed: u64,
    styles: &[RenderStyle],
    config: &SensorConfig,
    params: &RenderParams,
) -> Result<Manifest> {
    let scenarios = protocol_scenarios(protocol, scale, root_seed);
    let n = scenarios.len();
    let splits: Vec<Split> = if protocol == Protocol::Proximity {
        // split by whole sweeps, not frames: the last trial of each
        // five-trial group is the held-out sweep
        scenarios
            .iter()
            .map(|(s, _)| if (s.id / 1000) % 5 == 4 { Split::Test } else { Split::Train })
            .collect()
    } else {
        assign_splits(n, protocol.split_ratios(), root_seed)
    };
    let dir = out_dir.join(protocol.name());
    let styles: Vec<RenderStyle> = if protocol == Protocol::GanPairs {
        vec![RenderStyle::ViTacTip, RenderStyle::ViTac, RenderStyle::TacTip]
    } else {
        styles.to_vec()
    };
    for style in &styles {
        std::fs::create_dir_all(dir.join(style.name()))?;
    }
    let mut records = Vec::new();
    for (i, (scenario, label)) in scenarios.iter().enumerate() {
        // hardness presets change the effective sensor config per sample
        let cfg = match label {
            Label::Hmt(h, _, _) => hardness_preset(*h, config),
            _ => config.clone(),
        };
        let label = match label {
            Label::Force(..) => {
                let (def, _, w) = crate::contact::contact_solve(
                    &scenario.shape,
                    &scenario.pose,
                    scenario.standoff_mm,
                    &cfg,
                )?;
                debug_assert!(!def.is_zero());
                Label::Force(w.fx_n, w.fy_n, w.fz_n)
            }
            other => other.clone(),
        };
        for style in &styles {
            let img = render_scenario(scenario, *style, &cfg, params)?;
            // relative to the manifest's own directory
            let rel = format!("{}/{:06}.ppm", style.name(), scenario.id);
            img.write_ppm(&dir.join(&rel))?;
            let pair_path = if protocol == Protocol::GanPairs && *style == RenderStyle::ViTacTip {
                None
            } else if protocol == Protocol::GanPairs {
                Some(format!("vitactip/{:06}.ppm", scenario.id))
            } else {
                None
            };
            records.push(ManifestRecord {
                id: scenario.id,
                image_path: rel,
                style: style.name().to_string(),
                split: splits[i],
                label: label.clone(),
                pose: scenario.pose,
                distance_mm: scenario.standoff_mm,
                light_seed: scenario.light_seed,
                gen_seed: scenario.seed,
                pair_path,
            });
        }
    }
    let manifest = Manifest {
        header: ManifestHeader {
            root_seed,
            config_hash: config_hash(config, params),
            tool_version: TOOL_VERSION.to_string(),
            protocol: protocol.name().to_string(),
            n_records: records.len(),
        },
        records,
    };
    manifest.write(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn item_seeds_are_distinct() {
        let mut seen = HashSet::new();
        for id in 0..10_000u64 {
            assert!(seen.insert(item_seed(7, id)));
        }
    }

    #[test]
    fn splits_are_exact_and_deterministic() {
        let s1 = assign_splits(1000, (8, 1, 1), 3);
        let s2 = assign_splits(1000, (8, 1, 1), 3);
        assert_eq!(s1, s2);
        let train = s1.iter().filter(|&&s| s == Split::Train).count();
        let val = s1.iter().filter(|&&s| s == Split::Val).count();
        let test = s1.iter().filter(|&&s| s == Split::Test).count();
        assert_eq!((train, val, test), (800, 100, 100));
    }

    #[test]
    fn multitask_material_is_texture_family() {
        let scenarios = protocol_scenarios(Protocol::Multitask, Scale::Desk, 1);
        assert_eq!(scenarios.len(), 5 * 10 * 100);
        for (_, label) in &scenarios {
            match label {
                Label::Hmt(h, m, t) => {
                    assert!(*h < 5 && *m < 5 && *t < 10);
                    assert_eq!(*m, *t % 5);
                }
                _ => panic!("wrong label"),
            }
        }
    }

    #[test]
    fn scenarios_are_reproducible() {
        let a = protocol_scenarios(Protocol::Grating, Scale::Desk, 42);
        let b = protocol_scenarios(Protocol::Grating, Scale::Desk, 42);
        assert_eq!(a.len(), 700);
        for ((sa, la), (sb, lb)) in a.iter().zip(b.iter()) {
            assert_eq!(sa.pose, sb.pose);
            assert_eq!(sa.seed, sb.seed);
            assert_eq!(la, lb);
        }
    }

    #[test]
    fn proximity_trials_pair_textured_and_flat() {
        let s = protocol_scenarios(Protocol::Proximity, Scale::Desk, 5);
        let schedule = proximity_schedule();
        assert_eq!(s.len(), 40 * schedule.len());
        let flat = s
            .iter()
            .filter(|(sc, _)| sc.texture.family == TextureFamily::Flat)
            .count();
        assert_eq!(flat, 20 * schedule.len());
        // all five trials of a group share one texture
        for g in 0..8u64 {
            let group: Vec<_> = s
                .iter()
                .filter(|(sc, _)| sc.id / 5000 == g)
                .map(|(sc, _)| sc.texture)
                .collect();
            assert!(group.windows(2).all(|w| w[0] == w[1]));
        }
        // frames descend from 18 mm to contact
        assert_eq!(s[0].1, Label::Distance(18.0));
        match s[schedule.len() - 1].1 {
            Label::Distance(d) => assert_eq!(d, 0.0),
            _ => panic!(),
        }
    }
}

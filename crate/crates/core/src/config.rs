use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry and material parameters of the simulated sensor.
///
/// Defaults model a dome with seven concentric marker rings (137 markers
/// total), a 0.8 mm skin and pin-tip markers whose lateral motion is the
/// skin-surface tilt amplified by the pin lever arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorConfig {
    /// Dome radius in mm; outermost marker ring sits at this radius.
    pub radius_mm: f64,
    pub ring_count: usize,
    pub ring_marker_counts: Vec<usize>,
    pub skin_thickness_mm: f64,
    pub pin_length_mm: f64,
    /// Dimensionless lever-arm gain applied to the depth gradient.
    pub tilt_amplification: f64,
    /// Spread of the elastic smoothing kernel in mm.
    pub elastic_spread_sigma_mm: f64,
    /// Normal stiffness, N per mm of depth per mm^2 of cell area.
    pub stiffness_normal: f64,
    /// Shear stiffness, N per mm of tangential displacement per mm^2.
    pub stiffness_shear: f64,
    /// Simulation grid cells per side.
    pub grid_resolution: usize,
    /// Physical side length of the simulated patch in mm.
    pub patch_mm: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            radius_mm: 9.0,
            ring_count: 7,
            ring_marker_counts: vec![8, 12, 16, 20, 24, 28, 29],
            skin_thickness_mm: 0.8,
            pin_length_mm: 2.0,
            tilt_amplification: 3.0,
            elastic_spread_sigma_mm: 0.4,
            stiffness_normal: 0.05,
            stiffness_shear: 0.01,
            grid_resolution: 128,
            patch_mm: 20.0,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ring_marker_counts.len() != self.ring_count {
            return Err(Error::InvalidConfig(format!(
                "ring_marker_counts has {} entries for ring_count {}",
                self.ring_marker_counts.len(),
                self.ring_count
            )));
        }
        let positive = [
            ("radius_mm", self.radius_mm),
            ("skin_thickness_mm", self.skin_thickness_mm),
            ("pin_length_mm", self.pin_length_mm),
            ("tilt_amplification", self.tilt_amplification),
            ("elastic_spread_sigma_mm", self.elastic_spread_sigma_mm),
            ("stiffness_normal", self.stiffness_normal),
            ("stiffness_shear", self.stiffness_shear),
            ("patch_mm", self.patch_mm),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.grid_resolution < 16 {
            return Err(Error::InvalidConfig(format!(
                "grid_resolution must be >= 16, got {}",
                self.grid_resolution
            )));
        }
        Ok(())
    }

    /// Total marker count across all rings (137 with defaults).
    pub fn marker_count(&self) -> usize {
        self.ring_marker_counts.iter().sum()
    }

    /// Physical size of one grid cell in mm.
    pub fn cell_mm(&self) -> f64 {
        self.patch_mm / self.grid_resolution as f64
    }

    /// Rest positions of all markers in the sensor frame (mm), ring by ring.
    ///
    /// Ring radii are evenly spaced out to `radius_mm`; alternate rings are
    /// staggered by half an angular step so markers do not line up radially.
    pub fn marker_rest_positions(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.marker_count());
        for (ring, &count) in self.ring_marker_counts.iter().enumerate() {
            let r = self.radius_mm * (ring + 1) as f64 / self.ring_count as f64;
            let step = std::f64::consts::TAU / count as f64;
            let phase = if ring % 2 == 1 { step / 2.0 } else { 0.0 };
            for k in 0..count {
                let a = phase + step * k as f64;
                out.push((r * a.cos(), r * a.sin()));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_marker_count_is_137() {
        let cfg = SensorConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.marker_count(), 137);
        assert_eq!(cfg.marker_rest_positions().len(), 137);
    }

    #[test]
    fn markers_stay_within_dome_radius() {
        let cfg = SensorConfig::default();
        for (x, y) in cfg.marker_rest_positions() {
            assert!((x * x + y * y).sqrt() <= cfg.radius_mm + 1e-9);
        }
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        let mut cfg = SensorConfig::default();
        cfg.skin_thickness_mm = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SensorConfig::default();
        cfg.ring_marker_counts.pop();
        assert!(cfg.validate().is_err());
    }
}

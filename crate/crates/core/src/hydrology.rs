//! Soil-water bookkeeping for a single irrigated tree or region.
//!
//! All water quantities are inches of water held in the root zone. Moisture
//! sensors report volumetric water content (VWC), and each sensor stands for
//! a horizontal slice of the root zone; multiplying the fraction by the slice
//! thickness and summing gives the stored water. The management band runs from
//! the management allowable depletion level (MAD) up to field capacity (FC).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slope of the sensor manufacturer's linear calibration (VWC per ADC count).
pub const CALIBRATION_SLOPE: f64 = 9.92e-4;
/// Offset of the linear calibration.
pub const CALIBRATION_OFFSET: f64 = -0.45;

/// Published depths are rounded (23.62 in vs 12 × 1.97 ft = 23.64 in), so the
/// feet/inches consistency check has to tolerate that rounding.
const DEPTH_UNIT_TOLERANCE: f64 = 0.05;
const SPAN_TOLERANCE: f64 = 1e-6;

/// Converts a raw sensor reading to a volumetric water content fraction,
/// clamped to `[0, 1]`.
pub fn calibrate_sensor(raw: f64) -> f64 {
    (CALIBRATION_SLOPE * raw + CALIBRATION_OFFSET).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoistureReading {
    pub raw: f64,
    pub vwc: f64,
    /// Thickness of the soil slice this sensor represents, inches.
    pub depth_span: f64,
}

impl MoistureReading {
    pub fn from_raw(raw: f64, depth_span: f64) -> Self {
        Self {
            raw,
            vwc: calibrate_sensor(raw),
            depth_span,
        }
    }

    /// Reading built from an already-calibrated fraction.
    pub fn from_vwc(vwc: f64, depth_span: f64) -> Self {
        let vwc = vwc.clamp(0.0, 1.0);
        Self {
            raw: (vwc - CALIBRATION_OFFSET) / CALIBRATION_SLOPE,
            vwc,
            depth_span,
        }
    }
}

/// Static soil and root-zone description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoilProfile {
    /// Available water capacity, inches of water per foot of root.
    pub sigma_awc: f64,
    /// Permanent wilting point as a moisture fraction.
    pub phi_pwp: f64,
    pub root_depth_feet: f64,
    pub root_depth_inches: f64,
    /// Depth span covered by each sensor, inches.
    pub sensor_depths: Vec<f64>,
    /// MAD fraction of the available water.
    pub alpha: f64,
}

impl Default for SoilProfile {
    /// Two-sensor almond testbed profile.
    fn default() -> Self {
        Self {
            sigma_awc: 2.4,
            phi_pwp: 0.10,
            root_depth_feet: 1.97,
            root_depth_inches: 23.62,
            sensor_depths: vec![11.81, 11.81],
            alpha: 0.5,
        }
    }
}

impl SoilProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProfile(msg));
        if !(self.sigma_awc > 0.0) {
            return bad(format!("sigma_awc must be positive, got {}", self.sigma_awc));
        }
        if !(self.phi_pwp > 0.0 && self.phi_pwp < 1.0) {
            return bad(format!("phi_pwp must be in (0, 1), got {}", self.phi_pwp));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must be in (0, 1], got {}", self.alpha));
        }
        if !(self.root_depth_feet > 0.0) {
            return bad(format!(
                "root depth must be positive, got {} ft",
                self.root_depth_feet
            ));
        }
        if (self.root_depth_inches - 12.0 * self.root_depth_feet).abs() > DEPTH_UNIT_TOLERANCE {
            return bad(format!(
                "root depth {} in is inconsistent with {} ft",
                self.root_depth_inches, self.root_depth_feet
            ));
        }
        if self.sensor_depths.is_empty() || self.sensor_depths.iter().any(|d| !(*d > 0.0)) {
            return bad("sensor depth spans must be non-empty and positive".into());
        }
        self.check_spans(self.sensor_depths.iter().sum())
    }

    fn check_spans(&self, total: f64) -> Result<()> {
        if (total - self.root_depth_inches).abs() > SPAN_TOLERANCE {
            return Err(Error::SensorLayout {
                expected: self.root_depth_inches,
                actual: total,
            });
        }
        Ok(())
    }

    /// Stored root-zone water (inches): Σ vwc_j × span_j.
    ///
    /// Fails when the readings' spans do not cover exactly the root depth.
    pub fn soil_water_content(&self, readings: &[MoistureReading]) -> Result<f64> {
        self.check_spans(readings.iter().map(|r| r.depth_span).sum())?;
        Ok(readings.iter().map(|r| r.vwc * r.depth_span).sum())
    }

    pub fn levels(&self) -> SoilLevels {
        derive_levels(self)
    }
}

/// Management levels of a profile, inches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoilLevels {
    pub v_pwp: f64,
    pub v_awc: f64,
    pub v_fc: f64,
    pub v_mad: f64,
}

impl SoilLevels {
    pub fn in_band(&self, v: f64) -> bool {
        v >= self.v_mad && v <= self.v_fc
    }
}

pub fn derive_levels(profile: &SoilProfile) -> SoilLevels {
    let v_pwp = profile.phi_pwp * profile.root_depth_inches;
    let v_awc = profile.sigma_awc * profile.root_depth_feet;
    SoilLevels {
        v_pwp,
        v_awc,
        v_fc: v_awc + v_pwp,
        v_mad: profile.alpha * v_awc + v_pwp,
    }
}

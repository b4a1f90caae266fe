use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Which transmit signal the SNR definition `||Hx||^2 / (B sigma^2)` refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrReference {
    /// Baseband-referred signal at the PA input, `F_RF P_in F_BB s`.
    PaInput,
    /// Radiated signal after the ideal linear PA.
    PaOutput,
}

/// Receiver noise level. Signal amplitudes are in sqrt(mW), so noise
/// variances are in mW.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Explicit noise PSD. When absent the PSD is calibrated so that the
    /// anchor transmit power produces the anchor SNR on the drawn link.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_psd_mw_per_hz: Option<f64>,
    pub anchor_power_dbm: f64,
    pub anchor_snr_db: f64,
    pub snr_reference: SnrReference,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            noise_psd_mw_per_hz: None,
            anchor_power_dbm: 5.0,
            anchor_snr_db: 7.95,
            snr_reference: SnrReference::PaInput,
        }
    }
}

/// Array sizes, RF chains, streams, powers and the master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub l_t: usize,
    pub l_r: usize,
    pub n_s: usize,
    /// Pilot / training block length `M`.
    pub pilot_len: usize,
    pub bandwidth_hz: f64,
    pub transmit_power_dbm: f64,
    pub pa_linear_gain_db: f64,
    pub phase_shifter_bits: u32,
    pub noise: NoiseConfig,
    pub rng_seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_t: 256,
            n_r: 256,
            l_t: 4,
            l_r: 4,
            n_s: 4,
            pilot_len: 8000,
            bandwidth_hz: 1e9,
            transmit_power_dbm: 15.0,
            pa_linear_gain_db: 13.0,
            phase_shifter_bits: 6,
            noise: NoiseConfig::default(),
            rng_seed: 20_240_601,
        }
    }
}

impl SystemConfig {
    /// Small link used by unit tests and smoke runs.
    pub fn toy(n_t: usize, rf_chains: usize) -> Self {
        Self {
            n_t,
            n_r: n_t,
            l_t: rf_chains,
            l_r: rf_chains,
            n_s: rf_chains,
            pilot_len: 1000,
            ..Self::default()
        }
    }

    /// Collects every violated constraint.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_s == 0 {
            v.push("n_s must be at least 1".to_string());
        }
        if !(self.n_s <= self.l_t && self.l_t < self.n_t) {
            v.push(format!(
                "need n_s <= l_t < n_t (n_s={}, l_t={}, n_t={})",
                self.n_s, self.l_t, self.n_t
            ));
        }
        if !(self.n_s <= self.l_r && self.l_r < self.n_r) {
            v.push(format!(
                "need n_s <= l_r < n_r (n_s={}, l_r={}, n_r={})",
                self.n_s, self.l_r, self.n_r
            ));
        }
        if self.pilot_len == 0 {
            v.push("pilot_len must be positive".to_string());
        }
        if !(self.bandwidth_hz > 0.0) {
            v.push("bandwidth_hz must be positive".to_string());
        }
        if !self.transmit_power_dbm.is_finite() {
            v.push("transmit_power_dbm must be finite".to_string());
        }
        if self.phase_shifter_bits == 0 || self.phase_shifter_bits > 24 {
            v.push("phase_shifter_bits must be in 1..=24".to_string());
        }
        if let Some(psd) = self.noise.noise_psd_mw_per_hz {
            if !(psd > 0.0) {
                v.push("noise.noise_psd_mw_per_hz must be positive".to_string());
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            invalid(v.join("; "))
        }
    }
}

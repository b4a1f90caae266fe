//! Experiment configuration file (TOML). Every key carries its unit.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thzcomp_core::chain::Scenario;
use thzcomp_core::channel::ChannelModel;
use thzcomp_core::config::SystemConfig;
use thzcomp_core::impairments::ImpairmentConfig;
use thzcomp_core::neural::{Init, TrainingConfig};
use thzcomp_core::stage1::SlimMode;

use crate::error::{ExpError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub powers_dbm: Vec<f64>,
    /// Scenario labels: ideal, dac_adc, iq, pn, shifters, pa, all.
    pub scenarios: Vec<String>,
    pub n_symbols: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            powers_dbm: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0],
            scenarios: Scenario::ALL.iter().map(|s| s.label().to_string()).collect(),
            n_symbols: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width of the surrogate's sub-networks.
    pub n_h: usize,
    /// Hidden width of the compensators' sub-networks.
    pub comp_n_h: usize,
    /// Training pairs per power.
    pub samples: usize,
    /// Held-out pairs for evaluation of the surrogate.
    pub holdout_samples: usize,
    pub stage1_init: Init,
    pub comp_init: Init,
    /// NN2 may only be removed below this transmit power.
    pub remove_threshold_dbm: f64,
    pub allow_high_power_remove: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_h: 10,
            comp_n_h: 10,
            samples: 8000,
            holdout_samples: 4000,
            stage1_init: Init::Glorot,
            comp_init: Init::NearIdentity { eps: 0.1 },
            remove_threshold_dbm: 5.0,
            allow_high_power_remove: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodedConfig {
    pub info_bits_per_frame: usize,
    pub frames: usize,
}

impl Default for CodedConfig {
    fn default() -> Self {
        Self {
            info_bits_per_frame: 4800,
            frames: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationConfig {
    /// Symbol vectors dumped per scenario and power.
    pub n_vectors: usize,
}

impl Default for ConstellationConfig {
    fn default() -> Self {
        Self { n_vectors: 1000 }
    }
}

/// Complete description of an experiment run. The master seed is
/// `system.rng_seed`; every other stream is derived from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub system: SystemConfig,
    pub channel: ChannelModel,
    pub impairments: ImpairmentConfig,
    pub stage1_training: TrainingConfig,
    pub stage2_training: TrainingConfig,
    pub model: ModelConfig,
    pub sweep: SweepConfig,
    pub coded: CodedConfig,
    pub constellation: ConstellationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            system: SystemConfig {
                rng_seed: DEFAULT_SEED,
                ..SystemConfig::default()
            },
            channel: ChannelModel::default(),
            impairments: ImpairmentConfig::default(),
            stage1_training: TrainingConfig::default(),
            stage2_training: TrainingConfig::default(),
            model: ModelConfig::default(),
            sweep: SweepConfig::default(),
            coded: CodedConfig::default(),
            constellation: ConstellationConfig::default(),
        }
    }
}

/// Channel seed of the default experiment.
pub const DEFAULT_SEED: u64 = 7;

/// Keys that are valid but absent from the serialized defaults.
const OPTIONAL_KEYS: &[&str] = &["system.noise.noise_psd_mw_per_hz"];

fn collect_keys(v: &toml::Value, prefix: &str, out: &mut BTreeSet<String>) {
    if let toml::Value::Table(t) = v {
        for (k, child) in t {
            let path = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            out.insert(path.clone());
            collect_keys(child, &path, out);
        }
    }
}

fn unknown_keys(user: &toml::Value, known: &BTreeSet<String>) -> Vec<String> {
    let mut keys = BTreeSet::new();
    collect_keys(user, "", &mut keys);
    keys.into_iter()
        .filter(|k| !known.contains(k) && !OPTIONAL_KEYS.contains(&k.as_str()))
        // Tagged enums (e.g. `init = { kind = ..., eps = ... }`) carry
        // variant-specific keys; report only the outermost unknown path.
        .filter(|k| !is_variant_field(k))
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Vec::new(), |mut acc: Vec<String>, k| {
            if !acc.iter().any(|p| k.starts_with(&format!("{p}."))) {
                acc.push(k);
            }
            acc
        })
}

fn is_variant_field(key: &str) -> bool {
    ["model.stage1_init.", "model.comp_init."]
        .iter()
        .any(|p| key.starts_with(p))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Value = toml::from_str(text).map_err(|e| ExpError::Schema(vec![e.to_string()]))?;
        let mut known = BTreeSet::new();
        collect_keys(
            &toml::Value::try_from(Self::default()).expect("defaults serialize"),
            "",
            &mut known,
        );
        let unknown = unknown_keys(&user, &known);
        if !unknown.is_empty() {
            return Err(ExpError::Schema(
                unknown.into_iter().map(|k| format!("unknown key `{k}`")).collect(),
            ));
        }
        let cfg: Self = user
            .try_into()
            .map_err(|e: toml::de::Error| ExpError::Schema(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.system.rng_seed
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        v.extend(self.system.violations().into_iter().map(|e| format!("system: {e}")));
        v.extend(
            self.impairments
                .violations()
                .into_iter()
                .map(|e| format!("impairments: {e}")),
        );
        v.extend(
            self.stage1_training
                .violations()
                .into_iter()
                .map(|e| format!("stage1_training: {e}")),
        );
        v.extend(
            self.stage2_training
                .violations()
                .into_iter()
                .map(|e| format!("stage2_training: {e}")),
        );
        for s in &self.sweep.scenarios {
            if Scenario::parse(s).is_err() {
                v.push(format!("sweep.scenarios: unknown scenario `{s}`"));
            }
        }
        if self.sweep.powers_dbm.iter().any(|p| !p.is_finite()) {
            v.push("sweep.powers_dbm: powers must be finite".into());
        }
        if self.sweep.n_symbols == 0 {
            v.push("sweep.n_symbols must be positive".into());
        }
        if self.model.n_h == 0 || self.model.comp_n_h == 0 {
            v.push("model: hidden widths must be positive".into());
        }
        if self.model.samples == 0 || self.model.holdout_samples == 0 {
            v.push("model: sample counts must be positive".into());
        }
        if self.coded.info_bits_per_frame == 0
            || !self.coded.info_bits_per_frame.is_multiple_of(4)
            || self.coded.frames == 0
        {
            v.push("coded: info_bits_per_frame must be a positive multiple of 4 and frames positive".into());
        }
        if self.channel.n_paths < self.system.n_s {
            v.push(format!(
                "channel.n_paths ({}) must be at least system.n_s ({})",
                self.channel.n_paths, self.system.n_s
            ));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ExpError::Schema(v))
        }
    }
}

/// Architecture selector of the `--slim` flag:
/// `none`, `prune:N`, `share[:N]`, `remove[:N]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SlimChoice {
    pub mode: SlimMode,
    /// Hidden width override.
    pub n_h: Option<usize>,
}

impl SlimChoice {
    pub const NONE: Self = Self {
        mode: SlimMode::Full,
        n_h: None,
    };

    pub fn parse(s: &str) -> Result<Self> {
        let (head, n) = match s.split_once(':') {
            Some((h, n)) => {
                let n: usize = n
                    .parse()
                    .map_err(|_| ExpError::Schema(vec![format!("bad hidden width in --slim `{s}`")]))?;
                if n == 0 {
                    return Err(ExpError::Schema(vec!["hidden width must be positive".into()]));
                }
                (h, Some(n))
            }
            None => (s, None),
        };
        let mode = match head {
            "none" | "full" | "prune" => SlimMode::Full,
            "share" => SlimMode::Shared,
            "remove" => SlimMode::Removed,
            _ => return Err(ExpError::Schema(vec![format!("unknown slim mode `{s}`")])),
        };
        if head == "prune" && n.is_none() {
            return Err(ExpError::Schema(vec!["prune needs a width, e.g. prune:4".into()]));
        }
        Ok(Self { mode, n_h: n })
    }

    pub fn n_h(&self, default: usize) -> usize {
        self.n_h.unwrap_or(default)
    }

    /// File-name tag, e.g. `full10`, `shared8`.
    pub fn tag(&self, default_n_h: usize) -> String {
        format!("{}{}", self.mode.label(), self.n_h(default_n_h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        let text = c.to_toml_string();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn explicit_noise_psd_and_init_variants_parse() {
        let mut c = ExperimentConfig::default();
        c.system.noise.noise_psd_mw_per_hz = Some(1e-17);
        c.model.stage1_init = Init::NearIdentity { eps: 0.05 };
        c.model.comp_init = Init::Glorot;
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let mut text = ExperimentConfig::default().to_toml_string();
        text = text.replace("[sweep]\n", "[sweep]\nbogus_count = 3\n");
        text = text.replace("[impairments]\n", "[impairments]\nphase_noise_var_deg2 = 1.0\n");
        text.push_str("\n[extra]\nx = 1\n");
        match ExperimentConfig::from_toml_str(&text) {
            Err(ExpError::Schema(keys)) => {
                assert_eq!(keys.len(), 3, "{keys:?}");
                assert!(keys.iter().any(|k| k.contains("sweep.bogus_count")));
                assert!(keys.iter().any(|k| k.contains("impairments.phase_noise_var_deg2")));
                assert!(keys.iter().any(|k| k.contains("`extra`")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_are_reported() {
        let mut c = ExperimentConfig::default();
        c.sweep.scenarios.push("laser".into());
        c.stage1_training.batch_size = 0;
        match c.validate() {
            Err(ExpError::Schema(v)) => assert_eq!(v.len(), 2, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn slim_flags() {
        assert_eq!(SlimChoice::parse("none").unwrap(), SlimChoice::NONE);
        assert_eq!(
            SlimChoice::parse("prune:4").unwrap(),
            SlimChoice {
                mode: SlimMode::Full,
                n_h: Some(4)
            }
        );
        assert_eq!(SlimChoice::parse("share:8").unwrap().tag(10), "shared8");
        assert_eq!(SlimChoice::parse("remove").unwrap().tag(10), "removed10");
        assert!(SlimChoice::parse("prune").is_err());
        assert!(SlimChoice::parse("shrink").is_err());
        assert!(SlimChoice::parse("share:0").is_err());
    }
}

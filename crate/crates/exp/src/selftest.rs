//! Quick end-to-end check of an installation on a small link.

use std::path::Path;

use thzcomp_core::chain::ChainSpec;
use thzcomp_core::io;
use thzcomp_core::stage2::{deploy_and_evaluate, Deployed};

use crate::config::{ExperimentConfig, SlimChoice};
use crate::experiments::{build_link, cmd_train, load_stage1, run_sweep, Stage};
use crate::Result;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

/// Small configuration used by the self-test and the CLI smoke tests.
pub fn small_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        output_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.system.n_t = 32;
    cfg.system.n_r = 32;
    cfg.model.samples = 800;
    cfg.model.holdout_samples = 400;
    cfg.stage1_training.epochs = 3;
    cfg.stage2_training.epochs = 2;
    cfg.sweep.powers_dbm = vec![15.0];
    cfg.sweep.scenarios = vec!["ideal".into(), "all".into()];
    cfg.sweep.n_symbols = 4000;
    cfg
}

pub fn run(out: &Path) -> Result<Vec<Check>> {
    let cfg = small_config(out);
    let mut checks = Vec::new();

    let rows = run_sweep(&cfg)?;
    let ideal = rows
        .iter()
        .find(|r| r.scenario == "ideal")
        .map(|r| r.ser)
        .unwrap_or(f64::NAN);
    checks.push(Check {
        name: "ideal chain is error free",
        ok: ideal == 0.0,
        detail: format!("ser {ideal}"),
    });

    let again = run_sweep(&cfg)?;
    checks.push(Check {
        name: "sweep is reproducible",
        ok: rows == again,
        detail: String::new(),
    });

    cmd_train(&cfg, Stage::One, SlimChoice::NONE, &[15.0])?;
    let link = build_link(&cfg)?.with_power(15.0)?;
    let m = load_stage1(&cfg, &link, SlimChoice::NONE)?;
    let loss = m
        .forward(&link.bf.f_bb)?
        .as_slice()
        .iter()
        .all(|z| z.re.is_finite() && z.im.is_finite());
    checks.push(Check {
        name: "checkpoint round trip",
        ok: loss,
        detail: format!(
            "{} params, checksum {}",
            m.param_count(),
            &io::param_checksum(&m.params)[..12]
        ),
    });

    let ev = deploy_and_evaluate(Deployed::None, &link, &ChainSpec::all(), 2000, 1)?;
    checks.push(Check {
        name: "impaired chain evaluates",
        ok: ev.ser.is_finite() && ev.n_symbols == 2000,
        detail: format!("ser {}", ev.ser),
    });
    Ok(checks)
}

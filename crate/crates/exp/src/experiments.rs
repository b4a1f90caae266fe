//! Experiment drivers behind the CLI subcommands. Every driver is a pure
//! function of the configuration; outputs are sorted and formatted so that
//! reruns reproduce every CSV byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thzcomp_core::chain::{equalize, mean_gain, transmit, ChainSpec, LinkRealization, Scenario};
use thzcomp_core::coding::ConvCode;
use thzcomp_core::io::{self, CheckpointMeta, ModelManifest};
use thzcomp_core::modem::{symbol_errors, Qam16};
use thzcomp_core::neural::{Mlp, TrainingReport};
use thzcomp_core::stage1::{
    check_remove_policy, stage1_param_count, train_stage1, SlimMode, Stage1Dataset, StructuredDNN,
};
use thzcomp_core::stage2::{
    ddnn_sizes, deploy_and_evaluate, evaluate_coded, train_ddnn, train_rx_comp, train_tx_comp, DDnnBaseline, Deployed,
    RxCompensator, TxCompensator,
};
use thzcomp_core::{CMatrix, Error, Link, RandomSource};

use crate::config::{ExperimentConfig, SlimChoice};
use crate::error::{ExpError, Result};
use crate::stats::wilson_half_width;

/// Seed of a derived stream, keyed by label and (for per-power streams) the
/// power's bit pattern.
pub fn sub_seed(cfg: &ExperimentConfig, label: &str, power_dbm: f64) -> u64 {
    RandomSource::new(cfg.seed())
        .derive_indexed(label, power_dbm.to_bits())
        .seed()
}

pub fn build_link(cfg: &ExperimentConfig) -> Result<Link> {
    Ok(LinkRealization::new(&cfg.system, &cfg.channel, &cfg.impairments)?)
}

/// `15` -> `15dBm`, `-2.5` -> `-2.5dBm`.
pub fn power_tag(p: f64) -> String {
    format!("{p}dBm")
}

fn fmt_f(x: f64) -> String {
    format!("{x}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub power_dbm: f64,
    pub snr_db: f64,
    pub scenario: String,
    pub ser: f64,
    pub errors: usize,
    pub n_symbols: usize,
    pub ci_half_width: f64,
}

/// Uncompensated SER for every (power, scenario) pair. All scenarios at one
/// power see the same symbols and random draws.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let link = build_link(cfg)?;
    let scenarios: Vec<Scenario> = cfg
        .sweep
        .scenarios
        .iter()
        .map(|s| Scenario::parse(s))
        .collect::<thzcomp_core::Result<_>>()?;
    let jobs: Vec<(f64, Scenario)> = cfg
        .sweep
        .powers_dbm
        .iter()
        .flat_map(|&p| scenarios.iter().map(move |&s| (p, s)))
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(p, sc)| -> Result<SweepRow> {
            let l = link.with_power(p)?;
            let ev = deploy_and_evaluate(
                Deployed::None,
                &l,
                &sc.spec(),
                cfg.sweep.n_symbols,
                sub_seed(cfg, "sweep", p),
            )?;
            Ok(SweepRow {
                power_dbm: p,
                snr_db: ev.snr_db,
                scenario: sc.label().to_string(),
                ser: ev.ser,
                errors: ev.errors,
                n_symbols: ev.n_symbols,
                ci_half_width: wilson_half_width(ev.errors, ev.n_symbols),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let order = |s: &str| Scenario::ALL.iter().position(|x| x.label() == s).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| {
        a.power_dbm
            .total_cmp(&b.power_dbm)
            .then(order(&a.scenario).cmp(&order(&b.scenario)))
    });
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("power_dbm,snr_db,scenario,ser,errors,n_symbols,ci95_half_width\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            fmt_f(r.power_dbm),
            fmt_f(r.snr_db),
            r.scenario,
            fmt_f(r.ser),
            r.errors,
            r.n_symbols,
            fmt_f(r.ci_half_width)
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRow {
    pub model: String,
    pub n_h: usize,
    pub params: usize,
}

/// Trainable parameter counts of the surrogate variants and the D-DNN.
pub fn params_report(cfg: &ExperimentConfig) -> Vec<ParamRow> {
    let s = &cfg.system;
    let mut rows = Vec::new();
    for n_h in [10, 8, 6, 4, 2] {
        rows.push(("full", n_h, SlimMode::Full));
    }
    for n_h in [10, 8] {
        rows.push(("shared", n_h, SlimMode::Shared));
        rows.push(("removed", n_h, SlimMode::Removed));
    }
    let mut out: Vec<ParamRow> = rows
        .into_iter()
        .map(|(name, n_h, mode)| ParamRow {
            model: name.to_string(),
            n_h,
            params: stage1_param_count(s.l_t, s.n_t, s.l_r, n_h, mode),
        })
        .collect();
    out.push(ParamRow {
        model: "ddnn".into(),
        n_h: 10,
        params: Mlp::<f64>::param_count_for(&ddnn_sizes(s.n_s)),
    });
    out
}

pub fn params_csv(rows: &[ParamRow]) -> String {
    let mut s = String::from("model,n_h,params\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.model, r.n_h, r.params);
    }
    s
}

/// Wall time of one surrogate forward pass over `cols` inputs per
/// architecture (machine dependent, not part of the reproducible outputs).
pub fn runtime_report(cfg: &ExperimentConfig, cols: usize, repeats: usize) -> Result<Vec<(String, f64)>> {
    let link = build_link(cfg)?;
    let s = Qam16::new().random_symbols(cfg.system.n_s, cols, &mut RandomSource::new(cfg.seed()));
    let s1 = link.bf.f_bb.matmul(&s);
    let mut out = Vec::new();
    for (name, mode) in [
        ("full", SlimMode::Full),
        ("shared", SlimMode::Shared),
        ("removed", SlimMode::Removed),
    ] {
        let m = StructuredDNN::new(&link, cfg.model.n_h, mode, cfg.model.stage1_init, &RandomSource::new(1))?;
        m.forward(&s1)?;
        let t = Instant::now();
        for _ in 0..repeats {
            std::hint::black_box(m.forward(&s1)?);
        }
        out.push((name.to_string(), t.elapsed().as_secs_f64() / repeats as f64));
    }
    Ok(out)
}

/// Training and held-out sets at one power.
pub fn stage1_datasets(cfg: &ExperimentConfig, link: &Link) -> Result<(Stage1Dataset<f64>, Stage1Dataset<f64>)> {
    let p = link.power_dbm;
    let spec = ChainSpec::all();
    let train = Stage1Dataset::generate(link, &spec, cfg.model.samples, sub_seed(cfg, "stage1-data", p))?;
    let hold = Stage1Dataset::generate(
        link,
        &spec,
        cfg.model.holdout_samples,
        sub_seed(cfg, "stage1-holdout", p),
    )?;
    Ok((train, hold))
}

pub struct Stage1Run {
    pub model: StructuredDNN<f64>,
    pub report: TrainingReport,
    pub manifest: ModelManifest,
}

pub fn train_stage1_model(
    cfg: &ExperimentConfig,
    link: &Link,
    data: &Stage1Dataset<f64>,
    slim: SlimChoice,
) -> Result<Stage1Run> {
    let p = link.power_dbm;
    if slim.mode == SlimMode::Removed {
        check_remove_policy(p, cfg.model.remove_threshold_dbm, cfg.model.allow_high_power_remove)?;
    }
    let init_rng = RandomSource::new(sub_seed(cfg, &format!("stage1-init-{}", slim.tag(cfg.model.n_h)), p));
    let mut model = StructuredDNN::new(
        link,
        slim.n_h(cfg.model.n_h),
        slim.mode,
        cfg.model.stage1_init,
        &init_rng,
    )?;
    let report = train_stage1(&mut model, data, &cfg.stage1_training)?;
    let manifest = ModelManifest {
        mode: slim.mode.label().to_string(),
        n_h: model.n_h,
        link_id: io::link_id(&link.channel, &link.bf),
        power_dbm: p,
        dataset_hash: io::matrix_hash(&[&data.s1, &data.y_e]),
        param_count: model.param_count(),
        checksum: io::param_checksum(&model.params),
    };
    Ok(Stage1Run {
        model,
        report,
        manifest,
    })
}

pub fn train_tx_model(
    cfg: &ExperimentConfig,
    link: &Link,
    frozen: &StructuredDNN<f64>,
    data: &Stage1Dataset<f64>,
) -> Result<(TxCompensator<f64>, TrainingReport)> {
    let rng = RandomSource::new(sub_seed(cfg, "tx-init", link.power_dbm));
    let mut c = TxCompensator::new(link, cfg.model.comp_n_h, cfg.model.comp_init, &rng)?;
    let r = train_tx_comp(&mut c, frozen, &data.s, &data.y_i, &cfg.stage2_training)?;
    Ok((c, r))
}

pub fn train_rx_model(
    cfg: &ExperimentConfig,
    link: &Link,
    frozen: &StructuredDNN<f64>,
    data: &Stage1Dataset<f64>,
) -> Result<(RxCompensator<f64>, TrainingReport)> {
    let rng = RandomSource::new(sub_seed(cfg, "rx-init", link.power_dbm));
    let mut c = RxCompensator::new(link, cfg.model.comp_n_h, cfg.model.comp_init, &rng)?;
    let r = train_rx_comp(&mut c, frozen, &data.s, &data.y_i, &cfg.stage2_training)?;
    Ok((c, r))
}

pub fn train_ddnn_model(
    cfg: &ExperimentConfig,
    link: &Link,
    data: &Stage1Dataset<f64>,
) -> Result<(DDnnBaseline<f64>, TrainingReport)> {
    let rng = RandomSource::new(sub_seed(cfg, "ddnn-init", link.power_dbm));
    let mut d = DDnnBaseline::new(link, &rng)?;
    let r = train_ddnn(&mut d, &data.y_e, &data.y_i, data.power_dbm, &cfg.stage2_training)?;
    Ok((d, r))
}

pub fn loss_csv(report: &TrainingReport) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in report.loss_curve.iter().enumerate() {
        let _ = writeln!(s, "{},{}", i + 1, fmt_f(*l));
    }
    s
}

/// Which network a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    One,
    Tx,
    Rx,
    Ddnn,
}

impl Stage {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Stage::One),
            "2-tx" => Ok(Stage::Tx),
            "2-rx" => Ok(Stage::Rx),
            "ddnn" => Ok(Stage::Ddnn),
            _ => Err(ExpError::Schema(vec![format!(
                "unknown stage `{s}` (1, 2-tx, 2-rx, ddnn)"
            )])),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Stage::One => "stage1",
            Stage::Tx => "tx",
            Stage::Rx => "rx",
            Stage::Ddnn => "ddnn",
        }
    }
}

/// `<out>/<stage>_<slimtag>_<power>dBm.ckpt` (the D-DNN has no slim tag).
pub fn checkpoint_path(cfg: &ExperimentConfig, stage: Stage, slim: SlimChoice, p: f64) -> PathBuf {
    let name = match stage {
        Stage::Ddnn => format!("ddnn_{}.ckpt", power_tag(p)),
        _ => format!("{}_{}_{}.ckpt", stage.label(), slim.tag(cfg.model.n_h), power_tag(p)),
    };
    cfg.output_dir.join(name)
}

fn training_meta(
    report: &TrainingReport,
    cfg: &ExperimentConfig,
    p: f64,
    extra: serde_json::Value,
) -> serde_json::Value {
    serde_json::json!({
        "power_dbm": p,
        "seed": cfg.seed(),
        "epochs": report.loss_curve.len(),
        "final_loss": report.final_loss,
        "details": extra,
    })
}

fn save_params(
    path: &Path,
    kind: &str,
    params: &[f64],
    shapes: BTreeMap<String, Vec<usize>>,
    meta: serde_json::Value,
) -> Result<()> {
    let m = CheckpointMeta::new(kind, params, shapes, meta);
    io::save_checkpoint(path, params, &m)?;
    Ok(())
}

fn load_params(path: &Path, expected: usize) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::Dependency(format!("missing checkpoint {}", path.display())).into());
    }
    let (params, _) = io::load_checkpoint::<f64>(path)?;
    if params.len() != expected {
        return Err(Error::Format(format!(
            "{} holds {} parameters, expected {expected}",
            path.display(),
            params.len()
        ))
        .into());
    }
    Ok(params)
}

fn stage1_shapes(m: &StructuredDNN<f64>) -> BTreeMap<String, Vec<usize>> {
    let mut s = BTreeMap::new();
    s.insert("bank1".into(), vec![m.bank1.nets(), 5 * m.n_h + 2]);
    if let Some(b) = &m.bank2 {
        s.insert("bank2".into(), vec![b.nets(), 5 * m.n_h + 2]);
    }
    s.insert("bank3".into(), vec![m.bank3.nets(), 5 * m.n_h + 2]);
    s
}

/// Rebuilds a trained surrogate from its checkpoint.
pub fn load_stage1(cfg: &ExperimentConfig, link: &Link, slim: SlimChoice) -> Result<StructuredDNN<f64>> {
    let mut m = StructuredDNN::new(
        link,
        slim.n_h(cfg.model.n_h),
        slim.mode,
        cfg.model.stage1_init,
        &RandomSource::new(0),
    )?;
    m.params = load_params(&checkpoint_path(cfg, Stage::One, slim, link.power_dbm), m.param_count())?;
    Ok(m)
}

pub fn load_tx(cfg: &ExperimentConfig, link: &Link, slim: SlimChoice) -> Result<TxCompensator<f64>> {
    let mut c = TxCompensator::new(link, cfg.model.comp_n_h, cfg.model.comp_init, &RandomSource::new(0))?;
    c.params = load_params(&checkpoint_path(cfg, Stage::Tx, slim, link.power_dbm), c.params.len())?;
    Ok(c)
}

pub fn load_rx(cfg: &ExperimentConfig, link: &Link, slim: SlimChoice) -> Result<RxCompensator<f64>> {
    let mut c = RxCompensator::new(link, cfg.model.comp_n_h, cfg.model.comp_init, &RandomSource::new(0))?;
    c.params = load_params(&checkpoint_path(cfg, Stage::Rx, slim, link.power_dbm), c.params.len())?;
    Ok(c)
}

pub fn load_ddnn(cfg: &ExperimentConfig, link: &Link) -> Result<DDnnBaseline<f64>> {
    let mut d = DDnnBaseline::new(link, &RandomSource::new(0))?;
    d.mlp.params = load_params(
        &checkpoint_path(cfg, Stage::Ddnn, SlimChoice::NONE, link.power_dbm),
        d.param_count(),
    )?;
    Ok(d)
}

/// Trains one stage at every power and writes checkpoints, sidecars,
/// manifests and loss curves. Returns the written paths (sorted).
pub fn cmd_train(cfg: &ExperimentConfig, stage: Stage, slim: SlimChoice, powers: &[f64]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let link = build_link(cfg)?;
    io::save_link_bundle(&cfg.output_dir.join("link"), &link.channel, &link.bf)?;
    let mut written: Vec<PathBuf> = powers
        .par_iter()
        .map(|&p| -> Result<Vec<PathBuf>> {
            let l = link.with_power(p)?;
            let ckpt = checkpoint_path(cfg, stage, slim, p);
            let frozen = match stage {
                Stage::Tx | Stage::Rx => Some(load_stage1(cfg, &l, slim)?),
                _ => None,
            };
            let (data, _) = stage1_datasets(cfg, &l)?;
            let mut out = vec![ckpt.clone()];
            let report = match stage {
                Stage::One => {
                    let run = train_stage1_model(cfg, &l, &data, slim)?;
                    let meta = training_meta(&run.report, cfg, p, serde_json::to_value(&run.manifest)?);
                    save_params(&ckpt, "stage1", &run.model.params, stage1_shapes(&run.model), meta)?;
                    let mp = ckpt.with_extension("manifest.json");
                    std::fs::write(&mp, serde_json::to_string_pretty(&run.manifest)? + "\n")?;
                    out.push(mp);
                    run.report
                }
                Stage::Tx => {
                    let (c, r) = train_tx_model(cfg, &l, frozen.as_ref().unwrap(), &data)?;
                    let shapes =
                        BTreeMap::from([("nn_ct".to_string(), vec![c.bank.nets(), 5 * cfg.model.comp_n_h + 2])]);
                    save_params(
                        &ckpt,
                        "tx_comp",
                        &c.params,
                        shapes,
                        training_meta(&r, cfg, p, serde_json::Value::Null),
                    )?;
                    r
                }
                Stage::Rx => {
                    let (c, r) = train_rx_model(cfg, &l, frozen.as_ref().unwrap(), &data)?;
                    let shapes =
                        BTreeMap::from([("nn_cr".to_string(), vec![c.bank.nets(), 5 * cfg.model.comp_n_h + 2])]);
                    save_params(
                        &ckpt,
                        "rx_comp",
                        &c.params,
                        shapes,
                        training_meta(&r, cfg, p, serde_json::Value::Null),
                    )?;
                    r
                }
                Stage::Ddnn => {
                    let (d, r) = train_ddnn_model(cfg, &l, &data)?;
                    let shapes = BTreeMap::from([("layers".to_string(), d.mlp.sizes.clone())]);
                    save_params(
                        &ckpt,
                        "ddnn",
                        &d.mlp.params,
                        shapes,
                        training_meta(&r, cfg, p, serde_json::Value::Null),
                    )?;
                    r
                }
            };
            let lp = ckpt.with_extension("loss.csv");
            std::fs::write(&lp, loss_csv(&report))?;
            out.push(lp);
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    written.sort();
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub power_dbm: f64,
    pub snr_db: f64,
    pub side: String,
    pub ser: f64,
    pub errors: usize,
    pub n_symbols: usize,
    pub seed: u64,
}

/// Live-link SER with the trained network for `side` deployed.
pub fn evaluate_side(cfg: &ExperimentConfig, link: &Link, side: &str, slim: SlimChoice) -> Result<EvalRow> {
    let p = link.power_dbm;
    let seed = sub_seed(cfg, "eval", p);
    let spec = ChainSpec::all();
    let n = cfg.sweep.n_symbols;
    let ev = match side {
        "none" => deploy_and_evaluate(Deployed::None, link, &spec, n, seed)?,
        "tx" => deploy_and_evaluate(Deployed::Tx(&load_tx(cfg, link, slim)?), link, &spec, n, seed)?,
        "rx" => deploy_and_evaluate(Deployed::Rx(&load_rx(cfg, link, slim)?), link, &spec, n, seed)?,
        "ddnn" => deploy_and_evaluate(Deployed::Ddnn(&load_ddnn(cfg, link)?), link, &spec, n, seed)?,
        _ => {
            return Err(ExpError::Schema(vec![format!(
                "unknown side `{side}` (tx, rx, none, ddnn)"
            )]))
        }
    };
    Ok(EvalRow {
        power_dbm: p,
        snr_db: ev.snr_db,
        side: side.to_string(),
        ser: ev.ser,
        errors: ev.errors,
        n_symbols: ev.n_symbols,
        seed,
    })
}

pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    sides: &[String],
    slim: SlimChoice,
    powers: &[f64],
) -> Result<Vec<EvalRow>> {
    let link = build_link(cfg)?;
    let jobs: Vec<(f64, &String)> = powers.iter().flat_map(|&p| sides.iter().map(move |s| (p, s))).collect();
    jobs.par_iter()
        .map(|&(p, s)| evaluate_side(cfg, &link.with_power(p)?, s, slim))
        .collect()
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("power_dbm,snr_db,side,ser,n_symbols,seed\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_f(r.power_dbm),
            fmt_f(r.snr_db),
            r.side,
            fmt_f(r.ser),
            r.n_symbols,
            r.seed
        );
    }
    s
}

/// Distortion statistics of an equalized constellation against the sent
/// symbols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstellationStats {
    pub scenario: String,
    pub power_dbm: f64,
    /// Mean `|e - g s|^2` after removing the best complex gain `g`.
    pub scatter_var: f64,
    /// `|arg g|` in degrees.
    pub mean_phase_offset_deg: f64,
    /// Mean `|e - s|`.
    pub mean_displacement: f64,
    pub ser: f64,
}

pub fn constellation_stats(scenario: &str, p: f64, sent: &CMatrix, eq: &CMatrix) -> Result<ConstellationStats> {
    let g = mean_gain(eq, sent);
    let n = sent.as_slice().len() as f64;
    let scatter = eq
        .as_slice()
        .iter()
        .zip(sent.as_slice())
        .map(|(e, s)| (e - g * s).norm_sqr())
        .sum::<f64>()
        / n;
    let disp = eq
        .as_slice()
        .iter()
        .zip(sent.as_slice())
        .map(|(e, s)| (e - s).norm())
        .sum::<f64>()
        / n;
    Ok(ConstellationStats {
        scenario: scenario.to_string(),
        power_dbm: p,
        scatter_var: scatter,
        mean_phase_offset_deg: g.arg().to_degrees().abs(),
        mean_displacement: disp,
        ser: symbol_errors(sent, eq)? as f64 / n,
    })
}

/// Equalized constellation of `scenario` at each power. Returns the dump
/// (`block,stream,re,im`) per power and the statistics.
pub fn cmd_constellation(
    cfg: &ExperimentConfig,
    scenario: Scenario,
    powers: &[f64],
) -> Result<Vec<(f64, String, ConstellationStats)>> {
    let link = build_link(cfg)?;
    let n = cfg.constellation.n_vectors;
    powers
        .par_iter()
        .map(|&p| {
            let l = link.with_power(p)?;
            let rng = RandomSource::new(sub_seed(cfg, "constellation", p));
            let s = Qam16::new().random_symbols(cfg.system.n_s, n, &mut rng.derive("symbols"));
            let y = transmit(&s, &scenario.spec(), &l, &rng)?;
            let e = equalize(&y, &l)?;
            Ok((
                p,
                io::constellation_csv(&e),
                constellation_stats(scenario.label(), p, &s, &e)?,
            ))
        })
        .collect()
}

pub fn constellation_stats_csv(rows: &[ConstellationStats]) -> String {
    let mut s = String::from("scenario,power_dbm,scatter_var,mean_phase_offset_deg,mean_displacement,ser\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.scenario,
            fmt_f(r.power_dbm),
            fmt_f(r.scatter_var),
            fmt_f(r.mean_phase_offset_deg),
            fmt_f(r.mean_displacement),
            fmt_f(r.ser)
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodedRow {
    pub power_dbm: f64,
    pub side: String,
    pub coded_ser: f64,
    pub coded_ber: f64,
    pub channel_ser: f64,
    pub info_symbols: usize,
}

/// Coded SER with the trained network for `side` deployed.
pub fn coded_side(cfg: &ExperimentConfig, link: &Link, side: &str, slim: SlimChoice) -> Result<CodedRow> {
    let p = link.power_dbm;
    let spec = ChainSpec::all();
    let code = ConvCode::default();
    let (bits, frames, seed) = (
        cfg.coded.info_bits_per_frame,
        cfg.coded.frames,
        sub_seed(cfg, "coded", p),
    );
    let r = match side {
        "none" => evaluate_coded(Deployed::None, link, &spec, &code, bits, frames, seed)?,
        "tx" => evaluate_coded(
            Deployed::Tx(&load_tx(cfg, link, slim)?),
            link,
            &spec,
            &code,
            bits,
            frames,
            seed,
        )?,
        "rx" => evaluate_coded(
            Deployed::Rx(&load_rx(cfg, link, slim)?),
            link,
            &spec,
            &code,
            bits,
            frames,
            seed,
        )?,
        "ddnn" => evaluate_coded(
            Deployed::Ddnn(&load_ddnn(cfg, link)?),
            link,
            &spec,
            &code,
            bits,
            frames,
            seed,
        )?,
        _ => return Err(ExpError::Schema(vec![format!("unknown side `{side}`")])),
    };
    Ok(CodedRow {
        power_dbm: p,
        side: side.to_string(),
        coded_ser: r.ser,
        coded_ber: r.ber,
        channel_ser: r.channel_ser,
        info_symbols: r.info_symbols,
    })
}

pub fn cmd_coded(cfg: &ExperimentConfig, sides: &[String], slim: SlimChoice, powers: &[f64]) -> Result<Vec<CodedRow>> {
    let link = build_link(cfg)?;
    let jobs: Vec<(f64, &String)> = powers.iter().flat_map(|&p| sides.iter().map(move |s| (p, s))).collect();
    jobs.par_iter()
        .map(|&(p, s)| coded_side(cfg, &link.with_power(p)?, s, slim))
        .collect()
}

pub fn coded_csv(rows: &[CodedRow]) -> String {
    let mut s = String::from("power_dbm,side,coded_ser,coded_ber,channel_ser,info_symbols\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_f(r.power_dbm),
            r.side,
            fmt_f(r.coded_ser),
            fmt_f(r.coded_ber),
            fmt_f(r.channel_ser),
            r.info_symbols
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex;

    #[test]
    fn stage_names_and_paths() {
        assert_eq!(Stage::parse("2-tx").unwrap(), Stage::Tx);
        assert!(Stage::parse("3").is_err());
        let cfg = ExperimentConfig::default();
        let p = checkpoint_path(&cfg, Stage::One, SlimChoice::parse("share:8").unwrap(), -2.5);
        assert_eq!(p.file_name().unwrap(), "stage1_shared8_-2.5dBm.ckpt");
        assert_eq!(
            checkpoint_path(&cfg, Stage::Ddnn, SlimChoice::NONE, 15.0)
                .file_name()
                .unwrap(),
            "ddnn_15dBm.ckpt"
        );
    }

    #[test]
    fn constellation_stats_of_a_rotated_copy() {
        let s = Qam16::new().random_symbols(2, 200, &mut RandomSource::new(1));
        let g = Complex::from_polar(1.2, 0.3);
        let e = s.map(|z| z * g);
        let st = constellation_stats("x", 0.0, &s, &e).unwrap();
        assert!(st.scatter_var < 1e-20);
        assert!((st.mean_phase_offset_deg - 0.3f64.to_degrees()).abs() < 1e-9);
        let disp = (g - 1.0).norm() * s.as_slice().iter().map(|z| z.norm()).sum::<f64>() / 400.0;
        assert!((st.mean_displacement - disp).abs() < 1e-12);
    }

    #[test]
    fn sweep_csv_layout() {
        let rows = vec![SweepRow {
            power_dbm: -5.0,
            snr_db: 2.5,
            scenario: "pa".into(),
            ser: 0.125,
            errors: 125,
            n_symbols: 1000,
            ci_half_width: 0.02,
        }];
        assert_eq!(
            sweep_csv(&rows),
            "power_dbm,snr_db,scenario,ser,errors,n_symbols,ci95_half_width\n-5,2.5,pa,0.125,125,1000,0.02\n"
        );
    }

    #[test]
    fn sub_seeds_differ_by_label_and_power() {
        let cfg = ExperimentConfig::default();
        assert_ne!(sub_seed(&cfg, "a", 0.0), sub_seed(&cfg, "b", 0.0));
        assert_ne!(sub_seed(&cfg, "a", 0.0), sub_seed(&cfg, "a", 5.0));
        assert_eq!(sub_seed(&cfg, "a", 5.0), sub_seed(&cfg, "a", 5.0));
    }
}

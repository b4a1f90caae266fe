use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thzcomp_core::chain::Scenario;
use thzcomp_exp::experiments::{self as ex, Stage};
use thzcomp_exp::{selftest, ExpError, ExperimentConfig, Result, SlimChoice};

#[derive(Parser)]
#[command(
    name = "thzcomp",
    about = "Hardware-impairment compensation experiments for THz hybrid MIMO"
)]
struct Cli {
    /// TOML configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Uncompensated SER of every impairment scenario over the power sweep.
    Sweep {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        power_dbm: Option<Vec<f64>>,
    },
    /// Train one network per power and write checkpoints.
    Train {
        /// 1, 2-tx, 2-rx or ddnn.
        #[arg(long)]
        stage: String,
        /// Surrogate variant: full, prune:N, share[:N], remove[:N].
        #[arg(long, default_value = "full")]
        slim: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        power_dbm: Option<Vec<f64>>,
    },
    /// SER on the live link with a trained network deployed.
    Evaluate {
        /// tx, rx, none or ddnn (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "none,tx,rx,ddnn")]
        side: Vec<String>,
        #[arg(long, default_value = "full")]
        slim: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        power_dbm: Option<Vec<f64>>,
    },
    /// Dump equalized constellations and their distortion statistics.
    Constellation {
        #[arg(long, default_value = "all")]
        scenario: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        power_dbm: Option<Vec<f64>>,
    },
    /// Convolutionally coded SER with a trained network deployed.
    Coded {
        #[arg(long, value_delimiter = ',', default_value = "none,tx,rx")]
        side: Vec<String>,
        #[arg(long, default_value = "full")]
        slim: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        power_dbm: Option<Vec<f64>>,
    },
    /// Parameter counts of the surrogate variants and a runtime report.
    Params,
    /// Write the default configuration.
    Config,
    /// Small end-to-end check of the installation.
    Selftest,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    if let Some(s) = cli.seed {
        cfg.system.rng_seed = s;
    }
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    let powers = |p: Option<Vec<f64>>| p.unwrap_or_else(|| cfg.sweep.powers_dbm.clone());

    match cli.cmd {
        Cmd::Sweep { power_dbm } => {
            let mut c = cfg.clone();
            c.sweep.powers_dbm = powers(power_dbm);
            write(&out.join("sweep.csv"), &ex::sweep_csv(&ex::run_sweep(&c)?))?;
        }
        Cmd::Train { stage, slim, power_dbm } => {
            let stage = Stage::parse(&stage)?;
            for p in ex::cmd_train(&cfg, stage, SlimChoice::parse(&slim)?, &powers(power_dbm))? {
                println!("wrote {}", p.display());
            }
        }
        Cmd::Evaluate { side, slim, power_dbm } => {
            let rows = ex::cmd_evaluate(&cfg, &side, SlimChoice::parse(&slim)?, &powers(power_dbm))?;
            write(&out.join("evaluate.csv"), &ex::eval_csv(&rows))?;
        }
        Cmd::Constellation { scenario, power_dbm } => {
            let sc = Scenario::parse(&scenario).map_err(ExpError::from)?;
            let res = ex::cmd_constellation(&cfg, sc, &powers(power_dbm))?;
            for (p, dump, _) in &res {
                write(
                    &out.join(format!("constellation_{}_{}.csv", sc.label(), ex::power_tag(*p))),
                    dump,
                )?;
            }
            let stats: Vec<_> = res.into_iter().map(|r| r.2).collect();
            write(
                &out.join(format!("constellation_stats_{}.csv", sc.label())),
                &ex::constellation_stats_csv(&stats),
            )?;
        }
        Cmd::Coded { side, slim, power_dbm } => {
            let rows = ex::cmd_coded(&cfg, &side, SlimChoice::parse(&slim)?, &powers(power_dbm))?;
            write(&out.join("coded.csv"), &ex::coded_csv(&rows))?;
        }
        Cmd::Params => {
            write(&out.join("params.csv"), &ex::params_csv(&ex::params_report(&cfg)))?;
            let mut text = String::from("# forward-pass wall time per block (machine dependent)\n");
            for (name, t) in ex::runtime_report(&cfg, cfg.system.pilot_len, 5)? {
                text.push_str(&format!("{name}\t{:.3} ms\n", t * 1e3));
            }
            write(&out.join("runtime.txt"), &text)?;
        }
        Cmd::Config => write(&out.join("config.toml"), &cfg.to_toml_string())?,
        Cmd::Selftest => {
            let mut failed = 0;
            for c in selftest::run(&out.join("selftest"))? {
                println!("{} {}  {}", if c.ok { "ok  " } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.ok);
            }
            if failed > 0 {
                return Err(ExpError::Schema(vec![format!("{failed} self-test check(s) failed")]));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

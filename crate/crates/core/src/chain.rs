//! End-to-end link: transmit chain, channel and noise, receive chain,
//! equalizer and SNR bookkeeping.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::channel::{build_channel, design_beamformers, set_transmit_power, BeamformerSet, Channel, ChannelModel};
use crate::config::{SnrReference, SystemConfig};
use crate::error::{invalid, Error, Result};
use crate::impairments::{
    aqnm_noise_variances, aqnm_with_variances, inject_shifter_errors, iq_imbalance, linear_pa, phase_noise_apply,
    rapp_pa, ImpairmentConfig, ImpairmentSet,
};
use crate::linalg::ComplexMatrix;
use crate::rng::RandomSource;
use crate::scalar::{db_to_linear_amplitude, db_to_linear_power, linear_power_to_db, Real};

/// Which impairments are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub dac: bool,
    pub adc: bool,
    pub iq_tx: bool,
    pub iq_rx: bool,
    pub pn_tx: bool,
    pub pn_rx: bool,
    pub shifter_tx: bool,
    pub shifter_rx: bool,
    pub pa_nonlinear: bool,
    /// When false, quantization noise, phase noise and thermal noise are
    /// zeroed while the deterministic distortions stay active.
    #[serde(default = "yes")]
    pub random_effects: bool,
}

fn yes() -> bool {
    true
}

impl ChainSpec {
    pub fn ideal() -> Self {
        Self {
            dac: false,
            adc: false,
            iq_tx: false,
            iq_rx: false,
            pn_tx: false,
            pn_rx: false,
            shifter_tx: false,
            shifter_rx: false,
            pa_nonlinear: false,
            random_effects: true,
        }
    }

    pub fn all() -> Self {
        Self {
            dac: true,
            adc: true,
            iq_tx: true,
            iq_rx: true,
            pn_tx: true,
            pn_rx: true,
            shifter_tx: true,
            shifter_rx: true,
            pa_nonlinear: true,
            random_effects: true,
        }
    }

    pub fn deterministic(self) -> Self {
        Self {
            random_effects: false,
            ..self
        }
    }
}

/// Named ablation scenarios.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Ideal,
    DacAdc,
    Iq,
    Pn,
    Shifters,
    Pa,
    All,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Ideal,
        Scenario::DacAdc,
        Scenario::Iq,
        Scenario::Pn,
        Scenario::Shifters,
        Scenario::Pa,
        Scenario::All,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Scenario::Ideal => "ideal",
            Scenario::DacAdc => "dac_adc",
            Scenario::Iq => "iq",
            Scenario::Pn => "pn",
            Scenario::Shifters => "shifters",
            Scenario::Pa => "pa",
            Scenario::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.label() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario {s:?}")))
    }

    pub fn spec(self) -> ChainSpec {
        let mut c = ChainSpec::ideal();
        match self {
            Scenario::Ideal => {}
            Scenario::DacAdc => {
                c.dac = true;
                c.adc = true;
            }
            Scenario::Iq => {
                c.iq_tx = true;
                c.iq_rx = true;
            }
            Scenario::Pn => {
                c.pn_tx = true;
                c.pn_rx = true;
            }
            Scenario::Shifters => {
                c.shifter_tx = true;
                c.shifter_rx = true;
            }
            Scenario::Pa => c.pa_nonlinear = true,
            Scenario::All => c = ChainSpec::all(),
        }
        c
    }
}

/// A frozen link: channel, beamformers at one transmit power, one device
/// instance of impairments and the receiver noise level.
#[derive(Clone, Debug)]
pub struct LinkRealization<T: Real> {
    pub cfg: SystemConfig,
    pub channel: Channel<T>,
    pub bf: BeamformerSet<T>,
    pub imp: ImpairmentSet<T>,
    /// Per-antenna noise variance `B N_0` in mW.
    pub noise_var: T,
    pub power_dbm: T,
    pub seed: u64,
    pa_gain: T,
    f_rf_e: ComplexMatrix<T>,
    whh: ComplexMatrix<T>,
    whh_e: ComplexMatrix<T>,
    noise_chol: ComplexMatrix<T>,
    noise_chol_e: ComplexMatrix<T>,
    effective: ComplexMatrix<T>,
}

impl<T: Real> LinkRealization<T> {
    /// Draws the channel and device from `cfg.rng_seed` and sets the power to
    /// `cfg.transmit_power_dbm`.
    pub fn new(cfg: &SystemConfig, model: &ChannelModel, imp: &ImpairmentConfig) -> Result<Self> {
        cfg.validate()?;
        let root = RandomSource::new(cfg.rng_seed);
        let channel = build_channel(cfg, model, &mut root.derive("channel"))?;
        let bf = design_beamformers(&channel, cfg)?;
        let imp = imp.draw(cfg, &root.derive("impairments"))?;
        Self::assemble(cfg, channel, bf, imp)
    }

    /// Builds a link from explicit parts; `bf.p_in` is overwritten.
    pub fn assemble(
        cfg: &SystemConfig,
        channel: Channel<T>,
        bf: BeamformerSet<T>,
        imp: ImpairmentSet<T>,
    ) -> Result<Self> {
        let g = db_to_linear_amplitude(T::lit(cfg.pa_linear_gain_db));
        let noise_var = match cfg.noise.noise_psd_mw_per_hz {
            Some(psd) => T::lit(psd * cfg.bandwidth_hz),
            None => {
                let anchor =
                    set_transmit_power(&bf, T::lit(cfg.noise.anchor_power_dbm), T::lit(cfg.pa_linear_gain_db))?;
                let mut k = anchor.nominal_precoder();
                if cfg.noise.snr_reference == SnrReference::PaOutput {
                    k.scale_in_place(g);
                }
                channel.h.matmul(&k).frobenius_norm_sq() / db_to_linear_power(T::lit(cfg.noise.anchor_snr_db))
            }
        };
        if !(noise_var > T::zero()) {
            return invalid("noise variance must be positive");
        }
        let f_rf_e = inject_shifter_errors(&bf.f_rf, &imp.shifters.e_f)?;
        let w_rf_e = inject_shifter_errors(&bf.w_rf, &imp.shifters.e_w)?;
        let whh = bf.w_rf.h().matmul(&channel.h);
        let whh_e = w_rf_e.h().matmul(&channel.h);
        let noise_chol = bf.w_rf.h().matmul(&bf.w_rf).cholesky()?;
        let noise_chol_e = w_rf_e.h().matmul(&w_rf_e).cholesky()?;
        let mut link = Self {
            cfg: cfg.clone(),
            channel,
            bf,
            imp,
            noise_var,
            power_dbm: T::zero(),
            seed: cfg.rng_seed,
            pa_gain: g,
            f_rf_e,
            whh,
            whh_e,
            noise_chol,
            noise_chol_e,
            effective: ComplexMatrix::zeros(0, 0),
        };
        link.set_power(T::lit(cfg.transmit_power_dbm))?;
        Ok(link)
    }

    fn set_power(&mut self, p_dbm: T) -> Result<()> {
        self.bf = set_transmit_power(&self.bf, p_dbm, T::lit(self.cfg.pa_linear_gain_db))?;
        self.power_dbm = p_dbm;
        self.cfg.transmit_power_dbm = p_dbm.as_f64();
        self.effective = self
            .bf
            .w_bb
            .h()
            .matmul(&self.whh)
            .matmul(&self.bf.nominal_precoder())
            .scale_real(self.pa_gain);
        Ok(())
    }

    /// Same channel, device and noise at a different transmit power.
    pub fn with_power(&self, p_dbm: T) -> Result<Self> {
        let mut out = self.clone();
        out.set_power(p_dbm)?;
        Ok(out)
    }

    /// Same link with the receiver noise scaled to `noise_var`.
    pub fn with_noise_var(&self, noise_var: T) -> Result<Self> {
        if !(noise_var > T::zero()) {
            return invalid("noise variance must be positive");
        }
        let mut out = self.clone();
        out.noise_var = noise_var;
        Ok(out)
    }

    pub fn pa_gain(&self) -> T {
        self.pa_gain
    }

    /// `W_RF^H H` with nominal phase shifters (`L_r x N_t`).
    pub fn combined_channel(&self) -> &ComplexMatrix<T> {
        &self.whh
    }

    /// `W_BB^H W_RF^H H G F_RF P_in F_BB`.
    pub fn effective_matrix(&self) -> &ComplexMatrix<T> {
        &self.effective
    }

    /// Noiseless ideal output `y_i` for symbols `s`.
    pub fn ideal_output(&self, s: &ComplexMatrix<T>) -> ComplexMatrix<T> {
        self.effective.matmul(s)
    }

    /// Ideal RF-chain level signal `W_RF^H H G F_RF P_in F_BB s` (`L_r x T`).
    pub fn ideal_chain_output(&self, s: &ComplexMatrix<T>) -> ComplexMatrix<T> {
        self.whh
            .matmul(&self.bf.nominal_precoder())
            .scale_real(self.pa_gain)
            .matmul(s)
    }

    /// Analytic SNR in dB for unit-energy symbols at the current power.
    pub fn snr_db(&self) -> T {
        let mut k = self.bf.nominal_precoder();
        if self.cfg.noise.snr_reference == SnrReference::PaOutput {
            k.scale_in_place(self.pa_gain);
        }
        linear_power_to_db(self.channel.h.matmul(&k).frobenius_norm_sq() / self.noise_var)
    }

    /// The SNR reference signal for symbols `s` (see [`SnrReference`]).
    pub fn snr_reference_signal(&self, s: &ComplexMatrix<T>) -> ComplexMatrix<T> {
        let x = self.bf.nominal_precoder().matmul(s);
        match self.cfg.noise.snr_reference {
            SnrReference::PaInput => x,
            SnrReference::PaOutput => x.scale_real(self.pa_gain),
        }
    }

    /// `G F_RF P_in F_BB s`, the ideal transmit chain.
    pub fn ideal_transmit(&self, s: &ComplexMatrix<T>) -> ComplexMatrix<T> {
        self.bf.nominal_precoder().scale_real(self.pa_gain).matmul(s)
    }
}

fn check_rows<T: Real>(m: &ComplexMatrix<T>, rows: usize, what: &str) -> Result<()> {
    if m.rows() != rows {
        return invalid(format!("{what} needs {rows} rows, got {}", m.rows()));
    }
    Ok(())
}

/// Transmit chain from symbols `s` (`N_s x T`) to the antenna signal
/// (`N_t x T`).
pub fn tx_chain<T: Real>(
    s: &ComplexMatrix<T>,
    spec: &ChainSpec,
    link: &LinkRealization<T>,
    rng: &RandomSource,
) -> Result<ComplexMatrix<T>> {
    check_rows(s, link.cfg.n_s, "tx symbols")?;
    tx_chain_precoded(&link.bf.f_bb.matmul(s), spec, link, rng)
}

/// Transmit chain from digitally precoded lanes `u` (`L_t x T`), used when a
/// compensator replaces `F_BB`.
pub fn tx_chain_precoded<T: Real>(
    u: &ComplexMatrix<T>,
    spec: &ChainSpec,
    link: &LinkRealization<T>,
    rng: &RandomSource,
) -> Result<ComplexMatrix<T>> {
    check_rows(u, link.cfg.l_t, "precoded block")?;
    let imp = &link.imp;
    let mut v = if spec.dac {
        let var = aqnm_noise_variances(u, &imp.dac);
        let mut r = rng.derive("dac");
        aqnm_with_variances(u, imp.dac.alpha, &var, spec.random_effects.then_some(&mut r))
    } else {
        u.clone()
    };
    v = v.scale_rows(&link.bf.p_in_diag());
    if spec.iq_tx {
        v = iq_imbalance(&v, &imp.iq_tx)?;
    }
    if spec.pn_tx && spec.random_effects {
        v = phase_noise_apply(&v, &imp.pn_tx, &mut rng.derive("pn_tx"));
    }
    let f = if spec.shifter_tx { &link.f_rf_e } else { &link.bf.f_rf };
    let a = f.matmul(&v);
    Ok(if spec.pa_nonlinear {
        rapp_pa(&a, &imp.pa)
    } else {
        linear_pa(&a, T::lit(link.cfg.pa_linear_gain_db))
    })
}

/// Receive chain up to the ADC output (`L_r x T`), before `W_BB^H`.
pub fn rx_chain_rf<T: Real>(
    x: &ComplexMatrix<T>,
    spec: &ChainSpec,
    link: &LinkRealization<T>,
    rng: &RandomSource,
) -> Result<ComplexMatrix<T>> {
    check_rows(x, link.cfg.n_t, "tx signal")?;
    let imp = &link.imp;
    let (whh, chol) = if spec.shifter_rx {
        (&link.whh_e, &link.noise_chol_e)
    } else {
        (&link.whh, &link.noise_chol)
    };
    let mut r = whh.matmul(x);
    if spec.random_effects {
        let mut nr = rng.derive("noise");
        let z = ComplexMatrix::from_fn(r.rows(), r.cols(), |_, _| nr.cgauss(T::one()));
        let n = chol.matmul(&z).scale_real(link.noise_var.sqrt());
        r = &r + &n;
    }
    if spec.iq_rx {
        r = iq_imbalance(&r, &imp.iq_rx)?;
    }
    if spec.pn_rx && spec.random_effects {
        r = phase_noise_apply(&r, &imp.pn_rx, &mut rng.derive("pn_rx"));
    }
    if spec.adc {
        let var = aqnm_noise_variances(&r, &imp.adc);
        let mut q = rng.derive("adc");
        r = aqnm_with_variances(&r, imp.adc.alpha, &var, spec.random_effects.then_some(&mut q));
    }
    Ok(r)
}

/// Receive chain including `W_BB^H` (`N_s x T`).
pub fn rx_chain<T: Real>(
    x: &ComplexMatrix<T>,
    spec: &ChainSpec,
    link: &LinkRealization<T>,
    rng: &RandomSource,
) -> Result<ComplexMatrix<T>> {
    Ok(combine(link, &rx_chain_rf(x, spec, link, rng)?))
}

/// `W_BB^H r`.
pub fn combine<T: Real>(link: &LinkRealization<T>, r: &ComplexMatrix<T>) -> ComplexMatrix<T> {
    link.bf.w_bb.h().matmul(r)
}

/// Full link `s -> y_e`. Tx and Rx draw from separate children of `rng`.
pub fn transmit<T: Real>(
    s: &ComplexMatrix<T>,
    spec: &ChainSpec,
    link: &LinkRealization<T>,
    rng: &RandomSource,
) -> Result<ComplexMatrix<T>> {
    let x = tx_chain(s, spec, link, &rng.derive("tx"))?;
    rx_chain(&x, spec, link, &rng.derive("rx"))
}

/// Inverts `effective` on `y`. Falls back to the pseudo-inverse when the
/// condition number exceeds `1e8`.
pub fn equalize_with<T: Real>(y: &ComplexMatrix<T>, effective: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
    if effective.rows() != effective.cols() || effective.cols() != y.rows() {
        return invalid(format!(
            "equalizer {:?} does not fit block {:?}",
            effective.shape(),
            y.shape()
        ));
    }
    let s = effective.svd().s;
    let smax = s[0];
    let smin = *s.last().unwrap();
    if !(smax > T::zero()) || smin <= smax * T::lit(1e-12) {
        return Err(Error::Singular(format!("effective channel singular values {s:?}")));
    }
    if smax / smin > T::lit(1e8) {
        Ok(effective.pinv(T::lit(1e-12)).matmul(y))
    } else {
        effective.solve(y)
    }
}

pub fn equalize<T: Real>(y: &ComplexMatrix<T>, link: &LinkRealization<T>) -> Result<ComplexMatrix<T>> {
    equalize_with(y, &link.effective)
}

/// `10 log10(||H x||_F^2 / (T sigma^2))`.
pub fn measure_snr<T: Real>(link: &LinkRealization<T>, x: &ComplexMatrix<T>) -> Result<T> {
    if !(link.noise_var > T::zero()) {
        return invalid("noise variance must be positive");
    }
    check_rows(x, link.cfg.n_t, "snr reference signal")?;
    let t = T::from_usize(x.cols().max(1)).unwrap();
    Ok(linear_power_to_db(
        link.channel.h.matmul(x).frobenius_norm_sq() / (t * link.noise_var),
    ))
}

/// Mean complex ratio `sum(y conj(s)) / sum(|s|^2)` between a received
/// block and its reference; its argument is the mean rotation.
pub fn mean_gain<T: Real>(y: &ComplexMatrix<T>, s: &ComplexMatrix<T>) -> Complex<T> {
    let mut num = Complex::from(T::zero());
    let mut den = T::zero();
    for (a, b) in y.as_slice().iter().zip(s.as_slice()) {
        num = num + a * b.conj();
        den += b.norm_sqr();
    }
    num / den
}

//! Hardware impairment models. Each one maps a block (rows = lanes,
//! columns = symbols) to a block of the same shape.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{invalid, Result};
use crate::linalg::ComplexMatrix;
use crate::rng::RandomSource;
use crate::scalar::{db_to_linear_amplitude, Real};

/// How the AQNM distortion factor depends on the resolution `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    /// `beta = (pi sqrt(3) / 2) 2^(-2b)`
    Exponential,
    /// `beta = (pi sqrt(3) / 2) b^(-2)`
    InverseSquare,
}

/// Linearized quantizer `Q(s) = alpha s + q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AqnmParams<T: Real> {
    /// `None` is an infinite-resolution converter.
    pub bits: Option<u32>,
    pub alpha: T,
    pub beta: T,
}

impl<T: Real> AqnmParams<T> {
    pub fn ideal() -> Self {
        Self {
            bits: None,
            alpha: T::one(),
            beta: T::zero(),
        }
    }

    pub fn from_bits(bits: u32, rule: BetaRule) -> Result<Self> {
        if bits == 0 {
            return invalid("converter needs at least one bit");
        }
        let c = std::f64::consts::PI * 3f64.sqrt() / 2.0;
        let beta = match rule {
            BetaRule::Exponential => c * 2f64.powi(-2 * bits as i32),
            BetaRule::InverseSquare => c / f64::from(bits * bits),
        };
        if beta >= 1.0 {
            return invalid(format!("{bits}-bit converter gives beta = {beta} >= 1"));
        }
        Ok(Self {
            bits: Some(bits),
            alpha: T::lit(1.0 - beta),
            beta: T::lit(beta),
        })
    }
}

/// Per-row noise variances `alpha beta mean|x_l|^2` over the block.
pub fn aqnm_noise_variances<T: Real>(x: &ComplexMatrix<T>, p: &AqnmParams<T>) -> Vec<T> {
    x.row_mean_power().into_iter().map(|pw| p.alpha * p.beta * pw).collect()
}

/// `alpha x + q`, with `q` drawn from the block-average row powers of `x`.
pub fn aqnm_quantize<T: Real>(x: &ComplexMatrix<T>, p: &AqnmParams<T>, rng: &mut RandomSource) -> ComplexMatrix<T> {
    let var = aqnm_noise_variances(x, p);
    aqnm_with_variances(x, p.alpha, &var, Some(rng))
}

/// AQNM with explicit per-row noise variances; `rng = None` yields the
/// deterministic part `alpha x` only.
pub fn aqnm_with_variances<T: Real>(
    x: &ComplexMatrix<T>,
    alpha: T,
    var: &[T],
    mut rng: Option<&mut RandomSource>,
) -> ComplexMatrix<T> {
    let mut out = x.scale_real(alpha);
    for (r, &v) in var.iter().enumerate().take(out.rows()) {
        if let Some(rng) = rng.as_deref_mut() {
            if v > T::zero() {
                for z in out.row_mut(r) {
                    *z = *z + rng.cgauss(v);
                }
            }
        }
    }
    out
}

/// Per-chain IQ mismatch: amplitude ratio `g` and phase error `phi` (radians).
#[derive(Clone, Debug, PartialEq)]
pub struct IqImbalanceParams<T: Real> {
    pub gain: Vec<T>,
    pub phase: Vec<T>,
}

impl<T: Real> IqImbalanceParams<T> {
    pub fn ideal(chains: usize) -> Self {
        Self {
            gain: vec![T::one(); chains],
            phase: vec![T::zero(); chains],
        }
    }

    pub fn draw(chains: usize, gain_range: (T, T), phase_max: T, rng: &mut RandomSource) -> Self {
        let mut gain = Vec::with_capacity(chains);
        let mut phase = Vec::with_capacity(chains);
        for _ in 0..chains {
            gain.push(rng.uniform(gain_range.0, gain_range.1));
            phase.push(rng.uniform(-phase_max, phase_max));
        }
        Self { gain, phase }
    }

    pub fn chains(&self) -> usize {
        self.gain.len()
    }

    /// Diagonal of `Gamma_1 = (1 + g e^{j phi}) / 2`.
    pub fn gamma1(&self) -> Vec<Complex<T>> {
        let half = T::lit(0.5);
        self.gain
            .iter()
            .zip(&self.phase)
            .map(|(&g, &p)| (Complex::from(T::one()) + Complex::from_polar(g, p)) * half)
            .collect()
    }

    /// Diagonal of `Gamma_2 = (1 - g e^{j phi}) / 2`.
    pub fn gamma2(&self) -> Vec<Complex<T>> {
        let half = T::lit(0.5);
        self.gain
            .iter()
            .zip(&self.phase)
            .map(|(&g, &p)| (Complex::from(T::one()) - Complex::from_polar(g, p)) * half)
            .collect()
    }
}

/// `Gamma_1 x + Gamma_2 x*`.
pub fn iq_imbalance<T: Real>(x: &ComplexMatrix<T>, p: &IqImbalanceParams<T>) -> Result<ComplexMatrix<T>> {
    if x.rows() != p.chains() {
        return invalid(format!(
            "IQ imbalance has {} chains but the block has {} rows",
            p.chains(),
            x.rows()
        ));
    }
    let g1 = p.gamma1();
    let g2 = p.gamma2();
    let mut out = x.clone();
    for r in 0..out.rows() {
        for z in out.row_mut(r) {
            *z = g1[r] * *z + g2[r] * z.conj();
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseNoiseParams<T: Real> {
    pub variance_rad2: T,
}

/// Rotates every entry by an independent `theta ~ N(0, variance)`.
pub fn phase_noise_apply<T: Real>(
    x: &ComplexMatrix<T>,
    p: &PhaseNoiseParams<T>,
    rng: &mut RandomSource,
) -> ComplexMatrix<T> {
    if p.variance_rad2 == T::zero() {
        return x.clone();
    }
    let sd = p.variance_rad2.sqrt();
    let mut out = x.clone();
    for z in out.as_mut_slice() {
        let th = rng.normal(T::zero(), sd);
        *z = *z * Complex::from_polar(T::one(), th);
    }
    out
}

/// Convention for turning the amplitude error `E_alpha` (dB) into a factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeDb {
    /// `10^(E/10)`
    Div10,
    /// `10^(E/20)`
    Div20,
}

/// Spread of the phase-shifter manufacturing errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShifterSpread {
    pub amp_error_var_db2: f64,
    pub phase_error_std_deg: f64,
    pub amp_convention: AmplitudeDb,
}

impl Default for ShifterSpread {
    fn default() -> Self {
        Self {
            amp_error_var_db2: 1.2,
            phase_error_std_deg: 10.2,
            amp_convention: AmplitudeDb::Div10,
        }
    }
}

impl ShifterSpread {
    pub fn none() -> Self {
        Self {
            amp_error_var_db2: 0.0,
            phase_error_std_deg: 0.0,
            ..Self::default()
        }
    }

    /// One error matrix; entries `10^(E_a/div) e^{j E_phi}`.
    pub fn draw<T: Real>(&self, rows: usize, cols: usize, rng: &mut RandomSource) -> ComplexMatrix<T> {
        let sa = T::lit(self.amp_error_var_db2.sqrt());
        let sp = T::lit(self.phase_error_std_deg.to_radians());
        let div = T::lit(match self.amp_convention {
            AmplitudeDb::Div10 => 10.0,
            AmplitudeDb::Div20 => 20.0,
        });
        ComplexMatrix::from_fn(rows, cols, |_, _| {
            let ea = rng.normal(T::zero(), sa);
            let ep = rng.normal(T::zero(), sp);
            Complex::from_polar(T::lit(10.0).powf(ea / div), ep)
        })
    }
}

/// Frozen per-device error matrices for the analog precoder and combiner.
#[derive(Clone, Debug, PartialEq)]
pub struct ShifterErrorParams<T: Real> {
    /// `N_t x L_t`
    pub e_f: ComplexMatrix<T>,
    /// `N_r x L_r`
    pub e_w: ComplexMatrix<T>,
}

impl<T: Real> ShifterErrorParams<T> {
    pub fn draw(cfg: &SystemConfig, spread: &ShifterSpread, rng: &mut RandomSource) -> Self {
        let mut rt = rng.derive("shifter.tx");
        let mut rr = rng.derive("shifter.rx");
        Self {
            e_f: spread.draw(cfg.n_t, cfg.l_t, &mut rt),
            e_w: spread.draw(cfg.n_r, cfg.l_r, &mut rr),
        }
    }

    pub fn none(cfg: &SystemConfig) -> Self {
        let one = Complex::from(T::one());
        Self {
            e_f: ComplexMatrix::from_fn(cfg.n_t, cfg.l_t, |_, _| one),
            e_w: ComplexMatrix::from_fn(cfg.n_r, cfg.l_r, |_, _| one),
        }
    }
}

/// `F_RF ⊙ E`.
pub fn inject_shifter_errors<T: Real>(
    analog: &ComplexMatrix<T>,
    errors: &ComplexMatrix<T>,
) -> Result<ComplexMatrix<T>> {
    analog.hadamard(errors)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleUnit {
    Degrees,
    Radians,
}

/// Modified Rapp model. Amplitudes in sqrt(mW).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RappPaParams {
    pub alpha_a: f64,
    pub x_sat: f64,
    pub sigma_a: f64,
    pub alpha_phi: f64,
    pub beta_phi: f64,
    pub q1: f64,
    pub q2: f64,
    /// Unit of the AM-PM curve's output.
    pub am_pm_unit: AngleUnit,
}

impl Default for RappPaParams {
    fn default() -> Self {
        Self {
            alpha_a: 4.708,
            x_sat: 0.663,
            sigma_a: 1.603,
            alpha_phi: -740.2,
            beta_phi: 0.298,
            q1: 1.945,
            q2: 1.797,
            am_pm_unit: AngleUnit::Degrees,
        }
    }
}

impl RappPaParams {
    /// AM-AM: `alpha_a r / (1 + (alpha_a r / x_sat)^{2 sigma})^{1/(2 sigma)}`.
    pub fn am_am<T: Real>(&self, r: T) -> T {
        let two_s = T::lit(2.0 * self.sigma_a);
        let xs = T::lit(self.x_sat);
        let lin = T::lit(self.alpha_a) * r;
        let u = lin / xs;
        if u <= T::one() {
            lin / (T::one() + u.powf(two_s)).powf(two_s.recip())
        } else {
            xs / (u.powf(-two_s) + T::one()).powf(two_s.recip())
        }
    }

    /// AM-PM phase advance in radians.
    pub fn am_pm<T: Real>(&self, r: T) -> T {
        if r == T::zero() {
            return T::zero();
        }
        let v = T::lit(self.alpha_phi) * r.powf(T::lit(self.q1))
            / (T::one() + (r / T::lit(self.beta_phi)).powf(T::lit(self.q2)));
        match self.am_pm_unit {
            AngleUnit::Degrees => v.to_radians(),
            AngleUnit::Radians => v,
        }
    }

    /// Small-signal magnitude gain in dB.
    pub fn small_signal_gain_db(&self) -> f64 {
        20.0 * self.alpha_a.log10()
    }
}

pub fn rapp_pa<T: Real>(x: &ComplexMatrix<T>, p: &RappPaParams) -> ComplexMatrix<T> {
    x.map(|z| {
        let r = z.norm();
        if r == T::zero() {
            return Complex::from(T::zero());
        }
        Complex::from_polar(p.am_am(r), z.arg() + p.am_pm(r))
    })
}

/// Ideal amplifier with magnitude gain `10^(gain_db/20)`.
pub fn linear_pa<T: Real>(x: &ComplexMatrix<T>, gain_db: T) -> ComplexMatrix<T> {
    x.scale_real(db_to_linear_amplitude(gain_db))
}

/// Impairment parameters with units in the key names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpairmentConfig {
    pub dac_bits: u32,
    pub adc_bits: u32,
    pub beta_rule: BetaRule,
    pub iq_gain_min: f64,
    pub iq_gain_max: f64,
    pub iq_phase_max_deg: f64,
    pub phase_noise_var_rad2: f64,
    pub shifter: ShifterSpread,
    pub pa: RappPaParams,
}

impl Default for ImpairmentConfig {
    fn default() -> Self {
        Self {
            dac_bits: 4,
            adc_bits: 4,
            beta_rule: BetaRule::Exponential,
            iq_gain_min: 0.9,
            iq_gain_max: 1.1,
            iq_phase_max_deg: 20.0,
            phase_noise_var_rad2: 1e-2,
            shifter: ShifterSpread::default(),
            pa: RappPaParams::default(),
        }
    }
}

impl ImpairmentConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, b) in [("dac_bits", self.dac_bits), ("adc_bits", self.adc_bits)] {
            if let Err(e) = AqnmParams::<f64>::from_bits(b, self.beta_rule) {
                v.push(format!("{name}: {e}"));
            }
        }
        if !(self.iq_gain_min > 0.0 && self.iq_gain_min <= self.iq_gain_max) {
            v.push("need 0 < iq_gain_min <= iq_gain_max".into());
        }
        if !(self.iq_phase_max_deg >= 0.0) {
            v.push("iq_phase_max_deg must be nonnegative".into());
        }
        if !(self.phase_noise_var_rad2 >= 0.0) {
            v.push("phase_noise_var_rad2 must be nonnegative".into());
        }
        if !(self.shifter.amp_error_var_db2 >= 0.0 && self.shifter.phase_error_std_deg >= 0.0) {
            v.push("shifter error spreads must be nonnegative".into());
        }
        let pa = &self.pa;
        if !(pa.alpha_a > 0.0 && pa.x_sat > 0.0 && pa.sigma_a > 0.0 && pa.beta_phi > 0.0) {
            v.push("PA alpha_a, x_sat, sigma_a and beta_phi must be positive".into());
        }
        v
    }

    /// Draws the frozen per-device parameters. Each piece uses its own child
    /// stream of `rng`.
    pub fn draw<T: Real>(&self, cfg: &SystemConfig, rng: &RandomSource) -> Result<ImpairmentSet<T>> {
        let v = self.violations();
        if !v.is_empty() {
            return invalid(v.join("; "));
        }
        let g = (T::lit(self.iq_gain_min), T::lit(self.iq_gain_max));
        let ph = T::lit(self.iq_phase_max_deg.to_radians());
        Ok(ImpairmentSet {
            dac: AqnmParams::from_bits(self.dac_bits, self.beta_rule)?,
            adc: AqnmParams::from_bits(self.adc_bits, self.beta_rule)?,
            iq_tx: IqImbalanceParams::draw(cfg.l_t, g, ph, &mut rng.derive("iq.tx")),
            iq_rx: IqImbalanceParams::draw(cfg.l_r, g, ph, &mut rng.derive("iq.rx")),
            pn_tx: PhaseNoiseParams {
                variance_rad2: T::lit(self.phase_noise_var_rad2),
            },
            pn_rx: PhaseNoiseParams {
                variance_rad2: T::lit(self.phase_noise_var_rad2),
            },
            shifters: ShifterErrorParams::draw(cfg, &self.shifter, &mut rng.derive("shifter")),
            pa: self.pa.clone(),
        })
    }
}

/// One device instance: converter resolutions, frozen mismatches and the PA.
#[derive(Clone, Debug)]
pub struct ImpairmentSet<T: Real> {
    pub dac: AqnmParams<T>,
    pub adc: AqnmParams<T>,
    pub iq_tx: IqImbalanceParams<T>,
    pub iq_rx: IqImbalanceParams<T>,
    pub pn_tx: PhaseNoiseParams<T>,
    pub pn_rx: PhaseNoiseParams<T>,
    pub shifters: ShifterErrorParams<T>,
    pub pa: RappPaParams,
}

impl<T: Real> ImpairmentSet<T> {
    /// Parameters under which every impairment reduces to the identity.
    pub fn ideal(cfg: &SystemConfig) -> Self {
        Self {
            dac: AqnmParams::ideal(),
            adc: AqnmParams::ideal(),
            iq_tx: IqImbalanceParams::ideal(cfg.l_t),
            iq_rx: IqImbalanceParams::ideal(cfg.l_r),
            pn_tx: PhaseNoiseParams {
                variance_rad2: T::zero(),
            },
            pn_rx: PhaseNoiseParams {
                variance_rad2: T::zero(),
            },
            shifters: ShifterErrorParams::none(cfg),
            pa: RappPaParams::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type M = ComplexMatrix<f64>;
    type C = Complex<f64>;

    fn unit_power_block(rows: usize, cols: usize, seed: u64) -> M {
        let mut rng = RandomSource::new(seed);
        ComplexMatrix::from_fn(rows, cols, |_, _| {
            Complex::from_polar(1.0, rng.uniform(0.0, std::f64::consts::TAU))
        })
    }

    #[test]
    fn beta_values() {
        let p = AqnmParams::<f64>::from_bits(4, BetaRule::Exponential).unwrap();
        assert!((p.beta - 0.010_627).abs() < 1e-6);
        assert!((p.alpha + p.beta - 1.0).abs() < 1e-15);
        let lit = AqnmParams::<f64>::from_bits(4, BetaRule::InverseSquare).unwrap();
        assert!((lit.beta - std::f64::consts::PI * 3f64.sqrt() / 32.0).abs() < 1e-12);
        assert!(AqnmParams::<f64>::from_bits(1, BetaRule::InverseSquare).is_err());
        let mut last = 1.0;
        for b in 1..12 {
            let p = AqnmParams::<f64>::from_bits(b, BetaRule::Exponential).unwrap();
            assert!(p.beta < last);
            last = p.beta;
        }
    }

    #[test]
    fn aqnm_identity_and_zero() {
        let x = unit_power_block(3, 50, 1);
        let mut rng = RandomSource::new(2);
        assert_eq!(aqnm_quantize(&x, &AqnmParams::ideal(), &mut rng), x);
        let p = AqnmParams::from_bits(3, BetaRule::Exponential).unwrap();
        let z = M::zeros(3, 50);
        assert_eq!(aqnm_quantize(&z, &p, &mut rng), z);
    }

    #[test]
    fn aqnm_noise_moment() {
        for b in [2, 4, 8] {
            let p = AqnmParams::<f64>::from_bits(b, BetaRule::Exponential).unwrap();
            let x = unit_power_block(1, 100_000, 3);
            let out = aqnm_quantize(&x, &p, &mut RandomSource::new(4));
            let q = &out - &x.scale_real(p.alpha);
            let got = q.frobenius_norm_sq() / 1e5;
            let want = p.alpha * p.beta;
            assert!((got / want - 1.0).abs() < 0.03, "b={b}: {got} vs {want}");
        }
    }

    #[test]
    fn iq_gamma_identity() {
        let mut rng = RandomSource::new(5);
        let p = IqImbalanceParams::<f64>::draw(8, (0.9, 1.1), 0.35, &mut rng);
        for (a, b) in p.gamma1().iter().zip(p.gamma2()) {
            assert!((a + b - C::new(1.0, 0.0)).norm() < 1e-15);
        }
        let id = IqImbalanceParams::<f64>::ideal(3);
        assert!(id.gamma2().iter().all(|z| z.norm() == 0.0));
        let x = unit_power_block(3, 10, 6);
        assert_eq!(iq_imbalance(&x, &id).unwrap(), x);
    }

    #[test]
    fn iq_real_symbol_passes_unchanged() {
        let p = IqImbalanceParams {
            gain: vec![0.9],
            phase: vec![20f64.to_radians()],
        };
        let x = M::from_rows(&[vec![C::new(1.0, 0.0)]]).unwrap();
        let y = iq_imbalance(&x, &p).unwrap();
        assert!((y[(0, 0)] - C::new(1.0, 0.0)).norm() < 1e-15);
        assert!(iq_imbalance(&M::zeros(2, 1), &p).is_err());
    }

    #[test]
    fn phase_noise_moments() {
        let x = M::from_fn(1, 100_000, |_, _| C::new(1.0, 0.0));
        let p = PhaseNoiseParams { variance_rad2: 1e-2 };
        let y = phase_noise_apply(&x, &p, &mut RandomSource::new(7));
        for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }
        let var = y.as_slice().iter().map(|z| z.arg().powi(2)).sum::<f64>() / 1e5;
        assert!((var / 1e-2 - 1.0).abs() < 0.05, "{var}");
        let zero = PhaseNoiseParams { variance_rad2: 0.0 };
        assert_eq!(phase_noise_apply(&x, &zero, &mut RandomSource::new(7)), x);
    }

    #[test]
    fn shifter_errors() {
        let cfg = SystemConfig::default();
        let mut rng = RandomSource::new(8);
        let none = ShifterErrorParams::<f64>::draw(&cfg, &ShifterSpread::none(), &mut rng);
        let f = M::from_fn(256, 4, |i, j| Complex::from_polar(1.0 / 16.0, (i * j) as f64));
        assert_eq!(inject_shifter_errors(&f, &none.e_f).unwrap(), f);

        let rng = RandomSource::new(9);
        let spread = ShifterSpread::default();
        let sa = spread.amp_error_var_db2.sqrt();
        let mut ea_sum = 0.0;
        let mut draw_rng = rng.derive("check");
        let e: M = spread.draw(256, 4, &mut draw_rng);
        let fe = inject_shifter_errors(&f, &e).unwrap();
        for (z, err) in fe.as_slice().iter().zip(e.as_slice()) {
            let ea = 10.0 * err.norm().log10();
            ea_sum += ea;
            assert!((z.norm() - 10f64.powf(ea / 10.0) / 16.0).abs() < 1e-14);
        }
        let n = 1024.0;
        assert!((ea_sum / n).abs() < 3.0 * sa / n.sqrt());
        assert!(inject_shifter_errors(&f, &M::zeros(4, 4)).is_err());
    }

    #[test]
    fn rapp_limits() {
        let p = RappPaParams::default();
        let zero = M::zeros(1, 1);
        assert_eq!(rapp_pa(&zero, &p)[(0, 0)], C::new(0.0, 0.0));
        assert_eq!(p.am_pm(0.0_f64), 0.0);
        let big: f64 = p.am_am(1e9);
        assert!((big / 0.663 - 1.0).abs() < 1e-3);
        let r = 1e-4_f64;
        assert!((p.am_am(r) / r / 4.708 - 1.0).abs() < 1e-3);
        assert!((p.small_signal_gain_db() - 13.457).abs() < 0.01);
    }

    #[test]
    fn rapp_branches_agree_at_switch() {
        let p = RappPaParams::default();
        let r0 = p.x_sat / p.alpha_a;
        let a: f64 = p.am_am(r0 * (1.0 - 1e-12));
        let b: f64 = p.am_am(r0 * (1.0 + 1e-12));
        assert!((a - b).abs() < 1e-10);
        assert!((a - p.x_sat / 2f64.powf(1.0 / (2.0 * p.sigma_a))).abs() < 1e-9);
    }

    #[test]
    fn linear_and_rapp_small_signal() {
        let x = M::from_rows(&[vec![C::new(1.0, 0.0)]]).unwrap();
        assert_eq!(linear_pa(&x, 0.0), x);
        assert!((linear_pa(&x, 13.0)[(0, 0)].norm() - 4.466_835_9).abs() < 1e-6);
        // -40 dBm drive: amplitude 1e-2 sqrt(mW).
        let d = M::from_rows(&[vec![C::new(1e-2, 0.0)]]).unwrap();
        let ratio = rapp_pa(&d, &RappPaParams::default())[(0, 0)].norm() / linear_pa(&d, 13.0)[(0, 0)].norm();
        assert!((ratio - 4.708 / 10f64.powf(0.65)).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn draw_is_reproducible_and_streams_are_independent() {
        let cfg = SystemConfig::toy(16, 2);
        let rng = RandomSource::new(10);
        let a = ImpairmentConfig::default().draw::<f64>(&cfg, &rng).unwrap();
        let b = ImpairmentConfig::default().draw::<f64>(&cfg, &rng).unwrap();
        assert_eq!(a.iq_tx, b.iq_tx);
        let other = ImpairmentConfig {
            iq_gain_max: 1.2,
            ..ImpairmentConfig::default()
        };
        let c = other.draw::<f64>(&cfg, &rng).unwrap();
        assert_eq!(a.shifters, c.shifters);
        let bad = ImpairmentConfig {
            dac_bits: 0,
            phase_noise_var_rad2: -1.0,
            ..ImpairmentConfig::default()
        };
        assert_eq!(bad.violations().len(), 2);
    }

    proptest! {
        #[test]
        fn am_am_monotone_and_bounded(a in 0.0f64..5.0, d in 1e-9f64..1.0) {
            let p = RappPaParams::default();
            let lo = p.am_am(a);
            let hi = p.am_am(a + d);
            prop_assert!(lo < hi);
            prop_assert!(hi < p.x_sat);
        }

        #[test]
        fn impairments_preserve_shape(rows in 1usize..5, cols in 1usize..20, seed in 0u64..1000) {
            let x = unit_power_block(rows, cols, seed);
            let mut rng = RandomSource::new(seed);
            let q = AqnmParams::from_bits(3, BetaRule::Exponential).unwrap();
            prop_assert_eq!(aqnm_quantize(&x, &q, &mut rng).shape(), x.shape());
            let iq = IqImbalanceParams::draw(rows, (0.9, 1.1), 0.3, &mut rng);
            prop_assert_eq!(iq_imbalance(&x, &iq).unwrap().shape(), x.shape());
            let pn = PhaseNoiseParams { variance_rad2: 0.01 };
            prop_assert_eq!(phase_noise_apply(&x, &pn, &mut rng).shape(), x.shape());
            prop_assert_eq!(rapp_pa(&x, &RappPaParams::default()).shape(), x.shape());
        }
    }
}

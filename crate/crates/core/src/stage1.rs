//! Structured surrogate of the impaired link: sub-network banks interleaved
//! with the nominal linear stages,
//! `y = W_BB^H NN3(W_RF^H H NN2(F_RF P_in NN1(s1)))`.

use serde::{Deserialize, Serialize};

use crate::chain::{transmit, ChainSpec, LinkRealization};
use crate::error::{invalid, Error, Result};
use crate::linalg::ComplexMatrix;
use crate::modem::Qam16;
use crate::neural::{fit, subnn_param_count, Bank, BankCache, Init, TrainingConfig, TrainingReport};
use crate::rng::RandomSource;
use crate::scalar::Real;

/// Architecture of the antenna-side bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlimMode {
    /// One sub-network per antenna.
    Full,
    /// One sub-network shared by every antenna.
    Shared,
    /// Bank replaced by the linear PA gain.
    Removed,
}

impl SlimMode {
    pub fn label(self) -> &'static str {
        match self {
            SlimMode::Full => "full",
            SlimMode::Shared => "shared",
            SlimMode::Removed => "removed",
        }
    }
}

/// A slimming step applied by [`slim`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slim {
    Prune(usize),
    ShareNn2,
    RemoveNn2,
}

/// Trainable parameter count of the surrogate.
pub fn stage1_param_count(l_t: usize, n_t: usize, l_r: usize, n_h: usize, mode: SlimMode) -> usize {
    let nets = match mode {
        SlimMode::Full => l_t + n_t + l_r,
        SlimMode::Shared => l_t + 1 + l_r,
        SlimMode::Removed => l_t + l_r,
    };
    nets * subnn_param_count(n_h)
}

/// Nominal (error-free) linear stages of a link at one power.
#[derive(Clone, Debug)]
pub struct FixedMaps<T: Real> {
    /// `F_RF P_in` (`N_t x L_t`)
    pub a1: ComplexMatrix<T>,
    a1_h: ComplexMatrix<T>,
    /// `W_RF^H H` (`L_r x N_t`)
    pub a2: ComplexMatrix<T>,
    a2_h: ComplexMatrix<T>,
    /// `W_BB^H` (`N_s x L_r`)
    pub wbb_h: ComplexMatrix<T>,
    wbb: ComplexMatrix<T>,
    /// Nominal digital precoder, for mapping symbols to `s1`.
    pub f_bb: ComplexMatrix<T>,
    pub pa_gain: T,
}

impl<T: Real> FixedMaps<T> {
    pub fn from_link(link: &LinkRealization<T>) -> Self {
        let bf = &link.bf;
        let a1 = bf.f_rf.matmul(&ComplexMatrix::from_diag(&bf.p_in_diag()));
        let a2 = link.combined_channel().clone();
        let wbb_h = bf.w_bb.h();
        Self {
            a1_h: a1.h(),
            a1,
            a2_h: a2.h(),
            a2,
            wbb: bf.w_bb.clone(),
            wbb_h,
            f_bb: bf.f_bb.clone(),
            pa_gain: link.pa_gain(),
        }
    }
}

/// Signal RMS at each stage of the nominal chain for unit-energy symbols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageScales {
    /// After `F_BB`, per RF chain.
    pub precoded: f64,
    /// After `F_RF P_in`, per antenna.
    pub antenna: f64,
    /// After the channel and `W_RF^H`, per RF chain.
    pub combined: f64,
    /// After `W_BB^H`, per stream.
    pub output: f64,
}

impl StageScales {
    pub fn from_link<T: Real>(link: &LinkRealization<T>) -> Self {
        let bf = &link.bf;
        let rms = |m: &ComplexMatrix<T>, rows: usize| (m.frobenius_norm_sq().as_f64() / rows as f64).sqrt();
        let k = bf.nominal_precoder();
        let g = link.pa_gain().as_f64();
        Self {
            precoded: rms(&bf.f_bb, bf.f_bb.rows()),
            antenna: rms(&k, k.rows()),
            combined: g * rms(&link.combined_channel().matmul(&k), bf.w_rf.cols()),
            output: rms(link.effective_matrix(), bf.w_bb.cols()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StructuredDNN<T: Real> {
    pub mode: SlimMode,
    pub n_h: usize,
    pub power_dbm: f64,
    pub bank1: Bank,
    pub bank2: Option<Bank>,
    pub bank3: Bank,
    pub maps: FixedMaps<T>,
    pub scales: StageScales,
    /// Flat parameters: bank 1, bank 2 (if any), bank 3.
    pub params: Vec<T>,
}

/// Intermediate signals of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Stage1Cache<T: Real> {
    pub s1: ComplexMatrix<T>,
    pub s2: ComplexMatrix<T>,
    pub s3: ComplexMatrix<T>,
    pub s4: ComplexMatrix<T>,
    pub s5: ComplexMatrix<T>,
    pub s6: ComplexMatrix<T>,
    c1: BankCache<T>,
    c2: BankCache<T>,
    c3: BankCache<T>,
}

impl<T: Real> StructuredDNN<T> {
    pub fn new(link: &LinkRealization<T>, n_h: usize, mode: SlimMode, init: Init, rng: &RandomSource) -> Result<Self> {
        if n_h == 0 {
            return invalid("n_h must be at least 1");
        }
        let cfg = &link.cfg;
        let sc = StageScales::from_link(link);
        let g = link.pa_gain().as_f64();
        let bank1 = Bank::new(n_h, cfg.l_t, false, sc.precoded, sc.precoded);
        let bank2 = match mode {
            SlimMode::Full => Some(Bank::new(n_h, cfg.n_t, false, sc.antenna, g * sc.antenna)),
            SlimMode::Shared => Some(Bank::new(n_h, cfg.n_t, true, sc.antenna, g * sc.antenna)),
            SlimMode::Removed => None,
        };
        let bank3 = Bank::new(n_h, cfg.l_r, false, sc.combined, sc.combined);
        let n = bank1.param_count() + bank2.as_ref().map_or(0, Bank::param_count) + bank3.param_count();
        let mut model = Self {
            mode,
            n_h,
            power_dbm: link.power_dbm.as_f64(),
            bank1,
            bank2,
            bank3,
            maps: FixedMaps::from_link(link),
            scales: sc,
            params: vec![T::zero(); n],
        };
        model.reinit(init, rng);
        Ok(model)
    }

    pub fn reinit(&mut self, init: Init, rng: &RandomSource) {
        let (p1, p2, p3) = split3(&mut self.params, &self.bank1, self.bank2.as_ref());
        self.bank1.init(p1, init, &mut rng.derive("nn1"));
        if let Some(b) = &self.bank2 {
            b.init(p2, init, &mut rng.derive("nn2"));
        }
        self.bank3.init(p3, init, &mut rng.derive("nn3"));
    }

    pub fn param_count(&self) -> usize {
        self.bank1.param_count() + self.bank2.as_ref().map_or(0, Bank::param_count) + self.bank3.param_count()
    }

    pub fn n_s(&self) -> usize {
        self.maps.wbb_h.rows()
    }

    pub fn l_t(&self) -> usize {
        self.bank1.lanes
    }

    /// Mean `|y|^2` per output entry of the nominal chain; the loss is
    /// normalized by it.
    pub fn output_power(&self) -> T {
        T::lit(self.scales.output * self.scales.output)
    }

    fn bank_slices<'a>(&self, p: &'a [T]) -> (&'a [T], &'a [T], &'a [T]) {
        let n1 = self.bank1.param_count();
        let n2 = self.bank2.as_ref().map_or(0, Bank::param_count);
        (&p[..n1], &p[n1..n1 + n2], &p[n1 + n2..])
    }

    pub fn forward(&self, s1: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
        self.forward_with(&self.params, s1, None)
    }

    /// Forward pass with explicit parameters, optionally caching intermediates.
    pub fn forward_with(
        &self,
        params: &[T],
        s1: &ComplexMatrix<T>,
        cache: Option<&mut Stage1Cache<T>>,
    ) -> Result<ComplexMatrix<T>> {
        if params.len() != self.param_count() {
            return invalid(format!(
                "model has {} parameters, got {}",
                self.param_count(),
                params.len()
            ));
        }
        if s1.rows() != self.l_t() {
            return invalid(format!("model expects {} input rows, got {}", self.l_t(), s1.rows()));
        }
        let (p1, p2, p3) = self.bank_slices(params);
        match cache {
            Some(c) => {
                c.s1 = s1.clone();
                c.s2 = self.bank1.forward(p1, s1, Some(&mut c.c1))?;
                c.s3 = self.maps.a1.matmul(&c.s2);
                c.s4 = match &self.bank2 {
                    Some(b) => b.forward(p2, &c.s3, Some(&mut c.c2))?,
                    None => c.s3.scale_real(self.maps.pa_gain),
                };
                c.s5 = self.maps.a2.matmul(&c.s4);
                c.s6 = self.bank3.forward(p3, &c.s5, Some(&mut c.c3))?;
                Ok(self.maps.wbb_h.matmul(&c.s6))
            }
            None => {
                let s2 = self.bank1.forward(p1, s1, None)?;
                let s3 = self.maps.a1.matmul(&s2);
                let s4 = match &self.bank2 {
                    Some(b) => b.forward(p2, &s3, None)?,
                    None => s3.scale_real(self.maps.pa_gain),
                };
                let s6 = self.bank3.forward(p3, &self.maps.a2.matmul(&s4), None)?;
                Ok(self.maps.wbb_h.matmul(&s6))
            }
        }
    }

    /// RF-chain level output `s6` (before `W_BB^H`).
    pub fn chain_output(&self, s1: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
        let mut c = Stage1Cache::default();
        self.forward_with(&self.params, s1, Some(&mut c))?;
        Ok(c.s6)
    }

    /// Back-propagates `g_y` (real-pair convention). Accumulates parameter
    /// gradients into `grad` when given and returns the gradient w.r.t. `s1`.
    pub fn backward_with(
        &self,
        params: &[T],
        cache: &Stage1Cache<T>,
        g_y: &ComplexMatrix<T>,
        grad: Option<&mut [T]>,
    ) -> Result<ComplexMatrix<T>> {
        let (p1, p2, p3) = self.bank_slices(params);
        let n = self.param_count();
        let mut scratch;
        let grad = match grad {
            Some(g) => {
                if g.len() != n {
                    return invalid("gradient buffer has the wrong length");
                }
                g
            }
            None => {
                scratch = vec![T::zero(); n];
                &mut scratch[..]
            }
        };
        let (g1, g2, g3) = split3(grad, &self.bank1, self.bank2.as_ref());
        let g_s6 = self.maps.wbb.matmul(g_y);
        let g_s5 = self.bank3.backward(p3, &cache.s5, &cache.c3, &g_s6, g3)?;
        let g_s4 = self.maps.a2_h.matmul(&g_s5);
        let g_s3 = match &self.bank2 {
            Some(b) => b.backward(p2, &cache.s3, &cache.c2, &g_s4, g2)?,
            None => g_s4.scale_real(self.maps.pa_gain),
        };
        let g_s2 = self.maps.a1_h.matmul(&g_s3);
        self.bank1.backward(p1, &cache.s1, &cache.c1, &g_s2, g1)
    }
}

fn split3<'a, T>(p: &'a mut [T], b1: &Bank, b2: Option<&Bank>) -> (&'a mut [T], &'a mut [T], &'a mut [T]) {
    let n1 = b1.param_count();
    let n2 = b2.map_or(0, Bank::param_count);
    let (a, rest) = p.split_at_mut(n1);
    let (b, c) = rest.split_at_mut(n2);
    (a, b, c)
}

pub fn dnn_forward<T: Real>(model: &StructuredDNN<T>, s1: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
    model.forward(s1)
}

/// Parameter gradient of `Re<g_y, y(s1)>` for the model's own parameters.
pub fn dnn_backward<T: Real>(
    model: &StructuredDNN<T>,
    s1: &ComplexMatrix<T>,
    g_y: &ComplexMatrix<T>,
) -> Result<Vec<T>> {
    let mut cache = Stage1Cache::default();
    model.forward_with(&model.params, s1, Some(&mut cache))?;
    let mut grad = vec![T::zero(); model.param_count()];
    model.backward_with(&model.params, &cache, g_y, Some(&mut grad))?;
    Ok(grad)
}

/// Normalized squared error `sum |yhat - y|^2 / (entries * power)` and its
/// gradient with respect to `yhat`.
pub fn normalized_mse<T: Real>(yhat: &ComplexMatrix<T>, y: &ComplexMatrix<T>, power: T) -> (T, ComplexMatrix<T>) {
    let d = yhat - y;
    let k = T::from_usize(d.as_slice().len()).unwrap() * power;
    (d.frobenius_norm_sq() / k, d.scale_real(T::lit(2.0) / k))
}

/// Training pairs for the surrogate, generated at one transmit power.
#[derive(Clone, Debug)]
pub struct Stage1Dataset<T: Real> {
    /// Symbols `N_s x M`.
    pub s: ComplexMatrix<T>,
    /// Digitally precoded inputs `F_BB s`.
    pub s1: ComplexMatrix<T>,
    /// Full impaired chain outputs.
    pub y_e: ComplexMatrix<T>,
    /// Impaired chain with quantization, phase and thermal noise switched off.
    pub y_s: ComplexMatrix<T>,
    /// Ideal noiseless outputs.
    pub y_i: ComplexMatrix<T>,
    pub power_dbm: f64,
    pub seed: u64,
}

/// Block length used when streaming symbols through the simulated chain.
pub const SIM_BLOCK: usize = 2000;

impl<T: Real> Stage1Dataset<T> {
    /// `m` random 16-QAM symbol vectors through `spec` on `link`.
    pub fn generate(link: &LinkRealization<T>, spec: &ChainSpec, m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return invalid("dataset needs at least one sample");
        }
        let root = RandomSource::new(seed);
        let s = Qam16::new().random_symbols(link.cfg.n_s, m, &mut root.derive("symbols"));
        let mut y_e = Vec::new();
        let mut y_s = Vec::new();
        for (b, start) in (0..m).step_by(SIM_BLOCK).enumerate() {
            let blk = s.cols_range(start, (start + SIM_BLOCK).min(m));
            let rng = root.derive_indexed("block", b as u64);
            y_e.push(transmit(&blk, spec, link, &rng)?);
            y_s.push(transmit(&blk, &spec.deterministic(), link, &rng)?);
        }
        Ok(Self {
            s1: link.bf.f_bb.matmul(&s),
            y_i: link.ideal_output(&s),
            y_e: ComplexMatrix::hstack(&y_e)?,
            y_s: ComplexMatrix::hstack(&y_s)?,
            s,
            power_dbm: link.power_dbm.as_f64(),
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.s.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Power equality used by the retraining policy.
pub fn same_power(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// Fits the surrogate to `target` (usually `data.y_e`).
pub fn train_stage1_on<T: Real>(
    model: &mut StructuredDNN<T>,
    s1: &ComplexMatrix<T>,
    target: &ComplexMatrix<T>,
    tcfg: &TrainingConfig,
) -> Result<TrainingReport> {
    if s1.cols() != target.cols() || target.rows() != model.n_s() {
        return invalid("inputs and targets do not match");
    }
    let power = model.output_power();
    let mut params = std::mem::take(&mut model.params);
    let mut cache = Stage1Cache::default();
    let report = fit(&mut params, s1.cols(), tcfg, |p, idx, grad| {
        let x = s1.select_cols(idx);
        let y = target.select_cols(idx);
        let yhat = model.forward_with(p, &x, Some(&mut cache))?;
        let (loss, g) = normalized_mse(&yhat, &y, power);
        model.backward_with(p, &cache, &g, Some(grad))?;
        Ok(loss)
    });
    model.params = params;
    report
}

/// Minimizes the normalized MSE between the surrogate and the impaired outputs.
pub fn train_stage1<T: Real>(
    model: &mut StructuredDNN<T>,
    data: &Stage1Dataset<T>,
    tcfg: &TrainingConfig,
) -> Result<TrainingReport> {
    if !same_power(model.power_dbm, data.power_dbm) {
        return Err(Error::Policy(format!(
            "model built for {} dBm cannot train on {} dBm data",
            model.power_dbm, data.power_dbm
        )));
    }
    train_stage1_on(model, &data.s1, &data.y_e, tcfg)
}

/// Normalized loss of the model on a data set, evaluated in chunks.
pub fn evaluate_loss<T: Real>(
    model: &StructuredDNN<T>,
    s1: &ComplexMatrix<T>,
    target: &ComplexMatrix<T>,
) -> Result<f64> {
    let mut total = 0.0;
    let m = s1.cols();
    for start in (0..m).step_by(SIM_BLOCK) {
        let end = (start + SIM_BLOCK).min(m);
        let yhat = model.forward(&s1.cols_range(start, end))?;
        let (l, _) = normalized_mse(&yhat, &target.cols_range(start, end), model.output_power());
        total += l.as_f64() * (end - start) as f64;
    }
    Ok(total / m as f64)
}

/// Removing the antenna bank is only allowed below `threshold_dbm` unless
/// overridden.
pub fn check_remove_policy(power_dbm: f64, threshold_dbm: f64, allow_high_power: bool) -> Result<()> {
    if power_dbm >= threshold_dbm && !allow_high_power {
        return Err(Error::Policy(format!(
            "removing NN2 requires transmit power below {threshold_dbm} dBm (model is at {power_dbm} dBm)"
        )));
    }
    Ok(())
}

/// Fresh-initialized model with the slimmed architecture. Removing the
/// antenna bank at or above `threshold_dbm` needs `allow_high_power`.
pub fn slim<T: Real>(
    model: &StructuredDNN<T>,
    link: &LinkRealization<T>,
    step: Slim,
    threshold_dbm: f64,
    allow_high_power: bool,
    init: Init,
    rng: &RandomSource,
) -> Result<StructuredDNN<T>> {
    let (n_h, mode) = match step {
        Slim::Prune(n) => {
            if n == 0 || n >= model.n_h {
                return invalid(format!("pruning needs 0 < N_h' < {}, got {n}", model.n_h));
            }
            (n, model.mode)
        }
        Slim::ShareNn2 => {
            if model.mode == SlimMode::Removed {
                return invalid("the antenna bank has already been removed");
            }
            (model.n_h, SlimMode::Shared)
        }
        Slim::RemoveNn2 => {
            check_remove_policy(model.power_dbm, threshold_dbm, allow_high_power)?;
            (model.n_h, SlimMode::Removed)
        }
    };
    if !same_power(link.power_dbm.as_f64(), model.power_dbm) {
        return Err(Error::Policy("link power differs from the model's".into()));
    }
    StructuredDNN::new(link, n_h, mode, init, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelModel;
    use crate::config::SystemConfig;
    use crate::impairments::ImpairmentConfig;
    use num_complex::Complex;

    fn toy(n_t: usize, power: f64) -> LinkRealization<f64> {
        let mut cfg = SystemConfig::toy(n_t, 2);
        cfg.transmit_power_dbm = power;
        LinkRealization::new(&cfg, &ChannelModel::default(), &ImpairmentConfig::default()).unwrap()
    }

    #[test]
    fn parameter_counts_match_formula_and_tally() {
        let cfg = SystemConfig::default();
        let table = [
            (10, SlimMode::Full, 13728),
            (8, SlimMode::Full, 11088),
            (6, SlimMode::Full, 8448),
            (4, SlimMode::Full, 5808),
            (2, SlimMode::Full, 3168),
            (10, SlimMode::Shared, 468),
            (10, SlimMode::Removed, 416),
            (8, SlimMode::Shared, 378),
            (8, SlimMode::Removed, 336),
        ];
        for (n_h, mode, want) in table {
            assert_eq!(stage1_param_count(cfg.l_t, cfg.n_t, cfg.l_r, n_h, mode), want);
        }
        let link = toy(8, 0.0);
        for n_h in [2, 4, 6, 8, 10] {
            for mode in [SlimMode::Full, SlimMode::Shared, SlimMode::Removed] {
                let m = StructuredDNN::new(&link, n_h, mode, Init::Glorot, &RandomSource::new(1)).unwrap();
                assert_eq!(m.param_count(), stage1_param_count(2, 8, 2, n_h, mode));
            }
        }
    }

    #[test]
    fn zero_weight_model_outputs_propagated_biases() {
        let link = toy(8, 0.0);
        for mode in [SlimMode::Full, SlimMode::Removed] {
            let mut m = StructuredDNN::new(&link, 3, mode, Init::Glorot, &RandomSource::new(2)).unwrap();
            m.params.iter_mut().for_each(|v| *v = 0.0);
            let n = m.param_count();
            // Output biases of the bank 3 lanes; with zero weights they fix s6.
            let k = subnn_param_count(3);
            m.params[n - 2 * k + 15] = 0.5;
            m.params[n - 2 * k + 16] = -0.25;
            m.params[n - k + 15] = 1.0;
            m.params[15] = 0.3;
            let s1 = ComplexMatrix::from_fn(2, 3, |i, j| Complex::new(i as f64 + 1.0, j as f64));
            let y = m.forward(&s1).unwrap();
            let c3 = m.scales.combined;
            let s6 = ComplexMatrix::from_fn(2, 3, |i, _| {
                if i == 0 {
                    Complex::new(0.5 * c3, -0.25 * c3)
                } else {
                    Complex::new(c3, 0.0)
                }
            });
            let want = m.maps.wbb_h.matmul(&s6);
            assert!(y.rel_error(&want) < 1e-12, "{mode:?}");
        }
    }

    #[test]
    fn near_identity_model_reproduces_nominal_chain() {
        let link = toy(8, -20.0);
        for mode in [SlimMode::Full, SlimMode::Shared, SlimMode::Removed] {
            let m =
                StructuredDNN::new(&link, 4, mode, Init::NearIdentity { eps: 1e-4 }, &RandomSource::new(3)).unwrap();
            let s = Qam16::new().random_symbols(2, 50, &mut RandomSource::new(4));
            let y = m.forward(&link.bf.f_bb.matmul(&s)).unwrap();
            assert!(y.rel_error(&link.ideal_output(&s)) < 1e-3, "{mode:?}");
        }
    }

    #[test]
    fn shared_equals_full_with_tied_weights() {
        let link = toy(4, 0.0);
        let shared = StructuredDNN::new(&link, 3, SlimMode::Shared, Init::Glorot, &RandomSource::new(5)).unwrap();
        let mut full = StructuredDNN::new(&link, 3, SlimMode::Full, Init::Glorot, &RandomSource::new(5)).unwrap();
        let k = subnn_param_count(3);
        let n1 = shared.bank1.param_count();
        let net2 = &shared.params[n1..n1 + k];
        let mut p = shared.params[..n1].to_vec();
        for _ in 0..4 {
            p.extend_from_slice(net2);
        }
        p.extend_from_slice(&shared.params[n1 + k..]);
        full.params = p;
        let s1 = ComplexMatrix::from_fn(2, 5, |i, j| Complex::new(0.1 * i as f64, 0.2 * j as f64 - 0.3));
        assert_eq!(full.forward(&s1).unwrap(), shared.forward(&s1).unwrap());
        let g = ComplexMatrix::from_fn(2, 5, |i, j| Complex::new(1.0 - i as f64, 0.1 * j as f64));
        let gf = dnn_backward(&full, &s1, &g).unwrap();
        let gs = dnn_backward(&shared, &s1, &g).unwrap();
        for i in 0..k {
            let sum: f64 = (0..4).map(|a| gf[n1 + a * k + i]).sum();
            assert!((sum - gs[n1 + i]).abs() <= 1e-10 * sum.abs().max(1e-12), "{i}");
        }
        assert_eq!(&gf[..n1], &gs[..n1]);
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let link = toy(4, 10.0);
        let mut rng = RandomSource::new(6);
        for mode in [SlimMode::Full, SlimMode::Shared, SlimMode::Removed] {
            let m = StructuredDNN::new(&link, 3, mode, Init::Glorot, &RandomSource::new(7)).unwrap();
            let s1 = link.bf.f_bb.matmul(&Qam16::new().random_symbols(2, 6, &mut rng));
            let target = link.ideal_output(&Qam16::new().random_symbols(2, 6, &mut rng));
            let loss = |p: &[f64]| {
                let y = m.forward_with(p, &s1, None).unwrap();
                normalized_mse(&y, &target, m.output_power()).0
            };
            let mut cache = Stage1Cache::default();
            let y = m.forward_with(&m.params, &s1, Some(&mut cache)).unwrap();
            let (_, g) = normalized_mse(&y, &target, m.output_power());
            let mut grad = vec![0.0; m.param_count()];
            m.backward_with(&m.params, &cache, &g, Some(&mut grad)).unwrap();
            for _ in 0..20 {
                let i = rng.below(m.param_count());
                let h = 1e-6;
                let mut a = m.params.clone();
                let mut b = m.params.clone();
                a[i] += h;
                b[i] -= h;
                let fd = (loss(&a) - loss(&b)) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-4, "{mode:?} param {i}: fd {fd} analytic {}", grad[i]);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let link = toy(4, 0.0);
        let m = StructuredDNN::new(&link, 3, SlimMode::Full, Init::Glorot, &RandomSource::new(8)).unwrap();
        let s1 = ComplexMatrix::from_fn(2, 3, |_, _| Complex::new(0.1, 0.1));
        let g = dnn_backward(&m, &s1, &ComplexMatrix::zeros(2, 3)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn slimming_rules() {
        let hi = toy(8, 15.0);
        let m = StructuredDNN::new(&hi, 10, SlimMode::Full, Init::Glorot, &RandomSource::new(9)).unwrap();
        let r = RandomSource::new(10);
        let p = slim(&m, &hi, Slim::Prune(4), 5.0, false, Init::Glorot, &r).unwrap();
        assert_eq!((p.n_h, p.mode), (4, SlimMode::Full));
        assert!(slim(&m, &hi, Slim::Prune(10), 5.0, false, Init::Glorot, &r).is_err());
        let s = slim(&m, &hi, Slim::ShareNn2, 5.0, false, Init::Glorot, &r).unwrap();
        assert_eq!(s.mode, SlimMode::Shared);
        assert!(matches!(
            slim(&m, &hi, Slim::RemoveNn2, 5.0, false, Init::Glorot, &r),
            Err(Error::Policy(_))
        ));
        assert!(slim(&m, &hi, Slim::RemoveNn2, 5.0, true, Init::Glorot, &r).is_ok());
        let lo = hi.with_power(0.0).unwrap();
        let m_lo = StructuredDNN::new(&lo, 8, SlimMode::Full, Init::Glorot, &r).unwrap();
        assert_eq!(
            slim(&m_lo, &lo, Slim::RemoveNn2, 5.0, false, Init::Glorot, &r)
                .unwrap()
                .mode,
            SlimMode::Removed
        );
    }

    #[test]
    fn training_rejects_power_mismatch() {
        let link = toy(8, 15.0);
        let data = Stage1Dataset::generate(&link.with_power(0.0).unwrap(), &ChainSpec::all(), 64, 1).unwrap();
        let mut m = StructuredDNN::new(&link, 4, SlimMode::Full, Init::Glorot, &RandomSource::new(1)).unwrap();
        assert!(matches!(
            train_stage1(&mut m, &data, &TrainingConfig::default()),
            Err(Error::Policy(_))
        ));
    }

    #[test]
    fn dataset_is_reproducible() {
        let link = toy(8, 5.0);
        let a = Stage1Dataset::generate(&link, &ChainSpec::all(), 2500, 3).unwrap();
        let b = Stage1Dataset::generate(&link, &ChainSpec::all(), 2500, 3).unwrap();
        assert_eq!(a.y_e, b.y_e);
        assert_eq!(a.len(), 2500);
        assert!(a.y_e.rel_error(&a.y_s) > 0.0);
    }
}

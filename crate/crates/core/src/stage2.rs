//! Compensators trained against a frozen surrogate, the direct-DNN
//! baseline, and deployment into the simulated link.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::chain::{equalize, rx_chain, transmit, tx_chain_precoded, ChainSpec, LinkRealization};
use crate::coding::ConvCode;
use crate::error::{invalid, Error, Result};
use crate::io::param_checksum;
use crate::linalg::{right_least_squares, ComplexMatrix};
use crate::modem::{symbol_errors, Qam16};
use crate::neural::{fit, Bank, BankCache, Init, Mlp, MlpTrace, TrainingConfig, TrainingReport};
use crate::rng::RandomSource;
use crate::scalar::Real;
use crate::stage1::{normalized_mse, same_power, Stage1Cache, StageScales, StructuredDNN, SIM_BLOCK};

/// Scales `u` so that its mean column energy is `per_col`; returns the factor.
pub fn normalize_block<T: Real>(u: &ComplexMatrix<T>, per_col: T) -> (ComplexMatrix<T>, T) {
    let e = u.frobenius_norm_sq();
    let c = (per_col * T::from_usize(u.cols()).unwrap() / e).sqrt();
    (u.scale_real(c), c)
}

/// Gradient through [`normalize_block`]: `c (g - u Re<u, g> / ||u||^2)`.
pub fn normalize_block_backward<T: Real>(u: &ComplexMatrix<T>, c: T, g: &ComplexMatrix<T>) -> ComplexMatrix<T> {
    let e = u.frobenius_norm_sq();
    let dot = u
        .as_slice()
        .iter()
        .zip(g.as_slice())
        .fold(T::zero(), |acc, (a, b)| acc + (a.conj() * b).re);
    let k = dot / e;
    let mut out = g.clone();
    for (o, a) in out.as_mut_slice().iter_mut().zip(u.as_slice()) {
        *o = (*o - a * k) * c;
    }
    out
}

fn check_power(a: f64, b: f64, what: &str) -> Result<()> {
    if same_power(a, b) {
        Ok(())
    } else {
        Err(Error::Policy(format!("{what}: {a} dBm vs {b} dBm")))
    }
}

/// `NN_ct`: one sub-network per RF chain replacing the digital precoder.
/// Each block of outputs is scaled to mean column energy `N_s`.
#[derive(Clone, Debug)]
pub struct TxCompensator<T: Real> {
    pub bank: Bank,
    pub params: Vec<T>,
    pub f_bb: ComplexMatrix<T>,
    pub power_dbm: f64,
}

impl<T: Real> TxCompensator<T> {
    pub fn new(link: &LinkRealization<T>, n_h: usize, init: Init, rng: &RandomSource) -> Result<Self> {
        if n_h == 0 {
            return invalid("n_h must be at least 1");
        }
        let sc = StageScales::from_link(link).precoded;
        let bank = Bank::new(n_h, link.cfg.l_t, false, sc, sc);
        let mut params = vec![T::zero(); bank.param_count()];
        bank.init(&mut params, init, &mut rng.derive("nn_ct"));
        Ok(Self {
            bank,
            params,
            f_bb: link.bf.f_bb.clone(),
            power_dbm: link.power_dbm.as_f64(),
        })
    }

    pub fn n_s(&self) -> usize {
        self.f_bb.cols()
    }

    pub fn reinit(&mut self, init: Init, rng: &RandomSource) {
        self.bank.init(&mut self.params, init, &mut rng.derive("nn_ct"));
    }

    pub fn target_energy(&self) -> T {
        T::from_usize(self.n_s()).unwrap()
    }

    /// `s1 -> s̄1` with explicit parameters; returns the raw output and the
    /// normalization factor for back-propagation.
    fn forward_with(
        &self,
        p: &[T],
        s1: &ComplexMatrix<T>,
        cache: Option<&mut BankCache<T>>,
    ) -> Result<(ComplexMatrix<T>, ComplexMatrix<T>, T)> {
        let raw = self.bank.forward(p, s1, cache)?;
        let (out, c) = normalize_block(&raw, self.target_energy());
        Ok((out, raw, c))
    }

    /// Compensated precoder output for digitally precoded lanes `s1`.
    pub fn apply(&self, s1: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
        Ok(self.forward_with(&self.params, s1, None)?.0)
    }

    /// Compensated precoder output for symbols `s`.
    pub fn apply_symbols(&self, s: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
        self.apply(&self.f_bb.matmul(s))
    }
}

/// `NN_cr`: one sub-network per received stream, applied to the combined
/// output `W_BB^H r`. Each output block keeps the energy of its input block.
#[derive(Clone, Debug)]
pub struct RxCompensator<T: Real> {
    pub bank: Bank,
    pub params: Vec<T>,
    pub power_dbm: f64,
}

impl<T: Real> RxCompensator<T> {
    pub fn new(link: &LinkRealization<T>, n_h: usize, init: Init, rng: &RandomSource) -> Result<Self> {
        if n_h == 0 {
            return invalid("n_h must be at least 1");
        }
        let sc = StageScales::from_link(link).output;
        let bank = Bank::new(n_h, link.cfg.n_s, false, sc, sc);
        let mut params = vec![T::zero(); bank.param_count()];
        bank.init(&mut params, init, &mut rng.derive("nn_cr"));
        Ok(Self {
            bank,
            params,
            power_dbm: link.power_dbm.as_f64(),
        })
    }

    pub fn reinit(&mut self, init: Init, rng: &RandomSource) {
        self.bank.init(&mut self.params, init, &mut rng.derive("nn_cr"));
    }

    fn forward_with(
        &self,
        p: &[T],
        y: &ComplexMatrix<T>,
        cache: Option<&mut BankCache<T>>,
    ) -> Result<(ComplexMatrix<T>, ComplexMatrix<T>, T)> {
        let raw = self.bank.forward(p, y, cache)?;
        let target = y.frobenius_norm_sq() / T::from_usize(y.cols()).unwrap();
        let (out, c) = normalize_block(&raw, target);
        Ok((out, raw, c))
    }

    /// Compensated block for received streams `y` (`N_s x T`).
    pub fn apply(&self, y: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
        Ok(self.forward_with(&self.params, y, None)?.0)
    }
}

/// Least-squares combiner `W_BB,c` with `W_BB,c^H (W_BB^H r) ≈ NN_cr(W_BB^H r)`
/// over received blocks `y`, and the relative residual.
pub fn extract_linear_combiner<T: Real>(
    comp: &RxCompensator<T>,
    y: &ComplexMatrix<T>,
) -> Result<(ComplexMatrix<T>, f64)> {
    let out = comp.apply(y)?;
    let a = right_least_squares(&out, y)?;
    let resid = a.matmul(y).rel_error(&out).as_f64();
    Ok((a.h(), resid))
}

/// Direct fully connected corrector on the received streams,
/// `8 -> 10 -> 10 -> 10 -> 8` over interleaved `(re, im)` pairs.
#[derive(Clone, Debug)]
pub struct DDnnBaseline<T: Real> {
    pub mlp: Mlp<T>,
    /// Input and output scale (RMS of the ideal output).
    pub scale: f64,
    pub power_dbm: f64,
}

pub const DDNN_HIDDEN: [usize; 3] = [10, 10, 10];

pub fn ddnn_sizes(n_s: usize) -> Vec<usize> {
    let mut s = vec![2 * n_s];
    s.extend(DDNN_HIDDEN);
    s.push(2 * n_s);
    s
}

impl<T: Real> DDnnBaseline<T> {
    pub fn new(link: &LinkRealization<T>, rng: &RandomSource) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(&ddnn_sizes(link.cfg.n_s), &mut rng.derive("ddnn"))?,
            scale: StageScales::from_link(link).output,
            power_dbm: link.power_dbm.as_f64(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    fn pack(&self, col: impl Iterator<Item = Complex<T>>) -> Vec<T> {
        let k = T::lit(self.scale).recip();
        col.flat_map(|z| [z.re * k, z.im * k]).collect()
    }

    fn forward_col(&self, p: &Mlp<T>, x: &[T], trace: &mut MlpTrace<T>) -> Vec<T> {
        let k = T::lit(self.scale);
        p.forward_trace(x, trace).into_iter().map(|v| v * k).collect()
    }

    pub fn apply(&self, y: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
        let n_s = self.mlp.input_dim() / 2;
        if y.rows() != n_s {
            return invalid(format!("D-DNN expects {n_s} rows, got {}", y.rows()));
        }
        let mut out = ComplexMatrix::zeros(n_s, y.cols());
        let mut trace = MlpTrace::default();
        for j in 0..y.cols() {
            let x = self.pack((0..n_s).map(|i| y[(i, j)]));
            let v = self.forward_col(&self.mlp, &x, &mut trace);
            for i in 0..n_s {
                out[(i, j)] = Complex::new(v[2 * i], v[2 * i + 1]);
            }
        }
        Ok(out)
    }
}

/// Normalized loss and parameter gradient of a Tx compensator with
/// parameters `p` in front of a frozen surrogate.
pub fn tx_comp_objective<T: Real>(
    comp: &TxCompensator<T>,
    p: &[T],
    frozen: &StructuredDNN<T>,
    s1: &ComplexMatrix<T>,
    y_i: &ComplexMatrix<T>,
    grad: &mut [T],
) -> Result<T> {
    let mut bc = BankCache::default();
    let mut fc = Stage1Cache::default();
    let (sbar, raw, c) = comp.forward_with(p, s1, Some(&mut bc))?;
    let yhat = frozen.forward_with(&frozen.params, &sbar, Some(&mut fc))?;
    let (loss, g) = normalized_mse(&yhat, y_i, frozen.output_power());
    let g_sbar = frozen.backward_with(&frozen.params, &fc, &g, None)?;
    let g_raw = normalize_block_backward(&raw, c, &g_sbar);
    comp.bank.backward(p, s1, &bc, &g_raw, grad)?;
    Ok(loss)
}

/// Normalized loss and parameter gradient of an Rx compensator with
/// parameters `p` on received streams `y`.
pub fn rx_comp_objective<T: Real>(
    comp: &RxCompensator<T>,
    p: &[T],
    y: &ComplexMatrix<T>,
    y_i: &ComplexMatrix<T>,
    power: T,
    grad: &mut [T],
) -> Result<T> {
    let mut bc = BankCache::default();
    let (yhat, raw, c) = comp.forward_with(p, y, Some(&mut bc))?;
    let (loss, g) = normalized_mse(&yhat, y_i, power);
    let g_raw = normalize_block_backward(&raw, c, &g);
    comp.bank.backward(p, y, &bc, &g_raw, grad)?;
    Ok(loss)
}

/// Normalized loss and parameter gradient of the D-DNN with parameters `p`.
pub fn ddnn_objective<T: Real>(
    d: &DDnnBaseline<T>,
    p: &[T],
    y: &ComplexMatrix<T>,
    y_i: &ComplexMatrix<T>,
    power: T,
    grad: &mut [T],
) -> Result<T> {
    let n_s = y.rows();
    let net = Mlp {
        sizes: d.mlp.sizes.clone(),
        params: p.to_vec(),
    };
    let k = T::lit(d.scale);
    let norm = T::from_usize(n_s * y.cols()).unwrap() * power;
    let mut trace = MlpTrace::default();
    let mut loss = T::zero();
    for j in 0..y.cols() {
        let x = d.pack((0..n_s).map(|i| y[(i, j)]));
        let out = d.forward_col(&net, &x, &mut trace);
        let mut g = vec![T::zero(); 2 * n_s];
        for i in 0..n_s {
            let t = y_i[(i, j)];
            let (dr, di) = (out[2 * i] - t.re, out[2 * i + 1] - t.im);
            loss += (dr * dr + di * di) / norm;
            g[2 * i] = T::lit(2.0) * dr * k / norm;
            g[2 * i + 1] = T::lit(2.0) * di * k / norm;
        }
        net.backward(&trace, &g, grad);
    }
    Ok(loss)
}

/// Trains `NN_ct` through the frozen surrogate toward the ideal outputs.
/// The surrogate is checked bit-identical afterwards.
pub fn train_tx_comp<T: Real>(
    comp: &mut TxCompensator<T>,
    frozen: &StructuredDNN<T>,
    pilots: &ComplexMatrix<T>,
    ideal_targets: &ComplexMatrix<T>,
    tcfg: &TrainingConfig,
) -> Result<TrainingReport> {
    check_power(
        comp.power_dbm,
        frozen.power_dbm,
        "compensator and frozen model powers differ",
    )?;
    if pilots.cols() != ideal_targets.cols() || pilots.rows() != comp.n_s() {
        return invalid("pilots and targets do not match");
    }
    let before = param_checksum(&frozen.params);
    let s1 = comp.f_bb.matmul(pilots);
    let mut params = std::mem::take(&mut comp.params);
    let report = fit(&mut params, pilots.cols(), tcfg, |p, idx, grad| {
        tx_comp_objective(
            comp,
            p,
            frozen,
            &s1.select_cols(idx),
            &ideal_targets.select_cols(idx),
            grad,
        )
    });
    comp.params = params;
    if param_checksum(&frozen.params) != before {
        return Err(Error::Policy("frozen model changed during compensator training".into()));
    }
    report
}

/// Trains `NN_cr` on the frozen surrogate's outputs for the pilots.
pub fn train_rx_comp<T: Real>(
    comp: &mut RxCompensator<T>,
    frozen: &StructuredDNN<T>,
    pilots: &ComplexMatrix<T>,
    ideal_targets: &ComplexMatrix<T>,
    tcfg: &TrainingConfig,
) -> Result<TrainingReport> {
    check_power(
        comp.power_dbm,
        frozen.power_dbm,
        "compensator and frozen model powers differ",
    )?;
    if pilots.cols() != ideal_targets.cols() {
        return invalid("pilots and targets do not match");
    }
    let before = param_checksum(&frozen.params);
    let r = frozen.forward(&frozen.maps.f_bb.matmul(pilots))?;
    let power = frozen.output_power();
    let mut params = std::mem::take(&mut comp.params);
    let report = fit(&mut params, pilots.cols(), tcfg, |p, idx, grad| {
        rx_comp_objective(
            comp,
            p,
            &r.select_cols(idx),
            &ideal_targets.select_cols(idx),
            power,
            grad,
        )
    });
    comp.params = params;
    if param_checksum(&frozen.params) != before {
        return Err(Error::Policy("frozen model changed during compensator training".into()));
    }
    report
}

/// Trains the D-DNN on impaired receptions `y_e` toward `y_i`.
pub fn train_ddnn<T: Real>(
    d: &mut DDnnBaseline<T>,
    y_e: &ComplexMatrix<T>,
    y_i: &ComplexMatrix<T>,
    data_power_dbm: f64,
    tcfg: &TrainingConfig,
) -> Result<TrainingReport> {
    check_power(d.power_dbm, data_power_dbm, "D-DNN and data powers differ")?;
    if y_e.shape() != y_i.shape() {
        return invalid("inputs and targets do not match");
    }
    let power = T::lit(d.scale * d.scale);
    let mut params = std::mem::take(&mut d.mlp.params);
    let report = fit(&mut params, y_e.cols(), tcfg, |p, idx, grad| {
        ddnn_objective(d, p, &y_e.select_cols(idx), &y_i.select_cols(idx), power, grad)
    });
    d.mlp.params = params;
    report
}

/// What sits in the live link during evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Deployed<'a, T: Real> {
    None,
    Tx(&'a TxCompensator<T>),
    Rx(&'a RxCompensator<T>),
    Ddnn(&'a DDnnBaseline<T>),
}

impl<T: Real> Deployed<'_, T> {
    pub fn label(&self) -> &'static str {
        match self {
            Deployed::None => "none",
            Deployed::Tx(_) => "tx",
            Deployed::Rx(_) => "rx",
            Deployed::Ddnn(_) => "ddnn",
        }
    }

    fn power_dbm(&self) -> Option<f64> {
        match self {
            Deployed::None => None,
            Deployed::Tx(c) => Some(c.power_dbm),
            Deployed::Rx(c) => Some(c.power_dbm),
            Deployed::Ddnn(d) => Some(d.power_dbm),
        }
    }

    /// Runs one block of symbols through the real link and returns the
    /// pre-equalization output.
    pub fn run(
        &self,
        s: &ComplexMatrix<T>,
        spec: &ChainSpec,
        link: &LinkRealization<T>,
        rng: &RandomSource,
    ) -> Result<ComplexMatrix<T>> {
        match self {
            Deployed::None => transmit(s, spec, link, rng),
            Deployed::Tx(c) => {
                let x = tx_chain_precoded(&c.apply_symbols(s)?, spec, link, &rng.derive("tx"))?;
                rx_chain(&x, spec, link, &rng.derive("rx"))
            }
            Deployed::Rx(c) => c.apply(&transmit(s, spec, link, rng)?),
            Deployed::Ddnn(d) => d.apply(&transmit(s, spec, link, rng)?),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation<T: Real> {
    pub side: &'static str,
    pub power_dbm: f64,
    pub snr_db: f64,
    pub errors: usize,
    pub n_symbols: usize,
    pub ser: f64,
    pub seed: u64,
    /// First block of sent symbols and their equalized estimates.
    pub sent: ComplexMatrix<T>,
    pub equalized: ComplexMatrix<T>,
}

/// Symbol error rate of the real impaired link with `deployed` inserted.
/// Symbols and chain randomness depend only on `seed` and the block index,
/// so different sides see identical draws.
pub fn deploy_and_evaluate<T: Real>(
    deployed: Deployed<'_, T>,
    link: &LinkRealization<T>,
    spec: &ChainSpec,
    n_symbols: usize,
    seed: u64,
) -> Result<Evaluation<T>> {
    if let Some(p) = deployed.power_dbm() {
        check_power(
            p,
            link.power_dbm.as_f64(),
            "deployed network was trained at another power",
        )?;
    }
    let n_s = link.cfg.n_s;
    let cols = n_symbols.div_ceil(n_s);
    if cols == 0 {
        return invalid("need at least one symbol");
    }
    let root = RandomSource::new(seed);
    let q = Qam16::new();
    let mut errors = 0;
    let mut sent = ComplexMatrix::zeros(0, 0);
    let mut equalized = ComplexMatrix::zeros(0, 0);
    for (b, start) in (0..cols).step_by(SIM_BLOCK).enumerate() {
        let m = SIM_BLOCK.min(cols - start);
        let rng = root.derive_indexed("block", b as u64);
        let s = q.random_symbols(n_s, m, &mut rng.derive("symbols"));
        let y = deployed.run(&s, spec, link, &rng)?;
        let e = equalize(&y, link)?;
        errors += symbol_errors(&s, &e)?;
        if b == 0 {
            sent = s;
            equalized = e;
        }
    }
    let n = cols * n_s;
    Ok(Evaluation {
        side: deployed.label(),
        power_dbm: link.power_dbm.as_f64(),
        snr_db: link.snr_db().as_f64(),
        errors,
        n_symbols: n,
        ser: errors as f64 / n as f64,
        seed,
        sent,
        equalized,
    })
}

/// Least-squares linear precoder `F` with `F s ≈ s̄1` over the pilots, and
/// the relative residual `||F s - s̄1||_F / ||s̄1||_F`.
pub fn extract_linear_precoder<T: Real>(
    comp: &TxCompensator<T>,
    pilots: &ComplexMatrix<T>,
) -> Result<(ComplexMatrix<T>, f64)> {
    if pilots.rows() != comp.n_s() {
        return invalid("pilot rows must equal N_s");
    }
    let sbar = comp.apply_symbols(pilots)?;
    let f = right_least_squares(&sbar, pilots)?;
    let resid = f.matmul(pilots).rel_error(&sbar).as_f64();
    Ok((f, resid))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodedEvaluation {
    pub side: String,
    pub power_dbm: f64,
    pub frames: usize,
    pub info_bits: usize,
    pub info_symbols: usize,
    /// Information-symbol error rate after decoding.
    pub ser: f64,
    pub ber: f64,
    /// Error rate of the coded channel symbols before decoding.
    pub channel_ser: f64,
}

/// Rate-2/3 coded transmission: each frame of `info_bits` is encoded,
/// mapped to 16-QAM, sent through the link with `deployed` inserted,
/// hard-demodulated and Viterbi-decoded. Errors are counted on groups of
/// four information bits (the uncoded symbol alphabet).
pub fn evaluate_coded<T: Real>(
    deployed: Deployed<'_, T>,
    link: &LinkRealization<T>,
    spec: &ChainSpec,
    code: &ConvCode,
    info_bits: usize,
    frames: usize,
    seed: u64,
) -> Result<CodedEvaluation> {
    if info_bits == 0 || !info_bits.is_multiple_of(4) || frames == 0 {
        return invalid("need a positive multiple of 4 information bits and at least one frame");
    }
    if let Some(p) = deployed.power_dbm() {
        check_power(
            p,
            link.power_dbm.as_f64(),
            "deployed network was trained at another power",
        )?;
    }
    let n_s = link.cfg.n_s;
    let q = Qam16::new();
    let root = RandomSource::new(seed);
    let (mut sym_err, mut bit_err, mut ch_err, mut ch_total) = (0usize, 0usize, 0usize, 0usize);
    for f in 0..frames {
        let rng = root.derive_indexed("frame", f as u64);
        let mut bits_rng = rng.derive("bits");
        let bits: Vec<u8> = (0..info_bits).map(|_| bits_rng.bit()).collect();
        let mut coded = code.encode(&bits)?;
        let n_coded = coded.len();
        let per_col = 4 * n_s;
        coded.resize(n_coded.div_ceil(per_col) * per_col, 0);
        let symbols: Vec<Complex<T>> = q.modulate(&coded)?;
        let cols = symbols.len() / n_s;
        let s = ComplexMatrix::from_fn(n_s, cols, |i, j| symbols[j * n_s + i]);
        let y = deployed.run(&s, spec, link, &rng)?;
        let e = equalize(&y, link)?;
        ch_err += symbol_errors(&s, &e)?;
        ch_total += s.as_slice().len();
        let est: Vec<Complex<T>> = (0..cols)
            .flat_map(|j| (0..n_s).map(move |i| (i, j)))
            .map(|ij| e[ij])
            .collect();
        let hard = q.demodulate_hard(&est);
        let decoded = code.decode(&hard[..n_coded], info_bits)?;
        bit_err += decoded.iter().zip(&bits).filter(|(a, b)| a != b).count();
        sym_err += decoded.chunks(4).zip(bits.chunks(4)).filter(|(a, b)| a != b).count();
    }
    let n_info_sym = frames * info_bits / 4;
    Ok(CodedEvaluation {
        side: deployed.label().to_string(),
        power_dbm: link.power_dbm.as_f64(),
        frames,
        info_bits: frames * info_bits,
        info_symbols: n_info_sym,
        ser: sym_err as f64 / n_info_sym as f64,
        ber: bit_err as f64 / (frames * info_bits) as f64,
        channel_ser: ch_err as f64 / ch_total as f64,
    })
}

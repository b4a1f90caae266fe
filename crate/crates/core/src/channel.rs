//! Sparse geometric narrowband channel and hybrid beamformer design.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{invalid, Error, Result};
use crate::linalg::ComplexMatrix;
use crate::rng::RandomSource;
use crate::scalar::{db_to_linear_amplitude, db_to_linear_power, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Scale so that `||H||_F^2 = N_t N_r`.
    UnitFrobenius,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub n_paths: usize,
    /// Angles of departure/arrival are uniform in `[-max, max]`.
    pub max_angle_deg: f64,
    /// Variance of the complex Gaussian path gains before normalization.
    pub gain_variance: f64,
    pub normalization: Normalization,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            n_paths: 6,
            max_angle_deg: 60.0,
            gain_variance: 1.0,
            normalization: Normalization::UnitFrobenius,
        }
    }
}

/// One propagation path; angles in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathComponent<T: Real> {
    pub gain: Complex<T>,
    pub aod: T,
    pub aoa: T,
}

#[derive(Clone, Debug)]
pub struct Channel<T: Real> {
    /// `N_r x N_t` channel matrix.
    pub h: ComplexMatrix<T>,
    /// Paths with gains already scaled by the normalization.
    pub paths: Vec<PathComponent<T>>,
}

/// Half-wavelength ULA response with unit-modulus entries `exp(j pi n sin(angle))`.
pub fn ula_steering<T: Real>(n: usize, angle: T) -> Vec<Complex<T>> {
    let k = T::PI() * angle.sin();
    (0..n)
        .map(|i| Complex::from_polar(T::one(), k * T::from_usize(i).unwrap()))
        .collect()
}

impl ChannelModel {
    pub fn draw_paths<T: Real>(&self, rng: &mut RandomSource) -> Result<Vec<PathComponent<T>>> {
        if self.n_paths < 1 {
            return invalid("channel needs at least one path");
        }
        let max = T::lit(self.max_angle_deg.to_radians());
        let var = T::lit(self.gain_variance);
        Ok((0..self.n_paths)
            .map(|_| {
                let gain = rng.cgauss(var);
                let aod = rng.uniform(-max, max);
                let aoa = rng.uniform(-max, max);
                PathComponent { gain, aod, aoa }
            })
            .collect())
    }
}

/// `H = sum_l g_l a_r(aoa_l) a_t(aod_l)^H`, then normalized.
pub fn channel_from_paths<T: Real>(
    n_r: usize,
    n_t: usize,
    paths: &[PathComponent<T>],
    normalization: Normalization,
) -> Result<Channel<T>> {
    if paths.is_empty() {
        return invalid("channel needs at least one path");
    }
    let mut h = ComplexMatrix::zeros(n_r, n_t);
    for p in paths {
        let ar = ula_steering(n_r, p.aoa);
        let at = ula_steering(n_t, p.aod);
        for (r, &a) in ar.iter().enumerate() {
            let ga = p.gain * a;
            for (z, b) in h.row_mut(r).iter_mut().zip(&at) {
                *z = *z + ga * b.conj();
            }
        }
    }
    let mut paths = paths.to_vec();
    if normalization == Normalization::UnitFrobenius {
        let norm = h.frobenius_norm_sq();
        if norm == T::zero() {
            return Err(Error::Singular("all path gains are zero".into()));
        }
        let k = (T::from_usize(n_t * n_r).unwrap() / norm).sqrt();
        h.scale_in_place(k);
        for p in &mut paths {
            p.gain = p.gain * k;
        }
    }
    Ok(Channel { h, paths })
}

pub fn build_channel<T: Real>(cfg: &SystemConfig, model: &ChannelModel, rng: &mut RandomSource) -> Result<Channel<T>> {
    let paths = model.draw_paths(rng)?;
    channel_from_paths(cfg.n_r, cfg.n_t, &paths, model.normalization)
}

/// Digital and analog precoders/combiners plus the input power allocation.
#[derive(Clone, Debug)]
pub struct BeamformerSet<T: Real> {
    /// `L_t x N_s`
    pub f_bb: ComplexMatrix<T>,
    /// `N_t x L_t`
    pub f_rf: ComplexMatrix<T>,
    /// Diagonal of `P_in` (amplitude factors applied per RF chain).
    pub p_in: Vec<T>,
    /// `N_r x L_r`
    pub w_rf: ComplexMatrix<T>,
    /// `L_r x N_s`
    pub w_bb: ComplexMatrix<T>,
}

impl<T: Real> BeamformerSet<T> {
    pub fn p_in_diag(&self) -> Vec<Complex<T>> {
        self.p_in.iter().map(|&p| Complex::new(p, T::zero())).collect()
    }

    /// `F_RF P_in F_BB`, the nominal `N_t x N_s` precoder.
    pub fn nominal_precoder(&self) -> ComplexMatrix<T> {
        self.f_rf.matmul(&self.f_bb.scale_rows(&self.p_in_diag()))
    }
}

fn quantize_phase<T: Real>(z: Complex<T>, bits: u32) -> T {
    let step = T::TAU() / T::from_u64(1u64 << bits).unwrap();
    let mut q = (z.arg() / step).round() * step;
    if q < T::zero() {
        q += T::TAU();
    }
    if q >= T::TAU() {
        q -= T::TAU();
    }
    q
}

/// Phase-only steering column with phases on the `2 pi / 2^bits` grid and
/// entries of modulus `1/sqrt(n)`.
pub fn quantized_steering<T: Real>(n: usize, angle: T, bits: u32) -> Vec<Complex<T>> {
    let amp = T::one() / T::from_usize(n).unwrap().sqrt();
    ula_steering(n, angle)
        .into_iter()
        .map(|a| Complex::from_polar(amp, quantize_phase(a, bits)))
        .collect()
}

/// Analog stages steer toward the strongest paths; digital stages come from
/// the SVD of the effective channel `W_RF^H H F_RF`. `P_in` is left at
/// identity; see [`set_transmit_power`].
pub fn design_beamformers<T: Real>(channel: &Channel<T>, cfg: &SystemConfig) -> Result<BeamformerSet<T>> {
    cfg.validate()?;
    let h = &channel.h;
    if h.shape() != (cfg.n_r, cfg.n_t) {
        return invalid(format!(
            "channel shape {:?} does not match ({}, {})",
            h.shape(),
            cfg.n_r,
            cfg.n_t
        ));
    }
    let mut order: Vec<usize> = (0..channel.paths.len()).collect();
    order.sort_by(|&a, &b| {
        channel.paths[b]
            .gain
            .norm()
            .partial_cmp(&channel.paths[a].gain.norm())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let pick = |l: usize| &channel.paths[order[l % order.len()]];
    let bits = cfg.phase_shifter_bits;
    let mut f_rf = ComplexMatrix::zeros(cfg.n_t, cfg.l_t);
    for l in 0..cfg.l_t {
        f_rf.set_column(l, &quantized_steering(cfg.n_t, pick(l).aod, bits));
    }
    let mut w_rf = ComplexMatrix::zeros(cfg.n_r, cfg.l_r);
    for l in 0..cfg.l_r {
        w_rf.set_column(l, &quantized_steering(cfg.n_r, pick(l).aoa, bits));
    }
    let h_eff = w_rf.h().matmul(h).matmul(&f_rf);
    let svd = h_eff.svd();
    let ns = cfg.n_s;
    let top = svd.s[0];
    if svd.s.len() < ns || !(svd.s[ns - 1] > top * T::lit(1e-9)) {
        return Err(Error::Singular(format!(
            "effective channel rank below {ns} (singular values {:?})",
            svd.s
        )));
    }
    let idx: Vec<usize> = (0..ns).collect();
    let v = svd.v.select_cols(&idx);
    let u = svd.u.select_cols(&idx);
    let nsr = T::from_usize(ns).unwrap();
    let ct = (nsr / f_rf.matmul(&v).frobenius_norm_sq()).sqrt();
    let cr = (nsr / w_rf.matmul(&u).frobenius_norm_sq()).sqrt();
    Ok(BeamformerSet {
        f_bb: v.scale_real(ct),
        f_rf,
        p_in: vec![T::one(); cfg.l_t],
        w_rf,
        w_bb: u.scale_real(cr),
    })
}

/// Uniform `P_in` such that the ideal linear chain radiates
/// `10^(p_dbm/10)` mW on average for unit-energy symbols.
pub fn set_transmit_power<T: Real>(
    bset: &BeamformerSet<T>,
    p_dbm: T,
    pa_linear_gain_db: T,
) -> Result<BeamformerSet<T>> {
    if !p_dbm.is_finite() {
        return invalid("transmit power must be finite");
    }
    let target_mw = db_to_linear_power(p_dbm);
    let g = db_to_linear_amplitude(pa_linear_gain_db);
    let energy = bset.f_rf.matmul(&bset.f_bb).frobenius_norm_sq();
    let p = (target_mw / (g * g * energy)).sqrt();
    let mut out = bset.clone();
    out.p_in = vec![p; bset.f_bb.rows()];
    Ok(out)
}

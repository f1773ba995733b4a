//! Transmit grid, multi-beam precoding and the monostatic channel.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::radio::RadioParams;
use crate::rng::SimRng;
use crate::scenario::ReflectionPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridRole {
    /// X_s
    Tx,
    /// Y_s
    Rx,
    /// G_s = Y_s ⊘ X_s
    Quotient,
}

/// K × M_s complex grid stored subcarrier-major (`k * M_s + m`).
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolGrid {
    pub num_subcarriers: usize,
    pub num_symbols: usize,
    pub data: Vec<Complex64>,
    pub role: GridRole,
}

impl SymbolGrid {
    pub fn zeros(k: usize, m: usize, role: GridRole) -> Self {
        Self {
            num_subcarriers: k,
            num_symbols: m,
            data: vec![Complex64::new(0.0, 0.0); k * m],
            role,
        }
    }

    #[inline]
    pub fn get(&self, k: usize, m: usize) -> Complex64 {
        self.data[k * self.num_symbols + m]
    }

    #[inline]
    pub fn set(&mut self, k: usize, m: usize, v: Complex64) {
        self.data[k * self.num_symbols + m] = v;
    }

    pub fn same_shape(&self, other: &SymbolGrid) -> bool {
        self.num_subcarriers == other.num_subcarriers && self.num_symbols == other.num_symbols
    }
}

/// I.i.d. uniform QPSK symbols (±1 ± j)/√2.
pub fn make_tx_grid(k: usize, m: usize, rng: &mut SimRng) -> SymbolGrid {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let mut grid = SymbolGrid::zeros(k, m, GridRole::Tx);
    let mut bits = 0u64;
    let mut left = 0;
    for v in grid.data.iter_mut() {
        if left == 0 {
            bits = rng.random();
            left = 32;
        }
        let re = if bits & 1 == 0 { a } else { -a };
        let im = if bits & 2 == 0 { a } else { -a };
        bits >>= 2;
        left -= 1;
        *v = Complex64::new(re, im);
    }
    grid
}

/// Half-wavelength ULA response a(θ)_n = exp(jπ n sin θ), n = 0..N−1.
pub fn steering_vector(n: usize, theta: f64) -> Vec<Complex64> {
    let step = PI * theta.sin();
    (0..n)
        .map(|i| Complex64::from_polar(1.0, step * i as f64))
        .collect()
}

/// Normalized array gain |AF(Δθ)|² of an N-element half-wavelength ULA,
/// equal to 1 at zero offset.
pub fn array_gain_factor(n: usize, offset_rad: f64) -> f64 {
    let psi = PI * offset_rad.sin();
    let s: Complex64 = (0..n)
        .map(|i| Complex64::from_polar(1.0, psi * i as f64))
        .sum();
    s.norm_sqr() / (n * n) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamWeights {
    pub tx: Vec<Complex64>,
    pub rx: Vec<Complex64>,
    pub sense_dir_rad: f64,
    pub comm_dir_rad: f64,
}

impl BeamWeights {
    /// a_T^T(θ) w_T
    pub fn tx_response(&self, theta: f64) -> Complex64 {
        let a = steering_vector(self.tx.len(), theta);
        a.iter().zip(&self.tx).map(|(a, w)| a * w).sum()
    }

    /// w_R^T a_R(θ)
    pub fn rx_response(&self, theta: f64) -> Complex64 {
        let a = steering_vector(self.rx.len(), theta);
        a.iter().zip(&self.rx).map(|(a, w)| a * w).sum()
    }

    pub fn rx_norm_sqr(&self) -> f64 {
        self.rx.iter().map(Complex64::norm_sqr).sum()
    }
}

/// Multi-beam precoder splitting power ρ_p / (1 − ρ_p) between the sensing
/// and communication directions; the receiver combines toward the sensing
/// direction with w_R = a_R*(θ_s).
pub fn tx_beamformer(params: &RadioParams, sense_dir: f64, comm_dir: f64) -> BeamWeights {
    let nt = params.num_tx_antennas;
    let scale = params.eirp_watts.sqrt() / nt as f64;
    let rho = params.sensing_power_fraction;
    let a_s = steering_vector(nt, sense_dir);
    let a_c = steering_vector(nt, comm_dir);
    let tx = a_s
        .iter()
        .zip(&a_c)
        .map(|(s, c)| scale * (rho.sqrt() * s.conj() + (1.0 - rho).sqrt() * c.conj()))
        .collect();
    let rx = steering_vector(params.num_rx_antennas, sense_dir)
        .into_iter()
        .map(|a| a.conj())
        .collect();
    BeamWeights {
        tx,
        rx,
        sense_dir_rad: sense_dir,
        comm_dir_rad: comm_dir,
    }
}

/// Whether receiver noise is added to simulated grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    On,
    Off,
}

fn complex_normal(rng: &mut SimRng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Per-reflection complex gain after beamforming: √G_R β_l (w_R^T a_R(θ_l))(a_T^T(θ_l) w_T).
pub fn combined_gain(
    refl: &ReflectionPoint,
    weights: &BeamWeights,
    params: &RadioParams,
) -> Complex64 {
    params.rx_element_gain.sqrt()
        * refl.path_gain
        * weights.rx_response(refl.doa_rad)
        * weights.tx_response(refl.doa_rad)
}

/// Received grid after OFDM demodulation and receive combining:
/// y_k^(m) = w_R^T (H_k^(m) w_T x_k^(m) + n_k).
///
/// The channel is a sum of rank-one terms, so the combined output is
/// evaluated per reflection as a scalar gain times the delay and Doppler
/// phasors. Combined noise w_R^T n with n ~ CN(0, σ_N² I) is drawn directly as
/// CN(0, σ_N² ‖w_R‖²), which has the same distribution.
pub fn simulate_rx_grid(
    tx: &SymbolGrid,
    weights: &BeamWeights,
    reflections: &[ReflectionPoint],
    params: &RadioParams,
    noise: Noise,
    rng: &mut SimRng,
) -> SymbolGrid {
    let (k_n, m_n) = (tx.num_subcarriers, tx.num_symbols);
    let mut signal = vec![Complex64::new(0.0, 0.0); k_n * m_n];
    let ts = params.total_symbol_duration_s();
    let df = params.subcarrier_spacing_hz;
    for refl in reflections {
        let c = combined_gain(refl, weights, params);
        if c.norm_sqr() == 0.0 {
            continue;
        }
        let doppler: Vec<Complex64> = (0..m_n)
            .map(|m| Complex64::from_polar(1.0, 2.0 * PI * m as f64 * ts * refl.doppler_hz))
            .collect();
        for k in 0..k_n {
            let rk = c * Complex64::from_polar(1.0, -2.0 * PI * k as f64 * df * refl.delay_s);
            let row = &mut signal[k * m_n..(k + 1) * m_n];
            for (s, d) in row.iter_mut().zip(&doppler) {
                *s += rk * d;
            }
        }
    }
    let noise_var = params.noise_power_w() * weights.rx_norm_sqr();
    let mut rx = SymbolGrid::zeros(k_n, m_n, GridRole::Rx);
    for ((y, s), x) in rx.data.iter_mut().zip(&signal).zip(&tx.data) {
        *y = s * x;
        if noise == Noise::On {
            *y += complex_normal(rng, noise_var);
        }
    }
    rx
}

/// Per-antenna received vector (signal and noise parts kept apart) for one
/// resource element, using the full N_R × N_T channel matrix.
pub fn antenna_snapshot(
    x: Complex64,
    k: usize,
    m: usize,
    weights: &BeamWeights,
    reflections: &[ReflectionPoint],
    params: &RadioParams,
    rng: &mut SimRng,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let nr = weights.rx.len();
    let nt = weights.tx.len();
    let ts = params.total_symbol_duration_s();
    let df = params.subcarrier_spacing_hz;
    let xt: Vec<Complex64> = weights.tx.iter().map(|w| w * x).collect();
    let mut signal = vec![Complex64::new(0.0, 0.0); nr];
    for refl in reflections {
        let a_r = steering_vector(nr, refl.doa_rad);
        let a_t = steering_vector(nt, refl.doa_rad);
        let phase = 2.0 * PI * (m as f64 * ts * refl.doppler_hz - k as f64 * df * refl.delay_s);
        let g = params.rx_element_gain.sqrt() * refl.path_gain * Complex64::from_polar(1.0, phase);
        // (a_R a_T^T) x̃ = a_R (a_T^T x̃)
        let proj: Complex64 = a_t.iter().zip(&xt).map(|(a, v)| a * v).sum();
        for (s, a) in signal.iter_mut().zip(&a_r) {
            *s += g * a * proj;
        }
    }
    let var = params.noise_power_w();
    let noise = (0..nr).map(|_| complex_normal(rng, var)).collect();
    (signal, noise)
}

/// Per-antenna sensing SNR of one reflection:
/// ρ_p γ_l P_T G_T^a G_R / (N_0 K Δf) · c² σ_rcs / ((4π)³ f_c² d⁴).
pub fn sensing_snr(refl: &ReflectionPoint, params: &RadioParams, array_gain: f64) -> Result<f64> {
    if !(refl.distance_m > 0.0) {
        return Err(Error::Domain(
            "sensing SNR undefined at zero distance".into(),
        ));
    }
    if !(0.0..=1.0).contains(&array_gain) {
        return Err(Error::Domain(format!(
            "array gain factor {array_gain} outside [0, 1]"
        )));
    }
    let link = params.eirp_watts * params.rx_element_gain / params.noise_power_w();
    let loss = crate::scenario::path_loss_factor(
        refl.drawn_rcs_m2,
        refl.distance_m,
        params.carrier_freq_hz,
    );
    Ok(params.sensing_power_fraction * array_gain * link * loss)
}

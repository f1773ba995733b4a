//! Per-BS OFDM sensing chain: from scenario reflections to a range-angle map.

pub mod ofdm;
pub mod periodogram;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::Result;
use crate::radio::{RadioParams, Window};
use crate::rng;
use crate::scenario::{BsPose, ReflectionPoint, Scenario};

pub use ofdm::{
    antenna_snapshot, array_gain_factor, make_tx_grid, sensing_snr, simulate_rx_grid,
    steering_vector, tx_beamformer, BeamWeights, GridRole, Noise, SymbolGrid,
};
pub use periodogram::{
    range_angle_map, range_doppler_map, Periodogram, PeriodogramEngine, RangeAngleMap,
};

/// How maps are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Synthesis {
    /// Full signal-level chain: QPSK grid, channel, noise, reciprocal filter, 2-D DFT.
    Signal,
    /// Direct synthesis of the selected range column from per-reflection SNRs.
    Fast,
}

/// Mean value of a pure-noise periodogram bin.
pub fn noise_bin_mean(params: &RadioParams) -> f64 {
    let k = params.num_subcarriers;
    let m = params.sensing_symbols;
    let wr: f64 = params.window.coefficients(k).iter().map(|w| w * w).sum();
    let wd: f64 = params.window.coefficients(m).iter().map(|w| w * w).sum();
    let combined_var = params.noise_power_w() * params.num_rx_antennas as f64;
    combined_var * wr * wd / ((k * m) as f64).powi(2)
}

/// Range-angle map of base station `bs` for scan `scan`. Each scan direction
/// draws its symbols and noise from its own `(bs, scan, direction)` substream.
pub fn bs_range_angle_map(
    scenario: &Scenario,
    bs: usize,
    scan: usize,
    seed: u64,
    synthesis: Synthesis,
    noise: Noise,
) -> Result<RangeAngleMap> {
    let reflections = scenario.bs_reflectors(bs, scan, seed)?;
    map_from_reflections(
        &scenario.radio,
        &scenario.base_stations[bs],
        &reflections,
        scan,
        seed,
        synthesis,
        noise,
    )
}

pub fn map_from_reflections(
    params: &RadioParams,
    pose: &BsPose,
    reflections: &[ReflectionPoint],
    scan: usize,
    seed: u64,
    synthesis: Synthesis,
    noise: Noise,
) -> Result<RangeAngleMap> {
    let dirs = pose.scan_dirs();
    let columns: Vec<Vec<f64>> = match synthesis {
        Synthesis::Signal => {
            let engine = PeriodogramEngine::new(params);
            dirs.par_iter()
                .enumerate()
                .map(|(j, &theta)| {
                    let tags = [pose.id as u64, scan as u64, j as u64];
                    let mut sym_rng =
                        rng::stream(seed, &[rng::TAG_TX_SYMBOLS, tags[0], tags[1], tags[2]]);
                    let mut noise_rng =
                        rng::stream(seed, &[rng::TAG_NOISE, tags[0], tags[1], tags[2]]);
                    let tx =
                        make_tx_grid(params.num_subcarriers, params.sensing_symbols, &mut sym_rng);
                    let w = tx_beamformer(params, theta, pose.comm_dir_rad);
                    let rx = simulate_rx_grid(&tx, &w, reflections, params, noise, &mut noise_rng);
                    Ok(engine.range_doppler_map(&rx, &tx)?.max_column())
                })
                .collect::<Result<_>>()?
        }
        Synthesis::Fast => dirs
            .par_iter()
            .enumerate()
            .map(|(j, &theta)| {
                let mut noise_rng = rng::stream(
                    seed,
                    &[rng::TAG_NOISE, pose.id as u64, scan as u64, j as u64],
                );
                synthesize_column(params, theta, reflections, noise, &mut noise_rng)
            })
            .collect::<Result<_>>()?,
    };
    RangeAngleMap::from_columns(columns, dirs, params.range_bin_m(), pose.id, scan)
}

/// Fast path: the range profile of one direction built from each reflection's
/// per-antenna SNR (tx array gain γ_l), the receive combining gain, and the
/// windowed delay kernel, plus complex Gaussian noise of the periodogram
/// noise level. Doppler spread is ignored; the Doppler window enters through
/// its coherent gain.
pub fn synthesize_column(
    params: &RadioParams,
    sense_dir: f64,
    reflections: &[ReflectionPoint],
    noise: Noise,
    rng: &mut rng::SimRng,
) -> Result<Vec<f64>> {
    let k = params.num_subcarriers;
    let n = params.range_fft_len();
    let nr = params.num_rx_antennas as f64;
    let sigma2 = params.noise_power_w();
    let doppler_gain = params.window.coherent_gain(params.sensing_symbols);
    let mut field = vec![Complex64::new(0.0, 0.0); n];
    for refl in reflections {
        if refl.drawn_rcs_m2 == 0.0 {
            continue;
        }
        let gamma_t = array_gain_factor(params.num_tx_antennas, sense_dir - refl.doa_rad);
        let gamma_r = array_gain_factor(params.num_rx_antennas, sense_dir - refl.doa_rad);
        let snr = sensing_snr(refl, params, gamma_t)?;
        let amp = (snr * sigma2 * nr * nr * gamma_r).sqrt() * doppler_gain;
        let phase = refl.path_gain.arg();
        let center = refl.delay_s * params.subcarrier_spacing_hz * n as f64;
        for (bin, f) in field.iter_mut().enumerate() {
            *f += Complex64::from_polar(amp, phase)
                * delay_kernel(params.window, k, n, bin as f64 - center);
        }
    }
    let mu = noise_bin_mean(params);
    Ok(field
        .into_iter()
        .map(|f| {
            let v = if noise == Noise::On {
                let s = (mu / 2.0).sqrt();
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                f + Complex64::new(s * re, s * im)
            } else {
                f
            };
            v.norm_sqr()
        })
        .collect())
}

/// (1/K) Σ_{k<K} exp(j2π k δ / N): unit-peak delay kernel for an N-point transform.
fn dirichlet(k: usize, n: usize, delta: f64) -> Complex64 {
    let x = PI * delta / n as f64;
    if x.sin().abs() < 1e-12 {
        return Complex64::new(1.0, 0.0);
    }
    let mag = (k as f64 * x).sin() / (k as f64 * x.sin());
    Complex64::from_polar(mag, x * (k as f64 - 1.0))
}

/// (1/K) Σ_{k<K} w_k exp(j2π k δ / N). The periodic Hann taper is
/// 0.5 − 0.25·(e^{j2πk/K} + e^{−j2πk/K}), i.e. three shifted Dirichlet kernels.
fn delay_kernel(window: Window, k: usize, n: usize, delta: f64) -> Complex64 {
    match window {
        Window::Rectangular => dirichlet(k, n, delta),
        Window::Hann => {
            let s = n as f64 / k as f64;
            dirichlet(k, n, delta) * 0.5
                - (dirichlet(k, n, delta + s) + dirichlet(k, n, delta - s)) * 0.25
        }
    }
}

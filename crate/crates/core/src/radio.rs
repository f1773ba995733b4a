//! OFDM radio parameters shared by the sensing chain and the capacity model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Propagation speed (m/s). Rounded to 3e8 like most radar link budgets.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Window applied to the reciprocal-filtered grid before the 2-D DFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => {
                if n == 1 {
                    return vec![1.0];
                }
                (0..n)
                    .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                    .collect()
            }
        }
    }

    /// Coherent gain: peak of a windowed unit tone relative to the rectangular case.
    pub fn coherent_gain(self, n: usize) -> f64 {
        self.coefficients(n).iter().sum::<f64>() / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    /// f_c
    pub carrier_freq_hz: f64,
    /// Δf
    pub subcarrier_spacing_hz: f64,
    /// K
    pub num_subcarriers: usize,
    /// M
    pub symbols_per_frame: usize,
    /// M_s
    pub sensing_symbols: usize,
    /// T_cp / T
    pub cp_fraction: f64,
    /// P_T · G_T^a
    pub eirp_watts: f64,
    /// G_R (linear)
    pub rx_element_gain: f64,
    /// N_0
    pub noise_psd_w_per_hz: f64,
    /// N_T
    pub num_tx_antennas: usize,
    /// N_R
    pub num_rx_antennas: usize,
    /// ρ_p
    pub sensing_power_fraction: f64,
    pub range_zero_pad: usize,
    pub doppler_zero_pad: usize,
    pub window: Window,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self::paper()
    }
}

impl RadioParams {
    /// Full-scale parameter set (28 GHz, 400 MHz, 50-element arrays).
    pub fn paper() -> Self {
        Self {
            carrier_freq_hz: 28.0e9,
            subcarrier_spacing_hz: 120.0e3,
            num_subcarriers: 3168,
            symbols_per_frame: 1120,
            sensing_symbols: 112,
            cp_fraction: 1.0 / 14.0,
            eirp_watts: 1.0,
            rx_element_gain: 1.0,
            noise_psd_w_per_hz: 4.0e-20,
            num_tx_antennas: 50,
            num_rx_antennas: 50,
            sensing_power_fraction: 0.3,
            range_zero_pad: 1,
            doppler_zero_pad: 1,
            window: Window::Hann,
        }
    }

    /// Reduced grid used by the CI profile: K = 512, M_s = 32.
    pub fn desk() -> Self {
        Self {
            num_subcarriers: 512,
            sensing_symbols: 32,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("eirp_watts", self.eirp_watts),
            ("rx_element_gain", self.rx_element_gain),
            ("noise_psd_w_per_hz", self.noise_psd_w_per_hz),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("radio.{name} must be > 0 (got {v})")));
            }
        }
        if !(self.cp_fraction.is_finite() && self.cp_fraction >= 0.0) {
            return Err(Error::config("radio.cp_fraction must be >= 0"));
        }
        if self.num_subcarriers == 0 || self.sensing_symbols == 0 {
            return Err(Error::config("radio: K and M_s must be >= 1"));
        }
        if self.sensing_symbols > self.symbols_per_frame {
            return Err(Error::config("radio: M_s must not exceed M"));
        }
        if self.num_tx_antennas == 0 || self.num_rx_antennas == 0 {
            return Err(Error::config("radio: antenna counts must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.sensing_power_fraction) {
            return Err(Error::config(
                "radio.sensing_power_fraction must lie in [0, 1]",
            ));
        }
        if self.range_zero_pad == 0 || self.doppler_zero_pad == 0 {
            return Err(Error::config("radio: zero-padding factors must be >= 1"));
        }
        Ok(())
    }

    /// T = 1/Δf
    pub fn symbol_duration_s(&self) -> f64 {
        1.0 / self.subcarrier_spacing_hz
    }

    /// T_s = T + T_cp
    pub fn total_symbol_duration_s(&self) -> f64 {
        self.symbol_duration_s() * (1.0 + self.cp_fraction)
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq_hz
    }

    /// σ_N² = N_0 K Δf
    pub fn noise_power_w(&self) -> f64 {
        self.noise_psd_w_per_hz * self.num_subcarriers as f64 * self.subcarrier_spacing_hz
    }

    pub fn range_fft_len(&self) -> usize {
        self.num_subcarriers * self.range_zero_pad
    }

    pub fn doppler_fft_len(&self) -> usize {
        self.sensing_symbols * self.doppler_zero_pad
    }

    /// Range spanned by one delay bin of the periodogram.
    pub fn range_bin_m(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.subcarrier_spacing_hz * self.range_fft_len() as f64)
    }

    /// Time needed to dwell on one scan direction (M_s symbols).
    pub fn dwell_time_s(&self) -> f64 {
        self.sensing_symbols as f64 * self.total_symbol_duration_s()
    }
}

//! Reciprocal filtering, double periodogram and range-angle map assembly.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::radio::{RadioParams, Window};

use super::ofdm::SymbolGrid;

/// Power map over (delay bin, Doppler bin), stored delay-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Periodogram {
    pub n_range: usize,
    pub n_doppler: usize,
    pub data: Vec<f64>,
}

impl Periodogram {
    #[inline]
    pub fn get(&self, r: usize, d: usize) -> f64 {
        self.data[r * self.n_doppler + d]
    }

    /// (range bin, Doppler bin) of the global maximum; first occurrence on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        (best / self.n_doppler, best % self.n_doppler)
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        (0..self.n_range).map(|r| self.get(r, d)).collect()
    }

    /// Doppler column holding the global maximum.
    pub fn max_column(&self) -> Vec<f64> {
        self.column(self.argmax().1)
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Planned transforms for one grid geometry, reusable across directions.
pub struct PeriodogramEngine {
    k: usize,
    m: usize,
    n_range: usize,
    n_doppler: usize,
    range_win: Vec<f64>,
    doppler_win: Vec<f64>,
    range_fft: Arc<dyn Fft<f64>>,
    doppler_fft: Arc<dyn Fft<f64>>,
}

impl PeriodogramEngine {
    pub fn new(params: &RadioParams) -> Self {
        Self::with_shape(
            params.num_subcarriers,
            params.sensing_symbols,
            params.range_zero_pad,
            params.doppler_zero_pad,
            params.window,
        )
    }

    pub fn with_shape(k: usize, m: usize, pad_r: usize, pad_d: usize, window: Window) -> Self {
        let mut planner = FftPlanner::new();
        let n_range = k * pad_r;
        let n_doppler = m * pad_d;
        Self {
            k,
            m,
            n_range,
            n_doppler,
            range_win: window.coefficients(k),
            doppler_win: window.coefficients(m),
            // delay bins come from the conjugate transform along subcarriers
            range_fft: planner.plan_fft_inverse(n_range),
            doppler_fft: planner.plan_fft_forward(n_doppler),
        }
    }

    /// G_s = Y_s ⊘ X_s followed by the normalized 2-D periodogram
    /// |DFT(G_s)/(K·M_s)|², so a unit tone maps to a peak of 1.
    pub fn range_doppler_map(&self, rx: &SymbolGrid, tx: &SymbolGrid) -> Result<Periodogram> {
        if !rx.same_shape(tx) {
            return Err(Error::Shape(format!(
                "rx grid {}x{} vs tx grid {}x{}",
                rx.num_subcarriers, rx.num_symbols, tx.num_subcarriers, tx.num_symbols
            )));
        }
        if rx.num_subcarriers != self.k || rx.num_symbols != self.m {
            return Err(Error::Shape(format!(
                "grid {}x{} does not match engine {}x{}",
                rx.num_subcarriers, rx.num_symbols, self.k, self.m
            )));
        }
        let (nr, nd) = (self.n_range, self.n_doppler);
        let mut buf = vec![Complex64::new(0.0, 0.0); nr * nd];
        for k in 0..self.k {
            for m in 0..self.m {
                let x = tx.get(k, m);
                if x.norm_sqr() == 0.0 {
                    return Err(Error::Domain(format!("zero transmit symbol at ({k}, {m})")));
                }
                buf[k * nd + m] = rx.get(k, m) / x * (self.range_win[k] * self.doppler_win[m]);
            }
        }
        let mut scratch =
            vec![Complex64::new(0.0, 0.0); self.doppler_fft.get_inplace_scratch_len()];
        for row in buf.chunks_exact_mut(nd).take(self.k) {
            self.doppler_fft.process_with_scratch(row, &mut scratch);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); nr];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.range_fft.get_inplace_scratch_len()];
        let norm = 1.0 / (self.k * self.m) as f64;
        let mut data = vec![0.0; nr * nd];
        for d in 0..nd {
            for (r, c) in col.iter_mut().enumerate() {
                *c = buf[r * nd + d];
            }
            self.range_fft.process_with_scratch(&mut col, &mut scratch);
            for (r, c) in col.iter().enumerate() {
                data[r * nd + d] = (c * norm).norm_sqr();
            }
        }
        Ok(Periodogram {
            n_range: nr,
            n_doppler: nd,
            data,
        })
    }
}

/// One-shot helper around [`PeriodogramEngine`].
pub fn range_doppler_map(
    rx: &SymbolGrid,
    tx: &SymbolGrid,
    params: &RadioParams,
) -> Result<Periodogram> {
    PeriodogramEngine::new(params).range_doppler_map(rx, tx)
}

/// Polar power map D_{q,t}: one column per scan direction, rows are range bins.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeAngleMap {
    pub n_range: usize,
    /// Stored range-major: `values[r * n_dirs + j]`.
    pub values: Vec<f64>,
    pub range_bin_m: f64,
    pub scan_dirs_rad: Vec<f64>,
    pub bs_id: usize,
    pub scan_index: usize,
}

impl RangeAngleMap {
    pub fn n_dirs(&self) -> usize {
        self.scan_dirs_rad.len()
    }

    #[inline]
    pub fn get(&self, r: usize, j: usize) -> f64 {
        self.values[r * self.n_dirs() + j]
    }

    pub fn from_columns(
        columns: Vec<Vec<f64>>,
        scan_dirs_rad: Vec<f64>,
        range_bin_m: f64,
        bs_id: usize,
        scan_index: usize,
    ) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Shape(
                "range-angle map needs at least one scan direction".into(),
            ));
        }
        if columns.len() != scan_dirs_rad.len() {
            return Err(Error::Shape(format!(
                "{} columns for {} scan directions",
                columns.len(),
                scan_dirs_rad.len()
            )));
        }
        let n_range = columns[0].len();
        if columns.iter().any(|c| c.len() != n_range) {
            return Err(Error::Shape("columns differ in length".into()));
        }
        let n_dirs = columns.len();
        let mut values = vec![0.0; n_range * n_dirs];
        for (j, c) in columns.iter().enumerate() {
            for (r, v) in c.iter().enumerate() {
                values[r * n_dirs + j] = *v;
            }
        }
        Ok(Self {
            n_range,
            values,
            range_bin_m,
            scan_dirs_rad,
            bs_id,
            scan_index,
        })
    }

    /// (range bin, direction index) of the global maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best / self.n_dirs(), best % self.n_dirs())
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Assembles D_{q,t} from one range-Doppler periodogram per scan direction by
/// keeping, for each direction, the Doppler column that holds its maximum.
pub fn range_angle_map(
    per_direction: &[Periodogram],
    scan_dirs_rad: &[f64],
    range_bin_m: f64,
    bs_id: usize,
    scan_index: usize,
) -> Result<RangeAngleMap> {
    let columns = per_direction.iter().map(Periodogram::max_column).collect();
    RangeAngleMap::from_columns(
        columns,
        scan_dirs_rad.to_vec(),
        range_bin_m,
        bs_id,
        scan_index,
    )
}

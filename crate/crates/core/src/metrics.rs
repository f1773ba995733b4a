//! OSPA localization error with optimal assignment, aggregate downlink
//! capacity and classification accuracy.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Vec2;

/// Optimal rectangular assignment. `pairs` are (row, col), sorted by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Minimum-cost linear assignment on a rectangular matrix via shortest
/// augmenting paths with dual potentials. Every row is matched when
/// rows ≤ cols and every column otherwise.
pub fn assignment(cost: &DMatrix<f64>) -> Assignment {
    let (r, c) = cost.shape();
    if r == 0 || c == 0 {
        return Assignment {
            pairs: Vec::new(),
            cost: 0.0,
        };
    }
    let transposed = r > c;
    let a = if transposed {
        cost.transpose()
    } else {
        cost.clone()
    };
    let (n, m) = a.shape();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| {
            if transposed {
                (j - 1, p[j] - 1)
            } else {
                (p[j] - 1, j - 1)
            }
        })
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| cost[(i, j)]).sum();
    Assignment { pairs, cost: total }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OspaConfig {
    /// OSPA order p.
    pub order_p: f64,
    /// Cutoff ξ_g in meters.
    pub gate_m: f64,
}

impl Default for OspaConfig {
    fn default() -> Self {
        Self {
            order_p: 2.0,
            gate_m: 5.0,
        }
    }
}

impl OspaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.order_p >= 1.0) || !(self.gate_m > 0.0) {
            return Err(Error::config("ospa: order_p must be >= 1 and gate_m > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OspaResult {
    pub total: f64,
    pub localization_term: f64,
    pub missed_term: f64,
    pub false_alarm_term: f64,
    /// (truth index, estimate index) pairs closer than the cutoff.
    pub matched_pairs: Vec<(usize, usize)>,
    /// Σ dᵖ over the matched pairs.
    pub matched_cost: f64,
    /// N_c = |S| + |Ŝ| − |ζ*|.
    pub cardinality: usize,
}

impl OspaResult {
    fn zero() -> Self {
        Self {
            total: 0.0,
            localization_term: 0.0,
            missed_term: 0.0,
            false_alarm_term: 0.0,
            matched_pairs: Vec::new(),
            matched_cost: 0.0,
            cardinality: 0,
        }
    }

    /// (loc + missed + false alarm)^{1/p}.
    pub fn reassemble(&self, p: f64) -> f64 {
        (self.localization_term + self.missed_term + self.false_alarm_term).powf(1.0 / p)
    }
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Gated OSPA. Pairs are chosen by optimal assignment on min(d, ξ)ᵖ; only
/// pairs with d < ξ count as matched. Unmatched elements of either set
/// each cost ξᵖ/2. Both sets empty gives 0.
pub fn ospa(truth: &[Vec2], estimates: &[Vec2], cfg: &OspaConfig) -> OspaResult {
    if truth.is_empty() && estimates.is_empty() {
        return OspaResult::zero();
    }
    let p = cfg.order_p;
    let xi = cfg.gate_m;
    let cost = DMatrix::from_fn(truth.len(), estimates.len(), |i, j| {
        dist(truth[i], estimates[j]).min(xi).powf(p)
    });
    let sol = assignment(&cost);
    let matched_pairs: Vec<(usize, usize)> = sol
        .pairs
        .into_iter()
        .filter(|&(i, j)| dist(truth[i], estimates[j]) < xi)
        .collect();
    let matched_cost: f64 = matched_pairs.iter().map(|&(i, j)| cost[(i, j)]).sum();
    let z = matched_pairs.len();
    let n_c = truth.len() + estimates.len() - z;
    let nc = n_c as f64;
    let half = xi.powf(p) / 2.0;
    let localization_term = matched_cost / nc;
    let missed_term = half * (truth.len() - z) as f64 / nc;
    let false_alarm_term = half * (estimates.len() - z) as f64 / nc;
    let total = (localization_term + missed_term + false_alarm_term).powf(1.0 / p);
    OspaResult {
        total,
        localization_term,
        missed_term,
        false_alarm_term,
        matched_pairs,
        matched_cost,
        cardinality: n_c,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityParams {
    pub comm_snr_linear: f64,
    pub n_sensing: usize,
    pub n_total: usize,
    pub rho_p: f64,
    pub num_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
}

impl CapacityParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_sensing > self.n_total || self.n_total == 0 {
            return Err(Error::config(
                "capacity: need 0 <= N_s <= N_tot and N_tot >= 1",
            ));
        }
        if !(self.comm_snr_linear > 0.0) || !(0.0..=1.0).contains(&self.rho_p) {
            return Err(Error::config(
                "capacity: SNR must be > 0 and rho_p in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Mean downlink rate per BS in bit/s. Sensing BSs keep a (1 − ρ_p) share of
/// the transmit power for data.
pub fn aggregate_capacity(c: &CapacityParams) -> Result<f64> {
    c.validate()?;
    let bw = c.subcarrier_spacing_hz * c.num_subcarriers as f64;
    let ns = c.n_sensing as f64;
    let sensing = ns * bw * (1.0 + (1.0 - c.rho_p) * c.comm_snr_linear).log2();
    let comm = (c.n_total as f64 - ns) * bw * (1.0 + c.comm_snr_linear).log2();
    Ok((sensing + comm) / c.n_total as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Records one decision, with `positive` meaning the positive class.
    pub fn record(&mut self, predicted_positive: bool, actual_positive: bool) {
        match (predicted_positive, actual_positive) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, o: &ConfusionCounts) {
        self.tp += o.tp;
        self.tn += o.tn;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::Domain(
            "accuracy of an empty confusion matrix".into(),
        ));
    }
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::*;

    /// Minimum over all injective maps from the smaller side into the larger,
    /// cost summed in row order.
    pub fn brute_force(cost: &DMatrix<f64>) -> f64 {
        let (r, c) = cost.shape();
        if r == 0 || c == 0 {
            return 0.0;
        }
        let t = r > c;
        let a = if t { cost.transpose() } else { cost.clone() };
        let (n, m) = a.shape();
        let mut best = f64::INFINITY;
        let mut used = vec![false; m];
        let mut chosen = vec![0usize; n];
        fn rec(
            a: &DMatrix<f64>,
            t: bool,
            row: usize,
            used: &mut [bool],
            chosen: &mut [usize],
            best: &mut f64,
        ) {
            let n = chosen.len();
            if row == n {
                // sum in the original matrix's row order
                let mut pairs: Vec<(usize, usize)> = chosen
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| if t { (j, i) } else { (i, j) })
                    .collect();
                pairs.sort_unstable();
                let s: f64 = pairs
                    .iter()
                    .map(|&(i, j)| if t { a[(j, i)] } else { a[(i, j)] })
                    .sum();
                if s < *best {
                    *best = s;
                }
                return;
            }
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    chosen[row] = j;
                    rec(a, t, row + 1, used, chosen, best);
                    used[j] = false;
                }
            }
        }
        rec(&a, t, 0, &mut used, &mut chosen, &mut best);
        best
    }

    /// OSPA evaluated by enumerating every injective assignment on the gated
    /// cost and keeping the cheapest.
    pub fn ospa_brute(truth: &[Vec2], est: &[Vec2], p: f64, xi: f64) -> (f64, f64) {
        if truth.is_empty() && est.is_empty() {
            return (0.0, 0.0);
        }
        let d = |i: usize, j: usize| (truth[i][0] - est[j][0]).hypot(truth[i][1] - est[j][1]);
        let (n, m) = (truth.len(), est.len());
        let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
        let small = n.min(m);
        let mut perm: Vec<usize> = Vec::new();
        let mut used = vec![false; n.max(m)];
        fn rec(
            depth: usize,
            small: usize,
            big: usize,
            perm: &mut Vec<usize>,
            used: &mut [bool],
            f: &mut dyn FnMut(&[usize]),
        ) {
            if depth == small {
                f(perm);
                return;
            }
            for j in 0..big {
                if !used[j] {
                    used[j] = true;
                    perm.push(j);
                    rec(depth + 1, small, big, perm, used, f);
                    perm.pop();
                    used[j] = false;
                }
            }
        }
        let mut visit = |perm: &[usize]| {
            let mut pairs: Vec<(usize, usize)> = perm
                .iter()
                .enumerate()
                .map(|(a, &b)| if n <= m { (a, b) } else { (b, a) })
                .collect();
            pairs.sort_unstable();
            let gated: f64 = pairs.iter().map(|&(i, j)| d(i, j).min(xi).powf(p)).sum();
            if best.as_ref().is_none_or(|(b, _)| gated < *b) {
                best = Some((gated, pairs));
            }
        };
        rec(0, small, n.max(m), &mut perm, &mut used, &mut visit);
        let pairs = best.map(|b| b.1).unwrap_or_default();
        let matched: Vec<_> = pairs.into_iter().filter(|&(i, j)| d(i, j) < xi).collect();
        let matched_cost: f64 = matched.iter().map(|&(i, j)| d(i, j).min(xi).powf(p)).sum();
        let z = matched.len();
        let nc = (n + m - z) as f64;
        let total = ((matched_cost + xi.powf(p) / 2.0 * (n + m - 2 * z) as f64) / nc).powf(1.0 / p);
        (matched_cost, total)
    }
}

//! Linear-Gaussian motion and measurement model with Kalman predict/update.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};

use crate::error::{Error, Result};

/// Constant-velocity model over state (x, y, vx, vy) with position-only
/// measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub f: Matrix4<f64>,
    pub q: Matrix4<f64>,
    pub h: Matrix2x4<f64>,
    pub survival_prob: f64,
    pub detection_prob: f64,
    /// λ_c, expected clutter measurements per scan.
    pub clutter_intensity: f64,
    /// κ = λ_c / A.
    pub clutter_density: f64,
    pub scan_period_s: f64,
    pub process_noise_scale: f64,
}

impl MotionModel {
    pub fn new(
        scan_period_s: f64,
        process_noise_scale: f64,
        survival_prob: f64,
        detection_prob: f64,
        clutter_intensity: f64,
        area_m2: f64,
    ) -> Result<Self> {
        if !(scan_period_s > 0.0
            && process_noise_scale > 0.0
            && area_m2 > 0.0
            && clutter_intensity > 0.0)
        {
            return Err(Error::config(
                "motion model: T_scan, alpha_q, lambda_c and area must be > 0",
            ));
        }
        if !(survival_prob > 0.0
            && survival_prob <= 1.0
            && detection_prob > 0.0
            && detection_prob < 1.0)
        {
            return Err(Error::config("motion model: P_s in (0, 1], P_d in (0, 1)"));
        }
        let t = scan_period_s;
        #[rustfmt::skip]
        let f = Matrix4::new(
            1.0, 0.0, t, 0.0,
            0.0, 1.0, 0.0, t,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        #[rustfmt::skip]
        let h = Matrix2x4::new(
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
        );
        Ok(Self {
            f,
            q: Matrix4::identity() * (process_noise_scale * t),
            h,
            survival_prob,
            detection_prob,
            clutter_intensity,
            clutter_density: clutter_intensity / area_m2,
            scan_period_s,
            process_noise_scale,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

impl Gaussian {
    pub fn new(mean: Vector4<f64>, cov: Matrix4<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.mean[0], self.mean[1]]
    }
}

pub const PSD_JITTER: f64 = 1e-9;

/// Symmetrizes `p` and, if it is not positive definite, adds growing
/// diagonal jitter until it is. Returns true when jitter was needed.
pub fn repair_psd(p: &mut Matrix4<f64>) -> bool {
    *p = (*p + p.transpose()) * 0.5;
    if p.cholesky().is_some() {
        return false;
    }
    let mut eps = PSD_JITTER * p.diagonal().abs().max().max(1.0);
    loop {
        let candidate = *p + Matrix4::identity() * eps;
        if candidate.cholesky().is_some() {
            *p = candidate;
            return true;
        }
        eps *= 10.0;
    }
}

pub fn kalman_predict(g: &Gaussian, m: &MotionModel) -> Gaussian {
    Gaussian {
        mean: m.f * g.mean,
        cov: m.f * g.cov * m.f.transpose() + m.q,
    }
}

/// Innovation ν = z − Hμ, its covariance S = HPHᵀ + R and S⁻¹.
pub struct Innovation {
    pub residual: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub cov_inv: Matrix2<f64>,
    pub log_det: f64,
}

impl Innovation {
    pub fn new(g: &Gaussian, z: &Vector2<f64>, r: &Matrix2<f64>, m: &MotionModel) -> Result<Self> {
        let s = m.h * g.cov * m.h.transpose() + r;
        let s = (s + s.transpose()) * 0.5;
        let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
        let l = chol.l();
        let log_det = 2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln());
        if !log_det.is_finite() {
            return Err(Error::SingularInnovation);
        }
        Ok(Self {
            residual: z - m.h * g.mean,
            cov: s,
            cov_inv: chol.inverse(),
            log_det,
        })
    }

    /// Squared Mahalanobis distance νᵀS⁻¹ν.
    pub fn mahalanobis_sq(&self) -> f64 {
        (self.residual.transpose() * self.cov_inv * self.residual)[(0, 0)]
    }

    /// log N(z; Hμ, S).
    pub fn log_likelihood(&self) -> f64 {
        -0.5 * (self.mahalanobis_sq() + self.log_det) - (2.0 * std::f64::consts::PI).ln()
    }
}

/// Updated posterior given a precomputed innovation (Joseph form).
pub fn kalman_update_with(
    g: &Gaussian,
    inn: &Innovation,
    r: &Matrix2<f64>,
    m: &MotionModel,
) -> Gaussian {
    let k = g.cov * m.h.transpose() * inn.cov_inv;
    let ikh = Matrix4::identity() - k * m.h;
    let cov = ikh * g.cov * ikh.transpose() + k * r * k.transpose();
    Gaussian {
        mean: g.mean + k * inn.residual,
        cov: (cov + cov.transpose()) * 0.5,
    }
}

/// Posterior and the likelihood N(z; Hμ, HPHᵀ + R).
pub fn kalman_update(
    g: &Gaussian,
    z: &Vector2<f64>,
    r: &Matrix2<f64>,
    m: &MotionModel,
) -> Result<(Gaussian, f64)> {
    let inn = Innovation::new(g, z, r, m)?;
    Ok((
        kalman_update_with(g, &inn, r, m),
        inn.log_likelihood().exp(),
    ))
}

//! Univariate robust scale machinery: rho/psi function families, the
//! M-scale solver, the tau-scale, and the weight function (with its A/B
//! constants) that drives the weighted center updates.

use std::collections::HashMap;
use std::sync::Mutex;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{chi2_cdf, gauss_legendre, ln_gamma};

/// Loss function family. All bounded families are normalized so that
/// sup rho = 1; `Quadratic` is unbounded and exists for the exact
/// K-means reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoFamily {
    Bisquare,
    SmoothHardRejection,
    Quadratic,
}

/// Rho-function selection plus tuning constants.
///
/// `c1` and `c2` scale the arguments of the two losses (`rho_i(t) =
/// rho(t/c_i)`); `b` is the M-scale target in `mean rho1(u_i/s) = b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoConfig {
    pub family: RhoFamily,
    pub c1: f64,
    pub c2: f64,
    pub b: f64,
}

impl RhoConfig {
    pub fn new(family: RhoFamily, c1: f64, c2: f64, b: f64) -> Result<Self> {
        let cfg = Self { family, c1, c2, b };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Tuning constants calibrated for dimension `p`: `c1` solves
    /// `E[rho(||Z||/c1)] = b` for Z ~ N_p(0, I), `c2 = 3 c1`, `b = 0.5`.
    pub fn for_dimension(family: RhoFamily, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidParameter {
                name: "p",
                reason: "must be positive".into(),
            });
        }
        if family == RhoFamily::Quadratic {
            return Self::lloyd();
        }
        let b = 0.5;
        let c1 = calibrated_constant(family, p, b)?;
        Self::new(family, c1, 3.0 * c1, b)
    }

    /// Quadratic losses with unit constants and b = 1: with this
    /// configuration the tau-scale equals the L2 scale and the weighted
    /// center update is the plain mean (Lloyd's algorithm).
    pub fn lloyd() -> Result<Self> {
        Self::new(RhoFamily::Quadratic, 1.0, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "c1",
                reason: format!("{} not positive", self.c1),
            });
        }
        if !(self.c2 > 0.0 && self.c2.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "c2",
                reason: format!("{} not positive", self.c2),
            });
        }
        let ok_b = match self.family {
            RhoFamily::Quadratic => self.b > 0.0 && self.b.is_finite(),
            _ => self.b > 0.0 && self.b < 1.0,
        };
        if !ok_b {
            return Err(Error::InvalidParameter {
                name: "b",
                reason: format!("{} outside the family's admissible range", self.b),
            });
        }
        Ok(())
    }

    fn c(&self, which: u8) -> f64 {
        match which {
            1 => self.c1,
            2 => self.c2,
            _ => panic!("rho index must be 1 or 2"),
        }
    }
}

// Coefficients of the smooth hard-rejection loss on 2/3 <= |t| <= 1.
const SHR: [f64; 5] = [0.55, -2.69, 10.76, -11.66, 4.04];

/// Base rho on the already-normalized argument (the tuning constant has
/// been divided out).
fn rho_base(family: RhoFamily, t: f64) -> f64 {
    let t = t.abs();
    match family {
        RhoFamily::Quadratic => t * t,
        RhoFamily::Bisquare => {
            if t >= 1.0 {
                1.0
            } else {
                let u = 1.0 - t * t;
                1.0 - u * u * u
            }
        }
        RhoFamily::SmoothHardRejection => {
            if t < 2.0 / 3.0 {
                1.38 * t * t
            } else if t <= 1.0 {
                let t2 = t * t;
                SHR[0] + t2 * (SHR[1] + t2 * (SHR[2] + t2 * (SHR[3] + t2 * SHR[4])))
            } else {
                1.0
            }
        }
    }
}

fn psi_base(family: RhoFamily, t: f64) -> f64 {
    let a = t.abs();
    let v = match family {
        RhoFamily::Quadratic => 2.0 * a,
        RhoFamily::Bisquare => {
            if a >= 1.0 {
                0.0
            } else {
                let u = 1.0 - a * a;
                6.0 * a * u * u
            }
        }
        RhoFamily::SmoothHardRejection => {
            if a < 2.0 / 3.0 {
                2.0 * 1.38 * a
            } else if a <= 1.0 {
                let t2 = a * a;
                a * (2.0 * SHR[1] + t2 * (4.0 * SHR[2] + t2 * (6.0 * SHR[3] + t2 * 8.0 * SHR[4])))
            } else {
                0.0
            }
        }
    };
    if t < 0.0 {
        -v
    } else {
        v
    }
}

/// rho''(0) of the base family; psi(t)/t tends to this at t = 0.
fn rho_base_curvature(family: RhoFamily) -> f64 {
    match family {
        RhoFamily::Quadratic => 2.0,
        RhoFamily::Bisquare => 6.0,
        RhoFamily::SmoothHardRejection => 2.0 * 1.38,
    }
}

/// rho_i(t) = rho_base(t / c_i), `which` selecting c1 or c2.
pub fn rho(cfg: &RhoConfig, which: u8, t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::NonFinite("rho argument"));
    }
    Ok(rho_base(cfg.family, t / cfg.c(which)))
}

/// psi_i = rho_i', including the 1/c chain factor.
pub fn psi(cfg: &RhoConfig, which: u8, t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::NonFinite("psi argument"));
    }
    let c = cfg.c(which);
    Ok(psi_base(cfg.family, t / c) / c)
}

/// psi_i(t)/t with the analytic limit rho_i''(0) at t = 0.
pub fn psi_over_t(cfg: &RhoConfig, which: u8, t: f64) -> f64 {
    let c = cfg.c(which);
    if t == 0.0 {
        rho_base_curvature(cfg.family) / (c * c)
    } else {
        psi_base(cfg.family, t / c) / (c * t)
    }
}

/// M-scale: the solution s of `mean rho1(u_i / s) = b`.
///
/// Returns 0 in the degenerate case where the fraction of zero entries
/// is at least 1 - b (for bounded families the equation then has no
/// positive root). Solved by bisection on the decreasing map
/// `s -> mean rho1(u_i/s)`; the quadratic family has a closed form.
pub fn m_scale(cfg: &RhoConfig, u: &[f64]) -> Result<f64> {
    if u.is_empty() {
        return Err(Error::EmptyInput("m_scale sample"));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("m_scale sample"));
    }
    let n = u.len() as f64;
    if cfg.family == RhoFamily::Quadratic {
        // mean (u / (c1 s))^2 = b  =>  s = sqrt(mean u^2 / b) / c1
        let ms: f64 = u.iter().map(|v| v * v).sum::<f64>() / n;
        return Ok((ms / cfg.b).sqrt() / cfg.c1);
    }
    let nonzero = u.iter().filter(|v| **v != 0.0).count() as f64;
    if nonzero / n <= cfg.b {
        return Ok(0.0);
    }
    let goal = |s: f64| -> f64 {
        u.iter().map(|v| rho_base(cfg.family, v / (cfg.c1 * s))).sum::<f64>() / n - cfg.b
    };
    let max_abs = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut nz: Vec<f64> = u.iter().filter(|v| **v != 0.0).map(|v| v.abs()).collect();
    let q = crate::matrix::median(&mut nz);
    let mut lo = 1e-12 * q;
    let mut hi = 10.0 * max_abs / cfg.c1;
    let mut expand = 0;
    while goal(hi) > 0.0 {
        hi *= 2.0;
        expand += 1;
        if expand > 200 {
            return Err(Error::NonFinite("m_scale bracket expansion"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if goal(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Tau-scale: with s the M-scale under rho1, returns
/// `s * sqrt(mean rho2(u_i / s))`; 0 when s = 0.
pub fn tau_scale(cfg: &RhoConfig, u: &[f64]) -> Result<f64> {
    let s = m_scale(cfg, u)?;
    if s == 0.0 {
        return Ok(0.0);
    }
    let mean2: f64 =
        u.iter().map(|v| rho_base(cfg.family, v / (cfg.c2 * s))).sum::<f64>() / u.len() as f64;
    Ok(s * mean2.sqrt())
}

/// The constants A, B and the per-point weights of the center update.
#[derive(Debug, Clone)]
pub struct TauWeights {
    /// `A = sum_i [2 rho2(d_i/s) - psi2(d_i/s) (d_i/s)]`
    pub a: f64,
    /// `B = sum_i psi1(d_i/s) (d_i/s)`
    pub b: f64,
    /// M-scale of the distances.
    pub s: f64,
    /// `w(d_i/s)` with `w(t) = A psi1(t)/t + B psi2(t)/t`.
    pub per_point_weight: Vec<f64>,
}

/// Computes the weight function at the current distances. Errors when the
/// distance scale is zero (all points collapsed onto centers).
pub fn tau_weights(cfg: &RhoConfig, d: &[f64]) -> Result<TauWeights> {
    if d.is_empty() {
        return Err(Error::EmptyInput("tau_weights distances"));
    }
    let s = m_scale(cfg, d)?;
    if s <= 0.0 {
        return Err(Error::DegenerateScale);
    }
    let mut a = 0.0;
    let mut b = 0.0;
    for &di in d {
        let t = di / s;
        a += 2.0 * rho(cfg, 2, t)? - psi(cfg, 2, t)? * t;
        b += psi(cfg, 1, t)? * t;
    }
    let per_point_weight = d
        .iter()
        .map(|&di| {
            let t = di / s;
            a * psi_over_t(cfg, 1, t) + b * psi_over_t(cfg, 2, t)
        })
        .collect();
    Ok(TauWeights {
        a,
        b,
        s,
        per_point_weight,
    })
}

type CalibrationKey = (RhoFamily, usize, u64);

static CALIBRATION_CACHE: Lazy<Mutex<HashMap<CalibrationKey, f64>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// c such that `E[rho(||Z||/c)] = b` for Z ~ N_p(0, I), i.e. the constant
/// making the M-scale of p-dimensional Gaussian distances consistent.
/// 64-point Gauss-Legendre quadrature against the chi density, bisection
/// in c. Results are cached per (family, p, b).
pub fn calibrated_constant(family: RhoFamily, p: usize, b: f64) -> Result<f64> {
    if family == RhoFamily::Quadratic {
        return Ok(1.0);
    }
    let key = (family, p, b.to_bits());
    if let Some(&c) = CALIBRATION_CACHE.lock().unwrap().get(&key) {
        return Ok(c);
    }
    let (nodes, weights) = gauss_legendre(64);
    let pf = p as f64;
    let ln_norm = (pf / 2.0 - 1.0) * 2.0f64.ln() + ln_gamma(pf / 2.0);
    // chi_p density
    let dens = |r: f64| ((pf - 1.0) * r.ln() - r * r / 2.0 - ln_norm).exp();
    // E[rho(R/c)] = int_0^c rho(r/c) f(r) dr + P(R > c)
    let expected = |c: f64| -> f64 {
        let half = c / 2.0;
        let mut acc = 0.0;
        for (&x, &w) in nodes.iter().zip(&weights) {
            let r = half * (x + 1.0);
            acc += w * rho_base(family, r / c) * dens(r);
        }
        acc * half + (1.0 - chi2_cdf(p, c * c))
    };
    // expected(c) decreases from 1 to 0; bracket and bisect
    let mut lo = 1e-6;
    let mut hi = 1.0;
    while expected(hi) > b {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::InvalidParameter {
                name: "b",
                reason: "calibration bracket exhausted".into(),
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) > b {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    let c = 0.5 * (lo + hi);
    CALIBRATION_CACHE.lock().unwrap().insert(key, c);
    Ok(c)
}

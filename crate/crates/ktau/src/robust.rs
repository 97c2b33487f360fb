//! Per-cluster robust location/scatter estimation, Mahalanobis distances,
//! chi-square cutoffs, outlier flagging, and the Mahalanobis reassignment
//! pass that adapts the clusters to non-spherical shapes.

use serde::{Deserialize, Serialize};

use crate::cluster::{CenterSet, ClusteringResult};
use crate::error::{Error, Result};
use crate::matrix::{cholesky, cholesky_condition, cholesky_solve, euclidean, median, DataMatrix};
use crate::scales::{m_scale, psi_over_t, RhoConfig};
use crate::special;

/// Robust location, scatter, and the chi-square cutoff defining a
/// cluster's confidence ellipsoid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustEllipsoid {
    pub mu: Vec<f64>,
    /// p x p symmetric positive-definite scatter, row-major.
    pub sigma: Vec<f64>,
    /// chi-square quantile chi2_{p, 1 - beta}.
    pub cutoff: f64,
    #[serde(skip)]
    chol: Vec<f64>,
}

impl RobustEllipsoid {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, cutoff: f64) -> Result<Self> {
        let p = mu.len();
        if sigma.len() != p * p {
            return Err(Error::DimensionMismatch {
                expected: p * p,
                got: sigma.len(),
            });
        }
        for i in 0..p {
            for j in 0..i {
                if (sigma[i * p + j] - sigma[j * p + i]).abs() > 1e-10 {
                    return Err(Error::InvalidParameter {
                        name: "sigma",
                        reason: "not symmetric".into(),
                    });
                }
            }
        }
        let chol = cholesky(&sigma, p).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self {
            mu,
            sigma,
            cutoff,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Outlier-flagging policy: a point is flagged when it falls outside
/// every cluster's `1 - beta` confidence ellipsoid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OutlierPolicy {
    pub beta: f64,
}

impl Default for OutlierPolicy {
    fn default() -> Self {
        Self { beta: 0.01 }
    }
}

impl OutlierPolicy {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0 < beta && beta < 1.0) {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: format!("{beta} outside (0,1)"),
            });
        }
        Ok(Self { beta })
    }
}

/// Chi-square quantile (re-exported here because the ellipsoid cutoffs
/// live in this module).
pub fn chi2_quantile(dof: usize, prob: f64) -> Result<f64> {
    special::chi2_quantile(dof, prob)
}

/// Squared Mahalanobis distance (x - mu)^t Sigma^{-1} (x - mu), computed
/// through the Cholesky factor rather than an explicit inverse.
pub fn mahalanobis_sq(x: &[f64], e: &RobustEllipsoid) -> Result<f64> {
    let p = e.dim();
    if x.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: x.len(),
        });
    }
    let diff: Vec<f64> = x.iter().zip(&e.mu).map(|(a, b)| a - b).collect();
    let solved = cholesky_solve(&e.chol, p, &diff);
    Ok(diff.iter().zip(&solved).map(|(a, b)| a * b).sum::<f64>().max(0.0))
}

fn weighted_scatter(points: &DataMatrix, mu: &[f64], w: &[f64]) -> Vec<f64> {
    let p = points.ncols();
    let mut sigma = vec![0.0; p * p];
    let wsum: f64 = w.iter().sum();
    for (row, &wi) in points.rows().zip(w) {
        for i in 0..p {
            let di = row[i] - mu[i];
            for j in 0..=i {
                sigma[i * p + j] += wi * di * (row[j] - mu[j]);
            }
        }
    }
    for i in 0..p {
        for j in 0..=i {
            sigma[i * p + j] /= wsum;
            sigma[j * p + i] = sigma[i * p + j];
        }
    }
    sigma
}

/// Make a scatter matrix usable: Cholesky-factorizable with a bounded
/// condition number, adding a small ridge if necessary. Returns the
/// (possibly ridged) matrix and its factor, or None if hopeless.
fn regularize(sigma: &[f64], p: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    if let Some(l) = cholesky(sigma, p) {
        if cholesky_condition(&l, p) <= 1e12 {
            return Some((sigma.to_vec(), l));
        }
    }
    let trace: f64 = (0..p).map(|i| sigma[i * p + i]).sum();
    let lambda = 1e-8 * trace.max(1e-300) / p as f64;
    let mut ridged = sigma.to_vec();
    for i in 0..p {
        ridged[i * p + i] += lambda;
    }
    let l = cholesky(&ridged, p)?;
    if cholesky_condition(&l, p) > 1e12 {
        return None;
    }
    Some((ridged, l))
}

/// Spherical fallback: sigma = s^2 I with s the M-scale of the Euclidean
/// distances to mu (or a tiny floor when even that is zero).
fn spherical_fallback(points: &DataMatrix, mu: &[f64], rho: &RhoConfig) -> Vec<f64> {
    let p = points.ncols();
    let d: Vec<f64> = points.rows().map(|r| euclidean(r, mu)).collect();
    let s = m_scale(rho, &d).unwrap_or(0.0);
    let s2 = if s > 0.0 { s * s } else { 1e-12 };
    let mut sigma = vec![0.0; p * p];
    for i in 0..p {
        sigma[i * p + i] = s2;
    }
    sigma
}

/// S-type robust location and scatter by iterative reweighting.
///
/// Starts from the coordinate-wise median and squared normalized MADs,
/// then alternates Mahalanobis distances, an M-scale of those distances,
/// and weighted moment updates, rescaling the scatter by
/// `median(d^2) / chi2_{p,0.5}` for Gaussian consistency. Falls back to a
/// spherical scatter in degenerate cases. The cutoff on the returned
/// ellipsoid is `chi2_{p, 0.5}`; callers flagging outliers replace it
/// via [`with_cutoff`](RobustEllipsoid) by constructing anew.
pub fn robust_location_scatter(
    points: &DataMatrix,
    rho: &RhoConfig,
) -> Result<RobustEllipsoid> {
    robust_location_scatter_with_cutoff(points, rho, &OutlierPolicy::default())
}

/// As [`robust_location_scatter`] with the ellipsoid cutoff set to
/// `chi2_{p, 1 - beta}` from the given policy.
pub fn robust_location_scatter_with_cutoff(
    points: &DataMatrix,
    rho: &RhoConfig,
    policy: &OutlierPolicy,
) -> Result<RobustEllipsoid> {
    let n = points.nrows();
    let p = points.ncols();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    let cutoff = special::chi2_quantile(p, 1.0 - policy.beta)?;
    let chi_med = special::chi2_quantile(p, 0.5)?;

    // initial location: coordinate-wise median
    let mut mu = vec![0.0; p];
    for j in 0..p {
        let mut col: Vec<f64> = points.rows().map(|r| r[j]).collect();
        mu[j] = median(&mut col);
    }
    // initial scatter: diagonal of squared normalized MADs
    let mut sigma = vec![0.0; p * p];
    let mut max_mad2 = 0.0f64;
    for j in 0..p {
        let mut dev: Vec<f64> = points.rows().map(|r| (r[j] - mu[j]).abs()).collect();
        let mad = median(&mut dev) / 0.674_489_750_196_081_7;
        sigma[j * p + j] = mad * mad;
        max_mad2 = max_mad2.max(mad * mad);
    }
    if max_mad2 == 0.0 {
        // all points equal (or degenerate in every coordinate)
        let sigma = spherical_fallback(points, &mu, rho);
        return RobustEllipsoid::new(mu, sigma, cutoff);
    }
    for j in 0..p {
        if sigma[j * p + j] == 0.0 {
            sigma[j * p + j] = 1e-8 * max_mad2;
        }
    }

    let degenerate_size = n <= p + 1;
    let mut ok = true;
    if !degenerate_size {
        for _ in 0..50 {
            let (sig_reg, l) = match regularize(&sigma, p) {
                Some(v) => v,
                None => {
                    ok = false;
                    break;
                }
            };
            sigma = sig_reg;
            let e = RobustEllipsoid {
                mu: mu.clone(),
                sigma: sigma.clone(),
                cutoff,
                chol: l,
            };
            let d: Vec<f64> = points
                .rows()
                .map(|r| mahalanobis_sq(r, &e).map(f64::sqrt))
                .collect::<Result<_>>()?;
            let s = m_scale(rho, &d)?;
            if s <= 0.0 {
                ok = false;
                break;
            }
            let w: Vec<f64> = d.iter().map(|&di| psi_over_t(rho, 1, di / s)).collect();
            let wsum: f64 = w.iter().sum();
            if wsum <= 0.0 {
                ok = false;
                break;
            }
            let mut new_mu = vec![0.0; p];
            for (row, &wi) in points.rows().zip(&w) {
                for j in 0..p {
                    new_mu[j] += wi * row[j];
                }
            }
            for v in new_mu.iter_mut() {
                *v /= wsum;
            }
            let mut new_sigma = weighted_scatter(points, &new_mu, &w);
            // consistency rescale: median Mahalanobis^2 -> chi2 median
            if let Some((sig_reg, l)) = regularize(&new_sigma, p) {
                new_sigma = sig_reg;
                let e = RobustEllipsoid {
                    mu: new_mu.clone(),
                    sigma: new_sigma.clone(),
                    cutoff,
                    chol: l,
                };
                let mut d2: Vec<f64> = points
                    .rows()
                    .map(|r| mahalanobis_sq(r, &e))
                    .collect::<Result<_>>()?;
                let med = median(&mut d2);
                if med > 0.0 {
                    let factor = med / chi_med;
                    for v in new_sigma.iter_mut() {
                        *v *= factor;
                    }
                }
            } else {
                ok = false;
                break;
            }
            // relative change of location and scatter
            let mu_change = euclidean(&new_mu, &mu)
                / mu.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            let sig_norm: f64 = sigma.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            let sig_change: f64 = new_sigma
                .iter()
                .zip(&sigma)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                / sig_norm;
            mu = new_mu;
            sigma = new_sigma;
            if mu_change < 1e-6 && sig_change < 1e-6 {
                break;
            }
        }
    }

    if degenerate_size || !ok {
        let sigma = spherical_fallback(points, &mu, rho);
        return RobustEllipsoid::new(mu, sigma, cutoff);
    }
    match regularize(&sigma, p) {
        Some((sig, l)) => Ok(RobustEllipsoid {
            mu,
            sigma: sig,
            cutoff,
            chol: l,
        }),
        None => {
            let sigma = spherical_fallback(points, &mu, rho);
            RobustEllipsoid::new(mu, sigma, cutoff)
        }
    }
}

/// A point is flagged iff it lies outside the union of all cluster
/// ellipsoids, i.e. its squared Mahalanobis distance exceeds the cutoff
/// for every cluster.
pub fn flag_outliers(
    data: &DataMatrix,
    ellipsoids: &[RobustEllipsoid],
) -> Result<Vec<bool>> {
    let mut flags = Vec::with_capacity(data.nrows());
    for row in data.rows() {
        let mut outside_all = true;
        for e in ellipsoids {
            if mahalanobis_sq(row, e)? <= e.cutoff {
                outside_all = false;
                break;
            }
        }
        flags.push(outside_all);
    }
    Ok(flags)
}

/// Groups row indices by cluster, dropping empty clusters. Returns the
/// member lists of the non-empty clusters in index order.
fn cluster_members(assignment: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); k];
    for (i, &a) in assignment.iter().enumerate() {
        members[a].push(i);
    }
    members.into_iter().filter(|m| !m.is_empty()).collect()
}

/// Fits a robust ellipsoid per cluster of `result` and flags points
/// outside their union. Used to score the base fit with the same
/// flagging mechanism as the improved one.
pub fn flag_result_outliers(
    data: &DataMatrix,
    result: &ClusteringResult,
    rho: &RhoConfig,
    policy: &OutlierPolicy,
) -> Result<Vec<bool>> {
    let members = cluster_members(&result.assignment, result.centers.k());
    let ellipsoids: Vec<RobustEllipsoid> = members
        .iter()
        .map(|m| ellipsoid_for_members(data, m, rho, policy))
        .collect::<Result<_>>()?;
    flag_outliers(data, &ellipsoids)
}

fn ellipsoid_for_members(
    data: &DataMatrix,
    members: &[usize],
    rho: &RhoConfig,
    policy: &OutlierPolicy,
) -> Result<RobustEllipsoid> {
    let pts = data.select_rows(members);
    if pts.nrows() >= 2 {
        robust_location_scatter_with_cutoff(&pts, rho, policy)
    } else {
        // single member: center on it with a unit spherical scatter
        let p = data.ncols();
        let mut sigma = vec![0.0; p * p];
        for i in 0..p {
            sigma[i * p + i] = 1.0;
        }
        RobustEllipsoid::new(
            pts.row(0).to_vec(),
            sigma,
            special::chi2_quantile(p, 1.0 - policy.beta)?,
        )
    }
}

/// The shape-adaptive improvement pass: robust location/scatter per base
/// cluster, one reassignment of every point to the cluster of minimal
/// Mahalanobis distance, fresh ellipsoids on the new clusters, and
/// outlier flagging against their union.
///
/// Base clusters that are empty are dropped (K shrinks); clusters that
/// lose all but one point during reassignment keep their previous
/// ellipsoid rather than aborting.
pub fn improved_ktau(
    data: &DataMatrix,
    base: &ClusteringResult,
    rho: &RhoConfig,
    policy: &OutlierPolicy,
) -> Result<ClusteringResult> {
    let members = cluster_members(&base.assignment, base.centers.k());
    if members.is_empty() {
        return Err(Error::EmptyInput("base clustering has no members"));
    }
    let ellipsoids: Vec<RobustEllipsoid> = members
        .iter()
        .map(|m| ellipsoid_for_members(data, m, rho, policy))
        .collect::<Result<_>>()?;

    // one pass of Mahalanobis reassignment
    let k = ellipsoids.len();
    let mut assignment = Vec::with_capacity(data.nrows());
    for row in data.rows() {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for (j, e) in ellipsoids.iter().enumerate() {
            let d2 = mahalanobis_sq(row, e)?;
            if d2 < best {
                best = d2;
                arg = j;
            }
        }
        assignment.push(arg);
    }

    // recompute ellipsoids on the new clusters
    let mut new_members = vec![Vec::new(); k];
    for (i, &a) in assignment.iter().enumerate() {
        new_members[a].push(i);
    }
    let final_ellipsoids: Vec<RobustEllipsoid> = new_members
        .iter()
        .zip(&ellipsoids)
        .map(|(m, prev)| {
            if m.len() >= 2 {
                ellipsoid_for_members(data, m, rho, policy)
            } else {
                Ok(prev.clone())
            }
        })
        .collect::<Result<_>>()?;

    let outlier_flag = flag_outliers(data, &final_ellipsoids)?;
    let centers = CenterSet::new(final_ellipsoids.iter().map(|e| e.mu.clone()).collect())?;
    let distances: Vec<f64> = data
        .rows()
        .zip(&assignment)
        .map(|(r, &a)| euclidean(r, centers.center(a)))
        .collect();
    let tau = crate::scales::tau_scale(rho, &distances)?;
    Ok(ClusteringResult {
        centers,
        assignment,
        distances,
        tau,
        outlier_flag,
        iterations: base.iterations,
        converged: base.converged,
        history: Vec::new(),
    })
}

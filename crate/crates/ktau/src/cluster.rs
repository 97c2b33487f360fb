//! Cluster-center estimation by tau-scale minimization, plus the K-means
//! and trimmed K-means baselines. All fits are multi-start with a
//! density-aware first start and seeded random restarts, selected by the
//! respective objective.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{euclidean, DataMatrix};
use crate::scales::{tau_scale, tau_weights, RhoConfig, RhoFamily};

/// Ordered list of K cluster centers in R^p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterSet {
    centers: Vec<Vec<f64>>,
}

impl CenterSet {
    pub fn new(centers: Vec<Vec<f64>>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::EmptyInput("center set"));
        }
        let p = centers[0].len();
        for c in &centers {
            if c.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("center coordinates"));
            }
        }
        Ok(Self { centers })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    #[inline]
    pub fn center(&self, k: usize) -> &[f64] {
        &self.centers[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.centers.iter()
    }

    pub fn into_inner(self) -> Vec<Vec<f64>> {
        self.centers
    }
}

/// Configuration of the tau-scale clustering fit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KTauConfig {
    pub k: usize,
    pub rho: RhoConfig,
    /// Number of multi-start replications H.
    pub n_starts: usize,
    pub max_iter: usize,
    /// Relative center-change stopping tolerance.
    pub tol: f64,
    pub seed: u64,
    /// Use the density-aware initialization for the first start.
    pub use_robin_first_start: bool,
    /// Solve the in-iteration M-scale with the configured `rho.b` instead
    /// of the fixed 0.5 of the updating step.
    pub unify_b: bool,
    /// Record the center set after every iteration (diagnostics).
    pub record_history: bool,
}

impl KTauConfig {
    pub fn new(k: usize, rho: RhoConfig, seed: u64) -> Self {
        Self {
            k,
            rho,
            n_starts: 20,
            max_iter: 100,
            tol: 1e-6,
            seed,
            use_robin_first_start: true,
            unify_b: false,
            record_history: false,
        }
    }

    /// Rho configuration used inside the updating step. Bounded families
    /// solve the M-scale with b = 0.5 as the updating step prescribes;
    /// the quadratic family keeps its own b (the Lloyd reduction).
    fn iteration_rho(&self) -> RhoConfig {
        if self.unify_b || self.rho.family == RhoFamily::Quadratic {
            self.rho
        } else {
            RhoConfig { b: 0.5, ..self.rho }
        }
    }
}

/// Output of a clustering fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub centers: CenterSet,
    /// Nearest-center index per observation (ties to the lowest index).
    pub assignment: Vec<usize>,
    /// Nearest-center Euclidean distance per observation.
    pub distances: Vec<f64>,
    /// Objective at the solution (tau-scale of the distances, or the L2
    /// scale for the baselines).
    pub tau: f64,
    pub outlier_flag: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    /// Center set after each iteration, when requested.
    #[serde(skip)]
    pub history: Vec<CenterSet>,
}

/// Nearest-center distance and argmin index per row; ties broken to the
/// lowest center index.
pub fn distances(data: &DataMatrix, centers: &CenterSet) -> Result<(Vec<f64>, Vec<usize>)> {
    if data.ncols() != centers.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.ncols(),
            got: centers.dim(),
        });
    }
    let mut d = Vec::with_capacity(data.nrows());
    let mut a = Vec::with_capacity(data.nrows());
    for row in data.rows() {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for (k, c) in centers.iter().enumerate() {
            let dist = euclidean(row, c);
            if dist < best {
                best = dist;
                arg = k;
            }
        }
        d.push(best);
        a.push(arg);
    }
    Ok((d, a))
}

/// Tau-scale of the nearest-center distances: the quantity the fit
/// minimizes.
pub fn ktau_objective(data: &DataMatrix, centers: &CenterSet, rho: &RhoConfig) -> Result<f64> {
    let (d, _) = distances(data, centers)?;
    tau_scale(rho, &d)
}

fn l2_scale(d: &[f64]) -> f64 {
    (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt()
}

fn check_init(data: &DataMatrix, init: &CenterSet, k: usize) -> Result<()> {
    if init.k() != k {
        return Err(Error::InvalidParameter {
            name: "init",
            reason: format!("expected {k} centers, got {}", init.k()),
        });
    }
    if init.dim() != data.ncols() {
        return Err(Error::DimensionMismatch {
            expected: data.ncols(),
            got: init.dim(),
        });
    }
    Ok(())
}

fn converged_step(old: &CenterSet, new: &CenterSet, tol: f64) -> bool {
    old.iter().zip(new.iter()).all(|(o, n)| {
        let change = euclidean(o, n);
        let norm = o.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = if norm < 1e-12 { 1.0 } else { norm };
        change / denom <= tol
    })
}

/// One weighted fixed-point run from a given initialization.
///
/// Each iteration assigns points to nearest centers, solves the M-scale
/// of all distances, computes the A/B constants and per-point weights,
/// and moves every center to the weighted mean of its members.
pub fn ktau_iterate(data: &DataMatrix, init: &CenterSet, cfg: &KTauConfig) -> Result<ClusteringResult> {
    check_init(data, init, cfg.k)?;
    let iter_rho = cfg.iteration_rho();
    let n = data.nrows();
    let p = data.ncols();
    let mut centers = init.clone();
    let mut history = Vec::new();
    let mut repair_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..cfg.max_iter {
        let (d, assign) = distances(data, &centers)?;
        let weights = match tau_weights(&iter_rho, &d) {
            Ok(w) => w,
            Err(Error::DegenerateScale) => {
                // perfectly collapsed clusters: already at a fixed point
                converged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        iterations += 1;

        let mut sums = vec![vec![0.0; p]; cfg.k];
        let mut wsum = vec![0.0; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (i, row) in data.rows().enumerate() {
            let k = assign[i];
            counts[k] += 1;
            let w = weights.per_point_weight[i];
            wsum[k] += w;
            for (s, &x) in sums[k].iter_mut().zip(row) {
                *s += w * x;
            }
        }

        let mut new_centers = Vec::with_capacity(cfg.k);
        for k in 0..cfg.k {
            if counts[k] == 0 {
                // reseed at the farthest observation inside the inlier
                // band d_i <= c1 * s, else a seeded-random observation
                let band = iter_rho.c1 * weights.s;
                let mut best: Option<(f64, usize)> = None;
                for (i, &di) in d.iter().enumerate() {
                    if di <= band && best.is_none_or(|(bd, _)| di > bd) {
                        best = Some((di, i));
                    }
                }
                let idx = best
                    .map(|(_, i)| i)
                    .unwrap_or_else(|| repair_rng.gen_range(0..n));
                new_centers.push(data.row(idx).to_vec());
            } else if wsum[k] > 0.0 {
                new_centers.push(sums[k].iter().map(|s| s / wsum[k]).collect());
            } else {
                // all members fully downweighted; keep the center
                new_centers.push(centers.center(k).to_vec());
            }
        }
        let new_centers = CenterSet::new(new_centers)?;
        if cfg.record_history {
            history.push(new_centers.clone());
        }
        let stop = converged_step(&centers, &new_centers, cfg.tol);
        centers = new_centers;
        if stop {
            converged = true;
            break;
        }
    }

    let (d, assignment) = distances(data, &centers)?;
    let tau = tau_scale(&cfg.rho, &d)?;
    Ok(ClusteringResult {
        assignment,
        outlier_flag: vec![false; n],
        distances: d,
        tau,
        centers,
        iterations,
        converged,
        history,
    })
}

/// Density-aware initialization: K mutually far observations drawn from
/// high-density regions. The density score is the distance to the m-th
/// nearest neighbour; only points with score below the median are
/// eligible, and seeds greedily maximize the minimum distance to the
/// already-chosen ones.
pub fn robin_init(data: &DataMatrix, k: usize, _seed: u64) -> Result<CenterSet> {
    let n = data.nrows();
    if n < k {
        return Err(Error::TooFewObservations { needed: k, got: n });
    }
    if k == n {
        return CenterSet::new((0..n).map(|i| data.row(i).to_vec()).collect());
    }
    let m = if n >= 50 { 10 } else { n.div_ceil(20).max(1) };
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut dists: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| euclidean(data.row(i), data.row(j)))
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            dists[m.min(dists.len()) - 1]
        })
        .collect();
    let mut sorted = scores.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let thresh = sorted[(n - 1) / 2];
    let mut eligible: Vec<usize> = (0..n).filter(|&i| scores[i] <= thresh).collect();
    if eligible.len() < k {
        // fall back to all points ordered by density score
        eligible = (0..n).collect();
        eligible.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    }
    // first seed: eligible point of minimal score
    let first = *eligible
        .iter()
        .min_by(|&&a, &&b| scores[a].partial_cmp(&scores[b]).unwrap())
        .unwrap();
    let mut chosen = vec![first];
    let mut min_dist: Vec<f64> = eligible
        .iter()
        .map(|&i| euclidean(data.row(i), data.row(first)))
        .collect();
    while chosen.len() < k {
        let (pos, _) = eligible
            .iter()
            .enumerate()
            .filter(|(_, &i)| !chosen.contains(&i))
            .max_by(|a, b| min_dist[a.0].partial_cmp(&min_dist[b.0]).unwrap())
            .unwrap();
        let next = eligible[pos];
        chosen.push(next);
        for (pos, &i) in eligible.iter().enumerate() {
            let d = euclidean(data.row(i), data.row(next));
            if d < min_dist[pos] {
                min_dist[pos] = d;
            }
        }
    }
    CenterSet::new(chosen.iter().map(|&i| data.row(i).to_vec()).collect())
}

/// K distinct observations drawn without replacement.
fn random_init(data: &DataMatrix, k: usize, rng: &mut ChaCha8Rng) -> CenterSet {
    let idx = rand::seq::index::sample(rng, data.nrows(), k);
    CenterSet::new(idx.iter().map(|i| data.row(i).to_vec()).collect()).unwrap()
}

fn start_rng(seed: u64, start: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start as u64 + 1);
    rng
}

/// Multi-start tau-scale fit: one density-aware start (when enabled) plus
/// seeded random-observation starts, returning the run with the smallest
/// objective. Deterministic given the seed, including under parallel
/// execution.
pub fn ktau_fit(data: &DataMatrix, cfg: &KTauConfig) -> Result<ClusteringResult> {
    if data.nrows() < cfg.k {
        return Err(Error::TooFewObservations {
            needed: cfg.k,
            got: data.nrows(),
        });
    }
    if cfg.k == 0 || cfg.n_starts == 0 {
        return Err(Error::InvalidParameter {
            name: "k/n_starts",
            reason: "must be positive".into(),
        });
    }
    let robin = if cfg.use_robin_first_start {
        Some(robin_init(data, cfg.k, cfg.seed)?)
    } else {
        None
    };
    let results: Vec<Result<ClusteringResult>> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|h| {
            let init = match (&robin, h) {
                (Some(r), 0) => r.clone(),
                _ => random_init(data, cfg.k, &mut start_rng(cfg.seed, h)),
            };
            ktau_iterate(data, &init, cfg)
        })
        .collect();
    let mut best: Option<ClusteringResult> = None;
    for r in results {
        let r = r?;
        // ties broken by start order for reproducibility
        if best.as_ref().is_none_or(|b| r.tau < b.tau) {
            best = Some(r);
        }
    }
    Ok(best.unwrap())
}

/// Lloyd iteration with optional trimming: assigns, marks the `trim`
/// points with largest nearest-center distance as trimmed, and recomputes
/// centers as means of the untrimmed members.
fn lloyd_iterate(
    data: &DataMatrix,
    init: &CenterSet,
    max_iter: usize,
    tol: f64,
    trim: usize,
    record_history: bool,
) -> Result<ClusteringResult> {
    let k = init.k();
    check_init(data, init, k)?;
    let n = data.nrows();
    let p = data.ncols();
    let mut centers = init.clone();
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut trimmed = vec![false; n];

    for _ in 0..max_iter {
        let (d, assign) = distances(data, &centers)?;
        trimmed = vec![false; n];
        if trim > 0 {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).unwrap().then(a.cmp(&b)));
            for &i in order.iter().take(trim) {
                trimmed[i] = true;
            }
        }
        iterations += 1;
        let mut sums = vec![vec![0.0; p]; k];
        let mut counts = vec![0usize; k];
        for (i, row) in data.rows().enumerate() {
            if trimmed[i] {
                continue;
            }
            let g = assign[i];
            counts[g] += 1;
            for (s, &x) in sums[g].iter_mut().zip(row) {
                *s += x;
            }
        }
        let mut new_centers = Vec::with_capacity(k);
        for g in 0..k {
            if counts[g] == 0 {
                // reseed at the farthest untrimmed observation
                let idx = (0..n)
                    .filter(|&i| !trimmed[i])
                    .max_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap())
                    .unwrap_or(0);
                new_centers.push(data.row(idx).to_vec());
            } else {
                new_centers.push(sums[g].iter().map(|s| s / counts[g] as f64).collect());
            }
        }
        let new_centers = CenterSet::new(new_centers)?;
        if record_history {
            history.push(new_centers.clone());
        }
        let stop = converged_step(&centers, &new_centers, tol);
        centers = new_centers;
        if stop {
            converged = true;
            break;
        }
    }

    let (d, assignment) = distances(data, &centers)?;
    let kept: Vec<f64> = d
        .iter()
        .zip(&trimmed)
        .filter(|(_, &t)| !t)
        .map(|(&x, _)| x)
        .collect();
    let tau = l2_scale(if trim > 0 { &kept } else { &d });
    Ok(ClusteringResult {
        assignment,
        outlier_flag: trimmed,
        distances: d,
        tau,
        centers,
        iterations,
        converged,
        history,
    })
}

fn lloyd_multistart(
    data: &DataMatrix,
    k: usize,
    n_starts: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
    trim: usize,
) -> Result<ClusteringResult> {
    if data.nrows() < k {
        return Err(Error::TooFewObservations {
            needed: k,
            got: data.nrows(),
        });
    }
    let results: Vec<Result<ClusteringResult>> = (0..n_starts.max(1))
        .into_par_iter()
        .map(|h| {
            let init = random_init(data, k, &mut start_rng(seed, h));
            lloyd_iterate(data, &init, max_iter, tol, trim, false)
        })
        .collect();
    let mut best: Option<ClusteringResult> = None;
    for r in results {
        let r = r?;
        if best.as_ref().is_none_or(|b| r.tau < b.tau) {
            best = Some(r);
        }
    }
    Ok(best.unwrap())
}

/// Classic K-means (Lloyd). The `tau` field holds the L2 scale of the
/// nearest-center distances.
pub fn kmeans_fit(
    data: &DataMatrix,
    k: usize,
    n_starts: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<ClusteringResult> {
    lloyd_multistart(data, k, n_starts, max_iter, tol, seed, 0)
}

/// One K-means run from a fixed initialization (exposed for the Lloyd
/// equivalence checks).
pub fn kmeans_iterate(
    data: &DataMatrix,
    init: &CenterSet,
    max_iter: usize,
    tol: f64,
    record_history: bool,
) -> Result<ClusteringResult> {
    lloyd_iterate(data, init, max_iter, tol, 0, record_history)
}

/// Trimmed K-means: each iteration discards the `ceil(alpha n)` points
/// farthest from the current centers before recomputing the means.
/// Trimmed points carry `outlier_flag = true` and keep their
/// nearest-center assignment. The objective excludes trimmed points.
pub fn tkmeans_fit(
    data: &DataMatrix,
    k: usize,
    alpha: f64,
    n_starts: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<ClusteringResult> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("{alpha} outside [0,1)"),
        });
    }
    let n = data.nrows();
    let trim = (alpha * n as f64).ceil() as usize;
    if trim + k >= n {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("trimming {trim} of {n} leaves fewer than K={k} points"),
        });
    }
    lloyd_multistart(data, k, n_starts, max_iter, tol, seed, trim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn two_blob_data(seed: u64, n_per: usize, sep: f64) -> (DataMatrix, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = vec![vec![-sep, 0.0], vec![sep, 0.0]];
        let mut rows = Vec::new();
        for m in &means {
            for _ in 0..n_per {
                rows.push(vec![
                    m[0] + rng.sample::<f64, _>(StandardNormal),
                    m[1] + rng.sample::<f64, _>(StandardNormal),
                ]);
            }
        }
        (DataMatrix::from_rows(&rows).unwrap(), means)
    }

    #[test]
    fn distances_basic() {
        let data = DataMatrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let centers = CenterSet::new(vec![vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let (d, a) = distances(&data, &centers).unwrap();
        assert_eq!(d, vec![1.0]);
        assert_eq!(a, vec![0]);
        // point on a center
        let data = DataMatrix::from_rows(&[vec![0.0, 2.0]]).unwrap();
        let (d, a) = distances(&data, &centers).unwrap();
        assert_eq!(d, vec![0.0]);
        assert_eq!(a, vec![1]);
    }

    #[test]
    fn distances_match_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..3).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let cs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let data = DataMatrix::from_rows(&rows).unwrap();
        let centers = CenterSet::new(cs.clone()).unwrap();
        let (d, a) = distances(&data, &centers).unwrap();
        for i in 0..10 {
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for (k, c) in cs.iter().enumerate() {
                let dist: f64 = rows[i]
                    .iter()
                    .zip(c)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if dist < best {
                    best = dist;
                    arg = k;
                }
            }
            assert_eq!(d[i], best);
            assert_eq!(a[i], arg);
        }
    }

    #[test]
    fn objective_zero_on_centers() {
        let centers = CenterSet::new(vec![vec![1.0, 1.0], vec![-1.0, 2.0]]).unwrap();
        let data = DataMatrix::from_rows(&[
            vec![1.0, 1.0],
            vec![-1.0, 2.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let rho = RhoConfig::for_dimension(RhoFamily::SmoothHardRejection, 2).unwrap();
        assert_eq!(ktau_objective(&data, &centers, &rho).unwrap(), 0.0);
    }

    #[test]
    fn objective_quadratic_is_rms_distance() {
        let (data, _) = two_blob_data(1, 30, 4.0);
        let centers = CenterSet::new(vec![vec![-4.0, 0.0], vec![4.0, 0.0]]).unwrap();
        let rho = RhoConfig::lloyd().unwrap();
        let (d, _) = distances(&data, &centers).unwrap();
        let rms = (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt();
        assert!((ktau_objective(&data, &centers, &rho).unwrap() - rms).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_returns_immediately() {
        // two symmetric point masses with centers at the masses
        let data = DataMatrix::from_rows(&[
            vec![-1.0, 0.0],
            vec![-1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
        ])
        .unwrap();
        let init = CenterSet::new(vec![vec![-1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let rho = RhoConfig::for_dimension(RhoFamily::SmoothHardRejection, 2).unwrap();
        let cfg = KTauConfig::new(2, rho, 1);
        let res = ktau_iterate(&data, &init, &cfg).unwrap();
        assert!(res.converged);
        assert_eq!(res.tau, 0.0);
        assert_eq!(res.centers, init);
    }

    #[test]
    fn quadratic_mode_matches_kmeans_trajectory() {
        let (data, _) = two_blob_data(42, 50, 3.0);
        let init = CenterSet::new(vec![data.row(3).to_vec(), data.row(70).to_vec()]).unwrap();
        let mut cfg = KTauConfig::new(2, RhoConfig::lloyd().unwrap(), 0);
        cfg.record_history = true;
        cfg.max_iter = 60;
        cfg.tol = 1e-9;
        let kt = ktau_iterate(&data, &init, &cfg).unwrap();
        let km = kmeans_iterate(&data, &init, 60, 1e-9, true).unwrap();
        assert_eq!(kt.history.len(), km.history.len());
        for (a, b) in kt.history.iter().zip(&km.history) {
            for (ca, cb) in a.iter().zip(b.iter()) {
                for (x, y) in ca.iter().zip(cb) {
                    assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn ktau_resists_planted_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (data, means) = {
            let mut rows = Vec::new();
            for m in [[-5.0, 0.0], [5.0, 0.0]] {
                for _ in 0..180 {
                    rows.push(vec![
                        m[0] + rng.sample::<f64, _>(StandardNormal),
                        m[1] + rng.sample::<f64, _>(StandardNormal),
                    ]);
                }
            }
            // 10% outliers at distance ~50
            for _ in 0..40 {
                rows.push(vec![
                    50.0 + rng.gen::<f64>(),
                    50.0 + rng.gen::<f64>(),
                ]);
            }
            (
                DataMatrix::from_rows(&rows).unwrap(),
                vec![vec![-5.0, 0.0], vec![5.0, 0.0]],
            )
        };
        let rho = RhoConfig::for_dimension(RhoFamily::SmoothHardRejection, 2).unwrap();
        let cfg = KTauConfig::new(2, rho, 12);
        let res = ktau_fit(&data, &cfg).unwrap();
        // each center within 0.5 of a distinct true mean
        let mut errs: Vec<f64> = means
            .iter()
            .map(|m| {
                res.centers
                    .iter()
                    .map(|c| euclidean(c, m))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(errs[1] < 0.5, "center errors {errs:?}");
    }

    #[test]
    fn robin_returns_all_points_when_k_equals_n() {
        let data = DataMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ])
        .unwrap();
        let cs = robin_init(&data, 3, 0).unwrap();
        assert_eq!(cs.k(), 3);
        assert!(robin_init(&data, 4, 0).is_err());
    }

    #[test]
    fn robin_picks_one_seed_per_blob_and_avoids_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let blobs = [[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]];
        let mut rows = Vec::new();
        for m in &blobs {
            for _ in 0..40 {
                rows.push(vec![
                    m[0] + 0.5 * rng.sample::<f64, _>(StandardNormal),
                    m[1] + 0.5 * rng.sample::<f64, _>(StandardNormal),
                ]);
            }
        }
        // 5 isolated far outliers
        for i in 0..5 {
            rows.push(vec![200.0 + 30.0 * i as f64, -150.0]);
        }
        let data = DataMatrix::from_rows(&rows).unwrap();
        let cs = robin_init(&data, 3, 0).unwrap();
        let mut hit = [false; 3];
        for c in cs.iter() {
            let (arg, dist) = blobs
                .iter()
                .enumerate()
                .map(|(i, m)| (i, euclidean(c, &[m[0], m[1]])))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            assert!(dist < 3.0, "seed {c:?} is not inside a blob");
            hit[arg] = true;
        }
        assert!(hit.iter().all(|&h| h));
    }

    #[test]
    fn ktau_fit_single_start_equals_iterate() {
        let (data, _) = two_blob_data(7, 40, 4.0);
        let rho = RhoConfig::for_dimension(RhoFamily::SmoothHardRejection, 2).unwrap();
        let mut cfg = KTauConfig::new(2, rho, 33);
        cfg.n_starts = 1;
        cfg.use_robin_first_start = false;
        let fit = ktau_fit(&data, &cfg).unwrap();
        let init = random_init(&data, 2, &mut start_rng(33, 0));
        let single = ktau_iterate(&data, &init, &cfg).unwrap();
        assert_eq!(fit.centers, single.centers);
        assert_eq!(fit.tau, single.tau);
    }

    #[test]
    fn ktau_fit_selects_minimum_objective() {
        let (data, _) = two_blob_data(2, 40, 4.0);
        let rho = RhoConfig::for_dimension(RhoFamily::SmoothHardRejection, 2).unwrap();
        let mut cfg = KTauConfig::new(2, rho, 5);
        cfg.n_starts = 8;
        let best = ktau_fit(&data, &cfg).unwrap();
        // objective of the winner is <= objective at each start's init
        let robin = robin_init(&data, 2, cfg.seed).unwrap();
        for h in 0..cfg.n_starts {
            let init = if h == 0 {
                robin.clone()
            } else {
                random_init(&data, 2, &mut start_rng(cfg.seed, h))
            };
            let obj0 = ktau_objective(&data, &init, &rho).unwrap();
            assert!(best.tau <= obj0 + 1e-12);
        }
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let (data, _) = two_blob_data(3, 25, 0.0);
        let res = kmeans_fit(&data, 1, 3, 100, 1e-9, 0).unwrap();
        let n = data.nrows() as f64;
        let mut mean = vec![0.0; 2];
        for r in data.rows() {
            mean[0] += r[0] / n;
            mean[1] += r[1] / n;
        }
        assert!(euclidean(res.centers.center(0), &mean) < 1e-9);
    }

    #[test]
    fn kmeans_objective_monotone() {
        let (data, _) = two_blob_data(8, 40, 2.0);
        let init = CenterSet::new(vec![data.row(0).to_vec(), data.row(1).to_vec()]).unwrap();
        let res = kmeans_iterate(&data, &init, 100, 1e-12, true).unwrap();
        let mut prev = f64::INFINITY;
        for cs in &res.history {
            let (d, _) = distances(&data, cs).unwrap();
            let obj: f64 = d.iter().map(|x| x * x).sum();
            assert!(obj <= prev + 1e-9);
            prev = obj;
        }
    }

    #[test]
    fn kmeans_matches_brute_force_on_two_triads() {
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.5, 0.1],
            vec![0.1, 0.4],
            vec![10.0, 10.0],
            vec![10.4, 10.1],
            vec![10.1, 10.5],
        ];
        let data = DataMatrix::from_rows(&rows).unwrap();
        let res = kmeans_fit(&data, 2, 10, 100, 1e-10, 4).unwrap();
        // brute force over all 2-partitions
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << 6) - 1 {
            let (mut s0, mut s1) = (vec![0.0; 2], vec![0.0; 2]);
            let (mut c0, mut c1) = (0.0, 0.0);
            for (i, r) in rows.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    s0[0] += r[0];
                    s0[1] += r[1];
                    c0 += 1.0;
                } else {
                    s1[0] += r[0];
                    s1[1] += r[1];
                    c1 += 1.0;
                }
            }
            let m0 = [s0[0] / c0, s0[1] / c0];
            let m1 = [s1[0] / c1, s1[1] / c1];
            let obj: f64 = rows
                .iter()
                .map(|r| {
                    let d0 = (r[0] - m0[0]).powi(2) + (r[1] - m0[1]).powi(2);
                    let d1 = (r[0] - m1[0]).powi(2) + (r[1] - m1[1]).powi(2);
                    d0.min(d1)
                })
                .sum();
            best = best.min(obj);
        }
        let got: f64 = res.distances.iter().map(|x| x * x).sum();
        assert!((got - best).abs() < 1e-9, "{got} vs {best}");
    }

    #[test]
    fn tkmeans_zero_alpha_matches_kmeans() {
        let (data, _) = two_blob_data(6, 30, 3.0);
        let km = kmeans_fit(&data, 2, 5, 100, 1e-9, 10).unwrap();
        let tk = tkmeans_fit(&data, 2, 0.0, 5, 100, 1e-9, 10).unwrap();
        assert_eq!(km.centers, tk.centers);
        assert_eq!(km.assignment, tk.assignment);
    }

    #[test]
    fn tkmeans_trims_planted_outliers() {
        let (data, _) = two_blob_data(14, 45, 4.0);
        let mut rows: Vec<Vec<f64>> = data.rows().map(|r| r.to_vec()).collect();
        let n_out = ((rows.len() + 10) as f64 * 0.1).ceil() as usize;
        for i in 0..10 {
            rows.push(vec![100.0 + i as f64, 100.0]);
        }
        // alpha chosen so the trim count equals the planted-outlier count
        let n = rows.len();
        let alpha = 10.0 / n as f64;
        assert_eq!((alpha * n as f64).ceil() as usize, 10);
        let _ = n_out;
        let data = DataMatrix::from_rows(&rows).unwrap();
        let res = tkmeans_fit(&data, 2, alpha, 10, 100, 1e-9, 3).unwrap();
        let flagged: Vec<usize> = res
            .outlier_flag
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(flagged.len(), 10);
        assert!(flagged.iter().all(|&i| i >= n - 10), "trimmed {flagged:?}");
    }

    #[test]
    fn tkmeans_rejects_infeasible_alpha() {
        let (data, _) = two_blob_data(0, 5, 3.0);
        assert!(tkmeans_fit(&data, 2, 0.95, 2, 10, 1e-6, 0).is_err());
    }

    #[test]
    fn equivariance_translation_and_scale() {
        let (data, _) = two_blob_data(25, 60, 4.0);
        let rho = RhoConfig::for_dimension(RhoFamily::SmoothHardRejection, 2).unwrap();
        let mut cfg = KTauConfig::new(2, rho, 77);
        cfg.n_starts = 5;
        // converge tightly so the compared fits reach the same fixed point
        cfg.tol = 1e-13;
        cfg.max_iter = 500;
        let base = ktau_fit(&data, &cfg).unwrap();

        let v = [3.0, -7.0];
        let shifted = DataMatrix::from_rows(
            &data
                .rows()
                .map(|r| vec![r[0] + v[0], r[1] + v[1]])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let res_t = ktau_fit(&shifted, &cfg).unwrap();
        // centers may come back in a different cluster order
        for c0 in base.centers.iter() {
            let want = [c0[0] + v[0], c0[1] + v[1]];
            let best = res_t
                .centers
                .iter()
                .map(|c| euclidean(c, &want))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9, "no match for {want:?} in {:?}", res_t.centers);
        }

        let lam = 2.5;
        let scaled = DataMatrix::from_rows(
            &data
                .rows()
                .map(|r| vec![lam * r[0], lam * r[1]])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let res_s = ktau_fit(&scaled, &cfg).unwrap();
        for c0 in base.centers.iter() {
            let want = [lam * c0[0], lam * c0[1]];
            let best = res_s
                .centers
                .iter()
                .map(|c| euclidean(c, &want))
                .fold(f64::INFINITY, f64::min);
            assert!(
                best <= 1e-9 * (1.0 + want[0].abs() + want[1].abs()),
                "no match for {want:?} in {:?}",
                res_s.centers
            );
        }
    }
}

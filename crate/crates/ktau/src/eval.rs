//! Evaluation machinery: the classification error rate (one minus the
//! Rand index), synthetic cluster + box-contamination generators, and the
//! simulation harness comparing the clustering procedures.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans_iterate, ktau_fit, tkmeans_fit, CenterSet, KTauConfig};
use crate::error::{Error, Result};
use crate::matrix::{cholesky, jacobi_eigen, DataMatrix};
use crate::robust::{
    flag_outliers, flag_result_outliers, improved_ktau, mahalanobis_sq, OutlierPolicy,
    RobustEllipsoid,
};
use crate::scales::{RhoConfig, RhoFamily};
use crate::special::chi2_quantile;

const REJECTION_LIMIT: usize = 100_000;

/// One cell of the simulation design.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimScenario {
    pub k: usize,
    pub p: usize,
    /// Contamination fraction added on top of the clean sample.
    pub contamination: f64,
    pub replications: usize,
    pub seed: u64,
}

impl SimScenario {
    pub fn new(k: usize, p: usize, contamination: f64, replications: usize, seed: u64) -> Result<Self> {
        if !(0.0..0.5).contains(&contamination) {
            return Err(Error::InvalidParameter {
                name: "contamination",
                reason: format!("{contamination} outside [0, 0.5)"),
            });
        }
        if k == 0 || p == 0 || replications == 0 {
            return Err(Error::InvalidParameter {
                name: "scenario",
                reason: "k, p, replications must be positive".into(),
            });
        }
        Ok(Self {
            k,
            p,
            contamination,
            replications,
            seed,
        })
    }
}

/// Generated data with ground truth. Outliers carry the extra label K.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub data: DataMatrix,
    pub true_label: Vec<usize>,
    pub true_centers: CenterSet,
    pub true_scatters: Vec<Vec<f64>>,
}

fn sample_gaussian(
    rng: &mut ChaCha8Rng,
    n: usize,
    mu: &[f64],
    chol: &[f64],
    p: usize,
) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            (0..p)
                .map(|i| {
                    mu[i] + (0..=i).map(|j| chol[i * p + j] * z[j]).sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// Random covariance P D P^t with P the eigenbasis of U U^t for U with
/// uniform(-1,1) entries and D_ii uniform(1,10).
fn random_covariance(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    let u: Vec<f64> = (0..p * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut uut = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            for k in 0..p {
                uut[i * p + j] += u[i * p + k] * u[j * p + k];
            }
        }
    }
    let (_, pmat) = jacobi_eigen(&uut, p);
    let d: Vec<f64> = (0..p).map(|_| rng.gen_range(1.0..10.0)).collect();
    // Sigma = P D P^t, eigenvectors in columns of pmat
    let mut sigma = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            for k in 0..p {
                sigma[i * p + j] += pmat[i * p + k] * d[k] * pmat[j * p + k];
            }
        }
    }
    // symmetrize against round-off
    for i in 0..p {
        for j in 0..i {
            let m = 0.5 * (sigma[i * p + j] + sigma[j * p + i]);
            sigma[i * p + j] = m;
            sigma[j * p + i] = m;
        }
    }
    sigma
}

fn bounding_box(rows: &[Vec<f64>], p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; p];
    let mut hi = vec![f64::NEG_INFINITY; p];
    for r in rows {
        for j in 0..p {
            lo[j] = lo[j].min(r[j]);
            hi[j] = hi[j].max(r[j]);
        }
    }
    (lo, hi)
}

/// Uniform draws in the clean data's bounding box expanded by a factor of
/// two about its center, rejection-sampled to lie outside every cluster's
/// 99% ellipsoid.
fn sample_box_outliers(
    rng: &mut ChaCha8Rng,
    n_out: usize,
    clean: &[Vec<f64>],
    ellipsoids: &[RobustEllipsoid],
    p: usize,
) -> Result<Vec<Vec<f64>>> {
    let (lo, hi) = bounding_box(clean, p);
    let mut blo = vec![0.0; p];
    let mut bhi = vec![0.0; p];
    for j in 0..p {
        let c = 0.5 * (lo[j] + hi[j]);
        let h = 0.5 * (hi[j] - lo[j]);
        blo[j] = c - 2.0 * h;
        bhi[j] = c + 2.0 * h;
    }
    let mut out = Vec::with_capacity(n_out);
    let mut consecutive_rejects = 0;
    while out.len() < n_out {
        let x: Vec<f64> = (0..p).map(|j| rng.gen_range(blo[j]..bhi[j])).collect();
        let inside_some = ellipsoids
            .iter()
            .any(|e| mahalanobis_sq(&x, e).map(|d2| d2 <= e.cutoff).unwrap_or(false));
        if inside_some {
            consecutive_rejects += 1;
            if consecutive_rejects >= REJECTION_LIMIT {
                return Err(Error::RejectionSamplingFailed(REJECTION_LIMIT));
            }
        } else {
            consecutive_rejects = 0;
            out.push(x);
        }
    }
    Ok(out)
}

fn assemble(
    clean: Vec<Vec<f64>>,
    labels: Vec<usize>,
    outliers: Vec<Vec<f64>>,
    k: usize,
    centers: Vec<Vec<f64>>,
    scatters: Vec<Vec<f64>>,
) -> Result<LabeledDataset> {
    let mut rows = clean;
    let mut true_label = labels;
    for x in outliers {
        rows.push(x);
        true_label.push(k);
    }
    Ok(LabeledDataset {
        data: DataMatrix::from_rows(&rows)?,
        true_label,
        true_centers: CenterSet::new(centers)?,
        true_scatters: scatters,
    })
}

/// One replication of the simulation design: K Gaussian clusters with
/// means on the diagonal `20(-K/2 + k) 1` (odd K uses `-(K-1)/2`),
/// random rotated covariances with eigenvalues in (1,10), per-cluster
/// size `theta min(p,4)` with theta 25 or 50 equiprobably, plus
/// box-uniform contamination outside the 99% ellipsoids.
pub fn generate_scenario(sc: &SimScenario, rep_index: usize) -> Result<LabeledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    rng.set_stream(0x5157_0000 + rep_index as u64);
    let p = sc.p;
    let cutoff = chi2_quantile(p, 0.99)?;

    let mut clean = Vec::new();
    let mut labels = Vec::new();
    let mut centers = Vec::new();
    let mut scatters = Vec::new();
    let mut ellipsoids = Vec::new();
    for k in 1..=sc.k {
        let theta = if rng.gen::<bool>() { 25 } else { 50 };
        let n_k = theta * p.min(4);
        let shift = if sc.k.is_multiple_of(2) {
            20.0 * (-(sc.k as f64) / 2.0 + k as f64)
        } else {
            20.0 * (-((sc.k - 1) as f64) / 2.0 + k as f64)
        };
        let mu = vec![shift; p];
        let sigma = random_covariance(&mut rng, p);
        let l = cholesky(&sigma, p).ok_or(Error::NotPositiveDefinite)?;
        let pts = sample_gaussian(&mut rng, n_k, &mu, &l, p);
        labels.extend(std::iter::repeat_n(k - 1, n_k));
        clean.extend(pts);
        ellipsoids.push(RobustEllipsoid::new(mu.clone(), sigma.clone(), cutoff)?);
        centers.push(mu);
        scatters.push(sigma);
    }
    let n_out = (sc.contamination * clean.len() as f64).ceil() as usize;
    let outliers = sample_box_outliers(&mut rng, n_out, &clean, &ellipsoids, p)?;
    assemble(clean, labels, outliers, sc.k, centers, scatters)
}

/// The M5-style mixture: 1800 points from three bivariate normals with
/// means (0,8), (8,0), (-8,8) in proportions 20/40/40%, plus 200
/// box-uniform outliers outside all three 99% ellipsoids.
pub fn generate_m5(seed: u64) -> Result<LabeledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x4d35);
    let means = [vec![0.0, 8.0], vec![8.0, 0.0], vec![-8.0, 8.0]];
    let sigmas = [
        vec![1.0, 0.0, 0.0, 1.0],
        vec![45.0, 0.0, 0.0, 30.0],
        vec![15.0, -10.0, -10.0, 15.0],
    ];
    let sizes = [360usize, 720, 720];
    let cutoff = chi2_quantile(2, 0.99)?;
    let mut clean = Vec::new();
    let mut labels = Vec::new();
    let mut ellipsoids = Vec::new();
    for ((mu, sigma), (&n_k, lab)) in means
        .iter()
        .zip(&sigmas)
        .zip(sizes.iter().zip(0usize..))
    {
        let l = cholesky(sigma, 2).ok_or(Error::NotPositiveDefinite)?;
        clean.extend(sample_gaussian(&mut rng, n_k, mu, &l, 2));
        labels.extend(std::iter::repeat_n(lab, n_k));
        ellipsoids.push(RobustEllipsoid::new(mu.clone(), sigma.clone(), cutoff)?);
    }
    let outliers = sample_box_outliers(&mut rng, 200, &clean, &ellipsoids, 2)?;
    assemble(
        clean,
        labels,
        outliers,
        3,
        means.to_vec(),
        sigmas.to_vec(),
    )
}

fn choose2(n: usize) -> f64 {
    n as f64 * (n as f64 - 1.0) / 2.0
}

/// Classification error rate: one minus the Rand index of the two
/// partitions. Label names are irrelevant (pair semantics only).
pub fn cer(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::DimensionMismatch {
            expected: labels_a.len(),
            got: labels_b.len(),
        });
    }
    let n = labels_a.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    // contingency-table Rand index
    let ka = labels_a.iter().max().unwrap() + 1;
    let kb = labels_b.iter().max().unwrap() + 1;
    let mut table = vec![0usize; ka * kb];
    let mut row = vec![0usize; ka];
    let mut col = vec![0usize; kb];
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        table[a * kb + b] += 1;
        row[a] += 1;
        col[b] += 1;
    }
    let same_both: f64 = table.iter().map(|&c| choose2(c)).sum();
    let same_a: f64 = row.iter().map(|&c| choose2(c)).sum();
    let same_b: f64 = col.iter().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    let agreements = total + 2.0 * same_both - same_a - same_b;
    Ok(1.0 - agreements / total)
}

/// Which procedure a simulation run exercises.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method", content = "alpha")]
pub enum Method {
    KMeans,
    TKMeans(f64),
    KTau,
    IKTau,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::KMeans => "kmeans",
            Method::TKMeans(_) => "tkmeans",
            Method::KTau => "ktau",
            Method::IKTau => "iktau",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            Method::TKMeans(a) => Some(*a),
            _ => None,
        }
    }
}

/// One aggregated row of the simulation output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimRow {
    pub k: usize,
    pub p: usize,
    pub method: String,
    pub alpha: Option<f64>,
    pub mean_cer: f64,
    pub reps: usize,
    pub seed: u64,
}

/// Classical-moment ellipsoid (mean and sample covariance) with a
/// chi-square cutoff; ridged if the covariance is not factorizable.
fn classical_ellipsoid(
    data: &DataMatrix,
    members: &[usize],
    policy: &OutlierPolicy,
) -> Result<RobustEllipsoid> {
    let p = data.ncols();
    let cutoff = chi2_quantile(p, 1.0 - policy.beta)?;
    let pts = data.select_rows(members);
    let n = pts.nrows().max(1);
    let mut mu = vec![0.0; p];
    for r in pts.rows() {
        for j in 0..p {
            mu[j] += r[j] / n as f64;
        }
    }
    let mut sigma = vec![0.0; p * p];
    if n > 1 {
        for r in pts.rows() {
            for i in 0..p {
                for j in 0..=i {
                    sigma[i * p + j] += (r[i] - mu[i]) * (r[j] - mu[j]) / (n as f64 - 1.0);
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                sigma[j * p + i] = sigma[i * p + j];
            }
        }
    }
    // ridge until factorizable
    let trace: f64 = (0..p).map(|i| sigma[i * p + i]).sum();
    let mut lambda = 1e-8 * (trace / p as f64).max(1e-12);
    for _ in 0..60 {
        if let Ok(e) = RobustEllipsoid::new(mu.clone(), sigma.clone(), cutoff) {
            return Ok(e);
        }
        for i in 0..p {
            sigma[i * p + i] += lambda;
        }
        lambda *= 10.0;
    }
    Err(Error::NotPositiveDefinite)
}

fn classical_flags(
    data: &DataMatrix,
    assignment: &[usize],
    exclude: Option<&[bool]>,
    k: usize,
    policy: &OutlierPolicy,
) -> Result<Vec<bool>> {
    let mut members = vec![Vec::new(); k];
    for (i, &a) in assignment.iter().enumerate() {
        if exclude.is_some_and(|f| f[i]) {
            continue;
        }
        members[a].push(i);
    }
    let ellipsoids: Vec<RobustEllipsoid> = members
        .iter()
        .filter(|m| !m.is_empty())
        .map(|m| classical_ellipsoid(data, m, policy))
        .collect::<Result<_>>()?;
    flag_outliers(data, &ellipsoids)
}

/// Farthest-point (maximin) seeding: a random first center, then greedy
/// selection of the observation farthest from the chosen set. The
/// benchmark's K-means baseline runs one Lloyd pass from this seeding,
/// the classic initialization whose outlier sensitivity the study
/// documents; a tuned multi-start K-means would mask that behavior.
fn maximin_init(data: &DataMatrix, k: usize, seed: u64) -> Result<CenterSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x6d78);
    let n = data.nrows();
    let sq = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
    };
    let mut centers: Vec<Vec<f64>> = vec![data.row(rng.gen_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = data.rows().map(|r| sq(r, &centers[0])).collect();
    while centers.len() < k {
        let idx = (0..n)
            .max_by(|&a, &b| d2[a].partial_cmp(&d2[b]).unwrap())
            .unwrap();
        centers.push(data.row(idx).to_vec());
        for (i, r) in data.rows().enumerate() {
            d2[i] = d2[i].min(sq(r, centers.last().unwrap()));
        }
    }
    CenterSet::new(centers)
}

/// Fits one method on a labeled dataset and returns predicted labels with
/// flagged observations collected in the extra class `K`.
pub fn predict_labels(
    ds: &LabeledDataset,
    method: Method,
    k: usize,
    seed: u64,
    policy: &OutlierPolicy,
) -> Result<Vec<usize>> {
    let p = ds.data.ncols();
    let (assignment, flags, k_fit) = match method {
        Method::KMeans => {
            let init = maximin_init(&ds.data, k, seed)?;
            let r = kmeans_iterate(&ds.data, &init, 100, 1e-6, false)?;
            let flags = classical_flags(&ds.data, &r.assignment, None, k, policy)?;
            (r.assignment, flags, k)
        }
        Method::TKMeans(alpha) => {
            let r = tkmeans_fit(&ds.data, k, alpha, 20, 100, 1e-6, seed)?;
            let flags =
                classical_flags(&ds.data, &r.assignment, Some(&r.outlier_flag), k, policy)?;
            (r.assignment, flags, k)
        }
        Method::KTau => {
            let rho = RhoConfig::for_dimension(RhoFamily::SmoothHardRejection, p)?;
            let cfg = KTauConfig::new(k, rho, seed);
            let r = ktau_fit(&ds.data, &cfg)?;
            let flags = flag_result_outliers(&ds.data, &r, &rho, policy)?;
            (r.assignment, flags, k)
        }
        Method::IKTau => {
            let rho = RhoConfig::for_dimension(RhoFamily::SmoothHardRejection, p)?;
            let cfg = KTauConfig::new(k, rho, seed);
            let base = ktau_fit(&ds.data, &cfg)?;
            let imp = improved_ktau(&ds.data, &base, &rho, policy)?;
            let kk = imp.centers.k();
            (imp.assignment.clone(), imp.outlier_flag.clone(), kk)
        }
    };
    Ok(assignment
        .iter()
        .zip(&flags)
        .map(|(&a, &f)| if f { k_fit } else { a })
        .collect())
}

/// Runs every method over the scenario's replications and aggregates the
/// mean CER (scored against the true labels, flagged points in the extra
/// class).
pub fn run_simulation(sc: &SimScenario, methods: &[Method]) -> Result<Vec<SimRow>> {
    let policy = OutlierPolicy::default();
    let mut sums = vec![0.0; methods.len()];
    for rep in 0..sc.replications {
        let ds = generate_scenario(sc, rep)?;
        for (mi, &m) in methods.iter().enumerate() {
            let pred = predict_labels(&ds, m, sc.k, sc.seed.wrapping_add(rep as u64), &policy)?;
            sums[mi] += cer(&ds.true_label, &pred)?;
        }
    }
    Ok(methods
        .iter()
        .zip(&sums)
        .map(|(m, &s)| SimRow {
            k: sc.k,
            p: sc.p,
            method: m.name().to_string(),
            alpha: m.alpha(),
            mean_cer: s / sc.replications as f64,
            reps: sc.replications,
            seed: sc.seed,
        })
        .collect())
}

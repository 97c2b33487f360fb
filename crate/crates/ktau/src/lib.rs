//! Robust cluster-center estimation by minimizing a tau-scale of
//! point-to-center distances, with K-means and trimmed K-means baselines,
//! per-cluster robust location/scatter and Mahalanobis reassignment,
//! outlier flagging, a simulation harness, and image-segmentation
//! pipelines.

pub mod cluster;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod matrix;
pub mod pnm;
pub mod robust;
pub mod scales;
pub mod special;

pub use cluster::{
    distances, kmeans_fit, kmeans_iterate, ktau_fit, ktau_iterate, ktau_objective, robin_init,
    tkmeans_fit, CenterSet, ClusteringResult, KTauConfig,
};
pub use error::{Error, Result};
pub use eval::{
    cer, generate_m5, generate_scenario, predict_labels, run_simulation, LabeledDataset, Method,
    SimRow, SimScenario,
};
pub use imaging::{
    extreme_outlier, geographic_search, pack_gray_cells, pack_rgb_cells, si_transform, CellGrid,
};
pub use matrix::DataMatrix;
pub use robust::{
    chi2_quantile, flag_outliers, flag_result_outliers, improved_ktau, mahalanobis_sq,
    robust_location_scatter, robust_location_scatter_with_cutoff, OutlierPolicy, RobustEllipsoid,
};
pub use scales::{m_scale, psi, rho, tau_scale, tau_weights, RhoConfig, RhoFamily, TauWeights};

//! Command-line interface: clustering on CSV tables, the simulation
//! harness, image segmentation, and lost-object searches.
//!
//! Exit codes: 0 success, 2 input error, 3 configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ktau::eval::{run_simulation, Method, SimScenario};
use ktau::imaging::{extreme_outlier, geographic_search, pack_gray_cells, pack_rgb_cells, CellGrid};
use ktau::robust::{flag_result_outliers, improved_ktau, OutlierPolicy};
use ktau::scales::{RhoConfig, RhoFamily};
use ktau::{
    kmeans_fit, ktau_fit, tkmeans_fit, ClusteringResult, DataMatrix, Error, KTauConfig,
};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "ktau", about = "Robust tau-scale clustering", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a numeric CSV table and write a JSON result.
    Cluster(ClusterArgs),
    /// Run the synthetic contamination benchmark and write a CSV table.
    Simulate(SimulateArgs),
    /// Segment a PNM raster into cell clusters and write a color map.
    Segment(SegmentArgs),
    /// Search a segmented raster for anomalous cells.
    Search(SearchArgs),
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MethodArg {
    Ktau,
    Iktau,
    Kmeans,
    Tkmeans,
}

#[derive(Args)]
struct FitArgs {
    /// Number of clusters.
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "iktau")]
    method: MethodArg,
    /// Trimming fraction (required for tkmeans).
    #[arg(long)]
    alpha: Option<f64>,
    /// Outlier-flagging tail probability.
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    /// Number of random starts.
    #[arg(long, default_value_t = 20)]
    starts: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ClusterArgs {
    /// Input CSV (optional non-numeric header row).
    #[arg(long)]
    input: PathBuf,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    fit: FitArgs,
    /// Suppress the timestamp field for byte-reproducible output.
    #[arg(long)]
    no_timestamp: bool,
    /// Also write per-cluster center profiles as CSV.
    #[arg(long)]
    emit_plot_data: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Cluster counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "3")]
    k: Vec<usize>,
    /// Dimensions, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "3")]
    p: Vec<usize>,
    /// Methods to compare.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "kmeans,tkmeans,iktau")]
    method: Vec<MethodArg>,
    /// Contamination fraction; doubles as the tkmeans trimming level.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Input PNM raster (P2/P3/P5/P6).
    #[arg(long)]
    input: PathBuf,
    /// Output P6 segmentation map (one pixel per cell).
    #[arg(long)]
    output: PathBuf,
    /// Cell side length in pixels.
    #[arg(long)]
    cell_size: usize,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    no_timestamp: bool,
    /// Also write per-cluster center profiles as CSV.
    #[arg(long)]
    emit_plot_data: bool,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SearchMode {
    Extreme,
    Geographic,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output JSON path (stdout only when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    cell_size: usize,
    #[arg(long, value_enum)]
    mode: SearchMode,
    /// Cluster to search within (geographic mode).
    #[arg(long)]
    target_cluster: Option<usize>,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    no_timestamp: bool,
}

enum CliError {
    Input(String),
    Config(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Config(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Config(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Raster(_) | Error::CsvParse { .. } => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("KTAU_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Cluster(a) => cmd_cluster(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Segment(a) => cmd_segment(&a),
        Command::Search(a) => cmd_search(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// Comma-separated numeric CSV; a non-numeric first row is treated as a
/// header and skipped.
fn read_csv(path: &Path) -> Result<DataMatrix, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (ri, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        let mut bad: Option<(usize, String)> = None;
        for (ci, field) in line.split(',').enumerate() {
            let field = field.trim();
            if field.is_empty() {
                bad = Some((ci, "missing value".into()));
                break;
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                Ok(_) => {
                    bad = Some((ci, "non-finite value".into()));
                    break;
                }
                Err(_) => {
                    bad = Some((ci, format!("not a number: {field:?}")));
                    break;
                }
            }
        }
        if let Some((ci, reason)) = bad {
            if ri == 0 && rows.is_empty() {
                continue; // header row
            }
            return Err(Error::CsvParse {
                row: ri + 1,
                col: ci + 1,
                reason,
            }
            .into());
        }
        if let Some(w) = width {
            if row.len() != w {
                return Err(Error::CsvParse {
                    row: ri + 1,
                    col: row.len(),
                    reason: format!("expected {w} fields, got {}", row.len()),
                }
                .into());
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    DataMatrix::from_rows(&rows).map_err(Into::into)
}

struct Fitted {
    result: ClusteringResult,
    flags: Vec<bool>,
    method: &'static str,
}

fn run_fit(data: &DataMatrix, fit: &FitArgs) -> Result<Fitted, CliError> {
    if fit.k == 0 || fit.k > data.nrows() {
        return Err(CliError::Config(format!(
            "k = {} infeasible for {} observations",
            fit.k,
            data.nrows()
        )));
    }
    let policy = OutlierPolicy { beta: fit.beta };
    let rho = RhoConfig::for_dimension(RhoFamily::SmoothHardRejection, data.ncols())?;
    let mut cfg = KTauConfig::new(fit.k, rho, fit.seed);
    cfg.n_starts = fit.starts;
    cfg.max_iter = fit.max_iter;
    cfg.tol = fit.tol;
    let (result, flags, method) = match fit.method {
        MethodArg::Kmeans => {
            let r = kmeans_fit(data, fit.k, fit.starts, fit.max_iter, fit.tol, fit.seed)?;
            let flags = r.outlier_flag.clone();
            (r, flags, "kmeans")
        }
        MethodArg::Tkmeans => {
            let alpha = fit
                .alpha
                .ok_or_else(|| CliError::Config("tkmeans requires --alpha".into()))?;
            let r = tkmeans_fit(data, fit.k, alpha, fit.starts, fit.max_iter, fit.tol, fit.seed)?;
            let flags = r.outlier_flag.clone();
            (r, flags, "tkmeans")
        }
        MethodArg::Ktau => {
            let r = ktau_fit(data, &cfg)?;
            let flags = flag_result_outliers(data, &r, &rho, &policy)?;
            (r, flags, "ktau")
        }
        MethodArg::Iktau => {
            let base = ktau_fit(data, &cfg)?;
            let r = improved_ktau(data, &base, &rho, &policy)?;
            let flags = r.outlier_flag.clone();
            (r, flags, "iktau")
        }
    };
    Ok(Fitted {
        result,
        flags,
        method,
    })
}

fn timestamp(no_timestamp: bool) -> Option<u64> {
    if no_timestamp {
        None
    } else {
        Some(
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        )
    }
}

fn write_text(path: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn write_center_profiles(path: &Path, fitted: &Fitted) -> Result<(), CliError> {
    let mut csv = String::from("cluster,dim,value\n");
    for (k, c) in fitted.result.centers.iter().enumerate() {
        for (j, v) in c.iter().enumerate() {
            csv.push_str(&format!("{k},{j},{v}\n"));
        }
    }
    std::fs::write(path.with_extension("centers.csv"), csv)?;
    Ok(())
}

#[derive(Serialize)]
struct ConfigEcho {
    k: usize,
    method: &'static str,
    alpha: Option<f64>,
    beta: f64,
    starts: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
}

impl ConfigEcho {
    fn new(fit: &FitArgs, method: &'static str) -> Self {
        Self {
            k: fit.k,
            method,
            alpha: fit.alpha,
            beta: fit.beta,
            starts: fit.starts,
            tol: fit.tol,
            max_iter: fit.max_iter,
            seed: fit.seed,
        }
    }
}

#[derive(Serialize)]
struct ClusterReport<'a> {
    schema_version: u32,
    config: ConfigEcho,
    centers: Vec<&'a [f64]>,
    assignment: &'a [usize],
    distances: &'a [f64],
    tau: f64,
    outlier_flags: &'a [bool],
    iterations: usize,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<u64>,
}

fn cmd_cluster(args: &ClusterArgs) -> Result<(), CliError> {
    let data = read_csv(&args.input)?;
    let fitted = run_fit(&data, &args.fit)?;
    let report = ClusterReport {
        schema_version: SCHEMA_VERSION,
        config: ConfigEcho::new(&args.fit, fitted.method),
        centers: fitted.result.centers.iter().map(|c| c.as_slice()).collect(),
        assignment: &fitted.result.assignment,
        distances: &fitted.result.distances,
        tau: fitted.result.tau,
        outlier_flags: &fitted.flags,
        iterations: fitted.result.iterations,
        converged: fitted.result.converged,
        timestamp: timestamp(args.no_timestamp),
    };
    let json = serde_json::to_string_pretty(&report).expect("serializable report");
    write_text(args.output.as_ref(), &json)?;
    if args.emit_plot_data {
        let base = args.output.clone().unwrap_or_else(|| args.input.clone());
        write_center_profiles(&base, &fitted)?;
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let alpha = args.alpha.unwrap_or(0.05);
    if args.k.is_empty() || args.p.is_empty() || args.method.is_empty() || args.reps == 0 {
        return Err(CliError::Config("empty simulation grid".into()));
    }
    let methods: Vec<Method> = args
        .method
        .iter()
        .map(|m| match m {
            MethodArg::Kmeans => Ok(Method::KMeans),
            MethodArg::Ktau => Ok(Method::KTau),
            MethodArg::Iktau => Ok(Method::IKTau),
            MethodArg::Tkmeans => {
                if args.alpha.is_none() {
                    Err(CliError::Config("tkmeans requires --alpha".into()))
                } else {
                    Ok(Method::TKMeans(alpha))
                }
            }
        })
        .collect::<Result<_, _>>()?;
    let mut csv = String::from("K,p,method,alpha,mean_cer,reps,seed\n");
    for &k in &args.k {
        for &p in &args.p {
            let sc = SimScenario::new(k, p, alpha, args.reps, args.seed)?;
            for row in run_simulation(&sc, &methods)? {
                let alpha_field = row.alpha.map(|a| a.to_string()).unwrap_or_default();
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    row.k, row.p, row.method, alpha_field, row.mean_cer, row.reps, row.seed
                ));
            }
        }
    }
    write_text(args.output.as_ref(), csv.trim_end())?;
    Ok(())
}

const PALETTE: [[u8; 3]; 10] = [
    [230, 60, 60],
    [60, 130, 230],
    [70, 190, 90],
    [240, 180, 40],
    [160, 90, 220],
    [70, 200, 200],
    [230, 120, 180],
    [150, 150, 60],
    [120, 80, 40],
    [200, 200, 200],
];

fn cluster_color(k: usize) -> [u8; 3] {
    let base = PALETTE[k % PALETTE.len()];
    let fade = (k / PALETTE.len()) as u16;
    base.map(|c| (c as u16 / (1 + fade)) as u8)
}

fn load_grid(path: &Path, cell_size: usize) -> Result<CellGrid, CliError> {
    let raster = ktau::pnm::read_file(path)?;
    let grid = if raster.channels == 1 {
        pack_gray_cells(&raster, cell_size)?
    } else {
        pack_rgb_cells(&raster, cell_size)?
    };
    Ok(grid)
}

#[derive(Serialize)]
struct SegmentSidecar {
    schema_version: u32,
    config: ConfigEcho,
    rows: usize,
    cols: usize,
    cell_size: usize,
    cluster_colors: Vec<[u8; 3]>,
    flagged_cells: Vec<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<u64>,
}

fn cmd_segment(args: &SegmentArgs) -> Result<(), CliError> {
    let grid = load_grid(&args.input, args.cell_size)?;
    if grid.features.nrows() < args.fit.k {
        return Err(CliError::Config(format!(
            "{} cells < k = {}",
            grid.features.nrows(),
            args.fit.k
        )));
    }
    let fitted = run_fit(&grid.features, &args.fit)?;
    let mut rgb = Vec::with_capacity(grid.rows * grid.cols * 3);
    for i in 0..grid.rows * grid.cols {
        let color = if fitted.flags[i] {
            [0, 0, 0]
        } else {
            cluster_color(fitted.result.assignment[i])
        };
        rgb.extend(color);
    }
    ktau::pnm::write_p6(&args.output, grid.cols, grid.rows, &rgb)?;
    let sidecar = SegmentSidecar {
        schema_version: SCHEMA_VERSION,
        config: ConfigEcho::new(&args.fit, fitted.method),
        rows: grid.rows,
        cols: grid.cols,
        cell_size: grid.cell_size,
        cluster_colors: (0..fitted.result.centers.k()).map(cluster_color).collect(),
        flagged_cells: grid
            .geo
            .iter()
            .zip(&fitted.flags)
            .filter(|(_, &f)| f)
            .map(|(&g, _)| g)
            .collect(),
        timestamp: timestamp(args.no_timestamp),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("serializable sidecar");
    std::fs::write(args.output.with_extension("json"), json)?;
    if args.emit_plot_data {
        write_center_profiles(&args.output, &fitted)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SearchReport {
    schema_version: u32,
    config: ConfigEcho,
    mode: &'static str,
    candidates: Vec<Candidate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<u64>,
}

#[derive(Serialize)]
struct Candidate {
    row: usize,
    col: usize,
    score: f64,
}

fn cmd_search(args: &SearchArgs) -> Result<(), CliError> {
    let grid = load_grid(&args.input, args.cell_size)?;
    if grid.features.nrows() < args.fit.k {
        return Err(CliError::Config(format!(
            "{} cells < k = {}",
            grid.features.nrows(),
            args.fit.k
        )));
    }
    let fitted = run_fit(&grid.features, &args.fit)?;
    let (mode, candidates) = match args.mode {
        SearchMode::Extreme => {
            let mut scored: Vec<Candidate> = grid
                .geo
                .iter()
                .zip(&fitted.result.distances)
                .map(|(&(r, c), &d)| Candidate {
                    row: r,
                    col: c,
                    score: d,
                })
                .collect();
            scored.sort_by(|a, b| {
                b.score
                    .partial_cmp(&a.score)
                    .unwrap()
                    .then((a.row, a.col).cmp(&(b.row, b.col)))
            });
            scored.truncate(10);
            let top = extreme_outlier(&fitted.result, &grid)?;
            debug_assert_eq!((scored[0].row, scored[0].col), top);
            ("extreme", scored)
        }
        SearchMode::Geographic => {
            let target = args.target_cluster.ok_or_else(|| {
                CliError::Config("geographic mode requires --target-cluster".into())
            })?;
            if target >= fitted.result.centers.k() {
                return Err(CliError::Config(format!(
                    "target cluster {target} out of range (k = {})",
                    fitted.result.centers.k()
                )));
            }
            let rho = RhoConfig::for_dimension(RhoFamily::SmoothHardRejection, 2)?;
            let policy = OutlierPolicy { beta: args.fit.beta };
            let cells =
                geographic_search(&fitted.result, &grid, target, &rho, &policy)?;
            let found: Vec<Candidate> = cells
                .iter()
                .enumerate()
                .map(|(rank, &(r, c))| Candidate {
                    row: r,
                    col: c,
                    score: (cells.len() - rank) as f64,
                })
                .collect();
            ("geographic", found)
        }
    };
    for c in &candidates {
        println!("({}, {}, {})", c.row, c.col, c.score);
    }
    let report = SearchReport {
        schema_version: SCHEMA_VERSION,
        config: ConfigEcho::new(&args.fit, fitted.method),
        mode,
        candidates,
        timestamp: timestamp(args.no_timestamp),
    };
    let json = serde_json::to_string_pretty(&report).expect("serializable report");
    if let Some(path) = &args.output {
        std::fs::write(path, json)?;
    }
    Ok(())
}

//! Image-to-feature pipelines: packing square pixel cells into feature
//! vectors, the saturation/intensity transform for color images, and the
//! two lost-object search procedures on a fitted segmentation.

use crate::cluster::{ktau_fit, ClusteringResult, KTauConfig};
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::pnm::Raster;
use crate::robust::{mahalanobis_sq, robust_location_scatter_with_cutoff, OutlierPolicy};
use crate::scales::RhoConfig;

/// Features extracted from an image partitioned into square cells.
/// `geo[i]` is the (cell row, cell col) coordinate of feature row i.
#[derive(Debug, Clone)]
pub struct CellGrid {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: usize,
    pub features: DataMatrix,
    pub geo: Vec<(usize, usize)>,
}

fn grid_shape(image: &Raster, cell_size: usize) -> Result<(usize, usize)> {
    if cell_size == 0 {
        return Err(Error::InvalidParameter {
            name: "cell_size",
            reason: "must be positive".into(),
        });
    }
    let rows = image.height / cell_size;
    let cols = image.width / cell_size;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidParameter {
            name: "cell_size",
            reason: format!(
                "cell size {cell_size} exceeds image {}x{}",
                image.width, image.height
            ),
        });
    }
    if !image.height.is_multiple_of(cell_size) || !image.width.is_multiple_of(cell_size) {
        eprintln!(
            "warning: dropping partial trailing cells ({}x{} image, cell size {cell_size})",
            image.width, image.height
        );
    }
    Ok((rows, cols))
}

fn pack<F>(image: &Raster, cell_size: usize, dim_per_pixel: usize, mut fill: F) -> Result<CellGrid>
where
    F: FnMut(usize, usize, &mut Vec<f64>) -> Result<()>,
{
    let (rows, cols) = grid_shape(image, cell_size)?;
    let mut feats = Vec::with_capacity(rows * cols);
    let mut geo = Vec::with_capacity(rows * cols);
    for cr in 0..rows {
        for cc in 0..cols {
            let mut row = Vec::with_capacity(cell_size * cell_size * dim_per_pixel);
            for dy in 0..cell_size {
                for dx in 0..cell_size {
                    fill(cr * cell_size + dy, cc * cell_size + dx, &mut row)?;
                }
            }
            feats.push(row);
            geo.push((cr, cc));
        }
    }
    Ok(CellGrid {
        rows,
        cols,
        cell_size,
        features: DataMatrix::from_rows(&feats)?,
        geo,
    })
}

/// Flattens each cell of a grayscale raster into a cell_size^2 feature
/// row of intensities in [0, 1].
pub fn pack_gray_cells(image: &Raster, cell_size: usize) -> Result<CellGrid> {
    if image.channels != 1 {
        return Err(Error::Raster(format!(
            "expected grayscale raster, got {} channels",
            image.channels
        )));
    }
    pack(image, cell_size, 1, |y, x, row| {
        row.push(image.normalized(y, x, 0));
        Ok(())
    })
}

/// Saturation/intensity transform: I = (R+G+B)/3, S = 1 - min(R,G,B)/I,
/// with S = 0 when I = 0.
pub fn si_transform(r: f64, g: f64, b: f64) -> Result<(f64, f64)> {
    for (name, v) in [("r", r), ("g", g), ("b", b)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("channel value {v} outside [0, 1]"),
            });
        }
    }
    let i = (r + g + b) / 3.0;
    let s = if i == 0.0 || (r == g && g == b) {
        0.0
    } else {
        // clamp against round-off in nearly gray pixels
        (1.0 - r.min(g).min(b) / i).max(0.0)
    };
    Ok((s, i))
}

/// Per-pixel S/I transform followed by cell packing; each cell yields a
/// 2 cell_size^2 feature row of interleaved (s, i) pairs.
pub fn pack_rgb_cells(image: &Raster, cell_size: usize) -> Result<CellGrid> {
    if image.channels != 3 {
        return Err(Error::Raster(format!(
            "expected RGB raster, got {} channels",
            image.channels
        )));
    }
    pack(image, cell_size, 2, |y, x, row| {
        let (s, i) = si_transform(
            image.normalized(y, x, 0),
            image.normalized(y, x, 1),
            image.normalized(y, x, 2),
        )?;
        row.push(s);
        row.push(i);
        Ok(())
    })
}

/// The cell lying farthest from its assigned cluster center. Ties break
/// toward the smallest linear cell index.
pub fn extreme_outlier(result: &ClusteringResult, grid: &CellGrid) -> Result<(usize, usize)> {
    if result.distances.len() != grid.geo.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.geo.len(),
            got: result.distances.len(),
        });
    }
    let mut best = 0;
    for (i, &d) in result.distances.iter().enumerate() {
        if d > result.distances[best] {
            best = i;
        }
    }
    Ok(grid.geo[best])
}

/// Second-stage search: robustly clusters the (row, col) coordinates of
/// the target cluster's cells with K = 1 and returns the cells flagged by
/// the resulting robust ellipsoid, sorted by descending Mahalanobis
/// distance.
pub fn geographic_search(
    result: &ClusteringResult,
    grid: &CellGrid,
    target_cluster: usize,
    rho: &RhoConfig,
    policy: &OutlierPolicy,
) -> Result<Vec<(usize, usize)>> {
    if result.assignment.len() != grid.geo.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.geo.len(),
            got: result.assignment.len(),
        });
    }
    let members: Vec<usize> = result
        .assignment
        .iter()
        .enumerate()
        .filter(|(_, &a)| a == target_cluster)
        .map(|(i, _)| i)
        .collect();
    if members.len() < 3 {
        return Err(Error::TooFewObservations {
            needed: 3,
            got: members.len(),
        });
    }
    let coords: Vec<Vec<f64>> = members
        .iter()
        .map(|&i| vec![grid.geo[i].0 as f64, grid.geo[i].1 as f64])
        .collect();
    let geo_data = DataMatrix::from_rows(&coords)?;
    let cfg = KTauConfig::new(1, *rho, 0);
    ktau_fit(&geo_data, &cfg)?;

    let ellipsoid = robust_location_scatter_with_cutoff(&geo_data, rho, policy)?;
    let mut flagged: Vec<(f64, (usize, usize))> = Vec::new();
    for (row, &idx) in geo_data.rows().zip(&members) {
        let d2 = mahalanobis_sq(row, &ellipsoid)?;
        if d2 > ellipsoid.cutoff {
            flagged.push((d2, grid.geo[idx]));
        }
    }
    flagged.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(flagged.into_iter().map(|(_, c)| c).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{kmeans_fit, CenterSet};
    use crate::pnm;
    use crate::scales::RhoFamily;
    use proptest::prelude::*;

    fn gray_raster(width: usize, height: usize, values: &[u16]) -> Raster {
        Raster {
            width,
            height,
            channels: 1,
            maxval: 255,
            samples: values.to_vec(),
        }
    }

    #[test]
    fn gray_packing_shape_and_round_trip() {
        let vals: Vec<u16> = (0..400).map(|i| (i % 251) as u16).collect();
        let img = gray_raster(20, 20, &vals);
        let grid = pack_gray_cells(&img, 10).unwrap();
        assert_eq!((grid.rows, grid.cols), (2, 2));
        assert_eq!(grid.features.nrows(), 4);
        assert_eq!(grid.features.ncols(), 100);
        assert_eq!(grid.geo, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        // unpack and compare with the source pixels
        for (cell, &(cr, cc)) in grid.features.rows().zip(&grid.geo) {
            for dy in 0..10 {
                for dx in 0..10 {
                    let want = img.normalized(cr * 10 + dy, cc * 10 + dx, 0);
                    assert_eq!(cell[dy * 10 + dx], want);
                }
            }
        }
    }

    #[test]
    fn constant_image_constant_features() {
        let img = gray_raster(8, 8, &[51; 64]);
        let grid = pack_gray_cells(&img, 4).unwrap();
        for row in grid.features.rows() {
            assert!(row.iter().all(|&v| v == 51.0 / 255.0));
        }
    }

    #[test]
    fn packing_rejects_bad_inputs() {
        let img = gray_raster(4, 4, &[0; 16]);
        assert!(pack_gray_cells(&img, 0).is_err());
        assert!(pack_gray_cells(&img, 5).is_err());
        let rgb = Raster {
            width: 2,
            height: 2,
            channels: 3,
            maxval: 255,
            samples: vec![0; 12],
        };
        assert!(pack_gray_cells(&rgb, 1).is_err());
        assert!(pack_rgb_cells(&img, 1).is_err());
    }

    #[test]
    fn si_transform_reference_points() {
        assert_eq!(si_transform(0.0, 0.0, 0.0).unwrap(), (0.0, 0.0));
        assert_eq!(si_transform(1.0, 1.0, 1.0).unwrap(), (0.0, 1.0));
        let (s, i) = si_transform(0.0, 1.0, 0.0).unwrap();
        assert_eq!(s, 1.0);
        assert!((i - 1.0 / 3.0).abs() < 1e-15);
        assert!(si_transform(1.1, 0.0, 0.0).is_err());
        assert!(si_transform(0.5, -0.1, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn si_transform_stays_in_unit_square(
            r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0
        ) {
            let (s, i) = si_transform(r, g, b).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((0.0..=1.0).contains(&i));
        }
    }

    #[test]
    fn rgb_packing_dimension_and_oracle() {
        let n = 16 * 16 * 3;
        let samples: Vec<u16> = (0..n).map(|i| ((i * 37 + 11) % 256) as u16).collect();
        let img = Raster {
            width: 16,
            height: 16,
            channels: 3,
            maxval: 255,
            samples,
        };
        let single = pack_rgb_cells(&img, 8).unwrap();
        assert_eq!(single.features.ncols(), 128);
        let grid = pack_rgb_cells(&img, 4).unwrap();
        for (cell, &(cr, cc)) in grid.features.rows().zip(&grid.geo) {
            for dy in 0..4 {
                for dx in 0..4 {
                    let (y, x) = (cr * 4 + dy, cc * 4 + dx);
                    let (r, g, b) = (
                        img.normalized(y, x, 0),
                        img.normalized(y, x, 1),
                        img.normalized(y, x, 2),
                    );
                    let i_val = (r + g + b) / 3.0;
                    let s_val = if i_val == 0.0 || (r == g && g == b) {
                        0.0
                    } else {
                        (1.0 - r.min(g).min(b) / i_val).max(0.0)
                    };
                    let off = 2 * (dy * 4 + dx);
                    assert_eq!(cell[off], s_val);
                    assert_eq!(cell[off + 1], i_val);
                }
            }
        }
    }

    #[test]
    fn gray_rgb_input_has_zero_saturation() {
        let mut samples = Vec::new();
        for i in 0..16u16 {
            let v = i * 15;
            samples.extend([v, v, v]);
        }
        let img = Raster {
            width: 4,
            height: 4,
            channels: 3,
            maxval: 255,
            samples,
        };
        let grid = pack_rgb_cells(&img, 2).unwrap();
        for row in grid.features.rows() {
            for pair in row.chunks(2) {
                assert_eq!(pair[0], 0.0);
            }
        }
    }

    fn planted_anomaly_image(seed: u16) -> Raster {
        // two flat tones in left/right halves plus one saturated cell
        let mut samples = vec![0u16; 400];
        for y in 0..20 {
            for x in 0..20 {
                samples[y * 20 + x] = if x < 10 { 30 } else { 90 };
            }
        }
        let (cy, cx) = ((seed as usize) % 4, (seed as usize / 4) % 4);
        for dy in 0..5 {
            for dx in 0..5 {
                samples[(cy * 5 + dy) * 20 + cx * 5 + dx] = 255;
            }
        }
        gray_raster(20, 20, &samples)
    }

    #[test]
    fn extreme_outlier_finds_planted_cell() {
        let rho = RhoConfig::for_dimension(RhoFamily::SmoothHardRejection, 25).unwrap();
        for seed in 0..10u16 {
            let img = planted_anomaly_image(seed);
            let grid = pack_gray_cells(&img, 5).unwrap();
            let cfg = KTauConfig::new(2, rho, seed as u64);
            let fit = crate::cluster::ktau_fit(&grid.features, &cfg).unwrap();
            let found = extreme_outlier(&fit, &grid).unwrap();
            let want = ((seed as usize) % 4, (seed as usize / 4) % 4);
            assert_eq!(found, want, "seed {seed}");
        }
    }

    #[test]
    fn extreme_outlier_tie_rule_and_relabeling() {
        let img = gray_raster(4, 4, &[100; 16]);
        let grid = pack_gray_cells(&img, 2).unwrap();
        let fit = kmeans_fit(&grid.features, 1, 1, 10, 1e-9, 0).unwrap();
        assert_eq!(extreme_outlier(&fit, &grid).unwrap(), (0, 0));

        // relabeling clusters leaves distances (hence the answer) alone
        let img = planted_anomaly_image(3);
        let grid = pack_gray_cells(&img, 5).unwrap();
        let mut fit = kmeans_fit(&grid.features, 2, 5, 100, 1e-9, 1).unwrap();
        let before = extreme_outlier(&fit, &grid).unwrap();
        fit.assignment.iter_mut().for_each(|a| *a = 1 - *a);
        let mut swapped: Vec<Vec<f64>> = fit.centers.iter().map(|c| c.to_vec()).collect();
        swapped.reverse();
        fit.centers = CenterSet::new(swapped).unwrap();
        assert_eq!(extreme_outlier(&fit, &grid).unwrap(), before);
    }

    fn synthetic_result(n: usize, assignment: Vec<usize>) -> ClusteringResult {
        ClusteringResult {
            centers: CenterSet::new(vec![vec![0.0]]).unwrap(),
            assignment,
            distances: vec![0.0; n],
            tau: 0.0,
            outlier_flag: vec![false; n],
            iterations: 0,
            converged: true,
            history: Vec::new(),
        }
    }

    fn grid_from_geo(geo: Vec<(usize, usize)>) -> CellGrid {
        let rows: Vec<Vec<f64>> = geo.iter().map(|&(r, c)| vec![r as f64, c as f64]).collect();
        let max_r = geo.iter().map(|g| g.0).max().unwrap() + 1;
        let max_c = geo.iter().map(|g| g.1).max().unwrap() + 1;
        CellGrid {
            rows: max_r,
            cols: max_c,
            cell_size: 1,
            features: DataMatrix::from_rows(&rows).unwrap(),
            geo,
        }
    }

    #[test]
    fn geographic_search_finds_isolated_cell() {
        let rho = RhoConfig::for_dimension(RhoFamily::SmoothHardRejection, 2).unwrap();
        let policy = OutlierPolicy::default();
        for seed in 0..10u64 {
            // a tight blob plus one member planted 50 cells away
            let mut geo = Vec::new();
            for r in 0..7 {
                for c in 0..7 {
                    geo.push((10 + r, 10 + c));
                }
            }
            let planted = (60 + (seed as usize % 5), 10 + (seed as usize % 7));
            geo.push(planted);
            let grid = grid_from_geo(geo.clone());
            let fit = synthetic_result(geo.len(), vec![0; geo.len()]);
            let found = geographic_search(&fit, &grid, 0, &rho, &policy).unwrap();
            assert!(!found.is_empty());
            assert_eq!(found[0], planted, "seed {seed}");
        }
    }

    #[test]
    fn geographic_search_false_positive_rate_is_low() {
        // uniform disc of cells: light tails, so flags should be rare
        let mut geo = Vec::new();
        for r in 0..41usize {
            for c in 0..41usize {
                let (dr, dc) = (r as f64 - 20.0, c as f64 - 20.0);
                if dr * dr + dc * dc <= 400.0 {
                    geo.push((r, c));
                }
            }
        }
        let n = geo.len();
        let rho = RhoConfig::for_dimension(RhoFamily::SmoothHardRejection, 2).unwrap();
        let policy = OutlierPolicy::default();
        let grid = grid_from_geo(geo);
        let fit = synthetic_result(n, vec![0; n]);
        let found = geographic_search(&fit, &grid, 0, &rho, &policy).unwrap();
        // binomial bound at beta = 0.01 with a 3 sigma margin
        let bound = 0.01 * n as f64 + 3.0 * (n as f64 * 0.01 * 0.99).sqrt();
        assert!(
            (found.len() as f64) <= bound,
            "{} of {n} flagged, bound {bound:.1}",
            found.len()
        );
    }

    #[test]
    fn geographic_search_order_invariance_and_errors() {
        let rho = RhoConfig::for_dimension(RhoFamily::SmoothHardRejection, 2).unwrap();
        let policy = OutlierPolicy::default();
        let mut geo = Vec::new();
        for r in 0..6 {
            for c in 0..6 {
                geo.push((r, c));
            }
        }
        geo.push((40, 40));
        geo.push((45, 3));
        let forward = {
            let grid = grid_from_geo(geo.clone());
            let fit = synthetic_result(geo.len(), vec![0; geo.len()]);
            geographic_search(&fit, &grid, 0, &rho, &policy).unwrap()
        };
        let reversed = {
            let mut rev = geo.clone();
            rev.reverse();
            let grid = grid_from_geo(rev.clone());
            let fit = synthetic_result(rev.len(), vec![0; rev.len()]);
            geographic_search(&fit, &grid, 0, &rho, &policy).unwrap()
        };
        assert_eq!(forward, reversed);

        let grid = grid_from_geo(vec![(0, 0), (0, 1)]);
        let fit = synthetic_result(2, vec![0, 0]);
        assert!(geographic_search(&fit, &grid, 0, &rho, &policy).is_err());
    }

    #[test]
    fn segmentation_pipeline_reads_real_pnm() {
        // end-to-end: raster bytes -> cells -> clustering
        let mut src = b"P5\n20 20\n255\n".to_vec();
        for y in 0..20usize {
            for x in 0..20usize {
                src.push(if (y / 10 + x / 10) % 2 == 0 { 20 } else { 200 });
            }
        }
        let img = pnm::parse(&src).unwrap();
        let grid = pack_gray_cells(&img, 10).unwrap();
        let fit = kmeans_fit(&grid.features, 2, 5, 100, 1e-9, 0).unwrap();
        assert_eq!(fit.assignment[0], fit.assignment[3]);
        assert_ne!(fit.assignment[0], fit.assignment[1]);
    }
}

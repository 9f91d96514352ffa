//! ROI max pooling over a spatial grid addressed in pixel coordinates.

use super::FeatureMap;
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Grid cells under `bbox` split into `m x m` bins. Returns, per output cell
/// in row-major order, the flat `u * cols + v` indices it pools over.
///
/// A box covers every cell it overlaps once projected by `stride`. Bin `i`
/// spans cells `floor(i * n / m) ..= ceil((i + 1) * n / m) - 1`, so when the
/// box covers fewer than `m` cells the nearest covered cell is replicated and
/// no bin is ever empty.
pub fn roi_bins(bbox: &BBox, stride: f64, rows: usize, cols: usize, m: usize) -> Result<Vec<Vec<usize>>> {
    if m == 0 {
        return Err(Error::Config("ROI output size must be >= 1".into()));
    }
    if !bbox.is_valid() {
        return Err(Error::DegenerateRoi(format!("{bbox:?}")));
    }
    let span = |lo: f64, hi: f64, n: usize| -> Option<(usize, usize)> {
        let a = (lo / stride).floor().max(0.0);
        let b = ((hi / stride).ceil() - 1.0).min(n as f64 - 1.0);
        (b >= a).then_some((a as usize, b as usize))
    };
    let ((r0, r1), (c0, c1)) = match (span(bbox.y1, bbox.y2, rows), span(bbox.x1, bbox.x2, cols)) {
        (Some(r), Some(c)) => (r, c),
        _ => return Err(Error::DegenerateRoi(format!("{bbox:?} covers no grid cell"))),
    };
    let (nr, nc) = (r1 - r0 + 1, c1 - c0 + 1);
    let edges = |i: usize, n: usize| -> (usize, usize) {
        let lo = i * n / m;
        let hi = ((i + 1) * n).div_ceil(m);
        (lo, hi.max(lo + 1))
    };
    let mut bins = Vec::with_capacity(m * m);
    for by in 0..m {
        let (ylo, yhi) = edges(by, nr);
        for bx in 0..m {
            let (xlo, xhi) = edges(bx, nc);
            let mut cell = Vec::with_capacity((yhi - ylo) * (xhi - xlo));
            for y in ylo..yhi {
                for x in xlo..xhi {
                    cell.push((r0 + y) * cols + c0 + x);
                }
            }
            bins.push(cell);
        }
    }
    Ok(bins)
}

/// Max-pools `grid` under `bbox` to `channels x m x m` (channel-major).
pub fn roi_pool(grid: &FeatureMap, bbox: &BBox, stride: f64, m: usize) -> Result<FeatureMap> {
    let bins = roi_bins(bbox, stride, grid.rows, grid.cols, m)?;
    let plane = grid.rows * grid.cols;
    let mut data = Vec::with_capacity(grid.channels * m * m);
    for c in 0..grid.channels {
        let ch = &grid.data[c * plane..(c + 1) * plane];
        for cell in &bins {
            data.push(cell.iter().map(|&i| ch[i]).fold(f64::NEG_INFINITY, f64::max));
        }
    }
    Ok(FeatureMap {
        channels: grid.channels,
        rows: m,
        cols: m,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_4x4() -> FeatureMap {
        FeatureMap {
            channels: 1,
            rows: 4,
            cols: 4,
            data: vec![
                1.0, 7.0, 2.0, 0.5, //
                3.0, 4.0, 9.0, 1.5, //
                6.0, 0.0, 5.0, 8.0, //
                2.5, 3.5, 4.5, 7.5,
            ],
        }
    }

    #[test]
    fn full_box_identity() {
        let g = grid_4x4();
        let out = roi_pool(&g, &BBox::new(0.0, 0.0, 16.0, 16.0), 4.0, 4).unwrap();
        assert_eq!(out.data, g.data);
    }

    #[test]
    fn constant_grid() {
        let g = FeatureMap {
            channels: 2,
            rows: 5,
            cols: 5,
            data: vec![0.25; 50],
        };
        for b in [BBox::new(1.0, 2.0, 3.0, 19.0), BBox::new(0.0, 0.0, 20.0, 20.0)] {
            let out = roi_pool(&g, &b, 4.0, 3).unwrap();
            assert!(out.data.iter().all(|&v| v == 0.25));
        }
    }

    #[test]
    fn two_by_two_region_hand_oracle() {
        // Box over pixels [4, 12) x [4, 12) -> grid rows 1..=2, cols 1..=2.
        let g = grid_4x4();
        let out = roi_pool(&g, &BBox::new(4.0, 4.0, 12.0, 12.0), 4.0, 2).unwrap();
        assert_eq!(out.data, vec![4.0, 9.0, 0.0, 5.0]);
        // M=1 over the same region is the max of the four cells.
        let one = roi_pool(&g, &BBox::new(4.0, 4.0, 12.0, 12.0), 4.0, 1).unwrap();
        assert_eq!(one.data, vec![9.0]);
        // A 3x2-cell region (rows 0..=2, cols 2..=3) pooled to 2x2.
        let out = roi_pool(&g, &BBox::new(8.0, 0.0, 16.0, 12.0), 4.0, 2).unwrap();
        // row bins: [0,1], [1,2]; col bins: [2], [3]
        assert_eq!(out.data, vec![9.0, 1.5, 9.0, 8.0]);
    }

    #[test]
    fn small_box_replicates_cell() {
        let g = grid_4x4();
        let out = roi_pool(&g, &BBox::new(5.0, 5.0, 6.0, 6.0), 4.0, 2).unwrap();
        assert_eq!(out.data, vec![4.0; 4]);
    }

    #[test]
    fn degenerate_roi_errors() {
        let g = grid_4x4();
        assert!(matches!(
            roi_pool(&g, &BBox::new(20.0, 20.0, 30.0, 30.0), 4.0, 2),
            Err(Error::DegenerateRoi(_))
        ));
        assert!(matches!(
            roi_pool(&g, &BBox::new(3.0, 3.0, 3.0, 8.0), 4.0, 2),
            Err(Error::DegenerateRoi(_))
        ));
    }
}

//! Decision boundaries on a grid, PPM rasters, and grid-based margins.

use basinscope::datasets::LabeledDataset;
use basinscope::nn::{forward, Matrix};
use basinscope::{Error, MlpArch, ParamVector, Result};

/// An axis-aligned rectangle of input space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Domain {
    pub fn square(half_width: f64) -> Self {
        Domain {
            x: (-half_width, half_width),
            y: (-half_width, half_width),
        }
    }

    /// Bounding box of the points, padded by `pad` on every side.
    pub fn around(points: &[[f64; 2]], pad: f64) -> Self {
        let fold = |k: usize| {
            points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[k]), hi.max(p[k]))
            })
        };
        let ((x0, x1), (y0, y1)) = (fold(0), fold(1));
        Domain {
            x: (x0 - pad, x1 + pad),
            y: (y0 - pad, y1 + pad),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo < hi;
        if !(ok(self.x) && ok(self.y)) {
            return Err(Error::InvalidArgument(format!("empty or non-finite domain {self:?}")));
        }
        Ok(())
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    /// `x0,x1,y0,y1`
    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("domain {s:?} is not x0,x1,y0,y1")))?;
        let [x0, x1, y0, y1] = v[..] else {
            return Err(Error::InvalidArgument(format!("domain {s:?} is not x0,x1,y0,y1")));
        };
        let d = Domain {
            x: (x0, x1),
            y: (y0, y1),
        };
        d.validate()?;
        Ok(d)
    }
}

/// Predicted class at every cell center. Row 0 is the bottom row (smallest
/// `y`); within a row, `x` increases.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryGrid {
    pub domain: Domain,
    pub width: usize,
    pub height: usize,
    pub classes: Vec<usize>,
}

impl BoundaryGrid {
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        let (dx, dy) = self.cell_size();
        [
            self.domain.x.0 + (col as f64 + 0.5) * dx,
            self.domain.y.0 + (row as f64 + 0.5) * dy,
        ]
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (
            (self.domain.x.1 - self.domain.x.0) / self.width as f64,
            (self.domain.y.1 - self.domain.y.0) / self.height as f64,
        )
    }

    /// Length of a cell diagonal, the worst-case error of grid distances.
    pub fn cell_diagonal(&self) -> f64 {
        let (dx, dy) = self.cell_size();
        dx.hypot(dy)
    }

    pub fn at(&self, row: usize, col: usize) -> usize {
        self.classes[row * self.width + col]
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        self.classes.iter().for_each(|&c| counts[c] += 1);
        counts
    }
}

fn predict_points(arch: &MlpArch, params: &ParamVector, points: &[[f64; 2]]) -> Result<Vec<usize>> {
    let rows: Vec<[f64; 2]> = points.to_vec();
    let probs = forward(arch, params, &Matrix::from_rows(&rows)?)?;
    Ok((0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            // ties go to the lower class index
            (1..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect())
}

/// Argmax class at the center of each cell of a `width × height` grid.
pub fn decision_boundary(
    arch: &MlpArch,
    params: &ParamVector,
    domain: Domain,
    width: usize,
    height: usize,
) -> Result<BoundaryGrid> {
    domain.validate()?;
    if width < 2 || height < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 cells per axis".into()));
    }
    if arch.input_dim() != 2 {
        return Err(Error::InvalidArgument(
            "decision boundaries need two input features".into(),
        ));
    }
    let mut grid = BoundaryGrid {
        domain,
        width,
        height,
        classes: Vec::new(),
    };
    let centers: Vec<[f64; 2]> = (0..height)
        .flat_map(|r| (0..width).map(move |c| (r, c)))
        .map(|(r, c)| grid.cell_center(r, c))
        .collect();
    grid.classes = predict_points(arch, params, &centers)?;
    Ok(grid)
}

const REGION: [[u8; 3]; 2] = [[168, 196, 255], [255, 180, 168]];
const POINT: [[u8; 3]; 2] = [[0, 40, 200], [200, 20, 0]];
const OTHER: [u8; 3] = [90, 90, 90];

/// Binary PPM of the grid with labeled points drawn as small crosses.
/// Region colors for class 0 and 1 are light blue and light red; points use
/// the saturated version of their label's color.
pub fn render_ppm(grid: &BoundaryGrid, points: &[[f64; 2]], labels: &[usize]) -> Vec<u8> {
    let (w, h) = (grid.width, grid.height);
    let mut pixels = vec![0u8; 3 * w * h];
    // Image rows run top to bottom, grid rows bottom to top.
    let offset = |row: usize, col: usize| 3 * ((h - 1 - row) * w + col);
    for row in 0..h {
        for col in 0..w {
            let color = REGION.get(grid.at(row, col)).copied().unwrap_or(OTHER);
            pixels[offset(row, col)..offset(row, col) + 3].copy_from_slice(&color);
        }
    }
    let (dx, dy) = grid.cell_size();
    for (p, &label) in points.iter().zip(labels) {
        let col = ((p[0] - grid.domain.x.0) / dx).floor();
        let row = ((p[1] - grid.domain.y.0) / dy).floor();
        let color = POINT.get(label).copied().unwrap_or(OTHER);
        for (dr, dc) in [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)] {
            let (r, c) = (row + dr as f64, col + dc as f64);
            if r >= 0.0 && c >= 0.0 && (r as usize) < h && (c as usize) < w {
                let at = offset(r as usize, c as usize);
                pixels[at..at + 3].copy_from_slice(&color);
            }
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginEstimate {
    /// Smallest distance from a training point to a cell center of a
    /// different predicted class; infinite if the grid holds one class only.
    pub margin: f64,
    /// Cell diagonal, the resolution of `margin`.
    pub cell_diagonal: f64,
    /// Index of the training point attaining the minimum.
    pub closest_point: Option<usize>,
}

/// Grid estimate of how far the decision boundary lies from the training
/// data.
pub fn margin_estimate(
    arch: &MlpArch,
    params: &ParamVector,
    train: &LabeledDataset,
    domain: Domain,
    width: usize,
    height: usize,
) -> Result<MarginEstimate> {
    let grid = decision_boundary(arch, params, domain, width, height)?;
    let predicted = predict_points(arch, params, train.points())?;
    let centers: Vec<([f64; 2], usize)> = (0..height)
        .flat_map(|r| (0..width).map(move |c| (r, c)))
        .map(|(r, c)| (grid.cell_center(r, c), grid.at(r, c)))
        .collect();
    let mut best = (f64::INFINITY, None);
    for (i, (p, &class)) in train.points().iter().zip(&predicted).enumerate() {
        let d = centers
            .iter()
            .filter(|(_, c)| *c != class)
            .map(|(q, _)| (p[0] - q[0]).hypot(p[1] - q[1]))
            .fold(f64::INFINITY, f64::min);
        if d < best.0 {
            best = (d, Some(i));
        }
    }
    Ok(MarginEstimate {
        margin: best.0,
        cell_diagonal: grid.cell_diagonal(),
        closest_point: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use basinscope::datasets::Role;
    use basinscope::Activation;

    /// Single-layer net predicting class 1 where y > 0.
    fn half_plane() -> (MlpArch, ParamVector) {
        let arch = MlpArch::new(vec![2, 2], Activation::Tanh).unwrap();
        (arch, ParamVector::new(vec![0.0, -1.0, 0.0, 1.0, 0.0, 0.0]))
    }

    #[test]
    fn constant_predictor_is_one_color() {
        let arch = MlpArch::new(vec![2, 2], Activation::Tanh).unwrap();
        let params = ParamVector::new(vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let grid = decision_boundary(&arch, &params, Domain::square(1.0), 7, 5).unwrap();
        assert_eq!(grid.class_counts(2), vec![35, 0]);
        let m = margin_estimate(
            &arch,
            &params,
            &LabeledDataset::new(vec![[0.0, 0.0]], vec![0], Role::Train).unwrap(),
            Domain::square(1.0),
            7,
            5,
        )
        .unwrap();
        assert!(m.margin.is_infinite());
    }

    #[test]
    fn ppm_header_and_size() {
        let (arch, params) = half_plane();
        let grid = decision_boundary(&arch, &params, Domain::square(1.0), 4, 3).unwrap();
        let img = render_ppm(&grid, &[], &[]);
        assert!(img.starts_with(b"P6\n4 3\n255\n"));
        assert_eq!(img.len(), b"P6\n4 3\n255\n".len() + 36);
        // top row is y > 0 (class 1), bottom row class 0
        let body = &img[11..];
        assert_eq!(&body[..3], &REGION[1]);
        assert_eq!(&body[body.len() - 3..], &REGION[0]);
    }

    #[test]
    fn half_plane_margin() {
        let (arch, params) = half_plane();
        let train =
            LabeledDataset::new(vec![[-0.5, 1.0], [0.3, -1.0], [0.0, 1.0]], vec![1, 0, 1], Role::Train).unwrap();
        for n in [20, 80, 200] {
            let m = margin_estimate(&arch, &params, &train, Domain::square(2.0), n, n).unwrap();
            assert!((m.margin - 1.0).abs() <= m.cell_diagonal, "n={n}: {m:?}");
        }
    }

    #[test]
    fn rejects_degenerate_grids() {
        let (arch, params) = half_plane();
        assert!(decision_boundary(&arch, &params, Domain::square(1.0), 1, 5).is_err());
        assert!("0,1,2".parse::<Domain>().is_err());
        assert!("1,0,0,1".parse::<Domain>().is_err());
        assert_eq!("-1,1,-2,2".parse::<Domain>().unwrap().y, (-2.0, 2.0));
    }
}

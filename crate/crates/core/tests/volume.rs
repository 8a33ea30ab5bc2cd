//! Basin volumes of quadratic bowls against closed forms and a brute-force
//! area count.

use basinscope::landscape::{basin_samples, log_volume, DirectionSampler, LossSurface, QuadraticBowl, RadiusSearch};
use std::f64::consts::PI;

const CUTOFF: f64 = 0.1;

fn search() -> RadiusSearch {
    RadiusSearch {
        cutoff: CUTOFF,
        tol: 1e-7,
        max_radius: 10.0,
    }
}

fn estimate(bowl: &QuadraticBowl, directions: usize, seed: u64) -> f64 {
    let center = vec![0.0; bowl.dim()];
    let samples = basin_samples(bowl, &center, &DirectionSampler::euclidean(seed), directions, &search()).unwrap();
    log_volume(&samples, bowl.dim()).unwrap().log10_volume
}

/// Area of `{x² + 10y² < cutoff}` counted on a 4000 × 4000 grid of cell
/// midpoints over the bounding box.
fn grid_area() -> f64 {
    const N: usize = 4000;
    let (ax, ay) = ((CUTOFF).sqrt(), (CUTOFF / 10.0).sqrt());
    let (hx, hy) = (2.0 * ax / N as f64, 2.0 * ay / N as f64);
    let mut inside = 0u64;
    for i in 0..N {
        let x = -ax + (i as f64 + 0.5) * hx;
        for j in 0..N {
            let y = -ay + (j as f64 + 0.5) * hy;
            if x * x + 10.0 * y * y < CUTOFF {
                inside += 1;
            }
        }
    }
    inside as f64 * hx * hy
}

#[test]
fn ellipse_matches_closed_form_and_grid() {
    let bowl = QuadraticBowl::new(vec![1.0, 10.0]).unwrap();
    let exact = (PI * CUTOFF / 10f64.sqrt()).log10();
    assert!((exact - -1.0029).abs() < 1e-4);
    assert!((bowl.log10_basin_volume(CUTOFF) - exact).abs() < 1e-12);

    let est = estimate(&bowl, 20_000, 11);
    let grid = grid_area().log10();
    assert!((grid - exact).abs() < 1e-4, "grid {grid} vs exact {exact}");
    assert!((est - exact).abs() < 0.01, "estimate {est} vs exact {exact}");
    assert!((est - grid).abs() < 0.005, "estimate {est} vs grid {grid}");
}

#[test]
fn isotropic_bowls_match_closed_form() {
    for n in [1, 2, 5, 10] {
        let bowl = QuadraticBowl::isotropic(n);
        let est = estimate(&bowl, 200, n as u64);
        let exact = bowl.log10_basin_volume(CUTOFF);
        assert!((est - exact).abs() < 0.02, "n = {n}: estimate {est} vs exact {exact}");
    }
}

#[test]
fn anisotropic_bowl_in_five_dimensions() {
    let bowl = QuadraticBowl::new(vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let est = estimate(&bowl, 20_000, 3);
    let exact = bowl.log10_basin_volume(CUTOFF);
    assert!((est - exact).abs() < 0.02, "estimate {est} vs exact {exact}");
}

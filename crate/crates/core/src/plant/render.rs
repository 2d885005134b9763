use serde::{Deserialize, Serialize};

use super::{PlantParams, PlantState};

/// Grayscale intensity grid, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Observation {
    pub fn zeros(height: usize, width: usize) -> Self {
        Observation {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn from_f32(height: usize, width: usize, pixels: &[f32]) -> Self {
        Observation {
            height,
            width,
            pixels: pixels.iter().map(|&p| p as f64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Left-right mirror image.
    pub fn flipped_horizontally(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                out.pixels[r * self.width + c] = self.pixels[r * self.width + (self.width - 1 - c)];
            }
        }
        out
    }
}

/// Mean squared difference of two equally sized grids.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "mse of differently sized grids");
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

const SAMPLES_PER_SEGMENT: usize = 24;

/// Centerline samples of both arcs, relative to the base, as `(dx, dy)` with
/// `dy` pointing down the image.
fn centerline(s: &PlantState, params: &PlantParams) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(2 * SAMPLES_PER_SEGMENT + 1);
    let (mut x0, mut y0, mut heading) = (0.0f64, 0.0f64, 0.0f64);
    pts.push((0.0, 0.0));
    for seg in 0..2 {
        let len = params.segment_length * (1.0 + s.ext[seg]);
        let q = s.q[seg];
        for k in 1..=SAMPLES_PER_SEGMENT {
            let frac = k as f64 / SAMPLES_PER_SEGMENT as f64;
            let (dx, dy) = if q.abs() < 1e-9 {
                (len * frac * heading.sin(), len * frac * heading.cos())
            } else {
                let r = len / q;
                let th = heading + q * frac;
                (
                    r * (heading.cos() - th.cos()),
                    r * (th.sin() - heading.sin()),
                )
            };
            pts.push((x0 + dx, y0 + dy));
        }
        let (ex, ey) = *pts.last().unwrap();
        x0 = ex;
        y0 = ey;
        heading += q;
    }
    pts
}

/// Draws the two arcs from the fixed base. Each centerline sample contributes
/// a Gaussian normalized so a straight line has unit peak intensity; the sum is
/// clamped to `[0, 1]`.
pub fn render(s: &PlantState, params: &PlantParams) -> Observation {
    let (h, w) = (params.height, params.width);
    let mut acc = vec![0.0f64; h * w];
    let sigma = params.line_sigma;
    let reach = 4.0 * sigma;
    let base_col = 0.5 * w as f64;
    let pts = centerline(s, params);
    let weight_per_point = |seg_len: f64| {
        seg_len / SAMPLES_PER_SEGMENT as f64 / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
    };
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (k, &(px, py)) in pts.iter().enumerate().skip(1) {
        let seg = (k - 1) / SAMPLES_PER_SEGMENT;
        let wgt = weight_per_point(params.segment_length * (1.0 + s.ext[seg]));
        let col = base_col + px;
        let row = params.base_row + py;
        if col + reach < 0.0
            || col - reach > w as f64
            || row + reach < 0.0
            || row - reach > h as f64
        {
            continue;
        }
        let c_lo = (col - reach - 1.0).floor().max(0.0) as usize;
        let c_hi = ((col + reach + 1.0).ceil().max(0.0) as usize).min(w - 1);
        let r_lo = (row - reach - 1.0).floor().max(0.0) as usize;
        let r_hi = ((row + reach + 1.0).ceil().max(0.0) as usize).min(h - 1);
        for r in r_lo..=r_hi {
            let dy = (r as f64 + 0.5 - params.base_row) - py;
            if dy.abs() > reach {
                continue;
            }
            for c in c_lo..=c_hi {
                // Offsets relative to the base keep left-right mirror images exact.
                let dx = (c as f64 + 0.5 - base_col) - px;
                if dx.abs() <= reach {
                    acc[r * w + c] += wgt * (-(dx * dx + dy * dy) * inv2s2).exp();
                }
            }
        }
    }
    for v in acc.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Observation {
        height: h,
        width: w,
        pixels: acc,
    }
}

//! Multi-scale inverse-compositional registration of consecutive frames
//! under a similarity warp (translation, roll, uniform scale).
//!
//! Saturated (sprite-colored) pixels are masked out so object motion does not
//! pollute the camera estimate, mirroring how dynamic trajectories would be
//! segmented away by a full SfM pipeline.

use super::{Affine2, SynthError};

const SATURATION_MASK: f64 = 0.10;
const MAX_ITERS: usize = 60;
const STEP_TOL: f64 = 1e-10;

pub(crate) struct FramePlane {
    pub h: usize,
    pub w: usize,
    pub lum: Vec<f64>,
    pub weight: Vec<f64>,
}

impl FramePlane {
    /// Extract luminance and a sprite mask from one `H x W x 3` frame slice.
    /// The mask is dilated one pixel so the desaturated blend ring around a
    /// sprite edge is excluded too.
    pub fn from_rgb(h: usize, w: usize, rgb: &[f64]) -> Self {
        let mut lum = vec![0.0; h * w];
        let mut saturated = vec![false; h * w];
        for i in 0..h * w {
            let (r, g, b) = (rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]);
            lum[i] = (r + g + b) / 3.0;
            saturated[i] = r.max(g).max(b) - r.min(g).min(b) > SATURATION_MASK;
        }
        let mut weight = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut masked = false;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let ny = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        let nx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        masked |= saturated[ny * w + nx];
                    }
                }
                weight[y * w + x] = if masked { 0.0 } else { 1.0 };
            }
        }
        FramePlane { h, w, lum, weight }
    }

    fn smoothed(&self) -> FramePlane {
        FramePlane {
            h: self.h,
            w: self.w,
            lum: blur3(&self.lum, self.h, self.w),
            weight: self.weight.clone(),
        }
    }

    fn downsample(&self) -> FramePlane {
        let (h2, w2) = (self.h / 2, self.w / 2);
        let mut lum = vec![0.0; h2 * w2];
        let mut weight = vec![0.0; h2 * w2];
        for y in 0..h2 {
            for x in 0..w2 {
                let mut l = 0.0;
                let mut wmin = f64::INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = (2 * y + dy) * self.w + 2 * x + dx;
                        l += self.lum[i];
                        wmin = wmin.min(self.weight[i]);
                    }
                }
                lum[y * w2 + x] = l / 4.0;
                weight[y * w2 + x] = wmin;
            }
        }
        FramePlane {
            h: h2,
            w: w2,
            lum,
            weight,
        }
    }
}

fn blur3(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; h * w];
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            tmp[y * w + x] =
                0.25 * img[y * w + xm] + 0.5 * img[y * w + x] + 0.25 * img[y * w + xp];
        }
    }
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        for x in 0..w {
            out[y * w + x] =
                0.25 * tmp[ym * w + x] + 0.5 * tmp[y * w + x] + 0.25 * tmp[yp * w + x];
        }
    }
    out
}

fn bilinear(img: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let xi = x0 as isize;
    let yi = y0 as isize;
    let clamp = |v: isize, max: usize| v.clamp(0, max as isize - 1) as usize;
    let (x0c, x1c) = (clamp(xi, w), clamp(xi + 1, w));
    let (y0c, y1c) = (clamp(yi, h), clamp(yi + 1, h));
    let v00 = img[y0c * w + x0c];
    let v01 = img[y0c * w + x1c];
    let v10 = img[y1c * w + x0c];
    let v11 = img[y1c * w + x1c];
    let top = v00 + fx * (v01 - v00);
    let bottom = v10 + fx * (v11 - v10);
    top + fy * (bottom - top)
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let mut pivot = col;
        for row in col + 1..4 {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut acc = b[row];
        for k in row + 1..4 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Similarity warp from parameters `(dx, dy, roll, log-scale)` about `c`.
fn similarity(params: [f64; 4], c: (f64, f64)) -> Affine2 {
    let (dx, dy, phi, sigma) = (params[0], params[1], params[2], params[3]);
    let s = sigma.exp();
    let (sin, cos) = phi.sin_cos();
    let m = [[s * cos, -s * sin], [s * sin, s * cos]];
    let b = [
        c.0 - m[0][0] * c.0 - m[0][1] * c.1 + dx,
        c.1 - m[1][0] * c.0 - m[1][1] * c.1 + dy,
    ];
    Affine2 { m, b }
}

/// Estimate the warp `W` such that `moving(W(p)) ≈ template(p)`, by
/// inverse-compositional Gauss-Newton over a similarity warp.
fn estimate_level(
    template: &FramePlane,
    moving: &FramePlane,
    init: Affine2,
) -> Result<Affine2, SynthError> {
    let (h, w) = (template.h, template.w);
    let c = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    // Template gradients by central differences.
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            gx[y * w + x] = (template.lum[y * w + xp] - template.lum[y * w + xm])
                / (xp - xm).max(1) as f64;
            gy[y * w + x] = (template.lum[yp * w + x] - template.lum[ym * w + x])
                / (yp - ym).max(1) as f64;
        }
    }
    let energy: f64 = (0..h * w)
        .map(|i| template.weight[i] * (gx[i] * gx[i] + gy[i] * gy[i]))
        .sum();
    if energy < 1e-9 {
        return Err(SynthError::EstimationFailed(
            "template has no usable gradient texture".into(),
        ));
    }

    let mut warp = init;
    for _ in 0..MAX_ITERS {
        let mut hess = [[0.0f64; 4]; 4];
        let mut rhs = [0.0f64; 4];
        let mut used = 0usize;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let wt = template.weight[i];
                if wt == 0.0 {
                    continue;
                }
                let (qx, qy) = warp.apply(x as f64, y as f64);
                if qx < 0.0 || qy < 0.0 || qx > (w - 1) as f64 || qy > (h - 1) as f64 {
                    continue;
                }
                if bilinear(&moving.weight, h, w, qx, qy) < 0.5 {
                    continue;
                }
                let e = bilinear(&moving.lum, h, w, qx, qy) - template.lum[i];
                let px = x as f64 - c.0;
                let py = y as f64 - c.1;
                let sd = [
                    gx[i],
                    gy[i],
                    -gx[i] * py + gy[i] * px,
                    gx[i] * px + gy[i] * py,
                ];
                for a in 0..4 {
                    rhs[a] += wt * sd[a] * e;
                    for b in 0..4 {
                        hess[a][b] += wt * sd[a] * sd[b];
                    }
                }
                used += 1;
            }
        }
        if used < 16 {
            return Err(SynthError::EstimationFailed(
                "too few valid pixels for registration".into(),
            ));
        }
        let delta = solve4(hess, rhs).ok_or_else(|| {
            SynthError::EstimationFailed("singular normal equations".into())
        })?;
        let step = similarity(delta, c);
        let inv = step.inverse().ok_or_else(|| {
            SynthError::EstimationFailed("non-invertible update".into())
        })?;
        warp = warp.compose(&inv);
        let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < STEP_TOL {
            break;
        }
    }
    Ok(warp)
}

/// Map a warp expressed in coarse-level coordinates to the next finer level.
fn upscale(warp: &Affine2) -> Affine2 {
    // Fine coords p relate to coarse by p = 2 q + 0.5.
    let to_coarse = Affine2 {
        m: [[0.5, 0.0], [0.0, 0.5]],
        b: [-0.25, -0.25],
    };
    let to_fine = Affine2 {
        m: [[2.0, 0.0], [0.0, 2.0]],
        b: [0.5, 0.5],
    };
    to_fine.compose(warp).compose(&to_coarse)
}

/// Estimate warps between consecutive frames: `result[l]` maps frame `l+1`
/// pixel coordinates into frame `l`, i.e. `frame_{l+1}(p) = frame_l(W(p))`.
pub(crate) fn consecutive_warps(
    frames: &[FramePlane],
    pyramid_levels: usize,
) -> Result<Vec<Affine2>, SynthError> {
    let mut warps = Vec::with_capacity(frames.len().saturating_sub(1));
    for pair in frames.windows(2) {
        // Build pyramids (smoothed at each level).
        let mut tmpl_levels = vec![pair[1].smoothed()];
        let mut mov_levels = vec![pair[0].smoothed()];
        for _ in 1..pyramid_levels {
            let t = tmpl_levels.last().unwrap().downsample().smoothed();
            let m = mov_levels.last().unwrap().downsample().smoothed();
            if t.h < 8 || t.w < 8 {
                break;
            }
            tmpl_levels.push(t);
            mov_levels.push(m);
        }
        let mut warp = Affine2::identity();
        for li in (0..tmpl_levels.len()).rev() {
            warp = estimate_level(&tmpl_levels[li], &mov_levels[li], warp)?;
            if li > 0 {
                warp = upscale(&warp);
            }
        }
        warps.push(warp);
    }
    Ok(warps)
}

//! Built-in dense flow estimator: coarse-to-fine Lucas-Kanade with a
//! small window and Tikhonov-regularized 2x2 solves. Deterministic, no
//! external dependencies; accuracy targets are modest (integer-scale
//! shifts on textured faces).

use crate::error::{Error, Result};
use crate::tensor::{rgb_to_gray, Tensor};
use crate::TrainScalar;

use super::FlowField;

const LEVELS: usize = 3;
const MIN_SIDE: usize = 12;
const ITERATIONS: usize = 3;
/// Half-width of the aggregation window (7x7).
const WIN: i64 = 3;
const RIDGE: f64 = 1e-3;

/// Dense displacement field mapping `prev` onto `next`. Accepts RGB
/// `[3,h,w]` or grayscale `[1,h,w]` frames of equal shape.
pub fn estimate_flow(prev: &Tensor<TrainScalar>, next: &Tensor<TrainScalar>) -> Result<FlowField> {
    if prev.shape() != next.shape() {
        return Err(Error::shape(format!(
            "frame shapes differ: {:?} vs {:?}",
            prev.shape(),
            next.shape()
        )));
    }
    let a = to_gray64(prev)?;
    let b = to_gray64(next)?;

    // Gaussian-free pyramid: 2x2 box downsampling.
    let mut pyr_a = vec![a];
    let mut pyr_b = vec![b];
    for _ in 1..LEVELS {
        let last = &pyr_a[pyr_a.len() - 1];
        if last.h / 2 < MIN_SIDE || last.w / 2 < MIN_SIDE {
            break;
        }
        let da = downsample(&pyr_a[pyr_a.len() - 1]);
        let db = downsample(&pyr_b[pyr_b.len() - 1]);
        pyr_a.push(da);
        pyr_b.push(db);
    }

    let coarsest = pyr_a.len() - 1;
    let mut u = vec![0.0f64; pyr_a[coarsest].h * pyr_a[coarsest].w];
    let mut v = vec![0.0f64; pyr_a[coarsest].h * pyr_a[coarsest].w];
    for level in (0..pyr_a.len()).rev() {
        let ga = &pyr_a[level];
        let gb = &pyr_b[level];
        if level != coarsest {
            let (nu, nv) = upsample_flow(&u, &v, pyr_a[level + 1].h, pyr_a[level + 1].w, ga.h, ga.w);
            u = nu;
            v = nv;
        }
        for _ in 0..ITERATIONS {
            refine(ga, gb, &mut u, &mut v);
        }
    }

    let (h, w) = (pyr_a[0].h, pyr_a[0].w);
    let dx = Tensor::from_vec(
        vec![1, h, w],
        u.iter().map(|&x| x as TrainScalar).collect(),
    )?;
    let dy = Tensor::from_vec(
        vec![1, h, w],
        v.iter().map(|&x| x as TrainScalar).collect(),
    )?;
    FlowField::new(dx, dy)
}

struct Gray {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Gray {
    #[inline]
    fn at(&self, y: i64, x: i64) -> f64 {
        let y = y.clamp(0, self.h as i64 - 1) as usize;
        let x = x.clamp(0, self.w as i64 - 1) as usize;
        self.data[y * self.w + x]
    }

    fn sample(&self, y: f64, x: f64) -> f64 {
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y0 = y.floor() as i64;
        let x0 = x.floor() as i64;
        let fy = y - y0 as f64;
        let fx = x - x0 as f64;
        let v00 = self.at(y0, x0);
        let v01 = self.at(y0, x0 + 1);
        let v10 = self.at(y0 + 1, x0);
        let v11 = self.at(y0 + 1, x0 + 1);
        v00 * (1.0 - fy) * (1.0 - fx)
            + v01 * (1.0 - fy) * fx
            + v10 * fy * (1.0 - fx)
            + v11 * fy * fx
    }
}

fn to_gray64(frame: &Tensor<TrainScalar>) -> Result<Gray> {
    let gray = match frame.shape() {
        [3, _, _] => rgb_to_gray(frame),
        [1, _, _] => frame.clone(),
        other => {
            return Err(Error::shape(format!(
                "expected [3,h,w] or [1,h,w] frame, got {:?}",
                other
            )))
        }
    };
    let (h, w) = (gray.shape()[1], gray.shape()[2]);
    Ok(Gray {
        h,
        w,
        data: gray.data().iter().map(|&v| v as f64).collect(),
    })
}

fn downsample(g: &Gray) -> Gray {
    let (h, w) = (g.h / 2, g.w / 2);
    let mut data = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = 0.25
                * (g.data[2 * y * g.w + 2 * x]
                    + g.data[2 * y * g.w + 2 * x + 1]
                    + g.data[(2 * y + 1) * g.w + 2 * x]
                    + g.data[(2 * y + 1) * g.w + 2 * x + 1]);
        }
    }
    Gray { h, w, data }
}

/// Resizes a flow field to a finer grid and doubles the displacements.
fn upsample_flow(
    u: &[f64],
    v: &[f64],
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
) -> (Vec<f64>, Vec<f64>) {
    let src_u = Gray {
        h: src_h,
        w: src_w,
        data: u.to_vec(),
    };
    let src_v = Gray {
        h: src_h,
        w: src_w,
        data: v.to_vec(),
    };
    let sy = src_h as f64 / dst_h as f64;
    let sx = src_w as f64 / dst_w as f64;
    let mut nu = vec![0.0; dst_h * dst_w];
    let mut nv = vec![0.0; dst_h * dst_w];
    for y in 0..dst_h {
        let fy = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..dst_w {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            nu[y * dst_w + x] = 2.0 * src_u.sample(fy, fx);
            nv[y * dst_w + x] = 2.0 * src_v.sample(fy, fx);
        }
    }
    (nu, nv)
}

/// One Lucas-Kanade refinement sweep at a fixed pyramid level.
fn refine(a: &Gray, b: &Gray, u: &mut [f64], v: &mut [f64]) {
    let (h, w) = (a.h, a.w);
    // Warp `b` back by the current flow and take temporal differences
    // against `a`; spatial gradients come from `a`.
    let mut it = vec![0.0; h * w];
    let mut ix = vec![0.0; h * w];
    let mut iy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let warped = b.sample(y as f64 + v[i], x as f64 + u[i]);
            it[i] = warped - a.data[i];
            ix[i] = 0.5 * (a.at(y as i64, x as i64 + 1) - a.at(y as i64, x as i64 - 1));
            iy[i] = 0.5 * (a.at(y as i64 + 1, x as i64) - a.at(y as i64 - 1, x as i64));
        }
    }
    let mut du = vec![0.0; h * w];
    let mut dv = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (mut axx, mut axy, mut ayy, mut bx, mut by) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for wy in -WIN..=WIN {
                let cy = (y + wy).clamp(0, h as i64 - 1) as usize;
                for wx in -WIN..=WIN {
                    let cx = (x + wx).clamp(0, w as i64 - 1) as usize;
                    let i = cy * w + cx;
                    axx += ix[i] * ix[i];
                    axy += ix[i] * iy[i];
                    ayy += iy[i] * iy[i];
                    bx -= ix[i] * it[i];
                    by -= iy[i] * it[i];
                }
            }
            axx += RIDGE;
            ayy += RIDGE;
            let det = axx * ayy - axy * axy;
            let i = (y as usize) * w + x as usize;
            if det.abs() > 1e-12 {
                du[i] = (ayy * bx - axy * by) / det;
                dv[i] = (axx * by - axy * bx) / det;
            }
        }
    }
    for i in 0..u.len() {
        // Damp the step to keep the fixed-point iteration stable.
        u[i] += du[i].clamp(-2.0, 2.0);
        v[i] += dv[i].clamp(-2.0, 2.0);
    }
}

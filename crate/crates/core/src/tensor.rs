//! Dense row-major tensors and the handful of image operations the pipeline
//! needs (channel-first layout: `[c][h][w]`).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A dense tensor with explicit shape, row-major, innermost dimension last.
///
/// Images are stored channel-first as `[c, h, w]`; flattened feature vectors
/// as `[d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "tensor of shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterprets the buffer under a new shape of identical element count.
    pub fn reshaped(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {} elements into {:?}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> T {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    #[inline]
    pub fn at3_mut(&mut self, c: usize, y: usize, x: usize) -> &mut T {
        let (h, w) = (self.shape[1], self.shape[2]);
        &mut self.data[(c * h + y) * w + x]
    }

    /// Channel plane `c` as a contiguous slice (`[c, h, w]` tensors).
    pub fn plane(&self, c: usize) -> &[T] {
        let hw = self.shape[1] * self.shape[2];
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape, "comparing tensors of equal shape");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }
}

impl<T: Scalar> Tensor<T> {
    /// Bilinear sample at fractional coordinates, clamped to the border.
    /// `c` indexes the channel of a `[c, h, w]` tensor.
    pub fn sample_bilinear(&self, c: usize, y: f64, x: f64) -> T {
        let (h, w) = (self.shape[1] as isize, self.shape[2] as isize);
        let clampf = |v: f64, hi: isize| v.max(0.0).min((hi - 1) as f64);
        let y = clampf(y, h);
        let x = clampf(x, w);
        let y0 = y.floor() as isize;
        let x0 = x.floor() as isize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let fy = T::from_f64_lossy(y - y0 as f64);
        let fx = T::from_f64_lossy(x - x0 as f64);
        let one = T::one();
        let v00 = self.at3(c, y0 as usize, x0 as usize);
        let v01 = self.at3(c, y0 as usize, x1 as usize);
        let v10 = self.at3(c, y1 as usize, x0 as usize);
        let v11 = self.at3(c, y1 as usize, x1 as usize);
        let top = v00 * (one - fx) + v01 * fx;
        let bot = v10 * (one - fx) + v11 * fx;
        top * (one - fy) + bot * fy
    }
}

/// A face bounding box in pixel coordinates (x, y = top-left corner).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FaceBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl FaceBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        FaceBox { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Shifts the box by (dx, dy), clamping so it stays inside an
    /// `img_w` x `img_h` image.
    pub fn shifted_clamped(&self, dx: i32, dy: i32, img_w: u32, img_h: u32) -> FaceBox {
        let clamp = |v: i64, max: i64| v.max(0).min(max) as u32;
        let max_x = img_w.saturating_sub(self.w) as i64;
        let max_y = img_h.saturating_sub(self.h) as i64;
        FaceBox {
            x: clamp(self.x as i64 + dx as i64, max_x),
            y: clamp(self.y as i64 + dy as i64, max_y),
            w: self.w,
            h: self.h,
        }
    }
}

/// Crops `src` (`[c, h, w]`) to `bx` and bilinearly resizes the crop to
/// `side` x `side`.
pub fn crop_resize<T: Scalar>(src: &Tensor<T>, bx: FaceBox, side: usize) -> Result<Tensor<T>> {
    if bx.w == 0 || bx.h == 0 {
        return Err(Error::invalid("face box has zero area"));
    }
    let channels = src.shape()[0];
    let (img_h, img_w) = (src.shape()[1], src.shape()[2]);
    if bx.x as usize + bx.w as usize > img_w || bx.y as usize + bx.h as usize > img_h {
        return Err(Error::invalid(format!(
            "face box {:?} exceeds {}x{} image bounds",
            bx, img_w, img_h
        )));
    }
    let mut out = Tensor::zeros(&[channels, side, side]);
    let sy = bx.h as f64 / side as f64;
    let sx = bx.w as f64 / side as f64;
    for c in 0..channels {
        for oy in 0..side {
            let src_y = bx.y as f64 + (oy as f64 + 0.5) * sy - 0.5;
            for ox in 0..side {
                let src_x = bx.x as f64 + (ox as f64 + 0.5) * sx - 0.5;
                *out.at3_mut(c, oy, ox) = src.sample_bilinear(c, src_y, src_x);
            }
        }
    }
    Ok(out)
}

/// Converts an RGB `[3, h, w]` tensor to a single-channel luma `[1, h, w]`.
pub fn rgb_to_gray<T: Scalar>(rgb: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
    let (wr, wg, wb) = (
        T::from_f64_lossy(0.299),
        T::from_f64_lossy(0.587),
        T::from_f64_lossy(0.114),
    );
    let mut out = Tensor::zeros(&[1, h, w]);
    for y in 0..h {
        for x in 0..w {
            *out.at3_mut(0, y, x) =
                rgb.at3(0, y, x) * wr + rgb.at3(1, y, x) * wg + rgb.at3(2, y, x) * wb;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::from_vec(&[2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        let r = t.clone().reshaped(&[6]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.clone().reshaped(&[4]).is_err());
    }

    #[test]
    fn crop_resize_identity() {
        // Cropping the full image to the same side is the identity.
        let t = Tensor::from_vec(&[1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let r = crop_resize(&t, FaceBox::new(0, 0, 2, 2), 2).unwrap();
        assert_eq!(r.data(), t.data());
    }

    #[test]
    fn crop_resize_rejects_degenerate_box() {
        let t = Tensor::<f32>::zeros(&[1, 4, 4]);
        assert!(crop_resize(&t, FaceBox::new(0, 0, 0, 3), 2).is_err());
    }

    #[test]
    fn box_shift_clamps_to_bounds() {
        let b = FaceBox::new(1, 1, 4, 4);
        let s = b.shifted_clamped(-5, 10, 8, 8);
        assert_eq!((s.x, s.y), (0, 4));
        assert_eq!((s.w, s.h), (4, 4));
    }
}

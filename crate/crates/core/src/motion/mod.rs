//! Optical flow fields, the 3-channel flow embedding, and assembly of
//! the per-FusionMode network input bundles.

mod lk;

pub use lk::estimate_flow;

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{FusionMode, NetInput};
use crate::tensor::{crop_resize, FaceBox, Tensor};
use crate::TrainScalar;

/// Threshold below which a frame's motion counts as zero.
pub const MOTION_EPSILON: f32 = 1e-6;

/// Dense per-pixel displacement between two consecutive frames. Both
/// components are `[1, h, w]` and finite.
#[derive(Debug, Clone)]
pub struct FlowField {
    dx: Tensor<TrainScalar>,
    dy: Tensor<TrainScalar>,
}

impl FlowField {
    pub fn new(dx: Tensor<TrainScalar>, dy: Tensor<TrainScalar>) -> Result<Self> {
        if dx.shape() != dy.shape() {
            return Err(Error::shape(format!(
                "flow components differ: {:?} vs {:?}",
                dx.shape(),
                dy.shape()
            )));
        }
        if dx.shape().len() != 3 || dx.shape()[0] != 1 {
            return Err(Error::shape(format!(
                "flow component must be [1,h,w], got {:?}",
                dx.shape()
            )));
        }
        if dx.data().iter().chain(dy.data().iter()).any(|v| !v.is_finite()) {
            return Err(Error::data("flow field contains non-finite values"));
        }
        Ok(FlowField { dx, dy })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        FlowField {
            dx: Tensor::zeros([1, h, w]),
            dy: Tensor::zeros([1, h, w]),
        }
    }

    pub fn dx(&self) -> &Tensor<TrainScalar> {
        &self.dx
    }

    pub fn dy(&self) -> &Tensor<TrainScalar> {
        &self.dy
    }

    pub fn height(&self) -> usize {
        self.dx.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.dx.shape()[2]
    }

    /// Uniformly scaled copy (used by the embedding's invariance tests).
    pub fn scaled(&self, c: TrainScalar) -> Self {
        let map = |t: &Tensor<TrainScalar>| {
            Tensor::from_vec(
                t.shape().to_vec(),
                t.data().iter().map(|&v| v * c).collect(),
            )
            .expect("same element count")
        };
        FlowField {
            dx: map(&self.dx),
            dy: map(&self.dy),
        }
    }
}

/// 3-channel flow rendering in `[0,1]`: normalized x motion, normalized
/// y motion, normalized magnitude. Zero motion maps to (0.5, 0.5, 0).
#[derive(Debug, Clone)]
pub struct FlowImage {
    image: Tensor<TrainScalar>,
}

impl FlowImage {
    /// The all-(0.5, 0.5, 0) image produced for motionless frames.
    pub fn zero_motion(side: usize) -> Self {
        let mut image = Tensor::zeros([3, side, side]);
        for i in 0..2 * side * side {
            image.data_mut()[i] = 0.5;
        }
        FlowImage { image }
    }

    pub fn tensor(&self) -> &Tensor<TrainScalar> {
        &self.image
    }

    pub fn into_tensor(self) -> Tensor<TrainScalar> {
        self.image
    }

    pub fn side(&self) -> usize {
        self.image.shape()[1]
    }
}

/// Renders a flow field over `face_box` as a [`FlowImage`] of side
/// `out_side`.
///
/// The scale `s` is the maximum flow magnitude inside the box. Below
/// [`MOTION_EPSILON`] the zero-motion image is returned; otherwise
/// channel 1 = (dx/s + 1)/2, channel 2 = (dy/s + 1)/2, channel 3 =
/// magnitude/s, cropped to the box and resized bilinearly. The
/// embedding is exactly invariant to positive uniform scaling of the
/// field because `s` rescales with it.
pub fn embed_flow(flow: &FlowField, face_box: FaceBox, out_side: usize) -> Result<FlowImage> {
    let (h, w) = (flow.height(), flow.width());
    if face_box.w == 0 || face_box.h == 0 {
        return Err(Error::invalid("face box has zero area"));
    }
    if out_side == 0 {
        return Err(Error::invalid("output side must be positive"));
    }
    let (x1, y1) = (
        face_box.x as usize + face_box.w as usize,
        face_box.y as usize + face_box.h as usize,
    );
    if x1 > w || y1 > h {
        return Err(Error::invalid(format!(
            "face box {:?} exceeds {}x{} flow field",
            face_box, w, h
        )));
    }

    let dx = flow.dx.data();
    let dy = flow.dy.data();
    let mut s = 0.0f32;
    for y in face_box.y as usize..y1 {
        for x in face_box.x as usize..x1 {
            let i = y * w + x;
            s = s.max((dx[i] * dx[i] + dy[i] * dy[i]).sqrt());
        }
    }
    if s < MOTION_EPSILON {
        return Ok(FlowImage::zero_motion(out_side));
    }

    // Full-frame embedding, clamped so pixels outside the box (which can
    // exceed the in-box maximum) cannot push interpolated values past 1.
    let mut full = Tensor::zeros([3, h, w]);
    let n = h * w;
    for i in 0..n {
        let mag = (dx[i] * dx[i] + dy[i] * dy[i]).sqrt();
        full.data_mut()[i] = ((dx[i] / s + 1.0) / 2.0).clamp(0.0, 1.0);
        full.data_mut()[n + i] = ((dy[i] / s + 1.0) / 2.0).clamp(0.0, 1.0);
        full.data_mut()[2 * n + i] = (mag / s).clamp(0.0, 1.0);
    }
    Ok(FlowImage {
        image: crop_resize(&full, face_box, out_side)?,
    })
}

/// The parts feeding one detector input, checked against the mode:
/// RGB_ONLY carries no flow, OF_ONLY no rgb, every other mode both.
#[derive(Debug, Clone)]
pub struct InputBundle {
    mode: FusionMode,
    rgb: Option<Tensor<TrainScalar>>,
    flow: Option<FlowImage>,
}

impl InputBundle {
    pub fn new(
        mode: FusionMode,
        rgb: Option<Tensor<TrainScalar>>,
        flow: Option<FlowImage>,
    ) -> Result<Self> {
        if mode.uses_rgb() != rgb.is_some() {
            return Err(Error::invalid(format!(
                "mode {} {} an rgb crop",
                mode.as_str(),
                if mode.uses_rgb() { "requires" } else { "does not take" }
            )));
        }
        if mode.uses_flow() != flow.is_some() {
            return Err(Error::invalid(format!(
                "mode {} {} a flow image",
                mode.as_str(),
                if mode.uses_flow() { "requires" } else { "does not take" }
            )));
        }
        if let Some(rgb) = &rgb {
            match rgb.shape() {
                [3, h, w] if h == w => {}
                other => {
                    return Err(Error::shape(format!(
                        "rgb crop must be square [3,s,s], got {:?}",
                        other
                    )))
                }
            }
        }
        if let (Some(rgb), Some(flow)) = (&rgb, &flow) {
            if rgb.shape()[1] != flow.side() {
                return Err(Error::shape(format!(
                    "rgb side {} does not match flow side {}",
                    rgb.shape()[1],
                    flow.side()
                )));
            }
        }
        Ok(InputBundle { mode, rgb, flow })
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    /// Assembles the network input: CHANNELS stacks rgb then flow into 6
    /// channels, HORIZONTAL abuts them left/right (rgb left) into
    /// `[3, s, 2s]`, the PI modes pass both arrays to the two trunks.
    pub fn assemble(self) -> NetInput<TrainScalar> {
        match self.mode {
            FusionMode::RgbOnly => NetInput::Single(self.rgb.expect("checked at build")),
            FusionMode::OfOnly => {
                NetInput::Single(self.flow.expect("checked at build").into_tensor())
            }
            FusionMode::Channels => {
                let rgb = self.rgb.expect("checked at build");
                let flow = self.flow.expect("checked at build").into_tensor();
                let s = rgb.shape()[1];
                let mut out = Tensor::zeros([6, s, s]);
                out.data_mut()[..3 * s * s].copy_from_slice(rgb.data());
                out.data_mut()[3 * s * s..].copy_from_slice(flow.data());
                NetInput::Single(out)
            }
            FusionMode::Horizontal => {
                let rgb = self.rgb.expect("checked at build");
                let flow = self.flow.expect("checked at build").into_tensor();
                let s = rgb.shape()[1];
                let mut out = Tensor::zeros([3, s, 2 * s]);
                for c in 0..3 {
                    for y in 0..s {
                        let row = (c * s + y) * 2 * s;
                        let src = (c * s + y) * s;
                        out.data_mut()[row..row + s].copy_from_slice(&rgb.data()[src..src + s]);
                        out.data_mut()[row + s..row + 2 * s]
                            .copy_from_slice(&flow.data()[src..src + s]);
                    }
                }
                NetInput::Single(out)
            }
            FusionMode::PiConv | FusionMode::PiFc6 | FusionMode::PiFc7 => NetInput::Pair {
                rgb: self.rgb.expect("checked at build"),
                flow: self.flow.expect("checked at build").into_tensor(),
            },
        }
    }
}

/// One-shot bundle construction; see [`InputBundle`].
pub fn build_bundle(
    rgb_crop: Option<Tensor<TrainScalar>>,
    flow_image: Option<FlowImage>,
    mode: FusionMode,
) -> Result<NetInput<TrainScalar>> {
    Ok(InputBundle::new(mode, rgb_crop, flow_image)?.assemble())
}

/// Flow for every frame of a video: frame t pairs (t-1, t), frame 0
/// gets the zero field.
pub fn first_frame_policy(frames: &[Tensor<TrainScalar>]) -> Result<Vec<FlowField>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("video must have at least one frame"))?;
    let (h, w) = match first.shape() {
        [_, h, w] => (*h, *w),
        other => {
            return Err(Error::shape(format!(
                "expected [c,h,w] frames, got {:?}",
                other
            )))
        }
    };
    let mut fields = Vec::with_capacity(frames.len());
    fields.push(FlowField::zeros(h, w));
    for pair in frames.windows(2) {
        fields.push(estimate_flow(&pair[0], &pair[1])?);
    }
    Ok(fields)
}

/// Writes a flow image to disk as an 8-bit RGB PNG (quantized; the
/// in-memory pipeline keeps float embeddings).
pub fn save_flow_image(path: &Path, flow: &FlowImage) -> Result<()> {
    let side = flow.side() as u32;
    let n = (side * side) as usize;
    let data = flow.image.data();
    let mut buf = vec![0u8; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            buf[3 * i + c] = (data[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let img = image::RgbImage::from_raw(side, side, buf).expect("buffer sized to image");
    img.save(path)
        .map_err(|e| Error::data(format!("writing {}: {}", path.display(), e)))
}

/// Reads a flow image previously written by [`save_flow_image`].
pub fn load_flow_image(path: &Path) -> Result<FlowImage> {
    let img = image::open(path)
        .map_err(|e| Error::data(format!("reading {}: {}", path.display(), e)))?
        .to_rgb8();
    if img.width() != img.height() {
        return Err(Error::data(format!(
            "flow image {} is not square ({}x{})",
            path.display(),
            img.width(),
            img.height()
        )));
    }
    let side = img.width() as usize;
    let n = side * side;
    let mut image = Tensor::zeros([3, side, side]);
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            image.data_mut()[c * n + i] = px.0[c] as TrainScalar / 255.0;
        }
    }
    Ok(FlowImage { image })
}

//! Parametric cartoon-face renderer and the deterministic multi-view
//! dataset generator built on it.
//!
//! A face is a head ellipse, two brow segments, two eye dots and a
//! two-lip mouth arc, all antialiased signed-distance shapes. The four
//! synthetic action units deform this geometry: AU1 raises the inner
//! brow ends, AU2 the outer ends, AU12 curls the mouth corners upward,
//! AU24 presses the lips together. The nine views are fixed affine
//! warps (yaw shear, pitch scale) of the frontal render, laid out on a
//! 3x3 grid with V5 the identity.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::detectors::{AuCode, AuSet};
use crate::error::{Error, Result};
use crate::multiview::Viewpoint;
use crate::net::section_seed;
use crate::tensor::FaceBox;

use super::{frame_file_name, FrameRecord, Manifest};

pub const GENERATOR_VERSION: u32 = 1;

const YAW_SHEAR: f64 = 0.24;
const PITCH_SCALE: f64 = 0.18;
/// Oscillation period (frames) for motion-defined labels.
const MOTION_PERIOD: f64 = 4.0;

/// Trapezoidal activation: zero before `onset_start`, ramping to
/// `amplitude` at `apex_start`, flat through `apex_end`, back to zero
/// at `offset_end`. The frame label is amplitude > 0.5 of apex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationProfile {
    pub onset_start: usize,
    pub apex_start: usize,
    pub apex_end: usize,
    pub offset_end: usize,
    pub amplitude: f32,
}

impl ActivationProfile {
    pub fn new(
        onset_start: usize,
        apex_start: usize,
        apex_end: usize,
        offset_end: usize,
        amplitude: f32,
    ) -> Result<Self> {
        if !(onset_start <= apex_start && apex_start <= apex_end && apex_end <= offset_end) {
            return Err(Error::invalid(format!(
                "activation spans must be ordered: {} <= {} <= {} <= {}",
                onset_start, apex_start, apex_end, offset_end
            )));
        }
        if !(amplitude > 0.0) {
            return Err(Error::invalid("activation amplitude must be positive"));
        }
        Ok(ActivationProfile {
            onset_start,
            apex_start,
            apex_end,
            offset_end,
            amplitude,
        })
    }

    pub fn amplitude_at(&self, frame: usize) -> f32 {
        let t = frame as f32;
        let (on, a0, a1, off) = (
            self.onset_start as f32,
            self.apex_start as f32,
            self.apex_end as f32,
            self.offset_end as f32,
        );
        if t < on || t > off {
            0.0
        } else if t < a0 {
            self.amplitude * (t - on) / (a0 - on)
        } else if t <= a1 {
            self.amplitude
        } else {
            self.amplitude * (off - t) / (off - a1)
        }
    }

    pub fn label_at(&self, frame: usize) -> bool {
        self.amplitude_at(frame) > 0.5 * self.amplitude
    }

    fn shifted_scaled(&self, delta: usize, scale: f32) -> ActivationProfile {
        ActivationProfile {
            onset_start: self.onset_start + delta,
            apex_start: self.apex_start + delta,
            apex_end: self.apex_end + delta,
            offset_end: self.offset_end + delta,
            amplitude: self.amplitude * scale,
        }
    }
}

/// Everything the generator needs: corpus size, the activation profile
/// per animated AU, and rendering knobs.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    /// Must be 9; kept explicit so the invariant is visible.
    pub n_views: usize,
    pub frames_per_video: usize,
    pub au_set: AuSet,
    pub activations: Vec<(AuCode, ActivationProfile)>,
    /// When set, AU deformations oscillate with the activation value as
    /// their envelope: single frames look near-neutral half the time
    /// and the label is carried by motion amplitude.
    pub motion_defined: bool,
    /// Per-subject geometry and timing jitter (on for corpus realism,
    /// off when a test wants labels exactly at the base profile).
    pub subject_variation: bool,
    pub seed: u64,
    pub image_side: usize,
}

impl SyntheticSpec {
    /// A ready-to-use spec with the four AUs on staggered windows.
    pub fn example(n_subjects: usize, frames_per_video: usize, seed: u64) -> SyntheticSpec {
        let f = frames_per_video as f32;
        let at = |x: f32| (x * f).round() as usize;
        let set = AuSet::Synthetic;
        let windows = [
            (1u8, 0.05, 0.15, 0.35, 0.45),
            (2, 0.20, 0.30, 0.52, 0.62),
            (12, 0.45, 0.55, 0.78, 0.88),
            (24, 0.60, 0.70, 0.90, 0.97),
        ];
        let last = frames_per_video - 1 - max_shift(frames_per_video);
        let activations = windows
            .iter()
            .map(|&(code, on, a0, a1, off)| {
                (
                    AuCode::new(code, set).expect("synthetic code"),
                    ActivationProfile::new(
                        at(on).min(last),
                        at(a0).min(last),
                        at(a1).min(last),
                        at(off).min(last),
                        1.0,
                    )
                    .expect("ordered fractions"),
                )
            })
            .collect();
        SyntheticSpec {
            n_subjects,
            n_views: Viewpoint::COUNT,
            frames_per_video,
            au_set: set,
            activations,
            motion_defined: false,
            subject_variation: true,
            seed,
            image_side: 72,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_views != Viewpoint::COUNT {
            return Err(Error::invalid(format!(
                "generator renders exactly {} views, got {}",
                Viewpoint::COUNT,
                self.n_views
            )));
        }
        if self.au_set != AuSet::Synthetic {
            return Err(Error::invalid(
                "generator animates only the synthetic AU set",
            ));
        }
        if self.n_subjects == 0 || self.frames_per_video == 0 {
            return Err(Error::invalid("empty spec"));
        }
        if self.image_side < 32 {
            return Err(Error::invalid("image side below 32 renders no face"));
        }
        for (au, p) in &self.activations {
            if !self.au_set.contains(au.value()) {
                return Err(Error::invalid(format!("{} outside the active set", au)));
            }
            // Leave headroom for per-subject timing shifts.
            if p.offset_end + max_shift(self.frames_per_video) >= self.frames_per_video {
                return Err(Error::invalid(format!(
                    "{} profile ends at {}, beyond the {}-frame video",
                    au, p.offset_end, self.frames_per_video
                )));
            }
        }
        Ok(())
    }
}

fn max_shift(frames: usize) -> usize {
    (frames / 12).min(3)
}

/// Per-subject appearance and timing, derived deterministically from
/// the corpus seed and the subject index.
struct Subject {
    id: String,
    scale: f64,
    cy_off: f64,
    skin: [f64; 3],
    phases: [f64; 4],
    profiles: Vec<(AuCode, ActivationProfile)>,
}

fn subject_params(spec: &SyntheticSpec, index: usize) -> Subject {
    let mut rng = ChaCha8Rng::seed_from_u64(section_seed(spec.seed, index as u64));
    let vary = spec.subject_variation;
    let scale = if vary { rng.random_range(0.92..=1.05) } else { 1.0 };
    let cy_off = if vary { rng.random_range(-0.02..=0.02) } else { 0.0 };
    let tone: f64 = if vary { rng.random_range(-0.06..=0.05) } else { 0.0 };
    let skin = [0.80 + tone, 0.66 + tone, 0.56 + tone];
    let mut phases = [0.0; 4];
    for p in phases.iter_mut() {
        *p = if vary {
            rng.random_range(0.0..std::f64::consts::TAU)
        } else {
            0.0
        };
    }
    let profiles = spec
        .activations
        .iter()
        .map(|&(au, base)| {
            let delta = if vary {
                rng.random_range(0..=max_shift(spec.frames_per_video))
            } else {
                0
            };
            let amp = if vary { rng.random_range(0.85..=1.0) } else { 1.0 };
            (au, base.shifted_scaled(delta, amp))
        })
        .collect();
    Subject {
        id: format!("S{:02}", index),
        scale,
        cy_off,
        skin,
        phases,
        profiles,
    }
}

/// Effective deformation per AU at one frame: the activation value, or
/// its oscillating version in motion-defined mode.
fn deformations(spec: &SyntheticSpec, subj: &Subject, frame: usize) -> BTreeMap<u8, f64> {
    let mut map = BTreeMap::new();
    for (slot, (au, profile)) in subj.profiles.iter().enumerate() {
        let a = profile.amplitude_at(frame) as f64;
        let e = if spec.motion_defined {
            a * (std::f64::consts::TAU * frame as f64 / MOTION_PERIOD + subj.phases[slot]).sin()
        } else {
            a
        };
        map.insert(au.value(), e);
    }
    map
}

fn labels_at(set: AuSet, subj: &Subject, frame: usize) -> BTreeMap<AuCode, bool> {
    let mut map: BTreeMap<AuCode, bool> =
        set.aus().into_iter().map(|au| (au, false)).collect();
    for (au, p) in &subj.profiles {
        map.insert(*au, p.label_at(frame));
    }
    map
}

/// The yaw/pitch cell of a view on the 3x3 grid, each in {-1, 0, 1}.
fn view_cell(view: Viewpoint) -> (f64, f64) {
    let i = view.index();
    ((i % 3) as f64 - 1.0, (i / 3) as f64 - 1.0)
}

/// Forward view transform of centred coordinates.
fn view_forward(view: Viewpoint, u: f64, v: f64) -> (f64, f64) {
    let (yaw, pitch) = view_cell(view);
    let vs = v * (1.0 + PITCH_SCALE * pitch);
    (u + YAW_SHEAR * yaw * vs, vs)
}

/// Inverse view transform of centred coordinates.
fn view_inverse(view: Viewpoint, u: f64, v: f64) -> (f64, f64) {
    let (yaw, pitch) = view_cell(view);
    (u - YAW_SHEAR * yaw * v, v / (1.0 + PITCH_SCALE * pitch))
}

fn smooth_cover(signed_dist: f64) -> f64 {
    (0.5 - signed_dist / 1.5).clamp(0.0, 1.0)
}

fn dist_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

fn mix(base: [f64; 3], top: [f64; 3], alpha: f64) -> [f64; 3] {
    [
        base[0] + (top[0] - base[0]) * alpha,
        base[1] + (top[1] - base[1]) * alpha,
        base[2] + (top[2] - base[2]) * alpha,
    ]
}

/// Shades one frontal-scene point. `e` maps AU code to its current
/// deformation in [-1, 1].
fn shade(side: f64, subj: &Subject, e: &BTreeMap<u8, f64>, x: f64, y: f64) -> [f64; 3] {
    let get = |code: u8| e.get(&code).copied().unwrap_or(0.0);
    let (cx, cy) = (0.5 * side, (0.5 + subj.cy_off) * side);
    let rx = 0.28 * side * subj.scale;
    let ry = 0.34 * side * subj.scale;

    let mut color = [0.92, 0.92, 0.94];

    // Head ellipse.
    let en = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
    let head_d = (en - 1.0) * rx.min(ry);
    let head = smooth_cover(head_d);
    if head <= 0.0 {
        return color;
    }

    // Activation flush: each action tints the whole face along its own
    // colour axis in proportion to its deformation, so the activation
    // level shows up as a wide-area appearance change and not only as
    // thin moved lines.
    const FLUSH: [(u8, [f64; 3]); 4] = [
        (1, [-0.12, -0.03, 0.12]),
        (2, [0.03, 0.12, -0.09]),
        (12, [0.12, -0.06, -0.06]),
        (24, [-0.09, 0.06, 0.09]),
    ];
    let mut skin = subj.skin;
    for (code, axis) in FLUSH {
        let e_au = get(code);
        for (s, a) in skin.iter_mut().zip(axis) {
            *s += e_au * a;
        }
    }
    color = mix(color, skin, head);

    let feature = |color: [f64; 3], d: f64, thick: f64, tint: [f64; 3]| {
        mix(color, tint, smooth_cover(d - thick) * head)
    };

    // Forehead creases: flat shaded bands above the brows whose
    // strength follows the lift — inner band for AU1, outer pair for
    // AU2. They give each brow action a many-pixel appearance cue on
    // top of the thin displaced line.
    let brow_y = cy - 0.45 * ry;
    let crease_y = brow_y - 0.30 * ry;
    let crease = |color: [f64; 3], x0: f64, x1: f64, alpha: f64| -> [f64; 3] {
        if alpha > 0.0 && x >= x0 && x <= x1 && (y - crease_y).abs() < 0.10 * ry {
            mix(color, [0.45, 0.33, 0.28], alpha * head)
        } else {
            color
        }
    };
    let a1 = get(1).clamp(0.0, 1.0) * 0.8;
    let a2 = get(2).clamp(0.0, 1.0) * 0.8;
    color = crease(color, cx - 0.30 * rx, cx + 0.30 * rx, a1);
    color = crease(color, cx - 0.62 * rx, cx - 0.34 * rx, a2);
    color = crease(color, cx + 0.34 * rx, cx + 0.62 * rx, a2);

    // Cheek raise: blush disks beside the mouth that deepen with the
    // lip-corner pull.
    let a12 = get(12).clamp(0.0, 1.0);
    if a12 > 0.0 {
        let blush_y = cy + 0.18 * ry;
        for side_sign in [-1.0, 1.0] {
            let d = ((x - (cx + side_sign * 0.52 * rx)).powi(2) + (y - blush_y).powi(2)).sqrt();
            color = mix(
                color,
                [0.85, 0.35, 0.35],
                smooth_cover(d - 0.20 * ry) * 0.75 * a12 * head,
            );
        }
    }

    // Brows: AU1 lifts inner ends, AU2 outer ends.
    let lift1 = get(1) * 0.22 * ry;
    let lift2 = get(2) * 0.22 * ry;
    let brow_thick = (0.045 * ry).max(1.0);
    let brow_tint = [0.15, 0.12, 0.10];
    for side_sign in [-1.0, 1.0] {
        let inner = (cx + side_sign * 0.16 * rx, brow_y - lift1);
        let outer = (cx + side_sign * 0.52 * rx, brow_y - lift2);
        let d = dist_segment(x, y, inner.0, inner.1, outer.0, outer.1);
        color = feature(color, d, brow_thick, brow_tint);
    }

    // Eyes.
    let eye_y = cy - 0.20 * ry;
    let eye_r = (0.07 * ry).max(1.2);
    for side_sign in [-1.0, 1.0] {
        let d = ((x - (cx + side_sign * 0.33 * rx)).powi(2) + (y - eye_y).powi(2)).sqrt();
        color = feature(color, d, eye_r, [0.10, 0.10, 0.12]);
    }

    // Mouth: centreline bends up at the corners and widens with AU12;
    // the two lips close together and blanch with AU24.
    let a24 = get(24).clamp(0.0, 1.0);
    let my = cy + 0.45 * ry;
    let mw = 0.38 * rx * (1.0 + 0.30 * get(12));
    let curl = get(12) * 0.40 * ry;
    let gap = 0.09 * ry * (1.0 - 0.85 * get(24));
    let lip_thick = (0.035 * ry).max(1.0);
    let lip_tint = mix([0.55, 0.25, 0.25], [0.82, 0.64, 0.60], 0.8 * a24);
    if (x - cx).abs() < mw + 4.0 * lip_thick && (y - my).abs() < 0.30 * ry + curl.abs() {
        const N: usize = 16;
        let mut d_up = f64::MAX;
        let mut d_lo = f64::MAX;
        let mut prev: Option<(f64, f64)> = None;
        for i in 0..=N {
            let u = 2.0 * i as f64 / N as f64 - 1.0;
            let px = cx + u * mw;
            let py = my - curl * u * u;
            if let Some((qx, qy)) = prev {
                d_up = d_up.min(dist_segment(x, y + gap / 2.0, qx, qy, px, py));
                d_lo = d_lo.min(dist_segment(x, y - gap / 2.0, qx, qy, px, py));
            }
            prev = Some((px, py));
        }
        color = feature(color, d_up, lip_thick, lip_tint);
        color = feature(color, d_lo, lip_thick, lip_tint);
    }

    // Chin boss: a shaded dimple below the pressed lips.
    if a24 > 0.0 {
        let d = ((x - cx).powi(2) + (y - (my + 0.22 * ry)).powi(2)).sqrt();
        color = mix(
            color,
            [0.55, 0.42, 0.36],
            smooth_cover(d - 0.12 * ry) * 0.7 * a24 * head,
        );
    }

    color
}

fn render_frame(
    spec: &SyntheticSpec,
    subj: &Subject,
    view: Viewpoint,
    frame: usize,
) -> image::RgbImage {
    let side = spec.image_side;
    let e = deformations(spec, subj, frame);
    let c = 0.5 * side as f64;
    let mut img = image::RgbImage::new(side as u32, side as u32);
    for y in 0..side {
        for x in 0..side {
            let (u, v) = view_inverse(view, x as f64 + 0.5 - c, y as f64 + 0.5 - c);
            let col = shade(side as f64, subj, &e, u + c, v + c);
            img.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    (col[0].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (col[1].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (col[2].clamp(0.0, 1.0) * 255.0).round() as u8,
                ]),
            );
        }
    }
    img
}

/// Face box for one rendered frame: the frontal head bounds pushed
/// through the view transform, padded and clamped to the image.
fn face_box(spec: &SyntheticSpec, subj: &Subject, view: Viewpoint) -> FaceBox {
    let side = spec.image_side as f64;
    let c = 0.5 * side;
    let cy = (0.5 + subj.cy_off) * side;
    let rx = 0.28 * side * subj.scale * 1.12;
    let ry = 0.34 * side * subj.scale * 1.10;
    let corners = [
        (c - rx, cy - ry),
        (c + rx, cy - ry),
        (c - rx, cy + ry),
        (c + rx, cy + ry),
    ];
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (px, py) in corners {
        let (u, v) = view_forward(view, px - c, py - c);
        x0 = x0.min(u + c);
        x1 = x1.max(u + c);
        y0 = y0.min(v + c);
        y1 = y1.max(v + c);
    }
    let xi = x0.floor().max(0.0) as u32;
    let yi = y0.floor().max(0.0) as u32;
    let xe = (x1.ceil() as u32).min(spec.image_side as u32);
    let ye = (y1.ceil() as u32).min(spec.image_side as u32);
    FaceBox::new(xi, yi, xe - xi, ye - yi)
}

/// Renders the corpus under `root` (layout
/// `subjects/{sid}/{view}/{video}/frame_%06d.png` with a per-video
/// `labels.csv` and a root `manifest.json`) and returns the records it
/// wrote, in the same order `load_dataset` yields them.
pub fn generate_synthetic(spec: &SyntheticSpec, root: &Path) -> Result<Vec<FrameRecord>> {
    spec.validate()?;
    std::fs::create_dir_all(root)
        .map_err(|e| Error::data(format!("creating {}: {}", root.display(), e)))?;
    Manifest {
        au_set: spec.au_set.as_str().to_string(),
        aus: spec.au_set.codes().to_vec(),
        views: Viewpoint::all().map(|v| v.as_str().to_string()).collect(),
        seed: spec.seed,
        generator_version: GENERATOR_VERSION,
        image_side: spec.image_side as u32,
    }
    .write(root)?;

    let subjects: Vec<Subject> = (0..spec.n_subjects)
        .map(|i| subject_params(spec, i))
        .collect();
    let jobs: Vec<(&Subject, Viewpoint)> = subjects
        .iter()
        .flat_map(|s| Viewpoint::all().map(move |v| (s, v)))
        .collect();
    let mut records: Vec<FrameRecord> = jobs
        .par_iter()
        .map(|&(subj, view)| write_video(spec, subj, view, root))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    records.sort_by(|a, b| (&a.video_id, a.frame_index).cmp(&(&b.video_id, b.frame_index)));
    Ok(records)
}

fn write_video(
    spec: &SyntheticSpec,
    subj: &Subject,
    view: Viewpoint,
    root: &Path,
) -> Result<Vec<FrameRecord>> {
    let video_id = format!("{}_{}", subj.id, view.as_str());
    let dir = root
        .join("subjects")
        .join(&subj.id)
        .join(view.as_str())
        .join(&video_id);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::data(format!("creating {}: {}", dir.display(), e)))?;
    let bx = face_box(spec, subj, view);
    let labels_path = dir.join("labels.csv");
    let mut csv = csv::Writer::from_path(&labels_path)
        .map_err(|e| Error::data(format!("writing {}: {}", labels_path.display(), e)))?;
    let mut header = vec![
        "video_id".to_string(),
        "frame".to_string(),
        "face_x".to_string(),
        "face_y".to_string(),
        "face_w".to_string(),
        "face_h".to_string(),
    ];
    header.extend(spec.au_set.aus().iter().map(|a| a.label()));
    csv.write_record(&header)
        .map_err(|e| Error::data(format!("writing {}: {}", labels_path.display(), e)))?;

    let mut records = Vec::with_capacity(spec.frames_per_video);
    for t in 0..spec.frames_per_video {
        let img = render_frame(spec, subj, view, t);
        let path = dir.join(frame_file_name(t));
        img.save(&path)
            .map_err(|e| Error::data(format!("writing {}: {}", path.display(), e)))?;
        let labels = labels_at(spec.au_set, subj, t);
        let mut row = vec![
            video_id.clone(),
            t.to_string(),
            bx.x.to_string(),
            bx.y.to_string(),
            bx.w.to_string(),
            bx.h.to_string(),
        ];
        row.extend(
            spec.au_set
                .aus()
                .iter()
                .map(|au| if labels[au] { "1" } else { "0" }.to_string()),
        );
        csv.write_record(&row)
            .map_err(|e| Error::data(format!("writing {}: {}", labels_path.display(), e)))?;
        records.push(FrameRecord {
            subject_id: subj.id.clone(),
            video_id: video_id.clone(),
            frame_index: t,
            path,
            img_w: spec.image_side as u32,
            img_h: spec.image_side as u32,
            face_box: bx,
            labels,
            view: Some(view),
        });
    }
    csv.flush()
        .map_err(|e| Error::data(format!("writing {}: {}", labels_path.display(), e)))?;
    Ok(records)
}

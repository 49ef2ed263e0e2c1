use avatarkit_tensor::{seeded_rng, Array, Scalar};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Number of entries in [`AvatarTemplate::face_params`].
pub const FACE_PARAMS: usize = 6;

/// Largest pose jitter the renderer accepts.
pub const MAX_SHIFT_PX: f64 = 4.0;
pub const MAX_ROTATION_DEG: f64 = 5.0;

/// Parametric cartoon face.
///
/// `face_params` are unitless in `[0, 1]`:
/// skin tone, face radius, eye spacing, eye height, hair shade, mouth width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvatarTemplate {
    pub template_id: String,
    pub face_params: Vec<f64>,
    pub resolution: usize,
}

/// Small head motion applied when rendering a frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseJitter {
    pub dx: f64,
    pub dy: f64,
    pub rotation_deg: f64,
}

impl PoseJitter {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dx.abs() <= MAX_SHIFT_PX && self.dy.abs() <= MAX_SHIFT_PX) {
            return Err(invalid(format!("pose shift ({}, {}) exceeds {MAX_SHIFT_PX} px", self.dx, self.dy)));
        }
        if !(self.rotation_deg.abs() <= MAX_ROTATION_DEG) {
            return Err(invalid(format!("pose rotation {} exceeds {MAX_ROTATION_DEG} degrees", self.rotation_deg)));
        }
        Ok(())
    }
}

/// Pixel rectangle `[y0, y1) x [x0, x1)` containing the mouth of an
/// unjittered render.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

struct Geometry {
    face_rx: f64,
    face_ry: f64,
    eye_x: f64,
    eye_y: f64,
    eye_r: f64,
    mouth_y: f64,
    mouth_a: f64,
    lip_b: f64,
    open_b: f64,
}

const SKY: [f64; 3] = [0.72, 0.80, 0.88];
const LIP: [f64; 3] = [0.55, 0.18, 0.22];
const TEETH: [f64; 3] = [0.98, 0.96, 0.93];
const EYE: [f64; 3] = [0.08, 0.07, 0.10];

impl AvatarTemplate {
    pub fn new(template_id: impl Into<String>, face_params: Vec<f64>, resolution: usize) -> Result<Self> {
        let t = Self { template_id: template_id.into(), face_params, resolution };
        t.validate()?;
        Ok(t)
    }

    /// Deterministic template `index` of the built-in library.
    pub fn builtin(index: usize, resolution: usize) -> Self {
        let mut rng = seeded_rng(0x7e3a_0000 + index as u64);
        let face_params = (0..FACE_PARAMS).map(|_| rng.random_range(0.05..0.95)).collect();
        Self { template_id: format!("t{index}"), face_params, resolution }
    }

    pub fn validate(&self) -> Result<()> {
        if self.face_params.len() != FACE_PARAMS {
            return Err(invalid(format!("template {} needs {FACE_PARAMS} face params", self.template_id)));
        }
        if let Some(p) = self.face_params.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(invalid(format!("template {}: face param {p} outside [0, 1]", self.template_id)));
        }
        if !self.resolution.is_power_of_two() || !(32..=128).contains(&self.resolution) {
            return Err(invalid(format!("resolution {} must be a power of two in [32, 128]", self.resolution)));
        }
        Ok(())
    }

    pub fn with_resolution(&self, resolution: usize) -> Self {
        Self { resolution, ..self.clone() }
    }

    fn skin(&self) -> [f64; 3] {
        let t = self.face_params[0];
        [0.45 + 0.45 * t, 0.30 + 0.40 * t, 0.20 + 0.35 * t]
    }

    fn hair(&self) -> [f64; 3] {
        let h = self.face_params[4];
        [0.10 + 0.45 * h, 0.07 + 0.30 * h, 0.05 + 0.15 * h]
    }

    /// Geometry in face-local normalised units (image spans [-1, 1]).
    fn geometry(&self) -> Geometry {
        let p = &self.face_params;
        let face_r = 0.55 + 0.2 * p[1];
        Geometry {
            face_rx: face_r * 0.85,
            face_ry: face_r,
            eye_x: (0.25 + 0.15 * p[2]) * face_r,
            eye_y: -(0.15 + 0.2 * p[3]) * face_r,
            eye_r: 0.1 * face_r,
            mouth_y: 0.45 * face_r,
            mouth_a: (0.25 + 0.15 * p[5]) * face_r,
            lip_b: 0.2 * face_r,
            open_b: 0.17 * face_r,
        }
    }

    /// Bounding box of the mouth (lips plus one pixel) without jitter.
    pub fn mouth_region(&self) -> Region {
        let g = self.geometry();
        let n = self.resolution as f64;
        let to_px = |u: f64| (u + 1.0) * n / 2.0 - 0.5;
        let clamp = |v: f64| v.clamp(0.0, n) as usize;
        Region {
            y0: clamp((to_px(g.mouth_y - g.lip_b) - 1.0).floor()),
            y1: clamp((to_px(g.mouth_y + g.lip_b) + 2.0).ceil()),
            x0: clamp((to_px(-g.mouth_a) - 1.0).floor()),
            x1: clamp((to_px(g.mouth_a) + 2.0).ceil()),
        }
    }

    /// Region masked out of source frames before dubbing: the mouth box
    /// widened to cover the largest allowed pose jitter.
    pub fn lower_face_region(&self) -> Region {
        let m = self.mouth_region();
        let pad = MAX_SHIFT_PX.ceil() as usize + 1;
        let n = self.resolution;
        Region {
            y0: m.y0.saturating_sub(pad),
            y1: (m.y1 + pad).min(n),
            x0: m.x0.saturating_sub(pad),
            x1: (m.x1 + pad).min(n),
        }
    }
}

fn smooth_cover(signed: f64, px: f64) -> f64 {
    // signed > 0 inside; one-pixel linear ramp
    (signed / px + 0.5).clamp(0.0, 1.0)
}

fn mix(dst: &mut [f64; 3], color: [f64; 3], a: f64) {
    for c in 0..3 {
        dst[c] = dst[c] * (1.0 - a) + color[c] * a;
    }
}

/// Renders one `[1, 3, H, W]` frame in `[0, 1]`.
///
/// The open part of the mouth is brighter than anything it covers and its
/// coverage is a strictly increasing function of the aperture, so the summed
/// intensity of the mouth region strictly increases with `mouth_aperture`.
pub fn render_face<T: Scalar>(template: &AvatarTemplate, mouth_aperture: f64, jitter: PoseJitter) -> Result<Array<T>> {
    template.validate()?;
    if !(0.0..=1.0).contains(&mouth_aperture) {
        return Err(invalid(format!("mouth aperture {mouth_aperture} outside [0, 1]")));
    }
    jitter.validate()?;
    let n = template.resolution;
    let nf = n as f64;
    let px = 2.0 / nf;
    let g = template.geometry();
    let (skin, hair) = (template.skin(), template.hair());
    let (sin, cos) = jitter.rotation_deg.to_radians().sin_cos();
    let (tx, ty) = (jitter.dx * px, jitter.dy * px);
    let open_b = g.open_b * mouth_aperture;
    let open_a = g.mouth_a * 0.85;

    let mut out = vec![0.0; 3 * n * n];
    for iy in 0..n {
        for ix in 0..n {
            let u0 = (ix as f64 + 0.5) * px - 1.0 - tx;
            let v0 = (iy as f64 + 0.5) * px - 1.0 - ty;
            // inverse rotation into the face frame
            let u = cos * u0 + sin * v0;
            let v = -sin * u0 + cos * v0;

            let shade = 0.06 * (iy as f64 / nf);
            let mut c = [SKY[0] - shade, SKY[1] - shade, SKY[2] - shade];

            let hair_d = 1.0 - ((u / (g.face_rx * 1.12)).powi(2) + ((v + 0.12) / (g.face_ry * 1.05)).powi(2)).sqrt();
            let hair_mask = if v < 0.2 { 1.0 } else { 0.0 };
            mix(&mut c, hair, smooth_cover(hair_d * g.face_ry, px) * hair_mask);

            let face_d = 1.0 - ((u / g.face_rx).powi(2) + (v / g.face_ry).powi(2)).sqrt();
            mix(&mut c, skin, smooth_cover(face_d * g.face_ry, px));

            for side in [-1.0, 1.0] {
                let d = g.eye_r - ((u - side * g.eye_x).powi(2) + (v - g.eye_y).powi(2)).sqrt();
                mix(&mut c, EYE, smooth_cover(d, px));
            }

            let (mu, mv) = (u, v - g.mouth_y);
            let lip_d = 1.0 - ((mu / g.mouth_a).powi(2) + (mv / g.lip_b).powi(2)).sqrt();
            mix(&mut c, LIP, smooth_cover(lip_d * g.lip_b * 0.5, px));

            if open_b > 0.0 {
                let rho = ((mu / open_a).powi(2) + (mv / open_b).powi(2)).sqrt();
                // logistic edge: strictly monotone in open_b for every pixel off the centre line
                let cover = avatarkit_tensor::sigmoid((1.0 - rho) * 6.0) * mouth_aperture.min(0.05) / 0.05;
                mix(&mut c, TEETH, cover);
            }

            for (ch, &val) in c.iter().enumerate() {
                out[(ch * n + iy) * n + ix] = val.clamp(0.0, 1.0);
            }
        }
    }
    Ok(Array::from_f64(&[1, 3, n, n], &out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region_sum(frame: &Array<f64>, r: Region) -> f64 {
        let n = frame.shape()[3];
        let d = frame.data();
        let mut s = 0.0;
        for c in 0..3 {
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    s += d[(c * n + y) * n + x];
                }
            }
        }
        s
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = AvatarTemplate::builtin(0, 64);
        let a: Array<f64> = render_face(&t, 0.0, PoseJitter::zero()).unwrap();
        let b: Array<f64> = render_face(&t, 0.0, PoseJitter::zero()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[1, 3, 64, 64]);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn out_of_range_aperture_is_rejected() {
        let t = AvatarTemplate::builtin(0, 64);
        assert!(render_face::<f32>(&t, 1.2, PoseJitter::zero()).is_err());
        assert!(render_face::<f32>(&t, -0.1, PoseJitter::zero()).is_err());
        let big = PoseJitter { dx: 5.0, dy: 0.0, rotation_deg: 0.0 };
        assert!(render_face::<f32>(&t, 0.5, big).is_err());
    }

    #[test]
    fn mouth_mass_is_strictly_monotone() {
        for k in 0..6 {
            for res in [32, 64, 128] {
                let t = AvatarTemplate::builtin(k, res);
                let r = t.mouth_region();
                let sums: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
                    .iter()
                    .map(|&a| region_sum(&render_face(&t, a, PoseJitter::zero()).unwrap(), r))
                    .collect();
                for w in sums.windows(2) {
                    assert!(w[1] > w[0], "template {k} @ {res}: {sums:?}");
                }
            }
        }
    }

    #[test]
    fn template_validation() {
        assert!(AvatarTemplate::new("x", vec![0.5; 6], 48).is_err());
        assert!(AvatarTemplate::new("x", vec![0.5; 6], 256).is_err());
        assert!(AvatarTemplate::new("x", vec![1.5, 0.5, 0.5, 0.5, 0.5, 0.5], 64).is_err());
        assert!(AvatarTemplate::new("x", vec![0.5; 5], 64).is_err());
        assert!(AvatarTemplate::new("x", vec![0.5; 6], 32).is_ok());
    }
}

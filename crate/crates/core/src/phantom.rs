//! Dynamic ellipse phantom, simulated measurements and image quality metrics.
//!
//! Coordinates are in pixels: pixel `(ix, iy)` covers `[ix, ix + 1) x [iy, iy + 1)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};
use crate::grid::{norm, DataSeq, ImageSeq, SensorData};
use crate::sampling::{apply_c, SamplingSchedule};
use crate::wave::WaveOperator;

const SUPERSAMPLE: usize = 4;

const DEFAULT_PHANTOM_JSON: &str = include_str!("../data/default_phantom.json");

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipseShape {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axis along the rotated x direction.
    pub a: f64,
    pub b: f64,
    /// Counter-clockwise rotation in radians.
    pub angle: f64,
}

impl EllipseShape {
    fn lerp(&self, o: &EllipseShape, s: f64) -> EllipseShape {
        let l = |x: f64, y: f64| x + s * (y - x);
        EllipseShape {
            cx: l(self.cx, o.cx),
            cy: l(self.cy, o.cy),
            a: l(self.a, o.a),
            b: l(self.b, o.b),
            angle: l(self.angle, o.angle),
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = c * dx + s * dy;
        let w = -s * dx + c * dy;
        (u / self.a).powi(2) + (w / self.b).powi(2) <= 1.0
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.a * self.b
    }
}

/// An ellipse whose shape is interpolated between evenly spaced keyframes
/// (smoothstep easing, so the motion is C1 in time).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipseTrack {
    pub amplitude: f64,
    pub keyframes: Vec<EllipseShape>,
}

impl EllipseTrack {
    pub fn shape_at(&self, t: usize, frames: usize) -> EllipseShape {
        let k = self.keyframes.len();
        if k == 1 || frames <= 1 {
            return self.keyframes[0];
        }
        let s = t as f64 / (frames - 1) as f64 * (k - 1) as f64;
        let i = (s.floor() as usize).min(k - 2);
        let f = s - i as f64;
        self.keyframes[i].lerp(&self.keyframes[i + 1], f * f * (3.0 - 2.0 * f))
    }

    fn validate(&self, nx: usize, ny: usize, frames: usize) -> Result<()> {
        ensure_arg!(!self.keyframes.is_empty(), "ellipse track without keyframes");
        ensure_arg!(
            self.amplitude.is_finite() && self.amplitude >= 0.0,
            "track amplitude must be finite and nonnegative"
        );
        for t in 0..frames {
            let e = self.shape_at(t, frames);
            ensure_arg!(
                [e.cx, e.cy, e.a, e.b, e.angle].iter().all(|x| x.is_finite()) && e.a > 0.0 && e.b > 0.0,
                "degenerate ellipse in frame {t}"
            );
            let r = e.a.max(e.b);
            ensure_arg!(
                e.cx - r >= 0.0 && e.cx + r <= nx as f64 && e.cy - r >= 0.0 && e.cy + r <= ny as f64,
                "ellipse at ({:.1}, {:.1}) with radius {:.1} leaves the {}x{} domain in frame {}",
                e.cx,
                e.cy,
                r,
                nx,
                ny,
                t
            );
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub frames: usize,
    pub tracks: Vec<EllipseTrack>,
}

impl PhantomConfig {
    /// Three tubes drifting, turning and swelling over 25 frames on the
    /// 100 x 100 grid.
    pub fn default_tracks() -> Self {
        serde_json::from_str(DEFAULT_PHANTOM_JSON).expect("bundled phantom configuration is valid")
    }
}

/// Rasterizes the tracks: amplitudes add where ellipses overlap, then values
/// are clipped to `[0, 1]`. Each pixel averages a 4 x 4 grid of sub-samples.
pub fn make_dynamic_phantom(nx: usize, ny: usize, tracks: &[EllipseTrack], frames: usize) -> Result<ImageSeq> {
    ensure_arg!(nx > 0 && ny > 0 && frames > 0, "phantom needs a nonempty grid and at least one frame");
    for tr in tracks {
        tr.validate(nx, ny, frames)?;
    }
    let mut p = ImageSeq::zeros(nx, ny, frames);
    let inv = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for t in 0..frames {
        let img = p.frame_mut(t);
        for tr in tracks {
            let e = tr.shape_at(t, frames);
            let r = e.a.max(e.b);
            let x0 = (e.cx - r).floor().max(0.0) as usize;
            let x1 = ((e.cx + r).ceil() as usize).min(nx);
            let y0 = (e.cy - r).floor().max(0.0) as usize;
            let y1 = ((e.cy + r).ceil() as usize).min(ny);
            for iy in y0..y1 {
                for ix in x0..x1 {
                    let mut hits = 0;
                    for sy in 0..SUPERSAMPLE {
                        for sx in 0..SUPERSAMPLE {
                            let x = ix as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                            let y = iy as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                            if e.contains(x, y) {
                                hits += 1;
                            }
                        }
                    }
                    img[iy * nx + ix] += tr.amplitude * hits as f64 * inv;
                }
            }
        }
        img.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
    }
    Ok(p)
}

#[derive(Clone, Debug)]
pub struct Simulated {
    /// Noisy full data `A p_t + noise`.
    pub full: DataSeq,
    /// `C_t` applied to the noisy full data.
    pub sub: DataSeq,
    /// Mean over frames of `20 log10(rms(A p_t) / sigma)`; infinite for `sigma = 0`.
    pub snr_db: f64,
}

/// Simulates every frame and adds seeded white Gaussian noise.
pub fn simulate_data(
    p: &ImageSeq,
    fwd: &WaveOperator,
    sched: &SamplingSchedule,
    sigma: f64,
    seed: u64,
) -> Result<Simulated> {
    ensure_arg!(sigma.is_finite() && sigma >= 0.0, "noise level must be finite and nonnegative");
    ensure_arg!(p.n_pixels() == fwd.n_pixels(), "phantom does not match the wave grid");
    ensure_arg!(sched.n_sensors == fwd.n_sensors(), "schedule and wave operator disagree on the sensor count");
    let frames: Vec<&[f64]> = p.frames_iter().collect();
    let mut full = fwd.forward_many(&frames)?;

    let snr_db = if sigma > 0.0 {
        full.iter()
            .map(|f| 20.0 * (norm(&f.values) / (f.values.len() as f64).sqrt() / sigma).log10())
            .sum::<f64>()
            / full.len() as f64
    } else {
        f64::INFINITY
    };

    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::arg(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for f in full.iter_mut() {
            f.values.iter_mut().for_each(|x| *x += normal.sample(&mut rng));
        }
    }
    let sub: Vec<SensorData> = full
        .iter()
        .enumerate()
        .map(|(t, f)| apply_c(sched, t, f))
        .collect::<Result<_>>()?;
    Ok(Simulated {
        full: DataSeq { frames: full, sigma },
        sub: DataSeq { frames: sub, sigma },
        snr_db,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    /// `|p_t - truth_t| / |truth_t|` per frame.
    pub rel_error: Vec<f64>,
    /// `10 log10(max(truth_t)^2 / mse_t)` per frame; infinite when exact.
    pub psnr_db: Vec<f64>,
    pub mean_rel_error: f64,
    pub mean_psnr_db: f64,
}

pub fn image_metrics(p: &ImageSeq, truth: &ImageSeq) -> Result<ImageMetrics> {
    ensure_arg!(p.same_shape(truth), "reconstruction and ground truth differ in shape");
    let mut rel_error = Vec::with_capacity(p.frames);
    let mut psnr_db = Vec::with_capacity(p.frames);
    for t in 0..p.frames {
        let (a, b) = (p.frame(t), truth.frame(t));
        let err: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let scale: f64 = b.iter().map(|y| y * y).sum();
        rel_error.push(match (err == 0.0, scale == 0.0) {
            (true, _) => 0.0,
            (false, true) => f64::INFINITY,
            (false, false) => (err / scale).sqrt(),
        });
        let peak = b.iter().cloned().fold(0.0, f64::max);
        let mse = err / a.len() as f64;
        psnr_db.push(if mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (peak * peak / mse).log10()
        });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ImageMetrics {
        mean_rel_error: mean(&rel_error),
        mean_psnr_db: mean(&psnr_db),
        rel_error,
        psnr_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::sampling::make_rsp_schedule;

    fn disc(cx: f64, cy: f64, r: f64, amplitude: f64) -> EllipseTrack {
        EllipseTrack {
            amplitude,
            keyframes: vec![EllipseShape {
                cx,
                cy,
                a: r,
                b: r,
                angle: 0.0,
            }],
        }
    }

    #[test]
    fn empty_track_list_is_zero() {
        let p = make_dynamic_phantom(10, 8, &[], 3).unwrap();
        assert!(p.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn static_ellipse_gives_identical_frames() {
        let p = make_dynamic_phantom(20, 20, &[disc(10.0, 10.0, 5.0, 1.0)], 4).unwrap();
        for t in 1..4 {
            assert_eq!(p.frame(t), p.frame(0));
        }
        assert_eq!(p.frame(0)[10 * 20 + 10], 1.0);
        assert_eq!(p.frame(0)[0], 0.0);
        // partial coverage at the rim
        assert!(p.frame(0).iter().any(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn overlap_adds_then_clips() {
        let tracks = [disc(10.0, 10.0, 4.0, 0.7), disc(12.0, 10.0, 4.0, 0.6), disc(10.0, 10.0, 2.0, -0.0)];
        let p = make_dynamic_phantom(20, 20, &tracks[..2], 1).unwrap();
        assert_eq!(p.frame(0)[10 * 20 + 11], 1.0);
        assert!((p.frame(0)[10 * 20 + 7] - 0.7).abs() < 1e-12);
        assert!(make_dynamic_phantom(20, 20, &tracks, 1).is_ok());
    }

    #[test]
    fn rasterized_area_matches_ellipse_area() {
        let tr = EllipseTrack {
            amplitude: 1.0,
            keyframes: vec![EllipseShape {
                cx: 30.3,
                cy: 25.8,
                a: 12.0,
                b: 5.0,
                angle: 0.7,
            }],
        };
        let p = make_dynamic_phantom(60, 60, &[tr.clone()], 1).unwrap();
        let mass: f64 = p.values.iter().sum();
        let area = tr.keyframes[0].area();
        assert!((mass - area).abs() / area < 0.01, "{mass} vs {area}");
    }

    #[test]
    fn out_of_domain_track_is_rejected() {
        let tr = EllipseTrack {
            amplitude: 1.0,
            keyframes: vec![
                EllipseShape { cx: 10.0, cy: 10.0, a: 3.0, b: 3.0, angle: 0.0 },
                EllipseShape { cx: 18.0, cy: 10.0, a: 3.0, b: 3.0, angle: 0.0 },
            ],
        };
        assert!(matches!(make_dynamic_phantom(20, 20, &[tr], 5), Err(Error::Argument(_))));
        assert!(make_dynamic_phantom(20, 20, &[disc(5.0, 5.0, 0.0, 1.0)], 1).is_err());
    }

    #[test]
    fn keyframes_are_hit_and_interpolation_is_eased() {
        let k0 = EllipseShape { cx: 10.0, cy: 10.0, a: 2.0, b: 2.0, angle: 0.0 };
        let k1 = EllipseShape { cx: 20.0, ..k0 };
        let tr = EllipseTrack { amplitude: 1.0, keyframes: vec![k0, k1] };
        assert_eq!(tr.shape_at(0, 5), k0);
        assert_eq!(tr.shape_at(4, 5), k1);
        assert_eq!(tr.shape_at(2, 5).cx, 15.0);
        // smoothstep(1/4) = 5/32
        assert!((tr.shape_at(1, 5).cx - (10.0 + 10.0 * 5.0 / 32.0)).abs() < 1e-12);
    }

    #[test]
    fn default_phantom_is_valid_and_smooth() {
        let cfg = PhantomConfig::default_tracks();
        assert_eq!((cfg.frames, cfg.tracks.len()), (25, 3));
        let p = make_dynamic_phantom(100, 100, &cfg.tracks, cfg.frames).unwrap();
        assert!(p.values.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let areas: Vec<f64> = p.frames_iter().map(|f| f.iter().filter(|&&x| x > 0.0).count() as f64).collect();
        for w in areas.windows(2) {
            assert!((w[1] - w[0]).abs() / w[0] < 0.1, "{areas:?}");
        }
        assert!(p.frame(0) != p.frame(24));
    }

    fn small_setup() -> (WaveOperator, SamplingSchedule, ImageSeq) {
        let g = Grid2D::new(16, 16, 2e-4, 1500.0, 30, 40e-9, 0, 0.0).unwrap();
        let fwd = WaveOperator::with_boundary_sensors(g, 8).unwrap();
        let sched = make_rsp_schedule(8, 4, 1).unwrap();
        let p = make_dynamic_phantom(16, 16, &[disc(8.0, 7.0, 3.0, 0.8)], 3).unwrap();
        (fwd, sched, p)
    }

    #[test]
    fn noiseless_data_is_exact() {
        let (fwd, sched, p) = small_setup();
        let s = simulate_data(&p, &fwd, &sched, 0.0, 3).unwrap();
        assert!(s.snr_db.is_infinite());
        let batch = fwd.forward_many(&p.frames_iter().collect::<Vec<_>>()).unwrap();
        for t in 0..3 {
            assert_eq!(s.full.frames[t], batch[t]);
            assert_eq!(s.sub.frames[t], apply_c(&sched, t, &batch[t]).unwrap());
            // batched and single-frame simulation agree to rounding
            let single = fwd.forward(p.frame(t)).unwrap();
            let d: f64 = single.values.iter().zip(&batch[t].values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d <= 1e-12 * norm(&single.values));
        }
    }

    #[test]
    fn noise_is_seeded_and_has_the_requested_level() {
        let (fwd, sched, p) = small_setup();
        let a = simulate_data(&p, &fwd, &sched, 1e-2, 11).unwrap();
        let b = simulate_data(&p, &fwd, &sched, 1e-2, 11).unwrap();
        let c = simulate_data(&p, &fwd, &sched, 1e-2, 12).unwrap();
        assert_eq!(a.full, b.full);
        assert_ne!(a.full, c.full);
        let clean = simulate_data(&p, &fwd, &sched, 0.0, 0).unwrap();
        let diffs: Vec<f64> = a
            .full
            .frames
            .iter()
            .zip(&clean.full.frames)
            .flat_map(|(x, y)| x.values.iter().zip(&y.values).map(|(u, v)| u - v).collect::<Vec<_>>())
            .collect();
        let sd = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!((sd - 1e-2).abs() < 1e-3, "{sd}");
        // snr from the clean signal
        let rms0 = norm(&clean.full.frames[0].values) / (clean.full.frames[0].values.len() as f64).sqrt();
        let rms = |t: usize| norm(&clean.full.frames[t].values) / (clean.full.frames[t].values.len() as f64).sqrt();
        let want = (0..3).map(|t| 20.0 * (rms(t) / 1e-2).log10()).sum::<f64>() / 3.0;
        assert!(rms0 > 0.0);
        assert!((a.snr_db - want).abs() < 1e-12);
    }

    #[test]
    fn metrics_edge_cases() {
        let truth = ImageSeq::from_vec(2, 1, 2, vec![1.0, 0.0, 2.0, 2.0]).unwrap();
        let m = image_metrics(&truth, &truth).unwrap();
        assert_eq!(m.rel_error, vec![0.0, 0.0]);
        assert!(m.psnr_db.iter().all(|x| x.is_infinite()) && m.mean_psnr_db.is_infinite());
        let z = ImageSeq::zeros(2, 1, 2);
        assert_eq!(image_metrics(&z, &truth).unwrap().rel_error, vec![1.0, 1.0]);
    }

    #[test]
    fn metrics_match_hand_computation() {
        let truth = ImageSeq::from_vec(2, 1, 1, vec![3.0, 4.0]).unwrap();
        let p = ImageSeq::from_vec(2, 1, 1, vec![2.0, 4.5]).unwrap();
        let m = image_metrics(&p, &truth).unwrap();
        // |e|^2 = 1.25, |truth|^2 = 25, mse = 0.625, peak = 4
        assert!((m.rel_error[0] - (1.25f64 / 25.0).sqrt()).abs() < 1e-15);
        assert!((m.psnr_db[0] - 10.0 * (16.0f64 / 0.625).log10()).abs() < 1e-12);
        assert!(image_metrics(&p, &ImageSeq::zeros(1, 2, 1)).is_err());
    }
}

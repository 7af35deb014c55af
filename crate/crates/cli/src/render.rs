//! PNG rendering of image frames and motion fields.

use image::{GrayImage, Luma, Rgb, RgbImage};

/// Grayscale with the fixed window `[0, window_max]`.
pub fn render_gray(frame: &[f64], nx: usize, ny: usize, window_max: f64) -> GrayImage {
    GrayImage::from_fn(nx as u32, ny as u32, |x, y| {
        let v = frame[y as usize * nx + x as usize];
        let s = if window_max > 0.0 { (v / window_max).clamp(0.0, 1.0) } else { 0.0 };
        Luma([(s * 255.0).round() as u8])
    })
}

/// `h` in degrees, `s` and `v` in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Direction of `(dx, dy)` in degrees, in `[0, 360)`. `dy` points down the
/// image rows, matching the array layout of the field.
pub fn direction_hue(dx: f64, dy: f64) -> f64 {
    dy.atan2(dx).to_degrees().rem_euclid(360.0)
}

/// Color-coded motion field: hue is direction, saturation is magnitude after
/// rescaling the field to maximal norm 1, value is 1. A frame `border` pixels
/// wide shows, for each of its pixels, the hue of the direction from the image
/// centre to that pixel, which doubles as the legend.
pub fn render_flow(vx: &[f64], vy: &[f64], nx: usize, ny: usize, border: usize) -> RgbImage {
    let max = vx.iter().zip(vy).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
    let (w, h) = (nx + 2 * border, ny + 2 * border);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let inside = x >= border && x < nx + border && y >= border && y < ny + border;
        if inside {
            let i = (y - border) * nx + (x - border);
            let (a, b) = (vx[i], vy[i]);
            let s = if max > 0.0 { a.hypot(b) / max } else { 0.0 };
            Rgb(hsv_to_rgb(direction_hue(a, b), s, 1.0))
        } else {
            Rgb(hsv_to_rgb(direction_hue(x as f64 - cx, y as f64 - cy), 1.0, 1.0))
        }
    })
}

/// Removes the per-frame mean motion vector: `v_t - mean_i (v_t)_i`.
/// `frames` holds `[vx; vy]` per frame.
pub fn translation_correct(values: &mut [f64], n_pixels: usize) {
    for frame in values.chunks_mut(2 * n_pixels) {
        for comp in frame.chunks_mut(n_pixels) {
            let mean = comp.iter().sum::<f64>() / comp.len() as f64;
            comp.iter_mut().for_each(|v| *v -= mean);
        }
    }
}

//! Shared domain types: the computational grid, image and motion sequences,
//! sensor data, regularization parameters and energy traces.
//!
//! All sequences are stored frame-major: the values of frame `t` form one
//! contiguous slice. Within a frame, pixel `(ix, iy)` lives at `iy * nx + ix`,
//! so `x` is the fast axis. Motion frames hold the `x` component for all
//! pixels followed by the `y` component.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Result};

/// Number of spatial dimensions used by the image model.
pub const DIM: usize = 2;

/// Homogeneous acoustic grid with an absorbing pad band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    /// Pixel pitch in meters.
    pub dx: f64,
    /// Sound speed in meters per second.
    pub c: f64,
    /// Number of recorded acoustic time steps.
    pub n_tau: usize,
    /// Acoustic time step in seconds.
    pub d_tau: f64,
    /// Width in pixels of the absorbing band padded around the domain.
    pub damping_width: usize,
    /// Per-step damping strength at the outer edge of the band.
    pub damping_coeff: f64,
}

impl Grid2D {
    pub fn new(
        nx: usize,
        ny: usize,
        dx: f64,
        c: f64,
        n_tau: usize,
        d_tau: f64,
        damping_width: usize,
        damping_coeff: f64,
    ) -> Result<Self> {
        let grid = Grid2D {
            nx,
            ny,
            dx,
            c,
            n_tau,
            d_tau,
            damping_width,
            damping_coeff,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// The 20 mm, 100 x 100 pixel, 472 step set-up of the 2D phantom study.
    pub fn phantom_default() -> Self {
        Grid2D {
            nx: 100,
            ny: 100,
            dx: 20e-3 / 100.0,
            c: 1500.0,
            n_tau: 472,
            d_tau: 40e-9,
            damping_width: 20,
            damping_coeff: DEFAULT_DAMPING_COEFF,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.nx >= 1 && self.ny >= 1 && self.n_tau >= 1,
            "grid sizes must be positive (nx={}, ny={}, n_tau={})",
            self.nx,
            self.ny,
            self.n_tau
        );
        ensure_arg!(
            self.dx > 0.0 && self.c > 0.0 && self.d_tau > 0.0,
            "dx, c and d_tau must be positive"
        );
        ensure_arg!(
            self.cfl() <= 1.0,
            "CFL number {} exceeds 1",
            self.cfl()
        );
        ensure_arg!(
            4 * self.damping_width < self.nx.min(self.ny) || self.damping_width == 0,
            "damping width {} must be below min(nx, ny)/4",
            self.damping_width
        );
        ensure_arg!(
            self.damping_coeff >= 0.0 && self.damping_coeff.is_finite(),
            "damping coefficient must be nonnegative"
        );
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cfl(&self) -> f64 {
        self.c * self.d_tau / self.dx
    }
}

/// Damping strength used when none is given. Minimizes the combined
/// reflection and wrap-around error of a 20 pixel band at CFL 0.3.
pub const DEFAULT_DAMPING_COEFF: f64 = 0.07;

/// Dynamic image sequence, `N x T` values stored frame-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSeq {
    pub nx: usize,
    pub ny: usize,
    pub frames: usize,
    pub values: Vec<f64>,
}

impl ImageSeq {
    pub fn zeros(nx: usize, ny: usize, frames: usize) -> Self {
        ImageSeq {
            nx,
            ny,
            frames,
            values: vec![0.0; nx * ny * frames],
        }
    }

    pub fn from_vec(nx: usize, ny: usize, frames: usize, values: Vec<f64>) -> Result<Self> {
        ensure_arg!(
            values.len() == nx * ny * frames,
            "expected {} values for a {}x{}x{} sequence, got {}",
            nx * ny * frames,
            nx,
            ny,
            frames,
            values.len()
        );
        ensure_arg!(
            values.iter().all(|v| v.is_finite()),
            "image values must be finite"
        );
        Ok(ImageSeq {
            nx,
            ny,
            frames,
            values,
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.nx * self.ny
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.n_pixels();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.n_pixels();
        &mut self.values[t * n..(t + 1) * n]
    }

    pub fn frames_iter(&self) -> std::slice::Chunks<'_, f64> {
        self.values.chunks(self.n_pixels())
    }

    pub fn same_shape(&self, other: &ImageSeq) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.frames == other.frames
    }

    pub fn project_nonneg(&mut self) {
        for v in &mut self.values {
            *v = v.max(0.0);
        }
    }
}

/// Per-frame 2D motion fields. Frame `t` holds `[v_x; v_y]` (2N values);
/// the last frame is kept at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSeq {
    pub nx: usize,
    pub ny: usize,
    pub frames: usize,
    pub values: Vec<f64>,
}

impl MotionSeq {
    pub fn zeros(nx: usize, ny: usize, frames: usize) -> Self {
        MotionSeq {
            nx,
            ny,
            frames,
            values: vec![0.0; DIM * nx * ny * frames],
        }
    }

    pub fn from_vec(nx: usize, ny: usize, frames: usize, values: Vec<f64>) -> Result<Self> {
        ensure_arg!(
            values.len() == DIM * nx * ny * frames,
            "expected {} motion values, got {}",
            DIM * nx * ny * frames,
            values.len()
        );
        ensure_arg!(
            values.iter().all(|v| v.is_finite()),
            "motion values must be finite"
        );
        Ok(MotionSeq {
            nx,
            ny,
            frames,
            values,
        })
    }

    pub fn zeros_like(p: &ImageSeq) -> Self {
        Self::zeros(p.nx, p.ny, p.frames)
    }

    pub fn n_pixels(&self) -> usize {
        self.nx * self.ny
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = DIM * self.n_pixels();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = DIM * self.n_pixels();
        &mut self.values[t * n..(t + 1) * n]
    }

    pub fn matches(&self, p: &ImageSeq) -> bool {
        self.nx == p.nx && self.ny == p.ny && self.frames == p.frames
    }
}

/// Sensor time series for one frame: `n_sensors` rows of `n_tau` samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorData {
    pub n_sensors: usize,
    pub n_tau: usize,
    pub values: Vec<f64>,
}

impl SensorData {
    pub fn zeros(n_sensors: usize, n_tau: usize) -> Self {
        SensorData {
            n_sensors,
            n_tau,
            values: vec![0.0; n_sensors * n_tau],
        }
    }

    pub fn from_vec(n_sensors: usize, n_tau: usize, values: Vec<f64>) -> Result<Self> {
        ensure_arg!(
            values.len() == n_sensors * n_tau,
            "expected {} sensor samples, got {}",
            n_sensors * n_tau,
            values.len()
        );
        Ok(SensorData {
            n_sensors,
            n_tau,
            values,
        })
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.n_tau..(m + 1) * self.n_tau]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [f64] {
        let n = self.n_tau;
        &mut self.values[m * n..(m + 1) * n]
    }
}

/// Sub-sampled (or full) data for every frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSeq {
    pub frames: Vec<SensorData>,
    /// Noise standard deviation used when the data was simulated.
    pub sigma: f64,
}

impl DataSeq {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

/// Regularization weights and the outer step size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
}

impl RegParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, eta: f64) -> Result<Self> {
        let p = RegParams {
            alpha,
            beta,
            gamma,
            eta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.alpha >= 0.0 && self.beta >= 0.0 && self.gamma >= 0.0,
            "regularization weights must be nonnegative"
        );
        ensure_arg!(self.eta > 0.0, "step size eta must be positive");
        Ok(())
    }

    /// Weights of the denoising problem, each multiplied by `eta`.
    pub fn scaled(&self) -> ScaledWeights {
        ScaledWeights {
            alpha: self.eta * self.alpha,
            beta: self.eta * self.beta,
            gamma: self.eta * self.gamma,
        }
    }
}

/// `eta`-scaled weights used inside the proximal (denoising) step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seconds: f64,
    pub label: String,
    pub energy: f64,
}

/// Wall-clock stamped energy values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub records: Vec<TraceRecord>,
    #[serde(skip, default = "Instant::now")]
    origin: Instant,
}

impl Default for EnergyTrace {
    fn default() -> Self {
        Self::new()
    }
}

impl EnergyTrace {
    pub fn new() -> Self {
        EnergyTrace {
            records: Vec::new(),
            origin: Instant::now(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, energy: f64) {
        let mut seconds = self.origin.elapsed().as_secs_f64();
        if let Some(last) = self.records.last() {
            seconds = seconds.max(last.seconds);
        }
        self.records.push(TraceRecord {
            seconds,
            label: label.into(),
            energy,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }

    pub fn last_energy(&self) -> Option<f64> {
        self.records.last().map(|r| r.energy)
    }

    /// Appends records from another trace, shifting their time stamps so the
    /// sequence stays nondecreasing.
    pub fn extend_from(&mut self, other: &EnergyTrace) {
        let offset = self.records.last().map_or(0.0, |r| r.seconds);
        let base = other.records.first().map_or(0.0, |r| r.seconds);
        for r in &other.records {
            self.records.push(TraceRecord {
                seconds: offset + (r.seconds - base).max(0.0),
                label: r.label.clone(),
                energy: r.energy,
            });
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seconds,label,energy\n");
        for r in &self.records {
            out.push_str(&format!("{:.6},{},{:.17e}\n", r.seconds, r.label, r.energy));
        }
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

//! Per-frame sensor selection (compression) operators and the periodic
//! random-partition sub-sampling schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};
use crate::grid::SensorData;

/// Periodic sequence of sensor subsets. Sensor indices are zero-based.
///
/// Frame `t` reads the sensors in `subsets[t % period]`. Within one period the
/// subsets are pairwise disjoint and cover every sensor exactly once.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSchedule {
    pub n_sensors: usize,
    pub subsets: Vec<Vec<usize>>,
}

impl SamplingSchedule {
    /// Every frame reads every sensor.
    pub fn full(n_sensors: usize) -> Self {
        SamplingSchedule {
            n_sensors,
            subsets: vec![(0..n_sensors).collect()],
        }
    }

    /// Builds a schedule from explicit subsets, checking the partition property.
    pub fn from_subsets(n_sensors: usize, subsets: Vec<Vec<usize>>) -> Result<Self> {
        let s = SamplingSchedule { n_sensors, subsets };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(!self.subsets.is_empty(), "schedule has no frames");
        let m_c = self.subsets[0].len();
        ensure_arg!(m_c > 0, "schedule frames must select at least one sensor");
        let mut seen = vec![false; self.n_sensors];
        for (t, s) in self.subsets.iter().enumerate() {
            ensure_arg!(
                s.len() == m_c,
                "frame {} selects {} sensors, expected {}",
                t,
                s.len(),
                m_c
            );
            for &m in s {
                ensure_arg!(m < self.n_sensors, "sensor index {} out of range", m);
                ensure_arg!(!seen[m], "sensor {} selected twice within one period", m);
                seen[m] = true;
            }
        }
        ensure_arg!(
            seen.iter().all(|&b| b),
            "subsets do not cover all {} sensors",
            self.n_sensors
        );
        Ok(())
    }

    pub fn period(&self) -> usize {
        self.subsets.len()
    }

    /// Sensors read per frame.
    pub fn sensors_per_frame(&self) -> usize {
        self.subsets[0].len()
    }

    pub fn subsampling_factor(&self) -> usize {
        self.n_sensors / self.sensors_per_frame()
    }

    pub fn subset(&self, t: usize) -> &[usize] {
        &self.subsets[t % self.period()]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sched: SamplingSchedule = serde_json::from_str(s)?;
        sched.validate()?;
        Ok(sched)
    }
}

/// Random disjoint partition of the `n_sensors` sensors into `factor` frames
/// (rSP-`factor`), reproducible from `seed`.
pub fn make_rsp_schedule(n_sensors: usize, factor: usize, seed: u64) -> Result<SamplingSchedule> {
    ensure_arg!(factor >= 1, "sub-sampling factor must be at least 1");
    ensure_arg!(
        n_sensors >= factor && n_sensors % factor == 0,
        "sensor count {} is not divisible by sub-sampling factor {}",
        n_sensors,
        factor
    );
    let mut order: Vec<usize> = (0..n_sensors).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let m_c = n_sensors / factor;
    let subsets = order
        .chunks(m_c)
        .map(|c| {
            let mut c = c.to_vec();
            c.sort_unstable();
            c
        })
        .collect();
    Ok(SamplingSchedule {
        n_sensors,
        subsets,
    })
}

/// Selects the rows of `full` read during frame `t`.
pub fn apply_c(sched: &SamplingSchedule, t: usize, full: &SensorData) -> Result<SensorData> {
    ensure_arg!(
        full.n_sensors == sched.n_sensors,
        "full data has {} sensors, schedule expects {}",
        full.n_sensors,
        sched.n_sensors
    );
    let subset = sched.subset(t);
    let mut out = SensorData::zeros(subset.len(), full.n_tau);
    for (row, &m) in subset.iter().enumerate() {
        out.row_mut(row).copy_from_slice(full.row(m));
    }
    Ok(out)
}

/// Transpose of [`apply_c`]: scatters sub-sampled rows into a zero-filled
/// full data block.
pub fn apply_c_adjoint(sched: &SamplingSchedule, t: usize, sub: &SensorData) -> Result<SensorData> {
    let subset = sched.subset(t);
    if sub.n_sensors != subset.len() {
        return Err(Error::arg(format!(
            "sub data has {} rows, frame {} selects {}",
            sub.n_sensors,
            t,
            subset.len()
        )));
    }
    let mut out = SensorData::zeros(sched.n_sensors, sub.n_tau);
    for (row, &m) in subset.iter().enumerate() {
        out.row_mut(m).copy_from_slice(sub.row(row));
    }
    Ok(out)
}

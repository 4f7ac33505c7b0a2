//! Center of the pressed sensors (CoPS).
//!
//! Every sensor of the array is used as a binary pressure switch. A sensor is
//! ON when its reading reaches its adaptive threshold, the swing-phase mean
//! plus three swing-phase standard deviations. CoPS is the centroid of the
//! coordinates of the sensors that are ON.

use std::io::Write;

use crate::error::{Error, Result};
use crate::types::{PressureFrame, SensorArrayLayout};

/// Minimum number of swing frames needed to calibrate thresholds.
pub const MIN_SWING_SAMPLES: usize = 10;

/// Swing frames are searched for in this leading part of a trial, seconds.
pub const SWING_SEARCH_WINDOW_S: f64 = 5.0;

/// A frame counts as swing when its total pressure is below this fraction of
/// the trial's 95th-percentile total pressure.
pub const SWING_TOTAL_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveThresholds {
    at: Vec<f64>,
    swing_sample_count: usize,
}

impl AdaptiveThresholds {
    /// Wraps precomputed thresholds, e.g. when loading from storage.
    pub fn from_values(at: Vec<f64>, swing_sample_count: usize) -> Result<Self> {
        if at.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("thresholds"));
        }
        if swing_sample_count < MIN_SWING_SAMPLES {
            return Err(Error::TooFewSwingSamples {
                got: swing_sample_count,
                need: MIN_SWING_SAMPLES,
            });
        }
        Ok(Self {
            at,
            swing_sample_count,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.at
    }

    pub fn swing_sample_count(&self) -> usize {
        self.swing_sample_count
    }

    pub fn len(&self) -> usize {
        self.at.len()
    }

    pub fn is_empty(&self) -> bool {
        self.at.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorStateFrame {
    pub t: f64,
    pub states: Vec<bool>,
}

impl SensorStateFrame {
    pub fn pressed_count(&self) -> usize {
        self.states.iter().filter(|s| **s).count()
    }
}

/// One CoPS estimate. When `pressed_count == 0` the coordinates carry the
/// swing sentinel instead of a centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopsSample {
    pub t: f64,
    /// mm, anterior-posterior
    pub x: f64,
    /// mm, medial-lateral
    pub y: f64,
    pub pressed_count: usize,
}

impl CopsSample {
    pub fn is_swing(&self) -> bool {
        self.pressed_count == 0
    }
}

/// Per-sensor threshold: swing mean + 3 × sample standard deviation.
pub fn calibrate_thresholds(swing_frames: &[PressureFrame]) -> Result<AdaptiveThresholds> {
    let n = swing_frames.len();
    if n < MIN_SWING_SAMPLES {
        return Err(Error::TooFewSwingSamples {
            got: n,
            need: MIN_SWING_SAMPLES,
        });
    }
    let sensors = swing_frames[0].values.len();
    if let Some(bad) = swing_frames.iter().find(|f| f.values.len() != sensors) {
        return Err(Error::LengthMismatch {
            what: "swing frame",
            expected: sensors,
            got: bad.values.len(),
        });
    }
    if swing_frames
        .iter()
        .any(|f| f.values.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFiniteInput("swing pressure frames"));
    }

    let mut column = vec![0.0; n];
    let at = (0..sensors)
        .map(|i| {
            for (dst, f) in column.iter_mut().zip(swing_frames) {
                *dst = f.values[i];
            }
            adaptive_threshold(&column)
        })
        .collect();
    Ok(AdaptiveThresholds {
        at,
        swing_sample_count: n,
    })
}

/// `mean + 3 * std` of one sensor's swing readings, with the sample
/// standard deviation (divisor n - 1). Needs at least two readings.
pub fn adaptive_threshold(swing_values: &[f64]) -> f64 {
    let n = swing_values.len() as f64;
    let mean = swing_values.iter().sum::<f64>() / n;
    let ss: f64 = swing_values.iter().map(|v| (v - mean) * (v - mean)).sum();
    mean + 3.0 * (ss / (n - 1.0)).sqrt()
}

/// Picks calibration frames: within the first [`SWING_SEARCH_WINDOW_S`]
/// seconds, frames whose total pressure is below [`SWING_TOTAL_FRACTION`] of
/// the whole stream's 95th-percentile total.
pub fn select_swing_frames(frames: &[PressureFrame]) -> Vec<PressureFrame> {
    if frames.is_empty() {
        return Vec::new();
    }
    let mut totals: Vec<f64> = frames.iter().map(PressureFrame::total).collect();
    totals.sort_by(f64::total_cmp);
    let rank = 0.95 * (totals.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let p95 = totals[lo] + (totals[hi] - totals[lo]) * (rank - lo as f64);
    let limit = SWING_TOTAL_FRACTION * p95;
    let t0 = frames[0].t;
    frames
        .iter()
        .take_while(|f| f.t - t0 < SWING_SEARCH_WINDOW_S)
        .filter(|f| f.total() < limit)
        .cloned()
        .collect()
}

/// Sensor I is ON iff its reading is at or above its threshold.
pub fn frame_states(frame: &PressureFrame, thresholds: &AdaptiveThresholds) -> Result<SensorStateFrame> {
    if frame.values.len() != thresholds.len() {
        return Err(Error::LengthMismatch {
            what: "pressure frame vs thresholds",
            expected: thresholds.len(),
            got: frame.values.len(),
        });
    }
    let states = frame
        .values
        .iter()
        .zip(&thresholds.at)
        .map(|(p, at)| p >= at)
        .collect();
    Ok(SensorStateFrame { t: frame.t, states })
}

/// Centroid of the pressed sensors.
///
/// With no sensor pressed the sample carries the layout centroid as its
/// sentinel; [`cops_stream`] replaces that with the last stance value.
pub fn cops_from_states(states: &SensorStateFrame, layout: &SensorArrayLayout) -> Result<CopsSample> {
    if states.states.len() != layout.sensor_count() {
        return Err(Error::LengthMismatch {
            what: "sensor states vs layout",
            expected: layout.sensor_count(),
            got: states.states.len(),
        });
    }
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (&(x, y), &on) in layout.coords().iter().zip(&states.states) {
        if on {
            sx += x;
            sy += y;
            n += 1;
        }
    }
    if n == 0 {
        let (cx, cy) = layout.centroid();
        return Ok(CopsSample {
            t: states.t,
            x: cx,
            y: cy,
            pressed_count: 0,
        });
    }
    Ok(CopsSample {
        t: states.t,
        x: sx / n as f64,
        y: sy / n as f64,
        pressed_count: n,
    })
}

/// Sensor states for every frame of a stream.
pub fn state_stream(frames: &[PressureFrame], thresholds: &AdaptiveThresholds) -> Result<Vec<SensorStateFrame>> {
    frames.iter().map(|f| frame_states(f, thresholds)).collect()
}

/// CoPS for every frame. Swing samples hold the last stance position
/// (the layout centroid until the first stance frame).
pub fn cops_stream(
    frames: &[PressureFrame],
    thresholds: &AdaptiveThresholds,
    layout: &SensorArrayLayout,
) -> Result<Vec<CopsSample>> {
    let mut held = layout.centroid();
    let mut out = Vec::with_capacity(frames.len());
    for frame in frames {
        let states = frame_states(frame, thresholds)?;
        let mut sample = cops_from_states(&states, layout)?;
        if sample.is_swing() {
            sample.x = held.0;
            sample.y = held.1;
        } else {
            held = (sample.x, sample.y);
        }
        out.push(sample);
    }
    Ok(out)
}

/// Writes `t,x_mm,y_mm,pressed_count` rows.
pub fn write_cops_csv<W: Write>(mut w: W, samples: &[CopsSample]) -> std::io::Result<()> {
    writeln!(w, "t,x_mm,y_mm,pressed_count")?;
    for s in samples {
        writeln!(w, "{:.6},{:.4},{:.4},{}", s.t, s.x, s.y, s.pressed_count)?;
    }
    Ok(())
}

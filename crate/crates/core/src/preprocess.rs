//! Reference normalization, 50 -> 100 Hz upsampling, contact-based clock
//! synchronization, cycle windowing and min-max scaling.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cops::{self, SensorStateFrame};
use crate::error::{Error, Result};
use crate::orientation::{self, DEFAULT_BETA, SETTLE_SECONDS};
use crate::types::{
    Axis, Channel, ChannelManifest, FeatureSet, FootSide, SensorArrayLayout, Signal, TrialRecord,
    REFERENCE_PERIOD_S,
};

/// Samples per window (2 s at 100 Hz).
pub const WINDOW_LEN: usize = 200;
pub const CONTACT_THRESHOLD_BW: f64 = 0.05;
pub const DEBOUNCE_S: f64 = 0.05;
pub const MAX_SYNC_RMS_S: f64 = 0.03;
/// Largest distance between an insole contact and its reference partner.
pub const SYNC_MATCH_TOLERANCE_S: f64 = 0.1;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub contact_threshold_bw: f64,
    pub debounce_s: f64,
    pub max_cycle_s: f64,
    /// Contacts earlier than this (reference clock) are skipped while the
    /// orientation filter settles.
    pub settle_s: f64,
    pub beta: f64,
    pub max_sync_rms_s: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            contact_threshold_bw: CONTACT_THRESHOLD_BW,
            debounce_s: DEBOUNCE_S,
            max_cycle_s: WINDOW_LEN as f64 * REFERENCE_PERIOD_S,
            settle_s: SETTLE_SECONDS,
            beta: DEFAULT_BETA,
            max_sync_rms_s: MAX_SYNC_RMS_S,
        }
    }
}

pub fn normalize_vgrf(raw: &[f64], body_weight: f64) -> Result<Vec<f64>> {
    if !(body_weight > 0.0) {
        return Err(Error::NonPositiveBodyWeight(body_weight));
    }
    Ok(raw.iter().map(|v| v / body_weight).collect())
}

/// Linear midpoint interpolation; keeps every original sample.
pub fn upsample_2x(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::TooShort {
            what: "upsample_2x",
            need: 2,
            got: v.len(),
        });
    }
    let mut out = Vec::with_capacity(2 * v.len() - 1);
    for w in v.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(v[v.len() - 1]);
    Ok(out)
}

/// Linear interpolation of `(t, v)` at `tq`, holding the end values outside
/// the sampled range. `hint` carries the search position between calls with
/// increasing `tq`.
fn interp(t: &[f64], v: &[f64], tq: f64, hint: &mut usize) -> f64 {
    let n = t.len();
    if tq <= t[0] {
        return v[0];
    }
    if tq >= t[n - 1] {
        return v[n - 1];
    }
    while *hint + 1 < n && t[*hint + 1] <= tq {
        *hint += 1;
    }
    while *hint > 0 && t[*hint] > tq {
        *hint -= 1;
    }
    let i = *hint;
    let w = (tq - t[i]) / (t[i + 1] - t[i]);
    v[i] + w * (v[i + 1] - v[i])
}

/// Runs where `on(i)` holds, entered from an off sample and lasting at least
/// `debounce` seconds. Returns `(start, end)` with `end` the time of the first
/// off sample (or of the last sample if the run reaches the end).
fn debounced_runs(t: &[f64], on: impl Fn(usize) -> bool, debounce: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut i = 1;
    while i < t.len() {
        if on(i) && !on(i - 1) {
            let mut j = i + 1;
            while j < t.len() && on(j) {
                j += 1;
            }
            let end = if j < t.len() { t[j] } else { t[t.len() - 1] };
            if end - t[i] >= debounce - TIME_EPS {
                out.push((t[i], end));
            }
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

/// Contact times at 0 -> nonzero transitions of the pressed-sensor count
/// that persist for at least [`DEBOUNCE_S`].
pub fn detect_heel_contacts_insole(states: &[SensorStateFrame]) -> Vec<f64> {
    detect_heel_contacts_insole_with(states, DEBOUNCE_S)
}

pub fn detect_heel_contacts_insole_with(states: &[SensorStateFrame], debounce: f64) -> Vec<f64> {
    insole_runs(states, debounce).into_iter().map(|r| r.0).collect()
}

fn insole_runs(states: &[SensorStateFrame], debounce: f64) -> Vec<(f64, f64)> {
    let t: Vec<f64> = states.iter().map(|s| s.t).collect();
    debounced_runs(&t, |i| states[i].pressed_count() > 0, debounce)
}

/// Contact times at strict upward crossings of [`CONTACT_THRESHOLD_BW`].
pub fn detect_heel_contacts_vgrf(t: &[f64], vgrf: &[f64]) -> Vec<f64> {
    vgrf_runs(t, vgrf, CONTACT_THRESHOLD_BW, DEBOUNCE_S)
        .into_iter()
        .map(|r| r.0)
        .collect()
}

fn vgrf_runs(t: &[f64], vgrf: &[f64], threshold: f64, debounce: f64) -> Vec<(f64, f64)> {
    debounced_runs(t, |i| vgrf[i] > threshold, debounce)
}

/// Contacts and stance intervals of both feet on one clock.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaitEventSeries {
    pub heel_contacts: [Vec<f64>; 2],
    pub stance_intervals: [Vec<(f64, f64)>; 2],
}

impl GaitEventSeries {
    fn from_runs(runs: [Vec<(f64, f64)>; 2]) -> Self {
        let heel_contacts = runs.clone().map(|r| r.iter().map(|x| x.0).collect());
        Self {
            heel_contacts,
            stance_intervals: runs,
        }
    }

    /// Series with contacts only, as produced by an external detector.
    pub fn from_contacts(left: Vec<f64>, right: Vec<f64>) -> Self {
        Self {
            heel_contacts: [left, right],
            stance_intervals: [Vec::new(), Vec::new()],
        }
    }

    pub fn contacts(&self, side: FootSide) -> &[f64] {
        &self.heel_contacts[side.index()]
    }

    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            heel_contacts: self
                .heel_contacts
                .clone()
                .map(|v| v.into_iter().map(|t| t + delta).collect()),
            stance_intervals: self
                .stance_intervals
                .clone()
                .map(|v| v.into_iter().map(|(a, b)| (a + delta, b + delta)).collect()),
        }
    }

    fn total(&self) -> usize {
        self.heel_contacts.iter().map(Vec::len).sum()
    }
}

struct MatchScore {
    diffs: Vec<f64>,
    sse: f64,
}

fn match_events(insole: &GaitEventSeries, reference: &GaitEventSeries, offset: f64) -> MatchScore {
    let mut diffs = Vec::new();
    let mut sse = 0.0;
    for f in 0..2 {
        let refs = &reference.heel_contacts[f];
        if refs.is_empty() {
            continue;
        }
        for &e in &insole.heel_contacts[f] {
            let target = e - offset;
            let k = refs.partition_point(|&r| r < target);
            let best = [k.checked_sub(1), (k < refs.len()).then_some(k)]
                .into_iter()
                .flatten()
                .min_by(|&a, &b| {
                    (refs[a] - target)
                        .abs()
                        .total_cmp(&(refs[b] - target).abs())
                })
                .unwrap();
            let r = target - refs[best];
            if r.abs() <= SYNC_MATCH_TOLERANCE_S {
                diffs.push(e - refs[best]);
                sse += r * r;
            }
        }
    }
    MatchScore { diffs, sse }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Insole clock minus reference clock, pooled over both feet.
///
/// Candidate offsets come from pairing each of the first three insole
/// contacts of a foot with every reference contact of that foot; the
/// candidate matching the most contacts (then the smallest residual) wins,
/// and the result is the median of its matched differences.
pub fn synchronize(insole: &GaitEventSeries, reference: &GaitEventSeries) -> Result<f64> {
    synchronize_with(insole, reference, MAX_SYNC_RMS_S)
}

pub fn synchronize_with(
    insole: &GaitEventSeries,
    reference: &GaitEventSeries,
    max_rms: f64,
) -> Result<f64> {
    if insole.total() < 3 || reference.total() < 3 {
        return Err(Error::InsufficientEvents {
            insole: insole.total(),
            reference: reference.total(),
        });
    }
    let mut best: Option<(f64, MatchScore)> = None;
    for f in 0..2 {
        for &e in insole.heel_contacts[f].iter().take(3) {
            for &r in &reference.heel_contacts[f] {
                let cand = e - r;
                let score = match_events(insole, reference, cand);
                let better = match &best {
                    None => true,
                    Some((bo, bs)) => {
                        let (n, bn) = (score.diffs.len(), bs.diffs.len());
                        n > bn
                            || (n == bn && score.sse < bs.sse)
                            || (n == bn && score.sse == bs.sse && cand < *bo)
                    }
                };
                if better {
                    best = Some((cand, score));
                }
            }
        }
    }
    let (_, score) = best.ok_or(Error::InsufficientEvents {
        insole: insole.total(),
        reference: reference.total(),
    })?;
    let mut diffs = score.diffs;
    if diffs.len() < 3 {
        return Err(Error::InsufficientEvents {
            insole: diffs.len(),
            reference: diffs.len(),
        });
    }
    let offset = median(&mut diffs);
    let rms = (diffs.iter().map(|d| (d - offset).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
    if rms > max_rms {
        return Err(Error::PoorAlignment { rms_ms: rms * 1e3 });
    }
    Ok(offset)
}

/// Feature channels and BW-normalized reference vGRF on the reference grid.
#[derive(Debug, Clone)]
pub struct AlignedTrial {
    pub subject_id: String,
    pub speed: f64,
    pub manifest: ChannelManifest,
    /// reference clock
    pub t: Vec<f64>,
    /// `manifest.len()` series, each `t.len()` long
    pub channels: Vec<Vec<f64>>,
    pub vgrf: [Vec<f64>; 2],
}

/// One padded gait cycle. `x` is channel-major `[channels × WINDOW_LEN]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitCycleWindow {
    pub subject_id: String,
    pub speed: f64,
    pub foot: FootSide,
    pub cycle_index: u32,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub valid_length: usize,
}

impl GaitCycleWindow {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.x[c * WINDOW_LEN..(c + 1) * WINDOW_LEN]
    }

    pub fn channel_count(&self) -> usize {
        self.x.len() / WINDOW_LEN
    }

    /// Copy restricted to the given channel positions.
    pub fn select(&self, idx: &[usize]) -> GaitCycleWindow {
        let mut x = Vec::with_capacity(idx.len() * WINDOW_LEN);
        for &c in idx {
            x.extend_from_slice(self.channel(c));
        }
        GaitCycleWindow { x, ..self.clone() }
    }

    /// Time-major copy of `x` (`[WINDOW_LEN × channels]`), the layout the
    /// recurrent model consumes.
    pub fn time_major(&self) -> Vec<f64> {
        let c = self.channel_count();
        let mut out = vec![0.0; c * WINDOW_LEN];
        for ch in 0..c {
            for (t, v) in self.channel(ch).iter().enumerate() {
                out[t * c + ch] = *v;
            }
        }
        out
    }
}

/// A cycle dropped during segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Exclusion {
    pub subject_id: String,
    pub speed: f64,
    pub foot: FootSide,
    pub cycle_index: u32,
    pub start: f64,
    pub duration: f64,
}

impl fmt::Display for Exclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.1}\t{}\t{}\t{:.6}\t{:.6}\tcycle longer than window",
            self.subject_id, self.speed, self.foot, self.cycle_index, self.start, self.duration
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct Segmentation {
    pub windows: Vec<GaitCycleWindow>,
    pub exclusions: Vec<Exclusion>,
}

fn nearest_index(t: &[f64], x: f64) -> usize {
    let k = t.partition_point(|&v| v < x);
    if k == 0 {
        0
    } else if k == t.len() || x - t[k - 1] <= t[k] - x {
        k - 1
    } else {
        k
    }
}

/// Cuts one window per pair of consecutive same-foot contacts (reference
/// clock). Contacts before `cfg.settle_s` and cycles running past the data
/// are skipped; cycles longer than `cfg.max_cycle_s` become exclusions.
pub fn segment_cycles(
    aligned: &AlignedTrial,
    contacts: &[Vec<f64>; 2],
    cfg: &PreprocessConfig,
) -> Segmentation {
    let n = aligned.t.len();
    let mut seg = Segmentation::default();
    if n == 0 {
        return seg;
    }
    let max_len = (cfg.max_cycle_s / REFERENCE_PERIOD_S).round() as usize;
    let max_len = max_len.min(WINDOW_LEN);
    let last_t = aligned.t[n - 1];
    for foot in FootSide::BOTH {
        let cs = &contacts[foot.index()];
        for (k, w) in cs.windows(2).enumerate() {
            let (c0, c1) = (w[0], w[1]);
            if c0 < cfg.settle_s - TIME_EPS || c1 > last_t + 0.5 * REFERENCE_PERIOD_S {
                continue;
            }
            let j0 = nearest_index(&aligned.t, c0);
            let j1 = nearest_index(&aligned.t, c1);
            if j1 <= j0 {
                continue;
            }
            let len = j1 - j0;
            if len > max_len {
                let ex = Exclusion {
                    subject_id: aligned.subject_id.clone(),
                    speed: aligned.speed,
                    foot,
                    cycle_index: k as u32,
                    start: aligned.t[j0],
                    duration: aligned.t[j1] - aligned.t[j0],
                };
                log::info!("excluded cycle: {ex}");
                seg.exclusions.push(ex);
                continue;
            }
            let mut x = Vec::with_capacity(aligned.channels.len() * WINDOW_LEN);
            for ch in &aligned.channels {
                let cycle = &ch[j0..j1];
                x.extend_from_slice(cycle);
                x.extend(std::iter::repeat(cycle[len - 1]).take(WINDOW_LEN - len));
            }
            let mut y: Vec<f64> = aligned.vgrf[foot.index()][j0..j1]
                .iter()
                .map(|v| v.max(0.0))
                .collect();
            y.resize(WINDOW_LEN, 0.0);
            seg.windows.push(GaitCycleWindow {
                subject_id: aligned.subject_id.clone(),
                speed: aligned.speed,
                foot,
                cycle_index: k as u32,
                x,
                y,
                valid_length: len,
            });
        }
    }
    seg
}

/// Per-channel min and max of the training windows.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(windows: &[GaitCycleWindow]) -> Result<Self> {
        let first = windows.first().ok_or(Error::EmptyData)?;
        let c = first.channel_count();
        let mut min = vec![f64::INFINITY; c];
        let mut max = vec![f64::NEG_INFINITY; c];
        for w in windows {
            if w.channel_count() != c {
                return Err(Error::LengthMismatch {
                    what: "scaler channels",
                    expected: c,
                    got: w.channel_count(),
                });
            }
            for ch in 0..c {
                for &v in w.channel(ch) {
                    min[ch] = min[ch].min(v);
                    max[ch] = max[ch].max(v);
                }
            }
        }
        Ok(Self { min, max })
    }

    pub fn channel_count(&self) -> usize {
        self.min.len()
    }

    pub fn scale(&self, ch: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[ch], self.max[ch]);
        if hi > lo {
            ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }

    pub fn inverse(&self, ch: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[ch], self.max[ch]);
        if hi > lo {
            lo + v * (hi - lo)
        } else {
            lo
        }
    }

    pub fn apply(&self, w: &GaitCycleWindow) -> Result<GaitCycleWindow> {
        if w.channel_count() != self.channel_count() {
            return Err(Error::LengthMismatch {
                what: "scaler channels",
                expected: self.channel_count(),
                got: w.channel_count(),
            });
        }
        let mut out = w.clone();
        for (i, v) in out.x.iter_mut().enumerate() {
            *v = self.scale(i / WINDOW_LEN, *v);
        }
        Ok(out)
    }
}

/// Windows of one or more trials sharing a channel manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub manifest: ChannelManifest,
    pub windows: Vec<GaitCycleWindow>,
}

/// Output of the full per-trial pipeline.
#[derive(Debug, Clone)]
pub struct TrialWindows {
    pub clock_offset: f64,
    pub insole_events: GaitEventSeries,
    pub reference_events: GaitEventSeries,
    pub segmentation: Segmentation,
}

fn foot_channels(manifest: &ChannelManifest, side: FootSide) -> impl Iterator<Item = (usize, &Channel)> {
    manifest
        .channels()
        .iter()
        .enumerate()
        .filter(move |(_, c)| c.foot == side)
}

/// Runs the whole chain on one trial and returns T3 windows.
pub fn preprocess_trial(
    record: &TrialRecord,
    layout: &SensorArrayLayout,
    cfg: &PreprocessConfig,
) -> Result<TrialWindows> {
    let findings = crate::types::validate_trial(record, layout);
    if !findings.is_empty() {
        let msg: Vec<String> = findings.iter().map(|f| f.to_string()).collect();
        return Err(Error::InvalidTrial(format!(
            "{}: {}",
            record.trial_name(),
            msg.join("; ")
        )));
    }
    let manifest = ChannelManifest::for_feature_set(FeatureSet::T3);
    let grid: Vec<f64> = record.feet[0].vgrf.iter().map(|s| s.t).collect();
    if record.feet[1].vgrf.iter().map(|s| s.t).ne(grid.iter().copied()) {
        return Err(Error::ShapeMismatch(
            "left and right reference streams must share timestamps".into(),
        ));
    }

    let mut insole_runs_per_foot: [Vec<(f64, f64)>; 2] = Default::default();
    let mut ref_runs: [Vec<(f64, f64)>; 2] = Default::default();
    let mut vgrf: [Vec<f64>; 2] = Default::default();
    // per foot: (insole time base, upsampled series per channel position)
    let mut sources: Vec<(Vec<f64>, Vec<(usize, Vec<f64>)>)> = Vec::new();
    for side in FootSide::BOTH {
        let streams = record.foot(side);
        let swing = cops::select_swing_frames(&streams.pressure);
        let thresholds = cops::calibrate_thresholds(&swing)?;
        let states = cops::state_stream(&streams.pressure, &thresholds)?;
        insole_runs_per_foot[side.index()] = insole_runs(&states, cfg.debounce_s);
        let cops_s = cops::cops_stream(&streams.pressure, &thresholds, layout)?;
        let imu = orientation::estimate_angles(&streams.imu, cfg.beta)?;

        let raw: Vec<f64> = streams.vgrf.iter().map(|s| s.fz).collect();
        let bw = normalize_vgrf(&raw, record.body_weight)?;
        ref_runs[side.index()] = vgrf_runs(&grid, &bw, cfg.contact_threshold_bw, cfg.debounce_s);
        vgrf[side.index()] = bw;

        let pt = upsample_2x(&streams.pressure.iter().map(|p| p.t).collect::<Vec<_>>())?;
        let it = upsample_2x(&imu.iter().map(|s| s.t).collect::<Vec<_>>())?;
        let mut pressure_series = Vec::new();
        let mut imu_series = Vec::new();
        for (pos, ch) in foot_channels(&manifest, side) {
            let a = ch.axis.index();
            match ch.signal {
                Signal::Cops => {
                    let raw: Vec<f64> = cops_s
                        .iter()
                        .map(|c| if ch.axis == Axis::X { c.x } else { c.y })
                        .collect();
                    pressure_series.push((pos, upsample_2x(&raw)?));
                }
                Signal::Accel | Signal::Gyro | Signal::Angle => {
                    let raw: Vec<f64> = imu
                        .iter()
                        .map(|s| match ch.signal {
                            Signal::Accel => s.accel[a],
                            Signal::Gyro => s.gyro[a],
                            _ => s.angle.expect("filled by estimate_angles")[a],
                        })
                        .collect();
                    imu_series.push((pos, upsample_2x(&raw)?));
                }
            }
        }
        sources.push((pt, pressure_series));
        sources.push((it, imu_series));
    }

    let insole_events = GaitEventSeries::from_runs(insole_runs_per_foot);
    let reference_events = GaitEventSeries::from_runs(ref_runs);
    let offset = synchronize_with(&insole_events, &reference_events, cfg.max_sync_rms_s)?;

    let mut channels = vec![Vec::new(); manifest.len()];
    for (t_src, series) in &sources {
        for (pos, v) in series {
            let mut hint = 0;
            channels[*pos] = grid
                .iter()
                .map(|&tr| interp(t_src, v, tr + offset, &mut hint))
                .collect();
        }
    }
    let aligned = AlignedTrial {
        subject_id: record.subject_id.clone(),
        speed: record.speed,
        manifest,
        t: grid,
        channels,
        vgrf,
    };
    let contacts = insole_events
        .heel_contacts
        .clone()
        .map(|v| v.into_iter().map(|t| t - offset).collect());
    let segmentation = segment_cycles(&aligned, &contacts, cfg);
    Ok(TrialWindows {
        clock_offset: offset,
        insole_events,
        reference_events,
        segmentation,
    })
}

const WINDOW_MAGIC: &[u8; 4] = b"IVGW";
pub const WINDOW_FORMAT_VERSION: u16 = 1;

/// Writes the binary window container (layout documented in docs/formats.md).
pub fn write_windows<W: Write>(mut w: W, set: &WindowSet) -> std::io::Result<()> {
    let manifest = set.manifest.to_tagged_string();
    w.write_all(WINDOW_MAGIC)?;
    w.write_all(&WINDOW_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(manifest.len() as u32).to_le_bytes())?;
    w.write_all(manifest.as_bytes())?;
    w.write_all(&(WINDOW_LEN as u32).to_le_bytes())?;
    w.write_all(&(set.windows.len() as u32).to_le_bytes())?;
    for win in &set.windows {
        w.write_all(&(win.subject_id.len() as u16).to_le_bytes())?;
        w.write_all(win.subject_id.as_bytes())?;
        w.write_all(&win.speed.to_le_bytes())?;
        w.write_all(&[win.foot.index() as u8])?;
        w.write_all(&win.cycle_index.to_le_bytes())?;
        w.write_all(&(win.valid_length as u32).to_le_bytes())?;
        for v in win.x.iter().chain(win.y.iter()) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptFile("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::CorruptFile("invalid UTF-8".into()))
    }
}

pub fn read_windows<R: Read>(mut r: R) -> Result<WindowSet> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::CorruptFile(e.to_string()))?;
    parse_windows(&buf)
}

pub fn parse_windows(buf: &[u8]) -> Result<WindowSet> {
    let mut c = Cursor { buf, pos: 0 };
    if &c.array::<4>()? != WINDOW_MAGIC {
        return Err(Error::CorruptFile("not a window file".into()));
    }
    let version = c.u16()?;
    if version != WINDOW_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: WINDOW_FORMAT_VERSION,
        });
    }
    let mlen = c.u32()? as usize;
    let manifest = ChannelManifest::parse_tagged(&c.string(mlen)?)?;
    let wlen = c.u32()? as usize;
    if wlen != WINDOW_LEN {
        return Err(Error::CorruptFile(format!("window length {wlen}")));
    }
    let count = c.u32()? as usize;
    let per = (manifest.len() + 1) * WINDOW_LEN;
    let mut windows = Vec::with_capacity(count.min(buf.len() / (per * 4)));
    for _ in 0..count {
        let slen = c.u16()? as usize;
        let subject_id = c.string(slen)?;
        let speed = c.f64()?;
        let foot = match c.u8()? {
            0 => FootSide::Left,
            1 => FootSide::Right,
            b => return Err(Error::CorruptFile(format!("bad foot byte {b}"))),
        };
        let cycle_index = c.u32()?;
        let valid_length = c.u32()? as usize;
        if valid_length == 0 || valid_length > WINDOW_LEN {
            return Err(Error::CorruptFile(format!("valid length {valid_length}")));
        }
        let mut x = Vec::with_capacity(per - WINDOW_LEN);
        for _ in 0..per - WINDOW_LEN {
            x.push(c.f32()? as f64);
        }
        let mut y = Vec::with_capacity(WINDOW_LEN);
        for _ in 0..WINDOW_LEN {
            y.push(c.f32()? as f64);
        }
        windows.push(GaitCycleWindow {
            subject_id,
            speed,
            foot,
            cycle_index,
            x,
            y,
            valid_length,
        });
    }
    if c.pos != buf.len() {
        return Err(Error::CorruptFile("trailing bytes".into()));
    }
    Ok(WindowSet { manifest, windows })
}

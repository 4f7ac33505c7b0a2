//! Deterministic synthetic walking trials with known ground truth.
//!
//! Gait events live on the 10 ms reference grid. The insole clock runs
//! ahead of the reference clock by `clock_offset` seconds, so an insole
//! sample stamped `t` describes reference time `t - clock_offset`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orientation::Quaternion;
use crate::types::{
    FootSide, FootStreams, ForceSample, ImuSample, PressureFrame, SensorArrayLayout, TrialRecord, INSOLE_PERIOD_S,
    PROTOCOL_SPEEDS, REFERENCE_PERIOD_S,
};

pub const GRAVITY: f64 = 9.80665;
pub const MAX_DURATION_S: f64 = 600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub subjects: usize,
    pub speeds: Vec<f64>,
    pub duration_s: f64,
    pub seed: u64,
    /// m/s²
    pub accel_noise: f64,
    /// rad/s
    pub gyro_noise: f64,
    /// relative stride-time jitter (uniform ±)
    pub stride_jitter: f64,
    /// plants one left-foot cycle of this length in the first trial
    pub long_cycle_s: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 8,
            speeds: PROTOCOL_SPEEDS.to_vec(),
            duration_s: 90.0,
            seed: 2024,
            accel_noise: 0.05,
            gyro_noise: 0.01,
            stride_jitter: 0.02,
            long_cycle_s: None,
        }
    }
}

/// vGRF shape and timing at one walking speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedGait {
    pub speed: f64,
    /// strides per second
    pub cadence_hz: f64,
    pub stance_fraction: f64,
    /// BW
    pub wap: f64,
    /// fraction of the gait cycle
    pub wap_phase: f64,
    pub pop: f64,
    pub pop_phase: f64,
    /// mid-stance minimum, BW
    pub valley: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: String,
    /// N
    pub body_weight: f64,
    pub gaits: Vec<SpeedGait>,
    /// foot pitch at heel strike and toe-off, rad
    pub heel_strike_pitch: f64,
    pub toe_off_pitch: f64,
    pub roll_amplitude: f64,
    /// pressed-region path, mm
    pub heel_x: f64,
    pub toe_x: f64,
    pub ml_offset: f64,
    pub ml_sway: f64,
    pub ellipse_rx: f64,
    pub ellipse_ry: f64,
    pub noise_seed: u64,
}

impl SubjectProfile {
    /// Gait parameters at `speed`, linearly interpolated between the
    /// profile's speeds and clamped at the ends.
    pub fn gait_at(&self, speed: f64) -> SpeedGait {
        let g = &self.gaits;
        if speed <= g[0].speed {
            return SpeedGait { speed, ..g[0] };
        }
        for w in g.windows(2) {
            if speed <= w[1].speed {
                let u = (speed - w[0].speed) / (w[1].speed - w[0].speed);
                let l = |a: f64, b: f64| a + u * (b - a);
                return SpeedGait {
                    speed,
                    cadence_hz: l(w[0].cadence_hz, w[1].cadence_hz),
                    stance_fraction: l(w[0].stance_fraction, w[1].stance_fraction),
                    wap: l(w[0].wap, w[1].wap),
                    wap_phase: l(w[0].wap_phase, w[1].wap_phase),
                    pop: l(w[0].pop, w[1].pop),
                    pop_phase: l(w[0].pop_phase, w[1].pop_phase),
                    valley: l(w[0].valley, w[1].valley),
                };
            }
        }
        SpeedGait {
            speed,
            ..*g.last().unwrap()
        }
    }
}

/// Draws the profile of subject `index`; the index salts the stream so no
/// two subjects share parameters.
pub fn subject_profile(seed: u64, index: usize) -> SubjectProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + index as u64);
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let body_weight = 650.0 + 20.0 * index as f64 + u(0.0, 15.0);
    let cadence_base = u(-0.04, 0.04);
    let stance_base = u(-0.02, 0.02);
    let wap_base = u(1.06, 1.18);
    let pop_base = u(1.04, 1.16);
    let valley_base = u(0.68, 0.78);
    let wap_phase = u(0.12, 0.15);
    let pop_margin = u(0.11, 0.14);
    let gaits = [(0.7, 0.78, 0.66), (1.0, 0.88, 0.63), (1.4, 0.98, 0.60)]
        .iter()
        .map(|&(speed, cad, stance)| {
            let stance_fraction = stance + stance_base;
            let dv = speed - 1.0;
            SpeedGait {
                speed,
                cadence_hz: cad * (1.0 + cadence_base),
                stance_fraction,
                wap: wap_base + 0.10 * dv,
                wap_phase,
                pop: pop_base + 0.05 * dv,
                pop_phase: stance_fraction - pop_margin,
                valley: valley_base - 0.08 * dv,
            }
        })
        .collect();
    SubjectProfile {
        subject_id: format!("S{:02}", index + 1),
        body_weight,
        gaits,
        heel_strike_pitch: u(14.0, 20.0).to_radians(),
        toe_off_pitch: -u(30.0, 40.0).to_radians(),
        roll_amplitude: u(2.0, 4.0).to_radians(),
        heel_x: u(38.0, 45.0),
        toe_x: u(188.0, 198.0),
        ml_offset: u(-1.5, 1.5),
        ml_sway: u(-1.5, 1.5),
        ellipse_rx: u(19.0, 21.0),
        ellipse_ry: u(15.0, 17.0),
        noise_seed: seed ^ (0x51ab_0000 + index as u64),
    }
}

/// One planted gait cycle, reference clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleTruth {
    /// s
    pub contact: f64,
    pub duration: f64,
    pub stance: f64,
    pub wap: f64,
    /// fraction of the cycle
    pub wap_phase: f64,
    pub pop: f64,
    pub pop_phase: f64,
    pub valley: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopsTruth {
    /// insole clock
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub stance: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FootTruth {
    pub cycles: Vec<CycleTruth>,
    pub cops: Vec<CopsTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// insole clock minus reference clock, s
    pub clock_offset: f64,
    pub feet: [FootTruth; 2],
}

impl GroundTruth {
    /// Cycles lying entirely inside `[0, end)` of the reference clock.
    pub fn cycles_within(&self, side: FootSide, end: f64) -> impl Iterator<Item = &CycleTruth> {
        self.feet[side.index()]
            .cycles
            .iter()
            .filter(move |c| c.contact >= 0.0 && c.contact + c.duration < end)
    }
}

#[derive(Debug, Clone)]
pub struct SynthTrial {
    pub record: TrialRecord,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub profiles: Vec<SubjectProfile>,
    pub trials: Vec<SynthTrial>,
}

fn grid(t: f64) -> f64 {
    (t / REFERENCE_PERIOD_S).round() * REFERENCE_PERIOD_S
}

fn samples(t: f64) -> i64 {
    (t / REFERENCE_PERIOD_S).round() as i64
}

/// Cycle sequence for one foot covering `[start, end)`.
fn plan_cycles(
    gait: &SpeedGait,
    start: f64,
    end: f64,
    jitter: f64,
    long_cycle: Option<(f64, f64)>,
    rng: &mut ChaCha8Rng,
) -> Vec<CycleTruth> {
    let nominal = 1.0 / gait.cadence_hz;
    let mut out = Vec::new();
    let mut t = grid(start);
    let mut planted = false;
    while t < end {
        let d_nom = grid(nominal * (1.0 + rng.gen_range(-jitter..=jitter)));
        let n = samples(d_nom);
        let s = samples(gait.stance_fraction * d_nom);
        let a = samples(gait.wap_phase * d_nom).clamp(3, s / 2 - 3);
        let b = samples(gait.pop_phase * d_nom).clamp(s / 2 + 3, s - 4);
        let scale = |v: f64, rng: &mut ChaCha8Rng| v * (1.0 + rng.gen_range(-0.02..=0.02));
        let wap = scale(gait.wap, rng);
        let pop = scale(gait.pop, rng);
        let valley = scale(gait.valley, rng);
        let mut duration = n as f64 * REFERENCE_PERIOD_S;
        let mut n_total = n;
        if let Some((after, len)) = long_cycle {
            if !planted && t >= after {
                duration = grid(len);
                n_total = samples(len);
                planted = true;
            }
        }
        out.push(CycleTruth {
            contact: t,
            duration,
            stance: s as f64 * REFERENCE_PERIOD_S,
            wap,
            wap_phase: a as f64 / n_total as f64,
            pop,
            pop_phase: b as f64 / n_total as f64,
            valley,
        });
        t = grid(t + duration);
    }
    out
}

/// Reference-clock sample indices of the knots of one cycle.
struct Knots {
    a: f64,
    m: f64,
    b: f64,
    s: f64,
}

fn knots(c: &CycleTruth) -> Knots {
    let n = (c.duration / REFERENCE_PERIOD_S).round();
    let s = (c.stance / REFERENCE_PERIOD_S).round();
    // valley on the midpoint sample of the loaded run [1, s - 1]
    let len = s as i64 - 1;
    let m = (1 + len / 2) as f64;
    Knots {
        a: (c.wap_phase * n).round(),
        m,
        b: (c.pop_phase * n).round(),
        s,
    }
}

/// vGRF in BW at `r` samples after contact.
fn vgrf_shape(c: &CycleTruth, r: f64) -> f64 {
    let k = knots(c);
    let half_cos = |from: f64, to: f64, u: f64| from + (to - from) * (1.0 - (PI * u).cos()) / 2.0;
    if r <= 0.0 || r >= k.s {
        0.0
    } else if r <= k.a {
        c.wap * (0.5 * PI * r / k.a).sin()
    } else if r <= k.m {
        half_cos(c.wap, c.valley, (r - k.a) / (k.m - k.a))
    } else if r <= k.b {
        half_cos(c.valley, c.pop, (r - k.m) / (k.b - k.m))
    } else {
        c.pop * (0.5 * PI * (r - k.b) / (k.s - k.b)).cos()
    }
}

/// Cycle containing reference sample `n`, with `n` relative to its contact.
fn cycle_at_sample(cycles: &[CycleTruth], n: i64) -> Option<(&CycleTruth, i64)> {
    let i = cycles.partition_point(|c| samples(c.contact) <= n);
    if i == 0 {
        return None;
    }
    let c = &cycles[i - 1];
    let r = n - samples(c.contact);
    (r < samples(c.duration)).then_some((c, r))
}

fn cycle_at(cycles: &[CycleTruth], t: f64) -> Option<&CycleTruth> {
    cycle_at_sample(cycles, samples(t)).map(|(c, _)| c)
}

/// vGRF in BW at reference time `t` (on the 10 ms grid).
fn vgrf_at(cycles: &[CycleTruth], t: f64) -> f64 {
    cycle_at_sample(cycles, samples(t)).map_or(0.0, |(c, r)| vgrf_shape(c, r as f64))
}

fn in_stance(cycles: &[CycleTruth], t: f64) -> bool {
    cycle_at_sample(cycles, samples(t)).is_some_and(|(c, r)| r < samples(c.stance))
}

/// Half-cosine interpolation through `(time, value)` knots; returns value
/// and time derivative.
fn knot_curve(knots: &[(f64, f64)], tau: f64) -> (f64, f64) {
    for w in knots.windows(2) {
        let ((t0, v0), (t1, v1)) = (w[0], w[1]);
        if tau <= t1 || std::ptr::eq(&w[1], knots.last().unwrap()) {
            let span = t1 - t0;
            let u = ((tau - t0) / span).clamp(0.0, 1.0);
            let v = v0 + (v1 - v0) * (1.0 - (PI * u).cos()) / 2.0;
            let dv = (v1 - v0) * PI * (PI * u).sin() / (2.0 * span);
            return (v, dv);
        }
    }
    (knots[0].1, 0.0)
}

struct FootKinematics {
    pitch: f64,
    pitch_rate: f64,
    roll: f64,
    roll_rate: f64,
    /// world-frame linear acceleration, m/s²
    accel: [f64; 3],
}

fn kinematics(p: &SubjectProfile, speed: f64, cycles: &[CycleTruth], t: f64, mirror: f64) -> FootKinematics {
    let Some(c) = cycle_at(cycles, t) else {
        return FootKinematics {
            pitch: 0.0,
            pitch_rate: 0.0,
            roll: 0.0,
            roll_rate: 0.0,
            accel: [0.0; 3],
        };
    };
    let tau = t - c.contact;
    let (d, s) = (c.duration, c.stance);
    let rocker = [
        (0.0, p.heel_strike_pitch),
        (0.08 * d, 0.0),
        (0.6 * s, 0.0),
        (s, p.toe_off_pitch),
        (d, p.heel_strike_pitch),
    ];
    let (pitch, pitch_rate) = knot_curve(&rocker, tau);
    let (roll, roll_rate) = if tau < s {
        let w = 2.0 * PI / s;
        (
            mirror * p.roll_amplitude * (1.0 - (w * tau).cos()) / 2.0,
            mirror * p.roll_amplitude * w * (w * tau).sin() / 2.0,
        )
    } else {
        (0.0, 0.0)
    };
    let mut accel = [0.0; 3];
    if tau >= s {
        let u = (tau - s) / (d - s);
        accel[0] = 4.0 * speed * (2.0 * PI * u).sin();
        accel[2] = 2.0 * (4.0 * PI * u).sin();
    } else {
        // heel-strike transient
        accel[2] = 0.5 * GRAVITY * c.wap * (-tau / 0.015).exp() * (2.0 * PI * 25.0 * tau).sin();
    }
    FootKinematics {
        pitch,
        pitch_rate,
        roll,
        roll_rate,
        accel,
    }
}

/// Synthesizes one trial. The insole clock leads the reference clock by a
/// seed-drawn offset on the 10 ms grid.
pub fn generate_trial(
    profile: &SubjectProfile,
    speed: f64,
    cfg: &SynthConfig,
    seed: u64,
    long_cycle: Option<f64>,
) -> Result<SynthTrial> {
    if !(cfg.duration_s > 0.0 && cfg.duration_s <= MAX_DURATION_S) {
        return Err(Error::Config(format!(
            "trial duration must lie in (0, {MAX_DURATION_S}] s, got {}",
            cfg.duration_s
        )));
    }
    let layout = SensorArrayLayout::insole_96();
    let gait = profile.gait_at(speed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = grid(rng.gen_range(0.05..0.45));
    let duration = cfg.duration_s;

    let nominal = 1.0 / gait.cadence_hz;
    let start_left = -rng.gen_range(0.8..1.2);
    let start_right = start_left + grid(nominal / 2.0);
    let planted = long_cycle.map(|len| (duration / 3.0, len));
    let left = plan_cycles(&gait, start_left, duration + 2.0, cfg.stride_jitter, planted, &mut rng);
    let right = plan_cycles(&gait, start_right, duration + 2.0, cfg.stride_jitter, None, &mut rng);

    let n_ref = (duration / REFERENCE_PERIOD_S).round() as usize;
    let n_ins = ((duration + offset) / INSOLE_PERIOD_S).round() as usize + 1;
    let acc_noise = Normal::new(0.0, cfg.accel_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let gyro_noise = Normal::new(0.0, cfg.gyro_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;

    let mut feet: Vec<FootStreams> = Vec::with_capacity(2);
    let mut truths: Vec<FootTruth> = Vec::with_capacity(2);
    for (side, cycles) in [(FootSide::Left, &left), (FootSide::Right, &right)] {
        let mirror = if side == FootSide::Left { 1.0 } else { -1.0 };
        let baseline: Vec<f64> = (0..layout.sensor_count()).map(|_| rng.gen_range(1..=4) as f64).collect();
        let gain: Vec<f64> = (0..layout.sensor_count()).map(|_| rng.gen_range(2000.0..3000.0)).collect();

        let vgrf = (0..n_ref)
            .map(|j| {
                let t = j as f64 * REFERENCE_PERIOD_S;
                ForceSample {
                    t,
                    fz: vgrf_at(cycles, t) * profile.body_weight,
                }
            })
            .collect();

        let mut pressure = Vec::with_capacity(n_ins);
        let mut imu = Vec::with_capacity(n_ins);
        let mut cops = Vec::with_capacity(n_ins);
        for k in 0..n_ins {
            let t_ins = k as f64 * INSOLE_PERIOD_S;
            let t = t_ins - offset;
            let cyc = cycle_at(cycles, t);
            let in_stance = in_stance(cycles, t);
            let (cx, cy) = match cyc {
                Some(c) if in_stance => {
                    let u = (t - c.contact) / c.stance;
                    (
                        profile.heel_x + (profile.toe_x - profile.heel_x) * (1.0 - (PI * u).cos()) / 2.0,
                        mirror * (profile.ml_offset + profile.ml_sway * (PI * u).sin()),
                    )
                }
                _ => (0.0, 0.0),
            };
            let load = vgrf_at(cycles, t);
            let values = layout
                .coords()
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| {
                    let jitter = rng.gen_range(-1..=1) as f64;
                    let inside = in_stance
                        && ((x - cx) / profile.ellipse_rx).powi(2) + ((y - cy) / profile.ellipse_ry).powi(2) <= 1.0;
                    if inside {
                        (baseline[i] + 1500.0 + gain[i] * load).round()
                    } else {
                        baseline[i] + jitter
                    }
                })
                .collect();
            pressure.push(PressureFrame::new(t_ins, values));
            cops.push(CopsTruth {
                t: t_ins,
                x: cx,
                y: cy,
                stance: in_stance,
            });

            let kin = kinematics(profile, speed, cycles, t, mirror);
            let q = Quaternion::from_euler(kin.roll, kin.pitch, 0.0);
            let f_world = [kin.accel[0], kin.accel[1], kin.accel[2] + GRAVITY];
            let f_body = q.conjugate().rotate(f_world);
            let (sr, cr) = kin.roll.sin_cos();
            let gyro = [kin.roll_rate, kin.pitch_rate * cr, -kin.pitch_rate * sr];
            let mut a = f_body;
            let mut g = gyro;
            for v in a.iter_mut() {
                *v += acc_noise.sample(&mut rng);
            }
            for v in g.iter_mut() {
                *v += gyro_noise.sample(&mut rng);
            }
            imu.push(ImuSample::new(t_ins, a, g));
        }
        feet.push(FootStreams { pressure, imu, vgrf });
        truths.push(FootTruth {
            cycles: cycles.clone(),
            cops,
        });
    }
    let right_streams = feet.pop().unwrap();
    let left_streams = feet.pop().unwrap();
    let right_truth = truths.pop().unwrap();
    let left_truth = truths.pop().unwrap();
    Ok(SynthTrial {
        record: TrialRecord {
            subject_id: profile.subject_id.clone(),
            speed,
            body_weight: profile.body_weight,
            feet: [left_streams, right_streams],
        },
        truth: GroundTruth {
            clock_offset: offset,
            feet: [left_truth, right_truth],
        },
    })
}

/// Per-trial seed from the dataset seed and (subject, speed) position.
fn trial_seed(profile: &SubjectProfile, speed_index: usize) -> u64 {
    profile
        .noise_seed
        .wrapping_mul(0x2545_f491_4f6c_dd1d)
        .wrapping_add(speed_index as u64 + 1)
}

/// All subjects × speeds, ordered by subject then speed.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.speeds.is_empty() || cfg.subjects == 0 {
        return Err(Error::Config("synthetic dataset needs at least one subject and one speed".into()));
    }
    let profiles: Vec<SubjectProfile> = (0..cfg.subjects).map(|i| subject_profile(cfg.seed, i)).collect();
    let jobs: Vec<(usize, usize)> = (0..cfg.subjects)
        .flat_map(|s| (0..cfg.speeds.len()).map(move |v| (s, v)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(s, v)| {
            let long = if s == 0 && v == 0 { cfg.long_cycle_s } else { None };
            generate_trial(&profiles[s], cfg.speeds[v], cfg, trial_seed(&profiles[s], v), long)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { profiles, trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cops::{calibrate_thresholds, cops_stream, select_swing_frames};
    use crate::postsignal::{detect_stance, extract_peaks};

    fn short_cfg() -> SynthConfig {
        SynthConfig {
            subjects: 2,
            duration_s: 20.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn profiles_are_distinct_and_in_range() {
        for seed in [0, 1, 99] {
            let ps: Vec<_> = (0..8).map(|i| subject_profile(seed, i)).collect();
            for (i, p) in ps.iter().enumerate() {
                for g in &p.gaits {
                    assert!(g.stance_fraction > 0.5 && g.stance_fraction < 0.75);
                    assert!((1.0..=1.3).contains(&g.wap) && (1.0..=1.3).contains(&g.pop));
                    assert!(g.wap_phase < g.pop_phase);
                }
                for q in &ps[i + 1..] {
                    assert_ne!(p, q);
                }
            }
        }
        assert_ne!(subject_profile(1, 0), subject_profile(2, 0));
    }

    #[test]
    fn generation_is_deterministic() {
        let p = subject_profile(5, 0);
        let a = generate_trial(&p, 1.0, &short_cfg(), 42, None).unwrap();
        let b = generate_trial(&p, 1.0, &short_cfg(), 42, None).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn vgrf_zero_in_swing_and_nonnegative() {
        let p = subject_profile(5, 1);
        let trial = generate_trial(&p, 1.4, &short_cfg(), 3, None).unwrap();
        for side in FootSide::BOTH {
            let cycles = &trial.truth.feet[side.index()].cycles;
            for s in &trial.record.foot(side).vgrf {
                assert!(s.fz >= 0.0);
                if !in_stance(cycles, s.t) {
                    assert_eq!(s.fz, 0.0);
                }
            }
        }
    }

    #[test]
    fn planted_peaks_recovered_from_clean_reference() {
        let mut p = subject_profile(8, 2);
        for g in p.gaits.iter_mut() {
            g.wap = 1.15;
            g.wap_phase = 0.25;
        }
        let trial = generate_trial(&p, 1.0, &short_cfg(), 17, None).unwrap();
        let vgrf: Vec<f64> = trial.record.feet[0].vgrf.iter().map(|s| s.fz / p.body_weight).collect();
        let mut checked = 0;
        for c in trial.truth.cycles_within(FootSide::Left, 20.0) {
            let i0 = samples(c.contact) as usize;
            let n = samples(c.duration) as usize;
            let window = &vgrf[i0..i0 + n];
            let stance = detect_stance(window).unwrap();
            let peaks = extract_peaks(window, stance, n).unwrap();
            assert!((peaks.wap_value - c.wap).abs() < 1e-6);
            assert!((peaks.pop_value - c.pop).abs() < 1e-6);
            assert!((peaks.wap_time - c.wap_phase).abs() * 100.0 < 0.5);
            assert!((peaks.wap_time - 0.25).abs() * 100.0 < 0.5);
            assert!((peaks.pop_time - c.pop_phase).abs() * 100.0 < 0.5);
            assert!((c.wap - 1.15).abs() <= 1.15 * 0.02 + 1e-12);
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn cops_matches_truth_within_half_pitch() {
        let p = subject_profile(4, 3);
        let trial = generate_trial(&p, 0.7, &short_cfg(), 23, None).unwrap();
        let layout = SensorArrayLayout::insole_96();
        let (px, py) = layout.pitch();
        for side in FootSide::BOTH {
            let frames = &trial.record.foot(side).pressure;
            let th = calibrate_thresholds(&select_swing_frames(frames)).unwrap();
            let cops = cops_stream(frames, &th, &layout).unwrap();
            let truth = &trial.truth.feet[side.index()].cops;
            let mut stance = 0;
            for (c, t) in cops.iter().zip(truth) {
                assert_eq!(c.pressed_count > 0, t.stance, "t = {}", t.t);
                if t.stance {
                    assert!((c.x - t.x).abs() < px / 2.0 && (c.y - t.y).abs() < py / 2.0);
                    stance += 1;
                }
            }
            assert!(stance > 300);
        }
    }

    #[test]
    fn dataset_geometry() {
        let cfg = SynthConfig {
            subjects: 2,
            duration_s: 10.0,
            ..SynthConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.trials.len(), 6);
        for t in &ds.trials {
            assert_eq!(t.record.feet[0].vgrf.len(), 1000);
            let off = t.truth.clock_offset;
            assert!((0.05..=0.45).contains(&off));
            assert_eq!(t.record.feet[0].pressure.len(), ((10.0 + off) / 0.02f64).round() as usize + 1);
        }
        assert!(generate_trial(&ds.profiles[0], 1.0, &SynthConfig { duration_s: 601.0, ..cfg }, 0, None).is_err());
    }

    #[test]
    fn long_cycle_is_planted_once() {
        let p = subject_profile(1, 0);
        let trial = generate_trial(&p, 1.0, &short_cfg(), 5, Some(2.3)).unwrap();
        let long: Vec<_> = trial.truth.feet[0].cycles.iter().filter(|c| c.duration > 2.0).collect();
        assert_eq!(long.len(), 1);
        assert!((long[0].duration - 2.3).abs() < 1e-9);
        assert!(trial.truth.feet[1].cycles.iter().all(|c| c.duration < 2.0));
    }

    #[test]
    fn imu_consistent_with_gravity_at_rest() {
        // static mid-stance: foot flat, accel ≈ (0, 0, g)
        let p = subject_profile(2, 0);
        let cfg = SynthConfig {
            accel_noise: 0.0,
            gyro_noise: 0.0,
            ..short_cfg()
        };
        let trial = generate_trial(&p, 1.0, &cfg, 9, None).unwrap();
        let off = trial.truth.clock_offset;
        let c = trial.truth.feet[0].cycles[5];
        let t_mid = c.contact + 0.3 * c.stance;
        let k = ((t_mid + off) / INSOLE_PERIOD_S).round() as usize;
        let s = &trial.record.feet[0].imu[k];
        let norm = s.accel.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - GRAVITY).abs() < 0.2, "{:?}", s.accel);
        assert!(s.gyro[1].abs() < 0.5);
    }
}

//! Post-estimation smoothing and characteristic-peak extraction.

use crate::error::{Error, Result};

/// Sampling rate of estimated and reference vGRF, Hz.
pub const SAMPLE_RATE_HZ: f64 = 100.0;
/// Low-pass cutoff applied to pointwise model outputs, Hz.
pub const CUTOFF_HZ: f64 = 10.0;
/// Order of the recursive low-pass filter.
pub const FILTER_ORDER: usize = 4;
/// vGRF level separating stance from swing, body weights.
pub const STANCE_THRESHOLD_BW: f64 = 0.05;

/// Second-order section `b0 + b1 z^-1 + b2 z^-2 / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form II over `x`, starting from the steady state of
    /// a constant input equal to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let g = self.dc_gain();
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let mut z2 = b2 * x0 - a2 * g * x0;
        let mut z1 = b1 * x0 - a1 * g * x0 + z2;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z1;
            z1 = b1 * input - a1 * y + z2;
            z2 = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Butterworth low-pass as a cascade of second-order sections (bilinear
/// transform with frequency prewarping). `order` must be even.
pub fn butterworth_lowpass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Vec<Biquad>> {
    if order == 0 || order % 2 != 0 {
        return Err(Error::Config(format!("filter order must be even and > 0, got {order}")));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0) {
        return Err(Error::Config(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {}) Hz",
            sample_rate_hz / 2.0
        )));
    }
    let w0 = 2.0 * std::f64::consts::PI * cutoff_hz / sample_rate_hz;
    let (sin_w0, cos_w0) = w0.sin_cos();
    let n = order as f64;
    Ok((0..order / 2)
        .map(|k| {
            // analog prototype pole pair quality factor
            let theta = std::f64::consts::PI * (2.0 * k as f64 + 1.0) / (2.0 * n);
            let q = 1.0 / (2.0 * theta.sin());
            let alpha = sin_w0 / (2.0 * q);
            let a0 = 1.0 + alpha;
            let b0 = (1.0 - cos_w0) / 2.0 / a0;
            Biquad {
                b: [b0, 2.0 * b0, b0],
                a: [-2.0 * cos_w0 / a0, (1.0 - alpha) / a0],
            }
        })
        .collect())
}

/// Forward-backward low-pass with odd-reflection edge padding of
/// `3 * order` samples, trimmed after filtering.
pub fn zero_phase_lowpass(series: &[f64], cutoff_hz: f64, sample_rate_hz: f64) -> Result<Vec<f64>> {
    let need = 3 * FILTER_ORDER;
    if series.len() < need {
        return Err(Error::TooShort {
            what: "zero-phase filter input",
            need,
            got: series.len(),
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("zero-phase filter input"));
    }
    let sections = butterworth_lowpass(FILTER_ORDER, cutoff_hz, sample_rate_hz)?;
    let n = series.len();
    let pad = need.min(n - 1);
    let first = series[0];
    let last = series[n - 1];

    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|k| 2.0 * first - series[k]));
    ext.extend_from_slice(series);
    ext.extend((1..=pad).map(|k| 2.0 * last - series[n - 1 - k]));

    for s in &sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in &sections {
        s.run(&mut ext);
    }
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// [`zero_phase_lowpass`] at the pipeline's 10 Hz / 100 Hz setting.
pub fn smooth_estimate(series: &[f64]) -> Result<Vec<f64>> {
    zero_phase_lowpass(series, CUTOFF_HZ, SAMPLE_RATE_HZ)
}

/// Inclusive sample range of a stance phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stance {
    pub start: usize,
    pub end: usize,
}

impl Stance {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// First index of the second half.
    pub fn midpoint(&self) -> usize {
        self.start + self.len() / 2
    }
}

/// Longest run of samples above [`STANCE_THRESHOLD_BW`]; the earliest run
/// wins a tie.
pub fn detect_stance(vgrf: &[f64]) -> Result<Stance> {
    detect_stance_with(vgrf, STANCE_THRESHOLD_BW)
}

pub fn detect_stance_with(vgrf: &[f64], threshold: f64) -> Result<Stance> {
    let mut best: Option<Stance> = None;
    let mut run_start: Option<usize> = None;
    for i in 0..=vgrf.len() {
        let above = i < vgrf.len() && vgrf[i] > threshold;
        match (above, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                let run = Stance { start: s, end: i - 1 };
                if best.map_or(true, |b| run.len() > b.len()) {
                    best = Some(run);
                }
                run_start = None;
            }
            _ => {}
        }
    }
    best.ok_or(Error::NoStanceFound)
}

/// Weight-acceptance and push-off peaks of one gait cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakPair {
    /// BW
    pub wap_value: f64,
    /// fraction of the gait cycle
    pub wap_time: f64,
    pub pop_value: f64,
    pub pop_time: f64,
    pub stance: Stance,
}

fn argmax_earliest(values: &[f64], range: std::ops::Range<usize>) -> usize {
    let mut best = range.start;
    for i in range {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

/// WAP = max over `[start, midpoint)`, POP = max over `[midpoint, end]`;
/// ties resolve to the earliest index. Times are fractions of
/// `cycle_length` samples.
pub fn extract_peaks(vgrf: &[f64], stance: Stance, cycle_length: usize) -> Result<PeakPair> {
    if stance.len() < 4 {
        return Err(Error::StanceTooShort(stance.len()));
    }
    if stance.end >= vgrf.len() {
        return Err(Error::LengthMismatch {
            what: "stance end vs window",
            expected: vgrf.len(),
            got: stance.end + 1,
        });
    }
    if cycle_length == 0 {
        return Err(Error::Empty);
    }
    let mid = stance.midpoint();
    let wap = argmax_earliest(vgrf, stance.start..mid);
    let pop = argmax_earliest(vgrf, mid..stance.end + 1);
    let len = cycle_length as f64;
    Ok(PeakPair {
        wap_value: vgrf[wap],
        wap_time: wap as f64 / len,
        pop_value: vgrf[pop],
        pop_time: pop as f64 / len,
        stance,
    })
}

/// Peak magnitude errors (BW, absolute) and timing errors (% of gait cycle,
/// positive when the estimate lags).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakErrors {
    pub wap_error: f64,
    pub pop_error: f64,
    pub wap_delay: f64,
    pub pop_delay: f64,
}

pub fn peak_errors(reference: &PeakPair, estimate: &PeakPair) -> PeakErrors {
    PeakErrors {
        wap_error: (estimate.wap_value - reference.wap_value).abs(),
        pop_error: (estimate.pop_value - reference.pop_value).abs(),
        wap_delay: (estimate.wap_time - reference.wap_time) * 100.0,
        pop_delay: (estimate.pop_time - reference.pop_time) * 100.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn tone(freq: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| (2.0 * PI * freq * k as f64 / SAMPLE_RATE_HZ).sin()).collect()
    }

    /// Amplitude of the DFT bin at `freq`, by direct summation.
    fn dft_amplitude(x: &[f64], freq: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, v) in x.iter().enumerate() {
            let ph = 2.0 * PI * freq * k as f64 / SAMPLE_RATE_HZ;
            re += v * ph.cos();
            im -= v * ph.sin();
        }
        2.0 * (re * re + im * im).sqrt() / x.len() as f64
    }

    #[test]
    fn dc_gain_is_one() {
        let x = vec![3.25; 300];
        let y = smooth_estimate(&x).unwrap();
        assert!(y.iter().all(|v| (v - 3.25).abs() < 1e-9));
    }

    #[test]
    fn passband_and_stopband() {
        // 1000 samples = 10 s: 2 Hz and 25 Hz complete whole cycles
        let interior = 100..900;
        let x = tone(2.0, 1000);
        let y = smooth_estimate(&x).unwrap();
        let ratio = dft_amplitude(&y[interior.clone()], 2.0) / dft_amplitude(&x[interior.clone()], 2.0);
        assert!((ratio - 1.0).abs() < 0.02, "2 Hz ratio {ratio}");

        let x = tone(25.0, 1000);
        let y = smooth_estimate(&x).unwrap();
        let ratio = dft_amplitude(&y[interior.clone()], 25.0) / dft_amplitude(&x[interior], 25.0);
        assert!(20.0 * ratio.log10() <= -20.0, "25 Hz ratio {ratio}");
    }

    #[test]
    fn five_hz_tone_has_zero_lag() {
        let x = tone(5.0, 1000);
        let y = smooth_estimate(&x).unwrap();
        let xcorr = |lag: i64| -> f64 {
            (200..800)
                .map(|k| x[k] * y[(k as i64 + lag) as usize])
                .sum()
        };
        let best = (-10..=10).max_by(|a, b| xcorr(*a).total_cmp(&xcorr(*b))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn too_short_rejected() {
        assert!(matches!(smooth_estimate(&[1.0; 11]), Err(Error::TooShort { .. })));
        assert!(smooth_estimate(&[1.0; 12]).is_ok());
    }

    #[test]
    fn attenuation_never_amplifies() {
        use rustfft::{num_complex::Complex, FftPlanner};
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 1024;
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        for _ in 0..20 {
            // tapered burst with quiet margins so the edge handling stays inactive
            let x: Vec<f64> = (0..n)
                .map(|k| {
                    if !(150..n - 150).contains(&k) {
                        return 0.0;
                    }
                    let u = (k - 150) as f64 / (n - 301) as f64;
                    rng.gen_range(-1.0..1.0) * (PI * u).sin().powi(2)
                })
                .collect();
            let y = smooth_estimate(&x).unwrap();
            let (x, y) = (&x[..], &y[..]);
            let spectrum = |s: &[f64]| {
                let mut buf: Vec<Complex<f64>> = s.iter().map(|v| Complex::new(*v, 0.0)).collect();
                fft.process(&mut buf);
                buf.iter().map(|c| c.norm()).collect::<Vec<f64>>()
            };
            let (sx, sy) = (spectrum(x), spectrum(y));
            let scale = sx.iter().cloned().fold(0.0, f64::max);
            for k in 0..n {
                assert!(sy[k] <= sx[k] + 1e-6 * scale, "bin {k}: {} > {}", sy[k], sx[k]);
            }
        }
    }

    #[test]
    fn cascade_response_bounded_by_one() {
        let sections = butterworth_lowpass(FILTER_ORDER, CUTOFF_HZ, SAMPLE_RATE_HZ).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..=500 {
            let w = PI * i as f64 / 500.0;
            let mut mag = 1.0;
            for s in &sections {
                let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
                let num = ((s.b[0] + s.b[1] * c1 + s.b[2] * c2).powi(2) + (s.b[1] * s1 + s.b[2] * s2).powi(2)).sqrt();
                let den = ((1.0 + s.a[0] * c1 + s.a[1] * c2).powi(2) + (s.a[0] * s1 + s.a[1] * s2).powi(2)).sqrt();
                mag *= num / den;
            }
            assert!(mag <= 1.0 + 1e-12 && mag <= prev + 1e-12);
            prev = mag;
            let f = w / PI * SAMPLE_RATE_HZ / 2.0;
            if (f - CUTOFF_HZ).abs() < 1e-9 {
                assert!((mag - 0.5f64.sqrt()).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn filter_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let fm = smooth_estimate(&mix).unwrap();
            let fx = smooth_estimate(&x).unwrap();
            let fy = smooth_estimate(&y).unwrap();
            for k in 0..200 {
                prop_assert!((fm[k] - (a * fx[k] + b * fy[k])).abs() < 1e-9);
            }
        }

        #[test]
        fn peaks_dominate_their_halves(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..120).map(|_| rng.gen_range(0.0..2.0)).collect();
            let stance = Stance { start: rng.gen_range(0..20), end: rng.gen_range(60..120) };
            let p = extract_peaks(&x, stance, 120).unwrap();
            let mid = stance.midpoint();
            let max = x.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert!(p.wap_value <= max && p.pop_value <= max);
            prop_assert!(x[stance.start..mid].iter().all(|v| *v <= p.wap_value));
            prop_assert!(x[mid..=stance.end].iter().all(|v| *v <= p.pop_value));
            prop_assert!(p.wap_time < p.pop_time);
        }
    }

    #[test]
    fn stance_detection_cases() {
        assert!(matches!(detect_stance(&[0.0; 200]), Err(Error::NoStanceFound)));

        let mut w = vec![0.0; 200];
        for v in &mut w[10..=130] {
            *v = 0.8;
        }
        assert_eq!(detect_stance(&w).unwrap(), Stance { start: 10, end: 130 });

        let mut w = vec![0.0; 200];
        for v in &mut w[5..25] {
            *v = 1.0;
        }
        for v in &mut w[40..120] {
            *v = 1.0;
        }
        let s = detect_stance(&w).unwrap();
        assert_eq!(s.len(), 80);
        assert_eq!(s.start, 40);

        // exactly at threshold does not count
        assert!(detect_stance(&[STANCE_THRESHOLD_BW; 10]).is_err());
    }

    #[test]
    fn planted_double_bump() {
        let mut w = vec![0.0; 150];
        for (k, v) in w.iter_mut().enumerate().take(91).skip(1) {
            *v = 0.6 + 0.1 * (k as f64 / 10.0).sin().abs();
        }
        w[22] = 1.15;
        w[70] = 1.08;
        let stance = detect_stance(&w).unwrap();
        let p = extract_peaks(&w, stance, 150).unwrap();
        assert_eq!(p.wap_value, 1.15);
        assert_eq!(p.pop_value, 1.08);
        assert_eq!(p.wap_time, 22.0 / 150.0);
        assert_eq!(p.pop_time, 70.0 / 150.0);
    }

    #[test]
    fn monotone_ramp_hits_boundaries() {
        let w: Vec<f64> = (0..100).map(|k| k as f64 / 100.0 + 0.1).collect();
        let stance = Stance { start: 10, end: 89 };
        let p = extract_peaks(&w, stance, 100).unwrap();
        assert_eq!(p.wap_time, (stance.midpoint() - 1) as f64 / 100.0);
        assert_eq!(p.pop_time, 0.89);
    }

    #[test]
    fn plateau_ties_go_earliest() {
        let mut w = vec![0.0; 60];
        for v in &mut w[10..50] {
            *v = 1.0;
        }
        let stance = detect_stance(&w).unwrap();
        let p = extract_peaks(&w, stance, 60).unwrap();
        assert_eq!(p.wap_time, 10.0 / 60.0);
        assert_eq!(p.pop_time, stance.midpoint() as f64 / 60.0);
    }

    #[test]
    fn short_stance_rejected() {
        let w = vec![1.0; 10];
        assert!(matches!(
            extract_peaks(&w, Stance { start: 2, end: 4 }, 10),
            Err(Error::StanceTooShort(3))
        ));
    }

    #[test]
    fn peak_error_arithmetic() {
        let stance = Stance { start: 0, end: 90 };
        let r = PeakPair {
            wap_value: 1.1,
            wap_time: 30.0 / 150.0,
            pop_value: 1.05,
            pop_time: 80.0 / 150.0,
            stance,
        };
        let zero = peak_errors(&r, &r);
        assert_eq!(zero, PeakErrors { wap_error: 0.0, pop_error: 0.0, wap_delay: 0.0, pop_delay: 0.0 });

        let e = PeakPair { wap_time: 33.0 / 150.0, wap_value: 1.0, ..r };
        let err = peak_errors(&r, &e);
        assert!((err.wap_delay - 2.0).abs() < 1e-12);
        assert_eq!(err.wap_error, peak_errors(&e, &r).wap_error);
    }
}

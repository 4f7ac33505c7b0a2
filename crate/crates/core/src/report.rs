//! Gait-cycle-normalized percentile bands and static SVG plots.

use std::io::Write;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};

/// Bins from 0 to 100 %GC inclusive.
pub const GC_BINS: usize = 101;
pub const BAND_LOW: f64 = 0.025;
pub const BAND_HIGH: f64 = 0.975;

/// Linear resampling of one cycle onto `bins` evenly spaced points from the
/// first to the last sample.
pub fn resample_cycle(cycle: &[f64], bins: usize) -> Result<Vec<f64>> {
    if cycle.len() < 2 {
        return Err(Error::TooShort {
            what: "gait cycle",
            need: 2,
            got: cycle.len(),
        });
    }
    let last = (cycle.len() - 1) as f64;
    Ok((0..bins)
        .map(|b| {
            let x = last * b as f64 / (bins - 1) as f64;
            let i = (x.floor() as usize).min(cycle.len() - 2);
            let f = x - i as f64;
            cycle[i] + f * (cycle[i + 1] - cycle[i])
        })
        .collect())
}

/// Percentile of sorted data with linear interpolation between closest
/// ranks, `q` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PercentileBand {
    /// %GC of each bin
    pub gc: Vec<f64>,
    pub median: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub n_cycles: usize,
}

/// Median and 2.5-97.5 percentile band per %GC bin over a set of cycles.
pub fn percentile_band(cycles: &[Vec<f64>]) -> Result<PercentileBand> {
    if cycles.is_empty() {
        return Err(Error::MissingInputs("no gait cycles to summarize".into()));
    }
    let resampled = cycles
        .iter()
        .map(|c| resample_cycle(c, GC_BINS))
        .collect::<Result<Vec<_>>>()?;
    let mut band = PercentileBand {
        gc: (0..GC_BINS).map(|b| b as f64 * 100.0 / (GC_BINS - 1) as f64).collect(),
        median: Vec::with_capacity(GC_BINS),
        low: Vec::with_capacity(GC_BINS),
        high: Vec::with_capacity(GC_BINS),
        n_cycles: cycles.len(),
    };
    let mut col = vec![0.0; cycles.len()];
    for b in 0..GC_BINS {
        for (v, r) in col.iter_mut().zip(&resampled) {
            *v = r[b];
        }
        col.sort_by(f64::total_cmp);
        band.median.push(percentile_sorted(&col, 0.5));
        band.low.push(percentile_sorted(&col, BAND_LOW));
        band.high.push(percentile_sorted(&col, BAND_HIGH));
    }
    Ok(band)
}

pub fn write_band_table<W: Write>(mut w: W, reference: &PercentileBand, estimate: &PercentileBand) -> std::io::Result<()> {
    writeln!(w, "gc_pct\tref_median\tref_p2_5\tref_p97_5\test_median\test_p2_5\test_p97_5")?;
    for i in 0..reference.gc.len() {
        writeln!(
            w,
            "{:.0}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            reference.gc[i],
            reference.median[i],
            reference.low[i],
            reference.high[i],
            estimate.median[i],
            estimate.low[i],
            estimate.high[i]
        )?;
    }
    Ok(())
}

fn plot_err<E: std::fmt::Debug>(path: &Path) -> impl Fn(E) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(format!("{e:?}")))
}

/// Reference and estimated vGRF over the gait cycle: median lines and
/// shaded 2.5-97.5 percentile bands.
pub fn plot_bands(path: &Path, title: &str, reference: &PercentileBand, estimate: &PercentileBand) -> Result<()> {
    let top = reference
        .high
        .iter()
        .chain(&estimate.high)
        .fold(1.0f64, |a, &b| a.max(b))
        * 1.1;
    let bottom = reference
        .low
        .iter()
        .chain(&estimate.low)
        .fold(0.0f64, |a, &b| a.min(b));
    let err = plot_err(path);
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..100.0, bottom..top)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc("gait cycle (%)")
        .y_desc("vGRF (BW)")
        .draw()
        .map_err(&err)?;
    let series = [(reference, BLUE, "reference"), (estimate, RED, "estimate")];
    for (band, color, label) in series {
        let mut outline: Vec<(f64, f64)> = band.gc.iter().copied().zip(band.high.iter().copied()).collect();
        outline.extend(band.gc.iter().copied().zip(band.low.iter().copied()).rev());
        chart
            .draw_series(std::iter::once(Polygon::new(outline, color.mix(0.2).filled())))
            .map_err(&err)?;
        chart
            .draw_series(LineSeries::new(
                band.gc.iter().copied().zip(band.median.iter().copied()),
                color.stroke_width(2),
            ))
            .map_err(&err)?
            .label(label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // rank search instead of floor arithmetic
    fn naive_percentile(values: &[f64], q: f64) -> f64 {
        let mut v = values.to_vec();
        for i in 0..v.len() {
            for j in 0..v.len() - 1 - i {
                if v[j] > v[j + 1] {
                    v.swap(j, j + 1);
                }
            }
        }
        let n = v.len();
        if n == 1 {
            return v[0];
        }
        let step = 1.0 / (n - 1) as f64;
        for k in 0..n - 1 {
            let (a, b) = (k as f64 * step, (k + 1) as f64 * step);
            if q >= a && q <= b {
                let f = (q - a) / step;
                return v[k] * (1.0 - f) + v[k + 1] * f;
            }
        }
        v[n - 1]
    }

    #[test]
    fn band_matches_naive_percentiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.gen_range(1..60);
            let cycles: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..rng.gen_range(90..140)).map(|_| rng.gen_range(0.0..1.3)).collect())
                .collect();
            let band = percentile_band(&cycles).unwrap();
            for b in 0..GC_BINS {
                let col: Vec<f64> = cycles.iter().map(|c| resample_cycle(c, GC_BINS).unwrap()[b]).collect();
                assert!((band.median[b] - naive_percentile(&col, 0.5)).abs() < 1e-9);
                assert!((band.low[b] - naive_percentile(&col, BAND_LOW)).abs() < 1e-9);
                assert!((band.high[b] - naive_percentile(&col, BAND_HIGH)).abs() < 1e-9);
                assert!(band.low[b] <= band.median[b] && band.median[b] <= band.high[b]);
            }
        }
    }

    #[test]
    fn resample_keeps_endpoints() {
        let c = [0.0, 1.0, 4.0, 2.0];
        let r = resample_cycle(&c, GC_BINS).unwrap();
        assert_eq!(r[0], 0.0);
        assert_eq!(r[100], 2.0);
        assert!((r[50] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn empty_set_is_missing_inputs() {
        assert!(matches!(percentile_band(&[]), Err(Error::MissingInputs(_))));
    }

    #[test]
    fn svg_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let cycles: Vec<Vec<f64>> = (0..5)
            .map(|k| (0..120).map(|i| ((i as f64) / 20.0 + k as f64).sin().abs()).collect())
            .collect();
        let band = percentile_band(&cycles).unwrap();
        let p = dir.path().join("x.svg");
        plot_bands(&p, "test", &band, &band).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("<svg"));
        plot_bands(&dir.path().join("y.svg"), "test", &band, &band).unwrap();
        assert_eq!(text, std::fs::read_to_string(dir.path().join("y.svg")).unwrap());
    }
}

//! Plain-text trial directories and the ground-truth sidecar.
//!
//! ```text
//! <trial>/meta.txt            key=value: subject_id, speed_mps, body_weight_N, foot
//! <trial>/{left,right}_pressure.csv   t,p001..p096
//! <trial>/{left,right}_imu.csv        t,ax,ay,az,gx,gy,gz
//! <trial>/{left,right}_vgrf.csv       t,fz_N
//! <trial>/truth.txt           synthetic ground truth (optional)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::synthgait::{CopsTruth, CycleTruth, FootTruth, GroundTruth};
use crate::types::{FootSide, FootStreams, ForceSample, ImuSample, PressureFrame, TrialRecord};

pub const META_FILE: &str = "meta.txt";
pub const TRUTH_FILE: &str = "truth.txt";
pub const IMU_HEADER: &str = "t,ax,ay,az,gx,gy,gz";
pub const VGRF_HEADER: &str = "t,fz_N";
const META_KEYS: [&str; 4] = ["subject_id", "speed_mps", "body_weight_N", "foot"];
const CYCLE_HEADER: &str = "foot,contact,duration,stance,wap,wap_phase,pop,pop_phase,valley";
const COPS_HEADER: &str = "foot,t,x_mm,y_mm,stance";

pub fn pressure_header(sensors: usize) -> String {
    let mut h = String::from("t");
    for i in 1..=sensors {
        h.push_str(&format!(",p{i:03}"));
    }
    h
}

fn stream_path(dir: &Path, side: FootSide, kind: &str) -> PathBuf {
    dir.join(format!("{}_{kind}.csv", side.as_str()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the trial files into `dir` (created if missing) and returns their
/// paths in write order.
pub fn write_trial(dir: &Path, record: &TrialRecord) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let meta = dir.join(META_FILE);
    let text = format!(
        "subject_id={}\nspeed_mps={}\nbody_weight_N={}\nfoot=left,right\n",
        record.subject_id, record.speed, record.body_weight
    );
    fs::write(&meta, text).map_err(|e| Error::io(&meta, e))?;
    written.push(meta);

    for side in FootSide::BOTH {
        let streams = record.foot(side);
        let io_err = |p: &Path| {
            let p = p.to_path_buf();
            move |e| Error::io(p, e)
        };

        let path = stream_path(dir, side, "pressure");
        let mut w = create(&path)?;
        let sensors = streams.pressure.first().map_or(96, |f| f.values.len());
        writeln!(w, "{}", pressure_header(sensors)).map_err(io_err(&path))?;
        for f in &streams.pressure {
            write!(w, "{:.6}", f.t).map_err(io_err(&path))?;
            for v in &f.values {
                write!(w, ",{v}").map_err(io_err(&path))?;
            }
            writeln!(w).map_err(io_err(&path))?;
        }
        finish(&path, w)?;
        written.push(path);

        let path = stream_path(dir, side, "imu");
        let mut w = create(&path)?;
        writeln!(w, "{IMU_HEADER}").map_err(io_err(&path))?;
        for s in &streams.imu {
            let [ax, ay, az] = s.accel;
            let [gx, gy, gz] = s.gyro;
            writeln!(w, "{:.6},{ax},{ay},{az},{gx},{gy},{gz}", s.t).map_err(io_err(&path))?;
        }
        finish(&path, w)?;
        written.push(path);

        let path = stream_path(dir, side, "vgrf");
        let mut w = create(&path)?;
        writeln!(w, "{VGRF_HEADER}").map_err(io_err(&path))?;
        for s in &streams.vgrf {
            writeln!(w, "{:.6},{}", s.t, s.fz).map_err(io_err(&path))?;
        }
        finish(&path, w)?;
        written.push(path);
    }
    Ok(written)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(path, format!("line {line}: `{s}` is not a number")))
}

/// Parses a CSV with the exact header `header`, returning numeric rows.
fn read_rows(path: &Path, header: &str) -> Result<Vec<Vec<f64>>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let got = lines.next().unwrap_or("").trim_end();
    if got != header {
        return Err(Error::parse(
            path,
            format!("unexpected header `{got}` (expected `{header}`)"),
        ));
    }
    let cols = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| parse_f64(path, i + 2, f))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != cols {
            return Err(Error::parse(
                path,
                format!("line {}: {} fields, expected {cols}", i + 2, row.len()),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn parse_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, format!("line {}: expected key=value", i + 1)))?;
        let k = k.trim();
        if !META_KEYS.contains(&k) {
            return Err(Error::parse(path, format!("unknown key `{k}`")));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    for k in META_KEYS {
        if !map.contains_key(k) {
            return Err(Error::parse(path, format!("missing key `{k}`")));
        }
    }
    Ok(map)
}

pub fn read_trial(dir: &Path) -> Result<TrialRecord> {
    let meta_path = dir.join(META_FILE);
    let meta = parse_meta(&meta_path)?;
    let speed = parse_f64(&meta_path, 0, &meta["speed_mps"])?;
    let body_weight = parse_f64(&meta_path, 0, &meta["body_weight_N"])?;
    let mut sides: Vec<FootSide> = meta["foot"]
        .split(',')
        .map(str::parse)
        .collect::<Result<_>>()
        .map_err(|_| Error::parse(&meta_path, "bad `foot` value"))?;
    sides.sort();
    if sides != FootSide::BOTH {
        return Err(Error::parse(&meta_path, "`foot` must list left,right"));
    }

    let mut feet: [FootStreams; 2] = Default::default();
    for side in FootSide::BOTH {
        let path = stream_path(dir, side, "pressure");
        let header = read_text(&path)?.lines().next().unwrap_or("").to_string();
        let sensors = header.split(',').count().saturating_sub(1);
        let rows = read_rows(&path, &pressure_header(sensors.max(1)))?;
        let pressure = rows
            .into_iter()
            .map(|r| PressureFrame::new(r[0], r[1..].to_vec()))
            .collect();

        let imu = read_rows(&stream_path(dir, side, "imu"), IMU_HEADER)?
            .into_iter()
            .map(|r| ImuSample::new(r[0], [r[1], r[2], r[3]], [r[4], r[5], r[6]]))
            .collect();

        let vgrf = read_rows(&stream_path(dir, side, "vgrf"), VGRF_HEADER)?
            .into_iter()
            .map(|r| ForceSample { t: r[0], fz: r[1] })
            .collect();

        feet[side.index()] = FootStreams {
            pressure,
            imu,
            vgrf,
        };
    }
    Ok(TrialRecord {
        subject_id: meta["subject_id"].clone(),
        speed,
        body_weight,
        feet,
    })
}

pub fn write_truth(dir: &Path, truth: &GroundTruth) -> Result<PathBuf> {
    let path = dir.join(TRUTH_FILE);
    let mut w = create(&path)?;
    let p = path.clone();
    let e = move |e| Error::io(&p, e);
    writeln!(w, "clock_offset={}", truth.clock_offset).map_err(&e)?;
    writeln!(w, "[cycles]\n{CYCLE_HEADER}").map_err(&e)?;
    for side in FootSide::BOTH {
        for c in &truth.feet[side.index()].cycles {
            writeln!(
                w,
                "{side},{},{},{},{},{},{},{},{}",
                c.contact, c.duration, c.stance, c.wap, c.wap_phase, c.pop, c.pop_phase, c.valley
            )
            .map_err(&e)?;
        }
    }
    writeln!(w, "[cops]\n{COPS_HEADER}").map_err(&e)?;
    for side in FootSide::BOTH {
        for c in &truth.feet[side.index()].cops {
            writeln!(w, "{side},{:.6},{},{},{}", c.t, c.x, c.y, u8::from(c.stance)).map_err(&e)?;
        }
    }
    finish(&path, w)?;
    Ok(path)
}

pub fn read_truth(dir: &Path) -> Result<GroundTruth> {
    let path = dir.join(TRUTH_FILE);
    let text = read_text(&path)?;
    let mut lines = text.lines().enumerate();
    let bad = |i: usize, m: &str| Error::parse(&path, format!("line {}: {m}", i + 1));

    let (i, first) = lines.next().ok_or_else(|| bad(0, "empty file"))?;
    let clock_offset = first
        .strip_prefix("clock_offset=")
        .ok_or_else(|| bad(i, "expected clock_offset"))
        .and_then(|v| parse_f64(&path, i + 1, v))?;
    let mut feet: [FootTruth; 2] = Default::default();
    let mut section = "";
    for (i, line) in lines {
        match line {
            "[cycles]" | "[cops]" => {
                section = if line == "[cycles]" { "cycles" } else { "cops" };
                continue;
            }
            CYCLE_HEADER | COPS_HEADER => continue,
            "" => continue,
            _ => {}
        }
        let fields: Vec<&str> = line.split(',').collect();
        let side: FootSide = fields[0].parse().map_err(|_| bad(i, "bad foot"))?;
        let nums = fields[1..]
            .iter()
            .map(|f| parse_f64(&path, i + 1, f))
            .collect::<Result<Vec<f64>>>()?;
        match (section, nums.len()) {
            ("cycles", 8) => feet[side.index()].cycles.push(CycleTruth {
                contact: nums[0],
                duration: nums[1],
                stance: nums[2],
                wap: nums[3],
                wap_phase: nums[4],
                pop: nums[5],
                pop_phase: nums[6],
                valley: nums[7],
            }),
            ("cops", 4) => feet[side.index()].cops.push(CopsTruth {
                t: nums[0],
                x: nums[1],
                y: nums[2],
                stance: nums[3] != 0.0,
            }),
            _ => return Err(bad(i, "unexpected row")),
        }
    }
    Ok(GroundTruth { clock_offset, feet })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgait::{generate_trial, subject_profile, SynthConfig};

    fn trial() -> crate::synthgait::SynthTrial {
        let cfg = SynthConfig {
            duration_s: 6.0,
            ..SynthConfig::default()
        };
        generate_trial(&subject_profile(1, 0), 0.7, &cfg, 5, None).unwrap()
    }

    fn close(a: &TrialRecord, b: &TrialRecord) {
        assert_eq!(a.subject_id, b.subject_id);
        assert_eq!(a.speed, b.speed);
        assert_eq!(a.body_weight, b.body_weight);
        for (fa, fb) in a.feet.iter().zip(&b.feet) {
            assert_eq!(fa.pressure.len(), fb.pressure.len());
            for (x, y) in fa.pressure.iter().zip(&fb.pressure) {
                assert!((x.t - y.t).abs() < 1e-6);
                assert_eq!(x.values, y.values);
            }
            for (x, y) in fa.imu.iter().zip(&fb.imu) {
                assert!((x.t - y.t).abs() < 1e-6);
                assert_eq!((x.accel, x.gyro), (y.accel, y.gyro));
            }
            for (x, y) in fa.vgrf.iter().zip(&fb.vgrf) {
                assert!((x.t - y.t).abs() < 1e-6);
                assert_eq!(x.fz, y.fz);
            }
        }
    }

    #[test]
    fn trial_round_trip() {
        let t = trial();
        let dir = tempfile::tempdir().unwrap();
        let files = write_trial(dir.path(), &t.record).unwrap();
        assert_eq!(files.len(), 7);
        let back = read_trial(dir.path()).unwrap();
        close(&t.record, &back);
        // writing what was read gives the same bytes
        let dir2 = tempfile::tempdir().unwrap();
        write_trial(dir2.path(), &back).unwrap();
        for f in &files {
            let name = f.file_name().unwrap();
            assert_eq!(fs::read(f).unwrap(), fs::read(dir2.path().join(name)).unwrap());
        }
    }

    #[test]
    fn unknown_header_rejected() {
        let t = trial();
        let dir = tempfile::tempdir().unwrap();
        write_trial(dir.path(), &t.record).unwrap();
        let p = dir.path().join("left_imu.csv");
        let text = fs::read_to_string(&p).unwrap().replacen("gz", "gq", 1);
        fs::write(&p, text).unwrap();
        assert!(matches!(read_trial(dir.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn unknown_meta_key_rejected() {
        let t = trial();
        let dir = tempfile::tempdir().unwrap();
        write_trial(dir.path(), &t.record).unwrap();
        let p = dir.path().join(META_FILE);
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("height_m=1.8\n");
        fs::write(&p, text).unwrap();
        assert!(matches!(read_trial(dir.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn truth_round_trip() {
        let t = trial();
        let dir = tempfile::tempdir().unwrap();
        write_truth(dir.path(), &t.truth).unwrap();
        let back = read_truth(dir.path()).unwrap();
        assert_eq!(back.clock_offset, t.truth.clock_offset);
        assert_eq!(back.feet[0].cycles, t.truth.feet[0].cycles);
        assert_eq!(back.feet[1].cops.len(), t.truth.feet[1].cops.len());
    }
}

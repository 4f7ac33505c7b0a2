//! Shared domain types: sensor layout, raw sensor samples, trial records and
//! the channel manifest that fixes the feature ordering for every model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal insole (pressure + IMU) sampling period, seconds.
pub const INSOLE_PERIOD_S: f64 = 0.02;
/// Reference force-plate sampling period, seconds.
pub const REFERENCE_PERIOD_S: f64 = 0.01;
/// Walking speeds of the protocol, m/s.
pub const PROTOCOL_SPEEDS: [f64; 3] = [0.7, 1.0, 1.4];
/// A stream gap longer than this many nominal periods is reported.
pub const GAP_TOLERANCE_PERIODS: f64 = 3.0;

const DEFAULT_LAYOUT: &str = include_str!("../data/insole_layout_96.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FootSide {
    Left,
    Right,
}

impl FootSide {
    pub const BOTH: [FootSide; 2] = [FootSide::Left, FootSide::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            FootSide::Left => "left",
            FootSide::Right => "right",
        }
    }

    pub fn index(self) -> usize {
        match self {
            FootSide::Left => 0,
            FootSide::Right => 1,
        }
    }
}

impl fmt::Display for FootSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FootSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "left" | "L" => Ok(FootSide::Left),
            "right" | "R" => Ok(FootSide::Right),
            other => Err(Error::Config(format!("unknown foot side `{other}`"))),
        }
    }
}

/// Planar coordinates of the pressure sensors, millimeters.
///
/// `x` runs anterior-posterior (heel at 0), `y` medial-lateral.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorArrayLayout {
    coords: Vec<(f64, f64)>,
}

impl SensorArrayLayout {
    pub fn new(coords: Vec<(f64, f64)>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidLayout("layout has no sensors".into()));
        }
        if coords.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidLayout("non-finite coordinate".into()));
        }
        let mut sorted = coords.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidLayout("two sensors share a coordinate".into()));
        }
        Ok(Self { coords })
    }

    /// The 96-sensor insole layout shipped with the crate.
    pub fn insole_96() -> Self {
        Self::parse_csv(DEFAULT_LAYOUT).expect("bundled layout is valid")
    }

    /// Parses `index,x_mm,y_mm` rows; `#` starts a comment line.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut coords = Vec::new();
        let mut header_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != "index,x_mm,y_mm" {
                    return Err(Error::InvalidLayout(format!("unexpected header `{line}`")));
                }
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::InvalidLayout(format!("line {}: expected 3 columns", lineno + 1)));
            }
            let idx: usize = cols[0]
                .parse()
                .map_err(|_| Error::InvalidLayout(format!("line {}: bad index", lineno + 1)))?;
            if idx != coords.len() + 1 {
                return Err(Error::InvalidLayout(format!("line {}: indices must run 1..I", lineno + 1)));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidLayout(format!("line {}: bad coordinate", lineno + 1)))
            };
            coords.push((parse(cols[1])?, parse(cols[2])?));
        }
        Self::new(coords)
    }

    pub fn sensor_count(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    /// Mean of all sensor coordinates.
    pub fn centroid(&self) -> (f64, f64) {
        let n = self.coords.len() as f64;
        let (sx, sy) = self
            .coords
            .iter()
            .fold((0.0, 0.0), |(ax, ay), (x, y)| (ax + x, ay + y));
        (sx / n, sy / n)
    }

    /// Smallest non-zero spacing between distinct coordinate values along
    /// each axis: `(pitch_x, pitch_y)`.
    pub fn pitch(&self) -> (f64, f64) {
        let axis_pitch = |vals: Vec<f64>| {
            let mut v = vals;
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            v.windows(2)
                .map(|w| w[1] - w[0])
                .filter(|d| *d > 1e-9)
                .fold(f64::INFINITY, f64::min)
        };
        (
            axis_pitch(self.coords.iter().map(|c| c.0).collect()),
            axis_pitch(self.coords.iter().map(|c| c.1).collect()),
        )
    }

    /// Returns a layout whose sensors are the given permutation of this one.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            coords: perm.iter().map(|&i| self.coords[i]).collect(),
        }
    }
}

/// One raw pressure-array reading in device units.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureFrame {
    pub t: f64,
    pub values: Vec<f64>,
}

impl PressureFrame {
    pub fn new(t: f64, values: Vec<f64>) -> Self {
        Self { t, values }
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// One IMU sample. `angle` is filled in by the orientation filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// m/s²
    pub accel: [f64; 3],
    /// rad/s
    pub gyro: [f64; 3],
    /// radians (roll, pitch, yaw)
    pub angle: Option<[f64; 3]>,
}

impl ImuSample {
    pub fn new(t: f64, accel: [f64; 3], gyro: [f64; 3]) -> Self {
        Self {
            t,
            accel,
            gyro,
            angle: None,
        }
    }
}

/// Reference vertical force sample, newtons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceSample {
    pub t: f64,
    pub fz: f64,
}

/// Streams recorded for one foot during one trial.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FootStreams {
    pub pressure: Vec<PressureFrame>,
    pub imu: Vec<ImuSample>,
    pub vgrf: Vec<ForceSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub subject_id: String,
    /// m/s
    pub speed: f64,
    /// newtons
    pub body_weight: f64,
    /// Indexed by [`FootSide::index`].
    pub feet: [FootStreams; 2],
}

impl TrialRecord {
    pub fn foot(&self, side: FootSide) -> &FootStreams {
        &self.feet[side.index()]
    }

    pub fn foot_mut(&mut self, side: FootSide) -> &mut FootStreams {
        &mut self.feet[side.index()]
    }

    /// Stable name used for trial directories and window files.
    pub fn trial_name(&self) -> String {
        format!("{}_{}", self.subject_id, speed_tag(self.speed))
    }
}

/// `0.7` -> `"0p7"`, used in file names.
pub fn speed_tag(speed: f64) -> String {
    format!("{speed:.1}").replace('.', "p")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StreamKind {
    Pressure,
    Imu,
    Vgrf,
}

impl StreamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StreamKind::Pressure => "pressure",
            StreamKind::Imu => "imu",
            StreamKind::Vgrf => "vgrf",
        }
    }

    pub fn nominal_period(self) -> f64 {
        match self {
            StreamKind::Pressure | StreamKind::Imu => INSOLE_PERIOD_S,
            StreamKind::Vgrf => REFERENCE_PERIOD_S,
        }
    }
}

/// A data-quality observation about a trial.
#[derive(Debug, Clone, PartialEq)]
pub enum Finding {
    NonPositiveBodyWeight(f64),
    UnknownSpeed(f64),
    EmptyStream {
        foot: FootSide,
        stream: StreamKind,
    },
    NonMonotonicTime {
        foot: FootSide,
        stream: StreamKind,
        index: usize,
    },
    NonFinite {
        foot: FootSide,
        stream: StreamKind,
        index: usize,
    },
    NegativePressure {
        foot: FootSide,
        index: usize,
    },
    WrongSensorCount {
        foot: FootSide,
        index: usize,
        got: usize,
    },
    Gap {
        foot: FootSide,
        stream: StreamKind,
        start: f64,
        end: f64,
    },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::NonPositiveBodyWeight(bw) => write!(f, "body_weight must be > 0 (got {bw})"),
            Finding::UnknownSpeed(s) => write!(f, "speed {s} m/s is not a protocol speed"),
            Finding::EmptyStream { foot, stream } => {
                write!(f, "{foot} {} stream is empty", stream.as_str())
            }
            Finding::NonMonotonicTime { foot, stream, index } => write!(
                f,
                "{foot} {} timestamps not strictly increasing at sample {index}",
                stream.as_str()
            ),
            Finding::NonFinite { foot, stream, index } => {
                write!(f, "{foot} {} sample {index} is not finite", stream.as_str())
            }
            Finding::NegativePressure { foot, index } => {
                write!(f, "{foot} pressure frame {index} has a negative reading")
            }
            Finding::WrongSensorCount { foot, index, got } => {
                write!(f, "{foot} pressure frame {index} has {got} readings")
            }
            Finding::Gap {
                foot,
                stream,
                start,
                end,
            } => write!(
                f,
                "{foot} {} gap from {start:.6} s to {end:.6} s",
                stream.as_str()
            ),
        }
    }
}

/// Checks trial invariants and reports every violation found.
///
/// An empty result means the trial is usable as-is.
pub fn validate_trial(record: &TrialRecord, layout: &SensorArrayLayout) -> Vec<Finding> {
    let mut findings = Vec::new();
    if !(record.body_weight > 0.0) {
        findings.push(Finding::NonPositiveBodyWeight(record.body_weight));
    }
    if !PROTOCOL_SPEEDS
        .iter()
        .any(|s| (s - record.speed).abs() < 1e-9)
    {
        findings.push(Finding::UnknownSpeed(record.speed));
    }
    for foot in FootSide::BOTH {
        let streams = record.foot(foot);

        let pressure_t: Vec<f64> = streams.pressure.iter().map(|p| p.t).collect();
        check_times(&mut findings, foot, StreamKind::Pressure, &pressure_t);
        for (i, frame) in streams.pressure.iter().enumerate() {
            if frame.values.len() != layout.sensor_count() {
                findings.push(Finding::WrongSensorCount {
                    foot,
                    index: i,
                    got: frame.values.len(),
                });
            }
            if frame.values.iter().any(|v| !v.is_finite()) {
                findings.push(Finding::NonFinite {
                    foot,
                    stream: StreamKind::Pressure,
                    index: i,
                });
            } else if frame.values.iter().any(|v| *v < 0.0) {
                findings.push(Finding::NegativePressure { foot, index: i });
            }
        }

        let imu_t: Vec<f64> = streams.imu.iter().map(|s| s.t).collect();
        check_times(&mut findings, foot, StreamKind::Imu, &imu_t);
        for (i, s) in streams.imu.iter().enumerate() {
            let angle_ok = s.angle.map_or(true, |a| a.iter().all(|v| v.is_finite()));
            if !(s.accel.iter().chain(s.gyro.iter()).all(|v| v.is_finite()) && angle_ok) {
                findings.push(Finding::NonFinite {
                    foot,
                    stream: StreamKind::Imu,
                    index: i,
                });
            }
        }

        let vgrf_t: Vec<f64> = streams.vgrf.iter().map(|s| s.t).collect();
        check_times(&mut findings, foot, StreamKind::Vgrf, &vgrf_t);
        for (i, s) in streams.vgrf.iter().enumerate() {
            if !s.fz.is_finite() {
                findings.push(Finding::NonFinite {
                    foot,
                    stream: StreamKind::Vgrf,
                    index: i,
                });
            }
        }
    }
    findings
}

fn check_times(findings: &mut Vec<Finding>, foot: FootSide, stream: StreamKind, t: &[f64]) {
    if t.is_empty() {
        findings.push(Finding::EmptyStream { foot, stream });
        return;
    }
    let max_gap = GAP_TOLERANCE_PERIODS * stream.nominal_period();
    for (i, w) in t.windows(2).enumerate() {
        if !w[0].is_finite() || !w[1].is_finite() {
            findings.push(Finding::NonFinite {
                foot,
                stream,
                index: i + 1,
            });
        } else if w[1] <= w[0] {
            findings.push(Finding::NonMonotonicTime {
                foot,
                stream,
                index: i + 1,
            });
        } else if w[1] - w[0] > max_gap + 1e-9 {
            findings.push(Finding::Gap {
                foot,
                stream,
                start: w[0],
                end: w[1],
            });
        }
    }
}

/// Model feature groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureSet {
    /// IMU only: acceleration, angular velocity and foot angle of both feet.
    T1,
    /// Center of the pressed sensors of both feet.
    T2,
    /// T1 and T2 fused.
    T3,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::T1, FeatureSet::T2, FeatureSet::T3];

    pub fn channel_count(self) -> usize {
        match self {
            FeatureSet::T1 => 18,
            FeatureSet::T2 => 4,
            FeatureSet::T3 => 22,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            FeatureSet::T1 => 1,
            FeatureSet::T2 => 2,
            FeatureSet::T3 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(FeatureSet::T1),
            2 => Some(FeatureSet::T2),
            3 => Some(FeatureSet::T3),
            _ => None,
        }
    }

    fn includes(self, signal: Signal) -> bool {
        match self {
            FeatureSet::T1 => signal != Signal::Cops,
            FeatureSet::T2 => signal == Signal::Cops,
            FeatureSet::T3 => true,
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.code())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "T1" | "t1" => Ok(FeatureSet::T1),
            "T2" | "t2" => Ok(FeatureSet::T2),
            "T3" | "t3" => Ok(FeatureSet::T3),
            other => Err(Error::Config(format!("unknown feature set `{other}`"))),
        }
    }
}

/// Signal names; declaration order is alphabetical so `Ord` sorts by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Signal {
    Accel,
    Angle,
    Cops,
    Gyro,
}

impl Signal {
    pub fn as_str(self) -> &'static str {
        match self {
            Signal::Accel => "accel",
            Signal::Angle => "angle",
            Signal::Cops => "cops",
            Signal::Gyro => "gyro",
        }
    }

    pub fn axes(self) -> &'static [Axis] {
        match self {
            Signal::Cops => &[Axis::X, Axis::Y],
            _ => &[Axis::X, Axis::Y, Axis::Z],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn as_char(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
            Axis::Z => 'z',
        }
    }

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Channel {
    pub foot: FootSide,
    pub signal: Signal,
    pub axis: Axis,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{}.{}",
            self.foot.as_str(),
            self.signal.as_str(),
            self.axis.as_char()
        )
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split('.').collect();
        let bad = || Error::InvalidManifest(format!("bad channel descriptor `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let foot = parts[0].parse().map_err(|_| bad())?;
        let signal = match parts[1] {
            "accel" => Signal::Accel,
            "angle" => Signal::Angle,
            "cops" => Signal::Cops,
            "gyro" => Signal::Gyro,
            _ => return Err(bad()),
        };
        let axis = match parts[2] {
            "x" => Axis::X,
            "y" => Axis::Y,
            "z" => Axis::Z,
            _ => return Err(bad()),
        };
        if !signal.axes().contains(&axis) {
            return Err(bad());
        }
        Ok(Channel { foot, signal, axis })
    }
}

/// Ordered channel list of a feature set, sorted by (foot, signal, axis).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChannelManifest {
    feature_set: FeatureSet,
    channels: Vec<Channel>,
}

impl ChannelManifest {
    pub fn for_feature_set(feature_set: FeatureSet) -> Self {
        let mut channels = Vec::with_capacity(feature_set.channel_count());
        for foot in FootSide::BOTH {
            for signal in [Signal::Accel, Signal::Angle, Signal::Cops, Signal::Gyro] {
                if feature_set.includes(signal) {
                    for &axis in signal.axes() {
                        channels.push(Channel { foot, signal, axis });
                    }
                }
            }
        }
        channels.sort();
        Self {
            feature_set,
            channels,
        }
    }

    /// Builds a manifest from an explicit list, which must be exactly the
    /// channel set of `feature_set` (in any order).
    pub fn from_channels(feature_set: FeatureSet, mut channels: Vec<Channel>) -> Result<Self> {
        if channels.len() != feature_set.channel_count() {
            return Err(Error::InvalidManifest(format!(
                "{feature_set} requires {} channels, got {}",
                feature_set.channel_count(),
                channels.len()
            )));
        }
        channels.sort();
        let expected = Self::for_feature_set(feature_set);
        if channels != expected.channels {
            return Err(Error::InvalidManifest(format!(
                "channel set does not match {feature_set}"
            )));
        }
        Ok(expected)
    }

    pub fn feature_set(&self) -> FeatureSet {
        self.feature_set
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn position(&self, channel: &Channel) -> Option<usize> {
        self.channels.binary_search(channel).ok()
    }

    /// Positions of this manifest's channels inside `superset`.
    pub fn indices_in(&self, superset: &ChannelManifest) -> Result<Vec<usize>> {
        self.channels
            .iter()
            .map(|c| {
                superset.position(c).ok_or_else(|| {
                    Error::InvalidManifest(format!(
                        "manifest {} [{}] is not contained in manifest {} [{}]",
                        self.feature_set,
                        self,
                        superset.feature_set,
                        superset
                    ))
                })
            })
            .collect()
    }
}

impl fmt::Display for ChannelManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.channels.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl ChannelManifest {
    /// Inverse of `Display`, prefixed by the feature-set tag: `T2:left.cops.x,...`.
    pub fn to_tagged_string(&self) -> String {
        format!("{}:{}", self.feature_set, self)
    }

    pub fn parse_tagged(s: &str) -> Result<Self> {
        let (tag, list) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidManifest(format!("missing feature-set tag in `{s}`")))?;
        let fs: FeatureSet = tag
            .parse()
            .map_err(|_| Error::InvalidManifest(format!("bad feature-set tag `{tag}`")))?;
        let channels = list
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<Channel>>>()?;
        Self::from_channels(fs, channels)
    }
}

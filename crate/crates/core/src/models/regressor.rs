//! A trained model bundled with its channel manifest and input scaler, and
//! the checksummed model file.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::forest::{Node, Tree};
use super::{
    forest_train, lstm_train, mlp_train, Activation, Aggregation, BiLstmModel, ForestConfig, ForestModel,
    LstmConfig, MlpConfig, MlpModel, TrainConfig, TrainLog,
};
use crate::error::{Error, Result};
use crate::preprocess::{GaitCycleWindow, MinMaxScaler, WINDOW_LEN};
use crate::types::{ChannelManifest, FeatureSet, FootSide};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Rf,
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Mlp, ModelKind::Rf, ModelKind::Lstm];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Rf => "rf",
            ModelKind::Lstm => "lstm",
        }
    }

    fn tag(self) -> u8 {
        match self {
            ModelKind::Mlp => 1,
            ModelKind::Rf => 2,
            ModelKind::Lstm => 3,
        }
    }

    /// Pointwise models get their output smoothed before evaluation.
    pub fn is_pointwise(self) -> bool {
        !matches!(self, ModelKind::Lstm)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mlp" | "ann" => Ok(ModelKind::Mlp),
            "rf" | "forest" => Ok(ModelKind::Rf),
            "lstm" => Ok(ModelKind::Lstm),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub feature_set: FeatureSet,
    pub train: TrainConfig,
    pub mlp: MlpConfig,
    pub lstm: LstmConfig,
    pub forest: ForestConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Lstm,
            feature_set: FeatureSet::T3,
            train: TrainConfig::default(),
            mlp: MlpConfig::default(),
            lstm: LstmConfig::default(),
            forest: ForestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelBody {
    Mlp(MlpModel),
    Forest(ForestModel),
    Lstm(BiLstmModel),
}

/// A trained model ready to map raw windows (in `manifest` order) to vGRF.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub manifest: ChannelManifest,
    pub scaler: MinMaxScaler,
    pub config: ModelConfig,
    pub body: ModelBody,
}

fn foot_indicator(foot: FootSide) -> f64 {
    foot.index() as f64
}

/// Per-step rows `[scaled channels..., foot]` of the first `steps` samples.
fn pointwise_rows(w: &GaitCycleWindow, steps: usize, out: &mut Vec<f64>) {
    let c = w.channel_count();
    for t in 0..steps {
        for ch in 0..c {
            out.push(w.x[ch * WINDOW_LEN + t]);
        }
        out.push(foot_indicator(w.foot));
    }
}

fn check_channels(windows: &[GaitCycleWindow], manifest: &ChannelManifest) -> Result<()> {
    for w in windows {
        if w.channel_count() != manifest.len() || w.x.len() != manifest.len() * WINDOW_LEN {
            return Err(Error::ShapeMismatch(format!(
                "window has {} channels, manifest {} has {}",
                w.channel_count(),
                manifest.feature_set(),
                manifest.len()
            )));
        }
    }
    Ok(())
}

/// Fits the scaler on `windows` and trains the configured model.
///
/// Pointwise models see only the valid part of each window; the recurrent
/// model sees whole windows including padding.
pub fn train_regressor(
    windows: &[GaitCycleWindow],
    manifest: &ChannelManifest,
    cfg: &ModelConfig,
) -> Result<(Regressor, TrainLog)> {
    if windows.is_empty() {
        return Err(Error::EmptyData);
    }
    check_channels(windows, manifest)?;
    let scaler = MinMaxScaler::fit(windows)?;
    let scaled = windows
        .iter()
        .map(|w| scaler.apply(w))
        .collect::<Result<Vec<_>>>()?;
    let (body, log) = match cfg.kind {
        ModelKind::Lstm => {
            let xs: Vec<&[f64]> = scaled.iter().map(|w| w.x.as_slice()).collect();
            let ys: Vec<&[f64]> = scaled.iter().map(|w| w.y.as_slice()).collect();
            let (m, log) = lstm_train(&xs, &ys, WINDOW_LEN, &cfg.lstm, &cfg.train)?;
            (ModelBody::Lstm(m), log)
        }
        kind => {
            let d = manifest.len() + 1;
            let n: usize = scaled.iter().map(|w| w.valid_length).sum();
            let mut x = Vec::with_capacity(n * d);
            let mut y = Vec::with_capacity(n);
            for w in &scaled {
                pointwise_rows(w, w.valid_length, &mut x);
                y.extend_from_slice(&w.y[..w.valid_length]);
            }
            if kind == ModelKind::Mlp {
                let (m, log) = mlp_train(&x, &y, d, &cfg.mlp, &cfg.train)?;
                (ModelBody::Mlp(m), log)
            } else {
                (ModelBody::Forest(forest_train(&x, &y, d, &cfg.forest)?), TrainLog::default())
            }
        }
    };
    Ok((
        Regressor {
            manifest: manifest.clone(),
            scaler,
            config: cfg.clone(),
            body,
        },
        log,
    ))
}

impl Regressor {
    pub fn kind(&self) -> ModelKind {
        match self.body {
            ModelBody::Mlp(_) => ModelKind::Mlp,
            ModelBody::Forest(_) => ModelKind::Rf,
            ModelBody::Lstm(_) => ModelKind::Lstm,
        }
    }

    /// Raw (unfiltered) per-step predictions in BW for each window.
    pub fn predict(&self, windows: &[GaitCycleWindow]) -> Result<Vec<Vec<f64>>> {
        check_channels(windows, &self.manifest)?;
        windows
            .par_iter()
            .map(|w| {
                let s = self.scaler.apply(w)?;
                match &self.body {
                    ModelBody::Lstm(m) => m.predict(&s.x, WINDOW_LEN),
                    ModelBody::Mlp(m) => {
                        let mut x = Vec::new();
                        pointwise_rows(&s, WINDOW_LEN, &mut x);
                        m.forward_batch(&x, WINDOW_LEN)
                    }
                    ModelBody::Forest(m) => {
                        let mut x = Vec::new();
                        pointwise_rows(&s, WINDOW_LEN, &mut x);
                        x.chunks(m.input_size()).map(|r| m.predict(r)).collect()
                    }
                }
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MODEL_MAGIC);
        b.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        b.push(self.kind().tag());
        put_str(&mut b, &self.manifest.to_tagged_string());
        put_str(&mut b, &toml::to_string(&self.config).expect("model config serializes"));
        put_u32(&mut b, self.scaler.channel_count() as u32);
        for (lo, hi) in self.scaler.min.iter().zip(&self.scaler.max) {
            put_f64(&mut b, *lo);
            put_f64(&mut b, *hi);
        }
        match &self.body {
            ModelBody::Mlp(m) => {
                b.push(m.activation().code());
                put_u32(&mut b, m.sizes().len() as u32);
                for s in m.sizes() {
                    put_u32(&mut b, *s as u32);
                }
                put_params(&mut b, m.params());
            }
            ModelBody::Lstm(m) => {
                put_u32(&mut b, m.input_size() as u32);
                put_u32(&mut b, m.hidden() as u32);
                put_u32(&mut b, m.layers() as u32);
                put_f64(&mut b, m.dropout());
                put_params(&mut b, m.params());
            }
            ModelBody::Forest(m) => {
                b.push(match m.aggregation() {
                    Aggregation::Mean => 0,
                    Aggregation::Median => 1,
                });
                put_u32(&mut b, m.input_size() as u32);
                put_u32(&mut b, m.min_samples_leaf() as u32);
                put_u32(&mut b, m.trees().len() as u32);
                for t in m.trees() {
                    put_u32(&mut b, t.nodes.len() as u32);
                    for n in &t.nodes {
                        put_u32(&mut b, n.feature);
                        put_f64(&mut b, n.threshold);
                        put_u32(&mut b, n.left);
                        put_u32(&mut b, n.right);
                        put_f64(&mut b, n.value);
                        put_u32(&mut b, n.samples);
                    }
                }
            }
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 4 + 2 + 32 || &buf[..4] != MODEL_MAGIC {
            return Err(Error::CorruptFile("not a model file".into()));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let (body, digest) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::CorruptFile("checksum mismatch".into()));
        }
        let mut c = Reader { buf: body, pos: 6 };
        let tag = c.u8()?;
        let manifest = ChannelManifest::parse_tagged(&c.string()?)?;
        let config: ModelConfig = toml::from_str(&c.string()?)
            .map_err(|e| Error::CorruptFile(format!("hyperparameters: {e}")))?;
        let nc = c.u32()? as usize;
        if nc != manifest.len() {
            return Err(Error::CorruptFile("scaler does not match manifest".into()));
        }
        let mut min = Vec::with_capacity(nc);
        let mut max = Vec::with_capacity(nc);
        for _ in 0..nc {
            min.push(c.f64()?);
            max.push(c.f64()?);
        }
        let scaler = MinMaxScaler { min, max };
        let bad = |e: Error| Error::CorruptFile(e.to_string());
        let body = match tag {
            1 => {
                let act = Activation::from_code(c.u8()?)
                    .ok_or_else(|| Error::CorruptFile("bad activation".into()))?;
                let n = c.u32()? as usize;
                let sizes = (0..n).map(|_| c.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
                let params = c.params()?;
                ModelBody::Mlp(MlpModel::from_parts(sizes, act, params).map_err(bad)?)
            }
            3 => {
                let input = c.u32()? as usize;
                let hidden = c.u32()? as usize;
                let layers = c.u32()? as usize;
                let dropout = c.f64()?;
                let params = c.params()?;
                ModelBody::Lstm(BiLstmModel::from_parts(input, hidden, layers, dropout, params).map_err(bad)?)
            }
            2 => {
                let aggregation = match c.u8()? {
                    0 => Aggregation::Mean,
                    1 => Aggregation::Median,
                    a => return Err(Error::CorruptFile(format!("bad aggregation {a}"))),
                };
                let input = c.u32()? as usize;
                let leaf = c.u32()? as usize;
                let nt = c.u32()? as usize;
                let mut trees = Vec::with_capacity(nt.min(body.len()));
                for _ in 0..nt {
                    let nn = c.u32()? as usize;
                    let mut nodes = Vec::with_capacity(nn.min(body.len()));
                    for _ in 0..nn {
                        nodes.push(Node {
                            feature: c.u32()?,
                            threshold: c.f64()?,
                            left: c.u32()?,
                            right: c.u32()?,
                            value: c.f64()?,
                            samples: c.u32()?,
                        });
                    }
                    trees.push(Tree { nodes });
                }
                ModelBody::Forest(ForestModel::from_parts(input, aggregation, leaf, trees).map_err(bad)?)
            }
            t => return Err(Error::CorruptFile(format!("unknown model kind tag {t}"))),
        };
        if c.pos != c.buf.len() {
            return Err(Error::CorruptFile("trailing bytes".into()));
        }
        let reg = Regressor {
            manifest,
            scaler,
            config,
            body,
        };
        if reg.kind() != reg.config.kind {
            return Err(Error::CorruptFile("model kind does not match hyperparameters".into()));
        }
        Ok(reg)
    }
}

const MODEL_MAGIC: &[u8; 4] = b"IVGM";
pub const MODEL_FORMAT_VERSION: u16 = 1;

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(b: &mut Vec<u8>, v: f64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    put_u32(b, s.len() as u32);
    b.extend_from_slice(s.as_bytes());
}

fn put_params(b: &mut Vec<u8>, p: &[f64]) {
    b.extend_from_slice(&(p.len() as u64).to_le_bytes());
    for v in p {
        put_f64(b, *v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptFile("unexpected end of model data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CorruptFile("invalid UTF-8".into()))
    }

    fn params(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::CorruptFile("parameter block exceeds file".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn save_model(path: &std::path::Path, model: &Regressor) -> Result<()> {
    std::fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &std::path::Path) -> Result<Regressor> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Regressor::from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::GaitCycleWindow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn windows(n: usize, fs: FeatureSet, seed: u64) -> Vec<GaitCycleWindow> {
        let c = fs.channel_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let valid = rng.gen_range(90..130);
                let phase: f64 = rng.gen_range(0.0..1.0);
                let x: Vec<f64> = (0..c * WINDOW_LEN)
                    .map(|k| ((k % WINDOW_LEN) as f64 * 0.05 + phase + (k / WINDOW_LEN) as f64).sin())
                    .collect();
                let y: Vec<f64> = (0..WINDOW_LEN)
                    .map(|t| if t < valid * 6 / 10 { (t as f64 * 0.1 + phase).sin().abs() } else { 0.0 })
                    .collect();
                GaitCycleWindow {
                    subject_id: format!("S{:02}", i % 3),
                    speed: 1.0,
                    foot: if i % 2 == 0 { FootSide::Left } else { FootSide::Right },
                    cycle_index: i as u32,
                    x,
                    y,
                    valid_length: valid,
                }
            })
            .collect()
    }

    fn small_config(kind: ModelKind, fs: FeatureSet) -> ModelConfig {
        ModelConfig {
            kind,
            feature_set: fs,
            train: TrainConfig {
                epochs: 2,
                batch_size: 8,
                ..TrainConfig::default()
            },
            mlp: MlpConfig::default(),
            lstm: LstmConfig {
                hidden: 4,
                layers: 2,
                ..LstmConfig::default()
            },
            forest: ForestConfig {
                trees: 5,
                max_samples: Some(300),
                ..ForestConfig::default()
            },
        }
    }

    #[test]
    fn save_load_round_trip_for_every_kind() {
        let fs = FeatureSet::T2;
        let manifest = ChannelManifest::for_feature_set(fs);
        let ws = windows(12, fs, 1);
        for kind in ModelKind::ALL {
            let (m, _) = train_regressor(&ws, &manifest, &small_config(kind, fs)).unwrap();
            let bytes = m.to_bytes();
            let back = Regressor::from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.predict(&ws).unwrap(), m.predict(&ws).unwrap());

            assert!(matches!(
                Regressor::from_bytes(&bytes[..bytes.len() - 10]),
                Err(Error::CorruptFile(_))
            ));
            let mut bumped = bytes.clone();
            bumped[4] += 1;
            assert!(matches!(Regressor::from_bytes(&bumped), Err(Error::VersionMismatch { .. })));
            let mut flipped = bytes.clone();
            let mid = flipped.len() / 2;
            flipped[mid] ^= 0x40;
            assert!(matches!(Regressor::from_bytes(&flipped), Err(Error::CorruptFile(_))));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let fs = FeatureSet::T2;
        let manifest = ChannelManifest::for_feature_set(fs);
        let ws = windows(10, fs, 2);
        for kind in ModelKind::ALL {
            let cfg = small_config(kind, fs);
            let a = train_regressor(&ws, &manifest, &cfg).unwrap().0.to_bytes();
            let b = train_regressor(&ws, &manifest, &cfg).unwrap().0.to_bytes();
            assert_eq!(a, b, "{kind}");
        }
    }

    #[test]
    fn channel_count_checked() {
        let ws = windows(4, FeatureSet::T1, 3);
        let manifest = ChannelManifest::for_feature_set(FeatureSet::T2);
        let cfg = small_config(ModelKind::Mlp, FeatureSet::T2);
        assert!(matches!(train_regressor(&ws, &manifest, &cfg), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn predictions_have_window_length() {
        let fs = FeatureSet::T2;
        let manifest = ChannelManifest::for_feature_set(fs);
        let ws = windows(6, fs, 4);
        for kind in ModelKind::ALL {
            let (m, _) = train_regressor(&ws, &manifest, &small_config(kind, fs)).unwrap();
            for p in m.predict(&ws).unwrap() {
                assert_eq!(p.len(), WINDOW_LEN);
                assert!(p.iter().all(|v| v.is_finite()));
            }
        }
    }
}

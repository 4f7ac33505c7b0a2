//! Subcommand implementations behind the `insole-vgrf` binary.
//!
//! Every command reads and writes plain files under the output root:
//!
//! ```text
//! <out>/trials/<subject>_<speed>/   simulate
//! <out>/windows/*.ivgw              preprocess
//! <out>/models/<kind>_<fs>.ivgm     train
//! <out>/eval/                       evaluate
//! <out>/report/                     report
//! ```
//!
//! Each stage directory gets `config.effective.toml` and `manifest.txt`
//! (SHA-256, size and path of every produced file).

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::{
    make_split, protocol_stats, read_cycle_traces, run_experiment, write_cycle_traces, write_metric_table,
    write_peak_table, write_summary, ExperimentOptions, ExperimentResult, Predictor, TraceCycle,
};
use crate::models::{load_model, save_model, train_regressor, ModelConfig};
use crate::preprocess::{preprocess_trial, read_windows, write_windows, GaitCycleWindow, WindowSet};
use crate::report::{percentile_band, plot_bands, write_band_table};
use crate::synthgait::generate_dataset;
use crate::trialdir::{read_trial, write_trial, write_truth};
use crate::types::{speed_tag, ChannelManifest, FeatureSet, SensorArrayLayout};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// pipeline findings or data errors
    pub const FINDINGS: i32 = 1;
    /// bad command line or configuration
    pub const USAGE: i32 = 2;
    /// I/O failure or refusal to overwrite output
    pub const IO: i32 = 3;
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => exit::USAGE,
        Error::Io { .. } | Error::OutputExists(_) => exit::IO,
        _ => exit::FINDINGS,
    }
}

/// Result of one command: produced files and anything worth a nonzero exit.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub findings: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.findings.is_empty() {
            exit::OK
        } else {
            exit::FINDINGS
        }
    }
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

/// Creates `dir`, refusing a non-empty one unless `force`, which clears it.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = io(dir, fs::read_dir(dir))?.next().is_some();
        if non_empty {
            if !force {
                return Err(Error::OutputExists(dir.to_path_buf()));
            }
            io(dir, fs::remove_dir_all(dir))?;
        }
    }
    io(dir, fs::create_dir_all(dir))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<PathBuf> {
    io(path, fs::write(path, bytes))?;
    Ok(path.to_path_buf())
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<PathBuf> {
    let file = io(path, fs::File::create(path))?;
    let mut w = BufWriter::new(file);
    io(path, f(&mut w))?;
    io(path, std::io::Write::flush(&mut w))?;
    Ok(path.to_path_buf())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `config.effective.toml` and `manifest.txt` into `dir`.
fn finish(dir: &Path, command: &str, cfg: &RunConfig, mut files: Vec<PathBuf>, findings: Vec<String>) -> Result<Outcome> {
    // the echoed config carries out/jobs, so it stays out of the checksum list
    files.sort();
    let mut text = format!("# insole-vgrf {command}\n# seed={}\n", cfg.seed);
    for f in &files {
        let bytes = io(f, fs::read(f))?;
        let rel = f.strip_prefix(dir).unwrap_or(f);
        text.push_str(&format!("{}\t{}\t{}\n", sha256_hex(&bytes), bytes.len(), rel.display()));
    }
    files.push(write_file(&dir.join("manifest.txt"), text.as_bytes())?);
    files.push(write_file(&dir.join("config.effective.toml"), cfg.to_toml()?.as_bytes())?);
    Ok(Outcome {
        dir: dir.to_path_buf(),
        files,
        findings,
    })
}

fn layout(cfg: &RunConfig) -> Result<SensorArrayLayout> {
    match &cfg.paths.layout {
        Some(p) => {
            let text = io(p, fs::read_to_string(p))?;
            SensorArrayLayout::parse_csv(&text)
        }
        None => Ok(SensorArrayLayout::insole_96()),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = io(dir, fs::read_dir(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    v.sort();
    Ok(v)
}

/// Generates the synthetic dataset as trial directories with ground-truth
/// sidecars.
pub fn cmd_simulate(cfg: &RunConfig, force: bool) -> Result<Outcome> {
    let dir = cfg.trials_dir();
    prepare_dir(&dir, force)?;
    let ds = generate_dataset(&cfg.simulate)?;
    let mut files = Vec::new();
    for trial in &ds.trials {
        let tdir = dir.join(trial.record.trial_name());
        io(&tdir, fs::create_dir_all(&tdir))?;
        files.extend(write_trial(&tdir, &trial.record)?);
        files.push(write_truth(&tdir, &trial.truth)?);
    }
    log::info!("simulate: {} trials in {}", ds.trials.len(), dir.display());
    finish(&dir, "simulate", cfg, files, Vec::new())
}

pub const EXCLUSION_HEADER: &str = "subject\tspeed_mps\tfoot\tcycle\tstart_s\tduration_s\treason";
pub const SYNC_HEADER: &str = "trial\tclock_offset_s\twindows\texclusions";

/// Segments every trial directory into gait-cycle windows. Trials that
/// fail are listed in `findings.tsv` and make the command exit nonzero.
pub fn cmd_preprocess(cfg: &RunConfig, force: bool) -> Result<Outcome> {
    let input = cfg.trials_dir();
    let dir = cfg.windows_dir();
    if !input.is_dir() {
        return Err(Error::MissingInputs(format!("no trial directory at {}", input.display())));
    }
    let trial_dirs: Vec<PathBuf> = sorted_entries(&input)?.into_iter().filter(|p| p.is_dir()).collect();
    if trial_dirs.is_empty() {
        return Err(Error::MissingInputs(format!("no trials under {}", input.display())));
    }
    prepare_dir(&dir, force)?;
    let layout = layout(cfg)?;
    let mut files = Vec::new();
    let mut findings = Vec::new();
    let mut exclusions = vec![EXCLUSION_HEADER.to_string()];
    let mut sync = vec![SYNC_HEADER.to_string()];
    for tdir in &trial_dirs {
        let name = tdir.file_name().unwrap_or_default().to_string_lossy().to_string();
        let result = read_trial(tdir).and_then(|rec| preprocess_trial(&rec, &layout, &cfg.preprocess).map(|tw| (rec, tw)));
        match result {
            Ok((rec, tw)) => {
                let seg = tw.segmentation;
                exclusions.extend(seg.exclusions.iter().map(|e| e.to_string()));
                sync.push(format!(
                    "{}\t{:.6}\t{}\t{}",
                    rec.trial_name(),
                    tw.clock_offset,
                    seg.windows.len(),
                    seg.exclusions.len()
                ));
                let set = WindowSet {
                    manifest: ChannelManifest::for_feature_set(FeatureSet::T3),
                    windows: seg.windows,
                };
                let p = dir.join(format!("{}.ivgw", rec.trial_name()));
                files.push(write_with(&p, |w| write_windows(w, &set))?);
            }
            Err(e) => {
                log::error!("{name}: {e}");
                findings.push(format!("{name}\t{e}"));
            }
        }
    }
    let join = |v: &[String]| v.iter().map(|l| format!("{l}\n")).collect::<String>();
    files.push(write_file(&dir.join("exclusions.tsv"), join(&exclusions).as_bytes())?);
    files.push(write_file(&dir.join("sync.tsv"), join(&sync).as_bytes())?);
    if !findings.is_empty() {
        let mut f = vec!["trial\tfinding".to_string()];
        f.extend(findings.iter().cloned());
        files.push(write_file(&dir.join("findings.tsv"), join(&f).as_bytes())?);
    }
    log::info!(
        "preprocess: {} trials, {} exclusions, {} findings",
        trial_dirs.len(),
        exclusions.len() - 1,
        findings.len()
    );
    finish(&dir, "preprocess", cfg, files, findings)
}

/// Loads every window file of the windows stage, checking that they carry
/// the channels of `needed`.
pub fn load_window_dir(dir: &Path, needed: &[FeatureSet], subjects: &[String]) -> Result<WindowSet> {
    if !dir.is_dir() {
        return Err(Error::MissingInputs(format!("no window directory at {}", dir.display())));
    }
    let paths: Vec<PathBuf> = sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "ivgw"))
        .collect();
    if paths.is_empty() {
        return Err(Error::MissingInputs(format!("no window files in {}", dir.display())));
    }
    let mut manifest: Option<(ChannelManifest, PathBuf)> = None;
    let mut windows: Vec<GaitCycleWindow> = Vec::new();
    for p in &paths {
        let file = io(p, fs::File::open(p))?;
        let set = read_windows(std::io::BufReader::new(file)).map_err(|e| match e {
            Error::CorruptFile(m) => Error::CorruptFile(format!("{}: {m}", p.display())),
            e => e,
        })?;
        for fs_ in needed {
            let wanted = ChannelManifest::for_feature_set(*fs_);
            wanted.indices_in(&set.manifest).map_err(|e| {
                Error::InvalidManifest(format!("window file {}: {e}", p.display()))
            })?;
        }
        match &manifest {
            None => manifest = Some((set.manifest.clone(), p.clone())),
            Some((m, first)) if *m != set.manifest => {
                return Err(Error::InvalidManifest(format!(
                    "window file {} carries {} [{}] but {} carries {} [{}]",
                    p.display(),
                    set.manifest.feature_set(),
                    set.manifest,
                    first.display(),
                    m.feature_set(),
                    m
                )))
            }
            _ => {}
        }
        windows.extend(
            set.windows
                .into_iter()
                .filter(|w| subjects.is_empty() || subjects.contains(&w.subject_id)),
        );
    }
    if windows.is_empty() {
        return Err(Error::MissingInputs("no windows left after the subject filter".into()));
    }
    Ok(WindowSet {
        manifest: manifest.unwrap().0,
        windows,
    })
}

pub fn model_file_name(cfg: &ModelConfig) -> String {
    format!("{}_{}.ivgm", cfg.kind, cfg.feature_set)
}

/// Trains the configured model on all selected windows.
pub fn cmd_train(cfg: &RunConfig, force: bool) -> Result<Outcome> {
    let fs_ = cfg.model.feature_set;
    let set = load_window_dir(&cfg.windows_dir(), &[fs_], &cfg.data.subjects)?;
    let dir = cfg.models_dir();
    prepare_dir(&dir, force)?;
    let manifest = ChannelManifest::for_feature_set(fs_);
    let idx = manifest.indices_in(&set.manifest)?;
    let windows: Vec<GaitCycleWindow> = set.windows.iter().map(|w| w.select(&idx)).collect();
    let (model, log) = train_regressor(&windows, &manifest, &cfg.model)?;
    let path = dir.join(model_file_name(&cfg.model));
    save_model(&path, &model)?;
    // load round trip before reporting success
    let back = load_model(&path)?;
    if back != model {
        return Err(Error::CorruptFile(format!("{} does not load back identically", path.display())));
    }
    let mut files = vec![path];
    let mut text = String::from("epoch\tloss\n");
    for (i, l) in log.epoch_losses.iter().enumerate() {
        text.push_str(&format!("{}\t{l:.9}\n", i + 1));
    }
    files.push(write_file(&dir.join("train_log.tsv"), text.as_bytes())?);
    log::info!("train: {} on {} windows", model_file_name(&cfg.model), windows.len());
    finish(&dir, "train", cfg, files, Vec::new())
}

fn experiment_stem(r: &ExperimentResult) -> String {
    format!("{}_{}_{}", r.protocol, r.model, r.feature_set)
}

/// Runs the configured protocol × model × feature set grid and writes the
/// metric table, summary and optional traces.
pub fn cmd_evaluate(cfg: &RunConfig, force: bool) -> Result<Outcome> {
    let ev = &cfg.evaluate;
    let set = load_window_dir(&cfg.windows_dir(), &ev.feature_sets, &cfg.data.subjects)?;
    let dir = cfg.eval_dir();
    prepare_dir(&dir, force)?;
    let predictors: Vec<Predictor> = if ev.oracle {
        vec![Predictor::Oracle]
    } else {
        ev.models
            .iter()
            .map(|&kind| {
                Predictor::Model(Box::new(ModelConfig {
                    kind,
                    ..cfg.model.clone()
                }))
            })
            .collect()
    };
    let opts = ExperimentOptions {
        max_train_windows: (ev.max_train_windows > 0).then_some(ev.max_train_windows),
    };
    let mut results = Vec::new();
    for &protocol in &ev.protocols {
        let plan = make_split(&set.windows, protocol, cfg.seed)?;
        for p in &predictors {
            for &fs_ in &ev.feature_sets {
                log::info!("evaluate: {protocol} {} {fs_} ({} folds)", p.label(), plan.folds.len());
                results.push(run_experiment(&set, &plan, p, fs_, &opts)?);
            }
        }
    }
    let stats = protocol_stats(&results);
    let mut files = Vec::new();
    let rows: Vec<_> = results.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    files.push(write_with(&dir.join("metrics.tsv"), |w| write_metric_table(w, &rows))?);
    files.push(write_with(&dir.join("summary.toml"), |w| write_summary(w, &results, &stats))?);
    if ev.traces {
        for r in &results {
            let stem = experiment_stem(r);
            files.push(write_with(&dir.join(format!("traces_{stem}.tsv")), |w| write_cycle_traces(w, r))?);
            files.push(write_with(&dir.join(format!("peaks_{stem}.tsv")), |w| write_peak_table(w, r))?);
        }
    }
    finish(&dir, "evaluate", cfg, files, Vec::new())
}

/// Per-speed percentile-band plots from the evaluation traces.
pub fn cmd_report(cfg: &RunConfig, force: bool) -> Result<Outcome> {
    let input = cfg.eval_dir();
    let traces: Vec<PathBuf> = if input.is_dir() {
        sorted_entries(&input)?
            .into_iter()
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("traces_") && n.ends_with(".tsv"))
            })
            .collect()
    } else {
        Vec::new()
    };
    if traces.is_empty() {
        return Err(Error::MissingInputs(format!(
            "no trace files in {} (run evaluate with traces = true)",
            input.display()
        )));
    }
    let dir = cfg.report_dir();
    prepare_dir(&dir, force)?;
    let mut files = Vec::new();
    let mut summary = String::from("experiment\tspeed_mps\tcycles\tref_median_peak_bw\test_median_peak_bw\n");
    for t in &traces {
        let stem = t.file_stem().unwrap().to_string_lossy().trim_start_matches("traces_").to_string();
        let text = io(t, fs::read_to_string(t))?;
        let cycles = read_cycle_traces(&text, t)?;
        if cycles.is_empty() {
            return Err(Error::MissingInputs(format!("{} holds no cycles", t.display())));
        }
        let mut speeds: Vec<f64> = cycles.iter().map(|c| c.speed).collect();
        speeds.sort_by(f64::total_cmp);
        speeds.dedup();
        for sp in speeds {
            let sel: Vec<&TraceCycle> = cycles.iter().filter(|c| c.speed == sp).collect();
            let rb = percentile_band(&sel.iter().map(|c| c.reference.clone()).collect::<Vec<_>>())?;
            let eb = percentile_band(&sel.iter().map(|c| c.estimate.clone()).collect::<Vec<_>>())?;
            let name = format!("epoch_{stem}_{}", speed_tag(sp));
            let svg = dir.join(format!("{name}.svg"));
            let title = format!("{} at {sp:.1} m/s, {} cycles", stem.replace('_', " "), sel.len());
            plot_bands(&svg, &title, &rb, &eb)?;
            files.push(svg);
            files.push(write_with(&dir.join(format!("{name}.tsv")), |w| write_band_table(w, &rb, &eb))?);
            let peak = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            summary.push_str(&format!(
                "{stem}\t{sp:.1}\t{}\t{:.6}\t{:.6}\n",
                sel.len(),
                peak(&rb.median),
                peak(&eb.median)
            ));
        }
    }
    files.push(write_file(&dir.join("summary.tsv"), summary.as_bytes())?);
    finish(&dir, "report", cfg, files, Vec::new())
}

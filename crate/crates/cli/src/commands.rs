use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use canlift::canlog::{ids, parse_gps, parse_log, CanLog, GpsTrack, ParseMode};
use canlift::config::PipelineConfig;
use canlift::decomposer::{
    bit_distribution, candidate_series, is_counter, normalize, windows, CandidateId, CandidateSeries,
};
use canlift::features::{compute, FeatureSpec};
use canlift::groundtruth::{
    exclusivity_search, find_accel_episodes, spike_platform_search, EpisodeConfig, ExclusivityConfig,
    SpikePlatformConfig,
};
use canlift::learner::{evaluate, feature_importances, read_model, write_model};
use canlift::pipeline::{locate_signal, prepare_candidates, train_signal};
use canlift::reid::{build_driver_samples, cohort_reid, ReidConfig};
use canlift::synthgen::{self, layout_from_seed, DriverStyle, ScenarioSpec, SynthDrive};
use canlift::tsmatch::{gps_to_velocity, rank_by_dtw, remove_velocity_outliers};

use crate::output::{write_report, Cell, Table};
use crate::{Cli, Command, ConfigAction, Failure, GlobalOpts};

type Outcome = Result<(), Failure>;

pub fn run<W: Write>(cli: &Cli, out: &mut W) -> Outcome {
    let g = &cli.global;
    let mut cfg = load_config(g)?;
    let tables = match &cli.command {
        Command::Ids { log } => cmd_ids(&read_log(log, g)?),
        Command::Decompose { log, min_variation, window, overlap, little_endian } => {
            if let Some(v) = min_variation {
                cfg.min_variation = *v;
            }
            if let Some(w) = window {
                cfg.window_s = *w;
            }
            if let Some(o) = overlap {
                cfg.overlap = *o;
            }
            cfg.little_endian |= little_endian;
            cfg.validate()?;
            cmd_decompose(&read_log(log, g)?, &cfg)?
        }
        Command::Bits { log, id } => cmd_bits(&read_log(log, g)?, *id)?,
        Command::Features { log, spec, candidate } => {
            let mut spec = FeatureSpec::by_name(spec).map_err(|e| Failure::Usage(e.to_string()))?;
            spec.max_bins = cfg.max_bins;
            cmd_features(&read_log(log, g)?, &cfg, &spec, *candidate)?
        }
        Command::FindVelocity { log, gps, max_jump, band, top } => {
            if let Some(j) = max_jump {
                cfg.max_jump = *j;
            }
            cmd_find_velocity(&read_log(log, g)?, &read_gps(gps)?, &cfg, *band, *top)?
        }
        Command::FindPedals { log, top } => cmd_find_pedals(&read_log(log, g)?, &cfg, *top)?,
        Command::FindClutch { log, velocity, top } => cmd_find_clutch(&read_log(log, g)?, &cfg, *velocity, *top)?,
        Command::Train { base, signal, truth, out } => cmd_train(&read_log(base, g)?, signal, truth, out, &cfg)?,
        Command::Match { model, target, truth, top } => cmd_match(model, &read_log(target, g)?, truth, &cfg, *top)?,
        Command::Reid { signals, drives, k, folds, seed } => {
            cmd_reid(signals, drives, *k, *folds, seed.unwrap_or(cfg.seed), g)?
        }
        Command::Synth { scenario, seed, out, duration, style, layout_seed, pair } => {
            let mut spec = match scenario {
                Some(p) => toml::from_str::<ScenarioSpec>(&read_text(p)?)
                    .map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
                None => ScenarioSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = *s;
            }
            if let Some(d) = duration {
                spec.duration_s = *d;
            }
            if let Some(name) = style {
                spec.style = DriverStyle::by_name(name)
                    .ok_or_else(|| Failure::Usage(format!("unknown style {name:?} (smooth, moderate, aggressive)")))?;
            }
            if let Some(ls) = layout_seed {
                spec.layout = Some(layout_from_seed(*ls, &spec.census));
            }
            cmd_synth(&spec, out, *pair)?
        }
        Command::Config { action } => match action {
            ConfigAction::Dump => {
                write!(out, "{}", cfg.to_toml())?;
                return Ok(());
            }
            ConfigAction::Hash => {
                writeln!(out, "{}", cfg.hash())?;
                return Ok(());
            }
        },
    };
    write_report(out, &tables, g.format())?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_config(g: &GlobalOpts) -> Result<PipelineConfig, Failure> {
    match &g.config {
        Some(p) => PipelineConfig::from_toml(&read_text(p)?).map_err(|e| Failure::Data(format!("{}: {e}", p.display()))),
        None => Ok(PipelineConfig::default()),
    }
}

fn read_log(path: &Path, g: &GlobalOpts) -> Result<CanLog, Failure> {
    let mode = if g.strict { ParseMode::Strict } else { ParseMode::Lenient };
    let parsed = parse_log(&read_text(path)?, mode).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    if let Some(first) = parsed.skipped.first() {
        eprintln!(
            "{}: skipped {} malformed line(s), first at line {}: {}",
            path.display(),
            parsed.skipped.len(),
            first.line,
            first.reason
        );
    }
    if parsed.log.is_empty() {
        return Err(Failure::Data(format!("{}: no frames", path.display())));
    }
    Ok(parsed.log)
}

fn read_gps(path: &Path) -> Result<GpsTrack, Failure> {
    parse_gps(&read_text(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

/// The decoded, normalized series of one candidate.
fn extract(log: &CanLog, id: CandidateId) -> Result<CandidateSeries, Failure> {
    let (mut times, mut raw) = (Vec::new(), Vec::new());
    for f in log.frames_for(id.can_id).filter(|f| !f.rtr) {
        if let Some(v) = id.span.decode(f.payload()) {
            let t = f.timestamp.as_secs_f64();
            if times.last().is_some_and(|&last| t <= last) {
                continue;
            }
            times.push(t);
            raw.push(v);
        }
    }
    if times.is_empty() {
        return Err(Failure::Data(format!("candidate {id} has no samples in the log")));
    }
    Ok(normalize(CandidateSeries::from_raw(id, times, raw))?)
}

fn top_n<T>(mut v: Vec<T>, top: Option<usize>) -> Vec<T> {
    if let Some(n) = top {
        v.truncate(n);
    }
    v
}

fn cmd_ids(log: &CanLog) -> Vec<Table> {
    let mut t = Table::new("ids", &["can_id", "frames", "dlc"]);
    for s in ids(log) {
        t.push(vec![format!("{:04x}", s.can_id).into(), s.frame_count.into(), usize::from(s.dominant_dlc).into()]);
    }
    vec![t]
}

fn cmd_decompose(log: &CanLog, cfg: &PipelineConfig) -> Result<Vec<Table>, Failure> {
    let wcfg = cfg.window();
    let mut t = Table::new("candidates", &["candidate", "samples", "distinct", "status", "windows"]);
    for s in candidate_series(log, cfg.split()) {
        let distinct = s.distinct_count();
        let (status, n_windows) = if distinct < cfg.min_variation {
            ("dropped:variation", 0)
        } else if cfg.drop_counters && is_counter(&s) {
            ("dropped:counter", 0)
        } else {
            ("kept", windows(&normalize(s.clone())?, &wcfg)?.len())
        };
        t.push(vec![
            s.id.to_string().into(),
            s.len().into(),
            distinct.into(),
            status.into(),
            n_windows.into(),
        ]);
    }
    Ok(vec![t])
}

fn cmd_bits(log: &CanLog, only: Option<u16>) -> Result<Vec<Table>, Failure> {
    let targets: Vec<u16> = match only {
        Some(id) => vec![id],
        None => log.id_list().collect(),
    };
    let mut t = Table::new("bits", &["can_id", "bit", "probability"]);
    for id in targets {
        let d = bit_distribution(log, id)?;
        for (i, p) in d.probs.iter().enumerate() {
            t.push(vec![format!("{id:04x}").into(), i.into(), (*p).into()]);
        }
    }
    Ok(vec![t])
}

fn cmd_features(
    log: &CanLog,
    cfg: &PipelineConfig,
    spec: &FeatureSpec,
    only: Option<CandidateId>,
) -> Result<Vec<Table>, Failure> {
    let series = match only {
        Some(id) => vec![extract(log, id)?],
        None => prepare_candidates(log, cfg)?,
    };
    let mut columns = vec!["candidate".to_string(), "t_start".into(), "t_end".into()];
    columns.extend(spec.names().iter().map(|s| s.to_string()));
    let mut t = Table::with_columns("features", columns);
    let wcfg = cfg.window();
    for s in &series {
        for w in windows(s, &wcfg)? {
            let mut row: Vec<Cell> = vec![s.id.to_string().into(), w.t_start.into(), w.t_end.into()];
            row.extend(compute(&w.values, spec).into_iter().map(Cell::from));
            t.push(row);
        }
    }
    Ok(vec![t])
}

fn cmd_find_velocity(
    log: &CanLog,
    gps: &GpsTrack,
    cfg: &PipelineConfig,
    band: Option<usize>,
    top: Option<usize>,
) -> Result<Vec<Table>, Failure> {
    let reference = remove_velocity_outliers(&gps_to_velocity(gps)?, cfg.max_jump);
    let cands = prepare_candidates(log, cfg)?;
    let ranking = rank_by_dtw(&reference, &cands, band)?;
    let mut t = Table::new("velocity", &["rank", "candidate", "distance", "path_length"]);
    for (k, r) in top_n(ranking, top).iter().enumerate() {
        t.push(vec![(k + 1).into(), r.candidate.to_string().into(), r.distance.into(), r.path_length.into()]);
    }
    Ok(vec![t])
}

fn cmd_find_pedals(log: &CanLog, cfg: &PipelineConfig, top: Option<usize>) -> Result<Vec<Table>, Failure> {
    let cands = prepare_candidates(log, cfg)?;
    let ranking = exclusivity_search(&cands, &ExclusivityConfig::default())?;
    let mut t = Table::new("pedals", &["rank", "a", "b", "co_active", "active_a", "active_b"]);
    for (k, p) in top_n(ranking, top).iter().enumerate() {
        t.push(vec![
            (k + 1).into(),
            p.a.to_string().into(),
            p.b.to_string().into(),
            p.co_active_fraction.into(),
            p.active_fraction_a.into(),
            p.active_fraction_b.into(),
        ]);
    }
    Ok(vec![t])
}

fn cmd_find_clutch(
    log: &CanLog,
    cfg: &PipelineConfig,
    velocity: CandidateId,
    top: Option<usize>,
) -> Result<Vec<Table>, Failure> {
    let v = extract(log, velocity)?;
    let episodes = find_accel_episodes(&v, &EpisodeConfig::default());
    if episodes.is_empty() {
        return Err(Failure::Data(format!("no standing-start acceleration found on {velocity}")));
    }
    let cands: Vec<CandidateSeries> =
        prepare_candidates(log, cfg)?.into_iter().filter(|c| c.id != velocity).collect();
    let ranking = spike_platform_search(&cands, &episodes, &SpikePlatformConfig::default());
    let mut t = Table::new(
        "clutch",
        &["rank", "rpm", "clutch", "matched", "episodes", "spike_precision", "platform_precision"],
    );
    for (k, s) in top_n(ranking, top).iter().enumerate() {
        t.push(vec![
            (k + 1).into(),
            s.rpm.to_string().into(),
            s.clutch.to_string().into(),
            s.matched_episodes.into(),
            s.episode_count.into(),
            s.spike_precision.into(),
            s.platform_precision.into(),
        ]);
    }
    Ok(vec![t])
}

fn cmd_train(
    log: &CanLog,
    signal: &str,
    truth: &[CandidateId],
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<Vec<Table>, Failure> {
    let model = train_signal(log, truth, signal, cfg)?;
    let file = fs::File::create(out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    let mut w = BufWriter::new(file);
    write_model(&model, &mut w)?;
    w.flush()?;
    let f = &model.forest;
    let mut summary = Table::new("model", &["signal", "trees", "class_size", "oob_accuracy", "config_hash"]);
    summary.push(vec![
        signal.into(),
        f.trees.len().into(),
        f.class_size.into(),
        f.oob_accuracy.map_or(Cell::Str("-".into()), Cell::Float),
        model.config_hash.to_string().into(),
    ]);
    let mut imp = Table::new("importances", &["feature", "importance"]);
    for (name, v) in feature_importances(f) {
        imp.push(vec![name.into(), v.into()]);
    }
    Ok(vec![summary, imp])
}

fn cmd_match(
    model_path: &Path,
    log: &CanLog,
    truth: &[CandidateId],
    cfg: &PipelineConfig,
    top: Option<usize>,
) -> Result<Vec<Table>, Failure> {
    let file = fs::File::open(model_path).map_err(|e| Failure::Data(format!("{}: {e}", model_path.display())))?;
    let model = read_model(BufReader::new(file))?;
    let report = locate_signal(&model, log, cfg)?;
    let mut tables = Vec::new();
    if !truth.is_empty() {
        let e = evaluate(&report, truth)?;
        let mut row = Table::new("evaluation", &["sensor", "rank", "precision", "recall", "gap"]);
        row.push(vec![
            report.signal.clone().into(),
            e.rank.into(),
            e.precision.into(),
            e.recall.into(),
            e.gap.into(),
        ]);
        tables.push(row);
    }
    let mut t = Table::new("ranking", &["rank", "candidate", "votes", "windows", "vote_fraction"]);
    for (k, r) in top_n(report.ranking, top).iter().enumerate() {
        t.push(vec![
            (k + 1).into(),
            r.candidate.to_string().into(),
            r.votes.into(),
            r.windows.into(),
            r.vote_fraction().into(),
        ]);
    }
    tables.push(t);
    Ok(tables)
}

/// Drivers and their log files: top-level `.log` files are one driver
/// each, subdirectories hold all drives of one driver.
fn collect_drives(dir: &Path) -> Result<Vec<(String, Vec<PathBuf>)>, Failure> {
    let listing = |d: &Path| -> Result<Vec<PathBuf>, Failure> {
        let mut v: Vec<PathBuf> = fs::read_dir(d)
            .map_err(|e| Failure::Data(format!("{}: {e}", d.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        v.sort();
        Ok(v)
    };
    let is_log = |p: &Path| p.is_file() && p.extension().is_some_and(|x| x == "log");
    let stem = |p: &Path| p.file_stem().or(p.file_name()).map_or(String::new(), |s| s.to_string_lossy().into_owned());
    let mut drivers = Vec::new();
    for p in listing(dir)? {
        if p.is_dir() {
            let logs: Vec<PathBuf> = listing(&p)?.into_iter().filter(|q| is_log(q)).collect();
            if !logs.is_empty() {
                drivers.push((stem(&p), logs));
            }
        } else if is_log(&p) {
            drivers.push((stem(&p), vec![p]));
        }
    }
    Ok(drivers)
}

fn cmd_reid(
    signals: &[(String, CandidateId)],
    dir: &Path,
    k: Option<usize>,
    folds: Option<usize>,
    seed: u64,
    g: &GlobalOpts,
) -> Result<Vec<Table>, Failure> {
    let drivers = collect_drives(dir)?;
    if drivers.len() < 2 {
        return Err(Failure::Data(format!("{}: found {} driver(s), need at least two", dir.display(), drivers.len())));
    }
    let mut cfg = ReidConfig::default();
    if let Some(f) = folds {
        cfg.folds = f;
    }
    let mut samples = Vec::with_capacity(drivers.len());
    let mut sizes = Table::new("drivers", &["driver", "drives", "samples"]);
    for (name, logs) in &drivers {
        let mut all = Vec::new();
        for path in logs {
            let log = read_log(path, g)?;
            let series = signals.iter().map(|(_, id)| extract(&log, *id)).collect::<Result<Vec<_>, _>>()?;
            all.extend(build_driver_samples(&series, name, &cfg)?);
        }
        sizes.push(vec![name.clone().into(), logs.len().into(), all.len().into()]);
        samples.push(all);
    }
    let report = cohort_reid(&samples, k.unwrap_or(drivers.len().min(5)), &cfg, seed)?;
    let mut pairs = Table::new("pairs", &["driver_a", "driver_b", "precision"]);
    for p in &report.pairs {
        pairs.push(vec![p.driver_a.clone().into(), p.driver_b.clone().into(), p.mean_precision.into()]);
    }
    let mut summary = Table::new("summary", &["drivers", "pairs", "mean", "min", "max"]);
    summary.push(vec![
        report.drivers.join(" ").into(),
        report.pairs.len().into(),
        report.mean.into(),
        report.min.into(),
        report.max.into(),
    ]);
    Ok(vec![sizes, pairs, summary])
}

fn write_drive(drive: &SynthDrive, dir: &Path, spec: Option<&ScenarioSpec>) -> Result<Table, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    let (text, truth) = synthgen::encode_log(drive);
    let write = |name: &str, body: &str| -> Result<(), Failure> {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
    };
    write("drive.log", &text)?;
    write("gps.csv", &drive.gps.to_csv())?;
    let mut t = Table::new("truth", &["signal", "candidate", "scale", "offset"]);
    for (name, loc) in &truth.signals {
        t.push(vec![name.clone().into(), loc.candidate.to_string().into(), loc.scale.into(), loc.offset.into()]);
    }
    let mut manifest = Vec::new();
    write_report(&mut manifest, std::slice::from_ref(&t), crate::output::Format::Text)?;
    write("truth.csv", &String::from_utf8_lossy(&manifest))?;
    if let Some(spec) = spec {
        // with the layout pinned, the file regenerates this drive
        let resolved = ScenarioSpec { layout: Some(drive.layout.clone()), ..spec.clone() };
        let scenario = toml::to_string(&resolved).map_err(|e| Failure::Data(format!("scenario: {e}")))?;
        write("scenario.toml", &scenario)?;
    }
    Ok(t)
}

fn cmd_synth(spec: &ScenarioSpec, out: &Path, pair: bool) -> Result<Vec<Table>, Failure> {
    if pair {
        let (base, target) = synthgen::make_car_pair(spec.seed, spec.duration_s, spec.duration_s)?;
        let mut tb = write_drive(&base, &out.join("base"), None)?;
        tb.name = "base";
        let mut tt = write_drive(&target, &out.join("target"), None)?;
        tt.name = "target";
        Ok(vec![tb, tt])
    } else {
        let drive = synthgen::generate(spec)?;
        Ok(vec![write_drive(&drive, out, Some(spec))?])
    }
}

//! River flow ingestion: per-station `timestamp,value` CSV files aligned on a
//! fixed 15-minute grid, short gaps interpolated, long gaps splitting the
//! training data into separate trajectories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDateTime, Timelike};
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{RcaError, Result};
use crate::graph::{NodeSpec, SummaryGraph};
use crate::io::{read_text, write_atomic};
use crate::rng::rng_from_seed;
use crate::scoring::Classifier;

pub const STEP_MINUTES: i64 = 15;
pub const MAX_INTERPOLATED_GAP: usize = 4;
pub const DEFAULT_SUBSAMPLE_CAP: usize = 50_000;

const TIME_FORMATS: [&str; 4] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"];
const OUT_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .ok_or_else(|| RcaError::Data(format!("unparseable timestamp '{s}'")))
}

/// Half-open time window `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: String,
    pub end: String,
}

impl Window {
    fn bounds(&self) -> Result<(NaiveDateTime, NaiveDateTime)> {
        let (s, e) = (parse_timestamp(&self.start)?, parse_timestamp(&self.end)?);
        if e <= s {
            return Err(RcaError::Config(format!("empty window {} .. {}", self.start, self.end)));
        }
        Ok((s, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationFile {
    pub node: String,
    pub file: PathBuf,
}

/// River experiment description; relative paths resolve against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiverConfig {
    pub graph: PathBuf,
    pub stations: Vec<StationFile>,
    pub train_window: Window,
    pub factum_window: Window,
    /// Station whose z-score decides normality.
    pub target: String,
    pub z_threshold: f64,
    #[serde(default = "default_cap")]
    pub subsample_cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_SUBSAMPLE_CAP
}

impl RiverConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let cfg: Self = serde_json::from_str(&read_text(path)?)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }
}

#[derive(Debug, Clone)]
pub struct StationSeries {
    pub name: String,
    pub points: Vec<(NaiveDateTime, Option<f64>)>,
}

/// Reads `timestamp,value`; an empty value marks a missing reading.
pub fn read_station_csv(text: &str, name: &str) -> Result<StationSeries> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_lowercase()).collect();
    if header != ["timestamp", "value"] {
        return Err(RcaError::Data(format!("station '{name}': expected columns timestamp,value, got {header:?}")));
    }
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let ts =
            parse_timestamp(&rec[0]).map_err(|e| RcaError::Data(format!("station '{name}' row {}: {e}", i + 2)))?;
        let raw = rec[1].trim();
        let v = if raw.is_empty() {
            None
        } else {
            Some(
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| RcaError::Data(format!("station '{name}' row {}: bad value '{raw}'", i + 2)))?,
            )
        };
        points.push((ts, v));
    }
    Ok(StationSeries { name: name.to_string(), points })
}

/// Ingested river data ready for diagnosis.
#[derive(Debug, Clone)]
pub struct RiverDataset {
    /// Observed part of the declared graph.
    pub graph: SummaryGraph,
    pub normal: Vec<Trajectory>,
    pub factum: Trajectory,
    pub factum_start: NaiveDateTime,
    pub target: usize,
    pub z_threshold: f64,
    pub n_interpolated: usize,
}

impl RiverDataset {
    pub fn train_steps(&self) -> usize {
        self.normal.iter().map(Trajectory::len).sum()
    }

    /// Z-score classifier on the target station, moments from training data.
    pub fn classifier(&self) -> Result<Classifier> {
        Classifier::zscore_from_data(&self.graph, self.target, &self.normal, self.z_threshold)
    }

    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.factum_start + Duration::minutes(STEP_MINUTES * t as i64)
    }
}

fn check_alignment(series: &[StationSeries]) -> Result<()> {
    let mut offenders = Vec::new();
    for s in series {
        let mut seen = std::collections::HashSet::new();
        for (ts, _) in &s.points {
            if ts.second() != 0 || ts.nanosecond() != 0 || i64::from(ts.minute()) % STEP_MINUTES != 0 {
                offenders.push(format!("{} @ {}", s.name, ts.format(OUT_FORMAT)));
            } else if !seen.insert(*ts) {
                offenders.push(format!("{} @ {} (duplicate)", s.name, ts.format(OUT_FORMAT)));
            }
        }
    }
    if offenders.is_empty() {
        return Ok(());
    }
    let shown = offenders.iter().take(20).cloned().collect::<Vec<_>>().join(", ");
    Err(RcaError::Data(format!(
        "{} timestamps off the {STEP_MINUTES}-minute grid: {shown}{}",
        offenders.len(),
        if offenders.len() > 20 { ", ..." } else { "" }
    )))
}

/// Values of one station on the grid of `[start, end)`, gaps of at most
/// `MAX_INTERPOLATED_GAP` steps filled linearly. Returns the count filled.
fn grid_values(s: &StationSeries, start: NaiveDateTime, n: usize) -> (Vec<Option<f64>>, usize) {
    let lookup: BTreeMap<NaiveDateTime, f64> = s.points.iter().filter_map(|(t, v)| v.map(|v| (*t, v))).collect();
    let mut vals: Vec<Option<f64>> =
        (0..n).map(|k| lookup.get(&(start + Duration::minutes(STEP_MINUTES * k as i64))).copied()).collect();
    let mut filled = 0;
    let mut k = 0;
    while k < n {
        if vals[k].is_some() {
            k += 1;
            continue;
        }
        let gap_start = k;
        while k < n && vals[k].is_none() {
            k += 1;
        }
        let len = k - gap_start;
        if gap_start > 0 && k < n && len <= MAX_INTERPOLATED_GAP {
            let (a, b) = (vals[gap_start - 1].expect("left"), vals[k].expect("right"));
            for (i, slot) in vals[gap_start..k].iter_mut().enumerate() {
                let w = (i + 1) as f64 / (len + 1) as f64;
                *slot = Some(a + w * (b - a));
            }
            filled += len;
            log::info!("station '{}': interpolated {len}-step gap at grid index {gap_start}", s.name);
        } else if len > MAX_INTERPOLATED_GAP {
            log::info!("station '{}': {len}-step gap at grid index {gap_start} splits the data", s.name);
        }
    }
    (vals, filled)
}

/// Maximal runs of grid rows where every station has a value.
fn complete_runs(columns: &[Vec<Option<f64>>], n: usize) -> Vec<Array2<f64>> {
    let mut runs = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    let flush = |current: &mut Vec<f64>, runs: &mut Vec<Array2<f64>>| {
        let rows = current.len() / columns.len();
        if rows >= 2 {
            runs.push(Array2::from_shape_vec((rows, columns.len()), std::mem::take(current)).expect("rect"));
        }
        current.clear();
    };
    for k in 0..n {
        let row: Option<Vec<f64>> = columns.iter().map(|c| c[k]).collect();
        match row {
            Some(r) => current.extend(r),
            None => flush(&mut current, &mut runs),
        }
    }
    flush(&mut current, &mut runs);
    runs
}

fn steps_between(start: NaiveDateTime, end: NaiveDateTime) -> usize {
    ((end - start).num_minutes() + STEP_MINUTES - 1).div_euclid(STEP_MINUTES) as usize
}

pub fn ingest_river(cfg: &RiverConfig, base: &Path) -> Result<RiverDataset> {
    let full = SummaryGraph::from_json(&read_text(&base.join(&cfg.graph))?)?;
    let graph = full.observed()?;
    let mut series = Vec::with_capacity(graph.len());
    for node in graph.nodes() {
        if node.dim != 1 {
            return Err(RcaError::Config(format!("station node '{}' must be univariate", node.name)));
        }
        let file = cfg
            .stations
            .iter()
            .find(|s| s.node == node.name)
            .ok_or_else(|| RcaError::Config(format!("no station file for node '{}'", node.name)))?;
        series.push(read_station_csv(&read_text(&base.join(&file.file))?, &node.name)?);
    }
    check_alignment(&series)?;

    let (t0, t1) = cfg.train_window.bounds()?;
    let n_train = steps_between(t0, t1);
    let mut n_interpolated = 0;
    let columns: Vec<_> = series
        .iter()
        .map(|s| {
            let (v, f) = grid_values(s, t0, n_train);
            n_interpolated += f;
            v
        })
        .collect();
    let mut runs = complete_runs(&columns, n_train);
    if runs.is_empty() {
        return Err(RcaError::Data("training window holds no complete stretch of two or more steps".into()));
    }
    if runs.len() > 1 {
        log::info!("training data split into {} segments by long gaps", runs.len());
    }
    // keep the most recent `subsample_cap` steps
    let total: usize = runs.iter().map(|r| r.nrows()).sum();
    if total > cfg.subsample_cap {
        let mut budget = cfg.subsample_cap;
        let mut kept = Vec::new();
        for r in runs.into_iter().rev() {
            if budget < 2 {
                break;
            }
            let take = r.nrows().min(budget);
            kept.push(r.slice(ndarray::s![r.nrows() - take.., ..]).to_owned());
            budget -= take;
        }
        kept.reverse();
        log::info!("training data subsampled from {total} to {} steps", cfg.subsample_cap - budget);
        runs = kept;
    }
    let normal = runs.into_iter().map(|v| Trajectory::new(v, 1.0)).collect::<Result<Vec<_>>>()?;

    let (f0, f1) = cfg.factum_window.bounds()?;
    let n_factum = steps_between(f0, f1);
    let fcols: Vec<_> = series
        .iter()
        .map(|s| {
            let (v, f) = grid_values(s, f0, n_factum);
            n_interpolated += f;
            v
        })
        .collect();
    let fruns = complete_runs(&fcols, n_factum);
    if fruns.len() != 1 || fruns[0].nrows() != n_factum {
        return Err(RcaError::Data("factum window has gaps that cannot be interpolated".into()));
    }
    let factum = Trajectory::new(fruns.into_iter().next().expect("one run"), 1.0)?;
    let target = graph.index_of(&cfg.target)?;
    if !(cfg.z_threshold.is_finite()) {
        return Err(RcaError::Config("z_threshold must be finite".into()));
    }
    Ok(RiverDataset { graph, normal, factum, factum_start: f0, target, z_threshold: cfg.z_threshold, n_interpolated })
}

/// Station names of the synthetic fixture, upstream first.
pub const FIXTURE_STATIONS: [&str; 4] = ["henthorn", "whalley_weir", "new_jumbles_rock", "samlesbury"];

/// Writes the synthetic four-station fixture into `dir`: graph with a
/// latent rainfall confounder, one CSV per station, `river.json`.
///
/// Training data start 2010-01-01 and contain a 2-step gap at Henthorn and a
/// 10-step gap at Whalley Weir. The factum window carries an upstream
/// surge at Henthorn.
pub fn write_synthetic_fixture(dir: &Path, seed: u64) -> Result<RiverConfig> {
    let mut nodes: Vec<NodeSpec> = FIXTURE_STATIONS.iter().map(|n| NodeSpec::new(n, 1)).collect();
    nodes.push(NodeSpec { name: "rainfall".into(), dim: 1, latent: true });
    let edges = [(0, 2), (1, 2), (2, 3), (4, 0), (4, 1), (4, 2), (4, 3)];
    let graph = SummaryGraph::new(nodes, edges)?;
    write_atomic(&dir.join("graph.json"), graph.to_json()?)?;

    let n_train = 2000;
    let n_factum = 90;
    let train_start = parse_timestamp("2010-01-01 00:00:00")?;
    let factum_start = parse_timestamp("2019-03-16 00:00:00")?;
    let mut rng = rng_from_seed(seed);
    let mut simulate = |n: usize, surge: Option<usize>| -> Vec<[f64; 4]> {
        let mut rain: f64 = 0.0;
        let mut q = [5.0, 4.0, 10.0, 12.0];
        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            rain = (0.95 * rain + 0.3 * e).max(0.0);
            let mut noise = [0.0; 4];
            for v in noise.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = 0.05 * z;
            }
            let prev = q;
            q[0] = prev[0] + 0.1 * (5.0 - prev[0]) + 0.2 * rain + noise[0];
            q[1] = prev[1] + 0.1 * (4.0 - prev[1]) + 0.15 * rain + noise[1];
            q[2] = prev[2] + 0.2 * (0.5 * prev[0] + 0.5 * prev[1] + 5.5 - prev[2]) + 0.1 * rain + noise[2];
            q[3] = prev[3] + 0.2 * (prev[2] + 2.0 - prev[3]) + 0.05 * rain + noise[3];
            if surge == Some(t) {
                q[0] += 20.0;
            }
            out.push(q);
        }
        out
    };
    let train = simulate(n_train, None);
    let factum = simulate(n_factum, Some(30));

    let mut stations = Vec::new();
    for (s, name) in FIXTURE_STATIONS.iter().enumerate() {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["timestamp", "value"])?;
        let mut emit = |start: NaiveDateTime, rows: &[[f64; 4]], skip: &dyn Fn(usize) -> bool| -> Result<()> {
            for (k, row) in rows.iter().enumerate() {
                let ts = (start + Duration::minutes(STEP_MINUTES * k as i64)).format(OUT_FORMAT).to_string();
                let v = if skip(k) { String::new() } else { format!("{:?}", row[s]) };
                w.write_record([ts, v])?;
            }
            Ok(())
        };
        let gap: Box<dyn Fn(usize) -> bool> = match s {
            0 => Box::new(|k| (700..702).contains(&k)),
            1 => Box::new(|k| (1200..1210).contains(&k)),
            _ => Box::new(|_| false),
        };
        emit(train_start, &train, gap.as_ref())?;
        emit(factum_start, &factum, &|_| false)?;
        let bytes = w.into_inner().map_err(|e| RcaError::Io(e.into_error()))?;
        let file = PathBuf::from(format!("{name}.csv"));
        write_atomic(&dir.join(&file), bytes)?;
        stations.push(StationFile { node: name.to_string(), file });
    }

    let end = |start: NaiveDateTime, n: usize| {
        (start + Duration::minutes(STEP_MINUTES * n as i64)).format(OUT_FORMAT).to_string()
    };
    let cfg = RiverConfig {
        graph: PathBuf::from("graph.json"),
        stations,
        train_window: Window { start: train_start.format(OUT_FORMAT).to_string(), end: end(train_start, n_train) },
        factum_window: Window { start: factum_start.format(OUT_FORMAT).to_string(), end: end(factum_start, n_factum) },
        target: "new_jumbles_rock".into(),
        // placeholder: the real station threshold is not published
        z_threshold: 3.0,
        subsample_cap: DEFAULT_SUBSAMPLE_CAP,
    };
    write_atomic(&dir.join("river.json"), serde_json::to_string_pretty(&cfg)?)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn station(name: &str, start: &str, vals: &[Option<f64>]) -> StationSeries {
        let t0 = parse_timestamp(start).unwrap();
        StationSeries {
            name: name.into(),
            points: vals.iter().enumerate().map(|(k, v)| (t0 + Duration::minutes(15 * k as i64), *v)).collect(),
        }
    }

    #[test]
    fn short_gaps_are_interpolated_linearly() {
        let s = station("a", "2019-01-01 00:00", &[Some(1.0), None, None, Some(4.0), Some(5.0)]);
        let (v, filled) = grid_values(&s, parse_timestamp("2019-01-01 00:00").unwrap(), 5);
        assert_eq!(filled, 2);
        assert_eq!(v, vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(5.0)]);
    }

    #[test]
    fn long_gap_splits_into_two_segments() {
        let mut vals: Vec<Option<f64>> = (0..30).map(|k| Some(k as f64)).collect();
        for v in &mut vals[10..20] {
            *v = None;
        }
        let s = station("a", "2019-01-01 00:00", &vals);
        let (v, filled) = grid_values(&s, parse_timestamp("2019-01-01 00:00").unwrap(), 30);
        assert_eq!(filled, 0);
        let runs = complete_runs(&[v], 30);
        assert_eq!(runs.len(), 2);
        assert_eq!((runs[0].nrows(), runs[1].nrows()), (10, 10));
        // gap of exactly the limit is still filled, one more is not
        let mut vals: Vec<Option<f64>> = (0..12).map(|k| Some(k as f64)).collect();
        for v in &mut vals[3..3 + MAX_INTERPOLATED_GAP] {
            *v = None;
        }
        let (v, filled) =
            grid_values(&station("b", "2019-01-01 00:00", &vals), parse_timestamp("2019-01-01 00:00").unwrap(), 12);
        assert_eq!(filled, MAX_INTERPOLATED_GAP);
        assert!(v.iter().all(Option::is_some));
    }

    #[test]
    fn leading_and_trailing_gaps_are_not_extrapolated() {
        let s = station("a", "2019-01-01 00:00", &[None, Some(1.0), Some(2.0), None]);
        let (v, filled) = grid_values(&s, parse_timestamp("2019-01-01 00:00").unwrap(), 4);
        assert_eq!(filled, 0);
        assert_eq!(v, vec![None, Some(1.0), Some(2.0), None]);
    }

    #[test]
    fn misaligned_timestamps_are_listed() {
        let mut s = station("henthorn", "2019-01-01 00:00", &[Some(1.0), Some(2.0)]);
        s.points.push((parse_timestamp("2019-01-01 00:37").unwrap(), Some(3.0)));
        s.points.push((parse_timestamp("2019-01-01 00:15").unwrap(), Some(3.0)));
        let e = check_alignment(&[s]).unwrap_err();
        let msg = e.to_string();
        assert!(e.is_data_error());
        assert!(msg.contains("henthorn @ 2019-01-01 00:37:00"), "{msg}");
        assert!(msg.contains("duplicate"), "{msg}");
    }

    #[test]
    fn station_csv_parsing() {
        let s = read_station_csv("timestamp,value\n2019-03-16T00:00:00,1.5\n2019-03-16 00:15,\n", "a").unwrap();
        assert_eq!(s.points.len(), 2);
        assert_eq!(s.points[1].1, None);
        assert!(read_station_csv("time,flow\n", "a").is_err());
        assert!(read_station_csv("timestamp,value\nyesterday,1\n", "a").is_err());
        assert!(read_station_csv("timestamp,value\n2019-03-16 00:00,NaN\n", "a").is_err());
    }

    #[test]
    fn fixture_ingests_with_documented_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_synthetic_fixture(dir.path(), 7).unwrap();
        let ds = ingest_river(&cfg, dir.path()).unwrap();
        assert_eq!(ds.graph.len(), 4, "latent rainfall node dropped");
        assert_eq!(ds.n_interpolated, 2);
        assert_eq!(ds.normal.len(), 2, "10-step gap splits the training data");
        assert_eq!(ds.train_steps(), 2000 - 10);
        assert_eq!(ds.factum.len(), 90);
        assert_eq!(ds.graph.name(ds.target), "new_jumbles_rock");
        assert_eq!(ds.timestamp(4).format(OUT_FORMAT).to_string(), "2019-03-16 01:00:00");

        let capped = RiverConfig { subsample_cap: 500, ..cfg.clone() };
        let ds = ingest_river(&capped, dir.path()).unwrap();
        assert_eq!(ds.train_steps(), 500);
        assert_eq!(ds.normal.len(), 1);

        // regenerating gives identical files
        let again = tempfile::tempdir().unwrap();
        write_synthetic_fixture(again.path(), 7).unwrap();
        for f in ["graph.json", "river.json", "henthorn.csv"] {
            assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap());
        }
    }

    #[test]
    fn gappy_factum_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = write_synthetic_fixture(dir.path(), 1).unwrap();
        // a factum window reaching into the Whalley Weir gap
        cfg.factum_window = Window { start: "2010-01-13 12:00:00".into(), end: "2010-01-14 00:00:00".into() };
        assert!(ingest_river(&cfg, dir.path()).unwrap_err().is_data_error());
    }
}

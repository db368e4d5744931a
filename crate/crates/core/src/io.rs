//! On-disk formats: trajectory CSV, `truth.json`, dataset directories,
//! plot-ready CSV. Every file is written atomically through a sibling
//! temporary file and a rename.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{RcaError, Result};
use crate::graph::SummaryGraph;
use crate::pipeline::SweepRow;
use crate::scoring::{format_float, ScoreTable};
use crate::systems::RootCause;

pub const GRAPH_FILE: &str = "graph.json";
pub const NORMAL_FILE: &str = "normal.csv";
pub const FACTUM_FILE: &str = "factum.csv";
pub const TRUTH_FILE: &str = "truth.json";

/// Writes `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| RcaError::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| RcaError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Column names `<node>_<d>` with 1-based `d`, in graph column order.
pub fn column_names(graph: &SummaryGraph) -> Vec<String> {
    graph.nodes().iter().flat_map(|n| (1..=n.dim).map(move |d| format!("{}_{d}", n.name))).collect()
}

/// One or more trajectories as CSV. With several trajectories a leading
/// `segment` column tells them apart.
pub fn trajectories_to_csv(trajs: &[Trajectory], graph: &SummaryGraph) -> Result<String> {
    let segmented = trajs.len() > 1;
    let mut w = csv::Writer::from_writer(vec![]);
    let mut header: Vec<String> = Vec::new();
    if segmented {
        header.push("segment".into());
    }
    header.push("t".into());
    header.extend(column_names(graph));
    w.write_record(&header)?;
    for (k, traj) in trajs.iter().enumerate() {
        traj.check_layout(graph)?;
        for (t, row) in traj.values().outer_iter().enumerate() {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            if segmented {
                rec.push(k.to_string());
            }
            rec.push(t.to_string());
            rec.extend(row.iter().map(|v| format_float(*v)));
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| RcaError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}

pub fn trajectory_to_csv(traj: &Trajectory, graph: &SummaryGraph) -> Result<String> {
    trajectories_to_csv(std::slice::from_ref(traj), graph)
}

/// Reads trajectories written by [`trajectories_to_csv`]; the header must
/// list exactly the graph's columns.
pub fn trajectories_from_csv(text: &str, graph: &SummaryGraph) -> Result<Vec<Trajectory>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let segmented = header.first().map(String::as_str) == Some("segment");
    let skip = if segmented { 2 } else { 1 };
    if header.get(skip - 1).map(String::as_str) != Some("t") {
        return Err(RcaError::Data("trajectory CSV needs a 't' column".into()));
    }
    let expected = column_names(graph);
    if header[skip..] != expected[..] {
        return Err(RcaError::Data(format!(
            "trajectory columns {:?} do not match graph columns {:?}",
            &header[skip..],
            expected
        )));
    }
    let width = expected.len();
    let mut segments: Vec<(String, Vec<f64>)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let seg = if segmented { rec[0].to_string() } else { String::new() };
        if segments.last().map(|(s, _)| s != &seg).unwrap_or(true) {
            segments.push((seg, Vec::new()));
        }
        let buf = &mut segments.last_mut().expect("pushed").1;
        for field in rec.iter().skip(skip) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| RcaError::Data(format!("row {}: '{field}' is not a number", line + 2)))?;
            buf.push(v);
        }
    }
    if segments.is_empty() {
        return Err(RcaError::Data("trajectory CSV has no rows".into()));
    }
    segments
        .into_iter()
        .map(|(_, buf)| {
            let rows = buf.len() / width;
            Trajectory::new(Array2::from_shape_vec((rows, width), buf).expect("rectangular"), 1.0)
        })
        .collect()
}

pub fn trajectory_from_csv(text: &str, graph: &SummaryGraph) -> Result<Trajectory> {
    let mut all = trajectories_from_csv(text, graph)?;
    if all.len() != 1 {
        return Err(RcaError::Data(format!("expected one trajectory, found {} segments", all.len())));
    }
    Ok(all.remove(0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub node: String,
    pub time: Option<usize>,
    pub kind: String,
}

/// Contents of `truth.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truth {
    pub root_causes: Vec<TruthEntry>,
    /// Index into `root_causes` of the cause a diagnosis is judged against;
    /// absent means the first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluated: Option<usize>,
}

impl Truth {
    pub fn new(causes: &[RootCause], graph: &SummaryGraph) -> Self {
        let root_causes = causes
            .iter()
            .map(|c| TruthEntry { node: graph.name(c.node).to_string(), time: c.time, kind: c.kind.clone() })
            .collect();
        Self { root_causes, evaluated: None }
    }

    pub fn evaluated(&self, graph: &SummaryGraph) -> Result<RootCause> {
        let i = self.evaluated.unwrap_or(0);
        let e = self.root_causes.get(i).ok_or_else(|| RcaError::Data(format!("truth has no root cause #{i}")))?;
        Ok(RootCause { node: graph.index_of(&e.node)?, time: e.time, kind: e.kind.clone() })
    }
}

/// Files of one experiment instance.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: SummaryGraph,
    pub normal: Vec<Trajectory>,
    pub factum: Trajectory,
    pub truth: Option<Truth>,
}

impl Dataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(GRAPH_FILE), self.graph.to_json()?)?;
        write_atomic(&dir.join(NORMAL_FILE), trajectories_to_csv(&self.normal, &self.graph)?)?;
        write_atomic(&dir.join(FACTUM_FILE), trajectory_to_csv(&self.factum, &self.graph)?)?;
        if let Some(truth) = &self.truth {
            write_atomic(&dir.join(TRUTH_FILE), serde_json::to_string_pretty(truth)?)?;
        }
        Ok(())
    }

    /// Reads a dataset directory; `truth.json` is optional.
    pub fn read(dir: &Path) -> Result<Self> {
        let graph = SummaryGraph::from_json(&read_text(&dir.join(GRAPH_FILE))?)?;
        let normal = trajectories_from_csv(&read_text(&dir.join(NORMAL_FILE))?, &graph)?;
        let factum = trajectory_from_csv(&read_text(&dir.join(FACTUM_FILE))?, &graph)?;
        let truth_path = dir.join(TRUTH_FILE);
        let truth = if truth_path.exists() { Some(serde_json::from_str(&read_text(&truth_path)?)?) } else { None };
        Ok(Self { graph, normal, factum, truth })
    }
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| RcaError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}

/// `(constant, variant, accuracy, stderr, n)` rows of an injection sweep.
pub fn sweep_plot_csv(rows: &[SweepRow]) -> Result<String> {
    csv_string(
        &["constant", "variant", "accuracy", "stderr", "n"],
        rows.iter().map(|r| {
            vec![
                format_float(r.constant),
                r.variant.clone(),
                format_float(r.accuracy.mean),
                format_float(r.accuracy.stderr),
                r.accuracy.n.to_string(),
            ]
        }),
    )
}

/// `(time, node, score)` for every site candidate, sorted by time then node.
pub fn shapley_time_csv(scores: &ScoreTable, graph: &SummaryGraph) -> Result<String> {
    let mut entries: Vec<_> = scores.entries.iter().filter(|e| e.candidate.time().is_some()).collect();
    entries.sort_by_key(|e| (e.candidate.time(), e.candidate.node()));
    csv_string(
        &["time", "node", "score"],
        entries.into_iter().map(|e| {
            vec![
                e.candidate.time().expect("site").to_string(),
                graph.name(e.candidate.node()).to_string(),
                format_float(e.score),
            ]
        }),
    )
}

/// Path of the `i`-th exemplar side file next to a report.
pub fn exemplar_path(dir: &Path, stem: &str, i: usize) -> PathBuf {
    dir.join(format!("{stem}_exemplar_{i}.csv"))
}

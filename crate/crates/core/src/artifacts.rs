//! On-disk artifacts: file naming, staged writes and the CSV layouts shared
//! by `run` and the per-stage subcommands.
//!
//! Floats are written with Rust's shortest round-trip formatting so a value
//! read back from any CSV is bit-identical to the value written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::cluster::SweepTable;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, SessionStats};
use crate::ingest::Category;
use crate::matrix::Matrix;
use crate::report::RadarProfile;

pub const SESSIONS_JSONL: &str = "sessions.jsonl";
pub const PARSE_REPORT: &str = "parse_report.json";
pub const SESSION_STATS: &str = "sessions.csv";
pub const FEATURIZE_REPORT: &str = "featurize_report.json";
pub const CLEAN_REPORT: &str = "clean_report.json";
pub const CLUSTER_REPORT: &str = "cluster_report.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const ASSIGNMENTS_CSV: &str = "assignments.csv";
pub const REPORT_MD: &str = "report.md";
pub const REPORT_JSON: &str = "report.json";
pub const MANIFEST: &str = "run_manifest.json";
pub const PARTIAL_SUFFIX: &str = ".partial";
pub const SIM_EVENTS_JSONL: &str = "events.jsonl";
pub const GROUND_TRUTH_CSV: &str = "ground_truth.csv";

pub fn features_csv(c: Category) -> String {
    format!("features_{c}.csv")
}

pub fn clean_csv(c: Category) -> String {
    format!("clean_{c}.csv")
}

pub fn reduced_csv(c: Category) -> String {
    format!("reduced_{c}.csv")
}

pub fn transform_json(c: Category) -> String {
    format!("transform_{c}.json")
}

pub fn scree_csv(c: Category) -> String {
    format!("scree_{c}.csv")
}

pub fn scree_svg(c: Category) -> String {
    format!("scree_{c}.svg")
}

pub fn radar_svg(c: Category) -> String {
    format!("radar_{c}.svg")
}

pub fn profiles_csv(c: Category) -> String {
    format!("profiles_{c}.csv")
}

/// Artifact directory with staged writes.
///
/// Files are written as `<name>.partial` and renamed on [`commit`](Self::commit);
/// a stage that fails leaves its partial files behind.
#[derive(Debug)]
pub struct ArtifactDir {
    root: PathBuf,
    pending: Vec<String>,
}

impl ArtifactDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(ArtifactDir {
            root,
            pending: Vec::new(),
        })
    }

    /// Opens an existing directory for reading upstream artifacts.
    pub fn open(root: impl Into<PathBuf>) -> Self {
        ArtifactDir {
            root: root.into(),
            pending: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let staged = self.root.join(format!("{name}{PARTIAL_SUFFIX}"));
        fs::write(&staged, contents).map_err(|e| Error::io(&staged, e))?;
        self.pending.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::data(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.write(name, text)
    }

    /// Renames every staged file to its final name.
    pub fn commit(&mut self) -> Result<()> {
        for name in self.pending.drain(..) {
            let from = self.root.join(format!("{name}{PARTIAL_SUFFIX}"));
            let to = self.root.join(&name);
            fs::rename(&from, &to).map_err(|e| Error::io(&to, e))?;
        }
        Ok(())
    }

    pub fn read_string(&self, name: &str) -> Result<String> {
        let p = self.path(name);
        if !p.exists() {
            return Err(Error::MissingArtifact(p));
        }
        fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let text = self.read_string(name)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("{}: {e}", self.path(name).display())))
    }
}

fn csv_err(name: &str, e: impl std::fmt::Display) -> Error {
    Error::data(format!("{name}: {e}"))
}

fn write_csv(rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("writing to a Vec cannot fail");
    }
    String::from_utf8(w.into_inner().expect("flush to Vec")).expect("CSV is UTF-8")
}

fn read_csv(name: &str, text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| csv_err(name, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(
            rec.map_err(|e| csv_err(name, e))?
                .iter()
                .map(str::to_string)
                .collect(),
        );
    }
    Ok((header, rows))
}

fn parse_f64(name: &str, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::data(format!("{name}: {s:?} is not a number")))
}

fn parse_usize(name: &str, s: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| Error::data(format!("{name}: {s:?} is not a non-negative integer")))
}

/// `session_id,<columns...>` with one row per session.
pub fn matrix_to_csv(columns: &[String], ids: &[String], values: &Matrix) -> String {
    let header = std::iter::once("session_id".to_string())
        .chain(columns.iter().cloned())
        .collect();
    let rows = ids.iter().zip(values.iter_rows()).map(|(id, row)| {
        std::iter::once(id.clone())
            .chain(row.iter().map(|v| v.to_string()))
            .collect()
    });
    write_csv(std::iter::once(header).chain(rows))
}

/// Inverse of [`matrix_to_csv`]: column names, session ids, values.
pub fn matrix_from_csv(name: &str, text: &str) -> Result<(Vec<String>, Vec<String>, Matrix)> {
    let (header, rows) = read_csv(name, text)?;
    if header.first().map(String::as_str) != Some("session_id") {
        return Err(Error::data(format!(
            "{name}: first column must be session_id"
        )));
    }
    let columns: Vec<String> = header[1..].to_vec();
    let mut ids = Vec::with_capacity(rows.len());
    let mut data = Vec::with_capacity(rows.len() * columns.len());
    for row in &rows {
        ids.push(row[0].clone());
        for v in &row[1..] {
            data.push(parse_f64(name, v)?);
        }
    }
    Ok((
        columns,
        ids,
        Matrix::from_vec(rows.len(), header.len() - 1, data),
    ))
}

pub fn feature_matrix_from_csv(
    category: Category,
    name: &str,
    text: &str,
) -> Result<FeatureMatrix> {
    let (columns, ids, values) = matrix_from_csv(name, text)?;
    FeatureMatrix::new(category, columns, ids, values)
}

pub fn stats_to_csv(stats: &BTreeMap<String, SessionStats>) -> String {
    let header = vec![
        "session_id".into(),
        "duration_seconds".into(),
        "action_events".into(),
    ];
    let rows = stats.iter().map(|(id, s)| {
        vec![
            id.clone(),
            s.duration_seconds.to_string(),
            s.action_events.to_string(),
        ]
    });
    write_csv(std::iter::once(header).chain(rows))
}

pub fn stats_from_csv(name: &str, text: &str) -> Result<BTreeMap<String, SessionStats>> {
    let (_, rows) = read_csv(name, text)?;
    rows.iter()
        .map(|r| {
            if r.len() != 3 {
                return Err(Error::data(format!("{name}: expected 3 columns")));
            }
            Ok((
                r[0].clone(),
                SessionStats {
                    duration_seconds: parse_f64(name, &r[1])?,
                    action_events: parse_usize(name, &r[2])?,
                },
            ))
        })
        .collect()
}

/// Cluster labels of every clustered session, all categories.
pub type Assignments = BTreeMap<Category, Vec<(String, usize)>>;

pub fn assignments_to_csv(a: &Assignments) -> String {
    let header = vec!["session_id".into(), "category".into(), "cluster".into()];
    let rows = a.iter().flat_map(|(c, rows)| {
        rows.iter()
            .map(move |(id, k)| vec![id.clone(), c.to_string(), k.to_string()])
    });
    write_csv(std::iter::once(header).chain(rows))
}

pub fn assignments_from_csv(name: &str, text: &str) -> Result<Assignments> {
    let (_, rows) = read_csv(name, text)?;
    let mut out = Assignments::new();
    for r in rows {
        let cat: Category = r[1]
            .parse()
            .map_err(|_| Error::data(format!("{name}: bad category {:?}", r[1])))?;
        out.entry(cat)
            .or_default()
            .push((r[0].clone(), parse_usize(name, &r[2])?));
    }
    Ok(out)
}

pub fn sweep_to_csv(tables: &BTreeMap<Category, SweepTable>) -> String {
    let header = ["category", "k", "avg_silhouette", "inertia", "chosen"]
        .map(String::from)
        .to_vec();
    let rows = tables.iter().flat_map(|(c, t)| {
        t.rows.iter().map(move |r| {
            vec![
                c.to_string(),
                r.k.to_string(),
                r.avg_silhouette.to_string(),
                r.inertia.to_string(),
                (r.k == t.chosen_k).to_string(),
            ]
        })
    });
    write_csv(std::iter::once(header).chain(rows))
}

pub fn profiles_to_csv(profiles: &[RadarProfile]) -> String {
    let header = [
        "cluster",
        "size",
        "feature",
        "cluster_mean",
        "population_mean",
        "percent",
    ]
    .map(String::from)
    .to_vec();
    let rows = profiles.iter().flat_map(|p| {
        p.axes.iter().map(move |a| {
            vec![
                p.cluster.to_string(),
                p.size.to_string(),
                a.feature.clone(),
                a.cluster_mean.to_string(),
                a.population_mean.to_string(),
                a.percent
                    .map_or_else(|| "n/a".to_string(), |v| v.to_string()),
            ]
        })
    });
    write_csv(std::iter::once(header).chain(rows))
}

pub fn scree_to_csv(explained_variance: &[f64]) -> String {
    let header = vec!["component".to_string(), "explained_variance".to_string()];
    let rows = explained_variance
        .iter()
        .enumerate()
        .map(|(i, v)| vec![(i + 1).to_string(), v.to_string()]);
    write_csv(std::iter::once(header).chain(rows))
}

//! Stage orchestration.
//!
//! Each stage has an in-memory entry point, a writer for its artifacts and a
//! loader that rebuilds its output from disk. `run` chains the in-memory
//! entry points; the CLI subcommands chain loaders, and both produce the same
//! bytes because every artifact round-trips exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self as art, ArtifactDir, Assignments};
use crate::clean::{
    filter_sessions, prepare_category, DroppedSession, PreparedCategory, TransformRecord,
};
use crate::cluster::{sweep_k, KSelection, SweepParams, SweepTable};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{extract_features, DataIssue, Extraction, FeatureMatrix, SessionStats};
use crate::ingest::{parse_events, write_events, Category, ParseReport, Session};
use crate::matrix::{distinct_rows, Matrix};
use crate::report::{
    cluster_profiles, emit_summary, render_radar, render_scree, CategoryInput, RadarProfile,
    RunReport, RunSettings, SweepSummary,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Featurize,
    Clean,
    Cluster,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Ingest => "ingest",
            Stage::Featurize => "featurize",
            Stage::Clean => "clean",
            Stage::Cluster => "cluster",
            Stage::Report => "report",
        })
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.source.exit_code()
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    pub sessions: Vec<Session>,
    pub report: ParseReport,
}

/// Reads and parses every input; `-` is standard input. Inputs are
/// concatenated, so rejection line numbers count across files.
pub fn ingest(inputs: &[PathBuf]) -> Result<IngestOutput> {
    if inputs.is_empty() {
        return Err(Error::config("input: no input files given"));
    }
    let mut text = String::new();
    for path in inputs {
        if path.as_os_str() == "-" {
            std::io::stdin()
                .read_to_string(&mut text)
                .map_err(|e| Error::io("<stdin>", e))?;
        } else {
            let chunk = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let chunk = String::from_utf8(chunk)
                .map_err(|e| Error::data(format!("{}: not UTF-8: {e}", path.display())))?;
            text.push_str(&chunk);
        }
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
    }
    let (sessions, report) = parse_events(&text);
    Ok(IngestOutput { sessions, report })
}

pub fn write_ingest(dir: &mut ArtifactDir, out: &IngestOutput) -> Result<()> {
    let mut buf = Vec::new();
    write_events(&out.sessions, &mut buf)
        .map_err(|e| Error::io(dir.path(art::SESSIONS_JSONL), e))?;
    dir.write(art::SESSIONS_JSONL, buf)?;
    dir.write_json(art::PARSE_REPORT, &out.report)
}

pub fn load_ingest(dir: &ArtifactDir) -> Result<Vec<Session>> {
    let text = dir.read_string(art::SESSIONS_JSONL)?;
    let (sessions, report) = parse_events(&text);
    if report.rejected > 0 {
        return Err(Error::data(format!(
            "{}: {} malformed line(s); regenerate it with the ingest stage",
            dir.path(art::SESSIONS_JSONL).display(),
            report.rejected
        )));
    }
    Ok(sessions)
}

// ------------------------------------------------------------- featurize

pub fn featurize(sessions: &[Session], cfg: &PipelineConfig) -> Result<Extraction> {
    extract_features(sessions, cfg.specs()?, &cfg.window)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeReport {
    pub sessions: usize,
    pub features: BTreeMap<Category, Vec<String>>,
    pub issues: Vec<DataIssue>,
}

pub fn write_featurize(dir: &mut ArtifactDir, x: &Extraction) -> Result<()> {
    for (c, m) in &x.matrices {
        dir.write(
            &art::features_csv(*c),
            art::matrix_to_csv(&m.feature_names, &m.session_ids, &m.values),
        )?;
    }
    dir.write(art::SESSION_STATS, art::stats_to_csv(&x.stats))?;
    dir.write_json(
        art::FEATURIZE_REPORT,
        &FeaturizeReport {
            sessions: x.stats.len(),
            features: x
                .matrices
                .iter()
                .map(|(c, m)| (*c, m.feature_names.clone()))
                .collect(),
            issues: x.issues.clone(),
        },
    )
}

/// Feature matrices for the configured categories plus per-session stats.
pub fn load_featurize(
    dir: &ArtifactDir,
    cfg: &PipelineConfig,
) -> Result<(
    BTreeMap<Category, FeatureMatrix>,
    BTreeMap<String, SessionStats>,
)> {
    let specs = cfg.specs()?;
    let mut matrices = BTreeMap::new();
    for c in cfg.categories()? {
        let name = art::features_csv(c);
        let m = art::feature_matrix_from_csv(c, &name, &dir.read_string(&name)?)?;
        let expected: Vec<&str> = specs
            .iter()
            .filter(|s| s.category == c)
            .map(|s| s.name.as_str())
            .collect();
        if m.feature_names
            .iter()
            .map(String::as_str)
            .ne(expected.iter().copied())
        {
            return Err(Error::config(format!(
                "{name} has columns {:?} but the config defines {expected:?}; re-run featurize",
                m.feature_names
            )));
        }
        matrices.insert(c, m);
    }
    let stats = art::stats_from_csv(art::SESSION_STATS, &dir.read_string(art::SESSION_STATS)?)?;
    Ok((matrices, stats))
}

// ----------------------------------------------------------------- clean

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanCategoryStatus {
    pub prepared: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub rows_after_validity_filter: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows_after_outliers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca_dims: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanReport {
    pub sessions_in: usize,
    pub sessions_after_validity_filter: usize,
    pub validity_dropped: Vec<DroppedSession>,
    pub categories: BTreeMap<Category, CleanCategoryStatus>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanOutput {
    pub report: CleanReport,
    pub prepared: BTreeMap<Category, PreparedCategory>,
}

pub fn clean(
    matrices: &BTreeMap<Category, FeatureMatrix>,
    stats: &BTreeMap<String, SessionStats>,
    cfg: &PipelineConfig,
) -> Result<CleanOutput> {
    let (filtered, validity_dropped) = filter_sessions(matrices, stats, &cfg.cleaning);
    let sessions_after = filtered.values().next().map_or(0, FeatureMatrix::rows);

    let results: Vec<(Category, usize, Result<PreparedCategory>)> = filtered
        .par_iter()
        .map(|(c, m)| {
            let r = if m.rows() < 2 {
                Err(Error::data(format!(
                    "{} session(s) left after the validity filter; need at least 2",
                    m.rows()
                )))
            } else {
                prepare_category(m, &cfg.cleaning, cfg.pca.dims.get(c).copied())
            };
            (*c, m.rows(), r)
        })
        .collect();

    let mut categories = BTreeMap::new();
    let mut prepared = BTreeMap::new();
    for (c, rows, r) in results {
        match r {
            Ok(p) => {
                categories.insert(
                    c,
                    CleanCategoryStatus {
                        prepared: true,
                        reason: None,
                        rows_after_validity_filter: rows,
                        rows_after_outliers: Some(p.record.rows_after_outliers),
                        pca_dims: Some(p.record.chosen_dims()),
                    },
                );
                prepared.insert(c, p);
            }
            // A category without usable data is skipped; numeric failures abort.
            Err(Error::Data(reason)) => {
                let reason = reason
                    .strip_prefix(&format!("{c}: "))
                    .map_or(reason.clone(), str::to_owned);
                categories.insert(
                    c,
                    CleanCategoryStatus {
                        prepared: false,
                        reason: Some(reason),
                        rows_after_validity_filter: rows,
                        rows_after_outliers: None,
                        pca_dims: None,
                    },
                );
            }
            Err(e) => return Err(e),
        }
    }
    Ok(CleanOutput {
        report: CleanReport {
            sessions_in: stats.len(),
            sessions_after_validity_filter: sessions_after,
            validity_dropped,
            categories,
        },
        prepared,
    })
}

fn component_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("pc{i}")).collect()
}

pub fn write_clean(dir: &mut ArtifactDir, out: &CleanOutput) -> Result<()> {
    for (c, p) in &out.prepared {
        let prof = &p.profile;
        dir.write(
            &art::clean_csv(*c),
            art::matrix_to_csv(&prof.feature_names, &prof.session_ids, &prof.values),
        )?;
        dir.write(
            &art::reduced_csv(*c),
            art::matrix_to_csv(
                &component_names(p.reduced.cols()),
                &prof.session_ids,
                &p.reduced,
            ),
        )?;
        dir.write_json(&art::transform_json(*c), &p.record)?;
        dir.write(
            &art::scree_csv(*c),
            art::scree_to_csv(&p.record.pca.explained_variance),
        )?;
        dir.write(
            &art::scree_svg(*c),
            render_scree(*c, &p.record.pca.explained_variance, &p.record.knee),
        )?;
    }
    dir.write_json(art::CLEAN_REPORT, &out.report)
}

pub fn load_clean(dir: &ArtifactDir) -> Result<CleanOutput> {
    let report: CleanReport = dir.read_json(art::CLEAN_REPORT)?;
    let mut prepared = BTreeMap::new();
    for (c, status) in &report.categories {
        if !status.prepared {
            continue;
        }
        let name = art::clean_csv(*c);
        let profile = art::feature_matrix_from_csv(*c, &name, &dir.read_string(&name)?)?;
        let name = art::reduced_csv(*c);
        let (_, ids, reduced) = art::matrix_from_csv(&name, &dir.read_string(&name)?)?;
        if ids != profile.session_ids {
            return Err(Error::data(format!(
                "{name} rows do not match {}",
                art::clean_csv(*c)
            )));
        }
        let record: TransformRecord = dir.read_json(&art::transform_json(*c))?;
        prepared.insert(
            *c,
            PreparedCategory {
                profile,
                reduced,
                record,
            },
        );
    }
    Ok(CleanOutput { report, prepared })
}

// --------------------------------------------------------------- cluster

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterStatus {
    Clustered(SweepSummary),
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub seed: u64,
    pub categories: BTreeMap<Category, ClusterStatus>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutput {
    pub report: ClusterReport,
    pub tables: BTreeMap<Category, SweepTable>,
    pub assignments: Assignments,
}

pub fn category_seed(master: u64, c: Category) -> u64 {
    seed::derive(master, &format!("cluster/{c}"))
}

/// Sweeps k for every prepared category. `k_override` (from the CLI) takes
/// precedence over the per-category overrides in the config.
pub fn cluster(
    clean: &CleanOutput,
    cfg: &PipelineConfig,
    k_override: Option<usize>,
) -> Result<ClusterOutput> {
    let c = &cfg.clustering;
    let results: Vec<(Category, Result<Option<SweepTable>>)> = clean
        .prepared
        .par_iter()
        .map(|(cat, p)| {
            let k_override = k_override.or_else(|| c.k.get(cat).copied());
            let params = SweepParams {
                k_min: c.k_min,
                k_max: c.k_max,
                seed: category_seed(cfg.seed, *cat),
                restarts: c.restarts,
                k_override,
                silhouette_cap: c.silhouette_sample_cap,
            };
            let r = if k_override.is_none() && distinct_rows(&p.reduced) < 2 {
                Ok(None)
            } else {
                sweep_k(&p.reduced, &params).map(Some)
            };
            (*cat, r)
        })
        .collect();

    let mut categories = BTreeMap::new();
    let mut tables = BTreeMap::new();
    let mut assignments = Assignments::new();
    for (cat, r) in results {
        match r.map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{cat}: {m}")),
            other => other,
        })? {
            Some(t) => {
                let ids = &clean.prepared[&cat].profile.session_ids;
                assignments.insert(
                    cat,
                    ids.iter()
                        .cloned()
                        .zip(t.chosen().result.assignments.iter().copied())
                        .collect(),
                );
                categories.insert(cat, ClusterStatus::Clustered(SweepSummary::from(&t)));
                tables.insert(cat, t);
            }
            None => {
                categories.insert(
                    cat,
                    ClusterStatus::Skipped("fewer than 2 distinct sessions after cleaning".into()),
                );
            }
        }
    }
    Ok(ClusterOutput {
        report: ClusterReport {
            seed: cfg.seed,
            categories,
        },
        tables,
        assignments,
    })
}

pub fn write_cluster(dir: &mut ArtifactDir, out: &ClusterOutput) -> Result<()> {
    dir.write(art::SWEEP_CSV, art::sweep_to_csv(&out.tables))?;
    dir.write(
        art::ASSIGNMENTS_CSV,
        art::assignments_to_csv(&out.assignments),
    )?;
    dir.write_json(art::CLUSTER_REPORT, &out.report)
}

pub fn load_cluster(dir: &ArtifactDir) -> Result<(ClusterReport, Assignments)> {
    let report = dir.read_json(art::CLUSTER_REPORT)?;
    let assignments = art::assignments_from_csv(
        art::ASSIGNMENTS_CSV,
        &dir.read_string(art::ASSIGNMENTS_CSV)?,
    )?;
    Ok((report, assignments))
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub report: RunReport,
    pub profiles: BTreeMap<Category, Vec<RadarProfile>>,
    pub radar: BTreeMap<Category, String>,
}

pub fn report(
    clean: &CleanOutput,
    clusters: &ClusterReport,
    assignments: &Assignments,
    cfg: &PipelineConfig,
) -> Result<ReportOutput> {
    let mut inputs = Vec::new();
    let mut profiles_out = BTreeMap::new();
    let mut radar = BTreeMap::new();
    for cat in cfg.categories()? {
        let mut input = CategoryInput {
            category: cat,
            skipped: None,
            transform: None,
            sweep: None,
            profiles: Vec::new(),
            warnings: Vec::new(),
        };
        match (clean.report.categories.get(&cat), clean.prepared.get(&cat)) {
            (Some(status), None) => {
                input.skipped = Some(
                    status
                        .reason
                        .clone()
                        .unwrap_or_else(|| "not prepared".into()),
                );
            }
            (None, _) => input.skipped = Some("no cleaning output for this category".into()),
            (Some(_), Some(p)) => {
                input.transform = Some(p.record.clone());
                match (clusters.categories.get(&cat), assignments.get(&cat)) {
                    (Some(ClusterStatus::Clustered(sweep)), Some(labels)) => {
                        if labels.len() != p.profile.rows()
                            || labels
                                .iter()
                                .zip(&p.profile.session_ids)
                                .any(|((a, _), b)| a != b)
                        {
                            return Err(Error::data(format!(
                                "{cat}: {} does not match {}",
                                art::ASSIGNMENTS_CSV,
                                art::clean_csv(cat)
                            )));
                        }
                        let labels: Vec<usize> = labels.iter().map(|(_, k)| *k).collect();
                        let profiles = cluster_profiles(&p.profile, &labels)?;
                        match render_radar(&profiles, &cfg.report) {
                            Ok(svg) => {
                                radar.insert(cat, svg);
                            }
                            Err(Error::Data(m)) => {
                                input.warnings.push(format!("radar chart skipped: {m}"))
                            }
                            Err(e) => return Err(e),
                        }
                        input.warnings.extend(sweep.warnings.iter().cloned());
                        input.sweep = Some(sweep.clone());
                        input.profiles = profiles.clone();
                        profiles_out.insert(cat, profiles);
                    }
                    (Some(ClusterStatus::Skipped(reason)), _) => {
                        input.skipped = Some(reason.clone())
                    }
                    _ => input.skipped = Some("no clustering output for this category".into()),
                }
            }
        }
        inputs.push(input);
    }

    let k_overrides = clusters
        .categories
        .iter()
        .filter_map(|(c, s)| match s {
            ClusterStatus::Clustered(sw) if sw.selection == KSelection::Override => {
                Some((*c, sw.chosen_k))
            }
            _ => None,
        })
        .collect();
    let settings = RunSettings {
        seed: cfg.seed,
        window: cfg.window,
        k_min: cfg.clustering.k_min,
        k_max: cfg.clustering.k_max,
        restarts: cfg.clustering.restarts,
        k_overrides,
        pca_overrides: cfg.pca.dims.clone(),
        sessions_in: clean.report.sessions_in,
        sessions_after_validity_filter: clean.report.sessions_after_validity_filter,
    };
    Ok(ReportOutput {
        report: emit_summary(settings, inputs),
        profiles: profiles_out,
        radar,
    })
}

pub fn write_report(dir: &mut ArtifactDir, out: &ReportOutput) -> Result<()> {
    for (c, p) in &out.profiles {
        dir.write(&art::profiles_csv(*c), art::profiles_to_csv(p))?;
    }
    for (c, svg) in &out.radar {
        dir.write(&art::radar_svg(*c), svg)?;
    }
    dir.write(art::REPORT_MD, out.report.to_markdown())?;
    dir.write_json(art::REPORT_JSON, &out.report)
}

// ------------------------------------------------------------------- run

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub after_validity_filter: usize,
    pub after_outliers: Option<usize>,
    pub clustered: Option<usize>,
    pub chosen_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCounts {
    pub lines_accepted: usize,
    pub lines_rejected: usize,
    pub sessions: usize,
    pub after_validity_filter: usize,
    pub categories: BTreeMap<Category, CategoryCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stages: Vec<Stage>,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub row_counts: RowCounts,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub report: RunReport,
    pub warnings: Vec<String>,
}

/// Runs every stage in order, committing each stage's artifacts as it
/// finishes and writing `run_manifest.json` last.
pub fn run(cfg: &PipelineConfig) -> std::result::Result<RunOutcome, StageError> {
    cfg.validate().at(Stage::Ingest)?;
    let mut dir = ArtifactDir::create(&cfg.output_dir).at(Stage::Ingest)?;
    let mut warnings = Vec::new();

    let ingested = ingest(&cfg.input).at(Stage::Ingest)?;
    write_ingest(&mut dir, &ingested).at(Stage::Ingest)?;
    dir.commit().at(Stage::Ingest)?;
    if ingested.report.rejected > 0 {
        warnings.push(format!(
            "ingest: {} malformed line(s) rejected",
            ingested.report.rejected
        ));
    }

    let features = featurize(&ingested.sessions, cfg).at(Stage::Featurize)?;
    write_featurize(&mut dir, &features).at(Stage::Featurize)?;
    dir.commit().at(Stage::Featurize)?;
    if !features.issues.is_empty() {
        warnings.push(format!(
            "featurize: {} payload value(s) were not numeric",
            features.issues.len()
        ));
    }

    let cleaned = clean(&features.matrices, &features.stats, cfg).at(Stage::Clean)?;
    write_clean(&mut dir, &cleaned).at(Stage::Clean)?;
    dir.commit().at(Stage::Clean)?;
    if cleaned.report.sessions_after_validity_filter == 0 {
        warnings.push("clean: no sessions passed the validity filter".into());
    }

    let clustered = cluster(&cleaned, cfg, None).at(Stage::Cluster)?;
    write_cluster(&mut dir, &clustered).at(Stage::Cluster)?;
    dir.commit().at(Stage::Cluster)?;

    let reported =
        report(&cleaned, &clustered.report, &clustered.assignments, cfg).at(Stage::Report)?;
    write_report(&mut dir, &reported).at(Stage::Report)?;
    dir.commit().at(Stage::Report)?;
    for c in &reported.report.categories {
        if let Some(r) = &c.skip_reason {
            warnings.push(format!("{}: skipped: {r}", c.category));
        }
        warnings.extend(c.warnings.iter().map(|w| format!("{}: {w}", c.category)));
    }

    let mut seeds = BTreeMap::from([("master".to_string(), cfg.seed)]);
    let mut categories = BTreeMap::new();
    for (c, status) in &cleaned.report.categories {
        seeds.insert(format!("cluster/{c}"), category_seed(cfg.seed, *c));
        let chosen = match clustered.report.categories.get(c) {
            Some(ClusterStatus::Clustered(s)) => Some(s),
            _ => None,
        };
        categories.insert(
            *c,
            CategoryCounts {
                after_validity_filter: status.rows_after_validity_filter,
                after_outliers: status.rows_after_outliers,
                clustered: chosen.map(|s| s.cluster_sizes.iter().sum()),
                chosen_k: chosen.map(|s| s.chosen_k),
            },
        );
    }
    let mut artifacts: Vec<String> = std::fs::read_dir(dir.root())
        .map_err(|e| Error::io(dir.root(), e))
        .at(Stage::Report)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| !n.ends_with(art::PARTIAL_SUFFIX) && n != art::MANIFEST)
        .collect();
    artifacts.sort();
    let manifest = Manifest {
        tool: "playstyle".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        stages: vec![
            Stage::Ingest,
            Stage::Featurize,
            Stage::Clean,
            Stage::Cluster,
            Stage::Report,
        ],
        config: cfg.clone(),
        seeds,
        row_counts: RowCounts {
            lines_accepted: ingested.report.accepted,
            lines_rejected: ingested.report.rejected,
            sessions: ingested.sessions.len(),
            after_validity_filter: cleaned.report.sessions_after_validity_filter,
            categories,
        },
        artifacts,
    };
    dir.write_json(art::MANIFEST, &manifest).at(Stage::Report)?;
    dir.commit().at(Stage::Report)?;
    Ok(RunOutcome {
        manifest,
        report: reported.report,
        warnings,
    })
}

/// Reduced points and session ids for one prepared category.
pub fn reduced_points(clean: &CleanOutput, c: Category) -> Option<(&[String], &Matrix)> {
    clean
        .prepared
        .get(&c)
        .map(|p| (p.profile.session_ids.as_slice(), &p.reduced))
}

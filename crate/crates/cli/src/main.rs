use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use playstyle::artifacts::{ArtifactDir, GROUND_TRUTH_CSV, SIM_EVENTS_JSONL};
use playstyle::pipeline::{self, Stage, StageError};
use playstyle::report::RunReport;
use playstyle::simgen::{self, SimConfig};
use playstyle::{Category, Error, PipelineConfig};

/// Cluster game telemetry sessions into styles of gameplay.
#[derive(Debug, Parser)]
#[command(name = "playstyle", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,

    /// Worker threads (defaults to one per core). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Pipeline config file (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Artifact directory; overrides `output_dir` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Master seed; overrides `seed` in the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Restrict the run to one event category.
    #[arg(long, value_name = "NAME")]
    category: Option<Category>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every stage and write a run manifest.
    Run {
        #[command(flatten)]
        args: PipelineArgs,
        /// Event log(s) to read instead of the config's `input`; `-` is stdin.
        #[arg(long, value_name = "PATH")]
        input: Vec<PathBuf>,
    },
    /// Parse JSON Lines event logs into sessions.
    Ingest {
        #[command(flatten)]
        args: PipelineArgs,
        /// Event log(s) to read instead of the config's `input`; `-` is stdin.
        #[arg(long, value_name = "PATH")]
        input: Vec<PathBuf>,
    },
    /// Count events into per-category feature matrices.
    Featurize {
        #[command(flatten)]
        args: PipelineArgs,
    },
    /// Filter, transform, standardize and reduce the feature matrices.
    Clean {
        #[command(flatten)]
        args: PipelineArgs,
    },
    /// Sweep k and cluster each category.
    Cluster {
        #[command(flatten)]
        args: PipelineArgs,
        /// Use this k for every category instead of sweeping.
        #[arg(long, value_name = "K")]
        k: Option<usize>,
    },
    /// Profile clusters and render radar charts and the summary report.
    Report {
        #[command(flatten)]
        args: PipelineArgs,
    },
    /// Generate a synthetic event log with planted archetypes.
    Simgen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of sessions.
        #[arg(long, default_value_t = 600)]
        n: usize,
        /// Archetype definitions (JSON); defaults to three well-separated ones.
        #[arg(long, value_name = "PATH")]
        archetypes: Option<PathBuf>,
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
    },
}

enum Failure {
    Setup(Error),
    Stage(StageError),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Setup(e)
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Stage(e)
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T> AtStage<T> for playstyle::Result<T> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli.command, cli.quiet) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Setup(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(args: &PipelineArgs, input: &[PathBuf]) -> Result<PipelineConfig, Error> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if !input.is_empty() {
        cfg.input = input.to_vec();
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(c) = args.category {
        cfg.restrict_to(c)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command, quiet: bool) -> Result<(), Failure> {
    let say = |msg: String| {
        if !quiet {
            eprintln!("{msg}");
        }
    };
    match command {
        Command::Run { args, input } => {
            let cfg = load_config(&args, &input)?;
            let outcome = pipeline::run(&cfg)?;
            outcome
                .warnings
                .iter()
                .for_each(|w| say(format!("warning: {w}")));
            if !quiet {
                print_summary(&outcome.report);
            }
            say(format!("artifacts written to {}", cfg.output_dir.display()));
        }
        Command::Ingest { args, input } => {
            let cfg = load_config(&args, &input)?;
            let stage = Stage::Ingest;
            let out = pipeline::ingest(&cfg.input).at(stage)?;
            let mut dir = ArtifactDir::create(&cfg.output_dir).at(stage)?;
            pipeline::write_ingest(&mut dir, &out).at(stage)?;
            dir.commit().at(stage)?;
            say(format!(
                "ingest: {} line(s) accepted, {} rejected, {} session(s)",
                out.report.accepted,
                out.report.rejected,
                out.sessions.len()
            ));
        }
        Command::Featurize { args } => {
            let cfg = load_config(&args, &[])?;
            let stage = Stage::Featurize;
            let mut dir = ArtifactDir::create(&cfg.output_dir).at(stage)?;
            let sessions = pipeline::load_ingest(&dir).at(stage)?;
            let x = pipeline::featurize(&sessions, &cfg).at(stage)?;
            pipeline::write_featurize(&mut dir, &x).at(stage)?;
            dir.commit().at(stage)?;
            say(format!("featurize: {} session(s)", x.stats.len()));
        }
        Command::Clean { args } => {
            let cfg = load_config(&args, &[])?;
            let stage = Stage::Clean;
            let mut dir = ArtifactDir::create(&cfg.output_dir).at(stage)?;
            let (matrices, stats) = pipeline::load_featurize(&dir, &cfg).at(stage)?;
            let out = pipeline::clean(&matrices, &stats, &cfg).at(stage)?;
            pipeline::write_clean(&mut dir, &out).at(stage)?;
            dir.commit().at(stage)?;
            say(format!(
                "clean: {} of {} session(s) passed the validity filter",
                out.report.sessions_after_validity_filter, out.report.sessions_in
            ));
            for (c, s) in &out.report.categories {
                if let Some(r) = &s.reason {
                    say(format!("warning: {c}: skipped: {r}"));
                }
            }
        }
        Command::Cluster { args, k } => {
            let cfg = load_config(&args, &[])?;
            let stage = Stage::Cluster;
            if let Some(k) = k.filter(|k| *k < 2) {
                return Err(Error::config(format!("--k {k}: k must be at least 2")).into());
            }
            let mut dir = ArtifactDir::create(&cfg.output_dir).at(stage)?;
            let mut clean = pipeline::load_clean(&dir).at(stage)?;
            let wanted = cfg.categories()?;
            clean.prepared.retain(|c, _| wanted.contains(c));
            let out = pipeline::cluster(&clean, &cfg, k).at(stage)?;
            pipeline::write_cluster(&mut dir, &out).at(stage)?;
            dir.commit().at(stage)?;
            for (c, t) in &out.tables {
                say(format!(
                    "cluster: {c}: k = {} ({:?})",
                    t.chosen_k, t.selection
                ));
            }
        }
        Command::Report { args } => {
            let cfg = load_config(&args, &[])?;
            let stage = Stage::Report;
            let mut dir = ArtifactDir::create(&cfg.output_dir).at(stage)?;
            let clean = pipeline::load_clean(&dir).at(stage)?;
            let (clusters, assignments) = pipeline::load_cluster(&dir).at(stage)?;
            let out = pipeline::report(&clean, &clusters, &assignments, &cfg).at(stage)?;
            pipeline::write_report(&mut dir, &out).at(stage)?;
            dir.commit().at(stage)?;
            if !quiet {
                print_summary(&out.report);
            }
        }
        Command::Simgen {
            seed,
            n,
            archetypes,
            out,
        } => {
            let cfg = match archetypes {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    let archetypes = serde_json::from_str(&text)
                        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
                    SimConfig {
                        n_sessions: n,
                        seed,
                        archetypes,
                    }
                }
                None => SimConfig::three_archetypes(n, seed),
            };
            let sim = simgen::generate(&cfg)?;
            let mut dir = ArtifactDir::create(&out)?;
            dir.write(SIM_EVENTS_JSONL, sim.to_jsonl())?;
            dir.write(GROUND_TRUTH_CSV, sim.ground_truth_csv())?;
            dir.commit()?;
            say(format!(
                "simgen: {} session(s) written to {}",
                sim.sessions.len(),
                dir.path(SIM_EVENTS_JSONL).display()
            ));
        }
    }
    Ok(())
}

fn print_summary(report: &RunReport) {
    for c in &report.categories {
        match (&c.clustering, &c.skip_reason) {
            (Some(s), _) => println!(
                "{}: k = {} ({:?}), silhouette {}, {} session(s)",
                c.category,
                s.chosen_k,
                s.selection,
                s.chosen_silhouette()
                    .map_or("n/a".into(), |v| format!("{v:.4}")),
                c.clustered_sessions
            ),
            (None, Some(r)) => println!("{}: skipped: {r}", c.category),
            (None, None) => println!("{}: {}", c.category, c.status),
        }
    }
}

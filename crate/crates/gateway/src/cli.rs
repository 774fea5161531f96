//! The `aw` command line. Every verb except `serve` opens the data directory,
//! replays the logs, performs one operation and prints JSON (or CSV) on stdout.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use aw_core::compose::Condition;
use aw_core::eval::{accuracy_report, read_label_records, CodingSheet, Decision, GateBasis, Label, StageOneCoding};
use aw_core::model::{derive_partition, DatasetManifest, DOG_MANIFEST_JSON, DOG_MANIFEST_REF};
use aw_core::sim::Preset;
use aw_core::workflow::{CollaborationMode, CreateProject, Engine, SeedExample};

use crate::http::{self, ServeConfig};
use crate::ops::{self, AdvanceRequest, ReportFormat, StageRequest};
use crate::sim::{self, SimFormat};
use crate::ApiError;

#[derive(Debug, Parser)]
#[command(name = "aw", version, about = "FIND-RESOLVE-LABEL annotation workflow")]
pub struct Cli {
    /// Directory holding project event logs and manifests.
    #[arg(long, global = true, env = "AW_DATA_DIR", default_value = "aw-data")]
    pub data_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the data directory and write the bundled manifest.
    Init,
    #[command(subcommand)]
    Project(ProjectCmd),
    #[command(subcommand)]
    Find(FindCmd),
    /// Stage-1 coding of FIND submissions.
    #[command(subcommand)]
    Code(CodeCmd),
    #[command(subcommand)]
    Resolve(ResolveCmd),
    /// Compose the instruction bundle for one condition.
    Compose {
        #[arg(short, long)]
        project: String,
        #[arg(long, value_parser = parse_condition)]
        condition: Condition,
        /// Number of B1 examples; defaults to the resolved count.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Request a LABEL assignment for a worker.
    Assign {
        #[arg(short, long)]
        project: String,
        #[arg(long)]
        worker: String,
        #[arg(long, value_parser = parse_condition)]
        condition: Condition,
        #[arg(long)]
        batch_size: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    Label {
        #[arg(long)]
        assignment: String,
        #[arg(long)]
        image: String,
        #[arg(long, value_parser = parse_label)]
        label: Label,
    },
    /// Mark an open assignment as expired.
    Expire {
        #[arg(long)]
        assignment: String,
    },
    /// Accuracy report for a project, or for a labels.jsonl file.
    Report(ReportArgs),
    /// Run the condition-ordering simulation.
    Simulate {
        /// Builtin preset name or path to a preset JSON file.
        #[arg(long, default_value = "default")]
        preset: String,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        intent: Option<String>,
        #[arg(long, value_enum, default_value_t = SimFormat::Json)]
        format: SimFormat,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "AW_PORT", default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Debug, Subcommand)]
pub enum ProjectCmd {
    Create {
        #[arg(long)]
        intent: String,
        #[arg(long)]
        id: Option<String>,
        #[arg(long, default_value = DOG_MANIFEST_REF)]
        manifest: String,
        #[arg(long)]
        group: Option<String>,
        #[arg(long)]
        seed_image: String,
        #[arg(long)]
        seed_tag: String,
        #[arg(long, value_enum, default_value_t = Mode::Feed)]
        mode: Mode,
    },
    /// Leave LABEL: complete or iterate back to FIND.
    Advance {
        #[arg(short, long)]
        project: String,
        #[arg(long, value_enum, conflicts_with = "threshold", required_unless_present = "threshold")]
        decision: Option<DecisionArg>,
        /// Quality-gate threshold in [0, 1].
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_enum, requires = "threshold")]
        basis: Option<BasisArg>,
    },
    Show {
        #[arg(short, long)]
        project: String,
    },
    List,
}

#[derive(Debug, Subcommand)]
pub enum FindCmd {
    /// The FIND task as a worker sees it.
    Open {
        #[arg(short, long)]
        project: String,
    },
    Submit {
        #[arg(short, long)]
        project: String,
        #[arg(long)]
        worker: String,
        #[arg(long)]
        image: String,
        #[arg(long)]
        tag: String,
    },
    Close {
        #[arg(short, long)]
        project: String,
    },
    Feed {
        #[arg(short, long)]
        project: String,
        #[arg(long)]
        as_of: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum CodeCmd {
    /// Record the coding of one submission.
    Record {
        #[arg(short, long)]
        project: String,
        #[arg(long)]
        submission: String,
        #[arg(long)]
        correct: bool,
        #[arg(long)]
        group: Option<String>,
        #[arg(long)]
        useful: bool,
    },
    /// Correct / unique / useful percentages.
    Metrics {
        /// Coding sheet JSON file.
        #[arg(long, conflicts_with = "project", required_unless_present = "project")]
        file: Option<PathBuf>,
        #[arg(short, long)]
        project: Option<String>,
        /// Denominator; defaults to the current submission count.
        #[arg(long, requires = "project")]
        total: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ResolveCmd {
    Toggle {
        #[arg(short, long)]
        project: String,
        /// Submission id, or `seed`.
        #[arg(long)]
        target: String,
    },
    Commit {
        #[arg(short, long)]
        project: String,
    },
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(short, long, conflicts_with = "labels", required_unless_present = "labels")]
    project: Option<String>,
    /// labels.jsonl export.
    #[arg(long, requires = "intent")]
    labels: Option<PathBuf>,
    #[arg(long)]
    intent: Option<String>,
    /// Manifest file for `--labels`; defaults to the bundled one.
    #[arg(long, requires = "labels")]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,
    /// CSV layout: conditions, categories or ambiguity.
    #[arg(long)]
    layout: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Feed,
    None,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DecisionArg {
    Complete,
    Iterate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BasisArg {
    Gold,
    Agreement,
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    s.parse().map_err(|e: aw_core::compose::ComposeError| e.to_string())
}

fn parse_label(s: &str) -> Result<Label, String> {
    s.parse()
}

fn engine(dir: &Path) -> Result<Engine, ApiError> {
    Ok(Engine::with_data_dir(dir)?)
}

fn read_file(path: &Path) -> Result<String, ApiError> {
    std::fs::read_to_string(path).map_err(|e| ApiError::not_found(format!("{}: {e}", path.display())))
}

fn io_error(e: std::io::Error) -> ApiError {
    ApiError::new("storage_error", e.to_string())
}

pub fn run(cli: Cli) -> Result<String, ApiError> {
    let dir = cli.data_dir;
    match cli.command {
        Command::Init => {
            let manifests = dir.join("manifests");
            std::fs::create_dir_all(&manifests).map_err(io_error)?;
            std::fs::create_dir_all(dir.join("projects")).map_err(io_error)?;
            let path = manifests.join(format!("{DOG_MANIFEST_REF}.json"));
            std::fs::write(&path, DOG_MANIFEST_JSON).map_err(io_error)?;
            ops::to_json(&serde_json::json!({
                "dataDir": dir,
                "manifest": path,
            }))
        }
        Command::Project(cmd) => project(&dir, cmd),
        Command::Find(cmd) => find(&dir, cmd),
        Command::Code(cmd) => code(&dir, cmd),
        Command::Resolve(ResolveCmd::Toggle { project, target }) => {
            let state = engine(&dir)?.toggle_example(&project, &target)?;
            ops::to_json(&serde_json::json!({ "targetId": target, "state": state }))
        }
        Command::Resolve(ResolveCmd::Commit { project }) => ops::to_json(&engine(&dir)?.commit_resolution(&project)?),
        Command::Compose {
            project,
            condition,
            k,
            seed,
        } => ops::to_json(&engine(&dir)?.compose_bundle(&project, condition, k, seed)?),
        Command::Assign {
            project,
            worker,
            condition,
            batch_size,
            seed,
        } => ops::to_json(&engine(&dir)?.request_assignment(&project, &worker, condition, batch_size, seed)?),
        Command::Label {
            assignment,
            image,
            label,
        } => ops::to_json(&engine(&dir)?.submit_label(&assignment, &image, label)?),
        Command::Expire { assignment } => ops::to_json(&engine(&dir)?.expire_assignment(&assignment)?),
        Command::Report(args) => report(&dir, args),
        Command::Simulate {
            preset,
            trials,
            seed,
            intent,
            format,
        } => {
            let mut p = Preset::load(&preset)?;
            sim::apply_overrides(&mut p, trials, seed, intent.as_deref());
            let report = sim::run(&DatasetManifest::dog_fixture(), &p)?;
            sim::render(&report, format)
        }
        Command::Serve { host, port } => {
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| ApiError::new("internal", e.to_string()))?;
            runtime.block_on(http::serve(ServeConfig {
                host,
                port,
                data_dir: dir,
            }))?;
            Ok(String::new())
        }
    }
}

fn project(dir: &Path, cmd: ProjectCmd) -> Result<String, ApiError> {
    let engine = engine(dir)?;
    match cmd {
        ProjectCmd::Create {
            intent,
            id,
            manifest,
            group,
            seed_image,
            seed_tag,
            mode,
        } => {
            let p = engine.create_project(CreateProject {
                project_id: id,
                manifest_ref: manifest,
                intent_id: intent,
                experiment_group: group,
                seed_example: SeedExample {
                    image_uri: seed_image,
                    concept_tag: seed_tag,
                },
                collaboration_mode: match mode {
                    Mode::Feed => CollaborationMode::Feed,
                    Mode::None => CollaborationMode::None,
                },
            })?;
            ops::to_json(p.as_ref())
        }
        ProjectCmd::Advance {
            project,
            decision,
            threshold,
            basis,
        } => {
            let req = StageRequest::Advance(AdvanceRequest {
                decision: decision.map(|d| match d {
                    DecisionArg::Complete => Decision::Complete,
                    DecisionArg::Iterate => Decision::Iterate,
                }),
                threshold,
                basis: basis.map(|b| match b {
                    BasisArg::Gold => GateBasis::Gold,
                    BasisArg::Agreement => GateBasis::Agreement,
                }),
            });
            ops::to_json(ops::change_stage(&engine, &project, &req)?.as_ref())
        }
        ProjectCmd::Show { project } => ops::to_json(engine.project(&project)?.as_ref()),
        ProjectCmd::List => ops::to_json(&engine.project_ids()),
    }
}

fn find(dir: &Path, cmd: FindCmd) -> Result<String, ApiError> {
    let engine = engine(dir)?;
    match cmd {
        FindCmd::Open { project } => {
            let p = engine.project(&project)?;
            let manifest = engine.manifest(&project)?;
            let question = &manifest.intent(&p.intent_id)?.question_text;
            ops::to_json(&serde_json::json!({
                "projectId": p.id,
                "stage": p.stage,
                "iteration": p.iteration,
                "question": question,
                "collaborationMode": p.collaboration_mode,
                "feed": p.feed(None),
            }))
        }
        FindCmd::Submit {
            project,
            worker,
            image,
            tag,
        } => ops::to_json(&engine.submit_ambiguous_example(&project, &worker, &image, &tag)?),
        FindCmd::Close { project } => ops::to_json(ops::change_stage(&engine, &project, &StageRequest::Close)?.as_ref()),
        FindCmd::Feed { project, as_of } => ops::to_json(&engine.list_feed(&project, as_of)?),
    }
}

fn code(dir: &Path, cmd: CodeCmd) -> Result<String, ApiError> {
    match cmd {
        CodeCmd::Record {
            project,
            submission,
            correct,
            group,
            useful,
        } => {
            let coding = StageOneCoding::new(submission, correct, group, useful)?;
            ops::to_json(&engine(dir)?.code_submission(&project, coding)?)
        }
        CodeCmd::Metrics { file, project, total } => match (file, project) {
            (Some(f), _) => {
                let sheet = CodingSheet::from_json_str(&read_file(&f)?)?;
                ops::to_json(&sheet.metrics()?)
            }
            (None, Some(p)) => ops::to_json(&engine(dir)?.stage_one_metrics(&p, total)?),
            (None, None) => Err(ApiError::validation("give --file or --project")),
        },
    }
}

fn report(dir: &Path, args: ReportArgs) -> Result<String, ApiError> {
    let layout = ops::parse_layout(args.layout.as_deref())?;
    let (report, manifest) = match (args.project, args.labels) {
        (Some(p), _) => {
            let engine = engine(dir)?;
            (engine.report(&p)?, engine.manifest(&p)?.as_ref().clone())
        }
        (None, Some(path)) => {
            let manifest = match &args.manifest {
                Some(m) => DatasetManifest::from_json_str(&read_file(m)?)?,
                None => DatasetManifest::dog_fixture(),
            };
            let intent = args
                .intent
                .ok_or_else(|| ApiError::validation("--labels needs --intent"))?;
            let text = read_file(&path)?;
            let labels = read_label_records(std::io::BufReader::new(text.as_bytes()))?;
            let gold = derive_partition(&manifest, &intent)?;
            (accuracy_report(&labels, &gold, &manifest)?, manifest)
        }
        (None, None) => return Err(ApiError::validation("give --project or --labels")),
    };
    ops::render_report(&report, &manifest, args.format, layout)
}

/// Parses `std::env::args`, runs the verb and maps the outcome to an exit
/// status: 0 on success, 1 with `error[code]: message` on stderr, 2 for
/// usage errors.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if !out.is_empty() {
                let _ = stdout.write_all(out.as_bytes());
                if !out.ends_with('\n') {
                    let _ = stdout.write_all(b"\n");
                }
            }
            let _ = stdout.flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.code, e.message);
            ExitCode::from(1)
        }
    }
}

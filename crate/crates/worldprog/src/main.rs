//! Command-line entry point: generate, evaluate, intervene, benchmark, serve.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;
use worldprog::bench::{
    conway_table, load_boards, load_physics_dataset, physics_table, run_conway_benchmark, score_physics, write_random_boards,
    write_toy_dataset, AgentPipeline, FramePipeline, GtReplay, ProgramPipeline, StaticFrame, CONWAY_PROGRAM,
};
use worldprog::config::PipelineConfig;
use worldprog::core::conway::Rules;
use worldprog::core::prompt::AblationFlags;
use worldprog::imageio::{read_frames, read_png};
use worldprog::params::parse_patch_arg;
use worldprog::service::{GenerateRequest, Intervention, Pipeline};
use worldprog::store::RunStore;
use worldprog::vlm::backend_from_config;
use worldprog::{Error, Result};

#[derive(Parser)]
#[command(name = "worldprog", version, about = "Image + caption to executable world programs")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run store directory; overrides `serve.store`.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long)]
    no_api: bool,
    #[arg(long)]
    no_critic: bool,
    #[arg(long)]
    no_image: bool,
    #[arg(long)]
    no_caption: bool,
}

impl AblationArgs {
    fn flags(&self, base: AblationFlags) -> AblationFlags {
        AblationFlags {
            no_api: base.no_api || self.no_api,
            no_critic: base.no_critic || self.no_critic,
            no_image: base.no_image || self.no_image,
            no_caption: base.no_caption || self.no_caption,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PhysicsPipeline {
    Agent,
    Program,
    Static,
    Gt,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConwayPipeline {
    Reference,
    Agent,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a world program for an image and caption.
    Generate {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "")]
        caption: String,
        #[command(flatten)]
        ablation: AblationArgs,
        #[arg(long)]
        samples: Option<usize>,
        /// Perception fixture directory (labels.png, legend.json).
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long)]
        request_id: Option<String>,
    },
    /// Score a run against ground-truth frames.
    Evaluate {
        #[arg(long)]
        run: String,
        /// Directory of ground-truth PNG frames.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        gt_fps: Option<f64>,
        #[arg(long, default_value = "default")]
        category: String,
    },
    /// Edit a finished run and execute the result as a child run.
    Intervene {
        #[arg(long)]
        run: String,
        /// `path=value`, value parsed as JSON when possible. Repeatable.
        #[arg(long, conflicts_with_all = ["caption", "source"])]
        patch: Vec<String>,
        #[arg(long, conflicts_with = "source")]
        caption: Option<String>,
        /// File holding the replacement program.
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        request_id: Option<String>,
    },
    /// Physical-scene benchmark over `<dataset>/<category>/<scene>/`.
    BenchPhysics {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "agent")]
        pipeline: PhysicsPipeline,
        /// Program for `--pipeline program`.
        #[arg(long)]
        program: Option<PathBuf>,
        /// Where to write the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Game of Life benchmark over `.cells` boards.
    BenchConway {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, value_enum, default_value = "reference")]
        pipeline: ConwayPipeline,
        #[arg(long, default_value = "B3/S23")]
        rule: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write random `.cells` boards.
    MakeBoards {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        rows: usize,
        #[arg(long, default_value_t = 16)]
        cols: usize,
        #[arg(long, default_value_t = 0.35)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a small synthetic physics dataset with analytic ground truth.
    MakeToyDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        scenes: usize,
        #[arg(long, default_value_t = 30)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the REST API.
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = &cli.store {
        cfg.serve.store = s.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_report<T: serde::Serialize>(out: &Option<PathBuf>, v: &T) -> Result<()> {
    if let Some(p) = out {
        std::fs::write(p, serde_json::to_vec_pretty(v)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Generate { image, caption, ablation, samples, fixture, request_id } => {
            let pipeline = Pipeline::from_config(cfg)?;
            let mut req = GenerateRequest::new(read_png(&image)?, caption);
            req.ablation = ablation.flags(pipeline.config.model.ablation);
            req.n_samples = samples;
            req.request_id = request_id;
            req.fixture_dir = fixture;
            let meta = pipeline.generate(&req)?;
            print_json(&meta)?;
            eprintln!("run directory: {}", pipeline.store().run_dir(&meta.id)?.display());
        }
        Command::Evaluate { run, gt, gt_fps, category } => {
            let gt_fps = gt_fps.unwrap_or(cfg.eval.gt_fps);
            let pipeline = Pipeline::from_config(cfg)?;
            let scores = pipeline.evaluate(&run, &read_frames(&gt)?, gt_fps, &category)?;
            print_json(&scores)?;
        }
        Command::Intervene { run, patch, caption, source, request_id } => {
            let intervention = match (caption, source) {
                (Some(caption), _) => Intervention::CaptionEdit { caption },
                (None, Some(path)) => Intervention::SourceEdit { source: std::fs::read_to_string(path)? },
                (None, None) if !patch.is_empty() => {
                    let patches = patch.iter().map(|p| parse_patch_arg(p)).collect::<Result<BTreeMap<_, _>>>()?;
                    Intervention::ParameterPatch { patches }
                }
                _ => return Err(Error::Precondition("give --patch, --caption or --source".into())),
            };
            let pipeline = Pipeline::from_config(cfg)?;
            print_json(&pipeline.intervene(&run, &intervention, request_id)?)?;
        }
        Command::BenchPhysics { dataset, pipeline, program, out } => {
            let scenes = load_physics_dataset(&dataset, cfg.eval.gt_fps)?;
            let p: Box<dyn FramePipeline> = match pipeline {
                PhysicsPipeline::Agent => Box::new(AgentPipeline {
                    chat: backend_from_config(&cfg.model)?,
                    store: RunStore::open(&cfg.serve.store)?,
                    config: cfg.clone(),
                }),
                PhysicsPipeline::Program => {
                    let path = program.ok_or_else(|| Error::Precondition("--pipeline program needs --program".into()))?;
                    Box::new(ProgramPipeline::new(path.display().to_string(), std::fs::read_to_string(&path)?, cfg.clone()))
                }
                PhysicsPipeline::Static => Box::new(StaticFrame),
                PhysicsPipeline::Gt => Box::new(GtReplay {
                    gt: scenes.iter().map(|s| (format!("{}/{}", s.scene.category, s.scene.name), s.gt.clone())).collect(),
                }),
            };
            let report = score_physics(p.as_ref(), &scenes, cfg.eval.n_samples, cfg.eval.gt_fps, cfg.eval.motion(), cfg.eval.combiner())?;
            print!("{}", physics_table(&report));
            write_report(&out, &report)?;
        }
        Command::BenchConway { scenes, steps, pipeline, rule, out } => {
            let rules: Rules = rule.parse()?;
            let boards = load_boards(&scenes)?;
            let p: Box<dyn FramePipeline> = match pipeline {
                ConwayPipeline::Reference => Box::new(ProgramPipeline::new("reference", CONWAY_PROGRAM, cfg.clone())),
                ConwayPipeline::Agent => Box::new(AgentPipeline {
                    chat: backend_from_config(&cfg.model)?,
                    store: RunStore::open(&cfg.serve.store)?,
                    config: cfg.clone(),
                }),
            };
            let report = run_conway_benchmark(&boards, p.as_ref(), steps, &rules)?;
            print!("{}", conway_table(&report));
            write_report(&out, &report)?;
        }
        Command::MakeBoards { out, n, rows, cols, density, seed } => {
            for p in write_random_boards(&out, n, rows, cols, density, seed)? {
                println!("{}", p.display());
            }
        }
        Command::MakeToyDataset { out, scenes, frames, seed } => {
            write_toy_dataset(&out, &["falling"], scenes, frames, seed)?;
            println!("{}", out.display());
        }
        Command::Serve { host, port } => {
            let host = host.unwrap_or_else(|| cfg.serve.host.clone());
            let port = port.unwrap_or(cfg.serve.port);
            let addr: SocketAddr =
                format!("{host}:{port}").parse().map_err(|e| Error::Config(format!("bad address {host}:{port}: {e}")))?;
            let pipeline = Arc::new(Pipeline::from_config(cfg)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(worldprog::server::serve(pipeline, addr))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

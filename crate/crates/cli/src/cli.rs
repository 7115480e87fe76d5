//! `saog` subcommands.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use saog_core::dataset::{
    apply_directions, clevr_directions, decode_parse_graph_compact, encode_parse_graph_compact,
    ingest_clevr_str, synth_dataset, SceneDataset, DEFAULT_RELATION_FILTER,
};
use saog_core::energy::{term_sums, Bounds, LocationHistogram};
use saog_core::grammar::{ensure_valid, GrammarSpec, ObjectInstance, ParseGraph, RelationName};
use saog_core::learning::{fit_branch_probs, train_weights, write_train_trace_csv, CdConfig};
use saog_core::mcmc::{default_schedule, infer_relations_gibbs, infer_relations_map, ChainConfig};
use saog_core::projection::rasterize_instance_map;
use serde::Deserialize;

use crate::service::{router, AppState, InferMethod, InferResponse};

#[derive(Debug, Parser)]
#[command(
    name = "saog",
    version,
    about = "Scene grammar sampling, learning, inference and editing service"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the built-in CLEVR grammar to a file
    InitSpec {
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample parse graphs from a grammar
    Sample(SampleArgs),
    /// Fit branch probabilities, location histogram and energy weights to a dataset
    Learn(LearnArgs),
    /// Infer MAP relations for a set of objects
    Infer(InferArgs),
    /// Rasterize a parse graph to an instance map
    Project(ProjectArgs),
    /// Convert CLEVR scenes.json into a dataset
    Ingest(IngestArgs),
    /// Encode a parse graph with the compact codec
    Encode {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a compact parse graph to JSON
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        spec: SpecArg,
    },
    /// Run the HTTP editing service
    Serve(ServeArgs),
    /// Run the acceptance criteria and print a report
    Eval {
        /// Criterion ids to run (default: all)
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        /// Also write the report as JSON
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SpecArg {
    /// Grammar spec JSON (default: the built-in CLEVR grammar)
    #[arg(long, env = "SAOG_SPEC")]
    pub spec: Option<PathBuf>,
}

impl SpecArg {
    pub fn load(&self) -> Result<GrammarSpec> {
        let spec = match &self.spec {
            Some(p) => {
                GrammarSpec::load(p).with_context(|| format!("loading spec {}", p.display()))?
            }
            None => GrammarSpec::clevr_default(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    /// MH steps per scene, burn-in included
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
}

impl ChainArgs {
    fn config(&self) -> ChainConfig {
        ChainConfig::default().with_steps(self.steps, self.burn_in)
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub spec: SpecArg,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
    /// Also write map_NNNNN.simap and .ppm per scene
    #[arg(long)]
    pub maps: bool,
    #[command(flatten)]
    pub chain: ChainArgs,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    /// Starting grammar; its catalog, sizes and relation directions are kept
    #[command(flatten)]
    pub spec: SpecArg,
    /// Dataset file or directory
    #[arg(long)]
    pub data: PathBuf,
    /// Fitted spec output
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub bins: usize,
    /// Histogram smoothing in bins
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub floor: f64,
    /// CD iterations; 0 keeps the starting weights
    #[arg(long, default_value_t = 400)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 128)]
    pub samples: usize,
    #[arg(long, default_value_t = 200)]
    pub steps_per_iter: usize,
    #[arg(long, default_value_t = 0.5)]
    pub tail_average: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-iteration CSV trace
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub spec: SpecArg,
    /// JSON list of objects, or a parse graph whose relations are ignored
    #[arg(long)]
    pub objects: PathBuf,
    #[arg(long, value_enum, default_value = "map")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 50)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum MethodArg {
    Map,
    Gibbs,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub spec: SpecArg,
    #[arg(long)]
    pub graph: PathBuf,
    /// SIMAP1 output
    #[arg(long)]
    pub out: PathBuf,
    /// PPM preview output
    #[arg(long)]
    pub ppm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub spec: SpecArg,
    /// CLEVR scenes.json
    #[arg(long)]
    pub scenes: PathBuf,
    /// Dataset output: a .json file, or a directory otherwise
    #[arg(long)]
    pub out: PathBuf,
    /// Relation types to import
    #[arg(long, value_delimiter = ',', default_values = ["front", "right"])]
    pub relations: Vec<String>,
    /// Take relation directions from the file's `directions` block
    #[arg(long)]
    pub use_directions: bool,
    /// Write the grammar used for ingestion, with any imported directions
    #[arg(long)]
    pub spec_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub spec: SpecArg,
    #[arg(long, env = "SAOG_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Restore sessions from and snapshot them to this directory
    #[arg(long, env = "SAOG_SNAPSHOT_DIR")]
    pub snapshot_dir: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::InitSpec { out } => {
            GrammarSpec::clevr_default().save(&out)?;
            Ok(true)
        }
        Command::Sample(a) => sample(a),
        Command::Learn(a) => learn(a),
        Command::Infer(a) => infer(a),
        Command::Project(a) => project(a),
        Command::Ingest(a) => ingest(a),
        Command::Encode { graph, out } => {
            let g = ParseGraph::load(&graph)?;
            let bytes = encode_parse_graph_compact(&g)?;
            std::fs::write(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
            eprintln!(
                "{} objects, {} relations, {} bytes",
                g.objects.len(),
                g.relations.len(),
                bytes.len()
            );
            Ok(true)
        }
        Command::Decode { input, out, spec } => {
            let bytes =
                std::fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let g = decode_parse_graph_compact(&bytes, &spec.load()?)?;
            write_json(out.as_deref(), &g)?;
            Ok(true)
        }
        Command::Serve(a) => serve(a),
        Command::Eval { only, report } => {
            let r =
                saog_eval::run_selected(&only, |o| println!("{o}")).map_err(anyhow::Error::msg)?;
            if let Some(path) = report {
                std::fs::write(&path, serde_json::to_string_pretty(&r)?)?;
            }
            Ok(r.all_passed())
        }
    }
}

fn write_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => {
            std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn sample(a: SampleArgs) -> Result<bool> {
    let spec = a.spec.load()?;
    let ds = synth_dataset(&spec, a.n, &a.chain.config(), a.seed)?;
    ds.save_dir(&a.out)?;
    if a.maps {
        for (i, g) in ds.graphs.iter().enumerate() {
            let map = rasterize_instance_map(g, &spec)?;
            map.write_simap(a.out.join(format!("map_{i:05}.simap")))?;
            map.write_ppm(a.out.join(format!("map_{i:05}.ppm")))?;
        }
    }
    eprintln!("wrote {} scenes to {}", ds.len(), a.out.display());
    Ok(true)
}

fn learn(a: LearnArgs) -> Result<bool> {
    let mut spec = a.spec.load()?;
    let ds = SceneDataset::load(&a.data)
        .with_context(|| format!("loading dataset {}", a.data.display()))?;
    if ds.is_empty() {
        bail!("dataset {} is empty", a.data.display());
    }
    for (i, g) in ds.graphs.iter().enumerate() {
        ensure_valid(&spec, g).with_context(|| format!("scene {i}"))?;
    }
    fit_branch_probs(&ds.graphs, spec.relations.len())?.apply_to(&mut spec)?;
    spec.camera = ds.camera.clone();

    let locations: Vec<(f64, f64)> = ds
        .graphs
        .iter()
        .flat_map(|g| g.objects.iter().map(|o| (o.location.x, o.location.y)))
        .collect();
    if !locations.is_empty() {
        let bounds = Bounds::padded(&locations, 0.05)?;
        spec.histogram = LocationHistogram::fit(&locations, bounds, a.bins, a.sigma, a.floor)?;
    }

    if a.iterations > 0 {
        let cd = CdConfig {
            learning_rate: a.learning_rate,
            iterations: a.iterations,
            sample_count: a.samples,
            chain_steps_per_iter: a.steps_per_iter,
            persistent: true,
            tail_average: a.tail_average,
            seed: a.seed,
        };
        let (weights, trace) = train_weights(&ds.graphs, &spec, &cd, &ChainConfig::default())?;
        if let Some(path) = &a.trace {
            write_train_trace_csv(path, &trace)?;
        }
        spec.weights = weights;
    }
    spec.validate()?;
    spec.save(&a.out)?;
    let w = spec.weights;
    eprintln!(
        "fitted {} scenes; weights relation {:.4}, camera {:.4}, height {:.4}",
        ds.len(),
        w.relation,
        w.camera,
        w.height
    );
    Ok(true)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ObjectsInput {
    List(Vec<ObjectInstance>),
    Graph(ParseGraph),
}

fn infer(a: InferArgs) -> Result<bool> {
    let spec = a.spec.load()?;
    let text = std::fs::read_to_string(&a.objects)
        .with_context(|| format!("reading {}", a.objects.display()))?;
    let objects =
        match serde_json::from_str(&text).context("expected a list of objects or a parse graph")? {
            ObjectsInput::List(o) => o,
            ObjectsInput::Graph(g) => g.objects,
        };
    ensure_valid(&spec, &ParseGraph::new(objects.clone(), vec![]))?;
    let method = match a.method {
        MethodArg::Map => InferMethod::Map,
        MethodArg::Gibbs => InferMethod::Gibbs,
    };
    let relations = match method {
        InferMethod::Map => infer_relations_map(&objects, &spec)?,
        InferMethod::Gibbs => infer_relations_gibbs(
            &objects,
            &spec,
            a.sweeps,
            &default_schedule(a.sweeps),
            a.seed,
        )?,
    };
    let g = ParseGraph::new(objects, relations);
    let sum_relation = term_sums(&g, &spec)?.relation;
    write_json(
        a.out.as_deref(),
        &InferResponse {
            relations: g.relations,
            sum_relation,
        },
    )?;
    Ok(true)
}

fn project(a: ProjectArgs) -> Result<bool> {
    let spec = a.spec.load()?;
    let g = ParseGraph::load(&a.graph)?;
    ensure_valid(&spec, &g)?;
    let map = rasterize_instance_map(&g, &spec)?;
    map.write_simap(&a.out)?;
    if let Some(p) = &a.ppm {
        map.write_ppm(p)?;
    }
    Ok(true)
}

fn ingest(a: IngestArgs) -> Result<bool> {
    let mut spec = a.spec.load()?;
    let text = std::fs::read_to_string(&a.scenes)
        .with_context(|| format!("reading {}", a.scenes.display()))?;
    if a.use_directions {
        apply_directions(&mut spec, &clevr_directions(&text)?);
    }
    let filter: Vec<RelationName> = if a.relations.is_empty() {
        DEFAULT_RELATION_FILTER.to_vec()
    } else {
        a.relations
            .iter()
            .map(|r| serde_json::from_value(serde_json::Value::String(r.clone())))
            .collect::<std::result::Result<_, _>>()
            .context("unknown relation name")?
    };
    let mut ds = ingest_clevr_str(&text, &spec, &filter)?;
    ds.source = format!("clevr:{}", a.scenes.display());
    if a.out.extension().is_some_and(|e| e == "json") {
        ds.save(&a.out)?;
    } else {
        ds.save_dir(&a.out)?;
    }
    if let Some(p) = &a.spec_out {
        spec.save(p)?;
    }
    eprintln!("ingested {} scenes", ds.len());
    Ok(true)
}

fn serve(a: ServeArgs) -> Result<bool> {
    let state = Arc::new(AppState::new(a.spec.load()?));
    if let Some(dir) = &a.snapshot_dir {
        if dir.is_dir() {
            let n = state.restore(dir)?;
            eprintln!("restored {n} sessions from {}", dir.display());
        }
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.bind)
            .await
            .with_context(|| format!("binding {}", a.bind))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    if let Some(dir) = &a.snapshot_dir {
        let n = state.snapshot(dir)?;
        eprintln!("saved {n} sessions to {}", dir.display());
    }
    Ok(true)
}

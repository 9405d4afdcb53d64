//! Command-line front end: train the toy model, generate through the
//! protocol (in process or over a socket), sweep settings, serve a middle
//! shard and analyze spectra and packet sizes.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adversary::{
    eavesdrop_generate, remnant_generate, residual_stream, write_capture, AdversaryMode, Exchange,
};
use crate::metrics::{
    affine_fit, comm_table, evaluate_scenario, noise_baseline, spectra_report, AffineFit,
    EvalReport, NoiseSearch, PromptCase,
};
use crate::model::corpus::{bundled_corpus, held_out_prompts};
use crate::model::{
    init_model, read_checkpoint, save_model, train, CheckpointRole, ModelConfig, ModelError,
    Tokenizer, TrainConfig, TrainReport, TransformerModel,
};
use crate::protocol::{
    pipeline_generate, CapturingTransport, GenerationTrace, InMemoryTransport, MiddleServer,
    PfidClient, PfidConfig, ProtocolError, ServerHandle, TcpTransport, Transport,
};
use crate::shard::{split, ClientShards, MiddleShard, ShardError, ShardSpec, ShardedModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;
pub const EXIT_PROTOCOL: i32 = 4;

/// Environment variable consulted when `--seed` is absent.
pub const SEED_ENV: &str = "PFID_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Transport(_) => EXIT_TRANSPORT,
            Self::Protocol(_) => EXIT_PROTOCOL,
            Self::Other(_) => EXIT_OTHER,
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Config(msg) => Self::Config(msg),
            ProtocolError::Transport { .. } => Self::Transport(e.to_string()),
            ProtocolError::Packet { .. }
            | ProtocolError::Remote { .. }
            | ProtocolError::Desync { .. }
            | ProtocolError::Shape { .. } => Self::Protocol(e.to_string()),
            ProtocolError::Shard(s) => s.into(),
            ProtocolError::Model(_) | ProtocolError::Linalg(_) => Self::Other(e.to_string()),
        }
    }
}

impl From<ShardError> for CliError {
    fn from(e: ShardError) -> Self {
        match e {
            ShardError::Model(_) => Self::Other(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) => Self::Config(e.to_string()),
            _ => Self::Other(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Other(format!("{}: {e}", path.display()))
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| io_err(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

/// What a command ran with and what it wrote.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Option<PfidConfig>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub seeds: BTreeMap<String, u64>,
    pub checkpoint_sha256: Option<String>,
    pub scenarios: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            ..Self::default()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest values are finite")
    }

    pub fn sha256(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    /// Writes `<primary>.manifest.json` and returns its hash.
    fn write_next_to(&self, primary: &Path) -> Result<String, CliError> {
        write_file(
            &sibling(primary, ".manifest.json"),
            self.to_json().as_bytes(),
        )?;
        Ok(self.sha256())
    }
}

fn parse_layer_range(s: &str) -> Result<ShardSpec, String> {
    let (k, n) = s
        .split_once(',')
        .ok_or_else(|| format!("expected K,N, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok(ShardSpec::new(parse(k)?, parse(n)?))
}

#[derive(Parser, Debug)]
#[command(
    name = "pfid",
    version,
    about = "Split transformer inference with truncated-SVD hidden-state exchange"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train the toy model and write a checkpoint, loss log and manifest.
    Train(TrainArgs),
    /// Generate a continuation as the pipeline, the client, an eavesdropper or the remnant decoder.
    Generate(GenerateArgs),
    /// Evaluate a grid of settings on held-out prompts.
    Sweep(SweepArgs),
    /// Serve the middle shard over TCP.
    Serve(ServeArgs),
    /// Per-layer singular spectra and packet-size tables.
    Analyze(AnalyzeArgs),
    /// Split a full checkpoint into client and server checkpoints.
    Export(ExportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Training text, one example per line; the bundled corpus when absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 256)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 128)]
    pub max_seq: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 64)]
    pub block_size: usize,
    /// Seeds weight init and batch sampling.
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

impl TrainArgs {
    /// Defaults for everything but the output path.
    pub fn new(out: PathBuf) -> Self {
        let t = TrainConfig::default();
        let m = ModelConfig::default();
        Self {
            corpus: None,
            out,
            steps: t.steps,
            layers: m.n_layers,
            d_model: m.d_model,
            heads: m.n_heads,
            d_ff: m.d_ff,
            max_seq: m.max_seq,
            lr: t.lr,
            batch_size: t.batch_size,
            block_size: t.block_size,
            seed: 0,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.layers,
            d_model: self.d_model,
            n_heads: self.heads,
            d_ff: self.d_ff,
            vocab_size,
            max_seq: self.max_seq,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            lr: self.lr,
            seed: self.seed,
            batch_size: self.batch_size,
            block_size: self.block_size,
            ..TrainConfig::default()
        }
    }
}

/// Protocol settings: a TOML file, then flag overrides.
#[derive(Args, Debug, Clone, Default)]
pub struct ProtocolFlags {
    /// TOML protocol configuration; the flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Shard boundaries: head is [0,K), middle [K,N), tail [N,L).
    #[arg(long, value_parser = parse_layer_range, value_name = "K,N")]
    pub layer_range: Option<ShardSpec>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub phead: Option<f64>,
    #[arg(long)]
    pub ptail: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Send a full-rank SVD instead of the dense state at a zero ratio.
    #[arg(long)]
    pub no_bypass: bool,
    /// Argmax decoding instead of temperature/top-k/top-p sampling.
    #[arg(long)]
    pub greedy: bool,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    /// Seeds sampling, SVD sketches and noise.
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
}

impl ProtocolFlags {
    pub fn resolve(&self) -> Result<PfidConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                PfidConfig::from_toml(&text)?
            }
            None => PfidConfig::default(),
        };
        if let Some(spec) = self.layer_range {
            cfg.spec = spec;
        }
        if let Some(v) = self.omega {
            cfg.omega = v;
        }
        if let Some(v) = self.phead {
            cfg.phead = v;
        }
        if let Some(v) = self.ptail {
            cfg.ptail = v;
        }
        if let Some(v) = self.noise_sigma {
            cfg.noise_sigma = v;
        }
        if self.no_bypass {
            cfg.bypass_svd_at_zero = false;
        }
        if self.greedy {
            cfg.sampling.greedy = true;
        }
        if let Some(v) = self.max_new_tokens {
            cfg.sampling.max_new_tokens = v;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.sampling.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenerateMode {
    Pipeline,
    Local,
    Eavesdropper,
    Remnant,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransportKind {
    /// Client and server in this process.
    Sim,
    /// A `pfid serve` instance at `--addr`.
    Socket,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdversaryArg {
    TailOnly,
    WithHead,
}

impl From<AdversaryArg> for AdversaryMode {
    fn from(a: AdversaryArg) -> Self {
        match a {
            AdversaryArg::TailOnly => AdversaryMode::TailOnly,
            AdversaryArg::WithHead => AdversaryMode::TailPlusInterceptedHead,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct GenerateArgs {
    /// Full or client checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub prompt: String,
    #[arg(long, value_enum, default_value_t = GenerateMode::Local)]
    pub mode: GenerateMode,
    #[arg(long, value_enum, default_value_t = TransportKind::Sim)]
    pub transport: TransportKind,
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub addr: String,
    #[arg(long, value_enum, default_value_t = AdversaryArg::TailOnly)]
    pub adversary: AdversaryArg,
    #[command(flatten)]
    pub protocol: ProtocolFlags,
    /// Write the trace as JSON.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Write the captured packets of the session.
    #[arg(long)]
    pub capture_out: Option<PathBuf>,
    /// Print the trace as JSON instead of the text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    /// Full checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Base settings; every grid axis left empty keeps its base value.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_layer_range, value_name = "K,N", num_args = 1..)]
    pub layer_range: Vec<ShardSpec>,
    #[arg(long, num_args = 1..)]
    pub omega: Vec<f64>,
    #[arg(long, num_args = 1..)]
    pub phead: Vec<f64>,
    #[arg(long, num_args = 1..)]
    pub ptail: Vec<f64>,
    #[arg(long, num_args = 1..)]
    pub noise_sigma: Vec<f64>,
    #[arg(long)]
    pub greedy: bool,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// Number of held-out prompts.
    #[arg(long, default_value_t = 50)]
    pub prompts: usize,
    #[arg(long, default_value_t = 7)]
    pub prompt_seed: u64,
    /// Also calibrate a Gaussian-noise baseline against the first grid point.
    #[arg(long)]
    pub noise_baseline: bool,
    /// Write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ServeArgs {
    /// Server (middle) or full checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port; the bound address is printed on stdout.
    #[arg(long, default_value_t = 7878)]
    pub port: u16,
    #[command(flatten)]
    pub protocol: ProtocolFlags,
}

#[derive(Args, Debug, Clone)]
pub struct AnalyzeArgs {
    /// Full checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub prompts: usize,
    #[arg(long, default_value_t = 7)]
    pub prompt_seed: u64,
    /// Size of the spectrum tail; 70% of the spectrum when absent.
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_parser = parse_layer_range, value_name = "K,N")]
    pub layer_range: Option<ShardSpec>,
    #[arg(long)]
    pub client_out: PathBuf,
    #[arg(long)]
    pub server_out: PathBuf,
}

/// A checkpoint file in whichever role it was written.
pub enum LoadedCheckpoint {
    Full(TransformerModel),
    Client(ClientShards),
    Server(MiddleShard),
}

pub fn load_checkpoint(path: &Path) -> Result<(LoadedCheckpoint, String), CliError> {
    let bytes = read_file(path)?;
    let hash = sha256_hex(&bytes);
    let (header, model) = read_checkpoint(&bytes)?;
    let loaded = match header.role {
        CheckpointRole::Full => LoadedCheckpoint::Full(model),
        CheckpointRole::Client => LoadedCheckpoint::Client(ClientShards::import(&bytes)?),
        CheckpointRole::Server => LoadedCheckpoint::Server(MiddleShard::import(&bytes)?),
    };
    Ok((loaded, hash))
}

fn load_full(path: &Path) -> Result<(TransformerModel, String), CliError> {
    match load_checkpoint(path)? {
        (LoadedCheckpoint::Full(m), hash) => Ok((m, hash)),
        _ => Err(CliError::Config(format!(
            "{} is not a full checkpoint",
            path.display()
        ))),
    }
}

fn check_spec(found: ShardSpec, wanted: ShardSpec) -> Result<(), CliError> {
    if found != wanted {
        return Err(CliError::Config(format!(
            "checkpoint is split at {},{} but the configuration asks for {},{}",
            found.split_k, found.split_n, wanted.split_k, wanted.split_n
        )));
    }
    Ok(())
}

fn seeds_of(cfg: &PfidConfig) -> BTreeMap<String, u64> {
    BTreeMap::from([
        ("protocol".to_string(), cfg.seed),
        ("sampling".to_string(), cfg.sampling.seed),
    ])
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainReport, CliError> {
    let owned;
    let corpus = match &args.corpus {
        Some(path) => {
            owned = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            owned.as_str()
        }
        None => bundled_corpus(),
    };
    let tokenizer = Tokenizer::default();
    let model_cfg = args.model_config(tokenizer.vocab_size());
    let train_cfg = args.train_config();
    let (model, report) = train(init_model(model_cfg)?, corpus, &tokenizer, &train_cfg)?;
    let bytes = save_model(&model);
    write_file(&args.out, &bytes)?;
    let losses = sibling(&args.out, ".losses.json");
    write_file(
        &losses,
        serde_json::to_string(&report)
            .expect("finite losses")
            .as_bytes(),
    )?;

    let mut manifest = RunManifest::new("train");
    manifest.model = Some(model_cfg);
    manifest.train = Some(train_cfg);
    manifest.seeds.insert("train".into(), args.seed);
    manifest.checkpoint_sha256 = Some(sha256_hex(&bytes));
    manifest.outputs = vec![args.out.display().to_string(), losses.display().to_string()];
    manifest.write_next_to(&args.out)?;
    println!(
        "trained {} steps: eval loss {:.4} -> {:.4}",
        train_cfg.steps, report.initial_eval_loss, report.final_eval_loss
    );
    Ok(report)
}

fn run_client<T: Transport>(
    client: &PfidClient,
    transport: T,
    prompt: &str,
) -> Result<(GenerationTrace, Vec<Exchange>), CliError> {
    let mut capture = CapturingTransport::new(transport);
    let trace = client.generate(&mut capture, prompt)?;
    Ok((trace, capture.into_exchanges()))
}

/// Runs one generation and returns the trace of the requested view.
pub fn cmd_generate(args: &GenerateArgs) -> Result<GenerationTrace, CliError> {
    let cfg = args.protocol.resolve()?;
    let tokenizer = Tokenizer::default();
    let (loaded, hash) = load_checkpoint(&args.checkpoint)?;
    let sharded: Option<ShardedModel> = match &loaded {
        LoadedCheckpoint::Full(m) => Some(split(m, cfg.spec)?),
        _ => None,
    };
    let needs_full = || {
        CliError::Config(format!(
            "{:?} mode over {:?} needs a full checkpoint",
            args.mode, args.transport
        ))
    };

    let mut exchanges = Vec::new();
    let trace = if args.mode == GenerateMode::Pipeline {
        let model = sharded.as_ref().ok_or_else(needs_full)?.to_model();
        pipeline_generate(&model, &tokenizer, &cfg, &args.prompt)?
    } else {
        let shards = match (&loaded, &sharded) {
            (_, Some(s)) => s.client(),
            (LoadedCheckpoint::Client(c), None) => {
                check_spec(c.spec, cfg.spec)?;
                c.clone()
            }
            _ => {
                return Err(CliError::Config(
                    "a server checkpoint cannot run the client".into(),
                ))
            }
        };
        let client = PfidClient::new(shards.clone(), cfg, tokenizer.clone())?;
        let (local, ex) = match args.transport {
            TransportKind::Sim => {
                let middle = sharded.as_ref().ok_or_else(needs_full)?.middle.clone();
                let server = Arc::new(MiddleServer::new(middle, cfg));
                run_client(&client, InMemoryTransport::new(server), &args.prompt)?
            }
            TransportKind::Socket => {
                let tcp = TcpTransport::connect(args.addr.as_str())
                    .map_err(|e| CliError::Transport(format!("{}: {e}", args.addr)))?;
                run_client(&client, tcp, &args.prompt)?
            }
        };
        exchanges = ex;
        match args.mode {
            GenerateMode::Local | GenerateMode::Pipeline => local,
            GenerateMode::Eavesdropper => eavesdrop_generate(
                &shards,
                &exchanges,
                args.adversary.into(),
                &cfg,
                &tokenizer,
                &args.prompt,
            )?,
            GenerateMode::Remnant => {
                let model = sharded.as_ref().ok_or_else(needs_full)?;
                let residuals = residual_stream(&shards, &tokenizer, &local, &exchanges)?;
                remnant_generate(model, &residuals, &cfg, &tokenizer, &args.prompt)?.trace
            }
        }
    };

    let mut manifest = RunManifest::new("generate");
    manifest.config = Some(cfg);
    manifest.seeds = seeds_of(&cfg);
    manifest.checkpoint_sha256 = Some(hash);
    manifest.scenarios = vec![format!("{:?}/{:?}", args.mode, args.transport).to_lowercase()];
    if let Some(path) = &args.capture_out {
        write_file(path, &write_capture(&exchanges))?;
        manifest.outputs.push(path.display().to_string());
    }
    if let Some(path) = &args.trace_out {
        write_file(path, trace.to_json().as_bytes())?;
        manifest.outputs.push(path.display().to_string());
        manifest.write_next_to(path)?;
    }
    if args.json {
        println!("{}", trace.to_json());
    } else {
        println!("{}{}", trace.prompt, trace.text);
    }
    Ok(trace)
}

fn grid<T: Copy>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

pub fn scenario_name(cfg: &PfidConfig) -> String {
    format!(
        "K{}N{} o={} ph={} pt={} s={}",
        cfg.spec.split_k, cfg.spec.split_n, cfg.omega, cfg.phead, cfg.ptail, cfg.noise_sigma
    )
}

/// Every combination of the grid axes, in axis order.
pub fn sweep_configs(args: &SweepArgs) -> Result<Vec<PfidConfig>, CliError> {
    let base = ProtocolFlags {
        config: args.config.clone(),
        greedy: args.greedy,
        max_new_tokens: args.max_new_tokens,
        seed: args.seed,
        ..ProtocolFlags::default()
    }
    .resolve()?;
    let mut out = Vec::new();
    for spec in grid(&args.layer_range, base.spec) {
        for omega in grid(&args.omega, base.omega) {
            for phead in grid(&args.phead, base.phead) {
                for ptail in grid(&args.ptail, base.ptail) {
                    for noise_sigma in grid(&args.noise_sigma, base.noise_sigma) {
                        let cfg = PfidConfig {
                            spec,
                            omega,
                            phead,
                            ptail,
                            noise_sigma,
                            ..base
                        };
                        cfg.validate()?;
                        out.push(cfg);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<EvalReport, CliError> {
    let configs = sweep_configs(args)?;
    let (model, hash) = load_full(&args.checkpoint)?;
    let tokenizer = Tokenizer::default();
    let cases: Vec<PromptCase> = held_out_prompts(bundled_corpus(), args.prompts, args.prompt_seed)
        .into_iter()
        .map(Into::into)
        .collect();
    let mut report = EvalReport::default();
    for cfg in &configs {
        let sharded = split(&model, cfg.spec)?;
        let name = scenario_name(cfg);
        let (scenario, _) = evaluate_scenario(&name, &sharded, &tokenizer, cfg, &cases)
            .map_err(|e| CliError::Other(e.to_string()))?;
        report.scenarios.push(scenario);
    }
    if args.noise_baseline {
        let cfg = &configs[0];
        let nb = noise_baseline(
            &split(&model, cfg.spec)?,
            &tokenizer,
            cfg,
            &cases,
            &NoiseSearch::default(),
        )
        .map_err(|e| CliError::Other(e.to_string()))?;
        report.noise_baseline = Some(nb);
    }
    if let Some(path) = &args.out {
        let mut manifest = RunManifest::new("sweep");
        manifest.config = configs.first().copied();
        manifest.seeds = seeds_of(&configs[0]);
        manifest.seeds.insert("prompts".into(), args.prompt_seed);
        manifest.checkpoint_sha256 = Some(hash);
        manifest.scenarios = configs.iter().map(scenario_name).collect();
        manifest.outputs = vec![path.display().to_string()];
        report.manifest_sha256 = Some(manifest.write_next_to(path)?);
        write_file(path, report.to_json().as_bytes())?;
    }
    print!("{}", report.to_table());
    Ok(report)
}

/// Loads the middle shard and starts serving it on a background thread.
pub fn start_server(args: &ServeArgs) -> Result<ServerHandle, CliError> {
    let mut cfg = args.protocol.resolve()?;
    let shard = match load_checkpoint(&args.checkpoint)?.0 {
        LoadedCheckpoint::Full(m) => split(&m, cfg.spec)?.middle,
        LoadedCheckpoint::Server(s) => {
            match args.protocol.layer_range {
                Some(spec) => check_spec(s.spec(), spec)?,
                None => cfg.spec = s.spec(),
            }
            s
        }
        LoadedCheckpoint::Client(_) => {
            return Err(CliError::Config(
                "a client checkpoint has no middle layers".into(),
            ))
        }
    };
    let server = Arc::new(MiddleServer::new(shard, cfg));
    let addr = format!("{}:{}", args.host, args.port);
    ServerHandle::spawn(server, addr.as_str())
        .map_err(|e| CliError::Transport(format!("{addr}: {e}")))
}

/// Serves until the process is killed.
pub fn cmd_serve(args: &ServeArgs) -> Result<(), CliError> {
    let handle = start_server(args)?;
    println!("listening on {}", handle.addr());
    std::io::stdout()
        .flush()
        .map_err(|e| CliError::Other(e.to_string()))?;
    loop {
        std::thread::park();
    }
}

/// Sequence lengths and ranks the packet-size table covers.
pub fn comm_grid(config: &ModelConfig) -> (Vec<usize>, Vec<usize>) {
    let ns = [16, 32, 64, 128]
        .into_iter()
        .filter(|&n| n <= config.max_seq)
        .collect();
    (ns, (1..=config.d_model).collect())
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<EvalReport, CliError> {
    let (model, hash) = load_full(&args.checkpoint)?;
    let tokenizer = Tokenizer::default();
    let prompts = held_out_prompts(bundled_corpus(), args.prompts, args.prompt_seed)
        .into_iter()
        .map(|p| {
            let mut tokens = tokenizer.encode(&format!("{}{}", p.prompt, p.reference))?;
            tokens.truncate(model.config.max_seq);
            Ok(tokens)
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let spectra =
        spectra_report(&model, &prompts, args.q).map_err(|e| CliError::Other(e.to_string()))?;
    let (ns, ks) = comm_grid(&model.config);
    let comm = comm_table(model.config.d_model, &ns, &ks);
    let mut fits: Vec<(usize, AffineFit)> = Vec::new();
    for &n in &ns {
        let points: Vec<(usize, usize)> = comm
            .iter()
            .filter(|r| r.n == n)
            .map(|r| (r.k, r.bytes))
            .collect();
        if let Some(fit) = affine_fit(&points) {
            fits.push((n, fit));
        }
    }

    println!("{}", spectra.to_table());
    println!(
        "{:>5} {:>5} {:>5} {:>9} {:>9} {:>7}",
        "d", "n", "k", "bytes", "dense", "ratio"
    );
    for r in &comm {
        println!(
            "{:>5} {:>5} {:>5} {:>9} {:>9} {:>7.4}",
            r.d,
            r.n,
            r.k,
            r.bytes,
            r.dense_bytes,
            r.bytes as f64 / r.dense_bytes as f64
        );
    }
    for (n, fit) in &fits {
        println!(
            "n={n}: bytes = {} + {}·k, max residual {}",
            fit.intercept, fit.slope, fit.max_residual
        );
    }

    let mut report = EvalReport {
        spectra: Some(spectra),
        comm,
        // The worst fit over all sequence lengths.
        comm_fit: fits
            .into_iter()
            .map(|(_, f)| f)
            .max_by(|a, b| a.max_residual.total_cmp(&b.max_residual)),
        ..EvalReport::default()
    };
    if let Some(path) = &args.out {
        let mut manifest = RunManifest::new("analyze");
        manifest.model = Some(model.config);
        manifest.seeds.insert("prompts".into(), args.prompt_seed);
        manifest.checkpoint_sha256 = Some(hash);
        manifest.outputs = vec![path.display().to_string()];
        report.manifest_sha256 = Some(manifest.write_next_to(path)?);
        write_file(path, report.to_json().as_bytes())?;
    }
    Ok(report)
}

pub fn cmd_export(args: &ExportArgs) -> Result<(), CliError> {
    let (model, _) = load_full(&args.checkpoint)?;
    let sharded = split(&model, args.layer_range.unwrap_or_default())?;
    write_file(&args.client_out, &sharded.client().export())?;
    write_file(&args.server_out, &sharded.middle.export())?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(drop),
        Command::Generate(a) => cmd_generate(&a).map(drop),
        Command::Sweep(a) => cmd_sweep(&a).map(drop),
        Command::Serve(a) => cmd_serve(&a),
        Command::Analyze(a) => cmd_analyze(&a).map(drop),
        Command::Export(a) => cmd_export(&a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("pfid: {e}");
            e.exit_code()
        }
    }
}

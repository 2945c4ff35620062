use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use supportsim_core::analytics::{
    compute_stats, coverage_csv, distribution_csv, persona_coverage, strategy_distribution, strategy_transitions,
    topic_counts, transitions_csv,
};
use supportsim_core::dialogue::{generate_corpus, load_demo_pool, Dialogue};
use supportsim_core::embeddings::Embeddings;
use supportsim_core::gateway::{ChatGateway, HttpGateway, ReplayGateway, Transcript, TranscriptEntry};
use supportsim_core::metrics::{evaluate_model_outputs, navg, MetricReport};
use supportsim_core::persona::{realize_personas, Persona, DEMO_PROFILE};
use supportsim_core::qc::check_corpus;
use supportsim_core::reasoning::NodeMask;
use supportsim_core::scenario::{filter_scenarios, load_scenarios, FilterConfig};
use supportsim_core::sft::{export_sft, ExportConfig, ExportMode};
use supportsim_core::simulate::{RecordingGateway, SimulatedGateway};
use supportsim_core::storage::{import_esconv_format, read_corpus, write_corpus, AtomicWriter, Schema};
use supportsim_service::agents::{build_agents, AgentSpec};
use supportsim_service::{check_corpora, AppState, QualityCorpus, ServiceConfig};

use crate::config::{Backend, FileConfig};
use crate::{Cli, Command, GatewayArgs, UsageError};

const DEFAULT_PARALLEL: usize = 4;
const DEFAULT_TOP_K: usize = 10;
const DEFAULT_PORT: u16 = 8080;

/// Shared settings after layering flags over the config file.
struct Ctx<'a> {
    file: &'a FileConfig,
    seed: u64,
    force: bool,
}

pub fn run(cli: &Cli, file: &FileConfig) -> Result<()> {
    let ctx = Ctx {
        file,
        seed: cli.seed.or(file.seed).unwrap_or(0),
        force: cli.force || file.force.unwrap_or(false),
    };
    match &cli.command {
        Command::Ingest { input, out, min_words, block } => ingest(&ctx, input, out, *min_words, block),
        Command::Personas { scenarios, demo, out, parallel, max_retries, gateway } => {
            personas(&ctx, scenarios, demo.as_deref(), out, *parallel, *max_retries, gateway)
        }
        Command::Generate { personas, demos, out, parallel, mask, turns, max_retries, gateway } => generate(
            &ctx,
            GenerateArgs { personas, demos, out, parallel: *parallel, mask: mask.as_deref(), turns: *turns, max_retries: *max_retries },
            gateway,
        ),
        Command::Qc { corpus, personas, report, mask } => qc(&ctx, corpus, personas, report.as_deref(), mask.as_deref()),
        Command::Stats { corpus, personas, out } => stats(&ctx, corpus, personas.as_deref(), out),
        Command::Strategies { corpus, out } => {
            let d = strategy_distribution(&dialogues(corpus)?);
            write_json(out, &d, ctx.force)?;
            write_text(&csv_path(out), &distribution_csv(&d), ctx.force)
        }
        Command::Transitions { corpus, out, top_k } => {
            let k = top_k.or(file.analytics.top_k).unwrap_or(DEFAULT_TOP_K);
            let t = strategy_transitions(&dialogues(corpus)?, k);
            log::info!("top path: {}", t.top_path.join(" -> "));
            write_json(out, &t, ctx.force)?;
            write_text(&csv_path(out), &transitions_csv(&t), ctx.force)
        }
        Command::Coverage { corpus, personas, embeddings, out } => {
            let emb = Embeddings::load(embeddings)?;
            let c = persona_coverage(&dialogues(corpus)?, &bank(personas)?, &emb, ctx.seed)?;
            write_json(out, &c, ctx.force)?;
            write_text(&csv_path(out), &coverage_csv(&c), ctx.force)
        }
        Command::Eval { pred, reference, embeddings, baseline, out } => {
            eval(&ctx, pred, reference, embeddings, baseline.as_deref(), out)
        }
        Command::Export { corpus, mode, mask, out } => export(&ctx, corpus, mode, mask.as_deref(), out),
        Command::Import { input, out } => {
            let ds = import_esconv_format(input)?;
            write_corpus(out, Schema::Dialogue, &ds, ctx.force)?;
            log::info!("imported {} dialogues into {}", ds.len(), out.display());
            Ok(())
        }
        Command::Serve { host, port, store, agents, quality, min_turns, cors_origin } => serve(
            &ctx,
            ServeArgs { host: host.clone(), port: *port, store, agents, quality, min_turns: *min_turns, cors_origin: cors_origin.clone() },
        ),
    }
}

fn dialogues(path: &Path) -> Result<Vec<Dialogue>> {
    Ok(read_corpus(path, Schema::Dialogue)?)
}

fn bank(path: &Path) -> Result<Vec<Persona>> {
    Ok(read_corpus(path, Schema::Persona)?)
}

fn write_text(path: &Path, text: &str, force: bool) -> Result<()> {
    let mut w = AtomicWriter::create(path, force)?;
    w.write_line(text.trim_end_matches('\n'))?;
    w.commit()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T, force: bool) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?, force)
}

fn write_lines<T: Serialize>(path: &Path, records: &[T], force: bool) -> Result<()> {
    let mut w = AtomicWriter::create(path, force)?;
    for r in records {
        // Round-trip through Value so keys come out sorted.
        w.write_line(&serde_json::to_string(&serde_json::to_value(r)?)?)?;
    }
    w.commit()?;
    Ok(())
}

/// `out.json` -> `out.csv`.
fn csv_path(out: &Path) -> PathBuf {
    out.with_extension("csv")
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    out.with_file_name(name)
}

fn parse_mask(raw: &str) -> Result<NodeMask> {
    match raw.trim() {
        "all" => Ok(NodeMask::ALL),
        "none" | "" => Ok(NodeMask::NONE),
        list => NodeMask::parse_list(list).map_err(|e| UsageError(format!("--mask: unknown node {:?}", e.0)).into()),
    }
}

fn ingest(ctx: &Ctx, input: &Path, out: &Path, min_words: Option<usize>, block: &[String]) -> Result<()> {
    let mut cfg = FilterConfig::default().block(&ctx.file.ingest.block).block(block);
    if let Some(n) = min_words.or(ctx.file.ingest.min_words) {
        cfg.min_description_words = n;
    }
    let scenarios = load_scenarios(input)?;
    let outcome = filter_scenarios(&scenarios, &cfg);
    write_lines(out, &outcome.kept, ctx.force)?;
    write_lines(&sibling(out, ".rejected"), &outcome.rejected, ctx.force)?;
    log::info!("kept {} of {} scenarios; {} rejected", outcome.kept.len(), scenarios.len(), outcome.rejected.len());
    Ok(())
}

/// Gateway chosen by flags and config, optionally recording into a transcript.
struct Gateway {
    inner: RecordingGateway<Arc<dyn ChatGateway>>,
    record: Option<PathBuf>,
}

impl Gateway {
    fn open(ctx: &Ctx, args: &GatewayArgs) -> Result<Self> {
        let kind = args.gateway.or(ctx.file.backend).unwrap_or(Backend::Http);
        let inner: Arc<dyn ChatGateway> = match kind {
            Backend::Http => {
                let mut cfg = ctx.file.gateway.clone();
                if let Some(d) = &args.cache_dir {
                    cfg.cache_dir = Some(d.clone());
                }
                Arc::new(HttpGateway::new(cfg)?)
            }
            Backend::Replay => {
                let path = args
                    .transcript
                    .clone()
                    .or_else(|| ctx.file.transcript.clone())
                    .ok_or_else(|| UsageError("--gateway replay needs --transcript".into()))?;
                Arc::new(ReplayGateway::from_file(&path)?)
            }
            Backend::Simulated => Arc::new(SimulatedGateway::default()),
        };
        Ok(Self { inner: RecordingGateway::new(inner), record: args.record.clone() })
    }

    /// Merges this run's exchanges into the `--record` transcript.
    fn finish(&self) -> Result<()> {
        let Some(path) = &self.record else { return Ok(()) };
        let mut t = Transcript::new();
        if path.exists() {
            let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            for (i, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let e: TranscriptEntry =
                    serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
                let Value::String(key) = e.key else {
                    bail!("{} line {}: only keyed transcripts can be merged", path.display(), i + 1);
                };
                t.push(key, e.response);
            }
        }
        let new = self.inner.transcript();
        let fresh = new.len();
        for line in new.to_jsonl().lines() {
            let e: TranscriptEntry = serde_json::from_str(line)?;
            if let Value::String(key) = e.key {
                t.push(key, e.response);
            }
        }
        write_text(path, &t.to_jsonl(), true)?;
        log::info!("recorded {fresh} exchanges into {}", path.display());
        Ok(())
    }
}

fn personas(
    ctx: &Ctx,
    scenarios: &Path,
    demo: Option<&Path>,
    out: &Path,
    parallel: Option<usize>,
    max_retries: Option<u32>,
    gw: &GatewayArgs,
) -> Result<()> {
    let mut opts = ctx.file.personas.clone();
    if let Some(p) = parallel.or(ctx.file.parallel) {
        opts.parallel = p;
    }
    if let Some(r) = max_retries {
        opts.max_retries = r;
    }
    if let Some(m) = &gw.model {
        opts.model = m.clone();
    }
    let demo_text = match demo {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => DEMO_PROFILE.to_string(),
    };
    let scenarios = load_scenarios(scenarios)?;
    let gateway = Gateway::open(ctx, gw)?;
    let outcome = realize_personas(&scenarios, &gateway.inner, &demo_text, &opts);
    gateway.finish()?;
    write_corpus(out, Schema::Persona, &outcome.personas, ctx.force)?;
    log::info!("{} personas written to {}", outcome.personas.len(), out.display());
    if !outcome.failures.is_empty() {
        write_lines(&sibling(out, ".failures"), &outcome.failures, ctx.force)?;
        for f in &outcome.failures {
            log::warn!("scenario {}: {}", f.scenario_id, f.reason);
        }
        bail!("{} of {} scenarios produced no valid persona", outcome.failures.len(), scenarios.len());
    }
    Ok(())
}

struct GenerateArgs<'a> {
    personas: &'a Path,
    demos: &'a Path,
    out: &'a Path,
    parallel: Option<usize>,
    mask: Option<&'a str>,
    turns: Option<u32>,
    max_retries: Option<u32>,
}

fn generate(ctx: &Ctx, a: GenerateArgs, gw: &GatewayArgs) -> Result<()> {
    let mut cfg = ctx.file.generation.clone();
    if let Some(m) = a.mask {
        cfg.node_mask = parse_mask(m)?;
    }
    if let Some(t) = a.turns {
        cfg.target_turn_pairs = t;
    }
    if let Some(r) = a.max_retries {
        cfg.max_retries = r;
    }
    if let Some(m) = &gw.model {
        cfg.model = m.clone();
    }
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let parallel = a.parallel.or(ctx.file.parallel).unwrap_or(DEFAULT_PARALLEL);
    let personas = bank(a.personas)?;
    let pool = load_demo_pool(a.demos)?;
    let gateway = Gateway::open(ctx, gw)?;
    let (corpus, failures) = generate_corpus(&personas, &gateway.inner, &pool, &cfg, ctx.seed, parallel);
    gateway.finish()?;
    write_corpus(a.out, Schema::Dialogue, &corpus, ctx.force)?;
    log::info!("{} dialogues written to {}", corpus.len(), a.out.display());
    if !failures.is_empty() {
        write_lines(&sibling(a.out, ".failures"), &failures, ctx.force)?;
        for f in &failures {
            log::warn!("persona {}: {}", f.persona_id, f.reason);
        }
        bail!("{} of {} personas produced no acceptable dialogue", failures.len(), personas.len());
    }
    Ok(())
}

fn qc(ctx: &Ctx, corpus: &Path, personas: &Path, report: Option<&Path>, mask: Option<&str>) -> Result<()> {
    let mut cfg = ctx.file.qc();
    if let Some(m) = mask {
        cfg.node_mask = parse_mask(m)?;
    }
    let result = check_corpus(&dialogues(corpus)?, &bank(personas)?, &cfg);
    if let Some(p) = report {
        write_json(p, &result, ctx.force)?;
    }
    let s = &result.summary;
    log::info!("{}/{} dialogues passed", s.passed, s.dialogues);
    for r in result.reports.iter().filter(|r| !r.passed) {
        for f in &r.failures {
            log::warn!("{}: {}: {}", r.dialogue_id, f.rule, f.detail);
        }
    }
    if s.passed < s.dialogues {
        bail!("{} dialogues failed quality control", s.dialogues - s.passed);
    }
    Ok(())
}

fn stats(ctx: &Ctx, corpus: &Path, personas: Option<&Path>, out: &Path) -> Result<()> {
    let ds = dialogues(corpus)?;
    let mut v = serde_json::to_value(compute_stats(&ds))?;
    if let Some(p) = personas {
        v["topics"] = serde_json::to_value(topic_counts(&ds, &bank(p)?))?;
    }
    write_json(out, &v, ctx.force)
}

fn eval(ctx: &Ctx, pred: &Path, reference: &Path, embeddings: &Path, baseline: Option<&Path>, out: &Path) -> Result<()> {
    let emb = Embeddings::load(embeddings)?;
    let mut report = evaluate_model_outputs(pred, reference, &emb)?;
    if let Some(b) = baseline {
        let raw = fs::read_to_string(b).with_context(|| format!("reading {}", b.display()))?;
        let base: MetricReport = serde_json::from_str(&raw).with_context(|| format!("parsing {}", b.display()))?;
        report.navg = Some(navg(&report, &base)?);
    }
    write_json(out, &report, ctx.force)
}

fn export(ctx: &Ctx, corpus: &Path, mode: &str, mask: Option<&str>, out: &Path) -> Result<()> {
    let mode: ExportMode = mode.parse().map_err(UsageError)?;
    let node_mask = match mask {
        Some(m) => parse_mask(m)?,
        None => NodeMask::ALL,
    };
    let records = export_sft(&dialogues(corpus)?, ExportConfig { mode, node_mask })?;
    write_corpus(out, Schema::Sft, &records, ctx.force)?;
    log::info!("{} records written to {}", records.len(), out.display());
    Ok(())
}

struct ServeArgs<'a> {
    host: Option<String>,
    port: Option<u16>,
    store: &'a Path,
    agents: &'a Path,
    quality: &'a [String],
    min_turns: Option<usize>,
    cors_origin: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QualityEntry {
    name: String,
    corpus: PathBuf,
}

/// The `--agents` file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentsFile {
    #[serde(default)]
    agent: Vec<AgentSpec>,
    #[serde(default)]
    quality: Vec<QualityEntry>,
}

fn serve(ctx: &Ctx, a: ServeArgs) -> Result<()> {
    let raw = fs::read_to_string(a.agents).with_context(|| format!("reading {}", a.agents.display()))?;
    let mut file: AgentsFile =
        toml::from_str(&raw).map_err(|e| UsageError(format!("agents file {}: {e}", a.agents.display())))?;
    let base = a.agents.parent().unwrap_or(Path::new("."));
    for spec in &mut file.agent {
        if let AgentSpec::Replay { corpus, .. } = spec {
            *corpus = base.join(&*corpus);
        }
    }
    if file.agent.is_empty() {
        return Err(UsageError(format!("agents file {} lists no [[agent]]", a.agents.display())).into());
    }
    let agents = build_agents(&file.agent)?;
    let mut entries: Vec<(String, PathBuf)> = file.quality.into_iter().map(|q| (q.name, base.join(q.corpus))).collect();
    for q in a.quality {
        let (name, path) = q
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--quality expects NAME=PATH, got {q:?}")))?;
        entries.push((name.to_string(), PathBuf::from(path)));
    }
    let corpora = entries
        .into_iter()
        .map(|(name, path)| Ok(QualityCorpus { name, dialogues: dialogues(&path)? }))
        .collect::<Result<Vec<_>>>()?;
    check_corpora(&corpora).map_err(|e| anyhow!(e))?;
    let serve_cfg = &ctx.file.serve;
    let cfg = ServiceConfig {
        min_turns: a.min_turns.or(serve_cfg.min_turns).unwrap_or(ServiceConfig::default().min_turns),
        cors_origin: a.cors_origin.or_else(|| serve_cfg.cors_origin.clone()),
    };
    let host = a.host.or_else(|| serve_cfg.host.clone()).unwrap_or_else(|| "127.0.0.1".into());
    let port = a.port.or(serve_cfg.port).unwrap_or(DEFAULT_PORT);
    let state = AppState::open(a.store, agents, corpora, cfg)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
        log::info!("listening on http://{}", listener.local_addr()?);
        supportsim_service::serve(listener, state).await?;
        Ok(())
    })
}

//! Command-line front end: graph building, scene captioning, guidance masks
//! with a toy attention report, and metric evaluation.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use charweave_core::graph::BuildWarning;
use charweave_core::guidance::{
    plan_scene, toy_guidance_report, DatasetProfile, GuidanceMode, REPORT_TIMESTEPS,
};
use charweave_core::metrics::{evaluate_manifest, parse_manifest};
use charweave_core::{
    CaptionComposer, CharacterGraph, CosineClassifier64, EncoderWeights64, GuidanceConfig64, LexicalSimilarity,
    Lexicon, SceneParser, VocabularyEntry,
};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{parse_json, read_json, read_text, ProjectConfig};

pub const LEXICON_ENV: &str = "CHARWEAVE_LEXICON";

#[derive(Debug)]
pub enum CliError {
    /// Bad or missing input; exit code 1.
    Input(String),
    /// Internal invariant violated; exit code 2.
    Internal(String),
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self::Input(message.into())
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::Internal(message.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) => 1,
            Self::Internal(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Input(m) => write!(f, "error: {m}"),
            Self::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "charweave", version, about = "Character-graph captions, spatial guidance and story metrics")]
pub struct Cli {
    /// Project file with defaults for paths, guidance and profile.
    #[arg(long, global = true)]
    pub project: Option<PathBuf>,
    /// Extra lexicon (`word<TAB>kind` per line); CHARWEAVE_LEXICON overrides the project setting.
    #[arg(long, global = true)]
    pub lexicon: Option<PathBuf>,
    /// Extra multiword heads, one per line.
    #[arg(long, global = true)]
    pub compounds: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a character graph from vocabulary entries.
    BuildGraph(BuildGraphArgs),
    /// Compose enhanced scene captions.
    Caption(CaptionArgs),
    /// Write per-character masks and a toy attention report.
    Guidance(GuidanceArgs),
    /// Compute Character-F1 and Frame-Accuracy over a results manifest.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    /// JSON array of {id, display_name, aliases, frontal_caption, embedding?}.
    #[arg(long)]
    pub entries: PathBuf,
    /// Style string; defaults to the profile's style.
    #[arg(long)]
    pub style: Option<String>,
    #[arg(long, value_parser = parse_profile)]
    pub profile: Option<DatasetProfile>,
    /// Output graph file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Scene text to caption.
    #[arg(long, conflicts_with = "scenes")]
    pub scene: Option<String>,
    /// File with one scene per line; the output is a JSON array.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Write the document here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GuidanceArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub scene: String,
    /// Guidance config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for masks and the report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_profile)]
    pub profile: Option<DatasetProfile>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<GuidanceMode>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value_t = charweave_core::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_profile(s: &str) -> Result<DatasetProfile, String> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<GuidanceMode, String> {
    s.parse()
}

pub fn profile_style(profile: DatasetProfile) -> &'static str {
    match profile {
        DatasetProfile::Pororo => "2.5D Cartoon",
        DatasetProfile::Frozen => "Disney movie style.",
    }
}

/// Everything a command needs besides its own flags.
struct Context {
    project: ProjectConfig,
    parser: SceneParser,
}

impl Context {
    fn new(cli: &Cli, env_lexicon: Option<PathBuf>) -> Result<Self, CliError> {
        let project = match &cli.project {
            Some(p) => ProjectConfig::load(p)?,
            None => ProjectConfig::default(),
        };
        let lexicon_path = cli.lexicon.clone().or(env_lexicon).or_else(|| project.lexicon_path.clone());
        let compounds_path = cli.compounds.clone().or_else(|| project.compounds_path.clone());
        let mut lexicon = Lexicon::builtin();
        if let Some(p) = lexicon_path {
            lexicon.extend_from_str(&read_text(&p)?).map_err(|e| io_err(&p, e))?;
        }
        if let Some(p) = compounds_path {
            lexicon.extend_compounds_from_str(&read_text(&p)?);
        }
        Ok(Self { project, parser: SceneParser::new(lexicon) })
    }

    fn graph_path(&self, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        flag.clone()
            .or_else(|| self.project.graph_path.clone())
            .ok_or_else(|| CliError::input("no graph given (use --graph or a project file)"))
    }

    fn load_graph(&self, flag: &Option<PathBuf>) -> Result<CharacterGraph, CliError> {
        let path = self.graph_path(flag)?;
        CharacterGraph::load(&path).map_err(|e| CliError::input(e.to_string()))
    }

    fn output_dir(&self, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        flag.clone()
            .or_else(|| self.project.output_dir.clone())
            .ok_or_else(|| CliError::input("no output directory given (use --out or a project file)"))
    }
}

/// Runs one command, writing results to `out` and diagnostics to `err`.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let env_lexicon = std::env::var_os(LEXICON_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    let ctx = Context::new(cli, env_lexicon)?;
    match &cli.command {
        Command::BuildGraph(args) => build_graph(&ctx, args, out, err),
        Command::Caption(args) => caption(&ctx, args, out, err),
        Command::Guidance(args) => guidance(&ctx, args, out, err),
        Command::Eval(args) => eval(&ctx, args, out),
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::internal(format!("writing output: {e}")))
}

fn warn(err: &mut dyn Write, message: &str) {
    let _ = writeln!(err, "warning: {message}");
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn pretty(value: &impl serde::Serialize) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::internal(format!("serializing output: {e}")))
}

fn build_graph(ctx: &Context, args: &BuildGraphArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let text = read_text(&args.entries)?;
    let entries: Vec<VocabularyEntry> = if text.trim().is_empty() {
        Vec::new()
    } else {
        parse_json(&text).map_err(|e| CliError::input(format!("{}:{e}", args.entries.display())))?
    };
    let profile = args.profile.or(ctx.project.dataset_profile);
    let style = args.style.clone().or_else(|| profile.map(|p| profile_style(p).to_string())).unwrap_or_default();
    if entries.is_empty() {
        warn(err, &format!("{}: no entries, writing an empty graph", args.entries.display()));
    }
    let (graph, warnings) =
        CharacterGraph::build_vocabulary(entries, &ctx.parser).map_err(|e| CliError::input(e.to_string()))?;
    let graph = graph.with_style(style);
    for BuildWarning { character_id, message } in &warnings {
        warn(err, &format!("{character_id}: {message}"));
    }
    let mut summary = String::new();
    for c in graph.characters() {
        summary.push_str(&format!("{}\t{}\n", c.id, c.attributes.len()));
    }
    summary.push_str(&format!("characters\t{}\n", graph.len()));
    write_out(out, &summary)?;
    match &args.out {
        Some(path) => write_file(path, graph.to_json().as_bytes()),
        None => write_out(out, &graph.to_json()),
    }
}

fn caption(ctx: &Context, args: &CaptionArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let graph = ctx.load_graph(&args.graph)?;
    let composer = CaptionComposer::new(ctx.parser.clone());
    let sim = LexicalSimilarity;
    let compose_one = |scene: &str, err: &mut dyn Write| -> Result<serde_json::Value, CliError> {
        let (caption, warnings) = composer.compose(scene, &graph, &sim).map_err(|e| CliError::input(e.to_string()))?;
        for w in warnings {
            warn(err, &format!("`{}`: {}", w.entity, w.error));
        }
        Ok(caption.to_document())
    };
    let document = match (&args.scene, &args.scenes) {
        (Some(scene), None) => compose_one(scene, err)?,
        (None, Some(path)) => {
            let text = read_text(path)?;
            let docs = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| compose_one(l, err))
                .collect::<Result<Vec<_>, _>>()?;
            serde_json::Value::Array(docs)
        }
        _ => return Err(CliError::input("give exactly one of --scene or --scenes")),
    };
    let text = pretty(&document)?;
    match &args.out {
        Some(path) => write_file(path, text.as_bytes()),
        None => write_out(out, &text),
    }
}

fn guidance_config(ctx: &Context, args: &GuidanceArgs) -> Result<GuidanceConfig64, CliError> {
    let mut config = match (&args.config, &ctx.project.guidance) {
        (Some(path), _) => read_json::<GuidanceConfig64>(path)?,
        (None, Some(g)) => g.clone(),
        (None, None) => GuidanceConfig64::default(),
    };
    if let Some(profile) = args.profile.or(ctx.project.dataset_profile) {
        config.apply_profile(profile);
    }
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if let Some(seed) = args.seed {
        config.encoder.seed = seed;
    }
    config.validate().map_err(|e| CliError::input(e.to_string()))?;
    Ok(config)
}

fn load_encoder(config: &GuidanceConfig64, base: Option<&Path>) -> Result<EncoderWeights64, CliError> {
    let sizes = config.encoder.layer_sizes();
    match &config.encoder.weights {
        Some(file) => {
            let mut path = PathBuf::from(file);
            if let (true, Some(base)) = (path.is_relative(), base) {
                path = base.join(path);
            }
            let weights: EncoderWeights64 = read_json(&path)?;
            if weights.layer_sizes() != sizes {
                return Err(io_err(
                    &path,
                    format!("layer sizes {:?} do not match the config {:?}", weights.layer_sizes(), sizes),
                ));
            }
            Ok(weights)
        }
        None => EncoderWeights64::identity_head(&sizes, config.encoder.seed).map_err(|e| CliError::input(e.to_string())),
    }
}

fn file_stem(index: usize, id: &str) -> String {
    let safe: String = id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    format!("mask_{index}_{safe}")
}

fn guidance(ctx: &Context, args: &GuidanceArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let graph = ctx.load_graph(&args.graph)?;
    let config = guidance_config(ctx, args)?;
    let out_dir = ctx.output_dir(&args.out)?;
    let seed = config.encoder.seed;
    let composer = CaptionComposer::new(ctx.parser.clone());
    let (caption, warnings) =
        composer.compose(&args.scene, &graph, &LexicalSimilarity).map_err(|e| CliError::input(e.to_string()))?;
    for w in warnings {
        warn(err, &format!("`{}`: {}", w.entity, w.error));
    }
    if caption.character_descriptions.is_empty() {
        return Err(CliError::input(format!("scene matches no character in the graph: `{}`", args.scene.trim())));
    }
    let encoder = load_encoder(&config, args.config.as_deref().and_then(Path::parent))?;
    let plan = plan_scene(&caption, &config, &encoder).map_err(|e| CliError::input(e.to_string()))?;
    let report = toy_guidance_report(&caption, &plan, &config, &REPORT_TIMESTEPS, seed)
        .map_err(|e| CliError::internal(e.to_string()))?;
    for row in &report.rows {
        if !(row.mass_before.is_finite() && row.mass_after.is_finite()) {
            return Err(CliError::internal(format!("non-finite attention mass for token {}", row.token_index)));
        }
    }

    std::fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    let mut characters = Vec::new();
    for c in &plan {
        let stem = file_stem(c.index, &c.character_id);
        write_file(&out_dir.join(format!("{stem}.txt")), c.mask.to_text().as_bytes())?;
        let png = out_dir.join(format!("{stem}.png"));
        c.mask.to_gray_image().save(&png).map_err(|e| io_err(&png, e))?;
        let (row, col) = c.mask.argmax();
        characters.push(json!({
            "character_id": c.character_id,
            "index": c.index,
            "tokens": [c.tokens.start, c.tokens.end],
            "initial_mean": c.initial.mean(),
            "mean": c.prior.mean(),
            "cov": c.prior.cov(),
            "mask_peak": [row, col],
            "mask_file": format!("{stem}.txt"),
            "image_file": format!("{stem}.png"),
        }));
    }
    let document = json!({
        "flat_caption": caption.flat_caption(),
        "grid": config.grid,
        "alpha": config.alpha,
        "beta_fraction": config.beta_fraction,
        "mode": config.mode,
        "seed": seed,
        "characters": characters,
        "mass": report.rows,
    });
    write_file(&out_dir.join("report.json"), pretty(&document)?.as_bytes())?;
    write_out(out, &report.to_table())
}

fn eval(ctx: &Context, args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let graph = ctx.load_graph(&args.graph)?;
    let text = read_text(&args.manifest)?;
    let frames = parse_manifest(&text).map_err(|e| io_err(&args.manifest, e))?;
    let classifier = CosineClassifier64 { threshold: args.threshold };
    let report = evaluate_manifest(&frames, &graph, &classifier).map_err(|e| io_err(&args.manifest, e))?;
    let text = pretty(&report)?;
    if let Some(path) = &args.out {
        write_file(path, text.as_bytes())?;
    }
    write_out(out, &text)
}

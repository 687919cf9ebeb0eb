//! Flag groups shared by the subcommands, and their layering over a flat
//! TOML config file.
//!
//! Every field is optional so a group can be parsed from flags and from a
//! file alike; [`layer`] lets flags win, and the `resolve_*` functions fill
//! the remaining gaps with library defaults.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sideinfo::baselines::{Penalty, Preprocess};
use sideinfo::bench::{BenchConfig, GeneratorConfig, PhiFamily, SideKind};
use sideinfo::models::InitScheme;
use sideinfo::patterns::{ObjectiveWeights, PatternKind, Sigma, TransformMode};
use sideinfo::training::TrainConfig;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct GeneratorArgs {
    /// Observation dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Embedded side-view dimension.
    #[arg(long)]
    pub e: Option<usize>,
    /// Standard deviation of the side-information noise.
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long)]
    pub finetune_lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct PatternArgs {
    /// σ for dissimilar pairs: `margin[:m]`, `exp-neg-dist` or `gaussian`.
    /// Defaults to each pattern's own choice.
    #[arg(long)]
    pub sigma: Option<String>,
    /// ω_main; ω_side is `1 − ω_main`.
    #[arg(long)]
    pub main_weight: Option<f64>,
    /// γ of the correlation pattern (ignored under simultaneous training).
    #[arg(long)]
    pub variance_penalty: Option<f64>,
    /// `fixed`, `discrete` or `continuous`.
    #[arg(long)]
    pub transform_mode: Option<String>,
    #[arg(long)]
    pub orthogonality_weight: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct StackArgs {
    /// `linear` or `mlp`.
    #[arg(long)]
    pub phi: Option<String>,
    /// Hidden widths of an MLP φ.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub representation_dim: Option<usize>,
    /// Initialization of φ: `zeros` or `scaled-uniform`.
    #[arg(long)]
    pub phi_init: Option<String>,
    /// Conditioning of the inputs: `whiten`, `scale` or `none`.
    #[arg(long)]
    pub preprocess: Option<String>,
    /// Conditioning of the side vectors.
    #[arg(long)]
    pub side_preprocess: Option<String>,
    #[arg(long)]
    pub test_length: Option<usize>,
    /// Logistic-regression C grid; `inf` means unpenalized.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<String>>,
    /// Neighbourhood for label-derived dissimilar pairs.
    #[arg(long)]
    pub pair_window: Option<usize>,
    /// Extra `side:pattern` combinations to admit.
    #[arg(long, value_delimiter = ',')]
    pub allow: Option<Vec<String>>,
}

/// Argument ids of a flag group, which are also its config-file keys.
pub fn keys<A: Args>() -> BTreeSet<String> {
    A::augment_args(clap::Command::new("keys"))
        .get_arguments()
        .map(|a| a.get_id().to_string())
        .collect()
}

/// Flat key-value table read from a config file.
pub type Table = toml::Table;

pub fn read_table(path: &Path, allowed: &BTreeSet<String>) -> Result<Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    // a run's metadata sidecar can be fed back: its `[config]` section is the flat echo
    if table.len() <= 2 && table.get("run").is_some_and(toml::Value::is_table) {
        if let Some(toml::Value::Table(config)) = table.remove("config") {
            table = config;
        }
    }
    for (key, value) in &table {
        if !allowed.contains(key) {
            bail!("unknown config key `{key}` in {}", path.display());
        }
        if value.is_table() {
            bail!("config key `{key}` must be a plain value (the namespace is flat)");
        }
    }
    Ok(table)
}

/// `flags` with every unset field taken from `file`.
pub fn layer<T: Serialize + DeserializeOwned>(flags: &T, file: &Table) -> Result<T> {
    let mut merged = file.clone();
    for (k, v) in toml::Table::try_from(flags)? {
        merged.insert(k, v);
    }
    Ok(toml::Value::Table(merged).try_into()?)
}

fn parse<T: std::str::FromStr>(what: &str, text: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    text.parse().map_err(|e| anyhow::anyhow!("bad {what} `{text}`: {e}"))
}

pub fn parse_init(text: &str) -> Result<InitScheme> {
    match text {
        "zeros" => Ok(InitScheme::Zeros),
        "scaled-uniform" => Ok(InitScheme::ScaledUniform),
        other => bail!("unknown init scheme `{other}` (expected zeros or scaled-uniform)"),
    }
}

fn init_name(scheme: InitScheme) -> &'static str {
    match scheme {
        InitScheme::Zeros => "zeros",
        InitScheme::ScaledUniform => "scaled-uniform",
    }
}

pub fn parse_penalty(text: &str) -> Result<Penalty> {
    if text == "inf" {
        return Ok(Penalty::Unpenalized);
    }
    let c: f64 = parse("C", text)?;
    if !(c > 0.0 && c.is_finite()) {
        bail!("C must be positive, got {text}");
    }
    Ok(Penalty::C(c))
}

fn sigma_text(sigma: Sigma) -> String {
    match sigma {
        Sigma::Margin { m } => format!("margin:{m}"),
        other => other.name().to_string(),
    }
}

fn mode_name(mode: TransformMode) -> &'static str {
    match mode {
        TransformMode::Fixed => "fixed",
        TransformMode::Discrete => "discrete",
        TransformMode::Continuous => "continuous",
    }
}

pub fn resolve_generator(args: &GeneratorArgs, length: Option<usize>, seed: Option<u64>) -> GeneratorConfig {
    let d = GeneratorConfig::default();
    GeneratorConfig {
        d: args.d.unwrap_or(d.d),
        e: args.e.unwrap_or(d.e),
        noise_std: args.noise_std.unwrap_or(d.noise_std),
        length: length.unwrap_or(d.length),
        seed: seed.unwrap_or(d.seed),
    }
}

pub fn echo_generator(config: &GeneratorConfig) -> GeneratorArgs {
    GeneratorArgs {
        d: Some(config.d),
        e: Some(config.e),
        noise_std: Some(config.noise_std),
    }
}

pub fn resolve_train(args: &TrainArgs, base: TrainConfig) -> TrainConfig {
    TrainConfig {
        learning_rate: args.learning_rate.unwrap_or(base.learning_rate),
        momentum: args.momentum.unwrap_or(base.momentum),
        epochs: args.epochs.unwrap_or(base.epochs),
        finetune_epochs: args.finetune_epochs.unwrap_or(base.finetune_epochs),
        finetune_lr: args.finetune_lr.unwrap_or(base.finetune_lr),
        batch_size: args.batch_size.unwrap_or(base.batch_size),
        ..base
    }
}

pub fn echo_train(config: &TrainConfig) -> TrainArgs {
    TrainArgs {
        learning_rate: Some(config.learning_rate),
        momentum: Some(config.momentum),
        epochs: Some(config.epochs),
        finetune_epochs: Some(config.finetune_epochs),
        finetune_lr: Some(config.finetune_lr),
        batch_size: Some(config.batch_size),
    }
}

/// Benchmark configuration from the generator, training, pattern and stack
/// groups, on top of [`BenchConfig::default`].
pub fn resolve_bench(
    generator: &GeneratorArgs,
    train: &TrainArgs,
    pattern: &PatternArgs,
    stack: &StackArgs,
) -> Result<BenchConfig> {
    let mut config = BenchConfig::default();
    config.generator = resolve_generator(generator, None, None);
    config.train = resolve_train(train, config.train.clone());
    if let Some(s) = &pattern.sigma {
        config.sigma = Some(Sigma::parse(s, 1.0)?);
    }
    if let Some(w) = pattern.main_weight {
        config.weights = Some(ObjectiveWeights { main: w, side: 1.0 - w });
    }
    if let Some(g) = pattern.variance_penalty {
        config.variance_penalty = g;
    }
    if let Some(m) = &pattern.transform_mode {
        config.transform_mode = parse("transform mode", m)?;
    }
    if let Some(w) = pattern.orthogonality_weight {
        config.orthogonality_weight = w;
    }
    match stack.phi.as_deref() {
        None | Some("linear") => {
            if stack.hidden.is_some() {
                bail!("--hidden needs --phi mlp");
            }
        }
        Some("mlp") => {
            config.stack.phi = PhiFamily::Mlp {
                hidden: stack.hidden.clone().unwrap_or_else(|| vec![10]),
            };
            config.stack.phi_init = InitScheme::ScaledUniform;
        }
        Some(other) => bail!("unknown phi family `{other}` (expected linear or mlp)"),
    }
    if let Some(k) = stack.representation_dim {
        config.stack.representation_dim = k;
    }
    if let Some(init) = &stack.phi_init {
        config.stack.phi_init = parse_init(init)?;
    }
    if let Some(p) = &stack.preprocess {
        config.preprocess = parse::<Preprocess>("preprocess", p)?;
    }
    if let Some(p) = &stack.side_preprocess {
        config.side_preprocess = parse::<Preprocess>("side preprocess", p)?;
    }
    if let Some(n) = stack.test_length {
        config.test_length = n;
    }
    if let Some(grid) = &stack.grid {
        config.grid = grid.iter().map(|g| parse_penalty(g)).collect::<Result<_>>()?;
    }
    if let Some(w) = stack.pair_window {
        config.pair_window = w;
    }
    for combo in stack.allow.iter().flatten() {
        let (side, pattern) = combo
            .split_once(':')
            .with_context(|| format!("bad --allow entry `{combo}` (expected side:pattern)"))?;
        config.applicability.allow(
            parse::<SideKind>("side", side)?,
            parse::<PatternKind>("pattern", pattern)?,
        );
    }
    config.validate()?;
    Ok(config)
}

/// The flag groups that reproduce `config`.
pub fn echo_bench(
    config: &BenchConfig,
    allow: Option<Vec<String>>,
) -> (GeneratorArgs, TrainArgs, PatternArgs, StackArgs) {
    let weights = config.weights.unwrap_or(ObjectiveWeights { main: 0.5, side: 0.5 });
    let pattern = PatternArgs {
        sigma: config.sigma.map(sigma_text),
        main_weight: Some(weights.main),
        variance_penalty: Some(config.variance_penalty),
        transform_mode: Some(mode_name(config.transform_mode).to_string()),
        orthogonality_weight: Some(config.orthogonality_weight),
    };
    let (phi, hidden) = match &config.stack.phi {
        PhiFamily::Linear => ("linear", None),
        PhiFamily::Mlp { hidden } => ("mlp", Some(hidden.clone())),
    };
    let stack = StackArgs {
        phi: Some(phi.to_string()),
        hidden,
        representation_dim: Some(config.stack.representation_dim),
        phi_init: Some(init_name(config.stack.phi_init).to_string()),
        preprocess: Some(config.preprocess.name().to_string()),
        side_preprocess: Some(config.side_preprocess.name().to_string()),
        test_length: Some(config.test_length),
        grid: Some(config.grid.iter().map(ToString::to_string).collect()),
        pair_window: Some(config.pair_window),
        allow,
    };
    (
        echo_generator(&config.generator),
        echo_train(&config.train),
        pattern,
        stack,
    )
}

pub fn table<T: Serialize>(value: &T) -> Result<toml::Table> {
    Ok(toml::Table::try_from(value)?)
}

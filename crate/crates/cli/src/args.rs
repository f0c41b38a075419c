//! Command-line surface: subcommands, run-config flags, output layout.

use std::path::{Path, PathBuf};

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use curegraph::data::RunConfig;
use curegraph::evaluate::AblationTag;

pub const OUT_ENV: &str = "CUREGRAPH_OUT";
const CONFIG_HEADING: &str = "Run configuration";

fn kebab(key: &str) -> String {
    key.replace('_', "-")
}

/// One `--kebab-key VALUE` flag per run-config key, plus `--config`.
fn config_args() -> Vec<Arg> {
    let mut args = vec![Arg::new("config")
        .long("config")
        .value_name("FILE")
        .value_parser(value_parser!(PathBuf))
        .help("`key = value` config file; individual flags override it")
        .help_heading(CONFIG_HEADING)];
    for key in RunConfig::KEYS {
        let mut arg = Arg::new(key)
            .long(kebab(key))
            .value_name("VALUE")
            .help(format!("override `{key}`"))
            .help_heading(CONFIG_HEADING);
        if key == "rng_seed" {
            arg = arg.visible_alias("seed");
        }
        args.push(arg);
    }
    args
}

fn out_arg() -> Arg {
    Arg::new("out")
        .long("out")
        .env(OUT_ENV)
        .value_name("DIR")
        .value_parser(value_parser!(PathBuf))
        .default_value("curegraph-out")
        .help("output root; every stage writes only below it")
}

fn data_arg() -> Arg {
    Arg::new("data")
        .long("data")
        .value_name("DIR")
        .value_parser(value_parser!(PathBuf))
        .help("dataset directory [default: <out>/data]")
}

fn gen_args() -> Vec<Arg> {
    vec![
        Arg::new("n-circles")
            .long("n-circles")
            .value_name("N")
            .value_parser(value_parser!(usize))
            .default_value("50")
            .help("number of living circles"),
        Arg::new("noise-scale")
            .long("noise-scale")
            .value_name("X")
            .value_parser(value_parser!(f64))
            .default_value("0.1")
            .help("label noise as a fraction of each disease's signal spread"),
        Arg::new("feature-scale")
            .long("feature-scale")
            .value_name("X")
            .value_parser(value_parser!(f64))
            .default_value("1.0")
            .help("multiplier on every generated feature value"),
        Arg::new("dim")
            .long("dim")
            .value_name("F")
            .value_parser(value_parser!(usize))
            .default_value("768")
            .help("raw feature dimension"),
    ]
}

fn variant_arg() -> Arg {
    Arg::new("variant")
        .long("variant")
        .value_name("TAG")
        .value_parser(value_parser!(AblationTag))
        .default_value("full")
        .help("graph variant: full, no-text, no-visual, no-poi, no-topk, text-only, visual-only, poi-only")
}

fn stage(name: &'static str, about: &'static str, needs_data: bool) -> Command {
    let mut cmd = Command::new(name).about(about).arg(out_arg()).args(config_args());
    if needs_data {
        cmd = cmd.arg(data_arg());
    }
    cmd
}

pub fn command() -> Command {
    Command::new("curegraph")
        .about("Spatial multi-modal graph embeddings of living circles for elderly health prediction")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .action(ArgAction::Count)
                .global(true)
                .help("more log output (-v info, -vv debug)"),
        )
        .subcommand(stage("gen", "Generate a synthetic city into <out>/data", false).args(gen_args()))
        .subcommand(stage("encode", "Train the projection heads; write projected circle features", true))
        .subcommand(stage("spatial", "Write distance, function and autocorrelation matrices and top-K lists", true))
        .subcommand(stage("graph", "Build the multi-modal graph from trained heads", true).arg(variant_arg()))
        .subcommand(stage("train", "Train the graph model; write embeddings and a checkpoint", true))
        .subcommand(
            stage("eval", "Cross-validated disease prediction from trained embeddings", true).arg(
                Arg::new("covariate")
                    .long("covariate")
                    .value_name("CSV")
                    .value_parser(value_parser!(PathBuf))
                    .help("`circle_id,value` file; correlate each disease's predictions with it"),
            ),
        )
        .subcommand(
            stage("ablate", "Train and evaluate graph variants", true).arg(
                Arg::new("variants")
                    .long("variants")
                    .value_name("TAGS")
                    .value_delimiter(',')
                    .value_parser(value_parser!(AblationTag))
                    .help("comma-separated variants [default: all eight]"),
            ),
        )
        .subcommand(
            stage("cluster", "K-means over circle embeddings, with an elbow curve", true)
                .arg(
                    Arg::new("k")
                        .long("k")
                        .value_name("K")
                        .value_parser(value_parser!(usize))
                        .help("cluster count [default: `clusters` from the config]"),
                )
                .arg(
                    Arg::new("elbow-max")
                        .long("elbow-max")
                        .value_name("K")
                        .value_parser(value_parser!(usize))
                        .default_value("8")
                        .help("largest k on the elbow curve"),
                )
                .arg(max_iter_arg()),
        )
        .subcommand(
            stage("similar", "Most similar circles to a query circle", true)
                .arg(
                    Arg::new("query")
                        .long("query")
                        .value_name("CIRCLE_ID")
                        .required(true)
                        .help("query circle id"),
                )
                .arg(top_arg()),
        )
        .subcommand(
            stage("pca", "Project circle embeddings onto principal components", true).arg(
                Arg::new("dims")
                    .long("dims")
                    .value_name("N")
                    .value_parser(value_parser!(usize))
                    .default_value("2")
                    .help("number of components"),
            ),
        )
        .subcommand(stage("streets", "Average circle embeddings per street", true))
        .subcommand(
            stage("pipeline", "Run every stage and write a manifest", true)
                .args(gen_args())
                .arg(
                    Arg::new("ablate")
                        .long("ablate")
                        .action(ArgAction::SetTrue)
                        .help("also run all eight ablation variants"),
                )
                .arg(
                    Arg::new("query")
                        .long("query")
                        .value_name("CIRCLE_ID")
                        .help("similarity query [default: the first circle]"),
                )
                .arg(top_arg())
                .arg(max_iter_arg()),
        )
}

fn top_arg() -> Arg {
    Arg::new("top")
        .long("top")
        .value_name("N")
        .value_parser(value_parser!(usize))
        .default_value("5")
        .help("number of neighbours to report")
}

fn max_iter_arg() -> Arg {
    Arg::new("max-iter")
        .long("max-iter")
        .value_name("N")
        .value_parser(value_parser!(usize))
        .default_value("300")
        .help("Lloyd iteration cap")
}

/// Defaults, then the config file, then individual flags.
pub fn resolve_config(m: &ArgMatches) -> curegraph::Result<RunConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for key in RunConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Where every stage reads and writes, relative to the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
    pub data: PathBuf,
}

impl Layout {
    pub fn new(m: &ArgMatches) -> Self {
        let root = m.get_one::<PathBuf>("out").cloned().expect("has default");
        let data = m
            .try_get_one::<PathBuf>("data")
            .ok()
            .flatten()
            .cloned()
            .unwrap_or_else(|| root.join("data"));
        Self { root, data }
    }

    pub fn stage(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn encode(&self, file: &str) -> PathBuf {
        self.root.join("encode").join(file)
    }

    pub fn graph(&self, file: &str) -> PathBuf {
        self.root.join("graph").join(file)
    }

    pub fn train(&self, file: &str) -> PathBuf {
        self.root.join("train").join(file)
    }

    /// `path` relative to the output root when it lies below it.
    pub fn display(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).display().to_string()
    }
}

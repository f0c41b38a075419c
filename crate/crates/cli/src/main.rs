//! `curegraph`: generate → encode → spatial → graph → train → eval/analyze.
//!
//! Exit status: 0 on success, 1 on invalid input (bad flags, config, missing
//! or malformed files), 2 when a stage fails numerically.

mod args;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::error::ErrorKind;
use clap::ArgMatches;
use curegraph::data::{RunConfig, SyntheticSpec};
use curegraph::evaluate::AblationTag;

use args::{resolve_config, Layout};
use manifest::{PipelineManifest, MANIFEST_FILE};

fn synthetic_spec(m: &ArgMatches, n_key: &str) -> SyntheticSpec {
    SyntheticSpec {
        n_circles: *m.get_one::<usize>(n_key).expect("has default"),
        noise_scale: *m.get_one::<f64>("noise-scale").expect("has default"),
        feature_scale: *m.get_one::<f64>("feature-scale").expect("has default"),
        dim: *m.get_one::<usize>("dim").expect("has default"),
        ..SyntheticSpec::default()
    }
}

fn pipeline(m: &ArgMatches, layout: &Layout, cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let mut records = Vec::new();
    let mut synthetic = None;
    let mut layout = layout.clone();
    if m.get_one::<PathBuf>("data").is_none() {
        let spec = synthetic_spec(m, "n-circles");
        synthetic = Some(serde_json::to_value(&spec)?);
        records.push(stages::gen(&layout, cfg, &spec)?);
    } else {
        layout.data = m.get_one::<PathBuf>("data").cloned().expect("checked");
    }
    records.push(stages::encode(&layout, cfg)?);
    records.push(stages::spatial(&layout, cfg)?);
    records.push(stages::graph(&layout, cfg, AblationTag::Full)?);
    records.push(stages::train_stage(&layout, cfg)?);
    records.push(stages::eval(&layout, cfg, None)?);
    let max_iter = *m.get_one::<usize>("max-iter").expect("has default");
    records.push(stages::cluster(&layout, cfg, cfg.clusters, 8, max_iter)?);
    records.push(stages::pca(&layout, cfg, 2)?);
    let query = m.get_one::<String>("query").map(String::as_str);
    records.push(stages::similar(&layout, cfg, query, *m.get_one::<usize>("top").expect("has default"))?);
    if curegraph::data::dataset::DatasetPaths::in_dir(&layout.data).streets.exists() {
        records.push(stages::streets(&layout, cfg)?);
    }
    if m.get_flag("ablate") {
        records.push(stages::ablate(&layout, cfg, &AblationTag::ALL)?);
    }
    let manifest = PipelineManifest {
        config_hash: cfg.hash(),
        seed: cfg.rng_seed,
        config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        synthetic,
        stages: records,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let path = layout.root.join(MANIFEST_FILE);
    curegraph::data::format::write_json(&path, &manifest)?;
    println!(
        "pipeline: {} stages in {:.1}s, manifest {}",
        manifest.stages.len(),
        manifest.wall_seconds,
        path.display()
    );
    Ok(())
}

fn run(matches: &ArgMatches) -> Result<()> {
    let (name, m) = matches.subcommand().expect("subcommand required");
    let cfg = resolve_config(m)?;
    let layout = Layout::new(m);
    log::debug!("{name}: config hash {}", cfg.hash());
    match name {
        "gen" => {
            stages::gen(&layout, &cfg, &synthetic_spec(m, "n-circles"))?;
        }
        "encode" => {
            stages::encode(&layout, &cfg)?;
        }
        "spatial" => {
            stages::spatial(&layout, &cfg)?;
        }
        "graph" => {
            stages::graph(&layout, &cfg, *m.get_one::<AblationTag>("variant").expect("has default"))?;
        }
        "train" => {
            stages::train_stage(&layout, &cfg)?;
        }
        "eval" => {
            stages::eval(&layout, &cfg, m.get_one::<PathBuf>("covariate").map(PathBuf::as_path))?;
        }
        "ablate" => {
            let tags: Vec<AblationTag> = m
                .get_many::<AblationTag>("variants")
                .map(|v| v.copied().collect())
                .unwrap_or_else(|| AblationTag::ALL.to_vec());
            stages::ablate(&layout, &cfg, &tags)?;
        }
        "cluster" => {
            let k = m.get_one::<usize>("k").copied().unwrap_or(cfg.clusters);
            let elbow_max = *m.get_one::<usize>("elbow-max").expect("has default");
            let max_iter = *m.get_one::<usize>("max-iter").expect("has default");
            stages::cluster(&layout, &cfg, k, elbow_max, max_iter)?;
        }
        "similar" => {
            let query = m.get_one::<String>("query").map(String::as_str);
            stages::similar(&layout, &cfg, query, *m.get_one::<usize>("top").expect("has default"))?;
        }
        "pca" => {
            stages::pca(&layout, &cfg, *m.get_one::<usize>("dims").expect("has default"))?;
        }
        "streets" => {
            stages::streets(&layout, &cfg)?;
        }
        "pipeline" => pipeline(m, &layout, &cfg)?,
        other => unreachable!("unknown subcommand {other}"),
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<curegraph::Error>() {
        Some(e) if e.is_numeric() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let matches = match args::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match matches.get_count("verbose") {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

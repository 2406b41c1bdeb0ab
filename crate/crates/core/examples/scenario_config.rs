//! Load a scenario file and run it the same way the CLI does.
//!
//! cargo run --example scenario_config -- examples/scenarios/pagerank.toml

use std::path::PathBuf;

use blendnet::cli;
use blendnet::config::ScenarioConfig;

fn main() -> blendnet::Result<()> {
    let path = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/scenarios/netsize.toml")));
    let (cfg, base) = ScenarioConfig::load(&path)?;
    let built = cfg.build(&base, None)?;
    let summary = cli::validate(&built);
    println!("validation passed: {} (gamma = {:?})", summary.passed(), summary.gamma);
    let (report, artifacts) = cli::run(&built)?;
    println!("{}", serde_json::to_string_pretty(&report.results).expect("serializable"));
    println!("trace: {} lines, lyapunov holds: {}", artifacts.trace_csv.lines().count(), report.errors.lyapunov_holds());
    Ok(())
}

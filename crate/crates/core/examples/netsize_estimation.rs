//! Every node estimates the network size from purely local rules.
//!
//! One anchor node pins itself to 1, everybody else counts up by one; the
//! blended dynamics `s -> (1 - 1/N) s + 1` settles at `N`.

use std::sync::Arc;

use blendnet::analysis;
use blendnet::apps::{self, NetSize};
use blendnet::graph::DirectedGraph;
use blendnet::sim::{self, Coupling, Scenario};

fn main() -> blendnet::Result<()> {
    let g = DirectedGraph::generate_connected(12, 0.3, 7, true)?;
    let fam = NetSize::new(&g, None)?;
    let base = Scenario::new(g, Coupling::MetropolisHastings(0.5), Arc::new(fam), 1, 250);

    let search = analysis::kmin_empirical(&base, 0.4, analysis::DEFAULT_TAIL_FRACTION, 4096)?;
    println!("smallest K with tail error <= 0.4: {} (error {:.3})", search.k, search.error);

    let trace = sim::simulate(&base.with_steps(search.k))?;
    let est = apps::netsize_estimate(&trace, analysis::DEFAULT_TAIL_FRACTION)?;
    for (id, n) in &est.per_node {
        println!("node {id:>2}: N = {n}");
    }
    println!("reliable: {}", est.reliable);
    Ok(())
}

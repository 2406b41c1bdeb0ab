//! Distributed PageRank: node `i` converges to its own score `p_i`.

use std::sync::Arc;

use blendnet::analysis;
use blendnet::apps::{self, PageRank};
use blendnet::graph::DirectedGraph;
use blendnet::sim::{self, Coupling, Scenario};
use blendnet::spectral;

fn main() -> blendnet::Result<()> {
    let g = DirectedGraph::generate_connected(8, 0.3, 5, false)?;
    let coupling = Coupling::Pagerank(0.15);
    let reference = spectral::perron_pair_default(&coupling.build(&g)?)?.p;

    let base = Scenario::new(g, coupling, Arc::new(PageRank::new(0.5, None)?), 1, 150);
    let k = analysis::kmin_empirical(&base, 1e-6, analysis::DEFAULT_TAIL_FRACTION, 4096)?.k;
    let trace = sim::simulate(&base.with_steps(k))?;

    println!("K = {k}");
    println!("{:>5} {:>12} {:>12}", "node", "x_i", "p_i");
    for ((id, x), p) in apps::pagerank_scores(&trace).iter().zip(reference.iter()) {
        println!("{id:>5} {x:>12.8} {p:>12.8}");
    }
    Ok(())
}

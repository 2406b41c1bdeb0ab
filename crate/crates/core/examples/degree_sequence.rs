//! Every node learns the whole degree sequence, encoded as digits of one
//! base-N number, in floating and in exact rational arithmetic.

use std::sync::Arc;

use blendnet::analysis;
use blendnet::apps::{self, Arithmetic, DegSeq};
use blendnet::graph::DirectedGraph;
use blendnet::sim::{self, Coupling, Scenario};

fn main() -> blendnet::Result<()> {
    let g = DirectedGraph::path(5);
    let cfg = DegSeq::default_ids(Arithmetic::Floating);
    println!("s* = {}", cfg.fixed_point(&g)?);

    let base = Scenario::new(g.clone(), Coupling::Average(0.5), Arc::new(cfg.clone()), 1, 400);
    let search = analysis::kmin_empirical(&base, 0.99, analysis::DEFAULT_TAIL_FRACTION, 4096)?;
    let trace = sim::simulate(&base.with_steps(search.k))?;
    let state = trace.final_state();
    println!("K = {}, measured error {:.3}", search.k, search.error);
    for (i, id) in state.ids.iter().enumerate() {
        let x = state.x[(i, 0)];
        println!("node {id}: x = {x:.3} -> {:?}", cfg.decode(&g, x)?.as_slice());
    }

    let exact = apps::degseq_exact(&g, &DegSeq::default_ids(Arithmetic::Exact), 0.5, search.k, 40, &[0.0; 5])?;
    println!("exact blended fixed point: {}", exact.blended_fixed_point);
    println!("exact macro fixed point gap: {:.3}", exact.fixed_point_gap());
    println!("exact decode: {:?}", exact.decoded.as_slice());
    Ok(())
}

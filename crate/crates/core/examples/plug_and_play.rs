//! Nodes leave and join at run time; the size estimate follows along
//! without re-initialising anyone.

use std::sync::Arc;

use blendnet::analysis;
use blendnet::apps::NetSize;
use blendnet::graph::{DirectedGraph, GraphEvent, NodeId};
use blendnet::sim::{self, Coupling, Scenario, ScheduledEvent};

fn main() -> blendnet::Result<()> {
    let g = DirectedGraph::complete(6);
    let fam = NetSize::new(&g, None)?;
    let mut sc = Scenario::new(g, Coupling::MetropolisHastings(0.5), Arc::new(fam), 30, 300);
    sc.events = vec![
        ScheduledEvent {
            t: 100,
            event: GraphEvent::Leave { id: NodeId(4) },
            state: None,
        },
        ScheduledEvent {
            t: 200,
            event: GraphEvent::join_neighbors(NodeId(7), &[NodeId(1), NodeId(2)]),
            state: None,
        },
        ScheduledEvent {
            t: 200,
            event: GraphEvent::join_neighbors(NodeId(8), &[NodeId(7)]),
            state: None,
        },
    ];
    let trace = sim::simulate(&sc)?;
    for (t, e) in &trace.events_applied {
        println!("t = {t}: {e:?}");
    }
    for t in [99, 199, 299] {
        let st = trace.state_at(t, 0).expect("recorded");
        let mean = st.x.iter().sum::<f64>() / st.len() as f64;
        println!("t = {t}: {} nodes, mean estimate {mean:.3}", st.len());
    }
    let certs = analysis::certify_affine_epochs(&trace, analysis::GAMMA_TOL)?;
    let rep = analysis::error_report(&trace, &certs, 0.4, 0.1)?;
    println!("epochs: {}, final tail error {:.2e}", rep.epochs.len(), rep.tail.max);
    Ok(())
}

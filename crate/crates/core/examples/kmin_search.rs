//! Three answers to "how many coupling steps are enough": the analytic
//! sufficient condition, the finite-time corollary, and a simulated search.

use std::sync::Arc;

use blendnet::analysis::{self, GAMMA_TOL};
use blendnet::apps::NetSize;
use blendnet::graph::DirectedGraph;
use blendnet::sim::{self, Coupling, DynamicsFamily, Scenario};
use blendnet::spectral;

fn main() -> blendnet::Result<()> {
    let eps = 0.4;
    let g = DirectedGraph::generate_connected(10, 0.3, 11, true)?;
    let fam = NetSize::new(&g, None)?;
    let coupling = Coupling::MetropolisHastings(0.5);
    let w = coupling.build(&g)?;
    let pair = spectral::perron_pair_default(&w)?;
    let dec = spectral::decompose(&w, &pair)?;
    let dynamics = fam.build(&g)?;
    let blended = sim::BlendedDynamics::new(dynamics.clone(), &pair)?;
    let cert = analysis::contraction_affine(&blended.affine().expect("affine apps").a, GAMMA_TOL)?;
    let consts = analysis::KminConstants::new(&dec, &cert, &dynamics)?;

    println!("|l2| = {:.4}, gamma = {:.4}, eta = {:.3}, M1 = {:.3}, Ms = {:.3}", consts.lambda2_mag, consts.gamma, consts.eta, consts.m1, consts.ms);
    let analytic = analysis::kmin_analytic(&consts, eps)?;
    println!("analytic  K^min = {}", analytic.k);

    let box_radius = 20.0;
    let (eps0, delta) = analysis::corollary_radii(&dec, eps, consts.lipschitz, &cert)?;
    let sup_f = analysis::corollary_sup_f(&consts, &dec, &dynamics, box_radius, eps0, delta);
    let cor = analysis::kmin_corollary(&dec, eps, consts.lipschitz, &cert, sup_f)?;
    println!("corollary K^min = {} (eps0 = {eps0:.3e}, delta = {delta:.3e}, supF <= {sup_f:.2})", cor.k);

    let sc = Scenario::new(g, coupling, Arc::new(fam), 1, 300);
    let emp = analysis::kmin_empirical(&sc, eps, analysis::DEFAULT_TAIL_FRACTION, 4096)?;
    println!("empirical K^min = {} (error {:.3}, at K-1 {:.3})", emp.k, emp.error, emp.error_below.unwrap_or(f64::NAN));
    for (k, e) in &emp.evaluations {
        println!("  K = {k:>3}: tail error {e:.4}");
    }
    Ok(())
}

//! Perron pair and the split W = p q^T + R Lambda Z^T for the three couplings.

use blendnet::graph::DirectedGraph;
use blendnet::spectral;
use blendnet::weights;

fn main() -> blendnet::Result<()> {
    let und = DirectedGraph::generate_connected(6, 0.5, 3, true)?;
    let dir = DirectedGraph::generate_connected(6, 0.4, 3, false)?;
    let cases = [
        ("metropolis-hastings", weights::metropolis_hastings(&und, 0.5)?),
        ("average", weights::average_coupling(&und, 0.5)?),
        ("pagerank (directed)", weights::pagerank_coupling(&dir, 0.15)?),
    ];
    for (name, w) in &cases {
        let pair = spectral::perron_pair_default(w)?;
        let dec = spectral::decompose(w, &pair)?;
        let res = dec.residuals(w);
        println!("{name}");
        println!("  p = {:.4?}", pair.p.as_slice());
        println!("  q = {:.4?}", pair.q.as_slice());
        println!("  |l2| = {:.4}, |lN| = {:.4}", pair.lambda2_mag, pair.lambda_n_mag);
        println!("  |eig(W)| = {:.4?}", spectral::eigen_magnitudes(w));
        println!("  max residual {:.1e}, ||R|| = {:.3}, ||Z|| = {:.3}", res.max(), dec.norm_r(), dec.norm_z());
    }
    Ok(())
}

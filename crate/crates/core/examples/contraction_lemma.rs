//! Contraction metrics for non-normal maps: `||A|| > 1` yet a weighted norm
//! contracts, and the two-point inequality holds in that norm.

use blendnet::analysis::{self, GAMMA_TOL};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> blendnet::Result<()> {
    let a = DMatrix::from_row_slice(2, 2, &[0.6, 3.0, 0.0, 0.5]);
    let b = DVector::from_vec(vec![1.0, -1.0]);
    let cert = analysis::contraction_affine(&a, GAMMA_TOL)?;
    println!("||A|| = {:.3}", a.singular_values().max());
    println!("gamma = {:.4} with H =\n{:.4}", cert.gamma, cert.h);

    let f = |_t: i64, s: &DVector<f64>| &a * s + &b;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<_> = (0..10_000)
        .map(|_| {
            let s1 = DVector::from_fn(2, |_, _| rng.random_range(-10.0..10.0));
            let s2 = DVector::from_fn(2, |_, _| rng.random_range(-10.0..10.0));
            (0, s1, s2)
        })
        .collect();
    match analysis::lemma4_check(&f, &cert, &pairs) {
        None => println!("10000 pairs: ||H(f(s2) - f(s1))|| <= sqrt(gamma) ||H(s2 - s1)|| everywhere"),
        Some(v) => println!("violated: {v:?}"),
    }

    let grid: Vec<_> = (0..5).map(|i| (i, DVector::from_element(2, i as f64))).collect();
    let sampled = analysis::contraction_sampled(&f, &grid, &cert.h, GAMMA_TOL)?;
    println!("sampled gamma = {:.6} (evidence only: {})", sampled.gamma, sampled.evidence_only());
    Ok(())
}

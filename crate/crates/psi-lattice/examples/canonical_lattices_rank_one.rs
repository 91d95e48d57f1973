//! The two canonical psi-stable lattices of the trivial rank-one module.
//!
//! Over F = Q_p with phi = 1, psi acts on k((t)) by the monomial formula
//! alone, so the lattice computation can be checked against elementary
//! dynamics: t^(-1)k[[t]] is the largest psi-stable lattice, k[[t]] is the
//! smallest one with the same saturation, and their quotient is the line
//! spanned by t^(-1).
//!
//! Run with `cargo run --example canonical_lattices_rank_one`.

use psi_lattice::corpus::trivial_rank_one;
use psi_lattice::lattice::Engine;
use psi_lattice::series::Series;

fn main() -> psi_lattice::Result<()> {
    for p in [2u64, 3] {
        let module = trivial_rank_one(p, true)?;
        let engine = Engine::new(&module)?;
        let sharp = engine.dsharp()?;
        let (natural, _) = engine.dnatural()?;
        println!("p = {p}:");
        println!("  maximal lattice basis: {:?}", sharp.cols[0]);
        println!("  minimal lattice basis: {:?}", natural.cols[0]);
        println!("  quotient dimension:    {}", sharp.quotient_dim(&natural)?);

        // Independent oracle: iterate psi on a few monomials and watch
        // every orbit fall into t^(-1)k[[t]] and stay there.
        let ctx = &module.ctx;
        for n in [-6i64, -3, 5] {
            let mut x = Series::monomial(ctx, &[n], 1);
            let mut steps = 0;
            while x.low(0).map_or(false, |l| l < -1) {
                x = x.psi(0);
                steps += 1;
            }
            println!("  psi-orbit of t^{n} enters the maximal lattice after {steps} steps");
            assert!(x.low(0).map_or(true, |l| l >= -1));
        }
        println!();
    }
    Ok(())
}

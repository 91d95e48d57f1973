//! Cross-checking the two-variable theory against the one-variable engine.
//!
//! Sending both variables to t turns a two-variable module into a
//! one-variable one: the partial Frobenius operators compose, their
//! matrices multiply (with the appropriate twists), and since every t_d^q
//! lands on t^q the twist q is unchanged.  For a product of two unramified
//! characters the collapsed phi-matrix has t-valuation 2(1-q), and the
//! one-variable engine must find a gap of exactly one line — the same
//! count that the two-variable lattice family exhibits between its
//! extremes.
//!
//! Run with `cargo run --example diagonal_restriction_check`.

use std::collections::BTreeSet;

use psi_lattice::corpus::{example_a, example_options, rank_one_product};
use psi_lattice::dual::derive_module;
use psi_lattice::lattice::Engine;
use psi_lattice::series::SeriesCtx;

fn main() -> psi_lattice::Result<()> {
    let p = 3u64;
    for (c, m) in [((1i64, 1i64), (0i64, 0i64)), ((2, 1), (1, 0))] {
        // Build the two factors separately and form their product module.
        let opts = example_options(64);
        let factors: Vec<_> = [(c.0, m.0), (c.1, m.1)]
            .into_iter()
            .map(|(ci, mi)| {
                let pres = example_a(p, &[ci as u16], &[mi], &BTreeSet::new())?;
                Ok(derive_module(&pres, &opts)?.module)
            })
            .collect::<psi_lattice::Result<_>>()?;
        let product = rank_one_product(&factors[0], &factors[1])?;
        product.validate()?;

        // Collapse onto the diagonal and hand the result to the
        // one-variable engine.
        let target = SeriesCtx::new(
            product.ctx.field.clone(),
            1,
            product.ctx.q,
            product.ctx.qp,
        );
        let restricted = product.diagonal_restriction(&target)?;
        let engine = Engine::new(&restricted)?;
        let (natural, sharp) = engine.dnatural()?;
        let gap = sharp.quotient_dim(&natural)?;
        println!(
            "c = {:?}, m = {:?}: collapsed valuation {:?}, gap dim = {gap}",
            c,
            m,
            restricted.phi[0].at(0, 0).low(0)
        );
        assert_eq!(gap, 1);
    }
    Ok(())
}

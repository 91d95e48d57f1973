//! A tour of the trace operator psi on monomials.
//!
//! In each coefficient setup, phi sends t to t^q, and psi is its one-sided
//! inverse: on a monomial t^n with n = mq + i, 0 <= i < q, it returns
//!
//!   * (q/pi) t^m  when i = 0 (the leading unit is 1 for F = Q_p and 0 in
//!     every ramified or unramified extension, because q/pi then has
//!     positive valuation),
//!   * 0           when 1 <= i <= q - 2,
//!   * t^m         when i = q - 1.
//!
//! Run with `cargo run --example psi_operator_tour`.

use psi_lattice::field::FieldCtx;
use psi_lattice::series::{Series, SeriesCtx};

fn main() -> psi_lattice::Result<()> {
    // (label, p, field degree m, twist q, Q_p trace normalization?)
    let setups = [
        ("q = 2 over Q_2", 2u64, 1usize, 2i64, true),
        ("q = 3 over Q_3", 3, 1, 3, true),
        ("q = 3, ramified quadratic extension of Q_3", 3, 1, 3, false),
        ("q = 4, unramified quadratic extension of Q_2", 2, 2, 4, false),
    ];
    for (label, p, m, q, qp) in setups {
        let field = FieldCtx::new(p, m, None)?;
        let ctx = SeriesCtx::new(field, 1, q, qp);
        println!("{label}:");
        for n in -q - 1..=q + 1 {
            let x = Series::monomial(&ctx, &[n], 1);
            let image = x.psi(0);
            println!("  psi(t^{n}) = {image:?}");
        }
        // psi is a left inverse of phi here because psi(phi(x)) picks the
        // i = 0 branch with unit q/pi = 1 exactly in the Q_p case.
        let x = Series::from_terms(&ctx, [(vec![-1i64], 1u16), (vec![2], 1u16)]);
        let round_trip = x.phi(0).psi(0);
        println!("  psi(phi({x:?})) = {round_trip:?}");
        println!();
    }
    Ok(())
}

//! A quotient whose canonical lattices coincide, with exactness failing in
//! the middle of the induced sequence.
//!
//! This rank-2-in-rank-4 example is built so that each constituent has
//! maximal lattice equal to its minimal one; the failure of exactness is
//! then carried entirely by the middle term of the sequence, and the two
//! lattice sequences agree.  The shift parameter s moves the quotient
//! relation without changing the phenomenon.
//!
//! Run with `cargo run --example kernel_quotient_exactness`.

use psi_lattice::corpus::{exactness_report, example_c, example_options};

fn main() -> psi_lattice::Result<()> {
    for s in [0i64, 1] {
        let split = example_c(3, s, 0)?;
        let triple = split.derive(&example_options(220))?;
        let report = exactness_report(&triple.split_modules())?;
        println!("s = {s}: ranks {:?}", report.ranks);
        println!(
            "  constituents have equal minimal and maximal lattices: {}",
            report.gap_dims.0 == 0 && report.gap_dims.2 == 0
        );
        println!(
            "  sequences coincide (sub {}, quotient {})",
            report.left_sharp_is_natural, report.right_sharp_is_natural
        );
        println!(
            "  middle homology dim = {} (left exact {}, right exact {})",
            report.natural.middle_homology_dim,
            report.natural.left_exact,
            report.natural.right_exact
        );
        println!();
    }
    Ok(())
}

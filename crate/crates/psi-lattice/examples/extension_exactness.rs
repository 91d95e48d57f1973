//! Exactness of the canonical-lattice sequences across a non-split
//! extension of rank-one characters.
//!
//! A short exact sequence of modules induces two sequences of canonical
//! lattices, one for the minimal and one for the maximal choice.  The
//! outer maps always behave (injectivity on the left, surjectivity on the
//! right); whether exactness can fail in the middle depends on the
//! extension class.  With the extension parameter alpha switched off the
//! sequence splits and everything is exact, which makes a good control.
//!
//! Run with `cargo run --example extension_exactness`.

use psi_lattice::corpus::{exactness_report, example_b, example_options};

fn main() -> psi_lattice::Result<()> {
    for (alpha, label) in [(1u16, "alpha = 1 (non-split)"), (0, "alpha = 0 (control)")] {
        let split = example_b(3, alpha, 0)?;
        let triple = split.derive(&example_options(150))?;
        let report = exactness_report(&triple.split_modules())?;
        println!("{label}: ranks {:?}", report.ranks);
        for (name, seq) in [("minimal", &report.natural), ("maximal", &report.sharp)] {
            println!(
                "  {name} sequence: left exact {}, middle homology dim {}, right exact {}",
                seq.left_exact, seq.middle_homology_dim, seq.right_exact
            );
        }
        println!(
            "  gap dims (sub, total, quotient) = {:?}",
            [report.gap_dims.0, report.gap_dims.1, report.gap_dims.2]
        );
        println!(
            "  minimal lattice of the total is the standard one: {}",
            report.total_natural_is_standard
        );
        println!();
    }
    Ok(())
}

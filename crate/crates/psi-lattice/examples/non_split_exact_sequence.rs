//! An exact lattice sequence that admits no equivariant splitting.
//!
//! Exactness of the canonical-lattice sequence does not make the
//! underlying extension split: here both induced sequences are exact, yet
//! a search over all candidate sections with support up to the bound
//! certifies that no phi- and unit-equivariant section exists.
//!
//! Run with `cargo run --example non_split_exact_sequence`.

use psi_lattice::corpus::{exactness_report, example_d, example_options};
use psi_lattice::dual::splitting_search;
use psi_lattice::Error;

fn main() -> psi_lattice::Result<()> {
    for (kappa, s) in [(1i64, 0i64), (2, 1)] {
        let split = example_d(3, kappa, s)?;
        let triple = split.derive(&example_options(220))?;
        let sm = triple.split_modules();
        let report = exactness_report(&sm)?;
        println!("kappa = {kappa}, s = {s}: ranks {:?}", report.ranks);
        println!(
            "  minimal sequence exact: {}",
            report.natural.left_exact
                && report.natural.middle_homology_dim == 0
                && report.natural.right_exact
        );
        match splitting_search(&sm, 10) {
            Ok(_) => println!("  unexpected section found"),
            Err(Error::NoSplittingUpTo { bound }) => {
                println!("  no equivariant section with support up to t^{bound}")
            }
            Err(e) => return Err(e),
        }
        println!();
    }
    Ok(())
}

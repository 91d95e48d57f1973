//! The family of psi-stable lattices attached to unramified characters.
//!
//! A rank-one unramified character in one variable gives a module whose
//! maximal and minimal stable lattices differ by exactly one line.  In two
//! variables the interesting structure appears between the extremes: each
//! up-closed family of coordinate subsets yields its own psi-stable
//! lattice, all five are distinct, and inclusion runs opposite to the
//! ordering of the families.
//!
//! Run with `cargo run --example unramified_family`.

use std::collections::BTreeSet;

use psi_lattice::corpus::{example_a, example_options, family_report, subset_name};
use psi_lattice::dual::derive_module;
use psi_lattice::lattice::Engine;

fn main() -> psi_lattice::Result<()> {
    // One variable: derive the dual module and measure the gap.
    let pres = example_a(3, &[1], &[0], &BTreeSet::new())?;
    let derived = derive_module(&pres, &example_options(64))?;
    let engine = Engine::new(&derived.module)?;
    let (natural, sharp) = engine.dnatural()?;
    println!(
        "one variable, p = 3: rank {} module, gap dim = {}",
        derived.rank,
        sharp.quotient_dim(&natural)?
    );

    // Two variables: enumerate the whole family.
    let report = family_report(3, &[1, 1], &[0, 0], 2)?;
    println!(
        "two variables, p = 3: {} lattices, certified at window level {}",
        report.members.len(),
        report.certified_level
    );
    for member in &report.members {
        let killed: Vec<String> = member.killed.iter().map(|&m| subset_name(m)).collect();
        println!(
            "  killed {{{}}}: window dimension {}, psi surjective in both directions: {}",
            killed.join(", "),
            member.killed_dim,
            member.psi_surjective.iter().all(|&b| b),
        );
    }
    println!("  pairwise distinct:            {}", report.pairwise_distinct);
    println!("  inclusion opposite to order:  {}", report.order_reversed);
    println!("  smallest is the minimal one:  {}", report.minimal_certificate);
    println!("  largest has surjective psi:   {}", report.maximal_psi_surjective);
    Ok(())
}

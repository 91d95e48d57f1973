//! Multiplication series of units on the formal group with Frobenius
//! power series Phi(t) = pi t + t^q.
//!
//! For a unit gamma of O_F the series [gamma](t) is pinned down by the
//! functional equation [gamma](Phi(t)) = Phi([gamma](t)) together with its
//! linear term gamma t.  The computation certifies its own precision, the
//! verification recomputes both sides of the equation, and reduction mod
//! pi gives the substitution action used by the module layer.
//!
//! Run with `cargo run --example lubin_tate_series`.

use psi_lattice::field::FieldCtx;
use psi_lattice::local::LocalCtx;
use psi_lattice::lubin_tate::{compose_mod_p, GammaSeries};

fn show(series: &[u16]) -> String {
    let parts: Vec<String> = series
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0)
        .map(|(i, &c)| match (c, i + 1) {
            (1, 1) => "t".into(),
            (1, n) => format!("t^{n}"),
            (c, 1) => format!("{c}t"),
            (c, n) => format!("{c}t^{n}"),
        })
        .collect();
    parts.join(" + ")
}

fn main() -> psi_lattice::Result<()> {
    let tprec = 32;
    for p in [2u64, 3] {
        let local = LocalCtx::new(p, 1, 1, tprec + 2)?;
        let field = FieldCtx::new(p, 1, None)?;
        let one_plus_p = local.add(&local.one(), &local.from_int(p as i64));
        let square = local.mul(&one_plus_p, &one_plus_p);
        println!("p = {p}, Phi(t) = {p}t + t^{p}, series to t^{tprec}:");
        for (label, gamma) in [("1+p", &one_plus_p), ("(1+p)^2", &square)] {
            let series = GammaSeries::compute(&local, gamma, tprec)?;
            let digits = series.verify_functional_equation()?;
            let reduced = series.reduction_in_field(&field)?;
            // The linear term is the residue of gamma, and everything
            // below degree q cancels.
            assert_eq!(reduced[0], local.residue_class(gamma));
            assert!(reduced[1..p as usize - 1].iter().all(|&c| c == 0));
            println!("  [{label}](t) mod p = {}", show(&reduced));
            println!("    functional equation certified to pi^{digits}");
        }
        // The composition law: [(1+p)^2] = [1+p] composed with itself.
        let a = GammaSeries::compute(&local, &one_plus_p, tprec)?
            .reduction_in_field(&field)?;
        let b = GammaSeries::compute(&local, &square, tprec)?.reduction_in_field(&field)?;
        let composed = compose_mod_p(&field, &a, &a, tprec);
        assert_eq!(composed, b, "composition law failed");
        println!("  [1+p] o [1+p] = [(1+p)^2] mod p: confirmed");
        println!();
    }
    Ok(())
}

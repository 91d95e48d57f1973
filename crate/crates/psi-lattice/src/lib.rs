//! Exact computation of canonical psi-stable lattices in mod-p etale
//! phi/Gamma-modules over Laurent series fields.
//!
//! The crate is organized bottom-up:
//!
//! * [`field`] — table-driven arithmetic in small finite fields k.
//! * [`local`] — truncated ring of integers of a p-adic field F with a
//!   certified precision ledger.
//! * [`lubin_tate`] — the formal multiplication series of a uniformized
//!   formal group, computed with per-coefficient precision tracking.
//! * [`series`] — sparse multivariable Laurent series over k with the
//!   twisted operators phi, psi and the Gamma-action.
//! * [`phigamma`] — finitely generated modules with commuting semilinear
//!   operators, their validation, and element-level operator actions.
//! * [`lattice`] — the exact lattice engine: canonical bases over k[[t]],
//!   lattice arithmetic in a finite window, and the fixed-point iterations
//!   that produce the canonical psi-stable lattices.
//! * [`presentation`] — finite presentations of t-power-torsion modules and
//!   their expansion into filtered k-bases with computable operators.
//! * [`dual`] — duality frames over the expansions: reconstruction of the
//!   module whose psi-dynamics a presentation controls, functorial triples,
//!   exactness reports and splitting searches.
//! * [`corpus`] — the worked example families, lattice family enumeration,
//!   exactness reports and splitting searches.
//! * [`report`] — JSON input/output formats shared by the library, the
//!   runnable examples and the thin CLI.

pub mod corpus;
pub mod dual;
pub mod error;
pub mod field;
pub mod lattice;
pub mod local;
pub mod lubin_tate;
pub mod phigamma;
pub mod presentation;
pub mod report;
pub mod series;

pub use error::{Error, Result};

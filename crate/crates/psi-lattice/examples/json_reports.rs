//! The JSON interchange layer and the in-process command line.
//!
//! Modules, presentations and derived splits all have canonical JSON
//! forms: serializing, parsing and re-serializing reproduces the same
//! bytes, which is what makes the shipped fixtures and the golden report
//! files stable.  The command line is a thin wrapper over `report::run`,
//! so it can be driven programmatically as done here.
//!
//! Run with `cargo run --example json_reports`.

use psi_lattice::corpus::trivial_rank_one;
use psi_lattice::report::{module_from_json, module_to_json, render_json, run};

fn main() -> psi_lattice::Result<()> {
    // Round-trip a module file through its canonical serialization.
    let module = trivial_rank_one(3, true)?;
    let json = module_to_json(&module);
    let text = render_json(&json);
    println!("canonical module file:\n{text}");
    let back = module_from_json(&json)?;
    assert_eq!(render_json(&module_to_json(&back)), text);
    println!("round-trip reproduces identical bytes\n");

    // Drive the command line in-process: write the file, then ask for the
    // canonical lattices and for validation, watching the exit codes.
    let dir = std::env::temp_dir().join("psi_lattice_json_reports");
    std::fs::create_dir_all(&dir)?;
    let module_path = dir.join("trivial.json");
    let report_path = dir.join("trivial.lattices.json");
    std::fs::write(&module_path, &text)?;
    let code = run([
        "psi-lattice",
        "dsharp",
        module_path.to_str().unwrap(),
        "--output",
        report_path.to_str().unwrap(),
    ]);
    println!("`psi-lattice dsharp` exited with {code}");
    assert_eq!(code, 0);
    let report = std::fs::read_to_string(&report_path)?;
    println!("lattice report:\n{report}");
    Ok(())
}

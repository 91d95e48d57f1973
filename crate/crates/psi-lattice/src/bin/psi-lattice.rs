//! Thin wrapper around the library's `report` module, which implements the
//! whole command line so tests and examples can call it in-process.

fn main() {
    std::process::exit(psi_lattice::report::run(std::env::args_os()));
}

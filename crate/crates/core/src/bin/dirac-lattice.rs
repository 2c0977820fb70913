fn main() {
    std::process::exit(dirac_lattice::cli::run(std::env::args_os()));
}

fn main() {
    let results = csg3dct::verify::run_fast_checks();
    print!("{}", csg3dct::verify::render_table(&results));
    if results.iter().any(|r| !r.passed) {
        std::process::exit(1);
    }
}

fn main() {
    // Filled in once the experiment runner lands.
    std::process::exit(0);
}

fn main() {
    std::process::exit(canlab::cli_main());
}

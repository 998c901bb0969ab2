fn main() {
    std::process::exit(obstacle_control::cli::run(std::env::args_os()));
}

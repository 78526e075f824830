fn main() {
    std::process::exit(uav_handover::cli::run_command(std::env::args_os()));
}

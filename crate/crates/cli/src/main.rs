fn main() {
    std::process::exit(collision_spin_cli::dispatch(std::env::args_os()));
}

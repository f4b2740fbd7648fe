fn main() {
    std::process::exit(mrac_core::cli::command_dispatch(std::env::args_os()));
}

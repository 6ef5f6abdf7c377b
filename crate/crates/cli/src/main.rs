use env_logger::{Env, Target};

fn main() {
    env_logger::Builder::from_env(Env::new().filter_or("WARPFILT_LOG", "warn"))
        .target(Target::Stderr)
        .init();
    std::process::exit(warpfilt_cli::main_with_args(std::env::args_os()));
}

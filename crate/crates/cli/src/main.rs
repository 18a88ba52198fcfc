use std::process::ExitCode;

fn init_logging() {
    let level = match std::env::var("FAULTPATH_LOG").as_deref() {
        Ok("debug") => log::LevelFilter::Debug,
        Ok("info") => log::LevelFilter::Info,
        _ => log::LevelFilter::Off,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    init_logging();
    faultpath_cli::main_with_args(std::env::args_os())
}

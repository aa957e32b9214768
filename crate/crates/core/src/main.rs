use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::new().filter_or("RIDGE_SOLVER_LOG", "warn")).init();
    std::process::exit(ridge_solver::cli::dispatch(std::env::args_os()));
}

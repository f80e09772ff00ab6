fn main() {
    std::process::exit(dynmed_workbench::run_cli(std::env::args_os()));
}

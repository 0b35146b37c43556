//! Standalone scorer for the bundled toy pipeline: `gevo-toy-eval <workdir>`.

fn main() {
    let mut args = std::env::args_os().skip(1);
    let (Some(dir), None) = (args.next(), args.next()) else {
        eprintln!("usage: gevo-toy-eval <workdir>");
        std::process::exit(2);
    };
    std::process::exit(gevo_core::toy_target::main_with_workdir(std::path::Path::new(&dir)));
}

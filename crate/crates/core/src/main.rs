use std::io::{BufWriter, Write};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut err = std::io::stderr();
    let code = decov::cli::main_with_args(args, &mut out, &mut err);
    let _ = out.flush();
    drop(out);
    std::process::exit(code);
}

use clap::Parser;

use endolift_cli::commands::{run, Cli};
use endolift_cli::format::Verdict;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(o) => {
            println!("{}", o.summary);
            if o.report.verdict == Verdict::Fail {
                for f in &o.report.failures {
                    eprintln!("FAIL: {f}");
                }
                std::process::exit(4);
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

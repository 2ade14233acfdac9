use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use pttrust_cli::{exit_code, load_config, run_batch, serve, Cli};
use pttrust_core::pipeline::Command;
use pttrust_core::Error;

fn run(cli: Cli) -> anyhow::Result<()> {
    let (command, args) = cli.command.parts();
    let cfg = load_config(command, args)?;
    if command == Command::Serve {
        let rt = tokio::runtime::Runtime::new().context("starting async runtime")?;
        return rt.block_on(async {
            let listener = serve::bind(&cfg).await?;
            if let Some(addr) = serve::local_addr(&listener) {
                println!("listening on http://{addr}");
            }
            serve::serve(listener, cfg).await.context("serving")
        });
    }
    let summary = run_batch(command, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(1, |e| exit_code(e.kind()));
            ExitCode::from(code as u8)
        }
    }
}

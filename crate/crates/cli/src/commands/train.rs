use std::path::PathBuf;

use bloinst_core::engine::Strategy;
use clap::Args;

use super::{adapt_to_data, execute, report_line};
use crate::config::{parse_strategy, TrainFlags};
use crate::error::CliError;

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    /// bilevel-first, bilevel-second, single-level or separate.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    /// Output directory for checkpoint, trace, summary and config echo.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let mut run = args.flags.resolve()?;
    if let Some(s) = args.strategy {
        run.strategy = s;
    }
    let data = run.training_data()?;
    let test = run.test_data()?;
    adapt_to_data(&mut run, &data, test.as_ref())?;
    let result = execute(&run, &data, test.as_ref(), &args.out, true)?;
    let tail = match &result.final_report {
        Some(r) => format!("; test {}", report_line(r)),
        None => String::new(),
    };
    println!(
        "{}: {} iterations in {:.1}s{tail}",
        run.strategy, run.train.iterations, result.wall_seconds
    );
    Ok(())
}

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use bloinst_core::data::Dataset;
use bloinst_core::engine::Strategy;
use clap::Args;

use super::{adapt_to_data, execute, RunResult};
use crate::config::{parse_strategy, RunConfig, TrainFlags};
use crate::error::CliError;
use crate::output::csv_err;

pub const SWEEP_FILE: &str = "sweep.csv";
pub const THREADS_ENV: &str = "BLOI_THREADS";

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',', default_value = "bilevel-first,single-level", value_parser = parse_strategy)]
    pub strategies: Vec<Strategy>,
    /// Comma-separated split ratios.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub gammas: Vec<f64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    /// Output directory; one subdirectory per cell plus the sweep CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing sweep in --out.
    #[arg(long)]
    pub force: bool,
}

struct Cell {
    strategy: Strategy,
    gamma: f64,
    seed: u64,
}

impl Cell {
    fn dir_name(&self) -> String {
        format!("{}_gamma{}_seed{}", self.strategy, self.gamma, self.seed)
    }
}

fn threads() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => v.parse::<usize>().ok().filter(|&n| n >= 1).ok_or_else(|| {
            CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))
        }),
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_cells(
    cells: &[Cell],
    base: &RunConfig,
    data: &Dataset,
    test: Option<&Dataset>,
    out: &Path,
    workers: usize,
) -> Vec<Result<RunResult, CliError>> {
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<RunResult, CliError>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.min(cells.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = cells.get(i) else { break };
                let mut run = base.clone();
                run.strategy = cell.strategy;
                run.train.gamma_split = cell.gamma;
                run.train.seed = cell.seed;
                let r = execute(
                    &run,
                    data,
                    test,
                    &out.join("cells").join(cell.dir_name()),
                    false,
                );
                match &r {
                    Ok(res) => eprintln!("{}: done in {:.1}s", cell.dir_name(), res.wall_seconds),
                    Err(e) => eprintln!("{}: {e}", cell.dir_name()),
                }
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every cell ran"))
        .collect()
}

const HEADER: [&str; 13] = [
    "kind",
    "strategy",
    "gamma",
    "seed",
    "status",
    "runs",
    "mAP",
    "AP50",
    "AP75",
    "mAP_std",
    "AP50_std",
    "AP75_std",
    "wall_seconds",
];

pub fn run(args: AblateArgs) -> Result<(), CliError> {
    if args.seeds.is_empty() || args.strategies.is_empty() || args.gammas.is_empty() {
        return Err(CliError::Usage(
            "strategies, gammas and seeds must each be non-empty".into(),
        ));
    }
    if let Some(g) = args.gammas.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
        return Err(CliError::Usage(format!("split ratio {g} must be positive")));
    }
    let sweep = args.out.join(SWEEP_FILE);
    if sweep.exists() && !args.force {
        return Err(CliError::Usage(format!(
            "{} already exists; pass --force to overwrite",
            sweep.display()
        )));
    }
    let workers = threads()?;
    let mut base = args.flags.resolve()?;
    let data = base.training_data()?;
    let test = base.test_data()?;
    adapt_to_data(&mut base, &data, test.as_ref())?;
    fs::create_dir_all(&args.out).map_err(CliError::io(&args.out))?;
    base.echo(&args.out)?;

    let mut cells = Vec::new();
    for &strategy in &args.strategies {
        for &gamma in &args.gammas {
            for &seed in &args.seeds {
                cells.push(Cell {
                    strategy,
                    gamma,
                    seed,
                });
            }
        }
    }
    let results = run_cells(&cells, &base, &data, test.as_ref(), &args.out, workers);

    let mut w = csv::Writer::from_path(&sweep).map_err(|e| csv_err(&sweep, e))?;
    w.write_record(HEADER).map_err(|e| csv_err(&sweep, e))?;
    let metric = |r: &Result<RunResult, CliError>| -> Option<[f64; 3]> {
        r.as_ref()
            .ok()?
            .final_report
            .as_ref()
            .map(|r| [r.map, r.ap50, r.ap75])
    };
    for (cell, r) in cells.iter().zip(&results) {
        let status = match r {
            Ok(_) => "ok".to_string(),
            Err(CliError::Diverged(_)) => "diverged".to_string(),
            Err(e) => format!("failed: {e}"),
        };
        let m = metric(r).map_or([String::new(), String::new(), String::new()], |m| {
            m.map(|v| v.to_string())
        });
        let wall = r
            .as_ref()
            .map_or(String::new(), |r| format!("{:.3}", r.wall_seconds));
        let rec = [
            "run".to_string(),
            cell.strategy.to_string(),
            cell.gamma.to_string(),
            cell.seed.to_string(),
            status,
            String::new(),
            m[0].clone(),
            m[1].clone(),
            m[2].clone(),
            String::new(),
            String::new(),
            String::new(),
            wall,
        ];
        w.write_record(&rec).map_err(|e| csv_err(&sweep, e))?;
    }
    let mut failed = 0;
    for &strategy in &args.strategies {
        for &gamma in &args.gammas {
            let group: Vec<&Result<RunResult, CliError>> = cells
                .iter()
                .zip(&results)
                .filter(|(c, _)| c.strategy == strategy && c.gamma == gamma)
                .map(|(_, r)| r)
                .collect();
            let ok: Vec<[f64; 3]> = group.iter().filter_map(|r| metric(r)).collect();
            failed += group.iter().filter(|r| r.is_err()).count();
            let status = if ok.len() == group.len() {
                "ok"
            } else {
                "partial"
            };
            let mut rec = vec![
                "aggregate".to_string(),
                strategy.to_string(),
                gamma.to_string(),
                String::new(),
                status.to_string(),
                ok.len().to_string(),
            ];
            if ok.is_empty() {
                rec.extend(std::iter::repeat_n(String::new(), 6));
            } else {
                let stats: Vec<(f64, f64)> = (0..3)
                    .map(|k| mean_std(&ok.iter().map(|m| m[k]).collect::<Vec<_>>()))
                    .collect();
                rec.extend(stats.iter().map(|s| s.0.to_string()));
                rec.extend(stats.iter().map(|s| s.1.to_string()));
            }
            rec.push(String::new());
            w.write_record(&rec).map_err(|e| csv_err(&sweep, e))?;
        }
    }
    w.flush().map_err(CliError::io(&sweep))?;
    println!(
        "{} runs ({} failed) written to {}",
        cells.len(),
        failed,
        sweep.display()
    );
    Ok(())
}

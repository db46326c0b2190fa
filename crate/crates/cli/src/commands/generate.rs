use std::path::PathBuf;

use bloinst_core::data::{generate_shapes, save_annotations, ShapeKind};
use clap::Args;

use crate::error::CliError;

fn parse_shape(s: &str) -> Result<ShapeKind, String> {
    ShapeKind::parse(s)
        .ok_or_else(|| format!("unknown shape {s:?}; expected disk, square or triangle"))
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Number of images.
    #[arg(long)]
    pub n: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Comma-separated shape classes.
    #[arg(long, value_delimiter = ',', default_value = "disk,square,triangle", value_parser = parse_shape)]
    pub classes: Vec<ShapeKind>,
    /// Maximum shapes per image.
    #[arg(long, default_value_t = 3)]
    pub density: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: GenerateArgs) -> Result<(), CliError> {
    let data = generate_shapes(args.n, args.size, &args.classes, args.density, args.seed)?;
    save_annotations(&data, &args.out)?;
    let mut per_class = vec![0usize; data.classes.len()];
    for inst in data.samples.iter().flat_map(|s| &s.instances) {
        per_class[inst.class_id] += 1;
    }
    let breakdown: Vec<String> = data
        .classes
        .iter()
        .zip(&per_class)
        .map(|(c, k)| format!("{c} {k}"))
        .collect();
    println!(
        "wrote {} images, {} instances ({}) to {}",
        data.len(),
        data.num_instances(),
        breakdown.join(", "),
        args.out.display()
    );
    Ok(())
}

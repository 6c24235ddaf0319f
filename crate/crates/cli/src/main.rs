use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sif_bhm::analysis::{
    monthly_biome_aggregate, monthly_global_map, mean_uncertainty_series, write_box_table,
    write_distribution_table, write_map_table, write_ribbon_table, Hemisphere,
};
use sif_bhm::ingest::BiomeMap;
use sif_bhm::pipeline::{run_fit_prior, run_pipeline, PipelineConfig};
use sif_bhm::product::read_product;

/// Bayesian hierarchical gridding of sounding-level SIF retrievals.
#[derive(Parser, Debug)]
#[command(name = "sif-bhm", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated years, overriding the configuration.
    #[arg(long, global = true, value_delimiter = ',')]
    years: Option<Vec<i32>>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reuse finished cells from an earlier, interrupted run.
    #[arg(long, global = true)]
    resume: bool,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit every included cell-year and write one product per year.
    Run,
    /// Fit per-cell seasonal priors from the dense datasets.
    FitPrior {
        /// Output table; defaults to `prior_table` from the configuration.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Biome-month distribution and mean/uncertainty tables.
    Aggregate {
        /// Product to aggregate; defaults to the configured year's product.
        #[arg(long)]
        product: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = HemisphereArg::Both)]
        hemisphere: HemisphereArg,
        /// Output directory; defaults to `<output_dir>/analysis`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monthly mean map for one month.
    Map {
        #[arg(long)]
        month: u32,
        #[arg(long)]
        product: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HemisphereArg {
    North,
    South,
    Both,
}

impl HemisphereArg {
    fn expand(self) -> Vec<Hemisphere> {
        match self {
            HemisphereArg::North => vec![Hemisphere::North],
            HemisphereArg::South => vec![Hemisphere::South],
            HemisphereArg::Both => vec![Hemisphere::North, Hemisphere::South],
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli.config.as_ref().context("--config is required")?;
    let mut config = PipelineConfig::from_toml_file(path)?;
    if let Some(years) = &cli.years {
        config.years = years.clone();
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    config.resume |= cli.resume;
    config.force |= cli.force;
    Ok(config)
}

fn products(config: &PipelineConfig, explicit: &Option<PathBuf>) -> Result<Vec<(String, PathBuf)>> {
    if let Some(p) = explicit {
        let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        return Ok(vec![(stem, p.clone())]);
    }
    if config.years.is_empty() {
        bail!("no years configured and no --product given");
    }
    Ok(config
        .years
        .iter()
        .map(|y| (format!("bhm_sif_{y}"), config.product_path(*y)))
        .collect())
}

fn ensure_writable(path: &std::path::Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("refusing to overwrite {} (pass --force)", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Run => {
            let report = run_pipeline(&config)?;
            print!("{}", report.to_text());
        }
        Command::FitPrior { output } => {
            let path = output
                .clone()
                .or_else(|| config.prior_table.clone())
                .unwrap_or_else(|| config.output_dir.join("prior_table.csv"));
            let report = run_fit_prior(&config, &path)?;
            println!(
                "wrote {}: {} cells fit, {} boundary pileup, {} skipped",
                path.display(),
                report.cells_fit,
                report.boundary_pileup_cells.len(),
                report.skipped_cells.len()
            );
            for (cell, why) in &report.skipped_cells {
                println!("skipped {cell}: {why}");
            }
        }
        Command::Aggregate {
            product,
            hemisphere,
            out,
        } => {
            let biome_path = config.biome.as_ref().context("configuration has no biome map")?;
            let biomes = BiomeMap::read(biome_path)?;
            let out = out.clone().unwrap_or_else(|| config.output_dir.join("analysis"));
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (stem, path) in products(&config, product)? {
                let records = read_product(&path)?.records;
                for h in hemisphere.expand() {
                    let dist = monthly_biome_aggregate(&records, &biomes, h);
                    let ribbon = mean_uncertainty_series(&records, &biomes, h);
                    let tag = format!("{stem}_{}", h.as_str());
                    let targets = [
                        out.join(format!("{tag}_biome_box.csv")),
                        out.join(format!("{tag}_biome_values.csv")),
                        out.join(format!("{tag}_biome_ribbon.csv")),
                    ];
                    for t in &targets {
                        ensure_writable(t, config.force)?;
                    }
                    write_box_table(&dist.rows, &targets[0])?;
                    write_distribution_table(&dist.rows, &targets[1])?;
                    write_ribbon_table(&ribbon.rows, &targets[2])?;
                    println!(
                        "{tag}: {} biome-months, {} cell-months without biome",
                        dist.rows.len(),
                        dist.unassigned_cell_months
                    );
                }
            }
        }
        Command::Map {
            month,
            product,
            out,
        } => {
            let out = out.clone().unwrap_or_else(|| config.output_dir.join("analysis"));
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (stem, path) in products(&config, product)? {
                let records = read_product(&path)?.records;
                let cells = monthly_global_map(&records, *month)?;
                let target = out.join(format!("{stem}_map_{month:02}.csv"));
                ensure_writable(&target, config.force)?;
                write_map_table(&cells, &target)?;
                if cells.is_empty() {
                    eprintln!("warning: {stem} has no records in month {month}");
                }
                println!("{}: {} cells", target.display(), cells.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

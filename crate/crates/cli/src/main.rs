use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use mdis_cli::config::parse_prior_window;
use mdis_cli::{run_eval, run_saliency, run_train, CliError, CliResult, Exit, Geometry, RunConfig};
use mdis_core::io::MapFormat;
use mdis_core::{ContextMode, Flavor, PriorEstimator, PriorWindow, ScaleSelect, Wavelet};

#[derive(Parser)]
#[command(name = "mdis", version, about = "Multiscale discriminant saliency maps and fixation metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute saliency maps for every image in a directory.
    Saliency(Common),
    /// Score saliency maps against eye fixations.
    Eval(Common),
    /// Train one HMT model over a directory of images.
    Train {
        #[command(flatten)]
        common: Common,
        /// Where to write the trained parameters.
        #[arg(long)]
        model_out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// uhmt, thmt or vhmt; comma separated for several.
    #[arg(long, value_delimiter = ',')]
    variant: Option<Vec<Flavor>>,
    #[arg(long)]
    scales: Option<usize>,
    /// Scales to export, 0 = integrated; e.g. `0,1,5`.
    #[arg(long, value_delimiter = ',')]
    select: Option<Vec<ScaleSelect>>,
    /// Universal (uhmt) parameter file.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Per-dataset thmt/vhmt parameter file; repeatable.
    #[arg(long)]
    dataset_params: Option<Vec<PathBuf>>,
    #[arg(long)]
    fixations: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sampled AUC negatives instead of every non-fixated pixel.
    #[arg(long)]
    negatives: Option<usize>,
    /// pfm, pgm or csv; comma separated for several.
    #[arg(long, value_delimiter = ',')]
    format: Option<Vec<MapFormat>>,
    /// original or preprocessed.
    #[arg(long)]
    geometry: Option<Geometry>,
    /// haar or db4.
    #[arg(long)]
    wavelet: Option<Wavelet>,
    #[arg(long, value_parser = parse_context)]
    context: Option<ContextMode>,
    /// scale or local:R.
    #[arg(long, value_parser = parse_prior_window)]
    prior_window: Option<PriorWindow>,
    /// mean-posterior or label-fraction.
    #[arg(long, value_parser = parse_estimator)]
    prior_estimator: Option<PriorEstimator>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Keep trained per-image models beside the outputs and reuse them.
    #[arg(long)]
    cache_models: bool,
    /// Also write per-scale label images.
    #[arg(long)]
    labels: bool,
}

fn parse_context(s: &str) -> Result<ContextMode, String> {
    match s {
        "hard" => Ok(ContextMode::Hard),
        "soft" => Ok(ContextMode::Soft),
        other => Err(format!("unknown context mode `{other}` (expected hard or soft)")),
    }
}

fn parse_estimator(s: &str) -> Result<PriorEstimator, String> {
    match s {
        "mean-posterior" => Ok(PriorEstimator::MeanPosterior),
        "label-fraction" => Ok(PriorEstimator::LabelFraction),
        other => Err(format!("unknown prior estimator `{other}`")),
    }
}

impl Common {
    fn resolve(self) -> CliResult<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let derive_select = self.scales.is_some() && self.select.is_none();
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(input => input, output => output, variant => variants, scales => scales,
             select => select, dataset_params => dataset_params, sigma => sigma, seed => seed,
             format => formats, geometry => geometry, wavelet => wavelet, context => context,
             max_iter => max_iter, rel_tol => rel_tol, threads => threads);
        if derive_select {
            if self.config.is_some() {
                c.select.retain(|s| s.index() <= c.scales);
            } else {
                c.select = (0..=c.scales).map(ScaleSelect::from).collect();
            }
        }
        if self.params.is_some() {
            c.params = self.params;
        }
        if self.fixations.is_some() {
            c.fixations = self.fixations;
        }
        if self.negatives.is_some() {
            c.negatives = self.negatives;
        }
        if let Some(w) = self.prior_window {
            c.prior.window = w;
        }
        if let Some(e) = self.prior_estimator {
            c.prior.estimator = e;
        }
        c.cache_models |= self.cache_models;
        c.labels |= self.labels;
        Ok(c)
    }
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Saliency(common) => {
            let cfg = common.resolve()?;
            info!("effective configuration:\n{}", cfg.to_toml());
            let s = run_saliency(&cfg)?;
            println!(
                "{} images, {} map files, {} warnings -> {}",
                s.images,
                s.maps_written,
                s.warnings,
                cfg.output.display()
            );
        }
        Command::Eval(common) => {
            let cfg = common.resolve()?;
            info!("effective configuration:\n{}", cfg.to_toml());
            let s = run_eval(&cfg)?;
            print!("{}", s.report.to_table());
        }
        Command::Train { common, model_out } => {
            let mut cfg = common.resolve()?;
            let variant = match cfg.variants.as_slice() {
                [v] => *v,
                _ => return Err(CliError::Config("train takes exactly one --variant".into())),
            };
            cfg.variants = vec![variant];
            info!("effective configuration:\n{}", cfg.to_toml());
            let s = run_train(&cfg, variant, &model_out)?;
            println!(
                "{variant} model from {} images, {} EM iterations -> {}",
                s.images,
                s.trace.len() - 1,
                model_out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Config as u8 } else { Exit::Success as u8 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit() as u8)
        }
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use millreduce::encoding::{EncodingScheme, SplitMode};
use millreduce::mlp::ModelFile;
use millreduce::pruner::removal_log_csv;
use millreduce::sim::{compare_with_full, simulate_full, traces_to_csv, Surrogate};
use millreduce::study::{
    bottleneck_report, ensure_writable, fit_model, report_text, run_study, write_artifacts, Execution,
    FittedModel,
};
use millreduce::{StudyConfig, StudyReport};

#[derive(Debug, Parser)]
#[command(name = "millreduce", version, about = "Sawmill simulation and neural model reduction")]
struct Cli {
    /// Study configuration (TOML key-value file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Encoding of the conveyor input.
    #[arg(long, global = true, value_parser = parse_scheme)]
    scheme: Option<EncodingScheme>,
    /// Number of seeded trials per scheme.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Simulation seed for `simulate` and `reduce`, weight seed otherwise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Learn/validation split.
    #[arg(long, global = true, value_parser = parse_split)]
    split: Option<SplitMode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full simulation and export the product traces.
    Simulate,
    /// Train one network on simulated traces.
    Train,
    /// Train one network, then prune it.
    Prune,
    /// Run the multi-trial encoding study.
    Study {
        /// Run trials one after another instead of in parallel.
        #[arg(long)]
        sequential: bool,
    },
    /// Compare the reduced simulation against the full one.
    Reduce {
        /// Trained model; a pruned network is fitted when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Wall-time repeats per simulator.
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Print the report of a finished study found in `--out`.
    Report,
}

fn parse_scheme(s: &str) -> Result<EncodingScheme, String> {
    s.parse().map_err(|e: millreduce::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<SplitMode, String> {
    s.parse().map_err(|e: millreduce::Error| e.to_string())
}

fn load_config(cli: &Cli) -> Result<StudyConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            StudyConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => StudyConfig::default(),
    };
    if let Some(n) = cli.trials {
        config.n_trials = n;
    }
    if let Some(s) = cli.split {
        config.split_mode = s;
    }
    if let Some(s) = cli.scheme {
        config.schemes = vec![s];
    }
    match (&cli.command, cli.seed) {
        (Command::Simulate | Command::Reduce { .. }, Some(seed)) => config.sim.seed = seed,
        (_, Some(seed)) => config.base_seed = seed,
        _ => {}
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(cli: &Cli) -> Result<Option<&Path>> {
    match &cli.out {
        Some(dir) => {
            ensure_writable(dir).with_context(|| format!("output directory {}", dir.display()))?;
            Ok(Some(dir))
        }
        None => Ok(None),
    }
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn simulate(cli: &Cli, config: &StudyConfig) -> Result<()> {
    let out = out_dir(cli)?;
    let run = simulate_full(&config.sim)?;
    let report = bottleneck_report(config, &run)?;
    println!("logs: {}  products: {}  end time: {:.1} s", run.logs.len(), run.traces.len(), run.end_time);
    for (name, u) in &report.utilizations {
        println!("  {name:<10}{u:>8.4}");
    }
    println!("bottlenecks: {}", report.bottlenecks.all().into_iter().collect::<Vec<_>>().join(", "));
    if let Some(dir) = out {
        write(dir.join("traces.csv"), traces_to_csv(&run.traces)?)?;
        write(dir.join("bottlenecks.json"), serde_json::to_string_pretty(&report)?)?;
        write(dir.join("census.json"), serde_json::to_string_pretty(&run.census)?)?;
        println!("wrote traces to {}", dir.join("traces.csv").display());
    }
    Ok(())
}

fn single_scheme(cli: &Cli) -> EncodingScheme {
    cli.scheme.unwrap_or(EncodingScheme::A3BinaryPlusComplement)
}

fn fit(cli: &Cli, config: &StudyConfig, prune: bool) -> Result<()> {
    let out = out_dir(cli)?;
    let fitted = fit_model(config, single_scheme(cli), config.base_seed, prune)?;
    print_fit(&fitted);
    if let Some(dir) = out {
        fitted.model.write(&dir.join("model.json"))?;
        write(dir.join("train_history.csv"), fitted.history.to_csv())?;
        if prune {
            write(dir.join("removal_log.csv"), removal_log_csv(&fitted.removal_log))?;
        }
        println!("wrote model to {}", dir.join("model.json").display());
    }
    Ok(())
}

fn print_fit(f: &FittedModel) {
    let s = f.params.effective_structure();
    println!("scheme {}  seed {}", f.scheme.token(), f.seed);
    println!("learning RMSE {:.3} s  validation RMSE {:.3} s", f.learn_rmse, f.val_rmse);
    println!(
        "active inputs {}  hidden {}  weights {}  removals {}",
        s.active_inputs,
        s.active_hidden,
        s.active_weights,
        f.removal_log.iter().filter(|r| r.accepted).count()
    );
}

fn study(cli: &Cli, config: &StudyConfig, sequential: bool) -> Result<()> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("millreduce-study"));
    ensure_writable(&dir).with_context(|| format!("output directory {}", dir.display()))?;
    let execution = if sequential { Execution::Sequential } else { Execution::Parallel };
    let run = run_study(config, execution)?;
    write_artifacts(&run, &dir)?;
    print!("{}", report_text(&run.report, config.mean_threshold));
    println!("\nartifacts in {}", dir.display());
    Ok(())
}

fn model_scheme(cli: &Cli, model: &ModelFile) -> Result<EncodingScheme> {
    if let Some(s) = cli.scheme {
        return Ok(s);
    }
    match model.input_column_names.len() {
        13 => Ok(EncodingScheme::A3BinaryPlusComplement),
        n => bail!("model has {n} inputs; pass --scheme a1 or --scheme a2"),
    }
}

fn reduce(cli: &Cli, config: &StudyConfig, model: Option<&Path>, repeats: usize) -> Result<()> {
    let out = out_dir(cli)?;
    let run = simulate_full(&config.sim)?;
    let bottlenecks = bottleneck_report(config, &run)?;
    let surrogate = match model {
        Some(path) => {
            let file = ModelFile::read(path)?;
            Surrogate::from_model_file(&file, model_scheme(cli, &file)?)?
        }
        None => {
            let fitted = fit_model(config, single_scheme(cli), config.base_seed, true)?;
            print_fit(&fitted);
            Surrogate::new(fitted.params, fitted.scheme, fitted.scaler)?
        }
    };
    let cmp = compare_with_full(&config.sim, &surrogate, repeats)?;
    println!("kept stations: {}", {
        let mut kept: Vec<String> = bottlenecks.bottlenecks.all().into_iter().collect();
        kept.extend(bottlenecks.synchronization.iter().cloned());
        kept.join(", ")
    });
    println!("arrival-time MAE {:.3} s over {} products", cmp.arrival_mae, cmp.n_products);
    println!(
        "wall time full {:.3} ms  reduced {:.3} ms  ratio {:.3}",
        1e3 * cmp.full_seconds,
        1e3 * cmp.reduced_seconds,
        cmp.time_ratio()
    );
    if let Some(dir) = out {
        let json = serde_json::json!({ "bottlenecks": bottlenecks, "comparison": cmp });
        write(dir.join("reduction.json"), serde_json::to_string_pretty(&json)?)?;
    }
    Ok(())
}

fn report(cli: &Cli) -> Result<()> {
    let Some(dir) = &cli.out else { bail!("report needs --out pointing at a study directory") };
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report: StudyReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let threshold = match fs::read_to_string(dir.join("config.toml")) {
        Ok(t) => StudyConfig::from_toml(&t)?.mean_threshold,
        Err(_) => StudyConfig::default().mean_threshold,
    };
    print!("{}", report_text(&report, threshold));
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Command::Report = cli.command {
        return report(&cli);
    }
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Simulate => simulate(&cli, &config),
        Command::Train => fit(&cli, &config, false),
        Command::Prune => fit(&cli, &config, true),
        Command::Study { sequential } => study(&cli, &config, *sequential),
        Command::Reduce { model, repeats } => reduce(&cli, &config, model.as_deref(), *repeats),
        Command::Report => unreachable!(),
    }
}

//! Command-line front end for the data-market simulator.
//!
//! Every subcommand reads the same `key = value` config file (all keys
//! optional, see `ProtocolConfig`), with `--set key=value` overrides on
//! top. Exit codes: 0 success, 2 bad config or I/O, 3 protocol abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use shapmkt::bristol::BristolCircuit;
use shapmkt::market::{
    bench_grid, prepare_scenario, run_plaintext_pipeline, run_protocol, run_secure_valuation,
    train_buyer_model, ProtocolConfig,
};
use shapmkt::model::save_model;
use shapmkt::net::Phase;
use shapmkt::ring::derive_rng;
use shapmkt::valuation::{build_utility_dataset_blocks, ValuationReport};
use shapmkt::{Error, Result};

#[derive(Parser)]
#[command(name = "shapmkt", version, about = "Privacy-preserving data valuation market")]
struct Cli {
    /// Config file in `key = value` format.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set owners=4` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic market and write one CSV per owner plus the
    /// validation set.
    GenMarket {
        /// Output directory.
        #[arg(short, long, default_value = "market")]
        out: PathBuf,
    },
    /// Sample coalitions of the pre-shared pool, score each with the proxy
    /// learner, and write the resulting utility dataset.
    BuildSds {
        #[arg(short, long, default_value = "sds.csv")]
        out: PathBuf,
    },
    /// Train the data-utility model on the sampled coalitions and save it.
    TrainUtility {
        #[arg(short, long, default_value = "utility.model")]
        out: PathBuf,
    },
    /// Compute per-owner Shapley values with the trained model.
    Valuate {
        /// Cleartext reference pipeline.
        #[arg(long)]
        plaintext: bool,
        /// Secure pipeline: shared inputs, joint coalition scoring.
        #[arg(long)]
        mpc: bool,
        #[arg(short, long, default_value = "valuation.csv")]
        out: PathBuf,
    },
    /// The full run: secure valuation, pricing, hash-locked settlement,
    /// and delivery decryption.
    RunProtocol {
        #[arg(short, long, default_value = "run.csv")]
        out: PathBuf,
        /// Also write the settlement chain's event log.
        #[arg(long)]
        ledger_log: Option<PathBuf>,
    },
    /// Parse a Bristol-format circuit file and print its gate census.
    ParseCircuit { file: PathBuf },
    /// Measure secure-valuation transport across market sizes.
    Bench {
        /// Grid of `owners:samples` points.
        #[arg(long, default_value = "4:10,4:20,4:30,4:40", value_name = "O:S,O:S,...")]
        grid: String,
    },
}

fn load_config(cli: &Cli) -> Result<ProtocolConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ProtocolConfig::from_file(path)?,
        None => ProtocolConfig::default(),
    };
    for item in &cli.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {item:?} is not KEY=VALUE")))?;
        cfg.apply(key.trim(), value.trim())?;
    }
    Ok(cfg)
}

fn print_values(report: &ValuationReport) {
    println!("owner      shapley        stderr       leave-one-out");
    for i in 0..report.shapley.len() {
        let stderr = report
            .stderr
            .as_ref()
            .map_or("      -".into(), |e| format!("{:>10.6}", e[i]));
        println!("{i:<10} {:>+12.6} {stderr} {:>+12.6}", report.shapley[i], report.loo[i]);
    }
    if report.exact {
        println!("method: exact enumeration ({} coalitions)", report.coalitions.len());
    } else {
        println!("method: {} sampled permutations", report.samples);
    }
}

fn parse_grid(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let bad = || Error::Config(format!("grid point {t:?} is not owners:samples"));
            let (o, s) = t.trim().split_once(':').ok_or_else(bad)?;
            Ok((o.parse().map_err(|_| bad())?, s.parse().map_err(|_| bad())?))
        })
        .collect()
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenMarket { out } => {
            let scenario = prepare_scenario(&cfg)?;
            std::fs::create_dir_all(out)?;
            println!("owner      samples  pre-shared  noise");
            for (i, set) in scenario.owners.iter().enumerate() {
                set.save_csv(&out.join(format!("owner-{i}.csv")))?;
                println!(
                    "{i:<10} {:>7} {:>11} {:>6.3}",
                    set.len(),
                    scenario.pre_shared[i].len(),
                    scenario.noise_level[i]
                );
            }
            scenario.validation.save_csv(&out.join("validation.csv"))?;
            println!("validation: {} samples -> {}", scenario.validation.len(), out.display());
        }
        Command::BuildSds { out } => {
            let scenario = prepare_scenario(&cfg)?;
            let pool = scenario.buyer_pool()?;
            let mut rng = derive_rng(cfg.market.seed, "utility dataset");
            let sds = build_utility_dataset_blocks(
                &scenario.pre_shared,
                &scenario.validation,
                cfg.sds_samples,
                &mut rng,
            )?;
            let mean: f64 =
                sds.entries.iter().map(|e| e.utility).sum::<f64>() / sds.len() as f64;
            sds.save_csv(out)?;
            println!(
                "{} coalitions over a pool of {} (mean utility {mean:.4}) -> {}",
                sds.len(),
                pool.len(),
                out.display()
            );
        }
        Command::TrainUtility { out } => {
            let scenario = prepare_scenario(&cfg)?;
            let trained = train_buyer_model(&cfg, &scenario)?;
            save_model(&trained.model, out)?;
            match (trained.loss.first(), trained.loss.last()) {
                (Some(first), Some(last)) => {
                    println!("trained {} epochs: loss {first:.5} -> {last:.5}", trained.loss.len())
                }
                _ => println!("loaded pre-trained model"),
            }
            println!("saved -> {}", out.display());
        }
        Command::Valuate { plaintext, mpc, out } => {
            if *plaintext == *mpc {
                return Err(Error::Config(
                    "pick exactly one of --plaintext or --mpc".into(),
                ));
            }
            if *plaintext {
                let run = run_plaintext_pipeline(&cfg)?;
                print_values(&run.report);
                if run.scenario.noise_level.iter().any(|&l| l > 0.0) {
                    match run.noise_rank_correlation() {
                        Ok(rho) => println!("noise-vs-value rank correlation: {rho:.4}"),
                        Err(e) => println!("noise-vs-value rank correlation: n/a ({e})"),
                    }
                }
                run.report.save_csv(out)?;
            } else {
                let valued = run_secure_valuation(&cfg)?;
                print_values(&valued.values);
                let two = valued.cost.phase_total(Phase::TwoParty);
                let multi = valued.cost.phase_total(Phase::MultiParty);
                println!(
                    "traffic: {} B pairwise, {} B joint, {:.3} s simulated",
                    two.bytes, multi.bytes, valued.cost.total.seconds
                );
                valued.values.save_csv(out)?;
            }
            println!("report -> {}", out.display());
        }
        Command::RunProtocol { out, ledger_log } => {
            let report = run_protocol(&cfg)?;
            print!("{}", report.summary());
            report.save_csv(out)?;
            println!("report -> {}", out.display());
            if let Some(path) = ledger_log {
                std::fs::write(path, &report.ledger_log)?;
                println!("ledger log -> {}", path.display());
            }
        }
        Command::ParseCircuit { file } => {
            let circuit = BristolCircuit::parse(&std::fs::read_to_string(file)?)?;
            let c = circuit.counts();
            println!("wires:    {}", circuit.wire_count());
            println!("inputs:   {:?} bits", circuit.input_groups());
            println!("outputs:  {:?} bits", circuit.output_groups());
            println!(
                "gates:    {} AND, {} XOR, {} INV, {} const",
                c.and,
                c.xor,
                c.inv,
                c.eq + c.eqw
            );
            println!("AND depth: {}", circuit.and_depth());
        }
        Command::Bench { grid } => {
            let rows = bench_grid(&cfg, &parse_grid(grid)?)?;
            println!("owners  samples  2pc-bytes      mpc-bytes      sim-seconds");
            for r in &rows {
                println!(
                    "{:<7} {:<8} {:<14} {:<14} {:.3}",
                    r.owners, r.samples_per_owner, r.two_party_bytes, r.multi_party_bytes,
                    r.seconds
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

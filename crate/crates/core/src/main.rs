use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mdiqds::scenario::{run_with_sink, Mode, OutputFormat, Overrides, Report, Scenario};
use mdiqds::Error;

#[derive(Parser)]
#[command(name = "mdiqds", version, about = "MDI quantum digital signature simulator and security calculator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON), merged onto the built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// RNG seed; required by simulate and protocol.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Report destination; standard output when absent.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Detector preset: standard, ingaas_apd, ingaas_inp_apd or snspd.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    /// Divides Monte-Carlo pulse budgets.
    #[arg(long, global = true, value_name = "FACTOR")]
    scale: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Security report from expected counts, or a search for the pulse count.
    Analytic {
        /// Pulses per key generation; searched when neither this nor the
        /// scenario gives one.
        #[arg(long = "n-sig", value_name = "N")]
        n_sig: Option<f64>,
    },
    /// Monte-Carlo key generations at N_sig / scale, then the estimators.
    Simulate {
        #[arg(long = "n-sig", value_name = "N")]
        n_sig: Option<f64>,
        /// Writes each key generation's sifted events as CSV into this directory.
        #[arg(long = "dump-sifted", value_name = "DIR")]
        dump_sifted: Option<PathBuf>,
    },
    /// Honest, repudiation and forging runs against their bounds.
    Protocol,
    /// Raw-key-time table replay.
    Tables {
        /// Also search each row's pulse count.
        #[arg(long)]
        reproduce: bool,
    },
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Domain(_) | Error::OddLength(_) | Error::MalformedDeclaration(_) => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn execute(cli: Cli) -> Result<Report, (Error, Option<PathBuf>)> {
    let (mode, n_sig) = match &cli.command {
        Command::Analytic { n_sig } => (Mode::Analytic, *n_sig),
        Command::Simulate { n_sig, .. } => (Mode::Montecarlo, *n_sig),
        Command::Protocol => (Mode::Protocol, None),
        Command::Tables { .. } => (Mode::TableSweep, None),
    };
    let c = &cli.common;
    let overrides = Overrides {
        mode: Some(mode),
        preset: c.preset.clone(),
        seed: c.seed,
        format: c.format.map(|f| match f {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
        }),
        scale_factor: c.scale,
        n_sig,
    };
    let mut sc = match &c.config {
        Some(p) => Scenario::load(p, &overrides),
        None => Scenario::from_json_str("{}", &overrides),
    }
    .map_err(|e| (e, None))?;
    if let Command::Tables { reproduce: true } = cli.command {
        sc.tables.reproduce = true;
    }
    let dump = match &cli.command {
        Command::Simulate { dump_sifted, .. } => dump_sifted.clone(),
        _ => None,
    };
    let report = run_with_sink(&sc, &mut |i, data| {
        let Some(dir) = &dump else { return Ok(()) };
        std::fs::create_dir_all(dir)?;
        let name = ["sifted_alice_bob.csv", "sifted_alice_charlie.csv"][i.min(1)];
        data.write_csv(BufWriter::new(File::create(dir.join(name))?))
    })
    .map_err(|e| (e, None))?;
    let write = |w: &mut dyn Write| report.write(sc.format, w);
    match &c.out {
        Some(p) => {
            let f = File::create(p).map_err(|e| (Error::from(e), Some(p.clone())))?;
            write(&mut BufWriter::new(f)).map_err(|e| (e, Some(p.clone())))?;
        }
        None => write(&mut io::stdout().lock()).map_err(|e| (e, None))?,
    }
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(report) => {
            if let Some(d) = &report.diagnostic {
                eprintln!("mdiqds: {d}");
            }
            ExitCode::from(report.status.exit_code() as u8)
        }
        Err((e, path)) => {
            match path {
                Some(p) => eprintln!("mdiqds: {}: {e}", p.display()),
                None => eprintln!("mdiqds: {e}"),
            }
            ExitCode::from(exit_code_for(&e))
        }
    }
}

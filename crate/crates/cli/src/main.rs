use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gansic::deepsic::DeepSicCheckpoint;
use gansic::gan::GanCheckpoint;
use gansic::harness::workflows::write_rows;
use gansic::harness::{self, Method, ScenarioConfig, SweepResult};
use gansic::online::write_trace;

#[derive(Parser)]
#[command(name = "gansic", version, about = "MIMO symbol detection experiments")]
#[command(after_long_help = config_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-SNR sweep: MAP, SIC and DeepSIC trained at each SNR.
    SweepStatic(Common),
    /// Block-cycled SNR scenario: pooled DeepSIC and the online GAN detectors.
    SweepDynamic(Common),
    /// Train the GAN on one static channel and report its fidelity.
    TrainGan(Common),
    /// Online training (TrainGAN alongside UpdateDetector) over the SNR blocks.
    Online(Common),
    /// The fused GAN and detector step over the SNR blocks.
    Joint(Common),
    /// Render results.csv in the output directory as results.svg.
    Plot(PlotArgs),
    /// Run every finite-difference gradient suite.
    Gradcheck(Common),
}

#[derive(Args)]
#[command(after_long_help = config_help())]
struct Common {
    /// Scenario JSON; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Dotted config override such as channel.kind=poisson.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for independent sweep cells.
    #[arg(long, value_name = "N", default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct PlotArgs {
    #[command(flatten)]
    common: Common,
    /// CSV to plot instead of <out>/results.csv.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
}

fn config_help() -> String {
    let mut s = String::from("Config keys (defaults):\n");
    for (key, value) in ScenarioConfig::documented_keys() {
        s.push_str(&format!("  {key} = {value}\n"));
    }
    s
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<gansic::Error> for Failure {
    fn from(e: gansic::Error) -> Self {
        match e {
            gansic::Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn load_config(c: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            ScenarioConfig::from_json(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => ScenarioConfig::default(),
    };
    for o in &c.overrides {
        cfg.apply_override(o).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if c.threads == 0 {
        return Err(Failure::Usage("--threads must be >= 1".into()));
    }
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn report_rows(result: &SweepResult) {
    for r in &result.rows {
        println!(
            "{:<16} {:<10} snr {:>5} dB  ser {:.6}  ({} / {})",
            r.method, r.channel, r.snr_db, r.ser, r.errors, r.symbols
        );
    }
}

fn emit_results(out: &Path, result: &SweepResult) -> Result<(), Failure> {
    harness::emit_csv(result, &out.join("results.csv"))?;
    harness::emit_plot(result, &out.join("results.svg"))?;
    report_rows(result);
    Ok(())
}

fn run_online(c: &Common, method: Method) -> Result<(), Failure> {
    let cfg = load_config(c)?;
    prepare_out(&c.out)?;
    let (run, state) = harness::gansic_run(&cfg, method)?;
    write_trace(&run.trace, create(&c.out.join("trace.csv"))?)?;
    write_text(
        &c.out.join("generator.json"),
        &GanCheckpoint::generator(&state.gan.g, Some(&state.gan.adam_g)).to_json()?,
    )?;
    write_text(
        &c.out.join("detector.json"),
        &DeepSicCheckpoint::new(&state.detector.net).to_json()?,
    )?;
    emit_results(&c.out, &SweepResult { rows: run.rows })
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::SweepStatic(c) => {
            let cfg = load_config(&c)?;
            prepare_out(&c.out)?;
            let result = harness::run_static_sweep(&cfg, c.threads)?;
            emit_results(&c.out, &result)
        }
        Command::SweepDynamic(c) => {
            let cfg = load_config(&c)?;
            prepare_out(&c.out)?;
            let (result, traces) = harness::run_dynamic_sweep(&cfg, c.threads)?;
            for (method, trace) in traces {
                write_trace(&trace, create(&c.out.join(format!("trace_{method}.csv")))?)?;
            }
            emit_results(&c.out, &result)
        }
        Command::TrainGan(c) => {
            let cfg = load_config(&c)?;
            prepare_out(&c.out)?;
            let run = harness::run_train_gan(&cfg)?;
            write_rows(&run.trace, create(&c.out.join("gan_trace.csv"))?)?;
            write_rows(&run.fidelity.cells, create(&c.out.join("fidelity.csv"))?)?;
            write_text(
                &c.out.join("generator.json"),
                &GanCheckpoint::generator(&run.trainer.g, Some(&run.trainer.adam_g)).to_json()?,
            )?;
            write_text(
                &c.out.join("discriminator.json"),
                &GanCheckpoint::discriminator(&run.trainer.d, Some(&run.trainer.adam_d)).to_json()?,
            )?;
            let last = run.trace.last();
            println!(
                "steps {}  f_D {}  d_accuracy {}  max mean error {:.4}  worst variance factor {:.3}",
                run.trace.len(),
                last.map_or("-".into(), |t| format!("{:.4}", t.f_d)),
                last.map_or("-".into(), |t| format!("{:.3}", t.d_accuracy)),
                run.fidelity.max_mean_error(),
                run.fidelity.worst_variance_factor()
            );
            Ok(())
        }
        Command::Online(c) => run_online(&c, Method::GansicInitial),
        Command::Joint(c) => run_online(&c, Method::GansicJoint),
        Command::Plot(p) => {
            let input = p.input.clone().unwrap_or_else(|| p.common.out.join("results.csv"));
            let result = harness::parse_csv(&input).map_err(|e| Failure::Usage(e.to_string()))?;
            prepare_out(&p.common.out)?;
            harness::emit_plot(&result, &p.common.out.join("results.svg"))?;
            println!("{} rows plotted", result.rows.len());
            Ok(())
        }
        Command::Gradcheck(c) => {
            let cfg = load_config(&c)?;
            prepare_out(&c.out)?;
            let reports = harness::gradient_suites(cfg.seed)?;
            let mut csv = String::from("suite,checked,max_relative_error\n");
            let mut failed = 0;
            for r in &reports {
                let ok = r.passed(1e-4);
                failed += usize::from(!ok);
                println!(
                    "{:<28} {:>6} values  max rel error {:.3e}  {}",
                    r.name,
                    r.checked,
                    r.max_relative_error,
                    if ok { "ok" } else { "FAILED" }
                );
                csv.push_str(&format!("{},{},{:e}\n", r.name, r.checked, r.max_relative_error));
            }
            write_text(&c.out.join("gradcheck.csv"), &csv)?;
            if failed > 0 {
                return Err(Failure::Runtime(format!("{failed} gradient suites exceeded 1e-4")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hadec::bench::{run_scenario, scenario_matrix, write_csv};
use hadec::config::{parse_size, Settings};
use hadec::pipeline::{run_capture_role, BatchOutcome, DetectionServer, EventLog};
use hadec::{format_line, generate_trace, run_job, AttackClass, TraceSpec};

/// Live DDoS flood detection over packet-summary logs.
#[derive(Parser, Debug)]
#[command(name = "hadec", version)]
struct Cli {
    /// `key = value` settings file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic traffic log.
    Gen(GenArgs),
    /// Roll a line stream into files and ship them to a detection server.
    Capture(CaptureArgs),
    /// Stage shipped files and run one detection job per batch.
    DetectServer(ServerArgs),
    /// Run a single detection job over local log files.
    Detect(DetectArgs),
    /// Time the full loopback pipeline over a scenario matrix; CSV out.
    Bench(BenchArgs),
}

fn size_arg(s: &str) -> Result<u64, String> {
    parse_size(s)
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("`{s}` is not a positive size (e.g. 4096, 32KB, 128MB)"))
}

#[derive(Args, Debug, Default)]
struct JobFlags {
    #[arg(long, value_name = "CLASS")]
    attack_class: Option<AttackClass>,
    /// Report sources with strictly more matching packets than this.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    threshold: Option<u64>,
    #[arg(long, value_parser = size_arg)]
    block_size: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..1024))]
    workers: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..1024))]
    reducers: Option<u64>,
}

impl JobFlags {
    fn settings(&self) -> Settings {
        Settings {
            attack_class: self.attack_class,
            threshold: self.threshold,
            block_size: self.block_size,
            workers: self.workers.map(|w| w as usize),
            reducers: self.reducers.map(|r| r as usize),
            ..Settings::default()
        }
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Distinct attacking sources.
    #[arg(long, required_unless_present = "target_size", conflicts_with = "target_size")]
    attackers: Option<u32>,
    /// Choose the attacker count so the log comes out near this size.
    #[arg(long, value_parser = size_arg)]
    target_size: Option<u64>,
    #[arg(long)]
    packets_per_attacker: u32,
    #[arg(long, default_value = "udp")]
    attack_class: AttackClass,
    /// Share of attack packets in the stream, in (0, 1].
    #[arg(long, default_value_t = 0.8)]
    mix: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Legitimate sources.
    #[arg(long)]
    legit_hosts: Option<u32>,
    /// Output file, or `-` for stdout.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long, num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    #[command(flatten)]
    job: JobFlags,
    /// Results file to write.
    #[arg(long, default_value = "detect.results")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CaptureArgs {
    /// Line source; `-` reads stdin.
    #[arg(long, default_value = "-")]
    input: PathBuf,
    /// Detection server address.
    #[arg(long)]
    peer: Option<String>,
    #[arg(long, value_parser = size_arg)]
    file_size: Option<u64>,
    /// Files per detection batch.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    file_count: Option<u32>,
    /// Where rolled files wait for transfer.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Connection and transfer attempts.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    retries: Option<u32>,
    #[arg(long, default_value = ".")]
    work_dir: PathBuf,
}

#[derive(Args, Debug)]
struct ServerArgs {
    /// Address to listen on.
    #[arg(long)]
    peer: Option<String>,
    #[arg(long)]
    staging_dir: Option<PathBuf>,
    #[arg(long)]
    results_dir: Option<PathBuf>,
    #[command(flatten)]
    job: JobFlags,
    /// Exit after this many jobs.
    #[arg(long)]
    max_batches: Option<u64>,
    #[arg(long, default_value = ".")]
    work_dir: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', value_parser = size_arg, default_value = "1MB,10MB")]
    file_sizes: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "500")]
    thresholds: Vec<u64>,
    #[arg(long, value_delimiter = ',', value_parser = size_arg, default_value = "32KB,1MB")]
    block_sizes: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "1,4")]
    workers: Vec<usize>,
    #[arg(long, default_value = "udp")]
    attack_class: AttackClass,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scratch space; a temporary directory when omitted.
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

/// A failure caused by how the tool was invoked rather than by the run.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

fn load_settings(config: Option<&Path>, flags: Settings) -> Result<Settings> {
    let file = match config {
        Some(path) => Settings::load(path).map_err(|e| Usage(e.to_string()))?,
        None => Settings::default(),
    };
    Ok(file.overlay(flags))
}

fn open_output(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(Box::new(BufWriter::with_capacity(1 << 16, file)))
}

fn gen(args: GenArgs) -> Result<()> {
    let mut spec = match (args.attackers, args.target_size) {
        (Some(n), None) => TraceSpec::new(args.attack_class, n, args.packets_per_attacker).with_seed(args.seed),
        (None, Some(bytes)) => TraceSpec::for_file_size(args.attack_class, bytes, args.packets_per_attacker, args.seed),
        _ => return usage("give exactly one of --attackers or --target-size"),
    };
    spec.attack_fraction = args.mix;
    if let Some(hosts) = args.legit_hosts {
        spec.legitimate_host_count = hosts;
    }
    let mut generator = generate_trace(&spec).map_err(|e| Usage(format!("invalid traffic spec: {e}")))?;

    let mut out = open_output(&args.out)?;
    let (mut lines, mut bytes) = (0u64, 0u64);
    let written = (|| -> io::Result<()> {
        for record in generator.by_ref() {
            let line = format_line(&record);
            out.write_all(line.as_bytes())?;
            out.write_all(b"\n")?;
            lines += 1;
            bytes += line.len() as u64 + 1;
        }
        out.flush()
    })();
    match written {
        // A closed pipe (`| head`) just means the reader has had enough.
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe && args.out == Path::new("-") => return Ok(()),
        other => other.with_context(|| format!("writing {}", args.out.display()))?,
    }
    let wire_bytes = generator.wire_bytes();
    if args.out != Path::new("-") {
        println!(
            "{}: {lines} records, {bytes} bytes, {} attackers x {} {} packets, wire volume {wire_bytes} bytes",
            args.out.display(),
            spec.attacker_count,
            spec.packets_per_attacker,
            spec.attack_class
        );
    }
    Ok(())
}

fn detect(config: Option<&Path>, args: DetectArgs) -> Result<()> {
    let settings = load_settings(config, args.job.settings())?;
    let job = settings.job_config();
    let result = run_job(&args.input, &job)?;
    result
        .write_results(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;

    let stats = &result.stats;
    println!(
        "{} flood, threshold {}: {} attacker(s)",
        result.attack_class,
        result.threshold,
        result.attackers.len()
    );
    for a in &result.attackers {
        println!("  {}\t{}", a.src_ip, a.count);
    }
    println!(
        "records {} (malformed {}), matched {}, blocks {}, workers {}, detect {:.1} ms",
        stats.records_seen,
        stats.malformed_count,
        stats.records_matched,
        stats.blocks,
        job.worker_count,
        stats.detect_time().as_secs_f64() * 1e3
    );
    println!("results written to {}", args.out.display());
    Ok(())
}

fn capture(config: Option<&Path>, args: CaptureArgs) -> Result<()> {
    let flags = Settings {
        peer: args.peer,
        file_size: args.file_size,
        file_count: args.file_count,
        out_dir: args.out_dir,
        retries: args.retries,
        ..Settings::default()
    };
    let settings = load_settings(config, flags)?;
    let pipeline = settings.pipeline_config(&args.work_dir);

    let reader: Box<dyn BufRead> = if args.input == Path::new("-") {
        Box::new(BufReader::new(io::stdin().lock()))
    } else {
        let file = File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
        Box::new(BufReader::with_capacity(1 << 16, file))
    };
    let report = run_capture_role(&pipeline, reader.lines(), &EventLog::new())?;

    println!(
        "captured {} records ({} bytes) into {} file(s), {} dropped",
        report.records_written,
        report.bytes_written,
        report.files.len(),
        report.dropped_records
    );
    let mut failed = 0;
    for (i, (files, outcome)) in report.batches.iter().enumerate() {
        match outcome {
            BatchOutcome::Attackers(attackers) => {
                println!("batch {} ({} files): {} attacker(s)", i + 1, files.len(), attackers.len());
                for a in attackers {
                    println!("  {}", a.to_line());
                }
            }
            BatchOutcome::Failed { code, text } => {
                failed += 1;
                println!("batch {} ({} files): failed: {code}: {text}", i + 1, files.len());
            }
            BatchOutcome::Lost => {
                failed += 1;
                println!("batch {} ({} files): no answer from the detection server", i + 1, files.len());
            }
        }
    }
    if failed > 0 {
        bail!("{failed} batch(es) did not produce results");
    }
    Ok(())
}

fn detect_server(config: Option<&Path>, args: ServerArgs) -> Result<()> {
    let flags = Settings {
        peer: args.peer,
        staging_dir: args.staging_dir,
        results_dir: args.results_dir,
        ..args.job.settings()
    };
    let settings = load_settings(config, flags)?;
    let pipeline = settings.pipeline_config(&args.work_dir);
    let mut server = DetectionServer::bind(pipeline, EventLog::new())?;
    if let Some(n) = args.max_batches {
        server = server.with_max_batches(n);
    }
    eprintln!("listening on {}", server.local_addr());
    server.run()?;
    Ok(())
}

fn bench(config: Option<&Path>, args: BenchArgs) -> Result<()> {
    // The settings file only matters here for validation.
    load_settings(config, Settings::default())?;
    if args.thresholds.contains(&0) || args.workers.contains(&0) {
        return usage("thresholds and worker counts must be positive");
    }
    let matrix = scenario_matrix(
        args.attack_class,
        &args.file_sizes,
        &args.thresholds,
        &args.block_sizes,
        &args.workers,
        args.seed,
    );
    let (work, scratch) = match args.work_dir {
        Some(dir) => (dir, false),
        None => (std::env::temp_dir().join(format!("hadec-bench-{}", std::process::id())), true),
    };
    fs::create_dir_all(&work).with_context(|| format!("creating {}", work.display()))?;

    let mut records = Vec::with_capacity(matrix.len());
    let mut outcome = Ok(());
    for scenario in &matrix {
        log::info!("running {}", scenario.label());
        match run_scenario(scenario, &work) {
            Ok(r) => records.push(r),
            Err(e) => {
                outcome = Err(anyhow::Error::new(e).context(format!("scenario {}", scenario.label())));
                break;
            }
        }
    }
    if scratch {
        let _ = fs::remove_dir_all(&work);
    }
    outcome?;

    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => open_output(path)?,
        None => Box::new(io::stdout().lock()),
    };
    write_csv(&mut out, &records)?;
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Gen(args) => gen(args),
        Command::Detect(args) => detect(config, args),
        Command::Capture(args) => capture(config, args),
        Command::DetectServer(args) => detect_server(config, args),
        Command::Bench(args) => bench(config, args),
    }
}

/// The error and its causes, leaving out causes the message already quotes.
fn error_chain(e: &anyhow::Error) -> String {
    let mut text = e.to_string();
    for cause in e.chain().skip(1) {
        let cause = cause.to_string();
        if !text.contains(&cause) {
            text.push_str(": ");
            text.push_str(&cause);
        }
    }
    text
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

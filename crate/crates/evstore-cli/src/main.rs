//! `evstore`: desk-scale event store CLI. One persistent data root holds
//! the catalog journal, backend files, buffers, tape, and reports; the
//! subcommands run the generator, the recording pipeline, data servers,
//! scans and stress experiments, migrations and verification, fault
//! scenarios, and the admin verbs.
//!
//! Clients are read-only by default; anything that mutates the store
//! requires `--write`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use evstore::catalog::{BackendKind, Catalog, CatalogOptions, EventId};
use evstore::codec::now_ms;
use evstore::config::{Config, Layout};
use evstore::harness::fault::FaultPlan;
use evstore::harness::generate::{Generator, GeneratorProfile};
use evstore::harness::report;
use evstore::harness::rig::{feed_generator, FeedOptions, Rig};
use evstore::harness::scenario::{run_fault_scenario, ScenarioSpec};
use evstore::harness::stress::stress_scan;
use evstore::hsm::{Hsm, HsmOptions, TapeOptions};
use evstore::server::{BalanceStrategy, DataServer, PayloadKind, ServerOptions};

#[derive(Parser)]
#[command(name = "evstore", about = "Desk-scale event store", version)]
struct Cli {
    /// Data root directory (catalog, backends, buffers, tape, reports).
    #[arg(long, global = true, default_value = "./evstore-data")]
    data_root: PathBuf,
    /// JSON config file; EVSTORE_* environment variables override keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Enable write mode (mutating commands refuse to run without it).
    #[arg(long, global = true)]
    write: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a chunk stream and its manifest into a directory.
    Gen(GenArgs),
    /// Central-data-recording pipeline commands.
    Cdr {
        #[command(subcommand)]
        cmd: CdrCmd,
    },
    /// Run one data-server process over the data root.
    Serve(ServeArgs),
    /// Read one event payload.
    Read(ReadArgs),
    /// Scan a sealed run and report timing.
    Scan(ScanArgs),
    /// Scan-scalability stress experiment; appends scalability.csv.
    Stress(StressArgs),
    /// Backend migration commands.
    Migrate {
        #[command(subcommand)]
        cmd: MigrateCmd,
    },
    /// Standalone sampled consistency verification of a migrated run.
    Verify(VerifyArgs),
    /// Run a scripted fault scenario end to end.
    Fault {
        #[command(subcommand)]
        cmd: FaultCmd,
    },
    /// Re-emit plot scripts and summarize stored reports.
    Report,
    /// Catalog admin verbs.
    Catalog {
        #[command(subcommand)]
        cmd: CatalogCmd,
    },
    /// Lease admin verbs.
    Lease {
        #[command(subcommand)]
        cmd: LeaseCmd,
    },
    /// HSM admin verbs.
    Hsm {
        #[command(subcommand)]
        cmd: HsmCmd,
    },
    /// Structural and post-compression overhead of a backend's files.
    OverheadReport(OverheadArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output directory for chunk files and manifest.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<u32>,
    #[arg(long)]
    events_per_run: Option<u64>,
}

#[derive(Subcommand)]
enum CdrCmd {
    /// Run the pipeline from a source until drained.
    Run(CdrRunArgs),
}

#[derive(Args)]
struct CdrRunArgs {
    /// "gen" for the live generator, or a directory of .cdr chunk files.
    #[arg(long, default_value = "gen")]
    source: String,
    #[arg(long, default_value_t = 4)]
    streams: u32,
    /// Drain timeout in seconds.
    #[arg(long, default_value_t = 600)]
    duration: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:4815")]
    listen: String,
}

#[derive(Args)]
struct ReadArgs {
    /// Event as run:number, e.g. 1:42.
    #[arg(long)]
    event: String,
    /// "raw" or "dst:<version>".
    #[arg(long, default_value = "raw")]
    kind: String,
    /// Write payload here instead of summarizing.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    run: u32,
    #[arg(long, default_value_t = 1)]
    clients: u32,
}

#[derive(Args)]
struct StressArgs {
    /// Comma-separated client counts, e.g. 1,2,4,8.
    #[arg(long, default_value = "1,2,4,8")]
    clients: String,
    #[arg(long, default_value_t = 2)]
    servers: u32,
    /// Label recorded in the CSV rows.
    #[arg(long, default_value = "containerA")]
    label: String,
}

#[derive(Subcommand)]
enum MigrateCmd {
    /// Migrate one run A -> B.
    Run {
        run: u32,
        #[arg(long, default_value_t = 0.05)]
        fraction: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Migrate every sealed, unswitched run.
    All {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    run: u32,
    #[arg(long, default_value_t = 0.05)]
    fraction: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum FaultCmd {
    /// Execute a plan file against a fresh pipeline run.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = 4)]
        streams: u32,
        #[arg(long, default_value_t = 4)]
        readers: u32,
    },
}

#[derive(Subcommand)]
enum CatalogCmd {
    Stats,
    Verify,
}

#[derive(Subcommand)]
enum LeaseCmd {
    List,
    Reap,
}

#[derive(Subcommand)]
enum HsmCmd {
    /// Migrate up to N pending files to tape.
    Migrate {
        #[arg(long, default_value_t = 16)]
        max_files: usize,
    },
    /// Evict unpinned cached files until the target free space is reached.
    Gc {
        #[arg(long)]
        target_free: u64,
    },
    Stat,
    /// Recall a file from tape and print its disk path.
    Recall { file_id: u64 },
}

#[derive(Args)]
struct OverheadArgs {
    #[arg(long, default_value = "containerA")]
    backend: String,
}

fn load_config(cli: &Cli) -> Result<Config> {
    let cfg = match &cli.config {
        Some(path) => Config::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => {
            let mut c = Config::default();
            c.apply_env();
            c
        }
    };
    Ok(cfg)
}

fn require_write(cli: &Cli) -> Result<()> {
    if !cli.write {
        bail!("this command mutates the store; pass --write (clients are read-only by default)");
    }
    Ok(())
}

/// Catalog + HSM without pipeline or servers, for admin verbs.
fn open_store(cli: &Cli, cfg: &Config) -> Result<(Arc<Catalog>, Arc<Hsm>)> {
    let layout = Layout::new(&cli.data_root);
    layout.ensure()?;
    let catalog = Arc::new(Catalog::open(
        &layout.catalog_dir(),
        CatalogOptions::from(cfg),
    )?);
    let hsm = Hsm::open(
        catalog.clone(),
        &layout.cache_dir(),
        &layout.tape_dir(),
        HsmOptions::from(cfg),
        TapeOptions::from(cfg),
    )?;
    Ok((catalog, hsm))
}

fn parse_event(s: &str) -> Result<EventId> {
    let (run, event) = s
        .split_once(':')
        .context("event must be run:number, e.g. 1:42")?;
    Ok(EventId::new(run.parse()?, event.parse()?))
}

fn parse_kind(s: &str) -> Result<PayloadKind> {
    if s == "raw" {
        return Ok(PayloadKind::Raw);
    }
    if let Some(v) = s.strip_prefix("dst:") {
        return Ok(PayloadKind::Dst(v.to_string()));
    }
    bail!("kind must be 'raw' or 'dst:<version>'")
}

fn human_bytes(n: u64) -> String {
    const UNITS: [&str; 5] = ["B", "KiB", "MiB", "GiB", "TiB"];
    let mut v = n as f64;
    let mut u = 0;
    while v >= 1024.0 && u < UNITS.len() - 1 {
        v /= 1024.0;
        u += 1;
    }
    format!("{v:.1} {}", UNITS[u])
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Gen(args) => cmd_gen(&cfg, args),
        Command::Cdr {
            cmd: CdrCmd::Run(args),
        } => cmd_cdr_run(&cli, &cfg, args),
        Command::Serve(args) => cmd_serve(&cli, &cfg, args),
        Command::Read(args) => cmd_read(&cli, &cfg, args),
        Command::Scan(args) => cmd_scan(&cli, &cfg, args),
        Command::Stress(args) => cmd_stress(&cli, &cfg, args),
        Command::Migrate { cmd } => cmd_migrate(&cli, &cfg, cmd),
        Command::Verify(args) => cmd_verify(&cli, &cfg, args),
        Command::Fault {
            cmd:
                FaultCmd::Run {
                    plan,
                    streams,
                    readers,
                },
        } => cmd_fault(&cli, &cfg, plan, *streams, *readers),
        Command::Report => cmd_report(&cli),
        Command::Catalog { cmd } => cmd_catalog(&cli, &cfg, cmd),
        Command::Lease { cmd } => cmd_lease(&cli, &cfg, cmd),
        Command::Hsm { cmd } => cmd_hsm(&cli, &cfg, cmd),
        Command::OverheadReport(args) => cmd_overhead(&cli, &cfg, args),
    }
}

fn cmd_gen(cfg: &Config, args: &GenArgs) -> Result<()> {
    let mut profile = GeneratorProfile::from_config(cfg);
    if let Some(s) = args.seed {
        profile.seed = s;
    }
    if let Some(r) = args.runs {
        profile.runs = r;
    }
    if let Some(e) = args.events_per_run {
        profile.events_per_run = e;
    }
    std::fs::create_dir_all(&args.out)?;
    let generator = Generator::new(profile.clone());
    let mut chunks = 0u64;
    let mut bytes = 0u64;
    for run in profile.run_numbers() {
        for seq in 0..generator.chunk_count(run) {
            let chunk = generator.build_chunk(run, seq).unwrap();
            let encoded = chunk.encode();
            bytes += encoded.len() as u64;
            chunks += 1;
            std::fs::write(args.out.join(format!("r{run:06}-s{seq:06}.cdr")), encoded)?;
        }
    }
    let manifest = generator.manifest();
    manifest.save_csv(&args.out.join("manifest.csv"))?;
    println!(
        "generated {} events in {chunks} chunks ({}), manifest.csv written",
        manifest.len(),
        human_bytes(bytes)
    );
    Ok(())
}

fn cmd_cdr_run(cli: &Cli, cfg: &Config, args: &CdrRunArgs) -> Result<()> {
    require_write(cli)?;
    let rig = Arc::new(Rig::launch(&cli.data_root, cfg.clone(), 1)?);
    let started = std::time::Instant::now();
    let feed = if args.source == "gen" {
        let generator = Generator::new(GeneratorProfile::from_config(cfg));
        feed_generator(
            &rig,
            &generator,
            &FeedOptions {
                streams: args.streams,
                ..Default::default()
            },
        )
    } else {
        feed_directory(&rig, Path::new(&args.source), args.streams)?
    };
    let drained = rig
        .pipeline
        .wait_drained(Duration::from_secs(args.duration));
    let metrics = rig.pipeline.metrics();
    let samples = metrics.snapshot();
    report::write_reports(&rig.layout.out_dir(), &samples, &[])?;

    let hsm = rig.hsm.stats();
    println!("pipeline report");
    println!("  bytes_in:        {}", human_bytes(feed.bytes_sent));
    println!("  chunks:          {}", feed.chunks_sent);
    println!("  send_errors:     {}", feed.send_errors);
    println!("  drained:         {drained}");
    println!("  bytes_to_tape:   {}", human_bytes(hsm.raw_bytes_on_tape));
    println!("  stored_on_tape:  {}", human_bytes(hsm.stored_bytes_on_tape));
    println!("  compression:     {:.3}", hsm.compression_ratio_observed);
    println!(
        "  peak_buffer:     {}",
        human_bytes(metrics.peak_buffer_bytes())
    );
    println!("  elapsed:         {:.1}s", started.elapsed().as_secs_f64());
    println!(
        "  series:          {}",
        rig.layout.out_dir().join("pipeline.csv").display()
    );
    rig.shutdown();
    if !drained {
        bail!("pipeline did not drain within {}s", args.duration);
    }
    Ok(())
}

fn feed_directory(
    rig: &Arc<Rig>,
    dir: &Path,
    streams: u32,
) -> Result<evstore::harness::rig::FeedReport> {
    use evstore::cdr::chunk::ChunkFile;
    use evstore::cdr::transfer::TransferSender;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cdr"))
        .collect();
    files.sort();
    let mut report = evstore::harness::rig::FeedReport::default();
    let mut senders: Vec<TransferSender> = (0..streams.max(1))
        .map(|_| TransferSender::connect(rig.receiver_addr(), rig.config.transfer_retries))
        .collect::<std::io::Result<_>>()?;
    let mut per_run: std::collections::HashMap<u32, u32> = Default::default();
    for (i, path) in files.iter().enumerate() {
        let bytes = std::fs::read(path)?;
        let chunk =
            ChunkFile::decode(&bytes).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        rig.pipeline.reserve_online(bytes.len() as u64);
        let online = rig.layout.online_dir().join(path.file_name().unwrap());
        std::fs::copy(path, &online)?;
        rig.pipeline
            .online_written(chunk.run, chunk.sequence, &online, bytes.len() as u64);
        let slot = i % senders.len();
        senders[slot]
            .send_chunk(chunk.run, chunk.sequence, &bytes)
            .map_err(|e| anyhow::anyhow!("transfer: {e}"))?;
        report.chunks_sent += 1;
        report.bytes_sent += bytes.len() as u64;
        *per_run.entry(chunk.run).or_insert(0) += 1;
    }
    for (run, count) in per_run {
        rig.pipeline.end_run(run, count);
    }
    Ok(report)
}

fn cmd_serve(cli: &Cli, cfg: &Config, args: &ServeArgs) -> Result<()> {
    let (_catalog, hsm) = open_store(cli, cfg)?;
    let handle = DataServer::spawn("srv0", &args.listen, hsm, ServerOptions::from(cfg))?;
    println!("serving on {} (ctrl-c to stop)", handle.endpoint);
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

fn cmd_read(cli: &Cli, cfg: &Config, args: &ReadArgs) -> Result<()> {
    let id = parse_event(&args.event)?;
    let kind = parse_kind(&args.kind)?;
    let (catalog, hsm) = open_store(cli, cfg)?;
    let header = catalog.get_header(id).map_err(|e| anyhow::anyhow!("{e}"))?;
    let locator = match &kind {
        PayloadKind::Raw => header.raw,
        PayloadKind::Dst(v) => *header
            .dst(v)
            .with_context(|| format!("version '{v}' not bound for {id}"))?,
    };
    let path = hsm.ensure_online(locator.file_id)?;
    let bytes =
        evstore::backend::read_locator(&path, &locator).map_err(|e| anyhow::anyhow!("{e}"))?;
    match &args.out {
        Some(out) => {
            std::fs::write(out, &bytes)?;
            println!(
                "wrote {} to {}",
                human_bytes(bytes.len() as u64),
                out.display()
            );
        }
        None => println!(
            "event {id} {}: {} at file {} offset {} crc32={:08x}",
            args.kind,
            human_bytes(bytes.len() as u64),
            locator.file_id,
            locator.offset,
            locator.checksum
        ),
    }
    Ok(())
}

fn cmd_scan(cli: &Cli, cfg: &Config, args: &ScanArgs) -> Result<()> {
    let rig = Arc::new(Rig::launch(&cli.data_root, cfg.clone(), 2)?);
    let rows = stress_scan(
        &rig,
        "scan",
        BalanceStrategy::ClientLibrary,
        &[args.clients],
        &[args.run],
    );
    for r in &rows {
        println!(
            "run {} x{} clients: {} events, {} in {:.2}s ({}/s aggregate), {} failures",
            args.run,
            r.clients,
            r.events_read,
            human_bytes(r.bytes_read),
            r.elapsed_max_s,
            human_bytes(r.aggregate_bps as u64),
            r.failures
        );
    }
    rig.shutdown();
    Ok(())
}

fn cmd_stress(cli: &Cli, cfg: &Config, args: &StressArgs) -> Result<()> {
    let counts: Vec<u32> = args
        .clients
        .split(',')
        .map(|s| s.trim().parse().context("bad client count"))
        .collect::<Result<_>>()?;
    let rig = Arc::new(Rig::launch(
        &cli.data_root,
        cfg.clone(),
        args.servers as usize,
    )?);
    let mut runs = rig.catalog.runs();
    runs.retain(|r| rig.catalog.run_sealed(*r));
    if runs.is_empty() {
        bail!("no sealed runs to scan; run `evstore cdr run` first");
    }
    let rows = stress_scan(
        &rig,
        &args.label,
        BalanceStrategy::ClientLibrary,
        &counts,
        &runs,
    );
    let csv = report::scalability_csv(&rows);
    let out = rig.layout.out_dir().join("scalability.csv");
    let existing = std::fs::read_to_string(&out).unwrap_or_default();
    if existing.is_empty() {
        std::fs::write(&out, csv)?;
    } else {
        let body = csv.split_once('\n').map(|x| x.1).unwrap_or("");
        std::fs::write(&out, format!("{existing}{body}"))?;
    }
    for r in &rows {
        println!(
            "{} x{:3}: aggregate {}/s, mean {:.2}s, p95 {:.2}s, failures {}",
            r.label,
            r.clients,
            human_bytes(r.aggregate_bps as u64),
            r.per_client_mean_s,
            r.per_client_p95_s,
            r.failures
        );
    }
    println!("rows appended to {}", out.display());
    rig.shutdown();
    Ok(())
}

fn cmd_migrate(cli: &Cli, cfg: &Config, cmd: &MigrateCmd) -> Result<()> {
    require_write(cli)?;
    let rig = Arc::new(Rig::launch(&cli.data_root, cfg.clone(), 0)?);
    match cmd {
        MigrateCmd::Run { run, fraction, seed } => {
            let report = rig
                .migrator
                .migrate_run(*run, *fraction, *seed)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            print!("{}", report.render());
        }
        MigrateCmd::All { seed } => {
            let reports = rig
                .migrator
                .migrate_all(*seed)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            for r in reports {
                print!("{}", r.render());
            }
        }
    }
    rig.shutdown();
    Ok(())
}

fn cmd_verify(cli: &Cli, cfg: &Config, args: &VerifyArgs) -> Result<()> {
    let rig = Arc::new(Rig::launch(&cli.data_root, cfg.clone(), 0)?);
    let report = rig
        .migrator
        .verify_sample(args.run, args.fraction, args.seed)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    print!("{}", report.render());
    let passed = report.passed();
    let mismatches = report.mismatches.len();
    rig.shutdown();
    if passed {
        Ok(())
    } else {
        bail!("{mismatches} mismatches")
    }
}

fn cmd_fault(cli: &Cli, cfg: &Config, plan_path: &Path, streams: u32, readers: u32) -> Result<()> {
    require_write(cli)?;
    let plan = FaultPlan::load(plan_path)?;
    let rig = Arc::new(Rig::launch(&cli.data_root, cfg.clone(), 2)?);
    let generator = Generator::new(GeneratorProfile::from_config(cfg));
    let spec = ScenarioSpec {
        streams,
        reader_threads: readers,
        migrate_runs: plan.migrator_crashes().iter().map(|(r, _)| *r).collect(),
        ..Default::default()
    };
    let outcome = run_fault_scenario(&rig, &generator, &plan, &spec);
    println!("scenario outcome");
    println!("  events_expected:          {}", outcome.events_expected);
    println!("  events_verified:          {}", outcome.events_verified);
    println!("  lost:                     {}", outcome.lost.len());
    println!("  corrupted:                {}", outcome.corrupted.len());
    println!(
        "  late_deletion_violations: {} (over {} checks)",
        outcome.late_deletion_violations, outcome.retention_checks
    );
    println!(
        "  reader_reads/failures:    {}/{}",
        outcome.reader_reads, outcome.reader_failures
    );
    println!("  clients_killed:           {}", outcome.clients_killed);
    println!("  drained:                  {}", outcome.pipeline_drained);
    let samples = rig.pipeline.metrics().snapshot();
    report::write_reports(&rig.layout.out_dir(), &samples, &[])?;
    rig.shutdown();
    if outcome.clean() {
        println!("all invariants held");
        Ok(())
    } else {
        bail!("invariant violated")
    }
}

fn cmd_report(cli: &Cli) -> Result<()> {
    let layout = Layout::new(&cli.data_root);
    std::fs::create_dir_all(layout.out_dir())?;
    std::fs::write(layout.out_dir().join("plots.gp"), report::plot_script())?;
    for name in ["pipeline.csv", "scalability.csv", "plots.gp"] {
        let p = layout.out_dir().join(name);
        println!(
            "{}: {}",
            p.display(),
            if p.exists() { "present" } else { "absent" }
        );
    }
    Ok(())
}

fn cmd_catalog(cli: &Cli, cfg: &Config, cmd: &CatalogCmd) -> Result<()> {
    let (catalog, _hsm) = open_store(cli, cfg)?;
    match cmd {
        CatalogCmd::Stats => {
            let s = catalog.stats();
            println!("header_count:   {}", s.header_count);
            println!("header_bytes:   {}", human_bytes(s.header_bytes));
            println!("payload_bytes:  {}", human_bytes(s.payload_bytes));
            println!("metadata_ratio: {:.5}", s.metadata_ratio);
            println!("runs:           {:?}", catalog.runs());
            println!("databases:      {}", catalog.list_dbs().len());
            println!("files:          {}", catalog.list_files().len());
        }
        CatalogCmd::Verify => {
            let issues = catalog.verify();
            if issues.is_empty() {
                println!("catalog consistent");
            } else {
                for i in &issues {
                    println!("ISSUE: {i}");
                }
                bail!("{} consistency issues", issues.len());
            }
        }
    }
    Ok(())
}

fn cmd_lease(cli: &Cli, cfg: &Config, cmd: &LeaseCmd) -> Result<()> {
    let (catalog, _hsm) = open_store(cli, cfg)?;
    match cmd {
        LeaseCmd::List => {
            let leases = catalog.leases().list();
            if leases.is_empty() {
                println!("no live leases");
            }
            for l in leases {
                println!(
                    "lease {} {:?} on '{}' held by {} expires {}",
                    l.lease_id, l.mode, l.resource, l.holder, l.expires_at
                );
            }
        }
        LeaseCmd::Reap => {
            require_write(cli)?;
            let reaped = catalog.leases().reap_expired(now_ms());
            println!("reaped {} leases: {:?}", reaped.len(), reaped);
        }
    }
    Ok(())
}

fn cmd_hsm(cli: &Cli, cfg: &Config, cmd: &HsmCmd) -> Result<()> {
    let (_catalog, hsm) = open_store(cli, cfg)?;
    match cmd {
        HsmCmd::Migrate { max_files } => {
            require_write(cli)?;
            let (migrated, failures) = hsm.migrate_pending(*max_files);
            println!("migrated {} files: {:?}", migrated.len(), migrated);
            for f in failures {
                println!("failed: {f}");
            }
        }
        HsmCmd::Gc { target_free } => {
            require_write(cli)?;
            let freed = hsm.cache_gc(*target_free);
            println!("freed {}", human_bytes(freed));
        }
        HsmCmd::Stat => {
            let s = hsm.stats();
            println!("files:            {}", s.files);
            println!(
                "states:           disk-only {}, migrating {}, tape+cached {}, tape-only {}, recalling {}",
                s.disk_only, s.migrating, s.on_tape_cached, s.tape_only, s.recalling
            );
            println!(
                "cache:            {} / {}",
                human_bytes(s.cache_used),
                human_bytes(s.cache_capacity)
            );
            println!("tape_backlog:     {}", human_bytes(s.tape_backlog_bytes));
            println!("raw_on_tape:      {}", human_bytes(s.raw_bytes_on_tape));
            println!("stored_on_tape:   {}", human_bytes(s.stored_bytes_on_tape));
            println!("compression:      {:.3}", s.compression_ratio_observed);
            println!("overhead_on_tape: {:.4}", s.overhead_on_tape);
            println!("recalls:          {}", s.recalls_performed);
        }
        HsmCmd::Recall { file_id } => {
            require_write(cli)?;
            let path = hsm.ensure_online(*file_id)?;
            println!("file {} online at {}", file_id, path.display());
        }
    }
    Ok(())
}

fn cmd_overhead(cli: &Cli, cfg: &Config, args: &OverheadArgs) -> Result<()> {
    let backend = match args.backend.as_str() {
        "containerA" => BackendKind::ContainerA,
        "flatB" => BackendKind::FlatB,
        other => bail!("unknown backend '{other}' (containerA | flatB)"),
    };
    let rig = Arc::new(Rig::launch(&cli.data_root, cfg.clone(), 0)?);
    let report = rig
        .migrator
        .overhead_report(backend)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    println!("backend:                   {backend}");
    println!(
        "payload_bytes:             {}",
        human_bytes(report.payload_bytes)
    );
    println!(
        "file_bytes:                {}",
        human_bytes(report.file_bytes)
    );
    println!(
        "structural_overhead:       {:.4}",
        report.structural_overhead
    );
    println!(
        "post_compression_overhead: {:.4}",
        report.post_compression_overhead
    );
    rig.shutdown();
    Ok(())
}

//! `memchan`: simulate memory-channel experiments and estimate the interaction.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use memchan::cartan::gauge_distance;
use memchan::config::{Preset, RunConfig};
use memchan::demo::{run_delay_demo, DelayDemo, ModeSummary};
use memchan::kv::{natural_value, reals, rows, KeyValues, Value};
use memchan::recovery::{estimate_from_observations, estimate_interaction, Branch};
use memchan::report::recovery_report;
use memchan::simulator::{exact_observations, exact_statistics, run_experiment, Dataset, Mode};
use memchan::{Error, ErrorCategory};

#[derive(Parser, Debug)]
#[command(
    name = "memchan",
    version,
    about = "Qubit channels with a hidden qubit memory: simulation and interaction estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Key-value config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Overrides `run.seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Shipped interaction preset; replaces the config's `preset` key.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment and write the dataset.
    Simulate,
    /// Estimate the interaction from a dataset.
    Estimate {
        /// Dataset file (default `OUT/dataset.txt`).
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
    },
    /// Estimate from exact infinite-data statistics.
    Oracle,
    /// Compare ordered and randomized probing of the delay (SWAP) channel.
    DemoDelay {
        #[arg(long, value_name = "N")]
        n_steps: Option<u64>,
        #[arg(long, value_name = "N")]
        block_size: Option<u64>,
    },
    /// Estimation error against run length over many seeds.
    Sweep,
}

#[derive(Debug)]
struct Failure {
    code: String,
    exit: u8,
    message: String,
}

impl Failure {
    fn new(category: ErrorCategory, code: impl Into<String>, message: impl Into<String>) -> Self {
        let exit = match category {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Pipeline => 4,
        };
        Self {
            code: code.into(),
            exit,
            message: message.into(),
        }
    }

    fn io(category: ErrorCategory, path: &Path, err: std::io::Error) -> Self {
        let head = match category {
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::Pipeline => "pipeline",
        };
        Self::new(category, format!("{head}.io"), format!("{}: {err}", path.display()))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::new(e.category(), e.code(), e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn read_kv(path: &Path) -> CliResult<KeyValues> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(ErrorCategory::Config, path, e))?;
    KeyValues::parse(&text).map_err(|e| Failure::new(ErrorCategory::Config, "config.invalid", format!("{}: {e}", path.display())))
}

/// Config file (if any) with `--preset` and `--seed` applied.
fn load_kv(cli: &Cli) -> CliResult<KeyValues> {
    let mut kv = match &cli.config {
        Some(path) => read_kv(path)?,
        None => KeyValues::new(),
    };
    if let Some(name) = &cli.preset {
        kv.set("preset", Preset::parse(name)?.name());
    }
    if let Some(seed) = cli.seed {
        kv.set("run.seed", natural_value(seed));
    }
    Ok(kv)
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    if cli.config.is_none() && cli.preset.is_none() {
        return Err(Failure::new(ErrorCategory::Config, "config.missing", "give --config PATH or --preset NAME"));
    }
    Ok(RunConfig::from_kv(load_kv(cli)?)?)
}

struct OutDir(PathBuf);

impl OutDir {
    fn create(path: &Path) -> CliResult<Self> {
        fs::create_dir_all(path).map_err(|e| Failure::io(ErrorCategory::Data, path, e))?;
        Ok(Self(path.to_path_buf()))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| Failure::io(ErrorCategory::Data, &path, e))?;
        Ok(path)
    }
}

struct Manifest {
    kv: KeyValues,
}

impl Manifest {
    fn start(command: &str, cli: &Cli) -> Self {
        let mut kv = KeyValues::new();
        kv.set("manifest.command", command);
        kv.set("manifest.tool_version", env!("CARGO_PKG_VERSION"));
        match (&cli.config, &cli.preset) {
            (Some(path), _) => kv.set("manifest.config", path.display().to_string()),
            (None, Some(p)) => kv.set("manifest.config", format!("preset:{p}")),
            (None, None) => kv.set("manifest.config", "defaults"),
        }
        if let (Some(_), Some(p)) = (&cli.config, &cli.preset) {
            kv.set("manifest.preset_override", p.as_str());
        }
        kv.set("manifest.started", natural_value(timestamp()));
        Self { kv }
    }

    fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.kv.set(key, value);
    }

    fn finish(mut self, out: &OutDir, command: &str) -> CliResult<PathBuf> {
        self.kv.set("manifest.finished", natural_value(timestamp()));
        out.write(&format!("manifest-{command}.txt"), &self.kv.render())
    }
}

fn cmd_simulate(cli: &Cli) -> CliResult<()> {
    let mut manifest = Manifest::start("simulate", cli);
    let cfg = load_config(cli)?;
    let dataset = run_experiment(&cfg.experiment)?;
    let out = OutDir::create(&cli.out)?;
    let path = out.path("dataset.txt");
    let file = fs::File::create(&path).map_err(|e| Failure::io(ErrorCategory::Data, &path, e))?;
    let mut w = BufWriter::new(file);
    dataset
        .write_to(&mut w)
        .and_then(|()| w.flush())
        .map_err(|e| Failure::io(ErrorCategory::Data, &path, e))?;
    let config_path = out.write("config.txt", &cfg.render())?;
    if let Some(traj) = &dataset.memory_trajectory {
        let text: String = traj
            .iter()
            .map(|s| format!("{:?},{:?},{:?}\n", s.bloch()[0], s.bloch()[1], s.bloch()[2]))
            .collect();
        let p = out.write("memory-trajectory.txt", &text)?;
        manifest.set("manifest.memory_trajectory", p.display().to_string());
    }
    manifest.set("manifest.effective_config", config_path.display().to_string());
    manifest.set("manifest.dataset", path.display().to_string());
    manifest.set("manifest.seed", natural_value(cfg.experiment.seed));
    manifest.set("dataset.fingerprint", dataset.fingerprint.as_str());
    manifest.set("dataset.records", natural_value(dataset.len() as u64));
    manifest.finish(&out, "simulate")?;
    println!("wrote {} records to {}", dataset.len(), path.display());
    Ok(())
}

fn cmd_estimate(cli: &Cli, dataset_path: Option<&Path>) -> CliResult<()> {
    let mut manifest = Manifest::start("estimate", cli);
    let cfg = load_config(cli)?;
    if cfg.experiment.mode != Mode::Random {
        return Err(Failure::new(
            ErrorCategory::Config,
            "config.invalid",
            "run.mode: estimation needs randomized-setting data",
        ));
    }
    let path = dataset_path.map_or_else(|| cli.out.join("dataset.txt"), Path::to_path_buf);
    let file = fs::File::open(&path).map_err(|e| Failure::io(ErrorCategory::Data, &path, e))?;
    let dataset = Dataset::read_from(BufReader::new(file))?;
    let expected = cfg.experiment.fingerprint();
    if dataset.fingerprint != expected {
        return Err(Failure::new(
            ErrorCategory::Data,
            "data.fingerprint_mismatch",
            format!("{} has fingerprint {}, config expects {expected}", path.display(), dataset.fingerprint),
        ));
    }
    let e = &cfg.experiment.ensemble;
    let p = &cfg.experiment.povm;
    let result = estimate_interaction(&dataset, e, p, &cfg.thresholds_for(Some(dataset.len() as u64)))?;
    let truth = cfg.experiment.interaction.unitary();
    let report = recovery_report(&result, &dataset.fingerprint, Some(&truth));
    let out = OutDir::create(&cli.out)?;
    let report_path = out.write("report.txt", &report.render())?;
    manifest.set("manifest.dataset", path.display().to_string());
    manifest.set("manifest.report", report_path.display().to_string());
    manifest.set("manifest.seed", natural_value(cfg.experiment.seed));
    manifest.set("dataset.fingerprint", dataset.fingerprint.as_str());
    manifest.finish(&out, "estimate")?;
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &KeyValues) {
    for key in [
        "branch",
        "generic.alpha",
        "generic.alpha_z_sign",
        "truth.gauge_distance",
        "controlled.observed_unitary",
        "diagnostics.unitarity_score",
    ] {
        if let Some(v) = report.get(key) {
            println!("{key} = {v}");
        }
    }
}

fn cmd_oracle(cli: &Cli) -> CliResult<()> {
    let mut manifest = Manifest::start("oracle", cli);
    let cfg = load_config(cli)?;
    let x = &cfg.experiment;
    let u = x.interaction.unitary();
    let stats = exact_statistics(&u, &x.initial_memory, &x.ensemble, &x.povm, cfg.oracle_horizon);
    let obs = exact_observations(&u, &x.initial_memory, &x.ensemble, &x.povm, cfg.oracle_horizon);
    let result = estimate_from_observations(&obs, &x.ensemble, &x.povm, &cfg.thresholds_for(None))?;
    let fingerprint = x.fingerprint();
    let report = recovery_report(&result, &fingerprint, Some(&u));

    let mut exact = KeyValues::new();
    exact.set("report.schema", "memchan-exact v1");
    exact.set("dataset.fingerprint", fingerprint.as_str());
    exact.set("exact.xi_bar", reals(stats.xi_bar.bloch().iter()));
    exact.set("exact.probs", rows(&stats.probs));
    exact.set("exact.initial_state_dependent", stats.initial_state_dependent);

    let out = OutDir::create(&cli.out)?;
    let report_path = out.write("report.txt", &report.render())?;
    let exact_path = out.write("exact.txt", &exact.render())?;
    manifest.set("manifest.report", report_path.display().to_string());
    manifest.set("manifest.exact", exact_path.display().to_string());
    manifest.set("dataset.fingerprint", fingerprint.as_str());
    manifest.finish(&out, "oracle")?;
    print_summary(&report);
    Ok(())
}

fn cmd_demo_delay(cli: &Cli, n_steps: Option<u64>, block_size: Option<u64>) -> CliResult<()> {
    let mut manifest = Manifest::start("demo-delay", cli);
    let kv = load_kv(cli)?;
    let n = n_steps.map_or_else(|| kv.get_u64("run.n_steps").map(|v| v.unwrap_or(100_000)), Ok)?;
    let seed = kv.get_u64("run.seed")?.unwrap_or(0);
    let block = block_size.map_or_else(|| kv.get_u64("run.block_size").map(|v| v.unwrap_or(100)), Ok)?;
    let demo = run_delay_demo(n, seed, block)?;
    let out = OutDir::create(&cli.out)?;
    let path = out.write("demo-delay.txt", &demo.report().render())?;
    manifest.set("manifest.report", path.display().to_string());
    manifest.set("manifest.seed", natural_value(seed));
    manifest.finish(&out, "demo-delay")?;
    print_demo(&demo);
    Ok(())
}

fn print_demo(demo: &DelayDemo) {
    println!("delay channel, n = {}, seed = {}, block size = {}", demo.n_steps, demo.seed, demo.block_size);
    println!("{:<22} {:>14} {:>14}", "", "random", "ordered");
    let row = |name: &str, f: &dyn Fn(&ModeSummary) -> String| {
        println!("{name:<22} {:>14} {:>14}", f(&demo.random), f(&demo.ordered));
    };
    row("steps used", &|m| m.steps_used.to_string());
    row("||T||", &|m| format!("{:.4}", m.linear_norm));
    row("unitarity score", &|m| format!("{:.4}", m.unitarity_score));
    row("|t|", &|m| format!("{:.4}", m.channel.translation.norm()));
    row("||R - I||", &|m| format!("{:.4}", m.identity_deviation));
    for (i, name) in ["T row 1", "T row 2", "T row 3"].iter().enumerate() {
        row(name, &|m| {
            let r = m.channel.linear.row(i);
            format!("{:+.2} {:+.2} {:+.2}", r[0], r[1], r[2])
        });
    }
    println!(
        "random: {}",
        if demo.random_is_maximal_noise() {
            "maximal noise"
        } else {
            "not maximal noise"
        }
    );
    println!("ordered: {}", if demo.ordered_is_noiseless() { "noiseless" } else { "noisy" });
    println!("shift by one (bound {:.4}):", demo.shift.bound);
    for (x, (tv, pairs)) in demo.shift.tv.iter().zip(&demo.shift.pairs).enumerate() {
        println!("  setting {x}: tv = {tv:.4} over {pairs} pairs");
    }
}

struct SweepRow {
    n_steps: u64,
    seed: u64,
    status: String,
    branch: &'static str,
    gauge_distance: Option<f64>,
    unitarity_score: Option<f64>,
}

fn sweep_job(base: &KeyValues, n_steps: u64, seed: u64, out: &OutDir) -> CliResult<SweepRow> {
    let mut kv = base.clone();
    kv.set("run.n_steps", natural_value(n_steps));
    kv.set("run.seed", natural_value(seed));
    if kv.get_str("preset")? == Some(Preset::RandomRegular.name()) && !base.contains("interaction.random_seed") {
        kv.set("interaction.random_seed", natural_value(seed));
    }
    let cfg = RunConfig::from_kv(kv)?;
    let x = &cfg.experiment;
    let dataset = run_experiment(x)?;
    let truth = x.interaction.unitary();
    let mut row = SweepRow {
        n_steps,
        seed,
        status: "ok".into(),
        branch: "none",
        gauge_distance: None,
        unitarity_score: None,
    };
    match estimate_interaction(&dataset, &x.ensemble, &x.povm, &cfg.thresholds_for(Some(n_steps))) {
        Ok(result) => {
            row.unitarity_score = Some(result.diagnostics.unitarity_score);
            row.branch = match &result.branch {
                Branch::Generic(g) => {
                    row.gauge_distance = Some(gauge_distance(&g.params.assemble(), &truth));
                    "generic"
                }
                Branch::Controlled(_) => "controlled",
            };
            let report = recovery_report(&result, &dataset.fingerprint, Some(&truth));
            out.write(&format!("report-n{n_steps}-s{seed}.txt"), &report.render())?;
        }
        Err(e) => row.status = e.code(),
    }
    Ok(row)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

fn optional(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

fn cmd_sweep(cli: &Cli) -> CliResult<()> {
    let mut manifest = Manifest::start("sweep", cli);
    let cfg = load_config(cli)?;
    if cfg.experiment.mode != Mode::Random {
        return Err(Failure::new(
            ErrorCategory::Config,
            "config.invalid",
            "run.mode: the sweep needs randomized-setting data",
        ));
    }
    let base = cfg.source().clone();
    let first_seed = cfg.experiment.seed;
    let out = OutDir::create(&cli.out)?;
    let jobs_dir = OutDir::create(&out.path("sweep"))?;
    let jobs: Vec<(u64, u64)> = cfg
        .sweep_n_steps
        .iter()
        .flat_map(|&n| (0..cfg.sweep_seeds).map(move |i| (n, first_seed + i)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(n, s)| sweep_job(&base, n, s, &jobs_dir))
        .collect::<CliResult<Vec<_>>>()?;

    let mut csv = String::from("n_steps,seed,status,branch,gauge_distance,unitarity_score\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n_steps,
            r.seed,
            r.status,
            r.branch,
            optional(r.gauge_distance),
            optional(r.unitarity_score)
        ));
    }
    let csv_path = out.write("sweep.csv", &csv)?;

    let mut summary = KeyValues::new();
    summary.set("report.schema", "memchan-sweep v1");
    let mut medians = Vec::new();
    println!("{:>10} {:>14} {:>12}", "n_steps", "median dist", "<= 0.05");
    for &n in &cfg.sweep_n_steps {
        let mut d: Vec<f64> = rows
            .iter()
            .filter(|r| r.n_steps == n)
            .map(|r| r.gauge_distance.unwrap_or(f64::INFINITY))
            .collect();
        let within = d.iter().filter(|&&x| x <= 0.05).count() as f64 / d.len() as f64;
        let m = median(&mut d);
        medians.push(m);
        summary.set(
            &format!("sweep.n{n}.median_gauge_distance"),
            if m.is_finite() { m.into() } else { Value::from("inf") },
        );
        summary.set(&format!("sweep.n{n}.fraction_within_0_05"), within);
        println!("{n:>10} {m:>14.5} {within:>12.2}");
    }
    let ratios: Vec<f64> = medians.windows(2).map(|w| w[1] / w[0]).filter(|r| r.is_finite()).collect();
    if ratios.len() + 1 == medians.len() {
        summary.set("sweep.median_ratios", reals(&ratios));
        println!("median ratios between consecutive run lengths: {ratios:.3?}");
    }
    let summary_path = out.write("sweep-summary.txt", &summary.render())?;
    manifest.set("manifest.csv", csv_path.display().to_string());
    manifest.set("manifest.report", summary_path.display().to_string());
    manifest.set("manifest.seed", natural_value(first_seed));
    manifest.finish(&out, "sweep")?;
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate => cmd_simulate(cli),
        Command::Estimate { dataset } => cmd_estimate(cli, dataset.as_deref()),
        Command::Oracle => cmd_oracle(cli),
        Command::DemoDelay { n_steps, block_size } => cmd_demo_delay(cli, *n_steps, *block_size),
        Command::Sweep => cmd_sweep(cli),
    }
}

fn fail(f: &Failure) -> ExitCode {
    let message = f.message.replace('\n', " ");
    eprintln!("error[{}]: {message}", f.code);
    ExitCode::from(f.exit)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                let _ = e.print();
                return ExitCode::from(if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                    2
                } else {
                    0
                });
            }
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            return fail(&Failure::new(ErrorCategory::Config, "config.usage", first));
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(&f),
    }
}

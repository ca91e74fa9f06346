//! `shadowsmith` command-line tool.
//!
//! Exit status: 0 on success, 1 on I/O or runtime failure, 2 on invalid
//! configuration.

mod settings;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shadowsmith::augment::{augment_dataset, AugmentConfig, Method, REPORT_FILE};
use shadowsmith::dataset::{
    load_backgrounds, load_dataset, load_layout, write_layout, SizeClass, ANNOTATIONS_FILE, IMAGES_DIR,
};
use shadowsmith::dcn::verify::{run_suite, SuiteOptions};
use shadowsmith::raster::BitDepth;
use shadowsmith::rect::{RatioRange, DEFAULT_AREA_RATIO, DEFAULT_ASPECT_RATIO, DEFAULT_MAX_RETRIES};
use shadowsmith::synth::{generate_dataset, SceneConfig};
use shadowsmith::Error;

use settings::Settings;

const SEED_ENV: &str = "SHADOWSMITH_SEED";

#[derive(Parser, Debug)]
#[command(name = "shadowsmith", version, about = "Instance-level augmentation for SAR ship datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Augment every ship instance of a dataset and write the result.
    Augment(AugmentArgs),
    /// Generate a synthetic SAR ship dataset.
    Synth(SynthArgs),
    /// Print image, instance and size-class counts of a dataset.
    Inspect(InspectArgs),
    /// Run the deformable kernel verification suite.
    DcnCheck(DcnCheckArgs),
}

#[derive(Args, Debug)]
struct AugmentArgs {
    /// Dataset root holding annotations.json and images/.
    #[arg(long)]
    input: PathBuf,
    /// Destination root; must not be inside the input.
    #[arg(long)]
    output: PathBuf,
    /// cpil, re, dbi or none.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    rs_min: Option<f64>,
    #[arg(long)]
    rs_max: Option<f64>,
    #[arg(long)]
    ra_min: Option<f64>,
    #[arg(long)]
    ra_max: Option<f64>,
    /// Probability of augmenting each instance.
    #[arg(long)]
    prob: Option<f64>,
    #[arg(long)]
    copies: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_retries: Option<u32>,
    /// Directory of ship-free PNG scenes used as noise source.
    #[arg(long)]
    backgrounds: Option<PathBuf>,
    /// Emit the unmodified images before the augmented copies.
    #[arg(long)]
    include_originals: bool,
    /// key = value settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 16)]
    images: usize,
    /// Ship-free scenes written to backgrounds/.
    #[arg(long, default_value_t = 4)]
    backgrounds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    width: u32,
    #[arg(long, default_value_t = 128)]
    height: u32,
    #[arg(long, default_value_t = 1)]
    min_ships: u32,
    #[arg(long, default_value_t = 4)]
    max_ships: u32,
    #[arg(long, default_value_t = 12)]
    min_length: u32,
    #[arg(long, default_value_t = 40)]
    max_length: u32,
    #[arg(long, default_value_t = 30.0)]
    level: f64,
    #[arg(long, default_value_t = 4)]
    looks: u32,
    /// 8 or 16.
    #[arg(long, default_value_t = 8)]
    depth: u32,
    #[arg(long)]
    no_shadow: bool,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct DcnCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, default_value_t = 20)]
    grad_cases: usize,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

enum Failure {
    Config(String),
    Runtime(String),
    /// Already reported on stdout.
    Silent,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Augment(a) => cmd_augment(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::DcnCheck(a) => cmd_dcn_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Silent) => ExitCode::from(1),
    }
}

struct AugmentPlan {
    input: PathBuf,
    output: PathBuf,
    backgrounds: Option<PathBuf>,
    config: AugmentConfig,
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| config_err(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Absolute form of `p`, following symlinks for the part that exists.
fn resolve(p: &Path) -> PathBuf {
    if let Ok(c) = p.canonicalize() {
        return c;
    }
    match (p.parent(), p.file_name()) {
        (Some(parent), Some(name)) if !parent.as_os_str().is_empty() => resolve(parent).join(name),
        _ => std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf()),
    }
}

/// Merge flags, settings file, environment and defaults, then check paths.
fn plan_augment(a: AugmentArgs) -> Result<AugmentPlan, Failure> {
    let file = match &a.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let method_text = match a.method.clone() {
        Some(m) => m,
        None => file
            .get::<String>("method")?
            .ok_or_else(|| config_err("--method is required (cpil, re, dbi or none)"))?,
    };
    let method: Method = method_text.parse()?;

    let pick = |flag: Option<f64>, key: &str, default: f64| -> Result<f64, Failure> {
        Ok(flag.or(file.get(key)?).unwrap_or(default))
    };
    let area_ratio = RatioRange {
        lo: pick(a.rs_min, "rs-min", DEFAULT_AREA_RATIO.lo)?,
        hi: pick(a.rs_max, "rs-max", DEFAULT_AREA_RATIO.hi)?,
    };
    let aspect_ratio = RatioRange {
        lo: pick(a.ra_min, "ra-min", DEFAULT_ASPECT_RATIO.lo)?,
        hi: pick(a.ra_max, "ra-max", DEFAULT_ASPECT_RATIO.hi)?,
    };
    let seed = match a.seed.or(file.get("seed")?) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let config = AugmentConfig {
        method,
        area_ratio,
        aspect_ratio,
        apply_prob: pick(a.prob, "prob", 1.0)?,
        copies: a.copies.or(file.get("copies")?).unwrap_or(1),
        include_originals: a.include_originals || file.flag("include-originals")?.unwrap_or(false),
        seed,
        workers: a.workers.or(file.get("workers")?).unwrap_or(1),
        max_retries: a.max_retries.or(file.get("max-retries")?).unwrap_or(DEFAULT_MAX_RETRIES),
    };
    config.validate()?;

    let backgrounds = a.backgrounds.clone().or_else(|| file.path("backgrounds"));
    if method.needs_backgrounds() && backgrounds.is_none() {
        return Err(config_err(format!(
            "--backgrounds <dir> is required for method {method}"
        )));
    }
    if let Some(bg) = &backgrounds {
        if !bg.is_dir() {
            return Err(config_err(format!(
                "--backgrounds {} is not a directory",
                bg.display()
            )));
        }
    }
    if !a.input.is_dir() {
        return Err(Failure::Runtime(format!(
            "input {} is not a directory",
            a.input.display()
        )));
    }
    let (input, output) = (resolve(&a.input), resolve(&a.output));
    if output.starts_with(&input) {
        return Err(config_err(format!(
            "--output {} must not be inside --input {}",
            a.output.display(),
            a.input.display()
        )));
    }
    Ok(AugmentPlan {
        input,
        output,
        backgrounds,
        config,
    })
}

fn cmd_augment(a: AugmentArgs) -> CmdResult {
    let plan = plan_augment(a)?;
    let mut ds = load_dataset(&plan.input.join(ANNOTATIONS_FILE), &plan.input.join(IMAGES_DIR))?;
    if let Some(bg) = &plan.backgrounds {
        if plan.config.method.needs_backgrounds() {
            ds.background_pool = load_backgrounds(bg)?;
            if ds.background_pool.is_empty() {
                return Err(config_err(format!(
                    "--backgrounds {} contains no PNG images",
                    bg.display()
                )));
            }
        } else {
            log::info!("method {} ignores --backgrounds", plan.config.method);
        }
    }
    log::info!(
        "augmenting {} images / {} instances with {}",
        ds.images.len(),
        ds.annotations.len(),
        plan.config.method
    );
    let (out, report) = augment_dataset(&ds, &plan.config)?;
    write_layout(&out, &plan.output, false)?;
    report.write(&plan.output.join(REPORT_FILE))?;
    println!(
        "{}",
        serde_json::to_string(&report.summary).expect("summary serializes")
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let cfg = SceneConfig {
        width: a.width,
        height: a.height,
        ship_count: (a.min_ships, a.max_ships),
        ship_length: (a.min_length, a.max_length),
        background_level: a.level,
        looks: a.looks,
        shadow: !a.no_shadow,
        depth: BitDepth::from_bits(a.depth)?,
        seed: a.seed,
    };
    let ds = generate_dataset(&cfg, a.images, a.backgrounds)?;
    write_layout(&ds, &a.output, true)?;
    println!("images: {}", ds.images.len());
    println!("instances: {}", ds.annotations.len());
    println!("backgrounds: {}", ds.background_pool.len());
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> CmdResult {
    let ds = load_layout(&a.input)?;
    let mut classes: BTreeMap<&str, usize> = [("S", 0), ("M", 0), ("L", 0)].into_iter().collect();
    for ann in &ds.annotations {
        *classes.entry(SizeClass::of(&ann.bbox).label()).or_default() += 1;
    }
    println!("images: {}", ds.images.len());
    println!("instances: {}", ds.annotations.len());
    for label in ["S", "M", "L"] {
        println!("{label}: {}", classes[label]);
    }
    println!("backgrounds: {}", ds.background_pool.len());
    Ok(())
}

fn cmd_dcn_check(a: DcnCheckArgs) -> CmdResult {
    if a.cases == 0 || a.grad_cases == 0 {
        return Err(config_err("--cases and --grad-cases must be at least 1"));
    }
    let outcomes = run_suite(&SuiteOptions {
        seed: a.seed,
        cases: a.cases,
        grad_cases: a.grad_cases,
        inject_fault: a.inject_fault,
    });
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    println!("{:<6} {:<width$} {:>10} {:>10}  detail", "status", "check", "metric", "limit");
    for o in &outcomes {
        println!(
            "{:<6} {:<width$} {:>10.2e} {:>10.0e}  {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.metric,
            o.threshold,
            o.detail
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        return Err(Failure::Silent);
    }
    Ok(())
}

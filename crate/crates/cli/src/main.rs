//! `bootperc`: command-line front end for the bootstrap percolation toolkit.
//!
//! Every run embeds its resolved configuration (and the seed actually used)
//! in the output, so any result file can be regenerated from itself. Exit
//! codes: 0 success, 1 usage error, 2 precondition error, 3 resource limit.

use std::fs;
use std::io::{BufReader, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use bootperc_core::beams::{
    al_check, beams_process, decay_experiment, enumerate_beams_small, BeamsError,
};
use bootperc_core::engine::{closure, read_snapshot, write_snapshot, EngineError};
use bootperc_core::family::{
    predicted_log_lc_order, stable_set_symbolic, standard_probes_3d, FamilyError, ThresholdFamily,
    UpdateFamily,
};
use bootperc_core::growth::{
    alpha_t, decimal_to_rational, droplet_experiment, find_s_pattern,
    growth_probability_experiment, pattern_probability_exact, GrowthAxis, GrowthError,
};
use bootperc_core::sampler::{
    critical_length, percolation_probability, scaling_probe, LcSearch, ResourceLimits,
    SamplerError, SamplingMode, DEFAULT_Z,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "bootperc", version, about = "Anisotropic bootstrap percolation toolkit")]
struct Cli {
    /// Trial parallelism (defaults to the number of cores). Output is
    /// invariant under this setting.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Abort any run that would allocate a box larger than this many cells.
    /// The BOOTPERC_MAX_CELLS environment variable overrides the default.
    #[arg(long, global = true)]
    max_cells: Option<u64>,

    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Criticality class and symbolic stable set of a family.
    Classify(ClassifyArgs),
    /// Stable-direction probe table of a family.
    StableSet(StableSetArgs),
    /// Closure of a snapshot under a family.
    Closure(ClosureArgs),
    /// Monte Carlo percolation probability on [L]^d.
    Prob(ProbArgs),
    /// Critical-length bracket at a given density.
    Lc(LcArgs),
    /// Critical-length brackets over a density grid, with predicted-order ratios.
    Scale(ScaleArgs),
    /// Conditional one-layer growth experiment.
    Grow(GrowArgs),
    /// Percolation probability with a fully seeded droplet.
    Droplet(DropletArgs),
    /// The t_s / alpha_s growth-exponent table.
    Alpha(AlphaArgs),
    /// Exact s-pattern probability, and optionally a strip scan.
    Pattern(PatternArgs),
    /// Coarse beams process on one sample, with the merge log.
    Beams(BeamsArgs),
    /// Covered-beam scan over intermediate scales.
    AlCheck(AlCheckArgs),
    /// Cluster-size decay for a subcritical two-dimensional family.
    Decay(DecayArgs),
    /// Exhaustive beam count in a window against the combinatorial bound.
    EnumBeams(EnumBeamsArgs),
}

#[derive(Args)]
struct ClassifyArgs {
    /// Family literal, e.g. "N[1,2,4]r=6".
    #[arg(long)]
    family: String,
    #[arg(long, default_value = "text")]
    format: String,
}

#[derive(Args)]
struct StableSetArgs {
    #[arg(long)]
    family: String,
    #[arg(long, default_value = "json")]
    format: String,
}

#[derive(Args)]
struct ClosureArgs {
    /// Family literal; exclusive with --rules.
    #[arg(long, conflicts_with = "rules")]
    family: Option<String>,
    /// Explicit-rule file: one rule per line, whitespace-separated vectors,
    /// each vector comma-separated integers.
    #[arg(long, requires = "dims")]
    rules: Option<PathBuf>,
    /// Dimension of the rule vectors in --rules.
    #[arg(long)]
    dims: Option<usize>,
    /// Input snapshot path ("-" for stdin).
    #[arg(long = "in")]
    input: String,
}

#[derive(Args)]
struct ProbArgs {
    #[arg(long, conflicts_with = "rules")]
    family: Option<String>,
    #[arg(long, requires = "dims")]
    rules: Option<PathBuf>,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long, alias = "L")]
    l: usize,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Use independent (non-coupled) sampling across densities.
    #[arg(long)]
    independent: bool,
    #[arg(long, default_value_t = DEFAULT_Z)]
    z: f64,
}

#[derive(Args)]
struct LcArgs {
    #[arg(long)]
    family: String,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.5)]
    target: f64,
    #[arg(long, default_value_t = 4096)]
    lmax: usize,
    /// Stop bisection once the bracket is this wide relative to its lower end.
    #[arg(long, default_value_t = 0.0)]
    rel_width: f64,
    #[arg(long)]
    independent: bool,
    #[arg(long, default_value_t = DEFAULT_Z)]
    z: f64,
}

#[derive(Args)]
struct ScaleArgs {
    #[arg(long)]
    family: String,
    /// Strictly decreasing densities, e.g. "0.25,0.2,0.15".
    #[arg(long)]
    p_list: String,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.5)]
    target: f64,
    #[arg(long, default_value_t = 4096)]
    lmax: usize,
    #[arg(long)]
    independent: bool,
}

#[derive(Args)]
struct GrowArgs {
    #[arg(long)]
    family: String,
    /// Base block extents "l,h,w".
    #[arg(long)]
    base: String,
    /// Growth axis: e1, e2 or e3.
    #[arg(long)]
    dir: String,
    #[arg(long, default_value_t = 1)]
    increment: usize,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    independent: bool,
    #[arg(long, default_value_t = DEFAULT_Z)]
    z: f64,
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct DropletArgs {
    #[arg(long)]
    family: String,
    /// Droplet extents "l,h,w", anchored at the box corner.
    #[arg(long)]
    droplet: String,
    #[arg(long, alias = "L")]
    l: usize,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    independent: bool,
    #[arg(long, default_value_t = DEFAULT_Z)]
    z: f64,
}

#[derive(Args)]
struct AlphaArgs {
    #[arg(long, default_value_t = 14)]
    max_s: u32,
    #[arg(long, default_value = "text")]
    format: String,
}

#[derive(Args)]
struct PatternArgs {
    #[arg(long)]
    s: u32,
    #[arg(long)]
    k: usize,
    /// Density as a decimal string, parsed exactly.
    #[arg(long)]
    p: String,
    /// Optional strip snapshot to scan for a pattern hit.
    #[arg(long = "in")]
    input: Option<String>,
}

#[derive(Args)]
struct BeamsArgs {
    #[arg(long)]
    family: String,
    #[arg(long, alias = "L")]
    l: usize,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Trial index of the sampled configuration.
    #[arg(long, default_value_t = 0)]
    trial: u64,
    /// Run the exhaustive STOP check after the process.
    #[arg(long)]
    verify_stop: bool,
    /// Include the full cell lists of covered beams in the output.
    #[arg(long)]
    cells: bool,
}

#[derive(Args)]
struct AlCheckArgs {
    #[arg(long)]
    family: String,
    #[arg(long, alias = "L")]
    l: usize,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    trial: u64,
    #[arg(long, default_value_t = 4.0)]
    lambda: f64,
    /// Scales "h:k,h:k,.."; dyadic scales up to L when omitted.
    #[arg(long)]
    scales: Option<String>,
}

#[derive(Args)]
struct DecayArgs {
    /// Two-dimensional subcritical family literal, e.g. "N[1,2]r=4".
    #[arg(long)]
    family2d: String,
    #[arg(long)]
    eps: f64,
    /// Window side (odd; the window is centred at the origin).
    #[arg(long, default_value_t = 201)]
    window: usize,
    /// Cluster-size grid "start:stop:step" or a comma list.
    #[arg(long, default_value = "1:10:1")]
    n: String,
    #[arg(long, default_value_t = 10000)]
    trials: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Abort when the censored fraction exceeds this cap.
    #[arg(long, default_value_t = 0.05)]
    censor_cap: f64,
    #[arg(long, default_value_t = DEFAULT_Z)]
    z: f64,
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct EnumBeamsArgs {
    #[arg(long, default_value_t = 4)]
    h_max: usize,
    #[arg(long, default_value_t = 4)]
    k_max: usize,
    /// Window "w1,w2,w3".
    #[arg(long, default_value = "8,8,8")]
    window: String,
}

// error mapping ---------------------------------------------------------------

#[derive(Debug)]
enum CliError {
    Usage(String),
    Precondition(String),
    Resource(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Precondition(_) => 2,
            CliError::Resource(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Precondition(m) | CliError::Resource(m) => m,
        }
    }
}

impl From<FamilyError> for CliError {
    fn from(e: FamilyError) -> Self {
        match e {
            FamilyError::BadLiteral { .. } => CliError::Usage(e.to_string()),
            other => CliError::Precondition(other.to_string()),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::ResourceLimit { .. } => CliError::Resource(e.to_string()),
            other => CliError::Precondition(other.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::BadSnapshot(_) | EngineError::SnapshotIo(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Precondition(other.to_string()),
        }
    }
}

impl From<GrowthError> for CliError {
    fn from(e: GrowthError) -> Self {
        match e {
            GrowthError::Sampler(inner) => inner.into(),
            GrowthError::Engine(inner) => inner.into(),
            other => CliError::Precondition(other.to_string()),
        }
    }
}

impl From<BeamsError> for CliError {
    fn from(e: BeamsError) -> Self {
        match e {
            BeamsError::Sampler(inner) => inner.into(),
            BeamsError::Engine(inner) => inner.into(),
            other => CliError::Precondition(other.to_string()),
        }
    }
}

// helpers ----------------------------------------------------------------------

fn resolve_seed(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            let nanos = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(0);
            let seed = nanos ^ (std::process::id() as u64).rotate_left(32);
            eprintln!("seed: {seed}");
            seed
        }
    }
}

fn resolve_limits(flag: Option<u64>) -> ResourceLimits {
    let from_env = std::env::var("BOOTPERC_MAX_CELLS")
        .ok()
        .and_then(|v| v.parse().ok());
    let max_cells = flag
        .or(from_env)
        .unwrap_or(ResourceLimits::default().max_cells);
    ResourceLimits { max_cells }
}

fn mode_of(independent: bool) -> SamplingMode {
    if independent {
        SamplingMode::Independent
    } else {
        SamplingMode::Coupled
    }
}

fn parse_family(literal: &str) -> Result<ThresholdFamily, CliError> {
    Ok(ThresholdFamily::parse_literal(literal)?)
}

fn parse_usize_list(s: &str, expect: usize, what: &str) -> Result<Vec<usize>, CliError> {
    let parts: Result<Vec<usize>, _> = s.split(',').map(|t| t.trim().parse()).collect();
    match parts {
        Ok(v) if v.len() == expect => Ok(v),
        _ => Err(CliError::Usage(format!(
            "expected {expect} comma-separated integers for {what}, got {s:?}"
        ))),
    }
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad {what} entry {t:?}")))
        })
        .collect()
}

/// "start:stop:step" range (inclusive) or a plain comma list.
fn parse_n_grid(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("bad n grid {s:?}"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let start: u64 = parts[0].trim().parse().map_err(|_| bad())?;
        let stop: u64 = parts[1].trim().parse().map_err(|_| bad())?;
        let step: u64 = parts[2].trim().parse().map_err(|_| bad())?;
        if step == 0 || stop < start {
            return Err(bad());
        }
        Ok((start..=stop).step_by(step as usize).collect())
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect()
    }
}

fn parse_scales(s: &str) -> Result<Vec<(u64, u64)>, CliError> {
    let bad = || CliError::Usage(format!("bad scales {s:?}; expected \"h:k,h:k,..\""));
    s.split(',')
        .map(|pair| {
            let (h, k) = pair.split_once(':').ok_or_else(bad)?;
            Ok((
                h.trim().parse().map_err(|_| bad())?,
                k.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, content)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout();
            stdout
                .write_all(content.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Usage(format!("cannot write to stdout: {e}")))
        }
    }
}

fn json_doc(command: &str, config: serde_json::Value, payload: serde_json::Value) -> String {
    let mut doc = json!({
        "version": VERSION,
        "command": command,
        "config": config,
    });
    if let (Some(doc_map), Some(payload_map)) = (doc.as_object_mut(), payload.as_object()) {
        for (k, v) in payload_map {
            doc_map.insert(k.clone(), v.clone());
        }
    }
    format!("{}\n", serde_json::to_string_pretty(&doc).expect("serializable"))
}

fn csv_header(command: &str, config: &serde_json::Value) -> String {
    format!("# bootperc v{VERSION} {command} config={config}\n")
}

fn estimate_json(e: &bootperc_core::sampler::ProbabilityEstimate) -> serde_json::Value {
    json!({
        "succ": e.successes,
        "trials": e.trials,
        "point": e.point,
        "ci": [e.ci_low, e.ci_high],
        "z": e.z,
    })
}

// command execution -------------------------------------------------------------

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        // ignore failure if a pool has already been installed
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let limits = resolve_limits(cli.max_cells);
    let out = cli.out;
    match cli.command {
        Command::Classify(args) => cmd_classify(args, &out),
        Command::StableSet(args) => cmd_stable_set(args, &out),
        Command::Closure(args) => cmd_closure(args, &out),
        Command::Prob(args) => cmd_prob(args, &out, &limits),
        Command::Lc(args) => cmd_lc(args, &out, &limits),
        Command::Scale(args) => cmd_scale(args, &out, &limits),
        Command::Grow(args) => cmd_grow(args, &out, &limits),
        Command::Droplet(args) => cmd_droplet(args, &out, &limits),
        Command::Alpha(args) => cmd_alpha(args, &out),
        Command::Pattern(args) => cmd_pattern(args, &out),
        Command::Beams(args) => cmd_beams(args, &out, &limits),
        Command::AlCheck(args) => cmd_al_check(args, &out, &limits),
        Command::Decay(args) => cmd_decay(args, &out, &limits),
        Command::EnumBeams(args) => cmd_enum_beams(args, &out),
    }
}

fn require_3d(family: &ThresholdFamily) -> Result<(u32, u32, u32), CliError> {
    let radii = family.spec().radii();
    if radii.len() != 3 {
        return Err(CliError::Precondition(format!(
            "{} is {}-dimensional; this command needs a three-dimensional family",
            family.literal(),
            radii.len()
        )));
    }
    Ok((radii[0], radii[1], radii[2]))
}

fn cmd_classify(args: ClassifyArgs, out: &Option<PathBuf>) -> Result<(), CliError> {
    let family = parse_family(&args.family)?;
    let (a, b, c) = require_3d(&family)?;
    let desc = stable_set_symbolic(a, b, c, family.r())?;
    let config = json!({"family": family.literal(), "format": args.format});
    let content = match args.format.as_str() {
        "json" => json_doc(
            "classify",
            config,
            json!({
                "class": desc.class.to_string(),
                "case": format!("{:?}", desc.case),
                "stable_set": desc.case.render(),
            }),
        ),
        _ => {
            let mut text = csv_header("classify", &config);
            let rendered = if family.r() <= c {
                // no closed form below the critical range; report what the
                // probe directions say
                if desc.case == bootperc_core::family::StableSetCase::Empty
                    && !desc.stable_probes.is_empty()
                {
                    let probes: Vec<String> =
                        desc.stable_probes.iter().map(|u| u.to_string()).collect();
                    format!("probe summary: {}", probes.join(" "))
                } else {
                    format!("{} (probe-based)", desc.case.render())
                }
            } else {
                desc.case.render().to_string()
            };
            text.push_str(&format!("{}, stable set {}\n", desc.class, rendered));
            text
        }
    };
    emit(out, &content)
}

fn cmd_stable_set(args: StableSetArgs, out: &Option<PathBuf>) -> Result<(), CliError> {
    let family = parse_family(&args.family)?;
    let (a, b, c) = require_3d(&family)?;
    let desc = stable_set_symbolic(a, b, c, family.r())?;
    let probes: Vec<serde_json::Value> = standard_probes_3d()
        .iter()
        .map(|u| {
            let stable = family.is_stable_direction(u).expect("dims match");
            json!({"direction": u.to_string(), "stable": stable})
        })
        .collect();
    let config = json!({"family": family.literal(), "format": args.format});
    let content = json_doc(
        "stable-set",
        config,
        json!({
            "class": desc.class.to_string(),
            "case": format!("{:?}", desc.case),
            "stable_set": desc.case.render(),
            "probes": probes,
        }),
    );
    emit(out, &content)
}

/// Family from either a threshold literal or an explicit-rule file.
fn resolve_update_family(
    family: &Option<String>,
    rules: &Option<PathBuf>,
    dims: Option<usize>,
) -> Result<(UpdateFamily, String), CliError> {
    match (family, rules) {
        (Some(literal), None) => {
            let f = parse_family(literal)?;
            let name = f.literal();
            Ok((f.into(), name))
        }
        (None, Some(path)) => {
            let d = dims.ok_or_else(|| CliError::Usage("--rules needs --dims".to_string()))?;
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let f = bootperc_core::family::ExplicitFamily::parse_rules_text(d, &text)?;
            let name = format!("rules:{}", path.display());
            Ok((f.into(), name))
        }
        _ => Err(CliError::Usage(
            "exactly one of --family or --rules is required".to_string(),
        )),
    }
}

fn cmd_closure(args: ClosureArgs, out: &Option<PathBuf>) -> Result<(), CliError> {
    let (family, _) = resolve_update_family(&args.family, &args.rules, args.dims)?;
    let text = if args.input == "-" {
        let mut buf = String::new();
        std::io::stdin()
            .read_to_string(&mut buf)
            .map_err(|e| CliError::Usage(format!("cannot read stdin: {e}")))?;
        buf
    } else {
        fs::read_to_string(&args.input)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.input)))?
    };
    let config = read_snapshot(BufReader::new(text.as_bytes()))?;
    let closed = closure(&family, &config)?;
    let mut buf = Vec::new();
    write_snapshot(&closed, &mut buf)?;
    emit(out, &String::from_utf8(buf).expect("snapshot is utf-8"))
}

fn cmd_prob(args: ProbArgs, out: &Option<PathBuf>, limits: &ResourceLimits) -> Result<(), CliError> {
    let (family, name) = resolve_update_family(&args.family, &args.rules, args.dims)?;
    let seed = resolve_seed(args.seed);
    let mode = mode_of(args.independent);
    let est = percolation_probability(
        &family, args.l, args.p, args.trials, seed, mode, args.z, limits,
    )?;
    let config = json!({
        "family": name, "l": args.l, "p": args.p, "trials": args.trials,
        "seed": seed, "independent": args.independent, "z": args.z,
        "max_cells": limits.max_cells,
    });
    emit(out, &json_doc("prob", config, json!({"estimate": estimate_json(&est)})))
}

fn cmd_lc(args: LcArgs, out: &Option<PathBuf>, limits: &ResourceLimits) -> Result<(), CliError> {
    let family = parse_family(&args.family)?;
    let seed = resolve_seed(args.seed);
    let mode = mode_of(args.independent);
    let search = LcSearch {
        target: args.target,
        trials: args.trials,
        l_max: args.lmax,
        rel_width: args.rel_width,
        z: args.z,
    };
    let est = critical_length(&family.clone().into(), args.p, seed, mode, &search, limits)?;
    let trace: Vec<serde_json::Value> = est
        .trace
        .iter()
        .map(|(l, e)| {
            json!({"L": l, "succ": e.successes, "trials": e.trials, "ci": [e.ci_low, e.ci_high]})
        })
        .collect();
    let config = json!({
        "family": family.literal(), "p": args.p, "trials": args.trials, "seed": seed,
        "target": args.target, "lmax": args.lmax, "rel_width": args.rel_width,
        "independent": args.independent, "z": args.z, "max_cells": limits.max_cells,
    });
    let payload = json!({
        "family": family.literal(),
        "p": args.p,
        "target": args.target,
        "bracket": [est.lower, est.upper],
        "trace": trace,
        "warnings": est.warnings,
    });
    emit(out, &json_doc("lc", config, payload))
}

fn cmd_scale(args: ScaleArgs, out: &Option<PathBuf>, limits: &ResourceLimits) -> Result<(), CliError> {
    let family = parse_family(&args.family)?;
    let (a, b, c) = require_3d(&family)?;
    let p_list = parse_f64_list(&args.p_list, "density")?;
    let seed = resolve_seed(args.seed);
    let search = LcSearch {
        target: args.target,
        trials: args.trials,
        l_max: args.lmax,
        ..LcSearch::default()
    };
    let order = predicted_log_lc_order(a, b, c, family.r())
        .map_err(|e| CliError::Precondition(e.to_string()))?;
    let rows = scaling_probe(
        &family,
        &p_list,
        seed,
        mode_of(args.independent),
        &search,
        limits,
    )?;
    let rows: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            json!({
                "p": r.p, "bracket": [r.lower, r.upper], "ratio": r.ratio,
                "warnings": r.warnings,
            })
        })
        .collect();
    let config = json!({
        "family": family.literal(), "p_list": args.p_list, "trials": args.trials,
        "seed": seed, "target": args.target, "lmax": args.lmax,
        "independent": args.independent, "max_cells": limits.max_cells,
    });
    let payload = json!({
        "predicted_order": {
            "p_exponent": order.p_exponent.to_string(),
            "log_power": order.log_power.to_string(),
            "log_level": order.log_level,
            "status": format!("{:?}", order.status),
        },
        "rows": rows,
    });
    emit(out, &json_doc("scale", config, payload))
}

fn cmd_grow(args: GrowArgs, out: &Option<PathBuf>, limits: &ResourceLimits) -> Result<(), CliError> {
    let family = parse_family(&args.family)?;
    require_3d(&family)?;
    let base = parse_usize_list(&args.base, 3, "--base")?;
    let dir = GrowthAxis::parse(&args.dir)
        .ok_or_else(|| CliError::Usage(format!("bad --dir {:?}; use e1, e2 or e3", args.dir)))?;
    let seed = resolve_seed(args.seed);
    let report = growth_probability_experiment(
        &family.clone().into(),
        (base[0], base[1], base[2]),
        dir,
        args.increment,
        args.p,
        args.trials,
        seed,
        mode_of(args.independent),
        args.z,
        limits,
    )?;
    let config = json!({
        "family": family.literal(), "base": args.base, "dir": args.dir,
        "increment": args.increment, "p": args.p, "trials": args.trials, "seed": seed,
        "independent": args.independent, "z": args.z, "max_cells": limits.max_cells,
        "conditioning": report.conditioning,
    });
    let e = &report.estimate;
    let content = match args.format.as_str() {
        "json" => json_doc(
            "grow",
            config,
            json!({
                "base": report.base_extents,
                "grown": report.grown_extents,
                "dir": report.direction.to_string(),
                "estimate": estimate_json(e),
                "conditioning": report.conditioning,
            }),
        ),
        _ => {
            let mut text = csv_header("grow", &config);
            text.push_str("l,h,w,dir,succ,trials,ci_lo,ci_hi\n");
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                report.base_extents[0],
                report.base_extents[1],
                report.base_extents[2],
                report.direction,
                e.successes,
                e.trials,
                e.ci_low,
                e.ci_high
            ));
            text
        }
    };
    emit(out, &content)
}

fn cmd_droplet(
    args: DropletArgs,
    out: &Option<PathBuf>,
    limits: &ResourceLimits,
) -> Result<(), CliError> {
    let family = parse_family(&args.family)?;
    require_3d(&family)?;
    let droplet = parse_usize_list(&args.droplet, 3, "--droplet")?;
    let seed = resolve_seed(args.seed);
    let est = droplet_experiment(
        &family.clone().into(),
        (droplet[0], droplet[1], droplet[2]),
        args.l,
        args.p,
        args.trials,
        seed,
        mode_of(args.independent),
        args.z,
        limits,
    )?;
    let config = json!({
        "family": family.literal(), "droplet": args.droplet, "l": args.l, "p": args.p,
        "trials": args.trials, "seed": seed, "independent": args.independent,
        "z": args.z, "max_cells": limits.max_cells,
    });
    emit(
        out,
        &json_doc("droplet", config, json!({"estimate": estimate_json(&est)})),
    )
}

fn cmd_alpha(args: AlphaArgs, out: &Option<PathBuf>) -> Result<(), CliError> {
    let config = json!({"max_s": args.max_s, "format": args.format});
    let mut entries = Vec::new();
    for s in 2..=args.max_s {
        entries.push(alpha_t(s)?);
    }
    let content = match args.format.as_str() {
        "json" => {
            let rows: Vec<serde_json::Value> = entries
                .iter()
                .map(|e| json!({"s": e.s, "t": e.t, "alpha": e.alpha.to_string()}))
                .collect();
            json_doc("alpha", config, json!({"rows": rows}))
        }
        _ => {
            let mut text = csv_header("alpha", &config);
            text.push_str("s t alpha\n");
            for e in &entries {
                text.push_str(&format!("{} {} {}\n", e.s, e.t, e.alpha));
            }
            text
        }
    };
    emit(out, &content)
}

fn cmd_pattern(args: PatternArgs, out: &Option<PathBuf>) -> Result<(), CliError> {
    let p = decimal_to_rational(&args.p)
        .ok_or_else(|| CliError::Usage(format!("bad decimal {:?}", args.p)))?;
    let prob = pattern_probability_exact(args.s, args.k, &p)?;
    let hit = match &args.input {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {path}: {e}")))?;
            let strip = read_snapshot(BufReader::new(text.as_bytes()))?;
            let hit = find_s_pattern(&strip, args.s)?;
            match hit {
                Some(h) => json!({"column_offsets": h.column_offsets}),
                None => serde_json::Value::Null,
            }
        }
        None => serde_json::Value::Null,
    };
    let approx = num_traits::ToPrimitive::to_f64(&prob);
    let config = json!({"s": args.s, "k": args.k, "p": args.p, "in": args.input});
    let payload = json!({
        "probability": prob.to_string(),
        "probability_float": approx,
        "hit": hit,
    });
    emit(out, &json_doc("pattern", config, payload))
}

fn sample_box_3d(
    l: usize,
    p: f64,
    seed: u64,
    trial: u64,
    limits: &ResourceLimits,
) -> Result<bootperc_core::engine::Configuration, CliError> {
    let grid = bootperc_core::engine::GridBox::cube(3, l)?;
    limits.check(&grid)?;
    let seeding = bootperc_core::sampler::BernoulliSeeding::new(p, seed, trial)?;
    Ok(bootperc_core::sampler::sample_configuration(&grid, &seeding))
}

fn beams_summary(collection: &bootperc_core::beams::BeamCollection, cells: bool) -> serde_json::Value {
    let covered: Vec<serde_json::Value> = (collection.initial_count..collection.registry.len())
        .map(|id| {
            let beam = &collection.registry[id];
            let mut v = json!({
                "id": id,
                "cross_section_size": beam.cross_section_size(),
                "height": beam.height(),
                "z_lo": beam.z_lo,
                "z_hi": beam.z_hi,
            });
            if cells {
                v.as_object_mut().unwrap().insert(
                    "cross_section".to_string(),
                    json!(beam.cross_section),
                );
            }
            v
        })
        .collect();
    let merges: Vec<serde_json::Value> = collection
        .log
        .iter()
        .map(|m| {
            json!({
                "step": m.step, "left": m.left, "right": m.right,
                "result": m.result, "path": m.path,
            })
        })
        .collect();
    json!({
        "seeds": collection.initial_count,
        "merges": merges,
        "covered_beams": covered,
        "live": collection.live,
    })
}

fn cmd_beams(args: BeamsArgs, out: &Option<PathBuf>, limits: &ResourceLimits) -> Result<(), CliError> {
    let family = parse_family(&args.family)?;
    require_3d(&family)?;
    let seed = resolve_seed(args.seed);
    let config_grid = sample_box_3d(args.l, args.p, seed, args.trial, limits)?;
    let collection = beams_process(&family, &config_grid)?;
    let stop = if args.verify_stop {
        json!(bootperc_core::beams::verify_stop(&family, &collection).is_none())
    } else {
        serde_json::Value::Null
    };
    let config = json!({
        "family": family.literal(), "l": args.l, "p": args.p, "seed": seed,
        "trial": args.trial, "verify_stop": args.verify_stop, "cells": args.cells,
        "max_cells": limits.max_cells,
    });
    let mut payload = beams_summary(&collection, args.cells);
    payload
        .as_object_mut()
        .unwrap()
        .insert("stop_verified".to_string(), stop);
    emit(out, &json_doc("beams", config, payload))
}

fn cmd_al_check(
    args: AlCheckArgs,
    out: &Option<PathBuf>,
    limits: &ResourceLimits,
) -> Result<(), CliError> {
    let family = parse_family(&args.family)?;
    require_3d(&family)?;
    let seed = resolve_seed(args.seed);
    let scales = match &args.scales {
        Some(s) => parse_scales(s)?,
        None => {
            let mut scales = Vec::new();
            let mut v = 1u64;
            while v <= args.l as u64 {
                scales.push((v, v));
                v *= 2;
            }
            scales
        }
    };
    let config_grid = sample_box_3d(args.l, args.p, seed, args.trial, limits)?;
    let collection = beams_process(&family, &config_grid)?;
    let reports = al_check(&collection, &scales, args.lambda);
    let rows: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| {
            json!({"h": r.h, "k": r.k, "lambda": r.lambda, "found": r.found, "witness": r.witness})
        })
        .collect();
    let config = json!({
        "family": family.literal(), "l": args.l, "p": args.p, "seed": seed,
        "trial": args.trial, "lambda": args.lambda, "scales": args.scales,
        "max_cells": limits.max_cells,
    });
    emit(
        out,
        &json_doc(
            "al-check",
            config,
            json!({"covered_beams": collection.covered_beams().len(), "scales": rows}),
        ),
    )
}

fn cmd_decay(args: DecayArgs, out: &Option<PathBuf>, limits: &ResourceLimits) -> Result<(), CliError> {
    let family = parse_family(&args.family2d)?;
    if args.window.is_multiple_of(2) || args.window < 3 {
        return Err(CliError::Usage(format!(
            "--window must be odd and at least 3, got {}",
            args.window
        )));
    }
    let radius = (args.window - 1) / 2;
    let grid = bootperc_core::engine::GridBox::new(
        vec![args.window, args.window],
        bootperc_core::engine::Boundary::Closed,
    )?;
    limits.check(&grid)?;
    let n_grid = parse_n_grid(&args.n)?;
    let seed = resolve_seed(args.seed);
    let table = decay_experiment(
        &family,
        args.eps,
        &n_grid,
        args.trials,
        seed,
        radius,
        args.censor_cap,
        args.z,
    )?;
    let config = json!({
        "family2d": family.literal(), "eps": args.eps, "window": args.window,
        "n": args.n, "trials": args.trials, "seed": seed,
        "censor_cap": args.censor_cap, "z": args.z, "max_cells": limits.max_cells,
    });
    let content = match args.format.as_str() {
        "json" => {
            let rows: Vec<serde_json::Value> = table
                .rows
                .iter()
                .map(|r| {
                    json!({
                        "n": r.n, "tail": r.tail, "censored_frac": r.censored_frac,
                        "ci": [r.ci_low, r.ci_high],
                    })
                })
                .collect();
            json_doc(
                "decay",
                config,
                json!({"rows": rows, "slope": table.slope, "censored_frac": table.censored_frac}),
            )
        }
        _ => {
            let mut text = csv_header("decay", &config);
            text.push_str("n,tail,censored_frac,ci_lo,ci_hi\n");
            for r in &table.rows {
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.n, r.tail, r.censored_frac, r.ci_low, r.ci_high
                ));
            }
            text.push_str(&format!(
                "# slope={} censored_frac={}\n",
                table.slope.map_or("none".to_string(), |s| s.to_string()),
                table.censored_frac
            ));
            text
        }
    };
    emit(out, &content)
}

fn cmd_enum_beams(args: EnumBeamsArgs, out: &Option<PathBuf>) -> Result<(), CliError> {
    let window = parse_usize_list(&args.window, 3, "--window")?;
    let (count, bound) = enumerate_beams_small(args.h_max, args.k_max, (window[0], window[1], window[2]))?;
    let config = json!({"h_max": args.h_max, "k_max": args.k_max, "window": args.window});
    emit(
        out,
        &json_doc(
            "enum-beams",
            config,
            json!({"count": count, "bound": bound, "within_bound": (count as f64) <= bound}),
        ),
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

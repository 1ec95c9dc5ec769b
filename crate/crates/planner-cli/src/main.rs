use std::path::PathBuf;
use std::process::ExitCode;

use a2g_planner::config::{BandName, BandSpec, ConfigFile, DeltaSpec, McsName, McsSpec};
use a2g_planner::output::{emit, prepare_out_dir};
use a2g_planner::run::run_plan;
use a2g_core::units::BITS_PER_GB;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "a2g-plan", version, about = "Descent offloading planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a planning study and write per-slot CSV plus a JSON summary.
    Plan(PlanArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BandArg {
    Microwave,
    Mmwave,
}

#[derive(Clone, Copy, ValueEnum)]
enum McsArg {
    #[value(name = "lte-a")]
    LteA,
    Shannon,
}

#[derive(Args)]
struct PlanArgs {
    /// JSON configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario 1..4 (plane antenna x station antenna: single or array).
    #[arg(long)]
    scenario: Option<u8>,
    /// Transmission window in seconds before touchdown.
    #[arg(long)]
    ts: Option<f64>,
    /// Transmit power budget in watts.
    #[arg(long)]
    pmax: Option<f64>,
    /// Per-antenna power cap in watts.
    #[arg(long)]
    pant: Option<f64>,
    /// Per-subchannel interference cap in dBm, or "inf".
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<String>,
    #[arg(long)]
    band: Option<BandArg>,
    /// Layout seed for generated terrestrial stations.
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate one slot per this many physical slots.
    #[arg(long)]
    decimation: Option<u64>,
    /// Try every subchannel count instead of the staged search.
    #[arg(long)]
    exhaustive_m: bool,
    /// Pin the subchannel count (full-bandwidth studies).
    #[arg(long)]
    fixed_m: Option<u32>,
    #[arg(long)]
    mcs: Option<McsArg>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write an SVG of cumulative volume against window length.
    #[arg(long)]
    plots: bool,
    /// Compute only the capacity ceiling, no solving.
    #[arg(long)]
    capacity_only: bool,
    /// Also write per-slot channel diagnostics to channel.json.
    #[arg(long)]
    dump_channel: bool,
}

fn merge_flags(file: ConfigFile, args: &PlanArgs) -> ConfigFile {
    let mut cfg = file;
    if let Some(s) = args.scenario {
        cfg.scenario = Some(s);
    }
    if let Some(ts) = args.ts {
        cfg.ts_s = Some(ts);
    }
    if let Some(p) = args.pmax {
        cfg.p_max_w = Some(p);
    }
    if let Some(p) = args.pant {
        cfg.p_ant_w = Some(p);
    }
    if let Some(d) = &args.delta {
        cfg.delta_dbm = Some(match d.parse::<f64>() {
            Ok(v) => DeltaSpec::Dbm(v),
            Err(_) => DeltaSpec::Word(d.clone()),
        });
    }
    if let Some(b) = args.band {
        cfg.band = Some(BandSpec::Named(match b {
            BandArg::Microwave => BandName::Microwave,
            BandArg::Mmwave => BandName::Mmwave,
        }));
    }
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
        // The layout seed follows the run seed unless the document pins one.
        match &mut cfg.layout {
            Some(a2g_planner::config::LayoutSpec::Generate { seed: s, .. }) => {
                if s.is_none() {
                    *s = Some(seed);
                }
            }
            Some(a2g_planner::config::LayoutSpec::File { .. }) => {}
            None => {
                cfg.layout = Some(a2g_planner::config::LayoutSpec::Generate {
                    seed: Some(seed),
                    count: None,
                    region: None,
                    tbs_antenna: None,
                });
            }
        }
    }
    if let Some(d) = args.decimation {
        cfg.decimation = Some(d);
    }
    if args.exhaustive_m {
        cfg.exhaustive_m = Some(true);
    }
    if let Some(m) = args.fixed_m {
        cfg.fixed_m = Some(m);
    }
    if let Some(m) = args.mcs {
        cfg.mcs = Some(McsSpec::Named(match m {
            McsArg::LteA => McsName::LteA,
            McsArg::Shannon => McsName::Shannon,
        }));
    }
    cfg
}

/// Prints a line to stdout, tolerating a closed pipe (e.g. piped into `head`).
fn say(args: std::fmt::Arguments) {
    use std::io::Write;
    let mut out = std::io::stdout();
    let _ = out.write_fmt(args);
    let _ = out.write_all(b"\n");
}

fn plan_command(args: &PlanArgs) -> ExitCode {
    let (file_cfg, base_dir) = match &args.config {
        Some(path) => match ConfigFile::from_path(path) {
            Ok(c) => (
                c,
                path.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
            ),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
        None => (ConfigFile::default(), PathBuf::from(".")),
    };
    let cfg = merge_flags(file_cfg, args);
    let (plan, warnings) = match cfg.resolve(&base_dir) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    if args.capacity_only {
        match plan.capacity_bits(plan.ts_s) {
            Some(bits) => {
                say(format_args!(
                    "V_cap = {:.0} bits = {:.3} GB ({} subchannels x {} Hz x {} s at peak efficiency)",
                    bits,
                    bits / BITS_PER_GB,
                    plan.n_sub,
                    plan.subchannel_hz,
                    plan.ts_s
                ));
                return ExitCode::SUCCESS;
            }
            None => {
                eprintln!("error: Shannon mode has no finite capacity ceiling");
                return ExitCode::from(1);
            }
        }
    }

    if let Err(e) = prepare_out_dir(&args.out) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }

    let mut log = |msg: &str| eprintln!("slot degraded: {msg}");
    let summary = match run_plan(&plan, &mut log) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };

    if args.dump_channel {
        match a2g_planner::run::dump_channels(&plan) {
            Ok(dumps) => {
                let path = args.out.join("channel.json");
                match serde_json::to_string_pretty(&dumps) {
                    Ok(text) => {
                        if let Err(e) = std::fs::write(&path, text) {
                            eprintln!("error: cannot write {}: {e}", path.display());
                            return ExitCode::from(1);
                        }
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(1);
                    }
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        }
    }

    match emit(&args.out, &plan, &summary, args.plots) {
        Ok(files) => {
            say(format_args!(
                "V_data = {:.4} GB, V_upper = {:.4} GB{} over {} slots ({} ms)",
                summary.v_data_bits / BITS_PER_GB,
                summary.v_upper_bits / BITS_PER_GB,
                summary
                    .v_cap_bits
                    .map(|b| format!(", V_cap = {:.4} GB", b / BITS_PER_GB))
                    .unwrap_or_default(),
                summary.slots,
                summary.wall_ms
            ));
            say(format_args!("wrote {}", files.csv.display()));
            say(format_args!("wrote {}", files.summary.display()));
            if let Some(p) = files.plot {
                say(format_args!("wrote {}", p.display()));
            }
            if summary.degraded_slots > 0 {
                eprintln!("{} slot(s) degraded to zero rate", summary.degraded_slots);
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Plan(args) => plan_command(args),
    }
}

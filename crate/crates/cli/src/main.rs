use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edgesplit_core::config::RunConfig;
use edgesplit_core::costmodel::RuntimeEstimate;
use edgesplit_core::data::Dataset;
use edgesplit_core::fsutil::write_atomic;
use edgesplit_core::model::{training_maccs, SplitModel};
use edgesplit_core::netsim::ChannelPreset;
use edgesplit_core::orchestrator::{
    metrics_csv, wall_time_csv, EpochMetrics, Session, SimTrainer, TrainMode, METRICS_COLUMNS,
};
use edgesplit_core::planner::{analytic_inputs, fullcloud_estimate, plan, split_estimate};
use edgesplit_core::{Error, Precision, Real, Result};

/// Environment variable naming the default output root.
const OUT_ENV: &str = "EDGESPLIT_OUT";
const LATEST_CHECKPOINT: &str = "latest.ckpt";

#[derive(Parser)]
#[command(name = "edgesplit", version, about = "Edge/cloud split training with an early exit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write metrics, events and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the latest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Analytic per-epoch runtimes for the configured split, full-cloud
    /// training, and both channel presets.
    Estimate(Common),
    /// Parameters, MACCs and uplink bits of every split position.
    Profile(Common),
    /// Choose a split position under the configured requirements.
    Plan(Common),
    /// Compare measured simulated epoch times of a finished run with the
    /// analytic estimate.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set training.epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_parser = ["hierarchical", "fullcloud", "monolithic"])]
    mode: Option<String>,
    #[arg(long)]
    split: Option<usize>,
    /// Output directory; defaults to `$EDGESPLIT_OUT/<command>` or `runs/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, PathBuf)> {
        let mut overrides = self.overrides.clone();
        if let Some(mode) = &self.mode {
            overrides.push(format!("training.mode=\"{mode}\""));
        }
        if let Some(split) = self.split {
            overrides.push(format!("split.position={split}"));
        }
        let (text, base) = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                (text, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (RunConfig::default().render()?, PathBuf::new()),
        };
        Ok((RunConfig::parse_with_overrides(&text, &overrides)?, base))
    }

    fn out_dir(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs")).join(command)
        })
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn estimate_row(label: &str, channel: &str, bandwidth: f64, position: Option<usize>, e: &RuntimeEstimate) -> String {
    format!(
        "{label},{channel},{bandwidth},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
        position.map(|p| p.to_string()).unwrap_or_default(),
        e.t_edge_fwd,
        e.t_edge_bwd,
        e.t_cloud_fwd,
        e.t_cloud_bwd,
        e.t_comm,
        e.t_total
    )
}

const ESTIMATE_HEADER: &str =
    "mode,channel,bandwidth_bps,position,t_edge_fwd_s,t_edge_bwd_s,t_cloud_fwd_s,t_cloud_bwd_s,t_comm_s,t_total_s\n";

fn cmd_estimate(common: &Common) -> Result<()> {
    let (config, base) = common.load()?;
    let tc = config.training_config()?;
    let samples = config.dataset.train_samples(&base)?;
    let hw = config.hardware.spec();
    let cost = config.hardware.cost(&tc.optimizer);
    let split = SplitModel::new(&tc.arch, tc.position, tc.compression_channels, tc.bit_width)?;
    let channels = [
        ("configured", tc.channel.bandwidth_bps),
        ("3g", ChannelPreset::ThreeG.bandwidth_bps()),
        ("4g", ChannelPreset::FourG.bandwidth_bps()),
    ];
    let mut csv = String::from(ESTIMATE_HEADER);
    let mut totals = Vec::new();
    for (name, bw) in channels {
        let h = split_estimate(&split, &hw, &cost, bw, samples);
        let f = fullcloud_estimate(&tc.arch, &hw, &cost, bw, samples);
        csv.push_str(&estimate_row("hierarchical", name, bw, Some(tc.position), &h));
        csv.push_str(&estimate_row("fullcloud", name, bw, None, &f));
        totals.push((name, h.t_total, f.t_total));
    }
    let out = common.out_dir("estimate");
    write(&out.join("estimate.csv"), &csv)?;
    println!("{} split {} | {} samples/epoch | seconds per epoch", tc.arch.name, tc.position, samples);
    println!("{:<12} {:>16} {:>16}", "channel", "hierarchical", "fullcloud");
    for (name, h, f) in &totals {
        println!("{name:<12} {h:>16.3} {f:>16.3}");
    }
    println!("{:<12} {:>16.3} {:>16.3}", "3g-4g delta", totals[1].1 - totals[2].1, totals[1].2 - totals[2].2);
    println!("wrote {}", out.join("estimate.csv").display());
    Ok(())
}

fn cmd_profile(common: &Common) -> Result<()> {
    let (config, _) = common.load()?;
    let tc = config.training_config()?;
    let arch = &tc.arch;
    let mut csv = String::from(
        "position,cut_shape,compressed_shape,edge_base_params,edge_params,edge_fwd_maccs,edge_train_maccs,cloud_params,cloud_fwd_maccs,cloud_train_maccs,comm_bits_per_sample\n",
    );
    println!(
        "{:>3} {:>12} {:>12} {:>12} {:>14} {:>12} {:>14} {:>10}",
        "pos", "cut", "sent", "edge_params", "edge_train_maccs", "cloud_params", "cloud_train_maccs", "bits"
    );
    let dims = |s: [usize; 3]| format!("{}x{}x{}", s[0], s[1], s[2]);
    for p in arch.positions() {
        let s = SplitModel::new(arch, p, tc.compression_channels, tc.bit_width)?;
        csv.push_str(&format!(
            "{p},{},{},{},{},{},{},{},{},{},{}\n",
            dims(s.cut_shape()),
            dims(s.compressed_shape()),
            s.edge_base_params(),
            s.edge_params(),
            s.edge_forward_maccs(),
            s.edge_training_maccs(),
            s.cloud_params(),
            s.cloud_forward_maccs(),
            s.cloud_training_maccs(),
            s.comm_bits_per_sample()
        ));
        println!(
            "{p:>3} {:>12} {:>12} {:>12} {:>14} {:>12} {:>14} {:>10}",
            dims(s.cut_shape()),
            dims(s.compressed_shape()),
            s.edge_params(),
            s.edge_training_maccs(),
            s.cloud_params(),
            s.cloud_training_maccs(),
            s.comm_bits_per_sample()
        );
    }
    let raw_bits = arch.input_shape.iter().product::<usize>() * 8;
    println!(
        "full model: {} params, {} forward MACCs, {} training MACCs; raw input {raw_bits} bits/sample",
        arch.total_params(),
        arch.total_maccs(),
        training_maccs(arch.total_maccs())
    );
    let out = common.out_dir("profile");
    write(&out.join("profile.csv"), &csv)?;
    println!("wrote {}", out.join("profile.csv").display());
    Ok(())
}

fn read_metrics_rows(path: &Path, upto: usize) -> Result<Vec<String>> {
    let Ok(text) = fs::read_to_string(path) else { return Ok(Vec::new()) };
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("epoch,"))
        .filter(|l| l.split(',').next().and_then(|e| e.parse::<usize>().ok()).is_some_and(|e| e <= upto))
        .map(String::from)
        .collect())
}

fn run_training<T: Real>(config: &RunConfig, train: &Dataset, test: &Dataset, out: &Path, resume: bool) -> Result<()> {
    let tc = config.training_config()?;
    let epochs = tc.epochs;
    let mut session = Session::<T>::new(tc)?;
    let ckpt_dir = out.join("checkpoints");
    let latest = ckpt_dir.join(LATEST_CHECKPOINT);
    let mut prior_rows = Vec::new();
    if resume && latest.is_file() {
        session.load_checkpoint(&latest)?;
        prior_rows = read_metrics_rows(&out.join("metrics.csv"), session.epoch())?;
        log::info!("resumed at epoch {} from {}", session.epoch(), latest.display());
    }
    let mut rows: Vec<EpochMetrics> = Vec::new();
    let mut events = String::new();
    while session.epoch() < epochs {
        let m = session.train_epoch(train, test)?;
        println!(
            "epoch {:>3}  final_acc {:.4}  early_acc {}  sim_time {:.3}s  skipped {}",
            m.epoch,
            m.final_acc,
            m.early_acc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
            m.sim_time_s(),
            m.skipped_batches
        );
        rows.push(m);
        session.save_checkpoint(&latest)?;
        session.save_checkpoint(&ckpt_dir.join(format!("epoch_{:04}.ckpt", session.epoch())))?;
        let mut csv = metrics_csv(&[]);
        for r in &prior_rows {
            csv.push_str(r);
            csv.push('\n');
        }
        for r in &rows {
            csv.push_str(&r.csv_row());
            csv.push('\n');
        }
        write(&out.join("metrics.csv"), &csv)?;
        write(&out.join("wall_time.csv"), &wall_time_csv(&rows))?;
        events = session.events().iter().map(|e| format!("{e}\n")).collect();
        write(&out.join("events.log"), &events)?;
    }
    if rows.is_empty() {
        println!("nothing to do: {} of {epochs} epochs already complete", session.epoch());
    }
    if !events.is_empty() {
        println!("{} events logged", events.lines().count());
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_train(common: &Common, resume: bool) -> Result<()> {
    let (config, base) = common.load()?;
    let out = common.out_dir("train");
    if !resume && out.join("checkpoints").join(LATEST_CHECKPOINT).exists() {
        return Err(Error::Config(format!("{} already holds a run; pass --resume or choose another --out", out.display())));
    }
    write(&out.join("config.toml"), &config.render()?)?;
    let (train, test) = config.dataset.load(&base)?;
    match config.training.precision {
        Precision::F32 => run_training::<f32>(&config, &train, &test, &out, resume),
        Precision::F64 => run_training::<f64>(&config, &train, &test, &out, resume),
    }
}

fn run_plan<T: Real>(config: &RunConfig, train: &Dataset, test: &Dataset, out: &Path) -> Result<()> {
    let mut tc = config.training_config()?;
    tc.mode = TrainMode::Hierarchical;
    let cost = config.hardware.cost(&tc.optimizer);
    let inputs =
        analytic_inputs(&tc.arch, tc.bit_width, &config.hardware.spec(), &cost, tc.channel.bandwidth_bps, train.len())?;
    let epochs = tc.epochs;
    let mut trainer = SimTrainer::<T>::new(tc, train, test);
    let report = plan(&inputs, &config.requirements, &mut trainer, epochs)?;
    println!("S1 (memory)           {:?}", report.s1);
    println!("S2 (estimated time)   {:?}", report.s2);
    println!("S3 (measured epoch)   {:?}", report.s3);
    println!("one-epoch trials {}, full runs {}", report.one_epoch_calls, report.full_train_calls);
    match report.chosen() {
        Some(p) => println!("chosen split: {p}"),
        None => println!("decision: {}", describe_decision(&report.decision)),
    }
    write(&out.join("plan.csv"), &report.records_csv())?;
    write(&out.join("config.toml"), &config.render()?)?;
    println!("wrote {}", out.join("plan.csv").display());
    Ok(())
}

fn describe_decision(d: &edgesplit_core::planner::Decision) -> String {
    use edgesplit_core::planner::Decision;
    match d {
        Decision::Chosen { position } => format!("chosen {position}"),
        Decision::Candidates { positions } => format!("no accuracy requirement; candidates {positions:?}"),
        Decision::NoFeasibleSplit => "no feasible split".into(),
    }
}

fn cmd_plan(common: &Common) -> Result<()> {
    let (config, base) = common.load()?;
    let (train, test) = config.dataset.load(&base)?;
    let out = common.out_dir("plan");
    match config.training.precision {
        Precision::F32 => run_plan::<f32>(&config, &train, &test, &out),
        Precision::F64 => run_plan::<f64>(&config, &train, &test, &out),
    }
}

/// Reads `epoch` and `sim_time_s` columns of a metrics file.
fn measured_times(text: &str) -> Result<Vec<(usize, f64, String)>> {
    let col = |name: &str| METRICS_COLUMNS.iter().position(|c| *c == name).expect("known column");
    let (ep, st, acc) = (col("epoch"), col("sim_time_s"), col("final_acc"));
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("epoch,") && !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Data(format!("malformed metrics row '{l}'"));
            let epoch = f.get(ep).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let time = f.get(st).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            Ok((epoch, time, f.get(acc).copied().unwrap_or_default().to_string()))
        })
        .collect()
}

fn cmd_report(common: &Common) -> Result<()> {
    let run = common.out_dir("train");
    let snapshot = run.join("config.toml");
    let text =
        fs::read_to_string(&snapshot).map_err(|e| Error::Config(format!("{}: {e}", snapshot.display())))?;
    let config = RunConfig::parse_with_overrides(&text, &common.overrides)?;
    let base = common.config.as_deref().and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default();
    let tc = config.training_config()?;
    let samples = config.dataset.train_samples(&base)?;
    let hw = config.hardware.spec();
    let cost = config.hardware.cost(&tc.optimizer);
    let bw = tc.channel.bandwidth_bps;
    let estimate = match tc.mode {
        TrainMode::Hierarchical => {
            let split = SplitModel::new(&tc.arch, tc.position, tc.compression_channels, tc.bit_width)?;
            Some(split_estimate(&split, &hw, &cost, bw, samples))
        }
        TrainMode::Fullcloud => Some(fullcloud_estimate(&tc.arch, &hw, &cost, bw, samples)),
        TrainMode::Monolithic => None,
    };
    let metrics = fs::read_to_string(run.join("metrics.csv")).map_err(|e| Error::Data(format!("metrics.csv: {e}")))?;
    let mut csv = String::from("epoch,final_acc,measured_sim_time_s,estimated_s,relative_diff\n");
    println!("{} {} | estimate from the analytic cost model", tc.mode.name(), tc.arch.name);
    println!("{:>5} {:>10} {:>14} {:>14} {:>10}", "epoch", "final_acc", "measured_s", "estimated_s", "rel_diff");
    for (epoch, measured, acc) in measured_times(&metrics)? {
        let est = estimate.map(|e| e.t_total);
        let rel = est.filter(|e| *e > 0.0).map(|e| (measured - e) / e);
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        csv.push_str(&format!("{epoch},{acc},{measured:.6},{},{}\n", opt(est), opt(rel)));
        println!("{epoch:>5} {acc:>10} {measured:>14.3} {:>14} {:>10}", opt(est), opt(rel));
    }
    write(&run.join("report.csv"), &csv)?;
    println!("wrote {}", run.join("report.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { common, resume } => cmd_train(common, *resume),
        Command::Estimate(c) => cmd_estimate(c),
        Command::Profile(c) => cmd_profile(c),
        Command::Plan(c) => cmd_plan(c),
        Command::Report(c) => cmd_report(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
            eprintln!("error: kind={} message=\"{message}\"", e.kind());
            ExitCode::from(2)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use densecap::config::RunConfig;
use densecap::dumps;
use densecap::pipeline::{pronoun_rate, Variant};
use densecap::run::{log_path, read_log, Session};
use densecap::synthdata::{generate_corpus, read_corpus, write_corpus, Split};
use densecap::training::{EpochRecord, Stage};
use densecap::Error;

/// Dense video captioning on synthetic episodes.
///
/// Any `--section.key value` pair (for example `--train.epn_epochs 5`) overrides
/// the configuration file.
#[derive(Parser, Debug)]
#[command(name = "densecap-seq", version)]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for corpus generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-video work.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus.
    Synth,
    /// Train one stage: epn, esgn, scn or rl.
    Train { stage: Stage },
    /// Caption a split and write proposal and caption dumps.
    Generate {
        #[arg(long, default_value = "esgn-scn")]
        variant: Variant,
        #[arg(long, default_value = "val", value_parser = parse_split)]
        split: Split,
        /// Dump directory; `<out_dir>/dumps/<variant>` by default.
        #[arg(long)]
        dumps: Option<PathBuf>,
    },
    /// Score dumps against the corpus.
    Eval {
        #[arg(long, default_value = "esgn-scn")]
        variant: Variant,
        #[arg(long, default_value = "val", value_parser = parse_split)]
        split: Split,
        #[arg(long)]
        dumps: Option<PathBuf>,
        /// Include per-video caption scores.
        #[arg(long)]
        per_video: bool,
    },
    /// Summarize training logs.
    Report {
        /// Write one SVG chart per stage next to the logs.
        #[arg(long)]
        plot: bool,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        _ => Err(format!("unknown split `{s}` (expected train or val)")),
    }
}

/// Pulls `--a.b value` and `--a.b=value` pairs out of the argument list.
type Overrides = Vec<(String, String)>;

fn split_overrides(args: Vec<String>) -> anyhow::Result<(Vec<String>, Overrides)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.strip_prefix("--") {
            Some(key) if key.contains('.') => {
                if let Some((k, v)) = key.split_once('=') {
                    overrides.push((k.to_string(), v.to_string()));
                } else {
                    let v = it.next().with_context(|| format!("override --{key} needs a value"))?;
                    overrides.push((key.to_string(), v));
                }
            }
            _ => rest.push(a),
        }
    }
    Ok((rest, overrides))
}

fn load_config(cli: &Cli, overrides: &[(String, String)]) -> anyhow::Result<RunConfig> {
    let mut all = Vec::new();
    if let Some(seed) = cli.seed {
        all.push(("corpus.seed".to_string(), seed.to_string()));
        all.push(("train.seed".to_string(), seed.to_string()));
    }
    all.extend_from_slice(overrides);
    Ok(RunConfig::load(cli.config.as_deref(), &all)?)
}

fn echo_config(cfg: &RunConfig, tag: &str) -> anyhow::Result<()> {
    let dir = &cfg.paths.out_dir;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("resolved_{tag}.toml")), cfg.to_toml())?;
    Ok(())
}

fn session(cfg: RunConfig, force: bool) -> anyhow::Result<Session> {
    let corpus = read_corpus(&cfg.paths.corpus)?;
    let mut s = Session::new(cfg, corpus)?;
    s.force = force;
    Ok(s)
}

fn dump_dir(s: &Session, variant: Variant, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| s.out_dir().join("dumps").join(variant.name()))
}

fn cmd_synth(cfg: RunConfig, force: bool) -> anyhow::Result<()> {
    let path = &cfg.paths.corpus;
    if path.exists() && !force {
        return Err(Error::Exists {
            what: "corpus",
            path: path.clone(),
        }
        .into());
    }
    echo_config(&cfg, "synth")?;
    let corpus = generate_corpus(&cfg.corpus)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_corpus(path, &corpus)?;
    let st = corpus.stats();
    println!(
        "videos {}  events/video {:.3}  mean T_c {:.2}  vocab {}  overlapping pairs {}  -> {}",
        st.videos,
        st.mean_events,
        st.mean_t_c,
        st.vocab_size,
        st.overlapping_pairs,
        path.display()
    );
    Ok(())
}

fn print_record(r: &EpochRecord) {
    let metrics: Vec<String> = r.metrics.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
    println!("{:>4} {:>3}  loss {:.4}  {}", r.stage, r.epoch, r.loss, metrics.join("  "));
}

fn cmd_train(cfg: RunConfig, force: bool, stage: Stage) -> anyhow::Result<()> {
    echo_config(&cfg, &format!("train_{}", stage.name()))?;
    let s = session(cfg, force)?;
    let start = std::time::Instant::now();
    let log = s.train(stage)?;
    if let Some(last) = log.last() {
        print_record(last);
    }
    println!("{} trained in {:.1}s", stage.name(), start.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_generate(cfg: RunConfig, force: bool, variant: Variant, split: Split, dumps: Option<PathBuf>) -> anyhow::Result<()> {
    echo_config(&cfg, &format!("generate_{}", variant.name()))?;
    let s = session(cfg, force)?;
    let dir = dump_dir(&s, variant, dumps);
    if dir.join(dumps::CAPTIONS).exists() && !force {
        return Err(Error::Exists {
            what: "dumps",
            path: dir,
        }
        .into());
    }
    let out = s.generate(variant, split)?;
    dumps::write_dumps(&dir, &out, &s.corpus.vocab)?;
    let events: usize = out.iter().map(|o| o.events.len()).sum();
    println!(
        "{} videos, {} captioned events, pronoun rate {:.3} -> {}",
        out.len(),
        events,
        pronoun_rate(&out, &s.corpus.vocab),
        dir.display()
    );
    Ok(())
}

fn cmd_eval(cfg: RunConfig, variant: Variant, split: Split, dumps_dir: Option<PathBuf>, per_video: bool) -> anyhow::Result<()> {
    let s = session(cfg, false)?;
    let dir = dump_dir(&s, variant, dumps_dir);
    let out = dumps::read_dumps(&dir)?;
    let report = s.evaluate(&out, split, per_video)?;
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(dir.join("report.json"), &text)?;
    println!("{text}");
    Ok(())
}

fn plot(path: &Path, stage: &str, log: &[EpochRecord]) -> anyhow::Result<()> {
    use plotters::prelude::*;

    let mut series: Vec<(String, Vec<(f64, f64)>)> =
        vec![("loss".into(), log.iter().map(|r| (r.epoch as f64, r.loss)).collect())];
    let mut keys: Vec<&String> = log.iter().flat_map(|r| r.metrics.keys()).collect();
    keys.sort();
    keys.dedup();
    for k in keys {
        series.push((
            k.clone(),
            log.iter()
                .filter_map(|r| r.metrics.get(k).map(|v| (r.epoch as f64, *v)))
                .collect(),
        ));
    }
    let root = SVGBackend::new(path, (720, 240 * series.len() as u32)).into_drawing_area();
    root.fill(&WHITE)?;
    let panels = root.split_evenly((series.len(), 1));
    for (panel, (name, pts)) in panels.iter().zip(&series) {
        let x_max = pts.iter().map(|p| p.0).fold(1.0, f64::max);
        let (lo, hi) = pts
            .iter()
            .map(|p| p.1)
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
        let pad = ((hi - lo) * 0.05).max(1e-6);
        let mut chart = ChartBuilder::on(panel)
            .caption(format!("{stage}: {name}"), ("sans-serif", 16))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(60)
            .build_cartesian_2d(0.0..x_max, (lo - pad)..(hi + pad))?;
        chart.configure_mesh().x_desc("epoch").draw()?;
        chart.draw_series(LineSeries::new(pts.iter().copied(), &BLUE))?;
    }
    root.present()?;
    Ok(())
}

fn cmd_report(cfg: RunConfig, with_plot: bool) -> anyhow::Result<()> {
    let dir = &cfg.paths.out_dir;
    let mut found = false;
    for stage in [Stage::Epn, Stage::Esgn, Stage::Scn, Stage::Rl] {
        let path = log_path(dir, stage);
        if !path.exists() {
            continue;
        }
        found = true;
        let log = read_log(&path)?;
        for r in &log {
            print_record(r);
        }
        if with_plot && !log.is_empty() {
            let svg = dir.join(format!("{}.svg", stage.name()));
            plot(&svg, stage.name(), &log)?;
            println!("wrote {}", svg.display());
        }
    }
    if !found {
        bail!(Error::MissingPrerequisite(dir.join("*.log.jsonl")));
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Numeric(_)) => 2,
        Some(Error::MissingPrerequisite(_)) => 3,
        _ => 1,
    }
}

fn run(cli: Cli, overrides: Overrides) -> anyhow::Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("worker pool")?;
    }
    let cfg = load_config(&cli, &overrides)?;
    match cli.command {
        Command::Synth => cmd_synth(cfg, cli.force),
        Command::Train { stage } => cmd_train(cfg, cli.force, stage),
        Command::Generate { variant, split, dumps } => cmd_generate(cfg, cli.force, variant, split, dumps),
        Command::Eval {
            variant,
            split,
            dumps,
            per_video,
        } => cmd_eval(cfg, variant, split, dumps, per_video),
        Command::Report { plot } => cmd_report(cfg, plot),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

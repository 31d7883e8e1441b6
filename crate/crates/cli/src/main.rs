//! `topo`: dataset generation, training, evaluation and accelerated solves.

mod manifest;
mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use topo_core::eval::{self, EvalReport, STOP_ITERS};
use topo_core::fem::{self, DensityField, Problem};
use topo_core::probgen::{self, read_dataset, DatasetRecord};
use topo_core::simp;
use topo_core::toponet::{self, KDistribution};

use manifest::Manifest;
use settings::{parse_grid, parse_list, Settings};

#[derive(Parser, Debug)]
#[command(name = "topo", version, about = "Topology optimization with a SIMP solver and a CNN shortcut")]
struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// `key = value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample problems and store their SIMP histories.
    Generate(GenerateArgs),
    /// Train a network on the first 90% of a dataset.
    Train(TrainArgs),
    /// Compare networks with thresholding on a dataset.
    Evaluate(EvaluateArgs),
    /// Solve one problem with SIMP or the hybrid pipeline.
    Solve(SolveArgs),
    /// Thresholding-only table for a dataset.
    Baseline(BaselineArgs),
    /// Render stored frames as PNG images.
    Render(RenderArgs),
}

#[derive(Args, Debug, Default)]
struct GenerateArgs {
    /// Number of records.
    #[arg(long)]
    n: Option<usize>,
    /// Grid as `NELXxNELY`, e.g. `40x40`.
    #[arg(long)]
    grid: Option<String>,
    /// `mechanical` or `heat`.
    #[arg(long)]
    physics: Option<String>,
    /// SIMP iterations stored per record.
    #[arg(long)]
    iters: Option<usize>,
    /// File name inside the output directory.
    #[arg(long, default_value = "dataset.topd")]
    name: String,
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    /// Dataset file written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// `P<λ>` (e.g. `P10`) or `U`.
    #[arg(long)]
    k: Option<String>,
    /// Passes over the training records; the learning rate halves midway.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the volume term in the loss.
    #[arg(long)]
    beta: Option<f64>,
    /// Dropout rate after each pooling layer.
    #[arg(long)]
    dropout: Option<f64>,
    /// Train on every record instead of the first 90%.
    #[arg(long)]
    all: bool,
    /// File name inside the output directory.
    #[arg(long, default_value = "weights.bin")]
    name: String,
}

#[derive(Args, Debug, Default)]
struct EvaluateArgs {
    /// Dataset file written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// `LABEL=PATH`; repeat for several networks.
    #[arg(long = "model", required = true)]
    models: Vec<String>,
    /// Comma-separated stop iterations.
    #[arg(long)]
    stop_iters: Option<String>,
    /// Evaluate every record instead of the last 10%.
    #[arg(long)]
    all: bool,
}

#[derive(Args, Debug, Default)]
struct BaselineArgs {
    /// Dataset file written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated stop iterations.
    #[arg(long)]
    stop_iters: Option<String>,
    /// Evaluate every record instead of the last 10%.
    #[arg(long)]
    all: bool,
}

#[derive(Args, Debug, Default)]
struct SolveArgs {
    /// Problem JSON file.
    #[arg(long, conflicts_with = "mbb")]
    problem: Option<PathBuf>,
    /// Half MBB beam on a `NELXxNELY` grid.
    #[arg(long)]
    mbb: Option<String>,
    /// Volume fraction for `--mbb`.
    #[arg(long, default_value_t = 0.5)]
    vf: f64,
    /// Weights for the hybrid pipeline; plain SIMP without them.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// SIMP iterations before the network takes over.
    #[arg(long)]
    n0: Option<usize>,
    /// Iterations for plain SIMP.
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct RenderArgs {
    /// Dataset file written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated record indices.
    #[arg(long, default_value = "0")]
    records: String,
    /// Comma-separated frame numbers (0 is the uniform start).
    #[arg(long)]
    frames: Option<String>,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let mut manifest = Manifest::new(&cli.command_name(), cli.seed);
    if let Some(p) = &cli.config {
        manifest.config_file = Some(p.display().to_string());
    }
    match &cli.command {
        Command::Generate(a) => generate(&cli, a, &mut settings, &mut manifest)?,
        Command::Train(a) => train(&cli, a, &mut settings, &mut manifest)?,
        Command::Evaluate(a) => evaluate(&cli, a, &mut settings, &mut manifest)?,
        Command::Solve(a) => solve(&cli, a, &mut settings, &mut manifest)?,
        Command::Baseline(a) => baseline(&cli, a, &mut settings, &mut manifest)?,
        Command::Render(a) => render(&cli, a, &mut manifest)?,
    }
    manifest.write(&cli.out)
}

impl Cli {
    fn command_name(&self) -> String {
        match self.command {
            Command::Generate(_) => "generate",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Solve(_) => "solve",
            Command::Baseline(_) => "baseline",
            Command::Render(_) => "render",
        }
        .into()
    }
}

fn generate(cli: &Cli, a: &GenerateArgs, s: &mut Settings, m: &mut Manifest) -> Result<()> {
    let mut sampler = s.sampler()?;
    if let Some(g) = &a.grid {
        (sampler.nelx, sampler.nely) = parse_grid(g)?;
    }
    if let Some(p) = &a.physics {
        sampler.physics = p.parse()?;
    }
    let mut simp_cfg = s.simp()?;
    if let Some(i) = a.iters {
        simp_cfg.max_iters = i;
    }
    let n = match a.n {
        Some(n) => n,
        None => s.take("n")?.unwrap_or(100),
    };
    let path = cli.out.join(&a.name);
    let t = Instant::now();
    let report = probgen::generate_dataset(&sampler, &simp_cfg, n, cli.seed, &path)?;
    let info = &report.info;
    println!(
        "wrote {} records to {} in {:.1}s ({} attempts: {} zero-count redraws, {} ill-posed, {} SIMP failures)",
        n,
        path.display(),
        t.elapsed().as_secs_f64(),
        info.attempts,
        info.zero_count_redraws,
        info.ill_posed_rejections,
        info.simp_failures
    );
    m.record("sampler", &sampler)?;
    m.record("simp", &simp_cfg)?;
    m.record("n", &n)?;
    m.output(&path);
    m.output(&probgen::sidecar_path(&path));
    Ok(())
}

fn load_records(path: &Path) -> Result<Vec<DatasetRecord>> {
    let mut ds = read_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ds.all_records()?)
}

fn split(records: &[DatasetRecord], all: bool, train: bool) -> &[DatasetRecord] {
    if all {
        return records;
    }
    let (tr, va) = eval::split_90_10(records.len());
    if train {
        &records[tr]
    } else {
        &records[va]
    }
}

fn train(cli: &Cli, a: &TrainArgs, s: &mut Settings, m: &mut Manifest) -> Result<()> {
    let mut cfg = s.train()?;
    cfg.seed = cli.seed;
    if let Some(k) = &a.k {
        cfg.k_distribution = KDistribution::preset(k)?;
    }
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.beta = a.beta.unwrap_or(cfg.beta);
    cfg.dropout = a.dropout.unwrap_or(cfg.dropout);
    let records = load_records(&a.data)?;
    let set = split(&records, a.all, true);
    if set.is_empty() {
        bail!("no training records in {}", a.data.display());
    }
    let log_path = cli.out.join("train_log.jsonl");
    let mut log = String::new();
    let t = Instant::now();
    let outcome = toponet::train(set, &cfg, |e| {
        let line = serde_json::to_string(e).expect("log entry serializes");
        println!("{line}  [{:.0}s]", t.elapsed().as_secs_f64());
        log.push_str(&line);
        log.push('\n');
    })?;
    fs::write(&log_path, log).with_context(|| format!("writing {}", log_path.display()))?;
    let wpath = cli.out.join(&a.name);
    toponet::save_weights(&outcome.params, &wpath)?;
    println!("trained on {} records; weights in {}", set.len(), wpath.display());
    m.record("train", &cfg)?;
    m.record("data", &a.data.display().to_string())?;
    m.record("records", &set.len())?;
    m.output(&wpath);
    m.output(&log_path);
    Ok(())
}

fn stop_iters(arg: &Option<String>, s: &mut Settings) -> Result<Vec<usize>> {
    match arg.clone().or(s.take("stop_iters")?) {
        Some(list) => parse_list(&list),
        None => Ok(STOP_ITERS.to_vec()),
    }
}

fn write_report(cli: &Cli, report: &EvalReport, m: &mut Manifest) -> Result<()> {
    let text = format!("{}\n{}", report.accuracy.to_text(), report.iou.to_text());
    print!("{text}");
    let tpath = cli.out.join("tables.txt");
    let jpath = cli.out.join("tables.jsonl");
    fs::write(&tpath, &text)?;
    fs::write(&jpath, format!("{}{}", report.accuracy.to_jsonl(), report.iou.to_jsonl()))?;
    m.output(&tpath);
    m.output(&jpath);
    Ok(())
}

fn evaluate(cli: &Cli, a: &EvaluateArgs, s: &mut Settings, m: &mut Manifest) -> Result<()> {
    let iters = stop_iters(&a.stop_iters, s)?;
    let mut models = Vec::new();
    for spec in &a.models {
        let (label, path) = spec
            .split_once('=')
            .with_context(|| format!("model '{spec}' is not LABEL=PATH"))?;
        let params = toponet::load_weights(Path::new(path))?;
        models.push((label.to_string(), params));
        m.record(&format!("model.{label}"), &path)?;
    }
    let records = load_records(&a.data)?;
    let set = split(&records, a.all, false);
    let report = eval::evaluate(&models, set, &iters)?;
    m.record("data", &a.data.display().to_string())?;
    m.record("records", &set.len())?;
    write_report(cli, &report, m)
}

fn baseline(cli: &Cli, a: &BaselineArgs, s: &mut Settings, m: &mut Manifest) -> Result<()> {
    let iters = stop_iters(&a.stop_iters, s)?;
    let records = load_records(&a.data)?;
    let set = split(&records, a.all, false);
    let report = eval::evaluate(&[], set, &iters)?;
    m.record("data", &a.data.display().to_string())?;
    m.record("records", &set.len())?;
    write_report(cli, &report, m)
}

fn solve(cli: &Cli, a: &SolveArgs, s: &mut Settings, m: &mut Manifest) -> Result<()> {
    let problem = match (&a.problem, &a.mbb) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<Problem>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        (None, Some(g)) => {
            let (nelx, nely) = parse_grid(g)?;
            Problem::half_mbb(nelx, nely, a.vf)?
        }
        (None, None) => bail!("give --problem or --mbb"),
    };
    let mut simp_cfg = s.simp()?;
    let n0 = match a.n0 {
        Some(n) => n,
        None => s.take("n0")?.unwrap_or(5),
    };
    if let Some(i) = a.iters {
        simp_cfg.max_iters = i;
    }
    let (w, h) = (problem.nelx(), problem.nely());
    let summary = match &a.weights {
        Some(wp) => {
            let params = toponet::load_weights(wp)?;
            let r = eval::hybrid_solve(&problem, n0, &params, &simp_cfg)?;
            let png = cli.out.join("structure.png");
            eval::render_mask_png(&r.mask, w, h, &png)?;
            eval::render_png(r.design.values(), w, h, &cli.out.join("simp_n0.png"))?;
            m.output(&png);
            let binary = DensityField::new(w, h, r.mask.iter().map(|&b| b as u8 as f64).collect())?;
            serde_json::json!({
                "method": "hybrid",
                "n0": n0,
                "vol_frac": problem.vol_frac(),
                "mask_volume": r.volume_fraction(),
                "mask_compliance": fem::compliance(&problem, &binary, &simp_cfg.material)?,
                "simp_seconds": r.timing.simp.as_secs_f64(),
                "inference_seconds": r.timing.inference.as_secs_f64(),
                "total_seconds": r.timing.total.as_secs_f64(),
            })
        }
        None => {
            let t = Instant::now();
            let hist = simp::optimize(&problem, &simp_cfg)?;
            let secs = t.elapsed().as_secs_f64();
            let fin = hist.final_frame();
            let png = cli.out.join("structure.png");
            eval::render_png(fin.values(), w, h, &png)?;
            m.output(&png);
            serde_json::json!({
                "method": "simp",
                "iterations": simp_cfg.max_iters,
                "vol_frac": problem.vol_frac(),
                "final_volume": fin.mean(),
                "final_compliance": fem::compliance(&problem, fin, &simp_cfg.material)?,
                "total_seconds": secs,
            })
        }
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    let path = cli.out.join("solve.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
    m.record("problem", &problem)?;
    m.record("simp", &simp_cfg)?;
    m.output(&path);
    Ok(())
}

fn render(cli: &Cli, a: &RenderArgs, m: &mut Manifest) -> Result<()> {
    let mut ds = read_dataset(&a.data)?;
    for i in parse_list(&a.records)? {
        if i >= ds.len() {
            bail!("record {i} out of range ({} records)", ds.len());
        }
        let r = ds.record(i)?;
        let frames = match &a.frames {
            Some(f) => parse_list(f)?,
            None => vec![r.frame_count()],
        };
        let (w, h) = (r.problem().nelx(), r.problem().nely());
        for k in frames {
            let path = cli.out.join(format!("record{i}_frame{k}.png"));
            eval::render_png(&r.design(k)?, w, h, &path)?;
            m.output(&path);
        }
        println!("record {i}: {}, f0 = {:.3}", r.problem().physics(), r.problem().vol_frac());
    }
    m.record("data", &a.data.display().to_string())?;
    Ok(())
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use aprnet::autodiff::GradcheckConfig;
use aprnet::checks::{format_checks, gradient_suite, selftest};
use aprnet::config::KeyValues;
use aprnet::data::{datagen, load_dataset, load_gray_png, load_png, save_attention_map, save_png, DatagenConfig, Source};
use aprnet::metrics::{evaluate, format_table};
use aprnet::params::save_checkpoint;
use aprnet::training::{apply_render_keys, train, TrainConfig};
use aprnet::{RenderConfig, RenderModel, Variant};

/// Keys any subcommand may find in a shared config file.
const KNOWN_KEYS: &[&str] = &[
    "variant", "k", "m", "d_s", "d_f", "eps", "channel_plan", "lambda_c", "lambda_p", "lambda_a", "lr", "beta1",
    "beta2", "batch", "steps", "seed", "perceptual_weights", "height", "width", "patch", "window", "offset", "rotate",
    "swap_prob", "synth_extra_width", "varying_background", "count",
];

#[derive(Parser)]
#[command(name = "aprnet", version, about = "Style-guided text image rendering on the CPU")]
struct Cli {
    /// `key = value` file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build content/style/ground-truth triplets with Single Crop.
    Datagen(DatagenArgs),
    /// Train a renderer on a triplet directory.
    Train(TrainArgs),
    /// Render one content/style pair.
    Render(RenderArgs),
    /// Report PSNR and SSIM of trained renderers.
    Metrics(MetricsArgs),
    /// Finite-difference checks of every differentiable path.
    Gradcheck,
    /// Oracle and invariant checks.
    Selftest,
}

#[derive(Args)]
struct DatagenArgs {
    /// Directory of PNGs or `synthetic:N`.
    #[arg(long)]
    src: Source,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Optional loss curve (one line per step).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    content: PathBuf,
    #[arg(long)]
    style: PathBuf,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the fusion attention maps of every layer here.
    #[arg(long)]
    attention_dir: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoints to score; pair each with a `--variant`.
    #[arg(long, required = true)]
    weights: Vec<PathBuf>,
    #[arg(long)]
    variant: Vec<Variant>,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<KeyValues> {
    Ok(match path {
        Some(p) => KeyValues::from_file(p)?,
        None => KeyValues::default(),
    })
}

fn finish_config(mut kv: KeyValues) -> anyhow::Result<()> {
    kv.discard(KNOWN_KEYS);
    Ok(kv.finish()?)
}

fn render_config(kv: &mut KeyValues, variant: Option<Variant>) -> anyhow::Result<RenderConfig> {
    let mut cfg = RenderConfig::default();
    apply_render_keys(&mut cfg, kv)?;
    if let Some(v) = variant {
        cfg.variant = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_datagen(cli: &Cli, a: &DatagenArgs) -> anyhow::Result<()> {
    let mut kv = load_config(cli.config.as_deref())?;
    let mut cfg = DatagenConfig::default();
    cfg.apply(&mut kv)?;
    let mut count = kv.take::<usize>("count")?.unwrap_or(16);
    let mut seed = kv.take::<u64>("seed")?.unwrap_or(0);
    finish_config(kv)?;
    if let Some(h) = a.height {
        cfg.triplet.height = h;
    }
    if let Some(w) = a.width {
        cfg.triplet.width = w;
    }
    count = a.count.unwrap_or(count);
    seed = cli.seed.unwrap_or(seed);
    let made = datagen(&a.src, &a.out, &cfg, seed, count)?;
    println!("wrote {} triplets to {}", made.len(), a.out.display());
    Ok(())
}

fn run_train(cli: &Cli, a: &TrainArgs) -> anyhow::Result<()> {
    let mut kv = load_config(cli.config.as_deref())?;
    let mut cfg = TrainConfig::default();
    cfg.apply(&mut kv)?;
    finish_config(kv)?;
    if let Some(v) = a.variant {
        cfg.render.variant = v;
    }
    cfg.steps = a.steps.unwrap_or(cfg.steps);
    cfg.batch = a.batch.unwrap_or(cfg.batch);
    cfg.seed = cli.seed.unwrap_or(cfg.seed);
    let data = load_dataset(&a.data)?;
    println!(
        "training {} on {} triplets for {} steps (batch {}, seed {})",
        cfg.render.variant,
        data.len(),
        cfg.steps,
        cfg.batch,
        cfg.seed
    );
    let t0 = Instant::now();
    let mut log = String::from("step content perceptual adversarial discriminator total\n");
    let every = (cfg.steps / 20).max(1);
    let outcome = train(cfg, &data, |l| {
        log.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6} {:.6}\n",
            l.step, l.content, l.perceptual, l.adversarial, l.discriminator, l.total
        ));
        if l.step % every == 0 {
            println!(
                "step {:5}  content {:.4}  perceptual {:.4}  adv {:.4}  disc {:.4}  ({:.0}s)",
                l.step,
                l.content,
                l.perceptual,
                l.adversarial,
                l.discriminator,
                t0.elapsed().as_secs_f64()
            );
        }
    })?;
    save_checkpoint(&a.out, &outcome.model.params)?;
    if let Some(p) = &a.log {
        fs::write(p, log).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("saved {}", a.out.display());
    Ok(())
}

fn run_render(cli: &Cli, a: &RenderArgs) -> anyhow::Result<()> {
    let mut kv = load_config(cli.config.as_deref())?;
    let cfg = render_config(&mut kv, a.variant)?;
    finish_config(kv)?;
    let model = RenderModel::from_checkpoint(cfg, &a.weights)?;
    let content = load_gray_png(&a.content)?.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let style = load_png(&a.style)?;
    let out = model.render_detailed(&content, &style)?;
    save_png(&a.out, &out.image)?;
    if let Some(dir) = &a.attention_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, w) in out.attention.iter().enumerate() {
            save_attention_map(&dir.join(format!("layer{i}.png")), w)?;
        }
    }
    println!("wrote {} ({}x{})", a.out.display(), out.image.w(), out.image.h());
    Ok(())
}

fn run_metrics(cli: &Cli, a: &MetricsArgs) -> anyhow::Result<()> {
    if a.variant.len() > 1 && a.variant.len() != a.weights.len() {
        let msg = format!("give one --variant per --weights (got {} and {})", a.variant.len(), a.weights.len());
        return Err(aprnet::Error::Config(msg).into());
    }
    let mut kv = load_config(cli.config.as_deref())?;
    let base = render_config(&mut kv, a.variant.first().copied())?;
    finish_config(kv)?;
    let data = load_dataset(&a.data)?;
    let mut rows = Vec::new();
    for (i, w) in a.weights.iter().enumerate() {
        let mut cfg = base.clone();
        if let Some(&v) = a.variant.get(i) {
            cfg.variant = v;
        }
        let model = RenderModel::from_checkpoint(cfg.clone(), w)?;
        rows.push((cfg.variant.to_string(), evaluate(&data, &model)?));
    }
    print!("{}", format_table(&rows));
    Ok(())
}

fn report(checks: &[aprnet::checks::Check]) -> anyhow::Result<()> {
    print!("{}", format_checks(checks));
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        bail!("{failed} of {} checks failed", checks.len());
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Datagen(a) => run_datagen(cli, a),
        Command::Train(a) => run_train(cli, a),
        Command::Render(a) => run_render(cli, a),
        Command::Metrics(a) => run_metrics(cli, a),
        Command::Gradcheck => {
            finish_config(load_config(cli.config.as_deref())?)?;
            report(&gradient_suite(&GradcheckConfig::default()))
        }
        Command::Selftest => {
            let mut kv = load_config(cli.config.as_deref())?;
            let seed = kv.take::<u64>("seed")?.unwrap_or(0);
            finish_config(kv)?;
            report(&selftest(cli.seed.unwrap_or(seed)))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: cannot start thread pool: {e}");
        return ExitCode::from(2);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already embed their source in the message.
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    msg = if msg.is_empty() { cause } else { format!("{msg}: {cause}") };
                }
            }
            eprintln!("error: {msg}");
            let usage = matches!(e.downcast_ref::<aprnet::Error>(), Some(aprnet::Error::Config(_)));
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use taylornet::checkpoint::Checkpoint;
use taylornet::config::{
    load_train_config, prepare_out_dir, resolve_out_dir, train_config_to_toml, Manifest, Overrides, Variant,
};
use taylornet::data::seqfile::{read_sequences, write_sequences, ElementType};
use taylornet::data::npy::read_moving_mnist;
use taylornet::data::{BouncingDataset, DataConfig, Split, VideoBatch};
use taylornet::eval::ablation::{run_ablation, AblationOptions};
use taylornet::eval::plot::{line_plot, Series};
use taylornet::eval::visuals::export_visuals;
use taylornet::gradcheck::GradcheckOptions;
use taylornet::model::TaylorNet;
use taylornet::pipeline::{config_hash, evaluate_checkpoint, resolve_checkpoint, train_to_dir, LOSS_CSV};
use taylornet::train::{LogRow, TrainConfig};
use taylornet::verify::{gate_identity_check, gradient_suite, moment_fit_check, tpu_anchoring_probe};
use taylornet::{Error, Result};

/// Two-branch video prediction: training, evaluation, ablations and figures.
///
/// Exit status: 0 success, 1 invalid input or configuration, 2 numerical
/// failure (divergence or a verification tolerance breach), 3 I/O or file
/// format error. Output directories default to `$TAYLORNET_OUT/<command>`
/// (or `runs/<command>`) and must be empty unless `--force` is given.
#[derive(Parser, Debug)]
#[command(name = "taylornet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoints, the loss log and a manifest.
    Train(TrainArgs),
    /// Free-running rollout metrics of a checkpoint on held-out sequences.
    Eval(EvalArgs),
    /// Train and compare model variants under shared seeds.
    Ablate(AblateArgs),
    /// Grid images and GIFs of predictions and branch features.
    Visualize(VisualizeArgs),
    /// Moment, gate, gradient and anchoring self-checks; nonzero exit on failure.
    VerifyKernels(VerifyArgs),
    /// Write bouncing-digit sequences to a `.tnseq` file.
    GenerateData(GenerateArgs),
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Built-in configuration: tiny, full or overfit.
    #[arg(long, default_value = "tiny")]
    preset: String,
    /// TOML config file (replaces the preset).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training sequences per epoch.
    #[arg(long)]
    epoch_size: Option<usize>,
    /// Weight of the moment loss.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Constant probability of a teacher-forced step.
    #[arg(long, allow_negative_numbers = true)]
    teacher_p: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write a checkpoint every N epochs (0: final only).
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self, variant: Option<Variant>) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_train_config(p)?,
            None => TrainConfig::preset(&self.preset)?,
        };
        Overrides {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            epoch_size: self.epoch_size,
            lambda: self.lambda,
            teacher_p: self.teacher_p,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            variant,
        }
        .apply(&mut cfg)?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone)]
struct OutArgs {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

impl OutArgs {
    fn prepare(&self, name: &str) -> Result<PathBuf> {
        let dir = resolve_out_dir(self.out.as_deref(), name);
        prepare_out_dir(&dir, self.force)?;
        Ok(dir)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Train an ablation variant (full, no_mcu, taylorcell_only, residual_only, order1..order6).
    #[arg(long)]
    ablation: Option<Variant>,
    /// Print the resolved config as TOML and exit.
    #[arg(long)]
    dump_config: bool,
    /// Print a progress line every N steps (0: epochs only).
    #[arg(long, default_value_t = 0)]
    log_every: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Sequences to evaluate on; `.npy` (Moving-MNIST layout) or `.tnseq`.
    /// Without it, held-out sequences are generated from the training config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Base seed of generated held-out sequences (default: the training seed).
    #[arg(long)]
    data_seed: Option<u64>,
    /// Number of sequences.
    #[arg(long, default_value_t = 64)]
    sequences: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint file or a run directory containing `model.tnck`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated prediction horizons.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    horizons: Vec<usize>,
    /// Sequences per forward pass.
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Skip the copy-last-frame baseline.
    #[arg(long)]
    no_persistence: bool,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated variants.
    #[arg(long, default_value = "full,no_mcu,taylorcell_only,order1,order2,order3,order4")]
    suite: String,
    /// Predicted frames in the comparison.
    #[arg(long, default_value_t = 10)]
    horizon: usize,
    #[arg(long, default_value_t = 64)]
    test_sequences: usize,
    #[arg(long, default_value_t = 8)]
    eval_batch: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct VisualizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    horizon: usize,
    /// Nearest-neighbour zoom of each frame.
    #[arg(long, default_value_t = 2)]
    scale: u32,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Gradient steps for the moment-only bank fit.
    #[arg(long, default_value_t = 2000)]
    moment_steps: usize,
    /// Random trials per forced-gate identity.
    #[arg(long, default_value_t = 100)]
    gate_trials: usize,
    /// Largest accepted relative gradient error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Frames per sequence (default: input + output length of the config).
    #[arg(long)]
    length: Option<usize>,
    /// Store 8-bit pixels instead of f32.
    #[arg(long)]
    u8: bool,
    #[command(flatten)]
    out: OutArgs,
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn args() -> Vec<String> {
    std::env::args().skip(1).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Visualize(a) => visualize(a),
        Command::VerifyKernels(a) => verify(a),
        Command::GenerateData(a) => generate(a),
    }
}

fn progress_printer(log_every: usize, per_epoch: usize) -> impl FnMut(&LogRow) {
    let mut sum = 0.0;
    let mut n = 0usize;
    move |row: &LogRow| {
        sum += row.image;
        n += 1;
        if log_every > 0 && row.step % log_every == 0 {
            eprintln!(
                "step {:>6}  image {:.5}  moment {:.4}  {}",
                row.step,
                row.image,
                row.moment,
                row.mode.as_str()
            );
        }
        if (row.step + 1) % per_epoch == 0 {
            eprintln!(
                "epoch {:>4}  mean image loss {:.5}  ({:.0}s)",
                row.epoch,
                sum / n as f64,
                row.wall_time
            );
            sum = 0.0;
            n = 0;
        }
    }
}

fn plot_loss(dir: &Path) -> Result<()> {
    let path = dir.join(LOSS_CSV);
    let rows = taylornet::train::read_log_without_time(&path)?;
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.get(1)?.parse().ok()?, r.get(3)?.parse().ok()?)))
        .filter(|&(_, y): &(f64, f64)| y > 0.0)
        .collect();
    if points.is_empty() {
        return Ok(());
    }
    let series = Series {
        label: "image loss".into(),
        points,
    };
    line_plot(&dir.join("loss.png"), &[series], true)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve(a.ablation)?;
    if a.dump_config {
        print!("{}", train_config_to_toml(&cfg)?);
        return Ok(());
    }
    let dir = a.out.prepare("train")?;
    let mut manifest = Manifest::new("train", args());
    manifest.seed = Some(cfg.seed);
    manifest.variant = a.ablation.map(|v| v.name());
    manifest.config = Some(cfg.clone());
    manifest.set("config_hash", config_hash(&cfg)?);
    manifest.set("out", dir.display());
    manifest.write(&dir)?;
    std::fs::write(dir.join("config.toml"), train_config_to_toml(&cfg)?).map_err(|e| io(&dir, e))?;

    let started = Instant::now();
    let variant = a.ablation.map(|v| v.name());
    let ck = train_to_dir(
        &cfg,
        variant.as_deref(),
        &dir,
        progress_printer(a.log_every, cfg.steps_per_epoch()),
    )?;
    plot_loss(&dir)?;
    manifest.set("checkpoint_id", ck.id()?);
    manifest.set("steps", ck.meta.step);
    manifest.set("seconds", format!("{:.1}", started.elapsed().as_secs_f64()));
    manifest.write(&dir)?;
    println!("trained {} steps; checkpoint {} in {}", ck.meta.step, ck.id()?, dir.display());
    Ok(())
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Training config stored with a checkpoint, or a preset matching its frames.
fn checkpoint_train_config(ck: &Checkpoint) -> TrainConfig {
    match &ck.meta.train {
        Some(t) => t.clone(),
        None => {
            let mut t = if ck.model.frame_height == 64 {
                TrainConfig::full()
            } else {
                TrainConfig::tiny()
            };
            t.data = DataConfig {
                canvas: ck.model.frame_height,
                ..t.data
            };
            t.model = ck.model.clone();
            t
        }
    }
}

/// Evaluation sequences and the seed that identifies them.
fn load_videos(d: &DataArgs, ck: &Checkpoint, len: usize) -> Result<(VideoBatch, u64)> {
    match &d.data {
        Some(path) => {
            let frames = if path.extension().is_some_and(|e| e == "npy") {
                read_moving_mnist(path)?
            } else {
                read_sequences(path)?.0
            };
            let s = frames.shape().to_vec();
            if s.len() != 5 || s[1] < len {
                return Err(Error::InvalidArgument(format!(
                    "{} holds {:?}; need [N, >= {}, C, H, W]",
                    path.display(),
                    s,
                    len
                )));
            }
            let n = d.sequences.min(s[0]);
            let head = frames.narrow0(0, n)?;
            let inner: usize = s[2..].iter().product();
            let mut data = Vec::with_capacity(n * len * inner);
            for b in 0..n {
                let o = b * s[1] * inner;
                data.extend_from_slice(&head.data()[o..o + len * inner]);
            }
            let t = taylornet::Tensor::new(vec![n, len, s[2], s[3], s[4]], data)?;
            Ok((VideoBatch::new(t, (0..n as u64).collect())?, 0))
        }
        None => {
            let cfg = checkpoint_train_config(ck);
            let seed = d.data_seed.unwrap_or(cfg.seed);
            let ds = BouncingDataset::new(&cfg.data, len, seed, Split::Test)?;
            Ok((ds.batch(0, d.sequences)?, seed))
        }
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let path = resolve_checkpoint(&a.checkpoint);
    let ck = Checkpoint::load(&path)?;
    let max_h = *a
        .horizons
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidArgument("no horizons".into()))?;
    if a.horizons.contains(&0) {
        return Err(Error::InvalidArgument("horizons must be at least 1".into()));
    }
    let dir = a.out.prepare("eval")?;
    let (videos, seed) = load_videos(&a.data, &ck, ck.model.input_len + max_h)?;
    let mut manifest = Manifest::new("eval", args());
    manifest.seed = Some(seed);
    manifest.variant = ck.meta.variant.clone();
    manifest.config = ck.meta.train.clone();
    manifest.set("checkpoint", path.display());
    manifest.set("sequences", videos.len());
    manifest.write(&dir)?;

    let label = ck.meta.variant.clone().unwrap_or_else(|| "model".into());
    let report = evaluate_checkpoint(&ck, &label, &videos, seed, &a.horizons, a.batch, !a.no_persistence)?;
    report.write(&dir)?;
    let series: Vec<Series> = report
        .results
        .iter()
        .map(|r| Series {
            label: format!("h{}", r.summary.horizon),
            points: r.curve.iter().enumerate().map(|(i, f)| ((i + 1) as f64, f.mse)).collect(),
        })
        .collect();
    line_plot(&dir.join("mse_per_frame.png"), &series, false)?;
    manifest.set("checkpoint_id", &report.checkpoint_id);
    manifest.write(&dir)?;
    print!("{}", report.summary_text());
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let base = a.config.resolve(None)?;
    let variants = Variant::parse_list(&a.suite)?;
    let dir = a.out.prepare("ablate")?;
    let mut manifest = Manifest::new("ablate", args());
    manifest.seed = Some(base.seed);
    manifest.config = Some(base.clone());
    manifest.set("suite", variants.iter().map(|v| v.name()).collect::<Vec<_>>().join(","));
    manifest.set("horizon", a.horizon);
    manifest.set("test_sequences", a.test_sequences);
    manifest.write(&dir)?;
    let opts = AblationOptions {
        base,
        variants,
        horizon: a.horizon,
        test_sequences: a.test_sequences,
        eval_batch: a.eval_batch,
    };
    let per_epoch = opts.base.steps_per_epoch();
    let mut current = String::new();
    let mut printer = progress_printer(0, per_epoch);
    let report = run_ablation(&opts, &dir, |name, row| {
        if name != current {
            eprintln!("== {}", name);
            current = name.to_string();
        }
        printer(row);
    })?;
    print!("{}", report.markdown());
    Ok(())
}

fn visualize(a: VisualizeArgs) -> Result<()> {
    let path = resolve_checkpoint(&a.checkpoint);
    let ck = Checkpoint::load(&path)?;
    let dir = a.out.prepare("visualize")?;
    let (videos, seed) = load_videos(&a.data, &ck, ck.model.input_len + a.horizon)?;
    let mut manifest = Manifest::new("visualize", args());
    manifest.seed = Some(seed);
    manifest.variant = ck.meta.variant.clone();
    manifest.set("checkpoint", path.display());
    manifest.set("checkpoint_id", ck.id()?);
    manifest.write(&dir)?;
    let net = TaylorNet::new(ck.model.clone())?;
    let files = export_visuals(&net, &ck.params, &videos, a.horizon, a.scale, &dir)?;
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<()> {
    let dir = a.out.prepare("verify-kernels")?;
    let mut manifest = Manifest::new("verify-kernels", args());
    manifest.seed = Some(a.seed);
    manifest.write(&dir)?;
    let mut failures = Vec::new();
    let mut lines = Vec::new();

    let m = moment_fit_check(a.moment_steps, a.seed)?;
    lines.push(format!(
        "moment fit: max filter loss {:.3e}, d/dx error {:.3e} (h=1) {:.3e} (h=1/2), ratio {:.1}, {:.2}s",
        m.max_filter_loss,
        m.derivative_error_unit,
        m.derivative_error_half,
        m.improvement(),
        m.seconds
    ));
    if !m.passes() {
        failures.push("moment fit");
    }

    let gates = gate_identity_check(a.gate_trials, a.seed)?;
    lines.push(format!(
        "gate identities: {} trials, max deviation {:.3e}",
        gates.trials,
        gates.max_deviation()
    ));
    if gates.max_deviation() != 0.0 {
        failures.push("gate identities");
    }

    let opts = GradcheckOptions {
        seed: a.seed,
        ..Default::default()
    };
    let grads = gradient_suite(&opts)?;
    for r in &grads {
        lines.push(format!("gradcheck {:<20} max rel error {:.3e}", r.component, r.max_rel_error()));
        if !r.passes(a.tolerance) {
            failures.push("gradcheck");
        }
    }

    let probes = tpu_anchoring_probe(&[1, 5, 9], a.seed)?;
    for p in &probes {
        lines.push(format!(
            "anchoring t={}: later-frame grad {:.3e}, first-frame grad {:.3e}",
            p.t, p.later_frames_max_grad, p.first_frame_max_grad
        ));
        if !p.passes() {
            failures.push("anchoring");
        }
    }

    let json = serde_json::json!({
        "moment_fit": m,
        "gates": gates,
        "gradcheck": grads,
        "anchoring": probes,
        "passed": failures.is_empty(),
    });
    let text = serde_json::to_string_pretty(&json).map_err(|e| Error::Format {
        what: "verification report",
        detail: e.to_string(),
    })?;
    std::fs::write(dir.join("verify.json"), text).map_err(|e| io(&dir, e))?;
    let summary = lines.join("\n") + "\n";
    std::fs::write(dir.join("verify.txt"), &summary).map_err(|e| io(&dir, e))?;
    print!("{}", summary);
    if failures.is_empty() {
        println!("all checks passed");
        Ok(())
    } else {
        failures.dedup();
        Err(Error::Tolerance(format!("failed: {}", failures.join(", "))))
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let cfg = a.config.resolve(None)?;
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown split `{}` (expected train or test)",
                other
            )))
        }
    };
    if a.count == 0 {
        return Err(Error::InvalidArgument("count must be positive".into()));
    }
    let len = a.length.unwrap_or(cfg.model.input_len + cfg.model.output_len);
    let dir = a.out.prepare("generate-data")?;
    let mut manifest = Manifest::new("generate-data", args());
    manifest.seed = Some(cfg.seed);
    manifest.config = Some(cfg.clone());
    manifest.set("split", &a.split);
    manifest.set("count", a.count);
    manifest.set("length", len);
    manifest.write(&dir)?;

    let ds = BouncingDataset::new(&cfg.data, len, cfg.seed, split)?;
    let batch = ds.batch(0, a.count)?;
    let mut meta = std::collections::BTreeMap::new();
    meta.insert("split".to_string(), a.split.clone());
    meta.insert("base_seed".to_string(), cfg.seed.to_string());
    meta.insert("count".to_string(), a.count.to_string());
    meta.insert("length".to_string(), len.to_string());
    meta.insert("canvas".to_string(), cfg.data.canvas.to_string());
    meta.insert(
        "sequence_seeds".to_string(),
        batch.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
    );
    let ty = if a.u8 { ElementType::U8 } else { ElementType::F32 };
    let path = dir.join("sequences.tnseq");
    write_sequences(&path, &batch.frames, ty, &meta)?;
    println!("wrote {} sequences of {} frames to {}", a.count, len, path.display());
    Ok(())
}

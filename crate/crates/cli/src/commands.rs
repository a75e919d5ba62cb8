use std::fs;
use std::path::{Path, PathBuf};

use lightseg::data::{
    load_grayscale, read_manifest, save_gray16, save_mask, synthesize_set, write_manifest, Split, SynthParams,
};
use lightseg::metrics::threshold;
use lightseg::train::{
    evaluate, load_checkpoint, predict_probs, save_checkpoint, train_samples, training_items, CheckpointMeta,
    OptimizerKind, TrainConfig, TrainMode,
};
use lightseg::unet::{
    build_unet, conv_kind_name, count_params, human_count, reference_variants, ArchSummary, UNetConfig, UNetModel,
};

use crate::args::{Command, EvalArgs, InferArgs, ModelArgs, OptimizerArg, ParamsArgs, SynthArgs, TrainArgs};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

const MEMORY_WARN_BYTES: u128 = 4 << 30;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Params(a) => params(a),
        Command::Variants => variants(),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
    }
}

fn user(msg: impl Into<String>) -> CliError {
    CliError::User(msg.into())
}

fn synth(a: SynthArgs) -> Result<()> {
    let split = a.split.unwrap_or_else(|| {
        let held = a.count / 8;
        [a.count - 2 * held, held, held]
    });
    let params = SynthParams {
        count: a.count,
        size: a.size,
        pixel_spacing_mm: a.spacing,
        masses: a.masses,
        calcifications: a.calcs,
        mass_diameter_mm: a.mass_mm,
        calc_diameter_mm: a.calc_mm,
        contrast: a.contrast,
        seed: a.seed,
        split,
    };
    let samples = synthesize_set(&params)?;
    let m = write_manifest(&samples, &a.out)?;
    println!(
        "wrote {} phantoms ({}x{}, {} mm/px) to {}: train {}, val {}, test {}",
        m.entries.len(),
        a.size[0],
        a.size[1],
        a.spacing,
        a.out.display(),
        m.count(Split::Train),
        m.count(Split::Val),
        m.count(Split::Test)
    );
    Ok(())
}

fn unet_config(m: &ModelArgs) -> Result<UNetConfig> {
    let cfg = UNetConfig::new(m.depth, m.filters, m.conv.into(), m.residual);
    cfg.validate()?;
    Ok(cfg)
}

fn warn_memory(summary: &ArchSummary, h: usize, w: usize, batch: usize) -> u128 {
    let bytes = summary.estimate_activation_bytes(h, w, batch);
    if bytes > MEMORY_WARN_BYTES {
        eprintln!(
            "warning: training activations for {h}x{w} (batch {batch}) need about {:.1} GiB; \
             reduce --depth/--filters, resize the data, or use --mode patch:P,S",
            bytes as f64 / (1u64 << 30) as f64
        );
    }
    bytes
}

fn params(a: ParamsArgs) -> Result<()> {
    let cfg = unet_config(&a.model)?;
    let summary = count_params(&cfg)?;
    print!("{}", summary.render_table());
    if let Some([h, w]) = a.size {
        cfg.check_extents(h, w)?;
        let bytes = warn_memory(&summary, h, w, 1);
        println!("activation estimate for {h}x{w}: {:.2} GiB", bytes as f64 / (1u64 << 30) as f64);
    }
    Ok(())
}

fn variants() -> Result<()> {
    println!(
        "{:<22} {:>5} {:>7} {:>9} {:>8} {:>12} {:>8} {:>8} {:>7}",
        "name", "depth", "filters", "conv", "residual", "params", "human", "claimed", "ratio"
    );
    for v in reference_variants() {
        let c = &v.config;
        let total = count_params(c)?.total_params;
        println!(
            "{:<22} {:>5} {:>7} {:>9} {:>8} {:>12} {:>8} {:>8} {:>7.3}",
            v.name,
            c.depth,
            c.base_filters,
            conv_kind_name(c.conv_kind),
            c.residual,
            total,
            human_count(total),
            human_count(v.claimed_params as usize),
            total as f64 / v.claimed_params
        );
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let ucfg = unet_config(&a.model)?;
    let optimizer = match a.optimizer {
        OptimizerArg::Adam => OptimizerKind::adam(),
        OptimizerArg::Sgd => OptimizerKind::sgd(),
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        optimizer,
        batch_size: a.batch_size,
        loss: a.loss.into(),
        mode: a.mode,
        seed: a.seed,
        threshold: a.threshold,
        grad_clip: (a.grad_clip > 0.0).then_some(a.grad_clip),
    };
    if !(a.lr > 0.0) {
        return Err(user(format!("--lr must be positive, got {}", a.lr)));
    }
    cfg.validate()?;

    let manifest = read_manifest(&a.data)?;
    let train_set = manifest.load_split(Split::Train)?;
    let val_set = manifest.load_split(Split::Val)?;
    if train_set.is_empty() {
        return Err(user(format!("{} has no training entries", a.data.display())));
    }
    let items = training_items(&train_set, cfg.mode)?;
    let (h, w) = items[0].extents();
    ucfg.check_extents(h, w)?;
    let summary = count_params(&ucfg)?;
    warn_memory(&summary, h, w, cfg.batch_size);
    match cfg.mode {
        TrainMode::FullImage => println!("training on {} full images of {h}x{w}", items.len()),
        TrainMode::Patch { patch, stride } => println!(
            "training on {} patches ({} per image, {patch}x{patch} at stride {stride})",
            items.len(),
            items.len() / train_set.len()
        ),
    }
    println!("model: {} parameters ({})", summary.total_params, human_count(summary.total_params));

    let mut model = build_unet(&ucfg, a.seed)?;
    let history = train_samples(&mut model, &train_set, &val_set, &cfg, |r| match r.val_mean_dice {
        Some(d) => println!("epoch {:>4}/{}  loss {:.6}  val DICE {:.4}", r.epoch, cfg.epochs, r.train_loss, d),
        None => println!("epoch {:>4}/{}  loss {:.6}", r.epoch, cfg.epochs, r.train_loss),
    })?;

    save_checkpoint(&model, Some(&cfg), cfg.epochs, &a.out)?;
    let history_path = a.history.unwrap_or_else(|| default_history_path(&a.out));
    fs::write(&history_path, history.to_json())
        .map_err(|e| user(format!("cannot write {}: {e}", history_path.display())))?;
    println!("wrote {} and {}", a.out.display(), history_path.display());
    match history.per_epoch.last().and_then(|r| r.val_mean_dice) {
        Some(d) => println!("final val mean DICE = {d:.4}"),
        None => println!("final train loss = {:.6} (no validation split)", history.per_epoch.last().map_or(f64::NAN, |r| r.train_loss)),
    }
    Ok(())
}

fn default_history_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".history.json");
    PathBuf::from(s)
}

fn load_model(path: &Path) -> Result<(UNetModel, CheckpointMeta)> {
    load_checkpoint(path).map_err(|e| CliError::Internal(e.to_string()))
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(user(format!("--threshold must lie in (0, 1), got {t}")));
    }
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    check_threshold(a.threshold)?;
    let (model, _) = load_model(&a.ckpt)?;
    let image = load_grayscale(&a.image)?;
    let (h, w) = (image.shape()[1], image.shape()[2]);
    model
        .config
        .check_extents(h, w)
        .map_err(|e| user(format!("{e}; pad or resize {} first", a.image.display())))?;
    let x = image.reshape(&[1, 1, h, w])?;
    let probs = predict_probs(&model, &x)?;
    let mask = threshold(&probs, a.threshold).reshape(&[h, w])?;
    save_mask(&a.out, &mask)?;
    if let Some(p) = &a.probs_out {
        save_gray16(p, &probs.reshape(&[1, h, w])?)?;
    }
    println!("wrote {} ({} of {} pixels positive)", a.out.display(), mask.count(), h * w);
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    check_threshold(a.threshold)?;
    let (model, _) = load_model(&a.ckpt)?;
    let manifest = read_manifest(&a.data)?;
    let report = evaluate(&model, &manifest, a.split, a.threshold)?;
    if let Some(p) = &a.report {
        fs::write(p, report.to_json()).map_err(|e| user(format!("cannot write {}: {e}", p.display())))?;
    }
    println!("mean DICE = {:.4} over {} images", report.mean_dice, report.image_count);
    Ok(())
}

//! Command-line interface. [`run`] executes one parsed command in-process.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use wrecon_core::data::{gen_phantoms, phantom_id, split_indices, PairedDataset, Sample, Split};
use wrecon_core::kspace::{generate_mask, DEFAULT_SIGMA_FRAC};
use wrecon_core::metrics::{evaluate_image, ImageMetrics};
use wrecon_core::model::{
    evaluate, init_cascade_from_standalone, train, EpochLog, NetworkKind, TrainControl,
};
use wrecon_core::stats::{wilcoxon_signed_rank, Wilcoxon};
use wrecon_core::{Adam, Cascade, Checkpoint, Lambda, Network, SamplingMask, TrainConfig, Wcnn};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{RunConfig, RunMode};
use crate::fsutil::{create_dir, write_atomic};
use crate::imgf::{load_image_f32, save_image_f32};
use crate::manifest::{resolve, Manifest, ManifestItem, VERSION as MANIFEST_VERSION};
use crate::maskfile::{load_mask, save_mask};
use crate::png::{export_png, load_any};
use crate::report::{load_report, save_report, Report};

#[derive(Debug, Parser)]
#[command(name = "wrecon", version, about = "Wavelet CNN reconstruction of undersampled MRI")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic phantoms and a dataset manifest.
    GenPhantoms(GenPhantomsArgs),
    /// Generate a Cartesian row-sampling mask.
    GenMask(GenMaskArgs),
    /// Train a standalone network or a deep cascade.
    Train(TrainArgs),
    /// Reconstruct images from simulated undersampled acquisitions.
    Reconstruct(ReconstructArgs),
    /// Score a checkpoint and the zero-filled baseline on a dataset split.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenPhantomsArgs {
    #[arg(long, default_value_t = 250)]
    pub count: usize,
    /// Side length in pixels; must be even.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scales the number of thin lines and dots per phantom.
    #[arg(long, default_value_t = 1.0)]
    pub density: f64,
    /// Fraction of phantoms assigned to the training split.
    #[arg(long, default_value_t = 0.8)]
    pub split_ratio: f64,
    /// Mask file to record in the manifest.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Also write a PNG preview of every phantom.
    #[arg(long)]
    pub png: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenMaskArgs {
    #[arg(long)]
    pub height: usize,
    #[arg(long, default_value_t = 5.0)]
    pub accel: f64,
    #[arg(long, default_value_t = 10)]
    pub center_lines: usize,
    /// Standard deviation of the row-selection Gaussian as a fraction of the height.
    #[arg(long, default_value_t = DEFAULT_SIGMA_FRAC)]
    pub sigma_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<RunMode>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Checkpoint path (best validation PSNR).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for `loss.csv`.
    #[arg(long)]
    pub reports: Option<PathBuf>,
    /// Standalone checkpoint used to initialize every cascade stage.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub block_depth: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub n_cascades: Option<usize>,
    /// Data-fidelity weight: a nonnegative number or `inf`.
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub share_weights: Option<bool>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Fully sampled images (IMGF or PNG); each is undersampled with the
    /// mask, reconstructed and compared against itself.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub window_lo: f32,
    #[arg(long, default_value_t = 1.0)]
    pub window_hi: f32,
    /// Absolute error mapped to white in the error map.
    #[arg(long, default_value_t = 0.25)]
    pub error_window: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Falls back to the manifest's mask.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    pub split: SplitArg,
    /// Report for the checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Report for the zero-filled baseline; defaults to `<out>_zero_filled.csv`.
    #[arg(long)]
    pub baseline_out: Option<PathBuf>,
    /// Another report to compare against with a paired Wilcoxon test.
    #[arg(long)]
    pub against: Option<PathBuf>,
    /// Test results; defaults to `<out>_wilcoxon.json`.
    #[arg(long)]
    pub wilcoxon_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenPhantoms(a) => gen_phantoms_cmd(&a),
        Command::GenMask(a) => gen_mask_cmd(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Reconstruct(a) => reconstruct_cmd(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
    }
}

fn with_suffix(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

/// `path` as seen from the directory holding `file`.
fn relative_to(path: &Path, file: &Path) -> PathBuf {
    let base = file.parent().unwrap_or(Path::new(""));
    match (std::path::absolute(path), std::path::absolute(base)) {
        (Ok(p), Ok(b)) => pathdiff::diff_paths(&p, &b).unwrap_or(p),
        _ => path.to_path_buf(),
    }
}

fn gen_phantoms_cmd(a: &GenPhantomsArgs) -> Result<()> {
    let phantoms = gen_phantoms(a.count, a.size, a.size, a.seed, a.density)?;
    let (train_idx, _) = split_indices(a.count, a.split_ratio, a.seed)?;
    let mut is_train = vec![false; a.count];
    for i in train_idx {
        is_train[i] = true;
    }
    create_dir(&a.out)?;
    let mut items = Vec::with_capacity(a.count);
    for (i, p) in phantoms.iter().enumerate() {
        let id = phantom_id(i);
        let file = PathBuf::from(format!("{id}.imgf"));
        save_image_f32(&p.image, &a.out.join(&file))?;
        if a.png {
            export_png(&p.image, &a.out.join(format!("{id}.png")), (0.0, 1.0))?;
        }
        items.push(ManifestItem {
            id,
            path: file,
            split: if is_train[i] { Split::Train } else { Split::Val },
        });
    }
    let n_train = is_train.iter().filter(|&&t| t).count();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        height: a.size,
        width: a.size,
        seed: a.seed,
        fine_detail_density: a.density,
        split_ratio: a.split_ratio,
        value_range: (0.0, 1.0),
        mask: a.mask.as_ref().map(|m| std::path::absolute(m).unwrap_or_else(|_| m.clone())),
        items,
    };
    manifest.save(&a.out.join("manifest.json"))?;
    eprintln!(
        "wrote {} phantoms ({} train / {} val) at {}x{} with seed {} to {}",
        a.count,
        n_train,
        a.count - n_train,
        a.size,
        a.size,
        a.seed,
        a.out.display()
    );
    Ok(())
}

fn gen_mask_cmd(a: &GenMaskArgs) -> Result<()> {
    let mask = generate_mask(a.height, a.accel, a.center_lines, a.sigma_frac, a.seed)?;
    save_mask(&mask, &a.out)?;
    eprintln!(
        "mask: {} of {} rows kept (accel {}, {} center lines, seed {}) -> {}",
        mask.kept_count(),
        a.height,
        a.accel,
        a.center_lines,
        a.seed,
        a.out.display()
    );
    Ok(())
}

fn parse_lambda(s: &str) -> Result<Lambda> {
    let json = match s.parse::<f64>() {
        Ok(v) if v.is_finite() => serde_json::json!(v),
        _ => serde_json::json!(s),
    };
    serde_json::from_value(json).with_context(|| format!("invalid lambda {s:?}"))
}

/// Config file (if any) with flags applied on top.
pub fn resolve_run_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    let paths = &mut cfg.paths;
    for (slot, flag) in [
        (&mut paths.manifest, &a.manifest),
        (&mut paths.mask, &a.mask),
        (&mut paths.checkpoint, &a.out),
        (&mut paths.reports, &a.reports),
        (&mut paths.init_from, &a.init_from),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    let t = &mut cfg.training;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.lr = a.lr.unwrap_or(t.lr);
    t.seed = a.seed.unwrap_or(t.seed);
    let w = &mut cfg.wcnn;
    w.levels = a.levels.unwrap_or(w.levels);
    w.block_depth = a.block_depth.unwrap_or(w.block_depth);
    w.base_channels = a.base_channels.unwrap_or(w.base_channels);
    let c = &mut cfg.cascade;
    c.n_cascades = a.n_cascades.unwrap_or(c.n_cascades);
    c.share_weights = a.share_weights.unwrap_or(c.share_weights);
    if let Some(l) = &a.lambda {
        c.fidelity.lambda = parse_lambda(l)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mask_for(explicit: Option<&Path>, manifest_path: &Path, manifest: &Manifest) -> Result<SamplingMask> {
    let path = match (explicit, &manifest.mask) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(rel)) => resolve(manifest_path, rel),
        (None, None) => bail!("no mask given and the manifest does not name one"),
    };
    let mask = load_mask(&path).with_context(|| format!("reading mask {}", path.display()))?;
    ensure!(
        mask.height() == manifest.height,
        "mask has {} rows but images are {} tall",
        mask.height(),
        manifest.height
    );
    Ok(mask)
}

fn load_split(manifest_path: &Path, manifest: &Manifest, mask: &SamplingMask, split: Split) -> Result<PairedDataset> {
    let items = manifest
        .items_in(split)
        .map(|it| {
            let path = resolve(manifest_path, &it.path);
            let x = load_image_f32(&path).with_context(|| format!("reading {}", path.display()))?;
            ensure!(
                x.shape() == [manifest.height, manifest.width],
                "{} is {:?}, manifest says {}x{}",
                path.display(),
                x.shape(),
                manifest.height,
                manifest.width
            );
            Ok(Sample::acquire(it.id.clone(), x, mask)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairedDataset {
        split,
        mask: mask.clone(),
        items,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn loss_csv(logs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_nmse,val_psnr,val_ssim,val_hfen\n");
    for l in logs {
        let v = l.val.map(|v| v.mean);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            l.epoch,
            fmt_opt(l.train_loss),
            fmt_opt(v.map(|m| m.nmse)),
            fmt_opt(v.map(|m| m.psnr)),
            fmt_opt(v.map(|m| m.ssim)),
            fmt_opt(v.map(|m| m.hfen)),
        );
    }
    s
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_run_config(a)?;
    let manifest_path = cfg.paths.manifest.clone().expect("validated");
    let ck_path = cfg.paths.checkpoint.clone().expect("validated");
    let manifest = Manifest::load(&manifest_path)
        .with_context(|| format!("reading manifest {}", manifest_path.display()))?;
    cfg.wcnn.check_input(manifest.height, manifest.width)?;
    let mask = mask_for(cfg.paths.mask.as_deref(), &manifest_path, &manifest)?;
    let train_set = load_split(&manifest_path, &manifest, &mask, Split::Train)?;
    let val_set = load_split(&manifest_path, &manifest, &mask, Split::Val)?;
    ensure!(!train_set.is_empty(), "manifest has no training items");

    let seed = cfg.training.seed;
    let mut net = match cfg.mode {
        RunMode::Standalone => Network::Standalone(Wcnn::new(cfg.wcnn.clone(), seed)?),
        RunMode::Cascade => match &cfg.paths.init_from {
            Some(p) => {
                let ck = load_checkpoint(p).with_context(|| format!("reading {}", p.display()))?;
                Network::Cascade(init_cascade_from_standalone(&ck, cfg.cascade.clone(), &cfg.wcnn)?)
            }
            None => {
                let blocks = (0..cfg.cascade.block_count())
                    .map(|i| Wcnn::new(cfg.wcnn.clone(), seed.wrapping_add(i as u64)))
                    .collect::<wrecon_core::Result<Vec<_>>>()?;
                Network::Cascade(Cascade::new(cfg.cascade.clone(), blocks)?)
            }
        },
    };
    let train_cfg = TrainConfig {
        epochs: cfg.training.epochs,
        batch_size: cfg.training.batch_size,
        seed,
        adam: Adam::with_lr(cfg.training.lr),
        start_epoch: 0,
    };
    let reports = cfg
        .paths
        .reports
        .clone()
        .unwrap_or_else(|| ck_path.parent().map(Path::to_path_buf).unwrap_or_default());
    if !reports.as_os_str().is_empty() {
        create_dir(&reports)?;
    }
    if let Some(dir) = ck_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let loss_path = reports.join("loss.csv");
    eprintln!(
        "training {:?}: {} train / {} val, {} epochs, batch {}, lr {}, seed {}",
        cfg.mode,
        train_set.len(),
        val_set.len(),
        train_cfg.epochs,
        train_cfg.batch_size,
        cfg.training.lr,
        seed
    );

    let has_val = !val_set.is_empty();
    let mut best = f64::NEG_INFINITY;
    let mut history: Vec<EpochLog> = Vec::new();
    let last_epoch = train_cfg.epochs;
    train::<anyhow::Error>(
        &mut net,
        &train_set,
        has_val.then_some(&val_set),
        &train_cfg,
        |log, net| {
            let mut line = format!("epoch {:>4}", log.epoch);
            if let Some(l) = log.train_loss {
                let _ = write!(line, "  loss {l:.6}");
            }
            if let Some(v) = &log.val {
                let m = v.mean;
                let _ = write!(
                    line,
                    "  val psnr {:.3} ssim {:.4} nmse {:.5} hfen {:.4}",
                    m.psnr, m.ssim, m.nmse, m.hfen
                );
            }
            eprintln!("{line}");
            history.push(log.clone());
            let score = log.val.map(|v| v.mean.psnr);
            let improved = match score {
                Some(p) => p > best,
                None => log.epoch == last_epoch,
            };
            if improved {
                best = score.unwrap_or(best);
                let ck = Checkpoint::capture(net, &train_cfg, log.epoch, seed);
                save_checkpoint(&ck, &ck_path)?;
            }
            write_atomic(&loss_path, loss_csv(&history).as_bytes())?;
            Ok(TrainControl::Continue)
        },
    )?;
    eprintln!("best checkpoint -> {}", ck_path.display());
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn reconstruct_cmd(a: &ReconstructArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let net = ck.restore()?;
    let mask = load_mask(&a.mask)?;
    create_dir(&a.out)?;
    let window = (a.window_lo, a.window_hi);
    for input in &a.input {
        let x = load_any(input).with_context(|| format!("reading {}", input.display()))?;
        let (h, w) = (x.shape()[0], x.shape()[1]);
        ensure!(
            h == mask.height(),
            "{} is {h}x{w} but the mask has {} rows",
            input.display(),
            mask.height()
        );
        net.wcnn_config().check_input(h, w)?;
        let name = stem(input);
        let sample = Sample::acquire(name.clone(), x, &mask)?;
        let recon = net.reconstruct(&sample, &mask)?;
        let err = recon.zip_map(&sample.x_t, |r, t| (t - r).abs())?;
        let out = |suffix: &str, ext: &str| a.out.join(format!("{name}_{suffix}.{ext}"));
        save_image_f32(&recon, &out("recon", "imgf"))?;
        save_image_f32(&sample.x_u, &out("zero_filled", "imgf"))?;
        export_png(&recon, &out("recon", "png"), window)?;
        export_png(&sample.x_u, &out("zero_filled", "png"), window)?;
        export_png(&err, &out("error", "png"), (0.0, a.error_window))?;
        let m = evaluate_image(&recon, &sample.x_t)?;
        eprintln!(
            "{name}: psnr {:.3} ssim {:.4} nmse {:.5} hfen {:.4}",
            m.psnr, m.ssim, m.nmse, m.hfen
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct PairedTest {
    metric: &'static str,
    #[serde(flatten)]
    result: Wilcoxon,
}

#[derive(Serialize)]
struct WilcoxonReport {
    alpha: f64,
    report: PathBuf,
    against: PathBuf,
    tests: Vec<PairedTest>,
}

/// Paired Wilcoxon tests of every metric; both reports must cover the same ids.
pub fn compare_reports(a: &Report, b: &Report, alpha: f64) -> Result<Vec<(&'static str, Wilcoxon)>> {
    let mut ids_a: Vec<&str> = a.rows.iter().map(|r| r.0.as_str()).collect();
    let mut ids_b: Vec<&str> = b.rows.iter().map(|r| r.0.as_str()).collect();
    ids_a.sort_unstable();
    ids_b.sort_unstable();
    ensure!(ids_a == ids_b, "reports cover different image sets");
    let paired: Vec<(&ImageMetrics, &ImageMetrics)> = a
        .rows
        .iter()
        .map(|(id, m)| (m, b.get(id).expect("same id set")))
        .collect();
    ImageMetrics::NAMES
        .iter()
        .enumerate()
        .map(|(k, &name)| {
            let xs: Vec<f64> = paired.iter().map(|p| p.0.values()[k]).collect();
            let ys: Vec<f64> = paired.iter().map(|p| p.1.values()[k]).collect();
            Ok((name, wilcoxon_signed_rank(&xs, &ys, alpha)?))
        })
        .collect()
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let net = ck.restore()?;
    let manifest = Manifest::load(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    net.wcnn_config().check_input(manifest.height, manifest.width)?;
    let mask = mask_for(a.mask.as_deref(), &a.manifest, &manifest)?;
    let splits: &[Split] = match a.split {
        SplitArg::Train => &[Split::Train],
        SplitArg::Val => &[Split::Val],
        SplitArg::All => &[Split::Train, Split::Val],
    };
    let mut items = Vec::new();
    for &s in splits {
        items.extend(load_split(&a.manifest, &manifest, &mask, s)?.items);
    }
    ensure!(!items.is_empty(), "no images in the selected split");
    let data = PairedDataset {
        split: splits[0],
        mask: mask.clone(),
        items,
    };
    let scores = evaluate(&net, &data)?;
    let baseline = data
        .items
        .iter()
        .map(|s| evaluate_image(&s.x_u, &s.x_t))
        .collect::<wrecon_core::Result<Vec<_>>>()?;
    let ids = || data.items.iter().map(|s| s.id.clone());
    let report = Report::new(ids().zip(scores).collect())?;
    let base_report = Report::new(ids().zip(baseline).collect())?;
    save_report(&report, &a.out)?;
    let base_path = a.baseline_out.clone().unwrap_or_else(|| with_suffix(&a.out, "_zero_filled", "csv"));
    save_report(&base_report, &base_path)?;
    let kind = match ck.meta.kind {
        NetworkKind::Standalone => "standalone",
        NetworkKind::Cascade => "cascade",
    };
    for (label, r) in [(kind, &report), ("zero-filled", &base_report)] {
        let (m, s) = (r.summary.mean, r.summary.std);
        eprintln!(
            "{label:>12}: psnr {:.3} ± {:.3}  ssim {:.4} ± {:.4}  nmse {:.5} ± {:.5}  hfen {:.4} ± {:.4}",
            m.psnr, s.psnr, m.ssim, s.ssim, m.nmse, s.nmse, m.hfen, s.hfen
        );
    }
    if let Some(other) = &a.against {
        let other_report = load_report(other).with_context(|| format!("reading {}", other.display()))?;
        let tests = compare_reports(&report, &other_report, a.alpha)?;
        for (name, t) in &tests {
            eprintln!(
                "wilcoxon {name}: W = {} p = {:.4e} ({})",
                t.statistic,
                t.p_value,
                if t.significant { "significant" } else { "not significant" }
            );
        }
        let out = a.wilcoxon_out.clone().unwrap_or_else(|| with_suffix(&a.out, "_wilcoxon", "json"));
        let doc = WilcoxonReport {
            alpha: a.alpha,
            report: relative_to(&a.out, &out),
            against: relative_to(other, &out),
            tests: tests.into_iter().map(|(metric, result)| PairedTest { metric, result }).collect(),
        };
        let mut json = serde_json::to_vec_pretty(&doc)?;
        json.push(b'\n');
        write_atomic(&out, &json)?;
    }
    Ok(())
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use roadda::config::RunConfig;
use roadda::data::io::{load_rgb, save_mask, save_probability_map, save_rgb};
use roadda::data::{
    augment_records, standardize, synthesize_shift, AugmentationConfig, ChannelStats, DatasetManifest, DomainCorpus,
    LabelPolicy, ManifestEntry, RgbTile, SyntheticShiftSpec,
};
use roadda::division::binarize_prediction;
use roadda::metrics::evaluate_model;
use roadda::model::{Checkpoint, Generator};
use roadda::pipeline::{self, StageSelection};
use roadda::report::write_report;
use roadda::{Error, Result};

/// Stagewise domain adaptation for road segmentation.
#[derive(Parser, Debug)]
#[command(name = "roadda", version)]
struct Cli {
    /// Base directory for relative paths.
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic source/target corpus pair and its manifests.
    Synth { spec: PathBuf, out_dir: PathBuf },
    /// Crop, filter and eightfold-augment a labeled manifest into a new corpus.
    Prepare {
        manifest: PathBuf,
        out_dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        crops_per_image: usize,
        #[arg(long, default_value_t = 512)]
        crop_size: usize,
        #[arg(long)]
        min_road_pixels: Option<usize>,
        #[arg(long)]
        no_eightfold: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the training stages described by a config file.
    Train {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Stage::Both)]
        stage: Stage,
        /// Stage-1 checkpoint to start self-training from.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Validate and print the resolved config without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Evaluate a checkpoint on a labeled manifest.
    Eval {
        ckpt: PathBuf,
        manifest: PathBuf,
        #[arg(long, default_value = "eval.json")]
        out: PathBuf,
    },
    /// Predict a road mask and probability map for one image.
    Predict {
        ckpt: PathBuf,
        image: PathBuf,
        out: PathBuf,
        /// 16-bit probability map path; defaults to `<out>` with a `_prob` suffix.
        #[arg(long)]
        prob_out: Option<PathBuf>,
        /// Manifest whose channel statistics standardize the image; without it the image's own statistics are used.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Reflect-pad to a multiple of 16 and crop the outputs back.
        #[arg(long)]
        pad: bool,
    },
    /// Draw loss and IoU plots and a markdown summary for a finished run.
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Stage {
    Both,
    Inter,
    Selftrain,
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn synth(root: &Path, spec: &Path, out_dir: &Path) -> Result<()> {
    let spec = SyntheticShiftSpec::load(&resolve(root, spec))?;
    let out = resolve(root, out_dir);
    let m = synthesize_shift(&spec, &out)?;
    use roadda::data::synth::{SOURCE_TRAIN, TARGET_TRAIN, TARGET_VAL};
    print_json(&serde_json::json!({
        "source_train": {"path": out.join(SOURCE_TRAIN), "images": m.source_train.entries.len()},
        "target_train": {"path": out.join(TARGET_TRAIN), "images": m.target_train.entries.len()},
        "target_val": {"path": out.join(TARGET_VAL), "images": m.target_val.entries.len()},
    }))
}

fn prepare(root: &Path, manifest: &Path, out_dir: &Path, cfg: &AugmentationConfig, seed: u64) -> Result<()> {
    let corpus = DomainCorpus::load_path(&resolve(root, manifest), LabelPolicy::Required)?;
    let records = augment_records(corpus.records(), cfg, seed)?;
    if records.is_empty() {
        return Err(Error::Invalid("augmentation filtered out every crop".into()));
    }
    let out = resolve(root, out_dir);
    for sub in ["images", "masks"] {
        std::fs::create_dir_all(out.join(sub)).map_err(|e| Error::Io { path: out.join(sub), source: e })?;
    }
    let mut entries = Vec::with_capacity(records.len());
    for r in &records {
        let image = format!("images/{}.png", r.id);
        let mask = format!("masks/{}.png", r.id);
        save_rgb(&r.tile, &out.join(&image))?;
        save_mask(r.mask.as_ref().expect("augmented records are labeled"), &out.join(&mask))?;
        entries.push(ManifestEntry { id: r.id.clone(), image, mask: Some(mask), domain: r.domain });
    }
    let mut built = DatasetManifest::build(&out, entries)?;
    built.root = ".".into();
    let path = out.join("manifest.json");
    built.save(&path)?;
    print_json(&serde_json::json!({"manifest": path, "images": records.len()}))
}

fn train(root: &Path, config: &Path, stage: Stage, from: Option<&Path>, dry_run: bool) -> Result<()> {
    let cfg = RunConfig::load(&resolve(root, config))?.with_env_overrides();
    let selection = match (stage, from) {
        (Stage::Selftrain, Some(f)) => StageSelection::SelfTrain { from: resolve(root, f) },
        (Stage::Selftrain, None) => return Err(Error::Config("--stage selftrain requires --from <ckpt>".into())),
        (_, Some(_)) => return Err(Error::Config("--from only applies to --stage selftrain".into())),
        (Stage::Both, None) => StageSelection::Both,
        (Stage::Inter, None) => StageSelection::Inter,
    };
    if dry_run {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let summary = pipeline::run(&cfg, root, &selection)?;
    print_json(&summary)
}

fn eval(root: &Path, ckpt: &Path, manifest: &Path, out: &Path) -> Result<()> {
    let manifest = DatasetManifest::load(&resolve(root, manifest))?;
    if !manifest.is_labeled() {
        return Err(Error::Invalid("evaluation needs a manifest with a mask for every entry".into()));
    }
    let ckpt = Checkpoint::load(&resolve(root, ckpt))?;
    let generator = Generator::new(ckpt.config.clone())?;
    let corpus = DomainCorpus::load_for_evaluation(&manifest)?;
    let summary = evaluate_model(&generator, &ckpt.params, &corpus)?.summary();
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    let out = resolve(root, out);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    std::fs::write(&out, &text).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    print!("{text}");
    Ok(())
}

/// Index into `0..n` after mirroring about the edges without repeating them.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let k = i % period;
    if k < n {
        k
    } else {
        period - k
    }
}

fn reflect_pad(tile: &RgbTile, multiple: usize) -> RgbTile {
    let (h, w) = (tile.height(), tile.width());
    let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    let mut px = Vec::with_capacity(ph * pw * 3);
    for r in 0..ph {
        for c in 0..pw {
            px.extend_from_slice(&tile.pixel(reflect(r, h), reflect(c, w)));
        }
    }
    RgbTile::new(ph, pw, px).expect("padded size matches")
}

fn crop_plane(plane: &[f32], width: usize, height: usize, out_w: usize) -> Vec<f32> {
    (0..height).flat_map(|r| plane[r * width..r * width + out_w].iter().copied()).collect()
}

fn predict(
    root: &Path,
    ckpt: &Path,
    image: &Path,
    out: &Path,
    prob_out: Option<&Path>,
    manifest: Option<&Path>,
    pad: bool,
) -> Result<()> {
    let ckpt = Checkpoint::load(&resolve(root, ckpt))?;
    let generator = Generator::new(ckpt.config.clone())?;
    let tile = load_rgb(&resolve(root, image))?;
    let (h, w) = (tile.height(), tile.width());
    if !pad && (h % 16 != 0 || w % 16 != 0) {
        return Err(Error::Shape(format!("{h}x{w} image is not divisible by 16; pass --pad")));
    }
    let stats = match manifest {
        Some(m) => DatasetManifest::load(&resolve(root, m))?.stats,
        None => ChannelStats::from_pixels([tile.pixels()])?,
    };
    let input_tile = if pad { reflect_pad(&tile, 16) } else { tile };
    let input = standardize(&input_tile, &stats)?;
    let map = generator.generator_forward(&ckpt.params, &input)?.remove(0);
    let road = crop_plane(map.road_probs(), map.width(), h, w);
    let cropped = roadda::model::ProbabilityMap::from_road_probs(h, w, &road)?;
    let mask = binarize_prediction(&cropped);

    let out = resolve(root, out);
    let prob_path = match prob_out {
        Some(p) => resolve(root, p),
        None => {
            let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "pred".into());
            out.with_file_name(format!("{stem}_prob.png"))
        }
    };
    for path in [&out, &prob_path] {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        }
    }
    save_mask(&mask, &out)?;
    save_probability_map(&road, h, w, &prob_path)?;
    print_json(&serde_json::json!({
        "mask": out,
        "probability_map": prob_path,
        "height": h,
        "width": w,
        "road_pixels": mask.road_pixels(),
    }))
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.root.as_path();
    match cli.command {
        Command::Synth { spec, out_dir } => synth(root, &spec, &out_dir),
        Command::Prepare { manifest, out_dir, crops_per_image, crop_size, min_road_pixels, no_eightfold, seed } => {
            let cfg = AugmentationConfig { crops_per_image, crop_size, min_road_pixels, do_eightfold: !no_eightfold };
            prepare(root, &manifest, &out_dir, &cfg, seed)
        }
        Command::Train { config, stage, from, dry_run } => train(root, &config, stage, from.as_deref(), dry_run),
        Command::Eval { ckpt, manifest, out } => eval(root, &ckpt, &manifest, &out),
        Command::Predict { ckpt, image, out, prob_out, manifest, pad } => {
            predict(root, &ckpt, &image, &out, prob_out.as_deref(), manifest.as_deref(), pad)
        }
        Command::Report { run_dir, out } => {
            let dir = resolve(root, &run_dir);
            let out = out.map(|o| resolve(root, &o));
            let files = write_report(&dir, out.as_deref())?;
            print_json(&serde_json::json!({"plots": files.plots, "summary": files.summary}))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFinite { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_mirrors_without_repeating_edges() {
        let idx: Vec<usize> = (0..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, [0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let px: Vec<f32> = (0..5 * 3 * 3).map(|i| i as f32 / 45.0).collect();
        let tile = RgbTile::new(5, 3, px).unwrap();
        let padded = reflect_pad(&tile, 16);
        assert_eq!((padded.height(), padded.width()), (16, 16));
        assert_eq!(padded.crop(0, 0, 5, 3), tile);
    }
}

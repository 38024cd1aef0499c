use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};

use fame::config::{RunConfig, SEED_ENV};
use fame::data::imaging::{read_png, write_gray, write_rgb};
use fame::data::{
    extract_patches, generate_synthetic_scene, list_pairs, load_pair, save_pair, scene_seeds, wald_degrade,
    Container, Recipe, SamplePair,
};
use fame::dct::{dct2, frequency_decomposition, make_mask_label, LowFrequencyRegion, MaskParams};
use fame::model::FameNet;
use fame::tensor::{Scalar, Tape, Tensor};
use fame::trainer::{self, Checkpoint, EvalMode, FINAL_CHECKPOINT, LOG_FILE};

use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::{usage, Failure};

type CmdResult = Result<(), Failure>;

/// Values fixed by a manifest when a run is repeated.
#[derive(Clone, Debug, Default)]
pub struct Preset {
    pub seed: Option<u64>,
    pub config: Option<Vec<(String, String)>>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Region {
    Triangle,
    Square,
}

#[derive(Args, Clone, Debug)]
pub struct MaskOpts {
    /// Low-frequency region size as a fraction of the spectrum.
    #[arg(long, default_value_t = 0.1)]
    pub radius_fraction: f64,
    /// Quantile of the high-pass response above which a pixel is high frequency.
    #[arg(long, default_value_t = 0.5)]
    pub quantile: f64,
    /// Absolute response floor below which a pixel is low frequency.
    #[arg(long, default_value_t = 0.01)]
    pub min_response: f64,
    #[arg(long, value_enum, default_value_t = Region::Triangle)]
    pub region: Region,
}

impl MaskOpts {
    fn params(&self) -> Result<MaskParams, Failure> {
        let p = MaskParams {
            low_freq_radius_fraction: self.radius_fraction,
            magnitude_quantile: self.quantile,
            min_response: self.min_response,
            region: match self.region {
                Region::Triangle => LowFrequencyRegion::Triangle,
                Region::Square => LowFrequencyRegion::Square,
            },
        };
        p.validate().map_err(usage)?;
        Ok(p)
    }

    fn entries(&self) -> Vec<(String, String)> {
        vec![
            ("radius_fraction".into(), format!("{:?}", self.radius_fraction)),
            ("quantile".into(), format!("{:?}", self.quantile)),
            ("min_response".into(), format!("{:?}", self.min_response)),
            ("region".into(), format!("{:?}", self.region).to_lowercase()),
        ]
    }
}

fn parse_triplet(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("`{t}` is not a band index")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated band indices".to_string())
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| usage(anyhow!("{SEED_ENV}=`{v}` is not an integer"))),
        Err(_) => Ok(None),
    }
}

fn check_out_dir(dir: &Path) -> CmdResult {
    if dir.exists() && !dir.is_dir() {
        return Err(usage(anyhow!("output path {} exists and is not a directory", dir.display())));
    }
    Ok(())
}

/// Channel mean of sample 0.
fn channel_mean<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    let s = t.shape();
    let mut out = vec![0.0; s.plane()];
    for c in 0..s.c {
        for (o, v) in out.iter_mut().zip(t.plane(0, c)) {
            *o += v.as_f64() / s.c as f64;
        }
    }
    out
}

#[derive(Args, Debug)]
pub struct DatagenArgs {
    /// Base seed; defaults to $FAME_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Edge of each high-resolution scene in pixels.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value = "mixed")]
    pub recipe: Recipe,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub factor: usize,
    #[arg(long, default_value_t = 4)]
    pub bands: usize,
    /// Patch edge in low-resolution pixels.
    #[arg(long, default_value_t = 32)]
    pub patch: usize,
    /// Patch stride in low-resolution pixels; defaults to the patch edge.
    #[arg(long)]
    pub stride: Option<usize>,
    #[command(flatten)]
    pub mask: MaskOpts,
    /// Also write an RGB preview of every scene.
    #[arg(long)]
    pub preview: bool,
    /// Bands shown as red, green and blue in previews.
    #[arg(long, default_value = "2,1,0", value_parser = parse_triplet)]
    pub rgb: [usize; 3],
}

pub fn datagen(a: DatagenArgs, argv: Vec<String>, preset: Preset) -> CmdResult {
    let seed = match a.seed.or(preset.seed) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let stride = a.stride.unwrap_or(a.patch);
    let fail = |msg: String| Err(usage(anyhow!(msg)));
    if a.count == 0 {
        return fail("--count must be at least 1".into());
    }
    if a.factor < 2 {
        return fail(format!("--factor must be at least 2, got {}", a.factor));
    }
    if a.size < 128 || a.size % 4 != 0 || a.size % a.factor != 0 {
        return fail(format!(
            "--size must be at least 128 and a multiple of 4 and of --factor {}, got {}",
            a.factor, a.size
        ));
    }
    if a.bands == 0 {
        return fail("--bands must be positive".into());
    }
    if a.patch == 0 || stride == 0 || a.patch > a.size / a.factor {
        return fail(format!(
            "--patch {} with stride {stride} does not fit a {}-pixel low-resolution scene",
            a.patch,
            a.size / a.factor
        ));
    }
    if a.preview && a.rgb.iter().any(|&b| b >= a.bands) {
        return fail(format!("--rgb {:?} names a band outside 0..{}", a.rgb, a.bands));
    }
    let params = a.mask.params()?;
    check_out_dir(&a.out_dir)?;

    let mut config = vec![
        ("count".to_string(), a.count.to_string()),
        ("size".into(), a.size.to_string()),
        ("recipe".into(), a.recipe.to_string()),
        ("factor".into(), a.factor.to_string()),
        ("bands".into(), a.bands.to_string()),
        ("patch".into(), a.patch.to_string()),
        ("stride".into(), stride.to_string()),
    ];
    config.extend(a.mask.entries());
    let (scenes_dir, patches_dir) = (a.out_dir.join("scenes"), a.out_dir.join("patches"));
    let manifest = RunManifest {
        command: "datagen".into(),
        argv,
        seed,
        config,
        inputs: vec![],
        outputs: vec![("out_dir".into(), a.out_dir.clone())],
    }
    .write(&a.out_dir)?;
    for dir in [&scenes_dir, &patches_dir] {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut n_patches = 0;
    for (i, s) in scene_seeds(seed, a.count).into_iter().enumerate() {
        let scene = generate_synthetic_scene(s, a.size, a.recipe, a.bands)?;
        let pair = wald_degrade(&scene, a.factor, &params)?;
        save_pair(&pair, &scenes_dir.join(format!("scene_{i:03}.fame")))?;
        for p in extract_patches(&pair, a.patch, stride)? {
            let fame::data::Origin::Patch { row, col } = p.origin else { unreachable!("patches carry their origin") };
            save_pair(&p, &patches_dir.join(format!("scene_{i:03}_r{row:03}_c{col:03}.fame")))?;
            n_patches += 1;
        }
        if a.preview {
            write_rgb(&scenes_dir.join(format!("scene_{i:03}.png")), &scene.hrms, a.rgb)?;
        }
    }
    RunManifest::finish(&manifest)?;
    println!("wrote {} scenes and {n_patches} patches to {}", a.count, a.out_dir.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct MaskArgs {
    /// PNG image or stored pair (its ground truth is used).
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub mask: MaskOpts,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// File names written by `mask`.
pub const MASK_FILES: [&str; 4] = ["spectrum.png", "high.png", "low.png", "mask.png"];

fn read_image(path: &Path) -> anyhow::Result<Tensor<f32>> {
    if path.extension().is_some_and(|e| e == fame::data::PAIR_EXTENSION) {
        let c = Container::read(path)?;
        Ok(c.array("gt")?.clone())
    } else {
        Ok(read_png(path)?)
    }
}

pub fn mask(a: MaskArgs, argv: Vec<String>) -> CmdResult {
    let params = a.mask.params()?;
    let image = read_image(&a.input).with_context(|| format!("reading {}", a.input.display())).map_err(usage)?;
    check_out_dir(&a.out_dir)?;
    let s = image.shape();
    let label = make_mask_label(&image, &params)?;
    let spectrum = dct2(&image)?;
    let mut magnitude = vec![0.0; s.plane()];
    for c in &spectrum.coefficients {
        for (m, d) in magnitude.iter_mut().zip(c) {
            *m += d.abs().ln_1p() / s.c as f64;
        }
    }
    let (high, low) = frequency_decomposition(&image, &params)?;

    let manifest = RunManifest {
        command: "mask".into(),
        argv,
        seed: 0,
        config: a.mask.entries(),
        inputs: vec![("input".into(), a.input.clone())],
        outputs: vec![("out_dir".into(), a.out_dir.clone())],
    }
    .write(&a.out_dir)?;
    let path = |i: usize| a.out_dir.join(MASK_FILES[i]);
    write_gray(&path(0), &magnitude, s.h, s.w, true)?;
    write_gray(&path(1), &channel_mean(&high), s.h, s.w, true)?;
    write_gray(&path(2), &channel_mean(&low), s.h, s.w, true)?;
    let binary: Vec<f64> = label.high.iter().map(|&v| v as f64).collect();
    write_gray(&path(3), &binary, s.h, s.w, false)?;
    RunManifest::finish(&manifest)?;
    println!("high-frequency coverage {:.4}; images in {}", label.coverage(), a.out_dir.display());
    Ok(())
}

/// Pairs of `dir`, or of `dir/patches` when `dir` holds none directly.
fn load_dataset(dir: &Path) -> Result<Vec<SamplePair>, Failure> {
    if !dir.is_dir() {
        return Err(usage(anyhow!("data directory {} does not exist", dir.display())));
    }
    let mut paths = list_pairs(dir).map_err(usage)?;
    if paths.is_empty() && dir.join("patches").is_dir() {
        paths = list_pairs(&dir.join("patches")).map_err(usage)?;
    }
    if paths.is_empty() {
        return Err(usage(anyhow!("no .{} pairs in {}", fame::data::PAIR_EXTENSION, dir.display())));
    }
    let pairs = paths
        .iter()
        .map(|p| load_pair(p).with_context(|| format!("loading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(usage)?;
    let first = (pairs[0].gt.shape(), pairs[0].lrms.shape(), pairs[0].factor);
    if let Some((p, _)) = paths.iter().zip(&pairs).find(|(_, q)| (q.gt.shape(), q.lrms.shape(), q.factor) != first) {
        return Err(usage(anyhow!("{} differs in size from {}", p.display(), paths[0].display())));
    }
    Ok(pairs)
}

fn check_data_matches(cfg: &RunConfig, pairs: &[SamplePair]) -> CmdResult {
    let (bands, factor) = (pairs[0].gt.shape().c, pairs[0].factor);
    if bands != cfg.network.ms_bands || factor != cfg.network.upsample_factor {
        return Err(usage(anyhow!(
            "data has {bands} bands at factor {factor}, model expects {} bands at factor {}",
            cfg.network.ms_bands,
            cfg.network.upsample_factor
        )));
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Flat `key = value` configuration file; unset keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Remove the mask predictor; both expert banks see the full features.
    #[arg(long)]
    pub no_mask: bool,
    /// Replace the fusion expert mixture by a residual block of similar size.
    #[arg(long)]
    pub no_mixture: bool,
    /// Override the configured number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

fn resolve_train_config(a: &TrainArgs, preset: &Preset) -> Result<RunConfig, Failure> {
    if let Some(entries) = &preset.config {
        return RunConfig::from_entries(entries).map_err(usage);
    }
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(usage)?;
            RunConfig::parse(&text).map_err(usage)?
        }
        None => RunConfig::default(),
    };
    cfg.override_seed(std::env::var(SEED_ENV).ok().as_deref()).map_err(usage)?;
    cfg.network.ablation_disable_mask |= a.no_mask;
    cfg.network.ablation_replace_mixture |= a.no_mixture;
    if let Some(e) = a.epochs {
        cfg.set("epochs", &e.to_string()).map_err(usage)?;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

pub fn train(a: TrainArgs, argv: Vec<String>, preset: Preset) -> CmdResult {
    let cfg = resolve_train_config(&a, &preset)?;
    let data = load_dataset(&a.data_dir)?;
    check_data_matches(&cfg, &data)?;
    check_out_dir(&a.out_dir)?;

    let entries = cfg.entries();
    let manifest = RunManifest {
        command: "train".into(),
        argv,
        seed: cfg.train.seed,
        config: entries.clone(),
        inputs: vec![("data_dir".into(), a.data_dir.clone())],
        outputs: vec![("out_dir".into(), a.out_dir.clone())],
    }
    .write(&a.out_dir)?;
    println!("# resolved configuration\n{}", cfg.to_text());
    let (net, params) = FameNet::new::<f32>(cfg.network.clone(), cfg.train.seed)?;
    println!("{} pairs, {} parameters", data.len(), params.numel());
    let out = trainer::train(&net, params, &data, &cfg.train, &entries, Some(&a.out_dir))?;
    RunManifest::finish(&manifest)?;
    let last = cfg.train.epochs - 1;
    let rows: Vec<_> = out.log.epoch_rows(last).collect();
    let mean = |f: fn(&trainer::LogRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64;
    println!(
        "epoch {last}: rec {:.6}, total {:.6}; wrote {} and {}",
        mean(|r| r.loss.rec),
        mean(|r| r.loss.total),
        a.out_dir.join(FINAL_CHECKPOINT).display(),
        a.out_dir.join(LOG_FILE).display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Score without ground truth using D_λ, D_s and QNR.
    #[arg(long)]
    pub full_resolution: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// File names written by `eval`.
pub const METRICS_FILE: &str = "metrics.csv";
pub const UTILIZATION_FILE: &str = "utilization.csv";

/// Checkpoint, its configuration, the network and restored parameters.
fn open_checkpoint(path: &Path) -> Result<(Checkpoint, RunConfig, FameNet, fame::model::ParamStore<f32>), Failure> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display())).map_err(usage)?;
    let cfg = RunConfig::from_entries(&ck.config)
        .with_context(|| format!("configuration stored in {}", path.display()))
        .map_err(usage)?;
    let (net, _) = FameNet::new::<f32>(cfg.network.clone(), 0)?;
    let params = ck.restore(&net).map_err(usage)?;
    Ok((ck, cfg, net, params))
}

pub fn eval(a: EvalArgs, argv: Vec<String>) -> CmdResult {
    let (ck, cfg, net, params) = open_checkpoint(&a.checkpoint)?;
    let data = load_dataset(&a.data_dir)?;
    check_data_matches(&cfg, &data)?;
    check_out_dir(&a.out_dir)?;

    let manifest = RunManifest {
        command: "eval".into(),
        argv,
        seed: cfg.train.seed,
        config: ck.config.clone(),
        inputs: vec![("checkpoint".into(), a.checkpoint.clone()), ("data_dir".into(), a.data_dir.clone())],
        outputs: vec![("out_dir".into(), a.out_dir.clone())],
    }
    .write(&a.out_dir)?;
    let mode = if a.full_resolution { EvalMode::Full } else { EvalMode::Reduced };
    let ev = trainer::evaluate(&net, &params, &data, mode)?;
    let write = |name: &str, text: String| {
        let p = a.out_dir.join(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    };
    write(METRICS_FILE, ev.report.to_csv())?;
    let mut util = String::from("bank,scv\n");
    for (b, v) in &ev.utilization_scv {
        util.push_str(&format!("{b},{v:.8}\n"));
    }
    write(UTILIZATION_FILE, util)?;
    RunManifest::finish(&manifest)?;
    print!("{}", ev.report.pretty());
    for (b, v) in &ev.utilization_scv {
        println!("utilization scv [{b}]: {v:.6}");
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input_pair: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// File names written by `dump-features`.
pub const FEATURE_FILES: [&str; 6] = ["f_pan.png", "f_ms.png", "mask.png", "h_f.png", "l_f.png", "mixture.png"];

pub fn dump_features(a: DumpArgs, argv: Vec<String>) -> CmdResult {
    let (ck, cfg, net, params) = open_checkpoint(&a.checkpoint)?;
    if net.mask.is_none() {
        return Err(usage(anyhow!("{} was trained without the mask predictor", a.checkpoint.display())));
    }
    let pair = load_pair(&a.input_pair).with_context(|| format!("loading {}", a.input_pair.display())).map_err(usage)?;
    check_data_matches(&cfg, std::slice::from_ref(&pair))?;
    check_out_dir(&a.out_dir)?;

    let manifest = RunManifest {
        command: "dump-features".into(),
        argv,
        seed: cfg.train.seed,
        config: ck.config.clone(),
        inputs: vec![("checkpoint".into(), a.checkpoint.clone()), ("input_pair".into(), a.input_pair.clone())],
        outputs: vec![("out_dir".into(), a.out_dir.clone())],
    }
    .write(&a.out_dir)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let pan = tape.constant(pair.pan.clone());
    let lrms = tape.constant(pair.lrms.clone());
    let out = net.forward(&mut tape, &bound, pan, lrms, false, 0)?;
    let m = out.mask.expect("mask predictor present");
    let s = tape.value(out.f_c).shape();
    let high = tape.value(m.mask).plane(0, 0).iter().map(|&v| v as f64).collect::<Vec<_>>();
    let planes = [
        (channel_mean(tape.value(out.f_pan)), true),
        (channel_mean(tape.value(out.f_ms)), true),
        (high, false),
        (channel_mean(tape.value(out.h_f)), true),
        (channel_mean(tape.value(out.l_f)), true),
        (channel_mean(tape.value(out.mixture)), true),
    ];
    for (name, (plane, normalize)) in FEATURE_FILES.iter().zip(planes) {
        write_gray(&a.out_dir.join(name), &plane, s.h, s.w, normalize)?;
    }
    RunManifest::finish(&manifest)?;
    println!("wrote {} feature images to {}", FEATURE_FILES.len(), a.out_dir.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    /// Manifest of the run to repeat.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fresh output directory for the repeated run.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Recorded command line with the output directory replaced, and the
/// recorded seed and configuration.
pub fn rerun_plan(a: &RerunArgs) -> Result<(Vec<String>, Preset), Failure> {
    let path = if a.manifest.is_dir() { a.manifest.join(MANIFEST_FILE) } else { a.manifest.clone() };
    let m = RunManifest::read(&path).map_err(usage)?;
    let mut argv = m.argv.clone();
    let out = a.out_dir.display().to_string();
    let mut replaced = false;
    let mut i = 0;
    while i < argv.len() {
        if argv[i] == "--out-dir" && i + 1 < argv.len() {
            argv[i + 1] = out.clone();
            replaced = true;
            i += 1;
        } else if argv[i].starts_with("--out-dir=") {
            argv[i] = format!("--out-dir={out}");
            replaced = true;
        }
        i += 1;
    }
    if !replaced {
        return Err(usage(anyhow!("{} records no --out-dir", path.display())));
    }
    let config = (m.command == "train").then(|| m.config.clone());
    Ok((argv, Preset { seed: Some(m.seed), config }))
}

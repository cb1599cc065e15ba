//! `frontal` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid
//! manifest or protocol, 4 self-test failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use frontal::bundle::{build_reference_bundle, ReferenceBundle, ViewConfig};
use frontal::descriptors::{describe, hellinger, DescriptorConfig, LbpParams, Variant};
use frontal::frontalizer::{frontalize, probe_locations, FrontalizeOptions, Status};
use frontal::imagecore::{Image, Point2};
use frontal::landmarks::{sdm48_names, LandmarkSet, SDM48};
use frontal::learners::{
    train_symmetry_detectors, DetectorSet, ImageFeatures, NegativePolicy, SvmParams, DETECTOR_C, OSS_RIDGE,
    NEGATIVE_SET_SIZE,
};
use frontal::mesh::{load_model, save_model};
use frontal::pipeline::*;
use frontal::synth::reference_model;
use rayon::prelude::*;

const EXIT_RUNTIME: u8 = 1;
const EXIT_INVALID: u8 = 3;
const EXIT_SELF_TEST: u8 = 4;

#[derive(Parser)]
#[command(name = "frontal", version, about = "Face frontalization with a fixed 3D reference surface")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the built-in synthetic reference head as OBJ, texture and 3D landmarks.
    MakeModel {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render the frontal reference view and store it with its per-pixel maps.
    BuildBundle(BuildBundle),
    /// Render a synthetic corpus with landmark files and a manifest.
    MakeCorpus(MakeCorpus),
    /// Train the eight probe-patch classifiers used to pick the output.
    TrainDetectors(TrainDetectors),
    /// Frontalize one image.
    Frontalize(FrontalizeCmd),
    /// Frontalize every entry of a manifest.
    Batch(BatchCmd),
    /// Cross-validated pair verification on a manifest with identities.
    BenchVerify(BenchVerify),
    /// Cross-validated binary attribute classification on a labeled manifest.
    BenchGender(BenchGender),
    /// Frontalize the reference render and check it comes back unchanged.
    SelfTest {
        #[arg(long, env = "FRONTAL_BUNDLE")]
        bundle: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BuildBundle {
    #[arg(long)]
    out: PathBuf,
    /// Reference geometry; the built-in head is used when omitted.
    #[arg(long, requires = "landmarks3d")]
    obj: Option<PathBuf>,
    #[arg(long, requires = "obj")]
    texture: Option<PathBuf>,
    #[arg(long, requires = "obj")]
    landmarks3d: Option<PathBuf>,
    #[arg(long, default_value_t = STANDARD_SIZE)]
    size: usize,
}

#[derive(Args)]
struct MakeCorpus {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    identities: usize,
    #[arg(long, default_value_t = 10)]
    per_identity: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 45.0)]
    max_yaw: f64,
    /// Give half of the identities a lower-face texture cue and label them.
    #[arg(long)]
    gender_cue: bool,
    /// Bundle path written into the manifest options.
    #[arg(long, default_value = "reference.bundle")]
    bundle: PathBuf,
}

#[derive(Args)]
struct TrainDetectors {
    #[arg(long, env = "FRONTAL_BUNDLE")]
    bundle: PathBuf,
    /// Training photos; a synthetic corpus is rendered when omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    identities: usize,
    #[arg(long, default_value_t = 3)]
    per_identity: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    offsets_per_image: usize,
    #[arg(long, default_value_t = DETECTOR_C)]
    c: f64,
}

#[derive(Args)]
struct FrontalizeCmd {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "FRONTAL_BUNDLE")]
    bundle: PathBuf,
    #[arg(long, env = "FRONTAL_DETECTORS")]
    detectors: Option<PathBuf>,
    /// Detection box `x0,y0,x1,y1`; crops to standard coordinates first.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    r#box: Option<Vec<f64>>,
    #[arg(long, default_value_t = CROP_FACTOR)]
    crop_factor: f64,
    /// Polish the camera by minimizing reprojection error.
    #[arg(long)]
    refine: bool,
    /// Directory for the raw, symmetric, occlusion and count images.
    #[arg(long)]
    emit_debug: Option<PathBuf>,
}

#[derive(Args)]
struct BatchCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    emit_debug: bool,
    #[arg(long, env = "FRONTAL_BUNDLE")]
    bundle: Option<PathBuf>,
    #[arg(long, env = "FRONTAL_DETECTORS")]
    detectors: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Alignment {
    Frontalized,
    Planar,
    Both,
}

#[derive(Args)]
struct BenchCommon {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, env = "FRONTAL_BUNDLE")]
    bundle: Option<PathBuf>,
    #[arg(long, env = "FRONTAL_DETECTORS")]
    detectors: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    alignment: Alignment,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for report JSON and CSV files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BenchVerify {
    #[command(flatten)]
    common: BenchCommon,
    #[arg(long, default_value_t = 60)]
    pairs_per_class: usize,
    #[arg(long, default_value_t = NEGATIVE_SET_SIZE)]
    negatives: usize,
    #[arg(long, default_value_t = OSS_RIDGE)]
    ridge: f64,
}

#[derive(Args)]
struct BenchGender {
    #[command(flatten)]
    common: BenchCommon,
    /// Configurations to run: `lbp`, `lbp+fplbp`, optionally with `+dropout`.
    #[arg(long, value_delimiter = ',', default_value = "lbp,lbp+fplbp+dropout")]
    configs: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<PipelineError>() {
            Some(
                PipelineError::Manifest(_)
                | PipelineError::Protocol(_)
                | PipelineError::Leakage { .. }
                | PipelineError::SingleClassFold(_)
                | PipelineError::ZeroAreaBox,
            ) => EXIT_INVALID,
            _ => EXIT_RUNTIME,
        };
        Failure { code, error }
    }
}

fn invalid(msg: String) -> Failure {
    Failure {
        code: EXIT_INVALID,
        error: anyhow!(msg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::MakeModel { out_dir } => make_model(&out_dir),
        Command::BuildBundle(a) => build_bundle(a),
        Command::MakeCorpus(a) => make_corpus(a),
        Command::TrainDetectors(a) => train_detectors(a),
        Command::Frontalize(a) => frontalize_one(a),
        Command::Batch(a) => batch(a),
        Command::BenchVerify(a) => bench_verify_cmd(a),
        Command::BenchGender(a) => bench_gender_cmd(a),
        Command::SelfTest { bundle } => self_test(bundle),
    }
}

fn make_model(out_dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out_dir).with_context(|| out_dir.display().to_string())?;
    let (obj, tex, lm) = (
        out_dir.join("reference.obj"),
        out_dir.join("reference.png"),
        out_dir.join("reference_landmarks.json"),
    );
    save_model(&reference_model(), &obj, &tex, &lm)?;
    println!("wrote {}, {}, {}", obj.display(), tex.display(), lm.display());
    Ok(())
}

fn build_bundle(a: BuildBundle) -> Result<(), Failure> {
    let model = match (&a.obj, &a.landmarks3d) {
        (Some(obj), Some(lm)) => load_model(obj, a.texture.as_deref(), lm, sdm48_names())?,
        _ => reference_model(),
    };
    let view = ViewConfig {
        width: a.size,
        height: a.size,
        ..ViewConfig::default()
    };
    let bundle = build_reference_bundle(&model, &view, SDM48)?;
    bundle.save(&a.out)?;
    println!(
        "bundle {}x{} with {} valid pixels written to {}",
        bundle.width,
        bundle.height,
        bundle.valid_count(),
        a.out.display()
    );
    Ok(())
}

fn make_corpus(a: MakeCorpus) -> Result<(), Failure> {
    let spec = CorpusSpec {
        identities: a.identities,
        per_identity: a.per_identity,
        seed: a.seed,
        max_yaw: a.max_yaw,
        gender_cue: a.gender_cue,
        ..CorpusSpec::default()
    };
    let dir = &a.out_dir;
    fs::create_dir_all(dir.join("images")).with_context(|| dir.display().to_string())?;
    let items = generate_corpus(&spec);
    let entries: Vec<ManifestEntry> = items
        .par_iter()
        .enumerate()
        .map(|(i, it)| -> anyhow::Result<ManifestEntry> {
            let image = PathBuf::from(format!("images/{i:05}.png"));
            let landmarks = PathBuf::from(format!("images/{i:05}.json"));
            it.image.save(dir.join(&image))?;
            it.landmarks.save(dir.join(&landmarks))?;
            Ok(ManifestEntry {
                image,
                landmarks,
                identity: Some(it.identity.clone()),
                label: a.gender_cue.then(|| if it.label { "male" } else { "female" }.to_string()),
                detection: None,
            })
        })
        .collect::<anyhow::Result<_>>()?;
    let manifest = JobManifest {
        entries,
        options: ManifestOptions {
            bundle: a.bundle,
            detectors: None,
            output_dir: PathBuf::from("out"),
            emit_debug: false,
            seed: a.seed,
            crop_factor: CROP_FACTOR,
        },
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).with_context(|| path.display().to_string())?;
    println!("{} items written, manifest {}", items.len(), path.display());
    Ok(())
}

/// Image and landmarks of one entry, cropped to standard coordinates when a
/// detection box is given.
fn load_entry(entry: &ManifestEntry, schema: &str, crop_factor: f64) -> Result<(Image, LandmarkSet), PipelineError> {
    let mut image = Image::load(&entry.image)?;
    let transform = match entry.detection {
        Some(b) => Some(crop_transform(&b, crop_factor)?),
        None => None,
    };
    let landmarks = parse_landmarks(&entry.landmarks, schema, transform.as_ref())?;
    if let Some(t) = &transform {
        image = t.apply(&image);
    }
    Ok((image, landmarks))
}

fn crop_transform(b: &[f64], factor: f64) -> Result<CropTransform, PipelineError> {
    let cb = CropBox::from_corners(Point2::new(b[0], b[1]), Point2::new(b[2], b[3])).ok_or(PipelineError::ZeroAreaBox)?;
    CropTransform::new(&cb, factor, (STANDARD_SIZE, STANDARD_SIZE))
}

fn load_detectors(path: Option<&Path>) -> Result<Option<DetectorSet>, Failure> {
    match path {
        Some(p) => Ok(Some(
            DetectorSet::load(p, &LbpParams::default()).with_context(|| format!("loading detectors {}", p.display()))?,
        )),
        None => Ok(None),
    }
}

fn load_bundle(path: &Path) -> Result<ReferenceBundle, Failure> {
    Ok(ReferenceBundle::load(path).with_context(|| format!("loading bundle {}", path.display()))?)
}

fn train_detectors(a: TrainDetectors) -> Result<(), Failure> {
    let bundle = load_bundle(&a.bundle)?;
    let t = Instant::now();
    let images: Vec<Image> = match &a.manifest {
        Some(m) => {
            let manifest = JobManifest::load(m)?;
            let schema = bundle.landmarks.schema.clone();
            manifest
                .entries
                .par_iter()
                .filter_map(|e| {
                    let (img, lm) = load_entry(e, &schema, manifest.options.crop_factor).ok()?;
                    frontalize(&img, &lm, &bundle, None, &FrontalizeOptions::default())
                        .ok()?
                        .stages
                        .map(|s| s.raw)
                })
                .collect()
        }
        None => {
            let corpus = generate_corpus(&CorpusSpec {
                identities: a.identities,
                per_identity: a.per_identity,
                seed: a.seed,
                width: bundle.width,
                height: bundle.height,
                ..CorpusSpec::default()
            });
            detector_training_images(&corpus, &bundle)
        }
    };
    let policy = NegativePolicy {
        offsets_per_image: a.offsets_per_image,
        seed: a.seed,
        c: a.c,
        ..NegativePolicy::default()
    };
    let set = train_symmetry_detectors(&images, &probe_locations(&bundle), &policy, &LbpParams::default())?;
    set.save(&a.out)?;
    println!(
        "trained 8 detectors on {} images in {:.1?}, written to {}",
        images.len(),
        t.elapsed(),
        a.out.display()
    );
    Ok(())
}

fn frontalize_one(a: FrontalizeCmd) -> Result<(), Failure> {
    let bundle = load_bundle(&a.bundle)?;
    let detectors = load_detectors(a.detectors.as_deref())?;
    let entry = ManifestEntry {
        image: a.image.clone(),
        landmarks: a.landmarks.clone(),
        identity: None,
        label: None,
        detection: a.r#box.as_ref().map(|b| [b[0], b[1], b[2], b[3]]),
    };
    let (image, landmarks) = load_entry(&entry, &bundle.landmarks.schema, a.crop_factor)?;
    let opts = FrontalizeOptions {
        refine_pose: a.refine,
        crop_factor: a.crop_factor,
        ..FrontalizeOptions::default()
    };
    let t = Instant::now();
    let r = frontalize(&image, &landmarks, &bundle, detectors.as_ref(), &opts)?;
    let elapsed = t.elapsed();
    r.output.save(&a.out)?;
    if let (Some(dir), Some(st)) = (&a.emit_debug, &r.stages) {
        fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
        st.raw.save(dir.join("raw.png"))?;
        st.symmetric.save(dir.join("symmetric.png"))?;
        st.occlusion.to_color().save(dir.join("occlusion.png"))?;
        save_counts_png(&st.counts, dir.join("counts.png"))?;
    }
    let summary = serde_json::json!({
        "status": r.status,
        "selected": r.selected,
        "pose_rms": r.stages.as_ref().map(|s| s.pose.rms_reprojection),
        "condition": r.stages.as_ref().map(|s| s.pose.condition_flag),
        "votes_raw": r.votes.map(|v| v.raw),
        "votes_symmetric": r.votes.map(|v| v.symmetric),
        "error": r.error,
        "seconds": elapsed.as_secs_f64(),
    });
    println!("{summary}");
    if r.status == Status::Rejected {
        eprintln!("rejected; wrote the planar crop");
    }
    Ok(())
}

fn batch(a: BatchCmd) -> Result<(), Failure> {
    let mut manifest = JobManifest::load(&a.manifest)?;
    if let Some(b) = a.bundle {
        manifest.options.bundle = b;
    }
    if let Some(d) = a.detectors {
        manifest.options.detectors = Some(d);
    }
    if let Some(o) = a.out_dir {
        manifest.options.output_dir = o;
    }
    if let Some(s) = a.seed {
        manifest.options.seed = s;
    }
    manifest.options.emit_debug |= a.emit_debug;
    manifest.validate()?;
    let bundle = load_bundle(&manifest.options.bundle)?;
    let detectors = load_detectors(manifest.options.detectors.as_deref())?;
    let workers = if a.workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        a.workers
    };
    let (_, summary) = run_batch(&manifest, &bundle, detectors.as_ref(), workers)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// Manifest items with images and landmarks loaded.
struct Dataset {
    manifest: JobManifest,
    items: Vec<(Image, LandmarkSet)>,
}

fn load_dataset(path: &Path, bundle: &ReferenceBundle) -> Result<Dataset, Failure> {
    let manifest = JobManifest::load(path)?;
    let items = manifest
        .entries
        .par_iter()
        .map(|e| load_entry(e, &bundle.landmarks.schema, manifest.options.crop_factor))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { manifest, items })
}

fn bundle_path(arg: Option<PathBuf>, manifest: &Path) -> Result<PathBuf, Failure> {
    match arg {
        Some(p) => Ok(p),
        None => Ok(JobManifest::load(manifest)?.options.bundle),
    }
}

/// Aligned images of every item: frontalized outputs or planar crops.
fn align(data: &Dataset, bundle: &ReferenceBundle, detectors: Option<&DetectorSet>, planar: bool) -> Result<Vec<Image>, Failure> {
    let size = (bundle.width, bundle.height);
    let crop = data.manifest.options.crop_factor;
    Ok(data
        .items
        .par_iter()
        .map(|(img, lm)| -> anyhow::Result<Image> {
            if planar {
                Ok(planar_crop(img, lm, crop, size)?)
            } else {
                let opts = FrontalizeOptions {
                    crop_factor: crop,
                    ..FrontalizeOptions::default()
                };
                Ok(frontalize(img, lm, bundle, detectors, &opts)?.output)
            }
        })
        .collect::<anyhow::Result<_>>()?)
}

fn alignments(a: Alignment) -> Vec<(&'static str, bool)> {
    match a {
        Alignment::Frontalized => vec![("frontalized", false)],
        Alignment::Planar => vec![("planar", true)],
        Alignment::Both => vec![("frontalized", false), ("planar", true)],
    }
}

fn write_out(dir: &Option<PathBuf>, name: &str, text: &str) -> Result<(), Failure> {
    if let Some(d) = dir {
        fs::create_dir_all(d).with_context(|| d.display().to_string())?;
        let p = d.join(name);
        fs::write(&p, text).with_context(|| p.display().to_string())?;
    }
    Ok(())
}

fn bench_verify_cmd(a: BenchVerify) -> Result<(), Failure> {
    let c = &a.common;
    let bundle = load_bundle(&bundle_path(c.bundle.clone(), &c.manifest)?)?;
    let detectors = load_detectors(c.detectors.as_deref())?;
    let data = load_dataset(&c.manifest, &bundle)?;
    let identities: Vec<String> = data
        .manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| e.identity.clone().ok_or_else(|| invalid(format!("entry {i} has no identity"))))
        .collect::<Result<_, _>>()?;
    let split = verification_protocol(&identities, c.folds, a.pairs_per_class, c.seed)?;
    let cfg = VerifyConfig {
        negatives: a.negatives,
        ridge: a.ridge,
        seed: c.seed,
        ..VerifyConfig::default()
    };
    let dcfg = DescriptorConfig::default();
    for (name, planar) in alignments(c.alignment) {
        let images = align(&data, &bundle, detectors.as_ref(), planar)?;
        let features = images
            .par_iter()
            .map(|img| ImageFeatures::compute(img, &dcfg))
            .collect::<Result<Vec<_>, _>>()?;
        let report = bench_verify(&features, &identities, &split, &cfg)?;
        println!(
            "{name}: accuracy {:.4} ± {:.4} (SE over {} folds), AUC {:.4}",
            report.mean,
            report.se,
            report.fold_accuracy.len(),
            report.auc
        );
        write_out(&c.out_dir, &format!("verify_{name}_folds.csv"), &folds_csv(&report.fold_accuracy))?;
        write_out(&c.out_dir, &format!("verify_{name}_roc.csv"), &roc_csv(&report.roc))?;
        write_out(&c.out_dir, &format!("verify_{name}.json"), &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

/// Parsed `--configs` entry: descriptor variants plus the dropout switch.
fn parse_config(s: &str) -> Result<(Vec<Variant>, bool), Failure> {
    let mut variants = Vec::new();
    let mut dropout = false;
    for part in s.split('+') {
        match part.trim().to_ascii_lowercase().as_str() {
            "lbp" => variants.push(Variant::Lbp),
            "tplbp" => variants.push(Variant::Tplbp),
            "fplbp" => variants.push(Variant::Fplbp),
            "dropout" => dropout = true,
            other => return Err(invalid(format!("unknown configuration part '{other}' in '{s}'"))),
        }
    }
    if variants.is_empty() {
        return Err(invalid(format!("configuration '{s}' names no descriptor")));
    }
    Ok((variants, dropout))
}

fn label_of(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "male" | "m" | "1" | "true" => Some(true),
        "female" | "f" | "0" | "false" => Some(false),
        _ => None,
    }
}

fn bench_gender_cmd(a: BenchGender) -> Result<(), Failure> {
    let c = &a.common;
    let configs: Vec<(String, Vec<Variant>, bool)> = a
        .configs
        .iter()
        .map(|s| parse_config(s).map(|(v, d)| (s.clone(), v, d)))
        .collect::<Result<_, _>>()?;
    let bundle = load_bundle(&bundle_path(c.bundle.clone(), &c.manifest)?)?;
    let detectors = load_detectors(c.detectors.as_deref())?;
    let data = load_dataset(&c.manifest, &bundle)?;
    let mut labels = Vec::new();
    let mut subjects = Vec::new();
    for (i, e) in data.manifest.entries.iter().enumerate() {
        let l = e.label.as_deref().and_then(label_of);
        labels.push(l.ok_or_else(|| invalid(format!("entry {i} has no male/female label")))?);
        subjects.push(e.identity.clone().unwrap_or_else(|| format!("item{i}")));
    }
    let split = GenderSplit::subject_exclusive(&subjects, c.folds, c.seed);
    let dcfg = DescriptorConfig::default();
    for (name, planar) in alignments(c.alignment) {
        let images = align(&data, &bundle, detectors.as_ref(), planar)?;
        for (cname, variants, dropout) in &configs {
            let features = images
                .par_iter()
                .map(|img| -> anyhow::Result<Vec<f64>> {
                    let mut v = Vec::new();
                    for &var in variants {
                        v.extend(hellinger(&describe(img, var, &dcfg)?)?.values);
                    }
                    Ok(v)
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let cfg = GenderConfig {
                svm: SvmParams {
                    c: a.c,
                    dropout: if *dropout { a.dropout } else { 0.0 },
                    seed: c.seed,
                    ..SvmParams::default()
                },
            };
            let report = bench_gender(&features, &labels, &subjects, &split, &cfg)?;
            println!(
                "{name} {cname}: accuracy {:.4} ± {:.4} (SE over {} folds)",
                report.mean,
                report.se,
                report.fold_accuracy.len()
            );
            let tag = cname.replace('+', "_");
            write_out(&c.out_dir, &format!("gender_{name}_{tag}_folds.csv"), &folds_csv(&report.fold_accuracy))?;
            write_out(&c.out_dir, &format!("gender_{name}_{tag}.json"), &serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(())
}

fn self_test(bundle: Option<PathBuf>) -> Result<(), Failure> {
    let bundle = match bundle {
        Some(p) => load_bundle(&p)?,
        None => build_reference_bundle(&reference_model(), &ViewConfig::default(), SDM48)?,
    };
    let t = Instant::now();
    let r = frontalize(&bundle.render, &bundle.landmarks, &bundle, None, &FrontalizeOptions::default())?;
    let elapsed = t.elapsed();
    let st = r
        .stages
        .as_ref()
        .ok_or_else(|| anyhow!("pose fit failed: {}", r.error.clone().unwrap_or_default()))?;
    let mask: Vec<bool> = (0..bundle.valid.len())
        .map(|i| bundle.valid[i] && !bundle.eye_mask[i])
        .collect();
    let mae = st
        .raw
        .mean_abs_diff_masked(&bundle.render, &mask)
        .ok_or_else(|| anyhow!("bundle has no valid pixels"))?;
    let pass = mae < 2.0 / 255.0 && st.pose.rms_reprojection < 0.5;
    println!(
        "self-test {}: MAE {:.3}/255, reprojection RMS {:.2e} px, {:.1?}",
        if pass { "PASS" } else { "FAIL" },
        mae * 255.0,
        st.pose.rms_reprojection,
        elapsed
    );
    if !pass {
        bail_code(EXIT_SELF_TEST, "identity round trip failed")?;
    }
    Ok(())
}

fn bail_code(code: u8, msg: &str) -> Result<(), Failure> {
    Err(Failure {
        code,
        error: anyhow!(msg.to_string()),
    })
}

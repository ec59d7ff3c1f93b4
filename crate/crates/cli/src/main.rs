//! `boxfuse`: augmentation, fusion, pipeline, demo and evaluation commands.
//!
//! Exit codes: 0 ok, 1 golden or assertion failure, 2 input error,
//! 3 detector failure.

mod demo;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use boxfuse_core::augmentation::{Augmentation, Roster};
use boxfuse_core::detector::{DetectorBinding, DetectorError, DetectorSource};
use boxfuse_core::evaluation::{
    average_iou, compare_methods, detection_count, mean_ap, read_voc_annotation, synthetic_scenes, ComparedMethod, EvalRecord,
    EvaluationError, TruthMatch, DEFAULT_MATCH_IOU, DEFAULT_SYNTHETIC_CANVAS, DEFAULT_SCORE_THRESHOLD, IOU_POLICY,
};
use boxfuse_core::fusion::{aabbfi_diagnostics, top_t, AabbfiDiagnostics, AppliedMethod, Detection, FusionMethod};
use boxfuse_core::grouping::{group, object_count, DetectionPool, ObjectGroup};
use boxfuse_core::image_io::{pnm_extension, read_image, write_image};
use boxfuse_core::pipeline::{
    fuse_groups, load_scene, BatchReport, ObjectReport, Pipeline, PipelineConfig, PipelineError, PipelineReport,
    Timing, DEFAULT_SEED,
};
use boxfuse_core::schema::{Manifest, ManifestEntry, ReplayFile, TruthFile, TruthImage};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "boxfuse", version, about = "Test-time augmentation ensembles with fuzzy-integral box fusion")]
struct Cli {
    /// Human-readable text instead of JSON.
    #[arg(long, global = true)]
    pretty: bool,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Raise log verbosity when FUSE_LOG is unset (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one augmented copy of an image per roster entry.
    Augment {
        image: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        roster: RosterArgs,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Print the worked fusion examples and check them against known answers.
    Demo,
    /// Fuse a JSON list of detections (one object) or a replay file.
    Fuse {
        detections: PathBuf,
        #[command(flatten)]
        fusion: FusionArgs,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[command(flatten)]
        dumps: DumpArgs,
    },
    /// Run the full ensemble on a manifest or a single image.
    Pipeline {
        /// Manifest JSON, or a single image.
        input: PathBuf,
        /// Ground truth for a single image input.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        /// Write per-image stage timings here.
        #[arg(long)]
        timings: Option<PathBuf>,
        #[command(flatten)]
        dumps: DumpArgs,
    },
    /// Score pipeline reports against ground truth.
    Eval {
        /// Batch report, single report, or a JSON list of reports.
        reports: PathBuf,
        /// Truth JSON, VOC XML files, or directories of VOC XML.
        #[arg(long, required = true, num_args = 1..)]
        truth: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MATCH_IOU)]
        iou: f64,
        #[arg(long, default_value_t = DEFAULT_SCORE_THRESHOLD)]
        score_threshold: f64,
    },
    /// Compare fusion methods on the same detections.
    Compare {
        /// Manifest JSON with truth paths; omit with --synthetic.
        manifest: Option<PathBuf>,
        /// Use this many seeded synthetic scenes instead of a manifest.
        #[arg(long, conflicts_with = "manifest")]
        synthetic: Option<usize>,
        /// Side of the square synthetic scenes are laid out on.
        #[arg(long, default_value_t = DEFAULT_SYNTHETIC_CANVAS)]
        canvas: f64,
        #[arg(long, value_delimiter = ',', default_value = "no_fusion,nms,average,median,aabbfi")]
        methods: Vec<String>,
        #[arg(long)]
        dataset: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RosterArgs {
    /// Roster JSON file, or a count M selecting the M best-ranked augmentations.
    #[arg(long)]
    roster: Option<String>,
}

#[derive(Args)]
struct FusionArgs {
    #[arg(long, default_value = "aabbfi")]
    method: FusionMethod,
    /// Boxes fused per object (default: 3, capped at the roster size).
    #[arg(long)]
    top_t: Option<usize>,
    #[arg(long, default_value_t = boxfuse_core::fusion::DEFAULT_NMS_IOU)]
    nms_iou: f64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    roster: RosterArgs,
    #[command(flatten)]
    fusion: FusionArgs,
    /// replay:<path>, cmd:<argv>, or synthetic:[model.json]
    #[arg(long)]
    detector: Option<String>,
    /// Comma-separated labels the detector may emit.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Parallel augment/detect workers; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct DumpArgs {
    /// Write the agreement lattices of every fuzzy-integral fusion here.
    #[arg(long)]
    dump_lattice: Option<PathBuf>,
    /// Write the object groups here.
    #[arg(long)]
    dump_groups: Option<PathBuf>,
}

/// Known-answer check failed.
#[derive(Debug)]
struct GoldenMismatch;

impl std::fmt::Display for GoldenMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("a demo result differs from its known answer")
    }
}

impl std::error::Error for GoldenMismatch {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FUSE_LOG", level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<GoldenMismatch>() {
            return 1;
        }
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            match p {
                PipelineError::DetectorFailure(_) | PipelineError::AllFailed { detector: true, .. } => return 3,
                PipelineError::Detector(d) if is_detector_fault(d) => return 3,
                _ => {}
            }
        }
        if let Some(d) = cause.downcast_ref::<DetectorError>() {
            if is_detector_fault(d) {
                return 3;
            }
        }
    }
    2
}

fn is_detector_fault(e: &DetectorError) -> bool {
    matches!(
        e,
        DetectorError::Spawn(..) | DetectorError::Timeout { .. } | DetectorError::Protocol(..)
    )
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.as_deref();
    let pretty = cli.pretty;
    match cli.command {
        Command::Augment {
            image,
            out_dir,
            roster,
            seed,
        } => cmd_augment(&image, &out_dir, &roster, seed, out, pretty),
        Command::Demo => {
            let (text, ok) = demo::run()?;
            emit(out, &text)?;
            if ok {
                Ok(())
            } else {
                Err(GoldenMismatch.into())
            }
        }
        Command::Fuse {
            detections,
            fusion,
            seed,
            dumps,
        } => cmd_fuse(&detections, &fusion, seed, &dumps, out, pretty),
        Command::Pipeline {
            input,
            truth,
            run,
            timings,
            dumps,
        } => cmd_pipeline(&input, truth, &run, timings.as_deref(), &dumps, out, pretty),
        Command::Eval {
            reports,
            truth,
            iou,
            score_threshold,
        } => cmd_eval(&reports, &truth, iou, score_threshold, out, pretty),
        Command::Compare {
            manifest,
            synthetic,
            canvas,
            methods,
            dataset,
            run,
        } => cmd_compare(manifest.as_deref(), synthetic, canvas, &methods, dataset, &run, out, pretty),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, to_json(v)?).with_context(|| format!("writing {}", path.display()))
}

fn load_roster(args: &RosterArgs) -> Result<Roster> {
    match args.roster.as_deref() {
        None => Ok(Roster::default_ranked()),
        Some(s) => match s.parse::<usize>() {
            Ok(m) => Ok(Roster::default_ranked().prefix(m)?),
            Err(_) => Ok(Roster::load(Path::new(s))?),
        },
    }
}

#[derive(Serialize)]
struct AugmentEntry {
    augmentation_id: usize,
    name: String,
    spec: Augmentation,
    path: PathBuf,
}

fn cmd_augment(image: &Path, out_dir: &Path, roster: &RosterArgs, seed: u64, out: Option<&Path>, pretty: bool) -> Result<()> {
    let roster = load_roster(roster)?;
    let src = read_image(image)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let stem = image
        .file_stem()
        .ok_or_else(|| anyhow!("{} has no file name", image.display()))?
        .to_string_lossy();

    let mut entries = Vec::with_capacity(roster.len());
    for (i, spec) in roster.specs().iter().enumerate() {
        let name = spec.name();
        let path = if *spec == Augmentation::Identity {
            let ext = image.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "ppm".into());
            let path = out_dir.join(format!("{stem}__{name}.{ext}"));
            fs::copy(image, &path).with_context(|| format!("copying to {}", path.display()))?;
            path
        } else {
            let img = spec.with_seed(seed.wrapping_add(i as u64)).apply(&src)?;
            let path = out_dir.join(format!("{stem}__{name}.{}", pnm_extension(&img)));
            write_image(&path, &img)?;
            path
        };
        entries.push(AugmentEntry {
            augmentation_id: i,
            name,
            spec: *spec,
            path,
        });
    }
    write_json(&out_dir.join(format!("{stem}__manifest.json")), &entries)?;

    if pretty {
        let mut s = String::new();
        for e in &entries {
            writeln!(s, "{:>2}  {:<18} {}", e.augmentation_id, e.name, e.path.display())?;
        }
        emit(out, &s)
    } else {
        emit(out, &to_json(&entries)?)
    }
}

#[derive(Serialize)]
struct FusedImage {
    image_id: String,
    object_count: usize,
    objects: Vec<ObjectReport>,
}

#[derive(Serialize)]
struct LatticeDump {
    image_id: String,
    object_id: usize,
    #[serde(flatten)]
    diagnostics: AabbfiDiagnostics,
}

#[derive(Serialize)]
struct GroupDump<'a> {
    image_id: &'a str,
    groups: &'a [ObjectGroup],
}

fn lattice_dumps(image_id: &str, groups: &[ObjectGroup], objects: &[ObjectReport], t: usize) -> Vec<LatticeDump> {
    groups
        .iter()
        .zip(objects)
        .filter(|(_, o)| o.result.method == AppliedMethod::Aabbfi)
        .map(|(g, o)| {
            let dets = g.detections();
            let boxes: Vec<_> = top_t(&dets, t).into_iter().map(|i| dets[i].bbox).collect();
            LatticeDump {
                image_id: image_id.to_string(),
                object_id: o.object_id,
                diagnostics: aabbfi_diagnostics(&boxes),
            }
        })
        .collect()
}

fn cmd_fuse(path: &Path, args: &FusionArgs, seed: u64, dumps: &DumpArgs, out: Option<&Path>, pretty: bool) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let t = args.top_t.unwrap_or(boxfuse_core::fusion::DEFAULT_TOP_T);
    if t == 0 {
        bail!("--top-t must be at least 1");
    }

    // a bare list is one object group in augmentation order
    let images: Vec<(String, Vec<Vec<Detection>>)> = if value.is_array() {
        let dets: Vec<Detection> = serde_json::from_value(value)?;
        vec![("input".into(), dets.into_iter().map(|d| vec![d]).collect())]
    } else {
        let replay: ReplayFile = serde_json::from_value(value)?;
        replay
            .images
            .into_iter()
            .map(|img| {
                let n = img.augmentations.iter().map(|a| a.augmentation_id + 1).max().unwrap_or(0);
                let mut per = vec![Vec::new(); n];
                for a in img.augmentations {
                    per[a.augmentation_id].extend(a.detections);
                }
                (img.image_id, per)
            })
            .collect()
    };

    let mut fused = Vec::new();
    let mut lattices = Vec::new();
    let mut group_dumps = Vec::new();
    for (image_id, per) in images {
        let pool = DetectionPool::new(per);
        let s = object_count(&pool);
        let groups = if s == 0 { Vec::new() } else { group(&pool, s, seed)? };
        let (objects, _) = fuse_groups(&groups, t, args.method, args.nms_iou)?;
        lattices.extend(lattice_dumps(&image_id, &groups, &objects, t));
        group_dumps.push((image_id.clone(), groups));
        fused.push(FusedImage {
            image_id,
            object_count: objects.len(),
            objects,
        });
    }

    if let Some(p) = &dumps.dump_lattice {
        write_json(p, &lattices)?;
    }
    if let Some(p) = &dumps.dump_groups {
        let g: Vec<GroupDump> = group_dumps
            .iter()
            .map(|(id, groups)| GroupDump { image_id: id, groups })
            .collect();
        write_json(p, &g)?;
    }
    if pretty {
        emit(out, &objects_text(fused.iter().map(|f| (f.image_id.as_str(), f.objects.as_slice()))))
    } else {
        emit(out, &to_json(&fused)?)
    }
}

fn objects_text<'a>(images: impl Iterator<Item = (&'a str, &'a [ObjectReport])>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:>3}  {:<11} {:<12} {:>6}  box", "image", "obj", "method", "label", "score");
    for (id, objects) in images {
        for o in objects {
            let r = &o.result;
            let bbox = r.bbox.map_or("none".to_string(), |b| {
                let c = b.coords();
                format!("[{:.2}, {:.2}, {:.2}, {:.2}]", c[0], c[1], c[2], c[3])
            });
            let _ = writeln!(
                s,
                "{:<16} {:>3}  {:<11} {:<12} {:>6}  {}",
                id,
                o.object_id,
                format!("{:?}", r.method).to_lowercase(),
                r.label,
                r.score.map_or("-".into(), |v| format!("{v:.3}")),
                bbox
            );
        }
    }
    s
}

fn binding_from(args: &RunArgs) -> Result<DetectorBinding> {
    let spec = args
        .detector
        .as_deref()
        .ok_or_else(|| anyhow!("--detector is required (replay:<path>, cmd:<argv>, synthetic:[model.json])"))?;
    let mut binding = DetectorBinding::parse(spec)?;
    if let DetectorSource::Synthetic { model } = &mut binding.source {
        model.seed ^= args.seed;
    }
    binding.classes = args.classes.clone();
    Ok(binding)
}

fn pipeline_config(args: &RunArgs, binding: DetectorBinding) -> Result<PipelineConfig> {
    let roster = load_roster(&args.roster)?;
    let mut cfg = PipelineConfig::new(roster, binding);
    if let Some(t) = args.fusion.top_t {
        cfg.top_t = t;
    }
    cfg.fusion_method = args.fusion.method;
    cfg.nms_iou = args.fusion.nms_iou;
    cfg.seed = args.seed;
    cfg.jobs = args.jobs;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct TimingEntry<'a> {
    image_id: &'a str,
    #[serde(flatten)]
    timing: Timing,
    fuse_ms_per_object: f64,
}

fn cmd_pipeline(
    input: &Path,
    truth: Option<PathBuf>,
    args: &RunArgs,
    timings: Option<&Path>,
    dumps: &DumpArgs,
    out: Option<&Path>,
    pretty: bool,
) -> Result<()> {
    let manifest = if input.extension().is_some_and(|e| e == "json") {
        Manifest::load(input)?
    } else {
        Manifest {
            entries: vec![ManifestEntry {
                image_path: input.to_path_buf(),
                truth_path: truth,
                image_id: None,
            }],
        }
    };
    let cfg = pipeline_config(args, binding_from(args)?)?;
    let t = cfg.top_t;
    let pipeline = Pipeline::new(cfg)?;
    let batch = pipeline.batch(&manifest)?;

    if let Some(p) = timings {
        let entries: Vec<TimingEntry> = batch
            .reports
            .iter()
            .map(|r| TimingEntry {
                image_id: &r.image_id,
                timing: r.timing,
                fuse_ms_per_object: r.timing.fuse_ms_per_object(),
            })
            .collect();
        write_json(p, &entries)?;
    }
    if let Some(p) = &dumps.dump_lattice {
        let all: Vec<LatticeDump> = batch
            .reports
            .iter()
            .flat_map(|r| lattice_dumps(&r.image_id, &r.groups, &r.objects, t))
            .collect();
        write_json(p, &all)?;
    }
    if let Some(p) = &dumps.dump_groups {
        let g: Vec<GroupDump> = batch
            .reports
            .iter()
            .map(|r| GroupDump {
                image_id: &r.image_id,
                groups: &r.groups,
            })
            .collect();
        write_json(p, &g)?;
    }

    if pretty {
        let mut s = objects_text(batch.reports.iter().map(|r| (r.image_id.as_str(), r.objects.as_slice())));
        writeln!(s, "\n{:>2}  {:<18} {:>6}", "id", "augmentation", "tally")?;
        for e in &batch.tally {
            writeln!(s, "{:>2}  {:<18} {:>6}", e.augmentation_id, e.name, e.count)?;
        }
        for f in &batch.failures {
            writeln!(s, "skipped {}: {}", f.image_path.display(), f.reason)?;
        }
        emit(out, &s)
    } else {
        emit(out, &to_json(&batch)?)
    }
}

fn load_reports(path: &Path) -> Result<Vec<PipelineReport>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let reports = if value.get("reports").is_some() {
        serde_json::from_value::<BatchReport>(value)?.reports
    } else if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    Ok(reports)
}

fn load_truth(paths: &[PathBuf]) -> Result<Vec<TruthImage>> {
    let mut images = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut xmls: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()?;
            xmls.retain(|x| x.extension().is_some_and(|e| e == "xml"));
            xmls.sort();
            for x in xmls {
                images.push(read_voc_annotation(&x)?);
            }
        } else if p.extension().is_some_and(|e| e == "xml") {
            images.push(read_voc_annotation(p)?);
        } else {
            images.extend(TruthFile::load(p)?.images);
        }
    }
    Ok(images)
}

#[derive(Serialize)]
struct ImageEval {
    image_id: String,
    matches: Vec<TruthMatch>,
}

#[derive(Serialize)]
struct ClassAp {
    label: String,
    ap: f64,
    positives: usize,
}

#[derive(Serialize)]
struct EvalSummary {
    iou_policy: &'static str,
    images: usize,
    average_iou: f64,
    detection: String,
    map: f64,
    classes: Vec<ClassAp>,
    per_image: Vec<ImageEval>,
}

fn cmd_eval(reports: &Path, truth: &[PathBuf], iou: f64, score_threshold: f64, out: Option<&Path>, pretty: bool) -> Result<()> {
    let reports = load_reports(reports)?;
    if reports.is_empty() {
        return Err(EvaluationError::NoRecords.into());
    }
    let truth = load_truth(truth)?;
    let records: Vec<EvalRecord> = reports
        .iter()
        .map(|r| {
            let t = truth
                .iter()
                .find(|t| t.image_id == r.image_id)
                .ok_or_else(|| EvaluationError::MissingTruth(r.image_id.clone()))?;
            Ok(EvalRecord::from_report(r, t.objects.clone()))
        })
        .collect::<Result<_>>()?;

    let curve = mean_ap(&records, score_threshold, iou)?;
    let summary = EvalSummary {
        iou_policy: IOU_POLICY,
        images: records.len(),
        average_iou: average_iou(&records)?,
        detection: detection_count(&records, iou)?.to_string(),
        map: curve.map,
        classes: curve
            .classes
            .into_iter()
            .map(|c| ClassAp {
                label: c.label,
                ap: c.ap,
                positives: c.positives,
            })
            .collect(),
        per_image: records
            .iter()
            .map(|r| ImageEval {
                image_id: r.image_id.clone(),
                matches: r.matches(iou),
            })
            .collect(),
    };
    if pretty {
        let mut s = format!("# {IOU_POLICY}\n");
        writeln!(s, "images       {}", summary.images)?;
        writeln!(s, "average IoU  {:.4}", summary.average_iou)?;
        writeln!(s, "detection    {}", summary.detection)?;
        writeln!(s, "mAP          {:.4}", summary.map)?;
        for c in &summary.classes {
            writeln!(s, "  AP {:<12} {:.4}  ({} objects)", c.label, c.ap, c.positives)?;
        }
        emit(out, &s)
    } else {
        emit(out, &to_json(&summary)?)
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_compare(
    manifest: Option<&Path>,
    synthetic: Option<usize>,
    canvas: f64,
    methods: &[String],
    dataset: Option<String>,
    args: &RunArgs,
    out: Option<&Path>,
    pretty: bool,
) -> Result<()> {
    let methods: Vec<ComparedMethod> = methods
        .iter()
        .map(|m| m.parse::<ComparedMethod>().map_err(|e| anyhow!(e)))
        .collect::<Result<_>>()?;
    let (scenes, name) = match (manifest, synthetic) {
        (Some(p), _) => {
            let m = Manifest::load(p)?;
            let scenes = m.entries.iter().map(load_scene).collect::<Result<Vec<_>, _>>()?;
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (scenes, name)
        }
        (None, Some(n)) => (synthetic_scenes(n, args.seed, canvas), "synthetic".to_string()),
        (None, None) => bail!("give a manifest or --synthetic <count>"),
    };
    let binding = match (&args.detector, synthetic) {
        (None, Some(_)) => {
            let mut b = DetectorBinding::parse("synthetic:")?;
            if let DetectorSource::Synthetic { model } = &mut b.source {
                model.seed ^= args.seed;
            }
            b
        }
        _ => binding_from(args)?,
    };
    let pipeline = Pipeline::new(pipeline_config(args, binding)?)?;
    let table = compare_methods(&dataset.unwrap_or(name), &scenes, &pipeline, &methods)?;
    if pretty {
        emit(out, &table.to_text())
    } else {
        emit(out, &to_json(&table)?)
    }
}

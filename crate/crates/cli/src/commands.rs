use std::path::{Path, PathBuf};

use latent_probe::corruption::{CorruptionConfig, MaskMode};
use latent_probe::downstream::{
    run_correlation_study, threshold_filter, CorrelationConfig, OracleSegmenter, Segmenter,
    ThresholdSegmenter, DEFAULT_DAMAGE_LEVELS, DEFAULT_SEGMENT_THRESHOLD,
};
use latent_probe::model::{builtin, load_model, save_model, CodecModel};
use latent_probe::perturb::{run_perturbation_study, score_sample, StudyConfig};
use latent_probe::synthdata::{generate_phantoms, read_dataset, write_dataset, PhantomSpec, Sample};
use latent_probe::tensor_io::{encode_npy, encode_pgm, read_array, Tensor};
use latent_probe::HeatMap;

use crate::error::{usage, CliError};
use crate::manifest::{check_out_dir, Run};
use crate::settings::{FloatList, Settings};
use crate::{
    Command, Common, CorrelateArgs, FilterArgs, GenArgs, InitModelArgs, PerturbArgs, ScoreArgs,
    ScoringArgs,
};

const BUILTIN_TOY: &str = "builtin:toy-conv";

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen(a) => gen(a),
        Command::InitModel(a) => init_model(a),
        Command::Score(a) => score(a),
        Command::Perturb(a) => perturb(a),
        Command::Correlate(a) => correlate(a),
        Command::Filter(a) => filter(a),
    }
}

fn settings(name: &str, common: &Common) -> Result<Settings, CliError> {
    Settings::new(name, common.config.as_deref())
}

/// Validates the shared flags; returns the output directory if any.
fn out_dir(common: &Common, required: bool) -> Result<Option<PathBuf>, CliError> {
    if common.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    match &common.out {
        Some(dir) => {
            check_out_dir(dir, common.force)?;
            Ok(Some(dir.clone()))
        }
        None if required => Err(CliError::Usage("--out is required".into())),
        None => Ok(None),
    }
}

/// Runs `f` on a pool of `jobs` threads.
fn with_jobs<T: Send>(
    jobs: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    pool.install(f)
}

struct Scoring {
    model_spec: String,
    cfg: CorruptionConfig,
    threshold: Option<f64>,
}

fn resolve_scoring(s: &mut Settings, a: ScoringArgs, min_k: usize) -> Result<Scoring, CliError> {
    let model_spec = s.get("model", a.model, Some(BUILTIN_TOY.to_string()))?;
    let alpha = s.get("alpha", a.alpha, Some(3.0))?;
    let k = s.get("k", a.k, Some(10))?;
    let seed = s.get("seed", a.seed, Some(0))?;
    let threshold = s.get_opt("threshold", a.threshold)?;
    let mode: String = s.get("mask-mode", a.mask_mode, Some(MaskMode::Indicator.as_str().into()))?;
    let mask_mode: MaskMode = mode.parse().map_err(usage)?;
    let cfg = CorruptionConfig {
        alpha,
        k,
        seed,
        foreground_threshold: threshold.unwrap_or(0.0),
        mask_mode,
    };
    cfg.validate().map_err(usage)?;
    if k < min_k {
        return Err(CliError::Usage(format!("--k must be at least {min_k}")));
    }
    Ok(Scoring {
        model_spec,
        cfg,
        threshold,
    })
}

/// Loads the model and settles the foreground threshold, hashing model files.
fn load_scoring_model(scoring: &mut Scoring, run: Option<&mut Run>) -> Result<CodecModel, CliError> {
    let model = if scoring.model_spec == BUILTIN_TOY {
        builtin::toy_conv(builtin::TOY_SEED)
    } else if scoring.model_spec.starts_with("builtin:") {
        return Err(CliError::Usage(format!(
            "unknown built-in model {:?} (available: {BUILTIN_TOY})",
            scoring.model_spec
        )));
    } else {
        load_model(&scoring.model_spec)?
    };
    let threshold = scoring
        .threshold
        .or(model.foreground_threshold())
        .unwrap_or(0.0);
    scoring.cfg.foreground_threshold = threshold;
    if let Some(run) = run {
        run.record("threshold", threshold);
        if scoring.model_spec != BUILTIN_TOY {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&scoring.model_spec)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", scoring.model_spec)))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && !p.ends_with(crate::manifest::MANIFEST_FILE))
                .collect();
            files.sort();
            for f in files {
                run.input(&f)?;
            }
        }
    }
    Ok(model)
}

fn load_samples(data: &Path, run: Option<&mut Run>) -> Result<Vec<Sample>, CliError> {
    let (samples, files) = read_dataset(data)?;
    if let Some(run) = run {
        for f in files {
            run.input(&data.join(f))?;
        }
    }
    Ok(samples)
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> latent_probe::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn heatmap_npy(map: &HeatMap) -> Result<Vec<u8>, CliError> {
    let values = map.values.iter().map(|&v| v as f32).collect();
    Ok(encode_npy(&Tensor::from_f32(vec![map.height, map.width], values)?))
}

fn gen(a: GenArgs) -> Result<(), CliError> {
    let mut s = settings("gen", &a.common)?;
    let defaults = PhantomSpec::default();
    let spec = PhantomSpec {
        count: s.get("count", a.count, Some(defaults.count))?,
        image_side: s.get("side", a.side, Some(defaults.image_side))?,
        seed: s.get("seed", a.seed, Some(defaults.seed))?,
        ..defaults
    };
    spec.validate().map_err(usage)?;
    let snapshot = s.finish()?;
    let out = out_dir(&a.common, true)?.expect("required");

    let phantoms = with_jobs(a.common.jobs, || Ok(generate_phantoms(&spec)?))?;
    let width = (spec.count - 1).to_string().len().max(3);
    let samples: Vec<Sample> = phantoms
        .into_iter()
        .enumerate()
        .map(|(i, p)| Sample {
            id: format!("phantom_{i:0width$}"),
            image: p.image,
            mask: Some(p.mask),
        })
        .collect();

    let mut run = Run::new(&out, snapshot);
    run.start()?;
    for f in write_dataset(run.dir(), &samples)? {
        run.adopt(&f)?;
    }
    run.finish()?;
    println!("samples={} out={}", samples.len(), out.display());
    Ok(())
}

fn init_model(a: InitModelArgs) -> Result<(), CliError> {
    let mut s = settings("init-model", &a.common)?;
    let kind: String = s.get("kind", a.kind, Some("toy-conv".into()))?;
    let seed = s.get("seed", a.seed, Some(builtin::TOY_SEED))?;
    if kind != "toy-conv" {
        return Err(CliError::Usage(format!("unknown model kind {kind:?} (available: toy-conv)")));
    }
    let snapshot = s.finish()?;
    let out = out_dir(&a.common, true)?.expect("required");
    let model = builtin::toy_conv(seed);

    let mut run = Run::new(&out, snapshot);
    run.start()?;
    save_model(run.dir(), &model)?;
    let mut files: Vec<String> = std::fs::read_dir(run.dir())
        .map_err(|e| CliError::Runtime(e.to_string()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    for f in &files {
        run.adopt(f)?;
    }
    run.finish()?;
    println!("model={} out={}", model.name(), out.display());
    Ok(())
}

fn score(a: ScoreArgs) -> Result<(), CliError> {
    let mut s = settings("score", &a.common)?;
    let mut scoring = resolve_scoring(&mut s, a.scoring, 2)?;
    let image_path: PathBuf = s.get("image", a.image.map(|p| p.display().to_string()), None)?.into();
    let snapshot = s.finish()?;
    let out = out_dir(&a.common, false)?;

    let mut run = out.as_ref().map(|dir| Run::new(dir, snapshot));
    let model = load_scoring_model(&mut scoring, run.as_mut())?;
    let image = read_array(&image_path)?.to_image()?;
    if let Some(run) = run.as_mut() {
        run.input(&image_path)?;
    }
    let scores = with_jobs(a.common.jobs, || Ok(score_sample(&model, &image, &scoring.cfg)?))?;

    if let Some(mut run) = run {
        run.start()?;
        run.output("heatmap.pgm", &encode_pgm(scores.heatmap())?)?;
        run.output("heatmap.npy", &heatmap_npy(scores.heatmap())?)?;
        run.finish()?;
    }
    println!("gamma={} delta={}", scores.gamma(), scores.delta());
    Ok(())
}

fn perturb(a: PerturbArgs) -> Result<(), CliError> {
    let mut s = settings("perturb", &a.common)?;
    let mut scoring = resolve_scoring(&mut s, a.scoring, 2)?;
    let data: PathBuf = s.get("data", a.data.map(|p| p.display().to_string()), None)?.into();
    let patch = s.get_opt("patch", a.patch)?;
    let patch_seed = s.get("patch-seed", a.patch_seed, Some(0))?;
    let bins = s.get("bins", a.bins, Some(20))?;
    if patch == Some(0) || bins == 0 {
        return Err(CliError::Usage("--patch and --bins must be positive".into()));
    }
    let snapshot = s.finish()?;
    let out = out_dir(&a.common, true)?.expect("required");

    let mut run = Run::new(&out, snapshot);
    run.note("patch_origin", "fixed per sample");
    let model = load_scoring_model(&mut scoring, Some(&mut run))?;
    let samples = load_samples(&data, Some(&mut run))?;
    let study = StudyConfig {
        patch_size: patch,
        corruption: scoring.cfg.clone(),
        seed: patch_seed,
        histogram_bins: bins,
    };
    let report = with_jobs(a.common.jobs, || Ok(run_perturbation_study(&samples, &model, &study)?))?;
    if let Some(row) = report.rows.first() {
        run.record("patch", row.patch_size);
    }

    run.start()?;
    run.output("report.csv", &csv_bytes(|b| report.write_rows_csv(b))?)?;
    run.output("aggregates.csv", &csv_bytes(|b| report.write_aggregates_csv(b))?)?;
    run.output("hist_delta.csv", &csv_bytes(|b| report.write_histogram_csv(b))?)?;
    for (row, (orig, pert)) in report.rows.iter().zip(&report.heatmaps) {
        run.output(&format!("heatmaps/{}_orig.pgm", row.id), &encode_pgm(orig)?)?;
        run.output(&format!("heatmaps/{}_pert.pgm", row.id), &encode_pgm(pert)?)?;
    }
    run.finish()?;
    let agg = &report.aggregates;
    println!(
        "n={} gamma_orig={} gamma_pert={} delta_orig={} delta_pert={}",
        report.rows.len(),
        agg.gamma_orig.mean,
        agg.gamma_pert.mean,
        agg.delta_orig.mean,
        agg.delta_pert.mean
    );
    Ok(())
}

fn correlate(a: CorrelateArgs) -> Result<(), CliError> {
    let mut s = settings("correlate", &a.common)?;
    let mut scoring = resolve_scoring(&mut s, a.scoring, 2)?;
    let data: PathBuf = s.get("data", a.data.map(|p| p.display().to_string()), None)?.into();
    let segmenter_kind: String = s.get("segmenter", a.segmenter, Some("default".into()))?;
    let segment_threshold = s.get(
        "segment-threshold",
        a.segment_threshold,
        Some(DEFAULT_SEGMENT_THRESHOLD),
    )?;
    let levels = s.get(
        "damage-levels",
        a.damage_levels,
        Some(FloatList(DEFAULT_DAMAGE_LEVELS.to_vec())),
    )?;
    let damage_seed = s.get("damage-seed", a.damage_seed, Some(0))?;
    if !["default", "oracle"].contains(&segmenter_kind.as_str()) {
        return Err(CliError::Usage(format!(
            "--segmenter must be default or oracle, got {segmenter_kind:?}"
        )));
    }
    let ascending = levels.0.windows(2).all(|w| w[0] <= w[1]);
    if levels.0.is_empty() || !ascending || levels.0.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(CliError::Usage(
            "--damage-levels must be non-negative and ascending".into(),
        ));
    }
    let snapshot = s.finish()?;
    let out = out_dir(&a.common, true)?.expect("required");

    let mut run = Run::new(&out, snapshot);
    run.note("correlation_unit", "per sample (per image), one pair per damage level");
    let model = load_scoring_model(&mut scoring, Some(&mut run))?;
    let samples = load_samples(&data, Some(&mut run))?;
    let segmenter: Box<dyn Segmenter> = if segmenter_kind == "oracle" {
        let masks = samples
            .iter()
            .map(|s| {
                s.mask
                    .clone()
                    .ok_or_else(|| CliError::Runtime(format!("sample {} has no mask", s.id)))
            })
            .collect::<Result<_, _>>()?;
        Box::new(OracleSegmenter { masks })
    } else {
        Box::new(ThresholdSegmenter {
            threshold: segment_threshold,
        })
    };
    let cfg = CorrelationConfig {
        corruption: scoring.cfg.clone(),
        damage_levels: levels.0,
        damage_seed,
    };
    let report = with_jobs(a.common.jobs, || {
        Ok(run_correlation_study(&samples, &model, segmenter.as_ref(), &cfg)?)
    })?;

    run.start()?;
    run.output("correlation.csv", &csv_bytes(|b| report.write_csv(b))?)?;
    run.finish()?;
    let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| v.to_string());
    println!(
        "n={} pearson_r={} abs_r={} degraded_regime={} status={}",
        report.n,
        opt(report.pearson_r),
        opt(report.abs_r),
        report.degraded_regime,
        report.status.replace(' ', "_")
    );
    Ok(())
}

fn filter(a: FilterArgs) -> Result<(), CliError> {
    let mut s = settings("filter", &a.common)?;
    let report: PathBuf = s.get("report", a.report.map(|p| p.display().to_string()), None)?.into();
    let column = s.get_opt("column", a.column)?;
    let cutoff: f64 = s.get("cutoff", a.cutoff, None)?;
    if cutoff.is_nan() {
        return Err(CliError::Usage("--cutoff must be a number".into()));
    }
    let snapshot = s.finish()?;
    let out = out_dir(&a.common, false)?;

    let bytes = std::fs::read(&report).map_err(|e| CliError::Runtime(format!("{}: {e}", report.display())))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(bytes.as_slice());
    let headers = reader
        .headers()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", report.display())))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let id_col = find("id").ok_or_else(|| CliError::Runtime("report has no id column".into()))?;
    let column = match column {
        Some(c) => c,
        None => ["delta", "delta_orig"]
            .into_iter()
            .find(|c| find(c).is_some())
            .unwrap_or("delta")
            .to_string(),
    };
    let value_col = find(&column)
        .ok_or_else(|| CliError::Runtime(format!("report has no {column:?} column")))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Runtime(e.to_string()))?;
        let id = record.get(id_col).unwrap_or_default();
        if id == "summary" {
            continue;
        }
        let value: f64 = record
            .get(value_col)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Runtime(format!("row {id:?} has no numeric {column}")))?;
        rows.push((id.to_string(), value));
    }
    let (kept, rejected) = threshold_filter(&rows, cutoff);

    if let Some(dir) = out {
        let mut run = Run::new(&dir, snapshot);
        run.record("column", &column);
        run.input(&report)?;
        run.start()?;
        let lines = |ids: &[String]| ids.iter().map(|i| format!("{i}\n")).collect::<String>();
        run.output("kept.txt", lines(&kept).as_bytes())?;
        run.output("rejected.txt", lines(&rejected).as_bytes())?;
        run.finish()?;
    }
    println!("kept={} rejected={}", kept.len(), rejected.len());
    Ok(())
}

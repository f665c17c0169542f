//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::collections::HashMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use latent_probe::corruption::{channel_std, corrupt_latents, CorruptionConfig};
use latent_probe::downstream::{
    dice, pearson, run_correlation_study, CorrelationConfig, ThresholdSegmenter,
};
use latent_probe::model::builtin;
use latent_probe::perturb::{run_perturbation_study, score_sample, StudyConfig};
use latent_probe::scores::{
    marginal_entropy, mutual_information, mutual_information_with, num_bins, variance_score,
    MiConfig,
};
use latent_probe::stats::{mean, population_std, sign_test_greater};
use latent_probe::synthdata::{generate_phantoms, PhantomSpec, Sample};
use latent_probe::{BinaryMask, ImageGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run_criterion(n: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f))
        .unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
    let elapsed = start.elapsed();
    let result = match (result, limit) {
        (Ok(_), Some(l)) if elapsed > l => Err(format!("took {elapsed:.2?}, limit {l:?}")),
        (r, _) => r,
    };
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} criterion {n:>2}: {name} [{elapsed:.2?}] {detail}");
    result.is_ok()
}

fn grid(h: usize, w: usize, data: Vec<f64>) -> ImageGrid {
    ImageGrid::new(h, w, data).unwrap()
}

fn phantom_samples(count: usize) -> Vec<Sample> {
    let spec = PhantomSpec {
        count,
        ..Default::default()
    };
    generate_phantoms(&spec)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, p)| Sample {
            id: format!("phantom_{i:03}"),
            image: p.image,
            mask: Some(p.mask),
        })
        .collect()
}

/// MI by enumerating distinct value pairs; valid when each value has its own bin.
fn enumerated_mi(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let mut joint: HashMap<(u64, u64), f64> = HashMap::new();
    let mut pa: HashMap<u64, f64> = HashMap::new();
    let mut pb: HashMap<u64, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x.to_bits(), y.to_bits())).or_default() += 1.0 / n;
        *pa.entry(x.to_bits()).or_default() += 1.0 / n;
        *pb.entry(y.to_bits()).or_default() += 1.0 / n;
    }
    joint
        .iter()
        .map(|(&(x, y), &p)| p * (p / (pa[&x] * pb[&y])).ln())
        .sum()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lattice = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    let explicit = MiConfig {
        bins: Some(4),
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let h = rng.random_range(1..=4usize);
        let w = rng.random_range(1..=16 / h);
        let a: Vec<f64> = (0..h * w).map(|_| lattice[rng.random_range(0..4)]).collect();
        let b: Vec<f64> = (0..h * w).map(|_| lattice[rng.random_range(0..4)]).collect();
        let (ga, gb) = (grid(h, w, a.clone()), grid(h, w, b.clone()));

        // With at most 16 pixels the default rule yields a single bin.
        let default = mutual_information(&ga, &gb).map_err(|e| e.to_string())?;
        ensure(num_bins(h * w) == 1 && default == 0.0, || {
            format!("default-rule MI {default} on {h}x{w}")
        })?;
        let mi = mutual_information_with(&ga, &gb, &explicit).map_err(|e| e.to_string())?;
        let oracle = enumerated_mi(&a, &b);
        worst = worst.max((mi - oracle).abs());
        ensure((mi - oracle).abs() <= 1e-12, || format!("MI {mi} vs oracle {oracle}"))?;
        let ba = mutual_information_with(&gb, &ga, &explicit).map_err(|e| e.to_string())?;
        ensure(mi == ba && mi >= 0.0, || format!("asymmetric {mi} vs {ba}"))?;
        let self_mi = mutual_information_with(&ga, &ga, &explicit).map_err(|e| e.to_string())?;
        let entropy = marginal_entropy(&ga, 4).map_err(|e| e.to_string())?;
        ensure((self_mi - entropy).abs() <= 1e-12, || {
            format!("MI(x,x) {self_mi} vs entropy {entropy}")
        })?;
        ensure((self_mi - enumerated_mi(&a, &a)).abs() <= 1e-12, || "entropy oracle".into())?;
    }
    // Larger random images exercise the default bin rule.
    for _ in 0..1000 {
        let (h, w) = (rng.random_range(5..24), rng.random_range(5..24));
        let a = grid(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect());
        let b = grid(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect());
        let ab = mutual_information(&a, &b).map_err(|e| e.to_string())?;
        let ba = mutual_information(&b, &a).map_err(|e| e.to_string())?;
        ensure(ab == ba && ab >= 0.0, || format!("fuzz symmetry {ab} vs {ba}"))?;
        let aa = mutual_information(&a, &a).map_err(|e| e.to_string())?;
        let ent = marginal_entropy(&a, num_bins(h * w)).map_err(|e| e.to_string())?;
        ensure((aa - ent).abs() <= 1e-12, || format!("fuzz MI(x,x) {aa} vs {ent}"))?;
    }
    Ok(format!("1000 lattice + 1000 fuzz cases, max |MI - oracle| = {worst:.1e}"))
}

fn criterion_2() -> Outcome {
    let got = [num_bins(65536), num_bins(4096), num_bins(5)];
    ensure(got == [114, 28, 1], || format!("got {got:?}"))?;
    Ok(format!("{got:?}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let (h, w, k) = (rng.random_range(1..10), rng.random_range(1..10), rng.random_range(2..12));
        let stack: Vec<ImageGrid> = (0..k)
            .map(|_| grid(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()))
            .collect();
        let got = variance_score(&stack).map_err(|e| e.to_string())?;
        let mut total = 0.0;
        for p in 0..h * w {
            let column: Vec<f64> = stack.iter().map(|g| g.data()[p]).collect();
            let m = column.iter().sum::<f64>() / k as f64;
            let var = column.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / k as f64;
            worst = worst.max((got.map.values[p] - var).abs());
            ensure((got.map.values[p] - var).abs() <= 1e-12, || format!("pixel {p}: {var}"))?;
            total += var;
        }
        let gamma = total / (h * w) as f64;
        ensure((got.gamma - gamma).abs() <= 1e-12, || format!("gamma {} vs {gamma}", got.gamma))?;

        let mut shuffled = stack.clone();
        for i in (1..k).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let again = variance_score(&shuffled).map_err(|e| e.to_string())?;
        ensure(again == got, || "permutation changed the result".into())?;

        let same = vec![stack[0].clone(); k];
        let zero = variance_score(&same).map_err(|e| e.to_string())?.gamma;
        ensure(zero == 0.0, || format!("identical stack gamma {zero}"))?;
    }
    Ok(format!("300 stacks, max |var - oracle| = {worst:.1e}"))
}

fn criterion_4() -> Outcome {
    let (h, w) = (32, 32);
    let model = builtin::linear_codec((h, w), &[1.0, 0.5, -2.0], &[0.0, 0.1, 0.3], &[0.7, -1.2, 0.4], 0.05)
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = grid(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect());
    let latent = model.encode(&x).map_err(|e| e.to_string())?;
    let sigma = channel_std(&latent);
    let dec_w = [0.7f64, -1.2, 0.4];
    let mask = BinaryMask::filled(h, w, true).map_err(|e| e.to_string())?;
    let mut report = Vec::new();
    for alpha in [0.5, 3.0] {
        let expected: f64 = alpha
            * dec_w
                .iter()
                .zip(&sigma)
                .map(|(w, s)| (*w as f32 as f64).powi(2) * s * s)
                .sum::<f64>();
        let cfg = CorruptionConfig {
            alpha,
            k: 2000,
            seed: 40,
            ..Default::default()
        };
        let copies = corrupt_latents(&latent, &mask, &cfg).map_err(|e| e.to_string())?;
        let outputs = model.decode_batch(&copies).map_err(|e| e.to_string())?;
        let var = variance_score(&outputs).map_err(|e| e.to_string())?;
        let within = var
            .map
            .values
            .iter()
            .filter(|&&v| ((v - expected) / expected).abs() <= 0.10)
            .count();
        let frac = within as f64 / (h * w) as f64;
        ensure(frac >= 0.99, || format!("alpha {alpha}: {:.2}% within 10%", 100.0 * frac))?;
        report.push(format!("alpha {alpha}: {:.1}% within 10%", 100.0 * frac));
    }
    Ok(report.join(", "))
}

fn criterion_5() -> Outcome {
    let model = builtin::toy_conv(builtin::TOY_SEED);
    let sample = &phantom_samples(1)[0];
    let cfg = CorruptionConfig {
        k: 8,
        seed: 5,
        foreground_threshold: builtin::TOY_FOREGROUND_THRESHOLD,
        ..Default::default()
    };
    let scores = score_sample(&model, &sample.image, &cfg).map_err(|e| e.to_string())?;
    let latent = model.encode(&sample.image).map_err(|e| e.to_string())?;
    let copies = corrupt_latents(&latent, &scores.mask, &cfg).map_err(|e| e.to_string())?;
    let plane = latent.plane_len();
    let background = scores.mask.data().iter().filter(|m| !**m).count();
    ensure(background > 0 && background < plane, || {
        format!("mask has {background} background positions of {plane}")
    })?;
    for copy in &copies {
        for c in 0..latent.channels() {
            for (p, fg) in scores.mask.data().iter().enumerate() {
                let (a, b) = (copy.channel(c)[p], latent.channel(c)[p]);
                if !fg {
                    ensure(a.to_bits() == b.to_bits(), || format!("channel {c} pos {p} moved"))?;
                }
            }
        }
    }
    let zero = ImageGrid::filled(64, 64, 0.0).map_err(|e| e.to_string())?;
    let gamma = score_sample(&model, &zero, &cfg).map_err(|e| e.to_string())?.gamma();
    ensure(gamma == 0.0, || format!("toy codec zero-image gamma {gamma}"))?;
    let linear = builtin::identity_linear(16, 16);
    let zero = ImageGrid::filled(16, 16, 0.0).map_err(|e| e.to_string())?;
    let plain = CorruptionConfig::default();
    let gamma = score_sample(&linear, &zero, &plain).map_err(|e| e.to_string())?.gamma();
    ensure(gamma == 0.0, || format!("linear codec zero-image gamma {gamma}"))?;
    Ok(format!(
        "{background}/{plane} background positions x {} channels x {} copies bit-identical; zero image gamma = 0",
        latent.channels(),
        copies.len()
    ))
}

fn study_config() -> StudyConfig {
    StudyConfig {
        corruption: CorruptionConfig {
            alpha: 3.0,
            k: 10,
            foreground_threshold: builtin::TOY_FOREGROUND_THRESHOLD,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn criteria_6_and_7() -> (Outcome, Outcome) {
    let model = builtin::toy_conv(builtin::TOY_SEED);
    let samples = phantom_samples(64);
    let report = match run_perturbation_study(&samples, &model, &study_config()) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let col = |f: fn(&latent_probe::perturb::StudyRow) -> f64| -> Vec<f64> {
        report.rows.iter().map(f).collect()
    };
    let (d_orig, d_pert) = (col(|r| r.delta_orig), col(|r| r.delta_pert));
    let (g_orig, g_pert) = (col(|r| r.gamma_orig), col(|r| r.gamma_pert));

    let c6 = (|| {
        let p_delta = sign_test_greater(&d_orig, &d_pert).map_err(|e| e.to_string())?;
        let p_gamma = sign_test_greater(&g_pert, &g_orig).map_err(|e| e.to_string())?;
        let pooled = ((population_std(&d_orig).powi(2) + population_std(&d_pert).powi(2)) / 2.0).sqrt();
        let sep = (mean(&d_orig) - mean(&d_pert)) / pooled;
        let detail = format!(
            "delta {:.4} -> {:.4} (sign p={p_delta:.1e}), gamma {:.5} -> {:.5} (sign p={p_gamma:.1e}), separation {sep:.2} pooled sd",
            mean(&d_orig),
            mean(&d_pert),
            mean(&g_orig),
            mean(&g_pert)
        );
        ensure(mean(&d_pert) < mean(&d_orig) && p_delta < 0.01, || detail.clone())?;
        ensure(mean(&g_pert) > mean(&g_orig) && p_gamma < 0.01, || detail.clone())?;
        ensure(sep >= 1.0, || detail.clone())?;
        Ok(detail)
    })();

    let c7 = (|| {
        let eligible: Vec<_> = report.rows.iter().filter(|r| r.patch_fg_overlap >= 0.5).collect();
        ensure(!eligible.is_empty(), || "no patch overlaps foreground by 50%".into())?;
        let hits = eligible
            .iter()
            .filter(|r| r.patch_var_inside >= r.patch_var_outside)
            .count();
        let frac = hits as f64 / eligible.len() as f64;
        let detail = format!("{hits}/{} eligible samples localize ({:.0}%)", eligible.len(), 100.0 * frac);
        ensure(frac >= 0.8, || detail.clone())?;
        Ok(detail)
    })();
    (c6, c7)
}

fn criterion_8() -> Outcome {
    let model = builtin::toy_conv(builtin::TOY_SEED);
    let samples = phantom_samples(20);
    let cfg = CorrelationConfig {
        corruption: study_config().corruption,
        ..Default::default()
    };
    ensure(cfg.damage_levels.len() == 6, || "expected 6 damage levels".into())?;
    let segmenter = ThresholdSegmenter::default();
    let report = run_correlation_study(&samples, &model, &segmenter, &cfg).map_err(|e| e.to_string())?;
    let fmt = |r: Option<f64>| r.map_or("n/a".to_string(), |r| format!("{r:.3}"));
    let detail = format!(
        "n={} |r|={} (working regime n={} r={}), degraded_regime={} with {} pairs below DICE 0.5",
        report.n,
        fmt(report.abs_r),
        report.working.n,
        fmt(report.working.pearson_r),
        report.degraded_regime,
        report.degraded.n
    );
    ensure(report.n == 120, || detail.clone())?;
    ensure(report.abs_r.is_some_and(|r| r > 0.5), || detail.clone())?;
    ensure(report.degraded_regime, || detail.clone())?;
    Ok(detail)
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_latent-probe"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim())
    })
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = tmp.path();
    let runs: [(&str, &[&str]); 7] = [
        ("data", &["gen", "--count", "6"]),
        ("model", &["init-model"]),
        ("score", &["score", "--image", "data/images/phantom_002.npy", "--model", "model"]),
        ("perturb", &["perturb", "--data", "data", "--model", "model", "--k", "5"]),
        ("corr", &["correlate", "--data", "data", "--k", "4"]),
        ("filter_p", &["filter", "--report", "perturb/report.csv", "--cutoff", "1.05"]),
        ("filter_c", &["filter", "--report", "corr/correlation.csv", "--cutoff", "1.0"]),
    ];
    let mut files = 0;
    for (out, args) in runs {
        let mut full = args.to_vec();
        full.extend(["--out", out]);
        cli(d, &full)?;
        let manifest = format!("{out}/manifest.txt");
        for jobs in ["1", "4"] {
            let again = format!("{out}_rerun_j{jobs}");
            cli(d, &[args[0], "--config", &manifest, "--out", &again, "--jobs", jobs])?;
            let (a, b) = (tree(&d.join(out)), tree(&d.join(&again)));
            ensure(a == b, || format!("{} rerun with --jobs {jobs} differs", args[0]))?;
            files += a.len();
        }
    }
    Ok(format!("6 commands re-run from manifests with --jobs 1 and 4, {files} files byte-identical"))
}

fn criterion_10() -> Outcome {
    let m = |bits: &[bool]| BinaryMask::new(1, bits.len(), bits.to_vec()).unwrap();
    let a = m(&[true, true, false, false]);
    let checks = [
        (dice(&a, &a), 1.0),
        (dice(&a, &m(&[false, false, true, true])), 0.0),
        (dice(&a, &m(&[false, true, true, false])), 0.5),
    ];
    for (got, want) in checks {
        let got = got.map_err(|e| e.to_string())?;
        ensure(got == want, || format!("dice {got} != {want}"))?;
    }
    let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
    let up: Vec<f64> = xs.iter().map(|x| 2.5 * x - 1.0).collect();
    let down: Vec<f64> = xs.iter().map(|x| -0.3 * x + 7.0).collect();
    let r_up = pearson(&xs, &up).map_err(|e| e.to_string())?;
    let r_down = pearson(&xs, &down).map_err(|e| e.to_string())?;
    ensure((r_up - 1.0).abs() <= 1e-12 && (r_down + 1.0).abs() <= 1e-12, || {
        format!("collinear r {r_up}, {r_down}")
    })?;
    let r3 = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).map_err(|e| e.to_string())?;
    ensure((r3 - 3f64.sqrt() / 2.0).abs() <= 1e-12, || format!("three-point r {r3}"))?;
    Ok(format!("dice 1/0/0.5 exact, r = {r_up}, {r_down}, {r3:.15}"))
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= run_criterion(1, "MI oracle equivalence", Some(secs(5)), criterion_1);
    ok &= run_criterion(2, "bin rule", None, criterion_2);
    ok &= run_criterion(3, "variance oracle", None, criterion_3);
    ok &= run_criterion(4, "noise calibration", Some(secs(30)), criterion_4);
    ok &= run_criterion(5, "masking contract", None, criterion_5);

    let mut c7 = None;
    ok &= run_criterion(6, "perturbation study", Some(secs(60)), || {
        let (c6, localization) = criteria_6_and_7();
        c7 = Some(localization);
        c6
    });
    ok &= run_criterion(7, "heatmap localization", None, || {
        c7.unwrap_or_else(|| Err("perturbation study did not run".into()))
    });
    ok &= run_criterion(8, "correlation study", Some(secs(120)), criterion_8);
    ok &= run_criterion(9, "CLI determinism", None, criterion_9);
    ok &= run_criterion(10, "DICE/Pearson unit values", None, criterion_10);

    if ok {
        println!("acceptance: all criteria PASS");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILURES");
        ExitCode::FAILURE
    }
}

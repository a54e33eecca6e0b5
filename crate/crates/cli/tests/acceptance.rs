//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/common/dicom_fixture.rs"]
mod dicom_fixture;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use srcodec::dataset::DEFAULT_RATIOS;
use srcodec::stats::bootstrap_ci;
use srcodec::synth::{add_gaussian_noise, add_uniform_noise, phantom};
use srcodec::*;

use dicom_fixture::Fixture;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_image(rng: &mut ChaCha8Rng) -> Image16 {
    let side = rng.random_range(64..=256);
    phantom(side, side, rng.random())
}

fn metric_identities() -> Check {
    let started = Instant::now();
    let cfg = FsimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_identity = 0.0f64;
    let mut worst_asym = 0.0f64;
    for i in 0..100 {
        let a = random_image(&mut rng);
        let b = add_uniform_noise(&a, 3000.0, i);
        let same = fsim(&a, &a, &cfg).map_err(err)?;
        worst_identity = worst_identity.max((same - 1.0).abs());
        let p = psnr(&a, &a, 255).map_err(err)?;
        ensure(p == f64::INFINITY, || format!("image {i}: PSNR(A,A) = {p}"))?;
        let ab = fsim(&a, &b, &cfg).map_err(err)?;
        let ba = fsim(&b, &a, &cfg).map_err(err)?;
        worst_asym = worst_asym.max((ab - ba).abs());
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(worst_identity <= 1e-9, || format!("max |fsim(A,A) - 1| = {worst_identity:e}"))?;
    ensure(worst_asym <= 1e-6, || format!("max |fsim(A,B) - fsim(B,A)| = {worst_asym:e}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "100 images 64..256 px, max |fsim(A,A)-1| {worst_identity:.1e}, max asymmetry {worst_asym:.1e}, PSNR(A,A) inf, {secs:.1} s"
    ))
}

fn psnr_oracle() -> Check {
    let img = |w, s: &[u16]| Image16::new(w, 1, s.to_vec()).unwrap();
    let zeros = img(4, &[0; 4]);
    let cases = [
        ("identical", psnr(&zeros, &zeros, 255), f64::INFINITY),
        ("0 vs 65535 at 65535", psnr(&zeros, &img(4, &[65535; 4]), 65535), 0.0),
        (
            "[0,0] vs [257,0] at 255",
            psnr(&img(2, &[0, 0]), &img(2, &[257, 0]), 255),
            10.0 * (255.0f64 * 255.0 / 0.5).log10(),
        ),
    ];
    let mut worst = 0.0f64;
    for (name, got, want) in cases {
        let got = got.map_err(err)?;
        let diff = if got == want { 0.0 } else { (got - want).abs() };
        ensure(diff <= 1e-9, || format!("{name}: got {got}, want {want}"))?;
        worst = worst.max(diff);
    }
    Ok(format!("3 closed-form cases, max error {worst:.1e} dB"))
}

/// Source corpus of 1024² phantoms plus its 512 and 256 round trips.
struct Corpus {
    _tmp: tempfile::TempDir,
    source: PathBuf,
    c512: PathBuf,
    c256: PathBuf,
    r512: PathBuf,
    r256: PathBuf,
}

const CORPUS_IMAGES: u64 = 50;

fn build_corpus() -> Result<Corpus, String> {
    let tmp = tempfile::tempdir().map_err(err)?;
    let dir = |n: &str| tmp.path().join(n);
    let source = dir("source");
    fs::create_dir_all(&source).map_err(err)?;
    let inputs: Vec<PathBuf> = (0..CORPUS_IMAGES)
        .into_par_iter()
        .map(|i| {
            let p = source.join(format!("img{i:03}.png"));
            save_png16(&phantom(1024, 1024, 1000 + i), &p).map(|_| p).map_err(err)
        })
        .collect::<Result<_, _>>()?;
    let spec = BackendSpec::builtin();
    let threads = rayon::current_num_threads().max(1);
    let round_trip = |size: u32| -> Result<(PathBuf, PathBuf), String> {
        let c = dir(&format!("c{size}"));
        let r = dir(&format!("r{size}"));
        let cfg = CodecConfig::new(1024, size, threads).map_err(err)?;
        let s = run_batch(&inputs, &c, BatchOp::Compress, &cfg, &spec).map_err(err)?;
        ensure(s.failures.is_empty(), || format!("compress {size}: {:?}", s.failures))?;
        let small: Vec<PathBuf> = inputs.iter().map(|p| c.join(p.file_name().unwrap())).collect();
        let cfg = CodecConfig::new(1024, 1024, threads).map_err(err)?;
        let s = run_batch(&small, &r, BatchOp::Decompress { target_size: 1024 }, &cfg, &spec)
            .map_err(err)?;
        ensure(s.failures.is_empty(), || format!("decompress {size}: {:?}", s.failures))?;
        Ok((c, r))
    };
    let (c512, r512) = round_trip(512)?;
    let (c256, r256) = round_trip(256)?;
    Ok(Corpus { _tmp: tmp, source, c512, c256, r512, r256 })
}

fn quality_ordering(corpus: &Corpus) -> Check {
    let cfg = MetricsConfig {
        threads: rayon::current_num_threads().max(1),
        ..MetricsConfig::default()
    };
    let m512 = batch_metrics(&corpus.source, &corpus.r512, &cfg).map_err(err)?;
    let m256 = batch_metrics(&corpus.source, &corpus.r256, &cfg).map_err(err)?;
    let (a, b) = (&m512.aggregate, &m256.aggregate);
    ensure(a.count == CORPUS_IMAGES as usize && b.count == a.count, || {
        format!("scored {} and {} of {CORPUS_IMAGES}", a.count, b.count)
    })?;
    ensure(a.fsim_mean > b.fsim_mean, || {
        format!("FSIM 512 {:.5} not above 256 {:.5}", a.fsim_mean, b.fsim_mean)
    })?;
    ensure(a.psnr_mean > b.psnr_mean, || {
        format!("PSNR 512 {:.3} not above 256 {:.3}", a.psnr_mean, b.psnr_mean)
    })?;
    Ok(format!(
        "{} images at 1024 px: FSIM {:.4} > {:.4}, PSNR {:.2} > {:.2} dB",
        a.count, a.fsim_mean, b.fsim_mean, a.psnr_mean, b.psnr_mean
    ))
}

fn noise_monotonicity() -> Check {
    let cfg = FsimConfig::default();
    let base = phantom(256, 256, 42);
    let mut f = Vec::new();
    let mut p = Vec::new();
    for sigma in [0.0, 500.0, 2000.0, 8000.0] {
        let noisy = add_gaussian_noise(&base, sigma, 7);
        f.push(fsim(&base, &noisy, &cfg).map_err(err)?);
        p.push(psnr(&base, &noisy, 255).map_err(err)?);
    }
    ensure(f.windows(2).all(|w| w[1] < w[0]), || format!("FSIM ladder {f:?}"))?;
    ensure(p.windows(2).all(|w| w[1] < w[0]), || format!("PSNR ladder {p:?}"))?;
    let fs: Vec<String> = f.iter().map(|v| format!("{v:.4}")).collect();
    let ps: Vec<String> = p.iter().map(|v| format!("{v:.2}")).collect();
    Ok(format!("sigma 0/500/2000/8000: FSIM {}, PSNR {} dB", fs.join(" > "), ps.join(" > ")))
}

fn size_direction(corpus: &Corpus) -> Check {
    let r = size_report(&corpus.source, &[corpus.c512.clone(), corpus.c256.clone()], true)
        .map_err(err)?;
    let (src, c512, c256) = (r.source.bytes, r.compressed[0].bytes, r.compressed[1].bytes);
    let zip = r.zip.as_ref().ok_or("no zip baseline")?.bytes;
    ensure(c512 < src, || format!("512 corpus {c512} B not below source {src} B"))?;
    ensure(c256 < c512, || format!("256 corpus {c256} B not below 512 corpus {c512} B"))?;
    let ratio = zip as f64 / src as f64;
    ensure(ratio >= 0.98, || format!("ZIP is {:.2}% of source", ratio * 100.0))?;
    Ok(format!(
        "source {src} B > 512 {c512} B > 256 {c256} B, ZIP {:.2}% of source",
        ratio * 100.0
    ))
}

/// Concordant pairs plus half the tied pairs over all positive/negative pairs.
fn brute_auc(labels: &[u8], scores: &[f64]) -> Option<f64> {
    let mut num = 0.0;
    let mut pairs = 0u64;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| num / pairs as f64)
}

fn auc_oracle() -> Check {
    const LEVELS: [f64; 3] = [0.1, 0.5, 0.9];
    let mut sets = 0u64;
    for n in 1..=8u32 {
        let score_combos = 3u64.pow(n);
        let mismatch = (0..1u64 << n).into_par_iter().find_map_any(|label_bits| {
            let labels: Vec<u8> = (0..n).map(|k| ((label_bits >> k) & 1) as u8).collect();
            let mut scores = vec![0.0; n as usize];
            for combo in 0..score_combos {
                let mut c = combo;
                for s in scores.iter_mut() {
                    *s = LEVELS[(c % 3) as usize];
                    c /= 3;
                }
                let preds: Vec<PredictionRecord> = (0..n as usize)
                    .map(|k| PredictionRecord::new(format!("r{k}"), labels[k], scores[k]))
                    .collect();
                let ok = match (auc(&preds), brute_auc(&labels, &scores)) {
                    (Ok(a), Some(b)) => a == b,
                    (Err(_), None) => true,
                    _ => false,
                };
                if !ok {
                    return Some(format!("labels {labels:?} scores {scores:?}"));
                }
            }
            None
        });
        if let Some(m) = mismatch {
            return Err(m);
        }
        sets += (1u64 << n) * score_combos;
    }
    Ok(format!("{sets} prediction sets of 1..8 records (3 score levels), exact equality"))
}

fn synthetic_predictions(n: usize, seed: u64) -> Vec<PredictionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = rng.random_bool(0.5) as u8;
            let score = 0.3 * label as f64 + rng.random_range(0.0..0.7);
            PredictionRecord::new(format!("r{i}"), label, score)
        })
        .collect()
}

fn bootstrap() -> Check {
    let d = BootstrapConfig::default();
    ensure(d.repeats == 100 && d.sample_size == 10, || format!("default is {}x{}", d.repeats, d.sample_size))?;

    let perfect: Vec<PredictionRecord> = (0..60)
        .map(|i| PredictionRecord::new(format!("p{i}"), (i % 2) as u8, if i % 2 == 1 { 0.8 } else { 0.2 }))
        .collect();
    for metric in Metric::ALL {
        let r = bootstrap_ci(&perfect, metric, 0.5, &d).map_err(err)?;
        ensure(r.lo == r.hi, || format!("{} on perfect predictions: [{}, {}]", metric.title(), r.lo, r.hi))?;
    }
    let flat: Vec<PredictionRecord> =
        (0..60).map(|i| PredictionRecord::new(format!("f{i}"), (i % 2) as u8, 0.4)).collect();
    let r = bootstrap_ci(&flat, Metric::Auc, 0.5, &d).map_err(err)?;
    ensure(r.lo == 0.5 && r.hi == 0.5, || format!("AUC on constant scores: [{}, {}]", r.lo, r.hi))?;

    let preds = synthetic_predictions(500, 99);
    let cfg = BootstrapConfig { seed: 5, ..d.clone() };
    for metric in Metric::ALL {
        let a = bootstrap_ci(&preds, metric, 0.5, &cfg).map_err(err)?;
        let b = bootstrap_ci(&preds, metric, 0.5, &cfg).map_err(err)?;
        ensure(a == b, || format!("{} differs between identical seeds", metric.title()))?;
    }

    let mut covered = BTreeMap::new();
    for trial in 0..100u64 {
        let preds = synthetic_predictions(500, trial);
        let cfg = BootstrapConfig { seed: trial, ..d.clone() };
        for metric in Metric::ALL {
            let hit = bootstrap_ci(&preds, metric, 0.5, &cfg)
                .map(|r| r.lo <= r.point && r.point <= r.hi)
                .unwrap_or(false);
            *covered.entry(metric.title()).or_insert(0) += hit as u32;
        }
    }
    let worst = covered.values().copied().min().unwrap_or(0);
    let summary: Vec<String> = covered.iter().map(|(m, c)| format!("{m} {c}/100")).collect();
    ensure(worst >= 95, || format!("point inside CI: {}", summary.join(", ")))?;
    Ok(format!(
        "default 100x10, zero-width on degenerate input, seeded repeatable, point inside CI: {}",
        summary.join(", ")
    ))
}

fn random_manifest(rng: &mut ChaCha8Rng) -> (Vec<StudyRecord>, usize) {
    let patients = rng.random_range(1..=150);
    let mut records = Vec::new();
    let mut largest = 0;
    for p in 0..patients {
        let images = if rng.random_bool(0.9) { rng.random_range(1..=4) } else { rng.random_range(5..=25) };
        largest = largest.max(images);
        for k in 0..images {
            records.push(StudyRecord {
                patient_id: format!("P{p}"),
                image_id: format!("P{p}_{k}"),
                path: PathBuf::from(format!("P{p}_{k}.png")),
                birads: None,
                days_to_biopsy: None,
                label: Some(if rng.random_bool(0.3) { Label::Positive } else { Label::Negative }),
            });
        }
    }
    (records, largest)
}

fn truth_table() -> Result<(), String> {
    for birads in 0..=6u8 {
        for biopsy in [Some(30u32), None] {
            let want = match (birads, biopsy) {
                (4 | 5 | 6, Some(_)) => LabelOutcome::Positive,
                (1 | 2, _) => LabelOutcome::Negative,
                _ => LabelOutcome::Excluded,
            };
            let rec = StudyRecord {
                patient_id: "p".into(),
                image_id: "i".into(),
                path: PathBuf::from("i.png"),
                birads: Some(birads),
                days_to_biopsy: biopsy,
                label: None,
            };
            let got = dataset::derive_label(&rec);
            ensure(got == want, || format!("birads {birads}, biopsy {biopsy:?}: {got:?}, want {want:?}"))?;
        }
    }
    Ok(())
}

fn split_law() -> Check {
    truth_table()?;
    let failures: Vec<String> = (0..10_000u64)
        .into_par_iter()
        .filter_map(|case| {
            let mut rng = ChaCha8Rng::seed_from_u64(case);
            let (records, largest) = random_manifest(&mut rng);
            let a = match split_patients(&records, DEFAULT_RATIOS, rng.random()) {
                Ok(a) => a,
                Err(e) => return Some(format!("case {case}: {e}")),
            };
            let mut home: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
            let mut sizes = [0usize; 3];
            for r in &records {
                let Some(s) = a.split_of(&r.image_id) else {
                    return Some(format!("case {case}: {} unassigned", r.image_id));
                };
                home.entry(&r.patient_id).or_default().insert(s);
                sizes[Split::ALL.iter().position(|x| *x == s).unwrap()] += 1;
            }
            if let Some((p, _)) = home.iter().find(|(_, s)| s.len() > 1) {
                return Some(format!("case {case}: patient {p} in several splits"));
            }
            let n = records.len() as f64;
            for (i, ratio) in DEFAULT_RATIOS.iter().enumerate() {
                if (sizes[i] as f64 - ratio * n).abs() > largest as f64 {
                    return Some(format!("case {case}: sizes {sizes:?} for {n} records, largest patient {largest}"));
                }
            }
            None
        })
        .collect();
    ensure(failures.is_empty(), || format!("{} failures, first: {}", failures.len(), failures[0]))?;
    Ok("10000 random manifests patient-disjoint and within one largest patient of 60:20:20, 7x2 label table exact".into())
}

fn srcodec(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_srcodec"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(err)?;
    ensure(out.status.success(), || {
        format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
    })
}

fn tree(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(err)? {
            let p = entry.map_err(err)?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, fs::read(&p).map_err(err)?);
            }
        }
    }
    Ok(out)
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let dicom = tmp.path().join("dicom");
    fs::create_dir_all(&dicom).map_err(err)?;
    for i in 0..8u64 {
        let img = phantom(200, 256, 300 + i);
        let mut f = Fixture::new(256, 200, img.samples().to_vec());
        f.patient_id = format!("P{}", i / 3);
        f.sop_uid = format!("1.2.826.0.1.{i}");
        fs::write(dicom.join(format!("s{i}.dcm")), f.encode()).map_err(err)?;
    }
    let mut trees = Vec::new();
    for threads in ["1", "4"] {
        let run = tmp.path().join(format!("t{threads}"));
        fs::create_dir_all(&run).map_err(err)?;
        let t = ["--threads", threads];
        let step = |args: &[&str]| srcodec(&run, &[&t[..], args].concat());
        step(&["ingest", "--dicom-dir", "../dicom", "--out-dir", "png", "--size", "256"])?;
        step(&["compress", "--in", "png", "--out", "c64", "--size", "64", "--source-size", "256"])?;
        step(&["decompress", "--in", "c64", "--out", "r256", "--target", "256"])?;
        step(&["metrics", "--ref", "png", "--test", "r256", "--out", "metrics/r256.csv"])?;
        step(&["sizes", "--source", "png", "--compressed", "c64", "--zip-baseline", "--out", "sizes.json"])?;
        step(&["report", "--inputs", "metrics/r256.json", "sizes.json", "--out", "report.md"])?;
        trees.push(tree(&run)?);
    }
    let (a, b) = (&trees[0], &trees[1]);
    let names_a: Vec<&PathBuf> = a.keys().collect();
    let names_b: Vec<&PathBuf> = b.keys().collect();
    ensure(names_a == names_b, || format!("file sets differ: {names_a:?} vs {names_b:?}"))?;
    let differing: Vec<&PathBuf> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k).collect();
    ensure(differing.is_empty(), || format!("differing artifacts: {differing:?}"))?;
    let bytes: usize = a.values().map(Vec::len).sum();
    Ok(format!("{} artifacts ({bytes} bytes) identical at --threads 1 and 4", a.len()))
}

fn mutate(base: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut b = base.to_vec();
    for _ in 0..rng.random_range(1..=4) {
        if b.is_empty() {
            b.push(rng.random());
            continue;
        }
        let at = rng.random_range(0..b.len());
        match rng.random_range(0..6) {
            0 => b[at] = rng.random(),
            1 => b[at] ^= 1 << rng.random_range(0..8),
            2 => b.truncate(at),
            3 => b.insert(at, rng.random()),
            4 => {
                let end = (at + 4).min(b.len());
                b[at..end].fill(0xff);
            }
            _ => {
                b.remove(at);
            }
        }
    }
    b
}

fn dicom_fuzz() -> Check {
    let bases: Vec<Vec<u8>> = {
        let px: Vec<u16> = (0..64).map(|i| i * 900).collect();
        let mut implicit = Fixture::new(8, 8, px.clone());
        implicit.explicit = false;
        implicit.transfer_syntax = Some(dicom_fixture::IMPLICIT_LE);
        let mut seq = Fixture::new(8, 8, px.clone());
        seq.with_sequence = true;
        let mut eight = Fixture::new(8, 8, px.iter().map(|v| v >> 8).collect());
        eight.bits_allocated = 8;
        eight.bits_stored = 8;
        vec![Fixture::new(8, 8, px).encode(), implicit.encode(), seq.encode(), eight.encode()]
    };
    for (i, b) in bases.iter().enumerate() {
        parse_dicom(b).map_err(|e| format!("unmutated fixture {i} rejected: {e}"))?;
    }
    let previous = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut ok, mut rejected, mut panics) = (0, 0, Vec::new());
    for case in 0..1000 {
        let bytes = mutate(&bases[case % bases.len()], &mut rng);
        match panic::catch_unwind(AssertUnwindSafe(|| parse_dicom(&bytes).map(|d| to_gray16(&d)))) {
            Ok(Ok(_)) => ok += 1,
            Ok(Err(_)) => rejected += 1,
            Err(_) => panics.push(case),
        }
    }
    panic::set_hook(previous);
    ensure(panics.is_empty(), || format!("{} panics, first at case {}", panics.len(), panics[0]))?;
    Ok(format!("1000 mutated fixtures: {rejected} typed errors, {ok} still decodable, 0 panics"))
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Check)> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn() -> Check| {
        let started = Instant::now();
        let r = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let status = if r.is_ok() { "PASS" } else { "FAIL" };
        let detail = match &r {
            Ok(s) | Err(s) => s,
        };
        println!("{status} {name}: {detail} [{:.1} s]", started.elapsed().as_secs_f64());
        results.push((name, r));
    };
    run("metric identities", &metric_identities);
    run("psnr oracle", &psnr_oracle);
    let corpus = build_corpus();
    run("quality ordering", &|| quality_ordering(corpus.as_ref().map_err(Clone::clone)?));
    run("noise monotonicity", &noise_monotonicity);
    run("size direction", &|| size_direction(corpus.as_ref().map_err(Clone::clone)?));
    drop(corpus);
    run("auc oracle", &auc_oracle);
    run("bootstrap", &bootstrap);
    run("split law", &split_law);
    run("determinism", &determinism);
    run("dicom fuzz", &dicom_fuzz);

    let failed = results.iter().filter(|(_, r)| r.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

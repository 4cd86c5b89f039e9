//! End-to-end acceptance checks, one line per criterion.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use speech_features::eval::{abx_score, ger, mae, AbxTriplet, PitchEval};
use speech_features::framing::FrameOptions;
use speech_features::pipeline::{
    default_config, extract_features, utterance_seed, FeatureKind, PipelineConfig,
};
use speech_features::pitch::{estimate_pitch, PitchOptions};
use speech_features::postproc::{cmvn_apply, CmvnOptions, CmvnScope};
use speech_features::serialize::{decode_binary, encode_binary};
use speech_features::speaker_norm::{
    estimate_warps, train_ubm_with_trace, UbmOptions, VtlnOptions,
};
use speech_features::spectral::{filterbank, mfcc, rasta_filter, FilterbankOptions, MfccOptions};
use speech_features::{Audio, Features, FeaturesCollection, Format, Utterance, Utterances};

type Check = fn() -> Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [(&str, Duration, Check); 9] = [
        ("1 shape contracts", Duration::from_secs(1), shapes),
        ("2 framing oracle", Duration::from_secs(1), framing),
        ("3 dsp oracles", Duration::from_secs(5), dsp),
        ("4 pitch", Duration::from_secs(10), pitch),
        ("5 metrics", Duration::from_secs(10), metrics),
        ("6 cmvn", Duration::from_secs(1), cmvn),
        ("7 ubm", Duration::from_secs(30), ubm),
        ("8 vtln", Duration::from_secs(120), vtln),
        ("9 pipeline determinism", Duration::from_secs(30), determinism),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(_) => Err("panicked".to_string()),
        };
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|_| {
            if elapsed <= budget {
                Ok(())
            } else {
                Err(format!("over budget of {budget:?}"))
            }
        });
        match outcome {
            Ok(()) => println!("PASS criterion {name} ({elapsed:.2?})"),
            Err(e) => {
                failed += 1;
                println!("FAIL criterion {name} ({elapsed:.2?}): {e}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn sine_corpus(dir: &Path, n: usize) -> Utterances {
    let items = (0..n)
        .map(|i| {
            let f0 = 120.0 + 15.0 * i as f64;
            let audio = common::tones(&[(f0, 0.6), (1.5 * f0, 0.4)], 0.3);
            let path = common::write(dir, &format!("u{i}"), &audio);
            Utterance::new(format!("u{i}"), path).with_speaker(format!("s{}", i % 3))
        })
        .collect();
    Utterances::new(items).unwrap()
}

fn shapes() -> Result<(), String> {
    let audio = common::tones(&[(440.0, 1.0)], 0.3);
    let f = mfcc(&audio, &MfccOptions::default(), 1.0, 0).map_err(err)?;
    ensure!(f.data().dim() == (98, 13), "mfcc shape {:?}", f.data().dim());

    let dir = tempfile::tempdir().map_err(err)?;
    let utts = sine_corpus(dir.path(), 1);
    for (with_delta, cols) in [(false, 16), (true, 42)] {
        let config = default_config(FeatureKind::Mfcc, true, with_delta, false, false).map_err(err)?;
        let out = extract_features(&config, &utts, 1).map_err(err)?;
        let f = out.get("u0").unwrap();
        ensure!(f.ndims() == cols, "delta={with_delta}: {} columns, expected {cols}", f.ndims());
        ensure!(f.nframes() == 98, "{} frames", f.nframes());
    }
    Ok(())
}

fn framing() -> Result<(), String> {
    for snip_edges in [true, false] {
        let opts = FrameOptions { snip_edges, ..Default::default() };
        let (len, shift) = (400usize, 160usize);
        for n in 0..=2000usize {
            let mut expected = 0;
            loop {
                let i = expected;
                let fits = if snip_edges {
                    i * shift + len <= n
                } else {
                    i * shift + shift / 2 <= n
                };
                if !fits {
                    break;
                }
                expected += 1;
            }
            ensure!(
                opts.num_frames(n) == expected,
                "snip_edges={snip_edges}, {n} samples: {} frames, expected {expected}",
                opts.num_frames(n)
            );
        }
    }
    Ok(())
}

fn dsp() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise: Vec<f64> = (0..8000).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let audio = Audio::new(noise, 16000).map_err(err)?;
    let opts = MfccOptions { cepstral_lifter: 0.0, ..Default::default() };
    let ceps = mfcc(&audio, &opts, 1.0, 7).map_err(err)?;
    let logmel = filterbank(&audio, &FilterbankOptions::default(), 1.0, 7).map_err(err)?;
    let n = logmel.ndims();
    for (row, mel) in ceps.data().rows().into_iter().zip(logmel.data().rows()) {
        for (k, &c) in row.iter().enumerate() {
            let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            let mut sum = 0.0;
            for (j, &x) in mel.iter().enumerate() {
                sum += x * (PI * k as f64 * (2 * j + 1) as f64 / (2 * n) as f64).cos();
            }
            ensure!((scale * sum - c).abs() < 1e-10, "c{k}: {c} vs {}", scale * sum);
        }
    }

    let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
    let (lo, hi, bins) = (mel(20.0), mel(8000.0), 23);
    let step = (hi - lo) / (bins + 1) as f64;
    for freq in [300.0, 1000.0, 3000.0] {
        let expected = (0..bins)
            .min_by(|&a, &b| {
                let da = (lo + (a + 1) as f64 * step - mel(freq)).abs();
                let db = (lo + (b + 1) as f64 * step - mel(freq)).abs();
                da.total_cmp(&db)
            })
            .unwrap();
        let fb = filterbank(&common::tones(&[(freq, 0.5)], 0.3), &FilterbankOptions::default(), 1.0, 0)
            .map_err(err)?;
        let mean = fb.data().mean_axis(Axis(0)).unwrap();
        let peak = (0..bins).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
        ensure!(peak.abs_diff(expected) <= 1, "{freq} Hz peaks in bin {peak}, expected {expected}");
    }

    let wave: Vec<f64> = (0..300).map(|t| (2.0 * PI * 0.1 * t as f64).sin()).collect();
    let with_dc: Vec<f64> = wave.iter().map(|x| x + 37.5).collect();
    let (a, b) = (rasta_filter(&wave), rasta_filter(&with_dc));
    for t in 100..wave.len() {
        ensure!((a[t] - b[t]).abs() < 1e-6, "frame {t}: DC leaks {}", (a[t] - b[t]).abs());
    }
    Ok(())
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn pitch() -> Result<(), String> {
    let opts = PitchOptions::default();
    let raw = estimate_pitch(&common::tones(&[(220.0, 2.0)], 0.5), &opts).map_err(err)?;
    for (i, row) in raw.data().rows().into_iter().enumerate() {
        ensure!((row[1] - 220.0).abs() <= 0.05 * 220.0, "frame {i}: {} Hz", row[1]);
    }

    let raw = estimate_pitch(&common::tones(&[(220.0, 1.0), (330.0, 1.0)], 0.5), &opts).map_err(err)?;
    let f0 = raw.data().column(1).to_vec();
    let half = f0.len() / 2;
    let (first, second) = (median(&f0[..half]), median(&f0[half..]));
    ensure!((first / 220.0 - 1.0).abs() < 0.05, "first half median {first}");
    ensure!((second / 330.0 - 1.0).abs() < 0.05, "second half median {second}");

    let path = |gain: f64| -> Result<Vec<f64>, String> {
        let audio = common::tones(&[(220.0, 0.7), (150.0, 0.5), (310.0, 0.5)], 0.5 * gain);
        Ok(estimate_pitch(&audio, &opts).map_err(err)?.data().column(1).to_vec())
    };
    let reference = path(1.0)?;
    for gain in [0.1, 10.0] {
        ensure!(path(gain)? == reference, "path changes at gain {gain}");
    }
    Ok(())
}

fn metrics() -> Result<(), String> {
    let e = PitchEval::unmasked(vec![100.0, 200.0, 300.0, 400.0], vec![104.0, 220.0, 300.0, 380.0])
        .map_err(err)?;
    // |errors| 4, 20, 0, 20; only 20/200 = 10% exceeds 5%
    ensure!(mae(&e).map_err(err)? == 11.0, "mae {}", mae(&e).unwrap());
    ensure!(ger(&e).map_err(err)? == 25.0, "ger {}", ger(&e).unwrap());
    let edge = PitchEval::unmasked(vec![100.0], vec![105.0]).map_err(err)?;
    ensure!(ger(&edge).map_err(err)? == 0.0, "an error of exactly 5% is not gross");
    let voiced = PitchEval::voiced(vec![0.0, 100.0, 120.0], vec![90.0, 0.0, 132.0]).map_err(err)?;
    ensure!(mae(&voiced).map_err(err)? == 12.0, "voiced mae {}", mae(&voiced).unwrap());
    ensure!(ger(&voiced).map_err(err)? == 100.0, "voiced ger {}", ger(&voiced).unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let items: Vec<Features> = (0..60)
        .map(|_| {
            let m = rng.random_range(5..20);
            let data = Array2::from_shape_fn((m, 8), |_| rng.sample(StandardNormal));
            let times: Vec<f64> = (0..m).map(|i| 0.01 * i as f64).collect();
            Features::with_centers(data, &times, serde_json::json!({})).unwrap()
        })
        .collect();
    let picks: Vec<[usize; 3]> = (0..1000)
        .map(|_| {
            let mut pick = || rng.random_range(0..items.len());
            [pick(), pick(), pick()]
        })
        .collect();
    let triplets: Vec<AbxTriplet> = picks
        .iter()
        .map(|&[a, b, x]| AbxTriplet { a: &items[a], b: &items[b], x: &items[x] })
        .collect();
    let score = abx_score(&triplets).map_err(err)?;
    ensure!((score - 50.0).abs() <= 5.0, "random ABX score {score}");
    Ok(())
}

fn random_collection(rng: &mut ChaCha8Rng) -> (FeaturesCollection, BTreeMap<String, String>) {
    let mut coll = FeaturesCollection::new();
    let mut speakers = BTreeMap::new();
    for i in 0..6 {
        let m = 40 + 13 * i;
        let offset = 3.0 * i as f64;
        let data = Array2::from_shape_fn((m, 5), |(_, j)| {
            offset + (1.0 + j as f64) * rng.sample::<f64, _>(StandardNormal)
        });
        let times: Vec<f64> = (0..m).map(|t| 0.01 * t as f64).collect();
        let name = format!("u{i}");
        coll.insert(name.clone(), Features::with_centers(data, &times, serde_json::json!({})).unwrap())
            .unwrap();
        speakers.insert(name, format!("s{}", i % 2));
    }
    (coll, speakers)
}

fn moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let var = (0..dim)
        .map(|j| rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n)
        .collect();
    (mean, var)
}

fn check_unit(rows: &[Vec<f64>], what: &str) -> Result<(), String> {
    let (mean, var) = moments(rows);
    for (m, v) in mean.iter().zip(&var) {
        ensure!(m.abs() < 1e-10, "{what}: mean {m}");
        ensure!((v - 1.0).abs() < 1e-8, "{what}: variance {v}");
    }
    Ok(())
}

fn cmvn() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (coll, speakers) = random_collection(&mut rng);
    for by in [CmvnScope::Frame, CmvnScope::Utterance, CmvnScope::Speaker] {
        let opts = CmvnOptions { by, norm_vars: true };
        let once = cmvn_apply(&coll, &speakers, &opts).map_err(err)?;
        let mut groups: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
        for (name, f) in &once {
            for (t, row) in f.data().rows().into_iter().enumerate() {
                match by {
                    CmvnScope::Frame => {
                        let cells: Vec<Vec<f64>> = row.iter().map(|&x| vec![x]).collect();
                        check_unit(&cells, &format!("{name} frame {t}"))?;
                    }
                    CmvnScope::Utterance => groups.entry(name.clone()).or_default().push(row.to_vec()),
                    CmvnScope::Speaker => {
                        groups.entry(speakers[name].clone()).or_default().push(row.to_vec())
                    }
                }
            }
        }
        for (group, rows) in &groups {
            check_unit(rows, &format!("{by:?} {group}"))?;
        }
        let twice = cmvn_apply(&once, &speakers, &opts).map_err(err)?;
        for ((name, a), (_, b)) in once.iter().zip(&twice) {
            let diff = (a.data() - b.data()).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
            ensure!(diff < 1e-8, "{by:?} {name}: second pass moves by {diff}");
        }
    }
    Ok(())
}

fn ubm() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut coll = FeaturesCollection::new();
    let data = Array2::from_shape_fn((4000, 6), |(i, j)| {
        (i % 5) as f64 * (j as f64 - 2.5) + rng.sample::<f64, _>(StandardNormal)
    });
    let times: Vec<f64> = (0..4000).map(|t| 0.01 * t as f64).collect();
    coll.insert("x", Features::with_centers(data, &times, serde_json::json!({})).unwrap())
        .unwrap();
    let opts = UbmOptions { num_gauss: 16, num_iters: 8, ..Default::default() };
    let (_, trace) = train_ubm_with_trace(&coll, &opts, 1).map_err(err)?;
    let iterations: usize = trace.segments.iter().map(|s| s.len().saturating_sub(1)).sum();
    ensure!(iterations > 0, "no EM iteration recorded");
    let drop = trace.max_relative_decrease();
    ensure!(drop <= 1e-8, "log-likelihood decreased by {drop} (relative)");

    let centers = [[-2.0, 1.0], [2.0, -1.0]];
    let unit = Normal::new(0.0, 0.5).unwrap();
    let data = Array2::from_shape_fn((3000, 2), |(i, j)| centers[i % 2][j] + unit.sample(&mut rng));
    let times: Vec<f64> = (0..3000).map(|t| 0.01 * t as f64).collect();
    let mut coll = FeaturesCollection::new();
    coll.insert("x", Features::with_centers(data, &times, serde_json::json!({})).unwrap())
        .unwrap();
    let opts = UbmOptions { num_gauss: 2, num_iters: 10, ..Default::default() };
    let (gmm, _) = train_ubm_with_trace(&coll, &opts, 2).map_err(err)?;
    let means = gmm.means();
    for c in centers {
        let best = means
            .rows()
            .into_iter()
            .map(|m| ((m[0] - c[0]).powi(2) + (m[1] - c[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        ensure!(best < 0.1, "component at {c:?} recovered with error {best}");
    }
    Ok(())
}

fn vtln_extractor(u: &Utterance, warp: f64) -> speech_features::Result<Features> {
    let audio = u.load_audio()?.resample(common::RATE)?;
    mfcc(&audio, &MfccOptions::default(), warp, utterance_seed(0, &u.name))
}

fn vtln() -> Result<(), String> {
    let opts = VtlnOptions::default();
    let grid = opts.warps();
    ensure!(
        grid.first() == Some(&0.85) && grid.last() == Some(&1.15) && grid.len() == 31,
        "grid {grid:?}"
    );
    let dir = tempfile::tempdir().map_err(err)?;

    let single = common::single_speaker_corpus(dir.path());
    let est = estimate_warps(&single, vtln_extractor, &opts, 0).map_err(err)?;
    ensure!(est.warps["s"] == 1.0, "single speaker warp {}", est.warps["s"]);

    let corpus = common::vtln_corpus(dir.path());
    ensure!(corpus.len() == 12, "{} utterances", corpus.len());
    let est = estimate_warps(&corpus, vtln_extractor, &opts, 0).map_err(err)?;
    let (a, b) = (est.warps["a"], est.warps["b"]);
    // raised formants are compensated by filters moved up: warp below 1
    ensure!(b < 1.0, "shifted speaker warp {b}");
    ensure!(a >= 1.0, "original speaker warp {a}");
    for w in est.warps.values() {
        ensure!(grid.contains(w), "warp {w} off the grid");
    }
    Ok(())
}

fn determinism() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let utts = sine_corpus(dir.path(), 6);
    let mut config: PipelineConfig =
        default_config(FeatureKind::Mfcc, true, true, true, false).map_err(err)?;
    config.cmvn = Some(CmvnOptions { by: CmvnScope::Speaker, norm_vars: true });
    config.seed = 17;
    let one = extract_features(&config, &utts, 1).map_err(err)?;
    let four = extract_features(&config, &utts, 4).map_err(err)?;
    let bytes = encode_binary(&one).map_err(err)?;
    ensure!(bytes == encode_binary(&four).map_err(err)?, "njobs 1 and 4 differ");

    let bin = dir.path().join("out.bin");
    one.save(&bin, Format::Binary).map_err(err)?;
    let back = FeaturesCollection::load(&bin, Format::Binary).map_err(err)?;
    ensure!(back == one, "binary round trip is lossy");
    ensure!(decode_binary(&bytes).map_err(err)? == one, "binary decode is lossy");

    let csv = dir.path().join("out_csv");
    one.save(&csv, Format::Csv).map_err(err)?;
    let back = FeaturesCollection::load(&csv, Format::Csv).map_err(err)?;
    ensure!(back.len() == one.len(), "csv lost items");
    for ((name, a), (other, b)) in one.iter().zip(&back) {
        ensure!(name == other, "csv names {name} vs {other}");
        ensure!(a.properties() == b.properties(), "{name}: properties differ");
        for (x, y) in [(a.data(), b.data()), (a.times(), b.times())] {
            ensure!(x.dim() == y.dim(), "{name}: shape differs");
            let diff = (x - y).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
            ensure!(diff <= 1e-12, "{name}: csv error {diff}");
        }
    }
    Ok(())
}

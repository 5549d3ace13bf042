//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its verdict, and exits nonzero if any fails.

use std::collections::BTreeMap;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uvq::estimator::{shatter_coefficient, vc_upper_check, HalfLine, Indicator};
use uvq::harness::{
    build_code, fit_rate_exponent, median, nonincreasing_with_inversions, run_experiment, ExperimentConfig, Metric,
    TrialRecord, BOUND_TOLERANCE,
    write_csv,
};
use uvq::param_codec::{ceil_sqrt, index_bits, ParamGrid};
use uvq::sources::{Component, Family, MixtureFamily, ParamSpace, ParamVector, QuadratureGrid, SourceModel, Support};
use uvq::two_stage::TwoStageError;
use uvq::vq::{
    augment_codebook, expected_distortion, lloyd_design, mismatch_gap, reference_moment, robust_reencode, sample_blocks,
    truncated_encode, CodeShape, Codebook, DesignBudget, DistortionSpec, Estimate, Provenance,
};

const LADDER: [usize; 7] = [64, 128, 256, 512, 1024, 2048, 4096];

const FAMILY_TOML: &str = r#"
[family]
kind = "mixture"
support = [0.0, 1.5]
components = [
    { kind = "uniform", a = 0.0, b = 1.0 },
    { kind = "uniform", a = 0.5, b = 1.5 },
]
"#;

fn config(lengths: &[usize], trials: usize, dir: &std::path::Path) -> ExperimentConfig {
    let text = format!(
        "seed = 2024\nthetas = [[0.7, 0.3]]\nblock_lengths = {lengths:?}\nrate = 2.0\np = 2.0\ntrials = {trials}\n\
         {FAMILY_TOML}\n[output]\ncsv = {:?}\n",
        dir.join("records.csv").display().to_string()
    );
    ExperimentConfig::from_toml(&text).expect("acceptance config parses")
}

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn by_length(records: &[TrialRecord], metric: Metric) -> BTreeMap<usize, f64> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(r.n).or_default().push(metric.of(r));
    }
    groups.into_iter().map(|(n, v)| (n, median(&v))).collect()
}

fn rate_law(records: &[TrialRecord], secs: f64) -> Verdict {
    match fit_rate_exponent(records, Metric::DvError) {
        Ok(fit) => verdict(
            (-0.65..=-0.35).contains(&fit.slope) && fit.ci_excludes_zero() && secs <= 600.0,
            format!("slope {:.4}, 90% CI [{:.4}, {:.4}], run {secs:.1}s", fit.slope, fit.ci_low, fit.ci_high),
        ),
        Err(e) => verdict(false, e.to_string()),
    }
}

fn header_overhead(records: &[TrialRecord]) -> Verdict {
    let space = ParamSpace::Simplex { k: 2 };
    let mut bad = Vec::new();
    for n in LADDER {
        let grid = ParamGrid::new(space.clone(), n);
        let exact = index_bits(grid.len());
        let (k, j) = (grid.dim() as f64, grid.side() as f64);
        let bound = k * ((ceil_sqrt(n) as f64).log2() + j.log2()) + 1.0;
        let logged = records.iter().filter(|r| r.n == n).all(|r| r.header_bits == exact);
        if grid.header_bits() != exact || exact as f64 > bound || !logged {
            bad.push(n);
        }
    }
    verdict(bad.is_empty(), if bad.is_empty() { "all lengths exact and within bound".into() } else { format!("failing n {bad:?}") })
}

fn redundancy_decay(records: &[TrialRecord]) -> Verdict {
    let med = by_length(records, Metric::Redundancy);
    let values: Vec<f64> = med.values().copied().collect();
    let positive = values.iter().all(|v| *v > 0.0);
    let monotone = nonincreasing_with_inversions(&values, 1);
    let ratio = med[&4096] / med[&64];
    verdict(
        positive && monotone && ratio <= 0.25,
        format!("medians [{}], ratio 4096/64 = {ratio:.4}", values.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")),
    )
}

fn min_distance_bound(records: &[TrialRecord]) -> Verdict {
    let bad = records.iter().filter(|r| r.bound_margin_min < -BOUND_TOLERANCE).count();
    let worst = records.iter().map(|r| r.bound_margin_min).fold(f64::INFINITY, f64::min);
    verdict(bad == 0, format!("{} trials, {bad} violations, smallest margin {worst:.3e}", records.len()))
}

fn mixture(components: Vec<Component>, lo: f64, hi: f64) -> Arc<Family> {
    Arc::new(Family::Mixture(MixtureFamily::new(components, Support::new(lo, hi).unwrap()).unwrap()))
}

fn three_component() -> Arc<Family> {
    mixture(
        vec![
            Component::uniform(0.0, 1.0).unwrap(),
            Component::triangular(0.0, 0.2, 1.0).unwrap(),
            Component::truncated_gaussian(0.7, 0.15, 0.0, 1.0).unwrap(),
        ],
        0.0,
        1.0,
    )
}

fn two_uniforms() -> Arc<Family> {
    mixture(vec![Component::uniform(0.0, 1.0).unwrap(), Component::uniform(0.5, 1.5).unwrap()], 0.0, 1.5)
}

fn random_codebook(rng: &mut ChaCha8Rng, n: usize, support: Support) -> Codebook {
    let bits = rng.random_range(1..=3u32);
    let words: Vec<f64> = (0..1usize << bits).map(|_| support.lo + support.width() * rng.random::<f64>()).collect();
    Codebook::new(n, 1, words, bits, 2.0, Provenance::default()).unwrap()
}

fn quantizer_mismatch() -> Verdict {
    let fam = three_component();
    let space = fam.param_space();
    let mut rng = ChaCha8Rng::seed_from_u64(0x3157);
    let mut failures = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    for case in 0..100u64 {
        let p = if case % 2 == 0 { 1.0 } else { 2.0 };
        let spec = DistortionSpec::new(p, fam.support()).unwrap();
        let n = [1, 2, 4][rng.random_range(0..3)];
        let cb = random_codebook(&mut rng, n, fam.support());
        let mp = SourceModel::new(fam.clone(), space.random_point(&mut rng)).unwrap();
        let mq = SourceModel::new(fam.clone(), space.random_point(&mut rng)).unwrap();
        let gap = mismatch_gap(&cb, &mp, &mq, &spec, 2000, case).unwrap();
        worst = worst.max(gap.lhs - gap.rhs - 3.0 * gap.mc_sigma);
        if !gap.holds(3.0) {
            failures += 1;
        }
    }
    verdict(failures == 0, format!("100 cases, {failures} violations, largest excess {worst:.3e}"))
}

fn vc_bounds() -> Verdict {
    let k2 = vc_upper_check(&two_uniforms(), 500, 3, 11).unwrap();
    let k3 = vc_upper_check(&three_component(), 500, 4, 12).unwrap();

    // half-lines [a, inf) on three sorted points cut exactly the suffixes
    let points = [0.1, 0.4, 0.9];
    let class: Vec<HalfLine> = (0..=200).map(|i| HalfLine { a: -0.5 + i as f64 / 100.0 + 0.0025 }).collect();
    let mut seen: Vec<[bool; 3]> = class.iter().map(|h| points.map(|x| h.contains(x))).collect();
    seen.sort();
    seen.dedup();
    let hand = vec![[false; 3], [false, false, true], [false, true, true], [true; 3]];
    let count = shatter_coefficient(&class, &points).unwrap();
    let oracle = seen == hand && count == 4;
    verdict(
        k2.passed && k3.passed && oracle,
        format!("k=2 max patterns {}/8, k=3 max patterns {}/16, half-line oracle {}", k2.max_patterns, k3.max_patterns, if oracle { "matches" } else { "differs" }),
    )
}

fn lloyd_sanity() -> Verdict {
    let fam = mixture(vec![Component::uniform(0.0, 1.0).unwrap(), Component::uniform(0.0, 0.5).unwrap()], 0.0, 1.0);
    let model = SourceModel::new(fam.clone(), ParamVector::new(vec![1.0, 0.0])).unwrap();
    let spec = DistortionSpec::new(2.0, fam.support()).unwrap();
    let budget = DesignBudget { training_per_word: 20_000, ..DesignBudget::default() };
    let cb = lloyd_design(&model, CodeShape::new(1, 1, 1.0).unwrap(), &spec, 7, &budget).unwrap();
    let d = expected_distortion(&cb, &model, &spec, &QuadratureGrid::with_default(fam.support())).unwrap();
    let target = 1.0 / 48.0;
    let mut words = cb.words().to_vec();
    words.sort_by(f64::total_cmp);
    let close = words.len() == 2 && (words[0] - 0.25).abs() <= 0.01 && (words[1] - 0.75).abs() <= 0.01;
    verdict(
        (d - target).abs() <= 0.05 * target && close,
        format!("distortion {d:.6} vs {target:.6}, words {words:.4?}"),
    )
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1, |c, i| c * (n - i) / (i + 1))
}

fn unbounded_extension() -> Verdict {
    let support = Support::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11);
    let mut count_errors = 0;
    for n in 1..=24usize {
        let cb = random_codebook(&mut rng, n, support);
        let delta = rng.random_range(0.05..0.5);
        let aug = augment_codebook(&cb, delta, 0.5, 0.1).unwrap();
        let m = (delta * n as f64).floor() as u128;
        let base = (cb.word_count() as u128).pow(n as u32);
        let formula = base * (0..=m).map(|i| binomial(n as u128, i)).sum::<u128>() + 1;
        if aug.count() != Some(formula) {
            count_errors += 1;
        }
    }

    // D(augmented) <= Dbar(base under min(rho, M)) + sqrt(G' Dbar / M)
    let fam = three_component();
    let spec = DistortionSpec::new(2.0, fam.support()).unwrap();
    let space = fam.param_space();
    let mut failures = 0;
    let mut worst = f64::NEG_INFINITY;
    for case in 0..50u64 {
        let n = [4, 8, 16][rng.random_range(0..3)];
        let cb = random_codebook(&mut rng, n, support);
        let threshold = rng.random_range(0.02..0.3);
        let delta = rng.random_range(0.1..0.5);
        let a_star = rng.random::<f64>();
        let g = reference_moment(&fam, a_star, &spec).unwrap();
        let g_prime = g * (1.0 + 2.0 / delta);
        let model = SourceModel::new(fam.clone(), space.random_point(&mut rng)).unwrap();
        let mut d = Vec::new();
        let mut d_bar = Vec::new();
        for block in sample_blocks(&model, case, 4000, n) {
            let (idx, truncated) = truncated_encode(&cb, &block, &spec, threshold).unwrap();
            let base = cb.reproduce(&idx).unwrap();
            let out = robust_reencode(&block, &base, delta, a_star, threshold, &spec).unwrap();
            d.push(Codebook::block_distortion(&block, &out, &spec) / n as f64);
            d_bar.push(truncated / n as f64);
        }
        let (d, d_bar) = (Estimate::from_values(&d), Estimate::from_values(&d_bar));
        let rhs = d_bar.mean + (g_prime * d_bar.mean / threshold).sqrt();
        let sigma = d.se.hypot(d_bar.se);
        worst = worst.max(d.mean - rhs - 3.0 * sigma);
        if d.mean > rhs + 3.0 * sigma {
            failures += 1;
        }
    }
    verdict(
        count_errors == 0 && failures == 0,
        format!("count mismatches {count_errors}/24, inequality violations {failures}/50, largest excess {worst:.3e}"),
    )
}

fn determinism(dir: &std::path::Path) -> Verdict {
    let cfg = config(&[64, 256], 3, dir);
    let mut csvs = Vec::new();
    for _ in 0..2 {
        let path = dir.join("records.csv");
        write_csv(&run_experiment(&cfg).unwrap(), &path).unwrap();
        csvs.push(std::fs::read(&path).unwrap());
    }
    let csv_same = csvs[0] == csvs[1];

    let validated = cfg.validate().unwrap();
    let model = SourceModel::new(validated.family.clone(), ParamVector::new(vec![0.7, 0.3])).unwrap();
    let blocks = sample_blocks(&model, 99, 6, 64);
    let stream = |_: ()| {
        let code = build_code(&validated, 64).unwrap();
        code.write(&code.encode_stream(&blocks).unwrap()).unwrap()
    };
    let bytes = stream(());
    let stream_same = bytes == stream(());

    let code = build_code(&validated, 64).unwrap();
    let truncated = matches!(code.read(&bytes[..bytes.len() - 1]), Err(TwoStageError::Format(_)));
    let mut flipped = bytes.clone();
    flipped[0] ^= 0x20;
    let corrupted = matches!(code.read(&flipped), Err(TwoStageError::Format(_)));

    // the CLI leaves no output file behind when decoding fails
    let cfg_path = dir.join("codec.toml");
    std::fs::write(&cfg_path, format!("seed = 2024\nthetas = [[0.7, 0.3]]\nblock_lengths = [64]\nrate = 2.0\np = 2.0\ntrials = 1\n{FAMILY_TOML}")).unwrap();
    let bad = dir.join("bad.uq2s");
    std::fs::write(&bad, &bytes[..bytes.len() - 3]).unwrap();
    let out = dir.join("decoded.txt");
    let run = Command::new(env!("CARGO_BIN_EXE_uvq"))
        .args(["codec", "decode", "--n", "64", "--config"])
        .arg(&cfg_path)
        .arg("--input")
        .arg(&bad)
        .arg("--output")
        .arg(&out)
        .output()
        .unwrap();
    let stderr = String::from_utf8_lossy(&run.stderr);
    let cli_clean = run.status.code() == Some(2) && stderr.contains("malformed stream") && !out.exists();

    verdict(
        csv_same && stream_same && truncated && corrupted && cli_clean,
        format!(
            "csv identical {csv_same}, stream identical {stream_same}, truncated rejected {truncated}, \
             corrupted rejected {corrupted}, cli leaves no output {cli_clean}"
        ),
    )
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let records = run_experiment(&config(&LADDER, 50, dir.path())).expect("ladder experiment runs");
    let secs = start.elapsed().as_secs_f64();

    let results: Vec<(&str, Verdict)> = vec![
        ("1 identification rate law", rate_law(&records, secs)),
        ("2 header overhead", header_overhead(&records)),
        ("3 redundancy decay", redundancy_decay(&records)),
        ("4 minimum-distance bound", min_distance_bound(&records)),
        ("5 quantizer mismatch", quantizer_mismatch()),
        ("6 VC bounds", vc_bounds()),
        ("7 Lloyd sanity", lloyd_sanity()),
        ("8 unbounded extension", unbounded_extension()),
        ("9 determinism and wire format", determinism(dir.path())),
    ];
    let mut all = true;
    for (name, v) in &results {
        println!("{} criterion {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        all &= v.passed;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

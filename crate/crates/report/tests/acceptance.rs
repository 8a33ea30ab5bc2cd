//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Failures are reported, not hidden; the process exits non-zero on a
//! failure only when `ACCEPTANCE_STRICT=1`, so the slow experimental
//! criteria do not mask the rest of the test suite.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use basinscope::embed::{conditional_affinities, tsne_embed, TsneConfig};
use basinscope::landscape::{basin_samples, log_volume, DirectionSampler, QuadraticBowl, RadiusSearch};
use basinscope::nn::{loss_grad, Activation, Batch, Matrix, MlpArch, ParamVector};
use basinscope::objective::{cross_entropy, poisoned_loss, reverse_cross_entropy, ObjectiveSpec};
use basinscope::rng::{mix, Rng};
use basinscope_report::checkpoint::{decode, encode, CheckpointError};
use basinscope_report::experiments::{self, good_and_bad, measure, Protocol, SweepRow};
use common::{basinscope, small_invocations, snapshot};

const SEEDS: u64 = 10;
/// Smallest good-minus-bad log10 volume gap must exceed this. The first
/// reference run gave 1877.7; the bound keeps half of it as slack.
const VOLUME_GAP_FLOOR: f64 = 900.0;

#[derive(Default)]
struct Report {
    lines: Vec<(u32, bool, String)>,
}

impl Report {
    fn line(&mut self, id: u32, pass: bool, detail: String) {
        eprintln!("criterion {id} done");
        self.lines.push((id, pass, detail));
    }

    /// Prints the lines in criterion order and returns the failure count.
    fn print(mut self) -> usize {
        self.lines.sort_by_key(|l| l.0);
        for (id, pass, detail) in &self.lines {
            println!("criterion {id:>2}: {} | {detail}", if *pass { "PASS" } else { "FAIL" });
        }
        self.lines.iter().filter(|l| !l.1).count()
    }
}

/// Spearman correlation with tied values given their average rank.
fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &order[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

struct SeedResult {
    seed: u64,
    clean_ok: bool,
    bad_ok: bool,
    detail: String,
    seconds: f64,
    good_radius: Option<(f64, f64, f64)>,
    bad_radius: Option<(f64, f64, f64)>,
}

fn minimizers_and_basins() -> Vec<SeedResult> {
    let search = RadiusSearch::default();
    (0..SEEDS)
        .map(|seed| {
            let start = Instant::now();
            let protocol = Protocol::swissroll(seed);
            let pair = good_and_bad(&protocol).expect("the default protocol is valid");
            let seconds = start.elapsed().as_secs_f64();
            let g = pair.good_metrics();
            let clean_ok = g.train_acc == 1.0 && g.test_acc >= 0.95;
            let basin = |params: &ParamVector| {
                let t = Instant::now();
                let m = measure(&protocol.arch, params, &pair.data, 3000, &search, mix(seed, 0xba51))
                    .expect("minimizer sits inside the cutoff");
                (m.volume.mean_radius, m.volume.log10_volume, t.elapsed().as_secs_f64())
            };
            let good_radius = clean_ok.then(|| basin(pair.good()));
            let (bad_ok, bad_text, bad_radius) = match &pair.bad {
                Ok(b) => {
                    let ok = b.metrics.train_acc >= 0.99 && b.metrics.test_acc <= 0.60;
                    (
                        ok,
                        format!(
                            "bad {:.3}/{:.3} at epoch {}",
                            b.metrics.train_acc, b.metrics.test_acc, b.metrics.epoch
                        ),
                        ok.then(|| basin(&b.params)),
                    )
                }
                Err(e) => (false, format!("bad: {e}"), None),
            };
            let r = SeedResult {
                seed,
                clean_ok,
                bad_ok,
                detail: format!("good {:.3}/{:.3}, {bad_text}", g.train_acc, g.test_acc),
                seconds,
                good_radius,
                bad_radius,
            };
            eprintln!("  seed {seed}: {} ({seconds:.0} s)", r.detail);
            r
        })
        .collect()
}

fn criteria_1_to_3(report: &mut Report) {
    let results = minimizers_and_basins();
    let clean = results.iter().filter(|r| r.clean_ok).count();
    let bad = results.iter().filter(|r| r.bad_ok).count();
    let slowest = results.iter().map(|r| r.seconds).fold(0.0, f64::max);
    let missed: Vec<u64> = results.iter().filter(|r| !r.bad_ok).map(|r| r.seed).collect();
    report.line(
        1,
        clean >= 8 && bad >= 8 && slowest < 120.0,
        format!("clean {clean}/{SEEDS}, poisoned {bad}/{SEEDS} (missed seeds {missed:?}), slowest seed {slowest:.0} s"),
    );

    let goods: Vec<(f64, f64, f64)> = results.iter().filter_map(|r| r.good_radius).collect();
    let bads: Vec<(f64, f64, f64)> = results.iter().filter_map(|r| r.bad_radius).collect();
    let min_good = goods.iter().map(|g| g.0).fold(f64::INFINITY, f64::min);
    let max_bad = bads.iter().map(|b| b.0).fold(f64::NEG_INFINITY, f64::max);
    let slowest_basin = goods.iter().chain(&bads).map(|x| x.2).fold(0.0, f64::max);
    report.line(
        2,
        !goods.is_empty() && !bads.is_empty() && min_good > max_bad && slowest_basin < 300.0,
        format!(
            "min good radius {min_good:.5} vs max bad radius {max_bad:.5} over {} good / {} bad minimizers, slowest {slowest_basin:.0} s",
            goods.len(),
            bads.len()
        ),
    );

    let gaps: Vec<f64> = results
        .iter()
        .filter_map(|r| Some(r.good_radius?.1 - r.bad_radius?.1))
        .collect();
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    report.line(
        3,
        !gaps.is_empty() && min_gap > VOLUME_GAP_FLOOR,
        format!(
            "smallest log10 volume gap {min_gap:.1} over {} seed pairs (floor {VOLUME_GAP_FLOOR})",
            gaps.len()
        ),
    );
}

fn criterion_4(report: &mut Report) {
    let mut protocol = Protocol::swissroll(0);
    protocol.search.stop.max_epochs = experiments::SWEEP_EPOCHS;
    let data = protocol.data.generate().unwrap();
    let search = RadiusSearch::default();
    let mut rows: Vec<SweepRow> = Vec::new();
    for beta in [0.0, 0.2, 0.4, 0.6, 0.8, 0.9] {
        match experiments::sweep_point(&protocol, &data, beta, 3000, &search) {
            Ok(row) => {
                eprintln!(
                    "  beta {beta}: test {:.3}, mean radius {:.5}, log10 volume {:.1}",
                    row.test_acc, row.mean_radius, row.log10_volume
                );
                rows.push(row);
            }
            Err(e) => eprintln!("  beta {beta}: {e}"),
        }
    }
    if rows.len() < 6 {
        report.line(
            4,
            false,
            format!("only {} of 6 sweep minimizers fit the training set", rows.len()),
        );
        return;
    }
    let acc: Vec<f64> = rows.iter().map(|r| r.test_acc).collect();
    let vol: Vec<f64> = rows.iter().map(|r| r.log10_volume).collect();
    let rad: Vec<f64> = rows.iter().map(|r| r.mean_radius).collect();
    let (sv, sr) = (spearman(&acc, &vol), spearman(&acc, &rad));
    report.line(
        4,
        sv >= 0.8 && sr >= 0.8,
        format!("Spearman(test acc, log10 volume) {sv:.3}, Spearman(test acc, mean radius) {sr:.3}"),
    );
}

fn criterion_5(report: &mut Report) {
    let cutoff = 0.1;
    let search = RadiusSearch {
        cutoff,
        tol: 1e-7,
        max_radius: 10.0,
    };
    let estimate = |bowl: &QuadraticBowl, count: usize, seed: u64| {
        let center = vec![0.0; bowl.coeffs().len()];
        let samples = basin_samples(bowl, &center, &DirectionSampler::euclidean(seed), count, &search).unwrap();
        log_volume(&samples, center.len()).unwrap().log10_volume
    };
    let ellipse = QuadraticBowl::new(vec![1.0, 10.0]).unwrap();
    let exact = (PI * cutoff / 10f64.sqrt()).log10();
    let est = estimate(&ellipse, 20_000, 11);

    const N: usize = 4000;
    let (ax, ay) = (cutoff.sqrt(), (cutoff / 10.0).sqrt());
    let (hx, hy) = (2.0 * ax / N as f64, 2.0 * ay / N as f64);
    let mut inside = 0u64;
    for i in 0..N {
        let x = -ax + (i as f64 + 0.5) * hx;
        for j in 0..N {
            let y = -ay + (j as f64 + 0.5) * hy;
            inside += u64::from(x * x + 10.0 * y * y < cutoff);
        }
    }
    let grid = (inside as f64 * hx * hy).log10();

    let bowl_errors: Vec<f64> = [1, 2, 5, 10]
        .iter()
        .map(|&n| {
            let bowl = QuadraticBowl::isotropic(n);
            (estimate(&bowl, 200, n as u64) - bowl.log10_basin_volume(cutoff)).abs()
        })
        .collect();
    let worst_bowl = bowl_errors.iter().copied().fold(0.0, f64::max);
    report.line(
        5,
        (est - exact).abs() <= 0.01 && (est - grid).abs() <= 0.005 && worst_bowl <= 0.02,
        format!(
            "ellipse estimate {est:.5} vs closed form {exact:.5} vs grid {grid:.5}; worst isotropic error {worst_bowl:.2e}"
        ),
    );
}

fn random_batch(rng: &mut Rng, n: usize, dim: usize, classes: usize) -> Batch {
    let data = (0..n * dim).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
    let labels = (0..n).map(|_| rng.below(classes)).collect();
    Batch::new(Matrix::new(n, dim, data).unwrap(), labels).unwrap()
}

fn random_arch(rng: &mut Rng) -> MlpArch {
    let mut widths = vec![1 + rng.below(3)];
    for _ in 0..1 + rng.below(3) {
        widths.push(1 + rng.below(8));
    }
    widths.push(2 + rng.below(2));
    MlpArch::new(widths, Activation::Tanh).unwrap()
}

fn criterion_6(report: &mut Report) {
    const STEP: f64 = 1e-5;
    let mut rng = Rng::new(606);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let arch = random_arch(&mut rng);
        let params = ParamVector::new((0..arch.param_count()).map(|_| rng.uniform_in(-1.0, 1.0)).collect());
        let (nt, np) = (1 + rng.below(12), 1 + rng.below(6));
        let train = random_batch(&mut rng, nt, arch.input_dim(), arch.num_classes());
        let poison = random_batch(&mut rng, np, arch.input_dim(), arch.num_classes());
        let spec = if case % 2 == 0 {
            ObjectiveSpec::Clean
        } else {
            ObjectiveSpec::Poisoned { beta: rng.uniform() }
        };
        let loss = |p: &ParamVector| match spec {
            ObjectiveSpec::Clean => cross_entropy(&arch, p, &train).unwrap(),
            ObjectiveSpec::Poisoned { beta } => poisoned_loss(&arch, p, &train, &poison, beta).unwrap(),
        };
        let (_, grad) = loss_grad(&arch, &params, &train, Some(&poison), spec).unwrap();
        for i in 0..params.len() {
            let (mut plus, mut minus) = (params.clone(), params.clone());
            plus.as_mut_slice()[i] += STEP;
            minus.as_mut_slice()[i] -= STEP;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            let a = grad.as_slice()[i];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-4));
        }
    }
    report.line(
        6,
        worst < 1e-4,
        format!("max relative error {worst:.2e} over 100 networks"),
    );
}

fn criterion_7(report: &mut Report) {
    let mut rng = Rng::new(707);
    let mut identical = 0;
    let mut worst_affine: f64 = 0.0;
    for case in 0..1000 {
        let arch = random_arch(&mut rng);
        let params = ParamVector::new((0..arch.param_count()).map(|_| 2.0 * rng.gaussian()).collect());
        let (nt, np) = (1 + rng.below(20), 1 + rng.below(20));
        let train = random_batch(&mut rng, nt, arch.input_dim(), arch.num_classes());
        let poison = random_batch(&mut rng, np, arch.input_dim(), arch.num_classes());
        let ce = cross_entropy(&arch, &params, &train).unwrap();
        if poisoned_loss(&arch, &params, &train, &poison, 0.0).unwrap().to_bits() == ce.to_bits() {
            identical += 1;
        }
        if case < 200 {
            let rce = reverse_cross_entropy(&arch, &params, &poison).unwrap();
            for beta in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let got = poisoned_loss(&arch, &params, &train, &poison, beta).unwrap();
                let want = (1.0 - beta) * ce + beta * rce;
                worst_affine = worst_affine.max((got - want).abs() / want.abs().max(1.0));
            }
        }
    }
    report.line(
        7,
        identical == 1000 && worst_affine <= 1e-12,
        format!("beta = 0 bit-identical in {identical}/1000 cases; worst affine deviation {worst_affine:.1e}"),
    );
}

fn criterion_8(report: &mut Report) {
    let mut rng = Rng::new(808);
    let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..10).map(|_| rng.gaussian()).collect()).collect();
    let p = conditional_affinities(&rows, 30.0).unwrap();
    let worst_entropy = p
        .chunks(200)
        .map(|row| {
            let h: f64 = -row.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
            (h - 30f64.ln()).abs()
        })
        .fold(0.0, f64::max);

    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for k in 0..2 {
        for _ in 0..100 {
            clusters.push((0..10).map(|_| 4.0 * k as f64 + rng.gaussian()).collect());
        }
    }
    let coords = tsne_embed(&clusters, &TsneConfig::new(8)).unwrap().coords;
    // Two-means seeded with the points of smallest and largest first coordinate.
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let pick = |better: fn(f64, f64) -> bool| {
        (0..coords.len())
            .reduce(|a, b| if better(coords[b][0], coords[a][0]) { b } else { a })
            .unwrap()
    };
    let mut centers = [coords[pick(|a, b| a < b)].clone(), coords[pick(|a, b| a > b)].clone()];
    let mut assign = vec![0usize; coords.len()];
    for _ in 0..50 {
        for (a, c) in assign.iter_mut().zip(&coords) {
            *a = usize::from(d2(c, &centers[1]) < d2(c, &centers[0]));
        }
        for (k, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = coords
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == k)
                .map(|(c, _)| c)
                .collect();
            for (d, c) in center.iter_mut().enumerate() {
                *c = members.iter().map(|m| m[d]).sum::<f64>() / members.len().max(1) as f64;
            }
        }
    }
    let agree = assign.iter().enumerate().filter(|&(i, &a)| a == i / 100).count() as f64 / 200.0;
    let recovery = agree.max(1.0 - agree);
    report.line(
        8,
        worst_entropy <= 1e-4 && recovery >= 0.95,
        format!("worst entropy error {worst_entropy:.1e}; two-cluster recovery {recovery:.3}"),
    );
}

fn criterion_9(report: &mut Report) {
    let resolution = 200;
    let mut wide_ok = 0;
    let mut ordered = 0;
    let mut notes = Vec::new();
    for seed in 0..SEEDS {
        let wide = experiments::rings_counterfactual(basinscope::datasets::RingsSpec::WIDE_GAP, seed, resolution)
            .expect("wide rings train");
        let pinched = experiments::rings_counterfactual(basinscope::datasets::RingsSpec::PINCHED_GAP, seed, resolution)
            .expect("pinched rings train");
        wide_ok += usize::from(wide.metrics.test_acc >= 0.98);
        ordered += usize::from(pinched.margin.margin < wide.margin.margin);
        notes.push(format!("{:.3}/{:.3}", pinched.margin.margin, wide.margin.margin));
        eprintln!(
            "  rings seed {seed}: wide test {:.3}, margins pinched {:.4} wide {:.4}",
            wide.metrics.test_acc, pinched.margin.margin, wide.margin.margin
        );
    }
    report.line(
        9,
        wide_ok >= 8 && ordered == SEEDS as usize,
        format!(
            "wide test >= 0.98 in {wide_ok}/{SEEDS}; pinched margin below wide in {ordered}/{SEEDS} (pinched/wide: {})",
            notes.join(" ")
        ),
    );
}

fn criterion_10(report: &mut Report) {
    let root = tempfile::tempdir().unwrap();
    let run = root.path().join("run");
    let mut differing = Vec::new();
    for (name, args) in small_invocations(&run) {
        let dirs = if name == "train" {
            [run.clone(), root.path().join("train-b")]
        } else {
            [
                root.path().join(format!("{name}-a")),
                root.path().join(format!("{name}-b")),
            ]
        };
        for dir in &dirs {
            let mut full = vec!["--out".to_string(), dir.display().to_string()];
            full.extend(args.iter().cloned());
            let refs: Vec<&str> = full.iter().map(String::as_str).collect();
            let out = basinscope(&refs);
            if !out.status.success() {
                differing.push(format!("{name} exited {:?}", out.status.code()));
            }
        }
        let (a, b) = (snapshot(&dirs[0]), snapshot(&dirs[1]));
        if a.is_empty() || a != b {
            differing.push(name.to_string());
        }
    }

    let arch = MlpArch::toy_default();
    let params = basinscope::nn::init_params(&arch, 1);
    let bytes = encode(&arch, &params, 1).unwrap();
    let round_trip = decode(&bytes)
        .map(|s| s.params == params && s.arch == arch)
        .unwrap_or(false);
    let mut corruption_caught = 0;
    let positions = [0, 5, 9, bytes.len() / 2, bytes.len() - 1];
    for &at in &positions {
        let mut bad = bytes.clone();
        bad[at] ^= 0x40;
        corruption_caught += usize::from(decode(&bad).is_err());
    }
    let truncated = matches!(decode(&bytes[..bytes.len() - 3]), Err(CheckpointError::Length { .. }));
    report.line(
        10,
        differing.is_empty() && round_trip && corruption_caught == positions.len() && truncated,
        format!(
            "non-identical or failed subcommands: {differing:?}; round trip {round_trip}; corruptions caught {corruption_caught}/{}; truncation caught {truncated}",
            positions.len()
        ),
    );
}

fn main() {
    let mut report = Report::default();
    let started = Instant::now();
    criterion_5(&mut report);
    criterion_6(&mut report);
    criterion_7(&mut report);
    criterion_8(&mut report);
    criterion_10(&mut report);
    criterion_9(&mut report);
    criteria_1_to_3(&mut report);
    criterion_4(&mut report);
    let failures = report.print();
    println!(
        "{failures} of 10 criteria failed; total {:.0} s",
        started.elapsed().as_secs_f64()
    );
    if failures > 0 && std::env::var("ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}

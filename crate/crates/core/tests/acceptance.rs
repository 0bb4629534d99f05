//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line and then
//! asserts; criteria run one at a time so their runtime budgets are measured
//! without contention. The line goes to the process stdout directly, so it
//! shows up even when the harness captures test output.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use normkit::checks::{grad_check, whiten_check, CHECK_EPS, COV_TOL, GRAD_REL_TOL, ITN_COV_TOL, MEAN_TOL};
use normkit::constraints::{constraint_count, constraint_rank_oracle, NormMethod, DEFAULT_RANK_TRIALS};
use normkit::harness::{gen_gaussian_features, load_idx, train_run, ModelSpec, RunConfig, RunStatus, TrainSpec};
use normkit::linalg::{covariance, sym_eig, Mat, SYM_EIG_TOL};
use normkit::metrics::{condition_number_p, diversity, DEFAULT_DIVERSITY_BINS, DEFAULT_DIVERSITY_PAIRS};
use normkit::norm::{BwStatsMode, NormKind, NormLayer};
use normkit::whitening::{itn_forward, zca_forward, WhiteningConfig, WhiteningMethod};

static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, name: &str, ok: bool, elapsed: Duration, budget: Duration, detail: &str) {
    let within = elapsed <= budget;
    let verdict = if ok && within { "PASS" } else { "FAIL" };
    let line = format!(
        "criterion {id:>2} {name}: {verdict} ({detail}; {:.1}s of {:.0}s)\n",
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).and_then(|_| out.flush()).expect("stdout");
    assert!(ok, "criterion {id} failed: {detail}");
    assert!(within, "criterion {id} exceeded its runtime budget");
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn criterion_01_whitening_constraints() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut ok = true;
    let mut detail = Vec::new();
    for g in [1, 2, 4] {
        let zca = whiten_check(16, g, &WhiteningConfig::zca().with_eps(CHECK_EPS), 100, None, 1).unwrap();
        let zca_ok = zca.within(MEAN_TOL, COV_TOL);
        ok &= zca_ok;
        detail.push(format!(
            "zca g={g} mean={:.1e} cov={:.1e}{}",
            zca.max_mean_violation,
            zca.max_cov_violation,
            if zca_ok { "" } else { " !" }
        ));
        match whiten_check(16, g, &WhiteningConfig::itn(5).with_eps(CHECK_EPS), 100, Some(100.0), 2) {
            Ok(itn) => {
                let itn_ok = itn.within(MEAN_TOL, ITN_COV_TOL);
                ok &= itn_ok;
                detail.push(format!(
                    "itn g={g} mean={:.1e} cov={:.1e}{}",
                    itn.max_mean_violation,
                    itn.max_cov_violation,
                    if itn_ok { "" } else { " !" }
                ));
            }
            Err(e) => {
                ok = false;
                detail.push(format!("itn g={g}: {e} !"));
            }
        }
    }
    report(1, "whitening constraints", ok, start.elapsed(), Duration::from_secs(5), &detail.join(", "));
}

#[test]
fn criterion_02_gradient_certification() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let kinds = [
        NormKind::Bn,
        NormKind::Ln,
        NormKind::Gn { groups: 4 },
        NormKind::bw(WhiteningMethod::Zca),
        NormKind::bw(WhiteningMethod::Itn),
        NormKind::gw(4, WhiteningMethod::Zca),
        NormKind::gw(4, WhiteningMethod::Itn),
    ];
    let mut worst = (0.0f64, String::new());
    let mut ok = true;
    for kind in kinds {
        for seed in 0..5 {
            let r = grad_check(kind, 16, 16, 1e-5, false, seed).unwrap();
            ok &= r.passes(GRAD_REL_TOL) && r.compared > 0;
            if !(r.max_rel_err <= worst.0) {
                worst = (r.max_rel_err, format!("{kind} seed {seed}"));
            }
        }
    }
    let detail = format!("worst rel err {:.2e} ({})", worst.0, worst.1);
    report(2, "gradient certification", ok, start.elapsed(), Duration::from_secs(60), &detail);
}

fn divisors(d: usize) -> Vec<usize> {
    (1..=d).filter(|g| d % g == 0).collect()
}

#[test]
fn criterion_03_constraint_table() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (mut cells, mut mismatches) = (0, Vec::new());
    for method in NormMethod::ALL {
        for d in [2, 3, 4, 6, 8] {
            for m in [2, 4, 8, 16] {
                let groups = if method.uses_groups() { divisors(d) } else { vec![1] };
                for g in groups {
                    let r = constraint_count(method, d, m, g, None).unwrap();
                    if !r.feasible {
                        continue;
                    }
                    cells += 1;
                    let rank = constraint_rank_oracle(method, d, m, g, DEFAULT_RANK_TRIALS, 0).unwrap();
                    if rank as u64 != r.zeta_batch {
                        mismatches.push(format!("{method} d={d} m={m} g={g}: rank {rank} vs {}", r.zeta_batch));
                    }
                }
            }
        }
    }
    let detail = if mismatches.is_empty() {
        format!("{cells} feasible cells, 0 mismatches")
    } else {
        format!("{cells} feasible cells, {} mismatches: {}", mismatches.len(), mismatches.join("; "))
    };
    report(3, "constraint table", mismatches.is_empty(), start.elapsed(), Duration::from_secs(60), &detail);
}

fn train_output(kind: NormKind, x: &Mat) -> Mat {
    NormLayer::new(kind, x.rows()).unwrap().forward_train(x).unwrap().0
}

#[test]
fn criterion_04_reduction_identities() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bw_c1 = NormKind::Bw {
        method: WhiteningMethod::Zca,
        iterations: 5,
        group_channels: Some(1),
        stats: BwStatsMode::Whitener,
    };
    let (mut gn_ln, mut gw_gn, mut bw_bn) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let x = gaussian(12, 8, &mut rng);
        let gn1 = train_output(NormKind::Gn { groups: 1 }, &x);
        gn_ln = gn_ln.max(gn1.max_abs_diff(&train_output(NormKind::Ln, &x)));
        for method in [WhiteningMethod::Zca, WhiteningMethod::Itn] {
            gw_gn = gw_gn.max(train_output(NormKind::gw(1, method), &x).max_abs_diff(&gn1));
        }
        bw_bn = bw_bn.max(train_output(bw_c1, &x).max_abs_diff(&train_output(NormKind::Bn, &x)));
    }
    let ok = gn_ln < 1e-10 && gw_gn < 1e-10 && bw_bn < 1e-10;
    let detail = format!("gn1-ln {gn_ln:.1e}, gw1-gn1 {gw_gn:.1e}, bw(c=1)-bn {bw_bn:.1e}");
    report(4, "reduction identities", ok, start.elapsed(), Duration::from_secs(5), &detail);
}

#[test]
fn criterion_05_conditioning() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut ok = true;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = gaussian(16, 256, &mut rng);
    let zca = NormLayer::with_eps(NormKind::bw(WhiteningMethod::Zca), 16, CHECK_EPS).unwrap();
    let y = zca.clone().forward_train(&x).unwrap().0;
    let mut worst_zca = 0.0f64;
    for p in [0.1, 0.25, 0.5, 0.75, 0.9, 1.0] {
        worst_zca = worst_zca.max((condition_number_p(&y, p).unwrap().kappa_p - 1.0).abs());
    }
    ok &= worst_zca < 1e-6;

    let mut trend = Vec::new();
    for (label, make) in [
        ("gn", (|g| NormKind::Gn { groups: g }) as fn(usize) -> NormKind),
        ("gw", |g| NormKind::gw(g, WhiteningMethod::Itn)),
    ] {
        let mut medians = Vec::new();
        for g in [1, 4, 16, 64] {
            let kappas = (0..3)
                .map(|seed| {
                    let f = gen_gaussian_features(256, 1024, 2, seed);
                    condition_number_p(&train_output(make(g), &f), 0.9).unwrap().kappa_p
                })
                .collect();
            medians.push(median(kappas));
        }
        let monotone = medians.windows(2).all(|w| w[1] <= w[0]);
        ok &= monotone;
        let shown: Vec<String> = medians.iter().map(|k| format!("{k:.3}")).collect();
        trend.push(format!("{label} [{}]{}", shown.join(", "), if monotone { "" } else { " !" }));
    }
    let detail = format!("zca |kappa_p - 1| <= {worst_zca:.1e}, kappa_90 over g=1,4,16,64: {}", trend.join(", "));
    report(5, "conditioning", ok, start.elapsed(), Duration::from_secs(120), &detail);
}

#[test]
fn criterion_06_itn_convergence() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut accepted, mut ok, mut worst_rel) = (0, true, 0.0f64);
    while accepted < 20 {
        let (xc, _) = gaussian(8, 64, &mut rng).center_rows();
        let sigma = covariance(&xc, 64, 0.0).unwrap();
        let eig = sym_eig(&sigma, SYM_EIG_TOL).unwrap();
        if eig.values[0] / eig.values[7] >= 100.0 {
            continue;
        }
        accepted += 1;
        let (w_zca, _) = zca_forward(&sigma).unwrap();
        let errors: Vec<f64> =
            (1..=7).map(|t| itn_forward(&sigma, t).unwrap().0.sub(&w_zca).frobenius()).collect();
        ok &= errors.windows(2).all(|w| w[1] < w[0]);
        worst_rel = worst_rel.max(errors[6] / w_zca.frobenius());
    }
    ok &= worst_rel < 1e-3;
    let detail = format!("20 matrices, worst relative error at T=7 {worst_rel:.2e}");
    report(6, "itn convergence", ok, start.elapsed(), Duration::from_secs(10), &detail);
}

#[test]
fn criterion_07_diversity_trend() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (d, n) = (16, 100_000);
    let mut medians = Vec::new();
    for c in [2, 4, 8, 16] {
        let gammas = (0..3)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(70 + seed);
                let y = train_output(NormKind::Gn { groups: d / c }, &gaussian(d, n, &mut rng));
                diversity(&y, DEFAULT_DIVERSITY_BINS, DEFAULT_DIVERSITY_PAIRS, seed).unwrap().gamma
            })
            .collect();
        medians.push(median(gammas));
    }
    let increasing = medians.windows(2).all(|w| w[1] > w[0]);
    let single = diversity(&Mat::from_fn(4, 1, |i, _| i as f64), DEFAULT_DIVERSITY_BINS, 6, 0).unwrap().gamma;
    let ok = increasing && single == 0.0;
    let shown: Vec<String> = medians.iter().map(|g| format!("{g:.3}")).collect();
    let detail = format!("gamma over c=2,4,8,16: [{}], single cell {single}", shown.join(", "));
    report(7, "diversity trend", ok, start.elapsed(), Duration::from_secs(120), &detail);
}

#[test]
fn criterion_08_histogram_structure() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y = train_output(NormKind::Gn { groups: 32 }, &gaussian(64, 1680, &mut rng));
    let near = y.as_slice().iter().filter(|v| (v.abs() - 1.0).abs() <= 0.05).count();
    let fraction = near as f64 / y.as_slice().len() as f64;
    let detail = format!("{:.2}% of values within 0.05 of ±1", 100.0 * fraction);
    report(8, "histogram structure", fraction >= 0.95, start.elapsed(), Duration::from_secs(10), &detail);
}

fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

#[test]
fn criterion_09_capacity_trends() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let dir = mnist_dir();
    let data = load_idx(
        &dir.join("subset10k-images-idx3-ubyte.gz"),
        &dir.join("subset10k-labels-idx1-ubyte.gz"),
        Some(10_000),
    )
    .unwrap();
    let model = ModelSpec { hidden: vec![256; 4], eps: 1e-5 };
    let opts = TrainSpec { epochs: 5, momentum: 0.0 };
    let cells = [
        ("bn m=2", NormKind::Bn, 2),
        ("bn m=16", NormKind::Bn, 16),
        ("gw g=128", NormKind::gw(128, WhiteningMethod::Itn), 16),
        ("gw g=16", NormKind::gw(16, WhiteningMethod::Itn), 16),
        ("gn g=16", NormKind::Gn { groups: 16 }, 16),
    ];
    let mut acc = Vec::new();
    for &(_, norm, batch_size) in &cells {
        let runs = (0..3)
            .map(|seed| {
                let curve = train_run(&model, &opts, &data, None, &RunConfig { norm, batch_size, lr: 0.1, seed });
                assert_eq!(curve.status, RunStatus::Ok, "{norm} m={batch_size} seed {seed}");
                curve.final_train_accuracy().unwrap()
            })
            .collect();
        acc.push(median(runs));
    }
    let [bn2, bn16, gw_max, gw16, gn16] = acc[..] else { unreachable!() };
    let ok = bn16 - bn2 >= 0.02 && gw16 - gw_max >= 0.02 && gw16 >= gn16 - 0.01;
    let shown: Vec<String> = cells.iter().zip(&acc).map(|((l, _, _), a)| format!("{l} {a:.4}")).collect();
    report(9, "capacity trends", ok, start.elapsed(), Duration::from_secs(30 * 60), &shown.join(", "));
}

fn run_cli(args: &[&str]) -> (i32, Vec<u8>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("normkit").chain(args.iter().copied());
    let code = normkit::cli::run_with(argv, &mut out, &mut err);
    (code, out)
}

#[test]
fn criterion_10_determinism() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("blobs.toml");
    std::fs::write(
        &config,
        "[model]\nhidden = [16, 16]\n\n[data]\nsource = \"blobs\"\nn = 200\ndim = 8\nclasses = 3\nval_fraction = 0.2\n\n\
         [train]\nepochs = 2\n\n[grid]\nnorms = [{ kind = \"bn\" }, { kind = \"gw\", groups = 4, method = \"itn\" }]\n\
         batch_sizes = [8]\nlearning_rates = [0.05, 0.1]\nseeds = [0, 1]\n",
    )
    .unwrap();
    let config = config.to_str().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["whiten-check", "--d", "16", "--g", "2", "--samples", "20"],
        vec!["grad-check", "--d", "8", "--m", "8", "--g", "2", "--trials", "2"],
        vec!["constraints", "--method", "bn,bw,gn,gw", "--d", "8", "--m", "4", "--g", "2", "--n", "100", "--oracle"],
        vec!["conditioning", "--d", "64", "--n", "128", "--norm", "gw-zca", "--g", "1,4,16", "--p", "0.5,0.9"],
        vec!["diversity", "--d", "32", "--n", "2000", "--norm", "gn", "--g", "16,4"],
        vec!["histogram", "--d", "16", "--n", "500", "--norm", "gn", "--g", "8", "--bins", "20"],
        vec!["sweep", "--config", config, "--jobs", "2"],
        vec!["sweep", "--config", config, "--best"],
        vec!["fit-random-labels", "--config", config],
    ];
    let mut failures = Vec::new();
    for cmd in &commands {
        let args: Vec<&str> = ["--seed", "11"].into_iter().chain(cmd.iter().copied()).collect();
        let (code_a, a) = run_cli(&args);
        let (code_b, b) = run_cli(&args);
        if code_a != 0 || code_b != 0 || a != b || a.is_empty() {
            failures.push(format!("{} (exit {code_a}/{code_b})", cmd[0]));
        }
    }
    let detail = if failures.is_empty() {
        format!("{} invocations byte-identical", commands.len())
    } else {
        format!("differing or failing: {}", failures.join(", "))
    };
    report(10, "determinism", failures.is_empty(), start.elapsed(), Duration::from_secs(60), &detail);
}

//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line straight
//! to stdout (bypassing the harness capture) and then asserts.
//!
//! Criteria run one at a time under a lock so runtime budgets are measured
//! without competing for cores.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use drae::classifiers::{fit, ClassifierKind};
use drae::config::ExperimentConfig;
use drae::data::{loso_split, preprocess, synth_generate, SynthParams};
use drae::gradcheck::standard_suite;
use drae::harness::{run_loso, select_lambda, sweep_lambda, SweepCell};
use drae::linalg::Matrix;
use drae::model::{build_model, Dims, ModelVariant, ScheduleParams};
use drae::nn::accuracy;
use drae::schedule::{DropoutSchedule, Head};
use drae::train::{evaluate_discriminators, train_feature_extractor, LabeledSet, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

static SERIAL: Mutex<()> = Mutex::new(());

fn report(name: &str, ok: bool, detail: &str, elapsed: Duration) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{tag}] {name}: {detail} ({:.2}s)", elapsed.as_secs_f64());
}

/// Runs `body` under the lock; `body` returns (passed, detail).
fn criterion(name: &str, budget: Option<Duration>, body: impl FnOnce() -> (bool, String)) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (ok, detail) = body();
    let elapsed = start.elapsed();
    let in_time = budget.is_none_or(|b| elapsed <= b);
    let detail = match budget {
        Some(b) if !in_time => format!("{detail}; over budget {:.0}s", b.as_secs_f64()),
        _ => detail,
    };
    report(name, ok && in_time, &detail, elapsed);
    assert!(ok && in_time, "{name}: {detail}");
}

#[test]
fn gradient_integrity() {
    criterion("gradient integrity", Some(Duration::from_secs(30)), || {
        let reports = standard_suite(1e-5, 11).expect("suite runs");
        let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        let small = reports.iter().all(|r| r.entries.len() <= 500);
        let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.label.as_str()).collect();
        let has_composite = reports.iter().any(|r| r.label.starts_with("composite"));
        (
            failed.is_empty() && small && has_composite,
            format!("{} checks, worst relative error {worst:.2e}, failed {failed:?}", reports.len()),
        )
    });
}

#[test]
fn schedule_math() {
    criterion("schedule math", Some(Duration::from_secs(1)), || {
        let s = DropoutSchedule::soft(15, 3.0).unwrap();
        let p8 = s.p_a[7];
        let expect = 15.0 - 11025.0 / 2744.0;
        let eff = s.effective_dim(Head::Adversary);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let d = rng.random_range(2..200usize);
            let alpha = rng.random_range(0.1..10.0);
            let s = DropoutSchedule::soft(d, alpha).unwrap();
            let sum = s.effective_dim(Head::Adversary) + s.effective_dim(Head::Nuisance);
            worst = worst.max((sum - d as f64).abs() / d as f64);
        }
        (
            p8 == 0.125 && (eff - expect).abs() <= 1e-12 && worst <= 1e-12,
            format!("p_a(8) = {p8}, adversary effective dim {eff} vs {expect}, worst sum deviation {worst:.1e}"),
        )
    });
}

fn fold_sets(seed: u64) -> (LabeledSet, LabeledSet, Dims) {
    let table = synth_generate(&SynthParams { seed, ..Default::default() }).unwrap();
    let f = loso_split(&table, 1, seed).unwrap();
    let (t, _) = preprocess(&table, &f.train).unwrap();
    let dims = Dims { c: 7, d: 15, s: 20, l: 4 };
    (LabeledSet::from_table(&t, &f.train), LabeledSet::from_table(&t, &f.val), dims)
}

#[test]
fn reduction_equivalences() {
    criterion("reduction equivalences", Some(Duration::from_secs(60)), || {
        let (train, val, dims) = fold_sets(0);
        let cfg = TrainConfig { epochs: 5, seed: 3, ..Default::default() };

        let zero = TrainConfig { lambda_a: 0.0, lambda_n: 0.0, ..cfg };
        let mut full = build_model(ModelVariant::DaCRae, dims, ScheduleParams::default(), 3).unwrap();
        let mut plain = build_model(ModelVariant::CAe, dims, ScheduleParams::default(), 3).unwrap();
        let lf = train_feature_extractor(&mut full, &train, &val, &zero).unwrap();
        let lp = train_feature_extractor(&mut plain, &train, &val, &zero).unwrap();
        let recon_bits = |l: &drae::train::TrainLog| l.epochs.iter().map(|r| r.recon.to_bits()).collect::<Vec<_>>();
        let a = full.encoder == plain.encoder && full.decoder == plain.decoder && recon_bits(&lf) == recon_bits(&lp);

        let mut soft = build_model(ModelVariant::DaCRae, dims, ScheduleParams::default(), 3).unwrap();
        soft.substitute_schedule(DropoutSchedule::hard(15, (2, 1)).unwrap()).unwrap();
        let mut hard = build_model(ModelVariant::DaCAe, dims, ScheduleParams::default(), 3).unwrap();
        let ls = train_feature_extractor(&mut soft, &train, &val, &cfg).unwrap();
        let lh = train_feature_extractor(&mut hard, &train, &val, &cfg).unwrap();
        let b = soft.encoder == hard.encoder
            && soft.decoder == hard.decoder
            && soft.adversary == hard.adversary
            && soft.nuisance == hard.nuisance
            && ls.without_timing() == lh.without_timing();
        (a && b, format!("zero-lambda vs cAE bitwise {a}, hard-scheduled DA-cRAE vs DA-cAE bitwise {b}"))
    });
}

#[test]
fn chance_level_sanity() {
    criterion("chance-level sanity", None, || {
        let dims = Dims { c: 7, d: 15, s: 20, l: 4 };
        let table = synth_generate(&SynthParams::default()).unwrap();
        let idx: Vec<usize> = (0..table.len()).collect();
        let set = LabeledSet::from_table(&table, &idx);
        let n = set.len();
        let sigma = (0.05 * 0.95 / n as f64).sqrt();
        let dev = |a: f64| (a - 0.05).abs() / sigma;

        // the default-seed bundle on the synthetic table
        let b = build_model(ModelVariant::DaCRae, dims, ScheduleParams::default(), 0).unwrap();
        let acc = evaluate_discriminators(&b, &set).unwrap();
        let on_data = dev(acc.adversary.unwrap()).max(dev(acc.nuisance.unwrap()));

        // fresh heads on random latents with uniform subject ids, where
        // predictions are independent per sample
        let mut random_z: f64 = 0.0;
        for seed in 0..5 {
            let b = build_model(ModelVariant::DaCRae, dims, ScheduleParams::default(), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let z = Matrix::from_vec(n, dims.d, (0..n * dims.d).map(|_| StandardNormal.sample(&mut rng)).collect())
                .unwrap();
            let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..dims.s)).collect();
            for head in [Head::Adversary, Head::Nuisance] {
                let pred = b.discriminate(head, &z, None).unwrap().argmax_rows();
                random_z = random_z.max(dev(accuracy(&pred, &ids)));
            }
        }
        (
            n >= 2000 && on_data <= 3.0 && random_z <= 3.0,
            format!(
                "{n} samples; synthetic table adversary {:.4} nuisance {:.4} ({on_data:.2} sigma); random latents worst {random_z:.2} sigma over 5 seeds",
                acc.adversary.unwrap(),
                acc.nuisance.unwrap()
            ),
        )
    });
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn synthetic_disentanglement_ordering() {
    criterion("synthetic disentanglement ordering", Some(Duration::from_secs(600)), || {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.seeds = (0..5).collect();
        let table = cfg.load_data().unwrap();
        let order = [ModelVariant::DaCRae, ModelVariant::DCRae, ModelVariant::CAe, ModelVariant::Ae];
        let mut means = Vec::new();
        let mut hashes = None;
        for v in order {
            cfg.experiment.variant = v;
            let r = run_loso(&cfg, &table).unwrap();
            assert_eq!(r.subjects.len(), 20);
            let h = r.split_hashes();
            assert!(hashes.as_ref().is_none_or(|p| *p == h), "unpaired splits");
            hashes = Some(h);
            means.push(r.mean_accuracy("mlp").unwrap());
        }
        let ordered = means.windows(2).all(|w| w[0] >= w[1]);
        let gap = 100.0 * (means[0] - means[3]);
        let detail = order
            .iter()
            .zip(&means)
            .map(|(v, m)| format!("{v} {:.2}", 100.0 * m))
            .collect::<Vec<_>>()
            .join(", ");
        (ordered && gap >= 5.0, format!("{detail}; DA-cRAE - AE = {gap:.2} points"))
    });
}

/// Spearman rank correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn spearman_oracle_examples() {
    assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 2.0]) - 0.894_427_190_999_916).abs() < 1e-12);
}

#[test]
fn lambda_directionality() {
    criterion("lambda directionality", Some(Duration::from_secs(900)), || {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.seeds = vec![0, 1, 2];
        let table = cfg.load_data().unwrap();
        let sweep = sweep_lambda(&cfg, &table).unwrap();
        let stage1: Vec<&SweepCell> = sweep.cells.iter().filter(|c| c.lambda_a == 0.0).collect();
        let (lam_n, nui): (Vec<f64>, Vec<f64>) =
            stage1.iter().map(|c| (c.lambda_n, c.nuisance_accuracy.unwrap())).unzip();
        let n_star = sweep.selected.1;
        let stage2: Vec<&SweepCell> = sweep.cells.iter().filter(|c| c.lambda_n == n_star).collect();
        let (lam_a, adv): (Vec<f64>, Vec<f64>) =
            stage2.iter().map(|c| (c.lambda_a, c.adversary_accuracy.unwrap())).unzip();
        let rho_n = spearman(&lam_n, &nui);
        let rho_a = spearman(&lam_a, &adv);
        (
            sweep.cells.len() <= 11 && lam_n.len() == 6 && lam_a.len() == 6 && rho_n > 0.0 && rho_a < 0.0,
            format!(
                "{} cells, Spearman(nuisance, lambda_N) = {rho_n:.3}, Spearman(adversary, lambda_A at lambda_N={n_star}) = {rho_a:.3}",
                sweep.cells.len()
            ),
        )
    });
}

#[test]
fn convergence_surrogate() {
    criterion("convergence surrogate", None, || {
        let (train, val, dims) = fold_sets(0);
        let mut b = build_model(ModelVariant::DaCRae, dims, ScheduleParams::default(), 0).unwrap();
        let cfg = TrainConfig { lambda_a: 0.5, lambda_n: 0.05, epochs: 15, ..Default::default() };
        let log = train_feature_extractor(&mut b, &train, &val, &cfg).unwrap();
        let first = log.epochs[0].total;
        let at15 = log.epochs[14].total;
        let nui: Vec<f64> = log.epochs.iter().map(|r| r.nui_ce.unwrap()).collect();
        let windows: Vec<f64> = nui.chunks(5).map(mean).collect();
        let falling = windows.windows(2).all(|w| w[1] < w[0]);
        (
            at15 <= 0.5 * first && falling,
            format!("total loss epoch 1 {first:.4}, epoch 15 {at15:.4}; nuisance CE window means {windows:.4?}"),
        )
    });
}

fn random_points(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn clusters(seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    let mut y = Vec::new();
    for c in 0..3usize {
        for _ in 0..80 {
            for j in 0..4 {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(z + if j == c { 8.0 } else { 0.0 });
            }
            y.push(c);
        }
    }
    (Matrix::from_vec(240, 4, data).unwrap(), y)
}

#[test]
fn classifier_oracles() {
    criterion("classifier oracles", None, || {
        // knn against a brute-force vote
        let x = random_points(200, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<usize> = (0..200).map(|_| rng.random_range(0..4)).collect();
        let q = random_points(100, 3, 3);
        let knn = fit(&ClassifierKind::Knn { k: 5 }, &x, &y, 4).unwrap();
        let got = knn.predict(&q).unwrap();
        let brute: Vec<usize> = (0..q.rows())
            .map(|r| {
                let mut d: Vec<(f64, usize)> = (0..200)
                    .map(|i| ((0..3).map(|j| (x.get(i, j) - q.get(r, j)).powi(2)).sum(), i))
                    .collect();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut votes = [0; 4];
                d[..5].iter().for_each(|&(_, i)| votes[y[i]] += 1);
                let m = *votes.iter().max().unwrap();
                votes.iter().position(|&v| v == m).unwrap()
            })
            .collect();
        let knn_ok = got == brute;

        let xor = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let xy = vec![0, 0, 1, 1];
        let xor_rows: Vec<usize> = (0..12).map(|i| i % 4).collect();
        let xs = xor.select_rows(&xor_rows);
        let ys: Vec<usize> = xor_rows.iter().map(|&i| xy[i]).collect();
        let tree = fit(&ClassifierKind::Tree { max_depth: 2, min_leaf: 2 }, &xs, &ys, 2).unwrap();
        let tree_acc = accuracy(&tree.predict(&xs).unwrap(), &ys);

        let (cx, cy) = clusters(7);
        let lda = fit(&ClassifierKind::lda(), &cx, &cy, 3).unwrap();
        let lr = fit(&ClassifierKind::logreg(), &cx, &cy, 3).unwrap();
        let lda_acc = accuracy(&lda.predict(&cx).unwrap(), &cy);
        let lr_acc = accuracy(&lr.predict(&cx).unwrap(), &cy);

        let deterministic = [
            (ClassifierKind::Knn { k: 5 }, &x, &y, 4),
            (ClassifierKind::tree(), &x, &y, 4),
            (ClassifierKind::lda(), &cx, &cy, 3),
            (ClassifierKind::logreg(), &cx, &cy, 3),
        ]
        .into_iter()
        .all(|(k, x, y, c)| {
            let a = fit(&k, x, y, c).unwrap();
            let b = fit(&k, x, y, c).unwrap();
            a == b && a.predict(x).unwrap() == b.predict(x).unwrap()
        });
        (
            knn_ok && tree_acc == 1.0 && lda_acc >= 0.99 && lr_acc >= 0.99 && deterministic,
            format!(
                "knn = brute force {knn_ok}, xor tree {tree_acc:.2}, lda {lda_acc:.3}, logreg {lr_acc:.3}, deterministic {deterministic}"
            ),
        )
    });
}

fn row(a: f64, n: f64, task: f64, adv: f64, nui: f64) -> SweepCell {
    SweepCell {
        stage: if a == 0.0 { 1 } else { 2 },
        lambda_a: a,
        lambda_n: n,
        val_accuracy: task / 100.0,
        test_accuracy: task / 100.0,
        adversary_accuracy: Some(adv / 100.0),
        nuisance_accuracy: Some(nui / 100.0),
    }
}

#[test]
fn select_lambda_replays_reference_grid() {
    criterion("select_lambda table replay", Some(Duration::from_secs(1)), || {
        let mut cells = vec![
            row(0.0, 0.0, 72.9, 8.5, 5.8),
            row(0.0, 0.005, 74.8, 7.7, 8.5),
            row(0.0, 0.01, 73.5, 12.5, 15.2),
            row(0.0, 0.05, 77.2, 10.7, 19.7),
            row(0.0, 0.2, 75.6, 13.6, 16.5),
            row(0.0, 0.5, 74.1, 12.6, 35.5),
            row(0.01, 0.05, 78.3, 9.4, 13.6),
            row(0.05, 0.05, 77.3, 6.7, 14.6),
            row(0.1, 0.05, 77.9, 5.9, 13.3),
            row(0.2, 0.05, 81.5, 5.5, 12.7),
            row(0.5, 0.05, 83.8, 4.9, 13.9),
        ];
        let picked = select_lambda(&cells, 0.5).unwrap();
        cells.reverse();
        let reversed = select_lambda(&cells, 0.5).unwrap();
        (
            picked == (0.5, 0.05) && reversed == picked,
            format!("selected (lambda_A, lambda_N) = {picked:?}, reversed input {reversed:?}"),
        )
    });
}

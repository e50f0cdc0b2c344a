//! Acceptance suite: one PASS/FAIL line per criterion.

mod oracles;

use std::collections::BTreeSet;
use std::fs;
use std::panic;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use adfuse_core::classifiers::gp::{train_gp, GpParams};
use adfuse_core::classifiers::lda::{train_lda, LdaParams};
use adfuse_core::classifiers::mlp::{initial_parameters, loss_and_gradient, train_mlp, Layout, MlpParams};
use adfuse_core::classifiers::svm::{train_svm, SvmParams};
use adfuse_core::classifiers::xgb::{train_xgb, train_xgb_traced, XgbParams};
use adfuse_core::classifiers::{ClassifierKind, ClassifierSpec};
use adfuse_core::evaluation::{compute_metrics, cross_validate, fingerprint, make_folds};
use adfuse_core::fusion::{
    majority_vote, run_decision_vote, snapshot_epochs, Atom, CvSpec, EpochSelection, FusionMode,
};
use adfuse_core::nalgebra::DMatrix;
use adfuse_core::synthetic::{self, SyntheticConfig};
use adfuse_core::{DecisionVector, EnsembleSpec, FeatureMatrix, Label, SnapshotScheme, TieBreak};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

fn svm_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst_rel = 0.0f64;
    let mut sign_mismatches = 0;
    for inst in 0..25u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + inst);
        let n = rng.random_range(20..=200);
        let separable = inst % 2 == 0;
        let shift = if separable { 3.0 } else { 0.8 };
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let mut pts = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        while pts.len() < n {
            let l: Label = u8::from(pts.len() % 2 == 0);
            let s = if l == 1 { 1.0 } else { -1.0 };
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let (px, py) = (a + s * shift * angle.cos(), b + s * shift * angle.sin());
            // Separable instances keep a gap around the true boundary.
            if separable && s * (px * angle.cos() + py * angle.sin()) < 0.5 {
                continue;
            }
            pts.push([px, py]);
            labels.push(l);
        }
        let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let reference = oracles::svm_reference(&pts, &y, 1.0);
        let x = DMatrix::from_fn(n, 2, |i, j| pts[i][j]);
        let model = train_svm(&x, &labels, &SvmParams { c: 1.0 }).map_err(|e| e.to_string())?;
        let ours = 0.5 * oracles::dot(&model.w, &model.w)
            + pts
                .iter()
                .zip(&y)
                .map(|(p, &t)| (1.0 - t * (model.w[0] * p[0] + model.w[1] * p[1] + model.b)).max(0.0))
                .sum::<f64>();
        worst_rel = worst_rel.max((ours - reference.objective).abs() / reference.objective);
        for p in &pts {
            let m_ref = reference.w[0] * p[0] + reference.w[1] * p[1] + reference.b;
            let m_ours = model.w[0] * p[0] + model.w[1] * p[1] + model.b;
            if m_ref.abs() > 1e-6 && (m_ref >= 0.0) != (m_ours >= 0.0) {
                sign_mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_rel <= 1e-4 && sign_mismatches == 0 && secs < 10.0,
        format!("max relative objective gap {worst_rel:.2e}, {sign_mismatches} sign mismatches, {secs:.2} s"),
    )
}

fn lda_oracle() -> Outcome {
    let mut worst = 1.0f64;
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + inst);
        let d = rng.random_range(2..=8);
        let mix: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = rng.random_range(3 * d + 10..=80);
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let l = u8::from(i % 3 == 0);
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let row: Vec<f64> = (0..d)
                .map(|a| oracles::dot(&mix[a], &z) + 0.3 * z[a] + if l == 1 { mu[a] } else { 0.0 })
                .collect();
            rows.push(row);
            labels.push(l);
        }
        let reference = oracles::lda_direction(&rows, &labels);
        let model = train_lda(&rows_to_matrix(&rows), &labels, &LdaParams::default()).map_err(|e| e.to_string())?;
        worst = worst.min(oracles::cosine(&model.w, &reference).abs());
    }

    // Duplicated column: the pseudo-inverse splits the weight evenly.
    let mut rng = ChaCha8Rng::seed_from_u64(299);
    let reduced: Vec<Vec<f64>> = (0..60)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            (0..3).map(|j| rng.random_range(-1.0..1.0) + if j == 0 { s } else { 0.2 * s }).collect()
        })
        .collect();
    let labels: Vec<Label> = (0..60).map(|i| u8::from(i % 2 == 0)).collect();
    let dup: Vec<Vec<f64>> = reduced.iter().map(|r| vec![r[0], r[1], r[2], r[0]]).collect();
    let a = train_lda(&rows_to_matrix(&dup), &labels, &LdaParams::default()).map_err(|e| e.to_string())?;
    let b = train_lda(&rows_to_matrix(&dup), &labels, &LdaParams::default()).map_err(|e| e.to_string())?;
    let merged = [a.w[0] + a.w[3], a.w[1], a.w[2]];
    let dup_cos = oracles::cosine(&merged, &oracles::lda_direction(&reduced, &labels)).abs();
    let even = (a.w[0] - a.w[3]).abs() <= 1e-9 * a.w[0].abs();
    check(
        worst > 1.0 - 1e-8 && a == b && even && dup_cos > 1.0 - 1e-8,
        format!("min |cos| {worst:.12}; duplicated column: |cos| {dup_cos:.12}, even split {even}, deterministic {}", a == b),
    )
}

fn gp_oracle() -> Outcome {
    let params = GpParams::default();
    let mut worst = 0.0f64;
    for inst in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + inst);
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..2).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let mut labels: Vec<Label> = (0..10).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let model = train_gp(&rows_to_matrix(&rows), &labels, &params).map_err(|e| e.to_string())?;
        let reference = oracles::GpReference::fit(rows, &labels, 4.0, 5.0);
        for _ in 0..10 {
            let q: Vec<f64> = (0..2).map(|_| rng.random_range(-4.0..4.0)).collect();
            let ours = model.predict(&q).map_err(|e| e.to_string())?.probability;
            worst = worst.max((ours - reference.probability(&q)).abs());
        }
    }
    let x = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
    let sym = train_gp(&x, &[0, 1], &params).map_err(|e| e.to_string())?;
    let mid = sym.predict(&[0.0]).map_err(|e| e.to_string())?.probability;
    check(
        worst < 1e-4 && (mid - 0.5).abs() <= 1e-9,
        format!("max |dp| {worst:.2e} over 100 queries; midpoint {mid:.12}"),
    )
}

fn mlp_checks() -> Outcome {
    let layout = Layout { dim: 4, hidden: 6 };
    let mut worst = 0.0f64;
    for point in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + point);
        let x = DMatrix::from_fn(15, 4, |_, _| rng.random_range(-2.0..2.0));
        let targets: Vec<f64> = (0..15).map(|_| f64::from(rng.random_range(0..2u8))).collect();
        let normal = Normal::new(0.0, 0.7).expect("valid normal");
        let theta: Vec<f64> = (0..layout.len()).map(|_| normal.sample(&mut rng)).collect();
        let alpha = 1e-2;
        let mut grad = vec![0.0; layout.len()];
        loss_and_gradient(&theta, &mut grad, &x, &targets, layout, alpha);
        let h = 1e-5;
        let mut scratch = vec![0.0; layout.len()];
        let fd: Vec<f64> = (0..layout.len())
            .map(|i| {
                let mut p = theta.clone();
                p[i] += h;
                let up = loss_and_gradient(&p, &mut scratch, &x, &targets, layout, alpha);
                p[i] -= 2.0 * h;
                let down = loss_and_gradient(&p, &mut scratch, &x, &targets, layout, alpha);
                (up - down) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = grad.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let rel = oracles::dot(&diff, &diff).sqrt()
            / oracles::dot(&grad, &grad).sqrt().max(oracles::dot(&fd, &fd).sqrt());
        worst = worst.max(rel);
    }
    let _ = initial_parameters(layout, 0);

    let mut rng = ChaCha8Rng::seed_from_u64(450);
    let rows: Vec<Vec<f64>> = (0..20)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            vec![s * rng.random_range(0.5..2.0), rng.random_range(-2.0..2.0)]
        })
        .collect();
    let labels: Vec<Label> = (0..20).map(|i| u8::from(i % 2 == 0)).collect();
    let model = train_mlp(&rows_to_matrix(&rows), &labels, &MlpParams::default()).map_err(|e| e.to_string())?;
    let correct = rows
        .iter()
        .zip(&labels)
        .filter(|(r, &l)| Label::from(model.logit(r) >= 0.0) == l)
        .count();
    check(
        worst < 1e-5 && correct == 20,
        format!("max gradient relative error {worst:.2e}; separable set {correct}/20 correct"),
    )
}

fn xgb_checks() -> Outcome {
    let x = DMatrix::from_row_slice(4, 1, &[0.0, 0.0, 1.0, 1.0]);
    let model = train_xgb(&x, &[0, 0, 1, 1], &XgbParams::default()).map_err(|e| e.to_string())?;
    let first = &model.trees[0];
    let left = model.eta * first.leaf_weight(&[0.0]);
    let right = model.eta * first.leaf_weight(&[1.0]);
    let exact = 0.4 * (2.0 / 3.0);
    let stump_ok = (left + exact).abs() < 1e-15
        && (right - exact).abs() < 1e-15
        && (right - 0.26667).abs() < 5e-6
        && first.depth() == 1;

    let mut worst_rise = f64::NEG_INFINITY;
    for inst in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + inst);
        let n = rng.random_range(30..120);
        let d = rng.random_range(2..6);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<Label> = (0..n)
            .map(|i| u8::from(x[(i, 0)] + 0.5 * x[(i, 1)] + rng.random_range(-0.5..0.5) > 0.0))
            .collect();
        let (_, trace) = train_xgb_traced(&x, &y, &XgbParams::default()).map_err(|e| e.to_string())?;
        if trace.len() != 17 {
            return Err(format!("trace has {} entries", trace.len()));
        }
        for w in trace.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
    }

    let xu = DMatrix::from_fn(12, 3, |i, j| ((i * 7 + j * 3) as f64).sin());
    let uniform = train_xgb(&xu, &[1; 12], &XgbParams::default()).map_err(|e| e.to_string())?;
    let no_splits = uniform.trees.iter().all(|t| t.nodes.len() == 1);
    check(
        stump_ok && worst_rise <= 0.0 && no_splits,
        format!("stump contributions {left:+.5}/{right:+.5}; largest per-round loss change {worst_rise:.2e}; uniform labels unsplit {no_splits}"),
    )
}

fn naive_majority(pool: &[Label], tie: TieBreak) -> Label {
    let ones = pool.iter().filter(|&&v| v == 1).count();
    let zeros = pool.len() - ones;
    if 2 * ones == pool.len() {
        match tie {
            TieBreak::Positive => 1,
            TieBreak::Negative => 0,
        }
    } else {
        u8::from(ones > zeros)
    }
}

fn pool_from_bits(bits: u32, len: usize) -> Vec<Label> {
    (0..len).map(|i| ((bits >> i) & 1) as Label).collect()
}

/// Checks every law on one pool; returns the names of violated laws.
fn voting_laws(pool: &[Label], rng: &mut ChaCha8Rng, exhaustive_perms: bool) -> Vec<&'static str> {
    let mut bad = Vec::new();
    for tie in [TieBreak::Positive, TieBreak::Negative] {
        let v = majority_vote(pool, tie).unwrap();
        if v != naive_majority(pool, tie) {
            bad.push("count");
        }
        // Permutation invariance.
        let perms: Vec<Vec<Label>> = if exhaustive_perms {
            permutations(pool)
        } else {
            (0..20)
                .map(|_| {
                    let mut p = pool.to_vec();
                    p.shuffle(rng);
                    p
                })
                .collect()
        };
        if perms.iter().any(|p| majority_vote(p, tie).unwrap() != v) {
            bad.push("permutation");
        }
        // Unanimity.
        if pool.iter().all(|&x| x == pool[0]) && v != pool[0] {
            bad.push("unanimity");
        }
        // Monotonicity: raising any vote to 1 never lowers the outcome.
        for i in 0..pool.len() {
            if pool[i] == 0 {
                let mut up = pool.to_vec();
                up[i] = 1;
                if majority_vote(&up, tie).unwrap() < v {
                    bad.push("monotonicity");
                }
            }
        }
        // Idempotence: a pool voting alongside copies of itself.
        let doubled: Vec<Label> = pool.iter().chain(pool).copied().collect();
        if majority_vote(&doubled, tie).unwrap() != v {
            bad.push("idempotence");
        }
    }
    if pool.len() % 2 == 1
        && majority_vote(pool, TieBreak::Positive).unwrap() != majority_vote(pool, TieBreak::Negative).unwrap()
    {
        bad.push("odd-pool tie-break");
    }
    bad
}

fn permutations(pool: &[Label]) -> Vec<Vec<Label>> {
    if pool.len() <= 1 {
        return vec![pool.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..pool.len() {
        let mut rest = pool.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn voting_law_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let mut violations = BTreeSet::new();
    let mut exhaustive = 0;
    for len in 1..=5usize {
        for bits in 0..(1u32 << len) {
            violations.extend(voting_laws(&pool_from_bits(bits, len), &mut rng, true));
            exhaustive += 1;
        }
    }
    let mut randomized = 0;
    for _ in 0..3000 {
        let len = rng.random_range(1..=31);
        let pool: Vec<Label> = (0..len).map(|_| rng.random_range(0..2)).collect();
        violations.extend(voting_laws(&pool, &mut rng, false));
        randomized += 1;
    }
    // Vector-level idempotence and unanimity.
    for _ in 0..200 {
        let v = DecisionVector::from_pairs((0..20).map(|i| (format!("s{i}"), rng.random_range(0..2u8))));
        let copies = rng.random_range(1..8);
        if run_decision_vote(&vec![v.clone(); copies], TieBreak::Negative).unwrap() != v {
            violations.insert("vector idempotence");
        }
    }
    check(
        violations.is_empty(),
        format!("{exhaustive} exhaustive pools, {randomized} random pools, violations: {violations:?}"),
    )
}

fn voter_simulation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let n = 10_000;
    let truth: Vec<Label> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let voters: Vec<DecisionVector> = (0..3)
        .map(|_| {
            DecisionVector::from_pairs(truth.iter().enumerate().map(|(i, &t)| {
                let correct = rng.random_bool(0.8);
                (format!("s{i:05}"), if correct { t } else { 1 - t })
            }))
        })
        .collect();
    let voted = run_decision_vote(&voters, TieBreak::Positive).map_err(|e| e.to_string())?;
    let truth_v = DecisionVector::from_pairs(truth.iter().enumerate().map(|(i, &t)| (format!("s{i:05}"), t)));
    let acc = compute_metrics(&voted, &truth_v).map_err(|e| e.to_string())?.accuracy;
    let analytic = oracles::majority_accuracy(3, 0.8);
    check(
        (analytic - 0.896).abs() < 1e-12 && (acc - analytic).abs() <= 0.02,
        format!("voted accuracy {acc:.4} vs analytic {analytic:.3}"),
    )
}

fn snapshot_lists() -> Outcome {
    let cases = [
        (EpochSelection::FixedStride { stride: 1 }, [28, 29, 30]),
        (EpochSelection::FixedStride { stride: 3 }, [24, 27, 30]),
        (EpochSelection::FixedStride { stride: 10 }, [10, 20, 30]),
        (EpochSelection::Geometric, [18, 27, 30]),
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for (sel, expected) in cases {
        let got = snapshot_epochs(&SnapshotScheme::new(sel.clone(), 30)).map_err(|e| e.to_string())?;
        ok &= got == expected;
        lines.push(format!("{got:?}"));
    }
    check(ok, lines.join(" "))
}

fn confusion_vectors(tp: usize, fp: usize, fn_: usize, tn: usize) -> (DecisionVector, DecisionVector) {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let groups = [(tp, 1, 1), (fp, 1, 0), (fn_, 0, 1), (tn, 0, 0)];
    let mut i = 0;
    for (count, p, t) in groups {
        for _ in 0..count {
            pred.push((format!("T{i:03}"), p));
            truth.push((format!("T{i:03}"), t));
            i += 1;
        }
    }
    (DecisionVector::from_pairs(pred), DecisionVector::from_pairs(truth))
}

fn confusion_metrics() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    let rows: [((usize, usize, usize, usize), [&str; 4], [&str; 4]); 2] = [
        ((23, 2, 1, 22), ["93.75", "92.00", "95.83", "93.88"], ["93.8", "92.0", "95.8", "93.9"]),
        ((22, 2, 2, 22), ["91.67"; 4], ["91.7"; 4]),
    ];
    for ((tp, fp, fn_, tn), two_dp, one_dp) in rows {
        let (pred, truth) = confusion_vectors(tp, fp, fn_, tn);
        let m = compute_metrics(&pred, &truth).map_err(|e| e.to_string())?;
        let values = [m.accuracy, m.precision, m.recall, m.f1];
        let got2: Vec<String> = values.iter().map(|v| format!("{:.2}", 100.0 * v)).collect();
        let got1: Vec<String> = values.iter().map(|v| format!("{:.1}", 100.0 * v)).collect();
        ok &= got2 == two_dp && got1 == one_dp && (m.tp, m.fp, m.fn_, m.tn) == (tp, fp, fn_, tn);
        details.push(format!("({tp},{fp},{fn_},{tn}) -> {}", got2.join("/")));
    }
    check(ok, details.join("; "))
}

const DETERMINISM_CONFIG: &str = r#"manifest = "data/manifest.toml"

[cv]
k = 10
seed = 2021

[[system]]
id = "bert-e30-svm"
features = ["bert-e30"]
classifiers = ["svm"]

[[system]]
id = "bert-snapshots-svm-mean"
features = [{ encoder = "bert", fine_tuned = true }]
classifiers = ["svm"]
snapshot_scheme = { kind = "fixed_stride", stride = 1, total_epochs = 30 }
combine = false

[[system]]
id = "bert-roberta-concat-lda"
features = [{ encoder = "bert", fine_tuned = true }, { encoder = "roberta", fine_tuned = true }]
classifiers = ["lda"]
fusion_mode = "concat_features"
snapshot_scheme = { kind = "fixed_stride", stride = 1, total_epochs = 30 }

[[system]]
id = "bert-roberta-vote-all"
features = [{ encoder = "bert", fine_tuned = true }, { encoder = "roberta", fine_tuned = true }]
classifiers = ["svm", "lda", "gp", { kind = "mlp", hidden = 16, max_iters = 50 }, "xgb"]
snapshot_scheme = { kind = "fixed_stride", stride = 1, total_epochs = 30 }
"#;

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    synthetic::generate(&SyntheticConfig::default(), &dir.path().join("data")).map_err(|e| e.to_string())?;
    let config = dir.path().join("experiment.toml");
    fs::write(&config, DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    let run = |out: &str, jobs: &str| -> Result<Vec<(String, Vec<u8>)>, String> {
        let status = Command::new(env!("CARGO_BIN_EXE_adfuse"))
            .arg("run")
            .arg(&config)
            .args(["--jobs", jobs, "--output"])
            .arg(dir.path().join(out))
            .env_remove("ADFUSE_MANIFEST")
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("run {out} failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        Ok(read_tree(&dir.path().join(out)))
    };
    let a = run("a", "1")?;
    let b = run("b", "1")?;
    let c = run("c", "8")?;
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    check(
        a == b && a == c && a.len() >= 8,
        format!("{} files identical across two --jobs 1 runs and a --jobs 8 run ({})", a.len(), names.join(", ")),
    )
}

fn cv_protocol() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let ids: Vec<String> = (1..=108).map(|i| format!("S{i:03}")).collect();
    let mut labels: Vec<Label> = (0..108).map(|i| u8::from(i < 54)).collect();
    labels.shuffle(&mut rng);
    let rows = DMatrix::from_fn(108, 6, |i, j| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z + if j == 0 && labels[i] == 1 { 1.5 } else { 0.0 }
    });
    let data = FeatureMatrix::new(ids.clone(), Some(labels.clone()), rows).map_err(|e| e.to_string())?;
    let folds = make_folds(&ids, &labels, 10, 42).map_err(|e| e.to_string())?;
    let mut sizes = folds.fold_sizes();
    sizes.sort_unstable();
    let sizes_ok = sizes == [10, 10, 11, 11, 11, 11, 11, 11, 11, 11];

    let spec = EnsembleSpec {
        atoms: [ClassifierKind::Svm, ClassifierKind::Lda, ClassifierKind::Xgb]
            .into_iter()
            .map(|k| Atom {
                feature_sets: vec!["x".into()],
                classifier: ClassifierSpec::default_for(k),
                group: 0,
            })
            .collect(),
        tie_break: TieBreak::Positive,
        fusion_mode: FusionMode::DecisionVote,
        flatten: false,
        cv: CvSpec::default(),
    };
    let out = cross_validate(&spec, &[&data, &data, &data], &folds).map_err(|e| e.to_string())?;
    let mut held_count = vec![0usize; 108];
    for f in 0..10 {
        for s in folds.members(f) {
            held_count[ids.iter().position(|x| x == s).unwrap()] += 1;
        }
    }
    let held_once = held_count.iter().all(|&c| c == 1)
        && out.held_out.len() == 108
        && out.held_out.0.keys().eq(ids.iter());

    let mut leaks = 0;
    let mut checked = 0;
    for (f, models) in out.folds.iter().enumerate() {
        let held: BTreeSet<&str> = folds.members(f).into_iter().collect();
        let complement: Vec<&str> = ids.iter().map(String::as_str).filter(|s| !held.contains(s)).collect();
        let expected = fingerprint(&complement);
        for atom in &models.atoms {
            checked += 1;
            let trained: BTreeSet<&str> = atom.train_subjects.iter().map(String::as_str).collect();
            if atom.fingerprint != expected
                || trained.len() != complement.len()
                || trained.iter().any(|s| held.contains(s))
            {
                leaks += 1;
            }
        }
    }
    check(
        sizes_ok && held_once && leaks == 0 && checked == 30,
        format!("fold sizes {sizes:?}; every subject held out once: {held_once}; {checked} fingerprints checked, {leaks} mismatches"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("SVM oracle equivalence", svm_oracle),
        ("LDA closed-form equivalence", lda_oracle),
        ("GP reference equivalence", gp_oracle),
        ("MLP gradient check", mlp_checks),
        ("XGB hand oracle", xgb_checks),
        ("Voting law suite", voting_law_suite),
        ("Independent-voter simulation", voter_simulation),
        ("Snapshot scheme lists", snapshot_lists),
        ("Confusion-matrix metrics", confusion_metrics),
        ("End-to-end determinism", end_to_end_determinism),
        ("CV protocol", cv_protocol),
    ];
    let mut failures = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} [{secs:.2} s]: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name} [{secs:.2} s]: {detail}");
            }
        }
    }
    println!("\nacceptance: {} passed, {failures} failed", 11 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

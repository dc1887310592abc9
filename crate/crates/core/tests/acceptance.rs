//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; any failure makes the
//! process exit non-zero.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use earlyrisk::classifiers::{
    logistic_loss_and_gradient, train_metadata_model, LogisticConfig, LogisticModel,
    MetadataPredictor,
};
use earlyrisk::corpus::{
    audit_timestamp_leak, generate_synthetic_corpus, GeneratorProfile, Label, UserRecord,
};
use earlyrisk::embeddings::{evaluate_analogies, AnalogyDataset, EmbeddingTable};
use earlyrisk::metadata::MetadataExtractor;
use earlyrisk::metrics::{
    default_false_positive_cost, erde, metric_report, prf, DecisionLog, DecisionRecord, ErdeParams,
    ErdeVariant, ReportConfig,
};
use earlyrisk::neuralnet::{cross_entropy, percentile, CnnConfig, CnnModel, DocMatrix};
use earlyrisk::simulator::{perfect_prediction_log, run_simulation, DecisionPolicy, PolicyMode};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Check {
    ensure(
        elapsed < limit,
        format!(
            "{detail}; {:.2}s (limit {:.0}s)",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        ),
    )
}

fn test_corpus(step: usize) -> Vec<UserRecord> {
    let profile = GeneratorProfile {
        message_count_step: step,
        ..GeneratorProfile::default()
    };
    generate_synthetic_corpus(52, 349, 7, &profile).expect("generator")
}

fn perfect_prediction_percentages() -> Check {
    let start = Instant::now();
    let users = test_corpus(10);
    let expected = [
        (1, 0.00, 0.00),
        (2, 6.48, 0.00),
        (5, 12.97, 6.48),
        (10, 12.97, 12.97),
    ];
    let mut got = Vec::new();
    let mut ok = true;
    for (n, e20, e50) in expected {
        let log = perfect_prediction_log(&users, n, 10).map_err(|e| e.to_string())?;
        let a = erde(&log, &ErdeParams::new(20.0), ErdeVariant::SigmoidPercentage)
            .map_err(|e| e.to_string())?;
        let b = erde(&log, &ErdeParams::new(50.0), ErdeVariant::SigmoidPercentage)
            .map_err(|e| e.to_string())?;
        ok &= (a - e20).abs() <= 0.01 && (b - e50).abs() <= 0.01;
        got.push(format!("n={n}: {a:.2}/{b:.2}"));
    }
    let detail = format!("ERDE%_20/ERDE%_50 {}", got.join(", "));
    if !ok {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(1), detail)
}

fn false_positive_cost() -> Check {
    let users = test_corpus(1);
    let log = perfect_prediction_log(&users, 10, 10).map_err(|e| e.to_string())?;
    let c = default_false_positive_cost(&log);
    ensure((c - 0.1297).abs() <= 1e-4, format!("c_fp = {c:.6}"))
}

fn f1_arithmetic() -> Check {
    let mut recs = Vec::new();
    for i in 0..52 {
        recs.push(DecisionRecord {
            user_id: format!("p{i}"),
            truth: Label::Positive,
            verdict: Label::from_bool(i < 18),
            k: 1,
            n_d: 10,
        });
    }
    for i in 0..349 {
        recs.push(DecisionRecord {
            user_id: format!("n{i}"),
            truth: Label::Negative,
            verdict: Label::Negative,
            k: 10,
            n_d: 10,
        });
    }
    let s = prf(&DecisionLog::new(recs).map_err(|e| e.to_string())?);
    ensure(
        (s.precision - 1.0).abs() < 1e-12
            && (s.recall - 0.346).abs() <= 0.001
            && (s.f1 - 0.51).abs() <= 0.005,
        format!(
            "P = {:.3}, R = {:.3}, F1 = {:.3}",
            s.precision, s.recall, s.f1
        ),
    )
}

fn flat_params(m: &CnnModel) -> Vec<f64> {
    let mut v = Vec::new();
    m.for_each_param(|_, _, p| v.extend_from_slice(p));
    v
}

fn set_param(m: &mut CnnModel, index: usize, value: f64) {
    let mut offset = 0;
    m.for_each_param_mut(|_, _, p| {
        if index >= offset && index < offset + p.len() {
            p[index - offset] = value;
        }
        offset += p.len();
    });
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn cnn_gradient_check() -> Result<(f64, usize, usize), String> {
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for draw in 0..24u64 {
        let cfg = CnnConfig {
            seq_len: 5,
            embed_dim: 3,
            n_filters: 2,
            filter_height: 2,
            fc_sizes: [3, 3, 2],
            dropout_rate: 0.0,
            n_classes: 2,
            seed: draw,
        };
        let mut model = CnnModel::new(cfg).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
        // widen the draw so that activations are not all near zero
        let scaled: Vec<f64> = flat_params(&model)
            .iter()
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        for (i, v) in scaled.iter().enumerate() {
            set_param(&mut model, i, *v);
        }
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let doc = DocMatrix::from_rows(5, 3, &rows).map_err(|e| e.to_string())?;
        let target = (draw % 2) as usize;

        let (_, cache) = model
            .forward(&doc, true, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| e.to_string())?;
        let grads = flat_params(&model.backward(&cache, target).map_err(|e| e.to_string())?);
        let signature = cache.activation_signature();
        let base = flat_params(&model);
        let loss_at = |m: &CnnModel| -> Result<(f64, Vec<i64>), String> {
            let (p, c) = m
                .forward(&doc, true, &mut ChaCha8Rng::seed_from_u64(0))
                .map_err(|e| e.to_string())?;
            Ok((cross_entropy(&p, target), c.activation_signature()))
        };
        for (i, &g) in grads.iter().enumerate() {
            let mut plus = model.clone();
            set_param(&mut plus, i, base[i] + eps);
            let mut minus = model.clone();
            set_param(&mut minus, i, base[i] - eps);
            let (lp, sp) = loss_at(&plus)?;
            let (lm, sm) = loss_at(&minus)?;
            if sp != signature || sm != signature {
                skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * eps);
            worst = worst.max(relative_error(g, numeric));
            checked += 1;
        }
    }
    Ok((worst, checked, skipped))
}

fn logistic_gradient_check() -> Result<f64, String> {
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for draw in 0..24u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let dim = 5;
        let x: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<bool> = (0..30).map(|_| rng.gen_bool(0.4)).collect();
        let model = LogisticModel {
            weights: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            bias: rng.gen_range(-1.0..1.0),
            feature_fingerprint: None,
        };
        let l2 = 1e-2;
        let g = logistic_loss_and_gradient(&model, &x, &y, l2).map_err(|e| e.to_string())?;
        for j in 0..=dim {
            let shifted = |delta: f64| {
                let mut m = model.clone();
                if j < dim {
                    m.weights[j] += delta;
                } else {
                    m.bias += delta;
                }
                logistic_loss_and_gradient(&m, &x, &y, l2).map(|r| r.loss)
            };
            let numeric = (shifted(eps).map_err(|e| e.to_string())?
                - shifted(-eps).map_err(|e| e.to_string())?)
                / (2.0 * eps);
            let analytic = if j < dim { g.weights[j] } else { g.bias };
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(worst)
}

fn gradient_checks() -> Check {
    let start = Instant::now();
    let (cnn_worst, checked, skipped) = cnn_gradient_check()?;
    let lr_worst = logistic_gradient_check()?;
    let detail = format!(
        "CNN max rel err {cnn_worst:.2e} over {checked} coords ({skipped} at kinks), LR max rel err {lr_worst:.2e}"
    );
    let ok = cnn_worst < 1e-4 && lr_worst < 1e-4 && checked > 0 && skipped * 10 < checked;
    if !ok {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(30), detail)
}

fn duplication_invariance() -> Check {
    let users = test_corpus(1);
    let base = perfect_prediction_log(&users, 3, 10).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    let mut ok = true;
    for m in [2usize, 5] {
        let scaled = DecisionLog::new(
            base.records()
                .iter()
                .map(|r| DecisionRecord {
                    k: r.k * m,
                    n_d: r.n_d * m,
                    ..r.clone()
                })
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        for o in [20.0, 50.0] {
            let a = erde(&base, &ErdeParams::new(o), ErdeVariant::SigmoidPercentage)
                .map_err(|e| e.to_string())?;
            let b = erde(&scaled, &ErdeParams::new(o), ErdeVariant::SigmoidPercentage)
                .map_err(|e| e.to_string())?;
            ok &= (a - b).abs() < 1e-9;
        }
        for o in [5.0, 50.0] {
            let a = erde(&base, &ErdeParams::new(o), ErdeVariant::SigmoidAbsolute)
                .map_err(|e| e.to_string())?;
            let b = erde(&scaled, &ErdeParams::new(o), ErdeVariant::SigmoidAbsolute)
                .map_err(|e| e.to_string())?;
            ok &= (a - b).abs() > 1e-6;
            notes.push(format!("m={m} ERDE_{o}: {a:.2} -> {b:.2}"));
        }
    }
    ensure(
        ok,
        format!("percentage variant unchanged; {}", notes.join(", ")),
    )
}

fn end_to_end_metadata() -> Check {
    let start = Instant::now();
    let profile = GeneratorProfile::default();
    let train = generate_synthetic_corpus(83, 403, 11, &profile).map_err(|e| e.to_string())?;
    let test = generate_synthetic_corpus(52, 349, 7, &profile).map_err(|e| e.to_string())?;
    let extractor = MetadataExtractor::default();
    let model = train_metadata_model(&extractor, &train, &LogisticConfig::default())
        .map_err(|e| e.to_string())?;
    let predictor = MetadataPredictor::new(extractor, model).map_err(|e| e.to_string())?;
    let policy = DecisionPolicy::new(0.5, PolicyMode::Threshold).map_err(|e| e.to_string())?;
    let run = run_simulation(&test, &predictor, &policy).map_err(|e| e.to_string())?;
    let report = metric_report(&run.log, &ReportConfig::default()).map_err(|e| e.to_string())?;
    let e50 = erde(
        &run.log,
        &ErdeParams::new(50.0),
        ErdeVariant::SigmoidPercentage,
    )
    .map_err(|e| e.to_string())?;
    let detail = format!(
        "F1 = {:.3}, ERDE%_50 = {e50:.2} (tp {} fp {} fn {})",
        report.f1, report.counts.n_tp, report.counts.n_fp, report.counts.n_fn
    );
    if report.f1 < 0.9 || e50 > 2.0 {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(300), detail)
}

/// Countries are basis vectors; each capital adds a shared "capital" axis
/// and each plural a shared "plural" axis, so every answer is exact.
fn exact_analogy_fixture() -> (EmbeddingTable, AnalogyDataset) {
    let countries = ["france", "germany", "italy", "spain", "japan"];
    let capitals = ["paris", "berlin", "rome", "madrid", "tokyo"];
    let nouns = ["cat", "dog", "car", "tree"];
    let plurals = ["cats", "dogs", "cars", "trees"];
    let dim = countries.len() + nouns.len() + 2;
    let capital_axis = dim - 2;
    let plural_axis = dim - 1;
    let mut rows = Vec::new();
    let unit = |i: usize| {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    };
    for (i, (c, cap)) in countries.iter().zip(capitals).enumerate() {
        rows.push((c.to_string(), unit(i)));
        let mut v = unit(i);
        v[capital_axis] = 1.0;
        rows.push((cap.to_string(), v));
    }
    for (i, (n, p)) in nouns.iter().zip(plurals).enumerate() {
        let idx = countries.len() + i;
        rows.push((n.to_string(), unit(idx)));
        let mut v = unit(idx);
        v[plural_axis] = 1.0;
        rows.push((p.to_string(), v));
    }
    let mut text = String::from(": capital-common-countries\n");
    for i in 0..countries.len() {
        for j in 0..countries.len() {
            if i != j {
                text.push_str(&format!(
                    "{} {} {} {}\n",
                    countries[i], capitals[i], countries[j], capitals[j]
                ));
            }
        }
    }
    text.push_str(": gram8-plural\n");
    for i in 0..nouns.len() {
        for j in 0..nouns.len() {
            if i != j {
                text.push_str(&format!(
                    "{} {} {} {}\n",
                    nouns[i], plurals[i], nouns[j], plurals[j]
                ));
            }
        }
    }
    (
        EmbeddingTable::from_rows(dim, rows).unwrap(),
        AnalogyDataset::parse(text.as_bytes()).unwrap(),
    )
}

/// Independent scorer: normalise, then scan every candidate.
fn brute_force_analogy(vecs: &[Vec<f64>], q: &[usize; 4]) -> bool {
    let target: Vec<f64> = (0..vecs[0].len())
        .map(|j| vecs[q[1]][j] - vecs[q[0]][j] + vecs[q[2]][j])
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tn = norm(&target);
    let mut best = None;
    let mut best_cos = f64::NEG_INFINITY;
    for (i, v) in vecs.iter().enumerate() {
        if i == q[0] || i == q[1] || i == q[2] || norm(v) == 0.0 {
            continue;
        }
        let cos = v.iter().zip(&target).map(|(a, b)| a * b).sum::<f64>() / (norm(v) * tn);
        if cos > best_cos {
            best_cos = cos;
            best = Some(i);
        }
    }
    best == Some(q[3])
}

fn analogy_checks() -> Check {
    let (table, data) = exact_analogy_fixture();
    let exact = evaluate_analogies(&table, &data).map_err(|e| e.to_string())?;
    let exact_ok =
        exact.semantic_pct == 100 && exact.syntactic_pct == 100 && exact.total_pct == 100;

    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let words: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
    let vecs: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let table =
        EmbeddingTable::from_rows(8, words.iter().cloned().zip(vecs.iter().cloned()).collect())
            .map_err(|e| e.to_string())?;
    let mut questions = Vec::new();
    let mut text = String::from(": random\n");
    for _ in 0..200 {
        let mut q = [0usize; 4];
        for slot in q.iter_mut() {
            *slot = rng.gen_range(0..50);
        }
        if q[0] == q[1] || q[0] == q[2] || q[1] == q[2] {
            continue;
        }
        // plant the brute-force answer in half the questions
        if questions.len() % 2 == 0 {
            for cand in 0..50 {
                let mut t = q;
                t[3] = cand;
                if brute_force_analogy(&vecs, &t) {
                    q = t;
                }
            }
        }
        text.push_str(&format!(
            "{} {} {} {}\n",
            words[q[0]], words[q[1]], words[q[2]], words[q[3]]
        ));
        questions.push(q);
    }
    let data = AnalogyDataset::parse(text.as_bytes()).map_err(|e| e.to_string())?;
    let report = evaluate_analogies(&table, &data).map_err(|e| e.to_string())?;
    let oracle_correct = questions
        .iter()
        .filter(|q| brute_force_analogy(&vecs, q))
        .count();
    let random_ok =
        report.total.correct == oracle_correct && report.total.attempted == questions.len();
    ensure(
        exact_ok && random_ok,
        format!(
            "exact fixture {}/{}/{}%, random fixture {} vs oracle {} of {}",
            exact.semantic_pct,
            exact.syntactic_pct,
            exact.total_pct,
            report.total.correct,
            oracle_correct,
            questions.len()
        ),
    )
}

fn percentile_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(98);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..300);
        let values: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    (rng.gen_range(0..5) as f64) / 4.0
                } else {
                    rng.gen()
                }
            })
            .collect();
        let got = percentile(&values, 0.98).map_err(|e| e.to_string())?;
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = 0.98 * (n - 1) as f64;
        let below = pos as usize;
        let above = (below + 1).min(n - 1);
        let weight = pos - below as f64;
        let expected = sorted[below] * (1.0 - weight) + sorted[above] * weight;
        worst = worst.max((got - expected).abs());
    }
    ensure(
        worst < 1e-12,
        format!("max deviation {worst:.1e} over 1000 sets"),
    )
}

fn leak_audit() -> Check {
    let leaky = GeneratorProfile {
        timestamp_leak: true,
        ..GeneratorProfile::default()
    };
    let clean = GeneratorProfile::default();
    let run = |p: &GeneratorProfile| -> Result<_, String> {
        let train = generate_synthetic_corpus(83, 403, 11, p).map_err(|e| e.to_string())?;
        let test = generate_synthetic_corpus(52, 349, 7, p).map_err(|e| e.to_string())?;
        audit_timestamp_leak(&train, &test, 0.6).map_err(|e| e.to_string())
    };
    let l = run(&leaky)?;
    let c = run(&clean)?;
    ensure(
        l.f1 >= 0.75 && l.warning.is_some() && c.warning.is_none(),
        format!(
            "leaked F1 = {:.3} (warning: {}), unleaked F1 = {:.3} (warning: {})",
            l.f1,
            l.warning.is_some(),
            c.f1,
            c.warning.is_some()
        ),
    )
}

fn pipeline_report(seed: u64) -> Result<String, String> {
    let profile = GeneratorProfile {
        max_messages: 60,
        ..GeneratorProfile::default()
    };
    let train = generate_synthetic_corpus(30, 120, seed, &profile).map_err(|e| e.to_string())?;
    let test = generate_synthetic_corpus(20, 80, seed + 1, &profile).map_err(|e| e.to_string())?;
    let extractor = MetadataExtractor::default();
    let model = train_metadata_model(&extractor, &train, &LogisticConfig::default())
        .map_err(|e| e.to_string())?;
    let predictor = MetadataPredictor::new(extractor, model).map_err(|e| e.to_string())?;
    let policy = DecisionPolicy::new(0.6, PolicyMode::Threshold).map_err(|e| e.to_string())?;
    let run = run_simulation(&test, &predictor, &policy).map_err(|e| e.to_string())?;
    let report = metric_report(&run.log, &ReportConfig::default()).map_err(|e| e.to_string())?;
    let mut log_csv = Vec::new();
    run.log.write_csv(&mut log_csv).map_err(|e| e.to_string())?;
    Ok(report.to_json().map_err(|e| e.to_string())? + &String::from_utf8_lossy(&log_csv))
}

fn determinism() -> Check {
    let a = pipeline_report(21)?;
    let b = pipeline_report(21)?;
    ensure(
        a == b,
        format!(
            "two seeded runs produced {} and {} identical bytes",
            a.len(),
            b.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 10] = [
        ("perfect-prediction ERDE% table", perfect_prediction_percentages),
        ("default false-positive cost", false_positive_cost),
        ("precision/recall/F1 arithmetic", f1_arithmetic),
        ("gradient correctness", gradient_checks),
        (
            "percentage-metric duplication invariance",
            duplication_invariance,
        ),
        ("end-to-end metadata run", end_to_end_metadata),
        ("analogy evaluator", analogy_checks),
        ("percentile aggregation", percentile_oracle),
        ("timestamp leak audit", leak_audit),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS criterion {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        criteria.len() - failures
    );
    if failures > 0 {
        std::process::exit(1);
    }
}

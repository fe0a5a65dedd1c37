//! Acceptance gate: runs every criterion at its stated tolerance and prints one
//! PASS/FAIL line each. Exits nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use anchorpheno::anchor::{phenotype_from_scores, AnchorLabel, AnchorSpec};
use anchorpheno::classifiers::transformer::{build_anchor_mask, gradient_check_indices, sample_parameter_indices};
use anchorpheno::classifiers::{TransformerConfig, TransformerModel};
use anchorpheno::cohort::{build_vocabulary, encode_record, generate_cohort, InteractionConfig, PatientRecord};
use anchorpheno::gwas::linear_assoc;
use anchorpheno::harness::{
    run_ablation_on, run_full_pipeline, run_noise_sweep, write_pipeline, AblationRegime, ExperimentConfig, ModelKind,
};
use anchorpheno::metrics::{auroc, average_precision};
use anchorpheno::pheprob::fit_binomial_mixture;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

type Outcome = (bool, String);

fn rec(id: &str, visits: &[&[&str]]) -> PatientRecord {
    let visits = visits.iter().map(|v| v.iter().map(|c| c.to_string()).collect::<BTreeSet<_>>()).collect();
    PatientRecord::new(id, visits).unwrap()
}

fn toy_model() -> (TransformerModel, anchorpheno::cohort::Vocabulary) {
    let records = vec![
        rec("a", &[&["A", "B", "C"], &["D", "ANCHOR"]]),
        rec("b", &[&["E", "F"], &["G", "H", "I"]]),
    ];
    let vocab = build_vocabulary(&records, 0.0);
    let anchor = AnchorSpec::new(["ANCHOR"]).unwrap();
    let config = TransformerConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        intermediate_size: 32,
        max_len: 16,
        init_range: 0.5,
        seed: 11,
        ..TransformerConfig::default()
    };
    (TransformerModel::new(&config, &vocab, &anchor).unwrap(), vocab)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let (model, vocab) = toy_model();
    let indices = sample_parameter_indices(&model, 256, 3);
    let mut worst = 0.0f64;
    for (label, visits) in [(0u8, [["A", "B", "C"], ["D", "ANCHOR", "E"]]), (1, [["F", "G", "ANCHOR"], ["H", "I", "A"]])] {
        let seq = encode_record(&rec("p", &[&visits[0], &visits[1]]), &vocab, 16);
        for c in gradient_check_indices(&model, &seq, label, 1e-4, &indices).unwrap() {
            worst = worst.max(c.relative_error);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        indices.len() >= 200 && worst < 1e-4 && secs < 60.0,
        format!("{} parameters, max relative error {worst:.2e}, {secs:.1}s", indices.len()),
    )
}

fn anchor_mask_invariance() -> Outcome {
    let (model, vocab) = toy_model();
    let seq = encode_record(&rec("p", &[&["A", "B"], &["ANCHOR", "C"], &["D", "ANCHOR"]]), &vocab, 16);
    let mask = build_anchor_mask(&seq, model.anchor_token_ids());
    let anchor_id = vocab.token_id("ANCHOR");
    let positions: Vec<usize> = seq.token_ids.iter().enumerate().filter(|(_, &t)| t == anchor_id).map(|(i, _)| i).collect();
    let base = model.logit(&seq).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let mut alt = seq.clone();
        for &p in &positions {
            alt.token_ids[p] = rng.random_range(0..vocab.len() as u32);
        }
        worst = worst.max((model.logit_with_mask(&alt, &mask).unwrap() - base).abs());
    }
    (positions.len() == 2 && worst < 1e-10, format!("max |logit change| {worst:.2e} over 200 substitutions"))
}

fn phenotype_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ok = true;
    for _ in 0..50 {
        let n = 300;
        let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 20.0).round() / 20.0).collect();
        let labels = AnchorLabel((0..n).map(|_| rng.random_bool(0.2) as u8).collect());
        let mut order: Vec<usize> = (0..n).filter(|&i| labels.0[i] == 0).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        for c in [0.25, 0.5, 1.0] {
            let ph = phenotype_from_scores(&scores, &labels, c).unwrap();
            ok &= (0..n).filter(|&i| labels.0[i] == 1).all(|i| ph.scores[i] == 1.0);
            ok &= order.windows(2).all(|w| ph.scores[w[0]] <= ph.scores[w[1]]);
            ok &= order.windows(2).all(|w| scores[w[0]] != scores[w[1]] || ph.scores[w[0]] == ph.scores[w[1]]);
        }
    }
    (ok, "50 instances, c in {0.25, 0.5, 1}".into())
}

fn brute_auroc(s: &[f64], y: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                pairs += 1.0;
                num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
    }
    num / pairs
}

fn brute_ap(s: &[f64], y: &[u8]) -> f64 {
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let total_pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for t in thresholds {
        let tp = (0..s.len()).filter(|&i| s[i] >= t && y[i] == 1).count() as f64;
        let called = (0..s.len()).filter(|&i| s[i] >= t).count() as f64;
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * tp / called;
        prev_recall = recall;
    }
    ap
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = 200;
        let y: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
        let s: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 10.0).floor() / 10.0).collect();
        worst = worst.max((auroc(&s, &y).unwrap() - brute_auroc(&s, &y)).abs());
        worst = worst.max((average_precision(&s, &y).unwrap() - brute_ap(&s, &y)).abs());
    }
    (worst < 1e-12, format!("max deviation {worst:.2e} over 50 tied instances"))
}

/// Solves `A x = b` by Gauss-Jordan elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

fn dosage(rng: &mut ChaCha8Rng, maf: f64) -> u8 {
    rng.random_bool(maf) as u8 + rng.random_bool(maf) as u8
}

fn regression_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 2000;
    let covariates: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();

    // Normal equations on [1, g, covariates].
    let mut worst_rel = 0.0f64;
    for _ in 0..10 {
        let g: Vec<u8> = (0..n).map(|_| dosage(&mut rng, 0.25)).collect();
        let y: Vec<f64> = (0..n).map(|i| 0.2 * g[i] as f64 + covariates[0][i] + rng.sample::<f64, _>(StandardNormal)).collect();
        let cols: Vec<Vec<f64>> = std::iter::once(vec![1.0; n])
            .chain(std::iter::once(g.iter().map(|&v| v as f64).collect()))
            .chain(covariates.iter().cloned())
            .collect();
        let xtx: Vec<Vec<f64>> = cols.iter().map(|a| cols.iter().map(|b| a.iter().zip(b).map(|(x, z)| x * z).sum()).collect()).collect();
        let xty: Vec<f64> = cols.iter().map(|a| a.iter().zip(&y).map(|(x, z)| x * z).sum()).collect();
        let beta = solve(xtx, xty)[1];
        let r = linear_assoc("v", &y, &g, &covariates).unwrap();
        worst_rel = worst_rel.max(((r.beta - beta) / beta).abs());
    }

    // Null p-values.
    let mut ps: Vec<f64> = Vec::new();
    for _ in 0..500 {
        let maf = rng.random_range(0.05..0.5);
        let g: Vec<u8> = (0..n).map(|_| dosage(&mut rng, maf)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        ps.push(linear_assoc("v", &y, &g, &covariates).unwrap().p_value);
    }
    ps.sort_by(|a, b| a.total_cmp(b));
    let m = ps.len() as f64;
    let ks = ps.iter().enumerate().map(|(i, &p)| ((i + 1) as f64 / m - p).max(p - i as f64 / m)).fold(0.0, f64::max);

    // Planted effect.
    let g: Vec<u8> = (0..n).map(|_| dosage(&mut rng, 0.3)).collect();
    let y: Vec<f64> = (0..n).map(|i| 0.5 * g[i] as f64 + rng.sample::<f64, _>(StandardNormal)).collect();
    let planted = linear_assoc("v", &y, &g, &covariates).unwrap();

    let ok = worst_rel < 1e-8 && ks < 0.08 && (0.45..=0.55).contains(&planted.beta) && planted.p_value < 1e-8;
    (
        ok,
        format!(
            "normal-equation rel err {worst_rel:.1e}, KS {ks:.3}, planted beta {:.3} p {:.1e}",
            planted.beta, planted.p_value
        ),
    )
}

fn pheprob_em() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 20000;
    let (mut total, mut anchor) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let s: u32 = rng.random_range(10..=60);
        let p = if rng.random_bool(0.3) { 0.4 } else { 0.01 };
        total.push(s);
        anchor.push(Binomial::new(s as u64, p).unwrap().sample(&mut rng) as u32);
    }
    let fit = fit_binomial_mixture(&total, &anchor, 1e-10, 2000, 1).unwrap();
    let monotone = fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs());
    let recovered = (fit.pi - 0.3).abs() <= 0.02 && (fit.p_case - 0.4).abs() <= 0.02 && (fit.p_control - 0.01).abs() <= 0.02;
    let secs = start.elapsed().as_secs_f64();
    (
        monotone && recovered && secs < 60.0,
        format!(
            "pi {:.4} p_case {:.4} p_control {:.4}, {} iterations monotone={monotone}, {secs:.1}s",
            fit.pi,
            fit.p_case,
            fit.p_control,
            fit.log_likelihood.len()
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Anchor predicted only through an exclusive-or of two codes.
fn xor_config() -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.cohort.n_patients = 3000;
    config.cohort.comorbidities.clear();
    config.cohort.interaction = Some(InteractionConfig { control_pair_rate: 0.2, ..InteractionConfig::new("X.1", "X.2") });
    config.transformer = TransformerConfig { init_range: 0.1, learning_rate: 2e-3, n_epochs: 30, ..config.transformer };
    config.models = vec![ModelKind::AnchorBert, ModelKind::AnchorLr];
    config.noise_proportions = vec![0.0, 0.2, 0.4, 0.6];
    config.repeats = 5;
    config
}

fn noise_robustness() -> Outcome {
    let start = Instant::now();
    let config = xor_config();
    let report = run_noise_sweep(&config).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for &p in &config.noise_proportions {
        let med = |m| median(report.rows.iter().filter(|r| r.model == m && r.proportion == p).map(|r| r.validation_auprc).collect());
        let (bert, lr) = (med(ModelKind::AnchorBert), med(ModelKind::AnchorLr));
        ok &= bert > lr;
        detail.push(format!("p={p}: {bert:.3} vs {lr:.3}"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 1800.0;
    (ok, format!("median validation AUPRC transformer vs logistic {}; {secs:.0}s", detail.join(", ")))
}

fn ablation_direction() -> Outcome {
    let start = Instant::now();
    let mut config = ExperimentConfig::default();
    config.cohort.anchor_sensitivity = 0.7;
    config.models = vec![ModelKind::AnchorBert, ModelKind::AnchorLr, ModelKind::Threshold(1)];
    config.ablation_proportions = vec![1.0];
    config.ablation_repeats = 1;
    let (mut bert_positive, mut lr_positive, mut threshold_zero) = (0, 0, 0);
    for seed in 1..=10u64 {
        let cohort = generate_cohort(&config.cohort, seed).unwrap();
        let report = run_ablation_on(cohort, &config, seed).unwrap();
        let retention = |m| report.summary(AblationRegime::Cases, m, 1.0).mean;
        bert_positive += (retention(ModelKind::AnchorBert) > 0.0) as usize;
        lr_positive += (retention(ModelKind::AnchorLr) > 0.0) as usize;
        threshold_zero += (retention(ModelKind::Threshold(1)) == 0.0) as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    (
        bert_positive >= 7 && threshold_zero == 10 && secs < 1800.0,
        format!(
            "retention > 0: transformer {bert_positive}/10, logistic {lr_positive}/10; threshold-1 zero {threshold_zero}/10; {secs:.0}s"
        ),
    )
}

fn power_gain() -> Outcome {
    let mut config = ExperimentConfig::default();
    config.cohort.n_patients = 5000;
    config.cohort.n_variants = 200;
    for cv in &mut config.cohort.causal_variants {
        cv.beta = 0.3;
    }
    config.gwas.alpha = 1e-5;
    config.models = vec![ModelKind::AnchorBert, ModelKind::Threshold(1)];
    let mut ok = true;
    let mut detail = Vec::new();
    for miss in [0.3, 0.0] {
        config.cohort.anchor_sensitivity = 1.0 - miss;
        let (mut bert, mut thr) = (Vec::new(), Vec::new());
        for seed in 1..=10u64 {
            config.seed = seed;
            let report = run_full_pipeline(&config).unwrap();
            bert.push(report.row(ModelKind::AnchorBert).unwrap().matched as f64);
            thr.push(report.row(ModelKind::Threshold(1)).unwrap().matched as f64);
        }
        let (b, t) = (median(bert), median(thr));
        ok &= if miss > 0.0 { b >= t } else { b == t };
        detail.push(format!("miss {miss}: median matched transformer {b} vs threshold-1 {t}"));
    }
    (ok, detail.join("; "))
}

fn determinism() -> Outcome {
    let mut config = ExperimentConfig::default();
    config.cohort.n_patients = 1200;
    config.transformer.n_epochs = 2;
    config.seed = 5;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut files = Vec::new();
    for d in &dirs {
        let report = run_full_pipeline(&config).unwrap();
        files.push(write_pipeline(&report, &config, d.path()).unwrap());
    }
    let names = |paths: &Vec<std::path::PathBuf>| paths.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    let mut ok = names(&files[0]) == names(&files[1]);
    for (a, b) in files[0].iter().zip(&files[1]) {
        ok &= std::fs::read(a).unwrap() == std::fs::read(b).unwrap();
    }
    (ok, format!("{} report files compared byte for byte", files[0].len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradient_correctness),
        ("anchor-mask invariance", anchor_mask_invariance),
        ("phenotype transform contract", phenotype_contract),
        ("metric oracles", metric_oracles),
        ("regression oracles", regression_oracles),
        ("pheprob EM", pheprob_em),
        ("noise robustness direction", noise_robustness),
        ("ablation direction", ablation_direction),
        ("power gain under misclassification", power_gain),
        ("determinism", determinism),
    ];
    // Optional filter: `cargo test --test acceptance -- <substring>`.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    let mut stderr = std::io::stderr();
    for (i, (name, run)) in criteria.iter().enumerate() {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += (!pass) as usize;
        let _ = writeln!(
            stderr,
            "{} criterion {:>2} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        let _ = writeln!(stderr, "{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

//! Acceptance criteria. Each test prints one `[criterion N] PASS|FAIL` line
//! before asserting. Criteria 5-9 share one desk-scale pipeline run; 10 reruns
//! it with the same configuration.

use std::fs;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use itertools::Itertools;
use ndarray::{Array1, Array2};

use spal::datagen::gen_importance;
use spal::metrics::report::read_reports_csv;
use spal::metrics::{perm_score, soft_match_plan, AlignmentReport, Metric, SourceTag};
use spal::numerics::RngStream;
use spal::pipeline::{run_experiment, ExperimentConfig, ExperimentResult, RunSummary};
use spal::sae::{mse_loss, sae_loss_grad, SaeParams};
use spal::theory::{
    deflation_equal_mix, deflation_shifted_support, prop1_check, sparse_latents, well_conditioned_mixing,
};
use spal::toymodel::{toy_loss, toy_loss_grad};

fn verdict(id: u32, ok: bool, detail: String) {
    println!("[criterion {id}] {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id}: {detail}");
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn desk_config(name: &str) -> ExperimentConfig {
    ExperimentConfig {
        out_dir: scratch(name),
        ..Default::default()
    }
}

static RUN: OnceLock<RunSummary> = OnceLock::new();

fn shared_run() -> &'static RunSummary {
    RUN.get_or_init(|| run_experiment(&desk_config("run_a")).expect("desk-scale pipeline run"))
}

fn width(n: usize) -> &'static ExperimentResult {
    shared_run().experiment(n).expect("width was run")
}

fn report(e: &ExperimentResult, metric: Metric, src: SourceTag, tgt: SourceTag) -> &AlignmentReport {
    e.report(metric, src, tgt)
        .unwrap_or_else(|| panic!("{} missing {metric} {src}->{tgt}", e.experiment_id))
}

/// `a` beats `b` by more than two pooled standard errors.
fn beats(a: &AlignmentReport, b: &AlignmentReport) -> bool {
    a.mean - b.mean > 2.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
}

fn rel_err(num: &[f64], ana: &[f64]) -> f64 {
    let diff = num.iter().zip(ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    diff / num.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[test]
fn criterion_01_deflation_closed_forms() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for n in [1, 2, 3, 4, 9] {
        worst = worst.max((deflation_equal_mix(n, 36).unwrap() - 1.0 / (n as f64).sqrt()).abs());
    }
    let three = deflation_equal_mix(3, 36).unwrap();
    for f in [4, 8, 16] {
        worst = worst.max((deflation_shifted_support(f).unwrap() - 0.5).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        1,
        worst <= 1e-12 && (three - 0.58).abs() < 0.005 && secs < 1.0,
        format!("max deviation {worst:.2e}, equal_mix(3) = {three:.6}, {secs:.3}s"),
    );
}

#[test]
fn criterion_02_transport_matches_brute_force() {
    let t = Instant::now();
    let mut rng = RngStream::new(2024);
    let mut worst_obj: f64 = 0.0;
    let mut worst_marg: f64 = 0.0;
    for i in 0..200 {
        let (na, nb) = if i % 4 == 3 {
            (1 + rng.below(7), 1 + rng.below(5))
        } else {
            let n = 1 + rng.below(6);
            (n, n)
        };
        let c = Array2::from_shape_fn((na, nb), |_| rng.uniform_range(-1.0, 1.0));
        let plan = soft_match_plan(c.view()).unwrap();
        if na == nb {
            let best = (0..nb)
                .permutations(na)
                .map(|p| p.iter().enumerate().map(|(r, &q)| c[[r, q]]).sum::<f64>() / na as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            worst_obj = worst_obj.max((plan.objective(c.view()) - best).abs());
        }
        for r in plan.p.rows() {
            worst_marg = worst_marg.max((r.sum() - 1.0 / na as f64).abs());
        }
        for col in plan.p.columns() {
            worst_marg = worst_marg.max((col.sum() - 1.0 / nb as f64).abs());
        }
        worst_marg = worst_marg.max(-plan.p.iter().cloned().fold(0.0, f64::min));
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        2,
        worst_obj <= 1e-9 && worst_marg <= 1e-9 && secs < 30.0,
        format!("objective gap {worst_obj:.2e}, marginal error {worst_marg:.2e}, {secs:.2}s"),
    );
}

#[test]
fn criterion_03_sparse_recovery_restores_alignment() {
    let t = Instant::now();
    let mut rng = RngStream::new(3);
    let (mut recovered_ok, mut deflated) = (0, 0);
    for _ in 0..50 {
        let z = sparse_latents(200, 10, 2, &mut rng).unwrap();
        let aa = well_conditioned_mixing(10, 8, 2, 0.1, &mut rng).unwrap();
        let ab = well_conditioned_mixing(10, 8, 2, 0.1, &mut rng).unwrap();
        let rec = prop1_check(z.view(), &aa, &ab).unwrap();
        let raw = perm_score(aa.mix(z.view()).unwrap().view(), ab.mix(z.view()).unwrap().view()).unwrap();
        recovered_ok += usize::from((rec - 1.0).abs() <= 1e-6);
        deflated += usize::from(rec > raw);
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        3,
        recovered_ok == 50 && deflated >= 48 && secs < 120.0,
        format!("recovered score 1 on {recovered_ok}/50, above raw on {deflated}/50, {secs:.1}s"),
    );
}

#[test]
fn criterion_04_gradients_match_finite_differences() {
    let t = Instant::now();
    let h = 1e-6;
    let mut rng = RngStream::new(4);

    let imp = gen_importance(3).unwrap();
    let batch = ndarray::array![[0.7, 0.0, 0.3], [0.2, 0.9, 0.0]];
    let w = Array2::from_shape_fn((3, 2), |_| rng.gaussian());
    let b = Array1::from(vec![0.1, -0.9, 0.05]);
    let mut toy_worst: f64 = 0.0;
    for relu in [false, true] {
        let loss = |w: &Array2<f64>, b: &Array1<f64>| toy_loss(w, b, batch.view(), imp.view(), relu);
        let (_, gw, gb) = toy_loss_grad(&w, &b, batch.view(), imp.view(), relu);
        let (mut num, mut ana) = (Vec::new(), Vec::new());
        for idx in itertools::iproduct!(0..3, 0..2) {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[idx] += h;
            wm[idx] -= h;
            num.push((loss(&wp, &b) - loss(&wm, &b)) / (2.0 * h));
            ana.push(gw[idx]);
        }
        for i in 0..3 {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[i] += h;
            bm[i] -= h;
            num.push((loss(&w, &bp) - loss(&w, &bm)) / (2.0 * h));
            ana.push(gb[i]);
        }
        toy_worst = toy_worst.max(rel_err(&num, &ana));
    }

    let (n_in, f_lat, k) = (3, 4, 2);
    let x = Array2::from_shape_fn((5, n_in), |_| rng.gaussian());
    let p = SaeParams {
        w_enc: Array2::from_shape_fn((f_lat, n_in), |_| rng.gaussian()),
        b_enc: Array1::from_shape_fn(f_lat, |_| 0.1 * rng.gaussian()),
        w_dec: Array2::from_shape_fn((n_in, f_lat), |_| rng.gaussian()),
        b_dec: Array1::from_shape_fn(n_in, |_| 0.1 * rng.gaussian()),
    };
    let g = sae_loss_grad(&p, x.view(), k, &[false; 4], f_lat, 0.0).grads;
    let (mut num, mut ana) = (Vec::new(), Vec::new());
    let mut probe = |perturb: &dyn Fn(&mut SaeParams, f64), analytic: f64| {
        let (mut pp, mut pm) = (p.clone(), p.clone());
        perturb(&mut pp, h);
        perturb(&mut pm, -h);
        num.push((mse_loss(&pp, x.view(), k) - mse_loss(&pm, x.view(), k)) / (2.0 * h));
        ana.push(analytic);
    };
    for idx in itertools::iproduct!(0..f_lat, 0..n_in) {
        probe(&|q, d| q.w_enc[idx] += d, g.w_enc[idx]);
    }
    for idx in itertools::iproduct!(0..n_in, 0..f_lat) {
        probe(&|q, d| q.w_dec[idx] += d, g.w_dec[idx]);
    }
    for i in 0..f_lat {
        probe(&|q, d| q.b_enc[i] += d, g.b_enc[i]);
    }
    for i in 0..n_in {
        probe(&|q, d| q.b_dec[i] += d, g.b_dec[i]);
    }
    let sae_err = rel_err(&num, &ana);
    let secs = t.elapsed().as_secs_f64();
    verdict(
        4,
        toy_worst < 1e-5 && sae_err < 1e-5 && secs < 10.0,
        format!("toy relative error {toy_worst:.2e}, SAE relative error {sae_err:.2e}, {secs:.2}s"),
    );
}

#[test]
fn criterion_05_superposition_emerges() {
    let n8 = width(8);
    let represented: Vec<usize> = n8
        .feature_norms
        .iter()
        .map(|norms| norms.iter().filter(|&&v| v >= 0.9).count())
        .collect();
    let shared32 = width(32).shared.indices.len();
    let slowest = shared_run()
        .experiments
        .iter()
        .flat_map(|e| e.models.iter().map(|m| m.train_seconds))
        .fold(0.0, f64::max);
    verdict(
        5,
        represented.iter().all(|&c| c > 8) && shared32 >= 55 && slowest < 600.0,
        format!("N=8 features at norm >= 0.9 per seed {represented:?}, N=32 shared {shared32}, slowest model {slowest:.0}s"),
    );
}

#[test]
fn criterion_06_arrangements_diverge() {
    let sim = width(16).arrangement.as_ref().expect("N=16 shares features");
    let below = sim.iter().filter(|&&v| v < 0.5).count();
    let frac = below as f64 / sim.len() as f64;
    verdict(
        6,
        frac >= 0.75,
        format!("{below}/{} N=16 neurons below 0.5 ({:.0}%)", sim.len(), 100.0 * frac),
    );
}

#[test]
fn criterion_07_sae_latents_track_features() {
    let gap = |n: usize| {
        let v = &width(n).validation;
        let neuron = (v[0].neuron_mean + v[1].neuron_mean) / 2.0;
        let latent = (v[0].latent_mean + v[1].latent_mean) / 2.0;
        let each = v.iter().all(|t| t.latent_mean > t.neuron_mean);
        (neuron, latent, each)
    };
    let (n16, l16, ok16) = gap(16);
    let (n32, l32, ok32) = gap(32);
    verdict(
        7,
        ok16 && ok32 && (l32 - n32) > (l16 - n16),
        format!("N=16 neurons {n16:.3} vs latents {l16:.3}; N=32 neurons {n32:.3} vs latents {l32:.3}"),
    );
}

#[test]
fn criterion_08_soft_match_rises_with_sae() {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [16, 32] {
        let e = width(n);
        let nn = report(e, Metric::SoftMatch, SourceTag::Neurons, SourceTag::Neurons);
        let ss = report(e, Metric::SoftMatch, SourceTag::SaeLatents, SourceTag::SaeLatents);
        let rs = report(e, Metric::SoftMatch, SourceTag::RandSaeLatents, SourceTag::SaeLatents);
        ok &= beats(ss, nn) && ss.mean > rs.mean;
        if n == 32 {
            ok &= ss.mean >= 0.8;
        }
        parts.push(format!(
            "N={n} SAE {:.4}±{:.4} Neuron {:.4}±{:.4} RandSAE {:.4}",
            ss.mean, ss.stderr, nn.mean, nn.stderr, rs.mean
        ));
    }
    verdict(8, ok, parts.join("; "));
}

#[test]
fn criterion_09_ridge_rises_with_sae_source() {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [16, 32] {
        let e = width(n);
        let nn = report(e, Metric::Ridge, SourceTag::Neurons, SourceTag::Neurons);
        let sn = report(e, Metric::Ridge, SourceTag::SaeLatents, SourceTag::Neurons);
        ok &= beats(sn, nn);
        parts.push(format!(
            "N={n} SAE->Neuron {:.4}±{:.4} Neuron->Neuron {:.4}±{:.4}",
            sn.mean, sn.stderr, nn.mean, nn.stderr
        ));
    }
    verdict(9, ok, parts.join("; "));
}

#[test]
fn criterion_10_rerun_is_deterministic() {
    let first = shared_run();
    let second = run_experiment(&desk_config("run_b")).expect("second pipeline run");
    let read = |s: &RunSummary| {
        read_reports_csv(fs::File::open(s.out_dir.join("alignment.csv")).expect("alignment.csv")).expect("parse")
    };
    let (a, b) = (read(first), read(&second));
    let mut worst: f64 = 0.0;
    let mut same_shape = a.len() == b.len();
    for (x, y) in a.iter().zip(&b) {
        same_shape &= (&x.experiment_id, x.metric, x.source_tag, x.target_tag)
            == (&y.experiment_id, y.metric, y.source_tag, y.target_tag)
            && x.per_fold_scores.len() == y.per_fold_scores.len();
        for (p, q) in x.per_fold_scores.iter().zip(&y.per_fold_scores) {
            worst = worst.max((p - q).abs());
        }
    }
    verdict(
        10,
        same_shape && !a.is_empty() && worst <= 1e-9,
        format!("{} reports compared, max per-fold difference {worst:.2e}", a.len()),
    );
}

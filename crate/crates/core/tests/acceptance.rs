//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria 8 to 10 train on the quick desk configuration and write
//! their reports under the cargo target tmpdir.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use adaptgraph::adapters::{attach, AdapterKind, AdapterSpec, StepCost};
use adaptgraph::backbone::{pretrain_with, Backbone, BackboneConfig};
use adaptgraph::harness::report::{self, write_json, write_manifest};
use adaptgraph::harness::{
    average_ranks, correlation_table, random_search, run_gradient_suite, score_task, single_adapter_sweep, spearman,
    summarize, CorrelationReport, ExperimentConfig, ScoreOptions, SearchOptions, SweepOptions, SweepRecord,
    TaskData, SUITE_EPS, SUITE_TOL,
};
use adaptgraph::numerics::Tensor;
use adaptgraph::scoring::{aggregate, head_steps_for, srank, Aggregator, AggregatorKind, ProbeTrace, ScoreMatrix, ScoreMeta};
use adaptgraph::selection::{gga_select, stride_candidates, CandidateMask, DiscountParams};
use common::*;
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn c1_transparency() -> Verdict {
    let t = Instant::now();
    let mut b = Backbone::init(BackboneConfig::default(), 1).unwrap();
    b.freeze();
    let mut r = rng(100);
    let mut worst: f64 = 0.0;
    let mut kinds = std::collections::BTreeSet::new();
    for trial in 0..100 {
        let specs = random_specs(4, 1 + trial % 8, &mut r, |_| true);
        kinds.extend(specs.iter().map(|s| s.edge.kind()));
        let model = attach(&b, &specs, trial as u64).unwrap();
        let batch = random_batch(&b.config, 2, &mut r);
        let bare = b.forward_trace(&batch, &[]).unwrap().0;
        worst = worst.max(model.logits(&batch).unwrap().max_abs_diff(&bare));
    }
    let el = t.elapsed();
    verdict(
        worst <= 1e-12 && kinds.len() == 4 && el < Duration::from_secs(60),
        format!("100 sets, {} kinds, max |diff| {worst:.1e}", kinds.len()),
    )
}

fn c2_gradients() -> Verdict {
    let t = Instant::now();
    let rep = run_gradient_suite(0, SUITE_EPS, SUITE_TOL).unwrap();
    let kinds: std::collections::BTreeSet<_> = rep.cases.iter().filter_map(|c| c.kind).collect();
    let worst = rep.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let coords: usize = rep.cases.iter().map(|c| c.coordinates).sum();
    let el = t.elapsed();
    verdict(
        rep.passed() && kinds.len() == 4 && el < Duration::from_secs(120),
        format!("{} cases, {coords} coordinates, max rel error {worst:.1e}", rep.cases.len()),
    )
}

fn c3_probe() -> Verdict {
    let b = frozen_backbone(2, 5);
    let mut r = rng(101);
    let batches: Vec<_> = (0..2).map(|_| random_batch(&b.config, 4, &mut r)).collect();
    let trace = ProbeTrace::capture(&b, &batches).unwrap();
    let mut worst: f64 = 0.0;
    let edges = CandidateMask::full(5).edges();
    for &e in &edges {
        let model = attach(&b, &[AdapterSpec::linear(e)], 0).unwrap();
        let w = model.adapter_range(0).start;
        let mut mean = Tensor::zeros(&[8, 8]);
        for batch in &batches {
            mean.add_assign(model.loss_and_grads(batch).unwrap().grads[w].as_ref().unwrap()).unwrap();
        }
        mean.scale_in_place(0.5);
        worst = worst.max(trace.gradient(e).unwrap().max_abs_diff(&mean));
    }
    verdict(worst <= 1e-10, format!("{} edges, max |diff| {worst:.1e}", edges.len()))
}

fn c4_two_pass() -> Verdict {
    let b = frozen_backbone(4, 2);
    let mut r = rng(102);
    let mut identical = 0;
    for trial in 0..50 {
        let specs = random_specs(4, 1 + trial % 8, &mut r, |k| k != AdapterKind::Recurrent);
        let mut model = attach(&b, &specs, trial as u64).unwrap();
        perturb_adapters(&mut model, &mut r);
        let batch = random_batch(&b.config, 2, &mut r);
        identical += usize::from(model.logits(&batch).unwrap().data() == direct_logits(&model, &batch).data());
    }
    let bound = 3 * StepCost::baseline(4) / 2;
    let mut worst = 0;
    for trial in 0..50 {
        let mut specs = random_specs(4, trial % 5, &mut r, |k| k != AdapterKind::Recurrent);
        let rec = random_specs(4, 1 + trial % 3, &mut r, |k| k == AdapterKind::Recurrent);
        specs.retain(|s| rec.iter().all(|q| q.edge != s.edge));
        specs.extend(rec);
        let model = attach(&b, &specs, 0).unwrap();
        worst = worst.max(model.loss_and_grads(&random_batch(&b.config, 2, &mut r)).unwrap().cost.total());
    }
    verdict(
        identical == 50 && worst <= bound,
        format!("{identical}/50 bit-identical; worst recurrent step {worst} block evals, bound {bound}"),
    )
}

fn c5_srank() -> Verdict {
    let units = srank(&[1.0, 0.0, 0.0], 0.01).unwrap() == 1 && srank(&[1.0; 100], 0.01).unwrap() == 99;
    let mut r = rng(103);
    let mut monotone = true;
    for _ in 0..100 {
        let mut s: Vec<f64> = (0..r.random_range(1..30)).map(|_| r.random_range(0.0..5.0)).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        if s.iter().sum::<f64>() == 0.0 {
            continue;
        }
        let ks: Vec<usize> = [0.001, 0.01, 0.05, 0.1, 0.3, 0.6, 0.9].iter().map(|&eta| srank(&s, eta).unwrap()).collect();
        monotone &= ks.windows(2).all(|w| w[1] <= w[0]);
    }
    let mut invariant = true;
    for _ in 0..20 {
        let m = Tensor::new(vec![8, 8], (0..64).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let base = aggregate(AggregatorKind::Srank.into(), &m).unwrap();
        for c in [1e-3, 1.0, 1e3] {
            invariant &= aggregate(AggregatorKind::Srank.into(), &m.map(|v| v * c)).unwrap() == base;
        }
    }
    verdict(units && monotone && invariant, format!("unit values {units}, monotone {monotone}, scale invariant {invariant}"))
}

fn c6_gga() -> Verdict {
    let mut r = rng(104);
    let meta = ScoreMeta { aggregator: AggregatorKind::Srank, eta: 0.01, batches: 1, batch_size: 1, head_steps: 0, seed: 0 };
    let (mut checked, mut matched, mut topn) = (0, 0, 0);
    for _ in 0..200 {
        let values: Vec<f64> = (0..81).map(|_| r.random_range(-1.0..1.0)).collect();
        let s = ScoreMatrix::new(values.clone(), CandidateMask::full(9), meta.clone()).unwrap();
        let mut order: Vec<usize> = (0..81).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        for gamma in [0.0, 0.6] {
            for n in 1..=8 {
                let got: Vec<(usize, usize)> = gga_select(&s, n, DiscountParams::new(gamma).unwrap())
                    .unwrap()
                    .edges
                    .iter()
                    .map(|e| (e.src.0, e.dst.0))
                    .collect();
                checked += 1;
                matched += usize::from(got == gga_oracle(&values, &vec![true; 81], 9, n, gamma));
                if gamma == 0.0 {
                    let top: Vec<(usize, usize)> = order[..n].iter().map(|&k| (k / 9, k % 9)).collect();
                    topn += usize::from(distinct(&got) == distinct(&top));
                }
            }
        }
    }
    verdict(matched == checked && topn == 1600, format!("{matched}/{checked} oracle matches, {topn}/1600 top-N sets"))
}

fn c7_spearman() -> Verdict {
    let mut r = rng(105);
    let (mut worst, mut n_checked): (f64, usize) = (0.0, 0);
    let mut ranks_ok = true;
    while n_checked < 100 {
        let n = r.random_range(3..50);
        let xs: Vec<f64> = (0..n).map(|_| r.random_range(0..8) as f64).collect();
        let ys: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { r.random_range(0..5) as f64 } else { r.random_range(0.0..1.0) }).collect();
        ranks_ok &= average_ranks(&xs) == brute_ranks(&xs);
        let Ok(rho) = spearman(&xs, &ys) else { continue };
        worst = worst.max((rho - brute_spearman(&xs, &ys)).abs());
        n_checked += 1;
    }
    verdict(worst <= 1e-12 && ranks_ok, format!("100 vectors with ties, max |diff| {worst:.1e}"))
}

/// Shared state of the desk-scale criteria.
struct Desk {
    cfg: ExperimentConfig,
    backbone: Backbone,
    data: TaskData,
    out: PathBuf,
    records: Option<Vec<SweepRecord>>,
}

impl Desk {
    fn new() -> Self {
        let cfg = ExperimentConfig::quick();
        let t = Instant::now();
        let (backbone, rep) = pretrain_with(cfg.backbone, &cfg.source, cfg.pretrain_steps, cfg.seed, &cfg.pretrain).unwrap();
        println!(
            "      backbone: {} steps on {}, source test accuracy {:.3}, {:.1?}",
            rep.steps,
            cfg.source.family.name(),
            rep.test_accuracy,
            t.elapsed()
        );
        let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        let _ = std::fs::remove_dir_all(&out);
        let data = cfg.target_data().unwrap();
        Desk { cfg, backbone, data, out, records: None }
    }
}

const SOFT_SPREAD: f64 = 0.02;

fn c8_sweep(desk: &mut Desk) -> Verdict {
    let t = Instant::now();
    let mask = stride_candidates(9, 1).unwrap();
    let opts = SweepOptions { repeats: 3, template: desk.cfg.template(), threads: 0 };
    let records = single_adapter_sweep(&desk.backbone, &desk.data, &mask, &opts, &desk.cfg.train).unwrap();
    let el = t.elapsed();
    let summary = summarize(&records);
    let dir = desk.out.join("sweep");
    write_json(&dir.join("sweep.json"), &serde_json::json!({"records": records, "summary": summary})).unwrap();
    std::fs::write(dir.join("sweep.csv"), report::sweep_csv(&records)).unwrap();
    std::fs::write(dir.join("sweep_grid.csv"), report::sweep_grid_csv(&records, 9)).unwrap();
    write_manifest(&dir, "sweep-single", desk.cfg.seed, &desk.cfg, &[]).unwrap();
    let spread = summary.spread.unwrap_or(0.0);
    let complete = records.len() == 81 && summary.runs == 243;
    let top = summary.top3.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" ");
    let detail = format!(
        "{} cells, {} runs ({} failed), {el:.1?}; spread {:.1} points (expected >= {:.0}: {}); top-3 {top}",
        records.len(),
        summary.runs,
        summary.failed_runs,
        100.0 * spread,
        100.0 * SOFT_SPREAD,
        if spread >= SOFT_SPREAD { "met" } else { "not met" }
    );
    desk.records = Some(records);
    verdict(complete && spread > 0.0 && el < Duration::from_secs(30 * 60), detail)
}

fn c9_correlation(desk: &Desk) -> Verdict {
    let Some(records) = &desk.records else { return verdict(false, "no sweep records") };
    let mask = stride_candidates(9, 1).unwrap();
    let aggs: Vec<Aggregator> = AggregatorKind::ALL.iter().map(|&k| Aggregator::new(k, 0.01).unwrap()).collect();
    let head_steps = head_steps_for(desk.cfg.train.steps);
    let options = |seed| ScoreOptions { head_steps, batches: desk.cfg.score.batches, batch_size: desk.cfg.score.batch_size, seed };
    let mut per_seed: Vec<Vec<CorrelationReport>> = Vec::new();
    let mut first: Vec<ScoreMatrix> = Vec::new();
    for seed in 0..3 {
        let res = score_task(&desk.backbone, &desk.data, &mask, &aggs, &options(seed), &desk.cfg.train).unwrap();
        let table = correlation_table(&res.matrices, records).unwrap();
        let dir = desk.out.join(format!("correlation/seed_{seed}"));
        for m in &res.matrices {
            m.write(&dir, &format!("scores_{}", m.meta.aggregator)).unwrap();
        }
        write_json(&dir.join("correlation.json"), &table).unwrap();
        std::fs::write(dir.join("correlation.csv"), report::correlation_csv(&table)).unwrap();
        for r in &table {
            std::fs::write(dir.join(format!("scatter_{}.csv", r.aggregator)), report::scatter_csv(r)).unwrap();
        }
        if seed == 0 {
            first = res.matrices;
        }
        per_seed.push(table);
    }
    let again = score_task(&desk.backbone, &desk.data, &mask, &aggs, &options(0), &desk.cfg.train).unwrap();
    let deterministic =
        again.matrices == first && correlation_table(&again.matrices, records).unwrap() == per_seed[0];
    let complete = per_seed.iter().all(|t| {
        t.len() == 6 && t.iter().all(|r| r.points.len() == 81) && t.iter().map(|r| r.aggregator).collect::<Vec<_>>() == AggregatorKind::ALL
    });
    let srank_rhos: Vec<f64> = per_seed.iter().filter_map(|t| t[5].rho_train_loss.value()).collect();
    let mut sorted = srank_rhos.clone();
    sorted.sort_by(f64::total_cmp);
    let median = (sorted.len() == 3).then(|| sorted[1]);
    let table: Vec<String> = per_seed[0]
        .iter()
        .map(|r| format!("{}={}", r.aggregator, r.rho_train_loss.value().map_or("NA".into(), |v| format!("{v:+.2}"))))
        .collect();
    let detail = format!(
        "head {head_steps} steps, eta 0.01, deterministic {deterministic}; srank rho(train loss) per seed {:?}, median {} (expected < 0: {}); seed 0: {}",
        srank_rhos.iter().map(|v| format!("{v:+.3}")).collect::<Vec<_>>(),
        median.map_or("NA".into(), |m| format!("{m:+.3}")),
        if median.is_some_and(|m| m < 0.0) { "met" } else { "not met" },
        table.join(" ")
    );
    verdict(complete && deterministic, detail)
}

fn c10_search(desk: &Desk) -> Verdict {
    let t = Instant::now();
    let opts = SearchOptions { samples: 20, num_adapters: 8, repeats: 3, template: desk.cfg.template(), threads: 0 };
    let rep = random_search(&desk.backbone, &desk.data, &CandidateMask::full(9), &opts, &desk.cfg.train, desk.cfg.seed).unwrap();
    let dir = desk.out.join("search");
    write_json(&dir.join("search.json"), &rep).unwrap();
    std::fs::write(dir.join("search.csv"), report::search_csv(&rep)).unwrap();
    write_manifest(&dir, "random-search", desk.cfg.seed, &desk.cfg, &[]).unwrap();
    let all_trained = rep.samples.len() == 20 && rep.samples.iter().all(|s| s.failures.is_empty() && s.seeds.len() == 3);
    let mut ranked = rep.ranking.clone();
    ranked.sort();
    let ranks_all = ranked == (0..20).collect::<Vec<_>>();
    let max = rep.max_mean_test_accuracy.unwrap_or(f64::NAN);
    let par = rep.baseline("parallel_last_8").and_then(|b| b.mean_test_accuracy).unwrap_or(f64::NAN);
    let seq = rep.baseline("sequential_last_8").and_then(|b| b.mean_test_accuracy).unwrap_or(f64::NAN);
    let lp = rep.baseline("linear_probe").and_then(|b| b.mean_test_accuracy).unwrap_or(f64::NAN);
    let detail = format!(
        "20 samples x 8 adapters x 3 seeds, {:.1?}; max mean {:.1}%, all-parallel {:.1}% (expected max >= parallel - 0.5: {}), sequential {:.1}%, linear probe {:.1}%",
        t.elapsed(),
        100.0 * max,
        100.0 * par,
        if max >= par - 0.005 { "met" } else { "not met" },
        100.0 * seq,
        100.0 * lp
    );
    verdict(all_trained && ranks_all, detail)
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let t = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
    });
    println!("{} [{id:>2}] {name} ({:.1?}): {}", if v.pass { "PASS" } else { "FAIL" }, t.elapsed(), v.detail);
    v.pass
}

fn main() -> ExitCode {
    println!("acceptance criteria");
    let mut ok = true;
    ok &= run(1, "zero-init transparency", c1_transparency);
    ok &= run(2, "gradient suite", c2_gradients);
    ok &= run(3, "probe gradient oracle", c3_probe);
    ok &= run(4, "two-pass degeneration", c4_two_pass);
    ok &= run(5, "srank unit values", c5_srank);
    ok &= run(6, "GGA oracle", c6_gga);
    ok &= run(7, "Spearman oracle", c7_spearman);
    match catch_unwind(Desk::new) {
        Ok(mut desk) => {
            ok &= run(8, "placement sensitivity sweep", || c8_sweep(&mut desk));
            ok &= run(9, "score correlation pipeline", || c9_correlation(&desk));
            ok &= run(10, "random search", || c10_search(&desk));
            println!("      reports in {}", desk.out.display());
        }
        Err(_) => {
            for (id, name) in [(8, "placement sensitivity sweep"), (9, "score correlation pipeline"), (10, "random search")] {
                ok &= run(id, name, || verdict(false, "backbone pretraining failed"));
            }
        }
    }
    if ok {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("some criteria failed");
        ExitCode::FAILURE
    }
}

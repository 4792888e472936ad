//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Built without the libtest harness so the output is exactly the
//! criterion lines plus timings.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use churnscope::workloads::SplitMix64;
use churnscope::{
    default_cost_model, diff_reports, event_cost, parse_verdict, run_workload_sealed, AllocFnKind,
    ChurnReport, CostModel, CounterSnapshot, DeltaStatus, RecorderConfig, Session, ThreadId,
    ThreadRecorder, Thresholds, Variant, Workload, WorkloadSpec,
};
use support::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(elapsed <= Duration::from_secs(limit_secs), || {
        format!("took {:.2}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn ac1_cost_spot_checks() -> Outcome {
    let t = Instant::now();
    let m: CostModel = default_cost_model();
    let cases = [
        (AllocFnKind::Malloc, 1024, 10.0),
        (AllocFnKind::Realloc, 4096, 36.0),
        (AllocFnKind::Calloc, 256, 16.0),
        (AllocFnKind::Free, 512, 9.0),
    ];
    for (kind, bytes, want) in cases {
        let got = event_cost(&m, kind, bytes);
        ensure((got - want).abs() <= 1e-12, || {
            format!("{kind} {bytes}: {got} != {want}")
        })?;
    }
    for kind in AllocFnKind::ALL {
        for bytes in [0, 1] {
            let got = event_cost(&m, kind, bytes);
            ensure(got.abs() <= 1e-12, || format!("{kind} {bytes}: {got} != 0"))?;
        }
    }
    within(t.elapsed(), 1)?;
    Ok(format!("{} spot values", cases.len() + 8))
}

fn ac2_default_weights() -> Outcome {
    let m: CostModel = default_cost_model();
    let got: Vec<(String, f64)> = m.weights().map(|(k, w)| (k.to_string(), w)).collect();
    let mut sorted = got.clone();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let want = [
        ("calloc", 2.0),
        ("free", 1.0),
        ("malloc", 1.0),
        ("realloc", 3.0),
    ];
    ensure(
        sorted.len() == 4
            && sorted
                .iter()
                .zip(want)
                .all(|(g, w)| g.0 == w.0 && g.1 == w.1),
        || format!("weights {sorted:?}"),
    )?;
    Ok(format!("{sorted:?}"))
}

fn ac3_determinism() -> Outcome {
    let t = Instant::now();
    for w in Workload::ALL {
        let spec = WorkloadSpec::new(w, 1, 10, Variant::Baseline);
        let first = run_report(&spec, default_cost_model()).canonical_body();
        for i in 1..10 {
            let again = run_report(&spec, default_cost_model()).canonical_body();
            ensure(again == first, || format!("{w}: repetition {i} differs"))?;
        }
    }
    within(t.elapsed(), 30)?;
    Ok(format!(
        "4 workloads x 10 runs in {:.2}s",
        t.elapsed().as_secs_f64()
    ))
}

fn ac4_oracle_equivalence() -> Outcome {
    let t = Instant::now();
    let mut lengths = SplitMix64::new(0xac4);
    let (mut spans, mut events, mut longest) = (0, 0, 0);
    for seed in 0..1000u64 {
        // Always include a few maximum-length sequences.
        let n = if seed < 5 {
            10_000
        } else {
            1 + lengths.below(10_000) as usize
        };
        let run = execute(&gen_script(seed, n), 4096);
        spans +=
            check_oracle_equivalence(&run, 1.0, 1e-9).map_err(|e| format!("seed {seed}: {e}"))?;
        events += run.log.len();
        longest = longest.max(run.log.len());
    }
    within(t.elapsed(), 60)?;
    Ok(format!(
        "1000 sequences, {events} events (max {longest}), {spans} spans in {:.2}s",
        t.elapsed().as_secs_f64()
    ))
}

fn ac5_additivity_merge_containment() -> Outcome {
    let mut rng = SplitMix64::new(0xac5);
    for case in 0..500u64 {
        let run = execute(&gen_script(10_000 + case, 1 + rng.below(2000) as usize), 64);
        check_additivity(&run, &mut rng, 1, 1e-9)
            .map_err(|e| format!("additivity case {case}: {e}"))?;
    }
    for case in 0..500u64 {
        let parts = random_parts(20_000 + case, 2 + (case % 8) as usize);
        check_merge(&parts, 1e-9).map_err(|e| format!("merge case {case}: {e}"))?;
    }
    let (mut cases, mut seed) = (0, 30_000u64);
    while cases < 500 {
        let run = execute(&gen_script(seed, 300), 64);
        cases += check_containment(&run).map_err(|e| format!("containment seed {seed}: {e}"))?;
        seed += 1;
    }
    Ok(format!(
        "500 bisections, 500 merges, {cases} parent/child pairs"
    ))
}

fn ac6_conservation() -> Outcome {
    let mut threads_checked = 0;
    for w in Workload::ALL {
        for variant in [Variant::Baseline, Variant::Regressed] {
            let spec = WorkloadSpec::new(w, 1, 3, variant);
            let session = Session::new(default_cost_model(), RecorderConfig::default()).unwrap();
            let threads = run_workload_sealed(&spec, session).map_err(|e| e.to_string())?;
            for t in &threads {
                let s = &t.final_snapshot;
                ensure(s.bytes_allocated == s.bytes_freed, || {
                    format!(
                        "{w} {variant:?} {}: allocated {} freed {}",
                        t.thread_id, s.bytes_allocated, s.bytes_freed
                    )
                })?;
                ensure(t.live_blocks == 0 && t.live_bytes == 0, || {
                    format!(
                        "{w} {variant:?} {}: {} live blocks",
                        t.thread_id, t.live_blocks
                    )
                })?;
                ensure(t.anomalies.total() == 0, || {
                    format!("{w} {variant:?}: {:?}", t.anomalies)
                })?;
                threads_checked += 1;
            }
            let r = run_report(&spec, default_cost_model());
            ensure(
                r.outstanding.blocks == 0 && r.anomalies.total() == 0,
                || format!("{w} {variant:?}: report shows leftovers"),
            )?;
        }
    }
    Ok(format!("8 runs, {threads_checked} threads balanced"))
}

fn strip_overflow(s: &CounterSnapshot) -> CounterSnapshot {
    CounterSnapshot {
        overflow_count: 0,
        ..*s
    }
}

fn ac7_ring_overflow() -> Outcome {
    for seed in 0..20 {
        let script = gen_script(seed, 5000);
        let small = execute(&script, 1);
        let large = execute(&script, 1_000_000);
        ensure(
            small
                .snaps
                .iter()
                .map(strip_overflow)
                .eq(large.snaps.iter().map(strip_overflow)),
            || format!("script {seed}: counters differ"),
        )?;
        ensure(
            small.recorder.anomalies() == large.recorder.anomalies(),
            || format!("script {seed}: anomalies differ"),
        )?;
    }
    for w in Workload::ALL {
        let spec = WorkloadSpec::new(w, 1, 2, Variant::Regressed);
        let finals = |ring_capacity| {
            let cfg = RecorderConfig {
                ring_capacity,
                ..RecorderConfig::default()
            };
            let threads =
                run_workload_sealed(&spec, Session::new(default_cost_model(), cfg).unwrap())
                    .unwrap();
            let model = default_cost_model();
            let report = ChurnReport::from_threads(
                &threads,
                &model,
                churnscope::ReportMeta::at_epoch("x", 0),
            )
            .unwrap();
            let snaps: Vec<_> = threads
                .iter()
                .map(|t| strip_overflow(&t.final_snapshot))
                .collect();
            (snaps, report)
        };
        let (a, ra) = finals(1);
        let (b, rb) = finals(1_000_000);
        ensure(a == b, || format!("{w}: thread counters differ"))?;
        ensure(
            ra.merged
                .values()
                .zip(rb.merged.values())
                .all(|(x, y)| x.cost == y.cost && x.calls == y.calls && x.bytes == y.bytes),
            || format!("{w}: phase records differ"),
        )?;
    }
    Ok("20 scripts + 4 workloads, capacity 1 vs 1000000".into())
}

fn cli(args: &[&str]) -> Result<(i32, String), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_churnscope"))
        .args(args)
        .env_remove("CHURNSCOPE_RING_CAPACITY")
        .output()
        .map_err(|e| e.to_string())?;
    let code = o.status.code().ok_or("killed by signal")?;
    Ok((code, String::from_utf8_lossy(&o.stdout).into_owned()))
}

fn ac8_end_to_end() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let (base, cand) = (path("base.churn.json"), path("cand.churn.json"));
    for (out, variant) in [(&base, "baseline"), (&cand, "regressed")] {
        let (code, _) = cli(&[
            "run",
            "--workload",
            "strings",
            "--seed",
            "1",
            "--scale",
            "100",
            "--variant",
            variant,
            "--out",
            out,
        ])?;
        ensure(code == 0, || format!("run {variant} exited {code}"))?;
    }
    let (code, json) = cli(&["diff", &base, &cand, "--format", "json"])?;
    ensure(code == 1, || format!("regressed diff exited {code}"))?;
    let verdict = parse_verdict(&json).map_err(|e| e.to_string())?;
    let first = &verdict.entries[0];
    ensure(
        first.phase == "format" && first.status == DeltaStatus::Regression,
        || format!("first entry {} ({})", first.phase, first.status.as_str()),
    )?;
    let (code, text) = cli(&["diff", &base, &cand])?;
    let first_row = text.lines().nth(1).unwrap_or_default();
    ensure(
        code == 1 && first_row.split_whitespace().nth(1) == Some("format"),
        || format!("text diff: {first_row}"),
    )?;
    let (code, json) = cli(&["diff", &base, &base, "--format", "json"])?;
    ensure(code == 0, || format!("self diff exited {code}"))?;
    let same = parse_verdict(&json).map_err(|e| e.to_string())?;
    ensure(
        same.entries
            .iter()
            .all(|e| e.status == DeltaStatus::Neutral),
        || "self diff not all neutral".into(),
    )?;
    within(t.elapsed(), 10)?;
    Ok(format!(
        "format {:+.2}%, self-diff {} neutral, {:.2}s",
        first.cost_delta_rel.unwrap_or(f64::NAN) * 100.0,
        same.entries.len(),
        t.elapsed().as_secs_f64()
    ))
}

fn ac9_scheduler_independence() -> Outcome {
    let spec = WorkloadSpec::new(Workload::Multithread, 1, 5, Variant::Baseline);
    let first = run_report(&spec, default_cost_model());
    let body = first.canonical_body();
    for i in 1..10 {
        let again = run_report(&spec, default_cost_model());
        ensure(again.canonical_body() == body, || {
            format!("run {i} differs")
        })?;
    }
    Ok(format!(
        "10 runs, {} phases, {} per-thread records",
        first.merged.len(),
        first.per_thread.len()
    ))
}

fn ac10_throughput() -> Outcome {
    const EVENTS: u64 = 2_000_000;
    let mut rec = ThreadRecorder::new(
        ThreadId(0),
        Arc::new(default_cost_model()),
        RecorderConfig::default(),
    );
    let mut rng = SplitMix64::new(10);
    let t = Instant::now();
    for i in 0..EVENTS / 2 {
        let addr = 16 + (i as usize) * 16;
        rec.record_malloc(rng.below(4096), addr);
        rec.record_free(addr);
    }
    let secs = t.elapsed().as_secs_f64();
    let rate = EVENTS as f64 / secs;
    ensure(rec.snapshot().next_seq == EVENTS, || "events lost".into())?;
    ensure(rate >= 100_000.0, || format!("{rate:.0} events/s"))?;
    Ok(format!("{:.2}M events/s", rate / 1e6))
}

fn ac11_ranking_invariance() -> Outcome {
    let verdict = |w: Workload, model: &CostModel| {
        let base = run_report(
            &WorkloadSpec::new(w, 1, 5, Variant::Baseline),
            model.clone(),
        );
        let cand = run_report(
            &WorkloadSpec::new(w, 1, 5, Variant::Regressed),
            model.clone(),
        );
        diff_reports(&base, &cand, Thresholds::default()).unwrap()
    };
    let shape = |v: &churnscope::RegressionVerdict| {
        v.entries
            .iter()
            .map(|e| (e.phase.clone(), e.status))
            .collect::<Vec<_>>()
    };
    let mut compared = 0;
    for w in Workload::ALL {
        let reference = shape(&verdict(w, &default_cost_model()));
        for s in [0.5, 2.0, 10.0] {
            let scaled = default_cost_model().scaled(s, format!("x{s}"));
            let got = shape(&verdict(w, &scaled));
            ensure(got == reference, || {
                format!("{w} at scale {s}: {got:?} vs {reference:?}")
            })?;
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} scaled diffs match the unscaled ranking"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("AC-1", "cost function spot checks", ac1_cost_spot_checks),
        ("AC-2", "default weights", ac2_default_weights),
        ("AC-3", "workload determinism", ac3_determinism),
        ("AC-4", "oracle equivalence", ac4_oracle_equivalence),
        (
            "AC-5",
            "additivity, merge, containment",
            ac5_additivity_merge_containment,
        ),
        ("AC-6", "conservation", ac6_conservation),
        ("AC-7", "ring overflow immunity", ac7_ring_overflow),
        ("AC-8", "end-to-end regression gate", ac8_end_to_end),
        ("AC-9", "scheduler independence", ac9_scheduler_independence),
        ("AC-10", "recorder throughput", ac10_throughput),
        (
            "AC-11",
            "ranking invariance under weight scaling",
            ac11_ranking_invariance,
        ),
    ];
    // Keep panic messages out of the criterion lines; they are reported
    // as the failure detail instead.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, title, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("[PASS] {id} {title}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id} {title}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

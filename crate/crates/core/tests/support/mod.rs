//! Brute-force replay oracle.
//!
//! Generates random single-thread scripts of allocator calls and marker
//! operations, drives them through the real recorder and marker book, and
//! independently replays the same calls against a plain event log. The
//! oracle never calls into the crate's cost or accounting code: it keeps its
//! own weight table, its own live map and sums `w * log2(max(b, 1))` event
//! by event.

#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use churnscope::aggregation::{churn_between, span_churn};
use churnscope::markers::MarkerBook;
use churnscope::workloads::SplitMix64;
use churnscope::{
    default_cost_model, AllocFnKind, CostModel, CounterSnapshot, MarkerSpan, RecorderConfig,
    ThreadId, ThreadRecorder,
};

/// Oracle's own copy of the default weights.
pub fn oracle_weight(kind: AllocFnKind) -> f64 {
    match kind {
        AllocFnKind::Malloc => 1.0,
        AllocFnKind::Calloc => 2.0,
        AllocFnKind::Realloc => 3.0,
        AllocFnKind::Free => 1.0,
    }
}

pub fn oracle_cost(kind: AllocFnKind, bytes: u64) -> f64 {
    oracle_weight(kind) * (bytes.max(1) as f64).log2()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

#[derive(Debug, Clone, Copy)]
pub enum Op {
    Malloc(u64),
    Calloc(u64, u64),
    /// Reallocate the live block at `pick % live.len()`.
    Realloc {
        pick: u64,
        size: u64,
        in_place: bool,
    },
    Free {
        pick: u64,
    },
    /// Free of a token never handed out (null when `null` is set).
    FreeUnknown {
        null: bool,
    },
    ReallocUnknown(u64),
    Begin(u8),
    End {
        pick: u64,
    },
}

pub const SPAN_NAMES: [&str; 4] = ["a", "b", "c", "d"];

fn size(rng: &mut SplitMix64) -> u64 {
    match rng.below(10) {
        0 => 0,
        1 => 1,
        2..=6 => rng.below(256),
        7 | 8 => rng.below(65536),
        _ => rng.below(1 << 24),
    }
}

/// A script with `events` allocator calls interleaved with marker ops.
pub fn gen_script(seed: u64, events: usize) -> Vec<Op> {
    let mut rng = SplitMix64::new(seed);
    let mut ops = Vec::with_capacity(events + events / 4);
    let mut n = 0;
    while n < events {
        let op = match rng.below(100) {
            0..=29 => Op::Malloc(size(&mut rng)),
            30..=39 => Op::Calloc(rng.below(64), rng.below(512)),
            40..=54 => Op::Realloc {
                pick: rng.next_u64(),
                size: size(&mut rng),
                in_place: rng.below(3) == 0,
            },
            55..=84 => Op::Free {
                pick: rng.next_u64(),
            },
            85 | 86 => Op::FreeUnknown {
                null: rng.below(2) == 0,
            },
            87 => Op::ReallocUnknown(size(&mut rng)),
            88..=93 => Op::Begin(rng.below(SPAN_NAMES.len() as u64) as u8),
            _ => Op::End {
                pick: rng.next_u64(),
            },
        };
        if !matches!(op, Op::Begin(_) | Op::End { .. }) {
            n += 1;
        }
        ops.push(op);
    }
    ops
}

/// One oracle log entry.
#[derive(Debug, Clone, Copy)]
pub struct Logged {
    pub kind: AllocFnKind,
    pub bytes: u64,
    pub allocated: u64,
    pub freed: u64,
}

/// Oracle's record of a span: name and event-index interval.
#[derive(Debug, Clone)]
pub struct OracleSpan {
    pub name: &'static str,
    pub start: usize,
    pub end: usize,
}

pub struct Run {
    pub model: CostModel,
    pub recorder: ThreadRecorder,
    /// Closed spans from the marker book, in span-id order.
    pub spans: Vec<MarkerSpan>,
    /// Oracle view of the same spans.
    pub oracle_spans: Vec<OracleSpan>,
    /// `snaps[i]` is the recorder snapshot after `i` events.
    pub snaps: Vec<CounterSnapshot>,
    pub log: Vec<Logged>,
    pub oracle_live: HashMap<usize, u64>,
}

pub fn execute(ops: &[Op], ring_capacity: usize) -> Run {
    execute_with(ops, ring_capacity, default_cost_model())
}

pub fn execute_with(ops: &[Op], ring_capacity: usize, model: CostModel) -> Run {
    let cfg = RecorderConfig {
        ring_capacity,
        ..RecorderConfig::default()
    };
    let mut rec = ThreadRecorder::new(ThreadId(0), Arc::new(model.clone()), cfg);
    let mut book = MarkerBook::new(ThreadId(0));
    let mut snaps = vec![rec.snapshot()];
    let mut log = Vec::new();
    let mut live: HashMap<usize, u64> = HashMap::new();
    let mut live_order: Vec<usize> = Vec::new();
    let mut next_addr = 0x1000usize;
    let mut unknown = 0xdead_0000usize;
    let mut open: Vec<(churnscope::SpanHandle, usize)> = Vec::new();
    let mut oracle_spans: Vec<Option<OracleSpan>> = Vec::new();

    let mut fresh = || {
        next_addr += 16;
        next_addr
    };
    fn take(live_order: &mut Vec<usize>, pick: u64) -> Option<usize> {
        if live_order.is_empty() {
            None
        } else {
            let i = (pick % live_order.len() as u64) as usize;
            Some(live_order.swap_remove(i))
        }
    }

    for op in ops {
        let logged = match *op {
            Op::Malloc(s) => {
                let a = fresh();
                rec.record_malloc(s, a);
                live.insert(a, s);
                live_order.push(a);
                Logged {
                    kind: AllocFnKind::Malloc,
                    bytes: s,
                    allocated: s,
                    freed: 0,
                }
            }
            Op::Calloc(c, e) => {
                let a = fresh();
                rec.record_calloc(c, e, a);
                live.insert(a, c * e);
                live_order.push(a);
                Logged {
                    kind: AllocFnKind::Calloc,
                    bytes: c * e,
                    allocated: c * e,
                    freed: 0,
                }
            }
            Op::Realloc {
                pick,
                size,
                in_place,
            } => match take(&mut live_order, pick) {
                None => continue,
                Some(old) => {
                    let new = if in_place { old } else { fresh() };
                    rec.record_realloc(old, size, new);
                    let released = live.remove(&old).unwrap_or(0);
                    if size > 0 {
                        live.insert(new, size);
                        live_order.push(new);
                    }
                    Logged {
                        kind: AllocFnKind::Realloc,
                        bytes: size,
                        allocated: size,
                        freed: released,
                    }
                }
            },
            Op::Free { pick } => match take(&mut live_order, pick) {
                None => continue,
                Some(old) => {
                    rec.record_free(old);
                    let b = live.remove(&old).unwrap_or(0);
                    Logged {
                        kind: AllocFnKind::Free,
                        bytes: b,
                        allocated: 0,
                        freed: b,
                    }
                }
            },
            Op::FreeUnknown { null } => {
                unknown += 16;
                rec.record_free(if null { 0 } else { unknown });
                Logged {
                    kind: AllocFnKind::Free,
                    bytes: 0,
                    allocated: 0,
                    freed: 0,
                }
            }
            Op::ReallocUnknown(s) => {
                unknown += 16;
                let a = fresh();
                rec.record_realloc(unknown, s, a);
                if s > 0 {
                    live.insert(a, s);
                    live_order.push(a);
                }
                Logged {
                    kind: AllocFnKind::Realloc,
                    bytes: s,
                    allocated: s,
                    freed: 0,
                }
            }
            Op::Begin(n) => {
                let name = SPAN_NAMES[n as usize];
                let h = book.begin(&rec, name).expect("begin");
                open.push((h, oracle_spans.len()));
                oracle_spans.push(Some(OracleSpan {
                    name,
                    start: log.len(),
                    end: usize::MAX,
                }));
                continue;
            }
            Op::End { pick } => {
                if open.is_empty() {
                    continue;
                }
                let i = (pick % open.len() as u64) as usize;
                let (h, o) = open.remove(i);
                book.end(&rec, h).expect("end");
                oracle_spans[o].as_mut().unwrap().end = log.len();
                continue;
            }
        };
        log.push(logged);
        snaps.push(rec.snapshot());
    }
    book.close_all(&rec);
    for (_, o) in open {
        oracle_spans[o].as_mut().unwrap().end = log.len();
    }

    Run {
        model,
        recorder: rec,
        spans: book.into_spans(),
        oracle_spans: oracle_spans.into_iter().map(Option::unwrap).collect(),
        snaps,
        log,
        oracle_live: live,
    }
}

/// Oracle totals over `log[start..end]`.
pub struct OracleChurn {
    pub cost: f64,
    pub calls: [u64; 4],
    pub bytes: [u64; 4],
    pub allocated: u64,
    pub freed: u64,
}

pub fn oracle_churn(log: &[Logged], start: usize, end: usize, weight_scale: f64) -> OracleChurn {
    let mut c = OracleChurn {
        cost: 0.0,
        calls: [0; 4],
        bytes: [0; 4],
        allocated: 0,
        freed: 0,
    };
    for e in &log[start..end] {
        c.cost += weight_scale * oracle_cost(e.kind, e.bytes);
        c.calls[e.kind.index()] += 1;
        c.bytes[e.kind.index()] += e.bytes;
        c.allocated += e.allocated;
        c.freed += e.freed;
    }
    c
}

/// Accumulator-based span churn must equal the replayed sum for every span.
pub fn check_oracle_equivalence(run: &Run, weight_scale: f64, tol: f64) -> Result<usize, String> {
    for (span, o) in run.spans.iter().zip(&run.oracle_spans) {
        let got = span_churn(span, &run.model).map_err(|e| e.to_string())?;
        let want = oracle_churn(&run.log, o.start, o.end, weight_scale);
        if &*span.name != o.name
            || span.start_seq() != o.start as u64
            || span.end_seq() != Some(o.end as u64)
        {
            return Err(format!("span {} interval mismatch", span.span_id));
        }
        if !rel_close(got.cost, want.cost, tol) {
            return Err(format!(
                "span {} cost {} vs oracle {}",
                span.span_id, got.cost, want.cost
            ));
        }
        if got.calls != want.calls || got.bytes != want.bytes {
            return Err(format!("span {} counters differ", span.span_id));
        }
        if got.bytes_allocated != want.allocated || got.bytes_freed != want.freed {
            return Err(format!("span {} byte totals differ", span.span_id));
        }
    }
    Ok(run.spans.len())
}

/// Splitting any interval at an interior point adds up exactly (cost within
/// `tol`). Checks `splits` random (start, mid, end) triples.
pub fn check_additivity(
    run: &Run,
    rng: &mut SplitMix64,
    splits: usize,
    tol: f64,
) -> Result<(), String> {
    let n = run.snaps.len() as u64;
    for _ in 0..splits {
        let mut pts = [rng.below(n), rng.below(n), rng.below(n)];
        pts.sort_unstable();
        let [s, m, e] = pts.map(|p| &run.snaps[p as usize]);
        let whole = churn_between("w", None, s, e);
        let mut parts = churn_between("w", None, s, m);
        parts.accumulate(&churn_between("w", None, m, e));
        if !rel_close(whole.cost, parts.cost, tol) {
            return Err(format!("cost {} vs {} at {pts:?}", whole.cost, parts.cost));
        }
        if whole.calls != parts.calls
            || whole.bytes != parts.bytes
            || whole.bytes_allocated != parts.bytes_allocated
            || whole.bytes_freed != parts.bytes_freed
        {
            return Err(format!("counters not additive at {pts:?}"));
        }
    }
    Ok(())
}

/// Every child with a parent has component-wise smaller deltas.
pub fn check_containment(run: &Run) -> Result<usize, String> {
    let mut checked = 0;
    for span in &run.spans {
        let Some(pid) = span.parent else { continue };
        let parent = &run.spans[pid.index as usize];
        let (ps, pe) = (parent.start_seq(), parent.end_seq().unwrap());
        let (cs, ce) = (span.start_seq(), span.end_seq().unwrap());
        if !(ps <= cs && ce <= pe) {
            return Err(format!("parent {pid} does not contain {}", span.span_id));
        }
        let c = span_churn(span, &run.model).unwrap();
        let p = span_churn(parent, &run.model).unwrap();
        let dominated = c.cost <= p.cost
            && (0..4).all(|i| c.calls[i] <= p.calls[i] && c.bytes[i] <= p.bytes[i])
            && c.bytes_allocated <= p.bytes_allocated
            && c.bytes_freed <= p.bytes_freed;
        if !dominated {
            return Err(format!("{} exceeds its parent {pid}", span.span_id));
        }
        checked += 1;
    }
    Ok(checked)
}

/// Random per-thread parts for merge checks: churn over random intervals of
/// a random run, all sharing one phase name.
pub fn random_parts(seed: u64, count: usize) -> Vec<churnscope::MarkerChurn> {
    let run = execute(&gen_script(seed, 200), 64);
    let mut rng = SplitMix64::new(seed ^ 0x5eed);
    let n = run.snaps.len() as u64;
    (0..count)
        .map(|t| {
            let (mut a, mut b) = (rng.below(n), rng.below(n));
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            churn_between(
                "phase",
                Some(ThreadId(t as u32)),
                &run.snaps[a as usize],
                &run.snaps[b as usize],
            )
        })
        .collect()
}

pub fn same_counts(a: &churnscope::MarkerChurn, b: &churnscope::MarkerChurn) -> bool {
    a.calls == b.calls
        && a.bytes == b.bytes
        && a.bytes_allocated == b.bytes_allocated
        && a.bytes_freed == b.bytes_freed
        && a.overflow == b.overflow
}

/// Commutativity (reversed and rotated orders) and associativity (merging
/// merged halves) of `merge_threads`.
pub fn check_merge(parts: &[churnscope::MarkerChurn], tol: f64) -> Result<(), String> {
    use churnscope::merge_threads;
    let base = merge_threads(parts).map_err(|e| e.to_string())?;
    let mut reversed = parts.to_vec();
    reversed.reverse();
    let mut rotated = parts.to_vec();
    rotated.rotate_left(parts.len() / 2);
    let split = parts.len() / 2;
    let left = merge_threads(&parts[..split.max(1)]).unwrap();
    let grouped = if split.max(1) < parts.len() {
        let right = merge_threads(&parts[split.max(1)..]).unwrap();
        merge_threads(&[left, right]).unwrap()
    } else {
        left
    };
    for (label, other) in [
        ("reversed", merge_threads(&reversed).unwrap()),
        ("rotated", merge_threads(&rotated).unwrap()),
        ("grouped", grouped),
    ] {
        if !same_counts(&base, &other) || !rel_close(base.cost, other.cost, tol) {
            return Err(format!(
                "{label} merge differs: {} vs {}",
                base.cost, other.cost
            ));
        }
    }
    Ok(())
}

/// Runs a workload under `model` with fixed metadata.
pub fn run_report(spec: &churnscope::WorkloadSpec, model: CostModel) -> churnscope::ChurnReport {
    let session = churnscope::Session::new(model, RecorderConfig::default()).expect("valid model");
    churnscope::run_workload(spec, session, churnscope::ReportMeta::at_epoch("test", 0))
        .unwrap_or_else(|e| panic!("{spec:?}: {e}"))
}

//! Deterministic synthetic workloads.
//!
//! Each workload drives the C-style interface of a [`ChurnAllocator`] under
//! named markers. The allocation sequence is fully determined by
//! `(workload, seed, scale, variant)`: every repetition restarts the
//! generator from `seed`, so scale `n` is exactly `n` copies of scale 1.
//! Regressed variants only add allocations, in the phases listed by
//! [`Workload::regressed_phases`].

use std::fmt;
use std::str::FromStr;

use crate::aggregation::AggregationError;
use crate::event_capture::{untracked, Block, ChurnAllocator, ThreadId};
use crate::markers::MarkerError;
use crate::report_io::{ChurnReport, ReportMeta};
use crate::scalar::ChurnScalar;
use crate::session::{SealedThread, Session, SessionError, ThreadContext};

static HEAP: ChurnAllocator = ChurnAllocator::system();

/// SplitMix64: the state advances by the golden-ratio increment
/// `0x9E3779B97F4A7C15` and each output is mixed with multipliers
/// `0xBF58476D1CE4E5B9` and `0x94D049BB133111EB` and shifts 30, 27, 31.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub const fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform-ish value in `0..bound` (modulo reduction; bias is irrelevant
    /// here, determinism is what matters).
    pub fn below(&mut self, bound: u64) -> u64 {
        self.next_u64() % bound
    }

    fn size(&mut self, lo: usize, span: usize) -> usize {
        lo + self.below(span as u64) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Workload {
    /// Grow-and-free byte buffers, then format them (phases: build, format).
    Strings,
    /// Hash-table inserts and erases with reallocation bursts
    /// (phases: fill, rehash, drain).
    Table,
    /// Large image-like blocks (phases: decode, transform).
    Buffers,
    /// One main-phase thread plus workers with overlapping
    /// sync/cache/render phases.
    Multithread,
}

impl Workload {
    pub const ALL: [Workload; 4] = [
        Workload::Strings,
        Workload::Table,
        Workload::Buffers,
        Workload::Multithread,
    ];

    pub const fn name(self) -> &'static str {
        match self {
            Workload::Strings => "strings",
            Workload::Table => "table",
            Workload::Buffers => "buffers",
            Workload::Multithread => "multithread",
        }
    }

    pub const fn phases(self) -> &'static [&'static str] {
        match self {
            Workload::Strings => &["build", "format"],
            Workload::Table => &["fill", "rehash", "drain"],
            Workload::Buffers => &["decode", "transform"],
            Workload::Multithread => &["main", "sync", "cache", "render"],
        }
    }

    /// Phases that the regressed variant makes more expensive.
    pub const fn regressed_phases(self) -> &'static [&'static str] {
        match self {
            Workload::Strings => &["format"],
            Workload::Table => &["rehash"],
            Workload::Buffers => &["transform"],
            Workload::Multithread => &["cache"],
        }
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Workload {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Workload::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| WorkloadError::UnknownWorkload(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    Regressed,
}

impl Variant {
    pub const fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Regressed => "regressed",
        }
    }

    fn regressed(self) -> bool {
        self == Variant::Regressed
    }
}

impl FromStr for Variant {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "regressed" => Ok(Variant::Regressed),
            other => Err(WorkloadError::UnknownVariant(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WorkloadSpec {
    pub workload: Workload,
    pub seed: u64,
    pub scale: u32,
    pub variant: Variant,
}

impl WorkloadSpec {
    pub fn new(workload: Workload, seed: u64, scale: u32, variant: Variant) -> Self {
        Self {
            workload,
            seed,
            scale,
            variant,
        }
    }

    pub fn parse(name: &str, seed: u64, scale: u32, variant: &str) -> Result<Self, WorkloadError> {
        Ok(Self::new(name.parse()?, seed, scale, variant.parse()?))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("unknown workload `{0}` (expected one of strings, table, buffers, multithread)")]
    UnknownWorkload(String),
    #[error("unknown variant `{0}` (expected baseline or regressed)")]
    UnknownVariant(String),
    #[error("scale must be at least 1")]
    ZeroScale,
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Marker(#[from] MarkerError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error("a workload thread panicked")]
    ThreadPanicked,
}

/// Runs `spec` inside `session` and returns the session's report.
///
/// Single-threaded workloads record on the calling thread as thread 0;
/// the multithread workload spawns its own threads.
pub fn run_workload<T: ChurnScalar>(
    spec: &WorkloadSpec,
    session: Session<T>,
    meta: ReportMeta,
) -> Result<ChurnReport, WorkloadError> {
    let model = session.model().clone();
    let threads = run_workload_sealed(spec, session)?;
    Ok(ChurnReport::from_threads(&threads, &model, meta)?)
}

/// Like [`run_workload`] but returns the sealed threads, including their
/// final whole-thread counters.
pub fn run_workload_sealed<T: ChurnScalar>(
    spec: &WorkloadSpec,
    session: Session<T>,
) -> Result<Vec<SealedThread<T>>, WorkloadError> {
    if spec.scale == 0 {
        return Err(WorkloadError::ZeroScale);
    }
    match spec.workload {
        Workload::Multithread => multithread(spec, &session)?,
        single => {
            let mut ctx = session.attach(ThreadId(0))?;
            for _ in 0..spec.scale {
                let mut rng = SplitMix64::new(spec.seed);
                match single {
                    Workload::Strings => strings(&mut ctx, &mut rng, spec.variant)?,
                    Workload::Table => table(&mut ctx, &mut rng, spec.variant)?,
                    Workload::Buffers => buffers(&mut ctx, &mut rng, spec.variant)?,
                    Workload::Multithread => unreachable!(),
                }
            }
            ctx.seal();
        }
    }
    Ok(session.finish()?)
}

type Blocks = Vec<Block<'static>>;

fn reserve(n: usize) -> Blocks {
    untracked(|| Vec::with_capacity(n))
}

/// Frees without growing bookkeeping storage.
fn release(blocks: &mut Blocks) {
    for b in blocks.drain(..) {
        b.free();
    }
}

const STRING_ITEMS: usize = 16;

fn strings<T: ChurnScalar>(
    ctx: &mut ThreadContext<T>,
    rng: &mut SplitMix64,
    variant: Variant,
) -> Result<(), WorkloadError> {
    let mut bufs = reserve(STRING_ITEMS);
    ctx.marker("build", |_| {
        for _ in 0..STRING_ITEMS {
            let target = rng.size(16, 496);
            let mut buf = HEAP.malloc_block(16);
            while buf.len() < target {
                let grown = buf.len() * 2;
                buf.resize(grown);
            }
            buf.fill(b'a');
            bufs.push(buf);
        }
    })?;
    ctx.marker("format", |_| {
        for buf in bufs.drain(..) {
            let mut out = HEAP.malloc_block(buf.len() + 32);
            out.fill(b' ');
            if variant.regressed() {
                // Extra intermediate copy per item.
                let mut tmp = HEAP.malloc_block(buf.len() * 2);
                tmp.fill(0);
                tmp.free();
            }
            out.free();
            buf.free();
        }
    })?;
    Ok(())
}

const TABLE_ENTRIES: usize = 48;

fn table<T: ChurnScalar>(
    ctx: &mut ThreadContext<T>,
    rng: &mut SplitMix64,
    variant: Variant,
) -> Result<(), WorkloadError> {
    let mut entries = reserve(TABLE_ENTRIES);
    let mut aux = reserve(2);
    ctx.marker("fill", |_| {
        aux.push(HEAP.calloc_block(16, 8));
        let mut chain = HEAP.malloc_block(8 * 8);
        for i in 0..TABLE_ENTRIES {
            entries.push(HEAP.malloc_block(rng.size(24, 40)));
            if i % 5 == 4 {
                // Erase a random earlier entry and reinsert it.
                let victim = rng.below(entries.len() as u64) as usize;
                let size = rng.size(24, 40);
                let old = std::mem::replace(&mut entries[victim], HEAP.malloc_block(size));
                old.free();
            }
            if i % 8 == 7 {
                let grown = chain.len() + 8 * 8;
                chain.resize(grown);
            }
        }
        aux.push(chain);
    })?;
    ctx.marker("rehash", |_| {
        let buckets = HEAP.calloc_block(64, 8);
        if variant.regressed() {
            // Redundant intermediate table.
            HEAP.calloc_block(32, 8).free();
        }
        std::mem::replace(&mut aux[0], buckets).free();
        let grown = aux[1].len() * 2;
        aux[1].resize(grown);
    })?;
    ctx.marker("drain", |_| {
        release(&mut entries);
        release(&mut aux);
    })?;
    Ok(())
}

const IMAGES: usize = 4;

fn buffers<T: ChurnScalar>(
    ctx: &mut ThreadContext<T>,
    rng: &mut SplitMix64,
    variant: Variant,
) -> Result<(), WorkloadError> {
    let mut images = reserve(IMAGES);
    let mut widths = [0usize; IMAGES];
    ctx.marker("decode", |_| {
        for w in &mut widths {
            *w = rng.size(32, 96);
            let h = rng.size(32, 96);
            let row = HEAP.malloc_block(*w * 4);
            images.push(HEAP.calloc_block(*w * h, 4));
            row.free();
        }
    })?;
    ctx.marker("transform", |_| {
        for (img, w) in images.drain(..).zip(widths) {
            let mut out = HEAP.malloc_block(img.len());
            out.fill(0x7f);
            if variant.regressed() {
                // Extra full-size scratch copy.
                let mut scratch = HEAP.malloc_block(img.len());
                scratch.fill(0);
                scratch.free();
            }
            // Pad each row by one pixel.
            let padded = out.len() + (out.len() / (w * 4)) * 4;
            out.resize(padded);
            img.free();
            out.free();
        }
    })?;
    Ok(())
}

/// Per-thread generator seeds derived from the workload seed.
fn thread_seed(seed: u64, thread: u32) -> u64 {
    SplitMix64::new(seed ^ u64::from(thread).wrapping_mul(0xD1B5_4A32_D192_ED03)).next_u64()
}

fn churn_burst(rng: &mut SplitMix64, count: usize, lo: usize, span: usize) {
    for _ in 0..count {
        let mut b = HEAP.malloc_block(rng.size(lo, span));
        if rng.below(4) == 0 {
            let grown = b.len() * 2;
            b.resize(grown);
        }
        b.free();
    }
}

fn multithread<T: ChurnScalar>(
    spec: &WorkloadSpec,
    session: &Session<T>,
) -> Result<(), WorkloadError> {
    type Body<T> = fn(&mut ThreadContext<T>, &mut SplitMix64, Variant) -> Result<(), MarkerError>;

    // T0: the main phase.
    fn main_thread<T: ChurnScalar>(
        ctx: &mut ThreadContext<T>,
        rng: &mut SplitMix64,
        _: Variant,
    ) -> Result<(), MarkerError> {
        ctx.marker("main", |_| churn_burst(rng, 24, 64, 960))
    }

    // T1: data sync and caching overlap.
    fn sync_cache<T: ChurnScalar>(
        ctx: &mut ThreadContext<T>,
        rng: &mut SplitMix64,
        v: Variant,
    ) -> Result<(), MarkerError> {
        let sync = ctx.begin_marker("sync")?;
        churn_burst(rng, 12, 128, 1920);
        let cache = ctx.begin_marker("cache")?;
        let entry = HEAP.calloc_block(32, 16);
        churn_burst(rng, 8, 32, 224);
        ctx.end_marker(sync)?;
        churn_burst(rng, 8, 32, 224);
        if v.regressed() {
            // Duplicate cache entries.
            churn_burst(rng, 6, 256, 768);
        }
        entry.free();
        ctx.end_marker(cache)?;
        Ok(())
    }

    // T2: rendering, with a nested layout pass.
    fn render<T: ChurnScalar>(
        ctx: &mut ThreadContext<T>,
        rng: &mut SplitMix64,
        _: Variant,
    ) -> Result<(), MarkerError> {
        let render = ctx.begin_marker("render")?;
        let frame = HEAP.calloc_block(256, 64);
        churn_burst(rng, 16, 64, 448);
        frame.free();
        ctx.end_marker(render)?;
        Ok(())
    }

    // T3: another sync that overlaps a render.
    fn sync_render<T: ChurnScalar>(
        ctx: &mut ThreadContext<T>,
        rng: &mut SplitMix64,
        _: Variant,
    ) -> Result<(), MarkerError> {
        let sync = ctx.begin_marker("sync")?;
        churn_burst(rng, 6, 128, 1920);
        let render = ctx.begin_marker("render")?;
        churn_burst(rng, 6, 64, 448);
        ctx.end_marker(sync)?;
        churn_burst(rng, 4, 64, 448);
        ctx.end_marker(render)?;
        Ok(())
    }

    let bodies: [Body<T>; 4] = [main_thread, sync_cache, render, sync_render];
    let results: Vec<Result<(), WorkloadError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = bodies
            .iter()
            .enumerate()
            .map(|(i, body)| {
                let body = *body;
                scope.spawn(move || -> Result<(), WorkloadError> {
                    let t = i as u32;
                    let mut ctx = session.attach(ThreadId(t))?;
                    for _ in 0..spec.scale {
                        let mut rng = SplitMix64::new(thread_seed(spec.seed, t));
                        body(&mut ctx, &mut rng, spec.variant)?;
                    }
                    ctx.seal();
                    Ok(())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or(Err(WorkloadError::ThreadPanicked)))
            .collect()
    });
    results.into_iter().collect()
}

//! Allocator churn profiling.
//!
//! Intercepts the four allocator entry points per thread, charges each call
//! `weight(kind) * log2(bytes)`, attributes the cost to named marker spans,
//! and produces canonical per-build reports that can be diffed to find and
//! rank regressions.
//!
//! ```
//! use churnscope::{default_cost_model, ChurnAllocator, RecorderConfig, ReportMeta, Session, ThreadId};
//!
//! let heap = ChurnAllocator::system();
//! let session = Session::new(default_cost_model::<f64>(), RecorderConfig::default()).unwrap();
//! let mut ctx = session.attach(ThreadId(0)).unwrap();
//! ctx.marker("startup", |_| heap.malloc_block(1024).free()).unwrap();
//! ctx.seal();
//!
//! let model = session.model().clone();
//! let threads = session.finish().unwrap();
//! let report = churnscope::ChurnReport::from_threads(&threads, &model, ReportMeta::at_epoch("dev", 0)).unwrap();
//! assert_eq!(report.merged["startup"].cost, 20.0);
//! ```

pub mod aggregation;
pub mod cost_model;
pub mod event_capture;
pub mod markers;
pub mod report_io;
pub mod scalar;
pub mod session;
pub mod workloads;

pub use aggregation::{churn_between, merge_threads, span_churn, AggregationError};
pub use cost_model::{
    default_cost_model, event_cost, validate_cost_model, AllocFnKind, CostModelError,
    ModelViolation,
};
pub use event_capture::{
    untracked, AddrToken, AllocEvent, Anomalies, Block, ChurnAllocator, EventSink, RecorderConfig,
    ReentrancyGuard, ThreadId,
};
pub use markers::{MarkerError, SpanHandle, SpanId};
pub use report_io::{
    diff_reports, parse_report, parse_verdict, rank_regressions, rank_with, serialize_report,
    serialize_verdict, ChurnDelta, ChurnReport, DeltaStatus, DiffError, RankKey, RankOptions,
    RegressionVerdict, ReportError, ReportMeta, Thresholds, TieBreak,
};
pub use scalar::ChurnScalar;
pub use session::{SealedThread, SessionError};
pub use workloads::{
    run_workload, run_workload_sealed, Variant, Workload, WorkloadError, WorkloadSpec,
};

/// Weight table over `f64`.
pub type CostModel = cost_model::CostModel<f64>;
pub type CostModelF32 = cost_model::CostModel<f32>;
pub type ThreadRecorder = event_capture::ThreadRecorder<f64>;
pub type ThreadRecorderF32 = event_capture::ThreadRecorder<f32>;
pub type CounterSnapshot = event_capture::CounterSnapshot<f64>;
pub type MarkerSpan = markers::MarkerSpan<f64>;
pub type MarkerBook = markers::MarkerBook<f64>;
pub type MarkerChurn = aggregation::MarkerChurn<f64>;
pub type Session = session::Session<f64>;
pub type SessionF32 = session::Session<f32>;
pub type ThreadContext = session::ThreadContext<f64>;

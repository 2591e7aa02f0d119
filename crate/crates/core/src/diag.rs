//! Process-wide diagnostic stream for failures that have no registered
//! handler. Every report goes to stderr and through `log`, and bumps a
//! counter that tests can observe.

use std::sync::atomic::{AtomicU64, Ordering};

static REPORTED: AtomicU64 = AtomicU64::new(0);

/// Emit one diagnostic line. `detail` should never be empty; an empty
/// detail is replaced with a placeholder so the line still says something.
pub fn report(source: &str, kind: &str, detail: &str) {
    let detail = if detail.trim().is_empty() {
        "(no detail supplied)"
    } else {
        detail
    };
    REPORTED.fetch_add(1, Ordering::SeqCst);
    log::error!("{source}: {kind}: {detail}");
    eprintln!("edugrid[{source}] {kind}: {detail}");
}

/// Number of diagnostics reported since process start.
pub fn reported_count() -> u64 {
    REPORTED.load(Ordering::SeqCst)
}

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crate::demand::{Demand, Destination};
use crate::diag;
use crate::store::{StoreApi, StoreError};

use super::executor::{
    decode_error_record, error_record, ExecutorRegistry, StageInput, StagePayload,
};

pub(crate) struct WorkerCtx {
    pub tier_id: String,
    pub store: Arc<dyn StoreApi>,
    pub executors: ExecutorRegistry,
    pub working: Arc<AtomicBool>,
    pub killed: Arc<AtomicBool>,
    pub poll_ms: u64,
    pub input_wait_ms: u64,
}

/// Take, execute, commit; until `working` clears. A set `killed` flag
/// abandons the demand in hand without committing it.
pub(crate) fn run(ctx: WorkerCtx) {
    let mut last_error: Option<String> = None;
    while ctx.working.load(Ordering::SeqCst) && !ctx.killed.load(Ordering::SeqCst) {
        match ctx
            .store
            .take_pending(&ctx.tier_id, &Destination::Dwt, ctx.poll_ms)
        {
            Ok(d) => {
                last_error = None;
                if !execute(&ctx, d) {
                    return;
                }
            }
            Err(StoreError::TimeoutExpired) => {}
            Err(e) => {
                if !ctx.working.load(Ordering::SeqCst) {
                    break;
                }
                let text = e.to_string();
                if last_error.as_deref() != Some(text.as_str()) {
                    diag::report(&ctx.tier_id, "take_pending", &text);
                    last_error = Some(text);
                }
                thread::sleep(Duration::from_millis(ctx.poll_ms.max(1)));
            }
        }
    }
}

fn execute(ctx: &WorkerCtx, d: Demand) -> bool {
    let sig = d.signature();
    let outcome = run_stage(ctx, &d);
    if ctx.killed.load(Ordering::SeqCst) {
        return false;
    }
    let result = outcome.unwrap_or_else(|detail| {
        diag::report(
            &ctx.tier_id,
            "stage failure",
            &format!("demand {sig}: {detail}"),
        );
        error_record(&detail)
    });
    if let Err(e) = ctx.store.put_result(sig, result) {
        diag::report(&ctx.tier_id, "put_result", &format!("demand {sig}: {e}"));
    }
    true
}

fn run_stage(ctx: &WorkerCtx, d: &Demand) -> Result<Vec<u8>, String> {
    let stage = d
        .context()
        .get("stage")
        .ok_or("demand has no stage dimension")?;
    if !ctx.executors.contains(stage) {
        return Err(format!("unknown stage {stage:?}"));
    }
    // payloads that are not stage payloads go to the executor untouched
    let (params, input) = match StagePayload::from_bytes(d.payload()) {
        Err(_) => (Vec::new(), d.payload().to_vec()),
        Ok(StagePayload {
            params,
            input: StageInput::Inline(bytes),
        }) => (params, bytes),
        Ok(StagePayload {
            params,
            input: StageInput::Ref(pred),
        }) => {
            let bytes = ctx
                .store
                .get_result(pred, ctx.input_wait_ms)
                .map_err(|e| format!("input {pred} unavailable: {e}"))?;
            if let Some(upstream) = decode_error_record(&bytes) {
                return Err(format!("input {pred} failed: {upstream}"));
            }
            (params, bytes)
        }
    };
    ctx.executors
        .invoke(stage, &params, &input)
        .unwrap_or_else(|| Err(format!("unknown stage {stage:?}")))
}

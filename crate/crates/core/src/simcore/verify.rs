//! Independent consistency checks over a finished run. They only look at the
//! trace and the final request states, never at engine internals.

use super::{SimOutcome, TraceKind, TraceRecord, NUM_WAVES};

/// The FFN starts a wave only after all `r` attention instances of that wave
/// have delivered their activations, and never before the last arrival.
pub fn check_barrier(trace: &[TraceRecord], r: u32) -> Result<(), String> {
    let mut arrived = [0u32; NUM_WAVES];
    let mut last_arrival = [f64::NEG_INFINITY; NUM_WAVES];
    for rec in trace {
        let w = rec.wave as usize;
        match rec.kind {
            TraceKind::A2fArrival => {
                arrived[w] += 1;
                last_arrival[w] = last_arrival[w].max(rec.time);
            }
            TraceKind::FfnStart => {
                if arrived[w] != r {
                    return Err(format!(
                        "FFN started wave {w} at {} with {}/{r} arrivals",
                        rec.time, arrived[w]
                    ));
                }
                if rec.time < last_arrival[w] {
                    return Err(format!("FFN started wave {w} at {} before its last arrival", rec.time));
                }
                arrived[w] = 0;
            }
            _ => {}
        }
    }
    Ok(())
}

/// No attention instance runs two steps at once, the FFN runs one wave at a
/// time, and a wave is never on an attention instance and the FFN together.
pub fn check_mutual_exclusion(trace: &[TraceRecord], r: u32) -> Result<(), String> {
    let mut instance_busy: Vec<Option<u8>> = vec![None; r as usize];
    let mut ffn_busy: Option<u8> = None;
    for rec in trace {
        match (rec.kind, rec.instance) {
            (TraceKind::AttentionStart, Some(i)) => {
                let slot = &mut instance_busy[i as usize];
                if let Some(other) = *slot {
                    return Err(format!(
                        "instance {i} started wave {} at {} while running wave {other}",
                        rec.wave, rec.time
                    ));
                }
                if ffn_busy == Some(rec.wave) {
                    return Err(format!("wave {} on attention and FFN at {}", rec.wave, rec.time));
                }
                *slot = Some(rec.wave);
            }
            (TraceKind::AttentionEnd, Some(i)) => {
                if instance_busy[i as usize] != Some(rec.wave) {
                    return Err(format!("instance {i} ended wave {} it was not running", rec.wave));
                }
                instance_busy[i as usize] = None;
            }
            (TraceKind::FfnStart, None) => {
                if let Some(other) = ffn_busy {
                    return Err(format!("FFN started wave {} while serving wave {other}", rec.wave));
                }
                if instance_busy.contains(&Some(rec.wave)) {
                    return Err(format!("wave {} on FFN while still on attention", rec.wave));
                }
                ffn_busy = Some(rec.wave);
            }
            (TraceKind::FfnEnd, None) => {
                if ffn_busy != Some(rec.wave) {
                    return Err(format!("FFN ended wave {} it was not serving", rec.wave));
                }
                ffn_busy = None;
            }
            _ => {}
        }
    }
    Ok(())
}

/// Tokens emitted equal the per-request sum, no request exceeds its budget,
/// and completed requests emitted exactly their budget.
pub fn check_token_conservation(outcome: &SimOutcome) -> Result<(), String> {
    let mut sum = 0u64;
    for req in &outcome.requests {
        sum += req.tokens_emitted as u64;
        if req.tokens_emitted > req.decode_budget {
            return Err(format!("request {} emitted {} > budget {}", req.id, req.tokens_emitted, req.decode_budget));
        }
        if req.completion_time.is_some() != (req.tokens_emitted == req.decode_budget) {
            return Err(format!("request {} completion state disagrees with its tokens", req.id));
        }
    }
    if sum != outcome.tokens_emitted {
        return Err(format!("per-request tokens {sum} != bundle total {}", outcome.tokens_emitted));
    }
    let logged: u64 = outcome.completions.iter().map(|c| c.tokens_emitted as u64).sum();
    let done: u64 = outcome
        .requests
        .iter()
        .filter(|r| r.completion_time.is_some())
        .map(|r| r.tokens_emitted as u64)
        .sum();
    if logged != done {
        return Err(format!("completion log holds {logged} tokens, completed requests {done}"));
    }
    Ok(())
}

/// Requests are dispatched in buffer order: dispatch times never decrease
/// with the arrival index and undispatched requests form a suffix.
pub fn check_fcfs(outcome: &SimOutcome) -> Result<(), String> {
    let mut last = f64::NEG_INFINITY;
    let mut seen_pending = false;
    for req in &outcome.requests {
        match req.dispatch_time {
            Some(t) if seen_pending => {
                return Err(format!("request {} dispatched at {t} after a pending predecessor", req.id))
            }
            Some(t) if t < last => {
                return Err(format!("request {} dispatched at {t}, earlier than predecessor at {last}", req.id))
            }
            Some(t) => last = t,
            None => seen_pending = true,
        }
    }
    Ok(())
}

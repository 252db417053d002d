//! Monotonic-alignment dynamic program behind a C ABI.
//!
//! Drop-in accelerated version of the Python reference aligner: given an
//! S x T log-likelihood lattice it returns, per token, how many consecutive
//! frames the best monotone surjective alignment assigns to it. Decisions
//! must match the reference bit for bit, so the recurrence runs in f64 over
//! f32-widened entries with the exact same operation order, the same
//! -1.0e30 unreachable sentinel, and the same backtrack rule: move to the
//! previous token only when its accumulated score is strictly greater.

/// Sentinel for unreachable cells; matches the reference implementation.
const NEG_INF: f64 = -1.0e30;

#[derive(Debug, PartialEq, Eq)]
pub enum AlignError {
    /// S < 1, T < S, or buffer lengths that disagree with the dims.
    BadShape,
}

/// Fill `out` with per-token frame counts for the best alignment.
///
/// `lattice` is row-major S x T: entry `[s * t_count + t]` scores frame `t`
/// under token `s`. Every token receives at least one frame and the counts
/// sum to `t_count`.
pub fn align(
    lattice: &[f32],
    s_count: usize,
    t_count: usize,
    out: &mut [i32],
) -> Result<(), AlignError> {
    if s_count < 1 || t_count < s_count {
        return Err(AlignError::BadShape);
    }
    if lattice.len() != s_count * t_count || out.len() != s_count {
        return Err(AlignError::BadShape);
    }

    // transpose to frame-major so the inner token loop walks contiguous
    // memory; the DP table uses the same layout
    let mut lat_t = vec![0.0_f32; s_count * t_count];
    for s in 0..s_count {
        for t in 0..t_count {
            lat_t[t * s_count + s] = lattice[s * t_count + t];
        }
    }

    let mut q = vec![NEG_INF; s_count * t_count];
    q[0] = lat_t[0] as f64;
    for t in 1..t_count {
        let (done, rest) = q.split_at_mut(t * s_count);
        let prev = &done[(t - 1) * s_count..];
        let cur = &mut rest[..s_count];
        let lcol = &lat_t[t * s_count..(t + 1) * s_count];
        // s = 0 keeps the sentinel comparison so unreachable arithmetic
        // matches the reference exactly
        let stay = prev[0];
        cur[0] = if NEG_INF > stay { NEG_INF } else { stay } + lcol[0] as f64;
        for s in 1..s_count {
            let stay = prev[s];
            let advance = prev[s - 1];
            let best = if advance > stay { advance } else { stay };
            cur[s] = best + lcol[s] as f64;
        }
    }

    for d in out.iter_mut() {
        *d = 0;
    }
    let mut s = s_count - 1;
    out[s] += 1; // the final frame always belongs to the final token
    for t in (1..t_count).rev() {
        let prev = &q[(t - 1) * s_count..t * s_count];
        if s > 0 && prev[s - 1] > prev[s] {
            s -= 1;
        }
        out[s] += 1;
    }
    Ok(())
}

/// C entry point: `align_lattice(ptr, S, T, out_durations)`, 0 on success.
///
/// Error codes: 1 for null pointers or invalid dims, 2 if the computation
/// panicked (never expected; kept so a fault cannot unwind across the FFI
/// boundary).
///
/// # Safety
/// `ptr` must point to `s * t` readable f32 values and `out` to `s`
/// writable i32 values.
#[no_mangle]
pub unsafe extern "C" fn align_lattice(
    ptr: *const f32,
    s: i32,
    t: i32,
    out: *mut i32,
) -> i32 {
    if ptr.is_null() || out.is_null() || s < 1 || t < s {
        return 1;
    }
    let s_count = s as usize;
    let t_count = t as usize;
    let result = std::panic::catch_unwind(|| {
        let lattice = std::slice::from_raw_parts(ptr, s_count * t_count);
        let durations = std::slice::from_raw_parts_mut(out, s_count);
        align(lattice, s_count, t_count, durations)
    });
    match result {
        Ok(Ok(())) => 0,
        Ok(Err(AlignError::BadShape)) => 1,
        Err(_) => 2,
    }
}

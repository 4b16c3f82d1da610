//! Slow, obviously-correct reference implementations.

use std::collections::HashMap;

use sugd_core::unlearn::{plan_all, Role};

/// Counts every (member, non-member) pair; a member loss below the
/// non-member loss wins, ties count one half.
pub fn brute_force_auc(members: &[f64], nonmembers: &[f64]) -> f64 {
    let mut halves = 0u64;
    for &m in members {
        for &n in nonmembers {
            halves += if m < n {
                2
            } else if m == n {
                1
            } else {
                0
            };
        }
    }
    halves as f64 / 2.0 / (members.len() * nonmembers.len()) as f64
}

/// LCS by memoized recursion on suffixes.
pub fn lcs_recursive(a: &[u32], b: &[u32]) -> usize {
    fn go(
        a: &[u32],
        b: &[u32],
        i: usize,
        j: usize,
        memo: &mut HashMap<(usize, usize), usize>,
    ) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// F1 of LCS precision and recall written in counts: 2l / (|r| + |c|).
pub fn rouge_l_oracle(reference: &[u32], candidate: &[u32]) -> f64 {
    let l = lcs_recursive(reference, candidate);
    if l == 0 {
        0.0
    } else {
        (2 * l) as f64 / (reference.len() + candidate.len()) as f64
    }
}

/// The full interleaved stream, simulated directly: each forget index, in
/// order, followed by the next `n` retain indices read cyclically from a cursor
/// that is never reset. Chunk boundaries do not affect the stream itself.
pub fn expected_stream(forget_len: usize, retain_len: usize, n: usize) -> Vec<(usize, Role)> {
    let mut out = Vec::new();
    let mut cursor = 0;
    for f in 0..forget_len {
        out.push((f, Role::Forget));
        for _ in 0..n {
            out.push((cursor, Role::Retain));
            cursor = (cursor + 1) % retain_len;
        }
    }
    out
}

/// The concatenated chunk streams equal the directly simulated stream, every
/// group is one forget index followed by `n` retain indices, and each chunk
/// picks up the cursor where the previous one left it.
pub fn check_streams(forget: usize, retain: usize, chunk: usize, n: usize) -> Result<(), String> {
    let plans = plan_all(forget, retain, chunk, n).map_err(|e| e.to_string())?;
    let joined: Vec<(usize, Role)> = plans
        .iter()
        .flat_map(|p| p.stream.iter().copied())
        .collect();
    if joined != expected_stream(forget, retain, n) {
        return Err("stream differs from simulation".into());
    }
    let mut cursor = 0;
    let mut next_forget = 0;
    for (i, p) in plans.iter().enumerate() {
        if p.chunk_index != i || p.retain_cursor_in != cursor {
            return Err(format!(
                "chunk {i}: cursor {} but expected {cursor}",
                p.retain_cursor_in
            ));
        }
        let size = if i + 1 == plans.len() {
            forget - chunk * i
        } else {
            chunk
        };
        if p.stream.len() != size * (n + 1) {
            return Err(format!("chunk {i}: stream length {}", p.stream.len()));
        }
        for g in p.groups() {
            if g.len() != n + 1 || g[0] != (next_forget, Role::Forget) {
                return Err(format!("chunk {i}: bad group head {:?}", g[0]));
            }
            next_forget += 1;
            for &(r, role) in &g[1..] {
                if role != Role::Retain || r != cursor {
                    return Err(format!("chunk {i}: retain {r} where cursor is {cursor}"));
                }
                cursor = (cursor + 1) % retain;
            }
        }
        if p.retain_cursor_out != cursor {
            return Err(format!(
                "chunk {i}: cursor out {} vs {cursor}",
                p.retain_cursor_out
            ));
        }
    }
    Ok(())
}

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Forget,
    Retain,
}

/// Splits `len` items into order-preserving chunks of `chunk_size`, the last
/// one possibly shorter.
pub fn partition_forget(len: usize, chunk_size: usize) -> Result<Vec<Range<usize>>> {
    if len == 0 {
        return Err(Error::Invalid(
            "cannot partition an empty forget set".into(),
        ));
    }
    if chunk_size == 0 {
        return Err(Error::Config("chunk size must be >= 1".into()));
    }
    Ok((0..len.div_ceil(chunk_size))
        .map(|i| i * chunk_size..((i + 1) * chunk_size).min(len))
        .collect())
}

/// Interleaved training stream for one chunk. Entries are indices into the
/// forget set (role `Forget`) or the retain set (role `Retain`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub chunk_index: usize,
    pub stream: Vec<(usize, Role)>,
    pub retain_cursor_in: usize,
    pub retain_cursor_out: usize,
    pub n: usize,
}

impl ChunkPlan {
    /// The `(f, r×n)` groups in stream order, each one optimization step.
    pub fn groups(&self) -> impl Iterator<Item = &[(usize, Role)]> {
        self.stream.chunks(self.n + 1)
    }
}

/// Follows every forget index of `chunk` with the next `n` retain indices,
/// read cyclically from `cursor`.
pub fn build_chunk_plan(
    chunk_index: usize,
    chunk: Range<usize>,
    retain_len: usize,
    cursor: usize,
    n: usize,
) -> Result<ChunkPlan> {
    if retain_len == 0 {
        return Err(Error::Invalid("retain set is empty".into()));
    }
    if cursor >= retain_len {
        return Err(Error::Invalid(format!(
            "retain cursor {cursor} outside 0..{retain_len}"
        )));
    }
    if n == 0 || chunk.is_empty() {
        return Err(Error::Invalid(
            "chunk plan would contain no retain samples".into(),
        ));
    }
    let mut stream = Vec::with_capacity(chunk.len() * (n + 1));
    let mut c = cursor;
    for f in chunk {
        stream.push((f, Role::Forget));
        for _ in 0..n {
            stream.push((c, Role::Retain));
            c = (c + 1) % retain_len;
        }
    }
    Ok(ChunkPlan {
        chunk_index,
        stream,
        retain_cursor_in: cursor,
        retain_cursor_out: c,
        n,
    })
}

/// Plans for every chunk, carrying the retain cursor across chunk boundaries.
pub fn plan_all(
    forget_len: usize,
    retain_len: usize,
    chunk_size: usize,
    n: usize,
) -> Result<Vec<ChunkPlan>> {
    let mut cursor = 0;
    let mut plans = Vec::new();
    for (i, chunk) in partition_forget(forget_len, chunk_size)?
        .into_iter()
        .enumerate()
    {
        let plan = build_chunk_plan(i, chunk, retain_len, cursor, n)?;
        cursor = plan.retain_cursor_out;
        plans.push(plan);
    }
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sizes(len: usize, chunk: usize) -> Vec<usize> {
        partition_forget(len, chunk)
            .unwrap()
            .iter()
            .map(|r| r.len())
            .collect()
    }

    #[test]
    fn partition_examples() {
        assert_eq!(sizes(10, 4), vec![4, 4, 2]);
        let big = sizes(1112, 32);
        assert_eq!(big.len(), 35);
        assert_eq!(*big.last().unwrap(), 24);
        assert_eq!(sizes(7, 7), vec![7]);
        assert_eq!(sizes(7, 100), vec![7]);
        assert!(partition_forget(0, 4).is_err());
        assert!(partition_forget(4, 0).is_err());
    }

    #[test]
    fn trace_with_wraparound() {
        let plan = build_chunk_plan(0, 0..2, 5, 3, 2).unwrap();
        use Role::*;
        assert_eq!(
            plan.stream,
            vec![
                (0, Forget),
                (3, Retain),
                (4, Retain),
                (1, Forget),
                (0, Retain),
                (1, Retain)
            ]
        );
        assert_eq!(plan.retain_cursor_out, 2);
    }

    #[test]
    fn repetition_across_wrap() {
        let plan = build_chunk_plan(0, 0..1, 3, 2, 4).unwrap();
        let retain: Vec<usize> = plan
            .stream
            .iter()
            .filter(|e| e.1 == Role::Retain)
            .map(|e| e.0)
            .collect();
        assert_eq!(retain, vec![2, 0, 1, 2]);
    }

    #[test]
    fn ratio_one_to_seven() {
        let plan = build_chunk_plan(0, 0..32, 1000, 0, 7).unwrap();
        assert_eq!(plan.stream.len(), 256);
        assert_eq!(
            plan.stream.iter().filter(|e| e.1 == Role::Retain).count(),
            224
        );
        assert_eq!(plan.groups().count(), 32);
    }

    #[test]
    fn invalid_plans() {
        assert!(build_chunk_plan(0, 0..2, 0, 0, 1).is_err());
        assert!(build_chunk_plan(0, 0..2, 3, 3, 1).is_err());
        assert!(build_chunk_plan(0, 0..2, 3, 0, 0).is_err());
        assert!(build_chunk_plan(0, 2..2, 3, 0, 1).is_err());
    }

    proptest! {
        #[test]
        fn partition_covers_in_order(len in 1usize..300, chunk in 1usize..64) {
            let parts = partition_forget(len, chunk).unwrap();
            prop_assert_eq!(parts.len(), len.div_ceil(chunk));
            let flat: Vec<usize> = parts.iter().flat_map(|r| r.clone()).collect();
            prop_assert_eq!(flat, (0..len).collect::<Vec<_>>());
            for r in &parts[..parts.len() - 1] {
                prop_assert_eq!(r.len(), chunk);
            }
        }
    }
}

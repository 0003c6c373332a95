//! Deterministic grouped splits keyed on a hash of the task id, so that the
//! lines of one program always land on the same side.

use sha2::{Digest, Sha256};

use crate::features::RowMeta;

fn task_hash(task_id: &str) -> u64 {
    let digest = Sha256::digest(task_id.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("32-byte digest"))
}

/// True for the 20% of tasks held out for testing.
pub fn is_test_task(task_id: &str) -> bool {
    task_hash(task_id) % 5 == 0
}

/// Fold index in `0..k` for grouped cross-validation.
pub fn fold_of(task_id: &str, k: usize) -> usize {
    // decorrelate from the train/test split, which uses the same hash mod 5
    (task_hash(task_id).rotate_left(17) % k as u64) as usize
}

/// `(train, test)` row indices, each in input order.
pub fn train_test_indices(meta: &[RowMeta]) -> (Vec<usize>, Vec<usize>) {
    (0..meta.len()).partition(|&i| !is_test_task(&meta[i].task_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_close_to_one_fifth() {
        let n = 10_000;
        let held = (0..n).filter(|i| is_test_task(&format!("task-{i}"))).count();
        assert!((held as f64 / n as f64 - 0.2).abs() < 0.02);
    }

    #[test]
    fn folds_cover_range() {
        let mut seen = [0usize; 5];
        for i in 0..1000 {
            seen[fold_of(&format!("t{i}"), 5)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 150));
    }
}

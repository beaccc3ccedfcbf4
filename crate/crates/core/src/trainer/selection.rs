use log::warn;

use crate::error::{Error, Result};

/// True iff the latest value strictly exceeds the one before it.
pub fn early_stop_check(l_d: &[f64]) -> bool {
    match l_d {
        [.., prev, last] => last > prev,
        _ => false,
    }
}

/// Index of the second-lowest value, with ties ranked so the later entry
/// counts as lower. A single entry is returned as is.
pub fn select_checkpoint_offline(l_d: &[f64]) -> Result<usize> {
    match l_d.len() {
        0 => Err(Error::EmptyBatch("checkpoint selection")),
        1 => {
            warn!("only one checkpoint to select from");
            Ok(0)
        }
        _ => {
            let mut order: Vec<usize> = (0..l_d.len()).collect();
            order.sort_by(|&a, &b| l_d[a].total_cmp(&l_d[b]).then(b.cmp(&a)));
            Ok(order[1])
        }
    }
}

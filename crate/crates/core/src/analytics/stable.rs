use std::collections::BTreeMap;

use super::AnalyticsError;
use crate::addr::Address128;
use crate::probe::ResponseMatrix;

/// Targets that answered some scan at every one of their probed offsets
/// up to `window_secs`, sorted by canonical text.
///
/// A target with no probed offset inside the window has nothing to fail
/// and is kept, which makes the result shrink monotonically as the window
/// grows.
pub fn stable_core(matrix: &ResponseMatrix, window_secs: u64) -> Result<Vec<Address128>, AnalyticsError> {
    match matrix.max_offset() {
        Some(m) if m >= window_secs => {}
        max_offset => {
            return Err(AnalyticsError::WindowExceedsMatrix {
                window: window_secs,
                max_offset,
            })
        }
    }
    // target -> offset -> any responsive
    let mut seen: BTreeMap<Address128, BTreeMap<u64, bool>> = BTreeMap::new();
    for (k, c) in matrix.cells() {
        let per = seen.entry(k.target).or_default();
        if k.offset <= window_secs {
            *per.entry(k.offset).or_default() |= c.responsive();
        }
    }
    let mut out: Vec<(String, Address128)> = seen
        .into_iter()
        .filter(|(_, offs)| offs.values().all(|ok| *ok))
        .map(|(a, _)| (a.canonical_text(), a))
        .collect();
    out.sort();
    Ok(out.into_iter().map(|(_, a)| a).collect())
}

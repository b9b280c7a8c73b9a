use std::collections::VecDeque;

/// Sliding-window send limiter: at most `limit` sends in any window of
/// `window_ms` milliseconds.
#[derive(Debug, Clone)]
pub struct SendWindow {
    limit: usize,
    window_ms: i64,
    recent: VecDeque<i64>,
}

impl SendWindow {
    pub fn new(limit: u32, window_ms: i64) -> Self {
        SendWindow {
            limit: limit.max(1) as usize,
            window_ms,
            recent: VecDeque::with_capacity(limit.max(1) as usize + 1),
        }
    }

    pub fn per_second(limit: u32) -> Self {
        SendWindow::new(limit, 1000)
    }

    /// Earliest time at or after `earliest` when one more send is allowed.
    pub fn next_slot(&self, earliest: i64) -> i64 {
        match self.recent.front() {
            Some(&oldest) if self.recent.len() == self.limit => earliest.max(oldest + self.window_ms),
            _ => earliest,
        }
    }

    pub fn record(&mut self, at: i64) {
        self.recent.push_back(at);
        if self.recent.len() > self.limit {
            self.recent.pop_front();
        }
    }
}

/// Largest number of sends falling in any half-open window of `window_ms`.
pub fn max_in_window(sorted_sends: &[i64], window_ms: i64) -> usize {
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..sorted_sends.len() {
        while sorted_sends[hi] - sorted_sends[lo] >= window_ms {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_is_spread() {
        let mut w = SendWindow::per_second(3);
        let mut sends = Vec::new();
        for _ in 0..10 {
            let t = w.next_slot(0);
            w.record(t);
            sends.push(t);
        }
        assert_eq!(sends, vec![0, 0, 0, 1000, 1000, 1000, 2000, 2000, 2000, 3000]);
        assert_eq!(max_in_window(&sends, 1000), 3);
    }

    #[test]
    fn window_oracle() {
        let sends = [0, 10, 999, 1000, 1500, 1999];
        // brute force over every window start at a send
        let brute = sends
            .iter()
            .map(|s| sends.iter().filter(|t| **t >= *s && **t < s + 1000).count())
            .max()
            .unwrap();
        assert_eq!(max_in_window(&sends, 1000), brute);
    }
}

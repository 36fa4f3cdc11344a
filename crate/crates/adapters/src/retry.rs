//! Retry policy for transport failures and the process-wide network call
//! counter.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use predex::{Error, Result};

static NETWORK_CALLS: AtomicUsize = AtomicUsize::new(0);

/// Outgoing HTTP requests made by this process so far.
pub fn network_calls() -> usize {
    NETWORK_CALLS.load(Ordering::SeqCst)
}

pub(crate) fn count_network_call() {
    NETWORK_CALLS.fetch_add(1, Ordering::SeqCst);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay: Duration::from_millis(200) }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy { max_retries: 0, base_delay: Duration::ZERO }
    }

    /// Run `f`, retrying retryable failures with exponential backoff.
    pub fn run<T>(&self, mut f: impl FnMut() -> Result<T>) -> Result<T> {
        let mut attempt = 0;
        loop {
            match f() {
                Err(Error::Retryable(msg)) if attempt < self.max_retries => {
                    let wait = self.base_delay * 2u32.saturating_pow(attempt as u32);
                    log::warn!("transport failure ({msg}), retry {} in {wait:?}", attempt + 1);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// First `n` characters of a payload, for error messages.
pub(crate) fn excerpt(s: &str) -> String {
    const N: usize = 200;
    match s.char_indices().nth(N) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

//! Exponential backoff for the HTTP backends.

use std::thread;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Delay before the first retry; doubled for each following one.
    pub base_delay: Duration,
}

impl RetryPolicy {
    pub const fn new(max_retries: u32, base_delay: Duration) -> Self {
        Self {
            max_retries,
            base_delay,
        }
    }

    pub fn delay_for(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(20))
    }

    /// Runs `op` until it succeeds, returns a non-retryable error, or the
    /// retry budget is spent. `op` receives the zero-based attempt number.
    pub fn run<T, E>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, E>,
        retryable: impl Fn(&E) -> bool,
    ) -> Result<T, E> {
        let mut attempt = 0;
        loop {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if attempt < self.max_retries && retryable(&e) => {
                    thread::sleep(self.delay_for(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delays_double() {
        let p = RetryPolicy::new(3, Duration::from_millis(500));
        assert_eq!(p.delay_for(0), Duration::from_millis(500));
        assert_eq!(p.delay_for(1), Duration::from_millis(1000));
        assert_eq!(p.delay_for(2), Duration::from_millis(2000));
    }

    #[test]
    fn gives_up_after_budget() {
        let p = RetryPolicy::new(3, Duration::ZERO);
        let mut calls = 0;
        let r: Result<(), &str> = p.run(
            |_| {
                calls += 1;
                Err("down")
            },
            |_| true,
        );
        assert_eq!(r, Err("down"));
        assert_eq!(calls, 4);
    }

    #[test]
    fn stops_on_fatal_error() {
        let p = RetryPolicy::new(3, Duration::ZERO);
        let mut calls = 0;
        let r: Result<(), &str> = p.run(
            |_| {
                calls += 1;
                Err("fatal")
            },
            |_| false,
        );
        assert!(r.is_err());
        assert_eq!(calls, 1);
    }

    #[test]
    fn recovers() {
        let p = RetryPolicy::new(3, Duration::ZERO);
        let r: Result<u32, &str> = p.run(|n| if n < 2 { Err("flaky") } else { Ok(n) }, |_| true);
        assert_eq!(r, Ok(2));
    }
}

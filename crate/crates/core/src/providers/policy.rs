//! Retry, backoff and rate limiting for remote providers.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::ProviderError;

const BACKOFF_CAP: Duration = Duration::from_secs(60);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderPolicy {
    pub max_retries: u32,
    #[serde(with = "millis")]
    pub backoff_base: Duration,
    /// Admitted requests per `rate_window`.
    pub rate_limit: u32,
    #[serde(with = "millis")]
    pub rate_window: Duration,
    #[serde(with = "millis")]
    pub timeout: Duration,
}

impl Default for ProviderPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            rate_limit: 60,
            rate_window: Duration::from_secs(60),
            timeout: Duration::from_secs(120),
        }
    }
}

impl ProviderPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.backoff_base.is_zero() || self.rate_window.is_zero() || self.timeout.is_zero() {
            return Err("policy durations must be positive".into());
        }
        if self.rate_limit == 0 {
            return Err("rate limit must admit at least one request".into());
        }
        Ok(())
    }

    /// `backoff_base * 2^retry`, capped at one minute.
    pub fn backoff(&self, retry: u32) -> Duration {
        self.backoff_base
            .checked_mul(1u32.checked_shl(retry.min(20)).unwrap_or(u32::MAX))
            .unwrap_or(BACKOFF_CAP)
            .min(BACKOFF_CAP)
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Instant;
    fn sleep(&self, d: Duration);
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Instant {
        Instant::now()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

/// Sliding-window admission control shared by all callers of a provider.
pub struct RateLimiter {
    limit: u32,
    window: Duration,
    admitted: Mutex<VecDeque<Instant>>,
    clock: Arc<dyn Clock>,
}

impl RateLimiter {
    pub fn new(limit: u32, window: Duration, clock: Arc<dyn Clock>) -> Self {
        Self {
            limit: limit.max(1),
            window,
            admitted: Mutex::new(VecDeque::new()),
            clock,
        }
    }

    /// Blocks until a request may be sent.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut q = self.admitted.lock().expect("rate limiter poisoned");
                let now = self.clock.now();
                while q
                    .front()
                    .is_some_and(|t| now.saturating_duration_since(*t) >= self.window)
                {
                    q.pop_front();
                }
                if (q.len() as u32) < self.limit {
                    q.push_back(now);
                    return;
                }
                (*q.front().expect("non-empty") + self.window).saturating_duration_since(now)
            };
            self.clock.sleep(wait.max(Duration::from_millis(1)));
        }
    }
}

/// Applies a [`ProviderPolicy`] around a fallible call.
pub struct Retrier {
    policy: ProviderPolicy,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
}

impl Retrier {
    pub fn new(policy: ProviderPolicy, clock: Arc<dyn Clock>) -> Self {
        let limiter = RateLimiter::new(policy.rate_limit, policy.rate_window, clock.clone());
        Self {
            policy,
            limiter,
            clock,
        }
    }

    pub fn policy(&self) -> &ProviderPolicy {
        &self.policy
    }

    /// Runs `op` at most `1 + max_retries` times. Transient failures and
    /// rate limiting are retried after a non-decreasing delay; permanent
    /// failures return at once.
    pub fn run<T>(&self, mut op: impl FnMut(u32) -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let mut last_delay = Duration::ZERO;
        let mut attempt = 0u32;
        loop {
            self.limiter.acquire();
            let err = match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e @ ProviderError::Permanent(_)) => return Err(e),
                Err(e) => e,
            };
            if attempt >= self.policy.max_retries {
                return Err(err);
            }
            let mut delay = self.policy.backoff(attempt);
            if let ProviderError::RateLimited {
                retry_after: Some(ra),
            } = &err
            {
                delay = delay.max(*ra);
            }
            delay = delay.max(last_delay);
            last_delay = delay;
            self.clock.sleep(delay);
            attempt += 1;
        }
    }
}

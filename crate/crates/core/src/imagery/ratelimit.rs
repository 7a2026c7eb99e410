use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Thread-safe token bucket. `acquire` blocks until a token is available.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    capacity: f64,
    state: Mutex<Bucket>,
}

#[derive(Debug)]
struct Bucket {
    tokens: f64,
    last: Instant,
}

impl RateLimiter {
    /// `rate` tokens per second, at most `burst` banked. Starts with one token.
    pub fn new(rate: f64, burst: usize) -> Self {
        assert!(rate > 0.0 && rate.is_finite(), "rate limit must be positive");
        Self {
            rate,
            capacity: burst.max(1) as f64,
            state: Mutex::new(Bucket { tokens: 1.0, last: Instant::now() }),
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut b = self.state.lock().expect("rate limiter poisoned");
                let now = Instant::now();
                let refill = now.duration_since(b.last).as_secs_f64() * self.rate;
                b.tokens = (b.tokens + refill).min(self.capacity);
                b.last = now;
                if b.tokens >= 1.0 {
                    b.tokens -= 1.0;
                    return;
                }
                (1.0 - b.tokens) / self.rate
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

/// Token bucket shared by every caller of one provider.
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
    /// `requests_per_sec` must be positive; burst capacity is `max(1, rate)`.
    pub fn new(requests_per_sec: f64) -> Self {
        assert!(requests_per_sec > 0.0, "rate must be positive");
        let capacity = requests_per_sec.max(1.0);
        RateLimiter {
            rate: requests_per_sec,
            capacity,
            state: Mutex::new(Bucket { tokens: capacity, last: Instant::now() }),
        }
    }

    /// Blocks until one request may be sent.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut b = self.state.lock().expect("rate limiter poisoned");
                let now = Instant::now();
                let elapsed = now.duration_since(b.last).as_secs_f64();
                b.tokens = (b.tokens + elapsed * self.rate).min(self.capacity);
                b.last = now;
                if b.tokens >= 1.0 {
                    b.tokens -= 1.0;
                    return;
                }
                (1.0 - b.tokens) / self.rate
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

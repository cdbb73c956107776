/// Simulated monotonic clock.
///
/// Time is kept in microseconds so sub-millisecond counter ticks and card
/// timing can be modelled; `now_ms` is the coarse view used by logs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct SimClock {
    now_us: u64,
}

impl SimClock {
    pub const fn at_us(now_us: u64) -> Self {
        SimClock { now_us }
    }

    pub const fn at_ms(now_ms: u64) -> Self {
        SimClock { now_us: now_ms * 1000 }
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn now_ms(&self) -> u64 {
        self.now_us / 1000
    }

    pub fn now_s(&self) -> u64 {
        self.now_us / 1_000_000
    }

    pub fn advance_us(&mut self, dt: u64) {
        self.now_us = self.now_us.saturating_add(dt);
    }

    pub fn advance_ms(&mut self, dt: u64) {
        self.advance_us(dt.saturating_mul(1000));
    }

    /// Moves forward to `t`; never moves backwards.
    pub fn advance_to_us(&mut self, t: u64) {
        self.now_us = self.now_us.max(t);
    }

    /// Seconds since midnight, wrapping daily.
    pub fn time_of_day_s(&self) -> u32 {
        (self.now_s() % 86_400) as u32
    }
}

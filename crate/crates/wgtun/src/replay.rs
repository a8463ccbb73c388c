//! Sliding anti-replay window over transport counters.

/// Number of counters tracked behind the highest one seen.
pub const WINDOW: u64 = 64;

#[derive(Clone, Debug, Default)]
pub struct ReplayWindow {
    /// Highest accepted counter plus one; zero when nothing was accepted yet.
    next: u64,
    /// Bit `i` set means counter `next - 1 - i` was seen.
    bitmap: u64,
}

impl ReplayWindow {
    /// Whether `counter` would be accepted. Does not modify the window.
    pub fn is_fresh(&self, counter: u64) -> bool {
        if counter >= self.next {
            return true;
        }
        let behind = self.next - 1 - counter;
        behind < WINDOW && self.bitmap & (1 << behind) == 0
    }

    /// Records `counter` as seen; returns false if it was a replay or too old.
    /// Call only after the message authenticated.
    pub fn mark(&mut self, counter: u64) -> bool {
        if !self.is_fresh(counter) {
            return false;
        }
        if counter >= self.next {
            let shift = counter - self.next + 1;
            self.bitmap = if shift >= WINDOW {
                0
            } else {
                self.bitmap << shift
            };
            self.bitmap |= 1;
            self.next = counter + 1;
        } else {
            self.bitmap |= 1 << (self.next - 1 - counter);
        }
        true
    }
}

/// Linear ε decay from `start` to `end` over `decay_steps` environment
/// steps, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_steps: 2_000_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.value(0), 1.0);
        assert_eq!(s.value(2_000_000), 0.05);
        assert_eq!(s.value(9_000_000), 0.05);
        assert!((s.value(1_000_000) - 0.525).abs() < 1e-12);
    }

    #[test]
    fn linear_and_bounded() {
        let s = EpsilonSchedule::default();
        let mut prev = s.value(0);
        for step in (0..=2_500_000).step_by(50_000) {
            let e = s.value(step);
            assert!((0.0..=1.0).contains(&e) && e <= prev);
            prev = e;
        }
        let (a, b, c) = (s.value(100_000), s.value(200_000), s.value(300_000));
        assert!(((b - a) - (c - b)).abs() < 1e-12);
    }
}

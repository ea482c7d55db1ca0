//! Latency histogram with power-of-two nanosecond buckets.

use std::time::Duration;

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct Histogram {
    /// `buckets[i]` counts samples in `[2^i, 2^(i+1))` ns; bucket 0 also holds 0.
    buckets: Vec<u64>,
    count: u64,
    total_ns: u128,
    max_ns: u64,
}

impl Default for Histogram {
    fn default() -> Self {
        Histogram {
            buckets: vec![0; 64],
            count: 0,
            total_ns: 0,
            max_ns: 0,
        }
    }
}

impl Histogram {
    pub fn record(&mut self, d: Duration) {
        let ns = u64::try_from(d.as_nanos()).unwrap_or(u64::MAX);
        let b = 63 - ns.max(1).leading_zeros() as usize;
        self.buckets[b] += 1;
        self.count += 1;
        self.total_ns += u128::from(ns);
        self.max_ns = self.max_ns.max(ns);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn total(&self) -> Duration {
        Duration::from_nanos(u64::try_from(self.total_ns).unwrap_or(u64::MAX))
    }

    pub fn max(&self) -> Duration {
        Duration::from_nanos(self.max_ns)
    }

    /// Upper edge of the bucket holding the `q`-quantile, capped at the max.
    pub fn quantile(&self, q: f64) -> Duration {
        if self.count == 0 {
            return Duration::ZERO;
        }
        let rank = ((q.clamp(0.0, 1.0) * self.count as f64).ceil() as u64).max(1);
        let mut seen = 0;
        for (i, &n) in self.buckets.iter().enumerate() {
            seen += n;
            if seen >= rank {
                let edge = if i >= 63 { u64::MAX } else { (1u64 << (i + 1)) - 1 };
                return Duration::from_nanos(edge.min(self.max_ns));
            }
        }
        self.max()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_bound_the_samples() {
        let mut h = Histogram::default();
        for ns in [0, 1, 5, 100, 1000, 1000, 70_000] {
            h.record(Duration::from_nanos(ns));
        }
        assert_eq!(h.count(), 7);
        assert_eq!(h.max(), Duration::from_nanos(70_000));
        assert_eq!(h.total(), Duration::from_nanos(72_106));
        assert_eq!(h.quantile(0.5), Duration::from_nanos(127));
        assert_eq!(h.quantile(1.0), Duration::from_nanos(70_000));
        assert_eq!(Histogram::default().quantile(0.5), Duration::ZERO);
    }
}

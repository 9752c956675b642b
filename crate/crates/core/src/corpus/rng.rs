/// 64-bit linear congruential generator with fixed constants, so splits and
/// synthetic corpora are identical on every platform.
#[derive(Debug, Clone)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub const MULTIPLIER: u64 = 6364136223846793005;
    pub const INCREMENT: u64 = 1442695040888963407;

    /// The seed is used as the initial state without mixing.
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self
            .state
            .wrapping_mul(Self::MULTIPLIER)
            .wrapping_add(Self::INCREMENT);
        self.state
    }

    /// Uniform integer in `0..n` from the high 32 bits of the next state.
    /// `n` must be non-zero and fit in 32 bits.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0 && (n as u64) <= u32::MAX as u64, "range out of bounds: {n}");
        (((self.next_u64() >> 32) * n as u64) >> 32) as usize
    }

    /// Uniform float in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }

    /// Fisher-Yates, last index first.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_states_follow_the_recurrence() {
        let mut rng = Lcg::new(0);
        assert_eq!(rng.next_u64(), Lcg::INCREMENT);
        assert_eq!(
            rng.next_u64(),
            Lcg::INCREMENT
                .wrapping_mul(Lcg::MULTIPLIER)
                .wrapping_add(Lcg::INCREMENT)
        );
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = Lcg::new(7);
        for n in 1..50 {
            for _ in 0..20 {
                assert!(rng.below(n) < n);
            }
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Lcg::new(42);
        let mut v: Vec<usize> = (0..100).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}

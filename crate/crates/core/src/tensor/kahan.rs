use crate::real::Real;

/// Compensated running sum.
///
/// Uses the Kahan-Babuska (Neumaier) update, which keeps the compensation
/// exact even when an addend is larger in magnitude than the running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum<T> {
    sum: T,
    comp: T,
}

impl<T: Real> KahanSum<T> {
    pub fn new() -> Self {
        Self {
            sum: T::zero(),
            comp: T::zero(),
        }
    }

    #[inline(always)]
    pub fn add(&mut self, v: T) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline(always)]
    pub fn value(&self) -> T {
        self.sum + self.comp
    }
}

impl<T: Real> Extend<T> for KahanSum<T> {
    fn extend<I: IntoIterator<Item = T>>(&mut self, iter: I) {
        for v in iter {
            self.add(v);
        }
    }
}

/// A row of independent [`KahanSum`]s with sums and compensations stored
/// apart, so the per-lane update compiles to vector code. Each lane produces
/// bit-identical results to a `KahanSum` fed the same terms.
#[derive(Clone, Debug)]
pub struct KahanLanes<T> {
    sum: Vec<T>,
    comp: Vec<T>,
}

impl<T: Real> KahanLanes<T> {
    pub fn new(lanes: usize) -> Self {
        Self {
            sum: vec![T::zero(); lanes],
            comp: vec![T::zero(); lanes],
        }
    }

    pub fn reset(&mut self) {
        self.sum.fill(T::zero());
        self.comp.fill(T::zero());
    }

    /// Adds `weights[l] * values[l]` to lane `start + l`.
    #[inline]
    pub fn add_products(&mut self, start: usize, weights: &[T], values: &[T]) {
        let n = weights.len().min(values.len());
        let sums = &mut self.sum[start..start + n];
        let comps = &mut self.comp[start..start + n];
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2. Wider vectors do not change the
            // per-lane arithmetic, so results are identical.
            return unsafe { add_products_avx2(sums, comps, weights, values) };
        }
        add_products_lanes(sums, comps, weights, values);
    }

    /// Compensated values of lanes `start..start + out.len()`.
    pub fn values_into(&self, start: usize, out: &mut [T]) {
        let n = out.len();
        for ((o, &s), &c) in out
            .iter_mut()
            .zip(&self.sum[start..start + n])
            .zip(&self.comp[start..start + n])
        {
            *o = s + c;
        }
    }
}

#[inline(always)]
fn add_products_lanes<T: Real>(sums: &mut [T], comps: &mut [T], weights: &[T], values: &[T]) {
    for (((s, c), &w), &v) in sums.iter_mut().zip(comps.iter_mut()).zip(weights).zip(values) {
        let x = w * v;
        let t = *s + x;
        let sum_is_big = s.abs() >= x.abs();
        let big = if sum_is_big { *s } else { x };
        let small = if sum_is_big { x } else { *s };
        *c += (big - t) + small;
        *s = t;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn add_products_avx2<T: Real>(sums: &mut [T], comps: &mut [T], weights: &[T], values: &[T]) {
    add_products_lanes(sums, comps, weights, values);
}

/// Compensated sum of `values` in iteration order. The empty sum is zero.
pub fn kahan_sum<T: Real>(values: impl IntoIterator<Item = T>) -> T {
    let mut acc = KahanSum::new();
    acc.extend(values);
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ulp(v: f32) -> f64 {
        let v = v.abs();
        if v == 0.0 {
            return f32::from_bits(1) as f64;
        }
        (f32::from_bits(v.to_bits() + 1) - v) as f64
    }

    #[test]
    fn small_integers_are_exact() {
        assert_eq!(kahan_sum([1.0f32, 2.0, 3.0]), 6.0);
        assert_eq!(kahan_sum(Vec::<f32>::new()), 0.0);
    }

    #[test]
    fn ten_thousand_tenths_within_one_ulp() {
        let values = vec![0.1f32; 10_000];
        let oracle: f64 = values.iter().map(|&v| v as f64).sum();
        let got = kahan_sum(values.iter().copied());
        assert!(
            (got as f64 - oracle).abs() <= ulp(got),
            "kahan {got} vs oracle {oracle}"
        );
        let naive: f32 = values.iter().sum();
        assert!((naive as f64 - oracle).abs() > ulp(got));
    }

    #[test]
    fn survives_large_cancelling_terms() {
        assert_eq!(kahan_sum([1.0f32, 1e10, 1.0, -1e10]), 2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn any_permutation_within_four_ulps(
            values in prop::collection::vec(-1.0e3f32..1.0e3, 0..10_000),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = values.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let oracle: f64 = values.iter().map(|&v| v as f64).sum();
            for v in [&values, &shuffled] {
                let got = kahan_sum(v.iter().copied());
                prop_assert!((got as f64 - oracle).abs() <= 4.0 * ulp(got));
            }
        }

        #[test]
        fn lanes_match_scalar_sums_bitwise(
            rows in prop::collection::vec(prop::collection::vec(-1.0e4f32..1.0e4, 37), 1..40),
            weights in prop::collection::vec(-2.0f32..2.0, 37),
        ) {
            let mut lanes = KahanLanes::new(40);
            for row in &rows {
                lanes.add_products(3, &weights, row);
            }
            let mut got = vec![0.0f32; 37];
            lanes.values_into(3, &mut got);
            for (l, g) in got.iter().enumerate() {
                let want = kahan_sum(rows.iter().map(|r| weights[l] * r[l]));
                prop_assert_eq!(g.to_bits(), want.to_bits());
            }
        }
    }
}

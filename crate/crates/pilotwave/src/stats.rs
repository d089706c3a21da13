//! Small statistics toolkit: compensated sums, histograms, and the distance
//! measures the verification checks are stated in. Reductions are written as
//! sequential folds over index order so results do not depend on thread
//! scheduling.

use crate::scalar::Real;

/// Kahan–Babuška compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum<R: Real> {
    sum: R,
    carry: R,
}

impl<R: Real> KahanSum<R> {
    pub fn new() -> Self {
        Self { sum: R::zero(), carry: R::zero() }
    }

    pub fn add(&mut self, value: R) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> R {
        self.sum
    }
}

/// Compensated sum of an iterator.
pub fn ksum<R: Real>(values: impl IntoIterator<Item = R>) -> R {
    let mut acc = KahanSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Sample mean and standard error of the mean (`s/√n`).
pub fn mean_and_se<R: Real>(samples: &[R]) -> (R, R) {
    let n = R::from_usize(samples.len()).unwrap();
    let mean = ksum(samples.iter().copied()) / n;
    if samples.len() < 2 {
        return (mean, R::zero());
    }
    let var = ksum(samples.iter().map(|&x| (x - mean) * (x - mean)))
        / (n - R::one());
    (mean, (var / n).sqrt())
}

/// Equal-width histogram of sample counts over `[lo, hi)`; out-of-range
/// samples are clamped into the end bins so mass is conserved.
pub fn histogram<R: Real>(samples: &[R], bins: usize, lo: R, hi: R) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / R::from_usize(bins).unwrap();
    for &x in samples {
        let raw = ((x - lo) / width).floor().as_f64() as i64;
        let idx = raw.clamp(0, bins as i64 - 1) as usize;
        counts[idx] += 1;
    }
    counts
}

/// Total-variation distance `½ Σ |p_i - q_i|` between two bin-mass vectors.
/// Inputs are normalised to unit mass first so counts can be passed directly.
pub fn tv_distance<R: Real>(p: &[R], q: &[R]) -> R {
    assert_eq!(p.len(), q.len(), "tv_distance: bin counts differ");
    let pt = ksum(p.iter().copied());
    let qt = ksum(q.iter().copied());
    let half = R::lit(0.5);
    half * ksum(p.iter().zip(q).map(|(&a, &b)| (a / pt - b / qt).abs()))
}

/// Kolmogorov–Smirnov statistic of `samples` against a target CDF.
/// `samples` need not be sorted; the CDF must be nondecreasing on the range.
pub fn ks_statistic<R: Real>(samples: &[R], cdf: impl Fn(R) -> R) -> R {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = R::from_usize(xs.len()).unwrap();
    let mut worst = R::zero();
    for (rank, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        let lo = R::from_usize(rank).unwrap() / n;
        let hi = R::from_usize(rank + 1).unwrap() / n;
        worst = worst.max((f - lo).abs()).max((hi - f).abs());
    }
    worst
}

/// Number of strict order inversions between `initial` and `final_` values:
/// pairs ordered one way at the start and the other way at the end. Zero
/// means the final positions are a monotone function of the initial ones.
pub fn count_inversions<R: Real>(initial: &[R], final_: &[R]) -> usize {
    assert_eq!(initial.len(), final_.len());
    let mut order: Vec<usize> = (0..initial.len()).collect();
    order.sort_by(|&a, &b| initial[a].partial_cmp(&initial[b]).expect("finite positions"));
    let seq: Vec<R> = order.iter().map(|&j| final_[j]).collect();
    merge_count(&seq)
}

fn merge_count<R: Real>(seq: &[R]) -> usize {
    fn go<R: Real>(buf: &mut [R], tmp: &mut [R]) -> usize {
        let n = buf.len();
        if n < 2 {
            return 0;
        }
        let mid = n / 2;
        let (left, right) = buf.split_at_mut(mid);
        let mut inv = go(left, tmp) + go(right, tmp);
        let (mut i, mut j, mut k) = (0, 0, 0);
        while i < left.len() && j < right.len() {
            if right[j] < left[i] {
                inv += left.len() - i;
                tmp[k] = right[j];
                j += 1;
            } else {
                tmp[k] = left[i];
                i += 1;
            }
            k += 1;
        }
        for &v in left[i..].iter().chain(right[j..].iter()) {
            tmp[k] = v;
            k += 1;
        }
        buf.copy_from_slice(&tmp[..n]);
        inv
    }
    let mut buf = seq.to_vec();
    let mut tmp = vec![R::zero(); seq.len()];
    go(&mut buf, &mut tmp)
}

/// Least-squares slope of `y` against `x` (used for scaling exponents on a
/// handful of log-log points).
pub fn ls_slope<R: Real>(x: &[R], y: &[R]) -> R {
    assert_eq!(x.len(), y.len());
    let n = R::from_usize(x.len()).unwrap();
    let mx = ksum(x.iter().copied()) / n;
    let my = ksum(y.iter().copied()) / n;
    let sxy = ksum(x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)));
    let sxx = ksum(x.iter().map(|&a| (a - mx) * (a - mx)));
    sxy / sxx
}

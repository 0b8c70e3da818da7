use crate::geom::Vec2;
use crate::real::Real;

/// Dynamic time warping distance with Euclidean ground cost and no window.
///
/// Empty inputs give infinity.
pub fn dtw<T: Real>(a: &[Vec2<T>], b: &[Vec2<T>]) -> T {
    let m = b.len();
    if a.is_empty() || m == 0 {
        return T::infinity();
    }
    let mut prev = vec![T::infinity(); m + 1];
    let mut cur = vec![T::infinity(); m + 1];
    prev[0] = T::zero();
    for x in a {
        cur[0] = T::infinity();
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = x.dist(b[j - 1]) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

//! Seeded k-means (k-means++ initialisation, Lloyd iterations) over small point sets.

use crate::error::{Error, Result};
use crate::rng::Pcg32;
use crate::scalar::Scalar;

pub const MAX_ITERATIONS: usize = 100;
pub const DEFAULT_RESTARTS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans<T, const D: usize> {
    /// Sorted lexicographically, i.e. by `(y, x)` for `[row, col]` points.
    pub centroids: Vec<[T; D]>,
    /// Index into `centroids` for every input point.
    pub assignments: Vec<usize>,
    pub inertia: T,
    /// `k` was larger than the number of points and got clamped.
    pub reduced: bool,
}

fn dist2<T: Scalar, const D: usize>(a: &[T; D], b: &[T; D]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

fn nearest<T: Scalar, const D: usize>(p: &[T; D], centroids: &[[T; D]]) -> (usize, T) {
    let mut best = (0, dist2(p, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = dist2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Total squared distance of each point to its nearest centroid.
pub fn inertia<T: Scalar, const D: usize>(points: &[[T; D]], centroids: &[[T; D]]) -> T {
    points.iter().map(|p| nearest(p, centroids).1).sum()
}

/// k-means with [`DEFAULT_RESTARTS`] seeded restarts, keeping the lowest inertia.
pub fn kmeans<T: Scalar, const D: usize>(points: &[[T; D]], k: usize, rng: &mut Pcg32) -> Result<KMeans<T, D>> {
    kmeans_with_restarts(points, k, DEFAULT_RESTARTS, rng)
}

pub fn kmeans_with_restarts<T: Scalar, const D: usize>(
    points: &[[T; D]],
    k: usize,
    restarts: usize,
    rng: &mut Pcg32,
) -> Result<KMeans<T, D>> {
    if points.is_empty() {
        return Err(Error::Config("k-means needs at least one point".into()));
    }
    if k == 0 {
        return Err(Error::Config("k-means needs k >= 1".into()));
    }
    let reduced = k > points.len();
    let k = k.min(points.len());

    let mut best: Option<(T, Vec<[T; D]>)> = None;
    for _ in 0..restarts.max(1) {
        let centroids = hartigan(points, lloyd(points, plus_plus_init(points, k, rng)));
        let score = inertia(points, &centroids);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, centroids));
        }
    }
    let (inertia, mut centroids) = best.expect("at least one restart");
    centroids.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.partial_cmp(y).expect("finite centroids"))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let assignments = points.iter().map(|p| nearest(p, &centroids).0).collect();
    Ok(KMeans {
        centroids,
        assignments,
        inertia,
        reduced,
    })
}

fn plus_plus_init<T: Scalar, const D: usize>(points: &[[T; D]], k: usize, rng: &mut Pcg32) -> Vec<[T; D]> {
    let n = points.len();
    let mut centroids = vec![points[rng.below(n as u32) as usize]];
    let mut d2: Vec<T> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: T = d2.iter().copied().sum();
        let pick = if total > T::zero() {
            let target = T::of(rng.next_f64()) * total;
            let mut acc = T::zero();
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > T::zero() {
                    acc = acc + w;
                    chosen = Some(i);
                    if acc > target {
                        break;
                    }
                }
            }
            chosen.expect("positive total implies a positive weight")
        } else {
            rng.below(n as u32) as usize
        };
        let c = points[pick];
        d2.iter_mut().zip(points).for_each(|(d, p)| *d = d.min(dist2(p, &c)));
        centroids.push(c);
    }
    centroids
}

fn lloyd<T: Scalar, const D: usize>(points: &[[T; D]], mut centroids: Vec<[T; D]>) -> Vec<[T; D]> {
    let k = centroids.len();
    let mut assign: Vec<usize> = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assign {
            break;
        }
        assign = next;

        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&a| counts[a] += 1);
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            // Re-seed an empty cluster at the point farthest from its own centroid,
            // taking it only from clusters that can spare a member.
            let far = (0..points.len())
                .filter(|&i| counts[assign[i]] > 1)
                .fold(None::<(usize, T)>, |best, i| {
                    let d = dist2(&points[i], &centroids[assign[i]]);
                    match best {
                        Some((_, bd)) if d <= bd => best,
                        _ => Some((i, d)),
                    }
                });
            if let Some((i, _)) = far {
                counts[assign[i]] -= 1;
                assign[i] = j;
                counts[j] = 1;
                centroids[j] = points[i];
            }
        }

        let mut sums = vec![[T::zero(); D]; k];
        for (p, &a) in points.iter().zip(&assign) {
            sums[a].iter_mut().zip(p).for_each(|(s, &x)| *s = *s + x);
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = T::one() / T::of(counts[j] as f64);
                centroids[j] = sums[j].map(|s| s * inv);
            }
        }
    }
    centroids
}

/// Single-point transfers from a Lloyd fixed point: move a point whenever
/// `n_a/(n_a-1)·d(x,c_a)² > n_b/(n_b+1)·d(x,c_b)²`, which lowers inertia.
fn hartigan<T: Scalar, const D: usize>(points: &[[T; D]], centroids: Vec<[T; D]>) -> Vec<[T; D]> {
    let k = centroids.len();
    if k < 2 {
        return centroids;
    }
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut counts = vec![0usize; k];
    assign.iter().for_each(|&a| counts[a] += 1);
    let recompute = |assign: &[usize], counts: &[usize]| {
        let mut sums = vec![[T::zero(); D]; k];
        for (p, &a) in points.iter().zip(assign) {
            sums[a].iter_mut().zip(p).for_each(|(s, &x)| *s = *s + x);
        }
        sums.iter()
            .zip(&centroids)
            .zip(counts)
            .map(|((s, c), &n)| if n > 0 { s.map(|v| v / T::of(n as f64)) } else { *c })
            .collect::<Vec<_>>()
    };
    let mut cents = recompute(&assign, &counts);
    let eps = T::of(1e-12);
    for _ in 0..MAX_ITERATIONS {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let a = assign[i];
            if counts[a] < 2 {
                continue;
            }
            let na = T::of(counts[a] as f64);
            let loss = na / (na - T::one()) * dist2(p, &cents[a]);
            let best = (0..k).filter(|&b| b != a).fold(None::<(usize, T)>, |best, b| {
                let nb = T::of(counts[b] as f64);
                let cost = nb / (nb + T::one()) * dist2(p, &cents[b]);
                match best {
                    Some((_, c)) if c <= cost => best,
                    _ => Some((b, cost)),
                }
            });
            if let Some((b, cost)) = best {
                if loss - cost > eps * (T::one() + loss) {
                    assign[i] = b;
                    counts[a] -= 1;
                    counts[b] += 1;
                    cents = recompute(&assign, &counts);
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    cents
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transfers_escape_lloyd_fixed_points() {
        let pts = [
            [12.216599090344147f64, 30.673795341163988],
            [27.6692627316966, 22.48369050515246],
            [30.826904929873255, 14.334280518596003],
            [22.849413676650506, 24.757326395348883],
            [18.335085231094453, 5.455595523139902],
        ];
        let mut improved = 0;
        for i in 0..pts.len() {
            for j in (0..pts.len()).filter(|&j| j != i) {
                let stuck = lloyd(&pts, vec![pts[i], pts[j]]);
                let (before, after) = (inertia(&pts, &stuck), inertia(&pts, &hartigan(&pts, stuck)));
                assert!(after <= before);
                improved += usize::from(after < before);
            }
        }
        assert!(improved > 0);
    }

    #[test]
    fn k_equal_to_n_returns_the_points() {
        let pts = [[3.0f64, 1.0], [0.0, 0.0], [5.0, 5.0], [1.0, 4.0]];
        let km = kmeans(&pts, 4, &mut Pcg32::new(3)).unwrap();
        assert_eq!(km.inertia, 0.0);
        assert_eq!(km.centroids, vec![[0.0, 0.0], [1.0, 4.0], [3.0, 1.0], [5.0, 5.0]]);
        assert!(!km.reduced);
    }

    #[test]
    fn square_corners_one_cluster() {
        let pts = [[0.0f64, 0.0], [0.0, 2.0], [2.0, 0.0], [2.0, 2.0]];
        let km = kmeans(&pts, 1, &mut Pcg32::new(0)).unwrap();
        assert_eq!(km.centroids, vec![[1.0, 1.0]]);
        assert_eq!(km.inertia, 8.0);
    }

    #[test]
    fn oversized_k_is_clamped() {
        let pts = [[0.0f64, 0.0], [1.0, 1.0]];
        let km = kmeans(&pts, 5, &mut Pcg32::new(0)).unwrap();
        assert!(km.reduced);
        assert_eq!(km.centroids.len(), 2);
    }

    #[test]
    fn invalid_inputs() {
        let empty: [[f64; 2]; 0] = [];
        assert!(kmeans(&empty, 1, &mut Pcg32::new(0)).is_err());
        assert!(kmeans(&[[0.0f64, 0.0]], 0, &mut Pcg32::new(0)).is_err());
    }

    #[test]
    fn duplicate_points_do_not_break_initialisation() {
        let pts = [[1.0f64, 1.0]; 6];
        let km = kmeans(&pts, 3, &mut Pcg32::new(9)).unwrap();
        assert_eq!(km.inertia, 0.0);
        assert_eq!(km.centroids.len(), 3);
    }

    #[test]
    fn separated_blobs_get_one_centroid_each() {
        let mut pts = Vec::new();
        for dy in 0..3 {
            for dx in 0..2 {
                pts.push([dy as f64, dx as f64]);
                pts.push([20.0 + dy as f64, 30.0 + dx as f64]);
            }
        }
        let km = kmeans(&pts, 2, &mut Pcg32::new(11)).unwrap();
        assert_eq!(km.centroids, vec![[1.0, 0.5], [21.0, 30.5]]);
    }
}

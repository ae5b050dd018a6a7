//! Support-to-query similarity maps, two-backbone fusion and the background
//! confidence Gaussian that drives negative-prompt selection.

use serde::{Deserialize, Serialize};

use crate::data::{BinaryMask, ConfidenceMap, FeatureMap};
use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

/// Unit-norm feature vectors of the support foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet<T> {
    channels: usize,
    vectors: Vec<T>,
    mean: Vec<T>,
    excluded_zero: usize,
}

impl<T: Scalar> PrototypeSet<T> {
    /// Builds from already normalized vectors laid out `n x channels`.
    pub fn from_vectors(channels: usize, vectors: Vec<T>) -> Result<Self> {
        if channels == 0 || !vectors.len().is_multiple_of(channels) {
            return Err(Error::Shape(format!(
                "{} values do not split into {channels}-vectors",
                vectors.len()
            )));
        }
        if vectors.is_empty() {
            return Err(Error::EmptySupport);
        }
        let n = vectors.len() / channels;
        let mut sum = vec![T::zero(); channels];
        for v in vectors.chunks_exact(channels) {
            sum.iter_mut().zip(v).for_each(|(s, &x)| *s = *s + x);
        }
        let inv = T::one() / T::of(n as f64);
        let mean = sum.into_iter().map(|s| s * inv).collect();
        Ok(Self {
            channels,
            vectors,
            mean,
            excluded_zero: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn vector(&self, i: usize) -> &[T] {
        &self.vectors[i * self.channels..(i + 1) * self.channels]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.vectors.chunks_exact(self.channels)
    }

    /// Foreground pixels dropped because their feature vector was zero.
    pub fn excluded_zero(&self) -> usize {
        self.excluded_zero
    }

    /// Mean cosine similarity of `v` against every prototype.
    ///
    /// Averaging dot products equals one dot product with the mean prototype,
    /// which keeps the cost at O(c) per query pixel.
    pub fn score(&self, v: &[T]) -> T {
        let n = norm(v);
        if n.is_zero() {
            return T::zero();
        }
        dot(v, &self.mean) / n
    }

    /// Same as [`score`](Self::score) for a vector already known to be unit or zero.
    fn score_unit(&self, v: &[T]) -> T {
        dot(v, &self.mean)
    }
}

/// Unit-norm (or zero) feature vectors of the support background.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSet<T> {
    channels: usize,
    vectors: Vec<T>,
}

impl<T: Scalar> BackgroundSet<T> {
    pub fn from_vectors(channels: usize, vectors: Vec<T>) -> Result<Self> {
        if channels == 0 || !vectors.len().is_multiple_of(channels) {
            return Err(Error::Shape(format!(
                "{} values do not split into {channels}-vectors",
                vectors.len()
            )));
        }
        Ok(Self { channels, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.vectors.chunks_exact(self.channels)
    }
}

fn check_mask<T: Scalar>(f: &FeatureMap<T>, m: &BinaryMask) -> Result<()> {
    if m.dims() != (f.height(), f.width()) {
        return Err(Error::Shape(format!(
            "mask {:?} does not match feature grid {}x{}",
            m.dims(),
            f.height(),
            f.width()
        )));
    }
    Ok(())
}

/// Collects the normalized support features under the (feature-resolution)
/// mask in row-major order, skipping zero vectors.
pub fn extract_prototypes<T: Scalar>(f: &FeatureMap<T>, m: &BinaryMask) -> Result<PrototypeSet<T>> {
    check_mask(f, m)?;
    let normalized = f.normalized();
    let mut vectors = Vec::new();
    let mut excluded = 0;
    for (r, c) in m.foreground() {
        let v = normalized.pixel(r, c);
        if v.iter().all(|x| x.is_zero()) {
            excluded += 1;
        } else {
            vectors.extend_from_slice(v);
        }
    }
    let mut set = PrototypeSet::from_vectors(f.channels(), vectors)?;
    set.excluded_zero = excluded;
    Ok(set)
}

/// Normalized support features outside the mask, row-major, zeros kept.
pub fn extract_background<T: Scalar>(f: &FeatureMap<T>, m: &BinaryMask) -> Result<BackgroundSet<T>> {
    check_mask(f, m)?;
    let normalized = f.normalized();
    let mut vectors = Vec::new();
    for (r, c) in m.complement().foreground() {
        vectors.extend_from_slice(normalized.pixel(r, c));
    }
    BackgroundSet::from_vectors(f.channels(), vectors)
}

/// Per-pixel mean cosine similarity between query features and all prototypes.
pub fn confidence_map<T: Scalar>(protos: &PrototypeSet<T>, query: &FeatureMap<T>) -> Result<ConfidenceMap<T>> {
    if protos.channels() != query.channels() {
        return Err(Error::Shape(format!(
            "prototype channels {} vs query channels {}",
            protos.channels(),
            query.channels()
        )));
    }
    let q = query.normalized();
    let data = (0..q.height() * q.width())
        .map(|i| protos.score_unit(q.pixel_at(i)))
        .collect();
    ConfidenceMap::new(q.height(), q.width(), data)
}

/// Unfused confidences of each background vector against the prototypes.
pub fn background_confidences<T: Scalar>(protos: &PrototypeSet<T>, bg: &BackgroundSet<T>) -> Result<Vec<T>> {
    if protos.channels() != bg.channels {
        return Err(Error::Shape(format!(
            "prototype channels {} vs background channels {}",
            protos.channels(),
            bg.channels
        )));
    }
    if bg.len() < 2 {
        return Err(Error::InsufficientBackground(bg.len()));
    }
    Ok(bg.iter().map(|v| protos.score_unit(v)).collect())
}

/// Flattened fused background confidences, the sample the Gaussian is fitted to.
pub fn negative_confidences<T: Scalar>(
    sam: (&PrototypeSet<T>, &BackgroundSet<T>),
    dino: (&PrototypeSet<T>, &BackgroundSet<T>),
    weights: &FusionWeights,
) -> Result<Vec<T>> {
    let s = background_confidences(sam.0, sam.1)?;
    let d = background_confidences(dino.0, dino.1)?;
    fuse_values(&s, &d, weights)
}

/// Mixing weights for the Hadamard and linear terms of the fused map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub delta_sd: f64,
    pub delta_s: f64,
    pub delta_d: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            delta_sd: 0.8,
            delta_s: 0.1,
            delta_d: 0.1,
        }
    }
}

impl FusionWeights {
    pub fn new(delta_sd: f64, delta_s: f64, delta_d: f64) -> Result<Self> {
        let w = Self {
            delta_sd,
            delta_s,
            delta_d,
        };
        w.validate()?;
        Ok(w)
    }

    /// Uses the SAM map alone.
    pub fn sam_only() -> Self {
        Self {
            delta_sd: 0.0,
            delta_s: 1.0,
            delta_d: 0.0,
        }
    }

    pub fn dino_only() -> Self {
        Self {
            delta_sd: 0.0,
            delta_s: 0.0,
            delta_d: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.delta_sd, self.delta_s, self.delta_d];
        if all.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Config(format!(
                "fusion weights must be finite and >= 0, got {all:?}"
            )));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("fusion weights must sum to 1, got {sum}")));
        }
        Ok(())
    }

    /// Fused value of one SAM/DINO confidence pair.
    #[inline]
    pub fn apply<T: Scalar>(&self, sam: T, dino: T) -> T {
        T::of(self.delta_sd) * (sam * dino) + T::of(self.delta_s) * sam + T::of(self.delta_d) * dino
    }
}

pub fn fuse_values<T: Scalar>(sam: &[T], dino: &[T], w: &FusionWeights) -> Result<Vec<T>> {
    if sam.len() != dino.len() {
        return Err(Error::Shape(format!(
            "cannot fuse {} values with {}",
            sam.len(),
            dino.len()
        )));
    }
    Ok(sam.iter().zip(dino).map(|(&s, &d)| w.apply(s, d)).collect())
}

/// Elementwise `dsd * (sam ⊙ dino) + ds * sam + dd * dino`.
pub fn fuse<T: Scalar>(sam: &ConfidenceMap<T>, dino: &ConfidenceMap<T>, w: &FusionWeights) -> Result<ConfidenceMap<T>> {
    if sam.dims() != dino.dims() {
        return Err(Error::Shape(format!(
            "cannot fuse {:?} map with {:?}",
            sam.dims(),
            dino.dims()
        )));
    }
    ConfidenceMap::new(
        sam.height(),
        sam.width(),
        fuse_values(sam.as_slice(), dino.as_slice(), w)?,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianModel<T> {
    pub mu: T,
    pub sigma: T,
}

impl<T: Scalar> GaussianModel<T> {
    /// Zero spread: every sample had the same value.
    pub fn is_degenerate(&self) -> bool {
        self.sigma.is_zero()
    }

    pub fn density(&self, x: T) -> T {
        let two = T::of(2.0);
        let var = self.sigma * self.sigma;
        let z = x - self.mu;
        (-(z * z) / (two * var)).exp() / (two * T::of(std::f64::consts::PI) * var).sqrt()
    }
}

/// Maximum-likelihood mean and (population) standard deviation.
///
/// Single pass with Welford updates; a constant input yields exactly `sigma == 0`.
pub fn fit_gaussian<T: Scalar>(values: &[T]) -> Result<GaussianModel<T>> {
    if values.len() < 2 {
        return Err(Error::InsufficientBackground(values.len()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in Gaussian sample".into()));
    }
    let mut mean = T::zero();
    let mut m2 = T::zero();
    for (k, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean = mean + delta / T::of((k + 1) as f64);
        m2 = m2 + delta * (x - mean);
    }
    let sigma = (m2.max(T::zero()) / T::of(values.len() as f64)).sqrt();
    Ok(GaussianModel { mu: mean, sigma })
}

/// Output of the synergy stage for one support/query pair.
#[derive(Debug, Clone)]
pub struct Synergy<T> {
    /// Fused query confidence on the feature grid.
    pub map: ConfidenceMap<T>,
    pub sam_map: ConfidenceMap<T>,
    pub dino_map: ConfidenceMap<T>,
    /// Fused support-background confidences, flattened row-major.
    pub negatives: Vec<T>,
    pub gaussian: GaussianModel<T>,
    pub sam_prototypes: PrototypeSet<T>,
    pub dino_prototypes: PrototypeSet<T>,
    pub weights: FusionWeights,
}

/// Features of one image from both encoders.
#[derive(Debug, Clone, Copy)]
pub struct FeaturePair<'a, T> {
    pub sam: &'a FeatureMap<T>,
    pub dino: &'a FeatureMap<T>,
}

/// Runs the full synergy stage. `support_mask` must already be on the feature grid.
pub fn build_synergy<T: Scalar>(
    support: FeaturePair<'_, T>,
    query: FeaturePair<'_, T>,
    support_mask: &BinaryMask,
    weights: &FusionWeights,
) -> Result<Synergy<T>> {
    weights.validate()?;
    let sam_prototypes = extract_prototypes(support.sam, support_mask)?;
    let dino_prototypes = extract_prototypes(support.dino, support_mask)?;
    let sam_map = confidence_map(&sam_prototypes, query.sam)?;
    let dino_map = confidence_map(&dino_prototypes, query.dino)?;
    let map = fuse(&sam_map, &dino_map, weights)?;

    let sam_bg = extract_background(support.sam, support_mask)?;
    let dino_bg = extract_background(support.dino, support_mask)?;
    let negatives = negative_confidences((&sam_prototypes, &sam_bg), (&dino_prototypes, &dino_bg), weights)?;
    let gaussian = fit_gaussian(&negatives)?;

    Ok(Synergy {
        map,
        sam_map,
        dino_map,
        negatives,
        gaussian,
        sam_prototypes,
        dino_prototypes,
        weights: *weights,
    })
}

impl<T: Scalar> Synergy<T> {
    /// Fused confidence of a query pixel given its raw per-backbone features.
    pub fn fused_score(&self, sam: &[T], dino: &[T]) -> T {
        self.weights
            .apply(self.sam_prototypes.score(sam), self.dino_prototypes.score(dino))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Backbone;

    fn fmap(h: usize, w: usize, c: usize, data: Vec<f64>) -> FeatureMap<f64> {
        FeatureMap::new(h, w, c, data, Backbone::Sam).unwrap()
    }

    #[test]
    fn prototype_count_equals_popcount() {
        let f = fmap(2, 2, 2, vec![1.0, 0.0, 0.0, 2.0, 3.0, 4.0, 1.0, 1.0]);
        let m = BinaryMask::from_vec(2, 2, vec![true, true, false, true]).unwrap();
        assert_eq!(extract_prototypes(&f, &m).unwrap().len(), 3);
    }

    #[test]
    fn zero_feature_is_excluded_from_prototypes() {
        let f = fmap(1, 3, 2, vec![1.0, 0.0, 0.0, 0.0, 0.0, 5.0]);
        let m = BinaryMask::from_fn(1, 3, |_, _| true);
        let p = extract_prototypes(&f, &m).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.excluded_zero(), 1);
        assert_eq!(p.vector(1), &[0.0, 1.0]);
    }

    #[test]
    fn full_mask_prototypes_in_row_major_order() {
        let f = fmap(2, 2, 2, vec![3.0, 4.0, 0.0, 2.0, -1.0, 0.0, 6.0, 8.0]);
        let m = BinaryMask::from_fn(2, 2, |_, _| true);
        let p = extract_prototypes(&f, &m).unwrap();
        let expect = [[0.6, 0.8], [0.0, 1.0], [-1.0, 0.0], [0.6, 0.8]];
        assert_eq!(p.len(), 4);
        for (i, e) in expect.iter().enumerate() {
            assert!((p.vector(i)[0] - e[0]).abs() < 1e-15 && (p.vector(i)[1] - e[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_support_is_an_error() {
        let f = fmap(1, 2, 1, vec![1.0, 1.0]);
        assert!(matches!(
            extract_prototypes(&f, &BinaryMask::new(1, 2)),
            Err(Error::EmptySupport)
        ));
        // Foreground exists but only on zero vectors.
        let f = fmap(1, 2, 1, vec![0.0, 1.0]);
        let m = BinaryMask::from_vec(1, 2, vec![true, false]).unwrap();
        assert!(matches!(extract_prototypes(&f, &m), Err(Error::EmptySupport)));
    }

    #[test]
    fn identical_and_orthogonal_query_pixels() {
        let protos = PrototypeSet::from_vectors(2, vec![1.0, 0.0]).unwrap();
        let q = fmap(1, 2, 2, vec![2.0, 0.0, 0.0, 3.0]);
        let cm = confidence_map(&protos, &q).unwrap();
        assert_eq!(cm.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn two_prototypes_average() {
        // Query unit vector (1, 0, 0); prototypes with cosines 0.9 and 0.5.
        let a = [0.9, (1.0f64 - 0.81).sqrt(), 0.0];
        let b = [0.5, 0.0, (1.0f64 - 0.25).sqrt()];
        let protos = PrototypeSet::from_vectors(3, [a, b].concat()).unwrap();
        let q = fmap(1, 1, 3, vec![1.0, 0.0, 0.0]);
        let v = confidence_map(&protos, &q).unwrap().get(0, 0);
        assert!((v - 0.7).abs() < 1e-12);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let protos = PrototypeSet::from_vectors(2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            confidence_map(&protos, &fmap(1, 1, 3, vec![1.0; 3])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn background_needs_two_vectors() {
        let protos = PrototypeSet::from_vectors(1, vec![1.0]).unwrap();
        let bg = BackgroundSet::from_vectors(1, vec![1.0]).unwrap();
        assert!(matches!(
            background_confidences(&protos, &bg),
            Err(Error::InsufficientBackground(1))
        ));
    }

    #[test]
    fn background_equal_to_prototype_scores_one() {
        let protos = PrototypeSet::from_vectors(2, vec![0.6f64, 0.8]).unwrap();
        let bg = BackgroundSet::from_vectors(2, vec![0.6, 0.8, 0.8, -0.6]).unwrap();
        let v = background_confidences(&protos, &bg).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15);
        assert!(v[1].abs() < 1e-15);
        let fused = negative_confidences((&protos, &bg), (&protos, &bg), &FusionWeights::default()).unwrap();
        assert!((fused[0] - 1.0).abs() < 1e-15 && fused[1].abs() < 1e-15);
    }

    #[test]
    fn fuse_examples() {
        let w = FusionWeights::default();
        let ones = ConfidenceMap::filled(2, 3, 1.0f64);
        let zeros = ConfidenceMap::filled(2, 3, 0.0f64);
        assert!(fuse(&ones, &ones, &w)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(fuse(&ones, &zeros, &w)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| (v - 0.1).abs() < 1e-15));
        let half = ConfidenceMap::filled(1, 1, 0.5f64);
        assert!((fuse(&half, &half, &w).unwrap().get(0, 0) - 0.3).abs() < 1e-15);
        let other = ConfidenceMap::filled(3, 2, 0.5f64);
        assert!(matches!(fuse(&ones, &other, &w), Err(Error::Shape(_))));
    }

    #[test]
    fn weights_must_lie_on_the_simplex() {
        assert!(FusionWeights::new(0.5, 0.5, 0.1).is_err());
        assert!(FusionWeights::new(1.2, -0.1, -0.1).is_err());
        assert!(FusionWeights::new(0.2, 0.3, 0.5).is_ok());
    }

    #[test]
    fn gaussian_examples() {
        let g = fit_gaussian(&[1.0f64, 2.0, 3.0]).unwrap();
        assert!((g.mu - 2.0).abs() < 1e-15);
        assert!((g.sigma - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(!g.is_degenerate());

        let g = fit_gaussian(&[0.4f64; 17]).unwrap();
        assert_eq!(g.mu, 0.4);
        assert_eq!(g.sigma, 0.0);
        assert!(g.is_degenerate());

        assert!(fit_gaussian(&[1.0f64]).is_err());
        assert!(fit_gaussian(&[1.0f64, f64::NAN]).is_err());
    }

    #[test]
    fn gaussian_density_peaks_at_mean() {
        let g = GaussianModel { mu: 0.0f64, sigma: 1.0 };
        assert!((g.density(0.0) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert!(g.density(1.0) < g.density(0.0));
    }
}

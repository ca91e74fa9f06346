//! Context pixel sets, background noise patches, and histogram matching.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::MaskCrop;
use crate::raster::{ImageRaster, IntensityGrid, NoisePatch, SubImage};

/// Multiset of intensity levels drawn from a sub-image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelSet {
    values: Vec<u16>,
    level_count: usize,
}

impl PixelSet {
    pub fn new(values: Vec<u16>, level_count: usize) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v as usize >= level_count) {
            return Err(Error::Contract(format!(
                "level {v} outside {level_count} levels"
            )));
        }
        Ok(Self {
            values,
            level_count,
        })
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn level_count(&self) -> usize {
        self.level_count
    }

    pub fn histogram(&self) -> Histogram {
        Histogram::from_values(&self.values, self.level_count)
    }
}

/// The non-target pixels of a box: `{ sub(x) : mask(x) = 0 }`, duplicates kept.
/// `level_count` is the number of levels of the source raster.
pub fn context_pixels(sub: &SubImage, mask_crop: &MaskCrop, level_count: usize) -> Result<PixelSet> {
    if (sub.width(), sub.height()) != (mask_crop.width(), mask_crop.height()) {
        return Err(Error::Contract(format!(
            "sub-image {}x{} and mask crop {}x{} differ",
            sub.width(),
            sub.height(),
            mask_crop.width(),
            mask_crop.height()
        )));
    }
    let values = sub
        .data()
        .iter()
        .zip(mask_crop.data())
        .filter(|(_, &m)| m == 0)
        .map(|(&v, _)| v)
        .collect();
    PixelSet::new(values, level_count)
}

/// Per-level counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    counts: Vec<u64>,
    total: u64,
}

impl Histogram {
    pub fn from_values(values: &[u16], level_count: usize) -> Self {
        let mut counts = vec![0u64; level_count];
        for &v in values {
            counts[v as usize] += 1;
        }
        Self {
            counts,
            total: values.len() as u64,
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn level_count(&self) -> usize {
        self.counts.len()
    }

    /// Normalized cumulative distribution per level.
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0u64;
        self.counts
            .iter()
            .map(|&c| {
                acc += c;
                acc as f64 / self.total.max(1) as f64
            })
            .collect()
    }

    /// Support levels in ascending order with their running counts.
    fn cumulative_support(&self) -> Vec<(u16, u64)> {
        let mut acc = 0;
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(level, &c)| {
                acc += c;
                (level as u16, acc)
            })
            .collect()
    }
}

/// Level mapping from a source distribution onto a reference one.
///
/// Each source level `v` maps to the smallest reference level `r` with
/// `CDF_ref(r) >= CDF_src(v)`. Comparisons are done on integer
/// cross-products, so the mapping is exact.
#[derive(Debug, Clone)]
pub struct LevelMap {
    /// Sorted distinct source levels and their targets.
    entries: Vec<(u16, u16)>,
}

impl LevelMap {
    pub fn build(source: &[u16], reference: &Histogram) -> Result<Self> {
        if reference.total() == 0 {
            return Err(Error::Contract(
                "histogram matching needs a non-empty reference".into(),
            ));
        }
        let support = reference.cumulative_support();
        let ref_total = reference.total() as u128;
        let mut sorted = source.to_vec();
        sorted.sort_unstable();
        let src_total = sorted.len() as u128;

        let mut entries = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let level = sorted[i];
            let run_end = i + sorted[i..].partition_point(|&v| v == level);
            let src_cum = run_end as u128;
            // smallest r with cum_ref(r) / ref_total >= src_cum / src_total
            let k = support.partition_point(|&(_, cum)| (cum as u128) * src_total < src_cum * ref_total);
            entries.push((level, support[k.min(support.len() - 1)].0));
            i = run_end;
        }
        Ok(Self { entries })
    }

    pub fn apply(&self, level: u16) -> Option<u16> {
        self.entries
            .binary_search_by_key(&level, |&(v, _)| v)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn entries(&self) -> &[(u16, u16)] {
        &self.entries
    }
}

/// Remap `patch` so its intensity distribution follows `reference`.
pub fn match_histogram(patch: &NoisePatch, reference: &Histogram) -> Result<NoisePatch> {
    let map = LevelMap::build(patch.data(), reference)?;
    let data = patch
        .data()
        .iter()
        .map(|&v| map.apply(v).expect("every patch level is in the map"))
        .collect();
    IntensityGrid::new(patch.width(), patch.height(), data)
}

/// Where a noise patch came from in the background pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSource {
    pub pool_index: usize,
    pub x: u32,
    pub y: u32,
    /// The pool image was smaller than the patch and was repeated.
    pub tiled: bool,
}

/// Cut a `w x h` window from a uniformly chosen pool image that can hold it.
/// When none can, the largest pool image is tiled from a random origin.
pub fn sample_noise_patch<R: Rng + ?Sized>(
    rng: &mut R,
    pool: &[ImageRaster],
    (w, h): (u32, u32),
) -> Result<(NoisePatch, PatchSource)> {
    if pool.is_empty() {
        return Err(Error::Config("background pool is empty".into()));
    }
    let fitting: Vec<usize> = pool
        .iter()
        .enumerate()
        .filter(|(_, im)| im.width() >= w && im.height() >= h)
        .map(|(i, _)| i)
        .collect();

    if !fitting.is_empty() {
        let pool_index = fitting[rng.random_range(0..fitting.len())];
        let src = &pool[pool_index];
        let x = rng.random_range(0..=src.width() - w);
        let y = rng.random_range(0..=src.height() - h);
        let patch = src.crop(&crate::dataset::BoundingBox::new(x, y, w, h))?;
        return Ok((
            patch,
            PatchSource {
                pool_index,
                x,
                y,
                tiled: false,
            },
        ));
    }

    let (pool_index, src) = pool
        .iter()
        .enumerate()
        .max_by_key(|(i, im)| (im.width() as u64 * im.height() as u64, std::cmp::Reverse(*i)))
        .expect("pool is non-empty");
    let x = rng.random_range(0..src.width());
    let y = rng.random_range(0..src.height());
    let mut data = Vec::with_capacity(w as usize * h as usize);
    for dy in 0..h {
        for dx in 0..w {
            data.push(src.get((x + dx) % src.width(), (y + dy) % src.height()));
        }
    }
    Ok((
        IntensityGrid::new(w as usize, h as usize, data)?,
        PatchSource {
            pool_index,
            x,
            y,
            tiled: true,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryGrid;
    use crate::raster::BitDepth;
    use proptest::prelude::*;
    use rand::seq::{IndexedRandom, SliceRandom};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(rows: &[&[u16]]) -> IntensityGrid {
        IntensityGrid::from_rows(rows).unwrap()
    }

    #[test]
    fn context_excludes_target_pixels() {
        let sub = grid(&[&[10, 20], &[30, 40]]);
        let mask = BinaryGrid::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        let set = context_pixels(&sub, &mask, 256).unwrap();
        assert_eq!(set.values(), &[20, 30]);

        let all = context_pixels(&sub, &BinaryGrid::zeros(2, 2), 256).unwrap();
        assert_eq!(all.len(), 4);

        let none = context_pixels(&sub, &BinaryGrid::new(2, 2, vec![1; 4]).unwrap(), 256).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn context_dimension_mismatch() {
        let sub = grid(&[&[1, 2]]);
        assert!(matches!(
            context_pixels(&sub, &BinaryGrid::zeros(1, 2), 256),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn constant_reference() {
        let patch = IntensityGrid::filled(3, 2, 5);
        let reference = Histogram::from_values(&[10, 10, 10], 256);
        let out = match_histogram(&patch, &reference).unwrap();
        assert!(out.data().iter().all(|&v| v == 10));
    }

    #[test]
    fn thirds_mapping() {
        let patch = grid(&[&[0, 128, 255]]);
        let reference = Histogram::from_values(&[50, 100, 150], 256);
        let out = match_histogram(&patch, &reference).unwrap();
        assert_eq!(out.data(), &[50, 100, 150]);
    }

    #[test]
    fn empty_reference_is_contract_error() {
        let patch = IntensityGrid::filled(1, 1, 0);
        assert!(match_histogram(&patch, &Histogram::from_values(&[], 256)).is_err());
    }

    #[test]
    fn histogram_cdf_ends_at_one() {
        let h = Histogram::from_values(&[0, 3, 3, 7], 8);
        assert_eq!(h.total(), 4);
        let cdf = h.cdf();
        assert!(cdf.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*cdf.last().unwrap(), 1.0);
    }

    /// Rank oracle: the i-th smallest patch value takes the i-th smallest reference value.
    fn rank_oracle(patch: &[u16], reference: &[u16]) -> Vec<u16> {
        let mut order: Vec<usize> = (0..patch.len()).collect();
        order.sort_by_key(|&i| patch[i]);
        let mut sorted_ref = reference.to_vec();
        sorted_ref.sort_unstable();
        let mut out = vec![0; patch.len()];
        for (rank, &i) in order.iter().enumerate() {
            out[i] = sorted_ref[rank];
        }
        out
    }

    #[test]
    fn distinct_equal_size_matches_rank_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let levels: Vec<u16> = (0..256).collect();
        for n in 1..=64usize {
            let reference: Vec<u16> = levels.choose_multiple(&mut rng, n).copied().collect();
            let mut patch_vals = reference.clone();
            patch_vals.shuffle(&mut rng);
            let patch = IntensityGrid::new(n, 1, patch_vals.clone()).unwrap();
            let out = match_histogram(&patch, &Histogram::from_values(&reference, 256)).unwrap();
            assert_eq!(out.data(), rank_oracle(&patch_vals, &reference).as_slice());
        }
    }

    #[test]
    fn sixteen_bit_reference() {
        let patch = grid(&[&[3, 1, 2]]);
        let reference = Histogram::from_values(&[60000, 100, 30000], 65536);
        let out = match_histogram(&patch, &reference).unwrap();
        assert_eq!(out.data(), &[60000, 100, 30000]);
    }

    fn pool_image(w: u32, h: u32, seed: u64) -> ImageRaster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h).map(|_| rng.random_range(0..256)).collect();
        ImageRaster::new(w, h, BitDepth::Eight, data).unwrap()
    }

    #[test]
    fn patch_is_a_window_of_the_pool_image() {
        let pool = vec![pool_image(256, 256, 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (patch, src) = sample_noise_patch(&mut rng, &pool, (16, 16)).unwrap();
        assert!(!src.tiled);
        let expected = pool[0]
            .crop(&crate::dataset::BoundingBox::new(src.x, src.y, 16, 16))
            .unwrap();
        assert_eq!(patch, expected);
    }

    #[test]
    fn whole_image_when_sizes_match() {
        let pool = vec![pool_image(12, 9, 3)];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (patch, _) = sample_noise_patch(&mut rng, &pool, (12, 9)).unwrap();
        assert_eq!(patch.data(), pool[0].data());
    }

    #[test]
    fn small_pool_is_tiled() {
        let pool = vec![pool_image(8, 8, 5), pool_image(6, 6, 6)];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (patch, src) = sample_noise_patch(&mut rng, &pool, (20, 20)).unwrap();
        assert!(src.tiled);
        assert_eq!(src.pool_index, 0);
        assert_eq!((patch.width(), patch.height()), (20, 20));
        for v in patch.data() {
            assert!(pool[0].data().contains(v));
        }
    }

    #[test]
    fn empty_pool_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_noise_patch(&mut rng, &[], (1, 1)).unwrap_err().is_config());
    }

    #[test]
    fn patch_sampling_is_deterministic() {
        let pool = vec![pool_image(40, 40, 8), pool_image(30, 50, 9)];
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            (0..20)
                .map(|_| sample_noise_patch(&mut rng, &pool, (10, 12)).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    proptest! {
        #[test]
        fn mapping_is_monotone_with_reference_support(
            patch in proptest::collection::vec(0u16..256, 1..200),
            reference in proptest::collection::vec(0u16..256, 1..200),
        ) {
            let hist = Histogram::from_values(&reference, 256);
            let map = LevelMap::build(&patch, &hist).unwrap();
            let mut prev = 0;
            for &(_, target) in map.entries() {
                prop_assert!(target >= prev);
                prop_assert!(reference.contains(&target));
                prev = target;
            }
            let grid = IntensityGrid::new(patch.len(), 1, patch).unwrap();
            let out = match_histogram(&grid, &hist).unwrap();
            for v in out.data() {
                prop_assert!(reference.contains(v));
            }
        }

        #[test]
        fn completeness(bits in proptest::collection::vec(0u8..2, 1..100), seed in any::<u64>()) {
            let n = bits.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sub = IntensityGrid::new(n, 1, (0..n).map(|_| rng.random_range(0..256)).collect()).unwrap();
            let mask = BinaryGrid::new(n, 1, bits).unwrap();
            let set = context_pixels(&sub, &mask, 256).unwrap();
            prop_assert_eq!(set.len() + mask.count_ones(), n);
        }
    }
}

//! 64-bit DCT perceptual hash, Hamming top-K retrieval and a hash k-NN baseline.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::image::{resample_bilinear, GrayImage};
use crate::manifest::FractureClass;

/// Side length of the DCT block.
pub const DCT_SIZE: usize = 32;
/// Side length of the low-frequency block that feeds the hash.
pub const HASH_BLOCK: usize = 8;
/// Coefficients closer to zero than this are snapped to exactly zero so that
/// rounding residue in structurally-zero coefficients cannot flip bits.
pub const COEFF_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HashError {
    #[error("dct2 expects a 32x32 block (1024 values), got {0}")]
    WrongShape(usize),
    #[error("duplicate image_id {0:?} in hash index")]
    DuplicateId(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("k = {k} must be in [1, {available}]")]
    InvalidK { k: usize, available: usize },
    #[error("class {0} is not a trainable class")]
    NotTrainable(FractureClass),
    #[error("malformed hash {0:?}: expected 16 hex digits")]
    Malformed(String),
    #[error("retrieval K must be at least 1")]
    ZeroK,
    #[error("max_hamming {0} exceeds 64")]
    MaxHammingTooLarge(u32),
}

/// 64-bit perceptual hash. Bit `i` (LSB = 0) is coefficient `i` of the 8x8
/// low-frequency block scanned row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PHash64(pub u64);

impl PHash64 {
    #[inline]
    pub fn bits(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn hamming(self, other: PHash64) -> u32 {
        hamming(self, other)
    }
}

impl fmt::Display for PHash64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for PHash64 {
    type Err = HashError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 16 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(HashError::Malformed(s.into()));
        }
        u64::from_str_radix(s, 16)
            .map(PHash64)
            .map_err(|_| HashError::Malformed(s.into()))
    }
}

#[inline]
pub fn hamming(a: PHash64, b: PHash64) -> u32 {
    (a.0 ^ b.0).count_ones()
}

/// DCT-II basis `T[u][x] = a(u) cos(pi (2x + 1) u / 64)` with orthonormal scaling.
fn dct_basis() -> Vec<f64> {
    let n = DCT_SIZE as f64;
    let mut t = alloc::vec![0.0; DCT_SIZE * DCT_SIZE];
    for u in 0..DCT_SIZE {
        let alpha = if u == 0 {
            libm::sqrt(1.0 / n)
        } else {
            libm::sqrt(2.0 / n)
        };
        for x in 0..DCT_SIZE {
            let angle = core::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2.0 * n);
            t[u * DCT_SIZE + x] = alpha * libm::cos(angle);
        }
    }
    t
}

/// Orthonormal 2-D DCT-II of a row-major 32x32 block: `T * block * T^T`.
pub fn dct2(block: &[f64]) -> Result<Vec<f64>, HashError> {
    const N: usize = DCT_SIZE;
    if block.len() != N * N {
        return Err(HashError::WrongShape(block.len()));
    }
    let t = dct_basis();
    // rows first: tmp[y][u] = sum_x block[y][x] * T[u][x]
    let mut tmp = alloc::vec![0.0; N * N];
    for y in 0..N {
        let row = &block[y * N..(y + 1) * N];
        for u in 0..N {
            let basis = &t[u * N..(u + 1) * N];
            tmp[y * N + u] = row.iter().zip(basis).map(|(a, b)| a * b).sum();
        }
    }
    // then columns: out[v][u] = sum_y T[v][y] * tmp[y][u]
    let mut out = alloc::vec![0.0; N * N];
    for v in 0..N {
        let basis = &t[v * N..(v + 1) * N];
        for u in 0..N {
            out[v * N + u] = (0..N).map(|y| basis[y] * tmp[y * N + u]).sum();
        }
    }
    Ok(out)
}

/// Median of a non-empty slice; the mean of the two middle values for even lengths.
fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Classical DCT pHash: bilinear 32x32 resample, DCT-II, top-left 8x8
/// block (DC included), bit set where the coefficient exceeds the block median.
pub fn phash(img: &GrayImage) -> PHash64 {
    let small = resample_bilinear(img, DCT_SIZE as u32, DCT_SIZE as u32);
    let coeffs = dct2(&small).expect("resample produced a 32x32 block");
    let mut low = [0.0f64; HASH_BLOCK * HASH_BLOCK];
    for v in 0..HASH_BLOCK {
        for u in 0..HASH_BLOCK {
            let c = coeffs[v * DCT_SIZE + u];
            low[v * HASH_BLOCK + u] = if c.abs() < COEFF_SNAP { 0.0 } else { c };
        }
    }
    let med = median(&low);
    let bits = low
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > med)
        .fold(0u64, |acc, (i, _)| acc | (1 << i));
    PHash64(bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrievalConfig {
    pub k: usize,
    pub max_hamming: u32,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 50,
            max_hamming: 64,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), HashError> {
        if self.k == 0 {
            return Err(HashError::ZeroK);
        }
        if self.max_hamming > 64 {
            return Err(HashError::MaxHammingTooLarge(self.max_hamming));
        }
        Ok(())
    }
}

/// One retrieval hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor<'a> {
    pub image_id: &'a str,
    pub distance: u32,
}

/// Immutable set of `(image_id, hash)` pairs queried by linear scan.
#[derive(Debug, Clone, Default)]
pub struct HashIndex {
    ids: Vec<String>,
    hashes: Vec<PHash64>,
}

impl HashIndex {
    pub fn build(entries: impl IntoIterator<Item = (String, PHash64)>) -> Result<Self, HashError> {
        let mut ids = Vec::new();
        let mut hashes = Vec::new();
        let mut seen = BTreeMap::new();
        for (id, h) in entries {
            if seen.insert(id.clone(), ()).is_some() {
                return Err(HashError::DuplicateId(id));
            }
            ids.push(id);
            hashes.push(h);
        }
        Ok(Self { ids, hashes })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, PHash64)> {
        self.ids.iter().map(String::as_str).zip(self.hashes.iter().copied())
    }

    /// Up to `k` entries within `max_hamming`, ordered by distance then image_id.
    pub fn query_topk(&self, probe: PHash64, cfg: &RetrievalConfig) -> Vec<Neighbor<'_>> {
        if cfg.k == 0 {
            return Vec::new();
        }
        let mut hits: Vec<Neighbor<'_>> = self
            .iter()
            .filter_map(|(image_id, h)| {
                let distance = hamming(probe, h);
                (distance <= cfg.max_hamming).then_some(Neighbor { image_id, distance })
            })
            .collect();
        let order = |a: &Neighbor<'_>, b: &Neighbor<'_>| {
            a.distance.cmp(&b.distance).then_with(|| a.image_id.cmp(b.image_id))
        };
        if hits.len() > cfg.k {
            hits.select_nth_unstable_by(cfg.k - 1, order);
            hits.truncate(cfg.k);
        }
        hits.sort_unstable_by(order);
        hits
    }
}

/// Outcome of a k-NN vote over hash distances.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnVote {
    pub predicted: FractureClass,
    /// Votes per trainable class, indexed by [`FractureClass::trainable_index`].
    pub votes: [usize; 3],
    pub mean_distance: [Option<f64>; 3],
}

impl KnnVote {
    /// Vote shares; the predicted class always attains the maximum.
    pub fn probabilities(&self) -> [f64; 3] {
        let total: usize = self.votes.iter().sum();
        self.votes.map(|v| v as f64 / total as f64)
    }
}

/// k-NN over Hamming distance. Neighbours are ranked by `(distance, position
/// in train)`; the majority class wins, ties go to the smaller mean distance
/// and then to class order.
pub fn knn_vote(
    train: &[(PHash64, FractureClass)],
    probe: PHash64,
    k: usize,
) -> Result<KnnVote, HashError> {
    if train.is_empty() {
        return Err(HashError::EmptyTrainingSet);
    }
    if k == 0 || k > train.len() {
        return Err(HashError::InvalidK {
            k,
            available: train.len(),
        });
    }
    if let Some(&(_, c)) = train.iter().find(|(_, c)| !c.is_trainable()) {
        return Err(HashError::NotTrainable(c));
    }
    let mut ranked: Vec<(u32, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, &(h, _))| (hamming(probe, h), i))
        .collect();
    ranked.select_nth_unstable(k - 1);
    ranked.truncate(k);

    let mut votes = [0usize; 3];
    let mut dist_sum = [0u64; 3];
    for &(d, i) in &ranked {
        let c = train[i].1.trainable_index().expect("checked above");
        votes[c] += 1;
        dist_sum[c] += u64::from(d);
    }
    let mean_distance: [Option<f64>; 3] =
        core::array::from_fn(|c| (votes[c] > 0).then(|| dist_sum[c] as f64 / votes[c] as f64));
    let best = (0..3)
        .filter(|&c| votes[c] > 0)
        .min_by(|&a, &b| {
            votes[b]
                .cmp(&votes[a])
                // equal votes: compare sums scaled by the shared count
                .then(dist_sum[a].cmp(&dist_sum[b]))
                .then(a.cmp(&b))
        })
        .expect("k >= 1");
    Ok(KnnVote {
        predicted: FractureClass::TRAINABLE[best],
        votes,
        mean_distance,
    })
}

/// Neighbour count used by the hash k-NN baseline.
pub const BASELINE_K: usize = 9;

pub fn knn_predict(
    train: &[(PHash64, FractureClass)],
    probe: PHash64,
    k: usize,
) -> Result<FractureClass, HashError> {
    knn_vote(train, probe, k).map(|v| v.predicted)
}

//! Key-value-gender memory with Fair Region addressing.
//!
//! The memory holds `m` unit-norm keys of dimension `d`, a value label
//! (vocabulary id) per key and a gender tag per key. Reads go through a
//! [`FairRegionView`]: the `k` nearest keys of each gender class, with the
//! same `k` for all three classes. Writes fold the query into its nearest
//! key and overwrite that slot's value and tag.
//!
//! Note that the write rule replaces the value and tag of the nearest slot
//! unconditionally, so a frequently hit key direction may flip its label
//! from one write to the next.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Rng, Tensor};

/// Tolerance on `|h| = 1` for query and write vectors.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum GenderTag {
    NoGender = 0,
    Male = 1,
    Female = 2,
}

impl GenderTag {
    /// Concatenation order of a Fair Region: male, female, no-gender.
    pub const REGION_ORDER: [GenderTag; 3] = [GenderTag::Male, GenderTag::Female, GenderTag::NoGender];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<GenderTag> {
        match code {
            0 => Some(GenderTag::NoGender),
            1 => Some(GenderTag::Male),
            2 => Some(GenderTag::Female),
            _ => None,
        }
    }
}

impl fmt::Display for GenderTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GenderTag::NoGender => "no-gender",
            GenderTag::Male => "male",
            GenderTag::Female => "female",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryModule {
    keys: Tensor,
    values: Vec<u32>,
    tags: Vec<GenderTag>,
    antipodal_writes: u64,
    journal: Option<Vec<(usize, GenderTag)>>,
}

/// Indices of a Fair Region, each list sorted by decreasing similarity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FairRegionView {
    pub male: Vec<usize>,
    pub female: Vec<usize>,
    pub no_gender: Vec<usize>,
}

impl FairRegionView {
    /// Entries per gender class.
    pub fn per_gender(&self) -> usize {
        self.male.len()
    }

    pub fn len(&self) -> usize {
        self.male.len() + self.female.len() + self.no_gender.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[male; female; no-gender]`.
    pub fn indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.male);
        out.extend_from_slice(&self.female);
        out.extend_from_slice(&self.no_gender);
        out
    }

    pub fn list(&self, tag: GenderTag) -> &[usize] {
        match tag {
            GenderTag::Male => &self.male,
            GenderTag::Female => &self.female,
            GenderTag::NoGender => &self.no_gender,
        }
    }
}

fn check_unit(h: &[f64]) -> Result<()> {
    let n = norm(h);
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::Contract(format!(
            "memory query must be unit norm, got |h| = {n}"
        )));
    }
    Ok(())
}

/// Higher similarity first, lower index on ties.
fn by_similarity(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

impl MemoryModule {
    /// Fresh memory: keys uniform on the unit sphere, tags round-robin
    /// `0, 1, 2, 0, 1, 2, ...`, every value `unk_id`.
    pub fn init(capacity: usize, dim: usize, n_min: usize, unk_id: u32, rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("memory key dimension must be at least 1".into()));
        }
        if capacity < 3 * n_min.max(1) {
            return Err(Error::Config(format!(
                "memory capacity {capacity} cannot hold {n_min} slots per gender"
            )));
        }
        let mut data = Vec::with_capacity(capacity * dim);
        for _ in 0..capacity {
            let mut row: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
            let mut n = norm(&row);
            while n == 0.0 {
                row = (0..dim).map(|_| rng.gaussian()).collect();
                n = norm(&row);
            }
            data.extend(row.iter().map(|v| v / n));
        }
        let tags = (0..capacity)
            .map(|i| GenderTag::from_code((i % 3) as u8).unwrap())
            .collect();
        Ok(MemoryModule {
            keys: Tensor::new(vec![capacity, dim], data)?,
            values: vec![unk_id; capacity],
            tags,
            antipodal_writes: 0,
            journal: None,
        })
    }

    /// Memory from explicit parts. Keys are normalized row-wise.
    pub fn from_parts(keys: Tensor, values: Vec<u32>, tags: Vec<GenderTag>) -> Result<Self> {
        if keys.shape().len() != 2 {
            return Err(Error::dim("memory", keys.shape(), &[values.len(), 0]));
        }
        let m = keys.shape()[0];
        if values.len() != m || tags.len() != m {
            return Err(Error::dim("memory", keys.shape(), &[values.len(), tags.len()]));
        }
        let mut mem = MemoryModule {
            keys,
            values,
            tags,
            antipodal_writes: 0,
            journal: None,
        };
        mem.renormalize_keys()?;
        Ok(mem)
    }

    pub fn capacity(&self) -> usize {
        self.keys.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.keys.shape()[1]
    }

    pub fn keys(&self) -> &Tensor {
        &self.keys
    }

    /// Mutable keys for gradient updates. Call
    /// [`renormalize_keys`](Self::renormalize_keys) afterwards.
    pub fn keys_mut(&mut self) -> &mut Tensor {
        &mut self.keys
    }

    pub fn key(&self, i: usize) -> &[f64] {
        self.keys.row(i)
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn tags(&self) -> &[GenderTag] {
        &self.tags
    }

    /// Writes whose key update was skipped because `h + K[i] = 0`.
    pub fn antipodal_writes(&self) -> u64 {
        self.antipodal_writes
    }

    pub fn tag_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for t in &self.tags {
            counts[t.code() as usize] += 1;
        }
        counts
    }

    /// Starts recording `(slot, tag)` for every subsequent write.
    pub fn enable_journal(&mut self) {
        self.journal = Some(Vec::new());
    }

    pub fn journal(&self) -> Option<&[(usize, GenderTag)]> {
        self.journal.as_deref()
    }

    /// Projects every key back onto the unit sphere.
    pub fn renormalize_keys(&mut self) -> Result<()> {
        let dim = self.dim();
        for (i, row) in self.keys.data_mut().chunks_mut(dim).enumerate() {
            let n = norm(row);
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::Contract(format!("memory key {i} has norm {n}")));
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(())
    }

    pub fn similarities(&self, h: &[f64]) -> Vec<f64> {
        (0..self.capacity()).map(|i| dot(h, self.key(i))).collect()
    }

    fn check_query(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.dim() {
            return Err(Error::dim("memory query", &[h.len()], self.keys.shape()));
        }
        check_unit(h)
    }

    /// `argmax_i h . K[i]`, lowest index on ties.
    pub fn nearest_index(&self, h: &[f64]) -> Result<usize> {
        self.check_query(h)?;
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for i in 0..self.capacity() {
            let s = dot(h, self.key(i));
            if s > best_sim {
                best_sim = s;
                best = i;
            }
        }
        Ok(best)
    }

    /// Merge-writes `(h, value, tag)` into the slot nearest to `h`:
    /// `K[i] <- normalize(h + K[i])`, `V[i] <- value`, `G[i] <- tag`.
    /// Returns the slot index.
    pub fn write(&mut self, h: &[f64], value: u32, tag: GenderTag) -> Result<usize> {
        let i = self.nearest_index(h)?;
        let row = self.keys.row_mut(i);
        let merged: Vec<f64> = row.iter().zip(h).map(|(k, x)| k + x).collect();
        let n = norm(&merged);
        if n > 0.0 {
            for (k, m) in row.iter_mut().zip(&merged) {
                *k = m / n;
            }
        } else {
            self.antipodal_writes += 1;
        }
        self.values[i] = value;
        self.tags[i] = tag;
        if let Some(j) = self.journal.as_mut() {
            j.push((i, tag));
        }
        Ok(i)
    }

    /// The `min(n, count)` slots tagged `tag` most similar to `h`, most
    /// similar first, lower index on ties.
    pub fn knn_gender(&self, h: &[f64], n: usize, tag: GenderTag) -> Result<Vec<usize>> {
        self.check_query(h)?;
        if n == 0 {
            return Err(Error::Contract("neighbour count must be at least 1".into()));
        }
        let mut scored: Vec<(f64, usize)> = (0..self.capacity())
            .filter(|&i| self.tags[i] == tag)
            .map(|i| (dot(h, self.key(i)), i))
            .collect();
        if scored.len() > n {
            scored.select_nth_unstable_by(n - 1, by_similarity);
            scored.truncate(n);
        }
        scored.sort_unstable_by(by_similarity);
        Ok(scored.into_iter().map(|(_, i)| i).collect())
    }

    /// Per-gender neighbourhoods truncated to a common length `k`, the
    /// smallest of the three returned list lengths.
    pub fn fair_region(&self, h: &[f64], n: usize) -> Result<FairRegionView> {
        let mut lists = Vec::with_capacity(3);
        for tag in GenderTag::REGION_ORDER {
            let idx = self.knn_gender(h, n, tag)?;
            if idx.is_empty() {
                return Err(Error::DegenerateRegion(tag));
            }
            lists.push(idx);
        }
        let k = lists.iter().map(Vec::len).min().unwrap_or(0);
        lists.iter_mut().for_each(|l| l.truncate(k));
        let no_gender = lists.pop().unwrap();
        let female = lists.pop().unwrap();
        let male = lists.pop().unwrap();
        Ok(FairRegionView {
            male,
            female,
            no_gender,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis_memory(tags: &[GenderTag]) -> MemoryModule {
        let d = tags.len();
        MemoryModule::from_parts(Tensor::identity(d), vec![3; d], tags.to_vec()).unwrap()
    }

    fn e(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn init_small_memory() {
        let mem = MemoryModule::init(6, 4, 1, 3, &mut Rng::new(1)).unwrap();
        let codes: Vec<u8> = mem.tags().iter().map(|t| t.code()).collect();
        assert_eq!(codes, vec![0, 1, 2, 0, 1, 2]);
        for i in 0..6 {
            assert!((norm(mem.key(i)) - 1.0).abs() < 1e-12);
        }
        assert!(mem.values().iter().all(|&v| v == 3));
        let again = MemoryModule::init(6, 4, 1, 3, &mut Rng::new(1)).unwrap();
        assert_eq!(mem.keys(), again.keys());
    }

    #[test]
    fn init_rejects_small_capacity() {
        assert!(matches!(
            MemoryModule::init(8, 4, 3, 3, &mut Rng::new(1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn nearest_on_basis_and_ties() {
        use GenderTag::*;
        let mem = basis_memory(&[Male, Male, Female, Female]);
        assert_eq!(mem.nearest_index(&e(4, 1)).unwrap(), 1);
        let same = Tensor::new(vec![3, 2], vec![0.6, 0.8, 0.6, 0.8, 0.6, 0.8]).unwrap();
        let mem = MemoryModule::from_parts(same, vec![0; 3], vec![Male, Female, NoGender]).unwrap();
        assert_eq!(mem.nearest_index(&[1.0, 0.0]).unwrap(), 0);
        assert!(matches!(mem.nearest_index(&[1.0, 1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn write_merges_nearest_key() {
        use GenderTag::*;
        let mut mem = basis_memory(&[Male, Female, NoGender]);
        let slot = mem.write(&e(3, 0), 9, Female).unwrap();
        assert_eq!(slot, 0);
        assert_eq!(mem.key(0), &[1.0, 0.0, 0.0]);
        assert_eq!(mem.values()[0], 9);
        assert_eq!(mem.tags()[0], Female);

        // Nearest to (0.8, 0.6, 0) is e1; the merge is the normalized sum.
        let mut mem = basis_memory(&[Male, Female, NoGender]);
        mem.write(&[0.8, 0.6, 0.0], 5, Male).unwrap();
        let s = (1.8f64 * 1.8 + 0.36).sqrt();
        assert!((mem.key(0)[0] - 1.8 / s).abs() < 1e-12);
        assert!((mem.key(0)[1] - 0.6 / s).abs() < 1e-12);
    }

    #[test]
    fn write_between_two_axes() {
        use GenderTag::*;
        let keys = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let mut mem = MemoryModule::from_parts(keys, vec![0, 0], vec![Male, Female]).unwrap();
        let h = [0.0, 1.0, 0.0];
        // h is orthogonal to both keys, so slot 0 wins the tie.
        mem.write(&h, 1, Male).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((mem.key(0)[0] - r).abs() < 1e-12);
        assert!((mem.key(0)[1] - r).abs() < 1e-12);
        assert_eq!(mem.key(1), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn antipodal_write_keeps_key() {
        use GenderTag::*;
        let keys = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let mut mem = MemoryModule::from_parts(keys, vec![0], vec![Male]).unwrap();
        mem.write(&[-1.0, 0.0], 4, Female).unwrap();
        assert_eq!(mem.key(0), &[1.0, 0.0]);
        assert_eq!(mem.values()[0], 4);
        assert_eq!(mem.tags()[0], Female);
        assert_eq!(mem.antipodal_writes(), 1);
    }

    #[test]
    fn knn_on_basis() {
        use GenderTag::*;
        let mem = basis_memory(&[Male, Male, Female, Female]);
        assert_eq!(mem.knn_gender(&e(4, 0), 1, Male).unwrap(), vec![0]);
        assert_eq!(mem.knn_gender(&e(4, 1), 5, Male).unwrap(), vec![1, 0]);
        assert!(mem.knn_gender(&e(4, 1), 2, NoGender).unwrap().is_empty());
        assert!(matches!(
            mem.fair_region(&e(4, 0), 2),
            Err(Error::DegenerateRegion(NoGender))
        ));
    }

    #[test]
    fn fair_region_on_six_slots() {
        let mem = MemoryModule::init(6, 4, 1, 3, &mut Rng::new(2)).unwrap();
        let h = mem.key(0).to_vec();
        let view = mem.fair_region(&h, 1).unwrap();
        assert_eq!(view.len(), 3);
        assert_eq!(view.no_gender, vec![0]);
        assert_eq!(mem.tags()[view.male[0]], GenderTag::Male);
        assert_eq!(mem.tags()[view.female[0]], GenderTag::Female);
    }

    #[test]
    fn fair_region_truncates_to_smallest_class() {
        use GenderTag::*;
        let mem = basis_memory(&[Male, Male, Male, Female, NoGender, NoGender]);
        let view = mem.fair_region(&e(6, 2), 3).unwrap();
        assert_eq!(view.per_gender(), 1);
        assert_eq!(view.male, vec![2]);
        assert_eq!(view.indices(), vec![2, 3, 4]);
    }

    #[test]
    fn tag_codes_round_trip() {
        for code in 0..3u8 {
            assert_eq!(GenderTag::from_code(code).unwrap().code(), code);
        }
        assert_eq!(GenderTag::from_code(3), None);
    }
}

//! Bag and label data model: feature bags, survival records, the cohort
//! manifest, time normalization, the binary bag container and
//! patient-level cross-validation splits.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};

pub const BAG_MAGIC: &[u8; 4] = b"AMB1";
pub const BAG_VERSION: u32 = 1;
pub const BAG_EXTENSION: &str = "amb";
pub const N_FOLDS: usize = 5;
pub const VALIDATION_FRACTION: f64 = 0.2;

/// One patient's patch features organised into equally sized regions.
///
/// Rows whose `valid` flag is false are zero padding added so that every
/// region holds exactly `patches_per_region` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBag {
    pub patient_id: String,
    pub features: Array2<f32>,
    pub coords: Vec<[i32; 2]>,
    pub region_ids: Vec<usize>,
    pub valid: Vec<bool>,
    pub patches_per_region: usize,
}

impl FeatureBag {
    pub fn n_patches(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_regions(&self) -> usize {
        self.region_ids.iter().max().map_or(0, |r| r + 1)
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn row(&self, j: usize) -> ArrayView1<'_, f32> {
        self.features.row(j)
    }

    /// Row indices of each region, in row order.
    pub fn region_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_regions()];
        for (j, &r) in self.region_ids.iter().enumerate() {
            members[r].push(j);
        }
        members
    }

    /// Checks the structural invariants of a bag.
    pub fn validate(&self) -> Result<()> {
        let m = self.n_patches();
        let fail = |msg: String| Err(Error::InvalidBag(msg));
        if m == 0 || self.feature_dim() == 0 {
            return fail("bag must have at least one patch and one feature".into());
        }
        if self.patches_per_region == 0 {
            return fail("patches_per_region must be positive".into());
        }
        if self.coords.len() != m || self.region_ids.len() != m || self.valid.len() != m {
            return fail("coords, region ids and mask must have one entry per patch".into());
        }
        if !m.is_multiple_of(self.patches_per_region) {
            return fail(format!(
                "{m} patches is not a multiple of {} per region",
                self.patches_per_region
            ));
        }
        let n_regions = m / self.patches_per_region;
        let mut counts = vec![0usize; n_regions];
        for &r in &self.region_ids {
            if r >= n_regions {
                return fail(format!("region id {r} out of range 0..{n_regions}"));
            }
            counts[r] += 1;
        }
        if let Some(r) = counts.iter().position(|&n| n != self.patches_per_region) {
            return fail(format!("region {r} holds {} patches", counts[r]));
        }
        let mut seen = HashSet::with_capacity(m);
        if !self.coords.iter().all(|c| seen.insert(*c)) {
            return fail("duplicate patch coordinates".into());
        }
        Ok(())
    }

    /// A new bag holding only the listed regions, renumbered in the given order.
    pub fn keep_regions(&self, keep: &[usize]) -> FeatureBag {
        let members = self.region_members();
        let rows: Vec<usize> = keep.iter().flat_map(|&r| members[r].iter().copied()).collect();
        let mut region_ids = Vec::with_capacity(rows.len());
        for (new_id, &r) in keep.iter().enumerate() {
            region_ids.extend(std::iter::repeat_n(new_id, members[r].len()));
        }
        FeatureBag {
            patient_id: self.patient_id.clone(),
            features: self.features.select(ndarray::Axis(0), &rows),
            coords: rows.iter().map(|&j| self.coords[j]).collect(),
            region_ids,
            valid: rows.iter().map(|&j| self.valid[j]).collect(),
            patches_per_region: self.patches_per_region,
        }
    }
}

/// Follow-up time and censorship of one patient. `delta = 1` means the
/// event was not observed and the true event time is strictly later than
/// `t_raw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub t_raw: f64,
    pub t: f64,
    pub delta: u8,
}

impl SurvivalRecord {
    pub fn is_censored(&self) -> bool {
        self.delta == 1
    }
}

/// Maps raw follow-up times onto [0, 1] by a cohort-level maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeNormalizer {
    pub t_max: f64,
}

impl TimeNormalizer {
    pub fn fit<I: IntoIterator<Item = f64>>(t_raw: I) -> Result<Self> {
        t_raw
            .into_iter()
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
            .map(|t_max| TimeNormalizer { t_max })
            .ok_or(Error::NoLabeledRecords)
    }

    /// Scaled time, clipped at 1. A zero normalizer maps everything to 0.
    pub fn apply(&self, t_raw: f64) -> f64 {
        if self.t_max > 0.0 {
            (t_raw / self.t_max).min(1.0)
        } else {
            0.0
        }
    }

    pub fn record(&self, t_raw: f64, delta: u8) -> SurvivalRecord {
        SurvivalRecord {
            t_raw,
            t: self.apply(t_raw),
            delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub bag_path: PathBuf,
    pub t_raw: Option<f64>,
    pub delta: Option<u8>,
    pub fold: Option<usize>,
    /// Normalized time, filled by [`normalize_times`].
    #[serde(skip)]
    pub t: Option<f64>,
}

impl ManifestEntry {
    pub fn label_available(&self) -> bool {
        self.t_raw.is_some() && self.delta.is_some()
    }

    pub fn record(&self) -> Option<SurvivalRecord> {
        match (self.t_raw, self.t, self.delta) {
            (Some(t_raw), Some(t), Some(delta)) => Some(SurvivalRecord { t_raw, t, delta }),
            _ => None,
        }
    }
}

/// Cohort metadata: one entry per patient plus the time normalizer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CohortManifest {
    pub entries: Vec<ManifestEntry>,
    pub t_max: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    patient_id: String,
    bag_path: String,
    t_raw: Option<f64>,
    delta: Option<u8>,
    fold: Option<usize>,
}

impl CohortManifest {
    pub fn labeled(&self) -> impl Iterator<Item = (usize, &ManifestEntry)> {
        self.entries.iter().enumerate().filter(|(_, e)| e.label_available())
    }

    pub fn fold_assignments(&self) -> BTreeMap<String, usize> {
        self.entries
            .iter()
            .filter_map(|e| e.fold.map(|f| (e.patient_id.clone(), f)))
            .collect()
    }

    /// Reads a manifest CSV; relative bag paths resolve against the CSV's directory.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut reader = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        for row in reader.deserialize() {
            let row: ManifestRow = row?;
            let bag_path = PathBuf::from(&row.bag_path);
            let bag_path = if bag_path.is_relative() {
                base.join(bag_path)
            } else {
                bag_path
            };
            if let Some(d) = row.delta {
                if d > 1 {
                    return Err(Error::Config(format!(
                        "delta for {} must be 0 or 1, got {d}",
                        row.patient_id
                    )));
                }
            }
            entries.push(ManifestEntry {
                patient_id: row.patient_id,
                bag_path,
                t_raw: row.t_raw,
                delta: row.delta,
                fold: row.fold,
                t: None,
            });
        }
        Ok(CohortManifest {
            entries,
            t_max: None,
        })
    }

    /// Writes the manifest CSV. Bag paths under the CSV's directory are written relative.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut writer = csv::Writer::from_path(path)?;
        for e in &self.entries {
            let rel = e.bag_path.strip_prefix(base).unwrap_or(&e.bag_path);
            writer.serialize(ManifestRow {
                patient_id: e.patient_id.clone(),
                bag_path: rel.to_string_lossy().into_owned(),
                t_raw: e.t_raw,
                delta: e.delta,
                fold: e.fold,
            })?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Normalizes every labeled entry by the maximum labeled follow-up time.
pub fn normalize_times(mut manifest: CohortManifest) -> Result<CohortManifest> {
    let normalizer = TimeNormalizer::fit(manifest.labeled().filter_map(|(_, e)| e.t_raw))?;
    apply_normalizer(&mut manifest, normalizer);
    Ok(manifest)
}

/// Normalizes with a maximum fitted on a subset (typically the training
/// patients); entries outside the subset are clipped at 1.
pub fn normalize_times_from(mut manifest: CohortManifest, fit_on: &[usize]) -> Result<CohortManifest> {
    let normalizer = TimeNormalizer::fit(
        fit_on
            .iter()
            .filter_map(|&i| manifest.entries[i].t_raw.filter(|_| manifest.entries[i].label_available())),
    )?;
    apply_normalizer(&mut manifest, normalizer);
    Ok(manifest)
}

fn apply_normalizer(manifest: &mut CohortManifest, normalizer: TimeNormalizer) {
    for e in manifest.entries.iter_mut() {
        e.t = match (e.t_raw, e.delta) {
            (Some(t_raw), Some(_)) => Some(normalizer.apply(t_raw)),
            _ => None,
        };
    }
    manifest.t_max = Some(normalizer.t_max);
}

/// Writes a bag in the `AMB1` little-endian container format.
pub fn write_bag(bag: &FeatureBag, path: &Path) -> Result<()> {
    bag.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    encode_bag(bag, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn encode_bag<W: Write>(bag: &FeatureBag, w: &mut W) -> Result<()> {
    let to_u32 = |n: usize| u32::try_from(n).map_err(|_| Error::InvalidBag(format!("{n} exceeds u32")));
    w.write_all(BAG_MAGIC)?;
    w.write_u32::<LittleEndian>(BAG_VERSION)?;
    w.write_u32::<LittleEndian>(to_u32(bag.n_patches())?)?;
    w.write_u32::<LittleEndian>(to_u32(bag.feature_dim())?)?;
    w.write_u32::<LittleEndian>(to_u32(bag.patches_per_region)?)?;
    for &x in bag.features.iter() {
        w.write_f32::<LittleEndian>(x)?;
    }
    for c in &bag.coords {
        w.write_i32::<LittleEndian>(c[0])?;
        w.write_i32::<LittleEndian>(c[1])?;
    }
    for &r in &bag.region_ids {
        let r = i32::try_from(r).map_err(|_| Error::InvalidBag(format!("region id {r} exceeds i32")))?;
        w.write_i32::<LittleEndian>(r)?;
    }
    for &v in &bag.valid {
        w.write_u8(u8::from(v))?;
    }
    Ok(())
}

/// Reads an `AMB1` container. The patient id is taken from the file stem.
pub fn read_bag(path: &Path) -> Result<FeatureBag> {
    let patient_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut r = BufReader::new(File::open(path)?);
    decode_bag(&mut r, patient_id)
}

pub fn decode_bag<R: Read>(r: &mut R, patient_id: String) -> Result<FeatureBag> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::UnrecognizedContainer)?;
    if &magic != BAG_MAGIC {
        return Err(Error::UnrecognizedContainer);
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| Error::UnrecognizedContainer)?;
    if version != BAG_VERSION {
        return Err(Error::UnrecognizedContainer);
    }
    let corrupt = |what: &str| Error::CorruptBag(format!("truncated {what}"));
    let mut header = [0u32; 3];
    for h in header.iter_mut() {
        *h = r.read_u32::<LittleEndian>().map_err(|_| corrupt("header"))?;
    }
    let [m, c, s] = header.map(|v| v as usize);
    let n_features = m
        .checked_mul(c)
        .ok_or_else(|| Error::CorruptBag("header dimensions overflow".into()))?;
    let mut features = Vec::with_capacity(n_features.min(1 << 24));
    for _ in 0..n_features {
        features.push(r.read_f32::<LittleEndian>().map_err(|_| corrupt("feature rows"))?);
    }
    let mut coords = Vec::with_capacity(m.min(1 << 24));
    for _ in 0..m {
        let row = r.read_i32::<LittleEndian>().map_err(|_| corrupt("coordinates"))?;
        let col = r.read_i32::<LittleEndian>().map_err(|_| corrupt("coordinates"))?;
        coords.push([row, col]);
    }
    let mut region_ids = Vec::with_capacity(m.min(1 << 24));
    for _ in 0..m {
        let id = r.read_i32::<LittleEndian>().map_err(|_| corrupt("region ids"))?;
        region_ids.push(usize::try_from(id).map_err(|_| Error::CorruptBag(format!("negative region id {id}")))?);
    }
    let mut valid = Vec::with_capacity(m.min(1 << 24));
    for _ in 0..m {
        valid.push(r.read_u8().map_err(|_| corrupt("validity mask"))? != 0);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::CorruptBag("trailing bytes after mask".into()));
    }
    let features = Array2::from_shape_vec((m, c), features)
        .map_err(|e| Error::CorruptBag(e.to_string()))?;
    let bag = FeatureBag {
        patient_id,
        features,
        coords,
        region_ids,
        valid,
        patches_per_region: s,
    };
    bag.validate().map_err(|e| Error::CorruptBag(e.to_string()))?;
    Ok(bag)
}

/// Assigns every patient to one of five test folds, deterministically in `seed`.
pub fn make_cv_splits(mut manifest: CohortManifest, seed: u64) -> Result<CohortManifest> {
    let n_labeled = manifest.labeled().count();
    if n_labeled < N_FOLDS {
        return Err(Error::TooFewPatients {
            needed: N_FOLDS,
            found: n_labeled,
        });
    }
    let mut order: Vec<usize> = (0..manifest.entries.len()).collect();
    order.shuffle(&mut rng::rng_for(seed, &[stream::CV]));
    for (pos, &i) in order.iter().enumerate() {
        manifest.entries[i].fold = Some(pos % N_FOLDS);
    }
    Ok(manifest)
}

/// Patient indices of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Training-fold patients without labels.
    pub unlabeled: Vec<usize>,
}

/// Splits fold `fold` into test patients and an 80/20 train/validation
/// partition of the labeled remainder.
pub fn split_fold(manifest: &CohortManifest, fold: usize, seed: u64) -> Result<FoldSplit> {
    if fold >= N_FOLDS {
        return Err(Error::Config(format!("fold {fold} out of range 0..{N_FOLDS}")));
    }
    if manifest.entries.iter().any(|e| e.fold.is_none()) {
        return Err(Error::Config("manifest has patients without a fold".into()));
    }
    let mut test = Vec::new();
    let mut pool = Vec::new();
    let mut unlabeled = Vec::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        match (e.fold == Some(fold), e.label_available()) {
            (true, true) => test.push(i),
            (true, false) => {}
            (false, true) => pool.push(i),
            (false, false) => unlabeled.push(i),
        }
    }
    pool.shuffle(&mut rng::rng_for(seed, &[stream::CV, fold as u64]));
    let n_val = (pool.len() as f64 * VALIDATION_FRACTION).round() as usize;
    let mut validation = pool.split_off(pool.len() - n_val);
    let mut train = pool;
    train.sort_unstable();
    validation.sort_unstable();
    Ok(FoldSplit {
        train,
        validation,
        test,
        unlabeled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn entry(id: &str, t_raw: Option<f64>) -> ManifestEntry {
        ManifestEntry {
            patient_id: id.into(),
            bag_path: PathBuf::from(format!("{id}.amb")),
            t_raw,
            delta: t_raw.map(|_| 0),
            fold: None,
            t: None,
        }
    }

    fn manifest(times: &[f64]) -> CohortManifest {
        CohortManifest {
            entries: times
                .iter()
                .enumerate()
                .map(|(i, &t)| entry(&format!("p{i}"), Some(t)))
                .collect(),
            t_max: None,
        }
    }

    pub(crate) fn small_bag() -> FeatureBag {
        let features = Array2::from_shape_fn((16, 4), |(i, j)| (i * 4 + j) as f32 * 0.25 - 3.0);
        FeatureBag {
            patient_id: "p0".into(),
            features,
            coords: (0..16i32).map(|j| [j / 4, j % 4]).collect(),
            region_ids: (0..16).map(|j| j / 4).collect(),
            valid: (0..16).map(|j| j != 5).collect(),
            patches_per_region: 4,
        }
    }

    #[test]
    fn normalize_scales_by_max() {
        let m = normalize_times(manifest(&[100.0, 50.0, 200.0])).unwrap();
        assert_eq!(m.t_max, Some(200.0));
        let t: Vec<f64> = m.entries.iter().map(|e| e.t.unwrap()).collect();
        assert_eq!(t, vec![0.5, 0.25, 1.0]);
    }

    #[test]
    fn normalize_zero_time() {
        let m = normalize_times(manifest(&[0.0])).unwrap();
        assert_eq!(m.entries[0].t, Some(0.0));
    }

    #[test]
    fn eval_times_clip_at_one() {
        let n = TimeNormalizer { t_max: 200.0 };
        assert_eq!(n.apply(300.0), 1.0);
    }

    #[test]
    fn normalize_requires_labels() {
        let m = CohortManifest {
            entries: vec![entry("u", None)],
            t_max: None,
        };
        let err = normalize_times(m).unwrap_err();
        assert_eq!(err.to_string(), "no labeled survival records");
    }

    #[test]
    fn normalize_is_idempotent() {
        let once = normalize_times(manifest(&[3.0, 9.0, 1.5])).unwrap();
        let twice = normalize_times(once.clone()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn normalize_from_subset_clips_others() {
        let m = normalize_times_from(manifest(&[100.0, 200.0, 300.0]), &[0, 1]).unwrap();
        assert_eq!(m.t_max, Some(200.0));
        assert_eq!(m.entries[2].t, Some(1.0));
    }

    #[test]
    fn bag_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p0.amb");
        let bag = small_bag();
        write_bag(&bag, &path).unwrap();
        assert_eq!(read_bag(&path).unwrap(), bag);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = Vec::new();
        encode_bag(&small_bag(), &mut bytes).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        let err = decode_bag(&mut bytes.as_slice(), "p".into()).unwrap_err();
        assert_eq!(err.to_string(), "unrecognized bag container");
    }

    #[test]
    fn bad_version_rejected() {
        let mut bytes = Vec::new();
        encode_bag(&small_bag(), &mut bytes).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_bag(&mut bytes.as_slice(), "p".into()),
            Err(Error::UnrecognizedContainer)
        ));
    }

    #[test]
    fn header_larger_than_payload_is_corrupt() {
        let mut bytes = Vec::new();
        encode_bag(&small_bag(), &mut bytes).unwrap();
        // m = 32 while only 16 rows follow
        bytes[8..12].copy_from_slice(&32u32.to_le_bytes());
        let err = decode_bag(&mut bytes.as_slice(), "p".into()).unwrap_err();
        assert!(err.to_string().starts_with("corrupt bag"), "{err}");
    }

    #[test]
    fn validate_catches_duplicate_coords() {
        let mut bag = small_bag();
        bag.coords[1] = bag.coords[0];
        assert!(bag.validate().is_err());
    }

    #[test]
    fn keep_regions_renumbers() {
        let bag = small_bag();
        let kept = bag.keep_regions(&[2, 0]);
        assert_eq!(kept.n_patches(), 8);
        assert_eq!(kept.region_ids, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(kept.row(0), bag.row(8));
        kept.validate().unwrap();
    }

    #[test]
    fn cv_splits_are_deterministic_partitions() {
        let times: Vec<f64> = (0..100).map(f64::from).collect();
        let a = make_cv_splits(manifest(&times), 7).unwrap();
        let b = make_cv_splits(manifest(&times), 7).unwrap();
        assert_eq!(a.fold_assignments(), b.fold_assignments());
        for fold in 0..N_FOLDS {
            let split = split_fold(&a, fold, 7).unwrap();
            assert_eq!(split.test.len(), 20);
            assert_eq!(split.validation.len(), 16);
            assert_eq!(split.train.len(), 64);
            let mut all: Vec<usize> = split
                .train
                .iter()
                .chain(&split.validation)
                .chain(&split.test)
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..100).collect::<Vec<_>>());
        }
        let mut tested: Vec<usize> = (0..N_FOLDS)
            .flat_map(|f| split_fold(&a, f, 7).unwrap().test)
            .collect();
        tested.sort_unstable();
        assert_eq!(tested, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn cv_splits_need_five_patients() {
        let err = make_cv_splits(manifest(&[1.0, 2.0, 3.0, 4.0]), 0).unwrap_err();
        assert!(matches!(err, Error::TooFewPatients { found: 4, .. }));
    }

    #[test]
    fn manifest_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = make_cv_splits(manifest(&[1.0, 2.0, 3.0, 4.0, 5.0]), 1).unwrap();
        m.entries.push(entry("unlabeled", None));
        for e in m.entries.iter_mut() {
            e.bag_path = dir.path().join("bags").join(&e.bag_path);
        }
        let path = dir.path().join("manifest.csv");
        m.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("patient_id,bag_path,t_raw,delta,fold\n"));
        assert!(text.contains("unlabeled,bags/unlabeled.amb,,,\n"));
        assert_eq!(CohortManifest::read_csv(&path).unwrap(), m);
    }
}

//! Dataset ingestion (CIFAR-10 binary batches, labelled CSV vectors),
//! synthetic generators and contiguous fold splits.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_CLASSES: usize = 10;
/// One label byte followed by 3×1024 channel-planar pixel bytes.
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_CHANNELS * CIFAR_SIDE * CIFAR_SIDE;

/// 8-bit raster stored channel-planar (all of channel 0 row-major, then
/// channel 1, ...), which is the CIFAR-10 byte layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: data.len(),
            });
        }
        if channels == 0 {
            return Err(Error::InvalidParameter(
                "image needs at least one channel".into(),
            ));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, y: usize, x: usize) -> u8 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, y: usize, x: usize, value: u8) {
        self.data[(channel * self.height + y) * self.width + x] = value;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledImageSet {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Appends another set; both must hold images of the same shape.
    pub fn extend(&mut self, other: LabeledImageSet) -> Result<()> {
        if let (Some(a), Some(b)) = (self.images.first(), other.images.first()) {
            if (a.height, a.width, a.channels) != (b.height, b.width, b.channels) {
                return Err(Error::InvalidParameter(
                    "image sets have different image dimensions".into(),
                ));
            }
        }
        self.images.extend(other.images);
        self.labels.extend(other.labels);
        Ok(())
    }
}

/// Decodes CIFAR-10 binary records.
pub fn parse_cifar10(bytes: &[u8]) -> Result<LabeledImageSet> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(Error::FileSizeMismatch {
            size: bytes.len(),
            record: CIFAR_RECORD_BYTES,
        });
    }
    let mut set = LabeledImageSet::default();
    for record in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::LabelOutOfRange {
                label,
                class_count: CIFAR_CLASSES,
            });
        }
        set.labels.push(label);
        set.images.push(Image {
            height: CIFAR_SIDE,
            width: CIFAR_SIDE,
            channels: CIFAR_CHANNELS,
            data: record[1..].to_vec(),
        });
    }
    Ok(set)
}

/// Reads every record of a CIFAR-10 batch file.
pub fn read_cifar10_batch(path: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar10(&bytes)
}

/// Reads a CIFAR-10 batch file and checks that it holds `expected_count` records.
pub fn load_cifar10_batch(
    path: impl AsRef<Path>,
    expected_count: usize,
) -> Result<LabeledImageSet> {
    let set = read_cifar10_batch(path)?;
    if set.len() != expected_count {
        return Err(Error::RecordCountMismatch {
            expected: expected_count,
            found: set.len(),
        });
    }
    Ok(set)
}

/// Encodes a set in the CIFAR-10 binary layout.
pub fn encode_cifar10(set: &LabeledImageSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(set.len() * CIFAR_RECORD_BYTES);
    for (image, &label) in set.images.iter().zip(&set.labels) {
        if (image.height, image.width, image.channels) != (CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS) {
            return Err(Error::InvalidParameter(format!(
                "CIFAR-10 records are {CIFAR_SIDE}x{CIFAR_SIDE}x{CIFAR_CHANNELS}, got {}x{}x{}",
                image.height, image.width, image.channels
            )));
        }
        if label >= CIFAR_CLASSES {
            return Err(Error::LabelOutOfRange {
                label,
                class_count: CIFAR_CLASSES,
            });
        }
        out.push(label as u8);
        out.extend_from_slice(&image.data);
    }
    Ok(out)
}

pub fn write_cifar10_batch(path: impl AsRef<Path>, set: &LabeledImageSet) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_cifar10(set)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Real-valued points with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointSet {
    pub points: Array2<f64>,
    pub labels: Vec<usize>,
}

impl LabeledPointSet {
    pub fn new(points: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if points.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: points.nrows(),
                got: labels.len(),
            });
        }
        if points.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "points need at least one coordinate".into(),
            ));
        }
        Ok(LabeledPointSet { points, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.points.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

/// Loads `label,f1,f2,...` lines. Blank lines are skipped; every row must
/// have the same number of features.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledPointSet> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut dim = None;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line + 1,
            message,
        };
        if record.len() < 2 {
            return Err(parse_err(
                "expected a label and at least one feature".into(),
            ));
        }
        let label: usize = record[0]
            .parse()
            .map_err(|_| parse_err(format!("bad label {:?}", &record[0])))?;
        let features = record.len() - 1;
        if *dim.get_or_insert(features) != features {
            return Err(parse_err(format!(
                "expected {} features, found {features}",
                dim.unwrap()
            )));
        }
        for field in record.iter().skip(1) {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|_| parse_err(format!("bad number {field:?}")))?,
            );
        }
        labels.push(label);
    }
    let dim = dim.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "no samples".into(),
    })?;
    let points =
        Array2::from_shape_vec((labels.len(), dim), values).expect("shape checked per row");
    LabeledPointSet::new(points, labels)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Two concentric rings centred at the origin, class 0 on radius `r1` and
/// class 1 on `r2`, with isotropic Gaussian noise. Samples alternate between
/// the classes so that contiguous folds stay balanced.
pub fn make_two_rings(
    n_per_class: usize,
    radii: (f64, f64),
    noise_sigma: f64,
    seed: u64,
) -> Result<LabeledPointSet> {
    if n_per_class == 0 {
        return Err(Error::InvalidParameter(
            "n_per_class must be at least 1".into(),
        ));
    }
    if radii.0.partial_cmp(&radii.1) != Some(std::cmp::Ordering::Less) {
        return Err(Error::InvalidParameter(format!(
            "ring radii must satisfy r1 < r2, got {radii:?}"
        )));
    }
    let noise = Normal::new(0.0, noise_sigma)
        .map_err(|_| Error::InvalidParameter(format!("bad noise sigma {noise_sigma}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * n_per_class;
    let mut points = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let r = if class == 0 { radii.0 } else { radii.1 };
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let (dx, dy) = if noise_sigma > 0.0 {
            (noise.sample(&mut rng), noise.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        points[[i, 0]] = r * theta.cos() + dx;
        points[[i, 1]] = r * theta.sin() + dy;
        labels.push(class);
    }
    LabeledPointSet::new(points, labels)
}

/// Isotropic Gaussian blobs, one per centre, samples interleaved by class.
pub fn make_blobs(
    centers: &[Vec<f64>],
    n_per_class: usize,
    sigma: f64,
    seed: u64,
) -> Result<LabeledPointSet> {
    let dim = centers
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidParameter("at least one blob centre required".into()))?;
    if let Some(bad) = centers.iter().find(|c| c.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let noise = Normal::new(0.0, sigma)
        .map_err(|_| Error::InvalidParameter(format!("bad sigma {sigma}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = centers.len();
    let n = k * n_per_class;
    let mut points = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        for (j, c) in centers[class].iter().enumerate() {
            points[[i, j]] = c + noise.sample(&mut rng);
        }
        labels.push(class);
    }
    LabeledPointSet::new(points, labels)
}

/// Random RGB images made of oriented gratings, bright blobs and pixel noise.
/// Labels cycle through `classes`; each class has its own dominant grating
/// orientation so the set carries some class structure.
pub fn make_textured_images(
    count: usize,
    side: usize,
    classes: usize,
    seed: u64,
) -> LabeledImageSet {
    let classes = classes.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = LabeledImageSet::default();
    for i in 0..count {
        let class = i % classes;
        let base_angle = std::f64::consts::PI * class as f64 / classes as f64;
        let angle = base_angle + rng.random_range(-0.3..0.3);
        let freq = rng.random_range(0.25..0.9);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let (ca, sa) = (angle.cos(), angle.sin());
        let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.0..side as f64),
                    rng.random_range(0.0..side as f64),
                    rng.random_range(1.5..5.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let tint: [f64; 3] = [
            rng.random_range(0.6..1.0),
            rng.random_range(0.6..1.0),
            rng.random_range(0.6..1.0),
        ];
        let mut image = Image::filled(side, side, 3, 0);
        for y in 0..side {
            for x in 0..side {
                let (fx, fy) = (x as f64, y as f64);
                let mut v = (freq * (ca * fx + sa * fy) + phase).sin();
                for &(bx, by, br, amp) in &blobs {
                    let d2 = (fx - bx).powi(2) + (fy - by).powi(2);
                    v += amp * (-d2 / (2.0 * br * br)).exp();
                }
                for (c, t) in tint.iter().enumerate() {
                    let noise = rng.random_range(-0.15..0.15);
                    let value = 128.0 + 60.0 * t * v + 60.0 * noise;
                    image.set(c, y, x, value.clamp(0.0, 255.0) as u8);
                }
            }
        }
        set.images.push(image);
        set.labels.push(class);
    }
    set
}

/// Fold index per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    assignments: Vec<usize>,
    fold_count: usize,
}

impl FoldSplit {
    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn fold_count(&self) -> usize {
        self.fold_count
    }

    pub fn members(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices in any of `folds`, in sample order.
    pub fn members_of(&self, folds: &[usize]) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, f)| folds.contains(f))
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices outside `fold`, in sample order.
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Contiguous split: the first `fold_sizes[0]` samples form fold 0, and so on.
pub fn split_folds(n: usize, fold_sizes: &[usize]) -> Result<FoldSplit> {
    let sum: usize = fold_sizes.iter().sum();
    if sum != n {
        return Err(Error::SizeSumMismatch { sum, n });
    }
    let assignments = fold_sizes
        .iter()
        .enumerate()
        .flat_map(|(fold, &size)| std::iter::repeat_n(fold, size))
        .collect();
    Ok(FoldSplit {
        assignments,
        fold_count: fold_sizes.len(),
    })
}

/// Sizes for `folds` contiguous folds that differ by at most one, larger first.
pub fn even_fold_sizes(n: usize, folds: usize) -> Result<Vec<usize>> {
    if folds == 0 {
        return Err(Error::InvalidParameter(
            "fold count must be positive".into(),
        ));
    }
    if folds > n {
        return Err(Error::EmptyFold { fold: n });
    }
    let base = n / folds;
    let extra = n % folds;
    Ok((0..folds).map(|f| base + usize::from(f < extra)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(fill, CIFAR_RECORD_BYTES - 1));
        r
    }

    #[test]
    fn hand_built_two_record_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let mut bytes = record(3, 0);
        bytes.extend(record(7, 255));
        fs::write(&path, &bytes).unwrap();

        let set = load_cifar10_batch(&path, 2).unwrap();
        assert_eq!(set.labels, vec![3, 7]);
        assert!(set.images[0].as_bytes().iter().all(|&b| b == 0));
        assert!(set.images[1].as_bytes().iter().all(|&b| b == 255));
        assert_eq!(set.images[1].get(2, 31, 31), 255);
    }

    #[test]
    fn channel_planar_layout() {
        let mut bytes = record(1, 0);
        // green channel, row 2, column 5
        bytes[1 + 1024 + 2 * 32 + 5] = 42;
        let set = parse_cifar10(&bytes).unwrap();
        assert_eq!(set.images[0].get(1, 2, 5), 42);
        assert_eq!(set.images[0].get(0, 2, 5), 0);
    }

    #[test]
    fn empty_file_is_empty_set() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        fs::write(&path, []).unwrap();
        assert!(load_cifar10_batch(&path, 0).unwrap().is_empty());
    }

    #[test]
    fn truncated_record_is_rejected() {
        let err = parse_cifar10(&vec![0u8; 3072]).unwrap_err();
        assert!(matches!(
            err,
            Error::FileSizeMismatch {
                size: 3072,
                record: 3073
            }
        ));
    }

    #[test]
    fn label_out_of_range() {
        let err = parse_cifar10(&record(10, 0)).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 10, .. }));
    }

    #[test]
    fn wrong_record_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.bin");
        fs::write(&path, record(0, 1)).unwrap();
        assert!(matches!(
            load_cifar10_batch(&path, 2),
            Err(Error::RecordCountMismatch {
                expected: 2,
                found: 1
            })
        ));
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_cifar10_batch("/nonexistent/batch.bin").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/batch.bin"));
    }

    proptest! {
        #[test]
        fn cifar_round_trip(labels in proptest::collection::vec(0usize..10, 0..4), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let images = labels
                .iter()
                .map(|_| {
                    let data = (0..3072).map(|_| rng.random::<u8>()).collect();
                    Image::new(32, 32, 3, data).unwrap()
                })
                .collect();
            let set = LabeledImageSet { images, labels };
            let bytes = encode_cifar10(&set).unwrap();
            prop_assert_eq!(parse_cifar10(&bytes).unwrap(), set);
        }

        #[test]
        fn folds_partition(sizes in proptest::collection::vec(0usize..20, 1..8)) {
            let n: usize = sizes.iter().sum();
            let split = split_folds(n, &sizes).unwrap();
            let mut seen = vec![0usize; n];
            for (f, &size) in sizes.iter().enumerate() {
                let members = split.members(f);
                prop_assert_eq!(members.len(), size);
                for i in members {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn noiseless_rings_sit_on_radius() {
        let set = make_two_rings(4, (1.0, 2.0), 0.0, 11).unwrap();
        assert_eq!(set.len(), 8);
        for (row, &label) in set.points.rows().into_iter().zip(&set.labels) {
            let r = row[0].hypot(row[1]);
            let target = if label == 0 { 1.0 } else { 2.0 };
            assert!((r - target).abs() < 1e-12);
        }
    }

    #[test]
    fn rings_are_deterministic_and_balanced() {
        let a = make_two_rings(100, (1.0, 2.0), 0.05, 3).unwrap();
        let b = make_two_rings(100, (1.0, 2.0), 0.05, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels.iter().filter(|&&l| l == 0).count(), 100);
        assert_eq!(a.labels.iter().filter(|&&l| l == 1).count(), 100);
        assert!(make_two_rings(3, (2.0, 1.0), 0.0, 0).is_err());
    }

    #[test]
    fn fold_examples() {
        let split = split_folds(60, &[10; 6]).unwrap();
        assert_eq!(split.fold_count(), 6);
        for f in 0..6 {
            assert_eq!(split.members(f), (10 * f..10 * (f + 1)).collect::<Vec<_>>());
        }
        assert_eq!(split_folds(5, &[5]).unwrap().assignments(), &[0; 5]);
        assert!(matches!(
            split_folds(5, &[2, 2]),
            Err(Error::SizeSumMismatch { sum: 4, n: 5 })
        ));
    }

    #[test]
    fn even_sizes() {
        assert_eq!(even_fold_sizes(10, 3).unwrap(), vec![4, 3, 3]);
        assert!(matches!(
            even_fold_sizes(3, 4),
            Err(Error::EmptyFold { .. })
        ));
    }

    #[test]
    fn csv_loader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        fs::write(&path, "0, 1.5, -2\n1,3.25,4e-1\n\n").unwrap();
        let set = load_csv(&path).unwrap();
        assert_eq!(set.labels, vec![0, 1]);
        assert_eq!(set.points, ndarray::array![[1.5, -2.0], [3.25, 0.4]]);

        fs::write(&path, "0,1\n1,2,3\n").unwrap();
        assert!(load_csv(&path).is_err());
        fs::write(&path, "x,1\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 1, .. })));
    }
}

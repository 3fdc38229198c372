//! Dataset loading and feature extraction.

use besvm::basis::class_members;
use besvm::datasets::{
    load_csv, make_blobs, make_textured_images, make_two_rings, read_cifar10_batch,
    LabeledImageSet, LabeledPointSet,
};
use besvm::embedding::Exemplar;
use besvm::features::compute_hog_grids;
use besvm::similarity::Representation;
use ndarray::Axis;

use crate::config::DatasetSpec;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum RawSplit {
    Images(LabeledImageSet),
    Points(LabeledPointSet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawData {
    pub train: RawSplit,
    pub test: Option<RawSplit>,
}

/// Samples with one view per HOG cell size (or one vector view).
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub exemplars: Vec<Exemplar>,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, ids: &[usize]) -> Samples {
        Samples {
            exemplars: ids.iter().map(|&i| self.exemplars[i].clone()).collect(),
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

impl RawSplit {
    pub fn len(&self) -> usize {
        match self {
            RawSplit::Images(s) => s.len(),
            RawSplit::Points(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// HOG grids at each of `cells` for images, raw rows for points.
    pub fn to_samples(&self, cells: &[usize]) -> Result<Samples> {
        match self {
            RawSplit::Points(set) => Ok(Samples {
                exemplars: set.rows().into_iter().map(Exemplar::from).collect(),
                labels: set.labels.clone(),
            }),
            RawSplit::Images(set) => {
                let mut exemplars = vec![
                    Exemplar {
                        views: Vec::with_capacity(cells.len())
                    };
                    set.len()
                ];
                for &cell in cells {
                    let grids = compute_hog_grids(&set.images, cell)?;
                    for (e, g) in exemplars.iter_mut().zip(grids) {
                        e.views.push(Representation::Grid(g));
                    }
                }
                Ok(Samples {
                    exemplars,
                    labels: set.labels.clone(),
                })
            }
        }
    }
}

/// First `n_train` members of each class go to training, the rest to test;
/// both keep the original order.
fn split_per_class(labels: &[usize], n_train: usize) -> (Vec<usize>, Vec<usize>) {
    let mut rank = vec![0; labels.len()];
    for members in class_members(labels) {
        for (r, &i) in members.iter().enumerate() {
            rank[i] = r;
        }
    }
    (0..labels.len()).partition(|&i| rank[i] < n_train)
}

fn point_subset(set: &LabeledPointSet, ids: &[usize]) -> Result<LabeledPointSet> {
    Ok(LabeledPointSet::new(
        set.points.select(Axis(0), ids),
        ids.iter().map(|&i| set.labels[i]).collect(),
    )?)
}

fn split_points(set: LabeledPointSet, n_train: usize, n_test: usize) -> Result<RawData> {
    let (train, test) = split_per_class(&set.labels, n_train);
    Ok(RawData {
        train: RawSplit::Points(point_subset(&set, &train)?),
        test: if n_test > 0 {
            Some(RawSplit::Points(point_subset(&set, &test)?))
        } else {
            None
        },
    })
}

fn truncate(mut set: LabeledImageSet, limit: Option<usize>) -> LabeledImageSet {
    if let Some(n) = limit {
        set.images.truncate(n);
        set.labels.truncate(n);
    }
    set
}

/// Loads or generates the data described by `spec`.
pub fn load(spec: &DatasetSpec, seed: u64) -> Result<RawData> {
    let data = match spec {
        DatasetSpec::TwoRings {
            n_per_class,
            test_per_class,
            radii,
            noise,
        } => {
            let set = make_two_rings(
                n_per_class + test_per_class,
                (radii[0], radii[1]),
                *noise,
                seed,
            )?;
            split_points(set, *n_per_class, *test_per_class)?
        }
        DatasetSpec::Blobs {
            centers,
            n_per_class,
            test_per_class,
            sigma,
        } => {
            let set = make_blobs(centers, n_per_class + test_per_class, *sigma, seed)?;
            split_points(set, *n_per_class, *test_per_class)?
        }
        DatasetSpec::Textured {
            train_count,
            test_count,
            side,
            classes,
        } => {
            let mut set = make_textured_images(train_count + test_count, *side, *classes, seed);
            let test = LabeledImageSet {
                images: set.images.split_off(*train_count),
                labels: set.labels.split_off(*train_count),
            };
            RawData {
                train: RawSplit::Images(set),
                test: (!test.is_empty()).then_some(RawSplit::Images(test)),
            }
        }
        DatasetSpec::Csv { train, test } => RawData {
            train: RawSplit::Points(load_csv(train)?),
            test: test
                .as_ref()
                .map(load_csv)
                .transpose()?
                .map(RawSplit::Points),
        },
        DatasetSpec::Cifar {
            dir,
            train_batches,
            test,
            train_limit,
            test_limit,
        } => {
            let mut set = LabeledImageSet::default();
            for b in train_batches {
                set.extend(read_cifar10_batch(dir.join(format!("data_batch_{b}.bin")))?)?;
            }
            let test = if *test {
                Some(RawSplit::Images(truncate(
                    read_cifar10_batch(dir.join("test_batch.bin"))?,
                    *test_limit,
                )))
            } else {
                None
            };
            RawData {
                train: RawSplit::Images(truncate(set, *train_limit)),
                test,
            }
        }
    };
    if data.train.is_empty() {
        return Err(CliError::Config("training set is empty".into()));
    }
    Ok(data)
}

/// The first `n` indices of a class-by-class round robin, sorted.
pub fn balanced_prefix(labels: &[usize], n: usize) -> Vec<usize> {
    let members = class_members(labels);
    let mut out = Vec::with_capacity(n);
    let mut r = 0;
    while out.len() < n.min(labels.len()) {
        for m in &members {
            if let Some(&i) = m.get(r) {
                if out.len() < n {
                    out.push(i);
                }
            }
        }
        r += 1;
    }
    out.sort_unstable();
    out
}

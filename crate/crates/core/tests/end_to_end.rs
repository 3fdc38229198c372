use besvm::analysis::{margin_be, margin_k, neg_ratio, sym_eigen, JACOBI_TOL};
use besvm::basis::{select_kernel_kmedoids, KMedoidsInit};
use besvm::datasets::{make_textured_images, read_cifar10_batch, write_cifar10_batch};
use besvm::embedding::{
    embed_dataset, map_samples, BasisSet, BoundMeasure, EmbeddingDocument, Exemplar,
};
use besvm::features::compute_hog_grids;
use besvm::pipeline::{fit, BasisStrategy, FittedModel, Method, PipelineConfig, PipelineFolds};
use besvm::similarity::{gram, symmetrize, Representation, SimilarityMeasure};
use besvm::solver::cv::{cross_validate, greedy_measure_augmentation, DEFAULT_MIN_GAIN};
use besvm::solver::kernel::{train_kernel_svm_dual, KernelSvmParams};
use besvm::{Error, Execution};
use ndarray::Array2;

/// HOG grids at cell sizes 8 and 4 as two views of each image.
fn multi_view(count: usize, seed: u64) -> (Vec<Exemplar>, Vec<usize>) {
    let set = make_textured_images(count, 32, 3, seed);
    let coarse = compute_hog_grids(&set.images, 8).unwrap();
    let fine = compute_hog_grids(&set.images, 4).unwrap();
    let samples = coarse
        .into_iter()
        .zip(fine)
        .map(|(a, b)| Exemplar {
            views: vec![Representation::Grid(a), Representation::Grid(b)],
        })
        .collect();
    (samples, set.labels)
}

#[test]
fn cifar_file_to_prediction() {
    let set = make_textured_images(60, 32, 3, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data_batch_1.bin");
    write_cifar10_batch(&path, &set).unwrap();
    let loaded = read_cifar10_batch(&path).unwrap();
    assert_eq!(loaded, set);

    let grids = compute_hog_grids(&loaded.images, 8).unwrap();
    let samples: Vec<Exemplar> = grids.into_iter().map(Exemplar::from).collect();
    let config = PipelineConfig::be_svm(
        vec![
            SimilarityMeasure::Rigid { h_r: 1 }.into(),
            SimilarityMeasure::Linear.into(),
        ],
        BasisStrategy::IndexStride { per_class: 5 },
    );
    let model = fit(&config, &samples, &loaded.labels, Execution::Parallel).unwrap();
    assert_eq!(model.parameters_per_class(), 30);
    let predicted = model.predict_batch(&samples, Execution::Parallel).unwrap();
    let correct = predicted
        .iter()
        .zip(&loaded.labels)
        .filter(|(p, l)| p == l)
        .count();
    assert!(correct as f64 / 60.0 > 0.8, "{correct}/60");

    let reloaded = FittedModel::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(
        reloaded
            .predict_batch(&samples, Execution::Sequential)
            .unwrap(),
        predicted
    );
}

#[test]
fn measures_on_different_views_share_one_basis() {
    let (samples, labels) = multi_view(30, 6);
    let measures = vec![
        BoundMeasure::new(SimilarityMeasure::Rigid { h_r: 1 }, 0),
        BoundMeasure::new(
            SimilarityMeasure::Deformable {
                h_r: 1,
                h_l: 1,
                lambda: 0.0,
            },
            1,
        ),
    ];
    let basis = BasisSet::from_ids(&samples, &labels, &[0, 1, 2, 3, 4, 5]).unwrap();
    let embedded = embed_dataset(&basis, &measures, &samples, &labels, None).unwrap();
    assert_eq!(embedded.matrix.dim(), (30, 12));
    assert_eq!(embedded.layout.offsets, vec![0, 6, 12]);

    let doc = EmbeddingDocument::new(measures, basis, embedded.normalizers.clone());
    let doc = EmbeddingDocument::from_json(&doc.to_json().unwrap()).unwrap();
    for i in [0, 13, 29] {
        assert_eq!(
            doc.embed(&samples[i]).unwrap(),
            embedded.matrix.row(i).to_vec()
        );
    }
}

#[test]
fn execution_modes_agree() {
    let (samples, labels) = multi_view(24, 7);
    for method in [Method::BeSvm, Method::Nystrom] {
        let config = PipelineConfig {
            method,
            ..PipelineConfig::be_svm(
                vec![BoundMeasure::new(SimilarityMeasure::Rigid { h_r: 1 }, 0)],
                BasisStrategy::KernelKMedoids {
                    per_class: 3,
                    measure: 0,
                    max_iter: 20,
                    init: KMedoidsInit::Greedy,
                },
            )
        };
        let seq = fit(&config, &samples, &labels, Execution::Sequential).unwrap();
        let par = fit(&config, &samples, &labels, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        let folds = PipelineFolds {
            config: &config,
            samples: &samples,
            labels: &labels,
            exec: Execution::Sequential,
        };
        let a = cross_validate(&folds, &labels, 4, Execution::Sequential).unwrap();
        let b = cross_validate(&folds, &labels, 4, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn kernel_baseline_rejects_indefinite_grams_unless_fixed() {
    let (samples, labels) = multi_view(30, 8);
    let measure = BoundMeasure::new(
        SimilarityMeasure::Deformable {
            h_r: 1,
            h_l: 1,
            lambda: 0.0,
        },
        1,
    );
    let views: Vec<&Representation> = samples.iter().map(|s| &s.views[1]).collect();
    let s = symmetrize(&gram(&measure.measure, &views, &views).unwrap());
    let eig = sym_eigen(s.view(), JACOBI_TOL).unwrap();
    assert!(neg_ratio(&eig.values.to_vec()).unwrap() > 0.0);

    let strict = PipelineConfig {
        method: Method::KernelSvm,
        measures: vec![measure],
        ..Default::default()
    };
    assert!(matches!(
        fit(&strict, &samples, &labels, Execution::Parallel),
        Err(Error::AsymmetricInput { .. } | Error::NotPositiveSemidefinite { .. })
    ));
    let fixed = PipelineConfig {
        kernel_fix: Some(besvm::embedding::SpectrumFixMode::Clip),
        ..strict
    };
    assert!(fit(&fixed, &samples, &labels, Execution::Parallel).is_ok());
}

#[test]
fn be_svm_margin_matches_squared_kernel_margin() {
    let mut state = 7u64;
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let x = Array2::from_shape_fn((12, 3), |_| next());
    let y: Vec<f64> = (0..12)
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let k = x.dot(&x.t());
    let params = KernelSvmParams {
        c: 1.0,
        tol: 1e-10,
        ..Default::default()
    };
    let alpha = ndarray::Array1::from(train_kernel_svm_dual(k.view(), &y, &params).unwrap().alpha);

    let samples: Vec<Exemplar> = x
        .rows()
        .into_iter()
        .map(|r| Exemplar::from(r.to_vec()))
        .collect();
    let labels = vec![0; 12];
    let basis = BasisSet::from_ids(&samples, &labels, &(0..12).collect::<Vec<_>>()).unwrap();
    let s_bx = map_samples(
        &basis,
        &[SimilarityMeasure::Linear.into()],
        &samples,
        Execution::Sequential,
    )
    .unwrap()
    .reversed_axes();
    let be = margin_be(alpha.view(), &y, s_bx.view()).unwrap();
    let k2 = margin_k(alpha.view(), &y, k.dot(&k).view()).unwrap();
    assert!((be - k2).abs() <= 1e-9 * k2.abs());
}

#[test]
fn kmedoids_and_greedy_on_real_similarities() {
    let (samples, labels) = multi_view(24, 9);
    let views: Vec<&Representation> = samples.iter().map(|s| &s.views[0]).collect();
    let s = gram(&SimilarityMeasure::Rigid { h_r: 1 }, &views, &views).unwrap();
    let r = select_kernel_kmedoids(
        s.view(),
        4,
        50,
        KMedoidsInit::Random { seed: 3 },
        Execution::Parallel,
    )
    .unwrap();
    assert_eq!(r.medoids.len(), 4);
    assert!(r.objective_trace.windows(2).all(|w| w[1] >= w[0]));

    let candidates = [
        BoundMeasure::new(SimilarityMeasure::Linear, 0),
        BoundMeasure::new(SimilarityMeasure::Rigid { h_r: 1 }, 0),
    ];
    let result = greedy_measure_augmentation(candidates.len(), DEFAULT_MIN_GAIN, |set| {
        let measures = set.iter().map(|&i| candidates[i]).collect();
        let config = PipelineConfig::be_svm(measures, BasisStrategy::IndexStride { per_class: 4 });
        let folds = PipelineFolds {
            config: &config,
            samples: &samples,
            labels: &labels,
            exec: Execution::Sequential,
        };
        Ok(cross_validate(&folds, &labels, 3, Execution::Parallel)?.mean_accuracy)
    })
    .unwrap();
    assert!(!result.selected.is_empty());
    assert!(result
        .accuracies
        .windows(2)
        .all(|w| w[1] > w[0] + DEFAULT_MIN_GAIN));
}

use gsdyn::image::RenderedImage;
use gsdyn::metrics::{
    kmeans, psnr, read_labels, read_metrics_csv, segmentation_scores, ssim, write_labels, write_metrics_csv, MetricsRow,
    PSNR_CAP,
};
use gsdyn::selftest::kmeans_blob_failures;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_image(seed: u64, w: usize, h: usize) -> RenderedImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RenderedImage {
        width: w,
        height: h,
        rgb: (0..w * h * 3).map(|_| rng.gen_range(0.0..1.0)).collect(),
    }
}

#[test]
fn kmeans_recovers_blobs_for_every_seed() {
    assert_eq!(kmeans_blob_failures(20).unwrap(), 0);
}

#[test]
fn one_cluster_per_point_has_zero_inertia() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
    let km = kmeans(&pts, pts.len(), 0).unwrap();
    assert_eq!(*km.inertia.last().unwrap(), 0.0);
}

#[test]
fn kmeans_inertia_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<Vec<f64>> = (0..200).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let km = kmeans(&pts, 5, 2).unwrap();
    assert!(km.inertia.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn identical_images_hit_the_caps() {
    let a = noise_image(1, 20, 20);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn psnr_of_a_uniform_offset() {
    let a = RenderedImage::black(16, 16);
    let mut b = a.clone();
    b.rgb.iter_mut().for_each(|v| *v = 0.1);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn perfect_and_swapped_segmentations_score_one() {
    let gt = [0, 0, 1, 1, 1, 2];
    for pred in [[0, 0, 1, 1, 1, 2], [2, 2, 0, 0, 0, 1]] {
        let s = segmentation_scores(&pred, &gt).unwrap();
        assert_eq!((s.miou, s.f1, s.precision, s.recall), (1.0, 1.0, 1.0, 1.0));
    }
}

#[test]
fn half_wrong_binary_split() {
    // Two of four correct with the best matching: each class has IoU 1/3.
    let s = segmentation_scores(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap();
    assert!((s.miou - 1.0 / 3.0).abs() < 1e-12, "{s:?}");
    assert!((s.f1 - 0.5).abs() < 1e-12, "{s:?}");
}

#[test]
fn fully_flipped_class_leaves_one_class_unmatched() {
    // Both classes predicted as one cluster: IoU 1/2 for the matched class, 0 for the other.
    let s = segmentation_scores(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
    assert!((s.miou - 0.25).abs() < 1e-12, "{s:?}");
}

#[test]
fn mismatched_lengths_are_rejected() {
    assert!(segmentation_scores(&[0, 1], &[0]).is_err());
}

#[test]
fn tables_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![
        MetricsRow {
            scene: "cube".into(),
            task: "extrapolation".into(),
            psnr: Some(31.25),
            ssim: Some(0.975),
            ..Default::default()
        },
        MetricsRow {
            scene: "cube".into(),
            task: "segmentation".into(),
            miou: Some(0.5),
            f1: Some(0.75),
            precision: Some(1.0),
            recall: Some(0.625),
            ..Default::default()
        },
    ];
    let path = dir.path().join("metrics.csv");
    write_metrics_csv(&path, &rows).unwrap();
    assert_eq!(read_metrics_csv(&path).unwrap(), rows);
    let labels = vec![0, 3, 1, 1, 2];
    let lp = dir.path().join("labels.txt");
    write_labels(&lp, &labels).unwrap();
    assert_eq!(read_labels(&lp).unwrap(), labels);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segmentation_ignores_cluster_names(labels in prop::collection::vec(0usize..3, 4..40),
                                          gt in prop::collection::vec(0usize..3, 40),
                                          perm in Just([0usize, 1, 2]).prop_shuffle()) {
        let gt = &gt[..labels.len()];
        let renamed: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let a = segmentation_scores(&labels, gt).unwrap();
        let b = segmentation_scores(&renamed, gt).unwrap();
        prop_assert!((a.miou - b.miou).abs() < 1e-12);
        prop_assert!((a.f1 - b.f1).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a.miou));
    }

    #[test]
    fn psnr_is_symmetric(s1 in 0u64..1000, s2 in 1000u64..2000) {
        let (a, b) = (noise_image(s1, 12, 9), noise_image(s2, 12, 9));
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(s1 in 0u64..1000, s2 in 1000u64..2000) {
        let (a, b) = (noise_image(s1, 16, 16), noise_image(s2, 16, 16));
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
    }
}

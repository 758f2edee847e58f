use proptest::prelude::*;
use segcrowd::data::augment::{augment_image, crop, hflip, AugmentationConfig};
use segcrowd::eval::{mae, mse};
use segcrowd::groundtruth::{density_map, make_bins, quantize_count, segmentation_map, AnnotatedImage, Point};
use segcrowd::losses::{dice, l_cla, l_cla_on_tape, l_euclidean};
use segcrowd::Grid;
use segcrowd_autograd::{Tape, Tensor};

fn points(h: usize, w: usize, max: usize) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((0.0..h as f64, 0.0..w as f64), 0..=max)
        .prop_map(|v| v.into_iter().map(|(r, c)| Point::new(r, c)).collect())
}

fn scene() -> impl Strategy<Value = AnnotatedImage> {
    (8usize..40, 8usize..40).prop_flat_map(|(h, w)| {
        points(h, w, 12).prop_map(move |pts| AnnotatedImage::new("p", Grid::filled(h, w, 0.5), pts).unwrap())
    })
}

fn tensor(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, len).prop_map(move |v| Tensor::new(vec![1, 1, len], v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn density_integrates_to_count(img in scene()) {
        let d = density_map(&img).unwrap();
        prop_assert!((d.count() - img.count() as f64).abs() < 1e-6);
        prop_assert!(d.grid().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn segmentation_is_binary_and_monotone(img in scene(), extra in (0.0..1.0f64, 0.0..1.0f64)) {
        let seg = segmentation_map(&img, 15).unwrap();
        prop_assert!(seg.grid().data().iter().all(|&v| v == 0.0 || v == 1.0));
        let mut more = img.clone();
        more.points.push(Point::new(extra.0 * img.height() as f64, extra.1 * img.width() as f64));
        let seg2 = segmentation_map(&more, 15).unwrap();
        prop_assert!(seg.grid().data().iter().zip(seg2.grid().data()).all(|(a, b)| b >= a));
    }

    #[test]
    fn bins_cover_every_class(lo in 0.0..100.0f64, span in 1.0..500.0f64, k in 1usize..8) {
        let counts: Vec<f64> = (0..=200).map(|i| lo + span * i as f64 / 200.0).collect();
        let bins = make_bins(&counts, k).unwrap();
        let mut hit = vec![false; k];
        for &c in &counts {
            let q = quantize_count(c, &bins);
            prop_assert!((1..=k).contains(&q));
            hit[q - 1] = true;
        }
        prop_assert!(hit.iter().all(|&h| h));
        prop_assert_eq!(quantize_count(lo - 10.0, &bins), 1);
        prop_assert_eq!(quantize_count(lo + span + 10.0, &bins), k);
    }

    #[test]
    fn dice_is_symmetric_and_bounded(a in tensor(30, 0.0, 1.0), b in tensor(30, 0.0, 1.0)) {
        let (ab, ba) = (dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        prop_assert_eq!(ab, ba);
        prop_assert!(ab > 0.0 && ab <= 1.0);
    }

    #[test]
    fn euclidean_is_non_negative(a in tensor(20, -2.0, 2.0), b in tensor(20, -2.0, 2.0)) {
        prop_assert!(l_euclidean(&a, &b).unwrap() > 0.0 || a == b);
        prop_assert_eq!(l_euclidean(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_is_shift_invariant(v in prop::collection::vec(-5.0..5.0f64, 5), shift in -50.0..50.0f64, class in 1usize..=5) {
        let a = Tensor::new(vec![5], v.clone()).unwrap();
        let b = Tensor::new(vec![5], v.iter().map(|x| x + shift).collect()).unwrap();
        prop_assert!((l_cla(&a, &[class]).unwrap() - l_cla(&b, &[class]).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn classification_gradient_scales_by_lambda(v in prop::collection::vec(-3.0..3.0f64, 5), lambda in 0.001..2.0f64, class in 1usize..=5) {
        let grad = |weight: f64| {
            let mut t = Tape::new();
            let x = t.param(Tensor::new(vec![5], v.clone()).unwrap()).unwrap();
            let l = l_cla_on_tape(&mut t, x, &[class]).unwrap();
            let total = t.weighted_sum(&[(l, weight)]).unwrap();
            t.backward(total).unwrap();
            t.grad(x).unwrap().values().to_vec()
        };
        let (alone, scaled) = (grad(1.0), grad(lambda));
        for (a, s) in alone.iter().zip(&scaled) {
            prop_assert!((s - lambda * a).abs() <= 1e-15 + 1e-12 * a.abs());
        }
    }

    #[test]
    fn rms_dominates_mean_absolute(pairs in prop::collection::vec((0.0..1000.0f64, 0.0..1000.0f64), 1..50)) {
        prop_assert!(mse(&pairs).unwrap() >= mae(&pairs).unwrap());
    }

    #[test]
    fn augmentation_keeps_points_inside(img in scene(), seed in any::<u64>()) {
        let cfg = AugmentationConfig { min_patch: 4, seed, ..AugmentationConfig::default() };
        let patches = augment_image(&img, &cfg, 3).unwrap();
        prop_assert_eq!(patches.len(), cfg.patches_per_image);
        for p in &patches {
            prop_assert!(p.points.iter().all(|q| q.inside(p.height(), p.width())));
        }
        prop_assert_eq!(augment_image(&img, &cfg, 3).unwrap(), patches);
    }

    #[test]
    fn flipped_density_mirrors(img in scene()) {
        let d = density_map(&img).unwrap();
        let f = density_map(&hflip(&img)).unwrap();
        let mirrored = d.grid().flip_horizontal();
        prop_assert!(f.grid().data().iter().zip(mirrored.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn crop_commutes_with_ground_truth_for_interior_points() {
    // every point sits at least 8 px inside both the image and the patch
    let pts = vec![Point::new(20.0, 22.0), Point::new(27.0, 30.0), Point::new(24.0, 37.0)];
    let img = AnnotatedImage::new("c", Grid::zeros(48, 60), pts).unwrap();
    let patch = crop(&img, 10, 12, 26, 34, "patch".into()).unwrap();
    let direct = density_map(&patch).unwrap();
    let windowed = density_map(&img).unwrap().grid().crop(10, 12, 26, 34);
    for (a, b) in direct.grid().data().iter().zip(windowed.data()) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(
        segmentation_map(&patch, 15).unwrap().grid(),
        &segmentation_map(&img, 15).unwrap().grid().crop(10, 12, 26, 34)
    );
}

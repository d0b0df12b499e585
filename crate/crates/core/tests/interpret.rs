mod common;

use bagnet::arch::{image_logits, BagNetConfig, ModelState};
use bagnet::data::{synth_texture_dataset, Dataset, SynthSpec};
use bagnet::interpret::{
    export_heatmap, integrated_gradients, interaction_experiment, masking_sensitivity, parse_heatmap_csv, saliency,
    scramble_test, threshold_sweep, top_patches, ClassChoice, MaskSpec, ProductOfRegions, RankingSource, ThresholdMode,
};
use bagnet::{Error, Tensor};
use common::{rng, uniform};
use rand::Rng;

fn model(config: BagNetConfig, seed: u64) -> ModelState {
    let mut m = ModelState::build(config, seed).unwrap();
    let mut r = rng(seed, 5);
    for bn in &mut m.bn {
        bn.running_mean.iter_mut().for_each(|v| *v = r.random_range(-0.2..0.2));
        bn.running_var.iter_mut().for_each(|v| *v = r.random_range(0.5..1.5));
    }
    m
}

fn data(size: usize, per_class: usize, seed: u64) -> Dataset {
    synth_texture_dataset(&SynthSpec::new(4, per_class, size, 4, seed)).unwrap()
}

#[test]
fn integrated_gradients_are_complete_on_a_smooth_model() {
    let m = ProductOfRegions { regions: [(2, 3), (20, 17)], side: 6 };
    for n in 0..20u64 {
        let image: Tensor = uniform(&[3, 32, 32], -1.5, 1.5, &mut rng(1, n));
        let ig = integrated_gradients(&m, &image, 0, 64, None).unwrap();
        assert!(ig.completeness_error() < 1e-4, "image {n}: {ig:?}");
    }
}

#[test]
fn integrated_gradients_converge_on_a_bagnet() {
    let m = model(BagNetConfig::bagnet5_32(4), 1);
    for n in 0..4u64 {
        let image: Tensor = uniform(&[3, 32, 32], -1.5, 1.5, &mut rng(1, n));
        let ig = integrated_gradients(&m, &image, n as usize, 1024, None).unwrap();
        assert!(ig.completeness_error() < 0.01, "image {n}: {ig:?}");
        assert_eq!(ig.map.shape(), &[32, 32]);
    }
}

#[test]
fn saliency_is_the_channel_sum_of_gradient_magnitudes() {
    let m = model(BagNetConfig::bagnet5_32(3), 2);
    let image: Tensor = uniform(&[3, 32, 32], -1.0, 1.0, &mut rng(2, 0));
    let class = 1;
    let sal = saliency(&m, &image, class).unwrap();
    let batch: Tensor<f64> = Tensor::stack(std::slice::from_ref(&image)).unwrap().cast();
    let (_, grad) = m.input_gradient::<f64>(&batch, class).unwrap();
    let logit = |x: &Tensor<f64>| m.input_gradient::<f64>(x, class).unwrap().0.data()[class];
    for &(y, x) in &[(0usize, 0usize), (7, 19), (16, 16), (31, 30)] {
        let mut total = 0.0;
        for ch in 0..3 {
            let idx = (ch * 32 + y) * 32 + x;
            let (mut plus, mut minus) = (batch.clone(), batch.clone());
            plus.data_mut()[idx] += 1e-6;
            minus.data_mut()[idx] -= 1e-6;
            let numeric = (logit(&plus) - logit(&minus)) / 2e-6;
            let analytic = grad.data()[idx];
            assert!((numeric - analytic).abs() < 1e-6 + 1e-4 * analytic.abs(), "({y},{x}) ch {ch}: {numeric} vs {analytic}");
            total += analytic.abs();
        }
        assert!((sal.data()[y * 32 + x] as f64 - total).abs() < 1e-4 * total.max(1e-3), "({y},{x})");
    }
}

#[test]
fn separated_cells_are_additive() {
    let m = model(BagNetConfig::bagnet5_32(4), 3);
    let ds = data(32, 10, 3);
    for choice in [ClassChoice::GroundTruth, ClassChoice::Predicted] {
        let r = interaction_experiment(&m, &ds, &MaskSpec::every_second(8), choice, None).unwrap();
        assert_eq!(r.pairs.len(), 40);
        assert!(r.max_relative_gap() < 1e-3, "{}", r.max_relative_gap());
        assert!(r.correlation.value().unwrap() > 0.999);
    }
}

#[test]
fn tiled_model_ignores_tile_order() {
    let m = model(BagNetConfig::bagnet3_tiled_33(4), 4);
    let ds = data(33, 6, 4);
    let r = scramble_test(&m, &ds, 9).unwrap();
    assert_eq!(r.images, 24);
    assert!(r.max_logit_delta < 1e-5, "{r:?}");
    assert_eq!(r.clean_accuracy, r.scrambled_accuracy);
}

#[test]
fn scrambling_requires_an_exact_tiling() {
    let m = model(BagNetConfig::bagnet5_32(4), 5);
    assert!(matches!(scramble_test(&m, &data(32, 2, 5), 0), Err(Error::Precondition(_))));
}

#[test]
fn clamping_at_minus_infinity_reproduces_vanilla_accuracy() {
    let m = model(BagNetConfig::bagnet5_32(4), 6);
    let ds = data(32, 8, 6);
    let vanilla = bagnet::train::evaluate(&m, &ds, 1).unwrap().topk_accuracy;
    let points = threshold_sweep(&m, &ds, &[f32::NEG_INFINITY, 0.0], ThresholdMode::Clamp, 1).unwrap();
    assert_eq!(points[0].accuracy, vanilla);
    let everything = threshold_sweep(&m, &ds, &[f32::NEG_INFINITY], ThresholdMode::Binarize, 4).unwrap();
    assert_eq!(everything[0].accuracy, 1.0);
}

#[test]
fn masking_curves_share_their_unmasked_start() {
    let m = model(BagNetConfig::bagnet5_32(4), 7);
    let ds = data(32, 3, 7);
    let sources =
        [RankingSource::BagNet(&m), RankingSource::Saliency, RankingSource::IntegratedGradients { steps: 16 }, RankingSource::Random { seed: 1 }];
    let indices: Vec<usize> = (0..6).collect();
    let curves = masking_sensitivity(&m, &sources, &ds, &indices, 8, 3).unwrap();
    let names: Vec<&str> = curves.iter().map(|c| c.source.as_str()).collect();
    assert_eq!(names, ["bagnet", "saliency", "ig", "random"]);
    for c in &curves {
        assert_eq!(c.n, vec![0, 1, 2, 3]);
        assert_eq!(c.mean_prob[0], curves[0].mean_prob[0]);
        assert!(c.per_image.iter().flatten().all(|p| (0.0..=1.0).contains(p)));
    }
    assert_eq!(masking_sensitivity(&m, &sources, &ds, &indices, 8, 3).unwrap(), curves);
}

#[test]
fn heatmap_export_writes_ppm_and_exact_csv() {
    let m = model(BagNetConfig::bagnet9_32(4), 8);
    let ds = data(32, 1, 8);
    let ev = m.forward_evidence(&ds.image_tensor(0, &m.input_norm)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.ppm");
    export_heatmap(&ev, 2, (32, 32), &path).unwrap();
    let ppm = std::fs::read(&path).unwrap();
    let header = b"P6\n32 32\n255\n";
    assert_eq!(&ppm[..header.len()], header);
    assert_eq!(ppm.len(), header.len() + 32 * 32 * 3);
    let rows = parse_heatmap_csv(&std::fs::read_to_string(path.with_extension("csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), ev.height() * ev.width());
    assert!(rows.iter().all(|&(i, j, v)| v.to_bits() == ev.get(2, i, j).to_bits()));
    let mean = ev.plane(2).iter().map(|&v| v as f64).sum::<f64>() / ev.plane(2).len() as f64;
    assert!((image_logits(&ev).data()[2] as f64 - mean).abs() < 1e-5);
}

#[test]
fn top_patches_are_sorted_and_split_by_label() {
    let m = model(BagNetConfig::bagnet5_32(4), 9);
    let ds = data(32, 3, 9);
    let top = top_patches(&m, &ds, 1, 5).unwrap();
    assert_eq!((top.same.len(), top.other.len()), (5, 5));
    assert!(top.same.iter().all(|p| p.same_label && ds.label(p.image_index) == 1));
    assert!(top.other.iter().all(|p| !p.same_label && ds.label(p.image_index) != 1));
    for list in [&top.same, &top.other] {
        assert!(list.windows(2).all(|w| w[0].logit >= w[1].logit));
        assert!(list.iter().all(|p| p.pixels.len() == 3 * 5 * 5 && p.q == 5));
    }
}

use candle_core::{IndexOp, Tensor};
use distractnet::models::layers::Mode;
use distractnet::models::{build_model, ModelHandle, ModelSpec, Variant};
use distractnet::train::random_batch;
use distractnet::Error;

/// `(in, out)` channels of the 3×3 convolutions of each VGG depth.
fn vgg_convs(depth: usize) -> Vec<(usize, usize)> {
    let blocks: [(usize, usize); 5] = if depth == 16 {
        [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)]
    } else {
        [(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)]
    };
    let mut out = Vec::new();
    let mut c = 3;
    for (width, n) in blocks {
        for _ in 0..n {
            out.push((c, width));
            c = width;
        }
    }
    out
}

fn conv_params(convs: &[(usize, usize)]) -> usize {
    convs.iter().map(|&(i, o)| 9 * i * o + o).sum()
}

fn spec(v: Variant, size: u32) -> ModelSpec {
    ModelSpec::new(v).with_input_size(size, size).with_seed(11)
}

fn rows(p: &Tensor) -> Vec<Vec<f32>> {
    p.to_vec2::<f32>().unwrap()
}

#[test]
fn vgg_conv_base_counts_match_layer_arithmetic() {
    assert_eq!(conv_params(&vgg_convs(16)), 14_714_688);
    assert_eq!(conv_params(&vgg_convs(19)), 20_024_384);
}

#[test]
fn shallow_heads_only_are_trainable() {
    let m = build_model(&spec(Variant::Vgg16Shallow, 224)).unwrap();
    let c = m.count_parameters();
    assert_eq!(c.frozen, conv_params(&vgg_convs(16)));
    assert_eq!(c.trainable, 512 * 7 * 7 * 256 + 256 + 256 * 10 + 10);
    let m = build_model(&spec(Variant::Vgg19Shallow, 32)).unwrap();
    assert_eq!(m.count_parameters().frozen, conv_params(&vgg_convs(19)));
}

#[test]
fn deep_variants_are_fully_trainable() {
    for v in [Variant::Vgg16Deep, Variant::Vgg19Deep] {
        let m = build_model(&spec(v, 224)).unwrap();
        let c = m.count_parameters();
        let depth = if v == Variant::Vgg16Deep { 16 } else { 19 };
        assert_eq!(c.frozen, 0);
        assert_eq!(c.trainable, conv_params(&vgg_convs(depth)) + 25088 * 500 + 500 + 5010);
        assert!(c.trainable > c.frozen);
    }
}

#[test]
fn fine_tuned_variants_share_topology() {
    for (b, nb, depth) in [
        (Variant::Vgg16FtB, Variant::Vgg16FtNb, 16),
        (Variant::Vgg19FtB, Variant::Vgg19FtNb, 19),
    ] {
        let mb = build_model(&spec(b, 32)).unwrap();
        let mnb = build_model(&spec(nb, 32)).unwrap();
        let (cb, cnb) = (mb.count_parameters(), mnb.count_parameters());
        assert_eq!(cb.total(), cnb.total());
        assert_eq!(cnb.frozen, 0);
        let convs = vgg_convs(depth);
        assert_eq!(cb.frozen, conv_params(&convs[..convs.len() - 4]));
        assert_eq!(mb.state()["head.fc.weight"].dims(), [10, 512]);
        assert_eq!(cb.total(), conv_params(&convs) + 512 * 10 + 10);
    }
}

#[test]
fn simple_cnn_counts_and_224_shape() {
    let m = build_model(&spec(Variant::SimpleCnn, 224)).unwrap();
    let c = m.count_parameters();
    assert_eq!(c.frozen, 0);
    let convs = 3 * 9 * 32 + 32 + 32 * 9 * 64 + 64 + 64 * 9 * 128 + 128;
    assert_eq!(c.trainable, convs + 100_352 * 512 + 512 + 5130);
    let x = random_batch(4, (224, 224), 1).unwrap();
    assert_eq!(m.forward(&x, &mut Mode::Eval).unwrap().dims(), [4, 10]);
    let m64 = build_model(&spec(Variant::SimpleCnn, 64)).unwrap();
    let x = random_batch(4, (64, 64), 1).unwrap();
    assert_eq!(m64.forward(&x, &mut Mode::Eval).unwrap().dims(), [4, 10]);
}

fn backbone_count(m: &ModelHandle) -> usize {
    let state = m.state();
    m.parameter_names()
        .iter()
        .filter(|n| n.starts_with("backbone."))
        .map(|n| state[n].elem_count())
        .sum()
}

#[test]
fn hybrid_backbone_and_freeze_flag() {
    let m = build_model(&spec(Variant::HybridCnnTransformer, 32)).unwrap();
    assert_eq!(backbone_count(&m), 23_508_032);
    assert_eq!(m.count_parameters().frozen, 0);
    let mut s = spec(Variant::HybridCnnTransformer, 32);
    s.hybrid.freeze_backbone = true;
    let frozen = build_model(&s).unwrap();
    assert_eq!(frozen.count_parameters().frozen, 23_508_032);
    assert_eq!(frozen.count_parameters().total(), m.count_parameters().total());
}

#[test]
fn hybrid_tokens_and_permutation_invariance() {
    let m = build_model(&spec(Variant::HybridCnnTransformer, 224)).unwrap();
    let h = m.as_hybrid().unwrap();
    let x = random_batch(2, (224, 224), 5).unwrap().permute((0, 3, 1, 2)).unwrap();
    let tokens = h.tokens(&x, &mut Mode::Eval).unwrap();
    assert_eq!(tokens.dims(), [2, 49, 512]);
    let logits = h.classify_tokens(&tokens, &mut Mode::Eval).unwrap();
    assert_eq!(logits.dims(), [2, 10]);

    let mut order: Vec<u32> = (0..49).rev().collect();
    order.swap(3, 40);
    let idx = Tensor::new(order.as_slice(), tokens.device()).unwrap();
    let shuffled = tokens.index_select(&idx, 1).unwrap();
    assert_ne!(
        tokens.i((0, 0)).unwrap().to_vec1::<f32>().unwrap(),
        shuffled.i((0, 0)).unwrap().to_vec1::<f32>().unwrap()
    );
    let permuted = h.classify_tokens(&shuffled, &mut Mode::Eval).unwrap();
    for (a, b) in rows(&logits).iter().flatten().zip(rows(&permuted).iter().flatten()) {
        assert!((a - b).abs() <= 1e-4 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn inference_is_deterministic_with_dropout_heads() {
    for v in [Variant::Vgg16Deep, Variant::Vgg19Shallow, Variant::HybridCnnTransformer] {
        let m = build_model(&spec(v, 32)).unwrap();
        let x = random_batch(3, (32, 32), 2).unwrap();
        assert_eq!(rows(&m.predict_batch(&x).unwrap()), rows(&m.predict_batch(&x).unwrap()), "{v}");
    }
}

#[test]
fn identical_images_give_identical_rows() {
    let m = build_model(&spec(Variant::SimpleCnn, 32)).unwrap();
    let one = random_batch(1, (32, 32), 3).unwrap();
    let x = Tensor::cat(&[&one, &one, &one, &one], 0).unwrap();
    let r = rows(&m.predict_batch(&x).unwrap());
    assert!(r.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn untrained_model_is_not_confident() {
    let m = build_model(&spec(Variant::SimpleCnn, 32)).unwrap();
    let x = random_batch(64, (32, 32), 4).unwrap();
    let r = rows(&m.predict_batch(&x).unwrap());
    let mean_max: f32 = r.iter().map(|row| row.iter().cloned().fold(0.0, f32::max)).sum::<f32>() / 64.0;
    assert!(mean_max < 0.5, "mean max probability {mean_max}");
}

#[test]
fn wrong_batch_shape_is_an_argument_error() {
    let m = build_model(&spec(Variant::SimpleCnn, 32)).unwrap();
    let x = random_batch(2, (16, 16), 0).unwrap();
    assert!(matches!(m.predict_batch(&x), Err(Error::Argument(_))));
}

use proptest::prelude::*;
use scnet::enhancer::{enhancer_param_count, sc_enhance, spatial_attention, squeeze, EnhancerConfig, ScEnhancer};
use scnet::params::init_rng;
use scnet::{Tape, Tensor};

fn random(shape: &[usize], bound: f64, seed: u64) -> Tensor {
    Tensor::uniform(shape, bound, &mut init_rng(seed))
}

/// Attention and enhanced map from explicit loops over targets, sources,
/// channels and reduced channels.
fn attention_oracle(a: &Tensor, wq: &Tensor, wk: &Tensor) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let n = h * w;
    let r = wq.shape()[0];
    let px = |ch: usize, p: usize| a.at(&[ch, p / w, p % w]);
    let mut att = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut logits = vec![0.0; n];
        for (i, l) in logits.iter_mut().enumerate() {
            for o in 0..r {
                let mut q = 0.0;
                let mut k = 0.0;
                for ch in 0..c {
                    q += wq.at(&[o, ch, 0, 0]) * px(ch, j);
                    k += wk.at(&[o, ch, 0, 0]) * px(ch, i);
                }
                *l += q * k;
            }
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        for i in 0..n {
            att[j][i] = (logits[i] - m).exp() / z;
        }
    }
    let mut e = vec![0.0; c * n];
    for ch in 0..c {
        for j in 0..n {
            e[ch * n + j] = (0..n).map(|i| att[j][i] * px(ch, i)).sum();
        }
    }
    (att, e)
}

#[test]
fn attention_matches_loop_oracle() {
    let a = random(&[8, 2, 2], 1.0, 11);
    let wq = random(&[1, 8, 1, 1], 1.0, 12);
    let wk = random(&[1, 8, 1, 1], 1.0, 13);
    let mut tape = Tape::new();
    let va = tape.constant(a.clone());
    let vq = tape.constant(wq.clone());
    let vk = tape.constant(wk.clone());
    let out = spatial_attention(&mut tape, va, vq, vk).unwrap();
    let (att, e) = attention_oracle(&a, &wq, &wk);
    let got = tape.value(out.attention);
    for j in 0..4 {
        let row: f64 = (0..4).map(|i| got.at(&[j, i])).sum();
        assert!((row - 1.0).abs() < 1e-12);
        for i in 0..4 {
            assert!((got.at(&[j, i]) - att[j][i]).abs() < 1e-12);
        }
    }
    assert!(tape
        .value(out.enhanced)
        .data()
        .iter()
        .zip(&e)
        .all(|(g, w)| (g - w).abs() < 1e-12));
}

#[test]
fn squeeze_matches_two_pass_statistics() {
    let a = random(&[6, 3, 5], 4.0, 21);
    let mut tape = Tape::new();
    let va = tape.constant(a.clone());
    let z = squeeze(&mut tape, va).unwrap();
    let z = tape.value(z).clone();
    assert_eq!(z.shape(), &[12]);
    for c in 0..6 {
        let ch = a.channel(c).unwrap();
        let n = ch.numel() as f64;
        let mean = ch.data().iter().sum::<f64>() / n;
        let var = ch.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((z.data()[c] - mean).abs() < 1e-12);
        assert!((z.data()[6 + c] - var).abs() < 1e-12);
    }
}

#[test]
fn zero_scales_make_the_enhancer_an_identity() {
    let a = random(&[16, 3, 4], 2.0, 31);
    let mut tape = Tape::new();
    let va = tape.constant(a.clone());
    let wq = tape.constant(random(&[2, 16, 1, 1], 1.0, 32));
    let wk = tape.constant(random(&[2, 16, 1, 1], 1.0, 33));
    let w1 = tape.constant(random(&[2, 32], 1.0, 34));
    let w2 = tape.constant(random(&[16, 2], 1.0, 35));
    let lambda = tape.constant(Tensor::scalar(0.0));
    let gamma = tape.constant(Tensor::scalar(0.0));
    let y = sc_enhance(&mut tape, va, wq, wk, w1, w2, lambda, gamma).unwrap();
    assert_eq!(tape.value(y), &a);
}

#[test]
fn module_forward_exposes_branch_outputs() {
    let cfg = EnhancerConfig::new(16, 4);
    let (e, params) = ScEnhancer::standalone(&cfg, 5).unwrap();
    assert_eq!(params.scalar_count(), enhancer_param_count(&cfg).unwrap());
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let a = tape.constant(random(&[16, 2, 4], 1.0, 6));
    let out = e.forward(&mut tape, &bound, a).unwrap();
    assert_eq!(tape.shape(out.attention.unwrap()), &[8, 8]);
    let s = tape.value(out.channel_weights.unwrap());
    assert_eq!(s.shape(), &[16]);
    assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn wrong_widths_are_rejected() {
    let (e, params) = ScEnhancer::standalone(&EnhancerConfig::new(16, 4), 5).unwrap();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let a = tape.constant(Tensor::zeros(&[8, 2, 2]));
    assert!(e.forward(&mut tape, &bound, a).is_err());
}

proptest! {
    #[test]
    fn constant_offset_shifts_mean_only(seed in any::<u64>(), k in -100.0f64..100.0) {
        let a = random(&[4, 3, 3], 10.0, seed);
        let shifted = Tensor::from_fn(a.shape(), |i| a.data()[i] + k);
        let stats = |t: Tensor| {
            let mut tape = Tape::new();
            let v = tape.constant(t);
            let z = squeeze(&mut tape, v).unwrap();
            tape.value(z).clone()
        };
        let (z0, z1) = (stats(a), stats(shifted));
        for c in 0..4 {
            prop_assert!((z1.data()[c] - z0.data()[c] - k).abs() < 1e-12);
            prop_assert!((z1.data()[4 + c] - z0.data()[4 + c]).abs() < 1e-9);
        }
    }

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>()) {
        let mut tape = Tape::new();
        let a = tape.constant(random(&[8, 3, 2], 3.0, seed));
        let wq = tape.constant(random(&[1, 8, 1, 1], 1.0, seed ^ 7));
        let wk = tape.constant(random(&[1, 8, 1, 1], 1.0, seed ^ 9));
        let s = spatial_attention(&mut tape, a, wq, wk).unwrap().attention;
        let s = tape.value(s);
        for j in 0..6 {
            let row = (0..6).map(|i| s.at(&[j, i]));
            prop_assert!(row.clone().all(|v| v >= 0.0));
            prop_assert!((row.sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

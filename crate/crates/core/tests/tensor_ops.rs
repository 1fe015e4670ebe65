use proptest::prelude::*;
use scnet::params::init_rng;
use scnet::{Tape, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut init_rng(seed))
}

fn forward(inputs: &[Tensor], f: impl Fn(&mut Tape, &[scnet::Var]) -> scnet::Var) -> Tensor {
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.value(out).clone()
}

fn oracle_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.at(&[i, p]) * b.at(&[p, j]);
            }
            out[i * n + j] = s;
        }
    }
    out
}

fn oracle_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; cout * ho * wo];
    for o in 0..cout {
        for y in 0..ho {
            for xo in 0..wo {
                let mut s = b.map_or(0.0, |b| b.data()[o]);
                for c in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (xo * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            s += w.at(&[o, c, ky, kx]) * x.at(&[c, iy as usize, ix as usize]);
                        }
                    }
                }
                out[(o * ho + y) * wo + xo] = s;
            }
        }
    }
    (vec![cout, ho, wo], out)
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol, "element {i}: {g} vs {w}");
    }
}

#[test]
fn matmul_matches_triple_loop() {
    let (a, b) = (random(&[5, 7], 1), random(&[7, 3], 2));
    let got = forward(&[a.clone(), b.clone()], |t, v| t.matmul(v[0], v[1]).unwrap());
    assert_eq!(got.shape(), &[5, 3]);
    assert_close(got.data(), &oracle_matmul(&a, &b), 1e-12);
}

#[test]
fn conv_matches_direct_loops() {
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 3)] {
        let x = random(&[3, 8, 6], 3);
        let w = random(&[4, 3, k, k], 4);
        let b = random(&[4], 5);
        let got = forward(&[x.clone(), w.clone(), b.clone()], |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap()
        });
        let (shape, want) = oracle_conv(&x, &w, Some(&b), stride, pad);
        assert_eq!(got.shape(), shape.as_slice(), "stride {stride} pad {pad}");
        assert_close(got.data(), &want, 1e-12);
    }
}

#[test]
fn upsample_repeats_each_pixel() {
    let x = random(&[2, 3, 4], 6);
    let got = forward(std::slice::from_ref(&x), |t, v| t.upsample2x(v[0]).unwrap());
    assert_eq!(got.shape(), &[2, 6, 8]);
    for c in 0..2 {
        for y in 0..6 {
            for xx in 0..8 {
                assert_eq!(got.at(&[c, y, xx]), x.at(&[c, y / 2, xx / 2]));
            }
        }
    }
}

#[test]
fn softmax_matches_direct_formula() {
    let x = random(&[4, 6], 7);
    let got = forward(std::slice::from_ref(&x), |t, v| t.softmax_rows(v[0]).unwrap());
    for r in 0..4 {
        let z: f64 = (0..6).map(|c| x.at(&[r, c]).exp()).sum();
        for c in 0..6 {
            assert!((got.at(&[r, c]) - x.at(&[r, c]).exp() / z).abs() < 1e-15);
        }
    }
}

#[test]
fn softmax_survives_large_logits() {
    let x = Tensor::new(vec![1, 3], vec![1000.0, 999.0, -1000.0]).unwrap();
    let got = forward(&[x], |t, v| t.softmax_rows(v[0]).unwrap());
    assert!(got.all_finite());
    assert!((got.data().iter().sum::<f64>() - 1.0).abs() < 1e-15);
}

#[test]
fn backward_of_matmul_matches_closed_form() {
    let (a, b) = (random(&[3, 4], 8), random(&[4, 2], 9));
    let mut tape = Tape::new();
    let va = tape.param(a.clone());
    let vb = tape.param(b.clone());
    let y = tape.matmul(va, vb).unwrap();
    let loss = tape.sum(y).unwrap();
    let g = tape.backward(loss).unwrap();
    // d sum(AB) / dA[i,p] = sum_j B[p,j]
    for i in 0..3 {
        for p in 0..4 {
            let want: f64 = (0..2).map(|j| b.at(&[p, j])).sum();
            assert!((g.get(va).unwrap().at(&[i, p]) - want).abs() < 1e-14);
        }
    }
    for p in 0..4 {
        let want: f64 = (0..3).map(|i| a.at(&[i, p])).sum();
        assert!((g.get(vb).unwrap().at(&[p, 0]) - want).abs() < 1e-14);
    }
}

#[test]
fn shape_mismatches_are_errors() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(tape.matmul(a, b).is_err());
    let x = tape.constant(Tensor::zeros(&[2, 4, 4]));
    let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(tape.conv2d(x, w, None, 1, 1).is_err());
    assert!(tape.add(a, x).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let x = random(&[3, 5], seed);
        let shifted = Tensor::from_fn(&[3, 5], |i| x.data()[i] + shift);
        let a = forward(&[x], |t, v| t.softmax_rows(v[0]).unwrap());
        let b = forward(&[shifted], |t, v| t.softmax_rows(v[0]).unwrap());
        for r in 0..3 {
            let s: f64 = (0..5).map(|c| a.at(&[r, c])).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn conv_is_linear_in_its_input(seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let x = random(&[2, 4, 4], seed);
        let y = random(&[2, 4, 4], seed ^ 1);
        let w = random(&[3, 2, 3, 3], seed ^ 2);
        let conv = |inp: Tensor| forward(&[inp, w.clone()], |t, v| t.conv2d(v[0], v[1], None, 1, 1).unwrap());
        let lhs = conv(Tensor::from_fn(&[2, 4, 4], |i| alpha * x.data()[i] + y.data()[i]));
        let (cx, cy) = (conv(x), conv(y));
        let rhs = Tensor::from_fn(lhs.shape(), |i| alpha * cx.data()[i] + cy.data()[i]);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn transpose_is_an_involution(seed in any::<u64>(), r in 1usize..6, c in 1usize..6) {
        let x = random(&[r, c], seed);
        let back = forward(std::slice::from_ref(&x), |t, v| {
            let y = t.transpose2d(v[0]).unwrap();
            t.transpose2d(y).unwrap()
        });
        prop_assert_eq!(back, x);
    }
}

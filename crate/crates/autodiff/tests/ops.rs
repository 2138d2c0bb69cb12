use lfv_autodiff::gradcheck::{self, relative_error};
use lfv_autodiff::kernels::correlation;
use lfv_autodiff::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Direct 3-D cross-correlation with zero padding.
#[allow(clippy::too_many_arguments)]
fn conv3d_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &[f64],
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Vec<usize>, Vec<f64>) {
    let xs = x.shape();
    let ws = w.shape();
    let (n, ci, d, h, wd) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (co, kd, kh, kw) = (ws[0], ws[2], ws[3], ws[4]);
    let od = (d + 2 * pad[0] - kd) / stride[0] + 1;
    let oh = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let ow = (wd + 2 * pad[2] - kw) / stride[2] + 1;
    let mut out = Vec::new();
    for bn in 0..n {
        for o in 0..co {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut s = b[o];
                        for c in 0..ci {
                            for a in 0..kd {
                                for p in 0..kh {
                                    for q in 0..kw {
                                        let iz = (z * stride[0] + a) as isize - pad[0] as isize;
                                        let iy = (y * stride[1] + p) as isize - pad[1] as isize;
                                        let ix = (xx * stride[2] + q) as isize - pad[2] as isize;
                                        if iz < 0
                                            || iy < 0
                                            || ix < 0
                                            || iz >= d as isize
                                            || iy >= h as isize
                                            || ix >= wd as isize
                                        {
                                            continue;
                                        }
                                        let xi = (((bn * ci + c) * d + iz as usize) * h
                                            + iy as usize)
                                            * wd
                                            + ix as usize;
                                        let wi = (((o * ci + c) * kd + a) * kh + p) * kw + q;
                                        s += x.data()[xi] * w.data()[wi];
                                    }
                                }
                            }
                        }
                        out.push(s);
                    }
                }
            }
        }
    }
    (vec![n, co, od, oh, ow], out)
}

#[test]
fn conv2d_matches_direct_loops() {
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 2, 5)] {
        let x = random(&[2, 3, 7, 6], 1);
        let w = random(&[4, 3, k, k], 2);
        let b = random(&[4], 3);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (
            tape.constant(x.clone()).unwrap(),
            tape.constant(w.clone()).unwrap(),
            tape.constant(b.clone()).unwrap(),
        );
        let y = tape.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        let x5 = x.clone().reshaped(&[2, 3, 1, 7, 6]).unwrap();
        let w5 = w.clone().reshaped(&[4, 3, 1, k, k]).unwrap();
        let (shape, want) = conv3d_oracle(&x5, &w5, b.data(), [1, stride, stride], [0, pad, pad]);
        assert_eq!(tape.shape(y), &[shape[0], shape[1], shape[3], shape[4]]);
        assert!(relative_error(tape.value(y).data(), &want) < 1e-12);
    }
}

#[test]
fn conv3d_matches_direct_loops() {
    let x = random(&[1, 2, 5, 6, 6], 4);
    let w = random(&[3, 2, 3, 3, 3], 5);
    let b = random(&[3], 6);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone()).unwrap();
    let wv = tape.constant(w.clone()).unwrap();
    let bv = tape.constant(b.clone()).unwrap();
    let y = tape.conv3d(xv, wv, Some(bv), (1, 2), (1, 1)).unwrap();
    let (shape, want) = conv3d_oracle(&x, &w, b.data(), [1, 2, 2], [1, 1, 1]);
    assert_eq!(tape.shape(y), shape.as_slice());
    assert!(relative_error(tape.value(y).data(), &want) < 1e-12);
}

#[test]
fn identity_kernel_reproduces_input() {
    let x = random(&[1, 2, 5, 5], 7);
    let mut w = Tensor::zeros(&[2, 2, 3, 3]);
    w.data_mut()[4] = 1.0; // out 0 <- in 0 center
    w.data_mut()[9 + 9 + 9 + 4] = 1.0; // out 1 <- in 1 center
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone()).unwrap();
    let wv = tape.constant(w).unwrap();
    let y = tape.conv2d(xv, wv, None, 1, 1).unwrap();
    assert_eq!(tape.value(y).data(), x.data());
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4])).unwrap();
    let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3])).unwrap();
    assert!(tape.conv2d(x, w, None, 1, 1).is_err());
}

#[test]
fn zero_kernel_gives_bias() {
    let mut tape = Tape::new();
    let x = tape.constant(random(&[1, 2, 6, 6], 12)).unwrap();
    let w = tape.constant(Tensor::zeros(&[3, 2, 3, 3])).unwrap();
    let b = tape
        .constant(Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap())
        .unwrap();
    let y = tape.conv2d(x, w, Some(b), 1, 1).unwrap();
    for (o, want) in [0.5, -1.0, 2.0].into_iter().enumerate() {
        assert!(tape.value(y).data()[o * 36..(o + 1) * 36]
            .iter()
            .all(|&v| v == want));
    }
}

#[test]
fn center_slice_3d_kernel_is_per_slice_2d() {
    let x = random(&[1, 2, 4, 5, 5], 13);
    let w2 = random(&[3, 2, 3, 3], 14);
    let w3 = Tensor::from_fn(&[3, 2, 3, 3, 3], |i| {
        let (oc, a, pq) = (i / 27, (i / 9) % 3, i % 9);
        if a == 1 {
            w2.data()[oc * 9 + pq]
        } else {
            0.0
        }
    });
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone()).unwrap();
    let wv = tape.constant(w3).unwrap();
    let y3 = tape.conv3d(xv, wv, None, (1, 1), (1, 1)).unwrap();
    let w2v = tape.constant(w2).unwrap();
    for z in 0..4 {
        let slice = Tensor::from_fn(&[1, 2, 5, 5], |i| {
            let (c, p) = (i / 25, i % 25);
            x.data()[(c * 4 + z) * 25 + p]
        });
        let sv = tape.constant(slice).unwrap();
        let y2 = tape.conv2d(sv, w2v, None, 1, 1).unwrap();
        for o in 0..3 {
            let got = &tape.value(y3).data()[(o * 4 + z) * 25..(o * 4 + z + 1) * 25];
            let want = &tape.value(y2).data()[o * 25..(o + 1) * 25];
            assert!(relative_error(got, want) < 1e-12);
        }
    }
}

#[test]
fn disjoint_supports_do_not_correlate() {
    // a lives in the left half, b in the right half, more than max_disp apart
    let a = Tensor::from_fn(&[1, 2, 6, 12], |i| if i % 12 < 3 { 1.0 } else { 0.0 });
    let b = Tensor::from_fn(&[1, 2, 6, 12], |i| if i % 12 >= 9 { 1.0 } else { 0.0 });
    let mut tape = Tape::new();
    let av = tape.constant(a).unwrap();
    let bv = tape.constant(b).unwrap();
    let y = tape.correlation(av, bv, 2).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

fn correlation_oracle(a: &Tensor<f64>, b: &Tensor<f64>, d: isize) -> Vec<f64> {
    let s = a.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = Vec::new();
    for bn in 0..n {
        for dy in -d..=d {
            for dx in -d..=d {
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        let (yy, xx) = (y + dy, x + dx);
                        let mut s = 0.0;
                        if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                            for ch in 0..c {
                                let at = |t: &Tensor<f64>, y: isize, x: isize| {
                                    t.data()[((bn * c + ch) * h + y as usize) * w + x as usize]
                                };
                                s += at(a, y, x) * at(b, yy, xx);
                            }
                        }
                        out.push(s / c as f64);
                    }
                }
            }
        }
    }
    out
}

#[test]
fn correlation_matches_direct_loops() {
    let a = random(&[2, 3, 6, 7], 8);
    let b = random(&[2, 3, 6, 7], 9);
    let mut tape = Tape::new();
    let av = tape.constant(a.clone()).unwrap();
    let bv = tape.constant(b.clone()).unwrap();
    let y = tape.correlation(av, bv, 2).unwrap();
    assert_eq!(tape.shape(y), &[2, 25, 6, 7]);
    assert!(relative_error(tape.value(y).data(), &correlation_oracle(&a, &b, 2)) < 1e-12);
}

#[test]
fn self_correlation_peaks_at_zero_and_is_symmetric() {
    let a = random(&[1, 4, 8, 8], 10);
    let mut tape = Tape::new();
    let av = tape.constant(a).unwrap();
    let y = tape.correlation(av, av, 2).unwrap();
    let v = tape.value(y).data();
    let hw = 64;
    let zero = 12;
    for k in 0..25 {
        let (dx, dy) = correlation::displacement(2, k);
        let mirror = ((-dy + 2) * 5 + (-dx + 2)) as usize;
        for y in 2..6 {
            for x in 2..6 {
                let p = y * 8 + x;
                let q = ((y as isize + dy) * 8 + x as isize + dx) as usize;
                // <a(p), a(p+δ)> = <a(p+δ), a(p+δ-δ)>
                assert!((v[k * hw + p] - v[mirror * hw + q]).abs() < 1e-12);
            }
        }
    }
    // Cauchy-Schwarz against the zero displacement is not guaranteed per pixel
    // for mean-over-channels, but the spatial sum is maximal at zero.
    let totals: Vec<f64> = (0..25)
        .map(|k| v[k * hw..(k + 1) * hw].iter().sum())
        .collect();
    let best = totals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert_eq!(best, zero);
}

#[test]
fn correlation_recovers_a_shift() {
    let a = random(&[1, 8, 10, 10], 11);
    let shifted = Tensor::from_fn(&[1, 8, 10, 10], |i| {
        let (c, y, x) = (i / 100, (i / 10) % 10, i % 10);
        // b(y, x) = a(y, x - 1): content moved right by one.
        a.data()[c * 100 + y * 10 + x.saturating_sub(1)]
    });
    let mut tape = Tape::new();
    let av = tape.constant(a).unwrap();
    let bv = tape.constant(shifted).unwrap();
    let y = tape.correlation(av, bv, 2).unwrap();
    let v = tape.value(y).data();
    let p = 5 * 10 + 5;
    let best = (0..25)
        .max_by(|&i, &j| v[i * 100 + p].total_cmp(&v[j * 100 + p]))
        .unwrap();
    assert_eq!(correlation::displacement(2, best), (1, 0));
}

fn assert_grad<F>(inputs: &[Tensor<f64>], f: F)
where
    F: Fn(&mut Tape<f64>, &[lfv_autodiff::Var]) -> lfv_autodiff::Result<lfv_autodiff::Var>,
{
    let r = gradcheck::check(inputs, EPS, f).unwrap();
    let e = r.max_relative_error();
    assert!(e < TOL, "relative error {e}");
}

/// Random weights for a weighted sum so the checked scalar depends on every output.
fn probe(
    tape: &mut Tape<f64>,
    y: lfv_autodiff::Var,
    seed: u64,
) -> lfv_autodiff::Result<lfv_autodiff::Var> {
    let w = random(tape.shape(y), seed);
    let m = tape.mul_const(y, &w)?;
    tape.sum(m)
}

#[test]
fn gradcheck_conv2d() {
    let inputs = [
        random(&[2, 2, 5, 5], 20),
        random(&[3, 2, 3, 3], 21),
        random(&[3], 22),
    ];
    assert_grad(&inputs, |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
        probe(t, y, 23)
    });
}

#[test]
fn gradcheck_conv3d() {
    let inputs = [
        random(&[1, 2, 4, 4, 4], 24),
        random(&[2, 2, 3, 3, 3], 25),
        random(&[2], 26),
    ];
    assert_grad(&inputs, |t, v| {
        let y = t.conv3d(v[0], v[1], Some(v[2]), (1, 2), (1, 1))?;
        probe(t, y, 27)
    });
}

#[test]
fn gradcheck_correlation() {
    let inputs = [random(&[1, 3, 5, 6], 28), random(&[1, 3, 5, 6], 29)];
    assert_grad(&inputs, |t, v| {
        let y = t.correlation(v[0], v[1], 2)?;
        probe(t, y, 30)
    });
}

#[test]
fn gradcheck_activations_and_elementwise() {
    // Keep values away from the kinks of leaky ReLU and clamp.
    let mut x = random(&[2, 3, 4], 31);
    x.data_mut().iter_mut().for_each(|v| {
        if v.abs() < 0.05 {
            *v += 0.2
        }
    });
    let y = random(&[2, 3, 4], 32);
    assert_grad(&[x, y], |t, v| {
        let a = t.leaky_relu(v[0], 0.2)?;
        let b = t.tanh(v[1])?;
        let c = t.mul(a, b)?;
        let d = t.sub(c, v[1])?;
        let e = t.add(d, a)?;
        let f = t.scale(e, 1.7)?;
        let g = t.clamp(f, -0.6, 0.6)?;
        probe(t, g, 33)
    });
}

#[test]
fn gradcheck_structural_ops() {
    let inputs = [random(&[2, 3, 2, 3], 34), random(&[2, 1, 2, 3], 35)];
    assert_grad(&inputs, |t, v| {
        let c = t.concat(&[v[0], v[1]])?;
        let s = t.swap_axes01(c)?;
        let u = t.upsample2x(s)?;
        let r = t.reshape(u, &[4, 2, 4, 6])?;
        probe(t, r, 36)
    });
}

#[test]
fn gradcheck_warp() {
    let src = random(&[1, 2, 6, 7], 37);
    // Fractional flows away from integer crossings, some pointing outside.
    let flow = Tensor::from_fn(&[1, 2, 6, 7], |i| {
        0.37 + 1.3 * ((i * 7919) % 11) as f64 / 11.0 - 0.9
    });
    assert_grad(&[src, flow], |t, v| {
        let y = t.warp(v[0], v[1])?;
        probe(t, y, 38)
    });
}

#[test]
fn gradcheck_axis0_reductions() {
    let inputs = [random(&[5, 2, 3], 39)];
    assert_grad(&inputs, |t, v| {
        let m = t.mean_axis0(v[0])?;
        let s = t.var_axis0(v[0])?;
        let a = probe(t, m, 40)?;
        let b = probe(t, s, 41)?;
        t.add(a, b)
    });
}

#[test]
fn gradcheck_losses() {
    let a = random(&[1, 2, 4, 5], 42);
    let b = random(&[1, 2, 4, 5], 43);
    let mask = Tensor::from_fn(&[1, 2, 4, 5], |i| (i % 3 != 0) as u8 as f64);
    assert_grad(&[a, b], move |t, v| {
        let l1 = t.l1(v[0], v[1])?;
        let ml = t.masked_l1(v[0], v[1], &mask)?;
        let sm = t.smoothness(v[0])?;
        let s = t.add(l1, ml)?;
        let s = t.add(s, sm)?;
        let m = t.mean(v[1])?;
        t.add(s, m)
    });
}

#[test]
fn masked_l1_divides_by_mask_count() {
    let mut tape = Tape::<f64>::new();
    let a = tape
        .constant(Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
        .unwrap();
    let b = tape.constant(Tensor::zeros(&[4])).unwrap();
    let mask = Tensor::new(&[4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    let l = tape.masked_l1(a, b, &mask).unwrap();
    assert_eq!(tape.value(l).item(), 2.0);
    assert!(tape.masked_l1(a, b, &Tensor::zeros(&[4])).is_err());
}

proptest! {
    #[test]
    fn conv_is_linear_in_input(seed in 0u64..1000, alpha in -2.0f64..2.0) {
        let x1 = random(&[1, 2, 5, 5], seed);
        let x2 = random(&[1, 2, 5, 5], seed + 1);
        let w = random(&[3, 2, 3, 3], seed + 2);
        let mut tape = Tape::new();
        let wv = tape.constant(w).unwrap();
        let combo = Tensor::from_fn(&[1, 2, 5, 5], |i| x1.data()[i] + alpha * x2.data()[i]);
        let run = |tape: &mut Tape<f64>, x: Tensor<f64>| {
            let v = tape.constant(x).unwrap();
            let y = tape.conv2d(v, wv, None, 1, 1).unwrap();
            tape.value(y).data().to_vec()
        };
        let y1 = run(&mut tape, x1.clone());
        let y2 = run(&mut tape, x2.clone());
        let yc = run(&mut tape, combo);
        for i in 0..yc.len() {
            prop_assert!((yc[i] - (y1[i] + alpha * y2[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn leaky_relu_is_identity_on_nonnegatives(v in proptest::collection::vec(0.0f64..10.0, 1..20)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[v.len()], v.clone()).unwrap()).unwrap();
        let y = tape.leaky_relu(x, 0.2).unwrap();
        prop_assert_eq!(tape.value(y).data(), v.as_slice());
    }
}

use proptest::prelude::*;
use sofar_core::binarize::{BinConvParams, ScaleMode};
use sofar_core::bitkernel::*;
use sofar_core::{Shape, Tensor};

fn pm(v: f32) -> f32 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Direct-loop oracle: `E[o] · Σ sign(x) · sign(w)` over the zero-padded window.
#[allow(clippy::needless_range_loop)]
fn direct(x: &Tensor, w: &Tensor, scale: &[f32], stride: usize, pad: usize) -> Tensor {
    let (s, ws) = (x.shape(), w.shape());
    let k = ws.h();
    let oh = (s.h() + 2 * pad - k) / stride + 1;
    let ow = (s.w() + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(s.n(), ws.n(), oh, ow));
    for n in 0..s.n() {
        for o in 0..ws.n() {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0i64;
                    for c in 0..s.c() {
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let xx = (ox * stride + kx) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= s.h() as isize || xx >= s.w() as isize {
                                    continue;
                                }
                                let a = pm(x.at(n, c, y as usize, xx as usize));
                                acc += (a * pm(w.at(o, c, ky, kx))) as i64;
                            }
                        }
                    }
                    out.set(n, o, oy, ox, scale[o] * acc as f32);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Case {
    x: Tensor,
    w: Tensor,
    stride: usize,
    pad: usize,
}

fn case() -> impl Strategy<Value = Case> {
    (
        1usize..=2,
        1usize..=32,
        1usize..=32,
        prop::sample::select(vec![1usize, 3]),
        1usize..=16,
        1usize..=16,
        1usize..=2,
        0usize..=1,
    )
        .prop_filter("window fits", |&(_, _, _, k, h, w, _, p)| h + 2 * p >= k && w + 2 * p >= k)
        .prop_flat_map(|(n, c, o, k, h, w, stride, pad)| {
            let xs = prop::collection::vec(prop_oneof![-1.0f32..1.0, Just(0.0f32)], n * c * h * w);
            let ws = prop::collection::vec(-1.0f32..1.0, o * c * k * k);
            (xs, ws).prop_map(move |(xs, ws)| Case {
                x: Tensor::from_vec(Shape::new(n, c, h, w), xs).unwrap(),
                w: Tensor::from_vec(Shape::new(o, c, k, k), ws).unwrap(),
                stride,
                pad,
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn packed_matches_float_and_direct(case in case()) {
        let mut p = BinConvParams::new(case.w.clone(), ScaleMode::PerFilter).unwrap();
        p.pack();
        let packed = binary_conv2d(&PackedActivations::from_tensor(&case.x), &p, case.stride, case.pad).unwrap();
        let float = binary_conv2d_float(&case.x, &p, case.stride, case.pad).unwrap();
        prop_assert_eq!(packed.data(), float.data());
        let oracle = direct(&case.x, &case.w, p.scale(), case.stride, case.pad);
        prop_assert_eq!(packed, oracle);
    }

    #[test]
    fn pack_unpack_round_trip(v in prop::collection::vec(-1.0f32..1.0, 0..300)) {
        let plane = BitPlane::from_signs(&v);
        prop_assert_eq!(plane.len(), v.len());
        prop_assert_eq!(plane.unpack(), v.iter().map(|&x| pm(x)).collect::<Vec<_>>());
    }

    #[test]
    fn dot_matches_sign_products(pair in (0usize..300).prop_flat_map(|n| (
        prop::collection::vec(-1.0f32..1.0, n),
        prop::collection::vec(-1.0f32..1.0, n),
    ))) {
        let (a, b) = pair;
        let (pa, pb) = (BitPlane::from_signs(&a), BitPlane::from_signs(&b));
        let oracle: i64 = a.iter().zip(&b).map(|(x, y)| (pm(*x) * pm(*y)) as i64).sum();
        prop_assert_eq!(xnor_popcount_dot(&pa, &pb).unwrap(), oracle);
        prop_assert_eq!(xnor_popcount_dot(&pb, &pa).unwrap(), oracle);
        prop_assert_eq!(xnor_popcount_dot(&pa, &pa).unwrap(), a.len() as i64);
        let h = pa.hamming_distance(&pb).unwrap() as i64;
        prop_assert_eq!(oracle, a.len() as i64 - 2 * h);
    }
}

#[test]
fn length_mismatch_is_an_error() {
    let a = BitPlane::from_signs(&[1.0, -1.0]);
    let b = BitPlane::from_signs(&[1.0]);
    assert!(xnor_popcount_dot(&a, &b).is_err());
}

#[test]
fn unpacked_params_are_rejected() {
    let p = BinConvParams::new(Tensor::full(Shape::new(1, 1, 1, 1), 1.0), ScaleMode::PerFilter).unwrap();
    let x = PackedActivations::from_tensor(&Tensor::full(Shape::new(1, 1, 2, 2), 1.0));
    assert_eq!(binary_conv2d(&x, &p, 1, 0), Err(KernelError::NotPacked));
}

use neurovasc_autograd::{conv3d_reference, Conv3dOpts, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, opts: Conv3dOpts) -> Tensor<f64> {
    let tape = Tape::no_grad();
    let bv = b.map(|b| tape.constant(b.clone()));
    tape.constant(x.clone()).conv3d(&tape.constant(w.clone()), bv.as_ref(), opts).value().clone()
}

#[test]
fn large_input_crosses_im2col_chunks() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::randn([1, 8, 20, 24, 24], 1.0, &mut rng);
    let w = Tensor::randn([6, 8, 3, 3, 3], 0.2, &mut rng);
    let opts = Conv3dOpts::same([3, 3, 3], [2, 2, 2]);
    let fast = conv(&x, &w, None, opts);
    let slow = conv3d_reference(&x, &w, None, opts);
    assert!(fast.max_abs_diff(&slow) < 1e-10);
}

#[test]
fn transpose_matches_scatter_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::<f64>::randn([1, 3, 2, 3, 2], 1.0, &mut rng);
    let w = Tensor::<f64>::randn([3, 2, 2, 2, 2], 1.0, &mut rng);
    let tape = Tape::no_grad();
    let y = tape.constant(x.clone()).conv_transpose3d_2x(&tape.constant(w.clone()), None);
    let y = y.value();
    for co in 0..2 {
        for z in 0..4 {
            for yy in 0..6 {
                for xx in 0..4 {
                    let mut acc = 0.0;
                    for ci in 0..3 {
                        acc += x.get(&[0, ci, z / 2, yy / 2, xx / 2]) * w.get(&[ci, co, z % 2, yy % 2, xx % 2]);
                    }
                    assert!((y.get(&[0, co, z, yy, xx]) - acc).abs() < 1e-12);
                }
            }
        }
    }
}

fn geometry() -> impl Strategy<Value = (Conv3dOpts, [usize; 3], usize, usize)> {
    (
        prop::array::uniform3(1usize..=3),
        prop::array::uniform3(0usize..=2),
        prop::array::uniform3(1usize..=2),
        prop::array::uniform3(prop::sample::select(vec![1usize, 3])),
        prop::sample::select(vec![1usize, 2]),
        1usize..=2,
    )
        .prop_map(|(stride, padding, dilation, kernel, groups, per)| {
            (Conv3dOpts { stride, padding, dilation, groups }, kernel, groups * per, groups * 2)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fast_conv_matches_direct_sum((opts, kernel, cin, cout) in geometry(), seed in any::<u64>(), batch in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::randn([batch, cin, 7, 6, 5], 1.0, &mut rng);
        let w = Tensor::<f64>::randn([cout, cin / opts.groups, kernel[0], kernel[1], kernel[2]], 1.0, &mut rng);
        let b = Tensor::<f64>::randn([cout], 1.0, &mut rng);
        let fast = conv(&x, &w, Some(&b), opts);
        let slow = conv3d_reference(&x, &w, Some(&b), opts);
        prop_assert_eq!(fast.shape(), slow.shape());
        prop_assert!(fast.max_abs_diff(&slow) < 1e-10);
    }

    #[test]
    fn depthwise_matches_direct_sum(c in 1usize..=4, seed in any::<u64>(), dil in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::randn([2, c, 5, 6, 7], 1.0, &mut rng);
        let w = Tensor::<f64>::randn([c, 1, 3, 3, 3], 1.0, &mut rng);
        let opts = Conv3dOpts::same([3, 3, 3], [dil; 3]).with_groups(c);
        let fast = conv(&x, &w, None, opts);
        let slow = conv3d_reference(&x, &w, None, opts);
        prop_assert!(fast.max_abs_diff(&slow) < 1e-10);
    }
}

/// Forward value and input/weight gradients of `sum(conv(x, w) * r)`.
fn conv_and_grads<T: neurovasc_autograd::Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    r: &Tensor<T>,
    opts: Conv3dOpts,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let tape = Tape::new();
    let (xv, wv) = (tape.leaf(x.clone()), tape.leaf(w.clone()));
    let y = xv.conv3d(&wv, None, opts);
    let loss = y.mul(&tape.constant(r.clone())).sum_all();
    let g = tape.backward(&loss);
    (y.value().clone(), g.get(&xv).unwrap().clone(), g.get(&wv).unwrap().clone())
}

fn rel_close(a: &Tensor<f32>, b: &Tensor<f64>, tol: f64) -> bool {
    let scale = b.max_abs().max(1.0);
    a.cast::<f64>().max_abs_diff(b) <= tol * scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn single_precision_dense_path_matches_double(
        seed in any::<u64>(),
        cin in 1usize..=5,
        cout in 1usize..=10,
        k in prop::sample::select(vec![1usize, 3, 5]),
        dil in 1usize..=2,
        same in any::<bool>(),
        dims in prop::array::uniform3(prop::sample::select(vec![5usize, 8, 17, 33])),
    ) {
        let kernel = [k, 3, k];
        let opts = if same {
            Conv3dOpts::same(kernel, [dil; 3])
        } else {
            Conv3dOpts { dilation: [dil; 3], ..Default::default() }
        };
        prop_assume!((0..3).all(|a| dims[a] + 2 * opts.padding[a] > dil * (kernel[a] - 1)));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::randn([2, cin, dims[0], dims[1], dims[2]], 1.0, &mut rng);
        let w = Tensor::<f64>::randn([cout, cin, kernel[0], kernel[1], kernel[2]], 0.3, &mut rng);
        let out = opts.output_dims(dims, kernel);
        let r = Tensor::<f64>::randn([2, cout, out[0], out[1], out[2]], 1.0, &mut rng);
        let (y64, dx64, dw64) = conv_and_grads(&x, &w, &r, opts);
        let (y32, dx32, dw32) = conv_and_grads(&x.cast::<f32>(), &w.cast::<f32>(), &r.cast::<f32>(), opts);
        prop_assert!(rel_close(&y32, &y64, 1e-5));
        prop_assert!(rel_close(&dx32, &dx64, 1e-5));
        prop_assert!(rel_close(&dw32, &dw64, 1e-4));
    }
}

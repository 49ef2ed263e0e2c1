use avatarkit_tensor::gradcheck::{check_inputs, check_params};
use avatarkit_tensor::nn::{BiRnn, Conv2d, Linear};
use avatarkit_tensor::{concat, seeded_rng, Array, ParamStore};
use proptest::prelude::*;

fn smooth(shape: &[usize], phase: f64) -> Array<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37 + phase).sin() * 0.8).collect();
    Array::from_f64(shape, &data)
}

const TOL: f64 = 1e-6;

#[test]
fn elementwise_and_broadcast() {
    let a = smooth(&[3, 4], 0.1);
    let b = smooth(&[4], 1.3).map(|x| x + 2.0);
    let r = check_inputs(&[a, b], 1e-6, 100, |_, v| {
        let (a, b) = (v[0], v[1]);
        ((a * b).tanh() + a.sigmoid() / b - a.softplus() * b.exp().ln()).square().mean()
    });
    assert!(r.rel_err < TOL, "{r:?}");
}

#[test]
fn shape_ops() {
    let a = smooth(&[2, 3, 4], 0.4);
    let r = check_inputs(&[a], 1e-6, 100, |_, v| {
        let x = v[0];
        let p = x.permute(&[2, 0, 1]).reshape(&[4, 6]);
        let c = concat(&[p.narrow(1, 1, 3), p.index_select0(&[3, 3, 0, 1])], 1);
        c.log_softmax().sum_axis(0, false).square().sum() + x.mean_axis(1, true).sin().sum()
    });
    assert!(r.rel_err < TOL, "{r:?}");
}

#[test]
fn matmul_both_sides() {
    let a = smooth(&[3, 5], 0.2);
    let b = smooth(&[5, 2], 0.9);
    let r = check_inputs(&[a, b], 1e-6, 100, |_, v| v[0].matmul(v[1]).tanh().sum());
    assert!(r.rel_err < TOL, "{r:?}");
}

#[test]
fn conv_pool_upsample() {
    let x = smooth(&[2, 2, 6, 6], 0.3);
    let w = smooth(&[3, 2, 3, 3], 1.1);
    let b = smooth(&[3], 2.0);
    for (stride, pad) in [(1, 1), (2, 1)] {
        let r = check_inputs(&[x.clone(), w.clone(), b.clone()], 1e-6, 60, |_, v| {
            let y = v[0].conv2d(v[1], Some(v[2]), stride, pad);
            let s = y.shape();
            let y = if s[2] % 2 == 0 { y.avg_pool2d(2, 2).upsample_nearest(2) } else { y };
            y.tanh().square().mean()
        });
        assert!(r.rel_err < TOL, "stride {stride}: {r:?}");
    }
}

#[test]
fn recurrent_layers() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = seeded_rng(3);
    let gru = BiRnn::gru(&mut store, &mut rng, "gru", 3, 4);
    let lstm = BiRnn::lstm(&mut store, &mut rng, "lstm", 8, 2);
    let head = Linear::new(&mut store, &mut rng, "head", 4, 1);
    let xs = smooth(&[5, 3], 0.7);
    let ids: Vec<_> = store.ids().collect();
    let r = check_params(&store, &ids, 1e-6, 20, |s| {
        let x = s.constant(xs.clone());
        let h = lstm.forward(s, gru.forward(s, x));
        head.forward(s, h).square().sum()
    });
    assert!(r.rel_err < TOL, "{r:?}");
}

#[test]
fn conv_layer_params() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = seeded_rng(5);
    let conv = Conv2d::new(&mut store, &mut rng, "c", 3, 4, 3, 2, 1);
    let x = smooth(&[1, 3, 8, 8], 0.0);
    let ids: Vec<_> = store.ids().collect();
    let r = check_params(&store, &ids, 1e-6, 40, |s| conv.forward(s, s.constant(x.clone())).leaky_relu(0.2).square().mean());
    assert!(r.rel_err < TOL, "{r:?}");
}

proptest! {
    #[test]
    fn log_softmax_rows_are_distributions(data in proptest::collection::vec(-20.0f64..20.0, 12)) {
        let g = avatarkit_tensor::Graph64::new();
        let y = g.constant(Array::from_f64(&[3, 4], &data)).log_softmax().value();
        for row in y.data().chunks(4) {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| v <= 0.0));
        }
    }
}

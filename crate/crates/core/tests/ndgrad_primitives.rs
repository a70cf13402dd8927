//! Oracles and gradient checks for every differentiable primitive.

use bridgeseg::ndgrad::{
    gradcheck, AttnMask, DiffArray, GradcheckOptions, Graph, MhaParams, Padding, ParamId, ParamStore, Var,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
    DiffArray::uniform(&[n], 1.0, &mut rng(seed)).values().to_vec()
}

/// Registers random inputs and checks `sum(op(inputs) ⊙ R)` for a fixed
/// random `R`, so the upstream gradient is not all ones.
fn check_op(shapes: &[&[usize]], seed: u64, op: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.register(format!("in{i}"), DiffArray::uniform(s, 1.0, &mut r)).unwrap())
        .collect();
    let probe = |g: &mut Graph, s: &ParamStore| {
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
        let y = op(g, &vars);
        let w = DiffArray::uniform(g.shape(y), 1.0, &mut rng(seed ^ 0xabcd));
        let wv = g.constant(&w);
        let prod = g.mul(y, wv)?;
        g.sum_all(prod)
    };
    let opts = GradcheckOptions { max_entries_per_param: Some(48), ..Default::default() };
    gradcheck(&store, probe, &opts).unwrap().max_rel_err()
}

fn conv_oracle(
    x: &[f64],
    (c_in, h, w): (usize, usize, usize),
    wt: &[f64],
    (c_out, k): (usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; c_out * oh * ow];
    for co in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[co];
                for ci in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += x[(ci * h + iy as usize) * w + ix as usize]
                                    * wt[((co * c_in + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (out, oh, ow)
}

#[test]
fn conv2d_sum_of_ones() {
    let mut g = Graph::new();
    let x = g.constant(&DiffArray::full(&[1, 4, 4], 1.0));
    let w = g.constant(&DiffArray::full(&[1, 1, 2, 2], 1.0));
    let y = g.conv2d(x, w, None, 2, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 2, 2]);
    assert_eq!(g.value(y), &[4.0; 4]);
}

#[test]
fn conv2d_identity_kernel() {
    let mut g = Graph::new();
    let xa = DiffArray::new(&[1, 4, 4], rand_vec(16, 3)).unwrap();
    let x = g.constant(&xa);
    let w = g.constant(&DiffArray::full(&[1, 1, 1, 1], 1.0));
    let y = g.conv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y), xa.values());
}

#[test]
fn conv2d_matches_loop_oracle() {
    let xv = rand_vec(2 * 6 * 6, 11);
    let wv = rand_vec(3 * 2 * 3 * 3, 12);
    let bv = rand_vec(3, 13);
    let mut g = Graph::new();
    let x = g.constant_from(&[2, 6, 6], xv.clone()).unwrap();
    let w = g.constant_from(&[3, 2, 3, 3], wv.clone()).unwrap();
    let b = g.constant_from(&[3], bv.clone()).unwrap();
    let y = g.conv2d(x, w, Some(b), 1, 1).unwrap();
    let (want, oh, ow) = conv_oracle(&xv, (2, 6, 6), &wv, (3, 3), &bv, 1, 1);
    assert_eq!(g.shape(y), &[3, oh, ow]);
    for (a, b) in g.value(y).iter().zip(&want) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn conv2d_rejects_channel_mismatch() {
    let mut g = Graph::new();
    let x = g.constant(&DiffArray::zeros(&[2, 4, 4]));
    let w = g.constant(&DiffArray::zeros(&[1, 3, 2, 2]));
    assert!(matches!(g.conv2d(x, w, None, 1, 0), Err(bridgeseg::Error::Config(_))));
}

#[test]
fn conv2d_asymmetric_padding_keeps_size() {
    let mut g = Graph::new();
    let x = g.constant(&DiffArray::full(&[1, 3, 3], 1.0));
    let w = g.constant(&DiffArray::full(&[1, 1, 2, 2], 1.0));
    let pad = Padding { top: 0, bottom: 1, left: 0, right: 1 };
    let y = g.conv2d_padded(x, w, None, 1, pad).unwrap();
    assert_eq!(g.shape(y), &[1, 3, 3]);
    assert_eq!(g.value(y), &[4.0, 4.0, 2.0, 4.0, 4.0, 2.0, 2.0, 2.0, 1.0]);
}

#[test]
fn transposed_conv_disjoint_tiles() {
    let mut g = Graph::new();
    let x = g.constant(&DiffArray::full(&[1, 2, 2], 1.0));
    let w = g.constant(&DiffArray::full(&[1, 1, 2, 2], 1.0));
    let y = g.conv_transpose2d(x, w, None, 2).unwrap();
    assert_eq!(g.shape(y), &[1, 4, 4]);
    assert_eq!(g.value(y), &[1.0; 16]);
}

#[test]
fn transposed_conv_doubles_shape() {
    let mut g = Graph::new();
    let x = g.constant(&DiffArray::zeros(&[8, 13, 13]));
    let w = g.constant(&DiffArray::zeros(&[8, 8, 2, 2]));
    let y = g.conv_transpose2d(x, w, None, 2).unwrap();
    assert_eq!(g.shape(y), &[8, 26, 26]);
}

#[test]
fn transposed_conv_rejects_overlapping_kernels() {
    let mut g = Graph::new();
    let x = g.constant(&DiffArray::zeros(&[1, 2, 2]));
    let w = g.constant(&DiffArray::zeros(&[1, 1, 3, 3]));
    assert!(g.conv_transpose2d(x, w, None, 2).is_err());
}

/// Transposed convolution is the input-gradient of the strided convolution
/// that shares its weight tensor.
#[test]
fn transposed_conv_equals_conv_backward() {
    let (c_in, c_out, h) = (3, 2, 3);
    let xv = rand_vec(c_in * h * h, 21);
    let wv = rand_vec(c_in * c_out * 4, 22);

    let mut g = Graph::new();
    let x = g.constant_from(&[c_in, h, h], xv.clone()).unwrap();
    let w = g.constant_from(&[c_in, c_out, 2, 2], wv.clone()).unwrap();
    let y = g.conv_transpose2d(x, w, None, 2).unwrap();
    let got = g.value(y).to_vec();

    // conv2d weight [C_out_conv = c_in, C_in_conv = c_out, 2, 2] is the same buffer.
    let mut store = ParamStore::new();
    let zid = store.register("z", DiffArray::zeros(&[c_out, 2 * h, 2 * h])).unwrap();
    let mut g2 = Graph::new();
    let z = g2.param(&store, zid);
    let wc = g2.constant_from(&[c_in, c_out, 2, 2], wv.clone()).unwrap();
    let conv = g2.conv2d(z, wc, None, 2, 0).unwrap();
    let up = g2.constant_from(&[c_in, h, h], xv.clone()).unwrap();
    let prod = g2.mul(conv, up).unwrap();
    let s = g2.sum_all(prod).unwrap();
    let grads = g2.backward(s).unwrap();
    let want = grads.param(zid).unwrap();
    for (a, b) in got.iter().zip(want) {
        assert!((a - b).abs() < 1e-6);
    }

    // and the direct definition, tile by tile
    for co in 0..c_out {
        for y in 0..2 * h {
            for x in 0..2 * h {
                let mut acc = 0.0;
                for ci in 0..c_in {
                    acc += xv[(ci * h + y / 2) * h + x / 2] * wv[((ci * c_out + co) * 2 + y % 2) * 2 + x % 2];
                }
                assert!((got[(co * 2 * h + y) * 2 * h + x] - acc).abs() < 1e-6);
            }
        }
    }
}

fn dense_attention(q: &[f64], k: &[f64], v: &[f64], lq: usize, lk: usize, d: usize, heads: usize) -> Vec<f64> {
    let dh = d / heads;
    let mut out = vec![0.0; lq * d];
    for h in 0..heads {
        for i in 0..lq {
            let scores: Vec<f64> = (0..lk)
                .map(|j| (0..dh).map(|t| q[i * d + h * dh + t] * k[j * d + h * dh + t]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for t in 0..dh {
                out[i * d + h * dh + t] = (0..lk).map(|j| e[j] / z * v[j * d + h * dh + t]).sum();
            }
        }
    }
    out
}

fn linear_oracle(x: &[f64], w: &[f64], b: Option<&[f64]>, n: usize, fin: usize, fout: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * fout];
    for i in 0..n {
        for o in 0..fout {
            y[i * fout + o] = b.map_or(0.0, |b| b[o]) + (0..fin).map(|t| x[i * fin + t] * w[o * fin + t]).sum::<f64>();
        }
    }
    y
}

#[test]
fn attention_matches_dense_oracle() {
    let mut store = ParamStore::new();
    let mhp = MhaParams::new(&mut store, "attn", 8, 8, 2, false, &mut rng(5)).unwrap();
    let qa = DiffArray::new(&[3, 8], rand_vec(24, 31)).unwrap();
    let ka = DiffArray::new(&[5, 8], rand_vec(40, 32)).unwrap();
    let mut g = Graph::new();
    let q = g.constant(&qa);
    let k = g.constant(&ka);
    let y = g.multi_head_attention(&store, &mhp, q, k, k, &AttnMask::none()).unwrap();

    let p = |id: ParamId| store.get(id).array.values().to_vec();
    let qp = linear_oracle(qa.values(), &p(mhp.q.weight), Some(&p(mhp.q.bias.unwrap())), 3, 8, 8);
    let kp = linear_oracle(ka.values(), &p(mhp.k.weight), None, 5, 8, 8);
    let vp = linear_oracle(ka.values(), &p(mhp.v.weight), Some(&p(mhp.v.bias.unwrap())), 5, 8, 8);
    let att = dense_attention(&qp, &kp, &vp, 3, 5, 8, 2);
    let want = linear_oracle(&att, &p(mhp.o.weight), Some(&p(mhp.o.bias.unwrap())), 3, 8, 8);
    for (a, b) in g.value(y).iter().zip(&want) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn attention_single_key_has_unit_weight() {
    let mut g = Graph::new();
    let q = g.constant(&DiffArray::new(&[4, 4], rand_vec(16, 1)).unwrap());
    let k = g.constant(&DiffArray::new(&[1, 4], rand_vec(4, 2)).unwrap());
    let va = DiffArray::new(&[1, 4], rand_vec(4, 3)).unwrap();
    let v = g.constant(&va);
    let y = g.scaled_dot_attention(q, k, v, 2, &AttnMask::none()).unwrap();
    for row in g.value(y).chunks(4) {
        assert_eq!(row, va.values());
    }
}

#[test]
fn attention_identity_projections_single_token() {
    let mut store = ParamStore::new();
    let mhp = MhaParams::new(&mut store, "a", 4, 4, 1, false, &mut rng(0)).unwrap();
    let eye: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
    for lin in [&mhp.q, &mhp.k, &mhp.v, &mhp.o] {
        store.set_values(lin.weight, &eye).unwrap();
        if let Some(b) = lin.bias {
            store.fill(b, 0.0);
        }
    }
    let xa = DiffArray::new(&[1, 4], vec![0.3, -1.2, 2.0, 0.5]).unwrap();
    let mut g = Graph::new();
    let x = g.constant(&xa);
    let y = g.multi_head_attention(&store, &mhp, x, x, x, &AttnMask::none()).unwrap();
    assert_eq!(g.value(y), xa.values());
}

#[test]
fn attention_rejects_indivisible_heads() {
    let mut store = ParamStore::new();
    assert!(MhaParams::new(&mut store, "a", 6, 6, 4, false, &mut rng(0)).is_err());
    let mut g = Graph::new();
    let q = g.constant(&DiffArray::zeros(&[2, 6]));
    assert!(g.scaled_dot_attention(q, q, q, 4, &AttnMask::none()).is_err());
}

#[test]
fn masked_keys_receive_no_weight() {
    let mut g = Graph::new();
    let q = g.constant(&DiffArray::new(&[2, 2], rand_vec(4, 7)).unwrap());
    let k = g.constant(&DiffArray::new(&[3, 2], rand_vec(6, 8)).unwrap());
    let va = DiffArray::new(&[3, 2], vec![1.0, 2.0, 100.0, 100.0, 3.0, 4.0]).unwrap();
    let v = g.constant(&va);
    let masked = g.scaled_dot_attention(q, k, v, 1, &AttnMask::keys(vec![true, false, true])).unwrap();
    for row in g.value(masked).chunks(2) {
        assert!(row[0] >= 1.0 && row[0] <= 3.0);
    }
    let causal = g.scaled_dot_attention(q, k, v, 1, &AttnMask::causal()).unwrap();
    assert_eq!(&g.value(causal)[..2], &[1.0, 2.0]);
}

#[test]
fn softmax_rows_sum_to_one_and_sigmoid_is_symmetric() {
    let mut g = Graph::new();
    let xa = DiffArray::new(&[4, 7], rand_vec(28, 9).iter().map(|v| v * 30.0).collect()).unwrap();
    let x = g.constant(&xa);
    let s = g.softmax(x).unwrap();
    for row in g.value(s).chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    let sp = g.sigmoid(x).unwrap();
    let neg = g.scale(x, -1.0).unwrap();
    let sn = g.sigmoid(neg).unwrap();
    for (a, b) in g.value(sp).iter().zip(g.value(sn)) {
        assert!((a + b - 1.0).abs() < 1e-7);
    }
}

#[test]
fn bilinear_resize_known_values() {
    // 2 → 4 with half-pixel centers: taps at -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
    let mut g = Graph::new();
    let x = g.constant_from(&[1, 1, 2], vec![0.0, 1.0]).unwrap();
    let y = g.resize_bilinear(x, 1, 4).unwrap();
    assert_eq!(g.value(y), &[0.0, 0.25, 0.75, 1.0]);
    let up = g.upsample_nearest(x, 2).unwrap();
    assert_eq!(g.shape(up), &[1, 2, 4]);
    assert_eq!(g.value(up), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
}

#[test]
fn ops_do_not_mutate_inputs_and_backward_accumulates() {
    let mut store = ParamStore::new();
    let id = store.register("x", DiffArray::new(&[2, 3], rand_vec(6, 4)).unwrap()).unwrap();
    let before = store.get(id).array.clone();
    let mut g = Graph::new();
    let x = g.param(&store, id);
    let a = g.gelu(x).unwrap();
    let b = g.sigmoid(x).unwrap();
    let c = g.add(a, b).unwrap();
    let s = g.sum_all(c).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(store.get(id).array, before);
    for (i, gv) in grads.param(id).unwrap().iter().enumerate() {
        let v = before.values()[i];
        let want = bridgeseg::ndgrad::gelu(v + 1e-7) - bridgeseg::ndgrad::gelu(v - 1e-7);
        let sig = bridgeseg::ndgrad::sigmoid(v);
        assert!((gv - (want / 2e-7 + sig * (1.0 - sig))).abs() < 1e-6);
    }
}

const TOL: f64 = 1e-4;

#[test]
fn gradcheck_elementwise_and_structural() {
    assert!(check_op(&[&[3, 4], &[3, 4]], 1, |g, v| g.add(v[0], v[1]).unwrap()) < TOL);
    assert!(check_op(&[&[3, 4], &[3, 4]], 2, |g, v| g.sub(v[0], v[1]).unwrap()) < TOL);
    assert!(check_op(&[&[3, 4], &[3, 4]], 3, |g, v| g.mul(v[0], v[1]).unwrap()) < TOL);
    assert!(check_op(&[&[5]], 4, |g, v| g.sigmoid(v[0]).unwrap()) < TOL);
    assert!(check_op(&[&[5]], 5, |g, v| g.gelu(v[0]).unwrap()) < TOL);
    assert!(check_op(&[&[2, 3], &[1, 3]], 6, |g, v| g.concat(&[v[0], v[1]]).unwrap()) < TOL);
    assert!(check_op(&[&[4, 3]], 7, |g, v| g.slice(v[0], 1, 3).unwrap()) < TOL);
    assert!(check_op(&[&[4, 3]], 8, |g, v| g.transpose2d(v[0]).unwrap()) < TOL);
    assert!(check_op(&[&[4, 3]], 9, |g, v| g.reshape(v[0], &[2, 6]).unwrap()) < TOL);
    assert!(check_op(&[&[5, 3]], 10, |g, v| g.gather_rows(v[0], &[4, 0, 4]).unwrap()) < TOL);
    assert!(check_op(&[&[4, 3]], 11, |g, v| g.mean_axis(v[0], 0).unwrap()) < TOL);
    assert!(check_op(&[&[4, 3]], 12, |g, v| g.mean_axis(v[0], 1).unwrap()) < TOL);
    assert!(check_op(&[&[4, 3]], 13, |g, v| g.mean_all(v[0]).unwrap()) < TOL);
}

#[test]
fn gradcheck_relu_away_from_kink() {
    let mut store = ParamStore::new();
    let id = store.register("x", DiffArray::new(&[4], vec![-1.0, 0.5, 0.01, 2.0]).unwrap()).unwrap();
    let r = gradcheck(
        &store,
        |g, s| {
            let x = g.param(s, id);
            let y = g.relu(x)?;
            let y2 = g.mul(y, y)?;
            g.sum_all(y2)
        },
        &GradcheckOptions::default(),
    )
    .unwrap();
    assert!(r.max_rel_err() < TOL);
}

#[test]
fn gradcheck_dense_layers() {
    assert!(check_op(&[&[3, 4], &[4, 5]], 20, |g, v| g.matmul(v[0], v[1]).unwrap()) < TOL);
    assert!(check_op(&[&[3, 4], &[5, 4], &[5]], 21, |g, v| g.linear(v[0], v[1], Some(v[2])).unwrap()) < TOL);
    assert!(check_op(&[&[4], &[5, 4]], 22, |g, v| g.linear(v[0], v[1], None).unwrap()) < TOL);
    assert!(check_op(&[&[3, 6], &[6], &[6]], 23, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()) < TOL);
    assert!(check_op(&[&[3, 6]], 24, |g, v| g.softmax(v[0]).unwrap()) < TOL);
}

#[test]
fn gradcheck_spatial() {
    assert!(check_op(&[&[2, 5, 5], &[3, 2, 3, 3], &[3]], 30, |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1).unwrap()) < TOL);
    let pad = Padding { top: 0, bottom: 1, left: 0, right: 1 };
    assert!(check_op(&[&[2, 4, 4], &[2, 2, 2, 2], &[2]], 31, |g, v| g
        .conv2d_padded(v[0], v[1], Some(v[2]), 1, pad)
        .unwrap())
        < TOL);
    assert!(check_op(&[&[2, 3, 3], &[2, 3, 2, 2], &[3]], 32, |g, v| g
        .conv_transpose2d(v[0], v[1], Some(v[2]), 2)
        .unwrap())
        < TOL);
    assert!(check_op(&[&[2, 3, 4]], 33, |g, v| g.resize_bilinear(v[0], 7, 5).unwrap()) < TOL);
    assert!(check_op(&[&[2, 8, 8]], 34, |g, v| g.resize_bilinear(v[0], 3, 4).unwrap()) < TOL);
    assert!(check_op(&[&[2, 2, 3]], 35, |g, v| g.upsample_nearest(v[0], 4).unwrap()) < TOL);
}

#[test]
fn gradcheck_attention() {
    assert!(check_op(&[&[3, 8], &[5, 8], &[5, 8]], 40, |g, v| g
        .scaled_dot_attention(v[0], v[1], v[2], 2, &AttnMask::none())
        .unwrap())
        < TOL);
    assert!(check_op(&[&[4, 4], &[4, 4], &[4, 4]], 41, |g, v| g
        .scaled_dot_attention(v[0], v[1], v[2], 1, &AttnMask { causal: true, key_valid: Some(vec![true, true, false, true]) })
        .unwrap())
        < TOL);
    let mut store = ParamStore::new();
    let mhp = MhaParams::new(&mut store, "attn", 8, 6, 2, false, &mut rng(42)).unwrap();
    let q = store.register("q", DiffArray::uniform(&[3, 8], 1.0, &mut rng(43))).unwrap();
    let kv = store.register("kv", DiffArray::uniform(&[4, 6], 1.0, &mut rng(44))).unwrap();
    let r = gradcheck(
        &store,
        |g, s| {
            let qv = g.param(s, q);
            let k = g.param(s, kv);
            let y = g.multi_head_attention(s, &mhp, qv, k, k, &AttnMask::none())?;
            let y2 = g.mul(y, y)?;
            g.sum_all(y2)
        },
        &GradcheckOptions::default(),
    )
    .unwrap();
    assert!(r.passed(), "{:?}", r.failures().collect::<Vec<_>>());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn linear_gradients_on_random_shapes(n in 1usize..=16, fin in 1usize..=16, fout in 1usize..=16, seed in 0u64..1000) {
        let err = check_op(&[&[n, fin], &[fout, fin], &[fout]], seed, |g, v| g.linear(v[0], v[1], Some(v[2])).unwrap());
        prop_assert!(err < TOL, "err {err}");
    }

    #[test]
    fn layer_norm_and_softmax_on_random_shapes(r in 1usize..=16, d in 2usize..=16, seed in 0u64..1000) {
        let err = check_op(&[&[r, d], &[d], &[d]], seed, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap());
        prop_assert!(err < TOL, "layer_norm err {err}");
        let err = check_op(&[&[r, d]], seed, |g, v| g.softmax(v[0]).unwrap());
        prop_assert!(err < TOL, "softmax err {err}");
    }

    #[test]
    fn conv_gradients_and_oracle_on_random_shapes(
        c_in in 1usize..=3, c_out in 1usize..=3, h in 2usize..=16, k in 1usize..=3,
        stride in 1usize..=2, pad in 0usize..=1, seed in 0u64..1000,
    ) {
        prop_assume!(h + 2 * pad >= k);
        let err = check_op(&[&[c_in, h, h], &[c_out, c_in, k, k], &[c_out]], seed, |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap()
        });
        prop_assert!(err < TOL, "err {err}");

        let xv = rand_vec(c_in * h * h, seed);
        let wv = rand_vec(c_out * c_in * k * k, seed + 1);
        let bv = rand_vec(c_out, seed + 2);
        let mut g = Graph::new();
        let x = g.constant_from(&[c_in, h, h], xv.clone()).unwrap();
        let w = g.constant_from(&[c_out, c_in, k, k], wv.clone()).unwrap();
        let b = g.constant_from(&[c_out], bv.clone()).unwrap();
        let y = g.conv2d(x, w, Some(b), stride, pad).unwrap();
        let (want, _, _) = conv_oracle(&xv, (c_in, h, h), &wv, (c_out, k), &bv, stride, pad);
        for (a, b) in g.value(y).iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_gradients_on_random_shapes(c in 1usize..=3, h in 1usize..=16, w in 1usize..=16, oh in 1usize..=16, ow in 1usize..=16, seed in 0u64..1000) {
        let err = check_op(&[&[c, h, w]], seed, |g, v| g.resize_bilinear(v[0], oh, ow).unwrap());
        prop_assert!(err < TOL, "err {err}");
    }

    #[test]
    fn attention_gradients_on_random_shapes(lq in 1usize..=8, lk in 1usize..=8, heads in 1usize..=4, dh in 1usize..=4, seed in 0u64..1000) {
        let d = heads * dh;
        let err = check_op(&[&[lq, d], &[lk, d], &[lk, d]], seed, |g, v| {
            g.scaled_dot_attention(v[0], v[1], v[2], heads, &AttnMask::none()).unwrap()
        });
        prop_assert!(err < TOL, "err {err}");
    }
}

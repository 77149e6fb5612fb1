//! Derived-value tests: each checks an implementation path against an
//! independent reference computation.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ucsg_core::config::ModelConfig;
use ucsg_core::data::{generate_synthetic, SyntheticSpec};
use ucsg_core::model::{csg_layer, gru, params::ParamStore, CsgModel, Mode, SelectionRecord};
use ucsg_core::occupancy::occupancy_scalar;
use ucsg_core::sdf::{
    eval_primitive_batch, sdf_box, sdf_circle, sdf_rectangle, sdf_sphere, transform_point_2d,
    transform_point_3d, Primitive, PrimitiveKind, TapePrimitive,
};
use ucsg_core::tape::Tape;
use ucsg_core::tree::{extract_tree, CsgNode, CsgOp, CsgTree};
use ucsg_core::ForwardOutput;

use common::ValueGen;

// ── Convolution forward vs. nested-loop oracle ──────────────────────────

fn conv2d_oracle(
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    wt: &[f64],
    (co, kh, kw): (usize, usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for c in 0..ci {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x[(c * h + iy as usize) * w + ix as usize]
                                * wt[((o * ci + c) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_nested_loop_oracle() {
    let mut gen = ValueGen::new(101);
    for (stride, pad) in [(2usize, 1usize), (1, 0), (2, 0), (1, 1)] {
        let (ci, h, w) = (2usize, 8usize, 8usize);
        let (co, k) = (3usize, 4usize);
        if h + 2 * pad < k {
            continue;
        }
        let x = gen.vec(ci * h * w);
        let wt = gen.vec(co * ci * k * k);
        let b = gen.vec(co);
        let mut tape = Tape::new();
        let xi = tape.leaf(x.clone(), &[ci, h, w], false).unwrap();
        let wi = tape.leaf(wt.clone(), &[co, ci, k, k], false).unwrap();
        let bi = tape.leaf(b.clone(), &[co], false).unwrap();
        let out = tape.conv2d(xi, wi, Some(bi), stride, pad).unwrap();
        let oracle = conv2d_oracle(&x, (ci, h, w), &wt, (co, k, k), &b, stride, pad);
        assert_eq!(tape.value(out).len(), oracle.len());
        for (a, b) in tape.value(out).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv3d_matches_nested_loop_oracle() {
    let mut gen = ValueGen::new(202);
    let (ci, d) = (2usize, 6usize);
    let (co, k) = (2usize, 4usize);
    let (stride, pad) = (2usize, 1usize);
    let x = gen.vec(ci * d * d * d);
    let wt = gen.vec(co * ci * k * k * k);
    let b = gen.vec(co);
    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone(), &[ci, d, d, d], false).unwrap();
    let wi = tape.leaf(wt.clone(), &[co, ci, k, k, k], false).unwrap();
    let bi = tape.leaf(b.clone(), &[co], false).unwrap();
    let out = tape.conv3d(xi, wi, Some(bi), stride, pad).unwrap();

    let od = (d + 2 * pad - k) / stride + 1;
    let mut oracle = vec![0.0; co * od * od * od];
    for o in 0..co {
        for oz in 0..od {
            for oy in 0..od {
                for ox in 0..od {
                    let mut acc = b[o];
                    for c in 0..ci {
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iz = (oz * stride + kz) as isize - pad as isize;
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iz < 0
                                        || iy < 0
                                        || ix < 0
                                        || iz >= d as isize
                                        || iy >= d as isize
                                        || ix >= d as isize
                                    {
                                        continue;
                                    }
                                    acc += x[((c * d + iz as usize) * d + iy as usize) * d
                                        + ix as usize]
                                        * wt[(((o * ci + c) * k + kz) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    oracle[((o * od + oz) * od + oy) * od + ox] = acc;
                }
            }
        }
    }
    for (a, b) in tape.value(out).iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

// ── Batched SDF vs. scalar path ─────────────────────────────────────────

#[test]
fn primitive_batch_matches_scalar_path() {
    let mut gen = ValueGen::new(7);
    for dim in [2usize, 3] {
        let kinds: [PrimitiveKind; 2] = if dim == 2 {
            [PrimitiveKind::Circle, PrimitiveKind::Rectangle]
        } else {
            [PrimitiveKind::Sphere, PrimitiveKind::Box]
        };
        let slots = if dim == 2 { 2 } else { 3 };
        let rot = if dim == 2 { 1 } else { 4 };
        let n_points = 64;
        let points: Vec<f64> = (0..n_points * dim).map(|_| gen.next_f64() * 0.5 + 0.5).collect();

        let mut tape = Tape::new();
        let points_id = tape.leaf(points.clone(), &[n_points, dim], false).unwrap();
        let mut prims = Vec::new();
        let mut scalar_prims = Vec::new();
        for i in 0..6 {
            let kind = kinds[i % 2];
            let raw: Vec<f64> = (0..slots).map(|_| gen.next_f64() * 0.3 + 0.35).collect();
            let t: Vec<f64> = (0..dim).map(|_| gen.next_f64() * 0.4 + 0.5).collect();
            let q: Vec<f64> = (0..rot).map(|_| gen.next_f64()).collect();
            let rp = tape.leaf(raw.clone(), &[slots], true).unwrap();
            let tp = tape.leaf(t.clone(), &[dim], true).unwrap();
            let qp = tape.leaf(q.clone(), &[rot], true).unwrap();
            prims.push(TapePrimitive {
                kind,
                raw_params: rp,
                translation: tp,
                rotation: qp,
            });
            // Scalar path: explicit transform + per-kind formula.
            let qn = if rot == 4 {
                let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
                q.iter().map(|v| v / norm).collect()
            } else {
                q.clone()
            };
            scalar_prims.push((kind, raw, t, qn));
        }
        let d = eval_primitive_batch(&mut tape, points_id, &prims).unwrap();
        assert_eq!(tape.shape(d), &[n_points, 6]);
        for p in 0..n_points {
            let x = &points[p * dim..(p + 1) * dim];
            for (j, (kind, raw, t, q)) in scalar_prims.iter().enumerate() {
                let expected = match kind {
                    PrimitiveKind::Circle => {
                        let local = transform_point_2d([x[0], x[1]], [t[0], t[1]], q[0]);
                        sdf_circle(local, raw[0].max(1e-4))
                    }
                    PrimitiveKind::Rectangle => {
                        let local = transform_point_2d([x[0], x[1]], [t[0], t[1]], q[0]);
                        sdf_rectangle(local, [raw[0].max(1e-4), raw[1].max(1e-4)])
                    }
                    PrimitiveKind::Sphere => {
                        let local = transform_point_3d([x[0], x[1], x[2]], [t[0], t[1], t[2]], q);
                        sdf_sphere(local, raw[0].max(1e-4))
                    }
                    PrimitiveKind::Box => {
                        let local = transform_point_3d([x[0], x[1], x[2]], [t[0], t[1], t[2]], q);
                        sdf_box(
                            local,
                            [raw[0].max(1e-4), raw[1].max(1e-4), raw[2].max(1e-4)],
                        )
                    }
                };
                let got = tape.value(d)[p * 6 + j];
                assert!(
                    (got - expected).abs() < 1e-12,
                    "dim {dim} prim {j} point {p}: {got} vs {expected}"
                );
            }
        }
    }
}

#[test]
fn rotation_equivariance_of_rectangle() {
    // Rotating the rectangle by pi/2 equals evaluating the unrotated one
    // at the inversely rotated point.
    let mut tape = Tape::new();
    let theta = std::f64::consts::FRAC_PI_2;
    let points = tape.leaf(vec![0.0, 0.4], &[1, 2], false).unwrap();
    let raw = tape.leaf(vec![0.5, 0.25], &[2], false).unwrap();
    let t = tape.leaf(vec![0.0, 0.0], &[2], false).unwrap();
    let rot = tape.leaf(vec![theta], &[1], false).unwrap();
    let prim = TapePrimitive {
        kind: PrimitiveKind::Rectangle,
        raw_params: raw,
        translation: t,
        rotation: rot,
    };
    let d = eval_primitive_batch(&mut tape, points, &[prim]).unwrap();
    let expected = sdf_rectangle([0.4, 0.0], [0.5, 0.25]);
    assert!((tape.value(d)[0] - expected).abs() < 1e-12);
}

#[test]
fn sdf_signs_match_analytic_membership() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..2000 {
        let x: [f64; 2] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let p: [f64; 2] = [rng.gen_range(0.1..0.6), rng.gen_range(0.1..0.6)];
        let inside = x[0].abs() < p[0] && x[1].abs() < p[1];
        let on_boundary = (x[0].abs() - p[0]).abs() < 1e-9 || (x[1].abs() - p[1]).abs() < 1e-9;
        if on_boundary {
            continue;
        }
        let d = sdf_rectangle(x, p);
        assert_eq!(d < 0.0, inside, "rect x={x:?} p={p:?} d={d}");

        let r = rng.gen_range(0.1..0.8);
        let dc = sdf_circle(x, r);
        let norm = (x[0] * x[0] + x[1] * x[1]).sqrt();
        if (norm - r).abs() > 1e-9 {
            assert_eq!(dc < 0.0, norm < r);
        }

        let x3 = [x[0], x[1], rng.gen_range(-1.0..1.0)];
        let p3 = [p[0], p[1], rng.gen_range(0.1..0.6)];
        let inside3 = x3[0].abs() < p3[0] && x3[1].abs() < p3[1] && x3[2].abs() < p3[2];
        let near3 = (x3[0].abs() - p3[0]).abs() < 1e-9
            || (x3[1].abs() - p3[1]).abs() < 1e-9
            || (x3[2].abs() - p3[2]).abs() < 1e-9;
        if !near3 {
            assert_eq!(sdf_box(x3, p3) < 0.0, inside3);
        }
    }
}

#[test]
fn sdf_spatial_gradient_is_1_lipschitz() {
    // |grad_x D| <= 1 everywhere the field is differentiable.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..200 {
        let mut tape = Tape::new();
        let pts: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let points = tape.leaf(pts, &[1, 2], true).unwrap();
        let kind = if trial % 2 == 0 {
            PrimitiveKind::Circle
        } else {
            PrimitiveKind::Rectangle
        };
        let raw = tape
            .leaf(vec![rng.gen_range(0.1..0.5), rng.gen_range(0.1..0.5)], &[2], false)
            .unwrap();
        let t = tape
            .leaf(vec![rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)], &[2], false)
            .unwrap();
        let rot = tape.leaf(vec![rng.gen_range(0.0..6.28)], &[1], false).unwrap();
        let prim = TapePrimitive {
            kind,
            raw_params: raw,
            translation: t,
            rotation: rot,
        };
        let d = eval_primitive_batch(&mut tape, points, &[prim]).unwrap();
        let s = tape.sum(d);
        tape.backward(s).unwrap();
        let g = tape.grad(points).unwrap();
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!(norm <= 1.0 + 1e-9, "gradient norm {norm} for {kind:?}");
    }
}

// ── GRU scalar oracle ───────────────────────────────────────────────────

#[test]
fn gru_step_matches_scalar_oracle() {
    let d_z = 6;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let idx = gru::init_gru(&mut store, d_z, &mut rng);
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape, false).unwrap();
    let x_vals: Vec<f64> = (0..2 * d_z).map(|i| ((i as f64) * 0.37).sin()).collect();
    let h_vals: Vec<f64> = (0..d_z).map(|i| ((i as f64) * 0.91).cos() * 0.5).collect();
    let x = tape.leaf(x_vals.clone(), &[2 * d_z], false).unwrap();
    let h = tape.leaf(h_vals.clone(), &[d_z], false).unwrap();
    let out = gru::gru_step(&mut tape, &idx, &binding, x, h).unwrap();

    // Scalar reference: standard GRU cell equations.
    let get = |i: usize| store.get(i).data.clone();
    let matvec = |m: &[f64], v: &[f64], rows: usize| -> Vec<f64> {
        (0..rows)
            .map(|r| {
                m[r * v.len()..(r + 1) * v.len()]
                    .iter()
                    .zip(v)
                    .map(|(&a, &b)| a * b)
                    .sum()
            })
            .collect()
    };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let (w_r, u_r, b_r) = (get(idx.w_r), get(idx.u_r), get(idx.b_r));
    let (w_u, u_u, b_u) = (get(idx.w_u), get(idx.u_u), get(idx.b_u));
    let (w_h, u_h, b_h) = (get(idx.w_h), get(idx.u_h), get(idx.b_h));
    let mut expected = vec![0.0; d_z];
    let wx_r = matvec(&w_r, &x_vals, d_z);
    let uh_r = matvec(&u_r, &h_vals, d_z);
    let wx_u = matvec(&w_u, &x_vals, d_z);
    let uh_u = matvec(&u_u, &h_vals, d_z);
    let r: Vec<f64> = (0..d_z).map(|i| sig(wx_r[i] + uh_r[i] + b_r[i])).collect();
    let u: Vec<f64> = (0..d_z).map(|i| sig(wx_u[i] + uh_u[i] + b_u[i])).collect();
    let gated: Vec<f64> = (0..d_z).map(|i| r[i] * h_vals[i]).collect();
    let wx_h = matvec(&w_h, &x_vals, d_z);
    let uh_h = matvec(&u_h, &gated, d_z);
    for i in 0..d_z {
        let cand = (wx_h[i] + uh_h[i] + b_h[i]).tanh();
        expected[i] = (1.0 - u[i]) * h_vals[i] + u[i] * cand;
    }
    for (a, b) in tape.value(out).iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

// ── CSG layer straight-line recomputation ───────────────────────────────

#[test]
fn csg_layer_matches_straight_line_recomputation() {
    let (points, m_in, d_z) = (40usize, 5usize, 7usize);
    let mut gen = ValueGen::new(13);
    let occ_vals: Vec<f64> = (0..points * m_in).map(|_| gen.next_f64() * 0.5 + 0.5).collect();
    let z_vals = gen.vec(d_z);
    let kl_vals = gen.vec(m_in * d_z);
    let kr_vals = gen.vec(m_in * d_z);
    let tau_val = 5.0;

    let mut tape = Tape::new();
    let occ = tape.leaf(occ_vals.clone(), &[points, m_in], false).unwrap();
    let z = tape.leaf(z_vals.clone(), &[d_z], false).unwrap();
    let kl = tape.leaf(kl_vals.clone(), &[m_in, d_z], true).unwrap();
    let kr = tape.leaf(kr_vals.clone(), &[m_in, d_z], true).unwrap();
    let tau = tape.leaf(vec![tau_val], &[], true).unwrap();
    let seed = 909;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (out, recs) = csg_layer::layer_forward(
        &mut tape,
        &[(kl, kr)],
        tau,
        occ,
        z,
        Mode::Train,
        false,
        &mut rng,
    )
    .unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(tape.shape(out), &[points, 4]);

    // Straight-line recomputation with an identically seeded noise stream.
    let mut oracle_rng = ChaCha8Rng::seed_from_u64(seed);
    let matvec = |m: &[f64], v: &[f64]| -> Vec<f64> {
        (0..m_in)
            .map(|r| m[r * d_z..(r + 1) * d_z].iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    };
    let softmax = |s: &[f64]| -> Vec<f64> {
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = s.iter().map(|&v| (v - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        exps.iter().map(|&e| e / denom).collect()
    };
    let mut gumbel_soft = |scores: &[f64]| -> Vec<f64> {
        let probs = softmax(scores);
        let shifted: Vec<f64> = probs
            .iter()
            .map(|&p| {
                let u: f64 = oracle_rng.gen_range(f64::MIN_POSITIVE..1.0);
                p.ln() + -(-u.ln()).ln()
            })
            .map(|v| v / tau_val)
            .collect();
        softmax(&shifted)
    };
    let v_left = gumbel_soft(&matvec(&kl_vals, &z_vals));
    let v_right = gumbel_soft(&matvec(&kr_vals, &z_vals));
    for (a, b) in recs[0].soft_left.iter().zip(&v_left) {
        assert!((a - b).abs() < 1e-12);
    }
    for p in 0..points {
        let row = &occ_vals[p * m_in..(p + 1) * m_in];
        let left: f64 = row.iter().zip(&v_left).map(|(&o, &v)| o * v).sum();
        let right: f64 = row.iter().zip(&v_right).map(|(&o, &v)| o * v).sum();
        let expected = [
            (left + right).clamp(0.0, 1.0),
            (left + right - 1.0).clamp(0.0, 1.0),
            (left - right).clamp(0.0, 1.0),
            (right - left).clamp(0.0, 1.0),
        ];
        for (c, &want) in expected.iter().enumerate() {
            let got = tape.value(out)[p * 4 + c];
            assert!((got - want).abs() < 1e-12, "point {p} channel {c}");
        }
    }
}

#[test]
fn one_hot_selection_degenerates_to_column_pick() {
    let (points, m_in, d_z) = (16usize, 4usize, 5usize);
    let mut gen = ValueGen::new(23);
    let occ_vals: Vec<f64> = (0..points * m_in)
        .map(|i| ((i * 7) % 2) as f64) // binary occupancies
        .collect();
    let z_vals = gen.vec(d_z);
    // Keys that put all mass on columns 1 (left) and 3 (right).
    let mut kl_vals = vec![0.0; m_in * d_z];
    let mut kr_vals = vec![0.0; m_in * d_z];
    for j in 0..d_z {
        kl_vals[d_z + j] = 5.0 * z_vals[j].signum();
        kr_vals[3 * d_z + j] = 5.0 * z_vals[j].signum();
    }
    let mut tape = Tape::new();
    let occ = tape.leaf(occ_vals.clone(), &[points, m_in], false).unwrap();
    let z = tape.leaf(z_vals, &[d_z], false).unwrap();
    let kl = tape.leaf(kl_vals, &[m_in, d_z], false).unwrap();
    let kr = tape.leaf(kr_vals, &[m_in, d_z], false).unwrap();
    let tau = tape.scalar(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (out, recs) = csg_layer::layer_forward(
        &mut tape,
        &[(kl, kr)],
        tau,
        occ,
        z,
        Mode::Eval,
        false,
        &mut rng,
    )
    .unwrap();
    assert_eq!(recs[0].argmax_left, 1);
    assert_eq!(recs[0].argmax_right, 3);
    for p in 0..points {
        let a = occ_vals[p * m_in + 1];
        let b = occ_vals[p * m_in + 3];
        let got = &tape.value(out)[p * 4..(p + 1) * 4];
        // Exact equality: one-hot weighted sums select the columns.
        assert_eq!(got[0], (a + b).clamp(0.0, 1.0));
        assert_eq!(got[1], (a + b - 1.0).clamp(0.0, 1.0));
        assert_eq!(got[2], (a - b).clamp(0.0, 1.0));
        assert_eq!(got[3], (b - a).clamp(0.0, 1.0));
        assert!(got.iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

// ── Hand-built model: forced union of two known circles ────────────────

fn hand_built_two_circle_model() -> (CsgModel, [Primitive; 2]) {
    let cfg = ModelConfig {
        dim: 2,
        resolution: 32,
        latent: 8,
        encoder_channels: vec![4, 6, 8, 8],
        decoder_hidden: vec![8, 8],
        prims_per_kind: 2,
        layer_nodes: vec![],
        leaky_slope: 0.01,
        k_init_std: 0.1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = CsgModel::new(&cfg, 1e-9, 1.0, &mut rng).unwrap();
    // Zero everything, then wire the few weights the construction needs.
    for i in 0..model.store.len() {
        if model.store.get(i).name != "alpha" {
            model.store.get_mut(i).data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    // Latent = leaky_relu(last conv bias) = ones.
    let zb = model.store.index_of("enc.conv3.b").unwrap();
    model.store.get_mut(zb).data.iter_mut().for_each(|v| *v = 1.0);
    // Circle head bias rows: [r, unused, tx, ty, theta].
    let circles = [
        Primitive {
            kind: PrimitiveKind::Circle,
            params: vec![0.2],
            translation: vec![0.35, 0.5],
            rotation: vec![0.0],
        },
        Primitive {
            kind: PrimitiveKind::Circle,
            params: vec![0.15],
            translation: vec![0.65, 0.45],
            rotation: vec![0.0],
        },
    ];
    let hb = model.store.index_of("dec.head.circle.b").unwrap();
    let bias = &mut model.store.get_mut(hb).data;
    for (i, c) in circles.iter().enumerate() {
        bias[i * 5] = c.params[0];
        bias[i * 5 + 2] = c.translation[0];
        bias[i * 5 + 3] = c.translation[1];
        bias[i * 5 + 4] = c.rotation[0];
    }
    // Final union layer: left key row 0, right key row 1 (circles are
    // primitives 0 and 1).
    let kl = model.store.index_of("csg.layer0.node0.k_left").unwrap();
    model.store.get_mut(kl).data[..8].iter_mut().for_each(|v| *v = 1.0);
    let kr = model.store.index_of("csg.layer0.node0.k_right").unwrap();
    model.store.get_mut(kr).data[8..16].iter_mut().for_each(|v| *v = 1.0);
    (model, circles)
}

#[test]
fn forced_union_matches_analytic_membership() {
    let (model, circles) = hand_built_two_circle_model();
    let res = 32;
    let points = ucsg_core::train::sample::grid_points(res, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let out = model
        .forward_full(&vec![0.0; res * res], &points, Mode::Eval, &mut rng)
        .unwrap();
    for (i, &v) in out.occupancy.iter().enumerate() {
        let x = [points[i * 2], points[i * 2 + 1]];
        let inside = circles[0].contains(&x).unwrap() || circles[1].contains(&x).unwrap();
        assert_eq!(v >= 0.5, inside, "pixel {i}");
        assert!(v <= 1e-6 || v >= 1.0 - 1e-6);
    }

    // Single-layer extraction: Union(circle0, circle1) with the predicted
    // parameters.
    let tree = extract_tree(&model.config, &out);
    match &tree.root {
        CsgNode::Op {
            op: CsgOp::Union,
            left,
            right,
        } => {
            match (left.as_ref(), right.as_ref()) {
                (CsgNode::Leaf(a), CsgNode::Leaf(b)) => {
                    assert_eq!(a.kind, PrimitiveKind::Circle);
                    assert!((a.params[0] - 0.2).abs() < 1e-12);
                    assert!((b.params[0] - 0.15).abs() < 1e-12);
                }
                other => panic!("expected two leaves, got {other:?}"),
            }
        }
        other => panic!("expected union root, got {other:?}"),
    }
}

// ── Extraction wiring and pruning ───────────────────────────────────────

#[test]
fn extraction_follows_wiring_and_prunes_unused_channels() {
    let cfg = ModelConfig {
        dim: 2,
        resolution: 16,
        latent: 16,
        encoder_channels: vec![8, 12, 16],
        decoder_hidden: vec![16],
        prims_per_kind: 4,
        layer_nodes: vec![1],
        leaky_slope: 0.01,
        k_init_std: 0.1,
    };
    let primitives: Vec<Primitive> = (0..8)
        .map(|i| Primitive {
            kind: PrimitiveKind::Circle,
            params: vec![0.05 + i as f64 * 0.01],
            translation: vec![0.5, 0.5],
            rotation: vec![0.0],
        })
        .collect();
    // Layer 0 node selects primitives 2 and 5; the final union takes the
    // intersection channel (1) and initial primitive 3 (channel 4 + 3).
    let records = vec![
        vec![SelectionRecord::from_hard(2, 5, 8)],
        vec![SelectionRecord::from_hard(1, 7, 12)],
    ];
    let output = ForwardOutput {
        occupancy: vec![],
        records,
        primitives,
        alpha: 1e-5,
        taus: vec![1e-5, 1e-5],
    };
    let tree = extract_tree(&cfg, &output);
    let expected_radii = [0.07, 0.1, 0.08]; // prims 2, 5, 3 in traversal order
    match &tree.root {
        CsgNode::Op {
            op: CsgOp::Union,
            left,
            right,
        } => {
            match left.as_ref() {
                CsgNode::Op {
                    op: CsgOp::Intersection,
                    left: a,
                    right: b,
                } => {
                    let (CsgNode::Leaf(pa), CsgNode::Leaf(pb)) = (a.as_ref(), b.as_ref()) else {
                        panic!("intersection children must be leaves");
                    };
                    assert!((pa.params[0] - expected_radii[0]).abs() < 1e-12);
                    assert!((pb.params[0] - expected_radii[1]).abs() < 1e-12);
                }
                other => panic!("expected intersection, got {other:?}"),
            }
            let CsgNode::Leaf(pc) = right.as_ref() else {
                panic!("right child must be a leaf");
            };
            assert!((pc.params[0] - expected_radii[2]).abs() < 1e-12);
        }
        other => panic!("expected union root, got {other:?}"),
    }
    assert_eq!(tree.leaf_count(), 3);
    let counts = tree.nodes_per_depth();
    for (d, &c) in counts.iter().enumerate() {
        assert!(c <= 1 << d);
    }
}

// ── Tree evaluation vs. independent set-algebra recursion ──────────────

#[test]
fn evaluate_tree_matches_set_algebra_oracle() {
    // Shared leaf memberships, independent Boolean recursion.
    fn oracle(node: &CsgNode, x: &[f64]) -> bool {
        match node {
            CsgNode::Leaf(p) => p.contains(x).unwrap(),
            CsgNode::Op { op, left, right } => {
                let l = oracle(left, x);
                let r = oracle(right, x);
                match op {
                    CsgOp::Union => l | r,
                    CsgOp::Intersection => l & r,
                    CsgOp::Difference => l & !r,
                }
            }
        }
    }
    let corpus = generate_synthetic(&SyntheticSpec {
        n: 12,
        seed: 3,
        dim: 2,
        resolution: 16,
        min_prims: 2,
        max_prims: 4,
    })
    .unwrap();
    for (_, _, tree) in &corpus {
        let grid = tree.evaluate_grid(64).unwrap();
        for (i, &got) in grid.iter().enumerate() {
            let x = [
                ((i % 64) as f64 + 0.5) / 64.0,
                ((i / 64) as f64 + 0.5) / 64.0,
            ];
            assert_eq!(got, oracle(&tree.root, &x));
        }
    }
}

#[test]
fn occupancy_converter_binarizes_to_membership() {
    // As alpha -> 0 the occupancy of a primitive's SDF equals the D <= 0
    // membership set.
    let prim = Primitive {
        kind: PrimitiveKind::Rectangle,
        params: vec![0.3, 0.2],
        translation: vec![0.5, 0.5],
        rotation: vec![0.4],
    };
    for i in 0..400 {
        let x = [((i % 20) as f64 + 0.5) / 20.0, ((i / 20) as f64 + 0.5) / 20.0];
        let d = prim.sdf(&x).unwrap();
        let occ = occupancy_scalar(d, 1e-12);
        assert_eq!(occ >= 1.0, d <= 0.0);
    }
}

// ── Tree round-trip fuzzing (deterministic corpus) ──────────────────────

#[test]
fn thousand_fuzzed_trees_round_trip() {
    let mut count = 0;
    for seed in 0..250 {
        let corpus = generate_synthetic(&SyntheticSpec {
            n: 4,
            seed,
            dim: if seed % 3 == 0 { 3 } else { 2 },
            resolution: 16,
            min_prims: 1,
            max_prims: 5,
        })
        .unwrap();
        for (_, _, tree) in corpus {
            let text = tree.to_json_string();
            let back = CsgTree::from_json_str(&text).unwrap();
            assert_eq!(back, tree);
            count += 1;
        }
    }
    assert_eq!(count, 1000);
}

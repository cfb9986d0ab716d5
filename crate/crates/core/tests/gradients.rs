//! Central finite-difference checks of every differentiable operator (f64,
//! small shapes, step 1e-5).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uses_core::numerics::{grad_check, grad_check_coords, AttentionParams, Conv2dSpec};
use uses_core::{Result, Tape, Tensor, Var};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            // keep away from the kinks of abs/relu/prelu
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Weighted sum with fixed random weights, so every output element has a
/// distinct influence on the loss.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = tape.constant(random(tape.shape(y), seed));
    tape.dot(y, w)
}

fn check_all(
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    points: Vec<Tensor<f64>>,
) -> f64 {
    let coords: Vec<Vec<usize>> = points.iter().map(|p| (0..p.numel()).collect()).collect();
    grad_check_coords(f, &points, EPS, &coords)
        .unwrap()
        .max_rel_error
}

#[test]
fn elementwise_binary() {
    let a = random(&[3, 4], 1);
    let b = random(&[3, 4], 2);
    for op in 0..4 {
        let err = check_all(
            |t, v| {
                let y = match op {
                    0 => t.add(v[0], v[1])?,
                    1 => t.sub(v[0], v[1])?,
                    2 => t.mul(v[0], v[1])?,
                    _ => t.div(v[0], v[1])?,
                };
                project(t, y, 9)
            },
            vec![a.clone(), b.clone()],
        );
        assert!(err < TOL, "op {op}: {err}");
    }
}

#[test]
fn elementwise_unary() {
    let x = random(&[2, 3, 4], 3);
    let pos = x.map(f64::abs);
    for op in 0..5 {
        let point = if op >= 2 { pos.clone() } else { x.clone() };
        let err = grad_check(
            |t, v| {
                let y = match op {
                    0 => t.abs(v),
                    1 => t.relu(v),
                    2 => t.ln(v),
                    3 => t.sqrt(v),
                    _ => t.scale(v, -1.7),
                };
                project(t, y, 10)
            },
            &point,
            EPS,
        )
        .unwrap();
        assert!(err < TOL, "op {op}: {err}");
    }
}

#[test]
fn reductions_and_scalar_products() {
    let a = random(&[5], 4);
    let b = random(&[5], 5);
    let s = random(&[1], 6);
    let err = check_all(
        |t, v| {
            let d = t.dot(v[0], v[1])?;
            let m = t.mul_scalar(v[0], v[2])?;
            let mm = t.mean(m);
            let sm = t.sum(v[1]);
            let x = t.mul(d, mm)?;
            t.add(x, sm)
        },
        vec![a, b, s],
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn complex_magnitude() {
    let x = random(&[3, 2, 4], 7);
    let err = grad_check(
        |t, v| {
            let m = t.complex_abs(v, 1)?;
            project(t, m, 11)
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

#[test]
fn layout_ops() {
    let x = random(&[2, 3, 4], 8);
    let y = random(&[2, 2, 4], 9);
    let err = check_all(
        |t, v| {
            let p = t.permute(v[0], &[2, 0, 1])?;
            let r = t.reshape(p, &[4, 6])?;
            let n = t.narrow(r, 1, 1, 4)?;
            let c = t.concat(&[v[0], v[1]], 1)?;
            let m = t.mean_axis(c, 1)?;
            let s = t.symmetric_mean_axis(c, 0)?;
            let b = t.broadcast_axis(m, 1, 3)?;
            let l1 = project(t, n, 1)?;
            let l2 = project(t, b, 2)?;
            let l3 = project(t, s, 3)?;
            let l = t.add(l1, l2)?;
            t.add(l, l3)
        },
        vec![x, y],
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn linear_layer() {
    let err = check_all(
        |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            project(t, y, 12)
        },
        vec![random(&[2, 3, 5], 13), random(&[4, 5], 14), random(&[4], 15)],
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn convolutions() {
    for spec in [Conv2dSpec::same(1), Conv2dSpec::new((2, 1), (1, 0))] {
        let err = check_all(
            |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), spec)?;
                project(t, y, 16)
            },
            vec![random(&[2, 2, 5, 4], 17), random(&[3, 2, 3, 3], 18), random(&[3], 19)],
        );
        assert!(err < TOL, "conv2d {spec:?}: {err}");
        let err = check_all(
            |t, v| {
                let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), spec)?;
                project(t, y, 20)
            },
            vec![random(&[2, 2, 4, 3], 21), random(&[2, 3, 3, 3], 22), random(&[3], 23)],
        );
        assert!(err < TOL, "conv_transpose2d {spec:?}: {err}");
    }
}

#[test]
fn normalization_and_prelu() {
    let err = check_all(
        |t, v| {
            let y = t.layer_norm(v[0], 1, v[1], v[2], 1e-5)?;
            project(t, y, 24)
        },
        vec![random(&[3, 6, 2], 25), random(&[6], 26), random(&[6], 27)],
    );
    assert!(err < TOL, "layer_norm: {err}");
    let err = check_all(
        |t, v| {
            let y = t.prelu(v[0], v[1], 2)?;
            project(t, y, 28)
        },
        vec![random(&[2, 3, 4], 29), random(&[4], 30)],
    );
    assert!(err < TOL, "prelu: {err}");
}

#[test]
fn attention_core_and_layer() {
    let err = check_all(
        |t, v| {
            let y = t.attention(v[0], v[1], v[2], 2)?;
            project(t, y, 31)
        },
        vec![random(&[2, 3, 4], 32), random(&[2, 5, 4], 33), random(&[2, 5, 4], 34)],
    );
    assert!(err < TOL, "attention: {err}");

    let mut points = vec![random(&[4, 6], 35)];
    for i in 0..4 {
        points.push(random(&[6, 6], 36 + i));
        points.push(random(&[6], 40 + i));
    }
    let layer = |t: &mut Tape<f64>, v: &[Var]| {
        let params = AttentionParams {
            query: (v[1], v[2]),
            key: (v[3], v[4]),
            value: (v[5], v[6]),
            output: (v[7], v[8]),
        };
        let y = t.multi_head_attention(v[0], v[0], v[0], 3, &params)?;
        project(t, y, 44)
    };
    // A key bias shifts every logit of a row equally, so its gradient is
    // zero and only round-off remains; it is checked separately.
    let mut coords: Vec<Vec<usize>> = points.iter().map(|p| (0..p.numel()).collect()).collect();
    coords[4].clear();
    let report = grad_check_coords(layer, &points, EPS, &coords).unwrap();
    assert!(report.max_rel_error < TOL, "multi_head_attention: {report:?}");
    let mut t = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| t.param(p.clone())).collect();
    let l = layer(&mut t, &vars).unwrap();
    let g = t.backward(l).unwrap();
    assert!(g.get(vars[4]).unwrap().data().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn conv_adjoint_identity() {
    let x = random(&[2, 3, 5, 5], 50);
    let w = random(&[4, 3, 3, 3], 51);
    let y = random(&[2, 4, 3, 5], 52);
    let spec = Conv2dSpec::new((2, 1), (1, 1));
    let mut t = Tape::<f64>::no_grad();
    let (xv, wv, yv) = (t.constant(x), t.constant(w.clone()), t.constant(y));
    let ax = t.conv2d(xv, wv, None, spec).unwrap();
    assert_eq!(t.shape(ax), &[2, 4, 3, 5]);
    let lhs = t.dot(ax, yv).unwrap();
    // kernel [Cout, Cin, ..] read as [Cin', Cout'] = [4, 3] for the transpose
    let aty = t.conv_transpose2d(yv, wv, None, spec).unwrap();
    let rhs = t.dot(aty, xv).unwrap();
    let (l, r) = (t.value(lhs).item(), t.value(rhs).item());
    assert!((l - r).abs() < 1e-10 * l.abs().max(1.0), "{l} vs {r}");
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut t = Tape::<f64>::new();
        let q = t.param(random(&[3, 7, 8], 60));
        let y = t.attention(q, q, q, 4).unwrap();
        let l = project(&mut t, y, 61).unwrap();
        t.backward(l).unwrap().get(q).unwrap().clone()
    };
    let (a, b) = (run(), run());
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

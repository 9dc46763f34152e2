use adashare_core::graph::{finite_diff_check, Graph, Inputs, Var};
use adashare_core::{ParamId, ParamStore, Tensor};
use proptest::prelude::*;

type UnaryOp = Box<dyn Fn(&mut Graph, Var) -> Var>;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

/// Values bounded away from zero so kinks at 0 are never straddled.
fn away_from_zero(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0.1f64..2.0, any::<bool>()), n)
        .prop_map(|v| v.into_iter().map(|(m, neg)| if neg { -m } else { m }).collect())
}

fn positive(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.2f64..3.0, n)
}

/// `loss = Σ out²` so every output entry feeds the gradient.
fn check_unary(data: Vec<f64>, shape: Vec<usize>, op: impl Fn(&mut Graph, Var) -> Var) -> f64 {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::new(shape, data).unwrap()).unwrap();
    let mut g = Graph::new();
    let x = g.param(id);
    let y = op(&mut g, x);
    let sq = g.mul(y, y);
    let loss = g.sum(sq);
    finite_diff_check(&mut g, &mut store, &Inputs::new(), loss, &[id], H).unwrap()
}

fn check_binary(
    a: (Vec<f64>, Vec<usize>),
    b: (Vec<f64>, Vec<usize>),
    op: impl Fn(&mut Graph, Var, Var) -> Var,
) -> f64 {
    let mut store = ParamStore::new();
    let ia = store.add("a", Tensor::new(a.1, a.0).unwrap()).unwrap();
    let ib = store.add("b", Tensor::new(b.1, b.0).unwrap()).unwrap();
    let mut g = Graph::new();
    let (va, vb) = (g.param(ia), g.param(ib));
    let y = op(&mut g, va, vb);
    let sq = g.mul(y, y);
    let loss = g.sum(sq);
    finite_diff_check(&mut g, &mut store, &Inputs::new(), loss, &[ia, ib], H).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul_gradients(a in away_from_zero(12), b in away_from_zero(8)) {
        let e = check_binary((a, vec![3, 4]), (b, vec![4, 2]), |g, a, b| g.matmul(a, b));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn broadcast_arithmetic_gradients(a in away_from_zero(12), b in positive(4)) {
        for which in 0..4 {
            let e = check_binary((a.clone(), vec![3, 4]), (b.clone(), vec![4]), |g, a, b| match which {
                0 => g.add(a, b),
                1 => g.sub(a, b),
                2 => g.mul(a, b),
                _ => g.div(a, b),
            });
            prop_assert!(e < TOL, "op {which}: {e}");
        }
    }

    #[test]
    fn elementwise_gradients(x in away_from_zero(6), c in -2.0f64..2.0) {
        let shape = vec![2, 3];
        let cases: Vec<(&str, UnaryOp)> = vec![
            ("scale", Box::new(move |g: &mut Graph, x| g.scale(x, c))),
            ("add_scalar", Box::new(move |g: &mut Graph, x| g.add_scalar(x, c))),
            ("relu", Box::new(|g: &mut Graph, x| g.relu(x))),
            ("sigmoid", Box::new(|g: &mut Graph, x| g.sigmoid(x))),
            ("abs", Box::new(|g: &mut Graph, x| g.abs(x))),
            ("softmax", Box::new(|g: &mut Graph, x| g.softmax(x))),
            ("sum", Box::new(|g: &mut Graph, x| g.sum(x))),
            ("mean", Box::new(|g: &mut Graph, x| g.mean(x))),
            ("sum_last_axis", Box::new(|g: &mut Graph, x| g.sum_last_axis(x))),
            ("column", Box::new(|g: &mut Graph, x| g.column(x, 2))),
            ("element", Box::new(|g: &mut Graph, x| g.element(x, 4))),
            ("reshape", Box::new(|g: &mut Graph, x| g.reshape(x, vec![3, 2]))),
            ("concat", Box::new(|g: &mut Graph, x| {
                let s = g.scale(x, 0.5);
                g.concat(&[x, s])
            })),
        ];
        for (name, op) in cases {
            let e = check_unary(x.clone(), shape.clone(), op);
            prop_assert!(e < TOL, "{name}: {e}");
        }
    }

    #[test]
    fn clamp_gradients(x in prop::collection::vec(-3.0f64..3.0, 6)) {
        // keep every entry off the clamp boundaries
        let x: Vec<f64> = x.into_iter().map(|v| if (v.abs() - 1.0).abs() < 0.05 { v * 0.5 } else { v }).collect();
        let e = check_unary(x, vec![6], |g, x| g.clamp(x, -1.0, 1.0));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn log_and_sqrt_gradients(x in positive(5)) {
        let e = check_unary(x.clone(), vec![5], |g, x| g.log(x));
        prop_assert!(e < TOL, "log: {e}");
        let e = check_unary(x, vec![5], |g, x| g.sqrt(x));
        prop_assert!(e < TOL, "sqrt: {e}");
    }

    #[test]
    fn backward_is_linear(x in away_from_zero(6), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let grad_of = |wa: f64, wb: f64| -> Vec<f64> {
            let mut store = ParamStore::new();
            let id = store.add("x", Tensor::matrix(2, 3, x.clone()).unwrap().with_grad()).unwrap();
            let mut g = Graph::new();
            let v = g.param(id);
            let s = g.sigmoid(v);
            let l1 = g.sum(s);
            let sm = g.softmax(v);
            let sq = g.mul(sm, v);
            let l2 = g.mean(sq);
            let t1 = g.scale(l1, wa);
            let t2 = g.scale(l2, wb);
            let loss = g.add(t1, t2);
            g.forward(&store, &Inputs::new()).unwrap();
            g.backward(loss, &mut store).unwrap();
            store.get(id).grad().unwrap().to_vec()
        };
        let (g1, g2, both) = (grad_of(1.0, 0.0), grad_of(0.0, 1.0), grad_of(a, b));
        for j in 0..6 {
            prop_assert!((both[j] - (a * g1[j] + b * g2[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic(x in away_from_zero(8), w in away_from_zero(8)) {
        let run = || -> Vec<u64> {
            let mut store = ParamStore::new();
            let iw = store.add("w", Tensor::matrix(4, 2, w.clone()).unwrap()).unwrap();
            let mut g = Graph::new();
            let xi = g.input("x");
            let wv = g.param(iw);
            let y = g.matmul(xi, wv);
            let y = g.softmax(y);
            let mut inputs = Inputs::new();
            inputs.insert("x".into(), Tensor::matrix(2, 4, x.clone()).unwrap());
            g.forward(&store, &inputs).unwrap();
            let first: Vec<u64> = g.value(y).unwrap().data().iter().map(|v| v.to_bits()).collect();
            g.forward(&store, &inputs).unwrap();
            let second: Vec<u64> = g.value(y).unwrap().data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(first, second);
            first
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn unreached_parameters_get_zero_gradient() {
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::vector(vec![1.0, 2.0]).unwrap().with_grad()).unwrap();
    let b = store.add("b", Tensor::vector(vec![3.0]).unwrap().with_grad()).unwrap();
    let mut g = Graph::new();
    let va = g.param(a);
    let loss = g.sum(va);
    g.forward(&store, &Inputs::new()).unwrap();
    g.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(a).grad().unwrap(), &[1.0, 1.0]);
    assert_eq!(store.get(b).grad().unwrap(), &[0.0]);
}

#[test]
fn gradient_flags_are_read_at_backward_time() {
    let mut store = ParamStore::new();
    let a: ParamId = store.add("a", Tensor::vector(vec![1.5]).unwrap()).unwrap();
    let mut g = Graph::new();
    let va = g.param(a);
    let sq = g.mul(va, va);
    let loss = g.sum(sq);
    g.forward(&store, &Inputs::new()).unwrap();
    store.set_requires_grad(&[a], true);
    g.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(a).grad().unwrap(), &[3.0]);
}

//! Finite-difference check of the reverse pass on a full-precision RF-c2d2
//! network, end to end through the cross-entropy loss. Shared by the
//! gradient test and the acceptance suite.
//!
//! The network contains ReLUs, so a central difference is only trusted on a
//! segment where no ReLU changes its active set; the largest such step is
//! used. Smaller steps drown in `f32` rounding of the loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sofar_core::arch::{assemble_training_network, toy_rf, BlockPrecision, TrainingNetwork};
use sofar_core::graph::{Bindings, Graph, Mode, NodeId, Op, ParamInit, Session};
use sofar_core::{Shape, Tensor};

const STEPS: [f64; 2] = [3e-3, 1e-3];
pub const TOLERANCE: f64 = 1e-3;
/// Derivatives are compared relative to at least this magnitude.
const FLOOR: f64 = 0.1;
const COORDS_PER_TENSOR: usize = 12;

struct Setup {
    net: TrainingNetwork,
    inputs: Bindings,
}

fn setup() -> Setup {
    let mut arch = toy_rf(4, 5);
    arch.precision = BlockPrecision::Full;
    arch.input_resolution = 4;
    let net = assemble_training_network(&arch, ParamInit::Seeded(11)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn(Shape::new(3, 3, 4, 4), |_| rng.gen_range(-1.0..1.0));
    let y = Tensor::from_fn(Shape::new(3, 1, 1, 1), |i| (2 * i % 5) as f32);
    let inputs = Bindings::new().with(net.input, x).with(net.labels, y);
    Setup { net, inputs }
}

/// Summed cross-entropy recomputed in `f64` from the logits, and the
/// active set of every ReLU.
fn evaluate(s: &Setup, graph: Graph, inputs: &Bindings) -> (f64, Vec<bool>) {
    let relus: Vec<NodeId> = graph.ids().filter(|&id| matches!(graph.node(id).op, Op::Relu)).collect();
    let mut session = Session::new(graph);
    let fwd = session.forward(inputs, Mode::Train).unwrap();
    let mask = relus.iter().flat_map(|&id| fwd.value(id).data().iter().map(|&v| v > 0.0)).collect();
    let logits = fwd.value(s.net.logits);
    let labels = inputs.get(s.net.labels).unwrap();
    let k = logits.shape().c();
    let mut loss = 0.0;
    for (row, &label) in logits.data().chunks(k).zip(labels.data()) {
        let z: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[label as usize];
    }
    let reported = fwd.value(s.net.loss).sum();
    assert!((reported - loss).abs() <= 1e-5 * loss, "loss node {reported} vs {loss}");
    (loss, mask)
}

/// Derivative of `at(h)` at zero, or `None` if every step crosses a kink.
fn derivative(at: impl Fn(f64) -> (f64, Vec<bool>)) -> Option<f64> {
    let central = |h: f64| {
        let ((up, m_up), (down, m_down)) = (at(h), at(-h));
        (m_up == m_down).then(|| (up - down) / (2.0 * h))
    };
    STEPS.iter().find_map(|&h| central(h))
}

fn sample(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= COORDS_PER_TENSOR {
        return (0..n).collect();
    }
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    all.truncate(COORDS_PER_TENSOR);
    all
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, FLOOR)` over the checked coordinates of one tensor.
fn rel_err(pairs: &[(f64, f64)]) -> f64 {
    let norm = |f: &dyn Fn(&(f64, f64)) -> f64| pairs.iter().map(|p| f(p).powi(2)).sum::<f64>().sqrt();
    norm(&|p| p.0 - p.1) / norm(&|p| p.0).max(norm(&|p| p.1)).max(FLOOR)
}

#[derive(Default)]
pub struct Report {
    pub worst: f64,
    pub at: String,
    pub checked: usize,
    pub skipped: usize,
}

impl Report {
    /// At most one coordinate in ten may be skipped for sitting on a kink.
    pub fn passes(&self) -> bool {
        self.skipped * 10 <= self.checked && self.worst < TOLERANCE
    }

    fn tensor(&mut self, name: &str, analytic: &[f64], numeric: &[Option<f64>]) {
        let pairs: Vec<(f64, f64)> = analytic.iter().zip(numeric).filter_map(|(&a, n)| n.map(|n| (a, n))).collect();
        self.checked += numeric.len();
        self.skipped += numeric.len() - pairs.len();
        let e = rel_err(&pairs);
        eprintln!("{name:24} {:3} of {:3} coords  rel {e:.2e}", pairs.len(), numeric.len());
        if e > self.worst {
            self.worst = e;
            self.at = name.to_string();
        }
    }
}

pub fn run() -> Report {
    let s = setup();
    let mut session = Session::new(s.net.graph.clone());
    session.forward(&s.inputs, Mode::Train).unwrap();
    let grads = session.backward().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut report = Report::default();

    for (i, p) in s.net.graph.params().iter().enumerate() {
        if !p.trainable {
            assert!(grads.param(i).is_none(), "{} is not trainable", p.name);
            continue;
        }
        let g = grads.param(i).expect("every trainable parameter is reached");
        let coords = sample(g.numel(), &mut rng);
        let numeric: Vec<Option<f64>> = coords
            .iter()
            .map(|&j| {
                derivative(|h| {
                    let mut graph = s.net.graph.clone();
                    graph.params_mut()[i].value.data_mut()[j] += h as f32;
                    evaluate(&s, graph, &s.inputs)
                })
            })
            .collect();
        let analytic: Vec<f64> = coords.iter().map(|&j| f64::from(g.data()[j])).collect();
        report.tensor(&p.name, &analytic, &numeric);
    }

    let x = s.inputs.get(s.net.input).unwrap();
    let gx = grads.node(s.net.input).expect("input gradient");
    let coords = sample(x.numel(), &mut rng);
    let numeric: Vec<Option<f64>> = coords
        .iter()
        .map(|&j| {
            derivative(|h| {
                let mut moved = x.clone();
                moved.data_mut()[j] += h as f32;
                let inputs = s.inputs.clone().with(s.net.input, moved);
                evaluate(&s, s.net.graph.clone(), &inputs)
            })
        })
        .collect();
    let analytic: Vec<f64> = coords.iter().map(|&j| f64::from(gx.data()[j])).collect();
    report.tensor("input", &analytic, &numeric);

    report
}

//! Shared test utilities: central finite-difference gradient checking and
//! small deterministic helpers.

use ucsg_core::tape::{Tape, TensorId};

pub const FD_H: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-5;
/// Scale floor for the relative-error denominator; gradients smaller than
/// this are compared absolutely at the same tolerance.
pub const FD_SCALE_FLOOR: f64 = 1e-4;

/// One differentiable-input problem: `build` leafs nothing itself; it gets
/// the inputs already on the tape and returns a scalar loss.
pub struct FdProblem<'a> {
    pub name: &'static str,
    pub inputs: Vec<(Vec<usize>, Vec<f64>)>,
    #[allow(clippy::type_complexity)]
    pub build: Box<dyn Fn(&mut Tape, &[TensorId]) -> TensorId + 'a>,
}

pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: Option<(usize, usize, f64, f64)>,
}

fn loss_value(problem: &FdProblem, values: &[Vec<f64>]) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = problem
        .inputs
        .iter()
        .zip(values)
        .map(|((shape, _), v)| tape.leaf(v.clone(), shape, false).unwrap())
        .collect();
    let loss = (problem.build)(&mut tape, &ids);
    tape.scalar_value(loss)
}

/// Analytic gradients vs. central finite differences over every component
/// of every input. rel = |a - fd| / max(|a|, |fd|, floor).
pub fn check_gradients(problem: &FdProblem) -> FdReport {
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = problem
        .inputs
        .iter()
        .map(|(shape, v)| tape.leaf(v.clone(), shape, true).unwrap())
        .collect();
    let loss = (problem.build)(&mut tape, &ids);
    assert!(
        tape.shape(loss).is_empty(),
        "{}: loss must be scalar",
        problem.name
    );
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| tape.grad(id).unwrap().to_vec()).collect();
    for (i, g) in analytic.iter().enumerate() {
        assert!(
            g.iter().all(|v| v.is_finite()),
            "{}: non-finite analytic gradient on input {i}",
            problem.name
        );
    }

    let base: Vec<Vec<f64>> = problem.inputs.iter().map(|(_, v)| v.clone()).collect();
    let mut report = FdReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    for i in 0..base.len() {
        for k in 0..base[i].len() {
            let mut plus = base.clone();
            plus[i][k] += FD_H;
            let mut minus = base.clone();
            minus[i][k] -= FD_H;
            let fd = (loss_value(problem, &plus) - loss_value(problem, &minus)) / (2.0 * FD_H);
            let a = analytic[i][k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(FD_SCALE_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((i, k, a, fd));
            }
        }
    }
    report
}

pub fn assert_gradients_ok(problem: &FdProblem) {
    let report = check_gradients(problem);
    assert!(
        report.max_rel_err <= FD_REL_TOL,
        "{}: max relative gradient error {:.3e} over {} components (worst {:?})",
        problem.name,
        report.max_rel_err,
        report.checked,
        report.worst
    );
}

/// Deterministic pseudo-random values in (-1, 1), decoupled from rand.
pub struct ValueGen {
    state: u64,
}

impl ValueGen {
    pub fn new(seed: u64) -> ValueGen {
        ValueGen {
            state: seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1),
        }
    }

    pub fn next_f64(&mut self) -> f64 {
        // splitmix64
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z = z ^ (z >> 31);
        (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    /// Uniform in (-1,1) but resampled until at least `margin` away from
    /// every breakpoint in `avoid`.
    pub fn away_from(&mut self, avoid: &[f64], margin: f64) -> f64 {
        loop {
            let v = self.next_f64();
            if avoid.iter().all(|&b| (v - b).abs() >= margin) {
                return v;
            }
        }
    }

    pub fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_f64()).collect()
    }

    pub fn vec_away(&mut self, n: usize, avoid: &[f64], margin: f64) -> Vec<f64> {
        (0..n).map(|_| self.away_from(avoid, margin)).collect()
    }
}

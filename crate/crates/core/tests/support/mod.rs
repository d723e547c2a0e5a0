//! Independent oracles shared by the integration tests: dense operators
//! built from Pauli generators with nalgebra's matrix exponential, and
//! central finite differences.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use num_complex::Complex64 as C;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qdd_core::circuit::{Circuit, Gate, GateSpec, Param};
use qdd_core::neuralnet::{init_model, loss_and_gradients, LossKind, MlpModel};
use qdd_core::simulator::{apply_circuit, exact_ground_energy, tfim_expectation, Binding, HamiltonianSpec};
use qdd_core::vqe::{adjoint_gradient, energy, parameter_shift_gradient};

fn m2(a: [[C; 2]; 2]) -> DMatrix<C> {
    DMatrix::from_row_slice(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]])
}

fn x() -> DMatrix<C> {
    m2([[C::new(0., 0.), C::new(1., 0.)], [C::new(1., 0.), C::new(0., 0.)]])
}
fn y() -> DMatrix<C> {
    m2([[C::new(0., 0.), C::new(0., -1.)], [C::new(0., 1.), C::new(0., 0.)]])
}
fn z() -> DMatrix<C> {
    m2([[C::new(1., 0.), C::new(0., 0.)], [C::new(0., 0.), C::new(-1., 0.)]])
}
fn eye(d: usize) -> DMatrix<C> {
    DMatrix::identity(d, d)
}

/// Operator acting with `ops[q]` on qubit q; qubit q is bit q of the basis index.
fn embed(n: usize, ops: &[(usize, DMatrix<C>)]) -> DMatrix<C> {
    let mut full = DMatrix::from_element(1, 1, C::new(1., 0.));
    for q in (0..n).rev() {
        let op = ops.iter().find(|(k, _)| *k == q).map(|(_, m)| m.clone()).unwrap_or_else(|| eye(2));
        full = full.kronecker(&op);
    }
    full
}

fn expi(generator: &DMatrix<C>, theta: f64) -> DMatrix<C> {
    (generator * C::new(0., -theta / 2.0)).exp()
}

fn gate_operator(n: usize, g: &GateSpec) -> DMatrix<C> {
    let theta = match g.param {
        Param::Fixed(v) => v,
        _ => 0.0,
    };
    let t = g.target;
    let one = |m: DMatrix<C>| embed(n, &[(t, m)]);
    let controlled = |u: DMatrix<C>| {
        let c = g.control.unwrap();
        let p0 = m2([[C::new(1., 0.), C::new(0., 0.)], [C::new(0., 0.), C::new(0., 0.)]]);
        let p1 = m2([[C::new(0., 0.), C::new(0., 0.)], [C::new(0., 0.), C::new(1., 0.)]]);
        embed(n, &[(c, p0)]) + embed(n, &[(c, p1), (t, u)])
    };
    let h = std::f64::consts::FRAC_1_SQRT_2;
    match g.gate {
        Gate::X => one(x()),
        Gate::Y => one(y()),
        Gate::Z => one(z()),
        Gate::H => one((x() + z()) * C::new(h, 0.)),
        Gate::RX => one(expi(&x(), theta)),
        Gate::RY => one(expi(&y(), theta)),
        Gate::RZ => one(expi(&z(), theta)),
        Gate::CNOT => controlled(x()),
        Gate::CRX => controlled(expi(&x(), theta)),
        Gate::CRY => controlled(expi(&y(), theta)),
        Gate::CRZ => controlled(expi(&z(), theta)),
        Gate::XY => {
            let c = g.control.unwrap();
            let gen = embed(n, &[(t, x()), (c, x())]) + embed(n, &[(t, y()), (c, y())]);
            expi(&gen, theta)
        }
        Gate::NOP => eye(1 << n),
    }
}

fn dense_tfim(h: &HamiltonianSpec) -> DMatrix<C> {
    let n = h.n_qubits;
    let mut m = DMatrix::zeros(1 << n, 1 << n);
    for (a, b) in h.bonds() {
        m -= embed(n, &[(a, z()), (b, z())]) * C::new(h.j, 0.);
    }
    for q in 0..n {
        m -= embed(n, &[(q, x())]) * C::new(h.j * h.g, 0.);
    }
    m
}

fn random_fixed_circuit(rng: &mut ChaCha8Rng, n: usize) -> Circuit {
    let gates: Vec<Gate> = Gate::ALL
        .iter()
        .copied()
        .filter(|g| *g != Gate::NOP && (n > 1 || !g.is_two_qubit()))
        .collect();
    let len = rng.random_range(1..=8);
    let specs = (0..len)
        .map(|_| {
            let g = gates[rng.random_range(0..gates.len())];
            let t = rng.random_range(0..n);
            let param = if g.is_parametrized() {
                Param::Fixed(rng.random_range(-7.0..7.0))
            } else {
                Param::None
            };
            if g.is_two_qubit() {
                let mut c = rng.random_range(0..n - 1);
                if c >= t {
                    c += 1;
                }
                GateSpec::two(g, t, c, param)
            } else {
                GateSpec::new(g, t, None, param)
            }
        })
        .collect();
    Circuit::new(n, specs).unwrap()
}

/// Statevector output and TFIM expectation against dense matrix products for
/// `cases` random circuits on 1 to 3 qubits.
pub fn dense_product_check(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n = 1 + case % 3;
        let c = random_fixed_circuit(&mut rng, n);
        let mut psi = DVector::from_element(1 << n, C::new(0., 0.));
        psi[0] = C::new(1., 0.);
        for g in c.gates() {
            psi = gate_operator(n, g) * psi;
        }
        let sim = apply_circuit(&c, &Binding::new()).map_err(|e| e.to_string())?;
        for (a, b) in sim.amplitudes().iter().zip(psi.iter()) {
            if (a - b).norm() >= 1e-10 {
                return Err(format!("case {case}: {} -> {a} vs {b}", c.serialize()));
            }
        }
        let h = HamiltonianSpec::tfim(n, 1.0, 0.7);
        let e_dense = (psi.adjoint() * dense_tfim(&h) * &psi)[(0, 0)].re;
        let e = tfim_expectation(&sim, &h).map_err(|e| e.to_string())?;
        if (e - e_dense).abs() >= 1e-10 {
            return Err(format!("case {case}: energy {e} vs {e_dense}"));
        }
    }
    Ok(())
}

/// Lowest eigenvalue of the dense TFIM matrix.
pub fn dense_ground_energy(h: &HamiltonianSpec) -> f64 {
    SymmetricEigen::new(dense_tfim(h).map(|c| c.re)).eigenvalues.min()
}

pub fn ground_energy_check(max_n: usize) -> Result<(), String> {
    for n in 1..=max_n {
        let h = HamiltonianSpec::tfim(n, 1.0, 1.0);
        let e = exact_ground_energy(&h).map_err(|e| e.to_string())?;
        let d = dense_ground_energy(&h);
        if (e - d).abs() >= 1e-10 {
            return Err(format!("n={n}: {e} vs {d}"));
        }
    }
    Ok(())
}

const H: f64 = 1e-6;

/// Relative agreement with an absolute floor for near-zero entries.
fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-4 * analytic.abs().max(numeric.abs()).max(1e-2)
}

fn random_model(rng: &mut ChaCha8Rng, seed: u64) -> MlpModel {
    let d = rng.random_range(2..7);
    let hidden: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(2..7)).collect();
    let mut sizes = vec![d];
    sizes.extend(hidden);
    sizes.push(1);
    init_model(&sizes, seed).unwrap()
}

fn batch(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> (Array2<f64>, Vec<f64>) {
    let x = Array2::from_shape_fn((rows, d), |_| rng.random_range(-1.0..1.0));
    let y = (0..rows).map(|_| rng.random_range(-3.0..3.0)).collect();
    (x, y)
}

fn loss_of(m: &MlpModel, x: &Array2<f64>, y: &[f64], kind: LossKind) -> f64 {
    loss_and_gradients(m, x.view(), y, kind).unwrap().0
}

/// Weight and bias gradients of random networks, alternating L1 and L2 loss.
pub fn weight_gradient_check(instances: u64, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for inst in 0..instances {
        let m = random_model(&mut rng, inst);
        let kind = if inst % 2 == 0 { LossKind::L2 } else { LossKind::L1 };
        let (x, y) = batch(&mut rng, 4, m.input_size());
        let (_, g, _) = loss_and_gradients(&m, x.view(), &y, kind).unwrap();
        for l in 0..m.n_layers() {
            for ((i, j), a) in g.weights[l].indexed_iter() {
                let (mut p, mut q) = (m.clone(), m.clone());
                p.weights[l][[i, j]] += H;
                q.weights[l][[i, j]] -= H;
                let fd = (loss_of(&p, &x, &y, kind) - loss_of(&q, &x, &y, kind)) / (2.0 * H);
                if !close(*a, fd) {
                    return Err(format!("inst {inst} layer {l} w[{i},{j}]: {a} vs {fd}"));
                }
            }
            for (i, a) in g.biases[l].indexed_iter() {
                let (mut p, mut q) = (m.clone(), m.clone());
                p.biases[l][i] += H;
                q.biases[l][i] -= H;
                let fd = (loss_of(&p, &x, &y, kind) - loss_of(&q, &x, &y, kind)) / (2.0 * H);
                if !close(*a, fd) {
                    return Err(format!("inst {inst} layer {l} b[{i}]: {a} vs {fd}"));
                }
            }
        }
    }
    Ok(())
}

/// Input gradients of the batch loss and of the single-row dreaming path.
pub fn input_gradient_check(instances: u64, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for inst in 0..instances {
        let m = random_model(&mut rng, 1000 + inst);
        let (x, y) = batch(&mut rng, 3, m.input_size());
        let (_, _, gx) = loss_and_gradients(&m, x.view(), &y, LossKind::L2).unwrap();
        for ((r, c), a) in gx.indexed_iter() {
            let (mut p, mut q) = (x.clone(), x.clone());
            p[[r, c]] += H;
            q[[r, c]] -= H;
            let fd = (loss_of(&m, &p, &y, LossKind::L2) - loss_of(&m, &q, &y, LossKind::L2)) / (2.0 * H);
            if !close(*a, fd) {
                return Err(format!("inst {inst} x[{r},{c}]: {a} vs {fd}"));
            }
        }
        let row: Vec<f64> = x.row(0).to_vec();
        let target = -8.0;
        let (_, grad) = m.input_gradient(&row, |p| 2.0 * (p - target)).unwrap();
        let f = |v: &[f64]| (m.predict(v).unwrap() - target).powi(2);
        for k in 0..row.len() {
            let (mut p, mut q) = (row.clone(), row.clone());
            p[k] += H;
            q[k] -= H;
            let fd = (f(&p) - f(&q)) / (2.0 * H);
            if !close(grad[k], fd) {
                return Err(format!("inst {inst} dream x[{k}]: {} vs {fd}", grad[k]));
            }
        }
    }
    Ok(())
}

fn random_parametrized_circuit(rng: &mut ChaCha8Rng, n: usize) -> Circuit {
    let pool = [
        Gate::RX, Gate::RY, Gate::RZ, Gate::CRX, Gate::CRY, Gate::CRZ, Gate::XY, Gate::H, Gate::CNOT,
    ];
    let len = rng.random_range(2..10);
    let names = ["a", "b", "c", "d"];
    let specs = (0..len)
        .map(|_| {
            let g = pool[rng.random_range(0..pool.len())];
            let t = rng.random_range(0..n);
            let param = if g.is_parametrized() {
                Param::Var(names[rng.random_range(0..names.len())].into())
            } else {
                Param::None
            };
            if g.is_two_qubit() {
                let mut c = rng.random_range(0..n - 1);
                if c >= t {
                    c += 1;
                }
                GateSpec::two(g, t, c, param)
            } else {
                GateSpec::new(g, t, None, param)
            }
        })
        .collect();
    Circuit::new(n, specs).unwrap()
}

/// Parameter-shift and adjoint circuit gradients against finite differences.
pub fn circuit_gradient_check(instances: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    while checked < instances {
        let n = rng.random_range(2..5);
        let c = random_parametrized_circuit(&mut rng, n);
        let names = c.free_parameters();
        if names.is_empty() {
            continue;
        }
        let h = HamiltonianSpec::tfim(n, 1.0, rng.random_range(0.3..1.5));
        let b: Binding = names.iter().map(|k| (k.clone(), rng.random_range(-4.0..4.0))).collect();
        let shift = parameter_shift_gradient(&c, &h, &b).unwrap();
        let (e, adj) = adjoint_gradient(&c, &h, &b).unwrap();
        if (e - energy(&c, &h, &b).unwrap()).abs() >= 1e-12 {
            return Err(format!("{}: adjoint energy differs", c.serialize()));
        }
        for (k, name) in names.iter().enumerate() {
            let (mut p, mut q) = (b.clone(), b.clone());
            *p.get_mut(name).unwrap() += H;
            *q.get_mut(name).unwrap() -= H;
            let fd = (energy(&c, &h, &p).unwrap() - energy(&c, &h, &q).unwrap()) / (2.0 * H);
            if !close(shift[k], fd) || !close(adj[k], fd) || (shift[k] - adj[k]).abs() >= 1e-9 {
                return Err(format!("{}: shift {} adjoint {} fd {fd}", c.serialize(), shift[k], adj[k]));
            }
        }
        checked += 1;
    }
    Ok(())
}

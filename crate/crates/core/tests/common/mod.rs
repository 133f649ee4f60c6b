//! Independent reference computations and random scenario generators for
//! the integration tests.
#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_consensus::graph::Edge;
use robust_consensus::noise::NoiseDraw;
use robust_consensus::{DynamicsModel, Mode, Scenario, Topology};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cyclic Jacobi rotations; ascending eigenvalues of a symmetric matrix.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Characteristic polynomial coefficients `[1, c1, …, cn]` (Faddeev–LeVerrier).
pub fn char_poly(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![1.0];
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m + DMatrix::identity(n, n) * coeffs[k - 1];
        let c = -(a * &m).trace() / k as f64;
        coeffs.push(c);
    }
    coeffs
}

/// Roots of a monic polynomial by Durand–Kerner iteration.
pub fn poly_roots(coeffs: &[f64]) -> Vec<Complex<f64>> {
    let n = coeffs.len() - 1;
    let eval = |z: Complex<f64>| coeffs.iter().fold(Complex::new(0.0, 0.0), |acc, &c| acc * z + c);
    let seed = Complex::new(0.4, 0.9);
    let radius = 1.0 + coeffs.iter().skip(1).map(|c| c.abs()).fold(0.0, f64::max);
    let mut roots: Vec<Complex<f64>> = (0..n).map(|i| seed.powu(i as u32) * radius).collect();
    for _ in 0..5000 {
        let mut delta = 0.0_f64;
        for i in 0..n {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 {
            break;
        }
    }
    roots
}

pub fn mahler_oracle(a: &DMatrix<f64>) -> f64 {
    poly_roots(&char_poly(a)).iter().map(|z| z.norm().max(1.0)).product()
}

/// Deadbeat gain by Ackermann's formula: `A + BK` is nilpotent.
pub fn deadbeat_gain(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        ctrb.set_column(j, &col);
        col = a * col;
    }
    let inv = ctrb.try_inverse()?;
    let mut a_n = DMatrix::identity(n, n);
    for _ in 0..n {
        a_n = a * a_n;
    }
    let row = inv.row(n - 1) * a_n;
    Some(-row.transpose())
}

/// Hewer-style policy iteration for the modified Riccati equation, written
/// as `P = (A+BK)ᵀP(A+BK) + δ²(BK)ᵀP(BK) + Q`. Each policy-evaluation step
/// is a Kronecker linear solve.
pub fn policy_iteration_mare(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    q: &DMatrix<f64>,
    delta_sq: f64,
    k0: DVector<f64>,
) -> DMatrix<f64> {
    let n = a.nrows();
    let mut k = k0;
    let mut p = DMatrix::zeros(n, n);
    for _ in 0..200 {
        let bk = b * k.transpose();
        let acl = a + &bk;
        let op = DMatrix::identity(n * n, n * n)
            - acl.transpose().kronecker(&acl.transpose())
            - bk.transpose().kronecker(&bk.transpose()) * delta_sq;
        let rhs = DVector::from_column_slice(q.as_slice());
        let sol = op.lu().solve(&rhs).expect("policy evaluation is solvable");
        let next = DMatrix::from_column_slice(n, n, sol.as_slice());
        let next = (&next + next.transpose()) * 0.5;
        let pb = &next * b;
        k = a.transpose() * &pb * (-1.0 / b.dot(&pb));
        let change = (&next - &p).amax();
        p = next;
        if change < 1e-13 * p.amax().max(1.0) {
            break;
        }
    }
    p
}

/// Kronecker-form moment operator on the disagreement subspace built only
/// from the simulator's noise matrix evaluated on unit draws.
pub fn kronecker_moment_operator(s: &Scenario) -> DMatrix<f64> {
    let n_agents = s.n_agents();
    let dim = s.state_dim();
    let (proj, basis) = match s.topology.mode() {
        Mode::LeaderFollower => {
            // x ↦ e = (x_i − x_1), a left inverse is x = (0; e)
            let m = (n_agents - 1) * dim;
            let mut to_e = DMatrix::zeros(m, n_agents * dim);
            for r in 0..m {
                to_e[(r, dim + r)] = 1.0;
                to_e[(r, r % dim)] -= 1.0;
            }
            let mut from_e = DMatrix::zeros(n_agents * dim, m);
            for r in 0..m {
                from_e[(dim + r, r)] = 1.0;
            }
            (to_e, from_e)
        }
        _ => {
            let mut y = DMatrix::zeros(n_agents, n_agents - 1);
            // Gram–Schmidt on e_1 − e_k, independent of the library's Helmert basis
            for c in 0..n_agents - 1 {
                let mut v = DVector::zeros(n_agents);
                v[0] = 1.0;
                v[c + 1] = -1.0;
                for prev in 0..c {
                    let u = y.column(prev).into_owned();
                    v -= &u * u.dot(&v);
                }
                y.set_column(c, &(&v / v.norm()));
            }
            let basis = y.kronecker(&DMatrix::identity(dim, dim));
            (basis.transpose(), basis)
        }
    };
    let zeros = NoiseDraw::zeros(&s.topology);
    let base = &proj * s.step_matrix_form_operator(&zeros) * &basis;
    let mut op = base.kronecker(&base);
    let variances = robust_consensus::noise::source_variances(&s.topology);
    for (src, &var) in variances.iter().enumerate() {
        if var == 0.0 {
            continue;
        }
        let mut unit = zeros.clone();
        unit.values[src] = 1.0;
        let g = &proj * s.noise_matrix(&unit) * &basis;
        op += g.kronecker(&g) * var;
    }
    op
}

/// Extension used by the oracle above.
pub trait StepOperator {
    fn step_matrix_form_operator(&self, draw: &NoiseDraw) -> DMatrix<f64>;
}

impl StepOperator for Scenario {
    fn step_matrix_form_operator(&self, draw: &NoiseDraw) -> DMatrix<f64> {
        self.closed_loop_matrix() + self.noise_matrix(draw)
    }
}

/// Random connected undirected graph on `n` nodes: a random spanning tree
/// plus extra edges, per-direction variances in `[0, vmax]`.
pub fn random_connected_edges(r: &mut ChaCha8Rng, n: usize, extra_p: f64, vmax: f64) -> Vec<Edge> {
    let mut pairs = Vec::new();
    for i in 1..n {
        let j = r.random_range(0..i);
        pairs.push((j, i));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if !pairs.contains(&(i, j)) && !pairs.contains(&(j, i)) && r.random::<f64>() < extra_p {
                pairs.push((i, j));
            }
        }
    }
    let mut edges = Vec::new();
    for (i, j) in pairs {
        edges.push(Edge { from: i, to: j, variance: vmax * r.random::<f64>() });
        edges.push(Edge { from: j, to: i, variance: vmax * r.random::<f64>() });
    }
    edges
}

pub fn random_undirected(r: &mut ChaCha8Rng, n: usize, vmax: f64) -> Topology {
    let p = r.random::<f64>() * 0.6;
    Topology::new(n, Mode::Undirected, random_connected_edges(r, n, p, vmax), vec![]).unwrap()
}

pub fn random_input_channel(r: &mut ChaCha8Rng, n: usize, vmax: f64) -> Topology {
    let p = r.random::<f64>() * 0.6;
    let mut edges = random_connected_edges(r, n, p, 0.0);
    edges.iter_mut().for_each(|e| e.variance = 0.0);
    let inputs = (0..n).map(|_| vmax * r.random::<f64>()).collect();
    Topology::new(n, Mode::InputChannel, edges, inputs).unwrap()
}

/// Leader-follower graph: random (possibly disconnected) follower pairs and
/// at least one leader link into every follower component.
pub fn random_leader_follower(r: &mut ChaCha8Rng, n: usize, vmax: f64) -> Topology {
    let n_f = n - 1;
    let mut edges = Vec::new();
    let mut comp: Vec<usize> = (0..n_f).collect();
    fn root(c: &mut Vec<usize>, i: usize) -> usize {
        let mut i = i;
        while c[i] != i {
            i = c[i];
        }
        i
    }
    let p = r.random::<f64>() * 0.7;
    for i in 0..n_f {
        for j in (i + 1)..n_f {
            if r.random::<f64>() < p {
                edges.push(Edge { from: i + 1, to: j + 1, variance: vmax * r.random::<f64>() });
                edges.push(Edge { from: j + 1, to: i + 1, variance: vmax * r.random::<f64>() });
                let (a, b) = (root(&mut comp, i), root(&mut comp, j));
                comp[a] = b;
            }
        }
    }
    let mut linked = vec![false; n_f];
    for f in 0..n_f {
        if r.random::<f64>() < 0.35 {
            edges.push(Edge { from: 0, to: f + 1, variance: vmax * r.random::<f64>() });
            linked[f] = true;
        }
    }
    for f in 0..n_f {
        let c = root(&mut comp, f);
        let covered = (0..n_f).any(|g| linked[g] && root(&mut comp, g) == c);
        if !covered {
            edges.push(Edge { from: 0, to: f + 1, variance: vmax * r.random::<f64>() });
            linked[f] = true;
        }
    }
    Topology::new(n, Mode::LeaderFollower, edges, vec![]).unwrap()
}

/// Random single-input model of dimension `n` with entries in `[-scale, scale]`.
pub fn random_model(r: &mut ChaCha8Rng, n: usize, scale: f64) -> DynamicsModel {
    let a = DMatrix::from_fn(n, n, |_, _| scale * (2.0 * r.random::<f64>() - 1.0));
    let b = DVector::from_fn(n, |_, _| 2.0 * r.random::<f64>() - 1.0);
    DynamicsModel::new(a, b).unwrap()
}

pub fn random_state(r: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| 4.0 * r.random::<f64>() - 2.0)
}

pub fn random_draw(r: &mut ChaCha8Rng, len: usize) -> NoiseDraw {
    NoiseDraw { values: (0..len).map(|_| 2.0 * r.random::<f64>() - 1.0).collect() }
}

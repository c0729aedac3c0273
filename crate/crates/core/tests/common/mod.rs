//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use dpfaga_core::GridCase;
use num_complex::Complex64;
use rand::Rng;

pub fn case14() -> GridCase {
    GridCase::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/case14.json")).unwrap()
}

pub fn random_profile(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let vm = (0..n).map(|_| rng.random_range(0.9..1.1)).collect();
    let va = (0..n).map(|_| rng.random_range(-0.4..0.4)).collect();
    (vm, va)
}

/// Bus injections by summing each branch's terminal currents one at a time.
pub fn branch_power_injections(case: &GridCase, vm: &[f64], va: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let v: Vec<Complex64> = vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
    let mut current = vec![Complex64::new(0.0, 0.0); v.len()];
    for br in &case.branches {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let ysh = Complex64::new(0.0, br.b_charging / 2.0);
        let (vf, vt) = (v[br.from], v[br.to]);
        // Ideal transformer of ratio t on the from side feeding the π-section.
        let vf_sec = vf / br.tap;
        let i_series = (vf_sec - vt) * ys;
        current[br.from] += (i_series + vf_sec * ysh) / br.tap;
        current[br.to] += -i_series + vt * ysh;
    }
    for b in &case.buses {
        current[b.id] += v[b.id] * Complex64::new(b.shunt_g, b.shunt_b);
    }
    let s: Vec<Complex64> = v.iter().zip(&current).map(|(vi, ii)| vi * ii.conj()).collect();
    (s.iter().map(|c| c.re).collect(), s.iter().map(|c| c.im).collect())
}

/// Σ |I_series|² r over all branches, plus shunt conductance losses.
pub fn branch_loss_sum(case: &GridCase, vm: &[f64], va: &[f64]) -> f64 {
    let v: Vec<Complex64> = vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
    let mut loss = 0.0;
    for br in &case.branches {
        let z = Complex64::new(br.r, br.x);
        let i = (v[br.from] / br.tap - v[br.to]) / z;
        loss += i.norm_sqr() * br.r;
    }
    for b in &case.buses {
        loss += v[b.id].norm_sqr() * b.shunt_g;
    }
    loss
}

/// Central finite difference of `f` at `x` along coordinate `k`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[k] += h;
    let fp = f(&xp);
    xp[k] = x[k] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest relative error between tape gradients and central differences over
/// the chosen coordinates `(param index, flat index)`. The denominator never
/// drops below `floor`, which keeps round-off in the difference quotient
/// (about 1e-10 for O(1) losses at h = 1e-6) from dominating tiny gradients.
pub fn gradcheck_params(
    store: &dpfaga_core::nn::ParamStore,
    loss: &dyn Fn(&dpfaga_core::nn::ParamStore) -> (f64, dpfaga_core::nn::Gradients),
    coords: &[(usize, usize)],
    h: f64,
    floor: f64,
) -> f64 {
    let (_, grads) = loss(store);
    let ids: Vec<_> = store.ids().collect();
    let mut worst = 0.0f64;
    for &(p, k) in coords {
        let id = ids[p];
        let mut s = store.clone();
        let x0 = s.value(id).data()[k];
        s.value_mut(id).data_mut()[k] = x0 + h;
        let fp = loss(&s).0;
        s.value_mut(id).data_mut()[k] = x0 - h;
        let fm = loss(&s).0;
        let numeric = (fp - fm) / (2.0 * h);
        let analytic = grads.get(id).data()[k];
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        if err > worst {
            worst = err;
        }
    }
    worst
}

/// Every coordinate of every trainable parameter.
pub fn all_coords(store: &dpfaga_core::nn::ParamStore) -> Vec<(usize, usize)> {
    store
        .ids()
        .enumerate()
        .filter(|(_, id)| store.is_trainable(*id))
        .flat_map(|(p, id)| (0..store.value(id).len()).map(move |k| (p, k)))
        .collect()
}

/// Uniform entries bounded away from zero so kinks are never straddled.
pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> dpfaga_core::nn::Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    dpfaga_core::nn::Tensor::from_vec(rows, cols, data).unwrap()
}

/// Dataset with inputs uniform in [-1, 1] and targets `f(x)`.
pub fn synthetic_dataset(
    width: usize,
    len: usize,
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    rng: &mut impl Rng,
) -> dpfaga_core::Dataset {
    let samples = (0..len)
        .map(|t| {
            let x: Vec<f64> = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
            dpfaga_core::Sample {
                t,
                x_clean: x.clone(),
                y: f(&x),
                x,
            }
        })
        .collect();
    dpfaga_core::Dataset {
        case_name: "synthetic".into(),
        role: dpfaga_core::Role::Train,
        seed: 0,
        perturbation: dpfaga_core::PerturbationConfig::clean(0.0),
        samples,
    }
}

/// Deterministic dense matrix with entries in [-1, 1].
pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub fn apply(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

pub fn random_permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}

pub fn gradcheck_report(
    store: &dpfaga_core::nn::ParamStore,
    loss: &dyn Fn(&dpfaga_core::nn::ParamStore) -> (f64, dpfaga_core::nn::Gradients),
    coords: &[(usize, usize)],
    h: f64,
) {
    let (_, grads) = loss(store);
    let ids: Vec<_> = store.ids().collect();
    for &(p, k) in coords {
        let id = ids[p];
        let mut s = store.clone();
        let x0 = s.value(id).data()[k];
        s.value_mut(id).data_mut()[k] = x0 + h;
        let fp = loss(&s).0;
        s.value_mut(id).data_mut()[k] = x0 - h;
        let fm = loss(&s).0;
        let numeric = (fp - fm) / (2.0 * h);
        eprintln!("{} [{k}] analytic {:e} numeric {:e}", store.name(id), grads.get(id).data()[k], numeric);
    }
}

/// Isotropic 2-D Gaussian blobs; returns row-major points and blob ids.
pub fn gaussian_blobs(rng: &mut impl Rng, centers: &[(f64, f64)], per_blob: usize, sigma: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    use rand_distr::{Distribution, Normal};
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut pts = Vec::new();
    let mut ids = Vec::new();
    for (b, &(cx, cy)) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            pts.push(vec![cx + noise.sample(rng), cy + noise.sample(rng)]);
            ids.push(b);
        }
    }
    (pts, ids)
}

/// Minimizes `Σ d_j s_j + γ s_j²` over the simplex by projected gradient
/// descent with a bisection projection.
pub fn simplex_qp(d: &[f64], gamma: f64, iters: usize) -> Vec<f64> {
    fn project(v: &[f64]) -> Vec<f64> {
        let (mut lo, mut hi) = (v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0, v.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s: f64 = v.iter().map(|x| (x - mid).max(0.0)).sum();
            if s > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        v.iter().map(|x| (x - t).max(0.0)).collect()
    }
    let n = d.len();
    let mut s = vec![1.0 / n as f64; n];
    let step = 1.0 / (2.0 * gamma);
    for _ in 0..iters {
        let v: Vec<f64> = s.iter().zip(d).map(|(si, di)| si - step * (di + 2.0 * gamma * si)).collect();
        s = project(&v);
    }
    s
}

/// Connected components by breadth-first search over `w(i, j) > eps`.
pub fn bfs_components(n: usize, w: impl Fn(usize, usize) -> f64, eps: f64) -> Vec<usize> {
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let mut queue = std::collections::VecDeque::from([start]);
        label[start] = next;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if label[j] == usize::MAX && w(i, j) > eps {
                    label[j] = next;
                    queue.push_back(j);
                }
            }
        }
        next += 1;
    }
    label
}

mod common;

use common::{case14, random_permutation};
use dpfaga_core::nn::{Tensor, TrainConfig};
use dpfaga_core::powerflow::{solve_pf, PfOptions};
use dpfaga_core::sscrf::{
    crf_pseudo_likelihood, em_train, generate_fault_scenarios, homophilous_benchmark, predict_labels, train_supervised,
    ConditionalModel, CrfModel, CrfSpec, EmConfig, FaultClass, FaultConfig, HomophilousConfig, LabeledGraph, Result,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn scenarios_have_one_fault_and_affected_neighbors() {
    let case = case14();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sc = generate_fault_scenarios(&case, 200, &FaultConfig::default(), &mut rng).unwrap();
    assert_eq!(sc.len(), 200);
    let nbrs = case.neighbors();
    for s in &sc {
        assert_eq!(s.labels.iter().filter(|&&l| l == FaultClass::Faulted).count(), 1);
        assert_eq!(s.labels[s.fault_bus], FaultClass::Faulted);
        for (b, l) in s.labels.iter().enumerate() {
            let expect = if b == s.fault_bus {
                FaultClass::Faulted
            } else if nbrs[s.fault_bus].contains(&b) {
                FaultClass::Affected
            } else {
                FaultClass::Normal
            };
            assert_eq!(*l, expect);
        }
        assert!((0.3..0.7).contains(&s.depression));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    assert_eq!(generate_fault_scenarios(&case, 200, &FaultConfig::default(), &mut rng).unwrap(), sc);
}

#[test]
fn zero_depression_without_noise_is_the_clean_solution() {
    let case = case14();
    let cfg = FaultConfig {
        depression: (0.0, 0.0),
        snr_db: None,
        ..FaultConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for s in generate_fault_scenarios(&case, 20, &cfg, &mut rng).unwrap() {
        let sol = solve_pf(&case, &s.loads, &PfOptions::default()).unwrap();
        assert_eq!(s.v_mag, sol.v_mag);
        assert_eq!(s.v_ang, sol.v_ang);
        assert_eq!(s.labels.iter().filter(|&&l| l == FaultClass::Faulted).count(), 1);
    }
}

#[test]
fn depression_scales_magnitudes() {
    let case = case14();
    let cfg = FaultConfig {
        snr_db: None,
        ..FaultConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for s in generate_fault_scenarios(&case, 20, &cfg, &mut rng).unwrap() {
        let sol = solve_pf(&case, &s.loads, &PfOptions::default()).unwrap();
        for b in 0..case.n_buses() {
            let factor = match s.labels[b] {
                FaultClass::Faulted => 1.0 - s.depression,
                FaultClass::Affected => 1.0 - s.depression / 2.0,
                FaultClass::Normal => 1.0,
            };
            assert!((s.v_mag[b] - factor * sol.v_mag[b]).abs() < 1e-15);
        }
    }
}

#[test]
fn fault_bus_is_uniform() {
    let case = case14();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sc = generate_fault_scenarios(&case, 10_000, &FaultConfig::default(), &mut rng).unwrap();
    let mut counts = [0usize; 14];
    for s in &sc {
        counts[s.fault_bus] += 1;
    }
    for c in counts {
        assert!((c as f64 / 1e4 - 1.0 / 14.0).abs() < 0.01, "{counts:?}");
    }
}

struct Table {
    /// `p[i][k][y]`: probability of class `y` at node `i` when `k` neighbors carry label 1.
    p: Vec<Vec<[f64; 2]>>,
}

impl ConditionalModel for Table {
    fn conditionals(&self, g: &LabeledGraph, labels: &[usize]) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = (0..g.n_nodes())
            .map(|i| {
                let k = g.neighbors()[i].iter().filter(|&&j| labels[j] == 1).count();
                self.p[i][k].to_vec()
            })
            .collect();
        Ok(Tensor::from_rows(&rows)?)
    }
}

fn path4() -> LabeledGraph {
    let x = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
    LabeledGraph::new(vec![vec![1], vec![2], vec![3], vec![]], x, vec![Some(0), Some(1), None, None], 2).unwrap()
}

#[test]
fn pseudo_likelihood_on_a_path_by_hand() {
    let g = path4();
    let table = Table {
        p: vec![
            vec![[0.9, 0.1], [0.3, 0.7]],
            vec![[0.8, 0.2], [0.5, 0.5], [0.25, 0.75]],
            vec![[0.6, 0.4], [0.4, 0.6], [0.1, 0.9]],
            vec![[0.7, 0.3], [0.2, 0.8]],
        ],
    };
    // Labels 0,1,1,0: node 0 sees one 1, node 1 sees one, node 2 sees one, node 3 sees one.
    let pl = crf_pseudo_likelihood(&table, &g, &[0, 1, 1, 0]).unwrap();
    let hand = 0.3f64.ln() + 0.5f64.ln() + 0.6f64.ln() + 0.2f64.ln();
    assert!((pl - hand).abs() < 1e-15);
    let exact = Table {
        p: vec![vec![[1.0, 0.0]; 2], vec![[0.0, 1.0]; 3], vec![[0.0, 1.0]; 3], vec![[1.0, 0.0]; 2]],
    };
    assert_eq!(crf_pseudo_likelihood(&exact, &g, &[0, 1, 1, 0]).unwrap(), 0.0);
    assert!(crf_pseudo_likelihood(&exact, &g, &[0, 1, 1]).is_err());
}

#[test]
fn isolated_nodes_ignore_other_labels() {
    let x = Tensor::from_rows(&[vec![0.3, -1.0], vec![1.2, 0.5]]).unwrap();
    let g = LabeledGraph::new(vec![vec![], vec![]], x, vec![Some(0), Some(1)], 2).unwrap();
    let m = CrfModel::new(&g, CrfSpec::default(), 4).unwrap();
    let a = m.p_net.conditionals(&g, &[0, 1]).unwrap();
    let b = m.p_net.conditionals(&g, &[1, 0]).unwrap();
    assert_eq!(a, b);
    let pl = crf_pseudo_likelihood(&m.p_net, &g, &[1, 0]).unwrap();
    assert!((pl - (a[(0, 1)].ln() + a[(1, 0)].ln())).abs() < 1e-15);
}

#[test]
fn p_net_reads_neighbor_labels_but_not_its_own() {
    let g = path4();
    let m = CrfModel::new(&g, CrfSpec::default(), 9).unwrap();
    let base = m.p_net.conditionals(&g, &[0, 0, 0, 0]).unwrap();
    // Flipping node 0's label changes node 1's conditional and not node 0's.
    let flip = m.p_net.conditionals(&g, &[1, 0, 0, 0]).unwrap();
    assert_eq!(base.row(0), flip.row(0));
    assert_ne!(base.row(1), flip.row(1));
    assert_eq!(base.row(2), flip.row(2));
}

fn small_cfg(epochs: usize, lr: f64, rounds: usize) -> EmConfig {
    let t = TrainConfig {
        epochs,
        learning_rate: lr,
        seed: 5,
        ..TrainConfig::default()
    };
    EmConfig {
        q: t.clone(),
        p: t,
        n_rounds: rounds,
        ..EmConfig::default()
    }
}

#[test]
fn zero_rounds_leave_the_model_untouched() {
    let (g, truth) = homophilous_benchmark(&HomophilousConfig::default(), 1).unwrap();
    let mut m = CrfModel::new(&g, CrfSpec::default(), 1).unwrap();
    let before = m.clone();
    let report = em_train(&mut m, &g, &small_cfg(10, 1e-2, 0), Some(&truth)).unwrap();
    assert!(report.rounds.is_empty());
    assert_eq!(m.q_net.params().to_named(), before.q_net.params().to_named());
    assert_eq!(m.p_net.params().to_named(), before.p_net.params().to_named());
}

#[test]
fn fully_labeled_em_is_supervised_training() {
    let (g0, truth) = homophilous_benchmark(&HomophilousConfig::default(), 2).unwrap();
    let all: Vec<usize> = (0..g0.n_nodes()).collect();
    let g = g0.with_labeled(&truth, &all).unwrap();
    assert!(g.unlabeled().is_empty());
    let cfg = small_cfg(40, 1e-2, 3);
    let mut em = CrfModel::new(&g, CrfSpec::default(), 11).unwrap();
    let report = em_train(&mut em, &g, &cfg, None).unwrap();

    let mut sup = CrfModel::new(&g, CrfSpec::default(), 11).unwrap();
    let mut trajectory = Vec::new();
    for _ in 0..=cfg.n_rounds {
        trajectory.extend(train_supervised(&mut sup.q_net, &g, &cfg.q).unwrap().train);
    }
    assert_eq!(report.q_losses.len(), 4 * 40);
    assert!(report.q_losses.iter().zip(&trajectory).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(em.q_net.params().to_named(), sup.q_net.params().to_named());
    let sup_acc = predict_labels(&sup, &g).unwrap();
    assert!(report.rounds.last().unwrap().accuracy_labeled >= {
        let hits = sup_acc.labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
        hits as f64 / truth.len() as f64
    });
}

#[test]
fn objectives_decrease_at_small_learning_rate() {
    let (g, truth) = homophilous_benchmark(&HomophilousConfig::default(), 3).unwrap();
    let cfg = small_cfg(30, 1e-4, 2);
    let mut m = CrfModel::new(&g, CrfSpec::default(), 3).unwrap();
    let report = em_train(&mut m, &g, &cfg, Some(&truth)).unwrap();
    for chunk in report.q_losses.chunks(30).chain(report.p_losses.chunks(30)) {
        assert!(chunk.windows(2).all(|w| w[1] <= w[0]), "{chunk:?}");
    }
}

#[test]
fn em_beats_or_matches_supervised_on_homophilous_blobs() {
    let (g, truth) = homophilous_benchmark(&HomophilousConfig::default(), 42).unwrap();
    let cfg = EmConfig::default();
    let unl = g.unlabeled();
    let acc = |labels: &[usize]| unl.iter().filter(|&&i| labels[i] == truth[i]).count() as f64 / unl.len() as f64;

    let mut base = CrfModel::new(&g, CrfSpec::default(), 42).unwrap();
    for _ in 0..=cfg.n_rounds {
        train_supervised(&mut base.q_net, &g, &cfg.q).unwrap();
    }
    let base_acc = acc(&predict_labels(&base, &g).unwrap().labels);

    let mut em = CrfModel::new(&g, CrfSpec::default(), 42).unwrap();
    let report = em_train(&mut em, &g, &cfg, Some(&truth)).unwrap();
    let em_acc = acc(&predict_labels(&em, &g).unwrap().labels);
    eprintln!("supervised {base_acc:.3}, em {em_acc:.3}, rounds {:?}", report.rounds);
    assert_eq!(report.rounds.last().unwrap().accuracy_unlabeled, Some(em_acc));
    assert!(em_acc >= base_acc);
}

#[test]
fn predictions_are_distributions_and_permute_with_nodes() {
    let (g, truth) = homophilous_benchmark(&HomophilousConfig::default(), 6).unwrap();
    let mut m = CrfModel::new(&g, CrfSpec::default(), 6).unwrap();
    em_train(&mut m, &g, &small_cfg(20, 1e-2, 1), Some(&truth)).unwrap();
    let pred = predict_labels(&m, &g).unwrap();
    for i in 0..g.n_nodes() {
        let row = pred.probabilities.row(i);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&p| p >= 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let perm = random_permutation(&mut rng, g.n_nodes());
    let gp = g.permuted(&perm);
    let pp = predict_labels(&m, &gp).unwrap();
    for i in 0..g.n_nodes() {
        for c in 0..g.n_classes() {
            assert!((pp.probabilities[(perm[i], c)] - pred.probabilities[(i, c)]).abs() < 1e-12);
        }
        assert_eq!(pp.labels[perm[i]], pred.labels[i]);
    }
}

#[test]
fn separable_attributes_are_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 90;
    let truth: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let x: Vec<Vec<f64>> = truth
        .iter()
        .map(|&c| vec![4.0 * c as f64 + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let nbrs: Vec<Vec<usize>> = (0..n).map(|i| vec![(i + 3) % n]).collect();
    let all: Vec<usize> = (0..n).collect();
    let g = LabeledGraph::new(nbrs, Tensor::from_rows(&x).unwrap(), truth.iter().map(|&c| Some(c)).collect(), 3).unwrap();
    let mut m = CrfModel::new(&g, CrfSpec::default(), 8).unwrap();
    em_train(&mut m, &g, &small_cfg(300, 1e-2, 1), Some(&truth)).unwrap();
    let pred = predict_labels(&m, &g).unwrap();
    let hits = all.iter().filter(|&&i| pred.labels[i] == truth[i]).count();
    assert!(hits as f64 >= 0.95 * n as f64, "{hits}/{n}");
}

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use mixrec_core::assign::assign_original_images;
use mixrec_core::data::{sample_selection_vector, SplitSpec};
use mixrec_core::graph::SimpleGraph;
use mixrec_core::gram::{folded_moment, invert_folded_moment, PrivateGram};
use mixrec_core::hardness::{brute_force_maxcut, cut_to_assignment, objective, reduce_maxcut};
use mixrec_core::matrix::Matrix;
use mixrec_core::oracle::naive_sign_solver;
use mixrec_core::signsolve::{SignSolver, DEFAULT_MAX_ROWS};

fn incidence(edges: &[(usize, usize)], n: usize) -> Matrix {
    let mut w = Matrix::zeros(edges.len(), n);
    for (r, &(a, b)) in edges.iter().enumerate() {
        w.set(r, a, 1.0);
        w.set(r, b, 1.0);
    }
    w
}

fn edge_strategy(n: usize, max_m: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0..n, 1..n), 1..=max_m)
        .prop_map(move |v| v.into_iter().map(|(a, s)| (a, (a + s) % n)).collect())
}

fn eval(w: &Matrix, z: &[f64], y_pub: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| w.row(i).iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + y_pub[i])
        .collect()
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-7 * (1.0 + y.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selection_vectors_have_squared_norm_two(
        n_pub in 2usize..12, n_priv in 2usize..10, k_pub in 1usize..3, seed in any::<u64>()
    ) {
        let split = SplitSpec::new(n_pub, n_priv, k_pub.min(n_pub), 2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let w = sample_selection_vector(&split, &mut rng).unwrap();
        let dense = w.dense(split.n()).unwrap();
        assert_relative_eq!(dense.iter().map(|v| v * v).sum::<f64>(), 2.0, epsilon = 1e-12);
        prop_assert_eq!(dense.iter().filter(|&&v| v != 0.0).count(), split.k_pub + 2);
    }

    #[test]
    fn private_gram_is_symmetric_with_diagonal_two(edges in edge_strategy(6, 12)) {
        let g = PrivateGram::from_incidence(&incidence(&edges, 6)).unwrap();
        for i in 0..g.m() {
            prop_assert_eq!(g.get(i, i), 2);
            for j in 0..g.m() {
                prop_assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
    }

    #[test]
    fn moment_inversion_round_trips(rho in -1.0f64..1.0, var in 0.1f64..4.0) {
        let m = folded_moment(rho, var).unwrap();
        // only |rho| is identifiable from E|u||v|
        assert_relative_eq!(invert_folded_moment(m, var).unwrap(), rho.abs(), epsilon = 1e-9);
    }

    #[test]
    fn assignment_reproduces_the_private_gram(edges in edge_strategy(7, 16)) {
        let g = PrivateGram::from_incidence(&incidence(&edges, 7)).unwrap();
        // disconnected or non-line-graph inputs may be refused, but anything
        // returned must be consistent
        if let Ok(a) = assign_original_images(&g, 7) {
            prop_assert_eq!(PrivateGram::from_incidence(&a.w_priv).unwrap(), g);
            for r in 0..a.w_priv.rows() {
                prop_assert_eq!(a.w_priv.row(r).iter().filter(|&&v| v == 1.0).count(), 2);
            }
        }
    }

    #[test]
    fn gray_code_walk_matches_direct_enumeration(
        m in 1usize..9,
        n in 1usize..5,
        bits in prop::collection::vec(any::<bool>(), 64),
        z in prop::collection::vec(-3.0f64..3.0, 5),
        y_pub in prop::collection::vec(-1.0f64..1.0, 9),
    ) {
        let w = Matrix::from_fn(m, n, |i, j| bits[i * n + j] as u8 as f64);
        let y_pub = &y_pub[..m];
        let y: Vec<f64> = eval(&w, &z[..n], y_pub).iter().map(|v| v.abs()).collect();
        let solver = SignSolver::new(&w, DEFAULT_MAX_ROWS).unwrap();
        let fast = solver.solve_pixel(y_pub, &y, 1e-9).unwrap();
        let slow = naive_sign_solver(&w, y_pub, &y, 1e-9).unwrap();
        prop_assert_eq!(fast.solutions.len(), slow.len());
        for s in &slow {
            prop_assert!(fast.solutions.iter().any(|f| close(f, s)));
        }
        let (min, _) = solver.min_objective(y_pub, &y).unwrap();
        prop_assert!(min <= 1e-12 * (1.0 + y.iter().map(|v| v * v).sum::<f64>()));
    }

    #[test]
    fn solutions_come_in_sign_pairs_without_public_part(
        edges in edge_strategy(4, 8),
        z in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let w = incidence(&edges, 4);
        let zero = vec![0.0; w.rows()];
        let y: Vec<f64> = eval(&w, &z, &zero).iter().map(|v| v.abs()).collect();
        let sol = SignSolver::new(&w, DEFAULT_MAX_ROWS).unwrap().solve_pixel(&zero, &y, 1e-9).unwrap();
        for s in &sol.solutions {
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert!(sol.solutions.iter().any(|t| close(t, &neg)));
        }
    }

    #[test]
    fn matrix_bytes_round_trip(rows in 1usize..6, cols in 1usize..6, vals in prop::collection::vec(any::<f64>(), 36)) {
        let m = Matrix::from_fn(rows, cols, |i, j| vals[i * cols + j]);
        let back = Matrix::from_bytes(&m.to_bytes(), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(m.to_bytes(), back.to_bytes());
    }

    #[test]
    fn edge_list_round_trips(edges in edge_strategy(8, 10)) {
        let mut seen = Vec::new();
        for (a, b) in edges {
            let e = (a.min(b), a.max(b));
            if !seen.contains(&e) {
                seen.push(e);
            }
        }
        let g = SimpleGraph::new(8, seen).unwrap();
        prop_assert_eq!(SimpleGraph::parse_edge_list(&g.to_edge_list()).unwrap(), g);
    }

    #[test]
    fn cut_objective_is_four_times_uncut_edges(edges in edge_strategy(6, 10), mask in 0u32..64, c in 1usize..20) {
        let mut seen = Vec::new();
        for (a, b) in edges {
            let e = (a.min(b), a.max(b));
            if !seen.contains(&e) {
                seen.push(e);
            }
        }
        let g = SimpleGraph::new(6, seen).unwrap();
        let inst = reduce_maxcut(&g, c).unwrap();
        let s: Vec<usize> = (0..6).filter(|&i| mask >> i & 1 == 1).collect();
        let uncut = g.edges.iter().filter(|&&(u, v)| s.contains(&u) == s.contains(&v)).count();
        let z = cut_to_assignment(&s, 6).unwrap();
        prop_assert_eq!(objective(&inst, &z).unwrap(), 4.0 * uncut as f64);
        let opt = brute_force_maxcut(&g).unwrap().best_value;
        prop_assert!(g.m() - uncut <= opt);
    }
}

use proptest::prelude::*;

use borders_core::borders::{read_borders, train_borders, write_borders, FnOracle};
use borders_core::data::{
    parse_libsvm_str, standardize_apply, standardize_fit, subsample_plan, write_libsvm_data,
    Dataset,
};
use borders_core::eval::ConfusionMatrix;
use borders_core::kernel::{
    agf_decision, agf_gradient, knn_classify, solve_bandwidth, AgfConfig, BinaryProblem,
};
use borders_core::multiclass::{
    couple_probabilities, read_multi_borders, write_multi_borders, MultiBordersModel, PairwiseR,
};
use borders_core::svm::{parse_libsvm_model_str, write_libsvm_model, SvmModel};
use borders_core::TrainOptions;

fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..5, 1usize..20).prop_flat_map(|(dim, n)| {
        let value = prop_oneof![Just(0.0), -1e3..1e3f64];
        (
            prop::collection::vec(value, dim * n),
            prop::collection::vec(0usize..3, n),
        )
            .prop_map(move |(features, raw)| {
                // Class ids in order of first appearance, as the parser assigns them.
                let names_all = ["1", "-1", "7"];
                let mut seen: Vec<usize> = Vec::new();
                let labels = raw
                    .iter()
                    .map(|&c| match seen.iter().position(|&s| s == c) {
                        Some(i) => i,
                        None => {
                            seen.push(c);
                            seen.len() - 1
                        }
                    })
                    .collect();
                let names = seen.iter().map(|&c| names_all[c].to_string()).collect();
                Dataset::new(dim, features, labels, names).unwrap()
            })
    })
}

fn binary_problem(dim: usize) -> impl Strategy<Value = BinaryProblem> {
    (3usize..15).prop_flat_map(move |n| {
        (
            prop::collection::vec(-3.0..3.0f64, dim * n),
            prop::collection::vec(prop::bool::ANY, n - 2),
        )
            .prop_map(move |(samples, signs)| {
                let mut s: Vec<f64> = vec![1.0, -1.0];
                s.extend(signs.iter().map(|&b| if b { 1.0 } else { -1.0 }));
                BinaryProblem::new(dim, samples, s).unwrap()
            })
    })
}

fn svm_model() -> impl Strategy<Value = SvmModel> {
    (2usize..5, 1usize..4).prop_flat_map(|(n_classes, dim)| {
        let per_class = prop::collection::vec(1usize..4, n_classes);
        (Just(n_classes), Just(dim), per_class).prop_flat_map(|(nc, dim, nr_sv)| {
            let total: usize = nr_sv.iter().sum();
            let pairs = nc * (nc - 1) / 2;
            (
                Just(nc),
                Just(dim),
                Just(nr_sv),
                0.05..2.0f64,
                prop::collection::vec(-2.0..2.0f64, total * dim),
                prop::collection::vec(prop::collection::vec(-3.0..3.0f64, total), nc - 1),
                prop::collection::vec(-1.0..1.0f64, pairs),
                prop::collection::vec(-4.0..-0.1f64, pairs),
                prop::collection::vec(-0.5..0.5f64, pairs),
            )
                .prop_map(|(nc, dim, nr_sv, gamma, sv, sv_coef, rho, a, b)| SvmModel {
                    gamma,
                    labels: (0..nc).map(|c| (c as i32 * 2 - 1).to_string()).collect(),
                    nr_sv,
                    dim,
                    sv,
                    sv_coef,
                    rho,
                    prob_a: Some(a),
                    prob_b: Some(b),
                })
        })
    })
}

fn pairwise(n: usize) -> impl Strategy<Value = PairwiseR> {
    prop::collection::vec(-0.99..0.99f64, n * (n - 1) / 2)
        .prop_map(move |v| PairwiseR::new(n, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn libsvm_data_round_trip(d in dataset()) {
        let mut out = Vec::new();
        write_libsvm_data(&d, &mut out).unwrap();
        let back = parse_libsvm_str(std::str::from_utf8(&out).unwrap()).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn standardized_columns_are_unit(d in dataset()) {
        prop_assume!(d.len() >= 2);
        let s = standardize_fit(&d).unwrap();
        prop_assume!(!s.kept_features.is_empty());
        let z = standardize_apply(&s, &d).unwrap();
        let n = z.len() as f64;
        for j in 0..z.dim() {
            let mean = z.rows().map(|r| r[j]).sum::<f64>() / n;
            let var = z.rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() <= 1e-12, "mean {}", mean);
            prop_assert!((var.sqrt() - 1.0).abs() <= 1e-12, "sd {}", var.sqrt());
        }
    }

    #[test]
    fn subsample_keeps_rank_order(counts in prop::collection::vec(1usize..2000, 2..8), u in 0.0..1.0f64) {
        let n: usize = counts.iter().sum();
        let n_min = *counts.iter().min().unwrap();
        let f_min = (counts.len() * n_min) as f64 / n as f64;
        prop_assume!(f_min < 0.999);
        let f = f_min + (0.999 - f_min) * u;
        let plan = subsample_plan(&counts, f).unwrap();
        for a in 0..counts.len() {
            prop_assert!(plan.kept[a] <= counts[a]);
            for b in 0..counts.len() {
                if counts[a] <= counts[b] {
                    prop_assert!(plan.kept[a] <= plan.kept[b]);
                }
            }
        }
        let kept: usize = plan.kept.iter().sum();
        let target = (f * n as f64).round();
        prop_assert!((kept as f64 - target).abs() <= counts.len() as f64);
    }

    #[test]
    fn bandwidth_grows_with_weight(p in binary_problem(2), x in prop::collection::vec(-3.0..3.0f64, 2), w in 0.2..1.5f64) {
        let lo = solve_bandwidth(&x, &p, &AgfConfig::new(w, 0).unwrap());
        let hi = solve_bandwidth(&x, &p, &AgfConfig::new(w + 0.5, 0).unwrap());
        if let (Ok(lo), Ok(hi)) = (lo, hi) {
            prop_assert!(hi > lo);
        }
    }

    #[test]
    fn sign_swap_negates(p in binary_problem(2), x in prop::collection::vec(-3.0..3.0f64, 2)) {
        let cfg = AgfConfig::new(1.5, 0).unwrap();
        let q = p.negated();
        if let (Ok(a), Ok(b)) = (agf_decision(&x, &p, &cfg), agf_decision(&x, &q, &cfg)) {
            prop_assert_eq!(a, -b);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
        if let (Ok(a), Ok(b)) = (agf_gradient(&x, &p, &cfg), agf_gradient(&x, &q, &cfg)) {
            for (u, v) in a.iter().zip(&b) {
                prop_assert_eq!(*u, -*v);
            }
        }
    }

    #[test]
    fn knn_rotation_invariant(
        pts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, 0usize..3), 3..20),
        x in (-5.0..5.0f64, -5.0..5.0f64),
        angle in 0.0..std::f64::consts::TAU,
        k in 1usize..4,
    ) {
        let (s, c) = angle.sin_cos();
        let rot = |(a, b): (f64, f64)| (c * a - s * b, s * a + c * b);
        let build = |f: &dyn Fn((f64, f64)) -> (f64, f64)| {
            let mut feats = Vec::new();
            for &(a, b, _) in &pts {
                let (u, v) = f((a, b));
                feats.extend([u, v]);
            }
            Dataset::new(2, feats, pts.iter().map(|p| p.2).collect(), vec!["a".into(), "b".into(), "c".into()]).unwrap()
        };
        // Skip near-ties in distance, which rotation round-off may reorder.
        let mut d2: Vec<f64> = pts.iter().map(|&(a, b, _)| (a - x.0).powi(2) + (b - x.1).powi(2)).collect();
        d2.sort_by(f64::total_cmp);
        prop_assume!(d2.windows(2).all(|w| w[1] - w[0] > 1e-9));
        let plain = knn_classify(&[x.0, x.1], &build(&|p| p), k).unwrap();
        let (rx, ry) = rot(x);
        let turned = knn_classify(&[rx, ry], &build(&rot), k).unwrap();
        prop_assert_eq!(plain.0, turned.0);
        for (a, b) in plain.1.iter().zip(&turned.1) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn svm_pairs_antisymmetric(m in svm_model(), x in prop::collection::vec(-3.0..3.0f64, 3)) {
        let x = &x[..m.dim];
        for i in 0..m.n_classes() {
            for j in 0..m.n_classes() {
                if i != j {
                    prop_assert_eq!(m.pair_decision(i, j, x).unwrap(), -m.pair_decision(j, i, x).unwrap());
                    prop_assert_eq!(m.pair_probability(i, j, x).unwrap(), -m.pair_probability(j, i, x).unwrap());
                }
            }
        }
    }

    #[test]
    fn svm_model_round_trip(m in svm_model(), x in prop::collection::vec(-3.0..3.0f64, 3)) {
        let mut out = Vec::new();
        write_libsvm_model(&m, &mut out).unwrap();
        let back = parse_libsvm_model_str(std::str::from_utf8(&out).unwrap()).unwrap();
        let x = &x[..m.dim];
        prop_assert_eq!(back.decision_values(x).unwrap(), m.decision_values(x).unwrap());
    }

    #[test]
    fn coupling_sums_to_one(r in (3usize..6).prop_flat_map(pairwise)) {
        let p = couple_probabilities(&r).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn coupling_permutation_invariant(r in pairwise(4), perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
        let n = 4;
        let mut values = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                values.push(r.get(perm[i], perm[j]));
            }
        }
        let permuted = couple_probabilities(&PairwiseR::new(n, values).unwrap()).unwrap();
        let p = couple_probabilities(&r).unwrap();
        for i in 0..n {
            prop_assert!((permuted[i] - p[perm[i]]).abs() <= 1e-12);
        }
    }

    #[test]
    fn scores_are_label_blind(
        rows in (2usize..5).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0u64..30, n), n)),
        seed in any::<u64>(),
    ) {
        let n = rows.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left((seed % n as u64) as usize);
        if seed % 2 == 1 {
            perm.swap(0, n - 1);
        }
        let permuted: Vec<Vec<u64>> = (0..n).map(|i| (0..n).map(|j| rows[perm[i]][perm[j]]).collect()).collect();
        let doubled: Vec<Vec<u64>> = rows.iter().map(|r| r.iter().map(|c| 2 * c).collect()).collect();
        let m = ConfusionMatrix::from_rows(&rows).unwrap();
        prop_assume!(m.n_test() > 0);
        let p = ConfusionMatrix::from_rows(&permuted).unwrap();
        let d = ConfusionMatrix::from_rows(&doubled).unwrap();
        prop_assert!((m.accuracy().unwrap() - p.accuracy().unwrap()).abs() <= 1e-15);
        prop_assert!((m.accuracy().unwrap() - d.accuracy().unwrap()).abs() <= 1e-15);
        if let Ok(uc) = m.uncertainty_coefficient() {
            prop_assert!((0.0..=1.0).contains(&uc));
            prop_assert!((uc - p.uncertainty_coefficient().unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn linear_borders_reproduce_sign(
        w in (0.2..2.0f64, -2.0..2.0f64),
        c in -0.5..0.5f64,
        queries in prop::collection::vec((-4.0..4.0f64, -4.0..4.0f64), 20),
        seed in any::<u64>(),
    ) {
        let oracle = FnOracle::new(
            move |x: &[f64]| (w.0 * x[0] + w.1 * x[1] + c).tanh(),
            move |x: &[f64]| {
                let s = 1.0 - (w.0 * x[0] + w.1 * x[1] + c).tanh().powi(2);
                vec![s * w.0, s * w.1]
            },
        );
        let p = BinaryProblem::new(2, vec![3.0, 0.0, -3.0, 0.0, 3.0, 2.0, -3.0, -2.0], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let model = train_borders(&oracle, &p, 5, seed, &TrainOptions::default()).unwrap();
        for (a, b) in queries {
            let f = w.0 * a + w.1 * b + c;
            prop_assume!(f.abs() > 1e-6);
            prop_assert_eq!(model.classify(&[a, b]), usize::from(f > 0.0));
        }
        let mut out = Vec::new();
        write_borders(&model, &mut out).unwrap();
        prop_assert_eq!(read_borders(out.as_slice()).unwrap(), model.clone());

        let multi = MultiBordersModel::new(vec!["a".into(), "b".into()], vec![model]).unwrap();
        let mut out = Vec::new();
        write_multi_borders(&multi, &mut out).unwrap();
        prop_assert_eq!(read_multi_borders(out.as_slice()).unwrap(), multi);
    }
}

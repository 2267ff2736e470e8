use oncode::graph_data::{
    canonical_treatment, parse_gene_graph, parse_volumes, VocabularyPolicy, VolumeSeries,
};
use oncode::model::decoded_grid;
use oncode::node_dynamics::rk4_integrate;
use oncode::numkit::{softmax, Activation, Mlp, ParamSet, Tape, Tensor};
use oncode::response::{
    auroc, average_ranks, best_response, binarize, categorize, grouped_kfold, regression_metrics,
};
use oncode::tgi::{tgi_fit_points, tgi_simulate, tgi_simulate_rk4, TgiParams};
use oncode::volume_encoder::make_window;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0..2.0f64, rows * cols)
        .prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn tgi_params() -> impl Strategy<Value = TgiParams> {
    (0.03..0.15f64, 0.0..0.4f64, 0.02..0.3f64)
        .prop_map(|(g, d, l)| TgiParams::new(g, d, l).unwrap())
}

/// Strictly increasing days starting at 0.
fn days() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1u8..5, 3..30).prop_map(|steps| {
        let mut t = vec![0.0];
        for s in steps {
            t.push(t.last().unwrap() + s as f64);
        }
        t
    })
}

fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    days().prop_flat_map(|t| {
        let n = t.len();
        (Just(t), prop::collection::vec(1.0..500.0f64, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_transpose_identity(a in matrix(3, 4), b in matrix(4, 2)) {
        let ab_t = a.matmul(&b).unwrap().transpose();
        let bt_at = b.transpose().matmul(&a.transpose()).unwrap();
        for (x, y) in ab_t.data().iter().zip(bt_at.data()) {
            prop_assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn softmax_is_a_shift_invariant_distribution(v in prop::collection::vec(-30.0..30.0f64, 1..12), c in -100.0..100.0f64) {
        let p = softmax(&v).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        for (a, b) in p.iter().zip(softmax(&shifted).unwrap()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_eval_matches_tape_forward(x in matrix(3, 4), seed in 0u64..1000) {
        let mlp = Mlp::new("m", vec![4, 5, 2], vec![Activation::Tanh, Activation::Identity]).unwrap();
        let mut p = ParamSet::new();
        mlp.init(&mut p, &mut ChaCha8Rng::seed_from_u64(seed));
        let direct = mlp.eval(&p, &x).unwrap();
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let xv = tape.leaf(x.clone());
        let taped = tape.value(mlp.forward(&tape, &bound, xv));
        prop_assert_eq!(direct, taped);
    }

    #[test]
    fn gene_graph_ignores_line_order(seed in 0u64..1000) {
        let mut lines: Vec<String> = (0..12)
            .map(|i| format!("g{}\tg{}\t{}", i % 6, (i * 5 + 1) % 7 + 6, 0.1 + 0.07 * i as f64))
            .collect();
        let text = lines.join("\n");
        lines.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let policy = VocabularyPolicy::FromEdges;
        let a = parse_gene_graph(&text, "a", &policy, "t").unwrap();
        let b = parse_gene_graph(&lines.join("\n"), "b", &policy, "t").unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn volume_rows_ignore_order((t, v) in series(), seed in 0u64..1000) {
        let header = "model_id,treatment,day,volume_mm3";
        let mut rows: Vec<String> = t
            .iter()
            .zip(&v)
            .map(|(d, x)| format!("M1,D2+D1,{d},{x}"))
            .collect();
        let canonical = parse_volumes(&format!("{header}\n{}", rows.join("\n")), "a").unwrap();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = parse_volumes(&format!("{header}\n{}", rows.join("\n")), "b").unwrap();
        prop_assert_eq!(&canonical, &shuffled);
        let (key, s) = canonical.iter().next().unwrap();
        prop_assert_eq!(key.treatment.as_str(), "D1+D2");
        prop_assert_eq!(s.times(), &t[..]);
    }

    #[test]
    fn treatment_names_are_order_free(mut drugs in prop::collection::btree_set("[A-Z][a-z0-9]{0,4}", 1..4)) {
        let sorted: Vec<String> = std::mem::take(&mut drugs).into_iter().collect();
        let mut reversed = sorted.clone();
        reversed.reverse();
        prop_assert_eq!(canonical_treatment(&reversed.join("+")).unwrap(), sorted.join("+"));
    }

    #[test]
    fn tgi_scales_with_initial_volume(p in tgi_params(), t in days(), c in 0.1..10.0f64) {
        let a = tgi_simulate(&p, 100.0, &t).unwrap();
        let b = tgi_simulate(&p, 100.0 * c, &t).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(close(c * x, *y, 1e-12));
        }
    }

    #[test]
    fn tgi_closed_form_agrees_with_rk4(p in tgi_params(), t in days()) {
        let a = tgi_simulate(&p, 150.0, &t).unwrap();
        let b = tgi_simulate_rk4(&p, 150.0, &t).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(close(*x, *y, 1e-6));
        }
    }

    #[test]
    fn best_response_is_scale_free((t, v) in series(), c in 0.01..100.0f64) {
        prop_assume!(t.iter().any(|d| (10.0..64.0).contains(d)));
        let a = best_response(&t, &v).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        prop_assert!(close(a, best_response(&t, &scaled).unwrap(), 1e-10));
        prop_assert!(a >= -100.0);
    }

    #[test]
    fn categories_are_monotone(a in -150.0..150.0f64, b in -150.0..150.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(categorize(lo) <= categorize(hi));
        if binarize(categorize(hi)) {
            prop_assert!(binarize(categorize(lo)));
        }
    }

    #[test]
    fn auroc_depends_only_on_ranks(
        pairs in prop::collection::vec((any::<bool>(), -5.0..5.0f64), 2..40),
    ) {
        let labels: Vec<bool> = pairs.iter().map(|p| p.0).collect();
        let scores: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let a = auroc(&labels, &scores);
        prop_assume!(a.is_some());
        let a = a.unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let warped: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
        prop_assert!((auroc(&labels, &warped).unwrap() - a).abs() < 1e-12);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auroc(&labels, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn ranks_sum_to_triangle_number(v in prop::collection::vec(-3i32..3, 1..30)) {
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        let n = v.len() as f64;
        let r = average_ranks(&v);
        prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_predictions_score_one(v in prop::collection::vec(0.0..100.0f64, 3..20)) {
        prop_assume!(v.iter().any(|x| (x - v[0]).abs() > 1e-6));
        let m = regression_metrics(&v, &v).unwrap();
        prop_assert!((m.r2.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn folds_partition_and_keep_groups_whole(
        groups in prop::collection::vec(0u8..12, 5..60),
        k in 2usize..6,
        seed in 0u64..100,
    ) {
        let groups: Vec<String> = groups.iter().map(|g| format!("T{g}")).collect();
        let distinct: std::collections::BTreeSet<&String> = groups.iter().collect();
        if distinct.len() < k {
            prop_assert!(grouped_kfold(&groups, k, seed).is_err());
            return Ok(());
        }
        let split = grouped_kfold(&groups, k, seed).unwrap();
        let mut seen = vec![0; groups.len()];
        for f in 0..k {
            let test = split.test_indices(f);
            let train = split.train_indices(f);
            prop_assert_eq!(test.len() + train.len(), groups.len());
            for &i in &test {
                seen[i] += 1;
                prop_assert!(train.iter().all(|&j| groups[j] != groups[i]));
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert_eq!(split, grouped_kfold(&groups, k, seed).unwrap());
    }

    #[test]
    fn windows_hold_log_ratios_up_to_the_cutoff((t, v) in series(), cutoff in 0.0..40.0f64) {
        let s = VolumeSeries::new(t.clone(), v.clone()).unwrap();
        let w = make_window(&s, cutoff).unwrap();
        prop_assert_eq!(w.len(), t.iter().filter(|d| **d <= cutoff).count());
        prop_assert_eq!(w.values[0], 0.0);
        for (i, x) in w.values.iter().enumerate() {
            prop_assert!(close(*x, (v[i] / v[0]).ln(), 1e-12));
        }
    }

    #[test]
    fn rk4_matches_linear_growth(a in -1.0..1.0f64, end in 0.5..5.0f64) {
        let y = rk4_integrate(|_, y| vec![a * y[0]], &[2.0], &[0.0, end], 0.01).unwrap();
        prop_assert!(close(y[1][0], 2.0 * (a * end).exp(), 1e-8));
    }

    #[test]
    fn decoded_grid_spans_the_horizon(step in prop::sample::select(vec![0.1, 0.25, 0.5, 1.0]), end in 0.0..80.0f64) {
        let g = decoded_grid(step, end);
        prop_assert_eq!(g[0], 0.0);
        prop_assert!(*g.last().unwrap() <= end + 1e-9);
        prop_assert!(*g.last().unwrap() + step > end);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn noiseless_tgi_fits_recover_parameters(p in tgi_params(), v0 in 50.0..300.0f64) {
        let t: Vec<f64> = (0..22).map(|i| 3.0 * i as f64).collect();
        let v = tgi_simulate(&p, v0, &t).unwrap();
        let fit = tgi_fit_points(&t, &v).unwrap();
        prop_assert!(fit.rss < 1e-8, "{:?}", fit);
    }
}

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use streetcount_core::stats::{
    fit_beta, fit_huber_with, fit_ols, pearson, pearson_matrix, DesignMatrix, HuberOptions, ResidualParts,
};

fn well_spread(v: &[f64]) -> bool {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64 > 1e-2
}

fn paired(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| (prop::collection::vec(-100.0..100.0f64, n), prop::collection::vec(-100.0..100.0f64, n)))
}

fn normal_equations(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let xtx = x.transpose() * x;
    let b = xtx.try_inverse().expect("full rank") * x.transpose() * DVector::from_column_slice(y);
    b.iter().copied().collect()
}

proptest! {
    #[test]
    fn pearson_ignores_positive_affine_maps(
        (a, b) in paired(3..40),
        scale in 0.01..100.0f64,
        shift in -1e3..1e3f64,
    ) {
        prop_assume!(well_spread(&a) && well_spread(&b));
        let r = pearson(&a, &b).unwrap();
        let moved: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
        let r2 = pearson(&moved, &b).unwrap();
        prop_assert!((r - r2).abs() <= 1e-12, "{r} vs {r2}");
        prop_assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn pearson_matrix_is_symmetric_with_unit_diagonal((a, b) in paired(3..30)) {
        prop_assume!(well_spread(&a) && well_spread(&b));
        let cols = vec![a.iter().map(|&v| Some(v)).collect(), b.iter().map(|&v| Some(v)).collect()];
        let m = pearson_matrix(&["a".into(), "b".into()], &cols);
        prop_assert_eq!(m.get("a", "b"), m.get("b", "a"));
        prop_assert_eq!(m.get("a", "a"), Some(1.0));
    }

    #[test]
    fn ols_matches_normal_equations((x, y) in paired(4..40)) {
        prop_assume!(well_spread(&x));
        let design = DesignMatrix::from_columns(&["x"], &[x.clone()]).unwrap();
        let fit = fit_ols(&design, &y).unwrap();
        let want = normal_equations(design.matrix(), &y);
        for (g, w) in fit.coefficients.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-8 * (1.0 + w.abs()), "{g} vs {w}");
        }
    }

    #[test]
    fn huber_with_huge_k_is_ols((x, y) in paired(4..40)) {
        prop_assume!(well_spread(&x));
        let design = DesignMatrix::from_columns(&["x"], &[x.clone()]).unwrap();
        let ols = fit_ols(&design, &y).unwrap();
        let wide = fit_huber_with(&design, &y, HuberOptions { k: 1e9, ..HuberOptions::default() }).unwrap();
        for (a, b) in wide.coefficients.iter().zip(&ols.coefficients) {
            prop_assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn huber_weights_are_in_unit_interval((x, y) in paired(5..30)) {
        prop_assume!(well_spread(&x));
        let design = DesignMatrix::from_columns(&["x"], &[x.clone()]).unwrap();
        let fit = fit_huber_with(&design, &y, HuberOptions::default()).unwrap();
        prop_assert!(fit.weights.iter().all(|w| *w > 0.0 && *w <= 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn intercept_only_beta_solves_score_equation(y in prop::collection::vec(0.02..0.98f64, 5..40)) {
        prop_assume!(well_spread(&y.iter().map(|v| 10.0 * v).collect::<Vec<_>>()));
        let design = DesignMatrix::intercept_only(y.len());
        let fit = fit_beta(&design, &y).unwrap();
        let mu = fit.fitted[0];
        let score: f64 = y
            .iter()
            .map(|&v| {
                let p = ResidualParts::new(v, mu, fit.phi).unwrap();
                p.y_star - p.mu_star
            })
            .sum();
        prop_assert!(score.abs() <= 1e-8, "score {score}");
    }

    #[test]
    fn beta_gradient_vanishes_at_optimum(
        x in prop::collection::vec(-1.0..1.0f64, 20..40),
        noise in prop::collection::vec(-0.8..0.8f64, 40),
    ) {
        prop_assume!(well_spread(&x.iter().map(|v| 10.0 * v).collect::<Vec<_>>()));
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, e)| 1.0 / (1.0 + (-(0.5 * a + e)).exp())).collect();
        let design = DesignMatrix::from_columns(&["x"], &[x.clone()]).unwrap();
        let fit = fit_beta(&design, &y).unwrap();
        prop_assert!(fit.gradient_norm < 1e-6, "gradient {}", fit.gradient_norm);
        prop_assert!(fit.std_residuals.iter().all(|r| r.is_finite()));
    }
}

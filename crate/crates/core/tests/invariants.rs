use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

use lgocv::covariance::eta_covariance;
use lgocv::engine::{leave_group_moments, RankPath};
use lgocv::groups::GroupSpec;
use lgocv::oracle::{refit_lgocv, HyperMode};
use lgocv::{
    compute_lgocv, find_mode, fit_fixed, ComponentKind, EngineConfig, LatentComponent, LgmModel, LgmModelBuilder,
    LikelihoodFamily, ModeConfig, Term, Transform,
};

#[derive(Debug, Clone)]
struct Case {
    ys: Vec<f64>,
    classes: usize,
    tau: f64,
    obs_prec: f64,
    poisson: bool,
    target: usize,
    extra: Vec<usize>,
}

fn case() -> impl Strategy<Value = Case> {
    (6usize..14, 2usize..5, 0.3f64..4.0, 0.5f64..20.0, any::<bool>())
        .prop_flat_map(|(n, classes, tau, obs_prec, poisson)| {
            (
                proptest::collection::vec(-2.0f64..4.0, n),
                0..n,
                proptest::collection::vec(0..n, 0..4),
                Just((classes, tau, obs_prec, poisson)),
            )
        })
        .prop_map(|(ys, target, extra, (classes, tau, obs_prec, poisson))| Case {
            ys,
            classes,
            tau,
            obs_prec,
            poisson,
            target,
            extra,
        })
}

fn build(c: &Case) -> LgmModel {
    let mut b = LgmModelBuilder::new();
    let t = b.fixed_hyper("tau", Transform::Log, c.tau).unwrap();
    let o = b.fixed_hyper("obs", Transform::Log, c.obs_prec).unwrap();
    let mu = b.component(LatentComponent::new("mu", ComponentKind::Fixed { precision: 0.01 }, 1));
    let s = b.component(LatentComponent::new("s", ComponentKind::Iid { log_precision: t }, c.classes));
    for (i, &y) in c.ys.iter().enumerate() {
        let (y, fam) = if c.poisson {
            (y.abs().round(), LikelihoodFamily::Poisson { offset: 1.0 })
        } else {
            (y, LikelihoodFamily::Gaussian { log_precision: o })
        };
        b.observation(y, fam, vec![Term::new(mu, 0, 1.0), Term::new(s, i % c.classes, 1.0)]);
    }
    b.build().unwrap()
}

fn group(c: &Case) -> Vec<usize> {
    let mut g = c.extra.clone();
    g.push(c.target);
    g.sort_unstable();
    g.dedup();
    g
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gaussian_leave_group_out_is_exact(c in case()) {
        prop_assume!(!c.poisson);
        let model = build(&c);
        let point = model.hyper_point(&[]).unwrap();
        let fit = fit_fixed(&model, &point, &ModeConfig::default()).unwrap();
        let g = group(&c);
        let mut groups = GroupSpec::singletons(model.n_observations(), &[]);
        groups.groups.insert(c.target, g);
        let engine = compute_lgocv(&model, &fit, &groups, Some(&[c.target]), &EngineConfig::default()).unwrap();
        let oracle = refit_lgocv(&model, &groups, &[c.target], &HyperMode::Fixed(point)).unwrap()[0];
        let got = engine.scores[0].log_score;
        prop_assert!((got.exp() - oracle.exp()).abs() <= 1e-8 * oracle.exp(), "{} vs {}", got, oracle);
    }

    #[test]
    fn removing_data_never_shrinks_covariance(c in case()) {
        let model = build(&c);
        let approx = find_mode(&model, &model.hyper_point(&[]).unwrap(), &ModeConfig::default()).unwrap();
        let g = group(&c);
        let before = eta_covariance(&model, &approx, &g).unwrap();
        let (_, after) = leave_group_moments(&model, &approx, &g, &EngineConfig::default()).unwrap();
        let diff = &after.cov - &before.cov;
        let min_eig = SymmetricEigen::new(0.5 * (&diff + diff.transpose())).eigenvalues.min();
        prop_assert!(min_eig >= -1e-10 * before.cov.amax(), "min eigenvalue {}", min_eig);
        for k in 0..g.len() {
            prop_assert!(after.cov[(k, k)] >= before.cov[(k, k)] * (1.0 - 1e-12));
        }
    }

    #[test]
    fn readding_the_group_restores_moments(c in case()) {
        let model = build(&c);
        let approx = find_mode(&model, &model.hyper_point(&[]).unwrap(), &ModeConfig::default()).unwrap();
        let g = group(&c);
        let (before, after) = leave_group_moments(&model, &approx, &g, &EngineConfig::default()).unwrap();
        prop_assume!(after.path == RankPath::FullRank);
        let curv = DVector::from_iterator(g.len(), g.iter().map(|&j| approx.curvature[j]));
        let lin = DVector::from_iterator(g.len(), g.iter().map(|&j| approx.linear[j]));
        let q_minus = after.cov.clone().cholesky().unwrap().inverse();
        let q = &q_minus + DMatrix::from_diagonal(&curv);
        let cov = q.clone().cholesky().unwrap().inverse();
        let mean = &cov * (&q_minus * &after.mean + lin);
        let scale = before.cov.amax().max(1.0);
        prop_assert!((&cov - &before.cov).amax() <= 1e-10 * scale, "cov gap {}", (&cov - &before.cov).amax());
        prop_assert!((&mean - &before.mean).amax() <= 1e-10 * before.mean.amax().max(1.0));
    }

    #[test]
    fn results_are_deterministic(c in case()) {
        let model = build(&c);
        let fit = fit_fixed(&model, &model.hyper_point(&[]).unwrap(), &ModeConfig::default()).unwrap();
        let mut groups = GroupSpec::singletons(model.n_observations(), &(0..model.n_observations()).collect::<Vec<_>>());
        groups.groups.insert(c.target, group(&c));
        let a = compute_lgocv(&model, &fit, &groups, None, &EngineConfig::default()).unwrap();
        let b = compute_lgocv(&model, &fit, &groups, None, &EngineConfig::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}

//! Latent Gaussian model definition.
//!
//! An [`LgmModel`] bundles the latent components (assembled block-diagonally
//! into the prior precision), the sparse design matrix mapping latent effects
//! to linear predictors, one likelihood per observation, linear constraints
//! `C f = e`, and the hyperparameter table with its priors.

use nalgebra::{DMatrix, DVector};

use crate::component::LatentComponent;
use crate::error::{LgocvError, Result};
use crate::likelihood::{LikelihoodFamily, LogLikTerms};
use crate::sparse::{CsrMatrix, SymmetricMatrix};

/// Map between the internal (unconstrained) and natural scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// Precision parameters: natural = exp(internal).
    Log,
    /// Correlation parameters: natural = tanh(internal).
    Atanh,
}

impl Transform {
    pub fn to_natural(self, internal: f64) -> f64 {
        match self {
            Transform::Log => internal.exp(),
            Transform::Atanh => internal.tanh(),
        }
    }

    pub fn to_internal(self, natural: f64) -> Result<f64> {
        let v = match self {
            Transform::Log if natural > 0.0 => natural.ln(),
            Transform::Atanh if natural.abs() < 1.0 => natural.atanh(),
            _ => {
                return Err(LgocvError::InvalidHyper(format!(
                    "value {natural} outside the domain of the {self:?} transform"
                )))
            }
        };
        Ok(v)
    }
}

/// Prior on the internal scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HyperPrior {
    /// Gaussian with the given mean and precision.
    Normal {
        mean: f64,
        precision: f64,
    },
    Flat,
}

impl Default for HyperPrior {
    fn default() -> Self {
        HyperPrior::Normal { mean: 0.0, precision: 1e-4 }
    }
}

impl HyperPrior {
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            HyperPrior::Normal { mean, precision } => {
                0.5 * (precision.ln() - (2.0 * std::f64::consts::PI).ln()) - 0.5 * precision * (x - mean).powi(2)
            }
            HyperPrior::Flat => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameter {
    pub name: String,
    pub transform: Transform,
    /// Internal-scale value: the fixed value, or the optimizer's start.
    pub initial: f64,
    pub fixed: bool,
    pub prior: HyperPrior,
}

/// A configuration of the free hyperparameters on the internal scale.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPoint {
    pub theta: Vec<f64>,
    pub log_prior: f64,
}

/// Linear constraints `C f = e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl Constraints {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }
}

/// A term `coef * f[component][index]` in a linear predictor or constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub component: usize,
    pub index: usize,
    pub coef: f64,
}

impl Term {
    pub fn new(component: usize, index: usize, coef: f64) -> Self {
        Self { component, index, coef }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub family: LikelihoodFamily,
}

#[derive(Debug, Clone, Default)]
pub struct LgmModelBuilder {
    hypers: Vec<Hyperparameter>,
    components: Vec<LatentComponent>,
    observations: Vec<(Observation, Vec<Term>)>,
    constraints: Vec<(Vec<Term>, f64)>,
}

impl LgmModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a free hyperparameter; `initial` is on the internal scale.
    pub fn free_hyper(
        &mut self,
        name: impl Into<String>,
        transform: Transform,
        initial: f64,
        prior: HyperPrior,
    ) -> usize {
        self.hypers.push(Hyperparameter { name: name.into(), transform, initial, fixed: false, prior });
        self.hypers.len() - 1
    }

    /// Adds a hyperparameter fixed at `natural` (natural scale).
    pub fn fixed_hyper(&mut self, name: impl Into<String>, transform: Transform, natural: f64) -> Result<usize> {
        let initial = transform.to_internal(natural)?;
        self.hypers.push(Hyperparameter {
            name: name.into(),
            transform,
            initial,
            fixed: true,
            prior: HyperPrior::Flat,
        });
        Ok(self.hypers.len() - 1)
    }

    pub fn hyper(&mut self, h: Hyperparameter) -> usize {
        self.hypers.push(h);
        self.hypers.len() - 1
    }

    pub fn component(&mut self, c: LatentComponent) -> usize {
        self.components.push(c);
        self.components.len() - 1
    }

    pub fn observation(&mut self, y: f64, family: LikelihoodFamily, terms: Vec<Term>) {
        self.observations.push((Observation { y, family }, terms));
    }

    /// Adds a constraint row `Σ coef f = value`.
    pub fn constraint(&mut self, terms: Vec<Term>, value: f64) {
        self.constraints.push((terms, value));
    }

    pub fn build(self) -> Result<LgmModel> {
        let invalid = |m: String| LgocvError::InvalidModel(m);
        if self.components.is_empty() {
            return Err(invalid("model has no latent components".into()));
        }
        if self.observations.is_empty() {
            return Err(invalid("model has no observations".into()));
        }
        for c in &self.components {
            c.validate()?;
        }
        let nh = self.hypers.len();
        let check_hyper = |idx: usize, want: Transform, what: &str| -> Result<()> {
            match self.hypers.get(idx) {
                Some(h) if h.transform == want => Ok(()),
                Some(h) => {
                    Err(invalid(format!("hyperparameter `{}` used as {what} must use the {want:?} transform", h.name)))
                }
                None => Err(invalid(format!("hyperparameter index {idx} out of range ({nh})"))),
            }
        };
        for c in &self.components {
            if let Some(lp) = c.log_precision_index() {
                check_hyper(lp, Transform::Log, "a precision")?;
            }
            if let crate::component::ComponentKind::Ar1 { rho, .. } = c.kind {
                check_hyper(rho, Transform::Atanh, "a correlation")?;
            }
        }

        let mut offsets = Vec::with_capacity(self.components.len());
        let mut latent = 0;
        for c in &self.components {
            offsets.push(latent);
            latent += c.size;
        }
        let resolve = |t: &Term, ctx: &str| -> Result<usize> {
            let c = self
                .components
                .get(t.component)
                .ok_or_else(|| invalid(format!("{ctx}: unknown component index {}", t.component)))?;
            if t.index >= c.size {
                return Err(invalid(format!(
                    "{ctx}: index {} out of range for component `{}` of size {}",
                    t.index, c.name, c.size
                )));
            }
            Ok(offsets[t.component] + t.index)
        };

        let mut triplets = Vec::new();
        let mut observations = Vec::with_capacity(self.observations.len());
        for (i, (obs, terms)) in self.observations.into_iter().enumerate() {
            if let LikelihoodFamily::Gaussian { log_precision } = obs.family {
                check_hyper(log_precision, Transform::Log, "an observation precision")?;
            }
            obs.family.check(i, obs.y)?;
            let ctx = format!("observation {i}");
            let mut any = false;
            for t in &terms {
                if !t.coef.is_finite() {
                    return Err(invalid(format!("{ctx}: non-finite design coefficient")));
                }
                triplets.push((i, resolve(t, &ctx)?, t.coef));
                any |= t.coef != 0.0;
            }
            if !any {
                return Err(invalid(format!("{ctx}: linear predictor has no nonzero design entry")));
            }
            observations.push(obs);
        }
        let n = observations.len();
        let design = CsrMatrix::from_triplets(n, latent, &triplets);

        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for (ci, c) in self.components.iter().enumerate() {
            for set in c.sum_to_zero_sets() {
                let mut row = vec![0.0; latent];
                for i in set {
                    row[offsets[ci] + i] = 1.0;
                }
                rows.push((row, 0.0));
            }
        }
        for (k, (terms, value)) in self.constraints.iter().enumerate() {
            let mut row = vec![0.0; latent];
            for t in terms {
                row[resolve(t, &format!("constraint {k}"))?] += t.coef;
            }
            rows.push((row, *value));
        }
        let k = rows.len();
        let mut matrix = DMatrix::zeros(k, latent);
        let mut rhs = DVector::zeros(k);
        for (r, (row, value)) in rows.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                matrix[(r, j)] = v;
            }
            rhs[r] = value;
        }
        if k > 0 {
            if k > latent {
                return Err(LgocvError::RankDeficientConstraints);
            }
            let sv = matrix.clone().svd(false, false).singular_values;
            let max = sv.max();
            if sv.iter().any(|&s| s <= 1e-10 * max) {
                return Err(LgocvError::RankDeficientConstraints);
            }
        }

        let free = (0..nh).filter(|&i| !self.hypers[i].fixed).collect();
        Ok(LgmModel {
            components: self.components,
            offsets,
            latent_size: latent,
            design,
            observations,
            active: vec![true; n],
            constraints: Constraints { matrix, rhs },
            hypers: self.hypers,
            free,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LgmModel {
    components: Vec<LatentComponent>,
    offsets: Vec<usize>,
    latent_size: usize,
    design: CsrMatrix,
    observations: Vec<Observation>,
    active: Vec<bool>,
    constraints: Constraints,
    hypers: Vec<Hyperparameter>,
    free: Vec<usize>,
}

impl LgmModel {
    pub fn n_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn latent_size(&self) -> usize {
        self.latent_size
    }

    pub fn components(&self) -> &[LatentComponent] {
        &self.components
    }

    /// Column offset of component `c` in the latent vector.
    pub fn offset(&self, c: usize) -> usize {
        self.offsets[c]
    }

    pub fn component_index(&self, name: &str) -> Option<usize> {
        self.components.iter().position(|c| c.name == name)
    }

    pub fn design(&self) -> &CsrMatrix {
        &self.design
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn constraints(&self) -> &Constraints {
        &self.constraints
    }

    pub fn hyperparameters(&self) -> &[Hyperparameter] {
        &self.hypers
    }

    /// Indices (into the hyperparameter table) of the free hyperparameters.
    pub fn free_hyperparameters(&self) -> &[usize] {
        &self.free
    }

    pub fn theta_dim(&self) -> usize {
        self.free.len()
    }

    /// Whether observation `i` contributes its likelihood.
    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    /// A copy in which the listed observations carry no likelihood
    /// information. Indices, design rows and responses are unchanged.
    pub fn with_observations_removed(&self, removed: &[usize]) -> Result<LgmModel> {
        let mut m = self.clone();
        for &i in removed {
            if i >= m.active.len() {
                return Err(LgocvError::IndexOutOfRange { index: i, n: m.active.len() });
            }
            m.active[i] = false;
        }
        Ok(m)
    }

    /// Keeps only the listed observations active.
    pub fn with_active_set(&self, keep: &[usize]) -> Result<LgmModel> {
        let mut m = self.clone();
        m.active.iter_mut().for_each(|a| *a = false);
        for &i in keep {
            if i >= m.active.len() {
                return Err(LgocvError::IndexOutOfRange { index: i, n: m.active.len() });
            }
            m.active[i] = true;
        }
        Ok(m)
    }

    /// Starting point of the hyperparameter search.
    pub fn initial_point(&self) -> HyperPoint {
        let theta: Vec<f64> = self.free.iter().map(|&i| self.hypers[i].initial).collect();
        self.hyper_point(&theta).expect("initial values are finite by construction")
    }

    pub fn hyper_point(&self, theta: &[f64]) -> Result<HyperPoint> {
        if theta.len() != self.free.len() {
            return Err(LgocvError::InvalidHyper(format!(
                "expected {} free hyperparameters, got {}",
                self.free.len(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(LgocvError::InvalidHyper("non-finite hyperparameter value".into()));
        }
        let log_prior = self.free.iter().zip(theta).map(|(&i, &v)| self.hypers[i].prior.log_density(v)).sum();
        Ok(HyperPoint { theta: theta.to_vec(), log_prior })
    }

    /// Full internal-scale hyperparameter vector for a point.
    pub fn hyper_values(&self, point: &HyperPoint) -> Vec<f64> {
        let mut v: Vec<f64> = self.hypers.iter().map(|h| h.initial).collect();
        for (&i, &t) in self.free.iter().zip(&point.theta) {
            v[i] = t;
        }
        v
    }

    /// Natural-scale values of every hyperparameter at `point`.
    pub fn natural_values(&self, point: &HyperPoint) -> Vec<(String, f64)> {
        self.hyper_values(point)
            .into_iter()
            .zip(&self.hypers)
            .map(|(v, h)| (h.name.clone(), h.transform.to_natural(v)))
            .collect()
    }

    /// Block-diagonal prior precision `P_f(θ)`.
    pub fn assemble_prior_precision(&self, point: &HyperPoint) -> Result<SymmetricMatrix> {
        self.prior_precision_from_values(&self.hyper_values(point))
    }

    pub(crate) fn prior_precision_from_values(&self, hypers: &[f64]) -> Result<SymmetricMatrix> {
        let mut entries = Vec::new();
        for (c, &off) in self.components.iter().zip(&self.offsets) {
            c.precision_entries(hypers, off, &mut entries)?;
        }
        Ok(SymmetricMatrix::from_triplets(self.latent_size, &entries))
    }

    /// Prior precision with every intrinsic block replaced by the identity.
    pub(crate) fn proper_prior_precision(&self, hypers: &[f64]) -> Result<SymmetricMatrix> {
        let mut entries = Vec::new();
        for (c, &off) in self.components.iter().zip(&self.offsets) {
            if c.is_intrinsic() {
                entries.extend((0..c.size).map(|i| (off + i, off + i, 1.0)));
            } else {
                c.precision_entries(hypers, off, &mut entries)?;
            }
        }
        Ok(SymmetricMatrix::from_triplets(self.latent_size, &entries))
    }

    /// Value, gradient and curvature of every `g_i(η_i)`. Inactive
    /// observations report zeros.
    pub fn log_likelihood_derivatives(&self, point: &HyperPoint, eta: &[f64]) -> Result<Vec<LogLikTerms>> {
        if eta.len() != self.n_observations() {
            return Err(LgocvError::InvalidHyper(format!(
                "expected {} linear predictors, got {}",
                self.n_observations(),
                eta.len()
            )));
        }
        if eta.iter().any(|e| !e.is_finite()) {
            return Err(LgocvError::NonFinite("linear predictor".into()));
        }
        Ok(self.loglik_terms(&self.hyper_values(point), eta))
    }

    pub(crate) fn loglik_terms(&self, hypers: &[f64], eta: &[f64]) -> Vec<LogLikTerms> {
        self.observations
            .iter()
            .zip(eta)
            .zip(&self.active)
            .map(
                |((o, &e), &active)| {
                    if active {
                        o.family.terms(o.y, e, hypers)
                    } else {
                        LogLikTerms { value: 0.0, grad: 0.0, hess: 0.0 }
                    }
                },
            )
            .collect()
    }

    /// `log π(y_i | η_i, θ)` regardless of whether observation `i` is active.
    pub fn observation_log_density(&self, i: usize, eta: f64, hypers: &[f64]) -> f64 {
        let o = &self.observations[i];
        o.family.log_density(o.y, eta, hypers)
    }

    pub(crate) fn observation_terms(&self, i: usize, eta: f64, hypers: &[f64]) -> LogLikTerms {
        let o = &self.observations[i];
        o.family.terms(o.y, eta, hypers)
    }

    /// Latent indices belonging to the listed components.
    pub fn component_columns(&self, comps: &[usize]) -> Vec<usize> {
        let mut cols = Vec::new();
        for &c in comps {
            cols.extend(self.offsets[c]..self.offsets[c] + self.components[c].size);
        }
        cols.sort_unstable();
        cols
    }

    /// Component owning latent column `j`.
    pub fn component_of(&self, j: usize) -> usize {
        match self.offsets.binary_search(&j) {
            Ok(c) => {
                // zero-sized components are rejected, so offsets are strictly increasing
                c
            }
            Err(c) => c - 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::component::ComponentKind;

    fn iid_model(size: usize) -> LgmModel {
        let mut b = LgmModelBuilder::new();
        let tau = b.free_hyper("tau", Transform::Log, 0.0, HyperPrior::default());
        let obs = b.fixed_hyper("obs", Transform::Log, 1.0).unwrap();
        let c = b.component(LatentComponent::new("x", ComponentKind::Iid { log_precision: tau }, size));
        for i in 0..size {
            b.observation(0.0, LikelihoodFamily::Gaussian { log_precision: obs }, vec![Term::new(c, i, 1.0)]);
        }
        b.build().unwrap()
    }

    #[test]
    fn iid_unit_precision_is_identity() {
        let m = iid_model(3);
        let p = m.assemble_prior_precision(&m.hyper_point(&[0.0]).unwrap()).unwrap();
        assert_eq!(p.to_dense(), DMatrix::identity(3, 3));
    }

    #[test]
    fn pattern_independent_of_theta() {
        let mut b = LgmModelBuilder::new();
        let tau = b.free_hyper("tau", Transform::Log, 0.0, HyperPrior::default());
        let rho = b.free_hyper("rho", Transform::Atanh, 0.0, HyperPrior::default());
        let obs = b.fixed_hyper("obs", Transform::Log, 1.0).unwrap();
        let c = b.component(LatentComponent::new("u", ComponentKind::Ar1 { log_precision: tau, rho }, 5));
        for i in 0..5 {
            b.observation(1.0, LikelihoodFamily::Gaussian { log_precision: obs }, vec![Term::new(c, i, 1.0)]);
        }
        let m = b.build().unwrap();
        let a = m.assemble_prior_precision(&m.hyper_point(&[0.0, 0.0]).unwrap()).unwrap();
        let z = m.assemble_prior_precision(&m.hyper_point(&[1.3, 0.8]).unwrap()).unwrap();
        assert!(a.same_pattern(&z));
    }

    #[test]
    fn sum_to_zero_registered_per_connected_block() {
        let graph = crate::component::Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let mut b = LgmModelBuilder::new();
        let tau = b.free_hyper("tau", Transform::Log, 0.0, HyperPrior::default());
        let c = b.component(LatentComponent::new("r", ComponentKind::Besag { log_precision: tau, graph }, 4));
        for i in 0..4 {
            b.observation(1.0, LikelihoodFamily::Poisson { offset: 1.0 }, vec![Term::new(c, i, 1.0)]);
        }
        let m = b.build().unwrap();
        assert_eq!(m.constraints().len(), 2);
        assert_eq!(m.constraints().matrix.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut b = LgmModelBuilder::new();
        let c = b.component(LatentComponent::new("b", ComponentKind::Fixed { precision: 1e-4 }, 1));
        b.observation(-1.0, LikelihoodFamily::Poisson { offset: 1.0 }, vec![Term::new(c, 0, 1.0)]);
        assert!(matches!(b.build(), Err(LgocvError::OutOfSupport { .. })));

        let mut b = LgmModelBuilder::new();
        let c = b.component(LatentComponent::new("b", ComponentKind::Fixed { precision: 1e-4 }, 1));
        b.observation(1.0, LikelihoodFamily::Poisson { offset: 1.0 }, vec![Term::new(c, 0, 0.0)]);
        assert!(b.build().is_err());

        let mut b = LgmModelBuilder::new();
        let c = b.component(LatentComponent::new("b", ComponentKind::Fixed { precision: 1e-4 }, 2));
        b.observation(1.0, LikelihoodFamily::Poisson { offset: 1.0 }, vec![Term::new(c, 0, 1.0)]);
        b.constraint(vec![Term::new(c, 0, 1.0)], 0.0);
        b.constraint(vec![Term::new(c, 0, 2.0)], 0.0);
        assert_eq!(b.build().unwrap_err(), LgocvError::RankDeficientConstraints);
    }

    #[test]
    fn hyper_point_prior_and_values() {
        let m = iid_model(2);
        let p = m.hyper_point(&[1.5]).unwrap();
        let expected = 0.5 * (1e-4f64.ln() - (2.0 * std::f64::consts::PI).ln()) - 0.5e-4 * 2.25;
        assert!((p.log_prior - expected).abs() < 1e-14);
        assert_eq!(m.hyper_values(&p), vec![1.5, 0.0]);
        assert!(m.hyper_point(&[f64::NAN]).is_err());
        assert!(m.hyper_point(&[]).is_err());
    }

    #[test]
    fn removed_observations_have_no_likelihood() {
        let m = iid_model(3).with_observations_removed(&[1]).unwrap();
        let p = m.hyper_point(&[0.0]).unwrap();
        let t = m.log_likelihood_derivatives(&p, &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(t[1].hess, 0.0);
        assert!(t[0].hess < 0.0);
        assert!(iid_model(3).with_observations_removed(&[3]).is_err());
    }
}

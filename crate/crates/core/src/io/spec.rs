//! Declarative model specification.
//!
//! ```text
//! [likelihood]
//! family = gaussian          # gaussian | poisson | binomial | exponential
//! response = y
//! precision = 100            # gaussian: number (fixed) or hyperparameter name
//!
//! [hyper tau_s]
//! prior = normal 0 1e-4      # on the internal scale; or `flat`
//! initial = 0                # internal-scale starting value
//!
//! [component intercept]
//! kind = fixed
//! covariates = 1             # `1` is the constant column
//!
//! [component s]
//! kind = iid                 # iid | ar1 | rw1 | rw2 | besag
//! index = class              # data column of 0-based indices
//! precision = tau_s
//!
//! [constraint]
//! terms = s:0 1, s:1 1
//! value = 0
//! ```

use std::collections::BTreeMap;

use crate::component::{ComponentKind, Graph, LatentComponent};
use crate::error::{LgocvError, Result};
use crate::io::data::DataTable;
use crate::likelihood::LikelihoodFamily;
use crate::model::{HyperPrior, Hyperparameter, LgmModel, LgmModelBuilder, Term, Transform};

/// A hyperparameter given by name or fixed at a natural-scale number.
#[derive(Debug, Clone, PartialEq)]
pub enum HyperRef {
    Fixed(f64),
    Named(String),
}

/// A per-observation quantity: a constant or a data column.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueRef {
    Number(f64),
    Column(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodSpec {
    pub family: String,
    pub response: String,
    pub precision: Option<HyperRef>,
    pub offset: Option<ValueRef>,
    pub trials: Option<ValueRef>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct HyperSpec {
    name: String,
    transform: Option<Transform>,
    initial: Option<f64>,
    value: Option<f64>,
    prior: Option<HyperPrior>,
    line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpec {
    pub name: String,
    pub kind: String,
    pub size: Option<usize>,
    pub index: Option<String>,
    pub weight: Option<String>,
    pub covariates: Vec<String>,
    pub precision: Option<HyperRef>,
    pub rho: Option<HyperRef>,
    pub cyclic: bool,
    pub graph: Option<String>,
    pub constraint: bool,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct ConstraintSpec {
    terms: Vec<(String, usize, f64)>,
    value: f64,
    line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub likelihood: LikelihoodSpec,
    pub components: Vec<ComponentSpec>,
    hypers: Vec<HyperSpec>,
    constraints: Vec<ConstraintSpec>,
}

enum Section {
    None,
    Likelihood,
    Hyper(usize),
    Component(usize),
    Constraint(usize),
}

const FAMILIES: [&str; 4] = ["gaussian", "poisson", "binomial", "exponential"];
const KINDS: [&str; 6] = ["fixed", "iid", "ar1", "rw1", "rw2", "besag"];

fn perr(line: usize, message: impl Into<String>) -> LgocvError {
    LgocvError::Parse { line, message: message.into() }
}

fn number(line: usize, v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| perr(line, format!("`{v}` is not a number")))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(perr(line, format!("`{v}` is not finite")))
    }
}

fn hyper_ref(v: &str) -> HyperRef {
    match v.parse::<f64>() {
        Ok(x) => HyperRef::Fixed(x),
        Err(_) => HyperRef::Named(v.to_owned()),
    }
}

fn value_ref(v: &str) -> ValueRef {
    match v.parse::<f64>() {
        Ok(x) => ValueRef::Number(x),
        Err(_) => ValueRef::Column(v.to_owned()),
    }
}

fn boolean(line: usize, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(perr(line, format!("`{v}` is not a boolean"))),
    }
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.' || c == '-')
}

impl ModelSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut likelihood: Option<LikelihoodSpec> = None;
        let mut hypers: Vec<HyperSpec> = Vec::new();
        let mut components: Vec<ComponentSpec> = Vec::new();
        let mut constraints: Vec<ConstraintSpec> = Vec::new();
        let mut section = Section::None;

        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(inner) = body.strip_prefix('[') {
                let inner = inner.strip_suffix(']').ok_or_else(|| perr(line, "unterminated section header"))?;
                let mut parts = inner.split_whitespace();
                let head = parts.next().unwrap_or("");
                let name = parts.next();
                if parts.next().is_some() {
                    return Err(perr(line, "section header has too many words"));
                }
                let named = |what: &str| -> Result<String> {
                    match name {
                        Some(n) if is_identifier(n) => Ok(n.to_owned()),
                        Some(n) => Err(perr(line, format!("invalid {what} name `{n}`"))),
                        None => Err(perr(line, format!("[{what}] needs a name"))),
                    }
                };
                section = match head {
                    "likelihood" => {
                        if likelihood.is_some() {
                            return Err(perr(line, "duplicate [likelihood] section"));
                        }
                        likelihood = Some(LikelihoodSpec {
                            family: String::new(),
                            response: String::new(),
                            precision: None,
                            offset: None,
                            trials: None,
                            line,
                        });
                        Section::Likelihood
                    }
                    "hyper" => {
                        let name = named("hyper")?;
                        if hypers.iter().any(|h| h.name == name) {
                            return Err(perr(line, format!("duplicate hyperparameter `{name}`")));
                        }
                        hypers.push(HyperSpec { name, transform: None, initial: None, value: None, prior: None, line });
                        Section::Hyper(hypers.len() - 1)
                    }
                    "component" => {
                        let name = named("component")?;
                        if components.iter().any(|c| c.name == name) {
                            return Err(perr(line, format!("duplicate component `{name}`")));
                        }
                        components.push(ComponentSpec {
                            name,
                            kind: String::new(),
                            size: None,
                            index: None,
                            weight: None,
                            covariates: Vec::new(),
                            precision: None,
                            rho: None,
                            cyclic: false,
                            graph: None,
                            constraint: true,
                            line,
                        });
                        Section::Component(components.len() - 1)
                    }
                    "constraint" => {
                        constraints.push(ConstraintSpec { terms: Vec::new(), value: 0.0, line });
                        Section::Constraint(constraints.len() - 1)
                    }
                    other => return Err(perr(line, format!("unknown section `[{other}]`"))),
                };
                continue;
            }

            let (key, value) = body.split_once('=').ok_or_else(|| perr(line, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if value.is_empty() {
                return Err(perr(line, format!("`{key}` has no value")));
            }
            let unknown = || perr(line, format!("unknown key `{key}` in this section"));
            match section {
                Section::None => return Err(perr(line, "key outside of any section")),
                Section::Likelihood => {
                    let l = likelihood.as_mut().expect("section open");
                    match key {
                        "family" if FAMILIES.contains(&value) => l.family = value.to_owned(),
                        "family" => {
                            return Err(perr(
                                line,
                                format!("unknown family `{value}` (expected one of {})", FAMILIES.join(", ")),
                            ))
                        }
                        "response" => l.response = value.to_owned(),
                        "precision" => l.precision = Some(hyper_ref(value)),
                        "offset" => l.offset = Some(value_ref(value)),
                        "trials" => l.trials = Some(value_ref(value)),
                        _ => return Err(unknown()),
                    }
                }
                Section::Hyper(k) => {
                    let h = &mut hypers[k];
                    match key {
                        "transform" => {
                            h.transform = Some(match value {
                                "log" => Transform::Log,
                                "atanh" => Transform::Atanh,
                                _ => return Err(perr(line, format!("unknown transform `{value}`"))),
                            })
                        }
                        "initial" => h.initial = Some(number(line, value)?),
                        "value" => h.value = Some(number(line, value)?),
                        "prior" => {
                            let toks: Vec<&str> = value.split_whitespace().collect();
                            h.prior = Some(match toks.as_slice() {
                                ["flat"] => HyperPrior::Flat,
                                ["normal", mean, prec] => {
                                    let precision = number(line, prec)?;
                                    if precision <= 0.0 {
                                        return Err(perr(line, "prior precision must be positive"));
                                    }
                                    HyperPrior::Normal { mean: number(line, mean)?, precision }
                                }
                                _ => return Err(perr(line, "prior must be `flat` or `normal MEAN PRECISION`")),
                            })
                        }
                        _ => return Err(unknown()),
                    }
                }
                Section::Component(k) => {
                    let c = &mut components[k];
                    match key {
                        "kind" if KINDS.contains(&value) => c.kind = value.to_owned(),
                        "kind" => {
                            return Err(perr(
                                line,
                                format!("unknown kind `{value}` (expected one of {})", KINDS.join(", ")),
                            ))
                        }
                        "size" => {
                            c.size = Some(value.parse().map_err(|_| perr(line, format!("`{value}` is not a size")))?)
                        }
                        "index" => c.index = Some(value.to_owned()),
                        "weight" => c.weight = Some(value.to_owned()),
                        "covariates" => {
                            c.covariates = value
                                .split(|ch: char| ch == ',' || ch.is_whitespace())
                                .filter(|s| !s.is_empty())
                                .map(str::to_owned)
                                .collect()
                        }
                        "precision" => c.precision = Some(hyper_ref(value)),
                        "rho" => c.rho = Some(hyper_ref(value)),
                        "cyclic" => c.cyclic = boolean(line, value)?,
                        "graph" => c.graph = Some(value.to_owned()),
                        "constraint" => c.constraint = boolean(line, value)?,
                        _ => return Err(unknown()),
                    }
                }
                Section::Constraint(k) => {
                    let c = &mut constraints[k];
                    match key {
                        "value" => c.value = number(line, value)?,
                        "terms" => {
                            for term in value.split(',') {
                                let toks: Vec<&str> = term.split_whitespace().collect();
                                let [target, coef] = toks.as_slice() else {
                                    return Err(perr(
                                        line,
                                        format!("constraint term `{}` must be `component:index coef`", term.trim()),
                                    ));
                                };
                                let (comp, idx) = target
                                    .split_once(':')
                                    .ok_or_else(|| perr(line, format!("`{target}` must be `component:index`")))?;
                                let idx: usize =
                                    idx.parse().map_err(|_| perr(line, format!("`{idx}` is not an index")))?;
                                c.terms.push((comp.to_owned(), idx, number(line, coef)?));
                            }
                        }
                        _ => return Err(unknown()),
                    }
                }
            }
        }

        let likelihood = likelihood.ok_or_else(|| perr(text.lines().count().max(1), "missing [likelihood] section"))?;
        if likelihood.family.is_empty() {
            return Err(perr(likelihood.line, "[likelihood] needs `family`"));
        }
        if likelihood.response.is_empty() {
            return Err(perr(likelihood.line, "[likelihood] needs `response`"));
        }
        if components.is_empty() {
            return Err(perr(text.lines().count().max(1), "no [component] sections"));
        }
        for c in &components {
            if c.kind.is_empty() {
                return Err(perr(c.line, format!("component `{}` needs `kind`", c.name)));
            }
        }
        for c in &constraints {
            if c.terms.is_empty() {
                return Err(perr(c.line, "[constraint] needs `terms`"));
            }
        }
        Ok(Self { likelihood, components, hypers, constraints })
    }

    /// Builds the model, reading besag graphs from the texts in `graphs`
    /// (keyed by component name).
    pub fn build(&self, data: &DataTable, graphs: &BTreeMap<String, String>) -> Result<LgmModel> {
        let n = data.nrows();
        let mut hyper_table = HyperTable::new(&self.hypers);
        let mut b = LgmModelBuilder::new();
        let mut comp_ids = BTreeMap::new();
        let mut design: Vec<Vec<Term>> = vec![Vec::new(); n];

        for c in &self.components {
            let cerr = |m: String| perr(c.line, format!("component `{}`: {m}", c.name));
            let id_of_kind = |hyper_table: &mut HyperTable| -> Result<Option<ComponentKind>> {
                let mut precision = || -> Result<usize> {
                    let r = c.precision.clone().unwrap_or_else(|| HyperRef::Named(format!("{}.precision", c.name)));
                    hyper_table.resolve(&r, &format!("{}.precision", c.name), Transform::Log, c.line)
                };
                Ok(Some(match c.kind.as_str() {
                    "fixed" => return Ok(None),
                    "iid" => ComponentKind::Iid { log_precision: precision()? },
                    "ar1" => {
                        let lp = precision()?;
                        let r = c.rho.clone().unwrap_or_else(|| HyperRef::Named(format!("{}.rho", c.name)));
                        let rho = hyper_table.resolve(&r, &format!("{}.rho", c.name), Transform::Atanh, c.line)?;
                        ComponentKind::Ar1 { log_precision: lp, rho }
                    }
                    "rw1" => ComponentKind::Rw1 { log_precision: precision()?, cyclic: c.cyclic },
                    "rw2" => ComponentKind::Rw2 { log_precision: precision()? },
                    "besag" => ComponentKind::Besag { log_precision: precision()?, graph: Graph::from_edges(0, &[])? },
                    other => return Err(cerr(format!("unknown kind `{other}`"))),
                }))
            };
            match id_of_kind(&mut hyper_table)? {
                None => {
                    let covs = if c.covariates.is_empty() { vec!["1".to_owned()] } else { c.covariates.clone() };
                    let precision = match &c.precision {
                        None => 1e-4,
                        Some(HyperRef::Fixed(p)) if *p > 0.0 => *p,
                        Some(_) => return Err(cerr("fixed-effect precision must be a positive number".into())),
                    };
                    let id = b.component(LatentComponent::new(&c.name, ComponentKind::Fixed { precision }, covs.len()));
                    for (k, cov) in covs.iter().enumerate() {
                        let values: Vec<f64> = if cov == "1" {
                            vec![1.0; n]
                        } else {
                            data.column(cov).map_err(|e| cerr(e.to_string()))?.to_vec()
                        };
                        for (i, &v) in values.iter().enumerate() {
                            if v != 0.0 {
                                design[i].push(Term::new(id, k, v));
                            }
                        }
                    }
                    comp_ids.insert(c.name.clone(), id);
                }
                Some(mut kind) => {
                    let col = c.index.as_ref().ok_or_else(|| cerr("needs an `index` column".into()))?;
                    let idx = data.column(col).map_err(|e| cerr(e.to_string()))?;
                    let mut indices = Vec::with_capacity(n);
                    for (i, &v) in idx.iter().enumerate() {
                        if !(v >= 0.0 && v.fract() == 0.0) {
                            return Err(perr(i + 2, format!("column `{col}`: `{v}` is not a 0-based index")));
                        }
                        indices.push(v as usize);
                    }
                    let size = match c.size {
                        Some(s) => s,
                        None => indices.iter().max().map_or(0, |m| m + 1),
                    };
                    if let Some((i, &v)) = indices.iter().enumerate().find(|(_, &v)| v >= size) {
                        return Err(perr(i + 2, format!("column `{col}`: index {v} out of range for size {size}")));
                    }
                    if let ComponentKind::Besag { graph, .. } = &mut kind {
                        let text = graphs.get(&c.name).ok_or_else(|| {
                            cerr("besag component needs a graph (spec `graph` key or --graph)".into())
                        })?;
                        *graph = super::data::read_graph(text, size)?;
                    }
                    let mut comp = LatentComponent::new(&c.name, kind, size);
                    if !c.constraint {
                        comp = comp.without_constraint();
                    }
                    let id = b.component(comp);
                    let weights = match &c.weight {
                        Some(w) => data.column(w).map_err(|e| cerr(e.to_string()))?.to_vec(),
                        None => vec![1.0; n],
                    };
                    for i in 0..n {
                        if weights[i] != 0.0 {
                            design[i].push(Term::new(id, indices[i], weights[i]));
                        }
                    }
                    comp_ids.insert(c.name.clone(), id);
                }
            }
        }

        let l = &self.likelihood;
        let lerr = |m: String| perr(l.line, m);
        let y = data.column(&l.response).map_err(|e| lerr(e.to_string()))?;
        let per_obs = |r: &Option<ValueRef>, default: Option<f64>, what: &str| -> Result<Vec<f64>> {
            match r {
                Some(ValueRef::Number(v)) => Ok(vec![*v; n]),
                Some(ValueRef::Column(c)) => Ok(data.column(c).map_err(|e| lerr(e.to_string()))?.to_vec()),
                None => {
                    default.map(|d| vec![d; n]).ok_or_else(|| lerr(format!("{} likelihood needs `{what}`", l.family)))
                }
            }
        };
        let families: Vec<LikelihoodFamily> = match l.family.as_str() {
            "gaussian" => {
                let r = l.precision.clone().unwrap_or_else(|| HyperRef::Named("obs.precision".into()));
                let lp = hyper_table.resolve(&r, "obs.precision", Transform::Log, l.line)?;
                vec![LikelihoodFamily::Gaussian { log_precision: lp }; n]
            }
            "poisson" => per_obs(&l.offset, Some(1.0), "offset")?
                .into_iter()
                .map(|offset| LikelihoodFamily::Poisson { offset })
                .collect(),
            "binomial" => {
                let trials = per_obs(&l.trials, None, "trials")?;
                let mut out = Vec::with_capacity(n);
                for (i, t) in trials.into_iter().enumerate() {
                    if !(t >= 1.0 && t.fract() == 0.0 && t <= u32::MAX as f64) {
                        return Err(perr(i + 2, format!("trial count `{t}` must be a positive integer")));
                    }
                    out.push(LikelihoodFamily::Binomial { trials: t as u32 });
                }
                out
            }
            "exponential" => vec![LikelihoodFamily::Exponential; n],
            other => return Err(lerr(format!("unknown family `{other}`"))),
        };

        for h in hyper_table.finish()? {
            b.hyper(h);
        }
        for (i, (terms, fam)) in design.into_iter().zip(families).enumerate() {
            b.observation(y[i], fam, terms);
        }
        for c in &self.constraints {
            let mut terms = Vec::new();
            for (comp, idx, coef) in &c.terms {
                let id = comp_ids
                    .get(comp)
                    .ok_or_else(|| perr(c.line, format!("constraint refers to unknown component `{comp}`")))?;
                terms.push(Term::new(*id, *idx, *coef));
            }
            b.constraint(terms, c.value);
        }
        b.build().map_err(|e| match e {
            LgocvError::OutOfSupport { index, y, family } => {
                perr(index + 2, format!("response {y} outside the support of the {family} likelihood"))
            }
            other => other,
        })
    }
}

/// Hyperparameters in order of first use, then any declared but unused.
struct HyperTable<'a> {
    declared: &'a [HyperSpec],
    built: Vec<Hyperparameter>,
    by_name: BTreeMap<String, usize>,
}

impl<'a> HyperTable<'a> {
    fn new(declared: &'a [HyperSpec]) -> Self {
        Self { declared, built: Vec::new(), by_name: BTreeMap::new() }
    }

    fn resolve(&mut self, r: &HyperRef, default_name: &str, transform: Transform, line: usize) -> Result<usize> {
        let name = match r {
            HyperRef::Fixed(v) => {
                let internal = transform.to_internal(*v).map_err(|e| perr(line, e.to_string()))?;
                self.built.push(Hyperparameter {
                    name: default_name.to_owned(),
                    transform,
                    initial: internal,
                    fixed: true,
                    prior: HyperPrior::Flat,
                });
                return Ok(self.built.len() - 1);
            }
            HyperRef::Named(n) => n,
        };
        if let Some(&k) = self.by_name.get(name) {
            if self.built[k].transform != transform {
                return Err(perr(line, format!("hyperparameter `{name}` used with two different transforms")));
            }
            return Ok(k);
        }
        let decl = self.declared.iter().find(|h| &h.name == name);
        let mut h =
            Hyperparameter { name: name.clone(), transform, initial: 0.0, fixed: false, prior: HyperPrior::default() };
        if let Some(d) = decl {
            if let Some(t) = d.transform {
                if t != transform {
                    return Err(perr(d.line, format!("hyperparameter `{name}` declared with the wrong transform")));
                }
            }
            if let Some(p) = d.prior {
                h.prior = p;
            }
            if let Some(v) = d.initial {
                h.initial = v;
            }
            if let Some(v) = d.value {
                h.initial = transform.to_internal(v).map_err(|e| perr(d.line, e.to_string()))?;
                h.fixed = true;
                h.prior = HyperPrior::Flat;
            }
        }
        self.built.push(h);
        self.by_name.insert(name.clone(), self.built.len() - 1);
        Ok(self.built.len() - 1)
    }

    fn finish(self) -> Result<Vec<Hyperparameter>> {
        for d in self.declared {
            if !self.by_name.contains_key(&d.name) {
                return Err(perr(d.line, format!("hyperparameter `{}` is never used", d.name)));
            }
        }
        Ok(self.built)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MULTILEVEL: &str = "
[likelihood]
family = gaussian
response = y
precision = 100

[hyper tau_s]
prior = normal 0 1e-4

[component intercept]
kind = fixed
precision = 1e-4

[component s]
kind = iid
index = class
precision = tau_s
";

    fn data() -> DataTable {
        DataTable::from_reader("y,class\n1.0,0\n2.0,0\n0.5,1\n".as_bytes()).unwrap()
    }

    #[test]
    fn builds_multilevel_model() {
        let spec = ModelSpec::parse(MULTILEVEL).unwrap();
        let m = spec.build(&data(), &BTreeMap::new()).unwrap();
        assert_eq!(m.n_observations(), 3);
        assert_eq!(m.latent_size(), 3);
        assert_eq!(m.hyperparameters().len(), 2);
        assert_eq!(m.theta_dim(), 1);
        assert_eq!(m.hyperparameters()[m.free_hyperparameters()[0]].name, "tau_s");
        assert_eq!(m.design().row(2).0, &[0, 2]);
    }

    #[test]
    fn parse_errors_have_line_numbers() {
        let bad = MULTILEVEL.replace("kind = iid", "kind = iid\nbogus = 1");
        match ModelSpec::parse(&bad) {
            Err(LgocvError::Parse { line, .. }) => assert_eq!(line, 16),
            other => panic!("{other:?}"),
        }
        assert!(matches!(ModelSpec::parse("[likelihood]\nfamily = poisson\n"), Err(LgocvError::Parse { .. })));
        assert!(matches!(ModelSpec::parse("x = 1"), Err(LgocvError::Parse { line: 1, .. })));
        assert!(ModelSpec::parse("[component a b c]").is_err());
        let kind = MULTILEVEL.replace("kind = iid", "kind = banana");
        assert!(matches!(ModelSpec::parse(&kind), Err(LgocvError::Parse { line: 15, .. })));
        let family = "[likelihood]\nresponse = y\nfamily = gamma\n";
        assert!(matches!(ModelSpec::parse(family), Err(LgocvError::Parse { line: 3, .. })));
    }

    #[test]
    fn data_problems_are_reported() {
        let spec = ModelSpec::parse(MULTILEVEL).unwrap();
        let bad = DataTable::from_reader("y,class\n1.0,0\n2.0,0.5\n".as_bytes()).unwrap();
        assert!(matches!(spec.build(&bad, &BTreeMap::new()), Err(LgocvError::Parse { line: 3, .. })));
        let missing = DataTable::from_reader("y,group\n1.0,0\n".as_bytes()).unwrap();
        assert!(spec.build(&missing, &BTreeMap::new()).is_err());
    }

    #[test]
    fn besag_and_constraints() {
        let text = "
[likelihood]
family = poisson
response = y
offset = e
[component r]
kind = besag
index = area
size = 3
[constraint]
terms = r:0 1, r:2 -1
value = 0.5
";
        let spec = ModelSpec::parse(text).unwrap();
        let d = DataTable::from_reader("y,e,area\n1,2,0\n0,1,1\n3,1,2\n".as_bytes()).unwrap();
        assert!(spec.build(&d, &BTreeMap::new()).is_err());
        let graphs = BTreeMap::from([("r".to_owned(), "0 1\n1 2\n".to_owned())]);
        let m = spec.build(&d, &graphs).unwrap();
        assert_eq!(m.constraints().len(), 2);
        assert_eq!(m.constraints().rhs[1], 0.5);
    }
}

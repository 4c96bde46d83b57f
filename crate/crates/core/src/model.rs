//! Lattice, region decomposition and interaction of a finite model.
//!
//! A [`ModelSpec`] is a finite truncation of an infinite lattice split into a
//! small system `S` (region 0) and reservoirs `R_a` (regions `a ≥ 1`), each
//! reservoir carrying an inverse temperature. The interaction is a list of
//! Hermitian terms `Φ(X)`, at most one per support `X`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use faer::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::opalg::{c64, intersects, DenseOperator, Matrix, OpError, SiteId, Volume};

/// Entrywise tolerance under which a term counts as Hermitian.
pub const TERM_HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("site {0} declared twice")]
    DuplicateSite(SiteId),
    #[error("site {site} has local dimension {dim} (must be at least 2)")]
    LocalDim { site: SiteId, dim: usize },
    #[error("unknown site {0}")]
    UnknownSite(SiteId),
    #[error("site {0} is not assigned to any region")]
    UnassignedSite(SiteId),
    #[error("interaction term has an empty support")]
    EmptySupport,
    #[error("support {0:?} lists a site twice")]
    RepeatedSite(Vec<SiteId>),
    #[error("term on {support:?} has dimension {found}, expected {expected}")]
    TermDimension {
        support: Vec<SiteId>,
        expected: usize,
        found: usize,
    },
    #[error("unknown reservoir {0}")]
    UnknownReservoir(Region),
    #[error("new small system misses sites {0:?} of the current one")]
    NotSuperset(Vec<SiteId>),
    #[error("redraw leaves reservoir {0} without sites")]
    ReservoirEmptied(Region),
    #[error(transparent)]
    Op(#[from] OpError),
}

impl From<serde_json::Error> for ModelError {
    fn from(e: serde_json::Error) -> Self {
        ModelError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// Region index: 0 is the small system, `a ≥ 1` the reservoirs.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Region(pub u32);

impl Region {
    pub const SMALL_SYSTEM: Region = Region(0);

    pub fn is_small_system(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SiteSpec {
    pub id: SiteId,
    pub local_dim: usize,
}

/// Assignment of every site to exactly one region.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RegionMap {
    assignment: BTreeMap<SiteId, Region>,
}

impl RegionMap {
    pub fn new<I: IntoIterator<Item = (SiteId, Region)>>(pairs: I) -> Self {
        RegionMap {
            assignment: pairs.into_iter().collect(),
        }
    }

    pub fn region_of(&self, site: SiteId) -> Option<Region> {
        self.assignment.get(&site).copied()
    }

    pub fn sites_in(&self, region: Region) -> Vec<SiteId> {
        self.assignment
            .iter()
            .filter(|&(_, &r)| r == region)
            .map(|(&s, _)| s)
            .collect()
    }

    pub fn small_system(&self) -> Vec<SiteId> {
        self.sites_in(Region::SMALL_SYSTEM)
    }

    /// Reservoir indices present in the map, ascending.
    pub fn reservoirs(&self) -> Vec<Region> {
        let set: BTreeSet<Region> = self
            .assignment
            .values()
            .copied()
            .filter(|r| !r.is_small_system())
            .collect();
        set.into_iter().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SiteId, Region)> + '_ {
        self.assignment.iter().map(|(&s, &r)| (s, r))
    }
}

/// One interaction term `Φ(X)`: a matrix on the tensor space of its
/// support, ordered by ascending site id.
#[derive(Clone, Debug)]
pub struct InteractionTerm {
    operator: DenseOperator,
    hermitian_deviation: f64,
    norm: f64,
}

impl InteractionTerm {
    /// Wraps an operator on its own support. Matrices within
    /// [`TERM_HERMITIAN_TOL`] of Hermitian are symmetrized; larger
    /// deviations are kept verbatim for [`ModelSpec::validate`] to report.
    pub fn new(operator: DenseOperator) -> Result<Self, ModelError> {
        if operator.volume().is_empty() {
            return Err(ModelError::EmptySupport);
        }
        let operator = DenseOperator::new(operator.volume().clone(), operator.into_matrix())?;
        let hermitian_deviation = operator.hermitian_deviation();
        let operator = if hermitian_deviation <= TERM_HERMITIAN_TOL {
            operator.hermitian_part()
        } else {
            operator
        };
        let norm = operator.op_norm();
        Ok(InteractionTerm {
            operator,
            hermitian_deviation,
            norm,
        })
    }

    pub fn support(&self) -> &[SiteId] {
        self.operator.volume().sites()
    }

    pub fn operator(&self) -> &DenseOperator {
        &self.operator
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian_deviation <= TERM_HERMITIAN_TOL
    }

    pub fn hermitian_deviation(&self) -> f64 {
        self.hermitian_deviation
    }

    fn merged(&self, other: &InteractionTerm) -> Result<InteractionTerm, ModelError> {
        InteractionTerm::new(self.operator.add(&other.operator)?)
    }

    /// Same term with its matrix multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> InteractionTerm {
        InteractionTerm {
            operator: self.operator.scale_real(factor),
            hermitian_deviation: self.hermitian_deviation * factor.abs(),
            norm: self.norm * factor.abs(),
        }
    }
}

/// `Σ_n e^{nλ} sup_x Σ_{X∋x, card X = n+1} ‖Φ(X)‖` over a term list, with
/// the sup taken over sites touched by the terms.
pub fn lambda_norm_of(terms: &[InteractionTerm], lambda: f64) -> f64 {
    // per_size[n][x] = Σ_{X∋x, card X = n+1} ‖Φ(X)‖
    let mut per_size: BTreeMap<usize, BTreeMap<SiteId, f64>> = BTreeMap::new();
    for t in terms {
        let n = t.support().len() - 1;
        let row = per_size.entry(n).or_default();
        for &x in t.support() {
            *row.entry(x).or_default() += t.norm();
        }
    }
    per_size
        .iter()
        .map(|(&n, row)| {
            let sup = row.values().fold(0.0f64, |m, &v| m.max(v));
            (n as f64 * lambda).exp() * sup
        })
        .sum()
}

/// A reported problem with a model; see [`ModelSpec::validate`].
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonHermitian { support: Vec<SiteId>, deviation: f64 },
    /// A term couples two reservoirs without touching the small system.
    ReservoirCoupling {
        support: Vec<SiteId>,
        reservoirs: Vec<Region>,
    },
    EmptySmallSystem,
    NoReservoir,
    MissingBeta { reservoir: Region },
    NonPositiveBeta { reservoir: Region, beta: f64 },
    NonPositiveLambda { lambda: f64 },
    /// A perturbation term leaves its reservoir or its volume.
    PerturbationOutside { volume: String, support: Vec<SiteId> },
    PerturbationNorm { volume: String, norm: f64, bound: f64 },
    /// A perturbation past the threshold volume still touches a protected set.
    ProtectedSetTouched {
        volume: String,
        set: Vec<SiteId>,
        support: Vec<SiteId>,
    },
    UnknownThreshold { label: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonHermitian { support, deviation } => {
                write!(f, "term on {support:?} is not Hermitian (deviation {deviation:e})")
            }
            Violation::ReservoirCoupling {
                support,
                reservoirs,
            } => write!(
                f,
                "term on {support:?} couples reservoirs {reservoirs:?} without the small system"
            ),
            Violation::EmptySmallSystem => write!(f, "small system is empty"),
            Violation::NoReservoir => write!(f, "no reservoir declared"),
            Violation::MissingBeta { reservoir } => {
                write!(f, "reservoir {reservoir} has no inverse temperature")
            }
            Violation::NonPositiveBeta { reservoir, beta } => {
                write!(f, "reservoir {reservoir} has inverse temperature {beta} <= 0")
            }
            Violation::NonPositiveLambda { lambda } => write!(f, "lambda = {lambda} <= 0"),
            Violation::PerturbationOutside { volume, support } => write!(
                f,
                "perturbation term on {support:?} in volume {volume} is not inside one reservoir of that volume"
            ),
            Violation::PerturbationNorm {
                volume,
                norm,
                bound,
            } => write!(
                f,
                "perturbation in volume {volume} has lambda-norm {norm} > K = {bound}"
            ),
            Violation::ProtectedSetTouched {
                volume,
                set,
                support,
            } => write!(
                f,
                "perturbation term on {support:?} in volume {volume} touches protected set {set:?}"
            ),
            Violation::UnknownThreshold { label } => {
                write!(f, "threshold volume {label} is not part of the family")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            return writeln!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "violation: {v}")?;
        }
        Ok(())
    }
}

/// The full declarative model.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    sites: Vec<SiteSpec>,
    regions: RegionMap,
    terms: Vec<InteractionTerm>,
    lambda: f64,
    betas: BTreeMap<Region, f64>,
}

impl ModelSpec {
    /// Checks structure (sites, supports, dimensions, region coverage) and
    /// merges terms with equal supports by adding their matrices. Physical
    /// assumptions are left to [`ModelSpec::validate`].
    pub fn new(
        mut sites: Vec<SiteSpec>,
        regions: RegionMap,
        terms: Vec<InteractionTerm>,
        lambda: f64,
        betas: BTreeMap<Region, f64>,
    ) -> Result<Self, ModelError> {
        sites.sort_by_key(|s| s.id);
        for w in sites.windows(2) {
            if w[0].id == w[1].id {
                return Err(ModelError::DuplicateSite(w[0].id));
            }
        }
        if let Some(s) = sites.iter().find(|s| s.local_dim < 2) {
            return Err(ModelError::LocalDim {
                site: s.id,
                dim: s.local_dim,
            });
        }
        let dims: BTreeMap<SiteId, usize> = sites.iter().map(|s| (s.id, s.local_dim)).collect();
        for (s, _) in regions.iter() {
            if !dims.contains_key(&s) {
                return Err(ModelError::UnknownSite(s));
            }
        }
        if let Some(s) = sites.iter().find(|s| regions.region_of(s.id).is_none()) {
            return Err(ModelError::UnassignedSite(s.id));
        }
        let mut merged: BTreeMap<Vec<SiteId>, InteractionTerm> = BTreeMap::new();
        for term in terms {
            for (&s, &d) in term.support().iter().zip(term.operator().volume().dims()) {
                match dims.get(&s) {
                    None => return Err(ModelError::UnknownSite(s)),
                    Some(&e) if e != d => {
                        return Err(ModelError::TermDimension {
                            support: term.support().to_vec(),
                            expected: e,
                            found: d,
                        })
                    }
                    Some(_) => {}
                }
            }
            let key = term.support().to_vec();
            let entry = match merged.remove(&key) {
                Some(prev) => prev.merged(&term)?,
                None => term,
            };
            merged.insert(key, entry);
        }
        Ok(ModelSpec {
            sites,
            regions,
            terms: merged.into_values().collect(),
            lambda,
            betas,
        })
    }

    pub fn sites(&self) -> &[SiteSpec] {
        &self.sites
    }

    pub fn site_ids(&self) -> Vec<SiteId> {
        self.sites.iter().map(|s| s.id).collect()
    }

    pub fn regions(&self) -> &RegionMap {
        &self.regions
    }

    pub fn terms(&self) -> &[InteractionTerm] {
        &self.terms
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn betas(&self) -> &BTreeMap<Region, f64> {
        &self.betas
    }

    pub fn beta(&self, reservoir: Region) -> Option<f64> {
        self.betas.get(&reservoir).copied()
    }

    pub fn small_system(&self) -> Vec<SiteId> {
        self.regions.small_system()
    }

    pub fn reservoirs(&self) -> Vec<Region> {
        self.regions.reservoirs()
    }

    /// The volume spanned by `sites`, with the model's local dimensions.
    pub fn volume(&self, sites: &[SiteId]) -> Result<Volume, ModelError> {
        let pairs = sites
            .iter()
            .map(|&s| {
                self.sites
                    .binary_search_by_key(&s, |x| x.id)
                    .map(|i| (s, self.sites[i].local_dim))
                    .map_err(|_| ModelError::UnknownSite(s))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Volume::new(pairs)?)
    }

    /// The volume made of every declared site.
    pub fn full_volume(&self) -> Volume {
        self.volume(&self.site_ids()).expect("declared sites")
    }

    /// Reports every violated physical assumption; never fails.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            violations.push(Violation::NonPositiveLambda {
                lambda: self.lambda,
            });
        }
        if self.small_system().is_empty() {
            violations.push(Violation::EmptySmallSystem);
        }
        let reservoirs = self.reservoirs();
        if reservoirs.is_empty() {
            violations.push(Violation::NoReservoir);
        }
        for &r in &reservoirs {
            match self.beta(r) {
                None => violations.push(Violation::MissingBeta { reservoir: r }),
                Some(b) if b.is_nan() || b <= 0.0 => violations.push(Violation::NonPositiveBeta {
                    reservoir: r,
                    beta: b,
                }),
                Some(_) => {}
            }
        }
        for term in &self.terms {
            if !term.is_hermitian() {
                violations.push(Violation::NonHermitian {
                    support: term.support().to_vec(),
                    deviation: term.hermitian_deviation(),
                });
            }
            let touched: BTreeSet<Region> = term
                .support()
                .iter()
                .filter_map(|&s| self.regions.region_of(s))
                .collect();
            let res: Vec<Region> = touched.iter().copied().filter(|r| !r.is_small_system()).collect();
            if !touched.contains(&Region::SMALL_SYSTEM) && res.len() > 1 {
                violations.push(Violation::ReservoirCoupling {
                    support: term.support().to_vec(),
                    reservoirs: res,
                });
            }
        }
        ValidationReport { violations }
    }

    /// `‖Φ‖_λ` of the whole interaction.
    pub fn lambda_norm(&self) -> f64 {
        lambda_norm_of(&self.terms, self.lambda)
    }

    /// `λ / (2‖Φ‖_λ)`; `f64::INFINITY` for a vanishing interaction.
    pub fn convergence_radius(&self) -> f64 {
        let n = self.lambda_norm();
        if n == 0.0 {
            f64::INFINITY
        } else {
            self.lambda / (2.0 * n)
        }
    }

    /// `sup_{x∈X} Σ_{Y∋x, Y⊄X} e^{(card Y − 1)λ} ‖Φ(Y)‖`, zero for empty `X`.
    pub fn tail_norm(&self, set: &[SiteId]) -> f64 {
        self.tail_norm_outside(set, set)
    }

    /// `sup_{x∈X} Σ_{Y∋x, Y⊄Λ} e^{(card Y − 1)λ} ‖Φ(Y)‖`: the part of the
    /// interaction seen from `X` that a volume `Λ` cuts off. Nonincreasing
    /// in `Λ` for fixed `X`.
    pub fn tail_norm_outside(&self, set: &[SiteId], volume: &[SiteId]) -> f64 {
        let inside: BTreeSet<SiteId> = volume.iter().copied().collect();
        let centres: BTreeSet<SiteId> = set.iter().copied().collect();
        centres
            .iter()
            .map(|&x| {
                self.terms
                    .iter()
                    .filter(|t| t.support().contains(&x))
                    .filter(|t| !t.support().iter().all(|s| inside.contains(s)))
                    .map(|t| ((t.support().len() - 1) as f64 * self.lambda).exp() * t.norm())
                    .sum::<f64>()
            })
            .fold(0.0f64, f64::max)
    }

    /// Terms supported inside reservoir `a`.
    pub fn restrict(&self, reservoir: Region) -> Result<Vec<&InteractionTerm>, ModelError> {
        if reservoir.is_small_system() || !self.reservoirs().contains(&reservoir) {
            return Err(ModelError::UnknownReservoir(reservoir));
        }
        Ok(self
            .terms
            .iter()
            .filter(|t| {
                t.support()
                    .iter()
                    .all(|&s| self.regions.region_of(s) == Some(reservoir))
            })
            .collect())
    }

    /// Terms whose support meets the small system.
    pub fn interface_terms(&self) -> Vec<&InteractionTerm> {
        let small = self.small_system();
        self.terms
            .iter()
            .filter(|t| intersects(t.support(), &small))
            .collect()
    }

    /// Moves the sites of `new_small` into the small system; reservoirs
    /// shrink accordingly. Sites, dimensions, terms and temperatures are
    /// untouched.
    pub fn redraw(&self, new_small: &[SiteId]) -> Result<ModelSpec, ModelError> {
        let new_small: BTreeSet<SiteId> = new_small.iter().copied().collect();
        let missing: Vec<SiteId> = self
            .small_system()
            .into_iter()
            .filter(|s| !new_small.contains(s))
            .collect();
        if !missing.is_empty() {
            return Err(ModelError::NotSuperset(missing));
        }
        if let Some(&s) = new_small.iter().find(|&&s| self.regions.region_of(s).is_none()) {
            return Err(ModelError::UnknownSite(s));
        }
        let regions = RegionMap::new(self.regions.iter().map(|(s, r)| {
            if new_small.contains(&s) {
                (s, Region::SMALL_SYSTEM)
            } else {
                (s, r)
            }
        }));
        for r in self.reservoirs() {
            if regions.sites_in(r).is_empty() {
                return Err(ModelError::ReservoirEmptied(r));
            }
        }
        Ok(ModelSpec {
            regions,
            ..self.clone()
        })
    }

    /// Same model with every term matrix multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> ModelSpec {
        ModelSpec {
            terms: self.terms.iter().map(|t| t.scaled(factor)).collect(),
            ..self.clone()
        }
    }

    /// Same model with a different `λ`.
    pub fn with_lambda(&self, lambda: f64) -> ModelSpec {
        ModelSpec {
            lambda,
            ..self.clone()
        }
    }

    /// Same model with different inverse temperatures.
    pub fn with_betas(&self, betas: BTreeMap<Region, f64>) -> ModelSpec {
        ModelSpec {
            betas,
            ..self.clone()
        }
    }

    /// Parses the JSON model format.
    pub fn from_json_str(text: &str) -> Result<ModelSpec, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_spec()
    }

    /// Parses a JSON array of terms in the model-file schema against this
    /// model's sites, e.g. an observable written as a sum of local terms.
    pub fn parse_terms(&self, value: serde_json::Value) -> Result<Vec<InteractionTerm>, ModelError> {
        let entries: Vec<TermEntry> = serde_json::from_value(value)?;
        let dims: BTreeMap<SiteId, usize> = self.sites.iter().map(|s| (s.id, s.local_dim)).collect();
        entries.into_iter().map(|t| t.into_term(&dims)).collect()
    }

    pub fn to_json_string(&self) -> String {
        let file = ModelFile {
            sites: self
                .sites
                .iter()
                .map(|s| SiteEntry {
                    id: s.id,
                    dim: s.local_dim,
                })
                .collect(),
            regions: self.regions.iter().map(|(s, r)| (s.0.to_string(), r.0)).collect(),
            lambda: self.lambda,
            betas: self.betas.iter().map(|(r, &b)| (r.0.to_string(), b)).collect(),
            terms: self.terms.iter().map(TermEntry::from_term).collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SiteEntry {
    id: SiteId,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct TermEntry {
    support: Vec<SiteId>,
    matrix: Vec<Vec<[f64; 2]>>,
}

impl TermEntry {
    fn from_term(term: &InteractionTerm) -> TermEntry {
        let op = term.operator();
        let n = op.dim();
        TermEntry {
            support: term.support().to_vec(),
            matrix: (0..n)
                .map(|i| (0..n).map(|j| [op.get(i, j).re, op.get(i, j).im]).collect())
                .collect(),
        }
    }

    fn into_term(self, dims: &BTreeMap<SiteId, usize>) -> Result<InteractionTerm, ModelError> {
        if self.support.is_empty() {
            return Err(ModelError::EmptySupport);
        }
        let mut sorted = self.support.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.support.len() {
            return Err(ModelError::RepeatedSite(self.support));
        }
        let pairs = sorted
            .iter()
            .map(|&s| dims.get(&s).map(|&d| (s, d)).ok_or(ModelError::UnknownSite(s)))
            .collect::<Result<Vec<_>, _>>()?;
        let volume = Volume::new(pairs)?;
        let dim = volume.dim();
        let rows = self.matrix.len();
        if rows != dim || self.matrix.iter().any(|r| r.len() != dim) {
            let found = if rows != dim {
                rows
            } else {
                self.matrix.iter().map(Vec::len).find(|&l| l != dim).unwrap_or(dim)
            };
            return Err(ModelError::TermDimension {
                support: sorted,
                expected: dim,
                found,
            });
        }
        let m: Matrix = Mat::from_fn(dim, dim, |i, j| {
            let [re, im] = self.matrix[i][j];
            c64::new(re, im)
        });
        InteractionTerm::new(DenseOperator::new(volume, m)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    sites: Vec<SiteEntry>,
    regions: BTreeMap<String, u32>,
    lambda: f64,
    betas: BTreeMap<String, f64>,
    #[serde(default)]
    terms: Vec<TermEntry>,
}

fn parse_key<T: std::str::FromStr>(key: &str, what: &str) -> Result<T, ModelError> {
    key.trim().parse().map_err(|_| ModelError::Parse {
        line: 0,
        column: 0,
        message: format!("{what} key {key:?} is not an integer"),
    })
}

impl ModelFile {
    fn into_spec(self) -> Result<ModelSpec, ModelError> {
        let sites: Vec<SiteSpec> = self
            .sites
            .iter()
            .map(|s| SiteSpec {
                id: s.id,
                local_dim: s.dim,
            })
            .collect();
        let dims: BTreeMap<SiteId, usize> = sites.iter().map(|s| (s.id, s.local_dim)).collect();
        let regions = self
            .regions
            .iter()
            .map(|(k, &r)| Ok((SiteId(parse_key(k, "region")?), Region(r))))
            .collect::<Result<Vec<_>, ModelError>>()?;
        let betas = self
            .betas
            .iter()
            .map(|(k, &b)| Ok((Region(parse_key(k, "beta")?), b)))
            .collect::<Result<BTreeMap<_, _>, ModelError>>()?;
        let terms = self
            .terms
            .into_iter()
            .map(|t| t.into_term(&dims))
            .collect::<Result<Vec<_>, _>>()?;
        ModelSpec::new(sites, RegionMap::new(regions), terms, self.lambda, betas)
    }
}

/// A protected finite set and the volume past which perturbations avoid it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectedSet {
    pub set: Vec<SiteId>,
    pub threshold: String,
}

#[derive(Clone, Debug)]
pub struct PerturbationVolume {
    pub sites: Vec<SiteId>,
    pub terms: Vec<InteractionTerm>,
}

/// Volume-dependent reservoir perturbations `Ψ_(Λ)`.
///
/// Volumes are identified by label and by their site set; a volume absent
/// from the family carries the zero perturbation.
#[derive(Clone, Debug, Default)]
pub struct PerturbationFamily {
    pub volumes: BTreeMap<String, PerturbationVolume>,
    pub bound_k: f64,
    pub protected: Vec<ProtectedSet>,
}

impl PerturbationFamily {
    /// The zero family.
    pub fn zero() -> Self {
        PerturbationFamily::default()
    }

    pub fn is_zero(&self) -> bool {
        self.volumes.values().all(|v| v.terms.is_empty())
    }

    /// Terms attached to the volume with exactly these sites.
    pub fn terms_for(&self, sites: &[SiteId]) -> &[InteractionTerm] {
        let mut key = sites.to_vec();
        key.sort();
        self.volumes
            .values()
            .find(|v| v.sites == key)
            .map(|v| v.terms.as_slice())
            .unwrap_or(&[])
    }

    pub fn validate(&self, spec: &ModelSpec) -> Vec<Violation> {
        let mut out = Vec::new();
        for (label, vol) in &self.volumes {
            for t in &vol.terms {
                let regions: BTreeSet<Option<Region>> =
                    t.support().iter().map(|&s| spec.regions().region_of(s)).collect();
                let single_reservoir = regions.len() == 1
                    && regions
                        .iter()
                        .next()
                        .copied()
                        .flatten()
                        .is_some_and(|r| !r.is_small_system());
                let inside = t.support().iter().all(|s| vol.sites.contains(s));
                if !(single_reservoir && inside) {
                    out.push(Violation::PerturbationOutside {
                        volume: label.clone(),
                        support: t.support().to_vec(),
                    });
                }
                if !t.is_hermitian() {
                    out.push(Violation::NonHermitian {
                        support: t.support().to_vec(),
                        deviation: t.hermitian_deviation(),
                    });
                }
            }
            let norm = lambda_norm_of(&vol.terms, spec.lambda());
            if norm > self.bound_k {
                out.push(Violation::PerturbationNorm {
                    volume: label.clone(),
                    norm,
                    bound: self.bound_k,
                });
            }
        }
        for p in &self.protected {
            let Some(threshold) = self.volumes.get(&p.threshold) else {
                out.push(Violation::UnknownThreshold {
                    label: p.threshold.clone(),
                });
                continue;
            };
            let mut set = p.set.clone();
            set.sort();
            for (label, vol) in &self.volumes {
                if !threshold.sites.iter().all(|s| vol.sites.contains(s)) {
                    continue;
                }
                for t in &vol.terms {
                    if intersects(t.support(), &set) {
                        out.push(Violation::ProtectedSetTouched {
                            volume: label.clone(),
                            set: set.clone(),
                            support: t.support().to_vec(),
                        });
                    }
                }
            }
        }
        out
    }

    /// Parses the JSON perturbation format; dimensions come from `spec`.
    pub fn from_json_str(text: &str, spec: &ModelSpec) -> Result<Self, ModelError> {
        let file: PerturbationFile = serde_json::from_str(text)?;
        let dims: BTreeMap<SiteId, usize> =
            spec.sites().iter().map(|s| (s.id, s.local_dim)).collect();
        let mut volumes = BTreeMap::new();
        for (label, v) in file.volumes {
            let mut sites = v.sites;
            sites.sort();
            sites.dedup();
            let terms = v
                .terms
                .into_iter()
                .map(|t| t.into_term(&dims))
                .collect::<Result<Vec<_>, _>>()?;
            volumes.insert(label, PerturbationVolume { sites, terms });
        }
        Ok(PerturbationFamily {
            volumes,
            bound_k: file.bound_k,
            protected: file.protected,
        })
    }

    pub fn to_json_string(&self) -> String {
        let file = PerturbationFile {
            bound_k: self.bound_k,
            protected: self.protected.clone(),
            volumes: self
                .volumes
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        PerturbationVolumeEntry {
                            sites: v.sites.clone(),
                            terms: v.terms.iter().map(TermEntry::from_term).collect(),
                        },
                    )
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("perturbation serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerturbationVolumeEntry {
    sites: Vec<SiteId>,
    #[serde(default)]
    terms: Vec<TermEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerturbationFile {
    bound_k: f64,
    #[serde(default)]
    protected: Vec<ProtectedSet>,
    volumes: BTreeMap<String, PerturbationVolumeEntry>,
}

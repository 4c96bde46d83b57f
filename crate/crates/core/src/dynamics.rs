//! Heisenberg dynamics at finite volume.
//!
//! The production path is exact spectral conjugation
//! `α^t A = e^{itH} A e^{−itH}` ([`EvolutionPlan`]). The truncated series
//! `Σ_m t^m δ^m A / m!` of the derivation `δA = iΣ_{Y∩X≠∅}[Φ(Y), A]` is a
//! verification path only; it refuses times outside the radius
//! `λ / 2(‖Φ‖_λ + K)` where its majorant converges.

use serde::Serialize;
use thiserror::Error;

use crate::model::{lambda_norm_of, ModelError, ModelSpec, PerturbationFamily};
use crate::opalg::{c64, intersects, DenseOperator, OpError, SiteId, SpectralData, Volume};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("|t| = {t} is outside the series radius {radius}")]
    OutsideRadius { t: f64, radius: f64 },
    #[error("operator on {support:?} does not fit in volume {volume:?}")]
    NotInVolume {
        support: Vec<SiteId>,
        volume: Vec<SiteId>,
    },
    #[error("exhaustion is not nested at step {0}")]
    NotNested(usize),
    #[error("empty exhaustion")]
    EmptyExhaustion,
    #[error("invalid series configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Op(#[from] OpError),
}

/// Local terms of `H_Λ + Σ_a B_{aΛ}` on a volume, kept separate so the
/// derivation only touches terms meeting an operator's support.
#[derive(Clone, Debug)]
pub struct LocalGenerator {
    volume: Volume,
    terms: Vec<DenseOperator>,
    lambda: f64,
    phi_norm: f64,
    bound_k: f64,
}

impl LocalGenerator {
    /// Terms of `spec` inside `sites`, plus the perturbation family's terms
    /// for that volume. Boundary-straddling terms are dropped.
    pub fn new(
        spec: &ModelSpec,
        sites: &[SiteId],
        perturbation: Option<&PerturbationFamily>,
    ) -> Result<Self, DynamicsError> {
        let volume = spec.volume(sites)?;
        let inside = |s: &[SiteId]| s.iter().all(|&x| volume.contains(x));
        let mut terms = Vec::new();
        for t in spec.terms().iter().filter(|t| inside(t.support())) {
            terms.push(t.operator().embed(&volume)?);
        }
        let mut bound_k = 0.0;
        if let Some(family) = perturbation {
            let b = family.terms_for(volume.sites());
            for t in b.iter().filter(|t| inside(t.support())) {
                terms.push(t.operator().embed(&volume)?);
            }
            bound_k = family.bound_k.max(lambda_norm_of(b, spec.lambda()));
        }
        Ok(LocalGenerator {
            volume,
            terms,
            lambda: spec.lambda(),
            phi_norm: spec.lambda_norm(),
            bound_k,
        })
    }

    pub fn volume(&self) -> &Volume {
        &self.volume
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `‖Φ‖_λ + K`.
    pub fn majorant_norm(&self) -> f64 {
        self.phi_norm + self.bound_k
    }

    /// `λ / 2(‖Φ‖_λ + K)`.
    pub fn radius(&self) -> f64 {
        let n = self.majorant_norm();
        if n == 0.0 {
            f64::INFINITY
        } else {
            self.lambda / (2.0 * n)
        }
    }

    /// The full generator `H_Λ + Σ_a B_{aΛ}`.
    pub fn hamiltonian(&self) -> DenseOperator {
        let mut h = DenseOperator::zero(self.volume.clone());
        for t in &self.terms {
            h.add_assign(t).expect("same volume");
        }
        h
    }

    fn lift(&self, a: &DenseOperator) -> Result<DenseOperator, DynamicsError> {
        if a.volume() == &self.volume {
            return Ok(a.clone());
        }
        a.embed(&self.volume).map_err(|_| DynamicsError::NotInVolume {
            support: a.volume().sites().to_vec(),
            volume: self.volume.sites().to_vec(),
        })
    }

    /// `δ_Λ A = i Σ_{Y∩X≠∅} [Φ(Y), A]`, `X` the support of `A`. Operators on
    /// a subvolume are embedded first.
    pub fn derivation(&self, a: &DenseOperator) -> Result<DenseOperator, DynamicsError> {
        let a = self.lift(a)?;
        let mut out = DenseOperator::zero(self.volume.clone());
        let i = c64::new(0.0, 1.0);
        for t in self.terms.iter().filter(|t| intersects(t.support(), a.support())) {
            out.add_assign(&crate::opalg::commutator(t, &a)?.scale(i))?;
        }
        Ok(out)
    }

    /// `[A, δA, δ²A, …, δ^m A]`.
    pub fn derivation_powers(
        &self,
        a: &DenseOperator,
        max_order: usize,
    ) -> Result<Vec<DenseOperator>, DynamicsError> {
        let mut out = vec![self.lift(a)?];
        for _ in 0..max_order {
            let next = self.derivation(out.last().expect("nonempty"))?;
            out.push(next);
        }
        Ok(out)
    }

    pub fn plan(&self, times: Vec<f64>) -> Result<EvolutionPlan, DynamicsError> {
        EvolutionPlan::new(self.hamiltonian(), times)
    }

    /// Majorant for `‖δ^m A‖`: `‖A‖ e^{λ card X} m! (2‖Φ‖/(λ−μ))^m`.
    pub fn order_bound(&self, a: &DenseOperator, m: usize, cfg: &DysonConfig) -> f64 {
        let base = a.op_norm() * (cfg.lambda * a.support().len() as f64).exp();
        let rate = 2.0 * self.majorant_norm() / (cfg.lambda - cfg.mu);
        base * factorial(m) * rate.powi(m as i32)
    }

    /// Truncated Dyson series with the tail of its geometric majorant.
    pub fn dyson_evolve(
        &self,
        a: &DenseOperator,
        t: f64,
        cfg: &DysonConfig,
    ) -> Result<DysonResult, DynamicsError> {
        cfg.check()?;
        let a = self.lift(a)?;
        let ratio = 2.0 * t.abs() * self.majorant_norm() / (cfg.lambda - cfg.mu);
        if ratio >= 1.0 {
            return Err(DynamicsError::OutsideRadius {
                t,
                radius: (cfg.lambda - cfg.mu) / (2.0 * self.majorant_norm()),
            });
        }
        let prefactor = a.op_norm() * (cfg.lambda * a.support().len() as f64).exp();
        let tail = |m: usize| prefactor * ratio.powi(m as i32 + 1) / (1.0 - ratio);
        let mut sum = a.clone();
        let mut term = a.clone();
        let mut order = 0;
        let mut term_norms = vec![a.op_norm()];
        while order < cfg.max_order && !(cfg.target_tol > 0.0 && tail(order) <= cfg.target_tol) {
            order += 1;
            if t == 0.0 {
                break;
            }
            // t^m δ^m A / m! from the previous term
            term = self.derivation(&term)?.scale_real(t / order as f64);
            term_norms.push(term.op_norm());
            sum.add_assign(&term)?;
        }
        let bound = if t == 0.0 { 0.0 } else { tail(order) };
        Ok(DysonResult {
            operator: sum,
            bound,
            order,
            ratio,
            term_norms,
            prefactor,
        })
    }
}

fn factorial(m: usize) -> f64 {
    (1..=m).map(|k| k as f64).product()
}

/// Settings of the series path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DysonConfig {
    pub lambda: f64,
    /// Target weight `0 ≤ μ < λ`; `μ = 0` bounds the operator norm.
    pub mu: f64,
    pub max_order: usize,
    /// Stop early once the majorant tail is below this (0 disables).
    pub target_tol: f64,
}

impl DysonConfig {
    pub fn new(lambda: f64, max_order: usize) -> Self {
        DysonConfig {
            lambda,
            mu: 0.0,
            max_order,
            target_tol: 0.0,
        }
    }

    fn check(&self) -> Result<(), DynamicsError> {
        if !(self.lambda > self.mu && self.mu >= 0.0) {
            return Err(DynamicsError::InvalidConfig(format!(
                "need lambda > mu >= 0, got lambda = {}, mu = {}",
                self.lambda, self.mu
            )));
        }
        if self.max_order < 1 {
            return Err(DynamicsError::InvalidConfig("max_order must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DysonResult {
    pub operator: DenseOperator,
    /// `‖A‖ e^{λ card X} Σ_{m>M} r^m`.
    pub bound: f64,
    /// Highest order summed.
    pub order: usize,
    /// Majorant ratio `r = 2|t|(‖Φ‖_λ+K)/(λ−μ)`.
    pub ratio: f64,
    /// `‖t^m δ^m A / m!‖` for `m = 0..=order`.
    pub term_norms: Vec<f64>,
    /// `‖A‖ e^{λ card X}`.
    pub prefactor: f64,
}

/// Spectral factorization of a generator, reused across evaluation times.
#[derive(Clone, Debug)]
pub struct EvolutionPlan {
    generator: DenseOperator,
    spectral: SpectralData,
    times: Vec<f64>,
}

impl EvolutionPlan {
    pub fn new(generator: DenseOperator, times: Vec<f64>) -> Result<Self, DynamicsError> {
        let spectral = generator.spectral()?;
        Ok(EvolutionPlan {
            generator,
            spectral,
            times,
        })
    }

    /// Reuses an existing factorization of `generator`.
    pub fn from_spectral(generator: DenseOperator, spectral: SpectralData, times: Vec<f64>) -> Self {
        EvolutionPlan {
            generator,
            spectral,
            times,
        }
    }

    pub fn generator(&self) -> &DenseOperator {
        &self.generator
    }

    pub fn spectral(&self) -> &SpectralData {
        &self.spectral
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `e^{itH} A e^{−itH}`.
    pub fn exact_evolve(&self, a: &DenseOperator, t: f64) -> Result<DenseOperator, DynamicsError> {
        let volume = self.spectral.volume();
        let a = if a.volume() == volume {
            a.clone()
        } else {
            a.embed(volume).map_err(|_| DynamicsError::NotInVolume {
                support: a.volume().sites().to_vec(),
                volume: volume.sites().to_vec(),
            })?
        };
        let mut m = self.spectral.to_eigenbasis(a.matrix());
        let vals = self.spectral.values();
        for k in 0..vals.len() {
            for j in 0..vals.len() {
                m[(j, k)] *= c64::from_polar(1.0, t * (vals[j] - vals[k]));
            }
        }
        let out = self.spectral.from_eigenbasis(m.as_ref());
        Ok(DenseOperator::new(volume.clone(), out)?)
    }

    /// `α^t A` at every planned time.
    pub fn evolve_all(&self, a: &DenseOperator) -> Result<Vec<DenseOperator>, DynamicsError> {
        self.times.iter().map(|&t| self.exact_evolve(a, t)).collect()
    }
}

/// `δ_Λ A` for the unperturbed interaction.
pub fn derivation(
    spec: &ModelSpec,
    sites: &[SiteId],
    a: &DenseOperator,
) -> Result<DenseOperator, DynamicsError> {
    LocalGenerator::new(spec, sites, None)?.derivation(a)
}

/// One line of a convergence sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub kind: SweepKind,
    pub volume_index: usize,
    /// Evaluation time (`NaN` for derivation rows).
    pub t: f64,
    /// Observed norm: discrepancy between consecutive volumes for
    /// `evolution`/`derivation` rows, series error for `dyson` rows.
    pub discrepancy: f64,
    /// Order of δ (derivation) or of the truncated series (dyson).
    pub dyson_order: Option<usize>,
    /// Majorant bound where one exists.
    pub bound: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// `sup`-free per-time `‖α_{Λ_i}^t A − α_{Λ_{i+1}}^t A‖`.
    Evolution,
    /// `‖α_{Λ_i}^t A − α_{Λ_last}^t A‖` against the largest volume.
    Reference,
    /// `‖δ_{Λ_i}^m A − δ_{Λ_{i+1}}^m A‖`.
    Derivation,
    /// Series error in volume `i` with its majorant.
    Dyson,
}

impl SweepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::Evolution => "evolution",
            SweepKind::Reference => "reference",
            SweepKind::Derivation => "derivation",
            SweepKind::Dyson => "dyson",
        }
    }
}

/// Relative floating-point floor added to every series bound: the exact
/// and truncated evolutions are each only accurate to a few ulps of `‖A‖`.
pub const SERIES_ROUNDOFF: f64 = 1e-12;

#[derive(Clone, Debug, Default, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// `SERIES_ROUNDOFF·‖A‖`, the slack allowed on top of a series bound.
    pub roundoff: f64,
}

impl SweepReport {
    pub fn of_kind(&self, kind: SweepKind) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }

    /// `sup_t` of the consecutive-volume discrepancy, per volume pair.
    pub fn sup_evolution_discrepancy(&self) -> Vec<f64> {
        let n = self
            .of_kind(SweepKind::Evolution)
            .map(|r| r.volume_index + 1)
            .max()
            .unwrap_or(0);
        let mut out = vec![0.0f64; n];
        for r in self.of_kind(SweepKind::Evolution) {
            out[r.volume_index] = out[r.volume_index].max(r.discrepancy);
        }
        out
    }

    /// Whether a row's observed error sits under its bound plus roundoff;
    /// `None` for rows without a bound.
    pub fn within_bound(&self, row: &SweepRow) -> Option<bool> {
        row.bound.map(|b| row.discrepancy <= b + self.roundoff)
    }

    /// Whether every Dyson row's observed error sits under its bound.
    pub fn dyson_within_bounds(&self) -> bool {
        self.of_kind(SweepKind::Dyson)
            .all(|r| self.within_bound(r) == Some(true))
    }
}

/// Options for [`convergence_sweep`].
#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub times: Vec<f64>,
    /// Highest power of δ compared between volumes.
    pub derivation_orders: usize,
    /// Series order for the Dyson check; times outside the radius are
    /// skipped for that check.
    pub dyson: Option<DysonConfig>,
}

/// Compares the dynamics of `a` across a nested exhaustion `Λ_0 ⊂ Λ_1 ⊂ …`.
/// Every result is embedded into the largest volume, which serves as the
/// stand-in for the infinite system.
pub fn convergence_sweep(
    spec: &ModelSpec,
    exhaustion: &[Vec<SiteId>],
    a: &DenseOperator,
    cfg: &SweepConfig,
    perturbation: Option<&PerturbationFamily>,
) -> Result<SweepReport, DynamicsError> {
    if exhaustion.is_empty() {
        return Err(DynamicsError::EmptyExhaustion);
    }
    for (i, w) in exhaustion.windows(2).enumerate() {
        if !w[0].iter().all(|s| w[1].contains(s)) {
            return Err(DynamicsError::NotNested(i + 1));
        }
    }
    let generators = exhaustion
        .iter()
        .map(|sites| LocalGenerator::new(spec, sites, perturbation))
        .collect::<Result<Vec<_>, _>>()?;
    let reference = generators.last().expect("nonempty").volume().clone();
    if !a.volume().is_subvolume_of(generators[0].volume()) {
        return Err(DynamicsError::NotInVolume {
            support: a.volume().sites().to_vec(),
            volume: generators[0].volume().sites().to_vec(),
        });
    }

    // evolved[i][k] = α_{Λ_i}^{t_k} A in the reference volume
    let mut evolved = Vec::with_capacity(generators.len());
    let mut powers = Vec::with_capacity(generators.len());
    let mut rows = Vec::new();
    for (i, g) in generators.iter().enumerate() {
        let plan = g.plan(cfg.times.clone())?;
        let local = plan.evolve_all(a)?;
        evolved.push(
            local
                .iter()
                .map(|x| x.embed(&reference))
                .collect::<Result<Vec<_>, _>>()?,
        );
        powers.push(
            g.derivation_powers(a, cfg.derivation_orders)?
                .iter()
                .map(|x| x.embed(&reference))
                .collect::<Result<Vec<_>, _>>()?,
        );
        if let Some(dc) = &cfg.dyson {
            for (k, &t) in cfg.times.iter().enumerate() {
                match g.dyson_evolve(a, t, dc) {
                    Ok(res) => rows.push(SweepRow {
                        kind: SweepKind::Dyson,
                        volume_index: i,
                        t,
                        discrepancy: res.operator.sub(&local[k])?.op_norm(),
                        dyson_order: Some(res.order),
                        bound: Some(res.bound),
                    }),
                    Err(DynamicsError::OutsideRadius { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    let last = generators.len() - 1;
    for i in 0..last {
        for (k, &t) in cfg.times.iter().enumerate() {
            rows.push(SweepRow {
                kind: SweepKind::Evolution,
                volume_index: i,
                t,
                discrepancy: evolved[i][k].sub(&evolved[i + 1][k])?.op_norm(),
                dyson_order: None,
                bound: None,
            });
            rows.push(SweepRow {
                kind: SweepKind::Reference,
                volume_index: i,
                t,
                discrepancy: evolved[i][k].sub(&evolved[last][k])?.op_norm(),
                dyson_order: None,
                bound: None,
            });
        }
        for (m, (small, big)) in powers[i].iter().zip(&powers[i + 1]).enumerate() {
            rows.push(SweepRow {
                kind: SweepKind::Derivation,
                volume_index: i,
                t: f64::NAN,
                discrepancy: small.sub(big)?.op_norm(),
                dyson_order: Some(m),
                bound: None,
            });
        }
    }
    rows.sort_by_key(|r| (r.kind as u8, r.volume_index));
    Ok(SweepReport {
        rows,
        roundoff: SERIES_ROUNDOFF * a.op_norm(),
    })
}

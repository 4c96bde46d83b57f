//! Finite-volume operators.
//!
//! For a finite set of sites `Λ ⊇ S` this assembles
//!
//! * `H = Σ_{X⊆Λ} Φ(X)` (terms straddling the boundary are dropped),
//! * `H_a = Σ_{X⊆R_a∩Λ} Φ(X)` and the perturbations `B_a`,
//! * `H_B = H + Σ_a B_a`, the generator of the perturbed dynamics,
//! * `G = Σ_a β_a(H_a + B_a) + log tr exp(−Σ_a β_a(H_a + B_a))`, so that
//!   `exp(−G)` is the normalized product reference state,
//! * the interface operator `W = H − Σ_a H_a`,
//! * the reservoir currents `i[H, H_a]`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use serde::Serialize;
use thiserror::Error;

use crate::model::{ModelError, ModelSpec, PerturbationFamily, Region};
use crate::opalg::{i_commutator, merge_sites, DenseOperator, OpError, SiteId, SpectralData, Volume};

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("volume misses small-system sites {0:?}")]
    MissingSmallSystem(Vec<SiteId>),
    #[error("reservoir {0} has no inverse temperature")]
    MissingBeta(Region),
    #[error("perturbation term on {0:?} is not inside a single reservoir of the volume")]
    PerturbationOutside(Vec<SiteId>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Op(#[from] OpError),
}

/// What went into a build, printed as `key=value` lines.
#[derive(Clone, Debug, Default, Serialize)]
pub struct BuildLog {
    pub sites: Vec<SiteId>,
    pub dim: usize,
    pub included_terms: usize,
    pub dropped_terms: Vec<Vec<SiteId>>,
    pub perturbation_terms: usize,
    pub h_norm: f64,
    pub w_norm: f64,
    /// `‖G_Λ‖`, read off the spectrum of `Σ_a β_a(H_a + B_a)`.
    pub g_norm: f64,
    pub log_partition: f64,
}

impl fmt::Display for BuildLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.sites.iter().map(|s| s.to_string()).collect();
        writeln!(f, "volume={}", ids.join(" "))?;
        writeln!(f, "dim={}", self.dim)?;
        writeln!(f, "included_terms={}", self.included_terms)?;
        writeln!(f, "dropped_terms={}", self.dropped_terms.len())?;
        for d in &self.dropped_terms {
            let ids: Vec<String> = d.iter().map(|s| s.to_string()).collect();
            writeln!(f, "dropped_support={}", ids.join(" "))?;
        }
        writeln!(f, "perturbation_terms={}", self.perturbation_terms)?;
        writeln!(f, "h_norm={:.17e}", self.h_norm)?;
        writeln!(f, "w_norm={:.17e}", self.w_norm)?;
        writeln!(f, "g_norm={:.17e}", self.g_norm)?;
        writeln!(f, "log_partition={:.17e}", self.log_partition)
    }
}

/// Every operator of one finite volume, immutable once built.
#[derive(Debug)]
pub struct VolumeOperators {
    volume: Volume,
    small: Vec<SiteId>,
    reservoir_sites: BTreeMap<Region, Vec<SiteId>>,
    betas: BTreeMap<Region, f64>,
    lambda: f64,
    lambda_norm: f64,
    h: DenseOperator,
    h_res: BTreeMap<Region, DenseOperator>,
    b_res: BTreeMap<Region, DenseOperator>,
    h_b: DenseOperator,
    g: DenseOperator,
    w: DenseOperator,
    currents: BTreeMap<Region, DenseOperator>,
    reference: DenseOperator,
    log: BuildLog,
    generator_spectral: OnceLock<SpectralData>,
}

/// Assembles all operators of the volume `sites`. Without a perturbation
/// family, `B_a = 0`.
pub fn build(
    spec: &ModelSpec,
    sites: &[SiteId],
    perturbation: Option<&PerturbationFamily>,
) -> Result<VolumeOperators, VolumeError> {
    let volume = spec.volume(sites)?;
    let small = spec.small_system();
    let missing: Vec<SiteId> = small.iter().copied().filter(|&s| !volume.contains(s)).collect();
    if !missing.is_empty() {
        return Err(VolumeError::MissingSmallSystem(missing));
    }
    let reservoirs = spec.reservoirs();
    let mut betas = BTreeMap::new();
    for &r in &reservoirs {
        betas.insert(r, spec.beta(r).ok_or(VolumeError::MissingBeta(r))?);
    }

    let mut log = BuildLog {
        sites: volume.sites().to_vec(),
        dim: volume.dim(),
        ..Default::default()
    };
    let mut h = DenseOperator::zero(volume.clone());
    let mut h_res: BTreeMap<Region, DenseOperator> = reservoirs
        .iter()
        .map(|&r| (r, DenseOperator::zero(volume.clone())))
        .collect();
    let mut b_res = h_res.clone();
    let mut w_support = Vec::new();

    for term in spec.terms() {
        if !term.support().iter().all(|&s| volume.contains(s)) {
            log.dropped_terms.push(term.support().to_vec());
            continue;
        }
        log.included_terms += 1;
        let op = term.operator().embed(&volume)?;
        h.add_assign(&op)?;
        match single_reservoir(spec, term.support()) {
            Some(r) => h_res.get_mut(&r).expect("declared reservoir").add_assign(&op)?,
            None => w_support = merge_sites(&w_support, term.support()),
        }
    }
    if let Some(family) = perturbation {
        for term in family.terms_for(volume.sites()) {
            let r = single_reservoir(spec, term.support())
                .filter(|_| term.support().iter().all(|&s| volume.contains(s)))
                .ok_or_else(|| VolumeError::PerturbationOutside(term.support().to_vec()))?;
            log.perturbation_terms += 1;
            b_res
                .get_mut(&r)
                .expect("declared reservoir")
                .add_assign(&term.operator().embed(&volume)?)?;
        }
    }
    if !log.dropped_terms.is_empty() {
        log::debug!(
            "volume {:?}: dropped {} boundary terms",
            volume.sites(),
            log.dropped_terms.len()
        );
    }

    let mut h_b = h.clone();
    let mut w = h.clone();
    let mut k = DenseOperator::zero(volume.clone());
    for &r in &reservoirs {
        h_b.add_assign(&b_res[&r])?;
        w = w.sub(&h_res[&r])?;
        k.add_assign(&h_res[&r].add(&b_res[&r])?.scale_real(betas[&r]))?;
    }
    let w = DenseOperator::with_support(volume.clone(), w_support, w.into_matrix())?;
    let k_spectral = k.spectral()?;
    let k_min = k_spectral.min();
    let log_partition =
        -k_min + k_spectral.values().iter().map(|&v| (-(v - k_min)).exp()).sum::<f64>().ln();
    let g = k.shift(log_partition);
    log.g_norm = (k_min + log_partition).abs().max((k_spectral.max() + log_partition).abs());
    let reference = k_spectral.apply(|v| (-(v + log_partition)).exp())?;

    let mut currents = BTreeMap::new();
    for &r in &reservoirs {
        currents.insert(r, i_commutator(&h, &h_res[&r])?.hermitian_part());
    }

    // The generator's spectrum is needed by every dynamical quantity; with
    // no perturbation it is the spectrum of H and doubles as its norm.
    let generator_spectral = OnceLock::new();
    if log.perturbation_terms == 0 {
        let sp = h.spectral()?;
        log.h_norm = sp.min().abs().max(sp.max().abs());
        let _ = generator_spectral.set(sp);
    } else {
        log.h_norm = h.op_norm();
    }
    log.w_norm = local_norm(spec, &volume, &w)?;
    log.log_partition = log_partition;

    let reservoir_sites = reservoirs
        .iter()
        .map(|&r| {
            let inside = volume.sites().iter().copied();
            (r, inside.filter(|&s| spec.regions().region_of(s) == Some(r)).collect())
        })
        .collect();

    Ok(VolumeOperators {
        volume,
        small,
        reservoir_sites,
        betas,
        lambda: spec.lambda(),
        lambda_norm: spec.lambda_norm(),
        h,
        h_res,
        b_res,
        h_b,
        g,
        w,
        currents,
        reference,
        log,
        generator_spectral,
    })
}

/// Norm of an operator computed on the smallest volume holding its support.
fn local_norm(spec: &ModelSpec, volume: &Volume, op: &DenseOperator) -> Result<f64, VolumeError> {
    if op.support().len() == volume.len() {
        return Ok(op.op_norm());
    }
    if op.support().is_empty() {
        return Ok(op.max_abs());
    }
    let local = spec.volume(op.support())?;
    Ok(op.reduce(local.sites())?.op_norm())
}

/// The reservoir containing every site of `support`, if any.
fn single_reservoir(spec: &ModelSpec, support: &[SiteId]) -> Option<Region> {
    let first = spec.regions().region_of(*support.first()?)?;
    if first.is_small_system() {
        return None;
    }
    support
        .iter()
        .all(|&s| spec.regions().region_of(s) == Some(first))
        .then_some(first)
}

impl VolumeOperators {
    pub fn volume(&self) -> &Volume {
        &self.volume
    }

    pub fn small_system(&self) -> &[SiteId] {
        &self.small
    }

    /// Sites of reservoir `r` inside the volume.
    pub fn reservoir_sites(&self, r: Region) -> &[SiteId] {
        &self.reservoir_sites[&r]
    }

    pub fn reservoirs(&self) -> Vec<Region> {
        self.betas.keys().copied().collect()
    }

    pub fn betas(&self) -> &BTreeMap<Region, f64> {
        &self.betas
    }

    pub fn beta(&self, r: Region) -> f64 {
        self.betas[&r]
    }

    /// `H_Λ`.
    pub fn hamiltonian(&self) -> &DenseOperator {
        &self.h
    }

    /// `H_{aΛ}`.
    pub fn reservoir_hamiltonian(&self, r: Region) -> &DenseOperator {
        &self.h_res[&r]
    }

    /// `B_{aΛ}`.
    pub fn perturbation(&self, r: Region) -> &DenseOperator {
        &self.b_res[&r]
    }

    pub fn has_perturbation(&self) -> bool {
        self.log.perturbation_terms > 0
    }

    /// `H_{BΛ} = H_Λ + Σ_a B_{aΛ}`.
    pub fn generator(&self) -> &DenseOperator {
        &self.h_b
    }

    /// Spectral data of `H_{BΛ}`, computed on first use.
    pub fn generator_spectral(&self) -> &SpectralData {
        self.generator_spectral
            .get_or_init(|| self.h_b.spectral().expect("generator is Hermitian"))
    }

    /// `G_Λ`.
    pub fn g(&self) -> &DenseOperator {
        &self.g
    }

    /// `exp(−G_Λ)`, the normalized product reference state.
    pub fn reference_density(&self) -> &DenseOperator {
        &self.reference
    }

    /// `W = H_Λ − Σ_a H_{aΛ}`.
    pub fn interface(&self) -> &DenseOperator {
        &self.w
    }

    /// `i[H_Λ, H_{aΛ}]`.
    pub fn current(&self, r: Region) -> &DenseOperator {
        &self.currents[&r]
    }

    pub fn currents(&self) -> &BTreeMap<Region, DenseOperator> {
        &self.currents
    }

    pub fn log(&self) -> &BuildLog {
        &self.log
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `‖W_Λ‖`.
    pub fn interface_norm(&self) -> f64 {
        self.log.w_norm
    }

    /// `‖G_Λ‖`.
    pub fn g_norm(&self) -> f64 {
        self.log.g_norm
    }

    pub fn model_lambda_norm(&self) -> f64 {
        self.lambda_norm
    }

    /// `2·card S·λ⁻¹·e^λ·‖Φ‖_λ²`.
    pub fn current_bound(&self) -> f64 {
        2.0 * self.small.len() as f64 * self.lambda.exp() / self.lambda
            * self.lambda_norm.powi(2)
    }

    pub fn current_bound_check(&self) -> CurrentBoundReport {
        let norms: BTreeMap<Region, f64> = self
            .currents
            .iter()
            .map(|(&r, c)| (r, c.op_norm()))
            .collect();
        let bound = self.current_bound();
        let ok = norms.values().all(|&n| n <= bound);
        CurrentBoundReport { norms, bound, ok }
    }
}

/// Current norms against the `2·card S·λ⁻¹·e^λ·‖Φ‖_λ²` bound.
#[derive(Clone, Debug, Serialize)]
pub struct CurrentBoundReport {
    pub norms: BTreeMap<Region, f64>,
    pub bound: f64,
    pub ok: bool,
}

/// Builds the volume and checks every current against its norm bound.
pub fn current_bound_check(
    spec: &ModelSpec,
    sites: &[SiteId],
) -> Result<CurrentBoundReport, VolumeError> {
    Ok(build(spec, sites, None)?.current_bound_check())
}

/// `W_Λ = Σ_{x∈S} Σ_{X: x∈X⊆Λ} Φ(X) / card(X∩S)`, computed term by term
/// from the weighted interface sum rather than by subtraction.
pub fn interface_operator(spec: &ModelSpec, sites: &[SiteId]) -> Result<DenseOperator, VolumeError> {
    let volume = spec.volume(sites)?;
    let small = spec.small_system();
    let missing: Vec<SiteId> = small.iter().copied().filter(|&s| !volume.contains(s)).collect();
    if !missing.is_empty() {
        return Err(VolumeError::MissingSmallSystem(missing));
    }
    let mut w = DenseOperator::zero(volume.clone());
    for &x in &small {
        for term in spec.terms() {
            let support = term.support();
            if !support.contains(&x) || !support.iter().all(|&s| volume.contains(s)) {
                continue;
            }
            let shared = support.iter().filter(|s| small.contains(s)).count();
            let weight = 1.0 / shared as f64;
            w.add_assign(&term.operator().embed(&volume)?.scale_real(weight))?;
        }
    }
    Ok(w)
}

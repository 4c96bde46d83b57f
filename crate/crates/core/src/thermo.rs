//! States, steady-state proxies and entropy production.
//!
//! The nonequilibrium steady state is approximated by the time average
//! `ρ_T(A) = (1/T)∫_0^T σ(α^t A) dt` of the product reference state
//! `σ = exp(−G)` at finite volume. Averages are exact in `T`: in the
//! eigenbasis of the generator each matrix element picks up the factor
//! `(e^{iTΔ} − 1)/(iTΔ)` of its Bohr frequency `Δ`.
//!
//! With `flux_a = ρ_T(i[H_B, H_a + B_a])` (which is `ρ_T(i[H, H_a])` when
//! there is no perturbation) the entropy production
//! `e = Σ_a β_a flux_a = ρ_T(i[H_B, G])` telescopes to
//! `(1/T)(σ(α^T G) − σ(G))`, and that difference is never negative.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::{ModelError, ModelSpec, Region};
use crate::opalg::{
    c64, i_commutator, unitary_deviation, DenseOperator, Matrix, OpError, SiteId, SpectralData,
    Volume, UNITARY_TOL,
};
use crate::sample;
use crate::volume::{build, VolumeError, VolumeOperators};

/// Tolerance on the density-matrix invariants.
pub const STATE_TOL: f64 = 1e-10;

/// Bohr frequencies below this are treated as exactly zero.
pub const ZERO_FREQUENCY: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum ThermoError {
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("not a density matrix: {0}")]
    InvalidState(String),
    #[error("state is not the Gibbs state of the given generator (deviation {deviation:e})")]
    NotGibbs { deviation: f64 },
    #[error("product construction disagrees with exp(-G) by {deviation:e}")]
    ProductMismatch { deviation: f64 },
    #[error("inverse temperatures differ from those the volume was built with")]
    InconsistentBetas,
    #[error("expected exactly two reservoirs, found {0}")]
    ReservoirCount(usize),
    #[error("phi decreases from {left} to {right} on consecutive eigenvalues")]
    NonMonotone { left: f64, right: f64 },
    #[error("observable is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),
    #[error("matrix is not unitary (deviation {0:e})")]
    NotUnitary(f64),
    #[error("operator lives on {found:?}, expected {expected:?}")]
    VolumeMismatch {
        expected: Vec<SiteId>,
        found: Vec<SiteId>,
    },
    #[error("small system {0:?} is not inside the volume")]
    SmallSystemOutside(Vec<SiteId>),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Op(#[from] OpError),
}

fn check_horizon(horizon: f64) -> Result<(), ThermoError> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(ThermoError::NonPositiveHorizon(horizon))
    }
}

/// A density matrix on a finite volume.
#[derive(Clone, Debug)]
pub struct StateRep {
    density: DenseOperator,
}

impl StateRep {
    /// Checks Hermiticity, unit trace and positivity to [`STATE_TOL`].
    pub fn new(density: DenseOperator) -> Result<Self, ThermoError> {
        if !density.is_hermitian(STATE_TOL) {
            return Err(ThermoError::InvalidState(format!(
                "Hermitian deviation {:e}",
                density.hermitian_deviation()
            )));
        }
        let tr = density.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(ThermoError::InvalidState(format!("trace {tr}")));
        }
        let min = density.spectral()?.min();
        if min < -STATE_TOL {
            return Err(ThermoError::InvalidState(format!("eigenvalue {min:e}")));
        }
        Ok(StateRep { density })
    }

    /// Normalized trace `1/dim`.
    pub fn maximally_mixed(volume: Volume) -> Self {
        let d = volume.dim() as f64;
        StateRep {
            density: DenseOperator::identity(volume).scale_real(1.0 / d),
        }
    }

    pub fn volume(&self) -> &Volume {
        self.density.volume()
    }

    pub fn density(&self) -> &DenseOperator {
        &self.density
    }

    /// `tr(ρA)`, embedding `A` if it lives on a subvolume.
    pub fn expectation(&self, a: &DenseOperator) -> Result<c64, ThermoError> {
        let a = lift(a, self.volume())?;
        Ok(self.density.trace_product(&a)?)
    }
}

fn lift(a: &DenseOperator, volume: &Volume) -> Result<DenseOperator, ThermoError> {
    if a.volume() == volume {
        return Ok(a.clone());
    }
    a.embed(volume).map_err(|_| ThermoError::VolumeMismatch {
        expected: volume.sites().to_vec(),
        found: a.volume().sites().to_vec(),
    })
}

/// `exp(−βH)/tr exp(−βH)`, exponentiating after shifting the exponent so its
/// largest value is zero.
pub fn gibbs(h: &DenseOperator, beta: f64) -> Result<StateRep, ThermoError> {
    gibbs_from_spectral(&h.spectral()?, beta)
}

fn gibbs_from_spectral(sp: &SpectralData, beta: f64) -> Result<StateRep, ThermoError> {
    let top = sp
        .values()
        .iter()
        .map(|&v| -beta * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = sp.values().iter().map(|&v| (-beta * v - top).exp()).sum();
    let density = sp.apply(|v| (-beta * v - top).exp() / z)?;
    Ok(StateRep { density })
}

/// The reference state `exp(−G_Λ)` of a built volume. It is cross-checked
/// against the tensor product of the reservoir Gibbs states with the
/// normalized trace on `S`.
pub fn initial_state(
    vols: &VolumeOperators,
    betas: &BTreeMap<Region, f64>,
) -> Result<StateRep, ThermoError> {
    if betas != vols.betas() {
        return Err(ThermoError::InconsistentBetas);
    }
    let product = product_state(vols)?;
    let deviation = product.density().sub(vols.reference_density())?.max_abs();
    if deviation > STATE_TOL {
        return Err(ThermoError::ProductMismatch { deviation });
    }
    Ok(StateRep {
        density: vols.reference_density().clone(),
    })
}

/// `⊗_a gibbs(H_a + B_a, β_a) ⊗ 1_S/dim S`, assembled factor by factor.
pub fn product_state(vols: &VolumeOperators) -> Result<StateRep, ThermoError> {
    let small = vols.volume().restrict(vols.small_system())?;
    let mut rho = StateRep::maximally_mixed(small).density;
    for r in vols.reservoirs() {
        let sites = vols.reservoir_sites(r);
        if sites.is_empty() {
            continue;
        }
        let block = vols
            .reservoir_hamiltonian(r)
            .add(vols.perturbation(r))?
            .reduce(sites)?;
        rho = rho.tensor(&gibbs(&block, vols.beta(r))?.density)?;
    }
    Ok(StateRep {
        density: lift(&rho, vols.volume())?,
    })
}

/// Outcome of a KMS boundary-condition check.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct KmsReport {
    /// `|ω(A·α^{iβ}B) − ω(BA)|`.
    pub residual: f64,
    /// `‖A‖·‖B‖`.
    pub scale: f64,
}

impl KmsReport {
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.residual <= rel_tol * self.scale.max(f64::MIN_POSITIVE)
    }
}

/// Checks `ω(A·e^{−βH}Be^{βH}) = ω(BA)` for `ω = gibbs(H, β)`. States not
/// produced from `(H, β)` are refused, since the residual would mean nothing.
pub fn kms_check(
    state: &StateRep,
    h: &DenseOperator,
    beta: f64,
    a: &DenseOperator,
    b: &DenseOperator,
) -> Result<KmsReport, ThermoError> {
    let sp = h.spectral()?;
    let expected = gibbs_from_spectral(&sp, beta)?;
    let deviation = lift(&expected.density, state.volume())?
        .sub(&state.density)?
        .max_abs();
    if deviation > STATE_TOL {
        return Err(ThermoError::NotGibbs { deviation });
    }
    let (a, b) = (lift(a, sp.volume())?, lift(b, sp.volume())?);
    let mut m = sp.to_eigenbasis(b.matrix());
    let vals = sp.values();
    for k in 0..vals.len() {
        for j in 0..vals.len() {
            m[(j, k)] *= (-beta * (vals[j] - vals[k])).exp();
        }
    }
    let shifted = DenseOperator::new(sp.volume().clone(), sp.from_eigenbasis(m.as_ref()))?;
    let lhs = state.expectation(&a.mul(&shifted)?)?;
    let rhs = state.expectation(&b.mul(&a)?)?;
    Ok(KmsReport {
        residual: (lhs - rhs).norm(),
        scale: a.op_norm() * b.op_norm(),
    })
}

/// `(1/T)∫_0^T e^{itΔ} dt`, written as `sin(x)/x + i(1 − cos x)/x` with
/// `x = TΔ` to avoid cancellation.
pub fn averaging_kernel(delta: f64, horizon: f64) -> c64 {
    if delta.abs() < ZERO_FREQUENCY {
        return c64::new(1.0, 0.0);
    }
    let x = delta * horizon;
    let half = 0.5 * x;
    c64::new(x.sin() / x, 2.0 * half.sin() * half.sin() / x)
}

/// An observable expressed in the generator's eigenbasis.
#[derive(Clone, Debug)]
pub struct EigenObservable {
    matrix: Matrix,
}

/// The state `σ` seen from the eigenbasis of a generator, for repeated
/// time averages and endpoint values.
#[derive(Clone, Debug)]
pub struct SteadyStateProxy<'a> {
    spectral: &'a SpectralData,
    state: Matrix,
}

impl<'a> SteadyStateProxy<'a> {
    pub fn new(spectral: &'a SpectralData, state: &StateRep) -> Result<Self, ThermoError> {
        let density = lift(&state.density, spectral.volume())?;
        Ok(SteadyStateProxy {
            spectral,
            state: spectral.to_eigenbasis(density.matrix()),
        })
    }

    pub fn observable(&self, a: &DenseOperator) -> Result<EigenObservable, ThermoError> {
        let a = lift(a, self.spectral.volume())?;
        Ok(EigenObservable {
            matrix: self.spectral.to_eigenbasis(a.matrix()),
        })
    }

    /// `W_{jk} = σ_{kj} w(λ_j − λ_k)`, filled column by column.
    fn weights<F: Fn(f64) -> c64>(&self, weight: F) -> Weights {
        let vals = self.spectral.values();
        let n = vals.len();
        let mut m = Matrix::zeros(n, n);
        for k in 0..n {
            let state = self.state.col_as_slice(k);
            for (j, out) in m.col_as_slice_mut(k).iter_mut().enumerate() {
                *out = state[j].conj() * weight(vals[j] - vals[k]);
            }
        }
        Weights { matrix: m }
    }

    /// Weights turning an observable into `ρ_T(A)`.
    pub fn averaging_weights(&self, horizon: f64) -> Result<Weights, ThermoError> {
        check_horizon(horizon)?;
        Ok(self.weights(|d| averaging_kernel(d, horizon)))
    }

    /// Weights turning an observable into `σ(α^t A) − σ(A)`.
    pub fn increment_weights(&self, t: f64) -> Weights {
        self.weights(|d| c64::from_polar(1.0, t * d) - 1.0)
    }

    /// `σ(A)`.
    pub fn initial(&self, a: &EigenObservable) -> c64 {
        self.weights(|_| c64::new(1.0, 0.0)).apply(a)
    }

    /// `σ(α^t A)`.
    pub fn at(&self, a: &EigenObservable, t: f64) -> c64 {
        self.weights(|d| c64::from_polar(1.0, t * d)).apply(a)
    }

    /// `ρ_T(A) = (1/T)∫_0^T σ(α^t A) dt`.
    pub fn average(&self, a: &EigenObservable, horizon: f64) -> Result<c64, ThermoError> {
        Ok(self.averaging_weights(horizon)?.apply(a))
    }

    /// `σ(α^t A) − σ(A)`, summed without forming either term.
    pub fn increment(&self, a: &EigenObservable, t: f64) -> c64 {
        self.increment_weights(t).apply(a)
    }
}

/// Matrix elements of `σ` in the eigenbasis, each multiplied by a function
/// of its Bohr frequency; pairing with an observable yields a time-dependent
/// or time-averaged expectation.
#[derive(Clone, Debug)]
pub struct Weights {
    matrix: Matrix,
}

impl Weights {
    /// `Σ_{jk} W_{jk} A_{jk}`.
    pub fn apply(&self, a: &EigenObservable) -> c64 {
        let n = self.matrix.nrows();
        let mut sum = c64::new(0.0, 0.0);
        for k in 0..n {
            let (w, x) = (self.matrix.col_as_slice(k), a.matrix.col_as_slice(k));
            sum += w.iter().zip(x).map(|(w, x)| w * x).sum::<c64>();
        }
        sum
    }
}

/// `ρ_T(A)` under the dynamics generated by `H_{BΛ}`.
pub fn time_avg_expectation(
    vols: &VolumeOperators,
    state: &StateRep,
    a: &DenseOperator,
    horizon: f64,
) -> Result<f64, ThermoError> {
    check_horizon(horizon)?;
    let deviation = a.hermitian_deviation();
    if !a.is_hermitian(1e-10) {
        return Err(ThermoError::NotHermitian(deviation));
    }
    let proxy = SteadyStateProxy::new(vols.generator_spectral(), state)?;
    Ok(proxy.average(&proxy.observable(a)?, horizon)?.re)
}

/// A quadrature value with its error estimate.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct QuadratureEstimate {
    pub value: f64,
    /// `|S_n − S_{n/2}|`, a conservative bound on the error of `S_n`.
    pub error: f64,
}

/// Composite Simpson average of `t ↦ tr(σ U_t A U_t†)` on `intervals`
/// (rounded up to a multiple of 4) subintervals, with `U_t` formed
/// explicitly. Independent of the spectral averaging kernel.
pub fn time_avg_simpson(
    vols: &VolumeOperators,
    state: &StateRep,
    a: &DenseOperator,
    horizon: f64,
    intervals: usize,
) -> Result<QuadratureEstimate, ThermoError> {
    check_horizon(horizon)?;
    let n = intervals.max(4).div_ceil(4) * 4;
    let sp = vols.generator_spectral();
    let a = lift(a, sp.volume())?;
    let rho = lift(&state.density, sp.volume())?;
    let h = horizon / n as f64;
    let values = (0..=n)
        .map(|i| {
            let u = sp.unitary(i as f64 * h);
            let evolved = u.mul(&a)?.mul(&u.adjoint())?;
            Ok(rho.trace_product(&evolved)?.re)
        })
        .collect::<Result<Vec<f64>, ThermoError>>()?;
    let simpson = |step: usize| {
        let m = n / step;
        let w = h * step as f64;
        let mut s = values[0] + values[n];
        for i in 1..m {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * values[i * step];
        }
        s * w / 3.0 / horizon
    };
    let fine = simpson(1);
    Ok(QuadratureEstimate {
        value: fine,
        error: (fine - simpson(2)).abs(),
    })
}

/// Entropy balance of one volume at one horizon.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyReport {
    #[serde(rename = "T")]
    pub horizon: f64,
    /// `ρ_T(i[H_B, H_a + B_a])` per reservoir.
    pub fluxes: BTreeMap<Region, f64>,
    /// `Σ_a β_a flux_a`.
    pub e: f64,
    /// `(1/T)(σ(α^T G) − σ(G))`.
    pub e_telescoped: f64,
    /// `Σ_a flux_a`.
    pub sum_rule_residual: f64,
    /// `2‖W‖/T`.
    pub tol_sum_rule: f64,
    /// `‖G‖`, the scale of the nonnegativity tolerance.
    pub g_norm: f64,
}

impl EntropyReport {
    /// `e_tel ≥ −1e-10‖G‖`.
    pub fn nonnegative(&self) -> bool {
        self.e_telescoped >= -1e-10 * self.g_norm
    }

    /// Both routes agree to `1e-8·max(1, |e|)`.
    pub fn routes_agree(&self) -> bool {
        (self.e - self.e_telescoped).abs() <= 1e-8 * self.e.abs().max(1.0)
    }

    pub fn sum_rule_holds(&self) -> bool {
        self.sum_rule_residual.abs() <= self.tol_sum_rule + 1e-10
    }
}

/// Shared eigenbasis data for every horizon of one volume.
struct EntropyAccounting<'a> {
    proxy: SteadyStateProxy<'a>,
    fluxes: Vec<(Region, f64, EigenObservable)>,
    g: EigenObservable,
    g_norm: f64,
    w_norm: f64,
}

impl<'a> EntropyAccounting<'a> {
    fn new(vols: &'a VolumeOperators) -> Result<Self, ThermoError> {
        let state = StateRep {
            density: vols.reference_density().clone(),
        };
        let proxy = SteadyStateProxy::new(vols.generator_spectral(), &state)?;
        let mut fluxes = Vec::new();
        for r in vols.reservoirs() {
            let op = if vols.has_perturbation() {
                let block = vols.reservoir_hamiltonian(r).add(vols.perturbation(r))?;
                i_commutator(vols.generator(), &block)?.hermitian_part()
            } else {
                vols.current(r).clone()
            };
            fluxes.push((r, vols.beta(r), proxy.observable(&op)?));
        }
        let g = proxy.observable(vols.g())?;
        Ok(EntropyAccounting {
            proxy,
            fluxes,
            g,
            g_norm: vols.g_norm(),
            w_norm: vols.interface_norm(),
        })
    }

    fn report(&self, horizon: f64) -> Result<EntropyReport, ThermoError> {
        check_horizon(horizon)?;
        let averaging = self.proxy.averaging_weights(horizon)?;
        let mut fluxes = BTreeMap::new();
        let (mut e, mut sum) = (0.0, 0.0);
        for (r, beta, op) in &self.fluxes {
            let f = averaging.apply(op).re;
            fluxes.insert(*r, f);
            e += beta * f;
            sum += f;
        }
        Ok(EntropyReport {
            horizon,
            fluxes,
            e,
            e_telescoped: self.proxy.increment(&self.g, horizon).re / horizon,
            sum_rule_residual: sum,
            tol_sum_rule: 2.0 * self.w_norm / horizon,
            g_norm: self.g_norm,
        })
    }
}

/// Entropy production of `σ = exp(−G)` averaged over `[0, T]`.
pub fn entropy_production(vols: &VolumeOperators, horizon: f64) -> Result<EntropyReport, ThermoError> {
    check_horizon(horizon)?;
    EntropyAccounting::new(vols)?.report(horizon)
}

/// [`entropy_production`] at several horizons, sharing one change of basis.
pub fn entropy_production_sweep(
    vols: &VolumeOperators,
    horizons: &[f64],
) -> Result<Vec<EntropyReport>, ThermoError> {
    for &t in horizons {
        check_horizon(t)?;
    }
    let acc = EntropyAccounting::new(vols)?;
    horizons.iter().map(|&t| acc.report(t)).collect()
}

/// Direction of the heat flow between two reservoirs.
#[derive(Clone, Debug, Serialize)]
pub struct HeatReport {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub betas: [f64; 2],
    /// Flux into the first reservoir.
    pub flux_1: f64,
    /// `(β_1 − β_2)·flux_1`.
    pub lhs: f64,
    /// `−|β_2|·2‖W‖/T − 1e-10`.
    pub bound: f64,
    /// `lhs − bound`.
    pub margin: f64,
    pub ok: bool,
}

/// Checks `(β_1 − β_2)·flux_1 ≥ −β_2·2‖W‖/T`: energy flows into the colder
/// reservoir, up to the sum-rule slack of a finite horizon.
pub fn heat_direction_check(vols: &VolumeOperators, horizon: f64) -> Result<HeatReport, ThermoError> {
    let reservoirs = vols.reservoirs();
    if reservoirs.len() != 2 {
        return Err(ThermoError::ReservoirCount(reservoirs.len()));
    }
    let report = entropy_production(vols, horizon)?;
    Ok(heat_report(vols, &report))
}

/// Heat-direction verdict derived from an existing entropy report.
pub fn heat_report(vols: &VolumeOperators, report: &EntropyReport) -> HeatReport {
    let rs = vols.reservoirs();
    let betas = [vols.beta(rs[0]), vols.beta(rs[1])];
    let flux_1 = report.fluxes[&rs[0]];
    let lhs = (betas[0] - betas[1]) * flux_1;
    let bound = -betas[1].abs() * report.tol_sum_rule - 1e-10;
    HeatReport {
        horizon: report.horizon,
        betas,
        flux_1,
        lhs,
        bound,
        margin: lhs - bound,
        ok: lhs >= bound,
    }
}

/// Entropy production under two accountings of the same dynamics.
#[derive(Clone, Debug, Serialize)]
pub struct RedrawReport {
    #[serde(rename = "T")]
    pub horizon: f64,
    /// With the original small system.
    pub e: f64,
    /// With the enlarged small system.
    pub e_prime: f64,
    /// `|e − e′|`.
    pub gap: f64,
    /// `(2/T)‖Σ_a β_a(H_a − H′_a)‖ + 1e-9`.
    pub bound: f64,
    pub ok: bool,
}

/// Recomputes the entropy production after moving reservoir sites into the
/// small system. The state and dynamics stay those of the original
/// decomposition; only the reservoir energies used in the accounting change.
pub fn boundary_redraw_check(
    spec: &ModelSpec,
    new_small: &[SiteId],
    sites: &[SiteId],
    horizon: f64,
) -> Result<RedrawReport, ThermoError> {
    Ok(boundary_redraw_sweep(spec, new_small, sites, &[horizon])?.remove(0))
}

/// [`boundary_redraw_check`] at several horizons.
pub fn boundary_redraw_sweep(
    spec: &ModelSpec,
    new_small: &[SiteId],
    sites: &[SiteId],
    horizons: &[f64],
) -> Result<Vec<RedrawReport>, ThermoError> {
    for &t in horizons {
        check_horizon(t)?;
    }
    let redrawn = spec.redraw(new_small)?;
    let outside: Vec<SiteId> = new_small.iter().copied().filter(|s| !sites.contains(s)).collect();
    if !outside.is_empty() {
        return Err(ThermoError::SmallSystemOutside(outside));
    }
    let vols = build(spec, sites, None)?;
    let volume = vols.volume();
    let state = StateRep {
        density: vols.reference_density().clone(),
    };
    let proxy = SteadyStateProxy::new(vols.generator_spectral(), &state)?;

    let mut original = Vec::new();
    let mut redrawn_ops = Vec::new();
    let mut difference = DenseOperator::zero(volume.clone());
    for r in vols.reservoirs() {
        let beta = vols.beta(r);
        let mut h_new = DenseOperator::zero(volume.clone());
        for t in redrawn.restrict(r)? {
            if t.support().iter().all(|&s| volume.contains(s)) {
                h_new.add_assign(&t.operator().embed(volume)?)?;
            }
        }
        let current_new = i_commutator(vols.hamiltonian(), &h_new)?.hermitian_part();
        difference.add_assign(&vols.reservoir_hamiltonian(r).sub(&h_new)?.scale_real(beta))?;
        original.push((beta, proxy.observable(vols.current(r))?));
        redrawn_ops.push((beta, proxy.observable(&current_new)?));
    }
    let d_norm = difference.op_norm();

    horizons
        .iter()
        .map(|&t| {
            let weights = proxy.averaging_weights(t)?;
            let total = |ops: &[(f64, EigenObservable)]| -> f64 {
                ops.iter().map(|(b, op)| b * weights.apply(op).re).sum()
            };
            let e = total(&original);
            let e_prime = total(&redrawn_ops);
            let gap = (e - e_prime).abs();
            let bound = 2.0 * d_norm / t + 1e-9;
            Ok(RedrawReport {
                horizon: t,
                e,
                e_prime,
                gap,
                bound,
                ok: gap <= bound,
            })
        })
        .collect()
}

/// Increasing functions used to instantiate the trace inequality, each
/// paired with a convex antiderivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MonotoneFn {
    Identity,
    Cube,
    NegExp,
    Tanh,
}

impl MonotoneFn {
    pub const ALL: [MonotoneFn; 4] = [
        MonotoneFn::Identity,
        MonotoneFn::Cube,
        MonotoneFn::NegExp,
        MonotoneFn::Tanh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MonotoneFn::Identity => "s",
            MonotoneFn::Cube => "s^3",
            MonotoneFn::NegExp => "-exp(-s)",
            MonotoneFn::Tanh => "tanh",
        }
    }

    pub fn eval(self, s: f64) -> f64 {
        match self {
            MonotoneFn::Identity => s,
            MonotoneFn::Cube => s * s * s,
            MonotoneFn::NegExp => -(-s).exp(),
            MonotoneFn::Tanh => s.tanh(),
        }
    }

    /// A convex `f` with `f′ = φ`.
    pub fn antiderivative(self, s: f64) -> f64 {
        match self {
            MonotoneFn::Identity => 0.5 * s * s,
            MonotoneFn::Cube => 0.25 * s.powi(4),
            MonotoneFn::NegExp => (-s).exp(),
            // ln cosh s, stable for large |s|
            MonotoneFn::Tanh => s.abs() + (-2.0 * s.abs()).exp().ln_1p() - std::f64::consts::LN_2,
        }
    }
}

/// Witness for `tr(φ(A)UAU⁻¹) ≤ tr(φ(A)A)`.
#[derive(Clone, Debug, Serialize)]
pub struct KleinWitness {
    /// Eigenvalues of `A`, ascending, repeated by multiplicity.
    pub eigenvalues: Vec<f64>,
    /// `c_kl = tr(E_k U E_l U⁻¹)` for the rank-one eigenprojections `E_k`.
    pub c: Vec<Vec<f64>>,
    pub lhs: f64,
    pub rhs: f64,
    /// `Σ_{kl} φ(a_k) a_l c_kl`, which must reproduce `lhs`.
    pub witness_lhs: f64,
    /// `tr(f(B) − f(A) − (B − A)φ(A))` with `B = UAU⁻¹`, when an
    /// antiderivative `f` was supplied.
    pub footnote_gap: Option<f64>,
    /// `n·‖A‖·sup|φ|` over the spectrum.
    pub scale: f64,
}

impl KleinWitness {
    /// Largest deviation of a row or column sum of `c` from 1.
    pub fn stochastic_deviation(&self) -> f64 {
        let n = self.c.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            let row: f64 = self.c[i].iter().sum();
            let col: f64 = self.c.iter().map(|r| r[i]).sum();
            worst = worst.max((row - 1.0).abs()).max((col - 1.0).abs());
        }
        worst
    }

    pub fn min_entry(&self) -> f64 {
        self.c.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// `max(0, lhs − rhs)/scale`.
    pub fn violation(&self) -> f64 {
        (self.lhs - self.rhs).max(0.0) / self.scale
    }

    /// `Σ_l Σ_{k≥j} c_kl` for each `j`; equals `n − j` (0-based).
    pub fn tail_counts(&self) -> Vec<f64> {
        let n = self.c.len();
        (0..n)
            .map(|j| self.c[j..].iter().flatten().sum())
            .collect()
    }

    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + 1e-10 * self.scale
            && self.stochastic_deviation() <= 1e-10
            && self.min_entry() >= -1e-12
            && self.footnote_gap.is_none_or(|g| g >= -1e-10 * self.scale.max(1.0))
    }
}

/// Builds the witness for `A` Hermitian, `U` unitary and `φ` nondecreasing
/// on the spectrum of `A`. Monotonicity is checked on the eigenvalues only.
pub fn klein_check(
    a: &DenseOperator,
    u: &DenseOperator,
    phi: &dyn Fn(f64) -> f64,
    antiderivative: Option<&dyn Fn(f64) -> f64>,
) -> Result<KleinWitness, ThermoError> {
    if a.volume() != u.volume() {
        return Err(ThermoError::VolumeMismatch {
            expected: a.volume().sites().to_vec(),
            found: u.volume().sites().to_vec(),
        });
    }
    let dev = unitary_deviation(u.matrix());
    if dev > UNITARY_TOL {
        return Err(ThermoError::NotUnitary(dev));
    }
    if !a.is_hermitian(1e-10) {
        return Err(ThermoError::NotHermitian(a.hermitian_deviation()));
    }
    let sp = a.spectral()?;
    let vals = sp.values().to_vec();
    let phis: Vec<f64> = vals.iter().map(|&v| phi(v)).collect();
    if let Some(w) = phis.windows(2).find(|w| w[1] < w[0]) {
        return Err(ThermoError::NonMonotone {
            left: w[0],
            right: w[1],
        });
    }
    let n = vals.len();
    let v = sp.vectors();
    let overlap: Matrix = &(v.adjoint() * u.matrix()) * v;
    let c: Vec<Vec<f64>> = (0..n)
        .map(|k| (0..n).map(|l| overlap[(k, l)].norm_sqr()).collect())
        .collect();

    let phi_a = sp.apply(phi)?;
    let conjugated = u.mul(a)?.mul(&u.adjoint())?.hermitian_part();
    let lhs = phi_a.trace_product(&conjugated)?.re;
    let rhs = phi_a.trace_product(a)?.re;
    let mut witness_lhs = 0.0;
    for k in 0..n {
        for l in 0..n {
            witness_lhs += phis[k] * vals[l] * c[k][l];
        }
    }
    let footnote_gap = match antiderivative {
        Some(f) => {
            let f_b: f64 = conjugated.spectral()?.values().iter().map(|&x| f(x)).sum();
            let f_a: f64 = vals.iter().map(|&x| f(x)).sum();
            let cross = conjugated.sub(a)?.trace_product(&phi_a)?.re;
            Some(f_b - f_a - cross)
        }
        None => None,
    };
    let norm_a = vals.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let sup_phi = phis.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(KleinWitness {
        eigenvalues: vals,
        c,
        lhs,
        rhs,
        witness_lhs,
        footnote_gap,
        scale: (n as f64 * norm_a * sup_phi).max(f64::MIN_POSITIVE),
    })
}

/// [`klein_check`] with a function from the built-in family, including the
/// convex-antiderivative form.
pub fn klein_check_family(
    a: &DenseOperator,
    u: &DenseOperator,
    phi: MonotoneFn,
) -> Result<KleinWitness, ThermoError> {
    klein_check(a, u, &|s| phi.eval(s), Some(&|s| phi.antiderivative(s)))
}

/// Aggregate of a seeded trace-inequality fuzz run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KleinFuzzReport {
    pub rng: String,
    pub seed: u64,
    pub trials: usize,
    pub max_dim: usize,
    pub passes: usize,
    /// Largest `max(0, lhs − rhs)/scale`.
    pub max_violation: f64,
    /// Largest row or column sum deviation of `c` from 1.
    pub max_stochastic_deviation: f64,
    pub min_entry: f64,
    /// Largest `|lhs − witness_lhs|/scale`.
    pub max_witness_mismatch: f64,
    /// Trials where `lhs = rhs` to `1e-12·scale`.
    pub equalities: usize,
}

impl KleinFuzzReport {
    pub fn all_pass(&self) -> bool {
        self.passes == self.trials
    }
}

/// Random instance `i` of a fuzz run: its own ChaCha stream, so trials are
/// independent of evaluation order.
pub fn klein_instance(seed: u64, trial: usize, max_dim: usize) -> (DenseOperator, DenseOperator, MonotoneFn) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    let n = rng.random_range(1..=max_dim.max(1));
    let volume = Volume::new([(SiteId(0), n)]).expect("positive dimension");
    let a = sample::random_hermitian(&mut rng, &volume);
    let u = sample::random_unitary(&mut rng, &volume);
    (a, u, MonotoneFn::ALL[trial % MonotoneFn::ALL.len()])
}

/// Runs [`klein_check_family`] on `trials` seeded random instances of
/// dimension `1..=max_dim`, cycling through [`MonotoneFn::ALL`].
pub fn klein_fuzz(trials: usize, max_dim: usize, seed: u64) -> Result<KleinFuzzReport, ThermoError> {
    let witnesses = (0..trials)
        .map(|i| {
            let (a, u, phi) = klein_instance(seed, i, max_dim);
            klein_check_family(&a, &u, phi)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize_klein(seed, max_dim, &witnesses))
}

/// Folds witnesses (in trial order) into a fuzz report.
pub fn summarize_klein(seed: u64, max_dim: usize, witnesses: &[KleinWitness]) -> KleinFuzzReport {
    let mut report = KleinFuzzReport {
        rng: sample::RNG_NAME.to_string(),
        seed,
        trials: witnesses.len(),
        max_dim,
        passes: 0,
        max_violation: 0.0,
        max_stochastic_deviation: 0.0,
        min_entry: f64::INFINITY,
        max_witness_mismatch: 0.0,
        equalities: 0,
    };
    for w in witnesses {
        report.passes += usize::from(w.holds());
        report.max_violation = report.max_violation.max(w.violation());
        report.max_stochastic_deviation = report.max_stochastic_deviation.max(w.stochastic_deviation());
        report.min_entry = report.min_entry.min(w.min_entry());
        report.max_witness_mismatch = report
            .max_witness_mismatch
            .max((w.lhs - w.witness_lhs).abs() / w.scale);
        report.equalities += usize::from((w.lhs - w.rhs).abs() <= 1e-12 * w.scale);
    }
    report
}

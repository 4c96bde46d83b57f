//! Seeded generators for operators and models.
//!
//! Randomness comes from [`ChaCha8Rng`], whose output stream is fixed by
//! the seed on every platform. Normal deviates use `rand_distr`'s ziggurat.

use std::collections::BTreeMap;

use faer::Mat;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{
    InteractionTerm, ModelSpec, PerturbationFamily, PerturbationVolume, ProtectedSet, Region,
    RegionMap, SiteSpec,
};
use crate::opalg::{c64, intersects, DenseOperator, Matrix, SiteId, Volume};

/// Name of the generator, echoed in report headers.
pub const RNG_NAME: &str = "ChaCha8 (rand_chacha 0.9)";

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
}

/// Pauli matrix acting on a single qubit site.
pub fn pauli(site: u32, which: Pauli) -> DenseOperator {
    let vol = Volume::new([(SiteId(site), 2)]).expect("one site");
    let z = c64::new(0.0, 0.0);
    let one = c64::new(1.0, 0.0);
    let i = c64::new(0.0, 1.0);
    let rows = match which {
        Pauli::X => [[z, one], [one, z]],
        Pauli::Y => [[z, -i], [i, z]],
        Pauli::Z => [[one, z], [z, -one]],
    };
    let m = Mat::from_fn(2, 2, |r, c| rows[r][c]);
    DenseOperator::new(vol, m).expect("2x2")
}

/// `σ^x⊗σ^x + σ^y⊗σ^y` on two qubit sites (norm 2).
pub fn hopping(a: u32, b: u32) -> DenseOperator {
    let xx = pauli(a, Pauli::X).tensor(&pauli(b, Pauli::X)).expect("disjoint");
    let yy = pauli(a, Pauli::Y).tensor(&pauli(b, Pauli::Y)).expect("disjoint");
    xx.add(&yy).expect("same volume")
}

/// `σ^z⊗σ^z` on two qubit sites.
pub fn zz(a: u32, b: u32) -> DenseOperator {
    pauli(a, Pauli::Z).tensor(&pauli(b, Pauli::Z)).expect("disjoint")
}

pub fn term(op: DenseOperator) -> InteractionTerm {
    InteractionTerm::new(op).expect("valid term")
}

fn gaussian_matrix<R: Rng>(rng: &mut R, n: usize) -> Matrix {
    Mat::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

/// `(M + M†)/2` for a complex Gaussian `M`.
pub fn random_hermitian<R: Rng>(rng: &mut R, volume: &Volume) -> DenseOperator {
    let m = gaussian_matrix(rng, volume.dim());
    DenseOperator::new(volume.clone(), m)
        .expect("square")
        .hermitian_part()
}

/// Unitary obtained by Gram–Schmidt orthonormalization (with one
/// reorthogonalization pass) of a complex Gaussian matrix.
pub fn random_unitary<R: Rng>(rng: &mut R, volume: &Volume) -> DenseOperator {
    let n = volume.dim();
    let mut q = gaussian_matrix(rng, n);
    for j in 0..n {
        for _ in 0..2 {
            for k in 0..j {
                let mut proj = c64::new(0.0, 0.0);
                for i in 0..n {
                    proj += q[(i, k)].conj() * q[(i, j)];
                }
                for i in 0..n {
                    let v = q[(i, k)];
                    q[(i, j)] -= proj * v;
                }
            }
        }
        let norm = (0..n).map(|i| q[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        for i in 0..n {
            q[(i, j)] /= norm;
        }
    }
    DenseOperator::new(volume.clone(), q).expect("square")
}

/// Qubit chain `0..n` with uniform field `field·σ^z` on every site and
/// `coupling·(σ^xσ^x + σ^yσ^y)` on nearest neighbours. Sites in `small`
/// form the small system; sites left of it belong to reservoir 1, sites
/// right of it to reservoir 2.
pub fn xy_chain(n: u32, small: &[u32], field: f64, coupling: f64, betas: (f64, f64), lambda: f64) -> ModelSpec {
    let lo = *small.iter().min().expect("nonempty small system");
    let hi = *small.iter().max().expect("nonempty small system");
    let sites = (0..n)
        .map(|i| SiteSpec {
            id: SiteId(i),
            local_dim: 2,
        })
        .collect();
    let regions = RegionMap::new((0..n).map(|i| {
        let r = if small.contains(&i) {
            0
        } else if i < lo {
            1
        } else if i > hi {
            2
        } else {
            0
        };
        (SiteId(i), Region(r))
    }));
    let mut terms = Vec::new();
    for i in 0..n {
        if field != 0.0 {
            terms.push(term(pauli(i, Pauli::Z).scale_real(field)));
        }
    }
    for i in 0..n.saturating_sub(1) {
        terms.push(term(hopping(i, i + 1).scale_real(coupling)));
    }
    let betas = BTreeMap::from([(Region(1), betas.0), (Region(2), betas.1)]);
    ModelSpec::new(sites, regions, terms, lambda, betas).expect("chain is well formed")
}

/// Three-qubit chain `R1={0}, S={1}, R2={2}`: fields of norm `0.5`, hopping
/// terms of norm `1`, `λ = 0.5`, `β = (2, 1)`.
pub fn standard_chain() -> ModelSpec {
    xy_chain(3, &[1], 0.5, 0.5, (2.0, 1.0), 0.5)
}

/// Tilted-field chain with `σ^zσ^z` couplings added, which breaks the
/// free-fermion structure of [`xy_chain`] and dephases faster.
pub fn mixing_chain(n: u32, small: &[u32], betas: (f64, f64), seed: u64) -> ModelSpec {
    let base = xy_chain(n, small, 0.0, 0.5, betas, 0.5);
    let mut rng = rng(seed);
    let mut terms: Vec<InteractionTerm> = base.terms().to_vec();
    for i in 0..n {
        let hz: f64 = rng.random_range(0.3..1.2);
        let hx: f64 = rng.random_range(0.2..0.6);
        let op = pauli(i, Pauli::Z)
            .scale_real(hz)
            .add(&pauli(i, Pauli::X).scale_real(hx))
            .expect("same site");
        terms.push(term(op));
    }
    for i in 0..n.saturating_sub(1) {
        let j: f64 = rng.random_range(0.2..0.6);
        terms.push(term(zz(i, i + 1).scale_real(j)));
    }
    ModelSpec::new(
        base.sites().to_vec(),
        base.regions().clone(),
        terms,
        base.lambda(),
        base.betas().clone(),
    )
    .expect("chain is well formed")
}

/// Parameters for [`random_model`].
#[derive(Clone, Debug)]
pub struct RandomModelParams {
    pub min_sites: u32,
    pub max_sites: u32,
    pub local_dims: Vec<usize>,
    pub min_reservoirs: u32,
    pub max_reservoirs: u32,
    pub max_dim: usize,
    pub with_perturbation: bool,
}

impl Default for RandomModelParams {
    fn default() -> Self {
        RandomModelParams {
            min_sites: 3,
            max_sites: 10,
            local_dims: vec![2, 3],
            min_reservoirs: 2,
            max_reservoirs: 3,
            max_dim: 1024,
            with_perturbation: false,
        }
    }
}

/// A randomly generated model together with its perturbation family.
#[derive(Clone, Debug)]
pub struct RandomModel {
    pub spec: ModelSpec,
    pub perturbation: PerturbationFamily,
}

/// Random valid model: random Hermitian one-site terms everywhere, nearest
/// neighbour couplings along each reservoir, each reservoir attached to the
/// small system by a single random two-site term, and no term joining two
/// reservoirs directly.
///
/// With `with_perturbation`, the full volume gets random one-site reservoir
/// terms that avoid every site touched by an interface term, so that they
/// commute with the interface operator.
pub fn random_model<R: Rng>(rng: &mut R, params: &RandomModelParams) -> RandomModel {
    let reservoirs = rng.random_range(params.min_reservoirs..=params.max_reservoirs);
    let min_sites = params.min_sites.max(reservoirs + 1);
    let (n, dims) = loop {
        let n = rng.random_range(min_sites..=params.max_sites.max(min_sites));
        let dims: Vec<usize> = (0..n)
            .map(|_| params.local_dims[rng.random_range(0..params.local_dims.len())])
            .collect();
        if dims.iter().product::<usize>() <= params.max_dim {
            break (n, dims);
        }
    };
    let small_len = if n > reservoirs + 1 && rng.random_bool(0.3) { 2 } else { 1 };
    // Sites 0..small_len form S; the rest are dealt round-robin then shuffled
    // into contiguous reservoir blocks.
    let rest = n - small_len;
    let mut sizes = vec![1u32; reservoirs as usize];
    for _ in 0..(rest - reservoirs) {
        let k = rng.random_range(0..reservoirs as usize);
        sizes[k] += 1;
    }
    let mut assignment = Vec::new();
    for i in 0..small_len {
        assignment.push((SiteId(i), Region::SMALL_SYSTEM));
    }
    let mut next = small_len;
    let mut blocks = Vec::new();
    for (k, &sz) in sizes.iter().enumerate() {
        let block: Vec<u32> = (next..next + sz).collect();
        for &s in &block {
            assignment.push((SiteId(s), Region(k as u32 + 1)));
        }
        blocks.push(block);
        next += sz;
    }
    let sites: Vec<SiteSpec> = (0..n)
        .map(|i| SiteSpec {
            id: SiteId(i),
            local_dim: dims[i as usize],
        })
        .collect();
    let vol_of = |ids: &[u32]| {
        Volume::new(ids.iter().map(|&i| (SiteId(i), dims[i as usize]))).expect("distinct")
    };
    let mut terms = Vec::new();
    for i in 0..n {
        let h = random_hermitian(rng, &vol_of(&[i])).scale_real(0.5);
        terms.push(term(h));
    }
    if small_len == 2 {
        terms.push(term(random_hermitian(rng, &vol_of(&[0, 1])).scale_real(0.3)));
    }
    for block in &blocks {
        let s = rng.random_range(0..small_len);
        terms.push(term(
            random_hermitian(rng, &vol_of(&[s, block[0]])).scale_real(0.3),
        ));
        for w in block.windows(2) {
            terms.push(term(random_hermitian(rng, &vol_of(&[w[0], w[1]])).scale_real(0.3)));
        }
    }
    let lambda = rng.random_range(0.5..1.0);
    let betas: BTreeMap<Region, f64> = (1..=reservoirs)
        .map(|a| (Region(a), rng.random_range(0.2..3.0)))
        .collect();
    let spec = ModelSpec::new(sites, RegionMap::new(assignment), terms, lambda, betas)
        .expect("generated model is well formed");

    let mut perturbation = PerturbationFamily::zero();
    if params.with_perturbation {
        let interface: Vec<SiteId> = {
            let mut v: Vec<SiteId> = spec
                .interface_terms()
                .iter()
                .flat_map(|t| t.support().to_vec())
                .collect();
            v.sort();
            v.dedup();
            v
        };
        let mut b_terms = Vec::new();
        for block in &blocks {
            for &s in block {
                if !intersects(&[SiteId(s)], &interface) {
                    b_terms.push(term(random_hermitian(rng, &vol_of(&[s])).scale_real(0.4)));
                }
            }
        }
        let full: Vec<SiteId> = spec.site_ids();
        let bound_k = crate::model::lambda_norm_of(&b_terms, lambda) + 1.0;
        perturbation.volumes.insert(
            "full".to_string(),
            PerturbationVolume {
                sites: full,
                terms: b_terms,
            },
        );
        perturbation.bound_k = bound_k;
        perturbation.protected.push(ProtectedSet {
            set: interface,
            threshold: "full".to_string(),
        });
    }
    RandomModel { spec, perturbation }
}

//! Regenerates the sample models under `models/`.
//!
//! ```text
//! cargo run -p ness --example write_models -- models
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use ness::model::{ModelSpec, Region, RegionMap, SiteSpec};
use ness::opalg::SiteId;
use ness::sample::{self, hopping, pauli, term, Pauli};

/// Two reservoirs joined by a term that bypasses the small system.
fn coupled_reservoirs() -> ModelSpec {
    let sites = (0..3).map(|i| SiteSpec { id: SiteId(i), local_dim: 2 }).collect();
    let regions = RegionMap::new([
        (SiteId(0), Region(1)),
        (SiteId(1), Region(0)),
        (SiteId(2), Region(2)),
    ]);
    let terms = vec![
        term(pauli(1, Pauli::Z)),
        term(hopping(0, 1)),
        term(hopping(0, 2)),
    ];
    let betas = BTreeMap::from([(Region(1), 2.0), (Region(2), 1.0)]);
    ModelSpec::new(sites, regions, terms, 0.5, betas).expect("well formed")
}

/// Fields everywhere, hopping only inside the reservoirs.
fn decoupled() -> ModelSpec {
    let base = sample::xy_chain(4, &[1], 0.5, 0.5, (2.0, 1.0), 0.5);
    let terms = base
        .terms()
        .iter()
        .filter(|t| t.support().len() == 1 || !t.support().contains(&SiteId(1)))
        .cloned()
        .collect();
    ModelSpec::new(base.sites().to_vec(), base.regions().clone(), terms, 0.5, base.betas().clone())
        .expect("well formed")
}

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "models".into()));
    std::fs::create_dir_all(&dir)?;
    let models = [
        ("chain.json", sample::standard_chain()),
        ("chain6.json", sample::xy_chain(6, &[2], 0.5, 0.5, (2.0, 1.0), 0.5)),
        ("mixing5.json", sample::mixing_chain(5, &[2], (2.0, 1.0), 2)),
        ("decoupled.json", decoupled()),
        ("coupled_reservoirs.json", coupled_reservoirs()),
    ];
    for (name, spec) in models {
        std::fs::write(dir.join(name), spec.to_json_string() + "\n")?;
    }
    Ok(())
}

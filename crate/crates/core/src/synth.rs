//! Seeded synthetic registry data with realistic magnitudes, for scale tests
//! and benchmarks.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{
    write_entities, write_indicators, write_legal_forms, write_relationships, GraphInputs,
    IngestError, InputPaths,
};
use crate::model::{
    lei_with_check_digits, Address, CompanyRecord, CountryCode, CountryIndicators, EdgeKind,
    RelationshipEdge,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthParams {
    pub companies: usize,
    pub direct_edges: usize,
    pub ultimate_edges: usize,
    pub seed: u64,
}

impl SynthParams {
    /// Roughly the size of the full registry snapshot: 1.5M companies and
    /// 180k consolidation edges.
    pub fn registry_scale() -> Self {
        SynthParams {
            companies: 1_500_000,
            direct_edges: 87_000,
            ultimate_edges: 93_000,
            seed: 7,
        }
    }
}

// country, weight, population, gdp (million USD), tax rate
const COUNTRIES: [(&str, u32, u64, f64, f64); 24] = [
    ("US", 200, 331_000_000, 21_433_226.0, 25.8),
    ("DE", 80, 83_000_000, 3_861_124.0, 29.9),
    ("GB", 80, 67_000_000, 2_829_108.0, 19.0),
    ("FR", 60, 67_000_000, 2_715_518.0, 32.0),
    ("NL", 50, 17_400_000, 907_051.0, 25.0),
    ("IT", 50, 60_000_000, 2_003_576.0, 27.8),
    ("ES", 50, 47_000_000, 1_393_491.0, 25.0),
    ("CN", 60, 1_400_000_000, 14_342_903.0, 25.0),
    ("JP", 50, 126_000_000, 5_081_770.0, 30.6),
    ("CA", 40, 38_000_000, 1_736_426.0, 26.5),
    ("CH", 40, 8_600_000, 703_082.0, 21.1),
    ("SE", 30, 10_300_000, 530_833.0, 21.4),
    ("AU", 30, 25_000_000, 1_396_567.0, 30.0),
    ("BE", 30, 11_500_000, 533_097.0, 29.6),
    ("PL", 30, 38_000_000, 595_858.0, 19.0),
    ("IE", 30, 4_900_000, 388_699.0, 12.5),
    ("LU", 30, 620_000, 71_105.0, 24.9),
    ("DK", 20, 5_800_000, 348_078.0, 22.0),
    ("AT", 20, 8_900_000, 446_315.0, 25.0),
    ("KY", 30, 65_000, 5_600.0, 0.0),
    ("VG", 20, 30_000, 1_400.0, 0.0),
    ("BM", 10, 64_000, 7_500.0, 0.0),
    ("LI", 10, 37_910, 6_600.0, 12.5),
    ("MH", 5, 58_000, 221.278, 0.0),
];

const LEGAL_FORMS: [(&str, &str); 6] = [
    ("54M6", "Besloten Vennootschap"),
    ("8Z6G", "Aktiengesellschaft"),
    ("XTIQ", "Limited"),
    ("H0PO", "Societe Anonyme"),
    ("7TPC", "Corporation"),
    ("2HBR", "Gesellschaft mit beschraenkter Haftung"),
];

const US_REGIONS: [(&str, u32); 4] = [("US-DE", 37), ("US-CA", 25), ("US-NY", 23), ("US-TX", 15)];

fn synthetic_lei(i: usize) -> crate::model::Lei {
    lei_with_check_digits(&format!("SY{i:016}")).expect("synthetic prefix is alphanumeric")
}

fn address(rng: &mut ChaCha8Rng, country: &str) -> Address {
    let city = rng.random_range(0..25u32);
    let region = (country == "US").then(|| {
        let w = WeightedIndex::new(US_REGIONS.iter().map(|r| r.1)).unwrap();
        US_REGIONS[w.sample(rng)].0.to_string()
    });
    Address {
        country: Some(CountryCode::parse(country).unwrap()),
        region,
        city: format!("{country} City {city}"),
        postal: format!("{:05}", city * 100 + rng.random_range(0..100u32)),
        line: format!("{} Main Street", rng.random_range(1..3000u32)),
    }
}

/// Companies plus direct edges (child -> lower-numbered parent, so the
/// direct graph is acyclic) and ultimate edges pointing at the top of the
/// child's direct chain where there is one.
pub fn generate(params: &SynthParams) -> GraphInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let weights = WeightedIndex::new(COUNTRIES.iter().map(|c| c.1)).unwrap();
    let n = params.companies;

    let mut companies = Vec::with_capacity(n);
    for i in 0..n {
        let legal = COUNTRIES[weights.sample(&mut rng)].0;
        let hq = if rng.random_bool(0.024) {
            COUNTRIES[weights.sample(&mut rng)].0
        } else {
            legal
        };
        let legal_addr = address(&mut rng, legal);
        let hq_addr = if hq == legal && rng.random_bool(0.9) {
            legal_addr.clone()
        } else {
            address(&mut rng, hq)
        };
        let legal_form = rng.random_bool(0.95).then(|| {
            LEGAL_FORMS[rng.random_range(0..LEGAL_FORMS.len())]
                .0
                .to_string()
        });
        companies.push(CompanyRecord {
            lei: synthetic_lei(i),
            legal_name: format!("Synthetic Company {i}"),
            legal: legal_addr,
            hq: hq_addr,
            legal_form,
        });
    }

    let mut edges = Vec::with_capacity(params.direct_edges + params.ultimate_edges);
    let mut first_parent = vec![u32::MAX; n];
    if n >= 2 {
        for _ in 0..params.direct_edges {
            let child = rng.random_range(1..n);
            // skewed towards low indices so a few groups get large
            let u: f64 = rng.random();
            let parent = ((child as f64) * u * u * u) as usize;
            if first_parent[child] == u32::MAX {
                first_parent[child] = parent as u32;
            }
            edges.push(RelationshipEdge {
                child: synthetic_lei(child),
                parent: synthetic_lei(parent),
                kind: EdgeKind::Direct,
            });
        }
        for _ in 0..params.ultimate_edges {
            let child = rng.random_range(1..n);
            let mut top = child;
            while first_parent[top] != u32::MAX {
                top = first_parent[top] as usize;
            }
            if top == child {
                top = rng.random_range(0..child);
            }
            edges.push(RelationshipEdge {
                child: synthetic_lei(child),
                parent: synthetic_lei(top),
                kind: EdgeKind::Ultimate,
            });
        }
    }

    let indicators: BTreeMap<CountryCode, CountryIndicators> = COUNTRIES
        .iter()
        .map(|&(c, _, population, gdp, rate)| {
            let code = CountryCode::parse(c).unwrap();
            (
                code,
                CountryIndicators {
                    country: Some(code),
                    population: Some(population),
                    gdp: Some(gdp),
                    corporate_tax_rate: Some(rate),
                },
            )
        })
        .collect();
    let legal_forms = LEGAL_FORMS
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();

    GraphInputs {
        companies,
        edges,
        indicators,
        legal_forms,
        ..Default::default()
    }
}

/// Writes `inputs` as the four input CSV files in `dir`.
pub fn write_input_files(dir: &Path, inputs: &GraphInputs) -> Result<InputPaths, IngestError> {
    let paths = InputPaths {
        entities: dir.join("entities.csv"),
        relationships: dir.join("relationships.csv"),
        indicators: dir.join("indicators.csv"),
        legal_forms: dir.join("legalforms.csv"),
        city_links: None,
    };
    let create = |p: &Path| {
        File::create(p)
            .map(BufWriter::new)
            .map_err(|source| IngestError::Io {
                path: p.to_path_buf(),
                source,
            })
    };
    write_entities(create(&paths.entities)?, &inputs.companies)?;
    write_relationships(create(&paths.relationships)?, &inputs.edges)?;
    write_indicators(create(&paths.indicators)?, &inputs.indicators)?;
    write_legal_forms(create(&paths.legal_forms)?, &inputs.legal_forms)?;
    Ok(paths)
}

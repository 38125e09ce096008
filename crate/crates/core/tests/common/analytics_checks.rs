//! Full-scan recomputations of every analytics metric, asserted against
//! the library on one fixture.

use std::collections::BTreeMap;

use super::{close, Fixture};
use taxgraph::analytics::{
    address_concentration, city_density, companies_per_capita, companies_per_gdp,
    hq_legal_divergence, multinational_edge_share, region_share, tax_delta_hq_legal,
    tax_delta_parent_child, Attribution,
};
use taxgraph::model::{CompanyRecord, CountryCode, EdgeKind};

fn country_of(r: &CompanyRecord, attribution: Attribution) -> Option<CountryCode> {
    match attribution {
        Attribution::Legal => r.legal.country,
        Attribution::Hq => r.hq.country,
    }
}

fn rate(fx: &Fixture, c: CountryCode) -> Option<f64> {
    fx.indicators.get(&c).and_then(|i| i.corporate_tax_rate)
}

fn normalize(s: &str) -> String {
    let lowered: String = s
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { ' ' })
        .collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn per_capita_and_per_gdp_match_full_scan(fx: &Fixture) {
    let store = fx.store();
    for attribution in [Attribution::Legal, Attribution::Hq] {
        for per_gdp in [false, true] {
            let ranking = if per_gdp {
                companies_per_gdp(&store, attribution)
            } else {
                companies_per_capita(&store, attribution)
            };
            let mut want = Vec::new();
            let mut excluded = 0;
            let mut countries: Vec<CountryCode> = fx
                .records
                .iter()
                .filter_map(|r| country_of(r, attribution))
                .collect();
            countries.extend(fx.indicators.keys());
            countries.sort();
            countries.dedup();
            for c in countries {
                let n = fx
                    .records
                    .iter()
                    .filter(|r| country_of(r, attribution) == Some(c))
                    .count() as u64;
                let d = fx.indicators.get(&c).and_then(|i| {
                    if per_gdp {
                        i.gdp
                    } else {
                        i.population.map(|p| p as f64)
                    }
                });
                match d {
                    Some(d) if d > 0.0 => want.push((c, n, n as f64 / d)),
                    _ => excluded += 1,
                }
            }
            assert_eq!(ranking.rows.len(), want.len());
            assert_eq!(ranking.warnings.len(), excluded);
            for w in ranking.rows.windows(2) {
                assert!(w[0].ratio >= w[1].ratio);
            }
            for (c, n, ratio) in want {
                let row = ranking.rows.iter().find(|r| r.country == c).unwrap();
                assert_eq!(row.numerator, n);
                assert!(close(row.ratio, ratio));
            }
        }
    }
}

pub fn address_concentration_matches_full_scan(fx: &Fixture) {
    let store = fx.store();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in fx
        .records
        .iter()
        .filter(|r| !r.legal.line.trim().is_empty())
    {
        let a = &r.legal;
        let full = format!(
            "{} {} {} {} {}",
            a.line,
            a.postal,
            a.city,
            a.region.as_deref().unwrap_or(""),
            a.country.map(|c| c.to_string()).unwrap_or_default()
        );
        *counts.entry(normalize(&full)).or_insert(0) += 1;
    }
    let mut want: Vec<(String, usize)> = counts.into_iter().collect();
    want.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    want.truncate(15);
    let got: Vec<(String, usize)> = address_concentration(&store, 15)
        .into_iter()
        .map(|a| (a.address, a.count))
        .collect();
    assert_eq!(got, want);
}

pub fn divergence_matches_full_scan(fx: &Fixture) {
    let d = hq_legal_divergence(&fx.store());
    let both: Vec<_> = fx
        .records
        .iter()
        .filter_map(|r| Some((r.hq.country?, r.legal.country?)))
        .collect();
    let divergent = both.iter().filter(|(h, l)| h != l).count() as u64;
    assert_eq!(d.eligible, both.len() as u64);
    assert_eq!(d.count, divergent);
    assert!(close(
        d.share.unwrap(),
        divergent as f64 / both.len() as f64
    ));
    assert_eq!(d.flows.iter().map(|f| f.count).sum::<u64>(), divergent);
    for f in &d.flows {
        let n = both
            .iter()
            .filter(|&&(h, l)| h == f.from && l == f.to)
            .count() as u64;
        assert_eq!(f.count, n);
    }
}

pub fn tax_deltas_match_full_scan(fx: &Fixture) {
    let store = fx.store();
    for divergent_only in [false, true] {
        let got = tax_delta_hq_legal(&store, divergent_only);
        let mut deltas = Vec::new();
        let mut excluded = 0u64;
        for r in &fx.records {
            match (r.hq.country, r.legal.country) {
                (Some(h), Some(l)) if divergent_only && h == l => {}
                (Some(h), Some(l)) => match (rate(fx, h), rate(fx, l)) {
                    (Some(a), Some(b)) => deltas.push(a - b),
                    _ => excluded += 1,
                },
                _ => excluded += 1,
            }
        }
        assert_eq!(got.included, deltas.len() as u64);
        assert_eq!(got.excluded, excluded);
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        assert!(close(got.mean.unwrap(), mean), "{:?} vs {mean}", got.mean);
    }
    let by_lei: BTreeMap<_, _> = fx.records.iter().map(|r| (r.lei, r)).collect();
    for multinational_only in [false, true] {
        let got = tax_delta_parent_child(&store, multinational_only);
        let mut deltas = Vec::new();
        let mut excluded = 0u64;
        for (c, p) in fx.edge_set(EdgeKind::Direct) {
            match (by_lei[&p].legal.country, by_lei[&c].legal.country) {
                (Some(pc), Some(cc)) if multinational_only && pc == cc => {}
                (Some(pc), Some(cc)) => match (rate(fx, pc), rate(fx, cc)) {
                    (Some(a), Some(b)) => deltas.push(a - b),
                    _ => excluded += 1,
                },
                _ => excluded += 1,
            }
        }
        assert_eq!(got.included, deltas.len() as u64);
        assert_eq!(got.excluded, excluded);
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        assert!(close(got.mean.unwrap(), mean));
    }
}

pub fn region_and_edge_shares_match_full_scan(fx: &Fixture) {
    let store = fx.store();
    let us = CountryCode::parse("US").unwrap();
    let in_de = |r: &Option<String>| matches!(r.as_deref(), Some("US-DE") | Some("DE"));
    for query in ["US-DE", "DE", "de"] {
        let got = region_share(&store, us, query).unwrap();
        let legal_us: Vec<_> = fx
            .records
            .iter()
            .filter(|r| r.legal.country == Some(us))
            .collect();
        let legal_de: Vec<_> = legal_us.iter().filter(|r| in_de(&r.legal.region)).collect();
        let hq_too = legal_de
            .iter()
            .filter(|r| r.hq.country == Some(us) && in_de(&r.hq.region))
            .count() as u64;
        assert_eq!(got.country_total, legal_us.len() as u64);
        assert_eq!(got.legal_in_region, legal_de.len() as u64);
        assert_eq!(got.hq_also_in_region, hq_too);
    }

    let by_lei: BTreeMap<_, _> = fx.records.iter().map(|r| (r.lei, r)).collect();
    let (mut multi, mut known, mut unknown) = (0u64, 0u64, 0u64);
    for (c, p) in fx.edge_set(EdgeKind::Direct) {
        match (by_lei[&p].legal.country, by_lei[&c].legal.country) {
            (Some(a), Some(b)) => {
                known += 1;
                multi += u64::from(a != b);
            }
            _ => unknown += 1,
        }
    }
    let got = multinational_edge_share(&store).unwrap();
    assert_eq!(
        (got.multinational, got.edges, got.excluded),
        (multi, known, unknown)
    );
    assert!(close(got.share, multi as f64 / known as f64));
}

pub fn city_density_matches_full_scan(fx: &Fixture) {
    let areas: BTreeMap<String, f64> = [("Q1", 12.5), ("Q2", 0.75), ("Q3", 0.0), ("Q5", 310.0)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let store = fx.store();
    for min in [1u64, 150, 170] {
        let report = city_density(&store, &areas, min).unwrap();
        for (hq_role, rows, skipped) in [
            (true, &report.hq, report.skipped_hq),
            (false, &report.legal, report.skipped_legal),
        ] {
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            for (_, link) in fx.links.iter() {
                let l = if hq_role { &link.hq } else { &link.legal };
                if let Some(l) = l {
                    *counts.entry(l.clone()).or_insert(0) += 1;
                }
            }
            let mut want = Vec::new();
            let mut want_skipped = 0;
            for (link, n) in counts.into_iter().filter(|(_, n)| *n > min) {
                match areas.get(&link) {
                    Some(&a) if a > 0.0 => want.push((link, n, n as f64 / a)),
                    _ => want_skipped += 1,
                }
            }
            want.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
            assert_eq!(skipped, want_skipped);
            assert_eq!(rows.len(), want.len());
            for (row, (link, n, d)) in rows.iter().zip(want) {
                assert_eq!((&row.city_link, row.count), (&link, n));
                assert!(close(row.density, d));
            }
        }
    }
}

/// Every check above.
pub fn all(fx: &Fixture) {
    per_capita_and_per_gdp_match_full_scan(fx);
    address_concentration_matches_full_scan(fx);
    divergence_matches_full_scan(fx);
    tax_deltas_match_full_scan(fx);
    region_and_edge_shares_match_full_scan(fx);
    city_density_matches_full_scan(fx);
}

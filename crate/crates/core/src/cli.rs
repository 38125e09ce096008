//! Command-line front end.
//!
//! Exit codes: 0 success (possibly with warnings), 2 usage or input error,
//! 3 runtime or network failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analytics::{self, Attribution};
use crate::bundle::{
    self, city_links_of, load_bundle, manifest_path_for, save_bundle, write_table, LoadedBundle,
    RunManifest, MANIFEST_FILE,
};
use crate::federation::{self, CannedTransport, EndpointConfig, HttpTransport, SparqlTransport};
use crate::ingest::{read_inputs, FileErrors, InputPaths};
use crate::linking::{self, CityCandidateIndex};
use crate::model::{AddressRole, CountryCode, EdgeKind, GraphStore};
use crate::patterns::{
    self, parse_pattern, Binding, DoubleIrishParams, DuckRabbitParams, Field, Pattern,
};
use crate::table::{fmt_f64, fmt_opt, Table};
use crate::traversal::{self, DEFAULT_MAX_DEPTH};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Rows shown on stdout when the full table also goes to a file.
const PREVIEW_ROWS: usize = 40;

#[derive(Debug, Parser)]
#[command(
    name = "taxgraph",
    version,
    about = "Corporate ownership graph analysis"
)]
pub struct Cli {
    /// Suppress tables and progress on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse input CSVs and write a graph bundle.
    Ingest(IngestArgs),
    /// Link company cities to external city ids by postal code and name.
    LinkCities(LinkArgs),
    /// Find pattern bindings.
    Detect(DetectArgs),
    /// Compute one metric.
    Stats(StatsArgs),
    /// Fetch areas of linked cities from a SPARQL endpoint.
    FetchAreas(FetchArgs),
    /// Write every metric as CSV into a directory.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub entities: PathBuf,
    #[arg(long)]
    pub relationships: PathBuf,
    #[arg(long)]
    pub indicators: PathBuf,
    #[arg(long)]
    pub legalforms: PathBuf,
    /// Existing `lei,hqCityLink,legalCityLink` table.
    #[arg(long)]
    pub city_links: Option<PathBuf>,
    /// Bundle directory to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LinkArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// `externalId,cityName,postalSpec` table.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long, default_value_t = linking::MAX_DISTANCE)]
    pub threshold: f64,
    /// Bundle directory to write; defaults to updating `--graph` in place.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Builtin {
    DoubleIrish,
    DuckRabbit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AddressArg {
    Legal,
    Hq,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("what").required(true).args(["builtin", "pattern"])))]
pub struct DetectArgs {
    #[arg(long)]
    pub graph: PathBuf,
    pub builtin: Option<Builtin>,
    /// Pattern file in the pattern language.
    #[arg(long)]
    pub pattern: Option<PathBuf>,
    /// Double Irish without the constraint on the top company.
    #[arg(long)]
    pub relaxed: bool,
    #[arg(long, default_value = "IE")]
    pub country_a: String,
    #[arg(long, default_value = "NL")]
    pub country_b: String,
    #[arg(long, default_value = "IE")]
    pub country_c: String,
    /// Duck-Rabbit haven countries.
    #[arg(long, value_delimiter = ',', default_value = "BM,KY")]
    pub havens: Vec<String>,
    #[arg(long, default_value = "NL")]
    pub child_country: String,
    #[arg(long, default_value = "54M6")]
    pub child_form: String,
    /// Which address of the Duck-Rabbit child carries `--child-country`.
    #[arg(long, value_enum, default_value_t = AddressArg::Legal)]
    pub child_address: AddressArg,
    #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
    pub max_path_len: usize,
    #[arg(long)]
    pub max_results: Option<usize>,
    /// CSV file for the bindings.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Metric {
    PerCapita,
    PerGdp,
    Addresses,
    Divergence,
    DivergenceFlows,
    TaxDeltaHqLegal,
    TaxDeltaParentChild,
    RegionShare,
    MultinationalShare,
    Density,
    ChildStats,
    ChildHistogram,
    ClosureStats,
    LongestChain,
    ChainHistogram,
    UltimateDiscrepancies,
    Report,
}

impl Metric {
    fn name(self) -> String {
        self.to_possible_value().unwrap().get_name().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Direct,
    Ultimate,
}

impl From<KindArg> for EdgeKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Direct => EdgeKind::Direct,
            KindArg::Ultimate => EdgeKind::Ultimate,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MetricOptions {
    /// Keep the first K rows.
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long, value_enum, default_value_t = AddressArg::Legal)]
    pub attribution: AddressArg,
    #[arg(long)]
    pub divergent_only: bool,
    #[arg(long)]
    pub multinational_only: bool,
    #[arg(long)]
    pub country: Option<String>,
    #[arg(long)]
    pub region: Option<String>,
    /// `externalId,areaSqKm` table.
    #[arg(long)]
    pub areas: Option<PathBuf>,
    /// Minimum company count (exclusive) for density.
    #[arg(long, default_value_t = 1000)]
    pub min: u64,
    #[arg(long, value_enum, default_value_t = KindArg::Direct)]
    pub kind: KindArg,
    #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
    pub max_depth: usize,
}

impl MetricOptions {
    fn record(&self, m: &mut RunManifest) {
        if let Some(top) = self.top {
            m.param("top", top);
        }
        m.param(
            "attribution",
            format!("{:?}", self.attribution).to_lowercase(),
        );
        m.param("divergent_only", self.divergent_only);
        m.param("multinational_only", self.multinational_only);
        if let Some(c) = &self.country {
            m.param("country", c);
        }
        if let Some(r) = &self.region {
            m.param("region", r);
        }
        m.param("min", self.min);
        m.param("kind", format!("{:?}", self.kind).to_lowercase());
        m.param("max_depth", self.max_depth);
    }
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub graph: PathBuf,
    pub metric: Metric,
    #[command(flatten)]
    pub options: MetricOptions,
    /// CSV file for the table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, env = "TAXGRAPH_ENDPOINT", default_value = federation::DEFAULT_ENDPOINT)]
    pub endpoint: String,
    /// Per-request timeout in seconds.
    #[arg(long, env = "TAXGRAPH_TIMEOUT", default_value_t = 60.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 200)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2)]
    pub retries: u32,
    #[arg(long, default_value_t = 2)]
    pub parallelism: usize,
    /// Answer all queries from this SPARQL results file instead of the network.
    #[arg(long)]
    pub offline: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub options: MetricOptions,
    /// Directory for the CSV files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

type CmdResult<T = ()> = Result<T, Failure>;

trait OrExit<T> {
    fn or_exit(self, code: i32) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, code: i32) -> CmdResult<T> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

fn usage<T>(msg: impl std::fmt::Display) -> CmdResult<T> {
    Err(Failure {
        code: EXIT_USAGE,
        error: anyhow!("{msg}"),
    })
}

struct Ui {
    quiet: bool,
}

impl Ui {
    fn say(&self, msg: impl std::fmt::Display) {
        if !self.quiet {
            println!("{msg}");
        }
    }

    fn warn(&self, msg: impl std::fmt::Display) {
        eprintln!("warning: {msg}");
    }

    fn table(&self, t: &Table, full: bool) {
        if self.quiet {
            return;
        }
        if full || t.rows.len() <= PREVIEW_ROWS {
            print!("{}", t.render_aligned());
        } else {
            let mut head = t.clone();
            head.truncate(PREVIEW_ROWS);
            print!("{}", head.render_aligned());
            println!("... {} more rows", t.rows.len() - PREVIEW_ROWS);
        }
    }

    fn row_errors(&self, files: &[FileErrors]) {
        const SHOWN: usize = 20;
        let total: usize = files.iter().map(|f| f.errors.len()).sum();
        let mut shown = 0;
        for f in files {
            for e in &f.errors {
                if shown < SHOWN {
                    self.warn(format!("{}:{}: {}", f.file.display(), e.line, e.issue));
                }
                shown += 1;
            }
        }
        if total > SHOWN {
            self.warn(format!("... {} more rejected rows", total - SHOWN));
        }
        if total > 0 {
            self.warn(format!("rejected rows: {total}"));
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

pub fn run(cli: Cli) -> CmdResult {
    let ui = Ui { quiet: cli.quiet };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&ui, a),
        Command::LinkCities(a) => cmd_link_cities(&ui, a),
        Command::Detect(a) => cmd_detect(&ui, a),
        Command::Stats(a) => cmd_stats(&ui, a),
        Command::FetchAreas(a) => cmd_fetch_areas(&ui, a),
        Command::Export(a) => cmd_export(&ui, a),
    }
}

fn load(ui: &Ui, graph: &Path) -> CmdResult<LoadedBundle> {
    let loaded = load_bundle(graph)
        .map_err(|e| anyhow!("cannot load graph bundle {}: {e}", graph.display()))
        .or_exit(EXIT_USAGE)?;
    ui.row_errors(&loaded.row_errors);
    Ok(loaded)
}

/// Manifest inputs for a command reading a bundle: its manifest, which in
/// turn pins the tables.
fn graph_input(m: &mut RunManifest, graph: &Path) -> CmdResult {
    m.add_input(&graph.join(MANIFEST_FILE))
        .or_exit(EXIT_RUNTIME)?;
    Ok(())
}

fn write_output(path: &Path, table: &Table, mut manifest: RunManifest) -> CmdResult {
    write_table(path, table).or_exit(EXIT_RUNTIME)?;
    let base = path.parent().unwrap_or(Path::new(""));
    manifest.add_output(base, path).or_exit(EXIT_RUNTIME)?;
    manifest
        .write(&manifest_path_for(path))
        .or_exit(EXIT_RUNTIME)
}

fn report_table(report: &crate::ingest::BuildReport) -> Table {
    let mut t = Table::new(["item", "count"]);
    for (label, n) in report.rows() {
        t.push([label.to_string(), n.to_string()]);
    }
    t
}

fn cmd_ingest(ui: &Ui, a: IngestArgs) -> CmdResult {
    let paths = InputPaths {
        entities: a.entities,
        relationships: a.relationships,
        indicators: a.indicators,
        legal_forms: a.legalforms,
        city_links: a.city_links,
    };
    let ingested = read_inputs(&paths).or_exit(EXIT_USAGE)?;
    let (store, report, row_errors) = ingested.build();
    ui.row_errors(&row_errors);

    let mut manifest = RunManifest::new("ingest");
    for p in [
        &paths.entities,
        &paths.relationships,
        &paths.indicators,
        &paths.legal_forms,
    ]
    .into_iter()
    .chain(paths.city_links.as_ref())
    {
        manifest.add_input(p).or_exit(EXIT_RUNTIME)?;
    }
    save_bundle(&a.out, &store, &city_links_of(&store), manifest).or_exit(EXIT_RUNTIME)?;
    ui.table(&report_table(&report), true);
    ui.say(format!("bundle written to {}", a.out.display()));
    Ok(())
}

fn cmd_link_cities(ui: &Ui, a: LinkArgs) -> CmdResult {
    if !(0.0..=1.0).contains(&a.threshold) {
        return usage("threshold must be between 0 and 1");
    }
    let loaded = load(ui, &a.graph)?;
    let file = fs::File::open(&a.candidates)
        .map_err(|e| anyhow!("{}: {e}", a.candidates.display()))
        .or_exit(EXIT_USAGE)?;
    let parsed = linking::parse_city_candidates(std::io::BufReader::new(file))
        .map_err(|e| e.in_file(&a.candidates))
        .or_exit(EXIT_USAGE)?;
    ui.row_errors(&[FileErrors {
        file: a.candidates.clone(),
        errors: parsed.errors,
    }]);
    let index = CityCandidateIndex::new(parsed.records);
    let (links, summary) = linking::link_companies(loaded.store.companies(), &index, a.threshold);

    let mut manifest = RunManifest::new("link-cities");
    manifest.inputs = loaded.manifest.inputs.clone();
    manifest.add_input(&a.candidates).or_exit(EXIT_RUNTIME)?;
    manifest.param("threshold", a.threshold);
    let out = a.out.unwrap_or(a.graph);
    save_bundle(&out, &loaded.store, &links, manifest).or_exit(EXIT_RUNTIME)?;

    let mut t = Table::new(["item", "count"]);
    for (k, v) in [
        ("city/postal pairs", summary.pairs),
        ("matched", summary.matched),
        ("no candidates", summary.no_candidates),
        ("above threshold", summary.above_threshold),
        ("ambiguous", summary.ambiguous),
        ("companies with hq link", summary.hq_linked),
        ("companies with legal link", summary.legal_linked),
    ] {
        t.push([k.to_string(), v.to_string()]);
    }
    ui.table(&t, true);
    Ok(())
}

/// One row per binding: the bound LEIs, then hop counts of the witness path
/// of each transitive clause.
pub fn bindings_table(pattern: &Pattern, bindings: &[Binding]) -> Table {
    let vars: Vec<&str> = pattern.variables().collect();
    let mut header: Vec<String> = vars.iter().map(|v| v.to_string()).collect();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for e in pattern.edges().iter().filter(|e| e.transitive) {
        let base = format!("hops_{}_{}", e.from, e.to);
        let n = seen.entry(base.clone()).or_insert(0);
        *n += 1;
        header.push(if *n == 1 { base } else { format!("{base}_{n}") });
    }
    let mut t = Table::new(header);
    for b in bindings {
        let mut row: Vec<String> = b.vars.iter().map(|(_, l)| l.to_string()).collect();
        row.extend(b.witnesses.iter().map(|w| w.hops().to_string()));
        t.push(row);
    }
    t
}

fn country_arg(raw: &str, flag: &str) -> CmdResult<String> {
    match CountryCode::parse(raw) {
        Ok(c) => Ok(c.to_string()),
        Err(_) => usage(format!("{flag}: {raw:?} is not a two-letter country code")),
    }
}

fn cmd_detect(ui: &Ui, a: DetectArgs) -> CmdResult {
    let mut manifest = RunManifest::new("detect");
    let (pattern, mut bindings) = match (a.builtin, &a.pattern) {
        (Some(Builtin::DoubleIrish), None) => {
            let params = DoubleIrishParams {
                country_a: country_arg(&a.country_a, "--country-a")?,
                country_b: country_arg(&a.country_b, "--country-b")?,
                country_c: if a.relaxed {
                    None
                } else {
                    Some(country_arg(&a.country_c, "--country-c")?)
                },
                max_path_len: a.max_path_len,
            };
            manifest.param("builtin", "double-irish");
            manifest.param("country_a", &params.country_a);
            manifest.param("country_b", &params.country_b);
            manifest.param("country_c", params.country_c.as_deref().unwrap_or("*"));
            manifest.param("max_path_len", params.max_path_len);
            let loaded = load(ui, &a.graph)?;
            let found =
                patterns::detect_double_irish(&loaded.store, &params).or_exit(EXIT_USAGE)?;
            (params.pattern().or_exit(EXIT_USAGE)?, found)
        }
        (Some(Builtin::DuckRabbit), None) => {
            let havens = a
                .havens
                .iter()
                .map(|h| country_arg(h.trim(), "--havens"))
                .collect::<CmdResult<_>>()?;
            let params = DuckRabbitParams {
                havens,
                child_country: country_arg(&a.child_country, "--child-country")?,
                child_legal_form: a.child_form.clone(),
                child_country_field: match a.child_address {
                    AddressArg::Legal => Field::Legal,
                    AddressArg::Hq => Field::Hq,
                },
            };
            if params.havens.is_empty() {
                return usage("--havens needs at least one country");
            }
            manifest.param("builtin", "duck-rabbit");
            manifest.param(
                "havens",
                params.havens.iter().cloned().collect::<Vec<_>>().join(","),
            );
            manifest.param("child_country", &params.child_country);
            manifest.param("child_form", &params.child_legal_form);
            manifest.param(
                "child_address",
                format!("{:?}", a.child_address).to_lowercase(),
            );
            let shape = params
                .pattern_for(params.havens.iter().next().unwrap())
                .map_err(|e| anyhow!("{e}"))
                .or_exit(EXIT_USAGE)?;
            let loaded = load(ui, &a.graph)?;
            let found = patterns::detect_duck_rabbit(&loaded.store, &params).or_exit(EXIT_USAGE)?;
            (shape, found)
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| anyhow!("{}: {e}", path.display()))
                .or_exit(EXIT_USAGE)?;
            let pattern = parse_pattern(&text)
                .map_err(|e| anyhow!("{}: {e}", path.display()))
                .or_exit(EXIT_USAGE)?;
            manifest.add_input(path).or_exit(EXIT_RUNTIME)?;
            manifest.param("pattern", pattern.to_string().trim_end().replace('\n', " "));
            manifest.param("max_path_len", a.max_path_len);
            let loaded = load(ui, &a.graph)?;
            let limits = patterns::MatchLimits {
                max_path_len: a.max_path_len,
                max_results: a.max_results,
            };
            let found = patterns::match_pattern(&loaded.store, &pattern, limits);
            (pattern, found)
        }
        _ => return usage("give either a builtin pattern name or --pattern, not both"),
    };
    if let Some(limit) = a.max_results {
        bindings.truncate(limit);
        manifest.param("max_results", limit);
    }
    let table = bindings_table(&pattern, &bindings);
    if let Some(out) = &a.out {
        graph_input(&mut manifest, &a.graph)?;
        write_output(out, &table, manifest)?;
    }
    ui.table(&table, a.out.is_none());
    let n = bindings.len();
    ui.say(format!("{n} binding{}", if n == 1 { "" } else { "s" }));
    Ok(())
}

fn read_areas(ui: &Ui, path: &Path) -> CmdResult<federation::AreaResult> {
    let file = fs::File::open(path)
        .map_err(|e| anyhow!("{}: {e}", path.display()))
        .or_exit(EXIT_USAGE)?;
    let parsed = federation::parse_areas(std::io::BufReader::new(file))
        .map_err(|e| e.in_file(path))
        .or_exit(EXIT_USAGE)?;
    ui.row_errors(&[FileErrors {
        file: path.to_path_buf(),
        errors: parsed.errors,
    }]);
    Ok(parsed.records)
}

fn attribution(a: AddressArg) -> Attribution {
    match a {
        AddressArg::Legal => Attribution::Legal,
        AddressArg::Hq => Attribution::Hq,
    }
}

/// Computes one metric as a table. Errors carry the exit code to use.
pub fn metric_table(
    store: &GraphStore,
    report: &crate::ingest::BuildReport,
    metric: Metric,
    o: &MetricOptions,
    areas: Option<&federation::AreaResult>,
) -> CmdResult<Table> {
    let kind = EdgeKind::from(o.kind);
    let mut table = match metric {
        Metric::PerCapita => {
            analytics::companies_per_capita(store, attribution(o.attribution)).to_table()
        }
        Metric::PerGdp => {
            analytics::companies_per_gdp(store, attribution(o.attribution)).to_table()
        }
        Metric::Addresses => analytics::address_table(&analytics::address_concentration(
            store,
            o.top.unwrap_or(20),
        )),
        Metric::Divergence => analytics::hq_legal_divergence(store).summary_table(),
        Metric::DivergenceFlows => analytics::hq_legal_divergence(store).to_table(),
        Metric::TaxDeltaHqLegal => analytics::tax_delta_hq_legal(store, o.divergent_only).to_table(
            "hq-legal",
            if o.divergent_only { "divergent" } else { "all" },
        ),
        Metric::TaxDeltaParentChild => {
            analytics::tax_delta_parent_child(store, o.multinational_only).to_table(
                "parent-child",
                if o.multinational_only {
                    "multinational"
                } else {
                    "all"
                },
            )
        }
        Metric::RegionShare => {
            let (Some(country), Some(region)) = (&o.country, &o.region) else {
                return usage("region-share needs --country and --region");
            };
            let country = CountryCode::parse(&country_arg(country, "--country")?).unwrap();
            analytics::region_share(store, country, region)
                .or_exit(EXIT_RUNTIME)?
                .to_table()
        }
        Metric::MultinationalShare => analytics::multinational_edge_share(store)
            .or_exit(EXIT_RUNTIME)?
            .to_table(),
        Metric::Density => {
            let Some(areas) = areas else {
                return usage("density needs --areas");
            };
            analytics::city_density(store, areas, o.min)
                .or_exit(EXIT_USAGE)?
                .to_table()
        }
        Metric::ChildStats => {
            let s = traversal::child_stats(store);
            let mut t = Table::new(["kind", "averageChildren", "companiesWithChildren"]);
            for (k, avg, h) in [
                ("direct", s.avg_direct, &s.histogram_direct),
                ("ultimate", s.avg_ultimate, &s.histogram_ultimate),
            ] {
                t.push([
                    k.to_string(),
                    fmt_opt(avg),
                    h.values().sum::<usize>().to_string(),
                ]);
            }
            t
        }
        Metric::ChildHistogram => {
            let s = traversal::child_stats(store);
            let mut t = Table::new(["kind", "children", "companies"]);
            for (k, h) in [
                ("direct", &s.histogram_direct),
                ("ultimate", &s.histogram_ultimate),
            ] {
                for (c, n) in h {
                    t.push([k.to_string(), c.to_string(), n.to_string()]);
                }
            }
            t
        }
        Metric::ClosureStats => {
            if o.max_depth == 0 {
                return usage("--max-depth must be at least 1");
            }
            let s = traversal::closure_child_stats(store, kind, Some(o.max_depth));
            let mut t = Table::new([
                "kind",
                "maxDepth",
                "averageDescendants",
                "companiesWithChildren",
                "truncatedRoots",
                "cyclicRoots",
            ]);
            t.push([
                kind.to_string(),
                o.max_depth.to_string(),
                fmt_opt(s.average),
                s.histogram.values().sum::<usize>().to_string(),
                s.truncated_roots.to_string(),
                s.cyclic_roots.to_string(),
            ]);
            t
        }
        Metric::LongestChain => {
            let mut t = Table::new(["position", "lei", "legalName", "legalCountry"]);
            for (i, lei) in traversal::longest_chain(store, kind).iter().enumerate() {
                let c = store.get_company(lei).expect("chain members exist");
                t.push([
                    (i + 1).to_string(),
                    lei.to_string(),
                    c.legal_name.clone(),
                    c.legal.country.map(|c| c.to_string()).unwrap_or_default(),
                ]);
            }
            t
        }
        Metric::ChainHistogram => {
            let mut t = Table::new(["hops", "chains"]);
            for (h, n) in traversal::chain_histogram(store, kind) {
                t.push([h.to_string(), n.to_string()]);
            }
            t
        }
        Metric::UltimateDiscrepancies => {
            let mut t = Table::new(["childLei", "ultimateParentLei", "reachableViaDirect"]);
            for d in traversal::ultimate_discrepancies(store) {
                t.push([
                    d.child.to_string(),
                    d.ultimate_parent.to_string(),
                    d.reachable_via_direct.to_string(),
                ]);
            }
            t
        }
        Metric::Report => report_table(report),
    };
    if let Some(top) = o.top {
        table.truncate(top);
    }
    Ok(table)
}

fn cmd_stats(ui: &Ui, a: StatsArgs) -> CmdResult {
    let loaded = load(ui, &a.graph)?;
    let areas = a
        .options
        .areas
        .as_deref()
        .map(|p| read_areas(ui, p))
        .transpose()?;
    let table = metric_table(
        &loaded.store,
        &loaded.report,
        a.metric,
        &a.options,
        areas.as_ref(),
    )?;
    if let Some(out) = &a.out {
        let mut manifest = RunManifest::new("stats");
        manifest.param("metric", a.metric.name());
        a.options.record(&mut manifest);
        graph_input(&mut manifest, &a.graph)?;
        if let Some(p) = &a.options.areas {
            manifest.add_input(p).or_exit(EXIT_RUNTIME)?;
        }
        write_output(out, &table, manifest)?;
    }
    ui.table(&table, a.out.is_none());
    Ok(())
}

fn cmd_fetch_areas(ui: &Ui, a: FetchArgs) -> CmdResult {
    if !(a.timeout.is_finite() && a.timeout > 0.0) {
        return usage("--timeout must be a positive number of seconds");
    }
    let config = EndpointConfig {
        url: a.endpoint.clone(),
        timeout: Duration::from_secs_f64(a.timeout),
        max_ids_per_request: a.batch_size,
        retries: a.retries,
        parallelism: a.parallelism,
        ..Default::default()
    };
    config.validate().or_exit(EXIT_USAGE)?;
    let loaded = load(ui, &a.graph)?;
    let mut ids: Vec<String> = Vec::new();
    for role in [AddressRole::Hq, AddressRole::Legal] {
        ids.extend(loaded.store.city_index(role).keys().map(|k| k.to_string()));
    }
    ids.sort_unstable();
    ids.dedup();
    let (valid, invalid): (Vec<String>, Vec<String>) = ids
        .into_iter()
        .partition(|id| federation::build_area_query(std::slice::from_ref(id)).is_ok());
    if !invalid.is_empty() {
        ui.warn(format!(
            "{} city links are not entity ids and were skipped",
            invalid.len()
        ));
    }

    let mut manifest = RunManifest::new("fetch-areas");
    graph_input(&mut manifest, &a.graph)?;
    manifest.param("batch_size", a.batch_size);
    manifest.param("retries", a.retries);
    match &a.offline {
        Some(p) => {
            manifest.add_input(p).or_exit(EXIT_RUNTIME)?;
            manifest.param("endpoint", "offline");
        }
        None => {
            manifest.param("endpoint", &a.endpoint);
        }
    }

    if valid.is_empty() {
        ui.warn("no linked cities in the graph; writing an empty area table");
        return write_output(&a.out, &area_table(&Default::default()), manifest);
    }
    let transport: Box<dyn SparqlTransport> = match &a.offline {
        Some(p) => Box::new(CannedTransport::new(
            fs::read_to_string(p)
                .map_err(|e| anyhow!("{}: {e}", p.display()))
                .or_exit(EXIT_USAGE)?,
        )),
        None => Box::new(HttpTransport::new(config.timeout)),
    };
    let (areas, report) =
        federation::fetch_areas(&config, transport.as_ref(), &valid).or_exit(EXIT_USAGE)?;
    for b in &report.failed_batches {
        ui.warn(format!(
            "batch of {} ids failed after {} attempts: {}",
            b.ids.len(),
            b.attempts,
            b.message
        ));
    }
    if report.all_failed() {
        return Err(Failure {
            code: EXIT_RUNTIME,
            error: anyhow!("all {} batches failed", report.batches),
        });
    }
    for (what, ids) in [
        ("several areas, largest kept", &report.duplicate_ids),
        ("no unit, taken as square kilometres", &report.unitless_ids),
        ("unusable area", &report.rejected_ids),
    ] {
        if !ids.is_empty() {
            ui.warn(format!("{} ids with {what}", ids.len()));
        }
    }
    write_output(&a.out, &area_table(&areas), manifest)?;
    ui.say(format!(
        "{} of {} cities with area, {} requests",
        areas.len(),
        report.requested,
        report.requests
    ));
    Ok(())
}

fn area_table(areas: &federation::AreaResult) -> Table {
    let mut t = Table::new(federation::AREA_HEADER);
    for (id, a) in areas {
        t.push([id.clone(), fmt_f64(*a)]);
    }
    t
}

fn cmd_export(ui: &Ui, a: ExportArgs) -> CmdResult {
    let loaded = load(ui, &a.graph)?;
    let areas = a
        .options
        .areas
        .as_deref()
        .map(|p| read_areas(ui, p))
        .transpose()?;
    fs::create_dir_all(&a.out)
        .map_err(|e| anyhow!("{}: {e}", a.out.display()))
        .or_exit(EXIT_RUNTIME)?;
    let mut manifest = RunManifest::new("export");
    a.options.record(&mut manifest);
    graph_input(&mut manifest, &a.graph)?;
    if let Some(p) = &a.options.areas {
        manifest.add_input(p).or_exit(EXIT_RUNTIME)?;
    }
    let mut written = Vec::new();
    for metric in Metric::value_variants() {
        let skip = match metric {
            Metric::Density => areas.is_none(),
            Metric::RegionShare => a.options.country.is_none() || a.options.region.is_none(),
            _ => false,
        };
        if skip {
            continue;
        }
        match metric_table(
            &loaded.store,
            &loaded.report,
            *metric,
            &a.options,
            areas.as_ref(),
        ) {
            Ok(table) => {
                let path = a.out.join(format!("{}.csv", metric.name()));
                write_table(&path, &table).or_exit(EXIT_RUNTIME)?;
                written.push(path);
            }
            Err(f) => ui.warn(format!("{} skipped: {}", metric.name(), f.error)),
        }
    }
    for p in &written {
        manifest.add_output(&a.out, p).or_exit(EXIT_RUNTIME)?;
    }
    manifest
        .write(&a.out.join(bundle::MANIFEST_FILE))
        .or_exit(EXIT_RUNTIME)?;
    ui.say(format!(
        "{} tables written to {}",
        written.len(),
        a.out.display()
    ));
    Ok(())
}

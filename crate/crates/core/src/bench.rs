//! Experiment driver: index-size and I/O-cost measurements over the three
//! families, emitted as CSV.
//!
//! Three experiments:
//!
//! * `size`: build each family and record allocated blocks,
//! * `k0`: look up randomly drawn fully bound triples,
//! * `k1`: two-pattern joins in the four scenario shapes.
//!
//! Every read count is a pager-meter delta; nothing is estimated. A run is
//! deterministic under (seed, config): the CSV is byte-identical across
//! repeats.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{HexIndex, MapIndex};
use crate::data::{gen_realistic, gen_synthetic, read_run, GenSpec};
use crate::error::{Error, Result};
use crate::eval::{eval_bgp, eval_k1, open_index, AnyIndex};
use crate::model::{Atom, Bgp, Graph, Role, Sap, Term, Triple};
use crate::pager::{Family, PageStore};
use crate::triplet::TripletIndex;

/// Where the benchmark graphs come from.
#[derive(Clone, Debug)]
pub enum Source {
    /// Both synthetic variants at every size checkpoint.
    Synthetic,
    /// One synthetic variant (1 or 2) at every checkpoint.
    SyntheticVariant(u8),
    /// The skewed generator at every checkpoint.
    Realistic,
    /// One canonical run file; its triple count is the only checkpoint.
    RunFile(PathBuf),
}

/// One experiment run: sizes, trial count, randomness, store geometry, and
/// which families to measure.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub source: Source,
    /// Graph-size checkpoints, strictly ascending. Ignored for run files.
    pub sizes: Vec<u64>,
    /// Measurements per (dataset, scenario) cell.
    pub trials: u32,
    pub seed: u64,
    pub block_size: u32,
    pub atom_width: u16,
    pub families: Vec<Family>,
}

/// Desk-scale checkpoints. Larger runs are a config away.
pub const DEFAULT_SIZES: [u64; 5] = [10_000, 25_000, 50_000, 75_000, 100_000];

impl ExperimentConfig {
    pub fn new(source: Source) -> ExperimentConfig {
        ExperimentConfig {
            source,
            sizes: DEFAULT_SIZES.to_vec(),
            trials: 10,
            seed: 7,
            block_size: 8192,
            atom_width: 64,
            families: vec![Family::Triplet, Family::Hex, Family::Map],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Invalid("trials must be at least 1".into()));
        }
        if !self.sizes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Invalid("sizes must be strictly ascending".into()));
        }
        if self.families.is_empty() {
            return Err(Error::Invalid("no index families selected".into()));
        }
        if let Source::SyntheticVariant(v) = self.source {
            if v != 1 && v != 2 {
                return Err(Error::Invalid(format!("unknown synthetic variant {v}")));
            }
        }
        Ok(())
    }
}

/// One materialized benchmark graph.
pub struct Dataset {
    /// CSV label: "v1", "v2", "realistic", or the run file's stem.
    pub label: String,
    pub n: u64,
    pub graph: Graph,
}

/// Builds the graphs a config calls for. A run file yields one dataset,
/// or none when it is empty.
pub fn datasets(cfg: &ExperimentConfig) -> Result<Vec<Dataset>> {
    cfg.validate()?;
    let synth = |variant: u8| -> Result<Vec<Dataset>> {
        cfg.sizes
            .iter()
            .map(|&n| {
                let g = gen_synthetic(&GenSpec {
                    n,
                    variant,
                    seed: cfg.seed,
                })?;
                Ok(Dataset {
                    label: format!("v{variant}"),
                    n: g.len() as u64,
                    graph: g,
                })
            })
            .collect()
    };
    match &cfg.source {
        Source::Synthetic => {
            let mut out = synth(1)?;
            out.extend(synth(2)?);
            Ok(out)
        }
        Source::SyntheticVariant(v) => synth(*v),
        Source::Realistic => cfg
            .sizes
            .iter()
            .map(|&n| {
                let g = gen_realistic(n, cfg.seed)?;
                Ok(Dataset {
                    label: "realistic".into(),
                    n: g.len() as u64,
                    graph: g,
                })
            })
            .collect(),
        Source::RunFile(path) => {
            let (g, _) = read_run(path)?;
            if g.is_empty() {
                return Ok(Vec::new());
            }
            let label = path
                .file_stem()
                .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
                .replace(',', "_");
            Ok(vec![Dataset {
                label,
                n: g.len() as u64,
                graph: g,
            }])
        }
    }
}

/// One CSV line.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub n: u64,
    pub family: String,
    /// "size", "k0", or "k1".
    pub experiment: String,
    /// "" except for k1, where it is the scenario digit.
    pub scenario: String,
    pub mean: f64,
    pub trials: u32,
}

pub const CSV_HEADER: &str = "dataset,n,family,experiment,scenario,mean_reads_or_blocks,trials";

/// Renders rows under the fixed header. UTF-8, LF line ends, no quoting;
/// every field value is controlled upstream.
pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.dataset, r.n, r.family, r.experiment, r.scenario, r.mean, r.trials
        ));
    }
    out
}

/// Appends a "avg" row for every (n, family, experiment, scenario) cell
/// measured on both synthetic variants: the mean pooled over both
/// variants' trials.
pub fn with_averages(mut rows: Vec<ResultRow>) -> Vec<ResultRow> {
    let avgs: Vec<ResultRow> = rows
        .iter()
        .filter(|r| r.dataset == "v1")
        .filter_map(|a| {
            rows.iter()
                .find(|b| {
                    b.dataset == "v2"
                        && b.n == a.n
                        && b.family == a.family
                        && b.experiment == a.experiment
                        && b.scenario == a.scenario
                })
                .map(|b| ResultRow {
                    dataset: "avg".into(),
                    mean: (a.mean * f64::from(a.trials) + b.mean * f64::from(b.trials))
                        / f64::from(a.trials + b.trials),
                    trials: a.trials + b.trials,
                    ..a.clone()
                })
        })
        .collect();
    rows.extend(avgs);
    rows
}

fn build_cell(
    dir: &Path,
    ds: &Dataset,
    family: Family,
    cfg: &ExperimentConfig,
) -> Result<(PageStore, AnyIndex)> {
    let path = dir.join(format!("{}-{}-{}.idx", ds.label, ds.n, family.as_str()));
    let mut store = PageStore::create(&path, cfg.block_size)?;
    match family {
        Family::Triplet => {
            TripletIndex::build(&mut store, &ds.graph, cfg.atom_width)?;
        }
        Family::Map => {
            MapIndex::build(&mut store, &ds.graph, cfg.atom_width)?;
        }
        Family::Hex => {
            HexIndex::build(&mut store, &ds.graph, cfg.atom_width)?;
        }
    }
    let index = open_index(&store)?;
    Ok((store, index))
}

/// Builds every (dataset, family) cell and reports its allocated block
/// count. Store files land in `dir` and stay there.
pub fn run_size(dir: &Path, cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for ds in datasets(cfg)? {
        for &family in &cfg.families {
            let (store, _) = build_cell(dir, &ds, family, cfg)?;
            rows.push(ResultRow {
                dataset: ds.label.clone(),
                n: ds.n,
                family: family.as_str().into(),
                experiment: "size".into(),
                scenario: String::new(),
                mean: store.stats().allocated as f64,
                trials: 1,
            });
        }
    }
    Ok(rows)
}

fn bound_sap(t: &Triple, var_at: Option<Role>) -> Sap {
    let term = |r: Role| match var_at {
        Some(v) if v == r => Term::var("x"),
        _ => Term::Atom(t.get(r).clone()),
    };
    Sap::new(
        term(Role::Subject),
        term(Role::Predicate),
        term(Role::Object),
    )
}

/// Looks up `trials` randomly drawn triples, fully bound, on every family.
/// Each trial's triple is shared across families so the comparison is
/// per-lookup.
pub fn run_k0(dir: &Path, cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for ds in datasets(cfg)? {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let triples = ds.graph.triples();
        let picks: Vec<&Triple> = (0..cfg.trials)
            .map(|_| &triples[rng.gen_range(0..triples.len())])
            .collect();
        for &family in &cfg.families {
            let (mut store, index) = build_cell(dir, &ds, family, cfg)?;
            let mut total = 0u64;
            for t in &picks {
                store.reset_read_counter();
                let bgp = Bgp::new(Vec::new(), vec![bound_sap(t, None)]);
                total += eval_bgp(&mut store, &index, &bgp)?.reads;
            }
            rows.push(ResultRow {
                dataset: ds.label.clone(),
                n: ds.n,
                family: family.as_str().into(),
                experiment: "k0".into(),
                scenario: String::new(),
                mean: total as f64 / f64::from(cfg.trials),
                trials: cfg.trials,
            });
        }
    }
    Ok(rows)
}

/// k1 rows plus notes about any scenario that could not be generated.
pub struct K1Report {
    pub rows: Vec<ResultRow>,
    pub notes: Vec<String>,
}

/// Attempts to rejection-sample one scenario pair per draw budget.
const PAIR_RETRIES: usize = 500;

fn shared_atoms<'g>(a: &'g Triple, b: &'g Triple) -> BTreeSet<&'g Atom> {
    let sa: BTreeSet<&Atom> = a.atoms().into_iter().collect();
    b.atoms().into_iter().filter(|x| sa.contains(*x)).collect()
}

/// Roles of `t` holding an atom outside `taken`.
fn free_roles(t: &Triple, taken: &BTreeSet<&Atom>) -> Vec<Role> {
    Role::ALL
        .iter()
        .copied()
        .filter(|&r| !taken.contains(t.get(r)))
        .collect()
}

/// Draws one pattern pair of the given scenario shape, or gives up after
/// the retry budget. Shapes:
///
///   1: two fully bound triples sharing an atom
///   2: as 1, with one non-shared position of the second replaced by a
///      variable
///   3: two atom-disjoint triples, one position each replaced by the same
///      variable
///   4: two triples sharing exactly one atom, one other position each
///      replaced by the same variable
fn scenario_pair(rng: &mut ChaCha8Rng, triples: &[Triple], scenario: u8) -> Option<(Sap, Sap)> {
    for _ in 0..PAIR_RETRIES {
        let t1 = &triples[rng.gen_range(0..triples.len())];
        let t2 = &triples[rng.gen_range(0..triples.len())];
        let shared = shared_atoms(t1, t2);
        let pair = match scenario {
            1 => {
                if shared.is_empty() {
                    continue;
                }
                (bound_sap(t1, None), bound_sap(t2, None))
            }
            2 => {
                if shared.is_empty() {
                    continue;
                }
                let free = free_roles(t2, &shared);
                if free.is_empty() {
                    continue;
                }
                let r = free[rng.gen_range(0..free.len())];
                (bound_sap(t1, None), bound_sap(t2, Some(r)))
            }
            3 => {
                if !shared.is_empty() {
                    continue;
                }
                let r1 = Role::ALL[rng.gen_range(0..3)];
                let r2 = Role::ALL[rng.gen_range(0..3)];
                (bound_sap(t1, Some(r1)), bound_sap(t2, Some(r2)))
            }
            4 => {
                if shared.len() != 1 {
                    continue;
                }
                let free1 = free_roles(t1, &shared);
                let free2 = free_roles(t2, &shared);
                if free1.is_empty() || free2.is_empty() {
                    continue;
                }
                let r1 = free1[rng.gen_range(0..free1.len())];
                let r2 = free2[rng.gen_range(0..free2.len())];
                (bound_sap(t1, Some(r1)), bound_sap(t2, Some(r2)))
            }
            _ => return None,
        };
        debug_assert!(crate::eval::validate_scenario(scenario, &pair.0, &pair.1).is_ok());
        return Some(pair);
    }
    None
}

/// Runs the four two-pattern join scenarios. Pairs are drawn once per
/// (dataset, scenario) and evaluated on every family. A scenario whose
/// pairs cannot be drawn from a dataset (tiny graphs) is noted and its
/// rows skipped; partial draws shrink the trial count instead.
pub fn run_k1(dir: &Path, cfg: &ExperimentConfig) -> Result<K1Report> {
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for ds in datasets(cfg)? {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut built: Vec<(Family, PageStore, AnyIndex)> = Vec::new();
        for &family in &cfg.families {
            let (store, index) = build_cell(dir, &ds, family, cfg)?;
            built.push((family, store, index));
        }
        for scenario in 1u8..=4 {
            let pairs: Vec<(Sap, Sap)> = (0..cfg.trials)
                .filter_map(|_| scenario_pair(&mut rng, ds.graph.triples(), scenario))
                .collect();
            if pairs.is_empty() {
                notes.push(format!(
                    "{} n={}: no scenario-{scenario} pair found in {PAIR_RETRIES} draws per trial, rows skipped",
                    ds.label, ds.n
                ));
                continue;
            }
            if (pairs.len() as u32) < cfg.trials {
                notes.push(format!(
                    "{} n={}: scenario {scenario} yielded {} of {} trials",
                    ds.label,
                    ds.n,
                    pairs.len(),
                    cfg.trials
                ));
            }
            for (family, store, index) in built.iter_mut() {
                let mut total = 0u64;
                for (a, b) in &pairs {
                    store.reset_read_counter();
                    let (_, reads) = eval_k1(store, index, scenario, a, b)?;
                    total += reads;
                }
                rows.push(ResultRow {
                    dataset: ds.label.clone(),
                    n: ds.n,
                    family: family.as_str().into(),
                    experiment: "k1".into(),
                    scenario: scenario.to_string(),
                    mean: total as f64 / pairs.len() as f64,
                    trials: pairs.len() as u32,
                });
            }
        }
    }
    Ok(K1Report { rows, notes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_run;
    use crate::fixtures::docs_graph;
    use tempfile::tempdir;

    fn small_cfg(source: Source) -> ExperimentConfig {
        ExperimentConfig {
            sizes: vec![1000, 2000],
            trials: 3,
            block_size: 2048,
            ..ExperimentConfig::new(source)
        }
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let mut cfg = ExperimentConfig::new(Source::Synthetic);
        cfg.trials = 0;
        assert!(datasets(&cfg).is_err());
        let mut cfg = ExperimentConfig::new(Source::Synthetic);
        cfg.sizes = vec![2000, 1000];
        assert!(datasets(&cfg).is_err());
        let cfg = ExperimentConfig::new(Source::SyntheticVariant(3));
        assert!(datasets(&cfg).is_err());
        let mut cfg = ExperimentConfig::new(Source::Synthetic);
        cfg.families.clear();
        assert!(datasets(&cfg).is_err());
    }

    #[test]
    fn size_rows_order_families_and_grow_with_n() {
        let dir = tempdir().unwrap();
        let cfg = small_cfg(Source::SyntheticVariant(1));
        let rows = run_size(dir.path(), &cfg).unwrap();
        assert_eq!(rows.len(), 6);
        let get = |n: u64, fam: &str| {
            rows.iter()
                .find(|r| r.n == n && r.family == fam)
                .unwrap()
                .mean
        };
        for n in [1000, 2000] {
            assert!(get(n, "triplet") < get(n, "hex"));
            assert!(get(n, "hex") < get(n, "map"));
        }
        for fam in ["triplet", "hex", "map"] {
            assert!(get(1000, fam) <= get(2000, fam));
        }
        assert!(rows.iter().all(|r| r.experiment == "size"
            && r.scenario.is_empty()
            && r.trials == 1
            && r.dataset == "v1"));
    }

    #[test]
    fn k0_means_favor_the_single_tree_and_repeat_exactly() {
        let dir = tempdir().unwrap();
        let cfg = small_cfg(Source::SyntheticVariant(1));
        let rows = run_k0(dir.path(), &cfg).unwrap();
        assert_eq!(rows.len(), 6);
        let get = |n: u64, fam: &str| {
            rows.iter()
                .find(|r| r.n == n && r.family == fam)
                .unwrap()
                .mean
        };
        for n in [1000, 2000] {
            assert!(get(n, "triplet") <= get(n, "map"), "n={n}");
            assert!(get(n, "triplet") <= get(n, "hex"), "n={n}");
            assert!(get(n, "triplet") >= 1.0);
        }
        let again = run_k0(dir.path(), &cfg).unwrap();
        assert_eq!(to_csv(&rows), to_csv(&again));
    }

    #[test]
    fn k1_covers_all_scenarios_and_favors_the_single_tree() {
        let dir = tempdir().unwrap();
        let mut cfg = small_cfg(Source::SyntheticVariant(1));
        cfg.sizes = vec![2000];
        let report = run_k1(dir.path(), &cfg).unwrap();
        assert!(report.notes.is_empty(), "{:?}", report.notes);
        assert_eq!(report.rows.len(), 12);
        for s in ["1", "2", "3", "4"] {
            let of = |fam: &str| {
                report
                    .rows
                    .iter()
                    .find(|r| r.scenario == s && r.family == fam)
                    .unwrap()
                    .mean
            };
            assert!(of("triplet") <= of("map"), "scenario {s}");
            assert!(of("triplet") <= of("hex"), "scenario {s}");
        }
        let again = run_k1(dir.path(), &cfg).unwrap();
        assert_eq!(to_csv(&report.rows), to_csv(&again.rows));
    }

    #[test]
    fn scenario_pairs_match_their_shapes() {
        let g = gen_synthetic(&GenSpec {
            n: 500,
            variant: 1,
            seed: 11,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for scenario in 1u8..=4 {
            for _ in 0..20 {
                let (a, b) = scenario_pair(&mut rng, g.triples(), scenario).unwrap();
                crate::eval::validate_scenario(scenario, &a, &b).unwrap();
            }
        }
        assert!(scenario_pair(&mut rng, g.triples(), 9).is_none());
    }

    #[test]
    fn tiny_graph_skips_unsatisfiable_scenarios_with_a_note() {
        // Variant 2 at n=8 draws from a 4-atom pool, so any two triples
        // share an atom and scenario 3 cannot be drawn.
        let dir = tempdir().unwrap();
        let mut cfg = ExperimentConfig::new(Source::SyntheticVariant(2));
        cfg.sizes = vec![8];
        cfg.trials = 2;
        cfg.block_size = 1024;
        let report = run_k1(dir.path(), &cfg).unwrap();
        assert!(report.notes.iter().any(|n| n.contains("scenario-3")));
        assert!(report.rows.iter().all(|r| r.scenario != "3"));
        assert!(report.rows.iter().any(|r| r.scenario == "1"));
    }

    #[test]
    fn run_file_source_is_a_single_checkpoint() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("docs.run");
        write_run(&path, &docs_graph(), 32).unwrap();
        let mut cfg = ExperimentConfig::new(Source::RunFile(path));
        cfg.block_size = 512;
        cfg.atom_width = 32;
        cfg.trials = 4;
        let rows = run_size(dir.path(), &cfg).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.dataset == "docs" && r.n == 12));
        let rows = run_k0(dir.path(), &cfg).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.mean >= 1.0 && r.trials == 4));
    }

    #[test]
    fn empty_run_file_yields_no_rows() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.run");
        write_run(&path, &Graph::default(), 16).unwrap();
        let cfg = ExperimentConfig::new(Source::RunFile(path));
        let rows = run_size(dir.path(), &cfg).unwrap();
        assert!(rows.is_empty());
        assert_eq!(to_csv(&rows), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn csv_layout_is_fixed() {
        let row = ResultRow {
            dataset: "v1".into(),
            n: 1000,
            family: "triplet".into(),
            experiment: "k0".into(),
            scenario: String::new(),
            mean: 2.5,
            trials: 10,
        };
        assert_eq!(
            to_csv(&[row]),
            "dataset,n,family,experiment,scenario,mean_reads_or_blocks,trials\nv1,1000,triplet,k0,,2.5,10\n"
        );
    }

    #[test]
    fn averages_pool_both_variants() {
        let dir = tempdir().unwrap();
        let mut cfg = small_cfg(Source::Synthetic);
        cfg.sizes = vec![1000];
        let rows = with_averages(run_size(dir.path(), &cfg).unwrap());
        assert_eq!(rows.len(), 9);
        let v1 = rows
            .iter()
            .find(|r| r.dataset == "v1" && r.family == "triplet")
            .unwrap();
        let v2 = rows
            .iter()
            .find(|r| r.dataset == "v2" && r.family == "triplet")
            .unwrap();
        let avg = rows
            .iter()
            .find(|r| r.dataset == "avg" && r.family == "triplet")
            .unwrap();
        assert_eq!(avg.mean, (v1.mean + v2.mean) / 2.0);
        assert_eq!(avg.trials, 2);
        // Nothing to average when only one variant ran.
        let one = run_size(dir.path(), &small_cfg(Source::SyntheticVariant(1))).unwrap();
        let len = one.len();
        assert_eq!(with_averages(one).len(), len);
    }
}

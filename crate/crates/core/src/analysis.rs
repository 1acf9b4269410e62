//! Term counts per engine model and the per-layer report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use crate::encoding::{essential_count, BitStats};
use crate::error::{Error, Result};
use crate::geometry::{LayerSpec, Tensor3};
use crate::numerics::{trim_tensor, NeuronFormat, PrecisionWindow};
use crate::reference::{pair_sum, CycleReport};
use crate::stripes::plane_range;

/// Engine models compared by term count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TermEngine {
    Dadn,
    /// Baseline that skips every zero neuron.
    Zn,
    /// Like `Zn` but the first layer is processed in full.
    Cvn,
    Stripes,
    PraFp16,
    PraRed,
}

impl TermEngine {
    pub const ALL: [TermEngine; 6] = [
        TermEngine::Dadn,
        TermEngine::Zn,
        TermEngine::Cvn,
        TermEngine::Stripes,
        TermEngine::PraFp16,
        TermEngine::PraRed,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TermEngine::Dadn => "DaDN",
            TermEngine::Zn => "ZN",
            TermEngine::Cvn => "CVN",
            TermEngine::Stripes => "STR",
            TermEngine::PraFp16 => "PRA-fp16",
            TermEngine::PraRed => "PRA-red",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TermCounts {
    pub dadn: u64,
    pub zn: u64,
    pub cvn: u64,
    pub stripes: u64,
    pub pra_fp16: u64,
    pub pra_red: u64,
}

impl TermCounts {
    pub fn get(&self, e: TermEngine) -> u64 {
        match e {
            TermEngine::Dadn => self.dadn,
            TermEngine::Zn => self.zn,
            TermEngine::Cvn => self.cvn,
            TermEngine::Stripes => self.stripes,
            TermEngine::PraFp16 => self.pra_fp16,
            TermEngine::PraRed => self.pra_red,
        }
    }

    /// Counts relative to the baseline, in [`TermEngine::ALL`] order.
    /// `None` for an empty layer.
    pub fn normalized(&self) -> Option<[f64; 6]> {
        if self.dadn == 0 {
            return None;
        }
        Some(TermEngine::ALL.map(|e| self.get(e) as f64 / self.dadn as f64))
    }

    pub fn add(&mut self, other: &TermCounts) {
        self.dadn += other.dadn;
        self.zn += other.zn;
        self.cvn += other.cvn;
        self.stripes += other.stripes;
        self.pra_fp16 += other.pra_fp16;
        self.pra_red += other.pra_red;
    }
}

/// Terms every engine model spends on a layer, summed over all
/// (neuron, synapse) pairs including those against padding.
pub fn count_terms(
    input: &Tensor3,
    spec: &LayerSpec,
    profile: Option<PrecisionWindow>,
    format: NeuronFormat,
    first_layer: bool,
) -> Result<TermCounts> {
    let window = profile.ok_or(Error::MissingProfile)?;
    window.check_container(format.width)?;
    let (x, y, i) = input.dims();
    if (x, y, i) != (spec.nx, spec.ny, spec.i) {
        return Err(Error::ShapeMismatch(format!(
            "trace {x}x{y}x{i} vs layer {}x{}x{}",
            spec.nx, spec.ny, spec.i
        )));
    }
    input.check_domain(format.domain())?;
    let width = format.width;
    let bits = width.bits() as u64;
    let mults = spec.multiplications()?;

    let zn = pair_sum(input, spec, |v| if v != 0 { bits } else { 0 })?;
    let trimmed = trim_tensor(input, window, format.sign)?;
    Ok(TermCounts {
        dadn: bits * mults,
        zn,
        cvn: if first_layer { bits * mults } else { zn },
        stripes: plane_range(window, format.sign).planes() as u64 * mults,
        pra_fp16: pair_sum(input, spec, |v| essential_count(v, width) as u64)?,
        pra_red: pair_sum(&trimmed, spec, |v| essential_count(v, width) as u64)?,
    })
}

/// Timing of one engine variant on one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineRun {
    pub label: String,
    pub report: CycleReport,
}

/// Everything collected for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub name: String,
    /// Baseline cycles used as the speedup reference.
    pub dadn_cycles: u64,
    pub runs: Vec<EngineRun>,
    pub terms: Option<TermCounts>,
    pub bits: Option<BitStats>,
}

/// One CSV row. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub layer: String,
    pub engine: String,
    pub cycles: Option<u64>,
    pub speedup: Option<f64>,
    pub stall_cycles: Option<u64>,
    pub nm_fetch_cycles: Option<u64>,
    pub sb_reads: Option<u64>,
    pub total_terms: Option<u64>,
    pub effectual_terms: Option<u64>,
    pub terms_dadn: Option<f64>,
    pub terms_zn: Option<f64>,
    pub terms_cvn: Option<f64>,
    pub terms_str: Option<f64>,
    pub terms_pra_fp16: Option<f64>,
    pub terms_pra_red: Option<f64>,
    pub essential_frac_all: Option<f64>,
    pub essential_frac_nonzero: Option<f64>,
    pub zero_fraction: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 18] = [
    "layer",
    "engine",
    "cycles",
    "speedup",
    "stall_cycles",
    "nm_fetch_cycles",
    "sb_reads",
    "total_terms",
    "effectual_terms",
    "terms_dadn",
    "terms_zn",
    "terms_cvn",
    "terms_str",
    "terms_pra_fp16",
    "terms_pra_red",
    "essential_frac_all",
    "essential_frac_nonzero",
    "zero_fraction",
];

/// Layer name used for the time-weighted aggregate rows.
pub const AGGREGATE: &str = "ALL";
/// Layer name used for the per-layer geometric-mean rows.
pub const GEOMEAN: &str = "GEOMEAN";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportDocument {
    pub rows: Vec<ReportRow>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn empty_row(layer: &str, engine: &str) -> ReportRow {
    ReportRow {
        layer: layer.to_string(),
        engine: engine.to_string(),
        cycles: None,
        speedup: None,
        stall_cycles: None,
        nm_fetch_cycles: None,
        sb_reads: None,
        total_terms: None,
        effectual_terms: None,
        terms_dadn: None,
        terms_zn: None,
        terms_cvn: None,
        terms_str: None,
        terms_pra_fp16: None,
        terms_pra_red: None,
        essential_frac_all: None,
        essential_frac_nonzero: None,
        zero_fraction: None,
    }
}

fn fill_layer_stats(row: &mut ReportRow, terms: Option<&TermCounts>, bits: Option<&BitStats>) {
    if let Some(n) = terms.and_then(TermCounts::normalized) {
        row.terms_dadn = Some(n[0]);
        row.terms_zn = Some(n[1]);
        row.terms_cvn = Some(n[2]);
        row.terms_str = Some(n[3]);
        row.terms_pra_fp16 = Some(n[4]);
        row.terms_pra_red = Some(n[5]);
    }
    if let Some(b) = bits {
        row.essential_frac_all = Some(b.mean_essential_frac_all);
        row.essential_frac_nonzero = b.mean_essential_frac_nonzero;
        row.zero_fraction = Some(b.zero_fraction);
    }
}

fn fill_run(row: &mut ReportRow, r: &CycleReport, dadn_cycles: u64) {
    row.cycles = Some(r.compute_cycles);
    row.speedup = ratio(dadn_cycles, r.compute_cycles);
    row.stall_cycles = Some(r.stall_cycles);
    row.nm_fetch_cycles = Some(r.nm_fetch_cycles);
    row.sb_reads = Some(r.sb_reads);
    row.total_terms = Some(r.total_terms);
    row.effectual_terms = Some(r.effectual_terms);
}

/// Per-layer rows, then per-engine aggregates: `ALL` uses total cycles
/// (Σ baseline / Σ engine), `GEOMEAN` the geometric mean of per-layer
/// speedups. A layer without engine runs yields one row with engine `-`.
pub fn report(layers: &[LayerRecord]) -> ReportDocument {
    let mut rows = Vec::new();
    for layer in layers {
        if layer.runs.is_empty() {
            let mut row = empty_row(&layer.name, "-");
            fill_layer_stats(&mut row, layer.terms.as_ref(), layer.bits.as_ref());
            rows.push(row);
        }
        for run in &layer.runs {
            let mut row = empty_row(&layer.name, &run.label);
            fill_run(&mut row, &run.report, layer.dadn_cycles);
            fill_layer_stats(&mut row, layer.terms.as_ref(), layer.bits.as_ref());
            rows.push(row);
        }
    }

    // Engine labels in order of first appearance.
    let mut order: Vec<&str> = Vec::new();
    let mut totals: BTreeMap<&str, (u64, CycleReport, f64, usize)> = BTreeMap::new();
    for layer in layers {
        for run in &layer.runs {
            let e = totals.entry(run.label.as_str()).or_insert_with(|| {
                order.push(run.label.as_str());
                (0, CycleReport::default(), 0.0, 0)
            });
            e.0 += layer.dadn_cycles;
            let r = &mut e.1;
            r.compute_cycles += run.report.compute_cycles;
            r.stall_cycles += run.report.stall_cycles;
            r.nm_fetch_cycles += run.report.nm_fetch_cycles;
            r.sb_reads += run.report.sb_reads;
            r.total_terms += run.report.total_terms;
            r.effectual_terms += run.report.effectual_terms;
            if let Some(s) = ratio(layer.dadn_cycles, run.report.compute_cycles) {
                e.2 += s.ln();
                e.3 += 1;
            }
        }
    }
    let mut all_terms = TermCounts::default();
    let mut have_terms = false;
    for t in layers.iter().filter_map(|l| l.terms.as_ref()) {
        all_terms.add(t);
        have_terms = true;
    }
    let all_terms = have_terms.then_some(all_terms);
    for label in &order {
        let (dadn, r, _, _) = &totals[label];
        let mut row = empty_row(AGGREGATE, label);
        fill_run(&mut row, r, *dadn);
        fill_layer_stats(&mut row, all_terms.as_ref(), None);
        rows.push(row);
    }
    for label in &order {
        let (_, _, log_sum, count) = totals[label];
        let mut row = empty_row(GEOMEAN, label);
        row.speedup = (count > 0).then(|| (log_sum / count as f64).exp());
        rows.push(row);
    }
    ReportDocument { rows }
}

fn fmt_f(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn fmt_u(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ReportRow {
    fn cells(&self) -> [String; 18] {
        [
            self.layer.clone(),
            self.engine.clone(),
            fmt_u(self.cycles),
            fmt_f(self.speedup),
            fmt_u(self.stall_cycles),
            fmt_u(self.nm_fetch_cycles),
            fmt_u(self.sb_reads),
            fmt_u(self.total_terms),
            fmt_u(self.effectual_terms),
            fmt_f(self.terms_dadn),
            fmt_f(self.terms_zn),
            fmt_f(self.terms_cvn),
            fmt_f(self.terms_str),
            fmt_f(self.terms_pra_fp16),
            fmt_f(self.terms_pra_red),
            fmt_f(self.essential_frac_all),
            fmt_f(self.essential_frac_nonzero),
            fmt_f(self.zero_fraction),
        ]
    }
}

impl ReportDocument {
    /// CSV with a header row. Floats are printed with six decimals so the
    /// bytes depend only on the values.
    pub fn write_csv<W: io::Write>(&self, w: W) -> io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_COLUMNS)?;
        for row in &self.rows {
            out.write_record(row.cells())?;
        }
        out.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Aligned plain-text summary: layer, engine, cycles, speedup, stalls.
    pub fn to_table(&self) -> String {
        let head = ["layer", "engine", "cycles", "speedup", "stalls", "sb_reads"];
        let body: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.layer.clone(),
                    r.engine.clone(),
                    fmt_u(r.cycles),
                    r.speedup.map(|s| format!("{s:.3}x")).unwrap_or_default(),
                    fmt_u(r.stall_cycles),
                    fmt_u(r.sb_reads),
                ]
            })
            .collect();
        let mut widths = head.map(str::len);
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut s = String::new();
        let line = |s: &mut String, cells: &[&str]| {
            for (k, (c, w)) in cells.iter().zip(widths).enumerate() {
                if k < 2 {
                    let _ = write!(s, "{c:<w$}  ");
                } else {
                    let _ = write!(s, "{c:>w$}  ");
                }
            }
            s.truncate(s.trim_end().len());
            s.push('\n');
        };
        line(&mut s, &head);
        for row in &body {
            let cells: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&mut s, &cells);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::stats;
    use crate::numerics::{trim, SignMode, Width};
    use crate::reference::dadn_cycles;
    use proptest::prelude::*;

    fn one_neuron(v: i32) -> (Tensor3, LayerSpec) {
        let mut t = Tensor3::zeros(1, 1, 16);
        t.set(0, 0, 0, v);
        (t, LayerSpec::new(1, 1, 16, 1, 1, 1, 1, 0))
    }

    /// Counts attributable to the neuron in lane 0; the other 15 lanes are
    /// zero, so only the value-blind engines see them.
    fn lane0(t: &Tensor3, spec: &LayerSpec, window: PrecisionWindow) -> [u64; 6] {
        let c = count_terms(t, spec, Some(window), NeuronFormat::UNSIGNED16, false).unwrap();
        [c.dadn / 16, c.zn, c.cvn, c.stripes / 16, c.pra_fp16, c.pra_red]
    }

    #[test]
    fn single_neuron_example() {
        // 10.001 in binary with a 5-bit profile covering it.
        let (t, spec) = one_neuron(0b10001);
        let w = PrecisionWindow::new(4, 0).unwrap();
        assert_eq!(lane0(&t, &spec, w), [16, 16, 16, 5, 2, 2]);
        let first = count_terms(&t, &spec, Some(w), NeuronFormat::UNSIGNED16, true).unwrap();
        assert_eq!(first.cvn, first.dadn);
    }

    #[test]
    fn zero_neuron() {
        let (t, spec) = one_neuron(0);
        let c = count_terms(&t, &spec, Some(PrecisionWindow::new(15, 0).unwrap()), NeuronFormat::UNSIGNED16, false)
            .unwrap();
        assert_eq!(c.zn, 0);
        assert_eq!(c.dadn, 16 * 16);
        assert_eq!(c.normalized().unwrap()[0], 1.0);
    }

    #[test]
    fn missing_profile() {
        let (t, spec) = one_neuron(3);
        assert_eq!(
            count_terms(&t, &spec, None, NeuronFormat::UNSIGNED16, false),
            Err(Error::MissingProfile)
        );
    }

    /// Enumerates every (window, filter position, channel, filter) pair.
    fn brute(t: &Tensor3, spec: &LayerSpec, cost: impl Fn(i32) -> u64) -> u64 {
        let (ox, oy, n) = spec.output_dims().unwrap();
        let mut total = 0;
        for _f in 0..n {
            for l in 0..oy {
                for k in 0..ox {
                    for y in 0..spec.fy {
                        for x in 0..spec.fx {
                            for c in 0..spec.i {
                                let px = (k * spec.stride + x) as isize - spec.pad as isize;
                                let py = (l * spec.stride + y) as isize - spec.pad as isize;
                                total += cost(t.get_or_zero(px, py, c));
                            }
                        }
                    }
                }
            }
        }
        total
    }

    fn arb_layer() -> impl Strategy<Value = (Tensor3, LayerSpec, u8, u8)> {
        (1usize..=3, 1usize..=2, 0usize..=1, 1usize..=4, 1usize..=3)
            .prop_flat_map(|(f, s, pad, o, n)| {
                let nx = (o - 1) * s + f;
                let spec = LayerSpec::new(nx, nx, 16, n, f, f, s, pad);
                let len = nx * nx * 16;
                (
                    proptest::collection::vec(prop_oneof![Just(0i32), 0i32..=65535], len),
                    Just(spec),
                    0u8..=15,
                    0u8..=15,
                )
            })
            .prop_filter_map("valid layer", |(v, spec, a, b)| {
                spec.output_dims().ok()?;
                let t = Tensor3::from_vec(spec.nx, spec.ny, 16, v).ok()?;
                Some((t, spec, a.max(b), a.min(b)))
            })
    }

    proptest! {
        #[test]
        fn counts_match_enumeration((t, spec, msb, lsb) in arb_layer()) {
            let w = PrecisionWindow::new(msb, lsb).unwrap();
            let c = count_terms(&t, &spec, Some(w), NeuronFormat::UNSIGNED16, false).unwrap();
            let ess = |v: i32| v.unsigned_abs().count_ones() as u64;
            prop_assert_eq!(c.pra_fp16, brute(&t, &spec, ess));
            prop_assert_eq!(c.pra_red, brute(&t, &spec, |v| ess(trim(v, w, SignMode::Unsigned).unwrap())));
            prop_assert_eq!(c.zn, brute(&t, &spec, |v| if v == 0 { 0 } else { 16 }));
            prop_assert_eq!(c.dadn, brute(&t, &spec, |_| 16));
            prop_assert!(c.pra_red <= c.pra_fp16);
            prop_assert!(c.pra_red <= c.stripes);
            prop_assert!(c.stripes <= c.dadn);
            prop_assert!(c.zn <= c.dadn);
            prop_assert!(c.cvn >= c.zn);
            prop_assert_eq!(c.normalized().unwrap()[0], 1.0);
        }
    }

    fn run(label: &str, cycles: u64) -> EngineRun {
        EngineRun {
            label: label.into(),
            report: CycleReport {
                compute_cycles: cycles,
                sb_reads: 7,
                ..CycleReport::default()
            },
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let doc = report(&[]);
        assert!(doc.rows.is_empty());
        assert_eq!(doc.to_csv_string(), CSV_COLUMNS.join(",") + "\n");
    }

    #[test]
    fn one_layer_one_row_plus_aggregates() {
        let rec = LayerRecord {
            name: "conv1".into(),
            dadn_cycles: 100,
            runs: vec![run("STR", 50)],
            terms: None,
            bits: None,
        };
        let doc = report(&[rec]);
        let layer_rows: Vec<_> = doc.rows.iter().filter(|r| r.layer == "conv1").collect();
        assert_eq!(layer_rows.len(), 1);
        assert_eq!(layer_rows[0].speedup, Some(2.0));
    }

    #[test]
    fn aggregate_is_time_weighted() {
        let layers = vec![
            LayerRecord {
                name: "a".into(),
                dadn_cycles: 100,
                runs: vec![run("PRA-4b", 10)],
                terms: None,
                bits: None,
            },
            LayerRecord {
                name: "b".into(),
                dadn_cycles: 300,
                runs: vec![run("PRA-4b", 290)],
                terms: None,
                bits: None,
            },
        ];
        let doc = report(&layers);
        let all = doc.rows.iter().find(|r| r.layer == AGGREGATE).unwrap();
        assert_eq!(all.cycles, Some(300));
        assert_eq!(all.speedup, Some(400.0 / 300.0));
        let geo = doc.rows.iter().find(|r| r.layer == GEOMEAN).unwrap();
        let expect = (10.0f64 * (300.0 / 290.0)).sqrt();
        assert!((geo.speedup.unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn stats_columns_and_table() {
        let (t, spec) = one_neuron(0b10001);
        let w = PrecisionWindow::new(4, 0).unwrap();
        let terms = count_terms(&t, &spec, Some(w), NeuronFormat::UNSIGNED16, false).unwrap();
        let rec = LayerRecord {
            name: "l0".into(),
            dadn_cycles: dadn_cycles(&spec).unwrap(),
            runs: vec![],
            terms: Some(terms),
            bits: Some(stats(t.values(), Width::W16).unwrap()),
        };
        let doc = report(&[rec]);
        assert_eq!(doc.rows.len(), 1);
        assert_eq!(doc.rows[0].engine, "-");
        assert_eq!(doc.rows[0].zero_fraction, Some(15.0 / 16.0));
        let csv = doc.to_csv_string();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), CSV_COLUMNS.len());
        assert!(doc.to_table().starts_with("layer"));
    }
}

//! Continual-learning evaluation: the lower-triangular performance matrix
//! and the AP / mAP / BWT summaries derived from it, plus report rendering
//! (per-run JSON, matrix CSV, loss-curve CSVs, and a mean±std comparison
//! table over seeds).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Lower-triangular accuracy matrix: entry `(i, j)` with `j <= i` is the
/// accuracy on task `j` after training through task `i`. Rows are appended
/// once per completed task and never rewritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMatrix {
    rows: Vec<Vec<f64>>,
}

impl Default for PerformanceMatrix {
    fn default() -> Self {
        Self::new()
    }
}

impl PerformanceMatrix {
    pub fn new() -> Self {
        Self { rows: Vec::new() }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    /// Appends the evaluation row after task `rows.len()`; its length must
    /// be one more than the previous row's.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::Validation(format!(
                "row {} must hold {} entries, got {}",
                self.rows.len(),
                self.rows.len() + 1,
                row.len()
            )));
        }
        if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Validation("accuracies must lie in [0, 1]".into()));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }
}

/// Exact-match fraction over the masked nodes.
pub fn accuracy(pred: &[u32], truth: &[Option<u32>], mask: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() != mask.len() {
        return Err(Error::Dimension("prediction/truth/mask lengths differ".into()));
    }
    let mut total = 0usize;
    let mut hits = 0usize;
    for ((&p, t), &m) in pred.iter().zip(truth).zip(mask) {
        if !m {
            continue;
        }
        let Some(t) = t else {
            return Err(Error::Validation("masked node has no label".into()));
        };
        total += 1;
        hits += usize::from(p == *t);
    }
    if total == 0 {
        return Err(Error::Validation("empty evaluation mask".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Average performance after row `k` (0-based): the mean of that row.
pub fn ap(m: &PerformanceMatrix, k: usize) -> Result<f64> {
    let row = m.rows.get(k).ok_or_else(|| {
        Error::Validation(format!("row {k} not yet recorded ({} rows)", m.num_rows()))
    })?;
    Ok(row.iter().sum::<f64>() / row.len() as f64)
}

/// Mean of the AP trajectory over all recorded rows.
pub fn map(m: &PerformanceMatrix) -> Result<f64> {
    if m.rows.is_empty() {
        return Err(Error::Validation("empty performance matrix".into()));
    }
    let mut acc = 0.0;
    for k in 0..m.num_rows() {
        acc += ap(m, k)?;
    }
    Ok(acc / m.num_rows() as f64)
}

/// Backward transfer after row `k` (0-based, `k >= 1`): the mean change of
/// earlier-task accuracy against its diagonal value. Negative means
/// forgetting.
pub fn bwt(m: &PerformanceMatrix, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Validation("backward transfer needs at least two rows".into()));
    }
    if k >= m.num_rows() {
        return Err(Error::Validation(format!("row {k} not yet recorded")));
    }
    let mut acc = 0.0;
    for i in 0..k {
        acc += m.entry(k, i) - m.entry(i, i);
    }
    Ok(acc / k as f64)
}

/// One finished continual run, ready for reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    /// Grouping key for aggregation, e.g. `puma/class_il`.
    pub label: String,
    pub seed: u64,
    pub matrix: PerformanceMatrix,
    pub loss_curves: Vec<Vec<f64>>,
    pub config_echo: serde_json::Value,
}

/// Emitted per-run report document.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub format_version: u32,
    pub label: String,
    pub seed: u64,
    pub matrix: PerformanceMatrix,
    pub ap_trajectory: Vec<f64>,
    pub map: f64,
    pub final_ap: f64,
    pub final_bwt: Option<f64>,
    pub config_echo: serde_json::Value,
}

impl ReportFile {
    pub fn from_record(record: &RunRecord) -> Result<Self> {
        let k = record.matrix.num_rows();
        if k == 0 {
            return Err(Error::Validation("run has an empty matrix".into()));
        }
        let ap_trajectory: Vec<f64> =
            (0..k).map(|i| ap(&record.matrix, i)).collect::<Result<_>>()?;
        Ok(ReportFile {
            format_version: 1,
            label: record.label.clone(),
            seed: record.seed,
            matrix: record.matrix.clone(),
            ap_trajectory: ap_trajectory.clone(),
            map: map(&record.matrix)?,
            final_ap: ap_trajectory[k - 1],
            final_bwt: if k >= 2 { Some(bwt(&record.matrix, k - 1)?) } else { None },
            config_echo: record.config_echo.clone(),
        })
    }
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// CSV rendering of a performance matrix (header row plus one line per task).
pub fn matrix_csv(m: &PerformanceMatrix) -> String {
    let k = m.num_rows();
    let mut out = String::from("task");
    for j in 0..k {
        let _ = write!(out, ",after_task_{j}");
    }
    out.push('\n');
    for (i, row) in m.rows().iter().enumerate() {
        let _ = write!(out, "{i}");
        for j in 0..k {
            if j < row.len() {
                let _ = write!(out, ",{}", row[j]);
            } else {
                out.push(',');
            }
        }
        out.push('\n');
    }
    out
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn pct(pair: (f64, f64)) -> String {
    format!("{:.1}±{:.1}", 100.0 * pair.0, 100.0 * pair.1)
}

/// Writes per-run reports plus aggregates into `out_dir`:
/// `run_<label>_seed<k>.json`, `matrix_<label>_seed<k>.csv`, per-task loss
/// CSVs, and `comparison.txt` with mean±std cells (percent, one decimal)
/// grouped by label over seeds.
pub fn render_report(runs: &[RunRecord], out_dir: &Path) -> Result<()> {
    if runs.is_empty() {
        return Err(Error::Validation("no runs to report".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut grouped: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for run in runs {
        grouped.entry(run.label.clone()).or_default().push(run);
        let stem = format!("{}_seed{}", sanitize(&run.label), run.seed);
        io::write_json(&out_dir.join(format!("run_{stem}.json")), &ReportFile::from_record(run)?)?;
        fs::write(out_dir.join(format!("matrix_{stem}.csv")), matrix_csv(&run.matrix))?;
        for (task, curve) in run.loss_curves.iter().enumerate() {
            let mut csv = String::from("epoch,loss\n");
            for (epoch, loss) in curve.iter().enumerate() {
                let _ = writeln!(csv, "{epoch},{loss}");
            }
            fs::write(out_dir.join(format!("loss_{stem}_task{task:03}.csv")), csv)?;
        }
    }

    let mut table = String::from("label\tseeds\tAP(%)\tmAP(%)\tBWT(%)\n");
    for (label, group) in &grouped {
        let aps: Vec<f64> = group
            .iter()
            .map(|r| ap(&r.matrix, r.matrix.num_rows() - 1))
            .collect::<Result<_>>()?;
        let maps: Vec<f64> = group.iter().map(|r| map(&r.matrix)).collect::<Result<_>>()?;
        let bwts: Vec<f64> = group
            .iter()
            .filter(|r| r.matrix.num_rows() >= 2)
            .map(|r| bwt(&r.matrix, r.matrix.num_rows() - 1))
            .collect::<Result<_>>()?;
        let bwt_cell = if bwts.is_empty() { "n/a".to_string() } else { pct(mean_std(&bwts)) };
        let _ = writeln!(
            table,
            "{label}\t{}\t{}\t{}\t{bwt_cell}",
            group.len(),
            pct(mean_std(&aps)),
            pct(mean_std(&maps)),
        );
    }
    fs::write(out_dir.join("comparison.txt"), table)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> PerformanceMatrix {
        PerformanceMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn accuracy_basics() {
        let truth = vec![Some(0), Some(1), Some(0), Some(1)];
        let mask = vec![true; 4];
        assert_eq!(accuracy(&[0, 1, 0, 1], &truth, &mask).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 1, 0], &truth, &mask).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 0, 0], &truth, &mask).unwrap(), 0.75);
    }

    #[test]
    fn accuracy_rejects_empty_mask() {
        assert!(accuracy(&[0], &[Some(0)], &[false]).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(ap(&matrix(&[&[1.0]]), 0).unwrap(), 1.0);
        assert!((ap(&matrix(&[&[1.0], &[0.8, 0.9]]), 1).unwrap() - 0.85).abs() < 1e-15);
        assert_eq!(ap(&matrix(&[&[0.0], &[0.0, 0.0]]), 1).unwrap(), 0.0);
    }

    #[test]
    fn map_examples() {
        assert_eq!(map(&matrix(&[&[1.0]])).unwrap(), 1.0);
        assert_eq!(map(&matrix(&[&[1.0], &[0.8, 0.9]])).unwrap(), 0.925);
        let c = matrix(&[&[0.4], &[0.4, 0.4], &[0.4, 0.4, 0.4]]);
        assert!((map(&c).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn bwt_examples() {
        let m = matrix(&[&[1.0], &[0.8, 0.9]]);
        assert!((bwt(&m, 1).unwrap() + 0.2).abs() < 1e-15);
        let keep = matrix(&[&[0.7], &[0.7, 0.9]]);
        assert_eq!(bwt(&keep, 1).unwrap(), 0.0);
        let improve = matrix(&[&[0.5], &[0.9, 0.8]]);
        assert!(bwt(&improve, 1).unwrap() > 0.0);
        assert!(bwt(&m, 0).is_err());
    }

    #[test]
    fn rows_are_validated() {
        let mut m = PerformanceMatrix::new();
        assert!(m.push_row(vec![0.5, 0.5]).is_err());
        m.push_row(vec![0.5]).unwrap();
        assert!(m.push_row(vec![1.5, 0.0]).is_err());
        m.push_row(vec![1.0, 0.0]).unwrap();
        assert_eq!(m.num_rows(), 2);
    }

    #[test]
    fn metrics_match_brute_force_on_random_matrices() {
        let mut rng = crate::rng::SplitMix64::new(5150);
        for _ in 0..200 {
            let k = 1 + rng.next_index(8);
            let rows: Vec<Vec<f64>> =
                (0..k).map(|i| (0..=i).map(|_| rng.next_f64()).collect()).collect();
            let m = PerformanceMatrix::from_rows(rows.clone()).unwrap();
            for r in 0..k {
                let expect: f64 = rows[r].iter().sum::<f64>() / (r + 1) as f64;
                assert!((ap(&m, r).unwrap() - expect).abs() < 1e-12);
            }
            let expect_map: f64 = (0..k)
                .map(|r| rows[r].iter().sum::<f64>() / (r + 1) as f64)
                .sum::<f64>()
                / k as f64;
            assert!((map(&m).unwrap() - expect_map).abs() < 1e-12);
            for r in 1..k {
                let expect_bwt: f64 =
                    (0..r).map(|i| rows[r][i] - rows[i][i]).sum::<f64>() / r as f64;
                assert!((bwt(&m, r).unwrap() - expect_bwt).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn report_round_trip_reproduces_scalars_bitwise() {
        let record = RunRecord {
            label: "puma/class_il".into(),
            seed: 3,
            matrix: matrix(&[&[0.9], &[0.7, 0.8], &[0.6, 0.7, 0.9]]),
            loss_curves: vec![vec![1.0, 0.5], vec![0.9, 0.4], vec![0.8]],
            config_echo: serde_json::json!({"budget_ratio": 0.01}),
        };
        let dir = tempfile::tempdir().unwrap();
        render_report(std::slice::from_ref(&record), dir.path()).unwrap();
        let report: ReportFile =
            io::read_json(&dir.path().join("run_puma_class_il_seed3.json")).unwrap();
        assert_eq!(report.matrix, record.matrix);
        assert_eq!(report.map.to_bits(), map(&report.matrix).unwrap().to_bits());
        assert_eq!(
            report.final_bwt.unwrap().to_bits(),
            bwt(&report.matrix, 2).unwrap().to_bits()
        );
        let table = std::fs::read_to_string(dir.path().join("comparison.txt")).unwrap();
        assert!(table.contains("puma/class_il"), "{table}");
        // Single run: std column is 0.0.
        assert!(table.contains("±0.0"), "{table}");
        let csv = std::fs::read_to_string(dir.path().join("matrix_puma_class_il_seed3.csv"))
            .unwrap();
        assert_eq!(csv.lines().count(), 4); // header + K rows
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 4); // task + K cols
    }

    #[test]
    fn report_formats_mean_and_std_over_seeds() {
        let runs: Vec<RunRecord> = (0..5)
            .map(|seed| RunRecord {
                label: "cat/class_il".into(),
                seed,
                matrix: matrix(&[&[0.8 + 0.01 * seed as f64]]),
                loss_curves: vec![],
                config_echo: serde_json::Value::Null,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        render_report(&runs, dir.path()).unwrap();
        let table = std::fs::read_to_string(dir.path().join("comparison.txt")).unwrap();
        let line = table.lines().find(|l| l.starts_with("cat/class_il")).unwrap();
        assert!(line.contains("82.0±1.6"), "{line}");
    }

    #[test]
    fn empty_report_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(render_report(&[], dir.path()).is_err());
    }
}

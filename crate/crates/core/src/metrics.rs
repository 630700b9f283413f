//! Confusion-matrix metrics, percentile-bootstrap confidence intervals and
//! the per-activation evaluation report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[t * k + p]` = samples with true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    /// True-class count (row sum).
    pub fn support(&self, class: usize) -> u64 {
        self.counts[class * self.k..(class + 1) * self.k].iter().sum()
    }

    /// Predicted-class count (column sum).
    pub fn predicted(&self, class: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, class)).sum()
    }

    fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.k + pred] += 1;
    }
}

fn check_labels(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    if let Some(&label) = y_true.iter().chain(y_pred).find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    Ok(())
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    check_labels(y_true, y_pred, k)?;
    let mut cm = ConfusionMatrix::zeros(k);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        cm.add(t, p);
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Support-weighted precision, recall and F1 plus accuracy. Undefined
/// per-class ratios count as 0. Weighted recall reduces algebraically to
/// `trace / N` and is computed that way, so it equals accuracy exactly.
pub fn weighted_prf(cm: &ConfusionMatrix) -> Result<WeightedMetrics> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::InvalidArgument("empty confusion matrix".into()));
    }
    let mut precision = 0.0;
    let mut f1 = 0.0;
    for c in 0..cm.k {
        let support = cm.support(c);
        if support == 0 {
            continue;
        }
        let w = support as f64 / n as f64;
        let p = ratio(cm.get(c, c), cm.predicted(c));
        let r = ratio(cm.get(c, c), support);
        precision += w * p;
        if p + r > 0.0 {
            f1 += w * 2.0 * p * r / (p + r);
        }
    }
    let accuracy = cm.trace() as f64 / n as f64;
    Ok(WeightedMetrics {
        accuracy,
        precision,
        recall: accuracy,
        f1,
    })
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Metric values over `resamples` bootstrap replicates of the sample pairs.
pub fn bootstrap_replicates<F>(
    y_true: &[usize],
    y_pred: &[usize],
    k: usize,
    resamples: usize,
    seed: u64,
    mut metric_fn: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&ConfusionMatrix) -> f64,
{
    check_labels(y_true, y_pred, k)?;
    if resamples < 1 {
        return Err(Error::InvalidArgument("bootstrap needs at least one resample".into()));
    }
    let n = y_true.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cm = ConfusionMatrix::zeros(k);
    let mut values = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        cm.counts.iter_mut().for_each(|c| *c = 0);
        for _ in 0..n {
            let i = rng.random_range(0..n);
            cm.add(y_true[i], y_pred[i]);
        }
        values.push(metric_fn(&cm));
    }
    Ok(values)
}

fn interval(mut values: Vec<f64>, level: f64) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (percentile(&values, tail), percentile(&values, 1.0 - tail))
}

/// Percentile bootstrap confidence interval for `metric_fn`.
pub fn bootstrap_ci<F>(
    y_true: &[usize],
    y_pred: &[usize],
    k: usize,
    metric_fn: F,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)>
where
    F: FnMut(&ConfusionMatrix) -> f64,
{
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level {level} outside (0, 1)")));
    }
    Ok(interval(
        bootstrap_replicates(y_true, y_pred, k, resamples, seed, metric_fn)?,
        level,
    ))
}

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;

pub const CSV_HEADER: &str = "activation,train_seconds,eval_seconds,total_seconds,accuracy,acc_ci_lo,acc_ci_hi,precision_w,prec_ci_lo,prec_ci_hi,recall_w,rec_ci_lo,rec_ci_hi,f1_w,f1_ci_lo,f1_ci_hi";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

/// One benchmark row. A failed run carries `error` and zeroed metrics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub activation: String,
    pub train_seconds: f64,
    pub eval_seconds: f64,
    pub total_seconds: f64,
    pub accuracy: f64,
    pub acc_ci_lo: f64,
    pub acc_ci_hi: f64,
    pub precision_w: f64,
    pub prec_ci_lo: f64,
    pub prec_ci_hi: f64,
    pub recall_w: f64,
    pub rec_ci_lo: f64,
    pub rec_ci_hi: f64,
    pub f1_w: f64,
    pub f1_ci_lo: f64,
    pub f1_ci_hi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Bootstraps all four metrics from one shared set of resamples. Each
/// interval is widened, if needed, to contain its point estimate.
pub fn build_report(activation: &str, y_true: &[usize], y_pred: &[usize], k: usize, timings: Timings, seed: u64) -> Result<EvalReport> {
    build_report_with(activation, y_true, y_pred, k, timings, seed, DEFAULT_RESAMPLES, DEFAULT_LEVEL)
}

#[allow(clippy::too_many_arguments)]
pub fn build_report_with(
    activation: &str,
    y_true: &[usize],
    y_pred: &[usize],
    k: usize,
    timings: Timings,
    seed: u64,
    resamples: usize,
    level: f64,
) -> Result<EvalReport> {
    let point = weighted_prf(&confusion(y_true, y_pred, k)?)?;
    let mut reps = Vec::with_capacity(resamples);
    bootstrap_replicates(y_true, y_pred, k, resamples, seed, |cm| {
        reps.push(weighted_prf(cm).expect("resample is non-empty"));
        0.0
    })?;
    let ci = |get: fn(&WeightedMetrics) -> f64| {
        let (lo, hi) = interval(reps.iter().map(get).collect(), level);
        let p = get(&point);
        (lo.min(p), hi.max(p))
    };
    let (acc_ci_lo, acc_ci_hi) = ci(|m| m.accuracy);
    let (prec_ci_lo, prec_ci_hi) = ci(|m| m.precision);
    let (rec_ci_lo, rec_ci_hi) = ci(|m| m.recall);
    let (f1_ci_lo, f1_ci_hi) = ci(|m| m.f1);
    Ok(EvalReport {
        activation: activation.to_string(),
        train_seconds: timings.train_seconds,
        eval_seconds: timings.eval_seconds,
        total_seconds: timings.train_seconds + timings.eval_seconds,
        accuracy: point.accuracy,
        acc_ci_lo,
        acc_ci_hi,
        precision_w: point.precision,
        prec_ci_lo,
        prec_ci_hi,
        recall_w: point.recall,
        rec_ci_lo,
        rec_ci_hi,
        f1_w: point.f1,
        f1_ci_lo,
        f1_ci_hi,
        error: None,
    })
}

impl EvalReport {
    pub fn failed(activation: &str, message: impl Into<String>) -> Self {
        EvalReport {
            activation: activation.to_string(),
            error: Some(message.into()),
            ..EvalReport::default()
        }
    }

    fn values(&self) -> [f64; 15] {
        [
            self.train_seconds,
            self.eval_seconds,
            self.total_seconds,
            self.accuracy,
            self.acc_ci_lo,
            self.acc_ci_hi,
            self.precision_w,
            self.prec_ci_lo,
            self.prec_ci_hi,
            self.recall_w,
            self.rec_ci_lo,
            self.rec_ci_hi,
            self.f1_w,
            self.f1_ci_lo,
            self.f1_ci_hi,
        ]
    }

    /// Checks the report invariants: metrics and bounds in `[0, 1]`,
    /// `lo <= point <= hi`, non-negative timings summing to the total.
    pub fn check_invariants(&self) -> Result<()> {
        let v = self.values();
        let bad = |m: String| Err(Error::Numeric(format!("report {}: {m}", self.activation)));
        if v.iter().any(|x| !x.is_finite()) {
            return bad("non-finite field".into());
        }
        if v[..3].iter().any(|&t| t < 0.0) {
            return bad("negative timing".into());
        }
        if (self.total_seconds - (self.train_seconds + self.eval_seconds)).abs() > 1e-9 * self.total_seconds.max(1.0) {
            return bad("total_seconds != train + eval".into());
        }
        for triple in v[3..].chunks_exact(3) {
            let (p, lo, hi) = (triple[0], triple[1], triple[2]);
            if triple.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return bad(format!("metric outside [0, 1]: {triple:?}"));
            }
            if !(lo <= p && p <= hi) {
                return bad(format!("interval does not contain point: {triple:?}"));
            }
        }
        Ok(())
    }

    /// CSV cells at two-decimal display precision. Failed runs leave the
    /// numeric cells empty.
    fn csv_record(&self) -> Vec<String> {
        let mut cells = vec![self.activation.clone()];
        if self.error.is_some() {
            cells.extend(std::iter::repeat_n(String::new(), 15));
        } else {
            cells.extend(self.values().iter().map(|v| format!("{v:.2}")));
        }
        cells
    }

    fn from_csv_record(cells: &csv::StringRecord) -> Result<Self> {
        if cells.len() != 16 {
            return Err(Error::InvalidArgument(format!("CSV row has {} cells, expected 16", cells.len())));
        }
        if cells.iter().skip(1).all(|c| c.is_empty()) {
            return Ok(EvalReport::failed(&cells[0], "failed run"));
        }
        let mut v = [0.0; 15];
        for (slot, cell) in v.iter_mut().zip(cells.iter().skip(1)) {
            *slot = cell
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad CSV number {cell:?}")))?;
        }
        Ok(EvalReport {
            activation: cells[0].to_string(),
            train_seconds: v[0],
            eval_seconds: v[1],
            total_seconds: v[2],
            accuracy: v[3],
            acc_ci_lo: v[4],
            acc_ci_hi: v[5],
            precision_w: v[6],
            prec_ci_lo: v[7],
            prec_ci_hi: v[8],
            recall_w: v[9],
            rec_ci_lo: v[10],
            rec_ci_hi: v[11],
            f1_w: v[12],
            f1_ci_lo: v[13],
            f1_ci_hi: v[14],
            error: None,
        })
    }

    /// Same report with every numeric field rounded to two decimals.
    pub fn rounded(&self) -> Self {
        match EvalReport::from_csv_record(&csv::StringRecord::from(self.csv_record())) {
            Ok(mut e) => {
                e.error = self.error.clone();
                e
            }
            Err(_) => self.clone(),
        }
    }

    /// Human-readable line, e.g. `relu 725.79 0.99 (0.98-1.00) ...`.
    pub fn display_row(&self) -> String {
        if let Some(e) = &self.error {
            return format!("{} FAILED: {e}", self.activation);
        }
        let m = |p: f64, lo: f64, hi: f64| format!("{p:.2} ({lo:.2}-{hi:.2})");
        format!(
            "{} {:.2} {} {} {} {}",
            self.activation,
            self.total_seconds,
            m(self.accuracy, self.acc_ci_lo, self.acc_ci_hi),
            m(self.precision_w, self.prec_ci_lo, self.prec_ci_hi),
            m(self.recall_w, self.rec_ci_lo, self.rec_ci_hi),
            m(self.f1_w, self.f1_ci_lo, self.f1_ci_hi)
        )
    }
}

pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).expect("write to vec");
    for r in reports {
        w.write_record(r.csv_record()).expect("write to vec");
    }
    String::from_utf8(w.into_inner().expect("flush to vec")).expect("utf-8 cells")
}

pub fn reports_from_csv(text: &str) -> Result<Vec<EvalReport>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::InvalidArgument(format!("CSV: {e}")))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::InvalidArgument("CSV header mismatch".into()));
    }
    r.records()
        .map(|rec| EvalReport::from_csv_record(&rec.map_err(|e| Error::InvalidArgument(format!("CSV: {e}")))?))
        .collect()
}

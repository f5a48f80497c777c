//! Qualitative comparisons between groups of runs.
//!
//! Groups are listed in the order the assertion expects, e.g. SGD, SAM,
//! SANER for decreasing noisy accuracy. Each group may hold several seeds;
//! its statistic is the mean of the per-run statistics.

use std::fmt;

use super::metrics::MetricsRow;
use crate::error::{Error, Result};

/// Runs sharing a configuration apart from the seed.
#[derive(Debug, Clone)]
pub struct RunGroup<'a> {
    pub label: String,
    pub runs: Vec<&'a [MetricsRow]>,
}

impl<'a> RunGroup<'a> {
    pub fn new(label: impl Into<String>, runs: Vec<&'a [MetricsRow]>) -> Self {
        Self {
            label: label.into(),
            runs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assertion {
    /// Final-epoch noisy training accuracy decreases along the groups.
    NoisyAccOrdering,
    /// Best-over-epochs test accuracy decreases along the groups.
    TestAccOrdering,
    /// The first group's late-phase median pr exceeds 1 and the following
    /// groups do not exceed their predecessor.
    PrLatePhase,
}

impl fmt::Display for Assertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Assertion::NoisyAccOrdering => "noisy_acc_ordering",
            Assertion::TestAccOrdering => "test_acc_ordering",
            Assertion::PrLatePhase => "pr_late_phase",
        })
    }
}

/// Required gap between consecutive groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Strictly positive margin.
    Positive,
    /// Margin of at least the given value (may be negative for a tolerance).
    AtLeast(f64),
}

impl Threshold {
    fn holds(self, margin: f64) -> bool {
        match self {
            Threshold::Positive => margin > 0.0,
            Threshold::AtLeast(t) => margin >= t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// A statistic was undefined for some group.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStat {
    pub label: String,
    pub per_run: Vec<Option<f64>>,
    /// Mean over runs; `None` if any run's statistic is undefined.
    pub mean: Option<f64>,
    /// Sample standard deviation over runs (0 for a single run).
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Margin {
    pub higher: String,
    pub lower: String,
    pub margin: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub assertion: Assertion,
    pub groups: Vec<GroupStat>,
    pub margins: Vec<Margin>,
    pub verdict: Verdict,
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}: {:?}", self.assertion, self.verdict)?;
        for g in &self.groups {
            match (g.mean, g.std) {
                (Some(m), Some(s)) => writeln!(f, "  {:<24} {m:.4} ± {s:.4}", g.label)?,
                _ => writeln!(f, "  {:<24} undefined", g.label)?,
            }
        }
        for m in &self.margins {
            writeln!(
                f,
                "  {} - {} = {:+.4} [{}]",
                m.higher,
                m.lower,
                m.margin,
                if m.holds { "ok" } else { "violated" }
            )?;
        }
        Ok(())
    }
}

/// Median of the defined pr values over the last third of the epochs.
pub fn late_phase_pr(rows: &[MetricsRow]) -> Option<f64> {
    let tail = (rows.len() / 3).max(1).min(rows.len());
    let mut values: Vec<f64> = rows[rows.len() - tail..].iter().filter_map(|r| r.pr).collect();
    median(&mut values)
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    })
}

pub fn final_noisy_acc(rows: &[MetricsRow]) -> Option<f64> {
    rows.last()?.noisy_train_acc
}

/// Highest test accuracy reached in any epoch.
pub fn best_test_acc(rows: &[MetricsRow]) -> Option<f64> {
    rows.iter().filter_map(|r| r.test_acc).max_by(f64::total_cmp)
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn statistic(assertion: Assertion, rows: &[MetricsRow]) -> Option<f64> {
    match assertion {
        Assertion::NoisyAccOrdering => final_noisy_acc(rows),
        Assertion::TestAccOrdering => best_test_acc(rows),
        Assertion::PrLatePhase => late_phase_pr(rows),
    }
}

pub fn compare_runs(groups: &[RunGroup<'_>], assertion: Assertion, threshold: Threshold) -> Result<ComparisonReport> {
    if groups.len() < 2 {
        return Err(Error::Compare("need at least two groups".into()));
    }
    let mut grid: Option<Vec<usize>> = None;
    for g in groups {
        if g.runs.is_empty() {
            return Err(Error::Compare(format!("group {:?} holds no runs", g.label)));
        }
        for run in &g.runs {
            let epochs: Vec<usize> = run.iter().map(|r| r.epoch).collect();
            if epochs.is_empty() {
                return Err(Error::Compare(format!("group {:?} holds an empty run", g.label)));
            }
            match &grid {
                None => grid = Some(epochs),
                Some(expected) if *expected != epochs => {
                    return Err(Error::Compare(format!("epoch grid of group {:?} is misaligned", g.label)));
                }
                Some(_) => {}
            }
        }
    }

    let stats: Vec<GroupStat> = groups
        .iter()
        .map(|g| {
            let per_run: Vec<Option<f64>> = g.runs.iter().map(|r| statistic(assertion, r)).collect();
            let defined: Option<Vec<f64>> = per_run.iter().copied().collect();
            let (mean, std) = match defined {
                Some(v) => {
                    let (m, s) = mean_std(&v);
                    (Some(m), Some(s))
                }
                None => (None, None),
            };
            GroupStat {
                label: g.label.clone(),
                per_run,
                mean,
                std,
            }
        })
        .collect();

    let means: Option<Vec<f64>> = stats.iter().map(|s| s.mean).collect();
    let Some(means) = means else {
        return Ok(ComparisonReport {
            assertion,
            groups: stats,
            margins: Vec::new(),
            verdict: Verdict::Inconclusive,
        });
    };
    let margins: Vec<Margin> = stats
        .windows(2)
        .zip(means.windows(2))
        .map(|(s, m)| {
            let margin = m[0] - m[1];
            Margin {
                higher: s[0].label.clone(),
                lower: s[1].label.clone(),
                margin,
                holds: threshold.holds(margin),
            }
        })
        .collect();
    let mut pass = margins.iter().all(|m| m.holds);
    if assertion == Assertion::PrLatePhase {
        pass &= means[0] > 1.0;
    }
    Ok(ComparisonReport {
        assertion,
        groups: stats,
        margins,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(noisy: &[f64], pr: &[Option<f64>]) -> Vec<MetricsRow> {
        noisy
            .iter()
            .zip(pr)
            .enumerate()
            .map(|(epoch, (&n, &pr))| MetricsRow {
                epoch,
                eta: 0.1,
                alpha: 1.0,
                noisy_train_acc: Some(n),
                test_acc: Some(1.0 - n),
                pr,
                ..MetricsRow::default()
            })
            .collect()
    }

    #[test]
    fn ordered_fixture_passes() {
        let sgd = run(&[0.5, 0.9], &[None, None]);
        let sam = run(&[0.4, 0.6], &[None, None]);
        let saner = run(&[0.3, 0.3], &[None, None]);
        let groups = [
            RunGroup::new("sgd", vec![&sgd]),
            RunGroup::new("sam", vec![&sam]),
            RunGroup::new("saner", vec![&saner]),
        ];
        let r = compare_runs(&groups, Assertion::NoisyAccOrdering, Threshold::Positive).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!((r.margins[0].margin - 0.3).abs() < 1e-12);
    }

    #[test]
    fn equal_records_fail_with_zero_margin() {
        let a = run(&[0.5, 0.6], &[None, None]);
        let groups = [RunGroup::new("a", vec![&a]), RunGroup::new("b", vec![&a])];
        let r = compare_runs(&groups, Assertion::NoisyAccOrdering, Threshold::Positive).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.margins[0].margin, 0.0);
    }

    #[test]
    fn all_undefined_pr_is_inconclusive() {
        let a = run(&[0.5, 0.6, 0.7], &[None, None, None]);
        let b = run(&[0.5, 0.6, 0.7], &[Some(1.0), Some(2.0), Some(3.0)]);
        let groups = [RunGroup::new("a", vec![&a]), RunGroup::new("b", vec![&b])];
        let r = compare_runs(&groups, Assertion::PrLatePhase, Threshold::AtLeast(0.0)).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn pr_late_phase_needs_first_above_one() {
        let pr = |v: f64| vec![Some(0.1), Some(0.1), Some(v)];
        let sam = run(&[0.0; 3], &pr(1.5));
        let saner = run(&[0.0; 3], &pr(1.2));
        let low = run(&[0.0; 3], &pr(0.9));
        let ok = [RunGroup::new("sam", vec![&sam]), RunGroup::new("saner", vec![&saner])];
        assert_eq!(compare_runs(&ok, Assertion::PrLatePhase, Threshold::AtLeast(0.0)).unwrap().verdict, Verdict::Pass);
        let below = [RunGroup::new("sam", vec![&low]), RunGroup::new("saner", vec![&low])];
        assert_eq!(compare_runs(&below, Assertion::PrLatePhase, Threshold::AtLeast(0.0)).unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn test_ordering_uses_best_epoch() {
        let a = run(&[0.1, 0.9], &[None, None]); // best test 0.9
        let b = run(&[0.2, 0.2], &[None, None]); // best test 0.8
        let groups = [RunGroup::new("a", vec![&a]), RunGroup::new("b", vec![&b])];
        let r = compare_runs(&groups, Assertion::TestAccOrdering, Threshold::Positive).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!((r.groups[0].mean.unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn misaligned_grids_are_rejected() {
        let a = run(&[0.1, 0.2], &[None, None]);
        let b = run(&[0.1], &[None]);
        let groups = [RunGroup::new("a", vec![&a]), RunGroup::new("b", vec![&b])];
        assert!(compare_runs(&groups, Assertion::NoisyAccOrdering, Threshold::Positive).is_err());
        assert!(compare_runs(&groups[..1], Assertion::NoisyAccOrdering, Threshold::Positive).is_err());
    }

    #[test]
    fn seeds_are_averaged() {
        let a1 = run(&[0.6], &[None]);
        let a2 = run(&[0.8], &[None]);
        let b = run(&[0.5], &[None]);
        let groups = [RunGroup::new("a", vec![&a1, &a2]), RunGroup::new("b", vec![&b])];
        let r = compare_runs(&groups, Assertion::NoisyAccOrdering, Threshold::AtLeast(0.2)).unwrap();
        assert!((r.groups[0].mean.unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}

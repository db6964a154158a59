use std::fmt::Write as _;

use serde::Serialize;
use tfbhtmm::tasks::{EvalReport, Task};

/// Mean and sample standard deviation; `std` is absent for a single run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

impl Summary {
    fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.len() > 1).then(|| {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        Self { mean, std }
    }

    fn cell(&self) -> String {
        match self.std {
            Some(s) => format!("{:>8.2} {:>7.2}", self.mean, s),
            None => format!("{:>8.2}", self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategorySummary {
    pub category: usize,
    pub support: u64,
    pub accuracy: Summary,
    pub entropy: Summary,
}

/// Per-run reports with their mean and spread.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub task: Task,
    pub runs: usize,
    pub accuracy: Summary,
    pub entropy: Summary,
    pub breakdown: Vec<CategorySummary>,
    pub reports: Vec<EvalReport>,
}

pub fn aggregate(task: Task, reports: Vec<EvalReport>) -> Aggregate {
    assert!(!reports.is_empty());
    let col = |f: &dyn Fn(&EvalReport) -> f64| Summary::of(&reports.iter().map(f).collect::<Vec<_>>());
    let categories = reports[0].breakdown.len();
    let breakdown = (0..categories)
        .map(|c| CategorySummary {
            category: c,
            support: reports[0].breakdown[c].support,
            accuracy: col(&|r| r.breakdown[c].accuracy),
            entropy: col(&|r| r.breakdown[c].entropy),
        })
        .collect();
    Aggregate {
        task,
        runs: reports.len(),
        accuracy: col(&|r| r.accuracy),
        entropy: col(&|r| r.entropy),
        breakdown,
        reports,
    }
}

impl Aggregate {
    pub fn to_table(&self) -> String {
        let head = match self.task {
            Task::Classify => "class",
            Task::Label => "label",
        };
        let spread = self.runs > 1;
        let pair = |name: &str| {
            if spread {
                format!("{name:>8} {:>7}", "std")
            } else {
                format!("{name:>8}")
            }
        };
        let mut out = format!(
            "{head:>6} {:>8} {} {}\n",
            "support",
            pair("accuracy"),
            pair("entropy")
        );
        for c in &self.breakdown {
            let _ = writeln!(
                out,
                "{:>6} {:>8} {} {}",
                c.category,
                c.support,
                c.accuracy.cell(),
                c.entropy.cell()
            );
        }
        let total = self.reports[0].total;
        let _ = writeln!(
            out,
            "{:>6} {:>8} {} {}",
            "all",
            total,
            self.accuracy.cell(),
            self.entropy.cell()
        );
        let _ = writeln!(out, "runs: {}", self.runs);
        out
    }
}

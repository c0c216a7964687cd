use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::tags::Tag;
use crate::error::Result;
use crate::io::atomic_write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenarios: usize,
    pub safety: f64,
    pub comfort: f64,
    pub progress: f64,
    pub l2_with_yaw: f64,
    pub l2: f64,
    pub collision_rate: f64,
    pub tailgate_rate: f64,
}

impl SummaryRow {
    fn of(reports: &[&MetricsReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
        Self {
            scenarios: reports.len(),
            safety: mean(&|r| r.safety.category_score),
            comfort: mean(&|r| r.comfort.category_score),
            progress: mean(&|r| r.progress.category_score),
            l2_with_yaw: mean(&|r| r.l2.avg_l2_with_yaw),
            l2: mean(&|r| r.l2.avg_l2),
            collision_rate: mean(&|r| r.safety.front_collision as u8 as f64),
            tailgate_rate: mean(&|r| !r.safety.tailgate_ok as u8 as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub planner: String,
    pub overall: SummaryRow,
    pub per_tag: BTreeMap<Tag, SummaryRow>,
}

/// Means over scenarios, overall and per tag. `tags[i]` belongs to `reports[i]`.
pub fn aggregate(planner: &str, reports: &[MetricsReport], tags: &[BTreeSet<Tag>]) -> Summary {
    let all: Vec<&MetricsReport> = reports.iter().collect();
    let mut per_tag = BTreeMap::new();
    for tag in Tag::ALL {
        let group: Vec<&MetricsReport> = reports
            .iter()
            .zip(tags)
            .filter(|(_, t)| t.contains(&tag))
            .map(|(r, _)| r)
            .collect();
        if !group.is_empty() {
            per_tag.insert(tag, SummaryRow::of(&group));
        }
    }
    Summary {
        planner: planner.to_string(),
        overall: SummaryRow::of(&all),
        per_tag,
    }
}

const HEADER: &str = "planner,scenarios,safety,comfort,progress,l2_with_yaw,collision,tailgate";

fn row_line(out: &mut String, label: &str, r: &SummaryRow) {
    let _ = writeln!(
        out,
        "{label},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
        r.scenarios, r.safety, r.comfort, r.progress, r.l2_with_yaw, r.collision_rate, r.tailgate_rate
    );
}

pub fn write_summary_csv(path: &Path, summaries: &[Summary]) -> Result<()> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for s in summaries {
        row_line(&mut out, &s.planner, &s.overall);
    }
    atomic_write(path, out.as_bytes())
}

pub fn write_tag_csv(path: &Path, summaries: &[Summary]) -> Result<()> {
    let mut out = String::from("tag,");
    out.push_str(HEADER);
    out.push('\n');
    for s in summaries {
        for (tag, r) in &s.per_tag {
            out.push_str(tag.name());
            out.push(',');
            row_line(&mut out, &s.planner, r);
        }
    }
    atomic_write(path, out.as_bytes())
}

//! Accuracy aggregation by relation type and reasoning scope, rendered as a
//! plain-text table and as CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::domain::{Complexity, Equivalence, RelationType};

use super::ItemResult;

/// Printed for a cell with no items.
pub const ABSENT: &str = "\u{2014}";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cell {
    pub correct: usize,
    pub total: usize,
}

impl Cell {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += correct as usize;
    }

    /// `None` for an empty cell.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    fn text(&self) -> String {
        self.accuracy().map_or_else(|| ABSENT.to_string(), |a| format!("{a:.2}"))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    /// Row label, e.g. `Agentic-Image`.
    pub framework: String,
    pub overall: Cell,
    pub by_relation: BTreeMap<RelationType, Cell>,
    pub by_scope: BTreeMap<Complexity, Cell>,
    pub by_relation_scope: BTreeMap<(RelationType, Complexity), Cell>,
    /// Items that failed before a verdict; they count as incorrect.
    pub failures: usize,
    /// Items without an annotation; they are absent from the scope cells.
    pub unannotated: usize,
}

/// Every item is scored: a missing verdict counts as DIFFERENT.
pub fn aggregate(framework: &str, results: &[ItemResult]) -> Report {
    let mut r = Report { framework: framework.to_string(), ..Report::default() };
    for res in results {
        let correct = res.verdict.as_ref().is_some_and(|v| v.verdict == Equivalence::Same);
        if res.verdict.is_none() {
            r.failures += 1;
        }
        let rel = res.item.relation_type;
        r.overall.add(correct);
        r.by_relation.entry(rel).or_default().add(correct);
        match res.annotation {
            Some(a) => {
                r.by_scope.entry(a.complexity).or_default().add(correct);
                r.by_relation_scope.entry((rel, a.complexity)).or_default().add(correct);
            }
            None => r.unannotated += 1,
        }
    }
    r
}

const SCOPES: [Complexity; 2] = [Complexity::Local, Complexity::Relational];

fn scope_label(s: Complexity) -> &'static str {
    match s {
        Complexity::Local => "Local",
        Complexity::Relational => "Relational",
    }
}

fn row(out: &mut String, label: &str, cells: &[String]) {
    let _ = write!(out, "{label:<16}");
    for c in cells {
        let _ = write!(out, "{c:>13}");
    }
    out.push('\n');
}

impl Report {
    fn relation_cell(&self, r: RelationType) -> Cell {
        self.by_relation.get(&r).copied().unwrap_or_default()
    }

    fn pair_cell(&self, r: RelationType, s: Complexity) -> Cell {
        self.by_relation_scope.get(&(r, s)).copied().unwrap_or_default()
    }

    /// Accuracy table with one row per framework and one column per
    /// relation type, followed by the scope breakdown.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = RelationType::ALL.iter().map(|r| r.label().to_string()).collect();
        out.push_str("Relation Type (Accuracy)\n");
        row(&mut out, "Framework", &header);
        row(&mut out, &self.framework, &RelationType::ALL.map(|r| self.relation_cell(r).text()));
        let _ = writeln!(out, "\nOverall: {} ({}/{})", self.overall.text(), self.overall.correct, self.overall.total);

        out.push('\n');
        out.push_str(&self.render_scope_text());
        let _ = writeln!(
            out,
            "\nItems: {}  Failed: {}  Unannotated: {}",
            self.overall.total, self.failures, self.unannotated
        );
        out
    }

    /// Accuracy by reasoning scope, split by relation type.
    pub fn render_scope_text(&self) -> String {
        let mut out = String::from("Reasoning Scope (Accuracy)\n");
        let mut header: Vec<String> = RelationType::ALL.iter().map(|r| r.label().to_string()).collect();
        header.push("All".into());
        row(&mut out, "Scope", &header);
        for s in SCOPES {
            let mut cells: Vec<String> = RelationType::ALL.iter().map(|&r| self.pair_cell(r, s).text()).collect();
            cells.push(self.by_scope.get(&s).copied().unwrap_or_default().text());
            row(&mut out, scope_label(s), &cells);
        }
        out
    }

    /// One line per cell; accuracy left blank when absent.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("framework,relation_type,scope,correct,total,accuracy\n");
        let mut line = |rel: &str, scope: &str, c: Cell| {
            let acc = c.accuracy().map(|a| format!("{a:.4}")).unwrap_or_default();
            let _ = writeln!(out, "{},{rel},{scope},{},{},{acc}", self.framework, c.correct, c.total);
        };
        for r in RelationType::ALL {
            line(r.label(), "all", self.relation_cell(r));
        }
        for s in SCOPES {
            line("all", &scope_label(s).to_lowercase(), self.by_scope.get(&s).copied().unwrap_or_default());
        }
        for r in RelationType::ALL {
            for s in SCOPES {
                line(r.label(), &scope_label(s).to_lowercase(), self.pair_cell(r, s));
            }
        }
        line("all", "all", self.overall);
        out
    }
}

//! Optimizer traces and their CSV forms.
//!
//! Trace CSVs are deterministic: the `wall_time_s` column is written empty
//! unless timings are requested explicitly. Timings go to a separate
//! `index,wall_time_s` file so repeated runs can be compared byte for byte.

use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Trust radius reached its floor, or first-order tolerances were met.
    Converged,
    /// Evaluation or iteration budget exhausted; the best point found is returned.
    BudgetExhausted,
    /// The interpolation simplex lost accuracy to rounding.
    RoundingErrors,
    /// A function, constraint or gradient value was not finite.
    NonFinite,
    /// The trust region collapsed before the tolerances were met.
    Stalled,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::BudgetExhausted => "budget_exhausted",
            Termination::RoundingErrors => "rounding_errors",
            Termination::NonFinite => "non_finite",
            Termination::Stalled => "stalled",
        }
    }

    pub fn is_converged(&self) -> bool {
        matches!(self, Termination::Converged)
    }
}

/// One function evaluation of the derivative-free solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfoRecord {
    /// From 1.
    pub eval_index: usize,
    pub x: Vec<f64>,
    pub rho: f64,
    /// Objective plus the current penalty times the violation.
    pub merit: f64,
    pub objective: f64,
    pub max_violation: f64,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// One accepted iterate of the gradient solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradRecord {
    /// From 0 (the starting point).
    pub iter: usize,
    pub x: Vec<f64>,
    pub merit: f64,
    pub objective: f64,
    pub g1_abs: f64,
    pub g2: f64,
    pub trust_radius: f64,
    pub grad_norm: f64,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeColumn {
    #[default]
    Blank,
    Include,
}

fn time_cell(t: f64, mode: TimeColumn) -> String {
    match mode {
        TimeColumn::Blank => String::new(),
        TimeColumn::Include => format!("{t}"),
    }
}

pub const DFO_TRACE_HEADER: &str = "eval_index,rho,merit,objective,max_violation,wall_time_s";
pub const GRAD_TRACE_HEADER: &str = "iter,merit,objective,g1_abs,g2,trust_radius,grad_norm,wall_time_s";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "snake_case")]
pub enum OptTrace {
    Dfo {
        records: Vec<DfoRecord>,
        termination: Termination,
    },
    Grad {
        records: Vec<GradRecord>,
        termination: Termination,
    },
}

impl OptTrace {
    pub fn termination(&self) -> Termination {
        match self {
            OptTrace::Dfo { termination, .. } | OptTrace::Grad { termination, .. } => *termination,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            OptTrace::Dfo { records, .. } => records.len(),
            OptTrace::Grad { records, .. } => records.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Visited points in order.
    pub fn iterates(&self) -> Vec<&[f64]> {
        match self {
            OptTrace::Dfo { records, .. } => records.iter().map(|r| r.x.as_slice()).collect(),
            OptTrace::Grad { records, .. } => records.iter().map(|r| r.x.as_slice()).collect(),
        }
    }

    /// Running minimum of the merit column.
    pub fn best_merit_sequence(&self) -> Vec<f64> {
        let merits: Vec<f64> = match self {
            OptTrace::Dfo { records, .. } => records.iter().map(|r| r.merit).collect(),
            OptTrace::Grad { records, .. } => records.iter().map(|r| r.merit).collect(),
        };
        let mut best = f64::INFINITY;
        merits
            .into_iter()
            .map(|m| {
                best = best.min(m);
                best
            })
            .collect()
    }

    pub fn total_time_s(&self) -> f64 {
        match self {
            OptTrace::Dfo { records, .. } => records.last().map_or(0.0, |r| r.wall_time_s),
            OptTrace::Grad { records, .. } => records.last().map_or(0.0, |r| r.wall_time_s),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W, time: TimeColumn) -> std::io::Result<()> {
        match self {
            OptTrace::Dfo { records, .. } => {
                writeln!(w, "{DFO_TRACE_HEADER}")?;
                for r in records {
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        r.eval_index,
                        r.rho,
                        r.merit,
                        r.objective,
                        r.max_violation,
                        time_cell(r.wall_time_s, time)
                    )?;
                }
            }
            OptTrace::Grad { records, .. } => {
                writeln!(w, "{GRAD_TRACE_HEADER}")?;
                for r in records {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{}",
                        r.iter,
                        r.merit,
                        r.objective,
                        r.g1_abs,
                        r.g2,
                        r.trust_radius,
                        r.grad_norm,
                        time_cell(r.wall_time_s, time)
                    )?;
                }
            }
        }
        Ok(())
    }

    /// `index,wall_time_s` rows, index matching the trace's first column.
    pub fn write_timing_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,wall_time_s")?;
        match self {
            OptTrace::Dfo { records, .. } => {
                for r in records {
                    writeln!(w, "{},{}", r.eval_index, r.wall_time_s)?;
                }
            }
            OptTrace::Grad { records, .. } => {
                for r in records {
                    writeln!(w, "{},{}", r.iter, r.wall_time_s)?;
                }
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, TimeColumn::Blank).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dfo() -> OptTrace {
        let rec = |i: usize, merit: f64| DfoRecord {
            eval_index: i,
            x: vec![i as f64],
            rho: 1.0,
            merit,
            objective: merit,
            max_violation: 0.0,
            wall_time_s: 0.25 * i as f64,
        };
        OptTrace::Dfo {
            records: vec![rec(1, 3.0), rec(2, 5.0), rec(3, 1.5)],
            termination: Termination::Converged,
        }
    }

    #[test]
    fn csv_leaves_time_blank_by_default() {
        let s = dfo().to_csv_string();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], DFO_TRACE_HEADER);
        assert_eq!(lines[1], "1,1,3,3,0,");
        let mut with_time = Vec::new();
        dfo().write_csv(&mut with_time, TimeColumn::Include).unwrap();
        assert!(String::from_utf8(with_time)
            .unwrap()
            .lines()
            .nth(3)
            .unwrap()
            .ends_with(",0.75"));
    }

    #[test]
    fn best_merit_is_running_minimum() {
        assert_eq!(dfo().best_merit_sequence(), vec![3.0, 3.0, 1.5]);
        assert_eq!(dfo().total_time_s(), 0.75);
    }
}

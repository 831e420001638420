//! The offload analyzer: forward remotability marking, backward
//! remote-pointer propagation, slice extraction, profile labeling,
//! cost-model placement, and the offload rewrite, wired into one
//! deterministic pipeline.

pub mod cost;
pub mod labels;
pub mod mark;
pub mod rewrite;
pub mod slice;

use serde::Serialize;
use thiserror::Error;

pub use cost::{
    access_cost, choose_site, estimate_window, host_inline_cost, CostError, CostModel, Site,
};
pub use labels::{insert_profile_labels, profile_label_ids, ANCHOR_LABEL_BASE};
pub use mark::{mark_remotable, propagate_remote_pointers, Prov, RegionMap};
pub use rewrite::{
    check_offloaded, interpret_offloaded, rewrite_with_offload, IdealExecutor, OffloadedProgram,
};
pub use slice::{extract_slices, OffloadSlice, SliceOptions, SliceRun, SliceTrap, TripCount};

use crate::fabric::Topology;
use crate::ir::{print_program, Program, SpaceAnnotation};

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error("program failed validation:\n{0}")]
    InvalidProgram(String),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("rewrite produced an invalid program:\n{0}")]
    BadRewrite(String),
}

/// Analyzer knobs; see [`SliceOptions`] for the slicing fields.
#[derive(Debug, Clone, Copy)]
pub struct AnalyzeOptions {
    pub batching: bool,
    pub max_slice_len: usize,
    /// Trip estimate for counted loops whose start is not a visible
    /// constant.
    pub trip_guess: u64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        let s = SliceOptions::default();
        AnalyzeOptions {
            batching: s.batching,
            max_slice_len: s.max_slice_len,
            trip_guess: s.trip_guess,
        }
    }
}

impl AnalyzeOptions {
    fn slice_options(&self) -> SliceOptions {
        SliceOptions {
            batching: self.batching,
            max_slice_len: self.max_slice_len,
            trip_guess: self.trip_guess,
        }
    }
}

/// Everything the analyzer produces for one program.
#[derive(Debug, Clone)]
pub struct Analysis {
    /// Marked and labeled source program (no offload instructions).
    pub labeled: Program,
    pub remote_functions: std::collections::BTreeSet<String>,
    pub offloaded: OffloadedProgram,
    pub report: AnalysisReport,
}

/// Machine-readable analysis dump.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub format_version: u32,
    pub annotations: Vec<AnnotationLine>,
    pub remote_functions: Vec<String>,
    pub slices: Vec<SliceSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnnotationLine {
    pub function: String,
    pub index: usize,
    pub text: String,
    pub space: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceSummary {
    pub id: u32,
    pub function: String,
    pub body_len: usize,
    pub counted: bool,
    pub est_trip: u64,
    pub live_ins: Vec<String>,
    pub live_outs: Vec<String>,
    pub site: String,
    pub est_window: u64,
    pub anchor_label: u32,
}

impl AnalysisReport {
    /// Deterministic human-readable form of the dump.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("== annotations ==\n");
        for a in &self.annotations {
            out.push_str(&format!("{}:{:<4} {:<40} {}\n", a.function, a.index, a.text, a.space));
        }
        out.push_str("== remote functions ==\n");
        for f in &self.remote_functions {
            out.push_str(&format!("{f}\n"));
        }
        out.push_str("== slices ==\n");
        for s in &self.slices {
            out.push_str(&format!(
                "slice {} fn={} len={} trip={} ins=[{}] outs=[{}] site={} est_window={}\n",
                s.id,
                s.function,
                s.body_len,
                if s.counted { s.est_trip.to_string() } else { "1".into() },
                s.live_ins.join(","),
                s.live_outs.join(","),
                s.site,
                s.est_window,
            ));
        }
        out
    }
}

/// Run the full analysis pipeline and produce the rewritten program
/// plus its report.
pub fn analyze_program(
    p: &Program,
    cm: &CostModel,
    topo: &Topology,
    opts: &AnalyzeOptions,
) -> Result<Analysis, AnalyzeError> {
    let diags = crate::ir::validate(p);
    if !diags.is_empty() {
        let msgs: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(AnalyzeError::InvalidProgram(msgs.join("\n")));
    }
    cm.check()?;

    let rm = RegionMap::from_program(p);
    let mut marked = mark_remotable(p, &rm);
    let remote_functions = propagate_remote_pointers(&mut marked);

    let mut slices = extract_slices(&marked, &opts.slice_options());
    for s in &mut slices {
        let (site, est) = choose_site(s, cm, topo)?;
        s.site = site;
        s.est_window = est;
    }

    let labeled = insert_profile_labels(&marked, &mut slices);
    let offloaded = rewrite_with_offload(&labeled, &slices);

    let rewritten_diags = crate::ir::validate(&offloaded.program);
    let structural = check_offloaded(&offloaded);
    if !rewritten_diags.is_empty() || !structural.is_empty() {
        let msgs: Vec<String> =
            rewritten_diags.iter().chain(structural.iter()).map(|d| d.to_string()).collect();
        return Err(AnalyzeError::BadRewrite(msgs.join("\n")));
    }

    let report = build_report(&labeled, &remote_functions, &slices);
    Ok(Analysis { labeled, remote_functions, offloaded, report })
}

fn build_report(
    labeled: &Program,
    remote_functions: &std::collections::BTreeSet<String>,
    slices: &[OffloadSlice],
) -> AnalysisReport {
    let mut annotations = Vec::new();
    for f in &labeled.functions {
        for (i, inst) in f.body.iter().enumerate() {
            if inst.op.is_memory() {
                annotations.push(AnnotationLine {
                    function: f.name.clone(),
                    index: i,
                    text: crate::ir::print::print_op(&inst.op),
                    space: inst.space.to_string(),
                });
            }
        }
    }
    let slices = slices
        .iter()
        .map(|s| SliceSummary {
            id: s.id,
            function: labeled.functions[s.func].name.clone(),
            body_len: s.body.len(),
            counted: matches!(s.trip, TripCount::Counted { .. }),
            est_trip: s.est_trip,
            live_ins: s.live_ins.iter().map(|r| r.to_string()).collect(),
            live_outs: s.live_outs.iter().map(|r| r.to_string()).collect(),
            site: s.site.to_string(),
            est_window: s.est_window,
            anchor_label: s.anchor_label,
        })
        .collect();
    AnalysisReport {
        format_version: 1,
        annotations,
        remote_functions: remote_functions.iter().cloned().collect(),
        slices,
    }
}

/// Convenience check used across the test suites: no access may be
/// left unanalyzed after marking.
pub fn all_accesses_marked(p: &Program) -> bool {
    p.functions.iter().all(|f| {
        f.body
            .iter()
            .filter(|i| i.op.is_memory())
            .all(|i| i.space != SpaceAnnotation::Unanalyzed)
    })
}

/// Canonical text of a program, exposed for digesting.
pub fn program_text(p: &Program) -> String {
    print_program(p)
}

//! Reference-based fusion quality metrics. All functions take row-major
//! single-channel images on the 0-255 scale.

mod basic;
mod qabf;
mod report;
mod vif;

pub use basic::{ag, histogram_entropy, mi, mutual_information, sf};
pub use qabf::{qabf, self_preservation_bound};
pub use report::{evaluate_directory, evaluate_pair, Evaluation, MetricReport, VARIANT_NOTE};
pub use vif::vif;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Mi,
    Sf,
    Ag,
    Vif,
    Qabf,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Mi, Metric::Sf, Metric::Ag, Metric::Vif, Metric::Qabf];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mi => "MI",
            Metric::Sf => "SF",
            Metric::Ag => "AG",
            Metric::Vif => "VIF",
            Metric::Qabf => "Qabf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
    }

    /// Parses a comma-separated list such as `mi,sf`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>, String> {
        let mut out = Vec::new();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let m = Metric::parse(part).ok_or_else(|| format!("unknown metric `{}`", part.trim()))?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err("empty metric list".into());
        }
        Ok(out)
    }

    pub fn compute(self, fused: &[f64], ir: &[f64], vis: &[f64], h: usize, w: usize) -> f64 {
        match self {
            Metric::Mi => mi(fused, ir, vis),
            Metric::Sf => sf(fused, h, w),
            Metric::Ag => ag(fused, h, w),
            Metric::Vif => vif(fused, ir, vis, h, w),
            Metric::Qabf => qabf(fused, ir, vis, h, w),
        }
    }
}

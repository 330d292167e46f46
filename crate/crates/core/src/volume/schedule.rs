use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Slice indices that carry expert labels for one patient.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotationSchedule {
    depth: usize,
    indices: BTreeSet<usize>,
}

impl AnnotationSchedule {
    pub fn new(depth: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let indices: BTreeSet<usize> = indices.into_iter().collect();
        if let Some(&bad) = indices.iter().find(|&&i| i >= depth) {
            return Err(Error::Schedule(format!("index {bad} outside depth {depth}")));
        }
        Ok(AnnotationSchedule { depth, indices })
    }

    /// Every slice annotated.
    pub fn full(depth: usize) -> Self {
        AnnotationSchedule {
            depth,
            indices: (0..depth).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.indices.contains(&t)
    }

    /// Inference and training both start from `w` seed masks at slices `[0, w)`.
    pub fn check_seeds(&self, w: usize) -> Result<()> {
        match (0..w).find(|t| !self.contains(*t)) {
            Some(t) => Err(Error::Schedule(format!(
                "seed slice {t} is not annotated (the first {w} slices must be)"
            ))),
            None => Ok(()),
        }
    }
}

/// `k` consecutive annotations at the start of every `period`-slice block.
pub fn fixed_interval_schedule(depth: usize, period: usize, k: usize) -> Result<AnnotationSchedule> {
    if k == 0 || period < k {
        return Err(Error::Schedule(format!(
            "need period >= k >= 1, got period {period}, k {k}"
        )));
    }
    let idx = (0..depth)
        .step_by(period)
        .flat_map(|start| start..(start + k).min(depth));
    AnnotationSchedule::new(depth, idx)
}

/// Knobs of the exponentially decaying per-patient annotation budget.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecrementalParams {
    /// Fraction of the first patient's slices that are annotated.
    pub init_frac: f64,
    /// Lower bound on every patient's fraction.
    pub floor_frac: f64,
    /// Target share of annotated slices over all patients.
    pub budget_frac: f64,
    /// Seed width; also the size of each consecutive annotation group.
    pub w: usize,
}

impl Default for DecrementalParams {
    fn default() -> Self {
        DecrementalParams {
            init_frac: 0.164,
            floor_frac: 0.03,
            budget_frac: 0.035,
            w: 3,
        }
    }
}

impl DecrementalParams {
    /// Annotation count for patient `i` with `depth` slices, before seed checks.
    pub fn count(&self, i: usize, depth: usize) -> usize {
        let decayed = (self.init_frac * depth as f64 * 0.5f64.powi(i as i32)).round();
        let floor = (self.floor_frac * depth as f64).round();
        (decayed.max(floor) as usize).min(depth)
    }
}

/// Spread `count` indices over `[0, depth)` as consecutive groups of `w`,
/// the first group always at slice 0.
fn spread_groups(depth: usize, count: usize, w: usize) -> BTreeSet<usize> {
    let groups = count.div_ceil(w).max(1);
    let mut set = BTreeSet::new();
    let mut remaining = count;
    for j in 0..groups {
        let size = remaining.min(w);
        let start = ((j * depth) as f64 / groups as f64).round() as usize;
        let start = start.min(depth - size);
        set.extend(start..start + size);
        remaining -= size;
    }
    // Rounding can make groups collide near the end; top up with free slices.
    let mut next = 0;
    while set.len() < count {
        if !set.contains(&next) {
            set.insert(next);
        }
        next += 1;
    }
    set
}

/// One schedule per patient, patient `i` getting
/// `max(round(init·T·2^-i), round(floor·T))` annotations in consecutive groups.
pub fn decremental_schedule(depths: &[usize], params: &DecrementalParams) -> Result<Vec<AnnotationSchedule>> {
    for (name, v) in [
        ("init_frac", params.init_frac),
        ("floor_frac", params.floor_frac),
        ("budget_frac", params.budget_frac),
    ] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Schedule(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    if params.w == 0 {
        return Err(Error::Schedule("seed width must be >= 1".into()));
    }
    let schedules = depths
        .iter()
        .enumerate()
        .map(|(i, &depth)| {
            let count = params.count(i, depth);
            if count < params.w || depth < params.w {
                return Err(Error::Schedule(format!(
                    "patient {i}: {count} annotations cannot cover the {} seed slices",
                    params.w
                )));
            }
            Ok(AnnotationSchedule {
                depth,
                indices: spread_groups(depth, count, params.w),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let frac = annotation_fraction(&schedules);
    if (frac - params.budget_frac).abs() > 0.005 {
        log::warn!(
            "decremental schedule annotates {:.2}% of slices, budget is {:.2}%",
            frac * 100.0,
            params.budget_frac * 100.0
        );
    }
    Ok(schedules)
}

/// Annotated slices over all slices.
pub fn annotation_fraction(schedules: &[AnnotationSchedule]) -> f64 {
    let total: usize = schedules.iter().map(|s| s.depth).sum();
    if total == 0 {
        return 0.0;
    }
    schedules.iter().map(|s| s.len()).sum::<usize>() as f64 / total as f64
}

/// One sorted, space-separated index list per line.
pub fn format_schedules(schedules: &[AnnotationSchedule]) -> String {
    let mut out = String::new();
    for s in schedules {
        let line: Vec<String> = s.indices().map(|i| i.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Inverse of [`format_schedules`]. Lines must be strictly increasing.
pub fn parse_schedules(text: &str) -> Result<Vec<Vec<usize>>> {
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let idx = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<usize>()
                        .map_err(|_| Error::Schedule(format!("line {}: bad index {tok:?}", n + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            if idx.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::Schedule(format!("line {}: indices not strictly increasing", n + 1)));
            }
            Ok(idx)
        })
        .collect()
}

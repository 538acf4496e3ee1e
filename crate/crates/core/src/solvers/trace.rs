/// One evaluation record of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Completed outer iterations.
    pub k: usize,
    /// Data points accessed so far.
    pub accessed: u64,
    /// Stepping time so far; evaluations are excluded.
    pub wall_seconds: f64,
    pub f_true: f64,
    pub ul_value_eval: f64,
    pub ll_value_eval: f64,
    pub grad_norm_fd: Option<f64>,
    pub val_error: Option<f64>,
}

impl TraceRecord {
    /// Equality ignoring `wall_seconds`, with bitwise float comparison.
    pub fn same_values(&self, other: &TraceRecord) -> bool {
        let bits = |v: Option<f64>| v.map(f64::to_bits);
        self.k == other.k
            && self.accessed == other.accessed
            && self.f_true.to_bits() == other.f_true.to_bits()
            && self.ul_value_eval.to_bits() == other.ul_value_eval.to_bits()
            && self.ll_value_eval.to_bits() == other.ll_value_eval.to_bits()
            && bits(self.grad_norm_fd) == bits(other.grad_norm_fd)
            && bits(self.val_error) == bits(other.val_error)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    /// Inner step count per iteration, only tracked for increasing-accuracy runs.
    pub inner_steps: Vec<usize>,
}

impl RunTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn final_f_true(&self) -> Option<f64> {
        self.last().map(|r| r.f_true)
    }

    pub fn same_values(&self, other: &RunTrace) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| a.same_values(b))
    }
}

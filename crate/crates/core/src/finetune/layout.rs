use crate::corpus::{CLS_ID, SEP_ID};
use crate::encoder::{trigger_row, trigger_sentinel};
use crate::error::{Error, Result};

/// Named trigger placements; each maps onto per-block counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Placement {
    Front,
    Middle,
    End,
    All,
}

impl std::str::FromStr for Placement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "front" => Ok(Self::Front),
            "middle" => Ok(Self::Middle),
            "end" => Ok(Self::End),
            "all" => Ok(Self::All),
            other => Err(Error::Config(format!(
                "unknown placement {other:?}; expected front, middle, end or all"
            ))),
        }
    }
}

impl std::fmt::Display for Placement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Front => "front",
            Self::Middle => "middle",
            Self::End => "end",
            Self::All => "all",
        })
    }
}

/// Trigger block sizes. Middle blocks repeat once per retrieved segment,
/// each with its own embeddings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerConfig {
    pub count_front: usize,
    pub count_middle: usize,
    pub count_end: usize,
    /// Std of the Gaussian trigger initialization; `None` uses the std of
    /// the backbone's token-embedding table.
    pub init_scale: Option<f64>,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self::preset(Placement::Middle, 5)
    }
}

impl TriggerConfig {
    /// `All` puts `n` triggers in every block.
    pub fn preset(placement: Placement, n: usize) -> Self {
        let (f, m, e) = match placement {
            Placement::Front => (n, 0, 0),
            Placement::Middle => (0, n, 0),
            Placement::End => (0, 0, n),
            Placement::All => (n, n, n),
        };
        Self {
            count_front: f,
            count_middle: m,
            count_end: e,
            init_scale: None,
        }
    }

    pub fn none() -> Self {
        Self::preset(Placement::Middle, 0)
    }

    /// Rows in the trigger table for `gaps` retrieved segments.
    pub fn total(&self, gaps: usize) -> usize {
        self.count_front + self.count_middle * gaps + self.count_end
    }

    fn front_rows(&self) -> std::ops::Range<usize> {
        0..self.count_front
    }

    fn end_rows(&self) -> std::ops::Range<usize> {
        self.count_front..self.count_front + self.count_end
    }

    /// Table rows of the middle block before retrieved segment `gap`.
    fn middle_rows(&self, gap: usize) -> std::ops::Range<usize> {
        let start = self.count_front + self.count_end + gap * self.count_middle;
        start..start + self.count_middle
    }
}

/// Which input a position came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    /// `<cls>`, `<sep>` or a trigger.
    Frame,
    Source,
    /// Zero-based retrieved post.
    Retrieved(usize),
}

/// `[front] <cls> x [middle] x'1 [middle] x'2 ... [end] <sep>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReformulatedInput {
    /// Token ids, with trigger sentinels at trigger positions.
    pub ids: Vec<u32>,
    pub trigger_mask: Vec<bool>,
    pub segments: Vec<Segment>,
}

impl ReformulatedInput {
    pub fn trigger_positions(&self) -> Vec<usize> {
        (0..self.ids.len()).filter(|&i| self.trigger_mask[i]).collect()
    }

    /// Trigger table rows in position order.
    pub fn trigger_rows(&self) -> Vec<usize> {
        self.ids.iter().filter_map(|&id| trigger_row(id)).collect()
    }

    /// Tokens of one segment, in order.
    pub fn segment_tokens(&self, seg: Segment) -> Vec<u32> {
        self.ids
            .iter()
            .zip(&self.segments)
            .filter(|(_, s)| **s == seg)
            .map(|(&id, _)| id)
            .collect()
    }
}

/// Assembles the trigger-interleaved input. Retrieved text is truncated (and
/// whole trailing segments dropped, with their middle blocks) so the result
/// fits in `max_len`; the source is truncated only when it alone overflows.
pub fn reformulate_input(
    x_tokens: &[u32],
    retrieved: &[Vec<u32>],
    cfg: &TriggerConfig,
    max_len: usize,
) -> Result<ReformulatedInput> {
    let fixed = cfg.count_front + cfg.count_end + 2;
    if max_len < fixed + 1 {
        return Err(Error::Invalid(format!(
            "max_len {max_len} cannot hold {} front/end triggers, <cls>, one source token and <sep>",
            cfg.count_front + cfg.count_end
        )));
    }
    let mut out = ReformulatedInput {
        ids: Vec::with_capacity(max_len),
        trigger_mask: Vec::with_capacity(max_len),
        segments: Vec::with_capacity(max_len),
    };
    let push = |out: &mut ReformulatedInput, id: u32, trig: bool, seg: Segment| {
        out.ids.push(id);
        out.trigger_mask.push(trig);
        out.segments.push(seg);
    };
    for r in cfg.front_rows() {
        push(&mut out, trigger_sentinel(r), true, Segment::Frame);
    }
    push(&mut out, CLS_ID, false, Segment::Frame);
    let x_len = x_tokens.len().min(max_len - fixed);
    for &t in &x_tokens[..x_len] {
        push(&mut out, t, false, Segment::Source);
    }
    let mut room = max_len - fixed - x_len;
    for (gap, seg) in retrieved.iter().enumerate() {
        if seg.is_empty() || room < cfg.count_middle + 1 {
            break;
        }
        for r in cfg.middle_rows(gap) {
            push(&mut out, trigger_sentinel(r), true, Segment::Frame);
        }
        let take = seg.len().min(room - cfg.count_middle);
        for &t in &seg[..take] {
            push(&mut out, t, false, Segment::Retrieved(gap));
        }
        room -= cfg.count_middle + take;
    }
    for r in cfg.end_rows() {
        push(&mut out, trigger_sentinel(r), true, Segment::Frame);
    }
    push(&mut out, SEP_ID, false, Segment::Frame);
    Ok(out)
}

//! Segment-level evidence attention mask.

use serde::{Deserialize, Serialize};

use super::{AssembledPrompt, SegmentKind};

/// `allowed[a][b]`: segment `a` may attend segment `b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    allowed: Vec<Vec<bool>>,
}

impl AttentionMask {
    pub fn causal(n: usize) -> Self {
        AttentionMask { allowed: (0..n).map(|a| (0..n).map(|b| b <= a).collect()).collect() }
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }

    pub fn allows(&self, a: usize, b: usize) -> bool {
        self.allowed[a][b]
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.allowed
    }

    pub fn is_causal(&self) -> bool {
        *self == Self::causal(self.len())
    }

    /// Byte-position view: causal inside a segment, segment rule across.
    pub fn allows_position(&self, prompt: &AssembledPrompt, a: usize, b: usize) -> bool {
        if b > a {
            return false;
        }
        match (prompt.segment_at(a), prompt.segment_at(b)) {
            (Some(sa), Some(sb)) => self.allowed[sa][sb],
            _ => false,
        }
    }

    /// Run-length list of the causal entries this mask blocks.
    pub fn export(&self, prompt: &AssembledPrompt) -> MaskExport {
        let mut blocked = Vec::new();
        for (a, row) in self.allowed.iter().enumerate() {
            let mut b = 0;
            while b <= a {
                if row[b] {
                    b += 1;
                    continue;
                }
                let start = b;
                while b <= a && !row[b] {
                    b += 1;
                }
                blocked.push([a, start, b]);
            }
        }
        let segments = prompt
            .segments
            .iter()
            .map(|s| SegmentSpan { label: s.label(), start: s.start, end: s.end })
            .collect();
        MaskExport { base: "causal".to_owned(), segments, blocked }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

/// Mask as data: a causal base minus `blocked` runs `[row, from, to)` over
/// segment indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskExport {
    pub base: String,
    pub segments: Vec<SegmentSpan>,
    pub blocked: Vec<[usize; 3]>,
}

impl MaskExport {
    pub fn to_mask(&self) -> AttentionMask {
        let mut m = AttentionMask::causal(self.segments.len());
        for &[row, from, to] in &self.blocked {
            for b in from..to {
                m.allowed[row][b] = false;
            }
        }
        m
    }
}

/// Causal, except that evidence blocks and their scores never see another
/// evidence's block or score, and a score sees only the context, the plan
/// header, its own evidence and itself.
pub fn build_attention_mask(prompt: &AssembledPrompt) -> AttentionMask {
    let segs = &prompt.segments;
    let mut mask = AttentionMask::causal(segs.len());
    for (a, sa) in segs.iter().enumerate() {
        for (b, sb) in segs.iter().enumerate().take(a + 1) {
            let cross = matches!(
                (sa.kind, sb.kind),
                (SegmentKind::Evidence | SegmentKind::Sim, SegmentKind::Evidence | SegmentKind::Sim)
            ) && sa.index != sb.index;
            let sim_scope = sa.kind == SegmentKind::Sim
                && !(matches!(sb.kind, SegmentKind::Context | SegmentKind::SourceHeader) || sb.index == sa.index);
            if cross || sim_scope {
                mask.allowed[a][b] = false;
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::super::assemble_input;
    use super::*;
    use crate::plan::Plan;
    use crate::registry::{DialogueContext, Evidence, SourceId, Turn};
    use crate::retrieval::{ScoredEvidence, ScorerKind};
    use crate::templates::PromptTemplates;
    use crate::tokens::RelevanceScore;

    fn prompt(n: usize) -> AssembledPrompt {
        let s = SourceId::new("PERSONA").unwrap();
        let ev: Vec<_> = (0..n)
            .map(|i| ScoredEvidence {
                evidence: Evidence::new(format!("e{i}"), s.clone(), format!("text {i}")),
                score: RelevanceScore::from_tenths(i as u8).unwrap(),
                scorer: ScorerKind::Bm25,
            })
            .collect();
        let plan = if n == 0 { Plan::null() } else { Plan::new(vec![s]).unwrap() };
        let ctx = DialogueContext::new(vec![Turn::user("hi")]).unwrap();
        assemble_input(&ctx, &plan, &ev, &PromptTemplates::default()).unwrap()
    }

    #[test]
    fn small_prompts_are_causal() {
        assert!(build_attention_mask(&prompt(0)).is_causal());
        assert!(build_attention_mask(&prompt(1)).is_causal());
    }

    #[test]
    fn two_evidences_block_cross_attention() {
        let p = prompt(2);
        let m = build_attention_mask(&p);
        // context, header, e0, s0, e1, s1, response
        assert!(!m.allows(4, 2));
        assert!(!m.allows(4, 3));
        assert!(!m.allows(5, 2));
        assert!(!m.allows(5, 3));
        assert!(m.allows(5, 4) && m.allows(5, 0) && m.allows(5, 1) && m.allows(5, 5));
        assert!((0..7).all(|b| m.allows(6, b)));
        assert!(!m.allows(2, 4));
    }

    #[test]
    fn export_round_trips() {
        for n in 0..5 {
            let p = prompt(n);
            let m = build_attention_mask(&p);
            let e = m.export(&p);
            assert_eq!(e.to_mask(), m);
            assert_eq!(e.blocked.is_empty(), n <= 1);
        }
        let p = prompt(2);
        let e = build_attention_mask(&p).export(&p);
        assert_eq!(e.blocked, vec![[4, 2, 4], [5, 2, 4]]);
        assert_eq!(e.segments[2].label, "evidence_0");
    }

    #[test]
    fn position_view() {
        let p = prompt(2);
        let m = build_attention_mask(&p);
        let e0 = p.segments[2];
        let e1 = p.segments[4];
        assert!(!m.allows_position(&p, e1.start, e0.start));
        assert!(m.allows_position(&p, e1.end - 1, e1.start));
        assert!(!m.allows_position(&p, e1.start, e1.end - 1));
    }
}

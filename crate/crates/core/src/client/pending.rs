//! Local edits kept as replacements of base-text ranges.

use crate::semantics::{ElementId, ElementKind, ElementTable};
use crate::toylang::Span;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hunk {
    /// Replaced range of the base text.
    pub base: Span,
    pub text: String,
}

/// Sorted, non-touching hunks. Empty iff the buffer equals the base.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Pending {
    hunks: Vec<Hunk>,
}

impl Pending {
    pub fn is_empty(&self) -> bool {
        self.hunks.is_empty()
    }

    pub fn hunks(&self) -> &[Hunk] {
        &self.hunks
    }

    pub fn clear(&mut self) {
        self.hunks.clear();
    }

    pub fn render(&self, base: &str) -> String {
        let mut out = String::with_capacity(base.len());
        let mut at = 0;
        for h in &self.hunks {
            out.push_str(&base[at..h.base.start]);
            out.push_str(&h.text);
            at = h.base.end;
        }
        out.push_str(&base[at..]);
        out
    }

    /// Current-text range of each hunk.
    fn current_ranges(&self) -> Vec<Span> {
        let mut delta: isize = 0;
        self.hunks
            .iter()
            .map(|h| {
                let start = (h.base.start as isize + delta) as usize;
                delta += h.text.len() as isize - h.base.len() as isize;
                Span::new(start, start + h.text.len())
            })
            .collect()
    }

    /// Replaces `[start, end)` of the current text with `text`.
    pub fn apply(&mut self, base: &str, start: usize, end: usize, text: &str) {
        let current = self.render(base);
        let ranges = self.current_ranges();
        let touched: Vec<usize> =
            (0..self.hunks.len()).filter(|&i| ranges[i].start <= end && start <= ranges[i].end).collect();
        let mut r = Span::new(start, end);
        for &i in &touched {
            r = r.cover(ranges[i]);
        }
        // Offsets outside every touched hunk sit in unchanged base text.
        let to_base = |cur: usize| -> usize {
            let mut delta: isize = 0;
            for (h, c) in self.hunks.iter().zip(&ranges) {
                if c.end <= cur && !(c.start == cur && c.is_empty()) {
                    delta += h.text.len() as isize - h.base.len() as isize;
                }
            }
            (cur as isize - delta) as usize
        };
        let base_start = touched
            .iter()
            .find(|&&i| ranges[i].start == r.start)
            .map(|&i| self.hunks[i].base.start)
            .unwrap_or_else(|| to_base(r.start));
        let base_end = touched
            .iter()
            .rev()
            .find(|&&i| ranges[i].end == r.end)
            .map(|&i| self.hunks[i].base.end)
            .unwrap_or_else(|| to_base(r.end));
        let mut new_text = String::new();
        new_text.push_str(&current[r.start..start]);
        new_text.push_str(text);
        new_text.push_str(&current[end..r.end]);

        let insert_at = touched
            .first()
            .copied()
            .unwrap_or_else(|| self.hunks.iter().take_while(|h| h.base.end <= base_start).count());
        for &i in touched.iter().rev() {
            self.hunks.remove(i);
        }
        if let Some(h) = trim(base, Hunk { base: Span::new(base_start, base_end), text: new_text }) {
            self.hunks.insert(insert_at, h);
        }
    }

    /// Current offset of a base offset used as the start of a region: text
    /// inserted exactly there counts as inside the region.
    pub fn map_start(&self, b: usize) -> usize {
        let mut delta: isize = 0;
        let mut ranges = self.current_ranges().into_iter();
        for h in &self.hunks {
            let c = ranges.next().expect("one range per hunk");
            if h.base.start >= b {
                break;
            }
            if h.base.end > b {
                return c.start;
            }
            delta += h.text.len() as isize - h.base.len() as isize;
        }
        (b as isize + delta) as usize
    }

    /// Current offset of a base offset used as the end of a region: text
    /// inserted exactly there counts as outside the region.
    pub fn map_end(&self, b: usize) -> usize {
        let mut delta: isize = 0;
        let mut ranges = self.current_ranges().into_iter();
        for h in &self.hunks {
            let c = ranges.next().expect("one range per hunk");
            if h.base.start >= b {
                break;
            }
            if h.base.end > b {
                return c.end;
            }
            delta += h.text.len() as isize - h.base.len() as isize;
        }
        (b as isize + delta) as usize
    }

    pub fn map_span(&self, s: Span) -> Span {
        Span::new(self.map_start(s.start), self.map_end(s.end).max(self.map_start(s.start)))
    }

    /// Moves every hunk onto a newer base by anchoring it to a nearby element
    /// and checking that the replaced base text is still there. `None` when
    /// some hunk cannot be placed.
    pub fn rebase(
        &self,
        file: &str,
        old_base: &str,
        old_table: &ElementTable,
        new_base: &str,
        new_table: &ElementTable,
    ) -> Option<Pending> {
        let old_entries = old_table.file_entries(file);
        let mut out: Vec<Hunk> = Vec::new();
        for h in &self.hunks {
            let (bs, be) = (h.base.start, h.base.end);
            let member_contains = |s: Span| s.start <= bs && be <= s.end && !(bs == be && bs == s.end);
            let members = || old_entries.iter().filter(|e| e.kind != ElementKind::Class);
            let anchor: Anchor = if let Some(m) = members().find(|m| member_contains(m.span)) {
                Anchor::Start(m.id, bs as isize - m.span.start as isize)
            } else if let Some(m) = members().find(|m| m.span.overlaps(h.base)) {
                Anchor::Start(m.id, bs as isize - m.span.start as isize)
            } else {
                let class =
                    old_entries.iter().find(|c| c.kind == ElementKind::Class && c.span.start < bs && be < c.span.end);
                let parent = class.map(|c| c.id);
                let siblings: Vec<_> = old_entries.iter().filter(|e| e.parent == parent).collect();
                if let Some(prev) = siblings.iter().filter(|s| s.span.end <= bs).max_by_key(|s| s.span.end) {
                    Anchor::End(prev.id, bs as isize - prev.span.end as isize)
                } else if let Some(next) = siblings.iter().filter(|s| s.span.start >= be).min_by_key(|s| s.span.start) {
                    Anchor::Start(next.id, bs as isize - next.span.start as isize)
                } else if let Some(c) = class {
                    let body = c.body.expect("classes have bodies");
                    Anchor::BodyStart(c.id, bs as isize - body.start as isize)
                } else {
                    Anchor::File(bs as isize)
                }
            };
            let new_bs = anchor.resolve(new_table)?;
            let new_be = new_bs + h.base.len();
            if new_base.get(new_bs..new_be)? != &old_base[bs..be] {
                return None;
            }
            if out.last().is_some_and(|p| p.base.end >= new_bs) {
                return None;
            }
            out.push(Hunk { base: Span::new(new_bs, new_be), text: h.text.clone() });
        }
        Some(Pending { hunks: out })
    }
}

enum Anchor {
    Start(ElementId, isize),
    End(ElementId, isize),
    BodyStart(ElementId, isize),
    File(isize),
}

impl Anchor {
    fn resolve(&self, table: &ElementTable) -> Option<usize> {
        let pos = match *self {
            Anchor::Start(id, rel) => table.get(id)?.span.start as isize + rel,
            Anchor::End(id, rel) => table.get(id)?.span.end as isize + rel,
            Anchor::BodyStart(id, rel) => table.get(id)?.body?.start as isize + rel,
            Anchor::File(abs) => abs,
        };
        usize::try_from(pos).ok()
    }
}

/// Drops the common prefix and suffix shared with the base; `None` if
/// nothing is left.
fn trim(base: &str, h: Hunk) -> Option<Hunk> {
    let old = &base[h.base.start..h.base.end];
    let new = h.text.as_str();
    let prefix: usize = old.chars().zip(new.chars()).take_while(|(a, b)| a == b).map(|(a, _)| a.len_utf8()).sum();
    let suffix: usize = old[prefix..]
        .chars()
        .rev()
        .zip(new[prefix..].chars().rev())
        .take_while(|(a, b)| a == b)
        .map(|(a, _)| a.len_utf8())
        .sum();
    let base_span = Span::new(h.base.start + prefix, h.base.end - suffix);
    let text = new[prefix..new.len() - suffix].to_string();
    if base_span.is_empty() && text.is_empty() {
        None
    } else {
        Some(Hunk { base: base_span, text })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn splice(s: &str, start: usize, end: usize, t: &str) -> String {
        format!("{}{}{}", &s[..start], t, &s[end..])
    }

    #[test]
    fn edits_merge_and_trim() {
        let base = "class A { int Foo(int x) { return x; } }";
        let mut p = Pending::default();
        p.apply(base, 23, 23, ", in newParam");
        p.apply(base, 17, 17, "1");
        assert_eq!(p.hunks().len(), 2);
        let cur = p.render(base);
        assert_eq!(cur, "class A { int Foo1(int x, in newParam) { return x; } }");
        p.apply(base, 28, 28, "t");
        assert_eq!(p.render(base), "class A { int Foo1(int x, int newParam) { return x; } }");
        // undo the "1"
        p.apply(base, 17, 18, "");
        assert_eq!(p.hunks().len(), 1);
        // undo the rest
        let cur = p.render(base);
        p.apply(base, 23, 37, "");
        assert_eq!(p.render(base), base, "{cur}");
        assert!(p.is_empty());
    }

    #[test]
    fn live_span_mapping() {
        let base = "0123456789";
        let mut p = Pending::default();
        p.apply(base, 3, 3, "xx"); // insertion at base 3
        assert_eq!(p.map_start(3), 3, "inserted text belongs to a region starting here");
        assert_eq!(p.map_end(3), 3, "and not to a region ending here");
        assert_eq!(p.map_start(5), 7);
        p.apply(base, 8, 9, ""); // delete base 6
        assert_eq!(p.render(base), "012xx345789");
        assert_eq!(p.map_end(7), 7 + 2 - 1);
    }

    proptest! {
        #[test]
        fn pending_tracks_direct_application(
            base in "[a-z ]{0,30}",
            edits in proptest::collection::vec((any::<prop::sample::Index>(), 0usize..4, "[a-z ]{0,3}"), 0..12),
        ) {
            let mut p = Pending::default();
            let mut direct = base.clone();
            for (pos, len, text) in edits {
                let start = pos.index(direct.len() + 1);
                let end = (start + len).min(direct.len());
                direct = splice(&direct, start, end, &text);
                p.apply(&base, start, end, &text);
                prop_assert_eq!(p.render(&base), direct.clone());
                let hs = p.hunks();
                for w in hs.windows(2) {
                    prop_assert!(w[0].base.end < w[1].base.start);
                }
                for h in hs {
                    prop_assert!(base[h.base.start..h.base.end] != h.text);
                }
            }
            prop_assert_eq!(p.is_empty(), direct == base);
        }
    }
}

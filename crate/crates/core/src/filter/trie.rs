//! Binary (one bit per level) trie over 128-bit keys for longest-prefix match.

use crate::addr::{Address128, Prefix};

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    children: [u32; 2],
    value: u32,
}

impl Node {
    const EMPTY: Node = Node {
        children: [NONE, NONE],
        value: NONE,
    };
}

/// Arena-backed per-bit trie. Lookup walks at most `longest stored prefix`
/// levels.
#[derive(Debug, Clone)]
pub struct PrefixTrie<V> {
    nodes: Vec<Node>,
    values: Vec<(Prefix, V)>,
}

impl<V> Default for PrefixTrie<V> {
    fn default() -> Self {
        PrefixTrie {
            nodes: vec![Node::EMPTY],
            values: Vec::new(),
        }
    }
}

impl<V> PrefixTrie<V> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Returns the slot for `prefix`, creating it with `init` if absent.
    pub fn entry_or_insert_with(&mut self, prefix: Prefix, init: impl FnOnce() -> V) -> &mut V {
        let key = prefix.base();
        let mut cur = 0usize;
        for depth in 0..prefix.len() as u32 {
            let b = key.bit(depth) as usize;
            let next = self.nodes[cur].children[b];
            cur = if next == NONE {
                let idx = self.nodes.len() as u32;
                self.nodes.push(Node::EMPTY);
                self.nodes[cur].children[b] = idx;
                idx as usize
            } else {
                next as usize
            };
        }
        if self.nodes[cur].value == NONE {
            self.nodes[cur].value = self.values.len() as u32;
            self.values.push((prefix, init()));
        }
        let slot = self.nodes[cur].value as usize;
        &mut self.values[slot].1
    }

    /// Longest stored prefix containing `a`.
    pub fn longest_match(&self, a: Address128) -> Option<(Prefix, &V)> {
        let mut cur = 0usize;
        let mut best = self.nodes[0].value;
        for depth in 0..128 {
            let next = self.nodes[cur].children[a.bit(depth) as usize];
            if next == NONE {
                break;
            }
            cur = next as usize;
            if self.nodes[cur].value != NONE {
                best = self.nodes[cur].value;
            }
        }
        (best != NONE).then(|| {
            let (p, v) = &self.values[best as usize];
            (*p, v)
        })
    }

    /// Whether any stored prefix contains `a`; stops at the first hit.
    pub fn covers(&self, a: Address128) -> bool {
        let mut cur = 0usize;
        if self.nodes[0].value != NONE {
            return true;
        }
        for depth in 0..128 {
            let next = self.nodes[cur].children[a.bit(depth) as usize];
            if next == NONE {
                return false;
            }
            cur = next as usize;
            if self.nodes[cur].value != NONE {
                return true;
            }
        }
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Prefix, &V)> {
        self.values.iter().map(|(p, v)| (p, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::parse_address;

    fn p(s: &str) -> Prefix {
        s.parse().unwrap()
    }

    #[test]
    fn longest_wins() {
        let mut t = PrefixTrie::new();
        *t.entry_or_insert_with(p("2001:db8::/32"), || 0) = 1;
        *t.entry_or_insert_with(p("2001:db8:1::/48"), || 0) = 2;
        let a = parse_address("2001:db8:1::5").unwrap();
        assert_eq!(t.longest_match(a).map(|(p, v)| (p.len(), *v)), Some((48, 2)));
        let b = parse_address("2001:db8:2::5").unwrap();
        assert_eq!(t.longest_match(b).map(|(_, v)| *v), Some(1));
        assert!(t.longest_match(parse_address("::1").unwrap()).is_none());
        assert!(!t.covers(parse_address("::1").unwrap()));
        assert!(t.covers(b));
    }

    #[test]
    fn host_routes_and_default() {
        let mut t = PrefixTrie::new();
        t.entry_or_insert_with(p("::/0"), || "default");
        t.entry_or_insert_with(p("::1/128"), || "host");
        assert_eq!(t.longest_match(parse_address("::1").unwrap()).unwrap().1, &"host");
        assert_eq!(t.longest_match(parse_address("::2").unwrap()).unwrap().1, &"default");
        assert_eq!(t.len(), 2);
    }
}

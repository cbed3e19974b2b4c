use super::Id;

/// Disjoint sets over dense ids with path compression and union by rank.
#[derive(Debug, Clone, Default)]
pub struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn make_set(&mut self) -> Id {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.rank.push(0);
        Id(id)
    }

    /// Root lookup without compression, usable behind a shared reference.
    pub fn find(&self, id: Id) -> Id {
        let mut cur = id.0;
        while self.parent[cur as usize] != cur {
            cur = self.parent[cur as usize];
        }
        Id(cur)
    }

    pub fn find_mut(&mut self, id: Id) -> Id {
        let root = self.find(id);
        let mut cur = id.0;
        while cur != root.0 {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root.0;
            cur = next;
        }
        root
    }

    /// Joins the sets of `a` and `b` and returns the surviving root.
    pub fn union(&mut self, a: Id, b: Id) -> Id {
        let (a, b) = (self.find_mut(a), self.find_mut(b));
        if a == b {
            return a;
        }
        let (ra, rb) = (self.rank[a.index()], self.rank[b.index()]);
        let (root, child) = if ra < rb { (b, a) } else { (a, b) };
        self.parent[child.index()] = root.0;
        if ra == rb {
            self.rank[root.index()] += 1;
        }
        root
    }
}

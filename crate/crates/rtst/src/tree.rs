//! Range-based ternary search tree with pointer-free per-level storage.
//!
//! Nodes hold up to two range keys. Children are never referenced by
//! stored pointers: the left/middle/right child of the node at level-local
//! slot `a` live at slots `3a`, `3a+1`, `3a+2` of the next level, so each
//! level is one contiguous array and child addresses are computed.
//!
//! A `Rtst` may carry several roots side by side ("forest"): root `r`
//! occupies level-0 slot `r` and the child formula keeps distinct roots'
//! subtrees in disjoint slot intervals. A plain tree is a forest with one
//! root. Forests back the per-prefix destination trees of one lookup
//! group, which share level memories exactly like pipeline stages do.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Range, Wide};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("input list is empty")]
    EmptyInput,
    #[error("input not strictly increasing and disjoint at position {0}")]
    Unsorted(usize),
    #[error("key width {got} does not match tree width {want}")]
    KeyWidth { got: u32, want: u32 },
    #[error("key overlaps a valid stored range")]
    Overlap,
    #[error("key overlaps an invalidated separator and cannot be placed")]
    Unplaceable,
    #[error("key not present")]
    KeyAbsent,
    #[error("key present but invalid")]
    KeyInvalid,
    #[error("no such root {0}")]
    NoSuchRoot(u64),
}

/// Opaque per-key payload. `primary` carries the referenced id (a flow id
/// or a destination-tree root); `aux` is free for the caller (the lookup
/// engine packs priority and action token into it).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub primary: u64,
    pub aux: u64,
}

impl Payload {
    pub fn new(primary: u64, aux: u64) -> Self {
        Payload { primary, aux }
    }
}

/// One data field of a node: a range key, its payload, and the valid bit
/// that implements deletion without restructuring.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeKey {
    pub range: Range,
    pub payload: Payload,
    pub valid: bool,
}

/// A node slot. The left key is always present once the node exists; the
/// right key is optional. An invalidated key keeps routing traffic (it is
/// still a correct separator) but never reports a match.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSlot {
    pub left: TreeKey,
    pub right: Option<TreeKey>,
}

impl NodeSlot {
    fn one(key: TreeKey) -> Self {
        NodeSlot { left: key, right: None }
    }

    fn keys(&self) -> impl Iterator<Item = &TreeKey> {
        std::iter::once(&self.left).chain(self.right.iter())
    }
}

/// Branch taken at one node during a descent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Left,
    Middle,
    Right,
    MatchLeft,
    MatchRight,
}

impl Branch {
    /// Child slot offset for the three descent branches.
    pub fn offset(self) -> Option<u64> {
        match self {
            Branch::Left => Some(0),
            Branch::Middle => Some(1),
            Branch::Right => Some(2),
            Branch::MatchLeft | Branch::MatchRight => None,
        }
    }
}

/// One visited node of a descent. `slot` is the level-local index, so
/// consecutive steps satisfy `next.slot = 3 * slot + branch_offset`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub level: u32,
    pub slot: u64,
    pub branch: Branch,
}

/// Child address in the single-tree convention where the root has
/// address 1 and node `a`'s children are `3a`, `3a+1`, `3a+2`.
pub fn child_address(addr: u64, branch: Branch) -> u64 {
    match branch {
        Branch::Left => 3 * addr,
        Branch::Middle => 3 * addr + 1,
        Branch::Right => 3 * addr + 2,
        Branch::MatchLeft | Branch::MatchRight => addr,
    }
}

/// Key locations for the root of an `n`-element build: `(floor(n/3),
/// floor(2n/3))`. For `n == 1` both locations collapse to 0 and the node
/// holds a single key.
pub fn split_locations(n: usize) -> Result<(usize, usize), TreeError> {
    if n == 0 {
        return Err(TreeError::EmptyInput);
    }
    Ok((n / 3, 2 * n / 3))
}

/// Smallest `h` with `3^h - 1 >= n`, i.e. `ceil(log3(n + 1))`.
pub fn expected_height(n: usize) -> u32 {
    let mut h = 0u32;
    let mut cap = 1u128;
    while cap - 1 < n as u128 {
        h += 1;
        cap *= 3;
    }
    h
}

/// Outcome of evaluating one node against a point key; this is the
/// next-address decision a pipeline stage makes.
#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    /// No node stored at the requested slot; the descent is over.
    Absent,
    /// Key falls inside a valid stored range.
    Match { branch: Branch, payload: Payload },
    /// Continue to the child at `3 * slot + offset`.
    Descend { branch: Branch },
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct MemoryFootprint {
    pub data_bytes: u64,
    pub overhead_bytes: u64,
    pub data_bits: u64,
    pub overhead_bits: u64,
}

/// The tree itself. `levels[d][slot]` is the node at level `d`, local
/// slot `slot`; nothing in the stored form references children.
#[derive(Clone, Debug)]
pub struct Rtst {
    key_width: u32,
    roots: u64,
    levels: Vec<Vec<Option<NodeSlot>>>,
    valid_keys: u64,
    stored_keys: u64,
}

impl Rtst {
    pub fn new(key_width: u32) -> Self {
        Rtst { key_width, roots: 1, levels: Vec::new(), valid_keys: 0, stored_keys: 0 }
    }

    /// Builds a complete tree over a strictly increasing, pairwise
    /// disjoint list: the root takes the elements at the split locations
    /// and the three sub-lists build the subtrees.
    pub fn build_complete(key_width: u32, items: &[(Range, Payload)]) -> Result<Self, TreeError> {
        Self::build_forest(key_width, &[items.to_vec()])
    }

    /// Builds one complete subtree per input list, rooted at level-0
    /// slots `0..lists.len()`.
    pub fn build_forest(key_width: u32, lists: &[Vec<(Range, Payload)>]) -> Result<Self, TreeError> {
        let mut tree = Rtst {
            key_width,
            roots: lists.len().max(1) as u64,
            levels: Vec::new(),
            valid_keys: 0,
            stored_keys: 0,
        };
        for (r, items) in lists.iter().enumerate() {
            check_sorted_disjoint(key_width, items)?;
            tree.fill(0, r as u64, items);
        }
        Ok(tree)
    }

    fn fill(&mut self, level: u32, slot: u64, items: &[(Range, Payload)]) {
        let n = items.len();
        if n == 0 {
            return;
        }
        let (ll, lr) = split_locations(n).expect("n >= 1");
        let mk = |i: usize| TreeKey {
            range: items[i].0.clone(),
            payload: items[i].1,
            valid: true,
        };
        let node = if n == 1 {
            NodeSlot::one(mk(0))
        } else {
            NodeSlot { left: mk(ll), right: Some(mk(lr)) }
        };
        self.put(level, slot, node);
        self.stored_keys += if n == 1 { 1 } else { 2 };
        self.valid_keys += if n == 1 { 1 } else { 2 };
        if n > 1 {
            self.fill(level + 1, 3 * slot, &items[..ll]);
            self.fill(level + 1, 3 * slot + 1, &items[ll + 1..lr]);
            self.fill(level + 1, 3 * slot + 2, &items[lr + 1..]);
        }
    }

    fn put(&mut self, level: u32, slot: u64, node: NodeSlot) {
        let level = level as usize;
        while self.levels.len() <= level {
            self.levels.push(Vec::new());
        }
        let row = &mut self.levels[level];
        if row.len() <= slot as usize {
            row.resize(slot as usize + 1, None);
        }
        row[slot as usize] = Some(node);
    }

    pub fn node(&self, level: u32, slot: u64) -> Option<&NodeSlot> {
        self.levels.get(level as usize)?.get(slot as usize)?.as_ref()
    }

    fn node_mut(&mut self, level: u32, slot: u64) -> Option<&mut NodeSlot> {
        self.levels.get_mut(level as usize)?.get_mut(slot as usize)?.as_mut()
    }

    pub fn key_width(&self) -> u32 {
        self.key_width
    }

    pub fn roots(&self) -> u64 {
        self.roots
    }

    /// Number of levels currently populated.
    pub fn height(&self) -> u32 {
        self.levels.len() as u32
    }

    /// Count of valid (live) keys.
    pub fn len(&self) -> u64 {
        self.valid_keys
    }

    pub fn is_empty(&self) -> bool {
        self.valid_keys == 0
    }

    pub fn stored_keys(&self) -> u64 {
        self.stored_keys
    }

    pub fn levels(&self) -> &[Vec<Option<NodeSlot>>] {
        &self.levels
    }

    /// Appends a fresh root holding one key and returns its root slot.
    pub fn add_root(&mut self, range: Range, payload: Payload) -> Result<u64, TreeError> {
        if range.width != self.key_width {
            return Err(TreeError::KeyWidth { got: range.width, want: self.key_width });
        }
        let slot = self.roots;
        self.roots += 1;
        self.put(0, slot, NodeSlot::one(TreeKey { range, payload, valid: true }));
        self.stored_keys += 1;
        self.valid_keys += 1;
        Ok(slot)
    }

    /// Per-node comparator: decides match / left / middle / right for a
    /// point key at `(level, slot)`.
    pub fn step(&self, level: u32, slot: u64, key: &Wide) -> StepOutcome {
        let Some(node) = self.node(level, slot) else {
            return StepOutcome::Absent;
        };
        let left = &node.left;
        if *key < left.range.lo {
            return StepOutcome::Descend { branch: Branch::Left };
        }
        if *key <= left.range.hi {
            return if left.valid {
                StepOutcome::Match { branch: Branch::MatchLeft, payload: left.payload }
            } else {
                // dead separator: nothing below can contain this key, but
                // the descent stays well-defined
                StepOutcome::Descend { branch: Branch::Middle }
            };
        }
        match &node.right {
            Some(right) => {
                if *key < right.range.lo {
                    StepOutcome::Descend { branch: Branch::Middle }
                } else if *key <= right.range.hi {
                    if right.valid {
                        StepOutcome::Match { branch: Branch::MatchRight, payload: right.payload }
                    } else {
                        StepOutcome::Descend { branch: Branch::Middle }
                    }
                } else {
                    StepOutcome::Descend { branch: Branch::Right }
                }
            }
            None => StepOutcome::Descend { branch: Branch::Right },
        }
    }

    pub fn search(&self, key: &Wide) -> (Option<Payload>, Vec<TraceStep>) {
        self.search_from(0, key)
    }

    /// Descends from root slot `root` recording every visited node.
    pub fn search_from(&self, root: u64, key: &Wide) -> (Option<Payload>, Vec<TraceStep>) {
        let mut trace = Vec::new();
        let mut level = 0u32;
        let mut slot = root;
        loop {
            match self.step(level, slot, key) {
                StepOutcome::Absent => return (None, trace),
                StepOutcome::Match { branch, payload } => {
                    trace.push(TraceStep { level, slot, branch });
                    return (Some(payload), trace);
                }
                StepOutcome::Descend { branch } => {
                    trace.push(TraceStep { level, slot, branch });
                    slot = 3 * slot + branch.offset().expect("descend branch");
                    level += 1;
                }
            }
        }
    }

    pub fn insert(&mut self, range: Range, payload: Payload) -> Result<Vec<(u32, u64)>, TreeError> {
        self.insert_at(0, range, payload)
    }

    /// Inserts a key into the subtree rooted at `root`. Returns the
    /// `(level, slot)` pairs that changed; at most two per level.
    ///
    /// An invalid stored range that fully contains the new key is
    /// overwritten in place (slot reuse). A full childless node whose
    /// parent has room splits: the middle of its two keys plus the new
    /// key rises into the parent and the two leftovers stay below as
    /// single-key children. Otherwise the key becomes a fresh child node
    /// under the node where the descent ended; the tree never relocates
    /// existing subtrees, which keeps every level's addresses stable.
    pub fn insert_at(
        &mut self,
        root: u64,
        range: Range,
        payload: Payload,
    ) -> Result<Vec<(u32, u64)>, TreeError> {
        if range.width != self.key_width {
            return Err(TreeError::KeyWidth { got: range.width, want: self.key_width });
        }
        if root >= self.roots {
            return Err(TreeError::NoSuchRoot(root));
        }
        let new_key = TreeKey { range, payload, valid: true };
        if self.node(0, root).is_none() {
            self.put(0, root, NodeSlot::one(new_key));
            self.stored_keys += 1;
            self.valid_keys += 1;
            return Ok(vec![(0, root)]);
        }

        let mut level = 0u32;
        let mut slot = root;
        loop {
            let node = self.node(level, slot).expect("descent visits stored nodes");
            // containment / overlap against both stored keys first
            let mut side_hit = None;
            for (side, key) in node.keys().enumerate() {
                if !new_key.range.overlaps(&key.range) {
                    continue;
                }
                if key.valid {
                    return Err(TreeError::Overlap);
                }
                let contained =
                    key.range.lo <= new_key.range.lo && new_key.range.hi <= key.range.hi;
                if !contained {
                    return Err(TreeError::Unplaceable);
                }
                side_hit = Some(side);
                break;
            }
            if let Some(side) = side_hit {
                let node = self.node_mut(level, slot).unwrap();
                let target = if side == 0 { &mut node.left } else { node.right.as_mut().unwrap() };
                *target = new_key;
                self.valid_keys += 1;
                return Ok(vec![(level, slot)]);
            }

            let branch = match self.route(node, &new_key.range) {
                Some(b) => b,
                None => return Err(TreeError::Unplaceable),
            };
            let child = 3 * slot + branch.offset().expect("routing branch");
            if self.node(level + 1, child).is_some() {
                level += 1;
                slot = child;
                continue;
            }

            // descent landed: the branch child slot is free
            let node = self.node(level, slot).unwrap();
            if node.right.is_none() {
                // node has a free data field
                let node = self.node_mut(level, slot).unwrap();
                if new_key.range.hi < node.left.range.lo {
                    node.right = Some(std::mem::replace(&mut node.left, new_key));
                } else {
                    node.right = Some(new_key);
                }
                self.stored_keys += 1;
                self.valid_keys += 1;
                return Ok(vec![(level, slot)]);
            }
            if level > 0 && self.childless(level, slot) {
                if let Some(touched) = self.try_split_leaf(level, slot, &new_key) {
                    self.stored_keys += 1;
                    self.valid_keys += 1;
                    return Ok(touched);
                }
            }
            // no room anywhere on the path: hang a fresh single-key node
            self.put(level + 1, child, NodeSlot::one(new_key));
            self.stored_keys += 1;
            self.valid_keys += 1;
            return Ok(vec![(level + 1, child)]);
        }
    }

    /// Which branch a whole range takes at `node`. `None` when the range
    /// straddles a stored key (cannot happen for keys derived from
    /// prefixes, which nest or are disjoint).
    fn route(&self, node: &NodeSlot, range: &Range) -> Option<Branch> {
        if range.hi < node.left.range.lo {
            return Some(Branch::Left);
        }
        match &node.right {
            Some(right) => {
                if node.left.range.hi < range.lo && range.hi < right.range.lo {
                    Some(Branch::Middle)
                } else if right.range.hi < range.lo {
                    Some(Branch::Right)
                } else {
                    None
                }
            }
            None => {
                if node.left.range.hi < range.lo {
                    Some(Branch::Right)
                } else {
                    None
                }
            }
        }
    }

    fn childless(&self, level: u32, slot: u64) -> bool {
        (0..3).all(|b| self.node(level + 1, 3 * slot + b).is_none())
    }

    /// Split of a full childless node whose parent can absorb the rising
    /// middle key. The two leftover keys stay below as single-key nodes
    /// at child slots of the same parent, so no subtree ever moves.
    fn try_split_leaf(&mut self, level: u32, slot: u64, new_key: &TreeKey) -> Option<Vec<(u32, u64)>> {
        let parent_level = level - 1;
        let parent_slot = slot / 3;
        let child_pos = slot % 3;
        let parent = self.node(parent_level, parent_slot)?;

        // Room in the parent: either no right key yet, or a dead right
        // key whose middle/right subtrees would stay consistent after the
        // rise. A dead right key may only be dropped when nothing routes
        // through it.
        let parent_right_dead = matches!(&parent.right, Some(k) if !k.valid);
        let has_room = parent.right.is_none() || parent_right_dead;
        if !has_room {
            return None;
        }
        let mid_child = self.node(parent_level + 1, 3 * parent_slot + 1).is_some();
        let right_child = self.node(parent_level + 1, 3 * parent_slot + 2).is_some();
        let ok = match child_pos {
            0 => !mid_child,               // leftovers take slots 3p and 3p+1
            1 => parent_right_dead && !right_child, // leftovers take 3p+1 and 3p+2
            2 => !mid_child,               // leftovers take 3p+1 and 3p+2
            _ => unreachable!(),
        };
        if !ok {
            return None;
        }

        let node = self.node(level, slot).unwrap().clone();
        let mut three = [node.left.clone(), node.right.clone().unwrap(), new_key.clone()];
        three.sort_by(|a, b| a.range.lo.cmp(&b.range.lo));
        let [low, mid, high] = three;

        // leftovers occupy two adjacent child slots of the parent
        let (lo_local, hi_local) = match child_pos {
            0 => (3 * parent_slot, 3 * parent_slot + 1),
            _ => (3 * parent_slot + 1, 3 * parent_slot + 2),
        };
        self.put(level, lo_local, NodeSlot::one(low));
        self.put(level, hi_local, NodeSlot::one(high));

        if parent_right_dead {
            self.stored_keys -= 1; // dead separator dropped
        }
        let parent = self.node_mut(parent_level, parent_slot).unwrap();
        if child_pos == 0 {
            // rising key becomes the left data field; old key shifts right
            let old_left = std::mem::replace(&mut parent.left, mid);
            parent.right = Some(old_left);
        } else {
            parent.right = Some(mid);
        }
        let mut touched = vec![(level, lo_local), (level, hi_local), (parent_level, parent_slot)];
        touched.sort();
        touched.dedup();
        Some(touched)
    }

    /// Finds the node and side storing exactly `range`.
    fn locate(&self, root: u64, range: &Range) -> Option<(u32, u64, usize, bool)> {
        let mut level = 0u32;
        let mut slot = root;
        loop {
            let node = self.node(level, slot)?;
            for (side, key) in node.keys().enumerate() {
                if key.range == *range {
                    return Some((level, slot, side, key.valid));
                }
            }
            // descend by the point lo; equal-lo distinct ranges cannot
            // coexist among disjoint keys
            let branch = match self.step(level, slot, &range.lo) {
                StepOutcome::Descend { branch } => branch,
                _ => return None,
            };
            slot = 3 * slot + branch.offset()?;
            level += 1;
        }
    }

    pub fn delete(&mut self, range: &Range) -> Result<Vec<(u32, u64)>, TreeError> {
        self.delete_at(0, range)
    }

    /// Resets the valid bit of the key storing exactly `range`.
    pub fn delete_at(&mut self, root: u64, range: &Range) -> Result<Vec<(u32, u64)>, TreeError> {
        let (level, slot, side, valid) =
            self.locate(root, range).ok_or(TreeError::KeyAbsent)?;
        if !valid {
            return Err(TreeError::KeyAbsent);
        }
        let node = self.node_mut(level, slot).unwrap();
        let key = if side == 0 { &mut node.left } else { node.right.as_mut().unwrap() };
        key.valid = false;
        self.valid_keys -= 1;
        Ok(vec![(level, slot)])
    }

    pub fn modify(&mut self, range: &Range, payload: Payload) -> Result<Vec<(u32, u64)>, TreeError> {
        self.modify_at(0, range, payload)
    }

    /// Replaces the payload of the valid key storing exactly `range`;
    /// structure and addresses are untouched.
    pub fn modify_at(
        &mut self,
        root: u64,
        range: &Range,
        payload: Payload,
    ) -> Result<Vec<(u32, u64)>, TreeError> {
        let (level, slot, side, valid) =
            self.locate(root, range).ok_or(TreeError::KeyAbsent)?;
        if !valid {
            return Err(TreeError::KeyInvalid);
        }
        let node = self.node_mut(level, slot).unwrap();
        let key = if side == 0 { &mut node.left } else { node.right.as_mut().unwrap() };
        key.payload = payload;
        Ok(vec![(level, slot)])
    }

    /// Raw stage-memory write: replaces or clears one slot, keeping the
    /// key counters consistent. This is the simulator's write port; the
    /// engine-level update operations produce the slot contents.
    pub fn write_slot(&mut self, level: u32, slot: u64, node: Option<NodeSlot>) {
        let count = |n: &NodeSlot| {
            let stored = 1 + u64::from(n.right.is_some());
            let valid = u64::from(n.left.valid)
                + n.right.as_ref().map_or(0, |r| u64::from(r.valid));
            (stored, valid)
        };
        let (old_stored, old_valid) = self.node(level, slot).map_or((0, 0), count);
        let (new_stored, new_valid) = node.as_ref().map_or((0, 0), count);
        match node {
            Some(n) => self.put(level, slot, n),
            None => {
                if let Some(s) = self
                    .levels
                    .get_mut(level as usize)
                    .and_then(|row| row.get_mut(slot as usize))
                {
                    *s = None;
                }
            }
        }
        if level == 0 {
            self.roots = self.roots.max(slot + 1);
        }
        self.stored_keys = self.stored_keys - old_stored + new_stored;
        self.valid_keys = self.valid_keys - old_valid + new_valid;
    }

    /// In-order traversal of stored keys. `valid_only` filters dead keys.
    pub fn in_order(&self, valid_only: bool) -> Vec<(Range, Payload)> {
        let mut out = Vec::new();
        for root in 0..self.roots {
            self.in_order_rec(0, root, valid_only, &mut out);
        }
        out
    }

    pub fn in_order_from(&self, root: u64, valid_only: bool) -> Vec<(Range, Payload)> {
        let mut out = Vec::new();
        self.in_order_rec(0, root, valid_only, &mut out);
        out
    }

    fn in_order_rec(&self, level: u32, slot: u64, valid_only: bool, out: &mut Vec<(Range, Payload)>) {
        let Some(node) = self.node(level, slot) else {
            return;
        };
        let node = node.clone();
        self.in_order_rec(level + 1, 3 * slot, valid_only, out);
        if node.left.valid || !valid_only {
            out.push((node.left.range.clone(), node.left.payload));
        }
        self.in_order_rec(level + 1, 3 * slot + 1, valid_only, out);
        if let Some(right) = &node.right {
            if right.valid || !valid_only {
                out.push((right.range.clone(), right.payload));
            }
        }
        self.in_order_rec(level + 1, 3 * slot + 2, valid_only, out);
    }

    /// Data plus overhead footprint. Data counts `key_width` bits per
    /// valid key (a prefix-derived range is recoverable from its value
    /// and length, so one key stores one field's worth of bits).
    /// Overhead counts one valid bit per stored key plus a 32-bit length
    /// per level; there are no child-pointer bytes to count.
    pub fn memory(&self) -> MemoryFootprint {
        if self.stored_keys == 0 {
            return MemoryFootprint::default();
        }
        let data_bits = self.valid_keys * u64::from(self.key_width);
        let overhead_bits = self.stored_keys + 32 * self.levels.len() as u64;
        MemoryFootprint {
            data_bytes: data_bits.div_ceil(8),
            overhead_bytes: overhead_bits.div_ceil(8),
            data_bits,
            overhead_bits,
        }
    }

    /// Canonical byte serialization: level count, per-level slot counts,
    /// a 4-bit presence/validity descriptor per slot, then every present
    /// key as `lo`, `hi` (width-sized) and its 16-byte payload, in
    /// address order. Child references do not exist in this form; see
    /// [`serialized_size_formula`].
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let levels: Vec<&[Option<NodeSlot>]> =
            self.levels.iter().map(|row| trim(row)).collect();
        out.extend_from_slice(&(levels.len() as u32).to_le_bytes());
        for row in &levels {
            out.extend_from_slice(&(row.len() as u32).to_le_bytes());
        }
        for row in &levels {
            let mut bitmap = vec![0u8; (row.len() * 4).div_ceil(8)];
            for (i, slot) in row.iter().enumerate() {
                let mut desc = 0u8;
                if let Some(node) = slot {
                    desc |= 0b0001;
                    if node.left.valid {
                        desc |= 0b0010;
                    }
                    if let Some(right) = &node.right {
                        desc |= 0b0100;
                        if right.valid {
                            desc |= 0b1000;
                        }
                    }
                }
                bitmap[i / 2] |= desc << ((i % 2) * 4);
            }
            out.extend_from_slice(&bitmap);
        }
        let kw_bytes = (self.key_width as usize).div_ceil(8);
        for row in &levels {
            for slot in row.iter().flatten() {
                for key in slot.keys() {
                    push_wide(&mut out, &key.range.lo, kw_bytes);
                    push_wide(&mut out, &key.range.hi, kw_bytes);
                    out.extend_from_slice(&key.payload.primary.to_le_bytes());
                    out.extend_from_slice(&key.payload.aux.to_le_bytes());
                }
            }
        }
        out
    }

    /// Arithmetic size of [`serialize`]'s output: keys + payload ids +
    /// valid bitmap + level lengths, and nothing else.
    pub fn serialized_size_formula(&self) -> usize {
        let kw_bytes = (self.key_width as usize).div_ceil(8);
        let mut total = 4; // level count
        let mut present = 0usize;
        for row in &self.levels {
            let row = trim(row);
            total += 4; // level length
            total += (row.len() * 4).div_ceil(8); // presence/valid bitmap
            present += row
                .iter()
                .flatten()
                .map(|n| 1 + usize::from(n.right.is_some()))
                .sum::<usize>();
        }
        total + present * (2 * kw_bytes + 16)
    }
}

fn trim(row: &[Option<NodeSlot>]) -> &[Option<NodeSlot>] {
    let last = row.iter().rposition(|s| s.is_some()).map_or(0, |i| i + 1);
    &row[..last]
}

fn push_wide(out: &mut Vec<u8>, v: &Wide, bytes: usize) {
    let mut le = v.to_bytes_le();
    le.resize(bytes, 0);
    out.extend_from_slice(&le);
}

fn check_sorted_disjoint(key_width: u32, items: &[(Range, Payload)]) -> Result<(), TreeError> {
    for (i, (r, _)) in items.iter().enumerate() {
        if r.width != key_width {
            return Err(TreeError::KeyWidth { got: r.width, want: key_width });
        }
        if i > 0 && items[i - 1].0.hi >= r.lo {
            return Err(TreeError::Unsorted(i));
        }
    }
    Ok(())
}

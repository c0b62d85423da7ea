use std::collections::{BTreeMap, HashMap};

use super::Value;

/// Addresses below this are never mapped; null is 0.
pub const HEAP_BASE: i64 = 64;

#[derive(Debug, Clone)]
pub struct Object {
    pub start: i64,
    pub size: i64,
    pub live: bool,
    /// Length of the vector stored in the object, for containers.
    pub vec_len: i64,
    pub fields: HashMap<String, Value>,
}

impl Object {
    pub fn contains(&self, addr: i64) -> bool {
        addr >= self.start && addr < self.start + self.size
    }
}

/// A linear space of integer cells plus the table of objects placed in it.
#[derive(Debug, Clone, Default)]
pub struct Memory {
    cells: HashMap<i64, i64>,
    pub objects: Vec<Object>,
    live_by_start: BTreeMap<i64, usize>,
    bump: i64,
}

impl Memory {
    pub fn new() -> Self {
        Memory { bump: HEAP_BASE, ..Default::default() }
    }

    /// Next free address of the default allocator: objects packed back to
    /// back, never reused.
    pub fn bump(&mut self, size: i64) -> i64 {
        let at = self.bump;
        self.bump += size.max(1);
        at
    }

    pub fn place(&mut self, start: i64, size: i64, vec_len: i64) -> usize {
        self.objects.push(Object { start, size, live: true, vec_len, fields: HashMap::new() });
        let id = self.objects.len() - 1;
        self.live_by_start.insert(start, id);
        id
    }

    pub fn free(&mut self, id: usize) {
        let o = &mut self.objects[id];
        o.live = false;
        if self.live_by_start.get(&o.start) == Some(&id) {
            self.live_by_start.remove(&o.start);
        }
    }

    pub fn live_at(&self, addr: i64) -> Option<usize> {
        let (_, &id) = self.live_by_start.range(..=addr).next_back()?;
        self.objects[id].contains(addr).then_some(id)
    }

    pub fn live_starting_at(&self, addr: i64) -> Option<usize> {
        self.live_by_start.get(&addr).copied()
    }

    /// The most recently freed object covering `addr`.
    pub fn freed_at(&self, addr: i64) -> Option<usize> {
        self.objects.iter().rposition(|o| !o.live && (o.contains(addr) || (o.size == 0 && o.start == addr)))
    }

    pub fn read(&self, addr: i64) -> i64 {
        self.cells.get(&addr).copied().unwrap_or(0)
    }

    pub fn write(&mut self, addr: i64, v: i64) {
        self.cells.insert(addr, v);
    }

    pub fn init_cells(&mut self, start: i64, n: i64) {
        for a in start..start + n {
            self.cells.insert(a, 0);
        }
    }
}

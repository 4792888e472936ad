//! Fixed-capacity ring of recent events.

/// Keeps the most recent `capacity` items; older items are evicted and
/// counted. Storage is reserved once at construction and never grows.
#[derive(Debug, Clone)]
pub struct Ring<E> {
    buf: Vec<E>,
    capacity: usize,
    head: usize,
    evicted: u64,
}

impl<E: Copy> Ring<E> {
    /// # Panics
    /// If `capacity` is zero.
    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity > 0, "ring capacity must be positive");
        Self {
            buf: Vec::with_capacity(capacity),
            capacity,
            head: 0,
            evicted: 0,
        }
    }

    pub fn push(&mut self, item: E) {
        if self.buf.len() < self.capacity {
            self.buf.push(item);
        } else {
            self.buf[self.head] = item;
            self.head = (self.head + 1) % self.capacity;
            self.evicted += 1;
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Number of items pushed out by newer ones.
    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &E> + '_ {
        let (newer, older) = self.buf.split_at(self.head);
        older.iter().chain(newer.iter())
    }
}

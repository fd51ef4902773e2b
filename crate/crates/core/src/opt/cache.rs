use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

/// Least-recently-used map with a fixed entry capacity.
#[derive(Debug)]
pub struct LruCache<K, V> {
    map: HashMap<K, (V, u64)>,
    order: BTreeMap<u64, K>,
    clock: u64,
    capacity: usize,
}

impl<K: Hash + Eq + Clone, V> LruCache<K, V> {
    pub fn new(capacity: usize) -> Self {
        LruCache {
            map: HashMap::new(),
            order: BTreeMap::new(),
            clock: 0,
            capacity: capacity.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&mut self, key: &K) -> Option<&V> {
        let (_, stamp) = self.map.get_mut(key)?;
        self.clock += 1;
        let old = std::mem::replace(stamp, self.clock);
        let k = self.order.remove(&old).expect("stamp is indexed");
        self.order.insert(self.clock, k);
        self.map.get(key).map(|(v, _)| v)
    }

    pub fn insert(&mut self, key: K, value: V) {
        self.clock += 1;
        if let Some((_, old)) = self.map.insert(key.clone(), (value, self.clock)) {
            self.order.remove(&old);
        }
        self.order.insert(self.clock, key);
        while self.map.len() > self.capacity {
            let (_, k) = self.order.pop_first().expect("order tracks map");
            self.map.remove(&k);
        }
    }
}

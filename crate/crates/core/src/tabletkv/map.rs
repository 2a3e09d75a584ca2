//! Range-partitioned tablet map.

use std::cmp::Ordering;
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use super::TabletError;
use crate::lockservice::LeaseName;
use crate::resolver::KeyRouter;

/// Prefix of every tablet lease name.
pub const TABLET_LEASE_PREFIX: &str = "tablets/";

/// Exclusive upper bound of a tablet.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EndKey {
    Key(Vec<u8>),
    Infinity,
}

impl EndKey {
    /// Whether `key` lies strictly below this bound.
    pub fn above(&self, key: &[u8]) -> bool {
        match self {
            EndKey::Key(end) => key < end.as_slice(),
            EndKey::Infinity => true,
        }
    }
}

impl PartialOrd for EndKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EndKey {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (EndKey::Key(a), EndKey::Key(b)) => a.cmp(b),
            (EndKey::Key(_), EndKey::Infinity) => Ordering::Less,
            (EndKey::Infinity, EndKey::Key(_)) => Ordering::Greater,
            (EndKey::Infinity, EndKey::Infinity) => Ordering::Equal,
        }
    }
}

impl fmt::Display for EndKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EndKey::Key(k) => write!(f, "{:?}", String::from_utf8_lossy(k)),
            EndKey::Infinity => f.write_str("inf"),
        }
    }
}

/// Half-open key range `[start, end)` served under lease `tablets/<id>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabletDescriptor {
    pub id: String,
    pub start: Vec<u8>,
    pub end: EndKey,
}

impl TabletDescriptor {
    pub fn new(id: impl Into<String>, start: impl Into<Vec<u8>>, end: EndKey) -> Self {
        Self {
            id: id.into(),
            start: start.into(),
            end,
        }
    }

    pub fn lease_name(&self) -> LeaseName {
        tablet_lease_name(&self.id).expect("tablet ids are validated on map construction")
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.start.as_slice() <= key && self.end.above(key)
    }
}

/// `tablets/<id>`.
pub fn tablet_lease_name(id: &str) -> Result<LeaseName, TabletError> {
    if id.contains('/') {
        return Err(TabletError::InvalidMap(format!("tablet id `{id}` contains `/`")));
    }
    LeaseName::new(format!("{TABLET_LEASE_PREFIX}{id}"))
        .map_err(|e| TabletError::InvalidMap(e.to_string()))
}

/// Inverse of [`tablet_lease_name`].
pub fn tablet_id_of(name: &LeaseName) -> Option<&str> {
    name.as_str().strip_prefix(TABLET_LEASE_PREFIX)
}

/// Ordered, gap-free, non-overlapping cover of the whole keyspace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabletMap {
    tablets: Vec<TabletDescriptor>,
    version: u64,
}

impl TabletMap {
    pub fn new(mut tablets: Vec<TabletDescriptor>) -> Result<Self, TabletError> {
        tablets.sort_by(|a, b| a.start.cmp(&b.start));
        let invalid = |msg: String| Err(TabletError::InvalidMap(msg));
        if tablets.is_empty() {
            return invalid("no tablets".into());
        }
        if !tablets[0].start.is_empty() {
            return invalid("first tablet must start at the empty key".into());
        }
        for t in &tablets {
            tablet_lease_name(&t.id)?;
            if !t.end.above(&t.start) {
                return invalid(format!("tablet {} has an empty range", t.id));
            }
        }
        for pair in tablets.windows(2) {
            if pair[0].end != EndKey::Key(pair[1].start.clone()) {
                return invalid(format!(
                    "tablets {} and {} leave a gap or overlap",
                    pair[0].id, pair[1].id
                ));
            }
        }
        if tablets.last().expect("nonempty").end != EndKey::Infinity {
            return invalid("last tablet must extend to inf".into());
        }
        let mut ids: Vec<&str> = tablets.iter().map(|t| t.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return invalid("duplicate tablet id".into());
        }
        Ok(Self { tablets, version: 0 })
    }

    /// One tablet over every key.
    pub fn single(id: &str) -> Result<Self, TabletError> {
        Self::new(vec![TabletDescriptor::new(id, Vec::new(), EndKey::Infinity)])
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn tablets(&self) -> &[TabletDescriptor] {
        &self.tablets
    }

    pub fn get(&self, id: &str) -> Option<&TabletDescriptor> {
        self.tablets.iter().find(|t| t.id == id)
    }

    /// The unique tablet with `start <= key < end`.
    pub fn tablet_for_key(&self, key: &[u8]) -> &TabletDescriptor {
        let idx = self.tablets.partition_point(|t| t.start.as_slice() <= key);
        // idx >= 1 because the first tablet starts at the empty key.
        &self.tablets[idx - 1]
    }

    pub fn lease_for_key(&self, key: &[u8]) -> LeaseName {
        self.tablet_for_key(key).lease_name()
    }

    /// Replaces tablet `id` by `<id>a = [start, split_key)` and
    /// `<id>b = [split_key, end)`.
    pub fn split(&self, id: &str, split_key: &[u8]) -> Result<TabletMap, TabletError> {
        let pos = self
            .tablets
            .iter()
            .position(|t| t.id == id)
            .ok_or_else(|| TabletError::UnknownTablet(id.to_string()))?;
        let parent = &self.tablets[pos];
        if split_key <= parent.start.as_slice() || !parent.end.above(split_key) {
            return Err(TabletError::BadSplit {
                tablet: id.to_string(),
                key: String::from_utf8_lossy(split_key).into_owned(),
            });
        }
        let left = TabletDescriptor::new(format!("{id}a"), parent.start.clone(), EndKey::Key(split_key.to_vec()));
        let right = TabletDescriptor::new(format!("{id}b"), split_key.to_vec(), parent.end.clone());
        if self.get(&left.id).is_some() || self.get(&right.id).is_some() {
            return Err(TabletError::InvalidMap(format!("split of {id} would reuse a live tablet id")));
        }
        let mut tablets = self.tablets.clone();
        tablets.splice(pos..=pos, [left, right]);
        Ok(TabletMap {
            tablets,
            version: self.version + 1,
        })
    }
}

/// Live tablet map shared by servers and the resolver.
#[derive(Debug, Clone)]
pub struct SharedTabletMap(Arc<Mutex<TabletMap>>);

impl SharedTabletMap {
    pub fn new(map: TabletMap) -> Self {
        Self(Arc::new(Mutex::new(map)))
    }

    pub fn lock(&self) -> MutexGuard<'_, TabletMap> {
        self.0.lock().expect("tablet map mutex poisoned")
    }

    pub fn snapshot(&self) -> TabletMap {
        self.lock().clone()
    }

    /// Splits in place and returns the two children.
    pub fn split(&self, id: &str, split_key: &[u8]) -> Result<(TabletDescriptor, TabletDescriptor), TabletError> {
        let mut map = self.lock();
        let next = map.split(id, split_key)?;
        *map = next;
        let left = map.get(&format!("{id}a")).cloned().expect("just inserted");
        let right = map.get(&format!("{id}b")).cloned().expect("just inserted");
        Ok((left, right))
    }
}

impl KeyRouter for SharedTabletMap {
    fn route(&self, key: &[u8]) -> Option<LeaseName> {
        Some(self.lock().lease_for_key(key))
    }
}

impl KeyRouter for TabletMap {
    fn route(&self, key: &[u8]) -> Option<LeaseName> {
        Some(self.lease_for_key(key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_way() -> TabletMap {
        TabletMap::new(vec![
            TabletDescriptor::new("L", "", EndKey::Key(b"m".to_vec())),
            TabletDescriptor::new("R", "m", EndKey::Infinity),
        ])
        .unwrap()
    }

    /// Linear-scan oracle: every tablet whose range holds the key.
    fn scan<'a>(map: &'a TabletMap, key: &[u8]) -> Vec<&'a str> {
        map.tablets()
            .iter()
            .filter(|t| t.start.as_slice() <= key && t.end.above(key))
            .map(|t| t.id.as_str())
            .collect()
    }

    #[test]
    fn unit_map_routes_everything() {
        let map = TabletMap::single("T0").unwrap();
        for key in [&b""[..], b"apple", b"\xff\xff"] {
            assert_eq!(map.lease_for_key(key).as_str(), "tablets/T0");
        }
    }

    #[test]
    fn two_way_routing_and_boundary() {
        let map = two_way();
        assert_eq!(scan(&map, b"apple"), vec!["L"]);
        assert_eq!(map.tablet_for_key(b"apple").id, "L");
        assert_eq!(map.tablet_for_key(b"m").id, "R");
        assert_eq!(map.tablet_for_key(b"lzzz").id, "L");
    }

    #[test]
    fn split_produces_children() {
        let map = TabletMap::single("T0").unwrap();
        let next = map.split("T0", b"m").unwrap();
        assert_eq!(next.version(), map.version() + 1);
        assert_eq!(
            next.tablets(),
            &[
                TabletDescriptor::new("T0a", "", EndKey::Key(b"m".to_vec())),
                TabletDescriptor::new("T0b", "m", EndKey::Infinity),
            ]
        );
        assert_eq!(next.lease_for_key(b"zebra").as_str(), "tablets/T0b");
    }

    #[test]
    fn split_at_or_outside_bounds_fails() {
        let map = two_way();
        assert!(matches!(map.split("R", b"m"), Err(TabletError::BadSplit { .. })));
        assert!(matches!(map.split("L", b"m"), Err(TabletError::BadSplit { .. })));
        assert!(matches!(map.split("L", b"z"), Err(TabletError::BadSplit { .. })));
        assert!(matches!(map.split("L", b""), Err(TabletError::BadSplit { .. })));
        assert!(matches!(map.split("nope", b"c"), Err(TabletError::UnknownTablet(_))));
    }

    #[test]
    fn invalid_maps_are_rejected() {
        let gap = vec![
            TabletDescriptor::new("A", "", EndKey::Key(b"f".to_vec())),
            TabletDescriptor::new("B", "g", EndKey::Infinity),
        ];
        assert!(TabletMap::new(gap).is_err());
        let no_start = vec![TabletDescriptor::new("A", "a", EndKey::Infinity)];
        assert!(TabletMap::new(no_start).is_err());
        let bounded = vec![TabletDescriptor::new("A", "", EndKey::Key(b"z".to_vec()))];
        assert!(TabletMap::new(bounded).is_err());
        assert!(TabletMap::new(vec![]).is_err());
        assert!(TabletMap::single("a/b").is_err());
    }

    #[test]
    fn shared_map_routes_live() {
        let shared = SharedTabletMap::new(TabletMap::single("T0").unwrap());
        assert_eq!(shared.route(b"zebra").unwrap().as_str(), "tablets/T0");
        shared.split("T0", b"m").unwrap();
        assert_eq!(shared.route(b"zebra").unwrap().as_str(), "tablets/T0b");
        assert_eq!(shared.route(b"apple").unwrap().as_str(), "tablets/T0a");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        /// Random split sequences keep the map a partition: every probe key
        /// lands in exactly one tablet, and the fast lookup agrees with the scan.
        #[test]
        fn splits_preserve_partition(
            splits in prop::collection::vec((any::<prop::sample::Index>(), prop::collection::vec(any::<u8>(), 1..4)), 0..12),
            probes in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..5), 16),
        ) {
            let mut map = TabletMap::single("T").unwrap();
            for (which, key) in splits {
                let id = which.get(map.tablets()).id.clone();
                let before = map.clone();
                match map.split(&id, &key) {
                    Ok(next) => {
                        prop_assert_eq!(next.version(), before.version() + 1);
                        // Split linearity: each parent key goes to exactly one child.
                        let parent = before.get(&id).unwrap();
                        for p in &probes {
                            if parent.contains(p) {
                                let owner = next.tablet_for_key(p);
                                let (a, b) = (format!("{id}a"), format!("{id}b"));
                                prop_assert!(owner.id == a || owner.id == b);
                            }
                        }
                        map = next;
                    }
                    Err(TabletError::BadSplit { .. }) => {
                        let t = before.get(&id).unwrap();
                        prop_assert!(key.as_slice() <= t.start.as_slice() || !t.end.above(&key));
                    }
                    Err(e) => prop_assert!(false, "unexpected {e}"),
                }
            }
            prop_assert!(TabletMap::new(map.tablets().to_vec()).is_ok());
            for p in &probes {
                let hits = scan(&map, p);
                prop_assert_eq!(hits.len(), 1);
                prop_assert_eq!(hits[0], map.tablet_for_key(p).id.as_str());
            }
        }
    }
}

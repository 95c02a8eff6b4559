use std::collections::BTreeMap;
use std::sync::Arc;

/// Named strategies behind a common trait object.
pub struct Registry<T: ?Sized> {
    entries: BTreeMap<String, Arc<T>>,
    aliases: BTreeMap<String, String>,
}

impl<T: ?Sized> Default for Registry<T> {
    fn default() -> Self {
        Registry {
            entries: BTreeMap::new(),
            aliases: BTreeMap::new(),
        }
    }
}

impl<T: ?Sized> Registry<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces the entry called `name`.
    pub fn register(&mut self, name: &str, entry: Arc<T>) {
        self.entries.insert(name.to_string(), entry);
    }

    pub fn alias(&mut self, alias: &str, target: &str) {
        self.aliases.insert(alias.to_string(), target.to_string());
    }

    pub fn get(&self, name: &str) -> Option<Arc<T>> {
        let name = self.aliases.get(name).map_or(name, String::as_str);
        self.entries.get(name).cloned()
    }

    /// Registered names in sorted order, aliases excluded.
    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

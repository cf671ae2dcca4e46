use std::collections::HashMap;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// String → dense id table with reserved padding (0) and unknown (1) ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Index {
    items: Vec<String>,
    map: HashMap<String, usize>,
}

impl Default for Index {
    fn default() -> Self {
        Self::new()
    }
}

impl Index {
    pub fn new() -> Self {
        Index {
            items: vec!["<pad>".into(), "<unk>".into()],
            map: HashMap::new(),
        }
    }

    /// Rebuild from the item list (reserved entries included).
    pub fn from_items(items: Vec<String>) -> Self {
        let map = items.iter().enumerate().skip(2).map(|(i, s)| (s.clone(), i)).collect();
        Index { items, map }
    }

    pub fn get(&self, key: &str) -> usize {
        self.map.get(key).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn get_or_insert(&mut self, key: &str) -> usize {
        if let Some(&id) = self.map.get(key) {
            return id;
        }
        let id = self.items.len();
        self.items.push(key.to_string());
        self.map.insert(key.to_string(), id);
        id
    }

    /// Size including the two reserved ids.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.len() <= 2
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    /// Non-reserved entries.
    pub fn entries(&self) -> impl Iterator<Item = (&str, usize)> {
        self.items.iter().enumerate().skip(2).map(|(i, s)| (s.as_str(), i))
    }
}

/// Word, character and POS vocabularies. Growable until frozen; after that
/// unseen items map to the unknown id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    pub words: Index,
    pub chars: Index,
    pub pos: Index,
    frozen: bool,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(words: Index, chars: Index, pos: Index) -> Self {
        Vocab {
            words,
            chars,
            pos,
            frozen: true,
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn word_id(&mut self, w: &str) -> usize {
        if self.frozen {
            self.words.get(w)
        } else {
            self.words.get_or_insert(w)
        }
    }

    pub fn char_id(&mut self, c: char) -> usize {
        let mut buf = [0u8; 4];
        let key = c.encode_utf8(&mut buf);
        if self.frozen {
            self.chars.get(key)
        } else {
            self.chars.get_or_insert(key)
        }
    }

    pub fn pos_id(&mut self, p: &str) -> usize {
        if self.frozen {
            self.pos.get(p)
        } else {
            self.pos.get_or_insert(p)
        }
    }
}

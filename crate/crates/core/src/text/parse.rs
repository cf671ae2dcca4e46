//! Leaf extraction from bracketed constituency parses such as
//! `(ROOT (S (NP (DT A) (NN dog)) (VP (VBZ runs))))`.

use crate::error::{Error, Result};

/// A `(TAG token)` leaf.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Leaf {
    pub pos: String,
    pub token: String,
}

struct Reader<'a> {
    src: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn skip_ws(&mut self) {
        while self.at < self.src.len() && self.src[self.at].is_ascii_whitespace() {
            self.at += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.at).copied()
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.at,
            msg: msg.into(),
        }
    }

    fn atom(&mut self) -> &'a str {
        let start = self.at;
        while let Some(c) = self.peek() {
            if c.is_ascii_whitespace() || c == b'(' || c == b')' {
                break;
            }
            self.at += 1;
        }
        // boundaries are ASCII, so the slice is valid UTF-8
        std::str::from_utf8(&self.src[start..self.at]).expect("utf-8 boundary")
    }

    fn node(&mut self, leaves: &mut Vec<Leaf>) -> Result<()> {
        if self.peek() != Some(b'(') {
            return Err(self.err("expected `(`"));
        }
        self.at += 1;
        self.skip_ws();
        let label = self.atom();
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                while self.peek() == Some(b'(') {
                    self.node(leaves)?;
                    self.skip_ws();
                }
            }
            Some(b')') => return Err(self.err(format!("leaf `{label}` has no token"))),
            Some(_) => {
                if label.is_empty() {
                    return Err(self.err("leaf has no tag"));
                }
                let token = self.atom();
                leaves.push(Leaf {
                    pos: label.to_string(),
                    token: token.to_string(),
                });
                self.skip_ws();
            }
            None => return Err(self.err("unbalanced parentheses: input ended inside a node")),
        }
        match self.peek() {
            Some(b')') => {
                self.at += 1;
                Ok(())
            }
            None => Err(self.err("unbalanced parentheses: missing `)`")),
            Some(_) => Err(self.err("expected `)`")),
        }
    }
}

/// Leaves of `parse` in left-to-right order; inner labels are ignored.
pub fn extract_pos(parse: &str) -> Result<Vec<Leaf>> {
    let mut r = Reader {
        src: parse.as_bytes(),
        at: 0,
    };
    let mut leaves = Vec::new();
    r.skip_ws();
    r.node(&mut leaves)?;
    r.skip_ws();
    if r.peek().is_some() {
        return Err(r.err("unbalanced parentheses: trailing input after the tree"));
    }
    Ok(leaves)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(parse: &str) -> Vec<(String, String)> {
        extract_pos(parse)
            .unwrap()
            .into_iter()
            .map(|l| (l.pos, l.token))
            .collect()
    }

    #[test]
    fn leaves_in_order() {
        assert_eq!(
            pairs("(ROOT (S (NP (DT A) (NN dog))))"),
            vec![("DT".into(), "A".into()), ("NN".into(), "dog".into())]
        );
        assert_eq!(pairs("(ROOT (X (Y z)))"), vec![("Y".into(), "z".into())]);
    }

    #[test]
    fn punctuation_tags() {
        assert_eq!(
            pairs("(ROOT (S (NP (PRP It)) (VP (VBZ is)) (. .)))"),
            vec![
                ("PRP".into(), "It".into()),
                ("VBZ".into(), "is".into()),
                (".".into(), ".".into())
            ]
        );
    }

    #[test]
    fn unbalanced_reports_offset() {
        match extract_pos("(ROOT (S (NN dog)") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 17),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            extract_pos("(ROOT (NN dog)))"),
            Err(Error::Parse { offset: 15, .. })
        ));
    }

    #[test]
    fn missing_token_is_an_error() {
        let err = extract_pos("(ROOT (NP (NN)))").unwrap_err();
        assert!(err.to_string().contains("no token"), "{err}");
    }
}

//! N-Triples files as flat lists of triples.

use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use oxttl::NTriplesParser;

pub use oxrdf::{BlankNode, Literal, NamedNode, NamedOrBlankNode, Term, Triple};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripleStore {
    pub triples: Vec<Triple>,
}

impl TripleStore {
    /// Parses N-Triples text. IRIs are taken as written (relative IRIs are
    /// accepted); any malformed line is an error carrying its line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut triples = Vec::new();
        for t in NTriplesParser::new().lenient().for_slice(text.as_bytes()) {
            match t {
                Ok(t) => triples.push(t),
                Err(e) => {
                    let at = e.location().start;
                    return Err(Error::Parse {
                        location: format!("line {}, column {}", at.line + 1, at.column + 1),
                        message: e.message().to_string(),
                    });
                }
            }
        }
        Ok(TripleStore { triples })
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Appends the triples of `other`.
    pub fn extend(&mut self, other: TripleStore) {
        self.triples.extend(other.triples);
    }

    /// One triple per line, terminated by ` .`.
    pub fn to_ntriples(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(&t.to_string());
            out.push_str(" .\n");
        }
        out
    }
}

/// Reads and parses one `.nt` file; parse errors name the file.
pub fn parse_ntriples(path: impl AsRef<Path>) -> Result<TripleStore> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })?;
    TripleStore::parse(&text).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

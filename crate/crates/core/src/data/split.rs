use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Ordered `(image, mask)` path pairs, already resolved against the data root.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitList {
    pub entries: Vec<(PathBuf, PathBuf)>,
}

impl SplitList {
    /// Parses `image<TAB>mask` lines; blank lines and `#` comments are
    /// skipped. `origin` only labels errors.
    pub fn parse(text: &str, data_root: &Path, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::SplitList {
                path: origin.to_path_buf(),
                line: i + 1,
                reason,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                [img, mask] if !img.trim().is_empty() && !mask.trim().is_empty() => {
                    entries.push((data_root.join(img.trim()), data_root.join(mask.trim())));
                }
                _ => return Err(err(format!("expected `image<TAB>mask`, got {line:?}"))),
            }
        }
        Ok(Self { entries })
    }

    /// Reads and parses a split file, then checks every referenced file exists.
    pub fn load(path: &Path, data_root: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let list = Self::parse(&text, data_root, path)?;
        let mut line_of = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|(i, _)| i + 1);
        for (img, mask) in &list.entries {
            let line = line_of.next().unwrap_or(0);
            for p in [img, mask] {
                if !p.is_file() {
                    return Err(Error::SplitList {
                        path: path.to_path_buf(),
                        line,
                        reason: format!("missing file {}", p.display()),
                    });
                }
            }
        }
        Ok(list)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

use std::io::Write;
use std::path::Path;

use mobacc_core::Error as CoreError;

pub const EXIT_ANALYSIS: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DOMAIN: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_USAGE,
            error: error.into(),
        }
    }
}

fn code_of(e: &CoreError) -> u8 {
    match e {
        CoreError::Io(_) | CoreError::Csv(_) | CoreError::Parse { .. } | CoreError::Config(_) | CoreError::Document { .. } => {
            EXIT_USAGE
        }
        CoreError::OutOfDomain { .. } | CoreError::Domain(_) => EXIT_DOMAIN,
        CoreError::TooShort { .. }
        | CoreError::OracleCap { .. }
        | CoreError::Degenerate(_)
        | CoreError::Fit(_)
        | CoreError::User { .. } => EXIT_ANALYSIS,
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure {
            code: code_of(&e),
            error: e.into(),
        }
    }
}

pub trait Context<T> {
    /// Keeps the error's own exit code and prefixes a message.
    fn context(self, msg: impl FnOnce() -> String) -> Result<T, Failure>;
    /// Treats any failure as a bad input file.
    fn input(self, path: &Path) -> Result<T, Failure>;
}

impl<T> Context<T> for Result<T, CoreError> {
    fn context(self, msg: impl FnOnce() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: code_of(&e),
            error: anyhow::Error::from(e).context(msg()),
        })
    }

    fn input(self, path: &Path) -> Result<T, Failure> {
        self.map_err(|e| Failure::usage(anyhow::Error::from(e).context(format!("{}", path.display()))))
    }
}

impl<T> Context<T> for std::io::Result<T> {
    fn context(self, msg: impl FnOnce() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure::usage(anyhow::Error::from(e).context(msg())))
    }

    fn input(self, path: &Path) -> Result<T, Failure> {
        self.map_err(|e| Failure::usage(anyhow::Error::from(e).context(format!("{}", path.display()))))
    }
}

pub fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>, Failure> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| Failure::usage(anyhow::anyhow!("cannot open {}: {e}", path.display())))
}

/// Writes `path` through a temporary file in the same directory and a rename.
pub fn atomic_write(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<(), CoreError>) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).context(|| format!("cannot create {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).context(|| format!("cannot write in {}", dir.display()))?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w).context(|| format!("cannot write {}", path.display()))?;
        w.flush().context(|| format!("cannot write {}", path.display()))?;
    }
    tmp.persist(path)
        .map_err(|e| Failure::usage(anyhow::anyhow!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    atomic_write(path, |w| Ok(w.write_all(text.as_bytes())?))
}

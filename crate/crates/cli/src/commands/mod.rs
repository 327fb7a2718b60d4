pub mod gains;
pub mod gradcheck;
pub mod plan;
pub mod probe;
pub mod train;

use std::path::Path;

use crate::CliError;

pub(crate) fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

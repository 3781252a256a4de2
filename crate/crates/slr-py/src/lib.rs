use pyo3::prelude::*;

#[pymodule]
fn slr_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}

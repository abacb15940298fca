use pyo3::prelude::*;

#[pymodule]
fn cflsim(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}

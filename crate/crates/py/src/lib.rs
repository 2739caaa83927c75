use pyo3::prelude::*;

#[pymodule]
fn freight_trips_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}

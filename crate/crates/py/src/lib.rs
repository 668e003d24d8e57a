//! Python module `uchain`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use uchain::estimator::{calibrate_a as fit_a, CalibrationRow};
use uchain::oracle::maximin_oracle as oracle;
use uchain::{maps, ScenarioConfig, Variant, Vec2};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn variant(name: &str) -> PyResult<Variant> {
    name.parse().map_err(PyValueError::new_err)
}

/// A scenario description (bundled or TOML).
#[pyclass(name = "Scenario", module = "uchain", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    cfg: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// Bundled scenario by name, or a path to a TOML file.
    #[new]
    fn new(name_or_path: &str) -> PyResult<Self> {
        ScenarioConfig::resolve(name_or_path)
            .map(|cfg| Self { cfg })
            .map_err(value_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ScenarioConfig::parse(text, "<string>")
            .map(|cfg| Self { cfg })
            .map_err(value_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.cfg.name.clone()
    }

    #[getter]
    fn agent_count(&self) -> usize {
        self.cfg.agent_count
    }

    #[getter]
    fn horizon_s(&self) -> f64 {
        self.cfg.horizon_s
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    #[getter]
    fn variants(&self) -> Vec<String> {
        self.cfg.variants.iter().map(|v| v.to_string()).collect()
    }

    #[getter]
    fn environments(&self) -> Vec<String> {
        self.cfg.environment_names()
    }

    /// Copy pinned to one map.
    fn on_environment(&self, name: &str) -> Self {
        Self {
            cfg: self.cfg.on_environment(name),
        }
    }

    fn __repr__(&self) -> String {
        format!("Scenario({:?})", self.cfg.name)
    }
}

#[pyclass(name = "World", module = "uchain")]
struct PyWorld {
    world: uchain::World,
}

#[pymethods]
impl PyWorld {
    #[new]
    #[pyo3(signature = (scenario, variant = "K", seed = None))]
    fn new(scenario: &PyScenario, variant: &str, seed: Option<u64>) -> PyResult<Self> {
        let seed = seed.unwrap_or(scenario.cfg.seed);
        uchain::World::new(&scenario.cfg, self::variant(variant)?, seed)
            .map(|world| Self { world })
            .map_err(value_err)
    }

    fn step(&mut self) {
        self.world.step();
    }

    fn run_until(&mut self, horizon_s: f64) {
        self.world.run_until(horizon_s);
    }

    #[getter]
    fn tick(&self) -> u64 {
        self.world.tick()
    }

    #[getter]
    fn time(&self) -> f64 {
        self.world.time()
    }

    #[getter]
    fn chain(&self) -> Vec<usize> {
        self.world.chain().to_vec()
    }

    #[getter]
    fn event_log(&self) -> String {
        self.world.event_log().to_string()
    }

    fn set_pilot_velocity(&mut self, v: f64) {
        self.world.set_pilot_velocity(v);
    }

    fn request_launch(&mut self) -> Option<usize> {
        self.world.request_launch()
    }

    fn place_agent(&mut self, id: usize, abscissa: f64) -> PyResult<()> {
        if id >= self.world.agents().len() {
            return Err(PyValueError::new_err(format!("no agent {id}")));
        }
        self.world.place_agent(id, abscissa);
        Ok(())
    }

    /// One dict per agent: id, mode, x, y, heading, abscissa, velocity.
    fn agents<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.world
            .agents()
            .iter()
            .map(|a| {
                let d = PyDict::new(py);
                d.set_item("id", a.id)?;
                d.set_item("mode", a.mode.as_str())?;
                d.set_item("x", a.pose.position.x)?;
                d.set_item("y", a.pose.position.y)?;
                d.set_item("heading", a.pose.heading())?;
                d.set_item("abscissa", a.abscissa)?;
                d.set_item("velocity", a.forward_velocity)?;
                Ok(d)
            })
            .collect()
    }

    /// Links of the last tick, head side first.
    fn links<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.world
            .links()
            .iter()
            .map(|l| {
                let d = PyDict::new(py);
                d.set_item("head_side", l.head_side)?;
                d.set_item("base_side", l.base_side)?;
                d.set_item("true", l.true_q)?;
                d.set_item("raw", l.raw_q)?;
                d.set_item("filtered", l.filtered_q)?;
                Ok(d)
            })
            .collect()
    }
}

/// Runs one scenario to its horizon and returns its metrics.
#[pyfunction]
#[pyo3(signature = (scenario, variant = "K", seed = None))]
fn run_scenario<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    variant: &str,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let v = self::variant(variant)?;
    let seed = seed.unwrap_or(scenario.cfg.seed);
    let cfg = scenario.cfg.clone();
    let out = py
        .detach(move || uchain::run_scenario(&cfg, v, seed))
        .map_err(value_err)?;
    let m = &out.metrics;
    let d = PyDict::new(py);
    d.set_item("variant", out.variant.to_string())?;
    d.set_item("seed", out.seed)?;
    d.set_item("convergence_time", m.convergence_time)?;
    d.set_item("position_variance", m.position_variance)?;
    d.set_item("launches", m.launches.clone())?;
    d.set_item(
        "faults",
        m.faults
            .iter()
            .map(|f| (f.tick, f.agent, f.kind.clone()))
            .collect::<Vec<_>>(),
    )?;
    d.set_item("final_link_qualities", m.final_link_qualities())?;
    d.set_item("event_log", out.event_log)?;
    Ok(d)
}

/// Fits the control gain; `qualities` may hold None for lost packets.
/// Returns (a, residual_rms, samples).
#[pyfunction]
fn calibrate_a(separation_rates: Vec<f64>, qualities: Vec<Option<f64>>) -> PyResult<(f64, f64, usize)> {
    if separation_rates.len() != qualities.len() {
        return Err(PyValueError::new_err("separation_rates and qualities differ in length"));
    }
    let rows: Vec<CalibrationRow> = separation_rates
        .into_iter()
        .zip(qualities)
        .enumerate()
        .map(|(i, (u, q))| CalibrationRow {
            tick: i as u64 + 1,
            separation_rate: u,
            quality: q,
        })
        .collect();
    let fit = fit_a(&rows).map_err(value_err)?;
    Ok((fit.a, fit.residual_rms, fit.samples))
}

/// Best weakest-link placement of `links - 1` relays on a bundled map.
/// Returns (value, positions head first).
#[pyfunction]
#[pyo3(signature = (environment, head_abscissa, links))]
fn maximin_oracle(environment: &str, head_abscissa: f64, links: usize) -> PyResult<(f64, Vec<f64>)> {
    let env = maps::bundled(environment).map_err(value_err)?;
    let sol = oracle(&env, &uchain::RadioParams::noiseless(), head_abscissa, links)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((sol.value, sol.positions))
}

/// Noiseless link quality between two points on a bundled map.
#[pyfunction]
fn true_quality(environment: &str, p: (f64, f64), q: (f64, f64)) -> PyResult<f64> {
    let env = maps::bundled(environment).map_err(value_err)?;
    Ok(uchain::radio::true_quality(
        &env,
        Vec2::new(p.0, p.1),
        Vec2::new(q.0, q.1),
        &uchain::RadioParams::default(),
    ))
}

#[pyfunction]
fn environment_names() -> Vec<&'static str> {
    maps::bundled_names().collect()
}

#[pyfunction]
fn scenario_names() -> Vec<&'static str> {
    ScenarioConfig::bundled_names().collect()
}

#[pymodule(name = "uchain")]
fn uchain_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyWorld>()?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_a, m)?)?;
    m.add_function(wrap_pyfunction!(maximin_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(true_quality, m)?)?;
    m.add_function(wrap_pyfunction!(environment_names, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_names, m)?)?;
    Ok(())
}

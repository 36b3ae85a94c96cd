//! Python bindings: toy/real model loading, hooked forwards, the valence
//! metric, patch sweeps, flip tests, steering, and the rank statistics.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vallens::metric::{AnchorSet, AnchorSetName, ResolvedAnchors};
use vallens::model::{
    load_model, make_toy_model, save_model, ForwardRequest, HookPoint, ModelBundle, ModelConfig,
    PositionSelector, Precision, ResidualEdit,
};
use vallens::patch::{patch_heatmap, patch_sweep, PairMeta};
use vallens::pipeline::experiment_template;
use vallens::steering::{alpha_sweep, extract_direction, steer_and_score, SteeringDirection};
use vallens::text::{pad_pair, render_and_tokenize, resolve_anchors, tokenize_pair, ChatTemplate};
use vallens::{corpus, flip, stats, Condition, Domain};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn parse_condition(s: &str) -> PyResult<Condition> {
    s.parse::<Condition>().map_err(value_err)
}

#[pyclass(name = "ModelBundle")]
struct PyModelBundle {
    inner: ModelBundle,
}

#[pymethods]
impl PyModelBundle {
    #[getter]
    fn n_layers(&self) -> usize {
        self.inner.config().n_layers
    }

    #[getter]
    fn d_model(&self) -> usize {
        self.inner.config().d_model
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.config().vocab_size
    }

    #[getter]
    fn n_heads(&self) -> usize {
        self.inner.config().n_heads
    }

    #[getter]
    fn n_kv_heads(&self) -> usize {
        self.inner.config().n_kv_heads
    }

    fn encode(&self, text: &str) -> PyResult<Vec<u32>> {
        self.inner.tokenizer().encode(text).map_err(value_err)
    }

    fn pad_id(&self) -> PyResult<u32> {
        self.inner.tokenizer().pad_or_eos().map_err(value_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.inner, &path).map_err(io_err)
    }

    /// Run one forward pass.
    ///
    /// `capture` is a list of (layer, position) cells to record;
    /// `edits` is a list of (layer, position, vector, mode) with mode
    /// "replace" or "add". Returns (logits, {(layer, position): vector}).
    #[pyo3(signature = (tokens, mask=None, capture=None, edits=None))]
    fn forward(
        &self,
        py: Python<'_>,
        tokens: Vec<u32>,
        mask: Option<Vec<bool>>,
        capture: Option<Vec<(usize, usize)>>,
        edits: Option<Vec<(usize, usize, Vec<f32>, String)>>,
    ) -> PyResult<(Vec<f32>, Py<PyDict>)> {
        let mask = mask.unwrap_or_else(|| vec![true; tokens.len()]);
        let capture_points: Vec<HookPoint> = capture
            .unwrap_or_default()
            .into_iter()
            .map(|(layer, pos)| HookPoint::resid_pre(layer, PositionSelector::Single(pos)))
            .collect();
        let edit_list: Vec<ResidualEdit> = edits
            .unwrap_or_default()
            .into_iter()
            .map(|(layer, position, vector, mode)| match mode.as_str() {
                "replace" => Ok(ResidualEdit::replace(layer, position, vector)),
                "add" => Ok(ResidualEdit::add(layer, position, vector)),
                other => Err(value_err(format!("unknown edit mode `{other}`"))),
            })
            .collect::<PyResult<_>>()?;
        let record = self
            .inner
            .forward(
                &ForwardRequest::new(&tokens, &mask)
                    .with_capture(capture_points)
                    .with_edits(edit_list),
            )
            .map_err(value_err)?;
        let cache = PyDict::new(py);
        for (&(layer, pos), vector) in record.cache.iter() {
            cache.set_item((layer, pos), vector.clone())?;
        }
        Ok((record.logits, cache.into()))
    }
}

#[pyclass(name = "ResolvedAnchors", skip_from_py_object)]
#[derive(Clone)]
struct PyResolvedAnchors {
    inner: ResolvedAnchors,
}

#[pymethods]
impl PyResolvedAnchors {
    #[getter]
    fn positive_ids(&self) -> Vec<u32> {
        self.inner.positive_ids.clone()
    }

    #[getter]
    fn negative_ids(&self) -> Vec<u32> {
        self.inner.negative_ids.clone()
    }

    #[getter]
    fn valid_counts(&self) -> (usize, usize) {
        self.inner.valid_counts
    }
}

#[pyfunction(name = "make_toy_model")]
#[pyo3(signature = (seed, n_layers=4, d_model=64, n_heads=4, n_kv_heads=None, d_mlp=128, vocab_size=128))]
fn py_make_toy_model(
    seed: u64,
    n_layers: usize,
    d_model: usize,
    n_heads: usize,
    n_kv_heads: Option<usize>,
    d_mlp: usize,
    vocab_size: usize,
) -> PyResult<PyModelBundle> {
    let config = ModelConfig::toy(
        n_layers,
        d_model,
        n_heads,
        n_kv_heads.unwrap_or(n_heads),
        d_mlp,
        vocab_size,
    );
    Ok(PyModelBundle { inner: make_toy_model(seed, &config).map_err(value_err)? })
}

#[pyfunction(name = "load_model")]
#[pyo3(signature = (path, half_precision=false))]
fn py_load_model(path: PathBuf, half_precision: bool) -> PyResult<PyModelBundle> {
    let bundle = load_model(&path, None).map_err(io_err)?;
    let precision = if half_precision { Precision::Half } else { Precision::Full };
    Ok(PyModelBundle { inner: bundle.into_precision(precision) })
}

#[pyfunction(name = "builtin_anchor_words")]
fn py_builtin_anchor_words(py: Python<'_>, name: &str) -> PyResult<Py<PyDict>> {
    let set_name = name.parse::<AnchorSetName>().map_err(value_err)?;
    let set = AnchorSet::builtin(&set_name)
        .ok_or_else(|| value_err("anchor set `custom` has no builtin words"))?;
    let out = PyDict::new(py);
    out.set_item("positive", set.positive)?;
    out.set_item("negative", set.negative)?;
    Ok(out.into())
}

#[pyfunction(name = "resolve_anchors")]
#[pyo3(signature = (bundle, name="default", positive=None, negative=None))]
fn py_resolve_anchors(
    bundle: &PyModelBundle,
    name: &str,
    positive: Option<Vec<String>>,
    negative: Option<Vec<String>>,
) -> PyResult<PyResolvedAnchors> {
    let set = match (positive, negative) {
        (Some(pos), Some(neg)) => {
            AnchorSet::new(AnchorSetName::Custom, pos, neg).map_err(value_err)?
        }
        (None, None) => {
            let set_name = name.parse::<AnchorSetName>().map_err(value_err)?;
            AnchorSet::builtin(&set_name)
                .ok_or_else(|| value_err("anchor set `custom` needs explicit word lists"))?
        }
        _ => return Err(value_err("provide both positive and negative, or neither")),
    };
    Ok(PyResolvedAnchors { inner: resolve_anchors(&bundle.inner, &set).map_err(value_err)? })
}

#[pyfunction(name = "score")]
fn py_score(logits: Vec<f32>, anchors: &PyResolvedAnchors) -> PyResult<f64> {
    Ok(vallens::metric::score(&logits, &anchors.inner).map_err(value_err)?.score)
}

#[pyfunction(name = "render_and_tokenize")]
#[pyo3(signature = (bundle, user_text, system_prompt=None))]
fn py_render_and_tokenize(
    bundle: &PyModelBundle,
    user_text: &str,
    system_prompt: Option<String>,
) -> PyResult<Vec<u32>> {
    let template = match system_prompt {
        Some(system) => ChatTemplate::new(bundle.inner.chat_template_id(), system),
        None => experiment_template(&bundle.inner),
    };
    render_and_tokenize(&bundle.inner, &template, user_text).map_err(value_err)
}

#[pyfunction(name = "pad_pair")]
fn py_pad_pair(
    py: Python<'_>,
    clean: Vec<u32>,
    corrupted: Vec<u32>,
    pad_id: u32,
) -> PyResult<Py<PyDict>> {
    let pair = pad_pair(&clean, &corrupted, pad_id).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("clean_tokens", pair.clean_tokens)?;
    out.set_item("corrupted_tokens", pair.corrupted_tokens)?;
    out.set_item("clean_mask", pair.clean_mask)?;
    out.set_item("corrupted_mask", pair.corrupted_mask)?;
    out.set_item("shared_prefix_len", pair.shared_prefix_len)?;
    Ok(out.into())
}

#[pyfunction(name = "patch_sweep")]
#[pyo3(signature = (bundle, clean_text, corrupted_text, anchors, pair_id=0, condition="good_news", domain="academia"))]
#[allow(clippy::too_many_arguments)]
fn py_patch_sweep(
    py: Python<'_>,
    bundle: &PyModelBundle,
    clean_text: &str,
    corrupted_text: &str,
    anchors: &PyResolvedAnchors,
    pair_id: u32,
    condition: &str,
    domain: &str,
) -> PyResult<Py<PyDict>> {
    let template = experiment_template(&bundle.inner);
    let pair =
        tokenize_pair(&bundle.inner, &template, clean_text, corrupted_text).map_err(value_err)?;
    let meta = PairMeta {
        pair_id,
        condition: parse_condition(condition)?,
        domain: domain.parse::<Domain>().map_err(value_err)?,
    };
    let result = patch_sweep(&bundle.inner, &pair, &anchors.inner, meta).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("pair_id", result.pair_id)?;
    out.set_item("condition", result.condition.as_str())?;
    out.set_item("clean_score", result.clean_score)?;
    out.set_item("corrupted_score", result.corrupted_score)?;
    out.set_item("gap", result.gap)?;
    out.set_item("per_layer_effect", result.per_layer_effect)?;
    out.set_item("top_layer", result.top_layer)?;
    out.set_item("max_patch_effect", result.max_patch_effect)?;
    Ok(out.into())
}

#[pyfunction(name = "patch_heatmap")]
#[pyo3(signature = (bundle, clean_text, corrupted_text, anchors, pair_id=0, condition="good_news", domain="academia"))]
#[allow(clippy::too_many_arguments)]
fn py_patch_heatmap(
    py: Python<'_>,
    bundle: &PyModelBundle,
    clean_text: &str,
    corrupted_text: &str,
    anchors: &PyResolvedAnchors,
    pair_id: u32,
    condition: &str,
    domain: &str,
) -> PyResult<Py<PyDict>> {
    let template = experiment_template(&bundle.inner);
    let pair =
        tokenize_pair(&bundle.inner, &template, clean_text, corrupted_text).map_err(value_err)?;
    let meta = PairMeta {
        pair_id,
        condition: parse_condition(condition)?,
        domain: domain.parse::<Domain>().map_err(value_err)?,
    };
    let result = patch_heatmap(&bundle.inner, &pair, &anchors.inner, meta).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("pair_id", result.pair_id)?;
    out.set_item("effects", result.effects)?;
    out.set_item("token_labels", result.token_labels)?;
    out.set_item("pad_mask", result.pad_mask)?;
    Ok(out.into())
}

#[pyfunction(name = "flip_rate")]
fn py_flip_rate(gaps: Vec<(f64, f64)>) -> PyResult<f64> {
    let records: Vec<flip::FlipRecord> = gaps
        .into_iter()
        .enumerate()
        .map(|(i, (good, neg))| flip::FlipRecord::new(i as u32, good, neg))
        .collect();
    flip::flip_rate(&records).map_err(value_err)
}

#[pyclass(name = "SteeringDirection", skip_from_py_object)]
#[derive(Clone)]
struct PySteeringDirection {
    inner: SteeringDirection,
}

#[pymethods]
impl PySteeringDirection {
    #[getter]
    fn layer(&self) -> usize {
        self.inner.layer
    }

    #[getter]
    fn condition(&self) -> String {
        self.inner.condition.to_string()
    }

    #[getter]
    fn direction(&self) -> Vec<f32> {
        self.inner.direction.clone()
    }

    #[getter]
    fn raw_norm(&self) -> f64 {
        self.inner.raw_norm
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(io_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySteeringDirection { inner: SteeringDirection::load(&path).map_err(io_err)? })
    }
}

#[pyfunction(name = "extract_direction")]
#[pyo3(signature = (bundle, pairs, condition, layer, n_pairs=None, seed=0))]
fn py_extract_direction(
    bundle: &PyModelBundle,
    pairs: Vec<(String, String)>,
    condition: &str,
    layer: usize,
    n_pairs: Option<usize>,
    seed: u64,
) -> PyResult<PySteeringDirection> {
    let condition = parse_condition(condition)?;
    let prompt_pairs: Vec<corpus::PromptPair> = pairs
        .into_iter()
        .enumerate()
        .map(|(i, (clean, corrupted))| corpus::PromptPair {
            id: i as u32,
            condition,
            domain: Domain::Academia,
            clean,
            corrupted,
        })
        .collect();
    let refs: Vec<&corpus::PromptPair> = prompt_pairs.iter().collect();
    let template = experiment_template(&bundle.inner);
    let n = n_pairs.unwrap_or(refs.len());
    let direction = extract_direction(&bundle.inner, &template, &refs, layer, n, seed)
        .map_err(value_err)?;
    Ok(PySteeringDirection { inner: direction })
}

#[pyfunction(name = "steer_and_score")]
fn py_steer_and_score(
    py: Python<'_>,
    bundle: &PyModelBundle,
    neutral_prompt: &str,
    direction: &PySteeringDirection,
    alpha: f64,
    anchors: &PyResolvedAnchors,
) -> PyResult<Py<PyDict>> {
    let template = experiment_template(&bundle.inner);
    let outcome = steer_and_score(
        &bundle.inner,
        &template,
        neutral_prompt,
        0,
        &direction.inner,
        alpha,
        &anchors.inner,
    )
    .map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("alpha", outcome.alpha)?;
    out.set_item("base_score", outcome.base_score)?;
    out.set_item("steered_score", outcome.steered_score)?;
    out.set_item("delta", outcome.delta)?;
    Ok(out.into())
}

#[pyfunction(name = "alpha_sweep")]
fn py_alpha_sweep(
    py: Python<'_>,
    bundle: &PyModelBundle,
    neutral_prompts: Vec<String>,
    direction: &PySteeringDirection,
    alphas: Vec<f64>,
    anchors: &PyResolvedAnchors,
) -> PyResult<Py<PyDict>> {
    let template = experiment_template(&bundle.inner);
    let (outcomes, summary) = alpha_sweep(
        &bundle.inner,
        &template,
        &neutral_prompts,
        &direction.inner,
        &alphas,
        &anchors.inner,
    )
    .map_err(value_err)?;
    let out = PyDict::new(py);
    let grid: Vec<(usize, f64, f64)> =
        outcomes.iter().map(|o| (o.prompt_index, o.alpha, o.delta)).collect();
    out.set_item("outcomes", grid)?;
    let mut per_alpha = BTreeMap::new();
    for stat in &summary.per_alpha {
        per_alpha.insert(
            format!("{}", stat.alpha),
            (stat.mean_delta, stat.pct_shifted_positive, stat.pct_shifted_negative),
        );
    }
    out.set_item("per_alpha", per_alpha)?;
    out.set_item("spearman_rho", summary.spearman_alpha_delta.rho)?;
    out.set_item("spearman_p", summary.spearman_alpha_delta.p_value)?;
    Ok(out.into())
}

#[pyfunction(name = "mann_whitney_one_sided")]
fn py_mann_whitney(py: Python<'_>, a: Vec<f64>, b: Vec<f64>) -> PyResult<Py<PyDict>> {
    let r = stats::mann_whitney_one_sided(&a, &b).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("u_statistic", r.u_statistic)?;
    out.set_item("p_value", r.p_value)?;
    out.set_item("exact", r.exact)?;
    out.set_item("tie_corrected", r.tie_corrected)?;
    out.set_item("degenerate", r.degenerate)?;
    Ok(out.into())
}

#[pyfunction(name = "spearman")]
fn py_spearman(py: Python<'_>, xs: Vec<f64>, ys: Vec<f64>) -> PyResult<Py<PyDict>> {
    let r = stats::spearman(&xs, &ys).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("rho", r.rho)?;
    out.set_item("p_value", r.p_value)?;
    out.set_item("degenerate", r.degenerate)?;
    Ok(out.into())
}

#[pyfunction(name = "load_corpus")]
fn py_load_corpus(py: Python<'_>, path: PathBuf) -> PyResult<Py<PyDict>> {
    let corpus = corpus::load_corpus(&path).map_err(value_err)?;
    let pairs: Vec<Py<PyDict>> = corpus
        .pairs
        .iter()
        .map(|p| {
            let d = PyDict::new(py);
            d.set_item("id", p.id)?;
            d.set_item("condition", p.condition.as_str())?;
            d.set_item("domain", p.domain.as_str())?;
            d.set_item("clean", &p.clean)?;
            d.set_item("corrupted", &p.corrupted)?;
            Ok(d.into())
        })
        .collect::<PyResult<_>>()?;
    let out = PyDict::new(py);
    out.set_item("pairs", pairs)?;
    out.set_item("neutral_prompts", corpus.neutral_prompts)?;
    Ok(out.into())
}

#[pymodule]
fn vallens_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelBundle>()?;
    m.add_class::<PyResolvedAnchors>()?;
    m.add_class::<PySteeringDirection>()?;
    m.add_function(wrap_pyfunction!(py_make_toy_model, m)?)?;
    m.add_function(wrap_pyfunction!(py_load_model, m)?)?;
    m.add_function(wrap_pyfunction!(py_builtin_anchor_words, m)?)?;
    m.add_function(wrap_pyfunction!(py_resolve_anchors, m)?)?;
    m.add_function(wrap_pyfunction!(py_score, m)?)?;
    m.add_function(wrap_pyfunction!(py_render_and_tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(py_pad_pair, m)?)?;
    m.add_function(wrap_pyfunction!(py_patch_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(py_patch_heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(py_flip_rate, m)?)?;
    m.add_function(wrap_pyfunction!(py_extract_direction, m)?)?;
    m.add_function(wrap_pyfunction!(py_steer_and_score, m)?)?;
    m.add_function(wrap_pyfunction!(py_alpha_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(py_mann_whitney, m)?)?;
    m.add_function(wrap_pyfunction!(py_spearman, m)?)?;
    m.add_function(wrap_pyfunction!(py_load_corpus, m)?)?;
    Ok(())
}

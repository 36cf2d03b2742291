//! JSON input and output.
//!
//! Parsing is strict: required fields must be present with the right JSON
//! type, numbers must be finite, and unknown shapes are reported with the
//! offending field named. Emission is canonical: object keys are sorted,
//! and floats use the shortest decimal that round-trips, so equal data
//! always serializes to identical bytes.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde_json::{Map, Number, Value};

use crate::decomposition::{DecompositionMatch, ErgodicDecomposition};
use crate::error::{Error, Result};
use crate::form::{DirichletForm, EdgeFormSpec, FormDiagnostics};
use crate::intertwine::{DecomposedIntertwiner, IntertwineReport};
use crate::orderiso::{factorize, OrderIso};
use crate::space::StateSpace;

/// Parses a JSON document.
pub fn parse_value(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// Serializes a value canonically; `pretty` switches to indented output.
/// Both modes end without a trailing newline.
pub fn to_canonical_string(v: &Value, pretty: bool) -> String {
    if pretty {
        serde_json::to_string_pretty(v).expect("serializing a Value cannot fail")
    } else {
        serde_json::to_string(v).expect("serializing a Value cannot fail")
    }
}

fn num(x: f64) -> Value {
    Value::Number(Number::from_f64(x).expect("emitted numbers are finite"))
}

fn as_object<'a>(v: &'a Value, what: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::Parse(format!("{what} must be a JSON object")))
}

fn get<'a>(obj: &'a Map<String, Value>, key: &str, what: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::Parse(format!("{what} is missing the field {key:?}")))
}

fn as_array<'a>(v: &'a Value, what: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| Error::Parse(format!("{what} must be a JSON array")))
}

fn as_finite(v: &Value, what: &str) -> Result<f64> {
    let x = v
        .as_f64()
        .ok_or_else(|| Error::Parse(format!("{what} must be a number")))?;
    if !x.is_finite() {
        return Err(Error::Parse(format!("{what} must be finite")));
    }
    Ok(x)
}

fn as_str<'a>(v: &'a Value, what: &str) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| Error::Parse(format!("{what} must be a string")))
}

/// Parses `{"ids": [...], "weights": [...]}`.
pub fn parse_space(v: &Value) -> Result<Arc<StateSpace>> {
    let obj = as_object(v, "a state space")?;
    let ids = as_array(get(obj, "ids", "a state space")?, "\"ids\"")?
        .iter()
        .map(|x| as_str(x, "every id").map(str::to_string))
        .collect::<Result<Vec<_>>>()?;
    let weights = as_array(get(obj, "weights", "a state space")?, "\"weights\"")?
        .iter()
        .map(|x| as_finite(x, "every weight"))
        .collect::<Result<Vec<_>>>()?;
    Ok(Arc::new(StateSpace::new(ids, weights)?))
}

/// Emits a space as `{"ids": [...], "weights": [...]}`.
pub fn space_to_value(space: &StateSpace) -> Value {
    let mut obj = Map::new();
    obj.insert(
        "ids".into(),
        Value::Array(space.ids().iter().map(|s| Value::String(s.clone())).collect()),
    );
    obj.insert(
        "weights".into(),
        Value::Array(space.weights().iter().map(|&w| num(w)).collect()),
    );
    Value::Object(obj)
}

fn parse_matrix(v: &Value, n: usize, what: &str) -> Result<DMatrix<f64>> {
    let rows = as_array(v, what)?;
    if rows.len() != n {
        return Err(Error::Parse(format!(
            "{what} has {} rows for a space of {n} points",
            rows.len()
        )));
    }
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        let entries = as_array(row, "every matrix row")?;
        if entries.len() != n {
            return Err(Error::Parse(format!(
                "{what} row {i} has {} entries for a space of {n} points",
                entries.len()
            )));
        }
        for (j, e) in entries.iter().enumerate() {
            m[(i, j)] = as_finite(e, "every matrix entry")?;
        }
    }
    Ok(m)
}

fn matrix_to_value(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| num(m[(i, j)])).collect()))
            .collect(),
    )
}

/// Parses a form, either raw (`{"space", "matrix"}`) or as an edge
/// specification (`{"space", "edges", "killing"?}`).
pub fn parse_form(v: &Value) -> Result<DirichletForm> {
    let obj = as_object(v, "a form")?;
    let space = parse_space(get(obj, "space", "a form")?)?;
    match (obj.get("matrix"), obj.get("edges")) {
        (Some(_), Some(_)) => Err(Error::Parse(
            "a form takes either \"matrix\" or \"edges\", not both".into(),
        )),
        (Some(m), None) => {
            let matrix = parse_matrix(m, space.len(), "\"matrix\"")?;
            DirichletForm::new(space, matrix)
        }
        (None, Some(_)) => Ok(crate::form::build_form(&parse_edge_spec_inner(
            obj, space,
        )?)),
        (None, None) => Err(Error::Parse(
            "a form needs either a \"matrix\" or an \"edges\" list".into(),
        )),
    }
}

/// Parses `{"space", "edges": [[id, id, w], ...], "killing"?: {id: rate}}`.
pub fn parse_edge_spec(v: &Value) -> Result<EdgeFormSpec> {
    let obj = as_object(v, "an edge specification")?;
    let space = parse_space(get(obj, "space", "an edge specification")?)?;
    parse_edge_spec_inner(obj, space)
}

fn parse_edge_spec_inner(
    obj: &Map<String, Value>,
    space: Arc<StateSpace>,
) -> Result<EdgeFormSpec> {
    let edges_v = as_array(get(obj, "edges", "an edge specification")?, "\"edges\"")?;
    let mut edges = Vec::with_capacity(edges_v.len());
    for e in edges_v {
        let triple = as_array(e, "every edge")?;
        if triple.len() != 3 {
            return Err(Error::Parse(
                "every edge must be a triple [id, id, weight]".into(),
            ));
        }
        let x = space.require(as_str(&triple[0], "every edge endpoint")?)?;
        let y = space.require(as_str(&triple[1], "every edge endpoint")?)?;
        let w = as_finite(&triple[2], "every edge weight")?;
        edges.push((x, y, w));
    }
    let mut killing = vec![0.0; space.len()];
    if let Some(kv) = obj.get("killing") {
        let map = as_object(kv, "\"killing\"")?;
        for (id, rate) in map {
            let i = space.require(id)?;
            killing[i] = as_finite(rate, "every killing rate")?;
        }
    }
    EdgeFormSpec::from_indices(space, edges, killing)
}

/// Emits a form as raw data: `{"matrix": [[...]], "space": {...}}`.
pub fn form_to_value(form: &DirichletForm) -> Value {
    let mut obj = Map::new();
    obj.insert("matrix".into(), matrix_to_value(form.matrix()));
    obj.insert("space".into(), space_to_value(form.space()));
    Value::Object(obj)
}

/// Emits a decomposition as
/// `{"components": [form...], "labels": {id: z}, "nu": [...]}`.
pub fn decomposition_to_value(dec: &ErgodicDecomposition) -> Value {
    let mut obj = Map::new();
    obj.insert(
        "components".into(),
        Value::Array(dec.components().iter().map(form_to_value).collect()),
    );
    let mut labels = Map::new();
    for (i, id) in dec.space().ids().iter().enumerate() {
        labels.insert(id.clone(), Value::Number(Number::from(dec.labels()[i] as u64)));
    }
    obj.insert("labels".into(), Value::Object(labels));
    obj.insert(
        "nu".into(),
        Value::Array(dec.nu().iter().map(|&v| num(v)).collect()),
    );
    Value::Object(obj)
}

/// Parses a decomposition. The ambient point order is taken from
/// `ambient_order` when given (it must carry exactly the labeled ids), and
/// otherwise from the concatenation of the component spaces. Ambient
/// weights are the implied ones, `ν(ζ) μ_ζ`.
pub fn parse_decomposition(
    v: &Value,
    ambient_order: Option<&[String]>,
) -> Result<ErgodicDecomposition> {
    let obj = as_object(v, "a decomposition")?;
    let components = as_array(get(obj, "components", "a decomposition")?, "\"components\"")?
        .iter()
        .map(parse_form)
        .collect::<Result<Vec<_>>>()?;
    let nu = as_array(get(obj, "nu", "a decomposition")?, "\"nu\"")?
        .iter()
        .map(|x| as_finite(x, "every component weight"))
        .collect::<Result<Vec<_>>>()?;
    let labels_obj = as_object(get(obj, "labels", "a decomposition")?, "\"labels\"")?;

    let ids: Vec<String> = match ambient_order {
        Some(order) => order.to_vec(),
        None => components
            .iter()
            .flat_map(|c| c.space().ids().iter().cloned())
            .collect(),
    };
    if ids.len() != labels_obj.len() {
        return Err(Error::Parse(format!(
            "\"labels\" lists {} points but the ambient space has {}",
            labels_obj.len(),
            ids.len()
        )));
    }
    let mut labels = Vec::with_capacity(ids.len());
    for id in &ids {
        let lv = labels_obj.get(id).ok_or_else(|| {
            Error::Parse(format!("\"labels\" is missing the point {id:?}"))
        })?;
        let z = lv.as_u64().ok_or_else(|| {
            Error::Parse(format!("label of point {id:?} must be a nonnegative integer"))
        })?;
        labels.push(z as usize);
    }

    // Implied ambient weights nu * mu_z, found through each component.
    let k = components.len();
    let mut weights = Vec::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        let z = labels[i];
        if z >= k {
            return Err(Error::Input(format!(
                "label {z} at point {id:?} exceeds the component count {k}"
            )));
        }
        let comp_space = components[z].space();
        let local = comp_space.index_of(id).ok_or_else(|| {
            Error::Input(format!(
                "point {id:?} is labeled {z} but component {z} does not carry it"
            ))
        })?;
        weights.push(nu[z] * comp_space.weight(local));
    }
    let space = Arc::new(StateSpace::new(ids, weights)?);
    ErgodicDecomposition::from_parts(space, labels, nu, components)
}

/// Emits an isomorphism as `{"h": {id: scale}, "tau": {id: id}}`, keyed by
/// codomain points.
pub fn iso_to_value(iso: &OrderIso) -> Value {
    let mut h = Map::new();
    let mut tau = Map::new();
    for (y, id) in iso.codomain().ids().iter().enumerate() {
        h.insert(id.clone(), num(iso.h()[y]));
        tau.insert(
            id.clone(),
            Value::String(iso.domain().id(iso.tau()[y]).to_string()),
        );
    }
    let mut obj = Map::new();
    obj.insert("h".into(), Value::Object(h));
    obj.insert("tau".into(), Value::Object(tau));
    Value::Object(obj)
}

/// Parses an isomorphism between the given spaces, either as maps
/// (`{"h": {...}, "tau": {...}}`) or as a matrix to factorize
/// (`{"matrix": [[...]]}`).
pub fn parse_iso(
    v: &Value,
    domain: &Arc<StateSpace>,
    codomain: &Arc<StateSpace>,
) -> Result<OrderIso> {
    let obj = as_object(v, "an order isomorphism")?;
    if let Some(mv) = obj.get("matrix") {
        let m = parse_matrix(mv, codomain.len(), "\"matrix\"")?;
        return factorize(&m, domain, codomain);
    }
    let h_obj = as_object(get(obj, "h", "an order isomorphism")?, "\"h\"")?;
    let tau_obj = as_object(get(obj, "tau", "an order isomorphism")?, "\"tau\"")?;
    let mut h_pairs = Vec::with_capacity(h_obj.len());
    for (id, x) in h_obj {
        h_pairs.push((id.as_str(), as_finite(x, "every scale value")?));
    }
    let mut tau_pairs = Vec::with_capacity(tau_obj.len());
    for (id, x) in tau_obj {
        tau_pairs.push((id.as_str(), as_str(x, "every map target")?));
    }
    OrderIso::from_maps(
        Arc::clone(domain),
        Arc::clone(codomain),
        &h_pairs,
        &tau_pairs,
    )
}

/// Emits validation diagnostics.
pub fn diagnostics_to_value(d: &FormDiagnostics) -> Value {
    let mut obj = Map::new();
    obj.insert("contraction_defect".into(), num(d.contraction_defect));
    obj.insert("min_eigenvalue".into(), num(d.min_eigenvalue));
    obj.insert("offdiag_violation".into(), num(d.offdiag_violation));
    obj.insert("pass".into(), Value::Bool(d.pass));
    obj.insert("row_sum_violation".into(), num(d.row_sum_violation));
    obj.insert("symmetry_defect".into(), num(d.symmetry_defect));
    obj.insert("tol".into(), num(d.tol));
    obj.insert(
        "worst_entry".into(),
        match &d.worst_entry {
            Some((x, y)) => Value::Array(vec![
                Value::String(x.clone()),
                Value::String(y.clone()),
            ]),
            None => Value::Null,
        },
    );
    obj.insert(
        "worst_row".into(),
        match &d.worst_row {
            Some(x) => Value::String(x.clone()),
            None => Value::Null,
        },
    );
    Value::Object(obj)
}

fn defects_to_value(defects: &[(f64, f64)]) -> Value {
    Value::Array(
        defects
            .iter()
            .map(|&(t, d)| {
                let mut e = Map::new();
                e.insert("defect".into(), num(d));
                e.insert("t".into(), num(t));
                Value::Object(e)
            })
            .collect(),
    )
}

/// Emits an intertwining report.
pub fn intertwine_report_to_value(r: &IntertwineReport) -> Value {
    let mut obj = Map::new();
    obj.insert(
        "energy_defect".into(),
        match r.energy_defect {
            Some(d) => num(d),
            None => Value::Null,
        },
    );
    obj.insert("generator_defect".into(), num(r.generator_defect));
    obj.insert("pass".into(), Value::Bool(r.pass));
    obj.insert("semigroup_defects".into(), defects_to_value(&r.semigroup_defects));
    obj.insert("tol".into(), num(r.tol));
    obj.insert("unitary".into(), Value::Bool(r.unitary));
    obj.insert("unitary_defect".into(), num(r.unitary_defect));
    Value::Object(obj)
}

/// Emits a decomposition match as
/// `{"h": [...], "rho": {"z": z'}, "scaling_defect", "tol"}`.
pub fn match_to_value(m: &DecompositionMatch) -> Value {
    let mut obj = Map::new();
    obj.insert("h".into(), Value::Array(m.h.iter().map(|&v| num(v)).collect()));
    let mut rho = Map::new();
    for (z, &z2) in m.rho.iter().enumerate() {
        rho.insert(z.to_string(), Value::Number(Number::from(z2 as u64)));
    }
    obj.insert("rho".into(), Value::Object(rho));
    obj.insert("scaling_defect".into(), num(m.scaling_defect));
    obj.insert("tol".into(), num(m.tol));
    Value::Object(obj)
}

/// Emits a decomposed intertwiner as
/// `{"components": [{"E2", "U", "mu2"}...], "report", "rho"}`.
pub fn decomposed_intertwiner_to_value(di: &DecomposedIntertwiner) -> Value {
    let mut obj = Map::new();
    obj.insert(
        "components".into(),
        Value::Array(
            di.components()
                .iter()
                .map(|part| {
                    let mut c = Map::new();
                    c.insert("E2".into(), form_to_value(part.form()));
                    c.insert("U".into(), iso_to_value(part.iso()));
                    c.insert("mu2".into(), space_to_value(part.mu2()));
                    Value::Object(c)
                })
                .collect(),
        ),
    );
    obj.insert(
        "report".into(),
        intertwine_report_to_value(di.report()),
    );
    let mut rho = Map::new();
    for (z, &z2) in di.rho().iter().enumerate() {
        rho.insert(z.to_string(), Value::Number(Number::from(z2 as u64)));
    }
    obj.insert("rho".into(), Value::Object(rho));
    Value::Object(obj)
}

/// Emits an invariance report.
pub fn invariance_to_value(r: &crate::decomposition::InvarianceReport) -> Value {
    let mut obj = Map::new();
    obj.insert("energy_defect".into(), num(r.energy_defect));
    obj.insert("generator_defect".into(), num(r.generator_defect));
    obj.insert("invariant".into(), Value::Bool(r.invariant));
    obj.insert("semigroup_defects".into(), defects_to_value(&r.semigroup_defects));
    obj.insert(
        "subset".into(),
        Value::Array(r.subset.iter().map(|s| Value::String(s.clone())).collect()),
    );
    obj.insert("tol".into(), num(r.tol));
    Value::Object(obj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{ergodic_decompose, match_decompositions, NuMode};
    use crate::form::build_form;
    use crate::oracle::generate_planted;

    fn sample_form_value() -> Value {
        parse_value(
            r#"{
                "space": {"ids": ["a", "b", "c", "d"], "weights": [1.0, 2.0, 0.5, 1.0]},
                "edges": [["a", "b", 1.5], ["c", "d", 0.5]],
                "killing": {"b": 0.25}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn form_round_trip() {
        let form = parse_form(&sample_form_value()).unwrap();
        let emitted = form_to_value(&form);
        let reparsed = parse_form(&emitted).unwrap();
        assert_eq!(form.matrix(), reparsed.matrix());
        assert_eq!(form.space().ids(), reparsed.space().ids());
        assert_eq!(form.space().weights(), reparsed.space().weights());
    }

    #[test]
    fn canonical_output_is_stable() {
        let form = parse_form(&sample_form_value()).unwrap();
        let a = to_canonical_string(&form_to_value(&form), false);
        let b = to_canonical_string(&form_to_value(&form), false);
        assert_eq!(a, b);
        let reparsed = parse_form(&parse_value(&a).unwrap()).unwrap();
        let c = to_canonical_string(&form_to_value(&reparsed), false);
        assert_eq!(a, c, "round-tripping must preserve bytes");
    }

    #[test]
    fn decomposition_round_trip() {
        let form = parse_form(&sample_form_value()).unwrap();
        let dec = ergodic_decompose(&form, NuMode::Mass, 1e-9).unwrap();
        let v = decomposition_to_value(&dec);
        let with_order = parse_decomposition(&v, Some(form.space().ids())).unwrap();
        assert_eq!(with_order.labels(), dec.labels());
        assert_eq!(with_order.nu(), dec.nu());
        let concat_order = parse_decomposition(&v, None).unwrap();
        // Same components either way; ambient order may differ.
        assert_eq!(concat_order.len(), dec.len());
        let m = match_decompositions(&dec, &with_order, 1e-9).unwrap();
        assert_eq!(m.rho, vec![0, 1]);
    }

    #[test]
    fn iso_round_trips_both_encodings() {
        let planted = generate_planted(&[2, 2], 5).unwrap();
        let v = iso_to_value(&planted.iso);
        let reparsed = parse_iso(
            &v,
            planted.iso.domain(),
            planted.iso.codomain(),
        )
        .unwrap();
        assert_eq!(reparsed.h(), planted.iso.h());
        assert_eq!(reparsed.tau(), planted.iso.tau());

        let mut obj = Map::new();
        obj.insert("matrix".into(), matrix_to_value(&planted.iso.matrix()));
        let from_matrix = parse_iso(
            &Value::Object(obj),
            planted.iso.domain(),
            planted.iso.codomain(),
        )
        .unwrap();
        assert_eq!(from_matrix.h(), planted.iso.h());
        assert_eq!(from_matrix.tau(), planted.iso.tau());
    }

    #[test]
    fn parse_errors_name_fields() {
        let err = parse_space(&parse_value(r#"{"ids": ["a"]}"#).unwrap()).unwrap_err();
        assert!(err.to_string().contains("weights"), "{err}");
        let err = parse_form(&parse_value(r#"{"space": {"ids": ["a"], "weights": [1.0]}}"#).unwrap())
            .unwrap_err();
        assert!(err.to_string().contains("matrix"), "{err}");
        let bad = r#"{"space": {"ids": ["a"], "weights": [1.0]}, "matrix": [[1.0], [2.0]]}"#;
        let err = parse_form(&parse_value(bad).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Parse(_)), "{err}");
        assert!(parse_value("not json").is_err());
    }

    #[test]
    fn floats_round_trip_bitwise() {
        let w = 1.0 / 3.0;
        let space = Arc::new(
            StateSpace::new(vec!["a".into(), "b".into()], vec![w, 0.1 + 0.2]).unwrap(),
        );
        let form = build_form(
            &crate::form::EdgeFormSpec::new(Arc::clone(&space), &[("a", "b", w)], &[]).unwrap(),
        );
        let text = to_canonical_string(&form_to_value(&form), false);
        let reparsed = parse_form(&parse_value(&text).unwrap()).unwrap();
        assert_eq!(reparsed.space().weights(), space.weights());
        assert_eq!(reparsed.matrix(), form.matrix());
    }
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dense, PolicyModel, PolicyParameters, StateLayout, ValueParameters};
use crate::error::{Error, Result};
use crate::gallery::write_atomic;

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct PolicyDoc {
    W1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    W2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    W3: Vec<Vec<f64>>,
    b3: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct ValueDoc {
    W1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    W2: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    d_state: usize,
    hidden: usize,
    vocab_size: usize,
    #[serde(default)]
    state_layout: StateLayout,
    policy: PolicyDoc,
    value: ValueDoc,
}

fn rows(layer: &Dense) -> Vec<Vec<f64>> {
    layer.weight.chunks(layer.outputs.max(1)).map(<[f64]>::to_vec).collect()
}

fn dense(name: &str, w: Vec<Vec<f64>>, b: Vec<f64>, inputs: usize, outputs: usize) -> Result<Dense> {
    if w.len() != inputs || w.iter().any(|r| r.len() != outputs) || b.len() != outputs {
        return Err(Error::ShapeMismatch(format!("{name} is not {inputs}x{outputs}")));
    }
    let weight: Vec<f64> = w.into_iter().flatten().collect();
    if weight.iter().chain(&b).any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteParameters("policy file"));
    }
    Ok(Dense { inputs, outputs, weight, bias: b })
}

pub fn policy_to_json(model: &PolicyModel) -> String {
    let p = &model.policy;
    let v = &model.value;
    let doc = ModelDoc {
        d_state: p.d_state(),
        hidden: p.hidden(),
        vocab_size: p.vocab_size(),
        state_layout: model.layout,
        policy: PolicyDoc {
            W1: rows(&p.l1),
            b1: p.l1.bias.clone(),
            W2: rows(&p.l2),
            b2: p.l2.bias.clone(),
            W3: rows(&p.l3),
            b3: p.l3.bias.clone(),
        },
        value: ValueDoc { W1: rows(&v.l1), b1: v.l1.bias.clone(), W2: rows(&v.l2), b2: v.l2.bias.clone() },
    };
    serde_json::to_string(&doc).expect("policy serialization cannot fail")
}

pub fn parse_policy(text: &str) -> Result<PolicyModel> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let (d, h, v) = (doc.d_state, doc.hidden, doc.vocab_size);
    let policy = PolicyParameters {
        l1: dense("policy.W1", doc.policy.W1, doc.policy.b1, d, h)?,
        l2: dense("policy.W2", doc.policy.W2, doc.policy.b2, h, h)?,
        l3: dense("policy.W3", doc.policy.W3, doc.policy.b3, h, v)?,
    };
    let value = ValueParameters {
        l1: dense("value.W1", doc.value.W1, doc.value.b1, d, h)?,
        l2: dense("value.W2", doc.value.W2, doc.value.b2, h, 1)?,
    };
    Ok(PolicyModel { layout: doc.state_layout, policy, value })
}

pub fn save_policy(model: &PolicyModel, path: impl AsRef<Path>) -> Result<()> {
    let text = policy_to_json(model);
    write_atomic(path.as_ref(), |w| std::io::Write::write_all(w, text.as_bytes()))
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<PolicyModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
    parse_policy(&text)
}

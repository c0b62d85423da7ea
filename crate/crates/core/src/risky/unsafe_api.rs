use std::collections::BTreeSet;

use serde::Serialize;

use crate::ir::{ArithOp, Op, Program};

use super::facts::Facts;
use super::PointerRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnsafeApi {
    SetLen,
    Unchecked(ArithOp),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnsafeApiSite {
    pub function: String,
    pub index: usize,
    pub api: UnsafeApi,
    /// The container whose bookkeeping the call rewrites; arithmetic has none.
    pub pointer: Option<PointerRef>,
}

pub fn find_unsafe_api_sites(p: &Program, reachable: &BTreeSet<String>) -> Vec<UnsafeApiSite> {
    let facts = Facts::build(p, reachable);
    let mut out = Vec::new();
    for &fi in &facts.funcs {
        let f = facts.func(fi);
        for (index, instr) in f.body.iter().enumerate() {
            let (api, pointer) = match &instr.op {
                Op::SetLen { vec, .. } => {
                    (UnsafeApi::SetLen, facts.value_id(fi, vec).map(|v| facts.pointer_ref(v)))
                }
                Op::Unchecked { op, .. } => (UnsafeApi::Unchecked(*op), None),
                _ => continue,
            };
            out.push(UnsafeApiSite { function: f.name.clone(), index, api, pointer });
        }
    }
    out
}

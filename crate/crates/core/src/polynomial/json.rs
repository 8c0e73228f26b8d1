//! JSON form of polynomials: a list of `{"coeff": c, "exps": {"e1": 2, ...}}`
//! records in graded lexicographic order.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::monomial::Monomial;
use super::poly::Polynomial;
use super::var::Var;
use super::vector::{PolyMat, PolyVec};

#[derive(Serialize, Deserialize)]
struct TermRecord {
    coeff: f64,
    exps: BTreeMap<String, u16>,
}

impl Serialize for Polynomial {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let records: Vec<TermRecord> = self
            .terms()
            .iter()
            .map(|(m, c)| TermRecord {
                coeff: *c,
                exps: m.factors().iter().map(|&(v, e)| (v.name(), e)).collect(),
            })
            .collect();
        records.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let records = Vec::<TermRecord>::deserialize(d)?;
        let mut terms = Vec::with_capacity(records.len());
        for r in records {
            let mut factors = Vec::with_capacity(r.exps.len());
            for (name, e) in r.exps {
                let v = Var::parse(&name).map_err(D::Error::custom)?;
                factors.push((v, e));
            }
            terms.push((Monomial::from_factors(factors), r.coeff));
        }
        Ok(Polynomial::from_terms(terms))
    }
}

impl Serialize for PolyVec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.entries().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PolyVec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(PolyVec::new(Vec::<Polynomial>::deserialize(d)?))
    }
}

impl Serialize for PolyMat {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<&Polynomial>> = (0..self.rows())
            .map(|i| (0..self.cols()).map(|j| &self[(i, j)]).collect())
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PolyMat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<Polynomial>>::deserialize(d)?;
        PolyMat::from_rows(rows).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polynomial::var::Block;
    use proptest::prelude::*;

    fn arb_poly() -> impl Strategy<Value = Polynomial> {
        let term = (
            prop::sample::select(vec!["e1", "e4", "xh2", "uh1", "th1", "x3", "d1"]),
            0u16..4,
            prop::sample::select(vec!["e2", "th2", "x1"]),
            0u16..3,
            -1e3f64..1e3,
        );
        prop::collection::vec(term, 0..12).prop_map(|ts| {
            Polynomial::from_terms(ts.into_iter().map(|(a, ea, b, eb, c)| {
                (
                    Monomial::from_factors([
                        (Var::parse(a).unwrap(), ea),
                        (Var::parse(b).unwrap(), eb),
                    ]),
                    c,
                )
            }))
        })
    }

    proptest! {
        #[test]
        fn json_round_trip_preserves_coefficients(p in arb_poly()) {
            let text = serde_json::to_string(&p).unwrap();
            let back: Polynomial = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back.terms(), p.terms());
        }
    }

    #[test]
    fn record_layout() {
        let p = Polynomial::linear(Var::new(Block::Xhat, 0), 0.1) + 2.5;
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(
            v,
            serde_json::json!([
                {"coeff": 2.5, "exps": {}},
                {"coeff": 0.1, "exps": {"xh1": 1}}
            ])
        );
    }
}

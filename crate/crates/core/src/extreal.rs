//! Serialization of extended nonnegative reals: `+inf` is written as the
//! string `"inf"` because JSON has no infinity literal.

use serde::{Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    if value.is_infinite() && value.is_sign_positive() {
        serializer.serialize_str("inf")
    } else {
        serializer.serialize_f64(*value)
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }
    match Repr::deserialize(deserializer)? {
        Repr::Num(v) => Ok(v),
        Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Repr::Str(s) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {s:?}"))),
    }
}

pub mod seq {
    use serde::ser::SerializeSeq;
    use serde::Serializer;

    pub fn serialize<S: Serializer>(values: &[f64], serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(values.len()))?;
        for v in values {
            if v.is_infinite() && v.is_sign_positive() {
                seq.serialize_element("inf")?;
            } else {
                seq.serialize_element(v)?;
            }
        }
        seq.end()
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Wrap {
        #[serde(with = "super")]
        v: f64,
    }

    #[test]
    fn infinity_round_trips_as_string() {
        let text = serde_json::to_string(&Wrap { v: f64::INFINITY }).unwrap();
        assert_eq!(text, r#"{"v":"inf"}"#);
        assert_eq!(serde_json::from_str::<Wrap>(&text).unwrap().v, f64::INFINITY);
        assert_eq!(serde_json::from_str::<Wrap>(r#"{"v":1.5}"#).unwrap().v, 1.5);
    }
}

//! The simulated certificate: `X-Member` and `X-User`, plus optional
//! attributes as a JSON object in `X-Attributes`.

use std::collections::BTreeMap;

use axum::extract::FromRequestParts;
use axum::http::request::Parts;
use chor_core::ledger::Identity;
use chor_core::model::Value;
use chor_core::runtime::Environment;

use crate::error::ApiError;

pub const MEMBER_HEADER: &str = "x-member";
pub const USER_HEADER: &str = "x-user";
pub const ATTRIBUTES_HEADER: &str = "x-attributes";

/// Caller as presented. Without `X-Attributes`, the attributes enrolled for
/// the user in the consortium apply.
#[derive(Debug, Clone, PartialEq)]
pub struct Caller {
    pub membership: String,
    pub user: String,
    pub attributes: Option<BTreeMap<String, Value>>,
}

impl Caller {
    pub fn identity(&self, env: &Environment) -> Identity {
        match &self.attributes {
            Some(attrs) => {
                let mut id = Identity::new(&self.membership, &self.user);
                id.attributes = attrs.clone();
                id
            }
            None => env.identity(&self.membership, &self.user),
        }
    }
}

fn header<'a>(parts: &'a Parts, name: &str) -> Result<Option<&'a str>, ApiError> {
    parts
        .headers
        .get(name)
        .map(|v| v.to_str().map_err(|_| ApiError::bad_request(format!("header `{name}` is not valid text"))))
        .transpose()
}

fn parse_attributes(text: &str) -> Result<BTreeMap<String, Value>, ApiError> {
    let bad = |why: String| ApiError::bad_request(format!("header `{ATTRIBUTES_HEADER}`: {why}"));
    let raw: BTreeMap<String, serde_json::Value> = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    raw.into_iter().map(|(k, v)| Value::from_json(&v).map(|v| (k, v)).map_err(&bad)).collect()
}

impl<S: Send + Sync> FromRequestParts<S> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Caller, ApiError> {
        let missing = |h: &str| ApiError::bad_request(format!("missing identity header `{h}`"));
        let membership = header(parts, MEMBER_HEADER)?.ok_or_else(|| missing(MEMBER_HEADER))?.to_string();
        let user = header(parts, USER_HEADER)?.ok_or_else(|| missing(USER_HEADER))?.to_string();
        let attributes = header(parts, ATTRIBUTES_HEADER)?.map(parse_attributes).transpose()?;
        Ok(Caller { membership, user, attributes })
    }
}

/// Same as [`Caller`], for endpoints where identity is optional.
#[derive(Debug, Clone, PartialEq)]
pub struct MaybeCaller(pub Option<Caller>);

impl<S: Send + Sync> FromRequestParts<S> for MaybeCaller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<MaybeCaller, ApiError> {
        if parts.headers.contains_key(MEMBER_HEADER) || parts.headers.contains_key(USER_HEADER) {
            Caller::from_request_parts(parts, state).await.map(|c| MaybeCaller(Some(c)))
        } else {
            Ok(MaybeCaller(None))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attributes_are_typed_values() {
        let a = parse_attributes(r#"{"yearsOfExperience": 12, "certified": true, "licence": "MD"}"#).unwrap();
        assert_eq!(a["yearsOfExperience"], Value::number(12));
        assert_eq!(a["certified"], Value::Bool(true));
        assert!(parse_attributes(r#"{"nested": {"a": 1}}"#).is_err());
        assert!(parse_attributes("[1]").is_err());
    }
}

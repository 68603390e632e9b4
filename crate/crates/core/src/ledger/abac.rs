use serde::{Deserialize, Serialize};

use super::Identity;
use crate::model::{Expr, ExprError, Value};

/// Who may act for a role: any listed membership, or any identity whose
/// attributes satisfy the predicate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipSelector {
    #[serde(default)]
    pub memberships: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
}

impl MembershipSelector {
    pub fn membership(id: impl Into<String>) -> MembershipSelector {
        MembershipSelector { memberships: vec![id.into()], predicate: None }
    }

    pub fn predicate(expr: impl Into<String>) -> MembershipSelector {
        MembershipSelector { memberships: Vec::new(), predicate: Some(expr.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail")]
pub enum DenyReason {
    NotBound,
    PredicateFailed,
    MissingAttribute(String),
    PredicateError(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessDecision {
    Allow,
    Deny(DenyReason),
}

impl AccessDecision {
    pub fn is_allowed(&self) -> bool {
        matches!(self, AccessDecision::Allow)
    }
}

/// Attribute lookup used by predicates. `membershipId` and `userId` are always
/// present so a predicate can also pin the caller's identity.
pub fn identity_attribute(identity: &Identity, name: &str) -> Option<Value> {
    match name {
        "membershipId" => Some(Value::string(&identity.membership_id)),
        "userId" => Some(Value::string(&identity.user_id)),
        _ => identity.attributes.get(name).cloned(),
    }
}

pub fn abac_check(identity: &Identity, selector: &MembershipSelector) -> AccessDecision {
    if selector.memberships.iter().any(|m| m == &identity.membership_id) {
        return AccessDecision::Allow;
    }
    let Some(text) = &selector.predicate else {
        return AccessDecision::Deny(DenyReason::NotBound);
    };
    let expr = match Expr::parse(text) {
        Ok(e) => e,
        Err(e) => return AccessDecision::Deny(DenyReason::PredicateError(e.to_string())),
    };
    match expr.eval_bool(&|name| identity_attribute(identity, name)) {
        Ok(true) => AccessDecision::Allow,
        Ok(false) => AccessDecision::Deny(DenyReason::PredicateFailed),
        Err(ExprError::UnknownVariable(name)) => AccessDecision::Deny(DenyReason::MissingAttribute(name)),
        Err(e) => AccessDecision::Deny(DenyReason::PredicateError(e.to_string())),
    }
}

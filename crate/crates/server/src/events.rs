//! `GET /envs/{e}/events`: committed ledger events as server-sent events.
//! The stream starts with the events already committed (after `since`, when
//! given), then follows new commits. `topic` keeps one instance's events.

use std::convert::Infallible;

use axum::extract::{Path, Query, State};
use axum::response::sse::{Event, KeepAlive, Sse};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;

use crate::error::ApiError;
use crate::{AppState, Published};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventQuery {
    #[serde(default)]
    topic: Option<String>,
    /// Skip events with an index below this.
    #[serde(default)]
    since: Option<u64>,
}

#[derive(Debug, Clone)]
struct Filter {
    env: String,
    topic: Option<String>,
    since: u64,
}

impl Filter {
    fn keeps(&self, p: &Published) -> bool {
        p.env == self.env && self.topic.as_deref().is_none_or(|t| p.record.event.topic == t) && p.record.index >= self.since
    }
}

fn to_event(p: &Published) -> Event {
    Event::default()
        .id(p.record.index.to_string())
        .event(p.record.event.name.clone())
        .data(serde_json::to_string(p).expect("events serialize"))
}

pub async fn stream(
    State(state): State<AppState>,
    Path(env): Path<String>,
    Query(q): Query<EventQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let filter = Filter { env: env.clone(), topic: q.topic, since: q.since.unwrap_or(0) };
    // Subscribe and snapshot under the lock, so no commit falls in between.
    let (backlog, rx) = {
        let reg = state.lock();
        let hosted = reg.envs.get(&env).ok_or_else(|| ApiError::not_found(format!("unknown environment `{env}`")))?;
        let rx = state.events.subscribe();
        let backlog: Vec<Published> = hosted.env.ledger.events()[..hosted.published]
            .iter()
            .map(|r| Published { env: env.clone(), record: r.clone() })
            .filter(|p| filter.keeps(p))
            .collect();
        (backlog, rx)
    };
    let live = stream::unfold((rx, filter), |(mut rx, filter)| async move {
        loop {
            match rx.recv().await {
                Ok(p) if filter.keeps(&p) => return Some((p, (rx, filter))),
                Ok(_) | Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return None,
            }
        }
    });
    let all = stream::iter(backlog).chain(live).map(|p| Ok(to_event(&p)));
    Ok(Sse::new(all).keep_alive(KeepAlive::default()))
}

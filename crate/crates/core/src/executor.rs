//! Turning call templates into concrete requests and running them in order.
//!
//! Parameters are substituted when the plan is built. Placeholders naming an
//! earlier call's output binding stay symbolic until that call has returned;
//! execution then fills them from the response and moves on. The first failed
//! call halts the plan and nothing after it is sent.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::registry::{ApiCallTemplate, HttpMethod, OutputBinding};
use crate::slots::Binding;
use crate::template;

/// Everything except RFC 3986 unreserved characters gets escaped.
const COMPONENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.').remove(b'~');

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecutorError {
    #[error("call {call_index}: unbound placeholder `{name}`")]
    UnboundPlaceholder { name: String, call_index: usize },
    #[error("call {call_index}: `{name}` is already bound")]
    Rebind { name: String, call_index: usize },
    #[error("call {call_index}: `{url}` is not an absolute URL")]
    InvalidUrl { url: String, call_index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcreteCall {
    pub method: HttpMethod,
    /// May still contain `{name}` placeholders for earlier calls' outputs.
    pub url: String,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
    #[serde(default)]
    pub output_bindings: Vec<OutputBinding>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApiCallPlan {
    pub calls: Vec<ConcreteCall>,
}

impl ApiCallPlan {
    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }
}

fn encode(value: &str) -> String {
    utf8_percent_encode(value, COMPONENT).to_string()
}

fn render(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        // f64 Display prints 15.0 as "15"
        Value::Number(n) if n.is_f64() => n.as_f64().map(|f| f.to_string()).unwrap_or_default(),
        other => other.to_string(),
    }
}

/// Substitute placeholders inside every string of a JSON template. A string
/// that is exactly one placeholder takes the bound value with its JSON type.
fn fill_json<F>(value: &Value, lookup: &F) -> Value
where
    F: Fn(&str) -> Option<Value>,
{
    match value {
        Value::String(s) => {
            if let Some(v) = template::sole_placeholder(s).and_then(lookup) {
                return v;
            }
            Value::String(template::substitute(s, |n| lookup(n).map(|v| render(&v))))
        }
        Value::Array(items) => Value::Array(items.iter().map(|v| fill_json(v, lookup)).collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), fill_json(v, lookup))).collect()),
        other => other.clone(),
    }
}

fn fill_call<F>(
    method: HttpMethod,
    url: &str,
    headers: &BTreeMap<String, String>,
    body: Option<&Value>,
    output_bindings: &[OutputBinding],
    lookup: F,
) -> ConcreteCall
where
    F: Fn(&str) -> Option<Value>,
{
    ConcreteCall {
        method,
        url: template::substitute(url, |n| lookup(n).map(|v| encode(&render(&v)))),
        headers: headers
            .iter()
            .map(|(k, v)| {
                (
                    template::substitute(k, |n| lookup(n).map(|v| render(&v))),
                    template::substitute(v, |n| lookup(n).map(|v| render(&v))),
                )
            })
            .collect(),
        body: body.map(|b| fill_json(b, &lookup)),
        output_bindings: output_bindings.to_vec(),
    }
}

/// Substitute bound parameters into the templates.
pub fn instantiate(templates: &[ApiCallTemplate], bindings: &[Binding]) -> Result<ApiCallPlan, ExecutorError> {
    let params: HashMap<&str, Value> = bindings.iter().map(|b| (b.param.as_str(), b.value.to_json())).collect();
    let mut outputs: HashSet<&str> = HashSet::new();
    let mut calls = Vec::with_capacity(templates.len());

    for (call_index, t) in templates.iter().enumerate() {
        for name in t.placeholder_names() {
            if !params.contains_key(name.as_str()) && !outputs.contains(name.as_str()) {
                return Err(ExecutorError::UnboundPlaceholder { name, call_index });
            }
        }
        let call = fill_call(
            t.method,
            &t.url_template,
            &t.header_templates,
            t.body_template.as_ref(),
            &t.output_bindings,
            |n| params.get(n).cloned(),
        );
        if template::scan(&call.url).is_empty() {
            check_url(&call.url, call_index)?;
        }
        for out in &t.output_bindings {
            if params.contains_key(out.bind_name.as_str()) || !outputs.insert(&out.bind_name) {
                return Err(ExecutorError::Rebind {
                    name: out.bind_name.clone(),
                    call_index,
                });
            }
        }
        calls.push(call);
    }
    Ok(ApiCallPlan { calls })
}

fn check_url(url: &str, call_index: usize) -> Result<url::Url, ExecutorError> {
    match url::Url::parse(url) {
        Ok(u) if u.has_host() => Ok(u),
        _ => Err(ExecutorError::InvalidUrl {
            url: url.to_string(),
            call_index,
        }),
    }
}

/// A fully resolved request as handed to a transport.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub method: HttpMethod,
    pub url: String,
    pub headers: BTreeMap<String, String>,
    pub body: Option<Value>,
}

impl Request {
    pub fn path(&self) -> String {
        url::Url::parse(&self.url)
            .map(|u| u.path().to_string())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub status: u16,
    /// `None` when the body was not JSON.
    pub body: Option<Value>,
}

#[derive(Debug, Error)]
#[error("transport error: {0}")]
pub struct TransportError(pub String);

pub trait Transport: Send + Sync {
    fn send(&self, request: &Request) -> Result<Response, TransportError>;
}

/// Follow a dot path through objects and arrays.
pub fn lookup_path<'a>(body: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(body, |v, seg| match v {
        Value::Object(map) => map.get(seg),
        Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallOutcome {
    pub method: HttpMethod,
    pub url: String,
    pub status_code: Option<u16>,
    pub extracted: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub per_call: Vec<CallOutcome>,
    pub succeeded: bool,
    pub halted_at: Option<usize>,
}

/// Run the plan strictly in order, threading output bindings forward.
pub fn execute(plan: &ApiCallPlan, transport: &dyn Transport) -> ExecutionResult {
    let mut context: BTreeMap<String, Value> = BTreeMap::new();
    let mut per_call = Vec::with_capacity(plan.calls.len());

    for (index, call) in plan.calls.iter().enumerate() {
        let resolved = fill_call(
            call.method,
            &call.url,
            &call.headers,
            call.body.as_ref(),
            &call.output_bindings,
            |n| context.get(n).cloned(),
        );
        let mut outcome = CallOutcome {
            method: call.method,
            url: resolved.url.clone(),
            status_code: None,
            extracted: BTreeMap::new(),
            error: None,
        };

        let failure = match check_url(&resolved.url, index) {
            Err(e) => Some(e.to_string()),
            Ok(_) => {
                let request = Request {
                    method: resolved.method,
                    url: resolved.url,
                    headers: resolved.headers,
                    body: resolved.body,
                };
                match transport.send(&request) {
                    Err(e) => Some(e.to_string()),
                    Ok(resp) => {
                        outcome.status_code = Some(resp.status);
                        if !(200..300).contains(&resp.status) {
                            Some(format!("status {}", resp.status))
                        } else {
                            extract_outputs(&call.output_bindings, resp.body.as_ref(), &mut outcome.extracted)
                        }
                    }
                }
            }
        };

        if let Some(err) = failure {
            outcome.error = Some(err);
            per_call.push(outcome);
            return ExecutionResult {
                per_call,
                succeeded: false,
                halted_at: Some(index),
            };
        }
        context.extend(outcome.extracted.iter().map(|(k, v)| (k.clone(), v.clone())));
        per_call.push(outcome);
    }

    ExecutionResult {
        per_call,
        succeeded: true,
        halted_at: None,
    }
}

fn extract_outputs(
    bindings: &[OutputBinding],
    body: Option<&Value>,
    into: &mut BTreeMap<String, Value>,
) -> Option<String> {
    for b in bindings {
        match body.and_then(|v| lookup_path(v, &b.path)) {
            Some(v) => {
                into.insert(b.bind_name.clone(), v.clone());
            }
            None => return Some(format!("missing path `{}` for `{}`", b.path, b.bind_name)),
        }
    }
    None
}

/// One canned response in a simulator fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRoute {
    pub method: HttpMethod,
    pub path: String,
    #[serde(default = "ok_status")]
    pub status: u16,
    #[serde(default)]
    pub body: Value,
}

fn ok_status() -> u16 {
    200
}

/// Deterministic in-process transport keyed by `(method, path)`. Unknown
/// routes answer 404. Every request is logged.
#[derive(Debug, Default)]
pub struct Simulator {
    routes: HashMap<(HttpMethod, String), (u16, Value)>,
    log: Mutex<Vec<Request>>,
}

impl Simulator {
    pub fn new(routes: impl IntoIterator<Item = SimRoute>) -> Self {
        let mut map = HashMap::new();
        for r in routes {
            map.entry((r.method, r.path)).or_insert((r.status, r.body));
        }
        Self {
            routes: map,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let routes: Vec<SimRoute> = serde_json::from_str(text)?;
        Ok(Self::new(routes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TransportError> {
        let text = std::fs::read_to_string(path).map_err(|e| TransportError(e.to_string()))?;
        Self::from_json(&text).map_err(|e| TransportError(format!("bad simulator fixture: {e}")))
    }

    pub fn requests(&self) -> Vec<Request> {
        self.log.lock().expect("simulator log poisoned").clone()
    }

    pub fn clear_log(&self) {
        self.log.lock().expect("simulator log poisoned").clear();
    }
}

impl Transport for Simulator {
    fn send(&self, request: &Request) -> Result<Response, TransportError> {
        self.log.lock().expect("simulator log poisoned").push(request.clone());
        let key = (request.method, request.path());
        Ok(match self.routes.get(&key) {
            Some((status, body)) => Response {
                status: *status,
                body: Some(body.clone()),
            },
            None => Response {
                status: 404,
                body: Some(serde_json::json!({"error": "no simulated route"})),
            },
        })
    }
}

/// Plain HTTP/1.1 with JSON bodies.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    timeout: Duration,
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(DEFAULT_TIMEOUT)
    }
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        Self { timeout }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &Request) -> Result<Response, TransportError> {
        // Built per call: the blocking client owns a runtime that must not be
        // dropped from async code.
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| TransportError(e.to_string()))?;
        let method = match request.method {
            HttpMethod::Get => reqwest::Method::GET,
            HttpMethod::Post => reqwest::Method::POST,
            HttpMethod::Put => reqwest::Method::PUT,
            HttpMethod::Delete => reqwest::Method::DELETE,
        };
        let mut builder = client.request(method, &request.url);
        for (k, v) in &request.headers {
            builder = builder.header(k, v);
        }
        if let Some(body) = &request.body {
            builder = builder.json(body);
        }
        let resp = builder.send().map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let bytes = resp.bytes().map_err(|e| TransportError(e.to_string()))?;
        Ok(Response {
            status,
            body: serde_json::from_slice(&bytes).ok(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn get(url: &str) -> ApiCallTemplate {
        ApiCallTemplate::new(HttpMethod::Get, url)
    }

    #[test]
    fn spending_template_substitutes_query() {
        let plan = instantiate(
            &[get(
                "http://api.local/finance/spending?category={category}&dates={dates}",
            )],
            &[Binding::text("category", "groceries"), Binding::text("dates", "March")],
        )
        .unwrap();
        assert_eq!(
            plan.calls[0].url,
            "http://api.local/finance/spending?category=groceries&dates=March"
        );
    }

    #[test]
    fn url_values_are_percent_encoded() {
        let plan = instantiate(&[get("http://api.local/s?q={q}")], &[Binding::text("q", "a b")]).unwrap();
        assert_eq!(plan.calls[0].url, "http://api.local/s?q=a%20b");
        let plan = instantiate(&[get("http://api.local/s/{q}")], &[Binding::text("q", "x/y&z")]).unwrap();
        assert_eq!(plan.calls[0].url, "http://api.local/s/x%2Fy%26z");
    }

    #[test]
    fn forward_reference_is_unbound() {
        let templates = [
            get("http://api.local/cart/{cart_id}"),
            get("http://api.local/cart").bind("cart_id", "id"),
        ];
        assert_eq!(
            instantiate(&templates, &[]),
            Err(ExecutorError::UnboundPlaceholder {
                name: "cart_id".into(),
                call_index: 0
            })
        );
    }

    #[test]
    fn rebinding_is_rejected() {
        let templates = [
            get("http://api.local/a").bind("x", "x"),
            get("http://api.local/b").bind("x", "y"),
        ];
        assert!(matches!(
            instantiate(&templates, &[]),
            Err(ExecutorError::Rebind { call_index: 1, .. })
        ));
        let shadow = [get("http://api.local/a").bind("q", "q")];
        assert!(matches!(
            instantiate(&shadow, &[Binding::text("q", "1")]),
            Err(ExecutorError::Rebind { .. })
        ));
    }

    #[test]
    fn output_references_stay_symbolic() {
        let templates = [
            get("http://api.local/stores").bind("store_id", "store_id"),
            get("http://api.local/stores/{store_id}/items"),
        ];
        let plan = instantiate(&templates, &[]).unwrap();
        assert_eq!(plan.calls[1].url, "http://api.local/stores/{store_id}/items");
    }

    #[test]
    fn body_keeps_number_type() {
        let t = ApiCallTemplate::new(HttpMethod::Post, "http://api.local/home/thermostat/adjust")
            .with_body(json!({"threshold": "{t}", "note": "below {t} degrees"}));
        let plan = instantiate(&[t], &[Binding::number("t", 15.0)]).unwrap();
        assert_eq!(
            plan.calls[0].body,
            Some(json!({"threshold": 15.0, "note": "below 15 degrees"}))
        );
    }

    #[test]
    fn chained_plan_threads_outputs() {
        let sim = Simulator::new([
            SimRoute {
                method: HttpMethod::Get,
                path: "/stores".into(),
                status: 200,
                body: json!({"store_id": "s9"}),
            },
            SimRoute {
                method: HttpMethod::Get,
                path: "/stores/s9/items".into(),
                status: 200,
                body: json!({"items": [{"sku": "y1"}]}),
            },
        ]);
        let plan = instantiate(
            &[
                get("http://api.local/stores").bind("store_id", "store_id"),
                get("http://api.local/stores/{store_id}/items").bind("sku", "items.0.sku"),
            ],
            &[],
        )
        .unwrap();
        let result = execute(&plan, &sim);
        assert!(result.succeeded, "{result:?}");
        assert_eq!(sim.requests()[1].url, "http://api.local/stores/s9/items");
        assert_eq!(result.per_call[1].extracted["sku"], json!("y1"));
    }

    #[test]
    fn failure_halts_before_later_calls() {
        let sim = Simulator::new([]);
        let plan = instantiate(
            &[
                get("http://api.local/a"),
                get("http://api.local/b"),
                get("http://api.local/c"),
            ],
            &[],
        )
        .unwrap();
        let result = execute(&plan, &sim);
        assert!(!result.succeeded);
        assert_eq!(result.halted_at, Some(0));
        assert_eq!(result.per_call.len(), 1);
        assert_eq!(result.per_call[0].status_code, Some(404));
        assert_eq!(sim.requests().len(), 1);
    }

    #[test]
    fn missing_path_halts() {
        let sim = Simulator::new([SimRoute {
            method: HttpMethod::Get,
            path: "/a".into(),
            status: 200,
            body: json!({"other": 1}),
        }]);
        let plan = instantiate(
            &[get("http://api.local/a").bind("x", "x.y"), get("http://api.local/b")],
            &[],
        )
        .unwrap();
        let result = execute(&plan, &sim);
        assert_eq!(result.halted_at, Some(0));
        assert!(result.per_call[0].error.as_deref().unwrap().contains("missing path"));
        assert_eq!(sim.requests().len(), 1);
    }

    #[test]
    fn empty_plan_succeeds() {
        let result = execute(&ApiCallPlan::default(), &Simulator::new([]));
        assert!(result.succeeded);
        assert!(result.per_call.is_empty());
        assert_eq!(result.halted_at, None);
    }

    #[test]
    fn lookup_path_walks_arrays() {
        let v = json!({"a": [{"b": 1}, {"b": 2}]});
        assert_eq!(lookup_path(&v, "a.1.b"), Some(&json!(2)));
        assert_eq!(lookup_path(&v, "a.2.b"), None);
        assert_eq!(lookup_path(&json!("text"), "a"), None);
    }

    #[test]
    fn simulator_fixture_parses() {
        let sim = Simulator::from_json(r#"[{"method":"GET","path":"/x","body":{"ok":true}}]"#).unwrap();
        let resp = sim
            .send(&Request {
                method: HttpMethod::Get,
                url: "http://h/x?q=1".into(),
                headers: BTreeMap::new(),
                body: None,
            })
            .unwrap();
        assert_eq!(resp.status, 200);
    }
}

//! Shared helpers for integration tests: independent brute-force oracles,
//! instance generators, and a scripted mock of the model endpoint.
//!
//! Everything here recomputes results from definitions, independent of the
//! library's implementation paths.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;

use demoselect::corpus::{cosine_sim, Corpus, InstanceRecord, Label, Query};
use demoselect::gain::{make_coverage_oracle, CoverageOracle, GainOracle};
use demoselect::graph::SimilarityGraph;

pub fn corpus_of(n: usize) -> Corpus {
    Corpus::new(
        (0..n)
            .map(|i| InstanceRecord {
                id: i.to_string(),
                embedding: vec![i as f64, 1.0],
                label: Label::Int((i % 2) as i64),
                record_text: format!("case {i}"),
            })
            .collect(),
    )
    .unwrap()
}

pub fn dummy_query() -> Query {
    Query {
        id: "q".into(),
        embedding: vec![0.0, 1.0],
        record_text: "query record text".into(),
    }
}

/// Literal double sum over all ordered pairs (i, j), including i = j.
pub fn brute_modularity(g: &SimilarityGraph, assignment: &[usize], gamma: f64) -> f64 {
    let two_m = 2.0 * g.m() as f64;
    let mut q = 0.0;
    for i in 0..g.n() {
        for j in 0..g.n() {
            if assignment[i] != assignment[j] {
                continue;
            }
            let a_ij = if g.has_edge(i, j) { 1.0 } else { 0.0 };
            q += a_ij - gamma * (g.degree(i) * g.degree(j)) as f64 / two_m;
        }
    }
    q / two_m
}

/// O(n^2) kNN reference: directed top-k by (similarity desc, id asc), then
/// union-symmetrized, lexicographically sorted.
pub fn brute_knn_edges(corpus: &Corpus, k: usize) -> Vec<(usize, usize)> {
    let n = corpus.len();
    let mut edges = BTreeSet::new();
    for i in 0..n {
        let mut sims: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (cosine_sim(corpus.embedding(i), corpus.embedding(j)), j))
            .collect();
        sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, j) in sims.iter().take(k) {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    edges.into_iter().collect()
}

/// Planted-partition graph: dense blocks, sparse bridges. Returns the graph
/// and the planted block label per node.
pub fn planted_graph(
    blocks: usize,
    block_size: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> (SimilarityGraph, Vec<usize>) {
    let n = blocks * block_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|v| v / block_size).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    (
        SimilarityGraph::from_edges(n, block_size, &edges).unwrap(),
        labels,
    )
}

pub struct CoverageInstance {
    pub corpus: Corpus,
    pub oracle: CoverageOracle,
    pub sets: Vec<BTreeSet<u32>>,
    pub target: BTreeSet<u32>,
    pub budget: usize,
}

/// Random monotone-submodular coverage instance over up to `max_n` candidates.
pub fn random_coverage_instance(seed: u64, max_n: usize, max_k: usize) -> CoverageInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=max_n);
    let universe = rng.gen_range(4..=24u32);
    let sets: Vec<BTreeSet<u32>> = (0..n)
        .map(|_| {
            let size = rng.gen_range(0..=8.min(universe));
            (0..size).map(|_| rng.gen_range(0..universe)).collect()
        })
        .collect();
    let target: BTreeSet<u32> = (0..universe).collect();
    let features: HashMap<String, BTreeSet<u32>> = sets
        .iter()
        .enumerate()
        .map(|(i, s)| (i.to_string(), s.clone()))
        .collect();
    CoverageInstance {
        corpus: corpus_of(n),
        oracle: make_coverage_oracle(features, target.clone()).unwrap(),
        sets,
        target,
        budget: rng.gen_range(1..=max_k),
    }
}

/// Redundancy-structured instance: every candidate shares a large base and
/// carries a strictly shrinking tail of unique features, the regime where
/// cached gains go stale fast and lazy evaluation pays off.
pub fn nested_coverage_instance(
    seed: u64,
    n: usize,
    base_size: u32,
    budget: usize,
) -> CoverageInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: BTreeSet<u32> = (0..base_size).collect();
    let mut next = base_size;
    let mut sets = Vec::with_capacity(n);
    for j in 0..n {
        let unique = (n - j) as u32;
        let mut s = base.clone();
        // A little noise so instances differ across seeds.
        for _ in 0..rng.gen_range(0..3) {
            s.remove(&rng.gen_range(0..base_size));
        }
        s.extend(next..next + unique);
        next += unique;
        sets.push(s);
    }
    let target: BTreeSet<u32> = (0..next).collect();
    let features: HashMap<String, BTreeSet<u32>> = sets
        .iter()
        .enumerate()
        .map(|(i, s)| (i.to_string(), s.clone()))
        .collect();
    CoverageInstance {
        corpus: corpus_of(n),
        oracle: make_coverage_oracle(features, target.clone()).unwrap(),
        sets,
        target,
        budget,
    }
}

/// Coverage value f(S) = number of target elements covered by S.
pub fn coverage_value(instance: &CoverageInstance, picks: &[usize]) -> f64 {
    let mut covered: BTreeSet<u32> = BTreeSet::new();
    for &v in picks {
        covered.extend(instance.sets[v].iter().copied());
    }
    instance.target.intersection(&covered).count() as f64
}

/// Exhaustive optimum over all subsets of size <= k.
pub fn brute_force_opt(instance: &CoverageInstance, k: usize) -> f64 {
    let n = instance.sets.len();
    let mut best = 0.0f64;
    let mut subset: Vec<usize> = Vec::new();
    fn recurse(
        start: usize,
        n: usize,
        k: usize,
        subset: &mut Vec<usize>,
        best: &mut f64,
        instance: &CoverageInstance,
    ) {
        let value = coverage_value(instance, subset);
        if value > *best {
            *best = value;
        }
        if subset.len() == k {
            return;
        }
        for v in start..n {
            subset.push(v);
            recurse(v + 1, n, k, subset, best, instance);
            subset.pop();
        }
    }
    recurse(0, n, k, &mut subset, &mut best, instance);
    best
}

/// Pairwise-concordance AUROC with half credit for ties.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut concordant = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    concordant += 1.0;
                } else if scores[i] == scores[j] {
                    concordant += 0.5;
                }
            }
        }
    }
    concordant / pairs
}

/// Exhaustive PR curve: precision/recall recomputed from scratch at every
/// distinct threshold.
pub fn exhaustive_auprc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let total_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for &t in &thresholds {
        let tp = scores
            .iter()
            .zip(labels)
            .filter(|(&s, &l)| s >= t && l)
            .count() as f64;
        let fp = scores
            .iter()
            .zip(labels)
            .filter(|(&s, &l)| s >= t && !l)
            .count() as f64;
        area += (tp / total_pos - prev_recall) * (tp / (tp + fp));
        prev_recall = tp / total_pos;
    }
    area
}

/// Counts oracle calls by wrapping another oracle.
pub struct CountingOracle<'a> {
    inner: &'a dyn GainOracle,
    pub calls: std::sync::atomic::AtomicUsize,
}

impl<'a> CountingOracle<'a> {
    pub fn new(inner: &'a dyn GainOracle) -> Self {
        CountingOracle {
            inner,
            calls: std::sync::atomic::AtomicUsize::new(0),
        }
    }
}

impl GainOracle for CountingOracle<'_> {
    fn evaluate(
        &self,
        query: &Query,
        demos: &[&InstanceRecord],
        candidate: &InstanceRecord,
    ) -> Result<f64, demoselect::gain::GainError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.evaluate(query, demos, candidate)
    }

    fn cond_score(
        &self,
        query: &Query,
        demos: &[&InstanceRecord],
    ) -> Result<Option<f64>, demoselect::gain::GainError> {
        self.inner.cond_score(query, demos)
    }

    fn identity(&self) -> demoselect::gain::OracleIdentity {
        self.inner.identity()
    }
}

/// Scripted local mock of the completions/chat endpoint.
///
/// The completions route echoes the prompt as whitespace tokens with text
/// offsets, each carrying `token_logprob`. The chat route replays scripted
/// replies in order.
pub struct MockLmServer {
    pub base_url: String,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    pub completions_served: Arc<Mutex<usize>>,
    pub chat_prompts: Arc<Mutex<Vec<String>>>,
}

impl MockLmServer {
    pub fn start(token_logprob: f64, chat_replies: Vec<String>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = listener.local_addr().expect("mock addr");
        listener.set_nonblocking(true).expect("nonblocking");
        let stop = Arc::new(AtomicBool::new(false));
        let completions_served = Arc::new(Mutex::new(0usize));
        let chat_prompts = Arc::new(Mutex::new(Vec::new()));
        let replies = Arc::new(Mutex::new(
            chat_replies.into_iter().collect::<VecDeque<String>>(),
        ));

        let stop_flag = stop.clone();
        let served = completions_served.clone();
        let prompts = chat_prompts.clone();
        let handle = std::thread::spawn(move || {
            while !stop_flag.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let _ =
                            handle_connection(stream, token_logprob, &replies, &served, &prompts);
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(std::time::Duration::from_millis(2));
                    }
                    Err(_) => break,
                }
            }
        });

        MockLmServer {
            base_url: format!("http://{addr}"),
            stop,
            handle: Some(handle),
            completions_served,
            chat_prompts,
        }
    }
}

impl Drop for MockLmServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_connection(
    stream: TcpStream,
    token_logprob: f64,
    replies: &Arc<Mutex<VecDeque<String>>>,
    served: &Arc<Mutex<usize>>,
    prompts: &Arc<Mutex<Vec<String>>>,
) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let path = request_line
        .split_whitespace()
        .nth(1)
        .unwrap_or("")
        .to_string();

    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line == "\r\n" || line == "\n" || line.is_empty() {
            break;
        }
        if let Some(value) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = value.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let body: serde_json::Value = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);

    let response_body = if path.ends_with("/v1/completions") {
        *served.lock().unwrap() += 1;
        let prompt = body["prompt"].as_str().unwrap_or("");
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        let mut offsets = Vec::new();
        let mut start = None;
        for (i, ch) in prompt.char_indices() {
            if ch.is_whitespace() {
                if let Some(s) = start.take() {
                    tokens.push(prompt[s..i].to_string());
                    logprobs.push(Some(token_logprob));
                    offsets.push(s);
                }
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            tokens.push(prompt[s..].to_string());
            logprobs.push(Some(token_logprob));
            offsets.push(s);
        }
        serde_json::json!({
            "id": "mock-cmpl",
            "object": "text_completion",
            "choices": [{
                "text": prompt,
                "index": 0,
                "logprobs": {
                    "tokens": tokens,
                    "token_logprobs": logprobs,
                    "text_offset": offsets,
                },
                "finish_reason": "length",
            }],
        })
        .to_string()
    } else if path.ends_with("/v1/chat/completions") {
        let content = body["messages"][0]["content"].as_str().unwrap_or("");
        prompts.lock().unwrap().push(content.to_string());
        let reply = replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| "0".to_string());
        serde_json::json!({
            "id": "mock-chat",
            "object": "chat.completion",
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": reply},
                "finish_reason": "stop",
            }],
        })
        .to_string()
    } else {
        let mut out = stream;
        let msg = b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
        out.write_all(msg)?;
        return Ok(());
    };

    let mut out = stream;
    let response = format!(
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response_body.len(),
        response_body
    );
    out.write_all(response.as_bytes())?;
    out.flush()?;
    Ok(())
}

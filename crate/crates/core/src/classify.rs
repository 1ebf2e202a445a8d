//! Prompt construction, classifier backends and multi-view voting.
//!
//! Backends return, per depth map, a probability distribution over the
//! rendered prompts. Prompts belong to fine-grained categories that merge
//! into the four coarse classes before voting.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::project::DepthMap;
use crate::track::ClassVote;
use crate::types::ObjectClass;

pub const CLASS_SLOT: &str = "<class>";
pub const DEFAULT_TEMPLATE: &str = "a point representation of a <class>";

/// Fine-grained category names grouped by coarse class.
pub fn default_category_table() -> Vec<(String, ObjectClass)> {
    use ObjectClass::*;
    let rows: [(ObjectClass, &[&str]); 4] = [
        (
            Vehicle,
            &["car", "truck", "bus", "van", "minivan", "pickup truck", "school bus", "fire truck", "ambulance"],
        ),
        (Pedestrian, &["pedestrian", "human body", "human"]),
        (Cyclist, &["cyclist", "rider", "bicycle", "bike"]),
        (
            Background,
            &["traffic light", "traffic sign", "fence", "pole", "clutter", "tree", "house", "wall"],
        ),
    ];
    rows.iter()
        .flat_map(|(class, names)| names.iter().map(move |n| (n.to_string(), *class)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub template: String,
    /// `(refined name, coarse class)` in table order.
    pub categories: Vec<(String, ObjectClass)>,
    /// One rendered prompt per category, same order.
    pub prompts: Vec<String>,
}

impl PromptSet {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn coarse_of(&self, prompt_index: usize) -> ObjectClass {
        self.categories[prompt_index].1
    }

    /// Coarse classes in order of first appearance in the table.
    pub fn coarse_order(&self) -> Vec<ObjectClass> {
        let mut order = Vec::new();
        for (_, c) in &self.categories {
            if !order.contains(c) {
                order.push(*c);
            }
        }
        order
    }
}

pub fn build_prompts(table: &[(String, ObjectClass)], template: &str) -> Result<PromptSet> {
    if table.is_empty() {
        return Err(Error::Parameter("category table is empty".into()));
    }
    if !template.contains(CLASS_SLOT) {
        return Err(Error::Parameter(format!(
            "prompt template {template:?} has no {CLASS_SLOT} slot"
        )));
    }
    for (i, (name, _)) in table.iter().enumerate() {
        if table[..i].iter().any(|(n, _)| n == name) {
            return Err(Error::Validation(format!("duplicate category {name:?}")));
        }
    }
    Ok(PromptSet {
        template: template.to_string(),
        categories: table.to_vec(),
        prompts: table.iter().map(|(n, _)| template.replace(CLASS_SLOT, n)).collect(),
    })
}

pub fn coarse_map(refined: &str, prompts: &PromptSet) -> Result<ObjectClass> {
    prompts
        .categories
        .iter()
        .find(|(n, _)| n == refined)
        .map(|(_, c)| *c)
        .ok_or_else(|| Error::Validation(format!("unknown category {refined:?}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub view_index: usize,
    /// One probability per prompt, summing to 1.
    pub probabilities: Vec<f64>,
}

impl ClassScores {
    /// Index of the most probable prompt; the first one on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }
}

/// Scores depth maps against prompts. Implementations must be deterministic
/// and safe to call from several threads at once.
pub trait ClassifierBackend: Send + Sync {
    fn name(&self) -> &str;

    /// One distribution per map, in input order.
    fn classify(&self, maps: &[DepthMap], prompts: &PromptSet) -> Result<Vec<ClassScores>>;
}

/// Offline backend deciding from the silhouette of the rendered map.
///
/// With `a` the height/width ratio of the nonzero bounding box and `f` the
/// fraction of that box that is nonzero: `a > 2` is pedestrian, `1 ≤ a ≤ 2`
/// with `f < 0.4` cyclist, `a < 1` with `f ≥ 0.4` vehicle, anything else
/// background. The first prompt of the chosen class gets probability 0.8 and
/// the remainder is spread uniformly.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

pub const MOCK_PEAK_PROBABILITY: f64 = 0.8;

impl MockBackend {
    /// `(aspect, fill)` of a map, `None` when the map is empty.
    pub fn silhouette(map: &DepthMap) -> Option<(f64, f64)> {
        let (r0, r1, c0, c1) = map.nonzero_bounds()?;
        let (h, w) = (r1 - r0 + 1, c1 - c0 + 1);
        let mut filled = 0usize;
        for r in r0..=r1 {
            for c in c0..=c1 {
                if map.get(r, c) > 0.0 {
                    filled += 1;
                }
            }
        }
        Some((h as f64 / w as f64, filled as f64 / (h * w) as f64))
    }

    pub fn rule_class(map: &DepthMap) -> ObjectClass {
        match Self::silhouette(map) {
            Some((a, _)) if a > 2.0 => ObjectClass::Pedestrian,
            Some((a, f)) if (1.0..=2.0).contains(&a) && f < 0.4 => ObjectClass::Cyclist,
            Some((a, f)) if a < 1.0 && f >= 0.4 => ObjectClass::Vehicle,
            _ => ObjectClass::Background,
        }
    }
}

impl ClassifierBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn classify(&self, maps: &[DepthMap], prompts: &PromptSet) -> Result<Vec<ClassScores>> {
        let n = prompts.len();
        Ok(maps
            .iter()
            .enumerate()
            .map(|(view_index, map)| {
                let class = Self::rule_class(map);
                let peak = prompts.categories.iter().position(|(_, c)| *c == class);
                let probabilities = match (peak, n) {
                    (_, 1) => vec![1.0],
                    (Some(k), _) => {
                        let rest = (1.0 - MOCK_PEAK_PROBABILITY) / (n - 1) as f64;
                        (0..n)
                            .map(|i| if i == k { MOCK_PEAK_PROBABILITY } else { rest })
                            .collect()
                    }
                    (None, _) => vec![1.0 / n as f64; n],
                };
                ClassScores {
                    view_index,
                    probabilities,
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteParams {
    pub url: String,
    pub timeout_s: f64,
    /// Extra attempts after the first failure.
    pub retries: usize,
}

impl Default for RemoteParams {
    fn default() -> Self {
        RemoteParams {
            url: "http://127.0.0.1:8000".into(),
            timeout_s: 30.0,
            retries: 2,
        }
    }
}

#[derive(Debug, Serialize)]
struct ClassifyRequest<'a> {
    image_size: [usize; 2],
    views: Vec<String>,
    prompts: &'a [String],
}

#[derive(Debug, Deserialize)]
struct ClassifyResponse {
    scores: Vec<Vec<f64>>,
}

/// HTTP client of the `/v1/classify` protocol. All maps of one call travel in
/// a single request.
pub struct RemoteBackend {
    endpoint: String,
    retries: usize,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(params: &RemoteParams) -> Result<Self> {
        if !(params.timeout_s > 0.0 && params.timeout_s.is_finite()) {
            return Err(Error::Parameter("remote.timeout_s must be positive".into()));
        }
        let base = params.url.trim_end_matches('/');
        if !base.starts_with("http://") && !base.starts_with("https://") {
            return Err(Error::Parameter(format!("remote.url {:?} is not an http URL", params.url)));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(params.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteBackend {
            endpoint: format!("{base}/v1/classify"),
            retries: params.retries,
            agent,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(&self, body: &[u8]) -> std::result::Result<String, String> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP {}: {}", status.as_u16(), text.trim()));
        }
        Ok(text)
    }
}

/// Little-endian `f32` row-major bytes of a map, base64-encoded.
pub fn encode_view(map: &DepthMap) -> String {
    let mut bytes = Vec::with_capacity(map.values.len() * 4);
    for v in &map.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    BASE64.encode(bytes)
}

pub fn decode_view(text: &str, height: usize, width: usize) -> std::result::Result<DepthMap, String> {
    let bytes = BASE64.decode(text).map_err(|e| e.to_string())?;
    if bytes.len() != height * width * 4 {
        return Err(format!(
            "expected {} bytes for {height}×{width}, got {}",
            height * width * 4,
            bytes.len()
        ));
    }
    Ok(DepthMap {
        width,
        height,
        values: bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    })
}

impl ClassifierBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn classify(&self, maps: &[DepthMap], prompts: &PromptSet) -> Result<Vec<ClassScores>> {
        let views: Vec<usize> = (0..maps.len()).collect();
        let backend_err = |msg: String| Error::Backend {
            views: views.clone(),
            msg,
        };
        let Some(first) = maps.first() else {
            return Ok(Vec::new());
        };
        if maps.iter().any(|m| m.width != first.width || m.height != first.height) {
            return Err(backend_err("views differ in size".into()));
        }
        let request = ClassifyRequest {
            image_size: [first.height, first.width],
            views: maps.iter().map(encode_view).collect(),
            prompts: &prompts.prompts,
        };
        let body = serde_json::to_vec(&request).map_err(|e| backend_err(e.to_string()))?;
        let mut last_err = String::new();
        let mut text = None;
        for _ in 0..=self.retries {
            match self.attempt(&body) {
                Ok(t) => {
                    text = Some(t);
                    break;
                }
                Err(e) => last_err = e,
            }
        }
        let text = text.ok_or_else(|| backend_err(format!("{} unreachable: {last_err}", self.endpoint)))?;
        let resp: ClassifyResponse =
            serde_json::from_str(&text).map_err(|e| backend_err(format!("malformed response: {e}")))?;
        let scores: Vec<ClassScores> = resp
            .scores
            .into_iter()
            .enumerate()
            .map(|(view_index, probabilities)| ClassScores {
                view_index,
                probabilities,
            })
            .collect();
        check_scores(&scores, maps.len(), prompts.len()).map_err(backend_err)?;
        Ok(scores)
    }
}

/// Row count, column count and probability-simplex checks.
pub fn check_scores(scores: &[ClassScores], views: usize, prompts: usize) -> std::result::Result<(), String> {
    if scores.len() != views {
        return Err(format!("expected {views} score rows, got {}", scores.len()));
    }
    for s in scores {
        if s.probabilities.len() != prompts {
            return Err(format!(
                "view {}: expected {prompts} scores, got {}",
                s.view_index,
                s.probabilities.len()
            ));
        }
        if s.probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(format!("view {}: scores must be nonnegative", s.view_index));
        }
        let sum: f64 = s.probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(format!("view {}: scores sum to {sum}", s.view_index));
        }
    }
    Ok(())
}

pub fn classify_views(
    maps: &[DepthMap],
    prompts: &PromptSet,
    backend: &dyn ClassifierBackend,
) -> Result<Vec<ClassScores>> {
    if prompts.is_empty() {
        return Err(Error::Parameter("prompt set is empty".into()));
    }
    let scores = backend.classify(maps, prompts)?;
    check_scores(&scores, maps.len(), prompts.len()).map_err(|msg| Error::Backend {
        views: (0..maps.len()).collect(),
        msg,
    })?;
    Ok(scores)
}

/// Winning prompt and its coarse class for each view.
pub fn view_winners(scores: &[ClassScores], prompts: &PromptSet) -> Vec<(usize, ObjectClass)> {
    scores
        .iter()
        .map(|s| {
            let k = s.argmax();
            (k, prompts.coarse_of(k))
        })
        .collect()
}

/// Majority vote over views of the coarse class of each view's top prompt.
///
/// The score is the mean winning probability of the views voting for the
/// label. Equal vote counts go to the higher mean, then to the class listed
/// first in the category table.
pub fn vote_views(scores: &[ClassScores], prompts: &PromptSet) -> Result<ClassVote> {
    if scores.is_empty() {
        return Err(Error::Validation("cannot vote over zero views".into()));
    }
    let mut best: Option<(usize, f64, ObjectClass)> = None;
    for class in prompts.coarse_order() {
        // sorted before summing so the mean does not depend on view order
        let mut probs: Vec<f64> = scores
            .iter()
            .filter_map(|s| {
                let k = s.argmax();
                (prompts.coarse_of(k) == class).then_some(s.probabilities[k])
            })
            .collect();
        if probs.is_empty() {
            continue;
        }
        probs.sort_by(f64::total_cmp);
        // offsets from the minimum keep the mean of equal values exact
        let lo = probs[0];
        let mean = lo + probs.iter().map(|p| p - lo).sum::<f64>() / probs.len() as f64;
        let better = match best {
            None => true,
            Some((votes, m, _)) => probs.len() > votes || (probs.len() == votes && mean > m),
        };
        if better {
            best = Some((probs.len(), mean, class));
        }
    }
    let (_, score, class) = best.expect("at least one view voted");
    Ok(ClassVote {
        class,
        score: score.clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompts() -> PromptSet {
        build_prompts(&default_category_table(), DEFAULT_TEMPLATE).unwrap()
    }

    #[test]
    fn template_rendering_and_table() {
        let p = prompts();
        assert_eq!(p.len(), 24);
        assert_eq!(p.prompts[0], "a point representation of a car");
        assert!(build_prompts(&default_category_table(), "a point cloud").is_err());
        let mut dup = default_category_table();
        dup.push(("car".into(), ObjectClass::Vehicle));
        assert!(matches!(build_prompts(&dup, DEFAULT_TEMPLATE), Err(Error::Validation(_))));
        assert!(build_prompts(&[], DEFAULT_TEMPLATE).is_err());
    }

    #[test]
    fn coarse_mapping() {
        let p = prompts();
        assert_eq!(coarse_map("school bus", &p).unwrap(), ObjectClass::Vehicle);
        assert_eq!(coarse_map("human body", &p).unwrap(), ObjectClass::Pedestrian);
        assert_eq!(coarse_map("pole", &p).unwrap(), ObjectClass::Background);
        assert!(coarse_map("dragon", &p).is_err());
    }

    /// A `rows × cols` filled block centred in a 224 map.
    fn block(rows: usize, cols: usize, step: usize) -> DepthMap {
        let mut m = DepthMap::zeros(224, 224);
        let (r0, c0) = (112 - rows / 2, 112 - cols / 2);
        for r in (r0..r0 + rows).step_by(step) {
            for c in (c0..c0 + cols).step_by(step) {
                m.values[r * 224 + c] = 1.0;
            }
        }
        m
    }

    #[test]
    fn mock_rules() {
        assert_eq!(MockBackend::rule_class(&block(90, 30, 1)), ObjectClass::Pedestrian);
        assert_eq!(MockBackend::rule_class(&block(60, 40, 3)), ObjectClass::Cyclist);
        assert_eq!(MockBackend::rule_class(&block(30, 90, 1)), ObjectClass::Vehicle);
        assert_eq!(MockBackend::rule_class(&block(30, 90, 3)), ObjectClass::Background);
        assert_eq!(MockBackend::rule_class(&block(60, 40, 1)), ObjectClass::Background);
        assert_eq!(MockBackend::rule_class(&DepthMap::zeros(8, 8)), ObjectClass::Background);
    }

    #[test]
    fn mock_tall_blob_scores_pedestrian_family() {
        let p = prompts();
        let maps = vec![block(90, 30, 1), block(30, 90, 1), block(90, 30, 1), block(30, 90, 3)];
        let scores = classify_views(&maps, &p, &MockBackend).unwrap();
        assert_eq!(scores.len(), 4);
        assert_eq!(scores.iter().map(|s| s.view_index).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(p.categories[scores[0].argmax()].0, "pedestrian");
        assert_eq!(p.categories[scores[1].argmax()].0, "car");
        for s in &scores {
            assert!((s.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(s.probabilities[s.argmax()], 0.8);
        }
    }

    #[test]
    fn empty_prompts_rejected() {
        let p = PromptSet {
            template: DEFAULT_TEMPLATE.into(),
            categories: vec![],
            prompts: vec![],
        };
        assert!(classify_views(&[block(4, 4, 1)], &p, &MockBackend).is_err());
    }

    fn one_hot(p: &PromptSet, view: usize, name: &str, prob: f64) -> ClassScores {
        let k = p.categories.iter().position(|(n, _)| n == name).unwrap();
        let rest = (1.0 - prob) / (p.len() - 1) as f64;
        ClassScores {
            view_index: view,
            probabilities: (0..p.len()).map(|i| if i == k { prob } else { rest }).collect(),
        }
    }

    #[test]
    fn voting_examples() {
        let p = prompts();
        let s = vec![
            one_hot(&p, 0, "car", 0.6),
            one_hot(&p, 1, "truck", 0.5),
            one_hot(&p, 2, "bus", 0.7),
            one_hot(&p, 3, "human", 0.9),
        ];
        let v = vote_views(&s, &p).unwrap();
        assert_eq!(v.class, ObjectClass::Vehicle);
        assert!((v.score - 0.6).abs() < 1e-12);

        let s = vec![
            one_hot(&p, 0, "pedestrian", 0.4),
            one_hot(&p, 1, "car", 0.5),
            one_hot(&p, 2, "human", 0.4),
            one_hot(&p, 3, "van", 0.6),
        ];
        assert_eq!(vote_views(&s, &p).unwrap().class, ObjectClass::Vehicle);

        let v = vote_views(&[one_hot(&p, 0, "wall", 0.9)], &p).unwrap();
        assert_eq!((v.class, v.score), (ObjectClass::Background, 0.9));

        // equal votes and equal means fall back to table order
        let s = vec![one_hot(&p, 0, "bike", 0.5), one_hot(&p, 1, "human", 0.5)];
        assert_eq!(vote_views(&s, &p).unwrap().class, ObjectClass::Pedestrian);

        assert!(vote_views(&[], &p).is_err());
    }

    #[test]
    fn mean_of_equal_probabilities_is_exact() {
        let p = prompts();
        for n in 1..=4 {
            let s: Vec<ClassScores> = (0..n).map(|v| one_hot(&p, v, "car", 0.8)).collect();
            assert_eq!(vote_views(&s, &p).unwrap().score, 0.8, "{n} views");
        }
    }

    #[test]
    fn view_encoding_roundtrip() {
        let mut m = DepthMap::zeros(3, 2);
        m.values = vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125];
        let text = encode_view(&m);
        assert_eq!(decode_view(&text, 2, 3).unwrap(), m);
        assert!(decode_view(&text, 3, 3).is_err());
    }

    #[test]
    fn remote_rejects_bad_config() {
        let bad = RemoteParams {
            url: "ftp://host".into(),
            ..Default::default()
        };
        assert!(RemoteBackend::new(&bad).is_err());
        let ok = RemoteBackend::new(&RemoteParams {
            url: "http://localhost:9/".into(),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(ok.endpoint(), "http://localhost:9/v1/classify");
    }
}

//! CHAIR-style hallucination metrics and token-class analyses.
//!
//! An object mention is a span of response tokens naming an object. A
//! mention is hallucinated when its object is not in the ground-truth set.
//!
//! * `chair_s`: fraction of responses with at least one hallucinated mention
//! * `chair_i`: hallucinated mentions / all mentions (every mention counts)
//! * `recall`: distinct true objects mentioned / true objects present

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dependence::{DependenceProfile, TokenClass};
use crate::error::{Error, Result};
use crate::synth::{Vocabulary, EOS};

pub const DEFAULT_WINDOW: usize = 3;

/// One generated response, without the leading `<bos>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub tokens: Vec<u32>,
    pub surfaces: Vec<String>,
}

impl Response {
    pub fn from_tokens(tokens: Vec<u32>, vocab: &Vocabulary) -> Self {
        let surfaces = vocab.surfaces(&tokens);
        Response { tokens, surfaces }
    }

    /// Number of tokens, not counting a final `<eos>`.
    pub fn len_without_eos(&self) -> usize {
        match self.tokens.last() {
            Some(&EOS) => self.tokens.len() - 1,
            _ => self.tokens.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub object: u32,
    pub span: Range<usize>,
}

/// Finds object mentions in a response.
pub trait ObjectMatcher: Sync {
    fn mentions(&self, response: &Response) -> Vec<Mention>;
}

/// Exact object-token matching for the synthetic vocabulary.
pub struct TokenMatcher<'a> {
    pub vocab: &'a Vocabulary,
}

impl ObjectMatcher for TokenMatcher<'_> {
    fn mentions(&self, response: &Response) -> Vec<Mention> {
        response
            .tokens
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| {
                self.vocab.token_object(t).map(|object| Mention {
                    object,
                    span: i..i + 1,
                })
            })
            .collect()
    }
}

/// Lowercase surface matching against an object lexicon, for traces whose
/// tokenizer is unknown. Object words may span several pieces; the longest
/// match starting at each position wins.
pub struct LexiconMatcher {
    words: BTreeMap<String, u32>,
    max_pieces: usize,
}

impl LexiconMatcher {
    /// `lexicon[i]` is the name of object `i`.
    pub fn new(lexicon: &[String]) -> Self {
        let words = lexicon
            .iter()
            .enumerate()
            .map(|(i, w)| (normalize(w), i as u32))
            .filter(|(w, _)| !w.is_empty())
            .collect();
        LexiconMatcher { words, max_pieces: 6 }
    }
}

fn normalize(piece: &str) -> String {
    piece
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '\u{2581}' && *c != '\u{120}')
        .flat_map(char::to_lowercase)
        .collect()
}

impl ObjectMatcher for LexiconMatcher {
    fn mentions(&self, response: &Response) -> Vec<Mention> {
        let pieces: Vec<String> = response.surfaces.iter().map(|s| normalize(s)).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < pieces.len() {
            let mut best: Option<(usize, u32)> = None;
            let mut acc = String::new();
            for (j, piece) in pieces.iter().enumerate().skip(i).take(self.max_pieces) {
                acc.push_str(piece);
                if let Some(&obj) = self.words.get(&acc) {
                    best = Some((j + 1, obj));
                }
            }
            match best {
                Some((end, object)) if !pieces[i].is_empty() => {
                    out.push(Mention { object, span: i..end });
                    i = end;
                }
                _ => i += 1,
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ResponseScore {
    pub mentioned: BTreeSet<u32>,
    pub hallucinated: BTreeSet<u32>,
    pub mention_count: usize,
    pub hallucinated_mentions: usize,
}

pub fn score_response(mentions: &[Mention], truth: &BTreeSet<u32>) -> ResponseScore {
    let mentioned: BTreeSet<u32> = mentions.iter().map(|m| m.object).collect();
    let hallucinated = mentioned.difference(truth).copied().collect();
    ResponseScore {
        hallucinated,
        mentioned,
        mention_count: mentions.len(),
        hallucinated_mentions: mentions.iter().filter(|m| !truth.contains(&m.object)).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationReport {
    pub chair_s: f64,
    pub chair_i: f64,
    pub recall: f64,
    pub mean_len: f64,
    pub n_samples: usize,
    pub mentions: usize,
    pub hallucinated_mentions: usize,
    pub responses_with_hallucination: usize,
    pub truth_objects: usize,
    pub recalled_objects: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn evaluate(
    outputs: &[Response],
    truths: &[BTreeSet<u32>],
    matcher: &dyn ObjectMatcher,
) -> Result<HallucinationReport> {
    if outputs.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} responses but {} ground-truth sets",
            outputs.len(),
            truths.len()
        )));
    }
    let mut mentions = 0;
    let mut halluc = 0;
    let mut with_h = 0;
    let mut truth_total = 0;
    let mut recalled = 0;
    let mut len_total = 0;
    for (resp, truth) in outputs.iter().zip(truths) {
        let s = score_response(&matcher.mentions(resp), truth);
        mentions += s.mention_count;
        halluc += s.hallucinated_mentions;
        with_h += usize::from(!s.hallucinated.is_empty());
        truth_total += truth.len();
        recalled += s.mentioned.intersection(truth).count();
        len_total += resp.len_without_eos();
    }
    let n = outputs.len();
    Ok(HallucinationReport {
        chair_s: ratio(with_h, n),
        chair_i: ratio(halluc, mentions),
        recall: ratio(recalled, truth_total),
        mean_len: if n == 0 { 0.0 } else { len_total as f64 / n as f64 },
        n_samples: n,
        mentions,
        hallucinated_mentions: halluc,
        responses_with_hallucination: with_h,
        truth_objects: truth_total,
        recalled_objects: recalled,
    })
}

/// Class of a mention: the class of its largest-|d| token, earliest on ties.
pub fn mention_class(profile: &DependenceProfile, span: &Range<usize>) -> TokenClass {
    let d = profile.values();
    let mut best = span.start;
    for i in span.clone() {
        if d[i].abs() > d[best].abs() {
            best = i;
        }
    }
    profile.classes()[best]
}

fn check_alignment(profiles: &[DependenceProfile], outputs: &[Response], truths: &[BTreeSet<u32>]) -> Result<()> {
    if profiles.len() != outputs.len() || outputs.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} profiles, {} responses, {} truth sets",
            profiles.len(),
            outputs.len(),
            truths.len()
        )));
    }
    for (i, (p, r)) in profiles.iter().zip(outputs).enumerate() {
        if p.len() != r.tokens.len() {
            return Err(Error::Shape(format!(
                "response {i} ('{}') has {} tokens but its profile has {}",
                p.sample_id(),
                r.tokens.len(),
                p.len()
            )));
        }
    }
    Ok(())
}

/// Grounded and hallucinated object mentions per token class.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassObjectCounts {
    /// Indexed by [`TokenClass::index`]; every mention counted.
    pub grounded: [usize; 3],
    pub hallucinated: [usize; 3],
    /// Same tallies counting each object at most once per response.
    pub grounded_distinct: [usize; 3],
    pub hallucinated_distinct: [usize; 3],
}

impl ClassObjectCounts {
    pub fn total_grounded(&self) -> usize {
        self.grounded.iter().sum()
    }

    pub fn total_hallucinated(&self) -> usize {
        self.hallucinated.iter().sum()
    }
}

pub fn class_object_counts(
    profiles: &[DependenceProfile],
    outputs: &[Response],
    truths: &[BTreeSet<u32>],
    matcher: &dyn ObjectMatcher,
) -> Result<ClassObjectCounts> {
    check_alignment(profiles, outputs, truths)?;
    let mut c = ClassObjectCounts::default();
    for ((p, r), truth) in profiles.iter().zip(outputs).zip(truths) {
        let mut seen = BTreeSet::new();
        for m in matcher.mentions(r) {
            let k = mention_class(p, &m.span).index();
            let first = seen.insert(m.object);
            if truth.contains(&m.object) {
                c.grounded[k] += 1;
                c.grounded_distinct[k] += usize::from(first);
            } else {
                c.hallucinated[k] += 1;
                c.hallucinated_distinct[k] += usize::from(first);
            }
        }
    }
    Ok(c)
}

/// Distances from hallucinated mentions to the nearest token of each class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoOccurrenceHistogram {
    pub window: usize,
    /// `counts[class][d]` for `d` in `0..=window`; the last slot
    /// (`window + 1`) counts mentions farther away than `window`.
    pub counts: [Vec<usize>; 3],
    /// Mentions whose response has no token of the class at all.
    pub absent: [usize; 3],
    /// Fraction of mentions (with the class present) within `window`.
    pub within_fraction: [Option<f64>; 3],
    pub hallucinated_mentions: usize,
}

impl CoOccurrenceHistogram {
    pub fn fraction(&self, class: TokenClass) -> Option<f64> {
        self.within_fraction[class.index()]
    }
}

fn span_distance(span: &Range<usize>, q: usize) -> usize {
    if q < span.start {
        span.start - q
    } else if q >= span.end {
        q + 1 - span.end
    } else {
        0
    }
}

pub fn co_occurrence(
    profiles: &[DependenceProfile],
    outputs: &[Response],
    truths: &[BTreeSet<u32>],
    matcher: &dyn ObjectMatcher,
    window: usize,
) -> Result<CoOccurrenceHistogram> {
    check_alignment(profiles, outputs, truths)?;
    let mut counts: [Vec<usize>; 3] = std::array::from_fn(|_| vec![0; window + 2]);
    let mut absent = [0; 3];
    let mut total = 0;
    for ((p, r), truth) in profiles.iter().zip(outputs).zip(truths) {
        for m in matcher.mentions(r).into_iter().filter(|m| !truth.contains(&m.object)) {
            total += 1;
            for class in TokenClass::ALL {
                let k = class.index();
                let nearest = p
                    .classes()
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| **c == class)
                    .map(|(q, _)| span_distance(&m.span, q))
                    .min();
                match nearest {
                    Some(d) => counts[k][d.min(window + 1)] += 1,
                    None => absent[k] += 1,
                }
            }
        }
    }
    let within_fraction = std::array::from_fn(|k| {
        let present = total - absent[k];
        (present > 0).then(|| counts[k][..=window].iter().sum::<usize>() as f64 / present as f64)
    });
    Ok(CoOccurrenceHistogram {
        window,
        counts,
        absent,
        within_fraction,
        hallucinated_mentions: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(40)
    }

    fn resp(objs: &[u32]) -> Response {
        let v = vocab();
        let mut toks = Vec::new();
        for &o in objs {
            toks.push(6); // "a"
            toks.push(v.object_token(o));
        }
        toks.push(EOS);
        Response::from_tokens(toks, &v)
    }

    fn set(xs: &[u32]) -> BTreeSet<u32> {
        xs.iter().copied().collect()
    }

    #[test]
    fn response_scoring() {
        let v = vocab();
        let m = TokenMatcher { vocab: &v };
        let s = score_response(&m.mentions(&resp(&[3, 7])), &set(&[3, 7, 9]));
        assert!(s.hallucinated.is_empty());
        assert_eq!(s.mentioned.intersection(&set(&[3, 7, 9])).count(), 2);
        let s = score_response(&m.mentions(&resp(&[3, 8])), &set(&[3, 7]));
        assert_eq!(s.hallucinated, set(&[8]));
        let s = score_response(&m.mentions(&resp(&[])), &set(&[3]));
        assert!(s.mentioned.is_empty() && s.hallucinated.is_empty());
        // duplicates: one distinct object, two instance-level mentions
        let s = score_response(&m.mentions(&resp(&[8, 8])), &set(&[3]));
        assert_eq!((s.hallucinated.len(), s.hallucinated_mentions), (1, 2));
    }

    #[test]
    fn chair_definitions() {
        let v = vocab();
        let m = TokenMatcher { vocab: &v };
        let r = evaluate(&[resp(&[1, 2]), resp(&[1, 5])], &[set(&[1, 2]), set(&[1, 2])], &m).unwrap();
        assert_eq!(r.chair_s, 0.5);
        assert_eq!(r.chair_i, 0.25);
        assert_eq!(r.recall, 0.75);
        assert_eq!(r.mean_len, 4.0);
        let perfect = evaluate(&[resp(&[1]), resp(&[2, 3])], &[set(&[1, 4]), set(&[2, 3])], &m).unwrap();
        assert_eq!((perfect.chair_s, perfect.chair_i), (0.0, 0.0));
        assert_eq!(perfect.recall, 0.75);
        assert!(evaluate(&[resp(&[1])], &[], &m).is_err());
    }

    fn profile(d: &[f64]) -> DependenceProfile {
        DependenceProfile::from_values("p", d.to_vec()).unwrap()
    }

    #[test]
    fn max_abs_rule_for_multi_piece_mentions() {
        // pieces: "nin" "tendo" "is" with lexicon word "nintendo"
        let r = Response {
            tokens: vec![10, 11, 12],
            surfaces: vec!["\u{2581}Nin".into(), "tendo".into(), "\u{2581}is".into()],
        };
        let m = LexiconMatcher::new(&["nintendo".to_string(), "is".to_string()]);
        let ms = m.mentions(&r);
        assert_eq!(ms[0], Mention { object: 0, span: 0..2 });
        let p = profile(&[0.1, 0.6, 0.0]);
        assert_eq!(mention_class(&p, &ms[0].span), TokenClass::ImagePositive);
        // tie keeps the earlier token
        let p = profile(&[-0.5, 0.5, 0.0]);
        assert_eq!(mention_class(&p, &ms[0].span), TokenClass::ImageNegative);
        let c = class_object_counts(&[profile(&[0.1, 0.6, 0.0])], &[r], &[set(&[1])], &m).unwrap();
        assert_eq!(c.hallucinated[TokenClass::ImagePositive.index()], 1);
        assert_eq!(c.grounded[TokenClass::ImageInvariant.index()], 1);
    }

    #[test]
    fn lexicon_matching_is_case_insensitive() {
        let r = Response {
            tokens: vec![0, 1, 2],
            surfaces: vec!["A".into(), " Dining".into(), " Table".into()],
        };
        let m = LexiconMatcher::new(&["dining table".to_string(), "dining".to_string()]);
        assert_eq!(m.mentions(&r), vec![Mention { object: 0, span: 1..3 }]);
    }

    #[test]
    fn co_occurrence_distances() {
        let v = vocab();
        let m = TokenMatcher { vocab: &v };
        // tokens: a obj(9) a obj(4) eos ; obj 4 is hallucinated
        let r = resp(&[9, 4]);
        let p = profile(&[0.0, 0.9, 0.0, 0.1, 0.0]);
        let h = co_occurrence(&[p], &[r], &[set(&[9])], &m, 3).unwrap();
        assert_eq!(h.hallucinated_mentions, 1);
        // the hallucinated token is itself invariant -> distance 0
        assert_eq!(h.counts[TokenClass::ImageInvariant.index()][0], 1);
        // nearest positive token is two positions left
        assert_eq!(h.counts[TokenClass::ImagePositive.index()][2], 1);
        // no negative tokens: absent and excluded from the fraction
        assert_eq!(h.absent[TokenClass::ImageNegative.index()], 1);
        assert_eq!(h.fraction(TokenClass::ImageNegative), None);
        assert_eq!(h.fraction(TokenClass::ImageInvariant), Some(1.0));
    }

    #[test]
    fn adjacent_invariant_is_distance_one() {
        let v = vocab();
        let m = TokenMatcher { vocab: &v };
        let r = resp(&[4]);
        let p = profile(&[0.0, 0.9, 0.5]);
        let h = co_occurrence(&[p], &[r], &[set(&[1])], &m, 3).unwrap();
        assert_eq!(h.counts[TokenClass::ImageInvariant.index()][1], 1);
        let far = co_occurrence(&[profile(&[0.9, 0.9, 0.9])], &[resp(&[4])], &[set(&[1])], &m, 0).unwrap();
        assert_eq!(far.counts[TokenClass::ImagePositive.index()], vec![1, 0]);
    }

    #[test]
    fn misaligned_inputs_error() {
        let v = vocab();
        let m = TokenMatcher { vocab: &v };
        assert!(class_object_counts(&[profile(&[0.0])], &[resp(&[1])], &[set(&[1])], &m).is_err());
        assert!(co_occurrence(&[], &[resp(&[1])], &[set(&[1])], &m, 3).is_err());
    }
}

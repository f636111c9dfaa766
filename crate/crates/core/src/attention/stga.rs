//! Joint key/value construction over a sub-grid and the attention itself.

use crate::error::AttentionError;
use crate::tokens::TokenMap;

use super::params::{AttentionParams, TextTokens};
use super::rope::{Position, RopeSpec};

/// Keys and values of every member frame, concatenated in member order.
#[derive(Clone, Debug, PartialEq)]
pub struct JointKv {
    pub n: usize,
    pub d: usize,
    /// `n x d` projected keys (not yet rotated).
    pub keys: Vec<f64>,
    /// `n x d` projected values.
    pub values: Vec<f64>,
    /// Intra-frame `(row, col)` of each key; identical across members.
    pub positions: Vec<Position>,
}

impl JointKv {
    pub fn key(&self, i: usize) -> &[f64] {
        &self.keys[i * self.d..(i + 1) * self.d]
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }
}

pub fn token_positions(h: usize, w: usize) -> Vec<Position> {
    (0..h).flat_map(|y| (0..w).map(move |x| (y as i64, x as i64))).collect()
}

/// Projects each member with the image-stream `W_k`, `W_v` and concatenates.
///
/// Four members for a sub-grid; a single member gives ordinary per-frame attention.
pub fn build_joint_kv(members: &[&TokenMap], params: &AttentionParams) -> Result<JointKv, AttentionError> {
    let first = members.first().ok_or_else(|| AttentionError::ShapeMismatch("no member frames".into()))?;
    let shape = first.shape();
    let d = params.d();
    if shape.2 != d {
        return Err(AttentionError::DimMismatch { expected: d, found: shape.2 });
    }
    for m in members {
        if m.shape() != shape {
            return Err(AttentionError::ShapeMismatch(format!("member {:?} vs {:?}", m.shape(), shape)));
        }
    }
    let per = first.len();
    let n = per * members.len();
    let mut keys = vec![0.0; n * d];
    let mut values = vec![0.0; n * d];
    let frame_positions = token_positions(shape.0, shape.1);
    let mut positions = Vec::with_capacity(n);
    for (mi, m) in members.iter().enumerate() {
        for i in 0..per {
            let row = mi * per + i;
            params.image.wk.apply(m.row(i), &mut keys[row * d..(row + 1) * d]);
            params.image.wv.apply(m.row(i), &mut values[row * d..(row + 1) * d]);
        }
        positions.extend_from_slice(&frame_positions);
    }
    Ok(JointKv { n, d, keys, values, positions })
}

/// Attention of one frame's image queries against text plus the joint keys.
///
/// `softmax([Q_txt, RoPE(Q_f)] [K_txt, RoPE(K_S)]^T / sqrt(d_k)) [V_txt, V_S]`,
/// returning only the image-query rows, per head, heads concatenated. Text
/// tokens are not rotated. No output projection is applied here.
pub fn stga(
    query: &TokenMap,
    joint: &JointKv,
    text: &TextTokens,
    params: &AttentionParams,
    rope: &RopeSpec,
) -> Result<TokenMap, AttentionError> {
    stga_inner(query, joint, text, params, rope, None)
}

/// As [`stga`], also returning each image query's attention row per head
/// (`probs[(q * heads + h)]`, length `text.len + joint.n`).
pub fn stga_with_probs(
    query: &TokenMap,
    joint: &JointKv,
    text: &TextTokens,
    params: &AttentionParams,
    rope: &RopeSpec,
) -> Result<(TokenMap, Vec<Vec<f64>>), AttentionError> {
    let mut probs = Vec::new();
    let out = stga_inner(query, joint, text, params, rope, Some(&mut probs))?;
    Ok((out, probs))
}

fn stga_inner(
    query: &TokenMap,
    joint: &JointKv,
    text: &TextTokens,
    params: &AttentionParams,
    rope: &RopeSpec,
    mut record: Option<&mut Vec<Vec<f64>>>,
) -> Result<TokenMap, AttentionError> {
    let d = params.d();
    let (dk, heads) = (params.d_k, params.heads);
    if query.d() != d {
        return Err(AttentionError::DimMismatch { expected: d, found: query.d() });
    }
    if joint.d != d {
        return Err(AttentionError::DimMismatch { expected: d, found: joint.d });
    }
    if text.len > 0 && text.d != d {
        return Err(AttentionError::DimMismatch { expected: d, found: text.d });
    }
    if rope.head_dim() != dk {
        return Err(AttentionError::DimMismatch { expected: dk, found: rope.head_dim() });
    }
    if joint.positions.len() != joint.n || joint.keys.len() != joint.n * d {
        return Err(AttentionError::ShapeMismatch("joint key/value set is inconsistent".into()));
    }

    // text stream keys/values
    let mut text_k = vec![0.0; text.len * d];
    let mut text_v = vec![0.0; text.len * d];
    for i in 0..text.len {
        params.text.wk.apply(text.row(i), &mut text_k[i * d..(i + 1) * d]);
        params.text.wv.apply(text.row(i), &mut text_v[i * d..(i + 1) * d]);
    }

    // rotated image keys, per head
    let mut keys = joint.keys.clone();
    for (row, &pos) in keys.chunks_exact_mut(d).zip(&joint.positions) {
        for h in 0..heads {
            rope.rotate(&mut row[h * dk..(h + 1) * dk], pos)?;
        }
    }

    let n_keys = text.len + joint.n;
    let scale = 1.0 / (dk as f64).sqrt();
    let positions = token_positions(query.h(), query.w());
    let mut out = vec![0.0f32; query.len() * d];
    let mut q = vec![0.0; d];
    let mut logits = vec![0.0; n_keys];
    let mut acc = vec![0.0; dk];

    for qi in 0..query.len() {
        params.image.wq.apply(query.row(qi), &mut q);
        for h in 0..heads {
            let hs = h * dk..(h + 1) * dk;
            let qh = &mut q[hs.clone()];
            rope.rotate(qh, positions[qi])?;
            for j in 0..text.len {
                logits[j] = dot(qh, &text_k[j * d..][hs.clone()]) * scale;
            }
            for j in 0..joint.n {
                logits[text.len + j] = dot(qh, &keys[j * d..][hs.clone()]) * scale;
            }
            if logits.iter().any(|l| !l.is_finite()) {
                return Err(AttentionError::NonFiniteLogit);
            }
            softmax_in_place(&mut logits);
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (j, &p) in logits.iter().enumerate() {
                let v = if j < text.len { &text_v[j * d..] } else { &joint.values[(j - text.len) * d..] };
                for (a, &vv) in acc.iter_mut().zip(&v[hs.clone()]) {
                    *a += p * vv;
                }
            }
            for (o, &a) in out[qi * d..][hs.clone()].iter_mut().zip(&acc) {
                *o = a as f32;
            }
            if let Some(rec) = record.as_deref_mut() {
                rec.push(logits.clone());
            }
        }
    }
    TokenMap::new(query.h(), query.w(), d, out).map_err(|_| AttentionError::NonFiniteLogit)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-subtracted softmax.
pub fn softmax_in_place(x: &mut [f64]) {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_map(h: usize, w: usize, d: usize, seed: u64) -> TokenMap {
        let mut r = crate::rng::seeded(seed);
        TokenMap::from_fn(h, w, d, |_, _, _| crate::rng::normal(&mut r) as f32)
    }

    #[test]
    fn joint_kv_counts_and_order() {
        let params = AttentionParams::identity(1, 4);
        let maps: Vec<TokenMap> = (0..4).map(|i| random_map(2, 2, 4, i)).collect();
        let refs: Vec<&TokenMap> = maps.iter().collect();
        let kv = build_joint_kv(&refs, &params).unwrap();
        assert_eq!(kv.n, 16);
        assert_eq!(kv.keys.len(), 16 * 4);
        // identity projection: block k holds member k
        for (k, m) in maps.iter().enumerate() {
            for i in 0..4 {
                let got: Vec<f32> = kv.key(k * 4 + i).iter().map(|&v| v as f32).collect();
                assert_eq!(got, m.row(i));
            }
        }
        let swapped = build_joint_kv(&[refs[1], refs[0], refs[2], refs[3]], &params).unwrap();
        assert_ne!(swapped.keys, kv.keys);
    }

    #[test]
    fn identical_members_repeat_blocks() {
        let params = AttentionParams::random(1, 4, 3);
        let m = random_map(2, 2, 4, 9);
        let kv = build_joint_kv(&[&m, &m, &m, &m], &params).unwrap();
        let block = kv.keys[..16].to_vec();
        for k in 1..4 {
            assert_eq!(&kv.keys[k * 16..(k + 1) * 16], &block[..]);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let params = AttentionParams::identity(1, 4);
        let a = random_map(2, 2, 4, 1);
        let b = random_map(2, 3, 4, 2);
        assert!(matches!(build_joint_kv(&[&a, &b], &params), Err(AttentionError::ShapeMismatch(_))));
        let c = random_map(2, 2, 6, 2);
        assert!(matches!(build_joint_kv(&[&c], &params), Err(AttentionError::DimMismatch { .. })));
    }

    #[test]
    fn singleton_key_returns_its_value() {
        let params = AttentionParams::random(1, 4, 17);
        let rope = RopeSpec::for_head_dim(4).unwrap();
        let q = random_map(1, 1, 4, 5);
        let kvmap = random_map(1, 1, 4, 6);
        let kv = build_joint_kv(&[&kvmap], &params).unwrap();
        let out = stga(&q, &kv, &TextTokens::empty(4), &params, &rope).unwrap();
        for c in 0..4 {
            assert_eq!(out.data()[c], kv.values[c] as f32);
        }
    }

    #[test]
    fn non_finite_logits_are_rejected() {
        let params = AttentionParams::identity(1, 2);
        let rope = RopeSpec::for_head_dim(2).unwrap();
        let q = TokenMap::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let kv = JointKv { n: 1, d: 2, keys: vec![f64::INFINITY, 0.0], values: vec![0.0; 2], positions: vec![(0, 0)] };
        assert_eq!(stga(&q, &kv, &TextTokens::empty(2), &params, &rope), Err(AttentionError::NonFiniteLogit));
    }

    #[test]
    fn rows_sum_to_one() {
        let params = AttentionParams::random(2, 4, 21);
        let rope = RopeSpec::for_head_dim(4).unwrap();
        let maps: Vec<TokenMap> = (0..4).map(|i| random_map(3, 2, 8, 40 + i)).collect();
        let refs: Vec<&TokenMap> = maps.iter().collect();
        let kv = build_joint_kv(&refs, &params).unwrap();
        let text = TextTokens::random(3, 8, 2);
        let (_, probs) = stga_with_probs(&maps[0], &kv, &text, &params, &rope).unwrap();
        assert_eq!(probs.len(), 6 * 2);
        for row in probs {
            assert_eq!(row.len(), 3 + 24);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

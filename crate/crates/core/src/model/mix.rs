/// `P(w) = lambda * P_vocab(w) + (1 - lambda) * sum_{i: src_i = w} a_i` over an
/// extended vocabulary of `ext_size` ids. `a` and `source_ids` are aligned by
/// source position.
pub fn mix_distribution(p_vocab: &[f64], a: &[f64], lambda: f64, source_ids: &[usize], ext_size: usize) -> Vec<f64> {
    assert_eq!(a.len(), source_ids.len(), "attention and source ids must align");
    assert!(ext_size >= p_vocab.len(), "extended vocabulary smaller than the base");
    let mut out = vec![0.0; ext_size];
    for (o, p) in out.iter_mut().zip(p_vocab) {
        *o = lambda * p;
    }
    for (&w, &ai) in source_ids.iter().zip(a) {
        out[w] += (1.0 - lambda) * ai;
    }
    out
}

/// Splits the mixed probability of `word` into its vocabulary and copy terms.
pub fn mixture_terms(p_vocab: &[f64], a: &[f64], lambda: f64, source_ids: &[usize], word: usize) -> (f64, f64) {
    let gen = p_vocab.get(word).map_or(0.0, |p| lambda * p);
    let copy: f64 = source_ids.iter().zip(a).filter(|(&w, _)| w == word).map(|(_, ai)| ai).sum();
    (gen, (1.0 - lambda) * copy)
}

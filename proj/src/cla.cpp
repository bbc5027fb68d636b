#include "fmla/cla.hpp"

#include <cmath>

#include "fmla/error.hpp"

namespace fmla {

ClaBlockParams ClaBlockParams::init(int d, int n_heads, int c, int c_dcn,
                                    int ffn_expansion, Rng& rng) {
  if (d % n_heads != 0)
    throw ConfigError("model dim " + std::to_string(d) +
                      " not divisible by heads " + std::to_string(n_heads));
  if (c_dcn % n_heads != 0)
    throw ConfigError("DCN channels " + std::to_string(c_dcn) +
                      " not divisible by heads " + std::to_string(n_heads));
  ClaBlockParams p;
  p.n_heads = n_heads;
  p.d = d;
  p.d_h = d / n_heads;
  p.c = c;
  p.c_dcn = c_dcn;
  p.wq = Tensor::randn({d, p.d_h}, rng, 0.02, true);
  p.mix = Tensor::full({n_heads, p.d_h}, 1.0, true);
  for (int h = 0; h < n_heads; ++h)
    p.wv.push_back(Tensor::randn({d, p.d_h}, rng, 0.02, true));
  p.key_conv = Tensor::randn({p.d_h, n_heads * p.d_h, 1}, rng, 0.02, true);
  p.comp_gen = Tensor::randn({n_heads * c, c_dcn / n_heads, 1}, rng, 0.02, true);
  p.wo = Tensor::randn({d, d}, rng, 0.02, true);
  p.wo_b = Tensor::zeros({d}, true);
  const int e = ffn_expansion * d;
  p.ffn_w1 = Tensor::randn({d, e}, rng, 0.02, true);
  p.ffn_b1 = Tensor::zeros({e}, true);
  p.ffn_w2 = Tensor::randn({e, d}, rng, 0.02, true);
  p.ffn_b2 = Tensor::zeros({d}, true);
  p.ln1_g = Tensor::full({d}, 1.0, true);
  p.ln1_b = Tensor::zeros({d}, true);
  p.ln2_g = Tensor::full({d}, 1.0, true);
  p.ln2_b = Tensor::zeros({d}, true);
  return p;
}

std::vector<Tensor> gen_compression_maps(const Tensor& h_dcn,
                                         const ClaBlockParams& p, int c_eff,
                                         bool normalize_f) {
  if (h_dcn.dim(0) != p.c_dcn)
    throw DimensionError("gen_compression_maps: DCN features " +
                         dims_str(h_dcn.dims()) + " vs expected channels " +
                         std::to_string(p.c_dcn));
  // Group g reads only DCN channel group G_g and emits this head's C channels.
  Tensor all = conv1d_same(h_dcn, p.comp_gen, p.n_heads);  // [(N_h*C) x n]
  std::vector<Tensor> fs;
  fs.reserve(static_cast<std::size_t>(p.n_heads));
  for (int h = 0; h < p.n_heads; ++h) {
    Tensor f = slice_rows(all, h * p.c, h * p.c + c_eff);
    if (normalize_f) f = softmax_lastdim(f);
    fs.push_back(std::move(f));
  }
  return fs;
}

Tensor compress_values(const Tensor& s, const Tensor& f_i, const Tensor& wv_i) {
  return matmul(f_i, matmul(s, wv_i));
}

Tensor regenerate_key(std::span<const Tensor> vbars, const Tensor& key_conv) {
  Tensor cat = vbars.size() == 1 ? vbars[0]
                                 : concat_cols(vbars);  // [C_eff x (N_h*d_h)]
  // The kernel-1 conv maps each compressed row independently, which keeps the
  // key position-wise: row r of K_hat is a function of row r of the Vbar_i.
  Tensor channels = transpose(cat);                  // [(N_h*d_h) x C_eff]
  Tensor key = conv1d_same(channels, key_conv, 1);   // [d_h x C_eff]
  return transpose(key);
}

HeadResult collab_attention_head(const Tensor& s_norm, int head,
                                 const Tensor& khat, const Tensor& vbar,
                                 const ClaBlockParams& p, const Tensor& qbase) {
  Tensor qb = qbase.defined() ? qbase : matmul(s_norm, p.wq);
  Tensor m_i = reshape(slice_rows(p.mix, head, head + 1), {p.d_h});
  HeadResult r;
  r.q = scale_columns(qb, m_i);
  Tensor logits = scale(matmul_nt(r.q, khat), 1.0 / std::sqrt(p.d_h));
  r.attn = softmax_lastdim(logits);
  r.hbar = matmul(r.attn, vbar);
  return r;
}

Tensor merge_heads_residual(std::span<const HeadResult> heads,
                            const ClaBlockParams& p,
                            const std::vector<MaskBits>& head_masks,
                            bool pooling_residual) {
  std::vector<Tensor> merged;
  merged.reserve(heads.size());
  for (std::size_t h = 0; h < heads.size(); ++h) {
    Tensor hi = pooling_residual
                    ? add(heads[h].hbar, avg_pool_rows(heads[h].q, 3))
                    : heads[h].hbar;
    if (!head_masks.empty()) {
      const MaskBits& m =
          head_masks[std::min(h, head_masks.size() - 1)];
      hi = apply_mask(hi, m);
    }
    merged.push_back(std::move(hi));
  }
  Tensor cat = merged.size() == 1 ? merged[0] : concat_cols(merged);
  return shift_columns(matmul(cat, p.wo), p.wo_b);
}

Tensor fmla_block_forward(const Tensor& s, const Tensor& h_dcn,
                          const ClaBlockParams& p,
                          const std::vector<MaskBits>& head_masks,
                          const ClaOptions& opts, AttentionActivations* acts) {
  const int n = s.dim(0);
  if (s.dim(1) != p.d)
    throw DimensionError("fmla_block_forward: input " + dims_str(s.dims()) +
                         " vs model dim " + std::to_string(p.d));
  const int c_eff = effective_compression(p.c, n);

  Tensor s_norm = layer_norm(s, p.ln1_g, p.ln1_b);
  std::vector<Tensor> fs =
      gen_compression_maps(h_dcn, p, c_eff, opts.normalize_f);
  std::vector<Tensor> vbars;
  vbars.reserve(fs.size());
  for (int h = 0; h < p.n_heads; ++h)
    vbars.push_back(compress_values(s_norm, fs[static_cast<std::size_t>(h)],
                                    p.wv[static_cast<std::size_t>(h)]));
  Tensor khat = regenerate_key(vbars, p.key_conv);
  Tensor qbase = matmul(s_norm, p.wq);

  std::vector<HeadResult> heads;
  heads.reserve(static_cast<std::size_t>(p.n_heads));
  for (int h = 0; h < p.n_heads; ++h)
    heads.push_back(collab_attention_head(
        s_norm, h, khat, vbars[static_cast<std::size_t>(h)], p, qbase));

  Tensor attn_out =
      merge_heads_residual(heads, p, head_masks, opts.pooling_residual);
  Tensor s1 = add(s, attn_out);

  Tensor ffn_in = layer_norm(s1, p.ln2_g, p.ln2_b);
  Tensor ffn = shift_columns(
      matmul(gelu(shift_columns(matmul(ffn_in, p.ffn_w1), p.ffn_b1)), p.ffn_w2),
      p.ffn_b2);
  Tensor out = add(s1, ffn);

  if (acts) {
    acts->khat = khat;
    acts->f = std::move(fs);
    acts->vbar = std::move(vbars);
    for (auto& h : heads) {
      acts->q.push_back(h.q);
      acts->attn.push_back(h.attn);
      acts->hbar.push_back(h.hbar);
    }
  }
  return out;
}

}  // namespace fmla

#pragma once

#include <span>
#include <vector>

#include "fmla/mask.hpp"
#include "fmla/ops.hpp"
#include "fmla/tensor.hpp"

namespace fmla {

// Learnable state of one CLA block. All heads share one query projection and
// one regenerated key; per-head identity comes from the mix vectors and the
// per-head value projections.
struct ClaBlockParams {
  Tensor wq;               // shared query projection [d x d_h]
  Tensor mix;              // mix vectors, row i is m_i [N_h x d_h]
  std::vector<Tensor> wv;  // per-head value projections [d x d_h]
  Tensor key_conv;         // kernel-1 conv regenerating the key [d_h x (N_h*d_h) x 1]
  Tensor comp_gen;         // grouped kernel-1 conv generating the F_i [(N_h*C) x (c_dcn/N_h) x 1]
  Tensor wo;               // output projection [d x d]
  Tensor wo_b;             // [d]
  Tensor ffn_w1, ffn_b1;   // [d x e*d], [e*d]
  Tensor ffn_w2, ffn_b2;   // [e*d x d], [d]
  Tensor ln1_g, ln1_b;     // [d]
  Tensor ln2_g, ln2_b;     // [d]
  int n_heads = 0;
  int d = 0;
  int d_h = 0;
  int c = 0;      // compressed length budget
  int c_dcn = 0;  // channels of the paired DCN block

  static ClaBlockParams init(int d, int n_heads, int c, int c_dcn,
                             int ffn_expansion, Rng& rng);
};

struct ClaOptions {
  bool pooling_residual = true;
  bool normalize_f = false;  // per-row softmax over positions of each F_i
};

// Intermediates of one block forward, exposed for inspection and tests.
struct AttentionActivations {
  std::vector<Tensor> q;     // per head [n x d_h]
  std::vector<Tensor> f;     // per head [C_eff x n]
  std::vector<Tensor> vbar;  // per head [C_eff x d_h]
  Tensor khat;               // [C_eff x d_h]
  std::vector<Tensor> attn;  // per head [n x C_eff], rows sum to 1
  std::vector<Tensor> hbar;  // per head [n x d_h]
};

inline int effective_compression(int c, int n) { return std::min(c, n); }

// F_i for every head from the paired DCN features: group i of the grouped
// kernel-1 conv reads only DCN channel group G_i and emits C channels, cut to
// C_eff rows. Raw weights unless normalize_f.
std::vector<Tensor> gen_compression_maps(const Tensor& h_dcn,
                                         const ClaBlockParams& p, int c_eff,
                                         bool normalize_f = false);

// Vbar_i = F_i (s W_i^V)
Tensor compress_values(const Tensor& s, const Tensor& f_i, const Tensor& wv_i);

// K_hat from the concatenated compressed values via the kernel-1 conv; row r
// of K_hat depends only on row r of each Vbar_i.
Tensor regenerate_key(std::span<const Tensor> vbars, const Tensor& key_conv);

struct HeadResult {
  Tensor q;     // [n x d_h]
  Tensor attn;  // [n x C_eff]
  Tensor hbar;  // [n x d_h]
};

// Q_i = (s_norm wq) .* m_i; A_i = softmax(Q_i K_hat^T / sqrt(d_h));
// Hbar_i = A_i Vbar_i. qbase, when defined, supplies the shared s_norm*wq
// product so the block computes it once.
HeadResult collab_attention_head(const Tensor& s_norm, int head,
                                 const Tensor& khat, const Tensor& vbar,
                                 const ClaBlockParams& p,
                                 const Tensor& qbase = Tensor());

// Per head: H_i = Hbar_i + AvgPool3(Q_i), then the head's mask, then
// concatenation and the output projection. head_masks may hold one mask per
// head, a single shared mask, or nothing (masking off).
Tensor merge_heads_residual(std::span<const HeadResult> heads,
                            const ClaBlockParams& p,
                            const std::vector<MaskBits>& head_masks,
                            bool pooling_residual = true);

// Pre-norm residual block: s + attention(LN(s)), then s' + FFN(LN(s')) with
// GELU inside the FFN.
Tensor fmla_block_forward(const Tensor& s, const Tensor& h_dcn,
                          const ClaBlockParams& p,
                          const std::vector<MaskBits>& head_masks,
                          const ClaOptions& opts = {},
                          AttentionActivations* acts = nullptr);

}  // namespace fmla

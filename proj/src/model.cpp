#include "fmla/model.hpp"

#include <algorithm>
#include <cmath>

#include "fmla/error.hpp"
#include "fmla/kernels.hpp"

namespace fmla {

Tensor sinusoidal_encoding(int n, int d) {
  std::vector<double> pe(static_cast<std::size_t>(n) * d);
  for (int t = 0; t < n; ++t)
    for (int j = 0; j < d; j += 2) {
      const double rate = std::pow(10000.0, static_cast<double>(j) / d);
      pe[static_cast<std::size_t>(t) * d + j] = std::sin(t / rate);
      if (j + 1 < d)
        pe[static_cast<std::size_t>(t) * d + j + 1] = std::cos(t / rate);
    }
  return Tensor::from_data({n, d}, std::move(pe));
}

FmlaModel::FmlaModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng = make_rng({cfg_.seed, kInitStream});

  stem_w_ = Tensor::randn({1, cfg_.d}, rng, 0.02, true);
  stem_b_ = Tensor::zeros({cfg_.d}, true);
  trainable_.emplace_back("stem.w", stem_w_);
  trainable_.emplace_back("stem.b", stem_b_);

  int c_in = 1;
  for (int l = 0; l < cfg_.num_blocks; ++l) {
    const int c_out = cfg_.dcn_channels[static_cast<std::size_t>(l)];
    dcn_.push_back(DcnBlockParams::init(c_in, c_out, cfg_.kernel_size, rng));
    cla_.push_back(ClaBlockParams::init(cfg_.d, cfg_.num_heads, cfg_.c, c_out,
                                        cfg_.ffn_expansion, rng));
    const std::string dp = "dcn" + std::to_string(l + 1) + ".";
    DcnBlockParams& db = dcn_.back();
    trainable_.emplace_back(dp + "kernel", db.kernel);
    trainable_.emplace_back(dp + "offset_w", db.offset_w);
    trainable_.emplace_back(dp + "offset_b", db.offset_b);
    trainable_.emplace_back(dp + "bn_gain", db.bn_gain);
    trainable_.emplace_back(dp + "bn_bias", db.bn_bias);
    buffers_.emplace_back(dp + "bn_running_mean", db.bn_running_mean);
    buffers_.emplace_back(dp + "bn_running_var", db.bn_running_var);
    const std::string cp = "cla" + std::to_string(l + 1) + ".";
    ClaBlockParams& cb = cla_.back();
    trainable_.emplace_back(cp + "wq", cb.wq);
    trainable_.emplace_back(cp + "mix", cb.mix);
    for (int h = 0; h < cfg_.num_heads; ++h)
      trainable_.emplace_back(cp + "wv" + std::to_string(h + 1),
                              cb.wv[static_cast<std::size_t>(h)]);
    trainable_.emplace_back(cp + "key_conv", cb.key_conv);
    trainable_.emplace_back(cp + "comp_gen", cb.comp_gen);
    trainable_.emplace_back(cp + "wo", cb.wo);
    trainable_.emplace_back(cp + "wo_b", cb.wo_b);
    trainable_.emplace_back(cp + "ffn_w1", cb.ffn_w1);
    trainable_.emplace_back(cp + "ffn_b1", cb.ffn_b1);
    trainable_.emplace_back(cp + "ffn_w2", cb.ffn_w2);
    trainable_.emplace_back(cp + "ffn_b2", cb.ffn_b2);
    trainable_.emplace_back(cp + "ln1_g", cb.ln1_g);
    trainable_.emplace_back(cp + "ln1_b", cb.ln1_b);
    trainable_.emplace_back(cp + "ln2_g", cb.ln2_g);
    trainable_.emplace_back(cp + "ln2_b", cb.ln2_b);
    c_in = c_out;
  }

  head_cla_w_ = Tensor::randn({cfg_.d, cfg_.num_classes}, rng, 0.02, true);
  head_cla_b_ = Tensor::zeros({cfg_.num_classes}, true);
  head_dcn_w_ = Tensor::randn({cfg_.dcn_channels.back(), cfg_.num_classes}, rng,
                              0.02, true);
  head_dcn_b_ = Tensor::zeros({cfg_.num_classes}, true);
  trainable_.emplace_back("head_cla.w", head_cla_w_);
  trainable_.emplace_back("head_cla.b", head_cla_b_);
  trainable_.emplace_back("head_dcn.w", head_dcn_w_);
  trainable_.emplace_back("head_dcn.b", head_dcn_b_);

  for (auto& [name, t] : trainable_) t.set_name(name);
  for (auto& [name, t] : buffers_) t.set_name(name);
}

Tensor FmlaModel::embed_stem(std::span<const double> series) const {
  const int n = static_cast<int>(series.size());
  Tensor x = Tensor::from_data({n, 1}, {series.begin(), series.end()});
  Tensor lifted = shift_columns(matmul(x, stem_w_), stem_b_);
  return add(lifted, sinusoidal_encoding(n, cfg_.d));
}

std::vector<MaskBits> FmlaModel::masks_for(MaskKind kind, std::uint64_t step,
                                           int pass, int layer,
                                           int sample) const {
  MaskSpec spec;
  spec.ratio = cfg_.mask_ratio;
  spec.phase = cfg_.mask_phase;
  spec.per_head =
      cfg_.mask_per_head && cfg_.mask_scope == MaskScope::kPerHead;
  if (kind == MaskKind::kRegular) {
    spec.mode = MaskMode::kRegular;
  } else {
    spec.mode = MaskMode::kRandom;
    spec.seed = mix_seed({cfg_.seed, kMaskStream, step,
                          static_cast<std::uint64_t>(pass),
                          static_cast<std::uint64_t>(layer),
                          static_cast<std::uint64_t>(sample)});
  }
  return make_layer_masks(spec, cfg_.seq_len, cfg_.num_heads);
}

FmlaModel::DcnStream FmlaModel::run_dcn_stream(
    std::span<const double> series, int batch, bool training,
    std::vector<std::uint64_t>* per_block_macs) {
  const int n = cfg_.seq_len;
  DcnStream ds;
  std::vector<Tensor> cur;
  cur.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b)
    cur.push_back(Tensor::from_data(
        {1, n}, {series.begin() + static_cast<std::size_t>(b) * n,
                 series.begin() + static_cast<std::size_t>(b + 1) * n}));
  for (int l = 0; l < cfg_.num_blocks; ++l) {
    const std::uint64_t before = kern::mac_counter();
    cur = dcn_block_forward_batch(cur, dcn_[static_cast<std::size_t>(l)],
                                  training);
    if (per_block_macs)
      (*per_block_macs)[static_cast<std::size_t>(l)] +=
          kern::mac_counter() - before;
    ds.features.push_back(cur);
  }
  std::vector<Tensor> logits;
  logits.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b)
    logits.push_back(branch_logits_dcn(cur[static_cast<std::size_t>(b)]));
  ds.u_dcn = batch == 1 ? logits[0] : concat_rows(logits);
  return ds;
}

Tensor FmlaModel::branch_logits_cla(const Tensor& s) const {
  Tensor pooled = mean_rows(s);  // [1 x d]
  return shift_columns(matmul(pooled, head_cla_w_),
                       head_cla_b_);
}

Tensor FmlaModel::branch_logits_dcn(const Tensor& feat) const {
  Tensor pooled = reshape(mean_cols(feat), {1, feat.dim(0)});
  return shift_columns(matmul(pooled, head_dcn_w_), head_dcn_b_);
}

Tensor FmlaModel::run_cla_stream(std::span<const double> series, int batch,
                                 const DcnStream& ds, MaskKind kind,
                                 std::uint64_t step, int pass,
                                 std::vector<std::uint64_t>* per_block_macs)
    const {
  const int n = cfg_.seq_len;
  ClaOptions opts{cfg_.pooling_residual, cfg_.normalize_f};
  std::vector<Tensor> states;
  states.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b)
    states.push_back(
        embed_stem(series.subspan(static_cast<std::size_t>(b) * n,
                                  static_cast<std::size_t>(n))));
  for (int l = 0; l < cfg_.num_blocks; ++l) {
    const std::uint64_t before = kern::mac_counter();
    for (int b = 0; b < batch; ++b) {
      auto masks = masks_for(kind, step, pass, l, b);
      Tensor& s = states[static_cast<std::size_t>(b)];
      if (cfg_.mask_scope == MaskScope::kBlockOutput) {
        s = fmla_block_forward(
            s, ds.features[static_cast<std::size_t>(l)][static_cast<std::size_t>(b)],
            cla_[static_cast<std::size_t>(l)], {}, opts);
        if (!masks.empty()) s = apply_mask(s, masks[0]);
      } else {
        s = fmla_block_forward(
            s, ds.features[static_cast<std::size_t>(l)][static_cast<std::size_t>(b)],
            cla_[static_cast<std::size_t>(l)], masks, opts);
      }
    }
    if (per_block_macs)
      (*per_block_macs)[static_cast<std::size_t>(l)] +=
          kern::mac_counter() - before;
  }
  std::vector<Tensor> logits;
  logits.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b)
    logits.push_back(branch_logits_cla(states[static_cast<std::size_t>(b)]));
  return batch == 1 ? logits[0] : concat_rows(logits);
}

namespace {
void check_batch(std::span<const double> series, int batch, int n) {
  if (batch < 1) throw DataError("empty batch");
  if (static_cast<std::int64_t>(series.size()) !=
      static_cast<std::int64_t>(batch) * n)
    throw DataError("series length " + std::to_string(series.size()) +
                    " does not match batch " + std::to_string(batch) +
                    " x seq_len " + std::to_string(n));
}
}  // namespace

BranchOutputs FmlaModel::forward_eval(std::span<const double> series, int batch,
                                      std::vector<std::uint64_t>* per_block_macs) {
  check_batch(series, batch, cfg_.seq_len);
  NoGradGuard ng;
  if (per_block_macs)
    per_block_macs->assign(static_cast<std::size_t>(cfg_.num_blocks), 0);
  DcnStream ds = run_dcn_stream(series, batch, /*training=*/false,
                                per_block_macs);
  Tensor u_cla = run_cla_stream(series, batch, ds, MaskKind::kRegular,
                                /*step=*/0, /*pass=*/0, per_block_macs);
  BranchOutputs out;
  out.u_dcn = ds.u_dcn;
  out.u_cla = u_cla;
  out.u_sum = add(out.u_dcn, out.u_cla);
  out.y_dcn = softmax_lastdim(out.u_dcn);
  out.y_cla = softmax_lastdim(out.u_cla);
  out.y_hat = softmax_lastdim(out.u_sum);
  return out;
}

TrainStepResult FmlaModel::forward_train(std::span<const double> series,
                                         const std::vector<int>& labels,
                                         int batch, std::uint64_t step,
                                         const TeacherSnapshot* frozen) {
  check_batch(series, batch, cfg_.seq_len);
  if (static_cast<int>(labels.size()) != batch)
    throw DataError("labels size " + std::to_string(labels.size()) +
                    " vs batch " + std::to_string(batch));
  const int nclass = cfg_.num_classes;
  const int npass = cfg_.self_distill_n;

  TrainStepResult r;
  r.parts.alpha = cfg_.alpha;
  r.parts.beta = cfg_.beta;
  r.parts.n_ensemble = npass;

  // The DCN stream carries no masks, so one training-mode run serves every
  // pass; gradients from all passes accumulate through the shared subgraph.
  DcnStream ds = run_dcn_stream(series, batch, /*training=*/true, nullptr);
  Tensor y_dcn = softmax_lastdim(ds.u_dcn);
  Tensor dcn_teacher =
      frozen ? Tensor::from_data(y_dcn.dims(), frozen->y_dcn) : y_dcn;

  std::vector<Tensor> ce_terms, kl2_terms, random_yhats;
  for (int p = 0; p < npass; ++p) {
    Tensor u_cla = run_cla_stream(series, batch, ds, MaskKind::kRandomTrain,
                                  step, p, nullptr);
    BranchOutputs bo;
    bo.u_dcn = ds.u_dcn;
    bo.u_cla = u_cla;
    bo.u_sum = add(ds.u_dcn, u_cla);
    bo.y_dcn = y_dcn;
    bo.y_cla = softmax_lastdim(u_cla);
    bo.y_hat = softmax_lastdim(bo.u_sum);
    ce_terms.push_back(cross_entropy_with_logits(bo.u_sum, labels));
    if (cfg_.alpha != 0.0)
      kl2_terms.push_back(online_distill_loss(dcn_teacher, bo.y_cla, cfg_.alpha));
    random_yhats.push_back(bo.y_hat);
    r.passes.push_back(std::move(bo));
  }

  Tensor u_cla_reg = run_cla_stream(series, batch, ds, MaskKind::kRegular, step,
                                    npass, nullptr);
  BranchOutputs reg;
  reg.u_dcn = ds.u_dcn;
  reg.u_cla = u_cla_reg;
  reg.u_sum = add(ds.u_dcn, u_cla_reg);
  reg.y_dcn = y_dcn;
  reg.y_cla = softmax_lastdim(u_cla_reg);
  reg.y_hat = softmax_lastdim(reg.u_sum);

  // Loss_3: mean cross entropy over the random-mask passes.
  Tensor l3 = ce_terms[0];
  for (std::size_t i = 1; i < ce_terms.size(); ++i) l3 = add(l3, ce_terms[i]);
  if (npass > 1) l3 = scale(l3, 1.0 / npass);

  // Loss_2: online distillation, averaged over the passes.
  Tensor l2 = Tensor::zeros({1});
  if (cfg_.alpha != 0.0) {
    l2 = kl2_terms[0];
    for (std::size_t i = 1; i < kl2_terms.size(); ++i) l2 = add(l2, kl2_terms[i]);
    if (npass > 1) l2 = scale(l2, 1.0 / npass);
  }

  // Loss_1: self-distillation from the mask ensemble to the regular pass.
  Tensor l1 = Tensor::zeros({1});
  if (cfg_.beta != 0.0) {
    if (frozen) {
      Tensor teacher =
          Tensor::from_data(reg.y_hat.dims(), frozen->y_mean_random);
      l1 = scale(kl_divergence(teacher, reg.y_hat), cfg_.beta);
    } else {
      l1 = self_distill_loss(random_yhats, reg.y_hat, cfg_.beta);
    }
  }

  Tensor total = add(add(l1, l2), l3);
  r.parts.loss1 = l1.scalar();
  r.parts.loss2 = l2.scalar();
  r.parts.loss3 = l3.scalar();
  r.parts.total = total.scalar();
  r.total = total;

  // Captured teachers (echo the frozen ones when supplied).
  if (frozen) {
    r.teachers = *frozen;
  } else {
    r.teachers.y_dcn = y_dcn.raw();
    std::vector<double> mean(reg.y_hat.raw().size(), 0.0);
    for (const Tensor& t : random_yhats)
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += t.raw()[i];
    for (double& v : mean) v /= npass;
    r.teachers.y_mean_random = std::move(mean);
  }

  r.regular_preds.resize(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    int best = 0;
    for (int k = 1; k < nclass; ++k)
      if (reg.u_sum(b, k) > reg.u_sum(b, best)) best = k;
    r.regular_preds[static_cast<std::size_t>(b)] = best;
  }
  r.passes.push_back(std::move(reg));
  return r;
}

std::vector<int> FmlaModel::predict_labels(std::span<const double> series,
                                           int batch) {
  BranchOutputs out = forward_eval(series, batch);
  std::vector<int> preds(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    int best = 0;
    for (int k = 1; k < cfg_.num_classes; ++k)
      if (out.u_sum(b, k) > out.u_sum(b, best)) best = k;
    preds[static_cast<std::size_t>(b)] = best;
  }
  return preds;
}

std::int64_t FmlaModel::count_params() const {
  std::int64_t total = 0;
  for (const auto& [name, t] : trainable_) total += t.numel();
  return total;
}

std::vector<std::pair<std::string, std::int64_t>> FmlaModel::param_breakdown()
    const {
  std::vector<std::pair<std::string, std::int64_t>> out;
  auto bucket = [&](const std::string& name) -> std::int64_t& {
    const std::string key = name.substr(0, name.find('.'));
    for (auto& [k, v] : out)
      if (k == key) return v;
    out.emplace_back(key, 0);
    return out.back().second;
  };
  for (const auto& [name, t] : trainable_) bucket(name) += t.numel();
  return out;
}

}  // namespace fmla

#include "adaseg/fusion.hpp"

#include <cmath>
#include <stdexcept>

#include "adaseg/ops.hpp"

namespace adaseg::fusion {

namespace ag = adaseg::ag;
using nn::ParamSet;

FusionConfig FusionConfig::from_model(const model::ModelConfig& m) {
  FusionConfig f;
  f.model_width = m.width;
  f.pixel_width = m.pixel_width();
  f.queries = m.queries;
  f.classes = m.classes;
  f.mask_size = m.mask_size();
  const int s32 = m.res(5);
  f.spatial_tokens = s32 * s32;
  return f;
}

namespace {

void make_linear(ParamSet& ps, const std::string& group, const std::string& name, int in, int out,
                 Rng& rng, double scale_mul = 1.0) {
  const double scale = scale_mul / std::sqrt(static_cast<double>(in));
  ps.add(group, name + "_w", nn::randn({in, out}, scale, rng));
  ps.add(group, name + "_b", nn::randn({out}, 0.0, rng));
}

void make_ln(ParamSet& ps, const std::string& group, const std::string& name, int d) {
  ag::Tensor g = ag::Tensor::full({d}, 1.0);
  g.set_requires_grad(true);
  ag::Tensor b = ag::Tensor::full({d}, 0.0);
  b.set_requires_grad(true);
  ps.add(group, name + "_g", std::move(g));
  ps.add(group, name + "_b", std::move(b));
}

void make_attn(ParamSet& ps, const std::string& group, const std::string& name, int d, Rng& rng) {
  make_linear(ps, group, name + "_q", d, d, rng);
  make_linear(ps, group, name + "_k", d, d, rng);
  make_linear(ps, group, name + "_v", d, d, rng);
  make_linear(ps, group, name + "_o", d, d, rng);
}

ag::Tensor linear_fwd(const ParamSet& ps, const std::string& group, const std::string& name,
                      const ag::Tensor& x) {
  return ag::linear(x, ps.get(group, name + "_w"), ps.get(group, name + "_b"));
}

ag::Tensor ln_fwd(const ParamSet& ps, const std::string& group, const std::string& name,
                  const ag::Tensor& x) {
  return ag::layer_norm_lastdim(x, ps.get(group, name + "_g"), ps.get(group, name + "_b"));
}

ag::Tensor mha_fwd(const ParamSet& ps, const std::string& group, const std::string& name,
                   const ag::Tensor& q_in, const ag::Tensor& kv_in, int heads,
                   const ag::Tensor* mask = nullptr) {
  ag::Tensor q = linear_fwd(ps, group, name + "_q", q_in);
  ag::Tensor k = linear_fwd(ps, group, name + "_k", kv_in);
  ag::Tensor v = linear_fwd(ps, group, name + "_v", kv_in);
  const int d = q.shape()[1], dh = d / heads;
  std::vector<ag::Tensor> outs;
  for (int h = 0; h < heads; ++h) {
    outs.push_back(ag::sdpa(ag::slice(q, 1, h * dh, dh), ag::slice(k, 1, h * dh, dh),
                            ag::slice(v, 1, h * dh, dh), mask));
  }
  return linear_fwd(ps, group, name + "_o", ag::concat(outs, 1));
}

ag::Tensor ffn_fwd(const ParamSet& ps, const std::string& group, const std::string& name,
                   const ag::Tensor& x) {
  return linear_fwd(ps, group, name + "_2", ag::gelu(linear_fwd(ps, group, name + "_1", x)));
}

ag::Tensor flatten_hw(const ag::Tensor& x) {
  const int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  return ag::transpose2(ag::reshape(x, {c, hw}));
}

int vanilla_in(const FusionConfig& cfg) {
  return cfg.mask_size * cfg.mask_size + (cfg.classes + 1) + cfg.model_width;
}
int mlp_in(const FusionConfig& cfg) { return cfg.model_width + (cfg.classes + 1); }

}  // namespace

nn::ParamSet init_fusion(const FusionConfig& cfg, std::uint64_t seed) {
  Rng rng = Rng(seed).fork(0xF051);
  ParamSet ps;
  const int d = cfg.width;

  make_linear(ps, kImageEmbedder, "proj", cfg.pixel_width, d, rng);
  if (cfg.embedder == EmbedderVariant::Vanilla) {
    make_linear(ps, kPredEmbedder, "lin", vanilla_in(cfg), d, rng);
  } else {
    make_linear(ps, kPredEmbedder, "fc1", mlp_in(cfg), d, rng);
    make_linear(ps, kPredEmbedder, "fc2", d, d, rng);
  }
  ps.add(kImageEmbedder, "type_embed", nn::randn({2, d}, 0.02, rng));
  ps.add(kImageEmbedder, "frame_embed", nn::randn({cfg.max_frames, d}, 0.02, rng));

  if (cfg.mode == FusionMode::FixedLengthDecoder)
    ps.add(kTransformer, "latents", nn::randn({cfg.latents, d}, 0.02, rng));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string pre = "l" + std::to_string(l);
    if (cfg.mode == FusionMode::FixedLengthDecoder) {
      make_ln(ps, kTransformer, pre + "_lns", d);
      make_attn(ps, kTransformer, pre + "_self", d, rng);
      make_ln(ps, kTransformer, pre + "_lnc", d);
      make_attn(ps, kTransformer, pre + "_cross", d, rng);
    } else {
      make_ln(ps, kTransformer, pre + "_lns", d);
      make_attn(ps, kTransformer, pre + "_self", d, rng);
    }
    make_ln(ps, kTransformer, pre + "_lnf", d);
    make_linear(ps, kTransformer, pre + "_ffn_1", d, 2 * d, rng);
    make_linear(ps, kTransformer, pre + "_ffn_2", 2 * d, d, rng);
  }

  make_linear(ps, kLossDecoder, "fc1", d, d, rng);
  make_linear(ps, kLossDecoder, "fc2", d, 1, rng, cfg.loss_head_init * std::sqrt(static_cast<double>(d)));
  make_linear(ps, kActionDecoder, "fc1", d, d, rng);
  make_linear(ps, kActionDecoder, "fc2", d, 5, rng);
  make_linear(ps, kLogitsDecoder, "fc", d, cfg.queries * (cfg.classes + 1), rng);
  make_linear(ps, kMasksDecoder, "fc", d, cfg.queries * cfg.mask_size * cfg.mask_size, rng);
  return ps;
}

void zero_loss_head(nn::ParamSet& phi) {
  for (const char* name : {"fc2_w", "fc2_b"}) {
    auto& t = phi.at(kLossDecoder, name);
    for (auto& v : t.leaf_data()) v = 0.0;
  }
}

TokenSeq embed_frames(const ParamSet& phi, const FusionConfig& cfg,
                      const std::vector<model::SegOutput>& outs) {
  if (outs.empty()) throw std::runtime_error("embed_frames: empty frame list");
  if (static_cast<int>(outs.size()) > cfg.max_frames)
    throw std::runtime_error("embed_frames: more frames than frame embeddings");
  const int d = cfg.width;

  TokenSeq seq;
  std::vector<ag::Tensor> all;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const auto& o = outs[i];
    if (o.feat_1_32.shape()[1] * o.feat_1_32.shape()[2] != cfg.spatial_tokens)
      throw std::runtime_error("embed_frames: inconsistent frame shapes");

    ag::Tensor spatial = linear_fwd(phi, kImageEmbedder, "proj", flatten_hw(o.feat_1_32));

    ag::Tensor pred;
    if (cfg.embedder == EmbedderVariant::Vanilla) {
      ag::Tensor flat_masks =
          ag::reshape(o.mask_logits, {cfg.queries, cfg.mask_size * cfg.mask_size});
      ag::Tensor cat = ag::concat({flat_masks, o.class_logits, o.mask_features}, 1);
      pred = linear_fwd(phi, kPredEmbedder, "lin", cat);
    } else {
      ag::Tensor cat = ag::concat({o.mask_features, o.class_logits}, 1);
      pred = linear_fwd(phi, kPredEmbedder, "fc2",
                        ag::gelu(linear_fwd(phi, kPredEmbedder, "fc1", cat)));
    }
    seq.pred_embeds.push_back(pred);

    const auto& type_embed = phi.get(kImageEmbedder, "type_embed");
    const auto& frame_embed = phi.get(kImageEmbedder, "frame_embed");
    std::vector<int> fid(1, static_cast<int>(i));
    ag::Tensor fvec = ag::reshape(ag::embedding(frame_embed, fid), {d});
    ag::Tensor svec = ag::add(ag::reshape(ag::embedding(type_embed, {0}), {d}), fvec);
    ag::Tensor pvec = ag::add(ag::reshape(ag::embedding(type_embed, {1}), {d}), fvec);
    spatial = ag::add(spatial, ag::repeat_rows(svec, spatial.shape()[0]));
    pred = ag::add(pred, ag::repeat_rows(pvec, pred.shape()[0]));

    ag::Tensor frame_tokens = ag::concat({spatial, pred}, 0);
    seq.frame_sizes.push_back(frame_tokens.shape()[0]);
    all.push_back(std::move(frame_tokens));
  }
  seq.tokens = all.size() == 1 ? all[0] : ag::concat(all, 0);
  return seq;
}

FusionOutput fuse(const ParamSet& phi, const FusionConfig& cfg, const TokenSeq& seq) {
  const int d = cfg.width;
  const int frames = static_cast<int>(seq.frame_sizes.size());

  ag::Tensor pooled;
  if (cfg.mode == FusionMode::FixedLengthDecoder) {
    if (frames != cfg.expected_frames)
      throw std::runtime_error("fuse: fixed-length decoder expects " +
                               std::to_string(cfg.expected_frames) + " frames, got " +
                               std::to_string(frames));
    ag::Tensor lat = phi.get(kTransformer, "latents");
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string pre = "l" + std::to_string(l);
      lat = ag::add(lat, mha_fwd(phi, kTransformer, pre + "_self",
                                 ln_fwd(phi, kTransformer, pre + "_lns", lat),
                                 ln_fwd(phi, kTransformer, pre + "_lns", lat), cfg.heads));
      lat = ag::add(lat, mha_fwd(phi, kTransformer, pre + "_cross",
                                 ln_fwd(phi, kTransformer, pre + "_lnc", lat), seq.tokens,
                                 cfg.heads));
      lat = ag::add(lat, ffn_fwd(phi, kTransformer, pre + "_ffn",
                                 ln_fwd(phi, kTransformer, pre + "_lnf", lat)));
    }
    pooled = ag::mul_scalar(ag::colsum(lat), 1.0 / cfg.latents);
  } else {
    // causal self-attention over the token sequence, pooled over the last frame
    const int n = seq.tokens.shape()[0];
    std::vector<double> mask_vals(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) mask_vals[static_cast<std::size_t>(i) * n + j] = -1e9;
    ag::Tensor mask = ag::Tensor::from({n, n}, std::move(mask_vals));

    ag::Tensor x = seq.tokens;
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string pre = "l" + std::to_string(l);
      ag::Tensor normed = ln_fwd(phi, kTransformer, pre + "_lns", x);
      x = ag::add(x, mha_fwd(phi, kTransformer, pre + "_self", normed, normed, cfg.heads, &mask));
      x = ag::add(x, ffn_fwd(phi, kTransformer, pre + "_ffn",
                             ln_fwd(phi, kTransformer, pre + "_lnf", x)));
    }
    const int last = seq.frame_sizes.back();
    ag::Tensor tail = ag::slice(x, 0, x.shape()[0] - last, last);
    pooled = ag::mul_scalar(ag::colsum(tail), 1.0 / last);
  }

  ag::Tensor pooled_row = ag::reshape(pooled, {1, d});
  FusionOutput out;
  ag::Tensor raw = linear_fwd(phi, kLossDecoder, "fc2",
                              ag::gelu(linear_fwd(phi, kLossDecoder, "fc1", pooled_row)));
  out.learned_loss = ag::reshape(ag::softplus(raw), {1});
  out.action_logits = ag::reshape(
      linear_fwd(phi, kActionDecoder, "fc2",
                 ag::gelu(linear_fwd(phi, kActionDecoder, "fc1", pooled_row))),
      {5});
  out.aux_logits = ag::reshape(linear_fwd(phi, kLogitsDecoder, "fc", pooled_row),
                               {cfg.queries, cfg.classes + 1});
  out.aux_masks = ag::reshape(linear_fwd(phi, kMasksDecoder, "fc", pooled_row),
                              {cfg.queries, cfg.mask_size, cfg.mask_size});
  return out;
}

PcaResult pca_embeddings(const std::vector<ag::Tensor>& frame_embeds) {
  if (frame_embeds.size() < 2) throw std::runtime_error("pca: needs at least 2 frames");
  const int d = frame_embeds[0].shape()[1];
  int n = 0;
  for (const auto& t : frame_embeds) n += t.shape()[0];

  PcaResult res;
  res.coords.assign(static_cast<std::size_t>(n), {0.0, 0.0});
  res.frame_of.resize(static_cast<std::size_t>(n));

  // centered data matrix
  std::vector<double> x(static_cast<std::size_t>(n) * d);
  {
    int row = 0;
    for (std::size_t f = 0; f < frame_embeds.size(); ++f) {
      const auto& t = frame_embeds[f];
      for (int r = 0; r < t.shape()[0]; ++r, ++row) {
        res.frame_of[static_cast<std::size_t>(row)] = static_cast<int>(f);
        for (int j = 0; j < d; ++j)
          x[static_cast<std::size_t>(row) * d + j] = t.at(static_cast<std::int64_t>(r) * d + j);
      }
    }
  }
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += x[static_cast<std::size_t>(r) * d + j];
  for (auto& m : mean) m /= n;
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < d; ++j) x[static_cast<std::size_t>(r) * d + j] -= mean[static_cast<std::size_t>(j)];

  std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
  for (int r = 0; r < n; ++r)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        cov[static_cast<std::size_t>(i) * d + j] +=
            x[static_cast<std::size_t>(r) * d + i] * x[static_cast<std::size_t>(r) * d + j];
  for (auto& c : cov) c /= n;

  double trace = 0;
  for (int i = 0; i < d; ++i) trace += cov[static_cast<std::size_t>(i) * d + i];
  if (trace < 1e-18) {
    res.degenerate = true;
    res.components[0].assign(static_cast<std::size_t>(d), 0.0);
    res.components[1].assign(static_cast<std::size_t>(d), 0.0);
    return res;
  }

  // power iteration with deflation for the top two components
  auto power_iter = [&](const std::vector<double>& m) {
    Rng rng(0xBEEF);
    std::vector<double> v(static_cast<std::size_t>(d));
    for (auto& e : v) e = rng.uniform(-1.0, 1.0);
    double lambda = 0;
    for (int it = 0; it < 1000; ++it) {
      std::vector<double> w(static_cast<std::size_t>(d), 0.0);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) w[static_cast<std::size_t>(i)] += m[static_cast<std::size_t>(i) * d + j] * v[static_cast<std::size_t>(j)];
      double norm = 0;
      for (double e : w) norm += e * e;
      norm = std::sqrt(norm);
      if (norm < 1e-30) break;
      for (auto& e : w) e /= norm;
      double diff = 0;
      for (int i = 0; i < d; ++i) diff += std::fabs(w[static_cast<std::size_t>(i)] - v[static_cast<std::size_t>(i)]);
      v = w;
      lambda = norm;
      if (diff < 1e-14 && it > 10) break;
    }
    // sign convention: largest-magnitude component positive
    int arg = 0;
    for (int i = 1; i < d; ++i)
      if (std::fabs(v[static_cast<std::size_t>(i)]) > std::fabs(v[static_cast<std::size_t>(arg)])) arg = i;
    if (v[static_cast<std::size_t>(arg)] < 0)
      for (auto& e : v) e = -e;
    return std::pair{v, lambda};
  };

  auto [v1, l1] = power_iter(cov);
  std::vector<double> deflated = cov;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      deflated[static_cast<std::size_t>(i) * d + j] -= l1 * v1[static_cast<std::size_t>(i)] * v1[static_cast<std::size_t>(j)];
  auto [v2, l2] = power_iter(deflated);
  (void)l2;
  res.components[0] = v1;
  res.components[1] = v2;

  for (int r = 0; r < n; ++r)
    for (int k = 0; k < 2; ++k) {
      double p = 0;
      for (int j = 0; j < d; ++j)
        p += x[static_cast<std::size_t>(r) * d + j] * res.components[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
      res.coords[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)] = p;
    }

  // between-frame vs within-frame variance of the 2-D projections
  const int n_frames = static_cast<int>(frame_embeds.size());
  std::vector<std::array<double, 2>> fmean(static_cast<std::size_t>(n_frames), {0, 0});
  std::vector<int> fcount(static_cast<std::size_t>(n_frames), 0);
  for (int r = 0; r < n; ++r) {
    const int f = res.frame_of[static_cast<std::size_t>(r)];
    fmean[static_cast<std::size_t>(f)][0] += res.coords[static_cast<std::size_t>(r)][0];
    fmean[static_cast<std::size_t>(f)][1] += res.coords[static_cast<std::size_t>(r)][1];
    fcount[static_cast<std::size_t>(f)]++;
  }
  for (int f = 0; f < n_frames; ++f) {
    fmean[static_cast<std::size_t>(f)][0] /= fcount[static_cast<std::size_t>(f)];
    fmean[static_cast<std::size_t>(f)][1] /= fcount[static_cast<std::size_t>(f)];
  }
  double between = 0, within = 0;
  for (int r = 0; r < n; ++r) {
    const int f = res.frame_of[static_cast<std::size_t>(r)];
    const double dx = res.coords[static_cast<std::size_t>(r)][0] - fmean[static_cast<std::size_t>(f)][0];
    const double dy = res.coords[static_cast<std::size_t>(r)][1] - fmean[static_cast<std::size_t>(f)][1];
    within += dx * dx + dy * dy;
  }
  for (int f = 0; f < n_frames; ++f) {
    // grand mean of centered data is zero
    between += fcount[static_cast<std::size_t>(f)] *
               (fmean[static_cast<std::size_t>(f)][0] * fmean[static_cast<std::size_t>(f)][0] +
                fmean[static_cast<std::size_t>(f)][1] * fmean[static_cast<std::size_t>(f)][1]);
  }
  res.separation = between / (within + 1e-12);
  return res;
}

}  // namespace adaseg::fusion

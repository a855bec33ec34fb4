#include "adaseg/segmodel.hpp"

#include <cmath>
#include <stdexcept>

#include "adaseg/ops.hpp"

namespace adaseg::model {

namespace ag = adaseg::ag;
using nn::ParamSet;

namespace {

// --- parameter builders -----------------------------------------------

void make_conv(ParamSet& ps, const std::string& group, const std::string& name, int cin, int cout,
               Rng& rng, double scale_mul = 1.0) {
  const double scale = scale_mul / std::sqrt(static_cast<double>(cin) * 9.0);
  ps.add(group, name + "_w", nn::randn({cout, cin, 3, 3}, scale, rng));
  ps.add(group, name + "_b", nn::randn({cout}, 0.0, rng));
}

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

// --- forward helpers ---------------------------------------------------

ag::Tensor conv_fwd(const ParamSet& ps, const std::string& group, const std::string& name,
                    const ag::Tensor& x, int stride) {
  ag::Tensor y = ag::conv2d(x, ps.get(group, name + "_w"), stride);
  const int cout = y.shape()[0], hw = y.shape()[1] * y.shape()[2];
  ag::Tensor bias = ag::rowbcast(ag::reshape(ps.get(group, name + "_b"), {cout, 1}), hw);
  return ag::reshape(ag::add(ag::reshape(y, {cout, hw}), bias), y.shape());
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
  const int d = q.shape()[1];
  const int dh = d / heads;
  std::vector<ag::Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    ag::Tensor qh = ag::slice(q, 1, h * dh, dh);
    ag::Tensor kh = ag::slice(k, 1, h * dh, dh);
    ag::Tensor vh = ag::slice(v, 1, h * dh, dh);
    outs.push_back(ag::sdpa(qh, kh, vh, mask));
  }
  return linear_fwd(ps, group, name + "_o", ag::concat(outs, 1));
}

ag::Tensor ffn_fwd(const ParamSet& ps, const std::string& group, const std::string& name,
                   const ag::Tensor& x) {
  return linear_fwd(ps, group, name + "_2", ag::gelu(linear_fwd(ps, group, name + "_1", x)));
}

ag::Tensor flatten_hw(const ag::Tensor& x) {  // [c,h,w] -> [h*w, c]
  const int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  return ag::transpose2(ag::reshape(x, {c, hw}));
}

struct Ladder {
  int c0, c1, c2, c3, c4;
};
Ladder ladder(const ModelConfig& cfg) {
  return {cfg.width / 4, cfg.pixel_width(), cfg.pixel_width(), cfg.width, cfg.width};
}

int level_tokens(const ModelConfig& cfg, int level) {
  const int s = cfg.res(level == 0 ? 5 : level == 1 ? 4 : 3);
  return s * s;
}

// FPN merge: add directly when resolutions match (tiny inputs saturate at
// 1x1), upsample when the finer map is exactly twice the coarser one
ag::Tensor fpn_merge(const ag::Tensor& lateral, const ag::Tensor& coarser) {
  if (lateral.shape()[1] == coarser.shape()[1]) return ag::add(lateral, coarser);
  return ag::add(lateral, ag::upsample2x(coarser));
}

}  // namespace

nn::ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.image_size < 16 || cfg.image_size % 4 != 0)
    throw std::runtime_error("image size must be >= 16 and divisible by 4");
  if (cfg.width % cfg.heads != 0 || cfg.width % 4 != 0)
    throw std::runtime_error("width must be divisible by heads and by 4");
  Rng rng = Rng(seed).fork(0xA11CE);
  ParamSet ps;
  const auto [c0, c1, c2, c3, c4] = ladder(cfg);
  const int d = cfg.width, dp = cfg.pixel_width();

  make_conv(ps, kBackbone, "conv0", 3, c0, rng);
  make_conv(ps, kBackbone, "conv1", c0, c1, rng);
  make_conv(ps, kBackbone, "conv2", c1, c2, rng);
  make_conv(ps, kBackbone, "conv3", c2, c3, rng);
  make_conv(ps, kBackbone, "conv4", c3, c4, rng);

  make_conv(ps, kPixelDecoder, "lat32", c4, dp, rng);
  make_conv(ps, kPixelDecoder, "lat16", c3, dp, rng);
  make_conv(ps, kPixelDecoder, "merge16", dp, dp, rng);
  make_conv(ps, kPixelDecoder, "lat8", c2, dp, rng);
  make_conv(ps, kPixelDecoder, "merge8", dp, dp, rng);
  make_conv(ps, kPixelDecoder, "lat4", c1, dp, rng);
  make_conv(ps, kPixelDecoder, "merge4", dp, dp, rng);

  ps.add(kTaskMlp, "task_vec", nn::randn({d}, 0.02, rng));
  make_linear(ps, kTaskMlp, "fc1", d, d, rng);
  make_linear(ps, kTaskMlp, "fc2", d, d, rng);

  ps.add(kTransformerBlock, "query_embed", nn::randn({cfg.queries, d}, 0.02, rng));
  make_ln(ps, kTransformerBlock, "ln1", d);
  make_attn(ps, kTransformerBlock, "self", d, rng);
  make_ln(ps, kTransformerBlock, "ln2", d);
  make_linear(ps, kTransformerBlock, "ffn_1", d, 2 * d, rng);
  make_linear(ps, kTransformerBlock, "ffn_2", 2 * d, d, rng);

  for (int level = 0; level < 3; ++level) {
    const std::string l = "mem" + std::to_string(level);
    make_linear(ps, kMultistageDecoder, l + "_proj", dp, d, rng);
    ps.add(kMultistageDecoder, l + "_pos", nn::randn({level_tokens(cfg, level), d}, 0.02, rng));
  }
  for (int s = 0; s < cfg.stages; ++s) {
    const std::string st = "s" + std::to_string(s);
    make_ln(ps, kMultistageDecoder, st + "_lnc", d);
    make_attn(ps, kMultistageDecoder, st + "_cross", d, rng);
    make_ln(ps, kMultistageDecoder, st + "_lns", d);
    make_attn(ps, kMultistageDecoder, st + "_self", d, rng);
    make_ln(ps, kMultistageDecoder, st + "_lnf", d);
    make_linear(ps, kMultistageDecoder, st + "_ffn_1", d, 2 * d, rng);
    make_linear(ps, kMultistageDecoder, st + "_ffn_2", 2 * d, d, rng);
  }

  // small class-head weights keep the no-object prior in charge at init
  make_linear(ps, kClassHead, "cls", d, cfg.classes + 1, rng, 0.1);
  {
    // bias so that initial no-object probability is ~0.9
    auto& b = ps.at(kClassHead, "cls_b");
    b.leaf_data()[static_cast<std::size_t>(cfg.classes)] =
        std::log(9.0 * static_cast<double>(cfg.classes));
  }
  make_linear(ps, kMaskHead, "fc1", d, d, rng);
  make_linear(ps, kMaskHead, "fc2", d, dp, rng);
  return ps;
}

std::int64_t expected_param_count(const ModelConfig& cfg) {
  const auto [c0, c1, c2, c3, c4] = ladder(cfg);
  const std::int64_t d = cfg.width, dp = cfg.pixel_width(), q = cfg.queries, c = cfg.classes;
  auto conv = [](std::int64_t cin, std::int64_t cout) { return cout * cin * 9 + cout; };
  auto lin = [](std::int64_t in, std::int64_t out) { return in * out + out; };
  const std::int64_t attn = 4 * lin(d, d);
  const std::int64_t ln = 2 * d;
  const std::int64_t ffn = lin(d, 2 * d) + lin(2 * d, d);

  std::int64_t n = 0;
  n += conv(3, c0) + conv(c0, c1) + conv(c1, c2) + conv(c2, c3) + conv(c3, c4);  // backbone
  n += conv(c4, dp) + conv(c3, dp) + conv(dp, dp) + conv(c2, dp) + conv(dp, dp) +
       conv(c1, dp) + conv(dp, dp);                   // pixel decoder
  n += d + 2 * lin(d, d);                             // task mlp
  n += q * d + ln + attn + ln + ffn;                  // transformer block
  for (int level = 0; level < 3; ++level)             // decoder memories
    n += lin(dp, d) + static_cast<std::int64_t>(level_tokens(cfg, level)) * d;
  n += cfg.stages * (ln + attn + ln + attn + ln + ffn);  // decoder stages
  n += lin(d, c + 1);                                 // class head
  n += lin(d, d) + lin(d, dp);                        // mask head
  return n;
}

ag::Tensor image_to_tensor(const env::Frame& f) {
  const int h = f.height, w = f.width;
  std::vector<double> v(static_cast<std::size_t>(3) * h * w);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < h * w; ++i)
      v[static_cast<std::size_t>(c) * h * w + i] = f.rgb[static_cast<std::size_t>(3) * i + c] / 255.0;
  return ag::Tensor::from({3, h, w}, std::move(v));
}

SegOutput forward(const nn::ParamSet& ps, const ModelConfig& cfg, const ag::Tensor& image) {
  if (image.shape() != ag::Shape{3, cfg.image_size, cfg.image_size})
    throw std::runtime_error("forward: image shape " + ag::shape_str(image.shape()) +
                             " does not match config");
  const int d = cfg.width, dp = cfg.pixel_width(), heads = cfg.heads;

  // backbone: five stride-2 convs; taps at 1/4, 1/8, 1/16, 1/32
  ag::Tensor x = ag::relu(conv_fwd(ps, kBackbone, "conv0", image, 2));
  ag::Tensor f4 = ag::relu(conv_fwd(ps, kBackbone, "conv1", x, 2));
  ag::Tensor f8 = ag::relu(conv_fwd(ps, kBackbone, "conv2", f4, 2));
  ag::Tensor f16 = ag::relu(conv_fwd(ps, kBackbone, "conv3", f8, 2));
  ag::Tensor f32 = ag::relu(conv_fwd(ps, kBackbone, "conv4", f16, 2));

  // FPN-style pixel decoder
  ag::Tensor p32 = ag::relu(conv_fwd(ps, kPixelDecoder, "lat32", f32, 1));
  ag::Tensor p16 = ag::relu(conv_fwd(
      ps, kPixelDecoder, "merge16",
      fpn_merge(conv_fwd(ps, kPixelDecoder, "lat16", f16, 1), p32), 1));
  ag::Tensor p8 = ag::relu(conv_fwd(
      ps, kPixelDecoder, "merge8",
      fpn_merge(conv_fwd(ps, kPixelDecoder, "lat8", f8, 1), p16), 1));
  ag::Tensor p4 = ag::relu(conv_fwd(
      ps, kPixelDecoder, "merge4",
      fpn_merge(conv_fwd(ps, kPixelDecoder, "lat4", f4, 1), p8), 1));

  // queries: learned embeddings plus the task embedding
  ag::Tensor task = linear_fwd(ps, kTaskMlp, "fc2",
                               ag::gelu(linear_fwd(ps, kTaskMlp, "fc1",
                                                   ag::reshape(ps.get(kTaskMlp, "task_vec"), {1, d}))));
  ag::Tensor q = ag::add(ps.get(kTransformerBlock, "query_embed"),
                         ag::repeat_rows(ag::reshape(task, {d}), cfg.queries));

  // transformer block: one pre-LN self-attention + FFN
  q = ag::add(q, mha_fwd(ps, kTransformerBlock, "self", ln_fwd(ps, kTransformerBlock, "ln1", q),
                         ln_fwd(ps, kTransformerBlock, "ln1", q), heads));
  q = ag::add(q, ffn_fwd(ps, kTransformerBlock, "ffn", ln_fwd(ps, kTransformerBlock, "ln2", q)));

  // decoder memories at 1/32, 1/16, 1/8
  const ag::Tensor levels[3] = {p32, p16, p8};
  std::vector<ag::Tensor> memories;
  for (int level = 0; level < 3; ++level) {
    const std::string l = "mem" + std::to_string(level);
    ag::Tensor tokens = linear_fwd(ps, kMultistageDecoder, l + "_proj", flatten_hw(levels[level]));
    memories.push_back(ag::add(tokens, ps.get(kMultistageDecoder, l + "_pos")));
  }

  ag::Tensor mask_features;
  for (int s = 0; s < cfg.stages; ++s) {
    const std::string st = "s" + std::to_string(s);
    const ag::Tensor& mem = memories[static_cast<std::size_t>(s % 3)];
    q = ag::add(q, mha_fwd(ps, kMultistageDecoder, st + "_cross",
                           ln_fwd(ps, kMultistageDecoder, st + "_lnc", q), mem, heads));
    q = ag::add(q, mha_fwd(ps, kMultistageDecoder, st + "_self",
                           ln_fwd(ps, kMultistageDecoder, st + "_lns", q),
                           ln_fwd(ps, kMultistageDecoder, st + "_lns", q), heads));
    if (s == cfg.stages - 1) mask_features = q;  // input of the last FFN sublayer
    q = ag::add(q, ffn_fwd(ps, kMultistageDecoder, st + "_ffn",
                           ln_fwd(ps, kMultistageDecoder, st + "_lnf", q)));
  }

  SegOutput out;
  out.mask_features = mask_features;
  out.feat_1_32 = p32;
  out.class_logits = linear_fwd(ps, kClassHead, "cls", q);
  ag::Tensor mask_embed = linear_fwd(ps, kMaskHead, "fc2",
                                     ag::gelu(linear_fwd(ps, kMaskHead, "fc1", q)));
  const int m = cfg.mask_size();
  ag::Tensor logits = ag::matmul(mask_embed, ag::reshape(p4, {dp, m * m}));
  out.mask_logits = ag::reshape(logits, {cfg.queries, m, m});
  return out;
}

std::vector<int> semantic_map(const SegOutput& out, const ModelConfig& cfg) {
  const int q_count = cfg.queries, c1 = cfg.classes + 1, m = cfg.mask_size();
  const auto& cl = out.class_logits.data();
  const auto& ml = out.mask_logits.data();

  // softmax over classes per query
  std::vector<double> prob(static_cast<std::size_t>(q_count) * c1);
  for (int q = 0; q < q_count; ++q) {
    double mx = -1e300, sum = 0;
    for (int c = 0; c < c1; ++c) mx = std::max(mx, cl[static_cast<std::size_t>(q) * c1 + c]);
    for (int c = 0; c < c1; ++c) {
      prob[static_cast<std::size_t>(q) * c1 + c] = std::exp(cl[static_cast<std::size_t>(q) * c1 + c] - mx);
      sum += prob[static_cast<std::size_t>(q) * c1 + c];
    }
    for (int c = 0; c < c1; ++c) prob[static_cast<std::size_t>(q) * c1 + c] /= sum;
  }

  std::vector<int> small(static_cast<std::size_t>(m) * m, 0);
#pragma omp parallel for schedule(static)
  for (int pix = 0; pix < m * m; ++pix) {
    double best = -1.0;
    int best_c = 0;
    for (int c = 0; c < cfg.classes; ++c) {
      double score = 0;
      for (int q = 0; q < q_count; ++q) {
        const double z = ml[static_cast<std::size_t>(q) * m * m + pix];
        const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        score += prob[static_cast<std::size_t>(q) * c1 + c] * sig;
      }
      if (score > best) {
        best = score;
        best_c = c;
      }
    }
    small[static_cast<std::size_t>(pix)] = best_c;
  }

  // nearest upsample x4 to full resolution
  const int full = cfg.image_size;
  std::vector<int> map(static_cast<std::size_t>(full) * full);
  for (int y = 0; y < full; ++y)
    for (int x = 0; x < full; ++x)
      map[static_cast<std::size_t>(y) * full + x] = small[static_cast<std::size_t>(y / 4) * m + x / 4];
  return map;
}

}  // namespace adaseg::model

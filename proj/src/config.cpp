#include "adaseg/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace adaseg::cli {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d = {
      {"seed", "1"},
      // dataset generation
      {"data.points", "128"},
      {"data.val_points", "16"},
      {"data.test_points", "16"},
      {"data.depth", "1"},
      {"data.image_size", "64"},
      {"data.classes", "8"},
      {"data.objects_min", "7"},
      {"data.objects_max", "12"},
      {"data.room_min", "5.0"},
      {"data.room_max", "8.0"},
      {"data.camera_height", "0.88"},
      {"data.hfov_deg", "42.0"},
      {"data.move_step", "0.25"},
      {"data.rotation_deg", "30.0"},
      {"data.min_visible_classes", "3"},
      {"data.mode", "generic"},
      // model
      {"model.queries", "16"},
      {"model.width", "64"},
      {"model.heads", "4"},
      {"model.stages", "3"},
      // loss
      {"loss.lambda_cls", "2.0"},
      {"loss.lambda_bce", "5.0"},
      {"loss.lambda_dice", "5.0"},
      {"loss.no_object_weight", "0.1"},
      {"loss.logit_clamp", "20.0"},
      // fusion
      {"fusion.width", "64"},
      {"fusion.layers", "2"},
      {"fusion.heads", "4"},
      {"fusion.latents", "8"},
      {"fusion.embedder", "mlp"},
      {"fusion.mode", "decoder"},
      {"fusion.loss_head_init", "0.001"},
      // adaptation
      {"adapt.alpha", "0.001"},
      {"adapt.inner_steps", "1"},
      {"adapt.steps", "1"},
      {"adapt.meta_order", "2"},
      {"adapt.variant", "full"},
      {"adapt.policy", "random"},
      {"adapt.adapt_on_inference", "1"},
      {"adapt.epsilon_start", "1.0"},
      {"adapt.epsilon_end", "0.1"},
      // training
      {"train.epochs", "50"},
      {"train.batch", "16"},
      {"train.lr_model", "0.00001"},
      {"train.lr_fusion", "0.0001"},
      {"train.clip_norm", "1.0"},
      {"train.action_loss_weight", "1.0"},
      {"train.aux_weight", "0.0"},
  };
  return d;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected key = value");
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

std::string RunConfig::resolve_key(const std::string& flag) const {
  if (values_.count(flag)) return flag;
  std::string found;
  for (const auto& [k, v] : values_) {
    const auto dot = k.rfind('.');
    if (dot != std::string::npos && k.substr(dot + 1) == flag) {
      if (!found.empty())
        throw std::runtime_error("ambiguous config key '" + flag + "' (" + found + ", " + k + ")");
      found = k;
    }
  }
  if (found.empty()) throw std::runtime_error("unknown config key '" + flag + "'");
  return found;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  values_.at(resolve_key(key)) = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("unknown config key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t pos = 0;
  const int out = std::stoi(v, &pos);
  if (pos != v.size()) throw std::runtime_error("config " + key + ": not an integer: " + v);
  return out;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t pos = 0;
  const double out = std::stod(v, &pos);
  if (pos != v.size()) throw std::runtime_error("config " + key + ": not a number: " + v);
  return out;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::runtime_error("config " + key + ": not a boolean: " + v);
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

void RunConfig::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path);
  out << to_text();
}

std::uint64_t RunConfig::seed() const {
  return static_cast<std::uint64_t>(std::stoull(get("seed")));
}

env::EnvConfig RunConfig::env_config() const {
  env::EnvConfig e;
  e.room_extent_min = get_double("data.room_min");
  e.room_extent_max = get_double("data.room_max");
  e.objects_min = get_int("data.objects_min");
  e.objects_max = get_int("data.objects_max");
  e.class_count = get_int("data.classes");
  e.camera_height = get_double("data.camera_height");
  e.min_visible_classes = get_int("data.min_visible_classes");
  e.camera.width = e.camera.height = get_int("data.image_size");
  e.camera.hfov_deg = get_double("data.hfov_deg");
  e.step.move_step = get_double("data.move_step");
  e.step.rotation_deg = get_double("data.rotation_deg");
  const std::string mode = get("data.mode");
  if (mode == "occlusion")
    e.occlusion_mode = true;
  else if (mode != "generic")
    throw std::runtime_error("config data.mode: expected generic|occlusion, got " + mode);
  return e;
}

adapt::Runtime RunConfig::runtime() const {
  adapt::Runtime rt;
  rt.model.queries = get_int("model.queries");
  rt.model.classes = get_int("data.classes");
  rt.model.width = get_int("model.width");
  rt.model.heads = get_int("model.heads");
  rt.model.stages = get_int("model.stages");
  rt.model.image_size = get_int("data.image_size");

  rt.fusion.width = get_int("fusion.width");
  rt.fusion.layers = get_int("fusion.layers");
  rt.fusion.heads = get_int("fusion.heads");
  rt.fusion.latents = get_int("fusion.latents");
  rt.fusion.loss_head_init = get_double("fusion.loss_head_init");
  const std::string emb = get("fusion.embedder");
  if (emb == "vanilla")
    rt.fusion.embedder = fusion::EmbedderVariant::Vanilla;
  else if (emb == "mlp")
    rt.fusion.embedder = fusion::EmbedderVariant::MLP;
  else
    throw std::runtime_error("config fusion.embedder: expected vanilla|mlp, got " + emb);
  const std::string fmode = get("fusion.mode");
  if (fmode == "decoder")
    rt.fusion.mode = fusion::FusionMode::FixedLengthDecoder;
  else if (fmode == "causal")
    rt.fusion.mode = fusion::FusionMode::Causal;
  else
    throw std::runtime_error("config fusion.mode: expected decoder|causal, got " + fmode);

  rt.weights.lambda_cls = get_double("loss.lambda_cls");
  rt.weights.lambda_bce = get_double("loss.lambda_bce");
  rt.weights.lambda_dice = get_double("loss.lambda_dice");
  rt.weights.no_object_weight = get_double("loss.no_object_weight");
  rt.weights.logit_clamp = get_double("loss.logit_clamp");

  rt.adapt.alpha = get_double("adapt.alpha");
  rt.adapt.inner_steps = get_int("adapt.inner_steps");
  rt.adapt.frame_steps = get_int("adapt.steps");
  rt.adapt.meta_order = get_int("adapt.meta_order");
  auto var = adapt::parse_variant(get("adapt.variant"));
  if (!var) throw std::runtime_error("config adapt.variant: expected full|small|tiny");
  rt.adapt.variant = *var;
  auto pol = adapt::parse_policy(get("adapt.policy"));
  if (!pol) throw std::runtime_error("config adapt.policy: expected single_frame|random|best_loss");
  rt.adapt.policy = *pol;
  rt.adapt.adapt_on_inference = get_bool("adapt.adapt_on_inference");
  rt.adapt.epsilon_start = get_double("adapt.epsilon_start");
  rt.adapt.epsilon_end = get_double("adapt.epsilon_end");

  rt.finalize();
  return rt;
}

adapt::TrainConfig RunConfig::train_config() const {
  adapt::TrainConfig tc;
  tc.epochs = get_int("train.epochs");
  tc.batch = get_int("train.batch");
  tc.lr_model = get_double("train.lr_model");
  tc.lr_fusion = get_double("train.lr_fusion");
  tc.clip_norm = get_double("train.clip_norm");
  tc.action_loss_weight = get_double("train.action_loss_weight");
  tc.aux_weight = get_double("train.aux_weight");
  tc.seed = seed();
  return tc;
}

}  // namespace adaseg::cli

#include "adaseg/cli.hpp"

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "adaseg/adapt.hpp"
#include "adaseg/config.hpp"
#include "adaseg/dataset.hpp"
#include "adaseg/report.hpp"

namespace adaseg::cli {

namespace fs = std::filesystem;
namespace ad = adaseg::adapt;

namespace {

struct Args {
  RunConfig config;
  std::map<std::string, std::string> flags;  // --out, --data, ...
  bool has(const std::string& f) const { return flags.count(f) != 0; }
  std::string need(const std::string& f) const {
    auto it = flags.find(f);
    if (it == flags.end()) throw std::runtime_error("usage: missing --" + f);
    return it->second;
  }
};

const std::vector<std::string> kPathFlags = {"out", "data", "checkpoint", "split",
                                             "baseline", "suite", "table", "run"};
const std::vector<std::string> kBoolFlags = {"per-point", "exhaustive-average"};

Args parse_args(const std::vector<std::string>& argv, std::size_t start) {
  Args a;
  // --config first so explicit --key overrides win regardless of order
  for (std::size_t i = start; i < argv.size(); ++i)
    if (argv[i] == "--config") {
      if (i + 1 >= argv.size()) throw std::runtime_error("usage: --config needs a path");
      a.config = RunConfig::from_file(argv[i + 1]);
    }
  for (std::size_t i = start; i < argv.size(); ++i) {
    const std::string& arg = argv[i];
    if (arg.rfind("--", 0) != 0) throw std::runtime_error("usage: unexpected argument " + arg);
    const std::string name = arg.substr(2);
    if (name == "config") {
      ++i;
      continue;
    }
    if (std::find(kBoolFlags.begin(), kBoolFlags.end(), name) != kBoolFlags.end()) {
      a.flags[name] = "1";
      continue;
    }
    if (i + 1 >= argv.size()) throw std::runtime_error("usage: flag --" + name + " needs a value");
    const std::string value = argv[++i];
    if (std::find(kPathFlags.begin(), kPathFlags.end(), name) != kPathFlags.end())
      a.flags[name] = value;
    else
      a.config.set(name, value);  // throws on unknown key
  }
  return a;
}

void check_dataset_config(const std::string& data_dir, const RunConfig& cfg) {
  const fs::path stored = fs::path(data_dir) / "config.txt";
  if (!fs::exists(stored)) return;
  auto ds_cfg = RunConfig::from_file(stored.string());
  for (const char* key : {"data.image_size", "data.classes"}) {
    if (ds_cfg.get(key) != cfg.get(key))
      throw std::runtime_error(std::string("dataset/config mismatch on ") + key + ": dataset has " +
                               ds_cfg.get(key) + ", config has " + cfg.get(key));
  }
}

env::Dataset generate_dataset(const RunConfig& cfg) {
  const auto ecfg = cfg.env_config();
  const int n_train = cfg.get_int("data.points");
  const int n_val = cfg.get_int("data.val_points");
  const int n_test = cfg.get_int("data.test_points");
  const int depth = cfg.get_int("data.depth");
  const int total = n_train + n_val + n_test;
  const std::uint64_t seed = cfg.seed();

  env::Dataset ds;
  ds.points.resize(static_cast<std::size_t>(total));
  std::vector<std::string> errors(static_cast<std::size_t>(total));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < total; ++i) {
    try {
      const std::uint64_t scene_seed = Rng(seed ^ 0xDA7A5EEDULL).fork(static_cast<std::uint64_t>(i)).next_u64();
      auto g = env::generate_scene(scene_seed, ecfg);
      auto pt = env::build_point(g.scene, g.scene.root, depth, ecfg.camera, ecfg.step);
      pt.point_id = i;
      pt.scene_seed = scene_seed;
      pt.split = i < n_train ? "train" : i < n_train + n_val ? "val" : "test";
      ds.points[static_cast<std::size_t>(i)] = std::move(pt);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error("gen-data: " + e);
  return ds;
}

int cmd_gen_data(const Args& a) {
  const std::string out = a.need("out");
  auto ds = generate_dataset(a.config);
  env::write_dataset(ds, out);
  a.config.write((fs::path(out) / "config.txt").string());
  int frames = 0;
  for (const auto& p : ds.points) frames += static_cast<int>(p.nodes.size());
  std::cout << "wrote " << ds.points.size() << " points (" << frames << " frames) to " << out
            << "\n";
  return kExitOk;
}

int cmd_validate(const Args& a) {
  const std::string dir = a.need("data");
  RunConfig cfg = a.config;
  const fs::path stored = fs::path(dir) / "config.txt";
  if (fs::exists(stored)) cfg = RunConfig::from_file(stored.string());
  try {
    const int frames = env::validate_dataset(dir, cfg.env_config().step);
    std::cout << "ok: " << frames << " frames validated\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "validation failed: " << e.what() << "\n";
    return kExitValidation;
  }
}

int cmd_train(const Args& a) {
  const std::string data = a.need("data");
  const std::string out = a.need("out");
  check_dataset_config(data, a.config);
  auto ds = env::read_dataset(data);
  auto rt = a.config.runtime();
  auto tc = a.config.train_config();
  fs::create_directories(out);
  a.config.write((fs::path(out) / "config.txt").string());
  auto res = ad::train(ds, rt, tc, out);
  std::cout << "trained " << tc.epochs << " epochs; best epoch " << res.best_epoch
            << " (val fwIoU " << format_metric(res.log[static_cast<std::size_t>(res.best_epoch)].val.fwiou)
            << "); checkpoint " << res.checkpoint_path << "\n";
  return kExitOk;
}

std::optional<loss::MetricReport> read_baseline(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read baseline table " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto t = Table::from_tsv(text);
  loss::MetricReport r;
  bool any = false;
  for (const auto& row : t.rows) {
    if (row.size() < 2) continue;
    const double v = std::stod(row[1]);
    if (row[0] == "mIoU") r.miou = v, any = true;
    if (row[0] == "fwIoU") r.fwiou = v, any = true;
    if (row[0] == "mACC") r.macc = v, any = true;
    if (row[0] == "pACC") r.pacc = v, any = true;
  }
  if (!any) throw std::runtime_error("baseline table has no metric rows: " + path);
  return r;
}

struct LoadedCheckpoint {
  nn::ParamSet theta, phi;
  std::map<std::string, std::string> meta;
};

LoadedCheckpoint load_checkpoint_for(const RunConfig& cfg, const std::string& path,
                                     const ad::Runtime& rt) {
  auto run = ad::load_run_checkpoint(path);
  if (run.theta.total_params() != model::expected_param_count(rt.model))
    throw std::runtime_error("checkpoint/config mismatch: model has " +
                             std::to_string(run.theta.total_params()) + " params, config implies " +
                             std::to_string(model::expected_param_count(rt.model)));
  auto expect_phi = fusion::init_fusion(rt.fusion, cfg.seed());
  if (run.phi.total_params() != expect_phi.total_params())
    throw std::runtime_error("checkpoint/config mismatch: fusion has " +
                             std::to_string(run.phi.total_params()) + " params, config implies " +
                             std::to_string(expect_phi.total_params()));
  return {std::move(run.theta), std::move(run.phi), std::move(run.meta)};
}

int cmd_eval(const Args& a) {
  const std::string data = a.need("data");
  const std::string ckpt = a.need("checkpoint");
  const std::string out = a.need("out");
  const std::string split = a.has("split") ? a.flags.at("split") : "test";
  check_dataset_config(data, a.config);

  auto rt = a.config.runtime();
  auto loaded = load_checkpoint_for(a.config, ckpt, rt);
  auto ds = env::read_dataset(data);

  auto ev = ad::evaluate(loaded.theta, loaded.phi, rt, ds, split, a.config.seed());

  std::optional<loss::MetricReport> baseline;
  if (a.has("baseline")) baseline = read_baseline(a.flags.at("baseline"));
  Table t = metrics_table(ev.global, baseline ? &*baseline : nullptr);

  fs::create_directories(out);
  a.config.write((fs::path(out) / "config.txt").string());
  {
    std::ofstream f(fs::path(out) / ("eval_" + split + ".tsv"));
    f << t.to_tsv();
  }
  std::cout << t.pretty();
  std::cout << "per-image mean mIoU " << format_metric(ev.per_image_miou) << " over "
            << ev.per_point.size() << " points\n";

  if (a.has("per-point")) {
    Table pp;
    pp.header = {"point", "mIoU", "fwIoU", "mACC", "pACC", "learned_loss", "path"};
    for (std::size_t i = 0; i < ev.per_point.size(); ++i) {
      const auto& r = ev.per_point[i];
      std::string path;
      for (std::size_t k = 0; k < r.actions.size(); ++k)
        path += std::string(k ? "," : "") + env::action_name(r.actions[k]);
      pp.rows.push_back({std::to_string(i), format_metric(r.report.miou),
                         format_metric(r.report.fwiou), format_metric(r.report.macc),
                         format_metric(r.report.pacc), format_metric(r.learned_loss),
                         path.empty() ? "-" : path});
    }
    std::ofstream f(fs::path(out) / ("eval_" + split + "_per_point.tsv"));
    f << pp.to_tsv();
  }

  if (a.has("exhaustive-average") && rt.adapt.policy != ad::Policy::SingleFrame) {
    // diagnostic: average metrics over all five forced first actions
    Table ex;
    ex.header = {"action", "mIoU", "fwIoU", "mACC", "pACC"};
    double sum[4] = {0, 0, 0, 0};
    for (env::Action act : env::kAllActions) {
      loss::ConfusionMatrix cm(rt.model.classes);
      for (const auto& pt : ds.points) {
        if (pt.split != split) continue;
        auto r = ad::infer(loaded.theta, loaded.phi, rt, pt,
                           Rng(a.config.seed()).fork(static_cast<std::uint64_t>(pt.point_id)), &act);
        cm.add(r.map, pt.root().frame.mask);
      }
      const auto rep = cm.report();
      ex.rows.push_back({env::action_name(act), format_metric(rep.miou), format_metric(rep.fwiou),
                         format_metric(rep.macc), format_metric(rep.pacc)});
      sum[0] += rep.miou;
      sum[1] += rep.fwiou;
      sum[2] += rep.macc;
      sum[3] += rep.pacc;
    }
    ex.rows.push_back({"mean", format_metric(sum[0] / 5), format_metric(sum[1] / 5),
                       format_metric(sum[2] / 5), format_metric(sum[3] / 5)});
    std::ofstream f(fs::path(out) / ("eval_" + split + "_exhaustive.tsv"));
    f << ex.to_tsv();
    std::cout << ex.pretty();
  }
  return kExitOk;
}

// one ablation cell: train on the dataset with overrides, evaluate on val
struct CellResult {
  std::string name;
  loss::MetricReport val;
  std::string error;
  std::string run_dir;
};

CellResult run_cell(const std::string& name, RunConfig cfg, const std::string& data,
                    const std::string& out_root,
                    const std::vector<std::pair<std::string, std::string>>& overrides) {
  CellResult cell;
  cell.name = name;
  cell.run_dir = (fs::path(out_root) / name).string();
  try {
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    check_dataset_config(data, cfg);
    auto ds = env::read_dataset(data);
    auto rt = cfg.runtime();
    auto tc = cfg.train_config();
    fs::create_directories(cell.run_dir);
    cfg.write((fs::path(cell.run_dir) / "config.txt").string());
    auto res = ad::train(ds, rt, tc, cell.run_dir);
    auto run = ad::load_run_checkpoint(res.checkpoint_path);
    cell.val = ad::evaluate(run.theta, run.phi, rt, ds, "val", cfg.seed()).global;
  } catch (const std::exception& e) {
    cell.error = e.what();
  }
  return cell;
}

int cmd_ablate(const Args& a) {
  const std::string suite = a.need("suite");
  const std::string data = a.need("data");
  const std::string out = a.need("out");
  fs::create_directories(out);
  a.config.write((fs::path(out) / "config.txt").string());

  using Overrides = std::vector<std::pair<std::string, std::string>>;
  std::vector<std::pair<std::string, Overrides>> cells;

  if (suite == "embedder") {
    cells = {{"baseline_single_frame",
              {{"adapt.policy", "single_frame"}, {"adapt.adapt_on_inference", "0"}, {"adapt.alpha", "0"}}},
             {"vanilla", {{"fusion.embedder", "vanilla"}}},
             {"mlp", {{"fusion.embedder", "mlp"}}}};
  } else if (suite == "steps") {
    cells = {{"baseline_single_frame",
              {{"adapt.policy", "single_frame"}, {"adapt.adapt_on_inference", "0"}, {"adapt.alpha", "0"}}}};
    for (const char* variant : {"tiny", "small", "full"})
      for (const char* steps : {"1", "4"})
        cells.push_back({std::string(variant) + "_steps" + steps,
                         {{"adapt.variant", variant}, {"adapt.steps", steps}}});
  } else if (suite == "variants") {
    cells = {{"oneformer",
              {{"adapt.policy", "single_frame"}, {"adapt.adapt_on_inference", "0"},
               {"adapt.alpha", "0"}, {"adapt.variant", "full"}}},
             {"oneformer_frozen",
              {{"adapt.policy", "single_frame"}, {"adapt.adapt_on_inference", "0"},
               {"adapt.alpha", "0"}, {"adapt.variant", "tiny"}}},
             {"segmatron_tiny", {{"adapt.variant", "tiny"}}},
             {"segmatron_small", {{"adapt.variant", "small"}}},
             {"segmatron_full", {{"adapt.variant", "full"}}}};
  } else if (suite == "policy") {
    cells = {{"random",
              {{"adapt.policy", "random"}, {"adapt.variant", "tiny"}, {"fusion.mode", "causal"}}},
             {"best_loss", {{"adapt.policy", "best_loss"}, {"adapt.variant", "tiny"}}}};
  } else if (suite == "pca") {
    cells = {{"vanilla", {{"fusion.embedder", "vanilla"}}},
             {"mlp", {{"fusion.embedder", "mlp"}}}};
  } else {
    std::cerr << "unknown ablate suite '" << suite
              << "' (expected embedder|steps|variants|policy|pca)\n";
    return kExitUsage;
  }

  std::vector<CellResult> results;
  for (const auto& [name, overrides] : cells)
    results.push_back(run_cell(name, a.config, data, out, overrides));

  Table t;
  t.header = {"cell", "mIoU", "fwIoU", "mACC", "pACC", "status"};
  const CellResult* base = results.empty() || !results[0].error.empty() ? nullptr : &results[0];
  for (const auto& c : results) {
    if (!c.error.empty()) {
      t.rows.push_back({c.name, "-", "-", "-", "-", "failed: " + c.error});
      continue;
    }
    auto fmt = [&](double v, double b) {
      return base && &c != base ? format_metric(v) + " " + format_delta(v, b) : format_metric(v);
    };
    t.rows.push_back({c.name, fmt(c.val.miou, base ? base->val.miou : 0),
                      fmt(c.val.fwiou, base ? base->val.fwiou : 0),
                      fmt(c.val.macc, base ? base->val.macc : 0),
                      fmt(c.val.pacc, base ? base->val.pacc : 0), "ok"});
  }

  if (suite == "pca") {
    // embedding separation diagnostic over validation points, one SVG each
    auto ds = env::read_dataset(data);
    Table sep;
    sep.header = {"point", "vanilla_sep", "mlp_sep", "winner"};
    std::map<std::string, std::pair<nn::ParamSet, nn::ParamSet>> loaded;  // cell -> (theta, phi)
    std::map<std::string, ad::Runtime> rts;
    for (const auto& c : results) {
      if (!c.error.empty()) continue;
      auto cfg = RunConfig::from_file((fs::path(c.run_dir) / "config.txt").string());
      auto rt = cfg.runtime();
      auto run = ad::load_run_checkpoint((fs::path(c.run_dir) / "best.ckpt").string());
      loaded.emplace(c.name, std::pair{std::move(run.theta), std::move(run.phi)});
      rts.emplace(c.name, rt);
    }
    if (loaded.count("vanilla") && loaded.count("mlp")) {
      int mlp_wins = 0, total = 0;
      bool plotted = false;
      for (const auto& pt : ds.points) {
        if (pt.split != "val") continue;
        std::map<std::string, double> score;
        for (auto& [name, tp] : loaded) {
          const auto& rt = rts.at(name);
          ag::GradGuard off(false);
          std::vector<model::SegOutput> outs = {
              model::forward(tp.first, rt.model, model::image_to_tensor(pt.root().frame)),
              model::forward(tp.first, rt.model,
                             model::image_to_tensor(pt.nodes[1].frame))};
          auto seq = fusion::embed_frames(tp.second, rt.fusion, outs);
          auto pca = fusion::pca_embeddings(seq.pred_embeds);
          score[name] = pca.separation;
          if (!plotted) {
            std::vector<ScatterPoint> pts;
            for (std::size_t i = 0; i < pca.coords.size(); ++i)
              pts.push_back({pca.coords[i][0], pca.coords[i][1], pca.frame_of[i]});
            write_svg_scatter((fs::path(out) / ("pca_" + name + ".svg")).string(), pts,
                              name + " prediction embeddings (PC1/PC2)");
          }
        }
        plotted = true;
        ++total;
        if (score["mlp"] > score["vanilla"]) ++mlp_wins;
        sep.rows.push_back({std::to_string(pt.point_id), format_metric(score["vanilla"]),
                            format_metric(score["mlp"]),
                            score["mlp"] > score["vanilla"] ? "mlp" : "vanilla"});
      }
      sep.rows.push_back({"mlp_wins", std::to_string(mlp_wins) + "/" + std::to_string(total), "-", "-"});
      std::ofstream f(fs::path(out) / "pca_separation.tsv");
      f << sep.to_tsv();
      std::cout << sep.pretty();
    }
  }

  {
    std::ofstream f(fs::path(out) / ("ablate_" + suite + ".tsv"));
    f << t.to_tsv();
  }
  std::cout << t.pretty();
  for (const auto& c : results)
    if (!c.error.empty()) return kExitRuntime;
  return kExitOk;
}

int cmd_report(const Args& a) {
  if (a.has("table")) {
    std::ifstream in(a.flags.at("table"));
    if (!in) {
      std::cerr << "cannot read " << a.flags.at("table") << "\n";
      return kExitValidation;
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
      auto t = Table::from_tsv(text);
      auto again = Table::from_tsv(t.to_tsv());
      if (again.header != t.header || again.rows != t.rows) {
        std::cerr << "table does not round-trip\n";
        return kExitValidation;
      }
      std::cout << t.pretty();
      return kExitOk;
    } catch (const std::exception& e) {
      std::cerr << "table parse failed: " << e.what() << "\n";
      return kExitValidation;
    }
  }
  if (a.has("run")) {
    const fs::path dir = a.flags.at("run");
    bool printed = false;
    if (fs::exists(dir / "train_log.txt")) {
      std::ifstream in(dir / "train_log.txt");
      std::cout << in.rdbuf();
      printed = true;
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      if (name.rfind("eval_", 0) == 0 || name.rfind("ablate_", 0) == 0) {
        std::ifstream in(entry.path());
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::cout << name << ":\n" << Table::from_tsv(text).pretty() << "\n";
        printed = true;
      }
    }
    if (!printed) {
      std::cerr << "nothing to report in " << dir << "\n";
      return kExitValidation;
    }
    return kExitOk;
  }
  std::cerr << "usage: report --table <file> | --run <dir>\n";
  return kExitUsage;
}

void print_usage() {
  std::cout << "usage: adaseg <command> [flags]\n"
               "  gen-data --out <dir> [--config <file>] [--<key> <value> ...]\n"
               "  validate --data <dir>\n"
               "  train    --data <dir> --out <dir> [--config] [--<key> <value>]\n"
               "  eval     --checkpoint <file> --data <dir> --out <dir> [--split s]\n"
               "           [--baseline <eval.tsv>] [--per-point] [--exhaustive-average]\n"
               "  ablate   --suite embedder|steps|variants|policy|pca --data <dir> --out <dir>\n"
               "  report   --table <file> | --run <dir>\n"
               "flags mirror config keys (e.g. --seed 7, --points 16, --variant tiny)\n";
}

}  // namespace

int run(const std::vector<std::string>& args) {
  if (args.empty()) {
    print_usage();
    return kExitUsage;
  }
  const std::string& cmd = args[0];
  try {
    Args a = parse_args(args, 1);
    if (cmd == "gen-data") return cmd_gen_data(a);
    if (cmd == "validate") return cmd_validate(a);
    if (cmd == "train") return cmd_train(a);
    if (cmd == "eval") return cmd_eval(a);
    if (cmd == "ablate") return cmd_ablate(a);
    if (cmd == "report") return cmd_report(a);
    std::cerr << "unknown command '" << cmd << "'\n";
    print_usage();
    return kExitUsage;
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    std::cerr << "error: " << msg << "\n";
    if (msg.rfind("usage:", 0) == 0 || msg.find("unknown config key") != std::string::npos ||
        msg.find("ambiguous config key") != std::string::npos)
      return kExitUsage;
    if (msg.find("mismatch") != std::string::npos || msg.find("malformed") != std::string::npos ||
        msg.find("missing") != std::string::npos || msg.find("validate") != std::string::npos)
      return kExitValidation;
    return kExitRuntime;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace adaseg::cli

// lgrin: batch front end for dataset generation, training, evaluation,
// ablation sweeps, gradient checks and model inspection.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lgrin/lgrin.hpp"
#include "lgrin/run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw lgrin::LoadError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json evaluation_json(const lgrin::Evaluation& e, const lgrin::GraphDataset& ds) {
  return json{{"unweighted_accuracy", e.unweighted_accuracy},
              {"correct", e.correct},
              {"total", e.total},
              {"confusion", e.confusion},
              {"class_counts", ds.class_counts()}};
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  lgrin::SynthSpec spec;
  std::string out;
  bool force = false;
};

int run_synth(const SynthArgs& a) {
  const lgrin::GraphDataset ds = lgrin::synth_generate(a.spec);
  const fs::path manifest = lgrin::write_dataset(ds, a.out, a.force);
  std::cout << "wrote " << ds.size() << " samples to " << manifest.string() << '\n';
  return 0;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
};

int run_train(const TrainArgs& a) {
  const lgrin::RunConfig rc = lgrin::load_run_config(a.config, a.overrides);
  const lgrin::ResolvedData data = lgrin::resolve_data(rc.data);
  const lgrin::ModelConfig mc = rc.model_for(data.train);

  json extra;
  if (rc.data.cv_folds > 0) {
    const auto cv = lgrin::cross_validate(mc, data.train, rc.data.cv_folds, rc.train, rc.data.split_seed);
    extra["cross_validation"] = cv;
    std::cout << rc.data.cv_folds << "-fold cross-validation mean accuracy " << cv.mean_accuracy << '\n';
  }

  lgrin::Model model = lgrin::build_model(mc);
  lgrin::TrainOptions opts;
  if (data.test) opts.test = &*data.test;
  lgrin::TrainReport report = lgrin::train(model, data.train, rc.train, opts);

  json j = report;
  j["config"] = rc.source;
  j["config"]["model"] = mc;
  j["config"]["train"] = rc.train;
  j["parameter_count"] = lgrin::parameter_count(model);
  for (const auto& [k, v] : extra.items()) j[k] = v;

  fs::create_directories(rc.output);
  lgrin::save_checkpoint(model, rc.output / "checkpoint.lgrin");
  write_json(rc.output / "train_report.json", j);
  std::cout << "final train accuracy " << report.final_train_accuracy;
  if (report.final_test_accuracy) std::cout << ", test accuracy " << *report.final_test_accuracy;
  std::cout << "\nwrote " << (rc.output / "checkpoint.lgrin").string() << " and "
            << (rc.output / "train_report.json").string() << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
};

int run_eval(const EvalArgs& a) {
  const lgrin::Model model = lgrin::load_checkpoint(a.checkpoint);
  const lgrin::GraphDataset ds = lgrin::load_dataset(a.data);
  lgrin::check_compatible(model, ds);
  const json j = evaluation_json(lgrin::evaluate(model, ds), ds);
  if (a.out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json(a.out, j);
  }
  return 0;
}

struct AblateArgs {
  std::string config;
  std::string grid;
  std::string out;
  std::vector<std::string> overrides;
};

std::string etas_label(const lgrin::ModelConfig& c) {
  std::string s;
  for (std::size_t k = 0; k < c.etas.size(); ++k) {
    if (k) s += ';';
    s += std::to_string(c.etas[k].first) + "x" + std::to_string(c.etas[k].second);
  }
  return s;
}

json load_grid(const std::string& spec) {
  json g = json::parse(spec, nullptr, false);
  if (g.is_discarded()) {
    std::ifstream in(spec);
    if (!in) throw lgrin::ConfigError("grid is neither JSON nor a readable file: " + spec);
    g = json::parse(in, nullptr, false);
    if (g.is_discarded()) throw lgrin::ConfigError(spec + " is not valid JSON");
  }
  lgrin::detail::reject_unknown(g, {"adjacency_mode", "pooling_mode", "etas", "inception_layers", "lambdas"}, "grid");
  for (const auto& [k, v] : g.items())
    if (!v.is_array() || v.empty()) throw lgrin::ConfigError("grid." + k + " must be a non-empty array");
  return g;
}

int run_ablate(const AblateArgs& a) {
  const lgrin::RunConfig rc = lgrin::load_run_config(a.config, a.overrides);
  const json grid = load_grid(a.grid);
  const lgrin::ResolvedData data = lgrin::resolve_data(rc.data);
  const lgrin::ModelConfig base = rc.model_for(data.train);

  // cartesian product over the listed axes, last axis varying fastest
  std::vector<std::pair<std::string, json>> axes;
  for (const char* key : {"adjacency_mode", "pooling_mode", "inception_layers", "etas", "lambdas"})
    if (grid.contains(key)) axes.emplace_back(key, grid[key]);
  std::vector<std::size_t> pos(axes.size(), 0);

  const fs::path out = a.out.empty() ? rc.output / "ablation.csv" : fs::path(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream csv(out);
  if (!csv) throw lgrin::LoadError("cannot write " + out.string());
  csv << "adjacency_mode,pooling_mode,inception_layers,etas,lambda1,lambda2,lambda3,"
         "parameter_count,closed_form_parameter_count,accuracy,accuracy_source\n";

  std::size_t rows = 0;
  while (true) {
    json mj = base;
    lgrin::TrainConfig tc = rc.train;
    for (std::size_t i = 0; i < axes.size(); ++i) {
      const auto& [key, values] = axes[i];
      const json& v = values[pos[i]];
      if (key == "lambdas") {
        if (!v.is_array() || v.size() != 3) throw lgrin::ConfigError("each lambdas entry must be [l1, l2, l3]");
        tc.loss_weights = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
      } else if (key == "etas") {
        // a bare pair applies to every layer
        mj["etas"] = (v.is_array() && v.size() == 2 && v[0].is_number()) ? json::array({v}) : v;
      } else {
        mj[key] = v;
      }
    }
    lgrin::ModelConfig mc;
    try {
      mc = mj.get<lgrin::ModelConfig>();
    } catch (const json::exception& e) {
      throw lgrin::ConfigError(e.what());
    }
    mc.validate();
    tc.validate();

    double accuracy = 0.0;
    std::string source;
    lgrin::Model model = lgrin::build_model(mc);
    if (rc.data.cv_folds > 0) {
      accuracy = lgrin::cross_validate(mc, data.train, rc.data.cv_folds, tc, rc.data.split_seed).mean_accuracy;
      source = "cv_mean";
    } else {
      lgrin::TrainOptions opts;
      if (data.test) opts.test = &*data.test;
      const auto report = lgrin::train(model, data.train, tc, opts);
      accuracy = report.final_test_accuracy.value_or(report.final_train_accuracy);
      source = report.final_test_accuracy ? "test" : "train";
    }
    csv << json(mc.adjacency_mode).get<std::string>() << ',' << json(mc.pooling_mode).get<std::string>() << ','
        << mc.inception_layers << ',' << etas_label(mc) << ',' << tc.loss_weights.lambda1 << ','
        << tc.loss_weights.lambda2 << ',' << tc.loss_weights.lambda3 << ',' << lgrin::parameter_count(model) << ','
        << lgrin::closed_form_parameter_count(mc) << ',' << accuracy << ',' << source << '\n';
    ++rows;
    std::cout << "row " << rows << ": accuracy " << accuracy << '\n';

    bool wrapped = true;
    for (std::size_t i = axes.size(); i-- > 0;) {
      if (++pos[i] < axes[i].second.size()) {
        wrapped = false;
        break;
      }
      pos[i] = 0;
    }
    if (wrapped) break;
  }
  std::cout << "wrote " << rows << " rows to " << out.string() << '\n';
  return 0;
}

struct GradcheckArgs {
  std::string config;
  std::vector<std::string> overrides;
  double tolerance = 1e-4;
  double eps = 1e-5;
  bool corrupt = false;
  std::size_t max_tries = 50;
};

int run_gradcheck(const GradcheckArgs& a) {
  const lgrin::RunConfig rc = lgrin::load_run_config(a.config, a.overrides);
  const lgrin::ResolvedData data = lgrin::resolve_data(rc.data);
  lgrin::ModelConfig mc = rc.model_for(data.train);
  const lgrin::SequenceSample sample = lgrin::pad_or_truncate(data.train.samples.front(), mc.nodes);
  const lgrin::LossWeights& w = rc.train.loss_weights;

  // finite differences are meaningless at ReLU/max kinks: move to another seed
  lgrin::Model model = lgrin::build_model(mc);
  std::size_t tries = 1;
  while (lgrin::kink_margin(model, sample, w) < lgrin::kKinkClearance) {
    if (tries++ >= a.max_tries) throw lgrin::NumericalError("no kink-free initialisation found");
    ++mc.seed;
    model = lgrin::build_model(mc);
  }

  std::function<void(lgrin::GradientMap&)> tamper;
  if (a.corrupt) {
    tamper = [](lgrin::GradientMap& g) { g.begin()->second[0] += 1.0; };
  }
  const lgrin::GradCheckReport report = lgrin::grad_check(model, sample, w, a.eps, tamper);
  const bool ok = report.passed(a.tolerance);

  json j{{"passed", ok},
         {"tolerance", a.tolerance},
         {"eps", a.eps},
         {"seed", mc.seed},
         {"kink_margin", report.kink_margin},
         {"max_relative_error", report.max_relative_error},
         {"groups", json::array()}};
  std::printf("%-24s %14s %14s\n", "parameter", "max_rel_err", "max_abs_err");
  for (const auto& g : report.groups) {
    std::printf("%-24s %14.3e %14.3e\n", g.name.c_str(), g.max_relative_error, g.max_absolute_error);
    j["groups"].push_back(
        {{"name", g.name}, {"max_relative_error", g.max_relative_error}, {"max_absolute_error", g.max_absolute_error}});
  }
  std::printf("%s: max relative error %.3e (tolerance %.1e, seed %llu)\n", ok ? "PASS" : "FAIL",
              report.max_relative_error, a.tolerance, static_cast<unsigned long long>(mc.seed));
  write_json(rc.output / "gradcheck.json", j);
  return ok ? 0 : 3;
}

struct InspectArgs {
  std::string checkpoint;
  std::string what;
  std::string data;
  std::string out = ".";
  bool invert = false;
};

int run_inspect(const InspectArgs& a) {
  const lgrin::Model model = lgrin::load_checkpoint(a.checkpoint);
  const fs::path out(a.out);
  fs::create_directories(out);
  if (a.what == "adjacency") {
    lgrin::Tensor adj;
    switch (model.config.adjacency_mode) {
      case lgrin::AdjacencyMode::learnable:
        if (model.config.architecture != lgrin::Architecture::lgrin) [[fallthrough]];
        else {
          adj = lgrin::effective_adjacency(lgrin::LearnableAdjacency{model["adjacency.raw"]});
          break;
        }
      case lgrin::AdjacencyMode::binary:
        adj = lgrin::binary_adjacency(model.config.nodes);
        break;
      case lgrin::AdjacencyMode::weighted:
        throw lgrin::ConfigError("weighted adjacency is computed per sample; nothing to export");
    }
    const std::size_t m = adj.shape()[0];
    std::ofstream csv(out / "adjacency.csv");
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) csv << (j ? "," : "") << lgrin::detail::format_double(adj(i, j));
      csv << '\n';
    }
    double mx = 0.0;
    for (double v : adj.values()) mx = std::max(mx, v);
    std::ofstream pgm(out / "adjacency.pgm", std::ios::binary);
    pgm << "P5\n" << m << ' ' << m << "\n255\n";
    for (double v : adj.values()) {
      auto px = static_cast<unsigned char>(mx > 0.0 ? std::lround(255.0 * v / mx) : 0);
      if (a.invert) px = static_cast<unsigned char>(255 - px);
      pgm.put(static_cast<char>(px));
    }
    std::cout << "wrote " << (out / "adjacency.csv").string() << " and " << (out / "adjacency.pgm").string() << '\n';
    return 0;
  }
  if (a.what == "salient") {
    if (a.data.empty()) throw lgrin::ConfigError("--what salient needs --data");
    const lgrin::GraphDataset ds = lgrin::load_dataset(a.data);
    lgrin::check_compatible(model, ds);
    std::ofstream csv(out / "salient.csv");
    csv << "id,label,salient_node\n";
    for (const auto& s : ds.samples) {
      const auto padded = lgrin::pad_or_truncate(s, model.config.nodes);
      csv << s.id << ',' << s.label << ',' << lgrin::salient_node(model, padded) << '\n';
    }
    std::cout << "wrote " << (out / "salient.csv").string() << '\n';
    return 0;
  }
  throw lgrin::ConfigError("--what must be 'adjacency' or 'salient'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learnable graph inception network: train, evaluate and inspect sequence graph classifiers"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic sinusoid dataset (manifest + CSVs)");
  synth_cmd->add_option("--classes", synth.spec.classes, "number of classes")->capture_default_str();
  synth_cmd->add_option("--per-class", synth.spec.per_class, "samples per class")->capture_default_str();
  synth_cmd->add_option("--m", synth.spec.nodes, "frames per sample (graph nodes)")->capture_default_str();
  synth_cmd->add_option("--p", synth.spec.features, "features per frame")->capture_default_str();
  synth_cmd->add_option("--noise", synth.spec.noise, "Gaussian noise sigma")->capture_default_str();
  synth_cmd->add_option("--seed", synth.spec.seed, "generator seed")->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_flag("--force", synth.force, "overwrite an existing manifest");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model from a run config; writes checkpoint and report");
  train_cmd->add_option("--config", train.config, "run config JSON")->required();
  train_cmd->add_option("--override", train.overrides, "section.key=value, repeatable");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "unweighted accuracy and confusion matrix of a checkpoint");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required();
  eval_cmd->add_option("--data", eval.data, "dataset manifest")->required();
  eval_cmd->add_option("--out", eval.out, "metrics JSON path (default: stdout)");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "train every cell of a configuration grid; writes a CSV table");
  ablate_cmd->add_option("--config", ablate.config, "base run config JSON")->required();
  ablate_cmd->add_option("--grid", ablate.grid, "grid JSON (inline or file path)")->required();
  ablate_cmd->add_option("--out", ablate.out, "CSV path (default: <output>/ablation.csv)");
  ablate_cmd->add_option("--override", ablate.overrides, "section.key=value, repeatable");

  GradcheckArgs gradcheck;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "compare backward gradients with central differences");
  gradcheck_cmd->add_option("--config", gradcheck.config, "run config JSON")->required();
  gradcheck_cmd->add_option("--override", gradcheck.overrides, "section.key=value, repeatable");
  gradcheck_cmd->add_option("--tolerance", gradcheck.tolerance)->capture_default_str();
  gradcheck_cmd->add_option("--eps", gradcheck.eps)->capture_default_str();
  gradcheck_cmd->add_flag("--corrupt", gradcheck.corrupt, "perturb one analytic gradient (negative control)");

  InspectArgs inspect;
  auto* inspect_cmd = app.add_subcommand("inspect", "export the learned adjacency or per-sample salient nodes");
  inspect_cmd->add_option("--checkpoint", inspect.checkpoint)->required();
  inspect_cmd->add_option("--what", inspect.what, "adjacency | salient")->required();
  inspect_cmd->add_option("--data", inspect.data, "dataset manifest (salient)");
  inspect_cmd->add_option("--out", inspect.out, "output directory")->capture_default_str();
  inspect_cmd->add_flag("--invert", inspect.invert, "dark = large in the PGM heatmap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*train_cmd) return run_train(train);
    if (*eval_cmd) return run_eval(eval);
    if (*ablate_cmd) return run_ablate(ablate);
    if (*gradcheck_cmd) return run_gradcheck(gradcheck);
    if (*inspect_cmd) return run_inspect(inspect);
  } catch (const lgrin::Error& e) {
    std::cerr << "lgrin: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "lgrin: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

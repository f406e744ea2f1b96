// dit: dataset generation, training, evaluation and single-pair registration.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "dit/dit.hpp"

namespace fs = std::filesystem;

namespace {

/// Config keys settable from the command line. Values stay unset unless the
/// flag was given, so file and environment values survive.
struct ConfigFlags {
  std::optional<std::string> config_file;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> given;

  void bind(CLI::App* app, bool architecture) {
    app->add_option("--config", config_file, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override any config key (key=value), repeatable");
    add_value(app, "--lambda", "lambda", "GMCCE sharpness");
    add_value(app, "--tau", "tau", "GMCCE confidence threshold");
    add_value(app, "--ks", "k_s", "GMCCE neighbours per point");
    add_value(app, "--km", "k_m", "GMCCE group errors summed");
    add_value(app, "--temperature", "temperature", "similarity softmax temperature");
    add_switch(app, "--no-gmcce", "no_gmcce", "weight correspondences by similarity instead of GMCCE");
    if (!architecture) return;
    add_value(app, "--seed", "seed", "random seed");
    add_value(app, "--lr", "lr", "Adam learning rate");
    add_value(app, "--epochs", "epochs", "passes over the training set");
    add_value(app, "--batch-size", "batch_size", "pairs per optimiser step");
    add_value(app, "--alpha", "alpha", "cycle loss weight");
    add_value(app, "--beta", "beta", "discrimination loss weight");
    add_value(app, "--pft-depth", "pft_depth", "encoder/decoder blocks in the feature transformer");
    add_value(app, "--pse-layers", "pse_layers", "extractor layers");
    add_value(app, "--d-model", "d_model", "feature width");
    add_value(app, "--k", "k", "extractor neighbours");
    add_switch(app, "--no-pse", "no_pse", "replace the structure extractor by a pointwise embedding");
    add_switch(app, "--shallow-wide", "shallow_wide", "one wide transformer block instead of the deep stack");
    add_switch(app, "--no-pos-enc", "no_pos_enc", "drop the positional encoding");
    add_switch(app, "--literal-losses", "literal_losses", "use the literal translation loss terms");
  }

  void add_value(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(flag, [this, key](const std::string& v) { given.emplace_back(key, v); }, help);
  }

  void add_switch(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_flag_callback(flag, [this, key] { given.emplace_back(key, "true"); }, help);
  }

  std::vector<std::pair<std::string, std::string>> overrides() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw dit::ConfigError("--set expects key=value, got '" + s + "'");
      out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    out.insert(out.end(), given.begin(), given.end());
    return out;
  }

  /// File, then DIT_SEED, then command-line flags.
  dit::PipelineConfig resolve() const {
    dit::PipelineConfig c = config_file ? dit::PipelineConfig::load(*config_file) : dit::PipelineConfig{};
    c.apply_environment();
    for (const auto& [k, v] : overrides()) c.set(k, v);
    c.validate();
    return c;
  }
};

void print_matrix(const dit::RigidTransform& t) {
  const dit::Mat4 m = t.matrix();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) std::printf("%s%.17g", c ? " " : "", m(r, c));
    std::printf("\n");
  }
}

void write_reports(const dit::EvalReport& rep, const std::optional<std::string>& csv, const std::optional<std::string>& curve,
                   const std::string& label) {
  if (csv) dit::write_file(*csv, [&](std::ostream& o) { dit::write_eval_csv(o, rep); });
  if (curve) dit::write_file(*curve, [&](std::ostream& o) { dit::write_curve(o, rep.curve); });
  std::cout << dit::metrics_table(label, rep.metrics);
  std::cout << "pairs " << rep.records.size() << " success(1deg,0.01) " << rep.metrics.success_ratio << " failures "
            << rep.failures << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point cloud registration with deep interaction transformers"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a procedural pair dataset");
  dit::GenOptions gen_opt;
  std::string gen_mode = "clean", gen_out;
  gen->add_option("--shape", gen_opt.shape, "sphere, cube, cylinder, torus, plane-cross or mixed")->capture_default_str();
  gen->add_option("--pairs", gen_opt.pairs, "number of pairs")->capture_default_str();
  gen->add_option("--points", gen_opt.points, "points per source cloud")->capture_default_str();
  gen->add_option("--mode", gen_mode, "clean, partial_low or partial_high")->capture_default_str();
  gen->add_option("--seed", gen_opt.seed, "random seed")->capture_default_str();
  gen->add_option("--min-scale", gen_opt.min_scale, "per-axis anisotropic scale lower bound (1 disables)")
      ->check(CLI::Range(1e-3, 1.0))
      ->capture_default_str();
  gen->add_option("--rot-max", gen_opt.ranges.rot_max_deg, "max Euler angle per axis, degrees")->capture_default_str();
  gen->add_option("--trans-max", gen_opt.ranges.trans_max, "max translation per axis")->capture_default_str();
  gen->add_option("--workers", gen_opt.workers, "worker threads")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  ConfigFlags train_cfg;
  train_cfg.bind(train, true);
  std::string train_data, train_ckpt;
  std::optional<std::string> train_val;
  train->add_option("--data", train_data, "training dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--val", train_val, "validation dataset directory")->check(CLI::ExistingDirectory);
  train->add_option("--checkpoint", train_ckpt, "checkpoint output directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ConfigFlags eval_cfg;
  eval_cfg.bind(eval, false);
  std::string eval_ckpt, eval_data;
  std::optional<std::string> eval_csv, eval_curve;
  dit::EvalOptions eval_opt;
  bool eval_no_timing = false;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--data", eval_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", eval_csv, "per-pair CSV");
  eval->add_option("--curve", eval_curve, "success-ratio curve CSV");
  eval->add_option("--workers", eval_opt.workers, "worker threads")->capture_default_str();
  eval->add_flag("--no-timing", eval_no_timing, "write time_ms = 0 so repeated runs are byte-identical");

  // register
  auto* reg = app.add_subcommand("register", "register one source cloud onto a target");
  ConfigFlags reg_cfg;
  reg_cfg.bind(reg, false);
  std::string reg_ckpt, reg_src, reg_tgt;
  reg->add_option("--checkpoint", reg_ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  reg->add_option("--src", reg_src, "source .xyz")->required()->check(CLI::ExistingFile);
  reg->add_option("--tgt", reg_tgt, "target .xyz")->required()->check(CLI::ExistingFile);

  // icp
  auto* icp = app.add_subcommand("icp", "point-to-point ICP baseline");
  std::optional<std::string> icp_data, icp_src, icp_tgt, icp_csv, icp_curve;
  dit::EvalOptions icp_opt;
  std::size_t icp_iters = 50;
  bool icp_no_timing = false;
  auto* icp_data_opt = icp->add_option("--data", icp_data, "dataset directory")->check(CLI::ExistingDirectory);
  auto* icp_src_opt = icp->add_option("--src", icp_src, "source .xyz")->check(CLI::ExistingFile);
  auto* icp_tgt_opt = icp->add_option("--tgt", icp_tgt, "target .xyz")->check(CLI::ExistingFile);
  icp_src_opt->needs(icp_tgt_opt)->excludes(icp_data_opt);
  icp_tgt_opt->needs(icp_src_opt);
  icp->add_option("--out", icp_csv, "per-pair CSV")->needs(icp_data_opt);
  icp->add_option("--curve", icp_curve, "success-ratio curve CSV")->needs(icp_data_opt);
  icp->add_option("--max-iters", icp_iters, "iteration cap")->capture_default_str();
  icp->add_option("--workers", icp_opt.workers, "worker threads")->capture_default_str();
  icp->add_flag("--no-timing", icp_no_timing, "write time_ms = 0");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  dit::PipelineConfig cfg;
  try {
    if (*train) cfg = train_cfg.resolve();
    if (*gen) gen_opt.mode = dit::parse_mode(gen_mode);
    if (*icp && !icp_data && !icp_src) throw CLI::RequiredError("--data or --src/--tgt");
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*gen) {
      dit::generate_dataset(gen_out, gen_opt);
      std::cout << "wrote " << gen_opt.pairs << " pairs to " << gen_out << '\n';
    } else if (*train) {
      const auto pairs = dit::load_dataset(train_data);
      std::vector<dit::PairSample> val;
      if (train_val) val = dit::load_dataset(*train_val);
      dit::Model model = dit::build_model(cfg);
      std::cout << "parameters " << model.params.total_size() << ", pairs " << pairs.size() << '\n';
      dit::TrainOptions opt;
      opt.checkpoint_dir = fs::path(train_ckpt);
      opt.log = &std::cout;
      if (train_val) opt.validation = &val;
      dit::train(model, pairs, opt);
      dit::save_model(train_ckpt, model);
    } else if (*eval) {
      eval_opt.timing = !eval_no_timing;
      const dit::Model model = dit::load_model(eval_ckpt, eval_cfg.overrides());
      write_reports(dit::evaluate_model(model, eval_data, eval_opt), eval_csv, eval_curve, "DIT");
    } else if (*reg) {
      const dit::Model model = dit::load_model(reg_ckpt, reg_cfg.overrides());
      const auto r = dit::register_pair(model, dit::io::read_xyz(reg_src), dit::io::read_xyz(reg_tgt));
      if (!r.ok) throw std::runtime_error(r.failure);
      print_matrix(r.transform);
    } else if (*icp) {
      if (icp_src) {
        print_matrix(dit::icp(dit::io::read_xyz(*icp_src), dit::io::read_xyz(*icp_tgt), icp_iters).transform);
      } else {
        icp_opt.timing = !icp_no_timing;
        write_reports(dit::evaluate_icp(*icp_data, icp_opt, icp_iters), icp_csv, icp_curve, "ICP");
      }
    }
  } catch (const dit::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

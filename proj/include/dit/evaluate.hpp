#pragma once

// Evaluation campaigns: register every pair of a dataset, write the per-pair
// CSV and the success-ratio curve.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dit/dataset.hpp"
#include "dit/io.hpp"
#include "dit/match.hpp"
#include "dit/metrics.hpp"
#include "dit/pipeline.hpp"

namespace dit {

struct EvalRecord {
  std::string pair_id;
  PairError error;
  double time_ms = 0.0;
  bool ok = true;
  std::string failure;
};

struct EvalReport {
  std::vector<EvalRecord> records;  // sorted by pair_id
  MetricsReport metrics;
  std::vector<CurvePoint> curve;
  std::size_t failures = 0;

  std::vector<PairError> errors() const {
    std::vector<PairError> e;
    e.reserve(records.size());
    for (const auto& r : records) e.push_back(r.error);
    return e;
  }
};

struct EvalOptions {
  std::size_t workers = 1;
  bool timing = true;  // false writes time_ms = 0 for reproducible files
  double r_thres = 1.0;
  double t_thres = 0.01;
};

using Registrar = std::function<RegistrationResult(const PairSample&)>;

inline EvalReport summarize(std::vector<EvalRecord> records, const EvalOptions& opt) {
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.pair_id < b.pair_id; });
  EvalReport rep;
  rep.records = std::move(records);
  for (const auto& r : rep.records) rep.failures += r.ok ? 0 : 1;
  const auto errs = rep.errors();
  rep.metrics = aggregate_metrics(errs, opt.r_thres, opt.t_thres);
  rep.curve = success_curve(errs);
  return rep;
}

inline EvalReport evaluate(const std::vector<std::filesystem::path>& pair_dirs, const Registrar& reg,
                           const EvalOptions& opt = {}) {
  if (pair_dirs.empty()) throw std::invalid_argument("evaluate: no pairs");
  std::vector<EvalRecord> records(pair_dirs.size());
  parallel_for(pair_dirs.size(), opt.workers, [&](std::size_t i) {
    const PairSample p = io::read_pair(pair_dirs[i]);
    const RegistrationResult r = reg(p);
    EvalRecord& rec = records[i];
    rec.pair_id = pair_dirs[i].filename().string();
    rec.error = pair_error(r.transform, p.ground_truth);
    rec.time_ms = opt.timing ? r.time_ms : 0.0;
    rec.ok = r.ok;
    rec.failure = r.failure;
  });
  return summarize(std::move(records), opt);
}

inline EvalReport evaluate_model(const Model& m, const std::filesystem::path& root, const EvalOptions& opt = {}) {
  return evaluate(io::list_pairs(root), [&m](const PairSample& p) { return register_pair(m, p.src, p.tgt); }, opt);
}

inline RegistrationResult register_icp(const PointCloud& src, const PointCloud& tgt, std::size_t max_iters = 50) {
  const auto t0 = std::chrono::steady_clock::now();
  RegistrationResult r;
  try {
    r.transform = icp(src, tgt, max_iters).transform;
  } catch (const DegenerateError& e) {
    r.ok = false;
    r.failure = e.what();
  }
  r.time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline EvalReport evaluate_icp(const std::filesystem::path& root, const EvalOptions& opt = {}, std::size_t max_iters = 50) {
  return evaluate(io::list_pairs(root), [max_iters](const PairSample& p) { return register_icp(p.src, p.tgt, max_iters); },
                  opt);
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_eval_csv(std::ostream& out, const EvalReport& rep) {
  out << "pair_id,r_err_x,r_err_y,r_err_z,t_err,time_ms,success_1_001\n";
  for (const auto& r : rep.records) {
    out << r.pair_id;
    for (int k = 0; k < 3; ++k) out << ',' << format_number(r.error.rotation_deg[k]);
    out << ',' << format_number(r.error.translation_norm()) << ',' << format_number(r.time_ms) << ','
        << (is_success(r.error, 1.0, 0.01) ? 1 : 0) << '\n';
  }
}

inline void write_curve(std::ostream& out, const std::vector<CurvePoint>& curve) {
  out << "threshold_r,threshold_t,ratio\n";
  for (const auto& p : curve)
    out << format_number(p.r_thres) << ',' << format_number(p.t_thres) << ',' << format_number(p.ratio) << '\n';
}

template <class Writer>
void write_file(const std::filesystem::path& path, Writer&& w) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  w(out);
}

/// One row in the layout of a results table: R_RMSE R_MAE t_RMSE t_MAE.
inline std::string metrics_table(const std::string& label, const MetricsReport& m) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-16s %12s %12s %12s %12s\n", "method", "R_RMSE", "R_MAE", "t_RMSE", "t_MAE");
  out << buf;
  std::snprintf(buf, sizeof buf, "%-16s %12.6g %12.6g %12.6g %12.6g\n", label.c_str(), m.r_rmse, m.r_mae, m.t_rmse,
                m.t_mae);
  out << buf;
  return out.str();
}

}  // namespace dit

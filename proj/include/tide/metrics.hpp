#pragma once

#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "tide/spectral.hpp"
#include "tide/trainer.hpp"

namespace tide {

// One JSONL record per optimizer step; the first line is a header carrying
// the config hash. Records contain no wall-clock fields, so identical runs
// produce identical streams.
class MetricsWriter {
 public:
  MetricsWriter() = default;

  void open(const std::string& path, const std::string& config_hash) {
    out_.open(path);
    if (!out_) throw std::runtime_error("metrics: cannot write " + path);
    nlohmann::json header;
    header["config_hash"] = config_hash;
    header["format"] = "tide-metrics-v1";
    out_ << header.dump() << "\n";
  }

  bool is_open() const { return out_.is_open(); }

  void append(const StepMetrics& m) {
    if (!out_.is_open()) return;
    nlohmann::json j;
    j["step"] = m.step;
    j["loss_total"] = m.loss_total;
    j["loss_task"] = m.loss_task;
    j["loss_ei"] = m.loss_ei;
    j["loss_game"] = m.loss_game;
    j["loss_sync"] = m.loss_sync;
    j["loss_spec"] = m.loss_spec;
    j["rho_ei"] = m.rho_ei;
    j["lr"] = m.lr;
    j["skipped"] = m.skipped;
    j["accuracy"] = m.accuracy;
    out_ << j.dump() << "\n";
  }

  void append_spectral(const SpectralReport& r) {
    if (!out_.is_open()) return;
    nlohmann::json j;
    j["step"] = r.step;
    j["spectral"] = {{"perron_ee", r.perron_ee},
                     {"perron_ii", r.perron_ii},
                     {"lds_lambda_max", r.lds_lambda_max},
                     {"is_lds", r.is_lds},
                     {"sigma_max_ei", r.sigma_max_ei},
                     {"sigma_max_ie", r.sigma_max_ie}};
    out_ << j.dump() << "\n";
  }

  void append_eval(long long step, const EvalSummary& s, const std::string& split) {
    if (!out_.is_open()) return;
    nlohmann::json j;
    j["step"] = step;
    j["eval"] = {{"split", split},
                 {"accuracy", s.accuracy},
                 {"accuracy_last_step", s.accuracy_last_step},
                 {"mean_certainty", s.mean_certainty}};
    out_ << j.dump() << "\n";
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

}  // namespace tide

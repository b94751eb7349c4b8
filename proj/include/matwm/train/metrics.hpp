#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace matwm {

// Append-only JSON-lines metrics sink: one object per line with a step, a
// kind discriminator and numeric fields. Kept intentionally dumb so streams
// from two identical runs compare byte-for-byte.
class MetricsLogger {
 public:
  MetricsLogger() = default;
  explicit MetricsLogger(const std::string& path, bool append = false) { open(path, append); }

  void open(const std::string& path, bool append = false) {
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw std::runtime_error("metrics: cannot open " + path);
  }
  bool is_open() const { return out_.is_open(); }

  void log(int64_t step, const std::string& kind, const std::map<std::string, double>& fields) {
    nlohmann::json j;
    j["step"] = step;
    j["kind"] = kind;
    for (const auto& [k, v] : fields) j[k] = v;
    if (out_.is_open()) {
      out_ << j.dump() << "\n";
      out_.flush();
    }
    if (capture) capture->push_back(std::move(j));
  }

  // Optional in-memory tee for tests and the experiment driver.
  std::vector<nlohmann::json>* capture = nullptr;

 private:
  std::ofstream out_;
};

inline std::vector<nlohmann::json> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("metrics: cannot open " + path);
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

}  // namespace matwm

#include "unlearn/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "unlearn/errors.hpp"

namespace unlearn {

using nlohmann::json;

std::string format_percent(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", value);
  return buf;
}

double round2(double value) { return std::round(value * 100.0) / 100.0; }

namespace {

json row_to_json(const MetricsReport& r) {
  json j;
  j["paradigm"] = r.paradigm;
  j["epochs"] = r.epochs;
  j["ua"] = round2(r.ua);
  j["mia_efficacy"] = round2(r.mia_efficacy);
  j["ra"] = round2(r.ra);
  j["ta"] = round2(r.ta);
  j["rte_seconds_per_epoch"] = r.rte ? json(*r.rte) : json(nullptr);
  j["memory_proxy_bytes"] = r.memory_proxy_bytes;
  j["trainable_params"] = r.trainable_params;
  return j;
}

MetricsReport row_from_json(const json& j) {
  MetricsReport r;
  r.paradigm = j.at("paradigm").get<std::string>();
  r.epochs = j.at("epochs").get<int>();
  r.ua = j.at("ua").get<double>();
  r.mia_efficacy = j.at("mia_efficacy").get<double>();
  r.ra = j.at("ra").get<double>();
  r.ta = j.at("ta").get<double>();
  if (const auto& rte = j.at("rte_seconds_per_epoch"); !rte.is_null()) r.rte = rte.get<double>();
  r.memory_proxy_bytes = j.at("memory_proxy_bytes").get<std::size_t>();
  r.trainable_params = j.at("trainable_params").get<std::size_t>();
  return r;
}

std::size_t paradigm_rank(const std::string& name) {
  for (std::size_t i = 0; i < std::size(kAllParadigms); ++i) {
    if (to_string(kAllParadigms[i]) == name) return i;
  }
  return std::size(kAllParadigms);
}

}  // namespace

std::string metrics_to_json(const std::vector<MetricsReport>& rows) {
  json arr = json::array();
  for (const auto& r : rows) arr.push_back(row_to_json(r));
  return arr.dump(2) + "\n";
}

std::vector<MetricsReport> metrics_from_json(const std::string& text) {
  try {
    const json arr = json::parse(text);
    if (!arr.is_array()) throw FormatError("metrics report must be a JSON array");
    std::vector<MetricsReport> rows;
    for (const auto& j : arr) rows.push_back(row_from_json(j));
    return rows;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed metrics report: ") + e.what());
  }
}

std::string metrics_to_table_csv(const std::vector<MetricsReport>& rows) {
  std::set<int> settings;
  std::vector<std::string> order;
  std::map<std::string, std::map<int, const MetricsReport*>> by_paradigm;
  for (const auto& r : rows) {
    settings.insert(r.epochs);
    if (!by_paradigm.count(r.paradigm)) order.push_back(r.paradigm);
    by_paradigm[r.paradigm][r.epochs] = &r;
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const std::string& a, const std::string& b) { return paradigm_rank(a) < paradigm_rank(b); });

  std::ostringstream os;
  os << "paradigm";
  for (const char* metric : {"UA", "MIA-Efficacy", "RA", "TA"}) {
    for (int e : settings) os << ',' << metric << '@' << e;
  }
  os << ",RTE,memory_proxy_bytes,trainable_params\n";
  for (const auto& name : order) {
    const auto& cells = by_paradigm[name];
    os << name;
    for (double MetricsReport::*field : {&MetricsReport::ua, &MetricsReport::mia_efficacy, &MetricsReport::ra,
                                         &MetricsReport::ta}) {
      for (int e : settings) {
        auto it = cells.find(e);
        os << ',' << (it == cells.end() ? std::string("-") : format_percent(it->second->*field));
      }
    }
    // RTE, memory and parameter counts come from the longest run.
    const MetricsReport& last = *cells.rbegin()->second;
    os << ',' << (last.rte ? format_percent(*last.rte) : std::string("-"));
    os << ',' << last.memory_proxy_bytes << ',' << last.trainable_params << '\n';
  }
  return os.str();
}

std::string loss_split_to_csv(const LossSplit& split) {
  std::ostringstream os;
  os << "set,loss\n";
  char buf[64];
  for (double l : split.test_losses) {
    std::snprintf(buf, sizeof buf, "%.9g", l);
    os << "test," << buf << '\n';
  }
  for (double l : split.forget_losses) {
    std::snprintf(buf, sizeof buf, "%.9g", l);
    os << "forget," << buf << '\n';
  }
  return os.str();
}

std::string run_record_to_json(const RunRecord& r) {
  json j;
  j["paradigm"] = r.paradigm;
  j["epochs"] = r.epochs;
  j["seconds_per_epoch"] = r.seconds_per_epoch;
  j["trainable_params"] = r.trainable_params;
  j["optimizer_state_elements"] = r.optimizer_state_elements;
  j["memory_proxy_bytes"] = r.memory_proxy_bytes;
  j["optimizer_steps"] = r.optimizer_steps;
  j["epoch_losses"] = r.epoch_losses;
  j["epoch_seconds"] = r.epoch_seconds;
  return j.dump(2) + "\n";
}

RunRecord run_record_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    RunRecord r;
    r.paradigm = j.at("paradigm").get<std::string>();
    r.epochs = j.at("epochs").get<int>();
    r.seconds_per_epoch = j.at("seconds_per_epoch").get<double>();
    r.trainable_params = j.at("trainable_params").get<std::size_t>();
    r.optimizer_state_elements = j.at("optimizer_state_elements").get<std::size_t>();
    r.memory_proxy_bytes = j.at("memory_proxy_bytes").get<std::size_t>();
    r.optimizer_steps = j.at("optimizer_steps").get<std::int64_t>();
    r.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
    r.epoch_seconds = j.at("epoch_seconds").get<std::vector<double>>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed run record: ") + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void build_report(const std::vector<MetricsReport>& rows, const std::filesystem::path& dir) {
  if (rows.empty()) throw ConfigError("report needs at least one row");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text_file(dir / "metrics.json", metrics_to_json(rows));
  write_text_file(dir / "table1.csv", metrics_to_table_csv(rows));
}

}  // namespace unlearn

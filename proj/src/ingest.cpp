#include "causaldiag/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <regex>
#include <set>
#include <sstream>

#include "causaldiag/error.hpp"

namespace causaldiag {

// ---------------------------------------------------------------------------
// MetricBatch

std::optional<std::size_t> MetricBatch::index_of(const NodeId& node) const {
  auto it = std::find(node_ids.begin(), node_ids.end(), node);
  if (it == node_ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - node_ids.begin());
}

Eigen::VectorXd MetricBatch::series(const NodeId& node) const {
  auto idx = index_of(node);
  if (!idx) throw Error(ErrorKind::not_found, "no series for node '" + node + "'");
  return values.row(static_cast<Eigen::Index>(*idx)).transpose();
}

MetricBatch MetricBatch::slice(std::size_t begin, std::size_t length) const {
  if (begin + length > num_samples()) {
    throw Error(ErrorKind::invalid_argument, "slice exceeds batch");
  }
  MetricBatch out;
  out.node_ids = node_ids;
  out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                        timestamps.begin() + static_cast<std::ptrdiff_t>(begin + length));
  out.values = values.middleCols(static_cast<Eigen::Index>(begin),
                                 static_cast<Eigen::Index>(length));
  return out;
}

void MetricBatch::validate() const {
  if (static_cast<std::size_t>(values.rows()) != node_ids.size() ||
      static_cast<std::size_t>(values.cols()) != timestamps.size()) {
    throw Error(ErrorKind::invalid_argument, "metric batch dimensions mismatch");
  }
  for (std::size_t t = 1; t < timestamps.size(); ++t) {
    if (timestamps[t] <= timestamps[t - 1]) {
      throw Error(ErrorKind::invalid_argument,
                  "metric batch timestamps must be strictly increasing");
    }
  }
  if (!values.allFinite()) {
    throw Error(ErrorKind::invalid_argument, "metric batch has missing values");
  }
  std::set<NodeId> unique(node_ids.begin(), node_ids.end());
  if (unique.size() != node_ids.size()) {
    throw Error(ErrorKind::invalid_argument, "metric batch has duplicate nodes");
  }
}

// ---------------------------------------------------------------------------
// TraceDependencyGraph

void TraceDependencyGraph::add_calls(const std::string& caller,
                                     const std::string& callee,
                                     std::int64_t count) {
  if (caller == callee) {
    throw Error(ErrorKind::invalid_argument, "self-call on '" + caller + "'");
  }
  if (count < 1) {
    throw Error(ErrorKind::invalid_argument, "call count must be >= 1");
  }
  edges_[{caller, callee}] += count;
}

bool TraceDependencyGraph::has_edge(const std::string& caller,
                                    const std::string& callee) const {
  return edges_.count({caller, callee}) != 0;
}

std::int64_t TraceDependencyGraph::call_count(const std::string& caller,
                                              const std::string& callee) const {
  auto it = edges_.find({caller, callee});
  return it == edges_.end() ? 0 : it->second;
}

nlohmann::json to_json(const TraceDependencyGraph& traces) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [pair, count] : traces.edges()) {
    edges.push_back(
        {{"caller", pair.first}, {"callee", pair.second}, {"count", count}});
  }
  return {{"edges", edges}};
}

TraceDependencyGraph traces_from_json(const nlohmann::json& j,
                                      std::vector<std::string>* warnings) {
  TraceDependencyGraph g;
  try {
    const auto& rows = j.at("edges");
    if (!rows.is_array()) {
      throw Error(ErrorKind::parse, "trace file: 'edges' must be an array");
    }
    std::size_t index = 0;
    for (const auto& row : rows) {
      auto caller = row.at("caller").get<std::string>();
      auto callee = row.at("callee").get<std::string>();
      auto count = row.at("count").get<std::int64_t>();
      if (count < 0) {
        throw Error(ErrorKind::parse, "trace row " + std::to_string(index) +
                                          ": negative call count");
      }
      if (caller == callee) {
        if (warnings) {
          warnings->push_back("trace row " + std::to_string(index) +
                              ": self-loop on '" + caller + "' skipped");
        }
      } else if (count == 0) {
        if (warnings) {
          warnings->push_back("trace row " + std::to_string(index) +
                              ": zero call count skipped");
        }
      } else {
        g.add_calls(caller, callee, count);
      }
      ++index;
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::parse, std::string("trace file: ") + ex.what());
  }
  return g;
}

// ---------------------------------------------------------------------------
// Naming

const std::vector<std::string>& default_metric_suffixes() {
  static const std::vector<std::string> kSuffixes{"_cpu_by_pod", "_mem_by_pod"};
  return kSuffixes;
}

std::string matched_suffix(std::string_view node,
                           const std::vector<std::string>& suffixes) {
  std::string best;
  for (const auto& s : suffixes) {
    if (s.size() > best.size() && node.size() >= s.size() &&
        node.substr(node.size() - s.size()) == s) {
      best = s;
    }
  }
  return best;
}

std::string strip_pod_identifier(std::string_view pod) {
  static const std::regex kPodId("-[a-z0-9]{6,10}-[a-z0-9]{5}$");
  std::string s(pod);
  std::smatch m;
  if (std::regex_search(s, m, kPodId)) {
    return s.substr(0, static_cast<std::size_t>(m.position(0)));
  }
  return s;
}

std::string extract_service_name(std::string_view node,
                                 const std::vector<std::string>& suffixes) {
  if (suffixes.empty()) {
    throw Error(ErrorKind::invalid_argument, "metric suffix list is empty");
  }
  std::string suffix = matched_suffix(node, suffixes);
  std::string rest(node.substr(0, node.size() - suffix.size()));
  rest = strip_pod_identifier(rest);
  if (rest.empty()) {
    throw Error(ErrorKind::invalid_argument,
                "unresolvable service for node '" + std::string(node) + "'");
  }
  return rest;
}

// ---------------------------------------------------------------------------
// Metric files

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

struct RawSample {
  std::string pod;
  std::string metric;
  std::int64_t ts;
  double value;
};

double parse_value(const nlohmann::json& v, std::size_t line) {
  if (v.is_null()) return kMissing;
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    auto s = v.get<std::string>();
    if (s == "NaN" || s == "nan" || s.empty()) return kMissing;
  }
  throw Error(ErrorKind::parse,
              "line " + std::to_string(line) + ": 'value' must be a number or null");
}

}  // namespace

MetricLoadResult parse_metrics(std::string_view text, std::size_t window,
                               std::size_t step,
                               const MetricLoadOptions& options) {
  if (window < 10) {
    throw Error(ErrorKind::invalid_argument, "window must be >= 10");
  }
  if (step < 1) throw Error(ErrorKind::invalid_argument, "step must be >= 1");

  std::vector<RawSample> samples;
  {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        auto j = nlohmann::json::parse(line);
        samples.push_back({j.at("pod").get<std::string>(),
                           j.at("metric").get<std::string>(),
                           j.at("ts").get<std::int64_t>(),
                           parse_value(j.at("value"), lineno)});
      } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorKind::parse, "line " + std::to_string(lineno) +
                                          ": malformed metric sample (" +
                                          ex.what() + ")");
      }
    }
  }
  if (samples.empty()) throw Error(ErrorKind::parse, "metric file is empty");

  // Node ids: <deployment>_<metric> unless two pods of one deployment collide.
  std::map<std::pair<std::string, std::string>, std::set<std::string>> pods_of;
  for (const auto& s : samples) {
    pods_of[{strip_pod_identifier(s.pod), s.metric}].insert(s.pod);
  }
  auto node_of = [&](const RawSample& s) {
    auto deployment = strip_pod_identifier(s.pod);
    if (pods_of[{deployment, s.metric}].size() > 1) return s.pod + "_" + s.metric;
    return deployment + "_" + s.metric;
  };

  std::set<std::int64_t> grid_set;
  std::set<NodeId> node_set;
  for (const auto& s : samples) {
    grid_set.insert(s.ts);
    node_set.insert(node_of(s));
  }
  std::vector<std::int64_t> grid(grid_set.begin(), grid_set.end());
  std::vector<NodeId> nodes(node_set.begin(), node_set.end());
  if (grid.size() < window) {
    throw Error(ErrorKind::invalid_argument,
                "window exceeds data (" + std::to_string(grid.size()) +
                    " samples < window " + std::to_string(window) + ")");
  }

  std::map<NodeId, std::size_t> row_of;
  for (std::size_t i = 0; i < nodes.size(); ++i) row_of[nodes[i]] = i;
  std::map<std::int64_t, std::size_t> col_of;
  for (std::size_t t = 0; t < grid.size(); ++t) col_of[grid[t]] = t;

  Eigen::MatrixXd full = Eigen::MatrixXd::Constant(
      static_cast<Eigen::Index>(nodes.size()),
      static_cast<Eigen::Index>(grid.size()), kMissing);
  std::vector<std::vector<bool>> present(nodes.size(),
                                         std::vector<bool>(grid.size(), false));
  std::size_t lineno = 0;
  for (const auto& s : samples) {
    ++lineno;
    auto r = row_of[node_of(s)];
    auto c = col_of[s.ts];
    if (present[r][c]) {
      throw Error(ErrorKind::parse, "duplicate sample for '" + nodes[r] +
                                        "' at ts " + std::to_string(s.ts));
    }
    present[r][c] = true;
    full(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = s.value;
  }

  MetricLoadResult result;
  const std::size_t count = (grid.size() - window) / step + 1;
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t begin = w * step;
    std::vector<std::size_t> kept;
    for (std::size_t r = 0; r < nodes.size(); ++r) {
      std::size_t missing = 0;
      for (std::size_t t = begin; t < begin + window; ++t) {
        if (std::isnan(full(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)))) {
          ++missing;
        }
      }
      if (static_cast<double>(missing) >
          options.max_missing_fraction * static_cast<double>(window)) {
        result.warnings.push_back("window " + std::to_string(w) + ": series '" +
                                  nodes[r] + "' missing " + std::to_string(missing) +
                                  " of " + std::to_string(window) +
                                  " samples; excluded");
      } else {
        kept.push_back(r);
      }
    }

    MetricBatch batch;
    batch.timestamps.assign(grid.begin() + static_cast<std::ptrdiff_t>(begin),
                            grid.begin() + static_cast<std::ptrdiff_t>(begin + window));
    batch.values.resize(static_cast<Eigen::Index>(kept.size()),
                        static_cast<Eigen::Index>(window));
    for (std::size_t k = 0; k < kept.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(kept[k]);
      batch.node_ids.push_back(nodes[kept[k]]);
      // Last valid value at or before the window start, searching backwards.
      double last = kMissing;
      for (std::size_t t = begin + 1; t-- > 0;) {
        double v = full(r, static_cast<Eigen::Index>(t));
        if (!std::isnan(v)) {
          last = v;
          break;
        }
      }
      if (std::isnan(last)) {
        // Leading gap with no history: back-fill from the first valid sample.
        for (std::size_t t = begin; t < begin + window; ++t) {
          double v = full(r, static_cast<Eigen::Index>(t));
          if (!std::isnan(v)) {
            last = v;
            break;
          }
        }
      }
      for (std::size_t t = begin; t < begin + window; ++t) {
        double v = full(r, static_cast<Eigen::Index>(t));
        if (std::isnan(v)) {
          v = last;
        } else {
          last = v;
        }
        batch.values(static_cast<Eigen::Index>(k),
                     static_cast<Eigen::Index>(t - begin)) = v;
      }
    }
    result.batches.push_back(std::move(batch));
  }
  return result;
}

MetricLoadResult load_metrics(const std::filesystem::path& path,
                              std::size_t window, std::size_t step,
                              const MetricLoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::not_found, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_metrics(buf.str(), window, step, options);
}

void write_metrics(const std::filesystem::path& path, const MetricBatch& batch,
                   const std::map<std::string, std::string>& pods,
                   const std::vector<std::string>& suffixes) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::not_found, "cannot write " + path.string());
  std::vector<std::pair<std::string, std::string>> pod_metric;
  for (const auto& node : batch.node_ids) {
    auto suffix = matched_suffix(node, suffixes);
    if (suffix.empty()) {
      throw Error(ErrorKind::invalid_argument,
                  "node '" + node + "' has no known metric suffix");
    }
    auto service = extract_service_name(node, suffixes);
    auto it = pods.find(service);
    pod_metric.emplace_back(it == pods.end() ? service : it->second,
                            suffix.substr(1));
  }
  for (std::size_t t = 0; t < batch.num_samples(); ++t) {
    for (std::size_t r = 0; r < batch.num_nodes(); ++r) {
      nlohmann::json row{{"metric", pod_metric[r].second},
                         {"pod", pod_metric[r].first},
                         {"ts", batch.timestamps[t]},
                         {"value", batch.values(static_cast<Eigen::Index>(r),
                                                static_cast<Eigen::Index>(t))}};
      out << row.dump() << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Trace files

TraceLoadResult load_traces(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::not_found, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::parse, "trace file: " + std::string(ex.what()));
  }
  TraceLoadResult result;
  result.graph = traces_from_json(j, &result.warnings);
  return result;
}

void write_traces(const std::filesystem::path& path,
                  const TraceDependencyGraph& traces) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::not_found, "cannot write " + path.string());
  out << to_json(traces).dump(2) << '\n';
}

}  // namespace causaldiag

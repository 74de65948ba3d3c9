#include <gtest/gtest.h>

#include <filesystem>
#include <regex>
#include <sstream>

#include "causaldiag/error.hpp"
#include "causaldiag/ingest.hpp"
#include "causaldiag/telemetry_sim.hpp"

using namespace causaldiag;

namespace {

std::string series_text(const std::string& pod, const std::string& metric, int samples,
                        int nan_at = -1) {
  std::ostringstream out;
  for (int t = 0; t < samples; ++t) {
    out << R"({"metric":")" << metric << R"(","pod":")" << pod << R"(","ts":)" << 1000 + 15 * t
        << R"(,"value":)";
    if (t == nan_at) {
      out << "null";
    } else {
      out << 10.0 + t;
    }
    out << "}\n";
  }
  return out.str();
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("causaldiag_ingest_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(ExtractServiceName, SpecExamples) {
  const auto& sfx = default_metric_suffixes();
  EXPECT_EQ(extract_service_name("valetparking_cpu_by_pod", sfx), "valetparking");
  EXPECT_EQ(extract_service_name("parkingspotmanager-7d9f8b6-x2k4j_mem_by_pod", sfx),
            "parkingspotmanager");
  EXPECT_THROW(extract_service_name("_cpu_by_pod", sfx), Error);
}

TEST(ExtractServiceName, LongestSuffixWins) {
  std::vector<std::string> sfx{"_by_pod", "_cpu_by_pod"};
  EXPECT_EQ(extract_service_name("svc_cpu_by_pod", sfx), "svc");
  EXPECT_EQ(matched_suffix("svc_cpu_by_pod", sfx), "_cpu_by_pod");
}

TEST(ExtractServiceName, RegexOracleOverSimulatorPodNames) {
  const std::regex pod_id("^(.*)-[a-z0-9]{6,10}-[a-z0-9]{5}$");
  auto sc = default_avp_spec(3);
  for (const auto& [service, pod] : pod_names(sc.spec)) {
    std::smatch m;
    ASSERT_TRUE(std::regex_match(pod, m, pod_id)) << pod;
    EXPECT_EQ(m[1].str(), service);
    EXPECT_EQ(extract_service_name(pod + "_cpu_by_pod", default_metric_suffixes()), service);
  }
}

TEST(StripPodIdentifier, LeavesPlainNamesAlone) {
  EXPECT_EQ(strip_pod_identifier("valetparking"), "valetparking");
  EXPECT_EQ(strip_pod_identifier("svc-abc-12345"), "svc-abc-12345");  // id part too short
  EXPECT_EQ(strip_pod_identifier("svc-abcdef-12345"), "svc");
}

TEST(ParseMetrics, WindowCount) {
  auto res = parse_metrics(series_text("svc-abcdef1-x2k4j", "cpu_by_pod", 100), 50, 25);
  EXPECT_EQ(res.batches.size(), 3u);
  EXPECT_EQ(res.batches[0].node_ids, std::vector<NodeId>{"svc_cpu_by_pod"});
  EXPECT_EQ(res.batches[2].timestamps.front(), 1000 + 15 * 50);
}

TEST(ParseMetrics, ForwardFillsGap) {
  auto res = parse_metrics(series_text("svc", "cpu_by_pod", 20, 7), 20, 1);
  ASSERT_EQ(res.batches.size(), 1u);
  EXPECT_DOUBLE_EQ(res.batches[0].values(0, 7), res.batches[0].values(0, 6));
  EXPECT_DOUBLE_EQ(res.batches[0].values(0, 8), 18.0);
}

TEST(ParseMetrics, LeadingGapBackFills) {
  auto res = parse_metrics(series_text("svc", "cpu_by_pod", 20, 0), 20, 1);
  EXPECT_DOUBLE_EQ(res.batches[0].values(0, 0), res.batches[0].values(0, 1));
}

TEST(ParseMetrics, WindowExceedsData) {
  try {
    parse_metrics(series_text("svc", "cpu_by_pod", 9), 10, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("window exceeds data"), std::string::npos);
  }
}

TEST(ParseMetrics, MalformedLineNamesLine) {
  std::string text = series_text("svc", "cpu_by_pod", 12) + "{not json\n";
  try {
    parse_metrics(text, 10, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parse);
    EXPECT_NE(std::string(e.what()).find("line 13"), std::string::npos);
  }
  EXPECT_THROW(parse_metrics("", 10, 1), Error);
}

TEST(ParseMetrics, SparseSeriesExcludedWithWarning) {
  std::string text = series_text("a", "cpu_by_pod", 20);
  std::ostringstream sparse;
  for (int t = 0; t < 20; t += 4) {
    sparse << R"({"metric":"cpu_by_pod","pod":"b","ts":)" << 1000 + 15 * t << R"(,"value":1})"
           << "\n";
  }
  auto res = parse_metrics(text + sparse.str(), 20, 1);
  EXPECT_EQ(res.batches[0].node_ids, std::vector<NodeId>{"a_cpu_by_pod"});
  EXPECT_FALSE(res.warnings.empty());
}

TEST(ParseMetrics, DuplicateSampleRejected) {
  std::string text = series_text("a", "cpu_by_pod", 12);
  text += R"({"metric":"cpu_by_pod","pod":"a","ts":1000,"value":3})" "\n";
  EXPECT_THROW(parse_metrics(text, 10, 1), Error);
}

TEST(Traces, AggregatesAndSkipsSelfLoops) {
  auto j = nlohmann::json::parse(R"({"edges":[
      {"caller":"A","callee":"B","count":3},
      {"caller":"A","callee":"B","count":2},
      {"caller":"A","callee":"A","count":1}]})");
  std::vector<std::string> warnings;
  auto g = traces_from_json(j, &warnings);
  EXPECT_EQ(g.edge_count(), 1u);
  EXPECT_EQ(g.call_count("A", "B"), 5);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_TRUE(traces_from_json(nlohmann::json::parse(R"({"edges":[]})")).empty());
  EXPECT_THROW(traces_from_json(nlohmann::json::parse(
                   R"({"edges":[{"caller":"A","callee":"B","count":-1}]})")),
               Error);
}

TEST(Traces, FileRoundTrip) {
  auto dir = temp_dir("traces");
  auto sc = default_avp_spec(7);
  write_traces(dir / "t.json", sc.truth.trace_graph);
  EXPECT_EQ(load_traces(dir / "t.json").graph, sc.truth.trace_graph);
}

TEST(Metrics, SimulatorRoundTripIsBitExact) {
  auto dir = temp_dir("roundtrip");
  auto sc = default_avp_spec(5);
  sc.fault.onset = 250;
  auto batch = generate_metrics(sc.spec, sc.fault, 300);
  write_metrics(dir / "m.jsonl", batch, pod_names(sc.spec), sc.spec.metric_suffixes());
  auto loaded = load_metrics(dir / "m.jsonl", 300, 300);
  ASSERT_EQ(loaded.batches.size(), 1u);
  const auto& b = loaded.batches[0];
  EXPECT_EQ(b.timestamps, batch.timestamps);
  ASSERT_EQ(b.num_nodes(), batch.num_nodes());
  for (const auto& node : batch.node_ids) {
    Eigen::VectorXd a = batch.series(node), c = b.series(node);
    for (Eigen::Index t = 0; t < a.size(); ++t) ASSERT_EQ(a(t), c(t)) << node << " @" << t;
  }
}

TEST(MetricBatch, SliceAndValidate) {
  auto sc = default_avp_spec(1);
  sc.fault.onset = 50;
  auto batch = generate_metrics(sc.spec, sc.fault, 100);
  auto s = batch.slice(90, 10);
  EXPECT_EQ(s.num_samples(), 10u);
  EXPECT_EQ(s.values(0, 0), batch.values(0, 90));
  EXPECT_THROW(batch.slice(95, 10), Error);
  s.timestamps[3] = s.timestamps[2];
  EXPECT_THROW(s.validate(), Error);
}

#include "causaldiag/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "causaldiag/error.hpp"

namespace causaldiag {

namespace {

void check_keys(const YAML::Node& node, const std::string& section,
                const std::set<std::string>& allowed) {
  if (!node.IsMap()) {
    throw Error(ErrorKind::parse, "config section '" + section + "' must be a mapping");
  }
  for (const auto& kv : node) {
    auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) {
      throw Error(ErrorKind::parse, "unknown config key '" +
                                        (section.empty() ? key : section + "." + key) + "'");
    }
  }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& section) {
  if (!node[key]) return;
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception&) {
    throw Error(ErrorKind::parse, "config key '" + section + "." + key + "' has the wrong type");
  }
}

}  // namespace

void PipelineConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::invalid_argument, m); };
  if (data.window < 10) fail("data.window must be at least 10");
  if (data.step < 1) fail("data.step must be at least 1");
  if (simulator.horizon < 100) fail("simulator.horizon must be at least 100");
  if (!(pc.alpha > 0.0 && pc.alpha < 1.0)) fail("pc.alpha must lie in (0,1)");
  if (encoder.hidden < 1 || encoder.dim < 1) fail("encoder dimensions must be positive");
  if (!(encoder.lr > 0.0)) fail("encoder.lr must be positive");
  base_policy.validate();
  if (feedback.retrain_threshold < 1) fail("feedback.retrain_threshold must be positive");
  if (!(feedback.oracle_noise >= 0.0 && feedback.oracle_noise <= 1.0)) {
    fail("feedback.oracle_noise must lie in [0,1]");
  }
  if (!(feedback.session.epsilon >= 0.0 && feedback.session.epsilon <= 1.0)) {
    fail("feedback.epsilon must lie in [0,1]");
  }
  if (!(feedback.session.tau_policy >= 0.0 && feedback.session.tau_policy < 1.0)) {
    fail("feedback.tau_policy must lie in [0,1)");
  }
  if (feedback.session.targets_per_round < 1) fail("feedback.targets_per_round must be positive");
  if (feedback.session.replay_capacity < 1) fail("feedback.replay_capacity must be positive");
  prune.validate();
  rca.walk.validate();
  if (service.port < 0 || service.port > 65535) fail("service.port out of range");
}

PipelineConfig parse_config_text(std::string_view text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& ex) {
    throw Error(ErrorKind::parse, std::string("invalid config YAML: ") + ex.what());
  }
  PipelineConfig c;
  if (root.IsNull()) return c;
  check_keys(root, "",
             {"seed", "data", "simulator", "pc", "encoder", "base_policy", "feedback", "prune",
              "rules", "rca", "service"});
  read(root, "seed", c.seed, "");
  read(root, "rules", c.rules, "");

  if (auto n = root["data"]) {
    check_keys(n, "data", {"metrics", "traces", "truth", "window", "step"});
    read(n, "metrics", c.data.metrics, "data");
    read(n, "traces", c.data.traces, "data");
    read(n, "truth", c.data.truth, "data");
    read(n, "window", c.data.window, "data");
    read(n, "step", c.data.step, "data");
  }
  if (auto n = root["simulator"]) {
    check_keys(n, "simulator", {"horizon", "fault", "trace_drop"});
    read(n, "horizon", c.simulator.horizon, "simulator");
    read(n, "fault", c.simulator.fault, "simulator");
    read(n, "trace_drop", c.simulator.trace_drop, "simulator");
  }
  if (auto n = root["pc"]) {
    check_keys(n, "pc", {"alpha", "max_cond"});
    read(n, "alpha", c.pc.alpha, "pc");
    read(n, "max_cond", c.pc.max_cond, "pc");
  }
  if (auto n = root["encoder"]) {
    check_keys(n, "encoder", {"variant", "hidden", "dim", "margin", "epochs", "lr"});
    std::string variant(to_string(c.encoder.variant));
    read(n, "variant", variant, "encoder");
    c.encoder.variant = encoder_variant_from_string(variant);
    read(n, "hidden", c.encoder.hidden, "encoder");
    read(n, "dim", c.encoder.dim, "encoder");
    read(n, "margin", c.encoder.margin, "encoder");
    read(n, "epochs", c.encoder.epochs, "encoder");
    read(n, "lr", c.encoder.lr, "encoder");
  }
  if (auto n = root["base_policy"]) {
    check_keys(n, "base_policy", {"tau_base"});
    read(n, "tau_base", c.base_policy.tau_base, "base_policy");
  }
  if (auto n = root["feedback"]) {
    check_keys(n, "feedback",
               {"budget", "retrain_threshold", "oracle_noise", "timeout_s", "targets_per_round",
                "reward_hidden", "reward_epochs", "reward_lr", "policy_hidden",
                "replay_capacity", "replay_copies", "critic_warmup", "ddpg_updates", "ddpg_batch", "actor_lr",
                "critic_lr", "exploration_std", "epsilon", "q_alpha", "tau_policy"});
    auto& s = c.feedback.session;
    read(n, "budget", c.feedback.budget, "feedback");
    read(n, "retrain_threshold", c.feedback.retrain_threshold, "feedback");
    read(n, "oracle_noise", c.feedback.oracle_noise, "feedback");
    read(n, "timeout_s", c.feedback.timeout_s, "feedback");
    read(n, "targets_per_round", s.targets_per_round, "feedback");
    read(n, "reward_hidden", s.reward.hidden, "feedback");
    read(n, "reward_epochs", s.reward.epochs, "feedback");
    read(n, "reward_lr", s.reward.lr, "feedback");
    read(n, "policy_hidden", s.policy_hidden, "feedback");
    read(n, "replay_capacity", s.replay_capacity, "feedback");
    read(n, "replay_copies", s.replay_copies, "feedback");
    read(n, "critic_warmup", s.critic_warmup, "feedback");
    read(n, "ddpg_updates", s.ddpg_updates, "feedback");
    read(n, "ddpg_batch", s.ddpg_batch, "feedback");
    read(n, "actor_lr", s.actor_lr, "feedback");
    read(n, "critic_lr", s.critic_lr, "feedback");
    read(n, "exploration_std", s.exploration_std, "feedback");
    read(n, "epsilon", s.epsilon, "feedback");
    read(n, "q_alpha", s.q_alpha, "feedback");
    read(n, "tau_policy", s.tau_policy, "feedback");
  }
  if (auto n = root["prune"]) {
    check_keys(n, "prune", {"tau_conf", "drop_intra_service", "suffixes"});
    read(n, "tau_conf", c.prune.tau_conf, "prune");
    read(n, "drop_intra_service", c.prune.drop_intra_service, "prune");
    read(n, "suffixes", c.prune.suffixes, "prune");
  }
  if (auto n = root["rca"]) {
    check_keys(n, "rca", {"walks", "max_steps", "restart_prob", "z_threshold", "anomaly"});
    read(n, "walks", c.rca.walk.walks, "rca");
    read(n, "max_steps", c.rca.walk.max_steps, "rca");
    read(n, "restart_prob", c.rca.walk.restart_prob, "rca");
    read(n, "z_threshold", c.rca.z_threshold, "rca");
    read(n, "anomaly", c.rca.anomaly, "rca");
  }
  if (auto n = root["service"]) {
    check_keys(n, "service", {"port", "state_dir", "static_dir"});
    read(n, "port", c.service.port, "service");
    read(n, "state_dir", c.service.state_dir, "service");
    read(n, "static_dir", c.service.static_dir, "service");
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::not_found, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

nlohmann::json to_json(const PipelineConfig& c) {
  const auto& s = c.feedback.session;
  return {
      {"seed", c.seed},
      {"data",
       {{"metrics", c.data.metrics},
        {"traces", c.data.traces},
        {"truth", c.data.truth},
        {"window", c.data.window},
        {"step", c.data.step}}},
      {"simulator",
       {{"horizon", c.simulator.horizon},
        {"fault", c.simulator.fault},
        {"trace_drop", c.simulator.trace_drop}}},
      {"pc", {{"alpha", c.pc.alpha}, {"max_cond", c.pc.max_cond}}},
      {"encoder",
       {{"variant", std::string(to_string(c.encoder.variant))},
        {"hidden", c.encoder.hidden},
        {"dim", c.encoder.dim},
        {"margin", c.encoder.margin},
        {"epochs", c.encoder.epochs},
        {"lr", c.encoder.lr}}},
      {"base_policy", {{"tau_base", c.base_policy.tau_base}}},
      {"feedback",
       {{"budget", c.feedback.budget},
        {"retrain_threshold", c.feedback.retrain_threshold},
        {"oracle_noise", c.feedback.oracle_noise},
        {"timeout_s", c.feedback.timeout_s},
        {"targets_per_round", s.targets_per_round},
        {"reward_hidden", s.reward.hidden},
        {"reward_epochs", s.reward.epochs},
        {"reward_lr", s.reward.lr},
        {"policy_hidden", s.policy_hidden},
        {"replay_capacity", s.replay_capacity},
        {"replay_copies", s.replay_copies},
        {"critic_warmup", s.critic_warmup},
        {"ddpg_updates", s.ddpg_updates},
        {"ddpg_batch", s.ddpg_batch},
        {"actor_lr", s.actor_lr},
        {"critic_lr", s.critic_lr},
        {"exploration_std", s.exploration_std},
        {"epsilon", s.epsilon},
        {"q_alpha", s.q_alpha},
        {"tau_policy", s.tau_policy}}},
      {"prune",
       {{"tau_conf", c.prune.tau_conf},
        {"drop_intra_service", c.prune.drop_intra_service},
        {"suffixes", c.prune.suffixes}}},
      {"rules", c.rules},
      {"rca",
       {{"walks", c.rca.walk.walks},
        {"max_steps", c.rca.walk.max_steps},
        {"restart_prob", c.rca.walk.restart_prob},
        {"z_threshold", c.rca.z_threshold},
        {"anomaly", c.rca.anomaly}}},
      {"service",
       {{"port", c.service.port},
        {"state_dir", c.service.state_dir},
        {"static_dir", c.service.static_dir}}},
  };
}

}  // namespace causaldiag

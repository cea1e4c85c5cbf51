#include "fedlev/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "fedlev/random.hpp"

namespace fedlev {

using nlohmann::json;

StageError::StageError(std::string stage, std::uint64_t seed, const std::string& what)
    : std::runtime_error("stage '" + stage + "' (seed " + std::to_string(seed) + "): " + what),
      stage_(std::move(stage)) {}

std::uint64_t synth_seed(std::uint64_t master) { return derive_seed(master, {0x73796e7468ULL}); }
std::uint64_t fed_seed(std::uint64_t master) { return derive_seed(master, {0x666564ULL}); }
std::uint64_t kmeans_seed(std::uint64_t master) { return derive_seed(master, {0x6b6d65616e73ULL}); }

// --- Config ------------------------------------------------------------------

namespace {

void reject_unknown(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  const std::string name = where + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(name + " must be a boolean");
    out = v.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_unsigned()) throw ConfigError(name + " must be a nonnegative integer");
    out = v.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(name + " must be a number");
    out = v.get<T>();
  } else {
    if (!v.is_string()) throw ConfigError(name + " must be a string");
    out = v.get<std::string>();
  }
}

json config_json_object(const ExperimentConfig& c, bool with_output) {
  json j;
  j["scenario"] = std::string(scenario_name(c.scenario));
  j["manifest"] = c.manifest ? json(c.manifest->string()) : json(nullptr);
  j["scale"] = c.scale;
  j["seed"] = c.seed;
  if (with_output) j["output_dir"] = c.output_dir.string();
  j["synth"] = {{"n_types", c.synth.n_types},
                {"d", c.synth.d},
                {"peaks_per_type", c.synth.peaks_per_type},
                {"shared_peaks", c.synth.shared_peaks},
                {"snr", c.synth.snr},
                {"depth_mean", c.synth.depth_mean}};
  j["fed"] = {{"rounds", c.fed.rounds},
              {"local_steps", c.fed.local_steps},
              {"lr_local", c.fed.lr_local ? json(*c.fed.lr_local) : json(nullptr)},
              {"lr_global", c.fed.lr_global},
              {"rho", c.fed.rho},
              {"sketch_size", c.fed.sketch_size},
              {"batch_size", c.fed.batch_size},
              {"lambda", c.fed.lambda},
              {"rescale_inputs", c.fed.rescale_inputs},
              {"probe_size", c.fed.probe_size}};
  j["vae"] = {{"n_blocks", c.fed.model.n_blocks},
              {"block_hidden", c.fed.model.block_hidden},
              {"trunk_hidden", c.fed.model.trunk_hidden},
              {"latent_dim", c.fed.model.latent_dim},
              {"likelihood", std::string(likelihood_name(c.fed.model.likelihood))}};
  j["metrics"] = {{"k", c.metrics.k}, {"restarts", c.metrics.restarts}, {"max_iters", c.metrics.max_iters}};
  return j;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (!manifest) {
    if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("scale must lie in (0, 1]");
    try {
      synth.validate();
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
  }
  if (!(fed.rho > 0.0 && fed.rho <= 1.0)) throw ConfigError("fed.rho must lie in (0, 1]");
  try {
    if (!manifest) fed.validate(synth.d);
  } catch (const FedError& e) {
    throw ConfigError(e.what());
  }
  if (fed.rounds == 0 || fed.local_steps == 0) throw ConfigError("fed.rounds and fed.local_steps must be at least 1");
  if (metrics.restarts == 0 || metrics.max_iters == 0) throw ConfigError("metrics.restarts and max_iters must be positive");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

ExperimentConfig parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(root, {"scenario", "manifest", "scale", "seed", "output_dir", "synth", "fed", "vae", "metrics"},
                 "config");
  ExperimentConfig c;
  std::string scenario = std::string(scenario_name(c.scenario));
  read_field(root, "scenario", scenario, "config");
  try {
    c.scenario = parse_scenario(scenario);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  if (root.contains("manifest") && !root.at("manifest").is_null()) {
    std::string m;
    read_field(root, "manifest", m, "config");
    c.manifest = m;
  }
  read_field(root, "scale", c.scale, "config");
  read_field(root, "seed", c.seed, "config");
  std::string out = c.output_dir.string();
  read_field(root, "output_dir", out, "config");
  c.output_dir = out;

  if (root.contains("synth")) {
    const auto& s = root.at("synth");
    reject_unknown(s, {"n_types", "d", "peaks_per_type", "shared_peaks", "snr", "depth_mean"}, "synth");
    read_field(s, "n_types", c.synth.n_types, "synth");
    read_field(s, "d", c.synth.d, "synth");
    read_field(s, "peaks_per_type", c.synth.peaks_per_type, "synth");
    read_field(s, "shared_peaks", c.synth.shared_peaks, "synth");
    read_field(s, "snr", c.synth.snr, "synth");
    read_field(s, "depth_mean", c.synth.depth_mean, "synth");
    c.synth.type_counts.assign(c.synth.n_types, 1000);
  }
  if (root.contains("fed")) {
    const auto& f = root.at("fed");
    reject_unknown(f,
                   {"rounds", "local_steps", "lr_local", "lr_global", "rho", "sketch_size", "batch_size", "lambda",
                    "rescale_inputs", "probe_size"},
                   "fed");
    read_field(f, "rounds", c.fed.rounds, "fed");
    read_field(f, "local_steps", c.fed.local_steps, "fed");
    if (f.contains("lr_local") && !f.at("lr_local").is_null()) {
      double lr = 0.0;
      read_field(f, "lr_local", lr, "fed");
      c.fed.lr_local = lr;
    }
    read_field(f, "lr_global", c.fed.lr_global, "fed");
    read_field(f, "rho", c.fed.rho, "fed");
    read_field(f, "sketch_size", c.fed.sketch_size, "fed");
    read_field(f, "batch_size", c.fed.batch_size, "fed");
    read_field(f, "lambda", c.fed.lambda, "fed");
    read_field(f, "rescale_inputs", c.fed.rescale_inputs, "fed");
    read_field(f, "probe_size", c.fed.probe_size, "fed");
  }
  if (root.contains("vae")) {
    const auto& v = root.at("vae");
    reject_unknown(v, {"n_blocks", "block_hidden", "trunk_hidden", "latent_dim", "likelihood"}, "vae");
    read_field(v, "n_blocks", c.fed.model.n_blocks, "vae");
    read_field(v, "block_hidden", c.fed.model.block_hidden, "vae");
    read_field(v, "trunk_hidden", c.fed.model.trunk_hidden, "vae");
    read_field(v, "latent_dim", c.fed.model.latent_dim, "vae");
    std::string lik = std::string(likelihood_name(c.fed.model.likelihood));
    read_field(v, "likelihood", lik, "vae");
    try {
      c.fed.model.likelihood = parse_likelihood(lik);
    } catch (const VaeError& e) {
      throw ConfigError(e.what());
    }
  }
  if (root.contains("metrics")) {
    const auto& m = root.at("metrics");
    reject_unknown(m, {"k", "restarts", "max_iters"}, "metrics");
    read_field(m, "k", c.metrics.k, "metrics");
    read_field(m, "restarts", c.metrics.restarts, "metrics");
    read_field(m, "max_iters", c.metrics.max_iters, "metrics");
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto c = parse_config(ss.str());
  if (c.manifest && c.manifest->is_relative()) c.manifest = path.parent_path() / *c.manifest;
  return c;
}

std::string config_to_json(const ExperimentConfig& config) { return config_json_object(config, true).dump(2); }

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = config_json_object(config, false).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_schema() {
  auto integer = [](std::uint64_t def, std::uint64_t min) {
    return json{{"type", "integer"}, {"minimum", min}, {"default", def}};
  };
  auto number = [](double def) { return json{{"type", "number"}, {"default", def}}; };
  const ExperimentConfig d;
  json schema;
  schema["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  schema["title"] = "fedlev experiment config";
  schema["type"] = "object";
  schema["additionalProperties"] = false;
  auto& p = schema["properties"];
  p["scenario"] = {{"type", "string"},
                   {"enum", {"homogeneous", "varying_depth", "confounded_hetero", "imbalance"}},
                   {"default", "homogeneous"}};
  p["manifest"] = {{"type", {"string", "null"}}, {"default", nullptr},
                   {"description", "dataset manifest; overrides scenario and synth"}};
  p["scale"] = {{"type", "number"}, {"exclusiveMinimum", 0}, {"maximum", 1}, {"default", d.scale}};
  p["seed"] = integer(0, 0);
  p["output_dir"] = {{"type", "string"}, {"default", d.output_dir.string()}};
  json synth = {{"type", "object"}, {"additionalProperties", false}};
  synth["properties"] = {{"n_types", integer(d.synth.n_types, 1)},
                         {"d", integer(d.synth.d, 1)},
                         {"peaks_per_type", integer(d.synth.peaks_per_type, 1)},
                         {"shared_peaks", integer(d.synth.shared_peaks, 0)},
                         {"snr", {{"type", "number"}, {"exclusiveMinimum", 0}, {"maximum", 1}, {"default", d.synth.snr}}},
                         {"depth_mean", number(d.synth.depth_mean)}};
  p["synth"] = synth;
  json fed = {{"type", "object"}, {"additionalProperties", false}};
  fed["properties"] = {{"rounds", integer(d.fed.rounds, 1)},
                       {"local_steps", integer(d.fed.local_steps, 1)},
                       {"lr_local", {{"type", {"number", "null"}}, {"minimum", 0}, {"default", nullptr},
                                     {"description", "null: 20 / ((1 + lambda) s)"}}},
                       {"lr_global", number(d.fed.lr_global)},
                       {"rho", {{"type", "number"}, {"exclusiveMinimum", 0}, {"maximum", 1}, {"default", d.fed.rho}}},
                       {"sketch_size", integer(d.fed.sketch_size, 1)},
                       {"batch_size", integer(d.fed.batch_size, 1)},
                       {"lambda", number(d.fed.lambda)},
                       {"rescale_inputs", {{"type", "boolean"}, {"default", d.fed.rescale_inputs}}},
                       {"probe_size", integer(d.fed.probe_size, 1)}};
  p["fed"] = fed;
  json vae = {{"type", "object"}, {"additionalProperties", false}};
  vae["properties"] = {{"n_blocks", integer(d.fed.model.n_blocks, 1)},
                       {"block_hidden", integer(d.fed.model.block_hidden, 1)},
                       {"trunk_hidden", integer(d.fed.model.trunk_hidden, 1)},
                       {"latent_dim", integer(d.fed.model.latent_dim, 1)},
                       {"likelihood", {{"type", "string"}, {"enum", {"bernoulli", "gaussian"}}, {"default", "bernoulli"}}}};
  p["vae"] = vae;
  json metrics = {{"type", "object"}, {"additionalProperties", false}};
  metrics["properties"] = {{"k", integer(0, 0)},
                           {"restarts", integer(d.metrics.restarts, 1)},
                           {"max_iters", integer(d.metrics.max_iters, 1)}};
  p["metrics"] = metrics;
  return schema.dump(2);
}

// --- Pipeline ----------------------------------------------------------------

std::vector<ClientShard> load_or_generate(const ExperimentConfig& config) {
  if (config.manifest) return load_federation(load_manifest(*config.manifest));
  SynthParams base = config.synth;
  base.seed = synth_seed(config.seed);
  return build_scenario(make_preset(config.scenario, base), config.scale, base).shards;
}

namespace {

template <typename Fn>
auto stage(const char* name, std::uint64_t seed, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, seed, e.what());
  }
}

json loss_json(const LossBreakdown& l) {
  return {{"total", l.total}, {"prior", l.prior}, {"marginal", l.marginal}, {"recon", l.recon}};
}

LossBreakdown loss_from_json(const json& j) {
  return {j.at("total").get<double>(), j.at("prior").get<double>(), j.at("marginal").get<double>(),
          j.at("recon").get<double>()};
}

json ledger_object(const CommLedger& l) {
  return {{"n_clients", l.n_clients},
          {"d", l.d},
          {"s", l.s},
          {"params_count", l.params_count},
          {"bytes_per_value", kBytesPerValue},
          {"phase1_uplink", l.phase1_uplink},
          {"phase1_downlink", l.phase1_downlink},
          {"round_uplink", l.round_uplink},
          {"round_downlink", l.round_downlink},
          {"phase1_total", l.phase1_total()},
          {"phase2_total", l.phase2_total()},
          {"total_uplink", l.total_uplink},
          {"total_downlink", l.total_downlink},
          {"total", l.total},
          {"conserved", l.conserved()}};
}

json comm_object(const CommSummary& c) {
  return {{"d", c.d},
          {"s", c.s},
          {"params_count", c.params_count},
          {"baseline_params_count", c.baseline_params_count},
          {"input_layer_params", c.input_layer_params},
          {"mb_per_round", c.mb_per_round},
          {"total_gb", c.total_gb},
          {"reduction", c.reduction}};
}

json metrics_object(const MetricReport& m) {
  json sep = json::array();
  for (const auto& [pair, v] : m.separability) {
    sep.push_back({{"i", pair.first}, {"j", pair.second}, {"delta", std::isfinite(v) ? json(v) : json(nullptr)}});
  }
  return {{"ari", m.ari},
          {"silhouette", std::isfinite(m.silhouette) ? json(m.silhouette) : json(nullptr)},
          {"davies_bouldin", std::isfinite(m.davies_bouldin) ? json(m.davies_bouldin) : json(nullptr)},
          {"separability", sep}};
}

double number_or_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

RunOutputs run_pipeline(const ExperimentConfig& config, std::size_t workers) {
  config.validate();
  RunOutputs out;
  RunReport& rep = out.report;
  rep.scenario = config.manifest ? "manifest:" + config.manifest->filename().string()
                                 : std::string(scenario_name(config.scenario));
  rep.config_hash = config_hash(config);
  // The report leaves out output_dir so identical settings give identical reports.
  rep.config_json = config_json_object(config, false).dump(2);

  const auto shards = stage("data", synth_seed(config.seed), [&] {
    auto s = load_or_generate(config);
    validate_federation(s);
    return s;
  });
  FedConfig fed = config.fed;
  fed.seed = fed_seed(config.seed);
  const std::size_t d = shards.front().matrix.n_cols();
  stage("validate", fed.seed, [&] {
    fed.validate(d);
    return 0;
  });

  const auto sample = stage("phase1", fed.seed, [&] {
    return phase1_select(shards, fed.rho, fed.sketch_size, fed.seed, &rep.ledger);
  });
  const auto setup = stage("setup", fed.seed, [&] { return prepare_subspace(shards, sample, fed); });
  auto trained = stage("phase2", fed.seed, [&] { return phase2_train(setup, fed, &rep.ledger, workers); });
  out.params = trained.params;
  rep.history = std::move(trained.history);

  std::vector<const ClientShard*> order;
  for (const auto& s : shards) order.push_back(&s);
  std::sort(order.begin(), order.end(),
            [](const ClientShard* a, const ClientShard* b) { return a->client_id < b->client_id; });
  stage("embed", fed.seed, [&] {
    std::size_t n = 0;
    for (const auto& data : setup.data) n += data.n();
    out.embedding.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(setup.vae.latent_dim));
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < setup.data.size(); ++i) {
      const Eigen::MatrixXd mu = embed(out.params, setup.data[i]);
      out.embedding.middleRows(row, mu.cols()) = mu.transpose();
      row += mu.cols();
      for (const auto& cell : order[i]->cells) {
        out.cell_ids.push_back(cell.cell_id);
        out.labels.push_back(cell.label);
      }
    }
    return 0;
  });

  stage("metrics", kmeans_seed(config.seed), [&] {
    const std::size_t k = config.metrics.k ? config.metrics.k : count_clusters(out.labels);
    const auto km = kmeans(out.embedding, k, kmeans_seed(config.seed), config.metrics.restarts,
                           config.metrics.max_iters);
    rep.empty_clusters = km.empty_clusters.size();
    rep.metrics = metric_report(out.embedding, km.labels, out.labels);
    return 0;
  });

  rep.rho = fed.rho;
  rep.d = d;
  rep.s = sample.size();
  rep.n_cells = out.cell_ids.size();
  std::vector<std::uint32_t> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t top = std::min<std::size_t>(20, d);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top), idx.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      const double pa = sample.probs(a);
                      const double pb = sample.probs(b);
                      return pa != pb ? pa > pb : a < b;
                    });
  for (std::size_t k = 0; k < top; ++k) rep.top_features.emplace_back(idx[k], sample.probs(idx[k]));
  rep.comm = comm_report(fed, d, setup.confounders.dim());
  return out;
}

RunReport run_experiment(const ExperimentConfig& config, std::size_t workers) {
  const auto started = std::chrono::steady_clock::now();
  const std::time_t wall = std::time(nullptr);
  auto out = run_pipeline(config, workers);

  namespace fs = std::filesystem;
  std::vector<fs::path> written;
  try {
    fs::create_directories(config.output_dir);
    auto put = [&](const char* name, const std::string& text) {
      const fs::path p = config.output_dir / name;
      written.push_back(p);
      std::ofstream f(p);
      if (!f) throw StageError("write", config.seed, "cannot write " + p.string());
      f << text << '\n';
    };
    put("config.json", config_to_json(config));
    put("report.json", out.report.to_json());
    put("ledger.json", ledger_json(out.report.ledger, out.report.comm));
    written.push_back(config.output_dir / "embeddings.csv");
    write_embeddings_csv(written.back(), out.cell_ids, out.embedding);
    written.push_back(config.output_dir / "history.csv");
    write_history_csv(written.back(), out.report.history);
    written.push_back(config.output_dir / "params.ckpt");
    save_checkpoint(written.back(), out.params);

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&wall));
    put("timing.json", json{{"started_utc", stamp}, {"wall_seconds", secs}, {"workers", workers}}.dump(2));
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written) fs::remove(p, ec);
    throw;
  }
  return out.report;
}

// --- Reports -----------------------------------------------------------------

std::string RunReport::to_json() const {
  json j;
  j["scenario"] = scenario;
  j["config_hash"] = config_hash;
  j["config"] = json::parse(config_json);
  j["rho"] = rho;
  j["d"] = d;
  j["s"] = s;
  j["n_cells"] = n_cells;
  json top = json::array();
  for (const auto& [f, p] : top_features) top.push_back({{"feature", f}, {"probability", p}});
  j["feature_sample"] = {{"s", s}, {"top_features", top}};
  json hist = json::array();
  for (const auto& h : history) {
    json clients = json::array();
    for (const auto& c : h.client_loss) clients.push_back(loss_json(c));
    hist.push_back({{"round", h.round}, {"probe", loss_json(h.probe)}, {"clients", clients}});
  }
  j["history"] = hist;
  j["ledger"] = ledger_object(ledger);
  j["comm"] = comm_object(comm);
  j["metrics"] = metrics_object(metrics);
  j["empty_clusters"] = empty_clusters;
  j["versions"] = {{"fedlev", std::string(kVersion)},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)}};
  return j.dump(2);
}

RunReport RunReport::from_json(std::string_view text) {
  RunReport r;
  try {
    const json j = json::parse(text);
    r.scenario = j.at("scenario").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.config_json = j.at("config").dump(2);
    r.rho = j.at("rho").get<double>();
    r.d = j.at("d").get<std::size_t>();
    r.s = j.at("s").get<std::size_t>();
    r.n_cells = j.at("n_cells").get<std::size_t>();
    for (const auto& t : j.at("feature_sample").at("top_features")) {
      r.top_features.emplace_back(t.at("feature").get<std::uint32_t>(), t.at("probability").get<double>());
    }
    for (const auto& h : j.at("history")) {
      RoundHistory rh;
      rh.round = h.at("round").get<std::size_t>();
      rh.probe = loss_from_json(h.at("probe"));
      for (const auto& c : h.at("clients")) rh.client_loss.push_back(loss_from_json(c));
      r.history.push_back(std::move(rh));
    }
    const auto& l = j.at("ledger");
    r.ledger.n_clients = l.at("n_clients").get<std::size_t>();
    r.ledger.d = l.at("d").get<std::size_t>();
    r.ledger.s = l.at("s").get<std::size_t>();
    r.ledger.params_count = l.at("params_count").get<std::size_t>();
    r.ledger.phase1_uplink = l.at("phase1_uplink").get<std::vector<std::uint64_t>>();
    r.ledger.phase1_downlink = l.at("phase1_downlink").get<std::vector<std::uint64_t>>();
    r.ledger.round_uplink = l.at("round_uplink").get<std::vector<std::vector<std::uint64_t>>>();
    r.ledger.round_downlink = l.at("round_downlink").get<std::vector<std::vector<std::uint64_t>>>();
    r.ledger.total_uplink = l.at("total_uplink").get<std::uint64_t>();
    r.ledger.total_downlink = l.at("total_downlink").get<std::uint64_t>();
    r.ledger.total = l.at("total").get<std::uint64_t>();
    const auto& c = j.at("comm");
    r.comm.d = c.at("d").get<std::size_t>();
    r.comm.s = c.at("s").get<std::size_t>();
    r.comm.params_count = c.at("params_count").get<std::size_t>();
    r.comm.baseline_params_count = c.at("baseline_params_count").get<std::size_t>();
    r.comm.input_layer_params = c.at("input_layer_params").get<std::size_t>();
    r.comm.mb_per_round = c.at("mb_per_round").get<double>();
    r.comm.total_gb = c.at("total_gb").get<double>();
    r.comm.reduction = c.at("reduction").get<double>();
    const auto& m = j.at("metrics");
    r.metrics.ari = m.at("ari").get<double>();
    r.metrics.silhouette = number_or_nan(m.at("silhouette"));
    r.metrics.davies_bouldin = number_or_nan(m.at("davies_bouldin"));
    for (const auto& s : m.at("separability")) {
      r.metrics.separability[{s.at("i").get<int>(), s.at("j").get<int>()}] = number_or_nan(s.at("delta"));
    }
    r.empty_clusters = j.at("empty_clusters").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed run report: ") + e.what());
  }
  return r;
}

std::string compare_runs(std::span<const RunReport> reports) {
  if (reports.size() < 2) throw ConfigError("compare: need at least two reports");
  for (const auto& r : reports) {
    if (r.scenario != reports.front().scenario) {
      throw ConfigError("compare: scenario mismatch ('" + r.scenario + "' vs '" + reports.front().scenario + "')");
    }
  }
  std::ostringstream out;
  out << "rho,ari,silhouette,mb_per_round,total_gb,reduction_pct\n";
  char line[256];
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%.4g,%.6f,%.6f,%.4f,%.6f,%.2f\n", r.rho, r.metrics.ari, r.metrics.silhouette,
                  r.comm.mb_per_round, r.comm.total_gb, 100.0 * r.comm.reduction);
    out << line;
  }
  return out.str();
}

// --- Files -------------------------------------------------------------------

void write_embeddings_csv(const std::filesystem::path& path, std::span<const std::string> cell_ids,
                          const Eigen::MatrixXd& embedding) {
  if (static_cast<std::size_t>(embedding.rows()) != cell_ids.size()) {
    throw ConfigError("embeddings: row count does not match the cell ids");
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "cell_id";
  for (Eigen::Index k = 0; k < embedding.cols(); ++k) out << ",z_" << (k + 1);
  out << '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < embedding.rows(); ++i) {
    out << cell_ids[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < embedding.cols(); ++k) {
      std::snprintf(buf, sizeof buf, ",%.17g", embedding(i, k));
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw ConfigError("write failed for " + path.string());
}

EmbeddingTable read_embeddings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("cell_id", 0) != 0) throw ConfigError(path.string() + ": missing header");
  const auto dim = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ','));
  if (dim == 0) throw ConfigError(path.string() + ": no latent columns");
  EmbeddingTable t;
  std::vector<double> values;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    t.cell_ids.push_back(field);
    Eigen::Index k = 0;
    while (std::getline(ss, field, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + field + "'");
      }
      ++k;
    }
    if (k != dim) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
  }
  t.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(t.cell_ids.size()), dim);
  return t;
}

void write_history_csv(const std::filesystem::path& path, std::span<const RoundHistory> history) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "round,prior,marginal,recon,total\n";
  char buf[160];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", h.round, h.probe.prior, h.probe.marginal,
                  h.probe.recon, h.probe.total);
    out << buf;
  }
}

std::string ledger_json(const CommLedger& ledger, const CommSummary& summary) {
  json j = ledger_object(ledger);
  j["summary"] = comm_object(summary);
  return j.dump(2);
}

std::string metric_report_json(const MetricReport& report) { return metrics_object(report).dump(2); }

std::string property_result_json(const PropertyResult& r) {
  json status = json::array();
  for (auto s : r.status) {
    status.push_back(s == TrialStatus::Success ? "success" : s == TrialStatus::Failure ? "failure" : "n/a");
  }
  json measure = json::array();
  for (double m : r.measure) measure.push_back(std::isfinite(m) ? json(m) : json(nullptr));
  return json{{"property", r.name},
              {"trials", r.trials},
              {"successes", r.successes},
              {"failures", r.failures},
              {"not_applicable", r.not_applicable},
              {"worst_violation", std::isfinite(r.worst_violation) ? json(r.worst_violation) : json("inf")},
              {"seeds", r.seeds},
              {"status", status},
              {"measure", measure},
              {"audited", r.audited()},
              {"note", r.note}}
      .dump(2);
}

MetricReport report_from_embeddings(const EmbeddingTable& table, std::span<const CellRecord> cells,
                                    const MetricOptions& options, std::uint64_t seed) {
  std::unordered_map<std::string, int> label_of;
  for (const auto& c : cells) label_of[c.cell_id] = c.label;
  std::vector<int> labels;
  labels.reserve(table.cell_ids.size());
  for (const auto& id : table.cell_ids) {
    const auto it = label_of.find(id);
    if (it == label_of.end()) throw ConfigError("no metadata for cell '" + id + "'");
    labels.push_back(it->second);
  }
  const std::size_t k = options.k ? options.k : count_clusters(labels);
  const auto km = kmeans(table.values, k, seed, options.restarts, options.max_iters);
  return metric_report(table.values, km.labels, labels);
}

}  // namespace fedlev

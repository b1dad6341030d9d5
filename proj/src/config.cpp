#include "metasched/config.hpp"

#include <algorithm>
#include <initializer_list>

#include "metasched/errors.hpp"
#include "metasched/io.hpp"

namespace metasched {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
  }
}

const json* find(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return nullptr;
  return &*it;
}

[[noreturn]] void wrong_type(const std::string& where, const char* key, const char* expected) {
  throw ConfigError(where + "." + key + " must be " + expected);
}

double get_double(const json& j, const char* key, double fallback, const std::string& where) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_number()) wrong_type(where, key, "a number");
  return v->get<double>();
}

std::optional<double> get_opt_double(const json& j, const char* key, const std::string& where) {
  const json* v = find(j, key);
  if (!v) return std::nullopt;
  if (!v->is_number()) wrong_type(where, key, "a number or null");
  return v->get<double>();
}

std::int64_t get_int(const json& j, const char* key, std::int64_t fallback, const std::string& where) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_number_integer()) wrong_type(where, key, "an integer");
  return v->get<std::int64_t>();
}

// Parsed text yields unsigned numbers, but JSON built in code stores signed ones.
bool is_non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

std::uint64_t get_uint(const json& j, const char* key, std::uint64_t fallback, const std::string& where) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!is_non_negative_integer(*v)) wrong_type(where, key, "a non-negative integer");
  return v->get<std::uint64_t>();
}

bool get_bool(const json& j, const char* key, bool fallback, const std::string& where) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_boolean()) wrong_type(where, key, "a boolean");
  return v->get<bool>();
}

std::string get_string(const json& j, const char* key, const std::string& fallback, const std::string& where) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_string()) wrong_type(where, key, "a string");
  return v->get<std::string>();
}

std::string require_string(const json& j, const char* key, const std::string& where) {
  const json* v = find(j, key);
  if (!v) throw ConfigError(where + "." + key + " is required");
  if (!v->is_string()) wrong_type(where, key, "a string");
  return v->get<std::string>();
}

std::vector<std::uint64_t> get_uint_list(const json& j, const char* key, const std::string& where) {
  std::vector<std::uint64_t> out;
  const json* v = find(j, key);
  if (!v) return out;
  if (!v->is_array()) wrong_type(where, key, "an array of non-negative integers");
  for (const auto& item : *v) {
    if (!is_non_negative_integer(item)) wrong_type(where, key, "an array of non-negative integers");
    out.push_back(item.get<std::uint64_t>());
  }
  return out;
}

fs::path resolve(const fs::path& p, const fs::path& base_dir) {
  if (p.empty()) return p;
  return (p.is_absolute() ? p : base_dir / p).lexically_normal();
}

fs::path existing_path(const std::string& text, const fs::path& base_dir, const std::string& what) {
  fs::path p = resolve(text, base_dir);
  if (!fs::exists(p)) throw ConfigError(what + " does not exist: " + p.string());
  return p;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string dataset_kind_name(DatasetKind kind) {
  return kind == DatasetKind::gaussian_blobs ? "gaussian-blobs" : "two-moons";
}

json dataset_to_json(const DatasetSpec& d) {
  return json{{"kind", dataset_kind_name(d.kind)}, {"n_train", d.n_train}, {"n_val", d.n_val},
              {"n_test", d.n_test},                 {"dim", d.dim},         {"classes", d.classes},
              {"noise", d.noise},                   {"corruption", d.corruption}, {"seed", d.seed}};
}

DatasetSpec dataset_from_json(const json& j) {
  const std::string where = "dataset";
  check_keys(j, {"kind", "n_train", "n_val", "n_test", "dim", "classes", "noise", "corruption", "seed"}, where);
  DatasetSpec d;
  const std::string kind = get_string(j, "kind", "gaussian-blobs", where);
  if (kind == "gaussian-blobs") {
    d.kind = DatasetKind::gaussian_blobs;
  } else if (kind == "two-moons") {
    d.kind = DatasetKind::two_moons;
  } else {
    throw ConfigError("dataset.kind must be 'gaussian-blobs' or 'two-moons', got '" + kind + "'");
  }
  d.n_train = get_uint(j, "n_train", d.n_train, where);
  d.classes = get_uint(j, "classes", d.classes, where);
  d.n_val = get_uint(j, "n_val", 10 * d.classes, where);
  d.n_test = get_uint(j, "n_test", d.n_test, where);
  d.dim = get_uint(j, "dim", d.dim, where);
  d.noise = get_double(j, "noise", d.noise, where);
  d.corruption = get_double(j, "corruption", d.corruption, where);
  if (!find(j, "seed")) throw ConfigError("dataset.seed is required");
  d.seed = get_uint(j, "seed", 0, where);
  if (d.classes < 2) throw ConfigError("dataset.classes must be >= 2");
  if (d.n_train < d.classes) throw ConfigError("dataset.n_train must be >= classes");
  if (d.n_val != 0 && d.n_val < d.classes) throw ConfigError("dataset.n_val must be 0 or >= classes");
  if (d.n_test != 0 && d.n_test < d.classes) throw ConfigError("dataset.n_test must be 0 or >= classes");
  if (d.dim == 0) throw ConfigError("dataset.dim must be >= 1");
  if (!(d.noise >= 0.0)) throw ConfigError("dataset.noise must be >= 0");
  if (!(d.corruption >= 0.0 && d.corruption <= 1.0)) throw ConfigError("dataset.corruption must lie in [0, 1]");
  return d;
}

json training_to_json(const TrainConfig& t) {
  return json{{"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"max_steps", t.max_steps ? json(*t.max_steps) : json(nullptr)},
              {"optimizer", t.optimizer == OptimizerKind::sgd ? "sgd" : "sgd-momentum"},
              {"momentum", t.momentum},
              {"weight_decay", t.weight_decay},
              {"clip_norm", optional_json(t.clip_norm)},
              {"eval_every_epochs", t.eval_every_epochs},
              {"record_wall_time", t.record_wall_time}};
}

TrainConfig training_from_json(const json& j) {
  const std::string where = "training";
  check_keys(j, {"epochs", "batch_size", "max_steps", "optimizer", "momentum", "weight_decay", "clip_norm",
                 "eval_every_epochs", "record_wall_time"},
             where);
  TrainConfig t;
  t.epochs = get_int(j, "epochs", t.epochs, where);
  t.batch_size = get_uint(j, "batch_size", t.batch_size, where);
  if (find(j, "max_steps")) t.max_steps = get_int(j, "max_steps", 0, where);
  const std::string opt = get_string(j, "optimizer", "sgd", where);
  if (opt == "sgd") {
    t.optimizer = OptimizerKind::sgd;
  } else if (opt == "sgd-momentum") {
    t.optimizer = OptimizerKind::sgd_momentum;
  } else {
    throw ConfigError("training.optimizer must be 'sgd' or 'sgd-momentum', got '" + opt + "'");
  }
  t.momentum = get_double(j, "momentum", t.momentum, where);
  t.weight_decay = get_double(j, "weight_decay", t.weight_decay, where);
  t.clip_norm = get_opt_double(j, "clip_norm", where);
  t.eval_every_epochs = get_int(j, "eval_every_epochs", t.eval_every_epochs, where);
  t.record_wall_time = get_bool(j, "record_wall_time", t.record_wall_time, where);
  if (t.epochs < 1) throw ConfigError("training.epochs must be >= 1");
  if (t.batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
  if (t.max_steps && *t.max_steps < 0) throw ConfigError("training.max_steps must be >= 0");
  if (!(t.momentum >= 0.0 && t.momentum < 1.0)) throw ConfigError("training.momentum must lie in [0, 1)");
  if (!(t.weight_decay >= 0.0)) throw ConfigError("training.weight_decay must be >= 0");
  if (t.clip_norm && !(*t.clip_norm > 0.0)) throw ConfigError("training.clip_norm must be > 0");
  if (t.eval_every_epochs < 1) throw ConfigError("training.eval_every_epochs must be >= 1");
  return t;
}

json normalizer_to_json(const mlrsnet::LossNormalizer& n) {
  if (n.kind() == mlrsnet::LossNormalizer::Kind::identity) return "identity";
  return json{{"log_cardinality", n.cardinality()}};
}

mlrsnet::LossNormalizer normalizer_from_json(const json& j) {
  if (j.is_string() && j.get<std::string>() == "identity") return mlrsnet::LossNormalizer::identity();
  if (j.is_object()) {
    check_keys(j, {"log_cardinality"}, "meta.normalizer");
    const json* c = find(j, "log_cardinality");
    if (c && is_non_negative_integer(*c) && c->get<std::size_t>() >= 2) {
      return mlrsnet::LossNormalizer::log_cardinality(c->get<std::size_t>());
    }
  }
  throw ConfigError("meta.normalizer must be \"identity\" or {\"log_cardinality\": C} with C >= 2");
}

json meta_to_json(const MetaTrainConfig& m) {
  return json{{"hidden_size", m.hidden_size},
              {"gamma", m.gamma},
              {"t_val", m.t_val},
              {"val_batch_size", m.val_batch_size},
              {"adam_lr", m.adam_lr},
              {"adam_weight_decay", m.adam_weight_decay},
              {"normalizer", normalizer_to_json(m.normalizer)},
              {"init", m.init == MetaInit::uniform ? "uniform" : "zeros"}};
}

MetaTrainConfig meta_from_json(const json& j) {
  const std::string where = "meta";
  check_keys(j, {"hidden_size", "gamma", "t_val", "val_batch_size", "adam_lr", "adam_weight_decay", "normalizer",
                 "init"},
             where);
  MetaTrainConfig m;
  m.hidden_size = get_uint(j, "hidden_size", m.hidden_size, where);
  m.gamma = get_double(j, "gamma", m.gamma, where);
  m.t_val = get_int(j, "t_val", m.t_val, where);
  m.val_batch_size = get_uint(j, "val_batch_size", m.val_batch_size, where);
  m.adam_lr = get_double(j, "adam_lr", m.adam_lr, where);
  m.adam_weight_decay = get_double(j, "adam_weight_decay", m.adam_weight_decay, where);
  if (const json* n = find(j, "normalizer")) m.normalizer = normalizer_from_json(*n);
  const std::string init = get_string(j, "init", "uniform", where);
  if (init == "uniform") {
    m.init = MetaInit::uniform;
  } else if (init == "zeros") {
    m.init = MetaInit::zeros;
  } else {
    throw ConfigError("meta.init must be 'uniform' or 'zeros', got '" + init + "'");
  }
  m.validate();
  return m;
}

json transfer_to_json(const TransferConfig& t) {
  return json{{"source_dir", t.source_dir.string()},
              {"k", t.k},
              {"gamma_override", optional_json(t.gamma_override)},
              {"reset_state_on_switch", t.reset_state_on_switch}};
}

TransferConfig transfer_from_json(const json& j, const fs::path& base_dir) {
  const std::string where = "transfer";
  check_keys(j, {"source_dir", "k", "gamma_override", "reset_state_on_switch"}, where);
  TransferConfig t;
  t.source_dir = existing_path(require_string(j, "source_dir", where), base_dir, "transfer.source_dir");
  t.k = get_uint(j, "k", t.k, where);
  t.gamma_override = get_opt_double(j, "gamma_override", where);
  t.reset_state_on_switch = get_bool(j, "reset_state_on_switch", t.reset_state_on_switch, where);
  if (t.k < 2) throw ConfigError("transfer.k must be >= 2");
  if (t.gamma_override && !(*t.gamma_override > 0.0)) throw ConfigError("transfer.gamma_override must be > 0");
  return t;
}

Method method_from_name(const std::string& name) {
  if (name == "meta") return Method::meta;
  if (name == "schedule") return Method::schedule;
  if (name == "transfer") return Method::transfer;
  throw ConfigError("method must be 'meta', 'schedule' or 'transfer', got '" + name + "'");
}

json parse_json_text(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(what + ": " + e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
}

}  // namespace

std::string method_name(Method method) {
  switch (method) {
    case Method::meta:
      return "meta";
    case Method::schedule:
      return "schedule";
    case Method::transfer:
      return "transfer";
  }
  return "unknown";
}

Architecture ExperimentConfig::architecture() const {
  return Architecture::mlp(dataset.dim, hidden_layers, dataset.classes);
}

std::int64_t ExperimentConfig::total_steps() const {
  return training.max_steps.value_or(training.epochs * steps_per_epoch(dataset.n_train, training.batch_size));
}

nlohmann::json to_json(const ScheduleConfig& schedule) {
  return std::visit(
      [](const auto& s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, FixedLr>) {
          return json{{"kind", "fixed"}, {"lr", s.lr}};
        } else if constexpr (std::is_same_v<T, ExponentialLr>) {
          return json{{"kind", "exponential"}, {"lr0", s.lr0}, {"rate", s.rate}};
        } else if constexpr (std::is_same_v<T, MultiStepLr>) {
          return json{{"kind", "multistep"}, {"lr0", s.lr0}, {"period_epochs", s.period_epochs}, {"factor", s.factor}};
        } else if constexpr (std::is_same_v<T, SgdrLr>) {
          return json{{"kind", "sgdr"}, {"eta_max", s.eta_max}, {"eta_min", s.eta_min}, {"t0", s.t0},
                      {"t_mult", s.t_mult}};
        } else if constexpr (std::is_same_v<T, HypergradientLr>) {
          return json{{"kind", "hypergradient"}, {"alpha0", s.alpha0}, {"hyper_lr", s.hyper_lr}};
        } else {
          json paths = json::array();
          for (const auto& p : s.checkpoints) paths.push_back(p.string());
          return json{{"kind", "frozen-meta"},
                      {"checkpoints", paths},
                      {"gamma_override", optional_json(s.gamma_override)},
                      {"reset_state_on_switch", s.reset_state_on_switch}};
        }
      },
      schedule);
}

ScheduleConfig schedule_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  const std::string where = "schedule";
  if (!j.is_object()) throw ConfigError("schedule must be an object");
  const std::string kind = require_string(j, "kind", where);
  ScheduleConfig out;
  if (kind == "fixed") {
    check_keys(j, {"kind", "lr"}, where);
    out = FixedLr{get_double(j, "lr", 0.1, where)};
  } else if (kind == "exponential") {
    check_keys(j, {"kind", "lr0", "rate"}, where);
    out = ExponentialLr{get_double(j, "lr0", 0.1, where), get_double(j, "rate", 0.95, where)};
  } else if (kind == "multistep") {
    check_keys(j, {"kind", "lr0", "period_epochs", "factor"}, where);
    out = MultiStepLr{get_double(j, "lr0", 0.1, where), get_int(j, "period_epochs", 60, where),
                      get_double(j, "factor", 0.1, where)};
  } else if (kind == "sgdr") {
    check_keys(j, {"kind", "eta_max", "eta_min", "t0", "t_mult"}, where);
    out = SgdrLr{get_double(j, "eta_max", 0.1, where), get_double(j, "eta_min", 1e-5, where),
                 get_int(j, "t0", 10, where), get_int(j, "t_mult", 2, where)};
  } else if (kind == "hypergradient") {
    check_keys(j, {"kind", "alpha0", "hyper_lr"}, where);
    out = HypergradientLr{get_double(j, "alpha0", 0.1, where), get_double(j, "hyper_lr", 1e-4, where)};
  } else if (kind == "frozen-meta") {
    check_keys(j, {"kind", "checkpoints", "gamma_override", "reset_state_on_switch"}, where);
    FrozenCheckpoints f;
    const json* list = find(j, "checkpoints");
    if (!list || !list->is_array() || list->empty()) {
      throw ConfigError("schedule.checkpoints must be a non-empty array of paths");
    }
    for (const auto& item : *list) {
      if (!item.is_string()) throw ConfigError("schedule.checkpoints must contain path strings");
      f.checkpoints.push_back(existing_path(item.get<std::string>(), base_dir, "checkpoint"));
    }
    f.gamma_override = get_opt_double(j, "gamma_override", where);
    if (f.gamma_override && !(*f.gamma_override > 0.0)) throw ConfigError("schedule.gamma_override must be > 0");
    f.reset_state_on_switch = get_bool(j, "reset_state_on_switch", false, where);
    return f;
  } else {
    throw ConfigError("unknown schedule kind '" + kind + "'");
  }
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (!std::is_same_v<T, FrozenCheckpoints>) validate(ScheduleSpec{s});
      },
      out);
  return out;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  json hidden = json::array();
  for (const auto h : c.hidden_layers) hidden.push_back(h);
  json j{{"name", c.name},
         {"method", method_name(c.method)},
         {"dataset", dataset_to_json(c.dataset)},
         {"model", json{{"hidden", hidden}}},
         {"training", training_to_json(c.training)},
         {"meta", meta_to_json(c.meta)},
         {"output_dir", c.output_dir.string()},
         {"seeds", c.seeds}};
  j["schedule"] = c.schedule ? to_json(*c.schedule) : json(nullptr);
  j["transfer"] = c.transfer ? transfer_to_json(*c.transfer) : json(nullptr);
  return j;
}

ExperimentConfig experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  const std::string where = "config";
  check_keys(j, {"name", "method", "dataset", "model", "training", "meta", "schedule", "transfer", "output_dir",
                 "seeds"},
             where);
  ExperimentConfig c;
  c.name = get_string(j, "name", c.name, where);
  c.method = method_from_name(get_string(j, "method", "meta", where));
  const json* dataset = find(j, "dataset");
  if (!dataset) throw ConfigError("config.dataset is required");
  c.dataset = dataset_from_json(*dataset);
  if (const json* model = find(j, "model")) {
    check_keys(*model, {"hidden"}, "model");
    if (const json* hidden = find(*model, "hidden")) {
      if (!hidden->is_array()) throw ConfigError("model.hidden must be an array of layer widths");
      for (const auto& w : *hidden) {
        if (!is_non_negative_integer(w) || w.get<std::size_t>() == 0) {
          throw ConfigError("model.hidden must contain positive integers");
        }
        c.hidden_layers.push_back(w.get<std::size_t>());
      }
    }
  }
  if (const json* training = find(j, "training")) c.training = training_from_json(*training);
  if (const json* meta = find(j, "meta")) c.meta = meta_from_json(*meta);
  if (const json* schedule = find(j, "schedule")) c.schedule = schedule_from_json(*schedule, base_dir);
  if (const json* transfer = find(j, "transfer")) c.transfer = transfer_from_json(*transfer, base_dir);
  c.output_dir = resolve(get_string(j, "output_dir", "runs", where), base_dir);
  c.seeds = get_uint_list(j, "seeds", where);
  if (c.seeds.empty()) throw ConfigError("config.seeds must list at least one seed");
  if (c.method == Method::schedule && !c.schedule) throw ConfigError("method 'schedule' needs a schedule");
  if (c.method == Method::transfer && !c.transfer) throw ConfigError("method 'transfer' needs a transfer section");
  return c;
}

ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  return experiment_from_json(parse_json_text(text, "config"), base_dir);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_file(path), fs::absolute(path).parent_path());
}

std::string serialize_config(const ExperimentConfig& config) { return to_json(config).dump(2) + "\n"; }

std::string config_hash(const ExperimentConfig& config, std::uint64_t seed) {
  return hash_hex(to_json(config).dump() + "#seed=" + std::to_string(seed));
}

CompareGrid parse_grid(std::string_view text, const std::filesystem::path& base_dir) {
  const json j = parse_json_text(text, "grid");
  check_keys(j, {"base", "methods", "seeds"}, "grid");
  const json* base = find(j, "base");
  if (!base) throw ConfigError("grid.base is required");
  json base_json;
  fs::path base_config_dir = base_dir;
  if (base->is_string()) {
    const fs::path p = existing_path(base->get<std::string>(), base_dir, "grid.base");
    base_json = parse_json_text(read_file(p), p.string());
    base_config_dir = p.parent_path();
  } else {
    base_json = *base;
  }
  CompareGrid grid;
  grid.seeds = get_uint_list(j, "seeds", "grid");
  if (grid.seeds.empty()) throw ConfigError("grid.seeds must list at least one seed");
  const json* methods = find(j, "methods");
  if (!methods || !methods->is_array() || methods->empty()) throw ConfigError("grid.methods must be a non-empty array");
  for (const auto& m : *methods) {
    check_keys(m, {"label", "overrides"}, "grid.methods[]");
    const std::string label = require_string(m, "label", "grid.methods[]");
    if (label.empty() || label.find_first_of("/\\,") != std::string::npos) {
      throw ConfigError("grid label '" + label + "' must be non-empty without '/', '\\' or ','");
    }
    for (const auto& e : grid.entries) {
      if (e.label == label) throw ConfigError("duplicate grid label '" + label + "'");
    }
    json merged = base_json;
    if (const json* overrides = find(m, "overrides")) merged.merge_patch(*overrides);
    merged["seeds"] = grid.seeds;
    try {
      grid.entries.push_back(GridEntry{label, experiment_from_json(merged, base_config_dir)});
    } catch (const ConfigError& e) {
      throw ConfigError("grid entry '" + label + "': " + e.what());
    }
  }
  return grid;
}

CompareGrid load_grid(const std::filesystem::path& path) {
  return parse_grid(read_file(path), fs::absolute(path).parent_path());
}

}  // namespace metasched

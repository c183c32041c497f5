#include "mcdi/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <system_error>

namespace mcdi {

std::string to_string(TaskFamily family) {
  return family == TaskFamily::Blobs ? "blobs" : "sine";
}

std::string to_string(InferenceMode mode) {
  return mode == InferenceMode::Posterior ? "posterior" : "eq2";
}

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw SpecError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw SpecError("config key '" + key + "': expected true or false, got '" + text + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field number_field(std::string key, T ExperimentConfig::*member) {
  return {key,
          [key, member](ExperimentConfig& c, const std::string& v) {
            c.*member = parse_number<T>(key, v);
          },
          [member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

template <typename S, typename T>
Field nested_field(std::string key, S ExperimentConfig::*section, T S::*member) {
  return {key,
          [key, section, member](ExperimentConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<T, bool>) {
              (c.*section).*member = parse_bool(key, v);
            } else {
              (c.*section).*member = parse_number<T>(key, v);
            }
          },
          [section, member](const ExperimentConfig& c) -> std::string {
            const T value = (c.*section).*member;
            if constexpr (std::is_same_v<T, bool>) {
              return value ? "true" : "false";
            } else if constexpr (std::is_floating_point_v<T>) {
              return format_double(value);
            } else {
              return std::to_string(value);
            }
          }};
}

Field list_field(std::string key, std::vector<int> ExperimentConfig::*member) {
  return {key,
          [key, member](ExperimentConfig& c, const std::string& v) {
            c.*member = parse_int_list(key, v);
          },
          [member](const ExperimentConfig& c) { return format_int_list(c.*member); }};
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = {
      number_field("schedule.T", &C::T),
      number_field("schedule.k", &C::k),
      number_field("schedule.alpha_min", &C::alpha_min),
      number_field("schedule.alpha_max", &C::alpha_max),

      {"task.family",
       [](C& c, const std::string& v) {
         if (v == "blobs") {
           c.family = TaskFamily::Blobs;
         } else if (v == "sine") {
           c.family = TaskFamily::Sine;
         } else {
           throw SpecError("config key 'task.family': expected blobs or sine, got '" + v + "'");
         }
       },
       [](const C& c) { return to_string(c.family); }},
      number_field("task.n_way", &C::n_way),
      number_field("task.k_shot", &C::k_shot),
      number_field("task.query_size", &C::query_size),

      list_field("network.hidden", &C::hidden),
      {"network.activation",
       [](C& c, const std::string& v) {
         if (v == "tanh") {
           c.activation = Activation::Tanh;
         } else if (v == "relu") {
           c.activation = Activation::Relu;
         } else {
           throw SpecError("config key 'network.activation': expected tanh or relu, got '" + v +
                           "'");
         }
       },
       [](const C& c) { return std::string(c.activation == Activation::Tanh ? "tanh" : "relu"); }},

      nested_field("prep.lr", &C::prep, &PrepConfig::lr),
      nested_field("prep.rho", &C::prep, &PrepConfig::rho),
      nested_field("prep.noise_std", &C::prep, &PrepConfig::noise_std),
      nested_field("prep.rotate", &C::prep, &PrepConfig::rotate),
      nested_field("prep.max_epochs", &C::prep, &PrepConfig::max_epochs),
      nested_field("prep.patience", &C::prep, &PrepConfig::patience),
      nested_field("prep.init_std", &C::prep, &PrepConfig::init_std),
      {"prep.shared_init",
       [](C& c, const std::string& v) { c.shared_init = parse_bool("prep.shared_init", v); },
       [](const C& c) { return std::string(c.shared_init ? "true" : "false"); }},

      number_field("denoiser.t_embed_dim", &C::t_embed_dim),
      list_field("denoiser.hidden", &C::denoiser_hidden),
      number_field("denoiser.init_std", &C::denoiser_init_std),

      nested_field("meta.eta", &C::meta, &MetaConfig::eta),
      nested_field("meta.zeta", &C::meta, &MetaConfig::zeta),
      nested_field("meta.K", &C::meta, &MetaConfig::K),
      nested_field("meta.B", &C::meta, &MetaConfig::B),
      nested_field("meta.epochs", &C::meta, &MetaConfig::epochs),
      {"meta.loss_kind",
       [](C& c, const std::string& v) { c.meta.loss_kind = parse_loss_kind(v); },
       [](const C& c) { return to_string(c.meta.loss_kind); }},
      nested_field("meta.n_mc", &C::meta, &MetaConfig::n_mc),
      {"meta.scaling",
       [](C& c, const std::string& v) {
         if (v == "normalized") {
           c.meta.scaling = LocalScaling::Normalized;
         } else if (v == "verbatim") {
           c.meta.scaling = LocalScaling::Verbatim;
         } else {
           throw SpecError("config key 'meta.scaling': expected normalized or verbatim, got '" +
                           v + "'");
         }
       },
       [](const C& c) {
         return std::string(c.meta.scaling == LocalScaling::Normalized ? "normalized"
                                                                       : "verbatim");
       }},
      nested_field("meta.log_every", &C::meta, &MetaConfig::log_every),
      nested_field("meta.log_samples", &C::meta, &MetaConfig::log_samples),
      nested_field("meta.monitor_seed", &C::meta, &MetaConfig::monitor_seed),

      number_field("experiment.base_seed", &C::base_seed),
      number_field("experiment.n_train_tasks", &C::n_train_tasks),
      number_field("experiment.n_eval_tasks", &C::n_eval_tasks),

      {"eval.inference",
       [](C& c, const std::string& v) {
         if (v == "posterior") {
           c.inference = InferenceMode::Posterior;
         } else if (v == "eq2") {
           c.inference = InferenceMode::Eq2;
         } else {
           throw SpecError("config key 'eval.inference': expected posterior or eq2, got '" + v +
                           "'");
         }
       },
       [](const C& c) { return to_string(c.inference); }},
      number_field("eval.chains_per_task", &C::chains_per_task),
      number_field("eval.finetune_steps", &C::finetune_steps),
      number_field("eval.finetune_lr", &C::finetune_lr),

      nested_field("reptile.inner_lr", &C::reptile, &ReptileConfig::inner_lr),
      nested_field("reptile.outer_lr", &C::reptile, &ReptileConfig::outer_lr),
      nested_field("reptile.K", &C::reptile, &ReptileConfig::K),
      nested_field("reptile.B", &C::reptile, &ReptileConfig::B),
      nested_field("reptile.epochs", &C::reptile, &ReptileConfig::epochs),

      number_field("ablation.seeds", &C::ablation_seeds),
      list_field("ablation.sweep_k", &C::sweep_k),

      number_field("verify.instances", &C::verify_instances),
      number_field("verify.grad_instances", &C::verify_grad_instances),
  };
  return table;
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  if (cfg.T < 1 || cfg.k < 1) throw SpecError("schedule.T and schedule.k must be positive");
  if (cfg.T % cfg.k != 0) {
    throw SpecError("schedule.k=" + std::to_string(cfg.k) + " does not divide schedule.T=" +
                    std::to_string(cfg.T));
  }
  linear_alpha_schedule(cfg.T, cfg.k, cfg.alpha_min, cfg.alpha_max);
  if (cfg.n_way < 1 || cfg.k_shot < 1 || cfg.query_size < 1) {
    throw SpecError("task sizes must be positive");
  }
  if (cfg.family == TaskFamily::Sine && cfg.n_way != 1) {
    throw SpecError("sine tasks are single-output regression; set task.n_way=1");
  }
  if (cfg.family == TaskFamily::Blobs && cfg.n_way < 2) {
    throw SpecError("blobs tasks need task.n_way >= 2");
  }
  for (int h : cfg.hidden) {
    if (h < 1) throw SpecError("network.hidden widths must be positive");
  }
  for (int h : cfg.denoiser_hidden) {
    if (h < 1) throw SpecError("denoiser.hidden widths must be positive");
  }
  PrepConfig prep = cfg.prep;
  prep.k = cfg.k;
  validate(prep);
  validate(cfg.meta);
  if (cfg.t_embed_dim < 0 || cfg.t_embed_dim % 2 != 0) {
    throw SpecError("denoiser.t_embed_dim must be a nonnegative even number");
  }
  if (!(cfg.denoiser_init_std > 0)) throw SpecError("denoiser.init_std must be positive");
  if (cfg.n_train_tasks < 1 || cfg.n_eval_tasks < 1) {
    throw SpecError("experiment task counts must be positive");
  }
  if (cfg.chains_per_task < 1) throw SpecError("eval.chains_per_task must be positive");
  if (cfg.finetune_steps < 0) throw SpecError("eval.finetune_steps must be nonnegative");
  if (cfg.reptile.K < 0 || cfg.reptile.B < 1 || cfg.reptile.epochs < 0) {
    throw SpecError("invalid reptile settings");
  }
  if (cfg.ablation_seeds < 1) throw SpecError("ablation.seeds must be positive");
  for (int k : cfg.sweep_k) {
    if (k < 1) throw SpecError("ablation.sweep_k entries must be positive");
  }
  if (cfg.verify_instances < 1 || cfg.verify_grad_instances < 1) {
    throw SpecError("verification instance counts must be positive");
  }
}

void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw SpecError("unknown config key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw SpecError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.prep.k = cfg.k;
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + "=" + f.get(cfg) + "\n";
  return out;
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << format_config(cfg);
}

}  // namespace mcdi

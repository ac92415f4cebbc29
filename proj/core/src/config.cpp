#include "dilocox/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace dilocox {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

struct KeyValues {
  std::map<std::string, std::string> values;
  std::string origin;

  bool has(const std::string& key) const { return values.count(key) > 0; }

  std::string take(const std::string& key, const std::string& fallback) {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    std::string v = it->second;
    values.erase(it);
    return v;
  }

  template <typename T, typename Parse>
  T take_parsed(const std::string& key, T fallback, Parse parse) {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    const std::string raw = it->second;
    values.erase(it);
    try {
      return parse(raw);
    } catch (const ValidationError&) {
      throw;
    } catch (...) {
      throw ValidationError(origin + ": bad value for key '" + key + "': " + raw);
    }
  }

  int64_t take_int(const std::string& key, int64_t fallback) {
    return take_parsed<int64_t>(key, fallback, [](const std::string& s) {
      size_t pos = 0;
      const int64_t v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    });
  }

  double take_double(const std::string& key, double fallback) {
    return take_parsed<double>(key, fallback, [](const std::string& s) {
      size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    });
  }

  bool take_bool(const std::string& key, bool fallback) {
    return take_parsed<bool>(key, fallback, [](const std::string& s) {
      if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
      if (s == "false" || s == "0" || s == "no" || s == "off") return false;
      throw std::invalid_argument(s);
    });
  }

  std::vector<int> take_int_list(const std::string& key, std::vector<int> fallback) {
    return take_parsed<std::vector<int>>(key, std::move(fallback), [](const std::string& s) {
      std::vector<int> out;
      std::stringstream ss(s);
      std::string part;
      while (std::getline(ss, part, ',')) {
        part = trim(part);
        if (part.empty()) throw std::invalid_argument(s);
        size_t pos = 0;
        out.push_back(std::stoi(part, &pos));
        if (pos != part.size()) throw std::invalid_argument(s);
      }
      if (out.empty()) throw std::invalid_argument(s);
      return out;
    });
  }

  void reject_leftovers() const {
    if (values.empty()) return;
    throw ValidationError(origin + ": unknown config key '" + values.begin()->first + "'");
  }
};

KeyValues scan(const std::string& text, const std::string& origin) {
  KeyValues kv;
  kv.origin = origin;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ValidationError(origin + ":" + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ValidationError(origin + ":" + std::to_string(lineno) + ": empty section name");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ValidationError(origin + ":" + std::to_string(lineno) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (kv.values.count(full))
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + full + "'");
    kv.values[full] = value;
  }
  return kv;
}

}  // namespace

void FullConfig::validate() const {
  engine.validate();
  if (!(eval_fraction >= 0.0) || eval_fraction >= 1.0)
    throw ValidationError("config: data.eval_fraction must be in [0, 1)");
  if (data_kind == DataKind::CharCorpus) {
    if (corpus_path.empty()) throw ValidationError("config: data.path is required for char-corpus");
    if (max_bytes < 1) throw ValidationError("config: data.max_bytes must be >= 1");
  } else {
    if (synth_samples < 2) throw ValidationError("config: data.samples must be >= 2");
    if (synth_in < 1 || synth_out < 1 || synth_teacher_hidden < 1)
      throw ValidationError("config: synthetic dataset dimensions must be positive");
  }
  if (output_dir.empty()) throw ValidationError("config: run.output_dir must not be empty");
}

FullConfig parse_config_text(const std::string& text, const std::string& origin) {
  KeyValues kv = scan(text, origin);
  FullConfig cfg;
  EngineConfig& e = cfg.engine;

  // [run]
  e.mode = mode_from_string(kv.take("run.mode", "dilocox"));
  e.total_inner_steps = kv.take_int("run.total_inner_steps", e.total_inner_steps);
  e.seed = static_cast<uint64_t>(kv.take_int("run.seed", 1));
  e.threads = static_cast<int>(kv.take_int("run.threads", e.threads));
  cfg.output_dir = kv.take("run.output_dir", cfg.output_dir);

  // [model]
  const std::string model_kind = kv.take("model.kind", "char-lm");
  const ModelKind mk = model_kind_from_string(model_kind);
  const Activation act = activation_from_string(kv.take("model.activation", "tanh"));
  if (mk == ModelKind::Mlp) {
    if (kv.has("model.seq_len") || kv.has("model.emb_dim"))
      throw ValidationError(origin + ": model.seq_len/model.emb_dim only apply to char-lm");
    std::vector<int> widths = kv.take_int_list("model.widths", {32, 64, 8});
    ModelSpec ms = mlp_spec(std::move(widths), act);
    ms.classes = static_cast<int>(kv.take_int("model.classes", 0));
    if (ms.classes > 0) ms.validate();
    e.model = std::move(ms);
  } else {
    if (kv.has("model.classes"))
      throw ValidationError(origin + ": model.classes only applies to mlp");
    const int seq_len = static_cast<int>(kv.take_int("model.seq_len", 8));
    const int emb_dim = static_cast<int>(kv.take_int("model.emb_dim", 16));
    std::vector<int> hidden = kv.take_int_list("model.widths", {256, 256});
    // vocab_size is filled from the dataset at load time; use a placeholder
    // that passes structural validation.
    e.model = char_lm_spec(2, seq_len, emb_dim, std::move(hidden), act);
  }

  // [data]
  cfg.data_kind = data_kind_from_string(kv.take("data.kind", "char-corpus"));
  cfg.corpus_path = kv.take("data.path", "");
  cfg.max_bytes = kv.take_int("data.max_bytes", cfg.max_bytes);
  cfg.eval_fraction = kv.take_double("data.eval_fraction", cfg.eval_fraction);
  cfg.synth_samples = kv.take_int("data.samples", cfg.synth_samples);
  cfg.synth_in = static_cast<int>(kv.take_int("data.in_dim", cfg.synth_in));
  cfg.synth_out = static_cast<int>(kv.take_int("data.out_dim", cfg.synth_out));
  cfg.synth_teacher_hidden =
      static_cast<int>(kv.take_int("data.teacher_hidden", cfg.synth_teacher_hidden));
  e.batch = static_cast<int>(kv.take_int("data.batch", e.batch));
  e.eval_windows = static_cast<int>(kv.take_int("data.eval_windows", e.eval_windows));

  // [parallel]
  e.D = static_cast<int>(kv.take_int("parallel.D", 1));
  e.M = static_cast<int>(kv.take_int("parallel.M", 1));
  e.net.clusters = static_cast<int>(kv.take_int("parallel.C", 1));

  // [network]
  e.net.bandwidth_bps = kv.take_double("network.bandwidth_gbps", 1.0) * 1e9;
  e.net.latency_s = kv.take_double("network.latency_s", 0.0);
  e.net.t_step_s = kv.take_double("network.t_step_s", 1.0);
  e.net.intra_bandwidth_bps = kv.take_double("network.intra_bandwidth_gbps", 0.0) * 1e9;

  // [compression]
  e.compression.enabled = kv.take_bool("compression.enabled", true);
  e.compression.rank1 = static_cast<int>(kv.take_int("compression.r1", e.compression.rank1));
  e.compression.quant.qbits = static_cast<int>(kv.take_int("compression.q", e.compression.quant.qbits));
  e.compression.quant.rounding =
      rounding_from_string(kv.take("compression.rounding", "stochastic"));
  e.compression.power_iters =
      static_cast<int>(kv.take_int("compression.power_iters", e.compression.power_iters));
  if (!e.compression.enabled) e.force_compress = false;

  // [schedule]
  e.schedule.H1 = static_cast<int>(kv.take_int("schedule.H1", e.schedule.H1));
  e.schedule.adaptive = kv.take_bool("schedule.adaptive", e.schedule.adaptive);
  e.schedule.window_c = static_cast<int>(kv.take_int("schedule.c", e.schedule.window_c));
  e.schedule.tau = kv.take_double("schedule.tau", e.schedule.tau);
  e.schedule.H_min = static_cast<int>(kv.take_int("schedule.H_min", e.schedule.H_min));

  // [optimizer]
  e.inner_opt.lr = static_cast<float>(kv.take_double("optimizer.inner_lr", e.inner_opt.lr));
  e.inner_opt.beta1 = static_cast<float>(kv.take_double("optimizer.beta1", e.inner_opt.beta1));
  e.inner_opt.beta2 = static_cast<float>(kv.take_double("optimizer.beta2", e.inner_opt.beta2));
  e.inner_opt.eps = static_cast<float>(kv.take_double("optimizer.eps", e.inner_opt.eps));
  e.inner_opt.weight_decay =
      static_cast<float>(kv.take_double("optimizer.weight_decay", e.inner_opt.weight_decay));
  e.outer_opt.lr = static_cast<float>(kv.take_double("optimizer.outer_lr", e.outer_opt.lr));
  e.outer_opt.momentum =
      static_cast<float>(kv.take_double("optimizer.outer_momentum", e.outer_opt.momentum));
  e.outer_opt.classical = kv.take_bool("optimizer.outer_classical", e.outer_opt.classical);
  e.inner_opt.warmup_steps = kv.take_int("optimizer.warmup_steps", e.inner_opt.warmup_steps);
  e.continue_from_local = kv.take_bool("optimizer.continue_from_local", e.continue_from_local);
  e.outer_step_epsilon_s = kv.take_double("optimizer.outer_step_epsilon_s", e.outer_step_epsilon_s);

  kv.reject_leftovers();
  return cfg;
}

FullConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::string resolved_config_text(const FullConfig& cfg) {
  const EngineConfig& e = cfg.engine;
  std::ostringstream os;
  os << "[run]\n";
  os << "mode = " << to_string(e.mode) << "\n";
  os << "total_inner_steps = " << e.total_inner_steps << "\n";
  os << "seed = " << e.seed << "\n";
  os << "threads = " << e.threads << "\n";
  os << "output_dir = " << cfg.output_dir << "\n\n";

  os << "[model]\n";
  os << "kind = " << to_string(e.model.kind) << "\n";
  os << "widths = ";
  for (size_t i = 0; i < e.model.widths.size(); ++i)
    os << (i ? "," : "") << e.model.widths[i];
  os << "\n";
  os << "activation = " << to_string(e.model.activation) << "\n";
  if (e.model.kind == ModelKind::CharLm) {
    os << "seq_len = " << e.model.seq_len << "\n";
    os << "emb_dim = " << e.model.emb_dim << "\n";
  } else if (e.model.classes > 0) {
    os << "classes = " << e.model.classes << "\n";
  }
  os << "\n[data]\n";
  os << "kind = " << to_string(cfg.data_kind) << "\n";
  if (cfg.data_kind == DataKind::CharCorpus) {
    os << "path = " << cfg.corpus_path << "\n";
    os << "max_bytes = " << cfg.max_bytes << "\n";
  } else {
    os << "samples = " << cfg.synth_samples << "\n";
    os << "in_dim = " << cfg.synth_in << "\n";
    os << "out_dim = " << cfg.synth_out << "\n";
    os << "teacher_hidden = " << cfg.synth_teacher_hidden << "\n";
  }
  os << "eval_fraction = " << cfg.eval_fraction << "\n";
  os << "batch = " << e.batch << "\n";
  os << "eval_windows = " << e.eval_windows << "\n";

  os << "\n[parallel]\n";
  os << "D = " << e.D << "\n";
  os << "M = " << e.M << "\n";
  os << "C = " << e.net.clusters << "\n";

  os << "\n[network]\n";
  os << "bandwidth_gbps = " << e.net.bandwidth_bps / 1e9 << "\n";
  os << "latency_s = " << e.net.latency_s << "\n";
  os << "t_step_s = " << e.net.t_step_s << "\n";
  os << "intra_bandwidth_gbps = " << e.net.intra_bandwidth_bps / 1e9 << "\n";

  os << "\n[compression]\n";
  os << "enabled = " << (e.compression.enabled ? "true" : "false") << "\n";
  os << "r1 = " << e.compression.rank1 << "\n";
  os << "q = " << e.compression.quant.qbits << "\n";
  os << "rounding = " << to_string(e.compression.quant.rounding) << "\n";
  os << "power_iters = " << e.compression.power_iters << "\n";

  os << "\n[schedule]\n";
  os << "H1 = " << e.schedule.H1 << "\n";
  os << "adaptive = " << (e.schedule.adaptive ? "true" : "false") << "\n";
  os << "c = " << e.schedule.window_c << "\n";
  os << "tau = " << e.schedule.tau << "\n";
  os << "H_min = " << e.schedule.resolved_H_min() << "\n";

  os << "\n[optimizer]\n";
  os << "inner_lr = " << e.inner_opt.lr << "\n";
  os << "beta1 = " << e.inner_opt.beta1 << "\n";
  os << "beta2 = " << e.inner_opt.beta2 << "\n";
  os << "eps = " << e.inner_opt.eps << "\n";
  os << "weight_decay = " << e.inner_opt.weight_decay << "\n";
  os << "outer_lr = " << e.outer_opt.lr << "\n";
  os << "outer_momentum = " << e.outer_opt.momentum << "\n";
  os << "outer_classical = " << (e.outer_opt.classical ? "true" : "false") << "\n";
  os << "warmup_steps = " << e.inner_opt.warmup_steps << "\n";
  os << "continue_from_local = " << (e.continue_from_local ? "true" : "false") << "\n";
  os << "outer_step_epsilon_s = " << e.outer_step_epsilon_s << "\n";
  return os.str();
}

Dataset load_dataset(FullConfig& cfg) {
  Dataset ds;
  switch (cfg.data_kind) {
    case DataKind::CharCorpus:
      ds = load_corpus(cfg.corpus_path, cfg.max_bytes);
      break;
    case DataKind::SyntheticRegression:
      ds = make_synthetic_regression(cfg.synth_samples, cfg.synth_in, cfg.synth_out,
                                     cfg.synth_teacher_hidden, cfg.engine.seed);
      break;
    case DataKind::SyntheticClassification:
      ds = make_synthetic_classification(cfg.synth_samples, cfg.synth_in, cfg.synth_out,
                                         cfg.synth_teacher_hidden, cfg.engine.seed);
      break;
  }
  if (cfg.engine.model.kind == ModelKind::CharLm) {
    cfg.engine.model.vocab_size = ds.vocab_size;
    cfg.engine.model.validate();
  } else if (cfg.data_kind != DataKind::CharCorpus) {
    if (cfg.engine.model.widths.front() != cfg.synth_in)
      throw ValidationError("config: model input width must equal data.in_dim");
    if (cfg.engine.model.widths.back() != cfg.synth_out)
      throw ValidationError("config: model output width must equal data.out_dim");
  }
  return ds;
}

}  // namespace dilocox

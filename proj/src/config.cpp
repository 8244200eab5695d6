#include "eeg2rep/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

namespace eeg2rep {

namespace {

/// Reads one JSON object, remembering which keys were consumed so that
/// leftovers can be reported.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + display(path_) + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    out = convert<T>(*it, name(key));
  }

  template <class T, class Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (j_.contains(key)) {
      try {
        out = parse(s);
      } catch (const ConfigError& e) {
        throw ConfigError("config key '" + name(key) + "': " + e.what());
      }
    }
  }

  template <class T, class Parse>
  void get_enum_list(const char* key, std::vector<T>& out, Parse parse) {
    std::vector<std::string> s;
    get(key, s);
    if (!j_.contains(key)) return;
    out.clear();
    for (const auto& v : s) {
      try {
        out.push_back(parse(v));
      } catch (const ConfigError& e) {
        throw ConfigError("config key '" + name(key) + "': " + e.what());
      }
    }
  }

  template <class F>
  void section(const char* key, F&& f) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    Reader r(*it, name(key));
    f(r);
    r.finish();
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown config key '" + name(item.key()) + "'");
    }
  }

 private:
  static std::string display(const std::string& p) { return p.empty() ? "<root>" : p; }
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  static T convert(const Json& v, const std::string& where) {
    const auto fail = [&](const char* what) { return ConfigError("config key '" + where + "' must be " + what); };
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw fail("a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
        throw fail("a nonnegative integer");
      }
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw fail("an integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw fail("a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw fail("a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) throw fail("an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string_view to_string(Activation a) { return a == Activation::gelu ? "gelu" : "identity"; }

Activation parse_activation(std::string_view s) {
  if (s == "gelu") return Activation::gelu;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

std::string_view to_string(SplitMode m) { return m == SplitMode::subject_wise ? "subject" : "random"; }

SplitMode parse_split_mode(std::string_view s) {
  if (s == "subject") return SplitMode::subject_wise;
  if (s == "random") return SplitMode::random;
  throw ConfigError("unknown split mode '" + std::string(s) + "' (expected subject or random)");
}

Json embed_json(const EmbedConfig& e) {
  return {{"num_filters", e.num_filters},
          {"temporal_kernel", e.temporal_kernel},
          {"pool_size", e.pool_size},
          {"activation", to_string(e.activation)}};
}

void read_embed(Reader& r, EmbedConfig& e) {
  r.get("num_filters", e.num_filters);
  r.get("temporal_kernel", e.temporal_kernel);
  r.get("pool_size", e.pool_size);
  r.get_enum("activation", e.activation, parse_activation);
}

Json encoder_json(const EncoderConfig& e) {
  return {{"d_e", e.d_e}, {"heads", e.heads}, {"layers", e.layers}, {"ffn_multiplier", e.ffn_multiplier}};
}

void read_encoder(Reader& r, EncoderConfig& e) {
  r.get("d_e", e.d_e);
  r.get("heads", e.heads);
  r.get("layers", e.layers);
  r.get("ffn_multiplier", e.ffn_multiplier);
}

Json predictor_json(const PredictorConfig& p) {
  return {{"heads", p.heads}, {"layers", p.layers}, {"ffn_multiplier", p.ffn_multiplier}};
}

void read_predictor(Reader& r, PredictorConfig& p) {
  r.get("heads", p.heads);
  r.get("layers", p.layers);
  r.get("ffn_multiplier", p.ffn_multiplier);
}

Json masking_json(const MaskConfig& m) {
  return {{"strategy", to_string(m.strategy)},     {"rho", m.rho},
          {"beta", m.beta},                        {"num_targets", m.num_targets},
          {"num_views", m.num_views},              {"target_block_width", m.target_block_width}};
}

void read_masking(Reader& r, MaskConfig& m) {
  r.get_enum("strategy", m.strategy, parse_mask_strategy);
  r.get("rho", m.rho);
  r.get("beta", m.beta);
  r.get("num_targets", m.num_targets);
  r.get("num_views", m.num_views);
  r.get("target_block_width", m.target_block_width);
}

Json loss_json(const LossConfig& l) {
  return {{"lambda", l.lambda}, {"mu", l.mu}, {"gamma", l.gamma}, {"variance_target", l.variance_target},
          {"eps", l.eps}};
}

void read_loss(Reader& r, LossConfig& l) {
  r.get("lambda", l.lambda);
  r.get("mu", l.mu);
  r.get("gamma", l.gamma);
  r.get("variance_target", l.variance_target);
  r.get("eps", l.eps);
}

Json ema_json(const EmaSchedule& e) {
  return {{"tau0", e.tau0}, {"tau_e", e.tau_e}, {"tau_n", e.tau_n}, {"tau_n_fraction", e.tau_n_fraction}};
}

void read_ema(Reader& r, EmaSchedule& e) {
  r.get("tau0", e.tau0);
  r.get("tau_e", e.tau_e);
  r.get("tau_n", e.tau_n);
  r.get("tau_n_fraction", e.tau_n_fraction);
}

Json train_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"lr0", t.lr0},
          {"early_stop_patience", t.early_stop_patience},
          {"max_grad_norm", t.max_grad_norm}};
}

void read_train(Reader& r, TrainConfig& t) {
  r.get("batch_size", t.batch_size);
  r.get("epochs", t.epochs);
  r.get("lr0", t.lr0);
  r.get("early_stop_patience", t.early_stop_patience);
  r.get("max_grad_norm", t.max_grad_norm);
}

Json synthetic_json(const SynthConfig& s) {
  return {{"n", s.n},
          {"channels", s.channels},
          {"length", s.length},
          {"sampling_rate", s.sampling_rate},
          {"classes", s.classes},
          {"subjects", s.subjects},
          {"signal_amplitude", s.signal_amplitude},
          {"noise_std", s.noise_std},
          {"components", s.components},
          {"band_low_hz", s.band_low_hz},
          {"band_width_hz", s.band_width_hz},
          {"band_spacing_hz", s.band_spacing_hz},
          {"subject_scale_min", s.subject_scale_min},
          {"subject_scale_max", s.subject_scale_max},
          {"background_components", s.background_components},
          {"background_amplitude", s.background_amplitude},
          {"burst_fraction", s.burst_fraction}};
}

void read_synthetic(Reader& r, SynthConfig& s) {
  r.get("n", s.n);
  r.get("channels", s.channels);
  r.get("length", s.length);
  r.get("sampling_rate", s.sampling_rate);
  r.get("classes", s.classes);
  r.get("subjects", s.subjects);
  r.get("signal_amplitude", s.signal_amplitude);
  r.get("noise_std", s.noise_std);
  r.get("components", s.components);
  r.get("band_low_hz", s.band_low_hz);
  r.get("band_width_hz", s.band_width_hz);
  r.get("band_spacing_hz", s.band_spacing_hz);
  r.get("subject_scale_min", s.subject_scale_min);
  r.get("subject_scale_max", s.subject_scale_max);
  r.get("background_components", s.background_components);
  r.get("background_amplitude", s.background_amplitude);
  r.get("burst_fraction", s.burst_fraction);
}

template <class T>
Json enum_list(const std::vector<T>& v) {
  Json out = Json::array();
  for (auto x : v) out.push_back(to_string(x));
  return out;
}

}  // namespace

Json to_json(const ModelConfig& cfg) {
  return {{"channels", cfg.channels},
          {"length", cfg.length},
          {"embedding", embed_json(cfg.embed)},
          {"encoder", encoder_json(cfg.encoder)},
          {"predictor", predictor_json(cfg.predictor)},
          {"target_space", to_string(cfg.target_space)}};
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig cfg;
  Reader r(j, "model");
  r.get("channels", cfg.channels);
  r.get("length", cfg.length);
  r.section("embedding", [&](Reader& s) { read_embed(s, cfg.embed); });
  r.section("encoder", [&](Reader& s) { read_encoder(s, cfg.encoder); });
  r.section("predictor", [&](Reader& s) { read_predictor(s, cfg.predictor); });
  r.get_enum("target_space", cfg.target_space, parse_target_space);
  r.finish();
  return cfg;
}

Json to_json(const PretrainConfig& cfg) {
  Json t = train_json(cfg.train);
  t["seed"] = cfg.train.seed;
  return {{"masking", masking_json(cfg.mask)}, {"loss", loss_json(cfg.loss)}, {"ema", ema_json(cfg.ema)},
          {"training", t}};
}

PretrainConfig pretrain_config_from_json(const Json& j) {
  PretrainConfig cfg;
  Reader r(j, "pretrain");
  r.section("masking", [&](Reader& s) { read_masking(s, cfg.mask); });
  r.section("loss", [&](Reader& s) { read_loss(s, cfg.loss); });
  r.section("ema", [&](Reader& s) { read_ema(s, cfg.ema); });
  r.section("training", [&](Reader& s) {
    read_train(s, cfg.train);
    s.get("seed", cfg.train.seed);
  });
  r.finish();
  return cfg;
}

Json to_json(const RunConfig& cfg) {
  Json training = train_json(cfg.pretrain.train);
  training["target_space"] = to_string(cfg.model.target_space);
  const auto& ev = cfg.evaluation;
  return {
      {"run_name", cfg.run_name},
      {"output_dir", cfg.output_dir},
      {"seed", cfg.seed},
      {"data",
       {{"source", cfg.data.source},
        {"manifest", cfg.data.manifest},
        {"sampling_rate", cfg.data.sampling_rate},
        {"synthetic", synthetic_json(cfg.data.synthetic)},
        {"split",
         {{"train", cfg.data.split.train_fraction},
          {"val", cfg.data.split.val_fraction},
          {"test", cfg.data.split.test_fraction},
          {"mode", to_string(cfg.data.split.mode)}}}}},
      {"embedding", embed_json(cfg.model.embed)},
      {"encoder", encoder_json(cfg.model.encoder)},
      {"predictor", predictor_json(cfg.model.predictor)},
      {"masking", masking_json(cfg.pretrain.mask)},
      {"loss", loss_json(cfg.pretrain.loss)},
      {"ema", ema_json(cfg.pretrain.ema)},
      {"training", training},
      {"evaluation",
       {{"encoder", to_string(ev.encoder)},
        {"workers", ev.workers},
        {"probe",
         {{"l2", ev.probe.l2},
          {"tolerance", ev.probe.tolerance},
          {"max_iterations", ev.probe.max_iterations},
          {"standardize", ev.probe.standardize}}},
        {"finetune",
         {{"epochs", ev.finetune.epochs},
          {"batch_size", ev.finetune.batch_size},
          {"lr", ev.finetune.lr},
          {"random_init", ev.finetune.random_init}}},
        {"sweep", {{"strategies", enum_list(ev.sweep.strategies)}, {"rhos", ev.sweep.rhos}, {"betas", ev.sweep.betas}}},
        {"robustness", {{"kinds", enum_list(ev.robustness.kinds)}, {"magnitudes", ev.robustness.magnitudes}}}}}};
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig cfg;
  Reader r(j, "");
  r.get("run_name", cfg.run_name);
  r.get("output_dir", cfg.output_dir);
  r.get("seed", cfg.seed);
  r.section("data", [&](Reader& d) {
    d.get("source", cfg.data.source);
    d.get("manifest", cfg.data.manifest);
    d.get("sampling_rate", cfg.data.sampling_rate);
    d.section("synthetic", [&](Reader& s) { read_synthetic(s, cfg.data.synthetic); });
    d.section("split", [&](Reader& s) {
      s.get("train", cfg.data.split.train_fraction);
      s.get("val", cfg.data.split.val_fraction);
      s.get("test", cfg.data.split.test_fraction);
      s.get_enum("mode", cfg.data.split.mode, parse_split_mode);
    });
  });
  r.section("embedding", [&](Reader& s) { read_embed(s, cfg.model.embed); });
  r.section("encoder", [&](Reader& s) { read_encoder(s, cfg.model.encoder); });
  r.section("predictor", [&](Reader& s) { read_predictor(s, cfg.model.predictor); });
  r.section("masking", [&](Reader& s) { read_masking(s, cfg.pretrain.mask); });
  r.section("loss", [&](Reader& s) { read_loss(s, cfg.pretrain.loss); });
  r.section("ema", [&](Reader& s) { read_ema(s, cfg.pretrain.ema); });
  r.section("training", [&](Reader& s) {
    read_train(s, cfg.pretrain.train);
    s.get_enum("target_space", cfg.model.target_space, parse_target_space);
  });
  r.section("evaluation", [&](Reader& e) {
    auto& ev = cfg.evaluation;
    e.get_enum("encoder", ev.encoder, parse_probe_encoder);
    e.get("workers", ev.workers);
    e.section("probe", [&](Reader& s) {
      s.get("l2", ev.probe.l2);
      s.get("tolerance", ev.probe.tolerance);
      s.get("max_iterations", ev.probe.max_iterations);
      s.get("standardize", ev.probe.standardize);
    });
    e.section("finetune", [&](Reader& s) {
      s.get("epochs", ev.finetune.epochs);
      s.get("batch_size", ev.finetune.batch_size);
      s.get("lr", ev.finetune.lr);
      s.get("random_init", ev.finetune.random_init);
    });
    e.section("sweep", [&](Reader& s) {
      s.get_enum_list("strategies", ev.sweep.strategies, parse_mask_strategy);
      s.get("rhos", ev.sweep.rhos);
      s.get("betas", ev.sweep.betas);
    });
    e.section("robustness", [&](Reader& s) {
      s.get_enum_list("kinds", ev.robustness.kinds, parse_noise_kind);
      s.get("magnitudes", ev.robustness.magnitudes);
    });
  });
  r.finish();
  cfg.pretrain.train.seed = cfg.seed;
  cfg.data.synthetic.seed = derive_seed(cfg.seed, {0xda7au});
  cfg.evaluation.finetune.seed = derive_seed(cfg.seed, {0xf1u});
  cfg.model.channels = cfg.data.synthetic.channels;
  cfg.model.length = cfg.data.synthetic.length;
  return cfg;
}

void validate(const RunConfig& cfg) {
  if (cfg.run_name.empty()) throw ConfigError("config key 'run_name' must not be empty");
  if (cfg.data.source != "synthetic" && cfg.data.source != "manifest") {
    throw ConfigError("config key 'data.source' must be 'synthetic' or 'manifest'");
  }
  if (cfg.data.source == "manifest" && cfg.data.manifest.empty()) {
    throw ConfigError("config key 'data.manifest' is required when data.source is 'manifest'");
  }
  if (!(cfg.data.sampling_rate > 0)) throw ConfigError("config key 'data.sampling_rate' must be positive");
  if (cfg.data.source == "synthetic") validate(cfg.data.synthetic);
  const auto& s = cfg.data.split;
  if (s.train_fraction <= 0 || s.val_fraction <= 0 || s.test_fraction <= 0 ||
      std::abs(s.train_fraction + s.val_fraction + s.test_fraction - 1.0) > 1e-9) {
    throw ConfigError("config section 'data.split': fractions must be positive and sum to 1");
  }
  validate(cfg.model);
  validate(cfg.pretrain.mask);
  validate(cfg.pretrain.loss);
  validate(cfg.pretrain.ema);
  validate(cfg.pretrain.train);
  validate(cfg.evaluation.finetune);
  if (cfg.evaluation.workers < 1) throw ConfigError("config key 'evaluation.workers' must be >= 1");
  if (cfg.evaluation.probe.l2 < 0 || cfg.evaluation.probe.tolerance < 0 || cfg.evaluation.probe.max_iterations < 1) {
    throw ConfigError("config section 'evaluation.probe': l2, tolerance must be >= 0 and max_iterations >= 1");
  }
  for (double m : cfg.evaluation.robustness.magnitudes) {
    if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("config key 'evaluation.robustness.magnitudes': values in [0, 1]");
  }
  for (double r : cfg.evaluation.sweep.rhos) {
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("config key 'evaluation.sweep.rhos': values in (0, 1)");
  }
  for (int b : cfg.evaluation.sweep.betas) {
    if (b < 1) throw ConfigError("config key 'evaluation.sweep.betas': values >= 1");
  }
}

Json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

void apply_override(Json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' must look like key.path=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  Json* node = &j;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = Json::object();
  }
  if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
  (*node)[parts.back()] = value;
}

void resolve_model_shape(RunConfig& cfg, const EegDataset& dataset) {
  if (dataset.empty()) throw DataError("dataset is empty");
  cfg.model.channels = dataset.channels();
  cfg.model.length = dataset.length();
}

}  // namespace eeg2rep

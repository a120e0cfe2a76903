#include "rainshield/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace rainshield {

namespace {

Json train_section(int epochs, const char* optimizer, double lr, const char* schedule) {
  return Json{
      {"epochs", epochs},
      {"batch_size", 16},
      {"optimizer",
       {{"kind", optimizer},
        {"learning_rate", lr},
        {"momentum", 0.9},
        {"beta1", 0.9},
        {"beta2", 0.999},
        {"eps", 1e-8},
        {"weight_decay", 0.0}}},
      {"lr_schedule", schedule},
      {"attack", {{"method", "bim"}, {"epsilon", 8.0 / 255.0}, {"steps", 5}, {"alpha", 0.0}, {"kappa", 0.0}}},
      {"defense_loss", {{"kind", "mse"}, {"l1_weight", 1.0}, {"ssim_weight", 1.0}}},
      {"seg_input", "clean"},
      {"ama_variant", "independent_descent"},
      {"ama_epsilon", nullptr},
      {"seed", 1},
      {"validation_samples", 0},
      {"select_best", true},
  };
}

std::string join(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

bool same_kind(const Json& a, const Json& b) {
  if (a.is_number() && b.is_number()) {
    // an integer slot does not accept a fraction
    return !(a.is_number_integer() && b.is_number_float());
  }
  return a.type() == b.type();
}

const Json& at(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError("config: missing key " + join(where, key));
  return j.at(key);
}

template <typename T>
T get(const Json& j, const char* key, const std::string& where) {
  try {
    return at(j, key, where).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + join(where, key) + ": " + e.what());
  }
}

int get_int(const Json& j, const char* key, const std::string& where, int lo) {
  const auto v = get<long long>(j, key, where);
  if (v < lo || v > 1000000000LL)
    throw ConfigError("config: " + join(where, key) + " must be >= " + std::to_string(lo));
  return static_cast<int>(v);
}

template <typename F>
auto wrap(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config: " + where + ": " + e.what());
  }
}

}  // namespace

Json default_config() {
  Json grid = Json::array();
  for (double eps : {4.0 / 255.0, 8.0 / 255.0}) {
    for (int k : {3, 5, 10}) grid.push_back({{"method", "bim"}, {"epsilon", eps}, {"steps", k}});
    grid.push_back({{"method", "pgd"}, {"epsilon", eps}, {"steps", 10}});
    grid.push_back({{"method", "cw"}, {"epsilon", eps}, {"steps", 10}});
  }
  Json cfg{
      {"output_root", "runs"},
      {"run_name", "default"},
      {"threads", 0},
      {"data",
       {{"train_samples", 2000},
        {"val_samples", 100},
        {"test_samples", 200},
        {"val_seed_offset", 500000},
        {"test_seed_offset", 1000000},
        {"scene",
         {{"height", 64},
          {"width", 64},
          {"num_classes", 5},
          {"shapes_per_image", 4},
          {"background_noise_amp", 0.08},
          {"seed", 1}}},
        {"rain",
         {{"density", 0.05},
          {"streak_length", 15},
          {"angle_low", 60.0},
          {"angle_high", 120.0},
          {"intensity", 0.6},
          {"seed", 1}}}}},
      {"models",
       {{"seg", {{"width", 12}, {"seed", 1}}},
        {"derain", {{"channels", 16}, {"blocks", 6}, {"mode", "residual"}, {"seed", 2}}},
        {"alt_seg", {{"width", 16}, {"seed", 3}}}}},
      {"train",
       {{"pretrain_seg", train_section(4, "sgd_momentum", 1e-2, "cosine")},
        {"pretrain_derain", train_section(4, "adam", 1e-3, "cosine")},
        {"at", train_section(1, "sgd_momentum", 1e-3, "constant")},
        {"pearl", train_section(1, "adam", 1e-4, "constant")},
        {"pearl_ama", train_section(1, "adam", 1e-4, "constant")},
        {"alt_seg", train_section(3, "sgd_momentum", 1e-2, "cosine")}}},
      {"eval",
       {{"pipelines", {"seg", "robust_seg", "derain_seg", "nat", "pearl", "pearl_ama"}},
        {"cross_model_pipelines", {"derain_seg", "pearl", "pearl_ama"}},
        {"seeds", {0, 1, 2}},
        {"attack_through_derain", false},
        {"batch_size", 20},
        {"include_clean", true},
        {"grid", grid},
        {"cross_model", true},
        {"per_class", true},
        {"qualitative_samples", 4}}},
  };
  cfg["train"]["alt_seg"]["seed"] = 7;
  return cfg;
}

void merge_config(Json& base, const Json& overlay, const std::string& where) {
  if (!overlay.is_object()) throw ConfigError("config: " + (where.empty() ? "root" : where) + " must be an object");
  for (const auto& [key, value] : overlay.items()) {
    const auto path = join(where, key);
    if (!base.contains(key)) throw ConfigError("config: unknown key " + path);
    Json& slot = base[key];
    if (slot.is_object()) {
      merge_config(slot, value, path);
    } else if (slot.is_null()) {
      // optional numbers
      if (!(value.is_null() || value.is_number())) throw ConfigError("config: " + path + " must be a number or null");
      slot = value;
    } else if (slot.is_array()) {
      if (!value.is_array()) throw ConfigError("config: " + path + " must be an array");
      slot = value;
    } else {
      if (!same_kind(slot, value))
        throw ConfigError("config: " + path + " expects " + std::string(slot.type_name()) + ", got " +
                          std::string(value.type_name()));
      slot = value;
    }
  }
}

void apply_override(Json& config, std::string_view path, std::string_view value) {
  if (path.empty()) throw ConfigError("config: empty override key");
  Json overlay;
  Json* cur = &overlay;
  std::string key;
  std::stringstream ss{std::string(path)};
  std::vector<std::string> parts;
  while (std::getline(ss, key, '.')) {
    if (key.empty()) throw ConfigError("config: malformed override key '" + std::string(path) + "'");
    parts.push_back(key);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) cur = &(*cur)[parts[i]];
  Json v = Json::parse(value, nullptr, false);
  if (v.is_discarded()) v = std::string(value);
  (*cur)[parts.back()] = v;
  merge_config(config, overlay);
}

Json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  try {
    return Json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
}

Json resolve_config(const std::filesystem::path* file, const std::vector<std::string>& overrides,
                    bool use_environment) {
  Json cfg = default_config();
  if (file) merge_config(cfg, load_config_file(*file));
  if (use_environment)
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) cfg["output_root"] = root;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("config: override '" + o + "' is not key=value");
    apply_override(cfg, std::string_view(o).substr(0, eq), std::string_view(o).substr(eq + 1));
  }
  parse_run_config(cfg);
  return cfg;
}

namespace {

Dataset split(const DataSpec& d, int n, std::uint64_t offset) {
  SceneParams s = d.scene;
  RainParams r = d.rain;
  s.seed += offset;
  r.seed += offset;
  return make_dataset(s, r, n);
}

}  // namespace

Dataset DataSpec::make_train() const { return split(*this, train_samples, 0); }
Dataset DataSpec::make_val() const { return split(*this, val_samples, val_seed_offset); }
Dataset DataSpec::make_test() const { return split(*this, test_samples, test_seed_offset); }

AttackSpec parse_attack_spec(const Json& j, const std::string& where) {
  return wrap(where, [&] {
    if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
    for (const auto& [k, v] : j.items())
      if (k != "method" && k != "epsilon" && k != "steps" && k != "alpha" && k != "kappa")
        throw ConfigError("config: unknown key " + join(where, k));
    AttackSpec s;
    s.method = parse_attack_method(get<std::string>(j, "method", where));
    s.epsilon = static_cast<float>(get<double>(j, "epsilon", where));
    s.steps = get_int(j, "steps", where, 1);
    if (j.contains("alpha")) s.alpha = static_cast<float>(get<double>(j, "alpha", where));
    if (j.contains("kappa")) s.kappa = static_cast<float>(get<double>(j, "kappa", where));
    if (s.method == AttackMethod::pgd) s.random_init = true;
    s.validate();
    return s;
  });
}

TrainConfig parse_train_config(const Json& j, const std::string& where) {
  return wrap(where, [&] {
    TrainConfig c;
    c.epochs = get_int(j, "epochs", where, 0);
    c.batch_size = get_int(j, "batch_size", where, 1);
    const auto o = join(where, "optimizer");
    const Json& oj = at(j, "optimizer", where);
    c.optimizer.kind = parse_optimizer(get<std::string>(oj, "kind", o));
    c.optimizer.learning_rate = get<double>(oj, "learning_rate", o);
    c.optimizer.momentum = get<double>(oj, "momentum", o);
    c.optimizer.beta1 = get<double>(oj, "beta1", o);
    c.optimizer.beta2 = get<double>(oj, "beta2", o);
    c.optimizer.eps = get<double>(oj, "eps", o);
    c.optimizer.weight_decay = get<double>(oj, "weight_decay", o);
    const auto sched = get<std::string>(j, "lr_schedule", where);
    if (sched == "constant")
      c.lr_schedule = LrSchedule::constant;
    else if (sched == "cosine")
      c.lr_schedule = LrSchedule::cosine;
    else
      throw ConfigError("config: " + join(where, "lr_schedule") + ": unknown schedule '" + sched + "'");
    c.train_attack = parse_attack_spec(at(j, "attack", where), join(where, "attack"));
    const auto d = join(where, "defense_loss");
    const Json& dj = at(j, "defense_loss", where);
    c.defense_loss.kind = parse_defense_loss(get<std::string>(dj, "kind", d));
    c.defense_loss.l1_weight = get<double>(dj, "l1_weight", d);
    c.defense_loss.ssim_weight = get<double>(dj, "ssim_weight", d);
    const auto in = get<std::string>(j, "seg_input", where);
    if (in == "clean")
      c.seg_input = SegInput::clean;
    else if (in == "rainy")
      c.seg_input = SegInput::rainy;
    else
      throw ConfigError("config: " + join(where, "seg_input") + ": expected clean or rainy");
    c.ama_variant = parse_ama_variant(get<std::string>(j, "ama_variant", where));
    if (const Json& ae = at(j, "ama_epsilon", where); !ae.is_null()) c.ama_epsilon = ae.get<float>();
    c.seed = get<std::uint64_t>(j, "seed", where);
    c.validation_samples = get_int(j, "validation_samples", where, 0);
    c.select_best = get<bool>(j, "select_best", where);
    c.validate();
    return c;
  });
}

RunConfig parse_run_config(const Json& j) {
  RunConfig rc;
  rc.output_root = get<std::string>(j, "output_root", "");
  rc.run_name = get<std::string>(j, "run_name", "");
  if (rc.run_name.empty() || rc.run_name.find('/') != std::string::npos)
    throw ConfigError("config: run_name must be a non-empty single path component");
  rc.threads = get_int(j, "threads", "", 0);

  const Json& d = at(j, "data", "");
  rc.data.train_samples = get_int(d, "train_samples", "data", 1);
  rc.data.val_samples = get_int(d, "val_samples", "data", 1);
  rc.data.test_samples = get_int(d, "test_samples", "data", 1);
  rc.data.val_seed_offset = get<std::uint64_t>(d, "val_seed_offset", "data");
  rc.data.test_seed_offset = get<std::uint64_t>(d, "test_seed_offset", "data");
  const Json& s = at(d, "scene", "data");
  auto& sc = rc.data.scene;
  sc.height = get_int(s, "height", "data.scene", 1);
  sc.width = get_int(s, "width", "data.scene", 1);
  sc.num_classes = get_int(s, "num_classes", "data.scene", 2);
  sc.shapes_per_image = get_int(s, "shapes_per_image", "data.scene", 0);
  sc.background_noise_amp = get<double>(s, "background_noise_amp", "data.scene");
  sc.seed = get<std::uint64_t>(s, "seed", "data.scene");
  const Json& r = at(d, "rain", "data");
  auto& rp = rc.data.rain;
  rp.density = get<double>(r, "density", "data.rain");
  rp.streak_length = get_int(r, "streak_length", "data.rain", 0);
  rp.angle_low = get<double>(r, "angle_low", "data.rain");
  rp.angle_high = get<double>(r, "angle_high", "data.rain");
  rp.intensity = get<double>(r, "intensity", "data.rain");
  rp.seed = get<std::uint64_t>(r, "seed", "data.rain");
  wrap("data.scene", [&] { sc.validate(); return 0; });
  wrap("data.rain", [&] { rp.validate(); return 0; });
  if (sc.height % 8 != 0 || sc.width % 8 != 0)
    throw ConfigError("config: data.scene height and width must be multiples of 8");

  const Json& m = at(j, "models", "");
  const Json& ms = at(m, "seg", "models");
  rc.models.seg = SegDescriptor{3, sc.num_classes, get_int(ms, "width", "models.seg", 1)};
  rc.models.seg_seed = get<std::uint64_t>(ms, "seed", "models.seg");
  const Json& md = at(m, "derain", "models");
  rc.models.derain.channels = get_int(md, "channels", "models.derain", 1);
  rc.models.derain.blocks = get_int(md, "blocks", "models.derain", 0);
  const auto mode = get<std::string>(md, "mode", "models.derain");
  if (mode == "residual")
    rc.models.derain.mode = DerainMode::residual;
  else if (mode == "direct")
    rc.models.derain.mode = DerainMode::direct;
  else
    throw ConfigError("config: models.derain.mode: expected residual or direct");
  rc.models.derain_seed = get<std::uint64_t>(md, "seed", "models.derain");
  const Json& ma = at(m, "alt_seg", "models");
  rc.models.alt_seg = SegDescriptor{3, sc.num_classes, get_int(ma, "width", "models.alt_seg", 1)};
  rc.models.alt_seg_seed = get<std::uint64_t>(ma, "seed", "models.alt_seg");

  const Json& t = at(j, "train", "");
  rc.pretrain_seg = parse_train_config(at(t, "pretrain_seg", "train"), "train.pretrain_seg");
  rc.pretrain_derain = parse_train_config(at(t, "pretrain_derain", "train"), "train.pretrain_derain");
  rc.at = parse_train_config(at(t, "at", "train"), "train.at");
  rc.pearl = parse_train_config(at(t, "pearl", "train"), "train.pearl");
  rc.pearl_ama = parse_train_config(at(t, "pearl_ama", "train"), "train.pearl_ama");
  rc.pearl_ama.ama_enabled = true;
  rc.alt_seg = parse_train_config(at(t, "alt_seg", "train"), "train.alt_seg");

  const Json& e = at(j, "eval", "");
  auto& es = rc.eval;
  es.options.seeds = get<std::vector<std::uint64_t>>(e, "seeds", "eval");
  if (es.options.seeds.empty()) throw ConfigError("config: eval.seeds must not be empty");
  for (const char* key : {"pipelines", "cross_model_pipelines"}) {
    auto names = get<std::vector<std::string>>(e, key, "eval");
    for (const auto& n : names)
      if (std::find(kPipelineNames.begin(), kPipelineNames.end(), n) == kPipelineNames.end())
        throw ConfigError("config: eval." + std::string(key) + ": unknown pipeline '" + n + "'");
    for (std::size_t i = 0; i < names.size(); ++i)
      for (std::size_t k = 0; k < i; ++k)
        if (names[i] == names[k])
          throw ConfigError("config: eval." + std::string(key) + ": duplicate pipeline '" + names[i] + "'");
    (std::string(key) == "pipelines" ? es.pipelines : es.cross_model_pipelines) = std::move(names);
  }
  if (es.pipelines.empty()) throw ConfigError("config: eval.pipelines must not be empty");
  es.options.attack_through_derain = get<bool>(e, "attack_through_derain", "eval");
  es.options.batch_size = get_int(e, "batch_size", "eval", 1);
  if (get<bool>(e, "include_clean", "eval")) es.grid.push_back(GridCell::none());
  const Json& g = at(e, "grid", "eval");
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto w = "eval.grid[" + std::to_string(i) + "]";
    es.grid.push_back(GridCell::with(parse_attack_spec(g[i], w)));
  }
  if (es.grid.empty()) throw ConfigError("config: eval grid is empty");
  es.cross_model = get<bool>(e, "cross_model", "eval");
  es.per_class = get<bool>(e, "per_class", "eval");
  es.qualitative_samples = get_int(e, "qualitative_samples", "eval", 0);
  return rc;
}

}  // namespace rainshield

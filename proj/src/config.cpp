#include "loopflow/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "loopflow/errors.hpp"

namespace loopflow {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key));
}

double to_double(std::string_view key, std::string_view value) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || p != value.data() + value.size()) bad_value(key, value);
  return v;
}

template <class Int>
Int to_int(std::string_view key, std::string_view value) {
  Int v{};
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || p != value.data() + value.size()) bad_value(key, value);
  return v;
}

struct Field {
  std::string_view key;
  std::function<std::string()> get;
  std::function<void(std::string_view)> set;
};

template <class Enum>
Field enum_field(std::string_view key, Enum& target,
                 std::vector<std::pair<std::string_view, Enum>> names) {
  return Field{key,
               [&target, names] {
                 for (const auto& [n, e] : names) {
                   if (e == target) return std::string(n);
                 }
                 return std::string("?");
               },
               [&target, names, key](std::string_view v) {
                 for (const auto& [n, e] : names) {
                   if (n == v) {
                     target = e;
                     return;
                   }
                 }
                 bad_value(key, v);
               }};
}

Field double_field(std::string_view key, double& target) {
  return Field{key, [&target] { return format_double(target); },
               [&target, key](std::string_view v) { target = to_double(key, v); }};
}

template <class Int>
Field int_field(std::string_view key, Int& target) {
  return Field{key, [&target] { return std::to_string(target); },
               [&target, key](std::string_view v) { target = to_int<Int>(key, v); }};
}

std::vector<Field> fields_of(RunConfig& c) {
  std::vector<Field> f;
  f.push_back(int_field("steps", c.steps));
  f.push_back(double_field("beta", c.beta));
  f.push_back(double_field("g_sq", c.g_sq));
  f.push_back(double_field("annealing", c.annealing));
  f.push_back(double_field("zeta", c.zeta));
  f.push_back(double_field("gamma", c.gamma));
  f.push_back(enum_field<GuidanceSchedule>(
      "guidance_schedule", c.guidance_schedule,
      {{"constant", GuidanceSchedule::Constant}, {"dt", GuidanceSchedule::Dt}}));
  f.push_back(enum_field<Standpoint>("standpoint", c.standpoint,
                                     {{"prior", Standpoint::Prior}, {"state", Standpoint::State}}));
  f.push_back(double_field("eps_t", c.eps_t));
  f.push_back(double_field("k_alpha", c.k_alpha));
  f.push_back(Field{"omega",
                    [&c] {
                      std::string s;
                      for (std::size_t i = 0; i < c.omega.size(); ++i) {
                        if (i) s += ",";
                        s += format_double(c.omega[i]);
                      }
                      return s;
                    },
                    [&c](std::string_view v) {
                      std::array<double, 4> w{};
                      std::size_t i = 0;
                      while (true) {
                        const auto comma = v.find(',');
                        if (i == w.size()) bad_value("omega", v);
                        w[i++] = to_double("omega", trim(v.substr(0, comma)));
                        if (comma == std::string_view::npos) break;
                        v.remove_prefix(comma + 1);
                      }
                      if (i == 1) w.fill(w[0]);
                      else if (i != w.size()) bad_value("omega", v);
                      c.omega = w;
                    }});
  f.push_back(double_field("lambda", c.lambda));
  f.push_back(double_field("lr", c.lr));
  f.push_back(double_field("weight_decay", c.weight_decay));
  f.push_back(int_field("epochs", c.epochs));
  f.push_back(int_field("batch_size", c.batch_size));
  f.push_back(enum_field<AuxLossMode>(
      "aux_loss", c.aux_loss,
      {{"all_pairs", AuxLossMode::AllPairs}, {"adjacent_ca", AuxLossMode::AdjacentCa}}));
  f.push_back(enum_field<LossKind>(
      "loss", c.loss, {{"fm", LossKind::FlowMatching}, {"regression", LossKind::Regression}}));
  f.push_back(int_field("hidden", c.hidden));
  f.push_back(int_field("head_hidden", c.head_hidden));
  f.push_back(int_field("rounds", c.rounds));
  f.push_back(int_field("k_neighbors", c.k_neighbors));
  f.push_back(double_field("sigma_x", c.sigma_x));
  f.push_back(double_field("sigma_r", c.sigma_r));
  f.push_back(int_field("seed", c.seed));
  return f;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

void RunConfig::set(std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  for (Field& f : fields_of(*this)) {
    if (f.key == key) {
      f.set(value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::apply_text(std::string_view text) {
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view v = line;
    if (const auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
    v = trim(v);
    if (v.empty()) continue;
    const auto eq = v.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    try {
      set(v.substr(0, eq), v.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str());
}

void RunConfig::apply_overrides(const std::vector<std::string>& assignments) {
  for (const std::string& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "' is not key=value");
    set(std::string_view(a).substr(0, eq), std::string_view(a).substr(eq + 1));
  }
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Field& f : fields_of(const_cast<RunConfig&>(*this))) {
    out.emplace_back(std::string(f.key), f.get());
  }
  return out;
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& [k, v] : entries()) s += k + "=" + v + "\n";
  return s;
}

SamplerConfig RunConfig::sampler() const {
  SamplerConfig s;
  s.steps = steps;
  s.guidance_scale_sq = g_sq;
  s.beta = beta;
  s.annealing = annealing;
  s.zeta = zeta;
  s.gamma = gamma;
  s.seed = seed;
  s.eps_t = eps_t;
  s.schedule = guidance_schedule;
  s.standpoint = standpoint;
  return s;
}

EnergyParams RunConfig::energy() const {
  EnergyParams e;
  e.k_alpha = k_alpha;
  e.omega = omega;
  return e;
}

TrainConfig RunConfig::training() const {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.lambda = lambda;
  t.gamma = gamma;
  t.eps_t = eps_t;
  t.aux = aux_loss;
  t.loss = loss;
  t.standpoint = standpoint;
  t.adam.lr = lr;
  t.adam.weight_decay = weight_decay;
  t.seed = seed;
  return t;
}

Architecture RunConfig::architecture() const {
  return Architecture{hidden, head_hidden, rounds, k_neighbors};
}

NoiseSpec RunConfig::noise() const { return NoiseSpec{sigma_x, sigma_r, seed}; }

void RunConfig::validate() const {
  sampler().validate();
  energy().validate();
  training().validate();
  if (hidden < 1 || head_hidden < 1 || rounds < 0 || k_neighbors < 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (!(sigma_x >= 0) || !(sigma_r >= 0)) throw ConfigError("noise scales must be non-negative");
}

}  // namespace loopflow

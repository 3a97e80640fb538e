#include "snf/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace snf {

namespace {

[[noreturn]] void fail(int line, const std::string& msg) {
  throw std::invalid_argument("config line " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& v, int line) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    fail(line, "expected a number, got '" + v + "'");
  }
}

int parse_int(const std::string& v, int line) {
  const double d = parse_double(v, line);
  const int i = static_cast<int>(d);
  if (static_cast<double>(i) != d) fail(line, "expected an integer, got '" + v + "'");
  return i;
}

std::uint64_t parse_u64(const std::string& v, int line) {
  try {
    std::size_t pos = 0;
    const std::uint64_t u = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return u;
  } catch (...) {
    fail(line, "expected an unsigned integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, int line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(line, "expected true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& v, int line) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(trim(item), line));
  if (out.empty()) fail(line, "expected a comma-separated integer list");
  return out;
}

LayerConfig parse_layer(const std::string& value, int line) {
  std::stringstream ss(value);
  std::string kind;
  ss >> kind;
  LayerConfig layer;
  if (kind == "det")
    layer.kind = LayerConfig::Kind::kDet;
  else if (kind == "langevin")
    layer.kind = LayerConfig::Kind::kLangevin;
  else if (kind == "mala")
    layer.kind = LayerConfig::Kind::kMala;
  else if (kind == "mh")
    layer.kind = LayerConfig::Kind::kMhRandomWalk;
  else
    fail(line, "unknown layer kind '" + kind + "' (det|langevin|mala|mh)");

  const bool det = layer.kind == LayerConfig::Kind::kDet;
  std::string token;
  while (ss >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) fail(line, "layer option '" + token + "' is not key=value");
    const std::string key = token.substr(0, eq);
    const std::string val = token.substr(eq + 1);
    if (det && key == "blocks")
      layer.blocks = parse_int(val, line);
    else if (det && key == "hidden")
      layer.hidden = parse_int_list(val, line);
    else if (det && key == "clamp")
      layer.clamp = parse_double(val, line);
    else if (!det && key == "steps")
      layer.steps = parse_int(val, line);
    else if (!det && key == "t")
      layer.interp_t = parse_int(val, line);
    else if (layer.kind == LayerConfig::Kind::kMhRandomWalk && key == "sigma")
      layer.sigma = parse_double(val, line);
    else if ((layer.kind == LayerConfig::Kind::kLangevin ||
              layer.kind == LayerConfig::Kind::kMala) &&
             key == "a1")
      layer.a1 = parse_double(val, line);
    else if ((layer.kind == LayerConfig::Kind::kLangevin ||
              layer.kind == LayerConfig::Kind::kMala) &&
             key == "a2sq")
      layer.a2sq = parse_double(val, line);
    else
      fail(line, "unknown option '" + key + "' for layer kind '" + kind + "'");
  }
  return layer;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("config: " + msg);
  };
  require(dim_x >= 1, "dim_x must be positive");
  require(dim_y >= 1, "dim_y must be positive");
  if (problem_type == ProblemType::kLinearGaussian) {
    require(components >= 1, "components must be positive");
    require(prior_sigma2 > 0.0, "prior_sigma2 must be positive");
    require(a_scale >= 0.0, "a_scale must be non-negative");
    require(noise_b2 > 0.0, "noise_b2 must be positive");
  } else {
    require(noise_a > 0.0 && noise_b > 0.0, "noise_a, noise_b must be positive");
    require(prior_alpha > 0.0, "prior_alpha must be positive");
    require(surrogate_samples > 1, "surrogate_samples must exceed 1");
    require(surrogate_steps >= 0 && surrogate_batch >= 1 && surrogate_lr > 0.0,
            "bad surrogate fit settings");
  }
  require(!layers.empty(), "chain needs at least one layer");
  const int total = resolved_interp_total();
  require(total > 0, "interp_total must be positive");
  for (const LayerConfig& layer : layers) {
    if (layer.kind == LayerConfig::Kind::kDet) {
      require(layer.blocks >= 1, "det layer needs blocks >= 1");
      require(!layer.hidden.empty(), "det layer needs hidden sizes");
      require(layer.clamp > 0.0, "det layer clamp must be positive");
    } else {
      require(layer.steps >= 0, "stochastic layer steps must be >= 0");
      require(layer.interp_t >= 0 && layer.interp_t <= total,
              "stochastic layer needs an explicit interpolation index t in [0, T]");
      if (layer.kind == LayerConfig::Kind::kMhRandomWalk)
        require(layer.sigma > 0.0, "mh layer sigma must be positive");
      else
        require(layer.a1 > 0.0 && layer.a2sq > 0.0,
                "langevin/mala layer needs positive a1, a2sq");
    }
  }
  require(lambda >= 0.0 && lambda <= 1.0, "lambda must be in [0, 1]");
  require(train_batch >= 1, "train batch must be positive");
  require(train_steps >= 0, "train steps must be non-negative");
  require(lr > 0.0, "lr must be positive");
  require(n_y >= 1, "n_y must be positive");
  require(samples_per_y >= 0, "samples_per_y must be non-negative");
  require(grid_hi > grid_lo, "grid_hi must exceed grid_lo");
  require(grid_res >= 1, "grid_res must be positive");
  require(eval_mh_steps >= 0, "mh_steps must be non-negative");
  require(eval_mh_sigma > 0.0, "mh_sigma must be positive");
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  bool seen_layers = false;
  while (std::getline(ss, raw)) {
    ++line_no;
    std::string line = raw;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "problem" && section != "chain" && section != "train" &&
          section != "eval")
        fail(line_no, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty()) fail(line_no, "empty value for '" + key + "'");

    if (section.empty()) {
      if (key == "seed")
        cfg.seed = parse_u64(value, line_no);
      else
        fail(line_no, "unknown top-level key '" + key + "' (only 'seed')");
    } else if (section == "problem") {
      if (key == "type") {
        if (value == "linear_gaussian")
          cfg.problem_type = ExperimentConfig::ProblemType::kLinearGaussian;
        else if (value == "mixed_noise")
          cfg.problem_type = ExperimentConfig::ProblemType::kMixedNoise;
        else
          fail(line_no, "unknown problem type '" + value + "'");
      } else if (key == "dim_x")
        cfg.dim_x = parse_int(value, line_no);
      else if (key == "dim_y")
        cfg.dim_y = parse_int(value, line_no);
      else if (key == "components")
        cfg.components = parse_int(value, line_no);
      else if (key == "prior_sigma2")
        cfg.prior_sigma2 = parse_double(value, line_no);
      else if (key == "a_scale")
        cfg.a_scale = parse_double(value, line_no);
      else if (key == "noise_b2")
        cfg.noise_b2 = parse_double(value, line_no);
      else if (key == "noise_a")
        cfg.noise_a = parse_double(value, line_no);
      else if (key == "noise_b")
        cfg.noise_b = parse_double(value, line_no);
      else if (key == "prior_alpha")
        cfg.prior_alpha = parse_double(value, line_no);
      else if (key == "true_map_hidden")
        cfg.true_map_hidden = parse_int_list(value, line_no);
      else if (key == "surrogate_hidden")
        cfg.surrogate_hidden = parse_int_list(value, line_no);
      else if (key == "surrogate_samples")
        cfg.surrogate_samples = parse_int(value, line_no);
      else if (key == "surrogate_steps")
        cfg.surrogate_steps = parse_int(value, line_no);
      else if (key == "surrogate_batch")
        cfg.surrogate_batch = parse_int(value, line_no);
      else if (key == "surrogate_lr")
        cfg.surrogate_lr = parse_double(value, line_no);
      else
        fail(line_no, "unknown [problem] key '" + key + "'");
    } else if (section == "chain") {
      if (key == "layer") {
        if (!seen_layers) {
          cfg.layers.clear();
          seen_layers = true;
        }
        cfg.layers.push_back(parse_layer(value, line_no));
      } else if (key == "interp_total") {
        cfg.interp_total = parse_int(value, line_no);
      } else {
        fail(line_no, "unknown [chain] key '" + key + "'");
      }
    } else if (section == "train") {
      if (key == "lambda")
        cfg.lambda = parse_double(value, line_no);
      else if (key == "batch")
        cfg.train_batch = parse_int(value, line_no);
      else if (key == "steps")
        cfg.train_steps = parse_int(value, line_no);
      else if (key == "lr")
        cfg.lr = parse_double(value, line_no);
      else
        fail(line_no, "unknown [train] key '" + key + "'");
    } else {  // eval
      if (key == "metric") {
        if (value == "w1")
          cfg.metric = ExperimentConfig::Metric::kW1;
        else if (value == "binned_kl")
          cfg.metric = ExperimentConfig::Metric::kBinnedKl;
        else
          fail(line_no, "unknown metric '" + value + "'");
      } else if (key == "n_y")
        cfg.n_y = parse_int(value, line_no);
      else if (key == "samples_per_y")
        cfg.samples_per_y = parse_int(value, line_no);
      else if (key == "grid_lo")
        cfg.grid_lo = parse_double(value, line_no);
      else if (key == "grid_hi")
        cfg.grid_hi = parse_double(value, line_no);
      else if (key == "grid_res")
        cfg.grid_res = parse_int(value, line_no);
      else if (key == "mh_steps")
        cfg.eval_mh_steps = parse_int(value, line_no);
      else if (key == "mh_sigma")
        cfg.eval_mh_sigma = parse_double(value, line_no);
      else if (key == "noise_floor")
        cfg.noise_floor = parse_bool(value, line_no);
      else
        fail(line_no, "unknown [eval] key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_config: cannot open " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string resolved_config_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "seed = " << c.seed << "\n\n[problem]\n";
  if (c.problem_type == ExperimentConfig::ProblemType::kLinearGaussian) {
    os << "type = linear_gaussian\n"
       << "dim_x = " << c.dim_x << "\ndim_y = " << c.dim_y << "\n"
       << "components = " << c.components << "\n"
       << "prior_sigma2 = " << fmt(c.prior_sigma2) << "\n"
       << "a_scale = " << fmt(c.a_scale) << "\n"
       << "noise_b2 = " << fmt(c.noise_b2) << "\n";
  } else {
    os << "type = mixed_noise\n"
       << "dim_x = " << c.dim_x << "\ndim_y = " << c.dim_y << "\n"
       << "noise_a = " << fmt(c.noise_a) << "\nnoise_b = " << fmt(c.noise_b) << "\n"
       << "prior_alpha = " << fmt(c.prior_alpha) << "\n"
       << "true_map_hidden = " << join_ints(c.true_map_hidden) << "\n"
       << "surrogate_hidden = " << join_ints(c.surrogate_hidden) << "\n"
       << "surrogate_samples = " << c.surrogate_samples << "\n"
       << "surrogate_steps = " << c.surrogate_steps << "\n"
       << "surrogate_batch = " << c.surrogate_batch << "\n"
       << "surrogate_lr = " << fmt(c.surrogate_lr) << "\n";
  }
  os << "\n[chain]\ninterp_total = " << c.resolved_interp_total() << "\n";
  for (const LayerConfig& l : c.layers) {
    switch (l.kind) {
      case LayerConfig::Kind::kDet:
        os << "layer = det blocks=" << l.blocks << " hidden=" << join_ints(l.hidden)
           << " clamp=" << fmt(l.clamp) << "\n";
        break;
      case LayerConfig::Kind::kLangevin:
        os << "layer = langevin steps=" << l.steps << " a1=" << fmt(l.a1)
           << " a2sq=" << fmt(l.a2sq) << " t=" << l.interp_t << "\n";
        break;
      case LayerConfig::Kind::kMala:
        os << "layer = mala steps=" << l.steps << " a1=" << fmt(l.a1)
           << " a2sq=" << fmt(l.a2sq) << " t=" << l.interp_t << "\n";
        break;
      case LayerConfig::Kind::kMhRandomWalk:
        os << "layer = mh steps=" << l.steps << " sigma=" << fmt(l.sigma)
           << " t=" << l.interp_t << "\n";
        break;
    }
  }
  os << "\n[train]\nlambda = " << fmt(c.lambda) << "\nbatch = " << c.train_batch
     << "\nsteps = " << c.train_steps << "\nlr = " << fmt(c.lr) << "\n";
  os << "\n[eval]\nmetric = "
     << (c.metric == ExperimentConfig::Metric::kW1 ? "w1" : "binned_kl") << "\n"
     << "n_y = " << c.n_y << "\nsamples_per_y = " << c.samples_per_y << "\n"
     << "grid_lo = " << fmt(c.grid_lo) << "\ngrid_hi = " << fmt(c.grid_hi) << "\n"
     << "grid_res = " << c.grid_res << "\nmh_steps = " << c.eval_mh_steps << "\n"
     << "mh_sigma = " << fmt(c.eval_mh_sigma) << "\n"
     << "noise_floor = " << (c.noise_floor ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace snf

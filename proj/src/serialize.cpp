#include "snf/serialize.hpp"

#include <fstream>
#include <stdexcept>
#include <vector>

namespace snf {

namespace {

constexpr std::uint32_t kNetMagic = 0x544e4e53;    // "SNNT"
constexpr std::uint32_t kFlowMagic = 0x574c4653;   // "SFLW"
constexpr std::uint32_t kModelMagic = 0x4d464e53;  // "SNFM"
constexpr std::uint32_t kPathMagic = 0x48544153;   // "SATH"
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void put_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("serialize: truncated stream");
  return v;
}
std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("serialize: truncated stream");
  return v;
}
double get_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("serialize: truncated stream");
  return v;
}

void put_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  put_u32(os, static_cast<std::uint32_t>(m.rows()));
  put_u32(os, static_cast<std::uint32_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Eigen::MatrixXd get_matrix(std::istream& is) {
  const std::uint32_t rows = get_u32(is);
  const std::uint32_t cols = get_u32(is);
  Eigen::MatrixXd m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!is) throw std::runtime_error("serialize: truncated matrix");
  return m;
}

void put_vector(std::ostream& os, const Eigen::VectorXd& v) {
  put_matrix(os, v);
}

Eigen::VectorXd get_vector(std::istream& is) {
  const Eigen::MatrixXd m = get_matrix(is);
  if (m.cols() > 1) throw std::runtime_error("serialize: expected a vector");
  return m.col(0);
}

void expect_magic(std::istream& is, std::uint32_t magic, const char* what) {
  if (get_u32(is) != magic || get_u32(is) != kVersion)
    throw std::runtime_error(std::string("serialize: bad header for ") + what);
}

}  // namespace

void save_net(std::ostream& os, const DenseNet& net) {
  put_u32(os, kNetMagic);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(net.layer_sizes.size()));
  for (int s : net.layer_sizes) put_u32(os, static_cast<std::uint32_t>(s));
  put_u32(os, net.activation == Activation::kTanh ? 0 : 1);
  Eigen::VectorXd params(net.param_count());
  net_get_params(net, params);
  put_vector(os, params);
}

DenseNet load_net(std::istream& is) {
  expect_magic(is, kNetMagic, "DenseNet");
  const std::uint32_t n = get_u32(is);
  std::vector<int> sizes(n);
  for (auto& s : sizes) s = static_cast<int>(get_u32(is));
  const std::uint32_t act = get_u32(is);
  DenseNet net;
  net.layer_sizes = sizes;
  net.activation = act == 0 ? Activation::kTanh : Activation::kIdentity;
  net.weights.resize(n - 1);
  net.biases.resize(n - 1);
  for (std::size_t l = 0; l + 1 < n; ++l) {
    net.weights[l].setZero(sizes[l + 1], sizes[l]);
    net.biases[l].setZero(sizes[l + 1]);
  }
  net_set_params(net, get_vector(is));
  net.validate();
  return net;
}

void save_flow(std::ostream& os, const CouplingFlow& flow) {
  put_u32(os, kFlowMagic);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(flow.dim));
  put_u32(os, static_cast<std::uint32_t>(flow.cond_dim));
  put_u32(os, static_cast<std::uint32_t>(flow.num_blocks()));
  for (const auto& perm : flow.perms)
    for (int i : perm) put_u32(os, static_cast<std::uint32_t>(i));
  for (const auto& b : flow.blocks) {
    put_u32(os, static_cast<std::uint32_t>(b.d1));
    put_f64(os, b.s_clamp);
    save_net(os, b.s2);
    save_net(os, b.t2);
    save_net(os, b.s1);
    save_net(os, b.t1);
  }
}

CouplingFlow load_flow(std::istream& is) {
  expect_magic(is, kFlowMagic, "CouplingFlow");
  CouplingFlow flow;
  flow.dim = static_cast<int>(get_u32(is));
  flow.cond_dim = static_cast<int>(get_u32(is));
  const std::uint32_t blocks = get_u32(is);
  flow.perms.resize(blocks);
  for (auto& perm : flow.perms) {
    perm.resize(flow.dim);
    for (auto& i : perm) i = static_cast<int>(get_u32(is));
  }
  flow.blocks.resize(blocks);
  for (auto& b : flow.blocks) {
    b.d1 = static_cast<int>(get_u32(is));
    b.d2 = flow.dim - b.d1;
    b.cond_dim = flow.cond_dim;
    b.s_clamp = get_f64(is);
    b.s2 = load_net(is);
    b.t2 = load_net(is);
    b.s1 = load_net(is);
    b.t1 = load_net(is);
  }
  flow.validate();
  return flow;
}

void save_problem(std::ostream& os, const InverseProblem& problem) {
  if (const auto* lg = dynamic_cast<const LinearGaussianProblem*>(&problem)) {
    put_u32(os, 1);
    put_matrix(os, lg->a());
    put_f64(os, lg->b2());
    const GaussianMixture& prior = lg->mixture_prior();
    put_u32(os, static_cast<std::uint32_t>(prior.num_components()));
    put_vector(os, prior.weights());
    put_matrix(os, prior.means());
    for (int k = 0; k < prior.num_components(); ++k) put_matrix(os, prior.cov(k));
  } else if (const auto* mn = dynamic_cast<const MixedNoiseProblem*>(&problem)) {
    put_u32(os, 2);
    put_f64(os, mn->noise_a());
    put_f64(os, mn->noise_b());
    put_f64(os, dynamic_cast<const RelaxedUniform&>(mn->prior()).alpha());
    save_net(os, mn->forward_map());
  } else {
    throw std::invalid_argument("save_problem: unknown problem type");
  }
}

std::shared_ptr<InverseProblem> load_problem(std::istream& is) {
  const std::uint32_t tag = get_u32(is);
  if (tag == 1) {
    Eigen::MatrixXd a = get_matrix(is);
    const double b2 = get_f64(is);
    const std::uint32_t k = get_u32(is);
    Eigen::VectorXd w = get_vector(is);
    Eigen::MatrixXd means = get_matrix(is);
    std::vector<Eigen::MatrixXd> covs(k);
    for (auto& c : covs) c = get_matrix(is);
    auto prior = std::make_shared<const GaussianMixture>(w, means, covs);
    return std::make_shared<LinearGaussianProblem>(std::move(a), b2, prior);
  }
  if (tag == 2) {
    const double a = get_f64(is);
    const double b = get_f64(is);
    const double alpha = get_f64(is);
    DenseNet net = load_net(is);
    return std::make_shared<MixedNoiseProblem>(std::move(net), a, b, alpha);
  }
  throw std::runtime_error("load_problem: unknown problem tag");
}

void save_model(const std::string& path, const Chain& chain,
                const InverseProblem& problem) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_model: cannot open " + path);
  put_u32(os, kModelMagic);
  put_u32(os, kVersion);
  save_problem(os, problem);
  put_u32(os, static_cast<std::uint32_t>(chain.dim));
  put_u32(os, static_cast<std::uint32_t>(chain.cond_dim));
  put_u32(os, static_cast<std::uint32_t>(chain.interp_total));
  put_u32(os, static_cast<std::uint32_t>(chain.flows.size()));
  for (const auto& f : chain.flows) save_flow(os, f);
  put_u32(os, static_cast<std::uint32_t>(chain.layers.size()));
  for (const auto& spec : chain.layers) {
    if (const auto* det = std::get_if<DeterministicLayer>(&spec.layer)) {
      put_u32(os, 0);
      put_u32(os, static_cast<std::uint32_t>(det->flow_index));
    } else if (const auto* lang = std::get_if<LangevinLayer>(&spec.layer)) {
      put_u32(os, 1);
      put_u32(os, static_cast<std::uint32_t>(lang->interp_t));
      put_u32(os, static_cast<std::uint32_t>(lang->cfg.n_steps));
      put_f64(os, lang->cfg.a1);
      put_f64(os, lang->cfg.a2);
    } else {
      const auto& mh = std::get<McmcLayer>(spec.layer);
      put_u32(os, mh.cfg.proposal == MhConfig::Proposal::kRandomWalk ? 2 : 3);
      put_u32(os, static_cast<std::uint32_t>(mh.interp_t));
      put_u32(os, static_cast<std::uint32_t>(mh.cfg.n_steps));
      put_f64(os, mh.cfg.sigma);
      put_f64(os, mh.cfg.a1);
      put_f64(os, mh.cfg.a2);
    }
  }
  if (!os) throw std::runtime_error("save_model: write failed for " + path);
}

Model load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_model: cannot open " + path);
  expect_magic(is, kModelMagic, "Model");
  Model model;
  model.problem = load_problem(is);
  Chain& chain = model.chain;
  chain.dim = static_cast<int>(get_u32(is));
  chain.cond_dim = static_cast<int>(get_u32(is));
  chain.interp_total = static_cast<int>(get_u32(is));
  chain.latent = std::make_shared<StandardNormal>(chain.dim);
  if (chain.cond_dim > 0) {
    chain.target_family = std::shared_ptr<const ConditionalDensityFamily>(
        model.problem, &model.problem->posterior_family());
  }
  const std::uint32_t n_flows = get_u32(is);
  chain.flows.reserve(n_flows);
  for (std::uint32_t f = 0; f < n_flows; ++f) chain.flows.push_back(load_flow(is));
  const std::uint32_t n_layers = get_u32(is);
  chain.layers.resize(n_layers);
  for (auto& spec : chain.layers) {
    const std::uint32_t kind = get_u32(is);
    if (kind == 0) {
      DeterministicLayer det;
      det.flow_index = static_cast<int>(get_u32(is));
      spec.layer = det;
    } else if (kind == 1) {
      LangevinLayer lang;
      lang.interp_t = static_cast<int>(get_u32(is));
      lang.cfg.n_steps = static_cast<int>(get_u32(is));
      lang.cfg.a1 = get_f64(is);
      lang.cfg.a2 = get_f64(is);
      spec.layer = lang;
    } else if (kind == 2 || kind == 3) {
      McmcLayer mh;
      mh.cfg.proposal = kind == 2 ? MhConfig::Proposal::kRandomWalk
                                  : MhConfig::Proposal::kMala;
      mh.interp_t = static_cast<int>(get_u32(is));
      mh.cfg.n_steps = static_cast<int>(get_u32(is));
      mh.cfg.sigma = get_f64(is);
      mh.cfg.a1 = get_f64(is);
      mh.cfg.a2 = get_f64(is);
      spec.layer = mh;
    } else {
      throw std::runtime_error("load_model: unknown layer kind");
    }
  }
  chain.validate();
  return model;
}

void save_path_batch(std::ostream& os, const PathBatch& batch) {
  put_u32(os, kPathMagic);
  put_u32(os, kVersion);
  put_u32(os, batch.direction == PathDirection::kForward ? 0 : 1);
  put_u32(os, static_cast<std::uint32_t>(batch.points.size()));
  for (const auto& p : batch.points) put_matrix(os, p);
  put_matrix(os, batch.terms);
  put_matrix(os, batch.cond);
  put_u32(os, static_cast<std::uint32_t>(batch.layers.size()));
  for (const auto& layer : batch.layers) {
    put_u32(os, static_cast<std::uint32_t>(layer.records.size()));
    for (const auto& rec : layer.records) {
      put_matrix(os, rec.xi);
      put_matrix(os, rec.u);
      put_u64(os, rec.accepted.size());
      os.write(reinterpret_cast<const char*>(rec.accepted.data()),
               static_cast<std::streamsize>(rec.accepted.size()));
    }
    put_u32(os, static_cast<std::uint32_t>(layer.substates.size()));
    for (const auto& s : layer.substates) put_matrix(os, s);
  }
}

PathBatch load_path_batch(std::istream& is) {
  expect_magic(is, kPathMagic, "PathBatch");
  PathBatch batch;
  batch.direction = get_u32(is) == 0 ? PathDirection::kForward : PathDirection::kReverse;
  batch.points.resize(get_u32(is));
  for (auto& p : batch.points) p = get_matrix(is);
  batch.terms = get_matrix(is);
  batch.cond = get_matrix(is);
  batch.layers.resize(get_u32(is));
  for (auto& layer : batch.layers) {
    layer.records.resize(get_u32(is));
    for (auto& rec : layer.records) {
      rec.xi = get_matrix(is);
      const Eigen::MatrixXd u = get_matrix(is);
      rec.u = u.rows() > 0 ? Eigen::RowVectorXd(u.row(0)) : Eigen::RowVectorXd();
      rec.accepted.resize(get_u64(is));
      is.read(reinterpret_cast<char*>(rec.accepted.data()),
              static_cast<std::streamsize>(rec.accepted.size()));
      if (!is) throw std::runtime_error("serialize: truncated records");
    }
    layer.substates.resize(get_u32(is));
    for (auto& s : layer.substates) s = get_matrix(is);
  }
  return batch;
}

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("fnv1a_file: cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (is) {
    is.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace snf

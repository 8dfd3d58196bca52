#include "loopflow/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "loopflow/errors.hpp"

namespace loopflow {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr std::string_view kMagic = "LOOPFLOWCKPT";
constexpr std::uint32_t kCheckpointVersion = 1;

MatrixXd tanh_of(const MatrixXd& m) { return m.array().tanh().matrix(); }

// Derivative of tanh given its output.
MatrixXd tanh_grad(const MatrixXd& act, const MatrixXd& upstream) {
  return (upstream.array() * (1.0 - act.array().square())).matrix();
}

Dense make_dense(int in, int out) { return Dense{MatrixXd::Zero(out, in), VectorXd::Zero(out)}; }

void check_shape(const Dense& d, int in, int out, const char* name) {
  if (d.w.rows() != out || d.w.cols() != in || d.b.size() != out) {
    std::ostringstream os;
    os << name << ": expected " << out << "x" << in << ", got " << d.w.rows() << "x"
       << d.w.cols();
    throw ShapeMismatch(os.str());
  }
}

void validate_shapes(const ModelParams& p) {
  const Architecture& a = p.arch;
  check_shape(p.encoder, kResidueFeatureDim, a.hidden, "encoder");
  if (static_cast<int>(p.edge.size()) != a.rounds || static_cast<int>(p.node.size()) != a.rounds) {
    throw ShapeMismatch("message-passing round count does not match architecture");
  }
  for (int l = 0; l < a.rounds; ++l) {
    check_shape(p.edge[l], 2 * a.hidden + kPairFeatureDim, a.hidden, "edge");
    check_shape(p.node[l], 2 * a.hidden, a.hidden, "node");
  }
  check_shape(p.trans_hidden, a.hidden + kTimeEmbeddingDim, a.head_hidden, "trans_hidden");
  check_shape(p.trans_out, a.head_hidden, 3, "trans_out");
  check_shape(p.rot_hidden, a.hidden + kTimeEmbeddingDim, a.head_hidden, "rot_hidden");
  check_shape(p.rot_out, a.head_hidden, 3, "rot_out");
}

ModelParams empty_params(const Architecture& a) {
  ModelParams p;
  p.arch = a;
  p.encoder = make_dense(kResidueFeatureDim, a.hidden);
  for (int l = 0; l < a.rounds; ++l) {
    p.edge.push_back(make_dense(2 * a.hidden + kPairFeatureDim, a.hidden));
    p.node.push_back(make_dense(2 * a.hidden, a.hidden));
  }
  p.trans_hidden = make_dense(a.hidden + kTimeEmbeddingDim, a.head_hidden);
  p.trans_out = make_dense(a.head_hidden, 3);
  p.rot_hidden = make_dense(a.hidden + kTimeEmbeddingDim, a.head_hidden);
  p.rot_out = make_dense(a.head_hidden, 3);
  return p;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), b.size());
}

void write_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), b.size());
}

std::uint64_t read_uint(std::istream& in, int bytes) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), bytes);
  if (!in) throw CheckpointError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

std::size_t ModelParams::num_parameters() const {
  std::size_t n = 0;
  for_each_tensor([&](const auto& t) { n += static_cast<std::size_t>(t.size()); }, *this);
  return n;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for_each_tensor([](auto& t) { t.setZero(); }, z);
  return z;
}

VectorXd time_embedding(double t) {
  VectorXd e(kTimeEmbeddingDim);
  for (int k = 0; k < kTimeEmbeddingDim / 2; ++k) {
    const double w = std::numbers::pi * static_cast<double>(1 << k);
    e[2 * k] = std::sin(w * t);
    e[2 * k + 1] = std::cos(w * t);
  }
  return e;
}

Features featurize(const Structure& current, std::span<const std::size_t> selection, double t,
                   int k_neighbors) {
  const std::size_t n = current.size();
  Features f;
  f.selection.assign(selection.begin(), selection.end());
  f.time = time_embedding(t);
  f.residue = MatrixXd::Zero(kResidueFeatureDim, static_cast<Eigen::Index>(n));

  std::vector<char> selected(n, 0);
  for (std::size_t idx : selection) selected.at(idx) = 1;

  for (std::size_t i = 0; i < n; ++i) {
    const ResidueBackbone& res = current.residue(i);
    auto col = f.residue.col(static_cast<Eigen::Index>(i));
    col[static_cast<int>(res.restype)] = 1.0;
    const std::size_t len = current.chain_length(i);
    int row = kNumAminoAcidTypes;
    col[row++] = len > 1 ? static_cast<double>(current.local_index(i)) / static_cast<double>(len - 1)
                         : 0.0;
    col[row++] = selected[i] ? 1.0 : 0.0;
    col[row++] = std::sin(res.psi);
    col[row++] = std::cos(res.psi);
    col.segment(row, kTimeEmbeddingDim) = f.time;
  }

  // k nearest neighbours by C-alpha distance; ties broken by index.
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max(k_neighbors, 0)),
                                              n > 0 ? n - 1 : 0);
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    const Vec3& xi = current.residue(i).frame.x;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      cand.emplace_back((current.residue(j).frame.x - xi).squaredNorm(), j);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t m = 0; m < k; ++m) {
      f.edge_dst.push_back(static_cast<int>(i));
      f.edge_src.push_back(static_cast<int>(cand[m].second));
    }
  }

  const std::size_t num_edges = f.edge_dst.size();
  f.pair = MatrixXd::Zero(kPairFeatureDim, static_cast<Eigen::Index>(num_edges));
  constexpr double spacing = kRbfMax / (kRbfCount - 1);
  for (std::size_t e = 0; e < num_edges; ++e) {
    const auto i = static_cast<std::size_t>(f.edge_dst[e]);
    const auto j = static_cast<std::size_t>(f.edge_src[e]);
    const Frame& fi = current.residue(i).frame;
    const Vec3 diff = current.residue(j).frame.x - fi.x;
    const double d = diff.norm();
    auto col = f.pair.col(static_cast<Eigen::Index>(e));
    for (int m = 0; m < kRbfCount; ++m) {
      const double z = (d - spacing * m) / spacing;
      col[m] = std::exp(-z * z);
    }
    if (d > 0.0) col.segment<3>(kRbfCount) = fi.r.matrix().transpose() * (diff / d);
    int offset;
    if (current.chain_of(i) == current.chain_of(j)) {
      const auto delta = static_cast<long>(current.local_index(j)) -
                         static_cast<long>(current.local_index(i));
      offset = static_cast<int>(std::clamp<long>(delta, -kOffsetClip, kOffsetClip));
    } else {
      offset = current.chain_of(j) > current.chain_of(i) ? kOffsetClip : -kOffsetClip;
    }
    col[kRbfCount + 3 + offset + kOffsetClip] = 1.0;
  }
  return f;
}

Prediction forward(const ModelParams& params, const Features& features,
                   std::span<const Frame> standpoints, ForwardCache* cache) {
  validate_shapes(params);
  const Architecture& a = params.arch;
  const auto n = static_cast<Eigen::Index>(features.num_residues());
  const auto num_edges = static_cast<Eigen::Index>(features.edge_dst.size());
  const auto s = static_cast<Eigen::Index>(features.selection.size());
  if (features.residue.rows() != kResidueFeatureDim || features.pair.rows() != kPairFeatureDim ||
      features.pair.cols() != num_edges || features.time.size() != kTimeEmbeddingDim) {
    throw ShapeMismatch("feature matrices have unexpected shapes");
  }
  if (standpoints.size() != features.selection.size()) {
    throw ShapeMismatch("one standpoint frame is required per selected residue");
  }
  const int h = a.hidden;

  VectorXd in_degree = VectorXd::Zero(n);
  for (int dst : features.edge_dst) in_degree[dst] += 1.0;

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c = ForwardCache{};
  c.in_degree = in_degree;

  MatrixXd hid = tanh_of((params.encoder.w * features.residue).colwise() + params.encoder.b);
  c.h.push_back(hid);
  for (int l = 0; l < a.rounds; ++l) {
    const Dense& edge = params.edge[l];
    const MatrixXd self_proj = edge.w.leftCols(h) * hid;
    const MatrixXd nbr_proj = edge.w.middleCols(h, h) * hid;
    MatrixXd msg = edge.w.rightCols(kPairFeatureDim) * features.pair;
    for (Eigen::Index e = 0; e < num_edges; ++e) {
      msg.col(e) += self_proj.col(features.edge_dst[e]) + nbr_proj.col(features.edge_src[e]) + edge.b;
    }
    msg = tanh_of(msg);
    MatrixXd agg = MatrixXd::Zero(h, n);
    for (Eigen::Index e = 0; e < num_edges; ++e) agg.col(features.edge_dst[e]) += msg.col(e);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (in_degree[i] > 0.0) agg.col(i) /= in_degree[i];
    }
    const Dense& node = params.node[l];
    MatrixXd upd = node.w.leftCols(h) * hid + node.w.rightCols(h) * agg;
    upd.colwise() += node.b;
    upd = tanh_of(upd);
    hid += upd;
    c.message.push_back(std::move(msg));
    c.agg.push_back(std::move(agg));
    c.update.push_back(std::move(upd));
    c.h.push_back(hid);
  }

  MatrixXd head_in(h + kTimeEmbeddingDim, s);
  for (Eigen::Index k = 0; k < s; ++k) {
    head_in.col(k).head(h) = hid.col(static_cast<Eigen::Index>(features.selection[k]));
    head_in.col(k).tail(kTimeEmbeddingDim) = features.time;
  }
  MatrixXd trans_act = tanh_of((params.trans_hidden.w * head_in).colwise() + params.trans_hidden.b);
  MatrixXd rot_act = tanh_of((params.rot_hidden.w * head_in).colwise() + params.rot_hidden.b);
  const MatrixXd trans_out = (params.trans_out.w * trans_act).colwise() + params.trans_out.b;
  const MatrixXd rot_out = (params.rot_out.w * rot_act).colwise() + params.rot_out.b;

  Prediction pred;
  for (Eigen::Index k = 0; k < s; ++k) {
    const Frame& sp = standpoints[static_cast<std::size_t>(k)];
    const Vec3 tx = trans_out.col(k);
    const Vec3 rv = rot_out.col(k);
    pred.head_x.push_back(tx);
    pred.head_r.push_back(rv);
    pred.x1.push_back(sp.r * tx + sp.x);
    pred.r1.push_back(sp.r * exp_rotvec(rv));
    c.standpoint_r.push_back(sp.r);
  }
  c.head_in = std::move(head_in);
  c.trans_act = std::move(trans_act);
  c.rot_act = std::move(rot_act);
  c.head_r = pred.head_r;
  c.valid = true;
  return pred;
}

ModelParams backward(const ModelParams& params, const Features& features,
                     const ForwardCache& cache, const UpstreamGradient& upstream) {
  if (!cache.valid) throw NotCached("backward() called without a forward cache");
  const Architecture& a = params.arch;
  const int h = a.hidden;
  const auto n = static_cast<Eigen::Index>(features.num_residues());
  const auto num_edges = static_cast<Eigen::Index>(features.edge_dst.size());
  const auto s = static_cast<Eigen::Index>(features.selection.size());
  if (upstream.d_x1.size() != static_cast<std::size_t>(s) ||
      upstream.d_r1.size() != static_cast<std::size_t>(s) ||
      cache.standpoint_r.size() != static_cast<std::size_t>(s)) {
    throw ShapeMismatch("upstream gradient does not match the cached forward pass");
  }
  ModelParams g = params.zeros_like();

  MatrixXd d_trans_out(3, s);
  MatrixXd d_rot_out(3, s);
  for (Eigen::Index k = 0; k < s; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    d_trans_out.col(k) = cache.standpoint_r[ks].matrix().transpose() * upstream.d_x1[ks];
    // r1 = r0 exp(v): exp(v + dv) = exp(v) exp(J_r(v) dv).
    d_rot_out.col(k) = right_jacobian(cache.head_r[ks]).transpose() * upstream.d_r1[ks];
  }

  MatrixXd d_head_in = MatrixXd::Zero(h + kTimeEmbeddingDim, s);
  auto head_backward = [&](const Dense& hidden_layer, const Dense& out_layer, const MatrixXd& act,
                           const MatrixXd& d_out, Dense& g_hidden, Dense& g_out) {
    g_out.w = d_out * act.transpose();
    g_out.b = d_out.rowwise().sum();
    const MatrixXd d_pre = tanh_grad(act, out_layer.w.transpose() * d_out);
    g_hidden.w = d_pre * cache.head_in.transpose();
    g_hidden.b = d_pre.rowwise().sum();
    d_head_in += hidden_layer.w.transpose() * d_pre;
  };
  head_backward(params.trans_hidden, params.trans_out, cache.trans_act, d_trans_out, g.trans_hidden,
                g.trans_out);
  head_backward(params.rot_hidden, params.rot_out, cache.rot_act, d_rot_out, g.rot_hidden,
                g.rot_out);

  MatrixXd d_hid = MatrixXd::Zero(h, n);
  for (Eigen::Index k = 0; k < s; ++k) {
    d_hid.col(static_cast<Eigen::Index>(features.selection[k])) += d_head_in.col(k).head(h);
  }

  for (int l = a.rounds - 1; l >= 0; --l) {
    const MatrixXd& hid = cache.h[l];
    const MatrixXd& msg = cache.message[l];
    const MatrixXd& agg = cache.agg[l];
    const Dense& node = params.node[l];
    const Dense& edge = params.edge[l];

    // h_{l+1} = h_l + tanh(W_node [h_l; agg] + b)
    const MatrixXd d_upd_pre = tanh_grad(cache.update[l], d_hid);
    g.node[l].w.leftCols(h) = d_upd_pre * hid.transpose();
    g.node[l].w.rightCols(h) = d_upd_pre * agg.transpose();
    g.node[l].b = d_upd_pre.rowwise().sum();
    d_hid += node.w.leftCols(h).transpose() * d_upd_pre;
    const MatrixXd d_agg = node.w.rightCols(h).transpose() * d_upd_pre;

    MatrixXd d_msg(h, num_edges);
    for (Eigen::Index e = 0; e < num_edges; ++e) {
      const int dst = features.edge_dst[e];
      d_msg.col(e) = d_agg.col(dst) / cache.in_degree[dst];
    }
    const MatrixXd d_msg_pre = tanh_grad(msg, d_msg);
    MatrixXd d_self = MatrixXd::Zero(h, n);
    MatrixXd d_nbr = MatrixXd::Zero(h, n);
    for (Eigen::Index e = 0; e < num_edges; ++e) {
      d_self.col(features.edge_dst[e]) += d_msg_pre.col(e);
      d_nbr.col(features.edge_src[e]) += d_msg_pre.col(e);
    }
    g.edge[l].w.leftCols(h) = d_self * hid.transpose();
    g.edge[l].w.middleCols(h, h) = d_nbr * hid.transpose();
    g.edge[l].w.rightCols(kPairFeatureDim) = d_msg_pre * features.pair.transpose();
    g.edge[l].b = d_msg_pre.rowwise().sum();
    d_hid += edge.w.leftCols(h).transpose() * d_self + edge.w.middleCols(h, h).transpose() * d_nbr;
  }

  const MatrixXd d_enc_pre = tanh_grad(cache.h[0], d_hid);
  g.encoder.w = d_enc_pre * features.residue.transpose();
  g.encoder.b = d_enc_pre.rowwise().sum();
  return g;
}

VectorFieldSample predicted_vf(const Prediction& pred, const FlowState& state, double eps_t) {
  if (pred.x1.size() != state.frames.size()) {
    throw LengthMismatch("prediction and state sizes differ");
  }
  const double denom = std::max(1.0 - state.t, eps_t);
  VectorFieldSample out;
  for (std::size_t i = 0; i < pred.x1.size(); ++i) {
    out.v_x.push_back((pred.x1[i] - state.frames[i].x) / denom);
    out.v_r.push_back(log_rotation(state.frames[i].r.transpose() * pred.r1[i]) / denom);
  }
  return out;
}

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  if (arch.hidden <= 0 || arch.head_hidden <= 0 || arch.rounds < 0 || arch.k_neighbors < 0) {
    throw ShapeMismatch("architecture dimensions must be positive");
  }
  ModelParams p = empty_params(arch);
  Rng rng(seed);
  auto fill = [&](Dense& d) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d.w.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index j = 0; j < d.w.cols(); ++j) {
      for (Eigen::Index i = 0; i < d.w.rows(); ++i) d.w(i, j) = u(rng);
    }
  };
  fill(p.encoder);
  for (int l = 0; l < arch.rounds; ++l) {
    fill(p.edge[l]);
    fill(p.node[l]);
  }
  fill(p.trans_hidden);
  fill(p.rot_hidden);
  return p;
}

AdamState make_adam_state(const ModelParams& params) {
  return AdamState{0, params.zeros_like(), params.zeros_like()};
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const AdamConfig& cfg) {
  if (!(grads.arch == params.arch) || !(state.m.arch == params.arch)) {
    throw ShapeMismatch("adam_step: parameter, gradient and state shapes differ");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for_each_tensor(
      [&](auto& p, const auto& g, auto& m, auto& v) {
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        const auto m_hat = m.array() / bc1;
        const auto v_hat = v.array() / bc2;
        p.array() -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p.array());
      },
      params, grads, state.m, state.v);
}

void save_checkpoint(const ModelParams& params, std::ostream& out) {
  validate_shapes(params);
  out.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
  write_u32(out, kCheckpointVersion);
  const std::array<std::uint32_t, 7> shape = {
      kResidueFeatureDim, kPairFeatureDim, kTimeEmbeddingDim,
      static_cast<std::uint32_t>(params.arch.hidden),
      static_cast<std::uint32_t>(params.arch.head_hidden),
      static_cast<std::uint32_t>(params.arch.rounds),
      static_cast<std::uint32_t>(params.arch.k_neighbors)};
  write_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto v : shape) write_u32(out, v);
  write_u64(out, params.num_parameters());
  for_each_tensor(
      [&](const auto& t) {
        for (Eigen::Index i = 0; i < t.rows(); ++i) {
          for (Eigen::Index j = 0; j < t.cols(); ++j) {
            write_u64(out, std::bit_cast<std::uint64_t>(static_cast<double>(t(i, j))));
          }
        }
      },
      params);
  if (!out) throw CheckpointError("failed writing checkpoint");
}

ModelParams load_checkpoint(std::istream& in) {
  std::string magic(kMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kMagic) throw CheckpointError("not a loopflow checkpoint (bad magic)");
  const auto version = read_uint(in, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto fields = read_uint(in, 4);
  if (fields != 7) throw CheckpointError("unexpected shape header length");
  std::array<std::uint64_t, 7> shape{};
  for (auto& v : shape) v = read_uint(in, 4);
  if (shape[0] != kResidueFeatureDim || shape[1] != kPairFeatureDim ||
      shape[2] != kTimeEmbeddingDim) {
    throw CheckpointError("checkpoint feature widths do not match this build");
  }
  Architecture arch;
  arch.hidden = static_cast<int>(shape[3]);
  arch.head_hidden = static_cast<int>(shape[4]);
  arch.rounds = static_cast<int>(shape[5]);
  arch.k_neighbors = static_cast<int>(shape[6]);
  if (arch.hidden <= 0 || arch.head_hidden <= 0 || arch.hidden > (1 << 16) ||
      arch.head_hidden > (1 << 16) || arch.rounds > 64) {
    throw CheckpointError("implausible architecture in checkpoint header");
  }
  ModelParams p = empty_params(arch);
  const auto count = read_uint(in, 8);
  if (count != p.num_parameters()) throw CheckpointError("parameter count mismatch");
  for_each_tensor(
      [&](auto& t) {
        for (Eigen::Index i = 0; i < t.rows(); ++i) {
          for (Eigen::Index j = 0; j < t.cols(); ++j) {
            t(i, j) = std::bit_cast<double>(read_uint(in, 8));
          }
        }
      },
      p);
  return p;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  save_checkpoint(params, out);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  return load_checkpoint(in);
}

}  // namespace loopflow

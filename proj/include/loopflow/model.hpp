#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "loopflow/flow.hpp"
#include "loopflow/frames.hpp"

namespace loopflow {

inline constexpr int kRbfCount = 16;
inline constexpr double kRbfMax = 20.0;  // Angstrom
inline constexpr int kOffsetClip = 4;
inline constexpr int kTimeEmbeddingDim = 8;
inline constexpr int kResidueFeatureDim = kNumAminoAcidTypes + 1 + 1 + 2 + kTimeEmbeddingDim;
inline constexpr int kPairFeatureDim = kRbfCount + 3 + (2 * kOffsetClip + 1);
static_assert(kResidueFeatureDim == 33);
static_assert(kPairFeatureDim == 28);

struct Architecture {
  int hidden = 128;
  int head_hidden = 64;
  int rounds = 2;
  int k_neighbors = 8;
  bool operator==(const Architecture&) const = default;
};

struct Dense {
  Eigen::MatrixXd w;
  Eigen::VectorXd b;
};

/// Residue encoder, `rounds` message-passing rounds (edge layer + node
/// update each), and two heads: translation and rotation vector.
struct ModelParams {
  Architecture arch;
  Dense encoder;             // 33 -> hidden
  std::vector<Dense> edge;   // [h_i; h_j; e_ij] (2*hidden + 28) -> hidden
  std::vector<Dense> node;   // [h_i; mean_j m_ij] (2*hidden) -> hidden
  Dense trans_hidden;        // [h_i; time] -> head_hidden
  Dense trans_out;           // head_hidden -> 3
  Dense rot_hidden;
  Dense rot_out;

  std::size_t num_parameters() const;
  /// Same shapes, all zeros.
  ModelParams zeros_like() const;
};

/// Calls f on the matching tensors of every argument, in declaration order
/// (the checkpoint order).
template <class F, class First, class... Rest>
void for_each_tensor(F&& f, First& first, Rest&... rest) {
  f(first.encoder.w, rest.encoder.w...);
  f(first.encoder.b, rest.encoder.b...);
  for (std::size_t l = 0; l < first.edge.size(); ++l) {
    f(first.edge[l].w, rest.edge[l].w...);
    f(first.edge[l].b, rest.edge[l].b...);
    f(first.node[l].w, rest.node[l].w...);
    f(first.node[l].b, rest.node[l].b...);
  }
  f(first.trans_hidden.w, rest.trans_hidden.w...);
  f(first.trans_hidden.b, rest.trans_hidden.b...);
  f(first.trans_out.w, rest.trans_out.w...);
  f(first.trans_out.b, rest.trans_out.b...);
  f(first.rot_hidden.w, rest.rot_hidden.w...);
  f(first.rot_hidden.b, rest.rot_hidden.b...);
  f(first.rot_out.w, rest.rot_out.w...);
  f(first.rot_out.b, rest.rot_out.b...);
}

/// Rigid-invariant inputs for every residue of the structure. Edges run
/// from each residue's k nearest C-alpha neighbours (sender) to it (receiver).
struct Features {
  Eigen::MatrixXd residue;  // kResidueFeatureDim x N
  Eigen::MatrixXd pair;     // kPairFeatureDim x E
  std::vector<int> edge_dst;
  std::vector<int> edge_src;
  Eigen::VectorXd time;     // kTimeEmbeddingDim
  std::vector<std::size_t> selection;

  std::size_t num_residues() const { return static_cast<std::size_t>(residue.cols()); }
};

Eigen::VectorXd time_embedding(double t);

Features featurize(const Structure& current, std::span<const std::size_t> selection, double t,
                   int k_neighbors = 8);

struct Prediction {
  std::vector<Vec3> x1;
  std::vector<Rotation> r1;
  std::vector<Vec3> head_x;  // translation head output, standpoint body frame
  std::vector<Vec3> head_r;  // rotation vector head output
};

/// Intermediate activations kept by forward() for backward().
struct ForwardCache {
  bool valid = false;
  std::vector<Eigen::MatrixXd> h;        // rounds + 1 entries, hidden x N
  std::vector<Eigen::MatrixXd> message;  // per round, hidden x E
  std::vector<Eigen::MatrixXd> agg;      // per round, hidden x N
  std::vector<Eigen::MatrixXd> update;   // per round, hidden x N
  Eigen::VectorXd in_degree;
  Eigen::MatrixXd head_in;               // (hidden + time) x S
  Eigen::MatrixXd trans_act;             // head_hidden x S
  Eigen::MatrixXd rot_act;
  std::vector<Rotation> standpoint_r;
  std::vector<Vec3> head_r;
};

/// x1 = r0 MLP1(h, t) + x0 and r1 = r0 exp(MLP2(h, t)) for each selected
/// residue, with (x0, r0) the standpoint frame. Throws ShapeMismatch.
Prediction forward(const ModelParams& params, const Features& features,
                   std::span<const Frame> standpoints, ForwardCache* cache = nullptr);

/// Loss gradient with respect to the predictions: d_x1 in world
/// coordinates, d_r1 with respect to a body perturbation r1 exp(hat(xi)).
struct UpstreamGradient {
  std::vector<Vec3> d_x1;
  std::vector<Vec3> d_r1;
};

/// Reverse-mode gradient of the loss with respect to every parameter.
/// Throws NotCached when `cache` was not filled by forward().
ModelParams backward(const ModelParams& params, const Features& features,
                     const ForwardCache& cache, const UpstreamGradient& upstream);

/// v_x = (x1_hat - x_t) / max(1-t, eps), v_r = log(r_t^T r1_hat) / max(1-t, eps).
VectorFieldSample predicted_vf(const Prediction& pred, const FlowState& state,
                               double eps_t = kDefaultTimeEps);

/// Fan-in scaled uniform weights, zero biases, zero head output layers.
ModelParams init_params(const Architecture& arch, std::uint64_t seed);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled
};

struct AdamState {
  std::size_t step = 0;
  ModelParams m;
  ModelParams v;
};

AdamState make_adam_state(const ModelParams& params);
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const AdamConfig& cfg);

/// Little-endian binary: magic "LOOPFLOWCKPT", u32 version, u32 field count,
/// u32 shape fields, u64 parameter count, then every tensor in declaration
/// order as row-major float64.
void save_checkpoint(const ModelParams& params, std::ostream& out);
ModelParams load_checkpoint(std::istream& in);
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace loopflow

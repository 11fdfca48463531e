#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace metaopt {

enum class Activation { relu, tanh };

Activation parse_activation(const std::string& name);
std::string activation_name(Activation a);

// One-hidden-layer classifier. Parameters live in a single flat vector laid
// out as [W1 row-major, b1, W2 row-major, b2] so that optimizers can treat
// the net as an opaque coordinate vector.
struct MlpArchitecture {
  int input_dim = 0;
  int hidden_dim = 0;
  int output_dim = 0;
  Activation activation = Activation::relu;

  int param_count() const {
    return hidden_dim * input_dim + hidden_dim + output_dim * hidden_dim + output_dim;
  }
  bool operator==(const MlpArchitecture& o) const {
    return input_dim == o.input_dim && hidden_dim == o.hidden_dim &&
           output_dim == o.output_dim && activation == o.activation;
  }
};

// Coordinates that share one optimizer policy. `kind` distinguishes weight
// matrices from bias vectors; transfer between problems matches on the kind
// sequence, not on sizes.
struct CoordinateGroup {
  std::string name;  // "w1", "b1", "w2", "b2"
  std::string kind;  // "weight" or "bias"
  int begin = 0;     // first flat index
  int end = 0;       // one past last flat index

  int size() const { return end - begin; }
};

struct CoordinateGroupSpec {
  std::vector<CoordinateGroup> groups;

  int num_groups() const { return static_cast<int>(groups.size()); }
  int total() const { return groups.empty() ? 0 : groups.back().end; }
  bool same_layout(const CoordinateGroupSpec& o) const;
  bool same_kinds(const CoordinateGroupSpec& o) const;
};

// The four parameter blocks of the MLP, in flat-vector order.
CoordinateGroupSpec coordinate_groups(const MlpArchitecture& arch);

// Mean softmax cross-entropy over the batch. `batch_inputs` is input_dim x B,
// one column per example. Returns the loss; if `grad` is non-null it receives
// d(loss)/d(params) in the flat layout.
double mlp_loss(const MlpArchitecture& arch, const Eigen::VectorXd& params,
                const Eigen::MatrixXd& batch_inputs,
                const std::vector<std::int32_t>& batch_labels,
                Eigen::VectorXd* grad);

}  // namespace metaopt

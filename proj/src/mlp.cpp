#include "metaopt/mlp.hpp"

#include <cmath>

#include "metaopt/errors.hpp"

namespace metaopt {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;
}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw InvalidArgument("unknown activation '" + name + "' (expected relu or tanh)");
}

std::string activation_name(Activation a) {
  return a == Activation::relu ? "relu" : "tanh";
}

bool CoordinateGroupSpec::same_layout(const CoordinateGroupSpec& o) const {
  if (groups.size() != o.groups.size()) return false;
  for (size_t i = 0; i < groups.size(); ++i)
    if (groups[i].begin != o.groups[i].begin || groups[i].end != o.groups[i].end ||
        groups[i].kind != o.groups[i].kind)
      return false;
  return true;
}

bool CoordinateGroupSpec::same_kinds(const CoordinateGroupSpec& o) const {
  if (groups.size() != o.groups.size()) return false;
  for (size_t i = 0; i < groups.size(); ++i)
    if (groups[i].kind != o.groups[i].kind) return false;
  return true;
}

CoordinateGroupSpec coordinate_groups(const MlpArchitecture& arch) {
  if (arch.input_dim < 1 || arch.hidden_dim < 1 || arch.output_dim < 1)
    throw InvalidArgument("coordinate_groups: architecture dims must be positive");
  CoordinateGroupSpec spec;
  int at = 0;
  auto add = [&](const std::string& name, const std::string& kind, int count) {
    spec.groups.push_back({name, kind, at, at + count});
    at += count;
  };
  add("w1", "weight", arch.hidden_dim * arch.input_dim);
  add("b1", "bias", arch.hidden_dim);
  add("w2", "weight", arch.output_dim * arch.hidden_dim);
  add("b2", "bias", arch.output_dim);
  return spec;
}

double mlp_loss(const MlpArchitecture& arch, const Eigen::VectorXd& params,
                const Eigen::MatrixXd& batch_inputs,
                const std::vector<std::int32_t>& batch_labels,
                Eigen::VectorXd* grad) {
  const int d = arch.input_dim, h = arch.hidden_dim, o = arch.output_dim;
  if (params.size() != arch.param_count())
    throw InvalidArgument("mlp_loss: parameter vector has wrong length");
  if (batch_inputs.rows() != d)
    throw InvalidArgument("mlp_loss: batch input dim mismatch");
  const int B = static_cast<int>(batch_inputs.cols());
  if (B == 0 || static_cast<int>(batch_labels.size()) != B)
    throw InvalidArgument("mlp_loss: batch labels mismatch");
  for (auto l : batch_labels)
    if (l < 0 || l >= o) throw InvalidArgument("mlp_loss: label out of range");

  const double* p = params.data();
  ConstRowMap w1(p, h, d);
  Eigen::Map<const Eigen::VectorXd> b1(p + h * d, h);
  ConstRowMap w2(p + h * d + h, o, h);
  Eigen::Map<const Eigen::VectorXd> b2(p + h * d + h + o * h, o);

  Eigen::MatrixXd z1 = (w1 * batch_inputs).colwise() + b1;
  Eigen::MatrixXd a1;
  if (arch.activation == Activation::relu)
    a1 = z1.array().max(0.0);
  else
    a1 = z1.array().tanh();
  Eigen::MatrixXd z2 = (w2 * a1).colwise() + b2;

  // Stable log-softmax, column-wise.
  Eigen::RowVectorXd zmax = z2.colwise().maxCoeff();
  Eigen::MatrixXd shifted = z2.rowwise() - zmax;
  Eigen::MatrixXd expz = shifted.array().exp();
  Eigen::RowVectorXd denom = expz.colwise().sum();
  double loss = 0.0;
  for (int b = 0; b < B; ++b)
    loss += std::log(denom[b]) - shifted(batch_labels[b], b);
  loss /= B;

  if (grad) {
    Eigen::MatrixXd dz2 = expz.array().rowwise() / denom.array();
    for (int b = 0; b < B; ++b) dz2(batch_labels[b], b) -= 1.0;
    dz2 /= B;

    grad->resize(params.size());
    double* gp = grad->data();
    RowMap gw1(gp, h, d);
    Eigen::Map<Eigen::VectorXd> gb1(gp + h * d, h);
    RowMap gw2(gp + h * d + h, o, h);
    Eigen::Map<Eigen::VectorXd> gb2(gp + h * d + h + o * h, o);

    gw2 = dz2 * a1.transpose();
    gb2 = dz2.rowwise().sum();
    Eigen::MatrixXd da1 = w2.transpose() * dz2;
    Eigen::MatrixXd dz1;
    if (arch.activation == Activation::relu)
      dz1 = (z1.array() > 0.0).cast<double>() * da1.array();
    else
      dz1 = (1.0 - a1.array().square()) * da1.array();
    gw1 = dz1 * batch_inputs.transpose();
    gb1 = dz1.rowwise().sum();
  }
  return loss;
}

}  // namespace metaopt

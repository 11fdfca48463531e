#include "metaopt/policy_train.hpp"

#include <cmath>
#include <limits>

#include "metaopt/errors.hpp"

namespace metaopt {
namespace {

struct GroupGrads {
  Eigen::MatrixXd w_input, w_recur;
  Eigen::VectorXd bias, w_out;
  double b_out = 0.0, out_scale = 0.0;

  void reset(const GroupPolicy& gp) {
    w_input.setZero(gp.w_input.rows(), gp.w_input.cols());
    w_recur.setZero(gp.w_recur.rows(), gp.w_recur.cols());
    bias.setZero(gp.bias.size());
    w_out.setZero(gp.w_out.size());
    b_out = 0.0;
    out_scale = 0.0;
  }
  void scale_accumulate(double m, const GroupGrads& g) {
    w_input = m * w_input + g.w_input;
    w_recur = m * w_recur + g.w_recur;
    bias = m * bias + g.bias;
    w_out = m * w_out + g.w_out;
    b_out = m * b_out + g.b_out;
    out_scale = m * out_scale + g.out_scale;
  }
};

void apply_step(GroupPolicy& gp, const GroupGrads& v, double eta) {
  gp.w_input -= eta * v.w_input;
  gp.w_recur -= eta * v.w_recur;
  gp.bias -= eta * v.bias;
  gp.w_out -= eta * v.w_out;
  gp.b_out -= eta * v.b_out;
  gp.out_scale -= eta * v.out_scale;
}

Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& z) { return 1.0 / (1.0 + (-z).exp()); }

double loss_norm(const GroupTrainingData& data) {
  double scale = 1.0;
  if (data.precision.size() > 0) scale = std::max(1.0, data.precision.mean());
  return 1.0 /
         (static_cast<double>(data.horizon()) * static_cast<double>(data.columns()) * scale);
}

// Forward (and optionally backward) over columns [c0, c0+m) of one group's
// training sequences. Returns the loss contribution of the block.
double chunk_pass(const GroupPolicy& gp, const GroupTrainingData& data, int c0, int m,
                  double inv_norm, GroupGrads* grads) {
  const int T = data.horizon();
  const int H = gp.hidden;

  std::vector<Eigen::ArrayXXd> gi(T), gf(T), gc(T), go(T), cell(T), tc(T);
  std::vector<Eigen::MatrixXd> hidden(T);
  std::vector<Eigen::RowVectorXd> pre(T), mu(T);

  double loss = 0.0;
  Eigen::MatrixXd h_prev = Eigen::MatrixXd::Zero(H, m);
  Eigen::ArrayXXd c_prev = Eigen::ArrayXXd::Zero(H, m);
  for (int t = 0; t < T; ++t) {
    Eigen::MatrixXd z = gp.w_input * data.obs[t].middleCols(c0, m);
    z.noalias() += gp.w_recur * h_prev;
    z.colwise() += gp.bias;
    gi[t] = sigmoid(z.topRows(H).array());
    gf[t] = sigmoid(z.middleRows(H, H).array());
    gc[t] = z.middleRows(2 * H, H).array().tanh();
    go[t] = sigmoid(z.middleRows(3 * H, H).array());
    cell[t] = gf[t] * c_prev + gi[t] * gc[t];
    tc[t] = cell[t].tanh();
    hidden[t] = (go[t] * tc[t]).matrix();
    pre[t] = (gp.w_out.transpose() * hidden[t]).array() + gp.b_out;
    mu[t] = gp.out_scale * pre[t];

    Eigen::RowVectorXd diff = mu[t] - data.target[t].middleCols(c0, m);
    loss += inv_norm * (data.lambda[t] * mu[t].sum() +
                        0.5 * data.precision[t] * diff.squaredNorm());
    h_prev = hidden[t];
    c_prev = cell[t];
  }
  if (!grads) return loss;

  Eigen::MatrixXd dh_carry = Eigen::MatrixXd::Zero(H, m);
  Eigen::ArrayXXd dc_carry = Eigen::ArrayXXd::Zero(H, m);
  for (int t = T - 1; t >= 0; --t) {
    Eigen::RowVectorXd dmu =
        inv_norm * (Eigen::RowVectorXd::Constant(m, data.lambda[t]) +
                    data.precision[t] * (mu[t] - data.target[t].middleCols(c0, m)));
    grads->out_scale += dmu.dot(pre[t]);
    Eigen::RowVectorXd dpre = gp.out_scale * dmu;
    grads->b_out += dpre.sum();
    grads->w_out.noalias() += hidden[t] * dpre.transpose();

    Eigen::MatrixXd dh = gp.w_out * dpre;  // outer product H x m
    dh += dh_carry;
    Eigen::ArrayXXd dho = dh.array();
    Eigen::ArrayXXd d_go = dho * tc[t];
    Eigen::ArrayXXd dc = dc_carry + dho * go[t] * (1.0 - tc[t].square());
    Eigen::ArrayXXd d_gi = dc * gc[t];
    Eigen::ArrayXXd d_gc = dc * gi[t];
    Eigen::ArrayXXd d_gf = t > 0 ? Eigen::ArrayXXd(dc * cell[t - 1])
                                 : Eigen::ArrayXXd(Eigen::ArrayXXd::Zero(H, m));
    dc_carry = dc * gf[t];

    Eigen::MatrixXd dz(4 * H, m);
    dz.topRows(H) = (d_gi * gi[t] * (1.0 - gi[t])).matrix();
    dz.middleRows(H, H) = (d_gf * gf[t] * (1.0 - gf[t])).matrix();
    dz.middleRows(2 * H, H) = (d_gc * (1.0 - gc[t].square())).matrix();
    dz.middleRows(3 * H, H) = (d_go * go[t] * (1.0 - go[t])).matrix();

    grads->w_input.noalias() += dz * data.obs[t].middleCols(c0, m).transpose();
    if (t > 0) grads->w_recur.noalias() += dz * hidden[t - 1].transpose();
    grads->bias += dz.rowwise().sum();
    dh_carry.noalias() = gp.w_recur.transpose() * dz;
  }
  return loss;
}

double full_pass(const GroupPolicy& gp, const GroupTrainingData& data, int chunk,
                 GroupGrads* grads) {
  const int M = data.columns();
  double inv_norm = loss_norm(data);
  double loss = 0.0;
  for (int c0 = 0; c0 < M; c0 += chunk)
    loss += chunk_pass(gp, data, c0, std::min(chunk, M - c0), inv_norm, grads);
  return loss;
}

void validate_group(const GroupPolicy& gp, const GroupTrainingData& data) {
  const int T = data.horizon();
  if (static_cast<int>(data.target.size()) != T || data.precision.size() != T ||
      data.lambda.size() != T || data.nu.size() != T || data.g_var.size() != T)
    throw InvalidArgument("supervised_update: per-timestep arrays disagree on horizon");
  for (int t = 0; t < T; ++t) {
    if (data.obs[t].rows() != kObsDim || data.obs[t].cols() != data.columns() ||
        data.target[t].cols() != data.columns())
      throw InvalidArgument("supervised_update: observation/target shape mismatch");
    if (data.precision[t] < 0)
      throw InvalidArgument("supervised_update: negative precision at t=" +
                            std::to_string(t));
  }
  (void)gp;
}

}  // namespace

std::vector<Eigen::RowVectorXd> training_forward_means(const GroupPolicy& gp,
                                                       const GroupTrainingData& data) {
  const int T = data.horizon();
  const int M = data.columns();
  const int H = gp.hidden;
  std::vector<Eigen::RowVectorXd> out(T);
  Eigen::MatrixXd h_prev = Eigen::MatrixXd::Zero(H, M);
  Eigen::ArrayXXd c_prev = Eigen::ArrayXXd::Zero(H, M);
  for (int t = 0; t < T; ++t) {
    Eigen::MatrixXd z = gp.w_input * data.obs[t];
    z.noalias() += gp.w_recur * h_prev;
    z.colwise() += gp.bias;
    Eigen::ArrayXXd gi = sigmoid(z.topRows(H).array());
    Eigen::ArrayXXd gf = sigmoid(z.middleRows(H, H).array());
    Eigen::ArrayXXd gc = z.middleRows(2 * H, H).array().tanh();
    Eigen::ArrayXXd go = sigmoid(z.middleRows(3 * H, H).array());
    Eigen::ArrayXXd cell = gf * c_prev + gi * gc;
    Eigen::MatrixXd h = (go * cell.tanh()).matrix();
    out[t] = gp.out_scale * ((gp.w_out.transpose() * h).array() + gp.b_out).matrix();
    h_prev = h;
    c_prev = cell;
  }
  return out;
}

double supervised_loss(const GroupPolicy& gp, const GroupTrainingData& data) {
  if (data.horizon() == 0 || data.columns() == 0) return 0.0;
  return full_pass(gp, data, data.columns(), nullptr);
}

PolicyParams supervised_update(const PolicyParams& params, const PolicyTrainingSet& data,
                               const SupervisedConfig& config, SupervisedReport* report) {
  if (static_cast<int>(data.groups.size()) != params.num_groups())
    throw InvalidArgument("supervised_update: training set group count mismatch");
  if (config.epochs < 0 || !(config.step > 0) || config.momentum < 0 ||
      config.momentum >= 1)
    throw InvalidArgument("supervised_update: bad optimizer config");

  PolicyParams out = params;
  if (report) {
    report->epoch_loss.assign(config.epochs, 0.0);
    report->initial_loss = 0.0;
    report->final_loss = 0.0;
    report->backtracks = 0;
  }

  for (int g = 0; g < params.num_groups(); ++g) {
    GroupPolicy& gp = out.groups[g];
    const GroupTrainingData& gd = data.groups[g];
    if (gd.horizon() == 0 || gd.columns() == 0) continue;
    validate_group(gp, gd);

    GroupPolicy snapshot = gp;
    GroupGrads velocity, grad, grad_snapshot;
    velocity.reset(gp);
    double eta = config.step;
    double accepted = std::numeric_limits<double>::infinity();
    bool have_accepted = false;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      grad.reset(gp);
      double loss = full_pass(gp, gd, config.column_chunk, &grad);
      double tol = 1e-12 * (1.0 + std::fabs(accepted));
      if (!have_accepted || loss <= accepted + tol) {
        if (!have_accepted && report) report->initial_loss += loss;
        accepted = loss;
        have_accepted = true;
        snapshot = gp;
        grad_snapshot = grad;
        velocity.scale_accumulate(config.momentum, grad);
        apply_step(gp, velocity, eta);
      } else {
        gp = snapshot;
        eta *= 0.5;
        if (report) ++report->backtracks;
        if (eta < config.min_step)
          throw NumericalError("supervised_update: loss kept increasing in group " +
                               gp.name + " after halving the step to " +
                               std::to_string(eta));
        velocity.reset(gp);
        velocity.scale_accumulate(0.0, grad_snapshot);
        apply_step(gp, velocity, eta);
      }
      if (report) report->epoch_loss[epoch] += accepted;
    }

    if (config.epochs > 0) {
      double final_loss = full_pass(gp, gd, config.column_chunk, nullptr);
      if (final_loss > accepted) {
        gp = snapshot;  // last step overshot; keep the best-seen weights
        final_loss = accepted;
      }
      if (report) report->final_loss += final_loss;
    } else if (report) {
      double l0 = full_pass(gp, gd, config.column_chunk, nullptr);
      report->initial_loss += l0;
      report->final_loss += l0;
    }

    if (config.update_variance) {
      double nu_sum = gd.nu.sum();
      double weighted = (gd.nu.array() / gd.g_var.array()).sum();
      if (nu_sum > 0 && weighted > 0 && std::isfinite(weighted))
        gp.action_var = std::max(nu_sum / weighted, 1e-12);
    }
  }
  return out;
}

}  // namespace metaopt

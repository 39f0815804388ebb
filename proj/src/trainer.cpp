#include "spikeforge/trainer.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "spikeforge/autograd.hpp"

namespace spikeforge {

double sparsity_loss(const std::vector<Tensor>& activations,
                     const std::vector<QcfsActivation>& acts, float coeff) {
  if (activations.size() != acts.size())
    throw std::invalid_argument("one activation config per block required");
  if (coeff == 0.0f) return 0.0;
  int64_t ones = 0;
  for (size_t l = 0; l < activations.size(); ++l) {
    const Tensor& a = activations[l];
    for (int64_t i = 0; i < a.numel(); ++i) {
      int n = grid_index_of_activation(a.at(i), acts[l].lambda, acts[l].q_steps);
      while (n) {
        ones += n & 1;
        n >>= 1;
      }
    }
  }
  return double(coeff) * double(ones);
}

float sparsity_grad(float a, const QcfsActivation& act, float coeff) {
  const int t_steps = log2_steps(act.q_steps);
  return (a > 0.0f && a < act.lambda) ? coeff * float(t_steps) : 0.0f;
}

double mean_bit_activity(const AnnModel& model, const Tensor& images) {
  AnnTrace trace;
  ann_forward(model, images, &trace);
  int64_t ones = 0;
  for (size_t l = 0; l < model.blocks.size(); ++l) {
    const QcfsActivation& act = model.blocks[l].activation;
    const Tensor& a = trace.act[l];
    for (int64_t i = 0; i < a.numel(); ++i) {
      int n = grid_index_of_activation(a.at(i), act.lambda, act.q_steps);
      while (n) {
        ones += n & 1;
        n >>= 1;
      }
    }
  }
  return double(ones) / double(images.dim(0));
}

namespace {

constexpr float kBnEps = 1e-5f;
constexpr float kLambdaFloor = 1e-3f;
constexpr float kBnMomentum = 0.9f;  // weight kept on the running value

// SGD with momentum; decay enters the gradient before the velocity update.
void sgd_step(Tensor& param, Tensor& velocity, double lr, double momentum, double decay) {
  if (!param.has_grad()) return;
  std::vector<float>& g = param.grad();
  for (int64_t i = 0; i < param.numel(); ++i) {
    const double grad = double(g[size_t(i)]) + decay * double(param.at(i));
    const double v = momentum * double(velocity.at(i)) + grad;
    velocity.at(i) = float(v);
    param.at(i) = float(double(param.at(i)) - lr * v);
  }
  param.drop_grad();
}

void blend_running(Tensor& running, const Tensor& batch) {
  for (int64_t i = 0; i < running.numel(); ++i)
    running.at(i) = kBnMomentum * running.at(i) + (1.0f - kBnMomentum) * batch.at(i);
}

}  // namespace

TrainHistory train(AnnModel& model, const Dataset& data, const TrainSettings& tcfg,
                   const RegSettings& rcfg) {
  model.validate();
  data.validate();
  if (data.class_count != model.class_count)
    throw std::invalid_argument("dataset and model disagree on class count");
  for (int d = 0; d < 3; ++d)
    if (data.images.dim(d + 1) != model.input_shape[size_t(d)])
      throw std::invalid_argument("dataset images do not match model input shape");
  if (!(tcfg.lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (tcfg.momentum < 0.0 || tcfg.momentum >= 1.0)
    throw std::invalid_argument("momentum must lie in [0, 1)");
  if (rcfg.coeff < 0.0) throw std::invalid_argument("penalty coefficient must be >= 0");

  const size_t nblocks = model.blocks.size();
  const double pi = 3.14159265358979323846;

  // Ceilings are trained as one-element tensors mirrored into the model.
  std::vector<Tensor> lambdas;
  std::vector<Tensor> vel_w(nblocks), vel_gamma(nblocks), vel_beta(nblocks), vel_lambda(nblocks);
  for (size_t l = 0; l < nblocks; ++l) {
    lambdas.push_back(Tensor({1}, {model.blocks[l].activation.lambda}));
    vel_w[l] = Tensor(model.blocks[l].weights.shape());
    vel_gamma[l] = Tensor(model.blocks[l].gamma.shape());
    vel_beta[l] = Tensor(model.blocks[l].beta.shape());
    vel_lambda[l] = Tensor({1});
  }
  Tensor vel_head_w(model.head.weights.shape());
  Tensor vel_head_b(model.head.bias.shape());

  Rng rng(tcfg.seed);
  const int64_t n = data.size();
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int64_t per_image = data.images.numel() / n;

  TrainHistory history;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const double lr = tcfg.lr * 0.5 * (1.0 + std::cos(pi * double(epoch) / double(tcfg.epochs)));
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[size_t(i)], order[size_t(rng.uniform_int(0, i))]);

    double loss_sum = 0.0, ce_sum = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += tcfg.batch) {
      const int64_t stop = std::min(n, start + tcfg.batch);
      const int64_t rows = stop - start;
      Shape bshape = data.images.shape();
      bshape[0] = rows;
      Tensor batch(bshape);
      std::vector<int> labels(static_cast<size_t>(rows));
      for (int64_t r = 0; r < rows; ++r) {
        const int64_t src = order[size_t(start + r)];
        for (int64_t k = 0; k < per_image; ++k)
          batch.at(r * per_image + k) = data.images.at(src * per_image + k);
        labels[size_t(r)] = data.labels[size_t(src)];
      }

      Tape tape;
      Var cur = tape.constant(std::move(batch));
      std::vector<Var> w_vars(nblocks), gamma_vars(nblocks), beta_vars(nblocks),
          lambda_vars(nblocks), act_vars(nblocks);
      for (size_t l = 0; l < nblocks; ++l) {
        ConvBnBlock& b = model.blocks[l];
        w_vars[l] = tape.leaf(&b.weights);
        gamma_vars[l] = tape.leaf(&b.gamma);
        beta_vars[l] = tape.leaf(&b.beta);
        lambda_vars[l] = tape.leaf(&lambdas[l]);
        cur = tape.conv2d(cur, w_vars[l], b.stride, b.padding);
        Tensor batch_mu, batch_sigma;
        cur = tape.batchnorm_train(cur, gamma_vars[l], beta_vars[l], kBnEps, &batch_mu,
                                   &batch_sigma);
        blend_running(b.mu, batch_mu);
        blend_running(b.sigma, batch_sigma);
        cur = tape.qcfs(cur, lambda_vars[l], b.activation.q_steps, b.activation.clip_hi);
        act_vars[l] = cur;
        if (b.pool_after > 0) cur = tape.avgpool2d(cur, b.pool_after);
      }
      cur = tape.flatten(cur);
      Var head_w = tape.leaf(&model.head.weights);
      Var head_b = tape.leaf(&model.head.bias);
      Var logits = tape.linear(cur, head_w, head_b);
      Var ce = tape.cross_entropy(logits, labels);
      Var loss = ce;
      if (rcfg.coeff > 0.0) {
        for (size_t l = 0; l < nblocks; ++l) {
          Var penalty = tape.bit_l1(act_vars[l], lambdas[l].at(0),
                                    model.blocks[l].activation.q_steps, float(rcfg.coeff));
          loss = tape.add_scaled(loss, penalty);
        }
      }

      const double loss_value = tape.value(loss).at(0);
      if (!std::isfinite(loss_value))
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(batches));
      loss_sum += loss_value;
      ce_sum += tape.value(ce).at(0);
      ++batches;

      tape.backward(loss);
      for (size_t l = 0; l < nblocks; ++l) {
        ConvBnBlock& b = model.blocks[l];
        sgd_step(b.weights, vel_w[l], lr, tcfg.momentum, tcfg.weight_decay);
        sgd_step(b.gamma, vel_gamma[l], lr, tcfg.momentum, 0.0);
        sgd_step(b.beta, vel_beta[l], lr, tcfg.momentum, 0.0);
        sgd_step(lambdas[l], vel_lambda[l], lr, tcfg.momentum, 0.0);
        if (lambdas[l].at(0) < kLambdaFloor) lambdas[l].at(0) = kLambdaFloor;
        b.activation.lambda = lambdas[l].at(0);
      }
      sgd_step(model.head.weights, vel_head_w, lr, tcfg.momentum, tcfg.weight_decay);
      sgd_step(model.head.bias, vel_head_b, lr, tcfg.momentum, 0.0);
    }

    history.loss.push_back(loss_sum / double(batches));
    history.ce_loss.push_back(ce_sum / double(batches));
    history.accuracy.push_back(accuracy(model, data.images, data.labels));
    history.mean_bits.push_back(mean_bit_activity(model, data.images));
  }
  return history;
}

AnnModel build_model(const ModelSettings& ms, const Shape& input_shape, int class_count,
                     uint64_t seed) {
  Rng rng(seed);
  return make_ann_model(input_shape, ms.channels, ms.pool_after, class_count, ms.q_steps,
                        ms.full_range_clip, rng);
}

}  // namespace spikeforge

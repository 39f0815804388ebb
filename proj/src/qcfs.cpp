#include "spikeforge/qcfs.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace spikeforge {

int log2_steps(int q_steps) {
  if (q_steps < 1 || (q_steps & (q_steps - 1)) != 0)
    throw std::invalid_argument("q_steps must be a positive power of two, got " +
                                std::to_string(q_steps));
  int t = 0;
  while ((1 << t) < q_steps) ++t;
  return t;
}

namespace {

void check_activation(const QcfsActivation& act) {
  if (!(act.lambda > 0.0f) || !std::isfinite(act.lambda))
    throw std::invalid_argument("activation lambda must be positive and finite");
  const int t = log2_steps(act.q_steps);
  (void)t;
  if (act.clip_hi != act.q_steps && act.clip_hi != act.q_steps - 1)
    throw std::invalid_argument("clip_hi must be Q or Q - 1, got " + std::to_string(act.clip_hi));
}

}  // namespace

int bit_serial_expand(float z, float theta, int t_steps, uint8_t* bits, float* residue) {
  if (t_steps < 1 || t_steps > 24)
    throw std::invalid_argument("bit_serial_expand needs 1 <= t_steps <= 24");
  // half of the finest threshold; exact exponent shift of theta
  float u = z + std::ldexp(theta, -(t_steps + 1));
  int n = 0;
  for (int t = 1; t <= t_steps; ++t) {
    const float thr = std::ldexp(theta, -t);
    const bool s = u > thr;  // strict: H(0) = 0
    if (s) u -= thr;
    n = (n << 1) | int(s);
    if (bits) bits[t - 1] = uint8_t(s);
  }
  if (residue) *residue = u;
  return n;
}

Tensor qcfs_forward(const Tensor& z, const QcfsActivation& act) {
  check_activation(act);
  const int t_steps = log2_steps(act.q_steps);
  const float unit = std::ldexp(act.lambda, -t_steps);  // lambda / Q, exact
  Tensor out(z.shape());
  if (act.clip_hi == act.q_steps - 1) {
    // conversion-exact mode: decisions come from the bit-serial expansion
    for (int64_t i = 0; i < z.numel(); ++i)
      out.at(i) = unit * float(bit_serial_expand(z.at(i), act.lambda, t_steps));
  } else {
    // full-range mode keeps the ceiling level Q reachable
    const double q = act.q_steps;
    for (int64_t i = 0; i < z.numel(); ++i) {
      double n = std::floor(double(z.at(i)) * q / double(act.lambda) + 0.5);
      if (n < 0.0) n = 0.0;
      if (n > double(act.clip_hi)) n = double(act.clip_hi);
      out.at(i) = unit * float(n);
    }
  }
  return out;
}

void qcfs_backward(const Tensor& z, const Tensor& a, const QcfsActivation& act,
                   const Tensor& upstream, Tensor* dz, float* dlambda) {
  if (!z.same_shape(upstream) || !z.same_shape(a))
    throw std::invalid_argument("qcfs_backward shape mismatch: z " + shape_str(z.shape()) +
                                ", a " + shape_str(a.shape()) + ", upstream " +
                                shape_str(upstream.shape()));
  const double lam = act.lambda;
  double acc_lambda = 0.0;
  for (int64_t i = 0; i < z.numel(); ++i) {
    const double zi = z.at(i);
    const bool interior = zi > 0.0 && zi < lam;
    if (dz) dz->at(i) += interior ? upstream.at(i) : 0.0f;
    acc_lambda += double(upstream.at(i)) * (double(a.at(i)) - (interior ? zi : 0.0)) / lam;
  }
  if (dlambda) *dlambda += float(acc_lambda);
}

int grid_index_of_activation(float a, float lambda, int q_steps) {
  const int t_steps = log2_steps(q_steps);
  if (!(lambda > 0.0f)) throw std::invalid_argument("lambda must be positive");
  const double x = double(a) * double(q_steps) / double(lambda);
  const double n = std::round(x);
  if (std::fabs(x - n) > 1e-6)
    throw std::invalid_argument("activation value " + std::to_string(a) +
                                " is off the lambda/Q grid (lambda = " + std::to_string(lambda) +
                                ", Q = " + std::to_string(q_steps) + ")");
  if (n < 0.0 || n > double(q_steps))
    throw std::invalid_argument("activation value " + std::to_string(a) +
                                " is outside [0, lambda]");
  (void)t_steps;
  return int(n);
}

std::vector<uint8_t> bits_of_activation(float a, float lambda, int q_steps) {
  const int t_steps = log2_steps(q_steps);
  int n = grid_index_of_activation(a, lambda, q_steps);
  if (n == q_steps)
    throw std::invalid_argument("activation at the ceiling level Q has no T-bit code");
  std::vector<uint8_t> bits(static_cast<size_t>(t_steps));
  for (int t = 0; t < t_steps; ++t) bits[size_t(t)] = uint8_t((n >> (t_steps - 1 - t)) & 1);
  return bits;
}

}  // namespace spikeforge

#include "spikeforge/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace spikeforge::ops {

namespace {

void check_4d(const Tensor& t, const char* name) {
  if (t.ndim() != 4)
    throw std::invalid_argument(std::string(name) + " must be 4-d, got " + shape_str(t.shape()));
}

void check_channel_param(const Tensor& p, int64_t channels, const char* name) {
  if (p.ndim() != 1 || p.dim(0) != channels)
    throw std::invalid_argument(std::string(name) + " must have shape [" +
                                std::to_string(channels) + "], got " + shape_str(p.shape()));
}

// gradients accumulate in place, so the caller must hand over tensors that
// are already shaped like the thing being differentiated
void check_grad_dest(const Tensor* g, const Shape& want, const char* who) {
  if (g && g->shape() != want)
    throw std::invalid_argument(std::string(who) + " expects a preallocated gradient of shape " +
                                shape_str(want) + ", got " + shape_str(g->shape()));
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weights, int stride, int padding) {
  check_4d(input, "conv2d input");
  check_4d(weights, "conv2d weights");
  if (stride < 1) throw std::invalid_argument("conv2d stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d padding must be >= 0");
  const int64_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t Cout = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
  if (weights.dim(1) != Cin)
    throw std::invalid_argument("conv2d channel mismatch: input " + shape_str(input.shape()) +
                                " vs weights " + shape_str(weights.shape()));
  const int64_t Hout = (H + 2 * padding - kh) / stride + 1;
  const int64_t Wout = (W + 2 * padding - kw) / stride + 1;
  if (H + 2 * padding < kh || W + 2 * padding < kw || Hout <= 0 || Wout <= 0)
    throw std::invalid_argument("conv2d output would be empty for input " +
                                shape_str(input.shape()) + " and weights " +
                                shape_str(weights.shape()));

  Tensor out({N, Cout, Hout, Wout});
  const float* x = input.data();
  const float* w = weights.data();
  float* y = out.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t oc = 0; oc < Cout; ++oc)
      for (int64_t oh = 0; oh < Hout; ++oh)
        for (int64_t ow = 0; ow < Wout; ++ow) {
          double acc = 0.0;
          for (int64_t ic = 0; ic < Cin; ++ic)
            for (int64_t r = 0; r < kh; ++r) {
              const int64_t ih = oh * stride - padding + r;
              if (ih < 0 || ih >= H) continue;
              for (int64_t c = 0; c < kw; ++c) {
                const int64_t iw = ow * stride - padding + c;
                if (iw < 0 || iw >= W) continue;
                acc += double(x[((n * Cin + ic) * H + ih) * W + iw]) *
                       double(w[((oc * Cin + ic) * kh + r) * kw + c]);
              }
            }
          y[((n * Cout + oc) * Hout + oh) * Wout + ow] = float(acc);
        }
  return out;
}

void conv2d_backward(const Tensor& input, const Tensor& weights, int stride, int padding,
                     const Tensor& grad_out, Tensor* grad_input, Tensor* grad_weights) {
  const int64_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t Cout = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
  const int64_t Hout = grad_out.dim(2), Wout = grad_out.dim(3);
  if (grad_out.dim(0) != N || grad_out.dim(1) != Cout)
    throw std::invalid_argument("conv2d_backward grad shape " + shape_str(grad_out.shape()) +
                                " does not match input " + shape_str(input.shape()));

  // double scratch accumulators keep the backward deterministic as well
  std::vector<double> gx(grad_input ? size_t(input.numel()) : 0, 0.0);
  std::vector<double> gw(grad_weights ? size_t(weights.numel()) : 0, 0.0);
  const float* x = input.data();
  const float* w = weights.data();
  const float* g = grad_out.data();

  for (int64_t n = 0; n < N; ++n)
    for (int64_t oc = 0; oc < Cout; ++oc)
      for (int64_t oh = 0; oh < Hout; ++oh)
        for (int64_t ow = 0; ow < Wout; ++ow) {
          const double go = g[((n * Cout + oc) * Hout + oh) * Wout + ow];
          if (go == 0.0) continue;
          for (int64_t ic = 0; ic < Cin; ++ic)
            for (int64_t r = 0; r < kh; ++r) {
              const int64_t ih = oh * stride - padding + r;
              if (ih < 0 || ih >= H) continue;
              for (int64_t c = 0; c < kw; ++c) {
                const int64_t iw = ow * stride - padding + c;
                if (iw < 0 || iw >= W) continue;
                const size_t xi = size_t(((n * Cin + ic) * H + ih) * W + iw);
                const size_t wi = size_t(((oc * Cin + ic) * kh + r) * kw + c);
                if (grad_input) gx[xi] += go * double(w[wi]);
                if (grad_weights) gw[wi] += go * double(x[xi]);
              }
            }
        }

  if (grad_input) {
    if (!grad_input->same_shape(input))
      throw std::invalid_argument("conv2d_backward grad_input shape mismatch");
    for (int64_t i = 0; i < input.numel(); ++i) grad_input->at(i) += float(gx[size_t(i)]);
  }
  if (grad_weights) {
    if (!grad_weights->same_shape(weights))
      throw std::invalid_argument("conv2d_backward grad_weights shape mismatch");
    for (int64_t i = 0; i < weights.numel(); ++i) grad_weights->at(i) += float(gw[size_t(i)]);
  }
}

Tensor batchnorm(const Tensor& x, const Tensor& mu, const Tensor& sigma, const Tensor& gamma,
                 const Tensor& beta, float eps) {
  check_4d(x, "batchnorm input");
  const int64_t C = x.dim(1);
  check_channel_param(mu, C, "batchnorm mu");
  check_channel_param(sigma, C, "batchnorm sigma");
  check_channel_param(gamma, C, "batchnorm gamma");
  check_channel_param(beta, C, "batchnorm beta");
  for (int64_t c = 0; c < C; ++c)
    if (!(double(sigma.at(c)) + double(eps) > 0.0))
      throw std::invalid_argument("batchnorm sigma + eps must be positive at channel " +
                                  std::to_string(c));

  const int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3), plane = H * W;
  Tensor out(x.shape());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double s = double(sigma.at(c)) + double(eps);
      const double g = gamma.at(c), m = mu.at(c), b = beta.at(c);
      const float* xi = x.data() + (n * C + c) * plane;
      float* yo = out.data() + (n * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) yo[i] = float(g * (double(xi[i]) - m) / s + b);
    }
  return out;
}

void batchnorm_backward(const Tensor& x, const Tensor& mu, const Tensor& sigma,
                        const Tensor& gamma, float eps, const Tensor& grad_out, Tensor* grad_x,
                        Tensor* grad_gamma, Tensor* grad_beta) {
  const int64_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (!grad_out.same_shape(x))
    throw std::invalid_argument("batchnorm_backward grad shape mismatch");
  check_grad_dest(grad_x, x.shape(), "batchnorm_backward grad_x");
  check_grad_dest(grad_gamma, {C}, "batchnorm_backward grad_gamma");
  check_grad_dest(grad_beta, {C}, "batchnorm_backward grad_beta");
  for (int64_t c = 0; c < C; ++c) {
    const double s = double(sigma.at(c)) + double(eps);
    const double g = gamma.at(c), m = mu.at(c);
    double sum_g = 0.0, sum_gx = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const float* xi = x.data() + (n * C + c) * plane;
      const float* go = grad_out.data() + (n * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        sum_g += go[i];
        sum_gx += double(go[i]) * (double(xi[i]) - m) / s;
      }
      if (grad_x) {
        float* gx = grad_x->data() + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) gx[i] += float(double(go[i]) * g / s);
      }
    }
    if (grad_gamma) grad_gamma->at(c) += float(sum_gx);
    if (grad_beta) grad_beta->at(c) += float(sum_g);
  }
}

BatchNormTrainResult batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                     float eps) {
  check_4d(x, "batchnorm_train input");
  const int64_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  check_channel_param(gamma, C, "batchnorm_train gamma");
  check_channel_param(beta, C, "batchnorm_train beta");
  const double M = double(N * plane);

  BatchNormTrainResult r{Tensor(x.shape()), Tensor({C}), Tensor({C})};
  for (int64_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const float* xi = x.data() + (n * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) sum += xi[i];
    }
    const double m = sum / M;
    double var = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const float* xi = x.data() + (n * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const double d = double(xi[i]) - m;
        var += d * d;
      }
    }
    var /= M;
    const double s = std::sqrt(var) + double(eps);
    r.batch_mu.at(c) = float(m);
    r.batch_sigma.at(c) = float(s);
    const double g = gamma.at(c), b = beta.at(c);
    for (int64_t n = 0; n < N; ++n) {
      const float* xi = x.data() + (n * C + c) * plane;
      float* yo = r.y.data() + (n * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) yo[i] = float(g * (double(xi[i]) - m) / s + b);
    }
  }
  return r;
}

void batchnorm_train_backward(const Tensor& x, const Tensor& gamma, const Tensor& batch_mu,
                              const Tensor& batch_sigma, float eps, const Tensor& grad_out,
                              Tensor* grad_x, Tensor* grad_gamma, Tensor* grad_beta) {
  const int64_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  const double M = double(N * plane);
  if (!grad_out.same_shape(x))
    throw std::invalid_argument("batchnorm_train_backward grad shape mismatch");
  check_grad_dest(grad_x, x.shape(), "batchnorm_train_backward grad_x");
  check_grad_dest(grad_gamma, {C}, "batchnorm_train_backward grad_gamma");
  check_grad_dest(grad_beta, {C}, "batchnorm_train_backward grad_beta");
  for (int64_t c = 0; c < C; ++c) {
    const double s = batch_sigma.at(c);
    const double root_v = std::max(s - double(eps), 1e-12);
    const double g = gamma.at(c), m = batch_mu.at(c);
    double sum_g = 0.0, sum_gx = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const float* xi = x.data() + (n * C + c) * plane;
      const float* go = grad_out.data() + (n * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        sum_g += go[i];
        sum_gx += double(go[i]) * (double(xi[i]) - m) / s;
      }
    }
    if (grad_gamma) grad_gamma->at(c) += float(sum_gx);
    if (grad_beta) grad_beta->at(c) += float(sum_g);
    if (grad_x) {
      for (int64_t n = 0; n < N; ++n) {
        const float* xi = x.data() + (n * C + c) * plane;
        const float* go = grad_out.data() + (n * C + c) * plane;
        float* gx = grad_x->data() + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double xc = double(xi[i]) - m;
          gx[i] += float((g / s) * (double(go[i]) - sum_g / M - xc * sum_gx / (M * root_v)));
        }
      }
    }
  }
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  if (x.ndim() != 2 || w.ndim() != 2)
    throw std::invalid_argument("linear expects 2-d input and weights, got " +
                                shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const int64_t N = x.dim(0), F = x.dim(1), O = w.dim(0);
  if (w.dim(1) != F)
    throw std::invalid_argument("linear feature mismatch: input " + shape_str(x.shape()) +
                                " vs weights " + shape_str(w.shape()));
  if (bias && (bias->ndim() != 1 || bias->dim(0) != O))
    throw std::invalid_argument("linear bias must have shape [" + std::to_string(O) + "], got " +
                                shape_str(bias->shape()));
  Tensor out({N, O});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o) {
      double acc = bias ? double(bias->at(o)) : 0.0;
      for (int64_t f = 0; f < F; ++f) acc += double(x.at(n * F + f)) * double(w.at(o * F + f));
      out.at(n * O + o) = float(acc);
    }
  return out;
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& grad_out, Tensor* grad_x,
                     Tensor* grad_w, Tensor* grad_bias) {
  const int64_t N = x.dim(0), F = x.dim(1), O = w.dim(0);
  if (grad_out.ndim() != 2 || grad_out.dim(0) != N || grad_out.dim(1) != O)
    throw std::invalid_argument("linear_backward grad shape mismatch");
  check_grad_dest(grad_x, x.shape(), "linear_backward grad_x");
  check_grad_dest(grad_w, w.shape(), "linear_backward grad_w");
  check_grad_dest(grad_bias, {O}, "linear_backward grad_bias");
  if (grad_x) {
    for (int64_t n = 0; n < N; ++n)
      for (int64_t f = 0; f < F; ++f) {
        double acc = 0.0;
        for (int64_t o = 0; o < O; ++o)
          acc += double(grad_out.at(n * O + o)) * double(w.at(o * F + f));
        grad_x->at(n * F + f) += float(acc);
      }
  }
  if (grad_w) {
    for (int64_t o = 0; o < O; ++o)
      for (int64_t f = 0; f < F; ++f) {
        double acc = 0.0;
        for (int64_t n = 0; n < N; ++n)
          acc += double(grad_out.at(n * O + o)) * double(x.at(n * F + f));
        grad_w->at(o * F + f) += float(acc);
      }
  }
  if (grad_bias) {
    for (int64_t o = 0; o < O; ++o) {
      double acc = 0.0;
      for (int64_t n = 0; n < N; ++n) acc += grad_out.at(n * O + o);
      grad_bias->at(o) += float(acc);
    }
  }
}

Tensor avgpool2d(const Tensor& x, int window) {
  check_4d(x, "avgpool2d input");
  if (window < 1) throw std::invalid_argument("avgpool2d window must be >= 1");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % window != 0 || W % window != 0)
    throw std::invalid_argument("avgpool2d window " + std::to_string(window) +
                                " does not divide spatial dims of " + shape_str(x.shape()));
  const int64_t Ho = H / window, Wo = W / window;
  const double inv = 1.0 / (double(window) * double(window));
  Tensor out({N, C, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          double acc = 0.0;
          for (int64_t r = 0; r < window; ++r)
            for (int64_t s = 0; s < window; ++s)
              acc += x.at4(n, c, oh * window + r, ow * window + s);
          out.at4(n, c, oh, ow) = float(acc * inv);
        }
  return out;
}

void avgpool2d_backward(const Shape& input_shape, int window, const Tensor& grad_out,
                        Tensor* grad_x) {
  if (!grad_x) return;
  check_grad_dest(grad_x, input_shape, "avgpool2d_backward grad_x");
  const int64_t N = input_shape[0], C = input_shape[1];
  const int64_t Ho = grad_out.dim(2), Wo = grad_out.dim(3);
  const double inv = 1.0 / (double(window) * double(window));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          const float g = float(double(grad_out.at4(n, c, oh, ow)) * inv);
          for (int64_t r = 0; r < window; ++r)
            for (int64_t s = 0; s < window; ++s)
              grad_x->at4(n, c, oh * window + r, ow * window + s) += g;
        }
}

Tensor heaviside(const Tensor& x) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out.at(i) = x.at(i) > 0.0f ? 1.0f : 0.0f;
  return out;
}

}  // namespace spikeforge::ops

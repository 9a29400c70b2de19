#pragma once

// Minimal double-precision network engine: forward, backprop, SGD/Adam,
// and a bit-exact weight file format. Powers the victim classifiers and
// the realism discriminator. Frozen networks are safe for concurrent
// forward passes; training mutates layer caches and must be serialized.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "warpfool/error.hpp"
#include "warpfool/imagecore.hpp"
#include "warpfool/rng.hpp"

namespace warpfool::nn {

struct Shape {
  int c = 0, h = 0, w = 0;
  std::size_t size() const { return std::size_t(c) * h * w; }
  bool operator==(const Shape&) const = default;
};

// Internal activation buffer. Unlike ImageTensor it carries no range or
// minimum-size invariants; feature maps shrink below 8 px and go
// negative freely.
struct Tensor {
  Shape shape;
  std::vector<double> v;

  static Tensor zeros(Shape s) { return {s, std::vector<double>(s.size(), 0.0)}; }
  std::size_t size() const { return v.size(); }
  double& at(int c, int y, int x) {
    return v[(std::size_t(c) * shape.h + y) * shape.w + x];
  }
  double at(int c, int y, int x) const {
    return v[(std::size_t(c) * shape.h + y) * shape.w + x];
  }
};

inline Tensor from_image(const ImageTensor& img) {
  return {{img.channels, img.height, img.width}, img.data};
}

namespace detail {

inline int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow; exact enough out to |z| ~ 1000.
inline double softplus(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Layers

class Layer {
 public:
  virtual ~Layer() = default;

  virtual Shape out_shape(Shape in) const = 0;
  // Inference path: no caching, safe for concurrent callers.
  virtual Tensor forward(const Tensor& in) const = 0;
  // Training path: caches whatever backward needs.
  virtual Tensor forward_train(const Tensor& in) = 0;
  // Consumes the cache, accumulates parameter gradients, returns the
  // gradient w.r.t. the layer input.
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual std::span<double> params() { return {}; }
  virtual std::span<double> grads() { return {}; }
  virtual std::string spec_line() const = 0;
};

class Conv2D final : public Layer {
 public:
  Conv2D(int in_ch, int out_ch, int k, int stride, int pad)
      : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad) {
    if (in_ch < 1 || out_ch < 1 || k < 1 || stride < 1 || pad < 0)
      throw std::invalid_argument("Conv2D: bad geometry");
    weights_.assign(std::size_t(out_ch) * in_ch * k * k + out_ch, 0.0);
    grads_.assign(weights_.size(), 0.0);
  }

  void init(Rng& rng) {
    const double std = std::sqrt(2.0 / (double(in_ch_) * k_ * k_));
    const std::size_t nw = std::size_t(out_ch_) * in_ch_ * k_ * k_;
    for (std::size_t i = 0; i < nw; ++i) weights_[i] = rng.normal(0.0, std);
    for (std::size_t i = nw; i < weights_.size(); ++i) weights_[i] = 0.0;
  }

  Shape out_shape(Shape in) const override {
    if (in.c != in_ch_) throw shape_error("Conv2D: channel mismatch");
    const int oh = (in.h + 2 * pad_ - k_) / stride_ + 1;
    const int ow = (in.w + 2 * pad_ - k_) / stride_ + 1;
    if (oh < 1 || ow < 1) throw shape_error("Conv2D: output collapses");
    return {out_ch_, oh, ow};
  }

  Tensor forward(const Tensor& in) const override { return run(in); }

  Tensor forward_train(const Tensor& in) override {
    cached_in_ = in;
    return run(in);
  }

  Tensor backward(const Tensor& grad_out) override {
    const Tensor& in = cached_in_;
    const Shape os = grad_out.shape;
    Tensor gin = Tensor::zeros(in.shape);
    const std::size_t wplane = std::size_t(in_ch_) * k_ * k_;
    double* gw = grads_.data();
    double* gb = grads_.data() + std::size_t(out_ch_) * wplane;
    for (int oc = 0; oc < out_ch_; ++oc) {
      const double* go = &grad_out.v[std::size_t(oc) * os.h * os.w];
      double bacc = 0.0;
      for (std::size_t i = 0; i < std::size_t(os.h) * os.w; ++i) bacc += go[i];
      gb[oc] += bacc;
      for (int ic = 0; ic < in_ch_; ++ic) {
        for (int ky = 0; ky < k_; ++ky) {
          for (int kx = 0; kx < k_; ++kx) {
            const double wv =
                weights_[(std::size_t(oc) * in_ch_ + ic) * k_ * k_ + ky * k_ + kx];
            double wacc = 0.0;
            for (int oy = 0; oy < os.h; ++oy) {
              const int iy = oy * stride_ + ky - pad_;
              if (iy < 0 || iy >= in.shape.h) continue;
              const int ox_lo = std::max(0, detail::ceil_div(pad_ - kx, stride_));
              const int ox_hi =
                  std::min(os.w - 1, detail::floor_div(in.shape.w - 1 + pad_ - kx, stride_));
              const double* gr = go + std::size_t(oy) * os.w;
              const double* ir =
                  &in.v[(std::size_t(ic) * in.shape.h + iy) * in.shape.w];
              double* gir = &gin.v[(std::size_t(ic) * in.shape.h + iy) * in.shape.w];
              for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                const int ix = ox * stride_ + kx - pad_;
                wacc += gr[ox] * ir[ix];
                gir[ix] += wv * gr[ox];
              }
            }
            gw[(std::size_t(oc) * in_ch_ + ic) * k_ * k_ + ky * k_ + kx] += wacc;
          }
        }
      }
    }
    return gin;
  }

  std::span<double> params() override { return weights_; }
  std::span<double> grads() override { return grads_; }

  std::string spec_line() const override {
    std::ostringstream os;
    os << "conv2d " << in_ch_ << " " << out_ch_ << " " << k_ << " " << stride_
       << " " << pad_;
    return os.str();
  }

 private:
  Tensor run(const Tensor& in) const {
    const Shape os = out_shape(in.shape);
    Tensor out = Tensor::zeros(os);
    const std::size_t wplane = std::size_t(in_ch_) * k_ * k_;
    const double* bias = weights_.data() + std::size_t(out_ch_) * wplane;
    for (int oc = 0; oc < out_ch_; ++oc) {
      double* op = &out.v[std::size_t(oc) * os.h * os.w];
      for (std::size_t i = 0; i < std::size_t(os.h) * os.w; ++i) op[i] = bias[oc];
      for (int ic = 0; ic < in_ch_; ++ic) {
        for (int ky = 0; ky < k_; ++ky) {
          for (int kx = 0; kx < k_; ++kx) {
            const double wv =
                weights_[(std::size_t(oc) * in_ch_ + ic) * k_ * k_ + ky * k_ + kx];
            for (int oy = 0; oy < os.h; ++oy) {
              const int iy = oy * stride_ + ky - pad_;
              if (iy < 0 || iy >= in.shape.h) continue;
              const int ox_lo = std::max(0, detail::ceil_div(pad_ - kx, stride_));
              const int ox_hi =
                  std::min(os.w - 1, detail::floor_div(in.shape.w - 1 + pad_ - kx, stride_));
              double* orow = op + std::size_t(oy) * os.w;
              const double* irow =
                  &in.v[(std::size_t(ic) * in.shape.h + iy) * in.shape.w];
              for (int ox = ox_lo; ox <= ox_hi; ++ox)
                orow[ox] += wv * irow[ox * stride_ + kx - pad_];
            }
          }
        }
      }
    }
    return out;
  }

  int in_ch_, out_ch_, k_, stride_, pad_;
  std::vector<double> weights_;  // (out, in, k, k) then bias (out)
  std::vector<double> grads_;
  Tensor cached_in_;
};

class AvgPool2D final : public Layer {
 public:
  explicit AvgPool2D(int k) : k_(k) {
    if (k < 1) throw std::invalid_argument("AvgPool2D: k < 1");
  }

  Shape out_shape(Shape in) const override {
    if (in.h < k_ || in.w < k_) throw shape_error("AvgPool2D: input too small");
    return {in.c, in.h / k_, in.w / k_};
  }

  Tensor forward(const Tensor& in) const override { return run(in); }
  Tensor forward_train(const Tensor& in) override {
    in_shape_ = in.shape;
    return run(in);
  }

  Tensor backward(const Tensor& grad_out) override {
    Tensor gin = Tensor::zeros(in_shape_);
    const double inv = 1.0 / double(k_ * k_);
    const Shape os = grad_out.shape;
    for (int c = 0; c < os.c; ++c)
      for (int oy = 0; oy < os.h; ++oy)
        for (int ox = 0; ox < os.w; ++ox) {
          const double g = grad_out.at(c, oy, ox) * inv;
          for (int dy = 0; dy < k_; ++dy)
            for (int dx = 0; dx < k_; ++dx)
              gin.at(c, oy * k_ + dy, ox * k_ + dx) += g;
        }
    return gin;
  }

  std::string spec_line() const override { return "avgpool " + std::to_string(k_); }

 private:
  Tensor run(const Tensor& in) const {
    const Shape os = out_shape(in.shape);
    Tensor out = Tensor::zeros(os);
    const double inv = 1.0 / double(k_ * k_);
    for (int c = 0; c < os.c; ++c)
      for (int oy = 0; oy < os.h; ++oy)
        for (int ox = 0; ox < os.w; ++ox) {
          double acc = 0.0;
          for (int dy = 0; dy < k_; ++dy)
            for (int dx = 0; dx < k_; ++dx)
              acc += in.at(c, oy * k_ + dy, ox * k_ + dx);
          out.at(c, oy, ox) = acc * inv;
        }
    return out;
  }

  int k_;
  Shape in_shape_;
};

class ReLU final : public Layer {
 public:
  Shape out_shape(Shape in) const override { return in; }

  Tensor forward(const Tensor& in) const override {
    Tensor out = in;
    for (double& x : out.v) x = x > 0.0 ? x : 0.0;
    return out;
  }

  Tensor forward_train(const Tensor& in) override {
    cached_in_ = in;
    return forward(in);
  }

  Tensor backward(const Tensor& grad_out) override {
    Tensor gin = grad_out;
    for (std::size_t i = 0; i < gin.v.size(); ++i)
      if (cached_in_.v[i] <= 0.0) gin.v[i] = 0.0;
    return gin;
  }

  std::string spec_line() const override { return "relu"; }

 private:
  Tensor cached_in_;
};

class Flatten final : public Layer {
 public:
  Shape out_shape(Shape in) const override { return {int(in.size()), 1, 1}; }

  Tensor forward(const Tensor& in) const override {
    Tensor out = in;
    out.shape = Shape{int(in.size()), 1, 1};
    return out;
  }

  Tensor forward_train(const Tensor& in) override {
    in_shape_ = in.shape;
    return forward(in);
  }

  Tensor backward(const Tensor& grad_out) override {
    Tensor gin = grad_out;
    gin.shape = in_shape_;
    return gin;
  }

  std::string spec_line() const override { return "flatten"; }

 private:
  Shape in_shape_;
};

class Dense final : public Layer {
 public:
  Dense(int in, int out) : in_(in), out_(out) {
    if (in < 1 || out < 1) throw std::invalid_argument("Dense: bad geometry");
    weights_.assign(std::size_t(in) * out + out, 0.0);
    grads_.assign(weights_.size(), 0.0);
  }

  void init(Rng& rng) {
    const double std = std::sqrt(2.0 / double(in_));
    for (std::size_t i = 0; i < std::size_t(in_) * out_; ++i)
      weights_[i] = rng.normal(0.0, std);
    for (std::size_t i = std::size_t(in_) * out_; i < weights_.size(); ++i)
      weights_[i] = 0.0;
  }

  Shape out_shape(Shape in) const override {
    if (int(in.size()) != in_) throw shape_error("Dense: input size mismatch");
    return {out_, 1, 1};
  }

  Tensor forward(const Tensor& in) const override { return run(in); }
  Tensor forward_train(const Tensor& in) override {
    cached_in_ = in;
    return run(in);
  }

  Tensor backward(const Tensor& grad_out) override {
    const double* x = cached_in_.v.data();
    double* gw = grads_.data();
    double* gb = grads_.data() + std::size_t(in_) * out_;
    Tensor gin = Tensor::zeros(cached_in_.shape);
    for (int o = 0; o < out_; ++o) {
      const double g = grad_out.v[std::size_t(o)];
      gb[o] += g;
      const double* wrow = &weights_[std::size_t(o) * in_];
      double* gwrow = &gw[std::size_t(o) * in_];
      for (int i = 0; i < in_; ++i) {
        gwrow[i] += g * x[i];
        gin.v[std::size_t(i)] += g * wrow[i];
      }
    }
    return gin;
  }

  std::span<double> params() override { return weights_; }
  std::span<double> grads() override { return grads_; }

  std::string spec_line() const override {
    return "dense " + std::to_string(in_) + " " + std::to_string(out_);
  }

 private:
  Tensor run(const Tensor& in) const {
    if (int(in.size()) != in_) throw shape_error("Dense: input size mismatch");
    Tensor out = Tensor::zeros({out_, 1, 1});
    const double* bias = weights_.data() + std::size_t(in_) * out_;
    for (int o = 0; o < out_; ++o) {
      const double* wrow = &weights_[std::size_t(o) * in_];
      double acc = bias[o];
      for (int i = 0; i < in_; ++i) acc += wrow[i] * in.v[std::size_t(i)];
      out.v[std::size_t(o)] = acc;
    }
    return out;
  }

  int in_, out_;
  std::vector<double> weights_;  // (out, in) then bias (out)
  std::vector<double> grads_;
  Tensor cached_in_;
};

class Sigmoid final : public Layer {
 public:
  Shape out_shape(Shape in) const override { return in; }

  Tensor forward(const Tensor& in) const override {
    Tensor out = in;
    for (double& x : out.v) x = detail::sigmoid(x);
    return out;
  }

  Tensor forward_train(const Tensor& in) override {
    cached_out_ = forward(in);
    return cached_out_;
  }

  Tensor backward(const Tensor& grad_out) override {
    Tensor gin = grad_out;
    for (std::size_t i = 0; i < gin.v.size(); ++i) {
      const double y = cached_out_.v[i];
      gin.v[i] *= y * (1.0 - y);
    }
    return gin;
  }

  std::string spec_line() const override { return "sigmoid"; }

 private:
  Tensor cached_out_;
};

// ---------------------------------------------------------------------------
// Network

enum class Head {
  Softmax,  // classifier: probabilities over class_count classes
  Sigmoid,  // discriminator: one adversariality probability
};

struct Network {
  std::vector<std::unique_ptr<Layer>> layers;
  Head head = Head::Softmax;
  int class_count = 0;
  Shape in_shape;
  std::string name;
  std::uint64_t seed = 0;
  int epochs_trained = 0;

  Network() = default;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  Shape logits_shape() const {
    Shape s = in_shape;
    for (const auto& l : layers) s = l->out_shape(s);
    return s;
  }

  Tensor forward_logits(const Tensor& in) const {
    if (!(in.shape == in_shape)) throw shape_error("Network: input shape mismatch");
    Tensor t = in;
    for (const auto& l : layers) t = l->forward(t);
    return t;
  }

  // Log-probabilities per class (softmax head), computed in log-space so
  // they stay finite for logits far beyond +-1000. The log1p form keeps
  // full relative precision on the max class even at extreme margins,
  // where -log p is denormal-small; the attack's finite differences
  // depend on that residual signal.
  std::vector<double> class_log_probs(const ImageTensor& img) const {
    if (head != Head::Softmax) throw shape_error("class_log_probs: not a classifier");
    const Tensor logits = forward_logits(from_image(img));
    std::size_t arg_mx = 0;
    for (std::size_t i = 1; i < logits.v.size(); ++i)
      if (logits.v[i] > logits.v[arg_mx]) arg_mx = i;
    const double mx = logits.v[arg_mx];
    double rest = 0.0;
    for (std::size_t i = 0; i < logits.v.size(); ++i)
      if (i != arg_mx) rest += std::exp(logits.v[i] - mx);
    const double log_norm = std::log1p(rest);  // lse = mx + log_norm
    std::vector<double> out(logits.v.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = logits.v[i] - mx - log_norm;
    return out;
  }

  // Probabilities: softmax rows summing to 1, or the single sigmoid output.
  std::vector<double> probabilities(const ImageTensor& img) const {
    if (head == Head::Softmax) {
      std::vector<double> p = class_log_probs(img);
      for (double& x : p) x = std::exp(x);
      return p;
    }
    return {detail::sigmoid(adversarial_logit(img))};
  }

  int predict(const ImageTensor& img) const {
    const Tensor logits = forward_logits(from_image(img));
    int best = 0;
    for (std::size_t i = 1; i < logits.v.size(); ++i)
      if (logits.v[i] > logits.v[std::size_t(best)]) best = int(i);
    return best;
  }

  // Pre-sigmoid logit of the discriminator head; q = sigmoid(logit) is
  // the probability the input is adversarial.
  double adversarial_logit(const ImageTensor& img) const {
    if (head != Head::Sigmoid) throw shape_error("adversarial_logit: not a discriminator");
    const Tensor logits = forward_logits(from_image(img));
    if (logits.v.size() != 1) throw shape_error("adversarial_logit: non-scalar output");
    return logits.v[0];
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l->params().size();
    return n;
  }
};

// ---------------------------------------------------------------------------
// Builders

namespace detail {

inline void he_init(Network& net, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xC0FFEE));
  for (auto& l : net.layers) {
    if (auto* c = dynamic_cast<Conv2D*>(l.get())) c->init(rng);
    if (auto* d = dynamic_cast<Dense*>(l.get())) d->init(rng);
  }
}

inline int flat_after(const Network& net, Shape in) {
  Shape s = in;
  for (const auto& l : net.layers) s = l->out_shape(s);
  return int(s.size());
}

}  // namespace detail

// Victim per the LeNet variant: two conv blocks with average pooling,
// then two fully-connected layers into a softmax classifier.
inline Network build_victim_lenet(int class_count, std::uint64_t seed = 0,
                                  Shape in = {1, 28, 28}) {
  if (class_count < 2) throw std::invalid_argument("victim: class_count < 2");
  Network net;
  net.in_shape = in;
  net.head = Head::Softmax;
  net.class_count = class_count;
  net.name = "lenet";
  net.seed = seed;
  net.layers.push_back(std::make_unique<Conv2D>(in.c, 6, 5, 1, 2));
  net.layers.push_back(std::make_unique<ReLU>());
  net.layers.push_back(std::make_unique<AvgPool2D>(2));
  net.layers.push_back(std::make_unique<Conv2D>(6, 16, 5, 1, 0));
  net.layers.push_back(std::make_unique<ReLU>());
  net.layers.push_back(std::make_unique<AvgPool2D>(2));
  net.layers.push_back(std::make_unique<Flatten>());
  net.layers.push_back(std::make_unique<Dense>(detail::flat_after(net, in), 120));
  net.layers.push_back(std::make_unique<ReLU>());
  net.layers.push_back(std::make_unique<Dense>(120, class_count));
  detail::he_init(net, seed);
  return net;
}

// A second small architecture with different widths and kernels, used
// for transferability runs.
inline Network build_victim_lenet_wide(int class_count, std::uint64_t seed = 0,
                                       Shape in = {1, 28, 28}) {
  if (class_count < 2) throw std::invalid_argument("victim: class_count < 2");
  Network net;
  net.in_shape = in;
  net.head = Head::Softmax;
  net.class_count = class_count;
  net.name = "lenet-wide";
  net.seed = seed;
  net.layers.push_back(std::make_unique<Conv2D>(in.c, 10, 5, 1, 2));
  net.layers.push_back(std::make_unique<ReLU>());
  net.layers.push_back(std::make_unique<AvgPool2D>(2));
  net.layers.push_back(std::make_unique<Conv2D>(10, 20, 3, 1, 1));
  net.layers.push_back(std::make_unique<ReLU>());
  net.layers.push_back(std::make_unique<AvgPool2D>(2));
  net.layers.push_back(std::make_unique<Flatten>());
  net.layers.push_back(std::make_unique<Dense>(detail::flat_after(net, in), 84));
  net.layers.push_back(std::make_unique<ReLU>());
  net.layers.push_back(std::make_unique<Dense>(84, class_count));
  detail::he_init(net, seed);
  return net;
}

// Discriminator: three stride-2 convolutions and a sigmoid head giving
// the probability that the input is adversarial. The head starts at
// zero so an untrained discriminator is exactly indifferent (q = 0.5
// everywhere); its pressure on the attack objective grows only as it
// learns, instead of injecting a W-weighted random prior.
inline Network build_discriminator(Shape in, std::uint64_t seed = 0) {
  Network net;
  net.in_shape = in;
  net.head = Head::Sigmoid;
  net.class_count = 2;
  net.name = "discriminator";
  net.seed = seed;
  net.layers.push_back(std::make_unique<Conv2D>(in.c, 8, 3, 2, 1));
  net.layers.push_back(std::make_unique<ReLU>());
  net.layers.push_back(std::make_unique<Conv2D>(8, 16, 3, 2, 1));
  net.layers.push_back(std::make_unique<ReLU>());
  net.layers.push_back(std::make_unique<Conv2D>(16, 32, 3, 2, 1));
  net.layers.push_back(std::make_unique<ReLU>());
  net.layers.push_back(std::make_unique<Flatten>());
  net.layers.push_back(std::make_unique<Dense>(detail::flat_after(net, in), 1));
  detail::he_init(net, seed);
  for (double& p : net.layers.back()->params()) p = 0.0;
  return net;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  enum class Opt { SGD, Adam };
  Opt opt = Opt::Adam;
  double lr = 1e-3;
  double momentum = 0.9;                            // SGD
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;    // Adam
  int epochs = 5;
  int batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size < 1");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs < 0");
  }
};

// Owns the optimizer state for one network across epochs.
class Trainer {
 public:
  Trainer(Network& net, const TrainConfig& cfg)
      : net_(net), cfg_(cfg), rng_(derive_seed(cfg.seed, 0x7EA1)) {
    cfg_.validate();
    for (auto& l : net_.layers) {
      m_.emplace_back(l->params().size(), 0.0);
      v_.emplace_back(l->params().size(), 0.0);
    }
  }

  // One shuffled pass of cross-entropy training; returns the mean loss.
  double train_epoch(const LabeledBatch& batch) {
    batch.validate(net_.class_count);
    std::vector<std::size_t> order(batch.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng_.shuffle(order);

    double loss_acc = 0.0;
    std::size_t seen = 0;
    while (seen < order.size()) {
      const std::size_t take =
          std::min(std::size_t(cfg_.batch_size), order.size() - seen);
      zero_grads();
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < take; ++i) {
        const std::size_t idx = order[seen + i];
        batch_loss += backprop_classifier(batch.images[idx], batch.labels[idx]);
      }
      scale_grads(1.0 / double(take));
      apply_step();
      if (!std::isfinite(batch_loss)) throw training_error("training diverged");
      loss_acc += batch_loss;
      seen += take;
    }
    net_.epochs_trained += 1;
    return loss_acc / double(order.size());
  }

  // One optimizer step on an explicit classifier batch.
  double fit_classifier_batch(const std::vector<const ImageTensor*>& images,
                              const std::vector<int>& labels) {
    if (images.empty() || images.size() != labels.size())
      throw std::invalid_argument("fit_classifier_batch: bad batch");
    zero_grads();
    double loss = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i)
      loss += backprop_classifier(*images[i], labels[i]);
    scale_grads(1.0 / double(images.size()));
    apply_step();
    if (!std::isfinite(loss)) throw training_error("training diverged");
    return loss / double(images.size());
  }

  // One optimizer step of binary cross-entropy on tagged images
  // (tag 1 = adversarial, 0 = clean). Returns the mean BCE.
  double fit_binary_batch(const std::vector<const ImageTensor*>& images,
                          const std::vector<int>& tags) {
    if (images.empty() || images.size() != tags.size())
      throw std::invalid_argument("fit_binary_batch: bad batch");
    zero_grads();
    double loss = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      Tensor t = from_image(*images[i]);
      for (auto& l : net_.layers) t = l->forward_train(t);
      if (t.v.size() != 1) throw shape_error("fit_binary_batch: non-scalar output");
      const double z = t.v[0];
      const double y = tags[i] ? 1.0 : 0.0;
      loss += detail::softplus(z) - y * z;
      Tensor g = Tensor::zeros(t.shape);
      g.v[0] = detail::sigmoid(z) - y;
      for (std::size_t li = net_.layers.size(); li-- > 0;)
        g = net_.layers[li]->backward(g);
    }
    scale_grads(1.0 / double(images.size()));
    apply_step();
    if (!std::isfinite(loss)) throw training_error("training diverged");
    return loss / double(images.size());
  }

 private:
  double backprop_classifier(const ImageTensor& img, int label) {
    Tensor t = from_image(img);
    for (auto& l : net_.layers) t = l->forward_train(t);
    // Softmax + CE in log-space; gradient at the logits is p - onehot.
    double mx = t.v[0];
    for (double z : t.v) mx = std::max(mx, z);
    double acc = 0.0;
    for (double z : t.v) acc += std::exp(z - mx);
    const double lse = mx + std::log(acc);
    const double loss = lse - t.v[std::size_t(label)];
    Tensor g = t;
    for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] = std::exp(t.v[i] - lse);
    g.v[std::size_t(label)] -= 1.0;
    for (std::size_t li = net_.layers.size(); li-- > 0;)
      g = net_.layers[li]->backward(g);
    return loss;
  }

  void zero_grads() {
    for (auto& l : net_.layers)
      for (double& g : l->grads()) g = 0.0;
  }

  void scale_grads(double s) {
    for (auto& l : net_.layers)
      for (double& g : l->grads()) g *= s;
  }

  void apply_step() {
    ++step_;
    for (std::size_t li = 0; li < net_.layers.size(); ++li) {
      auto p = net_.layers[li]->params();
      auto g = net_.layers[li]->grads();
      if (cfg_.opt == TrainConfig::Opt::SGD) {
        auto& vel = m_[li];
        for (std::size_t i = 0; i < p.size(); ++i) {
          vel[i] = cfg_.momentum * vel[i] - cfg_.lr * g[i];
          p[i] += vel[i];
        }
      } else {
        auto& m = m_[li];
        auto& v = v_[li];
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
        for (std::size_t i = 0; i < p.size(); ++i) {
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
          p[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        }
      }
      for (double x : p)
        if (!std::isfinite(x)) throw training_error("parameters diverged");
    }
  }

  Network& net_;
  TrainConfig cfg_;
  Rng rng_;
  long step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Convenience driver: fresh trainer, cfg.epochs passes, per-epoch losses.
inline std::vector<double> train_classifier(Network& net, const LabeledBatch& batch,
                                            const TrainConfig& cfg) {
  Trainer trainer(net, cfg);
  std::vector<double> losses;
  losses.reserve(std::size_t(cfg.epochs));
  for (int e = 0; e < cfg.epochs; ++e) losses.push_back(trainer.train_epoch(batch));
  return losses;
}

inline double accuracy_pct(const Network& net, const LabeledBatch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("accuracy_pct: empty batch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (net.predict(batch.images[i]) == batch.labels[i]) ++correct;
  return 100.0 * double(correct) / double(batch.size());
}

// ---------------------------------------------------------------------------
// Serialization: UTF-8 header describing the architecture, then the
// parameters as little-endian float64. Round-trips bit-exactly.

namespace detail {

inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

static_assert(sizeof(double) == 8, "weight format requires 64-bit doubles");

}  // namespace detail

inline void save_weights(const Network& net, const std::filesystem::path& path) {
  std::vector<double> payload;
  payload.reserve(net.param_count());
  for (const auto& l : net.layers) {
    // params() is non-const by interface; serialization reads only.
    auto p = const_cast<Layer*>(l.get())->params();
    payload.insert(payload.end(), p.begin(), p.end());
  }
  std::vector<unsigned char> bytes(payload.size() * 8);
  for (std::size_t i = 0; i < payload.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &payload[i], 8);
    for (int b = 0; b < 8; ++b)
      bytes[i * 8 + std::size_t(b)] = (unsigned char)((bits >> (8 * b)) & 0xFF);
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path.string());
  out << "warpfool-net v1\n";
  out << "name " << net.name << "\n";
  out << "input " << net.in_shape.c << " " << net.in_shape.h << " "
      << net.in_shape.w << "\n";
  out << "head " << (net.head == Head::Softmax ? "softmax" : "sigmoid") << " "
      << net.class_count << "\n";
  out << "seed " << net.seed << "\n";
  out << "epochs " << net.epochs_trained << "\n";
  for (const auto& l : net.layers) out << "layer " << l->spec_line() << "\n";
  out << "params " << payload.size() << "\n";
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                (unsigned long long)detail::fnv1a64(bytes.data(), bytes.size()));
  out << "checksum " << hex << "\n";
  out << "data\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw io_error("short write to " + path.string());
}

inline Network load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "warpfool-net v1")
    throw format_error("weights: bad magic line");

  Network net;
  std::size_t n_params = 0;
  std::string checksum_hex;
  bool have_head = false;
  while (std::getline(in, line)) {
    if (line == "data") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "name") {
      std::string rest;
      std::getline(ls, rest);
      net.name = rest.empty() ? "" : rest.substr(1);
    } else if (key == "input") {
      ls >> net.in_shape.c >> net.in_shape.h >> net.in_shape.w;
    } else if (key == "head") {
      std::string kind;
      ls >> kind >> net.class_count;
      if (kind == "softmax") net.head = Head::Softmax;
      else if (kind == "sigmoid") net.head = Head::Sigmoid;
      else throw format_error("weights: unknown head " + kind);
      have_head = true;
    } else if (key == "seed") {
      ls >> net.seed;
    } else if (key == "epochs") {
      ls >> net.epochs_trained;
    } else if (key == "layer") {
      std::string kind;
      ls >> kind;
      if (kind == "conv2d") {
        int ic, oc, k, s, p;
        if (!(ls >> ic >> oc >> k >> s >> p)) throw format_error("weights: bad conv2d");
        net.layers.push_back(std::make_unique<Conv2D>(ic, oc, k, s, p));
      } else if (kind == "avgpool") {
        int k;
        if (!(ls >> k)) throw format_error("weights: bad avgpool");
        net.layers.push_back(std::make_unique<AvgPool2D>(k));
      } else if (kind == "relu") {
        net.layers.push_back(std::make_unique<ReLU>());
      } else if (kind == "flatten") {
        net.layers.push_back(std::make_unique<Flatten>());
      } else if (kind == "dense") {
        int i, o;
        if (!(ls >> i >> o)) throw format_error("weights: bad dense");
        net.layers.push_back(std::make_unique<Dense>(i, o));
      } else if (kind == "sigmoid") {
        net.layers.push_back(std::make_unique<Sigmoid>());
      } else {
        throw format_error("weights: unknown layer " + kind);
      }
    } else if (key == "params") {
      ls >> n_params;
    } else if (key == "checksum") {
      ls >> checksum_hex;
    } else if (!key.empty()) {
      throw format_error("weights: unknown header key " + key);
    }
  }
  if (!have_head) throw format_error("weights: missing head line");
  if (net.param_count() != n_params)
    throw format_error("weights: header params inconsistent with layer list");

  std::vector<unsigned char> bytes(n_params * 8);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size())))
    throw format_error("weights: truncated payload");
  char extra;
  if (in.read(&extra, 1)) throw format_error("weights: trailing bytes after payload");

  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                (unsigned long long)detail::fnv1a64(bytes.data(), bytes.size()));
  if (checksum_hex != hex) throw format_error("weights: checksum mismatch");

  std::size_t cursor = 0;
  for (auto& l : net.layers) {
    auto p = l->params();
    for (double& x : p) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= std::uint64_t(bytes[cursor * 8 + std::size_t(b)]) << (8 * b);
      std::memcpy(&x, &bits, 8);
      ++cursor;
    }
  }
  // Sanity: the layer chain must accept the declared input shape.
  (void)net.logits_shape();
  return net;
}

}  // namespace warpfool::nn

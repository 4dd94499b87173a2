#include "xlsum/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "xlsum/errors.hpp"

namespace xlsum::nn {

std::string to_string(const Shape& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" +
         std::to_string(s.channels);
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::relu: return "relu";
    case LayerKind::dense: return "dense";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
    case LayerKind::softmax: return "softmax";
  }
  return "unknown";
}

Tensor::Tensor(int batch, Shape shape)
    : batch_(batch),
      shape_(shape),
      data_(static_cast<std::size_t>(batch) * static_cast<std::size_t>(shape.size()), 0.0) {}

std::span<double> Tensor::sample(int n) {
  const auto stride = static_cast<std::size_t>(shape_.size());
  return std::span<double>(data_).subspan(static_cast<std::size_t>(n) * stride, stride);
}

std::span<const double> Tensor::sample(int n) const {
  const auto stride = static_cast<std::size_t>(shape_.size());
  return std::span<const double>(data_).subspan(static_cast<std::size_t>(n) * stride, stride);
}

LayerSpec LayerSpec::conv2d(int filters, int kernel_h, int kernel_w,
                            int in_channels) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.filters = filters;
  s.kernel_h = kernel_h;
  s.kernel_w = kernel_w;
  s.in_channels = in_channels;
  return s;
}

LayerSpec LayerSpec::batchnorm(int channels) {
  LayerSpec s;
  s.kind = LayerKind::batchnorm;
  s.channels = channels;
  return s;
}

LayerSpec LayerSpec::maxpool(int pool_h, int pool_w) {
  LayerSpec s;
  s.kind = LayerKind::maxpool;
  s.pool_h = pool_h;
  s.pool_w = pool_w;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::relu;
  return s;
}

LayerSpec LayerSpec::dense(int out, int in) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.in = in;
  s.out = out;
  return s;
}

LayerSpec LayerSpec::dropout(double p) {
  LayerSpec s;
  s.kind = LayerKind::dropout;
  s.p = p;
  return s;
}

LayerSpec LayerSpec::flatten(int classes, int in) {
  LayerSpec s = dense(classes, in);
  s.kind = LayerKind::flatten;
  return s;
}

LayerSpec LayerSpec::softmax() {
  LayerSpec s;
  s.kind = LayerKind::softmax;
  return s;
}

std::size_t LayerSpec::learnable_count() const {
  switch (kind) {
    case LayerKind::conv2d:
      return static_cast<std::size_t>(filters) * kernel_h * kernel_w * in_channels +
             static_cast<std::size_t>(filters);
    case LayerKind::batchnorm:
      return 2 * static_cast<std::size_t>(channels);
    case LayerKind::dense:
    case LayerKind::flatten:
      return static_cast<std::size_t>(in) * out + static_cast<std::size_t>(out);
    default:
      return 0;
  }
}

namespace {

constexpr double kBatchnormEpsilon = 1e-5;
constexpr double kBatchnormMomentum = 0.9;

void require_shape(const Tensor& x, Shape expected, const char* who) {
  if (!(x.shape() == expected)) {
    throw ShapeMismatch(std::string(who) + ": expected " + to_string(expected) +
                        ", got " + to_string(x.shape()));
  }
}

void he_init(std::vector<double>& w, int fan_in, Rng& rng) {
  const double std_dev = std::sqrt(2.0 / std::max(fan_in, 1));
  for (double& v : w) v = std_dev * rng.normal();
}

class Conv2d final : public Layer {
 public:
  Conv2d(LayerSpec spec, Shape in, Rng& init) : spec_(spec), in_(in) {
    if (spec_.in_channels == 0) spec_.in_channels = in.channels;
    if (spec_.in_channels != in.channels || spec_.filters < 1 ||
        spec_.kernel_h < 1 || spec_.kernel_w < 1 ||
        spec_.kernel_h > in.height || spec_.kernel_w > in.width) {
      throw ShapeMismatch("conv2d: kernel does not fit input " + to_string(in));
    }
    out_ = {in.height - spec_.kernel_h + 1, in.width - spec_.kernel_w + 1,
            spec_.filters};
    weights_.resize(static_cast<std::size_t>(spec_.filters) * kernel_size());
    bias_.assign(static_cast<std::size_t>(spec_.filters), 0.0);
    he_init(weights_, static_cast<int>(kernel_size()), init);
    grad_w_.assign(weights_.size(), 0.0);
    grad_b_.assign(bias_.size(), 0.0);
  }

  const LayerSpec& spec() const override { return spec_; }
  Shape input_shape() const override { return in_; }
  Shape output_shape() const override { return out_; }

  Tensor forward(const Tensor& x, Mode, Rng*) override {
    input_ = x;
    return infer(x);
  }

  Tensor infer(const Tensor& x) const override {
    require_shape(x, in_, "conv2d");
    Tensor y(x.batch(), out_);
    const int c_in = in_.channels;
    for (int n = 0; n < x.batch(); ++n) {
      for (int oy = 0; oy < out_.height; ++oy) {
        for (int ox = 0; ox < out_.width; ++ox) {
          for (int f = 0; f < spec_.filters; ++f) {
            double acc = bias_[static_cast<std::size_t>(f)];
            const double* w = &weights_[static_cast<std::size_t>(f) * kernel_size()];
            for (int ky = 0; ky < spec_.kernel_h; ++ky) {
              for (int kx = 0; kx < spec_.kernel_w; ++kx) {
                const double* xp = &x.at(n, oy + ky, ox + kx, 0);
                for (int c = 0; c < c_in; ++c) acc += w[c] * xp[c];
                w += c_in;
              }
            }
            y.at(n, oy, ox, f) = acc;
          }
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& g) override {
    Tensor dx(input_.batch(), in_);
    const int c_in = in_.channels;
    for (int n = 0; n < g.batch(); ++n) {
      for (int oy = 0; oy < out_.height; ++oy) {
        for (int ox = 0; ox < out_.width; ++ox) {
          for (int f = 0; f < spec_.filters; ++f) {
            const double go = g.at(n, oy, ox, f);
            if (go == 0.0) continue;
            grad_b_[static_cast<std::size_t>(f)] += go;
            const std::size_t base = static_cast<std::size_t>(f) * kernel_size();
            const double* w = &weights_[base];
            double* gw = &grad_w_[base];
            for (int ky = 0; ky < spec_.kernel_h; ++ky) {
              for (int kx = 0; kx < spec_.kernel_w; ++kx) {
                const double* xp = &input_.at(n, oy + ky, ox + kx, 0);
                double* dxp = &dx.at(n, oy + ky, ox + kx, 0);
                for (int c = 0; c < c_in; ++c) {
                  gw[c] += go * xp[c];
                  dxp[c] += go * w[c];
                }
                w += c_in;
                gw += c_in;
              }
            }
          }
        }
      }
    }
    return dx;
  }

  std::vector<ParamView> params() override {
    return {{weights_, grad_w_, true}, {bias_, grad_b_, false}};
  }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Conv2d>(*this);
  }

 private:
  std::size_t kernel_size() const {
    return static_cast<std::size_t>(spec_.kernel_h) * spec_.kernel_w * spec_.in_channels;
  }
  LayerSpec spec_;
  Shape in_;
  Shape out_;
  std::vector<double> weights_;  // [filter][ky][kx][channel]
  std::vector<double> bias_;
  std::vector<double> grad_w_;
  std::vector<double> grad_b_;
  Tensor input_;
};

class BatchNorm final : public Layer {
 public:
  BatchNorm(LayerSpec spec, Shape in) : spec_(spec), in_(in) {
    if (spec_.channels == 0) spec_.channels = in.channels;
    if (spec_.channels != in.channels) {
      throw ShapeMismatch("batchnorm: channel count differs from input");
    }
    const auto c = static_cast<std::size_t>(spec_.channels);
    // params_ = [offset..., scale...]
    params_.assign(2 * c, 0.0);
    std::fill(params_.begin() + static_cast<long>(c), params_.end(), 1.0);
    grads_.assign(2 * c, 0.0);
    running_.assign(2 * c, 0.0);
    std::fill(running_.begin() + static_cast<long>(c), running_.end(), 1.0);
  }

  const LayerSpec& spec() const override { return spec_; }
  Shape input_shape() const override { return in_; }
  Shape output_shape() const override { return in_; }

  Tensor forward(const Tensor& x, Mode mode, Rng*) override {
    require_shape(x, in_, "batchnorm");
    mode_ = mode;
    if (mode == Mode::infer) {
      normalized_ = normalize(x, running_mean(), running_var());
      return affine(normalized_);
    }
    const int c_count = in_.channels;
    const std::size_t per_channel =
        static_cast<std::size_t>(x.batch()) * in_.height * in_.width;
    std::vector<double> mean(static_cast<std::size_t>(c_count), 0.0);
    std::vector<double> var(static_cast<std::size_t>(c_count), 0.0);
    const auto& d = x.data();
    for (std::size_t i = 0; i < d.size(); ++i) mean[i % c_count] += d[i];
    for (double& m : mean) m /= static_cast<double>(per_channel);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double dev = d[i] - mean[i % c_count];
      var[i % c_count] += dev * dev;
    }
    for (double& v : var) v /= static_cast<double>(per_channel);
    normalized_ = normalize(x, mean, var);
    inv_std_.resize(var.size());
    for (std::size_t c = 0; c < var.size(); ++c) {
      inv_std_[c] = 1.0 / std::sqrt(var[c] + kBatchnormEpsilon);
    }
    const auto cs = static_cast<std::size_t>(c_count);
    for (std::size_t c = 0; c < cs; ++c) {
      running_[c] = kBatchnormMomentum * running_[c] + (1.0 - kBatchnormMomentum) * mean[c];
      running_[cs + c] =
          kBatchnormMomentum * running_[cs + c] + (1.0 - kBatchnormMomentum) * var[c];
    }
    return affine(normalized_);
  }

  Tensor infer(const Tensor& x) const override {
    require_shape(x, in_, "batchnorm");
    return affine(normalize(x, running_mean(), running_var()));
  }

  Tensor backward(const Tensor& g) override {
    const auto cs = static_cast<std::size_t>(in_.channels);
    Tensor dx(g.batch(), in_);
    const auto& gd = g.data();
    const auto& xh = normalized_.data();
    std::vector<double> sum_g(cs, 0.0);
    std::vector<double> sum_gx(cs, 0.0);
    for (std::size_t i = 0; i < gd.size(); ++i) {
      sum_g[i % cs] += gd[i];
      sum_gx[i % cs] += gd[i] * xh[i];
    }
    for (std::size_t c = 0; c < cs; ++c) {
      grads_[c] += sum_g[c];
      grads_[cs + c] += sum_gx[c];
    }
    auto& dd = dx.data();
    if (mode_ == Mode::infer) {
      const auto var = running_var();
      for (std::size_t i = 0; i < gd.size(); ++i) {
        const std::size_t c = i % cs;
        dd[i] = gd[i] * params_[cs + c] / std::sqrt(var[c] + kBatchnormEpsilon);
      }
      return dx;
    }
    const double m = static_cast<double>(gd.size() / cs);
    for (std::size_t i = 0; i < gd.size(); ++i) {
      const std::size_t c = i % cs;
      dd[i] = params_[cs + c] * inv_std_[c] / m *
              (m * gd[i] - sum_g[c] - xh[i] * sum_gx[c]);
    }
    return dx;
  }

  std::vector<ParamView> params() override {
    const auto c = static_cast<std::size_t>(spec_.channels);
    std::span<double> p(params_);
    std::span<double> g(grads_);
    return {{p.subspan(0, c), g.subspan(0, c), false},
            {p.subspan(c, c), g.subspan(c, c), false}};
  }
  std::vector<std::span<double>> state() override { return {running_}; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<BatchNorm>(*this);
  }

 private:
  std::vector<double> running_mean() const {
    return {running_.begin(), running_.begin() + spec_.channels};
  }
  std::vector<double> running_var() const {
    return {running_.begin() + spec_.channels, running_.end()};
  }
  Tensor normalize(const Tensor& x, const std::vector<double>& mean,
                   const std::vector<double>& var) const {
    Tensor out(x.batch(), in_);
    const auto cs = mean.size();
    const auto& d = x.data();
    auto& o = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const std::size_t c = i % cs;
      o[i] = (d[i] - mean[c]) / std::sqrt(var[c] + kBatchnormEpsilon);
    }
    return out;
  }
  Tensor affine(const Tensor& xh) const {
    Tensor out(xh.batch(), in_);
    const auto cs = static_cast<std::size_t>(spec_.channels);
    const auto& d = xh.data();
    auto& o = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const std::size_t c = i % cs;
      o[i] = params_[cs + c] * d[i] + params_[c];
    }
    return out;
  }

  LayerSpec spec_;
  Shape in_;
  std::vector<double> params_;
  std::vector<double> grads_;
  std::vector<double> running_;  // [mean..., variance...]
  Mode mode_ = Mode::infer;
  Tensor normalized_;
  std::vector<double> inv_std_;
};

class MaxPool final : public Layer {
 public:
  MaxPool(LayerSpec spec, Shape in) : spec_(spec), in_(in) {
    if (spec_.pool_h < 1 || spec_.pool_w < 1 || spec_.pool_h > in.height ||
        spec_.pool_w > in.width) {
      throw ShapeMismatch("maxpool: window does not fit input " + to_string(in));
    }
    out_ = {in.height / spec_.pool_h, in.width / spec_.pool_w, in.channels};
  }

  const LayerSpec& spec() const override { return spec_; }
  Shape input_shape() const override { return in_; }
  Shape output_shape() const override { return out_; }

  Tensor forward(const Tensor& x, Mode, Rng*) override {
    return pool(x, &argmax_);
  }
  Tensor infer(const Tensor& x) const override { return pool(x, nullptr); }

  Tensor backward(const Tensor& g) override {
    Tensor dx(g.batch(), in_);
    for (std::size_t i = 0; i < g.data().size(); ++i) {
      dx.data()[argmax_[i]] += g.data()[i];
    }
    return dx;
  }

  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<MaxPool>(*this);
  }

 private:
  Tensor pool(const Tensor& x, std::vector<std::size_t>* winners) const {
    require_shape(x, in_, "maxpool");
    Tensor y(x.batch(), out_);
    if (winners != nullptr) winners->assign(y.size(), 0);
    std::size_t o = 0;
    for (int n = 0; n < x.batch(); ++n) {
      for (int oy = 0; oy < out_.height; ++oy) {
        for (int ox = 0; ox < out_.width; ++ox) {
          for (int c = 0; c < out_.channels; ++c, ++o) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_index = 0;
            for (int py = 0; py < spec_.pool_h; ++py) {
              for (int px = 0; px < spec_.pool_w; ++px) {
                const int iy = oy * spec_.pool_h + py;
                const int ix = ox * spec_.pool_w + px;
                const double v = x.at(n, iy, ix, c);
                if (v > best) {
                  best = v;
                  best_index = static_cast<std::size_t>(
                      ((n * in_.height + iy) * in_.width + ix) * in_.channels + c);
                }
              }
            }
            y.data()[o] = best;
            if (winners != nullptr) (*winners)[o] = best_index;
          }
        }
      }
    }
    return y;
  }

  LayerSpec spec_;
  Shape in_;
  Shape out_;
  std::vector<std::size_t> argmax_;
};

class Relu final : public Layer {
 public:
  Relu(LayerSpec spec, Shape in) : spec_(spec), in_(in) {}

  const LayerSpec& spec() const override { return spec_; }
  Shape input_shape() const override { return in_; }
  Shape output_shape() const override { return in_; }

  Tensor forward(const Tensor& x, Mode, Rng*) override {
    input_ = x;
    return infer(x);
  }
  Tensor infer(const Tensor& x) const override {
    require_shape(x, in_, "relu");
    Tensor y = x;
    for (double& v : y.data()) v = std::max(v, 0.0);
    return y;
  }
  Tensor backward(const Tensor& g) override {
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.data().size(); ++i) {
      if (!(input_.data()[i] > 0.0)) dx.data()[i] = 0.0;
    }
    return dx;
  }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Relu>(*this);
  }

 private:
  LayerSpec spec_;
  Shape in_;
  Tensor input_;
};

class Dense final : public Layer {
 public:
  Dense(LayerSpec spec, Shape in, Rng& init) : spec_(spec), in_(in) {
    if (spec_.in == 0) spec_.in = in.size();
    if (spec_.in != in.size() || spec_.out < 1) {
      throw ShapeMismatch(to_string(spec_.kind) + ": input size " +
                          std::to_string(in.size()) + " differs from " +
                          std::to_string(spec_.in));
    }
    out_ = {1, 1, spec_.out};
    weights_.resize(static_cast<std::size_t>(spec_.in) * spec_.out);
    bias_.assign(static_cast<std::size_t>(spec_.out), 0.0);
    he_init(weights_, spec_.in, init);
    grad_w_.assign(weights_.size(), 0.0);
    grad_b_.assign(bias_.size(), 0.0);
  }

  const LayerSpec& spec() const override { return spec_; }
  Shape input_shape() const override { return in_; }
  Shape output_shape() const override { return out_; }

  Tensor forward(const Tensor& x, Mode, Rng*) override {
    input_ = x;
    return infer(x);
  }

  Tensor infer(const Tensor& x) const override {
    require_shape(x, in_, to_string(spec_.kind).c_str());
    Tensor y(x.batch(), out_);
    const auto in = static_cast<std::size_t>(spec_.in);
    for (int n = 0; n < x.batch(); ++n) {
      const auto xs = x.sample(n);
      auto ys = y.sample(n);
      for (int o = 0; o < spec_.out; ++o) {
        const double* w = &weights_[static_cast<std::size_t>(o) * in];
        double acc = bias_[static_cast<std::size_t>(o)];
        for (std::size_t i = 0; i < in; ++i) acc += w[i] * xs[i];
        ys[static_cast<std::size_t>(o)] = acc;
      }
    }
    return y;
  }

  Tensor backward(const Tensor& g) override {
    Tensor dx(g.batch(), in_);
    const auto in = static_cast<std::size_t>(spec_.in);
    for (int n = 0; n < g.batch(); ++n) {
      const auto xs = input_.sample(n);
      const auto gs = g.sample(n);
      auto dxs = dx.sample(n);
      for (int o = 0; o < spec_.out; ++o) {
        const double go = gs[static_cast<std::size_t>(o)];
        if (go == 0.0) continue;
        grad_b_[static_cast<std::size_t>(o)] += go;
        const double* w = &weights_[static_cast<std::size_t>(o) * in];
        double* gw = &grad_w_[static_cast<std::size_t>(o) * in];
        for (std::size_t i = 0; i < in; ++i) {
          gw[i] += go * xs[i];
          dxs[i] += go * w[i];
        }
      }
    }
    return dx;
  }

  std::vector<ParamView> params() override {
    return {{weights_, grad_w_, true}, {bias_, grad_b_, false}};
  }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Dense>(*this);
  }

 private:
  LayerSpec spec_;
  Shape in_;
  Shape out_;
  std::vector<double> weights_;  // [out][in]
  std::vector<double> bias_;
  std::vector<double> grad_w_;
  std::vector<double> grad_b_;
  Tensor input_;
};

/// Inverted dropout: kept units are scaled by 1 / (1 - p) at train time.
class Dropout final : public Layer {
 public:
  Dropout(LayerSpec spec, Shape in) : spec_(spec), in_(in) {
    if (!(spec_.p >= 0.0 && spec_.p < 1.0)) {
      throw InvalidConfig("dropout probability must lie in [0, 1)");
    }
  }

  const LayerSpec& spec() const override { return spec_; }
  Shape input_shape() const override { return in_; }
  Shape output_shape() const override { return in_; }

  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override {
    require_shape(x, in_, "dropout");
    if (mode == Mode::infer) {
      mask_.assign(x.size(), 1.0);
      return x;
    }
    if (rng == nullptr) throw Error("dropout: train mode needs a random source");
    const double keep_scale = 1.0 / (1.0 - spec_.p);
    mask_.resize(x.size());
    for (double& m : mask_) m = rng->uniform() < spec_.p ? 0.0 : keep_scale;
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] *= mask_[i];
    return y;
  }
  Tensor infer(const Tensor& x) const override {
    require_shape(x, in_, "dropout");
    return x;
  }
  Tensor backward(const Tensor& g) override {
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] *= mask_[i];
    return dx;
  }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Dropout>(*this);
  }

 private:
  LayerSpec spec_;
  Shape in_;
  std::vector<double> mask_;
};

class Softmax final : public Layer {
 public:
  Softmax(LayerSpec spec, Shape in) : spec_(spec), in_(in) {}

  const LayerSpec& spec() const override { return spec_; }
  Shape input_shape() const override { return in_; }
  Shape output_shape() const override { return in_; }

  Tensor forward(const Tensor& x, Mode, Rng*) override {
    output_ = infer(x);
    return output_;
  }
  Tensor infer(const Tensor& x) const override {
    require_shape(x, in_, "softmax");
    return nn::softmax(x);
  }
  Tensor backward(const Tensor& g) override {
    Tensor dx(g.batch(), in_);
    for (int n = 0; n < g.batch(); ++n) {
      const auto p = output_.sample(n);
      const auto gs = g.sample(n);
      auto d = dx.sample(n);
      double dot = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) dot += gs[i] * p[i];
      for (std::size_t i = 0; i < p.size(); ++i) d[i] = p[i] * (gs[i] - dot);
    }
    return dx;
  }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Softmax>(*this);
  }

 private:
  LayerSpec spec_;
  Shape in_;
  Tensor output_;
};

}  // namespace

std::unique_ptr<Layer> make_layer(LayerSpec spec, Shape input, Rng& init) {
  switch (spec.kind) {
    case LayerKind::conv2d: return std::make_unique<Conv2d>(spec, input, init);
    case LayerKind::batchnorm: return std::make_unique<BatchNorm>(spec, input);
    case LayerKind::maxpool: return std::make_unique<MaxPool>(spec, input);
    case LayerKind::relu: return std::make_unique<Relu>(spec, input);
    case LayerKind::dense:
    case LayerKind::flatten: return std::make_unique<Dense>(spec, input, init);
    case LayerKind::dropout: return std::make_unique<Dropout>(spec, input);
    case LayerKind::softmax: return std::make_unique<Softmax>(spec, input);
  }
  throw FormatError("unknown layer kind");
}

Tensor softmax(const Tensor& logits) {
  Tensor out(logits.batch(), logits.shape());
  for (int n = 0; n < logits.batch(); ++n) {
    const auto z = logits.sample(n);
    auto p = out.sample(n);
    const double top = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      p[i] = std::exp(z[i] - top);
      total += p[i];
    }
    for (double& v : p) v /= total;
  }
  return out;
}

double cross_entropy(std::span<const double> probabilities, int label) {
  return -std::log(std::max(probabilities[static_cast<std::size_t>(label)], 1e-12));
}

Network::Network(Shape input, const std::vector<LayerSpec>& specs,
                 std::uint64_t init_seed)
    : input_(input) {
  if (specs.empty() || specs.back().kind != LayerKind::softmax) {
    throw ShapeMismatch("network must end with a softmax layer");
  }
  Rng init(init_seed);
  Shape shape = input;
  for (const LayerSpec& spec : specs) {
    if (shape.size() < 1) throw ShapeMismatch("layer input has no elements");
    layers_.push_back(make_layer(spec, shape, init));
    shape = layers_.back()->output_shape();
  }
  if (shape.height != 1 || shape.width != 1) {
    throw ShapeMismatch("softmax must act on a flat class vector");
  }
}

Network::Network(const Network& other) : input_(other.input_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

int Network::classes() const { return layers_.back()->output_shape().size(); }

std::vector<LayerSpec> Network::specs() const {
  std::vector<LayerSpec> out;
  for (const auto& l : layers_) out.push_back(l->spec());
  return out;
}

void Network::check_input(const Tensor& x) const {
  if (!(x.shape() == input_)) {
    throw ShapeMismatch("network input: expected " + to_string(input_) +
                        ", got " + to_string(x.shape()));
  }
}

Tensor Network::forward(const Tensor& x, Mode mode, Rng* rng) {
  check_input(x);
  Tensor a = x;
  for (auto& l : layers_) a = l->forward(a, mode, rng);
  last_probabilities_ = a;
  return a;
}

Tensor Network::predict(const Tensor& x) const {
  check_input(x);
  Tensor a = x;
  for (const auto& l : layers_) a = l->infer(a);
  return a;
}

void Network::zero_grad() {
  for (auto& l : layers_) {
    for (auto& p : l->params()) std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }
}

void Network::backward(std::span<const int> labels) {
  const Tensor& p = last_probabilities_;
  if (static_cast<int>(labels.size()) != p.batch()) {
    throw ShapeMismatch("backward: label count differs from batch");
  }
  Tensor g = p;
  const double inv_batch = 1.0 / p.batch();
  for (int n = 0; n < p.batch(); ++n) {
    auto gs = g.sample(n);
    gs[static_cast<std::size_t>(labels[static_cast<std::size_t>(n)])] -= 1.0;
    for (double& v : gs) v *= inv_batch;
  }
  // The softmax Jacobian is folded into (p - onehot).
  for (std::size_t i = layers_.size() - 1; i-- > 0;) g = layers_[i]->backward(g);
}

std::vector<ParamView> Network::parameters() {
  std::vector<ParamView> out;
  for (auto& l : layers_) {
    for (auto& p : l->params()) out.push_back(p);
  }
  return out;
}

std::vector<std::span<double>> Network::state() {
  std::vector<std::span<double>> out;
  for (auto& l : layers_) {
    for (auto& s : l->state()) out.push_back(s);
  }
  return out;
}

double Network::l1_norm() const {
  double total = 0.0;
  for (const auto& l : layers_) {
    for (const auto& p : const_cast<Layer&>(*l).params()) {
      if (!p.penalized) continue;
      for (double w : p.value) total += std::abs(w);
    }
  }
  return total;
}

void Network::save(io::Writer& w) const {
  w.i32(input_.height);
  w.i32(input_.width);
  w.i32(input_.channels);
  w.u32(static_cast<std::uint32_t>(layers_.size()));
  for (const auto& l : layers_) {
    const LayerSpec& s = l->spec();
    w.u32(static_cast<std::uint32_t>(s.kind));
    for (int v : {s.filters, s.kernel_h, s.kernel_w, s.in_channels, s.channels,
                  s.pool_h, s.pool_w, s.in, s.out}) {
      w.i32(v);
    }
    w.f64(s.p);
  }
  auto& self = const_cast<Network&>(*this);
  for (const auto& p : self.parameters()) {
    w.u64(p.value.size());
    for (double v : p.value) w.f64(v);
  }
  for (const auto& s : self.state()) {
    w.u64(s.size());
    for (double v : s) w.f64(v);
  }
}

Network Network::load(io::Reader& r) {
  Shape input;
  input.height = r.i32();
  input.width = r.i32();
  input.channels = r.i32();
  const std::uint32_t count = r.u32();
  if (input.size() < 1 || count == 0 || count > 4096) {
    throw FormatError("corrupt network header");
  }
  std::vector<LayerSpec> specs;
  for (std::uint32_t i = 0; i < count; ++i) {
    LayerSpec s;
    const std::uint32_t kind = r.u32();
    if (kind < 1 || kind > 8) throw FormatError("unknown layer kind in checkpoint");
    s.kind = static_cast<LayerKind>(kind);
    for (int* v : {&s.filters, &s.kernel_h, &s.kernel_w, &s.in_channels,
                   &s.channels, &s.pool_h, &s.pool_w, &s.in, &s.out}) {
      *v = r.i32();
    }
    s.p = r.f64();
    specs.push_back(s);
  }
  Network net(input, specs, 0);
  auto read_block = [&r](std::span<double> dst) {
    if (r.u64() != dst.size()) throw FormatError("parameter block size mismatch");
    for (double& v : dst) v = r.f64();
  };
  for (auto& p : net.parameters()) read_block(p.value);
  for (auto& s : net.state()) read_block(s);
  return net;
}

bool operator==(const Network& a, const Network& b) {
  if (!(a.input_ == b.input_) || a.specs() != b.specs()) return false;
  auto& ma = const_cast<Network&>(a);
  auto& mb = const_cast<Network&>(b);
  const auto pa = ma.parameters();
  const auto pb = mb.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!std::equal(pa[i].value.begin(), pa[i].value.end(), pb[i].value.begin())) {
      return false;
    }
  }
  const auto sa = ma.state();
  const auto sb = mb.state();
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (!std::equal(sa[i].begin(), sa[i].end(), sb[i].begin())) return false;
  }
  return true;
}

double loss(std::span<const double> probabilities, int label,
            const Network& net, double l1_factor) {
  return cross_entropy(probabilities, label) + l1_factor * net.l1_norm();
}

int argmax(std::span<const double> values, std::span<const int> allowed) {
  int best = -1;
  double best_value = -std::numeric_limits<double>::infinity();
  auto consider = [&](int i) {
    const double v = values[static_cast<std::size_t>(i)];
    if (best < 0 || v > best_value || (v == best_value && i < best)) {
      best = i;
      best_value = v;
    }
  };
  if (allowed.empty()) {
    for (int i = 0; i < static_cast<int>(values.size()); ++i) consider(i);
  } else {
    for (int i : allowed) consider(i);
  }
  return best;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidConfig("batch_size must be at least 1");
  if (!(learning_rate >= 0.0)) throw InvalidConfig("learning_rate must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw InvalidConfig("dropout must lie in [0, 1)");
  }
  if (!(l1_factor >= 0.0)) throw InvalidConfig("l1_factor must be >= 0");
  if (epochs < 0) throw InvalidConfig("epochs must be >= 0");
}

Tensor LabeledSet::batch(std::span<const std::size_t> indices) const {
  Tensor t(static_cast<int>(indices.size()), shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& src = inputs.at(indices[i]);
    if (static_cast<int>(src.size()) != shape.size()) {
      throw ShapeMismatch("labeled input has the wrong size");
    }
    std::copy(src.begin(), src.end(), t.sample(static_cast<int>(i)).begin());
  }
  return t;
}

double accuracy(const Network& net, const LabeledSet& set, bool masked) {
  if (set.size() == 0) throw InvalidConfig("accuracy of an empty set");
  constexpr std::size_t kChunk = 512;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += kChunk) {
    const std::size_t end = std::min(set.size(), start + kChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor probs = net.predict(set.batch(idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::span<const int> allowed;
      if (masked && !set.allowed.empty()) allowed = set.allowed[idx[i]];
      if (argmax(probs.sample(static_cast<int>(i)), allowed) == set.labels[idx[i]]) {
        ++correct;
      }
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(set.size());
}

namespace {

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;
};

void apply_update(std::vector<ParamView>& params, const TrainConfig& cfg,
                  AdamState& adam) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  if (cfg.optimizer == Optimizer::adam && adam.m.empty()) {
    for (const auto& p : params) {
      adam.m.emplace_back(p.value.size(), 0.0);
      adam.v.emplace_back(p.value.size(), 0.0);
    }
  }
  ++adam.step;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam.step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam.step));
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& p = params[b];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double g = p.grad[i];
      if (p.penalized && cfg.l1_factor > 0.0) {
        const double w = p.value[i];
        g += cfg.l1_factor * static_cast<double>((w > 0.0) - (w < 0.0));
      }
      if (cfg.optimizer == Optimizer::sgd) {
        p.value[i] -= cfg.learning_rate * g;
      } else {
        double& m = adam.m[b][i];
        double& v = adam.v[b][i];
        m = kBeta1 * m + (1.0 - kBeta1) * g;
        v = kBeta2 * v + (1.0 - kBeta2) * g * g;
        p.value[i] -= cfg.learning_rate * (m / c1) / (std::sqrt(v / c2) + kEps);
      }
    }
  }
}

}  // namespace

std::vector<EpochStats> train(Network& net, const LabeledSet& train_set,
                              const LabeledSet& validation_set,
                              const TrainConfig& config) {
  config.validate();
  if (train_set.size() == 0 || validation_set.size() == 0) {
    throw InvalidConfig("training and validation sets must be non-empty");
  }
  if (!(train_set.shape == net.input_shape()) ||
      !(validation_set.shape == net.input_shape())) {
    throw ShapeMismatch("dataset shape differs from network input");
  }
  const Rng root(config.seed);
  Rng dropout_rng = root.split("dropout");
  AdamState adam;
  auto params = net.parameters();

  std::vector<std::size_t> order(train_set.size());
  std::vector<EpochStats> history;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = root.split(static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          shuffle.uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(order[i - 1], order[j]);
    }
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(train_set.labels[i]);

      const Tensor probs = net.forward(train_set.batch(idx), Mode::train, &dropout_rng);
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        batch_loss += cross_entropy(probs.sample(static_cast<int>(i)), labels[i]);
      }
      loss_sum += batch_loss;
      batch_loss = batch_loss / static_cast<double>(idx.size()) +
                   config.l1_factor * net.l1_norm();
      if (!std::isfinite(batch_loss)) {
        throw Diverged("training loss became non-finite in epoch " +
                       std::to_string(epoch));
      }
      net.zero_grad();
      net.backward(labels);
      apply_update(params, config, adam);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = loss_sum / static_cast<double>(order.size()) +
                 config.l1_factor * net.l1_norm();
    stats.train_accuracy = accuracy(net, train_set);
    stats.validation_accuracy = accuracy(net, validation_set);
    stats.validation_masked_accuracy = accuracy(net, validation_set, true);
    if (!std::isfinite(stats.loss)) {
      throw Diverged("training loss became non-finite in epoch " +
                     std::to_string(epoch));
    }
    history.push_back(stats);
  }
  return history;
}

std::vector<LayerSpec> default_architecture(int classes, double dropout) {
  return {
      LayerSpec::conv2d(16, 5, 2),
      LayerSpec::batchnorm(),
      LayerSpec::maxpool(2, 1),
      LayerSpec::relu(),
      LayerSpec::conv2d(8, 3, 2),
      LayerSpec::batchnorm(),
      LayerSpec::relu(),
      LayerSpec::dense(128),
      LayerSpec::relu(),
      LayerSpec::dropout(dropout),
      LayerSpec::dense(32),
      LayerSpec::relu(),
      LayerSpec::flatten(classes),
      LayerSpec::softmax(),
  };
}

}  // namespace xlsum::nn

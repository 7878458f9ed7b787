#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rank1/layers.hpp"

namespace rank1 {

enum class LayerKind { conv, relu, batchnorm, maxpool, dropout, fc };

inline std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::dropout: return "dropout";
    case LayerKind::fc: return "fc";
  }
  return "?";
}

/// One entry of a declarative architecture.
///   conv       units = filters, kernel_h x kernel_w, padding, stride
///   fc         units = output features
///   dropout    prob
///   batchnorm  momentum, epsilon
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t units = 0;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  PaddingMode padding = PaddingMode::same;
  std::size_t stride = 1;
  double prob = 0.5;
  double momentum = 0.9;
  double epsilon = 1e-5;

  static LayerSpec conv(std::size_t filters, std::size_t kh = 3, std::size_t kw = 3,
                        PaddingMode padding = PaddingMode::same, std::size_t stride = 1) {
    LayerSpec s;
    s.kind = LayerKind::conv;
    s.units = filters;
    s.kernel_h = kh;
    s.kernel_w = kw;
    s.padding = padding;
    s.stride = stride;
    return s;
  }
  static LayerSpec fc(std::size_t units) {
    LayerSpec s;
    s.kind = LayerKind::fc;
    s.units = units;
    return s;
  }
  static LayerSpec dropout(double prob) {
    LayerSpec s;
    s.kind = LayerKind::dropout;
    s.prob = prob;
    return s;
  }
  static LayerSpec relu() { return {}; }
  static LayerSpec maxpool() {
    LayerSpec s;
    s.kind = LayerKind::maxpool;
    return s;
  }
  static LayerSpec batchnorm() {
    LayerSpec s;
    s.kind = LayerKind::batchnorm;
    return s;
  }
};

/// Ordered architecture plus the input geometry and class count.
/// A flatten step is implied before the first fully-connected layer.
struct NetworkSpec {
  std::string name = "custom";
  std::size_t in_channels = 1;
  std::size_t in_height = 28;
  std::size_t in_width = 28;
  std::size_t classes = 10;
  std::vector<LayerSpec> layers;

  Shape input_shape() const { return {in_channels, in_height, in_width}; }
};

/// Check that the spec describes a runnable network and return the per-sample
/// shape after every layer.
inline std::vector<Shape> validate(const NetworkSpec& spec) {
  if (spec.layers.empty()) throw ShapeError("network '" + spec.name + "' has no layers");
  if (spec.in_channels == 0 || spec.in_height == 0 || spec.in_width == 0) {
    throw ShapeError("network input extents must be positive");
  }
  if (spec.classes < 2) throw ValueError("network needs at least two classes");
  std::vector<Shape> shapes;
  Shape cur = spec.input_shape();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) + ")";
    switch (l.kind) {
      case LayerKind::conv: {
        if (cur.size() != 3) throw ShapeError(where + ": convolution after a fully-connected layer");
        if (l.units == 0 || l.kernel_h == 0 || l.kernel_w == 0 || l.stride == 0) {
          throw ShapeError(where + ": filters, kernel and stride must be positive");
        }
        try {
          const AxisWindow rows(cur[1], l.kernel_h, l.padding, l.stride);
          const AxisWindow cols(cur[2], l.kernel_w, l.padding, l.stride);
          cur = {l.units, rows.out, cols.out};
        } catch (const Error& e) {
          throw ShapeError(where + ": " + e.what());
        }
        break;
      }
      case LayerKind::maxpool:
        if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2) {
          throw ShapeError(where + ": spatial size " + to_string(cur) + " cannot be halved");
        }
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      case LayerKind::fc:
        if (l.units == 0) throw ShapeError(where + ": zero output features");
        cur = {l.units};
        break;
      case LayerKind::dropout:
        if (!(l.prob >= 0.0 && l.prob < 1.0)) throw ValueError(where + ": probability must lie in [0, 1)");
        break;
      case LayerKind::batchnorm:
        if (!(l.epsilon > 0.0)) throw ValueError(where + ": epsilon must be positive");
        break;
      case LayerKind::relu:
        break;
    }
    shapes.push_back(cur);
  }
  if (cur.size() != 1 || cur[0] != spec.classes) {
    throw ShapeError("network output " + to_string(cur) + " does not match " +
                     std::to_string(spec.classes) + " classes");
  }
  return shapes;
}

/// Factored versus dense weight counts of a whole network (biases and
/// non-convolution parameters counted identically on both sides).
struct NetworkParamCount {
  std::size_t conv_factored = 0;
  std::size_t conv_dense = 0;
  std::size_t other = 0;

  std::size_t factored_total() const { return conv_factored + other; }
  std::size_t dense_total() const { return conv_dense + other; }
};

/// A built network: the layer stack with parameters in one conv mode.
class Network {
 public:
  Network(NetworkSpec spec, ConvMode mode, std::uint64_t seed) : spec_(std::move(spec)), mode_(mode), seed_(seed) {
    const std::vector<Shape> shapes = validate(spec_);
    Rng rng(seed);
    Shape cur = spec_.input_shape();
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const LayerSpec& l = spec_.layers[i];
      switch (l.kind) {
        case LayerKind::conv: {
          ConvGeometry g{cur[0], l.units, l.kernel_h, l.kernel_w, l.padding, l.stride};
          layers_.push_back(std::make_unique<ConvLayer>(mode, g, rng));
          break;
        }
        case LayerKind::relu: layers_.push_back(std::make_unique<ReLU>()); break;
        case LayerKind::batchnorm:
          layers_.push_back(std::make_unique<BatchNorm>(cur[0], l.momentum, l.epsilon));
          break;
        case LayerKind::maxpool: layers_.push_back(std::make_unique<MaxPool2>()); break;
        case LayerKind::dropout: layers_.push_back(std::make_unique<Dropout>(l.prob, rng.split())); break;
        case LayerKind::fc:
          if (cur.size() == 3) layers_.push_back(std::make_unique<Flatten>());
          layers_.push_back(std::make_unique<FullyConnected>(shape_size(cur), l.units, rng));
          break;
      }
      cur = shapes[i];
    }
  }

  const NetworkSpec& spec() const { return spec_; }
  ConvMode mode() const { return mode_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }

  std::vector<ConvLayer*> conv_layers() {
    std::vector<ConvLayer*> out;
    for (auto& l : layers_) {
      if (auto* c = dynamic_cast<ConvLayer*>(l.get())) out.push_back(c);
    }
    return out;
  }

  /// Logits [B, classes] for a batch [B, C, H, W].
  Tensor forward(const Tensor& x, Phase phase) {
    if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != spec_.input_shape()) {
      throw ShapeError("network: input batch " + to_string(x.shape()) + " does not match " +
                       to_string(spec_.input_shape()));
    }
    Tensor a = x;
    for (auto& l : layers_) a = l->forward(a, phase);
    return a;
  }

  Tensor backward(const Tensor& dlogits) {
    Tensor g = dlogits;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void zero_grad() {
    for (auto& l : layers_) l->zero_grad();
  }

  void sgd_step(double lr, double momentum = 0.0) {
    for (auto& l : layers_) l->sgd_step(lr, momentum);
  }

  /// Every trainable tensor, named "<layer index>.<kind>.<param>".
  std::vector<ParamRef> params() { return collect(false); }

  /// Trainable tensors followed by persistent buffers.
  std::vector<ParamRef> state() { return collect(true); }

  NetworkParamCount parameter_count() {
    NetworkParamCount c;
    for (auto& l : layers_) {
      if (auto* conv = dynamic_cast<ConvLayer*>(l.get())) {
        const ParamCount pc = conv->parameter_count();
        c.conv_factored += pc.factored;
        c.conv_dense += pc.dense;
      } else {
        for (const auto& p : l->params()) c.other += p.value->size();
      }
    }
    return c;
  }

 private:
  std::vector<ParamRef> collect(bool with_buffers) {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string prefix = std::to_string(i) + "." + std::string(layers_[i]->kind()) + ".";
      for (auto p : layers_[i]->params()) {
        p.name = prefix + p.name;
        out.push_back(p);
      }
      if (!with_buffers) continue;
      for (auto p : layers_[i]->buffers()) {
        p.name = prefix + p.name;
        out.push_back(p);
      }
    }
    return out;
  }

  NetworkSpec spec_;
  ConvMode mode_;
  std::uint64_t seed_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

// ---------------------------------------------------------------------------
// Text form, one layer per line:
//
//   name mnist-small
//   input 1 28 28
//   classes 10
//   conv 16 3x3 same 1
//   relu
//   maxpool
//   dropout 0.5
//   batchnorm 0.9 1e-5
//   fc 10
// ---------------------------------------------------------------------------

inline std::string format_network_spec(const NetworkSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  os << "name " << spec.name << '\n';
  os << "input " << spec.in_channels << ' ' << spec.in_height << ' ' << spec.in_width << '\n';
  os << "classes " << spec.classes << '\n';
  for (const auto& l : spec.layers) {
    os << to_string(l.kind);
    switch (l.kind) {
      case LayerKind::conv:
        os << ' ' << l.units << ' ' << l.kernel_h << 'x' << l.kernel_w << ' ' << to_string(l.padding) << ' '
           << l.stride;
        break;
      case LayerKind::fc: os << ' ' << l.units; break;
      case LayerKind::dropout: os << ' ' << l.prob; break;
      case LayerKind::batchnorm: os << ' ' << l.momentum << ' ' << l.epsilon; break;
      default: break;
    }
    os << '\n';
  }
  return os.str();
}

inline NetworkSpec parse_network_spec(std::string_view text) {
  NetworkSpec spec;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw ParseError("network spec line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    if (word == "name") {
      if (!(ls >> spec.name)) fail("missing name");
    } else if (word == "input") {
      if (!(ls >> spec.in_channels >> spec.in_height >> spec.in_width)) fail("expected 'input C H W'");
    } else if (word == "classes") {
      if (!(ls >> spec.classes)) fail("expected 'classes K'");
    } else if (word == "conv") {
      LayerSpec l = LayerSpec::conv(0);
      std::string kernel, padding = "same";
      if (!(ls >> l.units >> kernel)) fail("expected 'conv FILTERS HxW [padding] [stride]'");
      const auto x = kernel.find('x');
      if (x == std::string::npos) fail("kernel must be written HxW");
      try {
        l.kernel_h = std::stoul(kernel.substr(0, x));
        l.kernel_w = std::stoul(kernel.substr(x + 1));
      } catch (const std::exception&) {
        fail("bad kernel '" + kernel + "'");
      }
      if (ls >> padding) {
        const auto p = parse_padding(padding);
        if (!p) fail("unknown padding '" + padding + "'");
        l.padding = *p;
        if (!(ls >> l.stride)) l.stride = 1;
      }
      spec.layers.push_back(l);
    } else if (word == "fc") {
      LayerSpec l = LayerSpec::fc(0);
      if (!(ls >> l.units)) fail("expected 'fc UNITS'");
      spec.layers.push_back(l);
    } else if (word == "dropout") {
      LayerSpec l = LayerSpec::dropout(0.5);
      if (!(ls >> l.prob)) fail("expected 'dropout PROB'");
      spec.layers.push_back(l);
    } else if (word == "batchnorm") {
      LayerSpec l = LayerSpec::batchnorm();
      if (ls >> l.momentum) ls >> l.epsilon;
      spec.layers.push_back(l);
    } else if (word == "relu") {
      spec.layers.push_back(LayerSpec::relu());
    } else if (word == "maxpool") {
      spec.layers.push_back(LayerSpec::maxpool());
    } else {
      fail("unknown entry '" + word + "'");
    }
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Bundled architectures
// ---------------------------------------------------------------------------

/// The seven-convolution MNIST network, row for row. The table lists no
/// activation between convolutions and ends in FC 10 + ReLU + dropout.
inline NetworkSpec mnist_table1() {
  using L = LayerSpec;
  NetworkSpec s{"mnist-table1", 1, 28, 28, 10, {}};
  s.layers = {L::conv(64),  L::conv(64),  L::maxpool(), L::conv(144), L::conv(144), L::maxpool(),
              L::conv(144), L::conv(256), L::conv(256), L::fc(2048),  L::batchnorm(), L::relu(),
              L::dropout(0.5), L::fc(1024), L::batchnorm(), L::relu(), L::dropout(0.5), L::fc(10),
              L::relu(), L::dropout(0.5)};
  return s;
}

/// Desk-scale MNIST network: two convolutions, each followed by batch
/// normalization, ReLU and pooling, and one classifier layer.
inline NetworkSpec mnist_small() {
  using L = LayerSpec;
  NetworkSpec s{"mnist-small", 1, 28, 28, 10, {}};
  s.layers = {L::conv(16), L::batchnorm(), L::relu(), L::maxpool(), L::conv(32),
              L::batchnorm(), L::relu(),   L::maxpool(), L::fc(10)};
  return s;
}

/// The six-convolution CIFAR-10 network with batch normalization between
/// convolution pairs, as listed row by row.
inline NetworkSpec cifar_table2() {
  using L = LayerSpec;
  NetworkSpec s{"cifar-table2", 3, 32, 32, 10, {}};
  s.layers = {L::conv(64),  L::relu(),      L::batchnorm(), L::conv(64),      L::relu(),   L::maxpool(),
              L::dropout(0.5), L::conv(144), L::relu(),      L::batchnorm(),   L::conv(144), L::relu(),
              L::maxpool(), L::dropout(0.5), L::conv(256),  L::relu(),        L::batchnorm(), L::conv(256),
              L::relu(),    L::maxpool(),  L::dropout(0.5), L::fc(1024),      L::batchnorm(), L::relu(),
              L::dropout(0.5), L::fc(512), L::batchnorm(),  L::relu(),        L::dropout(0.5), L::fc(10)};
  return s;
}

inline std::optional<NetworkSpec> preset(std::string_view name) {
  if (name == "mnist-table1") return mnist_table1();
  if (name == "mnist-small") return mnist_small();
  if (name == "cifar-table2") return cifar_table2();
  return std::nullopt;
}

}  // namespace rank1

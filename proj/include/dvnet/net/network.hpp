#pragma once

// DVNet: input conv -> N feature-encoding units (dense block + transition
// down) -> linking unit -> N feature-decoding units (transition up + long skip
// concat + dense block) -> 3x3 conv -> 1x1 conv -> softmax.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dvnet/net/config.hpp"
#include "dvnet/net/plan.hpp"
#include "dvnet/tensor/autodiff.hpp"
#include "dvnet/tensor/checkpoint.hpp"
#include "dvnet/train/init.hpp"

namespace dvnet {

template <class T>
struct Conv {
  Var<T> weight;
  Var<T> bias;  // null for convolutions that follow batch norm
};

template <class T>
struct Norm {
  Var<T> scale;
  Var<T> shift;
  BatchNormState<T> stats;
};

/// BN -> ReLU -> 1x1 conv (4k) -> BN -> ReLU -> 3x3 conv (k) -> dropout.
template <class T>
struct Bottleneck {
  Norm<T> norm1;
  Conv<T> reduce;
  Norm<T> norm2;
  Conv<T> grow;
};

template <class T>
struct DenseBlock {
  std::vector<Bottleneck<T>> layers;
};

/// BN -> ReLU -> 1x1 conv (floor(theta_down * M)) -> 2x average pool.
template <class T>
struct TransitionDown {
  Norm<T> norm;
  Conv<T> reduce;
};

/// 1x1 conv (floor(theta_up * M)) -> 3x3 transposed conv, stride 2.
template <class T>
struct TransitionUp {
  Conv<T> reduce;
  Conv<T> upsample;
};

template <class T>
struct Network {
  NetworkConfig config;
  Conv<T> input_conv;
  std::vector<DenseBlock<T>> encoder;
  std::vector<TransitionDown<T>> down;
  DenseBlock<T> linking;
  /// up[i] and decoder[i] operate at the scale of encoder[i].
  std::vector<TransitionUp<T>> up;
  std::vector<DenseBlock<T>> decoder;
  Conv<T> head_conv;
  Conv<T> head_out;

  /// fn(name, Var) over every trainable tensor in a fixed order.
  template <class Fn>
  void visit_parameters(Fn&& fn) const {
    auto conv = [&](const std::string& p, const Conv<T>& c) {
      fn(p + ".weight", c.weight);
      if (c.bias) fn(p + ".bias", c.bias);
    };
    auto norm = [&](const std::string& p, const Norm<T>& n) {
      fn(p + ".scale", n.scale);
      fn(p + ".shift", n.shift);
    };
    auto block = [&](const std::string& p, const DenseBlock<T>& b) {
      for (std::size_t l = 0; l < b.layers.size(); ++l) {
        const std::string q = p + ".layer" + std::to_string(l);
        norm(q + ".norm1", b.layers[l].norm1);
        conv(q + ".reduce", b.layers[l].reduce);
        norm(q + ".norm2", b.layers[l].norm2);
        conv(q + ".grow", b.layers[l].grow);
      }
    };
    conv("input_conv", input_conv);
    for (std::size_t i = 0; i < encoder.size(); ++i) {
      block("enc" + std::to_string(i), encoder[i]);
      norm("td" + std::to_string(i) + ".norm", down[i].norm);
      conv("td" + std::to_string(i) + ".reduce", down[i].reduce);
    }
    block("lu", linking);
    for (std::size_t i = encoder.size(); i-- > 0;) {
      conv("tu" + std::to_string(i) + ".reduce", up[i].reduce);
      conv("tu" + std::to_string(i) + ".upsample", up[i].upsample);
      block("dec" + std::to_string(i), decoder[i]);
    }
    conv("head.conv", head_conv);
    conv("head.out", head_out);
  }

  /// fn(name, Norm&) over every batch-norm layer.
  template <class Fn>
  void visit_norms(Fn&& fn) {
    auto block = [&](const std::string& p, DenseBlock<T>& b) {
      for (std::size_t l = 0; l < b.layers.size(); ++l) {
        const std::string q = p + ".layer" + std::to_string(l);
        fn(q + ".norm1", b.layers[l].norm1);
        fn(q + ".norm2", b.layers[l].norm2);
      }
    };
    for (std::size_t i = 0; i < encoder.size(); ++i) {
      block("enc" + std::to_string(i), encoder[i]);
      fn("td" + std::to_string(i) + ".norm", down[i].norm);
    }
    block("lu", linking);
    for (std::size_t i = encoder.size(); i-- > 0;) block("dec" + std::to_string(i), decoder[i]);
  }

  std::vector<std::pair<std::string, Var<T>>> named_parameters() const {
    std::vector<std::pair<std::string, Var<T>>> out;
    visit_parameters([&](const std::string& name, const Var<T>& v) { out.emplace_back(name, v); });
    return out;
  }

  void zero_grad() {
    visit_parameters([](const std::string&, const Var<T>& v) { v->zero_grad(); });
  }
};

namespace detail {

inline Shape kernel_shape(std::int64_t a, std::int64_t b, int size, int rank) {
  Shape s{a, b};
  for (int i = 0; i < rank; ++i) s.push_back(size);
  return s;
}

template <class T>
Conv<T> make_conv(int out_ch, int in_ch, int size, int rank, bool with_bias, std::mt19937_64& rng,
                  bool transposed = false) {
  std::int64_t kv = 1;
  for (int i = 0; i < rank; ++i) kv *= size;
  Conv<T> c;
  const Shape shape = transposed ? kernel_shape(in_ch, out_ch, size, rank) : kernel_shape(out_ch, in_ch, size, rank);
  c.weight = parameter(xavier_init<T>(shape, in_ch * kv, out_ch * kv, rng));
  if (with_bias) c.bias = parameter(Tensor<T>(Shape{out_ch}));
  return c;
}

template <class T>
Norm<T> make_norm(int channels) {
  return {parameter(Tensor<T>(Shape{channels}, T{1})), parameter(Tensor<T>(Shape{channels})),
          BatchNormState<T>(channels)};
}

template <class T>
DenseBlock<T> make_dense_block(int in_depth, int layers, const NetworkConfig& c, std::mt19937_64& rng) {
  const int k = c.growth_rate;
  DenseBlock<T> b;
  for (int l = 0; l < layers; ++l) {
    const int depth = in_depth + l * k;
    Bottleneck<T> bb;
    bb.norm1 = make_norm<T>(depth);
    bb.reduce = make_conv<T>(4 * k, depth, 1, c.spatial_rank, false, rng);
    bb.norm2 = make_norm<T>(4 * k);
    bb.grow = make_conv<T>(k, 4 * k, 3, c.spatial_rank, false, rng);
    b.layers.push_back(std::move(bb));
  }
  return b;
}

}  // namespace detail

/// Builds a DVNet with Xavier-initialized kernels drawn from `seed`.
template <class T>
Network<T> build_network(const NetworkConfig& config, std::uint64_t seed) {
  const LayerPlan plan = plan_architecture(config);  // validates the config
  std::mt19937_64 rng(seed);
  const int rank = config.spatial_rank;
  const int k = config.growth_rate;
  Network<T> net;
  net.config = config;
  net.input_conv = detail::make_conv<T>(config.input_features, config.input_channels, 3, rank, true, rng);

  int depth = config.input_features;
  std::vector<int> skips;
  for (int layers : config.levels) {
    net.encoder.push_back(detail::make_dense_block<T>(depth, layers, config, rng));
    depth += layers * k;
    skips.push_back(depth);
    const int reduced = compress_depth(config.theta_down, depth);
    net.down.push_back({detail::make_norm<T>(depth), detail::make_conv<T>(reduced, depth, 1, rank, false, rng)});
    depth = reduced;
  }
  net.linking = detail::make_dense_block<T>(depth, config.lu_layers, config, rng);
  depth += config.lu_layers * k;

  const std::size_t n = config.levels.size();
  net.up.resize(n);
  net.decoder.resize(n);
  for (std::size_t i = n; i-- > 0;) {
    const int reduced = compress_depth(config.theta_up, depth);
    net.up[i] = {detail::make_conv<T>(reduced, depth, 1, rank, false, rng),
                 detail::make_conv<T>(reduced, reduced, 3, rank, false, rng, /*transposed=*/true)};
    depth = reduced + skips[i];
    net.decoder[i] = detail::make_dense_block<T>(depth, config.levels[i], config, rng);
    depth += config.levels[i] * k;
  }
  net.head_conv = detail::make_conv<T>(depth, depth, 3, rank, true, rng);
  net.head_out = detail::make_conv<T>(config.num_classes, depth, 1, rank, true, rng);
  (void)plan;
  return net;
}

template <class T>
std::int64_t count_parameters(const Network<T>& net) {
  std::int64_t total = 0;
  net.visit_parameters([&](const std::string&, const Var<T>& v) { total += v->value.numel(); });
  return total;
}

/// Depth and spatial extents realized by forward at one plan stage.
struct StageShape {
  std::string stage;
  std::int64_t depth = 0;
  Shape spatial;
};

template <class T>
struct ForwardOptions {
  Mode mode = Mode::eval;
  Tape<T>* tape = nullptr;
  /// Required in train mode when dropout_rate > 0.
  std::mt19937_64* dropout_rng = nullptr;
  std::vector<StageShape>* realized = nullptr;
};

inline void check_input_shape(const NetworkConfig& config, const Shape& shape) {
  require(static_cast<int>(shape.size()) == config.spatial_rank + 2, "forward",
          "input must be [batch, channels, " + std::to_string(config.spatial_rank) + " spatial axes], got " +
              shape_str(shape));
  require(shape[1] == config.input_channels, "forward",
          "input has " + std::to_string(shape[1]) + " channels, network expects " +
              std::to_string(config.input_channels));
  const auto div = config.required_divisor();
  for (std::size_t a = 2; a < shape.size(); ++a)
    require(shape[a] > 0 && shape[a] % div == 0, "forward",
            "spatial axis " + std::to_string(a - 2) + " extent " + std::to_string(shape[a]) +
                " is not divisible by 2^levels = " + std::to_string(div));
}

namespace detail {

template <class T, class Net>
Var<T> norm_relu(Net& net, auto& norm, const Var<T>& x, const ForwardOptions<T>& o) {
  (void)net;
  return relu(o.tape, batch_norm(o.tape, x, norm.scale, norm.shift, norm.stats, o.mode));
}

template <class T, class Net, class Block>
Var<T> run_dense_block(Net& net, Block& block, Var<T> x, const ForwardOptions<T>& o) {
  const double rate = net.config.dropout_rate;
  for (auto& layer : block.layers) {
    auto h = norm_relu<T>(net, layer.norm1, x, o);
    h = conv_nd(o.tape, h, layer.reduce.weight, layer.reduce.bias, {1, 0});
    h = norm_relu<T>(net, layer.norm2, h, o);
    h = conv_nd(o.tape, h, layer.grow.weight, layer.grow.bias, {1, 1});
    if (o.mode == Mode::train && rate > 0) {
      require(o.dropout_rng != nullptr, "forward", "train mode with dropout needs a random generator");
      h = dropout(o.tape, h, rate, *o.dropout_rng);
    }
    x = concat_channels(o.tape, x, h);
  }
  return x;
}

template <class T>
void note(const ForwardOptions<T>& o, const std::string& stage, const Var<T>& v) {
  if (o.realized) o.realized->push_back({stage, v->value.channels(), spatial_shape(v->value.shape())});
}

template <class T, class Net>
Var<T> forward_logits(Net& net, const Var<T>& input, const ForwardOptions<T>& o) {
  FlushDenormals flush;
  const auto& config = net.config;
  check_input_shape(config, input->value.shape());
  const std::size_t n = config.levels.size();

  auto x = conv_nd(o.tape, input, net.input_conv.weight, net.input_conv.bias, {1, 1});
  note(o, "input conv", x);
  std::vector<Var<T>> skips;
  for (std::size_t i = 0; i < n; ++i) {
    x = run_dense_block<T>(net, net.encoder[i], x, o);
    note(o, "encoder " + std::to_string(i), x);
    skips.push_back(x);
    x = norm_relu<T>(net, net.down[i].norm, x, o);
    x = conv_nd(o.tape, x, net.down[i].reduce.weight, net.down[i].reduce.bias, {1, 0});
    x = avg_pool_nd(o.tape, x, 2, 2);
  }
  x = run_dense_block<T>(net, net.linking, x, o);
  note(o, "linking unit", x);
  for (std::size_t i = n; i-- > 0;) {
    x = conv_nd(o.tape, x, net.up[i].reduce.weight, net.up[i].reduce.bias, {1, 0});
    x = conv_transpose_nd(o.tape, x, net.up[i].upsample.weight, net.up[i].upsample.bias, {2, 1, 1});
    x = concat_channels(o.tape, x, skips[i]);
    skips[i].reset();
    x = run_dense_block<T>(net, net.decoder[i], x, o);
    note(o, "decoder " + std::to_string(i), x);
  }
  x = relu(o.tape, conv_nd(o.tape, x, net.head_conv.weight, net.head_conv.bias, {1, 1}));
  x = conv_nd(o.tape, x, net.head_out.weight, net.head_out.bias, {1, 0});
  note(o, "output conv", x);
  return x;
}

}  // namespace detail

/// Class probabilities [batch, classes, spatial...]. Train mode uses batch
/// statistics and updates the running ones; eval mode disables dropout.
template <class T>
Var<T> forward(Network<T>& net, const Var<T>& input, const ForwardOptions<T>& options) {
  return softmax_channels(options.tape, detail::forward_logits<T>(net, input, options));
}

template <class T>
Var<T> forward_logits(Network<T>& net, const Var<T>& input, const ForwardOptions<T>& options) {
  return detail::forward_logits<T>(net, input, options);
}

/// Eval-mode inference on a read-only network; safe to call concurrently.
template <class T>
Tensor<T> predict(const Network<T>& net, const Tensor<T>& input) {
  ForwardOptions<T> o;
  o.mode = Mode::eval;
  auto logits = detail::forward_logits<T>(net, constant(input), o);
  return softmax_channels<T>(nullptr, logits)->value;
}

// ---------------------------------------------------------------------------
// Checkpoints

template <class T>
Checkpoint to_checkpoint(Network<T>& net) {
  Checkpoint ckpt;
  ckpt.config_text = net.config.to_text();
  auto add = [&](const std::string& name, const Tensor<T>& t) {
    CheckpointEntry e{name, t.shape(), {}};
    e.values.reserve(static_cast<std::size_t>(t.numel()));
    for (auto v : t.values()) e.values.push_back(static_cast<float>(v));
    ckpt.entries.push_back(std::move(e));
  };
  net.visit_parameters([&](const std::string& name, const Var<T>& v) { add(name, v->value); });
  net.visit_norms([&](const std::string& name, Norm<T>& n) {
    add(name + ".running_mean", n.stats.running_mean);
    add(name + ".running_var", n.stats.running_var);
    add(name + ".batches_seen", Tensor<T>(Shape{1}, {static_cast<T>(n.stats.batches_seen)}));
  });
  return ckpt;
}

template <class T>
Network<T> from_checkpoint(const Checkpoint& ckpt) {
  auto net = build_network<T>(NetworkConfig::from_text(ckpt.config_text), 0);
  auto assign = [&](const std::string& name, Tensor<T>& t) {
    const auto* e = ckpt.find(name);
    require(e != nullptr, "checkpoint", "missing tensor " + name);
    require(e->shape == t.shape(), "checkpoint",
            "tensor " + name + " has shape " + shape_str(e->shape) + ", network expects " + shape_str(t.shape()));
    for (std::size_t i = 0; i < e->values.size(); ++i) t[static_cast<std::int64_t>(i)] = static_cast<T>(e->values[i]);
  };
  net.visit_parameters([&](const std::string& name, const Var<T>& v) { assign(name, v->value); });
  net.visit_norms([&](const std::string& name, Norm<T>& n) {
    assign(name + ".running_mean", n.stats.running_mean);
    assign(name + ".running_var", n.stats.running_var);
    Tensor<T> seen(Shape{1});
    assign(name + ".batches_seen", seen);
    n.stats.batches_seen = static_cast<std::int64_t>(seen[0]);
  });
  return net;
}

template <class T>
void save_network(Network<T>& net, const std::string& path) {
  write_checkpoint(path, to_checkpoint(net));
}

template <class T>
Network<T> load_network(const std::string& path) {
  return from_checkpoint<T>(read_checkpoint(path));
}

/// Deep copy of parameters and running statistics.
template <class T>
Network<T> clone_network(const Network<T>& net) {
  Network<T> copy = net;
  auto deep = [](Var<T>& v) {
    if (v) v = std::make_shared<Node<T>>(Node<T>{v->value, {}, v->requires_grad});
  };
  auto conv = [&](Conv<T>& c) {
    deep(c.weight);
    deep(c.bias);
  };
  auto norm = [&](Norm<T>& n) {
    deep(n.scale);
    deep(n.shift);
  };
  auto block = [&](DenseBlock<T>& b) {
    for (auto& l : b.layers) {
      norm(l.norm1);
      conv(l.reduce);
      norm(l.norm2);
      conv(l.grow);
    }
  };
  conv(copy.input_conv);
  for (auto& b : copy.encoder) block(b);
  for (auto& d : copy.down) {
    norm(d.norm);
    conv(d.reduce);
  }
  block(copy.linking);
  for (auto& u : copy.up) {
    conv(u.reduce);
    conv(u.upsample);
  }
  for (auto& b : copy.decoder) block(b);
  conv(copy.head_conv);
  conv(copy.head_out);
  return copy;
}

}  // namespace dvnet

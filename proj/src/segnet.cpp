#include "cmr/segnet.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "cmr/binary_io.hpp"
#include "cmr/kernels.hpp"

namespace cmr {
namespace {

constexpr char kSnapshotMagic[8] = {'C', 'M', 'R', 'S', 'N', 'A', 'P', '\0'};

void validate_config(const SegNetConfig& c) {
  if (c.dilations.empty()) throw InputError("segnet: at least one hidden layer required");
  for (std::size_t d : c.dilations)
    if (d == 0) throw InputError("segnet: dilations must be >= 1");
  if (c.hidden_width == 0) throw InputError("segnet: hidden_width must be >= 1");
  if (c.in_channels != 2) throw InputError("segnet: the network takes exactly 2 input channels (ED, ES)");
  if (c.out_channels != 2 * kClassesPerPhase) throw InputError("segnet: the network emits exactly 8 channels");
  if (c.hidden_kernel != 3) throw InputError("segnet: hidden layers use 3x3 kernels");
  if (!(c.bn_momentum > 0 && c.bn_momentum < 1)) throw InputError("segnet: batch-norm momentum must be in (0,1)");
  if (!(c.bn_epsilon > 0)) throw InputError("segnet: batch-norm epsilon must be positive");
  const std::size_t rf = receptive_field(c);
  if (rf > c.input_extent)
    throw InputError("segnet: receptive field " + std::to_string(rf) + " exceeds input extent " +
                     std::to_string(c.input_extent));
}

ConvLayerParams init_conv(std::size_t in, std::size_t out, std::size_t k, std::size_t dilation, std::mt19937_64& rng) {
  ConvLayerParams p;
  p.weights = Tensor({out, in, k, k});
  p.bias.assign(out, 0.0f);
  p.dilation = dilation;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(in * k * k)));
  for (float& w : p.weights.values()) w = static_cast<float>(dist(rng));
  return p;
}

void write_blob(binary::Writer& w, const Tensor& t) {
  w.u32(4);
  w.u32(static_cast<std::uint32_t>(t.batch()));
  w.u32(static_cast<std::uint32_t>(t.channels()));
  w.u32(static_cast<std::uint32_t>(t.rows()));
  w.u32(static_cast<std::uint32_t>(t.cols()));
  w.f32s(t.values());
}

void write_blob(binary::Writer& w, const std::vector<float>& v) {
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(v.size()));
  w.f32s(v);
}

Tensor read_tensor_blob(binary::Reader& r, const Shape4& expected, const char* what) {
  if (r.u32() != 4) throw FormatError(std::string("snapshot: bad rank for ") + what);
  Shape4 s;
  s.batch = r.u32();
  s.channels = r.u32();
  s.rows = r.u32();
  s.cols = r.u32();
  if (!(s == expected))
    throw FormatError(std::string("snapshot: ") + what + " shape " + to_string(s) + " does not match config " +
                      to_string(expected));
  Tensor t(s);
  r.f32s(t.values());
  return t;
}

std::vector<float> read_vector_blob(binary::Reader& r, std::size_t expected, const char* what) {
  if (r.u32() != 1) throw FormatError(std::string("snapshot: bad rank for ") + what);
  if (r.u32() != expected) throw FormatError(std::string("snapshot: ") + what + " length does not match config");
  std::vector<float> v(expected);
  r.f32s(v);
  return v;
}

void write_conv(binary::Writer& w, const ConvLayerParams& p) {
  w.u32(static_cast<std::uint32_t>(p.dilation));
  write_blob(w, p.weights);
  write_blob(w, p.bias);
}

ConvLayerParams read_conv(binary::Reader& r, std::size_t in, std::size_t out, std::size_t k, std::size_t dilation) {
  ConvLayerParams p;
  p.dilation = r.u32();
  if (p.dilation != dilation) throw FormatError("snapshot: layer dilation does not match config");
  p.weights = read_tensor_blob(r, {out, in, k, k}, "conv weights");
  p.bias = read_vector_blob(r, out, "conv bias");
  return p;
}

}  // namespace

std::size_t receptive_field(const SegNetConfig& config) {
  const std::size_t sum = std::accumulate(config.dilations.begin(), config.dilations.end(), std::size_t{0});
  return 1 + (config.hidden_kernel - 1) * sum;
}

Model build(const SegNetConfig& config) {
  validate_config(config);
  Model m;
  m.config = config;
  std::mt19937_64 rng(config.init_seed);
  std::size_t in = config.in_channels;
  for (std::size_t d : config.dilations) {
    HiddenLayer layer;
    layer.conv = init_conv(in, config.hidden_width, config.hidden_kernel, d, rng);
    layer.bn = BatchNormParams(config.hidden_width);
    layer.bn.momentum = config.bn_momentum;
    layer.bn.epsilon = config.bn_epsilon;
    m.hidden.push_back(std::move(layer));
    in = config.hidden_width;
  }
  m.output = init_conv(in, config.out_channels, 1, 1, rng);
  return m;
}

namespace {

void check_input(const Model& model, const Tensor& batch) {
  const std::size_t rf = receptive_field(model.config);
  if (batch.channels() != model.config.in_channels)
    throw InputError("segnet forward: expected " + std::to_string(model.config.in_channels) + " input channels, got " +
                     std::to_string(batch.channels()));
  if (batch.rows() < rf || batch.cols() < rf)
    throw InputError("segnet forward: input " + std::to_string(batch.rows()) + "x" + std::to_string(batch.cols()) +
                     " is smaller than the receptive field " + std::to_string(rf));
}

Tensor output_head(const Model& model, const Tensor& act) {
  Tensor probs = kernels::grouped_softmax(kernels::conv2d_forward(act, model.output), phase_groups());
  if (!all_finite(probs.values())) throw NumericalError("segnet forward produced non-finite probabilities");
  return probs;
}

}  // namespace

Tensor forward(const Model& model, const Tensor& batch) {
  check_input(model, batch);
  Tensor act = batch;
  for (const auto& layer : model.hidden)
    act = kernels::relu(kernels::batchnorm_inference(kernels::conv2d_forward(act, layer.conv), layer.bn));
  return output_head(model, act);
}

Tensor forward(Model& model, const Tensor& batch, BatchNormMode mode, ForwardTrace* trace) {
  if (mode == BatchNormMode::kEval && trace == nullptr) return forward(static_cast<const Model&>(model), batch);
  check_input(model, batch);
  if (trace) {
    *trace = ForwardTrace{};
    trace->input = batch;
  }
  Tensor act = batch;
  for (auto& layer : model.hidden) {
    Tensor conv = kernels::conv2d_forward(act, layer.conv);
    Tensor bn = kernels::batchnorm_forward(conv, layer.bn, mode);
    act = kernels::relu(bn);
    if (trace) {
      trace->conv_out.push_back(std::move(conv));
      trace->bn_out.push_back(std::move(bn));
      trace->act.push_back(act);
    }
  }
  Tensor probs = output_head(model, act);
  if (trace) trace->probs = probs;
  return probs;
}

ModelGradients backward(const Model& model, const ForwardTrace& trace, const Tensor& grad_probs, bool need_input_grad) {
  require_same_shape(grad_probs.shape(), trace.probs.shape(), "segnet backward grad_probs");
  const std::size_t layers = model.hidden.size();
  if (trace.act.size() != layers) throw InputError("segnet backward: trace does not match model");
  ModelGradients g;
  g.hidden_conv.resize(layers);
  g.hidden_bn.resize(layers);

  Tensor grad_logits = kernels::grouped_softmax_backward(trace.probs, grad_probs, phase_groups());
  g.output = kernels::conv2d_backward(trace.act.back(), model.output, grad_logits, true);
  Tensor grad = std::move(g.output.grad_x);
  g.output.grad_x = Tensor{};
  for (std::size_t l = layers; l-- > 0;) {
    Tensor grad_bn = kernels::relu_backward(trace.bn_out[l], grad);
    g.hidden_bn[l] = kernels::batchnorm_backward(trace.conv_out[l], model.hidden[l].bn, grad_bn);
    const Tensor& layer_input = l == 0 ? trace.input : trace.act[l - 1];
    const bool need_x = l > 0 || need_input_grad;
    g.hidden_conv[l] = kernels::conv2d_backward(layer_input, model.hidden[l].conv, g.hidden_bn[l].grad_x, need_x);
    g.hidden_bn[l].grad_x = Tensor{};
    grad = std::move(g.hidden_conv[l].grad_x);
    g.hidden_conv[l].grad_x = Tensor{};
  }
  if (need_input_grad) g.grad_input = std::move(grad);
  return g;
}

void apply_sgd(Model& model, const ModelGradients& grads, double lr, double weight_decay) {
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    auto& layer = model.hidden[l];
    kernels::sgd_step(layer.conv.weights.values(), grads.hidden_conv[l].grad_w.values(), lr, weight_decay);
    kernels::sgd_step(layer.conv.bias, grads.hidden_conv[l].grad_b, lr, weight_decay);
    kernels::sgd_step(layer.bn.scale, grads.hidden_bn[l].grad_scale, lr, 0.0);
    kernels::sgd_step(layer.bn.shift, grads.hidden_bn[l].grad_shift, lr, 0.0);
  }
  kernels::sgd_step(model.output.weights.values(), grads.output.grad_w.values(), lr, weight_decay);
  kernels::sgd_step(model.output.bias, grads.output.grad_b, lr, weight_decay);
}

std::size_t parameter_count(const Model& model) {
  std::size_t n = model.output.weights.size() + model.output.bias.size();
  for (const auto& layer : model.hidden)
    n += layer.conv.weights.size() + layer.conv.bias.size() + 2 * layer.bn.channels();
  return n;
}

std::vector<std::uint8_t> serialize_snapshot(const Model& model) {
  const SegNetConfig& c = model.config;
  binary::Writer w;
  w.raw({kSnapshotMagic, sizeof(kSnapshotMagic)});
  w.u32(kSnapshotVersion);
  w.u64(model.iteration);
  w.u32(static_cast<std::uint32_t>(c.in_channels));
  w.u32(static_cast<std::uint32_t>(c.out_channels));
  w.u32(static_cast<std::uint32_t>(c.hidden_width));
  w.u32(static_cast<std::uint32_t>(c.hidden_kernel));
  w.u64(c.input_extent);
  w.u64(c.init_seed);
  w.f64(c.bn_momentum);
  w.f64(c.bn_epsilon);
  w.u32(static_cast<std::uint32_t>(c.dilations.size()));
  for (std::size_t d : c.dilations) w.u32(static_cast<std::uint32_t>(d));
  w.str(kChannelOrder);
  for (const auto& layer : model.hidden) {
    write_conv(w, layer.conv);
    write_blob(w, layer.bn.scale);
    write_blob(w, layer.bn.shift);
    write_blob(w, layer.bn.running_mean);
    write_blob(w, layer.bn.running_var);
  }
  write_conv(w, model.output);
  const std::uint64_t checksum = binary::fnv1a(w.bytes());
  w.u64(checksum);
  return w.take();
}

Model deserialize_snapshot(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes, "snapshot");
  if (r.raw(sizeof(kSnapshotMagic)) != std::string(kSnapshotMagic, sizeof(kSnapshotMagic)))
    throw FormatError("snapshot: bad magic bytes (not a model snapshot)");
  const std::uint32_t version = r.u32();
  if (version != kSnapshotVersion)
    throw FormatError("snapshot: unsupported format version " + std::to_string(version) + " (expected " +
                      std::to_string(kSnapshotVersion) + ")");
  Model m;
  m.iteration = r.u64();
  SegNetConfig& c = m.config;
  c.in_channels = r.u32();
  c.out_channels = r.u32();
  c.hidden_width = r.u32();
  c.hidden_kernel = r.u32();
  c.input_extent = r.u64();
  c.init_seed = r.u64();
  c.bn_momentum = r.f64();
  c.bn_epsilon = r.f64();
  const std::uint32_t layers = r.u32();
  if (layers > 4096) throw FormatError("snapshot: implausible layer count");
  c.dilations.resize(layers);
  for (auto& d : c.dilations) d = r.u32();
  if (r.str() != kChannelOrder) throw FormatError("snapshot: unexpected channel order");
  try {
    validate_config(c);
  } catch (const InputError& e) {
    throw FormatError(std::string("snapshot: invalid config: ") + e.what());
  }
  std::size_t in = c.in_channels;
  for (std::size_t d : c.dilations) {
    HiddenLayer layer;
    layer.conv = read_conv(r, in, c.hidden_width, c.hidden_kernel, d);
    layer.bn = BatchNormParams(c.hidden_width);
    layer.bn.momentum = c.bn_momentum;
    layer.bn.epsilon = c.bn_epsilon;
    layer.bn.scale = read_vector_blob(r, c.hidden_width, "bn scale");
    layer.bn.shift = read_vector_blob(r, c.hidden_width, "bn shift");
    layer.bn.running_mean = read_vector_blob(r, c.hidden_width, "bn running mean");
    layer.bn.running_var = read_vector_blob(r, c.hidden_width, "bn running var");
    m.hidden.push_back(std::move(layer));
    in = c.hidden_width;
  }
  m.output = read_conv(r, in, c.out_channels, 1, 1);
  const std::size_t body = r.position();
  const std::uint64_t stored = r.u64();
  if (stored != binary::fnv1a(bytes.first(body))) throw FormatError("snapshot: checksum mismatch (corrupted file)");
  if (r.remaining() != 0) throw FormatError("snapshot: trailing bytes after checksum");
  return m;
}

void save_snapshot(const Model& model, const std::filesystem::path& path) {
  binary::write_file(path, serialize_snapshot(model));
}

Model load_snapshot(const std::filesystem::path& path) {
  const auto bytes = binary::read_file(path);
  try {
    return deserialize_snapshot(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace cmr

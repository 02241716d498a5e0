#include "madm/nn.hpp"

#include <cmath>
#include <cstring>
#include <mutex>
#include <numbers>
#include <sstream>

#include "madm/error.hpp"

namespace madm::nn {

namespace F = torch::nn::functional;

namespace {

constexpr char kWeightsMagic[] = "MADMWTS1";

// ATen evaluates the vectorised exp on whole SIMD blocks and the scalar one on
// the tail of the flattened tensor, so an element's value can depend on where
// its sample sits in the batch. Applying the activation one sample at a time
// keeps inference outputs independent of batch composition.
torch::Tensor silu(const torch::Tensor& x, bool per_sample) {
  if (!per_sample || x.size(0) == 1) return F::silu(x);
  auto out = torch::empty_like(x);
  for (int64_t b = 0; b < x.size(0); ++b) out[b].copy_(F::silu(x[b]));
  return out;
}

torch::nn::AnyModule make_conv(torch::nn::Module& parent, const std::string& name, int dims, int in,
                               int out, int kernel, int stride = 1) {
  const int pad = kernel / 2;
  if (dims == 2) {
    auto conv = parent.register_module(
        name, torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(pad)));
    return torch::nn::AnyModule(conv);
  }
  auto conv = parent.register_module(
      name, torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, kernel).stride(stride).padding(pad)));
  return torch::nn::AnyModule(conv);
}

torch::nn::GroupNorm make_norm(torch::nn::Module& parent, const std::string& name, int channels,
                               int groups) {
  return parent.register_module(
      name, torch::nn::GroupNorm(torch::nn::GroupNormOptions(group_count(channels, groups), channels)));
}

/// Torch's global generator drives default parameter initialisation.
std::mutex& init_mutex() {
  static std::mutex m;
  return m;
}

template <typename T>
void put(std::vector<char>& out, T value) {
  const auto* p = reinterpret_cast<const char*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(std::span<const char> bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) {
    throw FormatError(FormatError::Kind::kTruncated, "weight blob truncated");
  }
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

torch::Tensor timestep_embedding(const torch::Tensor& t, int dim) {
  const int half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) *
                          torch::arange(half, torch::TensorOptions().dtype(torch::kFloat64)) /
                          static_cast<double>(half));
  auto args = t.to(torch::kFloat64).unsqueeze(1) * freqs.unsqueeze(0);
  auto emb = torch::cat({torch::sin(args), torch::cos(args)}, 1);
  if (dim % 2 == 1) emb = torch::cat({emb, torch::zeros({emb.size(0), 1}, emb.options())}, 1);
  return emb.to(torch::kFloat32);
}

int group_count(int channels, int preferred) {
  for (int g = std::min(channels, preferred); g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

ResBlockImpl::ResBlockImpl(int dims, int in_ch, int out_ch, int time_dim, int groups) : dims_(dims) {
  norm1_ = make_norm(*this, "norm1", in_ch, groups);
  conv1_ = make_conv(*this, "conv1", dims, in_ch, out_ch, 3);
  if (time_dim > 0) {
    time_proj_ = register_module("time_proj", torch::nn::Linear(time_dim, out_ch));
    has_time_ = true;
  }
  norm2_ = make_norm(*this, "norm2", out_ch, groups);
  conv2_ = make_conv(*this, "conv2", dims, out_ch, out_ch, 3);
  if (in_ch != out_ch) {
    skip_ = make_conv(*this, "skip", dims, in_ch, out_ch, 1);
    has_skip_ = true;
  }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1_.forward(silu(norm1_(x), !is_training()));
  if (has_time_) {
    auto proj = time_proj_(F::silu(temb));
    std::vector<int64_t> shape{proj.size(0), proj.size(1)};
    for (int k = 0; k < dims_; ++k) shape.push_back(1);
    h = h + proj.view(shape);
  }
  h = conv2_.forward(silu(norm2_(h), !is_training()));
  return h + (has_skip_ ? skip_.forward(x) : x);
}

UNetImpl::UNetImpl(const Options& options) : options_(options) {
  const int dims = options.dims;
  const int time_dim = options.embedding_dim > 0 ? 2 * options.embedding_dim : 0;
  if (options.embedding_dim > 0) {
    time_mlp_ = register_module(
        "time_mlp", torch::nn::Sequential(torch::nn::Linear(options.embedding_dim, time_dim),
                                          torch::nn::SiLU(), torch::nn::Linear(time_dim, time_dim)));
  }
  in_conv_ = make_conv(*this, "in_conv", dims, options.in_channels, options.base_channels, 3);
  down_blocks_ = register_module("down_blocks", torch::nn::ModuleList());
  downsamplers_ = register_module("downsamplers", torch::nn::ModuleList());
  up_convs_ = register_module("up_convs", torch::nn::ModuleList());
  up_blocks_ = register_module("up_blocks", torch::nn::ModuleList());
  auto channels = [&](int level) { return options.base_channels << level; };
  for (int l = 0; l < options.depth; ++l) {
    down_blocks_->push_back(ResBlock(dims, channels(l), channels(l), time_dim, options.groups));
    // Strided 3x3 convolution halving each spatial extent.
    if (dims == 2) {
      downsamplers_->push_back(torch::nn::Conv2d(
          torch::nn::Conv2dOptions(channels(l), channels(l + 1), 3).stride(2).padding(1)));
    } else {
      downsamplers_->push_back(torch::nn::Conv3d(
          torch::nn::Conv3dOptions(channels(l), channels(l + 1), 3).stride(2).padding(1)));
    }
  }
  mid_ = register_module("mid", ResBlock(dims, channels(options.depth), channels(options.depth),
                                         time_dim, options.groups));
  for (int l = options.depth - 1; l >= 0; --l) {
    if (dims == 2) {
      up_convs_->push_back(
          torch::nn::Conv2d(torch::nn::Conv2dOptions(channels(l + 1), channels(l), 3).padding(1)));
    } else {
      up_convs_->push_back(
          torch::nn::Conv3d(torch::nn::Conv3dOptions(channels(l + 1), channels(l), 3).padding(1)));
    }
    up_blocks_->push_back(ResBlock(dims, 2 * channels(l), channels(l), time_dim, options.groups));
  }
  out_norm_ = make_norm(*this, "out_norm", options.base_channels, options.groups);
  out_conv_ = make_conv(*this, "out_conv", dims, options.base_channels, options.out_channels, 3);
}

torch::Tensor UNetImpl::run(const torch::Tensor& x, const torch::Tensor& temb) {
  const int dims = options_.dims;
  auto h = in_conv_.forward(x);
  std::vector<torch::Tensor> skips;
  for (int l = 0; l < options_.depth; ++l) {
    h = down_blocks_->ptr<ResBlockImpl>(l)->forward(h, temb);
    skips.push_back(h);
    h = dims == 2 ? downsamplers_->ptr<torch::nn::Conv2dImpl>(l)->forward(h)
                  : downsamplers_->ptr<torch::nn::Conv3dImpl>(l)->forward(h);
  }
  h = mid_->forward(h, temb);
  for (int k = 0; k < options_.depth; ++k) {
    std::vector<int64_t> size(skips.back().sizes().begin() + 2, skips.back().sizes().end());
    h = F::interpolate(h, F::InterpolateFuncOptions().size(size).mode(torch::kNearest));
    h = dims == 2 ? up_convs_->ptr<torch::nn::Conv2dImpl>(k)->forward(h)
                  : up_convs_->ptr<torch::nn::Conv3dImpl>(k)->forward(h);
    h = torch::cat({h, skips.back()}, 1);
    skips.pop_back();
    h = up_blocks_->ptr<ResBlockImpl>(k)->forward(h, temb);
  }
  return out_conv_.forward(silu(out_norm_(h), !is_training()));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x, const torch::Tensor& t) {
  if (options_.embedding_dim == 0) return run(x, torch::Tensor());
  return forward_with_embedding(x, timestep_embedding(t, options_.embedding_dim));
}

torch::Tensor UNetImpl::forward_with_embedding(const torch::Tensor& x, const torch::Tensor& embedding) {
  if (options_.embedding_dim == 0) return run(x, torch::Tensor());
  return run(x, time_mlp_->forward(embedding.to(x.dtype())));
}

torch::Tensor UNetImpl::forward_padded(const torch::Tensor& x, const torch::Tensor& t) {
  const int64_t multiple = int64_t{1} << options_.depth;
  const int dims = options_.dims;
  std::vector<int64_t> pad;  // F::pad order: last dimension first
  bool any = false;
  for (int k = dims - 1; k >= 0; --k) {
    const int64_t n = x.size(2 + k);
    const int64_t total = (n + multiple - 1) / multiple * multiple - n;
    pad.push_back(total / 2);
    pad.push_back(total - total / 2);
    any = any || total > 0;
  }
  if (!any) return forward(x, t);
  auto y = forward(F::pad(x, F::PadFuncOptions(pad)), t);
  for (int k = 0; k < dims; ++k) {
    const int64_t before = pad[2 * (dims - 1 - k)];
    y = y.narrow(2 + k, before, x.size(2 + k));
  }
  return y.contiguous();
}

UNet make_denoiser_net(const Denoiser25DConfig& config) {
  config.validate();
  std::lock_guard lock(init_mutex());
  torch::manual_seed(config.seed);
  UNetImpl::Options o;
  o.dims = 2;
  o.in_channels = config.in_channels();
  o.out_channels = 1;
  o.base_channels = config.base_channels;
  o.depth = config.depth;
  o.groups = config.groups;
  o.embedding_dim = config.embedding_dim;
  return UNet(o);
}

UNet make_prior_net(const Prior3DConfig& config) {
  config.validate();
  std::lock_guard lock(init_mutex());
  torch::manual_seed(config.seed);
  UNetImpl::Options o;
  o.dims = 3;
  o.in_channels = 1;
  o.out_channels = 1;
  o.base_channels = config.base_channels;
  o.depth = config.depth;
  o.groups = config.groups;
  o.embedding_dim = 0;
  UNet net(o);
  // Start from the identity map: the correction head begins at zero.
  torch::NoGradGuard guard;
  for (auto& p : net->named_parameters()) {
    if (p.key().rfind("out_conv.", 0) == 0) p.value().zero_();
  }
  return net;
}

torch::Tensor prior_forward(UNet& net, const torch::Tensor& x) { return x + net->forward_padded(x, {}); }

torch::Tensor mean_squared_error(const torch::Tensor& pred, const torch::Tensor& target) {
  return (pred - target).pow(2).mean();
}

torch::Tensor diffusion_loss(UNet& net, const torch::Tensor& y0, const torch::Tensor& cond,
                             const torch::Tensor& t, const torch::Tensor& eps,
                             const NoiseSchedule& schedule) {
  const auto n = t.size(0);
  std::vector<double> a(n), b(n);
  auto tc = t.to(torch::kCPU).to(torch::kInt64);
  const auto* tp = tc.data_ptr<int64_t>();
  for (int64_t i = 0; i < n; ++i) {
    const double abar = schedule.alpha_bar(static_cast<int>(tp[i]));
    a[i] = std::sqrt(abar);
    b[i] = std::sqrt(1.0 - abar);
  }
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto ca = torch::from_blob(a.data(), {n, 1, 1, 1}, opts).to(y0.dtype());
  auto cb = torch::from_blob(b.data(), {n, 1, 1, 1}, opts).to(y0.dtype());
  auto y_t = ca * y0 + cb * eps;
  auto pred = net->forward_padded(torch::cat({y_t, cond}, 1), t);
  return mean_squared_error(pred, eps);
}

std::vector<torch::Tensor> parameter_list(torch::nn::Module& module) { return module.parameters(); }

std::vector<char> encode_weights(torch::nn::Module& module) {
  std::vector<char> out(kWeightsMagic, kWeightsMagic + 8);
  const auto params = module.named_parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    const auto& name = p.key();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const auto t = p.value().detach().to(torch::kFloat32).contiguous();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto s : t.sizes()) put<std::int64_t>(out, s);
    const auto* data = reinterpret_cast<const char*>(t.data_ptr<float>());
    out.insert(out.end(), data, data + t.numel() * sizeof(float));
  }
  return out;
}

void decode_weights(torch::nn::Module& module, std::span<const char> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kWeightsMagic, 8) != 0) {
    throw FormatError(FormatError::Kind::kBadMagic, "weight blob has bad magic");
  }
  std::size_t pos = 8;
  auto params = module.named_parameters();
  const auto count = take<std::uint32_t>(bytes, pos);
  if (count != params.size()) {
    throw FormatError(FormatError::Kind::kSizeMismatch,
                      "weight blob holds " + std::to_string(count) + " tensors, network has " +
                          std::to_string(params.size()));
  }
  torch::NoGradGuard guard;
  for (auto& p : params) {
    const auto len = take<std::uint32_t>(bytes, pos);
    if (pos + len > bytes.size()) throw FormatError(FormatError::Kind::kTruncated, "weight blob truncated");
    const std::string name(bytes.data() + pos, len);
    pos += len;
    if (name != p.key()) {
      throw FormatError(FormatError::Kind::kInvalid, "weight blob tensor '" + name +
                                                         "' does not match network tensor '" +
                                                         p.key() + "'");
    }
    const auto ndim = take<std::uint32_t>(bytes, pos);
    std::vector<int64_t> sizes(ndim);
    for (auto& s : sizes) s = take<std::int64_t>(bytes, pos);
    if (sizes != p.value().sizes().vec()) {
      throw FormatError(FormatError::Kind::kSizeMismatch, "shape mismatch for " + name);
    }
    const auto numel = p.value().numel();
    if (pos + numel * sizeof(float) > bytes.size()) {
      throw FormatError(FormatError::Kind::kTruncated, "weight blob truncated in " + name);
    }
    auto src = torch::from_blob(const_cast<char*>(bytes.data() + pos), sizes, torch::kFloat32);
    p.value().copy_(src.to(p.value().dtype()));
    pos += numel * sizeof(float);
  }
  if (pos != bytes.size()) throw FormatError(FormatError::Kind::kSizeMismatch, "trailing bytes in weight blob");
}

std::vector<char> encode_optimizer(torch::optim::Optimizer& optimizer) {
  torch::serialize::OutputArchive archive;
  optimizer.save(archive);
  std::ostringstream os;
  archive.save_to(os);
  const auto s = os.str();
  return {s.begin(), s.end()};
}

void decode_optimizer(torch::optim::Optimizer& optimizer, std::span<const char> bytes) {
  torch::serialize::InputArchive archive;
  archive.load_from(bytes.data(), bytes.size());
  optimizer.load(archive);
}

TorchDenoiser::TorchDenoiser(Denoiser25DConfig config, UNet net)
    : config_(std::move(config)), net_(std::move(net)) {
  net_->eval();
}

std::size_t TorchDenoiser::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : net_->parameters()) n += static_cast<std::size_t>(p.numel());
  return n;
}

void TorchDenoiser::predict_eps_batch(std::span<const float> input, std::size_t batch,
                                      std::size_t rows, std::size_t cols, int t,
                                      std::span<float> out) const {
  const auto channels = static_cast<std::size_t>(config_.in_channels());
  if (t < 1 || t > config_.timesteps) {
    throw RangeError("timestep " + std::to_string(t) + " outside [1, " +
                     std::to_string(config_.timesteps) + "]");
  }
  if (input.size() != batch * channels * rows * cols) {
    throw ShapeError("denoiser input holds " + std::to_string(input.size()) + " values, expected " +
                     std::to_string(batch * channels * rows * cols) + " for " +
                     std::to_string(channels) + " channels");
  }
  if (out.size() != batch * rows * cols) throw ShapeError("denoiser output buffer size mismatch");
  torch::NoGradGuard guard;
  const auto b = static_cast<int64_t>(batch);
  auto x = torch::from_blob(const_cast<float*>(input.data()),
                            {b, static_cast<int64_t>(channels), static_cast<int64_t>(rows),
                             static_cast<int64_t>(cols)},
                            torch::kFloat32);
  // One embedding row broadcast over the batch keeps each sample's result
  // independent of how many slices share the call.
  auto tt = torch::full({1}, static_cast<int64_t>(t), torch::kInt64);
  // oneDNN picks a different convolution kernel for a batch of one than for
  // larger batches, with last-bit differences. Duplicating a lone sample keeps
  // results identical across batch sizes.
  if (b == 1) x = torch::cat({x, x}, 0);
  auto y = net_->forward_padded(x, tt).narrow(0, 0, b).contiguous();
  std::memcpy(out.data(), y.data_ptr<float>(), out.size() * sizeof(float));
}

TorchPrior::TorchPrior(Prior3DConfig config, UNet net) : config_(std::move(config)), net_(std::move(net)) {
  net_->eval();
}

std::size_t TorchPrior::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : net_->parameters()) n += static_cast<std::size_t>(p.numel());
  return n;
}

Volume TorchPrior::predict(const Volume& x) const {
  torch::NoGradGuard guard;
  const auto& d = x.dims();
  auto in = torch::from_blob(const_cast<float*>(x.voxels().data()),
                             {1, 1, static_cast<int64_t>(d.d1), static_cast<int64_t>(d.d2),
                              static_cast<int64_t>(d.d3)},
                             torch::kFloat32);
  auto y = prior_forward(net_, in).contiguous();
  Volume out(d);
  std::memcpy(out.voxels().data(), y.data_ptr<float>(), out.size() * sizeof(float));
  out.meta() = x.meta();
  return out;
}

}  // namespace madm::nn
